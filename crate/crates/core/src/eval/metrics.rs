use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Scores with binary labels, `1` marking the anomalous class.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledScores {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl LabeledScores {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "labeled_scores",
                left: vec![scores.len()],
                right: vec![labels.len()],
            });
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidConfig(format!("labels must be 0 or 1, found {l}")));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::InvalidConfig("scores contain NaN".into()));
        }
        Ok(Self { scores, labels })
    }

    pub fn from_bools(scores: Vec<f64>, labels: &[bool]) -> Result<Self> {
        Self::new(scores, labels.iter().map(|&b| b as u8).collect())
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }
}

/// Area under the ROC curve from midranks: the probability that a random
/// positive outscores a random negative, ties counting one half.
pub fn auroc(data: &LabeledScores) -> Result<f64> {
    let n = data.len();
    let pos = data.positives();
    let neg = n - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass {
            positives: pos,
            negatives: neg,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| data.scores[a].total_cmp(&data.scores[b]));

    // Twice the rank sum of the positives keeps every midrank integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && data.scores[order[j]] == data.scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share the midrank (i + 1 + j) / 2
        let tied_pos = order[i..j].iter().filter(|&&k| data.labels[k] == 1).count() as u128;
        rank_sum2 += tied_pos * (i as u128 + 1 + j as u128);
        i = j;
    }
    let (pos, neg) = (pos as u128, neg as u128);
    // 2U = 2R - pos(pos+1)
    let u2 = rank_sum2 - pos * (pos + 1);
    Ok(u2 as f64 / (2 * pos * neg) as f64)
}

/// Dice overlap `2|A∩B| / (|A|+|B|)`, `1` when both masks are empty.
pub fn dice(pred: &[bool], truth: &[bool]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch {
            op: "dice",
            left: vec![pred.len()],
            right: vec![truth.len()],
        });
    }
    let (mut a, mut b, mut both) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        a += p as usize;
        b += t as usize;
        both += (p && t) as usize;
    }
    Ok(dice_from_counts(a, b, both))
}

fn dice_from_counts(pred: usize, truth: usize, both: usize) -> f64 {
    if pred + truth == 0 {
        1.0
    } else {
        2.0 * both as f64 / (pred + truth) as f64
    }
}

/// Number of quantile candidates searched by [`calibrate_threshold`].
pub const THRESHOLD_CANDIDATES: usize = 256;

/// Threshold chosen on a calibration set and the mean Dice it achieves there.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    pub threshold: f64,
    pub dice: f64,
}

/// Per-image score map paired with its ground-truth mask.
#[derive(Clone, Copy, Debug)]
pub struct ScoredMask<'a> {
    pub scores: &'a [f64],
    pub mask: &'a [bool],
}

/// Image preprocessed for fast Dice evaluation at many thresholds.
struct SortedImage {
    /// Ascending scores.
    scores: Vec<f64>,
    /// `hits[k]` = mask pixels among the `k` highest scores.
    hits: Vec<usize>,
    truth: usize,
}

impl SortedImage {
    fn new(img: &ScoredMask<'_>) -> Self {
        let mut pairs: Vec<(f64, bool)> = img.scores.iter().copied().zip(img.mask.iter().copied()).collect();
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let n = pairs.len();
        let mut hits = vec![0; n + 1];
        for k in 1..=n {
            hits[k] = hits[k - 1] + pairs[n - k].1 as usize;
        }
        Self {
            scores: pairs.iter().map(|p| p.0).collect(),
            truth: hits[n],
            hits,
        }
    }

    /// Dice of the prediction `score >= t`.
    fn dice_at(&self, t: f64) -> f64 {
        let below = self.scores.partition_point(|&s| s < t);
        let pred = self.scores.len() - below;
        dice_from_counts(pred, self.truth, self.hits[pred])
    }
}

fn check_images(images: &[ScoredMask<'_>]) -> Result<()> {
    for img in images {
        if img.scores.len() != img.mask.len() {
            return Err(Error::ShapeMismatch {
                op: "dice",
                left: vec![img.scores.len()],
                right: vec![img.mask.len()],
            });
        }
        if img.scores.iter().any(|s| s.is_nan()) {
            return Err(Error::InvalidConfig("score map contains NaN".into()));
        }
    }
    Ok(())
}

/// Mean over images of the Dice of `score >= threshold` against the mask.
pub fn mean_dice(images: &[ScoredMask<'_>], threshold: f64) -> Result<f64> {
    check_images(images)?;
    if images.is_empty() {
        return Err(Error::Dataset("no images to evaluate".into()));
    }
    let sum: f64 = images.iter().map(|img| SortedImage::new(img).dice_at(threshold)).sum();
    Ok(sum / images.len() as f64)
}

/// The 256 candidate thresholds: evenly spaced order statistics of the
/// pooled scores, ascending, duplicates kept.
pub fn quantile_candidates(images: &[ScoredMask<'_>]) -> Vec<f64> {
    let mut pooled: Vec<f64> = images.iter().flat_map(|i| i.scores.iter().copied()).collect();
    if pooled.is_empty() {
        return Vec::new();
    }
    pooled.sort_unstable_by(f64::total_cmp);
    let last = (pooled.len() - 1) as f64;
    (0..THRESHOLD_CANDIDATES)
        .map(|k| {
            let pos = (k as f64 / (THRESHOLD_CANDIDATES - 1) as f64 * last).round() as usize;
            pooled[pos]
        })
        .collect()
}

/// Picks the candidate threshold with the highest mean calibration Dice;
/// among equals the lowest candidate wins.
pub fn calibrate_threshold(images: &[ScoredMask<'_>]) -> Result<Calibration> {
    check_images(images)?;
    if !images.iter().any(|i| i.mask.iter().any(|&m| m)) {
        return Err(Error::NoAnomalousPixels);
    }
    let sorted: Vec<SortedImage> = images.iter().map(SortedImage::new).collect();
    let n = sorted.len() as f64;
    let mut best: Option<Calibration> = None;
    for t in quantile_candidates(images) {
        let d = sorted.iter().map(|s| s.dice_at(t)).sum::<f64>() / n;
        if best.is_none_or(|b| d.partial_cmp(&b.dice) == Some(Ordering::Greater)) {
            best = Some(Calibration { threshold: t, dice: d });
        }
    }
    Ok(best.expect("candidates are non-empty when a mask pixel exists"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(scores: &[f64], labels: &[u8]) -> f64 {
        let mut num = 0.0;
        let mut pairs = 0.0;
        for (i, &a) in scores.iter().enumerate() {
            for (j, &b) in scores.iter().enumerate() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if a > b {
                        num += 1.0;
                    } else if a == b {
                        num += 0.5;
                    }
                }
            }
        }
        num / pairs
    }

    #[test]
    fn auroc_examples() {
        let ls = LabeledScores::new(vec![1.0, 2.0, 3.0, 4.0], vec![0, 0, 1, 1]).unwrap();
        assert_eq!(auroc(&ls).unwrap(), 1.0);
        let ls = LabeledScores::new(vec![7.0; 5], vec![0, 1, 0, 1, 1]).unwrap();
        assert_eq!(auroc(&ls).unwrap(), 0.5);
        let ls = LabeledScores::new(vec![1.0, 2.0, 2.0, 3.0], vec![1, 0, 1, 0]).unwrap();
        assert_eq!(auroc(&ls).unwrap(), brute(ls.scores(), ls.labels()));
    }

    #[test]
    fn auroc_rejects_single_class() {
        let ls = LabeledScores::new(vec![1.0, 2.0], vec![1, 1]).unwrap();
        assert!(matches!(auroc(&ls), Err(Error::SingleClass { positives: 2, negatives: 0 })));
        assert!(LabeledScores::new(vec![1.0], vec![2]).is_err());
        assert!(LabeledScores::new(vec![1.0], vec![]).is_err());
        assert!(LabeledScores::new(vec![f64::NAN], vec![1]).is_err());
    }

    #[test]
    fn dice_examples() {
        let a = [true, true, false, false];
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &[false, false, true, true]).unwrap(), 0.0);
        assert_eq!(dice(&[false; 3], &[false; 3]).unwrap(), 1.0);
        let mut p = [false; 10];
        let mut t = [false; 10];
        p[..4].iter_mut().for_each(|v| *v = true);
        t[1..7].iter_mut().for_each(|v| *v = true);
        assert_eq!(dice(&p, &t).unwrap(), 0.6);
        assert!(dice(&p, &t[..9]).is_err());
    }

    #[test]
    fn perfect_separation_calibrates_to_one() {
        let scores = [0.1, 0.9, 0.8, 0.2];
        let mask = [false, true, true, false];
        let c = calibrate_threshold(&[ScoredMask { scores: &scores, mask: &mask }]).unwrap();
        assert_eq!(c.dice, 1.0);
        assert!(c.threshold > 0.2 && c.threshold <= 0.8);
    }

    #[test]
    fn constant_map_returns_lowest_candidate() {
        let scores = [0.3; 8];
        let mask = [true, false, false, false, true, false, false, false];
        let c = calibrate_threshold(&[ScoredMask { scores: &scores, mask: &mask }]).unwrap();
        assert_eq!(c.threshold, 0.3);
        assert_eq!(c.dice, 2.0 * 2.0 / 10.0);
    }

    #[test]
    fn calibration_needs_anomalous_pixels() {
        let scores = [0.3; 4];
        let mask = [false; 4];
        assert!(matches!(
            calibrate_threshold(&[ScoredMask { scores: &scores, mask: &mask }]),
            Err(Error::NoAnomalousPixels)
        ));
    }

    #[test]
    fn sorted_image_matches_direct_dice() {
        let scores = [0.5, 0.1, 0.5, 0.9, 0.3, 0.7];
        let mask = [true, false, false, true, true, false];
        let img = ScoredMask { scores: &scores, mask: &mask };
        let s = SortedImage::new(&img);
        for t in [0.0, 0.1, 0.2, 0.3, 0.5, 0.6, 0.7, 0.9, 1.0] {
            let pred: Vec<bool> = scores.iter().map(|&v| v >= t).collect();
            assert_eq!(s.dice_at(t), dice(&pred, &mask).unwrap(), "t = {t}");
        }
    }

    #[test]
    fn candidates_span_pooled_range() {
        let a = [3.0, 1.0];
        let b = [2.0, 5.0, 4.0];
        let m2 = [false; 2];
        let m3 = [false; 3];
        let c = quantile_candidates(&[ScoredMask { scores: &a, mask: &m2 }, ScoredMask { scores: &b, mask: &m3 }]);
        assert_eq!(c.len(), THRESHOLD_CANDIDATES);
        assert_eq!(c[0], 1.0);
        assert_eq!(c[255], 5.0);
        assert!(c.windows(2).all(|w| w[0] <= w[1]));
    }
}
