use rand::Rng;

use super::ImageDataset;
use crate::error::{Error, Result};

/// An image counts as anomalous when its mask covers at least this many
/// pixels.
pub const MIN_ANOMALOUS_PIXELS: usize = 20;

/// Geometry of the synthetic patch anomalies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnomalyParams {
    /// Probability that an image receives a patch.
    pub corruption_rate: f64,
    /// Patch side bounds as fractions of the image width.
    pub min_side_frac: f64,
    pub max_side_frac: f64,
    /// Weight of the donor content in the blend.
    pub blend: f64,
    /// Placements tried before accepting a patch that barely changes the
    /// image (e.g. background pasted on background).
    pub max_attempts: usize,
    /// Mean absolute change inside the patch below which a placement is
    /// retried.
    pub min_mean_change: f64,
}

impl Default for AnomalyParams {
    fn default() -> Self {
        Self {
            corruption_rate: 0.5,
            min_side_frac: 0.2,
            max_side_frac: 0.5,
            blend: 0.8,
            max_attempts: 32,
            min_mean_change: 0.01,
        }
    }
}

impl AnomalyParams {
    /// Inclusive side-length range for images `width` pixels wide.
    pub fn side_range(&self, width: usize) -> (usize, usize) {
        let lo = ((self.min_side_frac * width as f64).ceil() as usize).max(1);
        let hi = ((self.max_side_frac * width as f64).floor() as usize).max(lo);
        (lo, hi)
    }
}

/// Images with pixel-exact anomaly masks.
#[derive(Clone, Debug, PartialEq)]
pub struct AnomalyCorpus {
    images: Vec<f64>,
    masks: Vec<bool>,
    image_labels: Vec<u8>,
    height: usize,
    width: usize,
}

impl AnomalyCorpus {
    pub fn len(&self) -> usize {
        self.image_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_labels.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn images(&self) -> &[f64] {
        &self.images
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let p = self.pixels();
        &self.images[i * p..(i + 1) * p]
    }

    pub fn masks(&self) -> &[bool] {
        &self.masks
    }

    pub fn mask(&self, i: usize) -> &[bool] {
        let p = self.pixels();
        &self.masks[i * p..(i + 1) * p]
    }

    /// 1 when the mask has at least [`MIN_ANOMALOUS_PIXELS`] pixels.
    pub fn image_labels(&self) -> &[u8] {
        &self.image_labels
    }
}

/// Corrupts each clean image with probability `params.corruption_rate` by
/// alpha-blending a rectangular patch of a random donor image (taken from
/// the same location) over it. Patch sides are drawn independently from
/// [`AnomalyParams::side_range`]; the mask is exactly the patch support.
pub fn make_anomaly_corpus(
    clean: &ImageDataset,
    donors: &ImageDataset,
    params: &AnomalyParams,
    rng: &mut impl Rng,
) -> Result<AnomalyCorpus> {
    if donors.is_empty() {
        return Err(Error::Dataset("anomaly donor pool is empty".into()));
    }
    if (donors.height(), donors.width()) != (clean.height(), clean.width()) {
        return Err(Error::Dataset("donor and clean images differ in size".into()));
    }
    if !(0.0..=1.0).contains(&params.corruption_rate) {
        return Err(Error::InvalidConfig(format!(
            "corruption_rate must lie in [0, 1], got {}",
            params.corruption_rate
        )));
    }
    let (h, w) = (clean.height(), clean.width());
    let (lo, hi) = params.side_range(w);
    let mut images = clean.images().to_vec();
    let mut masks = vec![false; images.len()];
    let mut image_labels = Vec::with_capacity(clean.len());

    for i in 0..clean.len() {
        let img = &mut images[i * h * w..(i + 1) * h * w];
        let mask = &mut masks[i * h * w..(i + 1) * h * w];
        if rng.random::<f64>() < params.corruption_rate {
            let original = clean.image(i);
            for attempt in 0..params.max_attempts.max(1) {
                let ph = rng.random_range(lo..=hi).min(h);
                let pw = rng.random_range(lo..=hi).min(w);
                let top = rng.random_range(0..=h - ph);
                let left = rng.random_range(0..=w - pw);
                let donor = donors.image(rng.random_range(0..donors.len()));
                let mut change = 0.0;
                for r in top..top + ph {
                    for c in left..left + pw {
                        let k = r * w + c;
                        img[k] = params.blend * donor[k] + (1.0 - params.blend) * original[k];
                        change += (img[k] - original[k]).abs();
                    }
                }
                let last = attempt + 1 == params.max_attempts.max(1);
                if change / (ph * pw) as f64 >= params.min_mean_change || last {
                    for r in top..top + ph {
                        mask[r * w + left..r * w + left + pw].iter_mut().for_each(|m| *m = true);
                    }
                    break;
                }
                img.copy_from_slice(original);
            }
        }
        let count = mask.iter().filter(|&&m| m).count();
        image_labels.push(u8::from(count >= MIN_ANOMALOUS_PIXELS));
    }

    Ok(AnomalyCorpus {
        images,
        masks,
        image_labels,
        height: h,
        width: w,
    })
}
