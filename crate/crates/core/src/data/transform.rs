use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ImageDataset, SplitTag};
use crate::error::{Error, Result};

/// Nearest-neighbour resampling to `(round(h * factor), round(w * factor))`.
/// Each output pixel copies the input pixel under its centre.
pub fn rescale(data: &ImageDataset, factor: f64) -> Result<ImageDataset> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::InvalidConfig(format!("scale factor must be positive, got {factor}")));
    }
    let (h, w) = (data.height(), data.width());
    let (oh, ow) = ((h as f64 * factor).round() as usize, (w as f64 * factor).round() as usize);
    if oh == 0 || ow == 0 {
        return Err(Error::InvalidConfig(format!(
            "scale factor {factor} shrinks {h}x{w} images to nothing"
        )));
    }
    if (oh, ow) == (h, w) {
        return Ok(data.clone());
    }
    let src = |o: usize, out: usize, inp: usize| (((o as f64 + 0.5) * inp as f64 / out as f64) as usize).min(inp - 1);
    let rows: Vec<usize> = (0..oh).map(|r| src(r, oh, h)).collect();
    let cols: Vec<usize> = (0..ow).map(|c| src(c, ow, w)).collect();
    let mut images = Vec::with_capacity(data.len() * oh * ow);
    for i in 0..data.len() {
        let img = data.image(i);
        for &r in &rows {
            images.extend(cols.iter().map(|&c| img[r * w + c]));
        }
    }
    ImageDataset::new(images, data.labels().to_vec(), oh, ow, data.split)
}

#[derive(Clone, Debug)]
pub struct LocoSplit {
    pub train: ImageDataset,
    pub val: ImageDataset,
    /// Every image of the held-out class.
    pub heldout: ImageDataset,
}

/// Leave-one-class-out split: the held-out class is set aside and the
/// remaining images are shuffled (seeded) and divided into train and
/// validation, `round(val_fraction * n)` of them going to validation.
pub fn loco_split(data: &ImageDataset, held_out_class: u8, val_fraction: f64, seed: u64) -> Result<LocoSplit> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "val_fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    let heldout = data.indices_of_class(held_out_class);
    if heldout.is_empty() {
        return Err(Error::Dataset(format!("class {held_out_class} does not occur in the dataset")));
    }
    let mut rest: Vec<usize> = (0..data.len()).filter(|&i| data.labels()[i] != held_out_class).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rest.shuffle(&mut rng);
    let n_val = (val_fraction * rest.len() as f64).round() as usize;
    let (val, train) = rest.split_at(n_val);
    Ok(LocoSplit {
        train: data.subset(train, SplitTag::Train),
        val: data.subset(val, SplitTag::Val),
        heldout: data.subset(&heldout, SplitTag::Test),
    })
}
