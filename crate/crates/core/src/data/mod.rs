//! Image datasets: IDX ingestion, rescaling, leave-one-class-out splits and
//! the synthetic anomaly corpus.

mod anomaly;
mod idx;
mod transform;

pub use anomaly::{make_anomaly_corpus, AnomalyCorpus, AnomalyParams, MIN_ANOMALOUS_PIXELS};
pub use idx::{load_idx, read_idx_images, read_idx_labels, write_idx, IMAGE_MAGIC, LABEL_MAGIC};
pub use transform::{loco_split, rescale, LocoSplit};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

/// `N` grayscale images of `height x width` pixels in `[0, 1]`, stored
/// row-major one image after another, with a class label per image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    images: Vec<f64>,
    labels: Vec<u8>,
    height: usize,
    width: usize,
    pub split: SplitTag,
}

impl ImageDataset {
    pub fn new(images: Vec<f64>, labels: Vec<u8>, height: usize, width: usize, split: SplitTag) -> Result<Self> {
        let pixels = height * width;
        if pixels == 0 || images.len() != labels.len() * pixels {
            return Err(Error::Dataset(format!(
                "{} values cannot hold {} images of {height}x{width}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(v) = images.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Dataset(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            images,
            labels,
            height,
            width,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Pixels per image.
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let p = self.pixels();
        &self.images[i * p..(i + 1) * p]
    }

    pub fn images(&self) -> &[f64] {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Number of classes implied by the largest label.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m as usize + 1)
    }

    /// Selected images stacked into a `[indices.len(), pixels]` tensor.
    pub fn gather(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.pixels());
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        Tensor::from_parts(vec![indices.len(), self.pixels()], data)
    }

    pub fn subset(&self, indices: &[usize], split: SplitTag) -> Self {
        let mut images = Vec::with_capacity(indices.len() * self.pixels());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Self {
            images,
            labels,
            height: self.height,
            width: self.width,
            split,
        }
    }

    /// First `n` images (all of them if fewer).
    pub fn take(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx, self.split)
    }

    pub fn indices_of_class(&self, class: u8) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }
}
