//! Dataset ingestion, normalization, batching and synthetic probe data.
//!
//! Loaders return raw pixel values in `[0, 255]`; [`normalize`] maps them to
//! `(pixel/255 - mean) / std` per channel. The zeros probe runs all-black
//! raw images through the same normalization as the real data.

pub mod cifar;
pub mod idx;
pub mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};

/// Sentinel label for probe images; excluded from every accuracy figure.
pub const PROBE_LABEL: u32 = u32::MAX;

/// Default MNIST normalization constants.
pub const MNIST_MEAN: [f32; 1] = [0.1307];
pub const MNIST_STD: [f32; 1] = [0.3081];
/// Default CIFAR-10 per-channel normalization constants.
pub const CIFAR10_MEAN: [f32; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR10_STD: [f32; 3] = [0.2470, 0.2435, 0.2616];
/// Default CIFAR-100 per-channel normalization constants.
pub const CIFAR100_MEAN: [f32; 3] = [0.5071, 0.4865, 0.4409];
pub const CIFAR100_STD: [f32; 3] = [0.2673, 0.2564, 0.2762];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

/// Images plus labels. `pixels` is `[n, channels, height, width]` row-major.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub n: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
    pub labels: Vec<u32>,
    pub num_classes: usize,
    pub split: Split,
    pub source: String,
    pub is_probe: bool,
    /// Present once `normalize` ran; records the constants used.
    pub normalization: Option<Normalization>,
}

impl LabeledDataset {
    #[allow(clippy::too_many_arguments)]
    pub fn from_raw(
        channels: usize,
        height: usize,
        width: usize,
        pixels: Vec<f32>,
        labels: Vec<u32>,
        num_classes: usize,
        split: Split,
        source: String,
    ) -> Result<Self> {
        let per_image = channels * height * width;
        if per_image == 0 || pixels.len() % per_image != 0 {
            return Err(Error::Dimension {
                op: "dataset",
                msg: format!(
                    "{} pixels do not tile {}x{}x{} images",
                    pixels.len(),
                    channels,
                    height,
                    width
                ),
            });
        }
        let n = pixels.len() / per_image;
        if labels.len() != n {
            return Err(Error::Contract(format!(
                "dataset has {} images but {} labels",
                n,
                labels.len()
            )));
        }
        for (i, &l) in labels.iter().enumerate() {
            if l != PROBE_LABEL && l as usize >= num_classes {
                return Err(Error::Contract(format!(
                    "label {} at index {} out of range for {} classes",
                    l, i, num_classes
                )));
            }
        }
        Ok(LabeledDataset {
            n,
            channels,
            height,
            width,
            pixels,
            labels,
            num_classes,
            split,
            source,
            is_probe: false,
            normalization: None,
        })
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let len = self.image_len();
        &self.pixels[i * len..(i + 1) * len]
    }

    /// First `n` examples, as an independent dataset.
    pub fn take(&self, n: usize) -> LabeledDataset {
        let n = n.min(self.n);
        let len = self.image_len();
        LabeledDataset {
            n,
            pixels: self.pixels[..n * len].to_vec(),
            labels: self.labels[..n].to_vec(),
            source: format!("{}[..{}]", self.source, n),
            ..self.clone()
        }
    }
}

/// Per-channel normalization: `pixel <- (pixel/255 - mean) / std`.
pub fn normalize(ds: &LabeledDataset, mean: &[f32], std: &[f32]) -> Result<LabeledDataset> {
    if ds.normalization.is_some() {
        return Err(Error::Contract("dataset is already normalized".into()));
    }
    if mean.len() != ds.channels || std.len() != ds.channels {
        return Err(Error::Parameter(format!(
            "normalize: {} channels need {} mean/std values, got {}/{}",
            ds.channels,
            ds.channels,
            mean.len(),
            std.len()
        )));
    }
    if std.iter().any(|&s| s <= 0.0) {
        return Err(Error::Parameter(format!("normalize: std must be > 0, got {:?}", std)));
    }
    let mut out = ds.clone();
    let hw = ds.height * ds.width;
    for img in 0..ds.n {
        for c in 0..ds.channels {
            let base = (img * ds.channels + c) * hw;
            for p in &mut out.pixels[base..base + hw] {
                *p = (*p / 255.0 - mean[c]) / std[c];
            }
        }
    }
    out.normalization = Some(Normalization {
        mean: mean.to_vec(),
        std: std.to_vec(),
    });
    Ok(out)
}

/// Inverse of [`normalize`], returning raw `[0, 255]` pixels.
pub fn denormalize(ds: &LabeledDataset) -> Result<LabeledDataset> {
    let norm = ds
        .normalization
        .as_ref()
        .ok_or_else(|| Error::Contract("dataset is not normalized".into()))?
        .clone();
    let mut out = ds.clone();
    let hw = ds.height * ds.width;
    for img in 0..ds.n {
        for c in 0..ds.channels {
            let base = (img * ds.channels + c) * hw;
            for p in &mut out.pixels[base..base + hw] {
                *p = (*p * norm.std[c] + norm.mean[c]) * 255.0;
            }
        }
    }
    out.normalization = None;
    Ok(out)
}

/// `n` all-black images pushed through the same normalization as `like`.
/// Labels are the probe sentinel; the probe flag keeps them out of accuracy
/// and threshold statistics.
pub fn make_zeros_probe(n: usize, like: &LabeledDataset) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(Error::Parameter("zeros probe needs n > 0".into()));
    }
    let norm = like
        .normalization
        .as_ref()
        .ok_or_else(|| Error::Contract("zeros probe requires a normalized reference dataset".into()))?;
    let hw = like.height * like.width;
    let mut pixels = Vec::with_capacity(n * like.image_len());
    for _ in 0..n {
        for c in 0..like.channels {
            let v = (0.0 / 255.0 - norm.mean[c]) / norm.std[c];
            pixels.extend(std::iter::repeat(v).take(hw));
        }
    }
    Ok(LabeledDataset {
        n,
        channels: like.channels,
        height: like.height,
        width: like.width,
        pixels,
        labels: vec![PROBE_LABEL; n],
        num_classes: like.num_classes,
        split: Split::Test,
        source: "zeros-probe".into(),
        is_probe: true,
        normalization: Some(norm.clone()),
    })
}

/// Epoch iterator over example indices, optionally shuffled by a seeded
/// permutation. Visits every index exactly once per epoch (with
/// `drop_last`, a trailing partial batch is skipped).
pub struct BatchIterator {
    order: Vec<u32>,
    batch_size: usize,
    drop_last: bool,
    pos: usize,
}

impl BatchIterator {
    pub fn new(ds: &LabeledDataset, batch_size: usize, shuffle: Option<&mut Rng>, drop_last: bool) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Parameter("batch_size must be >= 1".into()));
        }
        let order = match shuffle {
            Some(rng) => rng.permutation(ds.n),
            None => (0..ds.n as u32).collect(),
        };
        Ok(BatchIterator {
            order,
            batch_size,
            drop_last,
            pos: 0,
        })
    }

    pub fn order(&self) -> &[u32] {
        &self.order
    }
}

impl Iterator for BatchIterator {
    type Item = Vec<u32>;

    fn next(&mut self) -> Option<Vec<u32>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        if self.drop_last && end - self.pos < self.batch_size {
            return None;
        }
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(batch)
    }
}

/// Materialize a batch of images as a constant `[b, c, h, w]` tensor plus
/// the matching labels.
pub fn gather_batch<E: Element>(ds: &LabeledDataset, indices: &[u32]) -> (Tensor<E>, Vec<u32>) {
    let len = ds.image_len();
    let mut data = Vec::with_capacity(indices.len() * len);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        data.extend(ds.image(i as usize).iter().map(|&p| E::from_f32(p)));
        labels.push(ds.labels[i as usize]);
    }
    let t = Tensor::from_vec(&[indices.len(), ds.channels, ds.height, ds.width], data)
        .expect("batch shape covers data by construction");
    (t, labels)
}
