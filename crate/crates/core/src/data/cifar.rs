//! CIFAR-10 / CIFAR-100 binary format.
//!
//! CIFAR-10 records are 3073 bytes: one label byte then 3072 pixel bytes
//! (1024 red, 1024 green, 1024 blue, each row-major 32x32). CIFAR-100
//! records are 3074 bytes: coarse label, fine label, then the same 3072
//! pixels; the fine label (100 classes) is used.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{LabeledDataset, Split};

pub const CIFAR_PIXELS: usize = 3 * 32 * 32;
pub const CIFAR10_RECORD: usize = 1 + CIFAR_PIXELS;
pub const CIFAR100_RECORD: usize = 2 + CIFAR_PIXELS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

impl CifarVariant {
    pub fn record_size(self) -> usize {
        match self {
            CifarVariant::Cifar10 => CIFAR10_RECORD,
            CifarVariant::Cifar100 => CIFAR100_RECORD,
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }
}

/// Load and concatenate CIFAR batch files. Pixels come out raw in
/// `[0, 255]`, shaped `n x 3 x 32 x 32`.
pub fn load_cifar_binary<P: AsRef<Path>>(
    paths: &[P],
    variant: CifarVariant,
    split: Split,
) -> Result<LabeledDataset> {
    if paths.is_empty() {
        return Err(Error::Parameter("load_cifar_binary: no input files".into()));
    }
    let record = variant.record_size();
    let mut pixels: Vec<f32> = Vec::new();
    let mut labels: Vec<u32> = Vec::new();
    let mut sources: Vec<String> = Vec::new();
    for p in paths {
        let path = p.as_ref();
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        if buf.len() % record != 0 {
            let whole = buf.len() / record;
            return Err(Error::format(
                path,
                format!(
                    "file length {} is not a multiple of the {}-byte record size ({} whole records, {} trailing bytes at offset {})",
                    buf.len(),
                    record,
                    whole,
                    buf.len() - whole * record,
                    whole * record,
                ),
            ));
        }
        for rec in buf.chunks_exact(record) {
            let label = match variant {
                CifarVariant::Cifar10 => rec[0],
                CifarVariant::Cifar100 => rec[1], // byte 0 is the coarse label
            };
            if label as usize >= variant.num_classes() {
                return Err(Error::format(
                    path,
                    format!(
                        "label {} outside [0, {}) in record {}",
                        label,
                        variant.num_classes(),
                        labels.len()
                    ),
                ));
            }
            labels.push(label as u32);
            pixels.extend(rec[record - CIFAR_PIXELS..].iter().map(|&b| b as f32));
        }
        sources.push(path.display().to_string());
    }
    LabeledDataset::from_raw(
        3,
        32,
        32,
        pixels,
        labels,
        variant.num_classes(),
        split,
        format!("cifar:{}", sources.join(",")),
    )
}
