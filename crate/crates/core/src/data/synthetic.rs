//! Synthetic data: scalar sample sets for the quantile-convergence oracles,
//! and a procedurally rendered digit dataset in MNIST geometry for running
//! the pipeline in environments without the real files.

use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::idx;
use super::{LabeledDataset, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarDist {
    /// U(0, 1)
    Uniform,
    /// N(0, 1)
    Gaussian,
    /// Equal mixture of N(-2, 0.25) and N(2, 0.25) (variance 0.25).
    Bimodal,
}

/// `n` iid draws, reproducible by seed.
pub fn make_synthetic_scalar_dataset(dist: ScalarDist, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Parameter("synthetic scalar dataset needs n > 0".into()));
    }
    let mut rng = Rng::new(seed);
    let samples = (0..n)
        .map(|_| match dist {
            ScalarDist::Uniform => rng.uniform01(),
            ScalarDist::Gaussian => rng.normal(),
            ScalarDist::Bimodal => {
                let center = if rng.bernoulli(0.5) { -2.0 } else { 2.0 };
                rng.normal_scaled(center, 0.5)
            }
        })
        .collect();
    Ok(samples)
}

// 5x7 digit glyphs, one bit per pixel, row-major top to bottom.
const GLYPHS: [[u8; 7]; 10] = [
    [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110], // 0
    [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110], // 1
    [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111], // 2
    [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110], // 3
    [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010], // 4
    [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110], // 5
    [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110], // 6
    [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000], // 7
    [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110], // 8
    [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100], // 9
];

const IMG: usize = 28;

fn render_digit(label: usize, rng: &mut Rng, out: &mut [u8]) {
    debug_assert_eq!(out.len(), IMG * IMG);
    let glyph = &GLYPHS[label];
    let sx = rng.uniform(2.4, 3.4);
    let sy = rng.uniform(2.4, 3.4);
    let gw = (5.0 * sx).ceil() as usize;
    let gh = (7.0 * sy).ceil() as usize;
    let x0 = rng.index(IMG - gw);
    let y0 = rng.index(IMG - gh);
    let intensity = rng.uniform(150.0, 255.0);
    // a slice of genuinely hard examples: heavy noise or an occluding bar
    let corruption = rng.uniform01();
    let noise_sigma = if corruption < 0.05 { 70.0 } else { 14.0 };
    let occlude_row = if corruption >= 0.05 && corruption < 0.10 {
        Some(y0 + rng.index(gh))
    } else {
        None
    };

    for y in 0..IMG {
        for x in 0..IMG {
            let mut v = 0.0f64;
            if x >= x0 && x < x0 + gw && y >= y0 && y < y0 + gh {
                let gy = ((y - y0) as f64 / sy) as usize;
                let gx = ((x - x0) as f64 / sx) as usize;
                if gy < 7 && gx < 5 && (glyph[gy] >> (4 - gx)) & 1 == 1 {
                    v = intensity;
                }
            }
            if let Some(bar) = occlude_row {
                if y >= bar && y < bar + 3 {
                    v = 0.0;
                }
            }
            v += rng.normal_scaled(0.0, noise_sigma);
            out[y * IMG + x] = v.clamp(0.0, 255.0) as u8;
        }
    }
}

/// Procedurally rendered 28x28 ten-class digit images (raw `[0, 255]`
/// pixels, MNIST geometry). Deterministic in the seed.
pub fn make_synthetic_digits(n: usize, seed: u64, split: Split) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(Error::Parameter("synthetic digit dataset needs n > 0".into()));
    }
    let mut rng = Rng::new(seed);
    let mut pixels = vec![0u8; n * IMG * IMG];
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = rng.index(10);
        render_digit(label, &mut rng, &mut pixels[i * IMG * IMG..(i + 1) * IMG * IMG]);
        labels.push(label as u32);
    }
    LabeledDataset::from_raw(
        1,
        IMG,
        IMG,
        pixels.iter().map(|&b| b as f32).collect(),
        labels,
        10,
        split,
        format!("synthetic-digits(seed={})", seed),
    )
}

/// Write a synthetic digit dataset to `dir` as MNIST-named IDX files
/// (`train-images-idx3-ubyte`, `train-labels-idx1-ubyte`, `t10k-...`).
pub fn write_synthetic_digit_idx(dir: &Path, n_train: usize, n_test: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (n, stream, img_name, lab_name) in [
        (n_train, 1u64, "train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        (n_test, 2u64, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    ] {
        let ds = make_synthetic_digits(n, crate::rng::derive_seed(seed, stream), Split::Train)?;
        let bytes: Vec<u8> = ds.pixels.iter().map(|&p| p as u8).collect();
        let labels: Vec<u8> = ds.labels.iter().map(|&l| l as u8).collect();
        idx::write_idx_images(&dir.join(img_name), n, IMG, IMG, &bytes)?;
        idx::write_idx_labels(&dir.join(lab_name), &labels)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_seeds_identical_samples() {
        let a = make_synthetic_scalar_dataset(ScalarDist::Gaussian, 100, 5).unwrap();
        let b = make_synthetic_scalar_dataset(ScalarDist::Gaussian, 100, 5).unwrap();
        assert_eq!(a, b);
        let c = make_synthetic_scalar_dataset(ScalarDist::Gaussian, 100, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_median_matches_sorting_oracle() {
        let samples = make_synthetic_scalar_dataset(ScalarDist::Uniform, 100_000, 11).unwrap();
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        assert!((median - 0.5).abs() < 0.01, "median {}", median);
    }

    #[test]
    fn bimodal_mean_near_zero() {
        let n = 100_000;
        let samples = make_synthetic_scalar_dataset(ScalarDist::Bimodal, n, 13).unwrap();
        let mean: f64 = samples.iter().sum::<f64>() / n as f64;
        // component std 0.5 around +-2: population std ~ sqrt(4 + 0.25)
        let se = (4.25f64).sqrt() / (n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {} vs 3 se {}", mean, 3.0 * se);
    }

    #[test]
    fn synthetic_digits_reproducible_and_labeled() {
        let a = make_synthetic_digits(50, 3, Split::Train).unwrap();
        let b = make_synthetic_digits(50, 3, Split::Train).unwrap();
        assert_eq!(a.pixels, b.pixels);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.n, 50);
        assert!(a.labels.iter().all(|&l| l < 10));
        // images are not blank
        assert!(a.pixels.iter().any(|&p| p > 100.0));
    }

    #[test]
    fn synthetic_idx_files_load_back() {
        let dir = tempfile::tempdir().unwrap();
        write_synthetic_digit_idx(dir.path(), 20, 10, 7).unwrap();
        let train = idx::load_mnist_idx(
            &dir.path().join("train-images-idx3-ubyte"),
            &dir.path().join("train-labels-idx1-ubyte"),
            Split::Train,
        )
        .unwrap();
        assert_eq!(train.n, 20);
        let test = idx::load_mnist_idx(
            &dir.path().join("t10k-images-idx3-ubyte"),
            &dir.path().join("t10k-labels-idx1-ubyte"),
            Split::Test,
        )
        .unwrap();
        assert_eq!(test.n, 10);
    }
}
