//! Dataset-free convergence suites for the quantile machinery.
//!
//! Each check trains a small regressor through the real tensor/loss/optimizer
//! path and compares the result against an independent sorting oracle. The
//! oracles never touch the autodiff code: they sort samples.

use crate::data::synthetic::{make_synthetic_scalar_dataset, ScalarDist};
use crate::error::Result;
use crate::loss::{pinball_loss, quantile_loss, sample_taus, QuantileLossConfig};
use crate::model::{LinearLayer, NamedParams, TauEmbedding, FEATURE_DIM};
use crate::optim::Adadelta;
use crate::rng::{derive_seed, Rng};
use crate::tensor::{no_grad, Tensor};

/// Sorting-oracle empirical quantile: the `ceil(tau * n)`-th order statistic
/// (1-based), clamped to the sample range.
pub fn empirical_quantile(samples: &[f64], tau: f64) -> f64 {
    assert!(!samples.is_empty());
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = ((tau * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[k - 1]
}

/// Kolmogorov-Smirnov statistic of a sample against U([0, 1]).
pub fn ks_statistic_uniform(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let hi = (i + 1) as f64 / n - x;
        let lo = x - i as f64 / n;
        d = d.max(hi).max(lo);
    }
    d
}

/// Asymptotic KS critical value at significance `alpha` for sample size `n`.
pub fn ks_critical(alpha: f64, n: usize) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

/// Fit a constant predictor to the `tau`-quantile of `samples` by full-batch
/// gradient descent on the pinball loss, through the autodiff path.
pub fn pinball_constant_fit(samples: &[f64], tau: f64, iters: usize) -> Result<f64> {
    let n = samples.len();
    let start = samples.iter().sum::<f64>() / n as f64;
    let theta = Tensor::<f64>::from_vec(&[1, 1], vec![start])?.requires_grad();
    let target = Tensor::<f64>::from_vec(&[n], samples.to_vec())?;
    let taus = Tensor::<f64>::full(&[n, 1], tau);
    for t in 0..iters {
        theta.zero_grad();
        let pred = theta.repeat_rows(n)?;
        let loss = pinball_loss(&pred, &target, &taus)?;
        loss.backward()?;
        let g = theta.grad().expect("theta is the only parameter")[0];
        let lr = 0.5 / (1.0 + 4.0 * t as f64 / iters as f64);
        theta.data_mut()[0] -= lr * g;
    }
    let fitted = theta.data()[0];
    Ok(fitted)
}

/// Tau embedding plus linear head, with the image features fixed to ones:
/// the smallest model that exercises the full quantile-regression path.
pub struct QuantileHead {
    pub embed: TauEmbedding<f64>,
    pub head: LinearLayer<f64>,
}

impl QuantileHead {
    pub fn new(rng: &mut Rng) -> Self {
        QuantileHead {
            embed: TauEmbedding::new(rng),
            head: LinearLayer::new(FEATURE_DIM, 1, rng),
        }
    }

    pub fn forward(&self, taus: &Tensor<f64>) -> Result<Tensor<f64>> {
        let [b, k] = taus.shape() else {
            unreachable!("taus are always [b, k] here");
        };
        let (b, k) = (*b, *k);
        let phi = self.embed.forward(&taus.to_vec())?;
        self.head.forward(&phi)?.reshape(&[b, k])
    }

    pub fn params(&self) -> NamedParams<f64> {
        vec![
            ("embed.weight".into(), self.embed.linear.weight.clone()),
            ("embed.bias".into(), self.embed.linear.bias.clone()),
            ("head.weight".into(), self.head.weight.clone()),
            ("head.bias".into(), self.head.bias.clone()),
        ]
    }

    /// Quantile values on an evenly spaced tau grid, eval mode.
    pub fn quantile_grid(&self, k: usize) -> Result<Vec<f64>> {
        let taus: Vec<f64> = (0..k).map(|i| (i as f64 + 0.5) / k as f64).collect();
        let taus = Tensor::from_vec(&[1, k], taus)?;
        no_grad(|| Ok(self.forward(&taus)?.to_vec()))
    }

    pub fn quantile_at(&self, tau: f64) -> Result<f64> {
        let taus = Tensor::from_vec(&[1, 1], vec![tau])?;
        no_grad(|| Ok(self.forward(&taus)?.item()))
    }
}

/// Train a [`QuantileHead`] against scalar targets drawn per iteration by
/// `draw`, with fresh taus each batch.
fn fit_head(
    seed: u64,
    iters: usize,
    batch: usize,
    n_taus: usize,
    mut draw: impl FnMut(&mut Rng) -> f64,
) -> Result<QuantileHead> {
    let mut init_rng = Rng::new(derive_seed(seed, 0x61));
    let mut tau_rng = Rng::new(derive_seed(seed, 0x62));
    let mut target_rng = Rng::new(derive_seed(seed, 0x63));
    let model = QuantileHead::new(&mut init_rng);
    let mut opt = Adadelta::new(model.params(), 1.0);
    let cfg = QuantileLossConfig {
        n_taus,
        ..Default::default()
    };
    for _ in 0..iters {
        let taus = sample_taus::<f64>(&mut tau_rng, batch, n_taus);
        let target: Vec<f64> = (0..batch).map(|_| draw(&mut target_rng)).collect();
        let target = Tensor::from_vec(&[batch], target)?;
        let pred = model.forward(&taus)?;
        let loss = quantile_loss(&pred, &target, &taus, &cfg)?;
        loss.backward()?;
        opt.step()?;
        opt.zero_grad();
    }
    Ok(model)
}

/// Train against a constant target; the estimated distribution's mean should
/// converge to it.
pub fn constant_target_fit(c: f64, seed: u64) -> Result<(f64, f64)> {
    let model = fit_head(seed, 400, 8, 32, |_| c)?;
    let grid = model.quantile_grid(2048)?;
    let mean = grid.iter().sum::<f64>() / grid.len() as f64;
    let var = grid.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / grid.len() as f64;
    Ok((mean, var.sqrt()))
}

pub struct DistFit {
    pub dist: ScalarDist,
    /// (tau, fitted quantile, sorting-oracle quantile)
    pub quantiles: Vec<(f64, f64, f64)>,
    pub mean_fitted: f64,
    pub mean_oracle: f64,
}

/// Train against samples of a distribution and compare learned quantiles to
/// the sorting oracle on an independent large sample.
pub fn distribution_fit(dist: ScalarDist, check_taus: &[f64], seed: u64) -> Result<DistFit> {
    let model = fit_head(seed, 800, 64, 8, |rng| match dist {
        ScalarDist::Uniform => rng.uniform01(),
        ScalarDist::Gaussian => rng.normal(),
        ScalarDist::Bimodal => {
            let center = if rng.bernoulli(0.5) { -2.0 } else { 2.0 };
            rng.normal_scaled(center, 0.5)
        }
    })?;
    let oracle_samples = make_synthetic_scalar_dataset(dist, 200_000, derive_seed(seed, 0x64))?;
    let mut quantiles = Vec::new();
    for &tau in check_taus {
        quantiles.push((tau, model.quantile_at(tau)?, empirical_quantile(&oracle_samples, tau)));
    }
    let grid = model.quantile_grid(2048)?;
    let mean_fitted = grid.iter().sum::<f64>() / grid.len() as f64;
    let mean_oracle = oracle_samples.iter().sum::<f64>() / oracle_samples.len() as f64;
    Ok(DistFit {
        dist,
        quantiles,
        mean_fitted,
        mean_oracle,
    })
}

pub struct OracleOutcome {
    pub name: String,
    pub detail: String,
    pub pass: bool,
}

/// The full dataset-free suite, as run by the `oracle-test` subcommand.
pub fn run_all(seed: u64) -> Result<Vec<OracleOutcome>> {
    let mut out = Vec::new();

    let samples = make_synthetic_scalar_dataset(ScalarDist::Uniform, 100_000, derive_seed(seed, 1))?;
    for tau in [0.1, 0.5, 0.9] {
        let fitted = pinball_constant_fit(&samples, tau, 400)?;
        let oracle = empirical_quantile(&samples, tau);
        let err = (fitted - oracle).abs();
        out.push(OracleOutcome {
            name: format!("pinball-argmin tau={}", tau),
            detail: format!("fitted {:.5} vs sorting oracle {:.5} (|err| {:.5})", fitted, oracle, err),
            pass: err <= 0.02,
        });
    }

    let c = 0.7;
    let (mean, std) = constant_target_fit(c, derive_seed(seed, 2))?;
    out.push(OracleOutcome {
        name: "constant-target".into(),
        detail: format!("mean {:.4} (target {}), std {:.4}", mean, c, std),
        pass: (mean - c).abs() <= 0.05,
    });

    let uni = distribution_fit(ScalarDist::Uniform, &[0.1, 0.5, 0.9], derive_seed(seed, 3))?;
    for (tau, fitted, oracle) in &uni.quantiles {
        out.push(OracleOutcome {
            name: format!("uniform quantile tau={}", tau),
            detail: format!("fitted {:.4} vs oracle {:.4}", fitted, oracle),
            pass: (fitted - oracle).abs() <= 0.05,
        });
    }

    let bi = distribution_fit(ScalarDist::Bimodal, &[0.25, 0.75], derive_seed(seed, 4))?;
    for (tau, fitted, oracle) in &bi.quantiles {
        out.push(OracleOutcome {
            name: format!("bimodal quantile tau={}", tau),
            detail: format!("fitted {:.4} vs oracle {:.4}", fitted, oracle),
            pass: (fitted - oracle).abs() <= 0.35,
        });
    }
    out.push(OracleOutcome {
        name: "bimodal mean".into(),
        detail: format!("fitted mean {:.4} vs oracle mean {:.4}", bi.mean_fitted, bi.mean_oracle),
        pass: (bi.mean_fitted - bi.mean_oracle).abs() <= 0.3,
    });

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empirical_quantile_on_known_samples() {
        let samples: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        assert_eq!(empirical_quantile(&samples, 0.5), 50.0);
        assert_eq!(empirical_quantile(&samples, 0.75), 75.0);
        assert_eq!(empirical_quantile(&samples, 0.0), 1.0);
        assert_eq!(empirical_quantile(&samples, 1.0), 100.0);
    }

    #[test]
    fn ks_accepts_true_uniform_rejects_shifted() {
        let mut rng = Rng::new(3);
        let n = 20_000;
        let uniform: Vec<f64> = (0..n).map(|_| rng.uniform01()).collect();
        let d = ks_statistic_uniform(&uniform);
        assert!(d < ks_critical(0.01, n), "D {} vs crit {}", d, ks_critical(0.01, n));

        let skewed: Vec<f64> = uniform.iter().map(|u| u.powf(1.2)).collect();
        assert!(ks_statistic_uniform(&skewed) > ks_critical(0.01, n));
    }
}
