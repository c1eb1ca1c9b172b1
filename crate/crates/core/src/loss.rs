//! Loss functions: cross-entropy for classification, the quantile Huber loss
//! and its kappa->0 pinball form for distributional regression, and MSE for
//! the scalar baseline.
//!
//! Regression targets are always treated as detached constants: gradients
//! flow into `predicted` only, never into the value being predicted.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};

/// Elementwise penalty applied inside [`quantile_loss`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantileMode {
    /// Quantile Huber with threshold kappa (the training default).
    Huber,
    /// Asymmetric L1 (pinball); the kappa->0 limit, used by the oracle suites.
    Pinball,
}

#[derive(Debug, Clone)]
pub struct QuantileLossConfig {
    /// Huber threshold kappa.
    pub kappa: f64,
    /// Number of tau samples per example (N).
    pub n_taus: usize,
    /// Number of target samples (N'); the supervised target is a single
    /// observed loss value, so this is fixed to 1.
    pub n_target: usize,
    pub mode: QuantileMode,
}

impl Default for QuantileLossConfig {
    fn default() -> Self {
        QuantileLossConfig {
            kappa: 1.0,
            n_taus: 64,
            n_target: 1,
            mode: QuantileMode::Huber,
        }
    }
}

impl QuantileLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) {
            return Err(Error::Parameter(format!("kappa must be > 0, got {}", self.kappa)));
        }
        if self.n_taus == 0 {
            return Err(Error::Parameter("n_taus must be >= 1".into()));
        }
        if self.n_target != 1 {
            return Err(Error::Parameter(format!(
                "n_target is fixed to 1 in supervised mode, got {}",
                self.n_target
            )));
        }
        Ok(())
    }
}

/// Quantile Huber penalty `rho^kappa_tau(delta)`:
/// `|tau - 1{delta < 0}| * huber_kappa(delta) / kappa` where `huber_kappa`
/// is `delta^2 / 2` inside `[-kappa, kappa]` and `kappa(|delta| - kappa/2)`
/// outside.
pub fn quantile_huber_elem(delta: f64, tau: f64, kappa: f64) -> f64 {
    let weight = if delta < 0.0 { 1.0 - tau } else { tau };
    let huber = if delta.abs() <= kappa {
        0.5 * delta * delta
    } else {
        kappa * (delta.abs() - 0.5 * kappa)
    };
    weight * huber / kappa
}

/// d/d(delta) of [`quantile_huber_elem`]; subgradient 0 at delta = 0.
pub fn quantile_huber_deriv(delta: f64, tau: f64, kappa: f64) -> f64 {
    let weight = if delta < 0.0 { 1.0 - tau } else { tau };
    let dhuber = if delta.abs() <= kappa {
        delta
    } else {
        kappa * delta.signum()
    };
    weight * dhuber / kappa
}

/// Pinball penalty `|tau - 1{delta < 0}| * |delta|`.
pub fn pinball_elem(delta: f64, tau: f64) -> f64 {
    let weight = if delta < 0.0 { 1.0 - tau } else { tau };
    weight * delta.abs()
}

/// d/d(delta) of [`pinball_elem`]; subgradient 0 at delta = 0.
pub fn pinball_deriv(delta: f64, tau: f64) -> f64 {
    if delta == 0.0 {
        return 0.0;
    }
    let weight = if delta < 0.0 { 1.0 - tau } else { tau };
    weight * delta.signum()
}

/// Negative log-likelihood per example plus its batch mean, from
/// log-probabilities `[b, c]` and integer labels.
pub fn cross_entropy<E: Element>(
    log_probs: &Tensor<E>,
    labels: &[u32],
) -> Result<(Tensor<E>, Tensor<E>)> {
    let shape = log_probs.shape();
    let (b, c) = match shape {
        [b, c] => (*b, *c),
        other => {
            return Err(Error::Dimension {
                op: "cross_entropy",
                msg: format!("expected [batch, classes] log-probs, got {:?}", other),
            })
        }
    };
    if labels.len() != b {
        return Err(Error::Contract(format!(
            "cross_entropy: {} labels for a batch of {}",
            labels.len(),
            b
        )));
    }
    for (i, &l) in labels.iter().enumerate() {
        if l as usize >= c {
            return Err(Error::Contract(format!(
                "cross_entropy: label {} at index {} out of range for {} classes",
                l, i, c
            )));
        }
    }
    let per: Vec<E> = {
        let lp = log_probs.data();
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -lp[i * c + l as usize])
            .collect()
    };
    let labels_saved: Vec<u32> = labels.to_vec();
    let per_example = Tensor::from_op(
        vec![b],
        per,
        vec![log_probs.clone()],
        Box::new(move |g, parents, store| {
            let mut dlp = vec![E::zero(); b * c];
            for (i, &l) in labels_saved.iter().enumerate() {
                dlp[i * c + l as usize] = -g[i];
            }
            store.accumulate(&parents[0], dlp);
        }),
    );
    let mean = per_example.mean()?;
    Ok((per_example, mean))
}

fn check_quantile_shapes<E: Element>(
    op: &'static str,
    predicted: &Tensor<E>,
    target: &Tensor<E>,
    taus: &Tensor<E>,
) -> Result<(usize, usize)> {
    let (b, n) = match predicted.shape() {
        [b, n] => (*b, *n),
        other => {
            return Err(Error::Dimension {
                op,
                msg: format!("expected [batch, n_taus] predictions, got {:?}", other),
            })
        }
    };
    if taus.shape() != [b, n] {
        return Err(Error::ShapeMismatch {
            op,
            lhs: predicted.shape().to_vec(),
            rhs: taus.shape().to_vec(),
        });
    }
    if target.numel() != b {
        return Err(Error::ShapeMismatch {
            op,
            lhs: predicted.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    for &t in taus.data().iter() {
        let t = t.as_f64();
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Parameter(format!("tau {} outside [0, 1]", t)));
        }
    }
    Ok((b, n))
}

/// Aggregated quantile regression loss against a detached scalar target per
/// example: `delta[b][i] = target[b] - predicted[b][i]`, penalised per
/// element by the configured mode, summed over the tau axis and averaged
/// over the batch. Gradients flow to `predicted` only.
pub fn quantile_loss<E: Element>(
    predicted: &Tensor<E>,
    target: &Tensor<E>,
    taus: &Tensor<E>,
    cfg: &QuantileLossConfig,
) -> Result<Tensor<E>> {
    cfg.validate()?;
    let (b, n) = check_quantile_shapes("quantile_loss", predicted, target, taus)?;
    let tau_data: Vec<f64> = taus.data().iter().map(|t| t.as_f64()).collect();
    let target_data: Vec<f64> = target.data().iter().map(|t| t.as_f64()).collect();
    let kappa = cfg.kappa;
    let mode = cfg.mode;

    let mut total = 0.0f64;
    {
        let pred = predicted.data();
        for bi in 0..b {
            for i in 0..n {
                let delta = target_data[bi] - pred[bi * n + i].as_f64();
                total += match mode {
                    QuantileMode::Huber => quantile_huber_elem(delta, tau_data[bi * n + i], kappa),
                    QuantileMode::Pinball => pinball_elem(delta, tau_data[bi * n + i]),
                };
            }
        }
    }
    let loss = total / b as f64;

    Ok(Tensor::from_op(
        vec![1],
        vec![E::from_f64(loss)],
        vec![predicted.clone()],
        Box::new(move |g, parents, store| {
            let g0 = g[0].as_f64();
            let pred = parents[0].data();
            let mut dpred = vec![E::zero(); b * n];
            for bi in 0..b {
                for i in 0..n {
                    let delta = target_data[bi] - pred[bi * n + i].as_f64();
                    let ddelta = match mode {
                        QuantileMode::Huber => quantile_huber_deriv(delta, tau_data[bi * n + i], kappa),
                        QuantileMode::Pinball => pinball_deriv(delta, tau_data[bi * n + i]),
                    };
                    // d(delta)/d(pred) = -1, batch-mean reduction.
                    dpred[bi * n + i] = E::from_f64(-g0 * ddelta / b as f64);
                }
            }
            drop(pred);
            store.accumulate(&parents[0], dpred);
        }),
    ))
}

/// Pinball loss averaged over every element (batch x taus). The flat-mean
/// reduction keeps the positive homogeneity of the asymmetric-L1 form.
pub fn pinball_loss<E: Element>(
    predicted: &Tensor<E>,
    target: &Tensor<E>,
    taus: &Tensor<E>,
) -> Result<Tensor<E>> {
    let (b, n) = check_quantile_shapes("pinball_loss", predicted, target, taus)?;
    let tau_data: Vec<f64> = taus.data().iter().map(|t| t.as_f64()).collect();
    let target_data: Vec<f64> = target.data().iter().map(|t| t.as_f64()).collect();

    let mut total = 0.0f64;
    {
        let pred = predicted.data();
        for bi in 0..b {
            for i in 0..n {
                let delta = target_data[bi] - pred[bi * n + i].as_f64();
                total += pinball_elem(delta, tau_data[bi * n + i]);
            }
        }
    }
    let count = (b * n) as f64;
    let loss = total / count;

    Ok(Tensor::from_op(
        vec![1],
        vec![E::from_f64(loss)],
        vec![predicted.clone()],
        Box::new(move |g, parents, store| {
            let g0 = g[0].as_f64();
            let pred = parents[0].data();
            let mut dpred = vec![E::zero(); b * n];
            for bi in 0..b {
                for i in 0..n {
                    let delta = target_data[bi] - pred[bi * n + i].as_f64();
                    let ddelta = pinball_deriv(delta, tau_data[bi * n + i]);
                    dpred[bi * n + i] = E::from_f64(-g0 * ddelta / count);
                }
            }
            drop(pred);
            store.accumulate(&parents[0], dpred);
        }),
    ))
}

/// Mean squared error against a detached target of identical shape.
pub fn mse<E: Element>(predicted: &Tensor<E>, target: &Tensor<E>) -> Result<Tensor<E>> {
    if predicted.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            op: "mse",
            lhs: predicted.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    let n = predicted.numel();
    if n == 0 {
        return Err(Error::Dimension {
            op: "mse",
            msg: "empty input".into(),
        });
    }
    let target_data: Vec<f64> = target.data().iter().map(|t| t.as_f64()).collect();
    let mut total = 0.0f64;
    {
        let pred = predicted.data();
        for (p, t) in pred.iter().zip(target_data.iter()) {
            let d = p.as_f64() - t;
            total += d * d;
        }
    }
    Ok(Tensor::from_op(
        vec![1],
        vec![E::from_f64(total / n as f64)],
        vec![predicted.clone()],
        Box::new(move |g, parents, store| {
            let g0 = g[0].as_f64();
            let pred = parents[0].data();
            let dpred: Vec<E> = pred
                .iter()
                .zip(target_data.iter())
                .map(|(p, t)| E::from_f64(g0 * 2.0 * (p.as_f64() - t) / n as f64))
                .collect();
            drop(pred);
            store.accumulate(&parents[0], dpred);
        }),
    ))
}

/// Fresh iid `tau ~ U([0,1])` samples as a `[batch, n]` constant tensor.
pub fn sample_taus<E: Element>(rng: &mut Rng, batch: usize, n: usize) -> Tensor<E> {
    let data: Vec<E> = (0..batch * n).map(|_| E::from_f64(rng.uniform01())).collect();
    Tensor::from_vec(&[batch, n], data).expect("shape covers data by construction")
}
