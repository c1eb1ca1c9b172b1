//! Adadelta and per-epoch step learning-rate decay.

use std::path::Path;

use crate::checkpoint::{self, TensorEntry};
use crate::error::{Error, Result};
use crate::model::NamedParams;
use crate::tensor::{Element, Tensor};

pub const DEFAULT_RHO: f64 = 0.9;
pub const DEFAULT_EPS: f64 = 1e-6;

struct Slot<E: Element> {
    name: String,
    param: Tensor<E>,
    sq_avg: Vec<E>,
    acc_delta: Vec<E>,
}

/// Adadelta optimiser. Update per element:
/// `sq_avg <- rho sq_avg + (1-rho) g^2`,
/// `delta = -sqrt(acc_delta + eps) / sqrt(sq_avg + eps) * g`,
/// `acc_delta <- rho acc_delta + (1-rho) delta^2`,
/// `param <- param + lr * delta`.
pub struct Adadelta<E: Element> {
    slots: Vec<Slot<E>>,
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
}

impl<E: Element> Adadelta<E> {
    pub fn new(params: NamedParams<E>, lr: f64) -> Self {
        Self::with_hyperparams(params, lr, DEFAULT_RHO, DEFAULT_EPS)
    }

    pub fn with_hyperparams(params: NamedParams<E>, lr: f64, rho: f64, eps: f64) -> Self {
        let slots = params
            .into_iter()
            .map(|(name, param)| {
                let n = param.numel();
                Slot {
                    name,
                    param,
                    sq_avg: vec![E::zero(); n],
                    acc_delta: vec![E::zero(); n],
                }
            })
            .collect();
        Adadelta { slots, lr, rho, eps }
    }

    pub fn step(&mut self) -> Result<()> {
        let rho = E::from_f64(self.rho);
        let one_m_rho = E::from_f64(1.0 - self.rho);
        let eps = E::from_f64(self.eps);
        let lr = E::from_f64(self.lr);
        for slot in &mut self.slots {
            let grad = slot.param.grad().ok_or_else(|| {
                Error::Contract(format!(
                    "adadelta: parameter {} has no gradient (backward not run?)",
                    slot.name
                ))
            })?;
            let mut data = slot.param.data_mut();
            for i in 0..grad.len() {
                let g = grad[i];
                slot.sq_avg[i] = rho * slot.sq_avg[i] + one_m_rho * g * g;
                let delta = -((slot.acc_delta[i] + eps).sqrt() / (slot.sq_avg[i] + eps).sqrt()) * g;
                slot.acc_delta[i] = rho * slot.acc_delta[i] + one_m_rho * delta * delta;
                data[i] += lr * delta;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&self) {
        for slot in &self.slots {
            slot.param.zero_grad();
        }
    }

    /// Accumulator state as named f32 tensors (the checkpoint wire format).
    pub fn state_entries(&self) -> Vec<TensorEntry> {
        let mut out = Vec::with_capacity(self.slots.len() * 2);
        for slot in &self.slots {
            out.push(TensorEntry {
                name: format!("sq_avg.{}", slot.name),
                shape: slot.param.shape().to_vec(),
                data: slot.sq_avg.iter().map(|v| v.as_f32()).collect(),
            });
            out.push(TensorEntry {
                name: format!("acc_delta.{}", slot.name),
                shape: slot.param.shape().to_vec(),
                data: slot.acc_delta.iter().map(|v| v.as_f32()).collect(),
            });
        }
        out
    }

    pub fn save_state(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.state_entries())
    }

    pub fn load_state(&mut self, path: &Path) -> Result<()> {
        let entries = checkpoint::load(path)?;
        for slot in &mut self.slots {
            for (buf, key) in [
                (&mut slot.sq_avg, format!("sq_avg.{}", slot.name)),
                (&mut slot.acc_delta, format!("acc_delta.{}", slot.name)),
            ] {
                let entry = entries.iter().find(|e| e.name == key).ok_or_else(|| {
                    Error::Contract(format!("optimizer state {} missing tensor {}", path.display(), key))
                })?;
                if entry.data.len() != buf.len() {
                    return Err(Error::Contract(format!(
                        "optimizer state tensor {} has {} elements, expected {}",
                        key,
                        entry.data.len(),
                        buf.len()
                    )));
                }
                for (dst, &src) in buf.iter_mut().zip(entry.data.iter()) {
                    *dst = E::from_f32(src);
                }
            }
        }
        Ok(())
    }
}

/// Multiplies the learning rate by `gamma` once per `step_every` epochs.
#[derive(Debug, Clone)]
pub struct StepLr {
    pub initial: f64,
    pub gamma: f64,
    pub step_every: usize,
    epochs_done: usize,
}

impl StepLr {
    pub fn new(initial: f64, gamma: f64, step_every: usize) -> Self {
        StepLr {
            initial,
            gamma,
            step_every: step_every.max(1),
            epochs_done: 0,
        }
    }

    pub fn current(&self) -> f64 {
        self.initial * self.gamma.powi((self.epochs_done / self.step_every) as i32)
    }

    /// Record an epoch boundary and return the new learning rate.
    pub fn epoch_end(&mut self) -> f64 {
        self.epochs_done += 1;
        self.current()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(v: f64) -> (Tensor<f64>, NamedParams<f64>) {
        let p = Tensor::<f64>::from_vec(&[1], vec![v]).unwrap().requires_grad();
        (p.clone(), vec![("w".to_string(), p)])
    }

    fn set_grad(p: &Tensor<f64>, g: f64) {
        // drive the gradient through the graph so the deposit path is real
        p.zero_grad();
        let loss = p.scale(g).unwrap().sum().unwrap();
        loss.backward().unwrap();
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let (p, params) = single_param(1.25);
        let mut opt = Adadelta::new(params, 1.0);
        set_grad(&p, 0.0);
        opt.step().unwrap();
        assert_eq!(p.data()[0], 1.25);
    }

    #[test]
    fn first_step_hand_value() {
        // g = 1, fresh state, rho = 0.9, eps = 1e-6, lr = 1:
        // delta = -sqrt(1e-6) / sqrt(0.1 + 1e-6)
        let (p, params) = single_param(0.0);
        let mut opt = Adadelta::new(params, 1.0);
        set_grad(&p, 1.0);
        opt.step().unwrap();
        let expected = -(1e-6f64.sqrt()) / (0.1f64 + 1e-6).sqrt();
        assert!((p.data()[0] - expected).abs() < 1e-9, "{} vs {}", p.data()[0], expected);
        assert!((expected - -3.1623e-3).abs() < 1e-6);
    }

    #[test]
    fn missing_grad_is_contract_error() {
        let (_, params) = single_param(0.0);
        let mut opt = Adadelta::new(params, 1.0);
        assert!(matches!(opt.step().unwrap_err(), Error::Contract(_)));
    }

    #[test]
    fn deterministic_across_runs() {
        let run = || {
            let (p, params) = single_param(0.3);
            let mut opt = Adadelta::new(params, 1.0);
            let mut rng = crate::rng::Rng::new(5);
            for _ in 0..10 {
                set_grad(&p, rng.uniform(-1.0, 1.0));
                opt.step().unwrap();
            }
            let bits = p.data()[0].to_bits();
            bits
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn converges_on_quadratic() {
        // f(w) = (w - 3)^2 from w = 0 reaches |w - 3| < 0.1 within 5000 steps
        let (p, params) = single_param(0.0);
        let mut opt = Adadelta::new(params, 1.0);
        let mut steps = 0;
        for _ in 0..5000 {
            let w = p.data()[0];
            set_grad(&p, 2.0 * (w - 3.0));
            opt.step().unwrap();
            steps += 1;
            if (p.data()[0] - 3.0).abs() < 0.1 {
                break;
            }
        }
        assert!(
            (p.data()[0] - 3.0).abs() < 0.1,
            "still at {} after {} steps",
            p.data()[0],
            steps
        );
    }

    #[test]
    fn state_roundtrip_bit_exact() {
        let p = Tensor::<f32>::from_vec(&[3], vec![0.5, -0.25, 1.0])
            .unwrap()
            .requires_grad();
        let mut opt = Adadelta::new(vec![("w".to_string(), p.clone())], 1.0);
        for _ in 0..4 {
            p.zero_grad();
            let loss = p.elementwise_mul(&p).unwrap().sum().unwrap();
            loss.backward().unwrap();
            opt.step().unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("opt.ckpt");
        opt.save_state(&path).unwrap();
        let before = opt.state_entries();

        let q = Tensor::<f32>::from_vec(&[3], vec![0.0; 3]).unwrap().requires_grad();
        let mut opt2 = Adadelta::new(vec![("w".to_string(), q)], 1.0);
        opt2.load_state(&path).unwrap();
        let after = opt2.state_entries();
        for (a, b) in before.iter().zip(after.iter()) {
            assert_eq!(a.name, b.name);
            let bits_a: Vec<u32> = a.data.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = b.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn step_lr_schedule() {
        let mut s = StepLr::new(1.0, 0.7, 1);
        assert_eq!(s.current(), 1.0);
        s.epoch_end();
        let after2 = s.epoch_end();
        assert!((after2 - 0.49).abs() < 1e-9);
        for _ in 2..20 {
            s.epoch_end();
        }
        assert!((s.current() - 0.7f64.powi(20)).abs() < 1e-12);
        assert!((s.current() - 7.98e-4).abs() < 2e-6);

        let mut flat = StepLr::new(0.5, 1.0, 1);
        flat.epoch_end();
        flat.epoch_end();
        assert_eq!(flat.current(), 0.5);
    }
}
