//! Central finite-difference gradient verification.
//!
//! The checker only ever evaluates forward passes of the closure under test,
//! so it stays independent of the backward implementation it validates. Run
//! it with `f64` tensors; `f32` forward noise swamps the difference quotient.

use crate::error::Result;

use super::{no_grad, Element, Tensor};

pub struct GradCheckReport {
    /// Largest relative error seen across all checked elements.
    pub max_rel_err: f64,
    /// (param index, element index) of the worst element.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

/// Compare analytic gradients of `build()` (a scalar-loss forward pass over
/// `params`) against central finite differences with the given step.
///
/// `build` must be a pure function of the current parameter values; anything
/// stochastic inside it (dropout) has to reseed its own RNG on every call.
pub fn check_gradients<E: Element>(
    params: &[Tensor<E>],
    step: f64,
    build: impl Fn() -> Result<Tensor<E>>,
) -> Result<GradCheckReport> {
    for p in params {
        p.zero_grad();
    }
    let loss = build()?;
    loss.backward()?;
    let analytic: Vec<Vec<E>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![E::zero(); p.numel()]))
        .collect();

    let h = E::from_f64(step);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
    };
    for (pi, p) in params.iter().enumerate() {
        for ei in 0..p.numel() {
            let orig = p.data()[ei];
            p.data_mut()[ei] = orig + h;
            let up = no_grad(&build)?.item().as_f64();
            p.data_mut()[ei] = orig - h;
            let down = no_grad(&build)?.item().as_f64();
            p.data_mut()[ei] = orig;

            let numeric = (up - down) / (2.0 * step);
            let a = analytic[pi][ei].as_f64();
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            let rel = (a - numeric).abs() / denom;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (pi, ei);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Convenience assertion used throughout the test suites.
pub fn assert_gradients<E: Element>(
    what: &str,
    params: &[Tensor<E>],
    tol: f64,
    build: impl Fn() -> Result<Tensor<E>>,
) {
    let report = check_gradients(params, 1e-5, build).expect("gradcheck forward failed");
    assert!(
        report.max_rel_err < tol,
        "{}: gradient mismatch at param {} elem {}: analytic {} vs numeric {} (rel err {:.3e})",
        what,
        report.worst.0,
        report.worst.1,
        report.analytic,
        report.numeric,
        report.max_rel_err,
    );
}
