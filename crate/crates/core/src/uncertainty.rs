//! Loss-distribution estimation on the test set, the statistics tables,
//! threshold filtering and selective-prediction evaluation.
//!
//! The per-example uncertainty score is the mean of the sampled quantile
//! values (the expectation of the estimated loss distribution). Filtering
//! keeps examples whose score is at most `mean + N * std`, with mean/std
//! taken over the test-set scores; probe examples stay out of both the
//! statistics and the accuracy figures. Standard deviations are population
//! standard deviations (divide by n).

use std::path::Path;

use crate::data::{gather_batch, BatchIterator, LabeledDataset};
use crate::error::{Error, Result};
use crate::loss::sample_taus;
use crate::model::{IqnModel, ScalarModel};
use crate::rng::{derive_seed, Rng};
use crate::tensor::{no_grad, Element};

/// Sampled loss distribution of one example.
#[derive(Debug, Clone)]
pub struct LossDistributionEstimate {
    pub example_id: usize,
    /// Sampled taus, ascending.
    pub tau_values: Vec<f64>,
    /// `Z_tau(x)` aligned with `tau_values`.
    pub quantile_values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Estimate one example's loss distribution with `num_taus` fresh
/// `U([0,1])` samples, eval mode.
pub fn estimate_distribution<E: Element>(
    iqn: &IqnModel<E>,
    ds: &LabeledDataset,
    example_id: usize,
    num_taus: usize,
    seed: u64,
) -> Result<LossDistributionEstimate> {
    if num_taus == 0 {
        return Err(Error::Parameter("num_taus must be >= 1".into()));
    }
    if example_id >= ds.n {
        return Err(Error::Parameter(format!(
            "example id {} out of range for a dataset of {}",
            example_id, ds.n
        )));
    }
    let mut tau_rng = Rng::new(seed);
    let mut eval_rng = Rng::new(0);
    let (image, _) = gather_batch::<E>(ds, &[example_id as u32]);
    let taus = sample_taus::<E>(&mut tau_rng, 1, num_taus);
    let values = no_grad(|| -> Result<Vec<f64>> {
        let z = iqn.forward(&image, &taus, false, &mut eval_rng)?;
        let vals: Vec<f64> = z.data().iter().map(|v| v.as_f64()).collect();
        Ok(vals)
    })?;
    let mut pairs: Vec<(f64, f64)> = taus
        .data()
        .iter()
        .map(|t| t.as_f64())
        .zip(values.iter().copied())
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mean, std) = mean_std(&values);
    Ok(LossDistributionEstimate {
        example_id,
        tau_values: pairs.iter().map(|p| p.0).collect(),
        quantile_values: pairs.iter().map(|p| p.1).collect(),
        mean,
        std,
    })
}

/// Per-example (mean, std) of the estimated loss distribution for a whole
/// dataset, batched. Each example gets its own fresh taus; the tau stream
/// is a pure function of (seed, example order).
pub fn estimate_means<E: Element>(
    iqn: &IqnModel<E>,
    ds: &LabeledDataset,
    num_taus: usize,
    seed: u64,
    batch_size: usize,
) -> Result<Vec<(f64, f64)>> {
    if num_taus == 0 {
        return Err(Error::Parameter("num_taus must be >= 1".into()));
    }
    let mut tau_rng = Rng::new(derive_seed(seed, 0x51));
    let mut eval_rng = Rng::new(0);
    let mut out = Vec::with_capacity(ds.n);
    for indices in BatchIterator::new(ds, batch_size, None, false)? {
        let (images, _) = gather_batch::<E>(ds, &indices);
        let taus = sample_taus::<E>(&mut tau_rng, indices.len(), num_taus);
        no_grad(|| -> Result<()> {
            let z = iqn.forward(&images, &taus, false, &mut eval_rng)?;
            let zd = z.data();
            for bi in 0..indices.len() {
                let row: Vec<f64> = zd[bi * num_taus..(bi + 1) * num_taus]
                    .iter()
                    .map(|v| v.as_f64())
                    .collect();
                out.push(mean_std(&row));
            }
            Ok(())
        })?;
    }
    Ok(out)
}

/// Eval-mode scalar estimates for a whole dataset, in dataset order.
pub fn estimate_scalars<E: Element>(
    model: &ScalarModel<E>,
    ds: &LabeledDataset,
    batch_size: usize,
) -> Result<Vec<f64>> {
    let mut eval_rng = Rng::new(0);
    let mut out = Vec::with_capacity(ds.n);
    for indices in BatchIterator::new(ds, batch_size, None, false)? {
        let (images, _) = gather_batch::<E>(ds, &indices);
        no_grad(|| -> Result<()> {
            let z = model.forward(&images, false, &mut eval_rng)?;
            out.extend(z.data().iter().map(|v| v.as_f64()));
            Ok(())
        })?;
    }
    Ok(out)
}

/// The statistics table: group means of per-example estimated-loss means.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyStats {
    pub dataset_mean: f64,
    pub dataset_std: f64,
    /// Absent when no prediction was incorrect.
    pub incorrect_mean: Option<f64>,
    /// Absent when no prediction was correct.
    pub correct_mean: Option<f64>,
    /// Absent when no probe estimates were supplied.
    pub zeros_mean: Option<f64>,
}

pub fn compute_stats(
    estimates: &[f64],
    predictions: &[u32],
    labels: &[u32],
    zeros_estimates: Option<&[f64]>,
) -> Result<UncertaintyStats> {
    if estimates.len() != predictions.len() || estimates.len() != labels.len() {
        return Err(Error::Contract(format!(
            "stats alignment: {} estimates, {} predictions, {} labels",
            estimates.len(),
            predictions.len(),
            labels.len()
        )));
    }
    if estimates.is_empty() {
        return Err(Error::Contract("stats over an empty dataset".into()));
    }
    let (dataset_mean, dataset_std) = mean_std(estimates);
    let mut groups: [(f64, usize); 2] = [(0.0, 0); 2]; // [incorrect, correct]
    for i in 0..estimates.len() {
        let g = usize::from(predictions[i] == labels[i]);
        groups[g].0 += estimates[i];
        groups[g].1 += 1;
    }
    let group_mean = |(sum, count): (f64, usize)| {
        if count == 0 {
            None
        } else {
            Some(sum / count as f64)
        }
    };
    let zeros_mean = match zeros_estimates {
        Some(z) if !z.is_empty() => Some(z.iter().sum::<f64>() / z.len() as f64),
        _ => None,
    };
    Ok(UncertaintyStats {
        dataset_mean,
        dataset_std,
        incorrect_mean: group_mean(groups[0]),
        correct_mean: group_mean(groups[1]),
        zeros_mean,
    })
}

/// Selective-prediction outcome at one threshold.
#[derive(Debug, Clone)]
pub struct FilterReport {
    /// The paper's N: cutoff sits at `mean + N * std`.
    pub threshold_sigmas: f64,
    pub kept_count: usize,
    pub removed_count: usize,
    /// Absent when everything was removed.
    pub accuracy_kept: Option<f64>,
    pub accuracy_all: f64,
    pub kept: Vec<bool>,
}

/// Keep every example whose estimate is at most `mean + n_sigmas * std`
/// (mean/std over the supplied test-set estimates) and report accuracy on
/// the kept set.
pub fn filter_by_threshold(
    estimates: &[f64],
    predictions: &[u32],
    labels: &[u32],
    n_sigmas: f64,
) -> Result<FilterReport> {
    if !n_sigmas.is_finite() {
        return Err(Error::Parameter(format!("n_sigmas must be finite, got {}", n_sigmas)));
    }
    if estimates.len() != predictions.len() || estimates.len() != labels.len() {
        return Err(Error::Contract(format!(
            "filter alignment: {} estimates, {} predictions, {} labels",
            estimates.len(),
            predictions.len(),
            labels.len()
        )));
    }
    if estimates.is_empty() {
        return Err(Error::Contract("filter over an empty dataset".into()));
    }
    let (mean, std) = mean_std(estimates);
    let cutoff = mean + n_sigmas * std;
    let kept: Vec<bool> = estimates.iter().map(|&e| e <= cutoff).collect();
    let mut kept_count = 0usize;
    let mut kept_correct = 0usize;
    let mut all_correct = 0usize;
    for i in 0..estimates.len() {
        let correct = predictions[i] == labels[i];
        all_correct += usize::from(correct);
        if kept[i] {
            kept_count += 1;
            kept_correct += usize::from(correct);
        }
    }
    Ok(FilterReport {
        threshold_sigmas: n_sigmas,
        kept_count,
        removed_count: estimates.len() - kept_count,
        accuracy_kept: (kept_count > 0).then(|| kept_correct as f64 / kept_count as f64),
        accuracy_all: all_correct as f64 / estimates.len() as f64,
        kept,
    })
}

/// Format with 6 significant digits (`%.6g`-style).
pub fn format_sig(v: f64, sig: usize) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if exp >= sig as i32 || exp < -4 {
        format!("{:.*e}", sig - 1, v)
    } else {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        format!("{:.*}", decimals, v)
    }
}

/// Histogram CSV of one example's sampled quantile values:
/// `bin_left,bin_right,count` rows followed by a `# dataset_mean,<v>`
/// marker line. Counts sum to the number of tau samples.
pub fn export_histogram(
    est: &LossDistributionEstimate,
    bins: usize,
    path: &Path,
    dataset_mean: f64,
) -> Result<()> {
    if bins == 0 {
        return Err(Error::Parameter("histogram needs bins >= 1".into()));
    }
    let lo = est.quantile_values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = est.quantile_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &v in &est.quantile_values {
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let mut text = String::from("bin_left,bin_right,count\n");
    for (i, &c) in counts.iter().enumerate() {
        text.push_str(&format!(
            "{},{},{}\n",
            format_sig(lo + i as f64 * width, 6),
            format_sig(lo + (i + 1) as f64 * width, 6),
            c
        ));
    }
    text.push_str(&format!("# dataset_mean,{}\n", format_sig(dataset_mean, 6)));
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn stat_cell(v: Option<f64>) -> String {
    v.map(|x| format_sig(x, 6)).unwrap_or_default()
}

/// `stats.csv`: rows Mean/Std/Incorrect/Correct/Zeros, one column per
/// estimator variant.
pub fn write_stats_csv(
    path: &Path,
    iqn: Option<&UncertaintyStats>,
    scalar: Option<&UncertaintyStats>,
) -> Result<()> {
    let mut header = String::from("statistic");
    if iqn.is_some() {
        header.push_str(",iqn");
    }
    if scalar.is_some() {
        header.push_str(",scalar");
    }
    let mut text = header + "\n";
    let rows: [(&str, fn(&UncertaintyStats) -> Option<f64>); 5] = [
        ("Mean", |s| Some(s.dataset_mean)),
        ("Std", |s| Some(s.dataset_std)),
        ("Incorrect", |s| s.incorrect_mean),
        ("Correct", |s| s.correct_mean),
        ("Zeros", |s| s.zeros_mean),
    ];
    for (name, get) in rows {
        let mut line = name.to_string();
        if let Some(s) = iqn {
            line.push(',');
            line.push_str(&stat_cell(get(s)));
        }
        if let Some(s) = scalar {
            line.push(',');
            line.push_str(&stat_cell(get(s)));
        }
        text.push_str(&line);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `filter_report.csv`: one row per (variant, N) pair.
pub fn write_filter_report_csv(path: &Path, reports: &[(&str, &FilterReport)]) -> Result<()> {
    let mut text = String::from("variant,n_sigmas,kept,removed,accuracy_kept,accuracy_all\n");
    for (variant, r) in reports {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            variant,
            format_sig(r.threshold_sigmas, 6),
            r.kept_count,
            r.removed_count,
            stat_cell(r.accuracy_kept),
            format_sig(r.accuracy_all, 6)
        ));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_hand_fixture() {
        // estimates {0.1, 0.2, 0.3, 0.4}, correctness {T, T, F, F}
        let estimates = [0.1, 0.2, 0.3, 0.4];
        let predictions = [1, 1, 1, 1];
        let labels = [1, 1, 0, 0];
        let s = compute_stats(&estimates, &predictions, &labels, None).unwrap();
        assert!((s.incorrect_mean.unwrap() - 0.35).abs() < 1e-12);
        assert!((s.correct_mean.unwrap() - 0.15).abs() < 1e-12);
        assert!((s.dataset_mean - 0.25).abs() < 1e-12);
        assert!(s.zeros_mean.is_none());
    }

    #[test]
    fn stats_all_correct_has_no_incorrect_mean() {
        let s = compute_stats(&[0.1, 0.2], &[3, 4], &[3, 4], Some(&[0.9])).unwrap();
        assert!(s.incorrect_mean.is_none());
        assert!((s.zeros_mean.unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn filter_hand_fixture() {
        // estimates [0.1, 0.2, 0.3, 10.0], correctness [T, T, F, F], N = 0:
        // mean 2.65 keeps the first three, accuracy_kept = 2/3
        let estimates = [0.1, 0.2, 0.3, 10.0];
        let predictions = [1, 1, 1, 1];
        let labels = [1, 1, 0, 0];
        let r = filter_by_threshold(&estimates, &predictions, &labels, 0.0).unwrap();
        assert_eq!(r.kept_count, 3);
        assert_eq!(r.removed_count, 1);
        assert!((r.accuracy_kept.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.accuracy_all - 0.5).abs() < 1e-12);
        assert_eq!(r.kept, vec![true, true, true, false]);
    }

    #[test]
    fn filter_huge_threshold_keeps_everything() {
        let estimates = [0.1, 0.2, 0.3, 10.0];
        let predictions = [1, 1, 1, 1];
        let labels = [1, 1, 0, 0];
        let r = filter_by_threshold(&estimates, &predictions, &labels, 1e12).unwrap();
        assert_eq!(r.kept_count, 4);
        assert_eq!(r.accuracy_kept.unwrap(), r.accuracy_all);
    }

    #[test]
    fn filter_accuracy_monotone_on_fixture() {
        let estimates = [0.1, 0.2, 0.3, 10.0];
        let predictions = [1, 1, 1, 1];
        let labels = [1, 1, 0, 0];
        let mut last = f64::INFINITY;
        for n in [-0.3, 0.0, 0.5, 1.0, 2.0] {
            let r = filter_by_threshold(&estimates, &predictions, &labels, n).unwrap();
            if let Some(a) = r.accuracy_kept {
                assert!(a <= last + 1e-12, "accuracy rose from {} to {} at N = {}", last, a, n);
                last = a;
            }
        }
    }

    #[test]
    fn filter_can_remove_everything() {
        // negative enough threshold removes all examples
        let estimates = [0.5, 0.5];
        let r = filter_by_threshold(&estimates, &[0, 0], &[0, 0], -1.0);
        // equal estimates: std 0, cutoff = mean - std*1 = mean, kept = all
        let r = r.unwrap();
        assert_eq!(r.kept_count, 2);
        let estimates = [0.1, 0.9];
        let r = filter_by_threshold(&estimates, &[0, 0], &[0, 0], -2.0).unwrap();
        assert_eq!(r.kept_count, 0);
        assert!(r.accuracy_kept.is_none());
    }

    #[test]
    fn filter_rejects_non_finite_threshold() {
        let err = filter_by_threshold(&[0.1], &[0], &[0], f64::NAN).unwrap_err();
        assert!(matches!(err, Error::Parameter(_)));
    }

    #[test]
    fn stats_pipeline_is_pure() {
        let estimates = [0.3, 0.1, 0.7, 0.2];
        let predictions = [0, 1, 2, 3];
        let labels = [0, 1, 0, 3];
        let a = compute_stats(&estimates, &predictions, &labels, Some(&[1.0])).unwrap();
        let b = compute_stats(&estimates, &predictions, &labels, Some(&[1.0])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dataset_mean.to_bits(), b.dataset_mean.to_bits());
    }

    #[test]
    fn histogram_counts_conserved() {
        let est = LossDistributionEstimate {
            example_id: 0,
            tau_values: vec![0.1, 0.5, 0.9],
            quantile_values: vec![0.2, 0.4, 0.8],
            mean: 0.466,
            std: 0.1,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        export_histogram(&est, 5, &path, 0.3).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let total: usize = text
            .lines()
            .skip(1)
            .filter(|l| !l.starts_with('#'))
            .map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap())
            .sum();
        assert_eq!(total, 3);
        assert!(text.lines().last().unwrap().starts_with("# dataset_mean,"));

        // single bin holds everything
        let path1 = dir.path().join("h1.csv");
        export_histogram(&est, 1, &path1, 0.3).unwrap();
        let text1 = std::fs::read_to_string(&path1).unwrap();
        assert!(text1.contains(",3\n"));

        // constant values land in exactly one bin
        let flat = LossDistributionEstimate {
            example_id: 1,
            tau_values: vec![0.2, 0.8],
            quantile_values: vec![0.5, 0.5],
            mean: 0.5,
            std: 0.0,
        };
        let path2 = dir.path().join("h2.csv");
        export_histogram(&flat, 4, &path2, 0.5).unwrap();
        let text2 = std::fs::read_to_string(&path2).unwrap();
        let nonzero: Vec<usize> = text2
            .lines()
            .skip(1)
            .filter(|l| !l.starts_with('#'))
            .map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap())
            .filter(|&c| c > 0)
            .collect();
        assert_eq!(nonzero, vec![2]);
    }

    #[test]
    fn format_sig_six_digits() {
        assert_eq!(format_sig(0.0, 6), "0");
        assert_eq!(format_sig(1.0, 6), "1.00000");
        assert_eq!(format_sig(0.1307, 6), "0.130700");
        assert_eq!(format_sig(-0.424213, 6), "-0.424213");
        assert_eq!(format_sig(123456.7, 6), "123457");
        assert_eq!(format_sig(1234567.0, 6), "1.23457e6");
        assert_eq!(format_sig(0.0000123456, 6), "1.23456e-5");
    }
}
