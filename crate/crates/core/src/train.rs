//! The two-phase pipeline: train the classifier, cache its per-example
//! losses on the training set, then train weight-transferred estimators
//! (quantile and/or scalar) to regress those losses.
//!
//! Everything here is a pure function of (dataset, config, seed): reruns
//! produce bit-identical parameters and metrics files. Wall-clock timings
//! are reported through `run.json`, never through `metrics.csv`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{gather_batch, BatchIterator, LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::loss::{cross_entropy, mse, quantile_loss, sample_taus, QuantileLossConfig, QuantileMode};
use crate::model::{meta_for, ClassifierModel, InputShape, IqnModel, ScalarModel};
use crate::optim::{Adadelta, StepLr};
use crate::rng::{derive_seed, Rng};
use crate::tensor::{no_grad, Element, Tensor};
use crate::uncertainty::format_sig;

pub const CLASSIFIER_CKPT: &str = "classifier.ckpt";
pub const IQN_CKPT: &str = "iqn.ckpt";
pub const SCALAR_CKPT: &str = "scalar.ckpt";
pub const TARGETS_FILE: &str = "targets.bin";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config";
pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    Cifar100,
}

impl DatasetKind {
    pub fn input_shape(self) -> InputShape {
        match self {
            DatasetKind::Mnist => InputShape::MNIST,
            _ => InputShape::CIFAR,
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            DatasetKind::Mnist | DatasetKind::Cifar10 => 10,
            DatasetKind::Cifar100 => 100,
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(DatasetKind::Mnist),
            "cifar10" => Ok(DatasetKind::Cifar10),
            "cifar100" => Ok(DatasetKind::Cifar100),
            other => Err(Error::Parameter(format!(
                "unknown dataset {:?} (expected mnist, cifar10 or cifar100)",
                other
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dataset: DatasetKind,
    pub seed: u64,
    /// Classifier epochs.
    pub epochs: usize,
    /// Estimator epochs; defaults to `epochs`.
    pub phase2_epochs: Option<usize>,
    pub batch_size: usize,
    pub dropout_enabled: bool,
    /// Tau samples per example per iteration (N).
    pub n_taus: usize,
    /// Quantile Huber threshold.
    pub kappa: f64,
    pub lr: f64,
    pub lr_gamma: f64,
    pub freeze_backbone: bool,
    /// Train on only the first `n` examples when set.
    pub subset: Option<usize>,
    /// Element type used for training, recorded in run metadata.
    pub precision: String,
}

impl TrainConfig {
    pub fn new(dataset: DatasetKind, seed: u64) -> Self {
        TrainConfig {
            dataset,
            seed,
            epochs: 20,
            phase2_epochs: None,
            batch_size: 64,
            dropout_enabled: true,
            n_taus: 64,
            kappa: 1.0,
            lr: 1.0,
            lr_gamma: 0.7,
            freeze_backbone: false,
            subset: None,
            precision: crate::TrainElem::NAME.to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Parameter("epochs must be >= 1".into()));
        }
        if self.phase2_epochs == Some(0) {
            return Err(Error::Parameter("phase2_epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be >= 1".into()));
        }
        if self.n_taus == 0 {
            return Err(Error::Parameter("n_taus must be >= 1".into()));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::Parameter(format!("kappa must be > 0, got {}", self.kappa)));
        }
        Ok(())
    }

    /// Flat key=value view, written to the run directory.
    pub fn as_key_values(&self) -> Vec<(String, String)> {
        let dataset = match self.dataset {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Cifar100 => "cifar100",
        };
        let mut kv = vec![
            ("dataset".to_string(), dataset.to_string()),
            ("seed".to_string(), self.seed.to_string()),
            ("epochs".to_string(), self.epochs.to_string()),
            (
                "phase2_epochs".to_string(),
                self.phase2_epochs.unwrap_or(self.epochs).to_string(),
            ),
            ("batch_size".to_string(), self.batch_size.to_string()),
            ("dropout".to_string(), self.dropout_enabled.to_string()),
            ("n_taus".to_string(), self.n_taus.to_string()),
            ("kappa".to_string(), self.kappa.to_string()),
            ("lr".to_string(), self.lr.to_string()),
            ("lr_gamma".to_string(), self.lr_gamma.to_string()),
            ("freeze_backbone".to_string(), self.freeze_backbone.to_string()),
            ("precision".to_string(), self.precision.clone()),
        ];
        if let Some(s) = self.subset {
            kv.push(("subset".to_string(), s.to_string()));
        }
        kv
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochMetric {
    pub phase: String,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub accuracy: Option<f64>,
}

/// Everything a reported number traces back to.
#[derive(Debug, Serialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub metrics: Vec<EpochMetric>,
    pub wall_ms: u128,
    pub checkpoints: Vec<String>,
    pub version: String,
}

impl RunRecord {
    fn new(config: &TrainConfig) -> Self {
        RunRecord {
            config: config.clone(),
            metrics: Vec::new(),
            wall_ms: 0,
            checkpoints: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

fn check_finite(loss: f64, phase: &str, epoch: usize) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Divergence(format!(
            "{} loss became {} in epoch {}",
            phase, loss, epoch
        )));
    }
    Ok(())
}

/// Phase 1: train the classifier with cross-entropy, Adadelta and per-epoch
/// step decay. Writes `classifier.ckpt` (refreshed every epoch) when a run
/// directory is given.
pub fn train_classifier<E: Element>(
    train: &LabeledDataset,
    eval: Option<&LabeledDataset>,
    cfg: &TrainConfig,
    run_dir: Option<&Path>,
) -> Result<(ClassifierModel<E>, RunRecord)> {
    cfg.validate()?;
    if train.split != Split::Train {
        return Err(Error::Contract("train_classifier requires the train split".into()));
    }
    let started = Instant::now();
    let ds = match cfg.subset {
        Some(n) => train.take(n),
        None => train.clone(),
    };

    let mut init_rng = Rng::new(derive_seed(cfg.seed, 0x01));
    let model = ClassifierModel::<E>::new(
        cfg.dataset.input_shape(),
        cfg.dataset.num_classes(),
        cfg.dropout_enabled,
        &mut init_rng,
    )?;
    let mut dropout_rng = Rng::new(derive_seed(cfg.seed, 0x02));
    let mut opt = Adadelta::new(model.params(), cfg.lr);
    let mut sched = StepLr::new(cfg.lr, cfg.lr_gamma, 1);
    let mut record = RunRecord::new(cfg);

    for epoch in 0..cfg.epochs {
        let lr_used = opt.lr;
        let mut shuffle_rng = Rng::new(derive_seed(cfg.seed, 0x0100 + epoch as u64));
        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        for indices in BatchIterator::new(&ds, cfg.batch_size, Some(&mut shuffle_rng), false)? {
            let (images, labels) = gather_batch::<E>(&ds, &indices);
            let log_probs = model.forward(&images, true, &mut dropout_rng)?;
            let (_, mean) = cross_entropy(&log_probs, &labels)?;
            let loss = mean.item().as_f64();
            check_finite(loss, "classifier", epoch)?;
            loss_sum += loss * indices.len() as f64;
            seen += indices.len();
            mean.backward()?;
            opt.step()?;
            opt.zero_grad();
        }
        let epoch_loss = loss_sum / seen as f64;
        let accuracy = match eval {
            Some(eval_ds) => Some(evaluate_accuracy(&model, eval_ds, cfg.batch_size)?),
            None => None,
        };
        record.metrics.push(EpochMetric {
            phase: "classifier".into(),
            epoch,
            lr: lr_used,
            loss: epoch_loss,
            accuracy,
        });
        opt.lr = sched.epoch_end();
        if let Some(dir) = run_dir {
            let path = dir.join(CLASSIFIER_CKPT);
            model.save(&path)?;
            meta_for::<E>(
                "classifier",
                cfg.dataset.input_shape(),
                cfg.dataset.num_classes(),
                cfg.dropout_enabled,
                &model.params(),
            )
            .write(&dir.join(format!("{}.meta.json", CLASSIFIER_CKPT)))?;
            if !record.checkpoints.iter().any(|c| c == CLASSIFIER_CKPT) {
                record.checkpoints.push(CLASSIFIER_CKPT.into());
            }
            let _ = path;
        }
    }
    record.wall_ms = started.elapsed().as_millis();
    Ok((model, record))
}

/// Eval-mode classification accuracy, probe examples excluded.
pub fn evaluate_accuracy<E: Element>(
    model: &ClassifierModel<E>,
    ds: &LabeledDataset,
    batch_size: usize,
) -> Result<f64> {
    let mut rng = Rng::new(0); // unused in eval mode
    let mut correct = 0usize;
    let mut total = 0usize;
    for indices in BatchIterator::new(ds, batch_size, None, false)? {
        let (images, labels) = gather_batch::<E>(ds, &indices);
        let preds = no_grad(|| -> Result<Vec<u32>> {
            model.forward(&images, false, &mut rng)?.argmax_rows()
        })?;
        for (p, l) in preds.iter().zip(labels.iter()) {
            if *l == crate::data::PROBE_LABEL {
                continue;
            }
            total += 1;
            if p == l {
                correct += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::Contract("accuracy over an empty dataset".into()));
    }
    Ok(correct as f64 / total as f64)
}

/// Eval-mode classifier predictions for every example, in dataset order.
pub fn classifier_predictions<E: Element>(
    model: &ClassifierModel<E>,
    ds: &LabeledDataset,
    batch_size: usize,
) -> Result<Vec<u32>> {
    let mut rng = Rng::new(0);
    let mut out = Vec::with_capacity(ds.n);
    for indices in BatchIterator::new(ds, batch_size, None, false)? {
        let (images, _) = gather_batch::<E>(ds, &indices);
        let preds = no_grad(|| -> Result<Vec<u32>> {
            model.forward(&images, false, &mut rng)?.argmax_rows()
        })?;
        out.extend(preds);
    }
    Ok(out)
}

/// Eval-mode per-example cross-entropy of the trained classifier over the
/// whole dataset — the regression target table for phase 2.
pub fn compute_target_losses<E: Element>(
    model: &ClassifierModel<E>,
    ds: &LabeledDataset,
    batch_size: usize,
) -> Result<Vec<f32>> {
    let mut rng = Rng::new(0);
    let mut out = Vec::with_capacity(ds.n);
    for indices in BatchIterator::new(ds, batch_size, None, false)? {
        let (images, labels) = gather_batch::<E>(ds, &indices);
        no_grad(|| -> Result<()> {
            let log_probs = model.forward(&images, false, &mut rng)?;
            let (per, _) = cross_entropy(&log_probs, &labels)?;
            out.extend(per.data().iter().map(|v| v.as_f32()));
            Ok(())
        })?;
    }
    Ok(out)
}

/// `targets.bin`: u32 count, then one little-endian f32 per example index.
pub fn save_targets(path: &Path, targets: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(4 + targets.len() * 4);
    buf.extend_from_slice(&(targets.len() as u32).to_le_bytes());
    for &t in targets {
        buf.extend_from_slice(&t.to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_targets(path: &Path) -> Result<Vec<f32>> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() < 4 {
        return Err(Error::format(path, "truncated target table: missing count at offset 0"));
    }
    let count = u32::from_le_bytes(buf[..4].try_into().unwrap()) as usize;
    if buf.len() != 4 + count * 4 {
        return Err(Error::format(
            path,
            format!(
                "target table promises {} entries ({} bytes after offset 4), file has {}",
                count,
                count * 4,
                buf.len() - 4
            ),
        ));
    }
    Ok(buf[4..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn phase2_setup<E: Element>(
    train: &LabeledDataset,
    targets: &[f32],
    cfg: &TrainConfig,
) -> Result<LabeledDataset> {
    cfg.validate()?;
    if train.split != Split::Train {
        return Err(Error::Contract("loss regression requires the train split".into()));
    }
    let ds = match cfg.subset {
        Some(n) => train.take(n),
        None => train.clone(),
    };
    if targets.len() != ds.n {
        return Err(Error::Contract(format!(
            "target table has {} entries for {} training examples",
            targets.len(),
            ds.n
        )));
    }
    Ok(ds)
}

/// Phase 2a: transfer the classifier backbone into a quantile estimator and
/// train it against the cached per-example losses.
pub fn train_iqn<E: Element>(
    classifier: &ClassifierModel<E>,
    train: &LabeledDataset,
    targets: &[f32],
    cfg: &TrainConfig,
    run_dir: Option<&Path>,
) -> Result<(IqnModel<E>, RunRecord)> {
    let ds = phase2_setup::<E>(train, targets, cfg)?;
    let started = Instant::now();
    let mut init_rng = Rng::new(derive_seed(cfg.seed, 0x11));
    let mut model = IqnModel::<E>::new(cfg.dataset.input_shape(), cfg.dropout_enabled, &mut init_rng)?;
    model.transfer_from(classifier)?;

    let mut dropout_rng = Rng::new(derive_seed(cfg.seed, 0x12));
    let mut tau_rng = Rng::new(derive_seed(cfg.seed, 0x13));
    let mut opt = Adadelta::new(model.trainable_params(cfg.freeze_backbone), cfg.lr);
    let mut sched = StepLr::new(cfg.lr, cfg.lr_gamma, 1);
    let mut record = RunRecord::new(cfg);
    let loss_cfg = QuantileLossConfig {
        kappa: cfg.kappa,
        n_taus: cfg.n_taus,
        n_target: 1,
        mode: QuantileMode::Huber,
    };

    let epochs = cfg.phase2_epochs.unwrap_or(cfg.epochs);
    for epoch in 0..epochs {
        let lr_used = opt.lr;
        let mut shuffle_rng = Rng::new(derive_seed(cfg.seed, 0x1400 + epoch as u64));
        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        for indices in BatchIterator::new(&ds, cfg.batch_size, Some(&mut shuffle_rng), false)? {
            let (images, _) = gather_batch::<E>(&ds, &indices);
            let taus = sample_taus::<E>(&mut tau_rng, indices.len(), cfg.n_taus);
            let target: Vec<E> = indices.iter().map(|&i| E::from_f32(targets[i as usize])).collect();
            let target = Tensor::from_vec(&[indices.len()], target)?;
            let predicted = model.forward(&images, &taus, true, &mut dropout_rng)?;
            let loss_t = quantile_loss(&predicted, &target, &taus, &loss_cfg)?;
            let loss = loss_t.item().as_f64();
            check_finite(loss, "iqn", epoch)?;
            loss_sum += loss * indices.len() as f64;
            seen += indices.len();
            loss_t.backward()?;
            opt.step()?;
            opt.zero_grad();
        }
        record.metrics.push(EpochMetric {
            phase: "iqn".into(),
            epoch,
            lr: lr_used,
            loss: loss_sum / seen as f64,
            accuracy: None,
        });
        opt.lr = sched.epoch_end();
        if let Some(dir) = run_dir {
            model.save(&dir.join(IQN_CKPT))?;
            meta_for::<E>(
                "iqn",
                cfg.dataset.input_shape(),
                cfg.dataset.num_classes(),
                cfg.dropout_enabled,
                &model.params(),
            )
            .write(&dir.join(format!("{}.meta.json", IQN_CKPT)))?;
            if !record.checkpoints.iter().any(|c| c == IQN_CKPT) {
                record.checkpoints.push(IQN_CKPT.into());
            }
        }
    }
    record.wall_ms = started.elapsed().as_millis();
    Ok((model, record))
}

/// Phase 2b: the scalar baseline, trained with MSE against the same cached
/// target table.
pub fn train_scalar<E: Element>(
    classifier: &ClassifierModel<E>,
    train: &LabeledDataset,
    targets: &[f32],
    cfg: &TrainConfig,
    run_dir: Option<&Path>,
) -> Result<(ScalarModel<E>, RunRecord)> {
    let ds = phase2_setup::<E>(train, targets, cfg)?;
    let started = Instant::now();
    let mut init_rng = Rng::new(derive_seed(cfg.seed, 0x21));
    let mut model = ScalarModel::<E>::new(cfg.dataset.input_shape(), cfg.dropout_enabled, &mut init_rng)?;
    model.transfer_from(classifier)?;

    let mut dropout_rng = Rng::new(derive_seed(cfg.seed, 0x22));
    let mut opt = Adadelta::new(model.trainable_params(cfg.freeze_backbone), cfg.lr);
    let mut sched = StepLr::new(cfg.lr, cfg.lr_gamma, 1);
    let mut record = RunRecord::new(cfg);

    let epochs = cfg.phase2_epochs.unwrap_or(cfg.epochs);
    for epoch in 0..epochs {
        let lr_used = opt.lr;
        let mut shuffle_rng = Rng::new(derive_seed(cfg.seed, 0x2400 + epoch as u64));
        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        for indices in BatchIterator::new(&ds, cfg.batch_size, Some(&mut shuffle_rng), false)? {
            let (images, _) = gather_batch::<E>(&ds, &indices);
            let target: Vec<E> = indices.iter().map(|&i| E::from_f32(targets[i as usize])).collect();
            let target = Tensor::from_vec(&[indices.len(), 1], target)?;
            let predicted = model.forward(&images, true, &mut dropout_rng)?;
            let loss_t = mse(&predicted, &target)?;
            let loss = loss_t.item().as_f64();
            check_finite(loss, "scalar", epoch)?;
            loss_sum += loss * indices.len() as f64;
            seen += indices.len();
            loss_t.backward()?;
            opt.step()?;
            opt.zero_grad();
        }
        record.metrics.push(EpochMetric {
            phase: "scalar".into(),
            epoch,
            lr: lr_used,
            loss: loss_sum / seen as f64,
            accuracy: None,
        });
        opt.lr = sched.epoch_end();
        if let Some(dir) = run_dir {
            model.save(&dir.join(SCALAR_CKPT))?;
            meta_for::<E>(
                "scalar",
                cfg.dataset.input_shape(),
                cfg.dataset.num_classes(),
                cfg.dropout_enabled,
                &model.params(),
            )
            .write(&dir.join(format!("{}.meta.json", SCALAR_CKPT)))?;
            if !record.checkpoints.iter().any(|c| c == SCALAR_CKPT) {
                record.checkpoints.push(SCALAR_CKPT.into());
            }
        }
    }
    record.wall_ms = started.elapsed().as_millis();
    Ok((model, record))
}

/// Which estimators phase 2 trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variants {
    pub iqn: bool,
    pub scalar: bool,
}

pub struct PipelineOutputs<E: Element> {
    pub classifier: ClassifierModel<E>,
    pub iqn: Option<IqnModel<E>>,
    pub scalar: Option<ScalarModel<E>>,
    pub targets: Vec<f32>,
    pub records: Vec<RunRecord>,
}

/// Full pipeline: phase 1, target caching, phase 2 per variant; writes the
/// run directory (config, checkpoints, targets.bin, metrics.csv, run.json).
pub fn run_pipeline<E: Element>(
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    cfg: &TrainConfig,
    variants: Variants,
    run_dir: &Path,
    extra_config: &[(String, String)],
) -> Result<PipelineOutputs<E>> {
    cfg.validate()?;
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    write_config(&run_dir.join(CONFIG_FILE), cfg, extra_config)?;

    let (classifier, rec1) = train_classifier::<E>(train, test, cfg, Some(run_dir))?;

    let ds = match cfg.subset {
        Some(n) => train.take(n),
        None => train.clone(),
    };
    let targets = compute_target_losses(&classifier, &ds, cfg.batch_size)?;
    save_targets(&run_dir.join(TARGETS_FILE), &targets)?;

    let mut records = vec![rec1];
    let mut iqn = None;
    let mut scalar = None;
    if variants.iqn {
        let (model, rec) = train_iqn(&classifier, train, &targets, cfg, Some(run_dir))?;
        iqn = Some(model);
        records.push(rec);
    }
    if variants.scalar {
        let (model, rec) = train_scalar(&classifier, train, &targets, cfg, Some(run_dir))?;
        scalar = Some(model);
        records.push(rec);
    }

    write_metrics_csv(&run_dir.join(METRICS_FILE), &records)?;
    let run_json = serde_json::json!({
        "config": cfg,
        "wall_ms": records.iter().map(|r| r.wall_ms).sum::<u128>(),
        "checkpoints": records.iter().flat_map(|r| r.checkpoints.clone()).collect::<Vec<_>>(),
        "version": env!("CARGO_PKG_VERSION"),
    });
    std::fs::write(
        run_dir.join(RUN_FILE),
        serde_json::to_string_pretty(&run_json).expect("run record serializes"),
    )
    .map_err(|e| Error::io(&run_dir.join(RUN_FILE), e))?;

    Ok(PipelineOutputs {
        classifier,
        iqn,
        scalar,
        targets,
        records,
    })
}

fn write_config(path: &Path, cfg: &TrainConfig, extra: &[(String, String)]) -> Result<()> {
    let mut text = String::new();
    for (k, v) in cfg.as_key_values() {
        text.push_str(&format!("{} = {}\n", k, v));
    }
    for (k, v) in extra {
        text.push_str(&format!("{} = {}\n", k, v));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_metrics_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut text = String::from("phase,epoch,lr,loss,accuracy\n");
    for rec in records {
        for m in &rec.metrics {
            let acc = m.accuracy.map(|a| format_sig(a, 6)).unwrap_or_default();
            text.push_str(&format!(
                "{},{},{},{},{}\n",
                m.phase,
                m.epoch,
                format_sig(m.lr, 6),
                format_sig(m.loss, 6),
                acc
            ));
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reload the three models of a run directory (those that exist).
pub struct LoadedRun<E: Element> {
    pub classifier: ClassifierModel<E>,
    pub iqn: Option<IqnModel<E>>,
    pub scalar: Option<ScalarModel<E>>,
}

pub fn load_run<E: Element>(run_dir: &Path, cfg: &TrainConfig) -> Result<LoadedRun<E>> {
    let input = cfg.dataset.input_shape();
    let classes = cfg.dataset.num_classes();
    let ckpt = run_dir.join(CLASSIFIER_CKPT);
    if !ckpt.exists() {
        return Err(Error::Contract(format!(
            "{} not found; run the train subcommand first",
            ckpt.display()
        )));
    }
    let mut rng = Rng::new(0);
    let classifier = ClassifierModel::<E>::new(input, classes, cfg.dropout_enabled, &mut rng)?;
    classifier.load(&ckpt)?;

    let iqn_path = run_dir.join(IQN_CKPT);
    let iqn = if iqn_path.exists() {
        let model = IqnModel::<E>::new(input, cfg.dropout_enabled, &mut rng)?;
        model.load(&iqn_path)?;
        Some(model)
    } else {
        None
    };
    let scalar_path = run_dir.join(SCALAR_CKPT);
    let scalar = if scalar_path.exists() {
        let model = ScalarModel::<E>::new(input, cfg.dropout_enabled, &mut rng)?;
        model.load(&scalar_path)?;
        Some(model)
    } else {
        None
    };
    Ok(LoadedRun {
        classifier,
        iqn,
        scalar,
    })
}

/// Resolve a run directory path from a base output dir and run name.
pub fn run_dir(out_dir: &Path, name: &str) -> PathBuf {
    out_dir.join(name)
}
