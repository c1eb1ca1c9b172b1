use std::time::Instant;

use lqiq_core::data::synthetic::make_synthetic_digits;
use lqiq_core::data::{make_zeros_probe, normalize, Split, MNIST_MEAN, MNIST_STD};
use lqiq_core::train::{
    classifier_predictions, compute_target_losses, evaluate_accuracy, train_classifier, train_iqn,
    DatasetKind, TrainConfig,
};
use lqiq_core::uncertainty::{compute_stats, estimate_means, filter_by_threshold};

#[test]
fn timing_scratch() {
    let t0 = Instant::now();
    let raw = make_synthetic_digits(3000, 3, Split::Train).unwrap();
    let ds = normalize(&raw, &MNIST_MEAN, &MNIST_STD).unwrap();
    let mut raw_test = make_synthetic_digits(1000, 99, Split::Train).unwrap();
    raw_test.split = Split::Test;
    let test = normalize(&raw_test, &MNIST_MEAN, &MNIST_STD).unwrap();

    let mut cfg = TrainConfig::new(DatasetKind::Mnist, 7);
    cfg.epochs = 2;
    let (model, _) = train_classifier::<f32>(&ds, None, &cfg, None).unwrap();
    let acc = evaluate_accuracy(&model, &test, 64).unwrap();
    println!("classifier acc {:.4} ({:?})", acc, t0.elapsed());

    let targets = compute_target_losses(&model, &ds, 64).unwrap();
    println!(
        "targets: mean {:.4} max {:.4}",
        targets.iter().sum::<f32>() / targets.len() as f32,
        targets.iter().cloned().fold(0.0f32, f32::max)
    );

    let (iqn, rec) = train_iqn(&model, &ds, &targets, &cfg, None).unwrap();
    for m in &rec.metrics {
        println!("iqn epoch {} loss {:.5}", m.epoch, m.loss);
    }

    let est: Vec<f64> = estimate_means(&iqn, &test, 256, 1234, 64)
        .unwrap()
        .into_iter()
        .map(|(m, _)| m)
        .collect();
    let probe = make_zeros_probe(100, &test).unwrap();
    let zeros: Vec<f64> = estimate_means(&iqn, &probe, 256, 777, 64)
        .unwrap()
        .into_iter()
        .map(|(m, _)| m)
        .collect();
    let preds = classifier_predictions(&model, &test, 64).unwrap();
    let stats = compute_stats(&est, &preds, &test.labels, Some(&zeros)).unwrap();
    println!("stats: {:?}", stats);
    for n in [0.0, 0.5, 1.0] {
        let r = filter_by_threshold(&est, &preds, &test.labels, n).unwrap();
        println!(
            "N={}: kept {} acc_kept {:?} acc_all {:.4}",
            n, r.kept_count, r.accuracy_kept, r.accuracy_all
        );
    }
    println!("total {:?}", t0.elapsed());
}
