//! Trains one model under one scheme on the default synthetic dataset.
//!
//! `cargo run --release -p eegbench --example individual -- [model] [scheme] [epochs]`

use eegbench::dataio::{generate_synthetic, split_scheme, Scheme, SyntheticSpec};
use eegbench::models::{ModelConfig, ModelName};
use eegbench::trainer::{train, TrainConfig, TrainControl};

fn main() -> eegbench::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let model: ModelName = args.first().map_or("sccnet", String::as_str).parse()?;
    let scheme: Scheme = args.get(1).map_or("individual", String::as_str).parse()?;
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(100);

    let spec = SyntheticSpec::default();
    let sets = generate_synthetic(&spec, 7)?;
    let split = split_scheme(&sets, scheme, "1", 0.125, 0)?;
    let config = ModelConfig::new(model, spec.channels, spec.timepoints, spec.classes, spec.fs);
    let train_config = TrainConfig { epochs, fine_tune_epochs: epochs / 5, ..TrainConfig::default() };
    let (_, record) = train(&sets, &split, &config, &train_config, &TrainControl::default())?;
    for m in record.history.iter().step_by(10) {
        println!(
            "epoch {:>4} loss {:.4} acc {:.3} val {:.3}",
            m.epoch, m.train_loss, m.train_accuracy, m.val_accuracy
        );
    }
    let test = record.test.expect("test evaluation");
    println!(
        "{model} {scheme}: test accuracy {:.3} kappa {:.3} in {:.1}s (best epoch {:?})",
        test.accuracy, test.kappa, record.train_seconds, record.best_epoch
    );
    Ok(())
}
