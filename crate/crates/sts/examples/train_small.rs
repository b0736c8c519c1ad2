//! Train a reduced dual-stream model on a small synthetic dataset and print
//! the per-epoch trajectory.
//!
//!     cargo run --release --example train_small

use sts::config::RunConfig;
use sts::experiment::run_training;
use sts::model::ModelConfig;
use sts::synth::SynthConfig;
use sts::train::TrainConfig;

fn main() -> sts::Result<()> {
    let config = RunConfig {
        synth: SynthConfig {
            n_classes: 4,
            instances_per_class: 12,
            temporal_len: 16,
            seed: 1,
            ..SynthConfig::default()
        },
        model: ModelConfig {
            temporal_len: 16,
            lfe_channels: 8,
            mfe_channels: 16,
            hfe_dim: 64,
            n_classes: 4,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            epochs: 15,
            batch_size: 16,
            ..TrainConfig::default()
        },
        seeds: vec![0],
    };
    let (report, model, outcome) = run_training(&config)?;
    println!("model has {} parameters", model.param_count());
    println!("epoch  train_loss  train_acc  test_acc");
    for h in &outcome.history {
        println!(
            "{:>5}  {:>10.4}  {:>9.4}  {:>8.4}",
            h.epoch, h.train_loss, h.train_accuracy, h.test_accuracy
        );
    }
    println!("mean test accuracy: {:.4}", report.mean_test_accuracy);
    Ok(())
}
