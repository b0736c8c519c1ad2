//! Compare the dual-stream model with the four reference classifiers on a
//! small synthetic task, all methods seeing identical splits.
//!
//!     cargo run --release --example compare_baselines

use sts::config::RunConfig;
use sts::experiment::run_baselines;
use sts::model::ModelConfig;
use sts::synth::SynthConfig;
use sts::train::TrainConfig;

fn main() -> sts::Result<()> {
    let config = RunConfig {
        synth: SynthConfig {
            n_classes: 4,
            instances_per_class: 12,
            temporal_len: 16,
            seed: 5,
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
        seeds: vec![0, 1],
    };
    let report = run_baselines(&config)?;
    println!("method  per-seed accuracies            mean");
    for m in &report.methods {
        println!(
            "{:<6}  {:<28}  {:.4}",
            m.method,
            format!("{:.4?}", m.per_seed_test_accuracy),
            m.mean_test_accuracy
        );
    }
    Ok(())
}
