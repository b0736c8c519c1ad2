//! Command-line harness: synthesize datasets, train and ablate the
//! dual-stream model, compare baselines and verify gradients.
//!
//! Exit codes: 0 on success, 1 when a verification check fails, 2 on usage,
//! configuration or I/O errors.

use clap::{Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use sts::config::RunConfig;
use sts::dataset::save_dataset;
use sts::experiment::{
    run_ablations, run_baselines, run_gradcheck, run_training, ABLATION_VARIANTS,
};
use sts::synth::{generate_dataset, synth_topology};
use sts::train::history_csv;

#[derive(Parser)]
#[command(name = "sts", version, about = "Structured time series classification toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration JSON; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the generator seed (synth) or the training seed list
    /// (train/ablate/baselines) or the probe seed (gradcheck).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Restricts `ablate` to one variant (plus the full model).
    #[arg(long, global = true, value_enum)]
    ablate: Option<AblationArg>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write it as JSON lines.
    Synth,
    /// Train the dual-stream model over the configured seeds.
    Train,
    /// Train the full model against its ablation variants.
    Ablate,
    /// Compare the model with the KNN, naive Bayes, MLP and CNN baselines.
    Baselines,
    /// Check every operator and the composed model against finite differences.
    Gradcheck,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationArg {
    Gating,
    Structural,
    Temporal,
}

impl AblationArg {
    fn variant(self) -> &'static str {
        match self {
            AblationArg::Gating => "no_gating",
            AblationArg::Structural => "no_structural",
            AblationArg::Temporal => "no_temporal",
        }
    }
}

fn load_config(cli: &Cli) -> sts::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.synth.seed = seed;
        cfg.seeds = vec![seed];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> sts::Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| sts::StsError::Parse(format!("serialize: {e}")))?;
    sts::write_atomic(path, text.as_bytes())
}

fn run(cli: &Cli) -> sts::Result<bool> {
    // accepted for interface compatibility; execution is single-threaded
    if let Ok(v) = std::env::var("STS_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| sts::StsError::Config(format!("STS_THREADS must be a number, got {v:?}")))?;
        if n == 0 {
            return Err(sts::StsError::Config("STS_THREADS must be >= 1".into()));
        }
    }
    std::fs::create_dir_all(&cli.out)?;
    let cfg = load_config(cli)?;
    match cli.command {
        Command::Synth => {
            let data = generate_dataset(&cfg.synth)?;
            let path = cli.out.join("dataset.jsonl");
            save_dataset(&path, &synth_topology(), &data)?;
            println!(
                "wrote {} sequences ({} classes x {} instances, T={}) to {}",
                data.len(),
                cfg.synth.n_classes,
                cfg.synth.instances_per_class,
                cfg.synth.temporal_len,
                path.display()
            );
        }
        Command::Train => {
            let (report, model, outcome) = run_training(&cfg)?;
            sts::write_atomic(
                &cli.out.join("history.csv"),
                history_csv(&outcome.history).as_bytes(),
            )?;
            write_json(&cli.out.join("train_report.json"), &report)?;
            model.to_checkpoint().save(&cli.out.join("checkpoint.json"))?;
            for r in &report.runs {
                println!(
                    "seed {}: train accuracy {:.4}, test accuracy {:.4} after {} epochs",
                    r.seed, r.final_train_accuracy, r.final_test_accuracy, r.epochs
                );
            }
            println!(
                "mean test accuracy {:.4} over {} seeds ({} parameters)",
                report.mean_test_accuracy,
                report.runs.len(),
                report.param_count
            );
        }
        Command::Ablate => {
            let variants: Vec<&str> = match cli.ablate {
                Some(a) => vec!["full", a.variant()],
                None => ABLATION_VARIANTS.to_vec(),
            };
            let report = run_ablations(&cfg, &variants)?;
            sts::write_atomic(&cli.out.join("ablation.csv"), report.to_csv().as_bytes())?;
            write_json(&cli.out.join("ablation_report.json"), &report)?;
            for v in &report.variants {
                println!("{}: mean test accuracy {:.4}", v.variant, v.mean_test_accuracy);
            }
        }
        Command::Baselines => {
            let report = run_baselines(&cfg)?;
            sts::write_atomic(&cli.out.join("baselines.csv"), report.to_csv().as_bytes())?;
            write_json(&cli.out.join("baselines_report.json"), &report)?;
            for m in &report.methods {
                println!("{}: mean test accuracy {:.4}", m.method, m.mean_test_accuracy);
            }
        }
        Command::Gradcheck => {
            let report = run_gradcheck(cli.seed.unwrap_or(13))?;
            write_json(&cli.out.join("gradcheck.json"), &report)?;
            for c in &report.checks {
                println!(
                    "{}: max relative error {:.3e} [{}]",
                    c.name,
                    c.max_rel_err,
                    if c.passed { "pass" } else { "FAIL" }
                );
            }
            if !report.all_passed {
                return Ok(false);
            }
            println!("all gradient checks passed");
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
