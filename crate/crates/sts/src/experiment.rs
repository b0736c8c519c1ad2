//! End-to-end experiment runners shared by the command-line tool and the
//! integration tests: training runs, ablation sweeps, baseline comparisons
//! and the gradient-check report.

use crate::baselines::{gnb_accuracy, knn_accuracy, CnnBaseline, MlpBaseline, KNN_K};
use crate::config::RunConfig;
use crate::error::{Result, StsError};
use crate::gradcheck;
use crate::model::{DualStreamModel, ModelConfig};
use crate::repr::StsSequence;
use crate::synth::{generate_dataset, splitmix64, synth_topology};
use crate::train::{
    evaluate, fit, prepare_dataset, split_dataset, PreparedDataset, TrainConfig,
    TrainOutcome,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Deterministic per-purpose stream for one training seed, so that adding a
/// consumer never shifts the draws of another.
pub fn stream(seed: u64, purpose: &str) -> ChaCha8Rng {
    let mut h = splitmix64(seed);
    for b in purpose.bytes() {
        h = splitmix64(h ^ b as u64);
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Train/test index split for one seed, shared across every method so the
/// comparison is on identical data.
pub fn seed_split(data: &[StsSequence], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = stream(seed, "split");
    split_dataset(data, fraction, &mut rng)
}

/// One seed's training result.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub final_train_accuracy: f64,
    pub final_test_accuracy: f64,
    pub epochs: usize,
}

impl SeedRun {
    fn from_outcome(seed: u64, outcome: &TrainOutcome) -> Self {
        SeedRun {
            seed,
            final_train_accuracy: outcome.final_train_accuracy,
            final_test_accuracy: outcome.final_test_accuracy,
            epochs: outcome.history.len(),
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Trains one dual-stream model for one seed on a pre-generated dataset.
pub fn train_dual_stream(
    raw: &[StsSequence],
    prepared: &PreparedDataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<(DualStreamModel, TrainOutcome)> {
    let (train_idx, test_idx) = seed_split(raw, train_cfg.train_fraction, seed)?;
    let mut model = DualStreamModel::new(model_cfg.clone(), &mut stream(seed, "init"))?;
    let outcome = fit(
        &mut model,
        prepared,
        &train_idx,
        &test_idx,
        train_cfg,
        &mut stream(seed, "fit"),
    )?;
    Ok((model, outcome))
}

/// Multi-seed training report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub runs: Vec<SeedRun>,
    pub mean_test_accuracy: f64,
    pub param_count: usize,
}

/// Full training sweep over `config.seeds`. Returns the report plus the
/// last seed's model and per-epoch history (for checkpoint/CSV output).
pub fn run_training(config: &RunConfig) -> Result<(TrainReport, DualStreamModel, TrainOutcome)> {
    config.validate()?;
    let raw = generate_dataset(&config.synth)?;
    let prepared = prepare_dataset(&raw, &synth_topology(), config.model.temporal_len)?;
    let mut runs = Vec::new();
    let mut last = None;
    for &seed in &config.seeds {
        let (model, outcome) = train_dual_stream(&raw, &prepared, &config.model, &config.train, seed)?;
        runs.push(SeedRun::from_outcome(seed, &outcome));
        last = Some((model, outcome));
    }
    let (model, outcome) = last.unwrap();
    let report = TrainReport {
        mean_test_accuracy: mean(runs.iter().map(|r| r.final_test_accuracy)),
        param_count: model.param_count(),
        runs,
    };
    Ok((report, model, outcome))
}

/// The four ablation variants, in reporting order.
pub const ABLATION_VARIANTS: [&str; 4] = ["full", "no_gating", "no_structural", "no_temporal"];

/// Applies one named ablation to a model configuration.
pub fn apply_ablation(cfg: &ModelConfig, variant: &str) -> Result<ModelConfig> {
    let mut out = cfg.clone();
    match variant {
        "full" => {}
        "no_gating" | "gating" => out.enable_gating = false,
        "no_structural" | "structural" => out.enable_structural_stream = false,
        "no_temporal" | "temporal" => out.enable_temporal_stream = false,
        other => {
            return Err(StsError::Config(format!(
                "unknown ablation {other:?}; expected gating, structural or temporal"
            )))
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: String,
    pub runs: Vec<SeedRun>,
    pub mean_test_accuracy: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationReport {
    pub variants: Vec<VariantResult>,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,seed,test_accuracy,mean_test_accuracy\n");
        for v in &self.variants {
            for r in &v.runs {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    v.variant, r.seed, r.final_test_accuracy, v.mean_test_accuracy
                ));
            }
        }
        out
    }
}

/// Trains every ablation variant over every seed on the same dataset and
/// splits.
pub fn run_ablations(config: &RunConfig, variants: &[&str]) -> Result<AblationReport> {
    config.validate()?;
    let raw = generate_dataset(&config.synth)?;
    let prepared = prepare_dataset(&raw, &synth_topology(), config.model.temporal_len)?;
    let mut results = Vec::new();
    for &variant in variants {
        let model_cfg = apply_ablation(&config.model, variant)?;
        let mut runs = Vec::new();
        for &seed in &config.seeds {
            let (_, outcome) = train_dual_stream(&raw, &prepared, &model_cfg, &config.train, seed)?;
            runs.push(SeedRun::from_outcome(seed, &outcome));
        }
        results.push(VariantResult {
            variant: variant.to_string(),
            mean_test_accuracy: mean(runs.iter().map(|r| r.final_test_accuracy)),
            runs,
        });
    }
    Ok(AblationReport { variants: results })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub per_seed_test_accuracy: Vec<f64>,
    pub mean_test_accuracy: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BaselineReport {
    /// Ordered: ours, cnn, mlp, gnb, knn.
    pub methods: Vec<MethodResult>,
}

impl BaselineReport {
    pub fn mean_of(&self, method: &str) -> Option<f64> {
        self.methods
            .iter()
            .find(|m| m.method == method)
            .map(|m| m.mean_test_accuracy)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,seed_index,test_accuracy,mean_test_accuracy\n");
        for m in &self.methods {
            for (i, acc) in m.per_seed_test_accuracy.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    m.method, i, acc, m.mean_test_accuracy
                ));
            }
        }
        out
    }
}

/// Runs the dual-stream model and all four baselines over every seed with
/// identical datasets, splits and (for the trained methods) optimizer
/// settings.
pub fn run_baselines(config: &RunConfig) -> Result<BaselineReport> {
    config.validate()?;
    let raw = generate_dataset(&config.synth)?;
    let prepared = prepare_dataset(&raw, &synth_topology(), config.model.temporal_len)?;
    let mut ours = Vec::new();
    let mut cnn = Vec::new();
    let mut mlp = Vec::new();
    let mut gnb = Vec::new();
    let mut knn = Vec::new();
    for &seed in &config.seeds {
        let (train_idx, test_idx) = seed_split(&raw, config.train.train_fraction, seed)?;

        let (_, outcome) =
            train_dual_stream(&raw, &prepared, &config.model, &config.train, seed)?;
        ours.push(outcome.final_test_accuracy);

        let mut cnn_model = CnnBaseline::new(
            config.model.num_dims,
            config.model.temporal_len,
            prepared.feature_len,
            prepared.n_classes,
            &mut stream(seed, "cnn-init"),
        )?;
        fit(
            &mut cnn_model,
            &prepared,
            &train_idx,
            &test_idx,
            &config.train,
            &mut stream(seed, "cnn-fit"),
        )?;
        cnn.push(evaluate(
            &mut cnn_model,
            &prepared,
            &test_idx,
            config.train.batch_size,
        )?);

        let dim = prepared.r_tdf[0].numel();
        let mut mlp_model =
            MlpBaseline::new(dim, prepared.n_classes, &mut stream(seed, "mlp-init"))?;
        fit(
            &mut mlp_model,
            &prepared,
            &train_idx,
            &test_idx,
            &config.train,
            &mut stream(seed, "mlp-fit"),
        )?;
        mlp.push(evaluate(
            &mut mlp_model,
            &prepared,
            &test_idx,
            config.train.batch_size,
        )?);

        gnb.push(gnb_accuracy(&prepared, &train_idx, &test_idx)?);
        knn.push(knn_accuracy(&prepared, &train_idx, &test_idx, KNN_K)?);
    }
    let make = |name: &str, accs: Vec<f64>| MethodResult {
        method: name.to_string(),
        mean_test_accuracy: mean(accs.iter().copied()),
        per_seed_test_accuracy: accs,
    };
    Ok(BaselineReport {
        methods: vec![
            make("ours", ours),
            make("cnn", cnn),
            make("mlp", mlp),
            make("gnb", gnb),
            make("knn", knn),
        ],
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradcheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub checks: Vec<GradcheckEntry>,
    pub all_passed: bool,
}

/// Finite-difference verification of every operator plus the composed model
/// at a small configuration.
pub fn run_gradcheck(seed: u64) -> Result<GradcheckReport> {
    let mut checks: Vec<GradcheckEntry> = gradcheck::check_all_ops(seed)?
        .into_iter()
        .map(|c| GradcheckEntry {
            passed: c.passed(),
            name: c.name,
            max_rel_err: c.max_rel_err,
        })
        .collect();
    let model = gradcheck::check_model(&gradcheck::gradcheck_model_config(), seed)?;
    checks.push(GradcheckEntry {
        passed: model.passed(),
        name: model.name,
        max_rel_err: model.max_rel_err,
    });
    let all_passed = checks.iter().all(|c| c.passed);
    Ok(GradcheckReport { checks, all_passed })
}
