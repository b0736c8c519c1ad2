//! Acceptance gate: one test per release criterion, each printing a single
//! `criterion N (<name>): PASS/FAIL` line (run with `--nocapture` to see the
//! lines for passing criteria too).
//!
//! Criteria 4-6 share one expensive desk-scale experiment (10 classes, 60
//! instances each, 3 seeds, full model + ablations + baselines), computed
//! once behind a `OnceLock`. Run this target in an optimized build; the
//! desk-scale portion trains many networks and takes tens of minutes on one
//! core.

mod support;

use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sts::baselines::{gnb_accuracy, knn_accuracy, CnnBaseline, MlpBaseline, KNN_K};
use sts::config::RunConfig;
use sts::experiment::{
    run_ablations, run_gradcheck, seed_split, stream, train_dual_stream, AblationReport, SeedRun,
    VariantResult,
};
use sts::model::{hfe_input_dim, stream_feature_shapes, DualStreamModel, ModelConfig};
use sts::repr;
use sts::synth::{generate_dataset, synth_topology, SynthConfig};
use sts::tape::Tape;
use sts::tensor::Tensor;
use sts::train::{evaluate, fit, prepare_dataset};

fn report(criterion: usize, name: &str, passed: bool, detail: &str) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    println!("criterion {criterion} ({name}): {verdict} — {detail}");
    assert!(passed, "criterion {criterion} ({name}) failed: {detail}");
}

// ---------------------------------------------------------------------------
// shared desk-scale experiment for criteria 4-6

struct DeskResults {
    /// Full dual-stream model, one entry per seed.
    ours: Vec<SeedRun>,
    /// Longest single training run in seconds.
    max_run_secs: f64,
    epochs: usize,
    cnn_mean: f64,
    mlp_mean: f64,
    gnb_mean: f64,
    knn_mean: f64,
    ablation: AblationReport,
}

fn ours_mean(d: &DeskResults) -> f64 {
    d.ours.iter().map(|r| r.final_test_accuracy).sum::<f64>() / d.ours.len() as f64
}

fn desk_config() -> RunConfig {
    // 10 classes x 60 instances, T=32, delta=2, 70/30 stratified split,
    // seeds 0/1/2, default architecture. Test accuracy at this scale
    // plateaus within the first dozen epochs; longer schedules only push
    // training-set memorization, so 20 epochs keeps the gate affordable
    // without changing the outcome.
    let mut cfg = RunConfig::default();
    cfg.train.epochs = 20;
    cfg.seeds = vec![0, 1, 2];
    cfg
}

fn desk() -> &'static DeskResults {
    static DESK: OnceLock<DeskResults> = OnceLock::new();
    DESK.get_or_init(|| {
        let cfg = desk_config();
        let raw = generate_dataset(&cfg.synth).unwrap();
        let prepared = prepare_dataset(&raw, &synth_topology(), cfg.model.temporal_len).unwrap();

        let mut ours = Vec::new();
        let mut max_run_secs: f64 = 0.0;
        let mut cnn = Vec::new();
        let mut mlp = Vec::new();
        let mut gnb = Vec::new();
        let mut knn = Vec::new();
        for &seed in &cfg.seeds {
            let (train_idx, test_idx) = seed_split(&raw, cfg.train.train_fraction, seed).unwrap();

            let t0 = Instant::now();
            let (_, outcome) =
                train_dual_stream(&raw, &prepared, &cfg.model, &cfg.train, seed).unwrap();
            max_run_secs = max_run_secs.max(t0.elapsed().as_secs_f64());
            eprintln!(
                "[desk] seed {seed} ours: train {:.3} test {:.3} ({:.0} s)",
                outcome.final_train_accuracy,
                outcome.final_test_accuracy,
                t0.elapsed().as_secs_f64()
            );
            ours.push(SeedRun {
                seed,
                final_train_accuracy: outcome.final_train_accuracy,
                final_test_accuracy: outcome.final_test_accuracy,
                epochs: outcome.history.len(),
            });

            let mut cnn_model = CnnBaseline::new(
                cfg.model.num_dims,
                cfg.model.temporal_len,
                prepared.feature_len,
                prepared.n_classes,
                &mut stream(seed, "cnn-init"),
            )
            .unwrap();
            fit(
                &mut cnn_model,
                &prepared,
                &train_idx,
                &test_idx,
                &cfg.train,
                &mut stream(seed, "cnn-fit"),
            )
            .unwrap();
            cnn.push(evaluate(&mut cnn_model, &prepared, &test_idx, cfg.train.batch_size).unwrap());

            let dim = prepared.r_tdf[0].numel();
            let mut mlp_model =
                MlpBaseline::new(dim, prepared.n_classes, &mut stream(seed, "mlp-init")).unwrap();
            fit(
                &mut mlp_model,
                &prepared,
                &train_idx,
                &test_idx,
                &cfg.train,
                &mut stream(seed, "mlp-fit"),
            )
            .unwrap();
            mlp.push(evaluate(&mut mlp_model, &prepared, &test_idx, cfg.train.batch_size).unwrap());

            gnb.push(gnb_accuracy(&prepared, &train_idx, &test_idx).unwrap());
            knn.push(knn_accuracy(&prepared, &train_idx, &test_idx, KNN_K).unwrap());
            eprintln!(
                "[desk] seed {seed} cnn {:.3} mlp {:.3} gnb {:.3} knn {:.3}",
                cnn.last().unwrap(),
                mlp.last().unwrap(),
                gnb.last().unwrap(),
                knn.last().unwrap()
            );
        }

        // The "full" ablation variant is by construction the same
        // deterministic computation as the runs above (same dataset, splits,
        // init and optimizer streams), so it is reused instead of retrained.
        let ablated = run_ablations(&cfg, &["no_gating", "no_structural", "no_temporal"]).unwrap();
        let mut variants = vec![VariantResult {
            variant: "full".into(),
            mean_test_accuracy: ours.iter().map(|r| r.final_test_accuracy).sum::<f64>()
                / ours.len() as f64,
            runs: ours.clone(),
        }];
        variants.extend(ablated.variants);
        for v in &variants {
            eprintln!(
                "[desk] ablation {}: mean test {:.3}",
                v.variant, v.mean_test_accuracy
            );
        }

        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        DeskResults {
            ours,
            max_run_secs,
            epochs: cfg.train.epochs,
            cnn_mean: mean(&cnn),
            mlp_mean: mean(&mlp),
            gnb_mean: mean(&gnb),
            knn_mean: mean(&knn),
            ablation: AblationReport { variants },
        }
    })
}

// ---------------------------------------------------------------------------
// criteria

#[test]
fn criterion_1_gradient_correctness() {
    let t0 = Instant::now();
    let gc = run_gradcheck(13).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let worst = gc
        .checks
        .iter()
        .map(|c| c.max_rel_err)
        .fold(0.0_f64, f64::max);
    report(
        1,
        "gradient correctness",
        gc.all_passed && secs < 60.0,
        &format!(
            "{} checks (ops + full model), worst rel err {worst:.2e}, {secs:.1} s (limit 60 s)",
            gc.checks.len()
        ),
    );
}

#[test]
fn criterion_2_oracle_equivalence() {
    let conv = support::conv_trials(120, 101);
    let pool = support::pool_trials(120, 202);
    let fc = support::linear_trials(120, 303);
    report(
        2,
        "oracle equivalence",
        conv <= 1e-10 && pool <= 1e-10 && fc <= 1e-10,
        &format!(
            "120 random shapes each: conv {conv:.2e}, maxpool {pool:.2e}, fc {fc:.2e} (limit 1e-10)"
        ),
    );
}

#[test]
fn criterion_3_glu_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let (c, h, w) = (3, 4, 5);
    let per = c * h * w;
    let a = Tensor::uniform(&[2, c, h, w], 2.0, &mut rng);
    let b = Tensor::uniform(&[2, c, h, w], 2.0, &mut rng);
    let mut x = Tensor::zeros(&[2, 2 * c, h, w]);
    for batch in 0..2 {
        x.data_mut()[batch * 2 * per..batch * 2 * per + per]
            .copy_from_slice(&a.data()[batch * per..(batch + 1) * per]);
        x.data_mut()[batch * 2 * per + per..(batch + 1) * 2 * per]
            .copy_from_slice(&b.data()[batch * per..(batch + 1) * per]);
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = tape.glu(xv, 1).unwrap();
    let definition_err = tape
        .value(out)
        .data()
        .iter()
        .zip(a.data().iter().zip(b.data()))
        .map(|(o, (av, bv))| (o - av * (1.0 / (1.0 + (-bv).exp()))).abs())
        .fold(0.0_f64, f64::max);

    // zero gate: sigmoid(0) = 1/2 exactly
    let mut xz = x;
    for batch in 0..2 {
        xz.data_mut()[batch * 2 * per + per..(batch + 1) * 2 * per].fill(0.0);
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(xz);
    let out = tape.glu(xv, 1).unwrap();
    let half_err = tape
        .value(out)
        .data()
        .iter()
        .zip(a.data())
        .map(|(o, av)| (o - av / 2.0).abs())
        .fold(0.0_f64, f64::max);

    // gating disabled: the gating stage disappears entirely, so the range
    // features reach the classifier head unchanged (no gate parameters, HFE
    // input width equals the raw feature size; with gating enabled the widths
    // are the same because the 1x1 expansion is halved back by the unit)
    let mut cfg = ModelConfig {
        n_classes: 3,
        hfe_dim: 8,
        lfe_channels: 4,
        mfe_channels: 8,
        temporal_len: 8,
        feature_len: 6,
        num_dims: 3,
        ..ModelConfig::default()
    };
    cfg.enable_gating = false;
    let model = DualStreamModel::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let no_gate_params = model
        .named_parameters()
        .iter()
        .all(|(n, _)| !n.contains(".gate."));
    let flat = |h: usize| {
        let (s, m, l) = stream_feature_shapes(&cfg, h, cfg.feature_len);
        [s, m, l].iter().map(|d| d[0] * d[1] * d[2]).sum::<usize>()
    };
    let raw_dim = flat(cfg.temporal_len) + flat(2 * cfg.num_dims - 1);
    let identity_width = hfe_input_dim(&cfg) == raw_dim;

    report(
        3,
        "gated linear unit contract",
        definition_err <= 1e-12 && half_err == 0.0 && no_gate_params && identity_width,
        &format!(
            "A*sigmoid(B) err {definition_err:.1e}, zero-gate err {half_err:.1e}, \
             disabled: gate-free params {no_gate_params}, pass-through width {identity_width}"
        ),
    );
}

#[test]
fn criterion_4_desk_scale_accuracy() {
    let d = desk();
    let mean = ours_mean(d);
    let per_seed: Vec<String> = d
        .ours
        .iter()
        .map(|r| format!("{:.3}", r.final_test_accuracy))
        .collect();
    report(
        4,
        "desk-scale benchmark accuracy",
        mean >= 0.85 && d.epochs <= 100 && d.max_run_secs <= 1800.0,
        &format!(
            "mean test accuracy {mean:.3} over seeds [{}] (target 0.85), {} epochs, \
             longest run {:.0} s (limit 1800 s)",
            per_seed.join(", "),
            d.epochs,
            d.max_run_secs
        ),
    );
}

#[test]
fn criterion_5_baseline_ordering() {
    let d = desk();
    let ours = ours_mean(d);
    let chain = [
        ("ours", ours),
        ("cnn", d.cnn_mean),
        ("mlp", d.mlp_mean),
        ("gnb", d.gnb_mean),
        ("knn", d.knn_mean),
    ];
    let ordered = chain.windows(2).all(|w| w[0].1 - w[1].1 >= 0.02);
    let shown: Vec<String> = chain
        .iter()
        .map(|(n, v)| format!("{n} {v:.3}"))
        .collect();
    report(
        5,
        "baseline ordering",
        ordered,
        &format!(
            "{} (each step must lead by >= 0.02)",
            shown.join(" > ")
        ),
    );
}

#[test]
fn criterion_6_ablation_direction() {
    let d = desk();
    let full = d
        .ablation
        .variants
        .iter()
        .find(|v| v.variant == "full")
        .unwrap()
        .mean_test_accuracy;
    let best_ablated = d
        .ablation
        .variants
        .iter()
        .filter(|v| v.variant != "full")
        .map(|v| v.mean_test_accuracy)
        .fold(f64::NEG_INFINITY, f64::max);
    let csv = d.ablation.to_csv();
    let csv_complete = ["full", "no_gating", "no_structural", "no_temporal"]
        .iter()
        .all(|v| csv.lines().any(|l| l.starts_with(&format!("{v},"))));
    let shown: Vec<String> = d
        .ablation
        .variants
        .iter()
        .map(|v| format!("{} {:.3}", v.variant, v.mean_test_accuracy))
        .collect();
    report(
        6,
        "ablation direction",
        full >= best_ablated - 0.02 && csv_complete,
        &format!(
            "{}; full must reach best ablation - 0.02; csv has all variants: {csv_complete}",
            shown.join(", ")
        ),
    );
}

#[test]
fn criterion_7_determinism() {
    let dir = tempfile::tempdir().unwrap();

    // dataset files: full-size generation twice, compared byte for byte
    let synth_cfg = dir.path().join("synth.json");
    let mut cfg = RunConfig::default();
    cfg.train.epochs = 2;
    cfg.save(&synth_cfg).unwrap();
    for out in ["a", "b"] {
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_sts"))
            .args(["synth", "--config"])
            .arg(&synth_cfg)
            .arg("--out")
            .arg(dir.path().join(out))
            .status()
            .unwrap();
        assert!(status.success());
    }
    let bytes_a = std::fs::read(dir.path().join("a/dataset.jsonl")).unwrap();
    let bytes_b = std::fs::read(dir.path().join("b/dataset.jsonl")).unwrap();
    let datasets_identical = !bytes_a.is_empty() && bytes_a == bytes_b;

    // training reports: small run twice, accuracies compared to 1e-12
    let train_cfg = dir.path().join("train.json");
    let mut small = RunConfig::default();
    small.synth = SynthConfig {
        n_classes: 3,
        instances_per_class: 8,
        temporal_len: 12,
        ..SynthConfig::default()
    };
    small.model.n_classes = 3;
    small.model.temporal_len = 12;
    small.model.lfe_channels = 4;
    small.model.mfe_channels = 8;
    small.model.hfe_dim = 16;
    small.train.epochs = 2;
    small.seeds = vec![0];
    small.save(&train_cfg).unwrap();
    let mut reports = Vec::new();
    for out in ["t1", "t2"] {
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_sts"))
            .args(["train", "--config"])
            .arg(&train_cfg)
            .arg("--out")
            .arg(dir.path().join(out))
            .status()
            .unwrap();
        assert!(status.success());
        let text =
            std::fs::read_to_string(dir.path().join(out).join("train_report.json")).unwrap();
        reports.push(serde_json::from_str::<serde_json::Value>(&text).unwrap());
    }
    fn values_close(a: &serde_json::Value, b: &serde_json::Value) -> bool {
        match (a, b) {
            (serde_json::Value::Number(x), serde_json::Value::Number(y)) => {
                (x.as_f64().unwrap() - y.as_f64().unwrap()).abs() <= 1e-12
            }
            (serde_json::Value::Array(x), serde_json::Value::Array(y)) => {
                x.len() == y.len() && x.iter().zip(y).all(|(u, v)| values_close(u, v))
            }
            (serde_json::Value::Object(x), serde_json::Value::Object(y)) => {
                x.len() == y.len()
                    && x.iter().all(|(k, u)| y.get(k).is_some_and(|v| values_close(u, v)))
            }
            _ => a == b,
        }
    }
    let reports_identical = values_close(&reports[0], &reports[1]);
    let acc_delta = (reports[0]["runs"][0]["final_test_accuracy"].as_f64().unwrap()
        - reports[1]["runs"][0]["final_test_accuracy"].as_f64().unwrap())
    .abs();

    report(
        7,
        "determinism",
        datasets_identical && reports_identical && acc_delta == 0.0,
        &format!(
            "dataset files byte-identical: {datasets_identical} ({} bytes), \
             reports value-identical to 1e-12: {reports_identical}, accuracy delta {acc_delta:e}",
            bytes_a.len()
        ),
    );
}

#[test]
fn criterion_8_representation_invariants() {
    let topo = synth_topology();
    let data = generate_dataset(&SynthConfig {
        n_classes: 3,
        instances_per_class: 5,
        temporal_len: 12,
        seed: 55,
        ..SynthConfig::default()
    })
    .unwrap();
    let l = topo.coord_dim();
    let p = topo.angle_feature_count();

    let mut ranges_ok = true;
    for seq in &data {
        for i in 0..seq.num_frames() {
            for j in 0..seq.num_dims() {
                let h = repr::feature_vector(seq, i, j, &topo);
                let angles = &h[l..l + p];
                let distance = h[h.len() - 1];
                ranges_ok &= angles.iter().all(|&a| (0.0..=1.0).contains(&a));
                ranges_ok &= distance >= 0.0;
            }
        }
    }

    // a static sequence (first frame repeated) must have all-zero offsets
    let frame0 = data[0].frames()[..topo.num_dims() * l].to_vec();
    let static_seq = sts::repr::StsSequence::new(
        0,
        6,
        topo.num_dims(),
        l,
        frame0.repeat(6),
    )
    .unwrap();
    let mut static_ok = true;
    for i in 0..6 {
        for j in 0..topo.num_dims() {
            let h = repr::feature_vector(&static_seq, i, j, &topo);
            static_ok &= h[l + p..l + p + l].iter().all(|&v| v == 0.0);
        }
    }

    // rigid translation may move only the position block
    let shift = [1.7, -0.9];
    let seq = &data[1];
    let moved_frames: Vec<f64> = seq
        .frames()
        .iter()
        .enumerate()
        .map(|(idx, &v)| v + shift[idx % l])
        .collect();
    let moved = sts::repr::StsSequence::new(
        seq.label,
        seq.num_frames(),
        seq.num_dims(),
        l,
        moved_frames,
    )
    .unwrap();
    let mut translation_ok = true;
    let mut worst_nonposition: f64 = 0.0;
    for i in 0..seq.num_frames() {
        for j in 0..seq.num_dims() {
            let a = repr::feature_vector(seq, i, j, &topo);
            let b = repr::feature_vector(&moved, i, j, &topo);
            for (k, (x, y)) in a.iter().zip(&b).enumerate() {
                if k < l {
                    translation_ok &= (y - x - shift[k]).abs() <= 1e-9;
                } else {
                    worst_nonposition = worst_nonposition.max((y - x).abs());
                }
            }
        }
    }
    translation_ok &= worst_nonposition <= 1e-12;

    // bidirectional traversal: 2m-1 entries, consecutive ones tree-adjacent
    let tour = topo.euler_tour();
    let traversal_ok = tour.len() == 2 * topo.num_dims() - 1
        && tour.windows(2).all(|w| topo.are_adjacent(w[0], w[1]));

    report(
        8,
        "representation invariants",
        ranges_ok && static_ok && translation_ok && traversal_ok,
        &format!(
            "angle/distance ranges {ranges_ok}, static offsets zero {static_ok}, \
             translation leaks {worst_nonposition:.1e} outside position block (limit 1e-12), \
             traversal {traversal_ok}"
        ),
    );
}

#[test]
fn criterion_9_shapes() {
    let cfg = ModelConfig::default(); // m=7, T=32, f=8
    let topo = synth_topology();

    // augmented tensors
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let frames: Vec<f64> = (0..32 * 7 * 2).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let seq = sts::repr::StsSequence::new(0, 32, 7, 2, frames).unwrap();
    let pair = repr::assemble(&seq, &topo).unwrap();
    let tensors_ok = pair.r_tdf.shape() == [7, 32, 8] && pair.r_dtf.shape() == [32, 13, 8];

    // short/medium/long range maps at 1x, 1/2, 1/4 spatial resolution
    let (s, m, l) = stream_feature_shapes(&cfg, cfg.temporal_len, cfg.feature_len);
    let resolutions_ok = s[1..] == [32, 8] && m[1..] == [16, 4] && l[1..] == [8, 2];

    // classifier head: 500-wide high-level features, one logit per class
    let mut model = DualStreamModel::new(cfg.clone(), &mut rng).unwrap();
    let hfe_ok = model
        .named_parameters()
        .iter()
        .any(|(n, t)| n == "hfe.weight" && t.shape() == [hfe_input_dim(&cfg), 500]);
    let r_tdf = Tensor::uniform(&[2, 7, 32, 8], 1.0, &mut rng);
    let r_dtf = Tensor::uniform(&[2, 32, 13, 8], 1.0, &mut rng);
    let mut tape = Tape::new();
    let (logits, _) = model.forward(&mut tape, &r_tdf, &r_dtf, true).unwrap();
    let logits_ok = tape.value(logits).shape() == [2, cfg.n_classes];

    report(
        9,
        "tensor and layer shapes",
        tensors_ok && resolutions_ok && hfe_ok && logits_ok,
        &format!(
            "R_tdf/R_dtf {tensors_ok}, S/M/L resolutions {resolutions_ok}, \
             hfe width 500 over {} inputs: {hfe_ok}, logits (2, {}): {logits_ok}",
            hfe_input_dim(&cfg),
            cfg.n_classes
        ),
    );
}
