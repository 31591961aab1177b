// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance gate. Each test prints one `[PASS]`/`[FAIL]` line for its
//! criterion before asserting. Run with `--nocapture` to see the lines.

use std::fs;
use std::time::{Duration, Instant};

use cogmap::activation_store::{
    decode_header, read_dataset, split_dataset, write_dataset, ActivationDataset, ActivationRecord,
    Split, HEADER_LEN,
};
use cogmap::decomposition::{
    compute_deltas, layer_count, AnalysisWindow, Timepoint, TimepointCapture,
};
use cogmap::error::StoreError;
use cogmap::pipeline::{load_pipeline_report, run_all, run_stage, PipelineConfig, Stage};
use cogmap::probe::{
    adamw_step, auc_roc, cosine_lr, f1_score, logistic_loss_and_grad, train_suite, AdamState,
    AdamWParams, TrainConfig,
};
use cogmap::reference::reference_figures;
use cogmap::steering::{direction_from_differences, PositionPolicy, SteeringMode, SteeringVector};
use cogmap::taxonomy::{builtin_taxonomy, gen_synthetic_activations, SyntheticSpec};
use cogmap::tom_eval::{compare_conditions, true_answer_at_a, ConditionTag, EvalResult};
use cogmap::toy_lm::{ByteTokenizer, Steering, ToyLM, ToyLMConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Pinned tolerances and budgets.
const ADAMW_TOL: f64 = 1e-10;
const FD_REL_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;
const OPTIMIZER_BUDGET: Duration = Duration::from_secs(5);
const METRIC_BUDGET: Duration = Duration::from_secs(10);
const PROBE_AUC_MIN: f64 = 0.99;
const NULL_AUC_RANGE: (f64, f64) = (0.45, 0.55);
const SUITE_BUDGET: Duration = Duration::from_secs(60);
const PCA_COSINE_MIN: f64 = 0.999;
const POSITION_RANGE: (f64, f64) = (0.48, 0.52);
const CATEGORY_TOL: f64 = 1e-9;
const PIPELINE_BUDGET: Duration = Duration::from_secs(300);

fn verdict(criterion: &str, pass: bool, detail: &str) -> bool {
    println!(
        "[{}] {criterion}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[test]
fn optimizer_correctness() {
    let start = Instant::now();

    // single step from w=1, g=0.5 with the default hyperparameters:
    // m_hat = g, v_hat = g^2, so w' = w - lr*wd*w - lr * g / (|g| + eps)
    let params = AdamWParams::default();
    let (lr, g) = (1e-3, 0.5);
    let mut w = [1.0];
    let mut state = AdamState::new(1);
    adamw_step(&mut w, &[g], &mut state, &params, lr).unwrap();
    let expected = 1.0 - lr * params.weight_decay * 1.0 - lr * g / (g.abs() + params.epsilon);
    let single_ok = (w[0] - expected).abs() <= ADAMW_TOL && (w[0] - 0.99899).abs() < 5e-6;

    // analytic gradient against central differences of the loss
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let dim = rng.random_range(1..=6);
        let n = rng.random_range(1..=8);
        let weights: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bias = rng.random_range(-1.0..1.0);
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let ys: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let rows: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let (_, grad_w, grad_b) = logistic_loss_and_grad(&weights, bias, &rows, &ys);
        let loss = |w: &[f64], b: f64| logistic_loss_and_grad(w, b, &rows, &ys).0;
        for j in 0..dim {
            let (mut up, mut down) = (weights.clone(), weights.clone());
            up[j] += FD_STEP;
            down[j] -= FD_STEP;
            let fd = (loss(&up, bias) - loss(&down, bias)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(grad_w[j], fd));
        }
        let fd =
            (loss(&weights, bias + FD_STEP) - loss(&weights, bias - FD_STEP)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(grad_b, fd));
    }
    let elapsed = start.elapsed();
    let pass = single_ok && worst < FD_REL_TOL && elapsed < OPTIMIZER_BUDGET;
    assert!(verdict(
        "optimizer correctness",
        pass,
        &format!(
            "w'={:.12} (expected {expected:.12}), worst FD rel err {worst:.2e} < {FD_REL_TOL:e}, {elapsed:.2?}",
            w[0]
        )
    ));
}

fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let (mut p, mut n) = (0usize, 0usize);
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            n += 1;
            continue;
        }
        p += 1;
        for (j, &lj) in labels.iter().enumerate() {
            if !lj {
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / (p * n) as f64
}

#[test]
fn metric_oracles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut auc_mismatches = 0;
    let mut f1_mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=50);
        // coarse integer scores force plenty of ties
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..6) as f64 / 2.0)
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        if auc_roc(&scores, &labels).unwrap() != pairwise_auc(&scores, &labels) {
            auc_mismatches += 1;
        }

        let predictions: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let (mut tp, mut fp, mut fn_) = (0u32, 0u32, 0u32);
        for (&p, &l) in predictions.iter().zip(&labels) {
            match (p, l) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let oracle = if tp == 0 {
            0.0
        } else {
            let precision_num = tp;
            let recall_num = tp;
            // harmonic mean of tp/(tp+fp) and tp/(tp+fn) as one exact ratio
            let num = 2 * precision_num * recall_num;
            let den = precision_num * (tp + fn_) + recall_num * (tp + fp);
            f64::from(num) / f64::from(den)
        };
        if f1_score(&predictions, &labels).unwrap() != oracle {
            f1_mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = auc_mismatches == 0 && f1_mismatches == 0 && elapsed < METRIC_BUDGET;
    assert!(verdict(
        "metric oracles",
        pass,
        &format!("AUC mismatches {auc_mismatches}/1000, F1 mismatches {f1_mismatches}/1000, {elapsed:.2?}")
    ));
}

#[test]
fn schedule() {
    let (hi, lo, total) = (1e-3, 1e-5, 999);
    let lr = |t| cosine_lr(t, total, hi, lo).unwrap();
    let endpoints = lr(0) == hi && lr(total) == lo;
    let sweep: Vec<f64> = (0..=total).map(lr).collect();
    let violations = sweep.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(verdict(
        "schedule",
        endpoints && violations == 0,
        &format!("endpoints exact: {endpoints}, increases over 1000 points: {violations}")
    ));
}

fn gaussian(n_actions: usize, n_per_class: usize, separation: f64, seed: u64) -> ActivationDataset {
    let spec = SyntheticSpec {
        n_per_class,
        hidden_dim: 32,
        n_layers: 1,
        class_separation: separation,
        seed,
    };
    let data = gen_synthetic_activations(&spec, &builtin_taxonomy()[..n_actions]).unwrap();
    split_dataset(&data, 0.8, seed).unwrap()
}

fn suite_aucs(data: &ActivationDataset, n_actions: usize) -> Vec<f64> {
    let names: Vec<String> = builtin_taxonomy()[..n_actions]
        .iter()
        .map(|a| a.name.clone())
        .collect();
    let suite = train_suite(data, &names, &[0], &TrainConfig::default()).unwrap();
    assert!(suite.probes().iter().all(|p| p.trained_epochs <= 100));
    suite.probes().iter().map(|p| p.val_auc).collect()
}

#[test]
fn probe_learning() {
    let start = Instant::now();
    let separable = suite_aucs(&gaussian(45, 200, 4.0, 1), 45);
    let elapsed = start.elapsed();
    let min = separable.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = separable.iter().sum::<f64>() / separable.len() as f64;
    let above = separable.iter().filter(|&&a| a >= PROBE_AUC_MIN).count();

    // null case: the 45-probe suite mean, plus a single probe on a large
    // two-class set where sampling noise is well inside the band
    let null_suite = suite_aucs(&gaussian(45, 200, 0.0, 2), 45);
    let null_mean = null_suite.iter().sum::<f64>() / null_suite.len() as f64;
    let null_pair = suite_aucs(&gaussian(2, 5000, 0.0, 3), 1)[0];
    let in_band = |a: f64| a >= NULL_AUC_RANGE.0 && a <= NULL_AUC_RANGE.1;
    let null_ok = in_band(null_mean) && in_band(null_pair);

    let pass = min >= PROBE_AUC_MIN && null_ok && elapsed < SUITE_BUDGET;
    let detail = format!(
        "separation 4: min val AUC {min:.4}, mean {mean:.4}, {above}/45 >= {PROBE_AUC_MIN}; \
         separation 0: suite mean {null_mean:.4}, two-class {null_pair:.4} (band {:?}); suite {elapsed:.2?}",
        NULL_AUC_RANGE
    );
    assert!(verdict("probe learning", pass, &detail));
}

fn toy(n_layers: usize) -> ToyLM {
    ToyLM::new(ToyLMConfig {
        n_layers,
        hidden_dim: 16,
        n_heads: 4,
        init_seed: 21,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn steering_algebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dim = 16;

    // constant clusters: every pair has the same difference
    let p: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
    let n: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
    let diff: Vec<f64> = p.iter().zip(&n).map(|(a, b)| a - b).collect();
    let diffs = vec![diff.clone(); 25];
    let constant_ok = direction_from_differences(&diffs, SteeringMode::MeanDiff).unwrap() == diff;

    // planted rank-1 spread along u around a mean with a positive u component
    let mut u: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    u.iter_mut().for_each(|x| *x /= norm);
    let base: Vec<f64> = (0..dim)
        .map(|i| 0.3 * u[i] + if i == 0 { 0.2 } else { 0.0 })
        .collect();
    let planted: Vec<Vec<f64>> = (0..200)
        .map(|_| {
            let s: f64 = rng.random_range(-4.0..4.0);
            (0..dim)
                .map(|i| base[i] + s * u[i] + rng.random_range(-1e-3..1e-3))
                .collect()
        })
        .collect();
    let pc = direction_from_differences(&planted, SteeringMode::PcaTop1).unwrap();
    let pc_norm = pc.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cosine = pc.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() / pc_norm;

    // multiplier 0 and exact injection on the toy model
    let model = toy(4);
    let tokens = ByteTokenizer.encode("Story: the jar holds sugar. Answer:");
    let direction: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let layer = 2;
    let vectors = vec![SteeringVector {
        layer,
        direction: direction.clone(),
        mode: SteeringMode::MeanDiff,
        n_pairs: 1,
    }];
    let base_trace = model.forward(&tokens, None).unwrap();
    let zero = model
        .forward(
            &tokens,
            Some(&Steering {
                vectors: &vectors,
                multiplier: 0.0,
                position: PositionPolicy::AllPositions,
            }),
        )
        .unwrap();
    let identity_ok = zero.logits == base_trace.logits && zero.residuals == base_trace.residuals;
    let alpha = 2.5;
    let steered = model
        .forward(
            &tokens,
            Some(&Steering {
                vectors: &vectors,
                multiplier: alpha,
                position: PositionPolicy::AllPositions,
            }),
        )
        .unwrap();
    let expected: Vec<f64> = base_trace.residuals[layer]
        .iter()
        .zip(&direction)
        .map(|(r, d)| r + alpha * d)
        .collect();
    let injection_ok = steered.residuals[layer] == expected
        && steered.residuals[..layer] == base_trace.residuals[..layer]
        && steered.injected == vec![(layer, alpha)];

    let pass = constant_ok && cosine >= PCA_COSINE_MIN && identity_ok && injection_ok;
    assert!(verdict(
        "steering algebra",
        pass,
        &format!(
            "mean_diff == p - n: {constant_ok}, pca cosine {cosine:.6}, multiplier-0 identical: {identity_ok}, \
             injection exact: {injection_ok}"
        )
    ));
}

#[test]
fn evaluation_protocol() {
    let at_a = (0..10_000)
        .filter(|i| true_answer_at_a(&format!("item-{i:05}"), 2024))
        .count();
    let share = at_a as f64 / 10_000.0;
    let fair = share >= POSITION_RANGE.0 && share <= POSITION_RANGE.1;

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut identity_failures = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..=60);
        let mut base = Vec::with_capacity(n);
        let mut steer = Vec::with_capacity(n);
        for i in 0..n {
            let id = format!("s{i}");
            let a_true = rng.random_bool(0.5);
            let pa: f64 = rng.random_range(0.0..1.0);
            let pb: f64 = rng.random_range(0.0..1.0);
            base.push(EvalResult::decide(
                &id,
                a_true,
                pa,
                1.0 - pa,
                ConditionTag::Baseline,
            ));
            steer.push(EvalResult::decide(
                &id,
                a_true,
                pb,
                1.0 - pb,
                ConditionTag::Steered,
            ));
        }
        let r = compare_conditions(&base, &steer).unwrap();
        let correct_b = base.iter().filter(|x| x.correct).count() as i64;
        let correct_s = steer.iter().filter(|x| x.correct).count() as i64;
        let to_correct = base
            .iter()
            .zip(&steer)
            .filter(|(b, s)| !b.correct && s.correct)
            .count() as i64;
        let to_incorrect = base
            .iter()
            .zip(&steer)
            .filter(|(b, s)| b.correct && !s.correct)
            .count() as i64;
        let ok = correct_s - correct_b == to_correct - to_incorrect
            && r.flips_to_correct as i64 == to_correct
            && r.flips_to_incorrect as i64 == to_incorrect
            && r.acc_baseline == correct_b as f64 / n as f64
            && r.acc_steered == correct_s as f64 / n as f64;
        if !ok {
            identity_failures += 1;
        }
    }

    let reverse = reference_figures().implied_flips_to_incorrect();
    let pass = fair && identity_failures == 0 && reverse == 75;
    assert!(verdict(
        "evaluation protocol",
        pass,
        &format!(
            "true answer at a: {:.2}%, flip identity failures {identity_failures}/100, reverse flips {reverse} (217 - 142)",
            share * 100.0
        )
    ));
}

fn random_captures(
    rng: &mut ChaCha8Rng,
    tag: ConditionTag,
    ids: &[String],
    n_actions: usize,
    width: usize,
) -> Vec<TimepointCapture> {
    ids.iter()
        .flat_map(|id| Timepoint::ALL.into_iter().map(move |t| (id.clone(), t)))
        .map(|(scenario_id, timepoint)| TimepointCapture {
            scenario_id,
            timepoint,
            condition_tag: tag,
            confidences: (0..n_actions)
                .map(|_| (0..width).map(|_| rng.random_range(0.001..0.999)).collect())
                .collect(),
        })
        .collect()
}

fn multiplier_zero_run() -> (bool, Duration) {
    let dir = tempfile::tempdir().unwrap();
    let mut config = PipelineConfig {
        out: dir.path().to_path_buf(),
        seed: 3,
        jobs: 2,
        ..Default::default()
    };
    config.data.n_scenarios = 6;
    config.data.texts_per_action = 4;
    config.data.n_triplets = 8;
    config.steering.multiplier = 0.0;
    let start = Instant::now();
    for stage in [
        Stage::GenSynthetic,
        Stage::TrainProbes,
        Stage::BuildSteering,
        Stage::Decompose,
    ] {
        run_stage(stage, &config).unwrap();
    }
    let report =
        cogmap::decomposition::load_report(&dir.path().join("decompose/deltas.json")).unwrap();
    let zero = report
        .actions
        .iter()
        .all(|d| d.mean_delta == 0.0 && d.mean_baseline == d.mean_steered)
        && report.categories.iter().all(|c| c.mean_delta == 0.0);
    (zero, start.elapsed())
}

#[test]
fn decomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut count_failures = 0;
    for _ in 0..10_000 {
        let len = rng.random_range(1..=11);
        let threshold = rng.random_range(0.05..0.95);
        let conf: Vec<f64> = (0..len)
            .map(|_| {
                if rng.random_bool(0.1) {
                    threshold
                } else {
                    rng.random_range(0.001..0.999)
                }
            })
            .collect();
        let mut brute = 0;
        for c in &conf {
            if *c > threshold {
                brute += 1;
            }
        }
        if layer_count(&conf, threshold) != brute || brute > len {
            count_failures += 1;
        }
    }

    let actions = builtin_taxonomy();
    let window = AnalysisWindow::default();
    let ids: Vec<String> = (0..7).map(|i| format!("s{i}")).collect();
    let base = random_captures(&mut rng, ConditionTag::Baseline, &ids, 45, window.len());
    let steer = random_captures(&mut rng, ConditionTag::Steered, &ids, 45, window.len());
    let forward = compute_deltas(&base, &steer, &actions, window, 0.5, 10).unwrap();
    let backward = compute_deltas(&steer, &base, &actions, window, 0.5, 10).unwrap();
    let antisymmetric = forward
        .actions
        .iter()
        .zip(&backward.actions)
        .all(|(f, b)| f.mean_delta == -b.mean_delta)
        && forward
            .categories
            .iter()
            .zip(&backward.categories)
            .all(|(f, b)| f.mean_delta == -b.mean_delta);

    let mut worst = 0.0f64;
    for c in &forward.categories {
        let members: Vec<f64> = forward
            .actions
            .iter()
            .filter(|a| a.category == c.category && a.timepoint == c.timepoint)
            .map(|a| a.mean_delta)
            .collect();
        let mean = members.iter().sum::<f64>() / members.len() as f64;
        worst = worst.max((mean - c.mean_delta).abs());
    }

    let (zero, elapsed) = multiplier_zero_run();
    let pass = count_failures == 0 && antisymmetric && worst <= CATEGORY_TOL && zero;
    assert!(verdict(
        "decomposition",
        pass,
        &format!(
            "layer_count failures {count_failures}/10000, antisymmetric: {antisymmetric}, \
             category reconcile err {worst:.1e}, multiplier-0 all-zero: {zero} ({elapsed:.1?})"
        )
    ));
}

#[test]
fn end_to_end_determinism() {
    let run = |jobs: usize| {
        let dir = tempfile::tempdir().unwrap();
        let config = PipelineConfig {
            out: dir.path().to_path_buf(),
            seed: 7,
            jobs,
            ..Default::default()
        };
        assert_eq!(config.data.n_scenarios, 50);
        let start = Instant::now();
        run_all(&config).unwrap();
        let elapsed = start.elapsed();
        let bytes = fs::read(dir.path().join("report/report.json")).unwrap();
        let deltas = fs::read(dir.path().join("decompose/deltas.json")).unwrap();
        let parsed = load_pipeline_report(&dir.path().join("report/report.json")).unwrap();
        (bytes, deltas, parsed, elapsed)
    };
    let (a, a_deltas, report, t1) = run(1);
    let (b, b_deltas, _, t8) = run(8);
    let identical = a == b && a_deltas == b_deltas;
    let complete = report.evaluation.n == 50 && report.deltas.n_scenarios == 50;
    let pass = identical && complete && t1 < PIPELINE_BUDGET && t8 < PIPELINE_BUDGET;
    assert!(verdict(
        "end-to-end determinism",
        pass,
        &format!(
            "report.json identical across runs (--jobs 1 vs 8): {identical} ({} bytes), 50 scenarios: {complete}, \
             runs {t1:.1?} / {t8:.1?}",
            a.len()
        )
    ));
}

#[test]
fn format() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pair.actv");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut data = ActivationDataset::new(31, 4, "test");
    for i in 0..2 {
        data.records.push(ActivationRecord {
            id: format!("r{i}"),
            values: (0..31 * 4)
                .map(|_| rng.random_range(-10.0f32..10.0))
                .collect(),
            label: Some("noticing".into()),
            category: Some("Analytical".into()),
            split: Split::Train,
            text_hash: rng.random(),
        });
    }
    let summary = write_dataset(&data, &path).unwrap();
    let payload = 2 * 31 * 4 * 4;
    let back = read_dataset(&path).unwrap();
    let bits = |d: &ActivationDataset| -> Vec<u32> {
        d.records
            .iter()
            .flat_map(|r| r.values.iter().map(|v| v.to_bits()))
            .collect()
    };
    let round_trip = back.records.len() == 2
        && bits(&back) == bits(&data)
        && back
            .records
            .iter()
            .zip(&data.records)
            .all(|(a, b)| a.id == b.id && a.label == b.label);
    let arithmetic = payload == 992 && summary.bytes_written == HEADER_LEN + 992;

    let good = fs::read(&path).unwrap();
    let rejects = |bytes: &[u8], name: &str| -> Result<StoreError, String> {
        let p = dir.path().join(format!("{name}.actv"));
        fs::write(&p, bytes).unwrap();
        fs::copy(
            cogmap::activation_store::sidecar_path(&path),
            cogmap::activation_store::sidecar_path(&p),
        )
        .unwrap();
        read_dataset(&p)
            .err()
            .ok_or_else(|| format!("{name} accepted"))
    };
    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    let truncated = &good[..good.len() - 3];
    let mut miscounted = good.clone();
    miscounted[8..12].copy_from_slice(&1u32.to_le_bytes());
    let named = matches!(rejects(&bad_magic, "magic"), Ok(StoreError::BadMagic))
        && matches!(
            rejects(truncated, "trunc"),
            Ok(StoreError::TruncatedPayload { .. })
        )
        && matches!(
            rejects(&miscounted, "count"),
            Ok(StoreError::CountMismatch { .. })
        );
    assert_eq!(decode_header(&good).unwrap().n_layers, 31);

    let pass = round_trip && arithmetic && named;
    assert!(verdict(
        "format",
        pass,
        &format!(
            "bit-exact round trip: {round_trip}, payload {payload} bytes / file {}: {arithmetic}, named rejections: {named}",
            summary.bytes_written
        )
    ));
}
