//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! The bias and value-error criteria (7, 8) run the reduced preset by
//! default; set `PROTO_OPE_FULL=1` for 20,000 pairs per split, all six
//! horizons and ten replications.
//!
//! Failed criteria are always listed. The process exits non-zero on a
//! failure only when `ACCEPTANCE_STRICT=1`, so the statistical sweep
//! criteria do not stop the rest of `cargo test` from running.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::path::Path;
use std::time::{Duration, Instant};

use proto_ope::mdp::{exact_policy_value, policy_iteration, value_iteration};
use proto_ope::metrics::{auc_macro_ovr, binary_auc, sce, PredictionBatch, DEFAULT_SCE_BINS};
use proto_ope::net::{ContextEncoding, EncoderKind, History, InputFeaturizer, Matrix};
use proto_ope::ope::{ess, full_weights, prototype_values, weighted_samples, wis_value};
use proto_ope::prototype::{self, Lambdas};
use proto_ope::sepsis::{self, PatientState, TreatmentAction, N_ACTIONS, N_STATES};
use proto_ope::TrainConfig;
use proto_ope_cli::sweep::{self, SweepRow};
use proto_ope_cli::{commands, ExperimentConfig};
use rand::Rng;
use support::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit_secs: f64) -> bool {
    elapsed.as_secs_f64() < limit_secs
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        for (n_states, n_actions, horizon) in [(4, 3, 3), (3, 2, 3), (4, 2, 2)] {
            let mdp = random_mdp(seed, n_states, n_actions, 1);
            let target = random_policy(seed + 100, n_states, n_actions);
            let behavior = random_policy(seed + 200, n_states, n_actions);
            let exact = exact_policy_value(&mdp, &target, horizon).unwrap();
            worst =
                worst.max((expected_is_estimate(&mdp, &target, &behavior, horizon) - exact).abs());
        }
    }
    let t = start.elapsed();
    outcome(
        worst < 1e-10 && within(t, 1.0),
        format!("max |E[IS] - V| = {worst:.2e}, {:.2} s", t.as_secs_f64()),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let ds = random_dataset(seed, 30, 4, 3, 4);
        let target = random_policy(seed + 1, 4, 3);
        let behavior = random_policy(seed + 2, 4, 3);
        let kind = if seed % 2 == 0 {
            EncoderKind::Feedforward
        } else {
            EncoderKind::Recurrent
        };
        let model = toy_model(seed, &ds, 4, 3, 3, kind, Lambdas::ZERO, 1.0);
        let samples = weighted_samples(&ds, &target, &behavior, None).unwrap();
        for t in 0..3 {
            let stratified: f64 = prototype_values(&ds, &model, &samples, t)
                .unwrap()
                .iter()
                .map(|r| r.value.map_or(0.0, |v| v * r.assignment))
                .sum();
            let direct = samples
                .iter()
                .zip(ds.iter())
                .filter(|(_, tr)| tr.len() > t)
                .map(|(s, _)| s.full_weight * s.reward)
                .sum::<f64>()
                / ds.len() as f64;
            worst = worst.max((stratified - direct).abs());
        }
    }
    let t = start.elapsed();
    outcome(
        worst < 1e-10 && within(t, 10.0),
        format!("max gap = {worst:.2e}, {:.2} s", t.as_secs_f64()),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let all = Lambdas {
        diversity: 0.1,
        clustering: 0.1,
        evidence: 0.1,
    };
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let ds = random_dataset(seed, 6, 4, 3, 4);
        let kind = if seed % 2 == 0 {
            EncoderKind::Feedforward
        } else {
            EncoderKind::Recurrent
        };
        let mut model = toy_model(seed, &ds, 4, 3, 3, kind, all, 3.0);
        jitter(&mut model, seed + 1000, 0.1);
        worst = worst.max(max_gradient_rel_error(&model, &ds, 1e-6, 1e-6));
    }
    let t = start.elapsed();
    outcome(
        worst < 1e-4 && within(t, 30.0),
        format!("max relative error = {worst:.2e}, {:.2} s", t.as_secs_f64()),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut real = true;
    let mut matches = true;
    for seed in 0..4 {
        let ds = random_dataset(seed, 60, 5, 3, 6);
        assert!(ds.n_pairs() <= 500);
        let kind = if seed % 2 == 0 {
            EncoderKind::Feedforward
        } else {
            EncoderKind::Recurrent
        };
        let feat = InputFeaturizer::fit(ContextEncoding::OneHot { n_contexts: 5 }, 3, &ds).unwrap();
        let config = TrainConfig {
            n: 4,
            q: 2,
            epochs: 10,
            batch_size: 32,
            encoder: kind,
            hidden: vec![6, 4],
            seed,
            ..Default::default()
        };
        let mut model = prototype::train(feat, &ds, &config).unwrap();
        real &= model.unreal_prototypes().unwrap().is_empty();
        for (j, r) in model.prototype_refs.iter().enumerate() {
            let z = model
                .encode(&[History::of(&ds.trajectories[r.trajectory], r.time)])
                .unwrap();
            real &= model.latent_prototypes.row(j) == z.row(0);
        }
        for v in model.latent_prototypes.data_mut() {
            *v -= 0.21;
        }
        let expected = brute_force_projection(&model, &ds);
        model.project(&ds).unwrap();
        matches &= model
            .prototype_refs
            .iter()
            .zip(&expected)
            .all(|(r, &(i, t))| (r.trajectory, r.time) == (i, t));
    }
    let t = start.elapsed();
    outcome(
        real && matches && within(t, 30.0),
        format!(
            "prototypes real: {real}, projection matches scan: {matches}, {:.2} s",
            t.as_secs_f64()
        ),
    )
}

fn criterion_5() -> Outcome {
    let mdp = sepsis::exact_transition_tensor();
    let (mut pick, mut sampler) = (rng(2024), rng(7));
    let mut min_p: f64 = 1.0;
    let mut tested = 0;
    while tested < 50 {
        let s = pick.gen_range(0..N_STATES);
        if mdp.is_terminal(s) {
            continue;
        }
        let a = pick.gen_range(0..N_ACTIONS);
        let state = PatientState::from_index(s).unwrap();
        let action = TreatmentAction::from_index(a).unwrap();
        let mut counts = vec![0u64; N_STATES];
        for _ in 0..100_000 {
            counts[sepsis::step(&state, action, &mut sampler)
                .unwrap()
                .0
                .index()] += 1;
        }
        let probs: Vec<f64> = (0..N_STATES).map(|next| mdp.prob(s, a, next)).collect();
        min_p = min_p.min(chi_square_p_value(&counts, &probs));
        tested += 1;
    }
    let mut r = rng(11);
    let diabetic = (0..100_000)
        .filter(|_| sepsis::initial_state(&mut r).diabetic)
        .count() as f64
        / 1e5;
    outcome(
        min_p >= 0.001 && (diabetic - 0.2).abs() <= 0.01,
        format!("smallest chi-square p = {min_p:.4}, diabetic fraction = {diabetic:.4}"),
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let mdp = random_mdp(seed, 6, 3, 1);
        let best = brute_force_optimal_values(&mdp, 0.9);
        let pi = deterministic_policy_value(
            &mdp,
            &policy_iteration(&mdp, 0.9).unwrap().greedy_actions(),
            0.9,
        );
        let vi = value_iteration(&mdp, 0.9, 1e-12).unwrap();
        for s in 0..6 {
            worst = worst
                .max((pi[s] - best[s]).abs())
                .max((vi.values[s] - best[s]).abs());
        }
    }
    let t = start.elapsed();
    outcome(
        worst < 1e-8 && within(t, 30.0),
        format!("max value gap = {worst:.2e}, {:.2} s", t.as_secs_f64()),
    )
}

fn full_preset() -> bool {
    std::env::var("PROTO_OPE_FULL").is_ok_and(|v| v == "1")
}

fn sweep_config() -> ExperimentConfig {
    let pairs = if full_preset() { 20_000 } else { 5_000 };
    ExperimentConfig {
        train_pairs: pairs,
        calibration_pairs: pairs,
        evaluation_pairs: pairs,
        horizons: if full_preset() {
            vec![5, 10, 15, 20, 25, 30]
        } else {
            vec![5, 15, 30]
        },
        replications: if full_preset() { 10 } else { 3 },
        sweep_estimators: vec!["feedforward".into(), "prototype:10:2".into()],
        ..ExperimentConfig::default()
    }
}

fn median_abs_log_ratio(rows: &[SweepRow], horizon: usize, estimator: &str) -> f64 {
    let values: Vec<f64> = rows
        .iter()
        .filter(|r| r.horizon == horizon && r.estimator == estimator)
        .map(|r| r.median_abs_log_ratio)
        .collect();
    proto_ope::metrics::quantile(&values, 0.5)
}

fn criterion_7(config: &ExperimentConfig) -> (Outcome, Vec<SweepRow>) {
    let start = Instant::now();
    let rows = sweep::run(config).unwrap();
    let t = start.elapsed();
    let proto: Vec<f64> = config
        .horizons
        .iter()
        .map(|&h| median_abs_log_ratio(&rows, h, "prototype:10:2"))
        .collect();
    let last = *config.horizons.last().unwrap();
    let ffn_last = median_abs_log_ratio(&rows, last, "feedforward");
    let monotone = proto.windows(2).all(|w| w[1] >= w[0]);
    let exceeds = proto[proto.len() - 1] > ffn_last;
    let limit = if full_preset() { 7200.0 } else { 900.0 };
    let shown: Vec<String> = config
        .horizons
        .iter()
        .zip(&proto)
        .map(|(h, v)| format!("h{h} {v:.3}"))
        .collect();
    (
        outcome(
            monotone && exceeds && within(t, limit),
            format!(
                "prototype(10,2) median |log ratio| {}; feedforward at h{last} {ffn_last:.3}; {:.0} s",
                shown.join(", "),
                t.as_secs_f64()
            ),
        ),
        rows,
    )
}

fn criterion_8(config: &ExperimentConfig, previous: &[SweepRow]) -> Outcome {
    let have: Vec<usize> = previous
        .iter()
        .filter(|r| r.horizon == 15)
        .map(|r| r.replication)
        .collect();
    let missing: Vec<(usize, usize)> = (0..10)
        .filter(|r| !have.contains(r))
        .map(|r| (15, r))
        .collect();
    let mut rows: Vec<SweepRow> = previous
        .iter()
        .filter(|r| r.horizon == 15)
        .cloned()
        .collect();
    rows.extend(sweep::run_cells(config, &missing).unwrap());
    let mean = |est: &str| {
        let v: Vec<f64> = rows
            .iter()
            .filter(|r| r.estimator == est)
            .map(|r| r.abs_error)
            .collect();
        (v.iter().sum::<f64>() / v.len() as f64, v.len())
    };
    let (ffn, n_ffn) = mean("feedforward");
    let (proto, n_proto) = mean("prototype:10:2");
    outcome(
        ffn <= proto && n_ffn == 10 && n_proto == 10,
        format!("mean |WIS - V| at h15 over {n_ffn} replications: feedforward {ffn:.4}, prototype(10,2) {proto:.4}"),
    )
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let mut r = rng(99);
    let (mut bounded, mut ess_ok, mut checked) = (true, true, 0);
    for seed in 0..1000u64 {
        let ds = random_dataset(seed, r.gen_range(1..40), 4, 3, 5);
        let target = random_policy(seed + 5000, 4, 3);
        let behavior = random_policy(seed + 9000, 4, 3);
        let samples = weighted_samples(&ds, &target, &behavior, None).unwrap();
        let rewards: Vec<f64> = ds.iter().map(|t| t.reward()).collect();
        let lo = rewards.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let v = wis_value(&samples).unwrap();
        bounded &= v >= lo - 1e-12 && v <= hi + 1e-12;
        ess_ok &= ess(&full_weights(&samples)).unwrap() <= samples.len() as f64 * (1.0 + 1e-12);
        checked += 1;
    }
    let t = start.elapsed();
    outcome(
        bounded && ess_ok && within(t, 10.0),
        format!(
            "{checked} datasets, WIS bounded: {bounded}, ESS <= m: {ess_ok}, {:.2} s",
            t.as_secs_f64()
        ),
    )
}

fn batch(rows: &[Vec<f64>], labels: &[usize]) -> PredictionBatch {
    PredictionBatch::new(Matrix::from_rows(rows).unwrap(), labels.to_vec()).unwrap()
}

fn criterion_10() -> Outcome {
    let start = Instant::now();
    let mut calibrated = vec![vec![0.25, 0.75]; 4];
    calibrated.extend(vec![vec![0.5, 0.5]; 2]);
    let sce_zero = sce(&batch(&calibrated, &[1, 1, 1, 0, 0, 1]), DEFAULT_SCE_BINS).unwrap();
    let separating = vec![
        vec![0.9, 0.1],
        vec![0.8, 0.2],
        vec![0.3, 0.7],
        vec![0.1, 0.9],
    ];
    let auc_one = auc_macro_ovr(&batch(&separating, &[0, 0, 1, 1])).unwrap();
    let cases: [([f64; 4], [bool; 4]); 4] = [
        ([0.1, 0.4, 0.35, 0.8], [false, false, true, true]),
        ([0.5, 0.5, 0.5, 0.5], [true, false, true, false]),
        ([0.3, 0.6, 0.6, 0.1], [false, true, false, true]),
        ([0.7, 0.1, 0.4, 0.4], [true, true, true, false]),
    ];
    let auc_gap = cases
        .iter()
        .map(|(s, p)| (binary_auc(s, p).unwrap() - pairwise_auc(s, p)).abs())
        .fold(0.0, f64::max);
    let k = 8;
    let labels: Vec<usize> = (0..40).map(|i| i % k).collect();
    let wrong: Vec<Vec<f64>> = labels
        .iter()
        .map(|&y| {
            (0..k)
                .map(|c| if c == (y + 1) % k { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let sce_wrong = sce(&batch(&wrong, &labels), DEFAULT_SCE_BINS).unwrap();
    let t = start.elapsed();
    outcome(
        sce_zero == 0.0 && auc_one == 1.0 && auc_gap < 1e-12 && (sce_wrong - 2.0 / k as f64).abs() < 1e-12 && within(t, 5.0),
        format!(
            "calibrated SCE {sce_zero}, separating AUC {auc_one}, hand-case AUC gap {auc_gap:.1e}, confident-wrong SCE {sce_wrong} (2/k = {}), {:.2} s",
            2.0 / k as f64,
            t.as_secs_f64()
        ),
    )
}

/// Every file under `dir` except run manifests, with its bytes.
fn numeric_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                if path.file_name().unwrap() != "manifests" {
                    stack.push(path);
                }
            } else {
                let name = path.strip_prefix(dir).unwrap().display().to_string();
                out.push((name, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_11() -> Outcome {
    let run = |dir: &Path| {
        let config = ExperimentConfig {
            seed: 31,
            horizon: 8,
            train_pairs: 1500,
            calibration_pairs: 1500,
            evaluation_pairs: 1500,
            epochs: 6,
            cv_d_min: vec![1.0, 2.0],
            cv_lambda_d: vec![1e-3],
            cv_epochs: Some(2),
            metric_bootstraps: 100,
            output_dir: dir.to_path_buf(),
            ..ExperimentConfig::default()
        };
        commands::gen_data(&config).unwrap();
        commands::fit_behavior(&config).unwrap();
        commands::evaluate(&config).unwrap();
        numeric_outputs(dir)
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (first, second) = (run(a.path()), run(b.path()));
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    outcome(
        first.len() == second.len() && differing.is_empty() && first.len() >= 10,
        format!(
            "{} output files compared, differing: {differing:?}",
            first.len()
        ),
    )
}

fn main() {
    // `cargo test` forwards harness flags; a filter that excludes this suite skips it
    let args: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let config = sweep_config();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!(
            "criterion {n:>2} ({name}): {} ({})",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((n, name, o));
    };
    report(1, "IS unbiasedness oracle", criterion_1());
    report(2, "stratification identity", criterion_2());
    report(3, "objective gradient", criterion_3());
    report(4, "prototype realness and projection", criterion_4());
    report(5, "simulator consistency", criterion_5());
    report(6, "solver cross-check", criterion_6());
    report(9, "WIS bounds and ESS", criterion_9());
    report(10, "metric unit checks", criterion_10());
    report(11, "determinism", criterion_11());
    let (seventh, rows) = criterion_7(&config);
    report(7, "bias vs horizon ordering", seventh);
    report(
        8,
        "value error ordering at horizon 15",
        criterion_8(&config, &rows),
    );
    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} of {} criteria passed{}",
        results.len() - failed.len(),
        results.len(),
        if full_preset() {
            " (full preset)"
        } else {
            " (reduced preset)"
        }
    );
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        if std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
