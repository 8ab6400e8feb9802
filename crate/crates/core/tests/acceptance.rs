//! One line per acceptance criterion: `[N] name: PASS|FAIL detail`.

use std::io::Write;
use std::time::Instant;

use noisefair::dataset::{inject_noise, NoiseRates, NoiseSpec, Standardizer};
use noisefair::experiment::{
    estimation_robustness, noise_sweep, run_benchmark, write_outputs, DataSource, ExperimentConfig, Method,
    NoiseKnowledge, RobustnessConfig, Summary,
};
use noisefair::loss::{make_peer_pairing, LossKind};
use noisefair::noise_estimation::{estimate_from_data, GroupEstimate, NoiseEstimate};
use noisefair::synth::{adultlike, synth_generate};
use noisefair::theory::{
    identical_groups_world, peer_shift_error, perceived_fairness_gap_error, random_balanced_world,
    random_equal_odds_world, random_screened_world, rate_correction_error, surrogate_unbiasedness_error,
    verify_clean_group_harm, verify_example_tables, Exact, Scalar,
};
use noisefair::trainer::{objective_and_gradient, LossSpec, TrainConfig};
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Written to the stdout handle directly so the line shows even when the
/// harness captures output.
fn report(n: u32, name: &str, passed: bool, detail: String) {
    let line = format!("[{n}] {name}: {} {detail}\n", if passed { "PASS" } else { "FAIL" });
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(passed, "criterion {n} ({name}) failed: {detail}");
}

fn random_table(rng: &mut ChaCha8Rng) -> Vec<i8> {
    loop {
        let t: Vec<i8> = (0..4).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect();
        if t.iter().any(|&v| v != t[0]) {
            return t;
        }
    }
}

fn adult_noise() -> NoiseSpec {
    NoiseSpec::new(vec![
        ("female".into(), NoiseRates::new(0.15, 0.45).unwrap()),
        ("male".into(), NoiseRates::new(0.55, 0.35).unwrap()),
    ])
    .unwrap()
}

/// Shorter training than the library default so the benchmark criteria
/// finish in a few minutes on one core.
fn acceptance_train() -> TrainConfig {
    TrainConfig { epochs: 60, outer_rounds: 30, ..TrainConfig::default() }
}

fn adult_benchmark(noise: NoiseSpec) -> ExperimentConfig {
    let text = format!(
        r#"{{"data":{{"kind":"preset","name":"adultlike","per_group":5000}},"noise":{},
            "methods":["corrupt","surrogate","group_peer"],"noise_knowledge":["true","estimated"]}}"#,
        serde_json::to_string(&noise).unwrap()
    );
    let mut cfg = ExperimentConfig::from_json(&text).unwrap();
    cfg.train = acceptance_train();
    cfg
}

/// Mean test violation of every noise-using arm against Corrupt.
fn ordering(summary: &Summary) -> (f64, Vec<(String, f64)>) {
    let corrupt = summary.entry(Method::Corrupt, None).expect("corrupt arm ran").test_violation.mean;
    let mut corrected = Vec::new();
    for m in [Method::Surrogate, Method::GroupPeer] {
        for k in [NoiseKnowledge::True, NoiseKnowledge::Estimated] {
            let e = summary.entry(m, Some(k)).expect("corrected arm ran");
            corrected.push((format!("{m:?}/{k:?}").to_lowercase(), e.test_violation.mean));
        }
    }
    (corrupt, corrected)
}

fn show(arms: &[(String, f64)]) -> String {
    arms.iter().map(|(n, v)| format!("{n} {v:.4}")).collect::<Vec<_>>().join(", ")
}

#[test]
fn c01_example_tables() {
    let start = Instant::now();
    let r = verify_example_tables().unwrap();
    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<_> = r.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    report(
        1,
        "example tables",
        failed.is_empty() && secs < 1.0,
        format!("{} checks, failed {failed:?}, {secs:.3}s", r.checks.len()),
    );
}

#[test]
fn c02_clean_group_harm() {
    let start = Instant::now();
    let mut failed = Vec::new();
    let mut checks = 0;
    for e in [Exact::ratio(1, 10), Exact::ratio(3, 10), Exact::ratio(9, 20)] {
        let r = verify_clean_group_harm(&identical_groups_world(e).unwrap()).unwrap();
        checks += r.checks.len();
        failed.extend(r.checks.iter().filter(|c| !c.passed).map(|c| format!("e={e}: {}", c.detail)));
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        2,
        "equal noisy TPR forces TPR = FPR on the clean group",
        failed.is_empty() && secs < 1.0,
        format!("{checks} checks over e in {{1/10, 3/10, 9/20}}, failed {failed:?}, {secs:.3}s"),
    );
}

#[test]
fn c03_perceived_fairness_gap() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let table = random_table(&mut rng);
        let groups = rng.random_range(2..=3);
        let world = random_equal_odds_world(&mut rng, &table, groups).unwrap();
        worst = worst.max(perceived_fairness_gap_error(&world).unwrap());
    }
    report(3, "closed-form clean gap under equal noisy odds", worst <= 1e-12, format!("100 worlds, max error {worst:e}"));
}

#[test]
fn c04_surrogate_unbiasedness() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let logistic = surrogate_unbiasedness_error(&mut rng, LossKind::LOGISTIC, 1000).unwrap();
    let zero_one = surrogate_unbiasedness_error(&mut rng, LossKind::ZeroOne, 1000).unwrap();
    report(
        4,
        "surrogate loss unbiasedness",
        logistic <= 1e-10 && zero_one <= 1e-10,
        format!("1000 draws each, max error logistic {logistic:e}, 0-1 {zero_one:e}"),
    );
}

#[test]
fn c05_peer_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = Exact::zero();
    for _ in 0..5 {
        worst = worst.max(peer_shift_error(&random_balanced_world(&mut rng, 4, 2).unwrap()).unwrap());
    }
    report(
        5,
        "group peer loss shift of -1/2 on balanced worlds",
        worst.as_f64() <= 1e-12,
        format!("5 worlds, max deviation {worst}"),
    );
}

#[test]
fn c06_rate_corrections() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let table = random_table(&mut rng);
        let groups = rng.random_range(2..=3);
        let world = random_screened_world(&mut rng, 4, groups).unwrap().with_classifier(table).unwrap();
        worst = worst.max(rate_correction_error(&world).unwrap());
    }
    report(6, "rate correction maps vs enumeration", worst <= 1e-12, format!("100 worlds, max error {worst:e}"));
}

#[test]
fn c07_gradients() {
    let spec = adultlike(100, 7);
    let ds = synth_generate(&spec).unwrap();
    let ds = Standardizer::fit(&ds).apply(&ds).unwrap();
    let ds = inject_noise(&ds, &adult_noise(), 7).unwrap();
    let est = NoiseEstimate::new(
        ds.group_names().to_vec(),
        vec![
            GroupEstimate { eps_plus: 0.15, eps_minus: 0.3, prior_plus: 0.3, clipped: false },
            GroupEstimate { eps_plus: 0.2, eps_minus: 0.1, prior_plus: 0.45, clipped: false },
        ],
    )
    .unwrap();
    let pairing = make_peer_pairing(&ds, 7).unwrap();
    let costs: Vec<f64> = (0..ds.len()).map(|i| (i as f64 * 0.37).sin()).collect();
    let specs = [LossSpec::plain(), LossSpec::surrogate(est.clone()), LossSpec::group_peer(est, 0.5)];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for spec in &specs {
        for _ in 0..20 {
            let w: Vec<f64> = (0..ds.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let f = |w: &[f64]| objective_and_gradient(&ds, spec, Some(&pairing), Some(&costs), 1e-3, w).unwrap();
            let (_, g) = f(&w);
            for j in 0..w.len() {
                let mut wp = w.clone();
                wp[j] += h;
                let mut wm = w.clone();
                wm[j] -= h;
                let fd = (f(&wp).0 - f(&wm).0) / (2.0 * h);
                worst = worst.max((fd - g[j]).abs() / g[j].abs().max(1.0));
            }
        }
    }
    report(
        7,
        "analytic vs finite-difference gradients",
        worst <= 1e-5,
        format!("plain, surrogate, group peer at 20 points each, max relative error {worst:e}"),
    );
}

#[test]
fn c08_estimator_calibration() {
    let start = Instant::now();
    let noise = adult_noise();
    let targets: Vec<(f64, f64)> =
        noise.entries().iter().map(|(_, r)| (r.eps_plus.min(0.49), r.eps_minus.min(0.49))).collect();
    let mut err = vec![(0.0, 0.0); targets.len()];
    for seed in 0..5 {
        let ds = synth_generate(&adultlike(5000, seed)).unwrap();
        let ds = Standardizer::fit(&ds).apply(&ds).unwrap();
        let noisy = inject_noise(&ds, &noise, seed).unwrap();
        let (est, _) = estimate_from_data(&noisy, 5, &TrainConfig { seed, ..TrainConfig::default() }).unwrap();
        for (z, (name, _)) in noise.entries().iter().enumerate() {
            let g = est.group(est.names().iter().position(|n| n == name).unwrap());
            err[z].0 += (g.eps_plus - targets[z].0).abs() / 5.0;
            err[z].1 += (g.eps_minus - targets[z].1).abs() / 5.0;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let worst = err.iter().flat_map(|&(p, m)| [p, m]).fold(0.0, f64::max);
    let detail: Vec<String> = noise
        .entries()
        .iter()
        .zip(&err)
        .map(|((n, _), (p, m))| format!("{n} eps+ {p:.3} eps- {m:.3}"))
        .collect();
    report(
        8,
        "noise estimator calibration",
        worst <= 0.1 && secs < 120.0,
        format!("mean abs error over 5 seeds: {}, {secs:.1}s", detail.join(", ")),
    );
}

#[test]
fn c09_benchmark_ordering() {
    let start = Instant::now();
    let cfg = adult_benchmark(adult_noise());
    let out = run_benchmark(&cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let (corrupt, corrected) = ordering(&out.summary);
    let passed = out.summary.failures.is_empty()
        && corrupt >= 2.0 * cfg.delta
        && corrected.iter().all(|(_, v)| *v < corrupt)
        && secs < 900.0;
    report(
        9,
        "corrected methods beat corrupt on clean-test violation",
        passed,
        format!("corrupt {corrupt:.4} (2δ = {:.2}), {}, {secs:.0}s", 2.0 * cfg.delta, show(&corrected)),
    );
}

#[test]
fn c10_single_group_noise() {
    let cfg = adult_benchmark(adult_noise());
    let out = noise_sweep(&cfg, &[0.3], "female").unwrap();
    let (_, summary) = &out.summaries[0];
    let (corrupt, corrected) = ordering(summary);
    report(
        10,
        "corrected methods beat corrupt at eps = 0.3 on one group",
        summary.failures.is_empty() && corrected.iter().all(|(_, v)| *v < corrupt),
        format!("corrupt {corrupt:.4}, {}", show(&corrected)),
    );
}

#[test]
fn c11_estimate_robustness() {
    let points = estimation_robustness(&RobustnessConfig::default()).unwrap();
    let worst = points.iter().map(|p| p.excess - p.bound).fold(f64::NEG_INFINITY, f64::max);
    let ratio = points.iter().map(|p| p.ratio).fold(f64::NEG_INFINITY, f64::max);
    report(
        11,
        "surrogate-risk excess within 4τℓ̄",
        points.len() == 10 && worst <= 0.0,
        format!("{} runs over τ in {{0.01, 0.05}}, max excess/bound {ratio:.4}", points.len()),
    );
}

#[test]
fn c12_determinism() {
    let mut cfg = adult_benchmark(adult_noise());
    cfg.data = DataSource::Preset { name: "adultlike".into(), per_group: 600, seed: 0 };
    cfg.methods = vec![Method::Clean, Method::Corrupt, Method::Surrogate, Method::GroupPeer];
    cfg.seeds = vec![1, 2];
    cfg.train = TrainConfig { epochs: 10, outer_rounds: 5, ..TrainConfig::default() };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        write_outputs(&run_benchmark(&cfg).unwrap(), d.path()).unwrap();
    }
    let mut same = true;
    let mut sizes = Vec::new();
    for name in ["results.csv", "estimates.csv"] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        same &= a == b;
        sizes.push(format!("{name} {} bytes", a.len()));
    }
    report(12, "byte-identical CSV across runs", same, sizes.join(", "));
}
