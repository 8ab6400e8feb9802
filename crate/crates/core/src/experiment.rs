//! Benchmark harness: split, inject noise into the training side, optionally
//! estimate it, train every method and score it on the clean test split.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    inject_noise_with_streams, load_dataset_raw, split, Dataset, NoiseRates, NoiseSpec, Schema, SplitConfig, Standardizer,
};
use crate::error::{Error, Result};
use crate::fairness::{confusion, violation, ConstraintSpec, Correction, LabelFlavor, Metric};
use crate::loss::{base_loss, surrogate_weights, LossKind};
use crate::noise_estimation::{estimate_from_data, GroupEstimate, NoiseEstimate};
use crate::synth::{preset, synth_generate, SynthSpec};
use crate::trainer::{
    fit_constrained, fit_unconstrained, tune_alpha, LinearModel, LossSpec, RandomizedClassifier, TrainConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DataSource {
    Csv {
        path: PathBuf,
        #[serde(flatten)]
        schema: Schema,
    },
    Synthetic {
        #[serde(flatten)]
        spec: SynthSpec,
    },
    Preset {
        name: String,
        per_group: usize,
        #[serde(default)]
        seed: u64,
    },
}

impl DataSource {
    /// Raw (unstandardized) features.
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Csv { path, schema } => {
                load_dataset_raw(path, schema).map_err(|e| e.context(format!("loading {}", path.display())))
            }
            DataSource::Synthetic { spec } => synth_generate(spec),
            DataSource::Preset { name, per_group, seed } => synth_generate(&preset(name, *per_group, *seed)?),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Clean,
    Corrupt,
    Surrogate,
    GroupPeer,
}

impl Method {
    fn uses_estimate(self) -> bool {
        matches!(self, Method::Surrogate | Method::GroupPeer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKnowledge {
    True,
    Estimated,
}

fn default_knowledge() -> Vec<NoiseKnowledge> {
    vec![NoiseKnowledge::True]
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_alpha_grid() -> Vec<f64> {
    vec![0.0, 0.3, 0.5, 1.0]
}

fn default_delta() -> f64 {
    0.02
}

fn default_metric() -> Metric {
    Metric::EqualOdds
}

fn default_folds() -> usize {
    5
}

fn default_split() -> SplitFractions {
    SplitFractions { test_fraction: 0.2, validation_fraction: 0.1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub test_fraction: f64,
    pub validation_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub noise: NoiseSpec,
    #[serde(default = "default_metric")]
    pub metric: Metric,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub methods: Vec<Method>,
    #[serde(default = "default_knowledge")]
    pub noise_knowledge: Vec<NoiseKnowledge>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_alpha_grid")]
    pub alpha_grid: Vec<f64>,
    #[serde(default = "default_split")]
    pub split: SplitFractions,
    #[serde(default = "default_folds")]
    pub estimation_folds: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("methods must not be empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must not be empty".into()));
        }
        if self.noise_knowledge.is_empty() && self.methods.iter().any(|m| m.uses_estimate()) {
            return Err(Error::InvalidConfig("noise_knowledge must not be empty".into()));
        }
        if !(self.delta >= 0.0) {
            return Err(Error::InvalidConfig(format!("delta {} must be non-negative", self.delta)));
        }
        if self.methods.contains(&Method::GroupPeer) && self.alpha_grid.is_empty() {
            return Err(Error::InvalidConfig("alpha_grid must not be empty".into()));
        }
        SplitConfig::new(self.split.test_fraction, self.split.validation_fraction, 0)?;
        self.noise.validate()?;
        self.train.validate()
    }

    /// `(method, knowledge)` pairs in output order; methods that ignore the
    /// noise model appear once.
    fn arms(&self) -> Vec<(Method, Option<NoiseKnowledge>)> {
        let mut out = Vec::new();
        for &m in &self.methods {
            if m.uses_estimate() {
                out.extend(self.noise_knowledge.iter().map(|&k| (m, Some(k))));
            } else {
                out.push((m, None));
            }
        }
        out.sort();
        out.dedup();
        out
    }
}

/// One `(method, knowledge, seed)` outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub noise_knowledge: Option<NoiseKnowledge>,
    pub seed: u64,
    /// Accuracy on the clean test split.
    pub accuracy: f64,
    /// Fairness violation on the clean test split.
    pub test_violation: f64,
    /// Violation measured on the noisy training labels.
    pub train_violation: f64,
    pub alpha: Option<f64>,
    /// Mean `|ε̂ − ε|` over groups and both rates.
    pub eps_error: Option<f64>,
}

/// Estimated against injected rates for one group of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub seed: u64,
    pub noise_knowledge: NoiseKnowledge,
    pub group: String,
    pub eps_plus: f64,
    pub eps_minus: f64,
    pub eps_plus_estimate: f64,
    pub eps_minus_estimate: f64,
    pub clipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: Method,
    pub noise_knowledge: Option<NoiseKnowledge>,
    pub seed: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and sample standard deviation (zero for a single value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub method: Method,
    pub noise_knowledge: Option<NoiseKnowledge>,
    pub runs: usize,
    pub accuracy: Stat,
    pub test_violation: Stat,
    pub train_violation: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub method: Option<Method>,
    pub noise_knowledge: Option<NoiseKnowledge>,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub delta: f64,
    pub metric: Metric,
    pub entries: Vec<SummaryEntry>,
    pub failures: Vec<Failure>,
}

impl Summary {
    pub fn entry(&self, method: Method, knowledge: Option<NoiseKnowledge>) -> Option<&SummaryEntry> {
        self.entries.iter().find(|e| e.method == method && e.noise_knowledge == knowledge)
    }
}

/// Per-(method, knowledge) mean ± std of a row table, in row order.
pub fn summarize(rows: &[ResultRow], delta: f64, metric: Metric, failures: Vec<Failure>) -> Summary {
    let mut keys: Vec<(Method, Option<NoiseKnowledge>)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.method, r.noise_knowledge)) {
            keys.push((r.method, r.noise_knowledge));
        }
    }
    let entries = keys
        .into_iter()
        .map(|(method, noise_knowledge)| {
            let sel: Vec<&ResultRow> =
                rows.iter().filter(|r| r.method == method && r.noise_knowledge == noise_knowledge).collect();
            let col = |f: fn(&ResultRow) -> f64| Stat::of(&sel.iter().map(|r| f(r)).collect::<Vec<_>>());
            SummaryEntry {
                method,
                noise_knowledge,
                runs: sel.len(),
                accuracy: col(|r| r.accuracy),
                test_violation: col(|r| r.test_violation),
                train_violation: col(|r| r.train_violation),
            }
        })
        .collect();
    Summary { delta, metric, entries, failures }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkOutput {
    pub rows: Vec<ResultRow>,
    pub estimates: Vec<EstimateRow>,
    pub timings: Vec<TimingRow>,
    pub summary: Summary,
}

/// Noisy and clean views of one seed's split, standardized on the training part.
struct Prepared {
    train_clean: Dataset,
    train_noisy: Dataset,
    val_clean: Option<Dataset>,
    val_noisy: Option<Dataset>,
    test: Dataset,
}

fn prepare(data: &Dataset, cfg: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let parts = split(data, &SplitConfig::new(cfg.split.test_fraction, cfg.split.validation_fraction, seed)?)?;
    let scale = Standardizer::fit(&parts.train);
    let train_clean = scale.apply(&parts.train)?;
    let test = scale.apply(&parts.test)?;
    // noise draws are keyed by original row, so a row keeps its flip decision
    // whichever partition it lands in
    let streams = |idx: &[usize]| idx.iter().map(|&i| i as u64).collect::<Vec<_>>();
    let train_noisy = inject_noise_with_streams(&train_clean, &cfg.noise, seed, &streams(&parts.train_indices))?;
    let (val_clean, val_noisy) = match &parts.validation {
        Some(v) => {
            let clean = scale.apply(v)?;
            let noisy = inject_noise_with_streams(&clean, &cfg.noise, seed, &streams(&parts.validation_indices))?;
            (Some(clean), Some(noisy))
        }
        None => (None, None),
    };
    Ok(Prepared { train_clean, train_noisy, val_clean, val_noisy, test })
}

fn mean_abs_error(est: &NoiseEstimate, truth: &[NoiseRates]) -> f64 {
    let total: f64 = est
        .groups()
        .iter()
        .zip(truth)
        .map(|(e, t)| (e.eps_plus - t.eps_plus).abs() + (e.eps_minus - t.eps_minus).abs())
        .sum();
    total / (2 * truth.len()) as f64
}

struct Outcome {
    row: ResultRow,
    seconds: f64,
}

fn evaluate(
    classifier: &RandomizedClassifier,
    prep: &Prepared,
    cfg: &ExperimentConfig,
) -> Result<(f64, f64, f64)> {
    let test_gc = confusion(classifier, &prep.test, LabelFlavor::Clean)?;
    let train_gc = confusion(classifier, &prep.train_noisy, LabelFlavor::Noisy)?;
    Ok((
        classifier.accuracy(&prep.test),
        violation(&test_gc.raw_statistics(cfg.metric))?,
        violation(&train_gc.raw_statistics(cfg.metric))?,
    ))
}

fn run_arm(
    method: Method,
    knowledge: Option<NoiseKnowledge>,
    estimate: Option<&NoiseEstimate>,
    truth: &[NoiseRates],
    prep: &Prepared,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Outcome> {
    let start = Instant::now();
    let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
    let constraint = |correction| ConstraintSpec { metric: cfg.metric, delta: cfg.delta, correction };
    let need_estimate = || estimate.ok_or_else(|| Error::InvalidConfig("no noise estimate".into()));
    let mut alpha = None;
    let fit = match method {
        Method::Clean => fit_constrained(
            &prep.train_clean,
            &LossSpec::plain(),
            &constraint(Correction::None),
            &train_cfg,
            prep.val_clean.as_ref(),
        )?,
        Method::Corrupt => fit_constrained(
            &prep.train_noisy,
            &LossSpec::plain(),
            &constraint(Correction::None),
            &train_cfg,
            prep.val_noisy.as_ref(),
        )?,
        Method::Surrogate => {
            let est = need_estimate()?;
            fit_constrained(
                &prep.train_noisy,
                &LossSpec::surrogate(est.clone()),
                &constraint(Correction::Surrogate(est.clone())),
                &train_cfg,
                prep.val_noisy.as_ref(),
            )?
        }
        Method::GroupPeer => {
            let est = need_estimate()?;
            let cspec = constraint(Correction::Peer(est.clone()));
            let best = match &prep.val_noisy {
                Some(val) if cfg.alpha_grid.len() > 1 => {
                    tune_alpha(&prep.train_noisy, val, &cfg.alpha_grid, est, &cspec, &train_cfg)?.best
                }
                _ => cfg.alpha_grid[0],
            };
            alpha = Some(best);
            fit_constrained(
                &prep.train_noisy,
                &LossSpec::group_peer(est.clone(), best),
                &cspec,
                &train_cfg,
                prep.val_noisy.as_ref(),
            )?
        }
    };
    let (accuracy, test_violation, train_violation) = evaluate(&fit.classifier, prep, cfg)?;
    Ok(Outcome {
        row: ResultRow {
            method,
            noise_knowledge: knowledge,
            seed,
            accuracy,
            test_violation,
            train_violation,
            alpha,
            eps_error: estimate.map(|e| mean_abs_error(e, truth)),
        },
        seconds: start.elapsed().as_secs_f64(),
    })
}

struct SeedResult {
    outcomes: Vec<(Method, Option<NoiseKnowledge>, Result<Outcome>)>,
    estimates: Vec<EstimateRow>,
    failure: Option<Failure>,
}

fn run_seed(data: &Dataset, cfg: &ExperimentConfig, seed: u64) -> SeedResult {
    let fail = |e: Error| SeedResult {
        outcomes: Vec::new(),
        estimates: Vec::new(),
        failure: Some(Failure { method: None, noise_knowledge: None, seed, error: e.to_string() }),
    };
    let prep = match prepare(data, cfg, seed) {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    let truth = match cfg.noise.resolve(&prep.train_noisy) {
        Ok(t) => t,
        Err(e) => return fail(e),
    };
    let arms = cfg.arms();

    let mut estimates = Vec::new();
    let mut by_knowledge: Vec<(NoiseKnowledge, Result<NoiseEstimate>)> = Vec::new();
    for &k in &cfg.noise_knowledge {
        if !arms.iter().any(|a| a.1 == Some(k)) || by_knowledge.iter().any(|b| b.0 == k) {
            continue;
        }
        let est = match k {
            NoiseKnowledge::True => NoiseEstimate::from_spec(&cfg.noise, &prep.train_noisy),
            NoiseKnowledge::Estimated => {
                let est_cfg = TrainConfig { seed, ..cfg.train.clone() };
                estimate_from_data(&prep.train_noisy, cfg.estimation_folds, &est_cfg).map(|(e, _)| e)
            }
        };
        if let Ok(e) = &est {
            for (z, g) in e.groups().iter().enumerate() {
                estimates.push(EstimateRow {
                    seed,
                    noise_knowledge: k,
                    group: e.names()[z].clone(),
                    eps_plus: truth[z].eps_plus,
                    eps_minus: truth[z].eps_minus,
                    eps_plus_estimate: g.eps_plus,
                    eps_minus_estimate: g.eps_minus,
                    clipped: g.clipped,
                });
            }
        }
        by_knowledge.push((k, est));
    }

    let outcomes = arms
        .par_iter()
        .map(|&(method, knowledge)| {
            let est = match knowledge.and_then(|k| by_knowledge.iter().find(|b| b.0 == k)) {
                Some((_, Ok(e))) => Some(e),
                Some((_, Err(e))) => {
                    return (method, knowledge, Err(Error::InvalidConfig(format!("noise estimation failed: {e}"))))
                }
                None => None,
            };
            let out = run_arm(method, knowledge, est, &truth, &prep, cfg, seed)
                .map_err(|e| e.context(format!("method {method:?}, seed {seed}")));
            (method, knowledge, out)
        })
        .collect();
    SeedResult { outcomes, estimates, failure: None }
}

/// Runs every seed and method. Failed `(method, seed)` cells are reported in
/// the summary and skipped; the remaining rows are still returned.
pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<BenchmarkOutput> {
    cfg.validate()?;
    let data = cfg.data.load()?;
    let per_seed: Vec<SeedResult> = cfg.seeds.par_iter().map(|&seed| run_seed(&data, cfg, seed)).collect();

    let mut rows = Vec::new();
    let mut timings = Vec::new();
    let mut estimates = Vec::new();
    let mut failures = Vec::new();
    for (seed, res) in cfg.seeds.iter().zip(per_seed) {
        failures.extend(res.failure);
        estimates.extend(res.estimates);
        for (method, knowledge, out) in res.outcomes {
            match out {
                Ok(o) => {
                    timings.push(TimingRow { method, noise_knowledge: knowledge, seed: *seed, seconds: o.seconds });
                    rows.push(o.row);
                }
                Err(e) => {
                    warn!("{e}");
                    failures.push(Failure { method: Some(method), noise_knowledge: knowledge, seed: *seed, error: e.to_string() });
                }
            }
        }
    }
    // single ordering for every output: (method, knowledge) then seed position
    let position = |s: u64| cfg.seeds.iter().position(|&x| x == s).unwrap_or(usize::MAX);
    rows.sort_by_key(|r| (r.method, r.noise_knowledge, position(r.seed)));
    timings.sort_by_key(|r| (r.method, r.noise_knowledge, position(r.seed)));
    let summary = summarize(&rows, cfg.delta, cfg.metric, failures);
    Ok(BenchmarkOutput { rows, estimates, timings, summary })
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `results.csv`, `estimates.csv`, `timings.csv` and `summary.json`.
pub fn write_outputs(out: &BenchmarkOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_csv(&dir.join("results.csv"), &out.rows)?;
    write_csv(&dir.join("estimates.csv"), &out.estimates)?;
    write_csv(&dir.join("timings.csv"), &out.timings)?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&out.summary)? + "\n")?;
    info!("wrote results to {}", dir.display());
    Ok(())
}

/// Reads a `results.csv` back.
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// One long-format row of a noise sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub method: Method,
    pub noise_knowledge: Option<NoiseKnowledge>,
    pub seed: u64,
    pub accuracy: f64,
    pub test_violation: f64,
    pub train_violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub summaries: Vec<(f64, Summary)>,
}

/// Symmetric noise `ε⁺ = ε⁻ = ε` on `noised_group` only, every other group
/// clean, one benchmark per grid point.
pub fn noise_sweep(base: &ExperimentConfig, grid: &[f64], noised_group: &str) -> Result<SweepOutput> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("noise grid is empty".into()));
    }
    let names = base.data.load()?.group_names().to_vec();
    if !names.iter().any(|n| n == noised_group) {
        return Err(Error::MissingGroupNoise(noised_group.to_string()));
    }
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for &eps in grid {
        let noise = NoiseSpec::new(
            names
                .iter()
                .map(|n| Ok((n.clone(), if n == noised_group { NoiseRates::new(eps, eps)? } else { NoiseRates::new(0.0, 0.0)? })))
                .collect::<Result<_>>()?,
        )?;
        let cfg = ExperimentConfig { noise, ..base.clone() };
        let out = run_benchmark(&cfg).map_err(|e| e.context(format!("noise level {eps}")))?;
        rows.extend(out.rows.iter().map(|r| SweepRow {
            eps,
            method: r.method,
            noise_knowledge: r.noise_knowledge,
            seed: r.seed,
            accuracy: r.accuracy,
            test_violation: r.test_violation,
            train_violation: r.train_violation,
        }));
        summaries.push((eps, out.summary));
    }
    Ok(SweepOutput { rows, summaries })
}

pub fn write_sweep(out: &SweepOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_csv(&dir.join("sweep.csv"), &out.rows)?;
    let summaries: Vec<serde_json::Value> = out
        .summaries
        .iter()
        .map(|(eps, s)| serde_json::json!({ "eps": eps, "summary": s }))
        .collect();
    fs::write(dir.join("sweep_summary.json"), serde_json::to_string_pretty(&summaries)? + "\n")?;
    Ok(())
}

/// Trainer-based check that a perturbed noise estimate costs at most
/// `4τℓ̄` of training surrogate risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessConfig {
    pub taus: Vec<f64>,
    pub seeds: Vec<u64>,
    pub per_group: usize,
    pub noise: NoiseSpec,
    /// Upper clip of the logistic loss, `ℓ̄`.
    pub loss_bound: f64,
    pub train: TrainConfig,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        let rates = |p, m| NoiseRates { eps_plus: p, eps_minus: m };
        Self {
            taus: vec![0.01, 0.05],
            seeds: (0..5).collect(),
            per_group: 1000,
            noise: NoiseSpec::new(vec![("female".into(), rates(0.15, 0.25)), ("male".into(), rates(0.2, 0.1))])
                .expect("static noise rates are valid"),
            loss_bound: 10.0,
            train: TrainConfig { epochs: 100, ..TrainConfig::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessPoint {
    pub tau: f64,
    pub seed: u64,
    /// Largest of the four estimate deviations actually used.
    pub deviation: f64,
    pub excess: f64,
    pub bound: f64,
    pub ratio: f64,
}

/// `max(|ε̂⁺−ε⁺|, |ε̂⁺/Δ̂ − ε⁺/Δ|, |ε̂⁻−ε⁻|, |(1−ε̂⁻)/Δ̂ − (1−ε⁻)/Δ|)`
pub fn estimate_deviation(est: (f64, f64), truth: (f64, f64)) -> f64 {
    let (ep, em) = est;
    let (tp, tm) = truth;
    let (d_hat, d) = (1.0 - ep - em, 1.0 - tp - tm);
    (ep - tp)
        .abs()
        .max((ep / d_hat - tp / d).abs())
        .max((em - tm).abs())
        .max(((1.0 - em) / d_hat - (1.0 - tm) / d).abs())
}

/// Largest step along `direction` whose deviation stays within `tau`.
fn perturb(truth: (f64, f64), direction: (f64, f64), tau: f64) -> (f64, f64) {
    let at = |s: f64| {
        (
            (truth.0 + s * tau * direction.0).clamp(0.0, 0.49),
            (truth.1 + s * tau * direction.1).clamp(0.0, 0.49),
        )
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    if estimate_deviation(at(hi), truth) <= tau {
        return at(hi);
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if estimate_deviation(at(mid), truth) <= tau {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(lo)
}

fn surrogate_risk(model: &LinearModel, ds: &Dataset, est: &NoiseEstimate, kind: LossKind) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..ds.len() {
        let g = est.group(ds.group(i));
        let (a, b) = surrogate_weights(ds.label(i), g.eps_plus, g.eps_minus)?;
        let s = model.score(ds.row(i));
        total += a * base_loss(kind, s, 1) + b * base_loss(kind, s, -1);
    }
    Ok(total / ds.len() as f64)
}

/// For every `(τ, seed)`: fit with the true rates and with rates perturbed to
/// deviation `τ`, then compare their surrogate risk under the true rates.
pub fn estimation_robustness(cfg: &RobustnessConfig) -> Result<Vec<RobustnessPoint>> {
    let kind = LossKind::Logistic { clip: Some(cfg.loss_bound) };
    let jobs: Vec<(f64, u64)> = cfg.taus.iter().flat_map(|&t| cfg.seeds.iter().map(move |&s| (t, s))).collect();
    jobs.par_iter()
        .map(|&(tau, seed)| {
            let raw = synth_generate(&preset("adultlike", cfg.per_group, seed)?)?;
            let clean = Standardizer::fit(&raw).apply(&raw)?;
            let streams: Vec<u64> = (0..clean.len() as u64).collect();
            let noisy = inject_noise_with_streams(&clean, &cfg.noise, seed, &streams)?;
            let truth = NoiseEstimate::from_spec(&cfg.noise, &noisy)?;

            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut deviation: f64 = 0.0;
            let perturbed: Vec<GroupEstimate> = truth
                .groups()
                .iter()
                .map(|g| {
                    let dir = (
                        if rng.random_bool(0.5) { 1.0 } else { -1.0 },
                        if rng.random_bool(0.5) { 1.0 } else { -1.0 },
                    );
                    let (ep, em) = perturb((g.eps_plus, g.eps_minus), dir, tau);
                    deviation = deviation.max(estimate_deviation((ep, em), (g.eps_plus, g.eps_minus)));
                    GroupEstimate { eps_plus: ep, eps_minus: em, ..*g }
                })
                .collect();
            let perturbed = NoiseEstimate::new(truth.names().to_vec(), perturbed)?;

            let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
            let spec = |est: &NoiseEstimate| LossSpec { kind, ..LossSpec::surrogate(est.clone()) };
            let exact = fit_unconstrained(&noisy, &spec(&truth), &train_cfg)?;
            let approx = fit_unconstrained(&noisy, &spec(&perturbed), &train_cfg)?;
            let excess = surrogate_risk(&approx, &noisy, &truth, kind)? - surrogate_risk(&exact, &noisy, &truth, kind)?;
            let bound = 4.0 * tau * cfg.loss_bound;
            Ok(RobustnessPoint { tau, seed, deviation, excess, bound, ratio: excess / bound })
        })
        .collect()
}
