//! Logistic base learner, the Lagrangian reduction for fairness constraints,
//! and validation-based model and alpha selection.

mod model;
mod reduction;
mod selection;

pub use model::{fingerprint, LinearModel, ModelFile, RandomizedClassifier};
pub use reduction::{fit_constrained, ConstrainedFit};
pub use selection::{select_model, selection_score, tune_alpha, AlphaPoint, AlphaReport, SelectionScore};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::loss::{base_loss, base_loss_derivative, make_peer_pairing, sigmoid, surrogate_weights, LossKind, PeerPairing};
use crate::noise_estimation::NoiseEstimate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub outer_rounds: usize,
    pub multiplier_bound: f64,
    pub multiplier_step: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
    /// Return the best single component instead of the uniform mixture.
    pub deterministic_output: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            outer_rounds: 50,
            multiplier_bound: 100.0,
            multiplier_step: 0.5,
            learning_rate: 0.1,
            epochs: 200,
            batch_size: 256,
            l2: 1e-4,
            seed: 0,
            deterministic_output: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_rounds == 0 {
            return Err(Error::InvalidConfig("outer_rounds must be at least 1".into()));
        }
        if !(self.multiplier_bound > 0.0) {
            return Err(Error::InvalidConfig("multiplier_bound must be positive".into()));
        }
        if !(self.multiplier_step > 0.0) {
            return Err(Error::InvalidConfig("multiplier_step must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || !(self.l2 >= 0.0) {
            return Err(Error::InvalidConfig("learning_rate, batch_size must be positive and l2 non-negative".into()));
        }
        Ok(())
    }
}

/// Per-example training objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "objective")]
pub enum Objective {
    /// `ℓ(s, y)` on the labels stored in the dataset.
    Plain,
    Surrogate { estimate: NoiseEstimate },
    GroupPeer { estimate: NoiseEstimate, alpha: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    #[serde(flatten)]
    pub objective: Objective,
}

impl LossSpec {
    pub fn plain() -> Self {
        Self { kind: LossKind::LOGISTIC, objective: Objective::Plain }
    }

    pub fn surrogate(estimate: NoiseEstimate) -> Self {
        Self { kind: LossKind::LOGISTIC, objective: Objective::Surrogate { estimate } }
    }

    pub fn group_peer(estimate: NoiseEstimate, alpha: f64) -> Self {
        Self { kind: LossKind::LOGISTIC, objective: Objective::GroupPeer { estimate, alpha } }
    }
}

/// Per-example constants of an objective on a fixed dataset.
enum Prepared {
    Plain,
    /// `(a, b)` with loss `a·ℓ(s,+1) + b·ℓ(s,−1)`.
    Surrogate(Vec<(f64, f64)>),
    Peer { inv_delta: Vec<f64>, alpha: f64 },
}

impl Prepared {
    fn new(ds: &Dataset, spec: &LossSpec) -> Result<Self> {
        let check = |est: &NoiseEstimate| {
            if est.num_groups() != ds.num_groups() {
                return Err(Error::ShapeMismatch(format!(
                    "estimate covers {} groups, dataset has {}",
                    est.num_groups(),
                    ds.num_groups()
                )));
            }
            Ok(())
        };
        match &spec.objective {
            Objective::Plain => Ok(Prepared::Plain),
            Objective::Surrogate { estimate } => {
                check(estimate)?;
                let weights = (0..ds.len())
                    .map(|i| {
                        let g = estimate.group(ds.group(i));
                        surrogate_weights(ds.label(i), g.eps_plus, g.eps_minus)
                    })
                    .collect::<Result<_>>()?;
                Ok(Prepared::Surrogate(weights))
            }
            Objective::GroupPeer { estimate, alpha } => {
                check(estimate)?;
                if !alpha.is_finite() || *alpha < 0.0 {
                    return Err(Error::InvalidConfig(format!("peer alpha {alpha} must be finite and non-negative")));
                }
                let mut inv_delta = Vec::with_capacity(ds.len());
                for i in 0..ds.len() {
                    let delta = estimate.delta(ds.group(i));
                    if !(delta > 0.0) {
                        return Err(Error::EstimationDegenerate(ds.group(i)));
                    }
                    inv_delta.push(1.0 / delta);
                }
                Ok(Prepared::Peer { inv_delta, alpha: *alpha })
            }
        }
    }

    /// Adds example `i`'s loss gradient (times `scale`) into `grad`; returns its loss.
    #[allow(clippy::too_many_arguments)]
    fn accumulate(
        &self,
        kind: LossKind,
        ds: &Dataset,
        pairing: Option<&PeerPairing>,
        cost: f64,
        w: &[f64],
        i: usize,
        scale: f64,
        grad: &mut [f64],
    ) -> f64 {
        let x = ds.row(i);
        let s = dot(w, x);
        let (mut loss, mut d) = match self {
            Prepared::Plain => {
                let y = ds.label(i);
                (base_loss(kind, s, y), base_loss_derivative(kind, s, y))
            }
            Prepared::Surrogate(ab) => {
                let (a, b) = ab[i];
                (
                    a * base_loss(kind, s, 1) + b * base_loss(kind, s, -1),
                    a * base_loss_derivative(kind, s, 1) + b * base_loss_derivative(kind, s, -1),
                )
            }
            Prepared::Peer { inv_delta, alpha } => {
                let pairing = pairing.expect("peer objective needs a pairing");
                let (p1, p2) = (pairing.first[i], pairing.second[i]);
                let xp = ds.row(p1);
                let sp = dot(w, xp);
                let yp = ds.label(p2);
                let c = inv_delta[i] * alpha;
                let dp = -c * base_loss_derivative(kind, sp, yp);
                axpy(scale * dp, xp, grad);
                let y = ds.label(i);
                (
                    inv_delta[i] * base_loss(kind, s, y) - c * base_loss(kind, sp, yp),
                    inv_delta[i] * base_loss_derivative(kind, s, y),
                )
            }
        };
        if cost != 0.0 {
            let p = sigmoid(s);
            loss += cost * p;
            d += cost * p * (1.0 - p);
        }
        axpy(scale * d, x, grad);
        loss
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Full-data objective and its gradient at `w`:
/// mean loss, plus `costᵢ·σ(sᵢ)` per example, plus `(l2/2)·‖w₁..‖²`.
pub fn objective_and_gradient(
    ds: &Dataset,
    spec: &LossSpec,
    pairing: Option<&PeerPairing>,
    costs: Option<&[f64]>,
    l2: f64,
    w: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let prepared = Prepared::new(ds, spec)?;
    if matches!(prepared, Prepared::Peer { .. }) && pairing.is_none() {
        return Err(Error::InvalidConfig("peer objective needs a pairing".into()));
    }
    let n = ds.len() as f64;
    let mut grad = vec![0.0; ds.dim()];
    let mut total = 0.0;
    for i in 0..ds.len() {
        let cost = costs.map_or(0.0, |c| c[i]);
        total += prepared.accumulate(spec.kind, ds, pairing, cost, w, i, 1.0 / n, &mut grad);
    }
    let mut value = total / n;
    for j in 1..w.len() {
        value += 0.5 * l2 * w[j] * w[j];
        grad[j] += l2 * w[j];
    }
    Ok((value, grad))
}

/// Minibatch SGD on the mean loss with L2 (intercept excluded).
pub fn fit_unconstrained(ds: &Dataset, spec: &LossSpec, cfg: &TrainConfig) -> Result<LinearModel> {
    fit_with_costs(ds, spec, cfg, None)
}

/// [`fit_unconstrained`] with an additional per-example cost `costᵢ·σ(sᵢ)`.
///
/// Learning rate decays as `lr/√epoch`. Rows are reshuffled and peer pairs
/// redrawn every epoch.
pub fn fit_with_costs(ds: &Dataset, spec: &LossSpec, cfg: &TrainConfig, costs: Option<&[f64]>) -> Result<LinearModel> {
    cfg.validate()?;
    if let Some(c) = costs {
        if c.len() != ds.len() {
            return Err(Error::ShapeMismatch(format!("{} costs for {} rows", c.len(), ds.len())));
        }
    }
    let prepared = Prepared::new(ds, spec)?;
    let d = ds.dim();
    let mut w = vec![0.0; d];
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pair_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    pair_rng.set_stream(1);
    let mut grad = vec![0.0; d];

    for epoch in 1..=cfg.epochs {
        let lr = cfg.learning_rate / (epoch as f64).sqrt();
        order.shuffle(&mut shuffle_rng);
        let pairing = match prepared {
            Prepared::Peer { .. } => Some(make_peer_pairing(ds, pair_rng.random())?),
            _ => None,
        };
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let cost = costs.map_or(0.0, |c| c[i]);
                epoch_loss += prepared.accumulate(spec.kind, ds, pairing.as_ref(), cost, &w, i, scale, &mut grad);
            }
            for j in 0..d {
                let reg = if j == 0 { 0.0 } else { cfg.l2 * w[j] };
                w[j] -= lr * (grad[j] + reg);
            }
        }
        if !epoch_loss.is_finite() || w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
    }
    Ok(LinearModel { weights: w })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise_estimation::GroupEstimate;
    use rand_distr::{Distribution, Normal};

    pub(crate) fn blobs(n: usize, sep: f64, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut groups = Vec::new();
        for i in 0..n {
            let y: i8 = if i % 2 == 0 { 1 } else { -1 };
            let c = f64::from(y) * sep / 2.0;
            rows.push(vec![c + normal.sample(&mut rng), c + normal.sample(&mut rng)]);
            labels.push(y);
            groups.push((i / 2) % 2);
        }
        Dataset::new(&rows, labels, groups, vec!["a".into(), "b".into()]).unwrap()
    }

    fn estimate() -> NoiseEstimate {
        NoiseEstimate::new(
            vec!["a".into(), "b".into()],
            vec![
                GroupEstimate { eps_plus: 0.2, eps_minus: 0.1, prior_plus: 0.5, clipped: false },
                GroupEstimate { eps_plus: 0.05, eps_minus: 0.3, prior_plus: 0.4, clipped: false },
            ],
        )
        .unwrap()
    }

    #[test]
    fn separable_blobs_fit() {
        let ds = blobs(400, 8.0, 1);
        let cfg = TrainConfig { epochs: 50, ..TrainConfig::default() };
        let m = fit_unconstrained(&ds, &LossSpec::plain(), &cfg).unwrap();
        assert!(m.accuracy(&ds) >= 0.99);
    }

    #[test]
    fn zero_epochs_returns_zeros() {
        let ds = blobs(20, 2.0, 1);
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let m = fit_unconstrained(&ds, &LossSpec::plain(), &cfg).unwrap();
        assert_eq!(m.weights, vec![0.0; 3]);
    }

    #[test]
    fn fit_is_deterministic() {
        let ds = blobs(200, 2.0, 3);
        let cfg = TrainConfig { epochs: 20, seed: 9, ..TrainConfig::default() };
        let spec = LossSpec::group_peer(estimate(), 0.5);
        assert_eq!(fit_unconstrained(&ds, &spec, &cfg).unwrap(), fit_unconstrained(&ds, &spec, &cfg).unwrap());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let ds = blobs(60, 1.5, 4);
        let pairing = make_peer_pairing(&ds, 7).unwrap();
        let costs: Vec<f64> = (0..ds.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let specs = [LossSpec::plain(), LossSpec::surrogate(estimate()), LossSpec::group_peer(estimate(), 0.7)];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for spec in &specs {
            for _ in 0..5 {
                let w: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                let (_, g) = objective_and_gradient(&ds, spec, Some(&pairing), Some(&costs), 1e-3, &w).unwrap();
                for j in 0..3 {
                    let h = 1e-5;
                    let mut wp = w.clone();
                    wp[j] += h;
                    let mut wm = w.clone();
                    wm[j] -= h;
                    let fp = objective_and_gradient(&ds, spec, Some(&pairing), Some(&costs), 1e-3, &wp).unwrap().0;
                    let fm = objective_and_gradient(&ds, spec, Some(&pairing), Some(&costs), 1e-3, &wm).unwrap().0;
                    let fd = (fp - fm) / (2.0 * h);
                    assert!((fd - g[j]).abs() <= 1e-5 * g[j].abs().max(1.0), "{fd} vs {}", g[j]);
                }
            }
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let ds = blobs(20, 2.0, 1);
        let cfg = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(fit_unconstrained(&ds, &LossSpec::plain(), &cfg).is_err());
    }
}
