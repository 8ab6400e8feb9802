use log::{debug, warn};

use super::selection::selection_score;
use super::{fit_with_costs, LinearModel, LossSpec, RandomizedClassifier, TrainConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::fairness::{statistic_coefficients, statistics_with_coefficients, violation, Classifier, ConstraintSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedFit {
    /// Selected component, or the full mixture when `deterministic_output` is off.
    pub classifier: RandomizedClassifier,
    /// Uniform mixture of every round's best response.
    pub mixture: RandomizedClassifier,
    pub components: Vec<LinearModel>,
    /// Violation of the corrected statistics on the training data, per round.
    pub train_violations: Vec<f64>,
    /// Final multipliers, indexed `[row][z][z']`.
    pub multipliers: Vec<Vec<Vec<f64>>>,
    pub selected: Option<usize>,
}

impl ConstrainedFit {
    pub fn feasible_on_train(&self, delta: f64) -> bool {
        self.train_violations.iter().any(|&v| v <= delta)
    }
}

/// Saddle-point search for `min_f max_{λ∈[0,B]} L(f, λ)`.
///
/// One multiplier per statistic row and ordered group pair `(z, z')` prices
/// `F_z − F_z' − δ`. Each round the learner best-responds to the current
/// prices (each statistic is linear in per-example predictions, so prices turn
/// into per-example costs on `σ(s)`), then the prices take a projected
/// gradient step using hard-prediction statistics on the training data. Each
/// multiplier has its own AdaGrad step `η / √(Σ g²)`, so the first move is `η`
/// whatever the size of the violation.
///
/// `validation` (noisy labels) is used to pick one component when
/// `deterministic_output` is set; without it the training data is used.
pub fn fit_constrained(
    ds: &Dataset,
    spec: &LossSpec,
    cspec: &ConstraintSpec,
    cfg: &TrainConfig,
    validation: Option<&Dataset>,
) -> Result<ConstrainedFit> {
    cfg.validate()?;
    if !(cspec.delta >= 0.0) {
        return Err(Error::InvalidConfig(format!("fairness tolerance {} must be non-negative", cspec.delta)));
    }
    let m = ds.num_groups();
    if m < 2 {
        return Err(Error::TooFewGroups);
    }
    let rows = cspec.metric.rows();
    let coeffs = rows
        .iter()
        .map(|&r| statistic_coefficients(ds, &cspec.correction, r))
        .collect::<Result<Vec<_>>>()?;
    let n = ds.len() as f64;

    let mut lambda = vec![vec![vec![0.0; m]; m]; rows.len()];
    let mut grad_sq = lambda.clone();
    let mut components = Vec::with_capacity(cfg.outer_rounds);
    let mut train_violations = Vec::with_capacity(cfg.outer_rounds);

    for round in 0..cfg.outer_rounds {
        let costs = example_costs(ds, &coeffs, &lambda, n);
        let model = fit_with_costs(ds, spec, cfg, costs.as_deref())
            .map_err(|e| e.context(format!("best response in round {}", round + 1)))?;

        let pred = model.predict_all(ds);
        let stats = statistics_with_coefficients(ds, &coeffs, &pred);
        let v = violation(&stats)?;
        debug!("round {}: train violation {v:.4}", round + 1);
        train_violations.push(v);

        for (r, stat) in stats.iter().enumerate() {
            for z in 0..m {
                for zp in 0..m {
                    if z == zp {
                        continue;
                    }
                    let g = stat[z] - stat[zp] - cspec.delta;
                    grad_sq[r][z][zp] += g * g;
                    if grad_sq[r][z][zp] > 0.0 {
                        let step = lambda[r][z][zp] + cfg.multiplier_step * g / grad_sq[r][z][zp].sqrt();
                        lambda[r][z][zp] = step.clamp(0.0, cfg.multiplier_bound);
                    }
                }
            }
        }
        components.push(model);
    }

    if !train_violations.iter().any(|&v| v <= cspec.delta) {
        warn!("no round met the fairness tolerance {} on training statistics", cspec.delta);
    }

    let mixture = RandomizedClassifier::uniform(components.clone())?;
    let (classifier, selected) = if cfg.deterministic_output {
        let eval = validation.unwrap_or(ds);
        let mut best: Option<(usize, (f64, f64))> = None;
        for (k, model) in components.iter().enumerate() {
            let score = selection_score(&RandomizedClassifier::single(model.clone()), eval, spec, cspec)?;
            let key = (score.excess_violation, score.loss);
            if best.is_none_or(|(_, b)| key < b) {
                best = Some((k, key));
            }
        }
        let k = best.map(|(k, _)| k).ok_or(Error::NoCandidates)?;
        (RandomizedClassifier::single(components[k].clone()), Some(k))
    } else {
        (mixture.clone(), None)
    };

    Ok(ConstrainedFit { classifier, mixture, components, train_violations, multipliers: lambda, selected })
}

/// `costᵢ = n · Σ_rows cᵢ · Σ_{z'≠zᵢ} (λ[zᵢ][z'] − λ[z'][zᵢ])`, or `None`
/// when every multiplier is zero.
fn example_costs(ds: &Dataset, coeffs: &[Vec<f64>], lambda: &[Vec<Vec<f64>>], n: f64) -> Option<Vec<f64>> {
    if lambda.iter().flatten().flatten().all(|&l| l == 0.0) {
        return None;
    }
    let m = ds.num_groups();
    let net: Vec<Vec<f64>> = lambda
        .iter()
        .map(|lr| (0..m).map(|z| (0..m).filter(|&zp| zp != z).map(|zp| lr[z][zp] - lr[zp][z]).sum()).collect())
        .collect();
    Some(
        (0..ds.len())
            .map(|i| {
                let z = ds.group(i);
                n * coeffs.iter().zip(&net).map(|(c, nr)| c[i] * nr[z]).sum::<f64>()
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fairness::{confusion, Correction, LabelFlavor, Metric};
    use crate::trainer::fit_unconstrained;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    // two groups with shifted clusters so the unconstrained fit is unfair
    fn shifted(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut groups = Vec::new();
        for i in 0..n {
            let y: i8 = if i % 2 == 0 { 1 } else { -1 };
            let z = (i / 2) % 2;
            let shift = if z == 0 { 0.0 } else { -1.0 };
            rows.push(vec![f64::from(y) + shift + normal.sample(&mut rng), normal.sample(&mut rng)]);
            labels.push(y);
            groups.push(z);
        }
        Dataset::new(&rows, labels, groups, vec!["a".into(), "b".into()]).unwrap()
    }

    fn quick() -> TrainConfig {
        TrainConfig { outer_rounds: 15, epochs: 20, multiplier_step: 2.0, ..TrainConfig::default() }
    }

    #[test]
    fn first_round_equals_unconstrained() {
        let ds = shifted(300, 1);
        let cfg = quick();
        let spec = LossSpec::plain();
        let cspec = ConstraintSpec { metric: Metric::EqualOdds, delta: 0.02, correction: Correction::None };
        let fit = fit_constrained(&ds, &spec, &cspec, &cfg, None).unwrap();
        assert_eq!(fit.components[0], fit_unconstrained(&ds, &spec, &cfg).unwrap());
    }

    #[test]
    fn multipliers_stay_in_bounds() {
        let ds = shifted(300, 2);
        let cfg = TrainConfig { multiplier_bound: 0.5, ..quick() };
        let cspec = ConstraintSpec { metric: Metric::EqualOdds, delta: 0.0, correction: Correction::None };
        let fit = fit_constrained(&ds, &LossSpec::plain(), &cspec, &cfg, None).unwrap();
        assert!(fit.multipliers.iter().flatten().flatten().all(|&l| (0.0..=0.5).contains(&l)));
        let total: f64 = fit.mixture.components().iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vacuous_tolerance_matches_unconstrained() {
        let ds = shifted(400, 3);
        let cfg = quick();
        let cspec = ConstraintSpec { metric: Metric::EqualOdds, delta: 1.0, correction: Correction::None };
        let fit = fit_constrained(&ds, &LossSpec::plain(), &cspec, &cfg, None).unwrap();
        let plain = fit_unconstrained(&ds, &LossSpec::plain(), &cfg).unwrap();
        assert!((fit.classifier.accuracy(&ds) - plain.accuracy(&ds)).abs() <= 0.01);
    }

    #[test]
    fn constraint_reduces_violation() {
        let ds = shifted(1000, 4);
        let cfg = quick();
        let cspec = ConstraintSpec { metric: Metric::Tpr, delta: 0.02, correction: Correction::None };
        let plain = fit_unconstrained(&ds, &LossSpec::plain(), &cfg).unwrap();
        let before = violation(&confusion(&plain, &ds, LabelFlavor::Clean).unwrap().raw_statistics(Metric::Tpr)).unwrap();
        let fit = fit_constrained(&ds, &LossSpec::plain(), &cspec, &cfg, None).unwrap();
        let after =
            violation(&confusion(&fit.classifier, &ds, LabelFlavor::Clean).unwrap().raw_statistics(Metric::Tpr)).unwrap();
        assert!(before > 0.1, "fixture should start unfair, got {before}");
        assert!(after < before / 2.0, "{after} vs {before}");
    }
}
