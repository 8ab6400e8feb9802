use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_constrained, LossSpec, Objective, RandomizedClassifier, TrainConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::fairness::{constraint_statistics, violation, Classifier, ConstraintSpec, Correction};
use crate::loss::surrogate_weights;
use crate::noise_estimation::NoiseEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionScore {
    pub violation: f64,
    /// `max(0, violation − δ)`
    pub excess_violation: f64,
    /// Mean 0-1 loss, noise-corrected when an estimate is available.
    pub loss: f64,
}

/// Expected 0-1 loss per example, unbiased for the clean loss when `estimate`
/// is the true noise.
fn corrected_zero_one(pred: &[f64], ds: &Dataset, estimate: Option<&NoiseEstimate>) -> Result<f64> {
    let mut total = 0.0;
    for (i, &p) in pred.iter().enumerate() {
        // predicting +1 costs ℓ(·,−1), predicting −1 costs ℓ(·,+1)
        let (cost_if_neg, cost_if_pos) = match estimate {
            Some(est) => {
                let g = est.group(ds.group(i));
                surrogate_weights(ds.label(i), g.eps_plus, g.eps_minus)?
            }
            None if ds.label(i) == 1 => (1.0, 0.0),
            None => (0.0, 1.0),
        };
        total += p * cost_if_pos + (1.0 - p) * cost_if_neg;
    }
    Ok(total / ds.len() as f64)
}

fn estimate_of(spec: &LossSpec) -> Option<&NoiseEstimate> {
    match &spec.objective {
        Objective::Plain => None,
        Objective::Surrogate { estimate } | Objective::GroupPeer { estimate, .. } => Some(estimate),
    }
}

/// Feasibility and loss of `classifier` on `ds`, each measured the way the
/// method under `spec`/`cspec` sees its data.
pub fn selection_score(
    classifier: &RandomizedClassifier,
    ds: &Dataset,
    spec: &LossSpec,
    cspec: &ConstraintSpec,
) -> Result<SelectionScore> {
    let pred = classifier.predict_all(ds);
    let v = violation(&constraint_statistics(ds, cspec, &pred)?)?;
    Ok(SelectionScore {
        violation: v,
        excess_violation: (v - cspec.delta).max(0.0),
        loss: corrected_zero_one(&pred, ds, estimate_of(spec))?,
    })
}

/// Index of the candidate with the lowest noise-corrected validation loss,
/// ties broken by the surrogate-constraint violation.
pub fn select_model(
    candidates: &[RandomizedClassifier],
    validation: &Dataset,
    est: &NoiseEstimate,
    cspec: &ConstraintSpec,
) -> Result<usize> {
    let spec = LossSpec::surrogate(est.clone());
    let cspec = ConstraintSpec { correction: Correction::Surrogate(est.clone()), ..cspec.clone() };
    let mut best: Option<(usize, (f64, f64))> = None;
    for (k, c) in candidates.iter().enumerate() {
        let s = selection_score(c, validation, &spec, &cspec)?;
        let key = (s.loss, s.violation);
        if best.is_none_or(|(_, b)| key < b) {
            best = Some((k, key));
        }
    }
    best.map(|(k, _)| k).ok_or(Error::NoCandidates)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaPoint {
    pub alpha: f64,
    pub score: Option<SelectionScore>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaReport {
    pub best: f64,
    pub points: Vec<AlphaPoint>,
}

/// Grid search over the peer balance parameter.
///
/// Every grid point trains the constrained peer pipeline; the winner
/// minimizes the excess peer-constraint violation on the noisy validation
/// split, then the noise-corrected validation loss. Failed points are
/// recorded and skipped.
pub fn tune_alpha(
    train: &Dataset,
    validation: &Dataset,
    grid: &[f64],
    estimate: &NoiseEstimate,
    cspec: &ConstraintSpec,
    cfg: &TrainConfig,
) -> Result<AlphaReport> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("alpha grid is empty".into()));
    }
    let cspec = ConstraintSpec { correction: Correction::Peer(estimate.clone()), ..cspec.clone() };
    let points: Vec<AlphaPoint> = grid
        .par_iter()
        .map(|&alpha| {
            let spec = LossSpec::group_peer(estimate.clone(), alpha);
            let scored = fit_constrained(train, &spec, &cspec, cfg, Some(validation))
                .and_then(|fit| selection_score(&fit.classifier, validation, &spec, &cspec));
            match scored {
                Ok(score) => AlphaPoint { alpha, score: Some(score), error: None },
                Err(e) => {
                    warn!("alpha {alpha} failed: {e}");
                    AlphaPoint { alpha, score: None, error: Some(e.to_string()) }
                }
            }
        })
        .collect();
    let best = points
        .iter()
        .filter_map(|p| p.score.map(|s| (p.alpha, (s.excess_violation, s.loss))))
        .fold(None, |acc: Option<(f64, (f64, f64))>, cur| match acc {
            Some(a) if a.1 <= cur.1 => Some(a),
            _ => Some(cur),
        })
        .ok_or(Error::AllGridPointsFailed)?
        .0;
    Ok(AlphaReport { best, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fairness::Metric;
    use crate::noise_estimation::GroupEstimate;
    use crate::trainer::LinearModel;

    fn fixture() -> Dataset {
        let rows: Vec<Vec<f64>> = [-2.0, -1.0, 1.0, 2.0].iter().cycle().take(8).map(|&x| vec![x]).collect();
        Dataset::new(&rows, vec![-1, -1, 1, 1, -1, -1, 1, 1], vec![0, 0, 0, 0, 1, 1, 1, 1], vec!["a".into(), "b".into()])
            .unwrap()
    }

    fn zero_noise() -> NoiseEstimate {
        let g = GroupEstimate { eps_plus: 0.0, eps_minus: 0.0, prior_plus: 0.5, clipped: false };
        NoiseEstimate::new(vec!["a".into(), "b".into()], vec![g, g]).unwrap()
    }

    fn cspec() -> ConstraintSpec {
        ConstraintSpec { metric: Metric::EqualOdds, delta: 0.05, correction: Correction::None }
    }

    #[test]
    fn single_candidate_is_returned() {
        let c = RandomizedClassifier::single(LinearModel { weights: vec![0.0, 1.0] });
        assert_eq!(select_model(&[c], &fixture(), &zero_noise(), &cspec()).unwrap(), 0);
        assert!(matches!(select_model(&[], &fixture(), &zero_noise(), &cspec()), Err(Error::NoCandidates)));
    }

    #[test]
    fn dominant_candidate_wins() {
        let bad = RandomizedClassifier::single(LinearModel { weights: vec![0.0, -1.0] });
        let good = RandomizedClassifier::single(LinearModel { weights: vec![0.0, 1.0] });
        assert_eq!(select_model(&[bad, good], &fixture(), &zero_noise(), &cspec()).unwrap(), 1);
    }

    #[test]
    fn noise_free_corrected_loss_is_error_rate() {
        let ds = fixture();
        let m = RandomizedClassifier::single(LinearModel { weights: vec![-1.0, 1.0] });
        let spec = LossSpec::surrogate(zero_noise());
        let s = selection_score(&m, &ds, &spec, &cspec()).unwrap();
        assert!((s.loss - (1.0 - m.accuracy(&ds))).abs() < 1e-12);
    }
}
