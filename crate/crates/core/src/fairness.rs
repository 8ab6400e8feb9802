//! Group confusion statistics, the surrogate fairness constraints for both
//! noise-resistant methods, and the closed-form noisy/clean rate maps.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::noise_estimation::NoiseEstimate;

/// Anything that assigns a probability of predicting `+1` to a feature row.
pub trait Classifier {
    fn prob_positive(&self, x: &[f64]) -> f64;

    fn predict_all(&self, ds: &Dataset) -> Vec<f64> {
        (0..ds.len()).map(|i| self.prob_positive(ds.row(i))).collect()
    }
}

/// One rate row of a fairness metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rate {
    Tpr,
    Fpr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Tpr,
    Fpr,
    EqualOdds,
}

impl Metric {
    /// Rate rows constrained by this metric.
    pub fn rows(&self) -> &'static [Rate] {
        match self {
            Metric::Tpr => &[Rate::Tpr],
            Metric::Fpr => &[Rate::Fpr],
            Metric::EqualOdds => &[Rate::Tpr, Rate::Fpr],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "estimate")]
pub enum Correction {
    None,
    Surrogate(NoiseEstimate),
    Peer(NoiseEstimate),
}

/// `|F_z − F_z'| ≤ δ` for every pair of groups and every metric row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub metric: Metric,
    pub delta: f64,
    pub correction: Correction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelFlavor {
    Clean,
    Noisy,
}

/// Rates for one group under the dataset's labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupRates {
    pub tpr: f64,
    pub fpr: f64,
    /// `P(f = +1 | z)`
    pub positive_rate: f64,
    pub positive_count: usize,
    pub negative_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupConfusion {
    pub flavor: LabelFlavor,
    pub group_names: Vec<String>,
    pub groups: Vec<GroupRates>,
}

/// A row of the JSON confusion report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionRow {
    pub group: String,
    pub tpr: f64,
    pub fpr: f64,
    pub flavor: LabelFlavor,
}

impl GroupConfusion {
    pub fn rows(&self) -> Vec<ConfusionRow> {
        self.group_names
            .iter()
            .zip(&self.groups)
            .map(|(g, r)| ConfusionRow { group: g.clone(), tpr: r.tpr, fpr: r.fpr, flavor: self.flavor })
            .collect()
    }

    /// Raw rate rows for `metric`, indexed `[row][group]`.
    pub fn raw_statistics(&self, metric: Metric) -> Vec<Vec<f64>> {
        metric
            .rows()
            .iter()
            .map(|r| {
                self.groups
                    .iter()
                    .map(|g| match r {
                        Rate::Tpr => g.tpr,
                        Rate::Fpr => g.fpr,
                    })
                    .collect()
            })
            .collect()
    }
}

/// Counts TPR/FPR per group from per-example probabilities of predicting `+1`
/// (hard predictions are 0/1, mixtures give expected counts).
pub fn confusion_from_predictions(pred: &[f64], ds: &Dataset, flavor: LabelFlavor) -> Result<GroupConfusion> {
    if pred.len() != ds.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions for {} rows", pred.len(), ds.len())));
    }
    let m = ds.num_groups();
    let mut tp = vec![0.0; m];
    let mut fp = vec![0.0; m];
    let mut counts = vec![(0usize, 0usize); m];
    for i in 0..ds.len() {
        let z = ds.group(i);
        if ds.label(i) == 1 {
            tp[z] += pred[i];
            counts[z].0 += 1;
        } else {
            fp[z] += pred[i];
            counts[z].1 += 1;
        }
    }
    let mut groups = Vec::with_capacity(m);
    for z in 0..m {
        let (p, q) = counts[z];
        if p == 0 {
            return Err(Error::DegenerateGroup { group: z, label: 1 });
        }
        if q == 0 {
            return Err(Error::DegenerateGroup { group: z, label: -1 });
        }
        groups.push(GroupRates {
            tpr: tp[z] / p as f64,
            fpr: fp[z] / q as f64,
            positive_rate: (tp[z] + fp[z]) / (p + q) as f64,
            positive_count: p,
            negative_count: q,
        });
    }
    Ok(GroupConfusion { flavor, group_names: ds.group_names().to_vec(), groups })
}

pub fn confusion(model: &dyn Classifier, ds: &Dataset, flavor: LabelFlavor) -> Result<GroupConfusion> {
    confusion_from_predictions(&model.predict_all(ds), ds, flavor)
}

fn require_noisy(gc: &GroupConfusion) -> Result<()> {
    if gc.flavor != LabelFlavor::Noisy {
        return Err(Error::InvalidConfig("surrogate statistics need noisy-label confusion".into()));
    }
    Ok(())
}

fn require_cover(gc: &GroupConfusion, est: &NoiseEstimate) -> Result<()> {
    if est.num_groups() != gc.groups.len() {
        return Err(Error::ShapeMismatch(format!(
            "estimate covers {} groups, confusion has {}",
            est.num_groups(),
            gc.groups.len()
        )));
    }
    Ok(())
}

/// Surrogate-loss constraint statistics, indexed `[row][group]`:
/// TPR row `(1−ε⁺)·R̂TPR + ε⁺·R̂FPR`, FPR row `ε⁻·R̂TPR + (1−ε⁻)·R̂FPR`.
pub fn surrogate_statistic_sl(gc: &GroupConfusion, est: &NoiseEstimate, metric: Metric) -> Result<Vec<Vec<f64>>> {
    require_noisy(gc)?;
    require_cover(gc, est)?;
    Ok(metric
        .rows()
        .iter()
        .map(|row| {
            gc.groups
                .iter()
                .enumerate()
                .map(|(z, g)| {
                    let e = est.group(z);
                    let (tpr, fpr) = correct_rates((g.tpr, g.fpr), (e.eps_plus, e.eps_minus));
                    match row {
                        Rate::Tpr => tpr,
                        Rate::Fpr => fpr,
                    }
                })
                .collect()
        })
        .collect())
}

/// Peer-loss constraint statistics, indexed `[row][group]`:
/// TPR row `P(f=+1|z) + Δ·(R̂TPR − R̂FPR)·P(Y=−1|z)`,
/// FPR row `P(f=+1|z) − Δ·(R̂TPR − R̂FPR)·P(Y=+1|z)`.
/// With balanced priors both factors are `1/2`.
pub fn surrogate_statistic_peer(gc: &GroupConfusion, est: &NoiseEstimate, metric: Metric) -> Result<Vec<Vec<f64>>> {
    require_noisy(gc)?;
    require_cover(gc, est)?;
    Ok(metric
        .rows()
        .iter()
        .map(|row| {
            gc.groups
                .iter()
                .enumerate()
                .map(|(z, g)| {
                    let e = est.group(z);
                    let spread = est.delta(z) * (g.tpr - g.fpr);
                    match row {
                        Rate::Tpr => g.positive_rate + spread * (1.0 - e.prior_plus),
                        Rate::Fpr => g.positive_rate - spread * e.prior_plus,
                    }
                })
                .collect()
        })
        .collect())
}

/// Clean `(TPR, FPR)` from noisy-label rates, assuming the classifier sees
/// the true label only through the noisy one.
pub fn correct_rates(noisy: (f64, f64), eps: (f64, f64)) -> (f64, f64) {
    let (tpr, fpr) = noisy;
    let (ep, em) = eps;
    ((1.0 - ep) * tpr + ep * fpr, em * tpr + (1.0 - em) * fpr)
}

/// Inverse of [`correct_rates`]: noisy-label rates from clean ones. Needs `Δ > 0`.
pub fn corrupt_rates(clean: (f64, f64), eps: (f64, f64)) -> (f64, f64) {
    let (tpr, fpr) = clean;
    let (ep, em) = eps;
    let delta = 1.0 - ep - em;
    (((1.0 - em) * tpr - ep * fpr) / delta, ((1.0 - ep) * fpr - em * tpr) / delta)
}

/// Largest pairwise gap over groups, maximized over metric rows.
pub fn violation(stats: &[Vec<f64>]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for row in stats {
        if row.len() < 2 {
            return Err(Error::TooFewGroups);
        }
        let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
        worst = worst.max(hi - lo);
    }
    if stats.is_empty() {
        return Err(Error::TooFewGroups);
    }
    Ok(worst)
}

/// Clean TPR and FPR gaps between two groups for a classifier that has equal
/// odds on the noisy labels.
pub fn hidden_clean_gap(noisy: (f64, f64), eps_z: (f64, f64), eps_other: (f64, f64)) -> (f64, f64) {
    let spread = (noisy.0 - noisy.1).abs();
    (spread * (eps_z.0 - eps_other.0).abs(), spread * (eps_z.1 - eps_other.1).abs())
}

/// Per-example coefficients `c` for one statistic row: for every group `z`,
/// `F_z(f) = Σ_{i∈z} cᵢ · P(f(xᵢ)=+1)`.
///
/// The counts come from the labels stored in `ds` (clean or noisy).
pub fn statistic_coefficients(ds: &Dataset, correction: &Correction, row: Rate) -> Result<Vec<f64>> {
    let counts = ds.class_counts();
    for (z, &(p, q)) in counts.iter().enumerate() {
        if p == 0 {
            return Err(Error::DegenerateGroup { group: z, label: 1 });
        }
        if q == 0 {
            return Err(Error::DegenerateGroup { group: z, label: -1 });
        }
    }
    if let Correction::Surrogate(est) | Correction::Peer(est) = correction {
        if est.num_groups() != ds.num_groups() {
            return Err(Error::ShapeMismatch("estimate does not cover every group".into()));
        }
    }
    Ok((0..ds.len())
        .map(|i| {
            let z = ds.group(i);
            let (p, q) = counts[z];
            let (p, q) = (p as f64, q as f64);
            let pos = ds.label(i) == 1;
            match correction {
                Correction::None => match (row, pos) {
                    (Rate::Tpr, true) => 1.0 / p,
                    (Rate::Fpr, false) => 1.0 / q,
                    _ => 0.0,
                },
                Correction::Surrogate(est) => {
                    let e = est.group(z);
                    match (row, pos) {
                        (Rate::Tpr, true) => (1.0 - e.eps_plus) / p,
                        (Rate::Tpr, false) => e.eps_plus / q,
                        (Rate::Fpr, true) => e.eps_minus / p,
                        (Rate::Fpr, false) => (1.0 - e.eps_minus) / q,
                    }
                }
                Correction::Peer(est) => {
                    let e = est.group(z);
                    let delta = est.delta(z);
                    let n = p + q;
                    match (row, pos) {
                        (Rate::Tpr, true) => 1.0 / n + delta * (1.0 - e.prior_plus) / p,
                        (Rate::Tpr, false) => 1.0 / n - delta * (1.0 - e.prior_plus) / q,
                        (Rate::Fpr, true) => 1.0 / n - delta * e.prior_plus / p,
                        (Rate::Fpr, false) => 1.0 / n + delta * e.prior_plus / q,
                    }
                }
            }
        })
        .collect())
}

/// Constraint statistics `[row][group]` evaluated through
/// [`statistic_coefficients`].
pub fn constraint_statistics(ds: &Dataset, cspec: &ConstraintSpec, pred: &[f64]) -> Result<Vec<Vec<f64>>> {
    let coeffs = cspec
        .metric
        .rows()
        .iter()
        .map(|&r| statistic_coefficients(ds, &cspec.correction, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(statistics_with_coefficients(ds, &coeffs, pred))
}

pub(crate) fn statistics_with_coefficients(ds: &Dataset, coeffs: &[Vec<f64>], pred: &[f64]) -> Vec<Vec<f64>> {
    coeffs
        .iter()
        .map(|c| {
            let mut stat = vec![0.0; ds.num_groups()];
            for i in 0..ds.len() {
                stat[ds.group(i)] += c[i] * pred[i];
            }
            stat
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise_estimation::GroupEstimate;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn est(groups: &[(f64, f64, f64)]) -> NoiseEstimate {
        NoiseEstimate::new(
            (0..groups.len()).map(|z| format!("g{z}")).collect(),
            groups
                .iter()
                .map(|&(eps_plus, eps_minus, prior_plus)| GroupEstimate { eps_plus, eps_minus, prior_plus, clipped: false })
                .collect(),
        )
        .unwrap()
    }

    fn noisy_gc(rates: &[(f64, f64, f64)]) -> GroupConfusion {
        GroupConfusion {
            flavor: LabelFlavor::Noisy,
            group_names: (0..rates.len()).map(|z| format!("g{z}")).collect(),
            groups: rates
                .iter()
                .map(|&(tpr, fpr, positive_rate)| GroupRates {
                    tpr,
                    fpr,
                    positive_rate,
                    positive_count: 10,
                    negative_count: 10,
                })
                .collect(),
        }
    }

    fn fixture() -> Dataset {
        // group a: 4 rows, group b: 4 rows; features encode the row index
        let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64]).collect();
        Dataset::new(&rows, vec![1, 1, -1, -1, 1, 1, -1, -1], vec![0, 0, 0, 0, 1, 1, 1, 1], vec!["a".into(), "b".into()])
            .unwrap()
    }

    #[test]
    fn confusion_perfect_and_constant() {
        let ds = fixture();
        let perfect: Vec<f64> = ds.labels().iter().map(|&y| if y == 1 { 1.0 } else { 0.0 }).collect();
        let gc = confusion_from_predictions(&perfect, &ds, LabelFlavor::Clean).unwrap();
        assert!(gc.groups.iter().all(|g| g.tpr == 1.0 && g.fpr == 0.0));
        let constant = |_: &[f64]| 1.0;
        struct F<T>(T);
        impl<T: Fn(&[f64]) -> f64> Classifier for F<T> {
            fn prob_positive(&self, x: &[f64]) -> f64 {
                (self.0)(x)
            }
        }
        let gc = confusion(&F(constant), &ds, LabelFlavor::Clean).unwrap();
        assert!(gc.groups.iter().all(|g| g.tpr == 1.0 && g.fpr == 1.0 && g.positive_rate == 1.0));
    }

    #[test]
    fn confusion_degenerate_group() {
        let rows: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        let ds = Dataset::new(&rows, vec![1, -1, 1, 1], vec![0, 0, 1, 1], vec!["a".into(), "b".into()]).unwrap();
        let err = confusion_from_predictions(&[1.0; 4], &ds, LabelFlavor::Clean).unwrap_err();
        assert!(matches!(err, Error::DegenerateGroup { group: 1, label: -1 }));
    }

    #[test]
    fn sl_statistic_values() {
        let gc = noisy_gc(&[(0.8, 0.2, 0.5), (0.8, 0.2, 0.5)]);
        let e = est(&[(0.3, 0.1, 0.5), (0.0, 0.0, 0.5)]);
        let stats = surrogate_statistic_sl(&gc, &e, Metric::EqualOdds).unwrap();
        assert_abs_diff_eq!(stats[0][0], 0.62, epsilon = 1e-12);
        assert_abs_diff_eq!(stats[1][0], 0.26, epsilon = 1e-12);
        assert_eq!(stats[0][1], 0.8);
        assert_eq!(stats[1][1], 0.2);
        let clean = GroupConfusion { flavor: LabelFlavor::Clean, ..gc };
        assert!(surrogate_statistic_sl(&clean, &e, Metric::Tpr).is_err());
    }

    #[test]
    fn peer_statistic_values() {
        let gc = noisy_gc(&[(0.8, 0.2, 0.5), (0.4, 0.4, 0.3)]);
        let e = est(&[(0.0, 0.0, 0.5), (0.2, 0.1, 0.7)]);
        let stats = surrogate_statistic_peer(&gc, &e, Metric::EqualOdds).unwrap();
        assert_abs_diff_eq!(stats[0][0], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(stats[1][0], 0.2, epsilon = 1e-12);
        assert_eq!(stats[0][1], 0.3);
        assert_eq!(stats[1][1], 0.3);
    }

    #[test]
    fn rate_correction_identities() {
        assert_eq!(correct_rates((0.7, 0.2), (0.0, 0.0)), (0.7, 0.2));
        let (t, f) = correct_rates((0.4, 0.4), (0.3, 0.15));
        assert_abs_diff_eq!(t, 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(f, 0.4, epsilon = 1e-15);
    }

    #[test]
    fn violation_cases() {
        assert_eq!(violation(&[vec![0.3, 0.3]]).unwrap(), 0.0);
        assert_abs_diff_eq!(violation(&[vec![0.62, 0.50, 0.55]]).unwrap(), 0.12, epsilon = 1e-12);
        assert_abs_diff_eq!(violation(&[vec![0.50, 0.54], vec![0.1, 0.19]]).unwrap(), 0.09, epsilon = 1e-12);
        assert!(matches!(violation(&[vec![0.3]]), Err(Error::TooFewGroups)));
    }

    #[test]
    fn hidden_gap_values() {
        assert_eq!(hidden_clean_gap((0.5, 0.5), (0.3, 0.2), (0.1, 0.0)), (0.0, 0.0));
        let (t, _) = hidden_clean_gap((0.8, 0.2), (0.3, 0.0), (0.1, 0.0));
        assert_abs_diff_eq!(t, 0.12, epsilon = 1e-12);
    }

    #[test]
    fn coefficient_route_matches_table_route() {
        let ds = fixture();
        let pred = [1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0];
        let gc = confusion_from_predictions(&pred, &ds, LabelFlavor::Noisy).unwrap();
        let e = est(&[(0.3, 0.1, 0.4), (0.05, 0.35, 0.6)]);
        for (correction, table) in [
            (Correction::Surrogate(e.clone()), surrogate_statistic_sl(&gc, &e, Metric::EqualOdds).unwrap()),
            (Correction::Peer(e.clone()), surrogate_statistic_peer(&gc, &e, Metric::EqualOdds).unwrap()),
            (Correction::None, gc.raw_statistics(Metric::EqualOdds)),
        ] {
            let cspec = ConstraintSpec { metric: Metric::EqualOdds, delta: 0.0, correction };
            let coef = constraint_statistics(&ds, &cspec, &pred).unwrap();
            for (a, b) in coef.iter().flatten().zip(table.iter().flatten()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn correction_round_trip(t in 0.0f64..1.0, f in 0.0f64..1.0, ep in 0.0f64..0.49, em in 0.0f64..0.49) {
            let noisy = corrupt_rates((t, f), (ep, em));
            let back = correct_rates(noisy, (ep, em));
            prop_assert!((back.0 - t).abs() < 1e-12 && (back.1 - f).abs() < 1e-12);
        }

        #[test]
        fn sl_statistics_are_corrected_rates(t in 0.0f64..1.0, f in 0.0f64..1.0, ep in 0.0f64..0.49, em in 0.0f64..0.49) {
            let gc = noisy_gc(&[(t, f, 0.5), (0.5, 0.5, 0.5)]);
            let e = est(&[(ep, em, 0.5), (0.0, 0.0, 0.5)]);
            let stats = surrogate_statistic_sl(&gc, &e, Metric::EqualOdds).unwrap();
            let (ct, cf) = correct_rates((t, f), (ep, em));
            prop_assert!((stats[0][0] - ct).abs() < 1e-15 && (stats[1][0] - cf).abs() < 1e-15);
        }

        #[test]
        fn violation_permutation_invariant_and_lipschitz(
            v in proptest::collection::vec(0.0f64..1.0, 2..6),
            k in 0usize..6,
            bump in -0.2f64..0.2,
        ) {
            let base = violation(&[v.clone()]).unwrap();
            let mut rev = v.clone();
            rev.reverse();
            prop_assert_eq!(violation(&[rev]).unwrap(), base);
            let mut moved = v.clone();
            let k = k % v.len();
            moved[k] += bump;
            prop_assert!((violation(&[moved]).unwrap() - base).abs() <= bump.abs() + 1e-15);
        }
    }
}
