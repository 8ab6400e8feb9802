//! Per-group noise-rate estimation with a group-aware confident joint.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{Dataset, NoiseSpec};
use crate::error::{Error, Result};
use crate::loss::sigmoid;
use crate::trainer::{fit_unconstrained, LossSpec, TrainConfig};

/// Largest flip rate an estimate may report.
pub const EPS_CEILING: f64 = 0.49;
/// Smallest `Δ̂` an estimate may report.
pub const DELTA_FLOOR: f64 = 0.02;
const PRIOR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupEstimate {
    pub eps_plus: f64,
    pub eps_minus: f64,
    /// `P̂(Y = +1 | Z = z)`
    pub prior_plus: f64,
    /// Set when the raw estimate had to be clipped or rescaled.
    pub clipped: bool,
}

impl GroupEstimate {
    pub fn delta(&self) -> f64 {
        1.0 - self.eps_plus - self.eps_minus
    }
}

/// Noise rates and class priors for every group, in dataset group order.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseEstimate {
    names: Vec<String>,
    groups: Vec<GroupEstimate>,
}

impl NoiseEstimate {
    pub fn new(names: Vec<String>, groups: Vec<GroupEstimate>) -> Result<Self> {
        if names.len() != groups.len() {
            return Err(Error::ShapeMismatch(format!("{} names for {} group estimates", names.len(), groups.len())));
        }
        for (name, g) in names.iter().zip(&groups) {
            let ok = (0.0..1.0).contains(&g.eps_plus) && (0.0..1.0).contains(&g.eps_minus) && g.delta() > 0.0;
            if !ok {
                return Err(Error::InvalidNoise { group: name.clone(), eps_plus: g.eps_plus, eps_minus: g.eps_minus });
            }
            if !(g.prior_plus > 0.0 && g.prior_plus < 1.0) {
                return Err(Error::InvalidConfig(format!("prior {} for group {name} is outside (0, 1)", g.prior_plus)));
            }
        }
        Ok(Self { names, groups })
    }

    /// Known noise rates for every group of `noisy`. Priors are recovered from
    /// the noisy class balance: `π = (P̃(+1|z) − ε⁻)/Δ`.
    pub fn from_spec(spec: &NoiseSpec, noisy: &Dataset) -> Result<Self> {
        let rates = spec.resolve(noisy)?;
        let groups = noisy
            .class_counts()
            .iter()
            .zip(&rates)
            .map(|(&(p, q), r)| {
                let noisy_pos = p as f64 / (p + q) as f64;
                let prior = (noisy_pos - r.eps_minus) / r.delta();
                GroupEstimate {
                    eps_plus: r.eps_plus,
                    eps_minus: r.eps_minus,
                    prior_plus: prior.clamp(PRIOR_FLOOR, 1.0 - PRIOR_FLOOR),
                    clipped: false,
                }
            })
            .collect();
        Self::new(noisy.group_names().to_vec(), groups)
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group(&self, z: usize) -> &GroupEstimate {
        &self.groups[z]
    }

    pub fn groups(&self) -> &[GroupEstimate] {
        &self.groups
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn delta(&self, z: usize) -> f64 {
        self.groups[z].delta()
    }

    pub fn any_clipped(&self) -> bool {
        self.groups.iter().any(|g| g.clipped)
    }

    /// Reorders the entries to match `ds`'s group ids.
    pub fn aligned(&self, ds: &Dataset) -> Result<Self> {
        let groups = ds
            .group_names()
            .iter()
            .map(|name| {
                self.names
                    .iter()
                    .position(|n| n == name)
                    .map(|k| self.groups[k])
                    .ok_or_else(|| Error::MissingGroupNoise(name.clone()))
            })
            .collect::<Result<_>>()?;
        Ok(Self { names: ds.group_names().to_vec(), groups })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Serialize, Deserialize)]
struct GroupRecord {
    eps_plus: f64,
    eps_minus: f64,
    #[serde(default)]
    delta: Option<f64>,
    prior_plus: f64,
    #[serde(default)]
    clipped: bool,
}

impl Serialize for NoiseEstimate {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.groups.len()))?;
        for (name, g) in self.names.iter().zip(&self.groups) {
            let record = GroupRecord {
                eps_plus: g.eps_plus,
                eps_minus: g.eps_minus,
                delta: Some(g.delta()),
                prior_plus: g.prior_plus,
                clipped: g.clipped,
            };
            map.serialize_entry(name, &record)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for NoiseEstimate {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct EstimateVisitor;

        impl<'de> Visitor<'de> for EstimateVisitor {
            type Value = NoiseEstimate;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map from group name to noise estimate")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> std::result::Result<Self::Value, A::Error> {
                let mut names = Vec::new();
                let mut groups = Vec::new();
                while let Some((name, r)) = access.next_entry::<String, GroupRecord>()? {
                    names.push(name);
                    groups.push(GroupEstimate {
                        eps_plus: r.eps_plus,
                        eps_minus: r.eps_minus,
                        prior_plus: r.prior_plus,
                        clipped: r.clipped,
                    });
                }
                NoiseEstimate::new(names, groups).map_err(serde::de::Error::custom)
            }
        }

        deserializer.deserialize_map(EstimateVisitor)
    }
}

/// Out-of-fold predicted probability that each example's noisy label is `+1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityTable {
    pub p_plus: Vec<f64>,
    pub fold_id: Vec<usize>,
}

impl ProbabilityTable {
    pub fn new(p_plus: Vec<f64>, fold_id: Vec<usize>) -> Result<Self> {
        if p_plus.len() != fold_id.len() {
            return Err(Error::ShapeMismatch("probabilities and fold ids differ in length".into()));
        }
        if p_plus.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConfig("probabilities must lie in [0, 1]".into()));
        }
        Ok(Self { p_plus, fold_id })
    }

    pub fn len(&self) -> usize {
        self.p_plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_plus.is_empty()
    }

    fn class_prob(&self, i: usize, class: usize) -> f64 {
        if class == 0 {
            self.p_plus[i]
        } else {
            1.0 - self.p_plus[i]
        }
    }

    fn check_covers(&self, ds: &Dataset) -> Result<()> {
        if self.len() != ds.len() {
            return Err(Error::ShapeMismatch(format!("{} probabilities for {} rows", self.len(), ds.len())));
        }
        Ok(())
    }
}

/// Cell index of a label: `+1 → 0`, `−1 → 1`.
fn class_index(label: i8) -> usize {
    usize::from(label != 1)
}

/// Adds one indicator column per group.
pub fn with_group_indicators(ds: &Dataset) -> Result<Dataset> {
    let names: Vec<String> = ds.group_names().iter().map(|g| format!("group={g}")).collect();
    let m = ds.num_groups();
    ds.with_extra_columns(&names, |i| {
        let mut v = vec![0.0; m];
        v[ds.group(i)] = 1.0;
        v
    })
}

/// Cross-fitted probabilities with the default learner settings.
pub fn pretrain_probabilities(train: &Dataset, folds: usize, seed: u64) -> Result<ProbabilityTable> {
    pretrain_probabilities_with(train, folds, &TrainConfig { seed, ..TrainConfig::default() })
}

/// Splits `train` into `folds` folds stratified by `(group, noisy label)`,
/// fits an unconstrained logistic model on features plus group indicators on
/// all but one fold, and predicts the held-out fold.
pub fn pretrain_probabilities_with(train: &Dataset, folds: usize, cfg: &TrainConfig) -> Result<ProbabilityTable> {
    if folds < 2 {
        return Err(Error::InvalidConfig(format!("cross-fitting needs at least 2 folds, got {folds}")));
    }
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); 2 * train.num_groups()];
    for i in 0..train.len() {
        strata[2 * train.group(i) + class_index(train.label(i))].push(i);
    }
    let mut fold_id = vec![0; train.len()];
    for (s, members) in strata.iter_mut().enumerate() {
        if members.len() < folds {
            return Err(Error::Stratification {
                group: s / 2,
                label: if s % 2 == 0 { 1 } else { -1 },
                size: members.len(),
                needed: folds,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(s as u64);
        members.shuffle(&mut rng);
        for (k, &i) in members.iter().enumerate() {
            fold_id[i] = k % folds;
        }
    }

    let augmented = with_group_indicators(train)?;
    let per_fold = (0..folds)
        .into_par_iter()
        .map(|f| {
            let (held, kept): (Vec<usize>, Vec<usize>) = (0..train.len()).partition(|&i| fold_id[i] == f);
            let model = fit_unconstrained(&augmented.select(&kept)?, &LossSpec::plain(), cfg)
                .map_err(|e| e.context(format!("pretraining fold {f}")))?;
            Ok(held.into_iter().map(|i| (i, sigmoid(model.score(augmented.row(i))))).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut p_plus = vec![0.0; train.len()];
    for (i, p) in per_fold.into_iter().flatten() {
        p_plus[i] = p;
    }
    ProbabilityTable::new(p_plus, fold_id)
}

/// Self-confidence thresholds `t[z][l]`, `l = 0` for `+1`, `l = 1` for `−1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub t: Vec<[f64; 2]>,
}

/// `t_{l,z}`: mean predicted probability of class `l` over the examples in
/// group `z` whose noisy label is `l`.
pub fn self_confidence_thresholds(pt: &ProbabilityTable, ds: &Dataset) -> Result<Thresholds> {
    pt.check_covers(ds)?;
    let m = ds.num_groups();
    let mut sum = vec![[0.0; 2]; m];
    let mut count = vec![[0usize; 2]; m];
    for i in 0..ds.len() {
        let (z, l) = (ds.group(i), class_index(ds.label(i)));
        sum[z][l] += pt.class_prob(i, l);
        count[z][l] += 1;
    }
    let mut t = vec![[0.0; 2]; m];
    for z in 0..m {
        for l in 0..2 {
            if count[z][l] == 0 {
                return Err(Error::ThresholdUndefined { group: z, label: if l == 0 { 1 } else { -1 } });
            }
            t[z][l] = sum[z][l] / count[z][l] as f64;
        }
    }
    Ok(Thresholds { t })
}

/// Per-group 2×2 joint of noisy class `k` (rows) and latent class `l`
/// (columns); index 0 is `+1`, index 1 is `−1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidentJoint {
    pub group_names: Vec<String>,
    /// Raw threshold-crossing counts.
    pub counts: Vec<[[usize; 2]; 2]>,
    /// Calibrated joint, summing to one per group.
    pub joint: Vec<[[f64; 2]; 2]>,
    pub thresholds: Thresholds,
}

/// Counts each example in cell `(noisy label, l)` for the class `l` whose
/// probability reaches `t_{l,z}`. Examples reaching both thresholds go to the
/// larger margin `p(l) − t_{l,z}`, ties to their noisy class. Each row is then
/// rescaled to its noisy-class size and the group table normalized.
pub fn confident_joint(pt: &ProbabilityTable, ds: &Dataset, thresholds: &Thresholds) -> Result<ConfidentJoint> {
    pt.check_covers(ds)?;
    let m = ds.num_groups();
    if thresholds.t.len() != m {
        return Err(Error::ShapeMismatch("thresholds do not cover every group".into()));
    }
    let mut counts = vec![[[0usize; 2]; 2]; m];
    let mut noisy_sizes = vec![[0usize; 2]; m];
    for i in 0..ds.len() {
        let (z, k) = (ds.group(i), class_index(ds.label(i)));
        noisy_sizes[z][k] += 1;
        let t = thresholds.t[z];
        let margin = [pt.class_prob(i, 0) - t[0], pt.class_prob(i, 1) - t[1]];
        let latent = match (margin[0] >= 0.0, margin[1] >= 0.0) {
            (true, false) => Some(0),
            (false, true) => Some(1),
            (true, true) if margin[0] > margin[1] => Some(0),
            (true, true) if margin[1] > margin[0] => Some(1),
            (true, true) => Some(k),
            (false, false) => None,
        };
        if let Some(l) = latent {
            counts[z][k][l] += 1;
        }
    }

    let mut joint = vec![[[0.0; 2]; 2]; m];
    for z in 0..m {
        let mut total = 0.0;
        for k in 0..2 {
            let row: usize = counts[z][k].iter().sum();
            if row == 0 {
                continue;
            }
            for l in 0..2 {
                joint[z][k][l] = counts[z][k][l] as f64 / row as f64 * noisy_sizes[z][k] as f64;
                total += joint[z][k][l];
            }
        }
        if total <= 0.0 {
            return Err(Error::EstimationDegenerate(z));
        }
        joint[z].iter_mut().flatten().for_each(|q| *q /= total);
    }
    Ok(ConfidentJoint { group_names: ds.group_names().to_vec(), counts, joint, thresholds: thresholds.clone() })
}

/// Flip rates and priors from the joint's marginals:
/// `ε̂⁺ = Q[−,+]/(Q[−,+] + Q[+,+])`, `ε̂⁻ = Q[+,−]/(Q[+,−] + Q[−,−])`,
/// `π̂ = (Q[+,+] + Q[−,+]) / ΣQ`.
///
/// Rates are clipped to `[0, EPS_CEILING]` and rescaled so `Δ̂ ≥ DELTA_FLOOR`;
/// either adjustment sets `clipped`.
pub fn estimate_noise(cj: &ConfidentJoint) -> Result<NoiseEstimate> {
    let groups = cj
        .joint
        .iter()
        .enumerate()
        .map(|(z, q)| {
            let pos = q[0][0] + q[1][0];
            let neg = q[0][1] + q[1][1];
            if pos <= 0.0 || neg <= 0.0 {
                return Err(Error::EstimationDegenerate(z));
            }
            let raw = (q[1][0] / pos, q[0][1] / neg);
            let (mut ep, mut em) = (raw.0.clamp(0.0, EPS_CEILING), raw.1.clamp(0.0, EPS_CEILING));
            let mut clipped = (ep, em) != raw;
            if ep + em >= 1.0 - DELTA_FLOOR {
                let scale = (1.0 - DELTA_FLOOR) / (ep + em);
                ep *= scale;
                em *= scale;
                clipped = true;
            }
            let prior = (pos / (pos + neg)).clamp(PRIOR_FLOOR, 1.0 - PRIOR_FLOOR);
            Ok(GroupEstimate { eps_plus: ep, eps_minus: em, prior_plus: prior, clipped })
        })
        .collect::<Result<Vec<_>>>()?;
    NoiseEstimate::new(cj.group_names.clone(), groups)
}

/// Full estimation pipeline on a noisy training set.
pub fn estimate_from_data(noisy: &Dataset, folds: usize, cfg: &TrainConfig) -> Result<(NoiseEstimate, ConfidentJoint)> {
    let pt = pretrain_probabilities_with(noisy, folds, cfg)?;
    let th = self_confidence_thresholds(&pt, noisy)?;
    let cj = confident_joint(&pt, noisy, &th)?;
    Ok((estimate_noise(&cj)?, cj))
}
