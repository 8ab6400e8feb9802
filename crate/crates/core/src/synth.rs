//! Gaussian-cluster data generator and the `adultlike` preset.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// One `(group, label)` stratum drawn from `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub group: String,
    pub label: i8,
    pub count: usize,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub clusters: Vec<ClusterSpec>,
    #[serde(default)]
    pub seed: u64,
}

/// Lower-triangular `L` with `L·Lᵀ = cov`.
pub fn cholesky(cov: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = cov.len();
    if cov.iter().any(|r| r.len() != d) {
        return Err(Error::ShapeMismatch("covariance must be square".into()));
    }
    let m = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
    if m != m.transpose() {
        return Err(Error::NotPositiveDefinite("matrix is not symmetric".into()));
    }
    m.cholesky()
        .map(|c| c.unpack())
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{d}×{d} covariance has a non-positive pivot")))
}

/// Draws every cluster in order; group ids follow first appearance.
pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    let first = spec.clusters.first().ok_or_else(|| Error::InvalidConfig("no clusters".into()))?;
    let d = first.mean.len();
    let mut names: Vec<String> = Vec::new();
    let mut factors = Vec::with_capacity(spec.clusters.len());
    for c in &spec.clusters {
        if c.count == 0 {
            return Err(Error::InvalidConfig(format!("cluster ({}, {}) has no examples", c.group, c.label)));
        }
        if c.label.abs() != 1 {
            return Err(Error::InvalidConfig(format!("cluster label {} is not ±1", c.label)));
        }
        if c.mean.len() != d || c.cov.len() != d {
            return Err(Error::ShapeMismatch(format!("cluster ({}, {}) has the wrong dimension", c.group, c.label)));
        }
        factors.push(cholesky(&c.cov).map_err(|e| e.context(format!("cluster ({}, {})", c.group, c.label)))?);
        if !names.contains(&c.group) {
            names.push(c.group.clone());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (mut rows, mut labels, mut groups) = (Vec::new(), Vec::new(), Vec::new());
    for (c, l) in spec.clusters.iter().zip(&factors) {
        let z = names.iter().position(|n| *n == c.group).unwrap_or_default();
        for _ in 0..c.count {
            let noise = DVector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(&mut rng)));
            let draw = l * noise;
            rows.push((0..d).map(|i| c.mean[i] + draw[i]).collect());
            labels.push(c.label);
            groups.push(z);
        }
    }
    Dataset::new(&rows, labels, groups, names)
}

/// Two groups (`female`, `male`) over four correlated features.
///
/// Positive rates are 0.30 and 0.45; the classes overlap so a linear model
/// reaches about 85% clean accuracy, and the male clusters are shifted so the
/// unconstrained model treats the groups differently.
pub fn adultlike(per_group: usize, seed: u64) -> SynthSpec {
    let cov = vec![
        vec![1.0, 0.3, 0.0, 0.1],
        vec![0.3, 1.0, 0.2, 0.0],
        vec![0.0, 0.2, 1.0, 0.0],
        vec![0.1, 0.0, 0.0, 1.0],
    ];
    let positive = [1.7, 1.2, 1.0, 0.5];
    let mut clusters = Vec::new();
    for (group, prior, shift) in [("female", 0.30, [0.0, 0.0, 0.0, 0.0]), ("male", 0.45, [0.6, 0.3, 0.0, 0.5])] {
        let pos = (per_group as f64 * prior).round() as usize;
        for (label, count, base) in [(1i8, pos, positive), (-1, per_group - pos, [0.0; 4])] {
            clusters.push(ClusterSpec {
                group: group.into(),
                label,
                count,
                mean: (0..4).map(|j| base[j] + shift[j]).collect(),
                cov: cov.clone(),
            });
        }
    }
    SynthSpec { clusters, seed }
}

/// Look up a named preset.
pub fn preset(name: &str, per_group: usize, seed: u64) -> Result<SynthSpec> {
    match name {
        "adultlike" => Ok(adultlike(per_group, seed)),
        _ => Err(Error::InvalidConfig(format!("unknown synthetic preset {name:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{fit_unconstrained, LossSpec, TrainConfig};

    fn two_blobs(gap: f64, same_groups: bool) -> SynthSpec {
        let eye = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let mut clusters = Vec::new();
        for g in ["a", "b"] {
            let shift = if same_groups || g == "a" { 0.0 } else { 1.0 };
            clusters.push(ClusterSpec { group: g.into(), label: 1, count: 300, mean: vec![gap + shift, 0.0], cov: eye.clone() });
            clusters.push(ClusterSpec { group: g.into(), label: -1, count: 300, mean: vec![-gap + shift, 0.0], cov: eye.clone() });
        }
        SynthSpec { clusters, seed: 3 }
    }

    #[test]
    fn cholesky_reconstructs() {
        let cov = adultlike(10, 0).clusters[0].cov.clone();
        let l = cholesky(&cov).unwrap();
        let back = &l * l.transpose();
        for i in 0..4 {
            for j in 0..4 {
                assert!((back[(i, j)] - cov[i][j]).abs() < 1e-12);
                if j > i {
                    assert_eq!(l[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn indefinite_covariance_is_rejected() {
        let mut spec = two_blobs(1.0, true);
        spec.clusters[1].cov = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(matches!(synth_generate(&spec), Err(Error::Context { .. })));
        assert!(matches!(cholesky(&[vec![1.0, 2.0], vec![2.0, 1.0]]), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn empty_stratum_is_rejected() {
        let mut spec = two_blobs(1.0, true);
        spec.clusters[2].count = 0;
        assert!(matches!(synth_generate(&spec), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = adultlike(200, 9);
        assert_eq!(synth_generate(&spec).unwrap(), synth_generate(&spec).unwrap());
        let other = synth_generate(&adultlike(200, 10)).unwrap();
        assert_ne!(synth_generate(&spec).unwrap(), other);
    }

    #[test]
    fn preset_shape() {
        let ds = synth_generate(&adultlike(1000, 1)).unwrap();
        assert_eq!(ds.group_names(), ["female", "male"]);
        assert_eq!(ds.class_counts(), vec![(300, 700), (450, 550)]);
        assert_eq!(ds.dim(), 5);
        assert!(preset("nope", 10, 0).is_err());
    }

    #[test]
    fn far_clusters_are_learnable() {
        let ds = synth_generate(&two_blobs(6.0, false)).unwrap();
        let cfg = TrainConfig { epochs: 30, ..TrainConfig::default() };
        let model = fit_unconstrained(&ds, &LossSpec::plain(), &cfg).unwrap();
        assert!(model.accuracy(&ds) >= 0.99);
    }
}
