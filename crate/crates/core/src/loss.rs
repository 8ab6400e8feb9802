//! Base losses and the two noise-corrected losses: the unbiased surrogate
//! loss and the group-weighted peer loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::noise_estimation::NoiseEstimate;

/// Base loss `ℓ(score, label)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LossKind {
    ZeroOne,
    /// Logistic loss, optionally clipped from above at `clip`.
    Logistic { clip: Option<f64> },
}

impl LossKind {
    pub const LOGISTIC: LossKind = LossKind::Logistic { clip: None };

    /// Upper bound `ℓ̄` of the loss.
    pub fn max_value(&self) -> f64 {
        match self {
            LossKind::ZeroOne => 1.0,
            LossKind::Logistic { clip } => clip.unwrap_or(f64::INFINITY),
        }
    }
}

/// `ln(1 + e^t)` without overflow.
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ℓ(score, label)`. For 0-1 loss `sign(0) = +1`.
pub fn base_loss(kind: LossKind, score: f64, label: i8) -> f64 {
    let y = f64::from(label);
    match kind {
        LossKind::ZeroOne => {
            let predicted = if score >= 0.0 { 1 } else { -1 };
            if predicted == label {
                0.0
            } else {
                1.0
            }
        }
        LossKind::Logistic { clip } => {
            let v = softplus(-y * score);
            clip.map_or(v, |c| v.min(c))
        }
    }
}

/// `∂ℓ(score, label)/∂score`; zero where the loss is flat (0-1 loss, clipped region).
pub fn base_loss_derivative(kind: LossKind, score: f64, label: i8) -> f64 {
    let y = f64::from(label);
    match kind {
        LossKind::ZeroOne => 0.0,
        LossKind::Logistic { clip } => {
            if let Some(c) = clip {
                if softplus(-y * score) >= c {
                    return 0.0;
                }
            }
            -y * sigmoid(-y * score)
        }
    }
}

/// Coefficients `(a, b)` such that the surrogate loss for `noisy_label` equals
/// `a·ℓ(s, +1) + b·ℓ(s, −1)`. They always sum to one.
pub fn surrogate_weights(noisy_label: i8, eps_plus: f64, eps_minus: f64) -> Result<(f64, f64)> {
    let delta = 1.0 - eps_plus - eps_minus;
    if delta <= 0.0 || !delta.is_finite() {
        return Err(Error::InvalidNoise { group: "?".into(), eps_plus, eps_minus });
    }
    Ok(if noisy_label == 1 {
        ((1.0 - eps_minus) / delta, -eps_plus / delta)
    } else {
        (-eps_minus / delta, (1.0 - eps_plus) / delta)
    })
}

/// Noise-corrected loss whose expectation over the noisy label equals the
/// clean loss. The value may be negative.
pub fn surrogate_loss(kind: LossKind, score: f64, noisy_label: i8, eps_plus: f64, eps_minus: f64) -> Result<f64> {
    let (a, b) = surrogate_weights(noisy_label, eps_plus, eps_minus)?;
    Ok(a * base_loss(kind, score, 1) + b * base_loss(kind, score, -1))
}

/// Peer indices for every example: `first[i]` supplies the features and
/// `second[i]` the label of example `i`'s peer term.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerPairing {
    pub first: Vec<usize>,
    pub second: Vec<usize>,
}

/// Peer-loss balance parameter plus the current pairing.
#[derive(Debug, Clone, PartialEq)]
pub struct PeerConfig {
    pub alpha: f64,
    pub pairing: PeerPairing,
}

/// Draws `i₁, i₂` independently and uniformly from the other members of
/// example `i`'s group.
pub fn make_peer_pairing(ds: &Dataset, seed: u64) -> Result<PeerPairing> {
    let members: Vec<Vec<usize>> = (0..ds.num_groups()).map(|z| ds.group_indices(z)).collect();
    let mut position = vec![0; ds.len()];
    for (z, idx) in members.iter().enumerate() {
        if idx.len() < 2 {
            return Err(Error::SingletonGroup(z));
        }
        for (k, &i) in idx.iter().enumerate() {
            position[i] = k;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |i: usize| {
        let group = &members[ds.group(i)];
        let k = rng.random_range(0..group.len() - 1);
        // skip over i itself
        group[if k >= position[i] { k + 1 } else { k }]
    };
    let mut first = Vec::with_capacity(ds.len());
    let mut second = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        first.push(draw(i));
        second.push(draw(i));
    }
    Ok(PeerPairing { first, second })
}

/// Group-weighted peer loss of example `i`:
/// `(ℓ(f(xᵢ), ỹᵢ) − α·ℓ(f(x_{i₁}), ỹ_{i₂})) / Δ̂_{zᵢ}`.
pub fn group_peer_loss(
    kind: LossKind,
    scores: &[f64],
    noisy_labels: &[i8],
    groups: &[usize],
    estimate: &NoiseEstimate,
    cfg: &PeerConfig,
    i: usize,
) -> Result<f64> {
    let z = groups[i];
    if z >= estimate.num_groups() {
        return Err(Error::MissingGroupNoise(format!("group id {z}")));
    }
    let delta = estimate.delta(z);
    if delta <= 0.0 {
        return Err(Error::EstimationDegenerate(z));
    }
    let (p1, p2) = (cfg.pairing.first[i], cfg.pairing.second[i]);
    let own = base_loss(kind, scores[i], noisy_labels[i]);
    let peer = base_loss(kind, scores[p1], noisy_labels[p2]);
    Ok((own - cfg.alpha * peer) / delta)
}

/// Closed-form balance parameter from pooled noise estimates and the noisy
/// class marginals. Falls back to `1` when the noisy marginals are balanced.
///
/// `noisy_label_counts` holds per-group `(positives, negatives)`.
pub fn default_alpha(estimate: &NoiseEstimate, noisy_label_counts: &[(usize, usize)]) -> f64 {
    let n: usize = noisy_label_counts.iter().map(|(p, q)| p + q).sum();
    if n == 0 {
        return 1.0;
    }
    let n = n as f64;
    let noisy_pos: f64 = noisy_label_counts.iter().map(|(p, _)| *p as f64).sum::<f64>() / n;
    let noisy_gap = noisy_pos - (1.0 - noisy_pos);
    if noisy_gap.abs() < 1e-6 {
        return 1.0;
    }
    let (mut pos_mass, mut neg_mass, mut eps_p, mut eps_m) = (0.0, 0.0, 0.0, 0.0);
    for (z, (p, q)) in noisy_label_counts.iter().enumerate() {
        let weight = (p + q) as f64 / n;
        let g = estimate.group(z);
        pos_mass += weight * g.prior_plus;
        neg_mass += weight * (1.0 - g.prior_plus);
        eps_p += weight * g.prior_plus * g.eps_plus;
        eps_m += weight * (1.0 - g.prior_plus) * g.eps_minus;
    }
    let eps_plus = if pos_mass > 0.0 { eps_p / pos_mass } else { 0.0 };
    let eps_minus = if neg_mass > 0.0 { eps_m / neg_mass } else { 0.0 };
    let clean_gap = pos_mass - neg_mass;
    1.0 - (1.0 - eps_minus - eps_plus) * clean_gap / noisy_gap
}
