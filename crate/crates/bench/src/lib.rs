//! Shared inputs for the training benchmarks.

use noisefair::dataset::{inject_noise, Dataset, NoiseRates, NoiseSpec, Standardizer};
use noisefair::noise_estimation::NoiseEstimate;
use noisefair::synth::{adultlike, synth_generate};

/// Standardized `adultlike` data with moderate noise on both groups, plus the
/// true-rate estimate for it.
pub fn noisy_adultlike(per_group: usize, seed: u64) -> (Dataset, NoiseEstimate) {
    let ds = synth_generate(&adultlike(per_group, seed)).expect("preset is valid");
    let ds = Standardizer::fit(&ds).apply(&ds).expect("same dimension");
    let spec = NoiseSpec::new(vec![
        ("female".into(), NoiseRates { eps_plus: 0.15, eps_minus: 0.25 }),
        ("male".into(), NoiseRates { eps_plus: 0.2, eps_minus: 0.1 }),
    ])
    .expect("rates are valid");
    let noisy = inject_noise(&ds, &spec, seed).expect("groups match");
    let est = NoiseEstimate::from_spec(&spec, &noisy).expect("groups match");
    (noisy, est)
}
