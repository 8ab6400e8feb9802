//! Fairness-constrained binary classification when training labels carry
//! group-dependent flip noise.

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod fairness;
pub mod loss;
pub mod noise_estimation;
pub mod synth;
pub mod theory;
pub mod trainer;

pub use dataset::{Dataset, NoiseRates, NoiseSpec, Schema, SplitConfig};
pub use error::{Error, Result};
pub use fairness::{Classifier, ConstraintSpec, Correction, GroupConfusion, LabelFlavor, Metric};
pub use loss::LossKind;
pub use noise_estimation::{GroupEstimate, NoiseEstimate};
pub use trainer::{LinearModel, LossSpec, RandomizedClassifier, TrainConfig};
pub use experiment::{run_benchmark, ExperimentConfig, Method, NoiseKnowledge, ResultRow};
pub use synth::{synth_generate, SynthSpec};
pub use theory::FiniteWorld;
