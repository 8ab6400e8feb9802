use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::fairness::Classifier;

/// Linear scorer `s(x) = w·x`; slot 0 multiplies the intercept column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
}

impl LinearModel {
    pub fn zeros(dim: usize) -> Self {
        Self { weights: vec![0.0; dim] }
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum()
    }

    /// `+1` when the score is non-negative.
    pub fn predict(&self, x: &[f64]) -> i8 {
        if self.score(x) >= 0.0 {
            1
        } else {
            -1
        }
    }

    pub fn scores(&self, ds: &Dataset) -> Vec<f64> {
        (0..ds.len()).map(|i| self.score(ds.row(i))).collect()
    }

    pub fn accuracy(&self, ds: &Dataset) -> f64 {
        let hits = (0..ds.len()).filter(|&i| self.predict(ds.row(i)) == ds.label(i)).count();
        hits as f64 / ds.len() as f64
    }
}

impl Classifier for LinearModel {
    fn prob_positive(&self, x: &[f64]) -> f64 {
        if self.score(x) >= 0.0 {
            1.0
        } else {
            0.0
        }
    }
}

/// Mixture of linear models; each prediction draws a component by weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizedClassifier {
    components: Vec<(LinearModel, f64)>,
}

impl RandomizedClassifier {
    pub fn new(components: Vec<(LinearModel, f64)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidConfig("a randomized classifier needs at least one component".into()));
        }
        if components.iter().any(|(_, w)| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig("mixing weights must be finite and non-negative".into()));
        }
        let total: f64 = components.iter().map(|(_, w)| w).sum();
        if total <= 0.0 {
            return Err(Error::InvalidConfig("mixing weights sum to zero".into()));
        }
        Ok(Self { components: components.into_iter().map(|(m, w)| (m, w / total)).collect() })
    }

    pub fn single(model: LinearModel) -> Self {
        Self { components: vec![(model, 1.0)] }
    }

    pub fn uniform(models: Vec<LinearModel>) -> Result<Self> {
        Self::new(models.into_iter().map(|m| (m, 1.0)).collect())
    }

    pub fn components(&self) -> &[(LinearModel, f64)] {
        &self.components
    }

    /// Expected accuracy over the mixture.
    pub fn accuracy(&self, ds: &Dataset) -> f64 {
        self.components.iter().map(|(m, w)| w * m.accuracy(ds)).sum()
    }
}

impl Classifier for RandomizedClassifier {
    fn prob_positive(&self, x: &[f64]) -> f64 {
        self.components.iter().map(|(m, w)| w * m.prob_positive(x)).sum()
    }
}

/// Hex SHA-256 of a value's JSON encoding.
pub fn fingerprint<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// On-disk form of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub weights: Vec<f64>,
    pub feature_names: Vec<String>,
    pub standardizer: Standardizer,
    pub fingerprint: String,
}

impl ModelFile {
    pub fn new(model: &LinearModel, feature_names: Vec<String>, standardizer: Standardizer, fingerprint: String) -> Result<Self> {
        if model.weights.len() != standardizer.means.len() + 1 {
            return Err(Error::FeatureCountMismatch {
                expected: standardizer.means.len(),
                found: model.weights.len().saturating_sub(1),
            });
        }
        Ok(Self { weights: model.weights.clone(), feature_names, standardizer, fingerprint })
    }

    pub fn model(&self) -> LinearModel {
        LinearModel { weights: self.weights.clone() }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Reads a model and checks it against a dataset with `feature_count`
    /// non-intercept columns.
    pub fn load(path: impl AsRef<Path>, feature_count: usize) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if file.weights.len() != feature_count + 1 || file.standardizer.means.len() != feature_count {
            return Err(Error::FeatureCountMismatch { expected: feature_count, found: file.weights.len().saturating_sub(1) });
        }
        Ok(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixture_weights_normalize() {
        let a = LinearModel { weights: vec![1.0, 0.0] };
        let b = LinearModel { weights: vec![-1.0, 0.0] };
        let rc = RandomizedClassifier::new(vec![(a, 3.0), (b, 1.0)]).unwrap();
        let total: f64 = rc.components().iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert_eq!(rc.prob_positive(&[1.0, 5.0]), 0.75);
        assert!(RandomizedClassifier::new(vec![]).is_err());
    }

    #[test]
    fn model_file_round_trip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let model = LinearModel { weights: vec![0.5, -1.0, 2.0] };
        let file = ModelFile::new(
            &model,
            vec!["a".into(), "b".into()],
            Standardizer { means: vec![1.0, 2.0], stds: vec![1.0, 3.0] },
            fingerprint(&"cfg").unwrap(),
        )
        .unwrap();
        file.save(&path).unwrap();
        assert_eq!(ModelFile::load(&path, 2).unwrap(), file);
        assert!(matches!(ModelFile::load(&path, 3), Err(Error::FeatureCountMismatch { expected: 3, found: 2 })));
    }

    #[test]
    fn fingerprint_is_stable_hex() {
        let f = fingerprint(&vec![1, 2, 3]).unwrap();
        assert_eq!(f.len(), 64);
        assert_eq!(f, fingerprint(&vec![1, 2, 3]).unwrap());
        assert_ne!(f, fingerprint(&vec![1, 2, 4]).unwrap());
    }
}
