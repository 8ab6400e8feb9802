//! Tabular data in `(x, y, z)` form: an intercept-augmented feature matrix,
//! `±1` labels and dense group ids.
//!
//! Besides ingestion this module owns the two sources of randomness that the
//! experiment protocol depends on: the stratified train/validation/test split
//! and group-dependent label-noise injection.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature matrix, labels and group ids for `n` examples.
///
/// Column 0 of the feature matrix is always the intercept `1.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<i8>,
    groups: Vec<usize>,
    group_names: Vec<String>,
    feature_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from raw feature rows (without the intercept column).
    pub fn new(
        rows: &[Vec<f64>],
        labels: Vec<i8>,
        groups: Vec<usize>,
        group_names: Vec<String>,
    ) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut features = Vec::with_capacity(rows.len() * (d + 1));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::InvalidDataset(format!(
                    "row {i} has {} features, expected {d}",
                    row.len()
                )));
            }
            features.push(1.0);
            features.extend_from_slice(row);
        }
        let feature_names = (1..=d).map(|j| format!("x{j}")).collect();
        Self::from_flat(features, d + 1, labels, groups, group_names, feature_names)
    }

    /// Builds a dataset from a row-major matrix that already carries the
    /// intercept in column 0.
    pub fn from_flat(
        features: Vec<f64>,
        dim: usize,
        labels: Vec<i8>,
        groups: Vec<usize>,
        group_names: Vec<String>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::InvalidDataset("dataset has no rows".into()));
        }
        if dim == 0 || features.len() != n * dim {
            return Err(Error::InvalidDataset(format!(
                "feature matrix has {} entries, expected {n} x {dim}",
                features.len()
            )));
        }
        if groups.len() != n {
            return Err(Error::InvalidDataset(format!(
                "{} group ids for {n} labels",
                groups.len()
            )));
        }
        if feature_names.len() + 1 != dim {
            return Err(Error::InvalidDataset("feature name count does not match width".into()));
        }
        if let Some(&y) = labels.iter().find(|&&y| y != 1 && y != -1) {
            return Err(Error::InvalidDataset(format!("label {y} is not +1 or -1")));
        }
        let m = group_names.len();
        let mut seen = vec![false; m];
        for &g in &groups {
            if g >= m {
                return Err(Error::InvalidDataset(format!("group id {g} out of range 0..{m}")));
            }
            seen[g] = true;
        }
        if let Some(g) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidDataset(format!("group `{}` has no rows", group_names[g])));
        }
        if (0..n).any(|i| features[i * dim] != 1.0) {
            return Err(Error::InvalidDataset("column 0 must be the intercept".into()));
        }
        Ok(Self { features, dim, labels, groups, group_names, feature_names })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of feature columns including the intercept.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_groups(&self) -> usize {
        self.group_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn label(&self, i: usize) -> i8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn group(&self, i: usize) -> usize {
        self.groups[i]
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    pub fn group_names(&self) -> &[String] {
        &self.group_names
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn group_id(&self, name: &str) -> Option<usize> {
        self.group_names.iter().position(|g| g == name)
    }

    /// Indices of the examples in group `z`, in row order.
    pub fn group_indices(&self, z: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.groups[i] == z).collect()
    }

    /// Per-group `(positives, negatives)` counts under the stored labels.
    pub fn class_counts(&self) -> Vec<(usize, usize)> {
        let mut counts = vec![(0, 0); self.num_groups()];
        for (&y, &g) in self.labels.iter().zip(&self.groups) {
            if y == 1 {
                counts[g].0 += 1;
            } else {
                counts[g].1 += 1;
            }
        }
        counts
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_groups()];
        for &g in &self.groups {
            sizes[g] += 1;
        }
        sizes
    }

    /// Same rows with a replacement label vector.
    pub fn with_labels(&self, labels: Vec<i8>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                self.len()
            )));
        }
        Self::from_flat(
            self.features.clone(),
            self.dim,
            labels,
            self.groups.clone(),
            self.group_names.clone(),
            self.feature_names.clone(),
        )
    }

    /// Same rows and labels with extra columns appended to every row.
    pub fn with_extra_columns(&self, names: &[String], extra: impl Fn(usize) -> Vec<f64>) -> Result<Self> {
        let dim = self.dim + names.len();
        let mut features = Vec::with_capacity(self.len() * dim);
        for i in 0..self.len() {
            features.extend_from_slice(self.row(i));
            let cols = extra(i);
            if cols.len() != names.len() {
                return Err(Error::ShapeMismatch("extra column count".into()));
            }
            features.extend(cols);
        }
        let mut feature_names = self.feature_names.clone();
        feature_names.extend_from_slice(names);
        Self::from_flat(
            features,
            dim,
            self.labels.clone(),
            self.groups.clone(),
            self.group_names.clone(),
            feature_names,
        )
    }

    /// Rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Self::from_flat(
            features,
            self.dim,
            indices.iter().map(|&i| self.labels[i]).collect(),
            indices.iter().map(|&i| self.groups[i]).collect(),
            self.group_names.clone(),
            self.feature_names.clone(),
        )
    }

    /// Rows of `self` followed by rows of `other`; both must share groups and columns.
    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        if self.dim != other.dim || self.group_names != other.group_names {
            return Err(Error::ShapeMismatch("datasets do not share columns and groups".into()));
        }
        let mut features = self.features.clone();
        features.extend_from_slice(&other.features);
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        let mut groups = self.groups.clone();
        groups.extend_from_slice(&other.groups);
        Self::from_flat(
            features,
            self.dim,
            labels,
            groups,
            self.group_names.clone(),
            self.feature_names.clone(),
        )
    }

    /// Writes the dataset as CSV with columns `group,label,<features...>`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["group".to_string(), "label".to_string()];
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut record = vec![self.group_names[self.groups[i]].clone(), self.labels[i].to_string()];
            record.extend(self.row(i)[1..].iter().map(|v| format!("{v}")));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Column roles for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub label_column: String,
    pub positive_symbol: String,
    pub group_column: String,
    pub feature_columns: Vec<String>,
}

/// Schema plus optional noise rates, as read from one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    #[serde(flatten)]
    pub schema: Schema,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
}

impl DataConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: DataConfig = serde_json::from_str(text)?;
        if let Some(noise) = &cfg.noise {
            noise.validate()?;
        }
        Ok(cfg)
    }
}

/// Loads a CSV file and standardizes its feature columns over all rows.
pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let raw = load_dataset_raw(path, schema)?;
    Standardizer::fit(&raw).apply(&raw)
}

/// Loads a CSV file without standardizing.
pub fn load_dataset_raw(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_dataset(file, schema)
}

/// Parses CSV text from any reader. Rows are numbered from 1 (the first data
/// row after the header).
pub fn read_dataset<R: std::io::Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].trim().is_empty()) {
        return Err(Error::EmptyFile);
    }
    let position = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let label_col = position(&schema.label_column)?;
    let group_col = position(&schema.group_column)?;
    let feature_cols = schema
        .feature_columns
        .iter()
        .map(|c| position(c))
        .collect::<Result<Vec<_>>>()?;
    if feature_cols.is_empty() {
        return Err(Error::InvalidConfig("schema names no feature columns".into()));
    }

    let d = feature_cols.len();
    let mut features = Vec::new();
    let mut raw_labels: Vec<bool> = Vec::new();
    let mut symbols: Vec<String> = Vec::new();
    let mut groups = Vec::new();
    let mut group_names: Vec<String> = Vec::new();
    let mut group_ids: HashMap<String, usize> = HashMap::new();

    for (k, record) in rdr.records().enumerate() {
        let row = k + 1;
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::RaggedRow { row, expected: header.len(), found: record.len() });
        }
        let field = |col: usize| -> Result<&str> {
            let v = record[col].trim();
            if v.is_empty() {
                Err(Error::MissingValue { row, column: header[col].to_string() })
            } else {
                Ok(v)
            }
        };

        let symbol = field(label_col)?;
        if !symbols.iter().any(|s| s == symbol) {
            if symbols.len() == 2 {
                return Err(Error::TooManyLabelSymbols {
                    row,
                    symbol: symbol.to_string(),
                    seen: symbols.clone(),
                });
            }
            symbols.push(symbol.to_string());
        }
        raw_labels.push(symbol == schema.positive_symbol);

        let group = field(group_col)?;
        let next = group_ids.len();
        let id = *group_ids.entry(group.to_string()).or_insert_with(|| {
            group_names.push(group.to_string());
            next
        });
        groups.push(id);

        features.push(1.0);
        for &col in &feature_cols {
            let v = field(col)?;
            let x: f64 = v.parse().map_err(|_| Error::NonNumeric {
                row,
                column: header[col].to_string(),
                value: v.to_string(),
            })?;
            if !x.is_finite() {
                return Err(Error::NonNumeric { row, column: header[col].to_string(), value: v.to_string() });
            }
            features.push(x);
        }
    }
    if raw_labels.is_empty() {
        return Err(Error::EmptyFile);
    }
    if symbols.len() == 2 && !symbols.contains(&schema.positive_symbol) {
        return Err(Error::UnmappedLabels(symbols));
    }
    let labels = raw_labels.into_iter().map(|p| if p { 1 } else { -1 }).collect();
    Dataset::from_flat(features, d + 1, labels, groups, group_names, schema.feature_columns.clone())
}

/// Per-column mean and standard deviation of the non-intercept features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    /// Column statistics over `ds`; constant columns get mean 0 and scale 1 so
    /// they pass through unchanged.
    pub fn fit(ds: &Dataset) -> Self {
        let d = ds.dim() - 1;
        let n = ds.len() as f64;
        let mut means = vec![0.0; d];
        for i in 0..ds.len() {
            for (m, x) in means.iter_mut().zip(&ds.row(i)[1..]) {
                *m += x;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut vars = vec![0.0; d];
        for i in 0..ds.len() {
            for ((v, x), m) in vars.iter_mut().zip(&ds.row(i)[1..]).zip(&means) {
                *v += (x - m) * (x - m);
            }
        }
        let mut stds: Vec<f64> = vars.iter().map(|v| (v / n).sqrt()).collect();
        for (m, s) in means.iter_mut().zip(stds.iter_mut()) {
            if *s < 1e-12 {
                *m = 0.0;
                *s = 1.0;
            }
        }
        Self { means, stds }
    }

    pub fn identity(d: usize) -> Self {
        Self { means: vec![0.0; d], stds: vec![1.0; d] }
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if self.means.len() + 1 != ds.dim() {
            return Err(Error::FeatureCountMismatch { expected: ds.dim() - 1, found: self.means.len() });
        }
        let mut features = ds.features().to_vec();
        for row in features.chunks_mut(ds.dim()) {
            for ((x, m), s) in row[1..].iter_mut().zip(&self.means).zip(&self.stds) {
                *x = (*x - m) / s;
            }
        }
        Dataset::from_flat(
            features,
            ds.dim(),
            ds.labels().to_vec(),
            ds.groups().to_vec(),
            ds.group_names().to_vec(),
            ds.feature_names().to_vec(),
        )
    }
}

/// Flip probabilities for one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseRates {
    /// P(noisy = -1 | clean = +1)
    pub eps_plus: f64,
    /// P(noisy = +1 | clean = -1)
    pub eps_minus: f64,
}

impl NoiseRates {
    pub fn new(eps_plus: f64, eps_minus: f64) -> Result<Self> {
        let rates = Self { eps_plus, eps_minus };
        rates.check("?")?;
        Ok(rates)
    }

    pub fn delta(&self) -> f64 {
        1.0 - self.eps_plus - self.eps_minus
    }

    fn check(&self, group: &str) -> Result<()> {
        let ok = |e: f64| (0.0..1.0).contains(&e);
        if !ok(self.eps_plus) || !ok(self.eps_minus) || self.eps_plus + self.eps_minus >= 1.0 {
            return Err(Error::InvalidNoise {
                group: group.to_string(),
                eps_plus: self.eps_plus,
                eps_minus: self.eps_minus,
            });
        }
        Ok(())
    }
}

/// Noise rates keyed by group name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "std::collections::BTreeMap<String, NoiseRates>")]
#[serde(into = "std::collections::BTreeMap<String, NoiseRates>")]
pub struct NoiseSpec {
    groups: Vec<(String, NoiseRates)>,
}

impl NoiseSpec {
    pub fn new(groups: Vec<(String, NoiseRates)>) -> Result<Self> {
        let spec = Self { groups };
        spec.validate()?;
        Ok(spec)
    }

    /// Same rates for every named group.
    pub fn uniform(names: &[String], rates: NoiseRates) -> Result<Self> {
        Self::new(names.iter().map(|n| (n.clone(), rates)).collect())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, rates) in &self.groups {
            rates.check(name)?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<NoiseRates> {
        self.groups.iter().find(|(n, _)| n == name).map(|(_, r)| *r)
    }

    pub fn entries(&self) -> &[(String, NoiseRates)] {
        &self.groups
    }

    /// Rates indexed by the dataset's dense group ids.
    pub fn resolve(&self, ds: &Dataset) -> Result<Vec<NoiseRates>> {
        ds.group_names()
            .iter()
            .map(|name| self.get(name).ok_or_else(|| Error::MissingGroupNoise(name.clone())))
            .collect()
    }
}

impl TryFrom<std::collections::BTreeMap<String, NoiseRates>> for NoiseSpec {
    type Error = Error;

    fn try_from(map: std::collections::BTreeMap<String, NoiseRates>) -> Result<Self> {
        Self::new(map.into_iter().collect())
    }
}

impl From<NoiseSpec> for std::collections::BTreeMap<String, NoiseRates> {
    fn from(spec: NoiseSpec) -> Self {
        spec.groups.into_iter().collect()
    }
}

/// Fractions for the stratified three-way split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl SplitConfig {
    pub fn new(test_fraction: f64, validation_fraction: f64, seed: u64) -> Result<Self> {
        let cfg = Self { test_fraction, validation_fraction, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0)
            || !(0.0..1.0).contains(&self.validation_fraction)
            || self.test_fraction + self.validation_fraction >= 1.0
        {
            return Err(Error::InvalidConfig(format!(
                "split fractions test={} validation={} are invalid",
                self.test_fraction, self.validation_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub validation: Option<Dataset>,
    pub test: Dataset,
    /// Original row indices of each partition.
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Stratified split by `(group, label)`.
///
/// Each stratum is shuffled with its own stream of the seeded generator and
/// cut by rounding its size times each fraction. Partitions keep original row
/// order.
pub fn split(ds: &Dataset, cfg: &SplitConfig) -> Result<Split> {
    cfg.validate()?;
    let with_val = cfg.validation_fraction > 0.0;
    let parts = if with_val { 3 } else { 2 };

    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); 2 * ds.num_groups()];
    for i in 0..ds.len() {
        let slot = 2 * ds.group(i) + usize::from(ds.label(i) == -1);
        strata[slot].push(i);
    }

    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (s, members) in strata.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        let size = members.len();
        if size < parts {
            return Err(Error::Stratification {
                group: s / 2,
                label: if s % 2 == 0 { 1 } else { -1 },
                size,
                needed: parts,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(s as u64);
        members.shuffle(&mut rng);

        let mut n_test = ((size as f64 * cfg.test_fraction).round() as usize).max(1);
        let mut n_val = if with_val {
            ((size as f64 * cfg.validation_fraction).round() as usize).max(1)
        } else {
            0
        };
        // keep at least one training row
        while n_test + n_val >= size {
            if n_val > 1 && n_val >= n_test {
                n_val -= 1;
            } else {
                n_test -= 1;
            }
        }
        test.extend_from_slice(&members[..n_test]);
        val.extend_from_slice(&members[n_test..n_test + n_val]);
        train.extend_from_slice(&members[n_test + n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();

    Ok(Split {
        train: ds.select(&train)?,
        validation: if val.is_empty() { None } else { Some(ds.select(&val)?) },
        test: ds.select(&test)?,
        train_indices: train,
        validation_indices: val,
        test_indices: test,
    })
}

/// Uniform draw in `[0, 1)` from stream `stream` of the generator keyed by `seed`.
pub fn stream_uniform(seed: u64, stream: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.random::<f64>()
}

/// Flips each label independently with its group's class-conditional rate.
///
/// The decision for example `i` uses stream `i` of the generator, so changing
/// one group's rates leaves every other example's draw untouched.
pub fn inject_noise(ds: &Dataset, spec: &NoiseSpec, seed: u64) -> Result<Dataset> {
    let streams: Vec<u64> = (0..ds.len() as u64).collect();
    inject_noise_with_streams(ds, spec, seed, &streams)
}

/// [`inject_noise`] with an explicit stream id per row.
pub fn inject_noise_with_streams(ds: &Dataset, spec: &NoiseSpec, seed: u64, streams: &[u64]) -> Result<Dataset> {
    if streams.len() != ds.len() {
        return Err(Error::ShapeMismatch(format!("{} streams for {} rows", streams.len(), ds.len())));
    }
    let rates = spec.resolve(ds)?;
    let labels = (0..ds.len())
        .map(|i| {
            let r = rates[ds.group(i)];
            let y = ds.label(i);
            let eps = if y == 1 { r.eps_plus } else { r.eps_minus };
            if eps > 0.0 && stream_uniform(seed, streams[i]) < eps {
                -y
            } else {
                y
            }
        })
        .collect();
    ds.with_labels(labels)
}

/// Exact flip counts for one group.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipCounts {
    pub positives: usize,
    pub positives_flipped: usize,
    pub negatives: usize,
    pub negatives_flipped: usize,
}

impl FlipCounts {
    pub fn eps_plus(&self) -> Option<f64> {
        (self.positives > 0).then(|| self.positives_flipped as f64 / self.positives as f64)
    }

    pub fn eps_minus(&self) -> Option<f64> {
        (self.negatives > 0).then(|| self.negatives_flipped as f64 / self.negatives as f64)
    }
}

/// Per-group flip fractions between a clean dataset and its noisy copy.
pub fn empirical_flip_rates(clean: &Dataset, noisy: &Dataset) -> Result<Vec<FlipCounts>> {
    if clean.len() != noisy.len()
        || clean.groups() != noisy.groups()
        || clean.group_names() != noisy.group_names()
        || clean.features() != noisy.features()
    {
        return Err(Error::ShapeMismatch("clean and noisy datasets differ in rows".into()));
    }
    let mut counts = vec![FlipCounts::default(); clean.num_groups()];
    for i in 0..clean.len() {
        let c = &mut counts[clean.group(i)];
        let flipped = clean.label(i) != noisy.label(i);
        if clean.label(i) == 1 {
            c.positives += 1;
            c.positives_flipped += usize::from(flipped);
        } else {
            c.negatives += 1;
            c.negatives_flipped += usize::from(flipped);
        }
    }
    Ok(counts)
}
