//! Exact finite distributions over `(x, y, ỹ, z)` and the checks that run on
//! them: the two motivating example tables, the clean-group harm and
//! perceived-fairness gap results, the peer-loss shift, and the rate
//! corrections.
//!
//! Worlds are generic over [`Scalar`] so every identity can be checked with
//! exact rationals.

use std::fmt;

use num_rational::Ratio;
use num_traits::{Num, One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fairness::{self, GroupConfusion, GroupRates, LabelFlavor, Metric};
use crate::loss::{base_loss, surrogate_loss, LossKind};
use crate::noise_estimation::{GroupEstimate, NoiseEstimate};

/// Numeric type a world can be evaluated in.
pub trait Scalar: Clone + fmt::Debug + PartialOrd + Num + Signed {
    fn ratio(num: i64, den: i64) -> Self;
    fn as_f64(&self) -> f64;
    /// Slack allowed when checking that masses sum to one.
    fn slack() -> Self;
}

impl Scalar for f64 {
    fn ratio(num: i64, den: i64) -> Self {
        num as f64 / den as f64
    }
    fn as_f64(&self) -> f64 {
        *self
    }
    fn slack() -> Self {
        1e-9
    }
}

pub type Exact = Ratio<i128>;

impl Scalar for Exact {
    fn ratio(num: i64, den: i64) -> Self {
        Ratio::new(i128::from(num), i128::from(den))
    }
    fn as_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn slack() -> Self {
        Zero::zero()
    }
}

/// Probability mass on one `(point, group, clean label, noisy label)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldRow<T> {
    pub point: usize,
    pub group: usize,
    pub clean: i8,
    pub noisy: i8,
    pub mass: T,
}

/// Explicit finite joint distribution, optionally with a fixed classifier
/// given as one prediction per point.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteWorld<T> {
    pub num_points: usize,
    pub group_names: Vec<String>,
    pub rows: Vec<WorldRow<T>>,
    pub classifier: Option<Vec<i8>>,
}

fn sum<T: Scalar>(it: impl Iterator<Item = T>) -> T {
    it.fold(T::zero(), |a, b| a + b)
}

impl<T: Scalar> FiniteWorld<T> {
    pub fn new(num_points: usize, group_names: Vec<String>, rows: Vec<WorldRow<T>>) -> Result<Self> {
        let m = group_names.len();
        for r in &rows {
            if r.point >= num_points || r.group >= m || r.mass < T::zero() {
                return Err(Error::InvalidConfig(format!("world row {r:?} is out of range")));
            }
            if r.clean.abs() != 1 || r.noisy.abs() != 1 {
                return Err(Error::InvalidConfig("world labels must be ±1".into()));
            }
        }
        let total = sum(rows.iter().map(|r| r.mass.clone()));
        if (total - T::one()).abs() > T::slack() {
            return Err(Error::InvalidConfig("world masses must sum to one".into()));
        }
        let world = Self { num_points, group_names, rows, classifier: None };
        if world.group_mass().iter().any(|w| w.is_zero()) {
            return Err(Error::InvalidConfig("every group needs positive mass".into()));
        }
        Ok(world)
    }

    /// World from example counts `(point, group, clean, noisy, count)`.
    pub fn from_counts(num_points: usize, group_names: Vec<String>, counts: &[(usize, usize, i8, i8, i64)]) -> Result<Self> {
        let total: i64 = counts.iter().map(|c| c.4).sum();
        if total <= 0 {
            return Err(Error::InvalidConfig("counts must be positive".into()));
        }
        let rows = counts
            .iter()
            .map(|&(point, group, clean, noisy, c)| WorldRow { point, group, clean, noisy, mass: T::ratio(c, total) })
            .collect();
        Self::new(num_points, group_names, rows)
    }

    /// Flips clean rows `(point, group, label, mass)` with per-group rates
    /// `(ε⁺, ε⁻)`, independently of the point.
    pub fn flip_noise(
        num_points: usize,
        group_names: Vec<String>,
        clean: &[(usize, usize, i8, T)],
        eps: &[(T, T)],
    ) -> Result<Self> {
        if eps.len() != group_names.len() {
            return Err(Error::ShapeMismatch("noise rates do not cover every group".into()));
        }
        let mut rows = Vec::new();
        for (point, group, y, mass) in clean.iter().cloned() {
            let (ep, em) = eps[group].clone();
            let flip = if y == 1 { ep } else { em };
            rows.push(WorldRow { point, group, clean: y, noisy: y, mass: mass.clone() * (T::one() - flip.clone()) });
            rows.push(WorldRow { point, group, clean: y, noisy: -y, mass: mass * flip });
        }
        Self::new(num_points, group_names, rows)
    }

    pub fn with_classifier(mut self, table: Vec<i8>) -> Result<Self> {
        if table.len() != self.num_points {
            return Err(Error::ShapeMismatch("decision table length differs from the point count".into()));
        }
        self.classifier = Some(table);
        Ok(self)
    }

    pub fn num_groups(&self) -> usize {
        self.group_names.len()
    }

    fn mass_by_group(&self, keep: impl Fn(&WorldRow<T>) -> bool) -> Vec<T> {
        let mut out = vec![T::zero(); self.num_groups()];
        for r in self.rows.iter().filter(|r| keep(r)) {
            out[r.group] = out[r.group].clone() + r.mass.clone();
        }
        out
    }

    pub fn group_mass(&self) -> Vec<T> {
        self.mass_by_group(|_| true)
    }

    /// `P(Y = +1 | z)`
    pub fn priors(&self) -> Vec<T> {
        let pos = self.mass_by_group(|r| r.clean == 1);
        pos.into_iter().zip(self.group_mass()).map(|(p, w)| p / w).collect()
    }

    /// `(ε⁺_z, ε⁻_z)` implied by the joint.
    pub fn noise_rates(&self) -> Result<Vec<(T, T)>> {
        let pos = self.mass_by_group(|r| r.clean == 1);
        let neg = self.mass_by_group(|r| r.clean == -1);
        let pos_flip = self.mass_by_group(|r| r.clean == 1 && r.noisy == -1);
        let neg_flip = self.mass_by_group(|r| r.clean == -1 && r.noisy == 1);
        (0..self.num_groups())
            .map(|z| {
                if pos[z].is_zero() || neg[z].is_zero() {
                    return Err(Error::DegenerateGroup { group: z, label: if pos[z].is_zero() { 1 } else { -1 } });
                }
                Ok((pos_flip[z].clone() / pos[z].clone(), neg_flip[z].clone() / neg[z].clone()))
            })
            .collect()
    }

    fn label(r: &WorldRow<T>, flavor: LabelFlavor) -> i8 {
        match flavor {
            LabelFlavor::Clean => r.clean,
            LabelFlavor::Noisy => r.noisy,
        }
    }

    /// Per-group `(TPR, FPR)` of a decision table under clean or noisy labels.
    pub fn rates(&self, table: &[i8], flavor: LabelFlavor) -> Result<Vec<(T, T)>> {
        let pos = self.mass_by_group(|r| Self::label(r, flavor) == 1);
        let neg = self.mass_by_group(|r| Self::label(r, flavor) == -1);
        let tp = self.mass_by_group(|r| Self::label(r, flavor) == 1 && table[r.point] == 1);
        let fp = self.mass_by_group(|r| Self::label(r, flavor) == -1 && table[r.point] == 1);
        (0..self.num_groups())
            .map(|z| {
                if pos[z].is_zero() {
                    return Err(Error::DegenerateGroup { group: z, label: 1 });
                }
                if neg[z].is_zero() {
                    return Err(Error::DegenerateGroup { group: z, label: -1 });
                }
                Ok((tp[z].clone() / pos[z].clone(), fp[z].clone() / neg[z].clone()))
            })
            .collect()
    }

    /// `P(f = +1 | z)`
    pub fn positive_rate(&self, table: &[i8]) -> Vec<T> {
        let pos = self.mass_by_group(|r| table[r.point] == 1);
        pos.into_iter().zip(self.group_mass()).map(|(p, w)| p / w).collect()
    }

    /// Mass of agreement between the table and the labels, optionally within one group.
    pub fn accuracy(&self, table: &[i8], flavor: LabelFlavor) -> T {
        sum(self.rows.iter().filter(|r| table[r.point] == Self::label(r, flavor)).map(|r| r.mass.clone()))
    }

    /// Expected group-weighted peer loss under 0-1 loss with the peer drawn
    /// independently from the same group:
    /// `Σ_z P(z)/Δ_z · (P(f ≠ Ỹ | z) − α·[P(f=+1|z)P(Ỹ=−1|z) + P(f=−1|z)P(Ỹ=+1|z)])`.
    pub fn expected_group_peer(&self, table: &[i8], alpha: T) -> Result<T> {
        let eps = self.noise_rates()?;
        let weight = self.group_mass();
        let err = self.mass_by_group(|r| table[r.point] != r.noisy);
        let noisy_pos = self.mass_by_group(|r| r.noisy == 1);
        let f_pos = self.positive_rate(table);
        let mut total = T::zero();
        for z in 0..self.num_groups() {
            let w = weight[z].clone();
            let delta = T::one() - eps[z].0.clone() - eps[z].1.clone();
            if delta <= T::zero() {
                return Err(Error::HypothesisViolation(format!("group {z} has no label signal")));
            }
            let p_noisy = noisy_pos[z].clone() / w.clone();
            let independent =
                f_pos[z].clone() * (T::one() - p_noisy.clone()) + (T::one() - f_pos[z].clone()) * p_noisy;
            let own = err[z].clone() / w.clone();
            total = total + w * (own - alpha.clone() * independent) / delta;
        }
        Ok(total)
    }

    /// True when features are independent of the clean label given the noisy
    /// label and group, i.e. the classifier only sees the clean label through
    /// the noisy one.
    pub fn is_screened(&self) -> bool {
        let m = self.num_groups();
        let k = self.num_points;
        // cell[z][ỹ][x][y]
        let mut cell = vec![vec![vec![[T::zero(), T::zero()]; k]; 2]; m];
        for r in &self.rows {
            let c = &mut cell[r.group][usize::from(r.noisy != 1)][r.point][usize::from(r.clean != 1)];
            *c = c.clone() + r.mass.clone();
        }
        for groups in &cell {
            for by_point in groups {
                let total_pos = sum(by_point.iter().map(|c| c[0].clone()));
                let total = sum(by_point.iter().map(|c| c[0].clone() + c[1].clone()));
                for c in by_point {
                    let x_mass = c[0].clone() + c[1].clone();
                    // P(y=+, x | ỹ) · P(ỹ) must equal P(x | ỹ) · P(y=+ | ỹ)
                    if c[0].clone() * total.clone() != x_mass * total_pos.clone() {
                        return false;
                    }
                }
            }
        }
        true
    }

    pub fn to_f64(&self) -> FiniteWorld<f64> {
        FiniteWorld {
            num_points: self.num_points,
            group_names: self.group_names.clone(),
            rows: self
                .rows
                .iter()
                .map(|r| WorldRow { point: r.point, group: r.group, clean: r.clean, noisy: r.noisy, mass: r.mass.as_f64() })
                .collect(),
            classifier: self.classifier.clone(),
        }
    }
}

/// Every `±1` decision table over `num_points` points, in binary order.
pub fn decision_tables(num_points: usize) -> Result<Vec<Vec<i8>>> {
    if num_points > 5 {
        return Err(Error::InvalidConfig(format!("exhaustive search is limited to 5 points, got {num_points}")));
    }
    Ok((0..1u32 << num_points)
        .map(|bits| (0..num_points).map(|p| if bits >> (num_points - 1 - p) & 1 == 1 { 1 } else { -1 }).collect())
        .collect())
}

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn push(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.into(), passed, detail: detail.into() });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn extend(&mut self, other: Report) {
        self.checks.extend(other.checks);
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        Ok(())
    }
}

fn show(table: &[i8]) -> String {
    let cells: Vec<String> = table.iter().map(|v| format!("{v:+}")).collect();
    format!("({})", cells.join(","))
}

/// Per-group majority vote of the noisy labels at every point.
pub fn group_bayes_table<T: Scalar>(world: &FiniteWorld<T>, group: usize) -> Vec<i8> {
    (0..world.num_points)
        .map(|p| {
            let pos = sum(world.rows.iter().filter(|r| r.group == group && r.point == p && r.noisy == 1).map(|r| r.mass.clone()));
            let neg = sum(world.rows.iter().filter(|r| r.group == group && r.point == p && r.noisy == -1).map(|r| r.mass.clone()));
            if pos > neg {
                1
            } else {
                -1
            }
        })
        .collect()
}

/// Non-constant tables with exactly equal noisy TPR across groups that
/// maximize pooled noisy accuracy, plus that accuracy.
pub fn fair_optimal_tables<T: Scalar>(world: &FiniteWorld<T>) -> Result<(Vec<Vec<i8>>, T)> {
    let mut best: Vec<Vec<i8>> = Vec::new();
    let mut best_acc = T::zero();
    for table in decision_tables(world.num_points)? {
        if table.iter().all(|&v| v == table[0]) {
            continue;
        }
        let rates = world.rates(&table, LabelFlavor::Noisy)?;
        if rates.iter().any(|r| r.0 != rates[0].0) {
            continue;
        }
        let acc = world.accuracy(&table, LabelFlavor::Noisy);
        if best.is_empty() || acc > best_acc {
            best = vec![table];
            best_acc = acc;
        } else if acc == best_acc {
            best.push(table);
        }
    }
    Ok((best, best_acc))
}

const POINTS: [&str; 4] = ["(0,0)", "(0,1)", "(1,0)", "(1,1)"];

/// First example: group A clean, group B flips 70% of its negatives.
pub fn clean_group_harm_world() -> Result<FiniteWorld<Exact>> {
    let counts = [
        (0, 0, -1, -1, 25),
        (1, 0, -1, -1, 25),
        (2, 0, 1, 1, 25),
        (3, 0, 1, 1, 25),
        (0, 1, -1, 1, 70),
        (0, 1, -1, -1, 30),
        (1, 1, -1, 1, 70),
        (1, 1, -1, -1, 30),
        (2, 1, 1, 1, 100),
        (3, 1, 1, 1, 100),
    ];
    FiniteWorld::from_counts(4, vec!["A".into(), "B".into()], &counts)
}

/// Second example: a quarter of group B's labels are wrong.
pub fn perceived_fairness_world() -> Result<FiniteWorld<Exact>> {
    let counts = [
        (0, 0, -1, -1, 100),
        (1, 0, -1, -1, 100),
        (2, 0, 1, 1, 100),
        (3, 0, 1, 1, 100),
        (0, 1, -1, 1, 75),
        (0, 1, -1, -1, 225),
        (1, 1, 1, 1, 75),
        (1, 1, 1, -1, 25),
        (2, 1, 1, 1, 75),
        (2, 1, 1, -1, 25),
        (3, 1, 1, 1, 75),
        (3, 1, 1, -1, 25),
    ];
    FiniteWorld::from_counts(4, vec!["A".into(), "B".into()], &counts)
}

fn check_table(report: &mut Report, name: &str, found: &[i8], expected: &[i8]) {
    let bad: Vec<&str> = (0..expected.len()).filter(|&p| found[p] != expected[p]).map(|p| POINTS[p]).collect();
    let detail = if bad.is_empty() {
        show(found)
    } else {
        format!("got {} expected {}; mismatched cells {}", show(found), show(expected), bad.join(" "))
    };
    report.push(name, bad.is_empty(), detail);
}

fn check_fair_column(report: &mut Report, name: &str, world: &FiniteWorld<Exact>, printed: &[i8]) -> Result<Vec<Vec<i8>>> {
    let (ties, acc) = fair_optimal_tables(world)?;
    let listed: Vec<String> = ties.iter().map(|t| show(t)).collect();
    report.push(
        name,
        ties.iter().any(|t| t == printed),
        format!("printed {} among optimal tables [{}] at noisy accuracy {acc}", show(printed), listed.join(" ")),
    );
    Ok(ties)
}

/// Recomputes the two example tables by exhaustive search and checks the
/// printed decision columns and the stated clean rates.
pub fn verify_example_tables() -> Result<Report> {
    let mut report = Report::default();
    let half = Exact::ratio(1, 2);

    let w = clean_group_harm_world()?;
    check_table(&mut report, "clean-group-harm: group A optimum", &group_bayes_table(&w, 0), &[-1, -1, 1, 1]);
    check_table(&mut report, "clean-group-harm: group B optimum", &group_bayes_table(&w, 1), &[1, 1, 1, 1]);
    let printed = [1, -1, 1, -1];
    let ties = check_fair_column(&mut report, "clean-group-harm: fair optimum", &w, &printed)?;
    for table in std::iter::once(printed.to_vec()).chain(ties) {
        let clean = w.rates(&table, LabelFlavor::Clean)?;
        let noisy = w.rates(&table, LabelFlavor::Noisy)?;
        report.push(
            format!("clean-group-harm: {} rates", show(&table)),
            clean[0].0 == half && clean[0].1 == half && noisy[0].0 == half && noisy[1].0 == half,
            format!(
                "group A clean TPR {} FPR {}, noisy TPR A {} B {}",
                clean[0].0, clean[0].1, noisy[0].0, noisy[1].0
            ),
        );
    }

    let w = perceived_fairness_world()?;
    check_table(&mut report, "perceived-fairness: group A optimum", &group_bayes_table(&w, 0), &[-1, -1, 1, 1]);
    check_table(&mut report, "perceived-fairness: group B optimum", &group_bayes_table(&w, 1), &[-1, 1, 1, 1]);
    let printed = [-1, 1, -1, 1];
    let ties = check_fair_column(&mut report, "perceived-fairness: fair optimum", &w, &printed)?;
    for table in std::iter::once(printed.to_vec()).chain(ties) {
        let clean = w.rates(&table, LabelFlavor::Clean)?;
        report.push(
            format!("perceived-fairness: {} rates", show(&table)),
            clean[1].0 == Exact::ratio(2, 3) && clean[0].0 == half,
            format!("clean TPR A {} B {}", clean[0].0, clean[1].0),
        );
    }
    Ok(report)
}

/// Two groups with identical clean distributions; group 0 clean, group 1
/// flipped symmetrically with rate `e`.
pub fn identical_groups_world(e: Exact) -> Result<FiniteWorld<Exact>> {
    let mut clean = Vec::new();
    // P(x) = (1,2,3,4)/10 and P(y=+1|x) = (1,2,3,4)/5, shared by both groups
    for z in 0..2 {
        for p in 0..4 {
            let px = Exact::ratio(p as i64 + 1, 20);
            let pos = Exact::ratio(p as i64 + 1, 5);
            clean.push((p, z, 1, px * pos));
            clean.push((p, z, -1, px * (Exact::one() - pos)));
        }
    }
    clean.retain(|c| !c.3.is_zero());
    FiniteWorld::flip_noise(4, vec!["clean".into(), "noisy".into()], &clean, &[(Exact::zero(), Exact::zero()), (e, e)])
}

/// With one clean and one symmetrically noised copy of the same group, every
/// table with equal TPR (clean group) and noisy TPR (noisy group) has
/// `TPR = FPR` on the clean group.
pub fn verify_clean_group_harm(world: &FiniteWorld<Exact>) -> Result<Report> {
    if world.num_groups() != 2 {
        return Err(Error::HypothesisViolation("exactly two groups are required".into()));
    }
    let eps = world.noise_rates()?;
    if !eps[0].0.is_zero() || !eps[0].1.is_zero() || eps[1].0 != eps[1].1 || eps[1].0.is_zero() {
        return Err(Error::HypothesisViolation("group 0 must be clean and group 1 symmetrically noised".into()));
    }
    let clean_joint = |z: usize| {
        let mut cells = vec![[Exact::zero(), Exact::zero()]; world.num_points];
        for r in world.rows.iter().filter(|r| r.group == z) {
            let c = &mut cells[r.point][usize::from(r.clean != 1)];
            *c += r.mass;
        }
        let w = world.group_mass()[z];
        cells.into_iter().map(|c| [c[0] / w, c[1] / w]).collect::<Vec<_>>()
    };
    if clean_joint(0) != clean_joint(1) {
        return Err(Error::HypothesisViolation("groups must share one clean distribution".into()));
    }
    let mut report = Report::default();
    let mut constrained = 0;
    let mut failures = Vec::new();
    for table in decision_tables(world.num_points)? {
        let clean = world.rates(&table, LabelFlavor::Clean)?;
        let noisy = world.rates(&table, LabelFlavor::Noisy)?;
        if clean[0].0 != noisy[1].0 {
            continue;
        }
        constrained += 1;
        if clean[0].0 != clean[0].1 {
            failures.push(show(&table));
        }
    }
    report.push(
        format!("clean-group-harm e={}", eps[1].0),
        failures.is_empty() && constrained > 0,
        format!("{constrained} constrained tables, {} informative: {}", failures.len(), failures.join(" ")),
    );
    Ok(report)
}

fn random_ratio<R: Rng>(rng: &mut R, lo: i64, hi: i64, den: i64) -> Exact {
    Exact::ratio(rng.random_range(lo..=hi), den)
}

fn random_simplex<R: Rng>(rng: &mut R, k: usize) -> Vec<Exact> {
    let raw: Vec<i64> = (0..k).map(|_| rng.random_range(1..=12)).collect();
    let total: i64 = raw.iter().sum();
    raw.into_iter().map(|v| Exact::ratio(v, total)).collect()
}

/// Group-level ingredients of a world where the point is drawn given the
/// noisy label.
struct ScreenedGroup {
    weight: Exact,
    noisy_pos: Exact,
    /// `P(Y=+1 | Ỹ=+1)`, `P(Y=+1 | Ỹ=−1)`
    posterior: (Exact, Exact),
    /// `P(x | Ỹ=+1)`, `P(x | Ỹ=−1)`
    px: [Vec<Exact>; 2],
}

fn screened_world(num_points: usize, groups: &[ScreenedGroup]) -> Result<FiniteWorld<Exact>> {
    let total: Exact = groups.iter().map(|g| g.weight).sum();
    let mut rows = Vec::new();
    for (z, g) in groups.iter().enumerate() {
        for (k, noisy) in [(0usize, 1i8), (1, -1)] {
            let p_noisy = if k == 0 { g.noisy_pos } else { Exact::one() - g.noisy_pos };
            let post = if k == 0 { g.posterior.0 } else { g.posterior.1 };
            for (x, &px) in g.px[k].iter().enumerate() {
                for (clean, py) in [(1i8, post), (-1, Exact::one() - post)] {
                    let mass = g.weight / total * p_noisy * py * px;
                    if !mass.is_zero() {
                        rows.push(WorldRow { point: x, group: z, clean, noisy, mass });
                    }
                }
            }
        }
    }
    let names = (0..groups.len()).map(|z| format!("g{z}")).collect();
    FiniteWorld::new(num_points, names, rows)
}

fn random_screened_group<R: Rng>(rng: &mut R, num_points: usize) -> ScreenedGroup {
    let hi = random_ratio(rng, 11, 19, 20);
    let lo = random_ratio(rng, 1, 9, 20);
    ScreenedGroup {
        weight: random_ratio(rng, 1, 10, 1),
        noisy_pos: random_ratio(rng, 2, 8, 10),
        posterior: (hi, lo),
        px: [random_simplex(rng, num_points), random_simplex(rng, num_points)],
    }
}

/// Random screened world with `num_groups` groups over `num_points` points.
pub fn random_screened_world<R: Rng>(rng: &mut R, num_points: usize, num_groups: usize) -> Result<FiniteWorld<Exact>> {
    let groups: Vec<ScreenedGroup> = (0..num_groups).map(|_| random_screened_group(rng, num_points)).collect();
    screened_world(num_points, &groups)
}

/// Random screened world whose fixed classifier `table` has the same noisy
/// TPR and FPR in every group.
pub fn random_equal_odds_world<R: Rng>(
    rng: &mut R,
    table: &[i8],
    num_groups: usize,
) -> Result<FiniteWorld<Exact>> {
    let pos_points: Vec<usize> = (0..table.len()).filter(|&p| table[p] == 1).collect();
    if pos_points.is_empty() || pos_points.len() == table.len() {
        return Err(Error::InvalidConfig("the classifier must predict both classes".into()));
    }
    // common P(f=+1 | Ỹ=+1) and P(f=+1 | Ỹ=−1)
    let targets = [random_ratio(rng, 1, 19, 20), random_ratio(rng, 1, 19, 20)];
    let mut groups: Vec<ScreenedGroup> = (0..num_groups).map(|_| random_screened_group(rng, table.len())).collect();
    for g in &mut groups {
        for (k, px) in g.px.iter_mut().enumerate() {
            let on: Exact = pos_points.iter().map(|&p| px[p]).sum();
            let off = Exact::one() - on;
            for (p, v) in px.iter_mut().enumerate() {
                *v = if table[p] == 1 { *v / on * targets[k] } else { *v / off * (Exact::one() - targets[k]) };
            }
        }
    }
    screened_world(table.len(), &groups)?.with_classifier(table.to_vec())
}

/// Random flip-noise world with `P(Y=+1|z) = 1/2` in every group.
pub fn random_balanced_world<R: Rng>(rng: &mut R, num_points: usize, num_groups: usize) -> Result<FiniteWorld<Exact>> {
    let weights: Vec<Exact> = (0..num_groups).map(|_| random_ratio(rng, 1, 10, 1)).collect();
    let total: Exact = weights.iter().sum();
    let mut clean = Vec::new();
    let mut eps = Vec::new();
    for (z, w) in weights.iter().enumerate() {
        for (y, px) in [(1i8, random_simplex(rng, num_points)), (-1, random_simplex(rng, num_points))] {
            for (p, v) in px.into_iter().enumerate() {
                clean.push((p, z, y, w / total * Exact::ratio(1, 2) * v));
            }
        }
        eps.push((random_ratio(rng, 0, 9, 20), random_ratio(rng, 0, 9, 20)));
    }
    let names = (0..num_groups).map(|z| format!("g{z}")).collect();
    FiniteWorld::flip_noise(num_points, names, &clean, &eps)
}

fn require_screened(world: &FiniteWorld<Exact>) -> Result<()> {
    if !world.is_screened() {
        return Err(Error::HypothesisViolation(
            "features must be independent of the clean label given the noisy label".into(),
        ));
    }
    Ok(())
}

fn noisy_confusion(world: &FiniteWorld<Exact>, table: &[i8]) -> Result<GroupConfusion> {
    let noisy = world.rates(table, LabelFlavor::Noisy)?;
    let pos_rate = world.positive_rate(table);
    Ok(GroupConfusion {
        flavor: LabelFlavor::Noisy,
        group_names: world.group_names.clone(),
        groups: noisy
            .iter()
            .zip(&pos_rate)
            .map(|((t, f), p)| GroupRates {
                tpr: t.as_f64(),
                fpr: f.as_f64(),
                positive_rate: p.as_f64(),
                positive_count: 1,
                negative_count: 1,
            })
            .collect(),
    })
}

fn true_estimate(world: &FiniteWorld<Exact>) -> Result<NoiseEstimate> {
    let eps = world.noise_rates()?;
    let priors = world.priors();
    NoiseEstimate::new(
        world.group_names.clone(),
        eps.iter()
            .zip(&priors)
            .map(|((ep, em), pi)| GroupEstimate {
                eps_plus: ep.as_f64(),
                eps_minus: em.as_f64(),
                prior_plus: pi.as_f64(),
                clipped: false,
            })
            .collect(),
    )
}

/// Largest deviation between the clean rates and both correction maps
/// (noise-rate form and prior form) for the world's classifier.
pub fn rate_correction_error(world: &FiniteWorld<Exact>) -> Result<f64> {
    require_screened(world)?;
    let table = world.classifier.clone().ok_or_else(|| Error::InvalidConfig("world has no classifier".into()))?;
    let clean = world.rates(&table, LabelFlavor::Clean)?;
    let gc = noisy_confusion(world, &table)?;
    let est = true_estimate(world)?;
    let sl = fairness::surrogate_statistic_sl(&gc, &est, Metric::EqualOdds)?;
    let peer = fairness::surrogate_statistic_peer(&gc, &est, Metric::EqualOdds)?;
    let mut worst: f64 = 0.0;
    for (z, (t, f)) in clean.iter().enumerate() {
        let g = &gc.groups[z];
        let e = est.group(z);
        let direct = fairness::correct_rates((g.tpr, g.fpr), (e.eps_plus, e.eps_minus));
        for v in [
            (direct.0 - t.as_f64()).abs(),
            (direct.1 - f.as_f64()).abs(),
            (sl[0][z] - t.as_f64()).abs(),
            (sl[1][z] - f.as_f64()).abs(),
            (peer[0][z] - t.as_f64()).abs(),
            (peer[1][z] - f.as_f64()).abs(),
        ] {
            worst = worst.max(v);
        }
    }
    Ok(worst)
}

/// Largest deviation between clean pairwise gaps and the closed form
/// `|R̃TPR − R̃FPR|·|ε_z − ε_z'|` for a classifier with equal noisy odds.
pub fn perceived_fairness_gap_error(world: &FiniteWorld<Exact>) -> Result<f64> {
    require_screened(world)?;
    let table = world.classifier.clone().ok_or_else(|| Error::InvalidConfig("world has no classifier".into()))?;
    let noisy = world.rates(&table, LabelFlavor::Noisy)?;
    if noisy.iter().any(|r| *r != noisy[0]) {
        return Err(Error::HypothesisViolation("classifier must have equal noisy odds".into()));
    }
    let clean = world.rates(&table, LabelFlavor::Clean)?;
    let eps = world.noise_rates()?;
    let (t, f) = (noisy[0].0.as_f64(), noisy[0].1.as_f64());
    let mut worst: f64 = 0.0;
    for z in 0..world.num_groups() {
        for zp in 0..world.num_groups() {
            if z == zp {
                continue;
            }
            let (gt, gf) = fairness::hidden_clean_gap(
                (t, f),
                (eps[z].0.as_f64(), eps[z].1.as_f64()),
                (eps[zp].0.as_f64(), eps[zp].1.as_f64()),
            );
            // exact side
            let et = (clean[z].0 - clean[zp].0).abs();
            let ef = (clean[z].1 - clean[zp].1).abs();
            let closed_t = (noisy[0].0 - noisy[0].1).abs() * (eps[z].0 - eps[zp].0).abs();
            let closed_f = (noisy[0].0 - noisy[0].1).abs() * (eps[z].1 - eps[zp].1).abs();
            if et != closed_t || ef != closed_f {
                return Ok(f64::INFINITY);
            }
            worst = worst.max((gt - et.as_f64()).abs()).max((gf - ef.as_f64()).abs());
        }
    }
    Ok(worst)
}

/// `max |E_noisy[ℓ_gp] − E_clean[ℓ] + 1/2|` over every decision table, with
/// 0-1 loss and unit balance parameter.
pub fn peer_shift_error(world: &FiniteWorld<Exact>) -> Result<Exact> {
    if world.priors().iter().any(|p| *p != Exact::ratio(1, 2)) {
        return Err(Error::HypothesisViolation("every group must have balanced clean classes".into()));
    }
    let mut worst = Exact::zero();
    for table in decision_tables(world.num_points)? {
        let peer = world.expected_group_peer(&table, Exact::one())?;
        let clean_err = Exact::one() - world.accuracy(&table, LabelFlavor::Clean);
        let gap = (peer - clean_err + Exact::ratio(1, 2)).abs();
        if gap > worst {
            worst = gap;
        }
    }
    Ok(worst)
}

/// `max |(1−ε⁺)·ℓ̃(s,+1) + ε⁺·ℓ̃(s,−1) − ℓ(s,+1)|` (and the negative-class
/// analogue) over random scores and noise rates.
pub fn surrogate_unbiasedness_error<R: Rng>(rng: &mut R, kind: LossKind, draws: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let s: f64 = rng.random_range(-8.0..8.0);
        let ep: f64 = rng.random_range(0.0..0.49);
        let em: f64 = rng.random_range(0.0..0.49);
        let y: i8 = if rng.random_bool(0.5) { 1 } else { -1 };
        let flip = if y == 1 { ep } else { em };
        let expected =
            (1.0 - flip) * surrogate_loss(kind, s, y, ep, em)? + flip * surrogate_loss(kind, s, -y, ep, em)?;
        worst = worst.max((expected - base_loss(kind, s, y)).abs());
    }
    Ok(worst)
}

/// Every exact check: the example tables, clean-group harm at three noise
/// levels, 100 equal-odds worlds, 100 rate-correction worlds, 5 balanced
/// peer-loss worlds and 1000 unbiasedness draws per base loss.
pub fn exact_suite(seed: u64) -> Result<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = verify_example_tables()?;
    for e in [Exact::ratio(1, 10), Exact::ratio(3, 10), Exact::ratio(9, 20)] {
        report.extend(verify_clean_group_harm(&identical_groups_world(e)?)?);
    }

    let random_table = |rng: &mut ChaCha8Rng| loop {
        let t: Vec<i8> = (0..4).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect();
        if t.iter().any(|&v| v != t[0]) {
            return t;
        }
    };
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let table = random_table(&mut rng);
        let groups = rng.random_range(2..=3);
        worst = worst.max(perceived_fairness_gap_error(&random_equal_odds_world(&mut rng, &table, groups)?)?);
    }
    report.push("perceived-fairness gap, 100 worlds", worst <= 1e-12, format!("max error {worst:e}"));

    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let table = random_table(&mut rng);
        let groups = rng.random_range(2..=3);
        let world = random_screened_world(&mut rng, 4, groups)?.with_classifier(table)?;
        worst = worst.max(rate_correction_error(&world)?);
    }
    report.push("rate corrections, 100 worlds", worst <= 1e-12, format!("max error {worst:e}"));

    let mut worst = Exact::zero();
    for _ in 0..5 {
        let world = random_balanced_world(&mut rng, 4, 2)?;
        worst = worst.max(peer_shift_error(&world)?);
    }
    report.push("peer-loss shift, 5 balanced worlds", worst.as_f64() <= 1e-12, format!("max deviation from -1/2: {worst}"));

    for (name, kind) in [("logistic", LossKind::LOGISTIC), ("0-1", LossKind::ZeroOne)] {
        let err = surrogate_unbiasedness_error(&mut rng, kind, 1000)?;
        report.push(format!("surrogate unbiasedness, {name}"), err <= 1e-10, format!("max error {err:e}"));
    }
    Ok(report)
}
