//! Domain types shared by every stage of the pipeline: the observed data,
//! model supports, parameter points, candidate sets, linear targets and the
//! inference configuration.

use std::collections::HashMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Observed design matrix (`n x p`, no intercept) and binary responses.
///
/// Immutable after construction; every instance satisfies the invariants
/// checked by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: Vec<u8>,
}

impl Dataset {
    /// Builds a dataset from an already-binary response vector.
    pub fn new(x: DMatrix<f64>, y: Vec<u8>) -> Result<Self> {
        let labels: Vec<i64> = y.iter().map(|&v| i64::from(v)).collect();
        validate_dataset(x, &labels)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &[u8] {
        &self.y
    }

    /// Column `j` of the design as a contiguous slice.
    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.n();
        &self.x.as_slice()[j * n..(j + 1) * n]
    }

    /// Responses in sign form `2y - 1`.
    pub fn signs(&self) -> Vec<f64> {
        self.y.iter().map(|&v| if v == 1 { 1.0 } else { -1.0 }).collect()
    }

    /// True when every label is 0 or every label is 1.
    pub fn labels_degenerate(&self) -> bool {
        labels_degenerate(&self.y)
    }

    /// Returns a copy with the responses replaced.
    pub fn with_labels(&self, y: Vec<u8>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} rows",
                y.len(),
                self.n()
            )));
        }
        if let Some((row, &v)) = y.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(Error::NonBinaryLabel {
                row,
                value: i64::from(v),
            });
        }
        Ok(Self {
            x: self.x.clone(),
            y,
        })
    }

    /// Sub-design restricted to the columns of `support`, as an `n x |support|` matrix.
    pub fn restrict(&self, support: &SupportSet) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, support.len(), |i, k| self.x[(i, support.indices()[k])])
    }

    /// Selects a subset of rows (used for cross-validation folds).
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let x = self.x.select_rows(rows.iter());
        let y = rows.iter().map(|&r| self.y[r]).collect();
        Self { x, y }
    }
}

pub(crate) fn labels_degenerate(y: &[u8]) -> bool {
    y.iter().all(|&v| v == 0) || y.iter().all(|&v| v == 1)
}

/// Checks the dataset invariants and builds a [`Dataset`].
pub fn validate_dataset(x: DMatrix<f64>, y: &[i64]) -> Result<Dataset> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows but {} labels",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "design must be non-empty, got {}x{}",
            x.nrows(),
            x.ncols()
        )));
    }
    if let Some((row, &value)) = y.iter().enumerate().find(|(_, &v)| v != 0 && v != 1) {
        return Err(Error::NonBinaryLabel { row, value });
    }
    for col in 0..x.ncols() {
        for row in 0..x.nrows() {
            if !x[(row, col)].is_finite() {
                return Err(Error::NonFiniteCovariate { row, col });
            }
        }
    }
    let y = y.iter().map(|&v| v as u8).collect();
    Ok(Dataset { x, y })
}

/// Per-column centering and scaling applied by [`standardize_columns`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Columns that were constant; they are centered and given scale 1.
    pub constant: Vec<bool>,
}

impl Standardization {
    /// Maps a standardized design back to the original units.
    pub fn destandardize(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| {
            z[(i, j)] * self.scale[j] + self.mean[j]
        })
    }
}

/// Centers each column to mean 0 and scales it to sample standard deviation 1
/// (divisor `n - 1`).
pub fn standardize_columns(data: &Dataset) -> Result<(Dataset, Standardization)> {
    let n = data.n();
    if n < 2 {
        return Err(Error::TooFewRows { needed: 2, got: n });
    }
    let p = data.p();
    let mut x = data.x.clone();
    let mut mean = Vec::with_capacity(p);
    let mut scale = Vec::with_capacity(p);
    let mut constant = Vec::with_capacity(p);
    for j in 0..p {
        let col = data.column(j);
        let mu = col.iter().sum::<f64>() / n as f64;
        let ss: f64 = col.iter().map(|v| (v - mu) * (v - mu)).sum();
        let sd = (ss / (n as f64 - 1.0)).sqrt();
        let spread = col.iter().fold(0.0_f64, |m, v| m.max((v - mu).abs()));
        let is_constant = spread <= 1e-12 * (1.0 + mu.abs());
        let s = if is_constant { 1.0 } else { sd };
        for i in 0..n {
            x[(i, j)] = (x[(i, j)] - mu) / s;
        }
        mean.push(mu);
        scale.push(s);
        constant.push(is_constant);
    }
    Ok((
        Dataset {
            x,
            y: data.y.clone(),
        },
        Standardization {
            mean,
            scale,
            constant,
        },
    ))
}

/// A model: strictly increasing column indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SupportSet(Vec<usize>);

impl SupportSet {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    /// Builds a support from arbitrary indices, sorting and removing duplicates.
    pub fn new(indices: impl IntoIterator<Item = usize>) -> Self {
        let mut v: Vec<usize> = indices.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        Self(v)
    }

    /// The leading `s` indices `{0, .., s-1}`.
    pub fn first(s: usize) -> Self {
        Self((0..s).collect())
    }

    /// Indices of the nonzero entries of a coefficient vector.
    pub fn from_nonzero(beta: &[f64]) -> Self {
        Self(
            beta.iter()
                .enumerate()
                .filter(|(_, b)| **b != 0.0)
                .map(|(j, _)| j)
                .collect(),
        )
    }

    /// Like [`SupportSet::new`] but rejects indices `>= p`.
    pub fn checked(indices: impl IntoIterator<Item = usize>, p: usize) -> Result<Self> {
        let s = Self::new(indices);
        match s.0.last() {
            Some(&last) if last >= p => Err(Error::IndexOutOfRange { index: last, len: p }),
            _ => Ok(s),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.0.binary_search(&j).is_ok()
    }

    pub fn union(&self, other: &SupportSet) -> SupportSet {
        let mut out = Vec::with_capacity(self.len() + other.len());
        let (mut a, mut b) = (0, 0);
        while a < self.0.len() && b < other.0.len() {
            match self.0[a].cmp(&other.0[b]) {
                std::cmp::Ordering::Less => {
                    out.push(self.0[a]);
                    a += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(other.0[b]);
                    b += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push(self.0[a]);
                    a += 1;
                    b += 1;
                }
            }
        }
        out.extend_from_slice(&self.0[a..]);
        out.extend_from_slice(&other.0[b..]);
        SupportSet(out)
    }

    pub fn with(&self, j: usize) -> SupportSet {
        self.union(&SupportSet(vec![j]))
    }

    pub fn is_superset_of(&self, other: &SupportSet) -> bool {
        other.0.iter().all(|&j| self.contains(j))
    }

    /// Position of column `j` inside this support.
    pub fn position(&self, j: usize) -> Option<usize> {
        self.0.binary_search(&j).ok()
    }
}

impl fmt::Display for SupportSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, j) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{j}")?;
        }
        write!(f, "}}")
    }
}

/// A parameter point: a support plus the coefficients on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaPoint {
    support: SupportSet,
    coef: Vec<f64>,
}

impl ThetaPoint {
    pub fn new(support: SupportSet, coef: Vec<f64>) -> Result<Self> {
        if coef.len() != support.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficients for a support of size {}",
                coef.len(),
                support.len()
            )));
        }
        if coef.iter().any(|c| !c.is_finite()) {
            return Err(invalid("coefficients must be finite"));
        }
        Ok(Self { support, coef })
    }

    /// Builds a point from a dense `p`-vector, keeping its nonzero entries.
    pub fn from_dense(beta: &[f64]) -> Result<Self> {
        let support = SupportSet::from_nonzero(beta);
        let coef = support.indices().iter().map(|&j| beta[j]).collect();
        Self::new(support, coef)
    }

    pub fn support(&self) -> &SupportSet {
        &self.support
    }

    pub fn coef(&self) -> &[f64] {
        &self.coef
    }

    /// Dense `p`-vector with zeros off the support.
    pub fn dense(&self, p: usize) -> Vec<f64> {
        let mut out = vec![0.0; p];
        for (&j, &c) in self.support.indices().iter().zip(&self.coef) {
            out[j] = c;
        }
        out
    }
}

/// Where a candidate model came from: the repro draw and the EBIC weight that
/// selected it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub draw: usize,
    pub xi: f64,
    pub ebic: f64,
}

/// Deduplicated collection of candidate supports.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    models: Vec<SupportSet>,
    provenance: Vec<Vec<Provenance>>,
    #[serde(skip)]
    index: HashMap<SupportSet, usize>,
}

impl CandidateSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Candidate set made of the given supports, without provenance.
    pub fn from_models(models: impl IntoIterator<Item = SupportSet>) -> Self {
        let mut set = Self::new();
        for m in models {
            set.insert_model(m);
        }
        set
    }

    /// Adds a model (if new) and records where it came from. Returns `true`
    /// when the model was not already present.
    pub fn insert(&mut self, model: SupportSet, origin: Provenance) -> bool {
        let (pos, fresh) = self.position_or_insert(model);
        self.provenance[pos].push(origin);
        fresh
    }

    pub fn insert_model(&mut self, model: SupportSet) -> bool {
        self.position_or_insert(model).1
    }

    fn position_or_insert(&mut self, model: SupportSet) -> (usize, bool) {
        if self.index.len() != self.models.len() {
            self.rebuild_index();
        }
        if let Some(&pos) = self.index.get(&model) {
            return (pos, false);
        }
        let pos = self.models.len();
        self.index.insert(model.clone(), pos);
        self.models.push(model);
        self.provenance.push(Vec::new());
        (pos, true)
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .models
            .iter()
            .enumerate()
            .map(|(k, m)| (m.clone(), k))
            .collect();
    }

    pub fn models(&self) -> &[SupportSet] {
        &self.models
    }

    pub fn provenance(&self) -> &[Vec<Provenance>] {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn contains(&self, model: &SupportSet) -> bool {
        self.models.iter().any(|m| m == model)
    }

    /// Largest model cardinality in the set (0 for an empty set).
    pub fn max_cardinality(&self) -> usize {
        self.models.iter().map(SupportSet::len).max().unwrap_or(0)
    }
}

/// Surrogate loss used by the candidate-set fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Logistic,
    Hinge,
}

impl Loss {
    pub fn method_name(self) -> &'static str {
        match self {
            Loss::Logistic => "Repro-Logistic",
            Loss::Hinge => "Repro-Hinge",
        }
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Loss::Logistic => "logistic",
            Loss::Hinge => "hinge",
        })
    }
}

impl std::str::FromStr for Loss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(Loss::Logistic),
            "hinge" => Ok(Loss::Hinge),
            other => Err(invalid(format!("unknown loss `{other}`"))),
        }
    }
}

/// How the nuisance coefficients of a candidate model are chosen when
/// evaluating the nuclear statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaMode {
    /// Plug in the restricted maximum-likelihood estimate.
    Mle,
    /// Minimize the statistic over the coefficients with a simplex search
    /// started at the MLE.
    Profile,
}

impl fmt::Display for BetaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BetaMode::Mle => "mle",
            BetaMode::Profile => "profile",
        })
    }
}

/// Run-time knobs shared by the inference routines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    /// Confidence level (coverage target), e.g. 0.95.
    pub alpha: f64,
    /// Number of repro draws for the candidate set.
    pub d: usize,
    /// Monte-Carlo draws for the nuclear statistic.
    pub m: usize,
    pub loss: Loss,
    pub seed: u64,
    /// Cardinality cap for candidate models; `None` means `ceil(n / (2 log p))`.
    pub max_support: Option<usize>,
    pub beta_mode: BetaMode,
    /// Columns exempt from every penalty (e.g. a prepended intercept column).
    pub unpenalized: Vec<usize>,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            alpha: 0.95,
            d: 100,
            m: 100,
            loss: Loss::Logistic,
            seed: 0,
            max_support: None,
            beta_mode: BetaMode::Mle,
            unpenalized: Vec::new(),
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if self.d == 0 {
            return Err(invalid("d must be at least 1"));
        }
        if self.m == 0 {
            return Err(invalid("m must be at least 1"));
        }
        Ok(())
    }

    /// Effective cardinality cap for a problem with `n` rows and `p` columns.
    pub fn support_cap(&self, n: usize, p: usize) -> usize {
        self.max_support
            .unwrap_or_else(|| default_support_cap(n, p))
            .min(p)
    }
}

/// `ceil(n / (2 ln p))`, with `ln p` floored at `ln 2` so tiny `p` stays finite.
pub fn default_support_cap(n: usize, p: usize) -> usize {
    let lp = (p.max(2) as f64).ln();
    ((n as f64) / (2.0 * lp)).ceil().max(1.0) as usize
}

/// A group of linear combinations `A beta` (`q x p`).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTarget {
    a: DMatrix<f64>,
}

impl LinearTarget {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(invalid("linear target needs at least one row and one column"));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(invalid("linear target has non-finite entries"));
        }
        Ok(Self { a })
    }

    /// The unit row `e_j^T` in dimension `p`.
    pub fn coordinate(p: usize, j: usize) -> Result<Self> {
        if j >= p {
            return Err(Error::IndexOutOfRange { index: j, len: p });
        }
        let mut a = DMatrix::zeros(1, p);
        a[(0, j)] = 1.0;
        Self::new(a)
    }

    pub fn identity(p: usize) -> Result<Self> {
        Self::new(DMatrix::identity(p, p))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn q(&self) -> usize {
        self.a.nrows()
    }

    pub fn p(&self) -> usize {
        self.a.ncols()
    }

    /// Columns of `A` indexed by `support` (`q x |support|`).
    pub fn restricted(&self, support: &SupportSet) -> DMatrix<f64> {
        DMatrix::from_fn(self.q(), support.len(), |i, k| {
            self.a[(i, support.indices()[k])]
        })
    }

    /// `A beta` for a dense coefficient vector.
    pub fn apply(&self, beta: &[f64]) -> Vec<f64> {
        let b = DVector::from_column_slice(beta);
        (&self.a * b).iter().copied().collect()
    }
}
