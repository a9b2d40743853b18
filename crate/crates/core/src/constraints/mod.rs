//! Relative pairwise relationship constraints: a triple `(q, r, s)` asserts
//! that vector `q` is closer to vector `r` than to vector `s`, where the
//! vectors are rows of W or columns of H.

mod chain;
mod convert;
mod file;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, EPS};

pub use chain::generate_chain_constraints;
pub use convert::{constraints_to_label_matrix, constraints_to_weight_matrix, LabelMatrix, WeightMatrix};
pub use file::{parse_constraints, read_constraints, render_constraints, write_constraints};

/// Which factor axis a constraint set refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Target {
    RowsOfW,
    ColsOfH,
}

impl Target {
    pub fn tag(self) -> char {
        match self {
            Target::RowsOfW => 'W',
            Target::ColsOfH => 'H',
        }
    }
}

/// Distance measure; each objective pairs with one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    /// Squared Euclidean distance, exponential penalty.
    #[serde(rename = "euc")]
    Euclidean,
    /// Symmetric divergence between vectors, hinge penalty, KL data fit.
    #[serde(rename = "div")]
    Divergence,
}

impl Measure {
    pub fn distance(self, x: &[f64], y: &[f64]) -> Result<f64> {
        match self {
            Measure::Euclidean => euclidean_sq(x, y),
            Measure::Divergence => symmetric_divergence(x, y),
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Measure::Euclidean => "euc",
            Measure::Divergence => "div",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl std::str::FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euc" | "euclidean" => Ok(Measure::Euclidean),
            "div" | "divergence" => Ok(Measure::Divergence),
            other => Err(Error::InvalidConfig(format!("unknown measure {other:?}"))),
        }
    }
}

/// 1-based indices `(q, r, s)`, pairwise distinct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConstraintTriple {
    pub q: usize,
    pub r: usize,
    pub s: usize,
}

impl ConstraintTriple {
    pub fn new(q: usize, r: usize, s: usize) -> Result<Self> {
        if q == 0 || r == 0 || s == 0 || q == r || r == s || q == s {
            return Err(Error::InvalidTriple { q, r, s });
        }
        Ok(Self { q, r, s })
    }

    pub(crate) fn zero_based(&self) -> (usize, usize, usize) {
        (self.q - 1, self.r - 1, self.s - 1)
    }

    fn check_bound(&self, bound: usize) -> Result<()> {
        for index in [self.q, self.r, self.s] {
            if index > bound {
                return Err(Error::IndexOutOfRange { index, bound });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintSet {
    target: Target,
    triples: Vec<ConstraintTriple>,
}

impl ConstraintSet {
    /// Drops repeated triples, keeping the first occurrence.
    pub fn new(target: Target, triples: impl IntoIterator<Item = ConstraintTriple>) -> Self {
        let mut seen = HashSet::new();
        let triples = triples.into_iter().filter(|t| seen.insert(*t)).collect();
        Self { target, triples }
    }

    pub fn empty(target: Target) -> Self {
        Self {
            target,
            triples: Vec::new(),
        }
    }

    pub fn target(&self) -> Target {
        self.target
    }

    pub fn triples(&self) -> &[ConstraintTriple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Every index must address a vector of `factor` along this set's axis.
    pub fn validate_for(&self, factor: &DenseMatrix) -> Result<()> {
        let bound = FactorAxis::new(factor, self.target).count();
        self.validate_bound(bound)
    }

    pub fn validate_bound(&self, bound: usize) -> Result<()> {
        self.triples.iter().try_for_each(|t| t.check_bound(bound))
    }
}

/// Constraint sets for both factors; either may be absent.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Constraints {
    pub w: Option<ConstraintSet>,
    pub h: Option<ConstraintSet>,
}

impl Constraints {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn only_h(set: ConstraintSet) -> Self {
        Self { w: None, h: Some(set) }
    }

    pub fn is_empty(&self) -> bool {
        self.w.as_ref().is_none_or(|s| s.is_empty()) && self.h.as_ref().is_none_or(|s| s.is_empty())
    }
}

/// Read access to the vectors a constraint set ranges over.
pub trait VectorFamily {
    fn count(&self) -> usize;
    fn dim(&self) -> usize;
    fn entry(&self, index: usize, k: usize) -> f64;
}

/// Rows of W or columns of H seen as a family of vectors.
#[derive(Clone, Copy)]
pub struct FactorAxis<'a> {
    matrix: &'a DenseMatrix,
    target: Target,
}

impl<'a> FactorAxis<'a> {
    pub fn new(matrix: &'a DenseMatrix, target: Target) -> Self {
        Self { matrix, target }
    }
}

impl VectorFamily for FactorAxis<'_> {
    #[inline]
    fn count(&self) -> usize {
        match self.target {
            Target::RowsOfW => self.matrix.rows(),
            Target::ColsOfH => self.matrix.cols(),
        }
    }

    #[inline]
    fn dim(&self) -> usize {
        match self.target {
            Target::RowsOfW => self.matrix.cols(),
            Target::ColsOfH => self.matrix.rows(),
        }
    }

    #[inline]
    fn entry(&self, index: usize, k: usize) -> f64 {
        match self.target {
            Target::RowsOfW => self.matrix.get(index, k),
            Target::ColsOfH => self.matrix.get(k, index),
        }
    }
}

impl VectorFamily for [Vec<f64>] {
    fn count(&self) -> usize {
        self.len()
    }

    fn dim(&self) -> usize {
        self.first().map_or(0, Vec::len)
    }

    fn entry(&self, index: usize, k: usize) -> f64 {
        self[index][k]
    }
}

pub fn euclidean_sq(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    Ok(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// `½ Σ (xᵢ − yᵢ) log(xᵢ / yᵢ)`, entries clamped at [`EPS`].
pub fn symmetric_divergence(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    Ok(x.iter().zip(y).map(|(&a, &b)| sd_term(a, b)).sum())
}

#[inline]
pub(crate) fn sd_term(a: f64, b: f64) -> f64 {
    let (a, b) = (a.max(EPS), b.max(EPS));
    // difference of logs keeps the term exactly symmetric
    0.5 * (a - b) * (a.ln() - b.ln())
}

/// Distance between two members of a family; indices are 0-based.
pub(crate) fn family_distance<F: VectorFamily + ?Sized>(family: &F, i: usize, j: usize, measure: Measure) -> f64 {
    let dim = family.dim();
    match measure {
        Measure::Euclidean => (0..dim)
            .map(|k| {
                let d = family.entry(i, k) - family.entry(j, k);
                d * d
            })
            .sum(),
        Measure::Divergence => (0..dim).map(|k| sd_term(family.entry(i, k), family.entry(j, k))).sum(),
    }
}

/// `dis(v_q, v_r) < dis(v_q, v_s)`, strictly; ties are unsatisfied.
pub fn is_satisfied<F: VectorFamily + ?Sized>(
    triple: &ConstraintTriple,
    vectors: &F,
    measure: Measure,
) -> Result<bool> {
    triple.check_bound(vectors.count())?;
    let (q, r, s) = triple.zero_based();
    Ok(family_distance(vectors, q, r, measure) < family_distance(vectors, q, s, measure))
}

/// Number of satisfied triples of `set` on `factor`.
pub fn satisfied_count(set: &ConstraintSet, factor: &DenseMatrix, measure: Measure) -> Result<usize> {
    let axis = FactorAxis::new(factor, set.target());
    let mut count = 0;
    for t in set.triples() {
        if is_satisfied(t, &axis, measure)? {
            count += 1;
        }
    }
    Ok(count)
}

/// Constraint satisfied rate: the mean satisfied fraction over the sets that
/// are present and non-empty.
pub fn csr(
    set_w: Option<&ConstraintSet>,
    w: &DenseMatrix,
    set_h: Option<&ConstraintSet>,
    h: &DenseMatrix,
    measure: Measure,
) -> Result<f64> {
    let mut fractions = Vec::with_capacity(2);
    for (set, factor) in [(set_w, w), (set_h, h)] {
        if let Some(set) = set.filter(|s| !s.is_empty()) {
            let hit = satisfied_count(set, factor, measure)?;
            fractions.push(hit as f64 / set.len() as f64);
        }
    }
    if fractions.is_empty() {
        return Err(Error::NoConstraints);
    }
    Ok(fractions.iter().sum::<f64>() / fractions.len() as f64)
}

/// CSR from raw satisfied/total counts; `None` entries are absent sets.
pub fn csr_from_counts(w: Option<(usize, usize)>, h: Option<(usize, usize)>) -> Result<f64> {
    let fractions: Vec<f64> = [w, h]
        .into_iter()
        .flatten()
        .filter(|&(_, total)| total > 0)
        .map(|(hit, total)| hit as f64 / total as f64)
        .collect();
    if fractions.is_empty() {
        return Err(Error::NoConstraints);
    }
    Ok(fractions.iter().sum::<f64>() / fractions.len() as f64)
}
