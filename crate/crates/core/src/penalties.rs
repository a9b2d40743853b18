//! Penalty terms of the two objectives and the pieces of their gradients that
//! enter the multiplicative updates.
//!
//! Triples are 1-based; the `(a, b)` entry arguments are 0-based positions
//! along the constrained axis and the latent axis respectively.

use crate::constraints::{family_distance, sd_term, ConstraintSet, FactorAxis, Measure, VectorFamily};
use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, EPS};

const MAX_EXP_ARG: f64 = 700.0;

/// Sign split of the Euclidean penalty gradient; `2(C⁺ − C⁻)` is the
/// derivative of the exponential penalty.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EucPenaltyGrad {
    pub positive_part: f64,
    pub negative_part: f64,
}

impl EucPenaltyGrad {
    pub fn net(&self) -> f64 {
        self.positive_part - self.negative_part
    }
}

/// Hinge-penalty gradient term `P`; `½P` is the derivative of the penalty.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DivPenaltyGrad {
    pub value: f64,
}

/// Triples touching each index of the constrained axis.
#[derive(Debug, Clone)]
pub struct PenaltyIndex {
    touching: Vec<Vec<usize>>,
}

impl PenaltyIndex {
    pub fn new(set: &ConstraintSet, count: usize) -> Result<Self> {
        set.validate_bound(count)?;
        let mut touching = vec![Vec::new(); count];
        for (l, t) in set.triples().iter().enumerate() {
            let (q, r, s) = t.zero_based();
            touching[q].push(l);
            touching[r].push(l);
            touching[s].push(l);
        }
        Ok(Self { touching })
    }

    pub fn touches(&self, a: usize) -> bool {
        !self.touching[a].is_empty()
    }

    fn triples_at(&self, a: usize) -> &[usize] {
        &self.touching[a]
    }
}

fn checked_exp(arg: f64) -> Result<f64> {
    if arg > MAX_EXP_ARG || arg.is_nan() {
        return Err(Error::Overflow { arg });
    }
    Ok(arg.exp())
}

fn check_entry(axis: &FactorAxis<'_>, a: usize, b: usize) -> Result<()> {
    if a >= axis.count() {
        return Err(Error::IndexOutOfRange {
            index: a + 1,
            bound: axis.count(),
        });
    }
    if b >= axis.dim() {
        return Err(Error::IndexOutOfRange {
            index: b + 1,
            bound: axis.dim(),
        });
    }
    Ok(())
}

/// `Σ_l exp(E(q,r)) + exp(−E(q,s))` with `E` the squared Euclidean distance.
pub fn euc_penalty_value(factor: &DenseMatrix, set: &ConstraintSet) -> Result<f64> {
    set.validate_for(factor)?;
    let axis = FactorAxis::new(factor, set.target());
    let mut total = 0.0;
    for t in set.triples() {
        let (q, r, s) = t.zero_based();
        let near = family_distance(&axis, q, r, Measure::Euclidean);
        let far = family_distance(&axis, q, s, Measure::Euclidean);
        total += checked_exp(near)? + (-far).exp();
    }
    Ok(total)
}

pub fn euc_penalty_grad(factor: &DenseMatrix, set: &ConstraintSet, a: usize, b: usize) -> Result<EucPenaltyGrad> {
    let axis = FactorAxis::new(factor, set.target());
    check_entry(&axis, a, b)?;
    let index = PenaltyIndex::new(set, axis.count())?;
    euc_grad_at(&axis, set, &index, a, b)
}

pub(crate) fn euc_grad_at(
    axis: &FactorAxis<'_>,
    set: &ConstraintSet,
    index: &PenaltyIndex,
    a: usize,
    b: usize,
) -> Result<EucPenaltyGrad> {
    let mut grad = EucPenaltyGrad::default();
    let triples = set.triples();
    for &l in index.triples_at(a) {
        let (q, r, s) = triples[l].zero_based();
        let near = checked_exp(family_distance(axis, q, r, Measure::Euclidean))?;
        let far = (-family_distance(axis, q, s, Measure::Euclidean)).exp();
        let (wq, wr, ws) = (axis.entry(q, b), axis.entry(r, b), axis.entry(s, b));
        if q == a {
            grad.positive_part += near * wq + far * ws;
            grad.negative_part += near * wr + far * wq;
        } else if r == a {
            grad.positive_part += near * wr;
            grad.negative_part += near * wq;
        } else {
            grad.positive_part += far * wq;
            grad.negative_part += far * ws;
        }
    }
    Ok(grad)
}

/// Hinge loss `Σ_l max(0, SD(q,r) − SD(q,s))`.
pub fn div_penalty_value(factor: &DenseMatrix, set: &ConstraintSet) -> Result<f64> {
    set.validate_for(factor)?;
    let axis = FactorAxis::new(factor, set.target());
    Ok(set
        .triples()
        .iter()
        .map(|t| {
            let (q, r, s) = t.zero_based();
            let margin = family_distance(&axis, q, r, Measure::Divergence) - family_distance(&axis, q, s, Measure::Divergence);
            margin.max(0.0)
        })
        .sum())
}

pub fn div_penalty_grad(factor: &DenseMatrix, set: &ConstraintSet, a: usize, b: usize) -> Result<DivPenaltyGrad> {
    let axis = FactorAxis::new(factor, set.target());
    check_entry(&axis, a, b)?;
    let index = PenaltyIndex::new(set, axis.count())?;
    Ok(div_grad_at(&axis, set, &index, a, b))
}

/// `g(x, y) = log(x / y) + (x − y) / x`, i.e. twice `∂/∂x` of `½(x − y) log(x / y)`.
#[inline]
pub fn g(x: f64, y: f64) -> f64 {
    let (x, y) = (x.max(EPS), y.max(EPS));
    (x / y).ln() + (x - y) / x
}

pub(crate) fn div_grad_at(
    axis: &FactorAxis<'_>,
    set: &ConstraintSet,
    index: &PenaltyIndex,
    a: usize,
    b: usize,
) -> DivPenaltyGrad {
    let triples = set.triples();
    let mut value = 0.0;
    for &l in index.triples_at(a) {
        let (q, r, s) = triples[l].zero_based();
        let near = family_distance(axis, q, r, Measure::Divergence);
        let far = family_distance(axis, q, s, Measure::Divergence);
        if near < far {
            // satisfied: the gate removes the whole term
            continue;
        }
        let (wq, wr, ws) = (axis.entry(q, b), axis.entry(r, b), axis.entry(s, b));
        if q == a {
            value += g(wq, wr) - g(wq, ws);
        } else if r == a {
            value += g(wr, wq);
        } else {
            value -= g(ws, wq);
        }
    }
    DivPenaltyGrad { value }
}

/// Penalty value for a set under the measure-matched form.
pub fn penalty_value(factor: &DenseMatrix, set: &ConstraintSet, measure: Measure) -> Result<f64> {
    match measure {
        Measure::Euclidean => euc_penalty_value(factor, set),
        Measure::Divergence => div_penalty_value(factor, set),
    }
}

/// SD-based hinge margin of one triple; exposed for tests and diagnostics.
pub fn hinge_margin(factor: &DenseMatrix, set: &ConstraintSet, l: usize) -> f64 {
    let axis = FactorAxis::new(factor, set.target());
    let (q, r, s) = set.triples()[l].zero_based();
    let dim = axis.dim();
    let sd = |i: usize, j: usize| (0..dim).map(|k| sd_term(axis.entry(i, k), axis.entry(j, k))).sum::<f64>();
    sd(q, r) - sd(q, s)
}
