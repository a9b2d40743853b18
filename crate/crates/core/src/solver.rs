//! Multiplicative-update solvers for the Euclidean and divergence objectives.
//!
//! One outer iteration is a full sweep over W followed by a full sweep over
//! H. Within a sweep the data-fit numerator and denominator are taken from the
//! factors at the start of the sweep (so with zero penalty weight the sweep
//! is exactly the classic Lee–Seung update), while penalty terms are
//! re-evaluated on the freshest factor values for every entry, column by
//! column of the latent axis.
//!
//! The divergence solver adapts the penalty weights after every outer
//! iteration: an objective increase halves both weights and restores the
//! previous factors, otherwise both weights grow by 1%.

use std::time::Instant;

use log::{debug, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::{satisfied_count, ConstraintSet, Constraints, FactorAxis, Measure, Target, VectorFamily};
use crate::error::{Error, Result};
use crate::matrix::{divergence_term, frobenius_sq_diff, matrix_divergence, DenseMatrix, MaskMatrix, EPS, INIT_HIGH, INIT_LOW};
use crate::penalties::{div_grad_at, euc_grad_at, penalty_value, PenaltyIndex};

pub const DEFAULT_MAX_ITERS: usize = 500;
pub const DEFAULT_REL_TOL: f64 = 1e-6;
const LAMBDA_SHRINK: f64 = 0.5;
const LAMBDA_GROW: f64 = 1.01;
const MONOTONE_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub latent_dim: usize,
    pub measure: Measure,
    pub lambda_w: f64,
    pub lambda_h: f64,
    pub max_iters: usize,
    /// Stop once `|f_t − f_{t−1}| / max(f_{t−1}, ε)` of accepted iterates drops below this.
    pub rel_tol: f64,
    pub seed: u64,
    pub mask: Option<MaskMatrix>,
}

impl SolverConfig {
    pub fn new(latent_dim: usize, measure: Measure) -> Self {
        Self {
            latent_dim,
            measure,
            lambda_w: 0.0,
            lambda_h: 0.0,
            max_iters: DEFAULT_MAX_ITERS,
            rel_tol: DEFAULT_REL_TOL,
            seed: 0,
            mask: None,
        }
    }

    pub fn with_lambdas(mut self, lambda_w: f64, lambda_h: f64) -> Self {
        self.lambda_w = lambda_w;
        self.lambda_h = lambda_h;
        self
    }

    pub fn with_iters(mut self, max_iters: usize, rel_tol: f64) -> Self {
        self.max_iters = max_iters;
        self.rel_tol = rel_tol;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_mask(mut self, mask: MaskMatrix) -> Self {
        self.mask = Some(mask);
        self
    }

    /// Penalty-weight adaptation is part of the divergence solver only.
    pub fn adapt_lambda(&self) -> bool {
        self.measure == Measure::Divergence
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::InvalidConfig("latent dimension must be at least 1".into()));
        }
        for (name, value) in [("lambda_w", self.lambda_w), ("lambda_h", self.lambda_h)] {
            if value < 0.0 || !value.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be a finite non-negative number, got {value}")));
            }
        }
        if self.rel_tol.is_nan() || self.rel_tol < 0.0 {
            return Err(Error::InvalidConfig(format!("rel_tol must be non-negative, got {}", self.rel_tol)));
        }
        Ok(())
    }
}

/// Iteration state of one factorisation.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub w: DenseMatrix,
    pub h: DenseMatrix,
    pub iter: usize,
    pub objective_trace: Vec<f64>,
    pub lambda_w: f64,
    pub lambda_h: f64,
    last_accepted: Option<(DenseMatrix, DenseMatrix)>,
}

impl SolverState {
    pub fn new(w: DenseMatrix, h: DenseMatrix, lambda_w: f64, lambda_h: f64) -> Self {
        Self {
            w,
            h,
            iter: 0,
            objective_trace: Vec::new(),
            lambda_w,
            lambda_h,
            last_accepted: None,
        }
    }

    /// Seeded uniform `[0.01, 1)` initial factors, W drawn before H.
    pub fn random(rows: usize, cols: usize, config: &SolverConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let w = DenseMatrix::random_with(rows, config.latent_dim, &mut rng, INIT_LOW, INIT_HIGH)?;
        let h = DenseMatrix::random_with(config.latent_dim, cols, &mut rng, INIT_LOW, INIT_HIGH)?;
        Ok(Self::new(w, h, config.lambda_w, config.lambda_h))
    }

    fn snapshot(&mut self) {
        self.last_accepted = Some((self.w.clone(), self.h.clone()));
    }

    fn roll_back(&mut self) {
        if let Some((w, h)) = self.last_accepted.take() {
            self.w = w;
            self.h = h;
        }
    }
}

#[derive(Debug, Clone)]
pub struct FactorisationReport {
    pub w: DenseMatrix,
    pub h: DenseMatrix,
    /// Accepted outer iterations.
    pub iterations: usize,
    /// Outer iterations attempted, including rolled-back ones.
    pub sweeps: usize,
    pub final_objective: f64,
    /// Objective of the initial factors followed by one entry per accepted iteration.
    pub objective_trace: Vec<f64>,
    /// Outer iterations (1-based) whose result was rolled back.
    pub rollbacks: Vec<usize>,
    pub final_lambda_w: f64,
    pub final_lambda_h: f64,
    pub satisfied_w: Option<(usize, usize)>,
    pub satisfied_h: Option<(usize, usize)>,
    pub csr: Option<f64>,
    pub converged: bool,
    pub wall_time_s: f64,
}

/// Echo of the run settings for machine-readable reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub latent_dim: usize,
    pub measure: Measure,
    pub lambda_w: f64,
    pub lambda_h: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
    pub adapt_lambda: bool,
    pub masked: bool,
}

impl From<&SolverConfig> for ConfigEcho {
    fn from(c: &SolverConfig) -> Self {
        Self {
            latent_dim: c.latent_dim,
            measure: c.measure,
            lambda_w: c.lambda_w,
            lambda_h: c.lambda_h,
            max_iters: c.max_iters,
            rel_tol: c.rel_tol,
            seed: c.seed,
            adapt_lambda: c.adapt_lambda(),
            masked: c.mask.is_some(),
        }
    }
}

/// Data fit plus the measure-matched penalties on whichever sets are present.
pub fn objective(v: &DenseMatrix, w: &DenseMatrix, h: &DenseMatrix, sets: &Constraints, config: &SolverConfig) -> Result<f64> {
    objective_with(v, w, h, sets, config.measure, config.mask.as_ref(), config.lambda_w, config.lambda_h)
}

#[allow(clippy::too_many_arguments)]
pub fn objective_with(
    v: &DenseMatrix,
    w: &DenseMatrix,
    h: &DenseMatrix,
    sets: &Constraints,
    measure: Measure,
    mask: Option<&MaskMatrix>,
    lambda_w: f64,
    lambda_h: f64,
) -> Result<f64> {
    let wh = w.matmul(h)?;
    let mut total = match measure {
        Measure::Euclidean => frobenius_sq_diff(v, &wh, mask)?,
        Measure::Divergence => matrix_divergence(v, &wh, mask)?,
    };
    for (set, factor, lambda) in [(&sets.w, w, lambda_w), (&sets.h, h, lambda_h)] {
        if let Some(set) = set {
            if lambda > 0.0 && !set.is_empty() {
                total += lambda * penalty_value(factor, set, measure)?;
            }
        }
    }
    Ok(total)
}

/// Which factor an update acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    W,
    H,
}

/// Numerator and denominator fields of the data-fit part of a multiplicative update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateTerms {
    pub numerator: DenseMatrix,
    pub denominator: DenseMatrix,
}

/// Data-fit update terms for one side, restricted to observed entries when a
/// mask is given.
///
/// Euclidean: `(M∘V)Hᵀ / (M∘WH)Hᵀ` for W and `Wᵀ(M∘V) / Wᵀ(M∘WH)` for H.
/// Divergence: `(M∘V/WH)Hᵀ / MHᵀ` for W and `Wᵀ(M∘V/WH) / WᵀM` for H.
pub fn masked_update_terms(
    v: &DenseMatrix,
    mask: Option<&MaskMatrix>,
    w: &DenseMatrix,
    h: &DenseMatrix,
    measure: Measure,
    side: Side,
) -> Result<UpdateTerms> {
    if w.cols() != h.rows() {
        return Err(Error::shape(format!("{} rows in H", w.cols()), h.rows()));
    }
    v.same_shape(&DenseMatrix::zeros(w.rows(), h.cols()))?;
    if let Some(mask) = mask {
        mask.matches(v)?;
    }
    let (numerator, denominator) = match (measure, mask) {
        (Measure::Euclidean, None) => match side {
            Side::W => (v.matmul_t(h)?, w.matmul(&h.matmul_t(h)?)?),
            Side::H => (w.t_matmul(v)?, w.t_matmul(w)?.matmul(h)?),
        },
        (Measure::Euclidean, Some(mask)) => {
            let mv = mask.apply(v);
            let mwh = mask.apply(&w.matmul(h)?);
            match side {
                Side::W => (mv.matmul_t(h)?, mwh.matmul_t(h)?),
                Side::H => (w.t_matmul(&mv)?, w.t_matmul(&mwh)?),
            }
        }
        (Measure::Divergence, mask) => {
            let wh = w.matmul(h)?;
            let weight = |i, j| mask.map_or(1.0, |m| m.weight(i, j));
            let ratio = DenseMatrix::from_fn(v.rows(), v.cols(), |i, j| weight(i, j) * v.get(i, j) / wh.get(i, j).max(EPS));
            let observed = DenseMatrix::from_fn(v.rows(), v.cols(), weight);
            match side {
                Side::W => (ratio.matmul_t(h)?, observed.matmul_t(h)?),
                Side::H => (w.t_matmul(&ratio)?, w.t_matmul(&observed)?),
            }
        }
    };
    Ok(UpdateTerms { numerator, denominator })
}

#[inline]
fn euc_step(x: f64, num: f64, den: f64, lambda: f64, plus: f64, minus: f64) -> f64 {
    x * (num + lambda * minus) / (den + lambda * plus).max(EPS)
}

#[inline]
fn div_step(x: f64, num: f64, den: f64, half_lambda_p: f64) -> f64 {
    let penalised = den + half_lambda_p;
    // a negative penalised denominator drops the penalty part
    let d = if penalised < 0.0 { den } else { penalised };
    x * num / d.max(EPS)
}

/// Data-fit numerator and denominator for one entry, computed directly from
/// the current factors.
#[allow(clippy::too_many_arguments)]
fn entry_terms(
    v: &DenseMatrix,
    mask: Option<&MaskMatrix>,
    w: &DenseMatrix,
    h: &DenseMatrix,
    measure: Measure,
    side: Side,
    a: usize,
    b: usize,
) -> (f64, f64) {
    let k_dim = w.cols();
    let wh = |i: usize, j: usize| (0..k_dim).map(|k| w.get(i, k) * h.get(k, j)).sum::<f64>();
    let weight = |i, j| mask.map_or(1.0, |m| m.weight(i, j));
    let (mut num, mut den) = (0.0, 0.0);
    match side {
        Side::W => {
            for j in 0..v.cols() {
                let m = weight(a, j);
                if m == 0.0 {
                    continue;
                }
                match measure {
                    Measure::Euclidean => {
                        num += v.get(a, j) * h.get(b, j);
                        den += wh(a, j) * h.get(b, j);
                    }
                    Measure::Divergence => {
                        num += v.get(a, j) * h.get(b, j) / wh(a, j).max(EPS);
                        den += h.get(b, j);
                    }
                }
            }
        }
        Side::H => {
            // a: latent row of H, b: column
            for i in 0..v.rows() {
                let m = weight(i, b);
                if m == 0.0 {
                    continue;
                }
                match measure {
                    Measure::Euclidean => {
                        num += w.get(i, a) * v.get(i, b);
                        den += w.get(i, a) * wh(i, b);
                    }
                    Measure::Divergence => {
                        num += w.get(i, a) * v.get(i, b) / wh(i, b).max(EPS);
                        den += w.get(i, a);
                    }
                }
            }
        }
    }
    (num, den)
}

fn side_index(set: Option<&ConstraintSet>, factor: &DenseMatrix) -> Result<Option<PenaltyIndex>> {
    match set {
        Some(set) if !set.is_empty() => {
            let count = FactorAxis::new(factor, set.target()).count();
            Ok(Some(PenaltyIndex::new(set, count)?))
        }
        _ => Ok(None),
    }
}

/// New value of `W[a][b]` under the penalised Euclidean rule, evaluated on `state`.
pub fn euc_update_w_entry(
    state: &SolverState,
    v: &DenseMatrix,
    set_w: Option<&ConstraintSet>,
    a: usize,
    b: usize,
    lambda_w: f64,
) -> Result<f64> {
    update_entry(state, v, None, set_w, Measure::Euclidean, Side::W, a, b, lambda_w)
}

/// New value of `H[a][b]` under the penalised Euclidean rule, evaluated on `state`.
pub fn euc_update_h_entry(
    state: &SolverState,
    v: &DenseMatrix,
    set_h: Option<&ConstraintSet>,
    a: usize,
    b: usize,
    lambda_h: f64,
) -> Result<f64> {
    update_entry(state, v, None, set_h, Measure::Euclidean, Side::H, a, b, lambda_h)
}

pub fn div_update_w_entry(
    state: &SolverState,
    v: &DenseMatrix,
    set_w: Option<&ConstraintSet>,
    a: usize,
    b: usize,
    lambda_w: f64,
) -> Result<f64> {
    update_entry(state, v, None, set_w, Measure::Divergence, Side::W, a, b, lambda_w)
}

pub fn div_update_h_entry(
    state: &SolverState,
    v: &DenseMatrix,
    set_h: Option<&ConstraintSet>,
    a: usize,
    b: usize,
    lambda_h: f64,
) -> Result<f64> {
    update_entry(state, v, None, set_h, Measure::Divergence, Side::H, a, b, lambda_h)
}

/// Single-entry update; `(a, b)` is the matrix position of the entry being
/// updated (row, column of W or of H).
#[allow(clippy::too_many_arguments)]
pub fn update_entry(
    state: &SolverState,
    v: &DenseMatrix,
    mask: Option<&MaskMatrix>,
    set: Option<&ConstraintSet>,
    measure: Measure,
    side: Side,
    a: usize,
    b: usize,
    lambda: f64,
) -> Result<f64> {
    let (factor, target) = match side {
        Side::W => (&state.w, Target::RowsOfW),
        Side::H => (&state.h, Target::ColsOfH),
    };
    if a >= factor.rows() || b >= factor.cols() {
        return Err(Error::IndexOutOfRange {
            index: a.max(b) + 1,
            bound: factor.rows().max(factor.cols()),
        });
    }
    let (num, den) = entry_terms(v, mask, &state.w, &state.h, measure, side, a, b);
    let x = factor.get(a, b);
    let index = side_index(set.filter(|s| s.target() == target), factor)?;
    // penalty position: (vector index along the constrained axis, latent index)
    let (vec_idx, latent) = match side {
        Side::W => (a, b),
        Side::H => (b, a),
    };
    let axis = FactorAxis::new(factor, target);
    Ok(match (measure, index, set) {
        (Measure::Euclidean, Some(index), Some(set)) if lambda > 0.0 && index.touches(vec_idx) => {
            let g = euc_grad_at(&axis, set, &index, vec_idx, latent)?;
            euc_step(x, num, den, lambda, g.positive_part, g.negative_part)
        }
        (Measure::Divergence, Some(index), Some(set)) if lambda > 0.0 && index.touches(vec_idx) => {
            let p = div_grad_at(&axis, set, &index, vec_idx, latent).value;
            div_step(x, num, den, 0.5 * lambda * p)
        }
        (Measure::Euclidean, ..) => euc_step(x, num, den, 0.0, 0.0, 0.0),
        (Measure::Divergence, ..) => div_step(x, num, den, 0.0),
    })
}

struct Problem<'a> {
    v: &'a DenseMatrix,
    mask: Option<&'a MaskMatrix>,
    measure: Measure,
    set_w: Option<&'a ConstraintSet>,
    set_h: Option<&'a ConstraintSet>,
    index_w: Option<PenaltyIndex>,
    index_h: Option<PenaltyIndex>,
}

impl Problem<'_> {
    fn sweep(&self, state: &mut SolverState, side: Side) -> Result<()> {
        let terms = masked_update_terms(self.v, self.mask, &state.w, &state.h, self.measure, side)?;
        let (factor, set, index, lambda, target) = match side {
            Side::W => (&mut state.w, self.set_w, self.index_w.as_ref(), state.lambda_w, Target::RowsOfW),
            Side::H => (&mut state.h, self.set_h, self.index_h.as_ref(), state.lambda_h, Target::ColsOfH),
        };
        let penalised = match (set, index) {
            (Some(set), Some(index)) if lambda > 0.0 => Some((set, index)),
            _ => None,
        };
        let latent = match side {
            Side::W => factor.cols(),
            Side::H => factor.rows(),
        };
        let along = match side {
            Side::W => factor.rows(),
            Side::H => factor.cols(),
        };
        for k in 0..latent {
            for a in 0..along {
                let (row, col) = match side {
                    Side::W => (a, k),
                    Side::H => (k, a),
                };
                let x = factor.get(row, col);
                let num = terms.numerator.get(row, col);
                let den = terms.denominator.get(row, col);
                let updated = match penalised {
                    Some((set, index)) if index.touches(a) => {
                        let axis = FactorAxis::new(factor, target);
                        match self.measure {
                            Measure::Euclidean => {
                                let g = euc_grad_at(&axis, set, index, a, k)?;
                                euc_step(x, num, den, lambda, g.positive_part, g.negative_part)
                            }
                            Measure::Divergence => {
                                let p = div_grad_at(&axis, set, index, a, k).value;
                                div_step(x, num, den, 0.5 * lambda * p)
                            }
                        }
                    }
                    _ => match self.measure {
                        Measure::Euclidean => euc_step(x, num, den, 0.0, 0.0, 0.0),
                        Measure::Divergence => div_step(x, num, den, 0.0),
                    },
                };
                factor.set(row, col, updated);
            }
        }
        Ok(())
    }

    fn objective(&self, state: &SolverState) -> Result<f64> {
        let sets = Constraints {
            w: self.set_w.cloned(),
            h: self.set_h.cloned(),
        };
        objective_with(self.v, &state.w, &state.h, &sets, self.measure, self.mask, state.lambda_w, state.lambda_h)
    }
}

fn validate_inputs(v: &DenseMatrix, sets: &Constraints, config: &SolverConfig) -> Result<()> {
    config.validate()?;
    v.check_nonneg()?;
    if let Some(mask) = &config.mask {
        mask.matches(v)?;
        mask.check_coverage()?;
    }
    for (set, target, bound) in [(&sets.w, Target::RowsOfW, v.rows()), (&sets.h, Target::ColsOfH, v.cols())] {
        if let Some(set) = set {
            if set.target() != target {
                return Err(Error::InvalidConfig(format!(
                    "constraint set for {} has target {:?}",
                    target.tag(),
                    set.target()
                )));
            }
            set.validate_bound(bound)?;
        }
    }
    Ok(())
}

/// Factorises `v` from seeded random initial factors.
pub fn run(v: &DenseMatrix, sets: &Constraints, config: &SolverConfig) -> Result<FactorisationReport> {
    validate_inputs(v, sets, config)?;
    let state = SolverState::random(v.rows(), v.cols(), config)?;
    run_from(v, sets, config, state)
}

/// Factorises `v` starting from the given state.
pub fn run_from(v: &DenseMatrix, sets: &Constraints, config: &SolverConfig, mut state: SolverState) -> Result<FactorisationReport> {
    validate_inputs(v, sets, config)?;
    let k = config.latent_dim;
    if state.w.shape() != (v.rows(), k) || state.h.shape() != (k, v.cols()) {
        return Err(Error::shape(
            format!("W {}x{k}, H {k}x{}", v.rows(), v.cols()),
            format!("W {}x{}, H {}x{}", state.w.rows(), state.w.cols(), state.h.rows(), state.h.cols()),
        ));
    }
    state.w.check_nonneg()?;
    state.h.check_nonneg()?;

    let started = Instant::now();
    let problem = Problem {
        v,
        mask: config.mask.as_ref(),
        measure: config.measure,
        set_w: sets.w.as_ref(),
        set_h: sets.h.as_ref(),
        index_w: side_index(sets.w.as_ref(), &state.w)?,
        index_h: side_index(sets.h.as_ref(), &state.h)?,
    };

    let mut last = problem.objective(&state)?;
    state.objective_trace = vec![last];
    let mut rollbacks = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;

    while sweeps < config.max_iters {
        sweeps += 1;
        if config.adapt_lambda() {
            state.snapshot();
        }
        problem.sweep(&mut state, Side::W)?;
        problem.sweep(&mut state, Side::H)?;
        let current = problem.objective(&state)?;

        if config.adapt_lambda() {
            if current.is_nan() || current > last {
                debug!("sweep {sweeps}: objective {current} > {last}, rolling back");
                state.lambda_w *= LAMBDA_SHRINK;
                state.lambda_h *= LAMBDA_SHRINK;
                state.roll_back();
                rollbacks.push(sweeps);
                continue;
            }
            state.lambda_w *= LAMBDA_GROW;
            state.lambda_h *= LAMBDA_GROW;
        } else if current > last * (1.0 + MONOTONE_SLACK) {
            warn!("sweep {sweeps}: objective rose from {last} to {current}; penalty weights may be too large");
        }

        state.iter += 1;
        state.objective_trace.push(current);
        let change = (current - last).abs() / last.max(EPS);
        last = current;
        if change < config.rel_tol {
            converged = true;
            break;
        }
    }

    let wall_time_s = started.elapsed().as_secs_f64();
    let count = |set: Option<&ConstraintSet>, factor: &DenseMatrix| -> Result<Option<(usize, usize)>> {
        match set {
            Some(set) if !set.is_empty() => Ok(Some((satisfied_count(set, factor, config.measure)?, set.len()))),
            _ => Ok(None),
        }
    };
    let satisfied_w = count(sets.w.as_ref(), &state.w)?;
    let satisfied_h = count(sets.h.as_ref(), &state.h)?;
    let csr = crate::constraints::csr_from_counts(satisfied_w, satisfied_h).ok();

    Ok(FactorisationReport {
        iterations: state.iter,
        sweeps,
        final_objective: last,
        objective_trace: state.objective_trace,
        rollbacks,
        final_lambda_w: state.lambda_w,
        final_lambda_h: state.lambda_h,
        satisfied_w,
        satisfied_h,
        csr,
        converged,
        wall_time_s,
        w: state.w,
        h: state.h,
    })
}

/// `Σ` of divergence terms restricted to one row; used by diagnostics.
pub fn row_divergence(v: &DenseMatrix, wh: &DenseMatrix, row: usize) -> f64 {
    (0..v.cols()).map(|j| divergence_term(v.get(row, j), wh.get(row, j))).sum()
}
