//! Experiment drivers shared by the command-line tool and the test suites:
//! synthetic sweeps, the penalty-weight grid, masked cross-validation and
//! label-based constraint extraction.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::constraints::{generate_chain_constraints, ConstraintSet, ConstraintTriple, Constraints, Measure, Target};
use crate::error::{Error, Result};
use crate::io::{make_cv_split, ReportMetrics};
use crate::matrix::{frobenius_sq_diff, matrix_divergence, DenseMatrix, MaskMatrix};
use crate::metrics::{clustering_accuracy, f1_score, kmeans, md, msl, nmi, rmse, ClusterAssignment};
use crate::solver::{run, FactorisationReport, SolverConfig};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Ground-truth factor entries for synthetic data are uniform on `[0, 1)`.
const TRUTH_LOW: f64 = 0.0;
const TRUTH_HIGH: f64 = 1.0;

pub const NMF: &str = "NMF";
pub const RPR_NMF: &str = "RPR-NMF";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Factorize,
    Syn1,
    Syn2,
    ParamSweep,
    CrossValidate,
    Convert,
    ExtractConstraints,
}

/// Everything that determines an experiment's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: ExperimentKind,
    pub inputs: BTreeMap<String, String>,
    pub params: BTreeMap<String, serde_json::Value>,
    pub seed: u64,
}

impl RunManifest {
    pub fn new(kind: ExperimentKind, seed: u64) -> Self {
        Self {
            kind,
            inputs: BTreeMap::new(),
            params: BTreeMap::new(),
            seed,
        }
    }

    pub fn input(mut self, name: &str, path: impl AsRef<Path>) -> Self {
        self.inputs.insert(name.to_owned(), path.as_ref().display().to_string());
        self
    }

    pub fn param(mut self, name: &str, value: impl Serialize) -> Self {
        let value = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.params.insert(name.to_owned(), value);
        self
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).unwrap_or_default();
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn footer(&self) -> String {
        format!("# manifest-sha256={} rprnmf={}", self.hash(), TOOL_VERSION)
    }
}

/// Writes rows with a header and a trailing metadata comment line.
pub fn write_results_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T], manifest: &RunManifest) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row)?;
    }
    let mut bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    bytes.extend_from_slice(manifest.footer().as_bytes());
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

/// Independent seed for a sub-task, mixed with the SplitMix64 finaliser.
pub fn sub_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in parts {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p.wrapping_mul(0xD6E8_FEB8_6659_FD93));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterSettings {
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for IterSettings {
    fn default() -> Self {
        Self {
            max_iters: crate::solver::DEFAULT_MAX_ITERS,
            rel_tol: crate::solver::DEFAULT_REL_TOL,
        }
    }
}

fn data_error(v: &DenseMatrix, report: &FactorisationReport, measure: Measure) -> Result<f64> {
    match measure {
        Measure::Euclidean => msl(v, &report.w, &report.h),
        Measure::Divergence => md(v, &report.w, &report.h),
    }
}

/// Chain constraints truncated to exactly `count` triples.
pub fn chain_constraints_with_count(
    truth: &DenseMatrix,
    target: Target,
    count: usize,
    chain_len: usize,
    measure: Measure,
    seed: u64,
) -> Result<ConstraintSet> {
    let per_chain = chain_len.saturating_sub(1).max(1);
    let chains = count.div_ceil(per_chain);
    let set = generate_chain_constraints(truth, target, chain_len, chains, measure, seed)?;
    Ok(ConstraintSet::new(target, set.triples().iter().copied().take(count)))
}

fn ground_truth(n: usize, m: usize, k: usize, seed: u64) -> Result<(DenseMatrix, DenseMatrix)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = DenseMatrix::from_fn(n, k, |_, _| rng.gen_range(TRUTH_LOW..TRUTH_HIGH));
    let h = DenseMatrix::from_fn(k, m, |_, _| rng.gen_range(TRUTH_LOW..TRUTH_HIGH));
    Ok((w, h))
}

/// One factorisation in a synthetic sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynRow {
    pub algorithm: String,
    pub measure: Measure,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub n_constraints: usize,
    pub repetition: usize,
    pub msl_or_md: f64,
    pub csr: f64,
    pub iterations: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Syn1Params {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub lambda_h: f64,
    /// Numbers of chain groups to sweep.
    pub groups: Vec<usize>,
    /// Distances per chain; a chain yields `chain_len − 1` triples.
    pub chain_len: usize,
    pub reps: usize,
    pub measures: Vec<Measure>,
    pub iters: IterSettings,
    pub seed: u64,
}

impl Default for Syn1Params {
    fn default() -> Self {
        Self {
            n: 100,
            m: 100,
            k: 20,
            lambda_h: 1.0,
            groups: (1..=10).collect(),
            chain_len: 6,
            reps: 10,
            measures: vec![Measure::Euclidean, Measure::Divergence],
            iters: IterSettings::default(),
            seed: 0,
        }
    }
}

struct SynTask {
    n: usize,
    m: usize,
    k: usize,
    repetition: usize,
    measure: Measure,
    truth_seed: u64,
    constraint_seed: u64,
    init_seed: u64,
    n_constraints: usize,
    chain_len: usize,
    lambda_h: f64,
}

fn run_syn_task(task: &SynTask, iters: IterSettings) -> Result<[SynRow; 2]> {
    let (w0, h0) = ground_truth(task.n, task.m, task.k, task.truth_seed)?;
    let v = w0.matmul(&h0)?;
    let set = chain_constraints_with_count(&h0, Target::ColsOfH, task.n_constraints, task.chain_len, task.measure, task.constraint_seed)?;
    let sets = Constraints::only_h(set);
    let row = |algorithm: &str, lambda_h: f64| -> Result<SynRow> {
        let config = SolverConfig::new(task.k, task.measure)
            .with_lambdas(0.0, lambda_h)
            .with_iters(iters.max_iters, iters.rel_tol)
            .with_seed(task.init_seed);
        let report = run(&v, &sets, &config)?;
        Ok(SynRow {
            algorithm: algorithm.to_owned(),
            measure: task.measure,
            n: task.n,
            m: task.m,
            k: task.k,
            n_constraints: sets.h.as_ref().map_or(0, ConstraintSet::len),
            repetition: task.repetition,
            msl_or_md: data_error(&v, &report, task.measure)?,
            csr: report.csr.unwrap_or(f64::NAN),
            iterations: report.iterations,
            wall_time_s: report.wall_time_s,
        })
    };
    Ok([row(NMF, 0.0)?, row(RPR_NMF, task.lambda_h)?])
}

fn run_syn_tasks(tasks: Vec<SynTask>, iters: IterSettings) -> Result<Vec<SynRow>> {
    let results: Vec<Result<[SynRow; 2]>> = tasks.par_iter().map(|t| run_syn_task(t, iters)).collect();
    let mut rows = Vec::with_capacity(results.len() * 2);
    for r in results {
        rows.extend(r?);
    }
    Ok(rows)
}

/// Sweep over the number of chain groups on H with both solvers.
pub fn syn1(p: &Syn1Params) -> Result<Vec<SynRow>> {
    let per_group = p.chain_len.saturating_sub(1);
    let mut tasks = Vec::new();
    for &g in &p.groups {
        for rep in 0..p.reps {
            for (mi, &measure) in p.measures.iter().enumerate() {
                tasks.push(SynTask {
                    n: p.n,
                    m: p.m,
                    k: p.k,
                    repetition: rep + 1,
                    measure,
                    truth_seed: sub_seed(p.seed, &[1, rep as u64]),
                    constraint_seed: sub_seed(p.seed, &[2, rep as u64, g as u64, mi as u64]),
                    init_seed: sub_seed(p.seed, &[3, rep as u64, g as u64]),
                    n_constraints: g * per_group,
                    chain_len: p.chain_len,
                    lambda_h: p.lambda_h,
                });
            }
        }
    }
    run_syn_tasks(tasks, p.iters)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Syn2Params {
    /// Square sizes `N = M` to sweep; `K = N / 5` and `K` constraints on H.
    pub sizes: Vec<usize>,
    pub lambda_h: f64,
    pub chain_len: usize,
    pub reps: usize,
    pub measures: Vec<Measure>,
    pub iters: IterSettings,
    pub seed: u64,
}

impl Default for Syn2Params {
    fn default() -> Self {
        Self {
            sizes: (1..=10).map(|i| 20 * i).collect(),
            lambda_h: 1.0,
            chain_len: 6,
            reps: 10,
            measures: vec![Measure::Euclidean, Measure::Divergence],
            iters: IterSettings::default(),
            seed: 0,
        }
    }
}

/// Sweep over the size of the factorised matrix.
pub fn syn2(p: &Syn2Params) -> Result<Vec<SynRow>> {
    let mut tasks = Vec::new();
    for &size in &p.sizes {
        let k = (size / 5).max(1);
        for rep in 0..p.reps {
            for (mi, &measure) in p.measures.iter().enumerate() {
                tasks.push(SynTask {
                    n: size,
                    m: size,
                    k,
                    repetition: rep + 1,
                    measure,
                    truth_seed: sub_seed(p.seed, &[11, rep as u64, size as u64]),
                    constraint_seed: sub_seed(p.seed, &[12, rep as u64, size as u64, mi as u64]),
                    init_seed: sub_seed(p.seed, &[13, rep as u64, size as u64]),
                    n_constraints: k,
                    chain_len: p.chain_len,
                    lambda_h: p.lambda_h,
                });
            }
        }
    }
    run_syn_tasks(tasks, p.iters)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub lambda: f64,
    pub measure: Measure,
    pub repetition: usize,
    pub msl_or_md: f64,
    pub csr: f64,
    pub iterations: usize,
    pub rollbacks: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSweepParams {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    /// Applied to both λ_W and λ_H.
    pub lambdas: Vec<f64>,
    /// Constraints on each side.
    pub per_side: usize,
    pub chain_len: usize,
    pub reps: usize,
    pub measures: Vec<Measure>,
    pub iters: IterSettings,
    pub seed: u64,
}

/// `0.4, 0.8, …, 4.0` followed by `20, 40, …, 100`.
pub fn default_lambda_grid() -> Vec<f64> {
    let fine = (1..=10).map(|i| (i as f64 * 0.4 * 10.0).round() / 10.0);
    let coarse = (1..=5).map(|i| 20.0 * i as f64);
    fine.chain(coarse).collect()
}

impl Default for ParamSweepParams {
    fn default() -> Self {
        Self {
            n: 100,
            m: 100,
            k: 20,
            lambdas: default_lambda_grid(),
            per_side: 10,
            chain_len: 6,
            reps: 10,
            measures: vec![Measure::Euclidean, Measure::Divergence],
            iters: IterSettings::default(),
            seed: 0,
        }
    }
}

/// Penalty-weight grid with constraints on both factors.
pub fn param_sweep(p: &ParamSweepParams) -> Result<Vec<ParamRow>> {
    struct Task {
        lambda: f64,
        measure: Measure,
        rep: usize,
        mi: usize,
    }
    let mut tasks = Vec::new();
    for &lambda in &p.lambdas {
        for rep in 0..p.reps {
            for (mi, &measure) in p.measures.iter().enumerate() {
                tasks.push(Task { lambda, measure, rep, mi });
            }
        }
    }
    let results: Vec<Result<ParamRow>> = tasks
        .par_iter()
        .map(|t| {
            let rep = t.rep as u64;
            let (w0, h0) = ground_truth(p.n, p.m, p.k, sub_seed(p.seed, &[21, rep]))?;
            let v = w0.matmul(&h0)?;
            let cs = sub_seed(p.seed, &[22, rep, t.mi as u64]);
            let sets = Constraints {
                w: Some(chain_constraints_with_count(&w0, Target::RowsOfW, p.per_side, p.chain_len, t.measure, cs)?),
                h: Some(chain_constraints_with_count(&h0, Target::ColsOfH, p.per_side, p.chain_len, t.measure, cs ^ 1)?),
            };
            let config = SolverConfig::new(p.k, t.measure)
                .with_lambdas(t.lambda, t.lambda)
                .with_iters(p.iters.max_iters, p.iters.rel_tol)
                .with_seed(sub_seed(p.seed, &[23, rep]));
            let report = run(&v, &sets, &config)?;
            Ok(ParamRow {
                lambda: t.lambda,
                measure: t.measure,
                repetition: t.rep + 1,
                msl_or_md: data_error(&v, &report, t.measure)?,
                csr: report.csr.unwrap_or(f64::NAN),
                iterations: report.iterations,
                rollbacks: report.rollbacks.len(),
                wall_time_s: report.wall_time_s,
            })
        })
        .collect();
    results.into_iter().collect()
}

/// Mean of `value` over rows grouped by `key`, in first-seen key order.
pub fn group_means<R, K: PartialEq + Clone>(rows: &[R], key: impl Fn(&R) -> K, value: impl Fn(&R) -> f64) -> Vec<(K, f64)> {
    let mut groups: Vec<(K, f64, usize)> = Vec::new();
    for r in rows {
        let k = key(r);
        match groups.iter_mut().find(|g| g.0 == k) {
            Some(g) => {
                g.1 += value(r);
                g.2 += 1;
            }
            None => groups.push((k, value(r), 1)),
        }
    }
    groups.into_iter().map(|(k, s, n)| (k, s / n as f64)).collect()
}

/// Largest minus smallest per-λ mean CSR, for one measure.
pub fn csr_spread(rows: &[ParamRow], measure: Measure) -> f64 {
    let subset: Vec<&ParamRow> = rows.iter().filter(|r| r.measure == measure).collect();
    let means = group_means(&subset, |r| r.lambda.to_bits(), |r| r.csr);
    let lo = means.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
    let hi = means.iter().map(|m| m.1).fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

/// Default penalty weights for the ratings experiments at K = 20, 50 and 100.
pub fn default_ratings_lambda(k: usize, measure: Measure) -> Option<f64> {
    match (k, measure) {
        (20, Measure::Euclidean) => Some(200.0),
        (50, Measure::Euclidean) => Some(10.0),
        (100, Measure::Euclidean) => Some(1.0),
        (20, Measure::Divergence) => Some(0.1),
        (50, Measure::Divergence) => Some(0.01),
        (100, Measure::Divergence) => Some(0.001),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub fold: usize,
    pub algorithm: String,
    pub measure: Measure,
    /// Data fit over the training cells divided by their count.
    pub msl_or_md: f64,
    pub csr: Option<f64>,
    pub rmse: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub iterations: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvParams {
    pub k: usize,
    pub measures: Vec<Measure>,
    /// Overrides the per-K defaults for both sides and measures.
    pub lambda: Option<f64>,
    pub folds: usize,
    pub iters: IterSettings,
    pub seed: u64,
}

/// Masked factorisation on each fold's training cells, scored on its held-out cells.
pub fn crossvalidate(v: &DenseMatrix, observed: &MaskMatrix, sets: &Constraints, p: &CvParams) -> Result<Vec<CvRow>> {
    observed.matches(v)?;
    let split = make_cv_split(observed, p.folds, p.seed)?;
    let mut tasks = Vec::new();
    for fold in 0..p.folds {
        for &measure in &p.measures {
            let lambda = match p.lambda {
                Some(l) => l,
                None if sets.is_empty() => 0.0,
                None => default_ratings_lambda(p.k, measure).ok_or_else(|| {
                    Error::InvalidConfig(format!("no default penalty weight for K = {}; pass one explicitly", p.k))
                })?,
            };
            tasks.push((fold, measure, NMF, 0.0));
            tasks.push((fold, measure, RPR_NMF, lambda));
        }
    }
    let results: Vec<Result<CvRow>> = tasks
        .par_iter()
        .map(|&(fold, measure, algorithm, lambda)| {
            let train = split.training(fold, observed);
            let heldout = &split.heldout[fold];
            let config = SolverConfig::new(p.k, measure)
                .with_lambdas(lambda, lambda)
                .with_iters(p.iters.max_iters, p.iters.rel_tol)
                .with_seed(sub_seed(p.seed, &[31, fold as u64]))
                .with_mask(train.clone());
            let report = run(v, sets, &config)?;
            let wh = report.w.matmul(&report.h)?;
            let fit = match measure {
                Measure::Euclidean => frobenius_sq_diff(v, &wh, Some(&train))?,
                Measure::Divergence => matrix_divergence(v, &wh, Some(&train))?,
            };
            let f1 = f1_score(v, &wh, &train, heldout)?;
            Ok(CvRow {
                fold: fold + 1,
                algorithm: algorithm.to_owned(),
                measure,
                msl_or_md: fit / train.count().max(1) as f64,
                csr: report.csr,
                rmse: rmse(v, &wh, heldout)?,
                f1: f1.f1,
                precision: f1.precision,
                recall: f1.recall,
                iterations: report.iterations,
                wall_time_s: report.wall_time_s,
            })
        })
        .collect();
    results.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractParams {
    pub target: Target,
    /// Anchors drawn from every class.
    pub per_class: usize,
    /// Triples emitted for every anchor.
    pub per_anchor: usize,
    /// Also emit, for every triple `(q, r, s)`, a triple anchored at `s`
    /// that keeps a member of `s`'s class closer to `s` than `q` is.
    pub both_ways: bool,
    pub limit: Option<usize>,
    pub seed: u64,
}

impl Default for ExtractParams {
    fn default() -> Self {
        Self {
            target: Target::ColsOfH,
            per_class: 2,
            per_anchor: 1,
            both_ways: false,
            limit: None,
            seed: 0,
        }
    }
}

/// Triples `(q, r, s)` with `q`, `r` from one class and `s` from another,
/// drawn from per-point class labels.
pub fn extract_label_constraints(labels: &[String], p: &ExtractParams) -> Result<ConstraintSet> {
    let assignment = ClusterAssignment::from_raw(labels);
    if assignment.k() < 2 {
        return Err(Error::InvalidConfig("label-based extraction needs at least two classes".into()));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); assignment.k()];
    for (point, &class) in assignment.labels().iter().enumerate() {
        members[class - 1].push(point);
    }
    let needed = p.per_class.max(2);
    for group in &members {
        if group.len() < needed {
            return Err(Error::ClassTooSmall {
                class: labels[group[0]].clone(),
                size: group.len(),
                needed,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let n = labels.len();
    let mut triples = Vec::new();
    for (c, group) in members.iter().enumerate() {
        let mut anchors = group.clone();
        anchors.shuffle(&mut rng);
        for &q in anchors.iter().take(p.per_class) {
            for _ in 0..p.per_anchor {
                let r = loop {
                    let r = group[rng.gen_range(0..group.len())];
                    if r != q {
                        break r;
                    }
                };
                let s = loop {
                    let s = rng.gen_range(0..n);
                    if assignment.labels()[s] != c + 1 {
                        break s;
                    }
                };
                triples.push(ConstraintTriple::new(q + 1, r + 1, s + 1)?);
                if p.both_ways {
                    let home = &members[assignment.labels()[s] - 1];
                    let s2 = loop {
                        let s2 = home[rng.gen_range(0..home.len())];
                        if s2 != s {
                            break s2;
                        }
                    };
                    triples.push(ConstraintTriple::new(s + 1, s2 + 1, q + 1)?);
                }
            }
        }
    }
    if let Some(limit) = p.limit {
        triples.shuffle(&mut rng);
        triples.truncate(limit);
    }
    Ok(ConstraintSet::new(p.target, triples))
}

/// A single factorisation with the metrics that apply to its inputs.
pub fn factorize(
    v: &DenseMatrix,
    sets: &Constraints,
    config: &SolverConfig,
    labels: Option<&[String]>,
) -> Result<(FactorisationReport, ReportMetrics)> {
    let report = run(v, sets, config)?;
    let mut metrics = ReportMetrics::default();
    match &config.mask {
        None => {
            metrics.msl = Some(msl(v, &report.w, &report.h)?);
            metrics.md = Some(md(v, &report.w, &report.h)?);
        }
        Some(mask) => {
            let wh = report.w.matmul(&report.h)?;
            let n = mask.count().max(1) as f64;
            metrics.msl = Some(frobenius_sq_diff(v, &wh, Some(mask))? / n);
            metrics.md = Some(matrix_divergence(v, &wh, Some(mask))? / n);
            metrics.rmse = Some(rmse(v, &wh, mask)?);
        }
    }
    if let Some(labels) = labels {
        if labels.len() != v.cols() {
            return Err(Error::LengthMismatch {
                left: labels.len(),
                right: v.cols(),
            });
        }
        let truth = ClusterAssignment::from_raw(labels);
        let pred = kmeans(&report.h, truth.k(), config.seed, 300)?;
        metrics.acc = Some(clustering_accuracy(&pred, &truth)?);
        metrics.nmi = Some(nmi(&pred, &truth)?);
    }
    Ok((report, metrics))
}
