//! Acceptance suite. Runs every criterion and prints one PASS/FAIL line each;
//! numeric arguments restrict the run to those criteria (`-- 1 6 7`).
//!
//! Failures are reported but only turn into a non-zero exit status when
//! `RPRNMF_ACCEPTANCE_STRICT=1` is set.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rprnmf::constraints::{constraints_to_label_matrix, constraints_to_weight_matrix};
use rprnmf::experiments::{csr_spread, param_sweep, syn1, ParamSweepParams, Syn1Params, SynRow, NMF, RPR_NMF};
use rprnmf::metrics::{clustering_accuracy, f1_score, nmi, rmse, ClusterAssignment};
use rprnmf::penalties::{div_penalty_grad, div_penalty_value, euc_penalty_grad, euc_penalty_value, hinge_margin, PenaltyIndex};
use rprnmf::solver::run_from;
use rprnmf::*;

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Criterion = fn() -> Result<Outcome>;

fn triple(q: usize, r: usize, s: usize) -> ConstraintTriple {
    ConstraintTriple::new(q, r, s).unwrap()
}

fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng, low: f64, high: f64) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(low..high))
}

fn random_triples(count: usize, bound: usize, rng: &mut ChaCha8Rng) -> Vec<ConstraintTriple> {
    (0..count)
        .map(|_| loop {
            let (q, r, s) = (rng.gen_range(1..=bound), rng.gen_range(1..=bound), rng.gen_range(1..=bound));
            if q != r && q != s && r != s {
                break triple(q, r, s);
            }
        })
        .collect()
}

fn random_sets(n: usize, m: usize, per_side: usize, rng: &mut ChaCha8Rng) -> Constraints {
    Constraints {
        w: Some(ConstraintSet::new(Target::RowsOfW, random_triples(per_side, n, rng))),
        h: Some(ConstraintSet::new(Target::ColsOfH, random_triples(per_side, m, rng))),
    }
}

fn criterion_1() -> Result<Outcome> {
    let (n, m, k, iters) = (20, 15, 5, 100);
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        for measure in [Measure::Euclidean, Measure::Divergence] {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let v = uniform(n, m, &mut rng, 0.0, 1.0);
            let w0 = uniform(n, k, &mut rng, 0.01, 1.0);
            let h0 = uniform(k, m, &mut rng, 0.01, 1.0);
            let sets = random_sets(n, m, 5, &mut rng);
            let config = SolverConfig::new(k, measure).with_lambdas(0.0, 0.0).with_iters(1, 0.0);

            let v_rows = rows_of(&v);
            let (mut w_ref, mut h_ref) = (rows_of(&w0), rows_of(&h0));
            let mut state = SolverState::new(w0, h0, 0.0, 0.0);
            for _ in 0..iters {
                let report = run_from(&v, &sets, &config, state)?;
                lee_seung_step(&v_rows, &mut w_ref, &mut h_ref, measure == Measure::Divergence);
                worst = worst.max(max_diff(&report.w, &w_ref)).max(max_diff(&report.h, &h_ref));
                state = SolverState::new(report.w, report.h, 0.0, 0.0);
            }
        }
    }
    Ok(Outcome::new(worst <= 1e-12, format!("max |Δ| over 20 runs x 100 iterations = {worst:.2e}")))
}

fn fd_at(factor: &DenseMatrix, target: Target, a: usize, b: usize, h: f64, f: impl Fn(&DenseMatrix) -> f64) -> f64 {
    let (i, j) = match target {
        Target::RowsOfW => (a, b),
        Target::ColsOfH => (b, a),
    };
    let mut plus = factor.clone();
    plus.set(i, j, factor.get(i, j) + h);
    let mut minus = factor.clone();
    minus.set(i, j, factor.get(i, j) - h);
    (f(&plus) - f(&minus)) / (2.0 * h)
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn criterion_2() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut euc_worst, mut div_worst): (f64, f64) = (0.0, 0.0);
    let (mut euc_cases, mut div_cases, mut skipped) = (0, 0, 0);

    while euc_cases < 100 {
        let target = if euc_cases % 2 == 0 { Target::RowsOfW } else { Target::ColsOfH };
        let (count, dim) = (8, 4);
        let factor = match target {
            Target::RowsOfW => uniform(count, dim, &mut rng, 0.1, 1.0),
            Target::ColsOfH => uniform(dim, count, &mut rng, 0.1, 1.0),
        };
        let set = ConstraintSet::new(target, random_triples(3, count, &mut rng));
        let index = PenaltyIndex::new(&set, count)?;
        let a = rng.gen_range(0..count);
        if !index.touches(a) {
            continue;
        }
        let b = rng.gen_range(0..dim);
        let analytic = 2.0 * euc_penalty_grad(&factor, &set, a, b)?.net();
        let numeric = fd_at(&factor, target, a, b, 1e-6, |f| euc_penalty_value(f, &set).unwrap());
        euc_worst = euc_worst.max(rel_err(analytic, numeric));
        euc_cases += 1;
    }

    while div_cases < 100 {
        let target = if div_cases % 2 == 0 { Target::RowsOfW } else { Target::ColsOfH };
        let (count, dim) = (8, 4);
        let factor = match target {
            Target::RowsOfW => uniform(count, dim, &mut rng, 0.1, 1.0),
            Target::ColsOfH => uniform(dim, count, &mut rng, 0.1, 1.0),
        };
        let set = ConstraintSet::new(target, random_triples(3, count, &mut rng));
        let index = PenaltyIndex::new(&set, count)?;
        let a = rng.gen_range(0..count);
        let touching: Vec<usize> = (0..set.len())
            .filter(|&l| {
                let t = set.triples()[l];
                [t.q, t.r, t.s].contains(&(a + 1))
            })
            .collect();
        let active = touching.iter().any(|&l| hinge_margin(&factor, &set, l) > 1e-3);
        let near_kink = touching.iter().any(|&l| hinge_margin(&factor, &set, l).abs() <= 1e-3);
        if !index.touches(a) || !active || near_kink {
            skipped += 1;
            continue;
        }
        let b = rng.gen_range(0..dim);
        let analytic = 0.5 * div_penalty_grad(&factor, &set, a, b)?.value;
        let numeric = fd_at(&factor, target, a, b, 1e-6, |f| div_penalty_value(f, &set).unwrap());
        div_worst = div_worst.max(rel_err(analytic, numeric));
        div_cases += 1;
    }

    Ok(Outcome::new(
        euc_worst <= 1e-5 && div_worst <= 1e-4,
        format!("euc max rel err {euc_worst:.2e} (100 cases), div max rel err {div_worst:.2e} (100 cases, {skipped} draws rejected)"),
    ))
}

fn criterion_3() -> Result<Outcome> {
    let (n, m, k) = (50, 40, 10);
    let mut euc_worst_rise: f64 = 0.0;
    let mut div_worst_rise: f64 = 0.0;
    let mut rollbacks = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let v = uniform(n, m, &mut rng, 0.0, 1.0);
        let sets = random_sets(n, m, 10, &mut rng);
        let lambda = rng.gen_range(0.1..=1.0);

        let euc = SolverConfig::new(k, Measure::Euclidean)
            .with_lambdas(lambda, lambda)
            .with_iters(200, 0.0)
            .with_seed(seed);
        let report = run(&v, &sets, &euc)?;
        for pair in report.objective_trace.windows(2) {
            euc_worst_rise = euc_worst_rise.max((pair[1] - pair[0]) / pair[0].abs().max(1.0));
        }

        let div = SolverConfig::new(k, Measure::Divergence)
            .with_lambdas(1.0, 1.0)
            .with_iters(200, 0.0)
            .with_seed(seed);
        let report = run(&v, &sets, &div)?;
        rollbacks += report.rollbacks.len();
        for pair in report.objective_trace.windows(2) {
            div_worst_rise = div_worst_rise.max(pair[1] - pair[0]);
        }
    }
    Ok(Outcome::new(
        euc_worst_rise <= 1e-8 && div_worst_rise <= 0.0,
        format!(
            "euc worst relative rise {euc_worst_rise:.2e}, div worst accepted rise {div_worst_rise:.2e} ({rollbacks} rollbacks over 20 runs)"
        ),
    ))
}

fn mean_of(rows: &[SynRow], algorithm: &str, measure: Measure, value: impl Fn(&SynRow) -> f64) -> f64 {
    let picked: Vec<f64> = rows
        .iter()
        .filter(|r| r.algorithm == algorithm && r.measure == measure)
        .map(value)
        .collect();
    picked.iter().sum::<f64>() / picked.len() as f64
}

fn criterion_4() -> Result<Outcome> {
    let rows = syn1(&Syn1Params {
        seed: 4,
        ..Syn1Params::default()
    })?;
    let rpr_div = mean_of(&rows, RPR_NMF, Measure::Divergence, |r| r.csr);
    let rpr_euc = mean_of(&rows, RPR_NMF, Measure::Euclidean, |r| r.csr);
    let nmf_euc = mean_of(&rows, NMF, Measure::Euclidean, |r| r.csr);
    let nmf_div = mean_of(&rows, NMF, Measure::Divergence, |r| r.csr);
    let msl_ratio = mean_of(&rows, RPR_NMF, Measure::Euclidean, |r| r.msl_or_md)
        / mean_of(&rows, NMF, Measure::Euclidean, |r| r.msl_or_md);
    let nmf_ok = |x: f64| (0.70..=0.90).contains(&x);
    Ok(Outcome::new(
        rpr_div >= 0.95 && rpr_euc >= 0.80 && nmf_ok(nmf_euc) && nmf_ok(nmf_div) && msl_ratio <= 2.0,
        format!(
            "mean CSR RPR div {rpr_div:.4}, RPR euc {rpr_euc:.4}, NMF euc {nmf_euc:.4}, NMF div {nmf_div:.4}; MSL ratio {msl_ratio:.3} ({} runs)",
            rows.len()
        ),
    ))
}

fn criterion_5() -> Result<Outcome> {
    let rows = param_sweep(&ParamSweepParams {
        seed: 5,
        ..ParamSweepParams::default()
    })?;
    let euc = csr_spread(&rows, Measure::Euclidean);
    let div = csr_spread(&rows, Measure::Divergence);
    Ok(Outcome::new(
        euc <= 0.05 && div <= 0.05,
        format!("per-λ mean CSR spread euc {euc:.4}, div {div:.4} ({} runs)", rows.len()),
    ))
}

fn criterion_6() -> Result<Outcome> {
    let h = |t: &[(usize, usize, usize)]| ConstraintSet::new(Target::ColsOfH, t.iter().map(|&(q, r, s)| triple(q, r, s)));
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let mut failures = Vec::new();

    let wm = constraints_to_weight_matrix(3, &h(&[(1, 2, 3)]), 0.0, 1.0)?;
    let w = &wm.weights;
    let diag = (0..3).all(|i| w.get(i, i) == 1.0);
    if !(close(w.get(0, 2), 0.0) && close(w.get(2, 0), 0.0) && close(w.get(0, 1), 1.0) && close(w.get(1, 2), 0.0) && diag) {
        failures.push("single triple");
    }

    // Any non-empty set has a chain of depth two, so the depth-one case is
    // only checked through its independent-triples shape.
    let wm = constraints_to_weight_matrix(6, &h(&[(1, 2, 3), (4, 5, 6)]), 0.2, 0.7)?;
    let w = &wm.weights;
    if !(wm.max_depth == 2 && close(w.get(0, 1), 0.7) && close(w.get(0, 2), 0.2) && close(w.get(3, 4), 0.7) && close(w.get(3, 5), 0.2)) {
        failures.push("independent triples");
    }
    let empty = constraints_to_weight_matrix(4, &h(&[]), 0.2, 0.7)?;
    if !(empty.max_depth == 0 && empty.weights == DenseMatrix::identity(4)) {
        failures.push("empty weight set");
    }

    let (mins, maxs) = (0.1, 0.9);
    let wm = constraints_to_weight_matrix(4, &h(&[(2, 1, 3), (3, 2, 4)]), mins, maxs)?;
    let w = &wm.weights;
    let t = (maxs - mins) / 2.0;
    let chain_ok = wm.max_depth == 3
        && close(w.get(1, 0), maxs)
        && close(w.get(1, 2), mins + t)
        && close(w.get(2, 3), mins)
        && close(w.get(0, 1), w.get(1, 0));
    if !chain_ok {
        failures.push("three-deep chain");
    }

    let lm = constraints_to_label_matrix(6, &h(&[(1, 2, 3), (4, 5, 6)]))?;
    if lm.classes() != vec![vec![1, 2], vec![4, 5]] {
        failures.push("two label classes");
    }
    let lm = constraints_to_label_matrix(4, &h(&[(1, 2, 4), (2, 3, 4)]))?;
    if lm.classes() != vec![vec![1, 2, 3]] {
        failures.push("merged label class");
    }
    let lm = constraints_to_label_matrix(4, &h(&[]))?;
    if lm.class_count() != 0 || lm.to_dense(4).is_some() {
        failures.push("empty label set");
    }

    Ok(Outcome::new(
        failures.is_empty(),
        if failures.is_empty() {
            "7 hand traces reproduced; the depth-one weight example cannot arise from a non-empty set".to_owned()
        } else {
            format!("mismatch in: {}", failures.join(", "))
        },
    ))
}

fn criterion_7() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut acc_worst, mut rmse_worst, mut f1_worst, mut nmi_worst): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..50 {
        let points = rng.gen_range(5..40);
        let kp = rng.gen_range(1..=5);
        let kt = rng.gen_range(1..=5);
        let pred: Vec<usize> = (0..points).map(|_| rng.gen_range(1..=kp)).collect();
        let truth: Vec<usize> = (0..points).map(|_| rng.gen_range(1..=kt)).collect();
        let (kp, kt) = (*pred.iter().max().unwrap(), *truth.iter().max().unwrap());
        let pa = ClusterAssignment::new(pred.clone(), kp)?;
        let ta = ClusterAssignment::new(truth.clone(), kt)?;
        acc_worst = acc_worst.max((clustering_accuracy(&pa, &ta)? - acc_brute_force(&pred, &truth)).abs());
        nmi_worst = nmi_worst.max((nmi(&pa, &ta)? - nmi_direct(&pred, &truth)).abs());

        let (n, m) = (rng.gen_range(2..12), rng.gen_range(2..12));
        let v = DenseMatrix::from_fn(n, m, |_, _| rng.gen_range(1..=5) as f64);
        let wh = uniform(n, m, &mut rng, 0.5, 5.5);
        let mut heldout = MaskMatrix::empty(n, m);
        let mut observed = MaskMatrix::empty(n, m);
        for i in 0..n {
            let anchor = rng.gen_range(0..m);
            for j in 0..m {
                if j == anchor {
                    observed.set(i, j, true);
                } else if (i == 0 && j == (anchor + 1) % m) || rng.gen_bool(0.3) {
                    heldout.set(i, j, true);
                } else {
                    observed.set(i, j, rng.gen_bool(0.8));
                }
            }
        }
        rmse_worst = rmse_worst.max((rmse(&v, &wh, &heldout)? - rmse_loop(&v, &wh, &heldout)).abs());
        f1_worst = f1_worst.max((f1_score(&v, &wh, &observed, &heldout)?.f1 - f1_loop(&v, &wh, &observed, &heldout)).abs());
    }
    Ok(Outcome::new(
        acc_worst <= 1e-12 && rmse_worst <= 1e-12 && f1_worst <= 1e-12 && nmi_worst <= 1e-12,
        format!("max |Δ| ACC {acc_worst:.1e}, RMSE {rmse_worst:.1e}, F1 {f1_worst:.1e}, NMI {nmi_worst:.1e} over 50 cases"),
    ))
}

fn criterion_8() -> Result<Outcome> {
    let (n, m, k) = (30, 30, 5);
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
        let w0 = uniform(n, k, &mut rng, 0.0, 1.0);
        let h0 = uniform(k, m, &mut rng, 0.0, 1.0);
        let v = w0.matmul(&h0)?;
        let mut order: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut observed = MaskMatrix::empty(n, m);
        for &(i, j) in &order[..n * m / 2] {
            observed.set(i, j, true);
        }
        let heldout = MaskMatrix::full(n, m).minus(&observed);
        let config = SolverConfig::new(k, Measure::Euclidean)
            .with_lambdas(0.0, 0.0)
            .with_iters(1000, 0.0)
            .with_seed(seed)
            .with_mask(observed);
        let state = SolverState::random(n, m, &config)?;
        let report = run_from(&v, &Constraints::none(), &config, state)?;
        let wh = report.w.matmul(&report.h)?;
        worst = worst.max(rmse(&v, &wh, &heldout)?);
    }
    Ok(Outcome::new(worst <= 0.05, format!("worst held-out RMSE over 10 seeds {worst:.4}")))
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, Criterion, Duration); 8] = [
        (1, "unconstrained updates match classic NMF", criterion_1, Duration::from_secs(5)),
        (2, "penalty gradients match finite differences", criterion_2, Duration::from_secs(10)),
        (3, "objective monotonicity", criterion_3, Duration::from_secs(60)),
        (4, "synthetic constraint satisfaction", criterion_4, Duration::from_secs(900)),
        (5, "penalty weight insensitivity", criterion_5, Duration::from_secs(900)),
        (6, "constraint converters", criterion_6, Duration::from_secs(1)),
        (7, "metric oracles", criterion_7, Duration::from_secs(10)),
        (8, "masked completion", criterion_8, Duration::from_secs(60)),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();

    let mut failed = 0;
    for (id, name, run_criterion, budget) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let started = Instant::now();
        let outcome = run_criterion().unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
        let elapsed = started.elapsed();
        let pass = outcome.pass && elapsed <= budget;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {id} ({name}): {}; {}; {:.1}s of {}s budget",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    let strict = std::env::var("RPRNMF_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed > 0 {
        println!("{failed} criteria failed");
    }
    if failed > 0 && strict {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
