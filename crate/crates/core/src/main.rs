use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use rprnmf::constraints::{constraints_to_label_matrix, constraints_to_weight_matrix, read_constraints, write_constraints};
use rprnmf::experiments::{
    self, csr_spread, default_lambda_grid, extract_label_constraints, group_means, write_results_csv, CvParams,
    ExperimentKind, RunManifest, ExtractParams, IterSettings, ParamSweepParams, Syn1Params, Syn2Params, SynRow,
};
use rprnmf::io::{
    read_dense_csv_masked, read_labels, read_mask_csv, read_ratings, ratings_to_matrix, write_dense_csv, write_report,
    RatingsFormat, ReportDocument,
};
use rprnmf::solver::ConfigEcho;
use rprnmf::{ConstraintSet, Constraints, Error, Measure, SolverConfig, Target};

const THREADS_ENV: &str = "RPRNMF_THREADS";

#[derive(Parser)]
#[command(name = "rprnmf", version, about = "NMF with relative pairwise relationship constraints")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Base random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Distance measure; sweeps run both when omitted.
    #[arg(long, global = true)]
    measure: Option<Measure>,
    /// Latent dimension.
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    lambda_w: Option<f64>,
    #[arg(long, global = true)]
    lambda_h: Option<f64>,
    #[arg(long, global = true, default_value_t = 500)]
    max_iters: usize,
    #[arg(long, global = true, default_value_t = 1e-6)]
    rel_tol: f64,
    /// Repetitions per setting.
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// Worker threads for repetitions and folds (overridden by RPRNMF_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

impl Common {
    fn iters(&self) -> IterSettings {
        IterSettings {
            max_iters: self.max_iters,
            rel_tol: self.rel_tol,
        }
    }

    fn measures(&self) -> Vec<Measure> {
        match self.measure {
            Some(m) => vec![m],
            None => vec![Measure::Euclidean, Measure::Divergence],
        }
    }

    fn manifest(&self, kind: ExperimentKind) -> RunManifest {
        RunManifest::new(kind, self.seed)
            .param("measure", self.measure)
            .param("k", self.k)
            .param("lambda_w", self.lambda_w)
            .param("lambda_h", self.lambda_h)
            .param("max_iters", self.max_iters)
            .param("rel_tol", self.rel_tol)
            .param("reps", self.reps)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Factorise one matrix and write a JSON report.
    Factorize(FactorizeArgs),
    /// Sweep the number of chain constraint groups on synthetic data.
    Syn1(Syn1Args),
    /// Sweep the size of the synthetic matrix.
    Syn2(Syn2Args),
    /// Sweep the penalty weights with constraints on both factors.
    ParamSweep(ParamSweepArgs),
    /// Convert constraints on H into a weight or label matrix.
    Convert(ConvertArgs),
    /// Cross-validate masked factorisations on a ratings matrix.
    Crossvalidate(CrossvalidateArgs),
    /// Derive constraints from per-point class labels.
    ExtractConstraints(ExtractArgs),
}

#[derive(Args)]
struct FactorizeArgs {
    /// Dense non-negative matrix, CSV without header.
    #[arg(long)]
    matrix: PathBuf,
    /// Observed-cell mask as a 0/1 CSV.
    #[arg(long, conflicts_with = "treat_zero_as_missing")]
    mask: Option<PathBuf>,
    /// Treat zero cells of the matrix as unobserved.
    #[arg(long)]
    treat_zero_as_missing: bool,
    /// Constraints file (`W q r s` / `H q r s` lines).
    #[arg(long)]
    constraints: Option<PathBuf>,
    /// One class label per column, for clustering accuracy and NMI.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Directory for the factor matrices `w.csv` and `h.csv`.
    #[arg(long)]
    save_factors: Option<PathBuf>,
}

#[derive(Args)]
struct Syn1Args {
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    m: usize,
    /// Largest number of chain groups; the sweep runs 1..=this.
    #[arg(long, default_value_t = 10)]
    max_groups: usize,
    /// Distances per chain (a chain yields this minus one triples).
    #[arg(long, default_value_t = 6)]
    chain_len: usize,
}

#[derive(Args)]
struct Syn2Args {
    /// Matrix sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = (1..=10).map(|i| 20 * i).collect::<Vec<usize>>())]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 6)]
    chain_len: usize,
}

#[derive(Args)]
struct ParamSweepArgs {
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    m: usize,
    /// Penalty weights, comma separated (default 0.4..4 step 0.4 and 20..100 step 20).
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    /// Constraints per factor (default N / 10).
    #[arg(long)]
    per_side: Option<usize>,
    #[arg(long, default_value_t = 6)]
    chain_len: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConvertTo {
    Weights,
    Labels,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    constraints: PathBuf,
    #[arg(long, value_enum)]
    to: ConvertTo,
    /// Number of columns of H (default: largest index in the file).
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    mins: f64,
    #[arg(long, default_value_t = 1.0)]
    maxs: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum RatingsFileFormat {
    Dat,
    Csv,
}

#[derive(Args)]
struct CrossvalidateArgs {
    /// Ratings file (`u::i::r::t` or CSV).
    #[arg(long, required_unless_present = "matrix")]
    ratings: Option<PathBuf>,
    /// Format of the ratings file (default: by extension, `.dat` is `::`).
    #[arg(long, value_enum)]
    format: Option<RatingsFileFormat>,
    /// Dense matrix with zeros as missing, instead of a ratings file.
    #[arg(long, conflicts_with = "ratings")]
    matrix: Option<PathBuf>,
    /// Constraints file for either or both factors.
    #[arg(long)]
    constraints: Option<PathBuf>,
    /// Per-user labels to extract W constraints from.
    #[arg(long)]
    user_labels: Option<PathBuf>,
    /// Per-item labels to extract H constraints from.
    #[arg(long)]
    item_labels: Option<PathBuf>,
    /// Constraints extracted per side from label files.
    #[arg(long, default_value_t = 300)]
    n_constraints: usize,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long)]
    subsample_users: Option<usize>,
    #[arg(long)]
    subsample_items: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Side {
    W,
    H,
}

#[derive(Args)]
struct ExtractArgs {
    /// One class label per point.
    #[arg(long)]
    labels: PathBuf,
    /// Factor the constraints apply to.
    #[arg(long, value_enum, default_value = "h")]
    target: Side,
    #[arg(long, default_value_t = 2)]
    per_class: usize,
    #[arg(long, default_value_t = 1)]
    per_anchor: usize,
    /// Also emit triples anchored in the other class.
    #[arg(long)]
    both_ways: bool,
    #[arg(long)]
    limit: Option<usize>,
}

fn target_of(side: Side) -> Target {
    match side {
        Side::W => Target::RowsOfW,
        Side::H => Target::ColsOfH,
    }
}

fn out_path(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn configure_threads(flag: Option<usize>) -> Result<(), Error> {
    let from_env = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidConfig(format!("{THREADS_ENV}={v:?} is not a thread count")))?,
        ),
        Err(_) => None,
    };
    if let Some(n) = from_env.or(flag) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    }
    Ok(())
}

fn print_syn_summary(rows: &[SynRow]) {
    let means = group_means(rows, |r| (r.algorithm.clone(), r.measure), |r| r.csr);
    let errors = group_means(rows, |r| (r.algorithm.clone(), r.measure), |r| r.msl_or_md);
    for (((alg, measure), csr), (_, err)) in means.iter().zip(&errors) {
        println!("{alg} {measure}: mean csr {csr:.4}, mean error {err:.6e}");
    }
}

fn cmd_factorize(common: &Common, args: &FactorizeArgs) -> Result<(), Error> {
    let k = common.k.ok_or_else(|| Error::InvalidConfig("--k is required".into()))?;
    let measure = common.measure.unwrap_or(Measure::Euclidean);
    let (v, zero_mask) = read_dense_csv_masked(&args.matrix, args.treat_zero_as_missing)?;
    let mask = match &args.mask {
        Some(p) => Some(read_mask_csv(p)?),
        None => zero_mask,
    };
    let sets = match &args.constraints {
        Some(p) => read_constraints(p)?,
        None => Constraints::none(),
    };
    let labels = args.labels.as_ref().map(read_labels).transpose()?;
    let mut config = SolverConfig::new(k, measure)
        .with_lambdas(common.lambda_w.unwrap_or(0.0), common.lambda_h.unwrap_or(0.0))
        .with_iters(common.max_iters, common.rel_tol)
        .with_seed(common.seed);
    config.mask = mask;

    let (report, metrics) = experiments::factorize(&v, &sets, &config, labels.as_deref())?;
    let doc = ReportDocument::new(ConfigEcho::from(&config), &report, metrics);
    println!("iterations: {}", doc.iterations);
    println!("objective: {:e}", doc.final_objective);
    let optional = [
        ("csr", doc.csr),
        ("msl", doc.metrics.msl),
        ("md", doc.metrics.md),
        ("rmse", doc.metrics.rmse),
        ("acc", doc.metrics.acc),
        ("nmi", doc.metrics.nmi),
    ];
    for (name, value) in optional {
        if let Some(value) = value {
            println!("{name}: {value:.6e}");
        }
    }
    println!("wall_time_s: {:.3}", doc.wall_time_s);
    if let Some(dir) = &args.save_factors {
        std::fs::create_dir_all(dir).map_err(|source| Error::File { path: dir.clone(), source })?;
        write_dense_csv(dir.join("w.csv"), &report.w)?;
        write_dense_csv(dir.join("h.csv"), &report.h)?;
    }
    if let Some(out) = &common.out {
        write_report(out, &doc)?;
        info!("report written to {}", out.display());
    }
    Ok(())
}

fn cmd_syn1(common: &Common, args: &Syn1Args) -> Result<(), Error> {
    let p = Syn1Params {
        n: args.n,
        m: args.m,
        k: common.k.unwrap_or(20),
        lambda_h: common.lambda_h.unwrap_or(1.0),
        groups: (1..=args.max_groups).collect(),
        chain_len: args.chain_len,
        reps: common.reps.unwrap_or(10),
        measures: common.measures(),
        iters: common.iters(),
        seed: common.seed,
    };
    let rows = experiments::syn1(&p)?;
    let manifest = common
        .manifest(ExperimentKind::Syn1)
        .param("n", args.n)
        .param("m", args.m)
        .param("max_groups", args.max_groups)
        .param("chain_len", args.chain_len);
    let out = out_path(common, "syn1.csv");
    write_results_csv(&out, &rows, &manifest)?;
    print_syn_summary(&rows);
    println!("{} rows written to {}", rows.len(), out.display());
    Ok(())
}

fn cmd_syn2(common: &Common, args: &Syn2Args) -> Result<(), Error> {
    let p = Syn2Params {
        sizes: args.sizes.clone(),
        lambda_h: common.lambda_h.unwrap_or(1.0),
        chain_len: args.chain_len,
        reps: common.reps.unwrap_or(10),
        measures: common.measures(),
        iters: common.iters(),
        seed: common.seed,
    };
    if common.k.is_some() {
        warn!("--k is ignored by syn2; K = N / 5");
    }
    let rows = experiments::syn2(&p)?;
    let manifest = common
        .manifest(ExperimentKind::Syn2)
        .param("sizes", &args.sizes)
        .param("chain_len", args.chain_len);
    let out = out_path(common, "syn2.csv");
    write_results_csv(&out, &rows, &manifest)?;
    let times = group_means(&rows, |r| r.n, |r| r.wall_time_s);
    let rising = times.windows(2).filter(|w| w[1].1 >= w[0].1).count();
    println!("wall time rises at {rising} of {} size steps", times.len().saturating_sub(1));
    print_syn_summary(&rows);
    println!("{} rows written to {}", rows.len(), out.display());
    Ok(())
}

fn cmd_param_sweep(common: &Common, args: &ParamSweepArgs) -> Result<(), Error> {
    let p = ParamSweepParams {
        n: args.n,
        m: args.m,
        k: common.k.unwrap_or(20),
        lambdas: args.lambdas.clone().unwrap_or_else(default_lambda_grid),
        per_side: args.per_side.unwrap_or(args.n / 10),
        chain_len: args.chain_len,
        reps: common.reps.unwrap_or(10),
        measures: common.measures(),
        iters: common.iters(),
        seed: common.seed,
    };
    let rows = experiments::param_sweep(&p)?;
    let manifest = common
        .manifest(ExperimentKind::ParamSweep)
        .param("n", args.n)
        .param("m", args.m)
        .param("lambdas", &p.lambdas)
        .param("per_side", p.per_side)
        .param("chain_len", args.chain_len);
    let out = out_path(common, "param_sweep.csv");
    write_results_csv(&out, &rows, &manifest)?;
    for measure in &p.measures {
        println!("{measure}: csr spread across lambda {:.4}", csr_spread(&rows, *measure));
    }
    println!("{} rows written to {}", rows.len(), out.display());
    Ok(())
}

fn cmd_convert(common: &Common, args: &ConvertArgs) -> Result<(), Error> {
    let sets = read_constraints(&args.constraints)?;
    let set = match sets.h {
        Some(set) => set,
        None if sets.w.is_none() => ConstraintSet::empty(Target::ColsOfH),
        None => {
            return Err(Error::InvalidConfig(format!("{} has no H constraints", args.constraints.display())));
        }
    };
    let m = args
        .m
        .unwrap_or_else(|| set.triples().iter().map(|t| t.q.max(t.r).max(t.s)).max().unwrap_or(0));
    match args.to {
        ConvertTo::Weights => {
            let wm = constraints_to_weight_matrix(m, &set, args.mins, args.maxs)?;
            let out = out_path(common, "weights.csv");
            write_dense_csv(&out, &wm.weights)?;
            println!("max depth: {}", wm.max_depth);
        }
        ConvertTo::Labels => {
            let lm = constraints_to_label_matrix(m, &set)?;
            let out = out_path(common, "labels.csv");
            match lm.to_dense(m) {
                Some(dense) => write_dense_csv(&out, &dense)?,
                None => std::fs::write(&out, "").map_err(|source| Error::File { path: out.clone(), source })?,
            }
            println!("classes: {}", lm.class_count());
        }
    }
    Ok(())
}

fn extract_side(path: &Path, target: Target, count: usize, expected: usize, seed: u64) -> Result<ConstraintSet, Error> {
    let labels = read_labels(path)?;
    if labels.len() != expected {
        return Err(Error::LengthMismatch {
            left: labels.len(),
            right: expected,
        });
    }
    let mut classes = labels.clone();
    classes.sort();
    classes.dedup();
    let p = ExtractParams {
        target,
        per_class: 2,
        per_anchor: count.div_ceil(2 * classes.len()).max(1),
        both_ways: false,
        limit: Some(count),
        seed,
    };
    extract_label_constraints(&labels, &p)
}

fn cmd_crossvalidate(common: &Common, args: &CrossvalidateArgs) -> Result<(), Error> {
    let (v, observed, labels_apply) = match (&args.ratings, &args.matrix) {
        (Some(path), _) => {
            let format = match args.format {
                Some(RatingsFileFormat::Dat) => RatingsFormat::DoubleColon,
                Some(RatingsFileFormat::Csv) => RatingsFormat::Csv,
                None => RatingsFormat::from_path(path),
            };
            let mut table = read_ratings(path, format)?;
            let subsampled = args.subsample_users.is_some() || args.subsample_items.is_some();
            if subsampled {
                table = table.subsample(args.subsample_users, args.subsample_items);
            }
            println!(
                "ratings: {} users x {} items, {} ratings, density {:.4}",
                table.users(),
                table.items(),
                table.ratings.len(),
                table.density()
            );
            let (v, mask) = ratings_to_matrix(&table);
            (v, mask, !subsampled)
        }
        (None, Some(path)) => {
            let (v, mask) = read_dense_csv_masked(path, true)?;
            (v, mask.expect("zero-as-missing mask"), true)
        }
        (None, None) => return Err(Error::InvalidConfig("--ratings or --matrix is required".into())),
    };

    let mut sets = match &args.constraints {
        Some(p) => read_constraints(p)?,
        None => Constraints::none(),
    };
    if (args.user_labels.is_some() || args.item_labels.is_some()) && !labels_apply {
        return Err(Error::InvalidConfig("label files cannot be combined with subsampling".into()));
    }
    if let Some(p) = &args.user_labels {
        sets.w = Some(extract_side(p, Target::RowsOfW, args.n_constraints, v.rows(), common.seed)?);
    }
    if let Some(p) = &args.item_labels {
        sets.h = Some(extract_side(p, Target::ColsOfH, args.n_constraints, v.cols(), common.seed ^ 1)?);
    }
    let lambda = match (common.lambda_w, common.lambda_h) {
        (Some(a), Some(b)) if a != b => {
            return Err(Error::InvalidConfig("crossvalidate uses one penalty weight for both factors".into()))
        }
        (a, b) => a.or(b),
    };
    let p = CvParams {
        k: common.k.unwrap_or(20),
        measures: common.measures(),
        lambda,
        folds: args.folds,
        iters: common.iters(),
        seed: common.seed,
    };
    let rows = experiments::crossvalidate(&v, &observed, &sets, &p)?;
    let mut manifest = common
        .manifest(ExperimentKind::CrossValidate)
        .param("folds", args.folds)
        .param("n_constraints", args.n_constraints)
        .param("subsample_users", args.subsample_users)
        .param("subsample_items", args.subsample_items);
    for (name, path) in [
        ("ratings", &args.ratings),
        ("matrix", &args.matrix),
        ("constraints", &args.constraints),
        ("user_labels", &args.user_labels),
        ("item_labels", &args.item_labels),
    ] {
        if let Some(path) = path {
            manifest = manifest.input(name, path);
        }
    }
    let out = out_path(common, "crossvalidate.csv");
    write_results_csv(&out, &rows, &manifest)?;
    let means = group_means(&rows, |r| (r.algorithm.clone(), r.measure), |r| r.rmse);
    let f1 = group_means(&rows, |r| (r.algorithm.clone(), r.measure), |r| r.f1);
    for (((alg, measure), rmse), (_, f1)) in means.iter().zip(&f1) {
        println!("{alg} {measure}: mean rmse {rmse:.4}, mean f1 {f1:.4}");
    }
    println!("{} rows written to {}", rows.len(), out.display());
    Ok(())
}

fn cmd_extract(common: &Common, args: &ExtractArgs) -> Result<(), Error> {
    let labels = read_labels(&args.labels)?;
    let target = target_of(args.target);
    let p = ExtractParams {
        target,
        per_class: args.per_class,
        per_anchor: args.per_anchor,
        both_ways: args.both_ways,
        limit: args.limit,
        seed: common.seed,
    };
    let set = extract_label_constraints(&labels, &p)?;
    let out = out_path(common, "constraints.txt");
    let count = set.len();
    let sets = match target {
        Target::RowsOfW => Constraints { w: Some(set), h: None },
        Target::ColsOfH => Constraints::only_h(set),
    };
    write_constraints(&out, &sets)?;
    println!("{count} constraints written to {}", out.display());
    Ok(())
}

fn run_cli(cli: &Cli) -> Result<(), Error> {
    configure_threads(cli.common.threads)?;
    let c = &cli.common;
    match &cli.command {
        Command::Factorize(a) => cmd_factorize(c, a),
        Command::Syn1(a) => cmd_syn1(c, a),
        Command::Syn2(a) => cmd_syn2(c, a),
        Command::ParamSweep(a) => cmd_param_sweep(c, a),
        Command::Convert(a) => cmd_convert(c, a),
        Command::Crossvalidate(a) => cmd_crossvalidate(c, a),
        Command::ExtractConstraints(a) => cmd_extract(c, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.common.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run_cli(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
