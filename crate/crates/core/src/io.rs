//! Matrix, mask, ratings and report files; cross-validation splits.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, MaskMatrix};
use crate::metrics::F1Report;
use crate::solver::{ConfigEcho, FactorisationReport};

pub const REPORT_SCHEMA: &str = "rprnmf-report/1";

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::file(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::file(path, e))
}

fn csv_rows(text: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        rows.push((line, record.iter().map(str::to_owned).collect()));
    }
    Ok(rows)
}

/// Parses comma-separated rows of numbers. Blank lines and `#` comments are skipped.
pub fn parse_dense_csv(text: &str) -> Result<DenseMatrix> {
    let rows = csv_rows(text)?;
    let Some((_, first)) = rows.first() else {
        return Err(Error::Malformed {
            line: 1,
            message: "no data rows".into(),
        });
    };
    let cols = first.len();
    let mut data = Vec::with_capacity(rows.len() * cols);
    for (line, fields) in &rows {
        if fields.len() != cols {
            return Err(Error::Ragged {
                line: *line,
                expected: cols,
                found: fields.len(),
            });
        }
        for (idx, field) in fields.iter().enumerate() {
            let value: f64 = field.parse().map_err(|_| Error::NonNumeric {
                line: *line,
                field: idx + 1,
                value: field.clone(),
            })?;
            if !value.is_finite() {
                return Err(Error::NonNumeric {
                    line: *line,
                    field: idx + 1,
                    value: field.clone(),
                });
            }
            data.push(value);
        }
    }
    DenseMatrix::new(rows.len(), cols, data)
}

pub fn read_dense_csv(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    parse_dense_csv(&read_text(path.as_ref())?)
}

/// Reads a matrix and, when `zero_is_missing` is set, a mask marking its
/// non-zero cells as observed.
pub fn read_dense_csv_masked(path: impl AsRef<Path>, zero_is_missing: bool) -> Result<(DenseMatrix, Option<MaskMatrix>)> {
    let m = read_dense_csv(path)?;
    let mask = zero_is_missing.then(|| MaskMatrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j) != 0.0));
    Ok((m, mask))
}

/// Shortest round-trip decimal form of every entry.
pub fn render_dense_csv(m: &DenseMatrix) -> String {
    let mut out = String::with_capacity(m.rows() * m.cols() * 20);
    for i in 0..m.rows() {
        for (j, x) in m.row(i).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{x}");
        }
        out.push('\n');
    }
    out
}

pub fn write_dense_csv(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    write_text(path.as_ref(), &render_dense_csv(m))
}

/// A 0/1 CSV; any non-zero entry counts as observed.
pub fn read_mask_csv(path: impl AsRef<Path>) -> Result<MaskMatrix> {
    let m = read_dense_csv(path)?;
    Ok(MaskMatrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j) != 0.0))
}

pub fn write_mask_csv(path: impl AsRef<Path>, mask: &MaskMatrix) -> Result<()> {
    let m = DenseMatrix::from_fn(mask.rows(), mask.cols(), |i, j| if mask.get(i, j) { 1.0 } else { 0.0 });
    write_dense_csv(path, &m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatingsFormat {
    /// `user::item::rating::timestamp`
    DoubleColon,
    /// `user,item,rating[,timestamp]`, optional header row
    Csv,
}

impl RatingsFormat {
    /// Guesses from the file name: `.dat` means `::`-separated.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("dat") => RatingsFormat::DoubleColon,
            _ => RatingsFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating {
    /// 0-based densified user index.
    pub user: usize,
    /// 0-based densified item index.
    pub item: usize,
    pub value: f64,
    pub timestamp: Option<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatingsTable {
    /// Raw id of each densified user; row `i` of the rating matrix is user `i + 1`.
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub ratings: Vec<Rating>,
    /// Repeated (user, item) pairs overwritten by a later line.
    pub duplicates: usize,
}

impl RatingsTable {
    pub fn users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn density(&self) -> f64 {
        self.ratings.len() as f64 / (self.users() * self.items()).max(1) as f64
    }

    /// Keeps the first `users` users and `items` items (in densified order)
    /// and drops any user or item left without ratings.
    pub fn subsample(&self, users: Option<usize>, items: Option<usize>) -> RatingsTable {
        let keep_u = users.unwrap_or(usize::MAX);
        let keep_i = items.unwrap_or(usize::MAX);
        let raw = self
            .ratings
            .iter()
            .filter(|r| r.user < keep_u && r.item < keep_i)
            .map(|r| RawRating {
                user: self.user_ids[r.user].clone(),
                item: self.item_ids[r.item].clone(),
                value: r.value,
                timestamp: r.timestamp,
            });
        let mut table = densify(raw.collect());
        table.duplicates = self.duplicates;
        table
    }
}

struct RawRating {
    user: String,
    item: String,
    value: f64,
    timestamp: Option<i64>,
}

/// Numeric ids sort numerically, others lexicographically after them.
fn id_order(a: &String, b: &String) -> std::cmp::Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

fn densify(raw: Vec<RawRating>) -> RatingsTable {
    let mut user_ids: Vec<String> = raw.iter().map(|r| r.user.clone()).collect();
    let mut item_ids: Vec<String> = raw.iter().map(|r| r.item.clone()).collect();
    for ids in [&mut user_ids, &mut item_ids] {
        ids.sort_by(id_order);
        ids.dedup();
    }
    let user_index: HashMap<&str, usize> = user_ids.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
    let item_index: HashMap<&str, usize> = item_ids.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();

    let mut slot: HashMap<(usize, usize), usize> = HashMap::new();
    let mut ratings: Vec<Rating> = Vec::with_capacity(raw.len());
    let mut duplicates = 0;
    for r in &raw {
        let rating = Rating {
            user: user_index[r.user.as_str()],
            item: item_index[r.item.as_str()],
            value: r.value,
            timestamp: r.timestamp,
        };
        match slot.get(&(rating.user, rating.item)) {
            Some(&at) => {
                ratings[at] = rating;
                duplicates += 1;
            }
            None => {
                slot.insert((rating.user, rating.item), ratings.len());
                ratings.push(rating);
            }
        }
    }
    if duplicates > 0 {
        warn!("{duplicates} duplicate ratings replaced by later lines");
    }
    RatingsTable {
        user_ids,
        item_ids,
        ratings,
        duplicates,
    }
}

pub fn parse_ratings(text: &str, format: RatingsFormat) -> Result<RatingsTable> {
    let mut raw = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = match format {
            RatingsFormat::DoubleColon => trimmed.split("::").map(str::trim).collect(),
            RatingsFormat::Csv => trimmed.split(',').map(str::trim).collect(),
        };
        if !(3..=4).contains(&fields.len()) {
            return Err(Error::Malformed {
                line: line_no,
                message: format!("expected 3 or 4 fields, found {}", fields.len()),
            });
        }
        if format == RatingsFormat::Csv && raw.is_empty() && fields[2].parse::<f64>().is_err() {
            // header row
            continue;
        }
        let value: f64 = fields[2].parse().map_err(|_| Error::Malformed {
            line: line_no,
            message: format!("rating {:?} is not a number", fields[2]),
        })?;
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::Malformed {
                line: line_no,
                message: format!("rating {value} must be positive"),
            });
        }
        let timestamp = match fields.get(3) {
            Some(t) => Some(t.parse::<i64>().map_err(|_| Error::Malformed {
                line: line_no,
                message: format!("timestamp {t:?} is not an integer"),
            })?),
            None => None,
        };
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Malformed {
                line: line_no,
                message: "empty user or item id".into(),
            });
        }
        raw.push(RawRating {
            user: fields[0].to_owned(),
            item: fields[1].to_owned(),
            value,
            timestamp,
        });
    }
    Ok(densify(raw))
}

pub fn read_ratings(path: impl AsRef<Path>, format: RatingsFormat) -> Result<RatingsTable> {
    parse_ratings(&read_text(path.as_ref())?, format)
}

/// Users × items matrix with zeros at unobserved cells, plus the observed mask.
pub fn ratings_to_matrix(table: &RatingsTable) -> (DenseMatrix, MaskMatrix) {
    let (n, m) = (table.users(), table.items());
    let mut v = DenseMatrix::zeros(n, m);
    let mut mask = MaskMatrix::empty(n, m);
    for r in &table.ratings {
        v.set(r.user, r.item, r.value);
        mask.set(r.user, r.item, true);
    }
    (v, mask)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvSplit {
    pub folds: usize,
    /// Held-out cells of each fold.
    pub heldout: Vec<MaskMatrix>,
    /// Observed cells that never leave training, because holding them out
    /// would empty a row or column of some training mask.
    pub always_train: MaskMatrix,
    /// Entries moved or pinned by the coverage repair.
    pub repairs: usize,
}

impl CvSplit {
    /// Training cells of `fold`: everything observed except that fold's held-out cells.
    pub fn training(&self, fold: usize, observed: &MaskMatrix) -> MaskMatrix {
        observed.minus(&self.heldout[fold])
    }
}

/// Round-robin split of the shuffled observed cells, followed by a repair
/// pass that keeps at least one training cell in every row and column of
/// every fold.
pub fn make_cv_split(mask: &MaskMatrix, folds: usize, seed: u64) -> Result<CvSplit> {
    if folds < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {folds}")));
    }
    let (n, m) = mask.shape();
    let mut cells: Vec<(usize, usize)> = mask.observed().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cells.shuffle(&mut rng);

    let mut row_total = vec![0usize; n];
    let mut col_total = vec![0usize; m];
    for &(i, j) in &cells {
        row_total[i] += 1;
        col_total[j] += 1;
    }

    let mut assign: Vec<Option<usize>> = Vec::with_capacity(cells.len());
    let mut repairs = 0;
    let mut next = 0;
    for &(i, j) in &cells {
        if row_total[i] < 2 || col_total[j] < 2 {
            assign.push(None);
            repairs += 1;
        } else {
            assign.push(Some(next % folds));
            next += 1;
        }
    }
    if next < folds {
        return Err(Error::TooSparse {
            observed: next,
            folds,
        });
    }

    let mut fold_row = vec![vec![0usize; n]; folds];
    let mut fold_col = vec![vec![0usize; m]; folds];
    for (&(i, j), a) in cells.iter().zip(&assign) {
        if let Some(f) = *a {
            fold_row[f][i] += 1;
            fold_col[f][j] += 1;
        }
    }

    for _ in 0..folds + 2 {
        let mut changed = false;
        for (e, &(i, j)) in cells.iter().enumerate() {
            let Some(f) = assign[e] else { continue };
            if fold_row[f][i] < row_total[i] && fold_col[f][j] < col_total[j] {
                continue;
            }
            fold_row[f][i] -= 1;
            fold_col[f][j] -= 1;
            let target = (1..folds)
                .map(|d| (f + d) % folds)
                .find(|&g| fold_row[g][i] + 1 < row_total[i] && fold_col[g][j] + 1 < col_total[j]);
            assign[e] = target;
            if let Some(g) = target {
                fold_row[g][i] += 1;
                fold_col[g][j] += 1;
            }
            repairs += 1;
            changed = true;
        }
        if !changed {
            break;
        }
    }
    if repairs > 0 {
        debug!("cross-validation split: {repairs} entries reassigned or pinned to training");
    }

    let mut heldout = vec![MaskMatrix::empty(n, m); folds];
    let mut always_train = MaskMatrix::empty(n, m);
    for (&(i, j), a) in cells.iter().zip(&assign) {
        match a {
            Some(f) => heldout[*f].set(i, j, true),
            None => always_train.set(i, j, true),
        }
    }
    Ok(CvSplit {
        folds,
        heldout,
        always_train,
        repairs,
    })
}

/// Metrics attached to a report; absent ones serialise as `null`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetrics {
    pub msl: Option<f64>,
    pub md: Option<f64>,
    pub rmse: Option<f64>,
    pub f1: Option<F1Report>,
    pub acc: Option<f64>,
    pub nmi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema: String,
    pub config: ConfigEcho,
    pub seed: u64,
    pub iterations: usize,
    pub sweeps: usize,
    pub converged: bool,
    pub final_objective: f64,
    pub objective_trace: Vec<f64>,
    pub rollbacks: Vec<usize>,
    pub final_lambda_w: f64,
    pub final_lambda_h: f64,
    pub csr: Option<f64>,
    pub satisfied_w: Option<(usize, usize)>,
    pub satisfied_h: Option<(usize, usize)>,
    #[serde(flatten)]
    pub metrics: ReportMetrics,
    pub wall_time_s: f64,
}

impl ReportDocument {
    pub fn new(config: ConfigEcho, report: &FactorisationReport, metrics: ReportMetrics) -> Self {
        Self {
            schema: REPORT_SCHEMA.to_owned(),
            seed: config.seed,
            config,
            iterations: report.iterations,
            sweeps: report.sweeps,
            converged: report.converged,
            final_objective: report.final_objective,
            objective_trace: report.objective_trace.clone(),
            rollbacks: report.rollbacks.clone(),
            final_lambda_w: report.final_lambda_w,
            final_lambda_h: report.final_lambda_h,
            csr: report.csr,
            satisfied_w: report.satisfied_w,
            satisfied_h: report.satisfied_h,
            metrics,
            wall_time_s: report.wall_time_s,
        }
    }
}

pub fn write_report(path: impl AsRef<Path>, doc: &ReportDocument) -> Result<()> {
    let mut text = serde_json::to_string_pretty(doc)?;
    text.push('\n');
    write_text(path.as_ref(), &text)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<ReportDocument> {
    let doc: ReportDocument = serde_json::from_str(&read_text(path.as_ref())?)?;
    if doc.schema != REPORT_SCHEMA {
        return Err(Error::InvalidConfig(format!("unsupported report schema {:?}", doc.schema)));
    }
    Ok(doc)
}

/// One class label per line (or comma/whitespace separated); returns the
/// labels in file order.
pub fn parse_labels(text: &str) -> Result<Vec<String>> {
    let mut labels = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("");
        labels.extend(line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()).map(str::to_owned));
    }
    if labels.is_empty() {
        return Err(Error::Malformed {
            line: 1,
            message: "no labels found".into(),
        });
    }
    Ok(labels)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<String>> {
    parse_labels(&read_text(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_simple_csv() {
        let m = parse_dense_csv("1,2\n3,4\n").unwrap();
        assert_eq!(m, DenseMatrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let spaced = parse_dense_csv("# comment\n 1 , 2\n\n3,4").unwrap();
        assert_eq!(spaced, m);
    }

    #[test]
    fn rejects_bad_csv() {
        assert!(matches!(
            parse_dense_csv("1,2\n3\n"),
            Err(Error::Ragged { line: 2, expected: 2, found: 1 })
        ));
        assert!(matches!(
            parse_dense_csv("1,2\n3,x\n"),
            Err(Error::NonNumeric { line: 2, field: 2, .. })
        ));
        assert!(parse_dense_csv("1,NaN\n").is_err());
        assert!(parse_dense_csv("").is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let m = DenseMatrix::random_init(rows, cols, seed, 1e-9, 1e6).unwrap();
            prop_assert_eq!(parse_dense_csv(&render_dense_csv(&m)).unwrap(), m);
        }
    }

    #[test]
    fn zero_as_missing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.csv");
        std::fs::write(&p, "0,2\n3,0\n").unwrap();
        let (m, mask) = read_dense_csv_masked(&p, true).unwrap();
        let mask = mask.unwrap();
        assert_eq!(mask.count(), 2);
        assert!(!mask.get(0, 0) && mask.get(0, 1));
        assert_eq!(m.get(1, 0), 3.0);
        assert!(read_dense_csv_masked(&p, false).unwrap().1.is_none());
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_dense_csv("/nonexistent/v.csv").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/v.csv"));
        assert!(err.is_usage());
    }

    #[test]
    fn ratings_parse_and_densify() {
        let t = parse_ratings("1::10::5::964982703\n", RatingsFormat::DoubleColon).unwrap();
        assert_eq!(t.ratings.len(), 1);
        assert_eq!(t.ratings[0].timestamp, Some(964982703));
        assert_eq!((t.users(), t.items()), (1, 1));

        // item 20 never rated; items 10 and 30 become columns 1 and 2
        let text = "user,item,rating\n2,30,4\n1,10,3\n2,10,1\n";
        let t = parse_ratings(text, RatingsFormat::Csv).unwrap();
        assert_eq!(t.item_ids, vec!["10", "30"]);
        assert_eq!(t.user_ids, vec!["1", "2"]);
        let (v, mask) = ratings_to_matrix(&t);
        assert_eq!(mask.count(), 3);
        assert_eq!(v.get(1, 1), 4.0);
        assert_eq!(v.get(0, 1), 0.0);
        assert!((t.density() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn ratings_duplicates_last_wins() {
        let t = parse_ratings("1::1::2::0\n1::1::5::1\n", RatingsFormat::DoubleColon).unwrap();
        assert_eq!(t.ratings.len(), 1);
        assert_eq!(t.ratings[0].value, 5.0);
        assert_eq!(t.duplicates, 1);
    }

    #[test]
    fn ratings_reject_malformed() {
        assert!(matches!(
            parse_ratings("1::1::3::0\n1::2\n", RatingsFormat::DoubleColon),
            Err(Error::Malformed { line: 2, .. })
        ));
        assert!(matches!(
            parse_ratings("1::1::0::0\n", RatingsFormat::DoubleColon),
            Err(Error::Malformed { line: 1, .. })
        ));
        assert!(matches!(
            parse_ratings("1,1,3\n1,2,x\n", RatingsFormat::Csv),
            Err(Error::Malformed { line: 2, .. })
        ));
        assert!(parse_ratings("1::1::3::later\n", RatingsFormat::DoubleColon).is_err());
    }

    #[test]
    fn subsample_keeps_leading_ids() {
        let text = "1,1,3\n1,2,4\n2,2,5\n3,3,1\n";
        let t = parse_ratings(text, RatingsFormat::Csv).unwrap();
        let s = t.subsample(Some(2), Some(2));
        assert_eq!(s.users(), 2);
        assert_eq!(s.items(), 2);
        assert_eq!(s.ratings.len(), 3);
    }

    #[test]
    fn cv_split_balanced_partition() {
        let mask = MaskMatrix::full(10, 10);
        let split = make_cv_split(&mask, 5, 3).unwrap();
        let sizes: Vec<usize> = split.heldout.iter().map(MaskMatrix::count).collect();
        assert_eq!(sizes, vec![20; 5]);
        let mut union = MaskMatrix::empty(10, 10);
        for f in &split.heldout {
            for (i, j) in f.observed() {
                assert!(!union.get(i, j));
                union.set(i, j, true);
            }
        }
        assert_eq!(union, mask);
        for f in 0..5 {
            split.training(f, &mask).check_coverage().unwrap();
        }
        assert_eq!(split, make_cv_split(&mask, 5, 3).unwrap());
    }

    #[test]
    fn cv_split_repairs_adversarial_rows() {
        // row 0 has a single observation, row 1 two; column 0 is dense
        let mask = MaskMatrix::from_fn(6, 6, |i, j| match i {
            0 => j == 3,
            1 => j == 0 || j == 5,
            _ => (i + j) % 2 == 0 || j == 0,
        });
        for seed in 0..20 {
            let split = make_cv_split(&mask, 3, seed).unwrap();
            assert!(split.always_train.get(0, 3));
            for f in 0..3 {
                split.training(f, &mask).check_coverage().unwrap();
            }
            let mut total = split.always_train.count();
            for f in &split.heldout {
                total += f.count();
            }
            assert_eq!(total, mask.count());
        }
        assert!(matches!(
            make_cv_split(&MaskMatrix::full(1, 3), 2, 0),
            Err(Error::TooSparse { .. })
        ));
    }

    #[test]
    fn labels_parse() {
        assert_eq!(parse_labels("a\nb # c\n1,2 3\n").unwrap(), vec!["a", "b", "1", "2", "3"]);
        assert!(parse_labels("# only comment\n").is_err());
    }
}
