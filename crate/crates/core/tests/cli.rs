use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rprnmf::io::{read_dense_csv, read_report, write_dense_csv};
use rprnmf::DenseMatrix;
use tempfile::TempDir;

fn rprnmf(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rprnmf"))
        .args(args)
        .current_dir(dir)
        .env_remove("RPRNMF_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn low_rank(n: usize, m: usize, k: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = DenseMatrix::from_fn(n, k, |_, _| rng.gen_range(0.1..1.0));
    let h = DenseMatrix::from_fn(k, m, |_, _| rng.gen_range(0.1..1.0));
    w.matmul(&h).unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn factorize_writes_report_and_factors() {
    let dir = TempDir::new().unwrap();
    let v = low_rank(12, 10, 3, 1);
    write_dense_csv(dir.path().join("v.csv"), &v).unwrap();
    write(&dir, "c.txt", "H 1 2 3\nH 4 5 6\nW 1 2 3\n");
    let out = rprnmf(
        &[
            "factorize", "--matrix", "v.csv", "--constraints", "c.txt", "--k", "3", "--lambda-h", "0.5", "--lambda-w", "0.5",
            "--seed", "3", "--out", "report.json", "--save-factors", "factors",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("iterations:"));
    assert!(text.contains("csr:"));

    let doc = read_report(dir.path().join("report.json")).unwrap();
    assert_eq!(doc.seed, 3);
    assert_eq!(doc.objective_trace.len(), doc.iterations + 1);
    assert!(doc.metrics.msl.is_some());
    let w = read_dense_csv(dir.path().join("factors/w.csv")).unwrap();
    let h = read_dense_csv(dir.path().join("factors/h.csv")).unwrap();
    assert_eq!((w.shape(), h.shape()), ((12, 3), (3, 10)));
}

#[test]
fn factorize_is_deterministic() {
    let dir = TempDir::new().unwrap();
    write_dense_csv(dir.path().join("v.csv"), &low_rank(8, 8, 2, 2)).unwrap();
    for name in ["a", "b"] {
        let out = rprnmf(
            &["factorize", "--matrix", "v.csv", "--k", "2", "--measure", "div", "--seed", "9", "--save-factors", name],
            dir.path(),
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for file in ["w.csv", "h.csv"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}

#[test]
fn missing_constraints_file_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    write_dense_csv(dir.path().join("v.csv"), &low_rank(4, 4, 2, 3)).unwrap();
    let out = rprnmf(&["factorize", "--matrix", "v.csv", "--k", "2", "--constraints", "nowhere.txt"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nowhere.txt"), "{}", stderr(&out));
}

#[test]
fn bad_flag_exits_with_usage_code() {
    let dir = TempDir::new().unwrap();
    let out = rprnmf(&["factorize", "--no-such-flag"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ragged_matrix_reports_the_line() {
    let dir = TempDir::new().unwrap();
    write(&dir, "v.csv", "1,2,3\n4,5\n");
    let out = rprnmf(&["factorize", "--matrix", "v.csv", "--k", "1"], dir.path());
    assert!(!out.status.success());
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn convert_reproduces_hand_traces() {
    let dir = TempDir::new().unwrap();
    write(&dir, "chain.txt", "H 2 1 3\nH 3 2 4\n");
    let out = rprnmf(
        &["convert", "--constraints", "chain.txt", "--to", "weights", "--mins", "0.1", "--maxs", "0.9", "--out", "w.csv"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("max depth: 3"));
    let w = read_dense_csv(dir.path().join("w.csv")).unwrap();
    assert!((w.get(0, 1) - 0.9).abs() < 1e-12);
    assert!((w.get(1, 2) - 0.5).abs() < 1e-12);
    assert!((w.get(2, 3) - 0.1).abs() < 1e-12);
    assert_eq!(w.get(3, 3), 1.0);

    write(&dir, "pairs.txt", "H 1 2 3\nH 4 5 6\n");
    let out = rprnmf(&["convert", "--constraints", "pairs.txt", "--to", "labels", "--out", "l.csv"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("classes: 2"));
    let l = read_dense_csv(dir.path().join("l.csv")).unwrap();
    assert_eq!(l.row(0), &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    assert_eq!(l.row(1), &[0.0, 0.0, 0.0, 1.0, 1.0, 0.0]);

    write(&dir, "empty.txt", "# nothing\n");
    let out = rprnmf(&["convert", "--constraints", "empty.txt", "--to", "labels", "--out", "e.csv"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("classes: 0"));
}

#[test]
fn crossvalidate_recovers_a_low_rank_toy() {
    let dir = TempDir::new().unwrap();
    let v = low_rank(10, 8, 3, 4);
    // Ratings-style file with 1-based ids; every cell present.
    let mut text = String::new();
    for i in 0..10 {
        for j in 0..8 {
            text.push_str(&format!("{}::{}::{}::0\n", i + 1, j + 1, v.get(i, j)));
        }
    }
    write(&dir, "toy.dat", &text);
    let out = rprnmf(
        &[
            "crossvalidate", "--ratings", "toy.dat", "--k", "3", "--measure", "euc", "--lambda-h", "0", "--folds", "5",
            "--max-iters", "3000", "--rel-tol", "0", "--out", "cv.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("cv.csv")).unwrap();
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(csv.as_bytes());
    let headers = reader.headers().unwrap().clone();
    let col = headers.iter().position(|h| h == "rmse").unwrap();
    let alg = headers.iter().position(|h| h == "algorithm").unwrap();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.unwrap();
        if &record[alg] == "NMF" {
            let rmse: f64 = record[col].parse().unwrap();
            assert!(rmse <= 0.05, "held-out rmse {rmse}");
        }
        rows += 1;
    }
    assert!(rows >= 5);
    assert!(csv.lines().last().unwrap().starts_with("# manifest-sha256="));
}

#[test]
fn extract_constraints_writes_triples() {
    let dir = TempDir::new().unwrap();
    write(&dir, "labels.txt", "a\na\na\nb\nb\nb\n");
    let out = rprnmf(
        &["extract-constraints", "--labels", "labels.txt", "--target", "h", "--limit", "4", "--out", "c.txt"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let sets = rprnmf::constraints::read_constraints(dir.path().join("c.txt")).unwrap();
    let set = sets.h.unwrap();
    assert!(!set.is_empty() && set.len() <= 4);
    let class = |i: usize| if i <= 3 { 'a' } else { 'b' };
    for t in set.triples() {
        assert_eq!(class(t.q), class(t.r));
        assert_ne!(class(t.q), class(t.s));
    }
}

#[test]
fn syn1_and_param_sweep_write_rows_with_footer() {
    let dir = TempDir::new().unwrap();
    let out = rprnmf(
        &[
            "syn1", "--n", "30", "--m", "30", "--k", "4", "--max-groups", "2", "--reps", "2", "--max-iters", "50", "--out",
            "syn1.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(dir.path().join("syn1.csv")).unwrap();
    // header + 2 groups x 2 reps x 2 measures x 2 algorithms + footer
    assert_eq!(text.lines().count(), 1 + 16 + 1);
    assert!(text.lines().last().unwrap().starts_with("# manifest-sha256="));

    let out = rprnmf(
        &[
            "param-sweep", "--n", "30", "--m", "30", "--k", "4", "--lambdas", "0.5,2", "--per-side", "4", "--reps", "2",
            "--measure", "div", "--max-iters", "50", "--out", "sweep.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 4 + 1);
}

#[test]
fn same_seed_gives_identical_results_files() {
    let dir = TempDir::new().unwrap();
    for name in ["a.csv", "b.csv"] {
        let out = rprnmf(
            &[
                "syn1", "--n", "24", "--m", "24", "--k", "3", "--max-groups", "1", "--reps", "1", "--max-iters", "30",
                "--seed", "11", "--out", name,
            ],
            dir.path(),
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let strip = |name: &str| -> Vec<String> {
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let headers = reader.headers().unwrap().clone();
        let time = headers.iter().position(|h| h == "wall_time_s").unwrap();
        reader
            .records()
            .map(|r| {
                let r = r.unwrap();
                r.iter().enumerate().filter(|(i, _)| *i != time).map(|(_, f)| f).collect::<Vec<_>>().join(",")
            })
            .collect()
    };
    assert_eq!(strip("a.csv"), strip("b.csv"));
}

/// Runs only when `RPRNMF_MOVIELENS` points at a MovieLens-1M `ratings.dat`.
#[test]
fn movielens_shape_and_density() {
    let Ok(path) = std::env::var("RPRNMF_MOVIELENS") else {
        eprintln!("RPRNMF_MOVIELENS not set; skipping");
        return;
    };
    let table = rprnmf::io::read_ratings(&path, rprnmf::io::RatingsFormat::DoubleColon).unwrap();
    assert_eq!((table.users(), table.items()), (6040, 3706));
    assert!((table.density() - 0.0447).abs() <= 0.0005, "density {}", table.density());
    assert_eq!(table.duplicates, 0);
}
