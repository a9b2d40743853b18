//! Reference implementations written independently of the library, used as
//! oracles by the integration suites.
#![allow(dead_code)]

use rprnmf::{DenseMatrix, MaskMatrix};

pub type Rows = Vec<Vec<f64>>;

const EPS: f64 = 1e-12;

pub fn rows_of(m: &DenseMatrix) -> Rows {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn mul(a: &Rows, b: &Rows) -> Rows {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn tr(a: &Rows) -> Rows {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

fn ratio(v: &Rows, wh: &Rows) -> Rows {
    v.iter()
        .zip(wh)
        .map(|(vr, whr)| vr.iter().zip(whr).map(|(x, y)| x / y.max(EPS)).collect())
        .collect()
}

/// Classic multiplicative NMF step, W then H.
pub fn lee_seung_step(v: &Rows, w: &mut Rows, h: &mut Rows, divergence: bool) {
    let (n, k, m) = (w.len(), h.len(), h[0].len());
    if divergence {
        let num = mul(&ratio(v, &mul(w, h)), &tr(h));
        let row_sums: Vec<f64> = h.iter().map(|r| r.iter().sum()).collect();
        for a in 0..n {
            for b in 0..k {
                w[a][b] *= num[a][b] / row_sums[b].max(EPS);
            }
        }
        let num = mul(&tr(w), &ratio(v, &mul(w, h)));
        let col_sums: Vec<f64> = (0..k).map(|b| w.iter().map(|r| r[b]).sum()).collect();
        for a in 0..k {
            for b in 0..m {
                h[a][b] *= num[a][b] / col_sums[a].max(EPS);
            }
        }
    } else {
        let num = mul(v, &tr(h));
        let den = mul(w, &mul(h, &tr(h)));
        for a in 0..n {
            for b in 0..k {
                w[a][b] *= num[a][b] / den[a][b].max(EPS);
            }
        }
        let num = mul(&tr(w), v);
        let den = mul(&mul(&tr(w), w), h);
        for a in 0..k {
            for b in 0..m {
                h[a][b] *= num[a][b] / den[a][b].max(EPS);
            }
        }
    }
}

pub fn max_diff(a: &DenseMatrix, b: &Rows) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, row) in b.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            worst = worst.max((a.get(i, j) - x).abs());
        }
    }
    worst
}

pub fn rmse_loop(v: &DenseMatrix, wh: &DenseMatrix, mask: &MaskMatrix) -> f64 {
    let mut sum = 0.0;
    let mut count = 0.0;
    for i in 0..v.rows() {
        for j in 0..v.cols() {
            if mask.get(i, j) {
                let d = v.get(i, j) - wh.get(i, j);
                sum += d * d;
                count += 1.0;
            }
        }
    }
    (sum / count).sqrt()
}

/// Micro F1 with per-row mean-of-observed thresholds; zero when undefined.
pub fn f1_loop(truth: &DenseMatrix, pred: &DenseMatrix, observed: &MaskMatrix, heldout: &MaskMatrix) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for i in 0..truth.rows() {
        let mut s = 0.0;
        let mut c = 0.0;
        for j in 0..truth.cols() {
            if observed.get(i, j) {
                s += truth.get(i, j);
                c += 1.0;
            }
        }
        let t = s / c;
        for j in 0..truth.cols() {
            if !heldout.get(i, j) {
                continue;
            }
            let real = truth.get(i, j) > t;
            let guess = pred.get(i, j) > t;
            if real && guess {
                tp += 1.0;
            } else if guess {
                fp += 1.0;
            } else if real {
                fn_ += 1.0;
            }
        }
    }
    let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// NMI from the entropy formula, normalised by the larger entropy.
pub fn nmi_direct(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let ka = *a.iter().max().unwrap();
    let kb = *b.iter().max().unwrap();
    let mut joint = vec![vec![0.0; kb + 1]; ka + 1];
    let mut pa = vec![0.0; ka + 1];
    let mut pb = vec![0.0; kb + 1];
    for (&x, &y) in a.iter().zip(b) {
        joint[x][y] += 1.0;
        pa[x] += 1.0;
        pb[y] += 1.0;
    }
    let scale = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x /= n);
    joint.iter_mut().for_each(scale);
    scale(&mut pa);
    scale(&mut pb);
    let h = |p: &[f64]| -> f64 { p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum() };
    let mut mi = 0.0;
    for x in 0..=ka {
        for y in 0..=kb {
            if joint[x][y] > 0.0 {
                mi += joint[x][y] * (joint[x][y] / (pa[x] * pb[y])).ln();
            }
        }
    }
    let d = h(&pa).max(h(&pb));
    if d == 0.0 {
        1.0
    } else {
        mi / d
    }
}

fn permutations(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == items.len() {
        out.push(items.clone());
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permutations(items, k + 1, out);
        items.swap(k, i);
    }
}

/// Best accuracy over every injective relabelling of `pred` (labels 1-based).
pub fn acc_brute_force(pred: &[usize], truth: &[usize]) -> f64 {
    let kp = *pred.iter().max().unwrap();
    let kt = *truth.iter().max().unwrap();
    let size = kp.max(kt);
    let mut perms = Vec::new();
    permutations(&mut (1..=size).collect(), 0, &mut perms);
    let mut best = 0usize;
    for perm in perms {
        let hits = pred.iter().zip(truth).filter(|(&p, &t)| perm[p - 1] == t).count();
        best = best.max(hits);
    }
    best as f64 / pred.len() as f64
}
