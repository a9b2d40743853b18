//! Approximation, recommendation and clustering metrics.

use pathfinding::prelude::{kuhn_munkres, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{frobenius_sq_diff, matrix_divergence, DenseMatrix, MaskMatrix};

/// Cluster labels in `1..=k`, one per point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    labels: Vec<usize>,
    k: usize,
}

impl ClusterAssignment {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l == 0 || l > k) {
            return Err(Error::IndexOutOfRange { index: bad, bound: k });
        }
        Ok(Self { labels, k })
    }

    /// Builds an assignment from arbitrary label values, numbering them in
    /// order of first appearance.
    pub fn from_raw<T: PartialEq + Clone>(raw: &[T]) -> Self {
        let mut seen: Vec<T> = Vec::new();
        let labels = raw
            .iter()
            .map(|x| match seen.iter().position(|s| s == x) {
                Some(p) => p + 1,
                None => {
                    seen.push(x.clone());
                    seen.len()
                }
            })
            .collect();
        Self { labels, k: seen.len() }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Mean squared loss `‖V − WH‖² / (N·M)`.
pub fn msl(v: &DenseMatrix, w: &DenseMatrix, h: &DenseMatrix) -> Result<f64> {
    let wh = w.matmul(h)?;
    Ok(frobenius_sq_diff(v, &wh, None)? / (v.rows() * v.cols()) as f64)
}

/// Mean divergence `D(V‖WH) / (N·M)`.
pub fn md(v: &DenseMatrix, w: &DenseMatrix, h: &DenseMatrix) -> Result<f64> {
    let wh = w.matmul(h)?;
    Ok(matrix_divergence(v, &wh, None)? / (v.rows() * v.cols()) as f64)
}

/// Root mean squared error over the entries selected by `mask`.
pub fn rmse(v: &DenseMatrix, wh: &DenseMatrix, mask: &MaskMatrix) -> Result<f64> {
    let n = mask.count();
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok((frobenius_sq_diff(v, wh, Some(mask))? / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when precision + recall is zero and F1 was reported as 0.
    pub undefined: bool,
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_negative: usize,
}

/// Mean of each user's (row's) observed ratings.
pub fn user_thresholds(ratings: &DenseMatrix, observed: &MaskMatrix) -> Vec<Option<f64>> {
    (0..ratings.rows())
        .map(|i| {
            let (sum, n) = (0..ratings.cols())
                .filter(|&j| observed.get(i, j))
                .fold((0.0, 0usize), |(s, n), j| (s + ratings.get(i, j), n + 1));
            (n > 0).then(|| sum / n as f64)
        })
        .collect()
}

/// Micro-averaged F1 of "rating above the user's mean observed rating"
/// recommendations over the held-out cells.
pub fn f1_score(truth: &DenseMatrix, predicted: &DenseMatrix, observed: &MaskMatrix, heldout: &MaskMatrix) -> Result<F1Report> {
    truth.same_shape(predicted)?;
    observed.matches(truth)?;
    heldout.matches(truth)?;
    let thresholds = user_thresholds(truth, observed);
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (i, j) in heldout.observed() {
        let t = thresholds[i].ok_or(Error::NoObservedRatings { user: i + 1 })?;
        match (truth.get(i, j) > t, predicted.get(i, j) > t) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let undefined = precision + recall == 0.0;
    let f1 = if undefined { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(F1Report {
        precision,
        recall,
        f1,
        undefined,
        true_positive: tp,
        false_positive: fp,
        false_negative: fn_,
        true_negative: tn,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means on the columns of `points` with k-means++ seeding.
pub fn kmeans(points: &DenseMatrix, k: usize, seed: u64, max_iters: usize) -> Result<ClusterAssignment> {
    let n = points.cols();
    if k == 0 || k > n {
        return Err(Error::TooFewPoints { k, points: n });
    }
    let data: Vec<Vec<f64>> = (0..n).map(|j| points.col(j)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centers: Vec<Vec<f64>> = vec![data[rng.gen_range(0..n)].clone()];
    let mut nearest: Vec<f64> = data.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centers.push(data[pick].clone());
        for (d, p) in nearest.iter_mut().zip(&data) {
            *d = d.min(sq_dist(p, &data[pick]));
        }
    }

    let mut labels = vec![usize::MAX; n];
    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        for (i, p) in data.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| sq_dist(p, &centers[a]).total_cmp(&sq_dist(p, &centers[b])))
                .unwrap_or(0);
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }

        // an empty cluster takes over the point farthest from its centre
        let mut sizes = vec![0usize; k];
        for &l in &labels {
            sizes[l] += 1;
        }
        for c in 0..k {
            if sizes[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| sizes[labels[i]] > 1)
                .max_by(|&a, &b| sq_dist(&data[a], &centers[labels[a]]).total_cmp(&sq_dist(&data[b], &centers[labels[b]])));
            if let Some(far) = far {
                sizes[labels[far]] -= 1;
                labels[far] = c;
                sizes[c] = 1;
                changed = true;
            }
        }

        let dim = points.rows();
        let mut sums = vec![vec![0.0; dim]; k];
        for (p, &l) in data.iter().zip(&labels) {
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            centers[c] = sums[c].iter().map(|s| s / sizes[c] as f64).collect();
        }
        if !changed {
            break;
        }
    }
    ClusterAssignment::new(labels.into_iter().map(|l| l + 1).collect(), k)
}

/// Sum of squared distances from each point (column) to its cluster mean.
pub fn inertia(points: &DenseMatrix, assignment: &ClusterAssignment) -> f64 {
    let k = assignment.k();
    let dim = points.rows();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut sizes = vec![0usize; k];
    for (j, &l) in assignment.labels().iter().enumerate() {
        sizes[l - 1] += 1;
        for (s, x) in sums[l - 1].iter_mut().zip(points.col(j)) {
            *s += x;
        }
    }
    assignment
        .labels()
        .iter()
        .enumerate()
        .map(|(j, &l)| {
            let mean: Vec<f64> = sums[l - 1].iter().map(|s| s / sizes[l - 1] as f64).collect();
            sq_dist(&points.col(j), &mean)
        })
        .sum()
}

fn contingency(pred: &ClusterAssignment, truth: &ClusterAssignment) -> Result<Vec<Vec<usize>>> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    let mut table = vec![vec![0usize; truth.k()]; pred.k()];
    for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
        table[p - 1][t - 1] += 1;
    }
    Ok(table)
}

/// Fraction of points whose predicted cluster maps to their true class under
/// the best one-to-one mapping of cluster ids.
pub fn clustering_accuracy(pred: &ClusterAssignment, truth: &ClusterAssignment) -> Result<f64> {
    let table = contingency(pred, truth)?;
    if pred.is_empty() {
        return Ok(1.0);
    }
    let size = pred.k().max(truth.k());
    let weights = Matrix::from_fn(size, size, |(i, j)| {
        table.get(i).and_then(|row| row.get(j)).map_or(0, |&c| c as i64)
    });
    let (matched, _) = kuhn_munkres(&weights);
    Ok(matched as f64 / pred.len() as f64)
}

/// Mutual information normalised by the larger of the two entropies.
pub fn nmi(pred: &ClusterAssignment, truth: &ClusterAssignment) -> Result<f64> {
    let table = contingency(pred, truth)?;
    let n = pred.len() as f64;
    if pred.is_empty() {
        return Ok(1.0);
    }
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum::<usize>() as f64).collect();
    let cols: Vec<f64> = (0..truth.k()).map(|j| table.iter().map(|r| r[j]).sum::<usize>() as f64).collect();
    let entropy = |counts: &[f64]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| {
                let p = c / n;
                -p * p.ln()
            })
            .sum()
    };
    let (hp, ht) = (entropy(&rows), entropy(&cols));
    let denom = hp.max(ht);
    if denom == 0.0 {
        // both partitions are a single cluster
        return Ok(1.0);
    }
    let mut info = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                info += c / n * (c * n / (rows[i] * cols[j])).ln();
            }
        }
    }
    Ok((info / denom).clamp(0.0, 1.0))
}
