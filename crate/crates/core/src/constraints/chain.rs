use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{family_distance, ConstraintSet, ConstraintTriple, FactorAxis, Measure, Target, VectorFamily};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

const MAX_ATTEMPTS: usize = 100;
const SEARCH_BUDGET: usize = 200_000;

/// Samples `n_chains` disjoint chains `dis(v1,v2) < dis(v2,v3) < …` with
/// `chain_len` distances each (so `chain_len + 1` indices and
/// `chain_len − 1` triples), all holding on `ground_truth`.
///
/// Each chain's sampled indices are reordered so that consecutive distances
/// strictly increase; index sets admitting no such ordering are resampled.
pub fn generate_chain_constraints(
    ground_truth: &DenseMatrix,
    target: Target,
    chain_len: usize,
    n_chains: usize,
    measure: Measure,
    seed: u64,
) -> Result<ConstraintSet> {
    if chain_len < 2 {
        return Err(Error::InvalidConfig(format!("chain length must be at least 2, got {chain_len}")));
    }
    let axis = FactorAxis::new(ground_truth, target);
    let points = chain_len + 1;
    let needed = points * n_chains;
    if needed > axis.count() {
        return Err(Error::InsufficientIndices {
            needed,
            available: axis.count(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<usize> = (0..axis.count()).collect();
    pool.shuffle(&mut rng);

    let mut triples = Vec::with_capacity(n_chains * (chain_len - 1));
    for _ in 0..n_chains {
        let mut attempt = 0;
        let order = loop {
            if attempt == MAX_ATTEMPTS || pool.len() < points {
                return Err(Error::ChainGenerationFailed { attempts: attempt });
            }
            attempt += 1;
            // Reshuffle on retries so a fresh index set is drawn.
            if attempt > 1 {
                pool.shuffle(&mut rng);
            }
            let candidate = &pool[pool.len() - points..];
            if let Some(order) = increasing_path(&axis, candidate, measure) {
                break order;
            }
        };
        pool.retain(|i| !order.contains(i));
        for w in order.windows(3) {
            triples.push(ConstraintTriple::new(w[1] + 1, w[0] + 1, w[2] + 1)?);
        }
    }
    Ok(ConstraintSet::new(target, triples))
}

/// Hamiltonian path over `indices` whose consecutive distances strictly
/// increase, found by depth-first search in the given order.
fn increasing_path(axis: &FactorAxis<'_>, indices: &[usize], measure: Measure) -> Option<Vec<usize>> {
    let n = indices.len();
    let mut dist = vec![0.0; n * n];
    for a in 0..n {
        for b in (a + 1)..n {
            let d = family_distance(axis, indices[a], indices[b], measure);
            dist[a * n + b] = d;
            dist[b * n + a] = d;
        }
    }

    struct Search<'d> {
        n: usize,
        dist: &'d [f64],
        used: Vec<bool>,
        path: Vec<usize>,
        budget: usize,
    }

    impl Search<'_> {
        fn extend(&mut self, last_dist: f64) -> bool {
            if self.path.len() == self.n {
                return true;
            }
            if self.budget == 0 {
                return false;
            }
            self.budget -= 1;
            let tail = *self.path.last().unwrap();
            for next in 0..self.n {
                if self.used[next] {
                    continue;
                }
                let d = self.dist[tail * self.n + next];
                if d > last_dist {
                    self.used[next] = true;
                    self.path.push(next);
                    if self.extend(d) {
                        return true;
                    }
                    self.path.pop();
                    self.used[next] = false;
                }
            }
            false
        }
    }

    let mut search = Search {
        n,
        dist: &dist,
        used: vec![false; n],
        path: Vec::with_capacity(n),
        budget: SEARCH_BUDGET,
    };
    for start in 0..n {
        search.used[start] = true;
        search.path.push(start);
        if search.extend(f64::NEG_INFINITY) {
            return Some(search.path.iter().map(|&p| indices[p]).collect());
        }
        search.path.pop();
        search.used[start] = false;
    }
    None
}
