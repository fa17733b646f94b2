//! Solves with `B^T B` for the CPF-harmonic extraction.
//!
//! `B^T B` is assembled sparsely, reordered with reverse Cuthill-McKee and
//! factored in envelope (skyline) form, so banded `B` costs `O(n)` per solve
//! and a dense `B` degrades gracefully to a dense Cholesky.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::sparse::SparseCsr;

/// Relative pivot floor below which `B^T B` is declared singular.
const PIVOT_FLOOR: f64 = 1e-13;

pub type ExternalSolve = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Applies `(B^T B)^{-1}`.
#[derive(Clone)]
pub enum BtbSolver {
    Envelope(EnvelopeCholesky),
    /// Caller-supplied solve, e.g. a sparse direct solver outside this crate.
    External(ExternalSolve),
}

impl fmt::Debug for BtbSolver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BtbSolver::Envelope(c) => f.debug_tuple("Envelope").field(&c.n).finish(),
            BtbSolver::External(_) => f.write_str("External(..)"),
        }
    }
}

impl BtbSolver {
    /// Factors `B^T B`; on failure returns the (original) index and value of
    /// the offending pivot.
    pub fn factor(b: &SparseCsr) -> Result<Self, (usize, f64)> {
        EnvelopeCholesky::factor(&gram(b)).map(BtbSolver::Envelope)
    }

    pub fn solve(&self, w: &DVector<f64>) -> DVector<f64> {
        match self {
            BtbSolver::Envelope(c) => c.solve(w),
            BtbSolver::External(f) => f(w),
        }
    }
}

/// `B^T B` as a symmetric sparse matrix.
fn gram(b: &SparseCsr) -> SparseCsr {
    let mut trip = Vec::new();
    for i in 0..b.rows() {
        let row: Vec<(usize, f64)> = b.row(i).collect();
        for &(j, vj) in &row {
            for &(k, vk) in &row {
                trip.push((j, k, vj * vk));
            }
        }
    }
    SparseCsr::from_triplets(b.cols(), b.cols(), &trip).expect("Gram entries are in range")
}

/// Reverse Cuthill-McKee ordering of a structurally symmetric matrix.
/// Returns `perm` with `perm[new] = old`.
pub(crate) fn reverse_cuthill_mckee(m: &SparseCsr) -> Vec<usize> {
    let n = m.rows();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| m.row(i).map(|(j, _)| j).filter(|&j| j != i).collect())
        .collect();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            next.sort_by_key(|&u| (degree[u], u));
            for u in next {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

/// Cholesky factor stored row-wise over each row's envelope.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    n: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    /// first nonzero column of each row of `L` (permuted indexing)
    first: Vec<usize>,
    /// offsets into `vals` for each row
    start: Vec<usize>,
    vals: Vec<f64>,
}

impl EnvelopeCholesky {
    pub fn factor(c: &SparseCsr) -> Result<Self, (usize, f64)> {
        let n = c.rows();
        let perm = reverse_cuthill_mckee(c);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for old_i in 0..n {
            let i = inv[old_i];
            for (old_j, _) in c.row(old_i) {
                let j = inv[old_j];
                if j < i {
                    first[i] = first[i].min(j);
                }
            }
        }
        let mut start = vec![0usize; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i] + 1);
        }
        let mut vals = vec![0.0; start[n]];
        let mut diag_max = 0.0f64;
        for old_i in 0..n {
            let i = inv[old_i];
            for (old_j, v) in c.row(old_i) {
                let j = inv[old_j];
                if j <= i {
                    vals[start[i] + j - first[i]] = v;
                }
                if j == i {
                    diag_max = diag_max.max(v.abs());
                }
            }
        }
        let floor = PIVOT_FLOOR * diag_max;
        for i in 0..n {
            let fi = first[i];
            for j in fi..=i {
                let fj = first[j];
                let lo = fi.max(fj);
                let mut s = vals[start[i] + j - fi];
                for k in lo..j {
                    s -= vals[start[i] + k - fi] * vals[start[j] + k - fj];
                }
                if j < i {
                    vals[start[i] + j - fi] = s / vals[start[j] + j - fj];
                } else {
                    if !(s > floor) {
                        return Err((perm[i], s));
                    }
                    vals[start[i] + i - fi] = s.sqrt();
                }
            }
        }
        Ok(Self { n, perm, first, start, vals })
    }

    fn l(&self, i: usize, j: usize) -> f64 {
        self.vals[self.start[i] + j - self.first[i]]
    }

    pub fn solve(&self, w: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let mut z: Vec<f64> = self.perm.iter().map(|&old| w[old]).collect();
        for i in 0..n {
            let mut s = z[i];
            for k in self.first[i]..i {
                s -= self.l(i, k) * z[k];
            }
            z[i] = s / self.l(i, i);
        }
        for i in (0..n).rev() {
            z[i] /= self.l(i, i);
            let zi = z[i];
            for k in self.first[i]..i {
                z[k] -= self.l(i, k) * zi;
            }
        }
        let mut out = DVector::zeros(n);
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = z[new];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::{make_d, make_t};

    #[test]
    fn identity_solve() {
        let s = BtbSolver::factor(&SparseCsr::identity(4)).unwrap();
        let w = DVector::from_row_slice(&[1.0, -2.0, 3.0, 0.5]);
        assert_eq!(s.solve(&w), w);
    }

    #[test]
    fn t_squared_forward_multiply_oracle() {
        let t = make_t(3).unwrap();
        let x = DVector::from_row_slice(&[1.0, 2.0, 3.0]);
        let w = t.mul_t(&t.mul(&x));
        let got = BtbSolver::factor(&t).unwrap().solve(&w);
        assert!((got - x).norm() <= 1e-13);
    }

    #[test]
    fn rank_deficient_d_is_rejected() {
        assert!(BtbSolver::factor(&make_d(3).unwrap()).is_err());
        assert!(BtbSolver::factor(&make_d(50).unwrap()).is_err());
    }

    #[test]
    fn dense_b_residual() {
        let dense = nalgebra::DMatrix::from_fn(12, 9, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0 + if i == j { 9.0 } else { 0.0 });
        let b = SparseCsr::from_dense(&dense);
        let s = BtbSolver::factor(&b).unwrap();
        let w = DVector::from_fn(9, |i, _| (i as f64).sin());
        let out = s.solve(&w);
        let back = b.mul_t(&b.mul(&out));
        assert!((back - &w).norm() <= 1e-12 * w.norm());
    }

    #[test]
    fn rcm_is_a_permutation() {
        let t = make_t(20).unwrap();
        let mut p = reverse_cuthill_mckee(&t);
        p.sort();
        assert_eq!(p, (0..20).collect::<Vec<_>>());
    }
}
