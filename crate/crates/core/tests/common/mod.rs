#![allow(dead_code)]

use jdgsvd::oracle::{dense_gsvd, FullGsvd};
use jdgsvd::sparse::{make_d, make_t, MatrixPair, SparseCsr};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BKind {
    T,
    Random,
    D,
}

pub struct Problem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub pair: MatrixPair,
    pub oracle: FullGsvd,
    pub kind: BKind,
}

impl Problem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, kind: BKind) -> Self {
        let oracle = dense_gsvd(&a, &b).expect("oracle");
        let pair = MatrixPair::new(SparseCsr::from_dense(&a), SparseCsr::from_dense(&b)).expect("pair");
        Self { a, b, pair, oracle, kind }
    }

    /// A fresh pair object, so product counters and caches start clean.
    pub fn fresh_pair(&self) -> MatrixPair {
        MatrixPair::new(SparseCsr::from_dense(&self.a), SparseCsr::from_dense(&self.b)).expect("pair")
    }

    /// `||(A^T A - theta^2 B^T B) x||` for dense verification.
    pub fn shifted_residual(&self, theta: f64, x: &DVector<f64>) -> f64 {
        (self.a.tr_mul(&(&self.a * x)) - self.b.tr_mul(&(&self.b * x)) * (theta * theta)).norm()
    }
}

pub fn sparse_random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, density: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| if rng.random_bool(density) { rng.random_range(-1.0..1.0) } else { 0.0 })
}

/// Random regular pair with `m <= 150` and `p, n <= 120`; the kind of `B`
/// cycles through `T(n)`, random full rank and `D(n)`.
pub fn random_problem(index: usize, seed: u64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(7919).wrapping_add(index as u64));
    let kind = [BKind::T, BKind::Random, BKind::D][index % 3];
    let n = rng.random_range(40..=115);
    let m = rng.random_range(n..=150);
    let mut a = sparse_random(&mut rng, m, n, 0.3);
    for i in 0..n.min(m) {
        a[(i, i)] += 1.0;
    }
    let b = match kind {
        BKind::T => make_t(n).unwrap().to_dense(),
        BKind::D => make_d(n).unwrap().to_dense(),
        BKind::Random => {
            let p = rng.random_range(n..=120);
            let mut b = sparse_random(&mut rng, p, n, 0.3);
            for i in 0..n {
                b[(i, i)] += 3.0;
            }
            b
        }
    };
    Problem::new(a, b, kind)
}
