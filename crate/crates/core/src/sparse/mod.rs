//! Compressed sparse row matrices and the matrix pair `(A, B)`.

mod market;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::inner::BtbSolver;

pub use market::{parse_matrix_market, read_matrix_market};

/// Real sparse matrix in CSR layout. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCsr {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseCsr {
    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed
    /// and explicit zeros produced by summation are kept.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut entries = triplets.to_vec();
        for &(i, j, v) in &entries {
            if i >= rows || j >= cols {
                return Err(Error::Dimension(format!(
                    "entry ({i}, {j}) outside a {rows}x{cols} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(Error::NonFinite);
            }
        }
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in entries {
            if last == Some((i, j)) {
                *values.last_mut().expect("previous entry exists") += v;
                continue;
            }
            col_idx.push(j);
            values.push(v);
            row_ptr[i + 1] += 1;
            last = Some((i, j));
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self { rows, cols, row_ptr, col_idx, values })
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut trip = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    trip.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &trip).expect("dense entries are in range")
    }

    pub fn identity(n: usize) -> Self {
        let trip: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, n, &trip).expect("diagonal entries are in range")
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let trip: Vec<_> = diag.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        Self::from_triplets(n, n, &trip).expect("diagonal entries are in range")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates over the stored entries of row `i` as `(col, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    /// `y = M x`
    pub fn spmv(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.cols {
            return Err(Error::Dimension(format!(
                "spmv: matrix has {} columns, vector has {} entries",
                self.cols,
                x.len()
            )));
        }
        Ok(self.mul(x))
    }

    /// `x = M^T y`, computed by scattering rows without forming the transpose.
    pub fn spmv_t(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.rows {
            return Err(Error::Dimension(format!(
                "spmv_t: matrix has {} rows, vector has {} entries",
                self.rows,
                y.len()
            )));
        }
        Ok(self.mul_t(y))
    }

    pub(crate) fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.cols);
        DVector::from_fn(self.rows, |i, _| self.row(i).map(|(j, v)| v * x[j]).sum())
    }

    pub(crate) fn mul_t(&self, y: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = DVector::zeros(self.cols);
        for i in 0..self.rows {
            let yi = y[i];
            if yi == 0.0 {
                continue;
            }
            for (j, v) in self.row(i) {
                out[j] += v * yi;
            }
        }
        out
    }

    /// Maximum absolute column sum.
    pub fn one_norm(&self) -> f64 {
        let mut sums = vec![0.0f64; self.cols];
        for (&j, &v) in self.col_idx.iter().zip(&self.values) {
            sums[j] += v.abs();
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    pub fn transpose(&self) -> SparseCsr {
        let trip: Vec<_> = (0..self.rows)
            .flat_map(|i| self.row(i).map(move |(j, v)| (j, i, v)))
            .collect();
        Self::from_triplets(self.cols, self.rows, &trip).expect("transposed entries are in range")
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }
}

/// The `n x n` tridiagonal matrix with 3 on the diagonal and 1 off it.
pub fn make_t(n: usize) -> Result<SparseCsr> {
    if n == 0 {
        return Err(Error::Config("T(n) needs n >= 1".into()));
    }
    let mut trip = Vec::with_capacity(3 * n);
    for i in 0..n {
        if i > 0 {
            trip.push((i, i - 1, 1.0));
        }
        trip.push((i, i, 3.0));
        if i + 1 < n {
            trip.push((i, i + 1, 1.0));
        }
    }
    SparseCsr::from_triplets(n, n, &trip)
}

/// The `(n-1) x n` first-difference matrix with rows `e_i - e_{i+1}`.
pub fn make_d(n: usize) -> Result<SparseCsr> {
    if n < 2 {
        return Err(Error::Config("D(n) needs n >= 2".into()));
    }
    let mut trip = Vec::with_capacity(2 * (n - 1));
    for i in 0..n - 1 {
        trip.push((i, i, 1.0));
        trip.push((i, i + 1, -1.0));
    }
    SparseCsr::from_triplets(n - 1, n, &trip)
}

/// A regular pair `(A, B)` sharing the column dimension `n`.
///
/// Caches the 1-norms, optional explicit transposes, the `B^T B` solver, and
/// counts every product with `A`, `A^T`, `B`, `B^T`.
#[derive(Debug)]
pub struct MatrixPair {
    a: SparseCsr,
    b: SparseCsr,
    norm1_a: f64,
    norm1_b: f64,
    transposes: OnceLock<(SparseCsr, SparseCsr)>,
    btb: OnceLock<std::result::Result<BtbSolver, (usize, f64)>>,
    external_btb: Option<BtbSolver>,
    matvecs: AtomicU64,
}

impl MatrixPair {
    pub fn new(a: SparseCsr, b: SparseCsr) -> Result<Self> {
        if a.cols() != b.cols() {
            return Err(Error::Dimension(format!(
                "A has {} columns but B has {}",
                a.cols(),
                b.cols()
            )));
        }
        if a.rows() + b.rows() < a.cols() {
            return Err(Error::Dimension(format!(
                "need m + p >= n, got m = {}, p = {}, n = {}",
                a.rows(),
                b.rows(),
                a.cols()
            )));
        }
        let norm1_a = a.one_norm();
        let norm1_b = b.one_norm();
        Ok(Self {
            a,
            b,
            norm1_a,
            norm1_b,
            transposes: OnceLock::new(),
            btb: OnceLock::new(),
            external_btb: None,
            matvecs: AtomicU64::new(0),
        })
    }

    /// Replaces the built-in `B^T B` factorization by a caller-supplied solve.
    pub fn with_btb_solver(mut self, solver: BtbSolver) -> Self {
        self.external_btb = Some(solver);
        self
    }

    pub fn a(&self) -> &SparseCsr {
        &self.a
    }

    pub fn b(&self) -> &SparseCsr {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.a.cols()
    }

    pub fn m(&self) -> usize {
        self.a.rows()
    }

    pub fn p(&self) -> usize {
        self.b.rows()
    }

    pub fn norm1_a(&self) -> f64 {
        self.norm1_a
    }

    pub fn norm1_b(&self) -> f64 {
        self.norm1_b
    }

    /// Number of products with `A`, `A^T`, `B` or `B^T` performed so far.
    pub fn matvec_count(&self) -> u64 {
        self.matvecs.load(Ordering::Relaxed)
    }

    /// Builds explicit transposes so that `A^T`/`B^T` products become row gathers.
    pub fn cache_transposes(&self) {
        self.transposes.get_or_init(|| (self.a.transpose(), self.b.transpose()));
    }

    pub fn has_cached_transposes(&self) -> bool {
        self.transposes.get().is_some()
    }

    fn tick(&self) {
        self.matvecs.fetch_add(1, Ordering::Relaxed);
    }

    pub fn a_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        self.tick();
        self.a.mul(x)
    }

    pub fn b_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        self.tick();
        self.b.mul(x)
    }

    pub fn at_mul(&self, y: &DVector<f64>) -> DVector<f64> {
        self.tick();
        match self.transposes.get() {
            Some((at, _)) => at.mul(y),
            None => self.a.mul_t(y),
        }
    }

    pub fn bt_mul(&self, y: &DVector<f64>) -> DVector<f64> {
        self.tick();
        match self.transposes.get() {
            Some((_, bt)) => bt.mul(y),
            None => self.b.mul_t(y),
        }
    }

    /// `A^T A x`
    pub fn ata_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        self.at_mul(&self.a_mul(x))
    }

    /// `B^T B x`
    pub fn btb_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        self.bt_mul(&self.b_mul(x))
    }

    /// The `B^T B` solver, factoring on first use.
    pub fn btb_solver(&self) -> Result<&BtbSolver> {
        if let Some(s) = &self.external_btb {
            return Ok(s);
        }
        self.btb
            .get_or_init(|| BtbSolver::factor(&self.b))
            .as_ref()
            .map_err(|&(index, pivot)| Error::RankDeficientB { index, pivot })
    }

    /// `(B^T B)^{-1} w`
    pub fn btb_solve(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        if w.len() != self.n() {
            return Err(Error::Dimension(format!(
                "btb_solve: vector has {} entries, expected {}",
                w.len(),
                self.n()
            )));
        }
        Ok(self.btb_solver()?.solve(w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn spmv_small_cases() {
        let i3 = SparseCsr::identity(3);
        assert_eq!(i3.spmv(&v(&[1.0, 2.0, 3.0])).unwrap(), v(&[1.0, 2.0, 3.0]));
        let t3 = make_t(3).unwrap();
        assert_eq!(t3.spmv(&v(&[1.0, 0.0, 0.0])).unwrap(), v(&[3.0, 1.0, 0.0]));
        assert!(matches!(t3.spmv(&v(&[1.0, 2.0])), Err(Error::Dimension(_))));
    }

    #[test]
    fn spmv_t_small_cases() {
        let m = SparseCsr::from_triplets(2, 2, &[(0, 1, 1.0)]).unwrap();
        assert_eq!(m.spmv_t(&v(&[1.0, 0.0])).unwrap(), v(&[0.0, 1.0]));
        let d3 = make_d(3).unwrap();
        assert_eq!(d3.spmv_t(&v(&[1.0, 1.0])).unwrap(), v(&[1.0, 0.0, -1.0]));
        assert!(d3.spmv_t(&v(&[1.0, 1.0, 1.0])).is_err());
    }

    #[test]
    fn one_norm_cases() {
        let m = SparseCsr::from_dense(&nalgebra::dmatrix![1.0, -2.0; 3.0, 4.0]);
        assert_eq!(m.one_norm(), 6.0);
        assert_eq!(SparseCsr::identity(5).one_norm(), 1.0);
        assert_eq!(make_t(4).unwrap().one_norm(), 5.0);
    }

    #[test]
    fn generators_match_displayed_matrices() {
        assert_eq!(make_t(1).unwrap().to_dense(), nalgebra::dmatrix![3.0]);
        assert_eq!(
            make_t(3).unwrap().to_dense(),
            nalgebra::dmatrix![3.0, 1.0, 0.0; 1.0, 3.0, 1.0; 0.0, 1.0, 3.0]
        );
        assert_eq!(make_d(2).unwrap().to_dense(), nalgebra::dmatrix![1.0, -1.0]);
        assert_eq!(
            make_d(3).unwrap().to_dense(),
            nalgebra::dmatrix![1.0, -1.0, 0.0; 0.0, 1.0, -1.0]
        );
        assert!(make_t(0).is_err());
        assert!(make_d(1).is_err());
    }

    #[test]
    fn d_annihilates_ones_exactly() {
        for n in [2, 5, 17] {
            let y = make_d(n).unwrap().spmv(&DVector::from_element(n, 1.0)).unwrap();
            assert!(y.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn t_spectrum_closed_form() {
        let n = 100;
        let t = make_t(n).unwrap().to_dense();
        let eig = nalgebra::SymmetricEigen::new(t);
        let mut got: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        got.sort_by(f64::total_cmp);
        let mut want: Vec<f64> = (1..=n)
            .map(|k| 3.0 + 2.0 * (k as f64 * std::f64::consts::PI / (n as f64 + 1.0)).cos())
            .collect();
        want.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
            assert!(*g > 1.0 && *g < 5.0);
        }
    }

    #[test]
    fn duplicates_are_summed() {
        let m = SparseCsr::from_triplets(2, 2, &[(0, 0, 0.5), (1, 1, 1.0), (0, 0, 0.5)]).unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.to_dense(), nalgebra::dmatrix![1.0, 0.0; 0.0, 1.0]);
    }

    #[test]
    fn pair_counts_and_caches() {
        let pair = MatrixPair::new(make_t(4).unwrap(), make_d(4).unwrap()).unwrap();
        let x = DVector::from_element(4, 1.0);
        let y1 = pair.ata_mul(&x);
        assert_eq!(pair.matvec_count(), 2);
        pair.cache_transposes();
        let y2 = pair.ata_mul(&x);
        assert_eq!(y1, y2);
        assert_eq!(pair.matvec_count(), 4);
        assert_eq!(pair.norm1_a(), 5.0);
        assert_eq!(pair.norm1_b(), 2.0);
        assert!(MatrixPair::new(make_t(3).unwrap(), make_t(4).unwrap()).is_err());
    }

    fn random_sparse() -> impl Strategy<Value = (SparseCsr, Vec<f64>, Vec<f64>)> {
        (1usize..50, 1usize..40).prop_flat_map(|(m, n)| {
            (
                proptest::collection::vec((0..m, 0..n, -5.0f64..5.0), 0..200),
                proptest::collection::vec(-1.0f64..1.0, n),
                proptest::collection::vec(-1.0f64..1.0, m),
            )
                .prop_map(move |(t, x, y)| (SparseCsr::from_triplets(m, n, &t).unwrap(), x, y))
        })
    }

    proptest! {
        #[test]
        fn products_match_dense((m, x, y) in random_sparse()) {
            let dense = m.to_dense();
            let x = DVector::from_vec(x);
            let y = DVector::from_vec(y);
            let want = &dense * &x;
            let got = m.spmv(&x).unwrap();
            prop_assert!((got - &want).norm() <= 1e-14 * (1.0 + dense.norm() * x.norm()));
            let want_t = dense.tr_mul(&y);
            let got_t = m.spmv_t(&y).unwrap();
            prop_assert!((got_t - &want_t).norm() <= 1e-14 * (1.0 + dense.norm() * y.norm()));
            let tt = m.transpose().spmv(&y).unwrap();
            prop_assert!((tt - want_t).norm() <= 1e-14 * (1.0 + dense.norm() * y.norm()));
        }
    }
}
