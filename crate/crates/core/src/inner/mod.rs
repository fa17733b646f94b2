//! Correction equations and their solvers.
//!
//! The expansion vector solves (approximately)
//!
//! ```text
//! (I - Y_p X_p^T)(A^T A - rho^2 B^T B)(I - X_p Y_p^T) t = b,   t ⟂ Y_p
//! ```
//!
//! where `X_p = [X_c, x]`, `Y_p = [Y_c, y]` are bi-orthogonal. The operator
//! is symmetric, so MINRES applies.

mod btb;
mod minres;

use nalgebra::{DMatrix, DVector};

pub use btb::{BtbSolver, EnvelopeCholesky, ExternalSolve};
pub use minres::{minres as minres_raw, MinresOutcome};

use crate::error::{Error, Result};
use crate::sparse::MatrixPair;

/// The projected shifted operator of the correction equation.
#[derive(Debug, Clone)]
pub struct CorrectionOperator<'a> {
    pair: &'a MatrixPair,
    rho: f64,
    xp: DMatrix<f64>,
    yp: DMatrix<f64>,
}

impl<'a> CorrectionOperator<'a> {
    pub fn new(pair: &'a MatrixPair, rho: f64, xp: DMatrix<f64>, yp: DMatrix<f64>) -> Result<Self> {
        let n = pair.n();
        if xp.nrows() != n || yp.nrows() != n || xp.ncols() != yp.ncols() {
            return Err(Error::Dimension(format!(
                "X_p is {}x{}, Y_p is {}x{}, n = {n}",
                xp.nrows(),
                xp.ncols(),
                yp.nrows(),
                yp.ncols()
            )));
        }
        Ok(Self { pair, rho, xp, yp })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn xp(&self) -> &DMatrix<f64> {
        &self.xp
    }

    pub fn yp(&self) -> &DMatrix<f64> {
        &self.yp
    }

    /// `max |Y_p^T X_p - I|`
    pub fn biorthogonality_error(&self) -> f64 {
        let j = self.xp.ncols();
        (self.yp.tr_mul(&self.xp) - DMatrix::<f64>::identity(j, j)).amax()
    }

    /// `(I - X_p Y_p^T) t`, the projector onto `Y_p`-orthogonal vectors.
    pub fn project_right(&self, t: &DVector<f64>) -> DVector<f64> {
        t - &self.xp * self.yp.tr_mul(t)
    }

    /// `(I - Y_p X_p^T) w`
    pub fn project_left(&self, w: &DVector<f64>) -> DVector<f64> {
        w - &self.yp * self.xp.tr_mul(w)
    }

    pub fn apply(&self, t: &DVector<f64>) -> Result<DVector<f64>> {
        if t.len() != self.pair.n() {
            return Err(Error::Dimension(format!(
                "correction operator acts on {}-vectors, got {}",
                self.pair.n(),
                t.len()
            )));
        }
        Ok(self.apply_unchecked(t))
    }

    fn apply_unchecked(&self, t: &DVector<f64>) -> DVector<f64> {
        let s = self.project_right(t);
        let mut w = self.pair.ata_mul(&s);
        if self.rho != 0.0 && self.pair.p() > 0 {
            w.axpy(-self.rho * self.rho, &self.pair.btb_mul(&s), 1.0);
        }
        self.project_left(&w)
    }
}

/// Approximate solution of a correction equation.
#[derive(Debug, Clone)]
pub struct InnerReport {
    pub t: DVector<f64>,
    /// `||rhs - Op t|| / ||rhs||`
    pub relres: f64,
    pub iterations: usize,
    pub breakdown: bool,
    pub residual_history: Vec<f64>,
}

/// MINRES on the correction equation from a zero initial guess.
///
/// The right-hand side is projected once with `I - Y_p X_p^T` and the
/// returned `t` is re-projected with `I - X_p Y_p^T`, so `Y_p^T t = 0`.
pub fn minres(op: &CorrectionOperator<'_>, rhs: &DVector<f64>, stop_tol: f64, max_iters: usize) -> Result<InnerReport> {
    if rhs.len() != op.pair.n() {
        return Err(Error::Dimension(format!(
            "rhs has {} entries, expected {}",
            rhs.len(),
            op.pair.n()
        )));
    }
    let b = op.project_left(rhs);
    let out = minres_raw(|v| op.apply_unchecked(v), &b, stop_tol, max_iters);
    let t = op.project_right(&out.x);
    let bnorm = rhs.norm();
    let relres = if bnorm == 0.0 {
        0.0
    } else {
        (rhs - op.apply_unchecked(&t)).norm() / bnorm
    };
    Ok(InnerReport {
        t,
        relres,
        iterations: out.iterations,
        breakdown: out.breakdown,
        residual_history: out.residual_history,
    })
}

/// Dense `A^T A` and `B^T B`, for exact correction solves at desk scale.
#[derive(Debug, Clone)]
pub struct DenseNormals {
    pub ata: DMatrix<f64>,
    pub btb: DMatrix<f64>,
}

impl DenseNormals {
    pub fn new(pair: &MatrixPair) -> Self {
        let a = pair.a().to_dense();
        let b = pair.b().to_dense();
        Self { ata: a.tr_mul(&a), btb: b.tr_mul(&b) }
    }
}

/// Solves the correction equation exactly through the bordered system
///
/// ```text
/// [ M     -Y_p ] [t]   [b]
/// [ Y_p^T   0  ] [mu] = [0]
/// ```
///
/// with `M = A^T A - rho^2 B^T B`, whose solution satisfies the projected
/// equation whenever `X_p^T b = 0`.
pub fn solve_exact(op: &CorrectionOperator<'_>, normals: &DenseNormals, rhs: &DVector<f64>) -> Result<InnerReport> {
    let n = op.pair.n();
    if rhs.len() != n {
        return Err(Error::Dimension(format!("rhs has {} entries, expected {n}", rhs.len())));
    }
    let j = op.xp.ncols();
    let b = op.project_left(rhs);
    let mut big = DMatrix::<f64>::zeros(n + j, n + j);
    let rho2 = op.rho * op.rho;
    big.view_mut((0, 0), (n, n)).copy_from(&(&normals.ata - &normals.btb * rho2));
    big.view_mut((0, n), (n, j)).copy_from(&(-&op.yp));
    big.view_mut((n, 0), (j, n)).copy_from(&op.yp.transpose());
    let mut full_rhs = DVector::<f64>::zeros(n + j);
    full_rhs.rows_mut(0, n).copy_from(&b);
    let sol = match big.clone().lu().solve(&full_rhs) {
        Some(s) if s.iter().all(|v| v.is_finite()) => s,
        _ => big
            .svd(true, true)
            .solve(&full_rhs, 1e-14)
            .map_err(|e| Error::Config(format!("exact correction solve failed: {e}")))?,
    };
    let t = op.project_right(&sol.rows(0, n).into_owned());
    let bnorm = rhs.norm();
    let relres = if bnorm == 0.0 {
        0.0
    } else {
        (rhs - op.apply_unchecked(&t)).norm() / bnorm
    };
    Ok(InnerReport { t, relres, iterations: 1, breakdown: false, residual_history: Vec::new() })
}

/// Inner stopping tolerance `min(2 c eps, 0.01)`.
pub fn inner_stop_tol(eps: f64, c: f64) -> Result<f64> {
    if !(eps > 0.0) || !(c > 0.0) {
        return Err(Error::Config(format!(
            "inner tolerance needs eps > 0 and c > 0, got eps = {eps}, c = {c}"
        )));
    }
    Ok((2.0 * c * eps).min(0.01))
}

/// `(B^T B)^{-1} w`; fails for rank-deficient `B`.
pub fn btb_solve(pair: &MatrixPair, w: &DVector<f64>) -> Result<DVector<f64>> {
    pair.btb_solve(w)
}
