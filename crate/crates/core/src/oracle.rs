//! Dense brute-force GSVD for desk-scale pairs.
//!
//! This is ground truth for tests and acceptance runs, not a production
//! path: it factors the stacked matrix `[A; B] = QR` and takes the SVD of
//! the top block of `Q`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest column dimension the oracle accepts.
pub const MAX_ORACLE_N: usize = 500;

/// Classification threshold on `alpha` resp. `beta` (with `alpha^2 + beta^2 = 1`).
const TRIVIAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComponentKind {
    Nontrivial,
    /// `alpha == 0`
    Zero,
    /// `beta == 0`
    Infinite,
}

#[derive(Debug, Clone)]
pub struct OracleComponent {
    pub alpha: f64,
    pub beta: f64,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub x: DVector<f64>,
    pub kind: ComponentKind,
}

impl OracleComponent {
    pub fn sigma(&self) -> f64 {
        match self.kind {
            ComponentKind::Infinite => f64::INFINITY,
            ComponentKind::Zero => 0.0,
            ComponentKind::Nontrivial => self.alpha / self.beta,
        }
    }
}

/// All `n` components of the GSVD of `(A, B)`, ordered by ascending `alpha`.
#[derive(Debug, Clone)]
pub struct FullGsvd {
    pub components: Vec<OracleComponent>,
}

impl FullGsvd {
    pub fn nontrivial(&self) -> impl Iterator<Item = &OracleComponent> {
        self.components.iter().filter(|c| c.kind == ComponentKind::Nontrivial)
    }

    /// Nontrivial values sorted ascending.
    pub fn sigmas(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.nontrivial().map(OracleComponent::sigma).collect();
        s.sort_by(f64::total_cmp);
        s
    }

    /// Nontrivial components ordered by `|sigma - tau|`; the sort is stable
    /// and ties go to the smaller value.
    pub fn closest_to(&self, tau: f64) -> Vec<&OracleComponent> {
        let mut c: Vec<&OracleComponent> = self.nontrivial().collect();
        c.sort_by(|a, b| {
            (a.sigma() - tau)
                .abs()
                .total_cmp(&(b.sigma() - tau).abs())
                .then(a.sigma().total_cmp(&b.sigma()))
        });
        c
    }
}

/// Dense GSVD of a regular pair with `m + p >= n`.
pub fn dense_gsvd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<FullGsvd> {
    let (m, n) = a.shape();
    let p = b.nrows();
    if b.ncols() != n {
        return Err(Error::Dimension(format!("A has {n} columns, B has {}", b.ncols())));
    }
    if m + p < n {
        return Err(Error::Dimension(format!("need m + p >= n, got {m} + {p} < {n}")));
    }
    if n > MAX_ORACLE_N {
        return Err(Error::Config(format!("dense oracle is limited to n <= {MAX_ORACLE_N}, got {n}")));
    }
    if n == 0 {
        return Ok(FullGsvd { components: Vec::new() });
    }
    let mut stacked = DMatrix::<f64>::zeros(m + p, n);
    stacked.view_mut((0, 0), (m, n)).copy_from(a);
    stacked.view_mut((m, 0), (p, n)).copy_from(b);
    let qr = stacked.qr();
    let q = qr.q();
    let r = qr.r();
    let rmax = r.diagonal().amax();
    if r.diagonal().iter().any(|d| d.abs() <= 1e-13 * rmax) {
        return Err(Error::NotRegular);
    }
    let q1 = q.rows(0, m).into_owned();
    let q2 = q.rows(m, p).into_owned();
    // right singular vectors of Q1 from the eigenvectors of Q1^T Q1; the
    // SVD route loses accuracy on nearly repeated singular values
    let w = q1.tr_mul(&q1).symmetric_eigen().eigenvectors;

    let mut components = Vec::with_capacity(n);
    for i in 0..n {
        let wi = w.column(i).into_owned();
        let aw = &q1 * &wi;
        let bw = &q2 * &wi;
        let (na, nb) = (aw.norm(), bw.norm());
        let h = na.hypot(nb);
        let (alpha, beta) = (na / h, nb / h);
        let kind = if alpha <= TRIVIAL_TOL {
            ComponentKind::Zero
        } else if beta <= TRIVIAL_TOL {
            ComponentKind::Infinite
        } else {
            ComponentKind::Nontrivial
        };
        let u = if kind == ComponentKind::Zero { DVector::zeros(m) } else { aw / na };
        let v = if kind == ComponentKind::Infinite { DVector::zeros(p) } else { bw / nb };
        let x = r
            .solve_upper_triangular(&(wi / h))
            .ok_or(Error::NotRegular)?;
        components.push(OracleComponent { alpha, beta, u, v, x, kind });
    }
    components.sort_by(|c1, c2| c1.alpha.total_cmp(&c2.alpha));
    let out = FullGsvd { components };
    let worst = max_invariant_residual(a, b, &out);
    if !(worst <= 1e-8) {
        return Err(Error::Config(format!("dense GSVD failed its own checks (residual {worst:e})")));
    }
    Ok(out)
}

/// Largest relative violation of `Ax = alpha u`, `Bx = beta v`,
/// `beta A^T u = alpha B^T v` and `X^T (A^T A + B^T B) X = I`.
pub fn max_invariant_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, g: &FullGsvd) -> f64 {
    let scale = a.norm() + b.norm();
    let mut worst = 0.0f64;
    for c in &g.components {
        let xs = c.x.norm().max(1.0);
        if c.kind != ComponentKind::Zero {
            worst = worst.max((a * &c.x - &c.u * c.alpha).norm() / (scale * xs));
        }
        if c.kind != ComponentKind::Infinite {
            worst = worst.max((b * &c.x - &c.v * c.beta).norm() / (scale * xs));
        }
        if c.kind == ComponentKind::Nontrivial {
            let r = a.tr_mul(&c.u) * c.beta - b.tr_mul(&c.v) * c.alpha;
            worst = worst.max(r.norm() / scale);
        }
        worst = worst.max((c.alpha * c.alpha + c.beta * c.beta - 1.0).abs());
    }
    let x = DMatrix::from_columns(&g.components.iter().map(|c| c.x.clone()).collect::<Vec<_>>());
    if x.ncols() > 0 {
        let gram = x.transpose() * (a.tr_mul(a) + b.tr_mul(b)) * &x;
        worst = worst.max((gram - DMatrix::<f64>::identity(x.ncols(), x.ncols())).amax());
    }
    worst
}

/// `||(A^T A - theta^2 B^T B) x||` in the `(B^T B)^{-1}` norm.
pub fn weighted_residual_norm(a: &DMatrix<f64>, b: &DMatrix<f64>, theta: f64, x: &DVector<f64>) -> Result<f64> {
    let btb = b.tr_mul(b);
    let w = a.tr_mul(&(a * x)) - &btb * x * (theta * theta);
    let chol = btb.cholesky().ok_or(Error::RankDeficientB { index: 0, pivot: 0.0 })?;
    let z = chol.solve(&w);
    Ok(w.dot(&z).max(0.0).sqrt())
}
