//! The search subspace `X~` together with the QR factors of `A X~` and
//! `B X~` and the cross-product matrices used by refined and IF-harmonic
//! extraction.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dense::{
    append_column, border_upper, complement_vector, full_qr_of_vector, orthonormal_columns,
    project_out, thin_qr_padded, DROP_TOL,
};
use crate::error::{Error, Result};
use crate::sparse::MatrixPair;

/// Bordering updates after which the cross products are rebuilt from the
/// stored products `A^T A X~` and `B^T B X~`.
const REFRESH_EVERY: usize = 200;

/// `W = (B^T B)^{-1} A^T U~` and `M = U~^T A W`, kept for CPF-harmonic
/// extraction.
#[derive(Debug, Clone)]
pub struct HarmonicData {
    pub w: DMatrix<f64>,
    pub m: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct SearchState {
    x: DMatrix<f64>,
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    ra: DMatrix<f64>,
    rb: DMatrix<f64>,
    /// `A^T A X~`
    pa: DMatrix<f64>,
    /// `B^T B X~`
    pb: DMatrix<f64>,
    ha: DMatrix<f64>,
    hb: DMatrix<f64>,
    hab: DMatrix<f64>,
    harmonic: Option<HarmonicData>,
    updates: usize,
}

/// Relative residuals of the state invariants, computed from scratch.
#[derive(Debug, Clone, Copy, Default)]
pub struct InvariantErrors {
    pub factor_a: f64,
    pub factor_b: f64,
    pub orth_x: f64,
    pub orth_u: f64,
    pub orth_v: f64,
    pub cross_products: f64,
    pub harmonic: f64,
    /// `max |Y_c^T X~|`, zero when no `Y_c` is given.
    pub deflation: f64,
}

impl InvariantErrors {
    pub fn max(&self) -> f64 {
        [
            self.factor_a,
            self.factor_b,
            self.orth_x,
            self.orth_u,
            self.orth_v,
            self.cross_products,
            self.harmonic,
            self.deflation,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

fn orth_error(q: &DMatrix<f64>) -> f64 {
    let k = q.ncols();
    (q.tr_mul(q) - DMatrix::<f64>::identity(k, k)).amax()
}

fn unit(n: usize, i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[i] = 1.0;
    e
}

impl SearchState {
    /// Empty state for a pair; `harmonic` enables the `W`, `M` bookkeeping.
    pub fn empty(pair: &MatrixPair, harmonic: bool) -> Self {
        let (n, m, p) = (pair.n(), pair.m(), pair.p());
        Self {
            x: DMatrix::zeros(n, 0),
            u: DMatrix::zeros(m, 0),
            v: DMatrix::zeros(p, 0),
            ra: DMatrix::zeros(0, 0),
            rb: DMatrix::zeros(0, 0),
            pa: DMatrix::zeros(n, 0),
            pb: DMatrix::zeros(n, 0),
            ha: DMatrix::zeros(0, 0),
            hb: DMatrix::zeros(0, 0),
            hab: DMatrix::zeros(0, 0),
            harmonic: harmonic.then(|| HarmonicData { w: DMatrix::zeros(n, 0), m: DMatrix::zeros(0, 0) }),
            updates: 0,
        }
    }

    /// One-dimensional state spanned by `x0`.
    pub fn init(pair: &MatrixPair, x0: &DVector<f64>, harmonic: bool) -> Result<Self> {
        if x0.len() != pair.n() {
            return Err(Error::Dimension(format!("x0 has {} entries, expected {}", x0.len(), pair.n())));
        }
        let mut s = Self::empty(pair, harmonic);
        s.expand(pair, x0)?;
        Ok(s)
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }
    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }
    pub fn ra(&self) -> &DMatrix<f64> {
        &self.ra
    }
    pub fn rb(&self) -> &DMatrix<f64> {
        &self.rb
    }
    pub fn ha(&self) -> &DMatrix<f64> {
        &self.ha
    }
    pub fn hb(&self) -> &DMatrix<f64> {
        &self.hb
    }
    pub fn hab(&self) -> &DMatrix<f64> {
        &self.hab
    }
    pub fn harmonic(&self) -> Option<&HarmonicData> {
        self.harmonic.as_ref()
    }

    /// Orthonormalizes `t` against `X~` and appends it. Fails with
    /// [`Error::NoExpansion`] when `t` lies (numerically) in `span(X~)`.
    pub fn expand(&mut self, pair: &MatrixPair, t: &DVector<f64>) -> Result<()> {
        self.expand_avoiding(pair, t, None)
    }

    /// As [`expand`](Self::expand), additionally projecting the new
    /// direction out of the orthonormal basis `avoid`, which must be
    /// orthogonal to `X~`. Keeps `X~^T Y_c = 0` at working accuracy when
    /// the remainder after projection is much shorter than `t`.
    fn expand_avoiding(&mut self, pair: &MatrixPair, t: &DVector<f64>, avoid: Option<&DMatrix<f64>>) -> Result<()> {
        if t.len() != self.x.nrows() {
            return Err(Error::Dimension(format!("expansion vector has {} entries, expected {}", t.len(), self.x.nrows())));
        }
        if !t.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let norm_t = t.norm();
        if norm_t == 0.0 {
            return Err(Error::NoExpansion);
        }
        let (_, mut rem) = project_out(&self.x, t);
        if let Some(q) = avoid {
            rem = project_out(q, &rem).1;
        }
        let g = rem.norm();
        if g <= DROP_TOL * norm_t {
            return Err(Error::NoExpansion);
        }
        let xn = rem / g;

        let ax = pair.a_mul(&xn);
        let bx = pair.b_mul(&xn);
        let scale_a = pair.norm1_a().max(ax.norm());
        let scale_b = pair.norm1_b().max(bx.norm());
        let (ca, resid_a) = project_out(&self.u, &ax);
        let (cb, resid_b) = project_out(&self.v, &bx);
        let (ga, gb) = (resid_a.norm(), resid_b.norm());
        let a_zero = ga <= DROP_TOL * scale_a;
        let b_zero = gb <= DROP_TOL * scale_b;
        if a_zero && b_zero && ax.norm() <= DROP_TOL * scale_a && bx.norm() <= DROP_TOL * scale_b {
            return Err(Error::NotRegular);
        }
        let un = if a_zero { self.completion(&self.u)? } else { resid_a / ga };
        let vn = if b_zero { self.completion(&self.v)? } else { resid_b / gb };
        let pa_new = pair.at_mul(&ax);
        let pb_new = pair.bt_mul(&bx);

        if let Some(h) = self.harmonic.take() {
            let au = pair.at_mul(&un);
            let wn = pair.btb_solve(&au)?;
            let col = h.w.tr_mul(&au);
            let corner = wn.dot(&au);
            let k = col.len();
            let mut m = h.m.resize(k + 1, k + 1, 0.0);
            for i in 0..k {
                m[(i, k)] = col[i];
                m[(k, i)] = col[i];
            }
            m[(k, k)] = corner;
            self.harmonic = Some(HarmonicData { w: append_column(&h.w, &wn), m });
        }

        let ha_col = self.pa.tr_mul(&pa_new);
        let hb_col = self.pb.tr_mul(&pb_new);
        let hab_col = self.pa.tr_mul(&pb_new);
        let hab_row = self.pb.tr_mul(&pa_new);
        self.ha = border_sym(&self.ha, &ha_col, pa_new.norm_squared());
        self.hb = border_sym(&self.hb, &hb_col, pb_new.norm_squared());
        let k = self.hab.nrows();
        let mut hab = self.hab.clone().resize(k + 1, k + 1, 0.0);
        for i in 0..k {
            hab[(i, k)] = hab_col[i];
            hab[(k, i)] = hab_row[i];
        }
        hab[(k, k)] = pa_new.dot(&pb_new);
        self.hab = hab;

        self.x = append_column(&self.x, &xn);
        self.u = append_column(&self.u, &un);
        self.v = append_column(&self.v, &vn);
        self.ra = border_upper(&self.ra, &ca, if a_zero { 0.0 } else { ga });
        self.rb = border_upper(&self.rb, &cb, if b_zero { 0.0 } else { gb });
        self.pa = append_column(&self.pa, &pa_new);
        self.pb = append_column(&self.pb, &pb_new);

        self.updates += 1;
        if self.updates >= REFRESH_EVERY {
            self.refresh_cross_products();
        }
        Ok(())
    }

    /// Expands with `t`, or with a random direction orthogonal to `X~` and
    /// `avoid` when `t` adds nothing. Returns `true` if the random fallback
    /// was used.
    pub fn expand_or_perturb<R: Rng>(
        &mut self,
        pair: &MatrixPair,
        t: &DVector<f64>,
        avoid: &DMatrix<f64>,
        rng: &mut R,
    ) -> Result<bool> {
        let avoid_q = (avoid.ncols() > 0).then(|| orthonormal_columns(avoid));
        match self.expand_avoiding(pair, t, avoid_q.as_ref()) {
            Ok(()) => Ok(false),
            Err(Error::NoExpansion) => {
                let both = orthonormal_columns(&concat(avoid, &self.x));
                let r = random_orthogonal(&both, rng)?;
                self.expand(pair, &r)?;
                Ok(true)
            }
            Err(e) => Err(e),
        }
    }

    fn completion(&self, q: &DMatrix<f64>) -> Result<DVector<f64>> {
        if q.ncols() >= q.nrows() {
            return Err(Error::Dimension("no room left to extend an orthonormal basis".into()));
        }
        Ok(complement_vector(q))
    }

    /// Rebuilds `H_A`, `H_B`, `H_AB` from the stored products.
    pub fn refresh_cross_products(&mut self) {
        self.ha = symmetrize(self.pa.tr_mul(&self.pa));
        self.hb = symmetrize(self.pb.tr_mul(&self.pb));
        self.hab = self.pa.tr_mul(&self.pb);
        self.updates = 0;
    }

    /// Replaces `X~` by `X~ Q_d` with `Q_d` an orthonormal basis of
    /// `span(D)`, for a `k x j` coordinate matrix `D`.
    pub fn thick_restart(&mut self, d: &DMatrix<f64>) -> Result<()> {
        if d.nrows() != self.k() {
            return Err(Error::Dimension(format!("restart coordinates have {} rows, expected {}", d.nrows(), self.k())));
        }
        let qd = orthonormal_columns(d);
        self.transform(&qd)
    }

    /// Removes the direction `X~ d` (a converged vector) from the subspace.
    pub fn purge(&mut self, d: &DVector<f64>) -> Result<()> {
        let k = self.k();
        if d.len() != k {
            return Err(Error::Dimension(format!("purge vector has {} entries, expected {k}", d.len())));
        }
        // d' = (R_A^T R_A + R_B^T R_B) d makes X~ Q_D orthogonal to y = (A^T A + B^T B) X~ d
        let dp = self.ra.tr_mul(&(&self.ra * d)) + self.rb.tr_mul(&(&self.rb * d));
        let q = full_qr_of_vector(&dp)?;
        let qd = q.columns(1, k - 1).into_owned();
        self.transform(&qd)
    }

    /// `X~ <- X~ Q` for `Q` with orthonormal columns, updating every factor.
    fn transform(&mut self, q: &DMatrix<f64>) -> Result<()> {
        let (qe, ra) = thin_qr_padded(&(&self.ra * q))?;
        let (qf, rb) = thin_qr_padded(&(&self.rb * q))?;
        self.x = &self.x * q;
        self.u = &self.u * &qe;
        self.v = &self.v * &qf;
        self.ra = ra;
        self.rb = rb;
        self.pa = &self.pa * q;
        self.pb = &self.pb * q;
        self.ha = symmetrize(q.transpose() * &self.ha * q);
        self.hb = symmetrize(q.transpose() * &self.hb * q);
        self.hab = q.transpose() * &self.hab * q;
        if let Some(h) = self.harmonic.as_mut() {
            h.w = &h.w * &qe;
            h.m = symmetrize(qe.transpose() * &h.m * &qe);
        }
        Ok(())
    }

    /// Checks every invariant against quantities recomputed with fresh
    /// products by `A` and `B`. Intended for tests and diagnostics.
    pub fn invariant_errors(&self, pair: &MatrixPair, yc: Option<&DMatrix<f64>>) -> InvariantErrors {
        let k = self.k();
        let mut e = InvariantErrors {
            orth_x: orth_error(&self.x),
            orth_u: orth_error(&self.u),
            orth_v: orth_error(&self.v),
            ..Default::default()
        };
        if k == 0 {
            return e;
        }
        let cols = |f: &dyn Fn(&DVector<f64>) -> DVector<f64>, m: &DMatrix<f64>| {
            DMatrix::from_columns(&m.column_iter().map(|c| f(&c.into_owned())).collect::<Vec<_>>())
        };
        let ax = cols(&|c| pair.a_mul(c), &self.x);
        let bx = cols(&|c| pair.b_mul(c), &self.x);
        let sa = pair.norm1_a().max(f64::MIN_POSITIVE);
        let sb = pair.norm1_b().max(f64::MIN_POSITIVE);
        e.factor_a = (&ax - &self.u * &self.ra).amax() / sa;
        e.factor_b = (&bx - &self.v * &self.rb).amax() / sb;
        let pa = cols(&|c| pair.at_mul(c), &ax);
        let pb = cols(&|c| pair.bt_mul(c), &bx);
        let ha = pa.tr_mul(&pa);
        let hb = pb.tr_mul(&pb);
        let hab = pa.tr_mul(&pb);
        let scale = (sa * sa + sb * sb).powi(2);
        e.cross_products = [(&ha - &self.ha).amax(), (&hb - &self.hb).amax(), (&hab - &self.hab).amax()]
            .into_iter()
            .fold(0.0, f64::max)
            / scale;
        if let Some(h) = &self.harmonic {
            let atu = cols(&|c| pair.at_mul(c), &self.u);
            let btb_w = cols(&|c| pair.btb_mul(c), &h.w);
            let m = self.u.tr_mul(&cols(&|c| pair.a_mul(c), &h.w));
            e.harmonic = ((btb_w - &atu).amax() / (sa * sa.max(1.0))).max((m - &h.m).amax() / h.m.amax().max(1.0));
        }
        if let Some(yc) = yc {
            if yc.ncols() > 0 {
                e.deflation = yc.tr_mul(&self.x).amax() / yc.amax().max(1.0);
            }
        }
        e
    }
}

fn border_sym(h: &DMatrix<f64>, col: &DVector<f64>, corner: f64) -> DMatrix<f64> {
    let k = h.nrows();
    let mut out = h.clone().resize(k + 1, k + 1, 0.0);
    for i in 0..k {
        out[(i, k)] = col[i];
        out[(k, i)] = col[i];
    }
    out[(k, k)] = corner;
    out
}

fn symmetrize(h: DMatrix<f64>) -> DMatrix<f64> {
    (&h + h.transpose()) * 0.5
}

pub(crate) fn concat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// A random unit vector orthogonal to the orthonormal columns of `q`.
pub fn random_orthogonal<R: Rng>(q: &DMatrix<f64>, rng: &mut R) -> Result<DVector<f64>> {
    let n = q.nrows();
    if q.ncols() >= n {
        return Err(Error::Dimension("no direction left outside the given basis".into()));
    }
    for _ in 0..8 {
        let r = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let (_, rem) = project_out(q, &r);
        let (_, rem) = project_out(q, &rem);
        let nr = rem.norm();
        if nr > 1e-8 * r.norm() {
            return Ok(rem / nr);
        }
    }
    let (_, rem) = project_out(q, &unit(n, 0));
    if rem.norm() > 0.0 {
        return Ok(rem.normalize());
    }
    Ok(complement_vector(q))
}
