//! Small dense kernels used by extraction and restart.
//!
//! Everything here works on matrices whose dimension is bounded by the
//! maximum search-space size (a few dozen), so the routines favour clarity
//! over blocking. Symmetric eigendecompositions and the real Schur form come
//! from `nalgebra`; the pencil reductions, QR updates and the small GSVD are
//! built on top of them.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative drop tolerance for rank decisions in QR factorizations.
pub const DROP_TOL: f64 = 1e-13;

/// An eigenvalue with its eigenvector, or a flagged complex eigenvalue.
#[derive(Debug, Clone)]
pub struct EigPair {
    pub value: f64,
    /// Imaginary part; zero for real pairs.
    pub imag: f64,
    /// `None` for non-real pairs, which are never selected downstream.
    pub vector: Option<DVector<f64>>,
}

impl EigPair {
    pub fn is_real(&self) -> bool {
        self.vector.is_some()
    }
}

/// One component `(alpha, beta, e, f, d)` of the GSVD of a small pair.
#[derive(Debug, Clone)]
pub struct SmallGsvdComponent {
    pub alpha: f64,
    pub beta: f64,
    pub e: DVector<f64>,
    pub f: DVector<f64>,
    pub d: DVector<f64>,
}

impl SmallGsvdComponent {
    /// The generalized singular value `alpha / beta`, infinite when `beta == 0`.
    pub fn theta(&self) -> f64 {
        if self.beta == 0.0 {
            f64::INFINITY
        } else {
            self.alpha / self.beta
        }
    }
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// Removes the components of `w` along the orthonormal columns of `q`,
/// with one classical Gram-Schmidt repass when the norm drops by more than
/// half. Returns the coefficients and the remainder.
pub fn project_out(q: &DMatrix<f64>, w: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    if q.ncols() == 0 {
        return (DVector::zeros(0), w.clone());
    }
    let norm_w = w.norm();
    let mut coeffs = q.tr_mul(w);
    let mut rem = w - q * &coeffs;
    if rem.norm() < 0.5 * norm_w {
        let again = q.tr_mul(&rem);
        rem -= q * &again;
        coeffs += again;
    }
    (coeffs, rem)
}

/// Thin QR factorization by repeated Gram-Schmidt; `R` has a nonnegative diagonal.
pub fn thin_qr(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, k) = m.shape();
    if n < k {
        return Err(Error::Dimension(format!(
            "thin QR needs rows >= cols, got {n}x{k}"
        )));
    }
    check_finite(m)?;
    let mut q = DMatrix::<f64>::zeros(n, 0);
    let mut r = DMatrix::<f64>::zeros(0, 0);
    for j in 0..k {
        let col = m.column(j).into_owned();
        let (nq, nr, _, _) = qr_append(&q, &r, &col).map_err(|e| match e {
            Error::NoExpansion => Error::RankDeficient { column: j },
            other => other,
        })?;
        q = nq;
        r = nr;
    }
    Ok((q, r))
}

/// Orthonormal basis of the column span of `m`, silently dropping columns
/// that are numerically dependent on the earlier ones.
pub fn orthonormal_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(m.ncols());
    let mut q = DMatrix::<f64>::zeros(n, 0);
    for j in 0..m.ncols() {
        let w = m.column(j).into_owned();
        let norm = w.norm();
        if norm == 0.0 {
            continue;
        }
        let (_, rem) = project_out(&q, &w);
        let gamma = rem.norm();
        if gamma <= DROP_TOL * norm {
            continue;
        }
        cols.push(rem / gamma);
        q = DMatrix::from_columns(&cols);
    }
    q
}

/// Appends `w` to the thin QR factorization `Q R`.
///
/// Returns the enlarged factors together with `r = Q^T w` and
/// `gamma = ||w - Q r||`.
pub fn qr_append(
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    w: &DVector<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>, f64)> {
    let k = q.ncols();
    if w.len() != q.nrows() || r.shape() != (k, k) {
        return Err(Error::Dimension(format!(
            "qr_append: Q is {}x{}, R is {}x{}, w has {}",
            q.nrows(),
            k,
            r.nrows(),
            r.ncols(),
            w.len()
        )));
    }
    let norm_w = w.norm();
    if norm_w == 0.0 {
        return Err(Error::NoExpansion);
    }
    let (coeffs, rem) = project_out(q, w);
    let gamma = rem.norm();
    if gamma <= DROP_TOL * norm_w {
        return Err(Error::NoExpansion);
    }
    let qn = append_column(q, &(rem / gamma));
    let rn = border_upper(r, &coeffs, gamma);
    Ok((qn, rn, coeffs, gamma))
}

/// Thin QR of a `k x j` matrix (`j <= k`) that never fails on rank loss:
/// a dependent column gets a zero diagonal entry in `R` and an arbitrary
/// orthonormal completion in `Q`, so `Q` always has `j` orthonormal columns.
pub fn thin_qr_padded(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, k) = m.shape();
    if n < k {
        return Err(Error::Dimension(format!("thin QR needs rows >= cols, got {n}x{k}")));
    }
    check_finite(m)?;
    let scale = m.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut q = DMatrix::<f64>::zeros(n, 0);
    let mut r = DMatrix::<f64>::zeros(0, 0);
    for j in 0..k {
        let w = m.column(j).into_owned();
        let (coeffs, rem) = project_out(&q, &w);
        let gamma = rem.norm();
        if gamma > DROP_TOL * scale.max(w.norm()) && gamma > 0.0 {
            q = append_column(&q, &(rem / gamma));
            r = border_upper(&r, &coeffs, gamma);
        } else {
            q = append_column(&q, &complement_vector(&q));
            r = border_upper(&r, &coeffs, 0.0);
        }
    }
    Ok((q, r))
}

/// A unit vector orthogonal to the orthonormal columns of `q` (`q` must
/// have fewer columns than rows).
pub(crate) fn complement_vector(q: &DMatrix<f64>) -> DVector<f64> {
    let n = q.nrows();
    let mut best = DVector::zeros(n);
    let mut best_norm = -1.0;
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        let (_, rem) = project_out(q, &e);
        let (_, rem) = project_out(q, &rem);
        let nr = rem.norm();
        if nr > best_norm {
            best_norm = nr;
            best = rem;
        }
        if nr > 0.5 {
            break;
        }
    }
    best / best_norm
}

/// `[Q, c]`
pub(crate) fn append_column(q: &DMatrix<f64>, c: &DVector<f64>) -> DMatrix<f64> {
    let k = q.ncols();
    let mut out = q.clone().resize_horizontally(k + 1, 0.0);
    out.set_column(k, c);
    out
}

/// `[[R, r], [0, gamma]]`
pub(crate) fn border_upper(r: &DMatrix<f64>, col: &DVector<f64>, gamma: f64) -> DMatrix<f64> {
    let k = r.nrows();
    let mut out = r.clone().resize(k + 1, k + 1, 0.0);
    for i in 0..k {
        out[(i, k)] = col[i];
    }
    out[(k, k)] = gamma;
    out
}

/// Orthogonal `Q` whose first column is `d / ||d||`; the remaining columns
/// span the orthogonal complement of `d`. Built from one Householder reflector.
pub fn full_qr_of_vector(d: &DVector<f64>) -> Result<DMatrix<f64>> {
    let k = d.len();
    let norm = d.norm();
    if k == 0 || norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    if !norm.is_finite() {
        return Err(Error::NonFinite);
    }
    let sign = if d[0] >= 0.0 { 1.0 } else { -1.0 };
    let mut v = d.clone();
    v[0] += sign * norm;
    let vtv = v.norm_squared();
    let mut q = DMatrix::<f64>::identity(k, k) - (&v * v.transpose()) * (2.0 / vtv);
    // the reflector maps d to -sign*||d|| e1, so flip the first column
    let mut first = q.column_mut(0);
    first *= -sign;
    Ok(q)
}

/// Symmetric eigendecomposition, eigenvalues ascending.
pub fn sym_eig(s: &DMatrix<f64>) -> Result<Vec<EigPair>> {
    let k = s.nrows();
    if s.ncols() != k {
        return Err(Error::Dimension(format!("sym_eig needs a square matrix, got {:?}", s.shape())));
    }
    check_finite(s)?;
    if k == 0 {
        return Ok(Vec::new());
    }
    let sym = (s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut pairs: Vec<EigPair> = (0..k)
        .map(|i| EigPair {
            value: eig.eigenvalues[i],
            imag: 0.0,
            vector: Some(eig.eigenvectors.column(i).into_owned()),
        })
        .collect();
    pairs.sort_by(|a, b| a.value.total_cmp(&b.value));
    Ok(pairs)
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
///
/// A pivot that is non-positive, or below `eps * max|H_ii|`, is reported.
pub fn cholesky(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = h.nrows();
    if h.ncols() != k {
        return Err(Error::Dimension(format!("cholesky needs a square matrix, got {:?}", h.shape())));
    }
    check_finite(h)?;
    let scale = (0..k).map(|i| h[(i, i)].abs()).fold(0.0, f64::max);
    let floor = f64::EPSILON * scale;
    let mut l = DMatrix::<f64>::zeros(k, k);
    for j in 0..k {
        let mut pivot = h[(j, j)];
        for p in 0..j {
            pivot -= l[(j, p)] * l[(j, p)];
        }
        if !(pivot > floor) {
            return Err(Error::NotPositiveDefinite { index: j, pivot });
        }
        let ljj = pivot.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..k {
            let mut s = 0.5 * (h[(i, j)] + h[(j, i)]);
            for p in 0..j {
                s -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// `L^{-1} G L^{-T}` for lower triangular `L`.
fn congruence_by_inverse(l: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let left = l
        .solve_lower_triangular(g)
        .expect("Cholesky factor has a positive diagonal");
    let right_t = l
        .solve_lower_triangular(&left.transpose())
        .expect("Cholesky factor has a positive diagonal");
    right_t.transpose()
}

fn check_pencil(g: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<()> {
    let k = h.nrows();
    if g.shape() != (k, k) || h.ncols() != k {
        return Err(Error::Dimension(format!(
            "pencil matrices must be square and equal in size, got {:?} and {:?}",
            g.shape(),
            h.shape()
        )));
    }
    check_finite(g)
}

/// Eigenpairs of the symmetric-definite pencil `G z = nu H z`, ascending,
/// with `H`-orthonormal vectors.
pub fn spd_pencil_eig(g: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<Vec<EigPair>> {
    check_pencil(g, h)?;
    let l = cholesky(h)?;
    let c = congruence_by_inverse(&l, g);
    let lt = l.transpose();
    let mut pairs = sym_eig(&c)?;
    for p in &mut pairs {
        if let Some(w) = p.vector.take() {
            p.vector = Some(
                lt.solve_upper_triangular(&w)
                    .expect("Cholesky factor has a positive diagonal"),
            );
        }
    }
    Ok(pairs)
}

/// Eigenpairs of `G z = nu H z` with `G` square (not necessarily symmetric)
/// and `H` symmetric positive definite.
///
/// Real pairs come first, ascending, with unit 2-norm vectors; complex
/// pairs follow, flagged with `vector == None`.
pub fn general_pencil_eig_spd_metric(g: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<Vec<EigPair>> {
    check_pencil(g, h)?;
    let k = g.nrows();
    if k == 0 {
        return Ok(Vec::new());
    }
    let l = cholesky(h)?;
    let c = congruence_by_inverse(&l, g);
    let lt = l.transpose();
    let (q, t) = Schur::new(c).unpack();
    let tnorm = t.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);

    let mut real = Vec::new();
    let mut complex = Vec::new();
    let mut i = 0;
    while i < k {
        let is_block = i + 1 < k && t[(i + 1, i)].abs() > f64::EPSILON * tnorm;
        if is_block {
            let (a, b, c2, d) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
            let tr = 0.5 * (a + d);
            let disc = 0.25 * (a - d) * (a - d) + b * c2;
            if disc >= 0.0 {
                // nalgebra decouples real 2x2 blocks, but guard anyway
                for lam in [tr - disc.sqrt(), tr + disc.sqrt()] {
                    real.push(lam);
                }
            } else {
                let im = (-disc).sqrt();
                complex.push(EigPair { value: tr, imag: im, vector: None });
                complex.push(EigPair { value: tr, imag: -im, vector: None });
            }
            i += 2;
        } else {
            real.push(t[(i, i)]);
            i += 1;
        }
    }

    let mut pairs: Vec<EigPair> = real
        .into_iter()
        .map(|lam| {
            let y = quasi_triangular_eigvec(&t, lam, tnorm);
            let w = &q * y;
            let z = lt
                .solve_upper_triangular(&w)
                .expect("Cholesky factor has a positive diagonal");
            let zn = z.norm();
            EigPair { value: lam, imag: 0.0, vector: Some(z / zn) }
        })
        .collect();
    pairs.sort_by(|a, b| a.value.total_cmp(&b.value));
    pairs.extend(complex);
    Ok(pairs)
}

/// Eigenvector of a quasi-upper-triangular `T` for the real eigenvalue `lam`,
/// by back substitution against the diagonal entry closest to `lam`.
fn quasi_triangular_eigvec(t: &DMatrix<f64>, lam: f64, tnorm: f64) -> DVector<f64> {
    let k = t.nrows();
    let smin = f64::EPSILON * tnorm;
    // block structure: block_start[i] is true when i starts a 2x2 block
    let mut block_start = vec![false; k];
    let mut i = 0;
    while i < k {
        if i + 1 < k && t[(i + 1, i)].abs() > f64::EPSILON * tnorm {
            block_start[i] = true;
            i += 2;
        } else {
            i += 1;
        }
    }
    // anchor: 1x1 diagonal entry closest to lam
    let mut anchor = 0;
    let mut best = f64::INFINITY;
    let mut i = 0;
    while i < k {
        if block_start[i] {
            i += 2;
            continue;
        }
        let dist = (t[(i, i)] - lam).abs();
        if dist < best {
            best = dist;
            anchor = i;
        }
        i += 1;
    }
    let mut y = DVector::<f64>::zeros(k);
    y[anchor] = 1.0;
    let mut j = anchor as isize - 1;
    while j >= 0 {
        let ju = j as usize;
        let in_block = ju >= 1 && block_start[ju - 1];
        if in_block {
            let top = ju - 1;
            let mut rhs = [0.0; 2];
            for (slot, row) in [top, ju].iter().enumerate() {
                let mut s = 0.0;
                for c in ju + 1..=anchor {
                    s += t[(*row, c)] * y[c];
                }
                rhs[slot] = -s;
            }
            let a = t[(top, top)] - lam;
            let b = t[(top, ju)];
            let c = t[(ju, top)];
            let d = t[(ju, ju)] - lam;
            let mut det = a * d - b * c;
            if det.abs() < smin * smin.max(1e-300) {
                det = smin.max(f64::MIN_POSITIVE);
            }
            y[top] = (d * rhs[0] - b * rhs[1]) / det;
            y[ju] = (a * rhs[1] - c * rhs[0]) / det;
            j -= 2;
        } else {
            let mut s = 0.0;
            for c in ju + 1..=anchor {
                s += t[(ju, c)] * y[c];
            }
            let mut piv = t[(ju, ju)] - lam;
            if piv.abs() < smin {
                piv = if piv >= 0.0 { smin } else { -smin };
                if piv == 0.0 {
                    piv = f64::MIN_POSITIVE;
                }
            }
            y[ju] = -s / piv;
            j -= 1;
        }
        // rescale to avoid overflow in long substitutions
        let m = y.amax();
        if m > 1e100 {
            y /= m;
        }
    }
    y
}

/// GSVD of a small square pair through the pencil
/// `(R_A^T R_A, R_A^T R_A + R_B^T R_B)`.
///
/// Components are returned in ascending order of `alpha`; each `d` is
/// normalized so that `||R_A d||^2 + ||R_B d||^2 = 1`.
pub fn small_gsvd(ra: &DMatrix<f64>, rb: &DMatrix<f64>) -> Result<Vec<SmallGsvdComponent>> {
    let k = ra.ncols();
    if rb.ncols() != k {
        return Err(Error::Dimension(format!(
            "small_gsvd: R_A has {k} columns, R_B has {}",
            rb.ncols()
        )));
    }
    let ata = ra.tr_mul(ra);
    let sum = &ata + rb.tr_mul(rb);
    let pairs = spd_pencil_eig(&ata, &sum).map_err(|e| match e {
        Error::NotPositiveDefinite { .. } => Error::NotRegular,
        other => other,
    })?;
    Ok(pairs
        .into_iter()
        .filter_map(|p| p.vector)
        .map(|d| gsvd_component_from(ra, rb, d))
        .collect())
}

/// Builds `(alpha, beta, e, f, d)` from a coordinate vector.
pub(crate) fn gsvd_component_from(
    ra: &DMatrix<f64>,
    rb: &DMatrix<f64>,
    d: DVector<f64>,
) -> SmallGsvdComponent {
    let e = ra * &d;
    let f = rb * &d;
    let (ne, nf) = (e.norm(), f.norm());
    let delta = (ne * ne + nf * nf).sqrt();
    let tiny = 1e-14 * delta;
    let (alpha, e) = if ne > tiny { (ne / delta, e / ne) } else { (0.0, DVector::zeros(e.len())) };
    let (beta, f) = if nf > tiny { (nf / delta, f / nf) } else { (0.0, DVector::zeros(f.len())) };
    SmallGsvdComponent { alpha, beta, e, f, d: d / delta }
}
