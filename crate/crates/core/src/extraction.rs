//! Extraction of approximate generalized singular values and vectors from
//! the search subspace: standard, CPF-harmonic and IF-harmonic projections,
//! the refined step, and assembly of a full approximate component.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use crate::dense::{general_pencil_eig_spd_metric, small_gsvd, spd_pencil_eig, sym_eig};
use crate::error::{Error, Result};
use crate::sparse::MatrixPair;
use crate::subspace::SearchState;

/// An approximate generalized singular value with its coordinates in `X~`.
#[derive(Debug, Clone)]
pub struct Candidate {
    /// `||R_A d|| / ||R_B d||`, infinite when `R_B d = 0`.
    pub theta: f64,
    /// The harmonic value that ranked this candidate (`phi`), if any;
    /// ranking uses `|phi - tau|`.
    pub harmonic: Option<f64>,
    pub d: DVector<f64>,
}

impl Candidate {
    fn rank_value(&self) -> f64 {
        self.harmonic.unwrap_or(self.theta)
    }
}

/// Candidates sorted by closeness to the target, best first.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub candidates: Vec<Candidate>,
    /// The IF-harmonic pencil had no admissible pair and the standard
    /// extraction was used instead.
    pub fell_back: bool,
}

impl Extraction {
    pub fn selected(&self) -> &Candidate {
        &self.candidates[0]
    }
}

/// An approximate GSVD component `(alpha, beta, u, v, x)`.
#[derive(Debug, Clone)]
pub struct ApproxComponent {
    pub alpha: f64,
    pub beta: f64,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub x: DVector<f64>,
    /// `alpha A^T u + beta B^T v`
    pub y: DVector<f64>,
    /// `beta A^T u - alpha B^T v`
    pub r: DVector<f64>,
    pub res_norm: f64,
    /// `u` or `v` is a placeholder because `alpha` or `beta` is zero.
    pub degenerate: bool,
}

impl ApproxComponent {
    pub fn theta(&self) -> f64 {
        if self.beta == 0.0 {
            f64::INFINITY
        } else {
            self.alpha / self.beta
        }
    }
}

fn closeness(tau: f64) -> impl Fn(&Candidate, &Candidate) -> Ordering {
    move |a, b| {
        let (va, vb) = (a.rank_value(), b.rank_value());
        (va - tau).abs().total_cmp(&(vb - tau).abs()).then(vb.total_cmp(&va))
    }
}

fn finish(mut candidates: Vec<Candidate>, tau: f64, fell_back: bool) -> Result<Extraction> {
    candidates.retain(|c| c.theta.is_finite() && c.rank_value().is_finite());
    if candidates.is_empty() {
        return Err(Error::NotRegular);
    }
    candidates.sort_by(closeness(tau));
    Ok(Extraction { candidates, fell_back })
}

fn theta_of(state: &SearchState, d: &DVector<f64>) -> f64 {
    let ne = (state.ra() * d).norm();
    let nf = (state.rb() * d).norm();
    if nf == 0.0 {
        f64::INFINITY
    } else {
        ne / nf
    }
}

/// Ritz extraction from the GSVD of `(R_A, R_B)`.
pub fn extract_standard(state: &SearchState, tau: f64) -> Result<Extraction> {
    let comps = small_gsvd(state.ra(), state.rb())?;
    let candidates = comps
        .into_iter()
        .map(|c| Candidate { theta: c.theta(), harmonic: None, d: c.d })
        .collect();
    finish(candidates, tau, false)
}

/// CPF-harmonic extraction; requires the `W`, `M` bookkeeping in `state`.
pub fn extract_cpf_harmonic(state: &SearchState, tau: f64) -> Result<Extraction> {
    let h = state
        .harmonic()
        .ok_or_else(|| Error::Config("CPF-harmonic extraction needs a state built with harmonic data".into()))?;
    let k = state.k();
    let (ra, rb) = (state.ra(), state.rb());
    let rta = ra.tr_mul(ra);
    let rtb = rb.tr_mul(rb);
    let t2 = tau * tau;
    let mut hc = DMatrix::<f64>::zeros(2 * k, 2 * k);
    hc.view_mut((0, 0), (k, k)).copy_from(&(&rta + &rtb * t2));
    hc.view_mut((0, k), (k, k)).copy_from(&(ra.transpose() * (-2.0 * tau)));
    hc.view_mut((k, 0), (k, k)).copy_from(&(ra * (-2.0 * tau)));
    hc.view_mut((k, k), (k, k)).copy_from(&(&h.m + DMatrix::<f64>::identity(k, k) * t2));
    let mut gc = DMatrix::<f64>::zeros(2 * k, 2 * k);
    gc.view_mut((0, 0), (k, k)).copy_from(&(&rtb * -tau));
    gc.view_mut((0, k), (k, k)).copy_from(&ra.transpose());
    gc.view_mut((k, 0), (k, k)).copy_from(ra);
    gc.view_mut((k, k), (k, k)).copy_from(&(DMatrix::<f64>::identity(k, k) * -tau));

    let pairs = spd_pencil_eig(&gc, &hc)?;
    let mut candidates = Vec::new();
    for p in pairs {
        let Some(z) = p.vector else { continue };
        if p.value == 0.0 {
            continue;
        }
        // negative phi approximates -sigma of the augmented matrix; its
        // Rayleigh quotient theta is still a valid approximation
        let phi = tau + 1.0 / p.value;
        let d = z.rows(0, k).into_owned();
        if d.norm() == 0.0 {
            continue;
        }
        let d = d.normalize();
        candidates.push(Candidate { theta: theta_of(state, &d), harmonic: Some(phi), d });
    }
    finish(candidates, tau, false)
}

/// IF-harmonic extraction from the cross products. Falls back to
/// [`extract_standard`] when the pencil has no admissible real pair.
pub fn extract_if_harmonic(state: &SearchState, tau: f64) -> Result<Extraction> {
    let t2 = tau * tau;
    let (ha, hb, hab) = (state.ha(), state.hb(), state.hab());
    let h_tau = ha + hb * (t2 * t2) - (hab + hab.transpose()) * t2;
    let g_tau = hab - hb * t2;
    let pairs = match general_pencil_eig_spd_metric(&g_tau, &h_tau) {
        Ok(p) => p,
        Err(Error::NotPositiveDefinite { .. }) => {
            log::debug!("IF-harmonic: H_tau not positive definite, using standard extraction");
            return standard_fallback(state, tau);
        }
        Err(e) => return Err(e),
    };
    let mut candidates = Vec::new();
    for p in pairs {
        let Some(d) = p.vector else { continue };
        if p.value == 0.0 {
            continue;
        }
        let phi2 = t2 + 1.0 / p.value;
        if !(phi2 >= 0.0) {
            continue;
        }
        let d = d.normalize();
        candidates.push(Candidate { theta: theta_of(state, &d), harmonic: Some(phi2.sqrt()), d });
    }
    match finish(candidates, tau, false) {
        Ok(e) => Ok(e),
        Err(Error::NotRegular) => {
            log::debug!("IF-harmonic: no admissible real pair, using standard extraction");
            standard_fallback(state, tau)
        }
        Err(e) => Err(e),
    }
}

fn standard_fallback(state: &SearchState, tau: f64) -> Result<Extraction> {
    let mut e = extract_standard(state, tau)?;
    e.fell_back = true;
    Ok(e)
}

/// `H_theta = X~^T (A^T A - theta^2 B^T B)^2 X~` from the cached cross products.
pub fn h_theta(state: &SearchState, theta: f64) -> DMatrix<f64> {
    let t2 = theta * theta;
    let hab = state.hab();
    state.ha() + state.hb() * (t2 * t2) - (hab + hab.transpose()) * t2
}

/// Unit `d` minimizing `||(A^T A - theta^2 B^T B) X~ d||`.
pub fn refine(state: &SearchState, theta: f64) -> Result<DVector<f64>> {
    if !(theta.is_finite() && theta >= 0.0) {
        return Err(Error::Config(format!("refinement needs a finite nonnegative value, got {theta}")));
    }
    let pairs = sym_eig(&h_theta(state, theta))?;
    pairs
        .into_iter()
        .next()
        .and_then(|p| p.vector)
        .ok_or_else(|| Error::Dimension("refinement on an empty subspace".into()))
}

/// Refined coordinates for each value, one column per entry of `thetas`.
pub fn refine_topk(state: &SearchState, thetas: &[f64]) -> Result<DMatrix<f64>> {
    let cols = thetas.iter().map(|&t| refine(state, t)).collect::<Result<Vec<_>>>()?;
    if cols.is_empty() {
        return Ok(DMatrix::zeros(state.k(), 0));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// The `k` candidates closest to `tau`, ties toward the larger value.
pub fn select_k_closest(candidates: &[Candidate], tau: f64, k: usize) -> Vec<Candidate> {
    let mut c = candidates.to_vec();
    c.sort_by(closeness(tau));
    c.truncate(k);
    c
}

/// Builds the approximate component for coordinates `d` (any scaling).
pub fn assemble_component(state: &SearchState, d: &DVector<f64>, pair: &MatrixPair) -> Result<ApproxComponent> {
    let nd = d.norm();
    if nd == 0.0 || !nd.is_finite() {
        return Err(Error::ZeroVector);
    }
    let d = d / nd;
    let e = state.ra() * &d;
    let f = state.rb() * &d;
    let (ne, nf) = (e.norm(), f.norm());
    let delta = ne.hypot(nf);
    if delta == 0.0 {
        return Err(Error::NotRegular);
    }
    let tiny = 1e-14 * delta;
    let mut degenerate = false;
    let (alpha, u) = if ne > tiny {
        (ne / delta, state.u() * (e / ne))
    } else {
        degenerate = true;
        (0.0, placeholder(state.u()))
    };
    let (beta, v) = if nf > tiny {
        (nf / delta, state.v() * (f / nf))
    } else {
        degenerate = true;
        (0.0, placeholder(state.v()))
    };
    let x = state.x() * (d / delta);
    let atu = pair.at_mul(&u);
    let btv = pair.bt_mul(&v);
    let y = &atu * alpha + &btv * beta;
    let r = &atu * beta - &btv * alpha;
    let res_norm = r.norm();
    Ok(ApproxComponent { alpha, beta, u, v, x, y, r, res_norm, degenerate })
}

fn placeholder(q: &DMatrix<f64>) -> DVector<f64> {
    if q.ncols() > 0 {
        q.column(0).into_owned()
    } else {
        let mut e = DVector::zeros(q.nrows());
        if q.nrows() > 0 {
            e[0] = 1.0;
        }
        e
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::weighted_residual_norm;
    use crate::sparse::{make_t, SparseCsr};
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e(n: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        v
    }

    fn full_state(a: &[f64], harmonic: bool) -> (MatrixPair, SearchState) {
        let n = a.len();
        let pair = MatrixPair::new(SparseCsr::from_diagonal(a), SparseCsr::identity(n)).unwrap();
        let mut s = SearchState::init(&pair, &e(n, 0), harmonic).unwrap();
        for i in 1..n {
            s.expand(&pair, &e(n, i)).unwrap();
        }
        (pair, s)
    }

    fn random_state(m: usize, n: usize, k: usize, harmonic: bool, seed: u64) -> (MatrixPair, SearchState, DMatrix<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let b = make_t(n).unwrap();
        let bd = b.to_dense();
        let pair = MatrixPair::new(SparseCsr::from_dense(&a), b).unwrap();
        let mut s = SearchState::init(&pair, &DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)), harmonic).unwrap();
        while s.k() < k {
            s.expand(&pair, &DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        }
        (pair, s, a, bd)
    }

    fn shifted_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, theta: f64, x: &DVector<f64>) -> f64 {
        (a.tr_mul(&(a * x)) - b.tr_mul(&(b * x)) * (theta * theta)).norm()
    }

    #[test]
    fn standard_selection_examples() {
        // a state whose factors are R_A = diag(0.8, 0.6), R_B = diag(0.6, 0.8)
        let pair = MatrixPair::new(SparseCsr::from_diagonal(&[0.8, 0.6]), SparseCsr::from_diagonal(&[0.6, 0.8])).unwrap();
        let mut s = SearchState::init(&pair, &e(2, 0), false).unwrap();
        s.expand(&pair, &e(2, 1)).unwrap();
        let hi = extract_standard(&s, 1.5).unwrap();
        assert!((hi.selected().theta - 4.0 / 3.0).abs() < 1e-14);
        assert!(hi.selected().d[1].abs() < 1e-14);
        let lo = extract_standard(&s, 0.5).unwrap();
        assert!((lo.selected().theta - 0.75).abs() < 1e-14);
        assert!(lo.selected().d[0].abs() < 1e-14);
    }

    #[test]
    fn standard_selection_matches_exhaustive_search() {
        let (_, s, _, _) = random_state(20, 12, 6, false, 1);
        let all = small_gsvd(s.ra(), s.rb()).unwrap();
        for tau in [0.1, 0.7, 1.3, 4.0] {
            let best = all.iter().map(|c| c.theta()).min_by(|a, b| (a - tau).abs().total_cmp(&(b - tau).abs())).unwrap();
            assert_eq!(extract_standard(&s, tau).unwrap().selected().theta, best);
        }
    }

    #[test]
    fn cpf_harmonic_full_space_is_exact() {
        let (pair, s) = full_state(&[2.0, 1.0], true);
        let ex = extract_cpf_harmonic(&s, 1.9).unwrap();
        let c = ex.selected();
        assert!((c.theta - 2.0).abs() < 1e-12);
        assert!(c.d[1].abs() < 1e-12);
        let comp = assemble_component(&s, &c.d, &pair).unwrap();
        assert!(comp.res_norm < 1e-12);
    }

    #[test]
    fn one_dimensional_exactness_for_all_strategies() {
        let (pair, _, a, b) = random_state(30, 20, 1, true, 2);
        let g = crate::oracle::dense_gsvd(&a, &b).unwrap();
        let target = &g.components[15];
        let s = SearchState::init(&pair, &target.x, true).unwrap();
        let tau = target.sigma() * 1.1;
        for ex in [extract_standard(&s, tau), extract_cpf_harmonic(&s, tau), extract_if_harmonic(&s, tau)] {
            let c = ex.unwrap().selected().clone();
            assert!((c.theta - target.sigma()).abs() <= 1e-12 * target.sigma(), "{} vs {}", c.theta, target.sigma());
            let comp = assemble_component(&s, &c.d, &pair).unwrap();
            assert!(comp.res_norm <= 1e-11 * (pair.norm1_a() + pair.norm1_b()));
        }
        let d = refine(&s, target.sigma()).unwrap();
        assert!(assemble_component(&s, &d, &pair).unwrap().res_norm <= 1e-11 * (pair.norm1_a() + pair.norm1_b()));
    }

    #[test]
    fn if_harmonic_full_space() {
        let (_, s) = full_state(&[3.0, 1.0], false);
        let ex = extract_if_harmonic(&s, 2.5).unwrap();
        assert!(!ex.fell_back);
        let c = ex.selected();
        assert!((c.harmonic.unwrap() - 3.0).abs() < 1e-12);
        assert!((c.theta - 3.0).abs() < 1e-12);
        assert!(c.d[1].abs() < 1e-12);
    }

    #[test]
    fn harmonic_values_improve_in_weighted_norm() {
        for seed in 0..5 {
            let (_, s, a, b) = random_state(50, 30, 6, true, 10 + seed);
            let tau = 1.5;
            for ex in [extract_cpf_harmonic(&s, tau).unwrap(), extract_if_harmonic(&s, tau).unwrap()] {
                let c = ex.selected();
                let x = s.x() * &c.d;
                let at_theta = weighted_residual_norm(&a, &b, c.theta, &x).unwrap();
                let at_phi = weighted_residual_norm(&a, &b, c.harmonic.unwrap(), &x).unwrap();
                assert!(at_theta <= at_phi + 1e-10 * at_phi.max(1.0), "{at_theta} > {at_phi}");
            }
        }
    }

    #[test]
    fn refine_examples() {
        let (_, s) = full_state(&[2.0, 1.0], false);
        assert_eq!(h_theta(&s, 2.0), dmatrix![0.0, 0.0; 0.0, 9.0]);
        let d = refine(&s, 2.0).unwrap();
        assert!((d[0].abs() - 1.0).abs() < 1e-15);

        let (_, s, _, _) = random_state(20, 12, 5, false, 3);
        let d0 = refine(&s, 0.0).unwrap();
        let want = sym_eig(s.ha()).unwrap()[0].vector.clone().unwrap();
        assert!((d0.dot(&want).abs() - 1.0).abs() < 1e-10);
        assert!(refine(&s, f64::INFINITY).is_err());
    }

    #[test]
    fn refine_minimizes_over_random_samples() {
        let (_, s, a, b) = random_state(40, 25, 7, false, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let theta = 0.9;
        let db = refine(&s, theta).unwrap();
        let best = shifted_residual(&a, &b, theta, &(s.x() * &db));
        let mut sampled = f64::INFINITY;
        for _ in 0..10_000 {
            let d = DVector::from_fn(7, |_, _| rng.random_range(-1.0..1.0)).normalize();
            sampled = sampled.min(shifted_residual(&a, &b, theta, &(s.x() * d)));
        }
        assert!(best <= sampled + 1e-12);
        let h = h_theta(&s, theta);
        let lam = sym_eig(&h).unwrap()[0].value;
        assert!((lam - best * best).abs() <= 1e-10 * h.amax());
    }

    #[test]
    fn refine_topk_columns() {
        let (_, s, _, _) = random_state(20, 12, 5, false, 6);
        let d1 = refine_topk(&s, &[0.5]).unwrap();
        assert_eq!(d1.ncols(), 1);
        let dup = refine_topk(&s, &[0.7, 0.7, 1.2]).unwrap();
        assert_eq!(dup.column(0), dup.column(1));
        for (j, t) in [0.7, 0.7, 1.2].into_iter().enumerate() {
            assert!((dup.column(j).into_owned() - refine(&s, t).unwrap()).norm() == 0.0);
        }
    }

    #[test]
    fn assemble_by_hand() {
        let (pair, s) = full_state(&[2.0, 1.0], false);
        let c = assemble_component(&s, &e(2, 0), &pair).unwrap();
        assert!((c.alpha - 2.0 / 5f64.sqrt()).abs() < 1e-15 && (c.beta - 1.0 / 5f64.sqrt()).abs() < 1e-15);
        assert!((c.x[0] - 1.0 / 5f64.sqrt()).abs() < 1e-15);
        assert_eq!(c.res_norm, 0.0);
    }

    #[test]
    fn assembled_component_invariants() {
        let (pair, s, a, b) = random_state(30, 20, 6, false, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let d = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
            let c = assemble_component(&s, &d, &pair).unwrap();
            assert!((c.alpha * c.alpha + c.beta * c.beta - 1.0).abs() <= 1e-13);
            assert!((c.u.norm() - 1.0).abs() <= 1e-12 && (c.v.norm() - 1.0).abs() <= 1e-12);
            assert!((&a * &c.x - &c.u * c.alpha).norm() <= 1e-11 * a.norm());
            assert!((&b * &c.x - &c.v * c.beta).norm() <= 1e-11 * b.norm());
            assert!((c.y.dot(&c.x) - 1.0).abs() <= 1e-10);
            let xn = c.x.dot(&(a.tr_mul(&(&a * &c.x)) + b.tr_mul(&(&b * &c.x))));
            assert!((xn - 1.0).abs() <= 1e-10);
            let r = a.tr_mul(&c.u) * c.beta - b.tr_mul(&c.v) * c.alpha;
            assert!((r - &c.r).norm() <= 1e-12 * (a.norm() + b.norm()));
        }
    }

    #[test]
    fn select_k_closest_examples() {
        let c = |t: f64| Candidate { theta: t, harmonic: None, d: DVector::zeros(1) };
        let got: Vec<f64> = select_k_closest(&[c(1.0), c(2.0), c(3.0)], 2.1, 2).iter().map(|c| c.theta).collect();
        assert_eq!(got, vec![2.0, 3.0]);
        let got: Vec<f64> = select_k_closest(&[c(1.0), c(3.0)], 2.0, 1).iter().map(|c| c.theta).collect();
        assert_eq!(got, vec![3.0]);
        assert_eq!(select_k_closest(&[c(1.0)], 0.0, 5).len(), 1);
    }

    proptest::proptest! {
        #[test]
        fn select_matches_exhaustive_sort(values in proptest::collection::vec(0.0f64..10.0, 1..20), tau in 0.0f64..10.0, k in 1usize..6) {
            let cands: Vec<Candidate> = values.iter().map(|&t| Candidate { theta: t, harmonic: None, d: DVector::zeros(1) }).collect();
            let got: Vec<f64> = select_k_closest(&cands, tau, k).iter().map(|c| c.theta).collect();
            let mut want = values.clone();
            want.sort_by(|a, b| (a - tau).abs().total_cmp(&(b - tau).abs()).then(b.total_cmp(a)));
            want.truncate(k);
            proptest::prop_assert_eq!(got, want);
        }
    }
}
