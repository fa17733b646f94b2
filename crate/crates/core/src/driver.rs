//! The thick-restart Jacobi-Davidson outer loop with deflation and
//! purgation, for all six method variants.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dense::orthonormal_columns;
use crate::error::{Error, Result};
use crate::extraction::{
    assemble_component, extract_cpf_harmonic, extract_if_harmonic, extract_standard, refine, refine_topk,
    select_k_closest, ApproxComponent, Extraction,
};
use crate::inner::{inner_stop_tol, minres, solve_exact, CorrectionOperator, DenseNormals};
use crate::sparse::MatrixPair;
use crate::subspace::{concat, random_orthogonal, SearchState};

/// Expected number of correction solves (`k_max * l`) from which explicit
/// transposes are cached.
const TRANSPOSE_CACHE_THRESHOLD: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Cross-product-free, standard extraction.
    Cpf,
    /// Cross-product-free harmonic extraction.
    Cpfh,
    /// Inverse-free harmonic extraction.
    Ifh,
    Rcpf,
    Rcpfh,
    Rifh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Strategy {
    Standard,
    CpfHarmonic,
    IfHarmonic,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Cpf, Method::Cpfh, Method::Ifh, Method::Rcpf, Method::Rcpfh, Method::Rifh];

    pub fn is_refined(self) -> bool {
        matches!(self, Method::Rcpf | Method::Rcpfh | Method::Rifh)
    }

    /// Whether the method needs `(B^T B)^{-1}`, i.e. `B` of full column rank.
    pub fn needs_full_rank_b(self) -> bool {
        matches!(self, Method::Cpfh | Method::Rcpfh)
    }

    fn strategy(self) -> Strategy {
        match self {
            Method::Cpf | Method::Rcpf => Strategy::Standard,
            Method::Cpfh | Method::Rcpfh => Strategy::CpfHarmonic,
            Method::Ifh | Method::Rifh => Strategy::IfHarmonic,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Cpf => "cpf",
            Method::Cpfh => "cpfh",
            Method::Ifh => "ifh",
            Method::Rcpf => "rcpf",
            Method::Rcpfh => "rcpfh",
            Method::Rifh => "rifh",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method `{s}` (expected cpf, cpfh, ifh, rcpf, rcpfh or rifh)")))
    }
}

/// The constant `c` in the inner tolerance `min(2 c eps, 0.01)`, computed
/// from the shift `rho` and the current approximate values.
#[derive(Clone)]
pub struct InnerConstant(pub Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>);

impl Default for InnerConstant {
    fn default() -> Self {
        InnerConstant(Arc::new(|_, _| 1.0))
    }
}

impl fmt::Debug for InnerConstant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("InnerConstant(..)")
    }
}

#[derive(Debug, Clone, Default)]
pub enum StartVector {
    /// `mod(1:n, 4)`, normalized.
    #[default]
    Pattern,
    Given(DVector<f64>),
    /// Uniform random entries from the run seed.
    Random,
}

impl StartVector {
    pub fn pattern(n: usize) -> DVector<f64> {
        let v = DVector::from_fn(n, |i, _| ((i + 1) % 4) as f64);
        let norm = v.norm();
        if norm > 0.0 {
            v / norm
        } else {
            v
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub method: Method,
    pub tau: f64,
    /// Number of wanted components.
    pub num: usize,
    pub tol: f64,
    pub fixtol: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub inner_eps: f64,
    pub inner_constant: InnerConstant,
    /// MINRES iteration cap per correction equation; `None` means `n`.
    pub inner_max: Option<usize>,
    /// Total number of correction equations; `None` means `n`.
    pub inner_budget: Option<usize>,
    pub start: StartVector,
    pub seed: u64,
    /// Solve every correction equation with a dense direct solver.
    pub exact_inner: bool,
}

impl SolverConfig {
    pub fn new(method: Method, tau: f64, num: usize) -> Self {
        Self {
            method,
            tau,
            num,
            tol: 1e-8,
            fixtol: 1e-4,
            k_min: 3,
            k_max: 30,
            inner_eps: 1e-4,
            inner_constant: InnerConstant::default(),
            inner_max: None,
            inner_budget: None,
            start: StartVector::Pattern,
            seed: 0,
            exact_inner: false,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("target must be positive and finite, got {}", self.tau));
        }
        if self.num == 0 || self.num > n {
            return bad(format!("number of components must be in 1..={n}, got {}", self.num));
        }
        if !(self.tol > 0.0 && self.tol <= self.fixtol) {
            return bad(format!("need 0 < tol <= fixtol, got tol = {}, fixtol = {}", self.tol, self.fixtol));
        }
        if !(self.k_min >= 1 && self.k_min < self.k_max) {
            return bad(format!("need 1 <= k_min < k_max, got k_min = {}, k_max = {}", self.k_min, self.k_max));
        }
        if !(self.inner_eps > 0.0) {
            return bad(format!("inner tolerance must be positive, got {}", self.inner_eps));
        }
        if let StartVector::Given(x0) = &self.start {
            if x0.len() != n {
                return bad(format!("start vector has {} entries, expected {n}", x0.len()));
            }
        }
        Ok(())
    }
}

/// Converged components with `Y_c^T X_c = I`.
#[derive(Debug, Clone)]
pub struct ConvergedSet {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub res_norms: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeflateOutcome {
    Added { biorthogonalized: bool },
    Duplicate,
}

impl ConvergedSet {
    pub fn empty(m: usize, p: usize, n: usize) -> Self {
        Self {
            alphas: Vec::new(),
            betas: Vec::new(),
            u: DMatrix::zeros(m, 0),
            v: DMatrix::zeros(p, 0),
            x: DMatrix::zeros(n, 0),
            y: DMatrix::zeros(n, 0),
            res_norms: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn sigma(&self, i: usize) -> f64 {
        if self.betas[i] == 0.0 {
            f64::INFINITY
        } else {
            self.alphas[i] / self.betas[i]
        }
    }

    pub fn sigmas(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.sigma(i)).collect()
    }

    /// `max |Y_c^T X_c - I|`
    pub fn biorthogonality_error(&self) -> f64 {
        let j = self.len();
        if j == 0 {
            return 0.0;
        }
        (self.y.tr_mul(&self.x) - DMatrix::<f64>::identity(j, j)).amax()
    }

    /// Appends a converged component unless it repeats one already held.
    pub fn deflate(&mut self, comp: &ApproxComponent) -> DeflateOutcome {
        let theta = comp.theta();
        for i in 0..self.len() {
            let xi = self.x.column(i);
            let cos = (xi.dot(&comp.x) / (xi.norm() * comp.x.norm())).abs().min(1.0);
            let close = (self.sigma(i) - theta).abs() <= 1e-10 * theta.abs();
            if close && cos.acos() <= 1e-6 {
                return DeflateOutcome::Duplicate;
            }
        }
        let append = |m: &DMatrix<f64>, c: &DVector<f64>| {
            let mut out = m.clone().resize_horizontally(m.ncols() + 1, 0.0);
            out.set_column(m.ncols(), c);
            out
        };
        self.alphas.push(comp.alpha);
        self.betas.push(comp.beta);
        self.res_norms.push(comp.res_norm);
        self.u = append(&self.u, &comp.u);
        self.v = append(&self.v, &comp.v);
        self.x = append(&self.x, &comp.x);
        self.y = append(&self.y, &comp.y);
        let mut biorthogonalized = false;
        if self.biorthogonality_error() > 1e-8 {
            let j = self.len() - 1;
            let xc = self.x.columns(0, j).into_owned();
            let yc = self.y.columns(0, j).into_owned();
            let mut x = comp.x.clone();
            let mut y = comp.y.clone();
            x -= &xc * yc.tr_mul(&x);
            y -= &yc * xc.tr_mul(&y);
            let s = y.dot(&x);
            self.x.set_column(j, &(x / s));
            self.y.set_column(j, &y);
            biorthogonalized = true;
            log::debug!("deflation: biorthogonality restored for component {}", j + 1);
        }
        DeflateOutcome::Added { biorthogonalized }
    }
}

/// Notable events of one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    Deflated,
    /// A converged component repeated an earlier one and was discarded.
    RecomputeDetected,
    Biorthogonalized,
    Purged,
    Restarted,
    FreshStart,
    /// IF-harmonic extraction used the standard extraction instead.
    StandardFallback,
    /// The correction added nothing and a random direction was used.
    RandomExpansion,
    /// `rho = alpha / beta` was due but `beta == 0`.
    ShiftKept,
}

impl Event {
    pub fn name(self) -> &'static str {
        match self {
            Event::Deflated => "deflate",
            Event::RecomputeDetected => "recompute-detected",
            Event::Biorthogonalized => "biorthogonalize",
            Event::Purged => "purge",
            Event::Restarted => "restart",
            Event::FreshStart => "fresh-start",
            Event::StandardFallback => "standard-fallback",
            Event::RandomExpansion => "random-expansion",
            Event::ShiftKept => "shift-kept",
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Event {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        use Event::*;
        [Deflated, RecomputeDetected, Biorthogonalized, Purged, Restarted, FreshStart, StandardFallback, RandomExpansion, ShiftKept]
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown event `{s}`")))
    }
}

/// One outer iteration.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    /// 1-based index of the component being computed.
    pub component: usize,
    pub method: Method,
    pub k: usize,
    pub theta: f64,
    pub res_norm: f64,
    /// Shift of the correction equation solved in this iteration, if any.
    pub rho: Option<f64>,
    pub inner_iterations: usize,
    pub inner_relres: Option<f64>,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, Default)]
pub struct ConvergenceHistory {
    pub rows: Vec<IterationRecord>,
}

impl ConvergenceHistory {
    pub fn outer_iterations(&self) -> usize {
        self.rows.len()
    }

    pub fn inner_iterations(&self) -> usize {
        self.rows.iter().map(|r| r.inner_iterations).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    AllFound,
    BudgetExhausted { found: usize },
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub converged: ConvergedSet,
    pub history: ConvergenceHistory,
    pub status: Status,
    pub correction_solves: usize,
}

/// What an observer sees after each extraction.
pub struct IterationView<'a> {
    pub iteration: usize,
    pub state: &'a SearchState,
    pub extraction: &'a Extraction,
    /// Refined coordinates, for the refined methods.
    pub refined: Option<&'a DVector<f64>>,
    pub component: &'a ApproxComponent,
    pub converged: &'a ConvergedSet,
}

/// `||r|| <= (beta ||A||_1 + alpha ||B||_1) tol`
pub fn check_convergence(comp: &ApproxComponent, pair: &MatrixPair, tol: f64) -> bool {
    comp.res_norm <= (comp.beta * pair.norm1_a() + comp.alpha * pair.norm1_b()) * tol
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftChoice {
    pub rho: f64,
    /// The residual passed the `fixtol` test.
    pub adaptive: bool,
    /// The adaptive shift was due but `beta == 0`, so `tau` was kept.
    pub kept_tau: bool,
}

/// `rho = tau` until the residual passes the `fixtol` test, then `alpha / beta`.
pub fn rho_schedule(comp: &ApproxComponent, pair: &MatrixPair, tau: f64, fixtol: f64) -> ShiftChoice {
    if !check_convergence(comp, pair, fixtol) {
        return ShiftChoice { rho: tau, adaptive: false, kept_tau: false };
    }
    if comp.beta == 0.0 {
        return ShiftChoice { rho: tau, adaptive: true, kept_tau: true };
    }
    ShiftChoice { rho: comp.alpha / comp.beta, adaptive: true, kept_tau: false }
}

pub fn solve(pair: &MatrixPair, config: &SolverConfig) -> Result<SolveOutput> {
    solve_with_observer(pair, config, |_| {})
}

fn extract(method: Method, state: &SearchState, tau: f64) -> Result<Extraction> {
    match method.strategy() {
        Strategy::Standard => extract_standard(state, tau),
        Strategy::CpfHarmonic => extract_cpf_harmonic(state, tau),
        Strategy::IfHarmonic => extract_if_harmonic(state, tau),
    }
}

pub fn solve_with_observer<F>(pair: &MatrixPair, config: &SolverConfig, mut observer: F) -> Result<SolveOutput>
where
    F: FnMut(&IterationView<'_>),
{
    let (n, m, p) = (pair.n(), pair.m(), pair.p());
    config.validate(n)?;
    let method = config.method;
    if method.needs_full_rank_b() {
        pair.btb_solver()?;
    }
    if config.k_max * config.num >= TRANSPOSE_CACHE_THRESHOLD {
        pair.cache_transposes();
    }
    let normals = config.exact_inner.then(|| DenseNormals::new(pair));
    let harmonic = method.strategy() == Strategy::CpfHarmonic;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let budget = config.inner_budget.unwrap_or(n);
    let inner_max = config.inner_max.unwrap_or(n);
    // purges re-extract without a correction solve; each component adds at
    // most a few of those
    let max_outer = 2 * budget + 4 * config.num + 16;

    let x0 = match &config.start {
        StartVector::Pattern => StartVector::pattern(n),
        StartVector::Given(x) => x.clone(),
        StartVector::Random => random_orthogonal(&DMatrix::zeros(n, 0), &mut rng)?,
    };
    let mut state = SearchState::init(pair, &x0, harmonic)?;
    let mut set = ConvergedSet::empty(m, p, n);
    let mut history = ConvergenceHistory::default();
    let mut solves = 0usize;
    let mut pending: Vec<Event> = Vec::new();

    let status = loop {
        if state.k() == 0 {
            let yc = orthonormal_columns(&set.y);
            let fresh = random_orthogonal(&yc, &mut rng)?;
            state = SearchState::init(pair, &fresh, harmonic)?;
            pending.push(Event::FreshStart);
        }
        let ex = extract(method, &state, config.tau)?;
        if ex.fell_back {
            pending.push(Event::StandardFallback);
        }
        let selected = ex.selected();
        let refined = if method.is_refined() { Some(refine(&state, selected.theta)?) } else { None };
        let d = refined.as_ref().unwrap_or(&selected.d);
        let comp = assemble_component(&state, d, pair)?;
        observer(&IterationView {
            iteration: history.rows.len() + 1,
            state: &state,
            extraction: &ex,
            refined: refined.as_ref(),
            component: &comp,
            converged: &set,
        });
        let mut row = IterationRecord {
            iteration: history.rows.len() + 1,
            component: set.len() + 1,
            method,
            k: state.k(),
            theta: comp.theta(),
            res_norm: comp.res_norm,
            rho: None,
            inner_iterations: 0,
            inner_relres: None,
            events: std::mem::take(&mut pending),
        };

        if check_convergence(&comp, pair, config.tol) {
            match set.deflate(&comp) {
                DeflateOutcome::Added { biorthogonalized } => {
                    row.events.push(Event::Deflated);
                    if biorthogonalized {
                        row.events.push(Event::Biorthogonalized);
                    }
                    log::info!("component {} converged: sigma = {:.15e}", set.len(), comp.theta());
                }
                DeflateOutcome::Duplicate => {
                    row.events.push(Event::RecomputeDetected);
                    log::warn!("converged value {:.15e} repeats an earlier component", comp.theta());
                }
            }
            if set.len() == config.num {
                history.rows.push(row);
                break Status::AllFound;
            }
            state.purge(d)?;
            row.events.push(Event::Purged);
            history.rows.push(row);
            if history.rows.len() >= max_outer {
                break Status::BudgetExhausted { found: set.len() };
            }
            continue;
        }

        if solves >= budget || history.rows.len() >= max_outer {
            history.rows.push(row);
            break Status::BudgetExhausted { found: set.len() };
        }

        let shift = rho_schedule(&comp, pair, config.tau, config.fixtol);
        if shift.kept_tau {
            row.events.push(Event::ShiftKept);
        }
        let xp = concat(&set.x, &DMatrix::from_columns(&[comp.x.clone()]));
        let yp = concat(&set.y, &DMatrix::from_columns(&[comp.y.clone()]));
        let mut rhs = -&comp.r;
        if !set.is_empty() {
            rhs += &set.y * set.x.tr_mul(&comp.r);
        }
        let op = CorrectionOperator::new(pair, shift.rho, xp, yp)?;
        let report = match &normals {
            Some(nm) => solve_exact(&op, nm, &rhs)?,
            None => {
                let values: Vec<f64> = ex.candidates.iter().map(|c| c.theta).collect();
                let c = (config.inner_constant.0)(shift.rho, &values);
                minres(&op, &rhs, inner_stop_tol(config.inner_eps, c)?, inner_max)?
            }
        };
        solves += 1;
        row.rho = Some(shift.rho);
        row.inner_iterations = report.iterations;
        row.inner_relres = Some(report.relres);

        let room = n - set.len();
        let k_cap = config.k_max.min(room);
        if state.k() >= k_cap {
            let keep = config.k_min.min(k_cap.saturating_sub(1)).max(1);
            let top = select_k_closest(&ex.candidates, config.tau, keep);
            let d1 = if method.is_refined() {
                let thetas: Vec<f64> = top.iter().map(|c| c.theta).collect();
                refine_topk(&state, &thetas)?
            } else {
                DMatrix::from_columns(&top.iter().map(|c| c.d.clone()).collect::<Vec<_>>())
            };
            state.thick_restart(&d1)?;
            row.events.push(Event::Restarted);
        }
        if state.expand_or_perturb(pair, &report.t, &set.y, &mut rng)? {
            row.events.push(Event::RandomExpansion);
        }
        history.rows.push(row);
    };

    Ok(SolveOutput { converged: set, history, status, correction_solves: solves })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::dense_gsvd;
    use crate::sparse::{make_d, make_t, SparseCsr};
    use rand::Rng;

    fn comp(alpha: f64, beta: f64, res: f64) -> ApproxComponent {
        ApproxComponent {
            alpha,
            beta,
            u: DVector::zeros(1),
            v: DVector::zeros(1),
            x: DVector::zeros(1),
            y: DVector::zeros(1),
            r: DVector::zeros(1),
            res_norm: res,
            degenerate: false,
        }
    }

    fn unit_pair() -> MatrixPair {
        MatrixPair::new(SparseCsr::identity(1), SparseCsr::identity(1)).unwrap()
    }

    #[test]
    fn convergence_test_cases() {
        let pair = unit_pair();
        let h = 0.5f64.sqrt();
        assert!(check_convergence(&comp(h, h, 0.0), &pair, 1e-12));
        assert!(!check_convergence(&comp(h, h, 1.0), &pair, 1e-8));
        let bound = (h + h) * 0.25;
        assert!(check_convergence(&comp(h, h, bound), &pair, 0.25));
    }

    #[test]
    fn shift_schedule_cases() {
        let pair = unit_pair();
        let (a, b) = (2.0 / 5f64.sqrt(), 1.0 / 5f64.sqrt());
        assert_eq!(rho_schedule(&comp(a, b, 1.0), &pair, 1.7, 1e-4).rho, 1.7);
        let s = rho_schedule(&comp(a, b, 1e-9), &pair, 1.7, 1e-4);
        assert!(s.adaptive && (s.rho - 2.0).abs() < 1e-15);
        // fixtol = tol: the switch happens only at the convergence boundary
        let bound = (a + b) * 1e-8;
        assert!(rho_schedule(&comp(a, b, bound), &pair, 1.7, 1e-8).adaptive);
        assert!(!rho_schedule(&comp(a, b, bound * 1.01), &pair, 1.7, 1e-8).adaptive);
        let s = rho_schedule(&comp(1.0, 0.0, 0.0), &pair, 1.7, 1e-4);
        assert!(s.kept_tau && s.rho == 1.7);
    }

    #[test]
    fn config_validation() {
        let mut c = SolverConfig::new(Method::Rcpf, 1.0, 1);
        assert!(c.validate(10).is_ok());
        c.k_min = 30;
        assert!(c.validate(10).is_err());
        let mut c = SolverConfig::new(Method::Rcpf, 1.0, 1);
        c.tol = 1e-3;
        assert!(c.validate(10).is_err());
        assert!(SolverConfig::new(Method::Rcpf, -1.0, 1).validate(10).is_err());
        assert!(SolverConfig::new(Method::Rcpf, 1.0, 11).validate(10).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("jd".parse::<Method>().is_err());
    }

    #[test]
    fn diagonal_three_by_three_all_methods() {
        let a = SparseCsr::from_diagonal(&[5.0, 3.0, 1.0]);
        let pair = MatrixPair::new(a, SparseCsr::identity(3)).unwrap();
        for method in Method::ALL {
            let out = solve(&pair, &SolverConfig::new(method, 4.9, 1)).unwrap();
            assert_eq!(out.status, Status::AllFound, "{method}");
            assert!(out.history.outer_iterations() <= 3, "{method}: {}", out.history.outer_iterations());
            assert!((out.converged.sigma(0) - 5.0).abs() < 1e-10);
            let x = out.converged.x.column(0);
            assert!((x[0].abs() - 1.0 / 26f64.sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn full_spectrum_of_a_small_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = DMatrix::from_fn(6, 4, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(5, 4, |_, _| rng.random_range(-1.0..1.0));
        let oracle = dense_gsvd(&a, &b).unwrap();
        let pair = MatrixPair::new(SparseCsr::from_dense(&a), SparseCsr::from_dense(&b)).unwrap();
        let sig = oracle.sigmas();
        for method in [Method::Rcpf, Method::Ifh, Method::Rifh] {
            let cfg = SolverConfig::new(method, sig[3] * 1.01, 4);
            let out = solve(&pair, &cfg).unwrap();
            assert_eq!(out.status, Status::AllFound, "{method}");
            let mut got = out.converged.sigmas();
            got.sort_by(f64::total_cmp);
            for (g, w) in got.iter().zip(&sig) {
                assert!((g - w).abs() <= 1e-8 * w, "{method}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn exact_start_converges_without_solves() {
        let n = 30;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DMatrix::from_fn(40, n, |_, _| rng.random_range(-1.0..1.0));
        let b = make_t(n).unwrap();
        let oracle = dense_gsvd(&a, &b.to_dense()).unwrap();
        let target = &oracle.components[n - 1];
        let pair = MatrixPair::new(SparseCsr::from_dense(&a), b).unwrap();
        let mut cfg = SolverConfig::new(Method::Rcpf, target.sigma() * 1.01, 1);
        cfg.start = StartVector::Given(target.x.clone());
        let out = solve(&pair, &cfg).unwrap();
        assert_eq!(out.status, Status::AllFound);
        assert_eq!(out.correction_solves, 0);
        assert_eq!(out.history.outer_iterations(), 1);
    }

    #[test]
    fn cpf_harmonic_rejects_rank_deficient_b() {
        let pair = MatrixPair::new(SparseCsr::identity(5), make_d(5).unwrap()).unwrap();
        for method in [Method::Cpfh, Method::Rcpfh] {
            let err = solve(&pair, &SolverConfig::new(method, 1.0, 1)).unwrap_err();
            assert!(matches!(err, Error::RankDeficientB { .. }));
            assert!(err.to_string().contains("ifh"));
        }
    }

    #[test]
    fn deflation_cases() {
        let mut set = ConvergedSet::empty(2, 2, 2);
        let s5 = 5f64.sqrt();
        let mk = |alpha: f64, beta: f64, i: usize, scale: f64| {
            let mut x = DVector::zeros(2);
            x[i] = 1.0 / scale;
            let mut y = DVector::zeros(2);
            y[i] = scale;
            let mut u = DVector::zeros(2);
            u[i] = 1.0;
            ApproxComponent { alpha, beta, u: u.clone(), v: u, x, y, r: DVector::zeros(2), res_norm: 0.0, degenerate: false }
        };
        assert_eq!(set.deflate(&mk(2.0 / s5, 1.0 / s5, 0, s5)), DeflateOutcome::Added { biorthogonalized: false });
        assert_eq!(set.deflate(&mk(1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt(), 1, 2f64.sqrt())), DeflateOutcome::Added { biorthogonalized: false });
        assert_eq!(set.biorthogonality_error(), 0.0);
        assert_eq!(set.deflate(&mk(2.0 / s5, 1.0 / s5, 0, s5)), DeflateOutcome::Duplicate);
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn converged_set_invariants_on_a_random_run() {
        let (m, n) = (60, 40);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let b = make_t(n).unwrap();
        let bd = b.to_dense();
        let oracle = dense_gsvd(&a, &bd).unwrap();
        let pair = MatrixPair::new(SparseCsr::from_dense(&a), b).unwrap();
        let tau = oracle.sigmas()[n - 1] * 1.01;
        let out = solve(&pair, &SolverConfig::new(Method::Rcpf, tau, 3)).unwrap();
        assert_eq!(out.status, Status::AllFound);
        let set = &out.converged;
        assert!(set.biorthogonality_error() <= 1e-9);
        let ca = DMatrix::from_diagonal(&DVector::from_vec(set.alphas.clone()));
        let sb = DMatrix::from_diagonal(&DVector::from_vec(set.betas.clone()));
        assert!((&a * &set.x - &set.u * ca).amax() <= 1e-9 * a.norm());
        assert!((&bd * &set.x - &set.v * sb).amax() <= 1e-9 * bd.norm());
        let mut got = set.sigmas();
        got.sort_by(f64::total_cmp);
        let mut want: Vec<f64> = oracle.closest_to(tau).iter().take(3).map(|c| c.sigma()).collect();
        want.sort_by(f64::total_cmp);
        for (x, w) in got.iter().zip(&want) {
            assert!((x - w).abs() <= 1e-7 * w);
        }
        assert_eq!(out.history.rows.iter().filter(|r| r.events.contains(&Event::Deflated)).count(), 3);
    }
}
