use nalgebra::DVector;

/// Result of a MINRES run on `Op x = b` from a zero initial guess.
#[derive(Debug, Clone)]
pub struct MinresOutcome {
    pub x: DVector<f64>,
    /// Recurrence estimate of `||b - Op x|| / ||b||` at exit.
    pub relres_estimate: f64,
    pub iterations: usize,
    /// Lanczos produced a zero vector before the tolerance was met.
    pub breakdown: bool,
    /// Recurrence residual norm after each iteration, starting with `||b||`.
    pub residual_history: Vec<f64>,
}

/// Unpreconditioned MINRES for a symmetric (possibly indefinite or singular)
/// operator.
pub fn minres<F>(apply: F, b: &DVector<f64>, tol: f64, max_iters: usize) -> MinresOutcome
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = b.len();
    let mut x = DVector::zeros(n);
    let beta1 = b.norm();
    let mut history = vec![beta1];
    if beta1 == 0.0 {
        return MinresOutcome {
            x,
            relres_estimate: 0.0,
            iterations: 0,
            breakdown: false,
            residual_history: history,
        };
    }

    let mut r1 = b.clone();
    let mut r2 = b.clone();
    let mut y = b.clone();
    let mut oldb = 0.0;
    let mut beta = beta1;
    let mut dbar = 0.0;
    let mut epsln = 0.0;
    let mut phibar = beta1;
    let mut cs = -1.0;
    let mut sn = 0.0;
    let mut w = DVector::zeros(n);
    let mut w2 = DVector::zeros(n);
    let mut iterations = 0;
    let mut breakdown = false;

    while iterations < max_iters {
        iterations += 1;
        let v = &y / beta;
        y = apply(&v);
        if iterations >= 2 {
            y.axpy(-beta / oldb, &r1, 1.0);
        }
        let alfa = v.dot(&y);
        y.axpy(-alfa / beta, &r2, 1.0);
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from(&y);
        oldb = beta;
        beta = y.norm();

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        let w1 = std::mem::replace(&mut w2, w.clone());
        w = (&v - &w1 * oldeps - &w2 * delta) / gamma;
        x.axpy(phi, &w, 1.0);

        history.push(phibar.abs());
        if phibar.abs() <= tol * beta1 {
            break;
        }
        if beta <= f64::EPSILON * beta1 {
            breakdown = true;
            break;
        }
    }
    MinresOutcome {
        x,
        relres_estimate: phibar.abs() / beta1,
        iterations,
        breakdown,
        residual_history: history,
    }
}
