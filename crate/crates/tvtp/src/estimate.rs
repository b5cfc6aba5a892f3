//! Quasi-Newton maximization of the sample criterion with multi-start,
//! numerical derivatives, and the two covariance estimators (empirical
//! Hessian; sandwich with an optional Bartlett long-run middle).
//!
//! The optimizer works on the mean log-likelihood in unconstrained space
//! (so the gradient tolerance is scale-free), using the analytic
//! Fisher-identity score. Reported estimates, Hessians and covariance
//! matrices are in the original parameter space and refer to the TOTAL
//! log-likelihood.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TvtpError};
use crate::filter::{forward_filter, loglik_and_score, Dataset, InitRule};
use crate::linalg;
use crate::model::{JointParams, Layout, ModelConfig, ParamVector, TransPair, Variant};

/// Middle-matrix choice for the sandwich covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Hac {
    /// Outer product of per-step scores (no serial-correlation correction).
    None,
    /// Bartlett-weighted long-run variance with the given lag.
    Bartlett { lag: usize },
}

impl Hac {
    /// The conventional automatic lag `floor(4 (n/100)^{2/9})`.
    pub fn default_bartlett_lag(n_obs: usize) -> usize {
        (4.0 * (n_obs as f64 / 100.0).powf(2.0 / 9.0)).floor().max(0.0) as usize
    }
}

/// Finite-difference step rule: `h_j = max(rel * |theta_j|, floor)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StepRule {
    pub rel: f64,
    pub floor: f64,
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule { rel: 1e-6, floor: 1e-7 }
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Starting points; the winner is the start with the highest maximized
    /// likelihood (ties broken by lowest index).
    pub starts: Vec<ParamVector>,
    /// Sup-norm tolerance on the mean log-likelihood gradient in
    /// unconstrained space.
    pub grad_tol: f64,
    pub max_iter: usize,
    pub fd: StepRule,
    pub hac: Hac,
    pub init: InitRule,
}

impl FitOptions {
    pub fn new(starts: Vec<ParamVector>) -> Self {
        FitOptions {
            starts,
            grad_tol: 1e-8,
            max_iter: 500,
            fd: StepRule::default(),
            hac: Hac::None,
            init: InitRule::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.starts.is_empty() {
            return Err(TvtpError::Domain("at least one start is required".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(TvtpError::Domain("grad_tol must be > 0".into()));
        }
        if self.max_iter < 1 {
            return Err(TvtpError::Domain("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// Which standard-error flavor a caller wants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeFlavor {
    Hessian,
    Sandwich,
}

#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub config: ModelConfig,
    pub param_names: Vec<String>,
    pub theta_hat: ParamVector,
    /// Total log-likelihood at the estimate.
    pub loglik: f64,
    pub mean_loglik: f64,
    /// Sup-norm of the mean log-likelihood gradient (unconstrained space)
    /// at the estimate.
    pub grad_norm: f64,
    /// Hessian of the TOTAL log-likelihood at the estimate, original space.
    pub hessian: DMatrix<f64>,
    pub hessian_neg_definite: bool,
    /// `(-hessian)^{-1}` when the Hessian is negative definite.
    pub cov_hessian: Option<DMatrix<f64>>,
    pub cov_sandwich: Option<DMatrix<f64>>,
    pub se_hessian: Option<Vec<f64>>,
    pub se_sandwich: Option<Vec<f64>>,
    pub converged: bool,
    pub start_index: usize,
    pub n_iter: usize,
    /// Number of scored observations.
    pub n_obs: usize,
    /// Set when some AR characteristic root has modulus ≤ 1.05.
    pub ar_root_warning: Option<String>,
}

impl EstimationResult {
    pub fn se(&self, flavor: SeFlavor) -> Option<&Vec<f64>> {
        match flavor {
            SeFlavor::Hessian => self.se_hessian.as_ref(),
            SeFlavor::Sandwich => self.se_sandwich.as_ref(),
        }
    }
}

struct BfgsRun {
    raw: Vec<f64>,
    value: f64,
    grad_norm: f64,
    n_iter: usize,
    converged: bool,
}

/// Minimize `f` with BFGS and a strong-Wolfe line search. `eval` returns
/// `(f, grad)` or `None` outside the domain.
fn bfgs_minimize<F>(eval: F, x0: Vec<f64>, grad_tol: f64, max_iter: usize) -> Option<BfgsRun>
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let q = x0.len();
    let mut x = x0;
    let (mut fx, mut gx) = eval(&x)?;
    let mut h = DMatrix::<f64>::identity(q, q);
    let mut n_iter = 0usize;
    let mut converged = sup_norm(&gx) <= grad_tol;
    let mut first = true;
    let mut stall = 0usize;

    while !converged && n_iter < max_iter {
        n_iter += 1;
        let g_vec = DMatrix::from_column_slice(q, 1, &gx);
        let mut d_vec = -&h * &g_vec;
        let mut dg: f64 = d_vec.iter().zip(gx.iter()).map(|(d, g)| d * g).sum();
        if !(dg < 0.0) {
            // Not a descent direction: restart from steepest descent.
            h = DMatrix::identity(q, q);
            d_vec = -g_vec.clone();
            dg = -gx.iter().map(|g| g * g).sum::<f64>();
            if dg == 0.0 {
                break;
            }
        }
        let d: Vec<f64> = d_vec.iter().copied().collect();
        let phi = |a: f64| -> Option<(f64, Vec<f64>, f64)> {
            let xt: Vec<f64> = x.iter().zip(d.iter()).map(|(xi, di)| xi + a * di).collect();
            let (f, g) = eval(&xt)?;
            let slope = g.iter().zip(d.iter()).map(|(gi, di)| gi * di).sum::<f64>();
            Some((f, g, slope))
        };
        let a_init = if first { (1.0 / sup_norm(&gx).max(1.0)).min(1.0) } else { 1.0 };
        let ls = wolfe_search(&phi, fx, dg, a_init, C1, C2);
        let (alpha, f_new, g_new) = match ls {
            Some(v) => v,
            None => break, // no acceptable step in this direction
        };
        let s: Vec<f64> = d.iter().map(|di| alpha * di).collect();
        let y: Vec<f64> = g_new.iter().zip(gx.iter()).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        if first && sy > 0.0 && yy > 0.0 {
            h *= sy / yy;
            first = false;
        }
        if sy > 1e-12 * norm2(&s) * norm2(&y) {
            bfgs_update(&mut h, &s, &y, sy);
        }
        for (xi, si) in x.iter_mut().zip(s.iter()) {
            *xi += si;
        }
        let df = (fx - f_new).abs();
        if df <= 1e-14 * (1.0 + fx.abs()) {
            stall += 1;
        } else {
            stall = 0;
        }
        fx = f_new;
        gx = g_new;
        converged = sup_norm(&gx) <= grad_tol;
        if stall >= 2 {
            break;
        }
    }
    Some(BfgsRun { raw: x, value: -fx, grad_norm: sup_norm(&gx), n_iter, converged })
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, &b| a.max(b.abs()))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn bfgs_update(h: &mut DMatrix<f64>, s: &[f64], y: &[f64], sy: f64) {
    let q = s.len();
    let rho = 1.0 / sy;
    let s_v = DMatrix::from_column_slice(q, 1, s);
    let y_v = DMatrix::from_column_slice(q, 1, y);
    let hy = &*h * &y_v;
    let yhy = (y_v.transpose() * &hy)[(0, 0)];
    // H <- H - rho (s y' H + H y s') + rho^2 (y' H y) s s' + rho s s'
    let term = &s_v * hy.transpose();
    *h -= rho * (&term + term.transpose());
    *h += (rho * rho * yhy + rho) * (&s_v * s_v.transpose());
}

/// Strong-Wolfe line search (bracket + zoom). `phi(a)` returns
/// `(f, grad, slope)` at `x + a d`; `f0`/`slope0` are the values at `a = 0`.
fn wolfe_search<P>(
    phi: &P,
    f0: f64,
    slope0: f64,
    a_init: f64,
    c1: f64,
    c2: f64,
) -> Option<(f64, f64, Vec<f64>)>
where
    P: Fn(f64) -> Option<(f64, Vec<f64>, f64)>,
{
    let mut a_prev = 0.0;
    let mut f_prev = f0;
    let mut slope_prev = slope0;
    let mut a = a_init;
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    for i in 0..25 {
        match phi(a) {
            Some((f, g, slope)) => {
                if f > f0 + c1 * a * slope0 || (i > 0 && f >= f_prev) {
                    return zoom(phi, f0, slope0, a_prev, f_prev, slope_prev, a, f, c1, c2)
                        .or(best);
                }
                if slope.abs() <= -c2 * slope0 {
                    return Some((a, f, g));
                }
                if f < f0 + c1 * a * slope0 {
                    best = Some((a, f, g.clone()));
                }
                if slope >= 0.0 {
                    return zoom(phi, f0, slope0, a, f, slope, a_prev, f_prev, c1, c2).or(best);
                }
                a_prev = a;
                f_prev = f;
                slope_prev = slope;
                a *= 2.0;
            }
            None => {
                // Stepped outside the domain: shrink toward the last good point.
                a = a_prev + 0.5 * (a - a_prev);
                if a - a_prev < 1e-16 {
                    return best;
                }
            }
        }
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn zoom<P>(
    phi: &P,
    f0: f64,
    slope0: f64,
    mut a_lo: f64,
    mut f_lo: f64,
    mut slope_lo: f64,
    mut a_hi: f64,
    mut f_hi: f64,
    c1: f64,
    c2: f64,
) -> Option<(f64, f64, Vec<f64>)>
where
    P: Fn(f64) -> Option<(f64, Vec<f64>, f64)>,
{
    let mut fallback: Option<(f64, f64, Vec<f64>)> = None;
    for _ in 0..40 {
        // Quadratic interpolation using (a_lo, f_lo, slope_lo) and f_hi,
        // safeguarded by bisection. The bracket may be traversed in either
        // direction, so interpolate via the fraction t in (0, 1).
        let da = a_hi - a_lo;
        let t = if f_hi.is_finite() {
            let denom = 2.0 * (f_hi - f_lo - slope_lo * da);
            if denom.abs() > 0.0 {
                (-slope_lo * da / denom).clamp(0.1, 0.9)
            } else {
                0.5
            }
        } else {
            0.5
        };
        let mut a = a_lo + t * da;
        if !a.is_finite() {
            a = a_lo + 0.5 * da;
        }
        match phi(a) {
            Some((f, g, slope)) => {
                if f > f0 + c1 * a * slope0 || f >= f_lo {
                    a_hi = a;
                    f_hi = f;
                } else {
                    if slope.abs() <= -c2 * slope0 {
                        return Some((a, f, g));
                    }
                    fallback = Some((a, f, g.clone()));
                    if slope * (a_hi - a_lo) >= 0.0 {
                        a_hi = a_lo;
                        f_hi = f_lo;
                    }
                    a_lo = a;
                    f_lo = f;
                    slope_lo = slope;
                }
            }
            None => {
                a_hi = a;
                f_hi = f64::INFINITY;
            }
        }
        if (a_hi - a_lo).abs() < 1e-14 * (1.0 + a_lo.abs()) {
            break;
        }
    }
    // No strong-Wolfe point found; settle for the best Armijo point seen.
    fallback.or_else(|| {
        if f_lo < f0 && a_lo > 0.0 {
            phi(a_lo).map(|(f, g, _)| (a_lo, f, g))
        } else {
            None
        }
    })
}

/// Maximize the mean log-likelihood from every start; the winner is the
/// highest maximized value with ties broken by the lowest start index.
pub fn fit(data: &Dataset, config: &ModelConfig, options: &FitOptions) -> Result<EstimationResult> {
    options.validate()?;
    config.validate()?;
    let layout = Layout::new(config);
    for (i, s) in options.starts.iter().enumerate() {
        s.validate(config)
            .map_err(|e| TvtpError::Domain(format!("start {i} is invalid: {e}")))?;
    }

    let eval = |raw: &[f64]| -> Option<(f64, Vec<f64>)> {
        let params = layout.unpack(raw).ok()?;
        let (loglik, n, score) = loglik_and_score(data, &params, config, &options.init).ok()?;
        if !loglik.is_finite() {
            return None;
        }
        let jac = layout.transform_jacobian(&params);
        let nf = n as f64;
        let grad: Vec<f64> =
            score.iter().zip(jac.iter()).map(|(g, j)| -g * j / nf).collect();
        Some((-loglik / nf, grad))
    };

    let runs: Vec<std::result::Result<BfgsRun, String>> = options
        .starts
        .par_iter()
        .map(|start| {
            let raw = layout.pack(start).map_err(|e| e.to_string())?.raw;
            bfgs_minimize(&eval, raw, options.grad_tol, options.max_iter)
                .ok_or_else(|| "objective not finite at start".to_string())
        })
        .collect();

    let mut winner: Option<(usize, &BfgsRun)> = None;
    for (i, run) in runs.iter().enumerate() {
        if let Ok(r) = run {
            let better = match winner {
                None => true,
                Some((_, best)) => r.value > best.value,
            };
            if better {
                winner = Some((i, r));
            }
        }
    }
    let (start_index, run) = winner.ok_or_else(|| {
        let diags: Vec<String> = runs
            .iter()
            .enumerate()
            .map(|(i, r)| match r {
                Ok(_) => format!("start {i}: ok"),
                Err(e) => format!("start {i}: {e}"),
            })
            .collect();
        TvtpError::Estimation(format!("all starts failed: {}", diags.join("; ")))
    })?;

    let theta_hat = layout.unpack(&run.raw)?;
    let out = forward_filter(data, &theta_hat, config, &options.init)?;
    let n_obs = out.step_loglik.len();

    let total_loglik = |p: &ParamVector| -> Result<f64> {
        forward_filter(data, p, config, &options.init).map(|o| o.loglik)
    };
    let hessian = numerical_hessian(&total_loglik, &theta_hat, config, &options.fd)?;
    let hessian_neg_definite = linalg::is_negative_definite(&hessian);

    let (cov_hessian, cov_sandwich) = if hessian_neg_definite {
        let ch = linalg::invert(&(-hessian.clone()), "negative Hessian")?;
        let cs = sandwich_with_hessian(data, config, &theta_hat, &options.init, options.hac, &hessian, &options.fd)?;
        (Some(ch), Some(cs))
    } else {
        (None, None)
    };
    let se_of = |cov: &Option<DMatrix<f64>>| {
        cov.as_ref()
            .map(|c| (0..c.nrows()).map(|j| c[(j, j)].max(0.0).sqrt()).collect::<Vec<f64>>())
    };
    let se_hessian = se_of(&cov_hessian);
    let se_sandwich = se_of(&cov_sandwich);

    let moduli = theta_hat.ar_root_moduli();
    let ar_root_warning = moduli
        .iter()
        .any(|&m| m <= 1.05)
        .then(|| format!("AR characteristic root modulus within 5% of the unit circle: {moduli:?}"));

    Ok(EstimationResult {
        config: *config,
        param_names: layout.names(),
        theta_hat,
        loglik: out.loglik,
        mean_loglik: out.mean_loglik,
        grad_norm: run.grad_norm,
        hessian,
        hessian_neg_definite,
        cov_hessian,
        cov_sandwich,
        se_hessian,
        se_sandwich,
        converged: run.converged,
        start_index,
        n_iter: run.n_iter,
        n_obs,
        ar_root_warning,
    })
}

/// Central finite-difference gradient of `f` over the free parameters, in
/// original space.
pub fn numerical_gradient<F>(
    f: &F,
    at: &ParamVector,
    config: &ModelConfig,
    step: &StepRule,
) -> Result<Vec<f64>>
where
    F: Fn(&ParamVector) -> Result<f64>,
{
    let layout = Layout::new(config);
    let names = layout.names();
    let mut grad = vec![0.0; layout.n_free()];
    for j in 0..layout.n_free() {
        let base = layout.get_free(at, j);
        let h = (step.rel * base.abs()).max(step.floor);
        let mut up = at.clone();
        layout.set_free(&mut up, j, base + h);
        let mut dn = at.clone();
        layout.set_free(&mut dn, j, base - h);
        let fu = f(&up)?;
        let fd = f(&dn)?;
        if !fu.is_finite() || !fd.is_finite() {
            return Err(TvtpError::Numeric(format!(
                "objective not finite in the stencil of coordinate {} ({})",
                j, names[j]
            )));
        }
        grad[j] = (fu - fd) / (2.0 * h);
    }
    Ok(grad)
}

/// Central finite-difference Hessian of `f`, symmetrized as `(H + H')/2`.
///
/// Second differences need a wider stencil than first differences: the
/// per-coordinate step is `max(sqrt(rel) |theta_j|, sqrt(floor))`, which
/// keeps the roundoff floor of the difference quotient below the stated
/// quadratic-recovery tolerance.
pub fn numerical_hessian<F>(
    f: &F,
    at: &ParamVector,
    config: &ModelConfig,
    step: &StepRule,
) -> Result<DMatrix<f64>>
where
    F: Fn(&ParamVector) -> Result<f64>,
{
    let layout = Layout::new(config);
    let names = layout.names();
    let q = layout.n_free();
    let rel = step.rel.sqrt();
    let floor = step.floor.sqrt();
    let h_of = |j: usize| (rel * layout.get_free(at, j).abs()).max(floor);
    let eval_at = |shifts: &[(usize, f64)]| -> Result<f64> {
        let mut p = at.clone();
        for &(j, dh) in shifts {
            layout.set_free(&mut p, j, layout.get_free(at, j) + dh);
        }
        let v = f(&p)?;
        if !v.is_finite() {
            let coords: Vec<&str> = shifts.iter().map(|&(j, _)| names[j].as_str()).collect();
            return Err(TvtpError::Numeric(format!(
                "objective not finite in the stencil of coordinate(s) {}",
                coords.join(", ")
            )));
        }
        Ok(v)
    };
    let f0 = eval_at(&[])?;
    let mut hess = DMatrix::<f64>::zeros(q, q);
    for j in 0..q {
        let hj = h_of(j);
        let fu = eval_at(&[(j, hj)])?;
        let fd = eval_at(&[(j, -hj)])?;
        hess[(j, j)] = (fu - 2.0 * f0 + fd) / (hj * hj);
        for i in 0..j {
            let hi = h_of(i);
            let fpp = eval_at(&[(i, hi), (j, hj)])?;
            let fpm = eval_at(&[(i, hi), (j, -hj)])?;
            let fmp = eval_at(&[(i, -hi), (j, hj)])?;
            let fmm = eval_at(&[(i, -hi), (j, -hj)])?;
            let v = (fpp - fpm - fmp + fmm) / (4.0 * hi * hj);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    linalg::symmetrize(&mut hess);
    Ok(hess)
}

/// Per-step score increments `∇_θ log p_t` at `theta`, by central finite
/// differences of the per-step log conditional densities. Rows index scored
/// observations, columns free parameters (original space).
pub fn step_scores(
    data: &Dataset,
    config: &ModelConfig,
    theta: &ParamVector,
    init: &InitRule,
    step: &StepRule,
) -> Result<DMatrix<f64>> {
    let layout = Layout::new(config);
    let q = layout.n_free();
    let base_out = forward_filter(data, theta, config, init)?;
    let n = base_out.step_loglik.len();
    let mut d = DMatrix::<f64>::zeros(n, q);
    for j in 0..q {
        let base = layout.get_free(theta, j);
        let h = (step.rel * base.abs()).max(step.floor);
        let mut up = theta.clone();
        layout.set_free(&mut up, j, base + h);
        let mut dn = theta.clone();
        layout.set_free(&mut dn, j, base - h);
        let su = forward_filter(data, &up, config, init)?.step_loglik;
        let sd = forward_filter(data, &dn, config, init)?.step_loglik;
        for t in 0..n {
            d[(t, j)] = (su[t] - sd[t]) / (2.0 * h);
        }
    }
    Ok(d)
}

/// Long-run variance of the rows of `d` (columns centered first): the outer
/// product at lag zero plus Bartlett-weighted autocovariances.
pub(crate) fn long_run_variance(d: &DMatrix<f64>, lag: usize) -> DMatrix<f64> {
    let n = d.nrows();
    let q = d.ncols();
    let mut centered = d.clone();
    for j in 0..q {
        let mean = d.column(j).sum() / n as f64;
        for t in 0..n {
            centered[(t, j)] -= mean;
        }
    }
    let gamma = |l: usize| -> DMatrix<f64> {
        let mut g = DMatrix::<f64>::zeros(q, q);
        for t in l..n {
            let row_t = centered.row(t);
            let row_tl = centered.row(t - l);
            for a in 0..q {
                for b in 0..q {
                    g[(a, b)] += row_t[a] * row_tl[b];
                }
            }
        }
        g / n as f64
    };
    let mut b = gamma(0);
    for l in 1..=lag.min(n.saturating_sub(1)) {
        let w = 1.0 - l as f64 / (lag as f64 + 1.0);
        let gl = gamma(l);
        b += w * (&gl + gl.transpose());
    }
    b
}

/// Assemble `A^{-1} B A^{-1} / n` (the sandwich in estimator units) from its
/// parts; exposed for diagnostics and algebra checks.
pub fn sandwich_from_parts(a: &DMatrix<f64>, b: &DMatrix<f64>, n_obs: usize) -> Result<DMatrix<f64>> {
    let a_inv = linalg::invert(a, "sandwich bread matrix A")?;
    let mut cov = &a_inv * b * &a_inv / n_obs as f64;
    linalg::symmetrize(&mut cov);
    Ok(cov)
}

fn sandwich_with_hessian(
    data: &Dataset,
    config: &ModelConfig,
    theta: &ParamVector,
    init: &InitRule,
    hac: Hac,
    hessian: &DMatrix<f64>,
    step: &StepRule,
) -> Result<DMatrix<f64>> {
    let d = step_scores(data, config, theta, init, step)?;
    let n = d.nrows();
    let a = -hessian / n as f64;
    let lag = match hac {
        Hac::None => 0,
        Hac::Bartlett { lag } => lag,
    };
    let b = long_run_variance(&d, lag);
    sandwich_from_parts(&a, &b, n)
}

/// Sandwich covariance `A^{-1} B A^{-1} / n` at `theta`: `A` is the mean
/// negative per-observation Hessian (from the numerical Hessian of the
/// total log-likelihood), `B` the (optionally Bartlett-weighted) long-run
/// variance of the per-step score increments. Scaled so the diagonal is the
/// variance of the estimator itself.
pub fn sandwich_cov(
    data: &Dataset,
    config: &ModelConfig,
    theta: &ParamVector,
    init: &InitRule,
    hac: Hac,
) -> Result<DMatrix<f64>> {
    let step = StepRule::default();
    let total = |p: &ParamVector| -> Result<f64> {
        forward_filter(data, p, config, init).map(|o| o.loglik)
    };
    let hessian = numerical_hessian(&total, theta, config, &step)?;
    sandwich_with_hessian(data, config, theta, init, hac, &hessian, &step)
}

/// Studentized statistics `(theta_j - null_j) / se_j` for the chosen SE
/// flavor.
pub fn t_stats(result: &EstimationResult, null_values: &[f64], flavor: SeFlavor) -> Result<Vec<f64>> {
    let layout = Layout::new(&result.config);
    let se = result
        .se(flavor)
        .ok_or_else(|| TvtpError::Numeric("standard errors are unavailable (non-PD Hessian)".into()))?;
    if null_values.len() != se.len() {
        return Err(TvtpError::Domain(format!(
            "null vector has length {}, expected {}",
            null_values.len(),
            se.len()
        )));
    }
    let mut out = Vec::with_capacity(se.len());
    for j in 0..se.len() {
        if se[j] == 0.0 {
            return Err(TvtpError::Numeric(format!(
                "zero standard error for {}",
                result.param_names[j]
            )));
        }
        out.push((layout.get_free(&result.theta_hat, j) - null_values[j]) / se[j]);
    }
    Ok(out)
}

/// Ordinary least squares of `y` on a constant and `lags` lagged values,
/// returning `(coefficients, residuals)` with the intercept first.
fn ols_ar(series: &[f64], lags: usize, t0: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = series.len() - t0;
    let qdim = lags + 1;
    let mut xtx = DMatrix::<f64>::zeros(qdim, qdim);
    let mut xty = DMatrix::<f64>::zeros(qdim, 1);
    for t in t0..series.len() {
        let mut row = Vec::with_capacity(qdim);
        row.push(1.0);
        for i in 0..lags {
            row.push(series[t - 1 - i]);
        }
        for a in 0..qdim {
            for b in 0..qdim {
                xtx[(a, b)] += row[a] * row[b];
            }
            xty[(a, 0)] += row[a] * series[t];
        }
    }
    let coef = xtx
        .lu()
        .solve(&xty)
        .ok_or_else(|| TvtpError::Numeric("singular design in AR least squares".into()))?;
    let mut resid = Vec::with_capacity(n);
    for t in t0..series.len() {
        let mut fit = coef[(0, 0)];
        for i in 0..lags {
            fit += coef[(i + 1, 0)] * series[t - 1 - i];
        }
        resid.push(series[t] - fit);
    }
    Ok((coef.iter().copied().collect(), resid))
}

/// Deterministic two-component Gaussian mixture fit by EM, initialized by a
/// split at the sample mean. Returns components ordered by descending mean.
fn gaussian_mixture_2(xs: &[f64]) -> ((f64, f64), (f64, f64)) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-6);
    let (mut m0, mut m1) = (mean + sd, mean - sd);
    let (mut s0, mut s1) = (sd, sd);
    let mut w = 0.5f64;
    for _ in 0..60 {
        let (mut r_x0, mut r_x1, mut r_v0, mut r_v1, mut n0, mut n1) =
            (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for &x in xs {
            let d0 = w * gauss_pdf(x, m0, s0);
            let d1 = (1.0 - w) * gauss_pdf(x, m1, s1);
            let r = d0 / (d0 + d1).max(1e-300);
            n0 += r;
            n1 += 1.0 - r;
            r_x0 += r * x;
            r_x1 += (1.0 - r) * x;
            r_v0 += r * (x - m0) * (x - m0);
            r_v1 += (1.0 - r) * (x - m1) * (x - m1);
        }
        if n0 < 1e-8 || n1 < 1e-8 {
            break;
        }
        m0 = r_x0 / n0;
        m1 = r_x1 / n1;
        s0 = (r_v0 / n0).sqrt().max(1e-3 * sd);
        s1 = (r_v1 / n1).sqrt().max(1e-3 * sd);
        w = (n0 / (n0 + n1)).clamp(0.05, 0.95);
    }
    if m0 >= m1 {
        ((m0, s0), (m1, s1))
    } else {
        ((m1, s1), (m0, s0))
    }
}

fn gauss_pdf(x: f64, m: f64, s: f64) -> f64 {
    let e = (x - m) / s;
    (-0.5 * e * e).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
}

/// Moment-based starting point: a non-switching AR fit, a two-component
/// mixture on its residuals for the switching intercepts/scales, flat
/// transition logits, and (joint variant) the Z-equation least squares with
/// the residual cross-correlation.
pub fn moment_anchor(data: &Dataset, config: &ModelConfig) -> Result<ParamVector> {
    config.validate()?;
    data.validate(config)?;
    let k = config.n_regimes;
    let p = config.ar_order_y;
    let t0 = Dataset::first_scored(config);
    let (coef_y, resid_y) = ols_ar(&data.y, p, t0)?;
    let phi = coef_y[1..].to_vec();
    let c = coef_y[0];
    let resid_sd = {
        let n = resid_y.len() as f64;
        (resid_y.iter().map(|e| e * e).sum::<f64>() / n).sqrt().max(1e-6)
    };

    let (mu, sigma) = if k == 1 {
        (vec![c], vec![resid_sd])
    } else if k == 2 {
        let ((m0, s0), (m1, s1)) = gaussian_mixture_2(&resid_y);
        let mu = if config.switch_mask.intercept { vec![c + m0, c + m1] } else { vec![c] };
        let sigma = if config.switch_mask.scale { vec![s0, s1] } else { vec![resid_sd] };
        (mu, sigma)
    } else {
        // Quantile split for K > 2: crude but deterministic.
        let mut sorted = resid_y.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut mu = Vec::with_capacity(k);
        let mut sigma = Vec::with_capacity(k);
        for g in 0..k {
            let lo = g * sorted.len() / k;
            let hi = ((g + 1) * sorted.len() / k).max(lo + 1);
            let chunk = &sorted[lo..hi.min(sorted.len())];
            let m = chunk.iter().sum::<f64>() / chunk.len() as f64;
            let v = chunk.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / chunk.len() as f64;
            mu.push(c + m);
            sigma.push(v.sqrt().max(0.1 * resid_sd));
        }
        let mu = if config.switch_mask.intercept { mu } else { vec![c] };
        let sigma = if config.switch_mask.scale { sigma } else { vec![resid_sd] };
        (mu, sigma)
    };

    let trans = vec![vec![TransPair { alpha: 2.0, beta: 0.0 }; k - 1]; k];
    let joint = match config.variant {
        Variant::Partial => None,
        Variant::Joint => {
            let (coef_z, resid_z) = ols_ar(&data.z, config.ar_order_z, t0)?;
            let nz = resid_z.len() as f64;
            let sd_z = (resid_z.iter().map(|e| e * e).sum::<f64>() / nz).sqrt().max(1e-6);
            let mut sxy = 0.0;
            for (ey, ez) in resid_y.iter().zip(resid_z.iter()) {
                sxy += ey * ez;
            }
            let rho = (sxy / nz / (resid_sd * sd_z)).clamp(-0.9, 0.9);
            Some(JointParams {
                mu2: coef_z[0],
                psi: coef_z[1..].to_vec(),
                sigma2: sd_z,
                rho,
            })
        }
    };
    let params = ParamVector { mu, phi, sigma, trans, joint };
    params.validate(config)?;
    Ok(params)
}

/// The default multi-start set: the moment anchor plus the anchor with each
/// packed coordinate perturbed by ±0.5 (at most `2q + 1` starts).
pub fn default_starts(data: &Dataset, config: &ModelConfig) -> Result<Vec<ParamVector>> {
    let layout = Layout::new(config);
    let anchor = moment_anchor(data, config)?;
    let raw = layout.pack(&anchor)?.raw;
    let mut starts = vec![anchor];
    for j in 0..layout.n_free() {
        for sign in [1.0, -1.0] {
            let mut v = raw.clone();
            v[j] += sign * 0.5;
            if let Ok(p) = layout.unpack(&v) {
                starts.push(p);
            }
        }
    }
    Ok(starts)
}
