//! Forward filtering, the path-enumeration likelihood oracle, a
//! forward-backward smoother, and the smoothed complete-data score.
//!
//! All density mixing happens in log space; predicted regime probabilities
//! are kept in linear space and renormalized every step, which is safe
//! because each row is O(1).

use nalgebra::DMatrix;

use crate::error::{Result, TvtpError};
use crate::linalg;
use crate::model::{
    self, accumulate_emission_grad, accumulate_transition_grad, emission_logdensity, Layout,
    ModelConfig, ParamVector,
};

/// Observed series. `y` and `z` run over indices 0..=T; `z` is required even
/// for the partial likelihood because the transition kernel reads it.
/// `s_true` carries the simulated latent path for diagnostics only.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub s_true: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(y: Vec<f64>, z: Vec<f64>) -> Self {
        Dataset { y, z, s_true: None }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Index of the first scored observation: earlier points only supply lags.
    pub fn first_scored(config: &ModelConfig) -> usize {
        config.ar_order_y.max(config.ar_order_z).max(1)
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.y.len() != self.z.len() {
            return Err(TvtpError::Domain(format!(
                "y and z must have equal length, got {} and {}",
                self.y.len(),
                self.z.len()
            )));
        }
        let need = config.max_lag() + 2;
        if self.y.len() < need {
            return Err(TvtpError::Domain(format!(
                "series length {} is too short; need at least {need}",
                self.y.len()
            )));
        }
        if let Some(s) = &self.s_true {
            if s.len() != self.y.len() {
                return Err(TvtpError::Domain("s_true length mismatch".into()));
            }
        }
        if !self.y.iter().chain(self.z.iter()).all(|v| v.is_finite()) {
            return Err(TvtpError::Domain("series contain non-finite values".into()));
        }
        Ok(())
    }
}

/// Rule for the conditional distribution of the anchor state given the
/// pre-sample data. The likelihood forgets this choice geometrically, which
/// the mixing module verifies.
#[derive(Debug, Clone, PartialEq)]
pub enum InitRule {
    Uniform,
    /// Stationary distribution of the transition matrix evaluated at the
    /// anchor covariate value.
    StationaryAtX0,
    Fixed(Vec<f64>),
}

impl Default for InitRule {
    fn default() -> Self {
        InitRule::StationaryAtX0
    }
}

impl InitRule {
    pub fn resolve(&self, z_anchor: f64, params: &ParamVector) -> Result<Vec<f64>> {
        let k = params.n_regimes();
        match self {
            InitRule::Uniform => Ok(vec![1.0 / k as f64; k]),
            InitRule::StationaryAtX0 => model::stationary_at(z_anchor, params),
            InitRule::Fixed(v) => {
                if v.len() != k {
                    return Err(TvtpError::Domain(format!(
                        "fixed init has length {}, expected {k}",
                        v.len()
                    )));
                }
                if v.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                    return Err(TvtpError::Domain("fixed init must be non-negative".into()));
                }
                let sum: f64 = v.iter().sum();
                if (sum - 1.0).abs() > 1e-8 {
                    return Err(TvtpError::Domain(format!(
                        "fixed init must sum to 1, got {sum}"
                    )));
                }
                Ok(v.iter().map(|p| p / sum).collect())
            }
        }
    }
}

/// Output of [`forward_filter`].
#[derive(Debug, Clone)]
pub struct FilterOutput {
    /// Predicted regime probabilities, one row per scored observation:
    /// row i is `P(S_t = · | data up to t-1)` for `t = first_scored + i`.
    pub delta: DMatrix<f64>,
    /// Per-step log conditional densities, same indexing as `delta`.
    pub step_loglik: Vec<f64>,
    /// Total log-likelihood: the sum of `step_loglik` in time order.
    pub loglik: f64,
    /// Mean per-step form of the criterion.
    pub mean_loglik: f64,
    /// Data index of the first scored observation.
    pub first_scored: usize,
}

/// One filtering pass with everything the smoother and score reuse.
pub(crate) struct Pass {
    pub t0: usize,
    pub n: usize,
    pub k: usize,
    /// `qmats[i]` is the transition matrix driving the step into state time
    /// `t0 + i`, i.e. built at covariate `z[t0 - 1 + i]` (row-major K×K).
    pub qmats: Vec<f64>,
    /// `logf[i*k + s]` is the emission log density of observation `t0 + i`
    /// under regime `s`.
    pub logf: Vec<f64>,
    /// Predicted probabilities per scored step (linear space).
    pub delta: Vec<f64>,
    /// Filtered probabilities per scored step.
    pub filt: Vec<f64>,
    /// Anchor distribution.
    pub nu: Vec<f64>,
    pub step_ll: Vec<f64>,
}

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + sum.ln()
}

pub(crate) fn run_pass(
    data: &Dataset,
    params: &ParamVector,
    config: &ModelConfig,
    init: &InitRule,
) -> Result<Pass> {
    params.validate(config)?;
    data.validate(config)?;
    let k = config.n_regimes;
    let t0 = Dataset::first_scored(config);
    let last = data.len() - 1;
    let n = last - t0 + 1;
    let p = config.ar_order_y;
    let pz = config.ar_order_z;

    let mut qmats = vec![0.0; n * k * k];
    for i in 0..n {
        model::transition_matrix_into(
            data.z[t0 - 1 + i],
            params,
            &mut qmats[i * k * k..(i + 1) * k * k],
        )?;
    }

    let mut logf = vec![0.0; n * k];
    let mut ybuf = vec![0.0; p];
    let mut zbuf = vec![0.0; pz];
    for i in 0..n {
        let t = t0 + i;
        for j in 0..p {
            ybuf[j] = data.y[t - 1 - j];
        }
        for j in 0..pz {
            zbuf[j] = data.z[t - 1 - j];
        }
        for s in 0..k {
            logf[i * k + s] =
                emission_logdensity(config, params, s, data.y[t], &ybuf, data.z[t], &zbuf)?;
        }
    }

    let nu = init.resolve(data.z[t0 - 1], params)?;

    let mut delta = vec![0.0; n * k];
    let mut filt = vec![0.0; n * k];
    let mut step_ll = vec![0.0; n];
    // delta_1 is the init rule pushed through the anchor kernel.
    for s in 0..k {
        let mut acc = 0.0;
        for a in 0..k {
            acc += nu[a] * qmats[a * k + s];
        }
        delta[s] = acc;
    }
    let mut terms = vec![0.0; k];
    for i in 0..n {
        for s in 0..k {
            let d = delta[i * k + s];
            terms[s] = if d > 0.0 { d.ln() + logf[i * k + s] } else { f64::NEG_INFINITY };
        }
        let step = logsumexp(&terms);
        if !step.is_finite() {
            return Err(TvtpError::Numeric(format!(
                "all regimes have zero conditional density at observation {}",
                t0 + i
            )));
        }
        step_ll[i] = step;
        let mut fsum = 0.0;
        for s in 0..k {
            let f = (terms[s] - step).exp();
            filt[i * k + s] = f;
            fsum += f;
        }
        for s in 0..k {
            filt[i * k + s] /= fsum;
        }
        if i + 1 < n {
            let q = &qmats[(i + 1) * k * k..(i + 2) * k * k];
            for s in 0..k {
                let mut acc = 0.0;
                for a in 0..k {
                    acc += filt[i * k + a] * q[a * k + s];
                }
                delta[(i + 1) * k + s] = acc;
            }
        }
    }

    Ok(Pass { t0, n, k, qmats, logf, delta, filt, nu, step_ll })
}

/// Run the forward recursion over the scored range and return predicted
/// regime probabilities with per-step and total log-likelihoods.
pub fn forward_filter(
    data: &Dataset,
    params: &ParamVector,
    config: &ModelConfig,
    init: &InitRule,
) -> Result<FilterOutput> {
    let pass = run_pass(data, params, config, init)?;
    let loglik: f64 = pass.step_ll.iter().sum();
    let delta = DMatrix::from_row_slice(pass.n, pass.k, &pass.delta);
    Ok(FilterOutput {
        delta,
        loglik,
        mean_loglik: loglik / pass.n as f64,
        step_loglik: pass.step_ll,
        first_scored: pass.t0,
    })
}

/// Guard for the path-enumeration oracle.
const ENUM_GUARD: u128 = 1 << 20;

/// Total log-likelihood by direct marginalization over every regime path.
///
/// This is the convention-free oracle the forward filter must reproduce.
pub fn brute_force_loglik(
    data: &Dataset,
    params: &ParamVector,
    config: &ModelConfig,
    init: &InitRule,
) -> Result<f64> {
    let pass = run_pass(data, params, config, init)?;
    let k = pass.k as u128;
    let states = pass.n as u32 + 1;
    let n_paths = k
        .checked_pow(states)
        .filter(|&c| c <= ENUM_GUARD)
        .ok_or_else(|| {
            TvtpError::Size(format!(
                "path enumeration needs K^{states} paths; guard is 2^20"
            ))
        })?;
    let mut terms = Vec::with_capacity(n_paths as usize);
    let kk = pass.k;
    for code in 0..n_paths {
        let mut c = code;
        let anchor = (c % k) as usize;
        c /= k;
        let mut logw = if pass.nu[anchor] > 0.0 { pass.nu[anchor].ln() } else { f64::NEG_INFINITY };
        let mut prev = anchor;
        for i in 0..pass.n {
            let s = (c % k) as usize;
            c /= k;
            let q = pass.qmats[i * kk * kk + prev * kk + s];
            logw += if q > 0.0 { q.ln() } else { f64::NEG_INFINITY };
            logw += pass.logf[i * kk + s];
            prev = s;
            if logw == f64::NEG_INFINITY {
                break;
            }
        }
        terms.push(logw);
    }
    Ok(logsumexp(&terms))
}

/// Smoothed regime probabilities.
#[derive(Debug, Clone)]
pub struct Smoothed {
    /// Row i is `P(S_{anchor+i} = · | all data)`; row 0 is the anchor state,
    /// rows 1..=n the scored steps.
    pub marginals: DMatrix<f64>,
    /// Slab i is `P(S_{anchor+i} = a, S_{anchor+i+1} = b | all data)`;
    /// slab 0 covers the anchor transition.
    pub pairwise: Vec<DMatrix<f64>>,
}

pub(crate) fn smooth_pass(pass: &Pass) -> Smoothed {
    let k = pass.k;
    let n = pass.n;
    let filt_state = |i: usize, s: usize| -> f64 {
        if i == 0 {
            pass.nu[s]
        } else {
            pass.filt[(i - 1) * k + s]
        }
    };
    let mut marginals = DMatrix::<f64>::zeros(n + 1, k);
    let mut pairwise = vec![DMatrix::<f64>::zeros(k, k); n];
    for s in 0..k {
        marginals[(n, s)] = filt_state(n, s);
    }
    for i in (1..=n).rev() {
        let q = &pass.qmats[(i - 1) * k * k..i * k * k];
        for a in 0..k {
            let mut rowsum = 0.0;
            for b in 0..k {
                let pred = pass.delta[(i - 1) * k + b];
                let m = marginals[(i, b)];
                let v = if pred > 0.0 && m > 0.0 {
                    filt_state(i - 1, a) * q[a * k + b] * m / pred
                } else {
                    0.0
                };
                pairwise[i - 1][(a, b)] = v;
                rowsum += v;
            }
            marginals[(i - 1, a)] = rowsum;
        }
    }
    Smoothed { marginals, pairwise }
}

/// Forward-backward smoother: marginal and pairwise posterior regime
/// probabilities given the full sample.
pub fn smooth(
    data: &Dataset,
    params: &ParamVector,
    config: &ModelConfig,
    init: &InitRule,
) -> Result<Smoothed> {
    let pass = run_pass(data, params, config, init)?;
    Ok(smooth_pass(&pass))
}

/// Gradient of the total log-likelihood via the Fisher identity: the
/// smoothed expectation of the complete-data score, with analytic emission
/// and transition gradients. Original (constrained) parameter space, in the
/// free-parameter layout order.
pub fn fisher_score(
    data: &Dataset,
    params: &ParamVector,
    config: &ModelConfig,
    init: &InitRule,
) -> Result<Vec<f64>> {
    loglik_and_score(data, params, config, init).map(|(_, _, grad)| grad)
}

/// Contribution of the θ-dependence of the stationary init rule:
/// `∂π = π ∂Q (I − Q + 1πᵀ)^{−1}` smoothed against the anchor marginals.
fn accumulate_stationary_init_grad(
    layout: &Layout,
    params: &ParamVector,
    z_anchor: f64,
    pi: &[f64],
    sm: &Smoothed,
    grad: &mut [f64],
) -> Result<()> {
    let k = pi.len();
    let q = model::transition_matrix(z_anchor, params)?;
    let qm = DMatrix::from_row_slice(k, k, &q);
    let mut m = DMatrix::<f64>::identity(k, k) - qm;
    for r in 0..k {
        for c in 0..k {
            m[(r, c)] += pi[c];
        }
    }
    let z = linalg::invert(&m, "stationary fundamental matrix")?;
    let pi_row = DMatrix::from_row_slice(1, k, pi);
    for (j, dq) in model::transition_param_derivs(layout, params, z_anchor) {
        let dpi = &pi_row * dq * &z;
        let mut acc = 0.0;
        for s in 0..k {
            if pi[s] > 0.0 && sm.marginals[(0, s)] > 0.0 {
                acc += sm.marginals[(0, s)] * dpi[(0, s)] / pi[s];
            }
        }
        grad[j] += acc;
    }
    Ok(())
}

/// Total log-likelihood together with its Fisher-identity gradient, from a
/// single filtering pass. This is the objective/gradient pair the optimizer
/// evaluates.
pub fn loglik_and_score(
    data: &Dataset,
    params: &ParamVector,
    config: &ModelConfig,
    init: &InitRule,
) -> Result<(f64, usize, Vec<f64>)> {
    let layout = Layout::new(config);
    let pass = run_pass(data, params, config, init)?;
    let loglik: f64 = pass.step_ll.iter().sum();
    let sm = smooth_pass(&pass);
    let k = pass.k;
    let p = config.ar_order_y;
    let pz = config.ar_order_z;
    let mut grad = vec![0.0; layout.n_free()];
    let mut ybuf = vec![0.0; p];
    let mut zbuf = vec![0.0; pz];
    for i in 1..=pass.n {
        let t = pass.t0 + i - 1;
        for j in 0..p {
            ybuf[j] = data.y[t - 1 - j];
        }
        for j in 0..pz {
            zbuf[j] = data.z[t - 1 - j];
        }
        for s in 0..k {
            let w = sm.marginals[(i, s)];
            if w > 0.0 {
                accumulate_emission_grad(
                    &layout, params, s, data.y[t], &ybuf, data.z[t], &zbuf, w, &mut grad,
                );
            }
        }
        let z_prev = data.z[t - 1];
        for a in 0..k {
            for b in 0..k {
                let w = sm.pairwise[i - 1][(a, b)];
                if w > 0.0 {
                    accumulate_transition_grad(&layout, params, z_prev, a, b, w, &mut grad);
                }
            }
        }
    }
    if matches!(init, InitRule::StationaryAtX0) && k >= 2 {
        accumulate_stationary_init_grad(&layout, params, data.z[pass.t0 - 1], &pass.nu, &sm, &mut grad)?;
    }
    Ok((loglik, pass.n, grad))
}

/// Log-likelihood of the Z equation alone over the scored range (the
/// Gaussian AR part that separates from the partial likelihood at ρ = 0).
pub fn z_equation_loglik(data: &Dataset, config: &ModelConfig, params: &ParamVector) -> Result<f64> {
    let joint = params
        .joint
        .as_ref()
        .ok_or_else(|| TvtpError::Domain("z_equation_loglik requires joint parameters".into()))?;
    data.validate(config)?;
    let t0 = Dataset::first_scored(config);
    let mut total = 0.0;
    for t in t0..data.len() {
        let mut mean = joint.mu2;
        for i in 0..config.ar_order_z {
            mean += joint.psi[i] * data.z[t - 1 - i];
        }
        let e = (data.z[t] - mean) / joint.sigma2;
        total += -0.5 * model::LN_2PI - joint.sigma2.ln() - 0.5 * e * e;
    }
    Ok(total)
}
