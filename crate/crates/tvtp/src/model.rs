//! The parametric family: logistic covariate-driven transition kernels,
//! Gaussian switching-AR emission densities (univariate "partial" and
//! bivariate "joint" forms), parameter packing and transforms, and the
//! uniform lower bound on transition probabilities.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TvtpError};
use crate::linalg;

pub const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Which likelihood the model evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Univariate likelihood of Y alone; Z enters only through the
    /// transition kernel. Misspecified when the innovations are correlated.
    Partial,
    /// Bivariate likelihood of (Y, Z) including the innovation correlation.
    Joint,
}

/// Flags for which emission parameters are regime-dependent.
///
/// The default switches the intercept and the scale of the Y equation;
/// AR coefficients are common across regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchMask {
    pub intercept: bool,
    pub scale: bool,
}

impl Default for SwitchMask {
    fn default() -> Self {
        SwitchMask { intercept: true, scale: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Number of regimes K ≥ 1.
    pub n_regimes: usize,
    /// AR order of the Y equation (p ≥ 0).
    pub ar_order_y: usize,
    /// AR order of the Z equation (joint variant only).
    pub ar_order_z: usize,
    pub switch_mask: SwitchMask,
}

impl ModelConfig {
    pub fn partial(n_regimes: usize, ar_order_y: usize) -> Self {
        ModelConfig {
            variant: Variant::Partial,
            n_regimes,
            ar_order_y,
            ar_order_z: 0,
            switch_mask: SwitchMask::default(),
        }
    }

    pub fn joint(n_regimes: usize, ar_order_y: usize, ar_order_z: usize) -> Self {
        ModelConfig {
            variant: Variant::Joint,
            n_regimes,
            ar_order_y,
            ar_order_z,
            switch_mask: SwitchMask::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_regimes < 1 {
            return Err(TvtpError::Domain("n_regimes must be >= 1".into()));
        }
        if self.variant == Variant::Partial && self.ar_order_z != 0 {
            return Err(TvtpError::Domain(
                "partial variant has no Z equation; ar_order_z must be 0".into(),
            ));
        }
        Ok(())
    }

    /// Largest lag window any emission needs.
    pub fn max_lag(&self) -> usize {
        self.ar_order_y.max(self.ar_order_z)
    }
}

/// One (α, β) pair of a transition-logit row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransPair {
    pub alpha: f64,
    pub beta: f64,
}

/// Parameters of the Z equation and the innovation correlation (joint only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointParams {
    pub mu2: f64,
    pub psi: Vec<f64>,
    pub sigma2: f64,
    pub rho: f64,
}

/// All free parameters in original (constrained) space.
///
/// `mu` and `sigma` have one entry per regime when the corresponding switch
/// flag is set, otherwise a single shared entry. `trans` always has one row
/// per regime with K−1 (α, β) pairs each; for K = 2 the single pair of row s
/// parameterizes the stay probability `Q(z, s, s) = logistic(α_s + β_s z)`,
/// and for K > 2 rows are multinomial logits with the last destination as
/// the reference category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub mu: Vec<f64>,
    pub phi: Vec<f64>,
    pub sigma: Vec<f64>,
    pub trans: Vec<Vec<TransPair>>,
    pub joint: Option<JointParams>,
}

impl ParamVector {
    /// Number of regimes implied by the transition block.
    pub fn n_regimes(&self) -> usize {
        self.trans.len()
    }

    #[inline]
    pub fn mu_of(&self, s: usize) -> f64 {
        if self.mu.len() == 1 {
            self.mu[0]
        } else {
            self.mu[s]
        }
    }

    #[inline]
    pub fn sigma_of(&self, s: usize) -> f64 {
        if self.sigma.len() == 1 {
            self.sigma[0]
        } else {
            self.sigma[s]
        }
    }

    /// The true parameter of the simulation-study DGP (joint variant,
    /// two regimes, one Y lag and one Z lag) at a given innovation
    /// correlation.
    pub fn study_dgp(rho: f64) -> Self {
        ParamVector {
            mu: vec![1.0, -1.0],
            phi: vec![0.9],
            sigma: vec![1.0, 1.0],
            trans: vec![
                vec![TransPair { alpha: 2.0, beta: -0.5 }],
                vec![TransPair { alpha: 2.0, beta: 0.5 }],
            ],
            joint: Some(JointParams { mu2: 0.2, psi: vec![0.8], sigma2: 1.0, rho }),
        }
    }

    /// Drop (or keep) the joint block so the vector matches `variant`.
    pub fn restrict_to(&self, variant: Variant) -> Result<Self> {
        let mut out = self.clone();
        match variant {
            Variant::Partial => out.joint = None,
            Variant::Joint => {
                if out.joint.is_none() {
                    return Err(TvtpError::Domain(
                        "cannot restrict to joint variant: no joint block present".into(),
                    ));
                }
            }
        }
        Ok(out)
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        config.validate()?;
        let k = config.n_regimes;
        let n_mu = if config.switch_mask.intercept { k } else { 1 };
        let n_sigma = if config.switch_mask.scale { k } else { 1 };
        if self.mu.len() != n_mu {
            return Err(TvtpError::Domain(format!(
                "mu has length {}, expected {n_mu}",
                self.mu.len()
            )));
        }
        if self.sigma.len() != n_sigma {
            return Err(TvtpError::Domain(format!(
                "sigma has length {}, expected {n_sigma}",
                self.sigma.len()
            )));
        }
        if self.phi.len() != config.ar_order_y {
            return Err(TvtpError::Domain(format!(
                "phi has length {}, expected {}",
                self.phi.len(),
                config.ar_order_y
            )));
        }
        if self.trans.len() != k {
            return Err(TvtpError::Domain(format!(
                "trans has {} rows, expected {k}",
                self.trans.len()
            )));
        }
        for (s, row) in self.trans.iter().enumerate() {
            if row.len() != k - 1 {
                return Err(TvtpError::Domain(format!(
                    "trans row {s} has {} pairs, expected {}",
                    row.len(),
                    k - 1
                )));
            }
        }
        let all_finite = self.mu.iter().chain(self.phi.iter()).chain(self.sigma.iter()).all(|v| v.is_finite())
            && self.trans.iter().flatten().all(|p| p.alpha.is_finite() && p.beta.is_finite());
        if !all_finite {
            return Err(TvtpError::Domain("non-finite parameter value".into()));
        }
        if self.sigma.iter().any(|&s| s <= 0.0) {
            return Err(TvtpError::Domain("sigma must be strictly positive".into()));
        }
        match (config.variant, &self.joint) {
            (Variant::Partial, Some(_)) => {
                return Err(TvtpError::Domain(
                    "partial variant must not carry joint parameters".into(),
                ));
            }
            (Variant::Joint, None) => {
                return Err(TvtpError::Domain("joint variant requires joint parameters".into()));
            }
            (Variant::Joint, Some(j)) => {
                if j.psi.len() != config.ar_order_z {
                    return Err(TvtpError::Domain(format!(
                        "psi has length {}, expected {}",
                        j.psi.len(),
                        config.ar_order_z
                    )));
                }
                if !(j.mu2.is_finite() && j.sigma2.is_finite() && j.rho.is_finite())
                    || j.psi.iter().any(|v| !v.is_finite())
                {
                    return Err(TvtpError::Domain("non-finite joint parameter value".into()));
                }
                if j.sigma2 <= 0.0 {
                    return Err(TvtpError::Domain("sigma2 must be strictly positive".into()));
                }
                if j.rho.abs() >= 1.0 {
                    return Err(TvtpError::Domain("rho must lie in (-1, 1)".into()));
                }
            }
            (Variant::Partial, None) => {}
        }
        Ok(())
    }

    /// Moduli of the roots of the AR(p) characteristic polynomial
    /// `1 - phi_1 x - ... - phi_p x^p` (empty when p = 0).
    ///
    /// Stationarity of the fitted process is not enforced; callers may warn
    /// when any root modulus is ≤ 1.05.
    pub fn ar_root_moduli(&self) -> Vec<f64> {
        ar_root_moduli(&self.phi)
    }
}

/// Root moduli of `1 - c_1 x - ... - c_p x^p` via the companion matrix of
/// the reversed polynomial.
pub fn ar_root_moduli(coeffs: &[f64]) -> Vec<f64> {
    let p = coeffs.len();
    if p == 0 {
        return Vec::new();
    }
    // Roots of x^p - c_1 x^{p-1} - ... - c_p: the reciprocals of the
    // characteristic roots; report |1/root| of those, i.e. moduli of the
    // polynomial above directly.
    let mut comp = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        comp[(0, i)] = coeffs[i];
    }
    for i in 1..p {
        comp[(i, i - 1)] = 1.0;
    }
    let eig = comp.complex_eigenvalues();
    eig.iter()
        .map(|c| {
            let m = (c.re * c.re + c.im * c.im).sqrt();
            if m > 0.0 {
                1.0 / m
            } else {
                f64::INFINITY
            }
        })
        .collect()
}

#[inline]
fn logistic_pair(x: f64) -> (f64, f64) {
    // Returns (logistic(x), logistic(-x)) computed from exp(-|x|) so the
    // smaller of the two stays strictly positive deep into the tails.
    let u = (-x.abs()).exp();
    let den = 1.0 + u;
    let big = 1.0 / den;
    let small = u / den;
    if x >= 0.0 {
        (big, small)
    } else {
        (small, big)
    }
}

/// Row-stochastic K×K transition matrix at covariate value `z`, row-major.
///
/// For K = 2 the diagonal entries are `logistic(α_s + β_s z)` and the
/// off-diagonals their complements; for K > 2 each row is a multinomial
/// logit in `α_{s,d} + β_{s,d} z` with the last destination as reference.
pub fn transition_matrix(z: f64, params: &ParamVector) -> Result<Vec<f64>> {
    let k = params.n_regimes();
    let mut out = vec![0.0; k * k];
    transition_matrix_into(z, params, &mut out)?;
    Ok(out)
}

/// As [`transition_matrix`], writing into a caller-provided buffer of
/// length K².
pub fn transition_matrix_into(z: f64, params: &ParamVector, out: &mut [f64]) -> Result<()> {
    if !z.is_finite() {
        return Err(TvtpError::Domain(format!("non-finite covariate value z = {z}")));
    }
    let k = params.n_regimes();
    debug_assert_eq!(out.len(), k * k);
    match k {
        0 => Err(TvtpError::Domain("empty transition block".into())),
        1 => {
            out[0] = 1.0;
            Ok(())
        }
        2 => {
            for s in 0..2 {
                let pair = params.trans[s][0];
                let x = pair.alpha + pair.beta * z;
                if !x.is_finite() {
                    return Err(TvtpError::Domain(format!(
                        "non-finite transition logit in row {s}"
                    )));
                }
                let (stay, leave) = logistic_pair(x);
                out[s * 2 + s] = stay;
                out[s * 2 + (1 - s)] = leave;
            }
            Ok(())
        }
        _ => {
            for s in 0..k {
                let row = &params.trans[s];
                let mut logits = vec![0.0; k];
                for (d, pair) in row.iter().enumerate() {
                    logits[d] = pair.alpha + pair.beta * z;
                    if !logits[d].is_finite() {
                        return Err(TvtpError::Domain(format!(
                            "non-finite transition logit in row {s}"
                        )));
                    }
                }
                let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let mut den = 0.0;
                for l in logits.iter() {
                    den += (l - m).exp();
                }
                for d in 0..k {
                    out[s * k + d] = (logits[d] - m).exp() / den;
                }
            }
            Ok(())
        }
    }
}

/// The exact uniform-in-states lower bound on transition probabilities at
/// covariate value `z`: the minimum entry of the transition matrix.
pub fn q_lower_bound(z: f64, params: &ParamVector) -> Result<f64> {
    let q = transition_matrix(z, params)?;
    Ok(q.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Log density of one observation given its lags, the active regime and the
/// model variant.
///
/// `y_lags[i]` is the i-th lag of Y (`y_lags[0]` the most recent), and
/// likewise for `z_lags`; the partial variant ignores `z_t` and `z_lags`.
pub fn emission_logdensity(
    config: &ModelConfig,
    params: &ParamVector,
    regime: usize,
    y_t: f64,
    y_lags: &[f64],
    z_t: f64,
    z_lags: &[f64],
) -> Result<f64> {
    if y_lags.len() < config.ar_order_y {
        return Err(TvtpError::Domain("not enough Y lags for the AR order".into()));
    }
    let sigma = params.sigma_of(regime);
    if !(sigma > 0.0) {
        return Err(TvtpError::Domain(format!("sigma[{regime}] must be > 0, got {sigma}")));
    }
    let mut mean_y = params.mu_of(regime);
    for i in 0..config.ar_order_y {
        mean_y += params.phi[i] * y_lags[i];
    }
    match config.variant {
        Variant::Partial => {
            let e = (y_t - mean_y) / sigma;
            Ok(-0.5 * LN_2PI - sigma.ln() - 0.5 * e * e)
        }
        Variant::Joint => {
            let j = params
                .joint
                .as_ref()
                .ok_or_else(|| TvtpError::Domain("joint variant requires joint parameters".into()))?;
            if z_lags.len() < config.ar_order_z {
                return Err(TvtpError::Domain("not enough Z lags for the AR order".into()));
            }
            if !(j.sigma2 > 0.0) {
                return Err(TvtpError::Domain(format!("sigma2 must be > 0, got {}", j.sigma2)));
            }
            if j.rho.abs() >= 1.0 {
                return Err(TvtpError::Domain(format!("rho must lie in (-1, 1), got {}", j.rho)));
            }
            let mut mean_z = j.mu2;
            for i in 0..config.ar_order_z {
                mean_z += j.psi[i] * z_lags[i];
            }
            let u = (y_t - mean_y) / sigma;
            let v = (z_t - mean_z) / j.sigma2;
            let c = 1.0 - j.rho * j.rho;
            Ok(-LN_2PI
                - sigma.ln()
                - j.sigma2.ln()
                - 0.5 * c.ln()
                - (u * u - 2.0 * j.rho * u * v + v * v) / (2.0 * c))
        }
    }
}

/// Unconstrained optimizer-space image of a [`ParamVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct UnconstrainedVector {
    pub raw: Vec<f64>,
}

/// Free-parameter layout for a model configuration.
///
/// Fixes the packing order (and therefore the meaning of every gradient,
/// Hessian and covariance index): intercepts, AR coefficients, scales,
/// transition pairs row by row, then the joint block
/// `(mu2, psi, sigma2, rho)`. Scales enter the unconstrained space through
/// `log`, the correlation through `atanh`, everything else is the identity.
#[derive(Debug, Clone)]
pub struct Layout {
    config: ModelConfig,
    n_mu: usize,
    n_sigma: usize,
    off_mu: usize,
    off_phi: usize,
    off_sigma: usize,
    off_trans: usize,
    off_joint: usize,
    n_free: usize,
}

impl Layout {
    pub fn new(config: &ModelConfig) -> Self {
        let k = config.n_regimes;
        let n_mu = if config.switch_mask.intercept { k } else { 1 };
        let n_sigma = if config.switch_mask.scale { k } else { 1 };
        let n_trans = k * (k - 1) * 2;
        let off_mu = 0;
        let off_phi = off_mu + n_mu;
        let off_sigma = off_phi + config.ar_order_y;
        let off_trans = off_sigma + n_sigma;
        let off_joint = off_trans + n_trans;
        let n_joint = match config.variant {
            Variant::Partial => 0,
            Variant::Joint => 1 + config.ar_order_z + 2,
        };
        Layout {
            config: *config,
            n_mu,
            n_sigma,
            off_mu,
            off_phi,
            off_sigma,
            off_trans,
            off_joint,
            n_free: off_joint + n_joint,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    /// Free index of the intercept used by regime `s`.
    #[inline]
    pub fn mu_index(&self, s: usize) -> usize {
        self.off_mu + if self.n_mu == 1 { 0 } else { s }
    }

    #[inline]
    pub fn phi_index(&self, i: usize) -> usize {
        self.off_phi + i
    }

    /// Free index of the scale used by regime `s`.
    #[inline]
    pub fn sigma_index(&self, s: usize) -> usize {
        self.off_sigma + if self.n_sigma == 1 { 0 } else { s }
    }

    /// Free index of (α, β) component `which` (0 = α, 1 = β) of pair `d` in
    /// transition row `s`.
    #[inline]
    pub fn trans_index(&self, s: usize, d: usize, which: usize) -> usize {
        let k = self.config.n_regimes;
        self.off_trans + s * (k - 1) * 2 + d * 2 + which
    }

    pub fn mu2_index(&self) -> usize {
        self.off_joint
    }

    pub fn psi_index(&self, i: usize) -> usize {
        self.off_joint + 1 + i
    }

    pub fn sigma2_index(&self) -> usize {
        self.off_joint + 1 + self.config.ar_order_z
    }

    pub fn rho_index(&self) -> usize {
        self.off_joint + 2 + self.config.ar_order_z
    }

    /// Human-readable names in packing order.
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.n_free);
        let k = self.config.n_regimes;
        if self.n_mu == 1 {
            out.push("mu".into());
        } else {
            for s in 0..k {
                out.push(format!("mu{s}"));
            }
        }
        for i in 0..self.config.ar_order_y {
            out.push(format!("phi{}", i + 1));
        }
        if self.n_sigma == 1 {
            out.push("sigma".into());
        } else {
            for s in 0..k {
                out.push(format!("sigma{s}"));
            }
        }
        for s in 0..k {
            for d in 0..k - 1 {
                if k == 2 {
                    out.push(format!("alpha{s}"));
                    out.push(format!("beta{s}"));
                } else {
                    out.push(format!("alpha{s}_{d}"));
                    out.push(format!("beta{s}_{d}"));
                }
            }
        }
        if self.config.variant == Variant::Joint {
            out.push("mu2".into());
            for i in 0..self.config.ar_order_z {
                out.push(format!("psi{}", i + 1));
            }
            out.push("sigma2".into());
            out.push("rho".into());
        }
        out
    }

    /// Read free parameter `j` in original (constrained) space.
    pub fn get_free(&self, params: &ParamVector, j: usize) -> f64 {
        let k = self.config.n_regimes;
        if j < self.off_phi {
            params.mu[j - self.off_mu]
        } else if j < self.off_sigma {
            params.phi[j - self.off_phi]
        } else if j < self.off_trans {
            params.sigma[j - self.off_sigma]
        } else if j < self.off_joint {
            let rel = j - self.off_trans;
            let s = rel / ((k - 1) * 2);
            let d = (rel % ((k - 1) * 2)) / 2;
            let pair = params.trans[s][d];
            if rel % 2 == 0 {
                pair.alpha
            } else {
                pair.beta
            }
        } else {
            let joint = params.joint.as_ref().expect("joint block");
            let rel = j - self.off_joint;
            if rel == 0 {
                joint.mu2
            } else if rel <= self.config.ar_order_z {
                joint.psi[rel - 1]
            } else if rel == self.config.ar_order_z + 1 {
                joint.sigma2
            } else {
                joint.rho
            }
        }
    }

    /// Write free parameter `j` in original (constrained) space.
    pub fn set_free(&self, params: &mut ParamVector, j: usize, value: f64) {
        let k = self.config.n_regimes;
        if j < self.off_phi {
            params.mu[j - self.off_mu] = value;
        } else if j < self.off_sigma {
            params.phi[j - self.off_phi] = value;
        } else if j < self.off_trans {
            params.sigma[j - self.off_sigma] = value;
        } else if j < self.off_joint {
            let rel = j - self.off_trans;
            let s = rel / ((k - 1) * 2);
            let d = (rel % ((k - 1) * 2)) / 2;
            let pair = &mut params.trans[s][d];
            if rel % 2 == 0 {
                pair.alpha = value;
            } else {
                pair.beta = value;
            }
        } else {
            let joint = params.joint.as_mut().expect("joint block");
            let rel = j - self.off_joint;
            if rel == 0 {
                joint.mu2 = value;
            } else if rel <= self.config.ar_order_z {
                joint.psi[rel - 1] = value;
            } else if rel == self.config.ar_order_z + 1 {
                joint.sigma2 = value;
            } else {
                joint.rho = value;
            }
        }
    }

    /// Map to unconstrained optimizer space (σ ↦ log σ, ρ ↦ atanh ρ).
    pub fn pack(&self, params: &ParamVector) -> Result<UnconstrainedVector> {
        params.validate(&self.config)?;
        let mut raw = Vec::with_capacity(self.n_free);
        for j in 0..self.n_free {
            let v = self.get_free(params, j);
            raw.push(if self.is_log_coord(j) {
                v.ln()
            } else if self.is_atanh_coord(j) {
                v.atanh()
            } else {
                v
            });
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(TvtpError::Domain("non-finite packed coordinate".into()));
        }
        Ok(UnconstrainedVector { raw })
    }

    /// Inverse of [`Layout::pack`]; any finite raw vector maps to a valid
    /// parameter vector.
    pub fn unpack(&self, raw: &[f64]) -> Result<ParamVector> {
        if raw.len() != self.n_free {
            return Err(TvtpError::Domain(format!(
                "raw vector has length {}, expected {}",
                raw.len(),
                self.n_free
            )));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(TvtpError::Domain("non-finite raw coordinate".into()));
        }
        let mut params = self.zero_params();
        for j in 0..self.n_free {
            let v = if self.is_log_coord(j) {
                raw[j].exp()
            } else if self.is_atanh_coord(j) {
                raw[j].tanh()
            } else {
                raw[j]
            };
            if !v.is_finite() {
                return Err(TvtpError::Domain(format!(
                    "coordinate {j} leaves the parameter space (raw {})",
                    raw[j]
                )));
            }
            self.set_free(&mut params, j, v);
        }
        params.validate(&self.config)?;
        Ok(params)
    }

    /// d(original)/d(raw) for every coordinate, evaluated at `params`; the
    /// chain-rule factor between original-space and raw-space gradients.
    pub fn transform_jacobian(&self, params: &ParamVector) -> Vec<f64> {
        (0..self.n_free)
            .map(|j| {
                let v = self.get_free(params, j);
                if self.is_log_coord(j) {
                    v
                } else if self.is_atanh_coord(j) {
                    1.0 - v * v
                } else {
                    1.0
                }
            })
            .collect()
    }

    fn is_log_coord(&self, j: usize) -> bool {
        (j >= self.off_sigma && j < self.off_trans)
            || (self.config.variant == Variant::Joint && j == self.sigma2_index())
    }

    fn is_atanh_coord(&self, j: usize) -> bool {
        self.config.variant == Variant::Joint && j == self.rho_index()
    }

    fn zero_params(&self) -> ParamVector {
        let k = self.config.n_regimes;
        ParamVector {
            mu: vec![0.0; self.n_mu],
            phi: vec![0.0; self.config.ar_order_y],
            sigma: vec![1.0; self.n_sigma],
            trans: vec![vec![TransPair { alpha: 0.0, beta: 0.0 }; k - 1]; k],
            joint: match self.config.variant {
                Variant::Partial => None,
                Variant::Joint => Some(JointParams {
                    mu2: 0.0,
                    psi: vec![0.0; self.config.ar_order_z],
                    sigma2: 1.0,
                    rho: 0.0,
                }),
            },
        }
    }

    /// Free-index permutation induced by swapping the labels of regimes 0
    /// and 1 (K = 2 only): used to relabel estimates and their covariance.
    pub fn relabel_permutation(&self) -> Vec<usize> {
        assert_eq!(self.config.n_regimes, 2, "relabeling is defined for K = 2");
        let mut perm: Vec<usize> = (0..self.n_free).collect();
        if self.n_mu == 2 {
            perm.swap(self.mu_index(0), self.mu_index(1));
        }
        if self.n_sigma == 2 {
            perm.swap(self.sigma_index(0), self.sigma_index(1));
        }
        perm.swap(self.trans_index(0, 0, 0), self.trans_index(1, 0, 0));
        perm.swap(self.trans_index(0, 0, 1), self.trans_index(1, 0, 1));
        perm
    }
}

/// Free-function wrappers around [`Layout`] packing.
pub fn pack(config: &ModelConfig, params: &ParamVector) -> Result<UnconstrainedVector> {
    Layout::new(config).pack(params)
}

pub fn unpack(config: &ModelConfig, raw: &UnconstrainedVector) -> Result<ParamVector> {
    Layout::new(config).unpack(&raw.raw)
}

/// Accumulate `w · ∇_θ log p_θ(x_t | lags, regime)` into `grad` (original
/// parameter space, free-index layout).
#[allow(clippy::too_many_arguments)]
pub(crate) fn accumulate_emission_grad(
    layout: &Layout,
    params: &ParamVector,
    regime: usize,
    y_t: f64,
    y_lags: &[f64],
    z_t: f64,
    z_lags: &[f64],
    w: f64,
    grad: &mut [f64],
) {
    let config = layout.config();
    let sigma = params.sigma_of(regime);
    let mut mean_y = params.mu_of(regime);
    for i in 0..config.ar_order_y {
        mean_y += params.phi[i] * y_lags[i];
    }
    match config.variant {
        Variant::Partial => {
            let e = (y_t - mean_y) / sigma;
            let dmean = e / sigma;
            grad[layout.mu_index(regime)] += w * dmean;
            for i in 0..config.ar_order_y {
                grad[layout.phi_index(i)] += w * dmean * y_lags[i];
            }
            grad[layout.sigma_index(regime)] += w * (e * e - 1.0) / sigma;
        }
        Variant::Joint => {
            let j = params.joint.as_ref().expect("joint block");
            let mut mean_z = j.mu2;
            for i in 0..config.ar_order_z {
                mean_z += j.psi[i] * z_lags[i];
            }
            let u = (y_t - mean_y) / sigma;
            let v = (z_t - mean_z) / j.sigma2;
            let c = 1.0 - j.rho * j.rho;
            let dm1 = (u - j.rho * v) / (sigma * c);
            let dm2 = (v - j.rho * u) / (j.sigma2 * c);
            grad[layout.mu_index(regime)] += w * dm1;
            for i in 0..config.ar_order_y {
                grad[layout.phi_index(i)] += w * dm1 * y_lags[i];
            }
            grad[layout.sigma_index(regime)] += w * (-1.0 / sigma + u * (u - j.rho * v) / (sigma * c));
            grad[layout.mu2_index()] += w * dm2;
            for i in 0..config.ar_order_z {
                grad[layout.psi_index(i)] += w * dm2 * z_lags[i];
            }
            grad[layout.sigma2_index()] +=
                w * (-1.0 / j.sigma2 + v * (v - j.rho * u) / (j.sigma2 * c));
            let quad = u * u - 2.0 * j.rho * u * v + v * v;
            grad[layout.rho_index()] += w * (j.rho / c + u * v / c - j.rho * quad / (c * c));
        }
    }
}

/// Accumulate `w · ∇_θ log Q_θ(z, a, b)` into `grad`.
pub(crate) fn accumulate_transition_grad(
    layout: &Layout,
    params: &ParamVector,
    z: f64,
    a: usize,
    b: usize,
    w: f64,
    grad: &mut [f64],
) {
    let k = layout.config().n_regimes;
    if k == 1 {
        return;
    }
    if k == 2 {
        let pair = params.trans[a][0];
        let x = pair.alpha + pair.beta * z;
        let (g, gm) = logistic_pair(x);
        // log Q(a -> a) = log g, log Q(a -> 1-a) = log(1-g)
        let d = if b == a { gm } else { -g };
        grad[layout.trans_index(a, 0, 0)] += w * d;
        grad[layout.trans_index(a, 0, 1)] += w * d * z;
        return;
    }
    // Multinomial-logit row: d log P_b / d L_d = 1{b = d} - P_d.
    let mut q_row = vec![0.0; k];
    let row = &params.trans[a];
    let mut logits = vec![0.0; k];
    for (d, pair) in row.iter().enumerate() {
        logits[d] = pair.alpha + pair.beta * z;
    }
    let m = logits.iter().fold(f64::NEG_INFINITY, |x, &y| x.max(y));
    let mut den = 0.0;
    for l in logits.iter() {
        den += (l - m).exp();
    }
    for d in 0..k {
        q_row[d] = (logits[d] - m).exp() / den;
    }
    for d in 0..k - 1 {
        let ind = if b == d { 1.0 } else { 0.0 };
        grad[layout.trans_index(a, d, 0)] += w * (ind - q_row[d]);
        grad[layout.trans_index(a, d, 1)] += w * (ind - q_row[d]) * z;
    }
}

/// Derivative of the full transition matrix with respect to one free
/// transition coordinate, as a dense K×K matrix. Returns the list of
/// `(free_index, dQ/dθ)` pairs for all transition coordinates.
pub(crate) fn transition_param_derivs(
    layout: &Layout,
    params: &ParamVector,
    z: f64,
) -> Vec<(usize, DMatrix<f64>)> {
    let k = layout.config().n_regimes;
    let mut out = Vec::new();
    if k == 1 {
        return out;
    }
    if k == 2 {
        for s in 0..2 {
            let pair = params.trans[s][0];
            let x = pair.alpha + pair.beta * z;
            let (g, gm) = logistic_pair(x);
            let slope = g * gm;
            for (which, scale) in [(0usize, 1.0), (1, z)] {
                let mut dq = DMatrix::<f64>::zeros(2, 2);
                dq[(s, s)] = slope * scale;
                dq[(s, 1 - s)] = -slope * scale;
                out.push((layout.trans_index(s, 0, which), dq));
            }
        }
        return out;
    }
    let q = transition_matrix(z, params).expect("valid params");
    for s in 0..k {
        for d in 0..k - 1 {
            for (which, scale) in [(0usize, 1.0), (1, z)] {
                let mut dq = DMatrix::<f64>::zeros(k, k);
                for b in 0..k {
                    let ind = if b == d { 1.0 } else { 0.0 };
                    // dP_b/dL_d = P_b (1{b=d} - P_d)
                    dq[(s, b)] = q[s * k + b] * (ind - q[s * k + d]) * scale;
                }
                out.push((layout.trans_index(s, d, which), dq));
            }
        }
    }
    out
}

/// Stationary distribution of the transition matrix at covariate `z`.
pub fn stationary_at(z: f64, params: &ParamVector) -> Result<Vec<f64>> {
    let k = params.n_regimes();
    let q = transition_matrix(z, params)?;
    let qm = DMatrix::from_row_slice(k, k, &q);
    linalg::stationary_distribution(&qm)
}
