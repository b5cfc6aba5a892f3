//! Simulation from the switching-AR data generating process: correlated
//! bivariate Gaussian innovations, a covariate-driven latent Markov chain,
//! and the switching observation equation.
//!
//! Randomness is counter-based: every `(seed, rep_index)` pair selects an
//! independent ChaCha stream, so replications are reproducible regardless of
//! scheduling or worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TvtpError};
use crate::filter::Dataset;
use crate::model::{self, ParamVector};

/// A fully specified simulation run.
///
/// `params` is the true parameter of the joint-variant model (the Z equation
/// and the innovation correlation live inside it). Scales may be zero here —
/// the noise-free recursion is well-defined even though estimation requires
/// strictly positive scales.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpSpec {
    pub params: ParamVector,
    /// Number of retained observations after the burn-in; the returned
    /// series has `t + 1` points so index 0 supplies the first lag window.
    pub t: usize,
    pub burnin: usize,
    pub y0: f64,
    pub z0: f64,
    pub seed: u64,
    pub rep_index: u64,
}

impl DgpSpec {
    /// The simulation-study design: switching intercept/scale AR(1) with
    /// mu = (1, -1), phi = 0.9, unit scales, Z an AR(1) with stationary mean
    /// 1, and logistic transition logits (2, -0.5) and (2, 0.5).
    pub fn study(rho: f64, t: usize, seed: u64, rep_index: u64) -> Self {
        DgpSpec {
            params: ParamVector::study_dgp(rho),
            t,
            burnin: 100,
            y0: 0.5,
            z0: 1.0,
            seed,
            rep_index,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t < 1 {
            return Err(TvtpError::Domain("t must be >= 1".into()));
        }
        let p = &self.params;
        let joint = p
            .joint
            .as_ref()
            .ok_or_else(|| TvtpError::Domain("DGP parameters must be joint-variant".into()))?;
        let finite = p.mu.iter().chain(p.phi.iter()).chain(p.sigma.iter()).all(|v| v.is_finite())
            && p.trans.iter().flatten().all(|q| q.alpha.is_finite() && q.beta.is_finite())
            && joint.mu2.is_finite()
            && joint.psi.iter().all(|v| v.is_finite())
            && joint.sigma2.is_finite()
            && joint.rho.is_finite();
        if !finite {
            return Err(TvtpError::Domain("non-finite DGP parameter".into()));
        }
        if p.sigma.iter().any(|&s| s < 0.0) || joint.sigma2 < 0.0 {
            return Err(TvtpError::Domain("DGP scales must be non-negative".into()));
        }
        if joint.rho.abs() >= 1.0 {
            return Err(TvtpError::Domain("rho must lie in (-1, 1)".into()));
        }
        if !self.y0.is_finite() || !self.z0.is_finite() {
            return Err(TvtpError::Domain("non-finite initial values".into()));
        }
        Ok(())
    }

    fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.rep_index);
        rng
    }
}

fn sample_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (s, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return s;
        }
    }
    probs.len() - 1
}

/// Draw one path from the DGP. Deterministic given `(seed, rep_index)`;
/// the returned series has `t + 1` points and `s_true` filled.
pub fn simulate_dgp(spec: &DgpSpec) -> Result<Dataset> {
    spec.validate()?;
    let p = &spec.params;
    let joint = p.joint.as_ref().expect("validated joint block");
    let k = p.n_regimes();
    let py = p.phi.len();
    let pz = joint.psi.len();
    let rho = joint.rho;
    let cross = (1.0 - rho * rho).sqrt();

    let mut rng = spec.rng();
    let total = spec.burnin + spec.t + 1;

    let mut y = Vec::with_capacity(total);
    let mut z = Vec::with_capacity(total);
    let mut s_path = Vec::with_capacity(total);

    let pi0 = model::stationary_at(spec.z0, p)?;
    let s0 = sample_categorical(&mut rng, &pi0);
    y.push(spec.y0);
    z.push(spec.z0);
    s_path.push(s0);

    let mut qbuf = vec![0.0; k * k];
    for t in 1..total {
        // Per step: one uniform for the regime, then the two normals.
        model::transition_matrix_into(z[t - 1], p, &mut qbuf)?;
        let prev = s_path[t - 1];
        let s = sample_categorical(&mut rng, &qbuf[prev * k..(prev + 1) * k]);
        let e1: f64 = rng.sample(StandardNormal);
        let e2: f64 = rng.sample(StandardNormal);
        let u1 = e1;
        let u2 = rho * e1 + cross * e2;

        let mut mean_y = p.mu_of(s);
        for i in 0..py {
            let lag = if t >= i + 1 { y[t - 1 - i] } else { spec.y0 };
            mean_y += p.phi[i] * lag;
        }
        let mut mean_z = joint.mu2;
        for i in 0..pz {
            let lag = if t >= i + 1 { z[t - 1 - i] } else { spec.z0 };
            mean_z += joint.psi[i] * lag;
        }
        y.push(mean_y + p.sigma_of(s) * u1);
        z.push(mean_z + joint.sigma2 * u2);
        s_path.push(s);
    }

    let keep = spec.burnin..total;
    Ok(Dataset {
        y: y[keep.clone()].to_vec(),
        z: z[keep.clone()].to_vec(),
        s_true: Some(s_path[keep].to_vec()),
    })
}

/// Recover the innovation pairs `(u1, u2)` from a simulated path using the
/// true parameters and the recorded regime path.
pub fn recover_innovations(spec: &DgpSpec, data: &Dataset) -> Result<Vec<(f64, f64)>> {
    let p = &spec.params;
    let joint = p.joint.as_ref().ok_or_else(|| TvtpError::Domain("joint block required".into()))?;
    let s = data
        .s_true
        .as_ref()
        .ok_or_else(|| TvtpError::Domain("s_true required to recover innovations".into()))?;
    let py = p.phi.len();
    let pz = joint.psi.len();
    let t0 = py.max(pz).max(1);
    let mut out = Vec::with_capacity(data.len() - t0);
    for t in t0..data.len() {
        let mut mean_y = p.mu_of(s[t]);
        for i in 0..py {
            mean_y += p.phi[i] * data.y[t - 1 - i];
        }
        let mut mean_z = joint.mu2;
        for i in 0..pz {
            mean_z += joint.psi[i] * data.z[t - 1 - i];
        }
        let u1 = if p.sigma_of(s[t]) > 0.0 { (data.y[t] - mean_y) / p.sigma_of(s[t]) } else { 0.0 };
        let u2 = if joint.sigma2 > 0.0 { (data.z[t] - mean_z) / joint.sigma2 } else { 0.0 };
        out.push((u1, u2));
    }
    Ok(out)
}

/// One covariate-decile row of the empirical transition check.
#[derive(Debug, Clone, Serialize)]
pub struct TransitionBin {
    pub regime: usize,
    pub z_lo: f64,
    pub z_hi: f64,
    pub n_events: usize,
    pub observed_stay: f64,
    pub expected_stay: f64,
    /// Binomial standard deviation of the observed frequency.
    pub band: f64,
    pub within_3sigma: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransitionCheckReport {
    pub bins: Vec<TransitionBin>,
    /// Number of deciles (out of `n_deciles`) where every regime's stay
    /// frequency sits inside its 3-sigma band.
    pub deciles_ok: usize,
    pub n_deciles: usize,
}

/// Bin observed transitions by deciles of the lagged covariate and compare
/// empirical stay frequencies with the model-implied logistic curve.
pub fn empirical_transition_check(
    data: &Dataset,
    params: &ParamVector,
) -> Result<TransitionCheckReport> {
    let s = data
        .s_true
        .as_ref()
        .ok_or_else(|| TvtpError::Domain("transition check needs s_true".into()))?;
    let k = params.n_regimes();
    let n = data.len();
    if n < 20 {
        return Err(TvtpError::Domain("transition check needs a longer simulation".into()));
    }
    // Decile edges of z_{t-1} over transition events.
    let mut zs: Vec<f64> = data.z[..n - 1].to_vec();
    zs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n_deciles = 10usize;
    let edge = |q: usize| -> f64 {
        if q == 0 {
            f64::NEG_INFINITY
        } else if q == n_deciles {
            f64::INFINITY
        } else {
            zs[(q * zs.len()) / n_deciles]
        }
    };

    let mut bins = Vec::new();
    let mut ok_flags = vec![true; n_deciles];
    for d in 0..n_deciles {
        let (lo, hi) = (edge(d), edge(d + 1));
        for regime in 0..k {
            let mut n_events = 0usize;
            let mut stays = 0usize;
            let mut expected_sum = 0.0;
            for t in 1..n {
                let zprev = data.z[t - 1];
                if s[t - 1] == regime && zprev >= lo && zprev < hi {
                    n_events += 1;
                    if s[t] == regime {
                        stays += 1;
                    }
                    let q = model::transition_matrix(zprev, params)?;
                    expected_sum += q[regime * k + regime];
                }
            }
            if n_events == 0 {
                continue;
            }
            let observed = stays as f64 / n_events as f64;
            let expected = expected_sum / n_events as f64;
            let band = (expected * (1.0 - expected) / n_events as f64).sqrt();
            let within = (observed - expected).abs() <= 3.0 * band;
            if !within {
                ok_flags[d] = false;
            }
            bins.push(TransitionBin {
                regime,
                z_lo: lo,
                z_hi: hi,
                n_events,
                observed_stay: observed,
                expected_stay: expected,
                band,
                within_3sigma: within,
            });
        }
    }
    Ok(TransitionCheckReport {
        bins,
        deciles_ok: ok_flags.iter().filter(|&&v| v).count(),
        n_deciles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TransPair;

    fn corr(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>) -> f64 {
        let xs: Vec<f64> = a.collect();
        let ys: Vec<f64> = b.collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (x, y) in xs.iter().zip(ys.iter()) {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
            syy += (y - my) * (y - my);
        }
        sxy / (sxx * syy).sqrt()
    }

    #[test]
    fn noise_free_recursion_is_exact() {
        let mut spec = DgpSpec::study(0.0, 50, 1, 0);
        spec.params.sigma = vec![0.0, 0.0];
        spec.params.phi = vec![0.0];
        let j = spec.params.joint.as_mut().unwrap();
        j.sigma2 = 0.0;
        j.psi = vec![0.0];
        let data = simulate_dgp(&spec).unwrap();
        let s = data.s_true.as_ref().unwrap();
        for t in 1..data.len() {
            let expect = if s[t] == 0 { 1.0 } else { -1.0 };
            assert_eq!(data.y[t], expect);
            assert_eq!(data.z[t], 0.2);
        }
    }

    #[test]
    fn identical_specs_are_bit_identical() {
        let spec = DgpSpec::study(0.8, 300, 42, 7);
        let a = simulate_dgp(&spec).unwrap();
        let b = simulate_dgp(&spec).unwrap();
        assert_eq!(a, b);
        let other = DgpSpec { rep_index: 8, ..spec };
        assert_ne!(simulate_dgp(&other).unwrap(), a);
    }

    #[test]
    fn z_mean_matches_stationary_value() {
        let spec = DgpSpec::study(0.0, 100_000, 5, 0);
        let data = simulate_dgp(&spec).unwrap();
        let mean = data.z.iter().sum::<f64>() / data.z.len() as f64;
        // Var of the sample mean of an AR(1): sigma^2/(1-psi^2) * (1+psi)/(1-psi) / T.
        let (psi, sigma2): (f64, f64) = (0.8, 1.0);
        let var = sigma2 * sigma2 / (1.0 - psi * psi) * (1.0 + psi) / (1.0 - psi)
            / data.z.len() as f64;
        assert!((mean - 1.0).abs() < 3.0 * var.sqrt(), "mean {mean}");
    }

    #[test]
    fn innovation_correlation_matches_rho() {
        for rho in [0.0, 0.8] {
            let spec = DgpSpec::study(rho, 50_000, 11, 3);
            let data = simulate_dgp(&spec).unwrap();
            let innov = recover_innovations(&spec, &data).unwrap();
            let r = corr(innov.iter().map(|p| p.0), innov.iter().map(|p| p.1));
            let se = (1.0 - rho * rho) / (innov.len() as f64).sqrt();
            assert!((r - rho).abs() < 3.0 * se, "rho {rho}: sample {r}");
        }
    }

    #[test]
    fn distinct_streams_are_uncorrelated() {
        let sa = DgpSpec::study(0.0, 20_000, 9, 0);
        let sb = DgpSpec::study(0.0, 20_000, 9, 1);
        let a = simulate_dgp(&sa).unwrap();
        let b = simulate_dgp(&sb).unwrap();
        let ia = recover_innovations(&sa, &a).unwrap();
        let ib = recover_innovations(&sb, &b).unwrap();
        let r = corr(ia.iter().map(|p| p.0), ib.iter().map(|p| p.0));
        assert!(r.abs() < 4.0 / (ia.len() as f64).sqrt(), "cross-stream corr {r}");
    }

    #[test]
    fn flat_beta_gives_flat_stay_frequencies() {
        let mut spec = DgpSpec::study(0.0, 60_000, 13, 0);
        spec.params.trans = vec![
            vec![TransPair { alpha: 2.0, beta: 0.0 }],
            vec![TransPair { alpha: 2.0, beta: 0.0 }],
        ];
        let data = simulate_dgp(&spec).unwrap();
        let report = empirical_transition_check(&data, &spec.params).unwrap();
        assert!(report.deciles_ok >= 9, "deciles ok: {}", report.deciles_ok);
        let target = 1.0 / (1.0 + (-2.0f64).exp());
        for bin in &report.bins {
            assert!((bin.expected_stay - target).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_chain_never_leaves_its_regime() {
        let mut spec = DgpSpec::study(0.0, 5_000, 21, 0);
        spec.params.trans = vec![
            vec![TransPair { alpha: 40.0, beta: 0.0 }],
            vec![TransPair { alpha: 40.0, beta: 0.0 }],
        ];
        let data = simulate_dgp(&spec).unwrap();
        let s = data.s_true.as_ref().unwrap();
        assert!(s.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn burnin_washes_out_initial_values() {
        // Two-sample KS on decorrelated subsamples; identical DGP except
        // for the starting point.
        let mut a_spec = DgpSpec::study(0.0, 50_000, 33, 0);
        a_spec.burnin = 1000;
        let mut b_spec = DgpSpec::study(0.0, 50_000, 33, 1);
        b_spec.burnin = 1000;
        b_spec.y0 = 25.0;
        b_spec.z0 = -10.0;
        let a = simulate_dgp(&a_spec).unwrap();
        let b = simulate_dgp(&b_spec).unwrap();
        let mut xa: Vec<f64> = a.y.iter().copied().step_by(20).collect();
        let mut xb: Vec<f64> = b.y.iter().copied().step_by(20).collect();
        xa.sort_by(|u, v| u.partial_cmp(v).unwrap());
        xb.sort_by(|u, v| u.partial_cmp(v).unwrap());
        let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
        while i < xa.len() && j < xb.len() {
            if xa[i] <= xb[j] {
                i += 1;
            } else {
                j += 1;
            }
            let fa = i as f64 / xa.len() as f64;
            let fb = j as f64 / xb.len() as f64;
            d = d.max((fa - fb).abs());
        }
        let (n, m) = (xa.len() as f64, xb.len() as f64);
        let crit = 1.628 * ((n + m) / (n * m)).sqrt();
        assert!(d < crit, "KS statistic {d} vs critical {crit}");
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = DgpSpec::study(0.0, 0, 1, 0);
        assert!(simulate_dgp(&spec).is_err());
        spec.t = 10;
        spec.params.joint.as_mut().unwrap().rho = 1.0;
        assert!(simulate_dgp(&spec).is_err());
    }
}
