//! Exact verification of the conditional-mixing bound and the Dobrushin
//! coefficient machinery on finite data segments.
//!
//! Everything here is computed by exact log-space enumeration over regime
//! paths — no sampling — so each inequality is a crisp pass/fail check. The
//! quantity bounded is the standard total-variation distance (half the l1
//! norm); the product of per-step Dobrushin coefficients dominates it, and
//! `1 - q_lower_bound` dominates each coefficient.

use serde::Serialize;

use crate::error::{Result, TvtpError};
use crate::filter::{run_pass, Dataset, InitRule};
use crate::model::{q_lower_bound, ModelConfig, ParamVector};

/// Enumeration guard: the number of weighted path evaluations per call.
const ENUM_GUARD: u128 = 1 << 22;

/// `Π (1 - q̲(z_n))` over a covariate path: the product mixing bound
/// for the segment whose transition steps are driven by these values.
pub fn product_bound(z_path: &[f64], params: &ParamVector) -> Result<f64> {
    let mut prod = 1.0;
    for &z in z_path {
        prod *= 1.0 - q_lower_bound(z, params)?;
    }
    Ok(prod)
}

/// Conditional path weights shared by the exact TV and Dobrushin
/// computations: emission and transition log-weights over the segment.
struct Segment {
    k: usize,
    /// Number of transition steps: anchor state -> ... -> state after the
    /// last observation.
    n_steps: usize,
    /// `qmats[i]` drives step i (row-major K×K); step `n_steps - 1` leads to
    /// the post-sample state.
    qmats: Vec<f64>,
    /// `logf[i*k + s]`: emission weight attached to the state reached by
    /// step i; the final step has none.
    logf: Vec<f64>,
}

impl Segment {
    fn build(data: &Dataset, params: &ParamVector, config: &ModelConfig) -> Result<Self> {
        // The filter pass provides per-step transition matrices and emission
        // log densities for the scored range; one extra kernel at the last
        // covariate value drives the post-sample state.
        let pass = run_pass(data, params, config, &InitRule::Uniform)?;
        let k = pass.k;
        let n = pass.n;
        let mut qmats = pass.qmats.clone();
        let mut extra = vec![0.0; k * k];
        crate::model::transition_matrix_into(data.z[data.len() - 1], params, &mut extra)?;
        qmats.extend_from_slice(&extra);
        Ok(Segment { k, n_steps: n + 1, qmats, logf: pass.logf })
    }

    fn guard(&self, extra_states: u32) -> Result<()> {
        let work = (self.k as u128)
            .checked_pow(self.n_steps as u32 + extra_states)
            .unwrap_or(u128::MAX);
        if work > ENUM_GUARD {
            return Err(TvtpError::Size(format!(
                "segment enumeration needs K^{} paths; guard is 2^22",
                self.n_steps as u32 + extra_states
            )));
        }
        Ok(())
    }

    /// `P(S_final = · | S_anchor = b, data)` by exact path enumeration.
    fn conditional_final_given_anchor(&self, b: usize) -> Result<Vec<f64>> {
        self.guard(0)?;
        let k = self.k;
        // log-space forward sweep conditioned on the anchor state: no
        // path explosion needed, the chain is Markov given the data.
        let mut logw = vec![f64::NEG_INFINITY; k];
        logw[b] = 0.0;
        for i in 0..self.n_steps {
            let q = &self.qmats[i * k * k..(i + 1) * k * k];
            let mut next = vec![f64::NEG_INFINITY; k];
            for s in 0..k {
                if logw[s] == f64::NEG_INFINITY {
                    continue;
                }
                for s2 in 0..k {
                    let mut w = logw[s] + q[s * k + s2].ln();
                    if i < self.n_steps - 1 {
                        w += self.logf[i * k + s2];
                    }
                    next[s2] = logaddexp(next[s2], w);
                }
            }
            logw = next;
        }
        normalize_log(&logw).ok_or_else(|| {
            TvtpError::Numeric(format!("zero conditional mass given anchor state {b}"))
        })
    }

    /// `P(S_{l+1} = · | S_l = a, data)`: the one-step conditional kernel at
    /// interior time l, via a backward (likelihood-of-the-future) sweep.
    fn one_step_kernel(&self, l: usize, a: usize) -> Result<Vec<f64>> {
        let k = self.k;
        // beta[s] = log P(future data | state s after step l).
        let mut beta = vec![0.0; k];
        for i in (l + 1..self.n_steps).rev() {
            let q = &self.qmats[i * k * k..(i + 1) * k * k];
            let mut prev = vec![f64::NEG_INFINITY; k];
            for s in 0..k {
                for s2 in 0..k {
                    let mut w = q[s * k + s2].ln() + beta[s2];
                    if i < self.n_steps - 1 {
                        w += self.logf[i * k + s2];
                    }
                    prev[s] = logaddexp(prev[s], w);
                }
            }
            beta = prev;
        }
        let q = &self.qmats[l * k * k..(l + 1) * k * k];
        let mut logw = vec![f64::NEG_INFINITY; k];
        for s2 in 0..k {
            let mut w = q[a * k + s2].ln() + beta[s2];
            if l < self.n_steps - 1 {
                w += self.logf[l * k + s2];
            }
            logw[s2] = w;
        }
        normalize_log(&logw)
            .ok_or_else(|| TvtpError::Numeric(format!("zero conditional mass at step {l}")))
    }
}

fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

fn normalize_log(logw: &[f64]) -> Option<Vec<f64>> {
    let m = logw.iter().fold(f64::NEG_INFINITY, |x, &y| x.max(y));
    if m == f64::NEG_INFINITY {
        return None;
    }
    let total: f64 = logw.iter().map(|&w| (w - m).exp()).sum();
    Some(logw.iter().map(|&w| (w - m).exp() / total).collect())
}

fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Exact max-over-anchor-pairs total-variation distance between the
/// conditional laws of the post-sample state:
/// `max_{b,c} TV( P(S_final | S_anchor=b, data), P(S_final | S_anchor=c, data) )`.
///
/// The whole dataset is the conditioning segment; the anchor state sits at
/// the last pre-sample index and `S_final` one step past the data.
pub fn exact_conditional_tv(
    data: &Dataset,
    params: &ParamVector,
    config: &ModelConfig,
) -> Result<f64> {
    let seg = Segment::build(data, params, config)?;
    let dists: Vec<Vec<f64>> =
        (0..seg.k).map(|b| seg.conditional_final_given_anchor(b)).collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    for b in 0..seg.k {
        for c in b + 1..seg.k {
            worst = worst.max(tv_distance(&dists[b], &dists[c]));
        }
    }
    Ok(worst)
}

/// The covariate values driving the transition steps of
/// [`exact_conditional_tv`] on this dataset: everything from the anchor
/// index through the last observation.
pub fn bound_covariates(data: &Dataset, config: &ModelConfig) -> Vec<f64> {
    let t0 = Dataset::first_scored(config);
    data.z[t0 - 1..].to_vec()
}

/// Dobrushin coefficient of the one-step conditional kernel
/// `P(S_{l+1} = · | S_l = ·, data)` at interior step `l` (0-based over the
/// same steps as [`bound_covariates`]).
pub fn dobrushin_coefficient(
    data: &Dataset,
    params: &ParamVector,
    config: &ModelConfig,
    l: usize,
) -> Result<f64> {
    let seg = Segment::build(data, params, config)?;
    seg.guard(0)?;
    if l >= seg.n_steps {
        return Err(TvtpError::Domain(format!(
            "step {l} out of range; segment has {} steps",
            seg.n_steps
        )));
    }
    let rows: Vec<Vec<f64>> = (0..seg.k).map(|a| seg.one_step_kernel(l, a)).collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    for a in 0..seg.k {
        for b in a + 1..seg.k {
            worst = worst.max(tv_distance(&rows[a], &rows[b]));
        }
    }
    Ok(worst)
}

/// Per-instance record of the mixing verification.
#[derive(Debug, Clone, Serialize)]
pub struct MixingRecord {
    pub segment_len: usize,
    pub product_bound: f64,
    pub exact_tv: f64,
    pub bound_satisfied: bool,
    /// Product of per-step Dobrushin coefficients (dominates `exact_tv`).
    pub dobrushin_product: f64,
    /// Worst per-step excess of a coefficient over `1 - q̲(z_l)`.
    pub max_step_excess: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MixingReport {
    pub records: Vec<MixingRecord>,
    /// `max(exact_tv - product_bound)` over records; ≤ 0 up to rounding
    /// when the bound holds everywhere.
    pub max_violation: f64,
    pub n_violations: usize,
}

/// Verify the mixing bound and the per-step coefficient bound on one
/// segment, exactly.
pub fn verify_segment(
    data: &Dataset,
    params: &ParamVector,
    config: &ModelConfig,
) -> Result<MixingRecord> {
    let tv = exact_conditional_tv(data, params, config)?;
    let zs = bound_covariates(data, config);
    let bound = product_bound(&zs, params)?;
    let mut dob_prod = 1.0;
    let mut max_excess = f64::NEG_INFINITY;
    for (l, &z) in zs.iter().enumerate() {
        let coeff = dobrushin_coefficient(data, params, config, l)?;
        dob_prod *= coeff;
        max_excess = max_excess.max(coeff - (1.0 - q_lower_bound(z, params)?));
    }
    Ok(MixingRecord {
        segment_len: zs.len(),
        product_bound: bound,
        exact_tv: tv,
        bound_satisfied: tv <= bound + 1e-10,
        dobrushin_product: dob_prod,
        max_step_excess: max_excess,
    })
}

/// Aggregate a set of records into a report.
pub fn summarize_records(records: Vec<MixingRecord>) -> MixingReport {
    let max_violation = records
        .iter()
        .map(|r| r.exact_tv - r.product_bound)
        .fold(f64::NEG_INFINITY, f64::max);
    let n_violations = records.iter().filter(|r| !r.bound_satisfied).count();
    MixingReport { records, max_violation, n_violations }
}

/// Per-step record of the initial-condition forgetting curve.
#[derive(Debug, Clone, Serialize)]
pub struct ForgettingPoint {
    /// Data index of the scored observation.
    pub t: usize,
    /// |log p_t under init A - log p_t under init B|.
    pub abs_diff: f64,
    /// Running `Π (1 - q̲(z_i))` up to the step into t.
    pub running_bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ForgettingReport {
    pub points: Vec<ForgettingPoint>,
    /// Smallest C with `abs_diff ≤ C * running_bound` at every step where
    /// the difference is resolvable above roundoff.
    pub fitted_constant: f64,
    /// Least-squares slope of log10(abs_diff) against t (geometric decay
    /// rate), over resolvable steps.
    pub decay_rate_log10: f64,
}

/// Compare per-step log conditional densities under two init rules and pair
/// each difference with the running product bound.
pub fn init_forgetting_curve(
    data: &Dataset,
    params: &ParamVector,
    config: &ModelConfig,
    init_a: &InitRule,
    init_b: &InitRule,
) -> Result<ForgettingReport> {
    let pa = crate::filter::forward_filter(data, params, config, init_a)?;
    let pb = crate::filter::forward_filter(data, params, config, init_b)?;
    let t0 = pa.first_scored;
    let mut running = 1.0;
    let mut points = Vec::with_capacity(pa.step_loglik.len());
    let mut fitted_c = 0.0f64;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, (&a, &b)) in pa.step_loglik.iter().zip(pb.step_loglik.iter()).enumerate() {
        running *= 1.0 - q_lower_bound(data.z[t0 - 1 + i], params)?;
        let diff = (a - b).abs();
        if diff > 1e-15 && running > 0.0 {
            fitted_c = fitted_c.max(diff / running);
        }
        if diff > 1e-14 {
            xs.push((t0 + i) as f64);
            ys.push(diff.log10());
        }
        points.push(ForgettingPoint { t: t0 + i, abs_diff: diff, running_bound: running });
    }
    let decay = if xs.len() >= 2 {
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(ys.iter()).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        if sxx > 0.0 {
            sxy / sxx
        } else {
            0.0
        }
    } else {
        0.0
    };
    Ok(ForgettingReport { points, fitted_constant: fitted_c, decay_rate_log10: decay })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{transition_matrix, TransPair};
    use crate::simulate::{simulate_dgp, DgpSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn short_paper_segment(rng: &mut ChaCha8Rng, len: usize) -> (Dataset, ParamVector, ModelConfig) {
        let spec = DgpSpec::study(0.8, len, rng.gen(), rng.gen::<u32>() as u64);
        let mut data = simulate_dgp(&spec).unwrap();
        data.s_true = None;
        let config = ModelConfig::joint(2, 1, 1);
        let mut params = spec.params;
        // Jitter the evaluation point so the check is not tied to the truth.
        for row in params.trans.iter_mut() {
            for pair in row.iter_mut() {
                pair.alpha += rng.gen_range(-1.0..1.0);
                pair.beta += rng.gen_range(-0.5..0.5);
            }
        }
        params.mu[0] += rng.gen_range(-0.5..0.5);
        params.joint.as_mut().unwrap().rho = rng.gen_range(-0.5..0.5);
        (data, params, config)
    }

    #[test]
    fn product_bound_basics() {
        let params = ParamVector {
            mu: vec![0.0, 0.0],
            phi: vec![],
            sigma: vec![1.0, 1.0],
            trans: vec![
                vec![TransPair { alpha: 0.0, beta: 0.0 }],
                vec![TransPair { alpha: 0.0, beta: 0.0 }],
            ],
            joint: None,
        };
        // q̲ = 0.5 everywhere: three steps give (1/2)^3.
        assert!((product_bound(&[0.0, 1.0, -2.0], &params).unwrap() - 0.125).abs() < 1e-15);
        // Empty product.
        assert_eq!(product_bound(&[], &params).unwrap(), 1.0);
    }

    #[test]
    fn single_step_tv_matches_hand_computation() {
        // Segment of minimal length: one scored observation. The exact TV
        // between the post-sample conditionals is computable by hand from
        // the two-step kernel with an emission tilt in between.
        let config = ModelConfig::partial(2, 1);
        let params = ParamVector {
            mu: vec![1.0, -1.0],
            phi: vec![0.3],
            sigma: vec![1.0, 0.8],
            trans: vec![
                vec![TransPair { alpha: 1.2, beta: -0.4 }],
                vec![TransPair { alpha: 0.7, beta: 0.6 }],
            ],
            joint: None,
        };
        let data = Dataset::new(vec![0.4, 0.9, 0.1], vec![0.5, -0.2, 0.3]);
        // Hand enumeration: anchor at index 0, scored observations at
        // t = 1, 2, and the post-sample state one kernel step further.
        let q1 = transition_matrix(0.5, &params).unwrap();
        let q2 = transition_matrix(-0.2, &params).unwrap();
        let q3 = transition_matrix(0.3, &params).unwrap();
        let f = |s: usize, y: f64, lag: f64| {
            crate::model::emission_logdensity(&config, &params, s, y, &[lag], 0.0, &[])
                .unwrap()
                .exp()
        };
        let mut dist = Vec::new();
        for b in 0..2 {
            let mut w = [0.0f64; 2];
            for s1 in 0..2 {
                for s2 in 0..2 {
                    for s3 in 0..2 {
                        w[s3] += q1[b * 2 + s1]
                            * f(s1, 0.9, 0.4)
                            * q2[s1 * 2 + s2]
                            * f(s2, 0.1, 0.9)
                            * q3[s2 * 2 + s3];
                    }
                }
            }
            let tot = w[0] + w[1];
            dist.push([w[0] / tot, w[1] / tot]);
        }
        let expect = 0.5 * ((dist[0][0] - dist[1][0]).abs() + (dist[0][1] - dist[1][1]).abs());
        let got = exact_conditional_tv(&data, &params, &config).unwrap();
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
        let rec = verify_segment(&data, &params, &config).unwrap();
        assert!(rec.bound_satisfied);
    }

    #[test]
    fn identical_rows_mix_in_one_step() {
        // Equal (alpha, beta) across rows makes the raw kernel rows equal;
        // with emission parameters shared across regimes the data carry no
        // regime information, so the conditional TV is exactly zero.
        let config = ModelConfig::partial(2, 1);
        let params = ParamVector {
            mu: vec![0.5, 0.5],
            phi: vec![0.2],
            sigma: vec![1.0, 1.0],
            trans: vec![
                vec![TransPair { alpha: 0.8, beta: 0.3 }],
                vec![TransPair { alpha: -0.8, beta: -0.3 }],
            ],
            joint: None,
        };
        // Rows (g, 1-g) and (1-g', g') with g' = logistic(-0.8-0.3z) =
        // 1 - logistic(0.8+0.3z): both rows equal (g, 1-g).
        let data = Dataset::new(vec![0.1, -0.3, 0.8, 0.2], vec![0.4, 0.1, -0.6, 0.9]);
        let tv = exact_conditional_tv(&data, &params, &config).unwrap();
        assert!(tv < 1e-14, "tv = {tv}");
        let coeff = dobrushin_coefficient(&data, &params, &config, 1).unwrap();
        assert!(coeff < 1e-14);
    }

    #[test]
    fn saturated_kernel_has_maximal_coefficient() {
        // Near-identity kernel and regime-blind emissions: the one-step
        // conditional coefficient approaches 1.
        let config = ModelConfig::partial(2, 1);
        let params = ParamVector {
            mu: vec![0.0, 0.0],
            phi: vec![0.0],
            sigma: vec![1.0, 1.0],
            trans: vec![
                vec![TransPair { alpha: 40.0, beta: 0.0 }],
                vec![TransPair { alpha: 40.0, beta: 0.0 }],
            ],
            joint: None,
        };
        let data = Dataset::new(vec![0.0, 0.5, -0.5], vec![0.0, 0.0, 0.0]);
        let coeff = dobrushin_coefficient(&data, &params, &config, 0).unwrap();
        assert!(coeff > 1.0 - 1e-9, "coefficient {coeff}");
    }

    #[test]
    fn tv_bound_and_chain_rule_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for rep in 0..60 {
            let len = rng.gen_range(2..=8);
            let (data, params, config) = short_paper_segment(&mut rng, len);
            let rec = verify_segment(&data, &params, &config).unwrap();
            assert!(
                rec.exact_tv <= rec.product_bound + 1e-10,
                "rep {rep}: tv {} > bound {}",
                rec.exact_tv,
                rec.product_bound
            );
            assert!(
                rec.exact_tv <= rec.dobrushin_product + 1e-10,
                "rep {rep}: tv {} > dobrushin product {}",
                rec.exact_tv,
                rec.dobrushin_product
            );
            assert!(rec.max_step_excess <= 1e-10, "rep {rep}: excess {}", rec.max_step_excess);
        }
    }

    #[test]
    fn bound_is_monotone_in_conditioning_steps() {
        let params = ParamVector::study_dgp(0.0);
        let zs = [0.3, 1.2, -0.5, 0.9, 2.0];
        let mut prev = 1.0;
        for n in 1..=zs.len() {
            let b = product_bound(&zs[..n], &params).unwrap();
            assert!(b <= prev + 1e-15);
            prev = b;
        }
    }

    #[test]
    fn enumeration_guard_trips_on_long_segments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (data, params, config) = short_paper_segment(&mut rng, 40);
        match exact_conditional_tv(&data, &params, &config) {
            Err(TvtpError::Size(_)) => {}
            other => panic!("expected size guard, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn identical_init_rules_give_zero_curve() {
        let spec = DgpSpec::study(0.0, 120, 3, 0);
        let data = simulate_dgp(&spec).unwrap();
        let config = ModelConfig::joint(2, 1, 1);
        let report = init_forgetting_curve(
            &data,
            &spec.params,
            &config,
            &InitRule::Uniform,
            &InitRule::Uniform,
        )
        .unwrap();
        assert!(report.points.iter().all(|p| p.abs_diff == 0.0));
    }

    #[test]
    fn init_differences_decay_geometrically() {
        let spec = DgpSpec::study(0.8, 400, 19, 1);
        let data = simulate_dgp(&spec).unwrap();
        let config = ModelConfig::joint(2, 1, 1);
        let report = init_forgetting_curve(
            &data,
            &spec.params,
            &config,
            &InitRule::Uniform,
            &InitRule::StationaryAtX0,
        )
        .unwrap();
        // Differences start resolvable and die out well before the end.
        assert!(report.points[0].abs_diff > 1e-12);
        let tail_max = report
            .points
            .iter()
            .filter(|p| p.t >= 200)
            .map(|p| p.abs_diff)
            .fold(0.0f64, f64::max);
        assert!(tail_max < 1e-12, "tail max {tail_max}");
        assert!(report.decay_rate_log10 < 0.0, "decay {}", report.decay_rate_log10);
        assert!(report.fitted_constant.is_finite());
        // The fitted constant dominates the curve by construction.
        for p in &report.points {
            assert!(p.abs_diff <= report.fitted_constant * p.running_bound + 1e-15);
        }
    }
}
