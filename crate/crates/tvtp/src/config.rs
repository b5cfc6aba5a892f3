//! Declarative run configuration: one TOML document with sections for the
//! model, the fit options, the data generating process, the Monte Carlo
//! design and the mixing check. Unknown keys are rejected; each command
//! validates that the sections it needs are present.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TvtpError};
use crate::estimate::{FitOptions, Hac, StepRule};
use crate::filter::InitRule;
use crate::mc::MCDesign;
use crate::model::{JointParams, ModelConfig, ParamVector, SwitchMask, TransPair, Variant};
use crate::simulate::DgpSpec;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<ModelSection>,
    pub fit: Option<FitSection>,
    pub dgp: Option<DgpSection>,
    pub mc: Option<McSection>,
    pub mixing: Option<MixingSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub variant: Variant,
    #[serde(default = "default_regimes")]
    pub n_regimes: usize,
    #[serde(default = "default_one")]
    pub ar_order_y: usize,
    /// Joint variant only; defaults to 1 there and 0 for the partial.
    pub ar_order_z: Option<usize>,
    #[serde(default = "default_true")]
    pub switch_intercept: bool,
    #[serde(default = "default_true")]
    pub switch_scale: bool,
}

fn default_regimes() -> usize {
    2
}
fn default_one() -> usize {
    1
}
fn default_true() -> bool {
    true
}

impl ModelSection {
    pub fn to_model_config(&self) -> Result<ModelConfig> {
        let ar_order_z = match self.variant {
            Variant::Partial => self.ar_order_z.unwrap_or(0),
            Variant::Joint => self.ar_order_z.unwrap_or(1),
        };
        let config = ModelConfig {
            variant: self.variant,
            n_regimes: self.n_regimes,
            ar_order_y: self.ar_order_y,
            ar_order_z,
            switch_mask: SwitchMask { intercept: self.switch_intercept, scale: self.switch_scale },
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_fd_rel")]
    pub fd_rel: f64,
    #[serde(default = "default_fd_floor")]
    pub fd_floor: f64,
    /// "none", "bartlett" (automatic lag) or "bartlett:<lag>".
    #[serde(default = "default_hac")]
    pub hac: String,
    /// "stationary" or "uniform".
    #[serde(default = "default_init")]
    pub init: String,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection {
            grad_tol: default_grad_tol(),
            max_iter: default_max_iter(),
            fd_rel: default_fd_rel(),
            fd_floor: default_fd_floor(),
            hac: default_hac(),
            init: default_init(),
        }
    }
}

fn default_grad_tol() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    500
}
fn default_fd_rel() -> f64 {
    1e-6
}
fn default_fd_floor() -> f64 {
    1e-7
}
fn default_hac() -> String {
    "none".into()
}
fn default_init() -> String {
    "stationary".into()
}

impl FitSection {
    pub fn to_fit_options(&self, starts: Vec<ParamVector>, n_obs: usize) -> Result<FitOptions> {
        let hac = match self.hac.as_str() {
            "none" => Hac::None,
            "bartlett" => Hac::Bartlett { lag: Hac::default_bartlett_lag(n_obs) },
            other => match other.strip_prefix("bartlett:").and_then(|s| s.parse::<usize>().ok()) {
                Some(lag) => Hac::Bartlett { lag },
                None => {
                    return Err(TvtpError::Config(format!(
                        "fit.hac: expected \"none\", \"bartlett\" or \"bartlett:<lag>\", got {other:?}"
                    )))
                }
            },
        };
        let init = match self.init.as_str() {
            "stationary" => InitRule::StationaryAtX0,
            "uniform" => InitRule::Uniform,
            other => {
                return Err(TvtpError::Config(format!(
                    "fit.init: expected \"stationary\" or \"uniform\", got {other:?}"
                )))
            }
        };
        let mut options = FitOptions::new(starts);
        options.grad_tol = self.grad_tol;
        options.max_iter = self.max_iter;
        options.fd = StepRule { rel: self.fd_rel, floor: self.fd_floor };
        options.hac = hac;
        options.init = init;
        options.validate()?;
        Ok(options)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSection {
    pub t: usize,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_burnin")]
    pub burnin: usize,
    #[serde(default = "default_y0")]
    pub y0: f64,
    #[serde(default = "default_z0")]
    pub z0: f64,
    #[serde(default = "default_one_u64")]
    pub seed: u64,
    #[serde(default)]
    pub rep_index: u64,
    #[serde(default = "default_mu")]
    pub mu: Vec<f64>,
    #[serde(default = "default_phi")]
    pub phi: Vec<f64>,
    #[serde(default = "default_sigma")]
    pub sigma: Vec<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: Vec<f64>,
    #[serde(default = "default_beta")]
    pub beta: Vec<f64>,
    #[serde(default = "default_mu2")]
    pub mu2: f64,
    #[serde(default = "default_psi")]
    pub psi: Vec<f64>,
    #[serde(default = "default_one_f64")]
    pub sigma2: f64,
}

fn default_rho() -> f64 {
    0.0
}
fn default_burnin() -> usize {
    100
}
fn default_y0() -> f64 {
    0.5
}
fn default_z0() -> f64 {
    1.0
}
fn default_one_u64() -> u64 {
    1
}
fn default_mu() -> Vec<f64> {
    vec![1.0, -1.0]
}
fn default_phi() -> Vec<f64> {
    vec![0.9]
}
fn default_sigma() -> Vec<f64> {
    vec![1.0, 1.0]
}
fn default_alpha() -> Vec<f64> {
    vec![2.0, 2.0]
}
fn default_beta() -> Vec<f64> {
    vec![-0.5, 0.5]
}
fn default_mu2() -> f64 {
    0.2
}
fn default_psi() -> Vec<f64> {
    vec![0.8]
}
fn default_one_f64() -> f64 {
    1.0
}

impl DgpSection {
    pub fn to_dgp_spec(&self, seed_override: Option<u64>) -> Result<DgpSpec> {
        if self.alpha.len() != self.beta.len() || self.alpha.len() != self.mu.len() {
            return Err(TvtpError::Config(
                "dgp: mu, alpha and beta must have one entry per regime".into(),
            ));
        }
        let k = self.mu.len();
        if k != 2 {
            return Err(TvtpError::Config("dgp: the simulator family has 2 regimes".into()));
        }
        let params = ParamVector {
            mu: self.mu.clone(),
            phi: self.phi.clone(),
            sigma: self.sigma.clone(),
            trans: (0..k)
                .map(|s| vec![TransPair { alpha: self.alpha[s], beta: self.beta[s] }])
                .collect(),
            joint: Some(JointParams {
                mu2: self.mu2,
                psi: self.psi.clone(),
                sigma2: self.sigma2,
                rho: self.rho,
            }),
        };
        let spec = DgpSpec {
            params,
            t: self.t,
            burnin: self.burnin,
            y0: self.y0,
            z0: self.z0,
            seed: seed_override.unwrap_or(self.seed),
            rep_index: self.rep_index,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub rho_grid: Vec<f64>,
    pub t_grid: Vec<usize>,
    pub n_reps: usize,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Variant>,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_one_u64")]
    pub master_seed: u64,
    #[serde(default)]
    pub full_starts: bool,
    #[serde(default = "default_mc_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_mc_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_burnin")]
    pub burnin: usize,
}

fn default_estimators() -> Vec<Variant> {
    vec![Variant::Partial, Variant::Joint]
}
fn default_level() -> f64 {
    0.05
}
fn default_mc_grad_tol() -> f64 {
    1e-6
}
fn default_mc_max_iter() -> usize {
    300
}

impl McSection {
    pub fn to_mc_design(&self, seed_override: Option<u64>) -> Result<MCDesign> {
        let seed = seed_override.unwrap_or(self.master_seed);
        let mut dgp = DgpSpec::study(self.rho_grid.first().copied().unwrap_or(0.0), 1, seed, 0);
        dgp.burnin = self.burnin;
        // The per-cell T and rho are filled in by the runner; this template
        // carries the shared pieces.
        dgp.t = *self.t_grid.first().ok_or_else(|| TvtpError::Config("mc.t_grid is empty".into()))?;
        let design = MCDesign {
            dgp,
            rho_grid: self.rho_grid.clone(),
            t_grid: self.t_grid.clone(),
            n_reps: self.n_reps,
            estimators: self.estimators.clone(),
            level: self.level,
            master_seed: seed,
            full_starts: self.full_starts,
            grad_tol: self.grad_tol,
            max_iter: self.max_iter,
        };
        design.validate()?;
        Ok(design)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixingSection {
    #[serde(default = "default_instances")]
    pub n_instances: usize,
    /// Longest segment (scored observations per instance).
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default = "default_one_u64")]
    pub seed: u64,
}

impl Default for MixingSection {
    fn default() -> Self {
        MixingSection { n_instances: default_instances(), max_len: default_max_len(), seed: 1 }
    }
}

fn default_instances() -> usize {
    500
}
fn default_max_len() -> usize {
    8
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| TvtpError::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn require_model(&self) -> Result<&ModelSection> {
        self.model
            .as_ref()
            .ok_or_else(|| TvtpError::Config("missing required section [model]".into()))
    }

    pub fn require_dgp(&self) -> Result<&DgpSection> {
        self.dgp
            .as_ref()
            .ok_or_else(|| TvtpError::Config("missing required section [dgp]".into()))
    }

    pub fn require_mc(&self) -> Result<&McSection> {
        self.mc.as_ref().ok_or_else(|| TvtpError::Config("missing required section [mc]".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_simulate_config_parses_with_defaults() {
        let cfg = RunConfig::from_toml("[dgp]\nt = 200\nrho = 0.8\n").unwrap();
        let spec = cfg.require_dgp().unwrap().to_dgp_spec(None).unwrap();
        assert_eq!(spec.t, 200);
        assert_eq!(spec.burnin, 100);
        assert_eq!(spec.y0, 0.5);
        assert_eq!(spec.z0, 1.0);
        assert_eq!(spec.params.joint.as_ref().unwrap().rho, 0.8);
        assert_eq!(spec.params.mu, vec![1.0, -1.0]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("[dgp]\nt = 10\nbogus_key = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus_key"), "{err}");
        let err2 = RunConfig::from_toml("[nope]\nx = 1\n").unwrap_err();
        assert!(err2.to_string().contains("nope"), "{err2}");
    }

    #[test]
    fn missing_required_keys_name_the_path() {
        let err = RunConfig::from_toml("[dgp]\nrho = 0.8\n").unwrap_err();
        assert!(err.to_string().contains('t'), "{err}");
        let cfg = RunConfig::from_toml("").unwrap();
        let err3 = cfg.require_mc().unwrap_err();
        assert!(err3.to_string().contains("[mc]"), "{err3}");
    }

    #[test]
    fn model_and_fit_sections_convert() {
        let cfg = RunConfig::from_toml(
            "[model]\nvariant = \"joint\"\n\n[fit]\ngrad_tol = 1e-7\nhac = \"bartlett:4\"\ninit = \"uniform\"\n",
        )
        .unwrap();
        let model = cfg.require_model().unwrap().to_model_config().unwrap();
        assert_eq!(model.variant, Variant::Joint);
        assert_eq!(model.ar_order_z, 1);
        let truth = ParamVector::study_dgp(0.0);
        let opts = cfg.fit.as_ref().unwrap().to_fit_options(vec![truth], 800).unwrap();
        assert_eq!(opts.grad_tol, 1e-7);
        assert_eq!(opts.hac, Hac::Bartlett { lag: 4 });
        assert_eq!(opts.init, InitRule::Uniform);
        // Automatic lag.
        let cfg2 = RunConfig::from_toml("[fit]\nhac = \"bartlett\"\n").unwrap();
        let opts2 = cfg2
            .fit
            .as_ref()
            .unwrap()
            .to_fit_options(vec![ParamVector::study_dgp(0.0)], 800)
            .unwrap();
        assert_eq!(opts2.hac, Hac::Bartlett { lag: 6 });
        // Bad strings are config errors.
        let cfg3 = RunConfig::from_toml("[fit]\nhac = \"what\"\n").unwrap();
        assert!(cfg3.fit.as_ref().unwrap().to_fit_options(vec![ParamVector::study_dgp(0.0)], 10).is_err());
    }

    #[test]
    fn mc_section_builds_design() {
        let cfg = RunConfig::from_toml(
            "[mc]\nrho_grid = [0.8]\nt_grid = [200, 800]\nn_reps = 10\nmaster_seed = 5\n",
        )
        .unwrap();
        let design = cfg.require_mc().unwrap().to_mc_design(None).unwrap();
        assert_eq!(design.t_grid, vec![200, 800]);
        assert_eq!(design.estimators.len(), 2);
        assert_eq!(design.master_seed, 5);
        let overridden = cfg.require_mc().unwrap().to_mc_design(Some(99)).unwrap();
        assert_eq!(overridden.master_seed, 99);
    }
}
