//! Flat TOML run configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixedpoint::FixpointConfig;
use crate::glue::{Escalation, GlueOptions};
use crate::linearized::{CutoffMode, ModelParams, NoiseScheme};
use crate::noise::NoiseConfig;
use crate::spectral::{Basis, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Simulate,
    Fixpoint,
    Glue,
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    EulerMaruyama,
    Milstein,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CutoffName {
    Standard,
    Amplifier,
}

/// Every key of the config file. Missing keys take the defaults below;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub nx: usize,
    pub ny: usize,
    pub side: f64,
    /// Retained modes `K`.
    pub modes: usize,

    pub q: f64,
    pub r_n: f64,
    pub r_c: f64,
    pub r_u: f64,
    pub chi: f64,
    pub zeta: f64,
    pub beta: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta_n: f64,
    pub delta_c: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub sigma_scale: f64,
    pub noise_scheme: SchemeName,
    pub cutoff_mode: CutoffName,
    pub allow_unstable: bool,
    pub master_seed: u64,

    pub m_star: u32,
    pub s_star: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub haar_level: u32,

    pub t_end: f64,
    pub dt: f64,
    pub paths: usize,
    pub kappa: f64,
    pub kappas: Vec<f64>,
    pub escalation: Escalation,
    pub max_segments: usize,
    pub lyapunov_p: f64,
    pub mode: Option<Mode>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            nx: 64,
            ny: 64,
            side: 2.0 * std::f64::consts::PI,
            modes: 200,
            q: 5.0,
            r_n: 1.0,
            r_c: 1.0,
            r_u: 1.0,
            chi: 1.0,
            zeta: 5.0,
            beta: 1.0,
            delta1: 0.1,
            delta2: 0.1,
            delta_n: 1.0,
            delta_c: 1.0,
            gamma1: 2.5,
            gamma2: 2.5,
            gamma3: 1.5,
            sigma_scale: 1.0,
            noise_scheme: SchemeName::Milstein,
            cutoff_mode: CutoffName::Standard,
            allow_unstable: false,
            master_seed: 20240601,
            m_star: 12,
            s_star: 1.0 / 3.0,
            tol: 1e-6,
            max_iter: 30,
            haar_level: 0,
            t_end: 0.5,
            dt: 1e-3,
            paths: 32,
            kappa: 4.0,
            kappas: vec![1.0, 2.0, 4.0, 8.0],
            escalation: Escalation::Increment,
            max_segments: 64,
            lyapunov_p: 1.0,
            mode: None,
            out: PathBuf::from("out"),
        }
    }
}

/// A validated configuration with the objects built from it.
#[derive(Debug, Clone)]
pub struct Setup {
    pub config: RunConfig,
    pub basis: Arc<Basis>,
    pub params: ModelParams,
    pub noise: NoiseConfig,
    pub fixpoint: FixpointConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        // keep s** tied to q when only q is given
        if !text_has_key(text, "s_star") {
            config.s_star = 2.0 / (config.q + 1.0);
        }
        if !text_has_key(text, "m_star") {
            config.m_star = (2.0 * config.q + 2.0).ceil() as u32;
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn steps(&self) -> Result<usize> {
        let steps = (self.t_end / self.dt).round();
        if !(steps >= 1.0) || (steps * self.dt - self.t_end).abs() > 1e-9 * self.t_end {
            return Err(Error::Config(format!(
                "t_end = {} is not a positive multiple of dt = {}",
                self.t_end, self.dt
            )));
        }
        Ok(steps as usize)
    }

    /// Check every constraint and build the basis, parameters and noise.
    pub fn setup(&self) -> Result<Setup> {
        if !(self.q > 4.0) {
            return Err(Error::Config(format!(
                "q = {} violates the porous-medium assumption q > 4",
                self.q
            )));
        }
        let d = 2.0;
        if self.gamma1 <= 1.0 + d / 2.0 {
            log::warn!(
                "gamma1 = {} is at or below 1 + d/2 = 2: the noise series for n diverges as K grows",
                self.gamma1
            );
        }
        if self.gamma2 <= 1.5 * d - 1.0 {
            log::warn!(
                "gamma2 = {} is at or below 3d/2 - 1 = 2: the noise series for c diverges as K grows",
                self.gamma2
            );
        }
        if self.gamma3 <= 1.0 {
            log::warn!("gamma3 = {} is at or below 1", self.gamma3);
        }
        if self.paths == 0 {
            return Err(Error::Config("paths must be at least 1".into()));
        }
        if self.kappas.is_empty() || self.kappas.iter().any(|k| !(*k > 0.0)) || !(self.kappa > 0.0) {
            return Err(Error::Config("kappa values must be positive".into()));
        }
        if self.max_segments == 0 {
            return Err(Error::Config("max_segments must be at least 1".into()));
        }
        if !(self.lyapunov_p >= 1.0) {
            return Err(Error::Config(format!("lyapunov_p = {} must be >= 1", self.lyapunov_p)));
        }
        let steps = self.steps()?;
        let grid = Grid::new(self.nx, self.ny, self.side).map_err(as_config)?;
        if self.modes == 0 || self.modes > grid.len() {
            return Err(Error::Config(format!(
                "modes = {} must lie in 1..={}",
                self.modes,
                grid.len()
            )));
        }
        let basis = Basis::new(grid, self.modes).map_err(as_config)?;
        basis.require_products().map_err(as_config)?;

        let mut params = ModelParams::new(&basis);
        params.r_n = self.r_n;
        params.r_c = self.r_c;
        params.r_u = self.r_u;
        params.chi = self.chi;
        params.zeta = self.zeta;
        params.beta = self.beta;
        params.q = self.q;
        params.delta1 = self.delta1;
        params.delta2 = self.delta2;
        params.delta_n = self.delta_n;
        params.delta_c = self.delta_c;
        params.gamma1 = self.gamma1;
        params.gamma2 = self.gamma2;
        params.gamma3 = self.gamma3;
        params.sigma_scale = self.sigma_scale;
        params.dt = self.dt;
        params.steps = steps;
        params.allow_unstable = self.allow_unstable;
        params.noise_scheme = match self.noise_scheme {
            SchemeName::EulerMaruyama => NoiseScheme::EulerMaruyama,
            SchemeName::Milstein => NoiseScheme::Milstein,
        };
        params.cutoff_mode = match self.cutoff_mode {
            CutoffName::Standard => CutoffMode::Standard,
            CutoffName::Amplifier => CutoffMode::Amplifier,
        };
        params.derive(&basis);
        params.validate()?;

        let noise = NoiseConfig {
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            gamma3: self.gamma3,
            k: self.modes,
            master_seed: self.master_seed,
        };
        let fixpoint = FixpointConfig {
            kappa: self.kappa,
            m_star: self.m_star,
            s_star: self.s_star,
            tol: self.tol,
            max_iter: self.max_iter,
            level: self.haar_level,
        };
        fixpoint.validate(self.q)?;
        if self.haar_level > 0 && steps % (1usize << self.haar_level.min(63)) != 0 {
            return Err(Error::Config(format!(
                "{steps} steps cannot be split into 2^{} Haar cells",
                self.haar_level
            )));
        }
        Ok(Setup { config: self.clone(), basis, params, noise, fixpoint })
    }

    pub fn glue_options(&self) -> Result<GlueOptions> {
        Ok(GlueOptions {
            total_steps: self.steps()?,
            escalation: self.escalation,
            max_segments: self.max_segments,
        })
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

fn text_has_key(text: &str, key: &str) -> bool {
    text.parse::<toml::Table>().map(|t| t.contains_key(key)).unwrap_or(false)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    RunConfig::from_toml(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        let s = c.setup().unwrap();
        assert_eq!(s.params.steps, 500);
        assert_eq!(s.fixpoint.m_star, 12);
        assert!((s.params.alpha - 1.875).abs() < 1e-15);
    }

    #[test]
    fn small_q_is_rejected() {
        let c = RunConfig::from_toml("q = 3.0").unwrap();
        let e = c.setup().unwrap_err();
        assert!(matches!(e, Error::Config(ref m) if m.contains("q > 4")), "{e}");
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(matches!(RunConfig::from_toml("gamma4 = 1.0"), Err(Error::Config(_))));
    }

    #[test]
    fn low_gamma_is_allowed() {
        let c = RunConfig::from_toml("gamma1 = 1.0\nnx = 16\nny = 16\nmodes = 40").unwrap();
        assert!(c.setup().is_ok());
    }

    #[test]
    fn exponents_follow_q() {
        let c = RunConfig::from_toml("q = 7.0").unwrap();
        assert_eq!(c.m_star, 16);
        assert_eq!(c.s_star, 0.25);
        c.setup().unwrap();
        let bad = RunConfig::from_toml("q = 7.0\nm_star = 12").unwrap();
        assert!(bad.setup().is_err());
    }

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::default();
        c.kappas = vec![0.5, 3.0];
        c.mode = Some(Mode::Glue);
        c.side = 3.7;
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn horizon_must_be_a_multiple_of_dt() {
        let c = RunConfig::from_toml("t_end = 0.0105").unwrap();
        assert!(c.setup().is_err());
    }
}
