//! Flat `key = value` configuration shared by the reconstruction
//! subcommands. Every key has a documented default and a same-named long
//! command-line flag that overrides the file.

use std::fmt::Write as _;
use std::path::Path;

use clap::Args;
use flowinpaint::energy::{
    CouplingTerm, EnergyConfig, Penalty, RecoveryMode, SmoothnessTerm, Transport,
};
use flowinpaint::flow::FlowSolverParams;
use flowinpaint::grid::{Interpolation, SamplePolicy};
use flowinpaint::multires::{MaskCoarsening, PipelineParams, PyramidSpec};

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub mode: String,
    pub coupling: u8,
    pub smoothness: u8,
    pub transport: String,
    pub interpolation: String,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub dtau: f64,
    pub iterations: usize,
    pub coarsest_iterations: usize,
    pub flow_epsilon: f64,
    pub flow_dtau: f64,
    pub flow_iterations: usize,
    pub levels: usize,
    pub scale_factor: f64,
    pub mask_coarsening: String,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            mode: "pure-inpaint".into(),
            coupling: 1,
            smoothness: 2,
            transport: "auto".into(),
            interpolation: "bilinear".into(),
            lambda1: 20.0,
            lambda2: 0.1,
            lambda3: 1.0,
            lambda4: 0.2,
            gamma: 0.1,
            epsilon: 1e-3,
            dtau: 1e-3,
            iterations: 500,
            coarsest_iterations: 800,
            flow_epsilon: 1e-2,
            flow_dtau: 1e-2,
            flow_iterations: 1200,
            levels: 4,
            scale_factor: 0.5,
            mask_coarsening: "nearest".into(),
        }
    }
}

/// Same-named long flags for every config key.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigOverrides {
    /// Configuration file (flat `key = value` lines).
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub coupling: Option<u8>,
    #[arg(long)]
    pub smoothness: Option<u8>,
    #[arg(long)]
    pub transport: Option<String>,
    #[arg(long)]
    pub interpolation: Option<String>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub lambda3: Option<f64>,
    #[arg(long)]
    pub lambda4: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub dtau: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long = "coarsest_iterations")]
    pub coarsest_iterations: Option<usize>,
    #[arg(long = "flow_epsilon")]
    pub flow_epsilon: Option<f64>,
    #[arg(long = "flow_dtau")]
    pub flow_dtau: Option<f64>,
    #[arg(long = "flow_iterations")]
    pub flow_iterations: Option<usize>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long = "scale_factor")]
    pub scale_factor: Option<f64>,
    #[arg(long = "mask_coarsening")]
    pub mask_coarsening: Option<String>,
    /// Echo the resolved configuration before running.
    #[arg(long)]
    pub print_config: bool,
}

impl Config {
    fn set(&mut self, key: &str, value: &str, origin: &str) -> Result<(), CliError> {
        fn num<T: std::str::FromStr>(key: &str, value: &str, origin: &str) -> Result<T, CliError> {
            value.parse().map_err(|_| {
                CliError::usage(format!("{origin}: bad value '{value}' for key '{key}'"))
            })
        }
        match key {
            "mode" => self.mode = value.into(),
            "coupling" => self.coupling = num(key, value, origin)?,
            "smoothness" => self.smoothness = num(key, value, origin)?,
            "transport" => self.transport = value.into(),
            "interpolation" => self.interpolation = value.into(),
            "lambda1" => self.lambda1 = num(key, value, origin)?,
            "lambda2" => self.lambda2 = num(key, value, origin)?,
            "lambda3" => self.lambda3 = num(key, value, origin)?,
            "lambda4" => self.lambda4 = num(key, value, origin)?,
            "gamma" => self.gamma = num(key, value, origin)?,
            "epsilon" => self.epsilon = num(key, value, origin)?,
            "dtau" => self.dtau = num(key, value, origin)?,
            "iterations" => self.iterations = num(key, value, origin)?,
            "coarsest_iterations" => self.coarsest_iterations = num(key, value, origin)?,
            "flow_epsilon" => self.flow_epsilon = num(key, value, origin)?,
            "flow_dtau" => self.flow_dtau = num(key, value, origin)?,
            "flow_iterations" => self.flow_iterations = num(key, value, origin)?,
            "levels" => self.levels = num(key, value, origin)?,
            "scale_factor" => self.scale_factor = num(key, value, origin)?,
            "mask_coarsening" => self.mask_coarsening = value.into(),
            other => {
                return Err(CliError::usage(format!(
                    "{origin}: unknown configuration key '{other}'"
                )))
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let mut cfg = Config::default();
        let origin = path.display().to_string();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::usage(format!(
                    "{origin}:{}: expected 'key = value'",
                    lineno + 1
                )));
            };
            cfg.set(key.trim(), value.trim(), &origin)?;
        }
        Ok(cfg)
    }

    pub fn resolve(overrides: &ConfigOverrides) -> Result<Config, CliError> {
        let mut cfg = match &overrides.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = &overrides.$field {
                    cfg.$field = v.clone();
                }
            };
        }
        take!(mode);
        take!(transport);
        take!(interpolation);
        take!(mask_coarsening);
        macro_rules! take_copy {
            ($field:ident) => {
                if let Some(v) = overrides.$field {
                    cfg.$field = v;
                }
            };
        }
        take_copy!(coupling);
        take_copy!(smoothness);
        take_copy!(lambda1);
        take_copy!(lambda2);
        take_copy!(lambda3);
        take_copy!(lambda4);
        take_copy!(gamma);
        take_copy!(epsilon);
        take_copy!(dtau);
        take_copy!(iterations);
        take_copy!(coarsest_iterations);
        take_copy!(flow_epsilon);
        take_copy!(flow_dtau);
        take_copy!(flow_iterations);
        take_copy!(levels);
        take_copy!(scale_factor);
        if overrides.print_config {
            print!("{}", cfg.render());
        }
        Ok(cfg)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode = {}", self.mode);
        let _ = writeln!(s, "coupling = {}", self.coupling);
        let _ = writeln!(s, "smoothness = {}", self.smoothness);
        let _ = writeln!(s, "transport = {}", self.transport);
        let _ = writeln!(s, "interpolation = {}", self.interpolation);
        let _ = writeln!(s, "lambda1 = {}", self.lambda1);
        let _ = writeln!(s, "lambda2 = {}", self.lambda2);
        let _ = writeln!(s, "lambda3 = {}", self.lambda3);
        let _ = writeln!(s, "lambda4 = {}", self.lambda4);
        let _ = writeln!(s, "gamma = {}", self.gamma);
        let _ = writeln!(s, "epsilon = {}", self.epsilon);
        let _ = writeln!(s, "dtau = {}", self.dtau);
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "coarsest_iterations = {}", self.coarsest_iterations);
        let _ = writeln!(s, "flow_epsilon = {}", self.flow_epsilon);
        let _ = writeln!(s, "flow_dtau = {}", self.flow_dtau);
        let _ = writeln!(s, "flow_iterations = {}", self.flow_iterations);
        let _ = writeln!(s, "levels = {}", self.levels);
        let _ = writeln!(s, "scale_factor = {}", self.scale_factor);
        let _ = writeln!(s, "mask_coarsening = {}", self.mask_coarsening);
        s
    }

    fn coupling_term(&self) -> Result<CouplingTerm, CliError> {
        match self.coupling {
            1 => Ok(CouplingTerm::Brightness),
            2 => Ok(CouplingTerm::BrightnessGradient),
            3 => Ok(CouplingTerm::SplitGradient),
            other => Err(CliError::usage(format!(
                "coupling must be 1, 2 or 3 (got {other})"
            ))),
        }
    }

    fn smoothness_term(&self) -> Result<SmoothnessTerm, CliError> {
        match self.smoothness {
            1 => Ok(SmoothnessTerm::PerComponent),
            2 => Ok(SmoothnessTerm::Shared),
            3 => Ok(SmoothnessTerm::SpatioTemporal),
            other => Err(CliError::usage(format!(
                "smoothness must be 1, 2 or 3 (got {other})"
            ))),
        }
    }

    fn policy(&self) -> Result<SamplePolicy, CliError> {
        match self.interpolation.as_str() {
            "bilinear" => Ok(SamplePolicy {
                interpolation: Interpolation::Bilinear,
            }),
            "bicubic" => Ok(SamplePolicy {
                interpolation: Interpolation::Bicubic,
            }),
            other => Err(CliError::usage(format!(
                "interpolation must be bilinear or bicubic (got '{other}')"
            ))),
        }
    }

    pub fn energy_config(&self) -> Result<EnergyConfig, CliError> {
        let coupling = self.coupling_term()?;
        let mode = match self.mode.as_str() {
            "pure-inpaint" => RecoveryMode::PureInpaint,
            "inpaint-denoise" => RecoveryMode::InpaintDenoise,
            other => {
                return Err(CliError::usage(format!(
                    "mode must be pure-inpaint or inpaint-denoise (got '{other}')"
                )))
            }
        };
        let transport = match self.transport.as_str() {
            "auto" => Transport::default_for(coupling),
            "off" => Transport::Off,
            "naive" => Transport::Naive,
            "best-match" => Transport::BestMatch,
            other => {
                return Err(CliError::usage(format!(
                    "transport must be auto, off, naive or best-match (got '{other}')"
                )))
            }
        };
        if self.epsilon <= 0.0 {
            return Err(CliError::usage("epsilon must be > 0"));
        }
        let cfg = EnergyConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            lambda4: self.lambda4,
            gamma: self.gamma,
            coupling,
            smoothness: self.smoothness_term()?,
            mode,
            transport,
            penalty: Penalty::new(self.epsilon),
            policy: self.policy()?,
            dtau: self.dtau,
            iterations: self.iterations,
        };
        cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn flow_params(&self) -> Result<FlowSolverParams, CliError> {
        if self.flow_epsilon <= 0.0 {
            return Err(CliError::usage("flow_epsilon must be > 0"));
        }
        let mut coupling = self.coupling_term()?;
        if coupling == CouplingTerm::SplitGradient {
            coupling = CouplingTerm::BrightnessGradient;
        }
        let params = FlowSolverParams {
            lambda3: self.lambda3,
            lambda4: self.lambda4,
            gamma: self.gamma,
            coupling,
            smoothness: self.smoothness_term()?,
            dtau: self.flow_dtau,
            iterations: self.flow_iterations,
            penalty: Penalty::new(self.flow_epsilon),
            policy: self.policy()?,
        };
        params
            .validate()
            .map_err(|e| CliError::usage(e.to_string()))?;
        Ok(params)
    }

    pub fn pyramid_spec(&self) -> Result<PyramidSpec, CliError> {
        let spec = PyramidSpec {
            levels: self.levels,
            scale_factor: self.scale_factor,
        };
        spec.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(spec)
    }

    pub fn mask_coarsening(&self) -> Result<MaskCoarsening, CliError> {
        match self.mask_coarsening.as_str() {
            "nearest" => Ok(MaskCoarsening::Nearest),
            "threshold" => Ok(MaskCoarsening::Threshold),
            other => Err(CliError::usage(format!(
                "mask_coarsening must be nearest or threshold (got '{other}')"
            ))),
        }
    }

    pub fn pipeline_params(&self) -> Result<PipelineParams, CliError> {
        Ok(PipelineParams {
            energy: self.energy_config()?,
            flow: self.flow_params()?,
            pyramid: self.pyramid_spec()?,
            mask_coarsening: self.mask_coarsening()?,
            coarsest_iterations: self.coarsest_iterations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_defaults_and_flags_override_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# comment\nlambda2 = 0.25\nlevels = 3\nmode = inpaint-denoise\n")
            .unwrap();
        let overrides = ConfigOverrides {
            config: Some(path),
            lambda2: Some(0.5),
            ..ConfigOverrides::default()
        };
        let cfg = Config::resolve(&overrides).unwrap();
        assert_eq!(cfg.lambda2, 0.5);
        assert_eq!(cfg.levels, 3);
        assert_eq!(cfg.mode, "inpaint-denoise");
        assert_eq!(cfg.lambda3, 1.0); // untouched default
    }

    #[test]
    fn unknown_keys_and_bad_values_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "granularity = 9\n").unwrap();
        let err = Config::load(&path).unwrap_err();
        assert!(err.to_string().contains("granularity"));
        std::fs::write(&path, "lambda2 = many\n").unwrap();
        let err = Config::load(&path).unwrap_err();
        assert!(err.to_string().contains("lambda2"));
    }

    #[test]
    fn render_echoes_every_key() {
        let text = Config::default().render();
        for key in [
            "mode",
            "coupling",
            "smoothness",
            "transport",
            "interpolation",
            "lambda1",
            "lambda2",
            "lambda3",
            "lambda4",
            "gamma",
            "epsilon",
            "dtau",
            "iterations",
            "coarsest_iterations",
            "flow_epsilon",
            "flow_dtau",
            "flow_iterations",
            "levels",
            "scale_factor",
            "mask_coarsening",
        ] {
            assert!(text.contains(&format!("{key} = ")), "missing {key}");
        }
        // the rendered text parses back to the same configuration
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("echo.cfg");
        std::fs::write(&path, &text).unwrap();
        assert_eq!(Config::load(&path).unwrap(), Config::default());
    }

    #[test]
    fn auto_transport_follows_the_coupling_term() {
        let mut cfg = Config::default();
        cfg.coupling = 1;
        assert_eq!(cfg.energy_config().unwrap().transport, Transport::BestMatch);
        cfg.coupling = 2;
        assert_eq!(cfg.energy_config().unwrap().transport, Transport::Off);
    }
}
