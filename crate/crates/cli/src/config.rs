//! TOML run configuration. Every section is optional; unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};
use topoloc::eval::Tolerance;
use topoloc::map::{DEFAULT_NODE_SPACING, DEFAULT_WINDOW};
use topoloc::measurement::MeasurementConfig;
use topoloc::motion::MotionParams;
use topoloc::tasks::{FilterParams, LocalizerParams, WakeupParams};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapConfig {
    pub node_spacing: f64,
    pub window: usize,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            node_spacing: DEFAULT_NODE_SPACING,
            window: DEFAULT_WINDOW,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub max_steps: usize,
    pub n_trials: usize,
    /// Seed for wakeup start sampling.
    pub seed: u64,
    pub record_history: bool,
    /// Loop closure decisions on filtered rather than smoothed beliefs.
    pub forward_only: bool,
}

impl Default for TaskConfig {
    fn default() -> Self {
        let w = WakeupParams::default();
        Self {
            max_steps: w.max_steps,
            n_trials: w.n_trials,
            seed: 0,
            record_history: w.record_history,
            forward_only: false,
        }
    }
}

/// Overrides applied on top of a built-in scenario by `simulate`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub name: Option<String>,
    pub seed: Option<u64>,
    pub sigma_app: Option<f64>,
    /// Multiplies the query odometry noise.
    pub odom_noise_scale: Option<f64>,
    pub length_m: Option<f64>,
    pub dim: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub dist_m: f64,
    pub heading_deg: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let t = Tolerance::default();
        Self {
            dist_m: t.dist_m,
            heading_deg: t.heading_deg,
        }
    }
}

impl EvalConfig {
    pub fn tolerance(&self) -> Tolerance {
        Tolerance {
            dist_m: self.dist_m,
            heading_deg: self.heading_deg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub map: MapConfig,
    pub motion: MotionParams,
    pub measurement: MeasurementConfig,
    pub filter: FilterParams,
    pub task: TaskConfig,
    pub scenario: ScenarioConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn load(path: &Path) -> CliResult<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Config::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> CliResult<Config> {
        let cfg: Config = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults when `path` is absent.
    pub fn load_or_default(path: Option<&Path>) -> CliResult<Config> {
        path.map_or_else(|| Ok(Config::default()), Config::load)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |e: topoloc::Error| CliError::Config(e.to_string());
        if !(self.map.node_spacing.is_finite() && self.map.node_spacing > 0.0) {
            return Err(CliError::Config(format!("map.node_spacing must be > 0, got {}", self.map.node_spacing)));
        }
        if self.map.window < 2 {
            return Err(CliError::Config(format!("map.window must be >= 2, got {}", self.map.window)));
        }
        self.localizer().validate().map_err(bad)?;
        if self.task.max_steps == 0 || self.task.n_trials == 0 {
            return Err(CliError::Config("task.max_steps and task.n_trials must be >= 1".into()));
        }
        self.eval.tolerance().validate().map_err(bad)?;
        let s = &self.scenario;
        if s.sigma_app.is_some_and(|v| !(v.is_finite() && v >= 0.0))
            || s.odom_noise_scale.is_some_and(|v| !(v.is_finite() && v >= 0.0))
            || s.length_m.is_some_and(|v| !(v.is_finite() && v > 0.0))
            || s.dim.is_some_and(|d| d < 2)
        {
            return Err(CliError::Config(format!("bad scenario overrides {s:?}")));
        }
        Ok(())
    }

    pub fn localizer(&self) -> LocalizerParams {
        LocalizerParams {
            motion: self.motion,
            measurement: self.measurement,
            filter: self.filter,
        }
    }

    pub fn wakeup(&self) -> WakeupParams {
        WakeupParams {
            max_steps: self.task.max_steps,
            n_trials: self.task.n_trials,
            record_history: self.task.record_history,
        }
    }
}
