//! Scenario configuration.
//!
//! Scenarios are TOML documents. Every key is optional and falls back to the
//! rated-system defaults; unknown keys are rejected. Top-level dotted keys
//! (`fault.kind = "three_phase_sag"`) and tables (`[fault]`) are equivalent.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{ControllerParams, DroopParams, PiGains, SaturationStrategy};
use crate::plant::{FaultDescriptor, FaultKind, PlantParams};
use crate::vflux::{FluxRoute, DEFAULT_OMEGA_F};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}line {line}, column {column}: {message}", path = display_path(.path))]
    Parse {
        path: Option<PathBuf>,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("cannot read {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn display_path(path: &Option<PathBuf>) -> String {
    path.as_ref().map(|p| format!("{}: ", p.display())).unwrap_or_default()
}

/// Output settings.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Record one sample every `decimation` control periods. Defaults to a
    /// 1 ms spacing.
    pub decimation: Option<u64>,
    /// Output directory; overridden by the `FLUXSAT_OUT_DIR` environment
    /// variable.
    pub dir: Option<PathBuf>,
    /// Base name of the emitted files.
    pub name: Option<String>,
}

/// Where a run starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// Settled at the droop equilibrium delivering `P_ref`.
    #[default]
    OperatingPoint,
    /// PCC at the grid voltage with no power flowing to the grid.
    NoLoad,
}

/// Full parameter set of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub plant: PlantParams,
    pub droop: DroopParams,
    pub gains: PiGains,
    pub saturation_strategy: SaturationStrategy,
    /// Current limit, peak per phase [A].
    pub i_max_sat: f64,
    /// d-axis limit of the per-component strategy [A].
    pub i_d_max: f64,
    pub fault: FaultDescriptor,
    /// End of the simulation [s].
    pub t_end: f64,
    /// Plant integration step [s].
    pub dt_plant: f64,
    /// Controller period [s]; an integer multiple of `dt_plant`.
    pub dt_ctrl: f64,
    /// Flux filter cut-off [rad/s].
    pub omega_f: f64,
    /// Source of the converter-side flux behind the saturated current angle.
    pub flux_route: FluxRoute,
    pub initial_state: InitialState,
    /// Rate [Hz] at which the angle traces are sampled for the smoothness
    /// statistic.
    pub sample_rate: f64,
    pub output: OutputConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            plant: PlantParams::default(),
            droop: DroopParams::default(),
            gains: PiGains::default(),
            saturation_strategy: SaturationStrategy::Vflux,
            i_max_sat: 110.0,
            i_d_max: 100.0,
            fault: FaultDescriptor::default(),
            t_end: 3.0,
            dt_plant: 1e-6,
            dt_ctrl: 1e-6,
            omega_f: DEFAULT_OMEGA_F,
            flux_route: FluxRoute::default(),
            initial_state: InitialState::default(),
            sample_rate: 10e3,
            output: OutputConfig::default(),
        }
    }
}

/// Relative tolerance on the `dt_ctrl / dt_plant` integer ratio.
const RATIO_TOL: f64 = 1e-9;

impl ScenarioConfig {
    /// Parses a TOML document; absent keys take their defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e
                .span()
                .map(|span| line_column(text, span.start))
                .unwrap_or((1, 1));
            ConfigError::Parse {
                path: None,
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|e| match e {
            ConfigError::Parse { line, column, message, .. } => ConfigError::Parse {
                path: Some(path.to_path_buf()),
                line,
                column,
                message,
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Validation(msg));
        self.plant.validate().map_err(|e| ConfigError::Validation(e.to_string()))?;
        self.fault.validate().map_err(|e| ConfigError::Validation(e.to_string()))?;

        if !(self.dt_plant > 0.0) {
            return invalid(format!("dt_plant must be > 0, got {}", self.dt_plant));
        }
        if !(self.dt_ctrl > 0.0) {
            return invalid(format!("dt_ctrl must be > 0, got {}", self.dt_ctrl));
        }
        let ratio = self.dt_ctrl / self.dt_plant;
        if ratio < 1.0 - RATIO_TOL || (ratio - ratio.round()).abs() > RATIO_TOL * ratio {
            return invalid(format!(
                "dt_ctrl ({}) must be an integer multiple of dt_plant ({})",
                self.dt_ctrl, self.dt_plant
            ));
        }
        if !(self.t_end > 0.0) {
            return invalid(format!("t_end must be > 0, got {}", self.t_end));
        }
        if self.fault.kind != FaultKind::None && !(self.t_end > self.fault.end()) {
            return invalid(format!(
                "t_end ({}) must be later than the fault clearance ({})",
                self.t_end,
                self.fault.end()
            ));
        }
        if !(self.i_max_sat > 0.0) {
            return invalid(format!("i_max_sat must be > 0, got {}", self.i_max_sat));
        }
        if !(0.0..=self.i_max_sat).contains(&self.i_d_max) {
            return invalid(format!(
                "i_d_max must lie in [0, i_max_sat = {}], got {}",
                self.i_max_sat, self.i_d_max
            ));
        }
        if !(self.omega_f > 0.0) {
            return invalid(format!("omega_f must be > 0, got {}", self.omega_f));
        }
        if !(self.droop.omega_pp > 0.0) {
            return invalid(format!("droop.omega_pp must be > 0, got {}", self.droop.omega_pp));
        }
        if !(self.droop.k_p >= 0.0 && self.droop.k_q >= 0.0) {
            return invalid("droop gains k_p and k_q must be >= 0".into());
        }
        if !(self.sample_rate > 0.0) {
            return invalid(format!("sample_rate must be > 0, got {}", self.sample_rate));
        }
        if self.output.decimation == Some(0) {
            return invalid("output.decimation must be >= 1".into());
        }
        Ok(())
    }

    /// Plant sub-steps per control period.
    pub fn plant_steps_per_control(&self) -> usize {
        (self.dt_ctrl / self.dt_plant).round() as usize
    }

    /// Control periods between recorded samples.
    pub fn decimation(&self) -> u64 {
        self.output
            .decimation
            .unwrap_or_else(|| ((1e-3 / self.dt_ctrl).round() as u64).max(1))
    }

    /// Control periods between samples of the angle statistics.
    pub fn angle_stride(&self) -> u64 {
        ((1.0 / (self.sample_rate * self.dt_ctrl)).round() as u64).max(1)
    }

    pub fn controller_params(&self) -> ControllerParams {
        ControllerParams {
            droop: self.droop,
            gains: self.gains,
            strategy: self.saturation_strategy,
            i_max_sat: self.i_max_sat,
            i_d_max: self.i_d_max,
            omega_f: self.omega_f,
            flux_route: self.flux_route,
            l_f: self.plant.l_f,
            c_f: self.plant.c_f,
            v_dc: self.plant.v_dc,
        }
    }

    pub fn with_strategy(&self, strategy: SaturationStrategy) -> Self {
        Self {
            saturation_strategy: strategy,
            ..self.clone()
        }
    }

    /// Sets a numeric parameter by its dotted key, e.g. `fault.duration`.
    pub fn set_param(&mut self, key: &str, value: f64) -> Result<(), ConfigError> {
        let mut doc = toml::Value::try_from(&*self).expect("scenario config serializes");
        let unknown = || ConfigError::Validation(format!("unknown parameter `{key}`"));
        let (parents, leaf) = match key.rsplit_once('.') {
            Some((parents, leaf)) => (parents.split('.').collect::<Vec<_>>(), leaf),
            None => (Vec::new(), key),
        };
        let mut table = doc.as_table_mut().expect("config is a table");
        for part in parents {
            table = table
                .get_mut(part)
                .and_then(toml::Value::as_table_mut)
                .ok_or_else(unknown)?;
        }
        let slot = table.get_mut(leaf).ok_or_else(unknown)?;
        *slot = match slot {
            toml::Value::Integer(_) if value.fract() == 0.0 => toml::Value::Integer(value as i64),
            toml::Value::Float(_) | toml::Value::Integer(_) => toml::Value::Float(value),
            _ => return Err(ConfigError::Validation(format!("parameter `{key}` is not numeric"))),
        };
        let updated: ScenarioConfig = doc
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Validation(e.message().to_string()))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map(|i| before.len() - i).unwrap_or(before.len() + 1);
    (line, column)
}
