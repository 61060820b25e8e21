//! TOML run configuration. Every section and field is optional; missing
//! values take the defaults of the corresponding model type.
//!
//! ```toml
//! [array]
//! units_x = 2
//! units_y = 3
//!
//! [agent]
//! move_speed = 0.3
//!
//! [experiment]
//! sets = 3
//! start_height = 400.0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acoustics::Medium;
use crate::agent::{AgentError, AgentParams, GuidanceLoop, PalmModel};
use crate::array::{build_array, ArrayError, ArrayLayout, LayoutError, TransducerArray, UnitGrid, Workspace};
use crate::cone::{ConeError, ConeParams, GuidanceCone};
use crate::experiment::{generate_goals, ProtocolConfig, SimulatedParticipant};
use crate::stm::StmParams;
use crate::tracking::SensorModel;
use crate::Vec3;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Array(#[from] ArrayError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Cone(#[from] ConeError),
}

/// Units tiled in a centred rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArrayConfig {
    pub units_x: usize,
    pub units_y: usize,
    pub grid: UnitGrid,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            units_x: 2,
            units_y: 3,
            grid: UnitGrid::default(),
        }
    }
}

impl ArrayConfig {
    pub fn layout(&self) -> ArrayLayout {
        ArrayLayout::tiled(self.grid, self.units_x, self.units_y)
    }
}

/// Replaces the generated position of one goal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalOverride {
    pub id: u8,
    pub position: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub sets: usize,
    /// Per-trial limit (s).
    pub timeout: f64,
    /// Start height above the array centre (mm).
    pub start_height: f64,
    pub half_extent: f64,
    /// Keep every n-th trajectory sample on export.
    pub trajectory_stride: usize,
    pub goal_overrides: Vec<GoalOverride>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sets: 3,
            timeout: 30.0,
            start_height: Workspace::DEFAULT_START_HEIGHT,
            half_extent: Workspace::DEFAULT_HALF_EXTENT,
            trajectory_stride: 10,
            goal_overrides: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub array: ArrayConfig,
    pub medium: Medium,
    pub stm: StmParams,
    pub cone: ConeParams,
    pub sensor: SensorModel,
    pub palm: PalmModel,
    pub agent: AgentParams,
    pub experiment: ExperimentConfig,
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

impl SimulationConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        self.array.layout().validate()?;
        if !positive(self.medium.sound_speed) || !positive(self.medium.frequency) {
            return invalid("medium sound_speed and frequency must be positive");
        }
        if self.stm.n_points < 3 || !positive(self.stm.render_freq) {
            return invalid("stm needs n_points >= 3 and a positive render_freq");
        }
        if !positive(self.cone.base_radius) || !(self.cone.min_radius >= 0.0 && self.cone.min_radius < self.cone.base_radius) {
            return invalid("cone needs base_radius > 0 and 0 <= min_radius < base_radius");
        }
        let s = &self.sensor;
        if !(s.frame_rate > 0.0 && s.latency >= 0.0 && s.latency.is_finite() && s.noise_std >= 0.0 && s.noise_std.is_finite()) {
            return invalid("sensor needs frame_rate > 0, latency >= 0 and noise_std >= 0");
        }
        if !positive(self.palm.radius) || !(self.palm.depth_tolerance >= 0.0) {
            return invalid("palm needs radius > 0 and depth_tolerance >= 0");
        }
        self.agent.validate()?;
        let e = &self.experiment;
        if e.sets == 0 || !positive(e.timeout) || !positive(e.start_height) || !positive(e.half_extent) || e.trajectory_stride == 0 {
            return invalid("experiment needs sets, timeout, start_height, half_extent and trajectory_stride > 0");
        }
        if e.half_extent >= e.start_height {
            return invalid("experiment half_extent must be below start_height so every goal is above the array");
        }
        for o in &e.goal_overrides {
            if !(1..=14).contains(&o.id) || o.position.iter().any(|v| !v.is_finite()) || o.position[2] <= 0.0 {
                return invalid(&format!("goal override {} must name goal 1..=14 with a finite position above the array", o.id));
            }
        }
        Ok(())
    }

    pub fn build_array(&self) -> Result<TransducerArray, ConfigError> {
        Ok(build_array(&self.array.layout())?)
    }

    pub fn workspace(&self) -> Result<Workspace, ConfigError> {
        let array = self.build_array()?;
        Ok(Workspace::above(&array, self.experiment.start_height, self.experiment.half_extent)?)
    }

    pub fn protocol(&self) -> Result<ProtocolConfig, ConfigError> {
        let workspace = self.workspace()?;
        let mut goals = generate_goals(&workspace);
        for o in &self.experiment.goal_overrides {
            if let Some(g) = goals.iter_mut().find(|g| g.id == o.id) {
                g.position = Vec3::from(o.position);
            }
        }
        let protocol = ProtocolConfig {
            workspace,
            goals,
            cone: self.cone,
            sets: self.experiment.sets,
            timeout: self.experiment.timeout,
        };
        for g in &protocol.goals {
            protocol.cone_for(g).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(protocol)
    }

    pub fn participant(&self) -> SimulatedParticipant {
        SimulatedParticipant {
            stm: self.stm,
            sensor: self.sensor,
            palm: self.palm,
            params: AgentParams {
                decision_timeout: self.agent.decision_timeout.min(self.experiment.timeout),
                ..self.agent
            },
        }
    }

    pub fn guidance_loop(&self, cone: GuidanceCone) -> GuidanceLoop {
        GuidanceLoop {
            cone,
            stm: self.stm,
            sensor: self.sensor,
            palm: self.palm,
        }
    }
}
