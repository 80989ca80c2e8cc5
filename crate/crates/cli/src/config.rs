use std::path::{Path, PathBuf};

use oetharvest::detect::DetectionParams;
use oetharvest::envgen::{GenerationParams, RenderParams};
use oetharvest::pathplan::PlanParams;
use oetharvest::scene::{Robot, WorkingArea};
use oetharvest::geom::Point;
use oetharvest::shapemodel::GenerativeModel;
use oetharvest::sim::{ScenarioConfig, SweepSpec};
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

/// Complete run configuration. Every section is optional and defaults to
/// the library defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    /// Generative model file; the shipped model when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub robot: RobotSection,
    #[serde(default)]
    pub generation: GenerationParams,
    #[serde(default)]
    pub render: RenderParams,
    #[serde(default)]
    pub detection: DetectionParams,
    #[serde(default)]
    pub calibration: CalibrationSection,
    #[serde(default)]
    pub plan: PlanSection,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub sweep: SweepSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            seed: 0,
            model: None,
            robot: RobotSection::default(),
            generation: GenerationParams::default(),
            render: RenderParams::default(),
            detection: DetectionParams::default(),
            calibration: CalibrationSection::default(),
            plan: PlanSection::default(),
            scenario: ScenarioConfig::default(),
            sweep: SweepSpec::default(),
        }
    }
}

/// Defaults for robots that the agents file does not describe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotSection {
    pub radius_um: f64,
    pub speed_um_s: f64,
    pub capacity: usize,
}

impl Default for RobotSection {
    fn default() -> Self {
        RobotSection { radius_um: Robot::DEFAULT_RADIUS_UM, speed_um_s: Robot::DEFAULT_SPEED_UM_S, capacity: Robot::DEFAULT_CAPACITY }
    }
}

impl RobotSection {
    pub fn robot(&self, id: usize, center: Point) -> Robot {
        Robot { radius_um: self.radius_um, speed_um_s: self.speed_um_s, capacity: self.capacity, ..Robot::new(id, center) }
    }
}

/// Projector dot pattern geometry, in projector pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    pub width_px: usize,
    pub height_px: usize,
    pub spacing_px: usize,
    pub dot_radius_px: f64,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        CalibrationSection { width_px: 1280, height_px: 800, spacing_px: 80, dot_radius_px: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSection {
    /// Working area `[x0, y0, width, height]` in μm; whole device when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 4]>,
    pub params: PlanParams,
}

impl PlanSection {
    pub fn window_for(&self, env: &oetharvest::scene::Environment) -> WorkingArea {
        match self.window {
            Some([x, y, w, h]) => WorkingArea { origin: Point::new(x, y), width_um: w, height_um: h },
            None => WorkingArea::whole(env),
        }
    }
}

#[derive(Debug)]
pub enum ConfigError {
    Read(String),
    Parse(String),
    Version(u32),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Read(m) => write!(f, "cannot read config: {m}"),
            ConfigError::Parse(m) => write!(f, "invalid config: {m}"),
            ConfigError::Version(v) => write!(f, "unsupported config version {v} (expected {CONFIG_VERSION})"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(s: &str) -> Result<RunConfig, ConfigError> {
        let c: RunConfig = toml::from_str(s).map_err(|e| ConfigError::Parse(e.message().to_string()))?;
        if c.version != CONFIG_VERSION {
            return Err(ConfigError::Version(c.version));
        }
        Ok(c)
    }

    pub fn load(path: Option<&Path>) -> Result<RunConfig, ConfigError> {
        match path {
            Some(p) => Self::from_toml(&std::fs::read_to_string(p).map_err(|e| ConfigError::Read(format!("{}: {e}", p.display())))?),
            None => Ok(RunConfig::default()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn model(&self) -> oetharvest::Result<GenerativeModel> {
        match &self.model {
            Some(p) => GenerativeModel::from_toml(&std::fs::read_to_string(p)?),
            None => Ok(GenerativeModel::default_model()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let c = RunConfig::from_toml("version = 1\nseed = 4\n[generation]\nconcentration = 2.0\n").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.generation.concentration, 2.0);
        assert_eq!(c.scenario, ScenarioConfig::default());
    }

    #[test]
    fn unknown_keys_and_versions_are_rejected() {
        assert!(matches!(RunConfig::from_toml("version = 1\nbogus = 3\n"), Err(ConfigError::Parse(_))));
        assert!(matches!(RunConfig::from_toml("version = 1\n[plan]\nwindw = [0, 0, 1, 1]\n"), Err(ConfigError::Parse(_))));
        assert!(matches!(RunConfig::from_toml("version = 1\n[scenario.plan]\nfoo = 1\n"), Err(ConfigError::Parse(_))));
        assert!(matches!(RunConfig::from_toml("version = 2\n"), Err(ConfigError::Version(2))));
        assert!(matches!(RunConfig::from_toml("seed = 1\n"), Err(ConfigError::Parse(_))));
    }
}
