//! Parameters file: simulation settings and training details in one YAML
//! document with sections `world`, `robot`, `sensors`, `episode`, `reward`,
//! `training` and `test`.
//!
//! `world` is a path to a world file, resolved relative to the parameters
//! file. Every other section may be omitted; the defaults are:
//!
//! - `robot`: differential drive, `v_x` in [0, 0.5] m/s, `ω` in [-1.5, 1.5]
//!   rad/s, circular footprint of radius 0.25 m with 1 cm tolerance.
//! - `sensors`: one 360° lidar with 36 rays and 3.5 m range, no noise.
//! - `episode`: 500 steps, dt 0.1 s, goal threshold 0.3 m, a single curriculum
//!   stage spawning and placing goals in the region named `central`.
//! - `reward`: +1000 at the goal, −150 on collision, progress coefficient 1.
//! - `training`: see [`TrainingConfig`].
//! - `test`: no benchmark couples; `test` runs require this section.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bench::BenchmarkSpec;
use crate::drl::TrainingConfig;
use crate::env::{EpisodeConfig, NavEnv, RewardSpec, SensorsConfig};
use crate::error::{Error, Result};
use crate::robot::PlatformSpec;
use crate::sensors::LidarSpec;
use crate::world::{yaml_error, Footprint, World};

fn default_robot() -> PlatformSpec {
    PlatformSpec::differential(0.5, 1.5, Footprint::circle(0.25, 0.01))
}

fn default_sensors() -> SensorsConfig {
    SensorsConfig {
        lidar: Some(LidarSpec::default()),
        depth: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Parameters {
    pub world: PathBuf,
    #[serde(default = "default_robot")]
    pub robot: PlatformSpec,
    #[serde(default = "default_sensors")]
    pub sensors: SensorsConfig,
    #[serde(default)]
    pub episode: EpisodeConfig,
    #[serde(default)]
    pub reward: RewardSpec,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub test: Option<BenchmarkSpec>,
}

impl Parameters {
    /// Reads and validates a parameters file; the world path becomes absolute
    /// or relative to the current directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_yaml(&text, base).map_err(|e| match e {
            Error::Parse { context, message } => Error::Parse {
                context: format!("{}{}", path.display(), context),
                message,
            },
            other => other,
        })
    }

    /// Parses a parameters document whose relative world path is taken from `base`.
    pub fn from_yaml(text: &str, base: &Path) -> Result<Self> {
        let mut p: Parameters = serde_yaml::from_str(text).map_err(yaml_error)?;
        if p.world.is_relative() {
            p.world = base.join(&p.world);
        }
        p.training.validate("training")?;
        Ok(p)
    }

    pub fn load_world(&self) -> Result<World> {
        World::load(&self.world)
    }

    /// Environment described by the simulation sections.
    pub fn build_env(&self) -> Result<NavEnv> {
        let world = Arc::new(self.load_world()?);
        NavEnv::new(
            world,
            self.robot.clone(),
            self.sensors.clone(),
            self.episode.clone(),
            self.reward.clone(),
        )
    }

    /// The `test` section checked against the environment.
    pub fn benchmark(&self, env: &NavEnv) -> Result<&BenchmarkSpec> {
        let spec = self
            .test
            .as_ref()
            .ok_or_else(|| Error::validation("test", "section is required for evaluation"))?;
        spec.validate("test", env)?;
        Ok(spec)
    }
}
