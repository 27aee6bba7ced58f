//! TOML experiment configuration. Every key is optional; missing keys take
//! the default scenario values.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::{Extent, LaneGeometry, ReflectorPlane, RoadExtent, Scene};
use crate::measurement::NoiseConfig;
use crate::orchestrator::EstimatorConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReflectorConfig {
    pub id: u32,
    pub point: [f64; 3],
    pub normal: [f64; 3],
    pub extent_min: [f64; 3],
    pub extent_max: [f64; 3],
}

impl Default for ReflectorConfig {
    fn default() -> Self {
        ReflectorConfig::facade(0, 16.0)
    }
}

impl ReflectorConfig {
    /// Facade at constant `y`, facing the road.
    pub fn facade(id: u32, y: f64) -> Self {
        ReflectorConfig {
            id,
            point: [0.0, y, 0.0],
            normal: [0.0, -y.signum(), 0.0],
            extent_min: [0.0, y, 0.0],
            extent_max: [140.0, y, 20.0],
        }
    }

    pub fn build(&self) -> Result<ReflectorPlane> {
        ReflectorPlane::new(
            self.id,
            Vector3::from(self.point),
            Vector3::from(self.normal),
            Extent {
                min: self.extent_min,
                max: self.extent_max,
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub bs_position: [f64; 3],
    pub road_x: [f64; 2],
    pub road_y: [f64; 2],
    pub lane_count: usize,
    pub lane_width: f64,
    /// m/s along the lane.
    pub speed: f64,
    pub antenna_height: f64,
    /// Initial x interval of vehicles heading +x.
    pub spawn_x_forward: [f64; 2],
    /// Initial x interval of vehicles heading −x.
    pub spawn_x_backward: [f64; 2],
    /// Minimum spacing between vehicles sharing a lane, meters.
    pub headway: f64,
    pub spawn_attempts: usize,
    pub reflectors: Vec<ReflectorConfig>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            bs_position: [70.0, 0.0, 8.0],
            road_x: [0.0, 140.0],
            road_y: [-16.0, 16.0],
            lane_count: 8,
            lane_width: 4.0,
            speed: 10.0,
            antenna_height: 0.0,
            spawn_x_forward: [0.0, 40.0],
            spawn_x_backward: [100.0, 140.0],
            headway: 5.0,
            spawn_attempts: 100,
            reflectors: vec![ReflectorConfig::facade(0, -16.0), ReflectorConfig::facade(1, 16.0)],
        }
    }
}

impl SceneConfig {
    pub fn build(&self) -> Result<Scene> {
        let reflectors = self
            .reflectors
            .iter()
            .map(ReflectorConfig::build)
            .collect::<Result<Vec<_>>>()?;
        Scene::new(
            Vector3::from(self.bs_position),
            reflectors,
            RoadExtent {
                x: (self.road_x[0], self.road_x[1]),
                y: (self.road_y[0], self.road_y[1]),
            },
            LaneGeometry {
                count: self.lane_count,
                width: self.lane_width,
            },
        )
    }

    fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2]| r[0] < r[1];
        if !ordered(self.road_x) || !ordered(self.road_y) {
            return Err(Error::Config("road intervals must be increasing".into()));
        }
        if !ordered(self.spawn_x_forward) || !ordered(self.spawn_x_backward) {
            return Err(Error::Config("spawn intervals must be increasing".into()));
        }
        if !(self.speed >= 0.0) || !(self.headway >= 0.0) || self.spawn_attempts == 0 {
            return Err(Error::Config("speed, headway must be >= 0 and spawn_attempts >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Vehicles per road section.
    pub density_list: Vec<usize>,
    pub runs: usize,
    pub slots: usize,
    pub seed: u64,
    /// Worker threads; 0 uses all cores.
    pub parallel: usize,
    pub noise: NoiseConfig,
    pub estimator: EstimatorConfig,
    pub scene: SceneConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            density_list: vec![1, 2, 4, 6, 8],
            runs: 200,
            slots: 100,
            seed: 0,
            parallel: 0,
            noise: NoiseConfig::default(),
            estimator: EstimatorConfig::default(),
            scene: SceneConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| Error::ConfigFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.density_list.is_empty() || self.density_list.contains(&0) {
            return Err(Error::Config("densities must be >= 1 and the list non-empty".into()));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be >= 1".into()));
        }
        self.noise.validate()?;
        self.estimator.validate()?;
        self.scene.validate()?;
        self.scene.build()?;
        Ok(())
    }
}
