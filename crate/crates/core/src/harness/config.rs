use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marl::{EnvConfig, ShieldMode, TrainConfig};
use crate::perception::PerceptionParams;
use crate::safety::SafetyParams;
use crate::traffic::TrafficParams;
use crate::world::ScenarioSpec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[default]
    Train,
    Eval,
    RatioSweep,
    DensitySweep,
    HeadwayTrace,
    ObstacleCorner,
    UnsafeAblation,
    IdmBaseline,
}

/// Geometry of the obstacle-at-corner scene on an open two-lane road.
/// Lane 0 is the left lane; positions are front bumpers in meters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObstacleCornerParams {
    pub road_length: f64,
    /// Sight lines crossing this position are cut while `occluded` is set.
    pub corner: f64,
    pub corner_end: f64,
    pub occluded: bool,
    /// Front of the nearer of two parked obstacles in the left lane.
    pub obstacle_pos: f64,
    /// Bumper gap between the two obstacles.
    pub obstacle_spacing: f64,
    /// Trailing CAV start position in the left lane.
    pub trailing_pos: f64,
    /// Lead CAV lane and distance ahead of the trailing CAV.
    pub lead_lane: usize,
    pub lead_gap: f64,
    /// Human driver distance behind the trailing CAV.
    pub human_gap: f64,
    pub initial_speed: f64,
    /// Right-lane human platoon: distance of its front behind the trailing
    /// CAV, vehicle count, spacing and speed.
    pub platoon_back: f64,
    pub platoon_size: usize,
    pub platoon_pitch: f64,
    pub platoon_speed: f64,
    /// Uniform jitter applied to start positions (m).
    pub jitter: f64,
    /// Human drivers never change lanes.
    pub humans_keep_lane: bool,
    pub max_timesteps: usize,
    /// Training scenes move the corner and obstacles by up to this much (m).
    pub train_shift: f64,
    /// Fraction of training scenes that contain the obstacles.
    pub train_obstacle_prob: f64,
    /// Fraction of obstacle-bearing training scenes whose obstacles sit in
    /// the other lane, where leaving the left lane runs into them.
    pub train_other_lane_prob: f64,
    /// A vehicle counts as stuck below this speed (m/s).
    pub jam_speed: f64,
    /// Seconds a vehicle must stay stuck to count toward a jam.
    pub jam_seconds: f64,
    /// Stuck vehicles needed for a jam.
    pub jam_vehicles: usize,
}

impl Default for ObstacleCornerParams {
    fn default() -> Self {
        ObstacleCornerParams {
            road_length: 1500.0,
            corner: 560.0,
            corner_end: 640.0,
            occluded: true,
            obstacle_pos: 620.0,
            obstacle_spacing: 1.5,
            trailing_pos: 400.0,
            lead_lane: 1,
            lead_gap: 60.0,
            human_gap: 60.0,
            initial_speed: 15.0,
            platoon_back: 120.0,
            platoon_size: 10,
            platoon_pitch: 40.0,
            platoon_speed: 20.0,
            jitter: 5.0,
            humans_keep_lane: true,
            max_timesteps: 600,
            train_shift: 100.0,
            train_obstacle_prob: 0.7,
            train_other_lane_prob: 0.0,
            jam_speed: 1.0,
            jam_seconds: 10.0,
            jam_vehicles: 2,
        }
    }
}

/// Settings of the experiment itself, as opposed to the simulated world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSettings {
    pub kind: ExperimentKind,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub shield: ShieldMode,
    /// When set, overrides `scenario.density` through the normalized mapping
    /// (see `vehicles_per_meter`).
    pub normalized_density: Option<f64>,
    /// Greedy evaluation episodes after training.
    pub eval_episodes: usize,
    /// Length of each evaluation episode; 0 uses `scenario.max_timesteps`.
    pub eval_timesteps: usize,
    pub ratios: Vec<f64>,
    /// Normalized densities of the density sweep.
    pub densities: Vec<f64>,
    /// CAV ratio held fixed during the density sweep.
    pub density_cav_ratio: f64,
    /// Timesteps recorded by the headway trace.
    pub trace_timesteps: usize,
    /// CAV ratio of the headway trace. The shield keeps CAVs clear of their
    /// leaders; gaps between two human drivers are outside its reach.
    pub trace_cav_ratio: f64,
    pub obstacle: ObstacleCornerParams,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            kind: ExperimentKind::Train,
            seeds: vec![0],
            output_dir: PathBuf::from("out"),
            shield: ShieldMode::On,
            normalized_density: None,
            eval_episodes: 1,
            eval_timesteps: 0,
            ratios: vec![0.0, 0.5, 1.0],
            densities: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            density_cav_ratio: 0.6,
            trace_timesteps: 500,
            trace_cav_ratio: 1.0,
            obstacle: ObstacleCornerParams::default(),
        }
    }
}

/// A full experiment description. Every section and key is optional; missing
/// ones take their defaults and unknown ones are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub experiment: ExperimentSettings,
    pub scenario: ScenarioSpec,
    pub traffic: TrafficParams,
    pub safety: SafetyParams,
    pub perception: PerceptionParams,
    pub train: TrainConfig,
}

/// Vehicles per meter of road for a normalized density: 1 packs every lane
/// with vehicles exactly `d_s` apart bumper to bumper.
pub fn vehicles_per_meter(normalized: f64, num_lanes: usize, vehicle_length: f64, d_s: f64) -> f64 {
    normalized * num_lanes as f64 / (vehicle_length + d_s)
}

impl ExperimentSpec {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let x = &self.experiment;
        if x.seeds.is_empty() {
            return Err(Error::invariant("experiment.seeds", "at least one seed"));
        }
        if x.output_dir.as_os_str().is_empty() {
            return Err(Error::invariant("experiment.output_dir", "a non-empty path"));
        }
        if let Some(d) = x.normalized_density {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::invariant(
                    "experiment.normalized_density",
                    "normalized_density >= 0",
                ));
            }
        }
        if x.eval_episodes == 0 {
            return Err(Error::invariant("experiment.eval_episodes", "eval_episodes >= 1"));
        }
        if !(0.0..=1.0).contains(&x.trace_cav_ratio) {
            return Err(Error::invariant(
                "experiment.trace_cav_ratio",
                "trace_cav_ratio in [0, 1]",
            ));
        }
        if x.ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::invariant("experiment.ratios", "every ratio in [0, 1]"));
        }
        if x.densities.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return Err(Error::invariant("experiment.densities", "every density >= 0"));
        }
        if !(0.0..=1.0).contains(&x.density_cav_ratio) {
            return Err(Error::invariant(
                "experiment.density_cav_ratio",
                "density_cav_ratio in [0, 1]",
            ));
        }
        let o = &x.obstacle;
        if !(0.0 < o.corner
            && o.corner < o.obstacle_pos
            && o.obstacle_pos < o.corner_end
            && o.corner_end < o.road_length)
        {
            return Err(Error::invariant(
                "experiment.obstacle",
                "0 < corner < obstacle_pos < corner_end < road_length",
            ));
        }
        if o.lead_lane > 1 {
            return Err(Error::invariant("experiment.obstacle.lead_lane", "lead_lane in {0, 1}"));
        }
        if !(0.0..=1.0).contains(&o.train_other_lane_prob) {
            return Err(Error::invariant(
                "experiment.obstacle.train_other_lane_prob",
                "train_other_lane_prob in [0, 1]",
            ));
        }
        if !(0.0..=1.0).contains(&o.train_obstacle_prob) {
            return Err(Error::invariant(
                "experiment.obstacle.train_obstacle_prob",
                "train_obstacle_prob in [0, 1]",
            ));
        }
        if !(o.jam_seconds > 0.0 && o.jam_speed > 0.0) {
            return Err(Error::invariant(
                "experiment.obstacle",
                "jam_seconds > 0 and jam_speed > 0",
            ));
        }
        self.scenario.validate()?;
        self.traffic.validate()?;
        self.safety.validate()?;
        self.perception.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// The scenario with any normalized density applied.
    pub fn resolved_scenario(&self) -> ScenarioSpec {
        let mut s = self.scenario.clone();
        if let Some(d) = self.experiment.normalized_density {
            s.density = vehicles_per_meter(d, s.road.num_lanes, s.vehicle_length, self.safety.d_s);
        }
        s
    }

    pub fn env_config(&self, scenario: ScenarioSpec, shield: ShieldMode) -> EnvConfig {
        EnvConfig {
            scenario,
            traffic: self.traffic.clone(),
            safety: self.safety.clone(),
            perception: self.perception.clone(),
            shield,
            reward_weight: self.train.reward_weight,
            comfort_threshold: self.train.comfort_threshold,
            collision_penalty: self.train.collision_penalty,
        }
    }
}

/// Read and validate an experiment file.
pub fn load_config(path: &Path) -> Result<ExperimentSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentSpec::parse(&text, path)
}
