use serde::{Deserialize, Serialize};

/// Meters per second to miles per hour.
pub const MPH_PER_MPS: f64 = 2.23694;

pub const METRICS_HEADER: [&str; 10] = [
    "timestep",
    "v_bar_mps",
    "v_bar_mph",
    "c_bar",
    "min_headway_m",
    "flow_vps",
    "unsafe_actions",
    "es_count",
    "collisions",
    "episode_reward",
];

/// Network-level state after one simulation step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub timestep: u64,
    pub v_bar_mps: f64,
    pub v_bar_mph: f64,
    pub c_bar: f64,
    /// +inf when no vehicle has anything ahead of it.
    pub min_headway_m: f64,
    pub flow_vps: f64,
    pub unsafe_actions: u32,
    pub es_count: u32,
    pub collisions: u32,
    /// Running sum of rewards since the episode started.
    pub episode_reward: f64,
}
