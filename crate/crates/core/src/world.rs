//! Road geometry, vehicle state, spawning and neighbor queries.
//!
//! Vehicles live in a `Vec` indexed by id. Longitudinal order is total: two
//! vehicles at the same position are ordered by id, the lower id counting as
//! the one behind. Every leader/follower query goes through that order, so
//! ties never make a query ambiguous.

use std::cmp::Reverse;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::error::{Error, Result};

pub type VehicleId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Ring,
    Open,
}

/// Which edges of an occlusion zone block line of sight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BlockedBoundary {
    #[default]
    Entry,
    Exit,
    Both,
}

/// A longitudinal stretch of road hidden behind a corner. A sight line that
/// crosses one of the blocking edges is cut, whatever the lanes involved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionZone {
    pub start: f64,
    pub end: f64,
    #[serde(default)]
    pub blocks: BlockedBoundary,
}

impl OcclusionZone {
    pub fn blocking_edges(&self) -> Vec<f64> {
        match self.blocks {
            BlockedBoundary::Entry => vec![self.start],
            BlockedBoundary::Exit => vec![self.end],
            BlockedBoundary::Both => vec![self.start, self.end],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoadConfig {
    pub num_lanes: usize,
    pub lane_width: f64,
    pub length: f64,
    pub topology: Topology,
    pub occlusion_zones: Vec<OcclusionZone>,
}

impl Default for RoadConfig {
    fn default() -> Self {
        RoadConfig {
            num_lanes: 3,
            lane_width: 3.5,
            length: 400.0,
            topology: Topology::Ring,
            occlusion_zones: Vec::new(),
        }
    }
}

impl RoadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_lanes < 1 {
            return Err(Error::invariant("road.num_lanes", "num_lanes >= 1"));
        }
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(Error::invariant("road.length", "length > 0"));
        }
        if !(self.lane_width > 0.0) {
            return Err(Error::invariant("road.lane_width", "lane_width > 0"));
        }
        for z in &self.occlusion_zones {
            if !(0.0 <= z.start && z.start < z.end && z.end <= self.length) {
                return Err(Error::invariant("road.occlusion_zones", "0 <= start < end <= length"));
            }
        }
        Ok(())
    }

    pub fn is_ring(&self) -> bool {
        self.topology == Topology::Ring
    }

    /// Lateral coordinate of a (possibly fractional) lane center. Lane 0 is
    /// leftmost and y grows to the left, so lanes sit at y = -k * width.
    pub fn lane_y(&self, lane: f64) -> f64 {
        -lane * self.lane_width
    }

    /// Shortest signed longitudinal displacement from `from` to `to`.
    /// On a ring the result lies in [-length/2, length/2).
    pub fn displacement(&self, from: f64, to: f64) -> f64 {
        let d = to - from;
        match self.topology {
            Topology::Open => d,
            Topology::Ring => {
                let half = self.length / 2.0;
                wrap_to(d + half, self.length) - half
            }
        }
    }
}

fn wrap_to(s: f64, length: f64) -> f64 {
    let r = s.rem_euclid(length);
    // rem_euclid can round up to exactly `length` for tiny negative inputs.
    if r >= length {
        0.0
    } else {
        r
    }
}

/// Wrap a longitudinal coordinate onto a ring road. Open roads pass through.
pub fn wrap_pos(s: f64, road: &RoadConfig) -> f64 {
    match road.topology {
        Topology::Ring => wrap_to(s, road.length),
        Topology::Open => s,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleKind {
    Cav,
    Hdv,
    Obstacle,
}

/// An in-progress lane change. `elapsed` counts completed steps out of `total`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LaneChange {
    pub from: usize,
    pub to: usize,
    pub elapsed: u32,
    pub total: u32,
}

impl LaneChange {
    pub fn progress(&self) -> f64 {
        (self.elapsed as f64 / self.total as f64).min(1.0)
    }

    /// +1 for a change toward higher lane indices (right), -1 toward lower.
    pub fn direction(&self) -> f64 {
        if self.to > self.from {
            1.0
        } else {
            -1.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VehicleState {
    pub id: VehicleId,
    pub kind: VehicleKind,
    pub lane: usize,
    pub longitudinal_pos: f64,
    /// Offset from the center of `lane`, positive to the left.
    pub lateral_offset: f64,
    pub velocity: f64,
    pub accel: f64,
    pub heading: f64,
    pub current_action: Action,
    pub maneuver: Option<LaneChange>,
    pub vehicle_length: f64,
}

impl VehicleState {
    pub fn new(id: VehicleId, kind: VehicleKind, lane: usize, pos: f64, velocity: f64, length: f64) -> Self {
        VehicleState {
            id,
            kind,
            lane,
            longitudinal_pos: pos,
            lateral_offset: 0.0,
            velocity: if kind == VehicleKind::Obstacle { 0.0 } else { velocity },
            accel: 0.0,
            heading: 0.0,
            current_action: Action::KeepLane,
            maneuver: None,
            vehicle_length: length,
        }
    }

    pub fn lane_change_progress(&self) -> f64 {
        self.maneuver.map_or(0.0, |m| m.progress())
    }

    pub fn is_maneuvering(&self) -> bool {
        self.maneuver.is_some()
    }

    /// Lanes this vehicle physically occupies. A vehicle mid-change blocks
    /// both its source and target lane.
    pub fn occupied_lanes(&self) -> (usize, Option<usize>) {
        match self.maneuver {
            Some(m) => (self.lane, Some(if m.from == self.lane { m.to } else { m.from })),
            None => (self.lane, None),
        }
    }

    pub fn occupies(&self, lane: usize) -> bool {
        let (a, b) = self.occupied_lanes();
        a == lane || b == Some(lane)
    }

    pub fn shares_lane_with(&self, other: &VehicleState) -> bool {
        let (a, b) = self.occupied_lanes();
        other.occupies(a) || b.is_some_and(|l| other.occupies(l))
    }

    pub fn lateral_y(&self, road: &RoadConfig) -> f64 {
        road.lane_y(self.lane as f64) + self.lateral_offset
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub time: u64,
    pub vehicles: Vec<VehicleState>,
    pub road: RoadConfig,
    pub rng: ChaCha8Rng,
}

/// One explicitly placed vehicle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterEntry {
    pub kind: VehicleKind,
    pub lane: usize,
    pub pos: f64,
    #[serde(default)]
    pub velocity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSpec {
    pub road: RoadConfig,
    /// Explicit vehicles. When empty, vehicles are sampled from `density`.
    pub roster: Vec<RosterEntry>,
    pub cav_ratio: f64,
    /// Vehicles per meter of road (summed over lanes).
    pub density: f64,
    pub seed: u64,
    pub max_timesteps: usize,
    pub dt: f64,
    pub vehicle_length: f64,
    /// Minimum bumper gap between same-lane vehicles at spawn. The default
    /// matches the CAV standstill gap so no CAV starts inside it.
    pub spawn_gap: f64,
    pub initial_speed: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            road: RoadConfig::default(),
            roster: Vec::new(),
            cav_ratio: 0.5,
            density: 0.015,
            seed: 0,
            max_timesteps: 2000,
            dt: 0.1,
            vehicle_length: 4.5,
            spawn_gap: 30.0,
            initial_speed: 10.0,
        }
    }
}

impl ScenarioSpec {
    pub fn num_vehicles(&self) -> usize {
        if self.roster.is_empty() {
            (self.density * self.road.length).round() as usize
        } else {
            self.roster.len()
        }
    }

    /// Vehicles per meter actually placed on the road.
    pub fn effective_density(&self) -> f64 {
        self.num_vehicles() as f64 / self.road.length
    }

    /// How many vehicles one lane holds with every gap above `spawn_gap`.
    pub fn lane_capacity(&self) -> usize {
        let pitch = self.spawn_gap + self.vehicle_length;

        match self.road.topology {
            // m vehicles need m pitches of road, strictly less than the loop.
            Topology::Ring => (self.road.length / pitch).ceil() as usize - 1,
            // the last vehicle needs only its own length
            Topology::Open => {
                let usable = self.road.length - self.vehicle_length;
                if usable <= 0.0 {
                    0
                } else {
                    (usable / pitch).ceil() as usize
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.road.validate()?;
        if !(0.0..=1.0).contains(&self.cav_ratio) {
            return Err(Error::invariant("scenario.cav_ratio", "cav_ratio in [0, 1]"));
        }
        if !(self.density >= 0.0) {
            return Err(Error::invariant("scenario.density", "density >= 0"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::invariant("scenario.dt", "dt > 0"));
        }
        if !(self.vehicle_length > 0.0) {
            return Err(Error::invariant("scenario.vehicle_length", "vehicle_length > 0"));
        }
        if !(self.spawn_gap >= 0.0) {
            return Err(Error::invariant("scenario.spawn_gap", "spawn_gap >= 0"));
        }
        if !(self.initial_speed >= 0.0) {
            return Err(Error::invariant("scenario.initial_speed", "initial_speed >= 0"));
        }
        Ok(())
    }
}

/// Build the initial world for a scenario.
///
/// Without a roster, vehicles are spread over lanes as evenly as possible and
/// placed uniformly at random subject to the spawn gap. Sampling is exact
/// (uniform slack between fixed-pitch slots) instead of rejection-based, so it
/// never fails for a feasible count.
pub fn init_world(spec: &ScenarioSpec) -> Result<WorldState> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let vehicles = if spec.roster.is_empty() {
        sample_vehicles(spec, &mut rng)?
    } else {
        roster_vehicles(spec)?
    };
    Ok(WorldState {
        time: 0,
        vehicles,
        road: spec.road.clone(),
        rng,
    })
}

fn roster_vehicles(spec: &ScenarioSpec) -> Result<Vec<VehicleState>> {
    let road = &spec.road;
    let vehicles: Vec<VehicleState> = spec
        .roster
        .iter()
        .enumerate()
        .map(|(id, e)| VehicleState::new(id, e.kind, e.lane, e.pos, e.velocity, spec.vehicle_length))
        .collect();
    for (v, e) in vehicles.iter().zip(&spec.roster) {
        if e.lane >= road.num_lanes {
            return Err(Error::Config(format!(
                "roster vehicle {} on missing lane {}",
                v.id, e.lane
            )));
        }
        if !(0.0..road.length).contains(&e.pos) {
            return Err(Error::Config(format!("roster vehicle {} outside the road", v.id)));
        }
        if !(e.velocity >= 0.0) {
            return Err(Error::Config(format!("roster vehicle {} has negative velocity", v.id)));
        }
    }
    let world = WorldState {
        time: 0,
        vehicles,
        road: road.clone(),
        rng: ChaCha8Rng::seed_from_u64(0),
    };
    for a in &world.vehicles {
        for b in &world.vehicles {
            if a.id == b.id || a.lane != b.lane {
                continue;
            }
            // Obstacles may be parked nose to tail.
            if a.kind == VehicleKind::Obstacle && b.kind == VehicleKind::Obstacle {
                continue;
            }
            if let Some(off) = world.ahead_offset(a.id, b.id) {
                if off - b.vehicle_length <= spec.spawn_gap {
                    return Err(Error::Config(format!(
                        "roster vehicles {} and {} are closer than the spawn gap",
                        a.id, b.id
                    )));
                }
            }
        }
    }
    Ok(world.vehicles)
}

fn sample_vehicles(spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> Result<Vec<VehicleState>> {
    let road = &spec.road;
    let n = spec.num_vehicles();
    let lanes = road.num_lanes;
    let capacity = spec.lane_capacity();
    if n > capacity * lanes {
        return Err(Error::Config(format!(
            "{n} vehicles do not fit: {lanes} lanes hold {capacity} each at spawn gap {}",
            spec.spawn_gap
        )));
    }

    let mut per_lane = vec![n / lanes; lanes];
    let mut order: Vec<usize> = (0..lanes).collect();
    order.shuffle(rng);
    for &lane in order.iter().take(n % lanes) {
        per_lane[lane] += 1;
    }

    // A hair over the pitch keeps every gap strictly above the spawn gap.
    let pitch = spec.spawn_gap + spec.vehicle_length + 1e-6;
    let mut placed: Vec<(usize, f64)> = Vec::with_capacity(n);
    for (lane, &m) in per_lane.iter().enumerate() {
        if m == 0 {
            continue;
        }
        let slack = match road.topology {
            Topology::Ring => road.length - m as f64 * pitch,
            Topology::Open => road.length - spec.vehicle_length - (m - 1) as f64 * pitch,
        };
        if slack <= 0.0 {
            return Err(Error::Config(format!("lane {lane} cannot hold {m} vehicles")));
        }
        let mut u: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..slack)).collect();
        u.sort_by(f64::total_cmp);
        let origin = match road.topology {
            Topology::Ring => rng.random_range(0.0..road.length),
            Topology::Open => 0.0,
        };
        for (k, uk) in u.iter().enumerate() {
            placed.push((lane, wrap_pos(origin + uk + k as f64 * pitch, road)));
        }
    }

    let n_cav = (spec.cav_ratio * n as f64).round() as usize;
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(rng);
    let mut kinds = vec![VehicleKind::Hdv; n];
    for &id in ids.iter().take(n_cav) {
        kinds[id] = VehicleKind::Cav;
    }

    Ok(placed
        .into_iter()
        .enumerate()
        .map(|(id, (lane, pos))| VehicleState::new(id, kinds[id], lane, pos, spec.initial_speed, spec.vehicle_length))
        .collect())
}

impl WorldState {
    pub fn vehicle(&self, id: VehicleId) -> &VehicleState {
        &self.vehicles[id]
    }

    pub fn ids_of(&self, kind: VehicleKind) -> Vec<VehicleId> {
        self.vehicles.iter().filter(|v| v.kind == kind).map(|v| v.id).collect()
    }

    pub fn cav_ids(&self) -> Vec<VehicleId> {
        self.ids_of(VehicleKind::Cav)
    }

    /// Distance from `a`'s position forward to `b`'s, or `None` when `b` is
    /// not ahead of `a` (open road only; on a ring everything is ahead).
    pub fn ahead_offset(&self, a: VehicleId, b: VehicleId) -> Option<f64> {
        let (va, vb) = (&self.vehicles[a], &self.vehicles[b]);
        let d = vb.longitudinal_pos - va.longitudinal_pos;
        match self.road.topology {
            Topology::Open => (d > 0.0 || (d == 0.0 && b > a)).then_some(d),
            Topology::Ring => {
                let off = wrap_to(d, self.road.length);
                Some(if off == 0.0 && b < a { self.road.length } else { off })
            }
        }
    }

    /// Distance from `b`'s position forward to `a`'s, or `None` when `b` is
    /// not behind `a`.
    pub fn behind_offset(&self, a: VehicleId, b: VehicleId) -> Option<f64> {
        let (va, vb) = (&self.vehicles[a], &self.vehicles[b]);
        let d = va.longitudinal_pos - vb.longitudinal_pos;
        match self.road.topology {
            Topology::Open => (d > 0.0 || (d == 0.0 && b < a)).then_some(d),
            Topology::Ring => {
                let off = wrap_to(d, self.road.length);
                Some(if off == 0.0 && b > a { self.road.length } else { off })
            }
        }
    }

    /// Nearest vehicle ahead of `i` among those accepted by `filter`.
    pub fn nearest_ahead(&self, i: VehicleId, filter: impl Fn(&VehicleState) -> bool) -> Option<VehicleId> {
        self.vehicles
            .iter()
            .filter(|v| v.id != i && filter(v))
            .filter_map(|v| self.ahead_offset(i, v.id).map(|off| (off, v.id)))
            .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)))
            .map(|(_, id)| id)
    }

    /// Nearest vehicle behind `i` among those accepted by `filter`.
    pub fn nearest_behind(&self, i: VehicleId, filter: impl Fn(&VehicleState) -> bool) -> Option<VehicleId> {
        self.vehicles
            .iter()
            .filter(|v| v.id != i && filter(v))
            .filter_map(|v| self.behind_offset(i, v.id).map(|off| (off, Reverse(v.id))))
            .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)))
            .map(|(_, Reverse(id))| id)
    }

    /// Bumper gap from `i` forward to `j`, if `j` is ahead.
    pub fn gap_ahead(&self, i: VehicleId, j: VehicleId) -> Option<f64> {
        self.ahead_offset(i, j).map(|off| off - self.vehicles[j].vehicle_length)
    }

    /// Bumper gap from `j` forward to `i`, if `j` is behind.
    pub fn gap_behind(&self, i: VehicleId, j: VehicleId) -> Option<f64> {
        self.behind_offset(i, j)
            .map(|off| off - self.vehicles[i].vehicle_length)
    }

    /// The closest vehicle ahead physically sharing a lane with `i`, with its
    /// bumper gap. This is what `i` has to follow.
    pub fn leading_vehicle(&self, i: VehicleId) -> Option<(VehicleId, f64)> {
        let me = &self.vehicles[i];
        let (a, b) = me.occupied_lanes();
        [Some(a), b]
            .into_iter()
            .flatten()
            .filter_map(|lane| nearest_ahead_occupying(self, i, lane))
            .map(|j| (j, self.gap_ahead(i, j).expect("nearest ahead is ahead")))
            .min_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)))
    }
}

/// Bumper-to-bumper distance from `i` forward to `j`.
pub fn forward_gap(world: &WorldState, i: VehicleId, j: VehicleId) -> Result<f64> {
    if i == j {
        return Err(Error::InvalidArgument(format!("gap of vehicle {i} with itself")));
    }
    for id in [i, j] {
        if id >= world.vehicles.len() {
            return Err(Error::InvalidArgument(format!("no vehicle {id}")));
        }
    }
    world
        .gap_ahead(i, j)
        .ok_or_else(|| Error::InvalidArgument(format!("vehicle {j} is not ahead of {i}")))
}

/// Nearest vehicle ahead of `i` whose lane index is `k`.
pub fn immediate_leader(world: &WorldState, i: VehicleId, k: usize) -> Option<VehicleId> {
    world.nearest_ahead(i, |v| v.lane == k)
}

/// Nearest vehicle behind `i` whose lane index is `k`.
pub fn immediate_follower(world: &WorldState, i: VehicleId, k: usize) -> Option<VehicleId> {
    world.nearest_behind(i, |v| v.lane == k)
}

/// Nearest vehicle ahead of `i` that physically occupies lane `k`, counting
/// vehicles mid-change into or out of it.
pub fn nearest_ahead_occupying(world: &WorldState, i: VehicleId, k: usize) -> Option<VehicleId> {
    world.nearest_ahead(i, |v| v.occupies(k))
}

pub fn nearest_behind_occupying(world: &WorldState, i: VehicleId, k: usize) -> Option<VehicleId> {
    world.nearest_behind(i, |v| v.occupies(k))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(length: f64, lanes: usize) -> RoadConfig {
        RoadConfig {
            num_lanes: lanes,
            length,
            ..RoadConfig::default()
        }
    }

    pub(crate) fn world_with(road: RoadConfig, cars: &[(usize, f64)]) -> WorldState {
        WorldState {
            time: 0,
            vehicles: cars
                .iter()
                .enumerate()
                .map(|(id, &(lane, pos))| VehicleState::new(id, VehicleKind::Hdv, lane, pos, 0.0, 4.5))
                .collect(),
            road,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    #[test]
    fn wrap_examples() {
        let road = ring(1000.0, 1);
        assert_eq!(wrap_pos(1050.0, &road), 50.0);
        assert_eq!(wrap_pos(-10.0, &road), 990.0);
        assert_eq!(wrap_pos(0.0, &road), 0.0);
        assert!(wrap_pos(-1e-18, &road) < 1000.0);
    }

    #[test]
    fn gap_examples() {
        let open = RoadConfig {
            topology: Topology::Open,
            length: 1000.0,
            ..RoadConfig::default()
        };
        let w = world_with(open, &[(0, 100.0), (0, 150.0)]);
        assert_eq!(forward_gap(&w, 0, 1).unwrap(), 45.5);
        assert!(forward_gap(&w, 1, 0).is_err());
        assert!(forward_gap(&w, 0, 0).is_err());

        let w = world_with(ring(1000.0, 1), &[(0, 990.0), (0, 10.0)]);
        assert!((forward_gap(&w, 0, 1).unwrap() - 15.5).abs() < 1e-9);
    }

    #[test]
    fn leader_examples() {
        let open = RoadConfig {
            topology: Topology::Open,
            length: 1000.0,
            ..RoadConfig::default()
        };
        let w = world_with(open.clone(), &[(0, 0.0)]);
        assert_eq!(immediate_leader(&w, 0, 0), None);
        let w = world_with(open, &[(0, 0.0), (1, 60.0), (1, 30.0)]);
        assert_eq!(immediate_leader(&w, 0, 1), Some(2));
        assert_eq!(immediate_follower(&w, 1, 1), Some(2));
        assert_eq!(immediate_follower(&w, 2, 1), None);
    }

    #[test]
    fn ring_with_one_other_vehicle_always_has_a_leader() {
        let w = world_with(ring(200.0, 2), &[(0, 10.0), (1, 5.0)]);
        assert_eq!(immediate_leader(&w, 0, 1), Some(1));
        assert_eq!(immediate_follower(&w, 0, 1), Some(1));
    }

    #[test]
    fn equal_positions_are_ordered_by_id() {
        let w = world_with(ring(200.0, 1), &[(0, 50.0), (0, 50.0), (0, 50.0)]);
        assert_eq!(immediate_leader(&w, 0, 0), Some(1));
        assert_eq!(immediate_leader(&w, 1, 0), Some(2));
        assert_eq!(immediate_leader(&w, 2, 0), Some(0));
        assert_eq!(immediate_follower(&w, 1, 0), Some(0));
    }

    #[test]
    fn capacity_arithmetic() {
        let mut spec = ScenarioSpec {
            road: ring(1000.0, 3),
            spawn_gap: 18.5,
            ..ScenarioSpec::default()
        };
        // 1000 / 23 = 43.47, so 43 vehicles fit in each lane
        assert_eq!(spec.lane_capacity(), 43);
        spec.density = 60.0 / 1000.0;
        assert!(init_world(&spec).is_ok());
        spec.density = 150.0 / 1000.0;
        assert!(matches!(init_world(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn empty_spec_gives_empty_world() {
        let spec = ScenarioSpec {
            density: 0.0,
            ..ScenarioSpec::default()
        };
        assert!(init_world(&spec).unwrap().vehicles.is_empty());
    }

    #[test]
    fn sampled_worlds_keep_spawn_gap_and_are_deterministic() {
        for seed in 0..20 {
            let spec = ScenarioSpec {
                road: ring(300.0, 2),
                density: 24.0 / 300.0,
                seed,
                spawn_gap: 18.5,
                ..ScenarioSpec::default()
            };
            let w = init_world(&spec).unwrap();
            assert_eq!(w, init_world(&spec).unwrap());
            assert_eq!(w.cav_ids().len(), 12);
            for v in &w.vehicles {
                let (_, gap) = w.leading_vehicle(v.id).unwrap();
                assert!(gap > spec.spawn_gap, "seed {seed}: gap {gap}");
            }
        }
    }

    #[test]
    fn full_lanes_are_feasible() {
        for topology in [Topology::Ring, Topology::Open] {
            let spec = ScenarioSpec {
                road: RoadConfig {
                    topology,
                    num_lanes: 2,
                    length: 300.0,
                    ..RoadConfig::default()
                },
                ..ScenarioSpec::default()
            };
            let cap = spec.lane_capacity();
            let spec = ScenarioSpec {
                density: (2 * cap) as f64 / 300.0,
                ..spec
            };
            let w = init_world(&spec).unwrap();
            assert_eq!(w.vehicles.len(), 2 * cap);
            for v in &w.vehicles {
                if let Some((_, gap)) = w.leading_vehicle(v.id) {
                    assert!(gap > spec.spawn_gap);
                }
                assert!(v.longitudinal_pos >= 0.0 && v.longitudinal_pos < 300.0);
            }
        }
    }

    #[test]
    fn roster_spacing_is_enforced() {
        let mut spec = ScenarioSpec {
            roster: vec![
                RosterEntry {
                    kind: VehicleKind::Cav,
                    lane: 0,
                    pos: 0.0,
                    velocity: 5.0,
                },
                RosterEntry {
                    kind: VehicleKind::Hdv,
                    lane: 0,
                    pos: 20.0,
                    velocity: 5.0,
                },
            ],
            spawn_gap: 18.5,
            ..ScenarioSpec::default()
        };
        assert!(init_world(&spec).is_err());
        spec.roster[1].pos = 30.0;
        let w = init_world(&spec).unwrap();
        assert_eq!(w.vehicles[0].kind, VehicleKind::Cav);
        assert!((spec.effective_density() - 2.0 / 400.0).abs() < 1e-15);
    }
}
