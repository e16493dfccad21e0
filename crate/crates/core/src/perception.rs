//! Ground-truth perception: visibility with occlusion, per-vehicle neighbor
//! features, the V2V share graph, fixed-width observations and the
//! action-observation history each actor consumes.

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::error::{Error, Result};
use crate::world::{immediate_leader, VehicleId, VehicleKind, VehicleState, WorldState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerceptionParams {
    pub sensing_range: f64,
    /// Own-sensor slots; a multiple of 6 (ahead and behind on three lanes).
    pub own_slots: usize,
    /// Slots for features relayed by other CAVs, laid out like `own_slots`.
    pub shared_slots: usize,
    /// Length of the action-observation history.
    pub history: usize,
    pub sharing: bool,
    /// Standard deviation of Gaussian noise on perceived distances (m).
    pub distance_noise: f64,
    /// Standard deviation of Gaussian noise on perceived angles (rad).
    pub angle_noise: f64,
}

impl Default for PerceptionParams {
    fn default() -> Self {
        PerceptionParams {
            sensing_range: 100.0,
            own_slots: 6,
            shared_slots: 6,
            history: 8,
            sharing: true,
            distance_noise: 0.0,
            angle_noise: 0.0,
        }
    }
}

/// Relative lanes a vehicle perceives and shares about.
pub const NEARBY_LANES: [i64; 3] = [-1, 0, 1];
pub const SLOT_WIDTH: usize = 5;
pub const EGO_WIDTH: usize = 4;
/// Mask plus a one-hot over KL, CL, CR, ES.
pub const SHARED_ACTION_WIDTH: usize = 5;

impl PerceptionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sensing_range > 0.0) {
            return Err(Error::invariant("perception.sensing_range", "sensing_range > 0"));
        }
        if self.own_slots == 0 || !self.own_slots.is_multiple_of(6) {
            return Err(Error::invariant("perception.own_slots", "a positive multiple of 6"));
        }
        if !self.shared_slots.is_multiple_of(6) {
            return Err(Error::invariant("perception.shared_slots", "a multiple of 6"));
        }
        if self.history == 0 {
            return Err(Error::invariant("perception.history", "history >= 1"));
        }
        if !(self.distance_noise >= 0.0 && self.angle_noise >= 0.0) {
            return Err(Error::invariant("perception", "noise deviations >= 0"));
        }
        Ok(())
    }

    pub fn noisy(&self) -> bool {
        self.distance_noise > 0.0 || self.angle_noise > 0.0
    }

    /// Width of an encoded observation.
    pub fn observation_width(&self) -> usize {
        EGO_WIDTH + SLOT_WIDTH * (self.own_slots + self.shared_slots) + SHARED_ACTION_WIDTH * NEARBY_LANES.len()
    }

    /// Width of one history row: observation plus the preceding action.
    pub fn history_row_width(&self) -> usize {
        self.observation_width() + 3
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureSource {
    OwnSensor,
    SharedV2V,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborFeature {
    pub vehicle: VehicleId,
    /// Lane of the neighbor minus lane of the observer.
    pub lane_index: i64,
    pub distance: f64,
    /// Bearing of the neighbor's centroid from the observer's heading.
    pub observation_angle: f64,
    /// Neighbor heading minus observer heading.
    pub rotation: f64,
    pub ahead: bool,
    pub source: FeatureSource,
    pub neighbor_action: Option<Action>,
}

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

fn centroid(v: &VehicleState) -> f64 {
    v.longitudinal_pos - v.vehicle_length / 2.0
}

/// Longitudinal and lateral displacement from `o`'s centroid to `t`'s.
fn displacement(world: &WorldState, o: VehicleId, t: VehicleId) -> (f64, f64) {
    let (vo, vt) = (world.vehicle(o), world.vehicle(t));
    let dx = world.road.displacement(centroid(vo), centroid(vt));
    let dy = vt.lateral_y(&world.road) - vo.lateral_y(&world.road);
    (dx, dy)
}

fn occluded(world: &WorldState, o: VehicleId, dx: f64) -> bool {
    let start = centroid(world.vehicle(o));
    let (lo, hi) = if dx >= 0.0 {
        (start, start + dx)
    } else {
        (start + dx, start)
    };
    let shifts: &[f64] = if world.road.is_ring() {
        &[-1.0, 0.0, 1.0]
    } else {
        &[0.0]
    };
    world.road.occlusion_zones.iter().any(|z| {
        z.blocking_edges().into_iter().any(|edge| {
            shifts
                .iter()
                .map(|k| edge + k * world.road.length)
                .any(|b| lo < b && b < hi)
        })
    })
}

/// Whether `observer` can see `target`: within range and with no occluding
/// corner edge between them.
pub fn visible(world: &WorldState, observer: VehicleId, target: VehicleId, params: &PerceptionParams) -> bool {
    if observer == target {
        return false;
    }
    let (dx, dy) = displacement(world, observer, target);
    dx.hypot(dy) <= params.sensing_range && !occluded(world, observer, dx)
}

/// Features of `target` as seen from `observer`, from ground-truth poses.
pub fn relative_feature(
    world: &WorldState,
    observer: VehicleId,
    target: VehicleId,
    source: FeatureSource,
) -> NeighborFeature {
    let (vo, vt) = (world.vehicle(observer), world.vehicle(target));
    let (dx, dy) = displacement(world, observer, target);
    let ahead = match (
        world.ahead_offset(observer, target),
        world.behind_offset(observer, target),
    ) {
        (Some(a), Some(b)) => a <= b,
        (a, _) => a.is_some(),
    };
    NeighborFeature {
        vehicle: target,
        lane_index: vt.lane as i64 - vo.lane as i64,
        distance: dx.hypot(dy),
        observation_angle: wrap_angle(dy.atan2(dx) - vo.heading),
        rotation: wrap_angle(vt.heading - vo.heading),
        ahead,
        source,
        neighbor_action: None,
    }
}

fn nearest_first(a: &NeighborFeature, b: &NeighborFeature) -> std::cmp::Ordering {
    a.distance.total_cmp(&b.distance).then(a.vehicle.cmp(&b.vehicle))
}

/// What vehicle `i`'s own sensors report: per nearby lane, the nearest
/// visible vehicles ahead and behind, lanes ordered left to right.
pub fn sense(world: &WorldState, i: VehicleId, params: &PerceptionParams) -> Vec<NeighborFeature> {
    let per_side = params.own_slots / 6;
    let mut features: Vec<NeighborFeature> = world
        .vehicles
        .iter()
        .filter(|v| v.id != i && (v.lane as i64 - world.vehicle(i).lane as i64).abs() <= 1)
        .filter(|v| visible(world, i, v.id, params))
        .map(|v| relative_feature(world, i, v.id, FeatureSource::OwnSensor))
        .collect();
    features.sort_by(nearest_first);
    let mut out = Vec::new();
    for lane in NEARBY_LANES {
        for ahead in [true, false] {
            out.extend(
                features
                    .iter()
                    .filter(|f| f.lane_index == lane && f.ahead == ahead)
                    .take(per_side)
                    .cloned(),
            );
        }
    }
    out
}

/// Receiver to senders: a CAV shares with every CAV whose immediate leader
/// it is on the receiver's lane or a neighboring lane. Receivers without
/// senders are omitted.
pub fn share_graph(world: &WorldState) -> BTreeMap<VehicleId, Vec<VehicleId>> {
    world
        .cav_ids()
        .into_iter()
        .filter_map(|i| {
            let senders = senders_of(world, i);
            (!senders.is_empty()).then_some((i, senders))
        })
        .collect()
}

/// The CAVs sharing with `i`, one slot per nearby lane (left, own, right).
fn sender_slots(world: &WorldState, i: VehicleId) -> [Option<VehicleId>; 3] {
    let lane = world.vehicle(i).lane as i64;
    let mut slots = [None; 3];
    for (slot, rel) in NEARBY_LANES.iter().enumerate() {
        let k = lane + rel;
        if k < 0 || k >= world.road.num_lanes as i64 {
            continue;
        }
        slots[slot] = immediate_leader(world, i, k as usize).filter(|&j| world.vehicle(j).kind == VehicleKind::Cav);
    }
    slots
}

pub fn senders_of(world: &WorldState, i: VehicleId) -> Vec<VehicleId> {
    if world.vehicle(i).kind != VehicleKind::Cav {
        return Vec::new();
    }
    sender_slots(world, i).into_iter().flatten().collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EgoFeatures {
    pub lane: usize,
    pub num_lanes: usize,
    pub velocity: f64,
    pub accel: f64,
    pub lateral_offset: f64,
    pub lane_width: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub ego: EgoFeatures,
    pub own_slots: Vec<Option<NeighborFeature>>,
    pub shared_slots: Vec<Option<NeighborFeature>>,
    /// Last action of the sharing leader on the left, own and right lane.
    pub shared_actions: [Option<Action>; 3],
    sensing_range: f64,
}

/// Ego speeds and accelerations are scaled by these before entering a network.
const SPEED_SCALE: f64 = 30.0;
const ACCEL_SCALE: f64 = 8.0;

impl Observation {
    pub fn width(&self) -> usize {
        EGO_WIDTH + SLOT_WIDTH * (self.own_slots.len() + self.shared_slots.len()) + SHARED_ACTION_WIDTH * 3
    }

    pub fn visible_ids(&self) -> Vec<VehicleId> {
        self.own_slots.iter().flatten().map(|f| f.vehicle).collect()
    }

    pub fn all_ids(&self) -> Vec<VehicleId> {
        self.own_slots
            .iter()
            .chain(&self.shared_slots)
            .flatten()
            .map(|f| f.vehicle)
            .collect()
    }

    pub fn encode_into(&self, out: &mut Vec<f64>) {
        let e = &self.ego;
        let lane_span = (e.num_lanes.max(2) - 1) as f64;
        out.extend([
            e.lane as f64 / lane_span,
            e.velocity / SPEED_SCALE,
            e.accel / ACCEL_SCALE,
            e.lateral_offset / e.lane_width,
        ]);
        for slot in self.own_slots.iter().chain(&self.shared_slots) {
            match slot {
                None => out.extend([0.0; SLOT_WIDTH]),
                Some(f) => out.extend([
                    1.0,
                    f.lane_index as f64,
                    f.distance / self.sensing_range,
                    f.observation_angle / PI,
                    f.rotation / PI,
                ]),
            }
        }
        for a in self.shared_actions {
            match a {
                None => out.extend([0.0; SHARED_ACTION_WIDTH]),
                Some(a) => {
                    out.push(1.0);
                    out.extend(a.one_hot4());
                }
            }
        }
    }

    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.width());
        self.encode_into(&mut v);
        v
    }
}

fn perturb<R: Rng + ?Sized>(f: &mut NeighborFeature, params: &PerceptionParams, rng: &mut R) {
    if params.distance_noise > 0.0 {
        let n = Normal::new(0.0, params.distance_noise).expect("finite deviation");
        f.distance = (f.distance + n.sample(rng)).max(0.0);
    }
    if params.angle_noise > 0.0 {
        let n = Normal::new(0.0, params.angle_noise).expect("finite deviation");
        f.observation_angle = wrap_angle(f.observation_angle + n.sample(rng));
    }
}

/// Lay nearest-first features into `slots` cells: for each nearby lane, the
/// vehicles ahead then those behind, `slots / 6` per group.
fn by_lane_and_side(features: &[NeighborFeature], slots: usize) -> Vec<Option<NeighborFeature>> {
    let per_side = slots / 6;
    let mut out = vec![None; slots];
    let mut slot = 0;
    for lane in NEARBY_LANES {
        for ahead in [true, false] {
            for (k, f) in features
                .iter()
                .filter(|f| f.lane_index == lane && f.ahead == ahead)
                .take(per_side)
                .enumerate()
            {
                out[slot + k] = Some(f.clone());
            }
            slot += per_side;
        }
    }
    out
}

/// Build CAV `i`'s observation. With `noise` given and noise enabled in
/// `params`, perceived distances and angles are perturbed.
pub fn assemble(
    world: &WorldState,
    i: VehicleId,
    params: &PerceptionParams,
    noise: Option<&mut dyn rand::RngCore>,
) -> Observation {
    let me = world.vehicle(i);
    let own = sense(world, i, params);

    let mut own_slots = by_lane_and_side(&own, params.own_slots);

    let mut shared_slots = vec![None; params.shared_slots];
    let mut shared_actions = [None; 3];
    if params.sharing {
        let senders = sender_slots(world, i);
        let own_ids: Vec<VehicleId> = own.iter().map(|f| f.vehicle).collect();
        let mut shared: Vec<NeighborFeature> = Vec::new();
        for (k, s) in senders.iter().enumerate() {
            let Some(s) = *s else { continue };
            shared_actions[k] = Some(world.vehicle(s).current_action);
            for f in sense(world, s, params) {
                let t = f.vehicle;
                if t == i || own_ids.contains(&t) || shared.iter().any(|g| g.vehicle == t) {
                    continue;
                }
                let mut g = relative_feature(world, i, t, FeatureSource::SharedV2V);
                if g.lane_index.abs() > 1 {
                    continue;
                }
                if senders.contains(&Some(t)) {
                    g.neighbor_action = Some(world.vehicle(t).current_action);
                }
                shared.push(g);
            }
        }
        shared.sort_by(nearest_first);
        shared_slots = by_lane_and_side(&shared, params.shared_slots);
    }

    if let Some(rng) = noise {
        if params.noisy() {
            for f in own_slots.iter_mut().chain(shared_slots.iter_mut()).flatten() {
                perturb(f, params, rng);
            }
        }
    }

    Observation {
        ego: EgoFeatures {
            lane: me.lane,
            num_lanes: world.road.num_lanes,
            velocity: me.velocity,
            accel: me.accel,
            lateral_offset: me.lateral_offset,
            lane_width: world.road.lane_width,
        },
        own_slots,
        shared_slots,
        shared_actions,
        sensing_range: params.sensing_range,
    }
}

/// A fixed-length, front-padded slice of history rows ready for a network.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryWindow {
    rows: Vec<Arc<[f64]>>,
}

impl HistoryWindow {
    pub fn zeros(len: usize, width: usize) -> Self {
        let zero: Arc<[f64]> = vec![0.0; width].into();
        HistoryWindow { rows: vec![zero; len] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        HistoryWindow {
            rows: rows.into_iter().map(Into::into).collect(),
        }
    }

    pub fn rows(&self) -> &[Arc<[f64]>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// One history entry: an observation and the action taken just before it.
#[derive(Clone, Debug)]
pub struct HistoryEntry {
    pub observation: Observation,
    pub previous_action: Action,
    row: Arc<[f64]>,
}

/// FIFO of the last `capacity` (observation, previous action) pairs.
#[derive(Clone, Debug)]
pub struct HistoryBuffer {
    capacity: usize,
    width: usize,
    entries: VecDeque<HistoryEntry>,
    zero: Arc<[f64]>,
}

impl HistoryBuffer {
    pub fn new(capacity: usize, row_width: usize) -> Self {
        HistoryBuffer {
            capacity,
            width: row_width,
            entries: VecDeque::with_capacity(capacity),
            zero: vec![0.0; row_width].into(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> impl Iterator<Item = &HistoryEntry> {
        self.entries.iter()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Append an observation with the action that preceded it. ES encodes as
    /// an all-zero action.
    pub fn push(&mut self, observation: Observation, previous_action: Action) {
        let mut row = Vec::with_capacity(self.width);
        observation.encode_into(&mut row);
        row.extend(previous_action.one_hot());
        debug_assert_eq!(row.len(), self.width);
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(HistoryEntry {
            observation,
            previous_action,
            row: row.into(),
        });
    }

    pub fn window(&self) -> HistoryWindow {
        let pad = self.capacity - self.entries.len();
        let mut rows = Vec::with_capacity(self.capacity);
        rows.extend(std::iter::repeat_n(self.zero.clone(), pad));
        rows.extend(self.entries.iter().map(|e| e.row.clone()));
        HistoryWindow { rows }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{BlockedBoundary, OcclusionZone, RoadConfig, Topology};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn world(road: RoadConfig, cars: &[(VehicleKind, usize, f64)]) -> WorldState {
        WorldState {
            time: 0,
            vehicles: cars
                .iter()
                .enumerate()
                .map(|(id, &(kind, lane, pos))| VehicleState::new(id, kind, lane, pos, 10.0, 4.5))
                .collect(),
            road,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    fn open() -> RoadConfig {
        RoadConfig {
            length: 1000.0,
            topology: Topology::Open,
            ..RoadConfig::default()
        }
    }

    fn corner() -> RoadConfig {
        RoadConfig {
            occlusion_zones: vec![OcclusionZone {
                start: 400.0,
                end: 600.0,
                blocks: BlockedBoundary::Entry,
            }],
            ..open()
        }
    }

    #[test]
    fn visibility_examples() {
        let p = PerceptionParams::default();
        let w = world(
            open(),
            &[
                (VehicleKind::Cav, 1, 100.0),
                (VehicleKind::Hdv, 1, 110.0),
                (VehicleKind::Hdv, 1, 300.0),
            ],
        );
        assert!(visible(&w, 0, 1, &p));
        assert!(!visible(&w, 0, 2, &p));

        let w = world(
            corner(),
            &[
                (VehicleKind::Cav, 0, 380.0),
                (VehicleKind::Obstacle, 0, 440.0),
                (VehicleKind::Cav, 0, 420.0),
            ],
        );
        assert!(!visible(&w, 0, 1, &p));
        assert!(visible(&w, 2, 1, &p));
    }

    #[test]
    fn dead_ahead_leader() {
        let p = PerceptionParams::default();
        let w = world(open(), &[(VehicleKind::Cav, 1, 100.0), (VehicleKind::Hdv, 1, 140.0)]);
        let f = sense(&w, 0, &p);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].lane_index, 0);
        assert_eq!(f[0].distance, 40.0);
        assert_eq!(f[0].observation_angle, 0.0);
        assert_eq!(f[0].rotation, 0.0);
        assert!(sense(&world(open(), &[(VehicleKind::Cav, 1, 100.0)]), 0, &p).is_empty());
    }

    #[test]
    fn angles_wrap_into_half_open_interval() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn share_graph_examples() {
        let w = world(open(), &[(VehicleKind::Hdv, 1, 100.0), (VehicleKind::Hdv, 1, 140.0)]);
        assert!(share_graph(&w).is_empty());
        let w = world(open(), &[(VehicleKind::Cav, 1, 100.0), (VehicleKind::Cav, 1, 140.0)]);
        assert_eq!(share_graph(&w).get(&0), Some(&vec![1]));
        assert_eq!(share_graph(&w).get(&1), None);
    }

    #[test]
    fn occluded_obstacle_arrives_through_sharing() {
        let p = PerceptionParams::default();
        let w = world(
            corner(),
            &[
                (VehicleKind::Cav, 0, 380.0),
                (VehicleKind::Obstacle, 0, 440.0),
                (VehicleKind::Cav, 0, 420.0),
            ],
        );
        let o = assemble(&w, 0, &p, None);
        assert!(!o.visible_ids().contains(&1));
        let shared: Vec<_> = o.shared_slots.iter().flatten().map(|f| f.vehicle).collect();
        assert_eq!(shared, vec![1]);
        assert_eq!(o.shared_actions, [None, Some(Action::KeepLane), None]);
        let off = assemble(
            &w,
            0,
            &PerceptionParams {
                sharing: false,
                ..p.clone()
            },
            None,
        );
        assert!(off.shared_slots.iter().all(Option::is_none));
        assert_eq!(off.to_vector().len(), p.observation_width());
    }

    #[test]
    fn isolated_cav_has_only_ego_features() {
        let p = PerceptionParams::default();
        let w = world(open(), &[(VehicleKind::Cav, 1, 100.0)]);
        let v = assemble(&w, 0, &p, None).to_vector();
        assert_eq!(v.len(), 79);
        assert!(v[EGO_WIDTH..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn history_is_fifo_and_padded() {
        let p = PerceptionParams {
            history: 3,
            ..PerceptionParams::default()
        };
        let width = p.history_row_width();
        let mut h = HistoryBuffer::new(3, width);
        let mut w = world(open(), &[(VehicleKind::Cav, 1, 100.0)]);
        let mut pushed = Vec::new();
        for k in 0..6 {
            w.vehicles[0].velocity = k as f64;
            let o = assemble(&w, 0, &p, None);
            h.push(o.clone(), Action::KeepLane);
            pushed.push(o);
            if k == 0 {
                assert_eq!(h.len(), 1);
                let win = h.window();
                assert!(win.rows()[0].iter().all(|&x| x == 0.0));
                assert!(win.rows()[2].iter().any(|&x| x != 0.0));
            }
        }
        assert_eq!(h.len(), 3);
        let kept: Vec<_> = h.entries().map(|e| e.observation.clone()).collect();
        assert_eq!(kept, pushed[3..].to_vec());
    }
}
