//! Independent reference implementations used by the acceptance and property
//! tests. Nothing here calls into the library's own queries or checks.

#![allow(dead_code)]

use cav_marl::safety::SafetyParams;
use cav_marl::traffic::{IdmParams, TrafficParams};
use cav_marl::world::{LaneChange, RoadConfig, Topology, VehicleId, VehicleKind, VehicleState, WorldState};
use cav_marl::Action;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// random worlds

pub struct WorldShape {
    pub max_vehicles: usize,
    pub max_lanes: usize,
    pub lengths: (f64, f64),
    /// Chance that a vehicle other than the ones under test is mid-change.
    pub maneuver_prob: f64,
    /// Snap positions to a 5 m grid so that ties occur.
    pub snap: bool,
}

pub fn random_world(rng: &mut ChaCha8Rng, shape: &WorldShape) -> WorldState {
    let lanes = rng.random_range(1..=shape.max_lanes);
    let length = rng.random_range(shape.lengths.0..shape.lengths.1);
    let topology = if rng.random_bool(0.5) {
        Topology::Ring
    } else {
        Topology::Open
    };
    let n = rng.random_range(2..=shape.max_vehicles);
    let steps = 30u32;
    let mut vehicles = Vec::with_capacity(n);
    for id in 0..n {
        let kind = match rng.random_range(0..10) {
            0..=4 => VehicleKind::Cav,
            5..=8 => VehicleKind::Hdv,
            _ => VehicleKind::Obstacle,
        };
        let mut pos = rng.random_range(0.0..length);
        if shape.snap {
            pos = ((pos / 5.0).floor() * 5.0).min(length - 5.0);
        }
        let lane = rng.random_range(0..lanes);
        let speed = rng.random_range(0.0..30.0);
        let mut v = VehicleState::new(id, kind, lane, pos, speed, 4.5);
        if kind != VehicleKind::Obstacle && lanes > 1 && rng.random_bool(shape.maneuver_prob) {
            let from = lane;
            let to = if from == 0 {
                1
            } else if from + 1 == lanes || rng.random_bool(0.5) {
                from - 1
            } else {
                from + 1
            };
            let elapsed = rng.random_range(0..steps);
            v.lane = if 2 * elapsed >= steps { to } else { from };
            v.maneuver = Some(LaneChange {
                from,
                to,
                elapsed,
                total: steps,
            });
            v.current_action = if to < from {
                Action::ChangeLeft
            } else {
                Action::ChangeRight
            };
        }
        vehicles.push(v);
    }
    WorldState {
        time: 0,
        vehicles,
        road: RoadConfig {
            num_lanes: lanes,
            length,
            topology,
            ..RoadConfig::default()
        },
        rng: ChaCha8Rng::seed_from_u64(rng.random()),
    }
}

// ---------------------------------------------------------------------------
// neighbor queries by sorting each lane

pub fn lanes_of(v: &VehicleState) -> Vec<usize> {
    match v.maneuver {
        Some(m) => vec![m.from, m.to],
        None => vec![v.lane],
    }
}

pub fn in_lane(v: &VehicleState, lane: usize) -> bool {
    lanes_of(v).contains(&lane)
}

fn key(v: &VehicleState) -> (f64, VehicleId) {
    (v.longitudinal_pos, v.id)
}

fn before(a: (f64, VehicleId), b: (f64, VehicleId)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Members accepted by `keep`, sorted along the road, ego excluded.
fn sorted_members(w: &WorldState, i: VehicleId, keep: &dyn Fn(&VehicleState) -> bool) -> Vec<(f64, VehicleId)> {
    let mut m: Vec<(f64, VehicleId)> = w.vehicles.iter().filter(|v| v.id != i && keep(v)).map(key).collect();
    m.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    m
}

/// Successor of the ego in road order among the accepted vehicles, wrapping
/// around on a ring.
pub fn successor(w: &WorldState, i: VehicleId, keep: &dyn Fn(&VehicleState) -> bool) -> Option<VehicleId> {
    let me = key(w.vehicle(i));
    let m = sorted_members(w, i, keep);
    m.iter()
        .find(|&&k| before(me, k))
        .or_else(|| {
            if w.road.topology == Topology::Ring {
                m.first()
            } else {
                None
            }
        })
        .map(|k| k.1)
}

pub fn predecessor(w: &WorldState, i: VehicleId, keep: &dyn Fn(&VehicleState) -> bool) -> Option<VehicleId> {
    let me = key(w.vehicle(i));
    let m = sorted_members(w, i, keep);
    m.iter()
        .rev()
        .find(|&&k| before(k, me))
        .or_else(|| {
            if w.road.topology == Topology::Ring {
                m.last()
            } else {
                None
            }
        })
        .map(|k| k.1)
}

/// Distance along the direction of travel from `a` to `b`.
pub fn forward_distance(w: &WorldState, a: VehicleId, b: VehicleId) -> f64 {
    let (pa, pb) = (w.vehicle(a).longitudinal_pos, w.vehicle(b).longitudinal_pos);
    match w.road.topology {
        Topology::Open => pb - pa,
        Topology::Ring => {
            let l = w.road.length;
            let mut d = pb - pa;
            while d < 0.0 {
                d += l;
            }
            while d >= l {
                d -= l;
            }
            if d == 0.0 && b < a {
                l
            } else {
                d
            }
        }
    }
}

/// All (follower, leader) pairs that share a lane with a bumper gap <= 0.
pub fn collisions(w: &WorldState) -> Vec<(VehicleId, VehicleId)> {
    let mut out = Vec::new();
    for a in &w.vehicles {
        for b in &w.vehicles {
            if a.id == b.id || !lanes_of(a).iter().any(|&l| in_lane(b, l)) {
                continue;
            }
            let ahead = match w.road.topology {
                Topology::Open => {
                    b.longitudinal_pos > a.longitudinal_pos || (b.longitudinal_pos == a.longitudinal_pos && b.id > a.id)
                }
                Topology::Ring => true,
            };
            if ahead && forward_distance(w, a.id, b.id) - b.vehicle_length <= 0.0 {
                out.push((a.id, b.id));
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

// ---------------------------------------------------------------------------
// car following

/// The intelligent driver model written out term by term.
pub fn idm(v: f64, gap: Option<(f64, f64)>, p: &IdmParams, max_decel: f64) -> f64 {
    let free_term = (v / p.v0).powf(p.delta);
    let interaction = match gap {
        None => 0.0,
        Some((s, v_lead)) => {
            let approach = v - v_lead;
            let mut s_star = p.s0 + v * p.time_headway + v * approach / (2.0 * (p.a_max * p.b_comf).sqrt());
            if s_star < p.s0 {
                s_star = p.s0;
            }
            (s_star / s) * (s_star / s)
        }
    };
    let a = p.a_max * (1.0 - free_term - interaction);
    a.max(-max_decel).min(p.a_max)
}

/// Steady-state gap of a follower cruising at the leader's constant speed.
pub fn idm_equilibrium_gap(v: f64, p: &IdmParams) -> f64 {
    (p.s0 + v * p.time_headway) / (1.0 - (v / p.v0).powf(p.delta)).sqrt()
}

// ---------------------------------------------------------------------------
// comfort and reward

pub fn comfort_by_hand(accel: f64, executed: Action, threshold: f64) -> u8 {
    if executed == Action::EmergencyStop {
        0
    } else if executed == Action::ChangeLeft || executed == Action::ChangeRight {
        1
    } else if accel.abs() >= threshold {
        2
    } else {
        3
    }
}

/// (mean speed, mean comfort, reward) over every vehicle that is not an
/// obstacle.
pub fn reward_by_hand(w: &WorldState, executed: &[Action], weight: f64, threshold: f64) -> (f64, f64, f64) {
    let moving: Vec<&VehicleState> = w.vehicles.iter().filter(|v| v.kind != VehicleKind::Obstacle).collect();
    if moving.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = moving.len() as f64;
    let v_bar = moving.iter().rev().map(|v| v.velocity).sum::<f64>() / n;
    let c_bar = moving
        .iter()
        .map(|v| comfort_by_hand(v.accel, executed[v.id], threshold) as f64)
        .sum::<f64>()
        / n;
    (v_bar, c_bar, weight * v_bar + c_bar)
}

// ---------------------------------------------------------------------------
// shield reference: worst-case rollout sampled at dt / 10

pub const SUBSTEPS: usize = 10;
/// Largest amount by which a gap sampled every dt / 10 can overstate the
/// true minimum between samples at these accelerations.
pub const SAMPLING_SLACK: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reference {
    Safe,
    Unsafe,
    /// The sampled minimum is within the sampling slack of the threshold.
    TooClose,
}

impl Reference {
    fn and(self, other: Reference) -> Reference {
        match (self, other) {
            (Reference::Unsafe, _) | (_, Reference::Unsafe) => Reference::Unsafe,
            (Reference::TooClose, _) | (_, Reference::TooClose) => Reference::TooClose,
            _ => Reference::Safe,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Body {
    x: f64,
    v: f64,
}

impl Body {
    /// Constant acceleration for `h` seconds, stopping rather than reversing.
    fn drive(&mut self, a: f64, h: f64) {
        let v_end = self.v + a * h;
        if v_end < 0.0 {
            self.x += self.v * self.v / (2.0 * -a);
            self.v = 0.0;
        } else {
            self.x += self.v * h + 0.5 * a * h * h;
            self.v = v_end;
        }
    }
}

fn grade(gap: f64, d_s: f64) -> Reference {
    if gap <= d_s {
        Reference::Unsafe
    } else if gap <= d_s + SAMPLING_SLACK {
        Reference::TooClose
    } else {
        Reference::Safe
    }
}

struct Ahead {
    id: VehicleId,
    body: Body,
    length: f64,
    lanes: Vec<usize>,
}

fn step_count(seconds: f64, dt: f64) -> usize {
    (seconds / dt).round().max(1.0) as usize
}

/// Roll vehicle `i` forward on the lane plan (from, to, steps left in the
/// change) while the nearest vehicles ahead in those lanes brake as hard as
/// allowed. Returns the grade and the ego's first-step acceleration.
#[allow(clippy::too_many_arguments)]
fn rollout(
    w: &WorldState,
    i: VehicleId,
    from: usize,
    to: usize,
    mut remaining: usize,
    traffic: &TrafficParams,
    safety: &SafetyParams,
    dt: f64,
) -> (Reference, f64) {
    let me = w.vehicle(i);
    let p = if me.kind == VehicleKind::Cav {
        &traffic.cav
    } else {
        &traffic.hdv
    };
    let mut ahead: Vec<Ahead> = Vec::new();
    let mut watched = vec![from];
    if to != from {
        watched.push(to);
    }
    for lane in watched {
        let Some(j) = successor(w, i, &|v| in_lane(v, lane)) else {
            continue;
        };
        if ahead.iter().any(|a| a.id == j) {
            continue;
        }
        let o = w.vehicle(j);
        ahead.push(Ahead {
            id: j,
            body: Body {
                x: forward_distance(w, i, j),
                v: o.velocity,
            },
            length: o.vehicle_length,
            lanes: lanes_of(o),
        });
    }
    let h = dt / SUBSTEPS as f64;
    let mut ego = Body { x: 0.0, v: me.velocity };
    let mut result = Reference::Safe;
    let mut first = None;
    for _ in 0..step_count(safety.check_horizon, dt) {
        let ego_lanes: Vec<usize> = if remaining > 0 && from != to {
            vec![from, to]
        } else {
            vec![to]
        };
        let relevant: Vec<usize> = (0..ahead.len())
            .filter(|&k| ahead[k].lanes.iter().any(|l| ego_lanes.contains(l)))
            .collect();
        let nearest = relevant
            .iter()
            .map(|&k| (ahead[k].body.x - ahead[k].length - ego.x, ahead[k].body.v))
            .min_by(|a, b| a.0.total_cmp(&b.0));
        if nearest.is_some_and(|(gap, _)| gap <= 0.0) {
            return (Reference::Unsafe, -safety.b_emergency);
        }
        let a = idm(ego.v, nearest, p, safety.b_emergency);
        first.get_or_insert(a);
        for sub in 0..=SUBSTEPS {
            if sub > 0 {
                ego.drive(a, h);
                for o in ahead.iter_mut() {
                    o.body.drive(-safety.b_leader_worst, h);
                }
            }
            for &k in &relevant {
                result = result.and(grade(ahead[k].body.x - ahead[k].length - ego.x, safety.d_s));
            }
            if result == Reference::Unsafe {
                return (result, a);
            }
        }
        remaining = remaining.saturating_sub(1);
        if ego.v < 1e-9 {
            break;
        }
    }
    (result, first.unwrap_or(0.0))
}

/// A non-CAV vehicle behind the ego in the target lane: it accelerates flat
/// out for one step and then brakes, while the ego applies its first-step
/// acceleration and then brakes as hard as a worst-case leader.
fn rear_check(
    w: &WorldState,
    i: VehicleId,
    j: VehicleId,
    ego_first: f64,
    traffic: &TrafficParams,
    safety: &SafetyParams,
    dt: f64,
) -> Reference {
    let (me, f) = (w.vehicle(i), w.vehicle(j));
    let (push, brake) = match f.kind {
        VehicleKind::Obstacle => (0.0, 0.0),
        VehicleKind::Cav => (traffic.cav.a_max, safety.b_emergency),
        VehicleKind::Hdv => (traffic.hdv.a_max, safety.b_emergency),
    };
    let mut lead = Body {
        x: forward_distance(w, j, i),
        v: me.velocity,
    };
    let mut back = Body { x: 0.0, v: f.velocity };
    let h = dt / SUBSTEPS as f64;
    let mut result = Reference::Safe;
    for step in 0..step_count(safety.check_horizon, dt) {
        let (a_lead, a_back) = if step == 0 {
            (ego_first, push)
        } else {
            (-safety.b_leader_worst, -brake)
        };
        for sub in 0..=SUBSTEPS {
            if sub > 0 {
                lead.drive(a_lead, h);
                back.drive(a_back, h);
            }
            result = result.and(grade(lead.x - me.vehicle_length - back.x, safety.d_s));
            if result == Reference::Unsafe {
                return result;
            }
        }
        if back.v < 1e-9 {
            break;
        }
    }
    result
}

fn lane_change_steps(traffic: &TrafficParams, dt: f64) -> usize {
    step_count(traffic.lane_change.duration, dt)
}

/// Reference verdict for vehicle `i` (not mid-change) taking `action`.
pub fn reference_is_safe(
    w: &WorldState,
    i: VehicleId,
    action: Action,
    traffic: &TrafficParams,
    safety: &SafetyParams,
    dt: f64,
) -> Reference {
    let lane = w.vehicle(i).lane;
    let target = match action {
        Action::KeepLane => lane,
        Action::ChangeLeft if lane > 0 => lane - 1,
        Action::ChangeRight if lane + 1 < w.road.num_lanes => lane + 1,
        _ => return Reference::Unsafe,
    };
    let steps = if target == lane {
        0
    } else {
        lane_change_steps(traffic, dt)
    };
    let (own, first) = rollout(w, i, lane, target, steps, traffic, safety, dt);
    if own == Reference::Unsafe || target == lane {
        return own;
    }
    let Some(j) = predecessor(w, i, &|v| in_lane(v, target)) else {
        return own;
    };
    let rear = if w.vehicle(j).kind == VehicleKind::Cav {
        // the CAV behind must still pass its own check with the ego cutting in
        let mut cut = w.clone();
        cut.vehicles[i].maneuver = Some(LaneChange {
            from: lane,
            to: target,
            elapsed: 0,
            total: lane_change_steps(traffic, dt) as u32,
        });
        let f = cut.vehicle(j);
        let (from, to, left) = match f.maneuver {
            Some(m) => (m.from, m.to, (m.total - m.elapsed) as usize),
            None => (f.lane, f.lane, 0),
        };
        rollout(&cut, j, from, to, left, traffic, safety, dt).0
    } else {
        rear_check(w, i, j, first, traffic, safety, dt)
    };
    own.and(rear)
}

/// Reference shield: the proposal if safe, else KL, CL, CR in order, else ES,
/// with the list of rejected actions. `None` when a deciding check landed
/// within the sampling slack.
pub fn reference_phi(
    w: &WorldState,
    i: VehicleId,
    proposed: Action,
    traffic: &TrafficParams,
    safety: &SafetyParams,
    dt: f64,
) -> Option<(Action, Vec<Action>)> {
    let mut order = vec![proposed];
    order.extend(
        [Action::KeepLane, Action::ChangeLeft, Action::ChangeRight]
            .into_iter()
            .filter(|&a| a != proposed),
    );
    let mut tried = Vec::new();
    for a in order {
        match reference_is_safe(w, i, a, traffic, safety, dt) {
            Reference::Safe => return Some((a, tried)),
            Reference::Unsafe => tried.push(a),
            Reference::TooClose => return None,
        }
    }
    Some((Action::EmergencyStop, tried))
}
