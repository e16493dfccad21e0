//! Time-stepped vehicle dynamics: IDM car following, lane-change kinematics,
//! human-driver gap acceptance and collision detection.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::error::{Error, Result};
use crate::safety::{self, SafetyParams};
use crate::world::{
    nearest_ahead_occupying, nearest_behind_occupying, wrap_pos, LaneChange, VehicleId, VehicleKind, WorldState,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdmParams {
    pub v0: f64,
    pub time_headway: f64,
    pub a_max: f64,
    pub b_comf: f64,
    pub s0: f64,
    pub delta: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        IdmParams {
            v0: 30.0,
            time_headway: 1.5,
            a_max: 2.0,
            b_comf: 2.0,
            s0: 2.0,
            delta: 4.0,
        }
    }
}

impl IdmParams {
    /// Longitudinal controller used by CAVs. Same law as the human model, but
    /// the jam distance sits well beyond the 18.5 m safety distance and
    /// braking starts earlier and gentler, so steady car following passes the
    /// shield's worst-case check at every speed. The short time headway keeps
    /// free-flow speeds on par with human drivers.
    pub fn cav_default() -> Self {
        IdmParams {
            time_headway: 0.2,
            b_comf: 1.0,
            s0: 30.0,
            ..IdmParams::default()
        }
    }

    pub fn validate(&self, key: &str) -> Result<()> {
        let positive = [
            ("v0", self.v0),
            ("time_headway", self.time_headway),
            ("a_max", self.a_max),
            ("b_comf", self.b_comf),
            ("s0", self.s0),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::invariant(&format!("{key}.{name}"), "must be positive"));
            }
        }
        if !(self.delta >= 1.0) {
            return Err(Error::invariant(&format!("{key}.delta"), "delta >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LaneChangeParams {
    pub duration: f64,
    pub accept_gap_lead: f64,
    pub accept_gap_lag: f64,
    /// Minimum acceleration gain before a human driver changes lanes.
    pub incentive_threshold: f64,
    /// Hardest braking a lane change may impose on the new lag vehicle.
    pub lag_max_decel: f64,
}

impl Default for LaneChangeParams {
    fn default() -> Self {
        LaneChangeParams {
            duration: 3.0,
            accept_gap_lead: 10.0,
            accept_gap_lag: 10.0,
            incentive_threshold: 0.2,
            lag_max_decel: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficParams {
    pub hdv: IdmParams,
    pub cav: IdmParams,
    pub lane_change: LaneChangeParams,
}

impl Default for TrafficParams {
    fn default() -> Self {
        TrafficParams {
            hdv: IdmParams::default(),
            cav: IdmParams::cav_default(),
            lane_change: LaneChangeParams::default(),
        }
    }
}

impl TrafficParams {
    pub fn validate(&self) -> Result<()> {
        self.hdv.validate("traffic.hdv")?;
        self.cav.validate("traffic.cav")?;
        let lc = &self.lane_change;
        if !(lc.duration > 0.0) {
            return Err(Error::invariant("traffic.lane_change.duration", "duration > 0"));
        }
        if !(lc.accept_gap_lead >= 0.0 && lc.accept_gap_lag >= 0.0) {
            return Err(Error::invariant("traffic.lane_change", "acceptance gaps >= 0"));
        }
        Ok(())
    }

    pub fn idm_for(&self, kind: VehicleKind) -> &IdmParams {
        match kind {
            VehicleKind::Cav => &self.cav,
            _ => &self.hdv,
        }
    }

    /// Steps a lane change takes at time step `dt`.
    pub fn lane_change_steps(&self, dt: f64) -> u32 {
        // The epsilon absorbs 3.0 / 0.1 = 30.000000000000004.
        ((self.lane_change.duration / dt - 1e-9).ceil() as u32).max(1)
    }
}

/// IDM acceleration, clamped below at `-max_decel`.
///
/// `gap = f64::INFINITY` means free road. The dynamic part of the desired gap
/// is floored at zero so a much faster leader never produces braking.
pub fn idm_accel(v: f64, gap: f64, v_leader: f64, p: &IdmParams, max_decel: f64) -> Result<f64> {
    if !(gap > 0.0) {
        return Err(Error::NonPositiveGap(gap));
    }
    let free = (v / p.v0).powf(p.delta);
    let interaction = if gap.is_infinite() {
        0.0
    } else {
        let dynamic = v * p.time_headway + v * (v - v_leader) / (2.0 * (p.a_max * p.b_comf).sqrt());
        let desired = p.s0 + dynamic.max(0.0);
        (desired / gap).powi(2)
    };
    Ok((p.a_max * (1.0 - free - interaction)).clamp(-max_decel, p.a_max))
}

/// Constant-acceleration update over `dt` that stops at zero speed instead of
/// reversing. Returns (distance travelled, new speed).
pub fn advance(v: f64, a: f64, dt: f64) -> (f64, f64) {
    if a < 0.0 && v + a * dt < 0.0 {
        (v * v / (2.0 * -a), 0.0)
    } else {
        (v * dt + 0.5 * a * dt * dt, v + a * dt)
    }
}

/// Acceleration vehicle `i` applies this step given its committed action.
pub fn commanded_accel(world: &WorldState, i: VehicleId, traffic: &TrafficParams, safety: &SafetyParams) -> f64 {
    let me = world.vehicle(i);
    if me.kind == VehicleKind::Obstacle {
        return 0.0;
    }
    if me.current_action == Action::EmergencyStop {
        return if me.velocity > 0.0 { -safety.b_emergency } else { 0.0 };
    }
    let p = traffic.idm_for(me.kind);
    let (gap, v_leader) = match world.leading_vehicle(i) {
        Some((j, gap)) => (gap, world.vehicle(j).velocity),
        None => (f64::INFINITY, 0.0),
    };
    idm_accel(me.velocity, gap, v_leader, p, safety.b_emergency).unwrap_or(-safety.b_emergency)
}

/// Gap-acceptance lane choice of a human driver.
///
/// A change needs an existing target lane, an acceptable lead and lag gap, and
/// an IDM acceleration gain of at least the incentive threshold. When the lag
/// vehicle is a CAV, its own keep-lane check must still pass after the cut-in,
/// so a human cut-in alone does not leave the CAV without a safe action.
pub fn hdv_decide(world: &WorldState, i: VehicleId, traffic: &TrafficParams, safety: &SafetyParams, dt: f64) -> Action {
    let me = world.vehicle(i);
    if me.kind != VehicleKind::Hdv || me.is_maneuvering() || me.current_action == Action::EmergencyStop {
        return Action::KeepLane;
    }
    let lc = &traffic.lane_change;
    let p = traffic.idm_for(me.kind);
    let accel_behind = |leader: Option<VehicleId>| -> Option<f64> {
        match leader {
            None => idm_accel(me.velocity, f64::INFINITY, 0.0, p, safety.b_emergency).ok(),
            Some(j) => {
                let gap = world.gap_ahead(i, j)?;
                idm_accel(me.velocity, gap, world.vehicle(j).velocity, p, safety.b_emergency).ok()
            }
        }
    };
    let Some(current) = accel_behind(nearest_ahead_occupying(world, i, me.lane)) else {
        return Action::KeepLane;
    };

    let mut best: Option<(f64, Action)> = None;
    for action in [Action::ChangeLeft, Action::ChangeRight] {
        let Some(target) = action.target_lane(me.lane, world.road.num_lanes) else {
            continue;
        };
        let lead = nearest_ahead_occupying(world, i, target);
        let lag = nearest_behind_occupying(world, i, target);
        let lead_gap = lead.map_or(f64::INFINITY, |j| world.gap_ahead(i, j).unwrap_or(f64::NEG_INFINITY));
        let lag_gap = lag.map_or(f64::INFINITY, |j| world.gap_behind(i, j).unwrap_or(f64::NEG_INFINITY));
        if lead_gap < lc.accept_gap_lead || lag_gap < lc.accept_gap_lag {
            continue;
        }
        if let Some(j) = lag {
            let lag_vehicle = world.vehicle(j);
            let lag_accel = idm_accel(
                lag_vehicle.velocity,
                lag_gap,
                me.velocity,
                traffic.idm_for(lag_vehicle.kind),
                safety.b_emergency,
            );
            if !lag_accel.is_ok_and(|a| a >= -lc.lag_max_decel) {
                continue;
            }
            if lag_vehicle.kind == VehicleKind::Cav
                && !safety::cut_in_keeps_follower_safe(world, i, target, j, traffic, safety, dt)
            {
                continue;
            }
        }
        let Some(candidate) = accel_behind(lead) else {
            continue;
        };
        let gain = candidate - current;
        if gain >= lc.incentive_threshold && best.is_none_or(|(g, _)| gain > g) {
            best = Some((gain, action));
        }
    }
    best.map_or(Action::KeepLane, |(_, a)| a)
}

/// Record `action` as vehicle `i`'s behavior for the coming step.
///
/// Vehicles mid-change ignore new lateral commands and only accept ES. A
/// braking ES vehicle keeps braking. A lane change toward a missing lane
/// degrades to KL.
pub fn commit_action(world: &mut WorldState, i: VehicleId, action: Action, traffic: &TrafficParams, dt: f64) {
    let num_lanes = world.road.num_lanes;
    let steps = traffic.lane_change_steps(dt);
    let v = &mut world.vehicles[i];
    if v.kind == VehicleKind::Obstacle {
        return;
    }
    if v.current_action == Action::EmergencyStop && v.velocity > 0.0 {
        return;
    }
    if v.is_maneuvering() {
        if action == Action::EmergencyStop {
            v.current_action = Action::EmergencyStop;
        }
        return;
    }
    match action {
        Action::KeepLane | Action::EmergencyStop => v.current_action = action,
        Action::ChangeLeft | Action::ChangeRight => match action.target_lane(v.lane, num_lanes) {
            Some(to) => {
                v.current_action = action;
                v.maneuver = Some(LaneChange {
                    from: v.lane,
                    to,
                    elapsed: 0,
                    total: steps,
                });
            }
            None => v.current_action = Action::KeepLane,
        },
    }
}

/// Commit every human driver's decision, in ascending id order, each seeing
/// the decisions already committed before it.
pub fn plan_hdvs(world: &WorldState, traffic: &TrafficParams, safety: &SafetyParams, dt: f64) -> WorldState {
    let mut w = world.clone();
    for i in w.ids_of(VehicleKind::Hdv) {
        let a = hdv_decide(&w, i, traffic, safety, dt);
        commit_action(&mut w, i, a, traffic, dt);
    }
    w
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepEvents {
    /// (follower, leader) pairs in a collision state after the step.
    pub collisions: Vec<(VehicleId, VehicleId)>,
    pub completed_lane_changes: Vec<VehicleId>,
    pub emergency_stops: Vec<VehicleId>,
    /// Action every vehicle executed during the step, indexed by id.
    pub executed: Vec<Action>,
}

/// Advance a world whose actions are already committed by one step.
pub fn integrate(
    world: &WorldState,
    traffic: &TrafficParams,
    safety: &SafetyParams,
    dt: f64,
) -> (WorldState, StepEvents) {
    let accels: Vec<f64> = (0..world.vehicles.len())
        .map(|i| commanded_accel(world, i, traffic, safety))
        .collect();
    let mut next = world.clone();
    let mut events = StepEvents {
        executed: world.vehicles.iter().map(|v| v.current_action).collect(),
        ..StepEvents::default()
    };
    let width = world.road.lane_width;
    for (v, &a) in next.vehicles.iter_mut().zip(&accels) {
        if v.kind == VehicleKind::Obstacle {
            continue;
        }
        if v.current_action == Action::EmergencyStop {
            events.emergency_stops.push(v.id);
        }
        let (dx, speed) = advance(v.velocity, a, dt);
        v.longitudinal_pos = wrap_pos(v.longitudinal_pos + dx, &world.road);
        v.velocity = speed;
        v.accel = a;

        if let Some(mut m) = v.maneuver {
            m.elapsed += 1;
            if 2 * m.elapsed >= m.total {
                v.lane = m.to;
            }
            if m.elapsed >= m.total {
                v.maneuver = None;
                v.lateral_offset = 0.0;
                v.heading = 0.0;
                if v.current_action != Action::EmergencyStop {
                    v.current_action = Action::KeepLane;
                }
                events.completed_lane_changes.push(v.id);
            } else {
                let dir = m.direction();
                v.lateral_offset = (v.lane as f64 - m.from as f64 - m.progress() * dir) * width;
                let lateral_speed = -dir * width / (m.total as f64 * dt);
                v.heading = lateral_speed.atan2(v.velocity);
                v.maneuver = Some(m);
            }
        }
        if v.current_action == Action::EmergencyStop && v.velocity == 0.0 && v.maneuver.is_none() {
            v.current_action = Action::KeepLane;
        }
    }
    next.time += 1;
    events.collisions = detect_collisions(&next);
    (next, events)
}

/// One full transition: human decisions, CAV commands (ascending id), then
/// integration. CAVs missing from `actions` keep their lane.
pub fn step(
    world: &WorldState,
    actions: &BTreeMap<VehicleId, Action>,
    traffic: &TrafficParams,
    safety: &SafetyParams,
    dt: f64,
) -> (WorldState, StepEvents) {
    let mut w = plan_hdvs(world, traffic, safety, dt);
    for i in w.cav_ids() {
        let a = actions.get(&i).copied().unwrap_or(Action::KeepLane);
        commit_action(&mut w, i, a, traffic, dt);
    }
    integrate(&w, traffic, safety, dt)
}

/// Every pair sharing a lane whose bumper gap is not positive, as
/// (follower, leader), sorted and without duplicates.
pub fn detect_collisions(world: &WorldState) -> Vec<(VehicleId, VehicleId)> {
    let max_len = world.vehicles.iter().map(|v| v.vehicle_length).fold(0.0, f64::max);
    let mut found = BTreeSet::new();
    for lane in 0..world.road.num_lanes {
        let mut members: Vec<VehicleId> = world
            .vehicles
            .iter()
            .filter(|v| v.occupies(lane))
            .map(|v| v.id)
            .collect();
        members.sort_by(|&a, &b| {
            let (va, vb) = (world.vehicle(a), world.vehicle(b));
            va.longitudinal_pos.total_cmp(&vb.longitudinal_pos).then(a.cmp(&b))
        });
        let m = members.len();
        for (idx, &a) in members.iter().enumerate() {
            for step in 1..m {
                let next = idx + step;
                let b = if next < m {
                    members[next]
                } else if world.road.is_ring() {
                    members[next - m]
                } else {
                    break;
                };
                let off = world.ahead_offset(a, b).expect("sorted successor is ahead");
                if off > max_len {
                    break;
                }
                if off - world.vehicle(b).vehicle_length <= 0.0 {
                    found.insert((a, b));
                }
            }
        }
    }
    found.into_iter().collect()
}

/// Minimum bumper gap from any moving vehicle to the vehicle ahead of it in
/// a lane it occupies; +inf when no vehicle has anything ahead.
pub fn min_headway(world: &WorldState) -> f64 {
    world
        .vehicles
        .iter()
        .filter(|v| v.kind != VehicleKind::Obstacle)
        .filter_map(|v| world.leading_vehicle(v.id).map(|(_, gap)| gap))
        .fold(f64::INFINITY, f64::min)
}
