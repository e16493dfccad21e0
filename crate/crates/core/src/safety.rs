//! The safe-action predicate and the shield that maps every proposed action to
//! an executed one.
//!
//! `is_safe` rolls the ego forward under its own controller while the relevant
//! vehicles ahead brake as hard as they can. Accelerations are held constant
//! for a whole step, exactly as in the simulator, and the gap is checked over
//! each step interval in closed form, so a verdict does not depend on where
//! the step boundaries fall.

use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::error::{Error, Result};
use crate::traffic::{advance, idm_accel, TrafficParams};
use crate::world::{nearest_ahead_occupying, nearest_behind_occupying, LaneChange, VehicleId, VehicleKind, WorldState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafetyParams {
    /// Minimum bumper gap to keep to any vehicle ahead.
    pub d_s: f64,
    pub b_emergency: f64,
    pub b_leader_worst: f64,
    pub check_horizon: f64,
}

impl Default for SafetyParams {
    fn default() -> Self {
        SafetyParams {
            d_s: 18.5,
            b_emergency: 8.0,
            b_leader_worst: 8.0,
            check_horizon: 10.0,
        }
    }
}

impl SafetyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_s > 0.0) {
            return Err(Error::invariant("safety.d_s", "d_s > 0"));
        }
        if !(self.b_emergency > 0.0 && self.b_leader_worst > 0.0) {
            return Err(Error::invariant("safety", "decelerations > 0"));
        }
        if !(self.check_horizon > 0.0) {
            return Err(Error::invariant("safety.check_horizon", "check_horizon > 0"));
        }
        Ok(())
    }

    fn horizon_steps(&self, dt: f64) -> usize {
        ((self.check_horizon / dt - 1e-9).ceil() as usize).max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SafetyVerdict {
    pub executed: Action,
    pub proposed: Action,
    pub overridden: bool,
    /// Actions found unsafe before `executed` was chosen, in test order.
    pub tried: Vec<Action>,
}

/// Position and speed along the road, relative to some origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kinematics {
    pub x: f64,
    pub v: f64,
}

impl Kinematics {
    fn at(self, a: f64, t: f64) -> Kinematics {
        let (dx, v) = advance(self.v, a, t);
        Kinematics { x: self.x + dx, v }
    }

    fn stop_time(self, a: f64) -> Option<f64> {
        (a < 0.0).then(|| self.v / -a)
    }
}

/// Smallest bumper gap `lead.x - lead_len - follow.x` over `[0, h]` when both
/// hold constant accelerations and stop rather than reverse.
pub fn min_gap_over_step(
    lead: Kinematics,
    a_lead: f64,
    lead_len: f64,
    follow: Kinematics,
    a_follow: f64,
    h: f64,
) -> f64 {
    let gap_at = |t: f64| lead.at(a_lead, t).x - lead_len - follow.at(a_follow, t).x;
    let mut cuts = vec![0.0, h];
    for t in [lead.stop_time(a_lead), follow.stop_time(a_follow)]
        .into_iter()
        .flatten()
    {
        if t > 0.0 && t < h {
            cuts.push(t);
        }
    }
    cuts.sort_by(f64::total_cmp);
    let mut best = f64::INFINITY;
    for w in cuts.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        best = best.min(gap_at(t0)).min(gap_at(t1));
        let (l0, f0) = (lead.at(a_lead, t0), follow.at(a_follow, t0));
        let accel = |k: Kinematics, a: f64| if a < 0.0 && k.v <= 0.0 { 0.0 } else { a };
        let rel_accel = accel(l0, a_lead) - accel(f0, a_follow);
        let rel_speed = l0.v - f0.v;
        if rel_accel > 0.0 {
            let t = t0 - rel_speed / rel_accel;
            if t > t0 && t < t1 {
                best = best.min(gap_at(t));
            }
        }
    }
    best
}

/// A vehicle ahead of the ego in the shield's worst-case rollout.
#[derive(Clone, Copy, Debug)]
struct Obstruction {
    state: Kinematics,
    length: f64,
    lanes: (usize, Option<usize>),
}

fn occupies(lanes: (usize, Option<usize>), lane: usize) -> bool {
    lanes.0 == lane || lanes.1 == Some(lane)
}

fn overlaps(a: (usize, Option<usize>), b: (usize, Option<usize>)) -> bool {
    occupies(b, a.0) || a.1.is_some_and(|l| occupies(b, l))
}

/// Lateral plan of the ego during the rollout.
#[derive(Clone, Copy, Debug)]
struct LanePlan {
    from: usize,
    to: usize,
    remaining: u32,
}

impl LanePlan {
    fn lanes(&self) -> (usize, Option<usize>) {
        if self.remaining == 0 || self.from == self.to {
            (self.to, None)
        } else {
            (self.from, Some(self.to))
        }
    }

    fn tick(&mut self) {
        self.remaining = self.remaining.saturating_sub(1);
    }
}

/// Outcome of the ego's worst-case rollout: whether it stayed clear, and the
/// acceleration it applied over the first step.
struct Rollout {
    clear: bool,
    first_accel: f64,
}

fn roll_out(
    world: &WorldState,
    i: VehicleId,
    mut plan: LanePlan,
    traffic: &TrafficParams,
    safety: &SafetyParams,
    dt: f64,
) -> Rollout {
    let me = world.vehicle(i);
    let idm = traffic.idm_for(me.kind);
    let mut lanes_of_interest = vec![plan.from];
    if plan.to != plan.from {
        lanes_of_interest.push(plan.to);
    }
    let mut seen: Vec<VehicleId> = Vec::new();
    let mut ahead: Vec<Obstruction> = Vec::new();
    for lane in lanes_of_interest {
        let Some(j) = nearest_ahead_occupying(world, i, lane) else {
            continue;
        };
        if seen.contains(&j) {
            continue;
        }
        seen.push(j);
        let other = world.vehicle(j);
        ahead.push(Obstruction {
            state: Kinematics {
                x: world.ahead_offset(i, j).expect("nearest ahead is ahead"),
                v: other.velocity,
            },
            length: other.vehicle_length,
            lanes: other.occupied_lanes(),
        });
    }

    let mut ego = Kinematics { x: 0.0, v: me.velocity };
    let mut first_accel = None;
    for _ in 0..safety.horizon_steps(dt) {
        let lanes = plan.lanes();
        let relevant: Vec<&Obstruction> = ahead.iter().filter(|o| overlaps(lanes, o.lanes)).collect();
        let closest = relevant
            .iter()
            .map(|o| (o.state.x - o.length - ego.x, o.state.v))
            .min_by(|a, b| a.0.total_cmp(&b.0));
        let accel = match closest {
            None => idm_accel(ego.v, f64::INFINITY, 0.0, idm, safety.b_emergency),
            Some((gap, v_leader)) => idm_accel(ego.v, gap, v_leader, idm, safety.b_emergency),
        };
        let Ok(accel) = accel else {
            return Rollout {
                clear: false,
                first_accel: -safety.b_emergency,
            };
        };
        first_accel.get_or_insert(accel);
        for o in &relevant {
            let gap = min_gap_over_step(o.state, -safety.b_leader_worst, o.length, ego, accel, dt);
            if gap <= safety.d_s {
                return Rollout {
                    clear: false,
                    first_accel: accel,
                };
            }
        }
        ego = ego.at(accel, dt);
        for o in &mut ahead {
            o.state = o.state.at(-safety.b_leader_worst, dt);
        }
        plan.tick();
        if ego.v == 0.0 {
            break;
        }
    }
    Rollout {
        clear: true,
        first_accel: first_accel.unwrap_or(0.0),
    }
}

/// Whether a follower could still stop more than `d_s` behind a leader when
/// the follower accelerates flat out for one step and then brakes at
/// `b_emergency`, while the leader follows `leader_first_accel` for one step
/// and then brakes at `b_leader_worst`.
fn follower_clear(
    leader: Kinematics,
    leader_len: f64,
    leader_first_accel: f64,
    follower: Kinematics,
    follower_first_accel: f64,
    follower_brake: f64,
    safety: &SafetyParams,
    dt: f64,
) -> bool {
    let (mut lead, mut follow) = (leader, follower);
    let (mut a_lead, mut a_follow) = (leader_first_accel, follower_first_accel);
    for _ in 0..safety.horizon_steps(dt) {
        if min_gap_over_step(lead, a_lead, leader_len, follow, a_follow, dt) <= safety.d_s {
            return false;
        }
        lead = lead.at(a_lead, dt);
        follow = follow.at(a_follow, dt);
        if follow.v == 0.0 {
            return true;
        }
        a_lead = -safety.b_leader_worst;
        a_follow = -follower_brake;
    }
    true
}

fn follower_profile(world: &WorldState, j: VehicleId, traffic: &TrafficParams, safety: &SafetyParams) -> (f64, f64) {
    let f = world.vehicle(j);
    match f.kind {
        VehicleKind::Obstacle => (0.0, 0.0),
        kind => (traffic.idm_for(kind).a_max, safety.b_emergency),
    }
}

/// Whether CAV `follower` still passes its own shield check once vehicle
/// `i` starts moving into lane `target` in front of it.
pub fn cut_in_keeps_follower_safe(
    world: &WorldState,
    i: VehicleId,
    target: usize,
    follower: VehicleId,
    traffic: &TrafficParams,
    safety: &SafetyParams,
    dt: f64,
) -> bool {
    let mut w = world.clone();
    let me = &mut w.vehicles[i];
    if !me.is_maneuvering() {
        me.maneuver = Some(LaneChange {
            from: me.lane,
            to: target,
            elapsed: 0,
            total: traffic.lane_change_steps(dt),
        });
    }
    maneuver_is_safe(&w, follower, traffic, safety, dt)
}

/// The safe-action predicate for a vehicle that is not mid-change.
pub fn is_safe(
    world: &WorldState,
    i: VehicleId,
    action: Action,
    traffic: &TrafficParams,
    safety: &SafetyParams,
    dt: f64,
) -> bool {
    let me = world.vehicle(i);
    let steps = traffic.lane_change_steps(dt);
    let target = match action {
        Action::KeepLane => me.lane,
        Action::ChangeLeft | Action::ChangeRight => match action.target_lane(me.lane, world.road.num_lanes) {
            Some(t) => t,
            None => return false,
        },
        Action::EmergencyStop => return false,
    };
    let plan = LanePlan {
        from: me.lane,
        to: target,
        remaining: if target == me.lane { 0 } else { steps },
    };
    let rollout = roll_out(world, i, plan, traffic, safety, dt);
    if !rollout.clear {
        return false;
    }
    if target == me.lane {
        return true;
    }
    match nearest_behind_occupying(world, i, target) {
        None => true,
        Some(j) if world.vehicle(j).kind == VehicleKind::Cav => {
            cut_in_keeps_follower_safe(world, i, target, j, traffic, safety, dt)
        }
        Some(j) => {
            let offset = world.behind_offset(i, j).expect("nearest behind is behind");
            let (accel, brake) = follower_profile(world, j, traffic, safety);
            follower_clear(
                Kinematics {
                    x: offset,
                    v: me.velocity,
                },
                me.vehicle_length,
                rollout.first_accel,
                Kinematics {
                    x: 0.0,
                    v: world.vehicle(j).velocity,
                },
                accel,
                brake,
                safety,
                dt,
            )
        }
    }
}

/// Whether a vehicle mid-change can keep going with its maneuver.
pub fn maneuver_is_safe(
    world: &WorldState,
    i: VehicleId,
    traffic: &TrafficParams,
    safety: &SafetyParams,
    dt: f64,
) -> bool {
    let me = world.vehicle(i);
    let Some(m) = me.maneuver else {
        return is_safe(world, i, Action::KeepLane, traffic, safety, dt);
    };
    let plan = LanePlan {
        from: m.from,
        to: m.to,
        remaining: m.total - m.elapsed,
    };
    roll_out(world, i, plan, traffic, safety, dt).clear
}

/// The safe action mapping: keep the proposal if it is safe, otherwise the
/// first safe action in KL, CL, CR order, otherwise emergency stop.
pub fn phi(
    world: &WorldState,
    i: VehicleId,
    proposed: Action,
    traffic: &TrafficParams,
    safety: &SafetyParams,
    dt: f64,
) -> SafetyVerdict {
    let mut tried = Vec::new();
    let candidates = std::iter::once(proposed).chain(Action::POLICY.into_iter().filter(|&a| a != proposed));
    for a in candidates {
        if a == Action::EmergencyStop {
            continue;
        }
        if is_safe(world, i, a, traffic, safety, dt) {
            return SafetyVerdict {
                executed: a,
                proposed,
                overridden: a != proposed,
                tried,
            };
        }
        tried.push(a);
    }
    SafetyVerdict {
        executed: Action::EmergencyStop,
        proposed,
        overridden: proposed != Action::EmergencyStop,
        tried,
    }
}

/// Shield a CAV in whatever state it is in. A vehicle that is braking in ES
/// keeps braking; one mid-change continues if that is safe and otherwise
/// brakes while finishing the change; anything else goes through `phi`.
pub fn shield(
    world: &WorldState,
    i: VehicleId,
    proposed: Action,
    traffic: &TrafficParams,
    safety: &SafetyParams,
    dt: f64,
) -> SafetyVerdict {
    let me = world.vehicle(i);
    let forced = |executed: Action| SafetyVerdict {
        executed,
        proposed,
        overridden: executed != proposed,
        tried: Vec::new(),
    };
    if me.current_action == Action::EmergencyStop && me.velocity > 0.0 {
        return forced(Action::EmergencyStop);
    }
    if me.is_maneuvering() {
        let ongoing = me.current_action;
        if ongoing != Action::EmergencyStop && maneuver_is_safe(world, i, traffic, safety, dt) {
            return forced(ongoing);
        }
        return forced(Action::EmergencyStop);
    }
    phi(world, i, proposed, traffic, safety, dt)
}

/// The no-shield ablation: every proposal executes as is.
pub fn identity(proposed: Action) -> SafetyVerdict {
    SafetyVerdict {
        executed: proposed,
        proposed,
        overridden: false,
        tried: Vec::new(),
    }
}
