use serde::{Deserialize, Serialize};

/// Lane-level behavior of a vehicle.
///
/// Lane 0 is the leftmost lane, so `ChangeLeft` decreases the lane index.
/// `EmergencyStop` is never proposed by a policy; only the shield emits it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    #[serde(rename = "KL")]
    KeepLane,
    #[serde(rename = "CL")]
    ChangeLeft,
    #[serde(rename = "CR")]
    ChangeRight,
    #[serde(rename = "ES")]
    EmergencyStop,
}

impl Action {
    /// The policy's action set, in the shield's fallback order.
    pub const POLICY: [Action; 3] = [Action::KeepLane, Action::ChangeLeft, Action::ChangeRight];

    pub fn is_lane_change(self) -> bool {
        matches!(self, Action::ChangeLeft | Action::ChangeRight)
    }

    /// Index into the 3-way policy output; `None` for ES.
    pub fn policy_index(self) -> Option<usize> {
        match self {
            Action::KeepLane => Some(0),
            Action::ChangeLeft => Some(1),
            Action::ChangeRight => Some(2),
            Action::EmergencyStop => None,
        }
    }

    pub fn from_policy_index(index: usize) -> Action {
        Action::POLICY[index]
    }

    /// One-hot over the policy actions. ES encodes as all zeros.
    pub fn one_hot(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        if let Some(k) = self.policy_index() {
            v[k] = 1.0;
        }
        v
    }

    /// One-hot over all four actions, used for actions shared over V2V.
    pub fn one_hot4(self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[match self {
            Action::KeepLane => 0,
            Action::ChangeLeft => 1,
            Action::ChangeRight => 2,
            Action::EmergencyStop => 3,
        }] = 1.0;
        v
    }

    /// Target lane of a lane change from `lane`, if the road has one.
    pub fn target_lane(self, lane: usize, num_lanes: usize) -> Option<usize> {
        match self {
            Action::ChangeLeft => lane.checked_sub(1),
            Action::ChangeRight => (lane + 1 < num_lanes).then_some(lane + 1),
            _ => None,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Action::KeepLane => "KL",
            Action::ChangeLeft => "CL",
            Action::ChangeRight => "CR",
            Action::EmergencyStop => "ES",
        }
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}
