//! Shaping and event rewards for the three maneuver policies and the
//! commander.
//!
//! Per-step ranges with at most one shot and one event per step:
//!
//! | reward    | range            |
//! |-----------|------------------|
//! | engage    | `[-5.1, 0.05]`   |
//! | attack    | `[-5.1, 10.05]`  |
//! | defend    | `[-5.1, 0.1]`    |
//! | commander | `[-5, 5]`        |
//!
//! The defend range assumes a per-step distance change of at most `0.1 d_m`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConstants {
    pub shoot_penalty: f64,
    pub event_penalty: f64,
    pub posture_scale: f64,
    /// Kill reward range for the attack policy.
    pub attack_kill_range: (f64, f64),
    /// Kill reward range for the commander.
    pub commander_kill_range: (f64, f64),
    /// Gaussian widths, degrees.
    pub aspect_width_deg: f64,
    pub antenna_width_deg: f64,
    pub roll_width_deg: f64,
    /// Meters.
    pub shooting_range: f64,
    pub distance_width: f64,
}

impl Default for RewardConstants {
    fn default() -> Self {
        Self {
            shoot_penalty: -0.1,
            event_penalty: -5.0,
            posture_scale: 0.05,
            attack_kill_range: (1.0, 10.0),
            commander_kill_range: (1.0, 5.0),
            aspect_width_deg: 10.0,
            antenna_width_deg: 10.0,
            roll_width_deg: 25.0,
            shooting_range: 3_500.0,
            distance_width: 10_000.0,
        }
    }
}

/// Reward constants converted to the working scalar, widths in radians.
#[derive(Debug, Clone, Copy)]
pub struct Rewards<T> {
    pub shoot_penalty: T,
    pub event_penalty: T,
    pub posture_scale: T,
    pub attack_kill_range: (T, T),
    pub commander_kill_range: (T, T),
    aspect_width: T,
    antenna_width: T,
    roll_width: T,
    shooting_range: T,
    distance_width: T,
}

impl<T: Scalar> Rewards<T> {
    pub fn new(c: &RewardConstants) -> Self {
        Self {
            shoot_penalty: T::c(c.shoot_penalty),
            event_penalty: T::c(c.event_penalty),
            posture_scale: T::c(c.posture_scale),
            attack_kill_range: (T::c(c.attack_kill_range.0), T::c(c.attack_kill_range.1)),
            commander_kill_range: (T::c(c.commander_kill_range.0), T::c(c.commander_kill_range.1)),
            aspect_width: T::c(c.aspect_width_deg.to_radians()),
            antenna_width: T::c(c.antenna_width_deg.to_radians()),
            roll_width: T::c(c.roll_width_deg.to_radians()),
            shooting_range: T::c(c.shooting_range),
            distance_width: T::c(c.distance_width),
        }
    }
}

impl<T: Scalar> Default for Rewards<T> {
    fn default() -> Self {
        Self::new(&RewardConstants::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostureComponents<T> {
    pub aspect: T,
    pub antenna: T,
    pub roll: T,
    pub distance: T,
}

impl<T: Scalar> Rewards<T> {
    pub fn posture_components(&self, aspect: T, antenna_train: T, roll: T, distance: T) -> PostureComponents<T> {
        let sq = |x: T| x * x;
        let b_a = (-sq(aspect / self.aspect_width)).exp();
        let b_t = (-sq(sq(antenna_train / self.antenna_width))).exp();
        let b_r = (-sq(roll / self.roll_width)).exp();
        let b_d = if distance <= self.shooting_range {
            T::one()
        } else {
            (-sq((distance - self.shooting_range) / self.distance_width)).exp()
        };
        PostureComponents { aspect: b_a, antenna: b_t, roll: b_r, distance: b_d }
    }

    pub fn engage_reward(&self, shots: u32, event: bool, posture: T) -> T {
        self.penalties(shots, event) + self.posture_scale * posture
    }

    pub fn attack_reward(&self, shots: u32, event: bool, kill_antenna_train: Option<T>, b: &PostureComponents<T>) -> T {
        let (lo, hi) = self.attack_kill_range;
        let kill = kill_antenna_train.map_or(T::zero(), |ata| kill_reward(ata, lo, hi));
        let relaxed = (b.aspect * b.roll * b.distance).sqrt();
        self.penalties(shots, event) + kill + self.posture_scale * relaxed
    }

    /// Potential-based retreat reward with `Φ = d / d_m`. The step on which
    /// the agent's own event fires pays no potential term.
    pub fn defend_reward(&self, d_prev: T, d_next: T, map_size: T, shots: u32, event: bool) -> T {
        let potential = if event { T::zero() } else { (d_next - d_prev) / map_size };
        self.penalties(shots, event) + potential
    }

    pub fn commander_reward(&self, event: bool, kill_antenna_train: Option<T>) -> T {
        let (lo, hi) = self.commander_kill_range;
        let e = if event { self.event_penalty } else { T::zero() };
        e + kill_antenna_train.map_or(T::zero(), |ata| kill_reward(ata, lo, hi))
    }

    fn penalties(&self, shots: u32, event: bool) -> T {
        let e = if event { self.event_penalty } else { T::zero() };
        self.shoot_penalty * T::c(shots as f64) + e
    }
}

/// Smoothed product `sqrt(b_a b_t b_r b_d)`.
pub fn posture_reward<T: Scalar>(b: &PostureComponents<T>) -> T {
    (b.aspect * b.antenna * b.roll * b.distance).sqrt()
}

/// `cos` remapped from `[-1, 1]` onto `[lo, hi]`.
pub fn kill_reward<T: Scalar>(antenna_train: T, lo: T, hi: T) -> T {
    (hi - lo) * T::half() * antenna_train.cos() + (hi + lo) * T::half()
}

/// Low-level maneuver policy roles; each has its own reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Maneuver {
    Defend,
    Engage,
    Attack,
}

impl Maneuver {
    pub const ALL: [Maneuver; 3] = [Maneuver::Defend, Maneuver::Engage, Maneuver::Attack];

    pub fn short(self) -> &'static str {
        match self {
            Maneuver::Defend => "d",
            Maneuver::Engage => "e",
            Maneuver::Attack => "a",
        }
    }
}

impl fmt::Display for Maneuver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Maneuver::Defend => "defend",
            Maneuver::Engage => "engage",
            Maneuver::Attack => "attack",
        })
    }
}

impl FromStr for Maneuver {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "defend" | "d" => Ok(Maneuver::Defend),
            "engage" | "e" => Ok(Maneuver::Engage),
            "attack" | "a" => Ok(Maneuver::Attack),
            _ => Err(format!("unknown maneuver `{s}`")),
        }
    }
}

/// Everything a per-step reward needs about one agent's transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSignals<T> {
    pub shot: bool,
    /// Crashed, left the map or was destroyed this step.
    pub event: bool,
    /// `ω_t` at the moment of a kill scored this step.
    pub kill_antenna_train: Option<T>,
    /// Posture against the nearest live enemy after the step.
    pub posture: Option<(T, T, T, T)>,
    /// Distance to the tracked enemy before and after the step.
    pub distance_change: Option<(T, T)>,
    pub map_size: T,
}

impl<T: Scalar> Rewards<T> {
    pub fn step_reward(&self, maneuver: Maneuver, s: &StepSignals<T>) -> T {
        let shots = u32::from(s.shot);
        let components = s.posture.map(|(a, t, r, d)| self.posture_components(a, t, r, d));
        match maneuver {
            Maneuver::Engage => {
                let rp = components.as_ref().map_or(T::zero(), posture_reward);
                self.engage_reward(shots, s.event, rp)
            }
            Maneuver::Attack => {
                let zero = PostureComponents { aspect: T::zero(), antenna: T::zero(), roll: T::zero(), distance: T::zero() };
                self.attack_reward(shots, s.event, s.kill_antenna_train, components.as_ref().unwrap_or(&zero))
            }
            Maneuver::Defend => {
                let (prev, next) = s.distance_change.unwrap_or((T::zero(), T::zero()));
                self.defend_reward(prev, next, s.map_size, shots, s.event)
            }
        }
    }
}
