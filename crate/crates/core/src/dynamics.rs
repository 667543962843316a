//! Rate-command point-mass flight model.
//!
//! Control channels in `[0, 1]` map to signed body rates through `2u - 1`.
//! Heading picks up a coordinated-turn term `(g / v) sin(roll)`. Speed follows
//! `throttle * max_accel - max_decel * (v / v_max)^2` and is clamped to the
//! speed envelope. Integration is semi-implicit Euler: rates and speed are
//! updated first, then position advances along the new attitude axis.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{attitude_axis, Pose};
use crate::num::{wrap_angle, Scalar};

pub const GRAVITY: f64 = 9.81;

/// Pitch is held inside this bound to keep heading well defined.
pub const PITCH_LIMIT: f64 = 85.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("unknown aircraft type `{0}`")]
    UnknownType(String),
    #[error("invalid aircraft parameters: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AircraftType {
    F16,
    A4,
}

impl AircraftType {
    pub const ALL: [AircraftType; 2] = [AircraftType::F16, AircraftType::A4];

    pub fn index(self) -> usize {
        match self {
            AircraftType::F16 => 0,
            AircraftType::A4 => 1,
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            AircraftType::F16 => "f",
            AircraftType::A4 => "a",
        }
    }
}

impl fmt::Display for AircraftType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AircraftType::F16 => "F16",
            AircraftType::A4 => "A4",
        })
    }
}

impl FromStr for AircraftType {
    type Err = DynamicsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "F16" | "F-16" => Ok(AircraftType::F16),
            "A4" | "A-4" => Ok(AircraftType::A4),
            _ => Err(DynamicsError::UnknownType(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AircraftParams<T> {
    pub v_min: T,
    pub v_max: T,
    pub max_roll_rate: T,
    pub max_pitch_rate: T,
    pub max_yaw_rate: T,
    pub max_accel: T,
    pub max_decel: T,
    pub min_altitude: T,
    pub max_altitude: T,
    pub type_tag: AircraftType,
}

impl<T: Scalar> AircraftParams<T> {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.v_min < self.v_max) || self.v_min <= T::zero() {
            return Err(DynamicsError::InvalidParams("require 0 < v_min < v_max"));
        }
        let rates = [self.max_roll_rate, self.max_pitch_rate, self.max_yaw_rate, self.max_accel, self.max_decel];
        if rates.iter().any(|r| !(*r > T::zero())) {
            return Err(DynamicsError::InvalidParams("rates and accelerations must be positive"));
        }
        if !(self.min_altitude < self.max_altitude) {
            return Err(DynamicsError::InvalidParams("require min_altitude < max_altitude"));
        }
        Ok(())
    }

    pub fn drag(&self, speed: T) -> T {
        let r = speed / self.v_max;
        self.max_decel * r * r
    }

    /// Throttle holding `speed` constant, clamped to `[0, 1]`.
    pub fn trim_throttle(&self, speed: T) -> T {
        (self.drag(speed) / self.max_accel).max(T::zero()).min(T::one())
    }
}

/// Performance preset for an aircraft type.
pub fn default_params<T: Scalar>(type_tag: AircraftType) -> AircraftParams<T> {
    let (v_max, roll, pitch, yaw, accel) = match type_tag {
        AircraftType::F16 => (600.0, 4.0, 1.2, 0.5, 30.0),
        AircraftType::A4 => (280.0, 3.0, 1.0, 0.4, 15.0),
    };
    AircraftParams {
        v_min: T::c(60.0),
        v_max: T::c(v_max),
        max_roll_rate: T::c(roll),
        max_pitch_rate: T::c(pitch),
        max_yaw_rate: T::c(yaw),
        max_accel: T::c(accel),
        max_decel: T::c(accel),
        min_altitude: T::c(50.0),
        max_altitude: T::c(15_000.0),
        type_tag,
    }
}

/// Parses a type name and returns its preset.
pub fn default_params_for<T: Scalar>(name: &str) -> Result<AircraftParams<T>, DynamicsError> {
    Ok(default_params(name.parse()?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput<T> {
    pub aileron: T,
    pub elevator: T,
    pub rudder: T,
    pub throttle: T,
    pub shoot: bool,
}

impl<T: Scalar> ControlInput<T> {
    /// Centered sticks, given throttle, no fire.
    pub fn neutral(throttle: T) -> Self {
        let h = T::half();
        Self { aileron: h, elevator: h, rudder: h, throttle, shoot: false }
    }

    pub fn from_channels(channels: [T; 4], shoot: bool) -> Self {
        let c = |x: T| x.max(T::zero()).min(T::one());
        Self { aileron: c(channels[0]), elevator: c(channels[1]), rudder: c(channels[2]), throttle: c(channels[3]), shoot }
    }

    pub fn channels(&self) -> [T; 4] {
        [self.aileron, self.elevator, self.rudder, self.throttle]
    }

    /// Copy with every channel clamped into `[0, 1]`.
    pub fn clamped(&self) -> Self {
        Self::from_channels(self.channels(), self.shoot)
    }
}

fn signed<T: Scalar>(u: T) -> T {
    let u = u.max(T::zero()).min(T::one());
    T::two() * u - T::one()
}

/// Advances one aircraft by `dt` seconds. Deterministic.
pub fn step_dynamics<T: Scalar>(state: &Pose<T>, params: &AircraftParams<T>, u: &ControlInput<T>, dt: T) -> Pose<T> {
    let speed = state.speed().max(params.v_min).min(params.v_max);

    let roll_rate = signed(u.aileron) * params.max_roll_rate;
    let pitch_rate = signed(u.elevator) * params.max_pitch_rate;
    let k_turn = T::c(GRAVITY) / speed;
    let yaw_rate = signed(u.rudder) * params.max_yaw_rate + k_turn * state.roll.sin();

    let throttle = u.throttle.max(T::zero()).min(T::one());
    let accel = throttle * params.max_accel - params.drag(speed);
    let new_speed = (speed + accel * dt).max(params.v_min).min(params.v_max);

    let limit = T::c(PITCH_LIMIT);
    let roll = wrap_angle(state.roll + roll_rate * dt);
    let pitch = (state.pitch + pitch_rate * dt).max(-limit).min(limit);
    let heading = wrap_angle(state.heading + yaw_rate * dt);

    let velocity = attitude_axis(heading, pitch) * new_speed;
    Pose { position: state.position + velocity * dt, velocity, roll, pitch, heading }
}
