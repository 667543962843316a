//! Hierarchical multi-agent reinforcement learning for within-visual-range
//! air combat.
//!
//! The math layers ([`geometry`], [`dynamics`], [`rewards`], [`netlib`],
//! [`optim`]) are generic over [`Scalar`]; the simulation and training
//! pipeline run on `f64` through the aliases below.

// negated comparisons below reject NaN on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod environment;
pub mod evalcli;
pub mod geometry;
pub mod hierarchy;
pub mod netlib;
pub mod num;
pub mod optim;
pub mod rewards;
pub mod training;

pub use num::Scalar;

pub type Real = f64;
pub type Pose64 = geometry::Pose<f64>;
pub type Pose32 = geometry::Pose<f32>;
pub type Vec3d = geometry::Vec3<f64>;
pub type Params64 = dynamics::AircraftParams<f64>;
pub type Control64 = dynamics::ControlInput<f64>;
