//! Relative geometry between aircraft: distance, attacking angles, weapon
//! engagement zone membership and feature normalization.
//!
//! Frame: `x` east, `y` north, `z` up, all in meters. Heading is measured
//! from north, clockwise positive.
//!
//! Angle convention used throughout the crate:
//!
//! * `aspect` (ω_a) is the attacker's pointing error, the angle between its
//!   body-forward axis and the line of sight to the target.
//! * `antenna_train` (ω_t) is the attacker's offset from the target's tail,
//!   the angle between the target's tail direction and the line of sight
//!   from the target back to the attacker.
//!
//! Both are zero exactly when the attacker sits on the target's six, nose on.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate geometry: coincident positions")]
    Degenerate,
    #[error("invalid normalization bounds: hi ({hi}) must exceed lo ({lo})")]
    InvalidBounds { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> Vec3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(self.y * o.z - self.z * o.y, self.z * o.x - self.x * o.z, self.x * o.y - self.y * o.x)
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn scale(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    /// Unit vector, or `None` for the zero vector.
    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        if n > T::zero() {
            Some(self.scale(n.recip()))
        } else {
            None
        }
    }

    /// Unsigned angle in `[0, pi]`, robust near both ends of the range.
    pub fn angle_to(self, o: Self) -> T {
        let c = self.cross(o).norm();
        let d = self.dot(o);
        c.atan2(d)
    }
}

impl<T: Scalar> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Scalar> AddAssign for Vec3<T> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Scalar> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Scalar> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Scalar> Mul<T> for Vec3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        self.scale(s)
    }
}

/// Kinematic and attitude state of one aircraft.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose<T> {
    pub position: Vec3<T>,
    pub velocity: Vec3<T>,
    /// Roll, radians in `[-pi, pi)`.
    pub roll: T,
    /// Pitch, radians in `(-pi/2, pi/2)`.
    pub pitch: T,
    /// Heading, radians in `[-pi, pi)`; 0 is north, clockwise positive.
    pub heading: T,
}

impl<T: Scalar> Pose<T> {
    pub fn speed(&self) -> T {
        self.velocity.norm()
    }

    /// Forward axis implied by heading and pitch alone.
    pub fn attitude_forward(&self) -> Vec3<T> {
        attitude_axis(self.heading, self.pitch)
    }

    /// Body-forward axis: velocity-aligned above 1 m/s, attitude otherwise.
    pub fn forward(&self) -> Vec3<T> {
        if self.speed() > T::one() {
            self.velocity.normalized().unwrap_or_else(|| self.attitude_forward())
        } else {
            self.attitude_forward()
        }
    }

    pub fn altitude(&self) -> T {
        self.position.z
    }
}

/// Unit vector for a heading (from north, clockwise) and pitch (up positive).
pub fn attitude_axis<T: Scalar>(heading: T, pitch: T) -> Vec3<T> {
    let cp = pitch.cos();
    Vec3::new(heading.sin() * cp, heading.cos() * cp, pitch.sin())
}

/// Geometry of a target as seen from an attacker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeGeometry<T> {
    pub distance: T,
    pub aspect: T,
    pub antenna_train: T,
    /// Positive when the pair is closing.
    pub closure_rate: T,
    /// Target altitude minus attacker altitude.
    pub altitude_delta: T,
}

pub fn relative_distance<T: Scalar>(a: &Pose<T>, b: &Pose<T>) -> T {
    (b.position - a.position).norm()
}

/// `(aspect, antenna_train)` of `target` from `attacker`'s point of view.
pub fn attack_angles<T: Scalar>(attacker: &Pose<T>, target: &Pose<T>) -> Result<(T, T), GeometryError> {
    let los = target.position - attacker.position;
    if los.norm() <= T::zero() {
        return Err(GeometryError::Degenerate);
    }
    let aspect = attacker.forward().angle_to(los);
    // tail of target vs line of sight target→attacker; both negated
    let antenna_train = (-target.forward()).angle_to(-los);
    Ok((aspect, antenna_train))
}

pub fn relative_geometry<T: Scalar>(attacker: &Pose<T>, target: &Pose<T>) -> Result<RelativeGeometry<T>, GeometryError> {
    let los = target.position - attacker.position;
    let distance = los.norm();
    let (aspect, antenna_train) = attack_angles(attacker, target)?;
    let unit = los.scale(distance.recip());
    let closure_rate = -(target.velocity - attacker.velocity).dot(unit);
    Ok(RelativeGeometry {
        distance,
        aspect,
        antenna_train,
        closure_rate,
        altitude_delta: target.position.z - attacker.position.z,
    })
}

/// Cannon engagement cone ahead of an aircraft's nose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wez<T> {
    /// Meters.
    pub range: T,
    /// Full cone width, radians. Membership uses half of it.
    pub span: T,
}

impl<T: Scalar> Default for Wez<T> {
    fn default() -> Self {
        Self { range: T::c(3_500.0), span: T::c(8.0).to_radians() }
    }
}

impl<T: Scalar> Wez<T> {
    pub fn half_angle(&self) -> T {
        self.span * T::half()
    }

    /// Membership test on precomputed distance and pointing error.
    pub fn admits(&self, distance: T, aspect: T) -> bool {
        distance <= self.range && aspect <= self.half_angle()
    }

    pub fn contains(&self, attacker: &Pose<T>, target: &Pose<T>) -> bool {
        let d = relative_distance(attacker, target);
        match attack_angles(attacker, target) {
            Ok((aspect, _)) => self.admits(d, aspect),
            Err(_) => false,
        }
    }
}

/// Membership in the default 3.5 km / 8° cone.
pub fn wez_contains<T: Scalar>(attacker: &Pose<T>, target: &Pose<T>) -> bool {
    Wez::default().contains(attacker, target)
}

/// Affine map of `[lo, hi]` onto `[-1, 1]`, clamped.
pub fn normalize_feature<T: Scalar>(raw: T, lo: T, hi: T) -> Result<T, GeometryError> {
    if !(hi > lo) {
        return Err(GeometryError::InvalidBounds { lo: lo.as_f64(), hi: hi.as_f64() });
    }
    let x = T::two() * (raw - lo) / (hi - lo) - T::one();
    Ok(x.max(-T::one()).min(T::one()))
}

/// Inverse of [`normalize_feature`] on `[-1, 1]`.
pub fn denormalize_feature<T: Scalar>(norm: T, lo: T, hi: T) -> Result<T, GeometryError> {
    if !(hi > lo) {
        return Err(GeometryError::InvalidBounds { lo: lo.as_f64(), hi: hi.as_f64() });
    }
    Ok(lo + (norm + T::one()) * T::half() * (hi - lo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn level(x: f64, y: f64, z: f64, heading: f64, speed: f64) -> Pose<f64> {
        let fwd = attitude_axis(heading, 0.0);
        Pose { position: Vec3::new(x, y, z), velocity: fwd * speed, roll: 0.0, pitch: 0.0, heading }
    }

    // acos-of-dot oracle with explicitly constructed forward vectors
    fn oracle_angles(a: &Pose<f64>, b: &Pose<f64>) -> (f64, f64) {
        let fwd = |p: &Pose<f64>| -> [f64; 3] {
            let s = (p.velocity.x.powi(2) + p.velocity.y.powi(2) + p.velocity.z.powi(2)).sqrt();
            if s > 1.0 {
                [p.velocity.x / s, p.velocity.y / s, p.velocity.z / s]
            } else {
                [p.heading.sin() * p.pitch.cos(), p.heading.cos() * p.pitch.cos(), p.pitch.sin()]
            }
        };
        let los = [b.position.x - a.position.x, b.position.y - a.position.y, b.position.z - a.position.z];
        let n = (los[0] * los[0] + los[1] * los[1] + los[2] * los[2]).sqrt();
        let u = [los[0] / n, los[1] / n, los[2] / n];
        let fa = fwd(a);
        let fb = fwd(b);
        let dot_a = (fa[0] * u[0] + fa[1] * u[1] + fa[2] * u[2]).clamp(-1.0, 1.0);
        // tail = -fb, los back = -u
        let dot_t = ((-fb[0]) * (-u[0]) + (-fb[1]) * (-u[1]) + (-fb[2]) * (-u[2])).clamp(-1.0, 1.0);
        (dot_a.acos(), dot_t.acos())
    }

    #[test]
    fn distance_cases() {
        let a = level(0.0, 0.0, 1000.0, 0.0, 200.0);
        assert_eq!(relative_distance(&a, &a), 0.0);
        let b = level(3000.0, 4000.0, 1000.0, 0.0, 200.0);
        assert_eq!(relative_distance(&a, &b), 5000.0);
        assert_eq!(relative_distance(&b, &a), 5000.0);
    }

    #[test]
    fn behind_and_head_on() {
        let target = level(0.0, 1000.0, 3000.0, 0.0, 200.0);
        let attacker = level(0.0, 0.0, 3000.0, 0.0, 200.0);
        let (aa, ata) = attack_angles(&attacker, &target).unwrap();
        assert_eq!((aa, ata), (0.0, 0.0));

        let target = level(0.0, 1000.0, 3000.0, -PI, 200.0);
        let (aa, ata) = attack_angles(&attacker, &target).unwrap();
        assert!(aa.abs() < 1e-12);
        assert!((ata - PI).abs() < 1e-12);
    }

    #[test]
    fn coincident_is_degenerate() {
        let a = level(10.0, 10.0, 1000.0, 0.0, 200.0);
        assert_eq!(attack_angles(&a, &a), Err(GeometryError::Degenerate));
        assert!(!wez_contains(&a, &a));
    }

    #[test]
    fn slow_aircraft_uses_attitude_axis() {
        let mut a = level(0.0, 0.0, 1000.0, PI / 2.0, 0.0);
        a.velocity = Vec3::new(0.0, 0.5, 0.0);
        let b = level(1000.0, 0.0, 1000.0, 0.0, 200.0);
        let (aa, _) = attack_angles(&a, &b).unwrap();
        assert!(aa.abs() < 1e-12);
    }

    fn wez_pose_pair(d: f64, aspect_deg: f64) -> (Pose<f64>, Pose<f64>) {
        let attacker = level(10_000.0, 10_000.0, 3000.0, aspect_deg.to_radians(), 200.0);
        let target = level(10_000.0, 10_000.0 + d, 3000.0, 0.0, 200.0);
        (attacker, target)
    }

    #[test]
    fn wez_cases() {
        let (a, t) = wez_pose_pair(3000.0, 3.0);
        assert!(wez_contains(&a, &t));
        let (a, t) = wez_pose_pair(3600.0, 0.0);
        assert!(!wez_contains(&a, &t));
        let (a, t) = wez_pose_pair(3000.0, 5.0);
        assert!(!wez_contains(&a, &t));
        let w = Wez::<f64>::default();
        assert!(w.admits(3500.0, 4f64.to_radians()));
    }

    #[test]
    fn normalize_cases() {
        assert_eq!(normalize_feature(0.0, 0.0, 10_000.0).unwrap(), -1.0);
        assert_eq!(normalize_feature(5_000.0, 0.0, 10_000.0).unwrap(), 0.0);
        assert_eq!(normalize_feature(20_000.0, 0.0, 10_000.0).unwrap(), 1.0);
        assert!(matches!(normalize_feature(1.0, 5.0, 5.0), Err(GeometryError::InvalidBounds { .. })));
        assert_eq!(normalize_feature(0.5f32, 0.0, 1.0).unwrap(), 0.0);
    }

    fn arb_pose() -> impl Strategy<Value = Pose<f64>> {
        (0.0..50_000.0f64, 0.0..50_000.0f64, 50.0..15_000.0f64, -PI..PI, -1.4..1.4f64, 0.0..600.0f64).prop_map(
            |(x, y, z, h, p, s)| Pose {
                position: Vec3::new(x, y, z),
                velocity: attitude_axis(h, p) * s,
                roll: 0.0,
                pitch: p,
                heading: h,
            },
        )
    }

    proptest! {
        #[test]
        fn distance_matches_componentwise(a in arb_pose(), b in arb_pose()) {
            let d = relative_distance(&a, &b);
            let dx = a.position.x - b.position.x;
            let dy = a.position.y - b.position.y;
            let dz = a.position.z - b.position.z;
            let oracle = (dx * dx + dy * dy + dz * dz).sqrt();
            prop_assert!((d - oracle).abs() <= 1e-9 * oracle.max(1.0));
        }

        #[test]
        fn angles_match_dot_product_oracle(a in arb_pose(), b in arb_pose()) {
            prop_assume!(relative_distance(&a, &b) > 1.0);
            let (aa, ata) = attack_angles(&a, &b).unwrap();
            let (oa, ot) = oracle_angles(&a, &b);
            prop_assert!((0.0..=PI).contains(&aa) && (0.0..=PI).contains(&ata));
            // acos loses precision within ~1e-6 rad of 0 and pi
            let tol = |x: f64| if x.sin() > 1e-3 { 1e-9 } else { 1e-6 };
            prop_assert!((aa - oa).abs() <= tol(oa), "{} vs {}", aa, oa);
            prop_assert!((ata - ot).abs() <= tol(ot), "{} vs {}", ata, ot);
        }

        #[test]
        fn wez_monotone(d in 0.0..5000.0f64, aspect in 0.0..0.2f64, shrink in 0.0..1.0f64) {
            let w = Wez::<f64>::default();
            if w.admits(d, aspect) {
                prop_assert!(w.admits(d * shrink, aspect));
                prop_assert!(w.admits(d, aspect * shrink));
            }
        }

        #[test]
        fn normalize_inverse(lo in -1e4..1e4f64, width in 1.0..1e5f64, t in 0.0..1.0f64) {
            let hi = lo + width;
            let raw = lo + t * width;
            let n = normalize_feature(raw, lo, hi).unwrap();
            let back = denormalize_feature(n, lo, hi).unwrap();
            prop_assert!((back - raw).abs() <= 1e-9 * width);
            let n2 = normalize_feature(back, lo, hi).unwrap();
            prop_assert!((n2 - n).abs() <= 1e-12);
        }
    }
}
