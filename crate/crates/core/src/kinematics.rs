//! Constant-curvature geometry for the joystick and the robot's distal segment.
//!
//! Conventions used throughout the crate:
//!
//! * A segment starts at a base frame whose local `+z` axis is the growth
//!   direction.
//! * An arc `(kappa, phi, s)` bends toward the in-plane direction
//!   `(cos phi, -sin phi)`, which is the sign convention of the tip map
//!   [`arc_to_tip`]. Lifting an arc into 3D with [`arc_backbone_points`] is
//!   consistent with that map: the lateral part of the endpoint equals the
//!   planar tip position.
//! * Frames are transported along the arc without twist, so continuing an arc
//!   from any interior frame with the same `(kappa, phi)` stays on the same
//!   circle.

use std::f64::consts::PI;

use nalgebra::{Isometry3, Point3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bend angle `kappa * s` at which the planar tip distance peaks.
///
/// Root of `tan(theta / 2) = theta` on `(0, pi)`. Beyond it the distance
/// `s (1 - cos theta) / theta` decreases again, so the planar inverse is only
/// single-valued up to here.
pub const MAX_PLANAR_BEND: f64 = 2.331_122_370_414_422;

/// Largest planar tip distance per unit arc length, `(1 - cos t) / t` at
/// [`MAX_PLANAR_BEND`].
pub fn max_reach_ratio() -> f64 {
    reach_ratio(MAX_PLANAR_BEND)
}

const BISECTION_REL_TOL: f64 = 1e-12;
const BISECTION_MAX_ITER: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinematicsError {
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
    #[error("tip distance {radius} m exceeds the reachable {max} m for arc length {s} m")]
    OutOfWorkspace { radius: f64, max: f64, s: f64 },
}

/// Joystick orientation as a quaternion `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Unit-norm copy. Fails on non-finite or zero quaternions.
    pub fn normalized(&self) -> Result<Self, KinematicsError> {
        if !self.is_finite() {
            return Err(KinematicsError::InvalidInput("quaternion has non-finite components"));
        }
        let n = self.norm();
        if n < 1e-12 {
            return Err(KinematicsError::InvalidInput("quaternion has zero norm"));
        }
        // Leave unit quaternions untouched so normalizing twice is a no-op.
        if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Ok(*self);
        }
        Ok(Self::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    /// Joystick orientation that [`quat_to_arc`] maps back to `(kappa, phi)`.
    ///
    /// Used when a client sends bend parameters instead of an orientation.
    /// The result is a rotation about the in-plane axis `(sin phi, -cos phi, 0)`.
    pub fn from_bend(kappa: f64, phi: f64, s: f64) -> Result<Self, KinematicsError> {
        if !(kappa.is_finite() && phi.is_finite() && s.is_finite()) {
            return Err(KinematicsError::InvalidInput("bend parameters must be finite"));
        }
        if kappa < 0.0 || s <= 0.0 {
            return Err(KinematicsError::InvalidInput("bend requires kappa >= 0 and s > 0"));
        }
        let theta = (kappa * s).min(PI);
        let half = 0.5 * theta;
        let m = half.sin();
        Ok(Self::new(half.cos(), m * phi.sin(), -m * phi.cos(), 0.0))
    }
}

/// Constant-curvature arc: curvature (1/m), bending-plane angle (rad), length (m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcParams {
    pub kappa: f64,
    pub phi: f64,
    pub s: f64,
}

impl ArcParams {
    pub fn straight(s: f64) -> Self {
        Self {
            kappa: 0.0,
            phi: 0.0,
            s,
        }
    }

    /// Total bend angle `kappa * s`.
    pub fn bend(&self) -> f64 {
        self.kappa * self.s
    }

    pub fn with_length(self, s: f64) -> Self {
        Self { s, ..self }
    }
}

/// Tip position projected onto the two steerable degrees of freedom (m).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TipPosition {
    pub x: f64,
    pub y: f64,
}

impl TipPosition {
    pub const ORIGIN: TipPosition = TipPosition { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::new(self.x * k, self.y * k)
    }
}

/// Rigid pose; the local `+z` axis is the growth direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose3 {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Default for Pose3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose3 {
    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }

    /// `self * local`: `local` is expressed in this pose's frame.
    pub fn compose(&self, local: &Pose3) -> Pose3 {
        Pose3 {
            position: self.position + self.orientation * local.position,
            orientation: self.orientation * local.orientation,
        }
    }

    pub fn transform_point(&self, local: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.orientation * local
    }

    pub fn inverse_transform_point(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.orientation.inverse() * (world - self.position)
    }

    /// Unit growth direction in the parent frame.
    pub fn tangent(&self) -> Vector3<f64> {
        self.orientation * Vector3::z()
    }

    pub fn point(&self) -> Point3<f64> {
        Point3::from(self.position)
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r >= PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// `(1 - cos t) / t`, evaluated without cancellation; 0 at `t = 0`.
fn reach_ratio(t: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        let h = (0.5 * t).sin();
        2.0 * h * h / t
    }
}

/// Joystick orientation to curvature and bending-plane angle.
///
/// `kappa = acos(1 - 2 (qx^2 + qy^2)) / s`,
/// `phi = atan2(qx qw + qy qz, qx qz - qy qw)`. A straight joystick has an
/// undefined bending plane; `phi` is reported as 0 in that case.
pub fn quat_to_arc(q: &Quaternion, s: f64) -> Result<ArcParams, KinematicsError> {
    if !s.is_finite() || s <= 0.0 {
        return Err(KinematicsError::InvalidInput("joystick length must be positive and finite"));
    }
    let q = q.normalized()?;
    let lateral = q.x * q.x + q.y * q.y;
    let kappa = (1.0 - 2.0 * lateral).clamp(-1.0, 1.0).acos() / s;
    let num = q.x * q.w + q.y * q.z;
    let den = q.x * q.z - q.y * q.w;
    let phi = if lateral == 0.0 || (num == 0.0 && den == 0.0) {
        0.0
    } else {
        normalize_angle(num.atan2(den))
    };
    Ok(ArcParams { kappa, phi, s })
}

/// Planar tip position of an arc:
/// `x = -cos(phi) (cos(kappa s) - 1) / kappa`, `y = sin(phi) (cos(kappa s) - 1) / kappa`.
pub fn arc_to_tip(arc: &ArcParams) -> TipPosition {
    if arc.kappa == 0.0 {
        return TipPosition::ORIGIN;
    }
    let h = (0.5 * arc.kappa * arc.s).sin();
    // (1 - cos(kappa s)) / kappa
    let d = 2.0 * h * h / arc.kappa;
    TipPosition::new(arc.phi.cos() * d, -arc.phi.sin() * d)
}

/// Inverse of [`arc_to_tip`] for a known arc length.
///
/// The bend angle is found by bisection on `(0, MAX_PLANAR_BEND]`, where the
/// tip distance is strictly increasing.
pub fn tip_to_arc(tip: &TipPosition, s: f64) -> Result<ArcParams, KinematicsError> {
    if !(tip.x.is_finite() && tip.y.is_finite()) {
        return Err(KinematicsError::InvalidInput("tip position must be finite"));
    }
    if !s.is_finite() || s <= 0.0 {
        return Err(KinematicsError::InvalidInput("arc length must be positive and finite"));
    }
    let r = tip.norm();
    if r == 0.0 {
        return Ok(ArcParams::straight(s));
    }
    let target = r / s;
    let max = max_reach_ratio();
    if target > max * (1.0 + 1e-12) {
        return Err(KinematicsError::OutOfWorkspace {
            radius: r,
            max: max * s,
            s,
        });
    }
    let (mut lo, mut hi) = (0.0_f64, MAX_PLANAR_BEND);
    for _ in 0..BISECTION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if reach_ratio(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= BISECTION_REL_TOL * hi {
            break;
        }
    }
    let theta = 0.5 * (lo + hi);
    Ok(ArcParams {
        kappa: theta / s,
        phi: normalize_angle((-tip.y).atan2(tip.x)),
        s,
    })
}

/// Like [`tip_to_arc`], but tips outside the workspace are pulled radially
/// onto its boundary. The flag reports whether that happened.
pub fn tip_to_arc_clamped(tip: &TipPosition, s: f64) -> Result<(ArcParams, bool), KinematicsError> {
    match tip_to_arc(tip, s) {
        Ok(arc) => Ok((arc, false)),
        Err(KinematicsError::OutOfWorkspace { radius, .. }) => {
            let phi = normalize_angle((-tip.y).atan2(tip.x));
            debug_assert!(radius > 0.0);
            Ok((
                ArcParams {
                    kappa: MAX_PLANAR_BEND / s,
                    phi,
                    s,
                },
                true,
            ))
        }
        Err(e) => Err(e),
    }
}

/// Pose at arc length `sigma` along `arc`, relative to the arc's base frame.
pub fn arc_local_pose(arc: &ArcParams, sigma: f64) -> Pose3 {
    let theta = arc.kappa * sigma;
    let (sp, cp) = arc.phi.sin_cos();
    let (lateral, axial) = if arc.kappa == 0.0 {
        (0.0, sigma)
    } else {
        let h = (0.5 * theta).sin();
        (2.0 * h * h / arc.kappa, theta.sin() / arc.kappa)
    };
    let position = Vector3::new(cp * lateral, -sp * lateral, axial);
    let axis = Unit::new_unchecked(Vector3::new(sp, cp, 0.0));
    Pose3::new(position, UnitQuaternion::from_axis_angle(&axis, theta))
}

/// Distal pose of `arc` grown from `base`.
pub fn arc_tip_pose(base: &Pose3, arc: &ArcParams) -> Pose3 {
    base.compose(&arc_local_pose(arc, arc.s))
}

/// `n` poses evenly spaced in arc length from `base` to the arc tip.
///
/// Values of `n` below 2 are treated as 2.
pub fn arc_backbone_points(base: &Pose3, arc: &ArcParams, n: usize) -> Vec<Pose3> {
    let n = n.max(2);
    let step = arc.s / (n - 1) as f64;
    (0..n)
        .map(|i| {
            if i == 0 {
                *base
            } else {
                base.compose(&arc_local_pose(arc, step * i as f64))
            }
        })
        .collect()
}

/// Constant-curvature arc from the origin (tangent `+z`) through a local point.
///
/// Returns `None` when the point would need a bend of `max_bend` radians or
/// more, or lies on or behind the base along its axis.
pub fn arc_to_point(local: &Vector3<f64>, max_bend: f64) -> Option<ArcParams> {
    let rho = local.x.hypot(local.y);
    let z = local.z;
    if rho <= 1e-12 * z.abs().max(1.0) {
        return (z > 0.0).then(|| ArcParams::straight(z));
    }
    let kappa = 2.0 * rho / (rho * rho + z * z);
    let theta = 2.0 * rho.atan2(z);
    if theta >= max_bend {
        return None;
    }
    Some(ArcParams {
        kappa,
        phi: normalize_angle((-local.y).atan2(local.x)),
        s: theta / kappa,
    })
}
