//! Discrete contact and buckling rules.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::environment::UnstableCylinder;

/// Smallest aperture side, relative to the inflated diameter, the body can
/// squeeze through without buckling.
pub const SHRINK_RATIO: f64 = 0.57;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApertureOutcome {
    Pass,
    Buckle,
}

impl ApertureOutcome {
    pub fn passes(self) -> bool {
        self == ApertureOutcome::Pass
    }
}

/// Whether a body of `inflated_diameter` cm fits through a square hole of
/// side `hole_side` cm.
pub fn aperture_check(inflated_diameter: f64, hole_side: f64) -> ApertureOutcome {
    if hole_side >= SHRINK_RATIO * inflated_diameter {
        ApertureOutcome::Pass
    } else {
        ApertureOutcome::Buckle
    }
}

/// Removes the part of `motion` that points into the surface with outward
/// unit normal `normal`.
pub fn collide_slide(motion: &Vector3<f64>, normal: &Vector3<f64>) -> Vector3<f64> {
    let into = motion.dot(normal);
    if into < 0.0 {
        motion - normal * into
    } else {
        *motion
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CylinderContact {
    None,
    /// The tip touched the cylinder and pushed it `depth` metres along
    /// `-normal`.
    Slide { depth: f64, normal: Vector3<f64> },
    Topple,
}

/// Outcome of the tip moving along `p0 -> p1` past a cylinder displaced by
/// `offset` that has already been pushed `prior_push` metres.
///
/// Penetration is how far the segment reaches inside the cylinder wall,
/// measured radially at its closest approach to the axis.
pub fn cylinder_interaction(
    p0: &Vector3<f64>,
    p1: &Vector3<f64>,
    cyl: &UnstableCylinder,
    offset: &Vector3<f64>,
    prior_push: f64,
) -> CylinderContact {
    let Some((t, normal)) = cyl.segment_entry(offset, p0, p1) else {
        return CylinderContact::None;
    };
    let axis = (cyl.center + offset).xy();
    let a = (p0 + (p1 - p0) * t).xy();
    let b = p1.xy();
    let d = b - a;
    let len2 = d.norm_squared();
    let u = if len2 > 0.0 {
        ((axis - a).dot(&d) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let closest = (a + d * u - axis).norm();
    let depth = (cyl.radius - closest).max(0.0);
    if prior_push + depth > cyl.topple_tolerance {
        CylinderContact::Topple
    } else {
        CylinderContact::Slide { depth, normal }
    }
}
