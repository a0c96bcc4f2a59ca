//! On-disk course format (version 1). Angles are degrees here and radians
//! everywhere else.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::body::{Aabb, ApertureWall, Obstacle, ObstacleKind, OrientedBox, UnstableCylinder};
use crate::growth::GrowthConfig;
use crate::kinematics::Pose3;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CourseDocument {
    pub format: u32,
    pub name: String,
    pub robot: RobotDoc,
    pub environment: EnvironmentDoc,
    pub rubric: ScoringRubric,
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotDoc {
    pub inflated_diameter_cm: f64,
    pub body_length_m: f64,
    pub p_max_kpa: f64,
    #[serde(default = "one")]
    pub control_length_m: f64,
    #[serde(default = "one")]
    pub joystick_length_m: f64,
    pub layout: LayoutDoc,
    /// Full growth configuration; derived from `p_max_kpa` and the diameter
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<GrowthConfig>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutDoc {
    pub psi_deg: [f64; 3],
    pub c_m_per_kpa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsDoc {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteDoc {
    pub name: String,
    pub position: [f64; 3],
    /// Roll, pitch, yaw (deg) of the base frame; the body grows along its `z`.
    #[serde(default)]
    pub rotation_deg: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxDoc {
    pub center: [f64; 3],
    pub size: [f64; 3],
    #[serde(default)]
    pub rotation_deg: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObstacleDoc {
    Box {
        id: String,
        center: [f64; 3],
        size: [f64; 3],
        #[serde(default)]
        rotation_deg: [f64; 3],
    },
    UnstableCylinder {
        id: String,
        /// Center of the bottom face.
        center: [f64; 3],
        radius: f64,
        height: f64,
        topple_tolerance: f64,
    },
    /// Wall whose local `z` is its normal; `size` is width, height, thickness.
    ApertureWall {
        id: String,
        center: [f64; 3],
        size: [f64; 3],
        #[serde(default)]
        rotation_deg: [f64; 3],
        hole: [f64; 2],
        /// Hole center relative to the wall center, in wall `x`, `y` (m).
        #[serde(default)]
        hole_offset: [f64; 2],
    },
    SandRegion {
        id: String,
        center: [f64; 3],
        size: [f64; 3],
        #[serde(default)]
        rotation_deg: [f64; 3],
    },
    TunnelWalls { id: String, walls: Vec<BoxDoc> },
    Goal {
        id: String,
        center: [f64; 3],
        size: [f64; 3],
        #[serde(default)]
        rotation_deg: [f64; 3],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentDoc {
    pub bounds: BoundsDoc,
    #[serde(default = "down")]
    pub gravity: [f64; 3],
    pub sites: Vec<SiteDoc>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleDoc>,
}

fn down() -> [f64; 3] {
    [0.0, 0.0, -1.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Crossing,
    Aperture,
    Cylinders,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Passage {
    /// Only the tip crosses obstacles; the body stays rooted at the base.
    TipOnly,
    WholeBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RubricItem {
    pub id: String,
    /// Goal obstacle the tip must reach to complete the item.
    pub checkpoint: String,
    pub points: f64,
    #[serde(default = "yes")]
    pub requires_whole_body: bool,
    #[serde(default = "crossing")]
    pub kind: ItemKind,
    /// Aperture wall scored by this item, for `kind = aperture`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aperture: Option<String>,
}

fn yes() -> bool {
    true
}

fn crossing() -> ItemKind {
    ItemKind::Crossing
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringRubric {
    #[serde(default)]
    pub items: Vec<RubricItem>,
    #[serde(default = "half")]
    pub tip_only_multiplier: f64,
    #[serde(default = "tip_only")]
    pub passage: Passage,
    /// Bonus for an aperture passed, scaled by `1 - hole / diameter`.
    #[serde(default)]
    pub aperture_bonus_points: f64,
    pub time_limit_s: f64,
}

fn half() -> f64 {
    0.5
}

fn tip_only() -> Passage {
    Passage::TipOnly
}

pub fn deg(v: [f64; 3]) -> [f64; 3] {
    v.map(f64::to_radians)
}

pub fn vec3(v: [f64; 3]) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

/// Pose from a position and roll/pitch/yaw in degrees.
pub fn pose(position: [f64; 3], rotation_deg: [f64; 3]) -> Pose3 {
    let [r, p, y] = deg(rotation_deg);
    Pose3::new(vec3(position), UnitQuaternion::from_euler_angles(r, p, y))
}

impl BoxDoc {
    pub fn to_box(&self) -> OrientedBox {
        OrientedBox::new(pose(self.center, self.rotation_deg), vec3(self.size) * 0.5)
    }
}

impl BoundsDoc {
    pub fn to_aabb(&self) -> Aabb {
        Aabb::new(vec3(self.min), vec3(self.max))
    }
}

impl ObstacleDoc {
    pub fn id(&self) -> &str {
        match self {
            ObstacleDoc::Box { id, .. }
            | ObstacleDoc::UnstableCylinder { id, .. }
            | ObstacleDoc::ApertureWall { id, .. }
            | ObstacleDoc::SandRegion { id, .. }
            | ObstacleDoc::TunnelWalls { id, .. }
            | ObstacleDoc::Goal { id, .. } => id,
        }
    }

    pub fn to_obstacle(&self) -> Obstacle {
        let boxed = |center: &[f64; 3], size: &[f64; 3], rot: &[f64; 3]| {
            OrientedBox::new(pose(*center, *rot), vec3(*size) * 0.5)
        };
        let kind = match self {
            ObstacleDoc::Box { center, size, rotation_deg, .. } => ObstacleKind::Box(boxed(center, size, rotation_deg)),
            ObstacleDoc::UnstableCylinder {
                center,
                radius,
                height,
                topple_tolerance,
                ..
            } => ObstacleKind::UnstableCylinder(UnstableCylinder {
                center: vec3(*center),
                radius: *radius,
                height: *height,
                topple_tolerance: *topple_tolerance,
            }),
            ObstacleDoc::ApertureWall {
                center,
                size,
                rotation_deg,
                hole,
                hole_offset,
                ..
            } => ObstacleKind::ApertureWall(ApertureWall {
                wall: boxed(center, size, rotation_deg),
                hole: *hole,
                hole_offset: *hole_offset,
            }),
            ObstacleDoc::SandRegion { center, size, rotation_deg, .. } => {
                ObstacleKind::SandRegion(boxed(center, size, rotation_deg))
            }
            ObstacleDoc::TunnelWalls { walls, .. } => ObstacleKind::TunnelWalls {
                walls: walls.iter().map(BoxDoc::to_box).collect(),
            },
            ObstacleDoc::Goal { center, size, rotation_deg, .. } => ObstacleKind::Goal(boxed(center, size, rotation_deg)),
        };
        Obstacle {
            id: self.id().to_string(),
            kind,
        }
    }
}
