//! Obstacle geometry and swept-point collision queries for the robot tip.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::kinematics::Pose3;

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min, max }
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|i| self.min[i].is_finite() && self.max[i].is_finite() && self.min[i] < self.max[i])
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Interiors overlap (touching faces do not count).
    pub fn overlaps(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] < other.max[i] - 1e-9 && other.min[i] < self.max[i] - 1e-9)
    }

    /// Where a segment starting inside first leaves the box, with the inward
    /// normal of the face it crosses.
    fn segment_exit(&self, p0: &Vector3<f64>, p1: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        if !self.contains(p0) || self.contains(p1) {
            return None;
        }
        let d = p1 - p0;
        let mut best: Option<(f64, Vector3<f64>)> = None;
        for i in 0..3 {
            let (t, sign) = if p1[i] > self.max[i] && d[i] > 0.0 {
                ((self.max[i] - p0[i]) / d[i], -1.0)
            } else if p1[i] < self.min[i] && d[i] < 0.0 {
                ((self.min[i] - p0[i]) / d[i], 1.0)
            } else {
                continue;
            };
            if best.is_none_or(|(bt, _)| t < bt) {
                let mut n = Vector3::zeros();
                n[i] = sign;
                best = Some((t.clamp(0.0, 1.0), n));
            }
        }
        best
    }
}

/// Box with arbitrary orientation. `pose` locates its center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub pose: Pose3,
    pub half_extents: Vector3<f64>,
}

impl OrientedBox {
    pub fn new(pose: Pose3, half_extents: Vector3<f64>) -> Self {
        Self { pose, half_extents }
    }

    pub fn axis_aligned(center: Vector3<f64>, size: Vector3<f64>) -> Self {
        Self::new(
            Pose3::new(center, nalgebra::UnitQuaternion::identity()),
            size * 0.5,
        )
    }

    pub fn is_valid(&self) -> bool {
        self.half_extents.iter().all(|h| h.is_finite() && *h > 0.0)
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let l = self.pose.inverse_transform_point(p);
        (0..3).all(|i| l[i].abs() <= self.half_extents[i])
    }

    pub fn aabb(&self) -> Aabb {
        let r = self.pose.orientation.to_rotation_matrix();
        let m = r.matrix();
        let ext = Vector3::from_fn(|i, _| {
            (0..3).map(|j| m[(i, j)].abs() * self.half_extents[j]).sum::<f64>()
        });
        Aabb::new(self.pose.position - ext, self.pose.position + ext)
    }

    /// First entry of the segment `p0 -> p1` into the box, as a fraction of
    /// the segment and the outward normal of the entry face.
    ///
    /// A segment starting inside reports `t = 0` against the nearest face if
    /// it heads deeper, and nothing if it heads out.
    pub fn segment_entry(&self, p0: &Vector3<f64>, p1: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        let a = self.pose.inverse_transform_point(p0);
        let b = self.pose.inverse_transform_point(p1);
        let d = b - a;
        if (0..3).all(|i| a[i].abs() < self.half_extents[i]) {
            let i = (0..3)
                .min_by(|&i, &j| {
                    let di = self.half_extents[i] - a[i].abs();
                    let dj = self.half_extents[j] - a[j].abs();
                    di.total_cmp(&dj)
                })
                .unwrap_or(0);
            let mut n = Vector3::zeros();
            n[i] = if a[i] >= 0.0 { 1.0 } else { -1.0 };
            return (d.dot(&n) < -1e-9 * d.norm()).then(|| (0.0, self.pose.orientation * n));
        }
        let (mut t_enter, mut t_exit) = (0.0_f64, 1.0_f64);
        let mut axis = None;
        for i in 0..3 {
            let h = self.half_extents[i];
            if d[i].abs() < 1e-15 {
                if a[i].abs() >= h {
                    return None;
                }
                continue;
            }
            let (mut t0, mut t1) = ((-h - a[i]) / d[i], (h - a[i]) / d[i]);
            let mut sign = -1.0;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
                sign = 1.0;
            }
            if t0 > t_enter {
                t_enter = t0;
                axis = Some((i, sign));
            }
            t_exit = t_exit.min(t1);
            if t_enter >= t_exit {
                return None;
            }
        }
        let (i, sign) = axis?;
        let mut n = Vector3::zeros();
        n[i] = sign;
        Some((t_enter, self.pose.orientation * n))
    }
}

/// Cylinder standing on its base along world `+z` that topples when pushed
/// too far.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnstableCylinder {
    /// Center of the bottom face.
    pub center: Vector3<f64>,
    pub radius: f64,
    pub height: f64,
    /// Accumulated push (m) the cylinder tolerates before falling.
    pub topple_tolerance: f64,
}

impl UnstableCylinder {
    pub fn aabb(&self) -> Aabb {
        let r = Vector3::new(self.radius, self.radius, 0.0);
        Aabb::new(
            self.center - r,
            self.center + r + Vector3::new(0.0, 0.0, self.height),
        )
    }

    /// First entry of a segment through the side wall, with the outward
    /// radial normal. Contact through the caps is ignored; the tip travels
    /// roughly horizontally past cylinders.
    pub fn segment_entry(
        &self,
        offset: &Vector3<f64>,
        p0: &Vector3<f64>,
        p1: &Vector3<f64>,
    ) -> Option<(f64, Vector3<f64>)> {
        let c = self.center + offset;
        let a = (p0 - c).xy();
        let d = (p1 - p0).xy();
        if a.norm() < self.radius {
            let inside_height = p0.z >= c.z && p0.z <= c.z + self.height;
            if !inside_height || a.norm() == 0.0 || a.dot(&d) >= -1e-9 * a.norm() * d.norm() {
                return None;
            }
            let n = a.normalize();
            return Some((0.0, Vector3::new(n.x, n.y, 0.0)));
        }
        let qa = d.dot(&d);
        if qa < 1e-18 {
            return None;
        }
        let qb = 2.0 * a.dot(&d);
        let qc = a.dot(&a) - self.radius * self.radius;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            return None;
        }
        let t = (-qb - disc.sqrt()) / (2.0 * qa);
        if !(0.0..=1.0).contains(&t) {
            return None;
        }
        let hit = p0 + (p1 - p0) * t;
        if hit.z < c.z || hit.z > c.z + self.height {
            return None;
        }
        let radial = (hit - c).xy();
        let n = Vector3::new(radial.x, radial.y, 0.0).normalize();
        Some((t, n))
    }
}

/// Wall with a rectangular hole. The wall's local `z` axis is its normal;
/// local `x` and `y` span the face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApertureWall {
    pub wall: OrientedBox,
    /// Hole width and height (m).
    pub hole: [f64; 2],
    /// Hole center in the wall's local `x`, `y` (m).
    #[serde(default)]
    pub hole_offset: [f64; 2],
}

impl ApertureWall {
    pub fn hole_fits(&self) -> bool {
        let h = self.wall.half_extents;
        let [ox, oy] = self.hole_offset;
        let (hx, hy) = (0.5 * self.hole[0], 0.5 * self.hole[1]);
        hx > 0.0 && hy > 0.0 && ox - hx > -h.x && ox + hx < h.x && oy - hy > -h.y && oy + hy < h.y
    }

    /// Side of the square the body must squeeze through (m).
    pub fn hole_side(&self) -> f64 {
        self.hole[0].min(self.hole[1])
    }

    fn local_box(&self, x: [f64; 2], y: [f64; 2]) -> OrientedBox {
        let center = Vector3::new(0.5 * (x[0] + x[1]), 0.5 * (y[0] + y[1]), 0.0);
        let local = Pose3::new(center, nalgebra::UnitQuaternion::identity());
        OrientedBox::new(
            self.wall.pose.compose(&local),
            Vector3::new(0.5 * (x[1] - x[0]), 0.5 * (y[1] - y[0]), self.wall.half_extents.z),
        )
    }

    /// The four solid pieces framing the hole.
    pub fn frame(&self) -> [OrientedBox; 4] {
        let h = self.wall.half_extents;
        let [ox, oy] = self.hole_offset;
        let (hx, hy) = (0.5 * self.hole[0], 0.5 * self.hole[1]);
        [
            self.local_box([-h.x, ox - hx], [-h.y, h.y]),
            self.local_box([ox + hx, h.x], [-h.y, h.y]),
            self.local_box([ox - hx, ox + hx], [-h.y, oy - hy]),
            self.local_box([ox - hx, ox + hx], [oy + hy, h.y]),
        ]
    }

    /// The hole volume; solid only when the body cannot squeeze through.
    pub fn gate(&self) -> OrientedBox {
        let [ox, oy] = self.hole_offset;
        let (hx, hy) = (0.5 * self.hole[0], 0.5 * self.hole[1]);
        self.local_box([ox - hx, ox + hx], [oy - hy, oy + hy])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObstacleKind {
    Box(OrientedBox),
    UnstableCylinder(UnstableCylinder),
    ApertureWall(ApertureWall),
    SandRegion(OrientedBox),
    TunnelWalls { walls: Vec<OrientedBox> },
    Goal(OrientedBox),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub id: String,
    pub kind: ObstacleKind,
}

impl Obstacle {
    pub fn is_valid(&self) -> bool {
        match &self.kind {
            ObstacleKind::Box(b) | ObstacleKind::SandRegion(b) | ObstacleKind::Goal(b) => b.is_valid(),
            ObstacleKind::UnstableCylinder(c) => {
                c.radius > 0.0 && c.height > 0.0 && c.topple_tolerance > 0.0
            }
            ObstacleKind::ApertureWall(w) => w.wall.is_valid() && w.hole_fits(),
            ObstacleKind::TunnelWalls { walls } => !walls.is_empty() && walls.iter().all(|b| b.is_valid()),
        }
    }

    /// Solid boxes for overlap checks.
    pub fn solid_aabbs(&self) -> Vec<Aabb> {
        match &self.kind {
            ObstacleKind::Box(b) => vec![b.aabb()],
            ObstacleKind::UnstableCylinder(c) => vec![c.aabb()],
            ObstacleKind::ApertureWall(w) => w.frame().iter().map(|b| b.aabb()).collect(),
            ObstacleKind::TunnelWalls { walls } => walls.iter().map(|b| b.aabb()).collect(),
            ObstacleKind::SandRegion(_) | ObstacleKind::Goal(_) => Vec::new(),
        }
    }
}

/// Static geometry of a course.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub obstacles: Vec<Obstacle>,
    pub bounds: Aabb,
    pub gravity_dir: Vector3<f64>,
}

impl Environment {
    pub fn empty(bounds: Aabb) -> Self {
        Self {
            obstacles: Vec::new(),
            bounds,
            gravity_dir: -Vector3::z(),
        }
    }

    /// An effectively unbounded empty world.
    pub fn open() -> Self {
        Self::empty(Aabb::new(Vector3::repeat(-1e6), Vector3::repeat(1e6)))
    }
}

/// Runtime state of one unstable cylinder.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CylinderState {
    /// Displacement from the course position (m).
    pub offset: Vector3<f64>,
    /// Total push received so far (m).
    pub pushed: f64,
    pub toppled: bool,
}

/// Mutable per-run world state: pushed or fallen cylinders and rule latches.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneState {
    pub cylinders: BTreeMap<String, CylinderState>,
    pub goals_reached: BTreeSet<String>,
    pub buckled_apertures: BTreeSet<String>,
    /// Ticks since the tip last touched anything; `None` before any contact.
    pub ticks_since_contact: Option<u64>,
    pub retraction_buckled: bool,
}

impl SceneState {
    pub fn new(env: &Environment) -> Self {
        let cylinders = env
            .obstacles
            .iter()
            .filter(|o| matches!(o.kind, ObstacleKind::UnstableCylinder(_)))
            .map(|o| (o.id.clone(), CylinderState::default()))
            .collect();
        Self {
            cylinders,
            ..Default::default()
        }
    }
}

/// What a swept tip ran into.
#[derive(Debug, Clone, PartialEq)]
pub enum HitTarget {
    Solid,
    Bounds,
    Cylinder(usize),
    /// Aperture hole too small for the body.
    BlockedAperture(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub t: f64,
    /// Outward normal of the surface hit (points back toward the tip).
    pub normal: Vector3<f64>,
    pub target: HitTarget,
}

/// Earliest collision of the tip moving along `p0 -> p1`.
///
/// `aperture_blocked(i)` decides whether the hole of obstacle `i` is solid.
pub fn first_hit(
    env: &Environment,
    scene: &SceneState,
    p0: &Vector3<f64>,
    p1: &Vector3<f64>,
    aperture_blocked: &dyn Fn(usize) -> bool,
) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    let mut offer = |t: f64, normal: Vector3<f64>, target: HitTarget| {
        if best.as_ref().is_none_or(|b| t < b.t) {
            best = Some(Hit { t, normal, target });
        }
    };
    for (i, obstacle) in env.obstacles.iter().enumerate() {
        match &obstacle.kind {
            ObstacleKind::Box(b) => {
                if let Some((t, n)) = b.segment_entry(p0, p1) {
                    offer(t, n, HitTarget::Solid);
                }
            }
            ObstacleKind::TunnelWalls { walls } => {
                for b in walls {
                    if let Some((t, n)) = b.segment_entry(p0, p1) {
                        offer(t, n, HitTarget::Solid);
                    }
                }
            }
            ObstacleKind::ApertureWall(w) => {
                for b in w.frame() {
                    if let Some((t, n)) = b.segment_entry(p0, p1) {
                        offer(t, n, HitTarget::Solid);
                    }
                }
                if aperture_blocked(i) {
                    if let Some((t, n)) = w.gate().segment_entry(p0, p1) {
                        offer(t, n, HitTarget::BlockedAperture(i));
                    }
                }
            }
            ObstacleKind::UnstableCylinder(c) => {
                let state = scene.cylinders.get(&obstacle.id).copied().unwrap_or_default();
                if state.toppled {
                    continue;
                }
                if let Some((t, n)) = c.segment_entry(&state.offset, p0, p1) {
                    offer(t, n, HitTarget::Cylinder(i));
                }
            }
            ObstacleKind::SandRegion(_) | ObstacleKind::Goal(_) => {}
        }
    }
    if let Some((t, n)) = env.bounds.segment_exit(p0, p1) {
        offer(t, n, HitTarget::Bounds);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::UnitQuaternion;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn box_entry_reports_face_normal() {
        let b = OrientedBox::axis_aligned(Vector3::new(2.0, 0.0, 0.0), Vector3::new(1.0, 1.0, 1.0));
        let (t, n) = b
            .segment_entry(&Vector3::zeros(), &Vector3::new(2.0, 0.0, 0.0))
            .unwrap();
        assert_abs_diff_eq!(t, 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(n, Vector3::new(-1.0, 0.0, 0.0), epsilon = 1e-12);
        assert!(b.segment_entry(&Vector3::zeros(), &Vector3::new(1.0, 0.0, 0.0)).is_none());
        // From inside: heading out is free, heading deeper stops at once.
        assert!(b
            .segment_entry(&Vector3::new(1.6, 0.0, 0.0), &Vector3::new(0.0, 0.0, 0.0))
            .is_none());
        let (t, n) = b
            .segment_entry(&Vector3::new(1.6, 0.0, 0.0), &Vector3::new(1.7, 0.0, 0.0))
            .unwrap();
        assert_eq!(t, 0.0);
        assert_abs_diff_eq!(n, Vector3::new(-1.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn rotated_box_entry() {
        let pose = Pose3::new(
            Vector3::new(2.0, 0.0, 0.0),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_4),
        );
        let b = OrientedBox::new(pose, Vector3::new(0.5, 0.5, 0.5));
        let (t, n) = b
            .segment_entry(&Vector3::zeros(), &Vector3::new(2.0, 0.0, 0.0))
            .unwrap();
        // Diamond corner at x = 2 - 0.5 * sqrt(2).
        assert_abs_diff_eq!(t * 2.0, 2.0 - 0.5 * 2f64.sqrt(), epsilon = 1e-12);
        assert!(n.x < 0.0);
    }

    #[test]
    fn cylinder_side_entry() {
        let c = UnstableCylinder {
            center: Vector3::new(1.0, 0.0, 0.0),
            radius: 0.1,
            height: 0.3,
            topple_tolerance: 0.02,
        };
        let (t, n) = c
            .segment_entry(&Vector3::zeros(), &Vector3::new(0.0, 0.0, 0.1), &Vector3::new(2.0, 0.0, 0.1))
            .unwrap();
        assert_abs_diff_eq!(t, 0.45, epsilon = 1e-12);
        assert_abs_diff_eq!(n, Vector3::new(-1.0, 0.0, 0.0), epsilon = 1e-12);
        // Passing above the top.
        assert!(c
            .segment_entry(&Vector3::zeros(), &Vector3::new(0.0, 0.0, 0.5), &Vector3::new(2.0, 0.0, 0.5))
            .is_none());
    }

    #[test]
    fn aperture_frame_leaves_hole_open() {
        let w = ApertureWall {
            wall: OrientedBox::axis_aligned(Vector3::zeros(), Vector3::new(1.0, 1.0, 0.02)),
            hole: [0.045, 0.045],
            hole_offset: [0.0, 0.0],
        };
        let through = |x: f64| {
            w.frame()
                .iter()
                .any(|b| b.segment_entry(&Vector3::new(x, 0.0, -1.0), &Vector3::new(x, 0.0, 1.0)).is_some())
        };
        assert!(!through(0.0));
        assert!(through(0.1));
        assert!(w.gate().segment_entry(&Vector3::new(0.0, 0.0, -1.0), &Vector3::new(0.0, 0.0, 1.0)).is_some());

        let low = ApertureWall {
            hole_offset: [0.1, -0.4],
            ..w
        };
        assert!(low.hole_fits());
        let open = |x: f64, y: f64| {
            !low.frame()
                .iter()
                .any(|b| b.segment_entry(&Vector3::new(x, y, -1.0), &Vector3::new(x, y, 1.0)).is_some())
        };
        assert!(open(0.1, -0.4));
        assert!(!open(0.0, 0.0));
        assert!(!ApertureWall { hole_offset: [0.0, 0.49], ..w }.hole_fits());
    }

    #[test]
    fn bounds_exit_has_inward_normal() {
        let b = Aabb::new(Vector3::repeat(-1.0), Vector3::repeat(1.0));
        let (t, n) = b.segment_exit(&Vector3::zeros(), &Vector3::new(0.0, 0.0, -2.0)).unwrap();
        assert_abs_diff_eq!(t, 0.5, epsilon = 1e-12);
        assert_eq!(n, Vector3::new(0.0, 0.0, 1.0));
    }
}
