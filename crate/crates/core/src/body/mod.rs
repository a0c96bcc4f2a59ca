//! Kinematic eversion model.
//!
//! The body is a frozen backbone of laid poses plus a steerable distal arc.
//! Growth lengthens the arc; anything beyond the control length is frozen
//! onto the backbone and never moves again. Only the tip touches the world.

pub mod environment;
pub mod rules;

use std::collections::BTreeMap;

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{
    arc_backbone_points, arc_local_pose, arc_tip_pose, arc_to_point, tip_to_arc_clamped, ArcParams,
    KinematicsError, Pose3,
};
use crate::steering::{superpose_tip, ActuatorLayout, PressureCommand};

pub use environment::{
    first_hit, Aabb, ApertureWall, CylinderState, Environment, Hit, HitTarget, Obstacle, ObstacleKind,
    OrientedBox, SceneState, UnstableCylinder,
};
pub use rules::{
    aperture_check, collide_slide, cylinder_interaction, ApertureOutcome, CylinderContact, SHRINK_RATIO,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BodyError {
    #[error("invalid timestep {0}")]
    InvalidTimestep(f64),
    #[error("growth of {ds} m in one tick exceeds the {limit} m limit")]
    StepTooLarge { ds: f64, limit: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

/// A frozen backbone pose and its distance from the base along the polyline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaidPose {
    pub pose: Pose3,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyState {
    /// Backbone from the base outward; the first entry is the base itself.
    pub laid: Vec<LaidPose>,
    /// Steerable section, in the frame of the last laid pose.
    pub active: ArcParams,
    pub total_length: f64,
    /// cm
    pub inflated_diameter: f64,
    /// Length of the steerable distal section (m).
    pub control_length: f64,
    /// Curvature-vector offset of the active arc from the commanded arc,
    /// left by contact (1/m).
    #[serde(default)]
    pub deflection: [f64; 2],
}

impl BodyState {
    pub fn new(base: Pose3, inflated_diameter: f64, control_length: f64) -> Self {
        Self {
            laid: vec![LaidPose { pose: base, s: 0.0 }],
            active: ArcParams::straight(0.0),
            total_length: 0.0,
            inflated_diameter,
            control_length,
            deflection: [0.0; 2],
        }
    }

    pub fn base(&self) -> &Pose3 {
        &self.laid[0].pose
    }

    /// Frame the active arc grows from.
    pub fn arc_base(&self) -> &Pose3 {
        &self.laid[self.laid.len() - 1].pose
    }

    pub fn laid_length(&self) -> f64 {
        self.laid[self.laid.len() - 1].s
    }

    /// Length of the laid polyline, recomputed from the poses.
    pub fn polyline_length(&self) -> f64 {
        self.laid
            .windows(2)
            .map(|w| (w[1].pose.position - w[0].pose.position).norm())
            .sum()
    }

    pub fn tip(&self) -> Vector3<f64> {
        camera_pose(self).position
    }

    /// Backbone points: the laid poses followed by `active_samples` points
    /// along the active arc.
    pub fn backbone(&self, active_samples: usize) -> Vec<Vector3<f64>> {
        let mut pts: Vec<_> = self.laid.iter().map(|l| l.pose.position).collect();
        if self.active.s > 0.0 {
            let arc = arc_backbone_points(self.arc_base(), &self.active, active_samples.max(2));
            pts.extend(arc.iter().skip(1).map(|p| p.position));
        }
        pts
    }
}

/// Tip pose, oriented along the backbone tangent with the base frame carried
/// along without twist.
pub fn camera_pose(state: &BodyState) -> Pose3 {
    arc_tip_pose(state.arc_base(), &state.active)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BodyParams {
    pub layout: ActuatorLayout,
    /// Laid curvature (1/m) above which retraction buckles.
    pub kappa_retract: f64,
    /// Distal length of the laid path inspected for retraction (m).
    pub retract_window: f64,
    /// Spacing of poses frozen onto the backbone (m).
    pub freeze_spacing: f64,
    /// Contact-free ticks before a new contact is reported again.
    pub contact_hysteresis: u64,
    /// Growth over which contact deflection relaxes by 1/e once free (m).
    pub deflection_relax: f64,
}

impl Default for BodyParams {
    fn default() -> Self {
        Self {
            layout: ActuatorLayout::default(),
            kappa_retract: 0.2,
            retract_window: 2.0,
            freeze_spacing: 0.02,
            contact_hysteresis: 10,
            deflection_relax: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id")]
pub enum EventKind {
    ApertureBuckle,
    CylinderToppled(String),
    RetractionBuckle,
    GoalReached(String),
    ContactSlide,
    Saturated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    #[serde(flatten)]
    pub kind: EventKind,
    pub tick: u64,
    pub position: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepReport {
    pub events: Vec<Event>,
    /// Change in total length this tick (m).
    pub advance: f64,
    /// Laid poses appended this tick.
    pub frozen: usize,
    pub contact: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RetractOutcome {
    Shortened(f64),
    Buckled,
}

/// Largest turning rate of the laid backbone over its distal `window` metres.
pub fn distal_laid_curvature(state: &BodyState, window: f64) -> f64 {
    let end = state.laid_length();
    state
        .laid
        .windows(2)
        .rev()
        .take_while(|w| w[1].s > end - window)
        .filter_map(|w| {
            let ds = w[1].s - w[0].s;
            (ds > 1e-12).then(|| w[0].pose.tangent().angle(&w[1].pose.tangent()) / ds)
        })
        .fold(0.0, f64::max)
}

/// Pulls `dl` metres of body back toward the base, unless the laid path is
/// too curved to retract.
pub fn retract(state: &mut BodyState, dl: f64, params: &BodyParams) -> RetractOutcome {
    if !(dl > 0.0) {
        return RetractOutcome::Shortened(0.0);
    }
    if distal_laid_curvature(state, params.retract_window) > params.kappa_retract {
        return RetractOutcome::Buckled;
    }
    let dl = dl.min(state.total_length);
    if dl <= state.active.s {
        state.active.s -= dl;
    } else {
        let rest = dl - state.active.s;
        state.active = ArcParams::straight(0.0);
        let target = (state.laid_length() - rest).max(0.0);
        while state.laid.len() > 1 && state.laid[state.laid.len() - 2].s >= target {
            state.laid.pop();
        }
        let n = state.laid.len();
        if n > 1 && state.laid[n - 1].s > target {
            let (a, b) = (state.laid[n - 2], state.laid[n - 1]);
            let f = (target - a.s) / (b.s - a.s);
            let position = a.pose.position.lerp(&b.pose.position, f);
            let orientation = a.pose.orientation.slerp(&b.pose.orientation, f);
            state.laid[n - 1] = LaidPose {
                pose: Pose3::new(position, orientation),
                s: target,
            };
        }
    }
    if state.laid.len() == 1 && state.active.s <= 0.0 {
        state.active = ArcParams::straight(0.0);
    }
    state.total_length = state.laid_length() + state.active.s;
    RetractOutcome::Shortened(dl)
}

/// Advances the body one tick.
///
/// `growth` is the signed growth speed in cm/s; negative values retract.
#[allow(clippy::too_many_arguments)]
pub fn step(
    state: &mut BodyState,
    env: &Environment,
    scene: &mut SceneState,
    steering: &PressureCommand,
    growth: f64,
    dt: f64,
    tick: u64,
    params: &BodyParams,
) -> Result<StepReport, BodyError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(BodyError::InvalidTimestep(dt));
    }
    if !growth.is_finite() {
        return Err(BodyError::InvalidInput("growth speed must be finite"));
    }
    let ds = growth * 0.01 * dt;
    let limit = 0.1 * state.control_length;
    if ds.abs() > limit * (1.0 + 1e-12) {
        return Err(BodyError::StepTooLarge { ds, limit });
    }
    let tip_cmd = superpose_tip(steering, &params.layout);
    if !(tip_cmd.x.is_finite() && tip_cmd.y.is_finite()) {
        return Err(BodyError::InvalidInput("steering pressures must be finite"));
    }

    let before = state.total_length;
    let mut report = StepReport::default();
    if ds < 0.0 {
        if retract(state, -ds, params) == RetractOutcome::Buckled {
            if !scene.retraction_buckled {
                report.events.push(Event {
                    kind: EventKind::RetractionBuckle,
                    tick,
                    position: state.tip(),
                });
            }
            scene.retraction_buckled = true;
        }
    } else {
        scene.retraction_buckled = false;
    }

    let s_new = state.active.s + ds.max(0.0);
    if s_new > 0.0 {
        let (commanded, _) = tip_to_arc_clamped(&tip_cmd, s_new)?;
        let keep = if scene.ticks_since_contact == Some(0) {
            1.0
        } else {
            (-ds.abs() / params.deflection_relax).exp()
        };
        let d = state.deflection;
        let candidate = offset_arc(&commanded, [d[0] * keep, d[1] * keep]);
        let base = *state.arc_base();
        let mut motion = Motion {
            env,
            scene,
            base,
            diameter: state.inflated_diameter,
            tick,
            events: &mut report.events,
            pushes: BTreeMap::new(),
            contact: false,
        };
        state.active = motion.resolve(state.active, candidate);
        report.contact = motion.contact;
        motion.apply_pushes();
    }
    state.deflection = if state.active.s > 0.0 {
        let (commanded, _) = tip_to_arc_clamped(&tip_cmd, state.active.s)?;
        let (a, c) = (curvature_vector(&state.active), curvature_vector(&commanded));
        [a[0] - c[0], a[1] - c[1]]
    } else {
        [0.0; 2]
    };

    report.frozen = freeze_excess(state, params.freeze_spacing);
    state.total_length = state.laid_length() + state.active.s;
    report.advance = state.total_length - before;

    let tip = state.tip();
    for obstacle in &env.obstacles {
        if let ObstacleKind::Goal(b) = &obstacle.kind {
            if b.contains(&tip) && scene.goals_reached.insert(obstacle.id.clone()) {
                report.events.push(Event {
                    kind: EventKind::GoalReached(obstacle.id.clone()),
                    tick,
                    position: tip,
                });
            }
        }
    }

    if report.contact {
        let fresh = scene
            .ticks_since_contact
            .is_none_or(|n| n > params.contact_hysteresis);
        if fresh {
            report.events.push(Event {
                kind: EventKind::ContactSlide,
                tick,
                position: tip,
            });
        }
        scene.ticks_since_contact = Some(0);
    } else if let Some(n) = scene.ticks_since_contact.as_mut() {
        *n = n.saturating_add(1);
    }
    Ok(report)
}

/// Freezes the part of the active arc beyond the control length onto the
/// laid path. Returns the number of poses appended.
fn freeze_excess(state: &mut BodyState, spacing: f64) -> usize {
    let excess = state.active.s - state.control_length;
    if excess <= 0.0 {
        return 0;
    }
    let base = *state.arc_base();
    let piece = state.active.with_length(excess);
    let n = (excess / spacing).ceil().max(1.0) as usize + 1;
    let points = arc_backbone_points(&base, &piece, n);
    let mut prev = state.laid[state.laid.len() - 1];
    for pose in points.into_iter().skip(1) {
        let next = LaidPose {
            pose,
            s: prev.s + (pose.position - prev.pose.position).norm(),
        };
        state.laid.push(next);
        prev = next;
    }
    state.active.s = state.control_length;
    n - 1
}

fn curvature_vector(arc: &ArcParams) -> [f64; 2] {
    [arc.kappa * arc.phi.cos(), arc.kappa * arc.phi.sin()]
}

fn from_curvature_vector(k: [f64; 2], s: f64) -> ArcParams {
    let kappa = k[0].hypot(k[1]);
    ArcParams {
        kappa,
        phi: if kappa == 0.0 { 0.0 } else { k[1].atan2(k[0]) },
        s,
    }
}

/// `arc` with its curvature vector shifted by `offset`, limited to a half turn.
fn offset_arc(arc: &ArcParams, offset: [f64; 2]) -> ArcParams {
    if offset == [0.0; 2] {
        return *arc;
    }
    let k = curvature_vector(arc);
    let mut out = from_curvature_vector([k[0] + offset[0], k[1] + offset[1]], arc.s);
    if arc.s > 0.0 {
        out.kappa = out.kappa.min(std::f64::consts::PI / arc.s);
    }
    out
}

/// Arc blend through curvature-vector space, so the bending plane turns the
/// short way round.
fn blend(a: &ArcParams, b: &ArcParams, lambda: f64) -> ArcParams {
    let (ka, kb) = (curvature_vector(a), curvature_vector(b));
    from_curvature_vector(
        [ka[0] + lambda * (kb[0] - ka[0]), ka[1] + lambda * (kb[1] - ka[1])],
        a.s + lambda * (b.s - a.s),
    )
}

/// Tip sweep sample spacing (m).
const SWEEP_STEP: f64 = 0.01;
const MAX_SWEEP_SAMPLES: usize = 64;
/// Fraction of the approach kept when backing off from a contact.
const BACKOFF: f64 = 1.0 - 1e-6;
/// Clearance kept between a sliding tip and the surface (m).
const SKIN: f64 = 1e-7;

struct Motion<'a> {
    env: &'a Environment,
    scene: &'a mut SceneState,
    base: Pose3,
    diameter: f64,
    tick: u64,
    events: &'a mut Vec<Event>,
    /// Deepest push per cylinder this tick, applied once at the end.
    pushes: BTreeMap<usize, (f64, Vector3<f64>)>,
    contact: bool,
}

impl Motion<'_> {
    fn tip_of(&self, arc: &ArcParams) -> Vector3<f64> {
        if arc.s <= 0.0 {
            self.base.position
        } else {
            self.base.transform_point(&arc_local_pose(arc, arc.s).position)
        }
    }

    /// Collision along `p0 -> p1` without side effects.
    fn probe(&self, p0: &Vector3<f64>, p1: &Vector3<f64>) -> Option<Hit> {
        let diameter = self.diameter;
        let obstacles = &self.env.obstacles;
        let blocked = |i: usize| match &obstacles[i].kind {
            ObstacleKind::ApertureWall(w) => !aperture_check(diameter, 100.0 * w.hole_side()).passes(),
            _ => false,
        };
        first_hit(self.env, self.scene, p0, p1, &blocked)
    }

    /// Collision along `p0 -> p1`, applying rule side effects.
    fn hit(&mut self, p0: &Vector3<f64>, p1: &Vector3<f64>) -> Option<Hit> {
        let env = self.env;
        loop {
            let hit = self.probe(p0, p1)?;
            let at = p0 + (p1 - p0) * hit.t;
            match hit.target {
                HitTarget::Cylinder(i) => {
                    let obstacle = &env.obstacles[i];
                    let ObstacleKind::UnstableCylinder(cyl) = &obstacle.kind else {
                        unreachable!("cylinder hit on a non-cylinder obstacle");
                    };
                    let state = self.scene.cylinders.entry(obstacle.id.clone()).or_default();
                    match cylinder_interaction(p0, p1, cyl, &state.offset, state.pushed) {
                        CylinderContact::Topple => {
                            state.toppled = true;
                            self.pushes.remove(&i);
                            self.events.push(Event {
                                kind: EventKind::CylinderToppled(obstacle.id.clone()),
                                tick: self.tick,
                                position: at,
                            });
                            continue;
                        }
                        CylinderContact::Slide { depth, normal } => {
                            let e = self.pushes.entry(i).or_insert((0.0, normal));
                            if depth > e.0 {
                                *e = (depth, normal);
                            }
                        }
                        CylinderContact::None => {}
                    }
                }
                HitTarget::BlockedAperture(i) => {
                    let id = &env.obstacles[i].id;
                    if self.scene.buckled_apertures.insert(id.clone()) {
                        self.events.push(Event {
                            kind: EventKind::ApertureBuckle,
                            tick: self.tick,
                            position: at,
                        });
                    }
                }
                HitTarget::Solid | HitTarget::Bounds => {}
            }
            self.contact = true;
            return Some(hit);
        }
    }

    fn apply_pushes(&mut self) {
        let env = self.env;
        for (i, (depth, normal)) in std::mem::take(&mut self.pushes) {
            let id = &env.obstacles[i].id;
            if let Some(state) = self.scene.cylinders.get_mut(id) {
                if !state.toppled {
                    state.offset -= Vector3::new(normal.x, normal.y, 0.0) * depth;
                    state.pushed += depth;
                }
            }
        }
    }

    /// Moves the active arc from `from` toward `to`, stopping at the first
    /// contact and sliding the remaining tip motion along the surface.
    fn resolve(&mut self, from: ArcParams, to: ArcParams) -> ArcParams {
        let p_from = self.tip_of(&from);
        let p_to = self.tip_of(&to);
        let samples = ((p_to - p_from).norm() / SWEEP_STEP)
            .ceil()
            .clamp(1.0, MAX_SWEEP_SAMPLES as f64) as usize;
        let mut prev = (0.0, p_from);
        for k in 1..=samples {
            let lambda = k as f64 / samples as f64;
            let p = self.tip_of(&blend(&from, &to, lambda));
            if let Some(hit) = self.hit(&prev.1, &p) {
                let mut lam_hit = prev.0 + (lambda - prev.0) * hit.t * BACKOFF;
                let mut contact = blend(&from, &to, lam_hit);
                // The sampled chord only approximates the swept tip path.
                for _ in 0..40 {
                    let pc = self.tip_of(&contact);
                    if self.probe(&prev.1, &pc).is_none() || lam_hit <= prev.0 {
                        break;
                    }
                    lam_hit = prev.0 + 0.5 * (lam_hit - prev.0);
                    contact = blend(&from, &to, lam_hit);
                }
                return self.slide(contact, &to, &hit.normal, &p_to);
            }
            prev = (lambda, p);
        }
        to
    }

    fn slide(&mut self, contact: ArcParams, to: &ArcParams, normal: &Vector3<f64>, p_to: &Vector3<f64>) -> ArcParams {
        let pc = self.tip_of(&contact);
        let slid = collide_slide(&(p_to - pc), normal);
        if slid.norm() < 1e-12 {
            return contact;
        }
        let mut target = pc + slid + normal * SKIN;
        if let Some(hit) = self.hit(&pc, &target) {
            target = pc + (target - pc) * (hit.t * BACKOFF) + hit.normal * SKIN;
        }
        let (s_min, s_max) = (contact.s, to.s);
        let fit = |p: &Vector3<f64>| {
            let local = self.base.inverse_transform_point(p);
            arc_to_point(&local, std::f64::consts::PI)
                .filter(|a| a.s >= s_min - 1e-9 && a.s <= s_max + 1e-9)
        };
        if let Some(arc) = fit(&target) {
            return arc;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut best = contact;
        for _ in 0..30 {
            let mid = 0.5 * (lo + hi);
            match fit(&(pc + (target - pc) * mid)) {
                Some(arc) => {
                    best = arc;
                    lo = mid;
                }
                None => hi = mid,
            }
        }
        best
    }
}

impl Default for BodyState {
    fn default() -> Self {
        Self::new(Pose3::new(Vector3::zeros(), UnitQuaternion::identity()), 5.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn grow(state: &mut BodyState, env: &Environment, scene: &mut SceneState, p: &PressureCommand, metres: f64) -> Vec<Event> {
        let params = BodyParams::default();
        let dt = 0.02;
        let speed = 5.0;
        let ticks = (metres / (speed * 0.01 * dt)).round() as u64;
        let mut events = Vec::new();
        for tick in 0..ticks {
            events.extend(step(state, env, scene, p, speed, dt, tick, &params).unwrap().events);
        }
        events
    }

    fn open() -> (Environment, SceneState) {
        let env = Environment::open();
        let scene = SceneState::new(&env);
        (env, scene)
    }

    #[test]
    fn straight_growth_reaches_length() {
        let (env, mut scene) = open();
        let mut state = BodyState::default();
        let params = BodyParams::default();
        let ticks = 950;
        for tick in 0..ticks {
            step(&mut state, &env, &mut scene, &PressureCommand::ZERO, 10.0, 0.1, tick, &params).unwrap();
        }
        assert_abs_diff_eq!(state.total_length, 9.5, epsilon = 1e-6);
        assert_abs_diff_eq!(state.tip(), Vector3::new(0.0, 0.0, 9.5), epsilon = 1e-6);
        assert!(state.active.s <= state.control_length + 1e-12);
    }

    #[test]
    fn constant_pressure_lays_a_circular_arc() {
        let (env, mut scene) = open();
        let mut state = BodyState::default();
        let layout = BodyParams::default().layout;
        let p = PressureCommand::new(4.0, 0.0, 0.0);
        let length = 3.0;
        grow(&mut state, &env, &mut scene, &p, length);
        // The commanded curvature: the arc of length L_ctrl whose tip is the
        // superposed tip position.
        let tip = superpose_tip(&p, &layout);
        let arc = crate::kinematics::tip_to_arc(&tip, state.control_length).unwrap();
        let expected = arc_tip_pose(state.base(), &arc.with_length(state.total_length)).position;
        let err = (state.tip() - expected).norm();
        assert!(err <= 0.01 * state.total_length, "endpoint error {err}");
    }

    #[test]
    fn steering_without_growth_leaves_laid_path() {
        let (env, mut scene) = open();
        let mut state = BodyState::default();
        grow(&mut state, &env, &mut scene, &PressureCommand::ZERO, 2.0);
        let laid = state.laid.clone();
        let params = BodyParams::default();
        let before = state.tip();
        step(&mut state, &env, &mut scene, &PressureCommand::new(0.0, 6.0, 0.0), 0.0, 0.02, 999, &params).unwrap();
        assert_eq!(state.laid, laid);
        assert!((state.tip() - before).norm() > 0.05);
    }

    #[test]
    fn step_rejects_bad_timestep_and_large_growth() {
        let (env, mut scene) = open();
        let mut state = BodyState::default();
        let params = BodyParams::default();
        let z = PressureCommand::ZERO;
        assert!(matches!(
            step(&mut state, &env, &mut scene, &z, 1.0, 0.0, 0, &params),
            Err(BodyError::InvalidTimestep(_))
        ));
        assert!(matches!(
            step(&mut state, &env, &mut scene, &z, 10.0, 2.0, 0, &params),
            Err(BodyError::StepTooLarge { .. })
        ));
    }

    #[test]
    fn retract_examples() {
        let (env, mut scene) = open();
        let params = BodyParams::default();
        let mut state = BodyState::default();
        grow(&mut state, &env, &mut scene, &PressureCommand::ZERO, 3.0);
        let len = state.total_length;
        assert_eq!(retract(&mut state, 0.4, &params), RetractOutcome::Shortened(0.4));
        assert_abs_diff_eq!(state.total_length, len - 0.4, epsilon = 1e-12);
        assert_eq!(retract(&mut state, 1.3, &params), RetractOutcome::Shortened(1.3));
        assert_abs_diff_eq!(state.total_length, len - 1.7, epsilon = 1e-9);
        assert_abs_diff_eq!(state.tip().z, len - 1.7, epsilon = 1e-9);
        let rest = state.total_length;
        assert_eq!(retract(&mut state, 50.0, &params), RetractOutcome::Shortened(rest));
        assert_eq!(state.total_length, 0.0);
        assert_eq!(camera_pose(&state), *state.base());
    }

    #[test]
    fn turned_body_buckles_on_retraction() {
        let (env, mut scene) = open();
        let params = BodyParams::default();
        let mut state = BodyState::default();
        grow(&mut state, &env, &mut scene, &PressureCommand::ZERO, 1.5);
        // Turn a quarter circle, then straighten.
        let p = PressureCommand::new(14.0, 0.0, 0.0);
        grow(&mut state, &env, &mut scene, &p, 2.0);
        grow(&mut state, &env, &mut scene, &PressureCommand::ZERO, 1.0);
        assert!(distal_laid_curvature(&state, 2.0) > 0.2);
        let len = state.total_length;
        assert_eq!(retract(&mut state, 0.1, &params), RetractOutcome::Buckled);
        assert_eq!(state.total_length, len);

        let ev = step(&mut state, &env, &mut scene, &PressureCommand::ZERO, -5.0, 0.02, 1, &params).unwrap();
        assert!(ev.events.iter().any(|e| e.kind == EventKind::RetractionBuckle));
        let again = step(&mut state, &env, &mut scene, &PressureCommand::ZERO, -5.0, 0.02, 2, &params).unwrap();
        assert!(again.events.is_empty());
    }

    #[test]
    fn camera_pose_examples() {
        let (env, mut scene) = open();
        let mut state = BodyState::default();
        assert_eq!(camera_pose(&state), *state.base());
        grow(&mut state, &env, &mut scene, &PressureCommand::ZERO, 2.0);
        let cam = camera_pose(&state);
        assert_abs_diff_eq!(cam.position, Vector3::new(0.0, 0.0, 2.0), epsilon = 1e-9);
        assert_abs_diff_eq!(cam.orientation.angle_to(&state.base().orientation), 0.0, epsilon = 1e-9);
        grow(&mut state, &env, &mut scene, &PressureCommand::new(0.0, 3.0, 1.0), 0.7);
        let last = *arc_backbone_points(state.arc_base(), &state.active, 17).last().unwrap();
        assert_abs_diff_eq!(camera_pose(&state).position, last.position, epsilon = 1e-12);
    }

    #[test]
    fn wall_stops_straight_growth() {
        let mut env = Environment::open();
        env.obstacles.push(Obstacle {
            id: "wall".into(),
            kind: ObstacleKind::Box(OrientedBox::axis_aligned(
                Vector3::new(0.0, 0.0, 1.55),
                Vector3::new(2.0, 2.0, 0.1),
            )),
        });
        let mut scene = SceneState::new(&env);
        let mut state = BodyState::default();
        let events = grow(&mut state, &env, &mut scene, &PressureCommand::ZERO, 2.0);
        assert!(state.tip().z <= 1.5 + 1e-9);
        assert!(state.tip().z > 1.49);
        assert_eq!(events.iter().filter(|e| e.kind == EventKind::ContactSlide).count(), 1);
    }

    #[test]
    fn slanted_wall_deflects_tip() {
        let mut env = Environment::open();
        let pose = Pose3::new(
            Vector3::new(0.0, 0.0, 0.8),
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 0.6),
        );
        env.obstacles.push(Obstacle {
            id: "ramp".into(),
            kind: ObstacleKind::Box(OrientedBox::new(pose, Vector3::new(1.0, 1.0, 0.05))),
        });
        let mut scene = SceneState::new(&env);
        let mut state = BodyState::default();
        grow(&mut state, &env, &mut scene, &PressureCommand::ZERO, 1.6);
        let tip = state.tip();
        assert!(tip.y.abs() > 0.05, "tip did not slide: {tip:?}");
        assert!(state.total_length > 0.9);
    }

    #[test]
    fn aperture_passes_or_buckles() {
        let wall = |hole: f64| {
            let mut env = Environment::open();
            env.obstacles.push(Obstacle {
                id: "gap".into(),
                kind: ObstacleKind::ApertureWall(ApertureWall {
                    wall: OrientedBox::axis_aligned(Vector3::new(0.0, 0.0, 0.5), Vector3::new(1.0, 1.0, 0.02)),
                    hole: [hole, hole],
                    hole_offset: [0.0, 0.0],
                }),
            });
            env
        };
        for (hole, passes) in [(0.040, true), (0.045, true), (0.039, false)] {
            let env = wall(hole);
            let mut scene = SceneState::new(&env);
            let mut state = BodyState::new(Pose3::identity(), 7.0, 1.0);
            let events = grow(&mut state, &env, &mut scene, &PressureCommand::ZERO, 1.0);
            let buckled = events.iter().any(|e| e.kind == EventKind::ApertureBuckle);
            assert_eq!(!buckled, passes, "hole {hole}");
            assert_eq!(state.tip().z > 0.6, passes, "hole {hole}");
        }
    }

    #[test]
    fn grazed_cylinder_slides_head_on_topples() {
        let run = |lateral: f64| {
            let mut env = Environment::open();
            env.obstacles.push(Obstacle {
                id: "c1".into(),
                kind: ObstacleKind::UnstableCylinder(UnstableCylinder {
                    center: Vector3::new(0.0, lateral, 0.5),
                    radius: 0.05,
                    height: 0.3,
                    topple_tolerance: 0.01,
                }),
            });
            // Grow along +x at the cylinder's mid height.
            let base = Pose3::new(
                Vector3::new(0.0, 0.0, 0.0),
                UnitQuaternion::from_axis_angle(&Vector3::y_axis(), std::f64::consts::FRAC_PI_2),
            );
            let base = Pose3::new(Vector3::new(-0.5, 0.0, 0.65), base.orientation);
            let mut scene = SceneState::new(&env);
            let mut state = BodyState::new(base, 5.0, 1.0);
            let events = grow(&mut state, &env, &mut scene, &PressureCommand::ZERO, 1.5);
            (events, scene)
        };
        let (events, scene) = run(0.0);
        assert!(events.iter().any(|e| e.kind == EventKind::CylinderToppled("c1".into())));
        assert!(scene.cylinders["c1"].toppled);

        let (events, scene) = run(0.048);
        assert!(!events.iter().any(|e| matches!(e.kind, EventKind::CylinderToppled(_))));
        let c = scene.cylinders["c1"];
        assert!(c.pushed > 0.0 && !c.toppled);
    }

    #[test]
    fn event_wire_format() {
        let e = Event {
            kind: EventKind::CylinderToppled("c2".into()),
            tick: 7,
            position: Vector3::new(1.0, 2.0, 3.0),
        };
        let v = serde_json::to_value(&e).unwrap();
        assert_eq!(v["kind"], "CylinderToppled");
        assert_eq!(v["id"], "c2");
        assert_eq!(serde_json::from_value::<Event>(v).unwrap(), e);
        let s = Event {
            kind: EventKind::ContactSlide,
            tick: 1,
            position: Vector3::zeros(),
        };
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<Event>(&text).unwrap(), s);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn eversion_and_length_bookkeeping(
            cmds in proptest::collection::vec((0.0f64..8.0, 0.0f64..8.0, 0.0f64..8.0, 0.0f64..10.0), 1..40)
        ) {
            let (env, mut scene) = open();
            let params = BodyParams::default();
            let mut state = BodyState::default();
            let mut tick = 0;
            for (p1, p2, p3, v) in cmds {
                let p = PressureCommand::new(p1, p2, p3);
                for _ in 0..25 {
                    let before = state.laid.clone();
                    step(&mut state, &env, &mut scene, &p, v, 0.02, tick, &params).unwrap();
                    tick += 1;
                    prop_assert_eq!(&state.laid[..before.len()], &before[..]);
                    let err = (state.polyline_length() + state.active.s - state.total_length).abs();
                    prop_assert!(err <= 1e-6, "bookkeeping error {}", err);
                    prop_assert!(state.active.s <= state.control_length + 1e-12);
                }
            }
        }

        #[test]
        fn steps_are_deterministic(p1 in 0.0f64..8.0, p2 in 0.0f64..8.0, v in 0.0f64..10.0) {
            let params = BodyParams::default();
            let run = || {
                let (env, mut scene) = open();
                let mut state = BodyState::default();
                for tick in 0..200 {
                    step(&mut state, &env, &mut scene, &PressureCommand::new(p1, p2, 0.0), v, 0.02, tick, &params).unwrap();
                }
                state
            };
            prop_assert_eq!(run(), run());
        }
    }
}
