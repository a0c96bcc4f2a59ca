//! Courses: file format, validation, built-ins and scoring.

mod builtin;
pub mod document;
mod score;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::body::{aperture_check, Environment, ObstacleKind};
use crate::growth::GrowthConfig;
use crate::kinematics::Pose3;
use crate::steering::ActuatorLayout;

pub use builtin::{builtin, builtin_names, builtin_source};
pub use document::{CourseDocument, ItemKind, Passage, RubricItem, ScoringRubric, FORMAT_VERSION};
pub use score::{score_run, ItemScore, RecordEntry, RunRecord, ScoreError, ScoreReport};

#[derive(Debug, Error)]
pub enum CourseError {
    #[error("course parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("unsupported course format {0}")]
    Format(u32),
    #[error("invalid course: {}", summarize(.0))]
    Invalid(Vec<Finding>),
}

fn summarize(findings: &[Finding]) -> String {
    findings
        .iter()
        .filter(|f| f.severity == Severity::Error)
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    /// Where in the document the problem is.
    pub path: String,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{level} at {}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobotConfig {
    /// cm
    pub inflated_diameter: f64,
    /// m
    pub body_length: f64,
    /// kPa
    pub p_max: f64,
    pub control_length: f64,
    pub joystick_length: f64,
    pub layout: ActuatorLayout,
    pub growth: GrowthConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Site {
    pub name: String,
    pub pose: Pose3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Course {
    pub name: String,
    pub environment: Environment,
    /// Deployment sites; the first is the default start.
    pub sites: Vec<Site>,
    pub robot: RobotConfig,
    pub rubric: ScoringRubric,
    document: CourseDocument,
    hash: String,
}

impl Course {
    /// Builds a course without validating it.
    pub fn from_document(document: CourseDocument) -> Self {
        let r = &document.robot;
        let layout = ActuatorLayout {
            psi: r.layout.psi_deg.map(f64::to_radians),
            c: r.layout.c_m_per_kpa,
            p_max: r.p_max_kpa,
            ..ActuatorLayout::default()
        };
        let growth = r
            .growth
            .unwrap_or_else(|| GrowthConfig::with_limits(r.p_max_kpa, 0.5 * r.inflated_diameter_cm));
        let robot = RobotConfig {
            inflated_diameter: r.inflated_diameter_cm,
            body_length: r.body_length_m,
            p_max: r.p_max_kpa,
            control_length: r.control_length_m,
            joystick_length: r.joystick_length_m,
            layout,
            growth,
        };
        let env = &document.environment;
        let g = document::vec3(env.gravity);
        let environment = Environment {
            obstacles: env.obstacles.iter().map(|o| o.to_obstacle()).collect(),
            bounds: env.bounds.to_aabb(),
            gravity_dir: if g.norm() > 0.0 { g.normalize() } else { g },
        };
        let sites = env
            .sites
            .iter()
            .map(|s| Site {
                name: s.name.clone(),
                pose: document::pose(s.position, s.rotation_deg),
            })
            .collect();
        let hash = document_hash(&document);
        Self {
            name: document.name.clone(),
            environment,
            sites,
            robot,
            rubric: document.rubric.clone(),
            document,
            hash,
        }
    }

    pub fn document(&self) -> &CourseDocument {
        &self.document
    }

    /// SHA-256 of the canonical serialized document, hex encoded.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.document).expect("course documents always serialize")
    }

    pub fn site(&self, name: &str) -> Option<&Site> {
        self.sites.iter().find(|s| s.name == name)
    }

    pub fn start_pose(&self) -> Pose3 {
        self.sites[0].pose
    }
}

fn document_hash(doc: &CourseDocument) -> String {
    let bytes = serde_json::to_vec(doc).expect("course documents always serialize");
    hex::encode(Sha256::digest(&bytes))
}

/// Parses and validates a course file. Warnings are allowed; errors reject.
pub fn load_course(text: &str) -> Result<Course, CourseError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let document: CourseDocument = serde_path_to_error::deserialize(de).map_err(|e| CourseError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    if document.format != FORMAT_VERSION {
        return Err(CourseError::Format(document.format));
    }
    let course = Course::from_document(document);
    let findings = validate_course(&course);
    if findings.iter().any(|f| f.severity == Severity::Error) {
        return Err(CourseError::Invalid(findings));
    }
    Ok(course)
}

/// Checks a course for problems. Never fails; problems come back as findings.
pub fn validate_course(course: &Course) -> Vec<Finding> {
    let mut out = Vec::new();
    let mut push = |severity, path: String, message: String| out.push(Finding { severity, path, message });
    let doc = &course.document;
    let env = &course.environment;
    let robot = &course.robot;

    for (name, v) in [
        ("inflated_diameter_cm", robot.inflated_diameter),
        ("body_length_m", robot.body_length),
        ("p_max_kpa", robot.p_max),
        ("control_length_m", robot.control_length),
        ("joystick_length_m", robot.joystick_length),
    ] {
        if !(v.is_finite() && v > 0.0) {
            push(Severity::Error, format!("robot.{name}"), format!("must be positive, got {v}"));
        }
    }
    if let Err(e) = robot.layout.validate() {
        push(Severity::Error, "robot.layout".into(), e.to_string());
    }
    if let Err(e) = robot.growth.validate() {
        push(Severity::Error, "robot.growth".into(), e.to_string());
    }

    if !env.bounds.is_valid() {
        push(Severity::Error, "environment.bounds".into(), "min must be below max on every axis".into());
    }
    if !(env.gravity_dir.norm() - 1.0).abs().lt(&1e-9) {
        push(Severity::Error, "environment.gravity".into(), "gravity direction must be nonzero".into());
    }
    if course.sites.is_empty() {
        push(Severity::Error, "environment.sites".into(), "at least one start site is required".into());
    }
    let mut site_names = BTreeSet::new();
    for (i, site) in course.sites.iter().enumerate() {
        if !site_names.insert(site.name.as_str()) {
            push(Severity::Error, format!("environment.sites[{i}]"), format!("duplicate site `{}`", site.name));
        }
        if !env.bounds.contains(&site.pose.position) {
            push(Severity::Error, format!("environment.sites[{i}]"), "start pose outside bounds".into());
        }
    }

    let mut ids = BTreeSet::new();
    for (i, obstacle) in env.obstacles.iter().enumerate() {
        let path = format!("environment.obstacles[{i}]");
        if !ids.insert(obstacle.id.as_str()) {
            push(Severity::Error, path.clone(), format!("duplicate id `{}`", obstacle.id));
        }
        if !obstacle.is_valid() {
            push(Severity::Error, path.clone(), "degenerate geometry".into());
        }
        match &obstacle.kind {
            ObstacleKind::Goal(b) => {
                let center = b.pose.position;
                if !env.bounds.contains(&center) {
                    push(Severity::Error, path.clone(), format!("goal `{}` outside bounds", obstacle.id));
                }
                let reach = robot.body_length + b.half_extents.norm();
                if !course.sites.is_empty()
                    && course.sites.iter().all(|s| (s.pose.position - center).norm() > reach)
                {
                    push(
                        Severity::Error,
                        path.clone(),
                        format!("unreachable goal `{}`: farther than the body length from every site", obstacle.id),
                    );
                }
            }
            ObstacleKind::ApertureWall(w) => {
                let hole_cm = 100.0 * w.hole_side();
                if !aperture_check(robot.inflated_diameter, hole_cm).passes() {
                    push(
                        Severity::Warning,
                        path.clone(),
                        format!(
                            "aperture below shrink threshold: {hole_cm:.2} cm hole for a {:.2} cm body",
                            robot.inflated_diameter
                        ),
                    );
                }
            }
            _ => {}
        }
    }

    for i in 0..env.obstacles.len() {
        for j in i + 1..env.obstacles.len() {
            let (a, b) = (&env.obstacles[i], &env.obstacles[j]);
            let hit = a
                .solid_aabbs()
                .iter()
                .any(|x| b.solid_aabbs().iter().any(|y| x.overlaps(y)));
            if hit {
                push(
                    Severity::Warning,
                    format!("environment.obstacles[{j}]"),
                    format!("overlapping obstacles `{}` and `{}`", a.id, b.id),
                );
            }
        }
    }

    let rubric = &doc.rubric;
    if !(rubric.tip_only_multiplier > 0.0 && rubric.tip_only_multiplier <= 1.0) {
        push(Severity::Error, "rubric.tip_only_multiplier".into(), "must be in (0, 1]".into());
    }
    if !(rubric.time_limit_s.is_finite() && rubric.time_limit_s > 0.0) {
        push(Severity::Error, "rubric.time_limit_s".into(), "must be positive".into());
    }
    if !(rubric.aperture_bonus_points >= 0.0) {
        push(Severity::Error, "rubric.aperture_bonus_points".into(), "must be >= 0".into());
    }
    let kind_of = |id: &str| env.obstacles.iter().find(|o| o.id == id).map(|o| &o.kind);
    let mut item_ids = BTreeSet::new();
    for (i, item) in rubric.items.iter().enumerate() {
        let path = format!("rubric.items[{i}]");
        if !item_ids.insert(item.id.as_str()) {
            push(Severity::Error, path.clone(), format!("duplicate item `{}`", item.id));
        }
        if !(item.points >= 0.0) {
            push(Severity::Error, path.clone(), "points must be >= 0".into());
        }
        if !matches!(kind_of(&item.checkpoint), Some(ObstacleKind::Goal(_))) {
            push(Severity::Error, path.clone(), format!("checkpoint `{}` is not a goal", item.checkpoint));
        }
        if item.kind == ItemKind::Aperture {
            let ok = item
                .aperture
                .as_deref()
                .is_some_and(|id| matches!(kind_of(id), Some(ObstacleKind::ApertureWall(_))));
            if !ok {
                push(Severity::Error, path.clone(), "aperture item must name an aperture wall".into());
            }
        }
    }
    out
}
