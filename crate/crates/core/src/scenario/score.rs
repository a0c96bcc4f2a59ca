use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Course, ItemKind, Passage};
use crate::body::{Event, EventKind, ObstacleKind};
use crate::teleop::TeleopInput;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub tick: u64,
    pub input: TeleopInput,
    pub state_hash: String,
    #[serde(default)]
    pub events: Vec<Event>,
}

/// Everything needed to replay and score a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub course_hash: String,
    pub tick_hz: f64,
    pub site: String,
    pub entries: Vec<RecordEntry>,
    /// Seconds of real time the run took.
    #[serde(default)]
    pub wall_duration: f64,
}

impl RunRecord {
    pub fn events(&self) -> impl Iterator<Item = &Event> {
        self.entries.iter().flat_map(|e| e.events.iter())
    }

    /// Simulated seconds covered by the record.
    pub fn sim_duration(&self) -> f64 {
        self.entries.last().map_or(0.0, |e| e.tick as f64 / self.tick_hz)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("record was made on course {record}, not {course}")]
    CourseMismatch { record: String, course: String },
    #[error("record tick rate must be positive")]
    TickRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub id: String,
    pub completed: bool,
    /// Multiplier applied for tip-only passage (1 when not applicable).
    pub multiplier: f64,
    pub points: f64,
    pub max_points: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub course: String,
    pub items: Vec<ItemScore>,
    pub aperture_bonus: f64,
    pub total: f64,
    pub toppled: Vec<String>,
    /// Simulated seconds until the last completed item, or the whole run.
    pub elapsed_s: f64,
}

/// Scores a run against the course rubric. Only events within the time limit
/// count.
pub fn score_run(record: &RunRecord, course: &Course) -> Result<ScoreReport, ScoreError> {
    if record.course_hash != course.hash() {
        return Err(ScoreError::CourseMismatch {
            record: record.course_hash.clone(),
            course: course.hash().to_string(),
        });
    }
    if !(record.tick_hz > 0.0) {
        return Err(ScoreError::TickRate);
    }
    let rubric = &course.rubric;
    let in_time = |e: &&Event| e.tick as f64 / record.tick_hz <= rubric.time_limit_s;
    let events: Vec<&Event> = record.events().filter(in_time).collect();

    let reached: BTreeSet<&str> = events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::GoalReached(id) => Some(id.as_str()),
            _ => None,
        })
        .collect();
    let toppled: Vec<String> = events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::CylinderToppled(id) => Some(id.clone()),
            _ => None,
        })
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut items = Vec::new();
    let mut aperture_bonus = 0.0;
    for item in &rubric.items {
        let completed = reached.contains(item.checkpoint.as_str());
        let multiplier = if item.requires_whole_body && rubric.passage == Passage::TipOnly {
            rubric.tip_only_multiplier
        } else {
            1.0
        };
        let mut points = if completed { item.points * multiplier } else { 0.0 };
        let mut note = None;
        if item.kind == ItemKind::Cylinders && !toppled.is_empty() {
            points = 0.0;
            note = Some(format!("{} cylinder(s) toppled", toppled.len()));
        }
        if completed && item.kind == ItemKind::Aperture {
            let hole = item.aperture.as_deref().and_then(|id| {
                course.environment.obstacles.iter().find_map(|o| match &o.kind {
                    ObstacleKind::ApertureWall(w) if o.id == id => Some(w.hole_side()),
                    _ => None,
                })
            });
            if let Some(hole) = hole {
                let ratio = 100.0 * hole / course.robot.inflated_diameter;
                aperture_bonus += rubric.aperture_bonus_points * (1.0 - ratio).max(0.0);
            }
        }
        items.push(ItemScore {
            id: item.id.clone(),
            completed,
            multiplier,
            points,
            max_points: item.points,
            note,
        });
    }
    let total = items.iter().map(|i| i.points).sum::<f64>() + aperture_bonus;
    let elapsed_s = record.sim_duration().min(rubric.time_limit_s);
    Ok(ScoreReport {
        course: course.name.clone(),
        items,
        aperture_bonus,
        total,
        toppled,
        elapsed_s,
    })
}
