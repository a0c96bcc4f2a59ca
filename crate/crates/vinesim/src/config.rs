//! Defaults file named by `VINESIM_CONFIG`, and course lookup.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;
use vinesim_core::scenario::{builtin, load_course, Course};
use vinesim_core::session::{DEFAULT_SNAPSHOT_HZ, DEFAULT_TICK_HZ};

/// TOML defaults. Command-line flags win over anything set here.
#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Defaults {
    pub course: Option<String>,
    pub site: Option<String>,
    pub bind: Option<String>,
    pub port: Option<u16>,
    pub tick_hz: Option<f64>,
    pub snapshot_hz: Option<f64>,
    pub max_backbone_points: Option<usize>,
    /// Directory for run logs written by `serve`.
    pub log_dir: Option<PathBuf>,
}

impl Defaults {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn tick_hz(&self) -> f64 {
        self.tick_hz.unwrap_or(DEFAULT_TICK_HZ)
    }

    pub fn snapshot_hz(&self) -> f64 {
        self.snapshot_hz.unwrap_or(DEFAULT_SNAPSHOT_HZ)
    }
}

/// A course file path, or the name of a built-in course.
pub fn resolve_course(course: &str) -> Result<Course> {
    let path = Path::new(course);
    if path.exists() {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {course}"))?;
        return load_course(&text).with_context(|| format!("loading {course}"));
    }
    builtin(course).with_context(|| format!("no course file or built-in course named `{course}`"))
}
