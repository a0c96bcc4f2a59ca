//! Timed operator input, for headless runs.

use serde::{Deserialize, Serialize};

use super::{Session, SessionError};
use crate::body::Event;
use crate::teleop::InputMessage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptStep {
    /// How long the input is held (s). Rounded to whole ticks.
    pub hold_s: f64,
    pub input: InputMessage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputScript {
    pub name: String,
    pub course: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site: Option<String>,
    pub steps: Vec<ScriptStep>,
}

impl InputScript {
    pub fn duration(&self) -> f64 {
        self.steps.iter().map(|s| s.hold_s).sum()
    }

    /// Plays every step on `session`, one input per tick.
    pub fn play(&self, session: &mut Session) -> Result<Vec<Event>, SessionError> {
        let mut events = Vec::new();
        for step in &self.steps {
            let ticks = (step.hold_s * session.tick_hz()).round() as u64;
            session.apply_message(step.input)?;
            events.extend(session.run_ticks(ticks)?);
        }
        Ok(events)
    }
}

const BUILTIN_SCRIPTS: [(&str, &str); 4] = [
    ("robosoft2018", include_str!("../../scripts/robosoft2018.json")),
    ("chavin-location-1", include_str!("../../scripts/chavin-location-1.json")),
    ("chavin-location-2", include_str!("../../scripts/chavin-location-2.json")),
    ("chavin-location-3", include_str!("../../scripts/chavin-location-3.json")),
];

pub fn builtin_script_names() -> impl Iterator<Item = &'static str> {
    BUILTIN_SCRIPTS.iter().map(|(n, _)| *n)
}

/// One of the input scripts shipped with the crate.
pub fn builtin_script(name: &str) -> Option<InputScript> {
    BUILTIN_SCRIPTS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| serde_json::from_str(text).unwrap_or_else(|e| panic!("built-in script {name}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::builtin;
    use crate::session::SessionConfig;
    use std::sync::Arc;

    #[test]
    fn parses_and_plays() {
        let script: InputScript = serde_json::from_str(
            r#"{"name":"t","course":"robosoft2018","steps":[
                {"hold_s":1.0,"input":{"bend":{"kappa":0.0,"phi":0.0},"r_p":1023,"r_m":409.2,"d":-1}},
                {"hold_s":0.5,"input":{"bend":{"kappa":0.0,"phi":0.0},"r_p":0,"r_m":0,"d":-1,"estop":true}}
            ]}"#,
        )
        .unwrap();
        assert_eq!(script.duration(), 1.5);
        let course = Arc::new(builtin("robosoft2018").unwrap());
        let mut s = Session::start(course, SessionConfig::default()).unwrap();
        script.play(&mut s).unwrap();
        assert_eq!(s.tick_count(), 75);
        assert!(s.body().total_length > 0.0);
        assert!(s.estop_latched());
    }

    #[test]
    fn builtin_scripts_parse_and_name_builtin_courses() {
        for name in builtin_script_names() {
            let script = builtin_script(name).unwrap();
            let course = builtin(&script.course).unwrap();
            if let Some(site) = &script.site {
                assert!(course.site(site).is_some(), "{name}: {site}");
            }
        }
    }
}
