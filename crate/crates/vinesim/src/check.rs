//! Invariant suite over the built-in courses and scripts.

use std::sync::Arc;

use vinesim_core::scenario::{builtin, builtin_names, load_course, score_run, validate_course, Severity};
use vinesim_core::session::{
    builtin_script, builtin_script_names, read_log, replay, InputScript, LogHeader, LogWriter, Session,
    SessionConfig,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.ok { "ok  " } else { "FAIL" };
        write!(f, "{status} {}: {}", self.name, self.detail)
    }
}

pub fn run_checks() -> Vec<CheckLine> {
    let mut lines: Vec<CheckLine> = builtin_names().map(check_course).collect();
    lines.extend(builtin_script_names().map(|name| {
        let script = builtin_script(name).expect("listed scripts exist");
        check_script(&script)
    }));
    lines
}

fn check_course(name: &str) -> CheckLine {
    let course = builtin(name).expect("listed courses exist");
    let findings = validate_course(&course);
    let errors = findings.iter().filter(|f| f.severity == Severity::Error).count();
    let reloaded = load_course(&course.to_json()).map(|c| c.hash() == course.hash());
    CheckLine {
        name: format!("course {name}"),
        ok: errors == 0 && matches!(reloaded, Ok(true)),
        detail: format!(
            "{errors} errors, {} warnings, JSON round trip {}",
            findings.len() - errors,
            match reloaded {
                Ok(true) => "keeps the hash".to_string(),
                Ok(false) => "changes the hash".to_string(),
                Err(e) => format!("fails: {e}"),
            }
        ),
    }
}

/// Per-tick invariants. Returns the first violation.
fn tick_violation(s: &Session) -> Option<String> {
    let body = s.body();
    let robot = &s.course().robot;
    let eps = 1e-9;
    let t = s.tick_count();
    if (body.laid_length() + body.active.s - body.total_length).abs() > eps {
        return Some(format!("tick {t}: laid + active length differs from total length"));
    }
    if (body.polyline_length() - body.laid_length()).abs() > 1e-6 {
        return Some(format!("tick {t}: laid polyline length drifted from its bookkeeping"));
    }
    if body.active.s < 0.0 || body.active.s > body.control_length + eps {
        return Some(format!("tick {t}: active length {} outside [0, control length]", body.active.s));
    }
    if body.total_length > robot.body_length + eps {
        return Some(format!("tick {t}: total length {} exceeds the body", body.total_length));
    }
    let p = s.pressures();
    if p.min() < 0.0 || p.max() > robot.p_max + eps {
        return Some(format!("tick {t}: pressure {p:?} outside [0, p_max]"));
    }
    if p.min() > eps {
        return Some(format!("tick {t}: smallest pressure {} is not zero", p.min()));
    }
    if s.estop_latched() && p.max() != 0.0 {
        return Some(format!("tick {t}: pressure left on under e-stop"));
    }
    if s.unspool_rate() > s.growth_rate().max(0.0) + eps {
        return Some(format!("tick {t}: spool pays out faster than the body grows"));
    }
    None
}

fn check_script(script: &InputScript) -> CheckLine {
    let name = format!("script {}", script.name);
    let fail = |detail: String| CheckLine {
        name: name.clone(),
        ok: false,
        detail,
    };
    let Some(course) = builtin(&script.course) else {
        return fail(format!("unknown course `{}`", script.course));
    };
    let course = Arc::new(course);
    let config = SessionConfig {
        site: script.site.clone(),
        ..SessionConfig::default()
    };
    let mut s = match Session::start(course.clone(), config) {
        Ok(s) => s,
        Err(e) => return fail(e.to_string()),
    };
    s.start_recording();
    for step in &script.steps {
        if let Err(e) = s.apply_message(step.input) {
            return fail(format!("input rejected: {e}"));
        }
        for _ in 0..(step.hold_s * s.tick_hz()).round() as u64 {
            if let Err(e) = s.tick() {
                return fail(format!("tick {}: {e}", s.tick_count() + 1));
            }
            if let Some(v) = tick_violation(&s) {
                return fail(v);
            }
        }
    }
    let record = s.record().expect("recording was started");

    let mut bytes = Vec::new();
    let written = LogWriter::new(&mut bytes, &LogHeader::for_session(&s))
        .and_then(|mut w| record.entries.iter().try_for_each(|e| w.write_entry(e)));
    if let Err(e) = written {
        return fail(format!("writing log: {e}"));
    }
    let replayed = read_log(bytes.as_slice()).and_then(|log| replay(course.clone(), &log.header, &log.entries));
    match replayed {
        Ok(out) if out.final_hash == s.state_hash() => {}
        Ok(_) => return fail("replay ended on a different hash".into()),
        Err(e) => return fail(format!("replay: {e}")),
    }
    let score = match score_run(&record, &course) {
        Ok(r) => r,
        Err(e) => return fail(e.to_string()),
    };
    CheckLine {
        name,
        ok: true,
        detail: format!(
            "{} ticks, length {:.2} m, replay identical, score {:.1}",
            s.tick_count(),
            s.body().total_length,
            score.total
        ),
    }
}
