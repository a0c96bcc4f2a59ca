//! Newline-delimited JSON run logs: one header line, then one line per tick.

use std::io::{self, BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Session, SessionConfig, SessionError};
use crate::scenario::{Course, CourseDocument, RecordEntry, RunRecord};

pub const LOG_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: u32,
    pub course_hash: String,
    pub tick_hz: f64,
    pub site: String,
    /// Embedded so a log can be replayed on its own.
    pub course: CourseDocument,
}

impl LogHeader {
    pub fn for_session(session: &Session) -> Self {
        let course = session.course();
        Self {
            format: LOG_FORMAT,
            course_hash: course.hash().to_string(),
            tick_hz: session.tick_hz(),
            site: session.site().to_string(),
            course: course.document().clone(),
        }
    }

    /// The embedded course, checked against the recorded hash.
    pub fn course(&self) -> Result<Course, ReplayError> {
        let course = Course::from_document(self.course.clone());
        if course.hash() != self.course_hash {
            return Err(ReplayError::CourseMismatch {
                log: self.course_hash.clone(),
                course: course.hash().to_string(),
            });
        }
        Ok(course)
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("log is empty")]
    Empty,
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("unsupported log format {0}")]
    Format(u32),
    #[error("log was recorded on course {log}, not {course}")]
    CourseMismatch { log: String, course: String },
    #[error("expected tick {expected}, log has {found}")]
    TickGap { expected: u64, found: u64 },
    #[error("state diverged at tick {tick}: log {recorded}, replay {replayed}")]
    Divergence {
        tick: u64,
        recorded: String,
        replayed: String,
    },
    #[error("tick {tick}: {source}")]
    Session {
        tick: u64,
        #[source]
        source: SessionError,
    },
}

pub struct LogWriter<W: Write> {
    out: W,
}

impl<W: Write> LogWriter<W> {
    pub fn new(mut out: W, header: &LogHeader) -> io::Result<Self> {
        serde_json::to_writer(&mut out, header)?;
        out.write_all(b"\n")?;
        Ok(Self { out })
    }

    pub fn write_entry(&mut self, entry: &RecordEntry) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, entry)?;
        self.out.write_all(b"\n")
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Parsed log. A final line that does not parse and lacks its newline is
/// treated as a write cut short and dropped; `truncated` records that.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLog {
    pub header: LogHeader,
    pub entries: Vec<RecordEntry>,
    pub truncated: bool,
}

pub fn read_log(mut reader: impl BufRead) -> Result<ParsedLog, ReplayError> {
    let mut lines = Vec::new();
    loop {
        let mut buf = String::new();
        if reader.read_line(&mut buf)? == 0 {
            break;
        }
        lines.push(buf);
    }
    let malformed = |line: usize, e: serde_json::Error| ReplayError::Malformed {
        line,
        message: e.to_string(),
    };
    let mut iter = lines.iter().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = iter.next().ok_or(ReplayError::Empty)?;
    let header: LogHeader = serde_json::from_str(first).map_err(|e| malformed(1, e))?;
    if header.format != LOG_FORMAT {
        return Err(ReplayError::Format(header.format));
    }
    let mut entries = Vec::new();
    let mut truncated = false;
    for (i, line) in iter {
        match serde_json::from_str::<RecordEntry>(line) {
            Ok(e) => entries.push(e),
            Err(_) if i + 1 == lines.len() && !line.ends_with('\n') => truncated = true,
            Err(e) => return Err(malformed(i + 1, e)),
        }
    }
    Ok(ParsedLog {
        header,
        entries,
        truncated,
    })
}

#[derive(Debug)]
pub struct ReplayOutcome {
    pub ticks: u64,
    /// First tick whose hash differs from the log. Always `None` from
    /// [`replay`], which stops there instead.
    pub first_divergence: Option<u64>,
    pub final_hash: String,
    pub record: RunRecord,
    pub session: Session,
}

/// Re-runs the logged inputs on `course` and checks every tick's state hash.
pub fn replay(course: Arc<Course>, header: &LogHeader, entries: &[RecordEntry]) -> Result<ReplayOutcome, ReplayError> {
    run(course, header, entries, true)
}

/// Re-runs the logged inputs to the end without stopping at a divergence.
pub fn resimulate(
    course: Arc<Course>,
    header: &LogHeader,
    entries: &[RecordEntry],
) -> Result<ReplayOutcome, ReplayError> {
    run(course, header, entries, false)
}

fn run(course: Arc<Course>, header: &LogHeader, entries: &[RecordEntry], strict: bool) -> Result<ReplayOutcome, ReplayError> {
    if header.format != LOG_FORMAT {
        return Err(ReplayError::Format(header.format));
    }
    if course.hash() != header.course_hash {
        return Err(ReplayError::CourseMismatch {
            log: header.course_hash.clone(),
            course: course.hash().to_string(),
        });
    }
    let config = SessionConfig {
        tick_hz: header.tick_hz,
        site: Some(header.site.clone()),
        ..SessionConfig::default()
    };
    let mut session = Session::start(course, config).map_err(|source| ReplayError::Session { tick: 0, source })?;
    session.start_recording();
    let mut first_divergence = None;
    for entry in entries {
        let expected = session.tick_count() + 1;
        if entry.tick != expected {
            return Err(ReplayError::TickGap {
                expected,
                found: entry.tick,
            });
        }
        let at = |source| ReplayError::Session { tick: entry.tick, source };
        session.apply_input(entry.input).map_err(at)?;
        session.tick().map_err(at)?;
        let replayed = session.state_hash();
        if replayed != entry.state_hash && first_divergence.is_none() {
            first_divergence = Some(entry.tick);
        }
        if replayed != entry.state_hash && strict {
            return Err(ReplayError::Divergence {
                tick: entry.tick,
                recorded: entry.state_hash.clone(),
                replayed,
            });
        }
    }
    let record = session.record().unwrap_or_else(|| unreachable!("recording was started"));
    Ok(ReplayOutcome {
        ticks: session.tick_count(),
        first_divergence,
        final_hash: session.state_hash(),
        record,
        session,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::Quaternion;
    use crate::scenario::builtin;
    use crate::session::growth_input;
    use crate::teleop::TeleopInput;

    fn recorded_run(ticks: u64) -> (Arc<Course>, Vec<u8>, String) {
        let course = Arc::new(builtin("robosoft2018").unwrap());
        let mut s = Session::start(course.clone(), SessionConfig::default()).unwrap();
        s.start_recording();
        let mut w = LogWriter::new(Vec::new(), &LogHeader::for_session(&s)).unwrap();
        for t in 0..ticks {
            let bend = Quaternion::from_bend(0.3 + 0.001 * t as f64, 0.01 * t as f64, 1.0).unwrap();
            s.apply_input(TeleopInput { q: bend, ..growth_input(400.0, 1023.0) }).unwrap();
            s.tick().unwrap();
        }
        for e in &s.record().unwrap().entries {
            w.write_entry(e).unwrap();
        }
        (course, w.into_inner(), s.state_hash())
    }

    #[test]
    fn replay_reproduces_every_hash() {
        let (course, bytes, last) = recorded_run(200);
        let log = read_log(bytes.as_slice()).unwrap();
        assert!(!log.truncated);
        assert_eq!(log.entries.len(), 200);
        let out = replay(course, &log.header, &log.entries).unwrap();
        assert_eq!(out.final_hash, last);
        assert_eq!(out.ticks, 200);
    }

    #[test]
    fn unnormalized_joystick_input_replays() {
        let course = Arc::new(builtin("robosoft2018").unwrap());
        let mut s = Session::start(course.clone(), SessionConfig::default()).unwrap();
        s.start_recording();
        for t in 0..120u32 {
            if t % 15 == 0 {
                let q = Quaternion::new(3.0, 0.7 + 0.01 * f64::from(t), -0.4, 0.0);
                s.apply_input(TeleopInput { q, ..growth_input(500.0, 1023.0) }).unwrap();
            }
            s.tick().unwrap();
        }
        let header = LogHeader::for_session(&s);
        let out = replay(course, &header, &s.record().unwrap().entries).unwrap();
        assert_eq!(out.final_hash, s.state_hash());
    }

    #[test]
    fn tampered_log_names_the_tick() {
        let (course, bytes, _) = recorded_run(50);
        let mut log = read_log(bytes.as_slice()).unwrap();
        log.entries[30].input.r_m = 500.0;
        match replay(course, &log.header, &log.entries) {
            Err(ReplayError::Divergence { tick, .. }) => assert_eq!(tick, 31),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn resimulation_runs_past_a_divergence() {
        let (course, bytes, _) = recorded_run(50);
        let mut log = read_log(bytes.as_slice()).unwrap();
        log.entries[30].input.r_m = 500.0;
        let out = resimulate(course, &log.header, &log.entries).unwrap();
        assert_eq!(out.first_divergence, Some(31));
        assert_eq!(out.ticks, 50);
    }

    #[test]
    fn truncated_log_replays_its_prefix() {
        let (course, bytes, _) = recorded_run(40);
        let cut = &bytes[..bytes.len() - 25];
        let log = read_log(cut).unwrap();
        assert!(log.truncated);
        assert_eq!(log.entries.len(), 39);
        let out = replay(course, &log.header, &log.entries).unwrap();
        assert_eq!(out.ticks, 39);
    }

    #[test]
    fn embedded_course_matches_hash() {
        let (course, bytes, _) = recorded_run(5);
        let log = read_log(bytes.as_slice()).unwrap();
        assert_eq!(log.header.course().unwrap().hash(), course.hash());
    }

    #[test]
    fn other_course_is_rejected() {
        let (_, bytes, _) = recorded_run(5);
        let log = read_log(bytes.as_slice()).unwrap();
        let other = Arc::new(builtin("chavin").unwrap());
        assert!(matches!(
            replay(other, &log.header, &log.entries),
            Err(ReplayError::CourseMismatch { .. })
        ));
    }

    #[test]
    fn garbage_in_the_middle_is_an_error() {
        let (_, bytes, _) = recorded_run(5);
        let mut text = String::from_utf8(bytes).unwrap();
        text.insert_str(text.find('\n').unwrap() + 1, "{not json}\n");
        assert!(matches!(read_log(text.as_bytes()), Err(ReplayError::Malformed { line: 2, .. })));
    }
}
