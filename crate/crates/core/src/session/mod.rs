//! Fixed-tick session: operator input in, controller pipeline, body step,
//! snapshot out.

mod log;
mod script;
mod snapshot;

use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::body::{self, BodyError, BodyParams, BodyState, Event, EventKind, SceneState};
use crate::growth::{self, Direction, GrowthError, GrowthState};
use crate::kinematics::{arc_to_tip, quat_to_arc, KinematicsError};
use crate::scenario::{validate_course, Course, RecordEntry, RunRecord, Severity};
use crate::steering::{saturate, solve_pressures, PressureCommand, SteeringError};
use crate::teleop::{InputError, InputMessage, TeleopInput};

pub use log::{read_log, replay, resimulate, LogHeader, LogWriter, ParsedLog, ReplayError, ReplayOutcome, LOG_FORMAT};
pub use script::{builtin_script, builtin_script_names, InputScript, ScriptStep};
pub use snapshot::{decimate, CameraPose, MotorTelemetry, Pressures, Snapshot};

pub const DEFAULT_TICK_HZ: f64 = 50.0;
pub const DEFAULT_SNAPSHOT_HZ: f64 = 25.0;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("tick rate must be positive and finite, got {0}")]
    TickRate(f64),
    #[error("tick rate {0} Hz is too low: one tick at full speed would exceed the per-tick growth limit")]
    TickTooLong(f64),
    #[error("invalid course: {0}")]
    Course(String),
    #[error("unknown site `{0}`")]
    UnknownSite(String),
    #[error("rejected input: {0}")]
    Input(#[from] InputError),
    #[error(transparent)]
    Body(#[from] BodyError),
    #[error(transparent)]
    Growth(#[from] GrowthError),
    #[error(transparent)]
    Steering(#[from] SteeringError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub tick_hz: f64,
    /// Start site; the course's first site when `None`.
    pub site: Option<String>,
    pub body: BodyParams,
    /// Upper bound on backbone points in a snapshot.
    pub max_backbone_points: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            tick_hz: DEFAULT_TICK_HZ,
            site: None,
            body: BodyParams::default(),
            max_backbone_points: 256,
        }
    }
}

impl SessionConfig {
    pub fn with_tick_hz(tick_hz: f64) -> Self {
        Self {
            tick_hz,
            ..Self::default()
        }
    }
}

/// One simulated robot on one course.
#[derive(Debug, Clone)]
pub struct Session {
    course: Arc<Course>,
    site: String,
    tick_hz: f64,
    dt: f64,
    params: BodyParams,
    max_backbone_points: usize,
    tick: u64,
    input: TeleopInput,
    estop_latched: bool,
    body: BodyState,
    scene: SceneState,
    growth: GrowthState,
    pressures: PressureCommand,
    saturated: bool,
    growth_rate: f64,
    unspool_rate: f64,
    pending: Vec<Event>,
    hash: [u8; 32],
    recording: Option<Vec<RecordEntry>>,
}

impl Session {
    pub fn start(course: Arc<Course>, config: SessionConfig) -> Result<Self, SessionError> {
        let tick_hz = config.tick_hz;
        if !(tick_hz.is_finite() && tick_hz > 0.0) {
            return Err(SessionError::TickRate(tick_hz));
        }
        let errors: Vec<String> = validate_course(&course)
            .into_iter()
            .filter(|f| f.severity == Severity::Error)
            .map(|f| f.to_string())
            .collect();
        if !errors.is_empty() {
            return Err(SessionError::Course(errors.join("; ")));
        }
        let robot = &course.robot;
        let dt = 1.0 / tick_hz;
        if robot.growth.v_max * 0.01 * dt > 0.1 * robot.control_length {
            return Err(SessionError::TickTooLong(tick_hz));
        }
        let site = match &config.site {
            Some(name) => course
                .site(name)
                .ok_or_else(|| SessionError::UnknownSite(name.clone()))?,
            None => &course.sites[0],
        };
        let site_name = site.name.clone();
        let body = BodyState::new(site.pose, robot.inflated_diameter, robot.control_length);
        let scene = SceneState::new(&course.environment);
        let params = BodyParams {
            layout: robot.layout,
            ..config.body
        };
        let hash = initial_hash(course.hash(), &site_name, tick_hz);
        Ok(Self {
            site: site_name,
            tick_hz,
            dt,
            params,
            max_backbone_points: config.max_backbone_points.max(2),
            tick: 0,
            input: TeleopInput::default(),
            estop_latched: false,
            body,
            scene,
            growth: GrowthState::new(),
            pressures: PressureCommand::ZERO,
            saturated: false,
            growth_rate: 0.0,
            unspool_rate: 0.0,
            pending: Vec::new(),
            hash,
            recording: None,
            course,
        })
    }

    pub fn course(&self) -> &Arc<Course> {
        &self.course
    }

    pub fn site(&self) -> &str {
        &self.site
    }

    pub fn tick_hz(&self) -> f64 {
        self.tick_hz
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.dt
    }

    pub fn body(&self) -> &BodyState {
        &self.body
    }

    pub fn scene(&self) -> &SceneState {
        &self.scene
    }

    pub fn growth_state(&self) -> &GrowthState {
        &self.growth
    }

    pub fn pressures(&self) -> PressureCommand {
        self.pressures
    }

    pub fn input(&self) -> &TeleopInput {
        &self.input
    }

    pub fn estop_latched(&self) -> bool {
        self.estop_latched
    }

    /// Growth speed achieved on the last tick (cm/s, negative when retracting).
    pub fn growth_rate(&self) -> f64 {
        self.growth_rate
    }

    /// Rate material left the spool on the last tick (cm/s).
    pub fn unspool_rate(&self) -> f64 {
        self.unspool_rate
    }

    pub fn state_hash(&self) -> String {
        hex::encode(self.hash)
    }

    /// Latches `input` for the next tick. Invalid input is rejected and the
    /// previous input stays in effect.
    pub fn apply_input(&mut self, input: TeleopInput) -> Result<(), SessionError> {
        self.input = input.validated(self.course.robot.growth.adc_max)?;
        Ok(())
    }

    /// Wire-format variant of [`Session::apply_input`].
    pub fn apply_message(&mut self, msg: InputMessage) -> Result<(), SessionError> {
        let robot = &self.course.robot;
        self.input = msg.into_input(robot.joystick_length, robot.growth.adc_max)?;
        Ok(())
    }

    /// Releases a latched e-stop. The latched input must itself have
    /// `estop = false`, or the stop re-latches on the next tick.
    pub fn clear_estop(&mut self) {
        self.estop_latched = false;
    }

    /// Operator connection lost: fail closed.
    pub fn disconnect(&mut self) {
        self.input.estop = true;
        self.estop_latched = true;
    }

    pub fn start_recording(&mut self) {
        self.recording.get_or_insert_with(Vec::new);
    }

    /// The run so far, if recording.
    pub fn record(&self) -> Option<RunRecord> {
        self.recording.as_ref().map(|entries| RunRecord {
            course_hash: self.course.hash().to_string(),
            tick_hz: self.tick_hz,
            site: self.site.clone(),
            entries: entries.clone(),
            wall_duration: 0.0,
        })
    }

    /// Advances one tick using the latched input. Returns the events of this
    /// tick.
    pub fn tick(&mut self) -> Result<Vec<Event>, SessionError> {
        let tick = self.tick + 1;
        let input = self.input;
        let robot = &self.course.robot;
        let cfg = robot.growth;
        let dt = self.dt;
        let mut events = Vec::new();
        if input.estop {
            self.estop_latched = true;
        }

        let was_saturated = self.saturated;
        let (pressures, saturated, u, v_free) = if self.estop_latched {
            self.growth = growth::estop(&self.growth);
            (PressureCommand::ZERO, false, 0.0, 0.0)
        } else {
            let arc = quat_to_arc(&input.q, robot.joystick_length)?;
            let alloc = solve_pressures(&arc_to_tip(&arc), &robot.layout)?;
            let (p, clipped) = saturate(&alloc.command, &robot.layout);
            self.growth.p_body = growth::pot_to_pressure(input.r_p, &cfg);
            let omega_d = growth::pot_to_speed(input.r_m, input.d, &cfg);
            let raw = growth::pi_motor(omega_d, self.growth.omega, &mut self.growth, dt, &cfg)?;
            let u = growth::backdrive_guard(raw, &cfg).clamp(-cfg.u_max, cfg.u_max);
            self.growth.u = u;
            let v_free = growth::growth_rate(self.growth.p_body, f64::INFINITY, &cfg);
            (p, alloc.saturated || clipped, u, v_free)
        };
        self.pressures = pressures;
        self.saturated = saturated;

        let motion = growth::advance_spool(self.growth.omega, u, v_free, dt, &cfg);
        let mut speed = if motion.retraction > 0.0 {
            -motion.retraction
        } else {
            motion.growth
        };
        let room = (robot.body_length - self.body.total_length).max(0.0);
        speed = speed.min(room / (0.01 * dt));

        let report = body::step(
            &mut self.body,
            &self.course.environment,
            &mut self.scene,
            &pressures,
            speed,
            dt,
            tick,
            &self.params,
        )?;
        let achieved = report.advance / (0.01 * dt);

        // A taut string holds the spool back to what the body took up, unless
        // the motor itself is paying material out. Nothing reels in a body
        // that will not move.
        let r = cfg.spool_radius;
        let mut omega = motion.omega;
        if omega < 0.0 {
            if growth::net_drive(u, &cfg) >= 0.0 {
                omega = omega.max(-achieved.max(0.0) / r);
            }
        } else if omega > 0.0 {
            omega = omega.min((-achieved).max(0.0) / r);
        }
        self.growth.omega = omega;
        self.growth.length = self.body.total_length;
        self.unspool_rate = (-omega).max(0.0) * r;
        self.growth.tension = self.unspool_rate <= achieved.max(0.0) + 1e-9;
        self.growth_rate = achieved;

        if saturated && !was_saturated {
            events.push(Event {
                kind: EventKind::Saturated,
                tick,
                position: self.body.tip(),
            });
        }
        events.extend(report.events);

        self.tick = tick;
        self.hash = self.chain_hash(&input, report.frozen);
        self.pending.extend(events.iter().cloned());
        if let Some(rec) = self.recording.as_mut() {
            rec.push(RecordEntry {
                tick,
                input,
                state_hash: hex::encode(self.hash),
                events: events.clone(),
            });
        }
        Ok(events)
    }

    /// Runs `n` ticks with the current input.
    pub fn run_ticks(&mut self, n: u64) -> Result<Vec<Event>, SessionError> {
        let mut events = Vec::new();
        for _ in 0..n {
            events.extend(self.tick()?);
        }
        Ok(events)
    }

    /// View of the last completed tick, with the events since the last
    /// [`Session::publish`].
    pub fn snapshot(&self) -> Snapshot {
        Snapshot::capture(self, self.pending.clone())
    }

    /// Like [`Session::snapshot`], then forgets the reported events.
    pub fn publish(&mut self) -> Snapshot {
        let events = std::mem::take(&mut self.pending);
        Snapshot::capture(self, events)
    }

    pub(crate) fn max_backbone_points(&self) -> usize {
        self.max_backbone_points
    }

    pub(crate) fn saturated(&self) -> bool {
        self.saturated
    }

    fn chain_hash(&self, input: &TeleopInput, frozen: usize) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.hash);
        h.update(self.tick.to_le_bytes());
        let d: i8 = input.d.into();
        let flags = [d as u8, input.estop as u8, self.estop_latched as u8, self.saturated as u8];
        h.update(flags);
        let b = &self.body;
        let g = &self.growth;
        let p = &self.pressures;
        let mut floats = vec![
            input.q.w,
            input.q.x,
            input.q.y,
            input.q.z,
            input.r_p,
            input.r_m,
            b.active.kappa,
            b.active.phi,
            b.active.s,
            b.total_length,
            b.deflection[0],
            b.deflection[1],
            g.p_body,
            g.omega,
            g.omega_d,
            g.u,
            g.integ,
            g.prev_error.unwrap_or(f64::NAN),
            p.p1,
            p.p2,
            p.p3,
        ];
        let laid = &b.laid;
        // Laid poses never change once appended, so hashing the new ones
        // covers the whole backbone across the chain. Retraction is caught
        // by the pose count and the last pose.
        let fresh = frozen.min(laid.len());
        for l in laid[laid.len() - fresh..].iter().chain(laid.last()) {
            floats.extend(l.pose.position.iter());
            floats.extend(l.pose.orientation.coords.iter());
            floats.push(l.s);
        }
        for c in self.scene.cylinders.values() {
            floats.extend(c.offset.iter());
            floats.push(c.pushed);
            floats.push(if c.toppled { 1.0 } else { 0.0 });
        }
        for f in floats {
            h.update(f.to_bits().to_le_bytes());
        }
        h.update((laid.len() as u64).to_le_bytes());
        h.finalize().into()
    }
}

fn initial_hash(course_hash: &str, site: &str, tick_hz: f64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(course_hash.as_bytes());
    h.update([0]);
    h.update(site.as_bytes());
    h.update([0]);
    h.update(tick_hz.to_bits().to_le_bytes());
    h.finalize().into()
}

/// Input that grows straight at a given speed-pot setting with the pressure
/// pot fully open.
pub fn growth_input(r_m: f64, adc_max: f64) -> TeleopInput {
    TeleopInput {
        r_p: adc_max,
        r_m,
        d: Direction::Growth,
        ..TeleopInput::default()
    }
}
