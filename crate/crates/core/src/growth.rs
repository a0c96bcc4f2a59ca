//! Growth control: main-body pressure, spool motor speed loop, and the rule
//! that keeps the motor from paying out material faster than the robot grows.
//!
//! Sign convention: negative motor speed and voltage unspool material
//! (growth), positive speed and voltage reel it in (retraction).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrowthError {
    #[error("time step must be positive and finite, got {0}")]
    InvalidTimestep(f64),
    #[error("invalid growth configuration: {0}")]
    InvalidConfig(String),
}

/// Motor direction switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Direction {
    Growth,
    Retraction,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Growth => -1.0,
            Direction::Retraction => 1.0,
        }
    }
}

impl From<Direction> for i8 {
    fn from(d: Direction) -> i8 {
        match d {
            Direction::Growth => -1,
            Direction::Retraction => 1,
        }
    }
}

impl TryFrom<i8> for Direction {
    type Error = String;

    fn try_from(v: i8) -> Result<Self, Self::Error> {
        match v {
            -1 => Ok(Direction::Growth),
            1 => Ok(Direction::Retraction),
            other => Err(format!("direction must be -1 (growth) or 1 (retraction), got {other}")),
        }
    }
}

/// Gains and physical limits of the growth subsystem.
///
/// Lengths are in centimeters here, matching how the hardware is specified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrowthConfig {
    /// Pressure per potentiometer count (kPa/count).
    pub c_p: f64,
    /// Pressure potentiometer reading at zero pressure.
    pub r_p0: f64,
    /// Motor speed per potentiometer count ((rad/s)/count).
    pub c_m: f64,
    /// Speed potentiometer reading at zero speed.
    pub r_m0: f64,
    /// Proportional gain (V·s/rad).
    pub k_p: f64,
    /// Integral gain (V/rad).
    pub k_i: f64,
    /// Minimum main-body pressure for eversion (kPa).
    pub p_grow: f64,
    /// Main-body pressure limit (kPa).
    pub p_body_max: f64,
    /// Compressor flow limit (cm³/s).
    pub q_max: f64,
    /// Main body tube radius (cm).
    pub body_radius: f64,
    /// Growth speed limit (cm/s).
    pub v_max: f64,
    /// Voltage that just cancels gearbox Coulomb friction (V).
    pub coulomb_u: f64,
    /// Spool radius (cm).
    pub spool_radius: f64,
    /// Motor driver voltage limit (V).
    pub u_max: f64,
    /// Unloaded motor speed per volt beyond friction ((rad/s)/V).
    pub motor_gain: f64,
    /// Spool speed time constant (s).
    pub motor_tau: f64,
    /// Full-scale ADC count for both potentiometers.
    pub adc_max: f64,
    /// Replace growth-direction motor torque with the friction-cancel voltage.
    pub backdrive_guard: bool,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        Self::with_limits(14.0, 2.5)
    }
}

impl GrowthConfig {
    /// Defaults for a robot with the given pressure limit and tube radius.
    /// Both potentiometers span their full range over `[0, limit]`.
    pub fn with_limits(p_body_max: f64, body_radius: f64) -> Self {
        let adc_max = 1023.0;
        let spool_radius = 2.5;
        let v_max = 10.0;
        Self {
            c_p: p_body_max / adc_max,
            r_p0: 0.0,
            // 1.5x headroom over the speed needed for v_max.
            c_m: 1.5 * v_max / spool_radius / adc_max,
            r_m0: 0.0,
            k_p: 0.8,
            k_i: 4.0,
            p_grow: 3.0,
            p_body_max,
            q_max: 470.0,
            body_radius,
            v_max,
            coulomb_u: 0.6,
            spool_radius,
            u_max: 12.0,
            motor_gain: 1.5,
            motor_tau: 0.05,
            adc_max,
            backdrive_guard: true,
        }
    }

    pub fn validate(&self) -> Result<(), GrowthError> {
        let positive = [
            ("c_p", self.c_p),
            ("c_m", self.c_m),
            ("k_p", self.k_p),
            ("k_i", self.k_i),
            ("p_grow", self.p_grow),
            ("p_body_max", self.p_body_max),
            ("q_max", self.q_max),
            ("body_radius", self.body_radius),
            ("v_max", self.v_max),
            ("coulomb_u", self.coulomb_u),
            ("spool_radius", self.spool_radius),
            ("u_max", self.u_max),
            ("motor_gain", self.motor_gain),
            ("motor_tau", self.motor_tau),
            ("adc_max", self.adc_max),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(GrowthError::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.p_grow >= self.p_body_max {
            return Err(GrowthError::InvalidConfig(format!(
                "p_grow ({}) must be below p_body_max ({})",
                self.p_grow, self.p_body_max
            )));
        }
        if self.coulomb_u >= self.u_max {
            return Err(GrowthError::InvalidConfig("coulomb_u must be below u_max".into()));
        }
        Ok(())
    }

    /// Growth speed the compressor can sustain, `Q_max / (pi r^2)` (cm/s).
    pub fn flow_ceiling(&self) -> f64 {
        self.q_max / (PI * self.body_radius * self.body_radius)
    }

    /// Bound on the integral accumulator so `k_i * integ` stays within `u_max`.
    pub fn integral_cap(&self) -> f64 {
        self.u_max / self.k_i
    }
}

/// Growth-side state advanced once per tick.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GrowthState {
    /// Main-body pressure (kPa).
    pub p_body: f64,
    /// Measured motor speed (rad/s).
    pub omega: f64,
    /// Desired motor speed (rad/s).
    pub omega_d: f64,
    /// Motor voltage actually applied (V).
    pub u: f64,
    /// Integrated speed error (rad).
    pub integ: f64,
    /// Speed error at the previous update, for trapezoidal integration.
    pub prev_error: Option<f64>,
    /// Deployed length (m).
    pub length: f64,
    /// String and body are taut.
    pub tension: bool,
}

impl GrowthState {
    pub fn new() -> Self {
        Self {
            tension: true,
            ..Default::default()
        }
    }
}

/// Main-body pressure from the pressure potentiometer, clamped to `[0, p_body_max]`.
pub fn pot_to_pressure(r_p: f64, cfg: &GrowthConfig) -> f64 {
    (cfg.c_p * (r_p - cfg.r_p0)).clamp(0.0, cfg.p_body_max)
}

/// Desired motor speed from the speed potentiometer and direction switch.
pub fn pot_to_speed(r_m: f64, direction: Direction, cfg: &GrowthConfig) -> f64 {
    direction.sign() * cfg.c_m * (r_m - cfg.r_m0)
}

/// PI speed loop. Updates the integral in `state` and returns the raw voltage.
///
/// The integral uses the trapezoidal rule over successive errors and is
/// clamped to [`GrowthConfig::integral_cap`].
pub fn pi_motor(
    omega_d: f64,
    omega: f64,
    state: &mut GrowthState,
    dt: f64,
    cfg: &GrowthConfig,
) -> Result<f64, GrowthError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(GrowthError::InvalidTimestep(dt));
    }
    let error = omega_d - omega;
    let prev = state.prev_error.unwrap_or(error);
    let cap = if cfg.k_i > 0.0 { cfg.integral_cap() } else { f64::INFINITY };
    state.integ = (state.integ + 0.5 * (prev + error) * dt).clamp(-cap, cap);
    state.prev_error = Some(error);
    state.omega_d = omega_d;
    Ok(cfg.k_p * error + cfg.k_i * state.integ)
}

/// Voltage that would turn the spool in the growth direction is replaced by
/// the friction-cancel voltage, so the spool only pays out when pulled.
pub fn backdrive_guard(u: f64, cfg: &GrowthConfig) -> f64 {
    if cfg.backdrive_guard && u < 0.0 {
        -cfg.coulomb_u
    } else {
        u
    }
}

/// Speed the main-body pressure alone would drive, before any motor limit.
pub fn pressure_speed(p_body: f64, cfg: &GrowthConfig) -> f64 {
    if p_body < cfg.p_grow {
        return 0.0;
    }
    let frac = ((p_body - cfg.p_grow) / (cfg.p_body_max - cfg.p_grow)).clamp(0.0, 1.0);
    cfg.v_max * frac
}

/// Growth speed (cm/s): zero below the eversion pressure, otherwise the
/// smallest of the pressure-driven speed, the compressor flow ceiling, the
/// motor allowance and `v_max`.
pub fn growth_rate(p_body: f64, motor_allowance: f64, cfg: &GrowthConfig) -> f64 {
    if !(p_body >= cfg.p_grow) {
        return 0.0;
    }
    pressure_speed(p_body, cfg)
        .min(cfg.flow_ceiling())
        .min(motor_allowance.max(0.0))
        .min(cfg.v_max)
}

/// Emergency stop: vents the main body and zeroes the motor command.
pub fn estop(state: &GrowthState) -> GrowthState {
    GrowthState {
        p_body: 0.0,
        u: 0.0,
        integ: 0.0,
        omega_d: 0.0,
        prev_error: None,
        ..*state
    }
}

/// Voltage left after gearbox friction.
pub fn net_drive(u: f64, cfg: &GrowthConfig) -> f64 {
    u.signum() * (u.abs() - cfg.coulomb_u).max(0.0)
}

/// Spool motion over one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpoolMotion {
    /// Spool speed at the end of the tick (rad/s).
    pub omega: f64,
    /// Growth speed the spool permits (cm/s); 0 when reeling in.
    pub growth: f64,
    /// Rate material leaves the spool (cm/s).
    pub unspool: f64,
    /// Rate material is reeled in (cm/s).
    pub retraction: f64,
    /// Unspooling does not outpace growth.
    pub tension: bool,
}

/// Advances the spool under motor voltage `u` while pressure tries to grow
/// the body at `v_free` cm/s.
///
/// The spool relaxes toward the speed at which the pressure pull and the net
/// motor drive balance. While the motor is not driving material out, the taut
/// string keeps the spool from turning faster than the body grows.
pub fn advance_spool(omega: f64, u: f64, v_free: f64, dt: f64, cfg: &GrowthConfig) -> SpoolMotion {
    let drive = net_drive(u, cfg);
    let pull = -v_free / cfg.spool_radius;
    let target = pull + cfg.motor_gain * drive;
    let alpha = 1.0 - (-dt / cfg.motor_tau).exp();
    let mut next = omega + alpha * (target - omega);
    if drive >= 0.0 {
        next = next.max(pull);
    }
    let unspool = (-next).max(0.0) * cfg.spool_radius;
    let tension = next >= pull - 1e-12;
    let growth = if tension { unspool.min(v_free) } else { v_free };
    SpoolMotion {
        omega: next,
        growth,
        unspool,
        retraction: next.max(0.0) * cfg.spool_radius,
        tension,
    }
}
