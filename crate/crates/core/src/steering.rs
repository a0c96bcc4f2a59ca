//! Steering pressure allocation for three series pouch motors.
//!
//! Each motor pulls the tip toward its placement angle with a displacement
//! proportional to its pressure, and the tip position is the sum of the
//! three contributions. Two tip coordinates and three pressures leave one
//! redundant direction; it is resolved by keeping the smallest pressure at
//! (numerically) zero so opposing motors never co-contract.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::TipPosition;

const BISECTION_MAX_ITER: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SteeringError {
    #[error("degenerate actuator layout: {0}")]
    DegenerateLayout(String),
    #[error("invalid steering input: {0}")]
    InvalidInput(&'static str),
}

/// Placement and gain of the three steering actuators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorLayout {
    /// Placement angles (rad), counterclockwise from `+x`.
    pub psi: [f64; 3],
    /// Tip displacement per unit pressure (m/kPa).
    pub c: f64,
    /// Saturation pressure (kPa).
    pub p_max: f64,
    /// How close to zero the smallest pressure must be (kPa).
    pub null_tolerance: f64,
}

impl Default for ActuatorLayout {
    fn default() -> Self {
        Self::equally_spaced(0.01, 14.0)
    }
}

impl ActuatorLayout {
    /// Motors at 90, 210 and 330 degrees.
    pub fn equally_spaced(c: f64, p_max: f64) -> Self {
        Self {
            psi: [PI / 2.0, 7.0 * PI / 6.0, 11.0 * PI / 6.0],
            c,
            p_max,
            null_tolerance: 1e-9,
        }
    }

    pub fn validate(&self) -> Result<(), SteeringError> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(SteeringError::DegenerateLayout(format!("gain c must be > 0, got {}", self.c)));
        }
        if !(self.p_max.is_finite() && self.p_max > 0.0) {
            return Err(SteeringError::DegenerateLayout(format!(
                "p_max must be > 0, got {}",
                self.p_max
            )));
        }
        if !(self.null_tolerance.is_finite() && self.null_tolerance > 0.0) {
            return Err(SteeringError::DegenerateLayout("null tolerance must be > 0".into()));
        }
        if self.psi.iter().any(|a| !a.is_finite()) {
            return Err(SteeringError::DegenerateLayout("placement angles must be finite".into()));
        }
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            if (self.psi[j] - self.psi[i]).sin().abs() < 1e-9 {
                return Err(SteeringError::DegenerateLayout(format!(
                    "motors {} and {} are collinear",
                    i + 1,
                    j + 1
                )));
            }
        }
        Ok(())
    }

    /// Pressures `(a1, a2, 1)` along which the tip does not move, and the
    /// solution at `p3 = 0`. Both follow from eliminating `p1` and `p2`.
    fn null_line(&self, tip: &TipPosition) -> ([f64; 3], [f64; 3]) {
        let [s1, s2, s3] = self.psi;
        let d12 = (s2 - s1).sin();
        let d21 = (s1 - s2).sin();
        let n = [(s3 - s2).sin() / d12, (s3 - s1).sin() / d21, 1.0];
        let b = [
            (tip.x * s2.sin() - tip.y * s2.cos()) / (self.c * d12),
            (tip.x * s1.sin() - tip.y * s1.cos()) / (self.c * d21),
            0.0,
        ];
        (n, b)
    }
}

/// Commanded pressures for the three steering motors (kPa).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PressureCommand {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
}

impl PressureCommand {
    pub const ZERO: PressureCommand = PressureCommand {
        p1: 0.0,
        p2: 0.0,
        p3: 0.0,
    };

    pub fn new(p1: f64, p2: f64, p3: f64) -> Self {
        Self { p1, p2, p3 }
    }

    pub fn from_array(p: [f64; 3]) -> Self {
        Self::new(p[0], p[1], p[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.p1, self.p2, self.p3]
    }

    pub fn min(&self) -> f64 {
        self.p1.min(self.p2).min(self.p3)
    }

    pub fn max(&self) -> f64 {
        self.p1.max(self.p2).max(self.p3)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::new(self.p1 * k, self.p2 * k, self.p3 * k)
    }
}

/// Result of [`solve_pressures`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub command: PressureCommand,
    /// The target was pulled radially inward to respect `p_max`.
    pub saturated: bool,
}

/// Tip displacement produced by a set of pressures.
pub fn superpose_tip(p: &PressureCommand, layout: &ActuatorLayout) -> TipPosition {
    let (mut x, mut y) = (0.0, 0.0);
    for (pi, psi) in p.to_array().iter().zip(layout.psi) {
        x += pi * psi.cos();
        y += pi * psi.sin();
    }
    TipPosition::new(layout.c * x, layout.c * y)
}

/// Nonnegative pressures that place the tip at `tip`, with the smallest at zero.
///
/// The third pressure starts at zero and is moved along the null line until
/// every pressure is nonnegative; when all null-line components are positive
/// the feasibility boundary is found by bisection. Targets that would need
/// more than `p_max` are scaled toward the origin, keeping their direction.
pub fn solve_pressures(tip: &TipPosition, layout: &ActuatorLayout) -> Result<Allocation, SteeringError> {
    layout.validate()?;
    if !(tip.x.is_finite() && tip.y.is_finite()) {
        return Err(SteeringError::InvalidInput("tip position must be finite"));
    }
    if tip.x == 0.0 && tip.y == 0.0 {
        return Ok(Allocation {
            command: PressureCommand::ZERO,
            saturated: false,
        });
    }

    let (n, b) = layout.null_line(tip);
    let at = |t: f64| [b[0] + n[0] * t, b[1] + n[1] * t, b[2] + n[2] * t];
    let feasible = |t: f64| at(t).iter().all(|&p| p >= 0.0);

    let t = if n.iter().all(|&v| v > 0.0) {
        bisect_null_coordinate(&feasible, &n, layout.null_tolerance)
    } else {
        interval_null_coordinate(&n, &b)
    };

    let Some(t) = t else {
        // No nonnegative combination points this way.
        return Ok(Allocation {
            command: PressureCommand::ZERO,
            saturated: true,
        });
    };

    let mut command = PressureCommand::from_array(at(t).map(|p| p.max(0.0)));
    let peak = command.max();
    let saturated = peak > layout.p_max;
    if saturated {
        // The minimal solution is positively homogeneous in the target.
        command = command.scaled(layout.p_max / peak);
    }
    Ok(Allocation { command, saturated })
}

/// Smallest feasible null coordinate when feasibility is monotone in it.
fn bisect_null_coordinate(feasible: &dyn Fn(f64) -> bool, n: &[f64; 3], tol: f64) -> Option<f64> {
    let n_max = n.iter().cloned().fold(0.0, f64::max);
    let (mut lo, mut hi);
    let mut step = 1.0;
    if feasible(0.0) {
        hi = 0.0;
        lo = -step;
        while feasible(lo) {
            step *= 2.0;
            lo = -step;
            if !lo.is_finite() {
                return None;
            }
        }
    } else {
        lo = 0.0;
        hi = step;
        while !feasible(hi) {
            step *= 2.0;
            hi = step;
            if !hi.is_finite() {
                return None;
            }
        }
    }
    for _ in 0..BISECTION_MAX_ITER {
        if (hi - lo) * n_max <= 0.5 * tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Feasible interval for mixed-sign null directions; picks the end with the
/// least total pressure.
fn interval_null_coordinate(n: &[f64; 3], b: &[f64; 3]) -> Option<f64> {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..3 {
        if n[i] > 0.0 {
            lo = lo.max(-b[i] / n[i]);
        } else if n[i] < 0.0 {
            hi = hi.min(-b[i] / n[i]);
        } else if b[i] < 0.0 {
            return None;
        }
    }
    if lo > hi {
        return None;
    }
    let sum_slope: f64 = n.iter().sum();
    let pick = if sum_slope >= 0.0 { lo } else { hi };
    pick.is_finite().then_some(pick)
}

/// Clamps every pressure into `[0, p_max]`; the flag reports any clamping.
pub fn saturate(p: &PressureCommand, layout: &ActuatorLayout) -> (PressureCommand, bool) {
    let clamped = PressureCommand::from_array(p.to_array().map(|v| v.clamp(0.0, layout.p_max)));
    (clamped, clamped != *p)
}
