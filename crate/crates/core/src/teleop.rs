//! Operator input as latched by the session each tick.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::growth::Direction;
use crate::kinematics::{KinematicsError, Quaternion};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InputError {
    #[error("input needs exactly one of `q` or `bend`")]
    Orientation,
    #[error("{0}")]
    Kinematics(#[from] KinematicsError),
    #[error("{name} = {value} is outside the ADC range [0, {max}]")]
    PotOutOfRange { name: &'static str, value: f64, max: f64 },
}

/// One tick's worth of joystick, potentiometer and switch state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeleopInput {
    pub q: Quaternion,
    /// Pressure potentiometer (counts).
    pub r_p: f64,
    /// Speed potentiometer (counts).
    pub r_m: f64,
    pub d: Direction,
    pub estop: bool,
}

impl Default for TeleopInput {
    fn default() -> Self {
        Self {
            q: Quaternion::IDENTITY,
            r_p: 0.0,
            r_m: 0.0,
            d: Direction::Growth,
            estop: false,
        }
    }
}

impl TeleopInput {
    /// Normalizes `q` and checks the potentiometers against `[0, adc_max]`.
    pub fn validated(mut self, adc_max: f64) -> Result<Self, InputError> {
        self.q = self.q.normalized()?;
        for (name, value) in [("r_p", self.r_p), ("r_m", self.r_m)] {
            if !(value.is_finite() && (0.0..=adc_max).contains(&value)) {
                return Err(InputError::PotOutOfRange { name, value, max: adc_max });
            }
        }
        Ok(self)
    }
}

/// Bend parameters a client may send instead of a quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bend {
    pub kappa: f64,
    pub phi: f64,
}

/// Input as it arrives on the wire: orientation as either `q` or `bend`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputMessage {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Quaternion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bend: Option<Bend>,
    pub r_p: f64,
    pub r_m: f64,
    pub d: Direction,
    #[serde(default)]
    pub estop: bool,
}

impl InputMessage {
    /// Converts to a validated [`TeleopInput`]. A bend is turned into the
    /// joystick orientation of an arc of `joystick_length`.
    pub fn into_input(self, joystick_length: f64, adc_max: f64) -> Result<TeleopInput, InputError> {
        let q = match (self.q, self.bend) {
            (Some(q), None) => q,
            (None, Some(b)) => Quaternion::from_bend(b.kappa, b.phi, joystick_length)?,
            _ => return Err(InputError::Orientation),
        };
        TeleopInput {
            q,
            r_p: self.r_p,
            r_m: self.r_m,
            d: self.d,
            estop: self.estop,
        }
        .validated(adc_max)
    }
}

impl From<TeleopInput> for InputMessage {
    fn from(i: TeleopInput) -> Self {
        Self {
            q: Some(i.q),
            bend: None,
            r_p: i.r_p,
            r_m: i.r_m,
            d: i.d,
            estop: i.estop,
        }
    }
}
