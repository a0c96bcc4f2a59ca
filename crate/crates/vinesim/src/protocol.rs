//! JSON messages exchanged over the WebSocket, one per text frame.

use serde::{Deserialize, Serialize};
use vinesim_core::body::Event;
use vinesim_core::scenario::{CourseDocument, ScoreReport};
use vinesim_core::session::Snapshot;
use vinesim_core::teleop::InputMessage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinMode {
    Operate,
    Observe,
}

/// Client to server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Input(InputMessage),
    EstopClear,
    Join { mode: JoinMode },
}

/// Server to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    /// Sent once on connect; everything a client needs to draw the course.
    Hello(Box<Hello>),
    State(Snapshot),
    Event(Event),
    Score(ScoreReport),
    Ack(Ack),
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub course_hash: String,
    pub site: String,
    pub tick_hz: f64,
    pub snapshot_hz: f64,
    pub mode: JoinMode,
    pub course: CourseDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    /// `input`, `estop_clear` or `join`.
    pub request: String,
    /// The client's mode after the request.
    pub mode: JoinMode,
    /// Tick the request takes effect on.
    pub tick: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl ServerMessage {
    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}
