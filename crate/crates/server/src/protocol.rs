//! Wire frames. Every frame is one JSON object on one line carrying a `seq`
//! number and a `kind` tag; the remaining keys depend on the kind.
//!
//! Client to server: `hello`, `start_trial`, `hand_move`, `reached`, `abort`.
//! Server to client: `hello`, `start_trial`, `stimulus`, `trial_result`,
//! `abort`.
//!
//! Server frames only ever carry palm-local data: dot offsets relative to the
//! palm centre, never the hand, goal or cone parameters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PROTOCOL_VERSION: &str = "haptic-cone/1";

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("field `{0}` must be finite")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame<M> {
    pub seq: u64,
    #[serde(flatten)]
    pub message: M,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClientMessage {
    Hello {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        client: Option<String>,
    },
    StartTrial,
    /// Hand displacement since the previous move (mm).
    HandMove { dx: f64, dy: f64, dz: f64 },
    Reached,
    Abort {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dot {
    /// STM slot, `0..n_points`.
    pub slot: usize,
    /// Offset from the palm centre (mm).
    pub dx: f64,
    pub dy: f64,
    /// Radiation pressure at the palm relative to the focus, in `[0, 1]`.
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        session_id: u64,
        protocol: String,
        palm_radius: f64,
        frame_rate: f64,
        /// Suggested client speed clamp (m/s).
        max_speed: f64,
        trials_per_set: usize,
        sets: usize,
        n_points: usize,
    },
    StartTrial {
        set: usize,
        /// Position within the set, 0-based.
        index: usize,
    },
    Stimulus {
        /// Trial time of the sensor frame (ms).
        t_ms: u64,
        /// Slot being rendered at `t_ms`; absent when nothing is rendered.
        active_slot: Option<usize>,
        n_points: usize,
        dwell_ms: f64,
        /// The felt dots only.
        dots: Vec<Dot>,
    },
    TrialResult {
        set: usize,
        goal_id: u8,
        completed: bool,
        aborted: bool,
        eps_xyz: f64,
        eps_xy: f64,
        duration: f64,
        seed: u64,
    },
    Abort { reason: String },
}

pub type ClientFrame = Frame<ClientMessage>;
pub type ServerFrame = Frame<ServerMessage>;

fn finite(v: f64, name: &'static str) -> Result<(), DecodeError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(DecodeError::NonFinite(name))
    }
}

impl ClientFrame {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if let ClientMessage::HandMove { dx, dy, dz } = self.message {
            finite(dx, "dx")?;
            finite(dy, "dy")?;
            finite(dz, "dz")?;
        }
        Ok(())
    }
}

impl ServerFrame {
    pub fn validate(&self) -> Result<(), DecodeError> {
        match &self.message {
            ServerMessage::Hello { palm_radius, frame_rate, max_speed, .. } => {
                finite(*palm_radius, "palm_radius")?;
                finite(*frame_rate, "frame_rate")?;
                finite(*max_speed, "max_speed")
            }
            ServerMessage::Stimulus { dwell_ms, dots, .. } => {
                finite(*dwell_ms, "dwell_ms")?;
                for d in dots {
                    finite(d.dx, "dx")?;
                    finite(d.dy, "dy")?;
                    finite(d.intensity, "intensity")?;
                }
                Ok(())
            }
            ServerMessage::TrialResult { eps_xyz, eps_xy, duration, .. } => {
                finite(*eps_xyz, "eps_xyz")?;
                finite(*eps_xy, "eps_xy")?;
                finite(*duration, "duration")
            }
            ServerMessage::StartTrial { .. } | ServerMessage::Abort { .. } => Ok(()),
        }
    }
}

pub fn encode<M: Serialize>(frame: &Frame<M>) -> String {
    serde_json::to_string(frame).expect("frames serialise")
}

pub fn decode_client(raw: &str) -> Result<ClientFrame, DecodeError> {
    let f: ClientFrame = serde_json::from_str(raw).map_err(|e| DecodeError::Malformed(e.to_string()))?;
    f.validate()?;
    Ok(f)
}

pub fn decode_server(raw: &str) -> Result<ServerFrame, DecodeError> {
    let f: ServerFrame = serde_json::from_str(raw).map_err(|e| DecodeError::Malformed(e.to_string()))?;
    f.validate()?;
    Ok(f)
}
