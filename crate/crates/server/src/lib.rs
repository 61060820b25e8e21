//! Trial server for the haptic-cone guidance task.
//!
//! A browser client steers a virtual hand; the server runs the same cone,
//! STM and sensor models as the offline simulation and returns only what a
//! palm would feel. See [`protocol`] for the frame format.

pub mod protocol;
pub mod session;
pub mod transport;

pub use protocol::{ClientFrame, ClientMessage, DecodeError, Dot, Frame, ServerFrame, ServerMessage, PROTOCOL_VERSION};
pub use session::{ServerSettings, Session, TrialState, TrialTranscript};
pub use transport::TrialServer;
