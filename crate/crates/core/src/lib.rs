//! Mid-air ultrasonic hand guidance with a haptic cone.
//!
//! The crate models the full guidance loop: a tiled 40 kHz phased array
//! ([`array`]) focuses ultrasound ([`acoustics`]); a single focus is swept
//! around a circle by spatio-temporal modulation ([`stm`]); the circle is the
//! horizontal cross-section of a virtual cone whose apex is the target
//! ([`cone`]); a hand sensor with frame-rate and latency limits closes the
//! loop ([`tracking`]); a simulated participant perceives the circle on its
//! palm and moves toward the apex ([`agent`]); and the experiment protocol
//! runs the fourteen-goal sets and computes the error metrics
//! ([`experiment`], [`export`]).
//!
//! All lengths are millimetres, times are seconds and speeds for human motion
//! are metres per second unless a field name says otherwise.

pub mod acoustics;
pub mod agent;
pub mod array;
pub mod config;
pub mod cone;
pub mod experiment;
pub mod export;
pub mod stm;
pub mod tracking;

/// Point or displacement in the array frame (mm). `x`,`y` span the array
/// surface and `z` points away from it.
pub type Vec3 = nalgebra::Vector3<f64>;
/// Point or displacement in a horizontal plane (mm).
pub type Vec2 = nalgebra::Vector2<f64>;

pub use acoustics::{FieldSample, Medium, PhaseVector};
pub use agent::{AgentParams, GuidanceLoop, PalmModel, Percept, PolicyRun};
pub use array::{ArrayLayout, Transducer, TransducerArray, UnitGrid, Workspace};
pub use config::SimulationConfig;
pub use cone::{CrossSection, GuidanceCone, KBranch};
pub use experiment::{Goal, GoalKind, SetSummary, TrialMetrics, TrialResult};
pub use stm::{CircleStimulus, FocusSchedule, StmParams};
pub use tracking::{HandSample, MarkerSet, SampledTrajectory, SensorModel, Trajectory};
