//! One client session: a deterministic state machine driven by incoming text
//! frames and a millisecond clock supplied by the caller.
//!
//! The person at the client replaces the simulated agent. Their hand moves
//! feed the same delayed sensor model the simulation uses, and every sensor
//! frame the server sends the dots a palm at the current hand position would
//! feel of the circle rendered for the delayed position.

use std::sync::Arc;

use haptic_cone::acoustics::relative_radiation_pressure;
use haptic_cone::agent::felt_slots;
use haptic_cone::config::ConfigError;
use haptic_cone::experiment::{evaluate_trial, plan_trials, ProtocolConfig, TrialConfig, TrialMetrics};
use haptic_cone::tracking::{observe, HandSample, Trajectory};
use haptic_cone::{GuidanceCone, GuidanceLoop, Medium, SampledTrajectory, SimulationConfig, TransducerArray, Vec3};
use serde::Serialize;

use crate::protocol::{decode_client, encode, ClientFrame, ClientMessage, Dot, Frame, ServerFrame, ServerMessage, PROTOCOL_VERSION};

/// Shared, read-only setup for every session.
#[derive(Debug, Clone)]
pub struct ServerSettings {
    pub sim: SimulationConfig,
    pub protocol: ProtocolConfig,
    pub array: TransducerArray,
    /// Session `n` plans its trials from `master_seed + n`.
    pub master_seed: u64,
    /// Silence after which the session is aborted (ms).
    pub idle_timeout_ms: u64,
    /// Speed clamp advertised to clients (m/s).
    pub max_speed: f64,
}

impl ServerSettings {
    pub fn new(sim: SimulationConfig, master_seed: u64) -> Result<Self, ConfigError> {
        sim.validate()?;
        Ok(Self {
            protocol: sim.protocol()?,
            array: sim.build_array()?,
            sim,
            master_seed,
            idle_timeout_ms: 120_000,
            max_speed: 0.45,
        })
    }

    fn medium(&self) -> &Medium {
        &self.sim.medium
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialState {
    Idle,
    Running,
    Finished,
}

/// JSON-lines record of every frame exchanged during one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialTranscript {
    pub session_id: u64,
    pub set: usize,
    pub index: usize,
    pub goal_id: u8,
    pub lines: Vec<String>,
}

impl TrialTranscript {
    pub fn file_name(&self) -> String {
        format!("session{}_set{}_trial{:02}.jsonl", self.session_id, self.set, self.index)
    }
}

#[derive(Debug, Serialize)]
struct TranscriptLine<'a> {
    t_ms: u64,
    dir: &'a str,
    frame: &'a serde_json::value::RawValue,
}

#[derive(Debug)]
struct Trial {
    config: TrialConfig,
    lp: GuidanceLoop,
    started_ms: u64,
    hand: Vec3,
    trajectory: SampledTrajectory,
    next_frame: u64,
    transcript: Vec<String>,
}

impl Trial {
    fn cone(&self) -> &GuidanceCone {
        &self.lp.cone
    }

    fn frame_ms(&self, n: u64) -> u64 {
        (n as f64 * 1000.0 / self.lp.sensor.frame_rate + 1e-9).floor() as u64
    }
}

#[derive(Debug)]
pub struct Session {
    id: u64,
    settings: Arc<ServerSettings>,
    plan: Vec<TrialConfig>,
    next_trial: usize,
    greeted: bool,
    last_client_seq: Option<u64>,
    out_seq: u64,
    last_activity_ms: u64,
    trial: Option<Trial>,
    state: TrialState,
    closed: bool,
    transcripts: Vec<TrialTranscript>,
    results: Vec<(TrialConfig, TrialMetrics, bool)>,
}

impl Session {
    pub fn new(id: u64, settings: Arc<ServerSettings>, now_ms: u64) -> Self {
        let plan = plan_trials(&settings.protocol, settings.master_seed.wrapping_add(id));
        Self {
            id,
            settings,
            plan,
            next_trial: 0,
            greeted: false,
            last_client_seq: None,
            out_seq: 0,
            last_activity_ms: now_ms,
            trial: None,
            state: TrialState::Idle,
            closed: false,
            transcripts: Vec::new(),
            results: Vec::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn state(&self) -> TrialState {
        self.state
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Trials finished so far with their metrics and whether they were
    /// aborted.
    pub fn results(&self) -> &[(TrialConfig, TrialMetrics, bool)] {
        &self.results
    }

    /// Transcripts of trials finished since the last call.
    pub fn take_transcripts(&mut self) -> Vec<TrialTranscript> {
        std::mem::take(&mut self.transcripts)
    }

    fn emit(&mut self, out: &mut Vec<ServerFrame>, message: ServerMessage, now_ms: u64) {
        self.out_seq += 1;
        let frame = Frame { seq: self.out_seq, message };
        if let Some(trial) = &mut self.trial {
            let raw = encode(&frame);
            trial.transcript.push(transcript_line(now_ms, "out", &raw));
        }
        out.push(frame);
    }

    fn fail(&mut self, out: &mut Vec<ServerFrame>, reason: String, now_ms: u64) {
        log::warn!("session {}: {reason}", self.id);
        self.emit(out, ServerMessage::Abort { reason }, now_ms);
        if self.state == TrialState::Running {
            self.finish(out, now_ms, false, true);
        }
        self.closed = true;
    }

    /// Moves the clock forward: emits due stimulus frames, ends a trial at
    /// its timeout and aborts an idle session.
    pub fn advance(&mut self, now_ms: u64) -> Vec<ServerFrame> {
        let mut out = Vec::new();
        if self.closed {
            return out;
        }
        self.advance_into(&mut out, now_ms);
        out
    }

    fn advance_into(&mut self, out: &mut Vec<ServerFrame>, now_ms: u64) {
        if self.state == TrialState::Running {
            let timeout_ms = (self.settings.protocol.timeout * 1000.0).round() as u64;
            loop {
                let trial = self.trial.as_ref().expect("running trial");
                let due = trial.frame_ms(trial.next_frame);
                let elapsed = now_ms.saturating_sub(trial.started_ms);
                if due > elapsed || due >= timeout_ms {
                    break;
                }
                let stim = self.stimulus_at(trial.next_frame);
                let at = trial.started_ms + due;
                self.trial.as_mut().expect("running trial").next_frame += 1;
                self.emit(out, stim, at);
            }
            let trial = self.trial.as_ref().expect("running trial");
            if now_ms >= trial.started_ms + timeout_ms {
                let at = trial.started_ms + timeout_ms;
                self.finish(out, at, false, false);
            }
        }
        if now_ms.saturating_sub(self.last_activity_ms) > self.settings.idle_timeout_ms {
            self.fail(out, "idle timeout".into(), now_ms);
        }
    }

    fn stimulus_at(&self, n: u64) -> ServerMessage {
        let trial = self.trial.as_ref().expect("running trial");
        let lp = &trial.lp;
        let t = n as f64 / lp.sensor.frame_rate;
        let t_ms = trial.frame_ms(n);
        let palm = trial.trajectory.position_at(t);
        let sensed = observe(&trial.trajectory, t, &lp.sensor, trial.config.seed).position;
        let dwell = lp.stm.dwell();
        let (active_slot, dots) = match lp.stimulus(sensed) {
            Some(schedule) => {
                let dots = felt_slots(&schedule, palm, &lp.palm)
                    .into_iter()
                    .map(|(slot, d)| {
                        let focus = schedule.points()[slot];
                        let at_palm = Vec3::new(focus.x, focus.y, palm.z);
                        let intensity =
                            relative_radiation_pressure(&self.settings.array, focus, at_palm, self.settings.medium()).unwrap_or(0.0);
                        Dot { slot, dx: d.x, dy: d.y, intensity }
                    })
                    .collect();
                (Some(schedule.index_at_time(t)), dots)
            }
            None => (None, Vec::new()),
        };
        ServerMessage::Stimulus {
            t_ms,
            active_slot,
            n_points: lp.stm.n_points,
            dwell_ms: dwell * 1000.0,
            dots,
        }
    }

    fn finish(&mut self, out: &mut Vec<ServerFrame>, now_ms: u64, completed: bool, aborted: bool) {
        let trial = self.trial.as_ref().expect("running trial");
        let elapsed_ms = now_ms.saturating_sub(trial.started_ms);
        let duration = elapsed_ms as f64 / 1000.0;
        let metrics = evaluate_trial(trial.cone(), trial.hand, duration, completed);
        let config = trial.config;
        self.state = TrialState::Finished;
        self.results.push((config, metrics, aborted));
        self.emit(
            out,
            ServerMessage::TrialResult {
                set: config.set,
                goal_id: config.goal_id,
                completed,
                aborted,
                eps_xyz: metrics.eps_xyz,
                eps_xy: metrics.eps_xy,
                duration,
                seed: config.seed,
            },
            now_ms,
        );
        let trial = self.trial.take().expect("running trial");
        self.transcripts.push(TrialTranscript {
            session_id: self.id,
            set: config.set,
            index: config.order,
            goal_id: config.goal_id,
            lines: trial.transcript,
        });
    }

    fn start_trial(&mut self, out: &mut Vec<ServerFrame>, now_ms: u64) {
        let Some(config) = self.plan.get(self.next_trial).copied() else {
            self.fail(out, "all trials are done".into(), now_ms);
            return;
        };
        let goal = self
            .settings
            .protocol
            .goals
            .iter()
            .find(|g| g.id == config.goal_id)
            .expect("planned goal exists");
        let cone = self.settings.protocol.cone_for(goal).expect("validated at startup");
        let start = self.settings.protocol.workspace.start_point;
        let mut trajectory = SampledTrajectory::new();
        trajectory.push(HandSample { timestamp: 0.0, position: start }).expect("first sample");
        self.next_trial += 1;
        self.trial = Some(Trial {
            config,
            lp: self.settings.sim.guidance_loop(cone),
            started_ms: now_ms,
            hand: start,
            trajectory,
            next_frame: 0,
            transcript: Vec::new(),
        });
        self.state = TrialState::Running;
        self.emit(out, ServerMessage::StartTrial { set: config.set, index: config.order }, now_ms);
        self.advance_into(out, now_ms);
    }

    fn move_hand(&mut self, now_ms: u64, d: Vec3) {
        let trial = self.trial.as_mut().expect("running trial");
        trial.hand += d;
        let t = now_ms.saturating_sub(trial.started_ms) as f64 / 1000.0;
        trial
            .trajectory
            .push(HandSample { timestamp: t, position: trial.hand })
            .expect("session clock is monotonic");
    }

    /// Handles one incoming text frame received at `now_ms`.
    pub fn handle_text(&mut self, raw: &str, now_ms: u64) -> Vec<ServerFrame> {
        let mut out = Vec::new();
        if self.closed {
            return out;
        }
        self.advance_into(&mut out, now_ms);
        if self.closed {
            return out;
        }
        self.last_activity_ms = now_ms;
        let frame: ClientFrame = match decode_client(raw) {
            Ok(f) => f,
            Err(e) => {
                self.fail(&mut out, e.to_string(), now_ms);
                return out;
            }
        };
        if self.last_client_seq.is_some_and(|last| frame.seq <= last) {
            let reason = format!("sequence number {} does not increase", frame.seq);
            self.fail(&mut out, reason, now_ms);
            return out;
        }
        self.last_client_seq = Some(frame.seq);
        if let Some(trial) = &mut self.trial {
            trial.transcript.push(transcript_line(now_ms, "in", raw.trim()));
        }
        match frame.message {
            ClientMessage::Hello { .. } if !self.greeted => {
                self.greeted = true;
                let s = &self.settings;
                let hello = ServerMessage::Hello {
                    session_id: self.id,
                    protocol: PROTOCOL_VERSION.into(),
                    palm_radius: s.sim.palm.radius,
                    frame_rate: s.sim.sensor.frame_rate,
                    max_speed: s.max_speed,
                    trials_per_set: s.protocol.goals.len(),
                    sets: s.protocol.sets,
                    n_points: s.sim.stm.n_points,
                };
                self.emit(&mut out, hello, now_ms);
            }
            ClientMessage::Hello { .. } => self.fail(&mut out, "duplicate hello".into(), now_ms),
            _ if !self.greeted => self.fail(&mut out, "expected hello first".into(), now_ms),
            ClientMessage::StartTrial if self.state == TrialState::Running => {
                self.fail(&mut out, "a trial is already running".into(), now_ms)
            }
            ClientMessage::StartTrial => self.start_trial(&mut out, now_ms),
            // Moves and arrival outside a trial (e.g. racing the timeout) are ignored.
            ClientMessage::HandMove { dx, dy, dz } if self.state == TrialState::Running => {
                self.move_hand(now_ms, Vec3::new(dx, dy, dz))
            }
            ClientMessage::Reached if self.state == TrialState::Running => self.finish(&mut out, now_ms, true, false),
            ClientMessage::HandMove { .. } | ClientMessage::Reached => {}
            ClientMessage::Abort { .. } => {
                if self.state == TrialState::Running {
                    self.finish(&mut out, now_ms, false, true);
                }
                self.closed = true;
            }
        }
        out
    }

    /// Ends the session because the connection dropped.
    pub fn disconnect(&mut self, now_ms: u64) -> Vec<ServerFrame> {
        let mut out = Vec::new();
        if !self.closed && self.state == TrialState::Running {
            self.finish(&mut out, now_ms, false, true);
        }
        self.closed = true;
        out
    }
}

fn transcript_line(t_ms: u64, dir: &str, raw: &str) -> String {
    let frame = serde_json::value::RawValue::from_string(raw.to_string()).expect("valid frame json");
    serde_json::to_string(&TranscriptLine { t_ms, dir, frame: &frame }).expect("transcript line")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> Arc<ServerSettings> {
        Arc::new(ServerSettings::new(SimulationConfig::default(), 5).unwrap())
    }

    fn client(seq: u64, m: ClientMessage) -> String {
        encode(&Frame { seq, message: m })
    }

    fn started() -> (Session, Vec<ServerFrame>) {
        let mut s = Session::new(1, settings(), 0);
        let mut out = s.handle_text(&client(1, ClientMessage::Hello { client: None }), 0);
        out.extend(s.handle_text(&client(2, ClientMessage::StartTrial), 10));
        (s, out)
    }

    #[test]
    fn hello_then_start() {
        let (s, out) = started();
        assert!(matches!(out[0].message, ServerMessage::Hello { session_id: 1, trials_per_set: 14, sets: 3, .. }));
        assert!(matches!(out[1].message, ServerMessage::StartTrial { set: 1, index: 0 }));
        assert!(matches!(out[2].message, ServerMessage::Stimulus { t_ms: 0, .. }));
        assert_eq!(s.state(), TrialState::Running);
        let seqs: Vec<u64> = out.iter().map(|f| f.seq).collect();
        assert_eq!(seqs, vec![1, 2, 3]);
    }

    #[test]
    fn frames_follow_the_sensor_rate() {
        let (mut s, _) = started();
        let out = s.advance(10 + 1000);
        let times: Vec<u64> = out
            .iter()
            .map(|f| match f.message {
                ServerMessage::Stimulus { t_ms, .. } => t_ms,
                _ => panic!("unexpected {:?}", f.message),
            })
            .collect();
        assert_eq!(times.len(), 30);
        assert_eq!(&times[..4], &[33, 66, 100, 133]);
        assert_eq!(*times.last().unwrap(), 1000);
    }

    #[test]
    fn must_greet_first() {
        let mut s = Session::new(1, settings(), 0);
        let out = s.handle_text(&client(1, ClientMessage::StartTrial), 0);
        assert!(matches!(&out[0].message, ServerMessage::Abort { reason } if reason.contains("hello")));
        assert!(s.is_closed());
        assert!(s.handle_text(&client(2, ClientMessage::Hello { client: None }), 1).is_empty());
    }

    #[test]
    fn sequence_must_increase() {
        let (mut s, _) = started();
        let out = s.handle_text(&client(2, ClientMessage::Reached), 20);
        assert!(out.iter().any(|f| matches!(&f.message, ServerMessage::Abort { reason } if reason.contains("sequence"))));
        assert!(out.iter().any(|f| matches!(f.message, ServerMessage::TrialResult { aborted: true, completed: false, .. })));
        assert!(s.is_closed());
    }

    #[test]
    fn malformed_frame_aborts() {
        let (mut s, _) = started();
        let out = s.handle_text(r#"{"seq":3,"kind":"hand_move","dx":1}"#, 20);
        assert!(matches!(&out[0].message, ServerMessage::Abort { reason } if reason.contains("dy")));
        assert!(s.is_closed());
    }

    #[test]
    fn idle_sessions_are_aborted() {
        let mut s = Session::new(1, settings(), 0);
        s.handle_text(&client(1, ClientMessage::Hello { client: None }), 0);
        assert!(s.advance(120_000).is_empty());
        let out = s.advance(120_001);
        assert!(matches!(&out[0].message, ServerMessage::Abort { reason } if reason == "idle timeout"));
    }

    #[test]
    fn second_start_while_running_aborts() {
        let (mut s, _) = started();
        let out = s.handle_text(&client(3, ClientMessage::StartTrial), 20);
        assert!(out.iter().any(|f| matches!(f.message, ServerMessage::Abort { .. })));
    }

    #[test]
    fn transcript_records_both_directions() {
        let (mut s, _) = started();
        s.handle_text(&client(3, ClientMessage::HandMove { dx: 0.0, dy: 0.0, dz: -5.0 }), 100);
        s.handle_text(&client(4, ClientMessage::Reached), 200);
        let t = s.take_transcripts();
        assert_eq!(t.len(), 1);
        let first: serde_json::Value = serde_json::from_str(&t[0].lines[0]).unwrap();
        assert_eq!(first["dir"], "out");
        assert_eq!(first["frame"]["kind"], "start_trial");
        assert!(t[0].lines.iter().any(|l| l.contains(r#""dir":"in""#) && l.contains("hand_move")));
        assert!(t[0].lines.last().unwrap().contains("trial_result"));
        assert!(t[0].file_name().starts_with("session1_set1_trial00"));
        assert!(s.take_transcripts().is_empty());
    }
}
