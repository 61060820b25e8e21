use std::sync::Arc;

use haptic_cone::experiment::{plan_trials, run_trial, TrialConfig};
use haptic_cone::{SimulationConfig, Vec3};
use haptic_cone_server::protocol::encode;
use haptic_cone_server::{ClientMessage, Frame, ServerFrame, ServerMessage, ServerSettings, Session, TrialState};

const SESSION: u64 = 3;

fn settings() -> Arc<ServerSettings> {
    Arc::new(ServerSettings::new(SimulationConfig::default(), 77).unwrap())
}

struct Client {
    session: Session,
    seq: u64,
    received: Vec<ServerFrame>,
}

impl Client {
    fn new(settings: Arc<ServerSettings>) -> Self {
        let mut c = Self { session: Session::new(SESSION, settings, 0), seq: 0, received: Vec::new() };
        c.send(ClientMessage::Hello { client: Some("script".into()) }, 0);
        c
    }

    fn send(&mut self, m: ClientMessage, now_ms: u64) {
        self.seq += 1;
        let out = self.session.handle_text(&encode(&Frame { seq: self.seq, message: m }), now_ms);
        self.received.extend(out);
    }

    fn tick(&mut self, now_ms: u64) {
        let out = self.session.advance(now_ms);
        self.received.extend(out);
    }

    fn last_result(&self) -> Option<&ServerMessage> {
        self.received.iter().rev().map(|f| &f.message).find(|m| matches!(m, ServerMessage::TrialResult { .. }))
    }
}

fn first_trial(settings: &ServerSettings) -> TrialConfig {
    plan_trials(&settings.protocol, settings.master_seed + SESSION)[0]
}

fn goal_of(settings: &ServerSettings, cfg: &TrialConfig) -> Vec3 {
    settings.protocol.goals.iter().find(|g| g.id == cfg.goal_id).unwrap().position
}

/// A session with some wandering, a reach and a timeout.
fn scripted(settings: Arc<ServerSettings>) -> Client {
    let mut c = Client::new(settings);
    c.send(ClientMessage::StartTrial, 100);
    for i in 1..=60u64 {
        let phase = i as f64 * 0.2;
        c.send(ClientMessage::HandMove { dx: 3.0 * phase.cos(), dy: 2.0 * phase.sin(), dz: -1.5 }, 100 + i * 20);
    }
    c.send(ClientMessage::Reached, 1500);
    c.send(ClientMessage::StartTrial, 2000);
    c.tick(2000 + 30_000);
    c
}

#[test]
fn reaching_the_apex_scores_zero() {
    let s = settings();
    let cfg = first_trial(&s);
    let goal = goal_of(&s, &cfg);
    let d = goal - s.protocol.workspace.start_point;
    let mut c = Client::new(s);
    c.send(ClientMessage::StartTrial, 10);
    c.send(ClientMessage::HandMove { dx: d.x, dy: d.y, dz: d.z }, 500);
    c.send(ClientMessage::Reached, 800);
    match c.last_result().unwrap() {
        ServerMessage::TrialResult { completed, aborted, eps_xyz, eps_xy, duration, goal_id, .. } => {
            assert!(*completed && !*aborted);
            assert!(*eps_xyz < 1e-12 && *eps_xy < 1e-12, "{eps_xyz} {eps_xy}");
            assert_eq!(*duration, 0.79);
            assert_eq!(*goal_id, cfg.goal_id);
        }
        _ => unreachable!(),
    }
    assert_eq!(c.session.state(), TrialState::Finished);
}

#[test]
fn silent_trial_times_out() {
    let mut c = Client::new(settings());
    c.send(ClientMessage::StartTrial, 10);
    c.tick(10 + 29_999);
    assert!(c.last_result().is_none());
    c.tick(10 + 30_000);
    match c.last_result().unwrap() {
        ServerMessage::TrialResult { completed, aborted, duration, eps_xyz, .. } => {
            assert!(!*completed && !*aborted);
            assert_eq!(*duration, 30.0);
            assert!(*eps_xyz >= 150.0 - 1e-9);
        }
        _ => unreachable!(),
    }
    // Arrival after the timeout is ignored.
    let before = c.received.len();
    c.send(ClientMessage::Reached, 30_100);
    assert_eq!(c.received.len(), before);
}

fn stimuli(frames: &[ServerFrame]) -> Vec<(u64, Option<usize>, Vec<(usize, f64, f64, f64)>)> {
    frames
        .iter()
        .filter_map(|f| match &f.message {
            ServerMessage::Stimulus { t_ms, active_slot, dots, .. } => {
                Some((*t_ms, *active_slot, dots.iter().map(|d| (d.slot, d.dx, d.dy, d.intensity)).collect()))
            }
            _ => None,
        })
        .collect()
}

#[test]
fn start_of_trial_shows_the_full_base_circle() {
    let mut c = Client::new(settings());
    c.send(ClientMessage::StartTrial, 0);
    let s = stimuli(&c.received);
    let (_, slot, dots) = &s[0];
    assert_eq!(*slot, Some(0));
    assert_eq!(dots.len(), 10);
    for (i, &(slot, dx, dy, intensity)) in dots.iter().enumerate() {
        assert_eq!(slot, i);
        assert!(((dx * dx + dy * dy).sqrt() - 30.0).abs() < 1e-9);
        // Circle plane and palm coincide, so each dot is at its focus.
        assert!((intensity - 1.0).abs() < 1e-9);
    }
}

#[test]
fn stationary_hand_gives_a_100_ms_periodic_stream() {
    let mut c = Client::new(settings());
    c.send(ClientMessage::StartTrial, 0);
    c.tick(2000);
    let s = stimuli(&c.received);
    assert_eq!(s.len(), 61);
    let slots: Vec<Option<usize>> = s.iter().take(6).map(|x| x.1).collect();
    assert_eq!(slots, vec![Some(0), Some(3), Some(6), Some(0), Some(3), Some(6)]);
    for w in 0..s.len() - 3 {
        assert_eq!(s[w].1, s[w + 3].1);
        assert_eq!(s[w].2, s[w + 3].2);
        assert_eq!(s[w + 3].0 - s[w].0, 100);
    }
}

/// Allowed keys per server frame kind; anything else could leak position.
fn allowed(kind: &str) -> &'static [&'static str] {
    match kind {
        "hello" => &["seq", "kind", "session_id", "protocol", "palm_radius", "frame_rate", "max_speed", "trials_per_set", "sets", "n_points"],
        "start_trial" => &["seq", "kind", "set", "index"],
        "stimulus" => &["seq", "kind", "t_ms", "active_slot", "n_points", "dwell_ms", "dots"],
        "trial_result" => &["seq", "kind", "set", "goal_id", "completed", "aborted", "eps_xyz", "eps_xy", "duration", "seed"],
        "abort" => &["seq", "kind", "reason"],
        other => panic!("unknown kind {other}"),
    }
}

#[test]
fn server_frames_carry_only_palm_local_data() {
    let c = scripted(settings());
    let mut kinds = std::collections::BTreeSet::new();
    for f in &c.received {
        let v: serde_json::Value = serde_json::from_str(&encode(f)).unwrap();
        let obj = v.as_object().unwrap();
        let kind = obj["kind"].as_str().unwrap();
        kinds.insert(kind.to_string());
        for key in obj.keys() {
            assert!(allowed(kind).contains(&key.as_str()), "{kind} frame has key {key}");
        }
        if kind == "stimulus" {
            for d in obj["dots"].as_array().unwrap() {
                let keys: Vec<&str> = d.as_object().unwrap().keys().map(|k| k.as_str()).collect();
                assert_eq!(keys, vec!["dx", "dy", "intensity", "slot"]);
                let (dx, dy) = (d["dx"].as_f64().unwrap(), d["dy"].as_f64().unwrap());
                assert!((dx * dx + dy * dy).sqrt() <= 40.0 + 1e-6);
                assert!((0.0..=1.0).contains(&d["intensity"].as_f64().unwrap()));
            }
        }
    }
    for k in ["hello", "start_trial", "stimulus", "trial_result"] {
        assert!(kinds.contains(k), "script never produced {k}");
    }
}

#[test]
fn sequence_numbers_increase() {
    let c = scripted(settings());
    assert!(c.received.windows(2).all(|w| w[1].seq == w[0].seq + 1));
}

#[test]
fn transcripts_are_reproducible() {
    let s = settings();
    let mut a = scripted(s.clone());
    let mut b = scripted(s);
    assert_eq!(a.received, b.received);
    let (ta, tb) = (a.session.take_transcripts(), b.session.take_transcripts());
    assert_eq!(ta.len(), 2);
    assert_eq!(ta, tb);
}

#[test]
fn replayed_agent_path_matches_offline_metrics() {
    let s = settings();
    let cfg = first_trial(&s);
    let offline = run_trial(&s.sim.participant(), &s.protocol, cfg).unwrap();
    assert!(offline.metrics.completed);

    let mut c = Client::new(s);
    let t0 = 1000;
    c.send(ClientMessage::StartTrial, t0);
    let samples = offline.trajectory.samples();
    let mut prev = samples[0].position;
    for smp in &samples[1..] {
        let d = smp.position - prev;
        prev = smp.position;
        c.send(ClientMessage::HandMove { dx: d.x, dy: d.y, dz: d.z }, t0 + (smp.timestamp * 1000.0).round() as u64);
    }
    c.send(ClientMessage::Reached, t0 + (offline.metrics.duration * 1000.0).round() as u64);
    let rel = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
    match c.last_result().unwrap() {
        ServerMessage::TrialResult { completed, eps_xyz, eps_xy, duration, seed, .. } => {
            assert!(*completed);
            assert_eq!(*seed, cfg.seed);
            assert!(rel(*eps_xyz, offline.metrics.eps_xyz), "{eps_xyz} vs {}", offline.metrics.eps_xyz);
            assert!(rel(*eps_xy, offline.metrics.eps_xy), "{eps_xy} vs {}", offline.metrics.eps_xy);
            assert!(rel(*duration, offline.metrics.duration), "{duration} vs {}", offline.metrics.duration);
        }
        _ => unreachable!(),
    }
}
