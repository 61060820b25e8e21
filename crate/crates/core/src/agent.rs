//! Simulated participant.
//!
//! The agent feels the STM circle as the subset of focal points landing on a
//! palm disk, estimates the circle's radius and centre from those points, and
//! follows the instructed strategy: probe a little in each candidate direction,
//! move toward the one that shrinks the circle by more than it can
//! discriminate, and declare the apex once repeated probing finds no such
//! direction.
//!
//! Probes are evaluated in place (the agent is assumed to wait for the
//! stimulus to settle at each probe position); only the time they take is
//! simulated. Moves run through the tick loop with the delayed sensor so the
//! stimulus the palm feels lags the hand.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cone::{GuidanceCone, KBranch};
use crate::stm::{sample_circle, CircleStimulus, FocusSchedule, StmParams};
use crate::tracking::{observe, HandSample, SampledTrajectory, SensorModel};
use crate::{Vec2, Vec3};

/// Distances within this much of the palm edge still count as felt.
const EDGE_SLACK: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error("invalid agent parameter: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PalmModel {
    /// Radius of the disk on which focal points are felt (mm).
    pub radius: f64,
    /// Largest height difference between the rendered circle and the palm at
    /// which the circle is still felt (mm).
    pub depth_tolerance: f64,
}

impl Default for PalmModel {
    fn default() -> Self {
        Self {
            radius: 40.0,
            depth_tolerance: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Percept {
    /// Felt points relative to the palm centre.
    pub felt_points: Vec<Vec2>,
    /// Circle fit; needs three or more felt points.
    pub est_radius: Option<f64>,
    pub est_center_offset: Option<Vec2>,
    /// With exactly two felt points, where their midpoint lies.
    pub midpoint_offset: Option<Vec2>,
    pub lost: bool,
}

impl Percept {
    fn lost() -> Self {
        Self {
            lost: true,
            ..Self::default()
        }
    }

    /// Best available cue for where the circle lies relative to the palm.
    pub fn center_cue(&self) -> Option<Vec2> {
        self.est_center_offset.or(self.midpoint_offset)
    }
}

/// Least-squares (algebraic) circle through `points`; exact when the points
/// lie on a circle. Returns `(center, radius)`.
pub fn fit_circle(points: &[Vec2]) -> Option<(Vec2, f64)> {
    if points.len() < 3 {
        return None;
    }
    // Solve for D, E, F in x² + y² + Dx + Ey + F = 0.
    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut atb = nalgebra::Vector3::<f64>::zeros();
    for p in points {
        let row = nalgebra::Vector3::new(p.x, p.y, 1.0);
        ata += row * row.transpose();
        atb -= row * p.norm_squared();
    }
    let sol = ata.lu().solve(&atb)?;
    let center = Vec2::new(-sol.x / 2.0, -sol.y / 2.0);
    let r2 = center.norm_squared() - sol.z;
    if !(r2.is_finite() && r2 > 0.0) {
        return None;
    }
    // Reject near-collinear sets: the fit must reproduce the points.
    let r = r2.sqrt();
    let worst = points
        .iter()
        .map(|p| ((p - center).norm() - r).abs())
        .fold(0.0, f64::max);
    (worst <= 1e-6 * r.max(1.0)).then_some((center, r))
}

/// Indices and palm-relative offsets of the focal points a palm centred at
/// `palm_center` feels. Empty when the circle's plane is out of reach.
pub fn felt_slots(schedule: &FocusSchedule, palm_center: Vec3, palm: &PalmModel) -> Vec<(usize, Vec2)> {
    if schedule
        .points()
        .iter()
        .any(|p| (p.z - palm_center.z).abs() > palm.depth_tolerance)
    {
        return Vec::new();
    }
    schedule
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| (i, p.xy() - palm_center.xy()))
        .filter(|(_, d)| d.norm() <= palm.radius + EDGE_SLACK)
        .collect()
}

/// What a palm centred at `palm_center` feels of `schedule`.
pub fn perceive(schedule: &FocusSchedule, palm_center: Vec3, palm: &PalmModel) -> Percept {
    let felt_points: Vec<Vec2> = felt_slots(schedule, palm_center, palm).into_iter().map(|(_, d)| d).collect();
    let mut percept = Percept {
        lost: felt_points.len() < 2,
        ..Percept::default()
    };
    match felt_points.len() {
        0 | 1 => {}
        2 => percept.midpoint_offset = Some((felt_points[0] + felt_points[1]) / 2.0),
        _ => {
            if let Some((c, r)) = fit_circle(&felt_points) {
                percept.est_center_offset = Some(c);
                percept.est_radius = Some(r);
            }
        }
    }
    percept.felt_points = felt_points;
    percept
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentParams {
    /// Smallest radius change the agent can tell apart (mm).
    pub radius_jnd: f64,
    /// Probe excursion and move segment length (mm).
    pub probe_step: f64,
    /// Hand speed while probing or moving (m/s).
    pub move_speed: f64,
    /// Consecutive direction-less probes before declaring arrival.
    pub settle_probes: usize,
    /// Give up after this long (s).
    pub decision_timeout: f64,
    /// Increments per probe excursion; the agent re-centres the circle on its
    /// palm after each one.
    pub probe_substeps: usize,
    /// Continuous loss (s) tolerated during a move before retracing.
    pub lost_grace: f64,
    /// Std of the unnoticed vertical drift velocity drawn per motion segment
    /// (mm/s); zero disables drift.
    pub z_drift_std: f64,
    /// Simulation step (s).
    pub tick: f64,
}

impl Default for AgentParams {
    fn default() -> Self {
        Self {
            radius_jnd: 7.8,
            probe_step: 50.0,
            move_speed: 0.2,
            settle_probes: 3,
            decision_timeout: 30.0,
            probe_substeps: 5,
            lost_grace: 0.15,
            z_drift_std: 0.0,
            tick: 0.001,
        }
    }
}

impl AgentParams {
    pub fn validate(&self) -> Result<(), AgentError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.radius_jnd) {
            return Err(AgentError::InvalidParams("radius_jnd must be positive"));
        }
        if !positive(self.probe_step) {
            return Err(AgentError::InvalidParams("probe_step must be positive"));
        }
        if !positive(self.move_speed) {
            return Err(AgentError::InvalidParams("move_speed must be positive"));
        }
        if self.settle_probes == 0 || self.probe_substeps == 0 {
            return Err(AgentError::InvalidParams("settle_probes and probe_substeps must be at least 1"));
        }
        if !positive(self.decision_timeout) || !positive(self.tick) {
            return Err(AgentError::InvalidParams("decision_timeout and tick must be positive"));
        }
        if !(self.lost_grace >= 0.0 && self.z_drift_std >= 0.0) {
            return Err(AgentError::InvalidParams("lost_grace and z_drift_std must be non-negative"));
        }
        Ok(())
    }

    fn speed_mm_per_s(&self) -> f64 {
        self.move_speed * 1000.0
    }
}

/// Everything between the hand and the palm's percept: cone, STM rendering,
/// sensor and palm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceLoop {
    pub cone: GuidanceCone,
    pub stm: StmParams,
    pub sensor: SensorModel,
    pub palm: PalmModel,
}

impl GuidanceLoop {
    /// Schedule rendered for a hand sensed at `sensed`; `None` when the
    /// circle collapses to a point.
    pub fn stimulus(&self, sensed: Vec3) -> Option<FocusSchedule> {
        let cs = self.cone.cross_section(sensed);
        sample_circle(&CircleStimulus {
            center: cs.center,
            plane_z: cs.plane_z,
            radius: cs.radius,
            params: self.stm,
        })
        .ok()
    }

    /// Percept of a palm at `palm_at` while the system renders for `sensed`.
    pub fn percept(&self, palm_at: Vec3, sensed: Vec3) -> Percept {
        match self.stimulus(sensed) {
            Some(s) => perceive(&s, palm_at, &self.palm),
            None => Percept::lost(),
        }
    }

    /// Directions explored when probing.
    pub fn probe_axes(&self) -> Vec<Vec3> {
        match self.cone.branch() {
            KBranch::Height => vec![Vec3::z(), -Vec3::z()],
            KBranch::Planar => vec![Vec3::x(), -Vec3::x(), Vec3::y(), -Vec3::y()],
        }
    }

    fn sensed_at_rest<R: Rng>(&self, hand: Vec3, rng: &mut R) -> Vec3 {
        if self.sensor.noise_std > 0.0 {
            let n = Normal::new(0.0, self.sensor.noise_std).expect("finite noise std");
            hand + Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng))
        } else {
            hand
        }
    }

    /// Percept after the hand has rested at `hand` long enough for the
    /// stimulus to catch up.
    pub fn settled_percept<R: Rng>(&self, hand: Vec3, rng: &mut R) -> Percept {
        let sensed = self.sensed_at_rest(hand, rng);
        self.percept(hand, sensed)
    }

    /// Wall time one round of probing takes (s).
    pub fn probe_duration(&self, params: &AgentParams) -> f64 {
        let excursions = self.probe_axes().len() as f64 * 2.0 * params.probe_step / params.speed_mm_per_s();
        self.sensor.max_staleness() + excursions
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOutcome {
    /// Unit direction toward `target`, present when some probe shrank the
    /// circle by more than the JND.
    pub direction: Option<Vec3>,
    /// Where the winning probe ended, re-centred on the circle.
    pub target: Option<Vec3>,
    pub radius_decrease: Option<f64>,
    pub base_radius: Option<f64>,
    /// The percept at the probing position itself was lost.
    pub lost: bool,
}

/// In-plane part of `offset` orthogonal to the probe axis.
fn lateral_correction(offset: Vec2, axis: &Vec3) -> Vec3 {
    let o = Vec3::new(offset.x, offset.y, 0.0);
    let a = Vec3::new(axis.x, axis.y, 0.0);
    let n = a.norm();
    if n > 0.0 {
        let a = a / n;
        o - a * o.dot(&a)
    } else {
        o
    }
}

/// Probes every axis from `hand` and reports the direction whose circle
/// shrinks by more than `radius_jnd`, if any. Along each excursion the agent
/// keeps the circle centred on its palm (perpendicular to the probe).
/// Excursions that lose the circle are uninformative.
pub fn probe_direction<R: Rng>(lp: &GuidanceLoop, hand: Vec3, params: &AgentParams, rng: &mut R) -> ProbeOutcome {
    let base = lp.settled_percept(hand, rng);
    let mut outcome = ProbeOutcome {
        direction: None,
        target: None,
        radius_decrease: None,
        base_radius: base.est_radius,
        lost: base.lost,
    };
    let Some(r0) = base.est_radius else {
        return outcome;
    };
    let substep = params.probe_step / params.probe_substeps as f64;
    let mut best: Option<(f64, Vec3)> = None;
    'axes: for axis in lp.probe_axes() {
        let mut pos = hand;
        for _ in 0..params.probe_substeps {
            pos += axis * substep;
            let p = lp.settled_percept(pos, rng);
            if p.lost {
                continue 'axes;
            }
            if let Some(o) = p.center_cue() {
                pos += lateral_correction(o, &axis);
            }
        }
        let end = lp.settled_percept(pos, rng);
        let Some(r) = end.est_radius.filter(|_| !end.lost) else {
            continue;
        };
        let decrease = r0 - r;
        if best.is_none_or(|(d, _)| decrease > d) {
            best = Some((decrease, pos));
        }
    }
    if let Some((decrease, target)) = best {
        outcome.radius_decrease = Some(decrease);
        if decrease > params.radius_jnd {
            let d = target - hand;
            if d.norm() > 0.0 {
                outcome.direction = Some(d.normalize());
                outcome.target = Some(target);
            }
        }
    }
    outcome
}

/// Arrival: the last `settle_probes` probes all found no direction and none
/// of them lost the circle.
pub fn decide_reached(history: &[ProbeOutcome], params: &AgentParams) -> bool {
    history.len() >= params.settle_probes
        && history[history.len() - params.settle_probes..]
            .iter()
            .all(|o| o.direction.is_none() && !o.lost)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRun {
    /// True hand position at every tick.
    pub trajectory: SampledTrajectory,
    pub reached: bool,
    /// Time of the arrival decision, or the timeout.
    pub elapsed: f64,
    pub final_position: Vec3,
    /// Ticks during motion on which the palm felt fewer than two points.
    pub lost_ticks: usize,
    pub probe_rounds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Motion {
    Guided,
    Retrace,
    Search,
}

#[derive(Debug, Clone, PartialEq)]
enum Phase {
    Probing { ends_at: u64, outcome: ProbeOutcome },
    Moving { target: Vec3, motion: Motion, drift: f64 },
}

fn random_unit<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Closed-loop run from the cone's start until the agent declares arrival
/// or `decision_timeout` passes. Deterministic in `seed`.
pub fn run_policy(lp: &GuidanceLoop, params: &AgentParams, seed: u64) -> Result<PolicyRun, AgentError> {
    params.validate()?;
    let dt = params.tick;
    let max_ticks = (params.decision_timeout / dt).round() as u64;
    let probe_ticks = ((lp.probe_duration(params) / dt).ceil() as u64).max(1);
    let grace_ticks = (params.lost_grace / dt).round() as usize;
    let step = params.speed_mm_per_s() * dt;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drift_dist = Normal::new(0.0, params.z_drift_std).expect("non-negative drift std");

    // `belief` is where the agent thinks its hand is; it misses the drift.
    let mut pos = lp.cone.start();
    let mut belief = pos;
    let mut trajectory = SampledTrajectory::new();
    trajectory
        .push(HandSample {
            timestamp: 0.0,
            position: pos,
        })
        .expect("first sample");

    let mut history: Vec<ProbeOutcome> = Vec::new();
    let mut last_valid = belief;
    let mut lost_run = 0usize;
    let mut lost_ticks = 0usize;
    let mut probe_rounds = 1usize;
    let mut phase = Phase::Probing {
        ends_at: probe_ticks,
        outcome: probe_direction(lp, pos, params, &mut rng),
    };
    let mut reached = false;
    let mut elapsed = params.decision_timeout;

    for tick in 1..=max_ticks {
        let t = tick as f64 * dt;
        match &mut phase {
            Phase::Probing { ends_at, outcome } if tick >= *ends_at => {
                let outcome = outcome.clone();
                let lost = outcome.lost;
                let target = outcome.target;
                history.push(outcome);
                if lost {
                    let (target, motion) = if (last_valid - belief).norm() > 1.0 {
                        (last_valid, Motion::Retrace)
                    } else {
                        (belief + random_unit(&mut rng) * params.probe_step, Motion::Search)
                    };
                    phase = Phase::Moving {
                        target,
                        motion,
                        drift: drift_dist.sample(&mut rng),
                    };
                } else if let Some(target) = target {
                    history.clear();
                    phase = Phase::Moving {
                        target: belief + (target - pos),
                        motion: Motion::Guided,
                        drift: drift_dist.sample(&mut rng),
                    };
                } else if decide_reached(&history, params) {
                    reached = true;
                    elapsed = t;
                    break;
                } else {
                    probe_rounds += 1;
                    phase = Phase::Probing {
                        ends_at: tick + probe_ticks,
                        outcome: probe_direction(lp, pos, params, &mut rng),
                    };
                }
            }
            Phase::Probing { .. } => {}
            Phase::Moving { .. } => {}
        }

        let mut arrived = false;
        if let Phase::Moving { target, drift, .. } = &phase {
            let to = *target - belief;
            let d = to.norm();
            let s = step.min(d);
            if d > 0.0 {
                let delta = to / d * s;
                belief += delta;
                pos += delta;
            }
            pos.z += drift * dt;
            arrived = d <= step;
        }

        trajectory
            .push(HandSample { timestamp: t, position: pos })
            .expect("ticks increase");

        if let Phase::Moving { motion, .. } = phase {
            let sensed = observe(&trajectory, t, &lp.sensor, seed).position;
            let percept = lp.percept(pos, sensed);
            if percept.lost {
                lost_ticks += 1;
                lost_run += 1;
            } else {
                lost_run = 0;
                last_valid = belief;
            }
            let next = match motion {
                Motion::Guided if lost_run > grace_ticks => Some(Phase::Moving {
                    target: last_valid,
                    motion: Motion::Retrace,
                    drift: drift_dist.sample(&mut rng),
                }),
                Motion::Retrace | Motion::Search if lost_run == 0 => None,
                Motion::Search if arrived => Some(Phase::Moving {
                    target: belief + random_unit(&mut rng) * params.probe_step,
                    motion: Motion::Search,
                    drift: drift_dist.sample(&mut rng),
                }),
                _ if !arrived => continue,
                _ => None,
            };
            phase = match next {
                Some(p) => p,
                None => {
                    probe_rounds += 1;
                    Phase::Probing {
                        ends_at: tick + probe_ticks,
                        outcome: probe_direction(lp, pos, params, &mut rng),
                    }
                }
            };
        }
    }

    Ok(PolicyRun {
        trajectory,
        reached,
        elapsed,
        final_position: pos,
        lost_ticks,
        probe_rounds,
    })
}

/// Percepts along a prescribed hand path, one per `dt`, with the stimulus
/// driven by the delayed sensor. Returns `(t, percept)` pairs for
/// `t = 0, dt, ..., duration`.
pub fn open_loop_percepts<F: Fn(f64) -> Vec3>(
    lp: &GuidanceLoop,
    path: F,
    duration: f64,
    dt: f64,
    seed: u64,
) -> Vec<(f64, Percept)> {
    let n = (duration / dt).round() as u64;
    let mut trajectory = SampledTrajectory::new();
    (0..=n)
        .map(|i| {
            let t = i as f64 * dt;
            let pos = path(t);
            trajectory
                .push(HandSample { timestamp: t, position: pos })
                .expect("ticks increase");
            let sensed = observe(&trajectory, t, &lp.sensor, seed).position;
            (t, lp.percept(pos, sensed))
        })
        .collect()
}
