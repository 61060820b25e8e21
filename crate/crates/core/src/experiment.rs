//! Fourteen-goal guidance protocol, trial metrics and set aggregation.
//!
//! Goal layout (reconstructed from the number of directions, the four level
//! goals and the diagonal dead-zone factor): six axis goals at one workspace
//! half-extent from the start and eight two-axis diagonals mixing a
//! horizontal axis with up or down. Numbering runs from the top down:
//!
//! | id | direction | id | direction |
//! |----|-----------|----|-----------|
//! | 1  | up        | 8  | +y        |
//! | 2  | up +x     | 9  | -y        |
//! | 3  | up -x     | 10 | down +x   |
//! | 4  | up +y     | 11 | down -x   |
//! | 5  | up -y     | 12 | down +y   |
//! | 6  | +x        | 13 | down -y   |
//! | 7  | -x        | 14 | down      |

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{run_policy, AgentError, AgentParams, GuidanceLoop, PalmModel, PolicyRun};
use crate::array::Workspace;
use crate::cone::{ConeError, ConeParams, GuidanceCone};
use crate::stm::StmParams;
use crate::tracking::{HandSample, SampledTrajectory, SensorModel};
use crate::{Vec2, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum ExperimentError {
    #[error("goal {id}: {source}")]
    Cone {
        id: u8,
        #[source]
        source: ConeError,
    },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalKind {
    Vertical,
    Diagonal,
    Horizontal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub id: u8,
    pub label: String,
    pub position: Vec3,
    pub kind: GoalKind,
}

impl Goal {
    /// One of the six single-axis goals.
    pub fn is_axis(&self) -> bool {
        self.kind != GoalKind::Diagonal
    }
}

/// The fourteen goals around the workspace start.
pub fn generate_goals(ws: &Workspace) -> Vec<Goal> {
    let s = ws.start_point;
    let d = ws.half_extent;
    let dirs: [(&str, [f64; 3], GoalKind); 14] = [
        ("up", [0.0, 0.0, 1.0], GoalKind::Vertical),
        ("up+x", [1.0, 0.0, 1.0], GoalKind::Diagonal),
        ("up-x", [-1.0, 0.0, 1.0], GoalKind::Diagonal),
        ("up+y", [0.0, 1.0, 1.0], GoalKind::Diagonal),
        ("up-y", [0.0, -1.0, 1.0], GoalKind::Diagonal),
        ("+x", [1.0, 0.0, 0.0], GoalKind::Horizontal),
        ("-x", [-1.0, 0.0, 0.0], GoalKind::Horizontal),
        ("+y", [0.0, 1.0, 0.0], GoalKind::Horizontal),
        ("-y", [0.0, -1.0, 0.0], GoalKind::Horizontal),
        ("down+x", [1.0, 0.0, -1.0], GoalKind::Diagonal),
        ("down-x", [-1.0, 0.0, -1.0], GoalKind::Diagonal),
        ("down+y", [0.0, 1.0, -1.0], GoalKind::Diagonal),
        ("down-y", [0.0, -1.0, -1.0], GoalKind::Diagonal),
        ("down", [0.0, 0.0, -1.0], GoalKind::Vertical),
    ];
    dirs.iter()
        .enumerate()
        .map(|(i, (label, dir, kind))| Goal {
            id: i as u8 + 1,
            label: (*label).to_string(),
            position: s + Vec3::from(*dir) * d,
            kind: *kind,
        })
        .collect()
}

/// 3-D distance from the final hand position to the goal.
pub fn eps_xyz(final_position: Vec3, goal: Vec3) -> f64 {
    (final_position - goal).norm()
}

/// Horizontal distance from the final hand position to the centre of the
/// circle presented there.
pub fn eps_xy(final_position: Vec3, circle_center: Vec2) -> f64 {
    (final_position.xy() - circle_center).norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub eps_xyz: f64,
    pub eps_xy: f64,
    pub duration: f64,
    pub completed: bool,
}

/// Metrics for a trial ending at `final_position`. Shared by offline runs and
/// the interactive server.
pub fn evaluate_trial(cone: &GuidanceCone, final_position: Vec3, duration: f64, completed: bool) -> TrialMetrics {
    TrialMetrics {
        eps_xyz: eps_xyz(final_position, cone.goal()),
        eps_xy: eps_xy(final_position, cone.cross_section(final_position).center),
        duration,
        completed,
    }
}

/// Anything that can attempt a guidance trial.
pub trait Participant: Sync {
    fn attempt(&self, cone: &GuidanceCone, timeout: f64, seed: u64) -> Result<PolicyRun, ExperimentError>;
}

/// The closed-loop agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulatedParticipant {
    pub stm: StmParams,
    pub sensor: SensorModel,
    pub palm: PalmModel,
    pub params: AgentParams,
}

impl Participant for SimulatedParticipant {
    fn attempt(&self, cone: &GuidanceCone, timeout: f64, seed: u64) -> Result<PolicyRun, ExperimentError> {
        let lp = GuidanceLoop {
            cone: *cone,
            stm: self.stm,
            sensor: self.sensor,
            palm: self.palm,
        };
        let params = AgentParams {
            decision_timeout: self.params.decision_timeout.min(timeout),
            ..self.params
        };
        Ok(run_policy(&lp, &params, seed)?)
    }
}

/// Jumps straight to the apex and declares arrival immediately.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleParticipant;

impl Participant for OracleParticipant {
    fn attempt(&self, cone: &GuidanceCone, _timeout: f64, _seed: u64) -> Result<PolicyRun, ExperimentError> {
        let trajectory = SampledTrajectory::from_samples(vec![
            HandSample { timestamp: 0.0, position: cone.start() },
            HandSample { timestamp: 0.001, position: cone.goal() },
        ])
        .expect("increasing timestamps");
        Ok(PolicyRun {
            trajectory,
            reached: true,
            elapsed: 0.001,
            final_position: cone.goal(),
            lost_ticks: 0,
            probe_rounds: 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub workspace: Workspace,
    pub goals: Vec<Goal>,
    pub cone: ConeParams,
    pub sets: usize,
    /// Per-trial limit (s).
    pub timeout: f64,
}

impl ProtocolConfig {
    pub fn new(workspace: Workspace) -> Self {
        Self {
            goals: generate_goals(&workspace),
            workspace,
            cone: ConeParams::default(),
            sets: 3,
            timeout: 30.0,
        }
    }

    pub fn cone_for(&self, goal: &Goal) -> Result<GuidanceCone, ExperimentError> {
        GuidanceCone::new(self.workspace.start_point, goal.position, self.cone)
            .map_err(|source| ExperimentError::Cone { id: goal.id, source })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialConfig {
    /// 1-based.
    pub set: usize,
    /// Presentation position within the set, 0-based.
    pub order: usize,
    pub goal_id: u8,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub config: TrialConfig,
    pub final_position: Vec3,
    pub metrics: TrialMetrics,
    pub trajectory: SampledTrajectory,
}

/// Randomised presentation order and per-trial seeds for every set, all drawn
/// from `master_seed`.
pub fn plan_trials(protocol: &ProtocolConfig, master_seed: u64) -> Vec<TrialConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    let mut plan = Vec::with_capacity(protocol.sets * protocol.goals.len());
    for set in 1..=protocol.sets {
        let mut ids: Vec<u8> = protocol.goals.iter().map(|g| g.id).collect();
        ids.shuffle(&mut rng);
        for (order, goal_id) in ids.into_iter().enumerate() {
            plan.push(TrialConfig {
                set,
                order,
                goal_id,
                seed: rng.random(),
            });
        }
    }
    plan
}

pub fn run_trial<P: Participant + ?Sized>(
    participant: &P,
    protocol: &ProtocolConfig,
    config: TrialConfig,
) -> Result<TrialResult, ExperimentError> {
    let goal = protocol
        .goals
        .iter()
        .find(|g| g.id == config.goal_id)
        .ok_or_else(|| ExperimentError::Invariant(format!("unknown goal id {}", config.goal_id)))?;
    let cone = protocol.cone_for(goal)?;
    let run = participant.attempt(&cone, protocol.timeout, config.seed)?;
    let duration = run.elapsed.min(protocol.timeout);
    Ok(TrialResult {
        config,
        final_position: run.final_position,
        metrics: evaluate_trial(&cone, run.final_position, duration, run.reached),
        trajectory: run.trajectory,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    /// Sorted by `(set, goal_id)`.
    pub results: Vec<TrialResult>,
    pub summary: SetSummary,
}

/// Runs every set. Trials run in parallel; results are merged by
/// `(set, goal_id)` so the output does not depend on scheduling.
pub fn run_sets<P: Participant + ?Sized>(
    participant: &P,
    protocol: &ProtocolConfig,
    master_seed: u64,
) -> Result<ExperimentRun, ExperimentError> {
    let plan = plan_trials(protocol, master_seed);
    let mut results = plan
        .par_iter()
        .map(|cfg| run_trial(participant, protocol, *cfg))
        .collect::<Result<Vec<_>, _>>()?;
    results.sort_by_key(|r| (r.config.set, r.config.goal_id));
    let summary = summarize(&protocol.goals, &results);
    check_invariants(protocol, &results, &summary)?;
    Ok(ExperimentRun { results, summary })
}

/// Five-number summary of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn box_stats(values: &[f64]) -> Option<BoxStats> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(BoxStats {
        n: v.len(),
        min: v[0],
        q1: quantile_sorted(&v, 0.25),
        median: quantile_sorted(&v, 0.5),
        q3: quantile_sorted(&v, 0.75),
        max: v[v.len() - 1],
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    box_stats(values).map(|b| b.median)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalSummary {
    pub goal_id: u8,
    pub label: String,
    pub kind: GoalKind,
    pub trials: usize,
    pub completed: usize,
    pub completion_rate: f64,
    pub median_eps_xyz: Option<f64>,
    pub median_eps_xy: Option<f64>,
    pub median_duration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetSummary {
    pub goals: Vec<GoalSummary>,
    pub trials: usize,
    pub completed: usize,
    pub completion_rate: f64,
    /// Medians over completed trials only.
    pub median_eps_xyz: Option<f64>,
    pub median_eps_xy: Option<f64>,
    pub median_duration: Option<f64>,
}

impl SetSummary {
    pub fn goal(&self, id: u8) -> Option<&GoalSummary> {
        self.goals.iter().find(|g| g.goal_id == id)
    }
}

fn completed_metric<'a>(results: impl Iterator<Item = &'a TrialResult>, f: fn(&TrialMetrics) -> f64) -> Vec<f64> {
    results.filter(|r| r.metrics.completed).map(|r| f(&r.metrics)).collect()
}

fn rate(completed: usize, trials: usize) -> f64 {
    if trials == 0 {
        0.0
    } else {
        completed as f64 / trials as f64
    }
}

/// Aggregates per goal and overall. Incomplete trials count toward the
/// completion rate but not toward any median.
pub fn summarize(goals: &[Goal], results: &[TrialResult]) -> SetSummary {
    let per_goal = goals
        .iter()
        .map(|g| {
            let mine = || results.iter().filter(|r| r.config.goal_id == g.id);
            let trials = mine().count();
            let completed = mine().filter(|r| r.metrics.completed).count();
            GoalSummary {
                goal_id: g.id,
                label: g.label.clone(),
                kind: g.kind,
                trials,
                completed,
                completion_rate: rate(completed, trials),
                median_eps_xyz: median(&completed_metric(mine(), |m| m.eps_xyz)),
                median_eps_xy: median(&completed_metric(mine(), |m| m.eps_xy)),
                median_duration: median(&completed_metric(mine(), |m| m.duration)),
            }
        })
        .collect();
    let completed = results.iter().filter(|r| r.metrics.completed).count();
    SetSummary {
        goals: per_goal,
        trials: results.len(),
        completed,
        completion_rate: rate(completed, results.len()),
        median_eps_xyz: median(&completed_metric(results.iter(), |m| m.eps_xyz)),
        median_eps_xy: median(&completed_metric(results.iter(), |m| m.eps_xy)),
        median_duration: median(&completed_metric(results.iter(), |m| m.duration)),
    }
}

/// Completion rate over the goals of one kind.
pub fn kind_completion_rate(results: &[TrialResult], goals: &[Goal], kind: GoalKind) -> f64 {
    let ids: Vec<u8> = goals.iter().filter(|g| g.kind == kind).map(|g| g.id).collect();
    let mine: Vec<_> = results.iter().filter(|r| ids.contains(&r.config.goal_id)).collect();
    rate(mine.iter().filter(|r| r.metrics.completed).count(), mine.len())
}

pub fn check_invariants(
    protocol: &ProtocolConfig,
    results: &[TrialResult],
    summary: &SetSummary,
) -> Result<(), ExperimentError> {
    for r in results {
        let m = &r.metrics;
        if !(m.eps_xyz >= 0.0 && m.eps_xy >= 0.0 && m.eps_xyz.is_finite() && m.eps_xy.is_finite()) {
            return Err(ExperimentError::Invariant(format!(
                "set {} goal {}: non-finite or negative error",
                r.config.set, r.config.goal_id
            )));
        }
        if !(m.duration >= 0.0 && m.duration <= protocol.timeout) {
            return Err(ExperimentError::Invariant(format!(
                "set {} goal {}: duration {} outside [0, {}]",
                r.config.set, r.config.goal_id, m.duration, protocol.timeout
            )));
        }
    }
    if let Some(g) = summary.goals.iter().find(|g| !(0.0..=1.0).contains(&g.completion_rate)) {
        return Err(ExperimentError::Invariant(format!("goal {} completion rate {}", g.goal_id, g.completion_rate)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn default_protocol() -> ProtocolConfig {
        ProtocolConfig::new(Workspace::default())
    }

    #[test]
    fn fourteen_goals_around_start() {
        let goals = generate_goals(&Workspace::default());
        assert_eq!(goals.len(), 14);
        let by = |label: &str| goals.iter().find(|g| g.label == label).unwrap().position;
        assert_eq!(by("down"), Vec3::new(0.0, 0.0, 250.0));
        assert_eq!(by("up"), Vec3::new(0.0, 0.0, 550.0));
        let level: Vec<u8> = goals.iter().filter(|g| g.position.z == 400.0).map(|g| g.id).collect();
        assert_eq!(level, vec![6, 7, 8, 9]);
        assert!(goals.iter().filter(|g| g.kind == GoalKind::Horizontal).all(|g| (6..=9).contains(&g.id)));
        let start = Workspace::default().start_point;
        for g in &goals {
            let len = (g.position - start).norm();
            match g.kind {
                GoalKind::Diagonal => assert!((len - 150.0 * 2f64.sqrt()).abs() < 1e-9),
                _ => assert!((len - 150.0).abs() < 1e-9),
            }
        }
        let ids: Vec<u8> = goals.iter().map(|g| g.id).collect();
        assert_eq!(ids, (1..=14).collect::<Vec<_>>());
    }

    #[test]
    fn diagonal_dead_zone_is_35_mm() {
        let p = default_protocol();
        let g = p.goals.iter().find(|g| g.kind == GoalKind::Diagonal).unwrap();
        let cone = p.cone_for(g).unwrap();
        let dz = cone.dead_zone_extent(g.position - p.workspace.start_point).unwrap();
        assert!((dz - 35.0).abs() < 0.5);
    }

    #[test]
    fn error_metrics() {
        let g = Vec3::new(0.0, 0.0, 250.0);
        assert_eq!(eps_xyz(g, g), 0.0);
        assert_eq!(eps_xyz(Vec3::new(10.0, 0.0, 250.0), g), 10.0);
        assert_eq!(eps_xy(Vec3::new(30.0, 40.0, 123.0), Vec2::zeros()), 50.0);
    }

    #[test]
    fn oracle_completes_everything_exactly() {
        let p = default_protocol();
        let run = run_sets(&OracleParticipant, &p, 5).unwrap();
        assert_eq!(run.results.len(), 42);
        for g in &run.summary.goals {
            assert_eq!(g.completion_rate, 1.0);
            assert_eq!(g.median_eps_xyz, Some(0.0));
        }
        assert!(run.results.iter().all(|r| r.metrics.eps_xyz == 0.0 && r.metrics.eps_xy == 0.0));
    }

    #[test]
    fn plan_shuffles_each_set_and_is_seeded() {
        let p = default_protocol();
        let a = plan_trials(&p, 11);
        assert_eq!(a, plan_trials(&p, 11));
        assert_ne!(a, plan_trials(&p, 12));
        for set in 1..=3 {
            let mut ids: Vec<u8> = a.iter().filter(|t| t.set == set).map(|t| t.goal_id).collect();
            ids.sort();
            assert_eq!(ids, (1..=14).collect::<Vec<_>>());
        }
    }

    #[test]
    fn medians_skip_incomplete_trials() {
        let goals = generate_goals(&Workspace::default());
        let mk = |goal_id, eps, completed| TrialResult {
            config: TrialConfig { set: 1, order: 0, goal_id, seed: 0 },
            final_position: Vec3::zeros(),
            metrics: TrialMetrics { eps_xyz: eps, eps_xy: 0.0, duration: 1.0, completed },
            trajectory: SampledTrajectory::new(),
        };
        let results = vec![mk(1, 10.0, true), mk(1, 1000.0, false), mk(1, 30.0, true), mk(2, 5.0, false)];
        let s = summarize(&goals, &results);
        let g1 = s.goal(1).unwrap();
        assert_eq!(g1.trials, 3);
        assert!((g1.completion_rate - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(g1.median_eps_xyz, Some(20.0));
        let g2 = s.goal(2).unwrap();
        assert_eq!(g2.completion_rate, 0.0);
        assert_eq!(g2.median_eps_xyz, None);
        let g3 = s.goal(3).unwrap();
        assert_eq!((g3.trials, g3.completion_rate, g3.median_duration), (0, 0.0, None));
    }

    #[test]
    fn box_stats_interpolate() {
        let b = box_stats(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((b.min, b.q1, b.median, b.q3, b.max), (1.0, 1.75, 2.5, 3.25, 4.0));
        assert_eq!(box_stats(&[]), None);
    }

    #[test]
    fn default_agent_vertical_errors_are_bounded() {
        let p = default_protocol();
        let agent = SimulatedParticipant {
            stm: StmParams::default(),
            sensor: SensorModel::default(),
            palm: PalmModel::default(),
            params: AgentParams::default(),
        };
        for id in [1u8, 14] {
            let r = run_trial(&agent, &p, TrialConfig { set: 1, order: 0, goal_id: id, seed: 3 }).unwrap();
            assert!(r.metrics.completed);
            assert!((25.0..=64.0).contains(&r.metrics.eps_xyz), "goal {id}: {}", r.metrics.eps_xyz);
        }
    }

    proptest! {
        #[test]
        fn metrics_are_translation_invariant(
            t in prop::array::uniform3(-500.0f64..500.0),
            hand in prop::array::uniform3(-100.0f64..100.0),
            goal_idx in 0usize..14,
        ) {
            let p = default_protocol();
            let goal = &p.goals[goal_idx];
            let cone = p.cone_for(goal).unwrap();
            let shift = Vec3::from(t);
            let moved = GuidanceCone::new(cone.start() + shift, cone.goal() + shift, cone.params()).unwrap();
            let h = cone.start() + Vec3::from(hand);
            let a = evaluate_trial(&cone, h, 2.0, true);
            let b = evaluate_trial(&moved, h + shift, 2.0, true);
            prop_assert!((a.eps_xyz - b.eps_xyz).abs() < 1e-9);
            prop_assert!((a.eps_xy - b.eps_xy).abs() < 1e-9);
        }
    }
}
