//! Spatio-temporal modulation: a single focus stepped around a circle.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{Vec2, Vec3};

/// Slack for floor() at dwell boundaries, in units of dwells.
const BOUNDARY_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum StmError {
    #[error("circle radius must be positive, got {0}")]
    InvalidRadius(f64),
    #[error("need at least 3 points per circle, got {0}")]
    TooFewPoints(usize),
    #[error("render frequency must be positive, got {0}")]
    InvalidFrequency(f64),
}

/// Sampling density and circle repetition rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StmParams {
    pub n_points: usize,
    /// Full circles per second (Hz).
    pub render_freq: f64,
}

impl StmParams {
    /// Focus switches per second.
    pub fn sample_freq(&self) -> f64 {
        self.render_freq * self.n_points as f64
    }

    pub fn dwell(&self) -> f64 {
        1.0 / self.sample_freq()
    }
}

impl Default for StmParams {
    fn default() -> Self {
        Self {
            n_points: 10,
            render_freq: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleStimulus {
    pub center: Vec2,
    pub plane_z: f64,
    pub radius: f64,
    pub params: StmParams,
}

impl CircleStimulus {
    pub fn sample_freq(&self) -> f64 {
        self.params.sample_freq()
    }
}

/// Focal points in presentation order plus the time each one is held.
#[derive(Debug, Clone, PartialEq)]
pub struct FocusSchedule {
    points: Vec<Vec3>,
    dwell: f64,
}

/// Points at angles `2πi/N`, counter-clockwise from +x.
pub fn sample_circle(stim: &CircleStimulus) -> Result<FocusSchedule, StmError> {
    let n = stim.params.n_points;
    if !(stim.radius.is_finite() && stim.radius > 0.0) {
        return Err(StmError::InvalidRadius(stim.radius));
    }
    if n < 3 {
        return Err(StmError::TooFewPoints(n));
    }
    if !(stim.params.render_freq.is_finite() && stim.params.render_freq > 0.0) {
        return Err(StmError::InvalidFrequency(stim.params.render_freq));
    }
    let points = (0..n)
        .map(|i| {
            let (s, c) = (TAU * i as f64 / n as f64).sin_cos();
            Vec3::new(
                stim.center.x + stim.radius * c,
                stim.center.y + stim.radius * s,
                stim.plane_z,
            )
        })
        .collect();
    Ok(FocusSchedule {
        points,
        dwell: stim.params.dwell(),
    })
}

impl FocusSchedule {
    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// Seconds each point is held.
    pub fn dwell(&self) -> f64 {
        self.dwell
    }

    /// Time for one full circle.
    pub fn period(&self) -> f64 {
        self.dwell * self.points.len() as f64
    }

    pub fn index_at_time(&self, t: f64) -> usize {
        let t = t.max(0.0);
        let steps = (t / self.dwell + BOUNDARY_EPS).floor();
        (steps as u64 % self.points.len() as u64) as usize
    }

    /// Active focus at time `t` (piecewise constant).
    pub fn focus_at_time(&self, t: f64) -> Vec3 {
        self.points[self.index_at_time(t)]
    }
}
