//! Hand sensing: marker centroid, frame-rate quantisation, pipeline delay and
//! optional isotropic Gaussian noise.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Vec3;

#[derive(Debug, Error)]
pub enum TrackingError {
    #[error("timestamp {got} is earlier than the previous sample at {last}")]
    NonMonotonic { last: f64, got: f64 },
    #[error("trajectory has no samples")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Three stickers on the palm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerSet(pub [Vec3; 3]);

impl MarkerSet {
    pub fn centroid(&self) -> Vec3 {
        (self.0[0] + self.0[1] + self.0[2]) / 3.0
    }

    /// True when the markers are (nearly) collinear, so the palm orientation
    /// they imply is undefined. The centroid is still usable.
    pub fn is_degenerate(&self) -> bool {
        let [a, b, c] = self.0;
        let area2 = (b - a).cross(&(c - a)).norm();
        let scale = (b - a).norm().max((c - a).norm()).max(1e-12);
        area2 <= 1e-9 * scale * scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorModel {
    /// Frames per second; `f64::INFINITY` samples continuously.
    pub frame_rate: f64,
    /// Seconds from capture to stimulus update.
    pub latency: f64,
    /// Per-axis standard deviation (mm).
    pub noise_std: f64,
}

impl SensorModel {
    pub fn ideal() -> Self {
        Self {
            frame_rate: f64::INFINITY,
            latency: 0.0,
            noise_std: 0.0,
        }
    }

    pub fn frame_interval(&self) -> f64 {
        if self.frame_rate.is_finite() {
            1.0 / self.frame_rate
        } else {
            0.0
        }
    }

    /// Start of the frame containing `t`.
    pub fn frame_time(&self, t: f64) -> f64 {
        if self.frame_rate.is_finite() {
            self.frame_index(t) as f64 / self.frame_rate
        } else {
            t
        }
    }

    fn frame_index(&self, t: f64) -> u64 {
        (t * self.frame_rate + 1e-9).floor().max(0.0) as u64
    }

    /// Worst-case age of the reported position: delay plus one frame.
    pub fn max_staleness(&self) -> f64 {
        self.latency + self.frame_interval()
    }
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            frame_rate: 30.0,
            latency: 0.090,
            noise_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandSample {
    pub timestamp: f64,
    pub position: Vec3,
}

/// Hand position as a function of time.
pub trait Trajectory {
    fn position_at(&self, t: f64) -> Vec3;
}

impl<F: Fn(f64) -> Vec3> Trajectory for F {
    fn position_at(&self, t: f64) -> Vec3 {
        self(t)
    }
}

/// Recorded path with zero-order hold between samples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampledTrajectory {
    samples: Vec<HandSample>,
}

impl SampledTrajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_samples(samples: Vec<HandSample>) -> Result<Self, TrackingError> {
        let mut t = Self::new();
        for s in samples {
            t.push(s)?;
        }
        Ok(t)
    }

    /// Appends a sample. A sample at the same timestamp as the last one
    /// replaces it, keeping timestamps strictly increasing.
    pub fn push(&mut self, sample: HandSample) -> Result<(), TrackingError> {
        match self.samples.last_mut() {
            Some(last) if sample.timestamp < last.timestamp => Err(TrackingError::NonMonotonic {
                last: last.timestamp,
                got: sample.timestamp,
            }),
            Some(last) if sample.timestamp == last.timestamp => {
                *last = sample;
                Ok(())
            }
            _ => {
                self.samples.push(sample);
                Ok(())
            }
        }
    }

    pub fn samples(&self) -> &[HandSample] {
        &self.samples
    }

    pub fn last(&self) -> Option<&HandSample> {
        self.samples.last()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Keeps every `stride`-th sample plus the last one.
    pub fn decimated(&self, stride: usize) -> Vec<HandSample> {
        let stride = stride.max(1);
        let mut out: Vec<_> = self.samples.iter().step_by(stride).copied().collect();
        if let Some(last) = self.samples.last() {
            if out.last() != Some(last) {
                out.push(*last);
            }
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, samples: &[HandSample], mut w: W) -> Result<(), TrackingError> {
        for s in samples {
            serde_json::to_writer(&mut w, s).map_err(|e| TrackingError::Io(e.into()))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, TrackingError> {
        let mut t = Self::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let s: HandSample =
                serde_json::from_str(&line).map_err(|source| TrackingError::Parse { line: i + 1, source })?;
            t.push(s)?;
        }
        if t.is_empty() {
            return Err(TrackingError::Empty);
        }
        Ok(t)
    }
}

impl Trajectory for SampledTrajectory {
    /// Position of the latest sample at or before `t`; the first sample for
    /// earlier times. Panics on an empty trajectory.
    fn position_at(&self, t: f64) -> Vec3 {
        let idx = self.samples.partition_point(|s| s.timestamp <= t);
        self.samples[idx.saturating_sub(1)].position
    }
}

/// What the sensor reports at time `t`: the hand as it was one pipeline delay
/// before the start of the current frame. Before the first delayed frame is
/// available the initial position is held.
pub fn observe<T: Trajectory + ?Sized>(trajectory: &T, t: f64, model: &SensorModel, seed: u64) -> HandSample {
    let frame_t = model.frame_time(t);
    let query = frame_t - model.latency;
    let mut position = trajectory.position_at(if query < 0.0 { 0.0 } else { query });
    if model.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // One noise draw per frame, stable across repeated queries.
        rng.set_stream(if model.frame_rate.is_finite() {
            model.frame_index(t)
        } else {
            t.to_bits()
        });
        let normal = Normal::new(0.0, model.noise_std).expect("finite noise std");
        position += Vec3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
    }
    HandSample {
        timestamp: frame_t,
        position,
    }
}
