//! Single-focus phase computation and the linear point-source pressure field.
//!
//! Each emitter is an omnidirectional point source with `1/r` spreading; no
//! directivity, no nonlinearity. Pressure is in arbitrary linear units and
//! radiation pressure is `|p|^2` (proportionality constant 1), which is all
//! the downstream code needs since it only compares relative strengths.

use std::f64::consts::TAU;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::array::TransducerArray;
use crate::Vec3;

/// Emitter-to-point distance below which the field is undefined (mm).
const SINGULAR_DISTANCE: f64 = 1e-9;
/// Half-length of the lateral line searched for the half-maximum (mm).
const SPOT_SEARCH_HALF_WIDTH: f64 = 30.0;
const SPOT_COARSE_STEP: f64 = 0.5;
const SPOT_RESOLUTION: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum AcousticsError {
    #[error("point {0:?} is not above the array plane")]
    NotAboveArray([f64; 3]),
    #[error("point coincides with transducer {0}")]
    Singular(usize),
    #[error("expected {expected} phases, got {got}")]
    PhaseCount { expected: usize, got: usize },
    #[error("radiation pressure has no half-maximum crossing within {0} mm of the focus")]
    DegenerateProfile(f64),
    #[error("invalid scan grid: {0}")]
    InvalidGrid(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Medium {
    /// m/s
    pub sound_speed: f64,
    /// Hz
    pub frequency: f64,
}

impl Medium {
    /// Wavelength in mm.
    pub fn wavelength(&self) -> f64 {
        self.sound_speed * 1000.0 / self.frequency
    }

    /// Wavenumber in rad/mm.
    pub fn wavenumber(&self) -> f64 {
        TAU / self.wavelength()
    }
}

impl Default for Medium {
    fn default() -> Self {
        Self {
            sound_speed: 340.0,
            frequency: 40_000.0,
        }
    }
}

/// Drive phase per transducer, radians in `[0, 2π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseVector(Vec<f64>);

impl PhaseVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub point: Vec3,
    pub pressure: Complex64,
    pub radiation_pressure: f64,
}

fn wrap_phase(phase: f64) -> f64 {
    let p = phase.rem_euclid(TAU);
    if p >= TAU {
        0.0
    } else {
        p
    }
}

fn require_above(point: &Vec3) -> Result<(), AcousticsError> {
    if point.z > 0.0 && point.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(AcousticsError::NotAboveArray([point.x, point.y, point.z]))
    }
}

/// Phases that bring every emitter's wave to the focal point in phase:
/// `(-2π·d/λ) mod 2π` with `d` the emitter-to-focus distance.
pub fn focus_phases(
    array: &TransducerArray,
    focal_point: Vec3,
    medium: &Medium,
) -> Result<PhaseVector, AcousticsError> {
    require_above(&focal_point)?;
    let k = medium.wavenumber();
    Ok(PhaseVector(
        array
            .transducers()
            .iter()
            .map(|t| wrap_phase(-k * (focal_point - t.position).norm()))
            .collect(),
    ))
}

/// Complex pressure `Σ a/r · exp(i(k r + φ))` at `point`.
pub fn field_at(
    array: &TransducerArray,
    phases: &PhaseVector,
    point: Vec3,
    medium: &Medium,
) -> Result<FieldSample, AcousticsError> {
    require_above(&point)?;
    if phases.len() != array.len() {
        return Err(AcousticsError::PhaseCount {
            expected: array.len(),
            got: phases.len(),
        });
    }
    let k = medium.wavenumber();
    let mut re = 0.0;
    let mut im = 0.0;
    for (i, (t, &phi)) in array.transducers().iter().zip(phases.as_slice()).enumerate() {
        let r = (point - t.position).norm();
        if r < SINGULAR_DISTANCE {
            return Err(AcousticsError::Singular(i));
        }
        let (s, c) = (k * r + phi).sin_cos();
        let a = t.amplitude / r;
        re += a * c;
        im += a * s;
    }
    let pressure = Complex64::new(re, im);
    Ok(FieldSample {
        point,
        pressure,
        radiation_pressure: pressure.norm_sqr(),
    })
}

/// Full width at half maximum of radiation pressure along the x axis through
/// the focus. Each side walks outward in coarse steps until the profile drops
/// below half the focal value, then bisects to 0.1 mm; only the central lobe
/// is measured.
pub fn focal_spot_width(
    array: &TransducerArray,
    focal_point: Vec3,
    medium: &Medium,
) -> Result<f64, AcousticsError> {
    let phases = focus_phases(array, focal_point, medium)?;
    let half = field_at(array, &phases, focal_point, medium)?.radiation_pressure / 2.0;
    let rp = |dx: f64| -> Result<f64, AcousticsError> {
        Ok(field_at(array, &phases, focal_point + Vec3::new(dx, 0.0, 0.0), medium)?.radiation_pressure)
    };
    let edge = |sign: f64| -> Result<f64, AcousticsError> {
        let mut inside = 0.0;
        let mut x = SPOT_COARSE_STEP;
        while x <= SPOT_SEARCH_HALF_WIDTH + 1e-12 {
            if rp(sign * x)? < half {
                let (mut lo, mut hi) = (inside, x);
                while hi - lo > SPOT_RESOLUTION {
                    let mid = 0.5 * (lo + hi);
                    if rp(sign * mid)? < half {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return Ok(0.5 * (lo + hi));
            }
            inside = x;
            x += SPOT_COARSE_STEP;
        }
        Err(AcousticsError::DegenerateProfile(SPOT_SEARCH_HALF_WIDTH))
    };
    Ok(edge(1.0)? + edge(-1.0)?)
}

/// Radiation pressure at `point` relative to the focal value when the array
/// is focused at `focus`, clamped to `[0, 1]`.
pub fn relative_radiation_pressure(
    array: &TransducerArray,
    focus: Vec3,
    point: Vec3,
    medium: &Medium,
) -> Result<f64, AcousticsError> {
    let phases = focus_phases(array, focus, medium)?;
    let peak = field_at(array, &phases, focus, medium)?.radiation_pressure;
    if peak <= 0.0 {
        return Ok(0.0);
    }
    let at = field_at(array, &phases, point, medium)?.radiation_pressure;
    Ok((at / peak).clamp(0.0, 1.0))
}

/// Axis-aligned inclusive sampling grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub min: Vec3,
    pub max: Vec3,
    pub step: f64,
}

impl ScanGrid {
    pub fn cube(center: Vec3, half_side: f64, step: f64) -> Self {
        let h = Vec3::repeat(half_side);
        Self {
            min: center - h,
            max: center + h,
            step,
        }
    }

    fn counts(&self) -> Result<[usize; 3], AcousticsError> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(AcousticsError::InvalidGrid("step must be positive"));
        }
        let mut n = [0usize; 3];
        for (a, slot) in n.iter_mut().enumerate() {
            let extent = self.max[a] - self.min[a];
            if !(extent.is_finite() && extent >= 0.0) {
                return Err(AcousticsError::InvalidGrid("max must not be below min"));
            }
            *slot = (extent / self.step + 1e-9).floor() as usize + 1;
        }
        Ok(n)
    }

    /// Points in x-fastest order.
    pub fn points(&self) -> Result<Vec<Vec3>, AcousticsError> {
        let [nx, ny, nz] = self.counts()?;
        let mut out = Vec::with_capacity(nx * ny * nz);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    out.push(self.min + Vec3::new(i as f64, j as f64, k as f64) * self.step);
                }
            }
        }
        Ok(out)
    }
}

/// Evaluates the field over a grid in parallel; output order matches
/// [`ScanGrid::points`].
pub fn scan(
    array: &TransducerArray,
    phases: &PhaseVector,
    medium: &Medium,
    grid: &ScanGrid,
) -> Result<Vec<FieldSample>, AcousticsError> {
    grid.points()?
        .into_par_iter()
        .map(|p| field_at(array, phases, p, medium))
        .collect()
}

/// Sample with the largest radiation pressure.
pub fn scan_maximum(samples: &[FieldSample]) -> Option<&FieldSample> {
    samples
        .iter()
        .max_by(|a, b| a.radiation_pressure.total_cmp(&b.radiation_pressure))
}

/// Writes `x,y,z,abs_p,abs_p2` rows.
pub fn write_scan_csv<W: Write>(samples: &[FieldSample], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["x", "y", "z", "abs_p", "abs_p2"])?;
    for s in samples {
        w.write_record(&[
            s.point.x.to_string(),
            s.point.y.to_string(),
            s.point.z.to_string(),
            s.pressure.norm().to_string(),
            s.radiation_pressure.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
