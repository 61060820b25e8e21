//! Emitter aperture built from tiled transducer units, and the workspace
//! frame anchored on it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Vec3;

/// Default transducer pitch of a 40 kHz unit (mm).
pub const DEFAULT_PITCH: f64 = 10.16;
/// Default unit footprint, chosen so a 2 x 3 tiling spans 410 x 454.2 mm.
pub const DEFAULT_FOOTPRINT: [f64; 2] = [205.0, 151.4];

#[derive(Debug, Error, PartialEq)]
pub enum LayoutError {
    #[error("layout has no units")]
    NoUnits,
    #[error("unit grid must have at least one row and one column")]
    EmptyGrid,
    #[error("pitch must be positive and finite, got {0}")]
    InvalidPitch(f64),
    #[error("unit footprint {footprint:?} is smaller than the transducer span {span:?}")]
    FootprintTooSmall { footprint: [f64; 2], span: [f64; 2] },
    #[error("unit footprints {0} and {1} overlap")]
    Overlap(usize, usize),
}

#[derive(Debug, Error, PartialEq)]
pub enum ArrayError {
    #[error("array has no transducers")]
    Empty,
    #[error("transducer {index} violates an invariant: {reason}")]
    InvalidTransducer { index: usize, reason: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transducer {
    pub position: Vec3,
    pub normal: Vec3,
    pub amplitude: f64,
}

impl Transducer {
    /// Upward-facing emitter at full drive.
    pub fn at(position: Vec3) -> Self {
        Self {
            position,
            normal: Vec3::z(),
            amplitude: 1.0,
        }
    }
}

/// Regular grid of emitters inside one unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnitGrid {
    /// Emitters along x.
    pub cols: usize,
    /// Emitters along y.
    pub rows: usize,
    pub pitch: f64,
    /// Board size (width along x, height along y). Defaults to `cols*pitch` by
    /// `rows*pitch` when absent.
    #[serde(default)]
    pub footprint: Option<[f64; 2]>,
}

impl UnitGrid {
    pub fn footprint(&self) -> [f64; 2] {
        self.footprint.unwrap_or([
            self.cols as f64 * self.pitch,
            self.rows as f64 * self.pitch,
        ])
    }

    /// Distance between the outermost emitter centres along each axis.
    pub fn span(&self) -> [f64; 2] {
        [
            self.cols.saturating_sub(1) as f64 * self.pitch,
            self.rows.saturating_sub(1) as f64 * self.pitch,
        ]
    }

    /// Offset from the board's lower-left corner to the first emitter; the
    /// emitter grid sits centred on the board.
    fn margin(&self) -> [f64; 2] {
        let [fw, fh] = self.footprint();
        let [sw, sh] = self.span();
        [(fw - sw) / 2.0, (fh - sh) / 2.0]
    }
}

impl Default for UnitGrid {
    fn default() -> Self {
        Self {
            cols: 18,
            rows: 14,
            pitch: DEFAULT_PITCH,
            footprint: Some(DEFAULT_FOOTPRINT),
        }
    }
}

/// Units sharing one grid. Each origin is the position of the unit's first
/// emitter (lowest x and y) on the z = 0 plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayLayout {
    pub grid: UnitGrid,
    pub unit_origins: Vec<[f64; 2]>,
}

impl ArrayLayout {
    /// Tiles `cols x rows` units edge to edge, centred on the frame origin.
    pub fn tiled(grid: UnitGrid, cols: usize, rows: usize) -> Self {
        let [fw, fh] = grid.footprint();
        let [mx, my] = grid.margin();
        let x0 = -(cols as f64) * fw / 2.0;
        let y0 = -(rows as f64) * fh / 2.0;
        let unit_origins = (0..rows)
            .flat_map(|j| {
                (0..cols).map(move |i| [x0 + i as f64 * fw + mx, y0 + j as f64 * fh + my])
            })
            .collect();
        Self { grid, unit_origins }
    }

    /// Board rectangle of unit `i` as `(min_x, min_y, max_x, max_y)`.
    fn footprint_rect(&self, i: usize) -> (f64, f64, f64, f64) {
        let [ox, oy] = self.unit_origins[i];
        let [mx, my] = self.grid.margin();
        let [fw, fh] = self.grid.footprint();
        (ox - mx, oy - my, ox - mx + fw, oy - my + fh)
    }

    /// Width and height of the union of all unit boards.
    pub fn bounding_box(&self) -> (f64, f64) {
        let mut lo = (f64::INFINITY, f64::INFINITY);
        let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for i in 0..self.unit_origins.len() {
            let (x0, y0, x1, y1) = self.footprint_rect(i);
            lo = (lo.0.min(x0), lo.1.min(y0));
            hi = (hi.0.max(x1), hi.1.max(y1));
        }
        if self.unit_origins.is_empty() {
            return (0.0, 0.0);
        }
        (hi.0 - lo.0, hi.1 - lo.1)
    }

    /// Centre of the bounding box on the array plane.
    pub fn bounding_box_center(&self) -> Vec3 {
        let (mut x0, mut y0, mut x1, mut y1) = (
            f64::INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
        );
        for i in 0..self.unit_origins.len() {
            let r = self.footprint_rect(i);
            x0 = x0.min(r.0);
            y0 = y0.min(r.1);
            x1 = x1.max(r.2);
            y1 = y1.max(r.3);
        }
        Vec3::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, 0.0)
    }

    pub fn validate(&self) -> Result<(), LayoutError> {
        let g = &self.grid;
        if self.unit_origins.is_empty() {
            return Err(LayoutError::NoUnits);
        }
        if g.cols == 0 || g.rows == 0 {
            return Err(LayoutError::EmptyGrid);
        }
        if !(g.pitch.is_finite() && g.pitch > 0.0) {
            return Err(LayoutError::InvalidPitch(g.pitch));
        }
        let (footprint, span) = (g.footprint(), g.span());
        if footprint[0] < span[0] || footprint[1] < span[1] {
            return Err(LayoutError::FootprintTooSmall { footprint, span });
        }
        // Boards that merely touch along an edge are fine.
        const EPS: f64 = 1e-9;
        for a in 0..self.unit_origins.len() {
            let ra = self.footprint_rect(a);
            for b in a + 1..self.unit_origins.len() {
                let rb = self.footprint_rect(b);
                let dx = ra.2.min(rb.2) - ra.0.max(rb.0);
                let dy = ra.3.min(rb.3) - ra.1.max(rb.1);
                if dx > EPS && dy > EPS {
                    return Err(LayoutError::Overlap(a, b));
                }
            }
        }
        Ok(())
    }
}

impl Default for ArrayLayout {
    /// Six default units tiled two across (x) by three down (y).
    fn default() -> Self {
        Self::tiled(UnitGrid::default(), 2, 3)
    }
}

/// Immutable set of emitters on the z = 0 plane.
#[derive(Debug, Clone, PartialEq)]
pub struct TransducerArray {
    transducers: Vec<Transducer>,
}

impl TransducerArray {
    pub fn from_transducers(transducers: Vec<Transducer>) -> Result<Self, ArrayError> {
        for (index, t) in transducers.iter().enumerate() {
            let reason = if t.position.z != 0.0 {
                Some("position must lie on z = 0")
            } else if !t.position.iter().all(|c| c.is_finite()) {
                Some("position must be finite")
            } else if (t.normal.norm() - 1.0).abs() > 1e-9 {
                Some("normal must be a unit vector")
            } else if !(0.0..=1.0).contains(&t.amplitude) {
                Some("amplitude must be in [0, 1]")
            } else {
                None
            };
            if let Some(reason) = reason {
                return Err(ArrayError::InvalidTransducer { index, reason });
            }
        }
        Ok(Self { transducers })
    }

    pub fn transducers(&self) -> &[Transducer] {
        &self.transducers
    }

    pub fn len(&self) -> usize {
        self.transducers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transducers.is_empty()
    }

    /// Mean emitter position.
    pub fn center(&self) -> Result<Vec3, ArrayError> {
        if self.transducers.is_empty() {
            return Err(ArrayError::Empty);
        }
        let sum: Vec3 = self.transducers.iter().map(|t| t.position).sum();
        Ok(sum / self.transducers.len() as f64)
    }

    /// Same geometry with every amplitude multiplied by `factor`. Amplitudes
    /// are not re-validated, so factors above 1 are allowed for analysis.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            transducers: self
                .transducers
                .iter()
                .map(|t| Transducer {
                    amplitude: t.amplitude * factor,
                    ..*t
                })
                .collect(),
        }
    }
}

/// Expands a layout into its emitters, unit by unit, row-major within a unit.
pub fn build_array(layout: &ArrayLayout) -> Result<TransducerArray, LayoutError> {
    layout.validate()?;
    let g = &layout.grid;
    let transducers = layout
        .unit_origins
        .iter()
        .flat_map(|&[ox, oy]| {
            (0..g.rows).flat_map(move |j| {
                (0..g.cols).map(move |i| {
                    Transducer::at(Vec3::new(
                        ox + i as f64 * g.pitch,
                        oy + j as f64 * g.pitch,
                        0.0,
                    ))
                })
            })
        })
        .collect();
    Ok(TransducerArray { transducers })
}

/// Cube-shaped region the hand explores, centred horizontally on the array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub start_point: Vec3,
    /// Half the cube side; goals sit this far from the start along each axis.
    pub half_extent: f64,
}

impl Workspace {
    pub const DEFAULT_START_HEIGHT: f64 = 400.0;
    pub const DEFAULT_HALF_EXTENT: f64 = 150.0;

    pub fn above(array: &TransducerArray, height: f64, half_extent: f64) -> Result<Self, ArrayError> {
        let c = array.center()?;
        Ok(Self {
            start_point: Vec3::new(c.x, c.y, height),
            half_extent,
        })
    }

    pub fn default_for(array: &TransducerArray) -> Result<Self, ArrayError> {
        Self::above(array, Self::DEFAULT_START_HEIGHT, Self::DEFAULT_HALF_EXTENT)
    }
}

impl Default for Workspace {
    /// Start 400 mm above the frame origin, which is the centre of the
    /// default layout.
    fn default() -> Self {
        Self {
            start_point: Vec3::new(0.0, 0.0, Self::DEFAULT_START_HEIGHT),
            half_extent: Self::DEFAULT_HALF_EXTENT,
        }
    }
}
