//! MAP-Elites over the (dx, dy, dpsi) behavior space of the robot.
//!
//! The genome is a [`ParameterSet`] of three motor frequency bytes. Each
//! evaluation yields a [`Behavior`]; the [`Archive`] keeps, per discretized
//! [`BinIndex`], the elite with the highest [`fitness`].

mod archive;
mod search;
mod variation;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::descriptor::wrap_angle;

pub use archive::{Archive, ArchiveError, Elite, Offer, OfferOutcome, ARCHIVE_HEADER};
pub(crate) use archive::fmt3;
pub use search::{run_map_elites, Evaluator, SearchConfig, SearchError, TrialSink};
pub use variation::{mutate, sample_random, select_elite, trial_rng, GaussianMutation, TrialRng};

/// Resolution used for behaviors that cross a text boundary (wire protocol,
/// CSV logs). Values are snapped to a multiple of 0.001.
pub const BEHAVIOR_DECIMALS: usize = 3;

/// Three motor frequency commands, one PWM-style byte per motor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParameterSet {
    pub f1: u8,
    pub f2: u8,
    pub f3: u8,
}

impl ParameterSet {
    pub const fn new(f1: u8, f2: u8, f3: u8) -> Self {
        Self { f1, f2, f3 }
    }

    pub const fn from_array(f: [u8; 3]) -> Self {
        Self::new(f[0], f[1], f[2])
    }

    pub const fn as_array(&self) -> [u8; 3] {
        [self.f1, self.f2, self.f3]
    }

    /// Sum of the three bytes, compared against the stationarity threshold.
    pub fn byte_sum(&self) -> u32 {
        self.f1 as u32 + self.f2 as u32 + self.f3 as u32
    }

    /// Cyclic motor permutation `(f1, f2, f3) -> (f2, f3, f1)`.
    pub const fn rotated(&self) -> Self {
        Self::new(self.f2, self.f3, self.f1)
    }
}

impl fmt::Display for ParameterSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.f1, self.f2, self.f3)
    }
}

/// Local-frame displacement (mm) and yaw change (degrees) over one trial.
///
/// `dpsi` is always wrapped to `[-180, 180)`; use [`Behavior::new`] rather
/// than building the struct by hand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Behavior {
    pub dx: f64,
    pub dy: f64,
    pub dpsi: f64,
}

impl Behavior {
    pub const ZERO: Behavior = Behavior { dx: 0.0, dy: 0.0, dpsi: 0.0 };

    pub fn new(dx: f64, dy: f64, dpsi: f64) -> Self {
        Self { dx, dy, dpsi: wrap_angle(dpsi) }
    }

    /// True when the displacement lies inside the geometry's x/y bounds.
    pub fn in_range(&self, geometry: &BinGeometry) -> bool {
        let (xl, xh) = geometry.x_bounds;
        let (yl, yh) = geometry.y_bounds;
        (xl..=xh).contains(&self.dx) && (yl..=yh).contains(&self.dy)
    }

    /// Snap every component to the text resolution so that formatting with
    /// [`BEHAVIOR_DECIMALS`] decimals and parsing back is lossless.
    pub fn quantized(&self) -> Self {
        Self::new(quantize(self.dx), quantize(self.dy), quantize(self.dpsi))
    }

    pub fn is_finite(&self) -> bool {
        self.dx.is_finite() && self.dy.is_finite() && self.dpsi.is_finite()
    }
}

pub(crate) fn quantize(v: f64) -> f64 {
    let q = (v * 1000.0).round() / 1000.0;
    // avoid "-0.000" in text output
    if q == 0.0 {
        0.0
    } else {
        q
    }
}

/// Coordinates of one cell of the discretized behavior space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BinIndex {
    pub ix: usize,
    pub iy: usize,
    pub ipsi: usize,
}

impl BinIndex {
    pub const fn new(ix: usize, iy: usize, ipsi: usize) -> Self {
        Self { ix, iy, ipsi }
    }
}

impl fmt::Display for BinIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}]", self.ix, self.iy, self.ipsi)
    }
}

/// Which axes had to be clamped into a boundary bin.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClampFlags {
    pub x: bool,
    pub y: bool,
    pub psi: bool,
}

impl ClampFlags {
    pub fn any(&self) -> bool {
        self.x || self.y || self.psi
    }
}

pub const PSI_BOUNDS: (f64, f64) = (-180.0, 180.0);

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeometryError {
    #[error("axis {axis}: bounds ({lo}, {hi}) must be finite with lo < hi")]
    Bounds { axis: &'static str, lo: f64, hi: f64 },
    #[error("axis {axis}: bin count must be positive")]
    ZeroBins { axis: &'static str },
}

/// Uniform 3-axis grid over the behavior space. The yaw axis always spans
/// `[-180, 180)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BinGeometry {
    pub x_bounds: (f64, f64),
    pub y_bounds: (f64, f64),
    pub nx: usize,
    pub ny: usize,
    pub npsi: usize,
}

impl Default for BinGeometry {
    fn default() -> Self {
        Self { x_bounds: (-360.0, 360.0), y_bounds: (-360.0, 360.0), nx: 12, ny: 12, npsi: 6 }
    }
}

impl BinGeometry {
    pub fn validate(&self) -> Result<(), GeometryError> {
        for (axis, (lo, hi)) in [("x", self.x_bounds), ("y", self.y_bounds)] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(GeometryError::Bounds { axis, lo, hi });
            }
        }
        for (axis, n) in [("x", self.nx), ("y", self.ny), ("psi", self.npsi)] {
            if n == 0 {
                return Err(GeometryError::ZeroBins { axis });
            }
        }
        Ok(())
    }

    pub const fn psi_bounds(&self) -> (f64, f64) {
        PSI_BOUNDS
    }

    pub fn bin_count(&self) -> usize {
        self.nx * self.ny * self.npsi
    }

    pub fn widths(&self) -> (f64, f64, f64) {
        (
            (self.x_bounds.1 - self.x_bounds.0) / self.nx as f64,
            (self.y_bounds.1 - self.y_bounds.0) / self.ny as f64,
            (PSI_BOUNDS.1 - PSI_BOUNDS.0) / self.npsi as f64,
        )
    }

    /// Half-open interval `[lo, hi)` covered by `bin` on each axis.
    pub fn bin_intervals(&self, bin: BinIndex) -> [(f64, f64); 3] {
        let (wx, wy, wpsi) = self.widths();
        let iv = |lo: f64, w: f64, i: usize| (lo + w * i as f64, lo + w * (i + 1) as f64);
        [
            iv(self.x_bounds.0, wx, bin.ix),
            iv(self.y_bounds.0, wy, bin.iy),
            iv(PSI_BOUNDS.0, wpsi, bin.ipsi),
        ]
    }

    /// Discretize a behavior. Values outside the bounds land in the nearest
    /// boundary bin and are reported through [`ClampFlags`].
    pub fn bin_index(&self, b: &Behavior) -> (BinIndex, ClampFlags) {
        let (ix, cx) = axis_bin(b.dx, self.x_bounds, self.nx);
        let (iy, cy) = axis_bin(b.dy, self.y_bounds, self.ny);
        let (ipsi, cpsi) = axis_bin(wrap_angle(b.dpsi), PSI_BOUNDS, self.npsi);
        (BinIndex::new(ix, iy, ipsi), ClampFlags { x: cx, y: cy, psi: cpsi })
    }

    pub fn iter_bins(&self) -> impl Iterator<Item = BinIndex> + '_ {
        (0..self.npsi).flat_map(move |ipsi| {
            (0..self.ny).flat_map(move |iy| (0..self.nx).map(move |ix| BinIndex::new(ix, iy, ipsi)))
        })
    }
}

fn axis_bin(v: f64, (lo, hi): (f64, f64), n: usize) -> (usize, bool) {
    if v.is_nan() || v < lo {
        return (0, true);
    }
    if v >= hi {
        return (n - 1, true);
    }
    let width = (hi - lo) / n as f64;
    let i = ((v - lo) / width).floor() as usize;
    (i.min(n - 1), false)
}

/// Free-function form of [`BinGeometry::bin_index`].
pub fn bin_index(b: &Behavior, geometry: &BinGeometry) -> (BinIndex, ClampFlags) {
    geometry.bin_index(b)
}

/// Sum of absolute displacement and rotation, each normalized by the
/// behavior-space half-range and capped at 1, so the result lies in `[0, 3]`.
pub fn fitness(b: &Behavior, geometry: &BinGeometry) -> f64 {
    let half = |(lo, hi): (f64, f64)| (hi - lo) / 2.0;
    let term = |v: f64, h: f64| (v.abs() / h).min(1.0);
    term(b.dx, half(geometry.x_bounds))
        + term(b.dy, half(geometry.y_bounds))
        + term(b.dpsi, half(PSI_BOUNDS))
}

/// Label of the experiment phase that produced a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    SharedRandom,
    Mutation,
    RandomControl,
}

impl Phase {
    pub const fn as_str(&self) -> &'static str {
        match self {
            Phase::SharedRandom => "shared_random",
            Phase::Mutation => "mutation",
            Phase::RandomControl => "random_control",
        }
    }

    pub(crate) const fn stream(&self) -> u64 {
        match self {
            Phase::SharedRandom => 1,
            Phase::Mutation => 2,
            Phase::RandomControl => 3,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shared_random" => Ok(Phase::SharedRandom),
            "mutation" => Ok(Phase::Mutation),
            "random_control" => Ok(Phase::RandomControl),
            other => Err(format!("unknown phase `{other}`")),
        }
    }
}
