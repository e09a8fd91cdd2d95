//! Two-parameter stability scans of the trivial solution and classification
//! of the bifurcation type along the stability boundary.

use rayon::prelude::*;
use serde::Serialize;

use crate::continuation::EventKind;
use crate::error::Result;
use crate::model::{trivial_solution, CellRow, ParamId, ParameterSet};
use crate::numerics::{classify_stability, NumericsConfig, Spectrum, StabilityTag};

/// Linearly (or logarithmically) spaced samples of one parameter axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub param: ParamId,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    #[serde(default)]
    pub log: bool,
}

impl GridSpec {
    pub fn new(param: ParamId, lo: f64, hi: f64, count: usize) -> Result<GridSpec> {
        if !(lo < hi) || count < 2 {
            return Err(crate::error::Error::Config(format!(
                "grid axis needs lo < hi and count >= 2 (got {lo}:{hi}:{count})"
            )));
        }
        Ok(GridSpec {
            param,
            lo,
            hi,
            count,
            log: false,
        })
    }

    pub fn values(&self) -> Vec<f64> {
        let k = self.count;
        (0..k)
            .map(|i| {
                let t = i as f64 / (k - 1) as f64;
                if self.log {
                    (self.lo.ln() + t * (self.hi.ln() - self.lo.ln())).exp()
                } else {
                    self.lo + t * (self.hi - self.lo)
                }
            })
            .collect()
    }
}

/// Stability class of one grid node. Invalid marks parameter combinations
/// where the closed-form trivial solution does not exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CellClass {
    Unstable,
    Stable,
    Invalid,
}

impl CellClass {
    pub fn code(&self) -> u8 {
        match self {
            CellClass::Unstable => 0,
            CellClass::Stable => 1,
            CellClass::Invalid => 9,
        }
    }
}

/// Stability of the trivial solution over a two-parameter grid.
#[derive(Debug, Clone)]
pub struct StabilityGrid {
    pub x: GridSpec,
    pub y: GridSpec,
    /// Row-major, index = iy * x.count + ix.
    pub cells: Vec<CellClass>,
    pub base: ParameterSet,
    pub n: usize,
}

impl StabilityGrid {
    pub fn cell(&self, ix: usize, iy: usize) -> CellClass {
        self.cells[iy * self.x.count + ix]
    }

    pub fn stable_count(&self) -> usize {
        self.cells.iter().filter(|c| **c == CellClass::Stable).count()
    }
}

/// One classified point on the stability boundary.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoundarySample {
    pub x: f64,
    pub y: f64,
    pub kind: EventKind,
}

pub type BoundaryTypeCurve = Vec<BoundarySample>;

fn node_params(base: &ParameterSet, x: &GridSpec, y: &GridSpec, vx: f64, vy: f64) -> ParameterSet {
    y.param.with(&x.param.with(base, vx), vy)
}

/// Stability tag and spectrum of the trivial solution at one parameter set.
pub fn classify_trivial(
    row: &CellRow,
    params: &ParameterSet,
    cfg: &NumericsConfig,
) -> Result<(StabilityTag, Spectrum)> {
    let u = trivial_solution(row, params)?;
    let spectrum = crate::integrate::dynamic_spectrum(&u, row, params, cfg)?;
    Ok((classify_stability(&spectrum, cfg), spectrum))
}

fn classify_node(row: &CellRow, params: &ParameterSet, cfg: &NumericsConfig) -> CellClass {
    match classify_trivial(row, params, cfg) {
        Ok((tag, _)) => {
            if tag.is_stable() {
                CellClass::Stable
            } else {
                CellClass::Unstable
            }
        }
        Err(_) => CellClass::Invalid,
    }
}

/// Classifies the trivial solution on every node of the grid. The parallel
/// path assembles results by index, so it is bitwise identical to the serial
/// one.
pub fn stability_map(
    x: &GridSpec,
    y: &GridSpec,
    base: &ParameterSet,
    row: &CellRow,
    cfg: &NumericsConfig,
    parallel: bool,
) -> StabilityGrid {
    assert_ne!(x.param, y.param, "grid axes must differ");
    let xs = x.values();
    let ys = y.values();
    let total = xs.len() * ys.len();
    let node = |idx: usize| {
        let ix = idx % xs.len();
        let iy = idx / xs.len();
        classify_node(row, &node_params(base, x, y, xs[ix], ys[iy]), cfg)
    };
    let cells: Vec<CellClass> = if parallel {
        (0..total).into_par_iter().map(node).collect()
    } else {
        (0..total).map(node).collect()
    };
    StabilityGrid {
        x: *x,
        y: *y,
        cells,
        base: *base,
        n: row.n,
    }
}

/// Locates the stability transitions between adjacent grid nodes, refines
/// each by bisection along the connecting grid line and classifies the
/// crossing as a real (branch point) or conjugate-pair (Hopf) transition.
pub fn boundary_type_map(
    grid: &StabilityGrid,
    row: &CellRow,
    cfg: &NumericsConfig,
) -> BoundaryTypeCurve {
    let xs = grid.x.values();
    let ys = grid.y.values();
    let mut segments: Vec<(f64, f64, f64, f64)> = Vec::new();
    for iy in 0..ys.len() {
        for ix in 0..xs.len() {
            let here = grid.cell(ix, iy);
            if here == CellClass::Invalid {
                continue;
            }
            if ix + 1 < xs.len() {
                let there = grid.cell(ix + 1, iy);
                if there != CellClass::Invalid && there != here {
                    segments.push((xs[ix], ys[iy], xs[ix + 1], ys[iy]));
                }
            }
            if iy + 1 < ys.len() {
                let there = grid.cell(ix, iy + 1);
                if there != CellClass::Invalid && there != here {
                    segments.push((xs[ix], ys[iy], xs[ix], ys[iy + 1]));
                }
            }
        }
    }

    segments
        .into_par_iter()
        .filter_map(|seg| refine_segment(grid, row, cfg, seg))
        .collect()
}

fn refine_segment(
    grid: &StabilityGrid,
    row: &CellRow,
    cfg: &NumericsConfig,
    (x0, y0, x1, y1): (f64, f64, f64, f64),
) -> Option<BoundarySample> {
    let eval = |t: f64| -> Option<(StabilityTag, Spectrum)> {
        let vx = x0 + t * (x1 - x0);
        let vy = y0 + t * (y1 - y0);
        classify_trivial(row, &node_params(&grid.base, &grid.x, &grid.y, vx, vy), cfg).ok()
    };
    let (tag0, _) = eval(0.0)?;
    let mut lo = 0.0;
    let mut hi = 1.0;
    for _ in 0..10 {
        // 2^-10 < 1e-3 relative width
        let mid = 0.5 * (lo + hi);
        let (tag, _) = eval(mid)?;
        if tag.is_stable() == tag0.is_stable() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Classify by the eigenvalue structure just on the unstable side of the
    // refined bracket.
    let unstable_t = if tag0.is_stable() { hi } else { lo };
    let (_, spec) = eval(unstable_t)?;
    let crossing = spec
        .eigenvalues
        .iter()
        .filter(|z| z.re > 0.0)
        .min_by(|a, b| a.re.partial_cmp(&b.re).unwrap())?;
    let kind = if crossing.im.abs() > 1e-3 {
        EventKind::Hopf
    } else {
        EventKind::BranchPoint
    };
    let t = 0.5 * (lo + hi);
    Some(BoundarySample {
        x: x0 + t * (x1 - x0),
        y: y0 + t * (y1 - y0),
        kind,
    })
}
