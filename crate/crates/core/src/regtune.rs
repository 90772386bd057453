//! Choosing the regularization weight with an L-curve.
//!
//! The sweep solves the fusion problem across a grid of weights ω,
//! warm-starting each solve from the previous optimum in descending-ω
//! order, and records the (j_data, j_reg) trade-off. The elbow is the
//! point of maximum three-point Menger curvature in log-log coordinates,
//! the standard discrete L-curve criterion.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::format_float;
use crate::error::{Error, Result};
use crate::fusion::{loss, optimize, FusionConfig, FusionContext};

/// Grid size used when only a decade range is given.
pub const DEFAULT_GRID_POINTS: usize = 13;

/// Values with smaller logs than this are clamped before the log transform.
const LOG_CLAMP: f64 = 1e-300;

/// A completed sweep: weights ascending, the loss split at each optimum,
/// per-point curvature, and the chosen elbow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LCurve {
    pub omegas: Vec<f64>,
    /// (j_data, j_reg) at the optimum for each ω.
    pub points: Vec<(f64, f64)>,
    /// Menger curvature in log-log coordinates; endpoints are 0.
    pub curvatures: Vec<f64>,
    /// Interior index of maximum curvature (ties to the smaller ω).
    pub elbow_index: usize,
    /// All interior curvatures were zero; the elbow fell back to the
    /// middle index.
    pub no_elbow: bool,
    /// Some loss value was zero and had to be clamped before the log.
    pub clamped: bool,
}

impl LCurve {
    pub fn omega_star(&self) -> f64 {
        self.omegas[self.elbow_index]
    }

    /// Plottable CSV: omega, j_data, j_reg, curvature, is_elbow.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("omega,j_data,j_reg,curvature,is_elbow\n");
        for i in 0..self.omegas.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                format_float(self.omegas[i]),
                format_float(self.points[i].0),
                format_float(self.points[i].1),
                format_float(self.curvatures[i]),
                usize::from(i == self.elbow_index)
            );
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Curvature analysis of a point list, separated from the sweep so tests
/// and callers can run it on synthetic curves.
#[derive(Debug, Clone, PartialEq)]
pub struct ElbowAnalysis {
    pub curvatures: Vec<f64>,
    pub elbow_index: usize,
    pub no_elbow: bool,
    pub clamped: bool,
}

/// `count` log-spaced values from `min` to `max` inclusive.
pub fn log_grid(min: f64, max: f64, count: usize) -> Result<Vec<f64>> {
    if !(min > 0.0) || !min.is_finite() || !max.is_finite() || max <= min {
        return Err(Error::Parameter(format!(
            "grid range must satisfy 0 < min < max, got [{min}, {max}]"
        )));
    }
    if count < 3 {
        return Err(Error::Parameter(format!(
            "grid needs at least 3 points, got {count}"
        )));
    }
    let (a, b) = (min.log10(), max.log10());
    let step = (b - a) / (count - 1) as f64;
    let mut grid: Vec<f64> = (0..count).map(|i| 10f64.powf(a + step * i as f64)).collect();
    // Pin the endpoints exactly.
    grid[0] = min;
    grid[count - 1] = max;
    Ok(grid)
}

fn log_clamped(v: f64) -> (f64, bool) {
    if v < LOG_CLAMP {
        (LOG_CLAMP.log10(), true)
    } else {
        (v.log10(), false)
    }
}

/// Menger curvature of three points: 4·area / (product of side lengths);
/// zero when any two points coincide.
fn menger(p1: (f64, f64), p2: (f64, f64), p3: (f64, f64)) -> f64 {
    let cross = (p2.0 - p1.0) * (p3.1 - p1.1) - (p3.0 - p1.0) * (p2.1 - p1.1);
    let d12 = ((p2.0 - p1.0).powi(2) + (p2.1 - p1.1).powi(2)).sqrt();
    let d23 = ((p3.0 - p2.0).powi(2) + (p3.1 - p2.1).powi(2)).sqrt();
    let d31 = ((p3.0 - p1.0).powi(2) + (p3.1 - p1.1).powi(2)).sqrt();
    let denom = d12 * d23 * d31;
    if denom == 0.0 {
        0.0
    } else {
        2.0 * cross.abs() / denom
    }
}

/// Maximum-curvature elbow over interior points of the (j_data, j_reg)
/// list, in log-log coordinates. Ties resolve to the lowest index; all-zero
/// curvature falls back to the middle index with the `no_elbow` flag.
pub fn elbow(points: &[(f64, f64)]) -> Result<ElbowAnalysis> {
    if points.len() < 3 {
        return Err(Error::Parameter(format!(
            "elbow detection needs at least 3 points, got {}",
            points.len()
        )));
    }
    if points
        .iter()
        .any(|&(a, b)| !a.is_finite() || !b.is_finite() || a < 0.0 || b < 0.0)
    {
        return Err(Error::Numeric("loss values must be finite and nonnegative".into()));
    }
    let mut clamped = false;
    let logs: Vec<(f64, f64)> = points
        .iter()
        .map(|&(a, b)| {
            let (la, ca) = log_clamped(a);
            let (lb, cb) = log_clamped(b);
            clamped |= ca || cb;
            (la, lb)
        })
        .collect();
    let n = points.len();
    let mut curvatures = vec![0.0; n];
    for i in 1..n - 1 {
        curvatures[i] = menger(logs[i - 1], logs[i], logs[i + 1]);
    }
    let mut best = 1;
    for i in 2..n - 1 {
        if curvatures[i] > curvatures[best] {
            best = i;
        }
    }
    let no_elbow = curvatures[best] == 0.0;
    let elbow_index = if no_elbow { n / 2 } else { best };
    Ok(ElbowAnalysis {
        curvatures,
        elbow_index,
        no_elbow,
        clamped,
    })
}

/// Sweep result: the curve plus the optimum coefficients per ω (aligned to
/// the ascending `omegas`), so the chosen model needs no re-solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub curve: LCurve,
    pub alphas: Vec<DMatrix<f64>>,
}

impl SweepOutcome {
    /// Coefficients at the elbow ω.
    pub fn alpha_star(&self) -> &DMatrix<f64> {
        &self.alphas[self.curve.elbow_index]
    }
}

/// Solve the fusion problem at every ω in the grid and locate the elbow.
/// `base.omega` is ignored; everything else in `base` applies to each
/// solve. Solves run in descending ω, each warm-started from the previous
/// optimum; results are reported ascending.
pub fn sweep(ctx: &FusionContext, base: &FusionConfig, grid: &[f64]) -> Result<SweepOutcome> {
    let mut omegas = grid.to_vec();
    if omegas.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Parameter("sweep grid values must be positive and finite".into()));
    }
    omegas.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    omegas.dedup();
    if omegas.len() < 3 {
        return Err(Error::Parameter(format!(
            "sweep grid needs at least 3 distinct values, got {}",
            omegas.len()
        )));
    }
    let mut alphas: Vec<DMatrix<f64>> = Vec::with_capacity(omegas.len());
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(omegas.len());
    let mut warm: Option<DMatrix<f64>> = None;
    for &omega in omegas.iter().rev() {
        let cfg = FusionConfig { omega, ..*base };
        let (alpha, best, _) = optimize(ctx, &cfg, warm.as_ref()).map_err(|err| match err {
            Error::OptimizationFailure { msg, trace } => Error::OptimizationFailure {
                msg: format!("sweep failed at omega={omega}: {msg}"),
                trace,
            },
            other => other,
        })?;
        points.push((best.j_data, best.j_reg));
        warm = Some(alpha.clone());
        alphas.push(alpha);
    }
    alphas.reverse();
    points.reverse();
    let analysis = elbow(&points)?;
    Ok(SweepOutcome {
        curve: LCurve {
            omegas,
            points,
            curvatures: analysis.curvatures,
            elbow_index: analysis.elbow_index,
            no_elbow: analysis.no_elbow,
            clamped: analysis.clamped,
        },
        alphas,
    })
}

/// Re-solve each grid point from a zero start. Slower than `sweep`; used
/// to confirm the warm-started path did not drift.
pub fn sweep_cold(
    ctx: &FusionContext,
    base: &FusionConfig,
    grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let mut omegas = grid.to_vec();
    omegas.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    omegas.dedup();
    let mut points = Vec::with_capacity(omegas.len());
    for &omega in &omegas {
        let cfg = FusionConfig { omega, ..*base };
        let (alpha, _, _) = optimize(ctx, &cfg, None)?;
        let b = loss(&alpha, ctx, omega, cfg.tau)?;
        points.push((b.j_data, b.j_reg));
    }
    Ok(points)
}
