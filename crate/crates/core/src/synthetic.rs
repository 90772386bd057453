//! Deterministic generators for the built-in test problems.
//!
//! Three desk-scale stand-ins for expensive solvers: a disk surrounded by
//! a ring whose high-fidelity twin translates the disk away and stretches
//! the ring, a set of well-separated clusters moved by rigid per-cluster
//! translations, and a classic one-dimensional low/high function pair.
//!
//! Every generator draws from named, seeded streams, so a fixed seed gives
//! bit-identical datasets. Row i of the high dataset is always the
//! counterpart of row i of the low dataset.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Fidelity};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Cluster offsets snap to this grid so that integer-valued centers and
/// translations stay exactly representable through sums and differences.
const DYADIC_GRID: f64 = (1u64 << 30) as f64;

/// Disk-plus-ring cloud: uniform samples on a disk and an annulus, with a
/// per-structure high-fidelity transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingDiskSpec {
    pub n_points: usize,
    pub disk_center: [f64; 2],
    pub disk_radius: f64,
    pub ring_inner: f64,
    pub ring_outer: f64,
    /// Share of points sampled in the disk, exclusive (0, 1).
    pub disk_fraction: f64,
    /// High-fidelity disk transform: rigid translation.
    pub disk_translation: [f64; 2],
    /// High-fidelity ring transform: 2x2 matrix applied about the origin.
    pub ring_affine: [[f64; 2]; 2],
    pub seed: u64,
}

impl RingDiskSpec {
    /// Declared defaults: 2,000 points, disk of radius 0.5 at the origin
    /// inside an annulus [1.5, 2.0], disk share matching its area share,
    /// disk translated to (3.5, 0), ring stretched by diag(1.4, 0.8).
    pub fn standard(seed: u64) -> Self {
        Self {
            n_points: 2000,
            disk_center: [0.0, 0.0],
            disk_radius: 0.5,
            ring_inner: 1.5,
            ring_outer: 2.0,
            disk_fraction: 0.125,
            disk_translation: [3.5, 0.0],
            ring_affine: [[1.4, 0.0], [0.0, 0.8]],
            seed,
        }
    }

    fn validate(&self) -> Result<(usize, usize)> {
        let finite = self.disk_center.iter().all(|v| v.is_finite())
            && self.disk_translation.iter().all(|v| v.is_finite())
            && self.ring_affine.iter().flatten().all(|v| v.is_finite())
            && self.disk_radius.is_finite()
            && self.ring_inner.is_finite()
            && self.ring_outer.is_finite()
            && self.disk_fraction.is_finite();
        if !finite {
            return Err(Error::Spec("ring-disk geometry contains non-finite values".into()));
        }
        if self.n_points < 2 {
            return Err(Error::Spec("ring-disk needs at least 2 points".into()));
        }
        if !(self.disk_radius > 0.0) {
            return Err(Error::Spec(format!(
                "disk radius must be positive, got {}",
                self.disk_radius
            )));
        }
        if !(0.0 < self.ring_inner && self.ring_inner < self.ring_outer) {
            return Err(Error::Spec(format!(
                "annulus radii must satisfy 0 < inner < outer, got [{}, {}]",
                self.ring_inner, self.ring_outer
            )));
        }
        let center_norm = (self.disk_center[0].powi(2) + self.disk_center[1].powi(2)).sqrt();
        if center_norm + self.disk_radius >= self.ring_inner {
            return Err(Error::Spec(format!(
                "disk (center offset {center_norm}, radius {}) reaches the annulus inner \
                 radius {}; the structures must stay disjoint",
                self.disk_radius, self.ring_inner
            )));
        }
        if !(self.disk_fraction > 0.0 && self.disk_fraction < 1.0) {
            return Err(Error::Spec(format!(
                "disk fraction must lie in (0, 1), got {}",
                self.disk_fraction
            )));
        }
        let n_disk = (self.n_points as f64 * self.disk_fraction).round() as usize;
        if n_disk == 0 || n_disk >= self.n_points {
            return Err(Error::Spec(format!(
                "disk fraction {} leaves {n_disk} of {} points in the disk",
                self.disk_fraction, self.n_points
            )));
        }
        Ok((n_disk, self.n_points - n_disk))
    }
}

/// Which structure a ring-disk point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RingDiskLabel {
    Disk,
    Ring,
}

impl std::fmt::Display for RingDiskLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RingDiskLabel::Disk => write!(f, "disk"),
            RingDiskLabel::Ring => write!(f, "ring"),
        }
    }
}

/// Generate the ring-disk pair. Disk points come first, ring points after;
/// labels follow the same order.
pub fn ring_disk(spec: &RingDiskSpec) -> Result<(Dataset, Dataset, Vec<RingDiskLabel>)> {
    let (n_disk, n_ring) = spec.validate()?;
    let mut low = DMatrix::zeros(spec.n_points, 2);
    let mut high = DMatrix::zeros(spec.n_points, 2);
    let mut labels = Vec::with_capacity(spec.n_points);

    let mut disk_rng = stream_rng(spec.seed, "ring-disk/disk");
    for i in 0..n_disk {
        let u: f64 = disk_rng.gen();
        let v: f64 = disk_rng.gen();
        let r = spec.disk_radius * u.sqrt();
        let theta = 2.0 * std::f64::consts::PI * v;
        let x = spec.disk_center[0] + r * theta.cos();
        let y = spec.disk_center[1] + r * theta.sin();
        low[(i, 0)] = x;
        low[(i, 1)] = y;
        high[(i, 0)] = x + spec.disk_translation[0];
        high[(i, 1)] = y + spec.disk_translation[1];
        labels.push(RingDiskLabel::Disk);
    }

    let mut ring_rng = stream_rng(spec.seed, "ring-disk/ring");
    let (r_in2, r_out2) = (spec.ring_inner.powi(2), spec.ring_outer.powi(2));
    for i in n_disk..n_disk + n_ring {
        let u: f64 = ring_rng.gen();
        let v: f64 = ring_rng.gen();
        let r = (r_in2 + u * (r_out2 - r_in2)).sqrt();
        let theta = 2.0 * std::f64::consts::PI * v;
        let x = r * theta.cos();
        let y = r * theta.sin();
        low[(i, 0)] = x;
        low[(i, 1)] = y;
        let a = &spec.ring_affine;
        high[(i, 0)] = a[0][0] * x + a[0][1] * y;
        high[(i, 1)] = a[1][0] * x + a[1][1] * y;
        labels.push(RingDiskLabel::Ring);
    }

    let names = vec!["x".to_string(), "y".to_string()];
    let low = Dataset::new(names.clone(), low, Fidelity::Low)?;
    let high = Dataset::new(names, high, Fidelity::High)?;
    Ok((low, high, labels))
}

/// Well-separated clusters with rigid per-cluster translations to the
/// high-fidelity twin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalSpec {
    pub n_clusters: usize,
    pub points_per_cluster: usize,
    /// Cluster centers, one D-dimensional row each.
    pub centers: Vec<Vec<f64>>,
    /// Within-cluster ball radius.
    pub radius: f64,
    /// Per-cluster displacement to the high-fidelity twin.
    pub translations: Vec<Vec<f64>>,
    pub seed: u64,
}

impl CanonicalSpec {
    /// The three-cluster configuration used throughout the built-in tests:
    /// unit balls of 100 points at (0,0), (10,0), (0,10) translated by
    /// (1,0), (0,1), (-1,0). Integer geometry keeps the translations exact
    /// in floating point.
    pub fn standard_three(seed: u64) -> Self {
        Self {
            n_clusters: 3,
            points_per_cluster: 100,
            centers: vec![vec![0.0, 0.0], vec![10.0, 0.0], vec![0.0, 10.0]],
            radius: 1.0,
            translations: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]],
            seed,
        }
    }

    fn validate(&self) -> Result<usize> {
        if self.n_clusters == 0 || self.points_per_cluster == 0 {
            return Err(Error::Spec("need at least one cluster and one point per cluster".into()));
        }
        if self.centers.len() != self.n_clusters || self.translations.len() != self.n_clusters {
            return Err(Error::Spec(format!(
                "{} centers and {} translations for {} clusters",
                self.centers.len(),
                self.translations.len(),
                self.n_clusters
            )));
        }
        let dim = self.centers[0].len();
        if dim == 0 {
            return Err(Error::Spec("cluster centers must have at least one coordinate".into()));
        }
        for c in self.centers.iter().chain(self.translations.iter()) {
            if c.len() != dim {
                return Err(Error::Spec("centers and translations must share one dimension".into()));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::Spec("cluster geometry contains non-finite values".into()));
            }
        }
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(Error::Spec(format!(
                "within-cluster radius must be positive, got {}",
                self.radius
            )));
        }
        for i in 0..self.n_clusters {
            for j in i + 1..self.n_clusters {
                let d2: f64 = (0..dim)
                    .map(|k| (self.centers[i][k] - self.centers[j][k]).powi(2))
                    .sum();
                if d2.sqrt() <= 4.0 * self.radius {
                    return Err(Error::Spec(format!(
                        "clusters {i} and {j} are {} apart; separation must exceed 4x the \
                         radius {}",
                        d2.sqrt(),
                        self.radius
                    )));
                }
            }
        }
        Ok(dim)
    }
}

/// A uniform draw from the unit ball, snapped to the dyadic grid.
fn ball_offset(rng: &mut impl Rng, dim: usize, radius: f64) -> Vec<f64> {
    loop {
        // Gaussian direction via Box-Muller keeps acceptance independent
        // of the dimension.
        let dir: Vec<f64> = (0..dim)
            .map(|_| {
                let u: f64 = rng.gen();
                let v: f64 = rng.gen();
                (-2.0 * (1.0 - u).ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
            })
            .collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-12 {
            continue;
        }
        let r = radius * rng.gen::<f64>().powf(1.0 / dim as f64);
        return dir
            .iter()
            .map(|x| (x / norm * r * DYADIC_GRID).round() / DYADIC_GRID)
            .collect();
    }
}

/// Generate the canonical cluster problem. Points are grouped by cluster
/// (cluster 0 first); labels hold the cluster index. High-fidelity rows are
/// low rows plus the cluster translation; offsets are dyadic, so with
/// integer centers and translations the recovered displacement high − low
/// equals the translation bit for bit.
pub fn canonical_clusters(spec: &CanonicalSpec) -> Result<(Dataset, Dataset, Vec<usize>)> {
    let dim = spec.validate()?;
    let n = spec.n_clusters * spec.points_per_cluster;
    let mut low = DMatrix::zeros(n, dim);
    let mut high = DMatrix::zeros(n, dim);
    let mut labels = Vec::with_capacity(n);
    for cluster in 0..spec.n_clusters {
        let mut rng = stream_rng(spec.seed, &format!("canonical/cluster-{cluster}"));
        for p in 0..spec.points_per_cluster {
            let row = cluster * spec.points_per_cluster + p;
            let offset = ball_offset(&mut rng, dim, spec.radius);
            for k in 0..dim {
                let x = spec.centers[cluster][k] + offset[k];
                low[(row, k)] = x;
                high[(row, k)] = x + spec.translations[cluster][k];
            }
            labels.push(cluster);
        }
    }
    let names: Vec<String> = (0..dim).map(|k| format!("x{k}")).collect();
    let low = Dataset::new(names.clone(), low, Fidelity::Low)?;
    let high = Dataset::new(names, high, Fidelity::High)?;
    Ok((low, high, labels))
}

/// A registered low/high function pair sampled at seeded uniform
/// parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticPairSpec {
    /// Registered pair name.
    pub pair: String,
    /// Parameter dimension; must match the registered pair.
    pub param_dim: usize,
    pub n_points: usize,
    pub seed: u64,
}

impl AnalyticPairSpec {
    /// The shipped one-dimensional benchmark pair.
    pub fn forrester(n_points: usize, seed: u64) -> Self {
        Self {
            pair: "forrester".into(),
            param_dim: 1,
            n_points,
            seed,
        }
    }
}

/// Names of the shipped function pairs.
pub fn registered_pairs() -> &'static [&'static str] {
    &["forrester"]
}

fn forrester_high(x: f64) -> f64 {
    let a = 6.0 * x - 2.0;
    a * a * (12.0 * x - 4.0).sin()
}

fn forrester_low(x: f64) -> f64 {
    0.5 * forrester_high(x) + 10.0 * (x - 0.5) - 5.0
}

/// Sample a registered function pair. Rows are [x, f(x)]; the same
/// parameters feed both fidelities.
pub fn analytic_pair(spec: &AnalyticPairSpec) -> Result<(Dataset, Dataset)> {
    let (low_f, high_f): (fn(f64) -> f64, fn(f64) -> f64) = match spec.pair.as_str() {
        "forrester" => (forrester_low, forrester_high),
        other => {
            return Err(Error::Registry(format!(
                "no function pair named {other:?}; shipped pairs: {:?}",
                registered_pairs()
            )))
        }
    };
    if spec.param_dim != 1 {
        return Err(Error::Spec(format!(
            "pair {:?} takes a 1-dimensional parameter, spec says {}",
            spec.pair, spec.param_dim
        )));
    }
    if spec.n_points == 0 {
        return Err(Error::EmptyInput("sample count must be at least 1".into()));
    }
    let mut rng = stream_rng(spec.seed, "analytic/x");
    let xs: Vec<f64> = (0..spec.n_points).map(|_| rng.gen::<f64>()).collect();
    let names = vec!["x".to_string(), "f".to_string()];
    let low = DMatrix::from_fn(spec.n_points, 2, |i, j| {
        if j == 0 {
            xs[i]
        } else {
            low_f(xs[i])
        }
    });
    let high = DMatrix::from_fn(spec.n_points, 2, |i, j| {
        if j == 0 {
            xs[i]
        } else {
            high_f(xs[i])
        }
    });
    Ok((
        Dataset::new(names.clone(), low, Fidelity::Low)?,
        Dataset::new(names, high, Fidelity::High)?,
    ))
}

/// Write a one-column labels CSV aligned with a generated dataset.
pub fn save_labels<T: std::fmt::Display>(path: &Path, labels: &[T]) -> Result<()> {
    let mut out = String::from("label\n");
    for l in labels {
        let _ = writeln!(out, "{l}");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
