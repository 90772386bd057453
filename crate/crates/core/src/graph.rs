//! Weighted graph over the low-fidelity cloud.
//!
//! The graph is complete: every pair of points is connected with weight
//! `exp(-r^2 / sigma^2)` (fixed bandwidth) or `exp(-r^2 / (sigma_i
//! sigma_j))` (per-point self-tuned bandwidths), distances taken in scaled
//! coordinates. The diagonal keeps the kernel value at distance zero,
//! `W_ii = 1`; it cancels in `D - W` and only shifts degrees, but matches
//! the kernel definition literally, so degree values differ from
//! zero-diagonal conventions.
//!
//! From the adjacency the two-exponent Laplacian family is
//! `L = D^-p (D - W) D^-q` with `D` the diagonal degree matrix. `p = q = 0`
//! is the unnormalized Laplacian; `p = q = 0.5` the symmetric normalized
//! one.
//!
//! Dense assembly is quadratic in points; above a few thousand points the
//! sparse builder drops weights below a threshold and stores CSR. That is
//! an explicit approximation of the complete graph and is flagged as such
//! wherever it is offered.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Default self-tuned neighbor rank; the value the self-tuning literature
/// recommends.
pub const DEFAULT_NEIGHBOR_RANK: usize = 7;

/// Largest point count the CLI handles with dense matrices.
pub const DENSE_POINT_CAP: usize = 10_000;

/// Default drop threshold for sparse assembly.
pub const SPARSE_DROP_THRESHOLD: f64 = 1e-12;

/// Kernel bandwidth choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum KernelSpec {
    /// One global bandwidth.
    Fixed { sigma: f64 },
    /// Per-point bandwidth from the distance to the k-th nearest distinct
    /// neighbor.
    SelfTuned { neighbor_rank: usize },
}

impl KernelSpec {
    pub fn validate(&self, n_points: usize) -> Result<()> {
        match *self {
            KernelSpec::Fixed { sigma } => {
                if !sigma.is_finite() || sigma <= 0.0 {
                    return Err(Error::Parameter(format!(
                        "kernel bandwidth must be positive and finite, got {sigma}"
                    )));
                }
            }
            KernelSpec::SelfTuned { neighbor_rank } => {
                if neighbor_rank == 0 {
                    return Err(Error::Parameter("neighbor rank must be at least 1".into()));
                }
                if neighbor_rank >= n_points {
                    return Err(Error::Parameter(format!(
                        "neighbor rank {neighbor_rank} needs more than {n_points} points"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Gaussian kernel `exp(-r^2 / sigma^2)`; 1 at distance zero, strictly
/// decreasing in `r`.
pub fn kernel_value(r: f64, sigma: f64) -> Result<f64> {
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::Parameter(format!(
            "kernel bandwidth must be positive and finite, got {sigma}"
        )));
    }
    if !r.is_finite() || r < 0.0 {
        return Err(Error::Parameter(format!("kernel distance must be nonnegative, got {r}")));
    }
    Ok((-(r * r) / (sigma * sigma)).exp())
}

fn sq_dist(points: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    let mut s = 0.0;
    for c in 0..points.ncols() {
        let d = points[(i, c)] - points[(j, c)];
        s += d * d;
    }
    s
}

/// Per-point bandwidths: sigma_i is the distance from point i to its k-th
/// nearest distinct neighbor (duplicates at distance zero do not count).
///
/// Points with fewer than k distinct neighbors fall back to the smallest
/// positive pairwise distance in the dataset; if every point coincides
/// there is no positive distance to fall back on and the data is
/// degenerate.
pub fn self_tuned_sigmas(points: &Dataset, neighbor_rank: usize) -> Result<Vec<f64>> {
    let n = points.n_points();
    if neighbor_rank == 0 {
        return Err(Error::Parameter("neighbor rank must be at least 1".into()));
    }
    if n <= neighbor_rank {
        return Err(Error::Parameter(format!(
            "self-tuning with neighbor rank {neighbor_rank} needs more than {neighbor_rank} points, got {n}"
        )));
    }
    let coords = points.points();
    let mut sigmas: Vec<Option<f64>> = Vec::with_capacity(n);
    let mut smallest_positive = f64::INFINITY;
    let mut dists = Vec::with_capacity(n - 1);
    for i in 0..n {
        dists.clear();
        for j in 0..n {
            if j != i {
                let d = sq_dist(coords, i, j).sqrt();
                if d > 0.0 {
                    dists.push(d);
                    if d < smallest_positive {
                        smallest_positive = d;
                    }
                }
            }
        }
        dists.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        sigmas.push(dists.get(neighbor_rank - 1).copied());
    }
    if smallest_positive.is_infinite() {
        return Err(Error::Degenerate(
            "all points are identical; no positive pairwise distance exists".into(),
        ));
    }
    Ok(sigmas
        .into_iter()
        .map(|s| s.unwrap_or(smallest_positive))
        .collect())
}

/// Complete-graph Gaussian adjacency in scaled coordinates. Symmetric,
/// entries in `(0, 1]`, unit diagonal.
pub fn build_adjacency(points: &Dataset, kernel: &KernelSpec) -> Result<DMatrix<f64>> {
    let n = points.n_points();
    if n < 2 {
        return Err(Error::EmptyInput(format!("graph needs at least 2 points, got {n}")));
    }
    if points.scaling().is_none() {
        return Err(Error::State(
            "dataset must be scaled before graph construction; kernel bandwidths assume scaled coordinates".into(),
        ));
    }
    kernel.validate(n)?;
    let coords = points.points();
    let mut w = DMatrix::zeros(n, n);
    match *kernel {
        KernelSpec::Fixed { sigma } => {
            let s2 = sigma * sigma;
            for i in 0..n {
                w[(i, i)] = 1.0;
                for j in (i + 1)..n {
                    let v = (-sq_dist(coords, i, j) / s2).exp();
                    w[(i, j)] = v;
                    w[(j, i)] = v;
                }
            }
        }
        KernelSpec::SelfTuned { neighbor_rank } => {
            let sigmas = self_tuned_sigmas(points, neighbor_rank)?;
            for i in 0..n {
                w[(i, i)] = 1.0;
                for j in (i + 1)..n {
                    let v = (-sq_dist(coords, i, j) / (sigmas[i] * sigmas[j])).exp();
                    w[(i, j)] = v;
                    w[(j, i)] = v;
                }
            }
        }
    }
    Ok(w)
}

/// Adjacency, degrees, and one member of the Laplacian family.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianBundle {
    pub weights: DMatrix<f64>,
    pub degrees: DVector<f64>,
    pub laplacian: DMatrix<f64>,
    pub p_exp: f64,
    pub q_exp: f64,
    /// Kernel that produced `weights`, when built from points.
    pub kernel: Option<KernelSpec>,
}

impl LaplacianBundle {
    pub fn n_points(&self) -> usize {
        self.degrees.len()
    }

    /// The Laplacian is symmetric exactly when the two exponents agree.
    pub fn is_symmetric(&self) -> bool {
        self.p_exp == self.q_exp
    }

    /// Full dense pipeline: adjacency from points, then the Laplacian.
    pub fn from_points(
        points: &Dataset,
        kernel: &KernelSpec,
        p_exp: f64,
        q_exp: f64,
    ) -> Result<Self> {
        let w = build_adjacency(points, kernel)?;
        let mut bundle = build_laplacian(&w, p_exp, q_exp)?;
        bundle.kernel = Some(*kernel);
        Ok(bundle)
    }
}

fn validate_adjacency(w: &DMatrix<f64>) -> Result<()> {
    if w.nrows() != w.ncols() {
        return Err(Error::Dimension(format!(
            "adjacency must be square, got {}x{}",
            w.nrows(),
            w.ncols()
        )));
    }
    if w.nrows() == 0 {
        return Err(Error::EmptyInput("adjacency is empty".into()));
    }
    for i in 0..w.nrows() {
        for j in 0..w.ncols() {
            let v = w[(i, j)];
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Parameter(format!(
                    "adjacency entry ({i},{j}) = {v} is not a nonnegative finite weight"
                )));
            }
            if (v - w[(j, i)]).abs() > 1e-12 {
                return Err(Error::Parameter(format!(
                    "adjacency is not symmetric at ({i},{j}): {v} vs {}",
                    w[(j, i)]
                )));
            }
        }
    }
    Ok(())
}

/// Degrees and `L = D^-p (D - W) D^-q` from a validated adjacency.
pub fn build_laplacian(w: &DMatrix<f64>, p_exp: f64, q_exp: f64) -> Result<LaplacianBundle> {
    validate_adjacency(w)?;
    if !p_exp.is_finite() || !q_exp.is_finite() {
        return Err(Error::Parameter(format!(
            "normalization exponents must be finite, got p={p_exp}, q={q_exp}"
        )));
    }
    let n = w.nrows();
    let degrees = DVector::from_fn(n, |i, _| w.row(i).sum());
    if let Some(i) = (0..n).find(|&i| degrees[i] <= 0.0) {
        return Err(Error::Degenerate(format!("node {i} has zero degree")));
    }
    let dp: Vec<f64> = degrees.iter().map(|&d| d.powf(-p_exp)).collect();
    let dq: Vec<f64> = degrees.iter().map(|&d| d.powf(-q_exp)).collect();
    let laplacian = DMatrix::from_fn(n, n, |i, j| {
        let dw = if i == j { degrees[i] - w[(i, j)] } else { -w[(i, j)] };
        dp[i] * dw * dq[j]
    });
    Ok(LaplacianBundle {
        weights: w.clone(),
        degrees,
        laplacian,
        p_exp,
        q_exp,
        kernel: None,
    })
}

/// Complete-graph Laplacian with small weights dropped, in CSR storage.
///
/// Degrees are sums of the kept weights, so results approximate the dense
/// complete graph to roughly `threshold * n` per degree. This is the
/// explicit large-N alternative to [`LaplacianBundle`].
#[derive(Debug, Clone)]
pub struct SparseLaplacian {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    weights: Vec<f64>,
    pub degrees: DVector<f64>,
    pub p_exp: f64,
    pub q_exp: f64,
    pub threshold: f64,
    pub kernel: KernelSpec,
}

/// Build the thresholded sparse graph; weights below `threshold` are
/// dropped entirely (the unit diagonal always survives).
pub fn build_sparse(
    points: &Dataset,
    kernel: &KernelSpec,
    p_exp: f64,
    q_exp: f64,
    threshold: f64,
) -> Result<SparseLaplacian> {
    let n = points.n_points();
    if n < 2 {
        return Err(Error::EmptyInput(format!("graph needs at least 2 points, got {n}")));
    }
    if points.scaling().is_none() {
        return Err(Error::State(
            "dataset must be scaled before graph construction; kernel bandwidths assume scaled coordinates".into(),
        ));
    }
    kernel.validate(n)?;
    if !threshold.is_finite() || threshold < 0.0 || threshold >= 1.0 {
        return Err(Error::Parameter(format!(
            "sparsification threshold must lie in [0, 1), got {threshold}"
        )));
    }
    let sigmas = match *kernel {
        KernelSpec::Fixed { .. } => None,
        KernelSpec::SelfTuned { neighbor_rank } => Some(self_tuned_sigmas(points, neighbor_rank)?),
    };
    let coords = points.points();
    let weight = |i: usize, j: usize| -> f64 {
        let d2 = sq_dist(coords, i, j);
        match (*kernel, &sigmas) {
            (KernelSpec::Fixed { sigma }, _) => (-d2 / (sigma * sigma)).exp(),
            (KernelSpec::SelfTuned { .. }, Some(s)) => (-d2 / (s[i] * s[j])).exp(),
            _ => unreachable!(),
        }
    };
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    let mut weights = Vec::new();
    let mut degrees = DVector::zeros(n);
    row_ptr.push(0);
    for i in 0..n {
        let mut deg = 0.0;
        for j in 0..n {
            let v = if i == j { 1.0 } else { weight(i, j) };
            if v >= threshold && v > 0.0 {
                col_idx.push(j);
                weights.push(v);
                deg += v;
            }
        }
        degrees[i] = deg;
        row_ptr.push(col_idx.len());
    }
    Ok(SparseLaplacian {
        n,
        row_ptr,
        col_idx,
        weights,
        degrees,
        p_exp,
        q_exp,
        threshold,
        kernel: *kernel,
    })
}

impl SparseLaplacian {
    pub fn n_points(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.weights.len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.p_exp == self.q_exp
    }

    /// `L x` without forming `L`: scale by `D^-q`, apply `D - W`, scale by
    /// `D^-p`.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.n, "operand length must match node count");
        let t: Vec<f64> = (0..self.n)
            .map(|i| self.degrees[i].powf(-self.q_exp) * x[i])
            .collect();
        let mut y = DVector::zeros(self.n);
        for i in 0..self.n {
            let mut acc = self.degrees[i] * t[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc -= self.weights[k] * t[self.col_idx[k]];
            }
            y[i] = self.degrees[i].powf(-self.p_exp) * acc;
        }
        y
    }

    /// Dense reconstruction, for tests and small problems only.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                w[(i, self.col_idx[k])] = self.weights[k];
            }
        }
        DMatrix::from_fn(self.n, self.n, |i, j| {
            let dw = if i == j { self.degrees[i] - w[(i, j)] } else { -w[(i, j)] };
            self.degrees[i].powf(-self.p_exp) * dw * self.degrees[j].powf(-self.q_exp)
        })
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixHeader {
    rows: usize,
    cols: usize,
    kind: String,
}

/// Dump a dense matrix: one JSON header line `{rows, cols, kind}`, then
/// row-major little-endian 64-bit floats.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>, kind: &str) -> Result<()> {
    let header = serde_json::to_string(&MatrixHeader {
        rows: m.nrows(),
        cols: m.ncols(),
        kind: kind.to_string(),
    })
    .map_err(|e| Error::Numeric(format!("matrix header serialization failed: {e}")))?;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::with_capacity(header.len() + 1 + 8 * m.len());
    buf.extend_from_slice(header.as_bytes());
    buf.push(b'\n');
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            buf.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Read a matrix written by [`write_matrix`]; returns the matrix and its
/// `kind` tag.
pub fn read_matrix(path: &Path) -> Result<(DMatrix<f64>, String)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let newline = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        row: 1,
        msg: "missing header line".into(),
    })?;
    let header: MatrixHeader =
        serde_json::from_slice(&bytes[..newline]).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: 1,
            msg: format!("bad header: {e}"),
        })?;
    let body = &bytes[newline + 1..];
    let expected = header
        .rows
        .checked_mul(header.cols)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            row: 1,
            msg: "matrix dimensions overflow".into(),
        })?;
    if body.len() != expected {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row: 2,
            msg: format!("expected {expected} payload bytes, found {}", body.len()),
        });
    }
    let m = DMatrix::from_fn(header.rows, header.cols, |i, j| {
        let off = (i * header.cols + j) * 8;
        f64::from_le_bytes(body[off..off + 8].try_into().expect("length checked"))
    });
    Ok((m, header.kind))
}
