//! Slow, literal reference implementations used only by tests.
//!
//! Everything here is a direct transliteration of the defining formulas:
//! explicit loops, no algebraic shortcuts, no code shared with the modules
//! under test (only the dataset types cross the boundary). Oracles are
//! meant for small instances; nothing is optimized.

use bifid_core::dataset::Dataset;
use bifid_core::error::{Error, Result};
use nalgebra::DMatrix;

/// Full eigendecomposition of a symmetric matrix by cyclic Jacobi
/// rotations. Returns eigenvalues ascending with matching eigenvector
/// columns. Independent of the eigensolvers under test.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "jacobi_eigen needs a square matrix");
    let mut m = a.clone();
    let mut v: DMatrix<f64> = DMatrix::identity(n, n);
    let scale = a.iter().fold(0.0f64, |acc, x| acc.max(x.abs())).max(1.0);
    for _sweep in 0..200 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                m[(p, p)] = app - t * apq;
                m[(q, q)] = aqq + t * apq;
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    if k != p && k != q {
                        let akp = m[(k, p)];
                        let akq = m[(k, q)];
                        m[(k, p)] = c * akp - s * akq;
                        m[(p, k)] = m[(k, p)];
                        m[(k, q)] = s * akp + c * akq;
                        m[(q, k)] = m[(k, q)];
                    }
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[(i, i)]
            .partial_cmp(&m[(j, j)])
            .expect("finite eigenvalues")
            .then(i.cmp(&j))
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (eigenvalues, vectors)
}

/// Gaussian adjacency with per-point bandwidths and unit diagonal:
/// W_ij = exp(−‖x_i − x_j‖² / (σ_i σ_j)).
pub fn naive_adjacency(points: &DMatrix<f64>, sigmas: &[f64]) -> DMatrix<f64> {
    let n = points.nrows();
    assert_eq!(sigmas.len(), n);
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut d2 = 0.0;
            for k in 0..points.ncols() {
                let d = points[(i, k)] - points[(j, k)];
                d2 += d * d;
            }
            w[(i, j)] = (-d2 / (sigmas[i] * sigmas[j])).exp();
        }
    }
    w
}

/// Fixed-bandwidth Gaussian adjacency.
pub fn naive_adjacency_fixed(points: &DMatrix<f64>, sigma: f64) -> DMatrix<f64> {
    let sigmas = vec![sigma; points.nrows()];
    naive_adjacency(points, &sigmas)
}

/// Distance to the k-th nearest distinct neighbor per point (1-based k).
/// Points with fewer than k positive distances fall back to the smallest
/// positive pairwise distance in the whole set.
pub fn kth_neighbor_distances(points: &DMatrix<f64>, k: usize) -> Vec<f64> {
    let n = points.nrows();
    assert!(k >= 1 && k <= n - 1);
    let dist = |i: usize, j: usize| -> f64 {
        let mut d2 = 0.0;
        for c in 0..points.ncols() {
            let d = points[(i, c)] - points[(j, c)];
            d2 += d * d;
        }
        d2.sqrt()
    };
    let mut global_min = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            let d = dist(i, j);
            if d > 0.0 && d < global_min {
                global_min = d;
            }
        }
    }
    (0..n)
        .map(|i| {
            let mut positives: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| dist(i, j))
                .filter(|&d| d > 0.0)
                .collect();
            positives.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            if positives.len() >= k {
                positives[k - 1]
            } else {
                global_min
            }
        })
        .collect()
}

/// Degrees as explicit row sums.
pub fn naive_degree(w: &DMatrix<f64>) -> Vec<f64> {
    (0..w.nrows()).map(|i| (0..w.ncols()).map(|j| w[(i, j)]).sum()).collect()
}

/// Laplacian by the defining triple product: L = D^{-p} (D − W) D^{-q},
/// evaluated entry by entry.
pub fn naive_laplacian(w: &DMatrix<f64>, p: f64, q: f64) -> DMatrix<f64> {
    let n = w.nrows();
    let d = naive_degree(w);
    DMatrix::from_fn(n, n, |i, j| {
        let core = if i == j { d[i] - w[(i, j)] } else { -w[(i, j)] };
        d[i].powf(-p) * core * d[j].powf(-q)
    })
}

/// Auxiliary functions by explicit summation: v_i^(j) = Σ_m α_jm φ_i^(m).
pub fn naive_auxiliary(alpha: &DMatrix<f64>, phi: &DMatrix<f64>) -> DMatrix<f64> {
    let n_bar = phi.nrows();
    let n = alpha.nrows();
    let k = alpha.ncols();
    assert_eq!(phi.ncols(), k);
    let mut v = DMatrix::zeros(n_bar, n);
    for i in 0..n_bar {
        for j in 0..n {
            let mut s = 0.0;
            for m in 0..k {
                s += alpha[(j, m)] * phi[(i, m)];
            }
            v[(i, j)] = s;
        }
    }
    v
}

/// Softmax by the defining per-entry ratio, written as
/// ψ_i^(j) = 1 / Σ_k exp(v_i^(k) − v_i^(j)).
pub fn naive_influence(v: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = v.shape();
    DMatrix::from_fn(rows, cols, |i, j| {
        let mut denom = 0.0;
        for k in 0..cols {
            denom += (v[(i, k)] - v[(i, j)]).exp();
        }
        1.0 / denom
    })
}

/// Bi-fidelity transform by per-point summation:
/// w^i = ū^i + Σ_j (u^j − ū^j) ψ_i^(j).
pub fn naive_transform(
    low: &DMatrix<f64>,
    displacements: &DMatrix<f64>,
    psi: &DMatrix<f64>,
) -> DMatrix<f64> {
    let (n_bar, dim) = low.shape();
    let n = displacements.nrows();
    assert_eq!(psi.nrows(), n_bar);
    assert_eq!(psi.ncols(), n);
    let mut w = low.clone();
    for i in 0..n_bar {
        for j in 0..n {
            for c in 0..dim {
                w[(i, c)] += displacements[(j, c)] * psi[(i, j)];
            }
        }
    }
    w
}

/// Data misfit from first principles: influence functions at the selected
/// rows, then (1/N) Σ_i ‖w^i − u^i‖².
pub fn naive_loss_data(
    alpha: &DMatrix<f64>,
    phi_sel: &DMatrix<f64>,
    displacements: &DMatrix<f64>,
) -> f64 {
    let n = alpha.nrows();
    let dim = displacements.ncols();
    let v = naive_auxiliary(alpha, phi_sel);
    let psi = naive_influence(&v);
    let mut total = 0.0;
    for i in 0..n {
        for c in 0..dim {
            let mut moved = 0.0;
            for j in 0..n {
                moved += displacements[(j, c)] * psi[(i, j)];
            }
            let r = moved - displacements[(i, c)];
            total += r * r;
        }
    }
    total / n as f64
}

/// Regularizer in matrix form: (1/(τ² K N)) Σ_j v^(j)·(L + τI)² v^(j),
/// with v^(j) evaluated over all points.
pub fn naive_reg_matrix_form(
    alpha: &DMatrix<f64>,
    phi_full: &DMatrix<f64>,
    laplacian: &DMatrix<f64>,
    tau: f64,
) -> f64 {
    let n_bar = phi_full.nrows();
    let n = alpha.nrows();
    let k = alpha.ncols();
    let v = naive_auxiliary(alpha, phi_full);
    let mut shifted = laplacian.clone();
    for i in 0..n_bar {
        shifted[(i, i)] += tau;
    }
    let squared = &shifted * &shifted;
    let mut total = 0.0;
    for j in 0..n {
        let vj = v.column(j);
        let mut quad = 0.0;
        for a in 0..n_bar {
            for b in 0..n_bar {
                quad += vj[a] * squared[(a, b)] * vj[b];
            }
        }
        total += quad;
    }
    total / (tau * tau * k as f64 * n as f64)
}

/// Regularizer in diagonalized form: (1/(K N)) Σ_j Σ_m α_jm² (1 + λ_m/τ)².
pub fn naive_reg_diag_form(alpha: &DMatrix<f64>, eigenvalues: &[f64], tau: f64) -> f64 {
    let n = alpha.nrows();
    let k = alpha.ncols();
    assert_eq!(eigenvalues.len(), k);
    let mut total = 0.0;
    for j in 0..n {
        for m in 0..k {
            let b = 1.0 + eigenvalues[m] / tau;
            total += alpha[(j, m)] * alpha[(j, m)] * b * b;
        }
    }
    total / (k as f64 * n as f64)
}

/// Total loss from the naive pieces.
pub fn naive_loss_total(
    alpha: &DMatrix<f64>,
    phi_sel: &DMatrix<f64>,
    displacements: &DMatrix<f64>,
    eigenvalues: &[f64],
    omega: f64,
    tau: f64,
) -> f64 {
    naive_loss_data(alpha, phi_sel, displacements)
        + omega * naive_reg_diag_form(alpha, eigenvalues, tau)
}

/// Gradient by the literal double sum with the Kronecker delta spelled
/// out:
/// ∂𝖩/∂α_uv = (2/N) Σ_i Σ_j (w^i − u^i)·(u^j − ū^j) φ_i^(v) ψ_i^(j)
/// (δ_ju − ψ_i^(u)) + (2ω α_uv/(K N)) (1 + λ_v/τ)².
pub fn naive_gradient(
    alpha: &DMatrix<f64>,
    phi_sel: &DMatrix<f64>,
    displacements: &DMatrix<f64>,
    eigenvalues: &[f64],
    omega: f64,
    tau: f64,
) -> DMatrix<f64> {
    let n = alpha.nrows();
    let k = alpha.ncols();
    let dim = displacements.ncols();
    let v = naive_auxiliary(alpha, phi_sel);
    let psi = naive_influence(&v);
    // Residual w^i − u^i at each selected point.
    let mut residual = DMatrix::zeros(n, dim);
    for i in 0..n {
        for c in 0..dim {
            let mut moved = 0.0;
            for j in 0..n {
                moved += displacements[(j, c)] * psi[(i, j)];
            }
            residual[(i, c)] = moved - displacements[(i, c)];
        }
    }
    let mut grad = DMatrix::zeros(n, k);
    for u in 0..n {
        for vv in 0..k {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let mut dot = 0.0;
                    for c in 0..dim {
                        dot += residual[(i, c)] * displacements[(j, c)];
                    }
                    let delta_ju = if j == u { 1.0 } else { 0.0 };
                    s += dot * phi_sel[(i, vv)] * psi[(i, j)] * (delta_ju - psi[(i, u)]);
                }
            }
            let b = 1.0 + eigenvalues[vv] / tau;
            grad[(u, vv)] = 2.0 / n as f64 * s
                + 2.0 * omega * alpha[(u, vv)] / (k as f64 * n as f64) * b * b;
        }
    }
    grad
}

/// Central finite differences of a scalar function over a matrix argument.
pub fn fd_gradient<F>(f: F, at: &DMatrix<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DMatrix<f64>) -> f64,
{
    let mut probe = at.clone();
    let mut grad = DMatrix::zeros(at.nrows(), at.ncols());
    for r in 0..at.nrows() {
        for c in 0..at.ncols() {
            let base = at[(r, c)];
            probe[(r, c)] = base + h;
            let plus = f(&probe);
            probe[(r, c)] = base - h;
            let minus = f(&probe);
            probe[(r, c)] = base;
            grad[(r, c)] = (plus - minus) / (2.0 * h);
        }
    }
    grad
}

/// Central finite differences of a gradient function, giving a Hessian
/// over row-major variable order (row r, column c maps to r·ncols + c).
pub fn fd_hessian<G>(g: G, at: &DMatrix<f64>, h: f64) -> DMatrix<f64>
where
    G: Fn(&DMatrix<f64>) -> DMatrix<f64>,
{
    let (rows, cols) = at.shape();
    let vars = rows * cols;
    let mut probe = at.clone();
    let mut hess = DMatrix::zeros(vars, vars);
    for b in 0..vars {
        let (r, c) = (b / cols, b % cols);
        let base = at[(r, c)];
        probe[(r, c)] = base + h;
        let plus = g(&probe);
        probe[(r, c)] = base - h;
        let minus = g(&probe);
        probe[(r, c)] = base;
        for a in 0..vars {
            let (ar, ac) = (a / cols, a % cols);
            hess[(a, b)] = (plus[(ar, ac)] - minus[(ar, ac)]) / (2.0 * h);
        }
    }
    hess
}

/// For each cluster, scan every point and keep the closest member (ties to
/// the lowest index). Exhaustive counterpart of the selection step.
pub fn nearest_centroid_exhaustive(
    coords: &DMatrix<f64>,
    centroids: &DMatrix<f64>,
    labels: &[usize],
) -> Vec<usize> {
    let k = centroids.nrows();
    (0..k)
        .map(|j| {
            let mut best: Option<(usize, f64)> = None;
            for i in 0..coords.nrows() {
                if labels[i] != j {
                    continue;
                }
                let mut d2 = 0.0;
                for c in 0..coords.ncols() {
                    let d = coords[(i, c)] - centroids[(j, c)];
                    d2 += d * d;
                }
                let better = match best {
                    None => true,
                    Some((_, bd)) => d2 < bd,
                };
                if better {
                    best = Some((i, d2));
                }
            }
            best.expect("cluster must not be empty").0
        })
        .collect()
}

/// Best fraction of matching labels over every relabeling of the predicted
/// clusters. Exhaustive over k! permutations; keep k small.
pub fn best_label_agreement(pred: &[usize], truth: &[usize], k: usize) -> f64 {
    assert_eq!(pred.len(), truth.len());
    assert!(k <= 8, "exhaustive relabeling is factorial in k");
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0usize;
    // Heap's algorithm, iterative form.
    let mut stack = vec![0usize; k];
    let score = |perm: &[usize]| {
        pred.iter()
            .zip(truth.iter())
            .filter(|&(&p, &t)| p < k && perm[p] == t)
            .count()
    };
    best = best.max(score(&perm));
    let mut i = 0;
    while i < k {
        if stack[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(stack[i], i);
            }
            best = best.max(score(&perm));
            stack[i] += 1;
            i = 0;
        } else {
            stack[i] = 0;
            i += 1;
        }
    }
    best as f64 / pred.len() as f64
}

/// Closed-form analysis of the rigid-translation cluster problem under the
/// restricted one-parameter ansatz with idealized indicator eigenfunctions.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictedCanonicalSolution {
    pub m: usize,
    /// b^i = −(M−1) δ^i + Σ_{j≠i} δ^j per cluster.
    pub b: Vec<Vec<f64>>,
    pub b_norms: Vec<f64>,
    /// Optimal scalar coefficient α = −ln(ω)/4.
    pub alpha: f64,
    /// γ(α) = exp(−2α) / (1 + (M−1) exp(−2α)).
    pub gamma: f64,
    /// Predicted ‖w^i − u^i‖ = γ ‖b^{C(i)}‖ per cluster.
    pub displacement_norms: Vec<f64>,
    /// Predicted misfit γ² Σ_i ‖b^i‖² / M.
    pub j_data: f64,
    /// Predicted regularizer α²/M.
    pub j_reg: f64,
}

/// Evaluate the restricted-ansatz prediction for given translations.
pub fn canonical_prediction(deltas: &[Vec<f64>], omega: f64) -> Result<RestrictedCanonicalSolution> {
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(Error::Parameter(format!(
            "prediction needs a positive finite omega, got {omega}"
        )));
    }
    let m = deltas.len();
    if m < 2 {
        return Err(Error::Parameter("need at least 2 clusters".into()));
    }
    let dim = deltas[0].len();
    if deltas.iter().any(|d| d.len() != dim) {
        return Err(Error::Dimension("translations must share one dimension".into()));
    }
    let mut b = Vec::with_capacity(m);
    for i in 0..m {
        let mut bi = vec![0.0; dim];
        for (j, dj) in deltas.iter().enumerate() {
            let coeff = if j == i { -((m - 1) as f64) } else { 1.0 };
            for c in 0..dim {
                bi[c] += coeff * dj[c];
            }
        }
        b.push(bi);
    }
    let b_norms: Vec<f64> = b
        .iter()
        .map(|bi| bi.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let alpha = -omega.ln() / 4.0;
    let e = (-2.0 * alpha).exp();
    let gamma = e / (1.0 + (m - 1) as f64 * e);
    let displacement_norms: Vec<f64> = b_norms.iter().map(|&bn| gamma * bn).collect();
    let j_data = gamma * gamma * b_norms.iter().map(|&bn| bn * bn).sum::<f64>() / m as f64;
    let j_reg = alpha * alpha / m as f64;
    Ok(RestrictedCanonicalSolution {
        m,
        b,
        b_norms,
        alpha,
        gamma,
        displacement_norms,
        j_data,
        j_reg,
    })
}

/// Two-pass recomputation of the percent relative errors: first pass for
/// the per-component mean absolute truth, second for the errors.
pub fn naive_relative_errors(
    approx: &Dataset,
    truth: &Dataset,
    validation: &[usize],
) -> (Vec<Vec<f64>>, Vec<Option<f64>>) {
    let dim = approx.dim();
    let mut denoms = vec![0.0; dim];
    for &i in validation {
        for k in 0..dim {
            denoms[k] += truth.points()[(i, k)].abs();
        }
    }
    for d in denoms.iter_mut() {
        *d /= validation.len() as f64;
    }
    let errors: Vec<Vec<f64>> = validation
        .iter()
        .map(|&i| {
            (0..dim)
                .map(|k| {
                    if denoms[k] == 0.0 {
                        0.0
                    } else {
                        (approx.points()[(i, k)] - truth.points()[(i, k)]).abs() / denoms[k]
                            * 100.0
                    }
                })
                .collect()
        })
        .collect();
    let means = (0..dim)
        .map(|k| {
            if denoms[k] == 0.0 {
                None
            } else {
                let s: f64 = errors.iter().map(|row| row[k]).sum();
                Some(s / validation.len() as f64)
            }
        })
        .collect();
    (errors, means)
}
