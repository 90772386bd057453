//! The bi-fidelity transformation and the optimization that trains it.
//!
//! Each selected point j owns an influence function ψ^(j) over the whole
//! cloud, built by pushing a linear combination of Laplacian eigenfunctions
//! (the auxiliary function v^(j)) through a row-wise softmax. The transform
//! moves every low-fidelity point by the ψ-weighted mix of the known
//! high-minus-low displacements. The coefficient matrix α is trained by
//! minimizing a data misfit at the selected points plus a spectral
//! regularizer that penalizes high-eigenvalue modes.
//!
//! All computations here run in scaled coordinates; callers scale inputs
//! and invert the scaling on the way out.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{format_float, Dataset, Fidelity};
use crate::error::{Error, Result};
use crate::graph::{read_matrix, write_matrix};
use crate::spectral::Spectrum;

/// Sufficient-decrease constant for the line search.
const ARMIJO_C1: f64 = 1e-4;
/// Consecutive line-search rejections tolerated before giving up.
const MAX_REJECTIONS: usize = 60;
/// Curvature pairs kept by the quasi-Newton memory.
const LBFGS_MEMORY: usize = 10;
/// Hessian checks are dense; refuse beyond this many variables.
const HESSIAN_VAR_CAP: usize = 5_000;
/// Step for finite differences of the analytic gradient.
const HESSIAN_FD_STEP: f64 = 1e-6;

/// Settings for one fusion solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Number of spectral modes K kept for the auxiliary functions.
    pub k_cutoff: usize,
    /// Regularization eigenvalue scale; must be positive.
    pub tau: f64,
    /// Regularization weight; nonnegative.
    pub omega: f64,
    /// Optimizer stops when the gradient max-norm drops below this.
    pub grad_tol: f64,
    /// Optimizer stops after this many accepted iterations.
    pub max_iters: usize,
}

impl FusionConfig {
    pub fn new(k_cutoff: usize, tau: f64, omega: f64) -> Self {
        Self {
            k_cutoff,
            tau,
            omega,
            grad_tol: 1e-8,
            max_iters: 5000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_cutoff == 0 {
            return Err(Error::Parameter("spectrum cutoff must be at least 1".into()));
        }
        check_tau_omega(self.omega, self.tau)?;
        if !(self.grad_tol > 0.0) {
            return Err(Error::Parameter(format!(
                "gradient tolerance must be positive, got {}",
                self.grad_tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Parameter("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// The suggested spectrum cutoff: three modes per selected point.
pub fn default_cutoff(n_selected: usize) -> usize {
    3 * n_selected
}

/// The suggested regularization scale: the smallest eigenvalue above the
/// zero tolerance.
pub fn default_tau(spectrum: &Spectrum) -> Result<f64> {
    spectrum
        .smallest_positive()
        .map(|(_, v)| v)
        .ok_or_else(|| {
            Error::Degenerate(
                "no eigenvalue above the zero tolerance to set the regularization scale".into(),
            )
        })
}

fn check_tau_omega(omega: f64, tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Parameter(format!(
            "regularization scale tau must be positive and finite, got {tau}"
        )));
    }
    if !(omega >= 0.0) || !omega.is_finite() {
        return Err(Error::Parameter(format!(
            "regularization weight omega must be nonnegative and finite, got {omega}"
        )));
    }
    Ok(())
}

/// Everything that stays fixed while α varies: the truncated spectrum, the
/// selected indices, and the known displacements.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionContext {
    /// First K eigenfunction columns over all points.
    phi: DMatrix<f64>,
    /// The matching K eigenvalues, ascending.
    eigenvalues: DVector<f64>,
    /// Eigenfunction rows at the selected points only.
    phi_sel: DMatrix<f64>,
    /// Original indices of the selected points.
    selected: Vec<usize>,
    /// Scaled low-fidelity coordinates of all points.
    low: DMatrix<f64>,
    /// u^j − ū^j at the selected points, scaled coordinates.
    displacements: DMatrix<f64>,
}

impl FusionContext {
    /// Assemble the fixed data for a solve. `low` is the scaled dataset the
    /// spectrum was built from; `high_sel` holds the scaled high-fidelity
    /// rows in the same order as `selected`.
    pub fn new(
        low: &Dataset,
        high_sel: &Dataset,
        selected: &[usize],
        spectrum: &Spectrum,
        k_cutoff: usize,
    ) -> Result<Self> {
        let n_total = low.n_points();
        if low.scaling().is_none() {
            return Err(Error::State(
                "fusion operates on scaled coordinates; scale the low-fidelity dataset first"
                    .into(),
            ));
        }
        if high_sel.scaling() != low.scaling() {
            return Err(Error::State(
                "high-fidelity rows must carry the low-fidelity scaling record".into(),
            ));
        }
        if high_sel.names() != low.names() {
            return Err(Error::Alignment(format!(
                "component names differ: {:?} vs {:?}",
                low.names(),
                high_sel.names()
            )));
        }
        if high_sel.n_points() != selected.len() {
            return Err(Error::Alignment(format!(
                "{} high-fidelity rows for {} selected indices",
                high_sel.n_points(),
                selected.len()
            )));
        }
        if selected.is_empty() {
            return Err(Error::EmptyInput("selection is empty".into()));
        }
        let mut seen = vec![false; n_total];
        for &s in selected {
            if s >= n_total {
                return Err(Error::Parameter(format!(
                    "selected index {s} out of range for {n_total} points"
                )));
            }
            if seen[s] {
                return Err(Error::Parameter(format!("selected index {s} repeats")));
            }
            seen[s] = true;
        }
        if spectrum.n_points() != n_total {
            return Err(Error::Dimension(format!(
                "spectrum covers {} points, dataset has {n_total}",
                spectrum.n_points()
            )));
        }
        if k_cutoff == 0 || k_cutoff > spectrum.n_modes() {
            return Err(Error::Parameter(format!(
                "spectrum cutoff {k_cutoff} outside 1..={} available modes",
                spectrum.n_modes()
            )));
        }
        let truncated = spectrum.truncate(k_cutoff)?;
        let phi = truncated.eigenfunctions().clone();
        let eigenvalues = truncated.eigenvalues().clone();
        let phi_sel = DMatrix::from_fn(selected.len(), k_cutoff, |j, m| phi[(selected[j], m)]);
        let mut displacements = DMatrix::zeros(selected.len(), low.dim());
        for (j, &s) in selected.iter().enumerate() {
            for c in 0..low.dim() {
                displacements[(j, c)] = high_sel.points()[(j, c)] - low.points()[(s, c)];
            }
        }
        Ok(Self {
            phi,
            eigenvalues,
            phi_sel,
            selected: selected.to_vec(),
            low: low.points().clone(),
            displacements,
        })
    }

    pub fn n_points(&self) -> usize {
        self.phi.nrows()
    }

    pub fn n_selected(&self) -> usize {
        self.selected.len()
    }

    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn dim(&self) -> usize {
        self.displacements.ncols()
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn displacements(&self) -> &DMatrix<f64> {
        &self.displacements
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn zero_alpha(&self) -> DMatrix<f64> {
        DMatrix::zeros(self.n_selected(), self.n_modes())
    }

    fn check_alpha(&self, alpha: &DMatrix<f64>) -> Result<()> {
        if alpha.nrows() != self.n_selected() || alpha.ncols() != self.n_modes() {
            return Err(Error::Dimension(format!(
                "alpha is {}x{}, context needs {}x{}",
                alpha.nrows(),
                alpha.ncols(),
                self.n_selected(),
                self.n_modes()
            )));
        }
        Ok(())
    }
}

/// The trained transform: coefficients plus everything needed to move an
/// arbitrary point of the cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    alpha: DMatrix<f64>,
    phi: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    tau: f64,
    omega: f64,
    selected: Vec<usize>,
    displacements: DMatrix<f64>,
}

/// On-disk form of the model; the displacement matrix travels separately
/// as a binary matrix file.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    /// Row-major N×K coefficients.
    alpha: Vec<f64>,
    #[serde(rename = "K")]
    k_cutoff: usize,
    tau: f64,
    omega: f64,
    high_idx: Vec<usize>,
}

impl FusionModel {
    pub fn new(ctx: &FusionContext, cfg: &FusionConfig, alpha: DMatrix<f64>) -> Result<Self> {
        cfg.validate()?;
        ctx.check_alpha(&alpha)?;
        if cfg.k_cutoff != ctx.n_modes() {
            return Err(Error::Dimension(format!(
                "config cutoff {} does not match context modes {}",
                cfg.k_cutoff,
                ctx.n_modes()
            )));
        }
        Ok(Self {
            alpha,
            phi: ctx.phi.clone(),
            eigenvalues: ctx.eigenvalues.clone(),
            tau: cfg.tau,
            omega: cfg.omega,
            selected: ctx.selected.clone(),
            displacements: ctx.displacements.clone(),
        })
    }

    pub fn alpha(&self) -> &DMatrix<f64> {
        &self.alpha
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn displacements(&self) -> &DMatrix<f64> {
        &self.displacements
    }

    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Influence functions over the whole cloud: an N̄×N matrix whose rows
    /// sum to one.
    pub fn influence_all(&self) -> Result<DMatrix<f64>> {
        let v = auxiliary(&self.alpha, &self.phi)?;
        influence(&v)
    }

    /// Write the JSON description and the binary displacement matrix.
    pub fn save(&self, json_path: &Path, displacements_path: &Path) -> Result<()> {
        let n = self.selected.len();
        let k = self.n_modes();
        let mut alpha = Vec::with_capacity(n * k);
        for j in 0..n {
            for m in 0..k {
                alpha.push(self.alpha[(j, m)]);
            }
        }
        let file = ModelFile {
            alpha,
            k_cutoff: k,
            tau: self.tau,
            omega: self.omega,
            high_idx: self.selected.clone(),
        };
        let mut text = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::Numeric(format!("model serialization failed: {e}")))?;
        text.push('\n');
        std::fs::write(json_path, text).map_err(|e| Error::io(json_path, e))?;
        write_matrix(displacements_path, &self.displacements, "displacements")
    }

    /// Rebuild a model from its files plus the spectrum it was trained
    /// against.
    pub fn load(json_path: &Path, displacements_path: &Path, spectrum: &Spectrum) -> Result<Self> {
        let text = std::fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: json_path.to_path_buf(),
            row: 1,
            msg: e.to_string(),
        })?;
        let (displacements, kind) = read_matrix(displacements_path)?;
        if kind != "displacements" {
            return Err(Error::Comparison(format!(
                "expected a displacements matrix, found kind {kind:?}"
            )));
        }
        let n = file.high_idx.len();
        let k = file.k_cutoff;
        if n == 0 || k == 0 {
            return Err(Error::EmptyInput("model has no selected points or no modes".into()));
        }
        if file.alpha.len() != n * k {
            return Err(Error::Dimension(format!(
                "model alpha has {} entries, expected {n}x{k}",
                file.alpha.len()
            )));
        }
        if displacements.nrows() != n {
            return Err(Error::Alignment(format!(
                "displacement matrix has {} rows for {n} selected indices",
                displacements.nrows()
            )));
        }
        if k > spectrum.n_modes() {
            return Err(Error::Parameter(format!(
                "model uses {k} modes, spectrum provides {}",
                spectrum.n_modes()
            )));
        }
        check_tau_omega(file.omega, file.tau)?;
        let truncated = spectrum.truncate(k)?;
        for &s in &file.high_idx {
            if s >= truncated.n_points() {
                return Err(Error::Parameter(format!(
                    "model index {s} out of range for {} points",
                    truncated.n_points()
                )));
            }
        }
        let alpha = DMatrix::from_fn(n, k, |j, m| file.alpha[j * k + m]);
        Ok(Self {
            alpha,
            phi: truncated.eigenfunctions().clone(),
            eigenvalues: truncated.eigenvalues().clone(),
            tau: file.tau,
            omega: file.omega,
            selected: file.high_idx,
            displacements,
        })
    }
}

/// Loss split into its two terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub j_data: f64,
    pub j_reg: f64,
    /// j_data + ω·j_reg.
    pub j_total: f64,
}

/// One accepted optimizer iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub j_data: f64,
    pub j_reg: f64,
    pub j_total: f64,
    pub grad_inf_norm: f64,
}

/// Write an iteration trace as CSV.
pub fn save_trace(path: &Path, trace: &[IterationRecord]) -> Result<()> {
    let mut out = String::from("iter,j_data,j_reg,j_total,grad_inf_norm\n");
    for r in trace {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.iter,
            format_float(r.j_data),
            format_float(r.j_reg),
            format_float(r.j_total),
            format_float(r.grad_inf_norm)
        );
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Auxiliary functions: V[i][j] = Σ_m α_jm φ_i^(m).
pub fn auxiliary(alpha: &DMatrix<f64>, phi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if alpha.ncols() != phi.ncols() {
        return Err(Error::Dimension(format!(
            "alpha has {} mode columns, eigenfunctions have {}",
            alpha.ncols(),
            phi.ncols()
        )));
    }
    Ok(phi * alpha.transpose())
}

/// Row-wise softmax with max subtraction. Rows of the result sum to one.
pub fn influence(v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("auxiliary values are not finite".into()));
    }
    if v.ncols() == 0 || v.nrows() == 0 {
        return Err(Error::EmptyInput("influence needs at least one row and column".into()));
    }
    let mut psi = v.clone_owned();
    for mut row in psi.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        // sum ≥ 1 because the max entry contributes exp(0).
        let inv = 1.0 / sum;
        for x in row.iter_mut() {
            *x *= inv;
        }
    }
    Ok(psi)
}

/// Move every point by the ψ-weighted mix of the known displacements:
/// w^i = ū^i + Σ_j (u^j − ū^j) ψ_i^(j).
pub fn transform(low: &Dataset, model: &FusionModel) -> Result<Dataset> {
    if low.scaling().is_none() {
        return Err(Error::State(
            "transform operates on scaled coordinates; scale the dataset first".into(),
        ));
    }
    if low.n_points() != model.phi.nrows() {
        return Err(Error::Dimension(format!(
            "dataset has {} points, model eigenfunctions cover {}",
            low.n_points(),
            model.phi.nrows()
        )));
    }
    if low.dim() != model.displacements.ncols() {
        return Err(Error::Dimension(format!(
            "dataset dimension {} does not match displacement dimension {}",
            low.dim(),
            model.displacements.ncols()
        )));
    }
    let psi = model.influence_all()?;
    let moved = low.points() + psi * &model.displacements;
    low.with_same_provenance(moved, Fidelity::Bi)
}

/// ψ rows at the selected points and the residuals w^i − u^i there.
fn selected_state(
    alpha: &DMatrix<f64>,
    ctx: &FusionContext,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let v_sel = auxiliary(alpha, &ctx.phi_sel)?;
    let psi_sel = influence(&v_sel)?;
    // Residual at selected point i: Σ_j ψ_ij d^j − d^i.
    let residuals = &psi_sel * &ctx.displacements - &ctx.displacements;
    Ok((psi_sel, residuals))
}

fn reg_weight(lambda: f64, tau: f64) -> f64 {
    let b = 1.0 + lambda / tau;
    b * b
}

/// Loss at α: data misfit over the selected points plus the diagonalized
/// spectral regularizer (1/(KN)) Σ_j Σ_m α_jm² (1 + λ_m/τ)².
pub fn loss(
    alpha: &DMatrix<f64>,
    ctx: &FusionContext,
    omega: f64,
    tau: f64,
) -> Result<LossBreakdown> {
    check_tau_omega(omega, tau)?;
    ctx.check_alpha(alpha)?;
    let (_, residuals) = selected_state(alpha, ctx)?;
    let n = ctx.n_selected() as f64;
    let k = ctx.n_modes() as f64;
    let j_data = residuals.iter().map(|r| r * r).sum::<f64>() / n;
    let mut j_reg = 0.0;
    for m in 0..ctx.n_modes() {
        let w = reg_weight(ctx.eigenvalues[m], tau);
        for j in 0..ctx.n_selected() {
            j_reg += alpha[(j, m)] * alpha[(j, m)] * w;
        }
    }
    j_reg /= k * n;
    Ok(LossBreakdown {
        j_data,
        j_reg,
        j_total: j_data + omega * j_reg,
    })
}

/// Analytic gradient of the total loss with respect to α:
/// (2/N) Σ_i Σ_j (w^i − u^i)·(u^j − ū^j) φ_i^(v) ψ_i^(j) (δ_ju − ψ_i^(u))
/// + (2ω α_uv/(KN)) (1 + λ_v/τ)².
pub fn gradient(
    alpha: &DMatrix<f64>,
    ctx: &FusionContext,
    omega: f64,
    tau: f64,
) -> Result<DMatrix<f64>> {
    check_tau_omega(omega, tau)?;
    ctx.check_alpha(alpha)?;
    let (psi_sel, residuals) = selected_state(alpha, ctx)?;
    let n = ctx.n_selected();
    let k = ctx.n_modes();
    // c[i][j] = (w^i − u^i)·d^j collapses the double j-sum to
    // g[i][u] = ψ_iu (c_iu − Σ_j c_ij ψ_ij).
    let c = &residuals * ctx.displacements.transpose();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            s += c[(i, j)] * psi_sel[(i, j)];
        }
        for u in 0..n {
            g[(i, u)] = psi_sel[(i, u)] * (c[(i, u)] - s);
        }
    }
    let mut grad = g.transpose() * &ctx.phi_sel;
    grad *= 2.0 / n as f64;
    let reg_scale = 2.0 * omega / (k as f64 * n as f64);
    for m in 0..k {
        let w = reg_weight(ctx.eigenvalues[m], tau);
        for u in 0..n {
            grad[(u, m)] += reg_scale * alpha[(u, m)] * w;
        }
    }
    Ok(grad)
}

/// Quasi-Newton descent with limited curvature memory and a backtracking
/// sufficient-decrease line search. Deterministic; j_total never increases
/// across accepted iterates. Both the gradient-tolerance and the
/// iteration-cap terminations return Ok.
pub fn optimize(
    ctx: &FusionContext,
    cfg: &FusionConfig,
    initial: Option<&DMatrix<f64>>,
) -> Result<(DMatrix<f64>, LossBreakdown, Vec<IterationRecord>)> {
    cfg.validate()?;
    if cfg.k_cutoff != ctx.n_modes() {
        return Err(Error::Dimension(format!(
            "config cutoff {} does not match context modes {}",
            cfg.k_cutoff,
            ctx.n_modes()
        )));
    }
    let mut alpha = match initial {
        Some(a) => {
            ctx.check_alpha(a)?;
            if a.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric("initial coefficients are not finite".into()));
            }
            a.clone_owned()
        }
        None => ctx.zero_alpha(),
    };
    let omega = cfg.omega;
    let tau = cfg.tau;
    let mut current = loss(&alpha, ctx, omega, tau)?;
    let mut grad = gradient(&alpha, ctx, omega, tau)?;
    let mut trace: Vec<IterationRecord> = Vec::new();
    // Curvature pairs (s, y, 1/sᵀy), oldest first.
    let mut history: Vec<(DMatrix<f64>, DMatrix<f64>, f64)> = Vec::new();

    for iter in 0..=cfg.max_iters {
        let grad_inf_norm = grad.amax();
        trace.push(IterationRecord {
            iter,
            j_data: current.j_data,
            j_reg: current.j_reg,
            j_total: current.j_total,
            grad_inf_norm,
        });
        if grad_inf_norm <= cfg.grad_tol || iter == cfg.max_iters {
            return Ok((alpha, current, trace));
        }

        let mut dir = two_loop_direction(&grad, &history);
        let mut slope = grad.dot(&dir);
        if !(slope < 0.0) {
            // Memory produced a non-descent direction; fall back to
            // steepest descent and drop the stale curvature pairs.
            history.clear();
            dir = -grad.clone_owned();
            slope = grad.dot(&dir);
        }

        let mut step = 1.0;
        let mut rejections = 0usize;
        let (next_alpha, next_loss) = loop {
            let cand = &alpha + &dir * step;
            let cand_loss = loss(&cand, ctx, omega, tau)?;
            let acceptable = cand_loss.j_total.is_finite()
                && cand_loss.j_total <= current.j_total + ARMIJO_C1 * step * slope;
            if acceptable {
                break (cand, cand_loss);
            }
            rejections += 1;
            if rejections >= MAX_REJECTIONS {
                return Err(Error::OptimizationFailure {
                    msg: format!(
                        "line search failed {MAX_REJECTIONS} times at iteration {iter} \
                         (j_total {}, gradient max-norm {grad_inf_norm})",
                        current.j_total
                    ),
                    trace,
                });
            }
            step *= 0.5;
        };

        let next_grad = gradient(&next_alpha, ctx, omega, tau)?;
        let s = &next_alpha - &alpha;
        let y = &next_grad - &grad;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if history.len() == LBFGS_MEMORY {
                history.remove(0);
            }
            history.push((s, y, 1.0 / sy));
        }
        alpha = next_alpha;
        current = next_loss;
        grad = next_grad;
    }
    unreachable!("loop returns at the iteration cap");
}

/// Two-loop recursion over the curvature memory; returns the descent
/// direction candidate −H·g.
fn two_loop_direction(
    grad: &DMatrix<f64>,
    history: &[(DMatrix<f64>, DMatrix<f64>, f64)],
) -> DMatrix<f64> {
    let mut q = grad.clone_owned();
    let mut coeffs = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * s.dot(&q);
        q -= y * a;
        coeffs.push(a);
    }
    let gamma = match history.last() {
        Some((s, y, _)) => {
            let yy = y.dot(y);
            if yy > 0.0 {
                s.dot(y) / yy
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    let mut r = q * gamma;
    for ((s, y, rho), a) in history.iter().zip(coeffs.iter().rev()) {
        let b = rho * y.dot(&r);
        r += s * (*a - b);
    }
    -r
}

/// Second-order diagnostic at a converged point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HessianReport {
    /// Smallest eigenvalue of the symmetrized finite-difference Hessian.
    pub min_eigenvalue: f64,
    /// Estimated bound on the curvature of the transform (from the
    /// remainder after subtracting the first-order data term and the
    /// regularizer diagonal).
    pub zeta: f64,
    /// Σ_i ||w^i − u^i|| over the selected points.
    pub misfit_sum: f64,
    /// ω/(2|ζ|K); the sufficient condition compares misfit_sum against it.
    pub bound: f64,
    /// Whether misfit_sum ≤ bound.
    pub condition_met: bool,
    /// Whether the smallest eigenvalue is materially negative.
    pub indefinite: bool,
}

/// Estimate the Hessian at α by central finite differences of the analytic
/// gradient, symmetrize it, and report its smallest eigenvalue together
/// with the sufficient positive-definiteness condition. Diagnostic only:
/// indefiniteness sets a flag, never an error.
pub fn hessian_check(
    alpha: &DMatrix<f64>,
    ctx: &FusionContext,
    omega: f64,
    tau: f64,
) -> Result<HessianReport> {
    check_tau_omega(omega, tau)?;
    ctx.check_alpha(alpha)?;
    let n = ctx.n_selected();
    let k = ctx.n_modes();
    let vars = n * k;
    if vars > HESSIAN_VAR_CAP {
        return Err(Error::Size(format!(
            "dense Hessian needs {vars} variables (cap {HESSIAN_VAR_CAP}); \
             probe a subsampled selection instead"
        )));
    }

    // Variables enumerate α row-major: index = u*K + v.
    let mut hess = DMatrix::zeros(vars, vars);
    let mut probe = alpha.clone_owned();
    for b in 0..vars {
        let (u, v) = (b / k, b % k);
        let base = alpha[(u, v)];
        probe[(u, v)] = base + HESSIAN_FD_STEP;
        let plus = gradient(&probe, ctx, omega, tau)?;
        probe[(u, v)] = base - HESSIAN_FD_STEP;
        let minus = gradient(&probe, ctx, omega, tau)?;
        probe[(u, v)] = base;
        for a in 0..vars {
            let (au, av) = (a / k, a % k);
            hess[(a, b)] = (plus[(au, av)] - minus[(au, av)]) / (2.0 * HESSIAN_FD_STEP);
        }
    }
    let hess = (&hess + hess.transpose()) * 0.5;

    let eig = hess.clone().symmetric_eigen();
    let min_eigenvalue = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);

    // Split off the parts of the Hessian we know in closed form; what
    // remains is the residual-weighted curvature of the transform, whose
    // magnitude per unit of misfit estimates ζ.
    let (psi_sel, residuals) = selected_state(alpha, ctx)?;
    let mut gauss_newton = DMatrix::zeros(vars, vars);
    // ∂w^i/∂α_uv = φ_i^(v) ψ_iu (d^u − (w^i − ū^i)).
    let w_offsets = &psi_sel * &ctx.displacements;
    let d = ctx.dim();
    for i in 0..n {
        let mut jac = DMatrix::zeros(vars, d);
        for u in 0..n {
            for v in 0..k {
                let coeff = ctx.phi_sel[(i, v)] * psi_sel[(i, u)];
                for c in 0..d {
                    jac[(u * k + v, c)] =
                        coeff * (ctx.displacements[(u, c)] - w_offsets[(i, c)]);
                }
            }
        }
        gauss_newton += &jac * jac.transpose();
    }
    gauss_newton *= 2.0 / n as f64;
    let mut remainder = &hess - gauss_newton;
    let reg_scale = 2.0 * omega / (k as f64 * n as f64);
    for u in 0..n {
        for v in 0..k {
            remainder[(u * k + v, u * k + v)] -= reg_scale * reg_weight(ctx.eigenvalues[v], tau);
        }
    }
    let misfit_sum = (0..n)
        .map(|i| {
            (0..d)
                .map(|c| residuals[(i, c)] * residuals[(i, c)])
                .sum::<f64>()
                .sqrt()
        })
        .sum::<f64>();
    let zeta = if misfit_sum > 1e-300 {
        remainder.amax() / misfit_sum
    } else {
        0.0
    };
    let bound = if zeta.abs() > 0.0 {
        omega / (2.0 * zeta.abs() * k as f64)
    } else {
        f64::INFINITY
    };
    Ok(HessianReport {
        min_eigenvalue,
        zeta,
        misfit_sum,
        bound,
        condition_met: misfit_sum <= bound,
        indefinite: min_eigenvalue < -1e-8,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_laplacian, KernelSpec, LaplacianBundle};
    use crate::spectral::lowest_eigenpairs;

    /// A dataset whose fitted scaling is the identity map: extreme rows at
    /// ±1 are appended and dropped again.
    fn scaled_identity(rows: &[Vec<f64>]) -> Dataset {
        let dim = rows[0].len();
        let mut padded = rows.to_vec();
        padded.push(vec![1.0; dim]);
        padded.push(vec![-1.0; dim]);
        let names = (0..dim).map(|j| format!("c{j}")).collect();
        let d = Dataset::from_rows(names, &padded, Fidelity::Low).unwrap();
        let record = d.fit_scaling().unwrap();
        let scaled = d.apply_scaling(&record).unwrap();
        let keep: Vec<usize> = (0..rows.len()).collect();
        scaled.take_rows(&keep).unwrap()
    }

    fn small_spectrum(n: usize, k: usize) -> (Dataset, Spectrum) {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let t = i as f64 / n as f64;
                vec![(2.0 * t - 1.0) * 0.9, (t * t - 0.5) * 0.8]
            })
            .collect();
        let low = scaled_identity(&rows);
        let bundle =
            LaplacianBundle::from_points(&low, &KernelSpec::Fixed { sigma: 0.7 }, 0.0, 0.0)
                .unwrap();
        let spectrum = lowest_eigenpairs(&bundle, k).unwrap();
        (low, spectrum)
    }

    /// High-fidelity rows equal to the selected low rows plus a constant
    /// shift, already in scaled coordinates and carrying the low record.
    fn high_at(low: &Dataset, selected: &[usize], shift: &[f64]) -> Dataset {
        let base = low.take_rows(selected).unwrap();
        let points = DMatrix::from_fn(selected.len(), low.dim(), |i, c| {
            low.points()[(selected[i], c)] + shift[c]
        });
        base.with_same_provenance(points, Fidelity::High).unwrap()
    }

    fn context_with_shift(shift: &[f64]) -> (Dataset, Spectrum, FusionContext) {
        let (low, spectrum) = small_spectrum(12, 6);
        let selected = vec![1, 5, 9];
        let high = high_at(&low, &selected, shift);
        let ctx = FusionContext::new(&low, &high, &selected, &spectrum, 6).unwrap();
        (low, spectrum, ctx)
    }

    #[test]
    fn auxiliary_zero_alpha() {
        let phi = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let alpha = DMatrix::zeros(2, 2);
        let v = auxiliary(&alpha, &phi).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
        assert_eq!(v.nrows(), 3);
        assert_eq!(v.ncols(), 2);
    }

    #[test]
    fn auxiliary_picks_trivial_mode() {
        let n = 5;
        let w = DMatrix::from_element(n, n, 1.0);
        let bundle = build_laplacian(&w, 0.0, 0.0).unwrap();
        let spectrum = lowest_eigenpairs(&bundle, 3).unwrap();
        let mut alpha = DMatrix::zeros(2, 3);
        alpha[(1, 0)] = 1.0;
        let v = auxiliary(&alpha, spectrum.eigenfunctions()).unwrap();
        let expect = 1.0 / (n as f64).sqrt();
        for i in 0..n {
            assert!((v[(i, 1)] - expect).abs() <= 1e-12);
            assert_eq!(v[(i, 0)], 0.0);
        }
    }

    #[test]
    fn auxiliary_shape_mismatch() {
        let phi = DMatrix::zeros(3, 2);
        let alpha = DMatrix::zeros(2, 3);
        assert!(matches!(auxiliary(&alpha, &phi), Err(Error::Dimension(_))));
    }

    #[test]
    fn influence_uniform_row() {
        let v = DMatrix::zeros(2, 4);
        let psi = influence(&v).unwrap();
        for x in psi.iter() {
            assert!((x - 0.25).abs() <= 1e-15);
        }
    }

    #[test]
    fn influence_shift_invariance() {
        // the rounded sum c + ln3 perturbs the exponent gap by O(|c|·eps),
        // so the bound is looser than pure softmax arithmetic would need
        for c in [-700.0, 0.0, 3.5, 650.0] {
            let v = DMatrix::from_row_slice(1, 2, &[c, c + 3f64.ln()]);
            let psi = influence(&v).unwrap();
            assert!((psi[(0, 0)] - 0.25).abs() <= 1e-12, "c={c}");
            assert!((psi[(0, 1)] - 0.75).abs() <= 1e-12, "c={c}");
        }
    }

    #[test]
    fn influence_extreme_entries_stay_finite() {
        let v = DMatrix::from_row_slice(1, 3, &[1000.0, -1000.0, 0.0]);
        let psi = influence(&v).unwrap();
        assert!(psi.iter().all(|x| x.is_finite()));
        assert!((psi[(0, 0)] - 1.0).abs() <= 1e-12);
        let sum: f64 = psi.row(0).iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn influence_rejects_non_finite() {
        let v = DMatrix::from_row_slice(1, 2, &[f64::NAN, 0.0]);
        assert!(matches!(influence(&v), Err(Error::Numeric(_))));
    }

    #[test]
    fn partition_of_unity_random_rows() {
        let mut rng = crate::rng::stream_rng(11, "fusion-test/pou");
        use rand::Rng;
        for _ in 0..50 {
            let v = DMatrix::from_fn(6, 5, |_, _| rng.gen_range(-1000.0..1000.0));
            let psi = influence(&v).unwrap();
            for i in 0..6 {
                let sum: f64 = psi.row(i).iter().sum();
                assert!((sum - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn transform_zero_displacements_is_identity() {
        let (low, spectrum, ctx) = context_with_shift(&[0.0, 0.0]);
        let cfg = FusionConfig::new(6, default_tau(&spectrum).unwrap(), 1e-6);
        let model = FusionModel::new(&ctx, &cfg, ctx.zero_alpha()).unwrap();
        let bi = transform(&low, &model).unwrap();
        assert_eq!(bi.points(), low.points());
        assert_eq!(bi.fidelity(), Fidelity::Bi);
        assert_eq!(bi.scaling(), low.scaling());
    }

    #[test]
    fn transform_single_point_is_rigid_translation() {
        let (low, spectrum) = small_spectrum(10, 4);
        let selected = vec![4];
        let shift = [0.03, -0.02];
        let high = high_at(&low, &selected, &shift);
        let ctx = FusionContext::new(&low, &high, &selected, &spectrum, 4).unwrap();
        let cfg = FusionConfig::new(4, default_tau(&spectrum).unwrap(), 1e-6);
        let mut alpha = ctx.zero_alpha();
        alpha[(0, 1)] = 0.37;
        let model = FusionModel::new(&ctx, &cfg, alpha).unwrap();
        let bi = transform(&low, &model).unwrap();
        for i in 0..low.n_points() {
            for c in 0..2 {
                let moved = bi.points()[(i, c)] - low.points()[(i, c)];
                assert!((moved - shift[c]).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn loss_zero_everything() {
        let (_, spectrum, ctx) = context_with_shift(&[0.0, 0.0]);
        let tau = default_tau(&spectrum).unwrap();
        let b = loss(&ctx.zero_alpha(), &ctx, 1e-4, tau).unwrap();
        assert_eq!(b.j_data, 0.0);
        assert_eq!(b.j_reg, 0.0);
        assert_eq!(b.j_total, 0.0);
    }

    #[test]
    fn loss_rejects_bad_tau() {
        let (_, _, ctx) = context_with_shift(&[0.0, 0.0]);
        assert!(matches!(
            loss(&ctx.zero_alpha(), &ctx, 1e-4, 0.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            loss(&ctx.zero_alpha(), &ctx, -1.0, 1.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn gradient_zero_at_zero_displacements() {
        let (_, spectrum, ctx) = context_with_shift(&[0.0, 0.0]);
        let tau = default_tau(&spectrum).unwrap();
        let g = gradient(&ctx.zero_alpha(), &ctx, 1e-2, tau).unwrap();
        assert_eq!(g.amax(), 0.0);
    }

    #[test]
    fn gradient_regularizer_only() {
        // Zero displacements kill the data term for every α, leaving the
        // exact quadratic regularizer gradient.
        let (_, spectrum, ctx) = context_with_shift(&[0.0, 0.0]);
        let tau = default_tau(&spectrum).unwrap();
        let omega = 1e-3;
        let mut alpha = ctx.zero_alpha();
        alpha[(0, 2)] = 0.8;
        alpha[(2, 5)] = -1.3;
        let g = gradient(&alpha, &ctx, omega, tau).unwrap();
        let n = ctx.n_selected() as f64;
        let k = ctx.n_modes() as f64;
        for u in 0..ctx.n_selected() {
            for v in 0..ctx.n_modes() {
                let expect = 2.0 * omega / (k * n)
                    * alpha[(u, v)]
                    * reg_weight(ctx.eigenvalues()[v], tau);
                assert!((g[(u, v)] - expect).abs() <= 1e-15 + 1e-12 * expect.abs());
            }
        }
    }

    #[test]
    fn optimize_trivial_converges_immediately() {
        let (_, spectrum, ctx) = context_with_shift(&[0.0, 0.0]);
        let cfg = FusionConfig::new(6, default_tau(&spectrum).unwrap(), 1e-6);
        let (alpha, best, trace) = optimize(&ctx, &cfg, None).unwrap();
        assert!(trace.len() <= 2);
        assert_eq!(best.j_total, 0.0);
        assert_eq!(alpha.amax(), 0.0);
    }

    #[test]
    fn optimize_pure_quadratic_recovers_zero() {
        let (_, spectrum, ctx) = context_with_shift(&[0.0, 0.0]);
        let cfg = FusionConfig::new(6, default_tau(&spectrum).unwrap(), 1e-2);
        let mut start = ctx.zero_alpha();
        start[(0, 0)] = 2.0;
        start[(1, 3)] = -1.0;
        let (alpha, best, trace) = optimize(&ctx, &cfg, Some(&start)).unwrap();
        assert!(alpha.amax() <= 1e-4, "residual coefficients {}", alpha.amax());
        assert!(best.j_total <= 1e-10);
        for w in trace.windows(2) {
            assert!(w[1].j_total <= w[0].j_total + 1e-15);
        }
    }

    #[test]
    fn optimize_descends_and_meets_tolerance() {
        let (_, spectrum, ctx) = context_with_shift(&[0.04, -0.03]);
        let cfg = FusionConfig::new(6, default_tau(&spectrum).unwrap(), 1e-4);
        let (alpha, best, trace) = optimize(&ctx, &cfg, None).unwrap();
        let last = trace.last().unwrap();
        assert!(
            last.grad_inf_norm <= cfg.grad_tol,
            "gradient max-norm {} after {} iterations",
            last.grad_inf_norm,
            trace.len()
        );
        for w in trace.windows(2) {
            assert!(w[1].j_total <= w[0].j_total + 1e-15);
        }
        let check = loss(&alpha, &ctx, cfg.omega, cfg.tau).unwrap();
        assert!((check.j_total - best.j_total).abs() <= 1e-15);
    }

    #[test]
    fn optimizer_is_deterministic() {
        let (_, spectrum, ctx) = context_with_shift(&[0.02, 0.05]);
        let cfg = FusionConfig::new(6, default_tau(&spectrum).unwrap(), 1e-5);
        let a = optimize(&ctx, &cfg, None).unwrap();
        let b = optimize(&ctx, &cfg, None).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn model_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (_, spectrum, ctx) = context_with_shift(&[0.02, -0.01]);
        let cfg = FusionConfig::new(6, default_tau(&spectrum).unwrap(), 1e-6);
        let (alpha, _, _) = optimize(&ctx, &cfg, None).unwrap();
        let model = FusionModel::new(&ctx, &cfg, alpha).unwrap();
        let json = dir.path().join("model.json");
        let disp = dir.path().join("displacements.bin");
        model.save(&json, &disp).unwrap();
        let loaded = FusionModel::load(&json, &disp, &spectrum).unwrap();
        assert_eq!(model, loaded);
    }

    #[test]
    fn hessian_regularizer_diagonal() {
        let (_, spectrum, ctx) = context_with_shift(&[0.0, 0.0]);
        let tau = default_tau(&spectrum).unwrap();
        let omega = 1e-3;
        let report = hessian_check(&ctx.zero_alpha(), &ctx, omega, tau).unwrap();
        let n = ctx.n_selected() as f64;
        let k = ctx.n_modes() as f64;
        let expect = 2.0 * omega / (k * n) * reg_weight(ctx.eigenvalues()[0], tau);
        let rel = (report.min_eigenvalue - expect).abs() / expect;
        assert!(rel <= 1e-6, "min eig {} vs {expect}", report.min_eigenvalue);
        assert!(!report.indefinite);
        assert!(report.condition_met);
    }

    #[test]
    fn hessian_size_cap() {
        let (low, spectrum) = small_spectrum(90, 86);
        let selected: Vec<usize> = (0..60).collect();
        let high = high_at(&low, &selected, &[0.0, 0.0]);
        let ctx = FusionContext::new(&low, &high, &selected, &spectrum, 86).unwrap();
        assert!(60 * 86 > HESSIAN_VAR_CAP);
        assert!(matches!(
            hessian_check(&ctx.zero_alpha(), &ctx, 1e-4, 1.0),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn trace_csv_round_trip_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let trace = vec![
            IterationRecord {
                iter: 0,
                j_data: 0.5,
                j_reg: 0.25,
                j_total: 0.5 + 1e-6 * 0.25,
                grad_inf_norm: 0.125,
            },
            IterationRecord {
                iter: 1,
                j_data: 1e-300,
                j_reg: 0.0,
                j_total: 1e-300,
                grad_inf_norm: 0.0,
            },
        ];
        save_trace(&path, &trace).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "iter,j_data,j_reg,j_total,grad_inf_norm");
        assert_eq!(lines.next().unwrap(), "0,0.5,0.25,0.50000025,0.125");
        assert_eq!(lines.next().unwrap(), "1,1e-300,0.0,1e-300,0.0");
        assert!(lines.next().is_none());
    }

    #[test]
    fn context_rejects_misaligned_inputs() {
        let (low, spectrum) = small_spectrum(12, 6);
        let selected = vec![1, 5, 9];
        let high = high_at(&low, &selected, &[0.0, 0.0]);
        // Unscaled low dataset.
        let raw = Dataset::from_rows(
            low.names().to_vec(),
            &(0..12).map(|i| vec![i as f64, 0.0]).collect::<Vec<_>>(),
            Fidelity::Low,
        )
        .unwrap();
        assert!(matches!(
            FusionContext::new(&raw, &high, &selected, &spectrum, 6),
            Err(Error::State(_))
        ));
        // Wrong number of high rows.
        let high_short = high.take_rows(&[0, 1]).unwrap();
        assert!(matches!(
            FusionContext::new(&low, &high_short, &selected, &spectrum, 6),
            Err(Error::Alignment(_))
        ));
        // Repeated selection.
        let high3 = high_at(&low, &[1, 1, 9], &[0.0, 0.0]);
        assert!(matches!(
            FusionContext::new(&low, &high3, &[1, 1, 9], &spectrum, 6),
            Err(Error::Parameter(_))
        ));
        // Cutoff beyond available modes.
        assert!(matches!(
            FusionContext::new(&low, &high, &selected, &spectrum, 7),
            Err(Error::Parameter(_))
        ));
    }
}
