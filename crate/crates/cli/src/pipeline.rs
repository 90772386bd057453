//! Subcommand implementations working purely through files: each step
//! reads the artifacts of the previous one from the output directory, so a
//! pipeline can be stopped, inspected, and resumed between any two steps.

use std::path::Path;

use bifid_core::dataset::{Dataset, Fidelity, RestrictionSpec};
use bifid_core::fusion::{
    default_tau, optimize, save_trace, transform, FusionConfig, FusionContext, FusionModel,
};
use bifid_core::graph::LaplacianBundle;
use bifid_core::metrics::{
    comparison_table, relative_errors, selection_study, ComparisonTable, StudyContext,
};
use bifid_core::regtune::{log_grid, sweep};
use bifid_core::selection::{select_high_fidelity, KMeansConfig, SelectionResult};
use bifid_core::spectral::{lowest_eigenpairs, Spectrum};
use bifid_core::synthetic::save_labels;
use bifid_core::dataset::format_float;
use bifid_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{OmegaPolicy, PipelineConfig, TauPolicy, TauRule};

/// Artifact file names inside the output directory.
pub mod artifact {
    pub const CONFIG_ECHO: &str = "config.json";
    pub const LOW_SCALED: &str = "low_scaled.csv";
    pub const EIGENVALUES: &str = "eigenvalues.csv";
    pub const EIGENFUNCTIONS: &str = "eigenfunctions.bin";
    pub const SELECTION: &str = "selection.json";
    pub const SELECTION_LABELS: &str = "selection_labels.csv";
    pub const LOW_REINDEXED: &str = "low_reindexed.csv";
    pub const ACQUIRE: &str = "acquire.csv";
    pub const MODEL: &str = "model.json";
    pub const DISPLACEMENTS: &str = "displacements.bin";
    pub const TRACE: &str = "trace.csv";
    pub const BI: &str = "bi.csv";
    pub const LCURVE: &str = "lcurve.csv";
    pub const REPORT_MD: &str = "report.md";
    pub const REPORT_JSON: &str = "report.json";
    pub const STUDY_MD: &str = "study.md";
    pub const STUDY_JSON: &str = "study.json";
    // Extra files written by demos.
    pub const LOW: &str = "low.csv";
    pub const HIGH: &str = "high.csv";
    pub const HIGH_SEL: &str = "high_sel.csv";
    pub const LABELS: &str = "labels.csv";
    pub const EIGENFUNCTIONS_POINTS: &str = "eigenfunctions_points.csv";
    pub const INFLUENCE_POINTS: &str = "influence_points.csv";
}

/// On-disk form of a selection result; centroids live in embedding
/// coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub selected: Vec<usize>,
    pub permutation: Vec<usize>,
    pub labels: Option<Vec<usize>>,
    pub centroids: Option<Vec<Vec<f64>>>,
    pub inertia: Option<f64>,
}

impl From<&SelectionResult> for SelectionRecord {
    fn from(sel: &SelectionResult) -> Self {
        let centroids = sel.centroids.as_ref().map(|c| {
            (0..c.nrows())
                .map(|i| (0..c.ncols()).map(|j| c[(i, j)]).collect())
                .collect()
        });
        SelectionRecord {
            selected: sel.selected.clone(),
            permutation: sel.permutation.clone(),
            labels: sel.labels.clone(),
            centroids,
            inertia: sel.inertia,
        }
    }
}

fn require_input(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "{what} file not found: {}",
            path.display()
        )))
    }
}

fn require_artifact(path: &Path, producer: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "artifact not found: {} (run `bifid {producer}` first)",
            path.display()
        )))
    }
}

fn ensure_out_dir(cfg: &PipelineConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| {
        Error::Parameter(format!(
            "output directory {} is not writable: {e}",
            cfg.out_dir.display()
        ))
    })
}

/// Echo the resolved configuration next to the artifacts it produced.
fn write_config_echo(cfg: &PipelineConfig) -> Result<()> {
    let path = cfg.out_path(artifact::CONFIG_ECHO);
    let text = serde_json::to_string_pretty(cfg)
        .map_err(|e| Error::Numeric(format!("config serialization failed: {e}")))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
}

/// The data-space view of a CSV: the restricted columns if a restriction
/// is configured, the full rows otherwise.
pub(crate) fn data_view(ds: &Dataset, restriction: Option<&RestrictionSpec>) -> Result<Dataset> {
    let Some(spec) = restriction else {
        return Ok(ds.clone());
    };
    let mut names = Vec::with_capacity(spec.dim());
    for &i in spec.param_indices.iter().chain(spec.qoi_indices.iter()) {
        let name = ds.names().get(i).ok_or_else(|| {
            Error::Parameter(format!(
                "restriction column {i} out of range for {} components",
                ds.dim()
            ))
        })?;
        names.push(name.clone());
    }
    let rows: Vec<Vec<f64>> = (0..ds.n_points())
        .map(|i| {
            let row: Vec<f64> = (0..ds.dim()).map(|j| ds.points()[(i, j)]).collect();
            bifid_core::dataset::restrict(&row, &row, spec)
        })
        .collect::<Result<_>>()?;
    Dataset::from_rows(names, &rows, ds.fidelity())
}

/// The columns a solver needs to reproduce a sample: the parameter columns
/// under a restriction, the full rows otherwise.
fn param_view(ds: &Dataset, restriction: Option<&RestrictionSpec>) -> Result<Dataset> {
    let Some(spec) = restriction else {
        return Ok(ds.clone());
    };
    if spec.param_indices.is_empty() {
        return Ok(ds.clone());
    }
    let mut names = Vec::with_capacity(spec.param_indices.len());
    let mut cols = Vec::with_capacity(spec.param_indices.len());
    for &i in &spec.param_indices {
        let name = ds.names().get(i).ok_or_else(|| {
            Error::Parameter(format!(
                "restriction column {i} out of range for {} components",
                ds.dim()
            ))
        })?;
        names.push(name.clone());
        cols.push(i);
    }
    let rows: Vec<Vec<f64>> = (0..ds.n_points())
        .map(|i| cols.iter().map(|&j| ds.points()[(i, j)]).collect())
        .collect();
    Dataset::from_rows(names, &rows, ds.fidelity())
}

fn load_low_data(cfg: &PipelineConfig) -> Result<Dataset> {
    let low_path = cfg.low.as_ref().ok_or_else(|| {
        Error::Parameter("low-fidelity CSV path is required (--low or config)".into())
    })?;
    require_input(low_path, "input")?;
    let full = Dataset::load_csv(low_path, Fidelity::Low)?;
    data_view(&full, cfg.restriction_spec()?.as_ref())
}

fn load_scaled_low(cfg: &PipelineConfig) -> Result<Dataset> {
    let path = cfg.out_path(artifact::LOW_SCALED);
    require_artifact(&path, "graph")?;
    Dataset::load_with_sidecar(&path)
}

fn load_spectrum(cfg: &PipelineConfig) -> Result<Spectrum> {
    let values = cfg.out_path(artifact::EIGENVALUES);
    let functions = cfg.out_path(artifact::EIGENFUNCTIONS);
    require_artifact(&values, "graph")?;
    require_artifact(&functions, "graph")?;
    Spectrum::load(&values, &functions)
}

pub(crate) fn load_selection_record(cfg: &PipelineConfig) -> Result<SelectionRecord> {
    let path = cfg.out_path(artifact::SELECTION);
    require_artifact(&path, "select")?;
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        row: e.line(),
        msg: e.to_string(),
    })
}

fn resolve_tau(cfg: &PipelineConfig, spectrum: &Spectrum) -> Result<f64> {
    match cfg.tau {
        TauPolicy::Fixed(v) => Ok(v),
        TauPolicy::Rule(TauRule::Lambda2) => default_tau(spectrum),
    }
}

fn fusion_config(cfg: &PipelineConfig, k: usize, tau: f64, omega: f64) -> FusionConfig {
    let mut f = FusionConfig::new(k, tau, omega);
    f.grad_tol = cfg.grad_tol;
    f.max_iters = cfg.max_iters;
    f
}

/// Scale the low-fidelity cloud, build the weighted graph, and extract the
/// low end of the Laplacian spectrum.
pub fn cmd_graph(cfg: &PipelineConfig) -> Result<Vec<String>> {
    let low = load_low_data(cfg)?;
    ensure_out_dir(cfg)?;
    write_config_echo(cfg)?;
    let record = low.fit_scaling()?;
    let scaled = low.apply_scaling(&record)?;
    scaled.save_with_sidecar(&cfg.out_path(artifact::LOW_SCALED))?;
    let bundle =
        LaplacianBundle::from_points(&scaled, &cfg.kernel.to_spec(), cfg.p_exp, cfg.q_exp)?;
    let k = cfg.cutoff()?;
    let spectrum = lowest_eigenpairs(&bundle, k)?;
    spectrum.save(
        &cfg.out_path(artifact::EIGENVALUES),
        &cfg.out_path(artifact::EIGENFUNCTIONS),
    )?;
    let ev = spectrum.eigenvalues();
    Ok(vec![
        format!(
            "graph: {} points, {} components, {} modes",
            scaled.n_points(),
            scaled.dim(),
            spectrum.n_modes()
        ),
        format!(
            "spectrum: lambda_1 = {}, lambda_{} = {}",
            format_float(ev[0]),
            spectrum.n_modes(),
            format_float(ev[spectrum.n_modes() - 1])
        ),
    ])
}

/// Cluster the spectral embedding, pick the centroid-nearest points, and
/// emit the acquisition list.
pub fn cmd_select(cfg: &PipelineConfig) -> Result<Vec<String>> {
    let scaled = load_scaled_low(cfg)?;
    let spectrum = load_spectrum(cfg)?;
    let n = cfg
        .n_select
        .ok_or_else(|| Error::Parameter("n_select is required for selection".into()))?;
    if n == 0 {
        return Err(Error::Parameter("n_select must be at least 1".into()));
    }
    let sel = select_high_fidelity(&scaled, &spectrum, &KMeansConfig::new(n, cfg.kmeans_seed))?;
    write_config_echo(cfg)?;

    let record = SelectionRecord::from(&sel);
    let path = cfg.out_path(artifact::SELECTION);
    let text = serde_json::to_string_pretty(&record)
        .map_err(|e| Error::Numeric(format!("selection serialization failed: {e}")))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))?;
    if let Some(labels) = &sel.labels {
        save_labels(&cfg.out_path(artifact::SELECTION_LABELS), labels)?;
    }

    let low = load_low_data(cfg)?;
    low.permute(&sel.permutation)?
        .save_with_sidecar(&cfg.out_path(artifact::LOW_REINDEXED))?;

    let low_path = cfg.low.as_ref().expect("checked by load_low_data");
    let full = Dataset::load_csv(low_path, Fidelity::Low)?;
    let params = param_view(&full, cfg.restriction_spec()?.as_ref())?;
    params
        .take_rows(&sel.selected)?
        .save_csv(&cfg.out_path(artifact::ACQUIRE))?;

    let mut lines = vec![format!(
        "select: {} acquisition points out of {}",
        sel.selected.len(),
        scaled.n_points()
    )];
    lines.push(format!("selected indices: {:?}", sel.selected));
    if let Some(inertia) = sel.inertia {
        lines.push(format!("clustering inertia: {}", format_float(inertia)));
    }
    Ok(lines)
}

/// Shared setup for `fuse` and `lcurve`: everything up to a ready
/// optimization context.
struct FusionSetup {
    scaled_low: Dataset,
    ctx: FusionContext,
    tau: f64,
    k: usize,
}

fn fusion_setup(cfg: &PipelineConfig) -> Result<FusionSetup> {
    let scaled_low = load_scaled_low(cfg)?;
    let spectrum = load_spectrum(cfg)?;
    let selection = load_selection_record(cfg)?;
    let high_path = cfg.high.as_ref().ok_or_else(|| {
        Error::Parameter("high-fidelity CSV path is required (--high or config)".into())
    })?;
    require_input(high_path, "input")?;
    let high_full = Dataset::load_csv(high_path, Fidelity::High)?;
    let high_data = data_view(&high_full, cfg.restriction_spec()?.as_ref())?;
    if high_data.n_points() != selection.selected.len() {
        return Err(Error::Alignment(format!(
            "high-fidelity CSV has {} rows but the acquire list has {}",
            high_data.n_points(),
            selection.selected.len()
        )));
    }
    let record = scaled_low
        .scaling()
        .cloned()
        .ok_or_else(|| Error::State("scaled low-fidelity artifact lost its scaling".into()))?;
    let high_scaled = high_data.apply_scaling(&record)?;
    let k = cfg.cutoff()?;
    let ctx = FusionContext::new(&scaled_low, &high_scaled, &selection.selected, &spectrum, k)?;
    let tau = resolve_tau(cfg, &spectrum)?;
    Ok(FusionSetup {
        scaled_low,
        ctx,
        tau,
        k,
    })
}

/// Fit the transform (running the omega sweep first when configured) and
/// write the fused cloud in problem units.
pub fn cmd_fuse(cfg: &PipelineConfig) -> Result<Vec<String>> {
    let setup = fusion_setup(cfg)?;
    write_config_echo(cfg)?;
    let mut lines = Vec::new();
    let (omega, warm) = match cfg.omega {
        OmegaPolicy::Fixed(v) => (v, None),
        OmegaPolicy::Rule(_) => {
            let grid = log_grid(cfg.lcurve_min, cfg.lcurve_max, cfg.lcurve_points)?;
            let base = fusion_config(cfg, setup.k, setup.tau, grid[0]);
            let outcome = sweep(&setup.ctx, &base, &grid)?;
            outcome.curve.save_csv(&cfg.out_path(artifact::LCURVE))?;
            let curve = &outcome.curve;
            let interior =
                curve.elbow_index > 0 && curve.elbow_index + 1 < curve.omegas.len();
            lines.push(format!(
                "lcurve: omega* = {} (grid point {} of {}, interior: {})",
                format_float(curve.omega_star()),
                curve.elbow_index + 1,
                curve.omegas.len(),
                interior
            ));
            (curve.omega_star(), Some(outcome.alpha_star().clone()))
        }
    };
    let fcfg = fusion_config(cfg, setup.k, setup.tau, omega);
    let (alpha, breakdown, trace) = optimize(&setup.ctx, &fcfg, warm.as_ref())?;
    let model = FusionModel::new(&setup.ctx, &fcfg, alpha)?;
    model.save(
        &cfg.out_path(artifact::MODEL),
        &cfg.out_path(artifact::DISPLACEMENTS),
    )?;
    save_trace(&cfg.out_path(artifact::TRACE), &trace)?;
    let record = setup
        .scaled_low
        .scaling()
        .cloned()
        .expect("present since fusion_setup succeeded");
    let bi = transform(&setup.scaled_low, &model)?.inverse_scaling(&record)?;
    bi.save_with_sidecar(&cfg.out_path(artifact::BI))?;
    lines.push(format!(
        "fuse: {} iterations, tau = {}, omega = {}",
        trace.len(),
        format_float(setup.tau),
        format_float(omega)
    ));
    lines.push(format!(
        "loss: j_data = {}, j_reg = {}, j_total = {}",
        format_float(breakdown.j_data),
        format_float(breakdown.j_reg),
        format_float(breakdown.j_total)
    ));
    Ok(lines)
}

/// Sweep omega over the configured grid and report the elbow without
/// fitting a final model.
pub fn cmd_lcurve(cfg: &PipelineConfig) -> Result<Vec<String>> {
    let setup = fusion_setup(cfg)?;
    write_config_echo(cfg)?;
    let grid = log_grid(cfg.lcurve_min, cfg.lcurve_max, cfg.lcurve_points)?;
    let base = fusion_config(cfg, setup.k, setup.tau, grid[0]);
    let outcome = sweep(&setup.ctx, &base, &grid)?;
    let curve = &outcome.curve;
    curve.save_csv(&cfg.out_path(artifact::LCURVE))?;
    let interior = curve.elbow_index > 0 && curve.elbow_index + 1 < curve.omegas.len();
    let mut lines = vec![format!(
        "lcurve: {} grid points in [{}, {}]",
        curve.omegas.len(),
        format_float(curve.omegas[0]),
        format_float(*curve.omegas.last().expect("grid nonempty"))
    )];
    lines.push(format!(
        "omega* = {} (grid point {} of {}, interior: {})",
        format_float(curve.omega_star()),
        curve.elbow_index + 1,
        curve.omegas.len(),
        interior
    ));
    if curve.no_elbow {
        lines.push("no curvature maximum; omega* fell back to the middle of the grid".into());
    }
    Ok(lines)
}

/// Compare low- and bi-fidelity errors against per-point truth over the
/// non-selected points.
pub fn cmd_report(cfg: &PipelineConfig) -> Result<Vec<String>> {
    let table = build_report(cfg)?;
    write_config_echo(cfg)?;
    std::fs::write(cfg.out_path(artifact::REPORT_MD), table.to_markdown())
        .map_err(|e| Error::io(cfg.out_path(artifact::REPORT_MD), e))?;
    table.save_json(&cfg.out_path(artifact::REPORT_JSON))?;
    Ok(table.to_markdown().lines().map(String::from).collect())
}

/// Report construction shared with the demos, which also want the table
/// values in memory.
pub fn build_report(cfg: &PipelineConfig) -> Result<ComparisonTable> {
    let selection = load_selection_record(cfg)?;
    let truth_path = cfg.truth.as_ref().ok_or_else(|| {
        Error::Parameter("truth CSV path is required (--truth or config)".into())
    })?;
    require_input(truth_path, "input")?;
    let bi_path = cfg.out_path(artifact::BI);
    require_artifact(&bi_path, "fuse")?;

    let restriction = cfg.restriction_spec()?;
    let low = load_low_data(cfg)?;
    let truth_full = Dataset::load_csv(truth_path, Fidelity::High)?;
    let truth = data_view(&truth_full, restriction.as_ref())?;
    let bi = Dataset::load_csv(&bi_path, Fidelity::Bi)?;

    let n = low.n_points();
    let mut is_selected = vec![false; n];
    for &s in &selection.selected {
        if s < n {
            is_selected[s] = true;
        }
    }
    let validation: Vec<usize> = (0..n).filter(|&i| !is_selected[i]).collect();

    let low_report = relative_errors(&low, &truth, &validation)?;
    let bi_report = relative_errors(&bi, &truth, &validation)?;
    comparison_table(&low_report, &bi_report)
}

/// Centroid-vs-random selection study on a problem with per-point truth.
pub fn cmd_study(cfg: &PipelineConfig) -> Result<Vec<String>> {
    let low = load_low_data(cfg)?;
    let truth_path = cfg.truth.as_ref().ok_or_else(|| {
        Error::Parameter("truth CSV path is required (--truth or config)".into())
    })?;
    require_input(truth_path, "input")?;
    let truth_full = Dataset::load_csv(truth_path, Fidelity::High)?;
    let truth = data_view(&truth_full, cfg.restriction_spec()?.as_ref())?;
    let n = cfg
        .n_select
        .ok_or_else(|| Error::Parameter("n_select is required for the study".into()))?;
    let OmegaPolicy::Fixed(omega) = cfg.omega else {
        return Err(Error::Parameter(
            "the study needs a fixed omega; resolve the L-curve first".into(),
        ));
    };

    ensure_out_dir(cfg)?;
    write_config_echo(cfg)?;
    let record = low.fit_scaling()?;
    let scaled = low.apply_scaling(&record)?;
    let bundle =
        LaplacianBundle::from_points(&scaled, &cfg.kernel.to_spec(), cfg.p_exp, cfg.q_exp)?;
    let k = cfg.cutoff()?;
    let spectrum = lowest_eigenpairs(&bundle, k)?;
    let tau = resolve_tau(cfg, &spectrum)?;
    let fcfg = fusion_config(cfg, k, tau, omega);
    let study = StudyContext::new(&low, &truth, &spectrum, fcfg)?;
    let kmeans = KMeansConfig::new(n, cfg.kmeans_seed);
    let seeds: Vec<u64> = (0..cfg.study_trials)
        .map(|t| cfg.study_seed + t as u64)
        .collect();
    let report = selection_study(&study, &kmeans, &seeds)?;
    std::fs::write(cfg.out_path(artifact::STUDY_MD), report.to_markdown())
        .map_err(|e| Error::io(cfg.out_path(artifact::STUDY_MD), e))?;
    report.save_json(&cfg.out_path(artifact::STUDY_JSON))?;
    Ok(report.to_markdown().lines().map(String::from).collect())
}

/// Per-point eigenfunction values next to the problem-unit coordinates;
/// the data behind an eigenfunction scatter plot.
pub fn write_eigenfunction_points(
    path: &Path,
    points: &Dataset,
    spectrum: &Spectrum,
) -> Result<()> {
    if points.n_points() != spectrum.n_points() {
        return Err(Error::Dimension(format!(
            "dataset has {} points but spectrum covers {}",
            points.n_points(),
            spectrum.n_points()
        )));
    }
    let mut header: Vec<String> = points.names().to_vec();
    for m in 1..=spectrum.n_modes() {
        header.push(format!("mode_{m}"));
    }
    let mut out = header.join(",");
    out.push('\n');
    let phi = spectrum.eigenfunctions();
    for i in 0..points.n_points() {
        let mut row: Vec<String> = (0..points.dim())
            .map(|j| format_float(points.points()[(i, j)]))
            .collect();
        for m in 0..spectrum.n_modes() {
            row.push(format_float(phi[(i, m)]));
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Per-point influence weights next to the problem-unit coordinates; one
/// column per selected point. Rows sum to 1.
pub fn write_influence_points(path: &Path, points: &Dataset, model: &FusionModel) -> Result<()> {
    let psi = model.influence_all()?;
    if points.n_points() != psi.nrows() {
        return Err(Error::Dimension(format!(
            "dataset has {} points but the model covers {}",
            points.n_points(),
            psi.nrows()
        )));
    }
    let mut header: Vec<String> = points.names().to_vec();
    for j in 1..=psi.ncols() {
        header.push(format!("psi_{j}"));
    }
    let mut out = header.join(",");
    out.push('\n');
    for i in 0..points.n_points() {
        let mut row: Vec<String> = (0..points.dim())
            .map(|j| format_float(points.points()[(i, j)]))
            .collect();
        for j in 0..psi.ncols() {
            row.push(format_float(psi[(i, j)]));
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
