//! Error metrics and comparison reports.
//!
//! Errors are relative absolute differences in percent, normalized per
//! component by the mean absolute truth over the validation points, and
//! are always computed in problem units (after inverse scaling). The
//! selection study reruns the whole fusion pipeline over seeded random
//! selections to put the centroid selection's error in context.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{check_aligned, Dataset, ScalingRecord};
use crate::error::{Error, Result};
use crate::fusion::{optimize, transform, FusionConfig, FusionContext, FusionModel};
use crate::selection::{random_selection, select_high_fidelity, KMeansConfig};
use crate::spectral::Spectrum;

/// Per-point, per-component relative errors of one approximation against
/// the truth, with per-component means. A component whose mean absolute
/// truth is zero over the validation set has no defined normalization; its
/// mean is `None` and its error rows are zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub component_names: Vec<String>,
    pub validation_idx: Vec<usize>,
    /// Row r: errors of validation point `validation_idx[r]`, in percent.
    pub errors: Vec<Vec<f64>>,
    /// Per-component mean error in percent; `None` where undefined.
    pub means: Vec<Option<f64>>,
}

/// Relative absolute errors in percent at the validation points:
/// e_k^i = |approx_k^i − truth_k^i| / mean_val(|truth_k|) × 100.
pub fn relative_errors(
    approx: &Dataset,
    truth: &Dataset,
    validation_idx: &[usize],
) -> Result<ErrorReport> {
    check_aligned(approx, truth)?;
    if approx.scaling().is_some() || truth.scaling().is_some() {
        return Err(Error::State(
            "error metrics are defined in problem units; invert the scaling first".into(),
        ));
    }
    let n = approx.n_points();
    if validation_idx.is_empty() {
        return Err(Error::EmptyInput("validation set is empty".into()));
    }
    let mut seen = vec![false; n];
    for &i in validation_idx {
        if i >= n {
            return Err(Error::Parameter(format!(
                "validation index {i} out of range for {n} points"
            )));
        }
        if seen[i] {
            return Err(Error::Parameter(format!("validation index {i} repeats")));
        }
        seen[i] = true;
    }
    let dim = approx.dim();
    let n_val = validation_idx.len() as f64;
    let mut denoms = vec![0.0; dim];
    for &i in validation_idx {
        for k in 0..dim {
            denoms[k] += truth.points()[(i, k)].abs();
        }
    }
    for d in denoms.iter_mut() {
        *d /= n_val;
    }
    let mut errors = Vec::with_capacity(validation_idx.len());
    let mut sums = vec![0.0; dim];
    for &i in validation_idx {
        let mut row = Vec::with_capacity(dim);
        for k in 0..dim {
            let e = if denoms[k] == 0.0 {
                0.0
            } else {
                (approx.points()[(i, k)] - truth.points()[(i, k)]).abs() / denoms[k] * 100.0
            };
            sums[k] += e;
            row.push(e);
        }
        errors.push(row);
    }
    let means = (0..dim)
        .map(|k| {
            if denoms[k] == 0.0 {
                None
            } else {
                Some(sums[k] / n_val)
            }
        })
        .collect();
    Ok(ErrorReport {
        component_names: approx.names().to_vec(),
        validation_idx: validation_idx.to_vec(),
        errors,
        means,
    })
}

/// Improvement factor of one model over another; the mean-error ratio when
/// both means are positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Factor {
    Value(f64),
    Flag(String),
}

impl Factor {
    pub fn infinite() -> Self {
        Factor::Flag("inf".into())
    }

    pub fn undefined() -> Self {
        Factor::Flag("undef".into())
    }
}

impl std::fmt::Display for Factor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Factor::Value(v) => write!(f, "{v:?}"),
            Factor::Flag(s) => write!(f, "{s}"),
        }
    }
}

/// One component's line in the comparison: mean errors of both models and
/// their ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub low_pct: Option<f64>,
    pub bi_pct: Option<f64>,
    pub factor: Factor,
}

/// Side-by-side per-component comparison of a low-fidelity baseline
/// against the bi-fidelity result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    pub n_validation: usize,
}

/// Join two error reports over the same components and validation set:
/// factor = low mean / bi mean.
pub fn comparison_table(low: &ErrorReport, bi: &ErrorReport) -> Result<ComparisonTable> {
    if low.component_names != bi.component_names {
        return Err(Error::Comparison(format!(
            "component names differ: {:?} vs {:?}",
            low.component_names, bi.component_names
        )));
    }
    if low.validation_idx != bi.validation_idx {
        return Err(Error::Comparison(
            "reports cover different validation sets".into(),
        ));
    }
    let rows = low
        .component_names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let factor = match (low.means[k], bi.means[k]) {
                (Some(l), Some(b)) if b > 0.0 => Factor::Value(l / b),
                (Some(l), Some(b)) if b == 0.0 && l > 0.0 => Factor::infinite(),
                _ => Factor::undefined(),
            };
            ComparisonRow {
                name: name.clone(),
                low_pct: low.means[k],
                bi_pct: bi.means[k],
                factor,
            }
        })
        .collect();
    Ok(ComparisonTable {
        rows,
        n_validation: low.validation_idx.len(),
    })
}

fn opt_pct(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.4}"),
        None => "undef".into(),
    }
}

impl ComparisonTable {
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "| component | low-fidelity error (%) | bi-fidelity error (%) | factor |"
        );
        let _ = writeln!(out, "|---|---|---|---|");
        for r in &self.rows {
            let factor = match &r.factor {
                Factor::Value(v) => format!("{v:.4}"),
                Factor::Flag(s) => s.clone(),
            };
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} |",
                r.name,
                opt_pct(r.low_pct),
                opt_pct(r.bi_pct),
                factor
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "Validation points: {}", self.n_validation);
        out
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Numeric(format!("report serialization failed: {e}")))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Fixed inputs for repeated pipeline runs: the problem-unit datasets, the
/// scaled low cloud with its record, the spectrum built from it, and the
/// solver settings.
#[derive(Debug, Clone)]
pub struct StudyContext<'a> {
    low: &'a Dataset,
    high: &'a Dataset,
    spectrum: &'a Spectrum,
    scaled_low: Dataset,
    record: ScalingRecord,
    cfg: FusionConfig,
}

impl<'a> StudyContext<'a> {
    /// `low` and `high` are full problem-unit clouds (truth at every
    /// point); `spectrum` must come from `low` scaled by its own fitted
    /// bounds, which this constructor recomputes.
    pub fn new(
        low: &'a Dataset,
        high: &'a Dataset,
        spectrum: &'a Spectrum,
        cfg: FusionConfig,
    ) -> Result<Self> {
        check_aligned(low, high)?;
        if low.scaling().is_some() || high.scaling().is_some() {
            return Err(Error::State(
                "study inputs must be in problem units; scaling is handled internally".into(),
            ));
        }
        if spectrum.n_points() != low.n_points() {
            return Err(Error::Dimension(format!(
                "spectrum covers {} points, dataset has {}",
                spectrum.n_points(),
                low.n_points()
            )));
        }
        cfg.validate()?;
        let record = low.fit_scaling()?;
        let scaled_low = low.apply_scaling(&record)?;
        Ok(Self {
            low,
            high,
            spectrum,
            scaled_low,
            record,
            cfg,
        })
    }

    pub fn scaled_low(&self) -> &Dataset {
        &self.scaled_low
    }

    /// Run select-free fusion for a given index set and report bi-fidelity
    /// errors over the non-selected points.
    pub fn run_with_selection(&self, selected: &[usize]) -> Result<ErrorReport> {
        let high_sel = self
            .high
            .take_rows(selected)?
            .apply_scaling(&self.record)?;
        let ctx = FusionContext::new(
            &self.scaled_low,
            &high_sel,
            selected,
            self.spectrum,
            self.cfg.k_cutoff,
        )?;
        let (alpha, _, _) = optimize(&ctx, &self.cfg, None)?;
        let model = FusionModel::new(&ctx, &self.cfg, alpha)?;
        let bi = transform(&self.scaled_low, &model)?.inverse_scaling(&self.record)?;
        let validation = self.validation_for(selected);
        relative_errors(&bi, self.high, &validation)
    }

    /// All indices not in the selection, ascending.
    pub fn validation_for(&self, selected: &[usize]) -> Vec<usize> {
        let n = self.low.n_points();
        let mut is_sel = vec![false; n];
        for &s in selected {
            if s < n {
                is_sel[s] = true;
            }
        }
        (0..n).filter(|&i| !is_sel[i]).collect()
    }
}

/// Outcome of the random-vs-centroid selection study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub component_names: Vec<String>,
    /// Bi-fidelity mean error using the clustered centroid selection.
    pub centroid: Vec<Option<f64>>,
    /// Per-component mean over the successful random trials (M_m).
    pub random_mean: Vec<f64>,
    /// Per-component sample standard deviation over the successful random
    /// trials (Sigma_m).
    pub random_stddev: Vec<f64>,
    pub n_trials: usize,
    pub n_failures: usize,
    /// (seed, error message) per failed trial.
    pub failures: Vec<(u64, String)>,
}

impl StudyReport {
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "| component | centroid error (%) | random mean M (%) | random stddev S (%) |"
        );
        let _ = writeln!(out, "|---|---|---|---|");
        for (k, name) in self.component_names.iter().enumerate() {
            let _ = writeln!(
                out,
                "| {} | {} | {:.4} | {:.4} |",
                name,
                opt_pct(self.centroid[k]),
                self.random_mean[k],
                self.random_stddev[k]
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "Random trials: {} ({} failed)",
            self.n_trials, self.n_failures
        );
        out
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Numeric(format!("report serialization failed: {e}")))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Compare the clustered centroid selection against seeded uniform random
/// selections of the same size. One full pipeline run per seed; a failing
/// trial is recorded and the study continues. Needs at least 2 trials.
pub fn selection_study(
    study: &StudyContext,
    kmeans: &KMeansConfig,
    random_seeds: &[u64],
) -> Result<StudyReport> {
    if random_seeds.len() < 2 {
        return Err(Error::Parameter(format!(
            "selection study needs at least 2 random trials, got {}",
            random_seeds.len()
        )));
    }
    let centroid_sel = select_high_fidelity(study.scaled_low(), study.spectrum, kmeans)?;
    let centroid_report = study.run_with_selection(&centroid_sel.selected)?;
    let dim = centroid_report.component_names.len();

    let mut sums = vec![0.0; dim];
    let mut sq_sums = vec![0.0; dim];
    let mut successes = 0usize;
    let mut failures = Vec::new();
    for &seed in random_seeds {
        let outcome = random_selection(study.low, kmeans.n_clusters, seed)
            .and_then(|sel| study.run_with_selection(&sel.selected));
        match outcome {
            Ok(report) => {
                if report.means.iter().any(Option::is_none) {
                    failures.push((seed, "undefined component normalization".into()));
                    continue;
                }
                for k in 0..dim {
                    let m = report.means[k].expect("checked above");
                    sums[k] += m;
                    sq_sums[k] += m * m;
                }
                successes += 1;
            }
            Err(e) => failures.push((seed, e.to_string())),
        }
    }
    if successes == 0 {
        return Err(Error::Numeric("every random trial failed".into()));
    }
    let n = successes as f64;
    let random_mean: Vec<f64> = sums.iter().map(|s| s / n).collect();
    let random_stddev: Vec<f64> = (0..dim)
        .map(|k| {
            if successes < 2 {
                return 0.0;
            }
            // Sample variance; guard tiny negatives from cancellation.
            let var = (sq_sums[k] - sums[k] * sums[k] / n) / (n - 1.0);
            var.max(0.0).sqrt()
        })
        .collect();
    Ok(StudyReport {
        component_names: centroid_report.component_names.clone(),
        centroid: centroid_report.means,
        random_mean,
        random_stddev,
        n_trials: random_seeds.len(),
        n_failures: failures.len(),
        failures,
    })
}
