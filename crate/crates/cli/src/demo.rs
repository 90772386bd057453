//! Shipped end-to-end scenarios: generate a synthetic problem, run the
//! whole pipeline on it, and leave plot-ready CSVs plus a quality summary
//! in the output directory.

use std::path::PathBuf;

use bifid_core::dataset::{format_float, Dataset, Fidelity};
use bifid_core::fusion::FusionModel;
use bifid_core::spectral::fiedler;
use bifid_core::synthetic::{
    analytic_pair, canonical_clusters, ring_disk, save_labels, AnalyticPairSpec, CanonicalSpec,
    RingDiskLabel, RingDiskSpec,
};
use bifid_core::{Error, Result};
use clap::ValueEnum;
use serde::Serialize;

use crate::config::{
    thread_cap, KernelChoice, OmegaPolicy, PipelineConfig, RestrictionConfig, TauPolicy, TauRule,
};
use crate::pipeline::{
    self, artifact, build_report, cmd_fuse, cmd_graph, cmd_select, load_selection_record,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DemoName {
    /// Disk inside an annulus; the transform separates the two shapes.
    RingDisk,
    /// Three well-separated clusters with rigid per-cluster translations.
    Canonical,
    /// One-dimensional function pair restricted to (x, f(x)) data points.
    AnalyticPair,
}

impl DemoName {
    pub fn slug(&self) -> &'static str {
        match self {
            DemoName::RingDisk => "ring-disk",
            DemoName::Canonical => "canonical",
            DemoName::AnalyticPair => "analytic-pair",
        }
    }
}

/// Quality numbers for a finished demo run, also saved as
/// `summary.json`.
#[derive(Debug, Serialize)]
pub struct DemoSummary {
    pub name: String,
    pub n_points: usize,
    pub n_selected: usize,
    /// Mean distance from the low-fidelity points to truth, problem units.
    pub low_mean_dist: f64,
    /// Mean distance from the fused points to truth, problem units.
    pub bi_mean_dist: f64,
    /// `bi_mean_dist / low_mean_dist`; smaller is better.
    pub dist_ratio: f64,
    /// Fraction of points whose Fiedler sign matches their generator
    /// label; only scenarios with two-way labels report it.
    pub fiedler_agreement: Option<f64>,
}

pub const SUMMARY: &str = "summary.json";

fn scenario_config(name: DemoName, out_dir: PathBuf) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        low: Some(out_dir.join(artifact::LOW)),
        high: Some(out_dir.join(artifact::HIGH_SEL)),
        truth: Some(out_dir.join(artifact::HIGH)),
        out_dir,
        ..PipelineConfig::default()
    };
    match name {
        DemoName::RingDisk => {
            cfg.kernel = KernelChoice::Fixed { sigma: 0.25 };
            cfg.n_select = Some(7);
            cfg.k_cutoff = Some(20);
            cfg.omega = OmegaPolicy::Fixed(1e-6);
            cfg.kmeans_seed = 11;
        }
        DemoName::Canonical => {
            cfg.kernel = KernelChoice::SelfTuned { rank: 20 };
            cfg.p_exp = 0.0;
            cfg.q_exp = 0.0;
            cfg.n_select = Some(3);
            cfg.k_cutoff = Some(9);
            cfg.omega = OmegaPolicy::Fixed(1e-8);
            cfg.kmeans_seed = 2;
            cfg.grad_tol = 1e-12;
        }
        DemoName::AnalyticPair => {
            cfg.n_select = Some(10);
            cfg.k_cutoff = Some(30);
            cfg.omega = OmegaPolicy::Fixed(1e-6);
            cfg.kmeans_seed = 3;
            cfg.restriction = Some(RestrictionConfig {
                param_indices: vec![0],
                qoi_indices: vec![1],
            });
        }
    }
    debug_assert_eq!(cfg.tau, TauPolicy::Rule(TauRule::Lambda2));
    cfg
}

/// Write the generated problem to disk; returns two-way labels when the
/// scenario has them.
fn generate(name: DemoName, cfg: &PipelineConfig) -> Result<Option<Vec<bool>>> {
    let low_path = cfg.out_path(artifact::LOW);
    let high_path = cfg.out_path(artifact::HIGH);
    match name {
        DemoName::RingDisk => {
            let (low, high, labels) = ring_disk(&RingDiskSpec::standard(7))?;
            low.save_csv(&low_path)?;
            high.save_csv(&high_path)?;
            save_labels(&cfg.out_path(artifact::LABELS), &labels)?;
            Ok(Some(
                labels.iter().map(|l| *l == RingDiskLabel::Disk).collect(),
            ))
        }
        DemoName::Canonical => {
            let (low, high, labels) = canonical_clusters(&CanonicalSpec::standard_three(1))?;
            low.save_csv(&low_path)?;
            high.save_csv(&high_path)?;
            save_labels(&cfg.out_path(artifact::LABELS), &labels)?;
            Ok(None)
        }
        DemoName::AnalyticPair => {
            let (low, high) = analytic_pair(&AnalyticPairSpec::forrester(500, 17))?;
            low.save_csv(&low_path)?;
            high.save_csv(&high_path)?;
            Ok(None)
        }
    }
}

fn mean_distance(a: &Dataset, b: &Dataset) -> Result<f64> {
    if a.n_points() != b.n_points() || a.dim() != b.dim() {
        return Err(Error::Dimension(format!(
            "cannot compare {}x{} against {}x{} points",
            a.n_points(),
            a.dim(),
            b.n_points(),
            b.dim()
        )));
    }
    if a.n_points() == 0 {
        return Err(Error::EmptyInput("no points to compare".into()));
    }
    let total: f64 = (0..a.n_points())
        .map(|i| {
            (0..a.dim())
                .map(|j| (a.points()[(i, j)] - b.points()[(i, j)]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / a.n_points() as f64)
}

/// Fraction of points whose Fiedler-vector sign matches the two-way
/// generator label, taking the better of the two sign pairings.
fn fiedler_agreement(cfg: &PipelineConfig, labels: &[bool]) -> Result<f64> {
    let spectrum = bifid_core::spectral::Spectrum::load(
        &cfg.out_path(artifact::EIGENVALUES),
        &cfg.out_path(artifact::EIGENFUNCTIONS),
    )?;
    let (_, v) = fiedler(&spectrum)?;
    if v.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} Fiedler entries for {} labels",
            v.len(),
            labels.len()
        )));
    }
    let matches = v
        .iter()
        .zip(labels)
        .filter(|(x, &is_disk)| (**x >= 0.0) == is_disk)
        .count();
    Ok(matches.max(labels.len() - matches) as f64 / labels.len() as f64)
}

/// Per-point eigenfunction and influence values next to the problem-unit
/// coordinates, for scatter plots colored by mode or by selected point.
fn write_plot_csvs(cfg: &PipelineConfig) -> Result<()> {
    let restriction = cfg.restriction_spec()?;
    let low_path = cfg.low.as_ref().expect("demo config sets low");
    let full = Dataset::load_csv(low_path, Fidelity::Low)?;
    let low = pipeline::data_view(&full, restriction.as_ref())?;
    let spectrum = bifid_core::spectral::Spectrum::load(
        &cfg.out_path(artifact::EIGENVALUES),
        &cfg.out_path(artifact::EIGENFUNCTIONS),
    )?;
    pipeline::write_eigenfunction_points(
        &cfg.out_path(artifact::EIGENFUNCTIONS_POINTS),
        &low,
        &spectrum,
    )?;
    let model = FusionModel::load(
        &cfg.out_path(artifact::MODEL),
        &cfg.out_path(artifact::DISPLACEMENTS),
        &spectrum,
    )?;
    pipeline::write_influence_points(&cfg.out_path(artifact::INFLUENCE_POINTS), &low, &model)
}

/// Run one shipped scenario end to end into `out_dir` (default:
/// `demo-<name>`), returning the lines to print.
pub fn run_demo(name: DemoName, out_dir: Option<PathBuf>) -> Result<Vec<String>> {
    thread_cap()?;
    let out_dir = out_dir.unwrap_or_else(|| PathBuf::from(format!("demo-{}", name.slug())));
    let cfg = scenario_config(name, out_dir);
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| {
        Error::Parameter(format!(
            "output directory {} is not writable: {e}",
            cfg.out_dir.display()
        ))
    })?;

    let mut lines = vec![format!("demo {}: writing to {}", name.slug(), cfg.out_dir.display())];
    let labels = generate(name, &cfg)?;
    lines.extend(cmd_graph(&cfg)?);
    lines.extend(cmd_select(&cfg)?);

    // Acquisition stand-in: the generator's truth at the selected points.
    let selection = load_selection_record(&cfg)?;
    let truth = Dataset::load_csv(&cfg.out_path(artifact::HIGH), Fidelity::High)?;
    truth
        .take_rows(&selection.selected)?
        .save_csv(&cfg.out_path(artifact::HIGH_SEL))?;

    lines.extend(cmd_fuse(&cfg)?);
    let table = build_report(&cfg)?;
    std::fs::write(cfg.out_path(artifact::REPORT_MD), table.to_markdown())
        .map_err(|e| Error::io(cfg.out_path(artifact::REPORT_MD), e))?;
    table.save_json(&cfg.out_path(artifact::REPORT_JSON))?;
    lines.extend(table.to_markdown().lines().map(String::from));

    write_plot_csvs(&cfg)?;

    let summary = summarize(name, &cfg, labels.as_deref(), selection.selected.len())?;
    let path = cfg.out_path(SUMMARY);
    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Numeric(format!("summary serialization failed: {e}")))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))?;

    lines.push(format!(
        "distances to truth: low {} -> bi {} (ratio {})",
        format_float(summary.low_mean_dist),
        format_float(summary.bi_mean_dist),
        format_float(summary.dist_ratio)
    ));
    if let Some(a) = summary.fiedler_agreement {
        lines.push(format!("Fiedler label agreement: {}", format_float(a)));
    }
    Ok(lines)
}

fn summarize(
    name: DemoName,
    cfg: &PipelineConfig,
    labels: Option<&[bool]>,
    n_selected: usize,
) -> Result<DemoSummary> {
    let restriction = cfg.restriction_spec()?;
    let low_full = Dataset::load_csv(&cfg.out_path(artifact::LOW), Fidelity::Low)?;
    let truth_full = Dataset::load_csv(&cfg.out_path(artifact::HIGH), Fidelity::High)?;
    let low = pipeline::data_view(&low_full, restriction.as_ref())?;
    let truth = pipeline::data_view(&truth_full, restriction.as_ref())?;
    let bi = Dataset::load_csv(&cfg.out_path(artifact::BI), Fidelity::Bi)?;
    let low_mean_dist = mean_distance(&low, &truth)?;
    let bi_mean_dist = mean_distance(&bi, &truth)?;
    let fiedler_agreement = match labels {
        Some(l) => Some(fiedler_agreement(cfg, l)?),
        None => None,
    };
    Ok(DemoSummary {
        name: name.slug().into(),
        n_points: low.n_points(),
        n_selected,
        low_mean_dist,
        bi_mean_dist,
        dist_ratio: bi_mean_dist / low_mean_dist,
        fiedler_agreement,
    })
}
