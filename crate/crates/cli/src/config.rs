//! Run configuration: a JSON file merged with command-line overrides.
//!
//! Every knob lives in [`PipelineConfig`]. A run resolves it from three
//! layers, later layers winning: built-in defaults, the `--config` JSON
//! file, then individual flags. The resolved value is echoed to
//! `config.json` in the output directory so a run can be reproduced from
//! its artifacts alone.

use std::path::{Path, PathBuf};

use bifid_core::dataset::RestrictionSpec;
use bifid_core::regtune::DEFAULT_GRID_POINTS;
use bifid_core::{Error, KernelSpec, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

/// Kernel choice in config form; converted to the graph module's spec at
/// build time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum KernelChoice {
    /// Per-point bandwidth from the k-th nearest neighbor distance.
    SelfTuned { rank: usize },
    /// One global bandwidth, in scaled coordinate units.
    Fixed { sigma: f64 },
}

impl KernelChoice {
    pub fn to_spec(&self) -> KernelSpec {
        match *self {
            KernelChoice::SelfTuned { rank } => KernelSpec::SelfTuned {
                neighbor_rank: rank,
            },
            KernelChoice::Fixed { sigma } => KernelSpec::Fixed { sigma },
        }
    }
}

/// How the regularization eigenvalue scale is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauPolicy {
    Fixed(f64),
    Rule(TauRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TauRule {
    /// Smallest eigenvalue above the zero tolerance.
    Lambda2,
}

/// How the regularization weight is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OmegaPolicy {
    Fixed(f64),
    Rule(OmegaRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OmegaRule {
    /// Sweep a log grid and take the L-curve elbow.
    Lcurve,
}

/// Column roles for datasets whose rows mix parameters and quantities of
/// interest. Indices refer to CSV columns; the data space keeps the listed
/// parameter columns followed by the listed QoI columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestrictionConfig {
    #[serde(default)]
    pub param_indices: Vec<usize>,
    #[serde(default)]
    pub qoi_indices: Vec<usize>,
}

/// Everything a pipeline run needs. Paths are interpreted relative to the
/// working directory; artifacts land in `out_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Low-fidelity CSV (problem units).
    pub low: Option<PathBuf>,
    /// High-fidelity CSV; for `fuse` its rows must align with the acquire
    /// list.
    pub high: Option<PathBuf>,
    /// Per-point truth CSV for `report` and `study`, aligned with `low`.
    pub truth: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub kernel: KernelChoice,
    pub p_exp: f64,
    pub q_exp: f64,
    /// Number of high-fidelity points to acquire.
    pub n_select: Option<usize>,
    /// Spectral cutoff K; defaults to three times `n_select`.
    pub k_cutoff: Option<usize>,
    pub tau: TauPolicy,
    pub omega: OmegaPolicy,
    pub lcurve_min: f64,
    pub lcurve_max: f64,
    pub lcurve_points: usize,
    pub kmeans_seed: u64,
    /// Seed for the random-selection baseline.
    pub random_seed: u64,
    pub study_trials: usize,
    /// First trial seed; trial t uses `study_seed + t`.
    pub study_seed: u64,
    pub grad_tol: f64,
    pub max_iters: usize,
    pub restriction: Option<RestrictionConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            low: None,
            high: None,
            truth: None,
            out_dir: PathBuf::from("out"),
            kernel: KernelChoice::SelfTuned { rank: 7 },
            p_exp: 0.5,
            q_exp: 0.5,
            n_select: None,
            k_cutoff: None,
            tau: TauPolicy::Rule(TauRule::Lambda2),
            omega: OmegaPolicy::Fixed(1e-6),
            lcurve_min: 1e-8,
            lcurve_max: 1e-2,
            lcurve_points: DEFAULT_GRID_POINTS,
            kmeans_seed: 0,
            random_seed: 0,
            study_trials: 50,
            study_seed: 1000,
            grad_tol: 1e-8,
            max_iters: 5000,
            restriction: None,
        }
    }
}

impl PipelineConfig {
    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Spectral cutoff: explicit `k_cutoff`, else three modes per selected
    /// point.
    pub fn cutoff(&self) -> Result<usize> {
        if let Some(k) = self.k_cutoff {
            return Ok(k);
        }
        self.n_select
            .map(bifid_core::fusion::default_cutoff)
            .ok_or_else(|| {
                Error::Parameter("set k_cutoff or n_select to size the spectrum".into())
            })
    }

    pub fn restriction_spec(&self) -> Result<Option<RestrictionSpec>> {
        match &self.restriction {
            None => Ok(None),
            Some(r) => Ok(Some(RestrictionSpec::new(
                r.param_indices.clone(),
                r.qoi_indices.clone(),
            )?)),
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.p_exp.is_finite() || !self.q_exp.is_finite() {
            return Err(Error::Parameter(format!(
                "normalization exponents must be finite, got p={} q={}",
                self.p_exp, self.q_exp
            )));
        }
        if !(self.lcurve_min > 0.0) || !(self.lcurve_max > self.lcurve_min) {
            return Err(Error::Parameter(format!(
                "L-curve range must satisfy 0 < min < max, got [{}, {}]",
                self.lcurve_min, self.lcurve_max
            )));
        }
        if self.lcurve_points < 3 {
            return Err(Error::Parameter(format!(
                "L-curve grid needs at least 3 points, got {}",
                self.lcurve_points
            )));
        }
        if !(self.grad_tol > 0.0) || !self.grad_tol.is_finite() {
            return Err(Error::Parameter(format!(
                "grad_tol must be positive and finite, got {}",
                self.grad_tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Parameter("max_iters must be at least 1".into()));
        }
        if let TauPolicy::Fixed(v) = self.tau {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!(
                    "fixed tau must be positive and finite, got {v}"
                )));
            }
        }
        if let OmegaPolicy::Fixed(v) = self.omega {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!(
                    "fixed omega must be nonnegative and finite, got {v}"
                )));
            }
        }
        self.restriction_spec()?;
        Ok(())
    }
}

/// Command-line overrides; every field is optional and, when present,
/// replaces the corresponding config value.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON config file; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Low-fidelity CSV.
    #[arg(long)]
    pub low: Option<PathBuf>,
    /// High-fidelity CSV (rows aligned to the acquire list for `fuse`).
    #[arg(long)]
    pub high: Option<PathBuf>,
    /// Per-point truth CSV for `report` and `study`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Artifact directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Self-tuned kernel: neighbor rank for the per-point bandwidth.
    #[arg(long, conflicts_with = "sigma")]
    pub kernel_rank: Option<usize>,
    /// Fixed kernel bandwidth in scaled coordinates.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Left degree-normalization exponent.
    #[arg(long)]
    pub p_exp: Option<f64>,
    /// Right degree-normalization exponent.
    #[arg(long)]
    pub q_exp: Option<f64>,
    /// Number of high-fidelity points to acquire.
    #[arg(long)]
    pub n_select: Option<usize>,
    /// Spectral cutoff K (default: 3 * n_select).
    #[arg(long)]
    pub k_cutoff: Option<usize>,
    /// Regularization eigenvalue scale: a number or "lambda2".
    #[arg(long)]
    pub tau: Option<String>,
    /// Regularization weight: a number or "lcurve".
    #[arg(long)]
    pub omega: Option<String>,
    /// Smallest omega in the L-curve grid.
    #[arg(long)]
    pub lcurve_min: Option<f64>,
    /// Largest omega in the L-curve grid.
    #[arg(long)]
    pub lcurve_max: Option<f64>,
    /// Number of L-curve grid points.
    #[arg(long)]
    pub lcurve_points: Option<usize>,
    /// Seed for the k-means selection step.
    #[arg(long)]
    pub kmeans_seed: Option<u64>,
    /// Seed for the random-selection baseline.
    #[arg(long)]
    pub random_seed: Option<u64>,
    /// Number of random trials in the selection study.
    #[arg(long)]
    pub study_trials: Option<usize>,
    /// First trial seed for the selection study.
    #[arg(long)]
    pub study_seed: Option<u64>,
    /// Optimizer gradient max-norm stopping tolerance.
    #[arg(long)]
    pub grad_tol: Option<f64>,
    /// Optimizer iteration cap.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Comma-separated CSV columns treated as parameters.
    #[arg(long, value_delimiter = ',')]
    pub param_cols: Option<Vec<usize>>,
    /// Comma-separated CSV columns treated as quantities of interest.
    #[arg(long, value_delimiter = ',')]
    pub qoi_cols: Option<Vec<usize>>,
}

fn parse_tau(s: &str) -> Result<TauPolicy> {
    if s == "lambda2" {
        return Ok(TauPolicy::Rule(TauRule::Lambda2));
    }
    s.parse::<f64>().map(TauPolicy::Fixed).map_err(|_| {
        Error::Parameter(format!("tau must be a number or \"lambda2\", got {s:?}"))
    })
}

fn parse_omega(s: &str) -> Result<OmegaPolicy> {
    if s == "lcurve" {
        return Ok(OmegaPolicy::Rule(OmegaRule::Lcurve));
    }
    s.parse::<f64>().map(OmegaPolicy::Fixed).map_err(|_| {
        Error::Parameter(format!("omega must be a number or \"lcurve\", got {s:?}"))
    })
}

fn load_config_file(path: &Path) -> Result<PipelineConfig> {
    if !path.is_file() {
        return Err(Error::Parameter(format!(
            "config file not found: {}",
            path.display()
        )));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        Error::Parameter(format!("{}: invalid config: {e}", path.display()))
    })
}

/// Validate the parallelism cap from the environment. The pipeline
/// currently runs single-threaded, so any positive value is already
/// honored; a malformed value is still a usage error.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var("BIFID_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::Parameter(format!(
                "BIFID_THREADS must be a positive integer, got {v:?}"
            ))),
        },
    }
}

/// Merge defaults, the optional config file, and flag overrides into the
/// final run configuration.
pub fn resolve(o: &Overrides) -> Result<PipelineConfig> {
    thread_cap()?;
    let mut cfg = match &o.config {
        Some(path) => load_config_file(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = &o.low {
        cfg.low = Some(v.clone());
    }
    if let Some(v) = &o.high {
        cfg.high = Some(v.clone());
    }
    if let Some(v) = &o.truth {
        cfg.truth = Some(v.clone());
    }
    if let Some(v) = &o.out_dir {
        cfg.out_dir = v.clone();
    }
    if let Some(rank) = o.kernel_rank {
        cfg.kernel = KernelChoice::SelfTuned { rank };
    }
    if let Some(sigma) = o.sigma {
        cfg.kernel = KernelChoice::Fixed { sigma };
    }
    if let Some(v) = o.p_exp {
        cfg.p_exp = v;
    }
    if let Some(v) = o.q_exp {
        cfg.q_exp = v;
    }
    if let Some(v) = o.n_select {
        cfg.n_select = Some(v);
    }
    if let Some(v) = o.k_cutoff {
        cfg.k_cutoff = Some(v);
    }
    if let Some(v) = &o.tau {
        cfg.tau = parse_tau(v)?;
    }
    if let Some(v) = &o.omega {
        cfg.omega = parse_omega(v)?;
    }
    if let Some(v) = o.lcurve_min {
        cfg.lcurve_min = v;
    }
    if let Some(v) = o.lcurve_max {
        cfg.lcurve_max = v;
    }
    if let Some(v) = o.lcurve_points {
        cfg.lcurve_points = v;
    }
    if let Some(v) = o.kmeans_seed {
        cfg.kmeans_seed = v;
    }
    if let Some(v) = o.random_seed {
        cfg.random_seed = v;
    }
    if let Some(v) = o.study_trials {
        cfg.study_trials = v;
    }
    if let Some(v) = o.study_seed {
        cfg.study_seed = v;
    }
    if let Some(v) = o.grad_tol {
        cfg.grad_tol = v;
    }
    if let Some(v) = o.max_iters {
        cfg.max_iters = v;
    }
    if o.param_cols.is_some() || o.qoi_cols.is_some() {
        let mut r = cfg.restriction.take().unwrap_or(RestrictionConfig {
            param_indices: Vec::new(),
            qoi_indices: Vec::new(),
        });
        if let Some(v) = &o.param_cols {
            r.param_indices = v.clone();
        }
        if let Some(v) = &o.qoi_cols {
            r.qoi_indices = v.clone();
        }
        cfg.restriction = Some(r);
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_without_flags() {
        let cfg = resolve(&Overrides::default()).unwrap();
        assert_eq!(cfg.kernel, KernelChoice::SelfTuned { rank: 7 });
        assert_eq!(cfg.tau, TauPolicy::Rule(TauRule::Lambda2));
        assert_eq!(cfg.omega, OmegaPolicy::Fixed(1e-6));
        assert_eq!(cfg.lcurve_points, DEFAULT_GRID_POINTS);
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(
            &path,
            r#"{"n_select": 5, "kmeans_seed": 9, "omega": 0.01}"#,
        )
        .unwrap();
        let o = Overrides {
            config: Some(path),
            n_select: Some(8),
            omega: Some("lcurve".into()),
            ..Overrides::default()
        };
        let cfg = resolve(&o).unwrap();
        assert_eq!(cfg.n_select, Some(8));
        assert_eq!(cfg.kmeans_seed, 9);
        assert_eq!(cfg.omega, OmegaPolicy::Rule(OmegaRule::Lcurve));
    }

    #[test]
    fn policy_strings_parse_and_reject() {
        assert_eq!(parse_tau("lambda2").unwrap(), TauPolicy::Rule(TauRule::Lambda2));
        assert_eq!(parse_tau("0.005").unwrap(), TauPolicy::Fixed(0.005));
        assert!(parse_tau("l2").is_err());
        assert_eq!(parse_omega("lcurve").unwrap(), OmegaPolicy::Rule(OmegaRule::Lcurve));
        assert_eq!(parse_omega("1e-6").unwrap(), OmegaPolicy::Fixed(1e-6));
        assert!(parse_omega("elbow").is_err());
    }

    #[test]
    fn kernel_choice_round_trips_through_json() {
        for k in [
            KernelChoice::SelfTuned { rank: 7 },
            KernelChoice::Fixed { sigma: 0.25 },
        ] {
            let text = serde_json::to_string(&k).unwrap();
            let back: KernelChoice = serde_json::from_str(&text).unwrap();
            assert_eq!(back, k);
        }
        let named: KernelChoice =
            serde_json::from_str(r#"{"type":"self-tuned","rank":3}"#).unwrap();
        assert_eq!(named, KernelChoice::SelfTuned { rank: 3 });
    }

    #[test]
    fn unknown_config_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"n_slect": 5}"#).unwrap();
        let o = Overrides {
            config: Some(path),
            ..Overrides::default()
        };
        let err = resolve(&o).unwrap_err();
        assert!(matches!(err, Error::Parameter(_)), "{err}");
    }

    #[test]
    fn invalid_ranges_are_parameter_errors() {
        let o = Overrides {
            lcurve_min: Some(1e-2),
            lcurve_max: Some(1e-8),
            ..Overrides::default()
        };
        assert!(matches!(resolve(&o), Err(Error::Parameter(_))));
        let o = Overrides {
            tau: Some("-1".into()),
            ..Overrides::default()
        };
        assert!(matches!(resolve(&o), Err(Error::Parameter(_))));
    }
}
