//! Datasets: named point clouds with fidelity tags, component scaling, and
//! reorderings.
//!
//! A dataset is an `n_points x dim` matrix of finite coordinates plus one
//! name per component. Fidelity records which stage of the pipeline the
//! points belong to. Scaling maps every component into `[-1, 1]` so kernel
//! bandwidths mean the same thing across components with different units;
//! the record is kept on the dataset so the map can be undone exactly once.
//! The permutation field tracks how the current row order relates to the
//! order the dataset was created with, so reordered artifacts stay
//! traceable to their source rows.
//!
//! On disk a dataset is a CSV (header row, `.` decimal, UTF-8, LF) whose
//! float formatting is shortest-round-trip, so save followed by load
//! reproduces every coordinate bit for bit. An optional JSON sidecar
//! carries scaling, permutation, and fidelity.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which model produced the points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    /// Cheap model, available everywhere.
    Low,
    /// Expensive model, available at few points.
    High,
    /// Fused output: low-fidelity points moved toward the high-fidelity
    /// model.
    Bi,
}

impl fmt::Display for Fidelity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Fidelity::Low => "low",
            Fidelity::High => "high",
            Fidelity::Bi => "bi",
        };
        f.write_str(s)
    }
}

/// Inclusive range one component occupied before scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentBounds {
    pub lo: f64,
    pub hi: f64,
}

impl ComponentBounds {
    fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Map `x` from `[lo, hi]` onto `[-1, 1]`; constant components map to 0.
    fn forward(&self, x: f64) -> f64 {
        let w = self.width();
        if w == 0.0 {
            0.0
        } else {
            2.0 * (x - self.lo) / w - 1.0
        }
    }

    /// Inverse of [`forward`]; constant components map back to `lo`.
    fn backward(&self, y: f64) -> f64 {
        let w = self.width();
        if w == 0.0 {
            self.lo
        } else {
            self.lo + 0.5 * (y + 1.0) * w
        }
    }
}

/// Per-component affine map onto `[-1, 1]`, fitted from one dataset and
/// reusable on any dataset with the same components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScalingRecord {
    pub bounds: Vec<ComponentBounds>,
}

impl ScalingRecord {
    pub fn dim(&self) -> usize {
        self.bounds.len()
    }
}

/// Picks which parameter and quantity-of-interest components form a data
/// point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestrictionSpec {
    pub param_indices: Vec<usize>,
    pub qoi_indices: Vec<usize>,
}

impl RestrictionSpec {
    /// Validates index uniqueness and that at least two components survive,
    /// so the restricted points span a genuine data space.
    pub fn new(param_indices: Vec<usize>, qoi_indices: Vec<usize>) -> Result<Self> {
        for (label, idx) in [("param", &param_indices), ("qoi", &qoi_indices)] {
            let mut seen = idx.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != idx.len() {
                return Err(Error::Parameter(format!(
                    "restriction {label} indices contain duplicates: {idx:?}"
                )));
            }
        }
        if param_indices.len() + qoi_indices.len() < 2 {
            return Err(Error::Parameter(
                "restriction must keep at least two components".into(),
            ));
        }
        Ok(Self {
            param_indices,
            qoi_indices,
        })
    }

    pub fn dim(&self) -> usize {
        self.param_indices.len() + self.qoi_indices.len()
    }
}

/// Assemble one data-space point from a parameter sample and its
/// quantities of interest, keeping the components the spec selects
/// (parameters first, then QoIs, each in spec order).
pub fn restrict(params: &[f64], qois: &[f64], spec: &RestrictionSpec) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(spec.dim());
    for &i in &spec.param_indices {
        let v = params.get(i).ok_or_else(|| {
            Error::Parameter(format!(
                "restriction param index {i} out of range for sample of length {}",
                params.len()
            ))
        })?;
        out.push(*v);
    }
    for &i in &spec.qoi_indices {
        let v = qois.get(i).ok_or_else(|| {
            Error::Parameter(format!(
                "restriction qoi index {i} out of range for vector of length {}",
                qois.len()
            ))
        })?;
        out.push(*v);
    }
    Ok(out)
}

/// Named point cloud with fidelity tag, optional scaling record, and row
/// provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    points: DMatrix<f64>,
    fidelity: Fidelity,
    scaling: Option<ScalingRecord>,
    permutation: Vec<usize>,
}

/// Sidecar schema: everything about a dataset the CSV itself cannot carry.
#[derive(Serialize, Deserialize)]
struct Sidecar {
    scaling: Option<Vec<ComponentBounds>>,
    permutation: Vec<usize>,
    fidelity: Fidelity,
}

fn validate_name(name: &str) -> Result<()> {
    if name.is_empty() {
        return Err(Error::Parameter("component name is empty".into()));
    }
    if name.contains(',') || name.contains('\n') || name.contains('\r') {
        return Err(Error::Parameter(format!(
            "component name {name:?} contains a separator character"
        )));
    }
    Ok(())
}

impl Dataset {
    /// Wrap a points matrix (rows are points). All coordinates must be
    /// finite and there must be one name per component.
    pub fn new(names: Vec<String>, points: DMatrix<f64>, fidelity: Fidelity) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::EmptyInput("dataset needs at least one component".into()));
        }
        if names.len() != points.ncols() {
            return Err(Error::Dimension(format!(
                "{} names for {} columns",
                names.len(),
                points.ncols()
            )));
        }
        for name in &names {
            validate_name(name)?;
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("dataset contains non-finite coordinates".into()));
        }
        let n = points.nrows();
        Ok(Self {
            names,
            points,
            fidelity,
            scaling: None,
            permutation: (0..n).collect(),
        })
    }

    /// Build from row slices; every row must have the same length.
    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>], fidelity: Fidelity) -> Result<Self> {
        let dim = names.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::Dimension(format!(
                    "row {i} has {} components, expected {dim}",
                    row.len()
                )));
            }
        }
        let points = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
        Self::new(names, points, fidelity)
    }

    pub fn n_points(&self) -> usize {
        self.points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn fidelity(&self) -> Fidelity {
        self.fidelity
    }

    pub fn with_fidelity(mut self, fidelity: Fidelity) -> Self {
        self.fidelity = fidelity;
        self
    }

    pub fn scaling(&self) -> Option<&ScalingRecord> {
        self.scaling.as_ref()
    }

    /// Row order of this dataset relative to its original creation order:
    /// row `i` here is original row `permutation[i]`.
    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn point(&self, i: usize) -> DVector<f64> {
        self.points.row(i).transpose()
    }

    /// Swap in new coordinates of the same shape, keeping names, scaling
    /// record, and provenance. For stages whose output rows correspond
    /// one-to-one to the input rows.
    pub(crate) fn with_same_provenance(
        &self,
        points: DMatrix<f64>,
        fidelity: Fidelity,
    ) -> Result<Dataset> {
        if points.shape() != self.points.shape() {
            return Err(Error::Dimension(format!(
                "replacement points are {}x{}, dataset is {}x{}",
                points.nrows(),
                points.ncols(),
                self.points.nrows(),
                self.points.ncols()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("dataset contains non-finite coordinates".into()));
        }
        Ok(Dataset {
            names: self.names.clone(),
            points,
            fidelity: self.fidelity,
            scaling: self.scaling.clone(),
            permutation: self.permutation.clone(),
        }
        .with_fidelity(fidelity))
    }

    /// Per-component min/max over all points.
    pub fn fit_scaling(&self) -> Result<ScalingRecord> {
        if self.n_points() == 0 {
            return Err(Error::EmptyInput("cannot fit scaling on an empty dataset".into()));
        }
        let bounds = (0..self.dim())
            .map(|j| {
                let col = self.points.column(j);
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                ComponentBounds { lo, hi }
            })
            .collect();
        Ok(ScalingRecord { bounds })
    }

    /// Map every component onto `[-1, 1]` using `record`, attaching the
    /// record so the map can be undone. Constant components map to 0.
    pub fn apply_scaling(&self, record: &ScalingRecord) -> Result<Dataset> {
        if record.dim() != self.dim() {
            return Err(Error::Dimension(format!(
                "scaling record covers {} components, dataset has {}",
                record.dim(),
                self.dim()
            )));
        }
        if self.scaling.is_some() {
            return Err(Error::State("dataset is already scaled".into()));
        }
        let mut out = self.clone();
        for j in 0..self.dim() {
            let b = record.bounds[j];
            for i in 0..self.n_points() {
                out.points[(i, j)] = b.forward(self.points[(i, j)]);
            }
        }
        out.scaling = Some(record.clone());
        Ok(out)
    }

    /// Undo [`apply_scaling`]. The supplied record must be the one attached
    /// to the dataset; constant components return to their recorded `lo`.
    pub fn inverse_scaling(&self, record: &ScalingRecord) -> Result<Dataset> {
        match &self.scaling {
            None => return Err(Error::State("dataset carries no scaling to invert".into())),
            Some(attached) if attached != record => {
                return Err(Error::State(
                    "scaling record does not match the one attached to the dataset".into(),
                ))
            }
            Some(_) => {}
        }
        let mut out = self.clone();
        for j in 0..self.dim() {
            let b = record.bounds[j];
            for i in 0..self.n_points() {
                out.points[(i, j)] = b.backward(self.points[(i, j)]);
            }
        }
        out.scaling = None;
        Ok(out)
    }

    /// Reorder rows by gathering: row `i` of the result is row `perm[i]` of
    /// `self`. The provenance field composes, so permuting twice equals one
    /// permute by the composed map.
    pub fn permute(&self, perm: &[usize]) -> Result<Dataset> {
        let n = self.n_points();
        if perm.len() != n {
            return Err(Error::Permutation(format!(
                "permutation has length {}, dataset has {n} rows",
                perm.len()
            )));
        }
        let mut seen = vec![false; n];
        for &p in perm {
            if p >= n {
                return Err(Error::Permutation(format!("index {p} out of range for {n} rows")));
            }
            if seen[p] {
                return Err(Error::Permutation(format!("index {p} appears more than once")));
            }
            seen[p] = true;
        }
        let points = DMatrix::from_fn(n, self.dim(), |i, j| self.points[(perm[i], j)]);
        let permutation = perm.iter().map(|&i| self.permutation[i]).collect();
        Ok(Dataset {
            names: self.names.clone(),
            points,
            fidelity: self.fidelity,
            scaling: self.scaling.clone(),
            permutation,
        })
    }

    /// Extract the given rows (in the given order) as a new dataset. The
    /// result's provenance keeps pointing at this dataset's original rows.
    pub fn take_rows(&self, rows: &[usize]) -> Result<Dataset> {
        for &r in rows {
            if r >= self.n_points() {
                return Err(Error::Parameter(format!(
                    "row index {r} out of range for {} rows",
                    self.n_points()
                )));
            }
        }
        let points = DMatrix::from_fn(rows.len(), self.dim(), |i, j| self.points[(rows[i], j)]);
        let permutation = rows.iter().map(|&i| self.permutation[i]).collect();
        Ok(Dataset {
            names: self.names.clone(),
            points,
            fidelity: self.fidelity,
            scaling: self.scaling.clone(),
            permutation,
        })
    }

    /// Write the points as CSV: header row of names, shortest-round-trip
    /// floats, LF line endings, trailing newline.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        text.push_str(&self.names.join(","));
        text.push('\n');
        for i in 0..self.n_points() {
            for j in 0..self.dim() {
                if j > 0 {
                    text.push(',');
                }
                text.push_str(&format_float(self.points[(i, j)]));
            }
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Read a CSV written by [`save_csv`] (or any conforming file). Errors
    /// name the offending 1-based line.
    pub fn load_csv(path: &Path, fidelity: Fidelity) -> Result<Dataset> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |row: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            row,
            msg,
        };
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty file: missing header row".into()))?;
        let names: Vec<String> = header.split(',').map(|s| s.to_string()).collect();
        for name in &names {
            validate_name(name).map_err(|e| parse_err(1, e.to_string()))?;
        }
        let dim = names.len();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (k, line) in lines.enumerate() {
            let lineno = k + 2;
            if line.is_empty() {
                return Err(parse_err(lineno, "blank line".into()));
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim {
                return Err(parse_err(
                    lineno,
                    format!("expected {dim} fields, found {}", fields.len()),
                ));
            }
            let mut row = Vec::with_capacity(dim);
            for field in fields {
                let v: f64 = field
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("not a number: {field:?}")))?;
                if !v.is_finite() {
                    return Err(parse_err(lineno, format!("non-finite value: {field:?}")));
                }
                row.push(v);
            }
            rows.push(row);
        }
        Dataset::from_rows(names, &rows, fidelity)
    }

    /// Save the CSV plus a JSON sidecar (same stem, `.json` extension)
    /// carrying scaling, permutation, and fidelity.
    pub fn save_with_sidecar(&self, csv_path: &Path) -> Result<()> {
        self.save_csv(csv_path)?;
        let side = Sidecar {
            scaling: self.scaling.as_ref().map(|s| s.bounds.clone()),
            permutation: self.permutation.clone(),
            fidelity: self.fidelity,
        };
        let json = serde_json::to_string_pretty(&side)
            .map_err(|e| Error::Numeric(format!("sidecar serialization failed: {e}")))?;
        let path = sidecar_path(csv_path);
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(path, e))
    }

    /// Load a CSV plus its sidecar, restoring scaling, permutation, and
    /// fidelity.
    pub fn load_with_sidecar(csv_path: &Path) -> Result<Dataset> {
        let side_path = sidecar_path(csv_path);
        let text = std::fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
        let side: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: side_path.clone(),
            row: e.line(),
            msg: e.to_string(),
        })?;
        let mut ds = Dataset::load_csv(csv_path, side.fidelity)?;
        if side.permutation.len() != ds.n_points() {
            return Err(Error::Permutation(format!(
                "sidecar permutation has length {}, dataset has {} rows",
                side.permutation.len(),
                ds.n_points()
            )));
        }
        if let Some(bounds) = side.scaling {
            if bounds.len() != ds.dim() {
                return Err(Error::Dimension(format!(
                    "sidecar scaling covers {} components, dataset has {}",
                    bounds.len(),
                    ds.dim()
                )));
            }
            ds.scaling = Some(ScalingRecord { bounds });
        }
        ds.permutation = side.permutation;
        Ok(ds)
    }
}

/// Verify two datasets describe the same components and the same number of
/// rows, so row `i` of one can be matched with row `i` of the other.
pub fn check_aligned(a: &Dataset, b: &Dataset) -> Result<()> {
    if a.names() != b.names() {
        return Err(Error::Alignment(format!(
            "component names differ: {:?} vs {:?}",
            a.names(),
            b.names()
        )));
    }
    if a.n_points() != b.n_points() {
        return Err(Error::Alignment(format!(
            "row counts differ: {} vs {}",
            a.n_points(),
            b.n_points()
        )));
    }
    Ok(())
}

/// Shortest decimal string that parses back to exactly this value.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ds(rows: &[Vec<f64>]) -> Dataset {
        let names = (0..rows[0].len()).map(|j| format!("c{j}")).collect();
        Dataset::from_rows(names, rows, Fidelity::Low).unwrap()
    }

    #[test]
    fn restrict_picks_selected_components() {
        let spec = RestrictionSpec::new(vec![0], vec![0, 2]).unwrap();
        let point = restrict(&[10.0, 11.0], &[20.0, 21.0, 22.0], &spec).unwrap();
        assert_eq!(point, vec![10.0, 20.0, 22.0]);
    }

    #[test]
    fn restrict_rejects_duplicates_and_tiny_spaces() {
        assert!(matches!(
            RestrictionSpec::new(vec![0, 0], vec![1]),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            RestrictionSpec::new(vec![], vec![0]),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn restrict_rejects_out_of_range() {
        let spec = RestrictionSpec::new(vec![3], vec![0]).unwrap();
        assert!(matches!(
            restrict(&[1.0], &[2.0], &spec),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn scaling_maps_extremes_and_midpoint() {
        let d = ds(&[vec![2.0, -1.0], vec![4.0, 3.0], vec![3.0, 1.0]]);
        let rec = d.fit_scaling().unwrap();
        assert_eq!(rec.bounds[0], ComponentBounds { lo: 2.0, hi: 4.0 });
        assert_eq!(rec.bounds[1], ComponentBounds { lo: -1.0, hi: 3.0 });
        let s = d.apply_scaling(&rec).unwrap();
        assert_eq!(s.points()[(0, 0)], -1.0);
        assert_eq!(s.points()[(1, 0)], 1.0);
        assert_eq!(s.points()[(2, 0)], 0.0);
        assert_eq!(s.points()[(2, 1)], 0.0);
    }

    #[test]
    fn degenerate_component_maps_to_zero_and_back_to_lo() {
        let d = ds(&[vec![5.0, 1.0], vec![5.0, 2.0]]);
        let rec = d.fit_scaling().unwrap();
        let s = d.apply_scaling(&rec).unwrap();
        assert_eq!(s.points()[(0, 0)], 0.0);
        assert_eq!(s.points()[(1, 0)], 0.0);
        let back = s.inverse_scaling(&rec).unwrap();
        assert_eq!(back.points()[(0, 0)], 5.0);
        assert_eq!(back.points()[(1, 0)], 5.0);
        assert!(back.scaling().is_none());
    }

    #[test]
    fn scaling_errors() {
        let d = ds(&[vec![1.0], vec![2.0]]);
        let rec = d.fit_scaling().unwrap();
        let s = d.apply_scaling(&rec).unwrap();
        assert!(matches!(s.apply_scaling(&rec), Err(Error::State(_))));
        assert!(matches!(d.inverse_scaling(&rec), Err(Error::State(_))));
        let other = ScalingRecord {
            bounds: vec![ComponentBounds { lo: 0.0, hi: 9.0 }],
        };
        assert!(matches!(s.inverse_scaling(&other), Err(Error::State(_))));
        let wide = ScalingRecord {
            bounds: vec![ComponentBounds { lo: 0.0, hi: 1.0 }; 3],
        };
        assert!(matches!(d.apply_scaling(&wide), Err(Error::Dimension(_))));
        let empty = Dataset::from_rows(vec!["x".into()], &[], Fidelity::Low).unwrap();
        assert!(matches!(empty.fit_scaling(), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn permute_gathers_rows() {
        let d = ds(&[vec![0.0], vec![1.0], vec![2.0]]);
        let p = d.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.points().column(0).as_slice(), &[2.0, 0.0, 1.0]);
        assert_eq!(p.permutation(), &[2, 0, 1]);
    }

    #[test]
    fn permute_rejects_non_permutations() {
        let d = ds(&[vec![0.0], vec![1.0]]);
        assert!(matches!(d.permute(&[0]), Err(Error::Permutation(_))));
        assert!(matches!(d.permute(&[0, 0]), Err(Error::Permutation(_))));
        assert!(matches!(d.permute(&[0, 2]), Err(Error::Permutation(_))));
    }

    #[test]
    fn take_rows_tracks_provenance() {
        let d = ds(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]);
        let shuffled = d.permute(&[3, 2, 1, 0]).unwrap();
        let sub = shuffled.take_rows(&[1, 3]).unwrap();
        assert_eq!(sub.points().column(0).as_slice(), &[2.0, 0.0]);
        assert_eq!(sub.permutation(), &[2, 0]);
        assert!(matches!(shuffled.take_rows(&[9]), Err(Error::Parameter(_))));
    }

    #[test]
    fn csv_round_trip_is_bitwise() {
        let tricky = vec![
            vec![0.1, 1e-300],
            vec![1.0 / 3.0, -3.5e-7],
            vec![123456789000000.0, f64::MIN_POSITIVE],
            vec![-0.0, 9.999999999999999e22],
        ];
        let d = ds(&tricky);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("points.csv");
        d.save_csv(&path).unwrap();
        let back = Dataset::load_csv(&path, Fidelity::Low).unwrap();
        assert_eq!(back.names(), d.names());
        for i in 0..d.n_points() {
            for j in 0..d.dim() {
                assert_eq!(
                    back.points()[(i, j)].to_bits(),
                    d.points()[(i, j)].to_bits(),
                    "row {i} col {j}"
                );
            }
        }
    }

    #[test]
    fn csv_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "x,y\n1.0,2.0\n3.0\n").unwrap();
        match Dataset::load_csv(&path, Fidelity::Low) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        std::fs::write(&path, "x\nnope\n").unwrap();
        match Dataset::load_csv(&path, Fidelity::Low) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        std::fs::write(&path, "x\ninf\n").unwrap();
        assert!(matches!(
            Dataset::load_csv(&path, Fidelity::Low),
            Err(Error::Parse { .. })
        ));
        std::fs::write(&path, "").unwrap();
        match Dataset::load_csv(&path, Fidelity::Low) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn sidecar_round_trip() {
        let d = ds(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let rec = d.fit_scaling().unwrap();
        let scaled = d
            .apply_scaling(&rec)
            .unwrap()
            .permute(&[2, 0, 1])
            .unwrap()
            .with_fidelity(Fidelity::Bi);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scaled.csv");
        scaled.save_with_sidecar(&path).unwrap();
        let back = Dataset::load_with_sidecar(&path).unwrap();
        assert_eq!(back, scaled);
        assert_eq!(back.fidelity(), Fidelity::Bi);
        assert_eq!(back.permutation(), &[2, 0, 1]);
        assert_eq!(back.scaling(), Some(&rec));
    }

    #[test]
    fn missing_sidecar_is_an_io_error() {
        let d = ds(&[vec![1.0]]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plain.csv");
        d.save_csv(&path).unwrap();
        assert!(matches!(
            Dataset::load_with_sidecar(&path),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(matches!(
            Dataset::from_rows(vec!["x".into()], &[vec![f64::NAN]], Fidelity::Low),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(
            Dataset::from_rows(vec!["x".into(), "y".into()], &[vec![1.0]], Fidelity::Low),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            Dataset::from_rows(vec!["a,b".into()], &[vec![1.0]], Fidelity::Low),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn alignment_check() {
        let a = ds(&[vec![1.0], vec![2.0]]);
        let b = ds(&[vec![3.0], vec![4.0]]);
        check_aligned(&a, &b).unwrap();
        let shorter = ds(&[vec![1.0]]);
        assert!(matches!(check_aligned(&a, &shorter), Err(Error::Alignment(_))));
        let renamed =
            Dataset::from_rows(vec!["other".into()], &[vec![1.0], vec![2.0]], Fidelity::Low)
                .unwrap();
        assert!(matches!(check_aligned(&a, &renamed), Err(Error::Alignment(_))));
    }

    proptest! {
        #[test]
        fn scaling_round_trip_is_tight(
            rows in proptest::collection::vec(
                proptest::collection::vec(-1e6f64..1e6, 3),
                2..40,
            )
        ) {
            let d = ds(&rows);
            let rec = d.fit_scaling().unwrap();
            let back = d.apply_scaling(&rec).unwrap().inverse_scaling(&rec).unwrap();
            for i in 0..d.n_points() {
                for j in 0..d.dim() {
                    let x = d.points()[(i, j)];
                    let y = back.points()[(i, j)];
                    let scale = rec.bounds[j].lo.abs().max(rec.bounds[j].hi.abs()).max(1.0);
                    prop_assert!((x - y).abs() <= 1e-15 * scale, "{x} vs {y}");
                }
            }
        }

        #[test]
        fn permutation_composition(
            n in 2usize..12,
            seed_a in 0u64..1000,
            seed_b in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
            let d = ds(&rows);
            let mut p: Vec<usize> = (0..n).collect();
            let mut q: Vec<usize> = (0..n).collect();
            p.shuffle(&mut crate::rng::stream_rng(seed_a, "prop-p"));
            q.shuffle(&mut crate::rng::stream_rng(seed_b, "prop-q"));
            let two_step = d.permute(&p).unwrap().permute(&q).unwrap();
            let composed: Vec<usize> = (0..n).map(|i| p[q[i]]).collect();
            let one_step = d.permute(&composed).unwrap();
            prop_assert_eq!(two_step, one_step);
        }

        #[test]
        fn csv_property_round_trip(
            rows in proptest::collection::vec(
                proptest::collection::vec(
                    proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO,
                    2,
                ),
                1..20,
            )
        ) {
            let d = ds(&rows);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("prop.csv");
            d.save_csv(&path).unwrap();
            let back = Dataset::load_csv(&path, Fidelity::Low).unwrap();
            for i in 0..d.n_points() {
                for j in 0..d.dim() {
                    prop_assert_eq!(back.points()[(i, j)].to_bits(), d.points()[(i, j)].to_bits());
                }
            }
        }
    }
}
