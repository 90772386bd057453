//! Choosing which points deserve a high-fidelity evaluation.
//!
//! The embedding rows are clustered with K-means (careful D-squared
//! seeding, Lloyd iterations, best of several restarts), and the member
//! nearest each cluster centroid becomes a selected point. A seeded
//! uniform random selection provides the baseline the selection study
//! compares against.
//!
//! Everything here is deterministic: a fixed seed fixes the restarts, all
//! distance ties break toward the lowest point index, and equal-inertia
//! restarts resolve to the earliest restart number.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::spectral::{embed, SpectralEmbedding, Spectrum};

/// K-means settings. `n_clusters` is the number of points to select.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub n_clusters: usize,
    pub n_restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
    pub tol: f64,
}

impl KMeansConfig {
    /// Standard robust defaults around the required cluster count and seed.
    pub fn new(n_clusters: usize, seed: u64) -> Self {
        Self {
            n_clusters,
            n_restarts: 10,
            max_iters: 300,
            seed,
            tol: 1e-10,
        }
    }

    fn validate(&self, n_points: usize) -> Result<()> {
        if self.n_clusters == 0 {
            return Err(Error::Parameter("cluster count must be at least 1".into()));
        }
        if self.n_clusters > n_points {
            return Err(Error::Parameter(format!(
                "{} clusters requested for {n_points} points",
                self.n_clusters
            )));
        }
        if self.n_restarts == 0 || self.max_iters == 0 {
            return Err(Error::Parameter("restarts and max_iters must be at least 1".into()));
        }
        if !self.tol.is_finite() || self.tol < 0.0 {
            return Err(Error::Parameter(format!(
                "tolerance must be nonnegative, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// One clustering: per-point labels, centroid rows, total within-cluster
/// squared distance.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansOutcome {
    pub labels: Vec<usize>,
    pub centroids: DMatrix<f64>,
    pub inertia: f64,
}

/// Outcome of a selection strategy. Clustering fields are absent for the
/// random baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub labels: Option<Vec<usize>>,
    pub centroids: Option<DMatrix<f64>>,
    /// Original dataset indices chosen for high-fidelity acquisition.
    pub selected: Vec<usize>,
    /// Reindexing that puts the selected points first; the remaining
    /// indices follow in ascending order.
    pub permutation: Vec<usize>,
    pub inertia: Option<f64>,
}

fn sq_dist_row_to_row(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    let mut s = 0.0;
    for c in 0..a.ncols() {
        let d = a[(i, c)] - b[(j, c)];
        s += d * d;
    }
    s
}

/// D-squared careful seeding: first center uniform, each next center drawn
/// with probability proportional to squared distance from the chosen set.
fn seed_centroids(
    coords: &DMatrix<f64>,
    n_clusters: usize,
    rng: &mut impl rand::Rng,
) -> DMatrix<f64> {
    let n = coords.nrows();
    let mut chosen: Vec<usize> = Vec::with_capacity(n_clusters);
    let mut weights = vec![f64::INFINITY; n];
    let first = rng.gen_range(0..n);
    chosen.push(first);
    while chosen.len() < n_clusters {
        let last = *chosen.last().expect("nonempty");
        let mut total = 0.0;
        for i in 0..n {
            let d = sq_dist_row_to_row(coords, i, coords, last);
            if d < weights[i] {
                weights[i] = d;
            }
            total += weights[i];
        }
        let next = if total > 0.0 {
            let u: f64 = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for i in 0..n {
                if weights[i] > 0.0 {
                    acc += weights[i];
                    if acc > u {
                        pick = Some(i);
                        break;
                    }
                }
            }
            // Rounding can leave the cursor past the last positive weight.
            pick.unwrap_or_else(|| {
                (0..n).rev().find(|&i| weights[i] > 0.0).expect("total > 0")
            })
        } else {
            // All remaining points coincide with chosen centers; take the
            // lowest index not yet chosen.
            (0..n).find(|i| !chosen.contains(i)).expect("n_clusters <= n")
        };
        chosen.push(next);
    }
    DMatrix::from_fn(n_clusters, coords.ncols(), |j, c| coords[(chosen[j], c)])
}

/// Assign each point to its nearest centroid (ties to the lower cluster
/// index); returns total squared distance.
fn assign(coords: &DMatrix<f64>, centroids: &DMatrix<f64>, labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for i in 0..coords.nrows() {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for j in 0..centroids.nrows() {
            let d = sq_dist_row_to_row(coords, i, centroids, j);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        labels[i] = best;
        inertia += best_d;
    }
    inertia
}

/// Give every empty cluster the point currently farthest from its own
/// centroid (among clusters that can spare one). Returns whether anything
/// moved.
fn repair_empty(
    coords: &DMatrix<f64>,
    centroids: &DMatrix<f64>,
    labels: &mut [usize],
) -> bool {
    let k = centroids.nrows();
    let mut sizes = vec![0usize; k];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    let mut moved = false;
    for e in 0..k {
        if sizes[e] > 0 {
            continue;
        }
        let mut far_idx = None;
        let mut far_d = -1.0;
        for i in 0..coords.nrows() {
            if sizes[labels[i]] <= 1 {
                continue;
            }
            let d = sq_dist_row_to_row(coords, i, centroids, labels[i]);
            if d > far_d {
                far_d = d;
                far_idx = Some(i);
            }
        }
        if let Some(i) = far_idx {
            sizes[labels[i]] -= 1;
            labels[i] = e;
            sizes[e] += 1;
            moved = true;
        }
    }
    moved
}

fn update_centroids(
    coords: &DMatrix<f64>,
    labels: &[usize],
    n_clusters: usize,
) -> DMatrix<f64> {
    let d = coords.ncols();
    let mut sums = DMatrix::zeros(n_clusters, d);
    let mut counts = vec![0usize; n_clusters];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for c in 0..d {
            sums[(l, c)] += coords[(i, c)];
        }
    }
    for j in 0..n_clusters {
        if counts[j] > 0 {
            let inv = 1.0 / counts[j] as f64;
            for c in 0..d {
                sums[(j, c)] *= inv;
            }
        }
    }
    sums
}

fn lloyd(
    coords: &DMatrix<f64>,
    mut centroids: DMatrix<f64>,
    max_iters: usize,
    tol: f64,
) -> (Vec<usize>, DMatrix<f64>, f64) {
    let n = coords.nrows();
    let k = centroids.nrows();
    let mut labels = vec![0usize; n];
    let mut prev_inertia = f64::INFINITY;
    let mut clean_descent = true;
    for _ in 0..max_iters {
        let inertia = assign(coords, &centroids, &mut labels);
        if clean_descent {
            debug_assert!(
                inertia <= prev_inertia * (1.0 + 1e-12) + 1e-12,
                "Lloyd iteration increased inertia: {prev_inertia} -> {inertia}"
            );
        }
        prev_inertia = inertia;
        clean_descent = !repair_empty(coords, &centroids, &mut labels);
        let next = update_centroids(coords, &labels, k);
        let mut movement: f64 = 0.0;
        for j in 0..k {
            movement = movement.max(sq_dist_row_to_row(&next, j, &centroids, j).sqrt());
        }
        centroids = next;
        if movement < tol {
            break;
        }
    }
    let mut inertia = assign(coords, &centroids, &mut labels);
    if repair_empty(coords, &centroids, &mut labels) {
        inertia = 0.0;
        for i in 0..n {
            inertia += sq_dist_row_to_row(coords, i, &centroids, labels[i]);
        }
    }
    (labels, centroids, inertia)
}

/// Best-of-restarts K-means on the embedding rows.
pub fn kmeans(embedding: &SpectralEmbedding, cfg: &KMeansConfig) -> Result<KMeansOutcome> {
    let coords = embedding.coords();
    cfg.validate(coords.nrows())?;
    let mut best: Option<KMeansOutcome> = None;
    for restart in 0..cfg.n_restarts {
        let mut rng = stream_rng(cfg.seed, &format!("kmeans/restart-{restart}"));
        let init = seed_centroids(coords, cfg.n_clusters, &mut rng);
        let (labels, centroids, inertia) = lloyd(coords, init, cfg.max_iters, cfg.tol);
        let better = match &best {
            None => true,
            Some(b) => inertia < b.inertia,
        };
        if better {
            best = Some(KMeansOutcome {
                labels,
                centroids,
                inertia,
            });
        }
    }
    Ok(best.expect("n_restarts >= 1"))
}

/// For each cluster, the member index closest to its centroid (ties to the
/// lowest index). Every cluster must be nonempty.
pub fn nearest_to_centroids(
    embedding: &SpectralEmbedding,
    centroids: &DMatrix<f64>,
    labels: &[usize],
) -> Result<Vec<usize>> {
    let coords = embedding.coords();
    if labels.len() != coords.nrows() {
        return Err(Error::Dimension(format!(
            "{} labels for {} embedded points",
            labels.len(),
            coords.nrows()
        )));
    }
    if centroids.ncols() != coords.ncols() {
        return Err(Error::Dimension(format!(
            "centroid dimension {} does not match embedding dimension {}",
            centroids.ncols(),
            coords.ncols()
        )));
    }
    let k = centroids.nrows();
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Parameter(format!("label {bad} out of range for {k} clusters")));
    }
    let mut selected = Vec::with_capacity(k);
    for j in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..labels.len() {
            if labels[i] != j {
                continue;
            }
            let d = sq_dist_row_to_row(coords, i, centroids, j);
            let better = match best {
                None => true,
                Some((_, bd)) => d < bd,
            };
            if better {
                best = Some((i, d));
            }
        }
        match best {
            Some((i, _)) => selected.push(i),
            None => {
                return Err(Error::Numeric(format!(
                    "cluster {j} is empty; K-means repair must prevent this"
                )))
            }
        }
    }
    Ok(selected)
}

/// Reindexing that lists `selected` first (in the given order) and the
/// remaining indices ascending.
pub fn selection_permutation(n_points: usize, selected: &[usize]) -> Vec<usize> {
    let mut is_selected = vec![false; n_points];
    for &s in selected {
        is_selected[s] = true;
    }
    let mut perm = Vec::with_capacity(n_points);
    perm.extend_from_slice(selected);
    perm.extend((0..n_points).filter(|&i| !is_selected[i]));
    perm
}

/// Full selection step: embed in the first `n_clusters` modes (trivial mode
/// included), cluster, pick the centroid-nearest members, and build the
/// reindexing. The caller then acquires high-fidelity data at the selected
/// points and scales it with the low-fidelity record.
pub fn select_high_fidelity(
    points: &Dataset,
    spectrum: &Spectrum,
    cfg: &KMeansConfig,
) -> Result<SelectionResult> {
    if points.n_points() != spectrum.n_points() {
        return Err(Error::Dimension(format!(
            "dataset has {} points but spectrum covers {}",
            points.n_points(),
            spectrum.n_points()
        )));
    }
    if spectrum.n_modes() < cfg.n_clusters {
        return Err(Error::Parameter(format!(
            "selection of {} points needs {} spectral modes, have {}",
            cfg.n_clusters,
            cfg.n_clusters,
            spectrum.n_modes()
        )));
    }
    let embedding = embed(spectrum, 1, cfg.n_clusters)?;
    let outcome = kmeans(&embedding, cfg)?;
    let selected = nearest_to_centroids(&embedding, &outcome.centroids, &outcome.labels)?;
    let permutation = selection_permutation(points.n_points(), &selected);
    Ok(SelectionResult {
        labels: Some(outcome.labels),
        centroids: Some(outcome.centroids),
        selected,
        permutation,
        inertia: Some(outcome.inertia),
    })
}

/// Seeded uniform baseline: `n` distinct indices, reported in ascending
/// order, with the same permutation layout as the clustered selection.
pub fn random_selection(points: &Dataset, n: usize, seed: u64) -> Result<SelectionResult> {
    let total = points.n_points();
    if n == 0 {
        return Err(Error::Parameter("selection count must be at least 1".into()));
    }
    if n > total {
        return Err(Error::Parameter(format!("cannot select {n} of {total} points")));
    }
    let mut rng = stream_rng(seed, "selection/random");
    let mut selected = rand::seq::index::sample(&mut rng, total, n).into_vec();
    selected.sort_unstable();
    let permutation = selection_permutation(total, &selected);
    Ok(SelectionResult {
        labels: None,
        centroids: None,
        selected,
        permutation,
        inertia: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Fidelity;

    fn embedding_of(rows: &[Vec<f64>]) -> SpectralEmbedding {
        // Tests drive kmeans directly with synthetic coordinates; the
        // embedding type is just a matrix wrapper here.
        let coords = DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
        // SpectralEmbedding has no public constructor; go through a
        // spectrum-free helper below instead.
        embedding_from_matrix(coords)
    }

    fn embedding_from_matrix(coords: DMatrix<f64>) -> SpectralEmbedding {
        // Safety valve for tests: build via serde-free transmute-like path.
        // SpectralEmbedding is a plain wrapper; reconstruct through embed()
        // on a fabricated spectrum would drag in eigensolves, so tests use
        // this crate-internal constructor.
        crate::spectral::test_embedding(coords)
    }

    fn dataset_of(n: usize) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        Dataset::from_rows(vec!["x".into()], &rows, Fidelity::Low).unwrap()
    }

    #[test]
    fn each_point_its_own_cluster() {
        let e = embedding_of(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        let out = kmeans(&e, &KMeansConfig::new(3, 7)).unwrap();
        assert_eq!(out.inertia, 0.0);
        let mut sorted = out.labels.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2]);
    }

    #[test]
    fn two_point_masses() {
        let mut rows = Vec::new();
        for _ in 0..10 {
            rows.push(vec![0.0, 0.0]);
        }
        for _ in 0..10 {
            rows.push(vec![5.0, 5.0]);
        }
        let e = embedding_of(&rows);
        let out = kmeans(&e, &KMeansConfig::new(2, 3)).unwrap();
        assert_eq!(out.inertia, 0.0);
        for i in 0..10 {
            assert_eq!(out.labels[i], out.labels[0]);
            assert_eq!(out.labels[10 + i], out.labels[10]);
        }
        assert_ne!(out.labels[0], out.labels[10]);
        let selected = nearest_to_centroids(&e, &out.centroids, &out.labels).unwrap();
        // All members tie at distance 0; the lowest index in each mass wins.
        let mut sel = selected.clone();
        sel.sort_unstable();
        assert_eq!(sel, vec![0, 10]);
    }

    #[test]
    fn kmeans_rejects_bad_config() {
        let e = embedding_of(&[vec![0.0], vec![1.0]]);
        assert!(matches!(
            kmeans(&e, &KMeansConfig::new(3, 0)),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            kmeans(&e, &KMeansConfig::new(0, 0)),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn nearest_tie_takes_lower_index() {
        let e = embedding_of(&[vec![-1.0], vec![1.0]]);
        let centroids = DMatrix::from_row_slice(1, 1, &[0.0]);
        let labels = vec![0, 0];
        assert_eq!(nearest_to_centroids(&e, &centroids, &labels).unwrap(), vec![0]);
    }

    #[test]
    fn nearest_rejects_empty_cluster() {
        let e = embedding_of(&[vec![0.0], vec![1.0]]);
        let centroids = DMatrix::from_row_slice(2, 1, &[0.0, 9.0]);
        let labels = vec![0, 0];
        assert!(matches!(
            nearest_to_centroids(&e, &centroids, &labels),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn permutation_layout() {
        let perm = selection_permutation(6, &[4, 1]);
        assert_eq!(perm, vec![4, 1, 0, 2, 3, 5]);
    }

    #[test]
    fn random_selection_is_deterministic_and_seed_sensitive() {
        let d = dataset_of(100);
        let a = random_selection(&d, 30, 0).unwrap();
        let b = random_selection(&d, 30, 0).unwrap();
        assert_eq!(a, b);
        let c = random_selection(&d, 30, 1).unwrap();
        assert_ne!(a.selected, c.selected);
        assert_eq!(a.selected.len(), 30);
        let mut dedup = a.selected.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 30, "indices distinct and ascending");
        assert!(a.selected.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(&a.permutation[..30], &a.selected[..]);
    }

    #[test]
    fn random_selection_full_and_bounds() {
        let d = dataset_of(5);
        let all = random_selection(&d, 5, 9).unwrap();
        assert_eq!(all.selected, vec![0, 1, 2, 3, 4]);
        assert!(matches!(random_selection(&d, 6, 9), Err(Error::Parameter(_))));
        assert!(matches!(random_selection(&d, 0, 9), Err(Error::Parameter(_))));
    }

    #[test]
    fn restart_determinism() {
        let mut rows = Vec::new();
        for i in 0..30 {
            let base = (i % 3) as f64 * 10.0;
            rows.push(vec![base + (i as f64) * 0.01, base - (i as f64) * 0.02]);
        }
        let e = embedding_of(&rows);
        let cfg = KMeansConfig::new(3, 42);
        let a = kmeans(&e, &cfg).unwrap();
        let b = kmeans(&e, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
