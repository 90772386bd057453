//! Error metrics checked against a two-pass reference recomputation.

use bifid_core::dataset::{Dataset, Fidelity};
use bifid_core::metrics::relative_errors;
use bifid_core::rng::stream_rng;
use bifid_oracles::naive_relative_errors;
use rand::Rng;

fn random_pair(n: usize, dim: usize, seed: u64) -> (Dataset, Dataset) {
    let mut rng = stream_rng(seed, "metrics-conformance");
    let truth_rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect())
        .collect();
    let approx_rows: Vec<Vec<f64>> = truth_rows
        .iter()
        .map(|row| row.iter().map(|x| x + rng.gen_range(-0.5..0.5)).collect())
        .collect();
    let names: Vec<String> = (0..dim).map(|c| format!("q{c}")).collect();
    let truth = Dataset::from_rows(names.clone(), &truth_rows, Fidelity::High).unwrap();
    let approx = Dataset::from_rows(names, &approx_rows, Fidelity::Bi).unwrap();
    (approx, truth)
}

#[test]
fn relative_errors_match_reference() {
    let (approx, truth) = random_pair(40, 3, 47);
    // Validation set: everything except a handful of "selected" rows.
    let selected = [0usize, 9, 17, 33];
    let validation: Vec<usize> =
        (0..40).filter(|i| !selected.contains(i)).collect();
    let report = relative_errors(&approx, &truth, &validation).unwrap();
    let (ref_errors, ref_means) = naive_relative_errors(&approx, &truth, &validation);
    assert_eq!(report.errors.len(), ref_errors.len());
    for (mine, theirs) in report.errors.iter().zip(ref_errors.iter()) {
        for (a, b) in mine.iter().zip(theirs.iter()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
    for (mine, theirs) in report.means.iter().zip(ref_means.iter()) {
        match (mine, theirs) {
            (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0)),
            (None, None) => {}
            other => panic!("mean definedness disagrees: {other:?}"),
        }
    }
}

#[test]
fn zero_truth_component_is_undefined_in_both() {
    let names = vec!["a".to_string(), "b".to_string()];
    let truth = Dataset::from_rows(
        names.clone(),
        &[vec![0.0, 2.0], vec![0.0, 4.0], vec![0.0, 1.0]],
        Fidelity::High,
    )
    .unwrap();
    let approx = Dataset::from_rows(
        names,
        &[vec![0.5, 2.5], vec![-0.5, 3.5], vec![0.25, 1.25]],
        Fidelity::Bi,
    )
    .unwrap();
    let validation = [0usize, 1, 2];
    let report = relative_errors(&approx, &truth, &validation).unwrap();
    let (ref_errors, ref_means) = naive_relative_errors(&approx, &truth, &validation);
    assert_eq!(report.means[0], None);
    assert_eq!(ref_means[0], None);
    for (mine, theirs) in report.errors.iter().zip(ref_errors.iter()) {
        assert_eq!(mine[0], 0.0);
        assert_eq!(theirs[0], 0.0);
        assert!((mine[1] - theirs[1]).abs() <= 1e-12 * theirs[1].max(1.0));
    }
}
