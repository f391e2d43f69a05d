mod common;

use batstyler::semantics::{cluster, select_k, silhouette, CsgError};
use common::{best_partition, blobs, brute_select_k, silhouette_cos, unit};

fn lift(xs: &[f64]) -> Vec<Vec<f64>> {
    // 1-D positions mapped onto the unit circle, small angles per unit.
    xs.iter()
        .map(|x| vec![(x * 0.1).cos(), (x * 0.1).sin()])
        .collect()
}

#[test]
fn four_points_on_a_line_pick_two() {
    let pts = lift(&[0.0, 0.1, 10.0, 10.1]);
    let sel = select_k(&pts, 20, 0, 10).unwrap();
    assert_eq!(sel.k, 2);
    assert_eq!(sel.clustering.assignment, vec![0, 0, 1, 1]);
    assert_eq!(brute_select_k(&pts, 20).0, 2);
}

#[test]
fn three_blobs_pick_three() {
    let pts: Vec<Vec<f64>> = blobs(3, &[20, 20, 20], 8, 0.2).into_iter().map(unit).collect();
    let sel = select_k(&pts, 10, 1, 10).unwrap();
    assert_eq!(sel.k, 3);
    let m = sel.clustering.members();
    assert!(m.iter().all(|c| c.len() == 20));
}

#[test]
fn identical_vectors_are_degenerate() {
    let pts = vec![vec![0.6, 0.8]; 5];
    assert!(matches!(select_k(&pts, 20, 0, 10), Err(CsgError::Degenerate)));
}

#[test]
fn out_of_range_k_is_rejected() {
    let pts = lift(&[0.0, 1.0, 2.0, 3.0]);
    assert!(matches!(cluster(&pts, 1, 0, 3), Err(CsgError::KOutOfRange { .. })));
    assert!(matches!(cluster(&pts, 4, 0, 3), Err(CsgError::KOutOfRange { .. })));
}

#[test]
fn kmeans_matches_exhaustive_partitions() {
    let mut checked = 0;
    for seed in 0..12u64 {
        let n = 6 + (seed as usize % 7); // 6..=12
        let k = 2 + (seed as usize % 3);
        let mut sizes = vec![n / k; k];
        sizes[0] += n % k;
        let pts: Vec<Vec<f64>> = blobs(seed, &sizes, 3, 0.3).into_iter().map(unit).collect();
        let got = cluster(&pts, k, seed, 10).unwrap();
        let (want, best) = best_partition(&pts, k);
        assert_eq!(got.assignment, want, "seed {seed}: n={n} k={k}");
        assert!((got.inertia - best).abs() < 1e-10);
        checked += 1;
    }
    assert_eq!(checked, 12);
}

#[test]
fn silhouette_and_selection_match_exhaustive_search() {
    for seed in 0..8u64 {
        let n = 6 + (seed as usize % 5); // 6..=10
        let groups = 2 + (seed as usize % 3);
        let mut sizes = vec![n / groups; groups];
        sizes[0] += n % groups;
        let pts: Vec<Vec<f64>> = blobs(seed + 100, &sizes, 4, 0.25).into_iter().map(unit).collect();
        let sel = select_k(&pts, 20, seed, 10).unwrap();
        let (k, labels) = brute_select_k(&pts, 20);
        assert_eq!(sel.k, k, "seed {seed}");
        assert_eq!(sel.clustering.assignment, labels, "seed {seed}");
        let score = sel.scores.iter().find(|(kk, _)| *kk == k).unwrap().1;
        assert!((score - silhouette_cos(&pts, &labels)).abs() < 1e-10);
        assert!((silhouette(&pts, &labels) - silhouette_cos(&pts, &labels)).abs() < 1e-10);
    }
}

#[test]
fn n_minus_one_clusters_pair_the_closest_points() {
    let pts = lift(&[0.0, 3.0, 3.2, 7.0, 11.0]);
    let c = cluster(&pts, 4, 0, 10).unwrap();
    let sizes: Vec<usize> = c.members().iter().map(Vec::len).collect();
    assert_eq!(sizes.iter().filter(|&&s| s == 2).count(), 1);
    assert_eq!(c.assignment[1], c.assignment[2]);
}

#[test]
fn same_seed_same_assignment() {
    let pts: Vec<Vec<f64>> = blobs(9, &[5, 5, 5], 6, 0.8).into_iter().map(unit).collect();
    let a = cluster(&pts, 3, 42, 10).unwrap();
    let b = cluster(&pts, 3, 42, 10).unwrap();
    assert_eq!(a, b);
}
