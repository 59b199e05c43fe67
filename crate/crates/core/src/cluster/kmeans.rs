//! k-means with k-means++ seeding, Lloyd iterations and seeded restarts.

use ndarray::{ArrayView2, Axis};
use rand::Rng as _;
use rayon::prelude::*;

use super::{
    canonical_order, check_k, labels_map, nearest, sq_dist, Centers, ClusterModel, ClusterParams,
    FitDiagnostics, Label,
};
use crate::error::Result;
use crate::features::FeatureMatrix;
use crate::rng::{hash64, seeded, Rng};

pub(crate) struct LloydRun {
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub inertia: f64,
    pub trace: Vec<f64>,
    pub iterations: usize,
}

/// Fits k-means on the rows of `matrix`.
///
/// Restart `r` seeds its k-means++ draw with `hash64(params.seed, r)`;
/// restarts run in parallel and the lowest final inertia wins (earliest
/// restart on ties). A cluster that empties during Lloyd is repaired by
/// moving in the point farthest from its current centroid.
pub fn kmeans_fit(matrix: &FeatureMatrix, params: &ClusterParams) -> Result<ClusterModel> {
    params.validate()?;
    let n = matrix.nrows();
    check_k(params.k, n)?;
    let order = canonical_order(&matrix.patient_ids);
    let x = matrix.values.select(Axis(0), &order);

    let runs: Vec<LloydRun> = (0..params.n_init)
        .into_par_iter()
        .map(|r| {
            lloyd(
                x.view(),
                params.k,
                hash64(params.seed, r as u64),
                params.max_iter,
                params.tol,
            )
        })
        .collect();
    let (restart, best) = runs
        .into_iter()
        .enumerate()
        .min_by(|a, b| a.1.inertia.total_cmp(&b.1.inertia))
        .expect("n_init >= 1");

    let mut labels = vec![0 as Label; n];
    for (pos, &orig) in order.iter().enumerate() {
        labels[orig] = best.labels[pos] as Label;
    }
    Ok(ClusterModel {
        params: params.clone(),
        n_clusters: params.k,
        selected_features: matrix.feature_names.clone(),
        normalization: super::kmedoids::normalization_of(matrix),
        centers: Centers::Centroids {
            centers: best.centers,
        },
        labels: labels_map(&matrix.patient_ids, &labels),
        objective: best.inertia,
        diagnostics: FitDiagnostics {
            restart,
            iterations: best.iterations,
            objective_trace: best.trace,
        },
    })
}

fn plus_plus(x: ArrayView2<f64>, k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = x.nrows();
    let mut centers = Vec::with_capacity(k);
    centers.push(x.row(rng.gen_range(0..n)).to_vec());
    let mut d2: Vec<f64> = x.rows().into_iter().map(|r| sq_dist(r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, d) in d2.iter().enumerate() {
                if *d <= 0.0 {
                    continue;
                }
                acc += d;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("some point has positive weight")
        } else {
            rng.gen_range(0..n)
        };
        let c = x.row(pick).to_vec();
        for (d, r) in d2.iter_mut().zip(x.rows()) {
            *d = d.min(sq_dist(r, &c));
        }
        centers.push(c);
    }
    centers
}

fn assign(x: ArrayView2<f64>, centers: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    x.axis_iter(Axis(0))
        .into_par_iter()
        .map(|row| nearest(row, centers))
        .unzip()
}

/// Gives every empty cluster the point farthest from its centroid, taken
/// from clusters with more than one member (lowest index on ties).
fn repair_empty(
    x: ArrayView2<f64>,
    labels: &mut [usize],
    dist: &mut [f64],
    centers: &mut [Vec<f64>],
) {
    let k = centers.len();
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let mut far: Option<usize> = None;
        for i in 0..labels.len() {
            if counts[labels[i]] > 1 && far.map_or(true, |f| dist[i] > dist[f]) {
                far = Some(i);
            }
        }
        let i = far.expect("n >= k leaves a cluster with two members");
        counts[labels[i]] -= 1;
        labels[i] = j;
        counts[j] = 1;
        dist[i] = 0.0;
        centers[j] = x.row(i).to_vec();
    }
}

fn means(x: ArrayView2<f64>, labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let d = x.ncols();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (row, &l) in x.rows().into_iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(row) {
            *s += v;
        }
    }
    for (s, c) in sums.iter_mut().zip(counts) {
        for v in s.iter_mut() {
            *v /= c as f64;
        }
    }
    sums
}

pub(crate) fn lloyd(x: ArrayView2<f64>, k: usize, seed: u64, max_iter: usize, tol: f64) -> LloydRun {
    let mut rng = seeded(seed);
    let mut centers = plus_plus(x, k, &mut rng);
    let mut trace = Vec::new();
    let mut prev = f64::INFINITY;
    let mut iterations = 0;
    let labels = loop {
        iterations += 1;
        let (mut labels, mut dist) = assign(x, &centers);
        repair_empty(x, &mut labels, &mut dist, &mut centers);
        let inertia: f64 = dist.iter().sum();
        trace.push(inertia);
        centers = means(x, &labels, k);
        let converged = prev.is_finite() && prev - inertia <= tol * prev;
        prev = inertia;
        if converged || iterations >= max_iter.max(1) {
            break labels;
        }
    };
    let inertia = x
        .rows()
        .into_iter()
        .zip(&labels)
        .map(|(r, &l)| sq_dist(r, &centers[l]))
        .sum();
    trace.push(inertia);
    LloydRun {
        labels,
        centers,
        inertia,
        trace,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_util::*;
    use super::super::{assign_frozen, Algorithm, AssignInput};
    use super::*;
    use crate::error::Error;

    fn params(k: usize, seed: u64) -> ClusterParams {
        ClusterParams::new(Algorithm::KMeans, k, seed)
    }

    /// Best 2-partition of a 1-D point set by enumerating all label vectors.
    fn best_two_partition(points: &[f64]) -> f64 {
        let n = points.len();
        let mut best = f64::INFINITY;
        for mask in 1..(1u32 << n) - 1 {
            let mut cost = 0.0;
            for side in [true, false] {
                let members: Vec<f64> = (0..n)
                    .filter(|&i| ((mask >> i) & 1 == 1) == side)
                    .map(|i| points[i])
                    .collect();
                let m = members.iter().sum::<f64>() / members.len() as f64;
                cost += members.iter().map(|v| (v - m).powi(2)).sum::<f64>();
            }
            best = best.min(cost);
        }
        best
    }

    #[test]
    fn four_points_two_clusters() {
        let pts = [0.0, 1.0, 9.0, 10.0];
        assert_eq!(best_two_partition(&pts), 1.0);
        let model = kmeans_fit(&line(&pts), &params(2, 11)).unwrap();
        assert_eq!(model.objective, 1.0);
        let l = model.labels_for(&line(&pts).patient_ids).unwrap();
        assert_eq!(l[0], l[1]);
        assert_eq!(l[2], l[3]);
        assert_ne!(l[0], l[2]);
        let Centers::Centroids { centers } = &model.centers else {
            panic!()
        };
        let mut c: Vec<f64> = centers.iter().map(|c| c[0]).collect();
        c.sort_by(f64::total_cmp);
        assert_eq!(c, vec![0.5, 9.5]);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let m = matrix(&[&[1.0, 2.0], &[3.0, 6.0], &[5.0, 1.0]]);
        let model = kmeans_fit(&m, &params(1, 5)).unwrap();
        let Centers::Centroids { centers } = &model.centers else {
            panic!()
        };
        assert!((centers[0][0] - 3.0).abs() < 1e-12 && (centers[0][1] - 3.0).abs() < 1e-12);
        // (4 + 0 + 4) + (1 + 9 + 4)
        assert!((model.objective - 22.0).abs() < 1e-12);
    }

    #[test]
    fn duplicated_locations_give_zero_inertia() {
        let m = line(&[3.0, -2.0, 3.0, 7.0, -2.0, 7.0, 7.0]);
        let model = kmeans_fit(&m, &params(3, 2)).unwrap();
        assert_eq!(model.objective, 0.0);
    }

    #[test]
    fn k_above_n_is_an_error() {
        let err = kmeans_fit(&line(&[1.0, 2.0]), &params(3, 0)).unwrap_err();
        assert!(matches!(err, Error::TooFewPatients { k: 3, n: 2 }));
    }

    #[test]
    fn every_cluster_non_empty_with_duplicates() {
        // Only two distinct locations but k = 4: repair keeps clusters populated.
        let m = line(&[0.0, 0.0, 0.0, 5.0, 5.0, 5.0]);
        let model = kmeans_fit(&m, &params(4, 9)).unwrap();
        let mut seen = [false; 4];
        for l in model.labels.values() {
            seen[*l as usize] = true;
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn lloyd_inertia_never_increases() {
        let pts: Vec<f64> = (0..60).map(|i| ((i * 37) % 23) as f64 + (i % 3) as f64 * 20.0).collect();
        for seed in 0..20 {
            let mut p = params(4, seed);
            p.n_init = 1;
            let model = kmeans_fit(&line(&pts), &p).unwrap();
            for w in model.diagnostics.objective_trace.windows(2) {
                assert!(w[1] <= w[0], "{w:?}");
            }
        }
    }

    #[test]
    fn converged_model_reassigns_training_labels() {
        let m = matrix(&[&[0.0, 0.1], &[0.2, 0.0], &[5.0, 5.1], &[5.2, 4.9], &[9.0, 0.0], &[9.1, 0.3]]);
        let model = kmeans_fit(&m, &params(3, 4)).unwrap();
        let again = assign_frozen(&model, AssignInput::Features(&m)).unwrap();
        assert_eq!(again, model.labels_for(&m.patient_ids).unwrap());
    }

    #[test]
    fn fit_is_reproducible_and_order_free() {
        let pts: Vec<f64> = (0..40).map(|i| ((i * 7919) % 101) as f64).collect();
        let m = line(&pts);
        let a = kmeans_fit(&m, &params(3, 77)).unwrap();
        let b = kmeans_fit(&m, &params(3, 77)).unwrap();
        assert_eq!(a, b);
        let rev: Vec<usize> = (0..pts.len()).rev().collect();
        let c = kmeans_fit(&m.select_rows(&rev), &params(3, 77)).unwrap();
        assert_eq!(a.labels, c.labels);
    }
}
