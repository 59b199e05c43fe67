//! DBSCAN with Euclidean distance on the feature matrix.
//!
//! A point is core when at least `min_pts` points (itself included) lie
//! within `eps`. Clusters are the connected components of core points,
//! numbered by their lowest row index. A non-core point joins the cluster
//! of its lowest-index core neighbour, or is noise.

use ndarray::ArrayView2;
use rayon::prelude::*;

use super::{labels_map, Centers, ClusterModel, ClusterParams, FitDiagnostics, Label, NOISE};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

fn owned_rows(x: ArrayView2<f64>) -> Vec<Vec<f64>> {
    x.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// `eps` from the k-distance curve: the 90th percentile (linear
/// interpolation) over points of the distance to the `min_pts`-th nearest
/// point, counting the point itself.
pub fn eps_heuristic(x: ArrayView2<f64>, min_pts: usize) -> Result<f64> {
    let n = x.nrows();
    if n == 0 || min_pts == 0 || min_pts > n {
        return Err(Error::InvalidParameter(format!(
            "eps heuristic needs 1 <= min_pts ({min_pts}) <= n ({n})"
        )));
    }
    let rows = owned_rows(x);
    let mut kd: Vec<f64> = rows
        .par_iter()
        .map(|ri| {
            let mut d: Vec<f64> = rows.iter().map(|rj| dist(ri, rj)).collect();
            d.select_nth_unstable_by(min_pts - 1, f64::total_cmp);
            d[min_pts - 1]
        })
        .collect();
    kd.sort_by(f64::total_cmp);
    let pos = 0.9 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let eps = kd[lo] + (kd[hi] - kd[lo]) * (pos - lo as f64);
    if eps > 0.0 {
        Ok(eps)
    } else {
        Err(Error::InvalidParameter(
            "eps heuristic gave 0; set eps explicitly".into(),
        ))
    }
}

pub(crate) fn dbscan_labels(x: ArrayView2<f64>, eps: f64, min_pts: usize) -> (Vec<Label>, Vec<bool>) {
    let n = x.nrows();
    let rows = owned_rows(x);
    // ascending indices within eps, self included
    let neighbors: Vec<Vec<usize>> = rows
        .par_iter()
        .map(|ri| (0..n).filter(|&j| dist(ri, &rows[j]) <= eps).collect())
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();
    let mut labels = vec![NOISE; n];
    let mut next = 0;
    for seed in 0..n {
        if !core[seed] || labels[seed] != NOISE {
            continue;
        }
        labels[seed] = next;
        let mut stack = vec![seed];
        while let Some(p) = stack.pop() {
            for &q in &neighbors[p] {
                if core[q] && labels[q] == NOISE {
                    labels[q] = next;
                    stack.push(q);
                }
            }
        }
        next += 1;
    }
    for i in 0..n {
        if !core[i] {
            if let Some(&q) = neighbors[i].iter().find(|&&q| core[q]) {
                labels[i] = labels[q];
            }
        }
    }
    (labels, core)
}

/// Fits DBSCAN in input row order. `params.k` is ignored; the model's
/// `n_clusters` is the number of clusters found.
pub fn dbscan_fit(matrix: &FeatureMatrix, params: &ClusterParams) -> Result<ClusterModel> {
    params.validate()?;
    let x = matrix.values.view();
    let eps = match params.eps {
        Some(e) => e,
        None => eps_heuristic(x, params.min_pts)?,
    };
    let (labels, core) = dbscan_labels(x, eps, params.min_pts);
    let n_clusters = labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize);

    // Within-cluster sum of squares of clustered points.
    let d = matrix.ncols();
    let mut sums = vec![vec![0.0; d]; n_clusters];
    let mut counts = vec![0usize; n_clusters];
    for (row, &l) in x.rows().into_iter().zip(&labels) {
        if l >= 0 {
            counts[l as usize] += 1;
            for (s, v) in sums[l as usize].iter_mut().zip(row) {
                *s += v;
            }
        }
    }
    let centroids: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s.into_iter().map(|v| v / c as f64).collect())
        .collect();
    let objective = x
        .rows()
        .into_iter()
        .zip(&labels)
        .filter(|(_, &l)| l >= 0)
        .map(|(r, &l)| super::sq_dist(r, &centroids[l as usize]))
        .sum();

    let core_rows: Vec<usize> = (0..matrix.nrows()).filter(|&i| core[i]).collect();
    let mut params = params.clone();
    params.eps = Some(eps);
    Ok(ClusterModel {
        n_clusters,
        selected_features: matrix.feature_names.clone(),
        normalization: super::kmedoids::normalization_of(matrix),
        centers: Centers::Density {
            eps,
            min_pts: params.min_pts,
            core_patient_ids: core_rows.iter().map(|&i| matrix.patient_ids[i].clone()).collect(),
            core_rows: core_rows.iter().map(|&i| matrix.values.row(i).to_vec()).collect(),
            core_labels: core_rows.iter().map(|&i| labels[i]).collect(),
        },
        labels: labels_map(&matrix.patient_ids, &labels),
        objective,
        diagnostics: FitDiagnostics::default(),
        params,
    })
}
