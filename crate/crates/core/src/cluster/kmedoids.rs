//! k-medoids by PAM: greedy BUILD, then best-improvement SWAP passes.

use ndarray::{ArrayView2, Axis};
use rayon::prelude::*;

use super::{
    canonical_order, check_k, labels_map, Centers, ClusterModel, ClusterParams, FitDiagnostics,
    Label,
};
use crate::error::Result;
use crate::features::{ColumnStats, FeatureMatrix};

pub(crate) fn normalization_of(matrix: &FeatureMatrix) -> Vec<ColumnStats> {
    matrix.column_stats.clone().unwrap_or_else(|| {
        vec![
            ColumnStats {
                mean: 0.0,
                std: 1.0
            };
            matrix.ncols()
        ]
    })
}

/// Dense symmetric Euclidean distance matrix, row-major.
pub(crate) struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn euclidean(x: ArrayView2<f64>) -> Self {
        let n = x.nrows();
        let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
        let d: Vec<f64> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let ri = &rows[i];
                rows.iter().map(move |rj| {
                    ri.iter()
                        .zip(rj)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
            })
            .collect();
        DistanceMatrix { n, d }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.d[i * self.n..(i + 1) * self.n]
    }
}

pub(crate) struct PamResult {
    /// Point index of each medoid slot.
    pub medoids: Vec<usize>,
    pub labels: Vec<usize>,
    pub cost: f64,
    /// Cost after BUILD, then after each accepted swap.
    pub trace: Vec<f64>,
    pub passes: usize,
}

/// Nearest and second-nearest medoid slot for each point.
fn nearest_two(dist: &DistanceMatrix, medoids: &[usize]) -> Vec<(usize, f64, f64)> {
    (0..dist.n)
        .map(|j| {
            let mut best = (0usize, f64::INFINITY);
            let mut second = f64::INFINITY;
            for (slot, &m) in medoids.iter().enumerate() {
                let d = dist.get(m, j);
                if d < best.1 {
                    second = best.1;
                    best = (slot, d);
                } else if d < second {
                    second = d;
                }
            }
            (best.0, best.1, second)
        })
        .collect()
}

fn total_cost(dist: &DistanceMatrix, medoids: &[usize]) -> f64 {
    (0..dist.n)
        .map(|j| {
            medoids
                .iter()
                .map(|&m| dist.get(m, j))
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

fn build(dist: &DistanceMatrix, k: usize) -> Vec<usize> {
    let n = dist.n;
    let first = (0..n)
        .map(|i| (i, dist.row(i).iter().sum::<f64>()))
        .fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b })
        .0;
    let mut medoids = vec![first];
    let mut near: Vec<f64> = dist.row(first).to_vec();
    while medoids.len() < k {
        let gains: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                if medoids.contains(&i) {
                    return f64::NEG_INFINITY;
                }
                dist.row(i)
                    .iter()
                    .zip(&near)
                    .map(|(d, dn)| (dn - d).max(0.0))
                    .sum()
            })
            .collect();
        let mut pick = None;
        for (i, g) in gains.iter().enumerate() {
            if *g > f64::NEG_INFINITY && pick.map_or(true, |p: usize| *g > gains[p]) {
                pick = Some(i);
            }
        }
        let pick = pick.expect("k <= n");
        for (dn, d) in near.iter_mut().zip(dist.row(pick)) {
            *dn = dn.min(*d);
        }
        medoids.push(pick);
    }
    medoids
}

pub(crate) fn pam(dist: &DistanceMatrix, k: usize, max_iter: usize) -> PamResult {
    let n = dist.n;
    let mut medoids = build(dist, k);
    let mut cost = total_cost(dist, &medoids);
    let mut trace = vec![cost];
    let mut passes = 0;
    while passes < max_iter {
        passes += 1;
        let near = nearest_two(dist, &medoids);
        let is_medoid = {
            let mut v = vec![false; n];
            for &m in &medoids {
                v[m] = true;
            }
            v
        };
        // Best swap per candidate o, then the best overall (lowest slot, o on ties).
        let best = (0..n)
            .into_par_iter()
            .filter(|&o| !is_medoid[o])
            .map(|o| {
                let mut deltas = vec![0.0; k];
                let mut shared = 0.0;
                for (j, &(slot, d1, d2)) in near.iter().enumerate() {
                    let doj = dist.get(o, j);
                    // Removing a slot other than j's nearest: j moves to o only if closer.
                    let keep = doj.min(d1) - d1;
                    shared += keep;
                    deltas[slot] += doj.min(d2) - d1 - keep;
                }
                for d in deltas.iter_mut() {
                    *d += shared;
                }
                let mut best = (0usize, deltas[0]);
                for (s, d) in deltas.iter().enumerate().skip(1) {
                    if *d < best.1 {
                        best = (s, *d);
                    }
                }
                (best.1, best.0, o)
            })
            .reduce_with(|a, b| {
                if b.0 < a.0 || (b.0 == a.0 && (b.1, b.2) < (a.1, a.2)) {
                    b
                } else {
                    a
                }
            });
        let Some((delta, slot, o)) = best else { break };
        if delta >= -1e-12 * (1.0 + cost) {
            break;
        }
        let mut candidate = medoids.clone();
        candidate[slot] = o;
        let new_cost = total_cost(dist, &candidate);
        if new_cost >= cost {
            break;
        }
        medoids = candidate;
        cost = new_cost;
        trace.push(cost);
    }
    let labels = assign_medoids(dist, &medoids);
    PamResult {
        medoids,
        labels,
        cost,
        trace,
        passes,
    }
}

/// Nearest medoid slot (lowest on ties); a medoid always labels itself.
fn assign_medoids(dist: &DistanceMatrix, medoids: &[usize]) -> Vec<usize> {
    let mut labels: Vec<usize> = nearest_two(dist, medoids).into_iter().map(|t| t.0).collect();
    for (slot, &m) in medoids.iter().enumerate() {
        labels[m] = slot;
    }
    labels
}

/// Fits PAM k-medoids with Euclidean distance on the rows of `matrix`.
/// Medoids are real patients; `objective` is the summed distance of every
/// patient to its medoid.
pub fn kmedoids_fit(matrix: &FeatureMatrix, params: &ClusterParams) -> Result<ClusterModel> {
    params.validate()?;
    let n = matrix.nrows();
    check_k(params.k, n)?;
    let order = canonical_order(&matrix.patient_ids);
    let x = matrix.values.select(Axis(0), &order);
    let dist = DistanceMatrix::euclidean(x.view());
    let res = pam(&dist, params.k, params.max_iter);

    let mut labels = vec![0 as Label; n];
    for (pos, &orig) in order.iter().enumerate() {
        labels[orig] = res.labels[pos] as Label;
    }
    let medoid_rows: Vec<usize> = res.medoids.iter().map(|&m| order[m]).collect();
    Ok(ClusterModel {
        params: params.clone(),
        n_clusters: params.k,
        selected_features: matrix.feature_names.clone(),
        normalization: normalization_of(matrix),
        centers: Centers::Medoids {
            patient_ids: medoid_rows
                .iter()
                .map(|&i| matrix.patient_ids[i].clone())
                .collect(),
            rows: medoid_rows
                .iter()
                .map(|&i| matrix.values.row(i).to_vec())
                .collect(),
        },
        labels: labels_map(&matrix.patient_ids, &labels),
        objective: res.cost,
        diagnostics: FitDiagnostics {
            restart: 0,
            iterations: res.passes,
            objective_trace: res.trace,
        },
    })
}
