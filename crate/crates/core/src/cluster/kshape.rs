//! k-shape on multichannel grids.
//!
//! Assignment uses the multivariate shape-based distance (one shift shared
//! by all channels). Refinement replaces each cluster's per-channel shape by
//! the dominant eigenvector of `Qᵀ (Σ aᵢaᵢᵀ) Q`, `Q = I - 11ᵀ/T`, where the
//! `aᵢ` are the members aligned to the current shape and z-normed.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use super::sbd::{unit_channels, unit_sbd};
use super::{
    canonical_order, check_k, labels_map, Centers, ClusterModel, ClusterParams,
    FitDiagnostics, Label, ZnormGrids,
};
use crate::error::Result;
use crate::features::{znorm, CONSTANT_EPS};
use crate::model::VitalChannel;
use crate::rng::{hash64, seeded};

const POWER_TOL: f64 = 1e-8;
const POWER_MAX_ITER: usize = 100;

/// Dominant eigenvector of the symmetric PSD `t × t` matrix `m` (row-major)
/// by power iteration from `start`, unit length. Returns `None` when the
/// iteration collapses to zero.
pub fn dominant_eigenvector(m: &[f64], t: usize, start: &[f64]) -> Option<Vec<f64>> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut v = start.to_vec();
    let n0 = norm(&v);
    if n0 < 1e-300 {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= n0);
    for _ in 0..POWER_MAX_ITER {
        let mut next = vec![0.0; t];
        for (i, out) in next.iter_mut().enumerate() {
            *out = (0..t).map(|j| m[i * t + j] * v[j]).sum();
        }
        let nn = norm(&next);
        if nn < 1e-300 {
            return None;
        }
        next.iter_mut().for_each(|x| *x /= nn);
        let diff = norm(&next.iter().zip(&v).map(|(a, b)| a - b).collect::<Vec<_>>());
        v = next;
        if diff < POWER_TOL {
            break;
        }
    }
    Some(v)
}

/// Shifts `x` by `w` with zero padding: `out_t = x_{t-w}`.
#[cfg(test)]
fn shift(x: &[f64], w: i64) -> Vec<f64> {
    let n = x.len() as i64;
    (0..n)
        .map(|t| {
            let s = t - w;
            if (0..n).contains(&s) {
                x[s as usize]
            } else {
                0.0
            }
        })
        .collect()
}

/// Streams aligned members of one channel into the matrix `Σ bᵢbᵢᵀ` of
/// centered z-normed members and their mean.
struct ShapeAccumulator {
    t: usize,
    mat: Vec<f64>,
    sum: Vec<f64>,
    count: usize,
    buf: Vec<f64>,
}

impl ShapeAccumulator {
    fn new(t: usize) -> Self {
        ShapeAccumulator {
            t,
            mat: vec![0.0; t * t],
            sum: vec![0.0; t],
            count: 0,
            buf: vec![0.0; t],
        }
    }

    /// Adds `x` shifted by `w` with zero padding.
    fn add_shifted(&mut self, x: &[f64], w: i64) {
        let t = self.t;
        let s = w.unsigned_abs() as usize;
        self.buf.fill(0.0);
        if w >= 0 {
            self.buf[s..].copy_from_slice(&x[..t - s]);
        } else {
            self.buf[..t - s].copy_from_slice(&x[s..]);
        }
        let mean = self.buf.iter().sum::<f64>() / t as f64;
        let sd = (self.buf.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t as f64).sqrt();
        if sd > CONSTANT_EPS {
            // z-normed values already have zero mean
            self.buf.iter_mut().for_each(|v| *v = (*v - mean) / sd);
        } else {
            self.buf.fill(0.0);
        }
        // upper triangle only; mirrored in `finish`
        for (i, &bi) in self.buf.iter().enumerate() {
            self.sum[i] += bi;
            let row = &mut self.mat[i * t + i..(i + 1) * t];
            for (m, bj) in row.iter_mut().zip(&self.buf[i..]) {
                *m += bi * bj;
            }
        }
        self.count += 1;
    }

    fn finish(self) -> Vec<f64> {
        let t = self.t;
        if self.count == 0 {
            return vec![0.0; t];
        }
        let mean: Vec<f64> = self.sum.iter().map(|v| v / self.count as f64).collect();
        let mut mat = self.mat;
        for i in 0..t {
            for j in 0..i {
                mat[i * t + j] = mat[j * t + i];
            }
        }
        let mean_norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        let start = if mean_norm > 1e-12 {
            mean.clone()
        } else {
            // Column of largest norm: a non-trivial vector in the range of the matrix.
            let col = (0..t)
                .map(|j| (j, (0..t).map(|i| mat[i * t + j].powi(2)).sum::<f64>()))
                .fold((0, -1.0), |b, c| if c.1 > b.1 { c } else { b })
                .0;
            (0..t).map(|i| mat[i * t + col]).collect()
        };
        let Some(mut v) = dominant_eigenvector(&mat, t, &start) else {
            return vec![0.0; t];
        };
        let agreement: f64 = v.iter().zip(&mean).map(|(a, b)| a * b).sum();
        if agreement < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        znorm(&v)
    }
}

/// Shape of one channel from already aligned member series.
pub fn extract_shape(aligned: &[Vec<f64>], t: usize) -> Vec<f64> {
    let mut acc = ShapeAccumulator::new(t);
    for a in aligned {
        acc.add_shifted(a, 0);
    }
    acc.finish()
}

/// Nearest shape by multivariate SBD (lowest index on ties), its distance
/// and the shift aligning the grid to it. Grid and shapes are in
/// [`unit_channels`] form.
pub(crate) fn nearest_shape(grid: &[f64], shapes: &[Vec<f64>], hours: usize) -> (usize, f64, i64) {
    let mut best = (0, f64::INFINITY, 0);
    for (j, s) in shapes.iter().enumerate() {
        let (d, w) = unit_sbd(s, grid, hours);
        if d < best.1 {
            best = (j, d, w);
        }
    }
    best
}

/// New shapes from members aligned by `shifts` (their shift to the
/// current shape of their cluster).
fn refine(grids: &[&[f64]], labels: &[usize], shifts: &[i64], k: usize, hours: usize) -> Vec<Vec<f64>> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    members
        .par_iter()
        .map(|idx| {
            let mut shape = Vec::with_capacity(VitalChannel::COUNT * hours);
            for c in 0..VitalChannel::COUNT {
                let mut acc = ShapeAccumulator::new(hours);
                for &i in idx {
                    acc.add_shifted(&grids[i][c * hours..(c + 1) * hours], shifts[i]);
                }
                shape.extend(acc.finish());
            }
            shape
        })
        .collect()
}

struct ShapeRun {
    labels: Vec<usize>,
    shapes: Vec<Vec<f64>>,
    objective: f64,
    trace: Vec<f64>,
    iterations: usize,
}

/// `unit` holds the [`unit_channels`] form of `grids`.
fn run(grids: &[&[f64]], unit: &[Vec<f64>], hours: usize, k: usize, seed: u64, max_iter: usize, tol: f64) -> ShapeRun {
    let n = grids.len();
    let mut rng = seeded(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut labels = vec![0usize; n];
    for (pos, &i) in perm.iter().enumerate() {
        labels[i] = if pos < k { pos } else { rng.gen_range(0..k) };
    }
    // zero shapes align every member at shift 0
    let mut shifts = vec![0i64; n];
    let mut shapes;
    let mut trace: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut objective;
    loop {
        iterations += 1;
        shapes = refine(grids, &labels, &shifts, k, hours);
        let unit_shapes: Vec<Vec<f64>> = shapes.iter().map(|s| unit_channels(s, hours)).collect();
        let found: Vec<(usize, f64, i64)> = unit.par_iter().map(|g| nearest_shape(g, &unit_shapes, hours)).collect();
        let mut next: Vec<usize> = found.iter().map(|f| f.0).collect();
        let mut dist: Vec<f64> = found.iter().map(|f| f.1).collect();
        shifts = found.iter().map(|f| f.2).collect();
        for i in repair_empty(&mut next, &mut dist, k) {
            shifts[i] = unit_sbd(&unit_shapes[next[i]], &unit[i], hours).1;
        }
        objective = dist.iter().sum::<f64>();
        let settled = trace
            .last()
            .is_some_and(|&prev| (prev - objective).abs() <= tol * prev.abs());
        trace.push(objective);
        let stable = next == labels || settled;
        labels = next;
        if stable || iterations >= max_iter.max(1) {
            break;
        }
    }
    ShapeRun {
        labels,
        shapes,
        objective,
        trace,
        iterations,
    }
}

/// Moves the farthest point of a multi-member cluster into each empty
/// cluster; returns the moved points.
fn repair_empty(labels: &mut [usize], dist: &mut [f64], k: usize) -> Vec<usize> {
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    let mut moved = Vec::new();
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
        let i = far.expect("n >= k");
        counts[labels[i]] -= 1;
        labels[i] = j;
        counts[j] = 1;
        dist[i] = 0.0;
        moved.push(i);
    }
    moved
}

/// Fits k-shape on z-normed grids. Restart `r` draws its random initial
/// partition from `hash64(params.seed, r)`; the lowest summed distance wins.
/// `selected_features` and `normalization` of the returned model are empty;
/// [`super::fit`] fills them from the feature matrix.
pub fn kshape_fit(grids: &ZnormGrids, params: &ClusterParams) -> Result<ClusterModel> {
    params.validate()?;
    let n = grids.len();
    check_k(params.k, n)?;
    let hours = grids.hours;
    let order = canonical_order(&grids.patient_ids);
    let ordered: Vec<&[f64]> = order.iter().map(|&i| grids.grid(i)).collect();
    let unit: Vec<Vec<f64>> = ordered.iter().map(|g| unit_channels(g, hours)).collect();
    let runs: Vec<ShapeRun> = (0..params.n_init)
        .into_par_iter()
        .map(|r| run(&ordered, &unit, hours, params.k, hash64(params.seed, r as u64), params.max_iter, params.tol))
        .collect();
    let (restart, best) = runs
        .into_iter()
        .enumerate()
        .min_by(|a, b| a.1.objective.total_cmp(&b.1.objective))
        .expect("n_init >= 1");
    let mut labels = vec![0 as Label; n];
    for (pos, &orig) in order.iter().enumerate() {
        labels[orig] = best.labels[pos] as Label;
    }
    let shapes = best
        .shapes
        .iter()
        .map(|s| s.chunks(hours).map(|c| c.to_vec()).collect())
        .collect();
    Ok(ClusterModel {
        params: params.clone(),
        n_clusters: params.k,
        selected_features: Vec::new(),
        normalization: Vec::new(),
        centers: Centers::Shapes { hours, shapes },
        labels: labels_map(&grids.patient_ids, &labels),
        objective: best.objective,
        diagnostics: FitDiagnostics {
            restart,
            iterations: best.iterations,
            objective_trace: best.trace,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::super::{assign_frozen, sbd, Algorithm, AssignInput};
    use super::*;
    use crate::validity::ari;
    use nalgebra::{DMatrix, SymmetricEigen};

    fn grid_from(channels: [Vec<f64>; 5]) -> Vec<f64> {
        channels.concat()
    }

    #[test]
    fn identical_patients_single_cluster() {
        let base = grid_from(std::array::from_fn(|c| {
            (0..8).map(|t| ((t * (c + 2)) % 7) as f64 + c as f64).collect()
        }));
        let ids: Vec<String> = (0..6).map(|i| format!("p{i}")).collect();
        let grids = ZnormGrids::from_raw(ids, 8, &vec![base.clone(); 6]).unwrap();
        let model = kshape_fit(&grids, &ClusterParams::new(Algorithm::KShape, 1, 3)).unwrap();
        assert!(model.objective.abs() < 1e-9);
        let Centers::Shapes { shapes, .. } = &model.centers else {
            panic!()
        };
        for c in 0..5 {
            let z = znorm(&base[c * 8..(c + 1) * 8]);
            let s = &shapes[0][c];
            let same = s.iter().zip(&z).all(|(a, b)| (a - b).abs() < 1e-6);
            let flipped = s.iter().zip(&z).all(|(a, b)| (a + b).abs() < 1e-6);
            assert!(same || flipped, "channel {c}");
        }
    }

    fn wave_a(t: usize, lag: usize) -> f64 {
        if t == 2 + lag { 6.0 } else if t == 3 + lag { 3.0 } else { 0.0 }
    }

    fn wave_b(t: usize, lag: usize) -> f64 {
        ((t + lag) as f64 * 0.9).sin() * 2.0 + if t % 2 == 0 { 1.0 } else { -1.0 }
    }

    #[test]
    fn separates_shifted_waveform_families() {
        let mut raw = Vec::new();
        let mut truth = Vec::new();
        for i in 0..24 {
            let lag = i % 3;
            let g = if i % 2 == 0 {
                grid_from(std::array::from_fn(|c| (0..8).map(|t| wave_a(t, lag) * (1.0 + c as f64 * 0.1)).collect()))
            } else {
                grid_from(std::array::from_fn(|c| (0..8).map(|t| wave_b(t, lag) + c as f64).collect()))
            };
            raw.push(g);
            truth.push((i % 2) as Label);
        }
        // Planted structure: within-family SBD is below between-family SBD.
        let a0: Vec<f64> = (0..8).map(|t| wave_a(t, 0)).collect();
        let a1: Vec<f64> = (0..8).map(|t| wave_a(t, 1)).collect();
        let b0: Vec<f64> = (0..8).map(|t| wave_b(t, 0)).collect();
        assert!(sbd(&a0, &a1).unwrap().0 < sbd(&a0, &b0).unwrap().0);

        let ids: Vec<String> = (0..24).map(|i| format!("p{i:02}")).collect();
        let grids = ZnormGrids::from_raw(ids.clone(), 8, &raw).unwrap();
        let model = kshape_fit(&grids, &ClusterParams::new(Algorithm::KShape, 2, 5)).unwrap();
        let labels = model.labels_for(&ids).unwrap();
        assert_eq!(ari(&truth, &labels).unwrap(), 1.0);
        let again = assign_frozen(&model, AssignInput::Grids(&grids)).unwrap();
        assert_eq!(again, labels);
    }

    #[test]
    fn power_iteration_matches_dense_eigensolver() {
        for seed in 0..20u64 {
            let mut rng = seeded(seed);
            let base: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let members: Vec<Vec<f64>> = (0..12)
                .map(|_| base.iter().map(|b| b + rng.gen_range(-0.5..0.5)).collect())
                .collect();
            let shape = extract_shape(&members, 8);

            let mut m = DMatrix::<f64>::zeros(8, 8);
            for a in &members {
                let z = znorm(a);
                let v = nalgebra::DVector::from_vec(z);
                m += &v * v.transpose();
            }
            let q = DMatrix::<f64>::identity(8, 8) - DMatrix::from_element(8, 8, 1.0 / 8.0);
            let mq = q.transpose() * m * &q;
            let eig = SymmetricEigen::new(mq);
            let top = eig.eigenvalues.imax();
            let ev: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
            let ev = znorm(&ev);
            let same = shape.iter().zip(&ev).all(|(a, b)| (a - b).abs() < 1e-6);
            let flipped = shape.iter().zip(&ev).all(|(a, b)| (a + b).abs() < 1e-6);
            assert!(same || flipped, "seed {seed}");
        }
    }

    #[test]
    fn shift_pads_with_zeros() {
        assert_eq!(shift(&[1.0, 2.0, 3.0], 1), vec![0.0, 1.0, 2.0]);
        assert_eq!(shift(&[1.0, 2.0, 3.0], -1), vec![2.0, 3.0, 0.0]);
    }

    #[test]
    fn k_above_n_is_an_error() {
        let grids = ZnormGrids::from_raw(vec!["a".into()], 3, &[vec![1.0; 15]]).unwrap();
        assert!(kshape_fit(&grids, &ClusterParams::new(Algorithm::KShape, 2, 0)).is_err());
    }
}
