//! Cluster validity indices, elbow selection, partition agreement and the
//! algorithm × k sweep used for model selection.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use ndarray::{ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{self, Algorithm, ClusterModel, ClusterParams, FitInput, Label, ZnormGrids};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Within-cluster sum of squared distances to the given centers.
pub fn inertia(x: ArrayView2<f64>, labels: &[Label], centers: &[Vec<f64>]) -> Result<f64> {
    check_len(x, labels)?;
    let mut total = 0.0;
    for (row, &l) in x.rows().into_iter().zip(labels) {
        let c = usize::try_from(l)
            .ok()
            .and_then(|l| centers.get(l))
            .ok_or(Error::LabelOutOfRange {
                label: l,
                k: centers.len(),
            })?;
        if c.len() != row.len() {
            return Err(Error::Dimension("center and row widths differ".into()));
        }
        total += row.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total)
}

fn check_len(x: ArrayView2<f64>, labels: &[Label]) -> Result<()> {
    if x.nrows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} rows but {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    Ok(())
}

/// Cluster centroids and sizes; labels must be `0..k` with every cluster used.
fn centroids(x: ArrayView2<f64>, labels: &[Label]) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    check_len(x, labels)?;
    let max = labels.iter().copied().max().unwrap_or(-1);
    if let Some(&neg) = labels.iter().find(|&&l| l < 0) {
        return Err(Error::LabelOutOfRange {
            label: neg,
            k: (max + 1).max(0) as usize,
        });
    }
    let k = (max + 1) as usize;
    let d = x.ncols();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (row, &l) in x.rows().into_iter().zip(labels) {
        counts[l as usize] += 1;
        for (s, v) in sums[l as usize].iter_mut().zip(row) {
            *s += v;
        }
    }
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(Error::UndefinedIndex(format!("cluster {j} is empty")));
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|v| *v /= c as f64);
    }
    Ok((sums, counts))
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Calinski-Harabasz index `[B/(k-1)] / [W/(n-k)]`; higher is better.
pub fn chi(x: ArrayView2<f64>, labels: &[Label]) -> Result<f64> {
    let (cents, counts) = centroids(x, labels)?;
    let k = cents.len();
    let n = labels.len();
    if k < 2 || n <= k {
        return Err(Error::UndefinedIndex(format!(
            "CHI needs 2 <= k < n (k = {k}, n = {n})"
        )));
    }
    let global: Vec<f64> = x.mean_axis(Axis(0)).expect("n > 0").to_vec();
    let between: f64 = cents
        .iter()
        .zip(&counts)
        .map(|(c, &m)| m as f64 * euclid(c, &global).powi(2))
        .sum();
    let within = inertia(x, labels, &cents)?;
    if within <= 0.0 {
        return Err(Error::UndefinedIndex(
            "CHI undefined with zero within-cluster dispersion".into(),
        ));
    }
    Ok((between / (k - 1) as f64) / (within / (n - k) as f64))
}

/// Davies-Bouldin index `(1/k) Σ_i max_{j≠i} (S_i + S_j) / M_ij`; lower is better.
pub fn dbi(x: ArrayView2<f64>, labels: &[Label]) -> Result<f64> {
    let (cents, counts) = centroids(x, labels)?;
    let k = cents.len();
    if k < 2 {
        return Err(Error::UndefinedIndex(format!("DBI needs k >= 2 (k = {k})")));
    }
    let mut scatter = vec![0.0; k];
    for (row, &l) in x.rows().into_iter().zip(labels) {
        let row = row.to_vec();
        scatter[l as usize] += euclid(&row, &cents[l as usize]);
    }
    for (s, &c) in scatter.iter_mut().zip(&counts) {
        *s /= c as f64;
    }
    let mut total = 0.0;
    for i in 0..k {
        let mut worst = f64::NEG_INFINITY;
        for j in 0..k {
            if i == j {
                continue;
            }
            let m = euclid(&cents[i], &cents[j]);
            if m == 0.0 {
                return Err(Error::CoincidentCentroids {
                    a: i.min(j),
                    b: i.max(j),
                });
            }
            worst = worst.max((scatter[i] + scatter[j]) / m);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

/// Elbow by maximum second difference of the inertia curve over interior k;
/// the smallest k wins ties. Needs at least three consecutive k values.
pub fn elbow_select_k(inertia_by_k: &BTreeMap<usize, f64>) -> Result<usize> {
    let ks: Vec<usize> = inertia_by_k.keys().copied().collect();
    if ks.len() < 3 {
        return Err(Error::InvalidParameter(
            "elbow needs inertia for at least 3 values of k".into(),
        ));
    }
    if ks.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(Error::InvalidParameter(format!(
            "elbow needs consecutive k, got {ks:?}"
        )));
    }
    let i = |k: usize| inertia_by_k[&k];
    let mut best = (ks[1], f64::NEG_INFINITY);
    for &k in &ks[1..ks.len() - 1] {
        let d2 = (i(k - 1) - i(k)) - (i(k) - i(k + 1));
        if d2 > best.1 {
            best = (k, d2);
        }
    }
    Ok(best.0)
}

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

/// Adjusted Rand index from the contingency table.
pub fn ari(a: &[Label], b: &[Label]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "label vectors differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidParameter("ARI needs at least 2 points".into()));
    }
    let mut table: HashMap<(Label, Label), u64> = HashMap::new();
    let mut rows: HashMap<Label, u64> = HashMap::new();
    let mut cols: HashMap<Label, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sa: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sb: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = sa * sb / choose2(a.len() as u64);
    let max = (sa + sb) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityRow {
    pub algorithm: Algorithm,
    /// Requested k, or the number of clusters DBSCAN found.
    pub k: usize,
    /// DBSCAN radius actually used.
    pub eps: Option<f64>,
    /// Sum of squared distances to label-group centroids in feature space;
    /// for k-shape, the summed multivariate SBD to the assigned shapes.
    pub inertia: f64,
    /// Computed in feature space; DBSCAN noise points are left out.
    pub chi: Option<f64>,
    pub dbi: Option<f64>,
    pub n_noise: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub rows: Vec<ValidityRow>,
    pub chosen_algorithm: Algorithm,
    pub chosen_k: usize,
    /// Index into `rows` of the selected model.
    pub chosen_row: usize,
    /// Elbow k per centroid algorithm, where the k range allowed it.
    pub elbow_k: BTreeMap<Algorithm, usize>,
}

impl ValidityReport {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("algorithm,k,inertia,chi,dbi,chosen\n");
        for (i, r) in self.rows.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.algorithm,
                r.k,
                r.inertia,
                opt(r.chi),
                opt(r.dbi),
                u8::from(i == self.chosen_row)
            ));
        }
        out
    }

    pub fn write(&self, csv_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<()> {
        crate::ingest::write_text(csv_path.as_ref(), &self.to_csv())?;
        crate::ingest::write_text(
            json_path.as_ref(),
            &(serde_json::to_string_pretty(self)? + "\n"),
        )
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub report: ValidityReport,
    /// One fitted model per report row.
    pub models: Vec<ClusterModel>,
}

impl SweepOutcome {
    pub fn chosen_model(&self) -> &ClusterModel {
        &self.models[self.report.chosen_row]
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec<'a> {
    pub algorithms: &'a [Algorithm],
    pub k_range: &'a [usize],
    /// Template for every fit (seed, iterations, restarts, min_pts).
    pub base: &'a ClusterParams,
    /// One DBSCAN run per entry; `None` uses the k-distance heuristic.
    pub dbscan_eps: &'a [Option<f64>],
}

fn score_row(
    matrix: &FeatureMatrix,
    model: &ClusterModel,
) -> Result<ValidityRow> {
    let labels = model.labels_for(&matrix.patient_ids)?;
    let keep: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] >= 0).collect();
    let kept_labels: Vec<Label> = keep.iter().map(|&i| labels[i]).collect();
    let x = matrix.values.select(Axis(0), &keep);
    let inertia = if model.algorithm() == Algorithm::KShape {
        model.objective
    } else if keep.is_empty() {
        0.0
    } else {
        let (cents, _) = centroids(x.view(), &kept_labels)?;
        inertia(x.view(), &kept_labels, &cents)?
    };
    let (chi, dbi) = if kept_labels.is_empty() {
        (None, None)
    } else {
        (chi(x.view(), &kept_labels).ok(), dbi(x.view(), &kept_labels).ok())
    };
    Ok(ValidityRow {
        algorithm: model.algorithm(),
        k: model.n_clusters,
        eps: match model.algorithm() {
            Algorithm::Dbscan => model.params.eps,
            _ => None,
        },
        inertia,
        chi,
        dbi,
        n_noise: labels.len() - keep.len(),
    })
}

/// Orders rows for selection: defined CHI first, higher CHI, then lower DBI.
fn better(a: &ValidityRow, b: &ValidityRow) -> bool {
    match (a.chi, b.chi) {
        (Some(_), None) => true,
        (None, _) => false,
        (Some(x), Some(y)) if x != y => x > y,
        _ => match (a.dbi, b.dbi) {
            (Some(x), Some(y)) => x < y,
            (Some(_), None) => true,
            _ => false,
        },
    }
}

/// Fits every (algorithm, k) combination (DBSCAN once per eps entry) and
/// selects a model.
///
/// Each centroid algorithm nominates the k its inertia elbow picks (or, when
/// the k range is too short or not consecutive, its best row by CHI then
/// DBI); DBSCAN nominates its best row by CHI then DBI. Nominees are ranked
/// by CHI (descending), then DBI (ascending), then the order of
/// `spec.algorithms`. Rows follow `spec.algorithms` order, k ascending.
pub fn sweep(matrix: &FeatureMatrix, grids: Option<&ZnormGrids>, spec: &SweepSpec<'_>) -> Result<SweepOutcome> {
    if spec.algorithms.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one algorithm".into()));
    }
    let mut jobs: Vec<ClusterParams> = Vec::new();
    for &alg in spec.algorithms {
        if alg == Algorithm::Dbscan {
            let eps_list: &[Option<f64>] = if spec.dbscan_eps.is_empty() {
                &[None]
            } else {
                spec.dbscan_eps
            };
            for eps in eps_list {
                let mut p = spec.base.clone();
                p.algorithm = alg;
                p.eps = *eps;
                jobs.push(p);
            }
        } else {
            if spec.k_range.is_empty() {
                return Err(Error::InvalidParameter("empty k range".into()));
            }
            for &k in spec.k_range {
                let mut p = spec.base.clone();
                p.algorithm = alg;
                p.k = k;
                jobs.push(p);
            }
        }
    }
    let input = FitInput { matrix, grids };
    let fitted: Vec<(ClusterModel, ValidityRow)> = jobs
        .par_iter()
        .map(|p| {
            let model = cluster::fit(input, p)?;
            let row = score_row(matrix, &model)?;
            Ok((model, row))
        })
        .collect::<Result<Vec<_>>>()?;
    let (models, rows): (Vec<_>, Vec<_>) = fitted.into_iter().unzip();

    let mut elbow_k = BTreeMap::new();
    let mut nominees: Vec<usize> = Vec::new();
    for &alg in spec.algorithms {
        let idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].algorithm == alg).collect();
        let by_best = || {
            idx.iter()
                .copied()
                .fold(None, |acc: Option<usize>, i| match acc {
                    Some(a) if !better(&rows[i], &rows[a]) => Some(a),
                    _ => Some(i),
                })
        };
        let nominee = if alg == Algorithm::Dbscan {
            by_best()
        } else {
            let curve: BTreeMap<usize, f64> = idx.iter().map(|&i| (rows[i].k, rows[i].inertia)).collect();
            match elbow_select_k(&curve) {
                Ok(k) => {
                    elbow_k.insert(alg, k);
                    idx.iter().copied().find(|&i| rows[i].k == k)
                }
                Err(_) => by_best(),
            }
        };
        nominees.extend(nominee);
    }
    let chosen_row = nominees
        .iter()
        .copied()
        .fold(None, |acc: Option<usize>, i| match acc {
            Some(a) if !better(&rows[i], &rows[a]) => Some(a),
            _ => Some(i),
        })
        .expect("at least one nominee");
    Ok(SweepOutcome {
        report: ValidityReport {
            chosen_algorithm: rows[chosen_row].algorithm,
            chosen_k: rows[chosen_row].k,
            chosen_row,
            rows,
            elbow_k,
        },
        models,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn col(v: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((v.len(), 1), v.to_vec()).unwrap()
    }

    #[test]
    fn inertia_examples() {
        let x = col(&[0.0, 1.0, 9.0, 10.0]);
        let c = vec![vec![0.5], vec![9.5]];
        assert_eq!(inertia(x.view(), &[0, 0, 1, 1], &c).unwrap(), 1.0);
        assert_eq!(inertia(x.view(), &[0, 0, 1, 1], &[vec![0.0], vec![9.0]]).unwrap(), 2.0);
        let same = col(&[2.0, 2.0]);
        assert_eq!(inertia(same.view(), &[0, 0], &[vec![2.0]]).unwrap(), 0.0);
        // single cluster: total sum of squares about the mean 5
        assert_eq!(inertia(x.view(), &[0; 4], &[vec![5.0]]).unwrap(), 25.0 + 16.0 + 16.0 + 25.0);
        assert!(matches!(
            inertia(x.view(), &[0, 0, 2, 1], &c),
            Err(Error::LabelOutOfRange { label: 2, k: 2 })
        ));
    }

    #[test]
    fn chi_hand_value() {
        let x = col(&[0.0, 2.0, 10.0, 12.0]);
        assert_eq!(chi(x.view(), &[0, 0, 1, 1]).unwrap(), 50.0);
        assert!(matches!(chi(x.view(), &[0, 1, 2, 3]), Err(Error::UndefinedIndex(_))));
        assert!(matches!(chi(x.view(), &[0, 0, 0, 0]), Err(Error::UndefinedIndex(_))));
    }

    #[test]
    fn dbi_hand_values() {
        let x = col(&[0.0, 2.0, 10.0, 12.0]);
        assert!((dbi(x.view(), &[0, 0, 1, 1]).unwrap() - 0.2).abs() < 1e-15);
        let two = col(&[1.0, 4.0]);
        assert_eq!(dbi(two.view(), &[0, 1]).unwrap(), 0.0);
        let coincident = array![[0.0], [2.0], [1.0], [1.0]];
        assert!(matches!(
            dbi(coincident.view(), &[0, 0, 1, 1]),
            Err(Error::CoincidentCentroids { a: 0, b: 1 })
        ));
    }

    #[test]
    fn elbow_examples() {
        let curve: BTreeMap<usize, f64> =
            [(1, 100.0), (2, 60.0), (3, 20.0), (4, 18.0), (5, 17.0)].into();
        assert_eq!(elbow_select_k(&curve).unwrap(), 3);
        let linear: BTreeMap<usize, f64> = (2..=6).map(|k| (k, 100.0 - 10.0 * k as f64)).collect();
        assert_eq!(elbow_select_k(&linear).unwrap(), 3);
        let gap: BTreeMap<usize, f64> = [(1, 3.0), (2, 2.0), (4, 1.0)].into();
        assert!(elbow_select_k(&gap).is_err());
    }

    #[test]
    fn ari_examples() {
        assert_eq!(ari(&[0, 0, 1, 1, 2], &[5, 5, 3, 3, 9]).unwrap(), 1.0);
        assert_eq!(ari(&[0, 1, 0, 2, 1, 1], &[0; 6]).unwrap(), 0.0);
        assert!(ari(&[0, 1], &[0]).is_err());
    }

    /// ARI from pair counts (n11, n10, n01, n00), independent of the
    /// contingency-table route.
    fn ari_pairs(a: &[Label], b: &[Label]) -> f64 {
        let (mut n11, mut n10, mut n01, mut n00) = (0f64, 0f64, 0f64, 0f64);
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                match (a[i] == a[j], b[i] == b[j]) {
                    (true, true) => n11 += 1.0,
                    (true, false) => n10 += 1.0,
                    (false, true) => n01 += 1.0,
                    (false, false) => n00 += 1.0,
                }
            }
        }
        let den = (n00 + n01) * (n01 + n11) + (n00 + n10) * (n10 + n11);
        if den == 0.0 {
            1.0
        } else {
            2.0 * (n00 * n11 - n01 * n10) / den
        }
    }

    proptest! {
        #[test]
        fn ari_matches_pair_counting(a in prop::collection::vec(0i64..4, 2..40), seed in 0i64..5) {
            let b: Vec<Label> = a.iter().enumerate().map(|(i, v)| if (i as i64 + seed) % 3 == 0 { (v + 1) % 3 } else { *v }).collect();
            prop_assert!((ari(&a, &b).unwrap() - ari_pairs(&a, &b)).abs() < 1e-12);
        }

        #[test]
        fn indices_scale_and_translate(scale in 0.1f64..20.0, shift in -50.0f64..50.0) {
            let x = array![[0.0, 1.0], [1.0, 0.5], [5.0, 5.0], [6.0, 4.0], [0.5, 9.0], [1.0, 8.0]];
            let labels = [0, 0, 1, 1, 2, 2];
            let y = x.mapv(|v| v * scale + shift);
            prop_assert!((chi(x.view(), &labels).unwrap() - chi(y.view(), &labels).unwrap()).abs() < 1e-8);
            prop_assert!((dbi(x.view(), &labels).unwrap() - dbi(y.view(), &labels).unwrap()).abs() < 1e-9);
        }
    }

    fn blobs(sep: f64) -> FeatureMatrix {
        let mut rows = Vec::new();
        for g in 0..3 {
            for i in 0..10 {
                let jitter = ((i * 7 + g * 3) % 10) as f64 / 10.0 - 0.45;
                rows.push([g as f64 * sep + jitter, (i % 3) as f64 * 0.3 - 0.3 + g as f64 * sep * 0.5]);
            }
        }
        let values = Array2::from_shape_fn((30, 2), |(i, j)| rows[i][j]);
        FeatureMatrix::new(
            (0..30).map(|i| format!("p{i:02}")).collect(),
            vec!["a".into(), "b".into()],
            values,
        )
        .unwrap()
    }

    #[test]
    fn separation_ladder_is_monotone() {
        let labels: Vec<Label> = (0..30).map(|i| (i / 10) as Label).collect();
        let mut last = (0.0, f64::INFINITY);
        for sep in [3.0, 6.0, 12.0] {
            let m = blobs(sep);
            let c = chi(m.values.view(), &labels).unwrap();
            let d = dbi(m.values.view(), &labels).unwrap();
            assert!(c > last.0 && d < last.1);
            last = (c, d);
        }
    }

    #[test]
    fn sweep_single_row_and_determinism() {
        let m = blobs(8.0);
        let base = ClusterParams::new(Algorithm::KMeans, 3, 5);
        let spec = SweepSpec {
            algorithms: &[Algorithm::KMeans],
            k_range: &[3],
            base: &base,
            dbscan_eps: &[],
        };
        let out = sweep(&m, None, &spec).unwrap();
        assert_eq!(out.report.rows.len(), 1);
        assert_eq!(out.report.chosen_k, 3);

        let spec = SweepSpec {
            algorithms: &[Algorithm::KMeans, Algorithm::KMedoids, Algorithm::Dbscan],
            k_range: &[2, 3, 4, 5],
            base: &base,
            dbscan_eps: &[Some(2.0)],
        };
        let a = sweep(&m, None, &spec).unwrap();
        let b = sweep(&m, None, &spec).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.report.chosen_k, 3);
        assert_eq!(a.report.rows.len(), 9);
        assert!(a.report.to_csv().starts_with("algorithm,k,inertia,chi,dbi,chosen\nkmeans,2,"));
    }

    #[test]
    fn kshape_requires_grids() {
        let m = blobs(8.0);
        let base = ClusterParams::new(Algorithm::KShape, 3, 5);
        let spec = SweepSpec {
            algorithms: &[Algorithm::KShape],
            k_range: &[3],
            base: &base,
            dbscan_eps: &[],
        };
        assert!(sweep(&m, None, &spec).is_err());
    }
}
