//! Clustering: k-means, k-medoids (PAM), k-shape and DBSCAN, plus frozen
//! assignment of new patients to a fitted model.
//!
//! k-means, k-medoids and DBSCAN run on the normalized feature matrix.
//! k-shape runs on the per-patient z-normed vital grids, since shape-based
//! distance needs ordered time axes.
//!
//! The centroid methods process patients sorted by `patient_id`, so a fit
//! depends on the set of patients and not on file order. DBSCAN scans in
//! input order by definition.

mod dbscan;
mod kmeans;
mod kmedoids;
mod kshape;
mod sbd;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dbscan::{dbscan_fit, eps_heuristic};
pub use kmeans::kmeans_fit;
pub use kmedoids::kmedoids_fit;
pub use kshape::{dominant_eigenvector, extract_shape, kshape_fit};
pub use sbd::{multivariate_sbd, sbd};

use crate::error::{Error, Result};
use crate::features::{apply_frozen, znorm, ColumnStats, FeatureMatrix};
use crate::model::{Cohort, VitalChannel};

/// Cluster index; [`NOISE`] marks DBSCAN outliers.
pub type Label = i64;
pub const NOISE: Label = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    KMeans,
    KMedoids,
    KShape,
    Dbscan,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::KMeans,
        Algorithm::KMedoids,
        Algorithm::KShape,
        Algorithm::Dbscan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::KMeans => "kmeans",
            Algorithm::KMedoids => "kmedoids",
            Algorithm::KShape => "kshape",
            Algorithm::Dbscan => "dbscan",
        }
    }

    pub fn uses_grids(self) -> bool {
        self == Algorithm::KShape
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub algorithm: Algorithm,
    /// Number of clusters; ignored by DBSCAN.
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Relative objective improvement below which Lloyd iterations stop.
    pub tol: f64,
    /// Restarts; the lowest objective wins, ties to the earliest restart.
    pub n_init: usize,
    /// DBSCAN radius; `None` derives it with [`eps_heuristic`].
    pub eps: Option<f64>,
    pub min_pts: usize,
}

impl ClusterParams {
    pub fn new(algorithm: Algorithm, k: usize, seed: u64) -> Self {
        ClusterParams {
            algorithm,
            k,
            seed,
            max_iter: 300,
            tol: 1e-6,
            n_init: 10,
            eps: None,
            min_pts: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.algorithm == Algorithm::Dbscan {
            if self.min_pts == 0 {
                return bad("min_pts must be at least 1");
            }
            if let Some(eps) = self.eps {
                if !(eps > 0.0 && eps.is_finite()) {
                    return bad("eps must be positive and finite");
                }
            }
        } else {
            if self.k == 0 {
                return bad("k must be at least 1");
            }
            if self.n_init == 0 {
                return bad("n_init must be at least 1");
            }
        }
        if !(self.tol >= 0.0) {
            return bad("tol must be non-negative");
        }
        Ok(())
    }
}

/// What a fitted model keeps in order to assign new patients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Centers {
    /// k × features, in normalized feature space.
    Centroids { centers: Vec<Vec<f64>> },
    /// Medoid patients and their normalized feature rows.
    Medoids {
        patient_ids: Vec<String>,
        rows: Vec<Vec<f64>>,
    },
    /// Per cluster, per channel (canonical order), a z-normed shape of length T.
    Shapes { hours: usize, shapes: Vec<Vec<Vec<f64>>> },
    /// Core points with their cluster labels.
    Density {
        eps: f64,
        min_pts: usize,
        core_patient_ids: Vec<String>,
        core_rows: Vec<Vec<f64>>,
        core_labels: Vec<Label>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Index of the winning restart.
    pub restart: usize,
    pub iterations: usize,
    /// Objective after every step of the winning restart: Lloyd inertia
    /// per iteration, PAM cost per accepted swap, k-shape SBD sum per pass.
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub params: ClusterParams,
    /// Number of clusters found (equals `params.k` except for DBSCAN).
    pub n_clusters: usize,
    pub selected_features: Vec<String>,
    pub normalization: Vec<ColumnStats>,
    pub centers: Centers,
    pub labels: BTreeMap<String, Label>,
    /// Final objective: k-means inertia, PAM cost, k-shape SBD sum, or the
    /// within-cluster sum of squares of DBSCAN's non-noise points.
    pub objective: f64,
    pub diagnostics: FitDiagnostics,
}

impl ClusterModel {
    pub fn algorithm(&self) -> Algorithm {
        self.params.algorithm
    }

    /// Labels for `ids`, in that order.
    pub fn labels_for(&self, ids: &[String]) -> Result<Vec<Label>> {
        ids.iter()
            .map(|id| {
                self.labels
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::InvalidParameter(format!("patient `{id}` is not labeled by the model")))
            })
            .collect()
    }

    /// Applies the model's frozen feature selection and normalization to a
    /// raw feature matrix.
    pub fn transform(&self, raw: &FeatureMatrix) -> Result<FeatureMatrix> {
        apply_frozen(raw, &self.selected_features, &self.normalization)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::ingest::write_text(path.as_ref(), &(self.to_json()? + "\n"))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Writes `patient_id,cluster` rows.
pub fn write_labels_csv(path: impl AsRef<Path>, ids: &[String], labels: &[Label]) -> Result<()> {
    let mut out = String::from("patient_id,cluster\n");
    for (id, l) in ids.iter().zip(labels) {
        out.push_str(&format!("{id},{l}\n"));
    }
    crate::ingest::write_text(path.as_ref(), &out)
}

/// Per-patient z-normed grids (each channel z-normed independently), the
/// input of k-shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ZnormGrids {
    pub patient_ids: Vec<String>,
    pub hours: usize,
    data: Vec<f64>,
}

impl ZnormGrids {
    pub fn from_cohort(cohort: &Cohort) -> Result<Self> {
        let hours = cohort.hours().unwrap_or(0);
        let mut data = Vec::with_capacity(cohort.len() * VitalChannel::COUNT * hours);
        for s in &cohort.series {
            if s.hours() != hours {
                return Err(Error::Dimension("grids of unequal length".into()));
            }
            for c in VitalChannel::ALL {
                data.extend(znorm(s.channel(c)));
            }
        }
        Ok(ZnormGrids {
            patient_ids: cohort.patient_ids(),
            hours,
            data,
        })
    }

    /// Grids given as channel-major buffers; each channel is z-normed here.
    pub fn from_raw(patient_ids: Vec<String>, hours: usize, grids: &[Vec<f64>]) -> Result<Self> {
        if patient_ids.len() != grids.len() {
            return Err(Error::Dimension("one grid per patient id required".into()));
        }
        let mut data = Vec::with_capacity(grids.len() * VitalChannel::COUNT * hours);
        for g in grids {
            if g.len() != VitalChannel::COUNT * hours {
                return Err(Error::Dimension(format!(
                    "grid has {} cells, expected {}",
                    g.len(),
                    VitalChannel::COUNT * hours
                )));
            }
            for c in g.chunks(hours) {
                data.extend(znorm(c));
            }
        }
        Ok(ZnormGrids {
            patient_ids,
            hours,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.patient_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patient_ids.is_empty()
    }

    /// Channel-major grid of patient `i`.
    pub fn grid(&self, i: usize) -> &[f64] {
        let w = VitalChannel::COUNT * self.hours;
        &self.data[i * w..(i + 1) * w]
    }
}

pub(crate) fn sq_dist(a: ArrayView1<f64>, b: &[f64]) -> f64 {
    match a.as_slice() {
        Some(a) => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
        None => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
    }
}

/// Row indices sorted by patient id (stable for duplicate ids).
pub(crate) fn canonical_order(ids: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    order
}

/// Index of the nearest row of `centers` by squared Euclidean distance,
/// lowest index on ties.
pub(crate) fn nearest(x: ArrayView1<f64>, centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

pub(crate) fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::TooFewPatients { k, n });
    }
    Ok(())
}

pub(crate) fn labels_map(ids: &[String], labels: &[Label]) -> BTreeMap<String, Label> {
    ids.iter().cloned().zip(labels.iter().copied()).collect()
}

/// Inputs of a fit: k-shape reads the grids, the others the matrix.
#[derive(Debug, Clone, Copy)]
pub struct FitInput<'a> {
    pub matrix: &'a FeatureMatrix,
    pub grids: Option<&'a ZnormGrids>,
}

/// Dispatches on `params.algorithm`.
pub fn fit(input: FitInput<'_>, params: &ClusterParams) -> Result<ClusterModel> {
    match params.algorithm {
        Algorithm::KMeans => kmeans_fit(input.matrix, params),
        Algorithm::KMedoids => kmedoids_fit(input.matrix, params),
        Algorithm::Dbscan => dbscan_fit(input.matrix, params),
        Algorithm::KShape => {
            let grids = input
                .grids
                .ok_or_else(|| Error::InvalidParameter("k-shape needs vital grids".into()))?;
            let mut model = kshape_fit(grids, params)?;
            model.selected_features = input.matrix.feature_names.clone();
            model.normalization = input.matrix.column_stats.clone().unwrap_or_default();
            Ok(model)
        }
    }
}

/// New patients for [`assign_frozen`].
#[derive(Debug, Clone, Copy)]
pub enum AssignInput<'a> {
    /// Feature rows already passed through [`ClusterModel::transform`].
    Features(&'a FeatureMatrix),
    Grids(&'a ZnormGrids),
}

/// Labels new patients with a fitted model, without refitting. Ties go to
/// the lowest cluster index; DBSCAN returns [`NOISE`] beyond `eps` of every
/// core point.
pub fn assign_frozen(model: &ClusterModel, input: AssignInput<'_>) -> Result<Vec<Label>> {
    match (&model.centers, input) {
        (Centers::Shapes { hours, shapes }, AssignInput::Grids(g)) => {
            if g.hours != *hours {
                return Err(Error::Dimension(format!(
                    "model shapes have {hours} hours, grids have {}",
                    g.hours
                )));
            }
            let flat: Vec<Vec<f64>> = shapes.iter().map(|s| sbd::unit_channels(&s.concat(), *hours)).collect();
            Ok((0..g.len())
                .into_par_iter()
                .map(|i| kshape::nearest_shape(&sbd::unit_channels(g.grid(i), *hours), &flat, *hours).0 as Label)
                .collect())
        }
        (Centers::Shapes { .. }, AssignInput::Features(_)) => Err(Error::InvalidParameter(
            "k-shape models assign vital grids, not feature rows".into(),
        )),
        (_, AssignInput::Grids(_)) => Err(Error::InvalidParameter(format!(
            "{} models assign feature rows, not vital grids",
            model.algorithm()
        ))),
        (centers, AssignInput::Features(m)) => {
            if m.feature_names != model.selected_features {
                let missing: Vec<&String> = model
                    .selected_features
                    .iter()
                    .filter(|n| !m.feature_names.contains(n))
                    .collect();
                return Err(Error::FeatureMismatch(if missing.is_empty() {
                    "feature columns differ from the model's in order or number".into()
                } else {
                    format!("missing features {missing:?}")
                }));
            }
            Ok(assign_rows(centers, m.values.view()))
        }
    }
}

fn assign_rows(centers: &Centers, x: ArrayView2<f64>) -> Vec<Label> {
    let rows: Vec<ArrayView1<f64>> = x.rows().into_iter().collect();
    rows.par_iter()
        .map(|row| match centers {
            Centers::Centroids { centers } => nearest(*row, centers).0 as Label,
            Centers::Medoids { rows, .. } => nearest(*row, rows).0 as Label,
            Centers::Density {
                eps,
                core_rows,
                core_labels,
                ..
            } => {
                if core_rows.is_empty() {
                    return NOISE;
                }
                let (j, d2) = nearest(*row, core_rows);
                if d2.sqrt() <= *eps {
                    core_labels[j]
                } else {
                    NOISE
                }
            }
            Centers::Shapes { .. } => unreachable!("handled by the caller"),
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;
    use ndarray::Array2;

    pub fn matrix(rows: &[&[f64]]) -> FeatureMatrix {
        let d = rows[0].len();
        let values = Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j]);
        FeatureMatrix::new(
            (0..rows.len()).map(|i| format!("p{i:03}")).collect(),
            (0..d).map(|j| format!("f{j}")).collect(),
            values,
        )
        .unwrap()
    }

    pub fn line(points: &[f64]) -> FeatureMatrix {
        let rows: Vec<Vec<f64>> = points.iter().map(|p| vec![*p]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        matrix(&refs)
    }
}

#[cfg(test)]
mod tests {
    use super::test_util::*;
    use super::*;

    #[test]
    fn frozen_assignment_tie_goes_to_lowest_index() {
        let m = line(&[0.0, 1.0, 9.0, 10.0]);
        let mut model = kmeans_fit(&m, &ClusterParams::new(Algorithm::KMeans, 2, 1)).unwrap();
        model.centers = Centers::Centroids {
            centers: vec![vec![0.0], vec![100.0], vec![2.0]],
        };
        let probe = line(&[1.0]);
        assert_eq!(assign_frozen(&model, AssignInput::Features(&probe)).unwrap(), vec![0]);
    }

    #[test]
    fn frozen_assignment_checks_feature_names() {
        let m = line(&[0.0, 1.0, 9.0, 10.0]);
        let model = kmeans_fit(&m, &ClusterParams::new(Algorithm::KMeans, 2, 1)).unwrap();
        let mut other = line(&[0.5]);
        other.feature_names = vec!["other".into()];
        let err = assign_frozen(&model, AssignInput::Features(&other)).unwrap_err();
        assert!(matches!(err, Error::FeatureMismatch(_)), "{err}");
    }

    #[test]
    fn model_json_round_trip() {
        let m = line(&[0.0, 1.0, 9.0, 10.0]);
        let model = kmeans_fit(&m, &ClusterParams::new(Algorithm::KMeans, 2, 3)).unwrap();
        let back = ClusterModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn params_validation() {
        let mut p = ClusterParams::new(Algorithm::KMeans, 0, 1);
        assert!(p.validate().is_err());
        p.k = 2;
        assert!(p.validate().is_ok());
        let mut d = ClusterParams::new(Algorithm::Dbscan, 0, 1);
        d.eps = Some(-1.0);
        assert!(d.validate().is_err());
        d.eps = Some(1.0);
        d.min_pts = 0;
        assert!(d.validate().is_err());
        assert_eq!("kshape".parse::<Algorithm>().unwrap(), Algorithm::KShape);
        assert!("kmode".parse::<Algorithm>().is_err());
    }
}
