//! Per-subgroup mortality with bootstrap standard errors, and label
//! alignment between clusterings.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{Centers, ClusterModel, Label, NOISE};
use crate::error::{Error, Result};
use crate::model::{Era, StaticRecord};
use crate::rng::{hash64, seeded};

pub const DEFAULT_BOOTSTRAP: usize = 1000;

/// Point estimate and bootstrap standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

/// Fraction of true flags and the sample standard deviation (B − 1
/// denominator) of `b` resample means. Resample `i` draws from its own
/// stream seeded with `hash64(seed, i)`.
pub fn mortality_bootstrap(flags: &[bool], b: usize, seed: u64) -> Result<Estimate> {
    if flags.is_empty() {
        return Err(Error::InvalidParameter("bootstrap needs at least one flag".into()));
    }
    if b == 0 {
        return Err(Error::InvalidParameter("bootstrap needs B >= 1".into()));
    }
    let n = flags.len();
    let deaths = flags.iter().filter(|&&f| f).count();
    let mean = deaths as f64 / n as f64;
    if deaths == 0 || deaths == n {
        return Ok(Estimate { mean, se: 0.0 });
    }
    let means: Vec<f64> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeded(hash64(seed, i as u64));
            let hits = (0..n).filter(|_| flags[rng.gen_range(0..n)]).count();
            hits as f64 / n as f64
        })
        .collect();
    let se = if b < 2 {
        0.0
    } else {
        let m = means.iter().sum::<f64>() / b as f64;
        (means.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (b - 1) as f64).sqrt()
    };
    Ok(Estimate { mean, se })
}

/// Minimum-cost perfect matching on a square matrix. Returns `assign` with
/// `assign[row] = column`.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if cost.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension("cost matrix must be square".into()));
    }
    if cost.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("cost matrix has non-finite entries".into()));
    }
    // 1-based potentials formulation; p[j] is the row matched to column j.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    Ok(assign)
}

/// k × k table: `table[other][reference]` counts patients. Noise is skipped.
pub fn contingency(reference: &[Label], other: &[Label], k: usize) -> Result<Vec<Vec<u64>>> {
    if reference.len() != other.len() {
        return Err(Error::Dimension(format!(
            "label vectors differ in length: {} vs {}",
            reference.len(),
            other.len()
        )));
    }
    let mut table = vec![vec![0u64; k]; k];
    for (&r, &o) in reference.iter().zip(other) {
        if r == NOISE || o == NOISE {
            continue;
        }
        for l in [r, o] {
            if l < 0 || l as usize >= k {
                return Err(Error::LabelOutOfRange { label: l, k });
            }
        }
        table[o as usize][r as usize] += 1;
    }
    Ok(table)
}

/// Permutation `perm[other] = reference` maximizing the total overlap.
pub fn align_by_overlap(reference: &[Label], other: &[Label], k: usize) -> Result<Vec<usize>> {
    let table = contingency(reference, other, k)?;
    let cost: Vec<Vec<f64>> = table
        .iter()
        .map(|r| r.iter().map(|&c| -(c as f64)).collect())
        .collect();
    hungarian(&cost)
}

/// Permutation `perm[other] = reference` minimizing summed Euclidean
/// distance between matched centroids.
pub fn align_by_centroids(reference: &[Vec<f64>], other: &[Vec<f64>]) -> Result<Vec<usize>> {
    if reference.len() != other.len() {
        return Err(Error::ClusterCountMismatch(reference.len(), other.len()));
    }
    let cost: Vec<Vec<f64>> = other
        .iter()
        .map(|o| {
            reference
                .iter()
                .map(|r| {
                    if r.len() != o.len() {
                        return Err(Error::Dimension("centroid widths differ".into()));
                    }
                    Ok(r.iter().zip(o).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    hungarian(&cost)
}

fn center_rows(model: &ClusterModel) -> Option<&[Vec<f64>]> {
    match &model.centers {
        Centers::Centroids { centers } => Some(centers),
        Centers::Medoids { rows, .. } => Some(rows),
        _ => None,
    }
}

/// Permutation mapping `other`'s cluster indices onto `reference`'s.
///
/// Uses the overlap on shared patients when there are any; otherwise the
/// matched distance between centers, which needs both models to be
/// centroid or medoid models over the same features.
pub fn align_labels(reference: &ClusterModel, other: &ClusterModel) -> Result<Vec<usize>> {
    let k = reference.n_clusters;
    if other.n_clusters != k {
        return Err(Error::ClusterCountMismatch(k, other.n_clusters));
    }
    let shared: Vec<&String> = other
        .labels
        .keys()
        .filter(|id| reference.labels.contains_key(*id))
        .collect();
    if !shared.is_empty() {
        let r: Vec<Label> = shared.iter().map(|id| reference.labels[*id]).collect();
        let o: Vec<Label> = shared.iter().map(|id| other.labels[*id]).collect();
        return align_by_overlap(&r, &o, k);
    }
    if reference.selected_features != other.selected_features {
        return Err(Error::FeatureMismatch(
            "models without shared patients must use the same features".into(),
        ));
    }
    match (center_rows(reference), center_rows(other)) {
        (Some(r), Some(o)) => align_by_centroids(r, o),
        _ => Err(Error::InvalidParameter(
            "models without shared patients need centroid or medoid centers to align".into(),
        )),
    }
}

/// Relabels through `perm`; noise stays noise.
pub fn apply_permutation(labels: &[Label], perm: &[usize]) -> Result<Vec<Label>> {
    labels
        .iter()
        .map(|&l| {
            if l == NOISE {
                Ok(NOISE)
            } else {
                usize::try_from(l)
                    .ok()
                    .and_then(|i| perm.get(i))
                    .map(|&p| p as Label)
                    .ok_or(Error::LabelOutOfRange { label: l, k: perm.len() })
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subgroup {
    Cluster(usize),
    Noise,
    Overall,
}

impl fmt::Display for Subgroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subgroup::Cluster(i) => write!(f, "{i}"),
            Subgroup::Noise => f.write_str("noise"),
            Subgroup::Overall => f.write_str("overall"),
        }
    }
}

impl Subgroup {
    pub fn of(label: Label) -> Self {
        if label < 0 {
            Subgroup::Noise
        } else {
            Subgroup::Cluster(label as usize)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Icu,
    Hospital,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrognosisRow {
    pub era: Era,
    pub subgroup: Subgroup,
    pub n: usize,
    pub icu_deaths: usize,
    pub hospital_deaths: usize,
    /// `None` for a subgroup with no patients in this era.
    pub icu: Option<Estimate>,
    pub hospital: Option<Estimate>,
}

/// Clusters of one era ordered from highest to lowest mortality; empty
/// clusters are left out, ties keep the lower index first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub era: Era,
    pub outcome: Outcome,
    pub order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrognosisReport {
    /// Always "bootstrap standard error".
    pub uncertainty: String,
    pub bootstrap: usize,
    pub seed: u64,
    pub k: usize,
    pub rows: Vec<PrognosisRow>,
    pub rankings: Vec<Ranking>,
}

/// Labels of the patients of one era.
#[derive(Debug, Clone, Copy)]
pub struct EraLabels<'a> {
    pub era: Era,
    pub patient_ids: &'a [String],
    pub labels: &'a [Label],
}

fn rate_cmp(a: (usize, usize), b: (usize, usize)) -> Ordering {
    // deaths_a / n_a vs deaths_b / n_b without rounding
    (a.0 as u128 * b.1 as u128).cmp(&(b.0 as u128 * a.1 as u128))
}

/// Mortality per era × subgroup plus an overall row per era, with bootstrap
/// SE from `b` resamples. Rows come per era in input order: clusters
/// `0..k`, then noise if any, then overall.
pub fn subgroup_report(
    eras: &[EraLabels<'_>],
    k: usize,
    statics: &BTreeMap<String, StaticRecord>,
    b: usize,
    seed: u64,
) -> Result<PrognosisReport> {
    let mut rows = Vec::new();
    let mut rankings = Vec::new();
    for (e, part) in eras.iter().enumerate() {
        if part.patient_ids.len() != part.labels.len() {
            return Err(Error::Dimension(format!(
                "{} patients but {} labels",
                part.patient_ids.len(),
                part.labels.len()
            )));
        }
        let mut groups: BTreeMap<Subgroup, (Vec<bool>, Vec<bool>)> =
            (0..k).map(|c| (Subgroup::Cluster(c), Default::default())).collect();
        let mut all = (Vec::new(), Vec::new());
        for (id, &l) in part.patient_ids.iter().zip(part.labels) {
            if l >= k as Label {
                return Err(Error::LabelOutOfRange { label: l, k });
            }
            let s = statics
                .get(id)
                .ok_or_else(|| Error::InvalidParameter(format!("patient `{id}` has no static record")))?;
            let g = groups.entry(Subgroup::of(l)).or_default();
            g.0.push(s.icu_death);
            g.1.push(s.hospital_death);
            all.0.push(s.icu_death);
            all.1.push(s.hospital_death);
        }
        groups.insert(Subgroup::Overall, all);
        let era_seed = hash64(seed, e as u64);
        let era_rows: Vec<PrognosisRow> = groups
            .iter()
            .enumerate()
            .map(|(r, (&subgroup, (icu, hosp)))| {
                let est = |flags: &[bool], outcome: u64| {
                    if flags.is_empty() {
                        Ok(None)
                    } else {
                        mortality_bootstrap(flags, b, hash64(era_seed, 2 * r as u64 + outcome)).map(Some)
                    }
                };
                Ok(PrognosisRow {
                    era: part.era,
                    subgroup,
                    n: icu.len(),
                    icu_deaths: icu.iter().filter(|&&f| f).count(),
                    hospital_deaths: hosp.iter().filter(|&&f| f).count(),
                    icu: est(icu, 0)?,
                    hospital: est(hosp, 1)?,
                })
            })
            .collect::<Result<_>>()?;
        for outcome in [Outcome::Icu, Outcome::Hospital] {
            let mut order: Vec<(usize, (usize, usize))> = era_rows
                .iter()
                .filter_map(|row| match row.subgroup {
                    Subgroup::Cluster(c) if row.n > 0 => {
                        let d = match outcome {
                            Outcome::Icu => row.icu_deaths,
                            Outcome::Hospital => row.hospital_deaths,
                        };
                        Some((c, (d, row.n)))
                    }
                    _ => None,
                })
                .collect();
            order.sort_by(|a, b| rate_cmp(b.1, a.1).then(a.0.cmp(&b.0)));
            rankings.push(Ranking {
                era: part.era,
                outcome,
                order: order.into_iter().map(|(c, _)| c).collect(),
            });
        }
        rows.extend(era_rows);
    }
    Ok(PrognosisReport {
        uncertainty: "bootstrap standard error".into(),
        bootstrap: b,
        seed,
        k,
        rows,
        rankings,
    })
}

impl PrognosisReport {
    pub fn row(&self, era: Era, subgroup: Subgroup) -> Option<&PrognosisRow> {
        self.rows.iter().find(|r| r.era == era && r.subgroup == subgroup)
    }

    pub fn ranking(&self, era: Era, outcome: Outcome) -> Option<&[usize]> {
        self.rankings
            .iter()
            .find(|r| r.era == era && r.outcome == outcome)
            .map(|r| r.order.as_slice())
    }

    /// `era,subgroup,n,icu_mean,icu_se,hosp_mean,hosp_se`; empty subgroups
    /// leave the estimate cells blank.
    pub fn to_csv(&self) -> String {
        let cells = |e: Option<Estimate>| match e {
            Some(e) => format!("{},{}", e.mean, e.se),
            None => ",".to_string(),
        };
        let mut out = String::from("era,subgroup,n,icu_mean,icu_se,hosp_mean,hosp_se\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.era.name(),
                r.subgroup,
                r.n,
                cells(r.icu),
                cells(r.hospital)
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
