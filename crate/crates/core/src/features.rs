//! Interpretable feature representation of a patient grid.
//!
//! Every channel contributes 16 intra-signal statistics and every unordered
//! channel pair 3 inter-signal statistics, for 5 × 16 + 10 × 3 = 110
//! columns named `<channel>__<feature>` and `<chanA>x<chanB>__<feature>`.
//! Standard deviations are population (divide by n) throughout. Statistics
//! that would divide by a vanishing spread return 0 instead of NaN.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Cohort, PatientSeries, VitalChannel};

/// Spread below which a signal or column is treated as constant.
pub const CONSTANT_EPS: f64 = 1e-12;

pub const CATALOG_VERSION: &str = "vitals-v1";

pub const INTRA_FEATURES: [&str; 16] = [
    "mean",
    "std",
    "min",
    "max",
    "median",
    "iqr",
    "skewness",
    "kurtosis",
    "slope",
    "intercept",
    "autocorr_lag1",
    "abs_energy",
    "mean_abs_change",
    "mean_crossings",
    "first",
    "last",
];

pub const INTER_FEATURES: [&str; 3] = ["pearson", "max_ncc", "ncc_shift"];

/// The versioned feature catalog.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureCatalog {
    pub version: String,
    pub intra: Vec<String>,
    pub inter: Vec<String>,
}

impl Default for FeatureCatalog {
    fn default() -> Self {
        FeatureCatalog {
            version: CATALOG_VERSION.into(),
            intra: INTRA_FEATURES.iter().map(|s| s.to_string()).collect(),
            inter: INTER_FEATURES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl FeatureCatalog {
    /// Unordered channel pairs in canonical order.
    pub fn channel_pairs() -> Vec<(VitalChannel, VitalChannel)> {
        let mut pairs = Vec::with_capacity(10);
        for (i, a) in VitalChannel::ALL.iter().enumerate() {
            for b in &VitalChannel::ALL[i + 1..] {
                pairs.push((*a, *b));
            }
        }
        pairs
    }

    /// Column names: intra features channel by channel, then pair features.
    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.len());
        for c in VitalChannel::ALL {
            for f in &self.intra {
                names.push(format!("{}__{}", c.code(), f));
            }
        }
        for (a, b) in Self::channel_pairs() {
            for f in &self.inter {
                names.push(format!("{}x{}__{}", a.code(), b.code(), f));
            }
        }
        names
    }

    pub fn len(&self) -> usize {
        VitalChannel::COUNT * self.intra.len() + 10 * self.inter.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self) -> Result<()> {
        if *self != FeatureCatalog::default() {
            return Err(Error::InvalidParameter(format!(
                "unsupported feature catalog `{}`; this build implements `{CATALOG_VERSION}`",
                self.version
            )));
        }
        Ok(())
    }
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population standard deviation.
pub fn pop_std(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Z-normalizes a series; a constant series maps to all zeros.
pub fn znorm(x: &[f64]) -> Vec<f64> {
    let m = mean(x);
    let s = pop_std(x);
    if s > CONSTANT_EPS {
        x.iter().map(|v| (v - m) / s).collect()
    } else {
        vec![0.0; x.len()]
    }
}

/// Linear-interpolated quantile of sorted data (the "type 7" rule).
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Least-squares fit of `x_t` against `t = 0..n`; returns (slope, intercept).
pub fn linear_fit(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let t_mean = (n - 1.0) / 2.0;
    let x_mean = mean(x);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (t, v) in x.iter().enumerate() {
        let dt = t as f64 - t_mean;
        sxy += dt * (v - x_mean);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    (slope, x_mean - slope * t_mean)
}

/// The 16 intra-signal statistics of one channel, in [`INTRA_FEATURES`] order.
pub fn extract_intra(x: &[f64]) -> [f64; 16] {
    let n = x.len();
    let nf = n as f64;
    let m = mean(x);
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / nf;
    let std = m2.sqrt();
    let (skew, kurt) = if std < CONSTANT_EPS {
        (0.0, 0.0)
    } else {
        let m3 = x.iter().map(|v| (v - m).powi(3)).sum::<f64>() / nf;
        let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / nf;
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    };
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (slope, intercept) = linear_fit(x);
    let denom: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
    let autocorr = if denom < CONSTANT_EPS {
        0.0
    } else {
        x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum::<f64>() / denom
    };
    let abs_energy = x.iter().map(|v| v * v).sum();
    let mean_abs_change = x.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (nf - 1.0);
    let crossings = x
        .windows(2)
        .filter(|w| (w[0] > m) != (w[1] > m))
        .count() as f64;
    [
        m,
        std,
        sorted[0],
        sorted[n - 1],
        quantile_sorted(&sorted, 0.5),
        quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25),
        skew,
        kurt,
        slope,
        intercept,
        autocorr,
        abs_energy,
        mean_abs_change,
        crossings,
        x[0],
        x[n - 1],
    ]
}

/// Shifts `0, -1, 1, -2, 2, ...` up to `±(len - 1)`: the tie-breaking order
/// for every arg-max over shifts.
pub fn shift_order(len: usize) -> impl Iterator<Item = i64> {
    std::iter::once(0).chain((1..len as i64).flat_map(|s| [-s, s]))
}

/// `Σ_t a_t · b_{t-w}` over indices inside both series (no wrap-around).
pub fn shifted_dot(a: &[f64], b: &[f64], w: i64) -> f64 {
    let n = a.len().min(b.len());
    let s = w.unsigned_abs() as usize;
    if s >= n {
        return 0.0;
    }
    let (a, b) = if w >= 0 { (&a[s..n], &b[..n - s]) } else { (&a[..n - s], &b[s..n]) };
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let (sa, sb) = (pop_std(a), pop_std(b));
    if sa < CONSTANT_EPS || sb < CONSTANT_EPS {
        return 0.0;
    }
    let cov = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / a.len() as f64;
    (cov / (sa * sb)).clamp(-1.0, 1.0)
}

/// Pearson correlation, maximum normalized cross-correlation of the
/// z-normed channels (dot product at a shift divided by T) and its shift.
pub fn extract_inter(a: &[f64], b: &[f64]) -> [f64; 3] {
    let za = znorm(a);
    let zb = znorm(b);
    let n = a.len() as f64;
    let mut best = f64::NEG_INFINITY;
    let mut best_w = 0;
    for w in shift_order(a.len()) {
        let v = shifted_dot(&za, &zb, w) / n;
        if v > best {
            best = v;
            best_w = w;
        }
    }
    [pearson(a, b), best.clamp(-1.0, 1.0), best_w as f64]
}

/// All 110 features of one patient, in catalog order.
pub fn extract_patient(series: &PatientSeries) -> Vec<f64> {
    let mut row = Vec::with_capacity(110);
    for c in VitalChannel::ALL {
        row.extend_from_slice(&extract_intra(series.channel(c)));
    }
    for (a, b) in FeatureCatalog::channel_pairs() {
        row.extend_from_slice(&extract_inter(series.channel(a), series.channel(b)));
    }
    row
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

/// Patients × named features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub patient_ids: Vec<String>,
    pub feature_names: Vec<String>,
    pub values: Array2<f64>,
    /// Per-column (mean, std) captured by [`normalize_features`].
    pub column_stats: Option<Vec<ColumnStats>>,
}

impl FeatureMatrix {
    pub fn new(patient_ids: Vec<String>, feature_names: Vec<String>, values: Array2<f64>) -> Result<Self> {
        if values.nrows() != patient_ids.len() || values.ncols() != feature_names.len() {
            return Err(Error::Dimension(format!(
                "matrix is {}x{} but there are {} ids and {} names",
                values.nrows(),
                values.ncols(),
                patient_ids.len(),
                feature_names.len()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = feature_names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::FeatureMismatch(format!("duplicate feature `{dup}`")));
        }
        Ok(FeatureMatrix {
            patient_ids,
            feature_names,
            values,
            column_stats: None,
        })
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    /// Restricts to the named columns, in the given order. Column stats
    /// follow their columns.
    pub fn select_columns(&self, names: &[String]) -> Result<FeatureMatrix> {
        let idx = names
            .iter()
            .map(|n| {
                self.column_index(n)
                    .ok_or_else(|| Error::FeatureMismatch(format!("feature `{n}` is missing")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = FeatureMatrix::new(
            self.patient_ids.clone(),
            names.to_vec(),
            self.values.select(Axis(1), &idx),
        )?;
        out.column_stats = self
            .column_stats
            .as_ref()
            .map(|s| idx.iter().map(|&i| s[i]).collect());
        Ok(out)
    }

    /// Rows at the given indices, in that order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            patient_ids: rows.iter().map(|&i| self.patient_ids[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            values: self.values.select(Axis(0), rows),
            column_stats: self.column_stats.clone(),
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("patient_id");
        for n in &self.feature_names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (id, row) in self.patient_ids.iter().zip(self.values.rows()) {
            out.push_str(id);
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        crate::ingest::write_text(path.as_ref(), &out)
    }

    /// Sidecar `feature,mean,std` file; fails when no stats were recorded.
    pub fn write_stats_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let stats = self
            .column_stats
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("matrix has no column stats".into()))?;
        write_stats_csv(path, &self.feature_names, stats)
    }
}

pub fn write_stats_csv(path: impl AsRef<Path>, names: &[String], stats: &[ColumnStats]) -> Result<()> {
    let mut out = String::from("feature,mean,std\n");
    for (n, s) in names.iter().zip(stats) {
        out.push_str(&format!("{n},{},{}\n", s.mean, s.std));
    }
    crate::ingest::write_text(path.as_ref(), &out)
}

/// Feature matrix of a cohort, rows in cohort order. Rows are computed in
/// parallel on the current rayon pool; each row depends only on its patient.
pub fn assemble_matrix(cohort: &Cohort, catalog: &FeatureCatalog) -> Result<FeatureMatrix> {
    catalog.check()?;
    let rows: Vec<Vec<f64>> = cohort.series.par_iter().map(extract_patient).collect();
    let ncols = catalog.len();
    let mut values = Array2::zeros((rows.len(), ncols));
    for (mut dst, src) in values.rows_mut().into_iter().zip(&rows) {
        dst.assign(&ArrayView1::from(src.as_slice()));
    }
    FeatureMatrix::new(cohort.patient_ids(), catalog.names(), values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    NonFinite,
    ZeroVariance,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropReason::NonFinite => "non-finite",
            DropReason::ZeroVariance => "zero variance",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedColumn {
    pub name: String,
    pub reason: DropReason,
}

fn column_std(col: ArrayView1<f64>) -> f64 {
    let n = col.len() as f64;
    let m = col.sum() / n;
    (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt()
}

/// Drops columns holding a non-finite entry or with population std below
/// [`CONSTANT_EPS`].
pub fn clean_features(matrix: &FeatureMatrix) -> Result<(FeatureMatrix, Vec<DroppedColumn>)> {
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for (j, col) in matrix.values.columns().into_iter().enumerate() {
        let name = &matrix.feature_names[j];
        let reason = if col.iter().any(|v| !v.is_finite()) {
            Some(DropReason::NonFinite)
        } else if column_std(col) < CONSTANT_EPS {
            Some(DropReason::ZeroVariance)
        } else {
            None
        };
        match reason {
            Some(reason) => dropped.push(DroppedColumn {
                name: name.clone(),
                reason,
            }),
            None => keep.push(name.clone()),
        }
    }
    Ok((matrix.select_columns(&keep)?, dropped))
}

/// Z-scores each column with its own population (mean, std) and records them.
pub fn normalize_features(matrix: &FeatureMatrix) -> FeatureMatrix {
    let stats: Vec<ColumnStats> = matrix
        .values
        .columns()
        .into_iter()
        .map(|col| ColumnStats {
            mean: col.sum() / col.len() as f64,
            std: column_std(col),
        })
        .collect();
    let mut out = apply_stats(matrix, &stats);
    out.column_stats = Some(stats);
    out
}

fn apply_stats(matrix: &FeatureMatrix, stats: &[ColumnStats]) -> FeatureMatrix {
    let mut values = matrix.values.clone();
    for (mut col, s) in values.columns_mut().into_iter().zip(stats) {
        if s.std > CONSTANT_EPS {
            col.mapv_inplace(|v| (v - s.mean) / s.std);
        } else {
            col.fill(0.0);
        }
    }
    FeatureMatrix {
        patient_ids: matrix.patient_ids.clone(),
        feature_names: matrix.feature_names.clone(),
        values,
        column_stats: None,
    }
}

/// Applies frozen normalization: picks the named columns out of a raw
/// (unnormalized) matrix and z-scores them with the recorded stats.
pub fn apply_frozen(raw: &FeatureMatrix, names: &[String], stats: &[ColumnStats]) -> Result<FeatureMatrix> {
    if names.len() != stats.len() {
        return Err(Error::Dimension(format!(
            "{} feature names but {} column stats",
            names.len(),
            stats.len()
        )));
    }
    let picked = raw.select_columns(names)?;
    let mut out = apply_stats(&picked, stats);
    out.column_stats = Some(stats.to_vec());
    Ok(out)
}

/// Greedy redundancy pruning in column order: a column is kept when its
/// |Pearson r| with every kept column is at most `max_abs_corr`. With
/// `top_n`, the kept list is then cut to the `top_n` columns of largest
/// pre-normalization std (name ascending on ties), in that ranked order.
pub fn select_features(matrix: &FeatureMatrix, max_abs_corr: f64, top_n: Option<usize>) -> Result<Vec<String>> {
    if !(max_abs_corr > 0.0 && max_abs_corr <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "max_abs_corr {max_abs_corr} must lie in (0, 1]"
        )));
    }
    let cols: Vec<Vec<f64>> = matrix
        .values
        .columns()
        .into_iter()
        .map(|c| c.to_vec())
        .collect();
    let mut kept: Vec<usize> = Vec::new();
    for j in 0..cols.len() {
        if kept
            .iter()
            .all(|&i| pearson(&cols[i], &cols[j]).abs() <= max_abs_corr)
        {
            kept.push(j);
        }
    }
    if let Some(n) = top_n {
        let dispersion = |j: usize| match &matrix.column_stats {
            Some(s) => s[j].std,
            None => pop_std(&cols[j]),
        };
        kept.sort_by(|&a, &b| {
            dispersion(b)
                .total_cmp(&dispersion(a))
                .then_with(|| matrix.feature_names[a].cmp(&matrix.feature_names[b]))
        });
        kept.truncate(n);
    }
    Ok(kept
        .into_iter()
        .map(|j| matrix.feature_names[j].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{fixtures, StaticRecord};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn feat(x: &[f64], name: &str) -> f64 {
        extract_intra(x)[INTRA_FEATURES.iter().position(|n| *n == name).unwrap()]
    }

    #[test]
    fn znorm_examples() {
        let z = znorm(&[1.0, 2.0, 3.0]);
        let s = (1.5f64).sqrt(); // 1 / sqrt(2/3)
        assert_abs_diff_eq!(z[0], -s, epsilon = 1e-12);
        assert_abs_diff_eq!(z[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z[2], s, epsilon = 1e-12);
        assert_abs_diff_eq!(z[2], 1.2247, epsilon = 1e-4);
        assert_eq!(znorm(&[5.0; 4]), vec![0.0; 4]);
    }

    #[test]
    fn ramp_intra_features() {
        let x: Vec<f64> = (1..=8).map(f64::from).collect();
        assert_abs_diff_eq!(feat(&x, "slope"), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(feat(&x, "intercept"), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(feat(&x, "mean"), 4.5, epsilon = 1e-12);
        // numerator 26.25, denominator 42
        assert_abs_diff_eq!(feat(&x, "autocorr_lag1"), 0.625, epsilon = 1e-12);
        assert_abs_diff_eq!(feat(&x, "median"), 4.5, epsilon = 1e-12);
        assert_abs_diff_eq!(feat(&x, "iqr"), 3.5, epsilon = 1e-12);
        assert_abs_diff_eq!(feat(&x, "abs_energy"), 204.0, epsilon = 1e-12);
        assert_abs_diff_eq!(feat(&x, "skewness"), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(feat(&x, "kurtosis"), -1.238095238095238, epsilon = 1e-12);
        assert_eq!(feat(&x, "mean_crossings"), 1.0);
        assert_eq!((feat(&x, "first"), feat(&x, "last")), (1.0, 8.0));
    }

    #[test]
    fn constant_channel_guards() {
        let x = [37.0; 8];
        for name in ["std", "skewness", "kurtosis", "mean_crossings", "slope", "autocorr_lag1", "iqr"] {
            assert_eq!(feat(&x, name), 0.0, "{name}");
        }
        assert_eq!(feat(&x, "intercept"), 37.0);
    }

    #[test]
    fn alternating_mean_abs_change() {
        let x = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        assert_eq!(feat(&x, "mean_abs_change"), 1.0);
        assert_eq!(feat(&x, "mean_crossings"), 7.0);
    }

    #[test]
    fn inter_self_and_anti() {
        let a = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
        let r = extract_inter(&a, &a);
        assert_abs_diff_eq!(r[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r[1], 1.0, epsilon = 1e-12);
        assert_eq!(r[2], 0.0);
        let neg: Vec<f64> = a.iter().map(|v| 10.0 - v).collect();
        assert_abs_diff_eq!(extract_inter(&a, &neg)[0], -1.0, epsilon = 1e-12);
    }

    /// Brute force: every shift, computed with explicit index bounds.
    fn ncc_oracle(a: &[f64], b: &[f64]) -> (f64, i64) {
        let n = a.len() as i64;
        let za = znorm(a);
        let zb = znorm(b);
        let mut cands = Vec::new();
        for w in -(n - 1)..n {
            let mut s = 0.0;
            for t in 0..n {
                let u = t - w;
                if (0..n).contains(&u) {
                    s += za[t as usize] * zb[u as usize];
                }
            }
            cands.push((s / n as f64, w));
        }
        let best = cands.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
        let w = cands
            .iter()
            .filter(|c| c.0 == best)
            .map(|c| c.1)
            .min_by_key(|w| (w.abs(), *w > 0))
            .unwrap();
        (best, w)
    }

    #[test]
    fn circular_shift_matches_oracle() {
        let a = [1.0, 5.0, 2.0, 8.0, 3.0, 3.0, 7.0, 0.0];
        for k in 0..8 {
            let b: Vec<f64> = (0..8).map(|t| a[(t + k) % 8]).collect();
            let got = extract_inter(&a, &b);
            let (v, w) = ncc_oracle(&a, &b);
            assert_abs_diff_eq!(got[1], v, epsilon = 1e-12);
            assert_eq!(got[2], w as f64, "shift {k}");
        }
    }

    proptest! {
        #[test]
        fn inter_matches_oracle(a in prop::collection::vec(-5.0f64..5.0, 8), b in prop::collection::vec(-5.0f64..5.0, 8)) {
            let got = extract_inter(&a, &b);
            let (v, w) = ncc_oracle(&a, &b);
            prop_assert!((got[1] - v).abs() < 1e-12);
            prop_assert_eq!(got[2], w as f64);
            prop_assert!((-1.0..=1.0).contains(&got[1]));
        }

        #[test]
        fn affine_transform_properties(x in prop::collection::vec(-5.0f64..5.0, 8),
                                       y in prop::collection::vec(-5.0f64..5.0, 8),
                                       a in 0.1f64..10.0, b in -50.0f64..50.0) {
            prop_assume!(pop_std(&x) > 1e-3 && pop_std(&y) > 1e-3);
            let xt: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let fx = extract_intra(&x);
            let ft = extract_intra(&xt);
            prop_assert!((ft[8] - a * fx[8]).abs() < 1e-9 * (1.0 + fx[8].abs() * a));
            prop_assert!((ft[10] - fx[10]).abs() < 1e-9);
            prop_assert!((pearson(&xt, &y) - pearson(&x, &y)).abs() < 1e-9);
        }

        #[test]
        fn znorm_idempotent(x in prop::collection::vec(-100.0f64..100.0, 2..20)) {
            prop_assume!(pop_std(&x) > 1e-6);
            let z = znorm(&x);
            let zz = znorm(&z);
            for (p, q) in z.iter().zip(&zz) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn catalog_names_are_unique_and_canonical() {
        let names = FeatureCatalog::default().names();
        assert_eq!(names.len(), 110);
        assert_eq!(names.iter().collect::<HashSet<_>>().len(), 110);
        assert_eq!(names[0], "temp__mean");
        assert_eq!(names[16], "hr__mean");
        assert_eq!(names[80], "tempxhr__pearson");
        assert_eq!(names[109], "rrxspo2__ncc_shift");
    }

    #[test]
    fn assembled_matrix_shape_and_purity() {
        let cohort = fixtures::two_patient_cohort();
        let m = assemble_matrix(&cohort, &FeatureCatalog::default()).unwrap();
        assert_eq!(m.values.dim(), (2, 110));
        let mut same = cohort.clone();
        same.series[1] = same.series[0].clone();
        same.series[1].patient_id = "b".into();
        let m2 = assemble_matrix(&same, &FeatureCatalog::default()).unwrap();
        assert_eq!(m2.values.row(0), m2.values.row(1));
        let single = Cohort::new(
            vec![cohort.series[1].clone()],
            vec![StaticRecord::minimal("b", 70, crate::model::Era::Validation)],
        );
        let m3 = assemble_matrix(&single, &FeatureCatalog::default()).unwrap();
        assert_eq!(m3.values.row(0), m.values.row(1));
        assert!(m.values.iter().all(|v| v.is_finite()));
    }

    fn small(values: Array2<f64>) -> FeatureMatrix {
        let ids = (0..values.nrows()).map(|i| format!("p{i}")).collect();
        let names = (0..values.ncols()).map(|j| format!("f{j}")).collect();
        FeatureMatrix::new(ids, names, values).unwrap()
    }

    #[test]
    fn cleaning_drops_constant_and_nonfinite() {
        let m = small(array![[1.0, 5.0, f64::NAN], [2.0, 5.0, 1.0], [3.0, 5.0, 2.0]]);
        let (clean, dropped) = clean_features(&m).unwrap();
        assert_eq!(clean.feature_names, vec!["f0"]);
        assert_eq!(dropped[0].reason, DropReason::ZeroVariance);
        assert_eq!(dropped[0].reason.to_string(), "zero variance");
        assert_eq!(dropped[1].reason, DropReason::NonFinite);
        let (same, none) = clean_features(&clean).unwrap();
        assert_eq!(same, clean);
        assert!(none.is_empty());
    }

    #[test]
    fn cleaning_conserves_columns() {
        let mut cohort = fixtures::two_patient_cohort();
        cohort.series[1].channel_mut(VitalChannel::SpO2)[2] += 3.0;
        let m = assemble_matrix(&cohort, &FeatureCatalog::default()).unwrap();
        let (clean, dropped) = clean_features(&m).unwrap();
        assert_eq!(clean.ncols() + dropped.len(), 110);
    }

    #[test]
    fn normalization_round_trips() {
        let m = small(array![[1.0, 10.0], [2.0, 30.0], [3.0, 20.0]]);
        let n = normalize_features(&m);
        let s = (1.5f64).sqrt();
        assert_abs_diff_eq!(n.values[[0, 0]], -s, epsilon = 1e-12);
        assert_abs_diff_eq!(n.values[[2, 0]], s, epsilon = 1e-12);
        let stats = n.column_stats.clone().unwrap();
        let again = apply_frozen(&m, &m.feature_names, &stats).unwrap();
        assert_eq!(again.values, n.values);
        let row = small(array![[7.0, -4.0]]);
        let r = apply_frozen(&row, &m.feature_names, &stats).unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(
                r.values[[0, j]],
                (row.values[[0, j]] - stats[j].mean) / stats[j].std,
                epsilon = 1e-15
            );
        }
        let err = apply_frozen(&small(array![[1.0]]), &m.feature_names, &stats);
        assert!(matches!(err, Err(Error::FeatureMismatch(_))));
    }

    #[test]
    fn selection_examples() {
        let dup = normalize_features(&small(array![[1.0, 1.0, 3.0], [2.0, 2.0, 1.0], [3.0, 3.0, 2.0]]));
        assert_eq!(select_features(&dup, 0.9, None).unwrap(), vec!["f0", "f2"]);
        assert_eq!(select_features(&dup, 1.0, None).unwrap().len(), 3);
        let orth = small(array![[1.0, 1.0], [-1.0, 1.0], [1.0, -1.0], [-1.0, -1.0]]);
        assert_eq!(select_features(&orth, 0.1, None).unwrap().len(), 2);
        assert!(select_features(&orth, 0.0, None).is_err());
        assert!(select_features(&orth, 1.5, None).is_err());
    }

    #[test]
    fn top_n_ranks_by_raw_dispersion() {
        let raw = small(array![[1.0, 0.0, 100.0], [2.0, 10.0, 0.0], [0.0, -10.0, 50.0], [5.0, 3.0, 1.0]]);
        let n = normalize_features(&raw);
        let sel = select_features(&n, 1.0, Some(2)).unwrap();
        assert_eq!(sel, vec!["f2", "f1"]);
        assert_eq!(select_features(&n, 1.0, Some(2)).unwrap(), sel);
    }
}
