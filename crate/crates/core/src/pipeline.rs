//! Config handling and the end-to-end commands behind the CLI.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::{
    self, assign_frozen, write_labels_csv, Algorithm, AssignInput, ClusterModel, ClusterParams, FitInput, Label,
    ZnormGrids,
};
use crate::error::{Error, Result};
use crate::features::{apply_frozen, assemble_matrix, clean_features, normalize_features, select_features, FeatureCatalog, FeatureMatrix};
use crate::ingest::{
    apply_cohort_filters, generate_synthetic_cohort, parse_static_csv, parse_timeseries_csv, split_by_era,
    write_ground_truth, write_static_csv, write_text, write_timeseries_csv, ExclusionLog, SyntheticSpec,
};
use crate::model::{validate_cohort, Cohort, Era, Violation, DEFAULT_HOURS};
use crate::prognosis::{align_by_overlap, apply_permutation, subgroup_report, EraLabels, PrognosisReport, DEFAULT_BOOTSTRAP};
use crate::trajectories::{aggregate, emit_plot_data, PlotFormat};
use crate::validity::{sweep, SweepOutcome, SweepSpec, ValidityReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Features,
    Sweep,
    Validation,
    Prognosis,
    Trajectories,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Features => "features",
            Stage::Sweep => "sweep",
            Stage::Validation => "validation",
            Stage::Prognosis => "prognosis",
            Stage::Trajectories => "trajectories",
            Stage::Output => "output",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl StageError {
    /// Config problems are usage errors.
    pub fn is_usage(&self) -> bool {
        self.stage == Stage::Config
    }
}

pub type StageResult<T> = std::result::Result<T, StageError>;

trait InStage<T> {
    fn stage(self, stage: Stage) -> StageResult<T>;
}

impl<T> InStage<T> for Result<T> {
    fn stage(self, stage: Stage) -> StageResult<T> {
        self.map_err(|source| StageError { stage, source })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub timeseries: PathBuf,
    pub statics: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Synthetic cohort spec read by `synth`.
    pub synthetic_spec: Option<PathBuf>,
    /// Where `synth` writes the planted subgroup of every patient.
    pub ground_truth: Option<PathBuf>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub max_abs_corr: f64,
    pub top_n: Option<usize>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            max_abs_corr: 0.9,
            top_n: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringConfig {
    pub algorithms: Vec<Algorithm>,
    pub k_range: Vec<usize>,
    pub max_iter: usize,
    pub tol: f64,
    pub n_init: usize,
    /// DBSCAN radii to try; empty uses the k-distance heuristic.
    pub dbscan_eps: Vec<f64>,
    pub dbscan_min_pts: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        let p = ClusterParams::new(Algorithm::KMeans, 2, 0);
        ClusteringConfig {
            algorithms: Algorithm::ALL.to_vec(),
            k_range: (2..=6).collect(),
            max_iter: p.max_iter,
            tol: p.tol,
            n_init: p.n_init,
            dbscan_eps: Vec::new(),
            dbscan_min_pts: p.min_pts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMode {
    /// Label validation patients with the development model as is.
    #[default]
    Frozen,
    /// Refit on validation patients and align labels to the frozen assignment.
    Refit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationConfig {
    pub mode: ValidationMode,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            mode: ValidationMode::Frozen,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrognosisConfig {
    pub bootstrap: usize,
}

impl Default for PrognosisConfig {
    fn default() -> Self {
        PrognosisConfig {
            bootstrap: DEFAULT_BOOTSTRAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoryConfig {
    /// Band half-width in standard errors.
    pub band: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig { band: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Mandatory; there is no clock-derived fallback.
    pub seed: Option<u64>,
    #[serde(default = "default_hours")]
    pub hours: usize,
    pub paths: PathsConfig,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub clustering: ClusteringConfig,
    #[serde(default)]
    pub validation: ValidationConfig,
    #[serde(default)]
    pub prognosis: PrognosisConfig,
    #[serde(default)]
    pub trajectories: TrajectoryConfig,
}

fn default_hours() -> usize {
    DEFAULT_HOURS
}

/// A parsed config plus the bytes it came from; relative paths resolve
/// against the config file's directory.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    pub seed: u64,
    pub sha256: String,
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<u64> {
        let seed = self
            .seed
            .ok_or_else(|| Error::Config("`seed` is required".into()))?;
        let c = &self.clustering;
        if c.algorithms.is_empty() {
            return Err(Error::Config("`clustering.algorithms` is empty".into()));
        }
        if c.k_range.is_empty() || c.k_range.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "`clustering.k_range` must be non-empty and strictly ascending".into(),
            ));
        }
        if c.k_range[0] == 0 {
            return Err(Error::Config("`clustering.k_range` values must be >= 1".into()));
        }
        if c.dbscan_eps.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::Config("`clustering.dbscan_eps` values must be positive".into()));
        }
        if self.prognosis.bootstrap == 0 {
            return Err(Error::Config("`prognosis.bootstrap` must be >= 1".into()));
        }
        if !(self.trajectories.band.is_finite() && self.trajectories.band >= 0.0) {
            return Err(Error::Config("`trajectories.band` must be >= 0".into()));
        }
        if !(self.features.max_abs_corr > 0.0 && self.features.max_abs_corr <= 1.0) {
            return Err(Error::Config("`features.max_abs_corr` must lie in (0, 1]".into()));
        }
        Ok(seed)
    }

    fn base_params(&self, seed: u64) -> ClusterParams {
        let c = &self.clustering;
        let mut p = ClusterParams::new(c.algorithms[0], c.k_range[0], seed);
        p.max_iter = c.max_iter;
        p.tol = c.tol;
        p.n_init = c.n_init;
        p.min_pts = c.dbscan_min_pts;
        p
    }
}

/// Reads and validates a config file; `out` overrides `paths.output_dir`.
pub fn load_config(path: &Path, out: Option<&Path>) -> StageResult<LoadedConfig> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e)).stage(Stage::Config)?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))
        .stage(Stage::Config)?;
    let mut config = PipelineConfig::from_toml_str(&text).stage(Stage::Config)?;
    let seed = config.validate().stage(Stage::Config)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };
    config.paths.timeseries = resolve(&config.paths.timeseries);
    config.paths.statics = resolve(&config.paths.statics);
    config.paths.output_dir = match out {
        Some(o) => o.to_path_buf(),
        None => resolve(&config.paths.output_dir),
    };
    config.paths.synthetic_spec = config.paths.synthetic_spec.as_deref().map(resolve);
    config.paths.ground_truth = config.paths.ground_truth.as_deref().map(resolve);
    Ok(LoadedConfig {
        config,
        seed,
        sha256: hex::encode(Sha256::digest(&bytes)),
        base_dir,
    })
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Writes the synthetic cohort named by the config (or `spec_path`) to the
/// configured input paths plus a ground-truth file.
pub fn cmd_synth(cfg: &LoadedConfig, spec_path: Option<&Path>) -> StageResult<SynthSummary> {
    let spec_path = spec_path
        .map(Path::to_path_buf)
        .or_else(|| cfg.config.paths.synthetic_spec.clone())
        .ok_or_else(|| Error::Config("no synthetic spec given (`paths.synthetic_spec` or --spec)".into()))
        .stage(Stage::Config)?;
    let spec = SyntheticSpec::load(&spec_path).stage(Stage::Config)?;
    let (cohort, truth) = generate_synthetic_cohort(&spec).stage(Stage::Ingest)?;
    let p = &cfg.config.paths;
    let truth_path = p
        .ground_truth
        .clone()
        .unwrap_or_else(|| p.timeseries.with_file_name("ground_truth.csv"));
    for path in [&p.timeseries, &p.statics, &truth_path] {
        if let Some(parent) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e)).stage(Stage::Output)?;
        }
    }
    write_timeseries_csv(&p.timeseries, &cohort).stage(Stage::Output)?;
    write_static_csv(&p.statics, &cohort).stage(Stage::Output)?;
    write_ground_truth(&truth_path, &truth).stage(Stage::Output)?;
    info!("synthesized {} patients into {}", cohort.len(), p.timeseries.display());
    Ok(SynthSummary {
        n_patients: cohort.len(),
        timeseries: p.timeseries.clone(),
        statics: p.statics.clone(),
        ground_truth: truth_path,
    })
}

#[derive(Debug, Clone)]
pub struct SynthSummary {
    pub n_patients: usize,
    pub timeseries: PathBuf,
    pub statics: PathBuf,
    pub ground_truth: PathBuf,
}

/// Parsed, filtered cohort.
#[derive(Debug, Clone)]
pub struct LoadedCohort {
    pub cohort: Cohort,
    pub exclusions: ExclusionLog,
}

pub fn load_cohort(config: &PipelineConfig) -> Result<LoadedCohort> {
    let obs = parse_timeseries_csv(&config.paths.timeseries)?;
    let statics = parse_static_csv(&config.paths.statics)?;
    let (cohort, exclusions) = apply_cohort_filters(&obs, &statics, config.hours)?;
    info!(
        "cohort: {} patients kept, {} excluded",
        cohort.len(),
        exclusions.total()
    );
    Ok(LoadedCohort { cohort, exclusions })
}

#[derive(Debug, Clone)]
pub struct ValidateSummary {
    pub n_patients: usize,
    pub n_development: usize,
    pub n_validation: usize,
    pub exclusions: ExclusionLog,
    pub violations: Vec<Violation>,
}

/// Parses and filters the inputs and checks the cohort invariants.
pub fn cmd_validate(cfg: &LoadedConfig) -> StageResult<ValidateSummary> {
    let loaded = load_cohort(&cfg.config).stage(Stage::Ingest)?;
    let violations = validate_cohort(&loaded.cohort);
    let (dev, val) = split_by_era(&loaded.cohort);
    Ok(ValidateSummary {
        n_patients: loaded.cohort.len(),
        n_development: dev.len(),
        n_validation: val.len(),
        exclusions: loaded.exclusions,
        violations,
    })
}

/// Raw features of the whole cohort and the development-era preparation.
struct Prepared {
    cohort: Cohort,
    exclusions: ExclusionLog,
    dev: Cohort,
    val: Cohort,
    raw: FeatureMatrix,
    dev_matrix: FeatureMatrix,
    dev_grids: Option<ZnormGrids>,
}

fn era_rows(raw: &FeatureMatrix, part: &Cohort) -> FeatureMatrix {
    let index: BTreeMap<&str, usize> = raw
        .patient_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let rows: Vec<usize> = part.series.iter().map(|s| index[s.patient_id.as_str()]).collect();
    raw.select_rows(&rows)
}

fn prepare(config: &PipelineConfig) -> StageResult<Prepared> {
    let LoadedCohort { cohort, exclusions } = load_cohort(config).stage(Stage::Ingest)?;
    let (dev, val) = split_by_era(&cohort);
    if dev.is_empty() {
        return Err(Error::InvalidParameter("no development-era patients".into())).stage(Stage::Ingest);
    }
    let raw = assemble_matrix(&cohort, &FeatureCatalog::default()).stage(Stage::Features)?;
    let dev_raw = era_rows(&raw, &dev);
    let (cleaned, dropped) = clean_features(&dev_raw).stage(Stage::Features)?;
    for d in &dropped {
        warn!("dropped feature {} ({})", d.name, d.reason);
    }
    let normalized = normalize_features(&cleaned);
    let names = select_features(&normalized, config.features.max_abs_corr, config.features.top_n)
        .stage(Stage::Features)?;
    if names.is_empty() {
        return Err(Error::InvalidParameter("feature selection kept no columns".into())).stage(Stage::Features);
    }
    let all_stats = normalized.column_stats.clone().unwrap_or_default();
    let stats: Vec<_> = names
        .iter()
        .map(|n| all_stats[normalized.column_index(n).expect("selected from this matrix")])
        .collect();
    let dev_matrix = apply_frozen(&dev_raw, &names, &stats).stage(Stage::Features)?;
    info!("{} of {} features selected", names.len(), raw.ncols());
    let dev_grids = if config.clustering.algorithms.contains(&Algorithm::KShape) {
        Some(ZnormGrids::from_cohort(&dev).stage(Stage::Features)?)
    } else {
        None
    };
    Ok(Prepared {
        cohort,
        exclusions,
        dev,
        val,
        raw,
        dev_matrix,
        dev_grids,
    })
}

fn run_sweep(config: &PipelineConfig, seed: u64, prep: &Prepared) -> StageResult<SweepOutcome> {
    let base = config.base_params(seed);
    let eps: Vec<Option<f64>> = config.clustering.dbscan_eps.iter().map(|&e| Some(e)).collect();
    let spec = SweepSpec {
        algorithms: &config.clustering.algorithms,
        k_range: &config.clustering.k_range,
        base: &base,
        dbscan_eps: &eps,
    };
    let outcome = sweep(&prep.dev_matrix, prep.dev_grids.as_ref(), &spec).stage(Stage::Sweep)?;
    info!(
        "sweep chose {} with k = {}",
        outcome.report.chosen_algorithm, outcome.report.chosen_k
    );
    Ok(outcome)
}

/// Labels `part` with `model` without refitting. Patients the model already
/// labels keep their fitted label.
pub fn frozen_labels(model: &ClusterModel, raw: &FeatureMatrix, part: &Cohort) -> Result<Vec<Label>> {
    let ids = part.patient_ids();
    let unknown: Vec<usize> = (0..ids.len()).filter(|&i| !model.labels.contains_key(&ids[i])).collect();
    let mut labels: Vec<Label> = ids.iter().map(|id| model.labels.get(id).copied().unwrap_or(0)).collect();
    if unknown.is_empty() {
        return Ok(labels);
    }
    let sub = Cohort::new(
        unknown.iter().map(|&i| part.series[i].clone()).collect(),
        unknown.iter().filter_map(|&i| part.statics.get(&ids[i]).cloned()),
    );
    let assigned = if model.algorithm().uses_grids() {
        assign_frozen(model, AssignInput::Grids(&ZnormGrids::from_cohort(&sub)?))?
    } else {
        let m = model.transform(&era_rows(raw, &sub))?;
        assign_frozen(model, AssignInput::Features(&m))?
    };
    for (&i, l) in unknown.iter().zip(assigned) {
        labels[i] = l;
    }
    Ok(labels)
}

fn refit_labels(model: &ClusterModel, raw: &FeatureMatrix, val: &Cohort, frozen: &[Label]) -> Result<Vec<Label>> {
    let matrix = model.transform(&era_rows(raw, val))?;
    let grids = if model.algorithm().uses_grids() {
        Some(ZnormGrids::from_cohort(val)?)
    } else {
        None
    };
    let refit = cluster::fit(
        FitInput {
            matrix: &matrix,
            grids: grids.as_ref(),
        },
        &model.params,
    )?;
    let labels = refit.labels_for(&val.patient_ids())?;
    let k = model.n_clusters.max(refit.n_clusters);
    let perm = align_by_overlap(frozen, &labels, k)?;
    apply_permutation(&labels, &perm)
}

/// Relative path → sha256 of every file written, in write order.
#[derive(Debug, Default)]
struct Outputs {
    dir: PathBuf,
    files: BTreeMap<String, OutputEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Outputs {
            dir: dir.to_path_buf(),
            files: BTreeMap::new(),
        }
    }

    fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    fn record(&mut self, name: &str, file: &str) -> Result<()> {
        let sha256 = file_sha256(&self.path(file))?;
        self.files.insert(
            name.to_string(),
            OutputEntry {
                path: file.to_string(),
                sha256,
            },
        );
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChosenModel {
    pub algorithm: Algorithm,
    pub k: usize,
    pub n_features: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub validation_mode: ValidationMode,
    pub bootstrap: usize,
    pub chosen: ChosenModel,
    pub outputs: BTreeMap<String, OutputEntry>,
    /// sha256 over the sorted `name:sha256` lines of all outputs.
    pub numeric_hash: String,
}

fn numeric_hash(outputs: &BTreeMap<String, OutputEntry>) -> String {
    let mut h = Sha256::new();
    for (name, e) in outputs {
        h.update(format!("{name}:{}\n", e.sha256));
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    pub validity: ValidityReport,
    pub prognosis: PrognosisReport,
    pub labels: BTreeMap<String, Label>,
}

fn write_reports(
    config: &PipelineConfig,
    seed: u64,
    cohort: &Cohort,
    k: usize,
    eras: &[(Era, Vec<String>, Vec<Label>)],
    out: &mut Outputs,
) -> StageResult<(PrognosisReport, BTreeMap<String, Label>)> {
    let parts: Vec<EraLabels<'_>> = eras
        .iter()
        .filter(|(_, ids, _)| !ids.is_empty())
        .map(|(era, ids, labels)| EraLabels {
            era: *era,
            patient_ids: ids,
            labels,
        })
        .collect();
    let report = subgroup_report(&parts, k, &cohort.statics, config.prognosis.bootstrap, seed)
        .stage(Stage::Prognosis)?;
    report
        .write(out.path("prognosis.csv"), out.path("prognosis.json"))
        .stage(Stage::Output)?;
    out.record("prognosis_csv", "prognosis.csv").stage(Stage::Output)?;
    out.record("prognosis_json", "prognosis.json").stage(Stage::Output)?;

    let labels: BTreeMap<String, Label> = eras
        .iter()
        .flat_map(|(_, ids, l)| ids.iter().cloned().zip(l.iter().copied()))
        .collect();
    let summary = aggregate(cohort, &labels).stage(Stage::Trajectories)?;
    let files = emit_plot_data(&summary, &out.dir, &[PlotFormat::Csv, PlotFormat::Svg], config.trajectories.band)
        .stage(Stage::Trajectories)?;
    for f in files {
        let name = f.file_name().expect("file path").to_string_lossy().into_owned();
        out.record(&name.replace('.', "_"), &name).stage(Stage::Output)?;
    }
    Ok((report, labels))
}

fn write_manifest(cfg: &LoadedConfig, model: &ClusterModel, out: Outputs) -> StageResult<(Manifest, PathBuf)> {
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: cfg.sha256.clone(),
        seed: cfg.seed,
        validation_mode: cfg.config.validation.mode,
        bootstrap: cfg.config.prognosis.bootstrap,
        chosen: ChosenModel {
            algorithm: model.algorithm(),
            k: model.n_clusters,
            n_features: model.selected_features.len(),
            objective: model.objective,
        },
        numeric_hash: numeric_hash(&out.files),
        outputs: out.files,
    };
    let path = out.dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(Error::from).stage(Stage::Output)?;
    write_text(&path, &(text + "\n")).stage(Stage::Output)?;
    Ok((manifest, path))
}

/// ingest → features → sweep → validation labels → prognosis →
/// trajectories → manifest.
pub fn cmd_run(cfg: &LoadedConfig) -> StageResult<RunSummary> {
    let config = &cfg.config;
    let dir = &config.paths.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)).stage(Stage::Output)?;
    let mut out = Outputs::new(dir);
    let prep = prepare(config)?;
    prep.exclusions.write_csv(out.path("exclusions.csv")).stage(Stage::Output)?;
    out.record("exclusions", "exclusions.csv").stage(Stage::Output)?;
    prep.raw.write_csv(out.path("features.csv")).stage(Stage::Output)?;
    out.record("features", "features.csv").stage(Stage::Output)?;
    prep.dev_matrix.write_stats_csv(out.path("feature_stats.csv")).stage(Stage::Output)?;
    out.record("feature_stats", "feature_stats.csv").stage(Stage::Output)?;

    let outcome = run_sweep(config, cfg.seed, &prep)?;
    outcome
        .report
        .write(out.path("validity.csv"), out.path("validity.json"))
        .stage(Stage::Output)?;
    out.record("validity_csv", "validity.csv").stage(Stage::Output)?;
    out.record("validity_json", "validity.json").stage(Stage::Output)?;
    let model = outcome.chosen_model();
    model.save(out.path("model.json")).stage(Stage::Output)?;
    out.record("model", "model.json").stage(Stage::Output)?;

    let dev_ids = prep.dev.patient_ids();
    let dev_labels = model.labels_for(&dev_ids).stage(Stage::Validation)?;
    let val_ids = prep.val.patient_ids();
    let val_labels = if prep.val.is_empty() {
        Vec::new()
    } else {
        let frozen = frozen_labels(model, &prep.raw, &prep.val).stage(Stage::Validation)?;
        match config.validation.mode {
            ValidationMode::Frozen => frozen,
            ValidationMode::Refit => refit_labels(model, &prep.raw, &prep.val, &frozen).stage(Stage::Validation)?,
        }
    };
    write_labels_csv(out.path("labels_development.csv"), &dev_ids, &dev_labels).stage(Stage::Output)?;
    out.record("labels_development", "labels_development.csv").stage(Stage::Output)?;
    write_labels_csv(out.path("labels_validation.csv"), &val_ids, &val_labels).stage(Stage::Output)?;
    out.record("labels_validation", "labels_validation.csv").stage(Stage::Output)?;

    let eras = vec![
        (Era::Development, dev_ids, dev_labels),
        (Era::Validation, val_ids, val_labels),
    ];
    let (prognosis, labels) = write_reports(config, cfg.seed, &prep.cohort, model.n_clusters, &eras, &mut out)?;
    let (manifest, manifest_path) = write_manifest(cfg, model, out)?;
    Ok(RunSummary {
        manifest,
        manifest_path,
        validity: outcome.report,
        prognosis,
        labels,
    })
}

/// Runs ingest, features and the sweep only; writes the validity report
/// and the chosen model.
pub fn cmd_sweep(cfg: &LoadedConfig) -> StageResult<ValidityReport> {
    let config = &cfg.config;
    let prep = prepare(config)?;
    let outcome = run_sweep(config, cfg.seed, &prep)?;
    let dir = &config.paths.output_dir;
    outcome
        .report
        .write(dir.join("validity.csv"), dir.join("validity.json"))
        .stage(Stage::Output)?;
    outcome.chosen_model().save(dir.join("model.json")).stage(Stage::Output)?;
    Ok(outcome.report)
}

#[derive(Debug, Clone)]
pub struct ReportSummary {
    pub prognosis: PrognosisReport,
    pub labels: BTreeMap<String, Label>,
}

/// Prognosis and trajectories from a stored model: patients the model was
/// fitted on keep their labels, everyone else is assigned frozen.
pub fn cmd_report(cfg: &LoadedConfig, model_path: &Path) -> StageResult<ReportSummary> {
    let model = ClusterModel::load(model_path).stage(Stage::Config)?;
    let config = &cfg.config;
    let loaded = load_cohort(config).stage(Stage::Ingest)?;
    let (dev, val) = split_by_era(&loaded.cohort);
    let raw = assemble_matrix(&loaded.cohort, &FeatureCatalog::default()).stage(Stage::Features)?;
    if !model.algorithm().uses_grids() {
        // surfaces a named error for feature mismatches before labeling
        model.transform(&raw).stage(Stage::Features)?;
    }
    let mut eras = Vec::new();
    for (era, part) in [(Era::Development, &dev), (Era::Validation, &val)] {
        let labels = if part.is_empty() {
            Vec::new()
        } else {
            frozen_labels(&model, &raw, part).stage(Stage::Validation)?
        };
        eras.push((era, part.patient_ids(), labels));
    }
    let dir = &config.paths.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)).stage(Stage::Output)?;
    let mut out = Outputs::new(dir);
    let (prognosis, labels) = write_reports(config, cfg.seed, &loaded.cohort, model.n_clusters, &eras, &mut out)?;
    Ok(ReportSummary { prognosis, labels })
}
