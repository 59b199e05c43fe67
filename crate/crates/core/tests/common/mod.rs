#![allow(dead_code)]

use std::path::{Path, PathBuf};

use vitalclust::ingest::{
    generate_synthetic_cohort, write_ground_truth, write_static_csv, write_timeseries_csv, GroundTruth,
    SyntheticSpec,
};
use vitalclust::model::Cohort;
use vitalclust::rng::hash64;

pub fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn default_spec() -> SyntheticSpec {
    SyntheticSpec::load(configs_dir().join("synthetic_default.toml")).unwrap()
}

/// Exactly `n_dev` development and `n_val` validation patients per
/// subgroup of `base`.
pub fn planted(base: &SyntheticSpec, seed: u64, n_dev: usize, n_val: usize) -> (Cohort, GroundTruth) {
    let mut series = Vec::new();
    let mut statics = Vec::new();
    let mut truth = Vec::new();
    for (part, (n, fraction, prefix)) in [(n_dev, 0.0, "d"), (n_val, 1.0, "v")].into_iter().enumerate() {
        if n == 0 {
            continue;
        }
        let mut spec = base.clone();
        spec.seed = hash64(seed, part as u64);
        spec.era_fraction_validation = fraction;
        spec.id_prefix = prefix.into();
        for s in &mut spec.subgroups {
            s.n_patients = n;
        }
        let (c, t) = generate_synthetic_cohort(&spec).unwrap();
        series.extend(c.series);
        statics.extend(c.statics.into_values());
        truth.extend(t);
    }
    (Cohort::new(series, statics), truth)
}

pub fn write_inputs(dir: &Path, cohort: &Cohort, truth: &GroundTruth) {
    write_timeseries_csv(dir.join("timeseries.csv"), cohort).unwrap();
    write_static_csv(dir.join("static.csv"), cohort).unwrap();
    write_ground_truth(dir.join("ground_truth.csv"), truth).unwrap();
}

/// Writes `config.toml` reading the inputs of [`write_inputs`] and
/// writing to `out/`. `extra` is appended verbatim.
pub fn write_config(dir: &Path, seed: u64, extra: &str) -> PathBuf {
    let text = format!(
        "seed = {seed}\n\n[paths]\ntimeseries = \"timeseries.csv\"\nstatics = \"static.csv\"\noutput_dir = \"out\"\n\n{extra}"
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}
