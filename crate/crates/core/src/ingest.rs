//! Input parsing, inclusion/exclusion filters, era split and synthetic cohorts.
//!
//! File schemas:
//! - time series: `patient_id,hour,channel,value,unit`, channel one of
//!   `temp,hr,mbp,rr,spo2`, unit blank or `C`/`F` (temperature only);
//! - statics: `patient_id,age,gender,race,height_cm,weight_kg,icu_death,hospital_death,era,dod`,
//!   booleans as `0`/`1`, era `2008-2016` or `2017-2019`;
//! - exclusion log: `patient_id,reason`;
//! - synthetic ground truth: `patient_id,true_subgroup`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RowError};
use crate::model::{Cohort, Era, PatientSeries, StaticRecord, VitalChannel, MIN_HOURS};
use crate::rng;

pub const TIMESERIES_HEADER: [&str; 5] = ["patient_id", "hour", "channel", "value", "unit"];
pub const STATIC_HEADER: [&str; 10] = [
    "patient_id",
    "age",
    "gender",
    "race",
    "height_cm",
    "weight_kg",
    "icu_death",
    "hospital_death",
    "era",
    "dod",
];

pub const ADULT_AGE: u32 = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TempUnit {
    Celsius,
    Fahrenheit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawObservation {
    pub patient_id: String,
    pub hour: u32,
    pub channel: VitalChannel,
    pub value: f64,
    pub unit: Option<TempUnit>,
}

impl RawObservation {
    /// Value in canonical units (temperature in °C).
    pub fn canonical_value(&self) -> f64 {
        match self.unit {
            Some(TempUnit::Fahrenheit) => (self.value - 32.0) * 5.0 / 9.0,
            _ => self.value,
        }
    }
}

fn open_reader(path: &Path, expected: &[&str]) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = reader.headers().map_err(|e| Error::Csv {
        path: path.into(),
        message: e.to_string(),
    })?;
    let found: Vec<&str> = header.iter().collect();
    if found != expected {
        return Err(Error::Header {
            path: path.into(),
            expected: expected.join(","),
            found: found.join(","),
        });
    }
    Ok(reader)
}

fn records<F, T>(path: &Path, expected: &[&str], mut parse_row: F) -> Result<Vec<T>>
where
    F: FnMut(&csv::StringRecord) -> std::result::Result<T, String>,
{
    let mut reader = open_reader(path, expected)?;
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for rec in reader.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != expected.len() {
            errors.push(RowError {
                line,
                message: format!("expected {} fields, found {}", expected.len(), rec.len()),
            });
            continue;
        }
        match parse_row(&rec) {
            Ok(v) => out.push(v),
            Err(message) => errors.push(RowError { line, message }),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(Error::MalformedRows {
            path: path.into(),
            errors,
        })
    }
}

fn parse_f64(field: &str, name: &str) -> std::result::Result<f64, String> {
    field
        .parse::<f64>()
        .map_err(|_| format!("{name} `{field}` is not a number"))
}

fn parse_opt_f64(field: &str, name: &str) -> std::result::Result<Option<f64>, String> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_f64(field, name).map(Some)
    }
}

fn parse_flag(field: &str, name: &str) -> std::result::Result<bool, String> {
    match field {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(format!("{name} `{field}` must be 0 or 1")),
    }
}

fn opt_string(field: &str) -> Option<String> {
    (!field.is_empty()).then(|| field.to_string())
}

pub fn parse_timeseries_csv(path: impl AsRef<Path>) -> Result<Vec<RawObservation>> {
    records(path.as_ref(), &TIMESERIES_HEADER, |rec| {
        let patient_id = rec[0].to_string();
        if patient_id.is_empty() {
            return Err("empty patient_id".into());
        }
        let hour = rec[1]
            .parse::<i64>()
            .map_err(|_| format!("hour `{}` is not an integer", &rec[1]))?;
        if hour < 0 {
            return Err(format!("hour {hour} is negative"));
        }
        let hour = u32::try_from(hour).map_err(|_| format!("hour {hour} out of range"))?;
        let channel = VitalChannel::from_code(&rec[2])
            .ok_or_else(|| format!("unknown channel `{}`", &rec[2]))?;
        let value = parse_f64(&rec[3], "value")?;
        let unit = match (&rec[4], channel) {
            ("", _) => None,
            ("C", VitalChannel::Temperature) => Some(TempUnit::Celsius),
            ("F", VitalChannel::Temperature) => Some(TempUnit::Fahrenheit),
            (u, VitalChannel::Temperature) => return Err(format!("unknown temperature unit `{u}`")),
            (u, c) => return Err(format!("unit `{u}` not allowed for channel {c}")),
        };
        Ok(RawObservation {
            patient_id,
            hour,
            channel,
            value,
            unit,
        })
    })
}

/// Parses the static CSV. Row-level problems are collected; a duplicate
/// patient_id is reported on its own as a hard error.
pub fn parse_static_csv(path: impl AsRef<Path>) -> Result<Vec<StaticRecord>> {
    let records = records(path.as_ref(), &STATIC_HEADER, |rec| {
        let patient_id = rec[0].to_string();
        if patient_id.is_empty() {
            return Err("empty patient_id".into());
        }
        let age = rec[1]
            .parse::<u32>()
            .map_err(|_| format!("age `{}` is not a non-negative integer", &rec[1]))?;
        let era = Era::parse(&rec[8]).ok_or_else(|| format!("unknown era `{}`", &rec[8]))?;
        Ok(StaticRecord {
            patient_id,
            age,
            gender: rec[2].to_string(),
            race: opt_string(&rec[3]),
            height_cm: parse_opt_f64(&rec[4], "height_cm")?,
            weight_kg: parse_opt_f64(&rec[5], "weight_kg")?,
            icu_death: parse_flag(&rec[6], "icu_death")?,
            hospital_death: parse_flag(&rec[7], "hospital_death")?,
            era,
            dod: opt_string(&rec[9]),
        })
    })?;
    let mut seen = std::collections::HashSet::new();
    for r in &records {
        if !seen.insert(r.patient_id.as_str()) {
            return Err(Error::DuplicatePatient(r.patient_id.clone()));
        }
    }
    Ok(records)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().has_headers(false).from_writer(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Csv {
        path: path.into(),
        message: e.to_string(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes a cohort's grids in long format, patients in cohort order, then
/// hours ascending, then channels in canonical order.
pub fn write_timeseries_csv(path: impl AsRef<Path>, cohort: &Cohort) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    let err = csv_err(path);
    w.write_record(TIMESERIES_HEADER).map_err(&err)?;
    for s in &cohort.series {
        for hour in 0..s.hours() {
            for c in VitalChannel::ALL {
                w.write_record([
                    s.patient_id.as_str(),
                    &hour.to_string(),
                    c.code(),
                    &s.value(c, hour).to_string(),
                    "",
                ])
                .map_err(&err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes static records for the cohort's patients, in cohort order.
pub fn write_static_csv(path: impl AsRef<Path>, cohort: &Cohort) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    let err = csv_err(path);
    w.write_record(STATIC_HEADER).map_err(&err)?;
    for s in &cohort.series {
        let Some(r) = cohort.statics.get(&s.patient_id) else {
            continue;
        };
        w.write_record([
            r.patient_id.as_str(),
            &r.age.to_string(),
            &r.gender,
            r.race.as_deref().unwrap_or(""),
            &fmt_opt(r.height_cm),
            &fmt_opt(r.weight_kg),
            if r.icu_death { "1" } else { "0" },
            if r.hospital_death { "1" } else { "0" },
            r.era.year_group(),
            r.dod.as_deref().unwrap_or(""),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    NoStatic,
    Underage,
    DuplicateHour,
    IncompleteGrid,
}

impl ExclusionReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ExclusionReason::NoStatic => "no_static",
            ExclusionReason::Underage => "underage",
            ExclusionReason::DuplicateHour => "duplicate_hour",
            ExclusionReason::IncompleteGrid => "incomplete_grid",
        }
    }
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExclusionLog {
    pub entries: Vec<(String, ExclusionReason)>,
}

impl ExclusionLog {
    pub fn counts(&self) -> BTreeMap<ExclusionReason, usize> {
        let mut out = BTreeMap::new();
        for (_, r) in &self.entries {
            *out.entry(*r).or_insert(0) += 1;
        }
        out
    }

    pub fn total(&self) -> usize {
        self.entries.len()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv_writer(path)?;
        let err = csv_err(path);
        w.write_record(["patient_id", "reason"]).map_err(&err)?;
        for (id, reason) in &self.entries {
            w.write_record([id.as_str(), reason.as_str()]).map_err(&err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Builds a cohort from parsed inputs.
///
/// Patients are taken in order of first appearance in `observations`, then
/// static-only patients in `statics` order. Each excluded patient is logged
/// once, under the first failing rule in the order no_static, underage,
/// duplicate_hour, incomplete_grid. Observations at `hour >= hours` lie
/// outside the window and are ignored.
pub fn apply_cohort_filters(
    observations: &[RawObservation],
    statics: &[StaticRecord],
    hours: usize,
) -> Result<(Cohort, ExclusionLog)> {
    if hours < MIN_HOURS {
        return Err(Error::InvalidParameter(format!(
            "grid length {hours} is below the minimum of {MIN_HOURS}"
        )));
    }
    struct Slot {
        cells: Vec<Option<f64>>,
        duplicate: bool,
    }
    let mut order: Vec<String> = Vec::new();
    let mut slots: HashMap<&str, Slot> = HashMap::new();
    for obs in observations {
        let slot = slots.entry(obs.patient_id.as_str()).or_insert_with(|| {
            order.push(obs.patient_id.clone());
            Slot {
                cells: vec![None; VitalChannel::COUNT * hours],
                duplicate: false,
            }
        });
        let hour = obs.hour as usize;
        if hour >= hours {
            continue;
        }
        let cell = &mut slot.cells[obs.channel.index() * hours + hour];
        if cell.is_some() {
            slot.duplicate = true;
        } else {
            *cell = Some(obs.canonical_value());
        }
    }
    let by_id: HashMap<&str, &StaticRecord> =
        statics.iter().map(|s| (s.patient_id.as_str(), s)).collect();
    let mut static_only = std::collections::HashSet::new();
    for s in statics {
        if !slots.contains_key(s.patient_id.as_str()) && static_only.insert(s.patient_id.as_str()) {
            order.push(s.patient_id.clone());
        }
    }

    let mut series = Vec::new();
    let mut kept_statics = Vec::new();
    let mut log = ExclusionLog::default();
    for id in order {
        let rec = by_id.get(id.as_str());
        let slot = slots.get(id.as_str());
        let reason = match (rec, slot) {
            (None, _) => Some(ExclusionReason::NoStatic),
            (Some(r), _) if r.age < ADULT_AGE => Some(ExclusionReason::Underage),
            (Some(_), Some(s)) if s.duplicate => Some(ExclusionReason::DuplicateHour),
            (Some(_), None) => Some(ExclusionReason::IncompleteGrid),
            (Some(_), Some(s)) if s.cells.iter().any(|c| c.map_or(true, |v| !v.is_finite())) => {
                Some(ExclusionReason::IncompleteGrid)
            }
            _ => None,
        };
        match reason {
            Some(reason) => log.entries.push((id, reason)),
            None => {
                let cells = slot.unwrap().cells.iter().map(|c| c.unwrap()).collect();
                series.push(PatientSeries::from_flat(id.clone(), hours, cells)?);
                kept_statics.push((*rec.unwrap()).clone());
            }
        }
    }
    Ok((Cohort::new(series, kept_statics), log))
}

/// Partitions a cohort by era, keeping cohort order within each part.
pub fn split_by_era(cohort: &Cohort) -> (Cohort, Cohort) {
    let mut dev = Cohort::default();
    let mut val = Cohort::default();
    for s in &cohort.series {
        let Some(rec) = cohort.statics.get(&s.patient_id) else {
            continue;
        };
        let target = match rec.era {
            Era::Development => &mut dev,
            Era::Validation => &mut val,
        };
        target.series.push(s.clone());
        target.statics.insert(rec.patient_id.clone(), rec.clone());
    }
    (dev, val)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelArchetype {
    pub baseline: f64,
    /// Change per hour.
    pub slope: f64,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Archetype {
    pub temp: ChannelArchetype,
    pub hr: ChannelArchetype,
    pub mbp: ChannelArchetype,
    pub rr: ChannelArchetype,
    pub spo2: ChannelArchetype,
}

impl Archetype {
    pub fn channel(&self, c: VitalChannel) -> &ChannelArchetype {
        match c {
            VitalChannel::Temperature => &self.temp,
            VitalChannel::HeartRate => &self.hr,
            VitalChannel::MeanBp => &self.mbp,
            VitalChannel::RespRate => &self.rr,
            VitalChannel::SpO2 => &self.spo2,
        }
    }

    pub fn uniform(ch: ChannelArchetype) -> Self {
        Archetype {
            temp: ch,
            hr: ch,
            mbp: ch,
            rr: ch,
            spo2: ch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSubgroup {
    pub n_patients: usize,
    pub icu_death: f64,
    pub hospital_death: f64,
    pub archetype: Archetype,
}

/// Parameters of a planted-subgroup cohort.
///
/// Draw order (one ChaCha8 stream seeded with `seed`): patients in index
/// order (subgroup 0 first); per patient, channels in canonical order with
/// hours ascending (one standard-normal draw per cell), then two uniforms
/// for the ICU and hospital death flags, then one uniform for the era, then
/// one integer for age and one for gender.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    #[serde(default = "default_hours")]
    pub hours: usize,
    #[serde(default)]
    pub era_fraction_validation: f64,
    #[serde(default = "default_prefix")]
    pub id_prefix: String,
    pub subgroups: Vec<SyntheticSubgroup>,
}

fn default_hours() -> usize {
    crate::model::DEFAULT_HOURS
}

fn default_prefix() -> String {
    "p".into()
}

impl SyntheticSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: SyntheticSpec =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.subgroups.is_empty() {
            return bad("synthetic spec needs at least one subgroup".into());
        }
        if self.hours < MIN_HOURS {
            return bad(format!("hours must be at least {MIN_HOURS}"));
        }
        if !(0.0..=1.0).contains(&self.era_fraction_validation) {
            return bad("era_fraction_validation must lie in [0, 1]".into());
        }
        for (g, sub) in self.subgroups.iter().enumerate() {
            if sub.n_patients == 0 {
                return bad(format!("subgroup {g}: n_patients must be positive"));
            }
            for p in [sub.icu_death, sub.hospital_death] {
                if !(0.0..=1.0).contains(&p) {
                    return bad(format!("subgroup {g}: probability {p} outside [0, 1]"));
                }
            }
            if sub.icu_death > sub.hospital_death {
                return bad(format!(
                    "subgroup {g}: icu_death probability exceeds hospital_death probability"
                ));
            }
            for c in VitalChannel::ALL {
                let a = sub.archetype.channel(c);
                if !(a.baseline.is_finite() && a.slope.is_finite()) {
                    return bad(format!("subgroup {g}, {c}: non-finite archetype"));
                }
                if !(a.noise_std.is_finite() && a.noise_std >= 0.0) {
                    return bad(format!("subgroup {g}, {c}: noise_std must be >= 0"));
                }
            }
        }
        Ok(())
    }

    pub fn total_patients(&self) -> usize {
        self.subgroups.iter().map(|s| s.n_patients).sum()
    }
}

/// Planted subgroup of each synthetic patient, in cohort order.
pub type GroundTruth = Vec<(String, usize)>;

pub fn generate_synthetic_cohort(spec: &SyntheticSpec) -> Result<(Cohort, GroundTruth)> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);
    let width = spec.total_patients().to_string().len().max(4);
    let hours = spec.hours;
    let mut series = Vec::with_capacity(spec.total_patients());
    let mut statics = Vec::with_capacity(spec.total_patients());
    let mut truth = Vec::with_capacity(spec.total_patients());
    let mut index = 0usize;
    for (g, sub) in spec.subgroups.iter().enumerate() {
        // Hospital death given no ICU death, so that P(hospital) matches the spec.
        let extra_hosp = if sub.icu_death < 1.0 {
            (sub.hospital_death - sub.icu_death) / (1.0 - sub.icu_death)
        } else {
            0.0
        };
        for _ in 0..sub.n_patients {
            let id = format!("{}{:0width$}", spec.id_prefix, index, width = width);
            index += 1;
            let mut cells = Vec::with_capacity(VitalChannel::COUNT * hours);
            for c in VitalChannel::ALL {
                let a = sub.archetype.channel(c);
                for t in 0..hours {
                    let z: f64 = rng.sample(StandardNormal);
                    cells.push(a.baseline + a.slope * t as f64 + a.noise_std * z);
                }
            }
            let u_icu: f64 = rng.gen();
            let u_hosp: f64 = rng.gen();
            let icu_death = u_icu < sub.icu_death;
            let hospital_death = icu_death || u_hosp < extra_hosp;
            let u_era: f64 = rng.gen();
            let era = if u_era < spec.era_fraction_validation {
                Era::Validation
            } else {
                Era::Development
            };
            let age = rng.gen_range(ADULT_AGE..=90);
            let gender = if rng.gen_bool(0.5) { "F" } else { "M" };
            series.push(PatientSeries::from_flat(id.clone(), hours, cells)?);
            statics.push(StaticRecord {
                patient_id: id.clone(),
                age,
                gender: gender.into(),
                race: None,
                height_cm: None,
                weight_kg: None,
                icu_death,
                hospital_death,
                era,
                dod: None,
            });
            truth.push((id, g));
        }
    }
    Ok((Cohort::new(series, statics), truth))
}

pub fn write_ground_truth(path: impl AsRef<Path>, truth: &GroundTruth) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    let err = csv_err(path);
    w.write_record(["patient_id", "true_subgroup"]).map_err(&err)?;
    for (id, g) in truth {
        w.write_record([id.as_str(), &g.to_string()]).map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    records(path.as_ref(), &["patient_id", "true_subgroup"], |rec| {
        let g = rec[1]
            .parse::<usize>()
            .map_err(|_| format!("true_subgroup `{}` is not an index", &rec[1]))?;
        Ok((rec[0].to_string(), g))
    })
}

/// Writes a string to a file, creating parent directories.
pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
