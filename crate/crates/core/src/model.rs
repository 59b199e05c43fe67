//! Shared domain types: vital channels, per-patient grids, static records,
//! cohorts, and cohort validation.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default grid length: hours 0 through 7 of the ICU stay.
pub const DEFAULT_HOURS: usize = 8;

/// Smallest grid length the feature catalog supports.
pub const MIN_HOURS: usize = 3;

/// The five monitored vital signs, in canonical matrix order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VitalChannel {
    /// Degrees Celsius.
    #[serde(rename = "temp")]
    Temperature,
    /// Beats per minute.
    #[serde(rename = "hr")]
    HeartRate,
    /// mmHg.
    #[serde(rename = "mbp")]
    MeanBp,
    /// Breaths per minute.
    #[serde(rename = "rr")]
    RespRate,
    /// Percent saturation.
    #[serde(rename = "spo2")]
    SpO2,
}

impl VitalChannel {
    pub const COUNT: usize = 5;

    pub const ALL: [VitalChannel; 5] = [
        VitalChannel::Temperature,
        VitalChannel::HeartRate,
        VitalChannel::MeanBp,
        VitalChannel::RespRate,
        VitalChannel::SpO2,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Short code used in CSV files and feature names.
    pub fn code(self) -> &'static str {
        match self {
            VitalChannel::Temperature => "temp",
            VitalChannel::HeartRate => "hr",
            VitalChannel::MeanBp => "mbp",
            VitalChannel::RespRate => "rr",
            VitalChannel::SpO2 => "spo2",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        VitalChannel::ALL.into_iter().find(|c| c.code() == code)
    }

    pub fn label(self) -> &'static str {
        match self {
            VitalChannel::Temperature => "Temperature (°C)",
            VitalChannel::HeartRate => "Heart rate (beats/min)",
            VitalChannel::MeanBp => "Mean blood pressure (mmHg)",
            VitalChannel::RespRate => "Respiratory rate (breaths/min)",
            VitalChannel::SpO2 => "SpO2 (%)",
        }
    }
}

impl fmt::Display for VitalChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// One patient's 5 × T vital-sign grid, stored channel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientSeries {
    pub patient_id: String,
    hours: usize,
    values: Vec<f64>,
}

impl PatientSeries {
    /// Builds a series from one row per channel, in canonical channel order.
    /// Finiteness and minimum length are checked by [`validate_cohort`], not here.
    pub fn new(patient_id: impl Into<String>, channels: [Vec<f64>; 5]) -> Result<Self> {
        let hours = channels[0].len();
        if channels.iter().any(|c| c.len() != hours) {
            return Err(Error::Dimension(
                "all channels of a patient grid must have the same length".into(),
            ));
        }
        Ok(PatientSeries {
            patient_id: patient_id.into(),
            hours,
            values: channels.concat(),
        })
    }

    /// Builds a series from a flat channel-major buffer of length `5 * hours`.
    pub fn from_flat(patient_id: impl Into<String>, hours: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != VitalChannel::COUNT * hours {
            return Err(Error::Dimension(format!(
                "grid buffer has {} cells, expected {}",
                values.len(),
                VitalChannel::COUNT * hours
            )));
        }
        Ok(PatientSeries {
            patient_id: patient_id.into(),
            hours,
            values,
        })
    }

    pub fn hours(&self) -> usize {
        self.hours
    }

    pub fn channel(&self, channel: VitalChannel) -> &[f64] {
        let start = channel.index() * self.hours;
        &self.values[start..start + self.hours]
    }

    pub fn channel_mut(&mut self, channel: VitalChannel) -> &mut [f64] {
        let start = channel.index() * self.hours;
        &mut self.values[start..start + self.hours]
    }

    pub fn value(&self, channel: VitalChannel, hour: usize) -> f64 {
        self.values[channel.index() * self.hours + hour]
    }

    /// Channel-major cells.
    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }
}

/// Temporal split label. CSV values are the anchor-year groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Era {
    /// Admissions 2008-2016.
    Development,
    /// Admissions 2017-2019.
    Validation,
}

impl Era {
    pub fn name(self) -> &'static str {
        match self {
            Era::Development => "development",
            Era::Validation => "validation",
        }
    }

    pub fn year_group(self) -> &'static str {
        match self {
            Era::Development => "2008-2016",
            Era::Validation => "2017-2019",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "2008-2016" | "development" => Some(Era::Development),
            "2017-2019" | "validation" => Some(Era::Validation),
            _ => None,
        }
    }
}

impl fmt::Display for Era {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticRecord {
    pub patient_id: String,
    pub age: u32,
    pub gender: String,
    pub race: Option<String>,
    pub height_cm: Option<f64>,
    pub weight_kg: Option<f64>,
    pub icu_death: bool,
    pub hospital_death: bool,
    pub era: Era,
    /// Passed through verbatim; never used to derive mortality flags.
    pub dod: Option<String>,
}

impl StaticRecord {
    /// A record with only the fields the pipeline reads populated.
    pub fn minimal(patient_id: impl Into<String>, age: u32, era: Era) -> Self {
        StaticRecord {
            patient_id: patient_id.into(),
            age,
            gender: "U".into(),
            race: None,
            height_cm: None,
            weight_kg: None,
            icu_death: false,
            hospital_death: false,
            era,
            dod: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub series: Vec<PatientSeries>,
    pub statics: BTreeMap<String, StaticRecord>,
}

impl Cohort {
    pub fn new(series: Vec<PatientSeries>, statics: impl IntoIterator<Item = StaticRecord>) -> Self {
        Cohort {
            series,
            statics: statics
                .into_iter()
                .map(|s| (s.patient_id.clone(), s))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn patient_ids(&self) -> Vec<String> {
        self.series.iter().map(|s| s.patient_id.clone()).collect()
    }

    /// Grid length shared by the cohort, or `None` when empty.
    pub fn hours(&self) -> Option<usize> {
        self.series.first().map(PatientSeries::hours)
    }

    pub fn static_for(&self, patient_id: &str) -> Option<&StaticRecord> {
        self.statics.get(patient_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rule {
    NonFiniteCell { channel: VitalChannel, hour: usize },
    TooFewHours { hours: usize },
    GridLengthMismatch { hours: usize, expected: usize },
    DuplicatePatient,
    MissingStatic,
    OrphanStatic,
    StaticIdMismatch { key: String },
    DeathFlagInconsistency,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::NonFiniteCell { channel, hour } => {
                write!(f, "non-finite cell ({channel}, hour {hour})")
            }
            Rule::TooFewHours { hours } => {
                write!(f, "too few timesteps ({hours} < {MIN_HOURS})")
            }
            Rule::GridLengthMismatch { hours, expected } => {
                write!(f, "grid length {hours} differs from cohort length {expected}")
            }
            Rule::DuplicatePatient => f.write_str("duplicate patient_id"),
            Rule::MissingStatic => f.write_str("missing static record"),
            Rule::OrphanStatic => f.write_str("static record without series"),
            Rule::StaticIdMismatch { key } => {
                write!(f, "static record keyed as `{key}` carries a different patient_id")
            }
            Rule::DeathFlagInconsistency => f.write_str("death-flag inconsistency"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub patient_id: String,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.patient_id, self.rule)
    }
}

/// Checks every cohort invariant. Violations are data: an empty list means
/// the cohort is well formed. Series are checked in cohort order, then
/// static records in key order.
pub fn validate_cohort(cohort: &Cohort) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let expected_hours = cohort.hours();

    for s in &cohort.series {
        let id = &s.patient_id;
        let mut push = |rule| {
            out.push(Violation {
                patient_id: id.clone(),
                rule,
            })
        };
        if !seen.insert(id.as_str()) {
            push(Rule::DuplicatePatient);
        }
        if s.hours() < MIN_HOURS {
            push(Rule::TooFewHours { hours: s.hours() });
        }
        if let Some(expected) = expected_hours {
            if s.hours() != expected {
                push(Rule::GridLengthMismatch {
                    hours: s.hours(),
                    expected,
                });
            }
        }
        for channel in VitalChannel::ALL {
            for (hour, v) in s.channel(channel).iter().enumerate() {
                if !v.is_finite() {
                    push(Rule::NonFiniteCell { channel, hour });
                }
            }
        }
        if !cohort.statics.contains_key(id) {
            push(Rule::MissingStatic);
        }
    }

    for (key, rec) in &cohort.statics {
        let mut push = |rule| {
            out.push(Violation {
                patient_id: key.clone(),
                rule,
            })
        };
        if rec.patient_id != *key {
            push(Rule::StaticIdMismatch { key: key.clone() });
        }
        if !seen.contains(key.as_str()) {
            push(Rule::OrphanStatic);
        }
        if rec.icu_death && !rec.hospital_death {
            push(Rule::DeathFlagInconsistency);
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// A series whose channel `c` at hour `t` is `base + 10*c + t`.
    pub fn ramp(id: &str, base: f64, hours: usize) -> PatientSeries {
        let channels = std::array::from_fn(|c| {
            (0..hours).map(|t| base + 10.0 * c as f64 + t as f64).collect()
        });
        PatientSeries::new(id, channels).unwrap()
    }

    pub fn two_patient_cohort() -> Cohort {
        Cohort::new(
            vec![ramp("a", 0.0, 8), ramp("b", 5.0, 8)],
            vec![
                StaticRecord::minimal("a", 40, Era::Development),
                StaticRecord::minimal("b", 70, Era::Validation),
            ],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn channel_order_is_canonical() {
        let codes: Vec<_> = VitalChannel::ALL.iter().map(|c| c.code()).collect();
        assert_eq!(codes, ["temp", "hr", "mbp", "rr", "spo2"]);
        for (i, c) in VitalChannel::ALL.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(VitalChannel::from_code(c.code()), Some(*c));
        }
    }

    #[test]
    fn well_formed_cohort_has_no_violations() {
        assert!(validate_cohort(&two_patient_cohort()).is_empty());
    }

    #[test]
    fn nan_cell_is_reported() {
        let mut cohort = two_patient_cohort();
        cohort.series[1].channel_mut(VitalChannel::HeartRate)[3] = f64::NAN;
        let v = validate_cohort(&cohort);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].patient_id, "b");
        assert!(v[0].to_string().contains("non-finite cell"));
        assert_eq!(
            v[0].rule,
            Rule::NonFiniteCell {
                channel: VitalChannel::HeartRate,
                hour: 3
            }
        );
    }

    #[test]
    fn icu_death_without_hospital_death_is_reported() {
        let mut cohort = two_patient_cohort();
        let rec = cohort.statics.get_mut("a").unwrap();
        rec.icu_death = true;
        rec.hospital_death = false;
        let v = validate_cohort(&cohort);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].patient_id, "a");
        assert_eq!(v[0].rule.to_string(), "death-flag inconsistency");
    }

    #[test]
    fn pairing_and_uniqueness_rules() {
        let mut cohort = two_patient_cohort();
        cohort.series.push(ramp("a", 1.0, 8));
        cohort.series.push(ramp("c", 1.0, 8));
        cohort
            .statics
            .insert("d".into(), StaticRecord::minimal("d", 30, Era::Development));
        let rules: Vec<_> = validate_cohort(&cohort)
            .into_iter()
            .map(|v| (v.patient_id, v.rule))
            .collect();
        assert_eq!(
            rules,
            vec![
                ("a".to_string(), Rule::DuplicatePatient),
                ("c".to_string(), Rule::MissingStatic),
                ("d".to_string(), Rule::OrphanStatic),
            ]
        );
    }

    #[test]
    fn short_grids_are_reported() {
        let cohort = Cohort::new(
            vec![ramp("a", 0.0, 2)],
            vec![StaticRecord::minimal("a", 40, Era::Development)],
        );
        let v = validate_cohort(&cohort);
        assert_eq!(v[0].rule, Rule::TooFewHours { hours: 2 });
    }

    #[test]
    fn validation_is_pure() {
        let mut cohort = two_patient_cohort();
        cohort.series[0].channel_mut(VitalChannel::SpO2)[0] = f64::INFINITY;
        assert_eq!(validate_cohort(&cohort), validate_cohort(&cohort));
    }

    #[test]
    fn ragged_channels_are_rejected() {
        let err = PatientSeries::new("x", [vec![1.0; 8], vec![1.0; 8], vec![1.0; 7], vec![1.0; 8], vec![1.0; 8]]);
        assert!(err.is_err());
    }
}
