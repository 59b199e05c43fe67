//! Hourly per-subgroup vital-sign summaries and their CSV / SVG output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cluster::Label;
use crate::error::{Error, Result};
use crate::ingest::write_text;
use crate::model::{Cohort, Era, VitalChannel};
use crate::prognosis::Subgroup;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub era: Era,
    pub subgroup: Subgroup,
    pub channel: VitalChannel,
    pub hour: usize,
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub se: f64,
}

/// Points sorted by era, subgroup, channel (canonical order), hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub hours: usize,
    pub points: Vec<TrajectoryPoint>,
}

/// Mean, std and SE per (era, subgroup, channel, hour) in raw units. Each
/// patient's era comes from its static record; noise patients form their
/// own subgroup.
pub fn aggregate(cohort: &Cohort, labels: &BTreeMap<String, Label>) -> Result<TrajectorySummary> {
    let hours = cohort.hours().unwrap_or(0);
    let mut groups: BTreeMap<(Era, Subgroup), Vec<usize>> = BTreeMap::new();
    for (i, s) in cohort.series.iter().enumerate() {
        let id = &s.patient_id;
        let label = labels
            .get(id)
            .ok_or_else(|| Error::InvalidParameter(format!("patient `{id}` has no label")))?;
        let era = cohort
            .static_for(id)
            .ok_or_else(|| Error::InvalidParameter(format!("patient `{id}` has no static record")))?
            .era;
        if s.hours() != hours {
            return Err(Error::Dimension(format!("patient `{id}` has {} hours, expected {hours}", s.hours())));
        }
        groups.entry((era, Subgroup::of(*label))).or_default().push(i);
    }
    let mut points = Vec::new();
    for ((era, subgroup), members) in &groups {
        let n = members.len();
        for channel in VitalChannel::ALL {
            for hour in 0..hours {
                let vals = members.iter().map(|&i| cohort.series[i].value(channel, hour));
                let mean = vals.clone().sum::<f64>() / n as f64;
                let std = (vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
                points.push(TrajectoryPoint {
                    era: *era,
                    subgroup: *subgroup,
                    channel,
                    hour,
                    n,
                    mean,
                    std,
                    se: std / (n as f64).sqrt(),
                });
            }
        }
    }
    Ok(TrajectorySummary { hours, points })
}

impl TrajectorySummary {
    pub fn eras(&self) -> Vec<Era> {
        let mut eras: Vec<Era> = self.points.iter().map(|p| p.era).collect();
        eras.dedup();
        eras
    }

    fn for_era(&self, era: Era) -> impl Iterator<Item = &TrajectoryPoint> {
        self.points.iter().filter(move |p| p.era == era)
    }

    /// `era,subgroup,channel,hour,n,mean,std,se` for one era.
    pub fn to_csv(&self, era: Era) -> String {
        let mut out = String::from("era,subgroup,channel,hour,n,mean,std,se\n");
        for p in self.for_era(era) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                era.name(),
                p.subgroup,
                p.channel.code(),
                p.hour,
                p.n,
                p.mean,
                p.std,
                p.se
            );
        }
        out
    }

    /// One panel per channel, one mean polyline per subgroup with a
    /// ±`band`·SE envelope.
    pub fn to_svg(&self, era: Era, band: f64) -> String {
        render_svg(self, era, band)
    }
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];
const NOISE_COLOR: &str = "#7f7f7f";
const WIDTH: f64 = 720.0;
const PANEL_H: f64 = 170.0;
const TOP: f64 = 40.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 140.0;
const GAP: f64 = 40.0;

fn color(s: Subgroup) -> &'static str {
    match s {
        Subgroup::Cluster(i) => PALETTE[i % PALETTE.len()],
        _ => NOISE_COLOR,
    }
}

fn render_svg(summary: &TrajectorySummary, era: Era, band: f64) -> String {
    let hours = summary.hours.max(2);
    let height = TOP + VitalChannel::COUNT as f64 * (PANEL_H + GAP);
    let plot_w = WIDTH - LEFT - RIGHT;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" font-size="14" text-anchor="middle">Vital-sign trajectories, {} era</text>"#,
        WIDTH / 2.0,
        era.name()
    );
    for (c, channel) in VitalChannel::ALL.iter().enumerate() {
        let y0 = TOP + c as f64 * (PANEL_H + GAP) + 10.0;
        let mut series: BTreeMap<Subgroup, Vec<&TrajectoryPoint>> = BTreeMap::new();
        for p in summary.for_era(era).filter(|p| p.channel == *channel) {
            series.entry(p.subgroup).or_default().push(p);
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in series.values().flatten() {
            lo = lo.min(p.mean - band * p.se);
            hi = hi.max(p.mean + band * p.se);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        let pad = ((hi - lo) * 0.05).max(1e-6);
        let (lo, hi) = (lo - pad, hi + pad);
        let x = |h: usize| LEFT + plot_w * h as f64 / (hours - 1) as f64;
        let y = |v: f64| y0 + PANEL_H * (hi - v) / (hi - lo);
        let _ = writeln!(svg, r#"<g class="panel" id="panel-{}">"#, channel.code());
        let _ = writeln!(
            svg,
            r##"<rect x="{LEFT}" y="{y0}" width="{plot_w}" height="{PANEL_H}" fill="none" stroke="#444"/>"##
        );
        let _ = writeln!(svg, r#"<text x="{LEFT}" y="{:.1}">{}</text>"#, y0 - 4.0, channel.label());
        for (v, anchor) in [(hi, y0 + 10.0), (lo, y0 + PANEL_H)] {
            let _ = writeln!(svg, r#"<text x="{:.1}" y="{anchor:.1}" text-anchor="end">{v:.2}</text>"#, LEFT - 6.0);
        }
        for h in 0..summary.hours {
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{h}</text>"#,
                x(h),
                y0 + PANEL_H + 14.0
            );
        }
        for (s, pts) in &series {
            let upper: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", x(p.hour), y(p.mean + band * p.se))).collect();
            let lower: Vec<String> = pts.iter().rev().map(|p| format!("{:.2},{:.2}", x(p.hour), y(p.mean - band * p.se))).collect();
            let line: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", x(p.hour), y(p.mean))).collect();
            let _ = writeln!(
                svg,
                r#"<polygon class="band" points="{} {}" fill="{}" fill-opacity="0.2" stroke="none"/>"#,
                upper.join(" "),
                lower.join(" "),
                color(*s)
            );
            let _ = writeln!(
                svg,
                r#"<polyline class="mean" data-subgroup="{s}" points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
                line.join(" "),
                color(*s)
            );
        }
        let _ = writeln!(svg, "</g>");
    }
    let mut subgroups: Vec<Subgroup> = summary.for_era(era).map(|p| p.subgroup).collect();
    subgroups.dedup();
    for (i, s) in subgroups.iter().enumerate() {
        let ly = TOP + 20.0 + i as f64 * 18.0;
        let lx = WIDTH - RIGHT + 20.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            color(*s),
            lx + 26.0,
            ly + 4.0,
            match s {
                Subgroup::Cluster(c) => format!("subgroup {c}"),
                other => other.to_string(),
            }
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotFormat {
    Csv,
    Svg,
}

/// Writes `trajectories_<era>.<ext>` into `dir` for every era present.
pub fn emit_plot_data(summary: &TrajectorySummary, dir: &Path, formats: &[PlotFormat], band: f64) -> Result<Vec<PathBuf>> {
    if summary.points.is_empty() {
        return Err(Error::InvalidParameter("empty trajectory summary".into()));
    }
    let mut written = Vec::new();
    for era in summary.eras() {
        for f in formats {
            let (ext, body) = match f {
                PlotFormat::Csv => ("csv", summary.to_csv(era)),
                PlotFormat::Svg => ("svg", summary.to_svg(era, band)),
            };
            let path = dir.join(format!("trajectories_{}.{ext}", era.name()));
            write_text(&path, &body)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PatientSeries, StaticRecord};

    fn patient(id: &str, hr: Vec<f64>) -> PatientSeries {
        let flat = |v: f64| vec![v; hr.len()];
        PatientSeries::new(id, [flat(37.0), hr.clone(), flat(80.0), flat(16.0), flat(97.0)]).unwrap()
    }

    fn cohort(series: Vec<PatientSeries>, eras: &[Era]) -> Cohort {
        let statics: Vec<StaticRecord> = series
            .iter()
            .zip(eras)
            .map(|(s, e)| StaticRecord::minimal(s.patient_id.clone(), 50, *e))
            .collect();
        Cohort::new(series, statics)
    }

    #[test]
    fn two_patient_hand_values() {
        let c = cohort(
            vec![
                patient("a", (0..8).map(f64::from).collect()),
                patient("b", (2..10).map(f64::from).collect()),
            ],
            &[Era::Development; 2],
        );
        let labels: BTreeMap<String, Label> = [("a".into(), 0), ("b".into(), 0)].into();
        let s = aggregate(&c, &labels).unwrap();
        let hr: Vec<&TrajectoryPoint> = s.points.iter().filter(|p| p.channel == VitalChannel::HeartRate).collect();
        assert_eq!(hr.len(), 8);
        for (h, p) in hr.iter().enumerate() {
            assert_eq!((p.mean, p.std, p.n), (h as f64 + 1.0, 1.0, 2));
            assert_eq!(p.se, 1.0 / 2f64.sqrt());
        }
        let temp = s.points.iter().find(|p| p.channel == VitalChannel::Temperature).unwrap();
        assert_eq!((temp.mean, temp.std), (37.0, 0.0));
    }

    fn three_groups() -> (Cohort, BTreeMap<String, Label>) {
        let mut series = Vec::new();
        let mut labels = BTreeMap::new();
        let mut eras = Vec::new();
        for i in 0..12 {
            let id = format!("p{i:02}");
            series.push(patient(&id, (0..6).map(|h| 60.0 + (i * 3 + h) as f64 % 11.0).collect()));
            labels.insert(id, (i % 3) as Label);
            eras.push(if i < 9 { Era::Development } else { Era::Validation });
        }
        (cohort(series, &eras), labels)
    }

    #[test]
    fn conservation_and_order_invariance() {
        let (c, labels) = three_groups();
        let s = aggregate(&c, &labels).unwrap();
        assert_eq!(s.points.len(), 2 * 3 * 5 * 6);
        let dev: Vec<&TrajectoryPoint> = s
            .points
            .iter()
            .filter(|p| p.era == Era::Development && p.channel == VitalChannel::HeartRate && p.hour == 2)
            .collect();
        assert_eq!(dev.iter().map(|p| p.n).sum::<usize>(), 9);
        let union: f64 = (0..9).map(|i| c.series[i].value(VitalChannel::HeartRate, 2)).sum::<f64>() / 9.0;
        let weighted: f64 = dev.iter().map(|p| p.n as f64 * p.mean).sum::<f64>() / 9.0;
        assert!((union - weighted).abs() < 1e-12);

        let mut shuffled = c.clone();
        shuffled.series.reverse();
        let t = aggregate(&shuffled, &labels).unwrap();
        for (a, b) in s.points.iter().zip(&t.points) {
            assert_eq!((a.era, a.subgroup, a.channel, a.hour, a.n), (b.era, b.subgroup, b.channel, b.hour, b.n));
            assert!((a.mean - b.mean).abs() < 1e-12 && (a.std - b.std).abs() < 1e-12);
        }
    }

    #[test]
    fn svg_structure_and_files() {
        let (c, labels) = three_groups();
        let s = aggregate(&c, &labels).unwrap();
        let svg = s.to_svg(Era::Development, 1.0);
        assert_eq!(svg.matches(r#"class="panel""#).count(), 5);
        assert_eq!(svg.matches(r#"class="mean""#).count(), 15);
        assert_eq!(svg, s.to_svg(Era::Development, 1.0));
        assert_eq!(s.to_csv(Era::Validation).lines().count(), 1 + 3 * 5 * 6);

        let dir = tempfile::tempdir().unwrap();
        let files = emit_plot_data(&s, dir.path(), &[PlotFormat::Csv, PlotFormat::Svg], 1.0).unwrap();
        let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
        assert_eq!(
            names,
            ["trajectories_development.csv", "trajectories_development.svg", "trajectories_validation.csv", "trajectories_validation.svg"]
        );
        let empty = TrajectorySummary { hours: 8, points: vec![] };
        assert!(emit_plot_data(&empty, dir.path(), &[PlotFormat::Csv], 1.0).is_err());
    }

    #[test]
    fn missing_label_is_an_error() {
        let (c, mut labels) = three_groups();
        labels.remove("p03");
        assert!(aggregate(&c, &labels).is_err());
    }
}
