//! Experiment plumbing: run configuration snapshots, metric aggregation,
//! CSV tables and dependency-free SVG plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvConfig, Episode, EpisodeReport};
use crate::instance::GeneratorConfig;
use crate::policy::{CurvePoint, NetworkConfig, TrainerConfig};
use crate::st_demand::StdMatrix;
use crate::Scalar;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "DPDP_OUT";

pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no reports to aggregate")]
    Empty,
    #[error("io error on {path}")]
    Io { path: String, source: std::io::Error },
    #[error("unknown policy {0:?}; expected greedy1, greedy2, greedy3, learned or exact-plan")]
    UnknownPolicy(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Greedy1,
    Greedy2,
    Greedy3,
    Learned,
    ExactPlan,
}

impl std::str::FromStr for PolicyKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy1" | "greedy-incremental" => Ok(Self::Greedy1),
            "greedy2" | "greedy-total" => Ok(Self::Greedy2),
            "greedy3" | "greedy-max-orders" => Ok(Self::Greedy3),
            "learned" => Ok(Self::Learned),
            "exact-plan" => Ok(Self::ExactPlan),
            other => Err(HarnessError::UnknownPolicy(other.to_string())),
        }
    }
}

/// Everything needed to re-run a command; written as `config.json` next to its outputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyKind>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub instances: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trainer: Option<TrainerConfig>,
    pub env: EnvConfig,
    pub out_dir: String,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl RunConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn write_snapshot(&self, dir: impl AsRef<Path>) -> Result<PathBuf, HarnessError> {
        let path = dir.as_ref().join("config.json");
        write_file(&path, self.to_json())?;
        Ok(path)
    }
}

pub fn write_file(path: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    let path = path.as_ref();
    let err = |source| HarnessError::Io { path: path.display().to_string(), source };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(err)?;
    }
    std::fs::write(path, contents).map_err(err)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(Self { mean, min, max })
    }

    /// Half the min-max spread, the band drawn around repeated runs.
    pub fn half_range(&self) -> f64 {
        (self.max - self.min) / 2.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub nuv: Stat,
    pub ttl: Stat,
    pub tc: Stat,
}

pub fn aggregate_metrics(reports: &[EpisodeReport]) -> Result<Summary, HarnessError> {
    let pick = |f: fn(&EpisodeReport) -> f64| Stat::of(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(Summary {
        count: reports.len(),
        nuv: pick(|r| r.nuv as f64).ok_or(HarnessError::Empty)?,
        ttl: pick(|r| r.ttl).ok_or(HarnessError::Empty)?,
        tc: pick(|r| r.tc).ok_or(HarnessError::Empty)?,
    })
}

/// One evaluated episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub instance: String,
    pub policy: String,
    pub repetition: usize,
    pub nuv: usize,
    pub ttl: f64,
    pub tc: f64,
    pub mean_decision_seconds: f64,
    pub max_decision_seconds: f64,
}

impl MetricsRow {
    pub fn new(instance: &str, policy: &str, repetition: usize, episode: &Episode) -> Self {
        let d = &episode.decision_seconds;
        Self {
            instance: instance.to_string(),
            policy: policy.to_string(),
            repetition,
            nuv: episode.report.nuv,
            ttl: episode.report.ttl,
            tc: episode.report.tc,
            mean_decision_seconds: if d.is_empty() { 0.0 } else { d.iter().sum::<f64>() / d.len() as f64 },
            max_decision_seconds: d.iter().copied().fold(0.0, f64::max),
        }
    }
}

/// Sorts rows by (instance, policy, repetition).
pub fn sort_rows(rows: &mut [MetricsRow]) {
    rows.sort_by(|a, b| {
        (a.instance.as_str(), a.policy.as_str(), a.repetition).cmp(&(b.instance.as_str(), b.policy.as_str(), b.repetition))
    });
}

/// Deterministic columns only; decision timings go to [`timing_csv`].
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("instance,policy,repetition,nuv,ttl,tc\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{:.6},{:.6}", r.instance, r.policy, r.repetition, r.nuv, r.ttl, r.tc);
    }
    out
}

pub fn timing_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("instance,policy,repetition,mean_decision_seconds,max_decision_seconds\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6}",
            r.instance, r.policy, r.repetition, r.mean_decision_seconds, r.max_decision_seconds
        );
    }
    out
}

/// Per-policy summary over all rows, sorted by policy name.
pub fn compare_csv(rows: &[MetricsRow]) -> String {
    let mut groups: BTreeMap<&str, Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.policy.as_str()).or_default().push(r);
    }
    let mut out = String::from("policy,episodes,mean_nuv,mean_ttl,mean_tc,min_tc,max_tc\n");
    for (policy, rs) in groups {
        let nuv = Stat::of(&rs.iter().map(|r| r.nuv as f64).collect::<Vec<_>>()).expect("non-empty");
        let ttl = Stat::of(&rs.iter().map(|r| r.ttl).collect::<Vec<_>>()).expect("non-empty");
        let tc = Stat::of(&rs.iter().map(|r| r.tc).collect::<Vec<_>>()).expect("non-empty");
        let _ = writeln!(
            out,
            "{policy},{},{:.4},{:.4},{:.4},{:.4},{:.4}",
            rs.len(),
            nuv.mean,
            ttl.mean,
            tc.mean,
            tc.min,
            tc.max
        );
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Factories as rows, intervals as columns, white (0) to dark red (max).
pub fn heatmap_svg<F: Scalar>(matrix: &StdMatrix<F>, title: &str) -> String {
    let (rows, cols) = (matrix.rows(), matrix.cols());
    let cell = 6.0;
    let (left, top) = (60.0, 40.0);
    let width = left + cell * cols as f64 + 20.0;
    let height = top + cell * rows as f64 + 40.0;
    let max = matrix.values().iter().map(|v| v.as_f64()).fold(0.0, f64::max);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{left}" y="20" font-family="sans-serif" font-size="14">{}</text>"#, escape(title));
    for r in 0..rows {
        for c in 0..cols {
            let v = matrix.get(r, c).as_f64();
            let t = if max > 0.0 { v / max } else { 0.0 };
            let g = (255.0 * (1.0 - t)).round() as u8;
            let _ = writeln!(
                svg,
                r#"<rect x="{:.1}" y="{:.1}" width="{cell}" height="{cell}" fill="rgb(255,{g},{g})"><title>factory {r}, interval {c}: {v}</title></rect>"#,
                left + cell * c as f64,
                top + cell * r as f64
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="8" text-anchor="end">{r}</text>"#,
            left - 4.0,
            top + cell * (r as f64 + 0.8)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{left}" y="{:.1}" font-family="sans-serif" font-size="10">interval (0..{cols}), max {max}</text>"#,
        top + cell * rows as f64 + 20.0
    );
    svg.push_str("</svg>\n");
    svg
}

/// One named line of (x, y) points with an optional ± band.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub band: Option<Vec<f64>>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub fn curves_svg(series: &[Series], title: &str, x_label: &str, y_label: &str) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 50.0);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in series {
        for (i, &(x, y)) in s.points.iter().enumerate() {
            let b = s.band.as_ref().and_then(|b| b.get(i)).copied().unwrap_or(0.0);
            xs.push(x);
            ys.push(y - b);
            ys.push(y + b);
        }
    }
    let bounds = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    let (x0, x1) = bounds(&xs);
    let (y0, y1) = bounds(&ys);
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{left}" y="20" font-family="sans-serif" font-size="14">{}</text>"#, escape(title));
    let _ = writeln!(
        svg,
        r#"<path d="M{left},{top} V{} H{}" fill="none" stroke="black"/>"#,
        h - bottom,
        w - right
    );
    for (label, v, x, y) in [
        ("", y0, left - 5.0, py(y0)),
        ("", y1, left - 5.0, py(y1) + 4.0),
    ] {
        let _ = writeln!(svg, r#"<text x="{x}" y="{y:.1}" font-family="sans-serif" font-size="10" text-anchor="end">{label}{v:.1}</text>"#);
    }
    let _ = writeln!(svg, r#"<text x="{left}" y="{:.1}" font-family="sans-serif" font-size="10">{x0}</text>"#, h - bottom + 14.0);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="end">{x1}</text>"#,
        w - right,
        h - bottom + 14.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
        (left + w - right) / 2.0,
        h - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.1}" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {:.1})" text-anchor="middle">{}</text>"#,
        (top + h - bottom) / 2.0,
        (top + h - bottom) / 2.0,
        escape(y_label)
    );
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if let Some(band) = &s.band {
            let upper = s.points.iter().zip(band).map(|(&(x, y), b)| format!("{:.2},{:.2}", px(x), py(y + b)));
            let lower = s.points.iter().zip(band).rev().map(|(&(x, y), b)| format!("{:.2},{:.2}", px(x), py(y - b)));
            let pts: Vec<String> = upper.chain(lower).collect();
            let _ = writeln!(svg, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, pts.join(" "));
        }
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "));
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#,
            w - right - 120.0,
            top + 14.0 * (k as f64 + 1.0),
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Per-episode mean TC across repetitions with a half-range band.
pub fn tc_band(name: &str, runs: &[Vec<CurvePoint>]) -> Series {
    let len = runs.iter().map(Vec::len).min().unwrap_or(0);
    let mut points = Vec::with_capacity(len);
    let mut band = Vec::with_capacity(len);
    for e in 0..len {
        let stat = Stat::of(&runs.iter().map(|r| r[e].tc).collect::<Vec<_>>()).expect("non-empty");
        points.push((e as f64, stat.mean));
        band.push(stat.half_range());
    }
    Series { name: name.to_string(), points, band: (runs.len() > 1).then_some(band) }
}

/// Reads a learning-curve CSV written by [`crate::policy::curve_csv`].
pub fn parse_curve_csv(text: &str) -> Result<Vec<CurvePoint>, String> {
    let mut lines = text.lines();
    if lines.next() != Some("episode,loss,nuv,tc,epsilon") {
        return Err("missing learning-curve header".into());
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = |what: &str| format!("line {}: bad {what}", i + 2);
            if f.len() != 5 {
                return Err(bad("column count"));
            }
            Ok(CurvePoint {
                episode: f[0].parse().map_err(|_| bad("episode"))?,
                loss: if f[1].is_empty() { None } else { Some(f[1].parse().map_err(|_| bad("loss"))?) },
                nuv: f[2].parse().map_err(|_| bad("nuv"))?,
                tc: f[3].parse().map_err(|_| bad("tc"))?,
                epsilon: f[4].parse().map_err(|_| bad("epsilon"))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::curve_csv;

    fn report(nuv: usize, ttl: f64, tc: f64) -> EpisodeReport {
        EpisodeReport { nuv, ttl, tc, log: Vec::new(), routes: Vec::new() }
    }

    #[test]
    fn aggregate_examples() {
        let one = aggregate_metrics(&[report(3, 40.0, 980.0)]).unwrap();
        assert_eq!(one.nuv, Stat { mean: 3.0, min: 3.0, max: 3.0 });
        assert_eq!(one.tc.mean, 980.0);
        let two = aggregate_metrics(&[report(3, 40.0, 980.0), report(5, 60.0, 1620.0)]).unwrap();
        assert_eq!(two.nuv.mean, 4.0);
        assert_eq!(two.tc.half_range(), 320.0);
        assert!(matches!(aggregate_metrics(&[]), Err(HarnessError::Empty)));
    }

    #[test]
    fn five_repetition_band() {
        let reports: Vec<_> = [1000.0, 1010.0, 990.0, 1040.0, 1000.0].iter().map(|&tc| report(2, 0.0, tc)).collect();
        let s = aggregate_metrics(&reports).unwrap();
        assert_eq!(s.count, 5);
        assert_eq!(s.tc.mean, 1008.0);
        assert_eq!(s.tc.half_range(), 25.0);
    }

    fn row(instance: &str, policy: &str, rep: usize, nuv: usize, tc: f64) -> MetricsRow {
        MetricsRow {
            instance: instance.into(),
            policy: policy.into(),
            repetition: rep,
            nuv,
            ttl: 0.0,
            tc,
            mean_decision_seconds: 0.0,
            max_decision_seconds: 0.0,
        }
    }

    #[test]
    fn compare_rows_sorted_by_policy() {
        let rows = [row("a", "greedy2", 0, 3, 900.0), row("a", "exact", 0, 2, 700.0), row("b", "greedy2", 0, 5, 1100.0)];
        let csv = compare_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[1].starts_with("exact,1,2.0000"));
        assert!(lines[2].starts_with("greedy2,2,4.0000,0.0000,1000.0000,900.0000,1100.0000"));
    }

    #[test]
    fn metrics_rows_sort_stably() {
        let mut rows = vec![row("b", "x", 0, 1, 1.0), row("a", "y", 1, 1, 1.0), row("a", "y", 0, 1, 1.0), row("a", "x", 0, 1, 1.0)];
        sort_rows(&mut rows);
        let keys: Vec<_> = rows.iter().map(|r| (r.instance.clone(), r.policy.clone(), r.repetition)).collect();
        assert_eq!(keys[0], ("a".into(), "x".into(), 0));
        assert_eq!(keys[1], ("a".into(), "y".into(), 0));
        assert_eq!(keys[3], ("b".into(), "x".into(), 0));
        assert!(metrics_csv(&rows).starts_with("instance,policy,repetition,nuv,ttl,tc\na,x,0,1,0.000000,1.000000\n"));
    }

    #[test]
    fn policy_names_parse() {
        assert_eq!("greedy1".parse::<PolicyKind>().unwrap(), PolicyKind::Greedy1);
        assert_eq!("greedy-max-orders".parse::<PolicyKind>().unwrap(), PolicyKind::Greedy3);
        assert!("fastest".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn svg_outputs_are_well_formed() {
        let mut m = StdMatrix::<f64>::zeros(3, 4);
        m.set(1, 2, 5.0);
        let svg = heatmap_svg(&m, "demand <test>");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<rect x=").count(), 12);
        assert!(svg.contains("rgb(255,0,0)") && svg.contains("&lt;test&gt;"));

        let s = Series { name: "a".into(), points: vec![(0.0, 1.0), (1.0, 3.0)], band: Some(vec![0.5, 0.5]) };
        let flat = Series { name: "b".into(), points: vec![(0.0, 2.0)], band: None };
        let svg = curves_svg(&[s, flat], "t", "episode", "TC");
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<polygon").count(), 1);
        assert!(!svg.contains("NaN"));
        assert!(curves_svg(&[], "empty", "x", "y").contains("</svg>"));
    }

    #[test]
    fn curve_csv_round_trip() {
        let pts = vec![
            CurvePoint { episode: 0, loss: None, nuv: 2, tc: 650.5, epsilon: 1.0 },
            CurvePoint { episode: 1, loss: Some(0.25), nuv: 1, tc: 320.0, epsilon: 0.5 },
        ];
        assert_eq!(parse_curve_csv(&curve_csv(&pts)).unwrap(), pts);
        assert!(parse_curve_csv("nope\n").is_err());
        let band = tc_band("x", &[pts.clone(), pts]);
        assert_eq!(band.band, Some(vec![0.0, 0.0]));
    }

    #[test]
    fn snapshot_written() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { command: "run".into(), seed: 3, policy: Some(PolicyKind::Greedy2), ..RunConfig::default() };
        let path = cfg.write_snapshot(dir.path().join("sub")).unwrap();
        let back: RunConfig = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
