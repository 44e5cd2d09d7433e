//! On-disk formats: trace and spectrum CSVs with `# key: value` headers,
//! plain column tables, and the JSON report envelope.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::FitResult;
use crate::helium::{HeliumState, TrajectoryPoint};
use crate::spectral::{AnalysisReport, PtComparison, Spectrum};
use crate::trace::{TimeTrace, Unit};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const REPORT_SCHEMA_VERSION: u32 = 1;

const TRACE_FORMAT: &str = "hecpw-trace";
const SPECTRUM_FORMAT: &str = "hecpw-spectrum";
/// Header keys owned by the writer.
const RESERVED: [&str; 5] = ["format", "unit", "sample_rate_hz", "length", "warning"];

/// A trace plus free-form `key: value` metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub trace: TimeTrace,
    pub metadata: BTreeMap<String, String>,
}

impl TraceFile {
    /// Starts the metadata with the toolkit version.
    pub fn new(trace: TimeTrace) -> Self {
        let mut metadata = BTreeMap::new();
        metadata.insert("toolkit_version".to_string(), TOOLKIT_VERSION.to_string());
        Self { trace, metadata }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    /// Parses a metadata value, reporting which key was malformed.
    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::InvalidParameter(format!("trace metadata '{key}' has bad value '{v}'"))),
        }
    }
}

fn check_header_entry(key: &str, value: &str) -> Result<()> {
    if key.is_empty() || key.contains(':') || key.contains('\n') || key.trim() != key {
        return Err(Error::InvalidParameter(format!("bad metadata key '{key}'")));
    }
    if value.contains('\n') || value.trim() != value {
        return Err(Error::InvalidParameter(format!("bad metadata value for '{key}'")));
    }
    Ok(())
}

pub fn format_trace(tf: &TraceFile) -> Result<String> {
    let t = &tf.trace;
    let mut out = String::with_capacity(48 * t.len() + 256);
    writeln!(out, "# format: {TRACE_FORMAT}").unwrap();
    writeln!(out, "# unit: {}", t.unit).unwrap();
    writeln!(out, "# sample_rate_hz: {:e}", t.sample_rate_hz).unwrap();
    writeln!(out, "# length: {}", t.len()).unwrap();
    for w in &t.warnings {
        check_header_entry("warning", w)?;
        writeln!(out, "# warning: {w}").unwrap();
    }
    for (k, v) in &tf.metadata {
        if RESERVED.contains(&k.as_str()) {
            return Err(Error::InvalidParameter(format!("metadata key '{k}' is reserved")));
        }
        check_header_entry(k, v)?;
        writeln!(out, "# {k}: {v}").unwrap();
    }
    out.push_str("time_s,value\n");
    for (i, v) in t.values.iter().enumerate() {
        writeln!(out, "{:e},{:e}", t.time_at(i), v).unwrap();
    }
    Ok(out)
}

/// Lines of a `#`-headed CSV, split into header entries, the column
/// header and numeric rows. Line numbers are 1-based.
struct RawTable {
    header: Vec<(usize, String, String)>,
    columns: Vec<String>,
    columns_line: usize,
    rows: Vec<(usize, Vec<f64>)>,
}

fn parse_table(src: &str, origin: &str) -> Result<RawTable> {
    let err = |line: usize, msg: String| Error::Format { path: origin.to_string(), line, msg };
    let mut header = Vec::new();
    let mut columns: Option<Vec<String>> = None;
    let mut columns_line = 0;
    let mut rows = Vec::new();
    for (idx, raw) in src.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if columns.is_some() {
                continue;
            }
            if let Some((k, v)) = rest.split_once(':') {
                header.push((line_no, k.trim().to_string(), v.trim().to_string()));
            }
            continue;
        }
        match &columns {
            None => {
                columns = Some(line.split(',').map(|c| c.trim().to_string()).collect());
                columns_line = line_no;
            }
            Some(cols) => {
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() != cols.len() {
                    return Err(err(
                        line_no,
                        format!("expected {} columns, found {}", cols.len(), fields.len()),
                    ));
                }
                let values = fields
                    .iter()
                    .map(|f| {
                        f.trim()
                            .parse::<f64>()
                            .map_err(|_| err(line_no, format!("'{}' is not a number", f.trim())))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                rows.push((line_no, values));
            }
        }
    }
    let columns = columns.ok_or_else(|| err(0, "no column header".into()))?;
    Ok(RawTable { header, columns, columns_line, rows })
}

fn header_value<'a>(t: &'a RawTable, key: &str, origin: &str) -> Result<&'a str> {
    t.header
        .iter()
        .find(|(_, k, _)| k == key)
        .map(|(_, _, v)| v.as_str())
        .ok_or_else(|| Error::Format { path: origin.to_string(), line: 0, msg: format!("missing header '{key}'") })
}

fn header_parsed<T: std::str::FromStr>(t: &RawTable, key: &str, origin: &str) -> Result<T> {
    let v = header_value(t, key, origin)?;
    let line = t.header.iter().find(|(_, k, _)| k == key).map_or(0, |h| h.0);
    v.parse().map_err(|_| Error::Format {
        path: origin.to_string(),
        line,
        msg: format!("bad value '{v}' for '{key}'"),
    })
}

fn expect_columns(t: &RawTable, want: &[&str], origin: &str) -> Result<()> {
    if t.columns.iter().map(String::as_str).ne(want.iter().copied()) {
        return Err(Error::Format {
            path: origin.to_string(),
            line: t.columns_line,
            msg: format!("expected columns {}, found {}", want.join(","), t.columns.join(",")),
        });
    }
    Ok(())
}

pub fn parse_trace(src: &str, origin: &str) -> Result<TraceFile> {
    let t = parse_table(src, origin)?;
    let fmt_err = |line: usize, msg: String| Error::Format { path: origin.to_string(), line, msg };
    if header_value(&t, "format", origin)? != TRACE_FORMAT {
        return Err(fmt_err(1, format!("not a {TRACE_FORMAT} file")));
    }
    expect_columns(&t, &["time_s", "value"], origin)?;
    let unit: Unit = header_parsed(&t, "unit", origin)?;
    let sample_rate: f64 = header_parsed(&t, "sample_rate_hz", origin)?;
    let length: usize = header_parsed(&t, "length", origin)?;
    if !(sample_rate > 0.0) {
        return Err(fmt_err(0, "sample_rate_hz must be > 0".into()));
    }
    if t.rows.len() != length {
        return Err(fmt_err(0, format!("header declares {length} rows, found {}", t.rows.len())));
    }
    let dt = 1.0 / sample_rate;
    let mut prev = f64::NEG_INFINITY;
    let mut values = Vec::with_capacity(length);
    for (i, (line, row)) in t.rows.iter().enumerate() {
        let time = row[0];
        if !(time > prev) {
            return Err(fmt_err(*line, "time column is not strictly increasing".into()));
        }
        let expect = i as f64 / sample_rate;
        if (time - expect).abs() > 1e-6 * dt + 1e-12 * expect.abs() {
            return Err(fmt_err(
                *line,
                format!("time {time} s is off the uniform grid (expected {expect} s)"),
            ));
        }
        prev = time;
        values.push(row[1]);
    }
    let mut trace = TimeTrace::new(sample_rate, values, unit)?;
    let mut metadata = BTreeMap::new();
    for (_, k, v) in &t.header {
        match k.as_str() {
            "warning" => trace.warnings.push(v.clone()),
            k if RESERVED.contains(&k) => {}
            _ => {
                metadata.insert(k.clone(), v.clone());
            }
        }
    }
    Ok(TraceFile { trace, metadata })
}

pub fn write_trace(path: &Path, tf: &TraceFile) -> Result<()> {
    std::fs::write(path, format_trace(tf)?)?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<TraceFile> {
    let src = std::fs::read_to_string(path)?;
    parse_trace(&src, &path.display().to_string())
}

pub fn format_spectrum(s: &Spectrum) -> String {
    let mut out = String::with_capacity(48 * s.asd.len() + 256);
    writeln!(out, "# format: {SPECTRUM_FORMAT}").unwrap();
    writeln!(out, "# unit: {}", s.unit).unwrap();
    writeln!(out, "# window: {}", s.window).unwrap();
    writeln!(out, "# segment_length: {}", s.segment_length).unwrap();
    writeln!(out, "# overlap_fraction: {:e}", s.overlap_fraction).unwrap();
    writeln!(out, "# n_segments_averaged: {}", s.n_segments_averaged).unwrap();
    writeln!(out, "# length: {}", s.asd.len()).unwrap();
    out.push_str("frequency_hz,asd\n");
    for (f, a) in s.frequencies_hz.iter().zip(&s.asd) {
        writeln!(out, "{f:e},{a:e}").unwrap();
    }
    out
}

pub fn parse_spectrum(src: &str, origin: &str) -> Result<Spectrum> {
    let t = parse_table(src, origin)?;
    if header_value(&t, "format", origin)? != SPECTRUM_FORMAT {
        return Err(Error::Format { path: origin.to_string(), line: 1, msg: format!("not a {SPECTRUM_FORMAT} file") });
    }
    expect_columns(&t, &["frequency_hz", "asd"], origin)?;
    let length: usize = header_parsed(&t, "length", origin)?;
    if t.rows.len() != length {
        return Err(Error::Format {
            path: origin.to_string(),
            line: 0,
            msg: format!("header declares {length} rows, found {}", t.rows.len()),
        });
    }
    Ok(Spectrum {
        frequencies_hz: t.rows.iter().map(|r| r.1[0]).collect(),
        asd: t.rows.iter().map(|r| r.1[1]).collect(),
        unit: header_parsed(&t, "unit", origin)?,
        window: header_parsed(&t, "window", origin)?,
        segment_length: header_parsed(&t, "segment_length", origin)?,
        overlap_fraction: header_parsed(&t, "overlap_fraction", origin)?,
        n_segments_averaged: header_parsed(&t, "n_segments_averaged", origin)?,
    })
}

pub fn write_spectrum(path: &Path, s: &Spectrum) -> Result<()> {
    std::fs::write(path, format_spectrum(s))?;
    Ok(())
}

pub fn read_spectrum(path: &Path) -> Result<Spectrum> {
    let src = std::fs::read_to_string(path)?;
    parse_spectrum(&src, &path.display().to_string())
}

/// Named numeric columns, as used for fit inputs and plot data.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnTable {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl ColumnTable {
    pub fn new(names: &[&str], columns: Vec<Vec<f64>>) -> Self {
        Self { names: names.iter().map(|s| s.to_string()).collect(), columns }
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }

    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn format_columns(t: &ColumnTable) -> String {
    let mut out = t.names.join(",");
    out.push('\n');
    for i in 0..t.len() {
        let row: Vec<String> = t.columns.iter().map(|c| format!("{:e}", c[i])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Reads a column table, requiring exactly the columns in `want`.
pub fn parse_columns(src: &str, origin: &str, want: &[&str]) -> Result<ColumnTable> {
    let t = parse_table(src, origin)?;
    expect_columns(&t, want, origin)?;
    let mut columns = vec![Vec::with_capacity(t.rows.len()); want.len()];
    for (_, row) in &t.rows {
        for (c, v) in row.iter().enumerate() {
            columns[c].push(*v);
        }
    }
    Ok(ColumnTable::new(want, columns))
}

pub fn read_columns(path: &Path, want: &[&str]) -> Result<ColumnTable> {
    let src = std::fs::read_to_string(path)?;
    parse_columns(&src, &path.display().to_string(), want)
}

pub fn write_columns(path: &Path, t: &ColumnTable) -> Result<()> {
    std::fs::write(path, format_columns(t))?;
    Ok(())
}

const TRAJECTORY_COLUMNS: [&str; 7] = [
    "t_s",
    "bulk_depth_m",
    "channel_depth_m",
    "film_thickness_m",
    "region",
    "shift_hz",
    "f_r_hz",
];

pub fn format_trajectory(points: &[TrajectoryPoint]) -> String {
    let mut out = TRAJECTORY_COLUMNS.join(",");
    out.push('\n');
    for p in points {
        let s = &p.state;
        writeln!(
            out,
            "{:e},{:e},{:e},{:e},{},{:e},{:e}",
            p.t_s, s.bulk_depth_m, s.channel_depth_m, s.film_thickness_m, s.region, p.shift_hz, p.f_r_hz
        )
        .unwrap();
    }
    out
}

pub fn parse_trajectory(src: &str, origin: &str) -> Result<Vec<TrajectoryPoint>> {
    let err = |line: usize, msg: String| Error::Format { path: origin.to_string(), line, msg };
    let mut lines = src.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == TRAJECTORY_COLUMNS.join(",") => {}
        _ => return Err(err(1, "missing trajectory column header".into())),
    }
    lines
        .map(|(i, l)| {
            let f: Vec<&str> = l.trim().split(',').collect();
            if f.len() != TRAJECTORY_COLUMNS.len() {
                return Err(err(i + 1, format!("expected {} columns", TRAJECTORY_COLUMNS.len())));
            }
            let num = |k: usize| {
                f[k].parse::<f64>().map_err(|_| err(i + 1, format!("'{}' is not a number", f[k])))
            };
            Ok(TrajectoryPoint {
                t_s: num(0)?,
                state: HeliumState {
                    bulk_depth_m: num(1)?,
                    channel_depth_m: num(2)?,
                    film_thickness_m: num(3)?,
                    region: f[4].parse().map_err(|e: Error| err(i + 1, e.to_string()))?,
                },
                shift_hz: num(5)?,
                f_r_hz: num(6)?,
            })
        })
        .collect()
}

/// Envelope of an `analyze` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub schema_version: u32,
    pub toolkit_version: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    /// "resonator" or "geophone".
    pub source: String,
    pub analysis: AnalysisReport,
    #[serde(default)]
    pub compare_analysis: Option<AnalysisReport>,
    #[serde(default)]
    pub comparison: Option<PtComparison>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Envelope of a `fit` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitReport {
    pub schema_version: u32,
    pub toolkit_version: String,
    /// "resonance", "kinetic" or "geophone".
    pub mode: String,
    pub fit: FitResult,
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json(value)?)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let src = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&src)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{welch_asd, DetectedHarmonic, WelchParams};

    fn sample_trace() -> TraceFile {
        let values: Vec<f64> = (0..500).map(|i| (i as f64 * 0.37).sin() * 1e-9 + 1e-23 * i as f64).collect();
        let mut t = TimeTrace::new(400.0, values, Unit::Meters).unwrap();
        t.warnings.push("small-signal regime violated".into());
        TraceFile::new(t).with("seed", 42).with("config_hash", "abc")
    }

    #[test]
    fn trace_round_trip_is_exact() {
        let tf = sample_trace();
        let text = format_trace(&tf).unwrap();
        let back = parse_trace(&text, "mem").unwrap();
        assert_eq!(back, tf);
        assert_eq!(back.get_parsed::<u64>("seed").unwrap(), Some(42));
        assert!(text.starts_with("# format: hecpw-trace\n"));
    }

    #[test]
    fn trace_validation_errors_name_the_line() {
        let text = format_trace(&sample_trace()).unwrap();
        let truncated: String = text.lines().take(20).map(|l| format!("{l}\n")).collect();
        assert!(matches!(parse_trace(&truncated, "t"), Err(Error::Format { .. })));

        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let first_row = lines.iter().position(|l| l == "time_s,value").unwrap() + 1;
        lines[first_row + 3] = lines[first_row + 2].clone();
        let err = parse_trace(&lines.join("\n"), "t").unwrap_err();
        match err {
            Error::Format { line, .. } => assert_eq!(line, first_row + 4),
            other => panic!("{other}"),
        }

        lines = text.lines().map(String::from).collect();
        lines[first_row + 1] = "0.0025,abc".into();
        assert!(parse_trace(&lines.join("\n"), "t").unwrap_err().to_string().contains("not a number"));
    }

    #[test]
    fn reserved_metadata_is_rejected() {
        let tf = sample_trace().with("unit", "V");
        assert!(format_trace(&tf).is_err());
    }

    #[test]
    fn spectrum_round_trip_is_exact() {
        let tf = sample_trace();
        let s = welch_asd(&tf.trace, &WelchParams { segment_length: 128, ..Default::default() }).unwrap();
        let back = parse_spectrum(&format_spectrum(&s), "mem").unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn column_round_trip() {
        let t = ColumnTable::new(&["a_hz", "b_db"], vec![vec![1.0, 2.5, 1e9], vec![-3.0, 0.1, 7e-12]]);
        let back = parse_columns(&format_columns(&t), "mem", &["a_hz", "b_db"]).unwrap();
        assert_eq!(back, t);
        assert!(parse_columns(&format_columns(&t), "mem", &["x", "y"]).is_err());
    }

    #[test]
    fn report_json_round_trip() {
        let r = Report {
            schema_version: REPORT_SCHEMA_VERSION,
            toolkit_version: TOOLKIT_VERSION.into(),
            config_hash: "00ff".into(),
            seed: Some(7),
            source: "resonator".into(),
            analysis: AnalysisReport {
                detected_harmonics: vec![DetectedHarmonic { n: 3, frequency: 4.2000000000000002, asd_peak: 1.234567890123e-12 }],
                band: (1.0, 200.0),
                delta_h_rms: 9.000000000000001e-10,
                rms_reduction_pt_off: None,
                probe_slope: Some(-2.7e-5),
                sensitivity_used: Some(1.4e12),
            },
            compare_analysis: None,
            comparison: None,
            warnings: vec![],
        };
        let back: Report = serde_json::from_str(&to_json(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
