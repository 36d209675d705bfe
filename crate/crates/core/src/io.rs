//! CSV and JSON persistence. Floats are written with 9 significant digits;
//! non-finite values as `inf`, `-inf` and `nan`.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::coverage::{CoverageMap, Mode};
use crate::experiments::{AccuracyResult, Calibration, CellAccuracy, Cdf, SweepPoint, SweepResult};
use crate::scenario::{Placement, Scenario};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
}

/// `{:.8e}` for finite values.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:.8e}")
    }
}

pub fn parse_float(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        "nan" => Some(f64::NAN),
        other => other.parse().ok(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

/// Serde adapter writing non-finite floats as strings so JSON stays valid.
pub mod inf_float {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&super::fmt_float(*v))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Str(s) => super::parse_float(&s).ok_or_else(|| de::Error::custom(format!("bad float `{s}`"))),
        }
    }
}

/// `{placement}_{theta in degrees}_{power}mw_{mode}`.
pub fn file_stem(placement: Placement, theta: f64, power_mw: f64, mode: Mode) -> String {
    let deg = theta.to_degrees();
    let deg = if (deg - deg.round()).abs() < 1e-6 {
        format!("{}", deg.round() as i64)
    } else {
        format!("{deg:.3}").replace('.', "p")
    };
    format!("{placement}_{deg}_{}mw_{mode}", power_mw.round() as i64)
}

pub fn scenario_stem(s: &Scenario) -> String {
    let theta = s.antennas.first().map_or(0.0, |a| a.elevation);
    file_stem(s.placement, theta, s.radio.tx_power_mw(), s.mode)
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(w)
}

fn field<'a>(rec: &'a csv::StringRecord, k: usize, line: u64) -> Result<&'a str, IoError> {
    rec.get(k).ok_or(IoError::Parse { line, msg: format!("missing column {k}") })
}

fn float_field(rec: &csv::StringRecord, k: usize, line: u64) -> Result<f64, IoError> {
    let s = field(rec, k, line)?;
    parse_float(s).ok_or(IoError::Parse { line, msg: format!("bad float `{s}`") })
}

fn opt_float_field(rec: &csv::StringRecord, k: usize, line: u64) -> Result<Option<f64>, IoError> {
    let s = field(rec, k, line)?;
    if s.is_empty() {
        Ok(None)
    } else {
        float_field(rec, k, line).map(Some)
    }
}

fn parsed<T: std::str::FromStr>(rec: &csv::StringRecord, k: usize, line: u64) -> Result<T, IoError> {
    let s = field(rec, k, line)?;
    s.parse().map_err(|_| IoError::Parse { line, msg: format!("bad value `{s}`") })
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

pub const COVERAGE_HEADER: [&str; 5] = ["x", "y", "M", "L", "max_rss_dbm"];

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRow {
    pub x: f64,
    pub y: f64,
    pub m: u32,
    pub localizable: bool,
    pub max_rss_dbm: f64,
}

pub fn coverage_rows(map: &CoverageMap) -> Vec<CoverageRow> {
    (0..map.len())
        .map(|c| {
            let p = map.grid.cell_center(c);
            CoverageRow {
                x: p.x,
                y: p.y,
                m: map.m_count[c],
                localizable: map.localizable[c],
                max_rss_dbm: map.max_rss_dbm[c],
            }
        })
        .collect()
}

pub fn write_coverage_csv<W: Write>(map: &CoverageMap, w: W) -> Result<(), IoError> {
    let mut out = writer(w);
    out.write_record(COVERAGE_HEADER)?;
    for r in coverage_rows(map) {
        out.write_record([
            fmt_float(r.x),
            fmt_float(r.y),
            r.m.to_string(),
            u8::from(r.localizable).to_string(),
            fmt_float(r.max_rss_dbm),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_coverage_csv<R: Read>(r: R) -> Result<Vec<CoverageRow>, IoError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let l: u8 = parsed(&rec, 3, line)?;
        rows.push(CoverageRow {
            x: float_field(&rec, 0, line)?,
            y: float_field(&rec, 1, line)?,
            m: parsed(&rec, 2, line)?,
            localizable: l == 1,
            max_rss_dbm: float_field(&rec, 4, line)?,
        });
    }
    Ok(rows)
}

pub const ACCURACY_HEADER: [&str; 5] = ["x", "y", "M", "crlb_rmse_m", "mle_rmse_m"];

pub fn write_accuracy_csv<W: Write>(result: &AccuracyResult, w: W) -> Result<(), IoError> {
    let mut out = writer(w);
    out.write_record(ACCURACY_HEADER)?;
    for c in &result.cells {
        out.write_record([
            fmt_float(c.x),
            fmt_float(c.y),
            c.m.to_string(),
            fmt_float(c.crlb_rmse_m),
            fmt_float(c.mle_rmse_m),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_accuracy_csv<R: Read>(r: R) -> Result<Vec<CellAccuracy>, IoError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut cells = Vec::new();
    for (cell, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line_of(&rec);
        cells.push(CellAccuracy {
            cell,
            x: float_field(&rec, 0, line)?,
            y: float_field(&rec, 1, line)?,
            m: parsed(&rec, 2, line)?,
            crlb_rmse_m: float_field(&rec, 3, line)?,
            mle_rmse_m: float_field(&rec, 4, line)?,
        });
    }
    Ok(cells)
}

pub const SWEEP_HEADER: [&str; 7] =
    ["placement", "theta_rad", "power_mw", "mode", "coverage_pct", "median_crlb_m", "median_mle_m"];

pub fn write_sweep_csv<W: Write>(sweep: &SweepResult, w: W) -> Result<(), IoError> {
    let mut out = writer(w);
    out.write_record(SWEEP_HEADER)?;
    for p in &sweep.points {
        out.write_record([
            p.placement.to_string(),
            fmt_float(p.theta),
            fmt_float(p.power_mw),
            p.mode.to_string(),
            fmt_float(p.coverage_pct),
            fmt_opt(p.median_crlb_m),
            fmt_opt(p.median_mle_m),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: Read>(r: R) -> Result<Vec<SweepPoint>, IoError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut points = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let bad = |msg: String| IoError::Parse { line, msg };
        points.push(SweepPoint {
            placement: field(&rec, 0, line)?.parse().map_err(bad)?,
            theta: float_field(&rec, 1, line)?,
            power_mw: float_field(&rec, 2, line)?,
            mode: field(&rec, 3, line)?.parse().map_err(|m: String| IoError::Parse { line, msg: m })?,
            coverage_pct: float_field(&rec, 4, line)?,
            median_crlb_m: opt_float_field(&rec, 5, line)?,
            median_mle_m: opt_float_field(&rec, 6, line)?,
        });
    }
    Ok(points)
}

pub const CDF_HEADER: [&str; 3] = ["series", "error_m", "probability"];

/// Long format: one row per step of each named CDF.
pub fn write_cdf_csv<W: Write>(series: &[(&str, &Cdf)], w: W) -> Result<(), IoError> {
    let mut out = writer(w);
    out.write_record(CDF_HEADER)?;
    for (name, cdf) in series {
        for &(x, p) in &cdf.points {
            out.write_record([name.to_string(), fmt_float(x), fmt_float(p)])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_cdf_csv<R: Read>(r: R) -> Result<Vec<(String, Cdf)>, IoError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out: Vec<(String, Cdf)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let name = field(&rec, 0, line)?.to_string();
        let step = (float_field(&rec, 1, line)?, float_field(&rec, 2, line)?);
        match out.last_mut() {
            Some((n, cdf)) if *n == name => cdf.points.push(step),
            _ => out.push((name, Cdf { points: vec![step] })),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub scenarios: Vec<ManifestScenario>,
    pub calibration: Option<Calibration>,
    pub files: Vec<ManifestFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestScenario {
    pub name: String,
    pub content_hash: String,
    pub scenario: Scenario,
    pub coverage_pct: Option<f64>,
}

impl ManifestScenario {
    pub fn new(scenario: &Scenario, coverage_pct: Option<f64>) -> Self {
        Self {
            name: scenario_stem(scenario),
            content_hash: scenario.content_hash(),
            scenario: scenario.clone(),
            coverage_pct,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to `dir/name` and returns its manifest entry.
pub fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<ManifestFile, IoError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), bytes)?;
    Ok(ManifestFile { name: name.to_string(), sha256: sha256_hex(bytes) })
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<PathBuf, IoError> {
    let path = dir.join("manifest.json");
    let mut json = serde_json::to_vec_pretty(manifest)?;
    json.push(b'\n');
    fs::create_dir_all(dir)?;
    fs::write(&path, json)?;
    Ok(path)
}

pub fn read_manifest(path: &Path) -> Result<Manifest, IoError> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}
