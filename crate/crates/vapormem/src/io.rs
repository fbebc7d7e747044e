//! File formats: `#`-headed CSV tables, spectroscopy traces, pumping and sweep
//! tables, image-series directories and JSON documents.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a value
//! read back is bit-identical to the value written and equal inputs always
//! produce equal bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::atoms::{BufferKind, LineLabel, LineShape};
use crate::diffusion::ImageSeries;
use crate::error::{Error, Result};
use crate::memory::SweepRow;
use crate::pumping::PolarizationCurve;
use crate::spectrofit::{ScanParams, SpectrumTrace};

/// Version written into image-series manifests; readers reject any other.
pub const IMAGE_MANIFEST_VERSION: u32 = 1;
pub const IMAGE_MANIFEST_FILE: &str = "manifest.json";

pub const TRACE_COLUMNS: [&str; 2] = ["frequency_GHz", "transmission"];
pub const PUMPING_COLUMNS: [&str; 4] = ["T_K", "P", "M", "q"];
pub const SWEEP_COLUMNS: [&str; 8] = [
    "omega_GHz",
    "delta_GHz",
    "T_K",
    "d",
    "eta",
    "eta_readin",
    "anti_stokes_energy",
    "converged_flag",
];
/// Optional companion column of a sweep table: efficiency with FWM suppressed.
pub const NO_FWM_COLUMN: &str = "eta_no_fwm";

/// Shortest round-trip text for `v`, in exponent form outside `[1e-5, 1e16)`.
pub fn format_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-5..1e16).contains(&a) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

fn parse_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{}: {msg}", path.display()))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

/// A numeric table with ordered `key: value` metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub metadata: Vec<(String, String)>,
    pub columns: Vec<String>,
    /// Row-major; every row has `columns.len()` entries.
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            metadata: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn meta(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        self.metadata.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get_meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    /// Serialise to text: `# key: value` lines, a header row, then data rows.
    pub fn to_csv_string(&self) -> Result<String> {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            if k.contains(':') || k.contains('\n') || v.contains('\n') {
                return Err(Error::Argument(format!(
                    "metadata entry {k:?} cannot be encoded"
                )));
            }
            out.push_str(&format!("# {k}: {v}\n"));
        }
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Argument(e.to_string());
        w.write_record(&self.columns).map_err(csv_err)?;
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != self.columns.len() {
                return Err(Error::Argument(format!(
                    "row {i} has {} values for {} columns",
                    row.len(),
                    self.columns.len()
                )));
            }
            w.write_record(row.iter().map(|&v| format_f64(v)))
                .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Argument(e.to_string()))?;
        out.push_str(std::str::from_utf8(&bytes).expect("csv output is utf-8"));
        Ok(out)
    }

    /// Parse text produced by [`Table::to_csv_string`]. `origin` names the source in errors.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut metadata = Vec::new();
        for line in text.lines() {
            let Some(rest) = line.strip_prefix('#') else {
                continue;
            };
            if let Some((k, v)) = rest.split_once(':') {
                metadata.push((k.trim().to_string(), v.trim().to_string()));
            }
        }
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let columns: Vec<String> = rdr
            .headers()
            .map_err(|e| parse_err(origin, e))?
            .iter()
            .map(str::to_string)
            .collect();
        if columns.is_empty() || columns.iter().all(String::is_empty) {
            return Err(parse_err(origin, "no header row"));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| parse_err(origin, e))?;
            let row = rec
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| parse_err(origin, format!("data row {}: {e}", i + 1)))?;
            rows.push(row);
        }
        Ok(Table {
            metadata,
            columns,
            rows,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_csv_string()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        if text.trim().is_empty() {
            return Err(parse_err(path, "file is empty"));
        }
        Self::parse(&text, path)
    }

    /// Require exactly these leading columns and at least one row.
    pub fn expect_columns(&self, expected: &[&str], origin: &Path) -> Result<()> {
        if self.columns.len() < expected.len()
            || self.columns.iter().zip(expected).any(|(a, b)| a != b)
        {
            return Err(parse_err(
                origin,
                format!("expected columns {expected:?}, found {:?}", self.columns),
            ));
        }
        if self.rows.is_empty() {
            return Err(parse_err(origin, "table has no data rows"));
        }
        Ok(())
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Argument(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json_string(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    if text.trim().is_empty() {
        return Err(parse_err(path, "file is empty"));
    }
    serde_json::from_str(&text).map_err(|e| parse_err(path, e))
}

fn line_shape_key(s: LineShape) -> &'static str {
    match s {
        LineShape::Centroid => "centroid",
        LineShape::Resolved => "resolved",
    }
}

fn parse_line_shape(s: &str) -> Option<LineShape> {
    match s.to_ascii_lowercase().as_str() {
        "centroid" => Some(LineShape::Centroid),
        "resolved" => Some(LineShape::Resolved),
        _ => None,
    }
}

const TRUTH_KEYS: [&str; 5] = [
    "truth_d",
    "truth_polarization",
    "truth_temperature_K",
    "truth_baseline_slope",
    "truth_baseline_offset",
];

/// A trace file's contents: the trace and, for synthetic traces, the generating parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub trace: SpectrumTrace,
    pub truth: Option<ScanParams>,
}

pub fn trace_table(trace: &SpectrumTrace, truth: Option<&ScanParams>) -> Table {
    let mut t = Table::new(&TRACE_COLUMNS);
    t.meta("line", trace.line.key())
        .meta("buffer", trace.buffer.key())
        .meta("pressure_torr", trace.pressure_torr)
        .meta("line_shape", line_shape_key(trace.line_shape))
        .meta("noise_sigma", trace.noise_sigma);
    if let Some(seed) = trace.seed {
        t.meta("seed", seed);
    }
    if let Some(p) = truth {
        let vals = [
            p.d,
            p.polarization,
            p.temperature_k,
            p.baseline_slope,
            p.baseline_offset,
        ];
        for (k, v) in TRUTH_KEYS.iter().zip(vals) {
            t.meta(k, v);
        }
    }
    t.rows = trace
        .frequency_ghz
        .iter()
        .zip(&trace.transmission)
        .map(|(&f, &y)| vec![f, y])
        .collect();
    t
}

pub fn write_trace(path: &Path, trace: &SpectrumTrace, truth: Option<&ScanParams>) -> Result<()> {
    trace_table(trace, truth).write(path)
}

fn required_meta<'a>(t: &'a Table, key: &str, path: &Path) -> Result<&'a str> {
    t.get_meta(key)
        .ok_or_else(|| parse_err(path, format!("missing metadata key `{key}`")))
}

fn meta_f64(t: &Table, key: &str, path: &Path) -> Result<f64> {
    required_meta(t, key, path)?
        .parse()
        .map_err(|e| parse_err(path, format!("metadata key `{key}`: {e}")))
}

pub fn read_trace(path: &Path) -> Result<TraceFile> {
    let t = Table::read(path)?;
    t.expect_columns(&TRACE_COLUMNS, path)?;
    let line: LineLabel = required_meta(&t, "line", path)?
        .parse()
        .map_err(|e| parse_err(path, format!("metadata key `line`: {e}")))?;
    let buffer: BufferKind = required_meta(&t, "buffer", path)?
        .parse()
        .map_err(|e| parse_err(path, format!("metadata key `buffer`: {e}")))?;
    let line_shape = match t.get_meta("line_shape") {
        None => LineShape::Centroid,
        Some(s) => parse_line_shape(s).ok_or_else(|| {
            parse_err(
                path,
                format!("metadata key `line_shape`: unknown shape {s:?}"),
            )
        })?,
    };
    let seed = match t.get_meta("seed") {
        None => None,
        Some(s) => Some(
            s.parse()
                .map_err(|e| parse_err(path, format!("metadata key `seed`: {e}")))?,
        ),
    };
    let truth = if TRUTH_KEYS.iter().all(|k| t.get_meta(k).is_some()) {
        let v = TRUTH_KEYS
            .iter()
            .map(|k| meta_f64(&t, k, path))
            .collect::<Result<Vec<f64>>>()?;
        Some(ScanParams {
            d: v[0],
            polarization: v[1],
            temperature_k: v[2],
            baseline_slope: v[3],
            baseline_offset: v[4],
        })
    } else {
        None
    };
    let trace = SpectrumTrace {
        frequency_ghz: t.column(TRACE_COLUMNS[0]).expect("checked"),
        transmission: t.column(TRACE_COLUMNS[1]).expect("checked"),
        noise_sigma: meta_f64(&t, "noise_sigma", path)?,
        line,
        buffer,
        pressure_torr: meta_f64(&t, "pressure_torr", path)?,
        line_shape,
        seed,
    };
    trace.validate()?;
    Ok(TraceFile { trace, truth })
}

pub fn pumping_table(curve: &PolarizationCurve) -> Table {
    let mut t = Table::new(&PUMPING_COLUMNS);
    t.meta("buffer", curve.buffer.kind.key())
        .meta("pressure_torr", curve.buffer.pressure_torr)
        .meta("pump_line", curve.pump_line.key());
    t.rows = (0..curve.temperatures.len())
        .map(|i| {
            vec![
                curve.temperatures[i],
                curve.polarization[i],
                curve.multiplicity[i],
                curve.quench_fraction[i],
            ]
        })
        .collect();
    t
}

/// Sweep rows, with `eta_no_fwm` appended when a companion is given.
pub fn sweep_table(rows: &[SweepRow], no_fwm_eta: Option<&[f64]>) -> Result<Table> {
    let mut cols: Vec<&str> = SWEEP_COLUMNS.to_vec();
    if let Some(c) = no_fwm_eta {
        if c.len() != rows.len() {
            return Err(Error::Argument(format!(
                "companion column has {} values for {} rows",
                c.len(),
                rows.len()
            )));
        }
        cols.push(NO_FWM_COLUMN);
    }
    let mut t = Table::new(&cols);
    t.rows = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut v = vec![
                r.omega_ghz,
                r.delta_ghz,
                r.temperature_k,
                r.d,
                r.eta,
                r.eta_readin,
                r.anti_stokes_energy,
                if r.converged { 1.0 } else { 0.0 },
            ];
            if let Some(c) = no_fwm_eta {
                v.push(c[i]);
            }
            v
        })
        .collect();
    Ok(t)
}

/// `manifest.json` of an image-series directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageManifest {
    pub format_version: u32,
    pub nx: usize,
    pub ny: usize,
    pub pixel_pitch_mm: f64,
    pub timestamps_ms: Vec<f64>,
    /// Frame file names relative to the directory, one per timestamp.
    pub frames: Vec<String>,
    /// Free-form generating parameters of synthetic series.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<serde_json::Value>,
}

fn frame_name(i: usize) -> String {
    format!("frame_{i:04}.csv")
}

/// Write each frame as `ny` lines of `nx` comma-separated values, plus the manifest.
pub fn write_image_series(
    dir: &Path,
    series: &ImageSeries,
    truth: Option<serde_json::Value>,
) -> Result<()> {
    series.validate()?;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut frames = Vec::with_capacity(series.frames.len());
    for (i, frame) in series.frames.iter().enumerate() {
        let mut text = String::with_capacity(frame.len() * 20);
        for row in frame.chunks(series.nx) {
            let cells: Vec<String> = row.iter().map(|&v| format_f64(v)).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        let name = frame_name(i);
        write_text(&dir.join(&name), &text)?;
        frames.push(name);
    }
    let manifest = ImageManifest {
        format_version: IMAGE_MANIFEST_VERSION,
        nx: series.nx,
        ny: series.ny,
        pixel_pitch_mm: series.pixel_pitch_mm,
        timestamps_ms: series.timestamps_ms.clone(),
        frames,
        truth,
    };
    write_json(&dir.join(IMAGE_MANIFEST_FILE), &manifest)
}

fn read_frame(path: &Path, nx: usize, ny: usize) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::with_capacity(nx * ny);
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(path, e))?;
        if rec.len() != nx {
            return Err(parse_err(
                path,
                format!("row {} has {} values, expected {nx}", rows + 1, rec.len()),
            ));
        }
        for s in rec.iter() {
            out.push(
                s.parse::<f64>()
                    .map_err(|e| parse_err(path, format!("row {}: {e}", rows + 1)))?,
            );
        }
        rows += 1;
    }
    if rows != ny {
        return Err(parse_err(path, format!("{rows} rows, expected {ny}")));
    }
    Ok(out)
}

/// Read a directory written by [`write_image_series`]; returns the series and its manifest.
pub fn read_image_series(dir: &Path) -> Result<(ImageSeries, ImageManifest)> {
    let mpath: PathBuf = dir.join(IMAGE_MANIFEST_FILE);
    let manifest: ImageManifest = read_json(&mpath)?;
    if manifest.format_version != IMAGE_MANIFEST_VERSION {
        return Err(parse_err(
            &mpath,
            format!("unsupported format_version {}", manifest.format_version),
        ));
    }
    if manifest.frames.len() != manifest.timestamps_ms.len() {
        return Err(parse_err(
            &mpath,
            format!(
                "{} frame files for {} timestamps",
                manifest.frames.len(),
                manifest.timestamps_ms.len()
            ),
        ));
    }
    let frames = manifest
        .frames
        .iter()
        .map(|f| read_frame(&dir.join(f), manifest.nx, manifest.ny))
        .collect::<Result<Vec<_>>>()?;
    let series = ImageSeries {
        nx: manifest.nx,
        ny: manifest.ny,
        pixel_pitch_mm: manifest.pixel_pitch_mm,
        timestamps_ms: manifest.timestamps_ms.clone(),
        frames,
    };
    series.validate()?;
    Ok((series, manifest))
}
