//! Run configuration: one TOML document, versioned, with a table per subcommand.
//!
//! Every table rejects unknown keys. Absent keys take the defaults below, and
//! the fully resolved document is what the run manifest records and hashes.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vapormem::atoms::{BufferKind, LineLabel, LineShape};
use vapormem::diffusion::{TransformOptions, DEFAULT_K_MAX, DEFAULT_K_MIN};
use vapormem::memory::{
    CALIBRATED_KAPPA, CALIBRATED_STARK, REFERENCE_BANDWIDTH_GHZ, REFERENCE_DELAY_NS,
};
use vapormem::pumping::{CALIBRATED_PUMP_RATE, DEFAULT_GROUND_RELAXATION};

use crate::UsageError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    /// Where outputs go. A location, not a parameter: excluded from the hash.
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
    pub calibration: Calibration,
    pub pumping: PumpingSection,
    pub memory: MemorySection,
    pub spectrum: SpectrumSection,
    pub image_series: ImageSeriesSection,
    pub fit: FitSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: 1,
            output_dir: None,
            calibration: Calibration::default(),
            pumping: PumpingSection::default(),
            memory: MemorySection::default(),
            spectrum: SpectrumSection::default(),
            image_series: ImageSeriesSection::default(),
            fit: FitSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Calibration {
    pub kappa_cal: f64,
    pub stark_cal: f64,
    /// Pump excitation rate, ns^-1.
    pub pump_rate: f64,
    /// Ground-state relaxation rate, ns^-1.
    pub ground_relaxation: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration {
            kappa_cal: CALIBRATED_KAPPA,
            stark_cal: CALIBRATED_STARK,
            pump_rate: CALIBRATED_PUMP_RATE,
            ground_relaxation: DEFAULT_GROUND_RELAXATION,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Trapping {
    Analytic,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpRun {
    pub buffer: BufferKind,
    pub pressure_torr: f64,
    pub line: LineLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PumpingSection {
    pub t_min_k: f64,
    pub t_max_k: f64,
    pub t_points: usize,
    pub method: Trapping,
    pub n_photons: u64,
    pub length_cm: f64,
    pub radius_cm: f64,
    pub runs: Vec<PumpRun>,
}

impl Default for PumpingSection {
    fn default() -> Self {
        let run = |buffer, pressure_torr, line| PumpRun {
            buffer,
            pressure_torr,
            line,
        };
        PumpingSection {
            t_min_k: 298.15,
            t_max_k: 373.15,
            t_points: 16,
            method: Trapping::Analytic,
            n_photons: 10_000,
            length_cm: 7.5,
            radius_cm: 1.0,
            runs: vec![
                run(BufferKind::N2, 10.0, LineLabel::D1),
                run(BufferKind::N2, 10.0, LineLabel::D2),
                run(BufferKind::Ne, 20.0, LineLabel::D1),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemorySection {
    pub temperatures_k: Vec<f64>,
    pub detunings_ghz: Vec<f64>,
    pub omega_min_ghz: f64,
    pub omega_max_ghz: f64,
    pub omega_points: usize,
    pub fwm_on: bool,
    pub stark_on: bool,
    /// Add an `eta_no_fwm` column solved with four-wave mixing suppressed.
    pub no_fwm_companion: bool,
    pub bandwidth_ghz: f64,
    pub readout_delay_ns: f64,
    pub spinwave_decay_per_ns: f64,
    pub nz: usize,
    pub ntau: usize,
    pub grid_check: bool,
}

impl Default for MemorySection {
    fn default() -> Self {
        MemorySection {
            temperatures_k: vec![343.15],
            detunings_ghz: vec![15.2],
            omega_min_ghz: 0.5,
            omega_max_ghz: 8.0,
            omega_points: 16,
            fwm_on: true,
            stark_on: true,
            no_fwm_companion: false,
            bandwidth_ghz: REFERENCE_BANDWIDTH_GHZ,
            readout_delay_ns: REFERENCE_DELAY_NS,
            spinwave_decay_per_ns: 0.0,
            nz: 128,
            ntau: 256,
            grid_check: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSection {
    pub line: LineLabel,
    pub buffer: BufferKind,
    pub pressure_torr: f64,
    pub line_shape: LineShape,
    pub d: f64,
    pub polarization: f64,
    pub temperature_k: f64,
    /// Per GHz.
    pub baseline_slope: f64,
    pub baseline_offset: f64,
    pub noise_sigma: f64,
    pub start_ghz: f64,
    pub end_ghz: f64,
    pub points: usize,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        SpectrumSection {
            line: LineLabel::D2,
            buffer: BufferKind::N2,
            pressure_torr: 10.0,
            line_shape: LineShape::Centroid,
            d: 3.0,
            polarization: 0.9,
            temperature_k: 340.0,
            baseline_slope: 0.0,
            baseline_offset: 1.0,
            noise_sigma: 0.01,
            start_ghz: vapormem::spectrofit::SCAN_START_GHZ,
            end_ghz: vapormem::spectrofit::SCAN_END_GHZ,
            points: vapormem::spectrofit::SCAN_POINTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageSeriesSection {
    pub buffer: BufferKind,
    pub pressure_torr: f64,
    /// Overrides the buffer's tabulated D0 scaled to `pressure_torr`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diffusion_cm2_per_s: Option<f64>,
    pub gamma0_per_ms: f64,
    pub nx: usize,
    pub ny: usize,
    pub pixel_pitch_mm: f64,
    pub frames: usize,
    pub hole_depth: f64,
    pub hole_radius_mm: f64,
    pub noise_sigma: f64,
}

impl Default for ImageSeriesSection {
    fn default() -> Self {
        ImageSeriesSection {
            buffer: BufferKind::N2,
            pressure_torr: 10.0,
            diffusion_cm2_per_s: None,
            gamma0_per_ms: 0.1,
            nx: 128,
            ny: 128,
            pixel_pitch_mm: 0.1,
            frames: 64,
            hole_depth: 1.0,
            hole_radius_mm: 1.0,
            noise_sigma: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    Spectrum,
    Diffusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    /// Trace file or image-series directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Inferred from the input when absent: directories are image series.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<FitKind>,
    /// Buffer pressure for D0; falls back to the series manifest's truth.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pressure_torr: Option<f64>,
    pub k_min_per_mm: f64,
    pub k_max_per_mm: f64,
    pub quadrants: bool,
    pub transform: TransformOptions,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection {
            input: None,
            kind: None,
            pressure_torr: None,
            k_min_per_mm: DEFAULT_K_MIN,
            k_max_per_mm: DEFAULT_K_MAX,
            quadrants: true,
            transform: TransformOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).with_context(|| format!("config {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| UsageError(format!("invalid config: {e}")))?;
        if cfg.schema_version != SCHEMA_VERSION {
            bail!(UsageError(format!(
                "invalid config: key `schema_version` is {}, this build reads {SCHEMA_VERSION}",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    /// Canonical TOML of the resolved configuration, excluding `output_dir`.
    pub fn canonical(&self) -> anyhow::Result<String> {
        toml::to_string(self).context("serialising config")
    }

    pub fn output_dir(&self) -> anyhow::Result<&Path> {
        self.output_dir.as_deref().ok_or_else(|| {
            UsageError(
                "missing key `output_dir` (set it in the config or pass --output-dir)".into(),
            )
            .into()
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Reject non-physical values, naming the offending key.
pub fn require(ok: bool, key: &str, msg: &str) -> anyhow::Result<()> {
    if ok {
        Ok(())
    } else {
        Err(UsageError(format!("invalid config: key `{key}` {msg}")).into())
    }
}
