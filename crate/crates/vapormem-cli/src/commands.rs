//! Subcommand bodies and the run manifest they all write.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use serde_json::json;
use vapormem::atoms::{BufferGas, GroundPopulations};
use vapormem::diffusion::{
    d0_from_diffusion, default_timestamps, fit_diffusion, fit_mode_decays, quadrant_error_estimate,
    synthesize_hole_series, transverse_fft, HoleProfile, ImageGrid, DEFAULT_K_MIN,
};
use vapormem::io::{self, Table};
use vapormem::memory::{
    memory_cell, sweep_rabi, ControlPulseTrain, MemoryCalibration, MemoryOptions,
};
use vapormem::pumping::{polarization_curve, CurveOptions, PumpConfig, TrappingMethod};
use vapormem::spectrofit::{
    fit_scan, initial_guess, scan_grid, spectroscopy_cell, synthesize_scan, ScanParams, PARAM_NAMES,
};

use crate::config::{require, sha256_hex, FitKind, RunConfig, Trapping};
use crate::{NumericError, UsageError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;
pub const TOOL: &str = "vapormem";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    PumpingCurve,
    MemorySweep,
    SynthesizeSpectrum,
    SynthesizeImageSeries,
    Fit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to rerun a command: the resolved config text, its hash,
/// the seed, the tool version, and digests of what went in and came out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub seed: u64,
    pub config_sha256: String,
    /// Canonical TOML of the resolved configuration.
    pub config: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<serde_json::Value>,
}

/// Output files of one run, with digests in write order.
struct Outputs {
    dir: PathBuf,
    files: Vec<FileDigest>,
}

impl Outputs {
    fn new(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, text: &str) -> anyhow::Result<()> {
        io::write_text(&self.dir.join(name), text)?;
        self.files.push(FileDigest {
            path: name.to_string(),
            sha256: sha256_hex(text.as_bytes()),
        });
        Ok(())
    }

    /// Record a file some other writer produced.
    fn record(&mut self, name: &str) -> anyhow::Result<()> {
        let bytes =
            fs::read(self.dir.join(name)).with_context(|| format!("reading back {name}"))?;
        self.files.push(FileDigest {
            path: name.to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Digests of a file, or of every file in a directory in name order.
fn digest_input(path: &Path) -> anyhow::Result<Vec<FileDigest>> {
    let mut files = Vec::new();
    if path.is_dir() {
        let mut names: Vec<PathBuf> = fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        names.retain(|p| p.is_file());
        names.sort();
        files.extend(names);
    } else {
        files.push(path.to_path_buf());
    }
    files
        .iter()
        .map(|p| {
            let bytes = fs::read(p)
                .map_err(|e| UsageError(format!("cannot read input {}: {e}", p.display())))?;
            Ok(FileDigest {
                path: p.display().to_string(),
                sha256: sha256_hex(&bytes),
            })
        })
        .collect()
}

/// Run `command` under `cfg`, writing outputs and the manifest into the output directory.
pub fn execute(command: Command, cfg: &RunConfig) -> anyhow::Result<Manifest> {
    let config = cfg.canonical()?;
    let mut out = Outputs::new(cfg.output_dir()?)?;
    let mut inputs = Vec::new();
    let truth = match command {
        Command::PumpingCurve => pumping_curve(cfg, &mut out)?,
        Command::MemorySweep => memory_sweep(cfg, &mut out)?,
        Command::SynthesizeSpectrum => synthesize_spectrum(cfg, &mut out)?,
        Command::SynthesizeImageSeries => synthesize_image_series(cfg, &mut out)?,
        Command::Fit => fit(cfg, &mut out, &mut inputs)?,
    };
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        tool: TOOL.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command,
        seed: cfg.seed,
        config_sha256: sha256_hex(config.as_bytes()),
        config,
        inputs,
        outputs: out.files,
        truth,
    };
    io::write_json(&out.dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Rerun a manifest and require byte-identical outputs.
pub fn replay(manifest_path: &Path, output_dir: Option<PathBuf>) -> anyhow::Result<Manifest> {
    if !manifest_path.is_file() {
        anyhow::bail!(UsageError(format!(
            "manifest {} does not exist",
            manifest_path.display()
        )));
    }
    let recorded: Manifest = io::read_json(manifest_path)?;
    if recorded.tool != TOOL || recorded.format_version != MANIFEST_VERSION {
        anyhow::bail!(UsageError(format!(
            "{} is not a {TOOL} run manifest of format {MANIFEST_VERSION}",
            manifest_path.display()
        )));
    }
    if sha256_hex(recorded.config.as_bytes()) != recorded.config_sha256 {
        anyhow::bail!(UsageError(
            "manifest config does not match its config_sha256".into()
        ));
    }
    if recorded.version != env!("CARGO_PKG_VERSION") {
        eprintln!(
            "warning: manifest written by version {}, replaying with {}",
            recorded.version,
            env!("CARGO_PKG_VERSION")
        );
    }
    let mut cfg = RunConfig::parse(&recorded.config)?;
    cfg.output_dir = Some(match output_dir {
        Some(d) => d,
        None => manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default(),
    });
    if let Some(input) = &cfg.fit.input {
        if recorded.command == Command::Fit && digest_input(input)? != recorded.inputs {
            anyhow::bail!(UsageError(format!(
                "input {} changed since the recorded run",
                input.display()
            )));
        }
    }
    let fresh = execute(recorded.command, &cfg)?;
    if fresh != recorded {
        let differing: Vec<&str> = fresh
            .outputs
            .iter()
            .filter(|f| !recorded.outputs.contains(f))
            .map(|f| f.path.as_str())
            .collect();
        anyhow::bail!(NumericError(format!(
            "replay is not byte-identical; differing outputs: {differing:?}"
        )));
    }
    Ok(fresh)
}

fn pumping_curve(cfg: &RunConfig, out: &mut Outputs) -> anyhow::Result<Option<serde_json::Value>> {
    let p = &cfg.pumping;
    require(p.t_points >= 1, "pumping.t_points", "must be >= 1")?;
    require(
        p.t_max_k >= p.t_min_k,
        "pumping.t_max_k",
        "must be >= pumping.t_min_k",
    )?;
    require(
        !p.runs.is_empty(),
        "pumping.runs",
        "must list at least one run",
    )?;
    let temps = linspace(p.t_min_k, p.t_max_k, p.t_points);
    let opts = CurveOptions {
        method: match p.method {
            Trapping::Analytic => TrappingMethod::Analytic,
            Trapping::MonteCarlo => TrappingMethod::MonteCarlo,
        },
        n_photons: p.n_photons,
        seed: cfg.seed,
        length_cm: p.length_cm,
        radius_cm: p.radius_cm,
    };
    for run in &p.runs {
        let buffer = BufferGas::new(run.buffer, run.pressure_torr)?;
        let pump = PumpConfig {
            pump_rate: cfg.calibration.pump_rate,
            ground_relaxation: cfg.calibration.ground_relaxation,
            ..PumpConfig::calibrated(run.line)
        };
        let curve = polarization_curve(&temps, &buffer, run.line, &pump, &opts)?;
        let mut table = io::pumping_table(&curve);
        table
            .meta("pump_rate_per_ns", pump.pump_rate)
            .meta("ground_relaxation_per_ns", pump.ground_relaxation)
            .meta("method", format!("{:?}", p.method))
            .meta("n_photons", p.n_photons)
            .meta("seed", cfg.seed);
        let name = format!(
            "pumping_{}_{}torr_{}.csv",
            run.buffer.key(),
            run.pressure_torr,
            run.line.key()
        );
        out.write(&name, &table.to_csv_string()?)?;
    }
    Ok(None)
}

fn memory_sweep(cfg: &RunConfig, out: &mut Outputs) -> anyhow::Result<Option<serde_json::Value>> {
    let m = &cfg.memory;
    require(m.omega_points >= 1, "memory.omega_points", "must be >= 1")?;
    require(
        m.omega_min_ghz >= 0.0 && (m.omega_max_ghz > m.omega_min_ghz || m.omega_points == 1),
        "memory.omega_max_ghz",
        "must exceed memory.omega_min_ghz >= 0",
    )?;
    require(
        !m.temperatures_k.is_empty(),
        "memory.temperatures_k",
        "must not be empty",
    )?;
    require(
        !m.detunings_ghz.is_empty(),
        "memory.detunings_ghz",
        "must not be empty",
    )?;
    require(m.bandwidth_ghz > 0.0, "memory.bandwidth_ghz", "must be > 0")?;
    let omegas = linspace(m.omega_min_ghz, m.omega_max_ghz, m.omega_points);
    let calibration = MemoryCalibration {
        kappa_cal: cfg.calibration.kappa_cal,
        stark_cal: cfg.calibration.stark_cal,
    };
    let opts = MemoryOptions {
        fwm_on: m.fwm_on,
        stark_on: m.stark_on,
        spinwave_decay_per_ns: m.spinwave_decay_per_ns,
        nz: m.nz,
        ntau: m.ntau,
        grid_check: m.grid_check,
        ..MemoryOptions::default()
    };
    let no_fwm = MemoryOptions {
        fwm_on: false,
        ..opts
    };
    let pops = GroundPopulations::polarized();
    for &t in &m.temperatures_k {
        let cell = memory_cell(t)?;
        for &delta in &m.detunings_ghz {
            let mut ctrl = ControlPulseTrain::new(0.0, delta);
            ctrl.bandwidth_ghz = m.bandwidth_ghz;
            ctrl.pulse_duration_ns = 1.0 / m.bandwidth_ghz;
            ctrl.readout_delay_ns = m.readout_delay_ns;
            let rows = sweep_rabi(&cell, &pops, &ctrl, &omegas, &calibration, &opts)?;
            let companion: Option<Vec<f64>> = if m.no_fwm_companion {
                let r = sweep_rabi(&cell, &pops, &ctrl, &omegas, &calibration, &no_fwm)?;
                Some(r.iter().map(|row| row.eta).collect())
            } else {
                None
            };
            let mut table = io::sweep_table(&rows, companion.as_deref())?;
            table
                .meta("temperature_K", t)
                .meta("delta_GHz", delta)
                .meta("fwm_on", m.fwm_on)
                .meta("stark_on", m.stark_on)
                .meta("kappa_cal", calibration.kappa_cal)
                .meta("stark_cal", calibration.stark_cal)
                .meta("bandwidth_GHz", m.bandwidth_ghz)
                .meta("readout_delay_ns", m.readout_delay_ns)
                .meta("nz", m.nz)
                .meta("ntau", m.ntau)
                .meta("seed", cfg.seed);
            out.write(
                &format!("memory_T{t}K_delta{delta}GHz.csv"),
                &table.to_csv_string()?,
            )?;
        }
    }
    Ok(None)
}

fn synthesize_spectrum(
    cfg: &RunConfig,
    out: &mut Outputs,
) -> anyhow::Result<Option<serde_json::Value>> {
    let s = &cfg.spectrum;
    let buffer = BufferGas::new(s.buffer, s.pressure_torr)?;
    let mut cell = spectroscopy_cell(s.line, buffer, s.d, s.temperature_k)?;
    cell.line_shape = s.line_shape;
    let pops = GroundPopulations::new(s.polarization)?;
    let grid = scan_grid(s.start_ghz, s.end_ghz, s.points)?;
    let trace = synthesize_scan(
        &cell,
        &pops,
        s.baseline_slope,
        s.baseline_offset,
        s.noise_sigma,
        cfg.seed,
        &grid,
    )?;
    let truth = ScanParams {
        d: s.d,
        polarization: s.polarization,
        temperature_k: s.temperature_k,
        baseline_slope: s.baseline_slope,
        baseline_offset: s.baseline_offset,
    };
    out.write(
        "spectrum.csv",
        &io::trace_table(&trace, Some(&truth)).to_csv_string()?,
    )?;
    Ok(Some(serde_json::to_value(truth)?))
}

/// Image series are written to this subdirectory so their own manifest does not clash.
pub const SERIES_DIR: &str = "series";

fn synthesize_image_series(
    cfg: &RunConfig,
    out: &mut Outputs,
) -> anyhow::Result<Option<serde_json::Value>> {
    let s = &cfg.image_series;
    let diffusion = match s.diffusion_cm2_per_s {
        Some(d) => d,
        None => BufferGas::new(s.buffer, s.pressure_torr)?.diffusion_constant()?,
    };
    require(
        s.pressure_torr > 0.0,
        "image_series.pressure_torr",
        "must be > 0",
    )?;
    let grid = ImageGrid {
        nx: s.nx,
        ny: s.ny,
        pixel_pitch_mm: s.pixel_pitch_mm,
    };
    let hole = HoleProfile::centered_gaussian(&grid, s.hole_depth, s.hole_radius_mm);
    let timestamps =
        default_timestamps(diffusion, s.gamma0_per_ms, &grid, DEFAULT_K_MIN, s.frames)?;
    let series = synthesize_hole_series(
        diffusion,
        s.gamma0_per_ms,
        &hole,
        &grid,
        &timestamps,
        s.noise_sigma,
        cfg.seed,
    )?;
    let truth = json!({
        "buffer": s.buffer.key(),
        "pressure_torr": s.pressure_torr,
        "diffusion_cm2_per_s": diffusion,
        "d0_cm2_per_s": d0_from_diffusion(diffusion, s.pressure_torr),
        "gamma0_per_ms": s.gamma0_per_ms,
        "noise_sigma": s.noise_sigma,
        "seed": cfg.seed,
    });
    let dir = out.dir.join(SERIES_DIR);
    io::write_image_series(&dir, &series, Some(truth.clone()))?;
    for f in (0..series.frames.len())
        .map(|i| format!("frame_{i:04}.csv"))
        .chain([io::IMAGE_MANIFEST_FILE.to_string()])
    {
        out.record(&format!("{SERIES_DIR}/{f}"))?;
    }
    Ok(Some(truth))
}

#[derive(Serialize)]
struct SpectrumFitOutput<'a> {
    input: String,
    fit: &'a vapormem::spectrofit::SpectrumFit,
    std_errors: serde_json::Map<String, serde_json::Value>,
    flagged: bool,
    truth: Option<ScanParams>,
}

#[derive(Serialize)]
struct DiffusionFitOutput<'a> {
    input: String,
    fit: &'a vapormem::diffusion::DiffusionFit,
    quadrant_estimate: Option<vapormem::diffusion::DiffusionFit>,
    truth: Option<serde_json::Value>,
}

fn fit(
    cfg: &RunConfig,
    out: &mut Outputs,
    inputs: &mut Vec<FileDigest>,
) -> anyhow::Result<Option<serde_json::Value>> {
    let f = &cfg.fit;
    let input = f.input.as_deref().ok_or_else(|| {
        UsageError("missing key `fit.input` (set it in the config or pass --input)".into())
    })?;
    if !input.exists() {
        anyhow::bail!(UsageError(format!(
            "input {} does not exist",
            input.display()
        )));
    }
    *inputs = digest_input(input)?;
    let kind = f.kind.unwrap_or(if input.is_dir() {
        FitKind::Diffusion
    } else {
        FitKind::Spectrum
    });
    match kind {
        FitKind::Spectrum => {
            let file = io::read_trace(input)?;
            let guess = initial_guess(&file.trace)?;
            let fit = fit_scan(&file.trace, &guess)?;
            if fit.is_flagged() {
                eprintln!(
                    "warning: parameters finished on a bound: {:?}",
                    fit.at_bound
                );
            }
            let std_errors = PARAM_NAMES
                .iter()
                .zip(fit.std_errors())
                .map(|(k, v)| (k.to_string(), json!(v)))
                .collect();
            let doc = SpectrumFitOutput {
                input: input.display().to_string(),
                fit: &fit,
                std_errors,
                flagged: fit.is_flagged(),
                truth: file.truth,
            };
            out.write("fit_spectrum.json", &io::to_json_string(&doc)?)?;
            Ok(file.truth.map(serde_json::to_value).transpose()?)
        }
        FitKind::Diffusion => {
            let (series, manifest) = io::read_image_series(input)?;
            let truth_pressure = manifest
                .truth
                .as_ref()
                .and_then(|t| t.get("pressure_torr"))
                .and_then(serde_json::Value::as_f64);
            let pressure = f.pressure_torr.or(truth_pressure).ok_or_else(|| {
                UsageError(
                    "missing key `fit.pressure_torr` and the series manifest records none".into(),
                )
            })?;
            let modes = transverse_fft(&series, &f.transform)?;
            let decays = fit_mode_decays(&modes, f.k_min_per_mm, f.k_max_per_mm)?;
            let global = fit_diffusion(&decays, pressure)?;
            let quadrant_estimate = if f.quadrants {
                Some(quadrant_error_estimate(
                    &series,
                    &f.transform,
                    f.k_min_per_mm,
                    f.k_max_per_mm,
                    pressure,
                )?)
            } else {
                None
            };
            let doc = DiffusionFitOutput {
                input: input.display().to_string(),
                fit: &global,
                quadrant_estimate,
                truth: manifest.truth.clone(),
            };
            out.write("fit_diffusion.json", &io::to_json_string(&doc)?)?;
            let mut table = Table::new(&[
                "k_perp_per_mm",
                "gamma_per_ms",
                "gamma_stderr_per_ms",
                "r2",
                "mode_count",
            ]);
            table
                .meta("pressure_torr", pressure)
                .meta("amplitude", format!("{:?}", f.transform.amplitude));
            table.rows = decays
                .iter()
                .map(|m| {
                    vec![
                        m.k_perp,
                        m.fitted_gamma,
                        m.gamma_stderr,
                        m.fit_r2,
                        m.mode_count as f64,
                    ]
                })
                .collect();
            out.write("diffusion_modes.csv", &table.to_csv_string()?)?;
            Ok(manifest.truth)
        }
    }
}
