//! Parameter sweeps, Stark-peak location, storage lifetime and calibration.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    coupling_constants, solve_memory, ControlPulseTrain, CouplingConstants, MemoryCalibration,
    MemoryOptions, SignalInput, REFERENCE_DETUNING_GHZ,
};
use crate::atoms::{
    resonant_optical_depth, BufferGas, BufferKind, GroundPopulations, LineLabel, VaporCell,
};
use crate::error::{arg, numeric, Result};

/// Cell used for the memory: caesium D2 with 10 Torr N2 in the standard geometry.
pub fn memory_cell(temperature_k: f64) -> Result<VaporCell> {
    VaporCell::standard(
        LineLabel::D2,
        BufferGas::new(BufferKind::N2, 10.0)?,
        temperature_k,
    )
}

/// One point of an efficiency curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub omega_ghz: f64,
    pub delta_ghz: f64,
    pub temperature_k: f64,
    pub d: f64,
    pub eta: f64,
    pub eta_readin: f64,
    pub anti_stokes_energy: f64,
    pub converged: bool,
}

fn solve_point(
    cell: &VaporCell,
    pops: &GroundPopulations,
    ctrl: &ControlPulseTrain,
    calibration: &MemoryCalibration,
    opts: &MemoryOptions,
) -> Result<SweepRow> {
    let coupling = coupling_constants(cell, pops, ctrl, calibration)?;
    let r = solve_memory(&coupling, ctrl, &SignalInput::Matched, opts)?;
    Ok(SweepRow {
        omega_ghz: ctrl.peak_rabi_ghz,
        delta_ghz: ctrl.detuning_ghz,
        temperature_k: cell.temperature_k,
        d: resonant_optical_depth(cell, pops),
        eta: r.efficiency,
        eta_readin: r.readin_efficiency,
        anti_stokes_energy: r.anti_stokes_energy,
        converged: r.converged(),
    })
}

/// Efficiency against peak Rabi frequency; rows follow the order of `omegas`.
pub fn sweep_rabi(
    cell: &VaporCell,
    pops: &GroundPopulations,
    template: &ControlPulseTrain,
    omegas: &[f64],
    calibration: &MemoryCalibration,
    opts: &MemoryOptions,
) -> Result<Vec<SweepRow>> {
    if omegas.is_empty() {
        return arg("Rabi frequency grid is empty");
    }
    if omegas.windows(2).any(|w| w[1] <= w[0]) {
        return arg("Rabi frequency grid must be strictly ascending");
    }
    omegas
        .par_iter()
        .map(|&om| solve_point(cell, pops, &template.with_rabi(om), calibration, opts))
        .collect()
}

/// Index of the first interior local maximum of `values`.
pub fn first_local_maximum(values: &[f64]) -> Option<usize> {
    (1..values.len().saturating_sub(1))
        .find(|&i| values[i] >= values[i - 1] && values[i] > values[i + 1])
}

/// Location and height of the efficiency maximum preceding the Stark dip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StarkPeak {
    pub omega_ghz: f64,
    pub eta: f64,
}

/// Golden-section refinement of the efficiency maximum inside `[lo, hi]`.
pub fn refine_peak(
    eta_at: impl Fn(f64) -> Result<f64>,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<StarkPeak> {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (eta_at(c)?, eta_at(d)?);
    while b - a > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = eta_at(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = eta_at(d)?;
        }
    }
    let omega = 0.5 * (a + b);
    Ok(StarkPeak {
        omega_ghz: omega,
        eta: eta_at(omega)?,
    })
}

/// Rabi frequency of the first efficiency maximum, found on `omegas` and refined.
///
/// Returns `None` when the curve has no interior maximum on the grid.
pub fn stark_peak(
    cell: &VaporCell,
    pops: &GroundPopulations,
    template: &ControlPulseTrain,
    omegas: &[f64],
    calibration: &MemoryCalibration,
    opts: &MemoryOptions,
) -> Result<Option<StarkPeak>> {
    let fast = MemoryOptions {
        grid_check: false,
        io_map: false,
        ..*opts
    };
    let rows = sweep_rabi(cell, pops, template, omegas, calibration, &fast)?;
    let etas: Vec<f64> = rows.iter().map(|r| r.eta).collect();
    peak_from_rows(cell, pops, template, omegas, &etas, calibration, &fast)
}

fn peak_from_rows(
    cell: &VaporCell,
    pops: &GroundPopulations,
    template: &ControlPulseTrain,
    omegas: &[f64],
    etas: &[f64],
    calibration: &MemoryCalibration,
    fast: &MemoryOptions,
) -> Result<Option<StarkPeak>> {
    let Some(i) = first_local_maximum(etas) else {
        return Ok(None);
    };
    let eta_at = |om: f64| -> Result<f64> {
        Ok(solve_point(cell, pops, &template.with_rabi(om), calibration, fast)?.eta)
    };
    refine_peak(eta_at, omegas[i - 1], omegas[i + 1], 1e-7).map(Some)
}

/// Efficiency curve for one detuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetuningCurve {
    pub detuning_ghz: f64,
    pub rows: Vec<SweepRow>,
    pub stark_peak: Option<StarkPeak>,
}

/// Efficiency curves on a shared Rabi grid for several detunings.
pub fn detuning_comparison(
    cell: &VaporCell,
    pops: &GroundPopulations,
    template: &ControlPulseTrain,
    detunings: &[f64],
    omegas: &[f64],
    calibration: &MemoryCalibration,
    opts: &MemoryOptions,
) -> Result<Vec<DetuningCurve>> {
    if detunings.is_empty() {
        return arg("detuning list is empty");
    }
    if let Some(bad) = detunings.iter().find(|&&d| !(d > 0.0)) {
        return arg(format!("detunings must be > 0, got {bad}"));
    }
    let fast = MemoryOptions {
        grid_check: false,
        io_map: false,
        ..*opts
    };
    detunings
        .iter()
        .map(|&delta| {
            let ctrl = template.with_detuning(delta);
            let rows = sweep_rabi(cell, pops, &ctrl, omegas, calibration, opts)?;
            let etas: Vec<f64> = rows.iter().map(|r| r.eta).collect();
            let stark_peak = peak_from_rows(cell, pops, &ctrl, omegas, &etas, calibration, &fast)?;
            Ok(DetuningCurve {
                detuning_ghz: delta,
                rows,
                stark_peak,
            })
        })
        .collect()
}

/// Diffusion-limited spin-wave lifetime `w^2 / (4 D)`, ns.
pub fn diffusion_lifetime_ns(waist_um: f64, diffusion_cm2_per_s: f64) -> Result<f64> {
    if !(waist_um > 0.0) || !(diffusion_cm2_per_s > 0.0) {
        return arg(format!(
            "waist and diffusion constant must be > 0, got {waist_um} um and {diffusion_cm2_per_s} cm^2/s"
        ));
    }
    let w_cm = waist_um * 1e-4;
    Ok(w_cm * w_cm / (4.0 * diffusion_cm2_per_s) * 1e9)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifetimeCurve {
    pub storage_times_ns: Vec<f64>,
    pub efficiency: Vec<f64>,
    /// Efficiency relative to the shortest storage time.
    pub normalized: Vec<f64>,
    pub tau_model_ns: f64,
    /// 1/e time of an exponential fitted to `normalized`.
    pub tau_fit_ns: f64,
}

/// Memory efficiency against storage time with diffusion-limited spin-wave decay.
///
/// Efficiency decays at `1/tau`, so the spin-wave amplitude decays at `1/(2 tau)`.
pub fn lifetime_curve(
    coupling: &CouplingConstants,
    ctrl: &ControlPulseTrain,
    opts: &MemoryOptions,
    waist_um: f64,
    diffusion_cm2_per_s: f64,
    storage_times_ns: &[f64],
) -> Result<LifetimeCurve> {
    let tau = diffusion_lifetime_ns(waist_um, diffusion_cm2_per_s)?;
    if storage_times_ns.len() < 2 {
        return arg("lifetime curve needs at least two storage times");
    }
    if storage_times_ns.windows(2).any(|w| w[1] <= w[0]) {
        return arg("storage times must be strictly ascending");
    }
    let run = MemoryOptions {
        spinwave_decay_per_ns: 0.5 / tau,
        grid_check: false,
        io_map: false,
        ..*opts
    };
    let efficiency: Vec<f64> = storage_times_ns
        .par_iter()
        .map(|&t| {
            Ok(
                solve_memory(coupling, &ctrl.with_delay(t), &SignalInput::Matched, &run)?
                    .efficiency,
            )
        })
        .collect::<Result<_>>()?;
    let eta0 = efficiency[0];
    if !(eta0 > 0.0) {
        return numeric("efficiency at the shortest storage time is zero; lifetime undefined");
    }
    let normalized: Vec<f64> = efficiency.iter().map(|e| e / eta0).collect();
    let n = storage_times_ns.len() as f64;
    let mx = storage_times_ns.iter().sum::<f64>() / n;
    let ly: Vec<f64> = normalized.iter().map(|v| v.ln()).collect();
    let my = ly.iter().sum::<f64>() / n;
    let (sxy, sxx) = storage_times_ns
        .iter()
        .zip(&ly)
        .fold((0.0, 0.0), |(sxy, sxx), (&x, &y)| {
            (sxy + (x - mx) * (y - my), sxx + (x - mx) * (x - mx))
        });
    Ok(LifetimeCurve {
        storage_times_ns: storage_times_ns.to_vec(),
        efficiency,
        normalized,
        tau_model_ns: tau,
        tau_fit_ns: -sxx / sxy,
    })
}

/// Temperature of the calibration point, K.
pub const CALIBRATION_TEMPERATURE_K: f64 = 343.15;
/// Rabi frequency of the calibration point and of the Stark maximum, GHz.
pub const CALIBRATION_RABI_GHZ: f64 = 4.0;
/// No-FWM efficiency imposed at the calibration point.
pub const CALIBRATION_EFFICIENCY: f64 = 0.25;

/// Rabi grid on which the Stark maximum is searched during calibration.
pub fn calibration_rabi_grid() -> Vec<f64> {
    (8..=24).map(|i| 0.25 * i as f64).collect()
}

/// Fits `kappa_cal` and `stark_cal` at the 70 C reference point.
///
/// `stark_cal` places the first efficiency maximum of the full model at 4 GHz
/// and `kappa_cal` sets the no-FWM efficiency at 4 GHz to 25%. The outer root
/// search runs over `kappa_cal`, re-solving for `stark_cal` at every trial.
pub fn calibrate_memory(opts: &MemoryOptions) -> Result<MemoryCalibration> {
    let cell = memory_cell(CALIBRATION_TEMPERATURE_K)?;
    let pops = GroundPopulations::polarized();
    let ctrl = ControlPulseTrain::new(CALIBRATION_RABI_GHZ, REFERENCE_DETUNING_GHZ);
    let fast = MemoryOptions {
        grid_check: false,
        io_map: false,
        ..*opts
    };
    let no_fwm = MemoryOptions {
        fwm_on: false,
        ..fast
    };
    let grid = calibration_rabi_grid();
    let stark_for = |kappa_cal: f64| -> Result<f64> {
        let peak_offset = |stark_cal: f64| -> Result<f64> {
            let c = MemoryCalibration {
                kappa_cal,
                stark_cal,
            };
            // A curve without a maximum on the grid peaks beyond it.
            Ok(stark_peak(&cell, &pops, &ctrl, &grid, &c, &fast)?
                .map_or(f64::INFINITY, |p| p.omega_ghz)
                - CALIBRATION_RABI_GHZ)
        };
        find_root(|s| Ok(-peak_offset(s)?), 0.2, 0.8, 1e-8)
    };
    let kappa_cal = find_root(
        |kappa_cal| {
            let c = MemoryCalibration {
                kappa_cal,
                stark_cal: stark_for(kappa_cal)?,
            };
            Ok(solve_point(&cell, &pops, &ctrl, &c, &no_fwm)?.eta - CALIBRATION_EFFICIENCY)
        },
        0.25,
        0.31,
        1e-9,
    )?;
    Ok(MemoryCalibration {
        kappa_cal,
        stark_cal: stark_for(kappa_cal)?,
    })
}

/// Root of an increasing function on `[lo, hi]` by the Illinois variant of regula falsi.
///
/// Stops once the bracket or the last step is shorter than `xtol`.
fn find_root(f: impl Fn(f64) -> Result<f64>, mut lo: f64, mut hi: f64, xtol: f64) -> Result<f64> {
    let (mut flo, mut fhi) = (f(lo)?, f(hi)?);
    if !(flo < 0.0 && fhi > 0.0) {
        return numeric(format!(
            "calibration root not bracketed on [{lo}, {hi}]: f = ({flo}, {fhi})"
        ));
    }
    let mut side = 0i8;
    for _ in 0..200 {
        // Bisect while either end is unbounded, otherwise interpolate.
        let x = if flo.is_finite() && fhi.is_finite() {
            (lo * fhi - hi * flo) / (fhi - flo)
        } else {
            0.5 * (lo + hi)
        };
        let fx = f(x)?;
        if fx == 0.0 {
            return Ok(x);
        }
        let (old_lo, old_hi) = (lo, hi);
        if fx < 0.0 {
            lo = x;
            flo = fx;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            fhi = fx;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        }
        if hi - lo < xtol || (old_hi - hi).max(lo - old_lo) < 0.5 * xtol {
            return Ok(x);
        }
    }
    numeric("calibration root search did not converge")
}
