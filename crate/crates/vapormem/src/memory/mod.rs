//! One-dimensional Raman memory in the adiabatic limit.
//!
//! The signal `S`, the anti-Stokes conjugate `A†` and the spin wave `B` obey
//!
//! ```text
//! dS/dz  = i alpha S - kappa(tau) B
//! dA†/dz = mu(tau) B
//! dB/dtau = kappa(tau) S + mu(tau) A† + (i eps(tau) - gamma_B) B
//! ```
//!
//! with `z` in cell lengths and `tau` in units of `1/delta`. The conserved flux
//! is `|S|^2 - |A|^2` along `z` plus `|B|^2` along `tau`, so the beam-splitter
//! block conserves excitation and the squeezing block conserves the difference.

mod solver;
mod sweep;

pub use solver::*;
pub use sweep::*;

use serde::{Deserialize, Serialize};

use crate::atoms::{resonant_optical_depth, GroundPopulations, VaporCell};
use crate::constants::cesium;
use crate::error::{arg, Error, Result};

/// Ground hyperfine splitting of caesium, GHz.
pub fn hyperfine_splitting_ghz() -> f64 {
    cesium().species.ground_hyperfine_splitting_ghz
}

/// Global scale factors that map physical parameters onto the dimensionless model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryCalibration {
    /// Multiplies `sqrt(d gamma delta) Omega / Delta` to give `c_s`.
    pub kappa_cal: f64,
    /// Multiplies `Omega^2 / Delta` to give the peak AC Stark shift.
    pub stark_cal: f64,
}

/// Frozen calibration; [`calibrate_memory`] reproduces it.
pub const CALIBRATED_KAPPA: f64 = 0.275_208_658_874_218_3;
pub const CALIBRATED_STARK: f64 = 0.406_757_281_816_075_6;

impl Default for MemoryCalibration {
    fn default() -> Self {
        MemoryCalibration {
            kappa_cal: CALIBRATED_KAPPA,
            stark_cal: CALIBRATED_STARK,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Envelope {
    /// Gaussian intensity profile with FWHM `1/delta`.
    #[default]
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlPulseTrain {
    /// Peak Rabi frequency Omega, GHz.
    pub peak_rabi_ghz: f64,
    /// Spectral bandwidth delta, GHz.
    pub bandwidth_ghz: f64,
    /// Detuning Delta from the signal transition, GHz.
    pub detuning_ghz: f64,
    pub envelope: Envelope,
    /// Separation of the read-in and read-out pulses, ns.
    pub readout_delay_ns: f64,
    /// Intensity FWHM of each control pulse, ns.
    pub pulse_duration_ns: f64,
}

/// Reference bandwidth of the pulsed source, GHz.
pub const REFERENCE_BANDWIDTH_GHZ: f64 = 1.2;
/// Reference detuning, GHz.
pub const REFERENCE_DETUNING_GHZ: f64 = 15.2;
/// Shortest storage time at which efficiencies are normalised, ns.
pub const REFERENCE_DELAY_NS: f64 = 12.5;

impl ControlPulseTrain {
    /// Gaussian control with the reference bandwidth and a 12.5 ns storage time.
    pub fn new(peak_rabi_ghz: f64, detuning_ghz: f64) -> Self {
        ControlPulseTrain {
            peak_rabi_ghz,
            bandwidth_ghz: REFERENCE_BANDWIDTH_GHZ,
            detuning_ghz,
            envelope: Envelope::Gaussian,
            readout_delay_ns: REFERENCE_DELAY_NS,
            pulse_duration_ns: 1.0 / REFERENCE_BANDWIDTH_GHZ,
        }
    }

    pub fn with_rabi(mut self, peak_rabi_ghz: f64) -> Self {
        self.peak_rabi_ghz = peak_rabi_ghz;
        self
    }

    pub fn with_detuning(mut self, detuning_ghz: f64) -> Self {
        self.detuning_ghz = detuning_ghz;
        self
    }

    pub fn with_delay(mut self, readout_delay_ns: f64) -> Self {
        self.readout_delay_ns = readout_delay_ns;
        self
    }

    /// Detuning of the anti-Stokes interaction, `Delta + Delta_hf`.
    pub fn anti_stokes_detuning_ghz(&self) -> f64 {
        self.detuning_ghz + hyperfine_splitting_ghz()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_rabi_ghz >= 0.0 && self.peak_rabi_ghz.is_finite()) {
            return arg(format!(
                "peak Rabi frequency must be >= 0, got {}",
                self.peak_rabi_ghz
            ));
        }
        if !(self.bandwidth_ghz > 0.0 && self.bandwidth_ghz.is_finite()) {
            return arg(format!("bandwidth must be > 0, got {}", self.bandwidth_ghz));
        }
        if self.anti_stokes_detuning_ghz() == 0.0 {
            return Err(Error::Domain(format!(
                "detuning {} GHz sits on the anti-Stokes pole",
                self.detuning_ghz
            )));
        }
        if !(self.pulse_duration_ns > 0.0) {
            return arg("pulse duration must be > 0");
        }
        if !(self.readout_delay_ns >= self.pulse_duration_ns) {
            return arg(format!(
                "readout delay {} ns is shorter than the pulse duration {} ns",
                self.readout_delay_ns, self.pulse_duration_ns
            ));
        }
        Ok(())
    }
}

/// Interaction strengths in GHz plus the signal's linear dispersion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingConstants {
    /// Stokes (beam-splitter) coupling, GHz.
    pub c_s: f64,
    /// Anti-Stokes (squeezing) coupling, GHz; always `c_s Delta / (Delta + Delta_hf)`.
    pub c_a: f64,
    /// Peak AC Stark shift, GHz.
    pub stark_peak: f64,
    /// Dispersive phase of the signal across the cell, `d gamma / (4 Delta)` rad.
    pub dispersion: f64,
    /// Control bandwidth the couplings are scaled by, GHz.
    pub bandwidth_ghz: f64,
}

impl CouplingConstants {
    /// Couplings in units of the bandwidth, as used by the solver.
    pub fn scaled(&self) -> (f64, f64) {
        (self.c_s / self.bandwidth_ghz, self.c_a / self.bandwidth_ghz)
    }
}

/// Peak AC Stark shift `stark_cal Omega^2 / Delta`, GHz.
pub fn ac_stark_shift(omega_ghz: f64, detuning_ghz: f64, stark_cal: f64) -> f64 {
    stark_cal * omega_ghz * omega_ghz / detuning_ghz
}

/// Couplings for a cell, ground populations and control pulse.
pub fn coupling_constants(
    cell: &VaporCell,
    pops: &GroundPopulations,
    ctrl: &ControlPulseTrain,
    calibration: &MemoryCalibration,
) -> Result<CouplingConstants> {
    ctrl.validate()?;
    let delta = ctrl.detuning_ghz;
    if !(delta > 0.0) {
        return Err(Error::Domain(format!(
            "detuning must be blue (> 0), got {delta} GHz"
        )));
    }
    let d = resonant_optical_depth(cell, pops);
    let gamma = cell.line.natural_linewidth_ghz();
    let c_s = calibration.kappa_cal * (d * gamma * ctrl.bandwidth_ghz).sqrt() * ctrl.peak_rabi_ghz
        / delta;
    Ok(CouplingConstants {
        c_s,
        c_a: c_s * delta / ctrl.anti_stokes_detuning_ghz(),
        stark_peak: ac_stark_shift(ctrl.peak_rabi_ghz, delta, calibration.stark_cal),
        dispersion: d * gamma / (4.0 * delta),
        bandwidth_ghz: ctrl.bandwidth_ghz,
    })
}
