//! Optical pumping of the F=3 -> F=4 ground-state population under collisional
//! quenching and radiation trapping.
//!
//! Three levels: |1> (F=4, target), |2> (excited manifold), |3> (F=3). The pump
//! drives |3> -> |2> at rate `R`; |2> decays at `Gamma_rad + Gamma_Q` with a
//! fraction `b` landing in |1>. Trapped fluorescence on the |2> -> |1> line
//! re-excites |1> atoms; with per-flight absorption probability `1 - p` this is
//! an extra |1> -> |2> rate `(1 - p) b Gamma_rad n2`, whose geometric series is
//! the multiplicity `M`. Ground relaxation mixes |1> and |3> toward thermal weights.

mod trapping;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atoms::{BufferGas, BufferKind, GroundPopulations, LineLabel, OpticalLine, VaporCell};
use crate::constants::{cesium, AMU, K_B, TORR};
use crate::error::{arg, numeric, Error, Result};

pub use trapping::{
    absorption_probability, mean_chord_m, multiplicity_analytic, multiplicity_from_escape,
    multiplicity_monte_carlo, TrappingMethod, TrappingModelResult, MIN_PHOTONS,
};

/// Pump rate (ns^-1) that gives P = 0.999 for 10 Torr N2, D1 pumping, 343.15 K,
/// the standard cell and [`DEFAULT_GROUND_RELAXATION`]. Re-derived by a test.
pub const CALIBRATED_PUMP_RATE: f64 = 9.619_051_048_460_017e-4;
/// Ground-state relaxation rate, ns^-1. Only the ratio `R / g` matters.
pub const DEFAULT_GROUND_RELAXATION: f64 = 1e-6;
/// Target polarisation of the pump-rate calibration.
pub const CALIBRATION_TARGET: f64 = 0.999;
pub const CALIBRATION_TEMPERATURE_K: f64 = 343.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ThermalWeighting {
    /// 9/16 in F=4, 7/16 in F=3.
    #[default]
    Degeneracy,
    /// 1/2 in each manifold.
    Equal,
}

impl ThermalWeighting {
    /// Equilibrium fractions (w1, w3).
    pub fn weights(self) -> (f64, f64) {
        match self {
            ThermalWeighting::Degeneracy => {
                let t = GroundPopulations::thermal();
                (t.n1_fraction, t.n3_fraction)
            }
            ThermalWeighting::Equal => (0.5, 0.5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpConfig {
    pub pump_line: LineLabel,
    /// |3> -> |2> excitation rate, ns^-1.
    pub pump_rate: f64,
    /// Symmetric ground-state mixing rate, ns^-1.
    pub ground_relaxation: f64,
    /// Fraction of excited-state decays that land in |1>.
    pub branching_to_target: f64,
    pub thermal_weighting: ThermalWeighting,
}

impl PumpConfig {
    /// Calibrated pump rate with default relaxation and 0.5 branching.
    pub fn calibrated(pump_line: LineLabel) -> Self {
        PumpConfig {
            pump_line,
            pump_rate: CALIBRATED_PUMP_RATE,
            ground_relaxation: DEFAULT_GROUND_RELAXATION,
            branching_to_target: 0.5,
            thermal_weighting: ThermalWeighting::Degeneracy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pump_rate >= 0.0 && self.ground_relaxation >= 0.0) {
            return arg("pump and relaxation rates must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.branching_to_target) {
            return arg(format!(
                "branching_to_target must lie in [0, 1], got {}",
                self.branching_to_target
            ));
        }
        Ok(())
    }
}

/// Collisional quenching rate `n_buffer sigma_Q vbar_rel`, ns^-1.
pub fn quenching_rate(buffer: &BufferGas, temperature_k: f64, line: LineLabel) -> f64 {
    let sigma = buffer.quench_cross_section(line) * 1e-20;
    if sigma == 0.0 || buffer.pressure_torr == 0.0 {
        return 0.0;
    }
    let n_buffer = buffer.pressure_torr * TORR / (K_B * temperature_k);
    let m_cs = cesium().species.mass_amu * AMU;
    let m_b = buffer.mass_amu * AMU;
    let mu = m_cs * m_b / (m_cs + m_b);
    let vbar = (8.0 * K_B * temperature_k / (std::f64::consts::PI * mu)).sqrt();
    n_buffer * sigma * vbar * 1e-9
}

/// Fraction of excited atoms that decay by quenching, `Gamma_Q / (Gamma_Q + Gamma_rad)`.
pub fn quench_branching(line: &OpticalLine, gamma_q: f64) -> f64 {
    if gamma_q.is_infinite() {
        return 1.0;
    }
    gamma_q / (gamma_q + line.radiative_rate())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub n1: f64,
    pub n2: f64,
    pub n3: f64,
    pub polarization: f64,
}

/// Steady state of the three-level rate equations for a given trapping result.
pub fn steady_state(
    cell: &VaporCell,
    pump: &PumpConfig,
    trapping: &TrappingModelResult,
    q: f64,
) -> Result<SteadyState> {
    pump.validate()?;
    if cell.line.label != pump.pump_line {
        return arg(format!(
            "cell line {:?} differs from pump line {:?}",
            cell.line.label, pump.pump_line
        ));
    }
    if !(0.0..1.0).contains(&q) {
        return arg(format!("quench fraction must lie in [0, 1), got {q}"));
    }
    let gamma_rad = cell.line.radiative_rate();
    let gamma = gamma_rad / (1.0 - q);
    let b = pump.branching_to_target;
    let k = absorption_probability(trapping.multiplicity, q) * b * gamma_rad;
    let g = pump.ground_relaxation;
    let r = pump.pump_rate;
    let (w1, w3) = pump.thermal_weighting.weights();
    let a = Matrix3::new(
        -g * w3,
        b * gamma - k,
        g * w1, //
        0.0,
        k - gamma,
        r, //
        1.0,
        1.0,
        1.0,
    );
    let rhs = Vector3::new(0.0, 0.0, 1.0);
    let x = a.lu().solve(&rhs).ok_or_else(|| {
        Error::Numeric(format!(
            "rate equations are singular (R = {r}, g = {g}); populations undetermined"
        ))
    })?;
    let (n1, n2, n3) = (x[0], x[1], x[2]);
    let total = n1 + n2 + n3;
    if !(n1.is_finite() && n2.is_finite() && n3.is_finite()) || (total - 1.0).abs() > 1e-12 {
        return numeric(format!(
            "rate-equation solution violates population conservation: n = ({n1}, {n2}, {n3})"
        ));
    }
    let (n1, n2, n3) = (n1.max(0.0), n2.max(0.0), n3.max(0.0));
    Ok(SteadyState {
        n1,
        n2,
        n3,
        polarization: n1 / (n1 + n3),
    })
}

/// Spin polarisation `P = n1 / (n1 + n3)` for a given trapping result.
pub fn steady_state_polarization(
    cell: &VaporCell,
    pump: &PumpConfig,
    trapping: &TrappingModelResult,
    q: f64,
) -> Result<f64> {
    Ok(steady_state(cell, pump, trapping, q)?.polarization)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveOptions {
    pub method: TrappingMethod,
    pub n_photons: u64,
    pub seed: u64,
    pub length_cm: f64,
    pub radius_cm: f64,
}

impl Default for CurveOptions {
    fn default() -> Self {
        CurveOptions {
            method: TrappingMethod::Analytic,
            n_photons: 10_000,
            seed: 1,
            length_cm: 7.5,
            radius_cm: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarizationPoint {
    pub temperature_k: f64,
    pub polarization: f64,
    pub trapping: TrappingModelResult,
    pub quench_fraction: f64,
    pub state: SteadyState,
}

const FIXED_POINT_TOL: f64 = 1e-13;
const FIXED_POINT_MAX_ITER: usize = 200;

/// Self-consistent steady state: populations set the trapping depth, which sets the populations.
///
/// The fixed point is found with the analytic multiplicity. With the Monte
/// Carlo method the multiplicity is then re-estimated at those populations.
pub fn polarization_at(
    cell: &VaporCell,
    pump: &PumpConfig,
    opts: &CurveOptions,
) -> Result<PolarizationPoint> {
    let gq = quenching_rate(&cell.buffer, cell.temperature_k, cell.line.label);
    let q = quench_branching(&cell.line, gq);
    let mut p = 1.0;
    let mut history = Vec::new();
    let mut converged = false;
    let mut trapping = TrappingModelResult::none(TrappingMethod::Analytic);
    for _ in 0..FIXED_POINT_MAX_ITER {
        let pops = GroundPopulations::new(p)?;
        trapping = multiplicity_analytic(cell, &pops, q);
        let next = steady_state_polarization(cell, pump, &trapping, q)?;
        history.push(next);
        let step = (next - p).abs();
        p = next;
        if step < FIXED_POINT_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        let tail: Vec<String> = history
            .iter()
            .rev()
            .take(5)
            .map(|x| format!("{x:.15}"))
            .collect();
        return numeric(format!(
            "polarisation fixed point did not converge at T = {} K after {} iterations; last iterates {}",
            cell.temperature_k,
            FIXED_POINT_MAX_ITER,
            tail.join(", ")
        ));
    }
    if opts.method == TrappingMethod::MonteCarlo {
        let pops = GroundPopulations::new(p)?;
        trapping = multiplicity_monte_carlo(cell, &pops, q, opts.n_photons, opts.seed)?;
    }
    let state = steady_state(cell, pump, &trapping, q)?;
    Ok(PolarizationPoint {
        temperature_k: cell.temperature_k,
        polarization: state.polarization,
        trapping,
        quench_fraction: q,
        state,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarizationCurve {
    pub temperatures: Vec<f64>,
    pub polarization: Vec<f64>,
    pub multiplicity: Vec<f64>,
    pub quench_fraction: Vec<f64>,
    pub buffer: BufferGas,
    pub pump_line: LineLabel,
}

/// Polarisation against temperature for one buffer gas and pump line.
pub fn polarization_curve(
    temperatures: &[f64],
    buffer: &BufferGas,
    pump_line: LineLabel,
    pump: &PumpConfig,
    opts: &CurveOptions,
) -> Result<PolarizationCurve> {
    if temperatures.is_empty() {
        return arg("temperature grid is empty");
    }
    if temperatures.windows(2).any(|w| w[1] <= w[0]) {
        return arg("temperature grid must be strictly ascending");
    }
    let points: Vec<PolarizationPoint> = temperatures
        .par_iter()
        .map(|&t| {
            let cell = VaporCell::new(
                OpticalLine::new(pump_line),
                buffer.clone(),
                t,
                opts.length_cm,
                opts.radius_cm,
            )?;
            polarization_at(&cell, pump, opts)
        })
        .collect::<Result<_>>()?;
    Ok(PolarizationCurve {
        temperatures: temperatures.to_vec(),
        polarization: points.iter().map(|p| p.polarization).collect(),
        multiplicity: points.iter().map(|p| p.trapping.multiplicity).collect(),
        quench_fraction: points.iter().map(|p| p.quench_fraction).collect(),
        buffer: buffer.clone(),
        pump_line,
    })
}

/// Pump rate giving `target` polarisation for 10 Torr N2, D1, standard cell at `temperature_k`.
pub fn calibrate_pump_rate(target: f64, temperature_k: f64, ground_relaxation: f64) -> Result<f64> {
    if !(0.5..1.0).contains(&target) {
        return arg(format!(
            "calibration target must lie in [0.5, 1), got {target}"
        ));
    }
    let cell = VaporCell::standard(
        LineLabel::D1,
        BufferGas::new(BufferKind::N2, 10.0)?,
        temperature_k,
    )?;
    let opts = CurveOptions::default();
    let p_of = |log_r: f64| -> Result<f64> {
        let mut pump = PumpConfig::calibrated(LineLabel::D1);
        pump.pump_rate = log_r.exp();
        pump.ground_relaxation = ground_relaxation;
        Ok(polarization_at(&cell, &pump, &opts)?.polarization)
    };
    let (mut lo, mut hi) = (
        (ground_relaxation * 1e-3).ln(),
        (ground_relaxation * 1e9).ln(),
    );
    if p_of(lo)? > target || p_of(hi)? < target {
        return numeric("pump-rate calibration target not bracketed");
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if p_of(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}
