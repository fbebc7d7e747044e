//! Box-scheme propagation of one control pulse and the two-pulse memory solve.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use super::{ControlPulseTrain, CouplingConstants};
use crate::error::{arg, numeric, Error, Result};

type C64 = Complex64;

/// Direction in which the stored spin wave is read out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Retrieval {
    /// Read-out control co-propagates with the read-in control.
    #[default]
    Forward,
    /// Read-out control counter-propagates; the spin wave is mirrored in `z`.
    Backward,
}

/// Signal waveform entering the cell during the read-in pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SignalInput {
    /// Same temporal mode as the control, cell-averaged and normalised to unit energy.
    Matched,
    /// Samples at the `tau` cell centres with unit energy `sum |s|^2 dtau = 1`.
    Sampled(Vec<C64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryOptions {
    pub fwm_on: bool,
    pub stark_on: bool,
    /// Spin-wave amplitude decay rate, ns^-1.
    pub spinwave_decay_per_ns: f64,
    pub nz: usize,
    pub ntau: usize,
    /// Half-width of the `tau` window in units of `1/delta`.
    pub span: f64,
    /// Sub-samples per `tau` cell used to average the input waveform.
    pub subsamples: usize,
    pub retrieval: Retrieval,
    /// Repeat the solve on a half-resolution grid and report the change.
    pub grid_check: bool,
    /// Build the read-in input-output map.
    pub io_map: bool,
}

impl Default for MemoryOptions {
    fn default() -> Self {
        MemoryOptions {
            fwm_on: true,
            stark_on: true,
            spinwave_decay_per_ns: 0.0,
            nz: 128,
            ntau: 256,
            span: 2.5,
            subsamples: 32,
            retrieval: Retrieval::Forward,
            grid_check: true,
            io_map: false,
        }
    }
}

/// Smallest grid accepted along either axis.
pub const MIN_GRID: usize = 16;
/// Relative change in `eta` between grids below which a solve counts as converged.
pub const GRID_TOLERANCE: f64 = 5e-3;

impl MemoryOptions {
    pub fn validate(&self) -> Result<()> {
        if self.nz < MIN_GRID || self.ntau < MIN_GRID {
            return arg(format!(
                "grid {}x{} is below the minimum {MIN_GRID} per axis",
                self.nz, self.ntau
            ));
        }
        if self.grid_check && (self.nz % 2 != 0 || self.ntau % 2 != 0) {
            return arg("grid check halves the grid, so nz and ntau must be even");
        }
        if !(self.span > 0.0 && self.span.is_finite()) {
            return arg("tau span must be > 0");
        }
        if self.subsamples == 0 {
            return arg("subsamples must be >= 1");
        }
        if !(self.spinwave_decay_per_ns >= 0.0) {
            return arg("spin-wave decay must be >= 0");
        }
        Ok(())
    }
}

const GAUSS_A: f64 = 4.0 * std::f64::consts::LN_2;

/// Control intensity envelope with unit peak and FWHM 1 in `tau`.
pub fn control_intensity(tau: f64) -> f64 {
    (-GAUSS_A * tau * tau).exp()
}

/// `integral_{-inf}^{tau} I(t) dt` for [`control_intensity`].
pub fn cumulative_intensity(tau: f64) -> f64 {
    0.5 * (PI / GAUSS_A).sqrt() * (1.0 + erf(GAUSS_A.sqrt() * tau))
}

fn intensity_area() -> f64 {
    (PI / GAUSS_A).sqrt()
}

/// Uniform cell-centred grid in `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauGrid {
    pub ntau: usize,
    pub span: f64,
}

impl TauGrid {
    pub fn step(&self) -> f64 {
        2.0 * self.span / self.ntau as f64
    }

    pub fn edge(&self, n: usize) -> f64 {
        -self.span + self.step() * n as f64
    }

    pub fn midpoints(&self) -> Vec<f64> {
        (0..self.ntau)
            .map(|n| self.edge(n) + 0.5 * self.step())
            .collect()
    }

    /// Normalised coupling envelope `sqrt(I / area)` at the cell centres.
    pub fn envelope(&self) -> Vec<f64> {
        let area = intensity_area();
        self.midpoints()
            .iter()
            .map(|&t| (control_intensity(t) / area).sqrt())
            .collect()
    }
}

/// Parameters of one control pulse acting on the cell.
#[derive(Debug, Clone, Copy)]
pub struct StageParams<'a> {
    /// `c_s / delta`.
    pub c_s: f64,
    /// `c_a / delta`.
    pub c_a: f64,
    pub dispersion: f64,
    /// Spin-wave amplitude decay in units of `delta`.
    pub decay: f64,
    /// Coupling envelope at the `tau` cell centres.
    pub envelope: &'a [f64],
    pub dtau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput {
    pub s_out: Vec<C64>,
    pub a_out: Vec<C64>,
    pub spin_wave: Vec<C64>,
}

/// Propagates one control pulse through the cell.
///
/// Every grid cell is advanced by the implicit midpoint rule in both `z` and
/// `tau`, which conserves the flux `|S|^2 - |A|^2 + |B|^2` to rounding when the
/// decay is zero. `s_in` and `a_in` are sampled at the `tau` cell centres and
/// `b0` at the `z` cell centres.
pub fn propagate_stage(
    s_in: &[C64],
    a_in: &[C64],
    b0: &[C64],
    p: &StageParams,
) -> Result<StageOutput> {
    let nt = p.envelope.len();
    if s_in.len() != nt || a_in.len() != nt {
        return arg(format!(
            "input waveforms have {} and {} samples, envelope has {nt}",
            s_in.len(),
            a_in.len()
        ));
    }
    let nz = b0.len();
    if nz == 0 {
        return arg("spin-wave grid is empty");
    }
    let hz = 1.0 / nz as f64;
    let a = 0.5 * hz;
    let b = 0.5 * p.dtau;
    let i = C64::i();
    let phase_in = C64::new(1.0, 0.0) + i * p.dispersion * a;
    let pz = (C64::new(1.0, 0.0) - i * p.dispersion * a).inv();
    let decay = C64::new(-p.decay, 0.0);
    let mut spin = b0.to_vec();
    let mut s_out = vec![C64::new(0.0, 0.0); nt];
    let mut a_out = vec![C64::new(0.0, 0.0); nt];
    for n in 0..nt {
        let k = p.c_s * p.envelope[n];
        let m = p.c_a * p.envelope[n];
        let inv_lhs = (C64::new(1.0, 0.0) - b * decay + b * pz * a * k * k - b * a * m * m).inv();
        let keep = (C64::new(1.0, 0.0) + b * decay - b * pz * a * k * k + b * a * m * m) * inv_lhs;
        let from_s = b * k * (C64::new(1.0, 0.0) + pz * phase_in) * inv_lhs;
        let from_a = 2.0 * b * m * inv_lhs;
        let (mut s, mut an) = (s_in[n], a_in[n]);
        for bj in spin.iter_mut() {
            let old = *bj;
            let new = old * keep + from_s * s + from_a * an;
            s = pz * (s * phase_in - a * k * (old + new));
            an += a * m * (old + new);
            *bj = new;
        }
        if !(s.re.is_finite() && s.im.is_finite() && an.re.is_finite() && an.im.is_finite()) {
            return numeric(format!("non-finite field at tau step {n} of {nt}"));
        }
        s_out[n] = s;
        a_out[n] = an;
    }
    Ok(StageOutput {
        s_out,
        a_out,
        spin_wave: spin,
    })
}

fn energy(v: &[C64], h: f64) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>() * h
}

/// Stark phase `2 pi (Delta E / delta) integral I` accumulated up to `tau`.
fn stark_phase(chirp: f64, tau: f64) -> f64 {
    2.0 * PI * chirp * cumulative_intensity(tau)
}

/// Cell averages of `sqrt(I / area) exp(-i phi)` over each `tau` cell.
fn matched_samples(grid: &TauGrid, subsamples: usize, chirp: f64) -> Vec<C64> {
    let area = intensity_area();
    let h = grid.step();
    (0..grid.ntau)
        .map(|n| {
            let t0 = grid.edge(n);
            (0..subsamples)
                .map(|k| {
                    let t = t0 + h * (k as f64 + 0.5) / subsamples as f64;
                    (control_intensity(t) / area).sqrt()
                        * C64::from_polar(1.0, -stark_phase(chirp, t))
                })
                .sum::<C64>()
                / subsamples as f64
        })
        .collect()
}

/// Lab-frame input and its form in the frame co-rotating with the Stark-shifted spin wave.
///
/// The Stark shift is uniform in `z`, so `B -> B exp(-i phi(tau))` removes it
/// from the equations exactly; inputs and outputs pick up the same phase.
fn input_signals(
    signal: &SignalInput,
    grid: &TauGrid,
    chirp: f64,
    subsamples: usize,
) -> Result<(Vec<C64>, Vec<C64>)> {
    let h = grid.step();
    match signal {
        SignalInput::Matched => {
            let raw = matched_samples(grid, subsamples, 0.0);
            let norm = energy(&raw, h).sqrt();
            let lab: Vec<C64> = raw.iter().map(|x| x / norm).collect();
            let rotating = if chirp == 0.0 {
                lab.clone()
            } else {
                // Cell averaging of the chirped pulse loses energy; both frames carry unit energy.
                let raw = matched_samples(grid, subsamples, chirp);
                let norm = energy(&raw, h).sqrt();
                raw.iter().map(|x| x / norm).collect()
            };
            Ok((lab, rotating))
        }
        SignalInput::Sampled(samples) => {
            if samples.len() != grid.ntau {
                return arg(format!(
                    "signal has {} samples, grid has {}",
                    samples.len(),
                    grid.ntau
                ));
            }
            let e = energy(samples, h);
            if !((e - 1.0).abs() <= 1e-6) {
                return arg(format!("signal energy is {e}, expected 1"));
            }
            let rotating = grid
                .midpoints()
                .iter()
                .zip(samples)
                .map(|(&t, &x)| x * C64::from_polar(1.0, -stark_phase(chirp, t)))
                .collect();
            Ok((samples.clone(), rotating))
        }
    }
}

fn to_lab(rotating: &[C64], grid: &TauGrid, chirp: f64) -> Vec<C64> {
    grid.midpoints()
        .iter()
        .zip(rotating)
        .map(|(&t, &x)| x * C64::from_polar(1.0, stark_phase(chirp, t)))
        .collect()
}

/// Change in efficiency between the operating grid and one at half resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub nz: usize,
    pub ntau: usize,
    pub eta: f64,
    pub eta_coarse: f64,
    /// Second-order Richardson extrapolation `eta + (eta - eta_coarse) / 3`.
    pub richardson: f64,
    pub relative_change: f64,
    pub converged: bool,
}

/// Discretised read-in map over `(S_in, A†_in, B_0) -> (S_out, A†_out, B_1)`.
///
/// Entries are weighted by `sqrt(dtau)` and `sqrt(dz)` so the flux form is
/// `J = diag(1, -1, 1)` over the three blocks. The map is expressed in the
/// frame co-rotating with the Stark shift; the lab-frame map differs by
/// diagonal phases that commute with `J`.
#[derive(Debug, Clone, PartialEq)]
pub struct IoMap {
    pub matrix: DMatrix<C64>,
    pub ntau: usize,
    pub nz: usize,
}

impl IoMap {
    pub fn signature(&self) -> Vec<f64> {
        let mut j = vec![1.0; self.ntau];
        j.extend(std::iter::repeat_n(-1.0, self.ntau));
        j.extend(std::iter::repeat_n(1.0, self.nz));
        j
    }

    /// Frobenius norm of `M J M† - J`.
    pub fn symplectic_defect(&self) -> f64 {
        let j = self.signature();
        let mut mj = self.matrix.clone();
        for (c, &s) in j.iter().enumerate() {
            if s < 0.0 {
                mj.column_mut(c).neg_mut();
            }
        }
        let mut prod = mj * self.matrix.adjoint();
        for (k, &s) in j.iter().enumerate() {
            prod[(k, k)] -= C64::new(s, 0.0);
        }
        prod.norm()
    }

    /// Block mapping `S_in` onto the stored spin wave.
    pub fn storage_kernel(&self) -> DMatrix<C64> {
        let off = 2 * self.ntau;
        self.matrix
            .view((off, 0), (self.nz, self.ntau))
            .into_owned()
    }
}

fn build_io_map(p: &StageParams, ntau: usize, nz: usize) -> Result<IoMap> {
    let dim = 2 * ntau + nz;
    let (wt, wz) = (p.dtau.sqrt(), (1.0 / nz as f64).sqrt());
    let zero_t = vec![C64::new(0.0, 0.0); ntau];
    let zero_z = vec![C64::new(0.0, 0.0); nz];
    let columns: Vec<Vec<C64>> = (0..dim)
        .into_par_iter()
        .map(|c| {
            let (mut s, mut a, mut b) = (zero_t.clone(), zero_t.clone(), zero_z.clone());
            if c < ntau {
                s[c] = C64::new(1.0 / wt, 0.0);
            } else if c < 2 * ntau {
                a[c - ntau] = C64::new(1.0 / wt, 0.0);
            } else {
                b[c - 2 * ntau] = C64::new(1.0 / wz, 0.0);
            }
            let out = propagate_stage(&s, &a, &b, p)?;
            let mut col = Vec::with_capacity(dim);
            col.extend(out.s_out.iter().map(|x| x * wt));
            col.extend(out.a_out.iter().map(|x| x * wt));
            col.extend(out.spin_wave.iter().map(|x| x * wz));
            Ok(col)
        })
        .collect::<Result<_>>()?;
    let matrix = DMatrix::from_fn(dim, dim, |r, c| columns[c][r]);
    Ok(IoMap { matrix, ntau, nz })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryResult {
    /// Retrieved over input signal energy.
    pub efficiency: f64,
    /// Spin-wave energy after the read-in pulse.
    pub readin_efficiency: f64,
    /// Anti-Stokes energy emitted during both pulses.
    pub anti_stokes_energy: f64,
    /// Signal energy leaking through during read-in.
    pub transmitted_energy: f64,
    /// Spin-wave energy left after read-out.
    pub residual_spin_wave: f64,
    /// `tau` cell centres in units of `1/delta`.
    pub tau: Vec<f64>,
    pub dtau: f64,
    /// Lab-frame signal entering the read-in pulse.
    pub input_waveform: Vec<C64>,
    pub transmitted_waveform: Vec<C64>,
    pub retrieved_waveform: Vec<C64>,
    /// Spin wave after read-in, at the `z` cell centres.
    pub spin_wave: Vec<C64>,
    pub io_map: Option<IoMap>,
    pub grid_report: Option<GridReport>,
}

impl MemoryResult {
    /// False when the grid check ran and exceeded [`GRID_TOLERANCE`].
    pub fn converged(&self) -> bool {
        self.grid_report.is_none_or(|g| g.converged)
    }
}

fn solve_on_grid(
    coupling: &CouplingConstants,
    ctrl: &ControlPulseTrain,
    signal: &SignalInput,
    opts: &MemoryOptions,
    nz: usize,
    ntau: usize,
) -> Result<MemoryResult> {
    let grid = TauGrid {
        ntau,
        span: opts.span,
    };
    let h = grid.step();
    let envelope = grid.envelope();
    let (c_s, c_a) = coupling.scaled();
    let params = StageParams {
        c_s,
        c_a: if opts.fwm_on { c_a } else { 0.0 },
        dispersion: coupling.dispersion,
        decay: opts.spinwave_decay_per_ns / ctrl.bandwidth_ghz,
        envelope: &envelope,
        dtau: h,
    };
    let chirp = if opts.stark_on {
        coupling.stark_peak / ctrl.bandwidth_ghz
    } else {
        0.0
    };
    let (lab, s_in) = input_signals(signal, &grid, chirp, opts.subsamples)?;
    let zeros_t = vec![C64::new(0.0, 0.0); ntau];
    let read_in = propagate_stage(&s_in, &zeros_t, &vec![C64::new(0.0, 0.0); nz], &params)
        .map_err(|e| stage_context(e, "read-in"))?;
    let hz = 1.0 / nz as f64;
    let storage = (-opts.spinwave_decay_per_ns * ctrl.readout_delay_ns).exp();
    let mut stored: Vec<C64> = read_in.spin_wave.iter().map(|b| b * storage).collect();
    if opts.retrieval == Retrieval::Backward {
        stored.reverse();
    }
    let read_out = propagate_stage(&zeros_t, &zeros_t, &stored, &params)
        .map_err(|e| stage_context(e, "read-out"))?;
    let efficiency = energy(&read_out.s_out, h) / energy(&lab, h);
    let spin_energy = energy(&read_in.spin_wave, hz);
    let result = MemoryResult {
        efficiency,
        readin_efficiency: spin_energy,
        anti_stokes_energy: energy(&read_in.a_out, h) + energy(&read_out.a_out, h),
        transmitted_energy: energy(&read_in.s_out, h),
        residual_spin_wave: energy(&read_out.spin_wave, hz),
        tau: grid.midpoints(),
        dtau: h,
        input_waveform: lab,
        transmitted_waveform: to_lab(&read_in.s_out, &grid, chirp),
        retrieved_waveform: to_lab(&read_out.s_out, &grid, chirp),
        spin_wave: read_in.spin_wave,
        io_map: None,
        grid_report: None,
    };
    let io_map = if opts.io_map {
        Some(build_io_map(&params, ntau, nz)?)
    } else {
        None
    };
    Ok(MemoryResult { io_map, ..result })
}

fn stage_context(e: Error, stage: &str) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("{stage} pulse: {m}")),
        other => other,
    }
}

fn coarsen(signal: &SignalInput) -> SignalInput {
    match signal {
        SignalInput::Matched => SignalInput::Matched,
        // Pair averages keep the energy to second order in the step.
        SignalInput::Sampled(s) => {
            SignalInput::Sampled(s.chunks(2).map(|p| (p[0] + p[1]) * 0.5).collect())
        }
    }
}

/// Read-in, storage for `readout_delay_ns` and read-out of a signal pulse.
pub fn solve_memory(
    coupling: &CouplingConstants,
    ctrl: &ControlPulseTrain,
    signal: &SignalInput,
    opts: &MemoryOptions,
) -> Result<MemoryResult> {
    opts.validate()?;
    ctrl.validate()?;
    let mut result = solve_on_grid(coupling, ctrl, signal, opts, opts.nz, opts.ntau)?;
    if opts.grid_check {
        let coarse_opts = MemoryOptions {
            io_map: false,
            ..*opts
        };
        let mut coarse_signal = coarsen(signal);
        if let SignalInput::Sampled(s) = &mut coarse_signal {
            let e = energy(s, 2.0 * result.dtau).sqrt();
            s.iter_mut().for_each(|x| *x /= e);
        }
        let coarse = solve_on_grid(
            coupling,
            ctrl,
            &coarse_signal,
            &coarse_opts,
            opts.nz / 2,
            opts.ntau / 2,
        )?;
        let eta = result.efficiency;
        let change = (eta - coarse.efficiency).abs() / eta.abs().max(f64::MIN_POSITIVE);
        result.grid_report = Some(GridReport {
            nz: opts.nz,
            ntau: opts.ntau,
            eta,
            eta_coarse: coarse.efficiency,
            richardson: eta + (eta - coarse.efficiency) / 3.0,
            relative_change: change,
            converged: change < GRID_TOLERANCE || eta == 0.0,
        });
    }
    Ok(result)
}

/// Ratio of retrieved to input energy on a common `tau` grid.
pub fn memory_efficiency(retrieved: &[C64], input: &[C64]) -> Result<f64> {
    if retrieved.len() != input.len() {
        return arg(format!(
            "retrieved and input windows differ in length: {} vs {}",
            retrieved.len(),
            input.len()
        ));
    }
    let e_in = energy(input, 1.0);
    if !(e_in > 0.0) {
        return arg("input pulse has zero energy");
    }
    Ok(energy(retrieved, 1.0) / e_in)
}
