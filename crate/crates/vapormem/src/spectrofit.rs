//! Synthesis and least-squares fitting of probe transmission scans.
//!
//! The scan model is
//!
//! ```text
//! T(nu) = (offset + slope nu) exp(-OD(nu))
//! OD(nu) = d [P S4(nu) + (1 - P) S3(nu)] / V(0)
//! ```
//!
//! where `S4`, `S3` are the unit-area Voigt profiles of the two ground
//! manifolds and `V(0)` is the peak of a single unit-area Voigt. `d` is
//! therefore the line-centre depth the vapour would show with every atom in
//! one manifold, and `P = n1 / (n1 + n3)`. The Doppler width follows `T`; the
//! Lorentz width is fixed by the buffer gas.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atoms::{
    doppler_fwhm, pressure_broadened_fwhm, transmission_spectrum, BufferGas, BufferKind, Ground,
    GroundPopulations, LineLabel, LineShape, OpticalLine, VaporCell,
};
use crate::error::{arg, numeric, Result};
use crate::lsq::{levenberg_marquardt, LmOptions};
use crate::voigt::{sigma_from_fwhm, voigt, voigt_and_dsigma};

/// Fewest samples a trace may hold.
pub const MIN_TRACE_LEN: usize = 64;
/// Default scan window relative to the line centroid, GHz.
pub const SCAN_START_GHZ: f64 = -9.0;
pub const SCAN_END_GHZ: f64 = 10.0;
pub const SCAN_POINTS: usize = 4096;

/// Parameter names in fit order.
pub const PARAM_NAMES: [&str; 5] = [
    "d",
    "polarization",
    "temperature_k",
    "baseline_slope",
    "baseline_offset",
];

/// Box constraints defining the fit's basin, in `PARAM_NAMES` order.
pub const LOWER_BOUNDS: [f64; 5] = [1e-3, 0.0, 250.0, -10.0, 1e-9];
pub const UPPER_BOUNDS: [f64; 5] = [1e3, 1.0, 600.0, 10.0, 1e9];

/// A probe transmission scan and the cell configuration it was taken with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumTrace {
    /// Probe frequency relative to the line centroid, GHz.
    pub frequency_ghz: Vec<f64>,
    pub transmission: Vec<f64>,
    pub noise_sigma: f64,
    pub line: LineLabel,
    pub buffer: BufferKind,
    pub pressure_torr: f64,
    pub line_shape: LineShape,
    /// Seed of the synthetic noise, when the trace is synthetic.
    pub seed: Option<u64>,
}

impl SpectrumTrace {
    pub fn validate(&self) -> Result<()> {
        let n = self.frequency_ghz.len();
        if n != self.transmission.len() {
            return arg(format!(
                "trace has {n} frequencies but {} transmission values",
                self.transmission.len()
            ));
        }
        if n < MIN_TRACE_LEN {
            return arg(format!(
                "trace needs at least {MIN_TRACE_LEN} samples, got {n}"
            ));
        }
        if self.frequency_ghz.iter().any(|v| !v.is_finite()) {
            return arg("trace frequencies must be finite");
        }
        if self
            .transmission
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return arg("transmission values must be finite and >= 0");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return arg(format!(
                "noise sigma must be >= 0, got {}",
                self.noise_sigma
            ));
        }
        BufferGas::new(self.buffer, self.pressure_torr)?;
        Ok(())
    }
}

/// The five fitted quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanParams {
    pub d: f64,
    pub polarization: f64,
    pub temperature_k: f64,
    /// Baseline slope, per GHz.
    pub baseline_slope: f64,
    pub baseline_offset: f64,
}

impl ScanParams {
    fn to_array(self) -> [f64; 5] {
        [
            self.d,
            self.polarization,
            self.temperature_k,
            self.baseline_slope,
            self.baseline_offset,
        ]
    }

    fn from_slice(p: &[f64]) -> Self {
        ScanParams {
            d: p[0],
            polarization: p[1],
            temperature_k: p[2],
            baseline_slope: p[3],
            baseline_offset: p[4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumFit {
    pub d: f64,
    pub polarization: f64,
    pub temperature_k: f64,
    pub baseline_slope: f64,
    pub baseline_offset: f64,
    /// RMS of the unweighted residuals.
    pub residual_rms: f64,
    /// Covariance in `PARAM_NAMES` order; zero rows for parameters held at a bound.
    pub covariance: Vec<Vec<f64>>,
    pub iterations: usize,
    /// Names of parameters that finished on a bound.
    pub at_bound: Vec<String>,
}

impl SpectrumFit {
    pub fn params(&self) -> ScanParams {
        ScanParams {
            d: self.d,
            polarization: self.polarization,
            temperature_k: self.temperature_k,
            baseline_slope: self.baseline_slope,
            baseline_offset: self.baseline_offset,
        }
    }

    /// One-sigma uncertainties from the covariance diagonal.
    pub fn std_errors(&self) -> [f64; 5] {
        std::array::from_fn(|i| self.covariance[i][i].max(0.0).sqrt())
    }

    pub fn is_flagged(&self) -> bool {
        !self.at_bound.is_empty()
    }
}

/// Evenly spaced scan grid over `[start, end]` GHz.
pub fn scan_grid(start_ghz: f64, end_ghz: f64, points: usize) -> Result<Vec<f64>> {
    if points < MIN_TRACE_LEN {
        return arg(format!("scan grid needs at least {MIN_TRACE_LEN} points"));
    }
    if !(end_ghz > start_ghz) {
        return arg("scan grid end must exceed its start");
    }
    let step = (end_ghz - start_ghz) / (points - 1) as f64;
    Ok((0..points).map(|i| start_ghz + step * i as f64).collect())
}

/// The default 4096-point scan covering both ground manifolds.
pub fn default_scan_grid() -> Vec<f64> {
    scan_grid(SCAN_START_GHZ, SCAN_END_GHZ, SCAN_POINTS).expect("default grid is valid")
}

fn lorentz_hwhm(line: &OpticalLine, buffer: &BufferGas) -> f64 {
    0.5 * (line.natural_linewidth_ghz() + pressure_broadened_fwhm(buffer) * 1e-3)
}

/// Line-centre depth of the vapour with all atoms in one manifold, `n sigma_int L V(0)`.
pub fn vapour_optical_depth(cell: &VaporCell) -> f64 {
    let (sigma, gamma) = cell.voigt_widths();
    cell.number_density()
        * cell.line.integrated_cross_section()
        * cell.length_cm
        * 1e-2
        * voigt(0.0, sigma, gamma)
}

/// Standard-geometry cell whose density gives vapour depth `d` at `temperature_k`.
pub fn spectroscopy_cell(
    line: LineLabel,
    buffer: BufferGas,
    d: f64,
    temperature_k: f64,
) -> Result<VaporCell> {
    if !(d >= 0.0 && d.is_finite()) {
        return arg(format!("optical depth must be finite and >= 0, got {d}"));
    }
    let cell = VaporCell::standard(line, buffer, temperature_k)?;
    let (sigma, gamma) = cell.voigt_widths();
    let per_density =
        cell.line.integrated_cross_section() * cell.length_cm * 1e-2 * voigt(0.0, sigma, gamma);
    cell.with_density(d / per_density)
}

/// `(offset + slope nu) * transmission_spectrum + N(0, noise_sigma)`, clipped at zero.
pub fn synthesize_scan(
    cell: &VaporCell,
    pops: &GroundPopulations,
    baseline_slope: f64,
    baseline_offset: f64,
    noise_sigma: f64,
    seed: u64,
    grid: &[f64],
) -> Result<SpectrumTrace> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return arg(format!("noise sigma must be >= 0, got {noise_sigma}"));
    }
    let clean = transmission_spectrum(cell, pops, grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal =
        Normal::new(0.0, noise_sigma).map_err(|e| crate::Error::Argument(e.to_string()))?;
    let transmission = grid
        .iter()
        .zip(&clean)
        .map(|(&nu, &t)| {
            let noise = if noise_sigma > 0.0 {
                normal.sample(&mut rng)
            } else {
                0.0
            };
            ((baseline_offset + baseline_slope * nu) * t + noise).max(0.0)
        })
        .collect();
    let trace = SpectrumTrace {
        frequency_ghz: grid.to_vec(),
        transmission,
        noise_sigma,
        line: cell.line.label,
        buffer: cell.buffer.kind,
        pressure_torr: cell.buffer.pressure_torr,
        line_shape: cell.line_shape,
        seed: Some(seed),
    };
    trace.validate()?;
    Ok(trace)
}

/// Forward model of a trace's configuration, with its analytic Jacobian.
#[derive(Debug, Clone)]
pub struct ScanModel {
    line: OpticalLine,
    gamma: f64,
    /// (offset GHz, weight) of the Voigt components of F=4 and F=3.
    components: [Vec<(f64, f64)>; 2],
}

impl ScanModel {
    pub fn new(line: LineLabel, buffer: &BufferGas, shape: LineShape) -> Self {
        let line = OpticalLine::new(line);
        let manifold = |g: Ground| match shape {
            LineShape::Centroid => vec![(line.manifold_centroid_ghz(g), 1.0)],
            LineShape::Resolved => line
                .components(g)
                .map(|c| (c.offset_ghz, c.relative_strength))
                .collect(),
        };
        let components = [manifold(Ground::F4), manifold(Ground::F3)];
        ScanModel {
            gamma: lorentz_hwhm(&line, buffer),
            line,
            components,
        }
    }

    pub fn for_trace(trace: &SpectrumTrace) -> Result<Self> {
        let buffer = BufferGas::new(trace.buffer, trace.pressure_torr)?;
        Ok(Self::new(trace.line, &buffer, trace.line_shape))
    }

    fn sigma(&self, temperature_k: f64) -> f64 {
        sigma_from_fwhm(doppler_fwhm(&self.line, temperature_k))
    }

    /// Model transmission on `nu`.
    pub fn transmission(&self, p: &ScanParams, nu: &[f64]) -> Vec<f64> {
        let sigma = self.sigma(p.temperature_k);
        let v0 = voigt(0.0, sigma, self.gamma);
        let shape = |g: usize, x: f64| -> f64 {
            self.components[g]
                .iter()
                .map(|&(c, w)| w * voigt(x - c, sigma, self.gamma))
                .sum()
        };
        nu.iter()
            .map(|&x| {
                let od = p.d
                    * (p.polarization * shape(0, x) + (1.0 - p.polarization) * shape(1, x))
                    / v0;
                (p.baseline_offset + p.baseline_slope * x) * (-od).exp()
            })
            .collect()
    }

    /// Model values and the `nu.len() x 5` Jacobian in `PARAM_NAMES` order.
    pub fn transmission_and_jacobian(
        &self,
        p: &ScanParams,
        nu: &[f64],
    ) -> (Vec<f64>, DMatrix<f64>) {
        let sigma = self.sigma(p.temperature_k);
        let dsigma_dt = sigma / (2.0 * p.temperature_k);
        let (v0, dv0) = voigt_and_dsigma(0.0, sigma, self.gamma);
        let shape = |g: usize, x: f64| -> (f64, f64) {
            self.components[g]
                .iter()
                .fold((0.0, 0.0), |(s, ds), &(c, w)| {
                    let (v, dv) = voigt_and_dsigma(x - c, sigma, self.gamma);
                    (s + w * v, ds + w * dv)
                })
        };
        let mut y = Vec::with_capacity(nu.len());
        let mut jac = DMatrix::zeros(nu.len(), 5);
        for (i, &x) in nu.iter().enumerate() {
            let (s4, ds4) = shape(0, x);
            let (s3, ds3) = shape(1, x);
            let mix = p.polarization * s4 + (1.0 - p.polarization) * s3;
            let dmix = p.polarization * ds4 + (1.0 - p.polarization) * ds3;
            let od_per_d = mix / v0;
            let od = p.d * od_per_d;
            let e = (-od).exp();
            let base = p.baseline_offset + p.baseline_slope * x;
            let yi = base * e;
            let dod_dsigma = p.d * (dmix * v0 - mix * dv0) / (v0 * v0);
            jac[(i, 0)] = -yi * od_per_d;
            jac[(i, 1)] = -yi * p.d * (s4 - s3) / v0;
            jac[(i, 2)] = -yi * dod_dsigma * dsigma_dt;
            jac[(i, 3)] = x * e;
            jac[(i, 4)] = e;
            y.push(yi);
        }
        (y, jac)
    }
}

/// Heuristic starting point read off the trace.
///
/// The baseline comes from a line fit to samples more than 2 GHz outside both
/// manifolds; `d` and `P` from the normalised dip depths, clipped where the
/// dips are opaque; temperature starts at 340 K.
pub fn initial_guess(trace: &SpectrumTrace) -> Result<ScanParams> {
    trace.validate()?;
    let line = OpticalLine::new(trace.line);
    let c4 = line.manifold_centroid_ghz(Ground::F4);
    let c3 = line.manifold_centroid_ghz(Ground::F3);
    let (lo, hi) = (c4.min(c3) - 2.0, c4.max(c3) + 2.0);
    let (bx, by): (Vec<f64>, Vec<f64>) = trace
        .frequency_ghz
        .iter()
        .zip(&trace.transmission)
        .filter(|(nu, _)| **nu < lo || **nu > hi)
        .map(|(a, b)| (*a, *b))
        .unzip();
    let (offset, slope) = match crate::lsq::weighted_line(&bx, &by, &vec![1.0; bx.len()]) {
        Ok(f) if f.intercept > 0.0 => (f.intercept, f.slope),
        _ => (
            trace
                .transmission
                .iter()
                .cloned()
                .fold(0.0, f64::max)
                .max(1e-6),
            0.0,
        ),
    };
    let floor = (3.0 * trace.noise_sigma / offset).clamp(1e-3, 0.5);
    let depth_near = |c: f64| -> f64 {
        trace
            .frequency_ghz
            .iter()
            .zip(&trace.transmission)
            .filter(|(nu, _)| (**nu - c).abs() < 0.5)
            .map(|(&nu, &t)| -((t / (offset + slope * nu)).clamp(floor, 1.0)).ln())
            .fold(0.0, f64::max)
    };
    let (od4, od3) = (depth_near(c4), depth_near(c3));
    let total = od4 + od3;
    let (d, polarization) = if total > 0.0 {
        (total, od4 / total)
    } else {
        (1.0, 0.9)
    };
    Ok(ScanParams {
        d: d.clamp(LOWER_BOUNDS[0], UPPER_BOUNDS[0]),
        polarization: polarization.clamp(0.01, 0.999),
        temperature_k: 340.0,
        baseline_slope: slope.clamp(LOWER_BOUNDS[3], UPPER_BOUNDS[3]),
        baseline_offset: offset.clamp(LOWER_BOUNDS[4], UPPER_BOUNDS[4]),
    })
}

/// Deterministic restarts around `guess`: the guess itself, a deeper vapour,
/// a hotter and more polarised start, and a colder shallower one.
fn jittered(guess: &ScanParams) -> [ScanParams; 4] {
    let with = |dm: f64, dp: f64, dt: f64| ScanParams {
        d: (guess.d * dm).clamp(LOWER_BOUNDS[0], UPPER_BOUNDS[0]),
        polarization: (guess.polarization + dp).clamp(0.0, 1.0),
        temperature_k: (guess.temperature_k + dt).clamp(LOWER_BOUNDS[2], UPPER_BOUNDS[2]),
        ..*guess
    };
    [
        with(1.0, 0.0, 0.0),
        with(2.5, 0.0, -15.0),
        with(1.5, 0.5 * (1.0 - guess.polarization), 20.0),
        with(0.7, -0.05, -30.0),
    ]
}

fn fit_from(
    model: &ScanModel,
    trace: &SpectrumTrace,
    start: &ScanParams,
) -> Result<crate::lsq::LmReport> {
    let w = if trace.noise_sigma > 0.0 {
        1.0 / trace.noise_sigma
    } else {
        1.0
    };
    let eval = |x: &DVector<f64>| {
        let (y, jac) = model
            .transmission_and_jacobian(&ScanParams::from_slice(x.as_slice()), &trace.frequency_ghz);
        let r = DVector::from_iterator(
            y.len(),
            y.iter().zip(&trace.transmission).map(|(m, d)| w * (m - d)),
        );
        Ok((r, jac * w))
    };
    levenberg_marquardt(
        eval,
        &start.to_array(),
        &LOWER_BOUNDS,
        &UPPER_BOUNDS,
        &LmOptions::default(),
    )
}

/// Weighted least-squares fit of (d, P, T, slope, offset) with four restarts.
///
/// The trace must cover both ground manifolds. Returns a numeric error when
/// every restart fails; the message carries the cost history of the last one.
pub fn fit_scan(trace: &SpectrumTrace, guess: &ScanParams) -> Result<SpectrumFit> {
    trace.validate()?;
    let model = ScanModel::for_trace(trace)?;
    let c4 = model.line.manifold_centroid_ghz(Ground::F4);
    let c3 = model.line.manifold_centroid_ghz(Ground::F3);
    let (fmin, fmax) = trace
        .frequency_ghz
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if !(fmin < c4.min(c3) && fmax > c4.max(c3)) {
        return arg(format!(
            "trace spans [{fmin}, {fmax}] GHz but must cover both manifolds at {c4:.3} and {c3:.3} GHz"
        ));
    }
    let mut best: Option<crate::lsq::LmReport> = None;
    let mut last_err = None;
    for start in jittered(guess) {
        match fit_from(&model, trace, &start) {
            Ok(rep) => {
                if best.as_ref().is_none_or(|b| rep.rss < b.rss) {
                    best = Some(rep);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let Some(rep) = best else {
        return Err(last_err.expect("at least one restart ran"));
    };
    let m = rep.residual_count as f64;
    let (unweighted_rss, scale) = if trace.noise_sigma > 0.0 {
        (rep.rss * trace.noise_sigma.powi(2), 1.0)
    } else {
        (rep.rss, rep.rss / (m - 5.0).max(1.0))
    };
    let cov = rep.unscaled_covariance()? * scale;
    if cov.iter().any(|v| !v.is_finite()) {
        return numeric("fit covariance is not finite");
    }
    let p = ScanParams::from_slice(rep.params.as_slice());
    Ok(SpectrumFit {
        d: p.d,
        polarization: p.polarization,
        temperature_k: p.temperature_k,
        baseline_slope: p.baseline_slope,
        baseline_offset: p.baseline_offset,
        residual_rms: (unweighted_rss / m).sqrt(),
        covariance: (0..5)
            .map(|i| (0..5).map(|j| cov[(i, j)]).collect())
            .collect(),
        iterations: rep.iterations,
        at_bound: (0..5)
            .filter(|&i| rep.at_bound[i])
            .map(|i| PARAM_NAMES[i].to_string())
            .collect(),
    })
}

/// Fits every trace from its own heuristic guess; results keep the input order.
pub fn fit_batch(traces: &[SpectrumTrace]) -> Vec<Result<SpectrumFit>> {
    traces
        .par_iter()
        .map(|t| initial_guess(t).and_then(|g| fit_scan(t, &g)))
        .collect()
}

/// `n1 / (n1 + n3)`.
pub fn polarization_from_ratio(n1: f64, n3: f64) -> Result<f64> {
    if !(n1 >= 0.0 && n3 >= 0.0) || !(n1.is_finite() && n3.is_finite()) {
        return arg(format!(
            "populations must be finite and >= 0, got ({n1}, {n3})"
        ));
    }
    if n1 + n3 == 0.0 {
        return arg("populations are both zero");
    }
    Ok(n1 / (n1 + n3))
}

/// Affine sample-index to frequency map from reference peaks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyAxis {
    pub ghz_per_sample: f64,
    pub offset_ghz: f64,
    /// Reference residuals `known - mapped`, GHz.
    pub residuals_ghz: Vec<f64>,
    /// The raw axis mapped to GHz.
    pub frequency_ghz: Vec<f64>,
}

impl FrequencyAxis {
    pub fn map(&self, index: f64) -> f64 {
        self.offset_ghz + self.ghz_per_sample * index
    }
}

/// Least-squares affine map through `(sample index, known GHz)` reference peaks.
pub fn calibrate_frequency_axis(
    raw_axis: &[f64],
    reference_peaks: &[(f64, f64)],
) -> Result<FrequencyAxis> {
    if reference_peaks.len() < 2 {
        return arg(format!(
            "frequency calibration needs at least 2 reference peaks, got {}",
            reference_peaks.len()
        ));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = reference_peaks.iter().cloned().unzip();
    let fit = crate::lsq::weighted_line(&x, &y, &vec![1.0; x.len()])?;
    let map = |i: f64| fit.intercept + fit.slope * i;
    Ok(FrequencyAxis {
        ghz_per_sample: fit.slope,
        offset_ghz: fit.intercept,
        residuals_ghz: reference_peaks.iter().map(|&(i, f)| f - map(i)).collect(),
        frequency_ghz: raw_axis.iter().map(|&i| map(i)).collect(),
    })
}
