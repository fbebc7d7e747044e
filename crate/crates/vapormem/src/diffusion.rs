//! Diffusion of an optically pumped hole: synthesis, spatial Fourier analysis
//! and the quadratic decay-rate fit.
//!
//! Every transverse Fourier mode of the optical-depth perturbation decays as
//! `exp(-(gamma0 + D k^2) t)`. Wavenumbers are angular (rad/mm), rates per ms,
//! and `D` is reported in cm^2/s; internally `1 cm^2/s = 0.1 mm^2/ms`.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{arg, numeric, Error, Result};
use crate::lsq::{levenberg_marquardt, weighted_line, LmOptions};

type C64 = Complex64;

/// `mm^2/ms` per `cm^2/s`.
pub const CM2_PER_S_TO_MM2_PER_MS: f64 = 0.1;
/// Default fit window, rad/mm.
pub const DEFAULT_K_MIN: f64 = 1.0 / 10.0;
pub const DEFAULT_K_MAX: f64 = 1.0 / 0.0259;
/// Log-domain fits need every amplitude above this multiple of the noise floor.
pub const LOG_FIT_SNR: f64 = 3.0;
/// A rate is reported with a finite error only if the bin stays above the
/// detection threshold for this many leading fitted frames.
pub const MIN_DETECTED_FRAMES: usize = 3;
/// Smallest quadrant side accepted by [`quadrant_error_estimate`].
pub const MIN_QUADRANT: usize = 16;
/// Fewest distinct wavenumbers [`fit_diffusion`] accepts.
pub const MIN_DISTINCT_K: usize = 5;

/// `D0 = (p / 760) D(p)`.
pub fn d0_from_diffusion(diffusion_cm2_per_s: f64, pressure_torr: f64) -> f64 {
    pressure_torr / 760.0 * diffusion_cm2_per_s
}

/// `D(p) = D0 * 760 / p`.
pub fn diffusion_from_d0(d0_cm2_per_s: f64, pressure_torr: f64) -> Result<f64> {
    if !(pressure_torr > 0.0) {
        return arg(format!("pressure must be > 0 Torr, got {pressure_torr}"));
    }
    Ok(d0_cm2_per_s * 760.0 / pressure_torr)
}

/// Kinetic-theory temperature scaling `D (T / T0)^(3/2)`.
pub fn scale_diffusion_temperature(
    diffusion: f64,
    temperature_k: f64,
    reference_k: f64,
) -> Result<f64> {
    if !(temperature_k > 0.0 && reference_k > 0.0) {
        return arg("temperatures must be > 0 K");
    }
    Ok(diffusion * (temperature_k / reference_k).powf(1.5))
}

/// Stack of optical-depth perturbation frames on a square-pixel grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSeries {
    pub nx: usize,
    pub ny: usize,
    pub pixel_pitch_mm: f64,
    pub timestamps_ms: Vec<f64>,
    /// Frames in time order, each row-major `ny x nx`.
    pub frames: Vec<Vec<f64>>,
}

impl ImageSeries {
    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return arg("image dimensions must be non-zero");
        }
        if !(self.pixel_pitch_mm > 0.0 && self.pixel_pitch_mm.is_finite()) {
            return arg(format!(
                "pixel pitch must be > 0 mm, got {}",
                self.pixel_pitch_mm
            ));
        }
        if self.timestamps_ms.len() < 4 {
            return arg(format!(
                "need at least 4 frames, got {}",
                self.timestamps_ms.len()
            ));
        }
        if self.timestamps_ms.iter().any(|t| !t.is_finite())
            || self.timestamps_ms.windows(2).any(|w| w[1] <= w[0])
        {
            return arg("timestamps must be finite and strictly increasing");
        }
        if self.frames.len() != self.timestamps_ms.len() {
            return arg(format!(
                "{} frames but {} timestamps",
                self.frames.len(),
                self.timestamps_ms.len()
            ));
        }
        if let Some(i) = self
            .frames
            .iter()
            .position(|f| f.len() != self.nx * self.ny)
        {
            return arg(format!(
                "frame {i} does not hold {} x {} pixels",
                self.ny, self.nx
            ));
        }
        if self.frames.iter().flatten().any(|v| !v.is_finite()) {
            return arg("frames must be finite");
        }
        Ok(())
    }

    /// The sub-image `[x0, x0 + w) x [y0, y0 + h)` of every frame.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<ImageSeries> {
        if x0 + w > self.nx || y0 + h > self.ny || w == 0 || h == 0 {
            return arg("crop window lies outside the image");
        }
        let frames = self
            .frames
            .iter()
            .map(|f| {
                (y0..y0 + h)
                    .flat_map(|y| f[y * self.nx + x0..y * self.nx + x0 + w].iter().copied())
                    .collect()
            })
            .collect();
        Ok(ImageSeries {
            nx: w,
            ny: h,
            pixel_pitch_mm: self.pixel_pitch_mm,
            timestamps_ms: self.timestamps_ms.clone(),
            frames,
        })
    }
}

/// Pixel grid for synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub nx: usize,
    pub ny: usize,
    pub pixel_pitch_mm: f64,
}

impl Default for ImageGrid {
    /// 12.8 mm square field: the fundamental 0.49 rad/mm sits above the default `k_min`.
    fn default() -> Self {
        ImageGrid {
            nx: 128,
            ny: 128,
            pixel_pitch_mm: 0.1,
        }
    }
}

impl ImageGrid {
    /// Angular Nyquist wavenumber, rad/mm.
    pub fn nyquist(&self) -> f64 {
        PI / self.pixel_pitch_mm
    }

    /// Smallest non-zero wavenumber, set by the longer axis, rad/mm.
    pub fn fundamental(&self) -> f64 {
        2.0 * PI / (self.nx.max(self.ny) as f64 * self.pixel_pitch_mm)
    }
}

/// Initial perturbation shapes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum HoleProfile {
    /// `depth exp(-2 r^2 / radius^2)` about `(center_x_mm, center_y_mm)`, measured from the grid origin.
    Gaussian {
        depth: f64,
        radius_mm: f64,
        center_x_mm: f64,
        center_y_mm: f64,
    },
    /// `amplitude cos(2 pi (cx x / nx + cy y / ny))`: a single Fourier mode pair.
    Cosine {
        amplitude: f64,
        cycles_x: i64,
        cycles_y: i64,
    },
    Uniform {
        value: f64,
    },
}

impl HoleProfile {
    /// Gaussian hole at the midpoint between the first and last pixel, so the
    /// image is mirror-symmetric about both centre lines.
    pub fn centered_gaussian(grid: &ImageGrid, depth: f64, radius_mm: f64) -> Self {
        HoleProfile::Gaussian {
            depth,
            radius_mm,
            center_x_mm: 0.5 * (grid.nx - 1) as f64 * grid.pixel_pitch_mm,
            center_y_mm: 0.5 * (grid.ny - 1) as f64 * grid.pixel_pitch_mm,
        }
    }

    fn sample(&self, grid: &ImageGrid) -> Vec<f64> {
        let p = grid.pixel_pitch_mm;
        let mut out = Vec::with_capacity(grid.nx * grid.ny);
        for y in 0..grid.ny {
            for x in 0..grid.nx {
                out.push(match *self {
                    HoleProfile::Gaussian {
                        depth,
                        radius_mm,
                        center_x_mm,
                        center_y_mm,
                    } => {
                        let r2 = (x as f64 * p - center_x_mm).powi(2)
                            + (y as f64 * p - center_y_mm).powi(2);
                        depth * (-2.0 * r2 / (radius_mm * radius_mm)).exp()
                    }
                    HoleProfile::Cosine {
                        amplitude,
                        cycles_x,
                        cycles_y,
                    } => {
                        let phase = 2.0
                            * PI
                            * (cycles_x as f64 * x as f64 / grid.nx as f64
                                + cycles_y as f64 * y as f64 / grid.ny as f64);
                        amplitude * phase.cos()
                    }
                    HoleProfile::Uniform { value } => value,
                });
            }
        }
        out
    }

    /// Rejects shapes with content at the Nyquist wavenumber.
    fn check_bandlimit(&self, grid: &ImageGrid) -> Result<()> {
        match *self {
            HoleProfile::Gaussian { radius_mm, .. } => {
                // Spectrum exp(-k^2 w^2 / 8) must fall below 1e-10 at Nyquist.
                let k_needed = (8.0 * (1e10f64).ln()).sqrt() / radius_mm;
                if !(radius_mm > 0.0) || k_needed >= grid.nyquist() {
                    return arg(format!(
                        "Gaussian radius {radius_mm} mm is not resolved: needs >= {:.4} mm at pitch {} mm",
                        (8.0 * (1e10f64).ln()).sqrt() / grid.nyquist(),
                        grid.pixel_pitch_mm
                    ));
                }
            }
            HoleProfile::Cosine {
                cycles_x, cycles_y, ..
            } => {
                if 2 * cycles_x.unsigned_abs() as usize >= grid.nx
                    || 2 * cycles_y.unsigned_abs() as usize >= grid.ny
                {
                    return arg(format!(
                        "cosine with ({cycles_x}, {cycles_y}) cycles reaches Nyquist on a {} x {} grid",
                        grid.nx, grid.ny
                    ));
                }
            }
            HoleProfile::Uniform { .. } => {}
        }
        Ok(())
    }
}

struct Fft2 {
    nx: usize,
    ny: usize,
    fwd_x: std::sync::Arc<dyn rustfft::Fft<f64>>,
    fwd_y: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inv_x: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inv_y: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl Fft2 {
    fn new(nx: usize, ny: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            nx,
            ny,
            fwd_x: planner.plan_fft_forward(nx),
            fwd_y: planner.plan_fft_forward(ny),
            inv_x: planner.plan_fft_inverse(nx),
            inv_y: planner.plan_fft_inverse(ny),
        }
    }

    /// Unitary 2-D transform in place (row-major `ny x nx`).
    fn run(&self, data: &mut [C64], inverse: bool) {
        let (fx, fy) = if inverse {
            (&self.inv_x, &self.inv_y)
        } else {
            (&self.fwd_x, &self.fwd_y)
        };
        for row in data.chunks_mut(self.nx) {
            fx.process(row);
        }
        let mut col = vec![C64::new(0.0, 0.0); self.ny];
        for x in 0..self.nx {
            for y in 0..self.ny {
                col[y] = data[y * self.nx + x];
            }
            fy.process(&mut col);
            for y in 0..self.ny {
                data[y * self.nx + x] = col[y];
            }
        }
        let scale = 1.0 / ((self.nx * self.ny) as f64).sqrt();
        data.iter_mut().for_each(|v| *v *= scale);
    }

    fn forward(&self, frame: &[f64]) -> Vec<C64> {
        let mut data: Vec<C64> = frame.iter().map(|&v| C64::new(v, 0.0)).collect();
        self.run(&mut data, false);
        data
    }
}

/// Orthonormal separable DCT-II of a row-major `ny x nx` frame.
fn dct2(frame: &[f64], nx: usize, ny: usize) -> Vec<f64> {
    let mut planner = rustdct::DctPlanner::new();
    let (px, py) = (planner.plan_dct2(nx), planner.plan_dct2(ny));
    let norm = |n: usize, k: usize| {
        if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        }
    };
    let mut data = frame.to_vec();
    for row in data.chunks_mut(nx) {
        px.process_dct2(row);
        row.iter_mut()
            .enumerate()
            .for_each(|(k, v)| *v *= norm(nx, k));
    }
    let mut col = vec![0.0; ny];
    for x in 0..nx {
        for y in 0..ny {
            col[y] = data[y * nx + x];
        }
        py.process_dct2(&mut col);
        for y in 0..ny {
            data[y * nx + x] = col[y] * norm(ny, y);
        }
    }
    data
}

/// Signed angular wavenumber of FFT index `i` on an axis of `n` samples.
fn wavenumber(i: usize, n: usize, pitch: f64) -> f64 {
    let signed = if 2 * i < n {
        i as f64
    } else {
        i as f64 - n as f64
    };
    2.0 * PI * signed / (n as f64 * pitch)
}

/// Evolves `hole_profile` exactly in the Fourier domain and adds seeded white noise.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_hole_series(
    diffusion_cm2_per_s: f64,
    gamma0_per_ms: f64,
    hole_profile: &HoleProfile,
    grid: &ImageGrid,
    timestamps_ms: &[f64],
    noise_sigma: f64,
    seed: u64,
) -> Result<ImageSeries> {
    if !(diffusion_cm2_per_s >= 0.0 && gamma0_per_ms.is_finite()) {
        return arg("diffusion constant must be >= 0 and gamma0 finite");
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return arg(format!("noise sigma must be >= 0, got {noise_sigma}"));
    }
    if grid.nx < 2 || grid.ny < 2 || !(grid.pixel_pitch_mm > 0.0) {
        return arg("grid needs at least 2 x 2 pixels and a positive pitch");
    }
    hole_profile.check_bandlimit(grid)?;
    let fft = Fft2::new(grid.nx, grid.ny);
    let spectrum = fft.forward(&hole_profile.sample(grid));
    let dmm = diffusion_cm2_per_s * CM2_PER_S_TO_MM2_PER_MS;
    let rates: Vec<f64> = (0..grid.ny)
        .flat_map(|y| {
            let ky = wavenumber(y, grid.ny, grid.pixel_pitch_mm);
            (0..grid.nx).map(move |x| {
                let kx = wavenumber(x, grid.nx, grid.pixel_pitch_mm);
                gamma0_per_ms + dmm * (kx * kx + ky * ky)
            })
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_sigma).map_err(|e| Error::Argument(e.to_string()))?;
    let mut frames = Vec::with_capacity(timestamps_ms.len());
    for &t in timestamps_ms {
        let mut data: Vec<C64> = spectrum
            .iter()
            .zip(&rates)
            .map(|(c, g)| c * (-g * t).exp())
            .collect();
        fft.run(&mut data, true);
        frames.push(
            data.iter()
                .map(|v| {
                    v.re + if noise_sigma > 0.0 {
                        normal.sample(&mut rng)
                    } else {
                        0.0
                    }
                })
                .collect(),
        );
    }
    let series = ImageSeries {
        nx: grid.nx,
        ny: grid.ny,
        pixel_pitch_mm: grid.pixel_pitch_mm,
        timestamps_ms: timestamps_ms.to_vec(),
        frames,
    };
    series.validate()?;
    Ok(series)
}

/// `n` evenly spaced frame times from 0 covering three decay constants of the
/// slowest mode inside the window `[k_min, ...]` that the grid resolves.
pub fn default_timestamps(
    diffusion_cm2_per_s: f64,
    gamma0_per_ms: f64,
    grid: &ImageGrid,
    k_min: f64,
    n: usize,
) -> Result<Vec<f64>> {
    if n < 4 {
        return arg("need at least 4 frames");
    }
    let k = k_min.max(grid.fundamental());
    let slowest = gamma0_per_ms + diffusion_cm2_per_s * CM2_PER_S_TO_MM2_PER_MS * k * k;
    if !(slowest > 0.0) {
        return arg("slowest in-window mode does not decay");
    }
    let end = 3.0 / slowest;
    Ok((0..n).map(|i| end * i as f64 / (n - 1) as f64).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    /// Annuli one FFT bin of the shorter axis wide.
    #[default]
    Radial,
    /// Every element of the non-redundant half plane separately.
    PerElement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeKind {
    /// Projection of each mode on its first-frame phase, summed over the bin and
    /// normalised by the bin's first-frame norm. Noise averages to zero.
    #[default]
    PhaseReferenced,
    /// Root-sum-square magnitude over the bin; Parseval holds frame by frame.
    Magnitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// Periodic 2-D FFT; wavenumbers `2 pi m / (n pitch)`.
    #[default]
    Fourier,
    /// Orthonormal 2-D DCT-II, the FFT of the even mirror extension; wavenumbers
    /// `pi m / (n pitch)`. A crop that cuts the hole has no edge jump in this basis.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformOptions {
    pub binning: Binning,
    pub amplitude: AmplitudeKind,
    pub basis: Basis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayFitMethod {
    LogLinear,
    Nonlinear,
}

/// One Fourier element of a bin.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModeMember {
    pub k2: f64,
    /// Projection on the element's own first-frame phase (or its magnitude),
    /// scaled so that squares sum to the bin power.
    pub series: Vec<f64>,
    pub quadrature: Vec<f64>,
    /// False for self-conjugate elements, whose quadrature vanishes identically.
    pub paired: bool,
}

/// Amplitude history of one wavenumber bin and, once fitted, its decay rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeDecay {
    /// Power-weighted RMS wavenumber of the bin, rad/mm.
    pub k_perp: f64,
    pub mode_count: usize,
    pub timestamps_ms: Vec<f64>,
    pub amplitude_series: Vec<f64>,
    /// Out-of-phase component; pure noise for a decaying mode.
    pub quadrature_series: Vec<f64>,
    pub amplitude_kind: AmplitudeKind,
    /// Decay rate at `k_perp`, per ms; NaN before fitting.
    pub fitted_gamma: f64,
    /// Infinite when the mode is not detected after the reference frame.
    pub gamma_stderr: f64,
    pub fit_r2: f64,
    pub method: Option<DecayFitMethod>,
    /// Element-level series; absent after deserialisation, in which case the
    /// bin series is fitted as a single element.
    #[serde(skip)]
    pub members: Vec<ModeMember>,
}

impl ModeDecay {
    /// True when the log-domain fit was not usable.
    pub fn is_fallback(&self) -> bool {
        self.method == Some(DecayFitMethod::Nonlinear)
    }
}

/// Per-frame unitary 2-D FFT, binned by `|k|`.
pub fn transverse_fft(series: &ImageSeries, opts: &TransformOptions) -> Result<Vec<ModeDecay>> {
    series.validate()?;
    let (nx, ny, p) = (series.nx, series.ny, series.pixel_pitch_mm);
    let mut keys: Vec<(usize, f64, f64)> = Vec::new();
    let (spectra, bin_width): (Vec<Vec<C64>>, f64) = match opts.basis {
        Basis::Fourier => {
            let fft = Fft2::new(nx, ny);
            // Half plane: conjugate partners carry no new information for real images.
            for y in 0..ny {
                for x in 0..nx {
                    let partner = ((ny - y) % ny) * nx + (nx - x) % nx;
                    let idx = y * nx + x;
                    if partner < idx {
                        continue;
                    }
                    let weight = if partner == idx { 1.0 } else { 2.0 };
                    let (kx, ky) = (wavenumber(x, nx, p), wavenumber(y, ny, p));
                    keys.push((idx, (kx * kx + ky * ky).sqrt(), weight));
                }
            }
            let spectra = series.frames.par_iter().map(|f| fft.forward(f)).collect();
            (spectra, 2.0 * PI / (nx.min(ny) as f64 * p))
        }
        Basis::Cosine => {
            for y in 0..ny {
                for x in 0..nx {
                    let (kx, ky) = (
                        PI * x as f64 / (nx as f64 * p),
                        PI * y as f64 / (ny as f64 * p),
                    );
                    keys.push((y * nx + x, (kx * kx + ky * ky).sqrt(), 1.0));
                }
            }
            let spectra = series
                .frames
                .par_iter()
                .map(|f| {
                    dct2(f, nx, ny)
                        .into_iter()
                        .map(|v| C64::new(v, 0.0))
                        .collect()
                })
                .collect();
            (spectra, PI / (nx.min(ny) as f64 * p))
        }
    };
    let mut groups: std::collections::BTreeMap<u64, Vec<(usize, f64, f64)>> = Default::default();
    for (n, &(idx, k, w)) in keys.iter().enumerate() {
        let key = match opts.binning {
            Binning::Radial => (k / bin_width).round() as u64,
            Binning::PerElement => n as u64,
        };
        groups.entry(key).or_default().push((idx, k, w));
    }
    let mut out: Vec<ModeDecay> = groups
        .into_values()
        .map(|members| bin_series(&members, &spectra, &series.timestamps_ms, opts.amplitude))
        .collect();
    if opts.binning == Binning::PerElement {
        out.sort_by(|a, b| a.k_perp.total_cmp(&b.k_perp));
    }
    Ok(out)
}

fn bin_series(
    members: &[(usize, f64, f64)],
    spectra: &[Vec<C64>],
    times: &[f64],
    kind: AmplitudeKind,
) -> ModeDecay {
    let first = &spectra[0];
    let power0: f64 = members
        .iter()
        .map(|&(i, _, w)| w * first[i].norm_sqr())
        .sum();
    let k_perp = if power0 > 0.0 {
        (members
            .iter()
            .map(|&(i, k, w)| w * first[i].norm_sqr() * k * k)
            .sum::<f64>()
            / power0)
            .sqrt()
    } else {
        (members.iter().map(|&(_, k, w)| w * k * k).sum::<f64>()
            / members.iter().map(|m| m.2).sum::<f64>())
        .sqrt()
    };
    let elements: Vec<ModeMember> = members
        .iter()
        .map(|&(i, k, w)| {
            let r0 = first[i].norm();
            let (series, quadrature) = spectra
                .iter()
                .map(|s| match kind {
                    AmplitudeKind::Magnitude => (w.sqrt() * s[i].norm(), 0.0),
                    AmplitudeKind::PhaseReferenced if r0 > 0.0 => {
                        let z = s[i] * first[i].conj() * (w.sqrt() / r0);
                        (z.re, z.im)
                    }
                    AmplitudeKind::PhaseReferenced => (0.0, 0.0),
                })
                .unzip();
            ModeMember {
                k2: k * k,
                series,
                quadrature,
                paired: w > 1.0,
            }
        })
        .collect();
    let norm0 = power0.sqrt();
    let (amplitude_series, quadrature_series) = (0..times.len())
        .map(|t| match kind {
            AmplitudeKind::Magnitude => (
                elements
                    .iter()
                    .map(|e| e.series[t] * e.series[t])
                    .sum::<f64>()
                    .sqrt(),
                0.0,
            ),
            AmplitudeKind::PhaseReferenced if norm0 > 0.0 => {
                // Elements weighted by their first-frame amplitude: a matched filter.
                let re = elements
                    .iter()
                    .map(|e| e.series[0] * e.series[t])
                    .sum::<f64>()
                    / norm0;
                let im = elements
                    .iter()
                    .map(|e| e.series[0] * e.quadrature[t])
                    .sum::<f64>()
                    / norm0;
                (re, im)
            }
            AmplitudeKind::PhaseReferenced => (0.0, 0.0),
        })
        .unzip();
    ModeDecay {
        k_perp,
        mode_count: members.len(),
        timestamps_ms: times.to_vec(),
        amplitude_series,
        quadrature_series,
        amplitude_kind: kind,
        fitted_gamma: f64::NAN,
        gamma_stderr: f64::NAN,
        fit_r2: f64::NAN,
        method: None,
        members: elements,
    }
}

/// Noise standard deviation of one element's in-phase value.
///
/// Paired Fourier elements give it directly as the quadrature RMS after the
/// reference frame. Real bases have no quadrature; there the median absolute
/// last-frame value over the upper half of wavenumbers is used, since those
/// modes decay fastest and hold only noise by the end.
fn noise_floor(modes: &[&ModeDecay]) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for m in modes
        .iter()
        .filter(|m| m.amplitude_kind == AmplitudeKind::PhaseReferenced)
    {
        for e in m.members.iter().filter(|e| e.paired) {
            e.quadrature.iter().skip(1).for_each(|q| sum += q * q);
            n += e.quadrature.len().saturating_sub(1);
        }
        // Deserialised bins carry only the bin-level quadrature, which has the same noise.
        if m.members.is_empty() && m.quadrature_series.iter().any(|&q| q != 0.0) {
            m.quadrature_series
                .iter()
                .skip(1)
                .for_each(|q| sum += q * q);
            n += m.quadrature_series.len().saturating_sub(1);
        }
    }
    if n > 0 {
        return (sum / n as f64).sqrt();
    }
    if modes
        .iter()
        .any(|m| m.amplitude_kind == AmplitudeKind::Magnitude)
    {
        return 0.0;
    }
    let mut k2: Vec<f64> = modes
        .iter()
        .flat_map(|m| m.members.iter().map(|e| e.k2))
        .collect();
    if k2.is_empty() {
        return 0.0;
    }
    k2.sort_by(f64::total_cmp);
    let cut = k2[k2.len() / 2];
    let mut tail: Vec<f64> = modes
        .iter()
        .flat_map(|m| m.members.iter())
        .filter(|e| e.k2 >= cut)
        .filter_map(|e| e.series.last().map(|v| v.abs()))
        .collect();
    tail.sort_by(f64::total_cmp);
    // Median of |N(0, s^2)| is 0.6745 s.
    tail[tail.len() / 2] / 0.674_489_750_196_081_7
}

/// Fits the decay of every mode with `k_min <= k_perp <= k_max`.
///
/// Within a bin the rate is `gamma + s (k_m^2 - k_perp^2)` over its elements,
/// so elements at different `|k|` share one line and the bin reports the rate
/// at `k_perp`. Bins whose element amplitudes all exceed `LOG_FIT_SNR` times
/// the quadrature noise floor get a weighted log-linear fit; the rest a direct
/// exponential fit with element amplitudes profiled out.
pub fn fit_mode_decays(modes: &[ModeDecay], k_min: f64, k_max: f64) -> Result<Vec<ModeDecay>> {
    if !(k_min >= 0.0 && k_max > k_min) {
        return arg(format!("empty wavenumber window [{k_min}, {k_max}]"));
    }
    let inside: Vec<&ModeDecay> = modes
        .iter()
        .filter(|m| m.k_perp >= k_min && m.k_perp <= k_max)
        .collect();
    if inside.is_empty() {
        return arg(format!(
            "no modes inside the window [{k_min}, {k_max}] rad/mm"
        ));
    }
    if let Some(m) = inside
        .iter()
        .find(|m| m.timestamps_ms.len() < 4 || m.amplitude_series.len() != m.timestamps_ms.len())
    {
        return arg(format!(
            "mode at k = {} needs at least 4 matching time points",
            m.k_perp
        ));
    }
    let floor = noise_floor(&inside);
    inside.par_iter().map(|m| fit_one(m, floor)).collect()
}

fn fit_one(mode: &ModeDecay, floor: f64) -> Result<ModeDecay> {
    // The reference frame shares its noise with itself; later frames are an
    // unbiased exponential relative to it, so fits start after it.
    let start = match mode.amplitude_kind {
        AmplitudeKind::PhaseReferenced => 1,
        AmplitudeKind::Magnitude => 0,
    };
    let t0 = mode.timestamps_ms[start];
    let tau: Vec<f64> = mode.timestamps_ms[start..].iter().map(|t| t - t0).collect();
    let k2ref = mode.k_perp * mode.k_perp;
    let single = [ModeMember {
        k2: k2ref,
        series: mode.amplitude_series.clone(),
        quadrature: mode.quadrature_series.clone(),
        paired: true,
    }];
    let members: &[ModeMember] = if mode.members.is_empty() {
        &single
    } else {
        &mode.members
    };
    let data: Vec<(f64, &[f64])> = members
        .iter()
        .map(|e| (e.k2 - k2ref, &e.series[start..]))
        .collect();
    let spread = data.iter().map(|d| d.0.abs()).fold(0.0, f64::max);
    let with_slope = spread > 1e-9 * k2ref.max(f64::MIN_POSITIVE);
    let mut out = mode.clone();
    let a = &mode.amplitude_series[start..];
    let g0 = quick_rate(&tau, a);
    if data
        .iter()
        .all(|(_, y)| y.iter().all(|&v| v > LOG_FIT_SNR * floor && v > 0.0))
    {
        let (gamma, var, r2) = log_linear(&tau, &data, floor, with_slope)?;
        out.fitted_gamma = gamma;
        out.gamma_stderr = var.sqrt();
        out.fit_r2 = r2;
        out.method = Some(DecayFitMethod::LogLinear);
        return Ok(out);
    }
    out.method = Some(DecayFitMethod::Nonlinear);
    let detected = a.iter().take_while(|&&v| v > LOG_FIT_SNR * floor).count();
    if detected < MIN_DETECTED_FRAMES {
        // Too few frames above the noise to see a decay: the rate is undetermined.
        out.fitted_gamma = g0;
        out.gamma_stderr = f64::INFINITY;
        out.fit_r2 = f64::NAN;
        return Ok(out);
    }
    let (gamma, var, r2) = profiled_exponential(&tau, &data, floor, with_slope, g0, k2ref)
        .map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("decay fit at k = {}: {m}", mode.k_perp)),
            other => other,
        })?;
    out.fitted_gamma = gamma;
    out.gamma_stderr = var.sqrt();
    out.fit_r2 = r2;
    Ok(out)
}

/// Rate from the first half-amplitude crossing; a starting value only.
fn quick_rate(tau: &[f64], a: &[f64]) -> f64 {
    let n = tau.len();
    let tail = a
        .iter()
        .position(|&v| v <= 0.5 * a[0])
        .unwrap_or(n - 1)
        .max(1);
    if a[0] > 0.0 && a[tail] > 0.0 && a[tail] < a[0] {
        (a[0] / a[tail]).ln() / tau[tail]
    } else {
        1.0 / tau[n - 1]
    }
}

fn weighted_tss(
    data: &[(f64, &[f64])],
    weight: impl Fn(f64) -> f64,
    map: impl Fn(f64) -> f64,
) -> f64 {
    let (mut sw, mut sy) = (0.0, 0.0);
    for (_, y) in data {
        for &v in y.iter() {
            sw += weight(v);
            sy += weight(v) * map(v);
        }
    }
    let mean = sy / sw;
    data.iter()
        .flat_map(|(_, y)| y.iter())
        .map(|&v| weight(v) * (map(v) - mean).powi(2))
        .sum()
}

/// Weight, centred time and centred log amplitude of one sample.
type WeightedPoint = (f64, f64, f64);

/// `ln a_m(t) = b_m - (gamma + s d_m) t` with per-element intercepts profiled out.
/// Returns the rate, its variance and r^2 in the log domain.
fn log_linear(
    tau: &[f64],
    data: &[(f64, &[f64])],
    floor: f64,
    with_slope: bool,
) -> Result<(f64, f64, f64)> {
    let weight = |v: f64| {
        if floor > 0.0 {
            (v / floor).powi(2)
        } else {
            1.0
        }
    };
    let p = if with_slope { 2 } else { 1 };
    let mut normal = nalgebra::DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut centred: Vec<(f64, Vec<WeightedPoint>)> = Vec::with_capacity(data.len());
    for (d, y) in data {
        let w: Vec<f64> = y.iter().map(|&v| weight(v)).collect();
        let sw: f64 = w.iter().sum();
        let tm = w.iter().zip(tau).map(|(a, b)| a * b).sum::<f64>() / sw;
        let ym = w.iter().zip(y.iter()).map(|(a, b)| a * b.ln()).sum::<f64>() / sw;
        let rows: Vec<WeightedPoint> = w
            .iter()
            .zip(tau)
            .zip(y.iter())
            .map(|((&wi, &t), &v)| (wi, t - tm, v.ln() - ym))
            .collect();
        for &(wi, tc, yc) in &rows {
            let x = [-tc, -d * tc];
            for i in 0..p {
                rhs[i] += wi * x[i] * yc;
                for j in 0..p {
                    normal[(i, j)] += wi * x[i] * x[j];
                }
            }
        }
        centred.push((*d, rows));
    }
    let inv = normal
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numeric("log-linear decay fit is singular".into()))?;
    let beta = &inv * &rhs;
    let mut rss = 0.0;
    let mut count = 0usize;
    for (d, rows) in &centred {
        for &(wi, tc, yc) in rows {
            let pred = -tc * beta[0] - if with_slope { d * tc * beta[1] } else { 0.0 };
            rss += wi * (yc - pred).powi(2);
            count += 1;
        }
    }
    let dof = count.saturating_sub(data.len() + p);
    let scale = if floor > 0.0 {
        1.0
    } else if dof > 0 {
        rss / dof as f64
    } else {
        0.0
    };
    let tss = weighted_tss(data, weight, f64::ln);
    let r2 = if tss > 0.0 { 1.0 - rss / tss } else { 1.0 };
    Ok((beta[0], inv[(0, 0)] * scale, r2))
}

/// Direct fit of `A_m exp(-(gamma + s d_m) t)`; amplitudes enter linearly and
/// are eliminated, leaving a bounded fit over `(gamma, s)`.
fn profiled_exponential(
    tau: &[f64],
    data: &[(f64, &[f64])],
    floor: f64,
    with_slope: bool,
    g0: f64,
    k2ref: f64,
) -> Result<(f64, f64, f64)> {
    let nt = tau.len();
    let m = data.len() * nt;
    let residuals = |x: &[f64]| -> DVector<f64> {
        let mut r = DVector::zeros(m);
        for (j, (d, y)) in data.iter().enumerate() {
            let rate = x[0] + if with_slope { x[1] * d } else { 0.0 };
            let e: Vec<f64> = tau.iter().map(|t| (-rate * t).exp()).collect();
            let ee: f64 = e.iter().map(|v| v * v).sum();
            let amp = if ee > 0.0 {
                e.iter().zip(y.iter()).map(|(a, b)| a * b).sum::<f64>() / ee
            } else {
                0.0
            };
            for t in 0..nt {
                r[j * nt + t] = amp * e[t] - y[t];
            }
        }
        r
    };
    let tmax = tau[nt - 1];
    let dmax = data
        .iter()
        .map(|d| d.0.abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let scales = [1.0 / tmax, 1.0 / (tmax * dmax)];
    let eval = |x: &DVector<f64>| -> Result<crate::lsq::Evaluation> {
        let xs = x.as_slice();
        let r = residuals(xs);
        let mut jac = nalgebra::DMatrix::zeros(m, x.len());
        for k in 0..x.len() {
            let h = 1e-6 * xs[k].abs().max(scales[k]);
            let mut up = xs.to_vec();
            let mut down = xs.to_vec();
            up[k] += h;
            down[k] -= h;
            let col = (residuals(&up) - residuals(&down)) / (2.0 * h);
            jac.set_column(k, &col);
        }
        Ok((r, jac))
    };
    // Beyond e^-50 per frame interval a faster decay is indistinguishable.
    let gmax = 50.0 / tau[1];
    let g0 = g0.min(0.5 * gmax);
    let (x0, lo, hi) = if with_slope {
        let s0 = if k2ref > 0.0 { g0 / k2ref } else { 0.0 };
        (
            vec![g0, s0.min(0.5 * gmax / dmax)],
            vec![0.0, 0.0],
            vec![gmax, gmax / dmax],
        )
    } else {
        (vec![g0], vec![0.0], vec![gmax])
    };
    // Noise-dominated residuals make Gauss-Newton converge linearly; stop once
    // the cost no longer moves at the 1e-12 level.
    let opts = LmOptions {
        ftol: 1e-12,
        ..LmOptions::default()
    };
    let rep = levenberg_marquardt(eval, &x0, &lo, &hi, &opts)?;
    let dof = m.saturating_sub(data.len() + x0.len());
    let sigma2 = if floor > 0.0 {
        floor * floor
    } else if dof > 0 {
        rep.rss / dof as f64
    } else {
        0.0
    };
    // A rate held at its bound has no error estimate.
    let var = if rep.at_bound[0] {
        f64::INFINITY
    } else {
        rep.unscaled_covariance()
            .map(|c| c[(0, 0)])
            .unwrap_or(f64::INFINITY)
    };
    let tss = weighted_tss(data, |_| 1.0, |v| v);
    let r2 = if tss > 0.0 { 1.0 - rep.rss / tss } else { 1.0 };
    Ok((rep.params[0], var * sigma2, r2))
}

/// Spread of per-quadrant estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrantSpread {
    pub diffusion_cm2_per_s: Vec<f64>,
    pub gamma0_per_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionFit {
    pub gamma0_per_ms: f64,
    pub diffusion_cm2_per_s: f64,
    pub d0_cm2_per_s: f64,
    pub pressure_torr: f64,
    /// 95% bounds on the diffusion constant, cm^2/s.
    pub confidence_95: (f64, f64),
    pub gamma0_confidence_95: (f64, f64),
    pub modes_used: usize,
    pub quadrants: Option<QuadrantSpread>,
}

fn student_t95(dof: f64) -> Result<f64> {
    let t = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::Numeric(e.to_string()))?;
    Ok(t.inverse_cdf(0.975))
}

/// Weighted fit of `gamma = gamma0 + D k^2` with Student-t 95% bounds.
///
/// Weights are the inverse decay-rate variances; the bounds are scaled by the
/// reduced chi-square so misestimated weights widen rather than shrink them.
pub fn fit_diffusion(decays: &[ModeDecay], pressure_torr: f64) -> Result<DiffusionFit> {
    if !(pressure_torr > 0.0 && pressure_torr.is_finite()) {
        return arg(format!("pressure must be > 0 Torr, got {pressure_torr}"));
    }
    // Modes with an undetermined rate carry no weight.
    let fitted: Vec<&ModeDecay> = decays
        .iter()
        .filter(|m| m.fitted_gamma.is_finite() && m.gamma_stderr.is_finite())
        .collect();
    let mut ks: Vec<f64> = fitted.iter().map(|m| m.k_perp).collect();
    ks.sort_by(f64::total_cmp);
    ks.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1e-300));
    if ks.len() < MIN_DISTINCT_K {
        return arg(format!(
            "need fitted decays at {MIN_DISTINCT_K} or more distinct wavenumbers, got {}",
            ks.len()
        ));
    }
    let x: Vec<f64> = fitted.iter().map(|m| m.k_perp * m.k_perp).collect();
    let y: Vec<f64> = fitted.iter().map(|m| m.fitted_gamma).collect();
    let w: Vec<f64> = fitted
        .iter()
        .map(|m| {
            let floor = 1e-9 * m.fitted_gamma.abs().max(1e-12);
            1.0 / m.gamma_stderr.max(floor).powi(2)
        })
        .collect();
    let line = weighted_line(&x, &y, &w)?;
    let dof = (fitted.len() - 2) as f64;
    let scale = (line.chi2 / dof).max(f64::MIN_POSITIVE);
    let t95 = student_t95(dof)?;
    let se_d = (line.cov[1][1] * scale).sqrt() / CM2_PER_S_TO_MM2_PER_MS;
    let se_g = (line.cov[0][0] * scale).sqrt();
    let diffusion = line.slope / CM2_PER_S_TO_MM2_PER_MS;
    if !(diffusion > 0.0) {
        return numeric(format!(
            "fitted diffusion constant {diffusion} cm^2/s is not positive"
        ));
    }
    Ok(DiffusionFit {
        gamma0_per_ms: line.intercept,
        diffusion_cm2_per_s: diffusion,
        d0_cm2_per_s: d0_from_diffusion(diffusion, pressure_torr),
        pressure_torr,
        confidence_95: (diffusion - t95 * se_d, diffusion + t95 * se_d),
        gamma0_confidence_95: (line.intercept - t95 * se_g, line.intercept + t95 * se_g),
        modes_used: fitted.len(),
        quadrants: None,
    })
}

/// Transform, per-mode fits and the quadratic fit in one call.
pub fn analyse_series(
    series: &ImageSeries,
    opts: &TransformOptions,
    k_min: f64,
    k_max: f64,
    pressure_torr: f64,
) -> Result<DiffusionFit> {
    let modes = transverse_fft(series, opts)?;
    let fitted = fit_mode_decays(&modes, k_min, k_max)?;
    fit_diffusion(&fitted, pressure_torr)
}

/// Runs the pipeline on each image quadrant; reports the mean with spread-based 95% bounds.
///
/// A quadrant cuts through the hole, and a periodic transform of the crop sees
/// that cut as an edge jump leaking into every wavenumber; quadrants are
/// therefore always analysed in the cosine basis, whatever `opts.basis` says.
pub fn quadrant_error_estimate(
    series: &ImageSeries,
    opts: &TransformOptions,
    k_min: f64,
    k_max: f64,
    pressure_torr: f64,
) -> Result<DiffusionFit> {
    series.validate()?;
    let (hx, hy) = (series.nx / 2, series.ny / 2);
    if hx < MIN_QUADRANT || hy < MIN_QUADRANT {
        return arg(format!(
            "quadrants of a {} x {} image are smaller than {MIN_QUADRANT} x {MIN_QUADRANT}",
            series.nx, series.ny
        ));
    }
    let cosine = TransformOptions {
        basis: Basis::Cosine,
        ..*opts
    };
    let fits: Vec<DiffusionFit> = [(0, 0), (hx, 0), (0, hy), (hx, hy)]
        .par_iter()
        .map(|&(x0, y0)| {
            analyse_series(
                &series.crop(x0, y0, hx, hy)?,
                &cosine,
                k_min,
                k_max,
                pressure_torr,
            )
        })
        .collect::<Result<_>>()?;
    let ds: Vec<f64> = fits.iter().map(|f| f.diffusion_cm2_per_s).collect();
    let gs: Vec<f64> = fits.iter().map(|f| f.gamma0_per_ms).collect();
    let (dm, dh) = mean_halfwidth(&ds)?;
    let (gm, gh) = mean_halfwidth(&gs)?;
    Ok(DiffusionFit {
        gamma0_per_ms: gm,
        diffusion_cm2_per_s: dm,
        d0_cm2_per_s: d0_from_diffusion(dm, pressure_torr),
        pressure_torr,
        confidence_95: (dm - dh, dm + dh),
        gamma0_confidence_95: (gm - gh, gm + gh),
        modes_used: fits.iter().map(|f| f.modes_used).sum(),
        quadrants: Some(QuadrantSpread {
            diffusion_cm2_per_s: ds,
            gamma0_per_ms: gs,
        }),
    })
}

/// Mean and Student-t 95% half width of the mean.
fn mean_halfwidth(v: &[f64]) -> Result<(f64, f64)> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    Ok((mean, student_t95(n - 1.0)? * sd / n.sqrt()))
}

/// Through-origin fit of `D = 760 D0 / p` over several pressures.
///
/// Returns `D0` and its Student-t 95% bounds, cm^2/s.
pub fn fit_d0_through_origin(
    pressures_torr: &[f64],
    diffusion_cm2_per_s: &[f64],
) -> Result<(f64, (f64, f64))> {
    if pressures_torr.len() != diffusion_cm2_per_s.len() || pressures_torr.len() < 2 {
        return arg("need at least two matching (pressure, D) pairs");
    }
    if pressures_torr.iter().any(|&p| !(p > 0.0)) {
        return arg("pressures must be > 0 Torr");
    }
    let x: Vec<f64> = pressures_torr.iter().map(|p| 760.0 / p).collect();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let slope = x
        .iter()
        .zip(diffusion_cm2_per_s)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        / sxx;
    let n = x.len() as f64;
    let rss: f64 = x
        .iter()
        .zip(diffusion_cm2_per_s)
        .map(|(a, b)| (b - slope * a).powi(2))
        .sum();
    let se = (rss / (n - 1.0) / sxx).sqrt();
    let h = student_t95(n - 1.0)? * se;
    Ok((slope, (slope - h, slope + h)))
}
