//! Faddeeva function and Voigt line shapes.
//!
//! `faddeeva` uses Weideman's rational expansion with 64 terms, valid for
//! `Im z >= 0`; the lower half-plane follows from `w(-z) = 2 exp(-z^2) - w(z)`.
//! Widths are ordinary frequencies: `sigma` is the Gaussian standard deviation,
//! `gamma` the Lorentzian half width at half maximum.

use std::f64::consts::{PI, SQRT_2};
use std::sync::OnceLock;

use num_complex::Complex64;

const N_TERMS: usize = 64;
const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

struct Weideman {
    l: f64,
    coeffs: [f64; N_TERMS],
}

fn weideman() -> &'static Weideman {
    static TABLE: OnceLock<Weideman> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = N_TERMS as i64;
        let m = 2 * n;
        let m2 = 2 * m;
        let l = (N_TERMS as f64 / SQRT_2).sqrt();
        // Sampled kernel on k = -M+1..M-1, the k = -M sample is zero.
        let samples: Vec<(f64, f64)> = (-m + 1..m)
            .map(|k| {
                let theta = k as f64 * PI / m as f64;
                let t = l * (theta / 2.0).tan();
                (k as f64, (-t * t).exp() * (l * l + t * t))
            })
            .collect();
        let mut coeffs = [0.0; N_TERMS];
        for (j, c) in coeffs.iter_mut().enumerate() {
            let harmonic = (j + 1) as f64;
            let sum: f64 = samples
                .iter()
                .map(|&(k, f)| f * (2.0 * PI * harmonic * k / m2 as f64).cos())
                .sum();
            *c = sum / m2 as f64;
        }
        Weideman { l, coeffs }
    })
}

/// Faddeeva function `w(z) = exp(-z^2) erfc(-iz)`.
pub fn faddeeva(z: Complex64) -> Complex64 {
    if z.im < 0.0 {
        return 2.0 * (-z * z).exp() - faddeeva(-z);
    }
    let tab = weideman();
    let i = Complex64::i();
    let denom = tab.l - i * z;
    let zz = (tab.l + i * z) / denom;
    let mut p = Complex64::new(0.0, 0.0);
    for &c in tab.coeffs.iter().rev() {
        p = p * zz + c;
    }
    2.0 * p / (denom * denom) + FRAC_1_SQRT_PI / denom
}

/// Derivative `w'(z) = -2 z w(z) + 2i/sqrt(pi)`.
pub fn faddeeva_derivative(z: Complex64, w: Complex64) -> Complex64 {
    -2.0 * z * w + Complex64::new(0.0, 2.0 * FRAC_1_SQRT_PI)
}

/// Gaussian standard deviation from a full width at half maximum.
pub fn sigma_from_fwhm(fwhm: f64) -> f64 {
    fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
}

/// Unit-area Gaussian.
pub fn gaussian(x: f64, sigma: f64) -> f64 {
    (-0.5 * (x / sigma).powi(2)).exp() / (sigma * (2.0 * PI).sqrt())
}

/// Unit-area Lorentzian with half width `gamma`.
pub fn lorentzian(x: f64, gamma: f64) -> f64 {
    gamma / (PI * (x * x + gamma * gamma))
}

/// Unit-area Voigt profile. Falls back to the closed forms when either width is zero.
pub fn voigt(x: f64, sigma: f64, gamma: f64) -> f64 {
    debug_assert!(sigma >= 0.0 && gamma >= 0.0);
    if sigma == 0.0 {
        return lorentzian(x, gamma);
    }
    if gamma == 0.0 {
        return gaussian(x, sigma);
    }
    let z = Complex64::new(x, gamma) / (sigma * SQRT_2);
    faddeeva(z).re / (sigma * (2.0 * PI).sqrt())
}

/// Voigt value and its partial derivative with respect to `sigma` (both widths non-zero).
pub fn voigt_and_dsigma(x: f64, sigma: f64, gamma: f64) -> (f64, f64) {
    let norm = 1.0 / (sigma * (2.0 * PI).sqrt());
    let z = Complex64::new(x, gamma) / (sigma * SQRT_2);
    let w = faddeeva(z);
    let v = w.re * norm;
    let dw = faddeeva_derivative(z, w);
    let dv = (dw * (-z / sigma)).re * norm - v / sigma;
    (v, dv)
}

/// Full width at half maximum of a Voigt profile (Olivero-Longbothum, 2e-4 relative).
pub fn voigt_fwhm(gauss_fwhm: f64, lorentz_fwhm: f64) -> f64 {
    0.5346 * lorentz_fwhm + (0.2166 * lorentz_fwhm.powi(2) + gauss_fwhm.powi(2)).sqrt()
}
