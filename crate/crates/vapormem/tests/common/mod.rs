//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn step(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Voigt profile by direct convolution of a Gaussian (std `sigma`) with a
/// Lorentzian (half width `gamma`), integrating in the Lorentzian angle
/// `t = x - gamma tan(theta)` so the kernel becomes uniform on (-pi/2, pi/2).
pub fn voigt_by_convolution(x: f64, sigma: f64, gamma: f64) -> f64 {
    let g = |t: f64| (-0.5 * (t / sigma).powi(2)).exp() / (sigma * (2.0 * PI).sqrt());
    let integrand = |theta: f64| g(x - gamma * theta.tan()) / PI;
    // Split at the angle where the Gaussian centre sits so the peak is a node.
    let theta0 = (x / gamma).atan();
    let peak = 1.0 / (sigma * (2.0 * PI).sqrt() * PI);
    let tol = 1e-15 * peak.max(1.0);
    let h = PI / 2.0 - 1e-12;
    adaptive_simpson(&integrand, -h, theta0, tol) + adaptive_simpson(&integrand, theta0, h, tol)
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

/// `sum_n (sign)^n (x/2)^(2n) / (n!)^2`: `I0` for sign = +1 and `J0` for sign = -1.
fn bessel_zero_series(x: f64, sign: f64) -> f64 {
    let q = 0.25 * x * x;
    let (mut term, mut sum) = (1.0, 1.0);
    for n in 1..200 {
        term *= sign * q / (n * n) as f64;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

pub fn bessel_i0(x: f64) -> f64 {
    bessel_zero_series(x, 1.0)
}

pub fn bessel_j0(x: f64) -> f64 {
    bessel_zero_series(x, -1.0)
}
