//! Bounded Levenberg-Marquardt and weighted linear regression.

use nalgebra::{DMatrix, DVector};

use crate::error::{arg, numeric, Result};

/// Residuals and their Jacobian at a parameter vector.
pub type Evaluation = (DVector<f64>, DMatrix<f64>);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative step size at which the iteration stops.
    pub xtol: f64,
    /// Relative decrease of the residual sum of squares at which the iteration
    /// stops; 0 disables the test. A large irreducible residual makes this test
    /// stop early, so the default relies on the step size alone.
    pub ftol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 200,
            xtol: 1e-12,
            ftol: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmReport {
    pub params: DVector<f64>,
    /// Sum of squared residuals at `params`.
    pub rss: f64,
    pub iterations: usize,
    /// `J^T J` at the solution.
    pub normal_matrix: DMatrix<f64>,
    /// Parameters held at a bound by the active set.
    pub at_bound: Vec<bool>,
    pub residual_count: usize,
}

impl LmReport {
    /// Inverse of `J^T J` restricted to free parameters; rows and columns of bound parameters are zero.
    pub fn unscaled_covariance(&self) -> Result<DMatrix<f64>> {
        let n = self.params.len();
        let free: Vec<usize> = (0..n).filter(|&i| !self.at_bound[i]).collect();
        let mut cov = DMatrix::zeros(n, n);
        if free.is_empty() {
            return Ok(cov);
        }
        let sub = DMatrix::from_fn(free.len(), free.len(), |i, j| {
            self.normal_matrix[(free[i], free[j])]
        });
        let inv = sub
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .or_else(|| sub.try_inverse())
            .ok_or_else(|| {
                crate::Error::Numeric("singular normal matrix at the solution".into())
            })?;
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                cov[(i, j)] = 0.5 * (inv[(a, b)] + inv[(b, a)]);
            }
        }
        Ok(cov)
    }
}

fn clamp(x: &DVector<f64>, lo: &[f64], hi: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        x.len(),
        x.iter().enumerate().map(|(i, v)| v.clamp(lo[i], hi[i])),
    )
}

/// Minimises `|r(x)|^2` subject to `lo <= x <= hi`.
///
/// Parameters sitting on a bound with the gradient pushing outward are frozen
/// for the step (active set); the rest take a Marquardt-scaled damped step.
pub fn levenberg_marquardt(
    eval: impl Fn(&DVector<f64>) -> Result<Evaluation>,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &LmOptions,
) -> Result<LmReport> {
    let n = x0.len();
    if lo.len() != n || hi.len() != n {
        return arg("bound vectors must match the parameter count");
    }
    if (0..n).any(|i| !(lo[i] <= hi[i])) {
        return arg("lower bounds must not exceed upper bounds");
    }
    let mut x = clamp(&DVector::from_column_slice(x0), lo, hi);
    let (mut r, mut jac) = eval(&x)?;
    if r.iter().any(|v| !v.is_finite()) || jac.iter().any(|v| !v.is_finite()) {
        return numeric("non-finite residuals at the starting point");
    }
    let mut rss = r.norm_squared();
    let mut lambda = 1e-3;
    let mut nu = 2.0;
    let mut history = vec![rss];
    let mut active = vec![false; n];
    let mut ties = 0;
    for iter in 1..=opts.max_iterations {
        let g = jac.transpose() * &r;
        let a = jac.transpose() * &jac;
        for i in 0..n {
            active[i] = (x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0);
        }
        let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
        if free.is_empty() || rss == 0.0 {
            return Ok(report(x, rss, iter - 1, a, active, r.len()));
        }
        let gmax = free
            .iter()
            .map(|&i| g[i].abs() * (1.0 + x[i].abs()))
            .fold(0.0, f64::max);
        if gmax <= f64::EPSILON * rss {
            return Ok(report(x, rss, iter - 1, a, active, r.len()));
        }
        let diag_floor = 1e-12 * free.iter().map(|&i| a[(i, i)]).fold(0.0, f64::max);
        // Inner loop: raise the damping until a step decreases the cost.
        loop {
            let m = free.len();
            let mut lhs = DMatrix::from_fn(m, m, |p, q| a[(free[p], free[q])]);
            for p in 0..m {
                lhs[(p, p)] += lambda * a[(free[p], free[p])].max(diag_floor);
            }
            let rhs = DVector::from_iterator(m, free.iter().map(|&i| -g[i]));
            let Some(step) = lhs
                .clone()
                .cholesky()
                .map(|c| c.solve(&rhs))
                .or_else(|| lhs.lu().solve(&rhs))
            else {
                return numeric(format!("singular damped system at iteration {iter}"));
            };
            let mut trial = x.clone();
            for (p, &i) in free.iter().enumerate() {
                trial[i] += step[p];
            }
            let trial = clamp(&trial, lo, hi);
            let dx = &trial - &x;
            let small_step = (0..n).all(|i| dx[i].abs() <= opts.xtol * (x[i].abs() + opts.xtol));
            let (r_new, jac_new) = eval(&trial)?;
            let rss_new = r_new.norm_squared();
            let predicted = -(2.0 * g.dot(&dx) + (dx.transpose() * &a * &dx)[(0, 0)]);
            // Ties are accepted when the model predicts descent: near a large
            // irreducible residual the cost cannot resolve the last digits.
            if rss_new.is_finite() && (rss_new < rss || (rss_new == rss && predicted > 0.0)) {
                let rho = if predicted > 0.0 {
                    (rss - rss_new) / predicted
                } else {
                    0.0
                };
                lambda *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
                nu = 2.0;
                let relative_drop = (rss - rss_new) / rss;
                ties = if rss_new == rss { ties + 1 } else { 0 };
                x = trial;
                r = r_new;
                jac = jac_new;
                rss = rss_new;
                history.push(rss);
                // Repeated ties: the cost is converged to its resolution.
                if small_step || relative_drop < opts.ftol || ties >= 3 {
                    let a = jac.transpose() * &jac;
                    let g = jac.transpose() * &r;
                    let active: Vec<bool> = (0..n)
                        .map(|i| (x[i] <= lo[i] && g[i] >= 0.0) || (x[i] >= hi[i] && g[i] <= 0.0))
                        .collect();
                    return Ok(report(x, rss, iter, a, active, r.len()));
                }
                break;
            }
            if small_step {
                // No decrease is available at the resolution of the parameters.
                return Ok(report(x, rss, iter, a, active.clone(), r.len()));
            }
            lambda *= nu;
            nu *= 2.0;
            if !lambda.is_finite() || lambda > 1e30 {
                return numeric(format!(
                    "damping diverged at iteration {iter}; cost history {}",
                    trace(&history)
                ));
            }
        }
    }
    numeric(format!(
        "no convergence in {} iterations; cost history {}",
        opts.max_iterations,
        trace(&history)
    ))
}

fn report(
    x: DVector<f64>,
    rss: f64,
    iterations: usize,
    a: DMatrix<f64>,
    at_bound: Vec<bool>,
    m: usize,
) -> LmReport {
    LmReport {
        params: x,
        rss,
        iterations,
        normal_matrix: a,
        at_bound,
        residual_count: m,
    }
}

fn trace(history: &[f64]) -> String {
    let tail = &history[history.len().saturating_sub(8)..];
    tail.iter()
        .map(|v| format!("{v:.6e}"))
        .collect::<Vec<_>>()
        .join(" -> ")
}

/// Weighted straight-line fit `y = a + b x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    /// Covariance of (intercept, slope) from the weights alone.
    pub cov: [[f64; 2]; 2],
    /// Weighted residual sum of squares.
    pub chi2: f64,
    pub r2: f64,
}

/// Weighted least-squares line; weights are inverse variances.
pub fn weighted_line(x: &[f64], y: &[f64], w: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() != w.len() {
        return arg("x, y and weight lengths differ");
    }
    if x.len() < 2 {
        return arg("a line needs at least two points");
    }
    if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return arg("weights must be positive and finite");
    }
    let sw: f64 = w.iter().sum();
    let xm = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let ym = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, b)| b * (a - xm).powi(2)).sum();
    let xspan = x.iter().fold(0.0f64, |m, v| m.max((v - xm).abs()));
    if !(sxx > 1e-12 * sw * xspan * xspan) || xspan == 0.0 {
        return numeric("design matrix is ill-conditioned: abscissae are (nearly) identical");
    }
    let sxy: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((a, b), c)| c * (a - xm) * (b - ym))
        .sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let chi2: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((a, b), c)| c * (b - intercept - slope * a).powi(2))
        .sum();
    let syy: f64 = y.iter().zip(w).map(|(b, c)| c * (b - ym).powi(2)).sum();
    let var_b = 1.0 / sxx;
    let var_a = 1.0 / sw + xm * xm / sxx;
    let cov_ab = -xm / sxx;
    Ok(LineFit {
        intercept,
        slope,
        cov: [[var_a, cov_ab], [cov_ab, var_b]],
        chi2,
        r2: if syy > 0.0 { 1.0 - chi2 / syy } else { 1.0 },
    })
}
