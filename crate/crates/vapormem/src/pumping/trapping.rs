//! Radiation-trapping multiplicity: mean-chord analytic model and photon Monte Carlo.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atoms::{Ground, GroundPopulations, VaporCell};
use crate::error::{arg, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrappingMethod {
    MonteCarlo,
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrappingModelResult {
    /// Mean number of re-absorptions followed by re-emission per fluorescence photon.
    pub multiplicity: f64,
    /// Probability that a single flight leaves the cell.
    pub escape_probability: f64,
    pub method: TrappingMethod,
    /// Standard error of `multiplicity`; zero for the analytic model.
    pub mc_stderr: f64,
}

impl TrappingModelResult {
    pub fn none(method: TrappingMethod) -> Self {
        TrappingModelResult {
            multiplicity: 0.0,
            escape_probability: 1.0,
            method,
            mc_stderr: 0.0,
        }
    }
}

/// Multiplicity of a flight sequence with per-flight escape `p` and per-absorption quench `q`.
///
/// Sums the geometric series of absorb-and-re-emit events:
/// `M = (1-q)(1-p) / (p + q - p q)`, which is `(1-p)/p` at `q = 0` and zero at `q = 1`.
pub fn multiplicity_from_escape(p_esc: f64, q: f64) -> f64 {
    let absorbed_and_reemitted = (1.0 - q) * (1.0 - p_esc);
    if absorbed_and_reemitted <= 0.0 {
        return 0.0;
    }
    absorbed_and_reemitted / (1.0 - absorbed_and_reemitted)
}

/// Per-flight absorption probability implied by a multiplicity, `1 - p = M / ((1-q)(1+M))`.
pub fn absorption_probability(multiplicity: f64, q: f64) -> f64 {
    if multiplicity <= 0.0 || q >= 1.0 {
        return 0.0;
    }
    (multiplicity / ((1.0 - q) * (1.0 + multiplicity))).min(1.0)
}

/// Mean chord `4V/S = 2RL/(R+L)` of a closed cylinder, metres.
pub fn mean_chord_m(cell: &VaporCell) -> f64 {
    let r = cell.radius_cm * 1e-2;
    let l = cell.length_cm * 1e-2;
    2.0 * r * l / (r + l)
}

const ANALYTIC_NODES: usize = 40_000;

/// Analytic multiplicity from the mean-chord first-flight escape probability.
///
/// `p_esc = integral phi(nu) (1 - exp(-t)) / t dnu` with `t = kappa(nu) * lbar`,
/// the escape probability of a photon emitted uniformly along a chord of mean
/// length, averaged over the emission Voigt profile of the F=4 manifold.
pub fn multiplicity_analytic(
    cell: &VaporCell,
    pops: &GroundPopulations,
    q: f64,
) -> TrappingModelResult {
    let method = TrappingMethod::Analytic;
    if cell.number_density() == 0.0 || pops.n1_fraction + pops.n3_fraction == 0.0 {
        return TrappingModelResult::none(method);
    }
    let lbar = mean_chord_m(cell);
    let (sigma, gamma) = cell.voigt_widths();
    let centre = cell.line.manifold_centroid_ghz(Ground::F4);
    let scale = gamma.max(sigma);
    let h = PI / ANALYTIC_NODES as f64;
    let (mut weight, mut escaped) = (0.0, 0.0);
    for i in 0..ANALYTIC_NODES {
        let theta = -0.5 * PI + (i as f64 + 0.5) * h;
        let offset = scale * theta.tan();
        let jac = scale / theta.cos().powi(2);
        let phi = crate::voigt::voigt(offset, sigma, gamma) * jac;
        let t = cell.absorption_coefficient(pops, centre + offset) * lbar;
        let survive = if t > 0.0 { -(-t).exp_m1() / t } else { 1.0 };
        weight += phi;
        escaped += phi * survive;
    }
    let p_esc = escaped / weight;
    TrappingModelResult {
        multiplicity: multiplicity_from_escape(p_esc, q),
        escape_probability: p_esc,
        method,
        mc_stderr: 0.0,
    }
}

/// Smallest photon count accepted by the Monte Carlo estimator.
pub const MIN_PHOTONS: u64 = 1_000;

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    count: u64,
    count_sq: u128,
    flights: u64,
    escapes: u64,
}

impl Tally {
    fn merge(self, o: Tally) -> Tally {
        Tally {
            count: self.count + o.count,
            count_sq: self.count_sq + o.count_sq,
            flights: self.flights + o.flights,
            escapes: self.escapes + o.escapes,
        }
    }
}

/// Distance from `pos` along unit `dir` to the wall of a cylinder of radius `r`, height `l`.
fn wall_distance(pos: [f64; 3], dir: [f64; 3], r: f64, l: f64) -> f64 {
    let a = dir[0] * dir[0] + dir[1] * dir[1];
    let b = pos[0] * dir[0] + pos[1] * dir[1];
    let c = pos[0] * pos[0] + pos[1] * pos[1] - r * r;
    let side = if a > 0.0 {
        (-b + (b * b - a * c).max(0.0).sqrt()) / a
    } else {
        f64::INFINITY
    };
    let cap = if dir[2] > 0.0 {
        (l - pos[2]) / dir[2]
    } else if dir[2] < 0.0 {
        -pos[2] / dir[2]
    } else {
        f64::INFINITY
    };
    side.min(cap).max(0.0)
}

/// Photon random-walk estimate of the multiplicity.
///
/// Each photon owns ChaCha stream `i` of the master seed, so the result is
/// independent of how photons are scheduled across threads.
pub fn multiplicity_monte_carlo(
    cell: &VaporCell,
    pops: &GroundPopulations,
    q: f64,
    n_photons: u64,
    seed: u64,
) -> Result<TrappingModelResult> {
    if n_photons < MIN_PHOTONS {
        return arg(format!(
            "Monte Carlo needs at least {MIN_PHOTONS} photons, got {n_photons}"
        ));
    }
    if !(0.0..=1.0).contains(&q) {
        return arg(format!("quench fraction must lie in [0, 1], got {q}"));
    }
    let r = cell.radius_cm * 1e-2;
    let l = cell.length_cm * 1e-2;
    let (sigma, gamma) = cell.voigt_widths();
    let centre = cell.line.manifold_centroid_ghz(Ground::F4);
    let absorbing = cell.number_density() > 0.0;

    let photon = |i: u64| -> Tally {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i);
        let rho = r * rng.random::<f64>().sqrt();
        let az = 2.0 * PI * rng.random::<f64>();
        let mut pos = [rho * az.cos(), rho * az.sin(), l * rng.random::<f64>()];
        let mut tally = Tally::default();
        let mut count = 0u64;
        loop {
            tally.flights += 1;
            let g: f64 = rng.sample(StandardNormal);
            let nu = centre + sigma * g + gamma * (PI * (rng.random::<f64>() - 0.5)).tan();
            let cz = 2.0 * rng.random::<f64>() - 1.0;
            let ph = 2.0 * PI * rng.random::<f64>();
            let st = (1.0 - cz * cz).sqrt();
            let dir = [st * ph.cos(), st * ph.sin(), cz];
            let to_wall = wall_distance(pos, dir, r, l);
            let kappa = if absorbing {
                cell.absorption_coefficient(pops, nu)
            } else {
                0.0
            };
            let u: f64 = rng.random();
            let path = if kappa > 0.0 {
                -(1.0 - u).ln() / kappa
            } else {
                f64::INFINITY
            };
            if path >= to_wall {
                tally.escapes += 1;
                break;
            }
            for k in 0..3 {
                pos[k] += path * dir[k];
            }
            if rng.random::<f64>() < q {
                break;
            }
            count += 1;
        }
        tally.count = count;
        tally.count_sq = (count as u128) * (count as u128);
        tally
    };

    let total = (0..n_photons)
        .into_par_iter()
        .map(photon)
        .reduce(Tally::default, Tally::merge);

    let n = n_photons as f64;
    let mean = total.count as f64 / n;
    let mean_sq = total.count_sq as f64 / n;
    let var = (mean_sq - mean * mean).max(0.0) * n / (n - 1.0);
    Ok(TrappingModelResult {
        multiplicity: mean,
        escape_probability: total.escapes as f64 / total.flights as f64,
        method: TrappingMethod::MonteCarlo,
        mc_stderr: (var / n).sqrt(),
    })
}
