//! Caesium line data, vapour density, broadening and absorption spectra.
//!
//! Detunings are ordinary frequencies in GHz measured from the fine-structure
//! line centroid. Each ground manifold absorbs as a single Voigt line at the
//! strength-weighted centroid of its excited hyperfine components unless
//! [`LineShape::Resolved`] is selected.
//!
//! Number density follows the Nesmeyanov saturated-vapour-pressure correlation
//! (solid and liquid branches) with `n = P/(k_B T)`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::constants::{cesium, AMU, C, K_B, TORR};
use crate::error::{arg, Error, Result};
use crate::voigt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LineLabel {
    D1,
    D2,
}

impl LineLabel {
    pub fn key(self) -> &'static str {
        match self {
            LineLabel::D1 => "D1",
            LineLabel::D2 => "D2",
        }
    }
}

impl std::str::FromStr for LineLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "D1" => Ok(LineLabel::D1),
            "D2" => Ok(LineLabel::D2),
            other => arg(format!("unknown line `{other}` (expected D1 or D2)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ground {
    /// F = 4, the pumped target state |1>.
    F4,
    /// F = 3, the depleted state |3>.
    F3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperfineComponent {
    pub ground: Ground,
    pub excited_f: u8,
    /// Transition frequency relative to the line centroid, GHz.
    pub offset_ghz: f64,
    pub relative_strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpticalLine {
    pub label: LineLabel,
    pub wavelength_nm: f64,
    pub excited_lifetime_ns: f64,
    pub ground_hyperfine_splitting_ghz: f64,
    /// (2J'+1)/(2J+1).
    pub degeneracy_ratio: f64,
    pub hyperfine_components: Vec<HyperfineComponent>,
}

impl OpticalLine {
    pub fn new(label: LineLabel) -> Self {
        let data = cesium();
        let line = &data.lines[label.key()];
        let shifts = data.species.ground_shift_ghz;
        let hyperfine_components = line
            .components
            .iter()
            .map(|c| {
                let (ground, shift) = match c.ground.as_str() {
                    "F4" => (Ground::F4, shifts.f4),
                    "F3" => (Ground::F3, shifts.f3),
                    other => panic!("constants file names unknown ground state {other}"),
                };
                HyperfineComponent {
                    ground,
                    excited_f: c.excited_f,
                    offset_ghz: c.excited_shift_ghz - shift,
                    relative_strength: c.relative_strength,
                }
            })
            .collect();
        OpticalLine {
            label,
            wavelength_nm: line.wavelength_nm,
            excited_lifetime_ns: line.lifetime_ns,
            ground_hyperfine_splitting_ghz: data.species.ground_hyperfine_splitting_ghz,
            degeneracy_ratio: line.degeneracy_ratio,
            hyperfine_components,
        }
    }

    pub fn d1() -> Self {
        Self::new(LineLabel::D1)
    }

    pub fn d2() -> Self {
        Self::new(LineLabel::D2)
    }

    pub fn frequency_hz(&self) -> f64 {
        C / (self.wavelength_nm * 1e-9)
    }

    /// Radiative decay rate of the excited state, ns^-1.
    pub fn radiative_rate(&self) -> f64 {
        1.0 / self.excited_lifetime_ns
    }

    /// Natural linewidth `1/(2 pi tau)` in GHz (Lorentzian FWHM).
    pub fn natural_linewidth_ghz(&self) -> f64 {
        1.0 / (2.0 * PI * self.excited_lifetime_ns)
    }

    pub fn components(&self, ground: Ground) -> impl Iterator<Item = &HyperfineComponent> {
        self.hyperfine_components
            .iter()
            .filter(move |c| c.ground == ground)
    }

    /// Strength-weighted transition frequency of one ground manifold, GHz.
    pub fn manifold_centroid_ghz(&self, ground: Ground) -> f64 {
        let (num, den) = self.components(ground).fold((0.0, 0.0), |(n, d), c| {
            (
                n + c.offset_ghz * c.relative_strength,
                d + c.relative_strength,
            )
        });
        num / den
    }

    /// Frequency-integrated absorption cross-section per ground-state atom, m^2 GHz.
    pub fn integrated_cross_section(&self) -> f64 {
        let lambda = self.wavelength_nm * 1e-9;
        lambda * lambda / (8.0 * PI) * self.degeneracy_ratio * self.radiative_rate()
    }

    /// Resonant cross-section `3 lambda^2 / 2 pi` of a closed two-level transition, m^2.
    pub fn resonant_cross_section(&self) -> f64 {
        let lambda = self.wavelength_nm * 1e-9;
        3.0 * lambda * lambda / (2.0 * PI)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BufferKind {
    Ne,
    N2,
}

impl BufferKind {
    pub fn key(self) -> &'static str {
        match self {
            BufferKind::Ne => "Ne",
            BufferKind::N2 => "N2",
        }
    }
}

impl std::str::FromStr for BufferKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Ne" => Ok(BufferKind::Ne),
            "N2" => Ok(BufferKind::N2),
            other => arg(format!("unknown buffer gas `{other}` (expected Ne or N2)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferGas {
    pub kind: BufferKind,
    pub pressure_torr: f64,
    pub broadening_mhz_per_torr: f64,
    pub d0_cm2_per_s: f64,
    pub mass_amu: f64,
    /// Quench cross-sections in square angstrom for (D1, D2).
    pub quench_cross_section_a2: (f64, f64),
}

impl BufferGas {
    pub fn new(kind: BufferKind, pressure_torr: f64) -> Result<Self> {
        if !(pressure_torr >= 0.0) || !pressure_torr.is_finite() {
            return arg(format!(
                "buffer pressure must be >= 0 Torr, got {pressure_torr}"
            ));
        }
        let gas = &cesium().buffer_gases[kind.key()];
        Ok(BufferGas {
            kind,
            pressure_torr,
            broadening_mhz_per_torr: gas.broadening_mhz_per_torr,
            d0_cm2_per_s: gas.d0_cm2_per_s,
            mass_amu: gas.mass_amu,
            quench_cross_section_a2: (
                gas.quench_cross_section_a2["D1"],
                gas.quench_cross_section_a2["D2"],
            ),
        })
    }

    pub fn quench_cross_section(&self, line: LineLabel) -> f64 {
        match line {
            LineLabel::D1 => self.quench_cross_section_a2.0,
            LineLabel::D2 => self.quench_cross_section_a2.1,
        }
    }

    /// Diffusion constant at this pressure, `D = D0 * 760 / p`, cm^2/s.
    pub fn diffusion_constant(&self) -> Result<f64> {
        if self.pressure_torr <= 0.0 {
            return arg("diffusion constant diverges at zero buffer pressure");
        }
        Ok(self.d0_cm2_per_s * 760.0 / self.pressure_torr)
    }
}

/// Whether excited hyperfine structure is collapsed onto manifold centroids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LineShape {
    #[default]
    Centroid,
    Resolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaporCell {
    pub line: OpticalLine,
    pub buffer: BufferGas,
    pub temperature_k: f64,
    pub length_cm: f64,
    pub radius_cm: f64,
    /// Replaces the vapour-pressure density when set (m^-3).
    pub density_override: Option<f64>,
    pub line_shape: LineShape,
}

impl VaporCell {
    pub fn new(
        line: OpticalLine,
        buffer: BufferGas,
        temperature_k: f64,
        length_cm: f64,
        radius_cm: f64,
    ) -> Result<Self> {
        check_temperature(temperature_k)?;
        if !(length_cm > 0.0 && radius_cm > 0.0) {
            return arg(format!(
                "cell length and radius must be positive, got {length_cm} x {radius_cm} cm"
            ));
        }
        Ok(VaporCell {
            line,
            buffer,
            temperature_k,
            length_cm,
            radius_cm,
            density_override: None,
            line_shape: LineShape::Centroid,
        })
    }

    /// 7.5 cm long, 1 cm radius cylinder.
    pub fn standard(line: LineLabel, buffer: BufferGas, temperature_k: f64) -> Result<Self> {
        Self::new(OpticalLine::new(line), buffer, temperature_k, 7.5, 1.0)
    }

    pub fn with_density(mut self, density_per_m3: f64) -> Result<Self> {
        if !(density_per_m3 >= 0.0) || !density_per_m3.is_finite() {
            return arg(format!(
                "density must be finite and >= 0, got {density_per_m3}"
            ));
        }
        self.density_override = Some(density_per_m3);
        Ok(self)
    }

    pub fn with_temperature(&self, temperature_k: f64) -> Result<Self> {
        check_temperature(temperature_k)?;
        let mut c = self.clone();
        c.temperature_k = temperature_k;
        Ok(c)
    }

    pub fn number_density(&self) -> f64 {
        match self.density_override {
            Some(n) => n,
            None => vapor_number_density(self.temperature_k)
                .expect("cell temperature validated at construction"),
        }
    }

    pub fn doppler_fwhm_ghz(&self) -> f64 {
        doppler_fwhm(&self.line, self.temperature_k)
    }

    /// Natural plus pressure-broadened Lorentzian FWHM, GHz.
    pub fn lorentz_fwhm_ghz(&self) -> f64 {
        self.line.natural_linewidth_ghz() + pressure_broadened_fwhm(&self.buffer) * 1e-3
    }

    /// Gaussian sigma and Lorentzian half width, GHz.
    pub fn voigt_widths(&self) -> (f64, f64) {
        (
            voigt::sigma_from_fwhm(self.doppler_fwhm_ghz()),
            0.5 * self.lorentz_fwhm_ghz(),
        )
    }

    /// Absorption coefficient per unit length (m^-1) at detuning `nu` for the given populations.
    pub fn absorption_coefficient(&self, pops: &GroundPopulations, nu: f64) -> f64 {
        let (sigma, gamma) = self.voigt_widths();
        let scale = self.number_density() * self.line.integrated_cross_section();
        scale * self.lineshape_sum(pops, nu, sigma, gamma)
    }

    fn lineshape_sum(&self, pops: &GroundPopulations, nu: f64, sigma: f64, gamma: f64) -> f64 {
        let mut total = 0.0;
        for (ground, frac) in [
            (Ground::F4, pops.n1_fraction),
            (Ground::F3, pops.n3_fraction),
        ] {
            if frac == 0.0 {
                continue;
            }
            let shape = match self.line_shape {
                LineShape::Centroid => {
                    voigt::voigt(nu - self.line.manifold_centroid_ghz(ground), sigma, gamma)
                }
                LineShape::Resolved => self
                    .line
                    .components(ground)
                    .map(|c| c.relative_strength * voigt::voigt(nu - c.offset_ghz, sigma, gamma))
                    .sum(),
            };
            total += frac * shape;
        }
        total
    }
}

fn check_temperature(t: f64) -> Result<()> {
    let vp = &cesium().vapor_pressure;
    if !(t > vp.valid_min_k && t < vp.valid_max_k) {
        return Err(Error::Domain(format!(
            "temperature {t} K outside the density correlation window ({}, {}) K",
            vp.valid_min_k, vp.valid_max_k
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundPopulations {
    pub n1_fraction: f64,
    pub n3_fraction: f64,
}

impl GroundPopulations {
    /// Populations with `n1` in F=4 and `1 - n1` in F=3.
    pub fn new(n1_fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&n1_fraction) {
            return arg(format!(
                "population fraction must lie in [0, 1], got {n1_fraction}"
            ));
        }
        Ok(GroundPopulations {
            n1_fraction,
            n3_fraction: 1.0 - n1_fraction,
        })
    }

    pub fn polarized() -> Self {
        GroundPopulations {
            n1_fraction: 1.0,
            n3_fraction: 0.0,
        }
    }

    /// Degeneracy-weighted thermal populations, 9/16 and 7/16.
    pub fn thermal() -> Self {
        let g = cesium().species.ground_degeneracy;
        let n1 = g.f4 as f64 / (g.f4 + g.f3) as f64;
        GroundPopulations {
            n1_fraction: n1,
            n3_fraction: 1.0 - n1,
        }
    }

    /// Fractions scaled by an arbitrary factor; used for linearity checks.
    pub fn scaled(&self, factor: f64) -> Self {
        GroundPopulations {
            n1_fraction: self.n1_fraction * factor,
            n3_fraction: self.n3_fraction * factor,
        }
    }
}

/// Saturated caesium number density, m^-3.
pub fn vapor_number_density(temperature_k: f64) -> Result<f64> {
    check_temperature(temperature_k)?;
    let vp = &cesium().vapor_pressure;
    let branch = if temperature_k > branch_switch_temperature() {
        &vp.liquid
    } else {
        &vp.solid
    };
    let pressure_pa = 10f64.powf(branch.log10_torr(temperature_k)) * TORR;
    Ok(pressure_pa / (K_B * temperature_k))
}

/// Temperature where the solid and liquid branches intersect, K.
///
/// The two published branches disagree by 4% at the nominal melting point, so
/// the switch happens at their intersection (about 288 K) to keep `n(T)` continuous.
pub fn branch_switch_temperature() -> f64 {
    static SWITCH: OnceLock<f64> = OnceLock::new();
    *SWITCH.get_or_init(|| {
        let vp = &cesium().vapor_pressure;
        let gap = |t: f64| vp.liquid.log10_torr(t) - vp.solid.log10_torr(t);
        let (mut lo, mut hi) = (275.0, vp.melting_point_k);
        assert!(
            gap(lo) < 0.0 && gap(hi) > 0.0,
            "vapour-pressure branches do not cross"
        );
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if gap(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    })
}

/// Doppler FWHM `(nu0/c) sqrt(8 ln2 k T / m)`, GHz.
pub fn doppler_fwhm(line: &OpticalLine, temperature_k: f64) -> f64 {
    let mass = cesium().species.mass_amu * AMU;
    let v = (8.0 * std::f64::consts::LN_2 * K_B * temperature_k / mass).sqrt();
    line.frequency_hz() / C * v * 1e-9
}

/// Pressure-broadening Lorentzian FWHM, MHz.
pub fn pressure_broadened_fwhm(buffer: &BufferGas) -> f64 {
    buffer.broadening_mhz_per_torr * buffer.pressure_torr
}

/// Intensity optical depth `OD(nu)` on a detuning grid.
pub fn optical_depth_spectrum(
    cell: &VaporCell,
    pops: &GroundPopulations,
    detunings_ghz: &[f64],
) -> Result<Vec<f64>> {
    if detunings_ghz.is_empty() {
        return arg("detuning grid is empty");
    }
    let length_m = cell.length_cm * 1e-2;
    Ok(detunings_ghz
        .iter()
        .map(|&nu| cell.absorption_coefficient(pops, nu) * length_m)
        .collect())
}

/// Transmission `exp(-OD(nu))` on a detuning grid.
pub fn transmission_spectrum(
    cell: &VaporCell,
    pops: &GroundPopulations,
    detunings_ghz: &[f64],
) -> Result<Vec<f64>> {
    Ok(optical_depth_spectrum(cell, pops, detunings_ghz)?
        .into_iter()
        .map(|od| (-od).exp())
        .collect())
}

/// Resonant optical depth `d = n1 n L 3 lambda^2 / (2 pi)`.
///
/// This is the line-centre depth of the pumped transition at its natural
/// width, the quantity that sets the Raman coupling. The Doppler and pressure
/// broadened peak of `OD(nu)` is [`peak_optical_depth`].
pub fn resonant_optical_depth(cell: &VaporCell, pops: &GroundPopulations) -> f64 {
    cell.number_density()
        * pops.n1_fraction
        * cell.length_cm
        * 1e-2
        * cell.line.resonant_cross_section()
}

/// Maximum of the broadened `OD(nu)` over the F=4 manifold.
pub fn peak_optical_depth(cell: &VaporCell, pops: &GroundPopulations) -> f64 {
    let centre = cell.line.manifold_centroid_ghz(Ground::F4);
    let width = voigt::voigt_fwhm(cell.doppler_fwhm_ghz(), cell.lorentz_fwhm_ghz());
    let length_m = cell.length_cm * 1e-2;
    let od = |nu: f64| cell.absorption_coefficient(pops, nu) * length_m;
    // Golden-section search on a bracket around the manifold centroid.
    let (mut a, mut b) = (centre - 2.0 * width, centre + 2.0 * width);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (od(c), od(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-12 * width.max(1e-9) {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = od(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = od(d);
        }
    }
    od(0.5 * (a + b)).max(od(centre))
}
