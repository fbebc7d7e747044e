//! Physical constants and the embedded caesium data file.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::Deserialize;

/// Boltzmann constant, J/K.
pub const K_B: f64 = 1.380649e-23;
/// Speed of light, m/s.
pub const C: f64 = 299_792_458.0;
/// Atomic mass unit, kg.
pub const AMU: f64 = 1.660_539_066_60e-27;
/// One torr in pascal.
pub const TORR: f64 = 101_325.0 / 760.0;

/// Raw text of the shipped constants file.
pub const CESIUM_DATA: &str = include_str!("../data/cesium.toml");

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataFile {
    pub schema_version: u32,
    pub species: Species,
    pub vapor_pressure: VaporPressure,
    pub lines: BTreeMap<String, LineData>,
    pub buffer_gases: BTreeMap<String, BufferData>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Species {
    pub name: String,
    pub mass_amu: f64,
    #[serde(rename = "ground_hyperfine_splitting_GHz")]
    pub ground_hyperfine_splitting_ghz: f64,
    #[serde(rename = "ground_shift_GHz")]
    pub ground_shift_ghz: PerGround<f64>,
    pub ground_degeneracy: PerGround<u32>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerGround<T> {
    #[serde(rename = "F4")]
    pub f4: T,
    #[serde(rename = "F3")]
    pub f3: T,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PressureBranch {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl PressureBranch {
    pub fn log10_torr(&self, t: f64) -> f64 {
        self.a + self.b / t + self.c * t + self.d * t.log10()
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaporPressure {
    pub source: String,
    #[serde(rename = "valid_min_K")]
    pub valid_min_k: f64,
    #[serde(rename = "valid_max_K")]
    pub valid_max_k: f64,
    #[serde(rename = "melting_point_K")]
    pub melting_point_k: f64,
    pub solid: PressureBranch,
    pub liquid: PressureBranch,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineData {
    pub wavelength_nm: f64,
    pub lifetime_ns: f64,
    pub degeneracy_ratio: f64,
    pub components: Vec<ComponentData>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentData {
    pub ground: String,
    pub excited_f: u8,
    #[serde(rename = "excited_shift_GHz")]
    pub excited_shift_ghz: f64,
    pub relative_strength: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BufferData {
    #[serde(rename = "broadening_MHz_per_Torr")]
    pub broadening_mhz_per_torr: f64,
    pub d0_cm2_per_s: f64,
    pub mass_amu: f64,
    #[serde(rename = "quench_cross_section_A2")]
    pub quench_cross_section_a2: BTreeMap<String, f64>,
}

/// Parse a constants file with the documented schema.
pub fn parse_data_file(text: &str) -> crate::Result<DataFile> {
    let data: DataFile = toml::from_str(text).map_err(|e| crate::Error::Parse(e.to_string()))?;
    if data.schema_version != 1 {
        return Err(crate::Error::Parse(format!(
            "unsupported constants schema version {}",
            data.schema_version
        )));
    }
    Ok(data)
}

/// The shipped caesium data, parsed once.
pub fn cesium() -> &'static DataFile {
    static DATA: OnceLock<DataFile> = OnceLock::new();
    DATA.get_or_init(|| parse_data_file(CESIUM_DATA).expect("embedded cesium.toml is valid"))
}
