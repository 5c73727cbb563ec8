//! Forward radiative transfer: parameters to canopy reflectance.
//!
//! [`ForwardModel`] is the pluggable interface the LUT builder and the tile
//! simulator call. [`ReferenceRtm`] implements it with a plate-stack leaf
//! model feeding a two-stream canopy with a gap-probability hotspot term.

mod canopy;
mod leaf;
mod tables;

pub use canopy::{canopy_reflectance, g_function, two_stream, CanopyGeometry};
pub use leaf::{leaf_optics, Layer, LeafOptics};
pub use tables::{
    generate_reference_coefficients, generate_reference_soils, CoefficientTable, SoilLibrary,
    COEFFICIENT_HEADER,
};

use crate::error::{Error, Result};
use crate::spectral::{ParameterVector, SpectralGrid, Spectrum};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtmConfig {
    /// Diffuse extinction per unit LAI.
    pub k_d: f64,
    /// Zenith angles above this are clamped to it.
    pub max_zenith_deg: f64,
}

impl Default for RtmConfig {
    fn default() -> Self {
        RtmConfig {
            k_d: 1.0,
            max_zenith_deg: 85.0,
        }
    }
}

impl RtmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_d > 0.0 && self.k_d.is_finite()) {
            return Err(Error::Config(format!("k_d must be positive, got {}", self.k_d)));
        }
        if !(self.max_zenith_deg > 0.0 && self.max_zenith_deg < 90.0) {
            return Err(Error::Config(format!(
                "max_zenith_deg must be in (0, 90), got {}",
                self.max_zenith_deg
            )));
        }
        Ok(())
    }
}

/// Anything that maps a parameter vector to a reflectance spectrum.
///
/// Implementations must be pure: the same input gives bit-identical output
/// from any thread.
pub trait ForwardModel: Sync {
    fn grid(&self) -> &SpectralGrid;

    fn simulate(&self, params: &ParameterVector) -> Result<Spectrum>;

    /// Bytes identifying the model's tables and settings; feeds LUT digests.
    fn fingerprint(&self) -> Vec<u8> {
        Vec::new()
    }
}

/// Reference leaf + canopy model with its coefficient and soil tables.
#[derive(Debug, Clone)]
pub struct ReferenceRtm {
    pub coeffs: CoefficientTable,
    pub soils: SoilLibrary,
    pub cfg: RtmConfig,
}

impl ReferenceRtm {
    pub fn new(coeffs: CoefficientTable, soils: SoilLibrary, cfg: RtmConfig) -> Result<Self> {
        coeffs.validate()?;
        cfg.validate()?;
        if soils.grid() != &coeffs.grid {
            return Err(Error::GridMismatch {
                expected: coeffs.grid.to_string(),
                found: soils.grid().to_string(),
            });
        }
        Ok(ReferenceRtm { coeffs, soils, cfg })
    }

    /// Reference coefficients and soils for `regions` on the canonical grid.
    pub fn reference(regions: &[&str]) -> Result<Self> {
        let grid = SpectralGrid::canonical();
        ReferenceRtm::new(
            generate_reference_coefficients(&grid),
            generate_reference_soils(&grid, regions)?,
            RtmConfig::default(),
        )
    }
}

impl ForwardModel for ReferenceRtm {
    fn grid(&self) -> &SpectralGrid {
        &self.coeffs.grid
    }

    fn simulate(&self, params: &ParameterVector) -> Result<Spectrum> {
        forward(params, &self.coeffs, &self.soils, &self.cfg)
    }

    fn fingerprint(&self) -> Vec<u8> {
        let c = &self.coeffs;
        let mut out = Vec::new();
        let columns = [&c.k_ab, &c.k_ar, &c.k_ant, &c.k_brown, &c.k_w, &c.k_m, &c.r_if];
        for v in columns.into_iter().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for i in 0..self.soils.len() {
            out.extend_from_slice(self.soils.names()[i].as_bytes());
            for v in self.soils.spectrum(i).into_iter().flat_map(|s| s.values()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.cfg.k_d.to_le_bytes());
        out.extend_from_slice(&self.cfg.max_zenith_deg.to_le_bytes());
        out
    }
}

/// Leaf optics then canopy reflectance over the selected soil.
///
/// Fused per wavelength; produces the same values as
/// `canopy_reflectance(&leaf_optics(..)?, soil, ..)`.
pub fn forward(
    params: &ParameterVector,
    coeffs: &CoefficientTable,
    soils: &SoilLibrary,
    cfg: &RtmConfig,
) -> Result<Spectrum> {
    let soil = soils.by_selector(params.soil_index())?;
    let grid = coeffs.grid;
    if *soil.grid() != grid {
        return Err(Error::GridMismatch {
            expected: grid.to_string(),
            found: soil.grid().to_string(),
        });
    }
    leaf::check_n(params)?;
    let geom = CanopyGeometry::new(params, cfg)?;
    let lai = params.lai();
    let n = params.n_struct();
    let mut out = Vec::with_capacity(grid.count());
    for i in 0..grid.count() {
        let layer = leaf::leaf_layer(n, coeffs.r_if[i], leaf::layer_absorption(params, coeffs, i));
        let v = canopy::canopy_sample(layer.rho, layer.tau, soil.values()[i], lai, cfg.k_d, geom.p_so);
        canopy::check_reflectance(v, grid.wavelength(i))?;
        out.push(v);
    }
    Spectrum::new(grid, out)
}
