//! Two-stream canopy with gap-probability hotspot and soil coupling.

use std::f64::consts::FRAC_2_PI;

use super::leaf::LeafOptics;
use super::RtmConfig;
use crate::error::{Error, Result};
use crate::spectral::{ParameterVector, Spectrum};

/// Mean projection of a leaf at `leaf_angle_deg` inclination (uniform azimuth)
/// onto the plane normal to a direction at `zenith_deg`.
pub fn g_function(zenith_deg: f64, leaf_angle_deg: f64) -> Result<f64> {
    if !(0.0..90.0).contains(&zenith_deg) {
        return Err(Error::Geometry(format!(
            "zenith {zenith_deg} deg outside [0, 90)"
        )));
    }
    if !(leaf_angle_deg > 0.0 && leaf_angle_deg < 90.0) {
        return Err(Error::Geometry(format!(
            "leaf angle {leaf_angle_deg} deg outside (0, 90)"
        )));
    }
    let th = zenith_deg.to_radians();
    let tl = leaf_angle_deg.to_radians();
    let base = th.cos() * tl.cos();
    if zenith_deg == 0.0 {
        return Ok(base);
    }
    let x = 1.0 / (th.tan() * tl.tan());
    if x.abs() >= 1.0 {
        return Ok(base);
    }
    let psi = x.acos();
    Ok(base * (1.0 + FRAC_2_PI * (psi.tan() - psi)))
}

/// Zenith after the configured clamp; rejects angles outside `[0, 90)`.
pub(crate) fn clamp_zenith(zenith_deg: f64, cfg: &RtmConfig) -> Result<f64> {
    if !(0.0..90.0).contains(&zenith_deg) {
        return Err(Error::Geometry(format!(
            "zenith {zenith_deg} deg outside [0, 90)"
        )));
    }
    Ok(zenith_deg.min(cfg.max_zenith_deg))
}

/// Sun/view geometry terms shared by every wavelength.
#[derive(Debug, Clone, Copy)]
pub struct CanopyGeometry {
    pub k_s: f64,
    pub k_v: f64,
    /// Sun-view phase angle in radians.
    pub phase: f64,
    pub hotspot_factor: f64,
    /// Joint sun-view gap probability.
    pub p_so: f64,
}

impl CanopyGeometry {
    pub fn new(params: &ParameterVector, cfg: &RtmConfig) -> Result<Self> {
        let ts = clamp_zenith(params.theta_s(), cfg)?;
        let tv = clamp_zenith(params.theta_v(), cfg)?;
        let hspot = params.hspot();
        if !(hspot > 0.0) {
            return Err(Error::Parameter(format!("hotspot must be positive, got {hspot}")));
        }
        let lai = params.lai();
        if !(lai >= 0.0) || !lai.is_finite() {
            return Err(Error::Parameter(format!("LAI must be finite and >= 0, got {lai}")));
        }
        let k_s = g_function(ts, params.lidfa())? / ts.to_radians().cos();
        let k_v = g_function(tv, params.lidfa())? / tv.to_radians().cos();
        let (ts, tv, phi) = (ts.to_radians(), tv.to_radians(), params.phi_rel().to_radians());
        let cos_xi = ts.cos() * tv.cos() + ts.sin() * tv.sin() * phi.cos();
        let phase = cos_xi.clamp(-1.0, 1.0).acos();
        let hotspot_factor = (-phase / hspot).exp();
        let p_so = (-(k_s + k_v - (k_s * k_v).sqrt() * hotspot_factor) * lai).exp();
        Ok(CanopyGeometry {
            k_s,
            k_v,
            phase,
            hotspot_factor,
            p_so,
        })
    }
}

/// Homogeneous two-stream slab: returns `(R_c, T_c)` for absorption `a`,
/// backscatter `b` and optical depth `lai`.
pub fn two_stream(a: f64, b: f64, lai: f64) -> (f64, f64) {
    let gamma = (a * a - b * b).max(0.0).sqrt();
    if gamma < 1e-9 {
        let bl = b * lai;
        return (bl / (1.0 + bl), 1.0 / (1.0 + bl));
    }
    let r_inf = b / (a + gamma);
    let e = (-gamma * lai).exp();
    let r2 = r_inf * r_inf;
    let d = 1.0 - r2 * (e * e);
    (r_inf * (1.0 - e * e) / d, (1.0 - r2) * e / d)
}

/// Canopy reflectance at one wavelength.
#[inline]
pub(crate) fn canopy_sample(
    rho_l: f64,
    tau_l: f64,
    rho_s: f64,
    lai: f64,
    k_d: f64,
    p_so: f64,
) -> f64 {
    let omega = rho_l + tau_l;
    let beta = if omega > 0.0 {
        0.5 + 0.5 * (rho_l - tau_l) / omega
    } else {
        0.5
    };
    let a = k_d * (1.0 - omega * (1.0 - beta));
    let b = k_d * omega * beta;
    let (r_c, t_c) = two_stream(a, b, lai);
    let r_veg = r_c + t_c * t_c * rho_s / (1.0 - r_c * rho_s);
    p_so * rho_s + (1.0 - p_so) * r_veg
}

pub(crate) fn check_reflectance(value: f64, wavelength_nm: f64) -> Result<()> {
    if !(value >= -1e-9 && value <= 1.0 + 1e-9) {
        return Err(Error::Consistency(format!(
            "canopy reflectance {value} at {wavelength_nm} nm outside [0, 1]"
        )));
    }
    Ok(())
}

/// Canopy bidirectional reflectance from leaf optics, soil and geometry.
pub fn canopy_reflectance(
    leaf: &LeafOptics,
    soil: &Spectrum,
    params: &ParameterVector,
    cfg: &RtmConfig,
) -> Result<Spectrum> {
    let grid = *leaf.rho_leaf.grid();
    for s in [&leaf.tau_leaf, soil] {
        if *s.grid() != grid {
            return Err(Error::GridMismatch {
                expected: grid.to_string(),
                found: s.grid().to_string(),
            });
        }
    }
    cfg.validate()?;
    let geom = CanopyGeometry::new(params, cfg)?;
    let lai = params.lai();
    let mut out = Vec::with_capacity(grid.count());
    for i in 0..grid.count() {
        let v = canopy_sample(
            leaf.rho_leaf.values()[i],
            leaf.tau_leaf.values()[i],
            soil.values()[i],
            lai,
            cfg.k_d,
            geom.p_so,
        );
        check_reflectance(v, grid.wavelength(i))?;
        out.push(v);
    }
    Spectrum::new(grid, out)
}

/// Numerical azimuth average of |cos| of the leaf-normal projection; test oracle.
#[cfg(test)]
pub(crate) fn g_function_quadrature(zenith_deg: f64, leaf_angle_deg: f64, steps: usize) -> f64 {
    let th = zenith_deg.to_radians();
    let tl = leaf_angle_deg.to_radians();
    let h = 2.0 * std::f64::consts::PI / steps as f64;
    (0..steps)
        .map(|k| {
            let phi = (k as f64 + 0.5) * h;
            (th.cos() * tl.cos() + th.sin() * tl.sin() * phi.cos()).abs()
        })
        .sum::<f64>()
        / steps as f64
}
