//! Plate-stack leaf model.

use super::tables::CoefficientTable;
use crate::error::{Error, Result};
use crate::spectral::{ParameterVector, Spectrum};

/// Directional-hemispherical leaf reflectance and transmittance.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafOptics {
    pub rho_leaf: Spectrum,
    pub tau_leaf: Spectrum,
}

/// Reflectance and transmittance of one symmetric layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layer {
    pub rho: f64,
    pub tau: f64,
}

impl Layer {
    /// Single absorbing plate with interface reflectance `r` and internal transmittance `t`.
    pub fn plate(r: f64, t: f64) -> Layer {
        let denom = 1.0 - r * r * t * t;
        let one_minus_r2 = (1.0 - r) * (1.0 - r);
        Layer {
            rho: r + one_minus_r2 * r * t * t / denom,
            tau: one_minus_r2 * t / denom,
        }
    }

    /// `self` on top of `below`, inter-reflections summed.
    pub fn add(self, below: Layer) -> Layer {
        let denom = 1.0 - self.rho * below.rho;
        Layer {
            rho: self.rho + self.tau * self.tau * below.rho / denom,
            tau: self.tau * below.tau / denom,
        }
    }

    /// `plates` identical copies stacked by repeated adding.
    pub fn stack(self, plates: u32) -> Layer {
        debug_assert!(plates >= 1);
        (1..plates).fold(self, |acc, _| acc.add(self))
    }
}

/// Per-layer absorption coefficient at sample `i`.
#[inline]
pub(crate) fn layer_absorption(p: &ParameterVector, c: &CoefficientTable, i: usize) -> f64 {
    (p.cab() * c.k_ab[i]
        + p.car() * c.k_ar[i]
        + p.cant() * c.k_ant[i]
        + p.cbrown() * c.k_brown[i]
        + p.cw() * c.k_w[i]
        + p.cm() * c.k_m[i])
        / p.n_struct()
}

/// Leaf layer for real `n`: linear blend of the `floor(n)` and `ceil(n)` stacks.
#[inline]
pub(crate) fn leaf_layer(n: f64, r: f64, k: f64) -> Layer {
    let plate = Layer::plate(r, (-k).exp());
    let lo = n.floor();
    let frac = n - lo;
    let lower = plate.stack(lo as u32);
    if frac == 0.0 {
        return lower;
    }
    let upper = lower.add(plate);
    Layer {
        rho: lower.rho + frac * (upper.rho - lower.rho),
        tau: lower.tau + frac * (upper.tau - lower.tau),
    }
}

pub(crate) fn check_n(p: &ParameterVector) -> Result<()> {
    let n = p.n_struct();
    if !(n >= 1.0) || !n.is_finite() {
        return Err(Error::Parameter(format!(
            "leaf structure N must be finite and >= 1, got {n}"
        )));
    }
    Ok(())
}

/// Leaf reflectance and transmittance for `params` on the table's grid.
pub fn leaf_optics(params: &ParameterVector, coeffs: &CoefficientTable) -> Result<LeafOptics> {
    check_n(params)?;
    let n = coeffs.grid.count();
    let mut rho = Vec::with_capacity(n);
    let mut tau = Vec::with_capacity(n);
    for i in 0..n {
        let layer = leaf_layer(
            params.n_struct(),
            coeffs.r_if[i],
            layer_absorption(params, coeffs, i),
        );
        rho.push(layer.rho);
        tau.push(layer.tau);
    }
    Ok(LeafOptics {
        rho_leaf: Spectrum::new(coeffs.grid, rho)?,
        tau_leaf: Spectrum::new(coeffs.grid, tau)?,
    })
}
