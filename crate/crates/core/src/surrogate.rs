//! Safety-loss surrogate
//!
//! ```text
//! Φ = λ1 e^{−λ2 ψ} / (β1 e^{−β2 (cos Δθ + 1)} d² + 1)
//! ```
//!
//! together with its denominator bounds over the operating domain, the
//! two-sided Φ ↔ ψ sandwich and the ψ-error inversion.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl SurrogateParams {
    /// `λ1 = λ2 = 1` with `(β1, β2)` solved from target denominator bounds
    /// over `d ∈ [d_min, d_max]`.
    pub fn calibrated(bounds: &DomainBounds, target_dmin: f64, target_dmax: f64) -> Result<Self> {
        let beta1 = (target_dmax - 1.0) / (bounds.d_max * bounds.d_max);
        let ratio = (target_dmin - 1.0) / (beta1 * bounds.d_min * bounds.d_min);
        if !(beta1 > 0.0) || !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "cannot calibrate β from D_min={target_dmin}, D_max={target_dmax}"
            )));
        }
        Ok(Self {
            lambda1: 1.0,
            lambda2: 1.0,
            beta1,
            beta2: -0.5 * ratio.ln(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.lambda1, self.lambda2, self.beta1, self.beta2]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "surrogate parameters must be positive: {self:?}"
            )))
        }
    }
}

impl Default for SurrogateParams {
    fn default() -> Self {
        Self::calibrated(&DomainBounds::default(), 1.08, 26.3).expect("default calibration")
    }
}

/// Operating domain: obstacle distance and the CBF parameter box `Γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainBounds {
    pub d_min: f64,
    pub d_max: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
}

impl Default for DomainBounds {
    fn default() -> Self {
        Self {
            d_min: 0.65,
            d_max: 2.5,
            gamma_min: 0.5,
            gamma_max: 2.5,
        }
    }
}

impl DomainBounds {
    pub fn validate(&self) -> Result<()> {
        if self.d_min > 0.0
            && self.d_max > self.d_min
            && self.gamma_min > 0.0
            && self.gamma_max > self.gamma_min
        {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("inconsistent domain bounds: {self:?}")))
        }
    }

    pub fn clamp_distance(&self, d: f64) -> f64 {
        d.clamp(self.d_min, self.d_max)
    }

    /// `diam(Γ) = √2 (γ_max − γ_min)`.
    pub fn gamma_diameter(&self) -> f64 {
        std::f64::consts::SQRT_2 * (self.gamma_max - self.gamma_min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiInputs {
    pub d: f64,
    pub delta_theta: f64,
    pub psi: f64,
}

impl PhiInputs {
    pub fn check(&self, b: &DomainBounds) -> Result<()> {
        if !self.psi.is_finite() {
            return Err(Error::NonFinite("ψ"));
        }
        if !(self.d >= b.d_min && self.d <= b.d_max) {
            return Err(Error::OutOfDomain(format!(
                "d = {} not in [{}, {}]",
                self.d, b.d_min, b.d_max
            )));
        }
        if !(self.delta_theta >= 0.0 && self.delta_theta <= PI) {
            return Err(Error::OutOfDomain(format!(
                "Δθ = {} not in [0, π]",
                self.delta_theta
            )));
        }
        Ok(())
    }
}

// The association order below is shared with `denominator_bounds` so the
// sandwich holds exactly in floating point, not just up to rounding.
fn denominator(d: f64, delta_theta: f64, p: &SurrogateParams) -> f64 {
    let angular = (-p.beta2 * (delta_theta.cos() + 1.0)).exp();
    p.beta1 * (angular * (d * d)) + 1.0
}

fn numerator(psi: f64, p: &SurrogateParams) -> f64 {
    p.lambda1 * (-p.lambda2 * psi).exp()
}

pub fn phi(inp: &PhiInputs, p: &SurrogateParams, b: &DomainBounds) -> Result<f64> {
    inp.check(b)?;
    Ok(numerator(inp.psi, p) / denominator(inp.d, inp.delta_theta, p))
}

/// `(D_min, D_max)`.
pub fn denominator_bounds(b: &DomainBounds, p: &SurrogateParams) -> (f64, f64) {
    let dmin = p.beta1 * ((-2.0 * p.beta2).exp() * (b.d_min * b.d_min)) + 1.0;
    let dmax = p.beta1 * (1.0 * (b.d_max * b.d_max)) + 1.0;
    (dmin, dmax)
}

/// `(λ1 e^{−λ2ψ} / D_max, λ1 e^{−λ2ψ} / D_min)`.
pub fn two_sided_bounds(psi: f64, b: &DomainBounds, p: &SurrogateParams) -> (f64, f64) {
    let (dmin, dmax) = denominator_bounds(b, p);
    let num = numerator(psi, p);
    (num / dmax, num / dmin)
}

/// `(1/λ2) ln(1 + D_max ε_Φ / (λ1 e^{−λ2 ψ̂_max}))`.
///
/// Valid whenever `ψ̂_max` upper-bounds the *true* margin; see
/// [`psi_error_bound`] for the composition that guarantees this.
pub fn invert_psi_error(
    eps_phi: f64,
    psi_max_hat: f64,
    b: &DomainBounds,
    p: &SurrogateParams,
) -> Result<f64> {
    if !(eps_phi >= 0.0) {
        return Err(Error::InvalidArgument(format!("ε_Φ must be ≥ 0, got {eps_phi}")));
    }
    if eps_phi == 0.0 {
        return Ok(0.0);
    }
    let (_, dmax) = denominator_bounds(b, p);
    let floor = numerator(psi_max_hat, p);
    Ok((dmax * eps_phi / floor).ln_1p() / p.lambda2)
}

/// Upper bound on ψ implied by an observed loss: from `Φ ≤ λ1 e^{−λ2ψ} / D_min`,
/// `ψ ≤ −(1/λ2) ln(Φ D_min / λ1)`.
pub fn psi_upper_from_phi(phi_hat: f64, b: &DomainBounds, p: &SurrogateParams) -> Result<f64> {
    if !(phi_hat > 0.0) {
        return Err(Error::InvalidArgument(format!("Φ̂ must be > 0, got {phi_hat}")));
    }
    let (dmin, _) = denominator_bounds(b, p);
    Ok(-(phi_hat * dmin / p.lambda1).ln() / p.lambda2)
}

/// Bound on `|ψ̂ − ψ|` given a prediction `Φ̂` with `|Φ̂ − Φ| ≤ ε_Φ`.
///
/// `ψ̂_max` is taken from the smallest loss consistent with the prediction,
/// `Φ̂ − ε_Φ`; when that is not positive the bound is `+∞`.
pub fn psi_error_bound(
    phi_hat: f64,
    eps_phi: f64,
    b: &DomainBounds,
    p: &SurrogateParams,
) -> Result<f64> {
    let lowest = phi_hat - eps_phi;
    if eps_phi == 0.0 {
        return Ok(0.0);
    }
    if !(lowest > 0.0) {
        return Ok(f64::INFINITY);
    }
    let psi_max = psi_upper_from_phi(lowest, b, p)?;
    invert_psi_error(eps_phi, psi_max, b, p)
}
