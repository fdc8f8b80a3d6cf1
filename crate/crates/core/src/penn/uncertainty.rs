//! Epistemic (Jensen–Rényi) and aleatoric (CVaR) measures on the Φ output.

use statrs::distribution::{ContinuousCDF, Normal};

use super::ensemble::Prediction;
use crate::error::{Error, Result};

/// `∫ N(x; m1, v1) N(x; m2, v2) dx = N(m1; m2, v1 + v2)`.
pub fn gaussian_overlap(m1: f64, v1: f64, m2: f64, v2: f64) -> f64 {
    let s = v1 + v2;
    let d = m1 - m2;
    (-0.5 * d * d / s).exp() / (2.0 * std::f64::consts::PI * s).sqrt()
}

/// Order-2 Jensen–Rényi divergence of equally weighted Gaussians
/// `(mean, var)`:
///
/// ```text
/// JRD = −ln ∫p_mix² + ln( mean_i ∫p_i² )
/// ```
///
/// The member term averages the collision probabilities `∫p_i²` before the
/// log rather than averaging their entropies. This keeps the value
/// non-negative for any variance ratio; it is zero exactly when all members
/// coincide.
pub fn jrd_gaussians(members: &[(f64, f64)]) -> f64 {
    if members.windows(2).all(|w| w[0] == w[1]) {
        return 0.0;
    }
    let k = members.len() as f64;
    let mut mix = 0.0;
    for (i, &(mi, vi)) in members.iter().enumerate() {
        for &(mj, vj) in &members[i + 1..] {
            mix += 2.0 * gaussian_overlap(mi, vi, mj, vj);
        }
    }
    let mut self_power = 0.0;
    for &(_, v) in members {
        // ∫N(x; m, v)² dx = 1/√(4πv)
        self_power += 1.0 / (4.0 * std::f64::consts::PI * v).sqrt();
    }
    mix = (mix + self_power) / (k * k);
    let jrd = (self_power / k).ln() - mix.ln();
    jrd.max(0.0)
}

pub fn jrd(pred: &Prediction) -> f64 {
    let members: Vec<(f64, f64)> = pred.members.iter().map(|m| (m.mean[0], m.var[0])).collect();
    jrd_gaussians(&members)
}

/// Upper-tail CVaR of `N(mean, sd²)` at confidence `alpha`.
pub fn cvar_gaussian(mean: f64, sd: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("CVaR level must be in (0, 1), got {alpha}")));
    }
    let q = Normal::standard().inverse_cdf(alpha);
    let pdf = (-0.5 * q * q).exp() / (2.0 * std::f64::consts::PI).sqrt();
    Ok(mean + sd * pdf / (1.0 - alpha))
}

pub fn cvar(pred: &Prediction, alpha: f64) -> Result<f64> {
    cvar_gaussian(pred.phi_mean(), pred.phi_sd(), alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_members_zero() {
        assert_eq!(jrd_gaussians(&[(1.5, 0.2); 3]), 0.0);
        assert_eq!(jrd_gaussians(&[(-4.0, 7.0); 2]), 0.0);
    }

    #[test]
    fn separated_members_positive() {
        assert!(jrd_gaussians(&[(0.0, 1.0), (5.0, 1.0)]) > 0.5);
    }

    #[test]
    fn cvar_limits() {
        assert_eq!(cvar_gaussian(2.0, 0.0, 0.9).unwrap(), 2.0);
        assert!(cvar_gaussian(0.0, 1.0, 1.0).is_err());
        let mut prev = f64::NEG_INFINITY;
        for a in [0.01, 0.1, 0.5, 0.9, 0.99] {
            let c = cvar_gaussian(1.0, 2.0, a).unwrap();
            assert!(c >= 1.0 && c > prev);
            prev = c;
        }
        // standard normal, α = 0.95: φ(1.6449)/0.05 ≈ 2.0627
        assert!((cvar_gaussian(0.0, 1.0, 0.95).unwrap() - 2.062_712_5).abs() < 1e-6);
    }
}
