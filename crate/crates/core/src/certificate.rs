//! Analytic safety constants and bounds: Lipschitz constants of the CBF
//! margin in `γ`, the prediction-error budget, the sampling-period
//! condition, the covering-number probability bound, certified sets and the
//! QP feasibility check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forge::{Features, SweepStats};
use crate::surrogate::DomainBounds;

/// Where a constant came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Analytic,
    Estimated,
    User,
}

/// Bounds on barrier quantities over the operating domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateEnvelope {
    pub h_max: f64,
    pub hdot_max: f64,
    pub lgh_max: f64,
    pub u_max: f64,
    /// Bound on `|ψ̇|`.
    pub v_psi: f64,
    /// Lipschitz bound of the prediction error.
    pub l_e: f64,
    /// Sub-Gaussian parameter of the prediction error.
    pub sigma: f64,
}

/// Inflation applied to sweep maxima.
pub const ENVELOPE_INFLATION: f64 = 1.1;

impl StateEnvelope {
    /// Envelope from data-generation sweep maxima, inflated by 10%.
    /// `l_e` and `sigma` are filled in separately.
    pub fn from_sweep(stats: &SweepStats, u_max: f64) -> Self {
        Self {
            h_max: ENVELOPE_INFLATION * stats.h_max,
            hdot_max: ENVELOPE_INFLATION * stats.hdot_max,
            lgh_max: ENVELOPE_INFLATION * stats.lgh_max,
            u_max,
            v_psi: ENVELOPE_INFLATION * stats.psi_dot_max,
            l_e: 0.0,
            sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.h_max,
            self.hdot_max,
            self.lgh_max,
            self.u_max,
            self.v_psi,
            self.l_e,
            self.sigma,
        ];
        if fields.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("envelope fields must be finite and ≥ 0: {self:?}")))
        }
    }
}

/// `L_ψ = 2|ḣ|_max + 2γ_max|h|_max + |h|_max`.
pub fn lipschitz_psi(env: &StateEnvelope, bounds: &DomainBounds) -> f64 {
    2.0 * env.hdot_max + 2.0 * bounds.gamma_max * env.h_max + env.h_max
}

/// `L_Ψ = 2(|ḣ|_max + ‖L_g h‖_∞ ū + γ_max |h|_max)`.
#[allow(non_snake_case)]
pub fn lipschitz_Psi(env: &StateEnvelope, bounds: &DomainBounds) -> f64 {
    2.0 * (env.hdot_max + env.lgh_max * env.u_max + bounds.gamma_max * env.h_max)
}

/// Prediction-error budget `ε* = δ_min / (L_ψ L_M)`.
pub fn safety_budget(delta_min: f64, l_psi: f64, l_m: f64) -> Result<f64> {
    if !(delta_min > 0.0 && l_psi > 0.0 && l_m > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "safety budget needs positive δ_min, L_ψ, L_M (got {delta_min}, {l_psi}, {l_m})"
        )));
    }
    Ok(delta_min / (l_psi * l_m))
}

/// Margin required for an error level: `δ_req(ε) = L_ψ L_M ε`.
pub fn delta_req(eps: f64, l_psi: f64, l_m: f64) -> f64 {
    l_psi * l_m * eps
}

/// Largest sampling period `Δt = (δ_min − L_ψ L_M ε) / V_ψ`.
pub fn sampling_bound(delta_min: f64, eps: f64, l_psi: f64, l_m: f64, v_psi: f64) -> Result<f64> {
    if !(v_psi > 0.0) {
        return Err(Error::InvalidArgument(format!("V_ψ must be positive, got {v_psi}")));
    }
    let slack = delta_min - delta_req(eps, l_psi, l_m);
    if slack < 0.0 {
        return Err(Error::Vacuous(format!(
            "degraded margin δ_min − L_ψ L_M ε = {slack:.6} < 0"
        )));
    }
    Ok(slack / v_psi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoveringBound {
    /// Covering number bound `(diam/r)^n`.
    pub m: f64,
    /// `max(0, 1 − 2M|Γ_cand| e^{−(ε − L_e r)²/(2σ²)})`.
    pub probability: f64,
    /// The unclamped expression was negative.
    pub vacuous: bool,
}

/// Uniform-error probability bound from an `r`-covering of the domain.
pub fn covering_probability(
    eps: f64,
    r: f64,
    env: &StateEnvelope,
    n_dim: u32,
    n_candidates: usize,
    diam_op: f64,
) -> Result<CoveringBound> {
    if !(r > 0.0 && diam_op > 0.0) {
        return Err(Error::InvalidArgument(format!("covering radius and diameter must be positive (r={r}, diam={diam_op})")));
    }
    let gap = eps - env.l_e * r;
    if !(gap > 0.0) {
        return Err(Error::Vacuous(format!("ε = {eps} ≤ L_e r = {}", env.l_e * r)));
    }
    let m = (diam_op / r).powi(n_dim as i32).max(1.0);
    let tail = if env.sigma > 0.0 {
        (-gap * gap / (2.0 * env.sigma * env.sigma)).exp()
    } else {
        0.0
    };
    let raw = 1.0 - 2.0 * m * n_candidates as f64 * tail;
    Ok(CoveringBound {
        m,
        probability: raw.max(0.0),
        vacuous: raw <= 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifiedSet {
    pub threshold: f64,
    pub mask: Vec<bool>,
    pub fraction: f64,
}

/// States whose oracle margin is positive and at least `L_ψ L_M ε`.
pub fn certified_set(oracle_margins: &[f64], eps: f64, l_psi: f64, l_m: f64) -> CertifiedSet {
    let threshold = delta_req(eps, l_psi, l_m);
    let mask: Vec<bool> = oracle_margins.iter().map(|&m| m > 0.0 && m >= threshold).collect();
    let n = mask.iter().filter(|&&b| b).count();
    CertifiedSet {
        threshold,
        fraction: if mask.is_empty() { 0.0 } else { n as f64 / mask.len() as f64 },
        mask,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityCheck {
    pub pass: bool,
    pub inf_mu: f64,
    pub required: f64,
    /// `inf μ − L_Ψ L_M ε`.
    pub slack: f64,
}

/// Recursive-feasibility condition `L_Ψ L_M ε < inf μ`.
pub fn qp_feasibility_check(margins_mu: &[f64], eps: f64, l_big_psi: f64, l_m: f64) -> FeasibilityCheck {
    let inf_mu = margins_mu.iter().copied().fold(f64::INFINITY, f64::min);
    let required = l_big_psi * l_m * eps;
    FeasibilityCheck {
        pass: required < inf_mu,
        inf_mu,
        required,
        slack: inf_mu - required,
    }
}

/// Lower bound on `δ_min` from margins on an `r`-covering grid:
/// `min_j ψ_j − L_ψ L_M L_Φ r`.
pub fn oracle_margin_bound(margins: &[f64], l_psi: f64, l_m: f64, l_phi_true: f64, r: f64) -> f64 {
    let min = margins.iter().copied().fold(f64::INFINITY, f64::min);
    min - l_psi * l_m * l_phi_true * r
}

/// Largest sampled difference quotient `|f(x) − f(y)| / ‖x − y‖` over all
/// pairs with distinct inputs.
pub fn max_difference_quotient(points: &[([f64; 5], f64)]) -> f64 {
    let mut best = 0.0f64;
    for (i, (xi, fi)) in points.iter().enumerate() {
        for (xj, fj) in &points[i + 1..] {
            let dist = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if dist > 1e-12 {
                best = best.max((fi - fj).abs() / dist);
            }
        }
    }
    best
}

/// Operating-domain grid over `(d, v, Δθ)` with `n` points per axis.
pub fn state_grid(d: (f64, f64), v: (f64, f64), dtheta: (f64, f64), n: usize) -> Vec<Features> {
    let axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
        if n <= 1 {
            vec![0.5 * (lo + hi)]
        } else {
            (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
        }
    };
    let (ds, vs, ts) = (axis(d), axis(v), axis(dtheta));
    let mut out = Vec::with_capacity(ds.len() * vs.len() * ts.len());
    for &d in &ds {
        for &v in &vs {
            for &t in &ts {
                out.push(Features { d, v, dtheta: t });
            }
        }
    }
    out
}

/// A named constant with its provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constant {
    pub value: f64,
    pub provenance: Provenance,
}

impl Constant {
    pub fn analytic(value: f64) -> Self {
        Self {
            value,
            provenance: Provenance::Analytic,
        }
    }

    pub fn estimated(value: f64) -> Self {
        Self {
            value,
            provenance: Provenance::Estimated,
        }
    }

    pub fn user(value: f64) -> Self {
        Self {
            value,
            provenance: Provenance::User,
        }
    }
}
