//! Smooth adaptive selection of `γ` from a candidate grid.
//!
//! Each candidate gets the log-weight
//!
//! ```text
//! ln w(γ) = J(γ)/τ_s − κ·softplus(Φ̂(s, γ)) + ln gate(γ)
//! ```
//!
//! and the selected parameter is the weight-normalized convex combination of
//! the candidates. The JRD/CVaR filters enter only through the smooth gate,
//! so the selector stays Lipschitz in the predicted safety loss.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::GammaPair;
use crate::error::{Error, Result};
use crate::forge::{label_episode, Features, GenerationConfig, InitialCondition};
use crate::penn::mlp::{softplus, HeadOutput};
use crate::penn::{cvar, jrd, EnsembleModel, Prediction};
use crate::surrogate::DomainBounds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateGrid {
    pub candidates: Vec<GammaPair>,
}

impl CandidateGrid {
    /// `n × n` uniform grid over `Γ`.
    pub fn uniform(bounds: &DomainBounds, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("candidate grid needs n ≥ 1".into()));
        }
        let at = |i: usize| {
            if n == 1 {
                0.5 * (bounds.gamma_min + bounds.gamma_max)
            } else {
                bounds.gamma_min + (bounds.gamma_max - bounds.gamma_min) * i as f64 / (n - 1) as f64
            }
        };
        let candidates = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| GammaPair::new(at(i), at(j)))
            .collect();
        Ok(Self { candidates })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Coordinate-wise bounding box `(lo, hi)` of the candidates.
    pub fn bounding_box(&self) -> (GammaPair, GammaPair) {
        let mut lo = GammaPair::splat(f64::INFINITY);
        let mut hi = GammaPair::splat(f64::NEG_INFINITY);
        for c in &self.candidates {
            lo = GammaPair::new(lo.g0.min(c.g0), lo.g1.min(c.g1));
            hi = GammaPair::new(hi.g0.max(c.g0), hi.g1.max(c.g1));
        }
        (lo, hi)
    }

    pub fn validate(&self, bounds: &DomainBounds) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidArgument("candidate grid is empty".into()));
        }
        let inside = |g: f64| g >= bounds.gamma_min && g <= bounds.gamma_max;
        if let Some(c) = self.candidates.iter().find(|c| !(inside(c.g0) && inside(c.g1))) {
            return Err(Error::OutOfDomain(format!("candidate {c:?} outside Γ")));
        }
        Ok(())
    }
}

impl Default for CandidateGrid {
    fn default() -> Self {
        Self::uniform(&DomainBounds::default(), 7).expect("default grid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectorParams {
    pub tau_s: f64,
    pub kappa: f64,
    pub jrd_max: f64,
    pub cvar_alpha: f64,
    pub cvar_max: f64,
    /// Gate width as a fraction of each threshold.
    pub gate_width: f64,
}

impl Default for SelectorParams {
    fn default() -> Self {
        Self {
            tau_s: 0.5,
            kappa: 0.5,
            jrd_max: 0.1,
            cvar_alpha: 0.95,
            cvar_max: 1.2,
            gate_width: 0.05,
        }
    }
}

impl SelectorParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && !v.is_nan();
        if positive(self.tau_s)
            && self.kappa >= 0.0
            && positive(self.jrd_max)
            && positive(self.cvar_max)
            && self.cvar_alpha > 0.0
            && self.cvar_alpha < 1.0
            && positive(self.gate_width)
        {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid selector parameters: {self:?}")))
        }
    }
}

/// `J(γ) = γ0 + γ1`.
pub fn aggressiveness(g: GammaPair) -> f64 {
    g.sum()
}

/// `L_M = κ · √2 (γ_max − γ_min)`.
pub fn lipschitz_constant(p: &SelectorParams, bounds: &DomainBounds) -> f64 {
    p.kappa * bounds.gamma_diameter()
}

/// Hard filter verdict and smooth gate of one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub pass: bool,
    pub gate: f64,
    pub log_gate: f64,
}

/// `ln sigmoid((threshold − x)/width)`; an infinite threshold never gates.
fn log_sigmoid_margin(threshold: f64, x: f64, frac: f64) -> f64 {
    if threshold == f64::INFINITY {
        return 0.0;
    }
    let z = (threshold - x) / (frac * threshold.abs());
    -softplus(-z)
}

pub fn gate(jrd: f64, cvar: f64, p: &SelectorParams) -> Gate {
    let log_gate = log_sigmoid_margin(p.jrd_max, jrd, p.gate_width)
        + log_sigmoid_margin(p.cvar_max, cvar, p.gate_width);
    Gate {
        pass: jrd <= p.jrd_max && cvar <= p.cvar_max,
        gate: log_gate.exp(),
        log_gate,
    }
}

/// Gates for per-candidate `(jrd, cvar)` pairs.
pub fn filter_mask(uncertainty: &[(f64, f64)], p: &SelectorParams) -> Vec<Gate> {
    uncertainty.iter().map(|&(j, c)| gate(j, c, p)).collect()
}

/// Normalized weights from pooled predictions and log-gates (log-sum-exp
/// stabilized).
pub fn smooth_weights(
    grid: &CandidateGrid,
    phi_hat: &[f64],
    log_gates: &[f64],
    p: &SelectorParams,
) -> Vec<f64> {
    assert_eq!(grid.len(), phi_hat.len());
    assert_eq!(grid.len(), log_gates.len());
    let logw: Vec<f64> = grid
        .candidates
        .iter()
        .zip(phi_hat)
        .zip(log_gates)
        .map(|((g, &f), &lg)| aggressiveness(*g) / p.tau_s - p.kappa * softplus(f) + lg)
        .collect();
    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Convex combination of the candidates, clamped to their bounding box so
/// rounding can never leave `Γ`.
pub fn combine(grid: &CandidateGrid, weights: &[f64]) -> GammaPair {
    let (mut g0, mut g1) = (0.0, 0.0);
    for (c, w) in grid.candidates.iter().zip(weights) {
        g0 += w * c.g0;
        g1 += w * c.g1;
    }
    let (lo, hi) = grid.bounding_box();
    GammaPair::new(g0.clamp(lo.g0, hi.g0), g1.clamp(lo.g1, hi.g1))
}

/// Selection from precomputed pooled means and gates.
pub fn select_with(
    grid: &CandidateGrid,
    phi_hat: &[f64],
    log_gates: &[f64],
    p: &SelectorParams,
) -> GammaPair {
    combine(grid, &smooth_weights(grid, phi_hat, log_gates, p))
}

/// Source of per-candidate safety-loss predictions.
pub trait SafetyPredictor: Sync {
    fn predict(&self, s: &Features, gamma: GammaPair) -> Result<Prediction>;
}

impl SafetyPredictor for EnsembleModel {
    fn predict(&self, s: &Features, gamma: GammaPair) -> Result<Prediction> {
        Ok(EnsembleModel::predict(self, s, gamma))
    }
}

/// True `Φ` from a canonical simulated episode; a point mass with no
/// epistemic or aleatoric spread.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    pub generation: GenerationConfig,
}

impl SafetyPredictor for OraclePredictor {
    fn predict(&self, s: &Features, gamma: GammaPair) -> Result<Prediction> {
        let label = label_episode(&InitialCondition::canonical(s), gamma, &self.generation)?;
        Ok(Prediction::from_members(vec![HeadOutput {
            mean: [label.phi, label.td],
            var: [0.0, 0.0],
        }]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub gamma: GammaPair,
    pub phi_hat: f64,
    pub jrd: f64,
    pub cvar: f64,
    pub gate: Gate,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub gamma: GammaPair,
    pub scores: Vec<CandidateScore>,
}

pub fn smooth_select<P: SafetyPredictor + ?Sized>(
    s: &Features,
    predictor: &P,
    grid: &CandidateGrid,
    p: &SelectorParams,
) -> Result<Selection> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("candidate grid is empty".into()));
    }
    let preds: Vec<Prediction> = grid
        .candidates
        .par_iter()
        .map(|g| predictor.predict(s, *g))
        .collect::<Result<_>>()?;
    let mut phi_hat = Vec::with_capacity(preds.len());
    let mut unc = Vec::with_capacity(preds.len());
    for pr in &preds {
        if !pr.phi_mean().is_finite() {
            return Err(Error::NonFinite("predicted safety loss"));
        }
        phi_hat.push(pr.phi_mean());
        unc.push((jrd(pr), cvar(pr, p.cvar_alpha)?));
    }
    let gates = filter_mask(&unc, p);
    let log_gates: Vec<f64> = gates.iter().map(|g| g.log_gate).collect();
    let weights = smooth_weights(grid, &phi_hat, &log_gates, p);
    let scores = grid
        .candidates
        .iter()
        .enumerate()
        .map(|(i, g)| CandidateScore {
            gamma: *g,
            phi_hat: phi_hat[i],
            jrd: unc[i].0,
            cvar: unc[i].1,
            gate: gates[i],
            weight: weights[i],
        })
        .collect();
    Ok(Selection {
        gamma: combine(grid, &weights),
        scores,
    })
}
