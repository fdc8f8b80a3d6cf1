//! Pipeline configuration (TOML) and per-stage digests.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::BenchConfig;
use crate::digest::{combine, config_digest};
use crate::error::{Error, Result};
use crate::forge::GenerationConfig;
use crate::penn::TrainConfig;
use crate::selector::{CandidateGrid, SelectorParams};
use crate::tracin::{GradientScope, LooConfig, ScoreMix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_samples: usize,
    pub train_frac: f64,
    /// Test-label quantile above which a sample counts as unsafe.
    pub thr_quantile: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_samples: 1500,
            train_frac: 0.7,
            thr_quantile: 0.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributionConfig {
    /// Removal fraction of the curated model used downstream.
    pub rho: f64,
    pub rho_sweep: Vec<f64>,
    pub mix: ScoreMix,
    /// Also curate with influence-only and self-influence-only scores at `rho`.
    pub ablation: bool,
    pub scope: GradientScope,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        Self {
            rho: 0.10,
            rho_sweep: vec![0.0, 0.05, 0.10, 0.15, 0.20],
            mix: ScoreMix::COMBINED,
            ablation: true,
            scope: GradientScope::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorConfig {
    #[serde(flatten)]
    pub params: SelectorParams,
    /// Candidates per axis of the uniform grid over `Γ`.
    pub grid_n: usize,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            params: SelectorParams::default(),
            grid_n: 7,
        }
    }
}

/// User overrides of estimated envelope fields.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvelopeOverrides {
    pub h_max: Option<f64>,
    pub hdot_max: Option<f64>,
    pub lgh_max: Option<f64>,
    pub v_psi: Option<f64>,
    pub l_e: Option<f64>,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertificateConfig {
    pub envelope: EnvelopeOverrides,
    /// Minimum oracle margin; estimated from the covering grid when absent.
    pub delta_min: Option<f64>,
    /// Margin at which the covering-probability bound is evaluated.
    pub covering_delta_min: f64,
    /// Ensemble retrains used to fit the error scale `σ`.
    pub sigma_retrains: usize,
    /// Points per axis of the `(d, v, Δθ)` state grid.
    pub state_grid_n: usize,
    /// Number of evenly spaced error levels in the nesting ladder.
    pub ladder_len: usize,
}

impl Default for CertificateConfig {
    fn default() -> Self {
        Self {
            envelope: EnvelopeOverrides::default(),
            delta_min: None,
            covering_delta_min: 10.0,
            sigma_retrains: 10,
            state_grid_n: 8,
            ladder_len: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    /// Episode seeds `0..seeds`; seed 0 is the nominal start.
    pub seeds: u64,
    /// Any of `single`, `simple`, `complex`.
    pub scenarios: Vec<String>,
    pub fixed_low: f64,
    pub fixed_high: f64,
    pub fixed_low_in: f64,
    pub fixed_high_in: f64,
    /// Scenarios that also run the true-loss selector.
    pub oracle_scenarios: Vec<String>,
    pub goal_tolerance: f64,
    pub deadlock_window: f64,
    pub deadlock_speed: f64,
    /// Seeds whose trajectories are exported.
    pub trajectory_seeds: u64,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            seeds: 20,
            scenarios: vec!["single".into(), "simple".into(), "complex".into()],
            fixed_low: 0.01,
            fixed_high: 0.35,
            fixed_low_in: 0.5,
            fixed_high_in: 2.5,
            oracle_scenarios: vec!["simple".into()],
            goal_tolerance: 0.3,
            deadlock_window: 2.0,
            deadlock_speed: 0.05,
            trajectory_seeds: 1,
        }
    }
}

pub const SCENARIO_NAMES: [&str; 3] = ["single", "simple", "complex"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub generation: GenerationConfig,
    pub train: TrainConfig,
    pub attribution: AttributionConfig,
    pub selector: SelectorConfig,
    pub certificate: CertificateConfig,
    pub bench: BenchSection,
    pub loo: LooConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            data: DataConfig::default(),
            generation: GenerationConfig::default(),
            train: TrainConfig::default(),
            attribution: AttributionConfig::default(),
            selector: SelectorConfig::default(),
            certificate: CertificateConfig::default(),
            bench: BenchSection::default(),
            loo: LooConfig::default(),
        }
    }
}

/// Digests of every pipeline stage; each covers its own settings and all
/// upstream stages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageDigests {
    pub generate: String,
    pub train: String,
    pub attribute: String,
    pub retrain: String,
    pub certify: String,
    pub simulate: String,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.generation.validate()?;
        self.train.validate()?;
        self.selector.params.validate()?;
        let d = &self.data;
        if d.n_samples < 10 {
            return bad(format!("need at least 10 samples, got {}", d.n_samples));
        }
        if !(d.train_frac > 0.0 && d.train_frac < 1.0) {
            return bad(format!("train_frac must be in (0, 1), got {}", d.train_frac));
        }
        if !(0.0..1.0).contains(&d.thr_quantile) {
            return bad(format!("thr_quantile must be in [0, 1), got {}", d.thr_quantile));
        }
        let a = &self.attribution;
        let in_range = |r: f64| (0.0..1.0).contains(&r);
        if !in_range(a.rho) || !a.rho_sweep.iter().all(|&r| in_range(r)) {
            return bad("removal fractions must be in [0, 1)".into());
        }
        if a.rho_sweep.is_empty() {
            return bad("rho_sweep must not be empty".into());
        }
        if !(a.mix.safety.is_finite() && a.mix.self_influence.is_finite()) {
            return bad("score mix weights must be finite".into());
        }
        if self.selector.grid_n == 0 {
            return bad("selector grid needs at least one candidate per axis".into());
        }
        let c = &self.certificate;
        if c.sigma_retrains < 2 || c.state_grid_n < 2 || c.ladder_len < 2 {
            return bad("certificate needs ≥ 2 retrains, grid points per axis and ladder levels".into());
        }
        let b = &self.bench;
        if b.seeds == 0 || b.scenarios.is_empty() {
            return bad("bench needs seeds and scenarios".into());
        }
        for s in b.scenarios.iter().chain(&b.oracle_scenarios) {
            if !SCENARIO_NAMES.contains(&s.as_str()) {
                return bad(format!("unknown scenario {s:?}"));
            }
        }
        let fixed = [b.fixed_low, b.fixed_high, b.fixed_low_in, b.fixed_high_in];
        if !fixed.iter().all(|&g| g > 0.0 && g.is_finite()) {
            return bad("fixed γ values must be positive".into());
        }
        if !(b.goal_tolerance > 0.0 && b.deadlock_window > 0.0 && b.deadlock_speed >= 0.0) {
            return bad("invalid goal tolerance or deadlock settings".into());
        }
        Ok(())
    }

    pub fn candidate_grid(&self) -> Result<CandidateGrid> {
        CandidateGrid::uniform(&self.generation.domain, self.selector.grid_n)
    }

    /// Closed-loop settings; plant, nominal controller and domain follow the
    /// data-generation setup.
    pub fn bench_config(&self) -> Result<BenchConfig> {
        Ok(BenchConfig {
            nominal: self.generation.nominal,
            bounds: self.generation.bounds,
            domain: self.generation.domain,
            selector: self.selector.params,
            grid: self.candidate_grid()?,
            goal_tolerance: self.bench.goal_tolerance,
            deadlock_window: self.bench.deadlock_window,
            deadlock_speed: self.bench.deadlock_speed,
        })
    }

    pub fn digests(&self) -> StageDigests {
        let seed = self.seed.to_string();
        let generate = combine(&[
            &seed,
            &config_digest(&self.data.n_samples),
            &config_digest(&self.generation),
        ]);
        let train = combine(&[&generate, &config_digest(&self.data.train_frac), &config_digest(&self.train)]);
        let attribute = combine(&[
            &train,
            &config_digest(&self.data.thr_quantile),
            &config_digest(&self.attribution),
        ]);
        let retrain = attribute.clone();
        let certify = combine(&[&retrain, &config_digest(&self.selector), &config_digest(&self.certificate)]);
        let simulate = combine(&[&retrain, &config_digest(&self.selector), &config_digest(&self.bench)]);
        StageDigests {
            generate,
            train,
            attribute,
            retrain,
            certify,
            simulate,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml_string().unwrap();
        let back = PipelineConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_document_fills_defaults() {
        let cfg = PipelineConfig::from_toml_str("seed = 3\n[data]\nn_samples = 200\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.data.n_samples, 200);
        assert_eq!(cfg.train, TrainConfig::default());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(matches!(
            PipelineConfig::from_toml_str("[data]\nn_sample = 3\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            PipelineConfig::from_toml_str("[attribution]\nrho = 1.5\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            PipelineConfig::from_toml_str("[bench]\nscenarios = [\"maze\"]\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn digests_track_upstream_changes_only() {
        let a = PipelineConfig::default();
        let da = a.digests();
        let mut b = a.clone();
        b.bench.seeds = 5;
        let db = b.digests();
        assert_eq!(da.retrain, db.retrain);
        assert_eq!(da.certify, db.certify);
        assert_ne!(da.simulate, db.simulate);
        let mut c = a.clone();
        c.seed = 8;
        let dc = c.digests();
        assert_ne!(da.generate, dc.generate);
        assert_ne!(da.simulate, dc.simulate);
        let mut d = a.clone();
        d.train.epochs = 10;
        let dd = d.digests();
        assert_eq!(da.generate, dd.generate);
        assert_ne!(da.train, dd.train);
        assert_ne!(da.certify, dd.certify);
    }
}
