//! Checkpoint-based training-data attribution against the safety-critical
//! test loss, plus the curation scores built from it.
//! `loo_validate` compares the first-order scores with actual retraining.
//!
//! Attribution works on the safety-loss head: `ℓ(z; w)` is the Gaussian NLL
//! of the Φ prediction. `τ_safety` is oriented as a *harm* score, the
//! first-order estimate of `R(D) − R(D \ z)`:
//!
//! ```text
//! τ_safety(z) = −Σ_k η_k ⟨∇ℓ(z; w_k), mean_t ∇ℓ(z_t; w_k)⟩
//! ```
//!
//! so a positive value means training on `z` raised the unsafe-set risk and
//! removing it is predicted to lower that risk.

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forge::{unsafe_subset, Dataset, LabeledSample};
use crate::penn::train::{train_with_normalizer, Checkpoint, Optimizer, TrainConfig};
use crate::penn::{safety_nll, MlpWeights, Normalizer, SAFETY_HEAD};

/// Which parameters enter the gradient inner products.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientScope {
    #[default]
    Full,
    /// Output layer only; much cheaper for large sweeps.
    LastLayer,
}

/// Gradient of the safety-head NLL of `z` (normalized with `norm`) w.r.t.
/// every weight of `member`, in the flat parameter order of [`MlpWeights`].
pub fn per_sample_gradient(member: &MlpWeights, norm: &Normalizer, z: &LabeledSample) -> Vec<f64> {
    scoped_gradient(member, norm, z, GradientScope::Full)
}

pub fn scoped_gradient(
    member: &MlpWeights,
    norm: &Normalizer,
    z: &LabeledSample,
    scope: GradientScope,
) -> Vec<f64> {
    let x = norm.input(&z.model_input());
    let y = norm.target(&z.targets());
    match scope {
        GradientScope::Full => member.sample_grad(&x, &y, SAFETY_HEAD),
        GradientScope::LastLayer => member.last_layer_grad(&x, &y, SAFETY_HEAD),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Raw TracIn values of one training sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawInfluence {
    pub id: u64,
    pub tau_safety: f64,
    pub tau_self: f64,
}

/// `τ_safety` and `τ_self` of every training sample, summed over checkpoints
/// with weight `η_k` and averaged over ensemble members.
pub fn influence_scores(
    train: &Dataset,
    checkpoints: &[Checkpoint],
    unsafe_set: &Dataset,
    norm: &Normalizer,
) -> Result<Vec<RawInfluence>> {
    influence_scores_scoped(train, checkpoints, unsafe_set, norm, GradientScope::Full)
}

pub fn influence_scores_scoped(
    train: &Dataset,
    checkpoints: &[Checkpoint],
    unsafe_set: &Dataset,
    norm: &Normalizer,
    scope: GradientScope,
) -> Result<Vec<RawInfluence>> {
    if unsafe_set.is_empty() {
        return Err(Error::InvalidArgument("empty unsafe set".into()));
    }
    if checkpoints.is_empty() {
        return Err(Error::InvalidArgument("no checkpoints".into()));
    }
    let mut out: Vec<RawInfluence> = train
        .samples
        .iter()
        .map(|s| RawInfluence {
            id: s.id,
            tau_safety: 0.0,
            tau_self: 0.0,
        })
        .collect();
    for ck in checkpoints {
        let k = ck.weights.len() as f64;
        for member in &ck.weights {
            let target = mean_gradient(member, norm, &unsafe_set.samples, scope);
            let contrib: Vec<(f64, f64)> = train
                .samples
                .par_iter()
                .map(|z| {
                    let g = scoped_gradient(member, norm, z, scope);
                    (dot(&g, &target), dot(&g, &g))
                })
                .collect();
            for (r, (s, n2)) in out.iter_mut().zip(contrib) {
                r.tau_safety -= ck.eta() * s / k;
                r.tau_self += ck.eta() * n2 / k;
            }
        }
    }
    Ok(out)
}

fn mean_gradient(
    member: &MlpWeights,
    norm: &Normalizer,
    samples: &[LabeledSample],
    scope: GradientScope,
) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::new();
    for z in samples {
        let g = scoped_gradient(member, norm, z, scope);
        if acc.is_empty() {
            acc = vec![0.0; g.len()];
        }
        for (a, g) in acc.iter_mut().zip(g) {
            *a += g;
        }
    }
    let n = samples.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Convenience: `τ_safety` of one sample.
pub fn tau_safety(
    z: &LabeledSample,
    checkpoints: &[Checkpoint],
    unsafe_set: &Dataset,
    norm: &Normalizer,
) -> Result<f64> {
    let one = unsafe_set.with_samples(vec![*z]);
    Ok(influence_scores(&one, checkpoints, unsafe_set, norm)?[0].tau_safety)
}

/// Convenience: `τ_self` of one sample.
pub fn tau_self(z: &LabeledSample, checkpoints: &[Checkpoint], norm: &Normalizer) -> f64 {
    let mut total = 0.0;
    for ck in checkpoints {
        let k = ck.weights.len() as f64;
        for member in &ck.weights {
            let g = per_sample_gradient(member, norm, z);
            total += ck.eta() * dot(&g, &g) / k;
        }
    }
    total
}

/// Mixing weights of the curation score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreMix {
    pub safety: f64,
    pub self_influence: f64,
}

impl ScoreMix {
    pub const COMBINED: ScoreMix = ScoreMix {
        safety: 0.7,
        self_influence: 0.3,
    };
    pub const INFLUENCE_ONLY: ScoreMix = ScoreMix {
        safety: 1.0,
        self_influence: 0.0,
    };
    pub const SELF_ONLY: ScoreMix = ScoreMix {
        safety: 0.0,
        self_influence: 1.0,
    };
}

impl Default for ScoreMix {
    fn default() -> Self {
        Self::COMBINED
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfluenceRecord {
    pub id: u64,
    pub tau_safety: f64,
    pub tau_self: f64,
    pub score: f64,
}

/// z-scores over the population; a constant column maps to zeros.
pub fn z_normalize(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    if values.is_empty() {
        return Vec::new();
    }
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd > 0.0 && sd.is_finite() {
        values.iter().map(|v| (v - mean) / sd).collect()
    } else {
        vec![0.0; values.len()]
    }
}

pub fn score_records(raw: &[RawInfluence], mix: ScoreMix) -> Vec<InfluenceRecord> {
    let zs = z_normalize(&raw.iter().map(|r| r.tau_safety).collect::<Vec<_>>());
    let zo = z_normalize(&raw.iter().map(|r| r.tau_self).collect::<Vec<_>>());
    raw.iter()
        .zip(zs.iter().zip(&zo))
        .map(|(r, (a, b))| InfluenceRecord {
            id: r.id,
            tau_safety: r.tau_safety,
            tau_self: r.tau_self,
            score: mix.safety * a + mix.self_influence * b,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurationResult {
    /// Removed ids in removal order (highest score first).
    pub removed_ids: Vec<u64>,
    pub kept: Dataset,
    pub rho: f64,
}

/// Remove the `round(ρ·N)` highest-scoring samples; ties go to the smaller id.
pub fn curate(ds: &Dataset, records: &[InfluenceRecord], rho: f64) -> Result<CurationResult> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("removal fraction must be in [0, 1), got {rho}")));
    }
    let known: HashSet<u64> = ds.ids().into_iter().collect();
    if records.len() != ds.len() || records.iter().any(|r| !known.contains(&r.id)) {
        return Err(Error::InvalidArgument("influence records do not match the dataset".into()));
    }
    let n_remove = (rho * ds.len() as f64).round() as usize;
    let mut order: Vec<&InfluenceRecord> = records.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    let removed_ids: Vec<u64> = order[..n_remove].iter().map(|r| r.id).collect();
    let removed: HashSet<u64> = removed_ids.iter().copied().collect();
    Ok(CurationResult {
        kept: ds.without(&removed),
        removed_ids,
        rho,
    })
}

pub fn write_influence_csv(path: &Path, records: &[InfluenceRecord], removed: &[u64]) -> Result<()> {
    let removed: HashSet<u64> = removed.iter().copied().collect();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "tau_safety", "tau_self", "score", "removed"])?;
    for r in records {
        w.write_record([
            r.id.to_string(),
            r.tau_safety.to_string(),
            r.tau_self.to_string(),
            r.score.to_string(),
            u8::from(removed.contains(&r.id)).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_influence_csv(path: &Path) -> Result<(Vec<InfluenceRecord>, Vec<u64>)> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut rd = csv::Reader::from_path(path)?;
    let mut records = Vec::new();
    let mut removed = Vec::new();
    for row in rd.deserialize::<(u64, f64, f64, f64, u8)>() {
        let (id, tau_safety, tau_self, score, rm) = row?;
        records.push(InfluenceRecord {
            id,
            tau_safety,
            tau_self,
            score,
        });
        if rm == 1 {
            removed.push(id);
        }
    }
    Ok((records, removed))
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

/// Setup of the leave-one-out check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LooConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub thr_quantile: f64,
    pub hidden: usize,
    pub ensemble_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for LooConfig {
    fn default() -> Self {
        Self {
            n_train: 100,
            n_test: 80,
            thr_quantile: 0.75,
            hidden: 16,
            ensemble_size: 2,
            epochs: 3,
            lr: 5e-4,
            seed: 11,
        }
    }
}

impl LooConfig {
    pub fn train_config(&self, lr: f64) -> TrainConfig {
        TrainConfig {
            hidden: vec![self.hidden],
            ensemble_size: self.ensemble_size,
            epochs: self.epochs,
            batch_size: 1,
            lr,
            optimizer: Optimizer::Sgd,
            n_checkpoints: self.epochs,
        }
    }
}

/// TracIn vs actual retraining at one learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooRun {
    pub lr: f64,
    pub ids: Vec<u64>,
    pub predicted: Vec<f64>,
    /// `R(D) − R(D \ z_i)` from full retraining.
    pub actual: Vec<f64>,
    pub spearman: f64,
    pub mean_abs_residual: f64,
    /// Largest `|actual − predicted| / mean_k ‖∇ℓ(z_i; w_k)‖²`.
    pub residual_per_grad_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    pub n_unsafe: usize,
    pub base: LooRun,
    pub half: LooRun,
    /// `mean |E| at lr` over `mean |E| at lr/2`.
    pub residual_ratio: f64,
}

fn unsafe_risk(model: &crate::penn::EnsembleModel, unsafe_set: &Dataset) -> f64 {
    unsafe_set.samples.iter().map(|s| safety_nll(model, s)).sum::<f64>() / unsafe_set.len() as f64
}

fn loo_run(
    train: &Dataset,
    unsafe_set: &Dataset,
    norm: &Normalizer,
    cfg: &LooConfig,
    lr: f64,
) -> Result<LooRun> {
    let tcfg = cfg.train_config(lr);
    let (full, ckpts) = train_with_normalizer(train, &tcfg, cfg.seed, norm.clone())?;
    let r_full = unsafe_risk(&full, unsafe_set);
    let raw = influence_scores(train, &ckpts, unsafe_set, norm)?;
    let actual: Vec<f64> = train
        .samples
        .par_iter()
        .map(|z| {
            let removed: HashSet<u64> = [z.id].into_iter().collect();
            let (m, _) = train_with_normalizer(&train.without(&removed), &tcfg, cfg.seed, norm.clone())?;
            Ok(r_full - unsafe_risk(&m, unsafe_set))
        })
        .collect::<Result<_>>()?;
    let predicted: Vec<f64> = raw.iter().map(|r| r.tau_safety).collect();
    let n_ck = (ckpts.len() * ckpts[0].weights.len()) as f64;
    let mut mean_abs = 0.0;
    let mut worst_ratio: f64 = 0.0;
    for (i, z) in train.samples.iter().enumerate() {
        let e = (actual[i] - predicted[i]).abs();
        mean_abs += e / train.len() as f64;
        let g2: f64 = ckpts
            .iter()
            .flat_map(|c| c.weights.iter())
            .map(|w| {
                let g = per_sample_gradient(w, norm, z);
                dot(&g, &g)
            })
            .sum::<f64>()
            / n_ck;
        if g2 > 0.0 {
            worst_ratio = worst_ratio.max(e / g2);
        }
    }
    Ok(LooRun {
        lr,
        ids: train.ids(),
        spearman: spearman(&predicted, &actual),
        predicted,
        actual,
        mean_abs_residual: mean_abs,
        residual_per_grad_sq: worst_ratio,
    })
}

/// Full leave-one-out retraining on a small network at `lr` and `lr/2`.
pub fn loo_validate(pool: &Dataset, cfg: &LooConfig) -> Result<LooReport> {
    if pool.len() < cfg.n_train + cfg.n_test {
        return Err(Error::InvalidArgument(format!(
            "need {} samples for the leave-one-out check, got {}",
            cfg.n_train + cfg.n_test,
            pool.len()
        )));
    }
    let train = pool.with_samples(pool.samples[..cfg.n_train].to_vec());
    let test = pool.with_samples(pool.samples[cfg.n_train..cfg.n_train + cfg.n_test].to_vec());
    let unsafe_set = unsafe_subset(&test, cfg.thr_quantile)?;
    let norm = Normalizer::fit(&train.samples)?;
    let base = loo_run(&train, &unsafe_set, &norm, cfg, cfg.lr)?;
    let half = loo_run(&train, &unsafe_set, &norm, cfg, cfg.lr / 2.0)?;
    Ok(LooReport {
        n_unsafe: unsafe_set.len(),
        residual_ratio: base.mean_abs_residual / half.mean_abs_residual,
        base,
        half,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: u64, score: f64) -> InfluenceRecord {
        InfluenceRecord {
            id,
            tau_safety: 0.0,
            tau_self: 0.0,
            score,
        }
    }

    #[test]
    fn z_normalize_constant_and_scale() {
        assert_eq!(z_normalize(&[2.0, 2.0, 2.0]), vec![0.0; 3]);
        let z = z_normalize(&[1.0, 2.0, 3.0]);
        assert!((z.iter().sum::<f64>()).abs() < 1e-12);
        let z2 = z_normalize(&[10.0, 20.0, 30.0]);
        for (a, b) in z.iter().zip(&z2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn spearman_reference() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        // ties: ranks (0.5, 0.5, 2) vs (0, 1, 2)
        let r = spearman(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]);
        assert!((r - 0.866_025_403_784_438_6).abs() < 1e-12);
    }

    #[test]
    fn score_mix_arithmetic() {
        let raw = [
            RawInfluence { id: 0, tau_safety: 1.0, tau_self: 3.0 },
            RawInfluence { id: 1, tau_safety: 3.0, tau_self: 1.0 },
        ];
        let r = score_records(&raw, ScoreMix::COMBINED);
        assert!((r[0].score - (-0.7 + 0.3)).abs() < 1e-12);
        assert!((r[1].score - (0.7 - 0.3)).abs() < 1e-12);
    }

    #[test]
    fn curate_zero_and_ties() {
        let ds = Dataset {
            samples: Vec::new(),
            seed: 0,
            config_hash: String::new(),
        };
        let r = curate(&ds, &[], 0.0).unwrap();
        assert!(r.removed_ids.is_empty());
        assert!(curate(&ds, &[], 1.0).is_err());
        let records = [rec(3, 1.0), rec(1, 1.0), rec(2, 0.5), rec(0, 2.0)];
        let mut order: Vec<&InfluenceRecord> = records.iter().collect();
        order.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
        assert_eq!(order.iter().map(|r| r.id).collect::<Vec<_>>(), vec![0, 1, 3, 2]);
    }
}
