use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{HeadOutput, MlpWeights, N_OUTPUTS};
use crate::dynamics::GammaPair;
use crate::error::{Error, Result};
use crate::forge::{Features, LabeledSample};

pub const N_INPUTS: usize = 5;
pub const MODEL_VERSION: u32 = 1;

/// Per-feature affine scaling of inputs and targets, fitted on a train split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub in_mean: [f64; N_INPUTS],
    pub in_std: [f64; N_INPUTS],
    pub out_mean: [f64; N_OUTPUTS],
    pub out_std: [f64; N_OUTPUTS],
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

impl Normalizer {
    pub fn identity() -> Self {
        Self {
            in_mean: [0.0; N_INPUTS],
            in_std: [1.0; N_INPUTS],
            out_mean: [0.0; N_OUTPUTS],
            out_std: [1.0; N_OUTPUTS],
        }
    }

    pub fn fit(samples: &[LabeledSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("cannot fit normalizer on no samples".into()));
        }
        let mut n = Self::identity();
        for i in 0..N_INPUTS {
            (n.in_mean[i], n.in_std[i]) = mean_std(samples.iter().map(move |s| s.model_input()[i]));
        }
        for k in 0..N_OUTPUTS {
            (n.out_mean[k], n.out_std[k]) = mean_std(samples.iter().map(move |s| s.targets()[k]));
        }
        Ok(n)
    }

    pub fn input(&self, x: &[f64; N_INPUTS]) -> [f64; N_INPUTS] {
        std::array::from_fn(|i| (x[i] - self.in_mean[i]) / self.in_std[i])
    }

    pub fn denormalize_input(&self, z: &[f64; N_INPUTS]) -> [f64; N_INPUTS] {
        std::array::from_fn(|i| z[i] * self.in_std[i] + self.in_mean[i])
    }

    pub fn target(&self, y: &[f64; N_OUTPUTS]) -> [f64; N_OUTPUTS] {
        std::array::from_fn(|k| (y[k] - self.out_mean[k]) / self.out_std[k])
    }

    /// Map a normalized-space head output to original units.
    pub fn output(&self, h: &HeadOutput) -> HeadOutput {
        HeadOutput {
            mean: std::array::from_fn(|k| h.mean[k] * self.out_std[k] + self.out_mean[k]),
            var: std::array::from_fn(|k| h.var[k] * self.out_std[k] * self.out_std[k]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub members: Vec<MlpWeights>,
    pub normalizer: Normalizer,
    /// Digest of the training configuration and data that produced the model.
    pub train_digest: String,
    pub seed: u64,
}

/// Member and pooled predictive moments in original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub members: Vec<HeadOutput>,
    pub pooled_mean: [f64; N_OUTPUTS],
    pub pooled_var: [f64; N_OUTPUTS],
}

impl Prediction {
    /// Gaussian-mixture moments of equally weighted members.
    pub fn from_members(members: Vec<HeadOutput>) -> Self {
        assert!(!members.is_empty());
        let k = members.len() as f64;
        let mut mean = [0.0; N_OUTPUTS];
        let mut second = [0.0; N_OUTPUTS];
        for m in &members {
            for o in 0..N_OUTPUTS {
                mean[o] += m.mean[o] / k;
                second[o] += (m.var[o] + m.mean[o] * m.mean[o]) / k;
            }
        }
        let var = std::array::from_fn(|o| {
            let mvar = members.iter().map(|m| m.var[o]).sum::<f64>() / k;
            (second[o] - mean[o] * mean[o]).max(mvar)
        });
        Self {
            members,
            pooled_mean: mean,
            pooled_var: var,
        }
    }

    pub fn phi_mean(&self) -> f64 {
        self.pooled_mean[0]
    }

    pub fn phi_sd(&self) -> f64 {
        self.pooled_var[0].sqrt()
    }
}

impl EnsembleModel {
    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn n_params(&self) -> usize {
        self.members.iter().map(|m| m.n_params()).sum()
    }

    pub fn predict_input(&self, x: &[f64; N_INPUTS]) -> Prediction {
        let z = self.normalizer.input(x);
        Prediction::from_members(
            self.members
                .iter()
                .map(|m| self.normalizer.output(&m.forward(&z)))
                .collect(),
        )
    }

    pub fn predict(&self, s: &Features, gamma: GammaPair) -> Prediction {
        self.predict_input(&s.model_input(gamma))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            version: MODEL_VERSION,
            architecture: self.members[0].sizes.clone(),
            model: self.clone(),
        };
        fs::write(path, serde_json::to_vec(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let corrupt = |reason: String| Error::CorruptArtifact {
            path: path.to_path_buf(),
            reason,
        };
        let file: ModelFile =
            serde_json::from_slice(&fs::read(path)?).map_err(|e| corrupt(e.to_string()))?;
        if file.version != MODEL_VERSION {
            return Err(corrupt(format!("unsupported version {}", file.version)));
        }
        let m = file.model;
        if m.members.first().map(|w| &w.sizes) != Some(&file.architecture) {
            return Err(corrupt("member does not match the architecture descriptor".into()));
        }
        m.check().map_err(corrupt)?;
        Ok(m)
    }

    /// Structural integrity: at least two finite members of one architecture.
    pub fn check(&self) -> std::result::Result<(), String> {
        if self.members.len() < 2 {
            return Err("ensemble needs at least two members".into());
        }
        let arch = &self.members[0].sizes;
        for w in &self.members {
            if &w.sizes != arch || w.params.len() != super::mlp::param_count(&w.sizes) || !w.is_finite() {
                return Err("member does not match the architecture descriptor".into());
            }
        }
        if arch.first() != Some(&N_INPUTS) || arch.last() != Some(&(2 * super::mlp::N_OUTPUTS)) {
            return Err(format!("unexpected architecture {arch:?}"));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    architecture: Vec<usize>,
    model: EnsembleModel,
}

/// Member-averaged Gaussian NLL of the safety-loss head for one sample, in
/// original units.
pub fn safety_nll(model: &EnsembleModel, s: &LabeledSample) -> f64 {
    let p = model.predict_input(&s.model_input());
    let y = s.targets();
    p.members
        .iter()
        .map(|m| super::mlp::head_nll(m, &y, 0))
        .sum::<f64>()
        / p.members.len() as f64
}
