use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ensemble::{EnsembleModel, Normalizer, N_INPUTS};
use super::mlp::{MlpWeights, Workspace, N_OUTPUTS};
use crate::digest::{combine, config_digest};
use crate::error::{Error, Result};
use crate::forge::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub ensemble_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub n_checkpoints: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![40, 80, 120, 40],
            ensemble_size: 3,
            epochs: 200,
            batch_size: 32,
            lr: 1e-4,
            optimizer: Optimizer::adam(),
            n_checkpoints: 10,
        }
    }
}

impl TrainConfig {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![N_INPUTS];
        s.extend(&self.hidden);
        s.push(2 * N_OUTPUTS);
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.ensemble_size < 2 {
            return bad("ensemble needs at least two members");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.n_checkpoints == 0 || self.n_checkpoints > self.epochs {
            return bad("need 1 ≤ checkpoints ≤ epochs");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layers must be nonempty");
        }
        Ok(())
    }

    /// Epochs after which a checkpoint is taken, evenly spaced and ending
    /// at the final epoch.
    pub fn checkpoint_epochs(&self) -> Vec<usize> {
        let n = self.n_checkpoints;
        (1..=n)
            .map(|k| ((k * self.epochs) as f64 / n as f64).round() as usize)
            .collect()
    }
}

/// Member snapshots at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub lr: f64,
    /// Number of epochs since the previous checkpoint.
    pub span: usize,
    pub weights: Vec<MlpWeights>,
}

impl Checkpoint {
    /// Step weight of this checkpoint in the TracIn sum.
    pub fn eta(&self) -> f64 {
        self.lr * self.span as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberState {
    pub weights: MlpWeights,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: u64,
}

/// Everything needed to resume a run bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub members: Vec<MemberState>,
    pub checkpoints: Vec<Checkpoint>,
    pub loss_history: Vec<f64>,
}

/// Mixes a 64-bit value (SplitMix64 finalizer).
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sort key of a sample within an epoch. It depends only on the sample id,
/// so dropping samples keeps the relative order of the rest.
fn order_key(seed: u64, member: usize, epoch: usize, id: u64) -> u64 {
    mix64(mix64(mix64(seed ^ mix64(member as u64)) ^ epoch as u64) ^ id)
}

struct Row {
    id: u64,
    x: [f64; N_INPUTS],
    y: [f64; N_OUTPUTS],
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: EnsembleModel,
    pub checkpoints: Vec<Checkpoint>,
    /// Member-averaged mean training loss per epoch.
    pub loss_history: Vec<f64>,
}

pub struct Trainer {
    cfg: TrainConfig,
    seed: u64,
    normalizer: Normalizer,
    rows: Vec<Row>,
    digest: String,
    state: TrainState,
}

pub fn train_digest(ds: &Dataset, cfg: &TrainConfig, seed: u64, normalizer: &Normalizer) -> String {
    combine(&[
        &ds.config_hash,
        &config_digest(&ds.ids()),
        &config_digest(cfg),
        &config_digest(normalizer),
        &seed.to_string(),
    ])
}

impl Trainer {
    /// Fresh run; `normalizer` defaults to one fitted on `ds`.
    pub fn new(ds: &Dataset, cfg: &TrainConfig, seed: u64, normalizer: Option<Normalizer>) -> Result<Self> {
        cfg.validate()?;
        if ds.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        let normalizer = match normalizer {
            Some(n) => n,
            None => Normalizer::fit(&ds.samples)?,
        };
        let sizes = cfg.sizes();
        let members = (0..cfg.ensemble_size)
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(k as u64 + 1);
                let weights = MlpWeights::init(&sizes, &mut rng);
                let n = weights.n_params();
                MemberState {
                    weights,
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                    steps: 0,
                }
            })
            .collect();
        let state = TrainState {
            epoch: 0,
            members,
            checkpoints: Vec::new(),
            loss_history: Vec::new(),
        };
        Self::with_state(ds, cfg, seed, normalizer, state)
    }

    pub fn resume(ds: &Dataset, cfg: &TrainConfig, seed: u64, normalizer: Normalizer, state: TrainState) -> Result<Self> {
        cfg.validate()?;
        if state.members.len() != cfg.ensemble_size {
            return Err(Error::InvalidArgument("resume state has the wrong ensemble size".into()));
        }
        Self::with_state(ds, cfg, seed, normalizer, state)
    }

    fn with_state(ds: &Dataset, cfg: &TrainConfig, seed: u64, normalizer: Normalizer, state: TrainState) -> Result<Self> {
        let rows = ds
            .samples
            .iter()
            .map(|s| Row {
                id: s.id,
                x: normalizer.input(&s.model_input()),
                y: normalizer.target(&s.targets()),
            })
            .collect();
        Ok(Self {
            digest: train_digest(ds, cfg, seed, &normalizer),
            cfg: cfg.clone(),
            seed,
            normalizer,
            rows,
            state,
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.epoch >= self.cfg.epochs
    }

    /// Run up to `n` further epochs.
    pub fn run_epochs(&mut self, n: usize) -> Result<()> {
        let ckpt_epochs = self.cfg.checkpoint_epochs();
        for _ in 0..n {
            if self.is_done() {
                break;
            }
            let epoch = self.state.epoch;
            let cfg = &self.cfg;
            let rows = &self.rows;
            let seed = self.seed;
            let losses: Vec<Result<f64>> = self
                .state
                .members
                .par_iter_mut()
                .enumerate()
                .map(|(k, ms)| run_member_epoch(ms, rows, cfg, seed, k, epoch))
                .collect();
            let mut total = 0.0;
            for l in losses {
                total += l?;
            }
            self.state.loss_history.push(total / self.cfg.ensemble_size as f64);
            self.state.epoch += 1;
            if let Some(pos) = ckpt_epochs.iter().position(|&e| e == self.state.epoch) {
                let prev = if pos == 0 { 0 } else { ckpt_epochs[pos - 1] };
                self.state.checkpoints.push(Checkpoint {
                    epoch: self.state.epoch,
                    lr: self.cfg.lr,
                    span: self.state.epoch - prev,
                    weights: self.state.members.iter().map(|m| m.weights.clone()).collect(),
                });
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<(EnsembleModel, Vec<Checkpoint>)> {
        self.finish_full().map(|o| (o.model, o.checkpoints))
    }

    /// Run the remaining epochs and keep the per-epoch loss history too.
    pub fn finish_full(mut self) -> Result<TrainOutput> {
        let remaining = self.cfg.epochs.saturating_sub(self.state.epoch);
        self.run_epochs(remaining)?;
        let model = EnsembleModel {
            members: self.state.members.into_iter().map(|m| m.weights).collect(),
            normalizer: self.normalizer,
            train_digest: self.digest,
            seed: self.seed,
        };
        Ok(TrainOutput {
            model,
            checkpoints: self.state.checkpoints,
            loss_history: self.state.loss_history,
        })
    }
}

fn run_member_epoch(
    ms: &mut MemberState,
    rows: &[Row],
    cfg: &TrainConfig,
    seed: u64,
    member: usize,
    epoch: usize,
) -> Result<f64> {
    let mut order: Vec<(u64, usize)> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| (order_key(seed, member, epoch, r.id), i))
        .collect();
    order.sort_unstable();
    let n = ms.weights.n_params();
    let mut grad = vec![0.0; n];
    let mut ws = Workspace::new(&ms.weights.sizes);
    let mut epoch_loss = 0.0;
    for batch in order.chunks(cfg.batch_size) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let scale = 1.0 / batch.len() as f64;
        for &(_, i) in batch {
            let r = &rows[i];
            epoch_loss += ms.weights.accumulate_grad(&r.x, &r.y, [scale; N_OUTPUTS], &mut grad, &mut ws);
        }
        if !epoch_loss.is_finite() {
            return Err(Error::Diverged { epoch, member });
        }
        ms.steps += 1;
        match cfg.optimizer {
            Optimizer::Sgd => {
                for (p, g) in ms.weights.params.iter_mut().zip(&grad) {
                    *p -= cfg.lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let t = ms.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for i in 0..n {
                    let g = grad[i];
                    ms.m[i] = beta1 * ms.m[i] + (1.0 - beta1) * g;
                    ms.v[i] = beta2 * ms.v[i] + (1.0 - beta2) * g * g;
                    let mh = ms.m[i] / c1;
                    let vh = ms.v[i] / c2;
                    ms.weights.params[i] -= cfg.lr * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
    if !ms.weights.is_finite() {
        return Err(Error::Diverged { epoch, member });
    }
    Ok(epoch_loss / rows.len() as f64)
}

/// Train an ensemble from scratch with a normalizer fitted on `ds`.
pub fn train(ds: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<(EnsembleModel, Vec<Checkpoint>)> {
    Trainer::new(ds, cfg, seed, None)?.finish()
}

/// As [`train`], with the normalization frozen to `normalizer`.
pub fn train_with_normalizer(
    ds: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
    normalizer: Normalizer,
) -> Result<(EnsembleModel, Vec<Checkpoint>)> {
    Trainer::new(ds, cfg, seed, Some(normalizer))?.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_schedule() {
        let cfg = TrainConfig::default();
        let e = cfg.checkpoint_epochs();
        assert_eq!(e, (1..=10).map(|k| 20 * k).collect::<Vec<_>>());
        let odd = TrainConfig {
            epochs: 7,
            n_checkpoints: 3,
            ..cfg
        };
        assert_eq!(odd.checkpoint_epochs(), vec![2, 5, 7]);
    }

    #[test]
    fn order_key_depends_on_every_part() {
        let base = order_key(1, 0, 0, 5);
        assert_ne!(base, order_key(2, 0, 0, 5));
        assert_ne!(base, order_key(1, 1, 0, 5));
        assert_ne!(base, order_key(1, 0, 1, 5));
        assert_ne!(base, order_key(1, 0, 0, 6));
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = TrainConfig {
            ensemble_size: 1,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
