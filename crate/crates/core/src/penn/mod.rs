//! Probabilistic ensemble of Gaussian-output MLPs.

pub mod ensemble;
pub mod mlp;
pub mod train;
pub mod uncertainty;

pub use ensemble::{safety_nll, EnsembleModel, Normalizer, Prediction, N_INPUTS};
pub use mlp::{head_nll, nll_loss, HeadOutput, MlpWeights, BOTH_HEADS, SAFETY_HEAD};
pub use train::{train, train_with_normalizer, Checkpoint, Optimizer, TrainConfig, TrainOutput, TrainState, Trainer};
pub use uncertainty::{cvar, jrd};
