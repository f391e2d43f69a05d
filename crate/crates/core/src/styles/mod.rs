//! Stage one: learning the pseudo-style word embeddings.

mod losses;
mod optim;
mod trainer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use losses::{
    ce_objective, ce_with_grad, consistency_objective, loss_baseline, loss_ce, loss_content,
    loss_sc, loss_style_orth, style_orth_objective, style_orth_with_grad, ConsistencyTarget,
    LossGrad,
};
pub use optim::{cosine_lr, SgdMomentum};
pub use trainer::{
    etf_accuracy, style_features, train_styles, EpochRecord, StyleInputs, StyleTrainOutcome,
    TrainMode,
};

use crate::encoder::EncoderError;
use crate::linalg::Matrix;
use crate::rng::{gaussian_vec, seeded, streams};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("missing training input: {0}")]
    MissingInput(&'static str),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("label {label} out of range for {k} templates")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("loss diverged at epoch {epoch}, step {step}: {value}")]
    Diverged { epoch: usize, step: usize, value: f64 },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StyleTrainConfig {
    /// Number of pseudo-styles.
    pub k: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Multiplier on the template cosines inside the cross-entropy.
    pub logit_scale: f64,
    /// Standard deviation of the Gaussian initialization of theta.
    pub init_std: f64,
    pub seed: u64,
}

impl Default for StyleTrainConfig {
    fn default() -> Self {
        Self {
            k: 80,
            epochs: 300,
            lr: 0.2,
            momentum: 0.9,
            batch_size: 4,
            logit_scale: 1.0,
            init_std: 0.02,
            seed: 0,
        }
    }
}

impl StyleTrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.k < 2 {
            return bad(format!("k must be at least 2, got {}", self.k));
        }
        if self.batch_size == 0 || self.k % self.batch_size != 0 {
            return bad(format!(
                "k={} must be divisible by batch_size={}",
                self.k, self.batch_size
            ));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be finite and non-negative, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.logit_scale > 0.0 && self.logit_scale.is_finite()) {
            return bad(format!("logit_scale must be positive, got {}", self.logit_scale));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return bad(format!("init_std must be non-negative, got {}", self.init_std));
        }
        Ok(())
    }

    /// Optimizer steps in one parallel run: `epochs * k / batch_size`.
    pub fn total_steps(&self) -> usize {
        self.epochs * (self.k / self.batch_size.max(1))
    }
}

/// Weight of the content term in the baseline objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineLossConfig {
    pub lambda: f64,
}

impl Default for BaselineLossConfig {
    fn default() -> Self {
        Self { lambda: 1.0 }
    }
}

impl BaselineLossConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(TrainError::Config(format!(
                "lambda must be in [0, 1], got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// The `K` learnable pseudo-style word embeddings, one per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoStyleSet {
    pub theta: Matrix,
    pub init_seed: u64,
    #[serde(default)]
    pub trained_epochs: usize,
    #[serde(default)]
    pub mode: Option<TrainMode>,
}

impl PseudoStyleSet {
    pub fn init(k: usize, token_dim: usize, std: f64, seed: u64) -> Self {
        let mut rng = seeded(seed, streams::THETA_INIT);
        Self {
            theta: Matrix::from_vec(k, token_dim, gaussian_vec(&mut rng, k * token_dim, std)),
            init_seed: seed,
            trained_epochs: 0,
            mode: None,
        }
    }

    pub fn from_matrix(theta: Matrix, init_seed: u64) -> Self {
        Self {
            theta,
            init_seed,
            trained_epochs: 0,
            mode: None,
        }
    }

    pub fn k(&self) -> usize {
        self.theta.rows()
    }

    pub fn token_dim(&self) -> usize {
        self.theta.cols()
    }

    pub fn style(&self, i: usize) -> &[f64] {
        self.theta.row(i)
    }

    pub fn rows(&self) -> Vec<&[f64]> {
        self.theta.row_iter().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.theta.data().iter().all(|x| x.is_finite())
    }
}
