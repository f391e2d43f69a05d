//! Stage two: an ArcFace linear head over the synthesized style-content
//! features of the fine-grained category names.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{assemble_prompt, EncoderError, JointFeature, PromptKind, TextEncoder};
use crate::linalg::{dot, norm, Matrix};
use crate::rng::{gaussian_vec, seeded, streams};
use crate::semantics::CategorySet;
use crate::styles::{cosine_lr, PseudoStyleSet, SgdMomentum};

/// Cosines are clamped this far inside [-1, 1] before `acos`.
const COS_CLAMP: f64 = 1.0 - 1e-7;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("invalid classifier config: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("label {label} out of range for {n} classes")]
    LabelOutOfRange { label: usize, n: usize },
    #[error("training set is empty")]
    Empty,
    #[error("need at least two categories, got {0}")]
    TooFewClasses(usize),
    #[error("weight row {0} has zero norm")]
    ZeroRow(usize),
    #[error("classifier loss diverged at epoch {epoch}, step {step}: {value}")]
    Diverged { epoch: usize, step: usize, value: f64 },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// ArcFace scale `s`.
    pub scale: f64,
    /// ArcFace additive angular margin `m`, in radians.
    pub margin: f64,
    pub init_std: f64,
    /// Decay the learning rate with a per-epoch cosine schedule. Off by
    /// default: the head trains at a constant rate.
    pub cosine_schedule: bool,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 128,
            scale: 5.0,
            margin: 0.5,
            init_std: 0.01,
            cosine_schedule: false,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: String| Err(ClassifierError::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return bad(format!("scale must be positive, got {}", self.scale));
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.margin) {
            return bad(format!("margin must be in [0, pi/2), got {}", self.margin));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be finite and non-negative, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return bad(format!("init_std must be positive, got {}", self.init_std));
        }
        Ok(())
    }
}

/// Unnormalized `N x P` weights; rows are normalized whenever they are used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub weights: Matrix,
    pub classes: Vec<String>,
}

impl LinearHead {
    pub fn init(classes: Vec<String>, joint_dim: usize, std: f64, seed: u64) -> Self {
        let mut rng = seeded(seed, streams::HEAD_INIT);
        let n = classes.len();
        Self {
            weights: Matrix::from_vec(n, joint_dim, gaussian_vec(&mut rng, n * joint_dim, std)),
            classes,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn joint_dim(&self) -> usize {
        self.weights.cols()
    }

    /// Cosine between `feature` and every normalized row.
    pub fn cosines(&self, feature: &[f64]) -> Result<Vec<f64>, ClassifierError> {
        if feature.len() != self.joint_dim() {
            return Err(ClassifierError::Dimension(format!(
                "feature dim {} vs head dim {}",
                feature.len(),
                self.joint_dim()
            )));
        }
        self.weights
            .row_iter()
            .enumerate()
            .map(|(j, w)| {
                let n = norm(w);
                if n == 0.0 {
                    Err(ClassifierError::ZeroRow(j))
                } else {
                    Ok(dot(w, feature) / n)
                }
            })
            .collect()
    }
}

/// `K * N` labeled style-content features, style-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub features: Vec<JointFeature>,
    pub labels: Vec<usize>,
    pub classes: Vec<String>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

pub fn synth_training_set<T: TextEncoder + ?Sized>(
    styles: &PseudoStyleSet,
    categories: &CategorySet,
    encoder: &T,
) -> Result<TrainingSet, ClassifierError> {
    let names = categories.names();
    if names.len() < 2 {
        return Err(ClassifierError::TooFewClasses(names.len()));
    }
    let prompts = names
        .iter()
        .map(|c| assemble_prompt(PromptKind::StyleContent, Some(0), Some(c)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut features = Vec::with_capacity(styles.k() * names.len());
    let mut labels = Vec::with_capacity(features.capacity());
    for theta in styles.rows() {
        for (c, prompt) in prompts.iter().enumerate() {
            features.push(encoder.encode_text(prompt, Some(theta))?);
            labels.push(c);
        }
    }
    Ok(TrainingSet {
        features,
        labels,
        classes: names.to_vec(),
    })
}

/// Mean ArcFace loss and its gradient with respect to the raw weights.
pub fn arcface_with_grad(
    weights: &Matrix,
    features: &[&[f64]],
    labels: &[usize],
    scale: f64,
    margin: f64,
) -> Result<(f64, Matrix), ClassifierError> {
    if features.len() != labels.len() {
        return Err(ClassifierError::Dimension(format!(
            "{} features but {} labels",
            features.len(),
            labels.len()
        )));
    }
    if features.is_empty() {
        return Err(ClassifierError::Empty);
    }
    let (n, p) = (weights.rows(), weights.cols());
    let norms: Vec<f64> = weights.row_iter().map(norm).collect();
    if let Some(j) = norms.iter().position(|&x| x == 0.0) {
        return Err(ClassifierError::ZeroRow(j));
    }
    let b = features.len() as f64;
    let mut total = 0.0;
    let mut grad = Matrix::zeros(n, p);
    let mut logits = vec![0.0; n];
    let mut dl_dc = vec![0.0; n];
    for (f, &y) in features.iter().zip(labels) {
        if y >= n {
            return Err(ClassifierError::LabelOutOfRange { label: y, n });
        }
        if f.len() != p {
            return Err(ClassifierError::Dimension(format!(
                "feature dim {} vs head dim {p}",
                f.len()
            )));
        }
        let cos: Vec<f64> = weights
            .row_iter()
            .zip(&norms)
            .map(|(w, nw)| dot(w, f) / nw)
            .collect();
        for j in 0..n {
            logits[j] = scale * cos[j];
            dl_dc[j] = scale;
        }
        let clamped = cos[y].clamp(-COS_CLAMP, COS_CLAMP);
        let angle = clamped.acos();
        if angle + margin < std::f64::consts::PI {
            logits[y] = scale * (angle + margin).cos();
            dl_dc[y] = if clamped == cos[y] {
                scale * (angle + margin).sin() / angle.sin()
            } else {
                0.0
            };
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        total += max + z.ln() - logits[y];
        for j in 0..n {
            let prob = (logits[j] - max).exp() / z;
            let coef = (prob - if j == y { 1.0 } else { 0.0 }) * dl_dc[j] / b;
            if coef == 0.0 {
                continue;
            }
            // d cos / d w = (f - cos * w_hat) / |w|
            let nw = norms[j];
            let c = cos[j];
            let w = weights.row(j).to_vec();
            let g = grad.row_mut(j);
            for d in 0..p {
                g[d] += coef * (f[d] - c * w[d] / nw) / nw;
            }
        }
    }
    Ok((total / b, grad))
}

pub fn arcface_loss(
    head: &LinearHead,
    features: &[JointFeature],
    labels: &[usize],
    scale: f64,
    margin: f64,
) -> Result<f64, ClassifierError> {
    let views: Vec<&[f64]> = features.iter().map(JointFeature::vector).collect();
    arcface_with_grad(&head.weights, &views, labels, scale, margin).map(|(l, _)| l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct HeadOutcome {
    pub head: LinearHead,
    pub history: Vec<HeadEpoch>,
}

pub fn train_linear(
    config: &ClassifierConfig,
    set: &TrainingSet,
) -> Result<HeadOutcome, ClassifierError> {
    config.validate()?;
    if set.is_empty() {
        return Err(ClassifierError::Empty);
    }
    let p = set.features[0].dim();
    let mut head = LinearHead::init(set.classes.clone(), p, config.init_std, config.seed);
    let mut opt = SgdMomentum::new(head.num_classes(), p, config.momentum);
    let mut rng = seeded(config.seed, streams::HEAD_SHUFFLE);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 0..config.epochs {
        let lr = if config.cosine_schedule {
            cosine_lr(config.lr, epoch, config.epochs)
        } else {
            config.lr
        };
        order.shuffle(&mut rng);
        let (mut sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let feats: Vec<&[f64]> = chunk.iter().map(|&i| set.features[i].vector()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| set.labels[i]).collect();
            let (loss, grad) =
                arcface_with_grad(&head.weights, &feats, &labels, config.scale, config.margin)?;
            if !loss.is_finite() {
                return Err(ClassifierError::Diverged {
                    epoch,
                    step,
                    value: loss,
                });
            }
            opt.step(&mut head.weights, &grad, lr);
            sum += loss;
            batches += 1;
            step += 1;
        }
        history.push(HeadEpoch {
            epoch,
            loss: sum / batches as f64,
            accuracy: training_accuracy(&head, set)?,
            lr,
        });
    }
    Ok(HeadOutcome { head, history })
}

/// Top-1 accuracy of `head` on its own training set.
pub fn training_accuracy(head: &LinearHead, set: &TrainingSet) -> Result<f64, ClassifierError> {
    let mut hits = 0usize;
    for (f, &y) in set.features.iter().zip(&set.labels) {
        if argmax(&head.cosines(f.vector())?) == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / set.len() as f64)
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (j, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = j;
        }
    }
    best
}
