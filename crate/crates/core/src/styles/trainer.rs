//! Training loops for the three stage-one modes.
//!
//! * `batstyler`: styles are shuffled into batches each epoch; each batch
//!   minimizes template cross-entropy plus coarse consistency.
//! * `baseline-parallel`: same batching, with pairwise orthogonality plus
//!   `lambda` times fine-grained consistency.
//! * `baseline-sequential`: one style at a time against the frozen earlier
//!   ones. Each style gets `epochs / batch_size` steps (remainder spread
//!   over the first styles), so the total step count equals the parallel
//!   modes'.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::losses::{ce_objective, consistency_objective, ConsistencyTarget};
use super::optim::{cosine_lr, SgdMomentum};
use super::{BaselineLossConfig, PseudoStyleSet, StyleTrainConfig, TrainError};
use crate::encoder::{assemble_prompt, EncoderError, JointFeature, PromptKind, TextEncoder, TextTrace};
use crate::etf::EtfTemplate;
use crate::linalg::{axpy, dot, sign, Matrix};
use crate::rng::{seeded, streams};
use crate::semantics::CategorySet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    Batstyler,
    BaselineParallel,
    BaselineSequential,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Batstyler => "batstyler",
            TrainMode::BaselineParallel => "baseline-parallel",
            TrainMode::BaselineSequential => "baseline-sequential",
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "batstyler" => Ok(TrainMode::Batstyler),
            "baseline-parallel" => Ok(TrainMode::BaselineParallel),
            "baseline-sequential" => Ok(TrainMode::BaselineSequential),
            other => Err(format!("unknown training mode `{other}`")),
        }
    }
}

/// What a training run reads. Batstyler needs `template` and `css`; the
/// baselines need `categories`.
pub struct StyleInputs<'a, T: ?Sized> {
    pub encoder: &'a T,
    pub template: Option<&'a EtfTemplate>,
    pub css: Option<&'a [String]>,
    pub categories: Option<&'a CategorySet>,
}

impl<T: ?Sized> Clone for StyleInputs<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: ?Sized> Copy for StyleInputs<'_, T> {}

/// One row of loss history. For the parallel modes a row is an epoch and
/// the losses are batch means; for the sequential baseline a row is one
/// finished style and the losses are from its last step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Template cross-entropy (batstyler) or pairwise |cos| (baselines).
    pub diversity: f64,
    /// Unweighted consistency term.
    pub consistency: f64,
    pub total: f64,
    pub lr: f64,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone)]
pub struct StyleTrainOutcome {
    pub styles: PseudoStyleSet,
    pub history: Vec<EpochRecord>,
    pub steps: usize,
    pub wall_clock_s: f64,
}

pub fn train_styles<T: TextEncoder + ?Sized>(
    mode: TrainMode,
    config: &StyleTrainConfig,
    baseline: &BaselineLossConfig,
    inputs: StyleInputs<'_, T>,
) -> Result<StyleTrainOutcome, TrainError> {
    config.validate()?;
    baseline.validate()?;
    let encoder = inputs.encoder;
    let init = PseudoStyleSet::init(config.k, encoder.token_dim(), config.init_std, config.seed);
    let start = Instant::now();
    let (theta, history, steps) = match mode {
        TrainMode::Batstyler => {
            let template = inputs.template.ok_or(TrainError::MissingInput("ETF template"))?;
            let css = inputs.css.ok_or(TrainError::MissingInput("coarse semantic set"))?;
            if css.is_empty() {
                return Err(TrainError::MissingInput("coarse semantic set"));
            }
            if template.k() != config.k || template.p() != encoder.joint_dim() {
                return Err(TrainError::Dimension(format!(
                    "template is {}x{}, run needs k={} in p={}",
                    template.k(),
                    template.p(),
                    config.k,
                    encoder.joint_dim()
                )));
            }
            let target = ConsistencyTarget::new(css, encoder)?;
            run_parallel(config, init.theta.clone(), start, |rows, idx| {
                let ce = ce_objective(rows, idx, template, encoder, config.logit_scale)?;
                let sc = consistency_objective(rows, &target, encoder)?;
                Ok(StepLoss::combine(ce, sc, 1.0))
            })?
        }
        TrainMode::BaselineParallel => {
            let cats = inputs.categories.ok_or(TrainError::MissingInput("category set"))?;
            let target = ConsistencyTarget::new(cats.names(), encoder)?;
            let lambda = baseline.lambda;
            run_parallel_with_all(config, init.theta.clone(), start, encoder, |rows, idx, all| {
                let style = batch_orthogonality(rows, idx, all, encoder)?;
                let content = consistency_objective(rows, &target, encoder)?;
                Ok(StepLoss::combine(style, content, lambda))
            })?
        }
        TrainMode::BaselineSequential => {
            let cats = inputs.categories.ok_or(TrainError::MissingInput("category set"))?;
            let target = ConsistencyTarget::new(cats.names(), encoder)?;
            run_sequential(config, baseline.lambda, init.theta.clone(), start, encoder, &target)?
        }
    };
    if !theta.data().iter().all(|x| x.is_finite()) {
        return Err(TrainError::Diverged {
            epoch: config.epochs,
            step: steps,
            value: f64::NAN,
        });
    }
    Ok(StyleTrainOutcome {
        styles: PseudoStyleSet {
            theta,
            init_seed: config.seed,
            trained_epochs: config.epochs,
            mode: Some(mode),
        },
        history,
        steps,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

struct StepLoss {
    diversity: f64,
    consistency: f64,
    total: f64,
    grads: Vec<Vec<f64>>,
}

impl StepLoss {
    fn combine(div: super::LossGrad, cons: super::LossGrad, weight: f64) -> Self {
        let mut grads = div.grads;
        for (g, c) in grads.iter_mut().zip(&cons.grads) {
            axpy(weight, c, g);
        }
        StepLoss {
            diversity: div.value,
            consistency: cons.value,
            total: div.value + weight * cons.value,
            grads,
        }
    }
}

fn guard(value: f64, epoch: usize, step: usize) -> Result<(), TrainError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(TrainError::Diverged { epoch, step, value })
    }
}

/// A step can overflow theta even when the loss that produced it was finite.
fn guard_params(theta: &Matrix, epoch: usize, step: usize) -> Result<(), TrainError> {
    match theta.data().iter().find(|x| !x.is_finite()) {
        Some(&value) => Err(TrainError::Diverged { epoch, step, value }),
        None => Ok(()),
    }
}

/// Mid-run, an encoding that collapses or overflows means theta blew up.
fn step_error(e: TrainError, epoch: usize, step: usize) -> TrainError {
    match e {
        TrainError::Encoder(EncoderError::Degenerate(_)) => TrainError::Diverged {
            epoch,
            step,
            value: f64::NAN,
        },
        e => e,
    }
}

type RunResult = (Matrix, Vec<EpochRecord>, usize);

fn run_parallel<F>(
    config: &StyleTrainConfig,
    theta: Matrix,
    start: Instant,
    mut step_loss: F,
) -> Result<RunResult, TrainError>
where
    F: FnMut(&[&[f64]], &[usize]) -> Result<StepLoss, TrainError>,
{
    run_epochs(config, theta, start, |theta, idx| {
        let rows: Vec<&[f64]> = idx.iter().map(|&i| theta.row(i)).collect();
        step_loss(&rows, idx)
    })
}

fn run_parallel_with_all<T, F>(
    config: &StyleTrainConfig,
    theta: Matrix,
    start: Instant,
    encoder: &T,
    mut step_loss: F,
) -> Result<RunResult, TrainError>
where
    T: TextEncoder + ?Sized,
    F: FnMut(&[&[f64]], &[usize], &[JointFeature]) -> Result<StepLoss, TrainError>,
{
    let prompt = assemble_prompt(PromptKind::Style, Some(0), None)?;
    run_epochs(config, theta, start, |theta, idx| {
        let all = theta
            .row_iter()
            .map(|t| encoder.encode_text(&prompt, Some(t)))
            .collect::<Result<Vec<_>, _>>()?;
        let rows: Vec<&[f64]> = idx.iter().map(|&i| theta.row(i)).collect();
        step_loss(&rows, idx, &all)
    })
}

fn run_epochs<F>(
    config: &StyleTrainConfig,
    mut theta: Matrix,
    start: Instant,
    mut step_loss: F,
) -> Result<RunResult, TrainError>
where
    F: FnMut(&Matrix, &[usize]) -> Result<StepLoss, TrainError>,
{
    let k = config.k;
    let b = config.batch_size;
    let mut rng = seeded(config.seed, streams::STYLE_SHUFFLE);
    let mut opt = SgdMomentum::new(theta.rows(), theta.cols(), config.momentum);
    let mut order: Vec<usize> = (0..k).collect();
    let mut grad = Matrix::zeros(theta.rows(), theta.cols());
    let mut history = Vec::with_capacity(config.epochs);
    let mut steps = 0;
    for epoch in 0..config.epochs {
        let lr = cosine_lr(config.lr, epoch, config.epochs);
        order.shuffle(&mut rng);
        let (mut div, mut cons, mut total) = (0.0, 0.0, 0.0);
        for idx in order.chunks(b) {
            let loss = step_loss(&theta, idx).map_err(|e| step_error(e, epoch, steps))?;
            guard(loss.total, epoch, steps)?;
            grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
            for (&i, g) in idx.iter().zip(&loss.grads) {
                grad.row_mut(i).copy_from_slice(g);
            }
            opt.step(&mut theta, &grad, lr);
            guard_params(&theta, epoch, steps)?;
            div += loss.diversity;
            cons += loss.consistency;
            total += loss.total;
            steps += 1;
        }
        let batches = (k / b) as f64;
        history.push(EpochRecord {
            epoch,
            diversity: div / batches,
            consistency: cons / batches,
            total: total / batches,
            lr,
            wall_clock_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok((theta, history, steps))
}

/// Orthogonality term for one batch: pairs inside the batch plus pairs
/// between a batch style and a (detached) style outside it.
fn batch_orthogonality<T: TextEncoder + ?Sized>(
    rows: &[&[f64]],
    idx: &[usize],
    all: &[JointFeature],
    encoder: &T,
) -> Result<super::LossGrad, TrainError> {
    let prompt = assemble_prompt(PromptKind::Style, Some(0), None)?;
    let traces: Vec<TextTrace> = rows
        .iter()
        .map(|t| encoder.forward(&prompt, Some(t)))
        .collect::<Result<_, _>>()?;
    let p = encoder.joint_dim();
    let mut value = 0.0;
    let mut g_feat = vec![vec![0.0; p]; rows.len()];
    for (a, &i) in idx.iter().enumerate() {
        let fi = traces[a].feature.vector();
        for (j, fj) in all.iter().enumerate() {
            if j == i {
                continue;
            }
            let (fj, partner) = match idx.iter().position(|&x| x == j) {
                // In-batch pairs are counted once, from the later slot.
                Some(b) if b > a => continue,
                Some(b) => (traces[b].feature.vector(), Some(b)),
                None => (fj.vector(), None),
            };
            let c = dot(fi, fj);
            value += c.abs();
            let s = sign(c);
            axpy(s, fj, &mut g_feat[a]);
            if let Some(b) = partner {
                axpy(s, fi, &mut g_feat[b]);
            }
        }
    }
    let grads = rows
        .iter()
        .zip(&traces)
        .zip(&g_feat)
        .map(|((th, tr), g)| encoder.backward(&prompt, Some(th), tr, g))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(super::LossGrad { value, grads })
}

fn run_sequential<T: TextEncoder + ?Sized>(
    config: &StyleTrainConfig,
    lambda: f64,
    mut theta: Matrix,
    start: Instant,
    encoder: &T,
    target: &ConsistencyTarget,
) -> Result<RunResult, TrainError> {
    let k = config.k;
    let total_steps = config.total_steps();
    let (base, extra) = (total_steps / k, total_steps % k);
    let prompt = assemble_prompt(PromptKind::Style, Some(0), None)?;
    let mut frozen: Vec<JointFeature> = Vec::with_capacity(k);
    let mut history = Vec::with_capacity(k);
    let mut steps = 0;
    for i in 0..k {
        let budget = base + usize::from(i < extra);
        let mut opt = SgdMomentum::new(1, theta.cols(), config.momentum);
        let mut row = Matrix::from_vec(1, theta.cols(), theta.row(i).to_vec());
        let mut last = (0.0, 0.0, 0.0, config.lr);
        for s in 0..budget {
            let lr = cosine_lr(config.lr, s, budget);
            let th = row.row(0);
            let (grad, style, content) = (|| -> Result<_, TrainError> {
                let trace = encoder.forward(&prompt, Some(th))?;
                let f = trace.feature.vector();
                let mut g_feat = vec![0.0; f.len()];
                let mut style = 0.0;
                for prev in &frozen {
                    let c = dot(f, prev.vector());
                    style += c.abs();
                    axpy(sign(c), prev.vector(), &mut g_feat);
                }
                let mut grad = encoder.backward(&prompt, Some(th), &trace, &g_feat)?;
                let content = if lambda > 0.0 {
                    let cg = consistency_objective(&[th], target, encoder)?;
                    axpy(lambda, &cg.grads[0], &mut grad);
                    cg.value
                } else {
                    0.0
                };
                Ok((grad, style, content))
            })()
            .map_err(|e| step_error(e, i, steps))?;
            let total = style + lambda * content;
            guard(total, i, steps)?;
            opt.step(&mut row, &Matrix::from_vec(1, grad.len(), grad), lr);
            guard_params(&row, i, steps)?;
            steps += 1;
            last = (style, content, total, lr);
        }
        theta.row_mut(i).copy_from_slice(row.row(0));
        frozen.push(encoder.encode_text(&prompt, Some(theta.row(i)))?);
        history.push(EpochRecord {
            epoch: i,
            diversity: last.0,
            consistency: last.1,
            total: last.2,
            lr: last.3,
            wall_clock_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok((theta, history, steps))
}

/// Style features `f_style(theta_i)` for every style.
pub fn style_features<T: TextEncoder + ?Sized>(
    styles: &PseudoStyleSet,
    encoder: &T,
) -> Result<Vec<JointFeature>, TrainError> {
    let prompt = assemble_prompt(PromptKind::Style, Some(0), None)?;
    styles
        .rows()
        .iter()
        .map(|t| encoder.encode_text(&prompt, Some(t)).map_err(TrainError::from))
        .collect()
}

/// Fraction of styles whose best-scoring template is their own.
pub fn etf_accuracy<T: TextEncoder + ?Sized>(
    styles: &PseudoStyleSet,
    template: &EtfTemplate,
    encoder: &T,
) -> Result<f64, TrainError> {
    let feats = style_features(styles, encoder)?;
    let hits = feats
        .iter()
        .enumerate()
        .filter(|(i, f)| {
            let scores = template.scores(f.vector());
            let mut best = 0;
            for (j, s) in scores.iter().enumerate() {
                if *s > scores[best] {
                    best = j;
                }
            }
            best == *i
        })
        .count();
    Ok(hits as f64 / feats.len() as f64)
}
