//! Stage-one objectives and their gradients with respect to theta.
//!
//! Feature-level pieces (`*_with_grad`) return `dL/dfeature`; the
//! `*_objective` functions push those through the frozen encoder.

use super::{PseudoStyleSet, TrainError};
use crate::encoder::{assemble_prompt, JointFeature, Prompt, PromptKind, TextEncoder};
use crate::etf::EtfTemplate;
use crate::linalg::{axpy, dot, sign};
use crate::semantics::CategorySet;

/// A scalar loss and its gradient for each theta row passed in.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grads: Vec<Vec<f64>>,
}

/// Mean softmax cross-entropy over `logit_scale * template^T * feature`.
pub fn ce_with_grad(
    features: &[&[f64]],
    template: &EtfTemplate,
    labels: &[usize],
    logit_scale: f64,
) -> Result<(f64, Vec<Vec<f64>>), TrainError> {
    if features.len() != labels.len() {
        return Err(TrainError::Dimension(format!(
            "{} features but {} labels",
            features.len(),
            labels.len()
        )));
    }
    if features.is_empty() {
        return Err(TrainError::Dimension("empty batch".into()));
    }
    let k = template.k();
    let b = features.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(features.len());
    for (f, &y) in features.iter().zip(labels) {
        if y >= k {
            return Err(TrainError::LabelOutOfRange { label: y, k });
        }
        if f.len() != template.p() {
            return Err(TrainError::Dimension(format!(
                "feature dim {} vs template dim {}",
                f.len(),
                template.p()
            )));
        }
        let logits: Vec<f64> = template
            .scores(f)
            .into_iter()
            .map(|s| logit_scale * s)
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        total += max + z.ln() - logits[y];

        let mut g = vec![0.0; f.len()];
        for (j, l) in logits.iter().enumerate() {
            let p = (l - max).exp() / z;
            let coef = (p - if j == y { 1.0 } else { 0.0 }) * logit_scale / b;
            axpy(coef, template.column(j), &mut g);
        }
        grads.push(g);
    }
    Ok((total / b, grads))
}

pub fn loss_ce(
    features: &[JointFeature],
    template: &EtfTemplate,
    labels: &[usize],
    logit_scale: f64,
) -> Result<f64, TrainError> {
    let views: Vec<&[f64]> = features.iter().map(JointFeature::vector).collect();
    ce_with_grad(&views, template, labels, logit_scale).map(|(l, _)| l)
}

/// `sum_{i>j} |f_i . f_j|` over unit features.
pub fn style_orth_with_grad(features: &[&[f64]]) -> (f64, Vec<Vec<f64>>) {
    let dim = features.first().map_or(0, |f| f.len());
    let mut grads = vec![vec![0.0; dim]; features.len()];
    let mut total = 0.0;
    for i in 0..features.len() {
        for j in 0..i {
            let c = dot(features[i], features[j]);
            total += c.abs();
            let s = sign(c);
            axpy(s, features[j], &mut grads[i]);
            axpy(s, features[i], &mut grads[j]);
        }
    }
    (total, grads)
}

pub fn loss_style_orth(features: &[JointFeature]) -> f64 {
    let views: Vec<&[f64]> = features.iter().map(JointFeature::vector).collect();
    style_orth_with_grad(&views).0
}

/// Content features and style-content prompts for a list of names, built
/// once per run.
#[derive(Debug, Clone)]
pub struct ConsistencyTarget {
    names: Vec<String>,
    prompts: Vec<Prompt>,
    content: Vec<JointFeature>,
}

impl ConsistencyTarget {
    pub fn new<T: TextEncoder + ?Sized>(names: &[String], encoder: &T) -> Result<Self, TrainError> {
        let mut prompts = Vec::with_capacity(names.len());
        let mut content = Vec::with_capacity(names.len());
        for n in names {
            prompts.push(assemble_prompt(PromptKind::StyleContent, Some(0), Some(n))?);
            content.push(encoder.encode_content(n)?);
        }
        Ok(Self {
            names: names.to_vec(),
            prompts,
            content,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn content(&self, c: usize) -> &JointFeature {
        &self.content[c]
    }

    pub fn prompt(&self, c: usize) -> &Prompt {
        &self.prompts[c]
    }
}

/// `sum_c -cos(f_content(c), f_style-content(theta, c))` for one style.
fn consistency_row<T: TextEncoder + ?Sized>(
    theta: &[f64],
    target: &ConsistencyTarget,
    encoder: &T,
    want_grad: bool,
) -> Result<(f64, Vec<f64>), TrainError> {
    let mut value = 0.0;
    let mut grad = if want_grad { vec![0.0; theta.len()] } else { Vec::new() };
    for (prompt, content) in target.prompts.iter().zip(&target.content) {
        let trace = encoder.forward(prompt, Some(theta))?;
        value -= dot(content.vector(), trace.feature.vector());
        if want_grad {
            let g_feat: Vec<f64> = content.vector().iter().map(|x| -x).collect();
            let g = encoder.backward(prompt, Some(theta), &trace, &g_feat)?;
            axpy(1.0, &g, &mut grad);
        }
    }
    Ok((value, grad))
}

/// Consistency loss summed over the given styles, with per-style gradients.
pub fn consistency_objective<T: TextEncoder + ?Sized>(
    theta_rows: &[&[f64]],
    target: &ConsistencyTarget,
    encoder: &T,
) -> Result<LossGrad, TrainError> {
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(theta_rows.len());
    for theta in theta_rows {
        let (v, g) = consistency_row(theta, target, encoder, true)?;
        value += v;
        grads.push(g);
    }
    Ok(LossGrad { value, grads })
}

fn style_traces<T: TextEncoder + ?Sized>(
    theta_rows: &[&[f64]],
    encoder: &T,
) -> Result<(Prompt, Vec<crate::encoder::TextTrace>), TrainError> {
    let prompt = assemble_prompt(PromptKind::Style, Some(0), None)?;
    let traces = theta_rows
        .iter()
        .map(|t| encoder.forward(&prompt, Some(t)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((prompt, traces))
}

/// Cross-entropy of the style features against their templates.
pub fn ce_objective<T: TextEncoder + ?Sized>(
    theta_rows: &[&[f64]],
    labels: &[usize],
    template: &EtfTemplate,
    encoder: &T,
    logit_scale: f64,
) -> Result<LossGrad, TrainError> {
    let (prompt, traces) = style_traces(theta_rows, encoder)?;
    let feats: Vec<&[f64]> = traces.iter().map(|t| t.feature.vector()).collect();
    let (value, g_feat) = ce_with_grad(&feats, template, labels, logit_scale)?;
    let grads = theta_rows
        .iter()
        .zip(&traces)
        .zip(&g_feat)
        .map(|((th, tr), g)| encoder.backward(&prompt, Some(th), tr, g))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LossGrad { value, grads })
}

/// Pairwise absolute cosine between style features.
pub fn style_orth_objective<T: TextEncoder + ?Sized>(
    theta_rows: &[&[f64]],
    encoder: &T,
) -> Result<LossGrad, TrainError> {
    let (prompt, traces) = style_traces(theta_rows, encoder)?;
    let feats: Vec<&[f64]> = traces.iter().map(|t| t.feature.vector()).collect();
    let (value, g_feat) = style_orth_with_grad(&feats);
    let grads = theta_rows
        .iter()
        .zip(&traces)
        .zip(&g_feat)
        .map(|((th, tr), g)| encoder.backward(&prompt, Some(th), tr, g))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LossGrad { value, grads })
}

/// Coarse consistency: every style against every coarse term.
pub fn loss_sc<T: TextEncoder + ?Sized>(
    theta: &PseudoStyleSet,
    css: &[String],
    encoder: &T,
) -> Result<f64, TrainError> {
    if css.is_empty() {
        return Err(TrainError::MissingInput("coarse semantic set"));
    }
    let target = ConsistencyTarget::new(css, encoder)?;
    theta.rows().iter().try_fold(0.0, |acc, t| {
        consistency_row(t, &target, encoder, false).map(|(v, _)| acc + v)
    })
}

/// Fine-grained consistency over the full category list.
pub fn loss_content<T: TextEncoder + ?Sized>(
    theta: &PseudoStyleSet,
    categories: &CategorySet,
    encoder: &T,
) -> Result<f64, TrainError> {
    loss_sc(theta, categories.names(), encoder)
}

/// `L_style + lambda * L_content` over all styles.
pub fn loss_baseline<T: TextEncoder + ?Sized>(
    theta: &PseudoStyleSet,
    categories: &CategorySet,
    encoder: &T,
    lambda: f64,
) -> Result<f64, TrainError> {
    let rows = theta.rows();
    let (_, traces) = style_traces(&rows, encoder)?;
    let feats: Vec<&[f64]> = traces.iter().map(|t| t.feature.vector()).collect();
    let style = style_orth_with_grad(&feats).0;
    if lambda == 0.0 {
        return Ok(style);
    }
    Ok(style + lambda * loss_content(theta, categories, encoder)?)
}
