//! Frozen text/image encoders behind one interface.
//!
//! Text encoders expose an unnormalized projection plus its
//! vector-Jacobian product with respect to the pseudo-word embedding; the
//! normalization step and its backward pass are shared here, so every
//! backend yields unit-norm [`JointFeature`]s.

mod external;
mod mock;
mod prompt;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use external::{preprocess_image, ExternalVlm, Preprocessing, VlmModel};
pub use mock::{MockEncoder, MockImageEncoder};
pub use prompt::{assemble_prompt, Prompt, PromptKind, Token};

use crate::linalg::{norm, normalize_backward};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("prompt: {0}")]
    Prompt(String),
    #[error("pseudo-word embedding has dimension {got}, encoder expects {expected}")]
    ThetaDim { expected: usize, got: usize },
    #[error("prompt `{0}` has a pseudo-word slot but no embedding was supplied")]
    MissingTheta(String),
    #[error("prompt `{0}` has no pseudo-word slot but an embedding was supplied")]
    UnexpectedTheta(String),
    #[error("gradient has dimension {got}, expected {expected}")]
    GradDim { expected: usize, got: usize },
    #[error("prompt `{0}` encodes to a zero or non-finite vector")]
    Degenerate(String),
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("negative noise magnitude {0}")]
    NegativeSigma(f64),
    #[error("cannot decode image {path}: {reason}")]
    Image { path: String, reason: String },
    #[error("backend `{backend}` cannot encode {what}")]
    Unsupported { backend: String, what: String },
    #[error("backend dimensions (P={got_p}, D={got_d}) do not match spec (P={want_p}, D={want_d})")]
    SpecMismatch {
        want_p: usize,
        want_d: usize,
        got_p: usize,
        got_d: usize,
    },
    #[error("backend failure: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Style,
    Content,
    StyleContent,
    Image,
}

impl From<PromptKind> for Provenance {
    fn from(k: PromptKind) -> Self {
        match k {
            PromptKind::Style => Provenance::Style,
            PromptKind::Content => Provenance::Content,
            PromptKind::StyleContent => Provenance::StyleContent,
        }
    }
}

/// Unit vector in the shared text/image space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointFeature {
    vector: Vec<f64>,
    provenance: Provenance,
}

impl JointFeature {
    /// Normalizes `raw`; `None` if it has zero or non-finite norm.
    pub fn from_raw(raw: &[f64], provenance: Provenance) -> Option<Self> {
        crate::linalg::normalized(raw).map(|vector| Self { vector, provenance })
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn into_vector(self) -> Vec<f64> {
        self.vector
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

impl AsRef<[f64]> for JointFeature {
    fn as_ref(&self) -> &[f64] {
        &self.vector
    }
}

/// Forward result retained for the backward pass.
#[derive(Debug, Clone)]
pub struct TextTrace {
    pub feature: JointFeature,
    pub raw_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendId {
    Mock,
    ExternalVlm,
}

/// Which encoder to build and with what shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub joint_dim: usize,
    pub token_dim: usize,
    pub backend: BackendId,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocessing: Option<Preprocessing>,
}

impl EncoderSpec {
    pub fn mock(joint_dim: usize, token_dim: usize, seed: u64) -> Self {
        Self {
            joint_dim,
            token_dim,
            backend: BackendId::Mock,
            seed,
            preprocessing: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.joint_dim == 0 || self.token_dim == 0 {
            return Err(format!(
                "encoder dimensions must be positive (P={}, D={})",
                self.joint_dim, self.token_dim
            ));
        }
        Ok(())
    }

    /// Builds the mock backend; the external backend needs a model and goes
    /// through [`ExternalVlm::new`] instead.
    pub fn build_mock(&self) -> Result<MockEncoder, EncoderError> {
        match self.backend {
            BackendId::Mock => Ok(MockEncoder::new(self.joint_dim, self.token_dim, self.seed)),
            BackendId::ExternalVlm => Err(EncoderError::Unsupported {
                backend: "external-vlm".into(),
                what: "construction without a loaded model".into(),
            }),
        }
    }
}

/// A frozen text encoder that is differentiable in the pseudo-word slot.
pub trait TextEncoder: Send + Sync {
    fn joint_dim(&self) -> usize;

    fn token_dim(&self) -> usize;

    fn backend_id(&self) -> BackendId;

    /// Identifies backend weights for cache keys.
    fn fingerprint(&self) -> String;

    /// Checksum over every frozen parameter.
    fn parameter_checksum(&self) -> u64;

    /// Unnormalized joint-space projection.
    fn project(&self, prompt: &Prompt, theta: Option<&[f64]>) -> Result<Vec<f64>, EncoderError>;

    /// Pulls `dL/d(projection)` back to `dL/dtheta`.
    fn project_vjp(
        &self,
        prompt: &Prompt,
        theta: Option<&[f64]>,
        grad_raw: &[f64],
    ) -> Result<Vec<f64>, EncoderError>;

    fn forward(&self, prompt: &Prompt, theta: Option<&[f64]>) -> Result<TextTrace, EncoderError> {
        let raw = self.project(prompt, theta)?;
        let raw_norm = norm(&raw);
        let feature = JointFeature::from_raw(&raw, prompt.kind().into())
            .ok_or_else(|| EncoderError::Degenerate(prompt.to_string()))?;
        Ok(TextTrace { feature, raw_norm })
    }

    /// `dL/dtheta` given `dL/dfeature` at a traced forward pass.
    fn backward(
        &self,
        prompt: &Prompt,
        theta: Option<&[f64]>,
        trace: &TextTrace,
        grad_feature: &[f64],
    ) -> Result<Vec<f64>, EncoderError> {
        if grad_feature.len() != self.joint_dim() {
            return Err(EncoderError::GradDim {
                expected: self.joint_dim(),
                got: grad_feature.len(),
            });
        }
        let grad_raw = normalize_backward(trace.feature.vector(), trace.raw_norm, grad_feature);
        self.project_vjp(prompt, theta, &grad_raw)
    }

    fn encode_text(&self, prompt: &Prompt, theta: Option<&[f64]>) -> Result<JointFeature, EncoderError> {
        self.forward(prompt, theta).map(|t| t.feature)
    }

    /// Feature of the bare content prompt `[class]`.
    fn encode_content(&self, class_name: &str) -> Result<JointFeature, EncoderError> {
        let p = assemble_prompt(PromptKind::Content, None, Some(class_name))?;
        self.encode_text(&p, None)
    }
}

/// What an image encoder is asked to embed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ImageInput<'a> {
    /// Synthetic image: the class's content feature shifted by `sigma`
    /// relative Gaussian noise.
    Mock {
        class_name: &'a str,
        sigma: f64,
        seed: u64,
    },
    File(&'a Path),
}

pub trait ImageEncoder: Send + Sync {
    fn encode_image(&self, input: &ImageInput<'_>) -> Result<JointFeature, EncoderError>;
}

pub(crate) fn check_theta(
    prompt: &Prompt,
    theta: Option<&[f64]>,
    token_dim: usize,
) -> Result<(), EncoderError> {
    match (prompt.has_slot(), theta) {
        (true, None) => Err(EncoderError::MissingTheta(prompt.to_string())),
        (false, Some(_)) => Err(EncoderError::UnexpectedTheta(prompt.to_string())),
        (true, Some(t)) if t.len() != token_dim => Err(EncoderError::ThetaDim {
            expected: token_dim,
            got: t.len(),
        }),
        _ => Ok(()),
    }
}
