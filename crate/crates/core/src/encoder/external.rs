//! Adapter for a real pretrained contrastive vision-language model.
//!
//! The model itself (weights, tokenizer, transformer) is supplied by the
//! caller through [`VlmModel`]; this side owns normalization, slot checking
//! and image preprocessing.

use image::imageops::FilterType;
use image::DynamicImage;
use serde::{Deserialize, Serialize};

use super::{
    check_theta, BackendId, EncoderError, EncoderSpec, ImageEncoder, ImageInput, JointFeature,
    Prompt, Provenance, TextEncoder,
};
use crate::rng::fnv1a64;

/// Image preprocessing applied before the image tower.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub side: u32,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Preprocessing {
    /// 224x224, with the RGB statistics published alongside CLIP.
    fn default() -> Self {
        Self {
            side: 224,
            mean: [0.481_454_66, 0.457_827_5, 0.408_210_73],
            std: [0.268_629_54, 0.261_302_58, 0.275_777_11],
        }
    }
}

/// Resizes to `side x side` and returns a normalized CHW float tensor.
pub fn preprocess_image(img: &DynamicImage, pre: &Preprocessing) -> Vec<f32> {
    let side = pre.side;
    let rgb = img
        .resize_exact(side, side, FilterType::CatmullRom)
        .to_rgb8();
    let plane = (side * side) as usize;
    let mut out = vec![0.0f32; 3 * plane];
    for (idx, px) in rgb.pixels().enumerate() {
        for ch in 0..3 {
            let v = f32::from(px.0[ch]) / 255.0;
            out[ch * plane + idx] = (v - pre.mean[ch]) / pre.std[ch];
        }
    }
    out
}

/// A loaded text/image model pair. Errors are plain strings; they surface
/// as [`EncoderError::Backend`].
pub trait VlmModel: Send + Sync {
    fn joint_dim(&self) -> usize;

    fn token_dim(&self) -> usize;

    /// Stable identifier of the loaded weights.
    fn weights_hash(&self) -> String;

    /// Unnormalized text feature, with `pseudo` in the prompt's slot.
    fn text_project(&self, prompt: &Prompt, pseudo: Option<&[f64]>) -> Result<Vec<f64>, String>;

    /// Vector-Jacobian product of [`VlmModel::text_project`] w.r.t. `pseudo`.
    fn text_project_vjp(
        &self,
        prompt: &Prompt,
        pseudo: Option<&[f64]>,
        grad_raw: &[f64],
    ) -> Result<Vec<f64>, String>;

    /// Unnormalized image feature from a preprocessed CHW tensor.
    fn image_project(&self, pixels: &[f32], side: u32) -> Result<Vec<f64>, String>;
}

pub struct ExternalVlm<M> {
    model: M,
    preprocessing: Preprocessing,
}

impl<M: VlmModel> ExternalVlm<M> {
    /// Wraps `model`, checking its dimensions against `spec`.
    pub fn new(spec: &EncoderSpec, model: M) -> Result<Self, EncoderError> {
        if spec.joint_dim != model.joint_dim() || spec.token_dim != model.token_dim() {
            return Err(EncoderError::SpecMismatch {
                want_p: spec.joint_dim,
                want_d: spec.token_dim,
                got_p: model.joint_dim(),
                got_d: model.token_dim(),
            });
        }
        Ok(Self {
            model,
            preprocessing: spec.preprocessing.clone().unwrap_or_default(),
        })
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn preprocessing(&self) -> &Preprocessing {
        &self.preprocessing
    }
}

impl<M: VlmModel> TextEncoder for ExternalVlm<M> {
    fn joint_dim(&self) -> usize {
        self.model.joint_dim()
    }

    fn token_dim(&self) -> usize {
        self.model.token_dim()
    }

    fn backend_id(&self) -> BackendId {
        BackendId::ExternalVlm
    }

    fn fingerprint(&self) -> String {
        format!("external-vlm:{}", self.model.weights_hash())
    }

    fn parameter_checksum(&self) -> u64 {
        fnv1a64(self.model.weights_hash().as_bytes())
    }

    fn project(&self, prompt: &Prompt, theta: Option<&[f64]>) -> Result<Vec<f64>, EncoderError> {
        check_theta(prompt, theta, self.token_dim())?;
        let raw = self
            .model
            .text_project(prompt, theta)
            .map_err(EncoderError::Backend)?;
        if raw.len() != self.joint_dim() {
            return Err(EncoderError::Backend(format!(
                "text tower returned {} dims, expected {}",
                raw.len(),
                self.joint_dim()
            )));
        }
        Ok(raw)
    }

    fn project_vjp(
        &self,
        prompt: &Prompt,
        theta: Option<&[f64]>,
        grad_raw: &[f64],
    ) -> Result<Vec<f64>, EncoderError> {
        check_theta(prompt, theta, self.token_dim())?;
        self.model
            .text_project_vjp(prompt, theta, grad_raw)
            .map_err(EncoderError::Backend)
    }
}

impl<M: VlmModel> ImageEncoder for ExternalVlm<M> {
    fn encode_image(&self, input: &ImageInput<'_>) -> Result<JointFeature, EncoderError> {
        let ImageInput::File(path) = *input else {
            return Err(EncoderError::Unsupported {
                backend: "external-vlm".into(),
                what: "synthetic mock images".into(),
            });
        };
        let img = image::open(path).map_err(|e| EncoderError::Image {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let pixels = preprocess_image(&img, &self.preprocessing);
        let raw = self
            .model
            .image_project(&pixels, self.preprocessing.side)
            .map_err(EncoderError::Backend)?;
        JointFeature::from_raw(&raw, Provenance::Image)
            .ok_or_else(|| EncoderError::Degenerate(path.display().to_string()))
    }
}
