//! Deterministic stand-in for a frozen vision-language encoder pair.
//!
//! Text: each token hashes (FNV-1a) to a 64-bit id, whose embedding is a
//! seeded standard-normal `D`-vector scaled by `1/sqrt(D)`. The sequence
//! feature is the mean token embedding with the pseudo-word `theta` in its
//! slot, and the joint feature is `normalize(A * mean)` for a fixed seeded
//! Gaussian `P x D` matrix `A`.
//!
//! Images: `normalize(content(class) + sigma * g)` with `g ~ N(0, I/P)`, so
//! `sigma` is the expected noise-to-signal norm ratio.

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, RwLock};

use super::{
    check_theta, BackendId, EncoderError, ImageEncoder, ImageInput, JointFeature, Prompt,
    Provenance, TextEncoder, Token,
};
use crate::linalg::{axpy, Matrix};
use crate::rng::{fnv1a64, gaussian_vec, mix64, seeded, streams};

#[derive(Debug)]
pub struct MockEncoder {
    seed: u64,
    token_dim: usize,
    projection: Matrix,
    embeddings: RwLock<HashMap<u64, Arc<[f64]>>>,
}

impl MockEncoder {
    pub fn new(joint_dim: usize, token_dim: usize, seed: u64) -> Self {
        assert!(joint_dim > 0 && token_dim > 0, "encoder dimensions must be positive");
        let mut rng = seeded(seed, streams::MOCK_PROJECTION);
        let data = gaussian_vec(&mut rng, joint_dim * token_dim, 1.0);
        Self {
            seed,
            token_dim,
            projection: Matrix::from_vec(joint_dim, token_dim, data),
            embeddings: RwLock::new(HashMap::new()),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The fixed `P x D` projection.
    pub fn projection(&self) -> &Matrix {
        &self.projection
    }

    pub fn token_id(word: &str) -> u64 {
        fnv1a64(word.as_bytes())
    }

    /// Embedding of a vocabulary word: a pure function of `(seed, word)`.
    pub fn token_embedding(&self, word: &str) -> Arc<[f64]> {
        let id = Self::token_id(word);
        if let Some(e) = self.embeddings.read().expect("embedding cache poisoned").get(&id) {
            return Arc::clone(e);
        }
        let scale = 1.0 / (self.token_dim as f64).sqrt();
        let e: Arc<[f64]> = gaussian_vec(&mut seeded(self.seed, id), self.token_dim, scale).into();
        self.embeddings
            .write()
            .expect("embedding cache poisoned")
            .entry(id)
            .or_insert(e)
            .clone()
    }

    fn mean_embedding(&self, prompt: &Prompt, theta: Option<&[f64]>) -> Vec<f64> {
        let mut mean = vec![0.0; self.token_dim];
        let w = 1.0 / prompt.len() as f64;
        for t in prompt.tokens() {
            match t {
                Token::Word(word) => axpy(w, &self.token_embedding(word), &mut mean),
                Token::PseudoWord(_) => axpy(w, theta.expect("checked by caller"), &mut mean),
            }
        }
        mean
    }

    /// Image encoder over a fixed class vocabulary.
    pub fn image_encoder<I, S>(&self, classes: I) -> MockImageEncoder<'_>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        MockImageEncoder {
            text: self,
            classes: classes.into_iter().map(Into::into).collect(),
        }
    }
}

impl TextEncoder for MockEncoder {
    fn joint_dim(&self) -> usize {
        self.projection.rows()
    }

    fn token_dim(&self) -> usize {
        self.token_dim
    }

    fn backend_id(&self) -> BackendId {
        BackendId::Mock
    }

    fn fingerprint(&self) -> String {
        format!(
            "mock:p{}:d{}:seed{}",
            self.joint_dim(),
            self.token_dim,
            self.seed
        )
    }

    fn parameter_checksum(&self) -> u64 {
        // Token embeddings are a pure function of the seed; the projection is
        // the only stored parameter.
        mix64(self.projection.checksum() ^ self.seed)
    }

    fn project(&self, prompt: &Prompt, theta: Option<&[f64]>) -> Result<Vec<f64>, EncoderError> {
        check_theta(prompt, theta, self.token_dim)?;
        if prompt.is_empty() {
            return Err(EncoderError::Prompt("empty prompt".into()));
        }
        Ok(self.projection.matvec(&self.mean_embedding(prompt, theta)))
    }

    fn project_vjp(
        &self,
        prompt: &Prompt,
        theta: Option<&[f64]>,
        grad_raw: &[f64],
    ) -> Result<Vec<f64>, EncoderError> {
        check_theta(prompt, theta, self.token_dim)?;
        if grad_raw.len() != self.joint_dim() {
            return Err(EncoderError::GradDim {
                expected: self.joint_dim(),
                got: grad_raw.len(),
            });
        }
        if !prompt.has_slot() {
            return Ok(Vec::new());
        }
        let mut g = self.projection.matvec_t(grad_raw);
        let w = 1.0 / prompt.len() as f64;
        g.iter_mut().for_each(|x| *x *= w);
        Ok(g)
    }
}

/// Mock image source restricted to a known class list.
#[derive(Debug)]
pub struct MockImageEncoder<'a> {
    text: &'a MockEncoder,
    classes: HashSet<String>,
}

impl ImageEncoder for MockImageEncoder<'_> {
    fn encode_image(&self, input: &ImageInput<'_>) -> Result<JointFeature, EncoderError> {
        match *input {
            ImageInput::Mock {
                class_name,
                sigma,
                seed,
            } => {
                if !self.classes.contains(class_name) {
                    return Err(EncoderError::UnknownClass(class_name.to_owned()));
                }
                if !(sigma >= 0.0) {
                    return Err(EncoderError::NegativeSigma(sigma));
                }
                let content = self.text.encode_content(class_name)?;
                if sigma == 0.0 {
                    return Ok(JointFeature::from_raw(content.vector(), Provenance::Image)
                        .expect("content feature is unit norm"));
                }
                let p = content.dim();
                let mut rng = seeded(mix64(self.text.seed) ^ seed, streams::MOCK_IMAGE);
                let noise = gaussian_vec(&mut rng, p, 1.0 / (p as f64).sqrt());
                let mut v = content.into_vector();
                axpy(sigma, &noise, &mut v);
                JointFeature::from_raw(&v, Provenance::Image)
                    .ok_or_else(|| EncoderError::Degenerate(format!("image of {class_name}")))
            }
            ImageInput::File(path) => Err(EncoderError::Unsupported {
                backend: "mock".into(),
                what: format!("image file {}", path.display()),
            }),
        }
    }
}
