//! Inference, per-domain evaluation and the style diagnostics.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{argmax, ClassifierError, LinearHead};
use crate::encoder::{
    assemble_prompt, EncoderError, ImageEncoder, ImageInput, JointFeature, PromptKind, TextEncoder,
};
use crate::linalg::dot;
use crate::styles::{
    train_styles, BaselineLossConfig, PseudoStyleSet, StyleInputs, StyleTrainConfig, TrainError,
    TrainMode,
};

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "img"];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("manifest has no records")]
    EmptyManifest,
    #[error("manifest class `{0}` is not one of the head's classes")]
    UnknownClass(String),
    #[error("need at least two style features, got {0}")]
    TooFewStyles(usize),
    #[error("no category names given")]
    NoNames,
    #[error("timing needs at least one repetition")]
    NoRepeats,
    #[error("{path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Class index with the highest cosine to the normalized head rows.
pub fn predict(feature: &JointFeature, head: &LinearHead) -> Result<usize, MetricsError> {
    Ok(argmax(&head.cosines(feature.vector())?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum RecordSource {
    Mock { sigma: f64, seed: u64 },
    Path { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub domain: String,
    pub class: String,
    #[serde(flatten)]
    pub source: RecordSource,
}

impl ManifestRecord {
    pub fn image_input(&self) -> ImageInput<'_> {
        match &self.source {
            RecordSource::Mock { sigma, seed } => ImageInput::Mock {
                class_name: &self.class,
                sigma: *sigma,
                seed: *seed,
            },
            RecordSource::Path { path } => ImageInput::File(path),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    /// One mock record per (domain, class, sample), each with its own seed.
    pub fn mock<S: AsRef<str>>(
        classes: &[S],
        domains: &[(&str, f64)],
        per_class: usize,
        seed: u64,
    ) -> Self {
        let mut records = Vec::new();
        let mut counter = 0u64;
        for (domain, sigma) in domains {
            for class in classes {
                for _ in 0..per_class {
                    records.push(ManifestRecord {
                        domain: (*domain).to_owned(),
                        class: class.as_ref().to_owned(),
                        source: RecordSource::Mock {
                            sigma: *sigma,
                            seed: crate::rng::mix64(seed ^ counter),
                        },
                    });
                    counter += 1;
                }
            }
        }
        Self { records }
    }

    pub fn load_json(path: &Path) -> Result<Self, MetricsError> {
        let err = |reason: String| MetricsError::Manifest {
            path: path.to_owned(),
            reason,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }

    /// Reads a `domain/class/<image>` tree. Entries are sorted so the
    /// record order is stable.
    pub fn from_directory(root: &Path) -> Result<Self, MetricsError> {
        let err = |path: &Path, e: std::io::Error| MetricsError::Manifest {
            path: path.to_owned(),
            reason: e.to_string(),
        };
        let sorted_dirs = |dir: &Path| -> Result<Vec<PathBuf>, MetricsError> {
            let mut out: Vec<PathBuf> = fs::read_dir(dir)
                .map_err(|e| err(dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .collect();
            out.sort();
            Ok(out)
        };
        let mut records = Vec::new();
        for domain in sorted_dirs(root)?.into_iter().filter(|p| p.is_dir()) {
            for class in sorted_dirs(&domain)?.into_iter().filter(|p| p.is_dir()) {
                for file in sorted_dirs(&class)? {
                    let is_image = file
                        .extension()
                        .and_then(|e| e.to_str())
                        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
                    if file.is_file() && is_image {
                        records.push(ManifestRecord {
                            domain: file_name(&domain),
                            class: file_name(&class),
                            source: RecordSource::Path { path: file },
                        });
                    }
                }
            }
        }
        Ok(Self { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DomainCount {
    pub correct: usize,
    pub total: usize,
}

impl DomainCount {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub per_domain: BTreeMap<String, DomainCount>,
    /// Unweighted mean of the per-domain accuracies.
    pub macro_accuracy: f64,
}

impl AccuracyReport {
    /// Adds another shard's counts; merging is order independent.
    pub fn merge(&mut self, other: &AccuracyReport) {
        for (d, c) in &other.per_domain {
            let e = self.per_domain.entry(d.clone()).or_default();
            e.correct += c.correct;
            e.total += c.total;
        }
        self.finish();
    }

    fn finish(&mut self) {
        let n = self.per_domain.len();
        self.macro_accuracy = if n == 0 {
            0.0
        } else {
            self.per_domain.values().map(DomainCount::accuracy).sum::<f64>() / n as f64
        };
    }
}

/// Streams records through the image encoder and the head; memory use is
/// independent of the number of records.
pub fn evaluate<'r, I, E>(records: I, head: &LinearHead, encoder: &E) -> Result<AccuracyReport, MetricsError>
where
    I: IntoIterator<Item = &'r ManifestRecord>,
    E: ImageEncoder + ?Sized,
{
    let class_index: BTreeMap<&str, usize> = head
        .classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let mut report = AccuracyReport::default();
    for record in records {
        let label = *class_index
            .get(record.class.as_str())
            .ok_or_else(|| MetricsError::UnknownClass(record.class.clone()))?;
        let feature = encoder.encode_image(&record.image_input())?;
        let hit = predict(&feature, head)? == label;
        let e = report.per_domain.entry(record.domain.clone()).or_default();
        e.total += 1;
        e.correct += usize::from(hit);
    }
    if report.per_domain.is_empty() {
        return Err(MetricsError::EmptyManifest);
    }
    report.finish();
    Ok(report)
}

/// Mean absolute cosine over all unordered pairs.
pub fn metric_sd(features: &[JointFeature]) -> Result<f64, MetricsError> {
    let k = features.len();
    if k < 2 {
        return Err(MetricsError::TooFewStyles(k));
    }
    let mut sum = 0.0;
    for i in 1..k {
        for j in 0..i {
            sum += dot(features[i].vector(), features[j].vector()).abs();
        }
    }
    Ok(sum / (k * (k - 1) / 2) as f64)
}

/// Mean signed cosine between content and style-content features.
pub fn metric_sc<T: TextEncoder + ?Sized>(
    styles: &PseudoStyleSet,
    names: &[String],
    encoder: &T,
) -> Result<f64, MetricsError> {
    if names.is_empty() {
        return Err(MetricsError::NoNames);
    }
    let mut sum = 0.0;
    for name in names {
        let content = encoder.encode_content(name)?;
        let prompt = assemble_prompt(PromptKind::StyleContent, Some(0), Some(name))?;
        for theta in styles.rows() {
            let sc = encoder.encode_text(&prompt, Some(theta))?;
            sum += dot(content.vector(), sc.vector());
        }
    }
    Ok(sum / (names.len() * styles.k()) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub mode: TrainMode,
    pub runs_s: Vec<f64>,
    pub median_s: f64,
    pub variance_s2: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingTable {
    pub rows: Vec<TimingRow>,
}

impl TimingTable {
    pub fn row(&self, mode: TrainMode) -> Option<&TimingRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    /// `median(slow) / median(fast)`.
    pub fn speedup(&self, fast: TrainMode, slow: TrainMode) -> Option<f64> {
        Some(self.row(slow)?.median_s / self.row(fast)?.median_s)
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// Times each mode `repeats` times, interleaving modes so drift in machine
/// load hits them alike.
pub fn timing_compare<T: TextEncoder + ?Sized>(
    modes: &[TrainMode],
    config: &StyleTrainConfig,
    baseline: &BaselineLossConfig,
    inputs: StyleInputs<'_, T>,
    repeats: usize,
) -> Result<TimingTable, MetricsError> {
    if repeats == 0 {
        return Err(MetricsError::NoRepeats);
    }
    let mut runs = vec![Vec::with_capacity(repeats); modes.len()];
    let mut steps = vec![0; modes.len()];
    for _ in 0..repeats {
        for (m, &mode) in modes.iter().enumerate() {
            let start = Instant::now();
            let outcome = train_styles(mode, config, baseline, inputs)?;
            runs[m].push(start.elapsed().as_secs_f64());
            steps[m] = outcome.steps;
        }
    }
    let rows = modes
        .iter()
        .zip(runs)
        .zip(steps)
        .map(|((&mode, runs_s), steps)| TimingRow {
            mode,
            median_s: median(&runs_s),
            variance_s2: variance(&runs_s),
            runs_s,
            steps,
        })
        .collect();
    Ok(TimingTable { rows })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<AccuracyReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage1_seconds: Option<f64>,
    pub config_fingerprint: String,
}
