//! The run configuration shared by every CLI stage.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::classifier::ClassifierConfig;
use crate::encoder::EncoderSpec;
use crate::error::{Error, Result};
use crate::semantics::llm::HttpLlmConfig;
use crate::semantics::{CategorySet, CsgConfig};
use crate::styles::{BaselineLossConfig, StyleTrainConfig};
use crate::synthetic::SyntheticSpec;

/// Where the category names come from. Exactly one field should be set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CategorySource {
    pub names: Option<Vec<String>>,
    /// Text file with one name per line.
    pub file: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
}

impl CategorySource {
    pub fn load(&self) -> Result<CategorySet> {
        let set = match (&self.names, &self.file, &self.synthetic) {
            (Some(n), None, None) => CategorySet::new(n.iter().cloned())?,
            (None, Some(path), None) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                CategorySet::new(text.lines().map(str::trim).filter(|l| !l.is_empty()))?
            }
            (None, None, Some(spec)) => spec.build()?.categories,
            _ => {
                return Err(Error::Config(
                    "categories: set exactly one of `names`, `file`, `synthetic`".into(),
                ))
            }
        };
        Ok(set)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub encoder: EncoderSpec,
    pub categories: CategorySource,
    pub csg: CsgConfig,
    /// HTTP endpoint for the `llm` extractor.
    pub llm: HttpLlmConfig,
    /// Replay fixture that stands in for the HTTP endpoint when set.
    pub llm_fixture: Option<PathBuf>,
    pub styles: StyleTrainConfig,
    pub baseline: BaselineLossConfig,
    pub classifier: ClassifierConfig,
    pub output_dir: PathBuf,
    /// Global seed. [`RunConfig::resolve`] copies it into every stage.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderSpec::mock(64, 32, 0),
            categories: CategorySource::default(),
            csg: CsgConfig::default(),
            llm: HttpLlmConfig::default(),
            llm_fixture: None,
            styles: StyleTrainConfig::default(),
            baseline: BaselineLossConfig::default(),
            classifier: ClassifierConfig::default(),
            output_dir: PathBuf::from("runs/default"),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    /// Applies `key=value` overrides. Keys are dotted paths into the JSON
    /// form (`styles.epochs=50`); values parse as JSON and fall back to a
    /// plain string.
    pub fn with_overrides<S: AsRef<str>>(self, overrides: &[S]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self);
        }
        let mut tree = serde_json::to_value(&self).expect("config serializes");
        for o in overrides {
            let o = o.as_ref().trim_start_matches("--");
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
            set_path(&mut tree, key, value)?;
        }
        serde_json::from_value(tree).map_err(|e| Error::Config(format!("after overrides: {e}")))
    }

    /// Copies the global seed into the stage configs and validates them.
    pub fn resolve(mut self) -> Result<Self> {
        self.csg.seed = self.seed;
        self.styles.seed = self.seed;
        self.classifier.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate().map_err(Error::Config)?;
        self.csg.validate()?;
        self.styles.validate()?;
        self.baseline.validate()?;
        self.classifier.validate()?;
        Ok(())
    }

    /// Stable hash of the JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        format!("{:016x}", crate::rng::fnv1a64(&json))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("config serializes");
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }
}

fn set_path(tree: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("`{key}`: `{part}` is not inside an object")))?;
        if i + 1 == parts.len() {
            if !obj.contains_key(*part) {
                return Err(Error::Config(format!("unknown config key `{key}`")));
            }
            obj.insert((*part).to_owned(), value);
            return Ok(());
        }
        let child = obj
            .get_mut(*part)
            .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
        if child.is_null() {
            *child = Value::Object(Default::default());
        }
        node = child;
    }
    unreachable!("split always yields one part")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_fields() {
        let c = RunConfig::default()
            .with_overrides(&["--styles.epochs=7", "csg.extractor=llm", "output_dir=out/x"])
            .unwrap();
        assert_eq!(c.styles.epochs, 7);
        assert_eq!(c.csg.extractor, crate::semantics::ExtractorKind::Llm);
        assert_eq!(c.output_dir, PathBuf::from("out/x"));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::default().with_overrides(&["styles.epoch=7"]).is_err());
        assert!(RunConfig::default().with_overrides(&["styles.epochs=abc"]).is_err());
        assert!(RunConfig::default().with_overrides(&["styles"]).is_err());
    }

    #[test]
    fn resolve_propagates_seed_and_validates() {
        let c = RunConfig {
            seed: 9,
            ..Default::default()
        }
        .resolve()
        .unwrap();
        assert_eq!((c.csg.seed, c.styles.seed, c.classifier.seed), (9, 9, 9));
        let bad = RunConfig::default().with_overrides(&["styles.batch_size=3"]).unwrap();
        assert!(bad.resolve().is_err());
    }
}
