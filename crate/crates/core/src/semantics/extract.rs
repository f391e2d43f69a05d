//! Coarse-semantic extraction for one cluster of category names.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::llm::LlmClient;
use super::CsgError;
use crate::linalg::axpy;

/// Names and content features of one cluster.
#[derive(Debug, Clone, Copy)]
pub struct ClusterView<'a> {
    pub names: &'a [String],
    pub features: &'a [Vec<f64>],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Extraction {
    Terms(Vec<String>),
    /// The extractor found nothing in common.
    Nothing,
}

pub trait CoarseExtractor: Send + Sync {
    /// Stable identifier, part of the cache key.
    fn id(&self) -> String;

    /// Up to `c` coarse terms for the cluster, or [`Extraction::Nothing`].
    fn extract(&self, cluster: ClusterView<'_>, c: usize) -> Result<Extraction, CsgError>;
}

/// Offline extractor: the `c` member names nearest the cluster centroid.
#[derive(Debug, Default, Clone, Copy)]
pub struct StubExtractor;

impl CoarseExtractor for StubExtractor {
    fn id(&self) -> String {
        "stub-medoid".into()
    }

    fn extract(&self, cluster: ClusterView<'_>, c: usize) -> Result<Extraction, CsgError> {
        if cluster.names.is_empty() {
            return Err(CsgError::EmptyCluster);
        }
        let dim = cluster.features[0].len();
        let mut centroid = vec![0.0; dim];
        for f in cluster.features {
            axpy(1.0 / cluster.features.len() as f64, f, &mut centroid);
        }
        let mut order: Vec<(f64, usize)> = cluster
            .features
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let d: f64 = f.iter().zip(&centroid).map(|(a, b)| (a - b) * (a - b)).sum();
                (d, i)
            })
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(Extraction::Terms(
            order
                .into_iter()
                .take(c)
                .map(|(_, i)| cluster.names[i].clone())
                .collect(),
        ))
    }
}

fn number_word(c: usize) -> String {
    const WORDS: [&str; 11] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    ];
    WORDS.get(c).map_or_else(|| c.to_string(), |w| (*w).to_owned())
}

/// The query sent for one cluster; the member list is rendered as a
/// bracketed list of single-quoted names.
pub fn render_query(members: &[String], c: usize) -> String {
    let list = members
        .iter()
        .map(|m| format!("'{m}'"))
        .collect::<Vec<_>>()
        .join(", ");
    format!(
        "Q: Tell me [{list}] have in common with {} words. If not, it can be nothing.",
        number_word(c)
    )
}

fn mentions_nothing(s: &str) -> bool {
    s.to_lowercase()
        .split(|ch: char| !ch.is_alphanumeric())
        .any(|w| w == "nothing")
}

/// Parses a comma/newline/semicolon separated answer into at most `c`
/// distinct terms. Any term mentioning "nothing" turns the whole answer
/// into [`Extraction::Nothing`].
pub fn parse_response(text: &str, c: usize) -> Result<Extraction, CsgError> {
    let mut body = text.trim();
    for prefix in ["a:", "answer:"] {
        if body.len() >= prefix.len() && body[..prefix.len()].eq_ignore_ascii_case(prefix) {
            body = body[prefix.len()..].trim_start();
        }
    }
    let mut terms: Vec<String> = Vec::new();
    for raw in body.split([',', '\n', ';']) {
        let t = raw
            .trim()
            .trim_start_matches(|ch: char| ch.is_ascii_digit())
            .trim_start_matches(['.', ')'])
            .trim_matches(|ch: char| {
                ch.is_whitespace() || matches!(ch, '-' | '*' | '"' | '\'' | '.' | '`' | '[' | ']')
            })
            .to_owned();
        if t.is_empty() {
            continue;
        }
        if mentions_nothing(&t) {
            return Ok(Extraction::Nothing);
        }
        if !terms.iter().any(|x| x.eq_ignore_ascii_case(&t)) {
            terms.push(t);
        }
    }
    if terms.is_empty() {
        return Err(CsgError::Unparseable(text.to_owned()));
    }
    terms.truncate(c);
    Ok(Extraction::Terms(terms))
}

/// Extraction through an LLM completion endpoint.
pub struct LlmExtractor<C> {
    client: C,
    label: String,
}

impl<C: LlmClient> LlmExtractor<C> {
    pub fn new(client: C, label: impl Into<String>) -> Self {
        Self {
            client,
            label: label.into(),
        }
    }

    pub fn client(&self) -> &C {
        &self.client
    }
}

impl<C: LlmClient> CoarseExtractor for LlmExtractor<C> {
    fn id(&self) -> String {
        format!("llm:{}", self.label)
    }

    fn extract(&self, cluster: ClusterView<'_>, c: usize) -> Result<Extraction, CsgError> {
        if cluster.names.is_empty() {
            return Err(CsgError::EmptyCluster);
        }
        let query = render_query(cluster.names, c);
        let answer = self.client.complete(&query)?;
        parse_response(&answer, c)
    }
}

/// Persistent cache of extraction results keyed by
/// `(sorted member set, C, extractor id)`.
pub struct CachedExtractor<E> {
    inner: E,
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, Extraction>>,
    write_lock: Mutex<()>,
}

impl<E: CoarseExtractor> CachedExtractor<E> {
    /// In-memory cache, optionally backed by a JSON file that is loaded now
    /// and rewritten on every insert.
    pub fn new(inner: E, path: Option<&Path>) -> Result<Self, CsgError> {
        let entries = match path {
            Some(p) if p.exists() => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CsgError::Cache(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CsgError::Cache(format!("{}: {e}", p.display())))?
            }
            _ => HashMap::new(),
        };
        Ok(Self {
            inner,
            path: path.map(Path::to_owned),
            entries: RwLock::new(entries),
            write_lock: Mutex::new(()),
        })
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn key(&self, members: &[String], c: usize) -> String {
        let mut sorted: Vec<&str> = members.iter().map(String::as_str).collect();
        sorted.sort_unstable();
        let mut h = Sha256::new();
        h.update(self.inner.id().as_bytes());
        h.update([0]);
        h.update(c.to_le_bytes());
        for m in sorted {
            h.update([0]);
            h.update(m.as_bytes());
        }
        hex::encode(h.finalize())
    }

    fn persist(&self) -> Result<(), CsgError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let snapshot: std::collections::BTreeMap<String, Extraction> = self
            .entries
            .read()
            .expect("cache poisoned")
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let text = serde_json::to_string_pretty(&snapshot).expect("cache serializes");
        std::fs::write(path, text + "\n").map_err(|e| CsgError::Cache(format!("{}: {e}", path.display())))
    }
}

impl<E: CoarseExtractor> CoarseExtractor for CachedExtractor<E> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn extract(&self, cluster: ClusterView<'_>, c: usize) -> Result<Extraction, CsgError> {
        let key = self.key(cluster.names, c);
        if let Some(hit) = self.entries.read().expect("cache poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let result = self.inner.extract(cluster, c)?;
        let _guard = self.write_lock.lock().expect("cache writer poisoned");
        self.entries
            .write()
            .expect("cache poisoned")
            .insert(key, result.clone());
        self.persist()?;
        Ok(result)
    }
}

impl<E: CoarseExtractor + ?Sized> CoarseExtractor for &E {
    fn id(&self) -> String {
        (**self).id()
    }

    fn extract(&self, cluster: ClusterView<'_>, c: usize) -> Result<Extraction, CsgError> {
        (**self).extract(cluster, c)
    }
}

impl<E: CoarseExtractor + ?Sized> CoarseExtractor for Box<E> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn extract(&self, cluster: ClusterView<'_>, c: usize) -> Result<Extraction, CsgError> {
        (**self).extract(cluster, c)
    }
}
