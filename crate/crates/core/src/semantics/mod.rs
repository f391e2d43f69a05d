//! Coarse semantic generation.
//!
//! Category names are embedded with the content prompt, clustered with
//! KMeans++ (the number of clusters chosen by peak silhouette), and each
//! cluster is summarized by up to `C` coarse terms. A cluster whose
//! extractor answers "nothing" is split in two and asked again, down to
//! singletons, which stand for themselves.

mod extract;
mod kmeans;
pub mod llm;

use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use extract::{
    parse_response, render_query, CachedExtractor, ClusterView, CoarseExtractor, Extraction,
    LlmExtractor, StubExtractor,
};
pub use kmeans::{cluster, cosine_distance, select_k, silhouette, Clustering, KSelection};

use crate::encoder::{EncoderError, TextEncoder};
use llm::LlmError;

pub const NOTHING: &str = "nothing";

#[derive(Debug, Error)]
pub enum CsgError {
    #[error("category set is empty")]
    NoCategories,
    #[error("category name at position {0} is empty")]
    EmptyName(usize),
    #[error("duplicate category `{0}`")]
    DuplicateName(String),
    #[error("k={k} is outside [2, {}] for n={n}", n.saturating_sub(1))]
    KOutOfRange { k: usize, n: usize },
    #[error("silhouette selection needs at least 3 categories, got {0}")]
    TooFewCategories(usize),
    #[error("all features are identical; silhouette is undefined")]
    Degenerate,
    #[error("cannot extract semantics from an empty cluster")]
    EmptyCluster,
    #[error("unparseable extractor response: {0:?}")]
    Unparseable(String),
    #[error("semantics_per_cluster must be at least 1")]
    ZeroSemantics,
    #[error("extraction cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

/// Ordered, distinct, non-empty category names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct CategorySet {
    names: Vec<String>,
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl CategorySet {
    /// Whitespace is collapsed; names must be unique afterwards.
    pub fn new<I, S>(names: I) -> Result<Self, CsgError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (i, n) in names.into_iter().enumerate() {
            let n = normalize_ws(n.as_ref());
            if n.is_empty() {
                return Err(CsgError::EmptyName(i));
            }
            if !seen.insert(n.clone()) {
                return Err(CsgError::DuplicateName(n));
            }
            out.push(n);
        }
        if out.is_empty() {
            return Err(CsgError::NoCategories);
        }
        Ok(Self { names: out })
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

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl TryFrom<Vec<String>> for CategorySet {
    type Error = CsgError;

    fn try_from(v: Vec<String>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<CategorySet> for Vec<String> {
    fn from(c: CategorySet) -> Self {
        c.names
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractorKind {
    Llm,
    Stub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsgConfig {
    pub semantics_per_cluster: usize,
    /// Upper end of the silhouette search; the range is `2..=min(N-1, k_max)`.
    pub k_max: usize,
    pub restarts: usize,
    pub extractor: ExtractorKind,
    pub cache_path: Option<PathBuf>,
    /// Concurrent extractions across clusters.
    pub fan_out: usize,
    pub seed: u64,
}

impl Default for CsgConfig {
    fn default() -> Self {
        Self {
            semantics_per_cluster: 3,
            k_max: 20,
            restarts: 10,
            extractor: ExtractorKind::Stub,
            cache_path: None,
            fan_out: 4,
            seed: 0,
        }
    }
}

impl CsgConfig {
    pub fn validate(&self) -> Result<(), CsgError> {
        if self.semantics_per_cluster == 0 {
            return Err(CsgError::ZeroSemantics);
        }
        if self.k_max < 2 {
            return Err(CsgError::KOutOfRange { k: self.k_max, n: 0 });
        }
        Ok(())
    }
}

/// One leaf of the clustering: its members and the coarse terms that
/// replace them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafCluster {
    /// Dotted path; `"2.1"` is the second half of top-level cluster 2
    /// after one split.
    pub id: String,
    pub members: Vec<String>,
    pub coarse: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CssProvenance {
    pub encoder: String,
    pub extractor: String,
    pub semantics_per_cluster: usize,
    pub chosen_k: usize,
    pub silhouette: Vec<(usize, f64)>,
    pub splits: usize,
    pub seed: u64,
}

/// The deduplicated coarse semantic set with its cluster provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseSemanticSet {
    pub clusters: Vec<LeafCluster>,
    pub css: Vec<String>,
    pub provenance: CssProvenance,
}

/// A `(coarse term, leaf cluster id, members)` row.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseEntry<'a> {
    pub coarse: &'a str,
    pub cluster: &'a str,
    pub members: &'a [String],
}

impl CoarseSemanticSet {
    pub fn terms(&self) -> &[String] {
        &self.css
    }

    pub fn len(&self) -> usize {
        self.css.len()
    }

    pub fn is_empty(&self) -> bool {
        self.css.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = CoarseEntry<'_>> {
        self.clusters.iter().flat_map(|c| {
            c.coarse.iter().map(move |t| CoarseEntry {
                coarse: t,
                cluster: &c.id,
                members: &c.members,
            })
        })
    }

    /// A set built directly from terms, for callers that already have one.
    pub fn from_terms<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let css: Vec<String> = terms.into_iter().map(Into::into).collect();
        Self {
            clusters: vec![LeafCluster {
                id: "0".into(),
                members: css.clone(),
                coarse: css.clone(),
            }],
            css,
            provenance: CssProvenance {
                encoder: String::new(),
                extractor: "given".into(),
                semantics_per_cluster: 0,
                chosen_k: 1,
                silhouette: Vec::new(),
                splits: 0,
                seed: 0,
            },
        }
    }
}

struct Resolver<'a, E: ?Sized> {
    extractor: &'a E,
    c: usize,
    seed: u64,
    restarts: usize,
    splits: AtomicUsize,
}

impl<E: CoarseExtractor + ?Sized> Resolver<'_, E> {
    fn resolve(
        &self,
        id: String,
        names: Vec<String>,
        features: Vec<Vec<f64>>,
        out: &mut Vec<LeafCluster>,
    ) -> Result<(), CsgError> {
        if names.len() == 1 {
            // A category literally called "nothing" keeps its cluster but
            // contributes no coarse term.
            let coarse = names
                .iter()
                .filter(|n| !n.eq_ignore_ascii_case(NOTHING))
                .cloned()
                .collect();
            out.push(LeafCluster {
                id,
                coarse,
                members: names,
            });
            return Ok(());
        }
        let view = ClusterView {
            names: &names,
            features: &features,
        };
        match self.extractor.extract(view, self.c)? {
            Extraction::Terms(terms) => {
                let coarse: Vec<String> = terms
                    .into_iter()
                    .filter(|t| !t.trim().eq_ignore_ascii_case(NOTHING))
                    .collect();
                if coarse.is_empty() {
                    return Err(CsgError::Unparseable(format!("no usable terms for {names:?}")));
                }
                out.push(LeafCluster {
                    id,
                    members: names,
                    coarse,
                });
                Ok(())
            }
            Extraction::Nothing => {
                self.splits.fetch_add(1, Ordering::SeqCst);
                let halves: Vec<Vec<usize>> = if names.len() == 2 {
                    vec![vec![0], vec![1]]
                } else {
                    kmeans::kmeans(&features, 2, self.seed ^ crate::rng::fnv1a64(id.as_bytes()), self.restarts)
                        .members()
                };
                for (h, idx) in halves.into_iter().enumerate() {
                    self.resolve(
                        format!("{id}.{h}"),
                        idx.iter().map(|&i| names[i].clone()).collect(),
                        idx.iter().map(|&i| features[i].clone()).collect(),
                        out,
                    )?;
                }
                Ok(())
            }
        }
    }
}

/// Embeds, clusters, and extracts the coarse semantic set.
pub fn build_css<T, E>(
    categories: &CategorySet,
    encoder: &T,
    config: &CsgConfig,
    extractor: &E,
) -> Result<CoarseSemanticSet, CsgError>
where
    T: TextEncoder + ?Sized,
    E: CoarseExtractor + ?Sized,
{
    config.validate()?;
    let names = categories.names();
    let features: Vec<Vec<f64>> = names
        .iter()
        .map(|n| encoder.encode_content(n).map(|f| f.into_vector()))
        .collect::<Result<_, _>>()?;

    let (chosen_k, silhouette, groups): (usize, Vec<(usize, f64)>, Vec<Vec<usize>>) = match names.len() {
        1 | 2 => (1, Vec::new(), vec![(0..names.len()).collect()]),
        _ => {
            let sel = select_k(&features, config.k_max, config.seed, config.restarts)?;
            (sel.k, sel.scores, sel.clustering.members())
        }
    };

    let resolver = Resolver {
        extractor,
        c: config.semantics_per_cluster,
        seed: config.seed,
        restarts: config.restarts,
        splits: AtomicUsize::new(0),
    };

    // Top-level clusters are extracted concurrently in waves of `fan_out`.
    let mut per_group: Vec<Result<Vec<LeafCluster>, CsgError>> = Vec::with_capacity(groups.len());
    let fan_out = config.fan_out.max(1);
    let jobs: Vec<(String, Vec<String>, Vec<Vec<f64>>)> = groups
        .iter()
        .enumerate()
        .map(|(g, idx)| {
            (
                g.to_string(),
                idx.iter().map(|&i| names[i].clone()).collect(),
                idx.iter().map(|&i| features[i].clone()).collect(),
            )
        })
        .collect();
    for wave in jobs.chunks(fan_out) {
        if wave.len() == 1 || fan_out == 1 {
            for (id, n, f) in wave {
                let mut out = Vec::new();
                per_group.push(
                    resolver
                        .resolve(id.clone(), n.clone(), f.clone(), &mut out)
                        .map(|_| out),
                );
            }
            continue;
        }
        std::thread::scope(|s| {
            let handles: Vec<_> = wave
                .iter()
                .map(|(id, n, f)| {
                    let r = &resolver;
                    s.spawn(move || {
                        let mut out = Vec::new();
                        r.resolve(id.clone(), n.clone(), f.clone(), &mut out).map(|_| out)
                    })
                })
                .collect();
            for h in handles {
                per_group.push(h.join().expect("extraction worker panicked"));
            }
        });
    }

    let mut clusters = Vec::new();
    for r in per_group {
        clusters.extend(r?);
    }
    let mut css: Vec<String> = Vec::new();
    for c in &clusters {
        for t in &c.coarse {
            if !css.iter().any(|x| x.eq_ignore_ascii_case(t)) {
                css.push(t.clone());
            }
        }
    }

    if css.is_empty() {
        return Err(CsgError::Unparseable("extraction produced an empty coarse set".into()));
    }

    Ok(CoarseSemanticSet {
        clusters,
        css,
        provenance: CssProvenance {
            encoder: encoder.fingerprint(),
            extractor: extractor.id(),
            semantics_per_cluster: config.semantics_per_cluster,
            chosen_k,
            silhouette,
            splits: resolver.splits.load(Ordering::SeqCst),
            seed: config.seed,
        },
    })
}
