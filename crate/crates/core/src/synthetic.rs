//! Synthetic category vocabularies with a known coarse grouping.
//!
//! Category `i` is `"<modifier_i> <noun_g>"` with `g = i % groups`. Members
//! of a group share the noun token, so under the mock encoder their content
//! features cluster by group.

use serde::{Deserialize, Serialize};

use crate::semantics::{CategorySet, CsgError};

const NOUNS: &[&str] = &[
    "cat", "car", "bird", "tree", "boat", "chair", "fish", "house", "lamp", "horse", "guitar",
    "flower", "truck", "mountain", "shoe", "clock",
];

const SYLLABLES: &[&str] = &["ka", "lo", "mi", "ru", "te", "vo", "zi", "na", "pe", "su"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub count: usize,
    pub groups: usize,
}

impl SyntheticSpec {
    pub fn build(&self) -> Result<SyntheticCategories, CsgError> {
        synthetic_categories(self.count, self.groups)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCategories {
    pub categories: CategorySet,
    /// Group of each category, aligned with `categories.names()`.
    pub groups: Vec<usize>,
}

/// Three-syllable modifier word, unique for `i < 1000`.
fn modifier(i: usize) -> String {
    let n = SYLLABLES.len();
    let mut word = String::new();
    let mut x = i;
    for _ in 0..3 {
        word.push_str(SYLLABLES[x % n]);
        x /= n;
    }
    if x > 0 {
        word.push_str(&x.to_string());
    }
    word
}

fn noun(g: usize) -> String {
    match NOUNS.get(g) {
        Some(n) => (*n).to_owned(),
        None => format!("thing{g}"),
    }
}

pub fn synthetic_categories(count: usize, groups: usize) -> Result<SyntheticCategories, CsgError> {
    let groups = groups.max(1);
    let names: Vec<String> = (0..count)
        .map(|i| format!("{} {}", modifier(i), noun(i % groups)))
        .collect();
    Ok(SyntheticCategories {
        categories: CategorySet::new(names)?,
        groups: (0..count).map(|i| i % groups).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_grouped() {
        let s = synthetic_categories(200, 4).unwrap();
        assert_eq!(s.categories.len(), 200);
        assert_eq!(s.categories.names()[0], "kakaka cat");
        assert_eq!(s.categories.names()[5], "vokaka car");
        assert_eq!(s.groups.iter().filter(|&&g| g == 3).count(), 50);
    }
}
