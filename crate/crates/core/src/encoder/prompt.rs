use std::fmt;

use serde::{Deserialize, Serialize};

use super::EncoderError;

/// The three prompt shapes used for style synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptKind {
    /// `a S style of a`
    Style,
    /// `[class]`
    Content,
    /// `a S style of a [class]`
    StyleContent,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Token {
    Word(String),
    /// Slot filled by the learnable embedding of pseudo-style `S_i`.
    PseudoWord(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Prompt {
    kind: PromptKind,
    tokens: Vec<Token>,
    slot: Option<usize>,
    class_span: Option<(usize, usize)>,
}

const STYLE_PREFIX: [&str; 2] = ["a", "a"];
const STYLE_INFIX: [&str; 2] = ["style", "of"];

pub fn assemble_prompt(
    kind: PromptKind,
    style_index: Option<usize>,
    class_name: Option<&str>,
) -> Result<Prompt, EncoderError> {
    let class_words = match class_name {
        Some(name) => {
            let words: Vec<&str> = name.split_whitespace().collect();
            if words.is_empty() {
                return Err(EncoderError::Prompt("empty class name".into()));
            }
            Some(words)
        }
        None => None,
    };

    let (needs_style, needs_class) = match kind {
        PromptKind::Style => (true, false),
        PromptKind::Content => (false, true),
        PromptKind::StyleContent => (true, true),
    };
    if needs_style != style_index.is_some() {
        return Err(EncoderError::Prompt(format!(
            "{kind:?} prompt {} a pseudo-style index",
            if needs_style { "requires" } else { "does not take" }
        )));
    }
    if needs_class != class_words.is_some() {
        return Err(EncoderError::Prompt(format!(
            "{kind:?} prompt {} a class name",
            if needs_class { "requires" } else { "does not take" }
        )));
    }

    let mut tokens = Vec::new();
    let mut slot = None;
    if let Some(i) = style_index {
        tokens.push(Token::Word(STYLE_PREFIX[0].into()));
        slot = Some(tokens.len());
        tokens.push(Token::PseudoWord(i));
        tokens.extend(STYLE_INFIX.iter().map(|w| Token::Word((*w).into())));
        tokens.push(Token::Word(STYLE_PREFIX[1].into()));
    }
    let mut class_span = None;
    if let Some(words) = class_words {
        let start = tokens.len();
        tokens.extend(words.into_iter().map(|w| Token::Word(w.to_owned())));
        class_span = Some((start, tokens.len()));
    }
    Ok(Prompt {
        kind,
        tokens,
        slot,
        class_span,
    })
}

impl Prompt {
    pub fn kind(&self) -> PromptKind {
        self.kind
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    /// Position of the pseudo-word, if any.
    pub fn slot(&self) -> Option<usize> {
        self.slot
    }

    pub fn has_slot(&self) -> bool {
        self.slot.is_some()
    }

    pub fn class_tokens(&self) -> &[Token] {
        match self.class_span {
            Some((a, b)) => &self.tokens[a..b],
            None => &[],
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl fmt::Display for Prompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (n, t) in self.tokens.iter().enumerate() {
            if n > 0 {
                f.write_str(" ")?;
            }
            match t {
                Token::Word(w) => f.write_str(w)?,
                Token::PseudoWord(i) => write!(f, "<S{i}>")?,
            }
        }
        Ok(())
    }
}
