//! Maps error chains to process exit codes.

use std::fmt;
use std::io::ErrorKind;

use batstyler::array::ArrayError;
use batstyler::classifier::ClassifierError;
use batstyler::metrics::MetricsError;
use batstyler::semantics::llm::LlmError;
use batstyler::semantics::CsgError;
use batstyler::styles::TrainError;
use batstyler::Error;

pub const OTHER: u8 = 1;
pub const CONFIG: u8 = 2;
pub const MISSING_INPUT: u8 = 3;
pub const LLM: u8 = 4;
pub const DIVERGED: u8 = 5;

/// Errors the CLI raises itself.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    MissingInput(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::MissingInput(m) => write!(f, "missing input {m}"),
        }
    }
}

impl std::error::Error for CliError {}

pub fn code_for(err: &anyhow::Error) -> u8 {
    err.chain().find_map(classify).unwrap_or(OTHER)
}

fn classify(e: &(dyn std::error::Error + 'static)) -> Option<u8> {
    if let Some(e) = e.downcast_ref::<CliError>() {
        return Some(match e {
            CliError::Config(_) => CONFIG,
            CliError::MissingInput(_) => MISSING_INPUT,
        });
    }
    if let Some(e) = e.downcast_ref::<Error>() {
        return crate_error(e);
    }
    if let Some(e) = e.downcast_ref::<TrainError>() {
        return train(e);
    }
    if let Some(e) = e.downcast_ref::<ClassifierError>() {
        return classifier(e);
    }
    if let Some(e) = e.downcast_ref::<CsgError>() {
        return csg(e);
    }
    if e.is::<LlmError>() {
        return Some(LLM);
    }
    if let Some(e) = e.downcast_ref::<ArrayError>() {
        return array(e);
    }
    if let Some(e) = e.downcast_ref::<MetricsError>() {
        return metrics(e);
    }
    if let Some(e) = e.downcast_ref::<std::io::Error>() {
        return io(e);
    }
    None
}

fn io(e: &std::io::Error) -> Option<u8> {
    (e.kind() == ErrorKind::NotFound).then_some(MISSING_INPUT)
}

fn crate_error(e: &Error) -> Option<u8> {
    match e {
        Error::Config(_) | Error::Json { .. } => Some(CONFIG),
        Error::Io { source, .. } => io(source),
        Error::Train(t) => train(t),
        Error::Classifier(c) => classifier(c),
        Error::Semantics(s) => csg(s),
        Error::Array(a) => array(a),
        Error::Metrics(m) => metrics(m),
        Error::Etf(_) => Some(CONFIG),
        Error::Encoder(_) => None,
    }
}

fn train(e: &TrainError) -> Option<u8> {
    match e {
        TrainError::Config(_) => Some(CONFIG),
        TrainError::MissingInput(_) => Some(MISSING_INPUT),
        TrainError::Diverged { .. } => Some(DIVERGED),
        _ => None,
    }
}

fn classifier(e: &ClassifierError) -> Option<u8> {
    match e {
        ClassifierError::Config(_) => Some(CONFIG),
        ClassifierError::Diverged { .. } => Some(DIVERGED),
        _ => None,
    }
}

fn csg(e: &CsgError) -> Option<u8> {
    match e {
        CsgError::Llm(_) | CsgError::Unparseable(_) => Some(LLM),
        CsgError::ZeroSemantics
        | CsgError::KOutOfRange { .. }
        | CsgError::NoCategories
        | CsgError::EmptyName(_)
        | CsgError::DuplicateName(_) => Some(CONFIG),
        _ => None,
    }
}

fn array(e: &ArrayError) -> Option<u8> {
    match e {
        ArrayError::Io { source, .. } => io(source),
        _ => None,
    }
}

fn metrics(e: &MetricsError) -> Option<u8> {
    match e {
        MetricsError::Manifest { .. } => Some(MISSING_INPUT),
        MetricsError::Train(t) => train(t),
        MetricsError::Classifier(c) => classifier(c),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_errors_map_through_transparent_wrappers() {
        let e: anyhow::Error = Error::from(TrainError::Diverged {
            epoch: 1,
            step: 2,
            value: f64::NAN,
        })
        .into();
        assert_eq!(code_for(&e.context("train-styles")), DIVERGED);
        let e: anyhow::Error = Error::from(CsgError::Unparseable(String::new())).into();
        assert_eq!(code_for(&e), LLM);
        let e = anyhow::Error::new(CliError::MissingInput("x".into())).context("stage");
        assert_eq!(code_for(&e), MISSING_INPUT);
        assert_eq!(code_for(&anyhow::anyhow!("plain")), OTHER);
    }
}
