//! Failure categories and their process exit codes.

use std::fmt;

use mdenoise_core::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Other,
    ConfigParse,
    MissingInput,
    InvalidConfig,
    Shape,
    MalformedInput,
    Diverged,
}

impl Kind {
    pub fn code(self) -> u8 {
        match self {
            Kind::Other => 1,
            Kind::ConfigParse => 3,
            Kind::MissingInput => 4,
            Kind::InvalidConfig => 5,
            Kind::Shape => 6,
            Kind::MalformedInput => 7,
            Kind::Diverged => 8,
        }
    }
}

pub const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  other error
  2  command-line usage error
  3  config parse failure (bad key = value line, unknown key, unparsable value)
  4  missing input file or directory
  5  invalid configuration value or unknown language
  6  shape mismatch (checkpoint vs vocabulary or config)
  7  malformed input data (corpus, vocabulary or checkpoint format)
  8  training diverged (non-finite loss)";

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(kind: Kind, error: impl Into<anyhow::Error>) -> Self {
        Failure {
            kind,
            error: error.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

fn kind_of(e: &Error) -> Kind {
    match e {
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
            Kind::MissingInput
        }
        Error::Io { .. } => Kind::Other,
        Error::Config(_)
        | Error::InvalidLanguage(_)
        | Error::UnknownLanguage(_)
        | Error::DuplicateLanguage(_)
        | Error::VocabTooSmall { .. } => Kind::InvalidConfig,
        Error::Shape { .. } | Error::TokenOutOfRange { .. } | Error::SequenceTooLong { .. } => {
            Kind::Shape
        }
        Error::Format { .. }
        | Error::EmptyCorpus(_)
        | Error::ZeroTokens(_)
        | Error::Empty(_)
        | Error::LengthMismatch { .. } => Kind::MalformedInput,
        Error::Diverged { .. } => Kind::Diverged,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::new(kind_of(&e), e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(Kind::Other, e)
    }
}
