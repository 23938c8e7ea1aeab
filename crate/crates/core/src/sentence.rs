use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A pre-tokenized sentence.
///
/// `columns` carries any extra per-token fields read from a CoNLL file
/// (everything between the token and the label); it is empty when the
/// sentence came from plain text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    columns: Vec<Vec<String>>,
}

impl Sentence {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.is_empty() {
            return Err(Error::OutOfRange("sentence must have at least one token".into()));
        }
        if let Some(pos) = tokens.iter().position(String::is_empty) {
            return Err(Error::OutOfRange(format!("empty token at position {pos}")));
        }
        Ok(Sentence {
            tokens,
            columns: Vec::new(),
        })
    }

    /// Attaches per-token extra columns; one entry per token.
    pub fn with_columns(mut self, columns: Vec<Vec<String>>) -> Result<Self> {
        if columns.len() != self.tokens.len() {
            return Err(Error::LengthMismatch {
                what: "token columns",
                left: columns.len(),
                right: self.tokens.len(),
            });
        }
        self.columns = if columns.iter().all(Vec::is_empty) {
            Vec::new()
        } else {
            columns
        };
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, pos: usize) -> &str {
        &self.tokens[pos]
    }

    /// Extra columns at `pos`, empty if the sentence has none.
    pub fn columns(&self, pos: usize) -> &[String] {
        self.columns.get(pos).map_or(&[], Vec::as_slice)
    }
}

/// Label indices for one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSequence(Vec<usize>);

impl LabelSequence {
    pub fn new(labels: Vec<usize>) -> Self {
        LabelSequence(labels)
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }
}

impl Deref for LabelSequence {
    type Target = [usize];

    fn deref(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for LabelSequence {
    fn from(v: Vec<usize>) -> Self {
        LabelSequence(v)
    }
}

impl FromIterator<usize> for LabelSequence {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        LabelSequence(iter.into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_sentences_and_tokens() {
        assert!(Sentence::new(Vec::<String>::new()).is_err());
        assert!(Sentence::new(["a", ""]).is_err());
        assert_eq!(Sentence::new(["a", "b"]).unwrap().len(), 2);
    }

    #[test]
    fn columns_must_cover_every_token() {
        let s = Sentence::new(["a", "b"]).unwrap();
        assert!(s.clone().with_columns(vec![vec!["NN".into()]]).is_err());
        let s = s.with_columns(vec![vec!["NN".into()], vec!["VB".into()]]).unwrap();
        assert_eq!(s.columns(1), ["VB"]);
    }
}
