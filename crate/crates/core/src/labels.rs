//! Label inventories and the chunk structure encoded in label names.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of the label that marks tokens outside every entity.
pub const OUTSIDE: &str = "O";

/// Segmentation scheme of a label inventory.
///
/// `Bio` uses `B-TYPE` to open an entity and `I-TYPE` to continue it.
/// `Io` has no begin tags: labels are `I-TYPE` or a bare `TYPE`, and a maximal
/// run of one type forms a single entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Bio,
    Io,
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bio" | "iob2" | "bo" => Ok(Scheme::Bio),
            "io" => Ok(Scheme::Io),
            other => Err(Error::Config(format!("unknown tagging scheme `{other}`"))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Bio => f.write_str("bio"),
            Scheme::Io => f.write_str("io"),
        }
    }
}

/// Chunk role of a label, in conlleval's vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChunkTag {
    Outside,
    Begin,
    Inside,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawLabelSet", into = "RawLabelSet")]
pub struct LabelSet {
    labels: Vec<String>,
    scheme: Scheme,
    entity_types: Vec<String>,
    parts: Vec<(ChunkTag, usize)>,
    outside: usize,
    lookup: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct RawLabelSet {
    labels: Vec<String>,
    scheme: Scheme,
}

impl TryFrom<RawLabelSet> for LabelSet {
    type Error = Error;

    fn try_from(raw: RawLabelSet) -> Result<Self> {
        LabelSet::new(raw.labels, raw.scheme)
    }
}

impl From<LabelSet> for RawLabelSet {
    fn from(set: LabelSet) -> Self {
        RawLabelSet {
            labels: set.labels,
            scheme: set.scheme,
        }
    }
}

impl LabelSet {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>, scheme: Scheme) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() < 2 {
            return Err(Error::LabelSet(format!("need at least 2 labels, got {}", labels.len())));
        }
        let mut lookup = HashMap::with_capacity(labels.len());
        let mut entity_types: Vec<String> = Vec::new();
        let mut parts = Vec::with_capacity(labels.len());
        let mut outside = None;
        for (idx, label) in labels.iter().enumerate() {
            if label.is_empty() || label.chars().any(char::is_whitespace) {
                return Err(Error::LabelSet(format!("bad label name `{label}`")));
            }
            if lookup.insert(label.clone(), idx).is_some() {
                return Err(Error::LabelSet(format!("duplicate label `{label}`")));
            }
            let (tag, ty) = split_label(label, scheme)?;
            if tag == ChunkTag::Outside {
                outside = Some(idx);
                parts.push((tag, usize::MAX));
                continue;
            }
            let type_idx = match entity_types.iter().position(|t| t == ty) {
                Some(i) => i,
                None => {
                    entity_types.push(ty.to_string());
                    entity_types.len() - 1
                }
            };
            parts.push((tag, type_idx));
        }
        let outside = outside.ok_or_else(|| Error::LabelSet(format!("missing outside label `{OUTSIDE}`")))?;
        Ok(LabelSet {
            labels,
            scheme,
            entity_types,
            parts,
            outside,
            lookup,
        })
    }

    /// Comma-separated label names, e.g. `O,B-PER,I-PER`.
    pub fn parse(text: &str, scheme: Scheme) -> Result<Self> {
        LabelSet::new(text.split(',').map(str::trim).filter(|s| !s.is_empty()), scheme)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn entity_types(&self) -> &[String] {
        &self.entity_types
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.labels[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.lookup.get(name).copied()
    }

    pub fn outside(&self) -> usize {
        self.outside
    }

    /// Chunk tag and entity type of a label (`None` type for the outside label).
    pub fn chunk(&self, idx: usize) -> (ChunkTag, Option<&str>) {
        let (tag, ty) = self.parts[idx];
        match tag {
            ChunkTag::Outside => (tag, None),
            _ => (tag, Some(self.entity_types[ty].as_str())),
        }
    }

    pub(crate) fn chunk_type_index(&self, idx: usize) -> Option<usize> {
        let (tag, ty) = self.parts[idx];
        (tag != ChunkTag::Outside).then_some(ty)
    }

    /// Label index for a chunk role, if the inventory has one.
    pub fn find(&self, tag: ChunkTag, entity_type: &str) -> Option<usize> {
        self.parts.iter().enumerate().find_map(|(i, &(t, ty))| {
            (t == tag && t != ChunkTag::Outside && self.entity_types[ty] == entity_type).then_some(i)
        })
    }

    pub fn check_sequence(&self, labels: &[usize]) -> Result<()> {
        match labels.iter().find(|&&l| l >= self.len()) {
            Some(bad) => Err(Error::OutOfRange(format!(
                "label index {bad} with {} labels",
                self.len()
            ))),
            None => Ok(()),
        }
    }
}

fn split_label(label: &str, scheme: Scheme) -> Result<(ChunkTag, &str)> {
    if label == OUTSIDE {
        return Ok((ChunkTag::Outside, ""));
    }
    let split = label.split_once('-');
    let bad = || Error::LabelSet(format!("label `{label}` does not fit the {scheme} scheme"));
    match (scheme, split) {
        (Scheme::Bio, Some(("B", ty))) if !ty.is_empty() => Ok((ChunkTag::Begin, ty)),
        (Scheme::Bio, Some(("I", ty))) if !ty.is_empty() => Ok((ChunkTag::Inside, ty)),
        (Scheme::Io, Some(("I", ty))) if !ty.is_empty() => Ok((ChunkTag::Inside, ty)),
        (Scheme::Io, None) => Ok((ChunkTag::Inside, label)),
        _ => Err(bad()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bio_inventory_decomposes() {
        let set = LabelSet::parse("O,B-PER,I-PER,B-LOC,I-LOC", Scheme::Bio).unwrap();
        assert_eq!(set.len(), 5);
        assert_eq!(set.outside(), 0);
        assert_eq!(set.entity_types(), ["PER", "LOC"]);
        assert_eq!(set.chunk(3), (ChunkTag::Begin, Some("LOC")));
        assert_eq!(set.find(ChunkTag::Inside, "PER"), Some(2));
    }

    #[test]
    fn io_accepts_bare_types() {
        let set = LabelSet::parse("PER,O,I-LOC", Scheme::Io).unwrap();
        assert_eq!(set.outside(), 1);
        assert_eq!(set.chunk(0), (ChunkTag::Inside, Some("PER")));
        assert_eq!(set.chunk(2), (ChunkTag::Inside, Some("LOC")));
    }

    #[test]
    fn rejects_bad_inventories() {
        assert!(LabelSet::parse("O", Scheme::Bio).is_err());
        assert!(LabelSet::parse("O,B-PER,B-PER", Scheme::Bio).is_err());
        assert!(LabelSet::parse("B-PER,I-PER", Scheme::Bio).is_err());
        assert!(LabelSet::parse("O,PER", Scheme::Bio).is_err());
        assert!(LabelSet::parse("O,B-PER", Scheme::Io).is_err());
    }

    #[test]
    fn serde_revalidates() {
        let set = LabelSet::parse("O,B-PER,I-PER", Scheme::Bio).unwrap();
        let json = serde_json::to_string(&set).unwrap();
        let back: LabelSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, set);
        let broken = r#"{"labels":["O","O"],"scheme":"bio"}"#;
        assert!(serde_json::from_str::<LabelSet>(broken).is_err());
    }
}
