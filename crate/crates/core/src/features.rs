//! Feature templates and the feature index.
//!
//! A feature is an observation attribute of the current position conjoined
//! with the current label, or a `(previous label, current label)` transition.
//! The sentence start is a distinguished previous label (`None`); there is no
//! end-of-sentence label.
//!
//! Weight layout for `m` labels and `k` attributes:
//!
//! ```text
//! [0, (m + 1) * m)                transitions, id = prev * m + cur, prev = m for BOS
//! [(m + 1) * m, (m + 1) * m + k*m) emissions,   id = offset + attr * m + cur
//! ```

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sentence::Sentence;

const MAX_AFFIX: usize = 4;

/// Interns observation attributes and maps `(attribute, label)` pairs and
/// transitions to dense weight ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "RawIndex", into = "RawIndex")]
pub struct FeatureIndex {
    num_labels: usize,
    names: Vec<String>,
    ids: HashMap<String, u32>,
    frozen: bool,
}

#[derive(Serialize, Deserialize)]
struct RawIndex {
    num_labels: usize,
    frozen: bool,
    attributes: Vec<String>,
}

impl From<RawIndex> for FeatureIndex {
    fn from(raw: RawIndex) -> Self {
        let ids = raw
            .attributes
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), i as u32))
            .collect();
        FeatureIndex {
            num_labels: raw.num_labels,
            names: raw.attributes,
            ids,
            frozen: raw.frozen,
        }
    }
}

impl From<FeatureIndex> for RawIndex {
    fn from(index: FeatureIndex) -> Self {
        RawIndex {
            num_labels: index.num_labels,
            frozen: index.frozen,
            attributes: index.names,
        }
    }
}

impl FeatureIndex {
    pub fn new(num_labels: usize) -> Self {
        FeatureIndex {
            num_labels,
            names: Vec::new(),
            ids: HashMap::new(),
            frozen: false,
        }
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn num_attributes(&self) -> usize {
        self.names.len()
    }

    /// Total number of weights addressed by this index.
    pub fn len(&self) -> usize {
        self.emission_offset() + self.names.len() * self.num_labels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Id of an attribute, allocating a new one unless the index is frozen.
    pub fn intern(&mut self, attribute: &str) -> Option<u32> {
        if let Some(&id) = self.ids.get(attribute) {
            return Some(id);
        }
        if self.frozen {
            return None;
        }
        let id = self.names.len() as u32;
        self.names.push(attribute.to_string());
        self.ids.insert(attribute.to_string(), id);
        Some(id)
    }

    pub fn get(&self, attribute: &str) -> Option<u32> {
        self.ids.get(attribute).copied()
    }

    pub fn attribute(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn emission_offset(&self) -> usize {
        (self.num_labels + 1) * self.num_labels
    }

    /// Transition weight id; `prev = None` is the sentence start.
    pub fn transition_id(&self, prev: Option<usize>, cur: usize) -> usize {
        prev.unwrap_or(self.num_labels) * self.num_labels + cur
    }

    pub fn emission_id(&self, attribute: u32, cur: usize) -> usize {
        self.emission_offset() + attribute as usize * self.num_labels + cur
    }

    /// Human-readable name of a weight id.
    pub fn feature_name(&self, id: usize, labels: &[String]) -> String {
        let m = self.num_labels;
        if id < self.emission_offset() {
            let (prev, cur) = (id / m, id % m);
            let prev = if prev == m { "<BOS>" } else { labels[prev].as_str() };
            format!("trans={prev}|{}", labels[cur])
        } else {
            let rel = id - self.emission_offset();
            format!("{}|{}", self.names[rel / m], labels[rel % m])
        }
    }
}

/// Sparse feature vector with strictly increasing ids and no zero values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    entries: Vec<(usize, f64)>,
}

impl FeatureVector {
    /// Builds a vector from unordered pairs; repeated ids are summed and
    /// zeros dropped.
    pub fn from_pairs(mut pairs: Vec<(usize, f64)>) -> Self {
        pairs.sort_by_key(|&(id, _)| id);
        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(pairs.len());
        for (id, v) in pairs {
            match entries.last_mut() {
                Some(last) if last.0 == id => last.1 += v,
                _ => entries.push((id, v)),
            }
        }
        entries.retain(|&(_, v)| v != 0.0);
        FeatureVector { entries }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dot(&self, weights: &[f64]) -> f64 {
        self.entries.iter().map(|&(id, v)| weights[id] * v).sum()
    }

    /// `acc += scale * self`
    pub fn add_to(&self, acc: &mut [f64], scale: f64) {
        for &(id, v) in &self.entries {
            acc[id] += scale * v;
        }
    }
}

/// Word shape with runs collapsed: `John` -> `Xx`, `2013` -> `d`, `U.S.` -> `X.X.`.
pub fn word_shape(token: &str) -> String {
    let mut shape = String::new();
    let mut last = None;
    for ch in token.chars() {
        let class = if ch.is_uppercase() {
            'X'
        } else if ch.is_lowercase() {
            'x'
        } else if ch.is_numeric() {
            'd'
        } else if ch.is_alphabetic() {
            // caseless scripts (CJK and similar)
            'c'
        } else {
            ch
        };
        if last != Some(class) {
            shape.push(class);
            last = Some(class);
        }
    }
    shape
}

/// Observation attributes of one position, before label conjunction.
pub fn observation_attributes(sentence: &Sentence, pos: usize) -> Vec<String> {
    let token = sentence.token(pos);
    let chars: Vec<char> = token.chars().collect();
    let mut out = Vec::with_capacity(4 + 2 * MAX_AFFIX + 2);
    out.push(format!("w={token}"));
    out.push(format!("lw={}", token.to_lowercase()));
    for k in 1..=MAX_AFFIX.min(chars.len()) {
        out.push(format!("p{k}={}", chars[..k].iter().collect::<String>()));
        out.push(format!("s{k}={}", chars[chars.len() - k..].iter().collect::<String>()));
    }
    out.push(format!("shape={}", word_shape(token)));
    let prev = if pos == 0 { "<BOS>" } else { sentence.token(pos - 1) };
    out.push(format!("pw={prev}"));
    let next = if pos + 1 == sentence.len() {
        "<EOS>"
    } else {
        sentence.token(pos + 1)
    };
    out.push(format!("nw={next}"));
    out
}

/// Features firing at `position` for the label pair `(prev_label, cur_label)`.
/// `prev_label = None` marks the sentence start. When the index is frozen,
/// attributes it has never seen are dropped.
pub fn extract_features(
    sentence: &Sentence,
    position: usize,
    prev_label: Option<usize>,
    cur_label: usize,
    index: &mut FeatureIndex,
) -> Result<FeatureVector> {
    if position >= sentence.len() {
        return Err(Error::OutOfRange(format!(
            "position {position} in sentence of length {}",
            sentence.len()
        )));
    }
    let m = index.num_labels();
    if cur_label >= m || prev_label.is_some_and(|p| p >= m) {
        return Err(Error::OutOfRange(format!(
            "label pair ({prev_label:?}, {cur_label}) with {m} labels"
        )));
    }
    let mut pairs = vec![(index.transition_id(prev_label, cur_label), 1.0)];
    for attr in observation_attributes(sentence, position) {
        if let Some(id) = index.intern(&attr) {
            pairs.push((index.emission_id(id, cur_label), 1.0));
        }
    }
    Ok(FeatureVector::from_pairs(pairs))
}

/// Attribute ids per position of one sentence, resolved against an index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceFeatures {
    attributes: Vec<Vec<u32>>,
}

impl SentenceFeatures {
    /// Resolves attributes, interning new ones when the index is not frozen.
    pub fn observe(sentence: &Sentence, index: &mut FeatureIndex) -> Self {
        let attributes = (0..sentence.len())
            .map(|pos| {
                let mut ids: Vec<u32> = observation_attributes(sentence, pos)
                    .iter()
                    .filter_map(|a| index.intern(a))
                    .collect();
                ids.sort_unstable();
                ids.dedup();
                ids
            })
            .collect();
        SentenceFeatures { attributes }
    }

    /// Resolves attributes against a frozen (or read-only) index.
    pub fn lookup(sentence: &Sentence, index: &FeatureIndex) -> Self {
        let attributes = (0..sentence.len())
            .map(|pos| {
                let mut ids: Vec<u32> = observation_attributes(sentence, pos)
                    .iter()
                    .filter_map(|a| index.get(a))
                    .collect();
                ids.sort_unstable();
                ids.dedup();
                ids
            })
            .collect();
        SentenceFeatures { attributes }
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn at(&self, pos: usize) -> &[u32] {
        &self.attributes[pos]
    }
}
