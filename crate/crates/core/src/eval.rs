//! Entity-level scoring with conlleval chunking rules, and the paired
//! bootstrap significance test.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::labels::{ChunkTag, LabelSet};
use crate::sentence::LabelSequence;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct EntitySpan {
    pub entity_type: String,
    pub start: usize,
    /// Exclusive.
    pub end: usize,
}

/// Chunk role and type index of each label, in conlleval's terms.
fn chunk_parts(label_set: &LabelSet, label: usize) -> (ChunkTag, Option<usize>) {
    (label_set.chunk(label).0, label_set.chunk_type_index(label))
}

fn ends_chunk(prev: (ChunkTag, Option<usize>), cur: (ChunkTag, Option<usize>)) -> bool {
    use ChunkTag::*;
    matches!(
        (prev.0, cur.0),
        (Begin, Begin) | (Begin, Outside) | (Inside, Begin) | (Inside, Outside)
    ) || (prev.0 != Outside && prev.1 != cur.1)
}

fn starts_chunk(prev: (ChunkTag, Option<usize>), cur: (ChunkTag, Option<usize>)) -> bool {
    use ChunkTag::*;
    cur.0 == Begin || (prev.0 == Outside && cur.0 == Inside) || (cur.0 != Outside && prev.1 != cur.1)
}

/// Spans as `(type index, start, end)`.
fn spans_by_type(labels: &[usize], label_set: &LabelSet) -> Vec<(usize, usize, usize)> {
    let mut spans = Vec::new();
    let mut prev = (ChunkTag::Outside, None);
    let mut open: Option<(usize, usize)> = None;
    for (i, &label) in labels.iter().enumerate() {
        let cur = chunk_parts(label_set, label);
        if let Some((ty, start)) = open {
            if ends_chunk(prev, cur) {
                spans.push((ty, start, i));
                open = None;
            }
        }
        if starts_chunk(prev, cur) {
            open = cur.1.map(|ty| (ty, i));
        }
        prev = cur;
    }
    if let Some((ty, start)) = open {
        spans.push((ty, start, labels.len()));
    }
    spans
}

/// Entity spans of a label sequence. Continuations without a matching begin
/// open a new span, as in conlleval.
pub fn decode_spans(labels: &[usize], label_set: &LabelSet) -> Vec<EntitySpan> {
    spans_by_type(labels, label_set)
        .into_iter()
        .map(|(ty, start, end)| EntitySpan {
            entity_type: label_set.entity_types()[ty].clone(),
            start,
            end,
        })
        .collect()
}

/// Well-formed label sequence of length `len` for the given spans.
pub fn encode_spans(spans: &[EntitySpan], len: usize, label_set: &LabelSet) -> Result<LabelSequence> {
    let mut labels = vec![label_set.outside(); len];
    for span in spans {
        if span.start >= span.end || span.end > len {
            return Err(Error::OutOfRange(format!("span {span:?} in length {len}")));
        }
        let inside = label_set
            .find(ChunkTag::Inside, &span.entity_type)
            .ok_or_else(|| Error::UnknownLabel(format!("I-{}", span.entity_type)))?;
        let begin = label_set.find(ChunkTag::Begin, &span.entity_type).unwrap_or(inside);
        labels[span.start] = begin;
        for l in &mut labels[span.start + 1..span.end] {
            *l = inside;
        }
    }
    Ok(LabelSequence::new(labels))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeScore {
    pub entity_type: String,
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub tokens: usize,
    pub correct_tags: usize,
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
    /// Percentages in `[0, 100]`.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Sorted by type name.
    pub per_type: Vec<TypeScore>,
}

/// `(precision, recall, f1)` in percent; zero when undefined.
pub fn prf(correct: usize, predicted: usize, gold: usize) -> (f64, f64, f64) {
    let p = if predicted > 0 {
        100.0 * correct as f64 / predicted as f64
    } else {
        0.0
    };
    let r = if gold > 0 {
        100.0 * correct as f64 / gold as f64
    } else {
        0.0
    };
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f)
}

#[derive(Debug, Clone, Copy, Default)]
struct Counts {
    gold: usize,
    predicted: usize,
    correct: usize,
}

fn sentence_counts(gold: &[usize], pred: &[usize], label_set: &LabelSet, per_type: &mut [Counts]) -> Counts {
    let g = spans_by_type(gold, label_set);
    let p = spans_by_type(pred, label_set);
    for &(ty, _, _) in &g {
        per_type[ty].gold += 1;
    }
    for &(ty, _, _) in &p {
        per_type[ty].predicted += 1;
    }
    // Both lists are sorted by start and non-overlapping.
    let mut correct = 0;
    let (mut i, mut j) = (0, 0);
    while i < g.len() && j < p.len() {
        match g[i].1.cmp(&p[j].1) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                if g[i] == p[j] {
                    correct += 1;
                    per_type[g[i].0].correct += 1;
                }
                i += 1;
                j += 1;
            }
        }
    }
    Counts {
        gold: g.len(),
        predicted: p.len(),
        correct,
    }
}

fn check_aligned(gold: &[LabelSequence], pred: &[LabelSequence]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::LengthMismatch {
            what: "gold vs predicted sentences",
            left: gold.len(),
            right: pred.len(),
        });
    }
    for (g, p) in gold.iter().zip(pred) {
        if g.len() != p.len() {
            return Err(Error::LengthMismatch {
                what: "gold vs predicted tokens",
                left: g.len(),
                right: p.len(),
            });
        }
    }
    Ok(())
}

pub fn score(gold: &[LabelSequence], pred: &[LabelSequence], label_set: &LabelSet) -> Result<ScoreReport> {
    check_aligned(gold, pred)?;
    let mut per_type = vec![Counts::default(); label_set.entity_types().len()];
    let mut total = Counts::default();
    let mut tokens = 0;
    let mut correct_tags = 0;
    for (g, p) in gold.iter().zip(pred) {
        label_set.check_sequence(g)?;
        label_set.check_sequence(p)?;
        let c = sentence_counts(g, p, label_set, &mut per_type);
        total.gold += c.gold;
        total.predicted += c.predicted;
        total.correct += c.correct;
        tokens += g.len();
        correct_tags += g.iter().zip(p.iter()).filter(|(a, b)| a == b).count();
    }
    let (precision, recall, f1) = prf(total.correct, total.predicted, total.gold);
    let mut rows: BTreeMap<&str, TypeScore> = BTreeMap::new();
    for (ty, c) in per_type.iter().enumerate() {
        if c.gold == 0 && c.predicted == 0 {
            continue;
        }
        let name = label_set.entity_types()[ty].as_str();
        let (p, r, f) = prf(c.correct, c.predicted, c.gold);
        rows.insert(
            name,
            TypeScore {
                entity_type: name.to_string(),
                gold: c.gold,
                predicted: c.predicted,
                correct: c.correct,
                precision: p,
                recall: r,
                f1: f,
            },
        );
    }
    Ok(ScoreReport {
        tokens,
        correct_tags,
        gold: total.gold,
        predicted: total.predicted,
        correct: total.correct,
        precision,
        recall,
        f1,
        per_type: rows.into_values().collect(),
    })
}

/// conlleval's textual layout.
impl fmt::Display for ScoreReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "processed {} tokens with {} phrases; found: {} phrases; correct: {}.",
            self.tokens, self.gold, self.predicted, self.correct
        )?;
        if self.tokens > 0 {
            writeln!(
                f,
                "accuracy: {:6.2}%; precision: {:6.2}%; recall: {:6.2}%; FB1: {:6.2}",
                100.0 * self.correct_tags as f64 / self.tokens as f64,
                self.precision,
                self.recall,
                self.f1
            )?;
        }
        for t in &self.per_type {
            writeln!(
                f,
                "{:>17}: precision: {:6.2}%; recall: {:6.2}%; FB1: {:6.2}  {}",
                t.entity_type, t.precision, t.recall, t.f1, t.predicted
            )?;
        }
        Ok(())
    }
}

/// All-outside predictions shaped like `gold`.
pub fn all_outside(gold: &[LabelSequence], label_set: &LabelSet) -> Vec<LabelSequence> {
    gold.iter()
        .map(|g| LabelSequence::new(vec![label_set.outside(); g.len()]))
        .collect()
}

/// Paired bootstrap over sentences: fraction of `iterations` resamples in
/// which system B's corpus F1 is at least system A's. Small values support
/// "A is better than B". Resample `k` draws from ChaCha stream `k` of `seed`.
pub fn paired_bootstrap(
    gold: &[LabelSequence],
    pred_a: &[LabelSequence],
    pred_b: &[LabelSequence],
    label_set: &LabelSet,
    iterations: usize,
    seed: u64,
) -> Result<f64> {
    check_aligned(gold, pred_a)?;
    check_aligned(gold, pred_b)?;
    if gold.is_empty() {
        return Err(Error::EmptyObjective("bootstrap needs at least one sentence"));
    }
    if iterations == 0 {
        return Err(Error::Config("bootstrap needs at least one iteration".into()));
    }
    let mut scratch = vec![Counts::default(); label_set.entity_types().len()];
    let per_sentence: Vec<(Counts, Counts)> = gold
        .iter()
        .zip(pred_a.iter().zip(pred_b))
        .map(|(g, (a, b))| {
            (
                sentence_counts(g, a, label_set, &mut scratch),
                sentence_counts(g, b, label_set, &mut scratch),
            )
        })
        .collect();
    let n = per_sentence.len();
    let b_wins = (0..iterations as u64)
        .into_par_iter()
        .filter(|&k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k);
            let (mut a, mut b) = (Counts::default(), Counts::default());
            for _ in 0..n {
                let (sa, sb) = per_sentence[rng.gen_range(0..n)];
                a.gold += sa.gold;
                a.predicted += sa.predicted;
                a.correct += sa.correct;
                b.gold += sb.gold;
                b.predicted += sb.predicted;
                b.correct += sb.correct;
            }
            let fa = prf(a.correct, a.predicted, a.gold).2;
            let fb = prf(b.correct, b.predicted, b.gold).2;
            fb >= fa
        })
        .count();
    Ok(b_wins as f64 / iterations as f64)
}
