//! Synthetic parallel NER corpora with known gold labels.
//!
//! Target sentences are drawn from a 200-word vocabulary of person names,
//! locations, trigger words and filler. The source side translates every
//! word through a fixed word map and swaps adjacent phrases, so alignments
//! are non-monotone. Source posteriors are the gold source labels smoothed
//! with uniform noise; with `boundary_entropy` set, tokens at entity
//! boundaries often carry a flat posterior whose argmax is wrong.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ge::TargetExpectations;
use crate::io;
use crate::labels::{LabelSet, Scheme};
use crate::projection::{project, AlignedPair, LabelMap, PosteriorTable};
use crate::sentence::{LabelSequence, Sentence};
use crate::trainer::{Corpus, Labeled};

pub const LABELS: &str = "O,B-PER,I-PER,B-LOC,I-LOC";
pub const VOCABULARY_SIZE: usize = 200;

const VOCABULARY_SEED: u64 = 0x5eed;
const FIRST_NAMES: usize = 30;
const LAST_NAMES: usize = 30;
const LOCATIONS: usize = 35;
/// Last names that double as location names.
const SHARED_NAMES: usize = 5;
const PER_TRIGGERS: &[&str] = &["mr", "mrs", "dr", "minister", "president", "envoy"];
const LOC_TRIGGERS: &[&str] = &["in", "at", "from", "near", "across", "toward"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub pairs: usize,
    pub dev: usize,
    pub test: usize,
    /// Labeled target sentences outside the bitext.
    pub labeled: usize,
    /// Labeled source-language sentences for training a source tagger.
    pub source_train: usize,
    /// Probability that a target token keeps its alignment link.
    pub coverage: f64,
    /// Uniform mass mixed into every source posterior.
    pub noise: f64,
    pub boundary_entropy: bool,
    /// Probability that a boundary posterior is flattened with a wrong argmax.
    pub boundary_flip: f64,
    /// Probability of swapping each adjacent phrase pair on the source side.
    pub reorder: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            pairs: 500,
            dev: 200,
            test: 200,
            labeled: 0,
            source_train: 300,
            coverage: 0.9,
            noise: 0.1,
            boundary_entropy: false,
            boundary_flip: 0.6,
            reorder: 0.3,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    pub first_names: Vec<String>,
    pub last_names: Vec<String>,
    pub locations: Vec<String>,
    pub per_triggers: Vec<String>,
    pub loc_triggers: Vec<String>,
    pub filler: Vec<String>,
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    chars
        .next()
        .map(|c| c.to_uppercase().chain(chars).collect())
        .unwrap_or_default()
}

impl Vocabulary {
    pub fn new() -> Self {
        const ONSETS: &[&str] = &[
            "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "tr",
        ];
        const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai"];
        let mut rng = ChaCha8Rng::seed_from_u64(VOCABULARY_SEED);
        let mut used: BTreeSet<String> = PER_TRIGGERS.iter().chain(LOC_TRIGGERS).map(|s| s.to_string()).collect();
        let mut fresh = |n: usize| -> Vec<String> {
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                let syllables = rng.gen_range(2..=3);
                let word: String = (0..syllables)
                    .map(|_| {
                        format!(
                            "{}{}",
                            ONSETS.choose(&mut rng).unwrap(),
                            VOWELS.choose(&mut rng).unwrap()
                        )
                    })
                    .collect();
                if used.insert(word.clone()) {
                    out.push(word);
                }
            }
            out
        };
        let first_names: Vec<String> = fresh(FIRST_NAMES).iter().map(|w| capitalize(w)).collect();
        let last_names: Vec<String> = fresh(LAST_NAMES).iter().map(|w| capitalize(w)).collect();
        let mut locations: Vec<String> = fresh(LOCATIONS).iter().map(|w| capitalize(w)).collect();
        locations.extend(last_names[..SHARED_NAMES].iter().cloned());
        let fixed = FIRST_NAMES + LAST_NAMES + LOCATIONS + PER_TRIGGERS.len() + LOC_TRIGGERS.len();
        let filler = fresh(VOCABULARY_SIZE - fixed);
        Vocabulary {
            first_names,
            last_names,
            locations,
            per_triggers: PER_TRIGGERS.iter().map(|s| s.to_string()).collect(),
            loc_triggers: LOC_TRIGGERS.iter().map(|s| s.to_string()).collect(),
            filler,
        }
    }

    /// Distinct target words.
    pub fn words(&self) -> BTreeSet<&str> {
        self.first_names
            .iter()
            .chain(&self.last_names)
            .chain(&self.locations)
            .chain(&self.per_triggers)
            .chain(&self.loc_triggers)
            .chain(&self.filler)
            .map(String::as_str)
            .collect()
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

/// Source-language form of a target word.
pub fn translate(word: &str) -> String {
    let reversed: String = word.to_lowercase().chars().rev().collect();
    let form = format!("{reversed}q");
    if word.starts_with(char::is_uppercase) {
        capitalize(&form)
    } else {
        form
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Outside,
    Per,
    Loc,
}

/// A phrase: trigger and filler words are single-token `Outside` phrases.
#[derive(Debug, Clone)]
struct Phrase {
    kind: Kind,
    words: Vec<String>,
}

fn draw_phrases(rng: &mut ChaCha8Rng, vocab: &Vocabulary) -> Vec<Phrase> {
    let outside = |w: &String| Phrase {
        kind: Kind::Outside,
        words: vec![w.clone()],
    };
    let units = rng.gen_range(3..=7);
    let mut phrases = Vec::new();
    for _ in 0..units {
        let r: f64 = rng.gen();
        if r < 0.45 {
            phrases.push(outside(vocab.filler.choose(rng).unwrap()));
        } else if r < 0.72 {
            if rng.gen_bool(0.5) {
                phrases.push(outside(vocab.per_triggers.choose(rng).unwrap()));
            }
            let words = match rng.gen_range(0..4) {
                0 => vec![vocab.first_names.choose(rng).unwrap().clone()],
                1 => vec![vocab.last_names.choose(rng).unwrap().clone()],
                _ => vec![
                    vocab.first_names.choose(rng).unwrap().clone(),
                    vocab.last_names.choose(rng).unwrap().clone(),
                ],
            };
            phrases.push(Phrase { kind: Kind::Per, words });
        } else {
            if rng.gen_bool(0.6) {
                phrases.push(outside(vocab.loc_triggers.choose(rng).unwrap()));
            }
            let n = if rng.gen_bool(0.8) { 1 } else { 2 };
            let words = (0..n).map(|_| vocab.locations.choose(rng).unwrap().clone()).collect();
            phrases.push(Phrase { kind: Kind::Loc, words });
        }
        // a filler word keeps most entities from touching
        if rng.gen_bool(0.7) {
            phrases.push(outside(vocab.filler.choose(rng).unwrap()));
        }
    }
    phrases
}

fn label_names(phrase: &Phrase) -> Vec<&'static str> {
    let (b, i) = match phrase.kind {
        Kind::Outside => return vec!["O"; phrase.words.len()],
        Kind::Per => ("B-PER", "I-PER"),
        Kind::Loc => ("B-LOC", "I-LOC"),
    };
    (0..phrase.words.len()).map(|k| if k == 0 { b } else { i }).collect()
}

/// Tokens (first one capitalized) and labels of a phrase sequence.
fn flatten(phrases: &[&Phrase], labels: &LabelSet, map: impl Fn(&str) -> String) -> Result<(Sentence, LabelSequence)> {
    let mut tokens = Vec::new();
    let mut ids = Vec::new();
    for p in phrases {
        tokens.extend(p.words.iter().map(|w| map(w)));
        ids.extend(
            label_names(p)
                .into_iter()
                .map(|n| labels.index_of(n).expect("synthetic label")),
        );
    }
    tokens[0] = capitalize(&tokens[0]);
    Ok((Sentence::new(tokens)?, LabelSequence::new(ids)))
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub label_set: LabelSet,
    pub pairs: Vec<AlignedPair>,
    pub target_gold: Vec<LabelSequence>,
    pub source_gold: Vec<LabelSequence>,
    pub posteriors: Vec<PosteriorTable>,
    pub dev: Vec<Labeled>,
    pub test: Vec<Labeled>,
    pub labeled: Vec<Labeled>,
    pub source_train: Vec<Labeled>,
}

/// Smoothed one-hot source posterior, flattened at entity boundaries when
/// requested.
fn posterior_row(
    rng: &mut ChaCha8Rng,
    config: &SynthConfig,
    labels: &LabelSet,
    gold: &[usize],
    pos: usize,
) -> Vec<f64> {
    let m = labels.len();
    let truth = gold[pos];
    let mut row = vec![config.noise / m as f64; m];
    row[truth] += 1.0 - config.noise;
    if !config.boundary_entropy {
        return row;
    }
    let outside = labels.outside();
    let is_begin = labels.name(truth).starts_with("B-");
    let after_entity = pos > 0 && gold[pos - 1] != outside && !labels.name(truth).starts_with("I-");
    let confuser = if is_begin {
        outside
    } else if after_entity {
        // extend the preceding entity
        let prev_type = labels.chunk(gold[pos - 1]).1.expect("entity label");
        labels.index_of(&format!("I-{prev_type}")).expect("inside label")
    } else {
        return row;
    };
    if rng.gen_bool(config.boundary_flip) {
        row = vec![0.05 / (m - 2) as f64; m];
        row[confuser] = 0.5;
        row[truth] = 0.45;
    }
    row
}

impl SyntheticCorpus {
    pub fn generate(config: &SynthConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.coverage) || !(0.0..=1.0).contains(&config.noise) {
            return Err(Error::Config("coverage and noise must lie in [0, 1]".into()));
        }
        let label_set = LabelSet::parse(LABELS, Scheme::Bio)?;
        let vocab = Vocabulary::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

        let mut pairs = Vec::with_capacity(config.pairs);
        let mut target_gold = Vec::with_capacity(config.pairs);
        let mut source_gold = Vec::with_capacity(config.pairs);
        let mut posteriors = Vec::with_capacity(config.pairs);
        for _ in 0..config.pairs {
            let phrases = draw_phrases(&mut rng, &vocab);
            let mut order: Vec<usize> = (0..phrases.len()).collect();
            let mut k = 0;
            while k + 1 < order.len() {
                if rng.gen_bool(config.reorder) {
                    order.swap(k, k + 1);
                    k += 2;
                } else {
                    k += 1;
                }
            }
            let target_phrases: Vec<&Phrase> = phrases.iter().collect();
            let source_phrases: Vec<&Phrase> = order.iter().map(|&i| &phrases[i]).collect();
            let (target, tgold) = flatten(&target_phrases, &label_set, |w| w.to_string())?;
            let (source, sgold) = flatten(&source_phrases, &label_set, translate)?;

            let mut target_start = Vec::with_capacity(phrases.len());
            let mut offset = 0;
            for p in &phrases {
                target_start.push(offset);
                offset += p.words.len();
            }
            let mut links = Vec::new();
            let mut s = 0;
            for &i in &order {
                for k in 0..phrases[i].words.len() {
                    if rng.gen_bool(config.coverage) {
                        links.push((s, target_start[i] + k));
                    }
                    s += 1;
                }
            }
            let rows = (0..source.len())
                .map(|pos| posterior_row(&mut rng, config, &label_set, &sgold, pos))
                .collect();
            posteriors.push(PosteriorTable::new(label_set.len(), rows)?);
            pairs.push(AlignedPair::new(source, target, links)?);
            target_gold.push(tgold);
            source_gold.push(sgold);
        }

        let mut monolingual = |n: usize, map: fn(&str) -> String| -> Result<Vec<Labeled>> {
            (0..n)
                .map(|_| {
                    let phrases = draw_phrases(&mut rng, &vocab);
                    flatten(&phrases.iter().collect::<Vec<_>>(), &label_set, map)
                })
                .collect()
        };
        let dev = monolingual(config.dev, |w| w.to_string())?;
        let test = monolingual(config.test, |w| w.to_string())?;
        let source_train = monolingual(config.source_train, translate)?;
        let labeled = monolingual(config.labeled, |w| w.to_string())?;
        Ok(SyntheticCorpus {
            label_set,
            pairs,
            target_gold,
            source_gold,
            posteriors,
            dev,
            test,
            labeled,
            source_train,
        })
    }

    /// Soft projected expectations of every pair.
    pub fn projected(&self) -> Result<Vec<TargetExpectations>> {
        let map = LabelMap::identity(self.label_set.len());
        self.pairs
            .iter()
            .zip(&self.posteriors)
            .map(|(pair, post)| project(pair, post, &map))
            .collect()
    }

    /// Bitext-only corpus with projected targets, no labeled sentences.
    pub fn weakly_supervised(&self) -> Result<Corpus> {
        let mut corpus = Corpus::new(self.label_set.clone());
        corpus.bitext = self.pairs.iter().cloned().zip(self.projected()?).collect();
        corpus.dev = self.dev.clone();
        corpus.test = self.test.clone();
        Ok(corpus)
    }

    /// The bitext target sentences with their gold labels.
    pub fn supervised(&self) -> Corpus {
        let mut corpus = Corpus::new(self.label_set.clone());
        corpus.labeled = self
            .pairs
            .iter()
            .map(|p| p.target.clone())
            .zip(self.target_gold.iter().cloned())
            .collect();
        corpus.dev = self.dev.clone();
        corpus.test = self.test.clone();
        corpus
    }

    /// Writes the corpus as pipeline inputs plus a `pipeline.cfg` that
    /// trains a source tagger, projects and runs GE from bitext alone.
    /// With labeled target sentences, `train.conll` and a `curve.cfg` for
    /// learning-curve sweeps are written too. Returns the `pipeline.cfg` path.
    pub fn write_fixture(&self, dir: impl AsRef<Path>, max_iterations: usize) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let sources: Vec<Sentence> = self.pairs.iter().map(|p| p.source.clone()).collect();
        let targets: Vec<Sentence> = self.pairs.iter().map(|p| p.target.clone()).collect();
        let links: Vec<io::Links> = self.pairs.iter().map(|p| p.links().clone()).collect();
        io::write_tokens(dir.join("bitext.src"), &sources)?;
        io::write_tokens(dir.join("bitext.tgt"), &targets)?;
        io::write_alignments(dir.join("bitext.align"), &links)?;
        io::write_conll(dir.join("source.conll"), &self.source_train, &self.label_set)?;
        io::write_conll(dir.join("dev.conll"), &self.dev, &self.label_set)?;
        io::write_conll(dir.join("test.conll"), &self.test, &self.label_set)?;
        let cfg = format!(
            "# synthetic fixture\n\
             labels = {LABELS}\n\
             scheme = bio\n\
             dev = dev.conll\n\
             test = test.conll\n\
             bitext_source = bitext.src\n\
             bitext_target = bitext.tgt\n\
             alignments = bitext.align\n\
             source_train = source.conll\n\
             label_map = identity\n\
             regime = ge\n\
             output_dir = out\n\
             max_iterations = {max_iterations}\n\
             patience = {}\n",
            max_iterations.min(20)
        );
        let path = dir.join("pipeline.cfg");
        fs::write(&path, &cfg).map_err(|e| Error::io(&path, e))?;
        if !self.labeled.is_empty() {
            io::write_conll(dir.join("train.conll"), &self.labeled, &self.label_set)?;
            let n = self.labeled.len();
            let curve = format!("{cfg}train = train.conll\ncurve_sizes = 0,{},{},{n}\n", n / 4, n / 2)
                .replace("output_dir = out", "output_dir = out-curve");
            let curve_path = dir.join("curve.cfg");
            fs::write(&curve_path, curve).map_err(|e| Error::io(&curve_path, e))?;
        }
        Ok(path)
    }
}
