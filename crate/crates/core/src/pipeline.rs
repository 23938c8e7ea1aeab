//! End-to-end workflow: source tagger, posteriors, projection, target
//! training and test evaluation, plus learning-curve sweeps.
//!
//! Files written to the output directory:
//!
//! | file | content |
//! |------|---------|
//! | `posteriors.tsv` | source posteriors (unless a cache path is configured) |
//! | `targets.tsv` | projected soft expectations |
//! | `model.json` | trained target model |
//! | `train_report.json`, `train.log` | training trace and summary |
//! | `score.txt`, `score.json` | test scores, conlleval layout and JSON |
//! | `predictions.conll` | test tokens with predicted labels |

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::crf::CrfModel;
use crate::error::{Error, Result};
use crate::eval::{score, ScoreReport};
use crate::ge::TargetExpectations;
use crate::io;
use crate::labels::LabelSet;
use crate::projection::{project, source_posteriors, AlignedPair, PosteriorTable};
use crate::sentence::{LabelSequence, Sentence};
use crate::trainer::{predict, train, Corpus, Labeled, Regime, TrainConfig, TrainReport};

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable report");
    s.push('\n');
    s
}

/// Reads a bitext from token files and a Pharaoh alignment file.
pub fn read_bitext(source: &Path, target: &Path, alignments: &Path) -> Result<Vec<AlignedPair>> {
    let src = io::read_tokens(source)?;
    let tgt = io::read_tokens(target)?;
    let links = io::read_alignments(alignments)?;
    if src.len() != tgt.len() || src.len() != links.len() {
        return Err(Error::Config(format!(
            "bitext sizes disagree: {} source, {} target, {} alignment lines",
            src.len(),
            tgt.len(),
            links.len()
        )));
    }
    src.into_iter()
        .zip(tgt)
        .zip(links)
        .enumerate()
        .map(|(i, ((s, t), l))| AlignedPair::new(s, t, l).map_err(|e| Error::parse(alignments, i + 1, e.to_string())))
        .collect()
}

/// Trains a supervised tagger without a dev set (last iterate returned).
pub fn train_source_model(
    data: Vec<Labeled>,
    label_set: LabelSet,
    config: &TrainConfig,
) -> Result<(CrfModel, TrainReport)> {
    let mut corpus = Corpus::new(label_set);
    corpus.labeled = data;
    train(&corpus, config, Regime::Supervised)
}

pub fn compute_posteriors(model: &CrfModel, sentences: &[Sentence]) -> Result<Vec<PosteriorTable>> {
    sentences.par_iter().map(|s| source_posteriors(model, s)).collect()
}

/// Test-set predictions and their scores.
pub fn evaluate(model: &CrfModel, test: &[Labeled]) -> Result<(Vec<LabelSequence>, ScoreReport)> {
    let sentences: Vec<Sentence> = test.iter().map(|(s, _)| s.clone()).collect();
    let gold: Vec<LabelSequence> = test.iter().map(|(_, y)| y.clone()).collect();
    let pred = predict(model, &sentences);
    let report = score(&gold, &pred, model.label_set())?;
    Ok((pred, report))
}

/// Everything training needs, read and projected from a configuration.
pub struct Prepared {
    pub corpus: Corpus,
    pub posteriors: Vec<PosteriorTable>,
}

fn load_posteriors(config: &PipelineConfig, pairs: &[AlignedPair]) -> Result<Vec<PosteriorTable>> {
    let source_labels = config.source_label_set()?;
    let lengths: Vec<usize> = pairs.iter().map(|p| p.source.len()).collect();
    if let Some(cache) = config.posteriors_cache.as_ref().filter(|p| p.is_file()) {
        log::info!("reading cached posteriors from {}", cache.display());
        let (labels, tables) = io::read_posteriors(cache, &lengths)?;
        if labels != source_labels.labels() {
            return Err(Error::Config(format!(
                "{}: header labels {:?} differ from the source labels",
                cache.display(),
                labels
            )));
        }
        return Ok(tables);
    }
    let model = if let Some(path) = &config.source_model {
        io::load_model(path)?
    } else {
        let path = config
            .source_train
            .as_ref()
            .ok_or_else(|| Error::Config("no source model or source training data".into()))?;
        let data = io::read_conll(path, &source_labels)?;
        log::info!("training source tagger on {} sentences", data.len());
        train_source_model(data, source_labels.clone(), &config.train_config)?.0
    };
    if model.label_set().labels() != source_labels.labels() {
        return Err(Error::Config(
            "source model labels differ from the configured source labels".into(),
        ));
    }
    let sources: Vec<Sentence> = pairs.iter().map(|p| p.source.clone()).collect();
    let tables = compute_posteriors(&model, &sources)?;
    let cache = config
        .posteriors_cache
        .clone()
        .unwrap_or_else(|| config.output_dir.join("posteriors.tsv"));
    io::write_posteriors(&cache, source_labels.labels(), &tables)?;
    // The rounded values, as a later cache hit reads them.
    Ok(io::read_posteriors(&cache, &lengths)?.1)
}

/// Reads the corpus and projects source posteriors onto the bitext.
pub fn prepare(config: &PipelineConfig) -> Result<Prepared> {
    config.validate()?;
    fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
    let label_set = config.label_set()?;
    let read = |p: &Option<std::path::PathBuf>| -> Result<Vec<Labeled>> {
        p.as_ref().map_or(Ok(Vec::new()), |p| io::read_conll(p, &label_set))
    };
    let mut corpus = Corpus::new(label_set.clone());
    corpus.labeled = read(&config.train)?;
    corpus.dev = read(&config.dev)?;
    corpus.test = read(&config.test)?;

    let mut posteriors = Vec::new();
    if let (Some(src), Some(tgt), Some(align)) = (&config.bitext_source, &config.bitext_target, &config.alignments) {
        let pairs = read_bitext(src, tgt, align)?;
        posteriors = load_posteriors(config, &pairs)?;
        let map = config.label_map()?;
        let targets = pairs
            .iter()
            .zip(&posteriors)
            .map(|(pair, post)| project(pair, post, &map))
            .collect::<Result<Vec<TargetExpectations>>>()?;
        io::write_targets(config.output_dir.join("targets.tsv"), label_set.labels(), &targets)?;
        corpus.bitext = pairs.into_iter().zip(targets).collect();
    }
    corpus.validate()?;
    Ok(Prepared { corpus, posteriors })
}

pub struct PipelineOutcome {
    pub model: CrfModel,
    pub report: TrainReport,
    pub score: ScoreReport,
}

/// Runs the full workflow and writes its artifacts to the output directory.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutcome> {
    let prepared = prepare(config)?;
    let corpus = &prepared.corpus;
    let (model, report) = train(corpus, &config.train_config, config.regime)?;
    let (pred, score) = evaluate(&model, &corpus.test)?;

    let out = &config.output_dir;
    io::save_model(out.join("model.json"), &model)?;
    write_file(&out.join("train_report.json"), &to_json(&report))?;
    write_file(&out.join("train.log"), &report.to_log())?;
    write_file(&out.join("score.txt"), &score.to_string())?;
    write_file(&out.join("score.json"), &to_json(&score))?;
    let predictions: Vec<Labeled> = corpus.test.iter().map(|(s, _)| s.clone()).zip(pred).collect();
    io::write_conll(out.join("predictions.conll"), &predictions, &corpus.label_set)?;
    log::info!("test F1 {:.2} after {} iterations", score.f1, report.iterations);
    Ok(PipelineOutcome { model, report, score })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CurvePoint {
    pub size: usize,
    pub regime: String,
    pub dev_f1: Option<f64>,
    pub test_precision: f64,
    pub test_recall: f64,
    pub test_f1: f64,
}

pub const CURVE_HEADER: &str = "size,regime,dev_f1,test_precision,test_recall,test_f1";

impl CurvePoint {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6}",
            self.size,
            self.regime,
            self.dev_f1.map_or(String::new(), |f| format!("{f:.6}")),
            self.test_precision,
            self.test_recall,
            self.test_f1
        )
    }
}

/// For each size k, trains on the first k labeled sentences: supervised
/// alone (k > 0) and jointly with the bitext under the configured regime.
pub fn learning_curve(config: &PipelineConfig, sizes: &[usize]) -> Result<Vec<CurvePoint>> {
    let prepared = prepare(config)?;
    let full = &prepared.corpus;
    if let Some(&k) = sizes.iter().find(|&&k| k > full.labeled.len()) {
        return Err(Error::Config(format!(
            "curve size {k} exceeds the {} labeled sentences",
            full.labeled.len()
        )));
    }
    let mut regimes = vec![Regime::Supervised];
    if !full.bitext.is_empty() && config.regime != Regime::Supervised {
        regimes.push(config.regime);
    }
    let mut points = Vec::new();
    for &k in sizes {
        let mut corpus = full.clone();
        corpus.labeled.truncate(k);
        for &regime in &regimes {
            if regime == Regime::Supervised && k == 0 {
                continue;
            }
            let (model, report) = train(&corpus, &config.train_config, regime)?;
            let (_, s) = evaluate(&model, &corpus.test)?;
            log::info!("size {k} {regime}: test F1 {:.4}", s.f1);
            points.push(CurvePoint {
                size: k,
                regime: regime.to_string(),
                dev_f1: report.best_dev_f1,
                test_precision: s.precision,
                test_recall: s.recall,
                test_f1: s.f1,
            });
        }
    }
    Ok(points)
}

pub fn format_curve(points: &[CurvePoint]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&p.csv_row());
        out.push('\n');
    }
    out
}
