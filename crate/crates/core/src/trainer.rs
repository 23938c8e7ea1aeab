//! Objective assembly and L-BFGS training for the three regimes.
//!
//! The joint objective is `L_CRF(labeled) + ge_weight · Σ_bitext L_GE`, with
//! the L2 penalty carried by the likelihood term. Training starts from zero
//! weights, evaluates dev F1 after every accepted L-BFGS iteration, and
//! returns the best-on-dev iterate. There is no annealing or curriculum.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crf::{supervised_prepared, CrfModel, LabeledInstance, DEFAULT_L2_SIGMA};
use crate::error::{Error, Result};
use crate::eval::score;
use crate::features::{FeatureIndex, SentenceFeatures};
use crate::ge::{ge_terms, TargetExpectations};
use crate::labels::LabelSet;
use crate::lbfgs::{Convergence, Lbfgs, LbfgsConfig, Step};
use crate::parallel::chunked_sum;
use crate::projection::{hard_labels_from_targets, AlignedPair};
use crate::sentence::{LabelSequence, Sentence};

pub type Labeled = (Sentence, LabelSequence);

#[derive(Debug, Clone)]
pub struct Corpus {
    pub label_set: LabelSet,
    pub labeled: Vec<Labeled>,
    pub bitext: Vec<(AlignedPair, TargetExpectations)>,
    pub dev: Vec<Labeled>,
    pub test: Vec<Labeled>,
}

impl Corpus {
    pub fn new(label_set: LabelSet) -> Self {
        Corpus {
            label_set,
            labeled: Vec::new(),
            bitext: Vec::new(),
            dev: Vec::new(),
            test: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (s, y) in self.labeled.iter().chain(&self.dev).chain(&self.test) {
            if s.len() != y.len() {
                return Err(Error::LengthMismatch {
                    what: "sentence vs labels",
                    left: s.len(),
                    right: y.len(),
                });
            }
            self.label_set.check_sequence(y)?;
        }
        for (pair, targets) in &self.bitext {
            if pair.target.len() != targets.len() {
                return Err(Error::LengthMismatch {
                    what: "bitext target vs expectations",
                    left: pair.target.len(),
                    right: targets.len(),
                });
            }
            if targets.num_labels() != self.label_set.len() {
                return Err(Error::LengthMismatch {
                    what: "expectation labels vs label set",
                    left: targets.num_labels(),
                    right: self.label_set.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMode {
    Soft,
    Hard,
}

impl FromStr for ProjectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(ProjectionMode::Soft),
            "hard" => Ok(ProjectionMode::Hard),
            other => Err(Error::Config(format!("unknown projection mode `{other}`"))),
        }
    }
}

impl fmt::Display for ProjectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProjectionMode::Soft => "soft",
            ProjectionMode::Hard => "hard",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "supervised")]
    Supervised,
    #[serde(rename = "ge")]
    Ge,
    #[serde(rename = "project-then-train")]
    ProjectThenTrain,
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(Regime::Supervised),
            "ge" => Ok(Regime::Ge),
            "project-then-train" | "project_then_train" => Ok(Regime::ProjectThenTrain),
            other => Err(Error::Config(format!("unknown training regime `{other}`"))),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Supervised => "supervised",
            Regime::Ge => "ge",
            Regime::ProjectThenTrain => "project-then-train",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub ge_weight: f64,
    pub l2_sigma: f64,
    pub max_iterations: usize,
    pub patience: usize,
    pub lbfgs_history: usize,
    pub projection_mode: ProjectionMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            ge_weight: 1.0,
            l2_sigma: DEFAULT_L2_SIGMA,
            max_iterations: 300,
            patience: 20,
            lbfgs_history: 10,
            projection_mode: ProjectionMode::Soft,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.ge_weight >= 0.0) || !self.ge_weight.is_finite() {
            return bad(format!(
                "ge_weight must be a nonnegative number, got {}",
                self.ge_weight
            ));
        }
        if !(self.l2_sigma > 0.0) {
            return bad(format!("l2_sigma must be positive, got {}", self.l2_sigma));
        }
        if self.max_iterations == 0 || self.patience == 0 || self.lbfgs_history == 0 {
            return bad("max_iterations, patience and lbfgs_history must be positive".into());
        }
        if self.patience > self.max_iterations {
            return bad(format!(
                "patience {} exceeds max_iterations {}",
                self.patience, self.max_iterations
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Joint objective (maximization sign) at this iterate.
    pub objective: f64,
    /// Dev entity F1, when a dev set is available.
    pub dev_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub regime: Regime,
    pub projection_mode: ProjectionMode,
    pub trace: Vec<IterationRecord>,
    /// Iteration whose weights were returned (0 = initial weights).
    pub best_iteration: usize,
    pub best_dev_f1: Option<f64>,
    /// Objective at the returned weights.
    pub final_objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub stop_reason: String,
    /// Always "best-dev" when a dev set exists, "last" otherwise.
    pub selection: String,
    pub num_features: usize,
    /// Not serialized.
    #[serde(skip, default)]
    pub wall_seconds: f64,
}

impl TrainReport {
    pub fn dev_f1_trace(&self) -> Vec<f64> {
        self.trace.iter().filter_map(|r| r.dev_f1).collect()
    }

    /// One line per iteration, then a summary line.
    pub fn to_log(&self) -> String {
        let mut out = String::new();
        for r in &self.trace {
            let dev = r.dev_f1.map_or("-".to_string(), |f| format!("{f:.4}"));
            out.push_str(&format!(
                "iter {:>4}  objective {:>16.6}  dev_f1 {dev}\n",
                r.iteration, r.objective
            ));
        }
        out.push_str(&format!(
            "regime {} ({} projection)  best_iteration {}  best_dev_f1 {}  final_objective {:.6}  iterations {}  evaluations {}  stop {}  features {}\n",
            self.regime,
            self.projection_mode,
            self.best_iteration,
            self.best_dev_f1.map_or("-".to_string(), |f| format!("{f:.4}")),
            self.final_objective,
            self.iterations,
            self.evaluations,
            self.stop_reason,
            self.num_features,
        ));
        out
    }
}

/// Patience-based early stopping on a score to maximize.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: None }
    }

    /// Records the score of `iteration`; returns `true` when it is a new
    /// strict best.
    pub fn observe(&mut self, iteration: usize, score: f64) -> bool {
        match self.best {
            Some((_, best)) if score <= best => false,
            _ => {
                self.best = Some((iteration, score));
                true
            }
        }
    }

    /// `patience` iterations have passed since the best one.
    pub fn should_stop(&self, iteration: usize) -> bool {
        self.best.is_some_and(|(best, _)| iteration >= best + self.patience)
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// Instances of the joint objective, resolved against one feature index.
pub struct JointObjective {
    model: CrfModel,
    labeled: Vec<LabeledInstance>,
    bitext: Vec<(SentenceFeatures, TargetExpectations)>,
    ge_weight: f64,
}

impl JointObjective {
    pub fn new(
        model: CrfModel,
        labeled: &[Labeled],
        bitext: &[(Sentence, TargetExpectations)],
        ge_weight: f64,
    ) -> Result<Self> {
        if labeled.is_empty() && bitext.is_empty() {
            return Err(Error::EmptyObjective("no labeled sentences and no bitext"));
        }
        let labeled = labeled
            .iter()
            .map(|(s, y)| LabeledInstance::new(&model, s, y))
            .collect::<Result<Vec<_>>>()?;
        let bitext = bitext
            .iter()
            .map(|(s, t)| {
                if s.len() != t.len() || t.num_labels() != model.num_labels() {
                    return Err(Error::LengthMismatch {
                        what: "bitext target vs expectations",
                        left: s.len(),
                        right: t.len(),
                    });
                }
                Ok((model.observe(s), t.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(JointObjective {
            model,
            labeled,
            bitext,
            ge_weight,
        })
    }

    pub fn model(&self) -> &CrfModel {
        &self.model
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Joint value and gradient at `weights` (maximization sign).
    pub fn value_and_gradient(&mut self, weights: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.model.set_weights(weights.to_vec())?;
        self.model.check_weights()?;
        Ok(self.evaluate_current())
    }

    fn evaluate_current(&self) -> (f64, Vec<f64>) {
        let model = &self.model;
        let (mut value, mut grad) = supervised_prepared(model, &self.labeled);
        if !self.bitext.is_empty() && self.ge_weight != 0.0 {
            let (ge_value, ge_grad) = chunked_sum(&self.bitext, model.dim(), |(features, targets), g| {
                ge_terms(model, features, targets, Some(g), 1.0)
            });
            value += self.ge_weight * ge_value;
            for (acc, g) in grad.iter_mut().zip(ge_grad) {
                *acc += self.ge_weight * g;
            }
        }
        (value, grad)
    }
}

fn effective_targets(targets: &TargetExpectations, mode: ProjectionMode) -> TargetExpectations {
    match mode {
        ProjectionMode::Soft => targets.clone(),
        ProjectionMode::Hard => targets.harden(),
    }
}

/// Joint objective of `model`'s current weights over the corpus training parts.
pub fn joint_value_and_gradient(model: &CrfModel, corpus: &Corpus, config: &TrainConfig) -> Result<(f64, Vec<f64>)> {
    model.check_weights()?;
    let bitext: Vec<(Sentence, TargetExpectations)> = corpus
        .bitext
        .iter()
        .map(|(p, t)| (p.target.clone(), effective_targets(t, config.projection_mode)))
        .collect();
    let objective = JointObjective::new(model.clone(), &corpus.labeled, &bitext, config.ge_weight)?;
    Ok(objective.evaluate_current())
}

/// Feature index over the training sentences, labeled data first.
pub fn build_feature_index<'a>(num_labels: usize, sentences: impl IntoIterator<Item = &'a Sentence>) -> FeatureIndex {
    let mut index = FeatureIndex::new(num_labels);
    for s in sentences {
        SentenceFeatures::observe(s, &mut index);
    }
    index.freeze();
    index
}

pub fn predict(model: &CrfModel, sentences: &[Sentence]) -> Vec<LabelSequence> {
    sentences.par_iter().map(|s| model.decode(&model.observe(s))).collect()
}

/// Entity F1 of `model` on labeled data.
pub fn evaluate_f1(model: &CrfModel, data: &[Labeled]) -> Result<f64> {
    let sentences: Vec<Sentence> = data.iter().map(|(s, _)| s.clone()).collect();
    let gold: Vec<LabelSequence> = data.iter().map(|(_, y)| y.clone()).collect();
    let pred = predict(model, &sentences);
    Ok(score(&gold, &pred, model.label_set())?.f1)
}

/// Training data of a regime: labeled pairs and GE instances.
fn regime_data(
    corpus: &Corpus,
    config: &TrainConfig,
    regime: Regime,
) -> Result<(Vec<Labeled>, Vec<(Sentence, TargetExpectations)>)> {
    match regime {
        Regime::Supervised => {
            if corpus.labeled.is_empty() {
                return Err(Error::EmptyObjective("supervised training needs labeled sentences"));
            }
            Ok((corpus.labeled.clone(), Vec::new()))
        }
        Regime::Ge => {
            if corpus.bitext.is_empty() {
                return Err(Error::EmptyObjective("GE training needs bitext"));
            }
            let bitext = corpus
                .bitext
                .iter()
                .map(|(p, t)| (p.target.clone(), effective_targets(t, config.projection_mode)))
                .collect();
            Ok((corpus.labeled.clone(), bitext))
        }
        Regime::ProjectThenTrain => {
            if corpus.bitext.is_empty() {
                return Err(Error::EmptyObjective("project-then-train needs bitext"));
            }
            let outside = corpus.label_set.outside();
            let mut labeled = corpus.labeled.clone();
            labeled.extend(
                corpus
                    .bitext
                    .iter()
                    .map(|(p, t)| (p.target.clone(), hard_labels_from_targets(&t.harden(), outside))),
            );
            Ok((labeled, Vec::new()))
        }
    }
}

pub fn train(corpus: &Corpus, config: &TrainConfig, regime: Regime) -> Result<(CrfModel, TrainReport)> {
    let dev = corpus.dev.clone();
    if dev.is_empty() {
        train_with_scorer(corpus, config, regime, |_: &CrfModel| None)
    } else {
        train_with_scorer(corpus, config, regime, move |m: &CrfModel| {
            Some(evaluate_f1(m, &dev).expect("dev set validated with the corpus"))
        })
    }
}

/// Training loop with a caller-supplied dev scorer; `None` scores disable
/// early stopping and the last iterate is returned.
pub fn train_with_scorer<S>(
    corpus: &Corpus,
    config: &TrainConfig,
    regime: Regime,
    mut scorer: S,
) -> Result<(CrfModel, TrainReport)>
where
    S: FnMut(&CrfModel) -> Option<f64>,
{
    let started = Instant::now();
    config.validate()?;
    corpus.validate()?;
    let (labeled, bitext) = regime_data(corpus, config, regime)?;
    let index = build_feature_index(
        corpus.label_set.len(),
        labeled.iter().map(|(s, _)| s).chain(bitext.iter().map(|(s, _)| s)),
    );
    let model = CrfModel::new(corpus.label_set.clone(), index, config.l2_sigma)?;
    let ge_weight = if regime == Regime::Ge { config.ge_weight } else { 0.0 };
    let mut objective = JointObjective::new(model, &labeled, &bitext, ge_weight)?;
    let num_features = objective.dim();
    log::info!(
        "training {regime} on {} labeled + {} bitext sentences, {num_features} features",
        labeled.len(),
        bitext.len()
    );

    let mut scoring = objective.model().clone();
    let mut error = None;
    let negated = |x: &[f64], g: &mut [f64]| -> f64 {
        match objective.value_and_gradient(x) {
            Ok((v, grad)) => {
                for (gi, v) in g.iter_mut().zip(grad) {
                    *gi = -v;
                }
                -v
            }
            Err(e) => {
                error.get_or_insert(e);
                f64::NAN
            }
        }
    };
    let lbfgs_config = LbfgsConfig {
        history: config.lbfgs_history,
        ..LbfgsConfig::default()
    };
    let mut opt = Lbfgs::new(lbfgs_config, vec![0.0; num_features], negated)?;

    let mut stopping = EarlyStopping::new(config.patience);
    let mut trace = Vec::new();
    let mut best_weights = opt.x().to_vec();
    let mut best_iteration = 0;
    let mut best_objective = -opt.value();
    let mut uses_dev = false;
    let stop_reason = loop {
        let step = opt.step()?;
        let converged = match step {
            Step::Stalled => break "line-search-stalled".to_string(),
            Step::Accepted { converged } => converged,
        };
        if converged == Some(Convergence::Gradient) && opt.iteration() == trace.len() {
            // Already stationary; no new iterate to score.
            break "gradient".to_string();
        }
        let iteration = opt.iteration();
        let value = -opt.value();
        if !value.is_finite() {
            return Err(Error::Diverged {
                iteration,
                detail: format!("objective {value}"),
            });
        }
        scoring.set_weights(opt.x().to_vec())?;
        let dev_f1 = scorer(&scoring);
        trace.push(IterationRecord {
            iteration,
            objective: value,
            dev_f1,
        });
        log::info!(
            "iter {iteration:>4} objective {value:.6} dev_f1 {}",
            dev_f1.map_or("-".into(), |f| format!("{f:.4}"))
        );
        let improved = match dev_f1 {
            Some(f1) => {
                uses_dev = true;
                stopping.observe(iteration, f1)
            }
            None => true,
        };
        if improved {
            best_weights.copy_from_slice(opt.x());
            best_iteration = iteration;
            best_objective = value;
        }
        if uses_dev && stopping.should_stop(iteration) {
            break "early-stopping".to_string();
        }
        match converged {
            Some(Convergence::Gradient) => break "gradient".to_string(),
            Some(Convergence::RelativeChange) => break "relative-change".to_string(),
            None => {}
        }
        if iteration >= config.max_iterations {
            break "max-iterations".to_string();
        }
    };
    let evaluations = opt.evaluations();
    let iterations = opt.iteration();
    drop(opt);
    if let Some(e) = error {
        return Err(e);
    }

    let best_dev_f1 = if trace.is_empty() {
        // Converged at the starting point: score the initial weights.
        scoring.set_weights(best_weights.clone())?;
        scorer(&scoring)
    } else {
        stopping.best().map(|(_, f1)| f1)
    };
    scoring.set_weights(best_weights)?;
    let report = TrainReport {
        regime,
        projection_mode: config.projection_mode,
        trace,
        best_iteration,
        best_dev_f1,
        final_objective: best_objective,
        iterations,
        evaluations,
        stop_reason,
        selection: if uses_dev { "best-dev" } else { "last" }.to_string(),
        num_features,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((scoring, report))
}
