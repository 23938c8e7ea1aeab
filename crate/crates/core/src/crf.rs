//! Linear-chain CRF: exact log-space inference, Viterbi decoding and the
//! conditional log-likelihood objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureIndex, SentenceFeatures};
use crate::labels::LabelSet;
use crate::parallel::chunked_sum;
use crate::sentence::{LabelSequence, Sentence};

pub const DEFAULT_L2_SIGMA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfModel {
    label_set: LabelSet,
    feature_index: FeatureIndex,
    weights: Vec<f64>,
    /// Gaussian prior scale; `f64::INFINITY` disables the L2 penalty.
    l2_sigma: f64,
}

impl CrfModel {
    /// Zero-weight model over `feature_index`, which is frozen on the way in.
    pub fn new(label_set: LabelSet, mut feature_index: FeatureIndex, l2_sigma: f64) -> Result<Self> {
        if feature_index.num_labels() != label_set.len() {
            return Err(Error::LengthMismatch {
                what: "feature index labels vs label set",
                left: feature_index.num_labels(),
                right: label_set.len(),
            });
        }
        if !(l2_sigma > 0.0) {
            return Err(Error::Config(format!("l2_sigma must be positive, got {l2_sigma}")));
        }
        feature_index.freeze();
        let weights = vec![0.0; feature_index.len()];
        Ok(CrfModel {
            label_set,
            feature_index,
            weights,
            l2_sigma,
        })
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        self.set_weights(weights)?;
        Ok(self)
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.feature_index.len() {
            return Err(Error::LengthMismatch {
                what: "weights vs feature index",
                left: weights.len(),
                right: self.feature_index.len(),
            });
        }
        self.weights = weights;
        Ok(())
    }

    pub fn label_set(&self) -> &LabelSet {
        &self.label_set
    }

    pub fn feature_index(&self) -> &FeatureIndex {
        &self.feature_index
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn l2_sigma(&self) -> f64 {
        self.l2_sigma
    }

    pub fn num_labels(&self) -> usize {
        self.label_set.len()
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Attribute ids of a sentence under this model's frozen index.
    pub fn observe(&self, sentence: &Sentence) -> SentenceFeatures {
        SentenceFeatures::lookup(sentence, &self.feature_index)
    }

    pub fn check_weights(&self) -> Result<()> {
        if self.weights.iter().all(|w| w.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("model weights"))
        }
    }

    pub fn run_inference(&self, sentence: &Sentence) -> Result<InferenceTables> {
        self.check_weights()?;
        Ok(self.infer(&self.observe(sentence)))
    }

    pub fn viterbi(&self, sentence: &Sentence) -> Result<LabelSequence> {
        self.check_weights()?;
        Ok(self.decode(&self.observe(sentence)))
    }

    /// Unnormalized log score `θ · f(x, y)` of a full label sequence.
    pub fn sequence_score(&self, features: &SentenceFeatures, labels: &[usize]) -> f64 {
        let pot = Potentials::new(self, features);
        let mut score = pot.init(labels[0]);
        for i in 1..labels.len() {
            score += pot.step(i, labels[i - 1], labels[i]);
        }
        score
    }

    pub(crate) fn transition_block(&self) -> &[f64] {
        &self.weights[..self.feature_index.emission_offset()]
    }

    /// Forward-backward over pre-resolved features. Weights must be finite.
    pub(crate) fn infer(&self, features: &SentenceFeatures) -> InferenceTables {
        let pot = Potentials::new(self, features);
        let (n, m) = (pot.n, pot.m);

        let mut log_alpha = vec![0.0; n * m];
        for y in 0..m {
            log_alpha[y] = pot.init(y);
        }
        let mut scratch = vec![0.0; m];
        for i in 1..n {
            for b in 0..m {
                for a in 0..m {
                    scratch[a] = log_alpha[(i - 1) * m + a] + pot.trans(a, b);
                }
                log_alpha[i * m + b] = log_sum_exp(&scratch) + pot.emit(i, b);
            }
        }

        let mut log_beta = vec![0.0; n * m];
        for i in (0..n.saturating_sub(1)).rev() {
            for a in 0..m {
                for b in 0..m {
                    scratch[b] = pot.step(i + 1, a, b) + log_beta[(i + 1) * m + b];
                }
                log_beta[i * m + a] = log_sum_exp(&scratch);
            }
        }

        let log_z = log_sum_exp(&log_alpha[(n - 1) * m..]);
        for y in 0..m {
            scratch[y] = pot.init(y) + log_beta[y];
        }
        let log_z_backward = log_sum_exp(&scratch);

        let node: Vec<f64> = log_alpha
            .iter()
            .zip(&log_beta)
            .map(|(a, b)| (a + b - log_z).exp())
            .collect();
        let mut edge = vec![0.0; n.saturating_sub(1) * m * m];
        for i in 0..n.saturating_sub(1) {
            for a in 0..m {
                let la = log_alpha[i * m + a];
                for b in 0..m {
                    edge[(i * m + a) * m + b] = (la + pot.step(i + 1, a, b) + log_beta[(i + 1) * m + b] - log_z).exp();
                }
            }
        }

        InferenceTables {
            n,
            m,
            log_alpha,
            log_beta,
            log_z,
            log_z_backward,
            node,
            edge,
            emit: pot.emit,
        }
    }

    pub(crate) fn decode(&self, features: &SentenceFeatures) -> LabelSequence {
        let pot = Potentials::new(self, features);
        let (n, m) = (pot.n, pot.m);
        let mut delta: Vec<f64> = (0..m).map(|y| pot.init(y)).collect();
        let mut next = vec![0.0; m];
        let mut back = vec![0usize; n * m];
        for i in 1..n {
            for b in 0..m {
                let mut best = 0;
                let mut best_score = delta[0] + pot.trans(0, b);
                for (a, &d) in delta.iter().enumerate().skip(1) {
                    let s = d + pot.trans(a, b);
                    if s > best_score {
                        best = a;
                        best_score = s;
                    }
                }
                back[i * m + b] = best;
                next[b] = best_score + pot.emit(i, b);
            }
            std::mem::swap(&mut delta, &mut next);
        }
        let mut last = 0;
        for y in 1..m {
            if delta[y] > delta[last] {
                last = y;
            }
        }
        let mut path = vec![0; n];
        path[n - 1] = last;
        for i in (1..n).rev() {
            path[i - 1] = back[i * m + path[i]];
        }
        LabelSequence::new(path)
    }

    /// Adds `scale * Σ_factors weight(factor) · f(factor)` into `grad`.
    ///
    /// `init[y]` weighs the start factor `(BOS, y_0 = y)`; `edges[(i*m + a)*m + b]`
    /// weighs the factor `(y_i = a, y_{i+1} = b)`, whose emission features sit at
    /// position `i + 1`.
    pub(crate) fn accumulate_factors(
        &self,
        features: &SentenceFeatures,
        init: &[f64],
        edges: &[f64],
        grad: &mut [f64],
        scale: f64,
    ) {
        let m = self.num_labels();
        let index = &self.feature_index;
        let mut node = vec![0.0; m];
        for y in 0..m {
            grad[index.transition_id(None, y)] += scale * init[y];
        }
        add_emissions(index, features.at(0), init, grad, scale);
        for i in 0..features.len().saturating_sub(1) {
            node.iter_mut().for_each(|v| *v = 0.0);
            for a in 0..m {
                for b in 0..m {
                    let w = edges[(i * m + a) * m + b];
                    grad[index.transition_id(Some(a), b)] += scale * w;
                    node[b] += w;
                }
            }
            add_emissions(index, features.at(i + 1), &node, grad, scale);
        }
    }

    /// Adds `scale * E_θ[f]` for one sentence into `grad`.
    pub(crate) fn add_expected_counts(
        &self,
        features: &SentenceFeatures,
        tables: &InferenceTables,
        grad: &mut [f64],
        scale: f64,
    ) {
        self.accumulate_factors(features, tables.node_row(0), &tables.edge, grad, scale);
    }

    /// Adds `scale * f(x, y)` for one labeled sentence into `grad`.
    pub(crate) fn add_observed_counts(
        &self,
        features: &SentenceFeatures,
        labels: &[usize],
        grad: &mut [f64],
        scale: f64,
    ) {
        let index = &self.feature_index;
        let mut prev = None;
        for (i, &y) in labels.iter().enumerate() {
            grad[index.transition_id(prev, y)] += scale;
            for &attr in features.at(i) {
                grad[index.emission_id(attr, y)] += scale;
            }
            prev = Some(y);
        }
    }

    /// `(-||θ||² / 2σ², -θ / σ²)` added into `grad`; returns the value term.
    pub(crate) fn add_l2_penalty(&self, grad: &mut [f64]) -> f64 {
        if self.l2_sigma.is_infinite() {
            return 0.0;
        }
        let inv_var = 1.0 / (self.l2_sigma * self.l2_sigma);
        let mut sq = 0.0;
        for (g, &w) in grad.iter_mut().zip(&self.weights) {
            sq += w * w;
            *g -= w * inv_var;
        }
        -0.5 * sq * inv_var
    }
}

fn add_emissions(index: &FeatureIndex, attrs: &[u32], per_label: &[f64], grad: &mut [f64], scale: f64) {
    for &attr in attrs {
        let base = index.emission_id(attr, 0);
        for (y, &w) in per_label.iter().enumerate() {
            grad[base + y] += scale * w;
        }
    }
}

/// Log potentials of one sentence: per-position emission scores plus the
/// shared transition block (row `m` is the sentence start).
struct Potentials<'a> {
    n: usize,
    m: usize,
    emit: Vec<f64>,
    trans: &'a [f64],
}

impl<'a> Potentials<'a> {
    fn new(model: &'a CrfModel, features: &SentenceFeatures) -> Self {
        let m = model.num_labels();
        let n = features.len();
        let index = model.feature_index();
        let mut emit = vec![0.0; n * m];
        for i in 0..n {
            let row = &mut emit[i * m..(i + 1) * m];
            for &attr in features.at(i) {
                let base = index.emission_id(attr, 0);
                for (y, e) in row.iter_mut().enumerate() {
                    *e += model.weights[base + y];
                }
            }
        }
        Potentials {
            n,
            m,
            emit,
            trans: model.transition_block(),
        }
    }

    #[inline]
    fn emit(&self, i: usize, y: usize) -> f64 {
        self.emit[i * self.m + y]
    }

    #[inline]
    fn trans(&self, a: usize, b: usize) -> f64 {
        self.trans[a * self.m + b]
    }

    #[inline]
    fn init(&self, y: usize) -> f64 {
        self.trans[self.m * self.m + y] + self.emit(0, y)
    }

    /// Log potential of the factor `(y_{i-1} = a, y_i = b)`.
    #[inline]
    fn step(&self, i: usize, a: usize, b: usize) -> f64 {
        self.trans(a, b) + self.emit(i, b)
    }
}

/// Forward/backward tables and posterior marginals for one sentence.
#[derive(Debug, Clone)]
pub struct InferenceTables {
    n: usize,
    m: usize,
    log_alpha: Vec<f64>,
    log_beta: Vec<f64>,
    log_z: f64,
    log_z_backward: f64,
    node: Vec<f64>,
    edge: Vec<f64>,
    emit: Vec<f64>,
}

impl InferenceTables {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn num_labels(&self) -> usize {
        self.m
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    /// `log Z` recomputed from the backward pass.
    pub fn log_z_backward(&self) -> f64 {
        self.log_z_backward
    }

    pub fn log_alpha(&self, i: usize, y: usize) -> f64 {
        self.log_alpha[i * self.m + y]
    }

    pub fn log_beta(&self, i: usize, y: usize) -> f64 {
        self.log_beta[i * self.m + y]
    }

    /// `P(y_i = y | x)`.
    pub fn node(&self, i: usize, y: usize) -> f64 {
        self.node[i * self.m + y]
    }

    pub fn node_row(&self, i: usize) -> &[f64] {
        &self.node[i * self.m..(i + 1) * self.m]
    }

    /// `P(y_i = a, y_{i+1} = b | x)` for `i < n - 1`.
    pub fn edge(&self, i: usize, a: usize, b: usize) -> f64 {
        self.edge[(i * self.m + a) * self.m + b]
    }

    /// `P(y_{i+1} = b | y_i = a, x)` from the log tables.
    pub(crate) fn forward_conditional(&self, model: &CrfModel, i: usize, a: usize, b: usize) -> f64 {
        let m = self.m;
        let t = model.transition_block()[a * m + b];
        (t + self.emit[(i + 1) * m + b] + self.log_beta[(i + 1) * m + b] - self.log_beta[i * m + a]).exp()
    }

    /// `P(y_i = a | y_{i+1} = b, x)`.
    pub(crate) fn backward_conditional(&self, model: &CrfModel, i: usize, a: usize, b: usize) -> f64 {
        let m = self.m;
        let t = model.transition_block()[a * m + b];
        (self.log_alpha[i * m + a] + t + self.emit[(i + 1) * m + b] - self.log_alpha[(i + 1) * m + b]).exp()
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// A labeled sentence with attributes resolved against a model's index.
#[derive(Debug, Clone)]
pub struct LabeledInstance {
    pub features: SentenceFeatures,
    pub labels: LabelSequence,
}

impl LabeledInstance {
    pub fn new(model: &CrfModel, sentence: &Sentence, labels: &LabelSequence) -> Result<Self> {
        if sentence.len() != labels.len() {
            return Err(Error::LengthMismatch {
                what: "sentence vs labels",
                left: sentence.len(),
                right: labels.len(),
            });
        }
        model.label_set().check_sequence(labels)?;
        Ok(LabeledInstance {
            features: model.observe(sentence),
            labels: labels.clone(),
        })
    }
}

/// Unregularized `Σ log P(y*|x)` and its gradient over prepared instances.
pub(crate) fn log_likelihood_terms(model: &CrfModel, data: &[LabeledInstance]) -> (f64, Vec<f64>) {
    chunked_sum(data, model.dim(), |inst, grad| {
        let tables = model.infer(&inst.features);
        model.add_observed_counts(&inst.features, &inst.labels, grad, 1.0);
        model.add_expected_counts(&inst.features, &tables, grad, -1.0);
        model.sequence_score(&inst.features, &inst.labels) - tables.log_z()
    })
}

/// `Σ_a log P(y*_a | x_a; θ) − ||θ||²/(2σ²)` and its gradient.
pub fn supervised_value_and_gradient(model: &CrfModel, data: &[(Sentence, LabelSequence)]) -> Result<(f64, Vec<f64>)> {
    model.check_weights()?;
    let prepared = data
        .iter()
        .map(|(s, y)| LabeledInstance::new(model, s, y))
        .collect::<Result<Vec<_>>>()?;
    Ok(supervised_prepared(model, &prepared))
}

pub(crate) fn supervised_prepared(model: &CrfModel, data: &[LabeledInstance]) -> (f64, Vec<f64>) {
    let (mut value, mut grad) = log_likelihood_terms(model, data);
    value += model.add_l2_penalty(&mut grad);
    (value, grad)
}
