//! Generalized expectation objective over projected label expectations.
//!
//! For one unlabeled sentence with target table `φ̃` and aligned positions `A`,
//! the objective is `-Σ_{i∈A} Σ_j (φ̃_ij − P(y_i = j | x))²`. Its gradient is the
//! covariance `E[φ′ f] − E[φ′] E[f]` of the features with the scalar
//! `φ′(y) = Σ_i u_i(y_i)`, `u = 2(φ̃ − E[φ])`, and `E[φ′ f]` comes from a
//! forward/backward pass over edge marginals that keeps `m × m` numbers per
//! position, for `O(n m²)` work in total.

use serde::{Deserialize, Serialize};

use crate::crf::{CrfModel, InferenceTables};
use crate::error::{Error, Result};
use crate::features::SentenceFeatures;
use crate::sentence::Sentence;

const SIMPLEX_TOL: f64 = 1e-8;

/// Per-position target label distributions for one target-language sentence.
/// Rows of unaligned positions are zero and carry no constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetExpectations {
    num_labels: usize,
    aligned: Vec<bool>,
    table: Vec<f64>,
}

impl TargetExpectations {
    /// `rows[i] = None` marks an unaligned position.
    pub fn from_rows(num_labels: usize, rows: Vec<Option<Vec<f64>>>) -> Result<Self> {
        let mut aligned = Vec::with_capacity(rows.len());
        let mut table = Vec::with_capacity(rows.len() * num_labels);
        for (i, row) in rows.into_iter().enumerate() {
            match row {
                Some(row) => {
                    if row.len() != num_labels {
                        return Err(Error::Expectations(format!(
                            "row {i} has {} entries, expected {num_labels}",
                            row.len()
                        )));
                    }
                    aligned.push(true);
                    table.extend(row);
                }
                None => {
                    aligned.push(false);
                    table.extend(std::iter::repeat_n(0.0, num_labels));
                }
            }
        }
        Self::new(num_labels, aligned, table)
    }

    pub fn new(num_labels: usize, aligned: Vec<bool>, table: Vec<f64>) -> Result<Self> {
        if table.len() != aligned.len() * num_labels {
            return Err(Error::LengthMismatch {
                what: "expectation table vs mask",
                left: table.len(),
                right: aligned.len() * num_labels,
            });
        }
        if aligned.is_empty() {
            return Err(Error::Expectations("empty sentence".into()));
        }
        let targets = TargetExpectations {
            num_labels,
            aligned,
            table,
        };
        targets.validate()?;
        Ok(targets)
    }

    fn validate(&self) -> Result<()> {
        for i in 0..self.len() {
            let row = self.row(i);
            if self.aligned[i] {
                let sum: f64 = row.iter().sum();
                let in_range = row.iter().all(|p| (0.0..=1.0).contains(p));
                if !in_range || (sum - 1.0).abs() > SIMPLEX_TOL {
                    return Err(Error::Expectations(format!("row {i} is not a distribution: {row:?}")));
                }
            } else if row.iter().any(|&p| p != 0.0) {
                return Err(Error::Expectations(format!("unaligned row {i} must be zero")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.aligned.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aligned.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn is_aligned(&self, i: usize) -> bool {
        self.aligned[i]
    }

    pub fn aligned_mask(&self) -> &[bool] {
        &self.aligned
    }

    pub fn aligned_count(&self) -> usize {
        self.aligned.iter().filter(|&&a| a).count()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.table[i * self.num_labels..(i + 1) * self.num_labels]
    }

    /// Copy with position `i` switched to unaligned.
    pub fn without_position(&self, i: usize) -> Self {
        let mut out = self.clone();
        out.aligned[i] = false;
        let m = self.num_labels;
        out.table[i * m..(i + 1) * m].iter_mut().for_each(|p| *p = 0.0);
        out
    }

    /// Replaces every aligned row by the one-hot vector at its argmax
    /// (lowest label on ties).
    pub fn harden(&self) -> Self {
        let mut out = self.clone();
        let m = self.num_labels;
        for i in 0..self.len() {
            if !self.aligned[i] {
                continue;
            }
            let best = argmax(self.row(i));
            let row = &mut out.table[i * m..(i + 1) * m];
            row.iter_mut().for_each(|p| *p = 0.0);
            row[best] = 1.0;
        }
        out
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &p) in row.iter().enumerate().skip(1) {
        if p > row[best] {
            best = j;
        }
    }
    best
}

pub fn harden(targets: &TargetExpectations) -> TargetExpectations {
    targets.harden()
}

/// Intermediate quantities of the GE gradient for one sentence.
#[derive(Debug, Clone)]
pub struct GeWorkspace {
    n: usize,
    m: usize,
    /// `E_θ[φ]`: node marginals on aligned rows, zero elsewhere.
    pub model_expectation: Vec<f64>,
    /// `u = 2(φ̃ − E_θ[φ])`, zero on unaligned rows.
    pub penalty: Vec<f64>,
    /// `E_θ[φ′]`.
    pub expected_phi_prime: f64,
    /// `α(y_i, y_{i+1}, i)` at `[(i*m + a)*m + b]`.
    pub dp_alpha: Vec<f64>,
    /// `β(y_i, y_{i+1}, i)` at `[(i*m + a)*m + b]`.
    pub dp_beta: Vec<f64>,
}

impl GeWorkspace {
    pub fn compute(model: &CrfModel, tables: &InferenceTables, targets: &TargetExpectations) -> Self {
        let n = tables.len();
        let m = tables.num_labels();
        let mut model_expectation = vec![0.0; n * m];
        let mut penalty = vec![0.0; n * m];
        let mut expected_phi_prime = 0.0;
        for i in (0..n).filter(|&i| targets.is_aligned(i)) {
            for y in 0..m {
                let p = tables.node(i, y);
                let u = 2.0 * (targets.row(i)[y] - p);
                model_expectation[i * m + y] = p;
                penalty[i * m + y] = u;
                expected_phi_prime += p * u;
            }
        }

        let edges = n.saturating_sub(1);
        let at = |i: usize, a: usize, b: usize| (i * m + a) * m + b;
        let mut dp_alpha = vec![0.0; edges * m * m];
        let mut dp_beta = vec![0.0; edges * m * m];
        let mut carry = vec![0.0; m];

        for i in 0..edges {
            // carry[a] = Σ_c α(c, a, i-1)
            if i > 0 {
                for a in 0..m {
                    carry[a] = (0..m).map(|c| dp_alpha[at(i - 1, c, a)]).sum();
                }
            }
            for a in 0..m {
                let u = penalty[i * m + a];
                for b in 0..m {
                    let mut v = tables.edge(i, a, b) * u;
                    if i > 0 {
                        v += tables.forward_conditional(model, i, a, b) * carry[a];
                    }
                    dp_alpha[at(i, a, b)] = v;
                }
            }
        }

        for i in (0..edges).rev() {
            // carry[b] = Σ_c β(b, c, i+1)
            if i + 1 < edges {
                for b in 0..m {
                    carry[b] = (0..m).map(|c| dp_beta[at(i + 1, b, c)]).sum();
                }
            }
            for a in 0..m {
                for b in 0..m {
                    let mut v = tables.edge(i, a, b) * penalty[(i + 1) * m + b];
                    if i + 1 < edges {
                        v += tables.backward_conditional(model, i, a, b) * carry[b];
                    }
                    dp_beta[at(i, a, b)] = v;
                }
            }
        }

        GeWorkspace {
            n,
            m,
            model_expectation,
            penalty,
            expected_phi_prime,
            dp_alpha,
            dp_beta,
        }
    }

    /// `Σ_j Σ_{y_j} P(y_i = a, y_{i+1} = b, y_j | x) u_j(y_j)`.
    pub fn edge_covariate(&self, i: usize, a: usize, b: usize) -> f64 {
        let k = (i * self.m + a) * self.m + b;
        self.dp_alpha[k] + self.dp_beta[k]
    }

    /// Adds `scale · (E[φ′ f] − E[φ′] E[f])` into `grad`.
    fn add_gradient(
        &self,
        model: &CrfModel,
        features: &SentenceFeatures,
        tables: &InferenceTables,
        grad: &mut [f64],
        scale: f64,
    ) {
        let (n, m) = (self.n, self.m);
        let e_phi = self.expected_phi_prime;
        // Start factor: Σ_j Σ_{y_j} P(y_0 = b, y_j) u_j(y_j), centered.
        let init: Vec<f64> = (0..m)
            .map(|b| {
                let p = tables.node(0, b);
                let mut c = p * self.penalty[b];
                if n > 1 {
                    c += (0..m).map(|c| self.dp_beta[b * m + c]).sum::<f64>();
                }
                c - e_phi * p
            })
            .collect();
        let mut edges = vec![0.0; n.saturating_sub(1) * m * m];
        for i in 0..n.saturating_sub(1) {
            for a in 0..m {
                for b in 0..m {
                    edges[(i * m + a) * m + b] = self.edge_covariate(i, a, b) - e_phi * tables.edge(i, a, b);
                }
            }
        }
        model.accumulate_factors(features, &init, &edges, grad, scale);
    }
}

fn check_shapes(model: &CrfModel, n: usize, targets: &TargetExpectations) -> Result<()> {
    if targets.len() != n {
        return Err(Error::LengthMismatch {
            what: "targets vs sentence",
            left: targets.len(),
            right: n,
        });
    }
    if targets.num_labels() != model.num_labels() {
        return Err(Error::LengthMismatch {
            what: "target labels vs model labels",
            left: targets.num_labels(),
            right: model.num_labels(),
        });
    }
    Ok(())
}

fn value_from_tables(tables: &InferenceTables, targets: &TargetExpectations) -> f64 {
    let mut value = 0.0;
    for i in (0..targets.len()).filter(|&i| targets.is_aligned(i)) {
        for (y, &t) in targets.row(i).iter().enumerate() {
            let d = t - tables.node(i, y);
            value -= d * d;
        }
    }
    value
}

/// GE value of one sentence; adds `scale · ∇` into `grad` when given.
/// Uses a single forward-backward pass for both.
pub(crate) fn ge_terms(
    model: &CrfModel,
    features: &SentenceFeatures,
    targets: &TargetExpectations,
    grad: Option<&mut [f64]>,
    scale: f64,
) -> f64 {
    let tables = model.infer(features);
    let value = value_from_tables(&tables, targets);
    if let Some(grad) = grad {
        if targets.aligned_count() > 0 {
            let ws = GeWorkspace::compute(model, &tables, targets);
            ws.add_gradient(model, features, &tables, grad, scale);
        }
    }
    value
}

pub fn ge_value(model: &CrfModel, sentence: &Sentence, targets: &TargetExpectations) -> Result<f64> {
    model.check_weights()?;
    check_shapes(model, sentence.len(), targets)?;
    Ok(ge_terms(model, &model.observe(sentence), targets, None, 1.0))
}

pub fn ge_gradient(model: &CrfModel, sentence: &Sentence, targets: &TargetExpectations) -> Result<Vec<f64>> {
    Ok(ge_value_and_gradient(model, sentence, targets)?.1)
}

pub fn ge_value_and_gradient(
    model: &CrfModel,
    sentence: &Sentence,
    targets: &TargetExpectations,
) -> Result<(f64, Vec<f64>)> {
    model.check_weights()?;
    check_shapes(model, sentence.len(), targets)?;
    let mut grad = vec![0.0; model.dim()];
    let value = ge_terms(model, &model.observe(sentence), targets, Some(&mut grad), 1.0);
    Ok((value, grad))
}

/// The DP workspace for one sentence, exposed for inspection.
pub fn ge_workspace(model: &CrfModel, sentence: &Sentence, targets: &TargetExpectations) -> Result<GeWorkspace> {
    model.check_weights()?;
    check_shapes(model, sentence.len(), targets)?;
    let tables = model.infer(&model.observe(sentence));
    Ok(GeWorkspace::compute(model, &tables, targets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureIndex;
    use crate::labels::{LabelSet, Scheme};

    fn zero_model(tokens: &[&str]) -> (CrfModel, Sentence) {
        let set = LabelSet::parse("O,B-PER", Scheme::Bio).unwrap();
        let sentence = Sentence::new(tokens.iter().copied()).unwrap();
        let mut index = FeatureIndex::new(2);
        SentenceFeatures::observe(&sentence, &mut index);
        (CrfModel::new(set, index, 1.0).unwrap(), sentence)
    }

    #[test]
    fn no_aligned_positions_gives_zero() {
        let (model, s) = zero_model(&["a", "b"]);
        let t = TargetExpectations::from_rows(2, vec![None, None]).unwrap();
        assert_eq!(ge_value(&model, &s, &t).unwrap(), 0.0);
        assert!(ge_gradient(&model, &s, &t).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn uniform_target_matches_uniform_model() {
        let (model, s) = zero_model(&["a"]);
        let t = TargetExpectations::from_rows(2, vec![Some(vec![0.5, 0.5])]).unwrap();
        assert_eq!(ge_value(&model, &s, &t).unwrap(), 0.0);
        assert!(ge_gradient(&model, &s, &t).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn one_hot_target_against_uniform_model() {
        let (model, s) = zero_model(&["a"]);
        let t = TargetExpectations::from_rows(2, vec![Some(vec![1.0, 0.0])]).unwrap();
        assert!((ge_value(&model, &s, &t).unwrap() + 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_invalid_rows() {
        assert!(TargetExpectations::from_rows(2, vec![Some(vec![0.7, 0.7])]).is_err());
        assert!(TargetExpectations::from_rows(2, vec![Some(vec![1.5, -0.5])]).is_err());
        assert!(TargetExpectations::from_rows(2, vec![Some(vec![1.0])]).is_err());
        assert!(TargetExpectations::new(2, vec![false], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn rejects_length_mismatch() {
        let (model, s) = zero_model(&["a", "b"]);
        let t = TargetExpectations::from_rows(2, vec![Some(vec![1.0, 0.0])]).unwrap();
        assert!(ge_value(&model, &s, &t).is_err());
    }

    #[test]
    fn harden_examples() {
        let t =
            TargetExpectations::from_rows(3, vec![Some(vec![0.7, 0.2, 0.1]), None, Some(vec![0.0, 1.0, 0.0])]).unwrap();
        let h = t.harden();
        assert_eq!(h.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(h.row(1), &[0.0, 0.0, 0.0]);
        assert!(!h.is_aligned(1));
        assert_eq!(h.row(2), &[0.0, 1.0, 0.0]);
        assert_eq!(h.harden(), h);

        let tie = TargetExpectations::from_rows(2, vec![Some(vec![0.5, 0.5])]).unwrap();
        assert_eq!(tie.harden().row(0), &[1.0, 0.0]);
    }
}
