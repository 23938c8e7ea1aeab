//! Transfer of source-side posterior marginals to target-side expectations
//! through word alignments.

use std::collections::BTreeSet;

use crate::crf::CrfModel;
use crate::error::{Error, Result};
use crate::ge::{argmax, TargetExpectations};
use crate::labels::LabelSet;
use crate::sentence::{LabelSequence, Sentence};

const SIMPLEX_TOL: f64 = 1e-8;

/// One bitext sentence pair with its alignment links `(source, target)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedPair {
    pub source: Sentence,
    pub target: Sentence,
    links: BTreeSet<(usize, usize)>,
}

impl AlignedPair {
    pub fn new(source: Sentence, target: Sentence, links: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let links: BTreeSet<_> = links.into_iter().collect();
        if let Some(&(s, t)) = links.iter().find(|&&(s, t)| s >= source.len() || t >= target.len()) {
            return Err(Error::OutOfRange(format!(
                "link {s}-{t} with source length {} and target length {}",
                source.len(),
                target.len()
            )));
        }
        Ok(AlignedPair { source, target, links })
    }

    pub fn links(&self) -> &BTreeSet<(usize, usize)> {
        &self.links
    }

    /// Source positions aligned to each target position.
    pub fn aligned_sources(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.target.len()];
        for &(s, t) in &self.links {
            out[t].push(s);
        }
        out
    }
}

/// Source-side posterior marginals, one simplex row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTable {
    num_labels: usize,
    rows: Vec<f64>,
}

impl PosteriorTable {
    /// Rows must lie on the simplex within `tolerance`; rows off by more than
    /// `1e-8` but within `tolerance` are renormalized.
    pub fn with_tolerance(num_labels: usize, rows: Vec<Vec<f64>>, tolerance: f64) -> Result<Self> {
        if num_labels == 0 || rows.is_empty() {
            return Err(Error::Expectations("empty posterior table".into()));
        }
        let mut flat = Vec::with_capacity(rows.len() * num_labels);
        for (i, mut row) in rows.into_iter().enumerate() {
            if row.len() != num_labels {
                return Err(Error::LengthMismatch {
                    what: "posterior row",
                    left: row.len(),
                    right: num_labels,
                });
            }
            let sum: f64 = row.iter().sum();
            if row
                .iter()
                .any(|p| !p.is_finite() || *p < -tolerance || *p > 1.0 + tolerance)
                || (sum - 1.0).abs() > tolerance
            {
                return Err(Error::Expectations(format!(
                    "posterior row {i} is not a distribution: {row:?}"
                )));
            }
            if (sum - 1.0).abs() > SIMPLEX_TOL || row.iter().any(|p| *p < 0.0) {
                row.iter_mut().for_each(|p| *p = p.max(0.0));
                let sum: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= sum);
            }
            flat.extend(row);
        }
        Ok(PosteriorTable { num_labels, rows: flat })
    }

    pub fn new(num_labels: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::with_tolerance(num_labels, rows, SIMPLEX_TOL)
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.num_labels
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.num_labels..(i + 1) * self.num_labels]
    }
}

/// Bijection from source label indices to target label indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    source_to_target: Vec<usize>,
}

impl LabelMap {
    pub fn new(source_to_target: Vec<usize>) -> Result<Self> {
        let m = source_to_target.len();
        let mut seen = vec![false; m];
        for (s, &t) in source_to_target.iter().enumerate() {
            if t >= m {
                return Err(Error::LabelMap(format!(
                    "source label {s} maps to {t}, outside {m} target labels"
                )));
            }
            if std::mem::replace(&mut seen[t], true) {
                return Err(Error::LabelMap(format!("target label {t} is mapped twice")));
            }
        }
        Ok(LabelMap { source_to_target })
    }

    pub fn identity(num_labels: usize) -> Self {
        LabelMap {
            source_to_target: (0..num_labels).collect(),
        }
    }

    /// Builds the map from `source=target` name pairs; every label of both
    /// inventories must appear exactly once.
    pub fn from_names<'a>(
        source: &LabelSet,
        target: &LabelSet,
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self> {
        if source.len() != target.len() {
            return Err(Error::LabelMap(format!(
                "source has {} labels, target has {}",
                source.len(),
                target.len()
            )));
        }
        let mut map = vec![usize::MAX; source.len()];
        for (s, t) in pairs {
            let si = source
                .index_of(s)
                .ok_or_else(|| Error::LabelMap(format!("unknown source label `{s}`")))?;
            let ti = target
                .index_of(t)
                .ok_or_else(|| Error::LabelMap(format!("unknown target label `{t}`")))?;
            if map[si] != usize::MAX {
                return Err(Error::LabelMap(format!("source label `{s}` is mapped twice")));
            }
            map[si] = ti;
        }
        if let Some(s) = map.iter().position(|&t| t == usize::MAX) {
            return Err(Error::LabelMap(format!(
                "source label `{}` is not mapped",
                source.name(s)
            )));
        }
        LabelMap::new(map)
    }

    /// Maps labels by identical names.
    pub fn by_name(source: &LabelSet, target: &LabelSet) -> Result<Self> {
        let pairs: Vec<(&str, &str)> = source.labels().iter().map(|l| (l.as_str(), l.as_str())).collect();
        Self::from_names(source, target, pairs)
    }

    pub fn len(&self) -> usize {
        self.source_to_target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_to_target.is_empty()
    }

    pub fn target_of(&self, source: usize) -> usize {
        self.source_to_target[source]
    }
}

/// Node marginals of the source model, one row per source token.
pub fn source_posteriors(source_model: &CrfModel, sentence: &Sentence) -> Result<PosteriorTable> {
    let tables = source_model.run_inference(sentence)?;
    let m = source_model.num_labels();
    let rows = (0..sentence.len()).map(|i| tables.node_row(i).to_vec()).collect();
    PosteriorTable::new(m, rows)
}

fn check_inputs(pair: &AlignedPair, posteriors: &PosteriorTable, label_map: &LabelMap) -> Result<()> {
    if posteriors.len() != pair.source.len() {
        return Err(Error::LengthMismatch {
            what: "posteriors vs source sentence",
            left: posteriors.len(),
            right: pair.source.len(),
        });
    }
    if label_map.len() != posteriors.num_labels() {
        return Err(Error::LabelMap(format!(
            "map covers {} labels, posteriors have {}",
            label_map.len(),
            posteriors.num_labels()
        )));
    }
    Ok(())
}

/// Mean label-mapped posterior of the aligned source words at each target
/// position; `None` where nothing is aligned.
fn projected_rows(pair: &AlignedPair, posteriors: &PosteriorTable, label_map: &LabelMap) -> Vec<Option<Vec<f64>>> {
    let m = posteriors.num_labels();
    pair.aligned_sources()
        .into_iter()
        .map(|sources| {
            if sources.is_empty() {
                return None;
            }
            let mut row = vec![0.0; m];
            for &s in &sources {
                for (label, &p) in posteriors.row(s).iter().enumerate() {
                    row[label_map.target_of(label)] += p;
                }
            }
            let k = sources.len() as f64;
            row.iter_mut().for_each(|p| *p /= k);
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                row.iter_mut().for_each(|p| *p /= sum);
            }
            Some(row)
        })
        .collect()
}

pub fn project(pair: &AlignedPair, posteriors: &PosteriorTable, label_map: &LabelMap) -> Result<TargetExpectations> {
    check_inputs(pair, posteriors, label_map)?;
    TargetExpectations::from_rows(posteriors.num_labels(), projected_rows(pair, posteriors, label_map))
}

/// One-best projected labels; unaligned target positions get `outside`.
pub fn project_hard_labels(
    pair: &AlignedPair,
    posteriors: &PosteriorTable,
    label_map: &LabelMap,
    outside: usize,
) -> Result<LabelSequence> {
    check_inputs(pair, posteriors, label_map)?;
    if outside >= posteriors.num_labels() {
        return Err(Error::OutOfRange(format!("outside label {outside}")));
    }
    Ok(projected_rows(pair, posteriors, label_map)
        .into_iter()
        .map(|row| row.map_or(outside, |r| argmax(&r)))
        .collect())
}

/// Labels read off hardened targets: argmax on aligned rows, `outside` elsewhere.
pub fn hard_labels_from_targets(targets: &TargetExpectations, outside: usize) -> LabelSequence {
    (0..targets.len())
        .map(|i| {
            if targets.is_aligned(i) {
                argmax(targets.row(i))
            } else {
                outside
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::Scheme;

    fn pair(ns: usize, nt: usize, links: &[(usize, usize)]) -> AlignedPair {
        let src = Sentence::new((0..ns).map(|i| format!("s{i}"))).unwrap();
        let tgt = Sentence::new((0..nt).map(|i| format!("t{i}"))).unwrap();
        AlignedPair::new(src, tgt, links.iter().copied()).unwrap()
    }

    #[test]
    fn single_link_copies_row() {
        let p = pair(1, 1, &[(0, 0)]);
        let post = PosteriorTable::new(2, vec![vec![0.9, 0.1]]).unwrap();
        let t = project(&p, &post, &LabelMap::identity(2)).unwrap();
        assert!(t.is_aligned(0));
        assert_eq!(t.row(0), &[0.9, 0.1]);
    }

    #[test]
    fn two_links_average() {
        let p = pair(2, 1, &[(0, 0), (1, 0)]);
        let post = PosteriorTable::new(2, vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let t = project(&p, &post, &LabelMap::identity(2)).unwrap();
        assert_eq!(t.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn unaligned_target_is_masked() {
        let p = pair(1, 2, &[(0, 0)]);
        let post = PosteriorTable::new(2, vec![vec![0.9, 0.1]]).unwrap();
        let t = project(&p, &post, &LabelMap::identity(2)).unwrap();
        assert!(!t.is_aligned(1));
        assert_eq!(t.row(1), &[0.0, 0.0]);
        let hard = project_hard_labels(&p, &post, &LabelMap::identity(2), 1).unwrap();
        assert_eq!(&*hard, &[0, 1]);
    }

    #[test]
    fn label_map_permutes_columns() {
        let p = pair(1, 1, &[(0, 0)]);
        let post = PosteriorTable::new(3, vec![vec![0.6, 0.3, 0.1]]).unwrap();
        let map = LabelMap::new(vec![2, 0, 1]).unwrap();
        let t = project(&p, &post, &map).unwrap();
        assert_eq!(t.row(0), &[0.3, 0.1, 0.6]);
    }

    #[test]
    fn non_bijective_maps_are_rejected() {
        assert!(LabelMap::new(vec![0, 0]).is_err());
        assert!(LabelMap::new(vec![0, 2]).is_err());
        let src = LabelSet::parse("O,B-PER,I-PER", Scheme::Bio).unwrap();
        let tgt = LabelSet::parse("O,B-PER", Scheme::Bio).unwrap();
        assert!(LabelMap::by_name(&src, &tgt).is_err());
        let tgt = LabelSet::parse("O,B-PERS,I-PERS", Scheme::Bio).unwrap();
        assert!(LabelMap::by_name(&src, &tgt).is_err());
        let map = LabelMap::from_names(&src, &tgt, [("O", "O"), ("B-PER", "B-PERS"), ("I-PER", "I-PERS")]).unwrap();
        assert_eq!(map.target_of(2), 2);
    }

    #[test]
    fn out_of_range_links_are_rejected() {
        let src = Sentence::new(["a"]).unwrap();
        let tgt = Sentence::new(["b"]).unwrap();
        assert!(AlignedPair::new(src, tgt, [(0, 1)]).is_err());
    }

    #[test]
    fn posterior_rows_must_be_distributions() {
        assert!(PosteriorTable::new(2, vec![vec![0.9, 0.2]]).is_err());
        let relaxed = PosteriorTable::with_tolerance(2, vec![vec![0.5000001, 0.5]], 1e-6).unwrap();
        assert!((relaxed.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
