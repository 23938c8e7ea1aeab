//! Readers and writers for the on-disk formats.
//!
//! * CoNLL: `token<TAB>...<TAB>label`, blank line between sentences.
//! * Plain tokens: one sentence per line, tokens separated by spaces.
//! * Pharaoh alignments: one line per sentence pair, `src-tgt` zero-based links.
//! * Posteriors / expectations: TSV with a header row, probabilities written
//!   with 12 decimal places.
//!
//! Readers reject malformed input and report the offending line number.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::crf::CrfModel;
use crate::error::{Error, Result};
use crate::ge::TargetExpectations;
use crate::labels::LabelSet;
use crate::projection::PosteriorTable;
use crate::sentence::{LabelSequence, Sentence};
use crate::trainer::Labeled;

/// Simplex tolerance applied when reading serialized probabilities.
pub const READ_SIMPLEX_TOL: f64 = 1e-6;

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Lines with `\r\n` normalized to `\n`, numbered from 1.
fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .enumerate()
        .map(|(i, l)| (i + 1, l))
}

pub fn read_conll(path: impl AsRef<Path>, label_set: &LabelSet) -> Result<Vec<Labeled>> {
    let path = path.as_ref();
    parse_conll(&read_text(path)?, path, label_set)
}

pub fn parse_conll(text: &str, path: &Path, label_set: &LabelSet) -> Result<Vec<Labeled>> {
    let mut out = Vec::new();
    let mut tokens = Vec::new();
    let mut columns = Vec::new();
    let mut labels = Vec::new();
    let mut flush = |tokens: &mut Vec<String>,
                     columns: &mut Vec<Vec<String>>,
                     labels: &mut Vec<usize>,
                     line: usize|
     -> Result<()> {
        if tokens.is_empty() {
            return Ok(());
        }
        let sentence = Sentence::new(std::mem::take(tokens))
            .and_then(|s| s.with_columns(std::mem::take(columns)))
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
        out.push((sentence, LabelSequence::new(std::mem::take(labels))));
        Ok(())
    };
    let mut last_line = 0;
    for (line_no, line) in numbered_lines(text) {
        last_line = line_no;
        if line.trim().is_empty() {
            flush(&mut tokens, &mut columns, &mut labels, line_no)?;
            continue;
        }
        if line.starts_with("-DOCSTART-") {
            continue;
        }
        let fields: Vec<&str> = if line.contains('\t') {
            line.split('\t').collect()
        } else {
            line.split_whitespace().collect()
        };
        if fields.len() < 2 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected `token<TAB>label`, got `{line}`"),
            ));
        }
        let label = fields[fields.len() - 1];
        let idx = label_set
            .index_of(label)
            .ok_or_else(|| Error::parse(path, line_no, format!("unknown label `{label}`")))?;
        tokens.push(fields[0].to_string());
        columns.push(fields[1..fields.len() - 1].iter().map(|s| s.to_string()).collect());
        labels.push(idx);
    }
    flush(&mut tokens, &mut columns, &mut labels, last_line)?;
    Ok(out)
}

/// Distinct labels in the last column of CoNLL files, `O` first, the rest sorted.
pub fn scan_labels<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<String>> {
    let mut seen = BTreeSet::new();
    for path in paths {
        let path = path.as_ref();
        for (_, line) in numbered_lines(&read_text(path)?) {
            if line.trim().is_empty() || line.starts_with("-DOCSTART-") {
                continue;
            }
            let label = if line.contains('\t') {
                line.rsplit('\t').next()
            } else {
                line.split_whitespace().last()
            };
            seen.extend(label.map(str::to_string));
        }
    }
    let mut labels = vec![crate::labels::OUTSIDE.to_string()];
    labels.extend(seen.into_iter().filter(|l| l != crate::labels::OUTSIDE));
    Ok(labels)
}

pub fn format_conll(data: &[Labeled], label_set: &LabelSet) -> String {
    let mut out = String::new();
    for (sentence, labels) in data {
        for (i, (token, &label)) in sentence.tokens().iter().zip(labels.iter()).enumerate() {
            out.push_str(token);
            for c in sentence.columns(i) {
                out.push('\t');
                out.push_str(c);
            }
            out.push('\t');
            out.push_str(label_set.name(label));
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

pub fn write_conll(path: impl AsRef<Path>, data: &[Labeled], label_set: &LabelSet) -> Result<()> {
    write_text(path.as_ref(), &format_conll(data, label_set))
}

/// One sentence per line; a trailing newline is allowed, blank lines are not.
pub fn read_tokens(path: impl AsRef<Path>) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let body = text.strip_suffix('\n').unwrap_or(&text);
    if body.is_empty() {
        return Ok(Vec::new());
    }
    numbered_lines(body)
        .map(|(line_no, line)| {
            Sentence::new(line.split_whitespace()).map_err(|_| Error::parse(path, line_no, "empty sentence"))
        })
        .collect()
}

pub fn write_tokens(path: impl AsRef<Path>, sentences: &[Sentence]) -> Result<()> {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&s.tokens().join(" "));
        out.push('\n');
    }
    write_text(path.as_ref(), &out)
}

pub type Links = BTreeSet<(usize, usize)>;

pub fn parse_alignments(text: &str, path: &Path) -> Result<Vec<Links>> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    if body.is_empty() && text.is_empty() {
        return Ok(Vec::new());
    }
    numbered_lines(body)
        .map(|(line_no, line)| {
            line.split_whitespace()
                .map(|tok| {
                    let parsed = tok
                        .split_once('-')
                        .and_then(|(s, t)| Some((s.parse::<usize>().ok()?, t.parse::<usize>().ok()?)));
                    parsed.ok_or_else(|| Error::parse(path, line_no, format!("malformed link `{tok}`")))
                })
                .collect()
        })
        .collect()
}

pub fn read_alignments(path: impl AsRef<Path>) -> Result<Vec<Links>> {
    let path = path.as_ref();
    parse_alignments(&read_text(path)?, path)
}

pub fn format_alignments(links: &[Links]) -> String {
    let mut out = String::new();
    for set in links {
        let line: Vec<String> = set.iter().map(|(s, t)| format!("{s}-{t}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_alignments(path: impl AsRef<Path>, links: &[Links]) -> Result<()> {
    write_text(path.as_ref(), &format_alignments(links))
}

/// Twelve decimal places: round trips stay within 1e-12.
fn fmt_prob(p: f64) -> String {
    format!("{p:.12}")
}

pub fn format_posteriors(labels: &[String], tables: &[PosteriorTable]) -> String {
    let mut out = format!("sentence\ttoken\t{}\n", labels.join("\t"));
    for (s, table) in tables.iter().enumerate() {
        for t in 0..table.len() {
            out.push_str(&format!("{s}\t{t}"));
            for &p in table.row(t) {
                out.push('\t');
                out.push_str(&fmt_prob(p));
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_posteriors(path: impl AsRef<Path>, labels: &[String], tables: &[PosteriorTable]) -> Result<()> {
    write_text(path.as_ref(), &format_posteriors(labels, tables))
}

/// Row cursor over a probability TSV whose rows must enumerate every
/// `(sentence, token)` of `lengths` in order.
struct TsvRows<'a> {
    path: &'a Path,
    labels: Vec<String>,
    rows: Vec<(usize, Vec<&'a str>)>,
}

fn parse_tsv<'a>(text: &'a str, path: &'a Path, fixed: &[&str]) -> Result<TsvRows<'a>> {
    let mut lines = numbered_lines(text).filter(|(_, l)| !l.is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "missing header"))?;
    let head: Vec<&str> = header.split('\t').collect();
    if head.len() <= fixed.len() || head[..fixed.len()] != *fixed {
        return Err(Error::parse(
            path,
            1,
            format!("header must start with {}", fixed.join("<TAB>")),
        ));
    }
    let labels: Vec<String> = head[fixed.len()..].iter().map(|s| s.to_string()).collect();
    let width = head.len();
    let rows = lines
        .map(|(line_no, line)| {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != width {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("expected {width} fields, got {}", fields.len()),
                ));
            }
            Ok((line_no, fields))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TsvRows { path, labels, rows })
}

impl<'a> TsvRows<'a> {
    /// Groups rows by sentence, checking indices against `lengths`.
    fn grouped(&self, lengths: &[usize]) -> Result<Vec<Vec<(usize, &[&'a str])>>> {
        let mut out: Vec<Vec<(usize, &[&'a str])>> = lengths.iter().map(|&n| Vec::with_capacity(n)).collect();
        let mut expected = lengths
            .iter()
            .enumerate()
            .flat_map(|(s, &n)| (0..n).map(move |t| (s, t)));
        let mut last_line = 1;
        for (line_no, fields) in &self.rows {
            last_line = *line_no;
            let idx = fields[0]
                .parse::<usize>()
                .ok()
                .zip(fields[1].parse::<usize>().ok())
                .ok_or_else(|| Error::parse(self.path, *line_no, "bad sentence/token index"))?;
            match expected.next() {
                Some(want) if want == idx => out[idx.0].push((*line_no, &fields[2..])),
                Some(want) => {
                    return Err(Error::parse(
                        self.path,
                        *line_no,
                        format!(
                            "expected row for sentence {} token {}, found {} {}",
                            want.0, want.1, idx.0, idx.1
                        ),
                    ))
                }
                None => {
                    return Err(Error::parse(
                        self.path,
                        *line_no,
                        "more rows than the declared sentence lengths",
                    ))
                }
            }
        }
        if let Some(want) = expected.next() {
            return Err(Error::parse(
                self.path,
                last_line,
                format!("missing row for sentence {} token {}", want.0, want.1),
            ));
        }
        Ok(out)
    }
}

fn parse_probs(path: &Path, line: usize, fields: &[&str]) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|p| p.is_finite())
                .ok_or_else(|| Error::parse(path, line, format!("bad probability `{f}`")))
        })
        .collect()
}

/// Reads posterior tables for sentences of the given lengths; returns the
/// label names from the header alongside the tables.
pub fn parse_posteriors(text: &str, path: &Path, lengths: &[usize]) -> Result<(Vec<String>, Vec<PosteriorTable>)> {
    let tsv = parse_tsv(text, path, &["sentence", "token"])?;
    let m = tsv.labels.len();
    let tables = tsv
        .grouped(lengths)?
        .into_iter()
        .map(|rows| {
            let first_line = rows.first().map_or(0, |r| r.0);
            let probs = rows
                .iter()
                .map(|(line, fields)| parse_probs(path, *line, fields))
                .collect::<Result<Vec<_>>>()?;
            PosteriorTable::with_tolerance(m, probs, READ_SIMPLEX_TOL)
                .map_err(|e| Error::parse(path, first_line, e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((tsv.labels, tables))
}

pub fn read_posteriors(path: impl AsRef<Path>, lengths: &[usize]) -> Result<(Vec<String>, Vec<PosteriorTable>)> {
    let path = path.as_ref();
    parse_posteriors(&read_text(path)?, path, lengths)
}

pub fn format_targets(labels: &[String], targets: &[TargetExpectations]) -> String {
    let mut out = format!("sentence\ttoken\taligned\t{}\n", labels.join("\t"));
    for (s, t) in targets.iter().enumerate() {
        for i in 0..t.len() {
            out.push_str(&format!("{s}\t{i}\t{}", u8::from(t.is_aligned(i))));
            for &p in t.row(i) {
                out.push('\t');
                out.push_str(&fmt_prob(p));
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_targets(path: impl AsRef<Path>, labels: &[String], targets: &[TargetExpectations]) -> Result<()> {
    write_text(path.as_ref(), &format_targets(labels, targets))
}

pub fn parse_targets(text: &str, path: &Path, lengths: &[usize]) -> Result<(Vec<String>, Vec<TargetExpectations>)> {
    let tsv = parse_tsv(text, path, &["sentence", "token", "aligned"])?;
    let m = tsv.labels.len();
    let targets = tsv
        .grouped(lengths)?
        .into_iter()
        .map(|rows| {
            let first_line = rows.first().map_or(0, |r| r.0);
            let rows = rows
                .iter()
                .map(|(line, fields)| {
                    let aligned = match fields[0] {
                        "1" => true,
                        "0" => false,
                        other => return Err(Error::parse(path, *line, format!("bad aligned flag `{other}`"))),
                    };
                    let mut probs = parse_probs(path, *line, &fields[1..])?;
                    if !aligned {
                        return if probs.iter().all(|&p| p == 0.0) {
                            Ok(None)
                        } else {
                            Err(Error::parse(path, *line, "unaligned row must be zero"))
                        };
                    }
                    let sum: f64 = probs.iter().sum();
                    if (sum - 1.0).abs() > READ_SIMPLEX_TOL || probs.iter().any(|&p| p < -READ_SIMPLEX_TOL) {
                        return Err(Error::parse(path, *line, "row is not a distribution"));
                    }
                    probs.iter_mut().for_each(|p| *p = p.max(0.0));
                    if (sum - 1.0).abs() > 1e-9 {
                        probs.iter_mut().for_each(|p| *p /= sum);
                    }
                    Ok(Some(probs))
                })
                .collect::<Result<Vec<_>>>()?;
            TargetExpectations::from_rows(m, rows).map_err(|e| Error::parse(path, first_line, e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((tsv.labels, targets))
}

pub fn read_targets(path: impl AsRef<Path>, lengths: &[usize]) -> Result<(Vec<String>, Vec<TargetExpectations>)> {
    let path = path.as_ref();
    parse_targets(&read_text(path)?, path, lengths)
}

pub fn save_model(path: impl AsRef<Path>, model: &CrfModel) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string(model).map_err(|e| Error::ModelFormat {
        path: path.to_path_buf(),
        cause: e,
    })?;
    write_text(path, &json)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<CrfModel> {
    let path = path.as_ref();
    let model: CrfModel = serde_json::from_str(&read_text(path)?).map_err(|e| Error::ModelFormat {
        path: path.to_path_buf(),
        cause: e,
    })?;
    if model.weights().len() != model.feature_index().len() || model.feature_index().num_labels() != model.num_labels()
    {
        return Err(Error::Config(format!(
            "{}: weights do not match the feature index",
            path.display()
        )));
    }
    model.check_weights()?;
    Ok(model)
}
