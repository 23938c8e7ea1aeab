//! Pipeline configuration: flat `key = value` text, `#` starts a comment.
//!
//! ```text
//! labels = O,B-PER,I-PER,B-LOC,I-LOC
//! scheme = bio
//! test = test.conll
//! bitext_source = bitext.src
//! bitext_target = bitext.tgt
//! alignments = bitext.align
//! source_train = source.conll
//! label_map = identity
//! regime = ge
//! output_dir = out
//! max_iterations = 100
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::labels::{LabelSet, Scheme};
use crate::projection::LabelMap;
use crate::trainer::{Regime, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum LabelMapSpec {
    /// Source and target labels are paired by name.
    Identity,
    Pairs(Vec<(String, String)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub bitext_source: Option<PathBuf>,
    pub bitext_target: Option<PathBuf>,
    pub alignments: Option<PathBuf>,
    pub source_model: Option<PathBuf>,
    pub source_train: Option<PathBuf>,
    /// Read when the file exists, written otherwise.
    pub posteriors_cache: Option<PathBuf>,
    pub labels: String,
    pub scheme: Scheme,
    /// Defaults to `labels` / `scheme`.
    pub source_labels: Option<String>,
    pub source_scheme: Option<Scheme>,
    pub label_map: LabelMapSpec,
    pub regime: Regime,
    pub output_dir: PathBuf,
    pub curve_sizes: Vec<usize>,
    pub train_config: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            train: None,
            dev: None,
            test: None,
            bitext_source: None,
            bitext_target: None,
            alignments: None,
            source_model: None,
            source_train: None,
            posteriors_cache: None,
            labels: String::new(),
            scheme: Scheme::Bio,
            source_labels: None,
            source_scheme: None,
            label_map: LabelMapSpec::Identity,
            regime: Regime::Ge,
            output_dir: PathBuf::from("out"),
            curve_sizes: Vec::new(),
            train_config: TrainConfig::default(),
        }
    }
}

/// Keys accepted by [`PipelineConfig::set`] for the training fields.
pub const TRAIN_KEYS: &[&str] = &[
    "ge_weight",
    "l2_sigma",
    "max_iterations",
    "patience",
    "lbfgs_history",
    "projection_mode",
    "seed",
];

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| format!("bad value `{value}` for {key}: {e}"))
}

fn parse_label_map(value: &str) -> std::result::Result<LabelMapSpec, String> {
    if value == "identity" {
        return Ok(LabelMapSpec::Identity);
    }
    value
        .split(',')
        .map(|pair| {
            pair.trim()
                .split_once('=')
                .map(|(s, t)| (s.trim().to_string(), t.trim().to_string()))
                .ok_or_else(|| format!("label_map entry `{pair}` is not source=target"))
        })
        .collect::<std::result::Result<_, _>>()
        .map(LabelMapSpec::Pairs)
}

impl PipelineConfig {
    /// Applies one `key = value` setting. Paths are taken as given.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let path = || Some(PathBuf::from(value));
        match key {
            "train" => self.train = path(),
            "dev" => self.dev = path(),
            "test" => self.test = path(),
            "bitext_source" => self.bitext_source = path(),
            "bitext_target" => self.bitext_target = path(),
            "alignments" => self.alignments = path(),
            "source_model" => self.source_model = path(),
            "source_train" => self.source_train = path(),
            "posteriors_cache" => self.posteriors_cache = path(),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "labels" => self.labels = value.to_string(),
            "scheme" => self.scheme = parse_value(key, value)?,
            "source_labels" => self.source_labels = Some(value.to_string()),
            "source_scheme" => self.source_scheme = Some(parse_value(key, value)?),
            "label_map" => self.label_map = parse_label_map(value)?,
            "regime" => self.regime = parse_value(key, value)?,
            "curve_sizes" => {
                self.curve_sizes = value
                    .split(',')
                    .map(|s| parse_value(key, s.trim()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "ge_weight" => self.train_config.ge_weight = parse_value(key, value)?,
            "l2_sigma" => self.train_config.l2_sigma = parse_value(key, value)?,
            "max_iterations" => self.train_config.max_iterations = parse_value(key, value)?,
            "patience" => self.train_config.patience = parse_value(key, value)?,
            "lbfgs_history" => self.train_config.lbfgs_history = parse_value(key, value)?,
            "projection_mode" => self.train_config.projection_mode = parse_value(key, value)?,
            "seed" => self.train_config.seed = parse_value(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Parses configuration text without touching the file system.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut config = PipelineConfig::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.split('\n').enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, line_no, "expected `key = value`"))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::parse(path, line_no, format!("duplicate key `{key}`")));
            }
            config.set(key, value).map_err(|m| Error::parse(path, line_no, m))?;
        }
        Ok(config)
    }

    /// Reads, resolves relative paths and validates.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse(&text, path)?;
        config.resolve_paths(path.parent().unwrap_or(Path::new("")));
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.train,
            &mut self.dev,
            &mut self.test,
            &mut self.bitext_source,
            &mut self.bitext_target,
            &mut self.alignments,
            &mut self.source_model,
            &mut self.source_train,
            &mut self.posteriors_cache,
        ]
        .into_iter()
        .flatten()
        {
            join(p);
        }
        join(&mut self.output_dir);
    }

    pub fn label_set(&self) -> Result<LabelSet> {
        if self.labels.is_empty() {
            return Err(Error::Config("`labels` is required".into()));
        }
        LabelSet::parse(&self.labels, self.scheme)
    }

    pub fn source_label_set(&self) -> Result<LabelSet> {
        LabelSet::parse(
            self.source_labels.as_deref().unwrap_or(&self.labels),
            self.source_scheme.unwrap_or(self.scheme),
        )
    }

    /// Source-to-target label bijection.
    pub fn label_map(&self) -> Result<LabelMap> {
        let (source, target) = (self.source_label_set()?, self.label_set()?);
        match &self.label_map {
            LabelMapSpec::Identity => LabelMap::by_name(&source, &target),
            LabelMapSpec::Pairs(pairs) => {
                LabelMap::from_names(&source, &target, pairs.iter().map(|(s, t)| (s.as_str(), t.as_str())))
            }
        }
    }

    pub fn has_bitext(&self) -> bool {
        self.bitext_target.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config.validate()?;
        self.label_set()?;
        let inputs = [
            ("train", &self.train),
            ("dev", &self.dev),
            ("test", &self.test),
            ("bitext_source", &self.bitext_source),
            ("bitext_target", &self.bitext_target),
            ("alignments", &self.alignments),
            ("source_model", &self.source_model),
            ("source_train", &self.source_train),
        ];
        for (key, path) in inputs {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(Error::Config(format!("{key}: file not found: {}", p.display())));
                }
            }
        }
        if self.test.is_none() {
            return Err(Error::Config("`test` is required".into()));
        }
        let bitext = [&self.bitext_source, &self.bitext_target, &self.alignments];
        let given = bitext.iter().filter(|p| p.is_some()).count();
        if given != 0 && given != 3 {
            return Err(Error::Config(
                "bitext_source, bitext_target and alignments must be given together".into(),
            ));
        }
        if self.has_bitext() {
            let cached = self.posteriors_cache.as_ref().is_some_and(|p| p.is_file());
            if !cached && self.source_model.is_none() && self.source_train.is_none() {
                return Err(Error::Config(
                    "bitext needs source_model, source_train or an existing posteriors_cache".into(),
                ));
            }
            self.label_map()?;
        }
        match self.regime {
            Regime::Supervised if self.train.is_none() => {
                Err(Error::Config("the supervised regime needs `train`".into()))
            }
            Regime::Ge | Regime::ProjectThenTrain if !self.has_bitext() => {
                Err(Error::Config(format!("the {} regime needs bitext", self.regime)))
            }
            _ => Ok(()),
        }
    }
}
