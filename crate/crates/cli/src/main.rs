use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use projtag::config::PipelineConfig;
use projtag::io;
use projtag::pipeline::{self, compute_posteriors, evaluate, format_curve, read_bitext, train_source_model};
use projtag::projection::{project, LabelMap};
use projtag::synth::{SynthConfig, SyntheticCorpus};
use projtag::trainer::{train, Corpus, Labeled, ProjectionMode, Regime, TrainConfig};
use projtag::{paired_bootstrap, score, LabelSequence, LabelSet, Scheme};

#[derive(Parser, Debug)]
#[command(
    name = "projtag",
    version,
    about = "Cross-lingual CRF tagging with projected expectations"
)]
struct Cli {
    /// Log more (repeat for trace output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a supervised source-language tagger.
    TrainSource(TrainSourceArgs),
    /// Write source posterior marginals for tokenized sentences.
    Posteriors(PosteriorsArgs),
    /// Project cached source posteriors onto the target side of a bitext.
    Project(ProjectArgs),
    /// Train a target model.
    Train(TrainArgs),
    /// Score predictions against gold labels.
    Eval(EvalArgs),
    /// Paired bootstrap significance test.
    Bootstrap(BootstrapArgs),
    /// Run the whole workflow from a configuration file.
    Pipeline(PipelineArgs),
    /// Sweep labeled-data sizes and write a CSV of scores.
    LearningCurve(CurveArgs),
    /// Generate a synthetic parallel corpus and pipeline configuration.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct LabelArgs {
    /// Comma-separated label inventory, e.g. O,B-PER,I-PER.
    #[arg(long)]
    labels: String,
    #[arg(long, default_value = "bio")]
    scheme: Scheme,
}

impl LabelArgs {
    fn label_set(&self) -> Result<LabelSet> {
        Ok(LabelSet::parse(&self.labels, self.scheme)?)
    }
}

/// Training options; each overrides the configured value.
#[derive(Args, Debug, Default)]
struct TrainFlags {
    #[arg(long)]
    ge_weight: Option<f64>,
    #[arg(long)]
    l2_sigma: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lbfgs_history: Option<usize>,
    /// soft or hard
    #[arg(long)]
    projection_mode: Option<ProjectionMode>,
    #[arg(long)]
    seed: Option<u64>,
}

impl TrainFlags {
    fn apply(&self, config: &mut TrainConfig) {
        if let Some(v) = self.ge_weight {
            config.ge_weight = v;
        }
        if let Some(v) = self.l2_sigma {
            config.l2_sigma = v;
        }
        if let Some(v) = self.max_iterations {
            config.max_iterations = v;
        }
        if let Some(v) = self.patience {
            config.patience = v;
        }
        if let Some(v) = self.lbfgs_history {
            config.lbfgs_history = v;
        }
        if let Some(v) = self.projection_mode {
            config.projection_mode = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
    }

    fn config(&self) -> TrainConfig {
        let mut config = TrainConfig::default();
        self.apply(&mut config);
        config
    }
}

#[derive(Args, Debug)]
struct TrainSourceArgs {
    /// Labeled source sentences (CoNLL).
    #[arg(long)]
    train: PathBuf,
    #[command(flatten)]
    labels: LabelArgs,
    /// Output model (JSON).
    #[arg(long, short)]
    out: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args, Debug)]
struct PosteriorsArgs {
    #[arg(long)]
    model: PathBuf,
    /// One tokenized sentence per line.
    #[arg(long)]
    tokens: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ProjectArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Pharaoh-format links, source index first.
    #[arg(long)]
    alignments: PathBuf,
    #[arg(long)]
    posteriors: PathBuf,
    #[command(flatten)]
    labels: LabelArgs,
    /// Source scheme; the posterior header supplies the source labels.
    #[arg(long)]
    source_scheme: Option<Scheme>,
    /// `identity` or source=target pairs separated by commas.
    #[arg(long, default_value = "identity")]
    label_map: String,
    #[arg(long, default_value = "soft")]
    mode: ProjectionMode,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, default_value = "ge")]
    regime: Regime,
    #[command(flatten)]
    labels: LabelArgs,
    /// Labeled target sentences (CoNLL).
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, requires_all = ["bitext_target", "alignments", "targets"])]
    bitext_source: Option<PathBuf>,
    #[arg(long)]
    bitext_target: Option<PathBuf>,
    #[arg(long)]
    alignments: Option<PathBuf>,
    /// Projected expectations written by `project`.
    #[arg(long)]
    targets: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Inferred from the files when omitted.
    #[arg(long)]
    labels: Option<String>,
    #[arg(long, default_value = "bio")]
    scheme: Scheme,
    /// Print JSON instead of the conlleval layout.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct BootstrapArgs {
    #[arg(long)]
    gold: PathBuf,
    /// Predictions of system A, one file per run.
    #[arg(long = "a", required = true, num_args = 1..)]
    system_a: Vec<PathBuf>,
    /// Predictions of system B, paired with the runs of A.
    #[arg(long = "b", required = true, num_args = 1..)]
    system_b: Vec<PathBuf>,
    #[arg(long)]
    labels: Option<String>,
    #[arg(long, default_value = "bio")]
    scheme: Scheme,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    regime: Option<Regime>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args, Debug)]
struct CurveArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Comma-separated labeled-data sizes; defaults to `curve_sizes`.
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<usize>,
    /// CSV path; defaults to learning_curve.csv in the output directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 500)]
    pairs: usize,
    #[arg(long, default_value_t = 200)]
    dev: usize,
    #[arg(long, default_value_t = 200)]
    test: usize,
    /// Labeled target sentences outside the bitext.
    #[arg(long, default_value_t = 0)]
    labeled: usize,
    #[arg(long, default_value_t = 300)]
    source_train: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Flatten source posteriors at entity boundaries.
    #[arg(long)]
    boundary_entropy: bool,
    /// Written into the generated configuration.
    #[arg(long, default_value_t = 100)]
    max_iterations: usize,
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn eval_labels(labels: &Option<String>, scheme: Scheme, files: &[&PathBuf]) -> Result<LabelSet> {
    let set = match labels {
        Some(l) => LabelSet::parse(l, scheme)?,
        None => LabelSet::new(io::scan_labels(files)?, scheme)?,
    };
    Ok(set)
}

fn gold_and_pred(gold: &Path, pred: &Path, labels: &LabelSet) -> Result<(Vec<LabelSequence>, Vec<LabelSequence>)> {
    let g = io::read_conll(gold, labels)?;
    let p = io::read_conll(pred, labels)?;
    if g.len() != p.len() {
        bail!(
            "{} has {} sentences, {} has {}",
            gold.display(),
            g.len(),
            pred.display(),
            p.len()
        );
    }
    for (i, ((gs, _), (ps, _))) in g.iter().zip(&p).enumerate() {
        if gs.tokens() != ps.tokens() {
            bail!(
                "sentence {} differs between {} and {}",
                i + 1,
                gold.display(),
                pred.display()
            );
        }
    }
    Ok((
        g.into_iter().map(|(_, y)| y).collect(),
        p.into_iter().map(|(_, y)| y).collect(),
    ))
}

fn train_source(args: TrainSourceArgs) -> Result<()> {
    let labels = args.labels.label_set()?;
    let data = io::read_conll(&args.train, &labels)?;
    let (model, report) = train_source_model(data, labels, &args.flags.config())?;
    io::save_model(&args.out, &model)?;
    eprint!("{}", report.to_log());
    Ok(())
}

fn posteriors(args: PosteriorsArgs) -> Result<()> {
    let model = io::load_model(&args.model)?;
    let sentences = io::read_tokens(&args.tokens)?;
    let tables = compute_posteriors(&model, &sentences)?;
    io::write_posteriors(&args.out, model.label_set().labels(), &tables)?;
    Ok(())
}

fn project_cmd(args: ProjectArgs) -> Result<()> {
    let target_labels = args.labels.label_set()?;
    let pairs = read_bitext(&args.source, &args.target, &args.alignments)?;
    let lengths: Vec<usize> = pairs.iter().map(|p| p.source.len()).collect();
    let (names, tables) = io::read_posteriors(&args.posteriors, &lengths)?;
    let source_labels = LabelSet::new(names, args.source_scheme.unwrap_or(args.labels.scheme))?;
    let mut config = PipelineConfig::default();
    config.set("label_map", &args.label_map).map_err(anyhow::Error::msg)?;
    let map = match &config.label_map {
        projtag::config::LabelMapSpec::Identity => LabelMap::by_name(&source_labels, &target_labels)?,
        projtag::config::LabelMapSpec::Pairs(pairs) => LabelMap::from_names(
            &source_labels,
            &target_labels,
            pairs.iter().map(|(s, t)| (s.as_str(), t.as_str())),
        )?,
    };
    let targets = pairs
        .iter()
        .zip(&tables)
        .map(|(pair, post)| {
            let t = project(pair, post, &map)?;
            Ok(match args.mode {
                ProjectionMode::Soft => t,
                ProjectionMode::Hard => t.harden(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    io::write_targets(&args.out, target_labels.labels(), &targets)?;
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let labels = args.labels.label_set()?;
    let read = |p: &Option<PathBuf>| -> Result<Vec<Labeled>> {
        Ok(match p {
            Some(p) => io::read_conll(p, &labels)?,
            None => Vec::new(),
        })
    };
    let mut corpus = Corpus::new(labels.clone());
    corpus.labeled = read(&args.train)?;
    corpus.dev = read(&args.dev)?;
    corpus.test = read(&args.test)?;
    if let (Some(src), Some(tgt), Some(align), Some(targets)) = (
        &args.bitext_source,
        &args.bitext_target,
        &args.alignments,
        &args.targets,
    ) {
        let pairs = read_bitext(src, tgt, align)?;
        let lengths: Vec<usize> = pairs.iter().map(|p| p.target.len()).collect();
        let (names, expectations) = io::read_targets(targets, &lengths)?;
        if names != labels.labels() {
            bail!("{}: labels {:?} differ from --labels", targets.display(), names);
        }
        corpus.bitext = pairs.into_iter().zip(expectations).collect();
    }
    let (model, report) = train(&corpus, &args.flags.config(), args.regime)?;
    let out = &args.out_dir;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    io::save_model(out.join("model.json"), &model)?;
    write(&out.join("train_report.json"), &to_json(&report)?)?;
    write(&out.join("train.log"), &report.to_log())?;
    if !corpus.test.is_empty() {
        let (pred, s) = evaluate(&model, &corpus.test)?;
        let tagged: Vec<Labeled> = corpus.test.iter().map(|(t, _)| t.clone()).zip(pred).collect();
        io::write_conll(out.join("predictions.conll"), &tagged, &labels)?;
        write(&out.join("score.txt"), &s.to_string())?;
        print!("{s}");
    }
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    let labels = eval_labels(&args.labels, args.scheme, &[&args.gold, &args.pred])?;
    let (gold, pred) = gold_and_pred(&args.gold, &args.pred, &labels)?;
    let report = score(&gold, &pred, &labels)?;
    if args.json {
        print!("{}", to_json(&report)?);
    } else {
        print!("{report}");
    }
    Ok(())
}

fn bootstrap_cmd(args: BootstrapArgs) -> Result<()> {
    if args.system_a.len() != args.system_b.len() {
        bail!(
            "{} runs for system A but {} for system B",
            args.system_a.len(),
            args.system_b.len()
        );
    }
    let mut files = vec![&args.gold];
    files.extend(args.system_a.iter().chain(&args.system_b));
    let labels = eval_labels(&args.labels, args.scheme, &files)?;
    let mut total = 0.0;
    for (run, (a, b)) in args.system_a.iter().zip(&args.system_b).enumerate() {
        let (gold, pred_a) = gold_and_pred(&args.gold, a, &labels)?;
        let (_, pred_b) = gold_and_pred(&args.gold, b, &labels)?;
        let fa = score(&gold, &pred_a, &labels)?.f1;
        let fb = score(&gold, &pred_b, &labels)?.f1;
        let p = paired_bootstrap(&gold, &pred_a, &pred_b, &labels, args.iterations, args.seed)?;
        println!("run {}: F1 A {fa:.2}  F1 B {fb:.2}  p {p:.4}", run + 1);
        total += p;
    }
    if args.system_a.len() > 1 {
        println!("mean p {:.4}", total / args.system_a.len() as f64);
    }
    Ok(())
}

fn load_config(args: &PipelineArgs) -> Result<PipelineConfig> {
    let mut config = PipelineConfig::load(&args.config)?;
    if let Some(r) = args.regime {
        config.regime = r;
    }
    if let Some(d) = &args.output_dir {
        config.output_dir = d.clone();
    }
    args.flags.apply(&mut config.train_config);
    config.validate()?;
    Ok(config)
}

fn pipeline_cmd(args: PipelineArgs) -> Result<()> {
    let config = load_config(&args)?;
    let outcome = pipeline::run_pipeline(&config)?;
    print!("{}", outcome.score);
    eprintln!("outputs written to {}", config.output_dir.display());
    Ok(())
}

fn curve_cmd(args: CurveArgs) -> Result<()> {
    let config = load_config(&args.pipeline)?;
    let sizes = if args.sizes.is_empty() {
        config.curve_sizes.clone()
    } else {
        args.sizes
    };
    if sizes.is_empty() {
        bail!("no sizes given: pass --sizes or set curve_sizes in the configuration");
    }
    let points = pipeline::learning_curve(&config, &sizes)?;
    let out = args.out.unwrap_or_else(|| config.output_dir.join("learning_curve.csv"));
    let csv = format_curve(&points);
    write(&out, &csv)?;
    print!("{csv}");
    Ok(())
}

fn synth_cmd(args: SynthArgs) -> Result<()> {
    let corpus = SyntheticCorpus::generate(&SynthConfig {
        pairs: args.pairs,
        dev: args.dev,
        test: args.test,
        labeled: args.labeled,
        source_train: args.source_train,
        boundary_entropy: args.boundary_entropy,
        seed: args.seed,
        ..SynthConfig::default()
    })?;
    let cfg = corpus.write_fixture(&args.out_dir, args.max_iterations)?;
    println!("{}", cfg.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainSource(a) => train_source(a),
        Command::Posteriors(a) => posteriors(a),
        Command::Project(a) => project_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Bootstrap(a) => bootstrap_cmd(a),
        Command::Pipeline(a) => pipeline_cmd(a),
        Command::LearningCurve(a) => curve_cmd(a),
        Command::Synth(a) => synth_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
