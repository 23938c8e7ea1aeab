mod common;

use common::{finite_difference, max_relative_error, random_sentence, random_targets};
use projtag::synth::{SynthConfig, SyntheticCorpus};
use projtag::trainer::{build_feature_index, evaluate_f1};
use projtag::{
    ge_value, joint_value_and_gradient, supervised_value_and_gradient, train, AlignedPair, Corpus, CrfModel, Error,
    LabelSequence, ProjectionMode, Regime, TargetExpectations, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn synth(pairs: usize, seed: u64) -> SyntheticCorpus {
    SyntheticCorpus::generate(&SynthConfig {
        pairs,
        dev: 40,
        test: 40,
        labeled: 0,
        source_train: 0,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn quick(max_iterations: usize) -> TrainConfig {
    TrainConfig {
        max_iterations,
        patience: max_iterations.min(10),
        ..TrainConfig::default()
    }
}

/// Small corpus with both labeled sentences and bitext, plus a model with
/// random weights over all of its features.
fn mixed(seed: u64, l2_sigma: f64) -> (Corpus, CrfModel) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = 3;
    let mut corpus = Corpus::new(common::label_set(m));
    for _ in 0..3 {
        let n = rng.gen_range(1..=4);
        let y: LabelSequence = (0..n).map(|_| rng.gen_range(0..m)).collect();
        corpus.labeled.push((random_sentence(&mut rng, n), y));
    }
    for _ in 0..3 {
        let n = rng.gen_range(1..=4);
        let source = random_sentence(&mut rng, n);
        let target = random_sentence(&mut rng, n);
        let pair = AlignedPair::new(source, target, (0..n).map(|i| (i, i))).unwrap();
        corpus.bitext.push((pair, random_targets(&mut rng, n, m, 0.7)));
    }
    let sentences = corpus
        .labeled
        .iter()
        .map(|(s, _)| s)
        .chain(corpus.bitext.iter().map(|(p, _)| &p.target));
    let model = CrfModel::new(corpus.label_set.clone(), build_feature_index(m, sentences), l2_sigma).unwrap();
    let weights = (0..model.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (corpus, model.with_weights(weights).unwrap())
}

#[test]
fn without_bitext_the_objective_is_supervised() {
    let (mut corpus, model) = mixed(1, 2.0);
    corpus.bitext.clear();
    let joint = joint_value_and_gradient(&model, &corpus, &TrainConfig::default()).unwrap();
    let sup = supervised_value_and_gradient(&model, &corpus.labeled).unwrap();
    assert_eq!(joint, sup);
}

#[test]
fn without_labeled_data_or_penalty_the_objective_is_ge() {
    let (mut corpus, model) = mixed(2, f64::INFINITY);
    corpus.labeled.clear();
    let config = TrainConfig {
        l2_sigma: f64::INFINITY,
        ..TrainConfig::default()
    };
    let (value, _) = joint_value_and_gradient(&model, &corpus, &config).unwrap();
    let expected: f64 = corpus
        .bitext
        .iter()
        .map(|(p, t)| ge_value(&model, &p.target, t).unwrap())
        .sum();
    assert!((value - expected).abs() < 1e-12);
}

#[test]
fn ge_weight_scales_only_the_ge_term() {
    let (corpus, model) = mixed(3, 2.0);
    let at = |w: f64| {
        let config = TrainConfig {
            ge_weight: w,
            ..TrainConfig::default()
        };
        joint_value_and_gradient(&model, &corpus, &config).unwrap().0
    };
    let (v0, v1, v3) = (at(0.0), at(1.0), at(3.0));
    assert!(((v3 - v0) - 3.0 * (v1 - v0)).abs() < 1e-10);
}

#[test]
fn joint_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let (corpus, model) = mixed(10 + seed, 2.0);
        for mode in [ProjectionMode::Soft, ProjectionMode::Hard] {
            let config = TrainConfig {
                ge_weight: 2.5,
                projection_mode: mode,
                ..TrainConfig::default()
            };
            let (_, grad) = joint_value_and_gradient(&model, &corpus, &config).unwrap();
            let fd = finite_difference(
                |w| {
                    let probe = model.clone().with_weights(w.to_vec()).unwrap();
                    joint_value_and_gradient(&probe, &corpus, &config).unwrap().0
                },
                model.weights(),
                1e-5,
            );
            let err = max_relative_error(&grad, &fd, 1e-2);
            assert!(err < 1e-6, "seed {seed} {mode}: {err}");
        }
    }
}

#[test]
fn supervised_training_beats_the_all_outside_baseline() {
    let data = synth(50, 4);
    let (model, report) = train(&data.supervised(), &quick(40), Regime::Supervised).unwrap();
    let f1 = evaluate_f1(&model, &data.dev).unwrap();
    assert!(f1 > 50.0, "dev F1 {f1}");
    assert_eq!(report.best_dev_f1, Some(f1));
}

#[test]
fn ge_on_gold_one_hot_targets_nearly_matches_supervised() {
    let data = synth(80, 5);
    let supervised = data.supervised();
    let mut gold = Corpus::new(data.label_set.clone());
    gold.dev = data.dev.clone();
    gold.bitext = data
        .pairs
        .iter()
        .zip(&data.target_gold)
        .map(|(pair, y)| {
            let m = data.label_set.len();
            let rows = y
                .iter()
                .map(|&l| {
                    let mut row = vec![0.0; m];
                    row[l] = 1.0;
                    Some(row)
                })
                .collect();
            (pair.clone(), TargetExpectations::from_rows(m, rows).unwrap())
        })
        .collect();
    let config = quick(80);
    let (sup, _) = train(&supervised, &config, Regime::Supervised).unwrap();
    let (ge, _) = train(&gold, &config, Regime::Ge).unwrap();
    let (fs, fg) = (
        evaluate_f1(&sup, &data.test).unwrap(),
        evaluate_f1(&ge, &data.test).unwrap(),
    );
    assert!(fg >= 0.9 * fs, "GE {fg} vs supervised {fs}");
}

#[test]
fn zero_ge_weight_reproduces_supervised_iterates() {
    let data = synth(40, 6);
    let mut corpus = data.supervised();
    corpus.labeled.truncate(20);
    corpus.bitext = data.weakly_supervised().unwrap().bitext.split_off(20);
    let config = TrainConfig {
        ge_weight: 0.0,
        ..quick(25)
    };
    let (sup, sup_report) = train(&corpus, &config, Regime::Supervised).unwrap();
    let (ge, ge_report) = train(&corpus, &config, Regime::Ge).unwrap();
    assert_eq!(sup_report.trace, ge_report.trace);
    assert!(ge.dim() > sup.dim());
    assert_eq!(&ge.weights()[..sup.dim()], sup.weights());
    assert!(ge.weights()[sup.dim()..].iter().all(|&w| w == 0.0));
}

#[test]
fn objective_never_decreases_along_the_trace() {
    let data = synth(40, 7);
    for (corpus, regime) in [
        (data.supervised(), Regime::Supervised),
        (data.weakly_supervised().unwrap(), Regime::Ge),
    ] {
        let (_, report) = train(&corpus, &quick(30), regime).unwrap();
        for w in report.trace.windows(2) {
            assert!(w[1].objective >= w[0].objective, "{regime}: {:?}", w);
        }
    }
}

#[test]
fn hard_targets_and_projected_labels_are_different_objectives() {
    let data = synth(40, 8);
    let corpus = data.weakly_supervised().unwrap();
    let hard = TrainConfig {
        projection_mode: ProjectionMode::Hard,
        ..quick(15)
    };
    let (_, ge_hard) = train(&corpus, &hard, Regime::Ge).unwrap();
    let (_, ptt) = train(&corpus, &hard, Regime::ProjectThenTrain).unwrap();
    let (_, ge_soft) = train(&corpus, &quick(15), Regime::Ge).unwrap();
    assert_ne!(ge_hard.trace[0].objective, ptt.trace[0].objective);
    assert_ne!(ge_hard.trace[0].objective, ge_soft.trace[0].objective);
    assert_eq!(ptt.regime, Regime::ProjectThenTrain);
    assert_eq!(ge_hard.projection_mode, ProjectionMode::Hard);
}

#[test]
fn returned_model_reproduces_its_best_dev_score() {
    let data = synth(60, 9);
    let (model, report) = train(&data.weakly_supervised().unwrap(), &quick(40), Regime::Ge).unwrap();
    let best = report.best_dev_f1.unwrap();
    assert_eq!(evaluate_f1(&model, &data.dev).unwrap(), best);
    let trace_best = report.dev_f1_trace().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if report.best_iteration > 0 {
        assert_eq!(best, trace_best);
        let first = report.trace.iter().find(|r| r.dev_f1 == Some(best)).unwrap();
        assert_eq!(first.iteration, report.best_iteration);
    }
    assert_eq!(report.selection, "best-dev");
}

#[test]
fn without_dev_data_the_last_iterate_is_returned() {
    let data = synth(30, 10);
    let mut corpus = data.supervised();
    corpus.dev.clear();
    let (_, report) = train(&corpus, &quick(12), Regime::Supervised).unwrap();
    assert_eq!(report.selection, "last");
    assert_eq!(report.best_iteration, report.trace.last().unwrap().iteration);
    assert!(report.best_dev_f1.is_none());
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let data = synth(40, 11);
    let corpus = data.weakly_supervised().unwrap();
    let (a, ra) = train(&corpus, &quick(15), Regime::Ge).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let (b, rb) = pool.install(|| train(&corpus, &quick(15), Regime::Ge).unwrap());
    assert_eq!(a.weights(), b.weights());
    assert_eq!(ra.trace, rb.trace);
}

#[test]
fn invalid_setups_are_rejected() {
    let data = synth(10, 12);
    let bad = TrainConfig {
        patience: 50,
        max_iterations: 10,
        ..TrainConfig::default()
    };
    assert!(matches!(
        train(&data.supervised(), &bad, Regime::Supervised),
        Err(Error::Config(_))
    ));
    let weak = data.weakly_supervised().unwrap();
    assert!(matches!(
        train(&weak, &quick(5), Regime::Supervised),
        Err(Error::EmptyObjective(_))
    ));
    let mut no_bitext = data.supervised();
    no_bitext.bitext.clear();
    assert!(matches!(
        train(&no_bitext, &quick(5), Regime::Ge),
        Err(Error::EmptyObjective(_))
    ));
    let negative = TrainConfig {
        ge_weight: -1.0,
        ..quick(5)
    };
    assert!(train(&weak, &negative, Regime::Ge).is_err());
}
