mod common;

use common::{random_model, random_sentence, Enumeration};
use projtag::{supervised_value_and_gradient, LabelSequence};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64, max_n: usize, max_m: usize, scale: f64) -> (projtag::CrfModel, projtag::Sentence) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=max_n);
    let m = rng.gen_range(2..=max_m);
    let sentence = random_sentence(&mut rng, n);
    let model = random_model(&mut rng, m, std::slice::from_ref(&sentence), scale, 10.0);
    (model, sentence)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn node_rows_are_distributions(seed in any::<u64>()) {
        let (model, sentence) = instance(seed, 6, 4, 5.0);
        let t = model.run_inference(&sentence).unwrap();
        for i in 0..sentence.len() {
            let sum: f64 = t.node_row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-10);
            prop_assert!(t.node_row(i).iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn edges_marginalize_to_nodes(seed in any::<u64>()) {
        let (model, sentence) = instance(seed, 6, 4, 5.0);
        let t = model.run_inference(&sentence).unwrap();
        let m = model.num_labels();
        for i in 0..sentence.len().saturating_sub(1) {
            for a in 0..m {
                let left: f64 = (0..m).map(|b| t.edge(i, a, b)).sum();
                prop_assert!((left - t.node(i, a)).abs() < 1e-10);
                let right: f64 = (0..m).map(|b| t.edge(i, b, a)).sum();
                prop_assert!((right - t.node(i + 1, a)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn forward_and_backward_partition_agree(seed in any::<u64>()) {
        let (model, sentence) = instance(seed, 6, 4, 5.0);
        let t = model.run_inference(&sentence).unwrap();
        prop_assert!((t.log_z() - t.log_z_backward()).abs() < 1e-8);
    }

    #[test]
    fn viterbi_beats_random_paths(seed in any::<u64>()) {
        let (model, sentence) = instance(seed, 6, 4, 5.0);
        let features = model.observe(&sentence);
        let best = model.viterbi(&sentence).unwrap();
        let best_score = model.sequence_score(&features, &best);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        for _ in 0..100 {
            let y: Vec<usize> = (0..sentence.len()).map(|_| rng.gen_range(0..model.num_labels())).collect();
            prop_assert!(model.sequence_score(&features, &y) <= best_score + 1e-12);
        }
    }

    #[test]
    fn inference_matches_enumeration(seed in any::<u64>()) {
        let (model, sentence) = instance(seed, 5, 3, 5.0);
        let t = model.run_inference(&sentence).unwrap();
        let e = Enumeration::new(&model, &sentence);
        prop_assert!((t.log_z() - e.log_z).abs() < 1e-9);
        for i in 0..sentence.len() {
            for y in 0..model.num_labels() {
                prop_assert!((t.node(i, y) - e.node(i, y)).abs() < 1e-10);
            }
        }
        let (path, _) = e.best();
        prop_assert_eq!(model.viterbi(&sentence).unwrap().into_inner(), path);
    }
}

#[test]
fn three_tokens_two_labels_by_hand() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let sentence = projtag::Sentence::new(["Anna", "visited", "Paris"]).unwrap();
    let model = random_model(&mut rng, 2, std::slice::from_ref(&sentence), 2.0, 10.0);
    let t = model.run_inference(&sentence).unwrap();
    let e = Enumeration::new(&model, &sentence);
    assert_eq!(e.paths.len(), 8);
    for i in 0..3 {
        for y in 0..2 {
            assert!((t.node(i, y) - e.node(i, y)).abs() < 1e-10);
        }
    }
    for i in 0..2 {
        for a in 0..2 {
            for b in 0..2 {
                assert!((t.edge(i, a, b) - e.edge(i, a, b)).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn viterbi_on_three_labels_matches_brute_force() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sentence = random_sentence(&mut rng, 3);
        let model = random_model(&mut rng, 3, std::slice::from_ref(&sentence), 3.0, 10.0);
        let (path, _) = Enumeration::new(&model, &sentence).best();
        assert_eq!(model.viterbi(&sentence).unwrap().into_inner(), path);
    }
}

#[test]
fn zero_weights_tie_to_lowest_label() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sentence = random_sentence(&mut rng, 4);
    let model = random_model(&mut rng, 3, std::slice::from_ref(&sentence), 0.0, 10.0);
    assert_eq!(model.viterbi(&sentence).unwrap().into_inner(), vec![0; 4]);
}

#[test]
fn supervised_value_is_log_probability_minus_penalty() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sentence = random_sentence(&mut rng, 3);
    let sigma = 2.0;
    let model = random_model(&mut rng, 3, std::slice::from_ref(&sentence), 1.0, sigma);
    let e = Enumeration::new(&model, &sentence);
    let k = 7;
    let labels = LabelSequence::new(e.paths[k].clone());
    let (value, _) = supervised_value_and_gradient(&model, &[(sentence, labels)]).unwrap();
    let norm: f64 = model.weights().iter().map(|w| w * w).sum();
    let expected = e.scores[k] - e.log_z - norm / (2.0 * sigma * sigma);
    assert!((value - expected).abs() < 1e-10);
}

#[test]
fn nonfinite_weights_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let sentence = random_sentence(&mut rng, 2);
    let model = random_model(&mut rng, 2, std::slice::from_ref(&sentence), 1.0, 10.0);
    let mut w = model.weights().to_vec();
    w[0] = f64::NAN;
    let bad = model.clone().with_weights(w);
    assert!(bad.is_err() || bad.unwrap().run_inference(&sentence).is_err());
}
