mod common;

use common::{random_model, random_sentence, Enumeration};
use projtag::projection::hard_labels_from_targets;
use projtag::{
    harden, project, project_hard_labels, source_posteriors, AlignedPair, LabelMap, PosteriorTable, Sentence,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Case {
    pair: AlignedPair,
    links: Vec<(usize, usize)>,
    posteriors: PosteriorTable,
    map: LabelMap,
}

fn case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ns, nt, m) = (rng.gen_range(1..=7), rng.gen_range(1..=7), rng.gen_range(2..=5));
    let source = random_sentence(&mut rng, ns);
    let target = random_sentence(&mut rng, nt);
    let mut links = Vec::new();
    for s in 0..ns {
        for t in 0..nt {
            if rng.gen_bool(0.25) {
                links.push((s, t));
            }
        }
    }
    let rows = (0..ns)
        .map(|_| {
            let raw: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0) + 1e-3).collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|p| p / sum).collect()
        })
        .collect();
    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(&mut rng);
    Case {
        pair: AlignedPair::new(source, target, links.iter().copied()).unwrap(),
        links,
        posteriors: PosteriorTable::new(m, rows).unwrap(),
        map: LabelMap::new(perm).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn projected_rows_lie_on_the_simplex(seed in any::<u64>()) {
        let c = case(seed);
        let targets = project(&c.pair, &c.posteriors, &c.map).unwrap();
        let sources = c.pair.aligned_sources();
        for t in 0..targets.len() {
            prop_assert_eq!(targets.is_aligned(t), !sources[t].is_empty());
            if targets.is_aligned(t) {
                let sum: f64 = targets.row(t).iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-10);
                prop_assert!(targets.row(t).iter().all(|&p| p >= 0.0));
            } else {
                prop_assert!(targets.row(t).iter().all(|&p| p == 0.0));
            }
        }
    }

    #[test]
    fn link_order_does_not_matter(seed in any::<u64>()) {
        let c = case(seed);
        let mut shuffled = c.links.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(1)));
        let other = AlignedPair::new(c.pair.source.clone(), c.pair.target.clone(), shuffled).unwrap();
        prop_assert_eq!(
            project(&c.pair, &c.posteriors, &c.map).unwrap(),
            project(&other, &c.posteriors, &c.map).unwrap()
        );
    }

    #[test]
    fn hard_projection_is_argmax_of_soft(seed in any::<u64>()) {
        let c = case(seed);
        let soft = project(&c.pair, &c.posteriors, &c.map).unwrap();
        let hard = project_hard_labels(&c.pair, &c.posteriors, &c.map, 0).unwrap();
        prop_assert_eq!(hard, hard_labels_from_targets(&harden(&soft), 0));
    }

    #[test]
    fn dropping_a_link_only_touches_its_target(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let c = case(seed);
        prop_assume!(!c.links.is_empty());
        let gone = c.links[pick.index(c.links.len())];
        let kept = c.links.iter().copied().filter(|&l| l != gone);
        let smaller = AlignedPair::new(c.pair.source.clone(), c.pair.target.clone(), kept).unwrap();
        let before = project(&c.pair, &c.posteriors, &c.map).unwrap();
        let after = project(&smaller, &c.posteriors, &c.map).unwrap();
        for t in (0..before.len()).filter(|&t| t != gone.1) {
            prop_assert_eq!(before.row(t), after.row(t));
            prop_assert_eq!(before.is_aligned(t), after.is_aligned(t));
        }
    }

    #[test]
    fn rows_are_means_of_mapped_posteriors(seed in any::<u64>()) {
        let c = case(seed);
        let targets = project(&c.pair, &c.posteriors, &c.map).unwrap();
        let m = c.posteriors.num_labels();
        for (t, sources) in c.pair.aligned_sources().iter().enumerate() {
            if sources.is_empty() {
                continue;
            }
            for l in 0..m {
                let mean: f64 = sources.iter().map(|&s| c.posteriors.row(s)[l]).sum::<f64>() / sources.len() as f64;
                prop_assert!((targets.row(t)[c.map.target_of(l)] - mean).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn one_to_one_identity_copies_rows() {
    let source = Sentence::new(["a", "b", "c"]).unwrap();
    let target = Sentence::new(["x", "y", "z", "w"]).unwrap();
    let pair = AlignedPair::new(source, target, [(0, 0), (1, 2), (2, 1)]).unwrap();
    let rows = vec![vec![0.5, 0.5], vec![0.9, 0.1], vec![0.2, 0.8]];
    let posteriors = PosteriorTable::new(2, rows).unwrap();
    let targets = project(&pair, &posteriors, &LabelMap::identity(2)).unwrap();
    assert_eq!(targets.row(0), &[0.5, 0.5]);
    assert_eq!(targets.row(1), &[0.2, 0.8]);
    assert_eq!(targets.row(2), &[0.9, 0.1]);
    assert!(!targets.is_aligned(3));
}

#[test]
fn zero_weight_source_model_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let sentence = random_sentence(&mut rng, 5);
    let model = random_model(&mut rng, 4, std::slice::from_ref(&sentence), 0.0, 10.0);
    let table = source_posteriors(&model, &sentence).unwrap();
    for i in 0..5 {
        assert!(table.row(i).iter().all(|&p| (p - 0.25).abs() < 1e-12));
    }
}

#[test]
fn source_posteriors_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sentence = random_sentence(&mut rng, 2);
    let model = random_model(&mut rng, 3, std::slice::from_ref(&sentence), 2.0, 10.0);
    let table = source_posteriors(&model, &sentence).unwrap();
    let e = Enumeration::new(&model, &sentence);
    for i in 0..2 {
        for y in 0..3 {
            assert!((table.row(i)[y] - e.node(i, y)).abs() < 1e-12);
        }
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(LabelMap::new(vec![0, 0, 1]).is_err());
    assert!(LabelMap::new(vec![0, 3]).is_err());
    assert!(PosteriorTable::new(2, vec![vec![0.6, 0.6]]).is_err());
    let source = Sentence::new(["a", "b"]).unwrap();
    let target = Sentence::new(["x"]).unwrap();
    assert!(AlignedPair::new(source.clone(), target.clone(), [(2, 0)]).is_err());
    assert!(AlignedPair::new(source.clone(), target.clone(), [(0, 1)]).is_err());
    let pair = AlignedPair::new(source, target, [(0, 0)]).unwrap();
    let short = PosteriorTable::new(2, vec![vec![0.5, 0.5]]).unwrap();
    assert!(project(&pair, &short, &LabelMap::identity(2)).is_err());
}
