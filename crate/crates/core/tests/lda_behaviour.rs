mod support;

use proptest::prelude::*;
use topicmine::evalmetrics::perplexity;
use topicmine::lda::{
    fit, held_out_perplexity, infer_held_out, split_documents, HeldOutEstimator, LdaConfig, LdaModel,
};
use topicmine::synth::{corpus_from_ids, planted_corpus, PlantedSpec};
use topicmine::util;

use rand::Rng;
use rand_distr::{Distribution, weighted::WeightedIndex};

#[test]
fn planted_topics_are_recovered() {
    let planted = planted_corpus(&PlantedSpec::default());
    let model = fit(&planted.corpus, &LdaConfig { iterations: 500, burn_in: 0, seed: 1, ..LdaConfig::new(3) }).unwrap();
    let l1 = support::best_permutation_l1(&planted.phi, &model.phi());
    assert!(l1 <= 0.15, "mean L1 {l1}");
}

#[test]
fn count_identities_hold_after_every_sweep() {
    let planted = planted_corpus(&PlantedSpec { num_docs: 80, seed: 4, ..PlantedSpec::default() });
    let cfg = LdaConfig { iterations: 100, burn_in: 0, seed: 2, ..LdaConfig::new(4) };
    let mut model = LdaModel::init(&planted.corpus, &cfg).unwrap();
    model.audit(&planted.corpus).unwrap();
    for _ in 0..100 {
        model.sweep(&planted.corpus);
        model.audit(&planted.corpus).unwrap();
    }
}

#[test]
fn held_out_perplexity_improves_with_training() {
    let planted = planted_corpus(&PlantedSpec { seed: 21, ..PlantedSpec::default() });
    let (train, held) = split_documents(planted.corpus.num_docs(), 0.8, 3);
    let train = planted.corpus.subset(&train);
    let held = planted.corpus.subset(&held);
    let score = |iters| {
        let m = fit(&train, &LdaConfig { iterations: iters, burn_in: 0, seed: 8, ..LdaConfig::new(3) }).unwrap();
        held_out_perplexity(&m, &held, HeldOutEstimator::DocumentCompletion, 50, 8).unwrap()
    };
    let short = score(10);
    let long = score(200);
    assert!(long < short, "200 sweeps {long} vs 10 sweeps {short}");
}

#[test]
fn fold_in_recovers_the_generating_topic() {
    let spec = PlantedSpec { seed: 33, ..PlantedSpec::default() };
    let planted = planted_corpus(&spec);
    let mut rng = util::seeded(77);
    let mut docs = planted.corpus.docs().to_vec();
    let pure: Vec<Vec<usize>> = (0..3)
        .map(|j| {
            let dist = WeightedIndex::new(&planted.phi[j]).unwrap();
            (0..spec.doc_len).map(|_| dist.sample(&mut rng)).collect()
        })
        .collect();
    docs.extend(pure.iter().cloned());
    let train = corpus_from_ids(docs, spec.vocab_size);
    let model = fit(&train, &LdaConfig { iterations: 300, burn_in: 0, seed: 5, ..LdaConfig::new(3) }).unwrap();
    let phi = model.phi();
    let perm = support::permutations(3)
        .into_iter()
        .min_by(|a, b| {
            let cost = |p: &Vec<usize>| -> f64 {
                (0..3).map(|i| planted.phi[i].iter().zip(&phi[p[i]]).map(|(x, y)| (x - y).abs()).sum::<f64>()).sum()
            };
            cost(a).partial_cmp(&cost(b)).unwrap()
        })
        .unwrap();
    let held = corpus_from_ids(pure, spec.vocab_size);
    let mut hits = 0;
    for rep in 0..100u64 {
        let j = (rep % 3) as usize;
        let fold = infer_held_out(&model, &held, 50, rep).unwrap();
        if util::argmax(&fold.theta[j]) == perm[j] {
            hits += 1;
        }
    }
    assert!(hits >= 95, "{hits}/100");
}

#[test]
fn perplexity_limits_and_two_path_agreement() {
    let corpus = corpus_from_ids(vec![vec![0, 1, 2], vec![2, 2, 3, 0]], 4);
    let uniform_theta = vec![vec![1.0]; 2];
    let uniform_phi = vec![vec![0.25; 4]];
    assert_eq!(perplexity(&uniform_theta, &uniform_phi, &corpus).unwrap(), 4.0);

    let one = corpus_from_ids(vec![vec![1, 1], vec![1]], 3);
    assert_eq!(perplexity(&[vec![1.0], vec![1.0]], &[vec![0.0, 1.0, 0.0]], &one).unwrap(), 1.0);

    let theta = vec![vec![0.7, 0.3], vec![0.2, 0.8]];
    let phi = vec![vec![0.4, 0.3, 0.2, 0.1], vec![0.1, 0.1, 0.3, 0.5]];
    let a = perplexity(&theta, &phi, &corpus).unwrap();
    let b = support::oracle_perplexity(&theta, &phi, corpus.docs());
    assert!((a - b).abs() <= 1e-9, "{a} vs {b}");

    let planted = planted_corpus(&PlantedSpec { num_docs: 60, seed: 6, ..PlantedSpec::default() });
    let m = fit(&planted.corpus, &LdaConfig { iterations: 30, burn_in: 0, ..LdaConfig::new(3) }).unwrap();
    let a = perplexity(&m.theta(), &m.phi(), &planted.corpus).unwrap();
    let b = support::oracle_perplexity(&m.theta(), &m.phi(), planted.corpus.docs());
    assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{a} vs {b}");
}

fn small_corpus() -> impl Strategy<Value = (Vec<Vec<usize>>, usize)> {
    (2usize..8).prop_flat_map(|v| (prop::collection::vec(prop::collection::vec(0..v, 0..12), 1..10), Just(v)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn estimators_normalize_and_log_joint_is_label_symmetric(
        (docs, v) in small_corpus(),
        k in 1usize..5,
        seed in any::<u64>(),
        sweeps in 0usize..5,
    ) {
        let corpus = corpus_from_ids(docs, v);
        let cfg = LdaConfig { iterations: sweeps + 1, burn_in: 0, seed, ..LdaConfig::new(k) };
        let mut model = LdaModel::init(&corpus, &cfg).unwrap();
        for _ in 0..sweeps {
            model.sweep(&corpus);
            model.audit(&corpus).unwrap();
        }
        for row in model.theta().iter().chain(model.phi().iter()) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&x| x > 0.0));
        }
        let mut rng = util::seeded(seed ^ 0x55);
        let mut perm: Vec<usize> = (0..k).collect();
        for i in (1..k).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let base = model.log_joint();
        let permuted = model.permute_topics(&perm).log_joint();
        prop_assert!((base - permuted).abs() <= 1e-9, "{} vs {}", base, permuted);
    }

    #[test]
    fn perplexity_ignores_document_order((docs, v) in small_corpus(), seed in any::<u64>()) {
        prop_assume!(docs.iter().any(|d| !d.is_empty()));
        let corpus = corpus_from_ids(docs.clone(), v);
        let m = fit(&corpus, &LdaConfig { iterations: 3, burn_in: 0, seed, ..LdaConfig::new(2) }).unwrap();
        let theta = m.theta();
        let phi = m.phi();
        let a = perplexity(&theta, &phi, &corpus).unwrap();
        prop_assert!(a >= 1.0);
        let rev_docs: Vec<Vec<usize>> = docs.iter().rev().cloned().collect();
        let rev_theta: Vec<Vec<f64>> = theta.iter().rev().cloned().collect();
        let b = perplexity(&rev_theta, &phi, &corpus_from_ids(rev_docs, v)).unwrap();
        // the per-token sum runs in a different order, so allow rounding
        prop_assert!((a - b).abs() <= 1e-12 * a);
    }
}
