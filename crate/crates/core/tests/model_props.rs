//! Invariants of scoring, fusion, ranking and splitting under random inputs.

use addrl::datahub::{gen_synthetic, sample_negatives, split_dataset, test_count, SyntheticSpec};
use addrl::evalkit::{ndcg_at_n, recall_at_n, top_n, Scorer};
use addrl::model::{chunk_vector, controllable_score, score_pair, Model, ModelConfig};
use proptest::prelude::*;

fn config(k: usize, chunk_dim: usize, residual: bool) -> ModelConfig {
    ModelConfig {
        value_counts: vec![3; k],
        chunk_dim,
        residual_chunk: residual,
        d0_text: 5,
        d0_visual: 4,
        ..ModelConfig::default()
    }
}

fn small_dataset(seed: u64) -> addrl::datahub::Dataset {
    let spec = SyntheticSpec {
        n_users: 12,
        n_items: 20,
        value_counts: vec![3, 2],
        d0_text: 5,
        d0_visual: 4,
        interactions_per_user: 6,
        ..SyntheticSpec::default()
    };
    gen_synthetic(&spec, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scores_are_positive_and_decompose(
        k in 1usize..4,
        residual in any::<bool>(),
        u in prop::collection::vec(-5.0f64..5.0, 24),
        i in prop::collection::vec(-5.0f64..5.0, 24),
        xi in -3.0f64..3.0,
    ) {
        let cfg = config(k, 2, residual);
        let d = cfg.dim();
        let b = score_pair(
            &chunk_vector(u[..d].to_vec(), &cfg).unwrap(),
            &chunk_vector(i[..d].to_vec(), &cfg).unwrap(),
        ).unwrap();
        prop_assert_eq!(b.parts.len(), cfg.n_chunks());
        prop_assert!(b.parts.iter().all(|&p| p > 0.0));
        prop_assert_eq!(b.total, b.parts.iter().sum::<f64>());
        let shares: f64 = b.shares().iter().sum();
        prop_assert!((shares - 1.0).abs() < 1e-12);
        prop_assert_eq!(controllable_score(&b, 0, k, 1.0).unwrap(), b.total);
        let moved = controllable_score(&b, 0, k, xi).unwrap();
        prop_assert!((moved - (b.total + (xi - 1.0) * b.parts[0])).abs() < 1e-9);
    }

    #[test]
    fn fused_chunks_are_convex_combinations(seed in 0u64..1000, residual in any::<bool>()) {
        let ds = small_dataset(seed % 7);
        let mut cfg = config(2, 3, residual);
        cfg.fit_to(&ds);
        cfg.residual_chunk = residual;
        let mut ds = ds;
        ds.schema.residual_chunk = residual;
        let model = Model::init(cfg.clone(), ds.n_users(), ds.n_items(), seed).unwrap();
        let t = model.item_tables(&ds).unwrap();
        let (c, cd) = (cfg.n_chunks(), cfg.chunk_dim);
        prop_assert_eq!(t.attention.shape(), &[ds.n_items() * c, 3][..]);
        for item in 0..ds.n_items() {
            for k in 0..c {
                let w = t.attention.row(item * c + k);
                prop_assert!(w.iter().all(|&x| x > 0.0));
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for j in k * cd..(k + 1) * cd {
                    let srcs = [t.id.row(item)[j], t.text.row(item)[j], t.visual.row(item)[j]];
                    let want: f64 = w.iter().zip(srcs).map(|(a, b)| a * b).sum();
                    prop_assert!((t.fused.row(item)[j] - want).abs() < 1e-12);
                }
            }
        }
        let scorer = Scorer::new(&model, &ds).unwrap();
        let s = scorer.scores(0).unwrap();
        prop_assert!(s.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn top_n_orders_candidates(
        scores in prop::collection::vec(prop::sample::select(vec![-1.0, 0.0, 0.5, 2.0, 3.0]), 1..30),
        mask in prop::collection::vec(any::<bool>(), 30),
        n in 1usize..40,
    ) {
        let top = top_n(&scores, |i| mask[i], n);
        let cand = (0..scores.len()).filter(|&i| mask[i]).count();
        prop_assert_eq!(top.len(), n.min(cand));
        prop_assert!(top.iter().all(|&i| mask[i]));
        for w in top.windows(2) {
            let (a, b) = (w[0], w[1]);
            prop_assert!(scores[a] > scores[b] || (scores[a] == scores[b] && a < b));
        }
        if let Some(&last) = top.last() {
            for i in (0..scores.len()).filter(|&i| mask[i] && !top.contains(&i)) {
                prop_assert!(scores[i] < scores[last] || (scores[i] == scores[last] && i > last));
            }
        }
    }

    #[test]
    fn metrics_are_bounded(
        ranking in Just((0..12).collect::<Vec<usize>>()).prop_shuffle(),
        test in prop::collection::btree_set(0usize..12, 1..6),
        n in 1usize..14,
    ) {
        let test: Vec<usize> = test.into_iter().collect();
        let r = recall_at_n(&ranking, &test, n);
        let g = ndcg_at_n(&ranking, &test, n);
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&g));
        let mut ideal = test.clone();
        ideal.extend((0..12).filter(|i| !test.contains(i)));
        prop_assert!((ndcg_at_n(&ideal, &test, n) - 1.0).abs() < 1e-12);
        prop_assert_eq!(r == 0.0, g == 0.0);
    }

    #[test]
    fn split_partitions_and_negatives_avoid_train(seed in 0u64..500, step in 0u64..1000) {
        let ds = small_dataset(seed % 5);
        let split = split_dataset(&ds.interactions, seed).unwrap();
        let by_user = ds.interactions.by_user();
        let mut val = 0;
        for (u, items) in by_user.iter().enumerate() {
            let mut all: Vec<usize> = split.train[u].iter().chain(&split.validation[u]).chain(&split.test[u]).copied().collect();
            all.sort_unstable();
            let mut want = items.clone();
            want.sort_unstable();
            prop_assert_eq!(&all, &want);
            prop_assert_eq!(split.test[u].len(), test_count(items.len()));
            prop_assert!(!split.train[u].is_empty());
            val += split.validation[u].len();
            for i in sample_negatives(&split, u, 4, seed, step).unwrap() {
                prop_assert!(!split.is_train(u, i));
            }
        }
        let pool: usize = (0..by_user.len()).map(|u| by_user[u].len() - split.test[u].len()).sum();
        prop_assert_eq!(val, pool / 10);
    }
}
