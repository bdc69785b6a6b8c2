use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ifa_core::attention::{dense_kernel_attention_oracle, AttentionParams, KernelFn, LinearAttention};
use ifa_core::check::{grad_model, model_variants, toy_request};
use ifa_core::data::{auc, pairwise_auc, GenConfig, Generator};
use ifa_core::model::{IfaModel, ModelConfig};
use ifa_core::numeric::{max_rel_error, Matrix, ParamStore};

fn kernel_strategy() -> impl Strategy<Value = KernelFn> {
    prop_oneof![Just(KernelFn::Softplus), Just(KernelFn::ReluEps)]
}

fn instance(seed: u64, m: usize, n: usize, d: usize) -> (ParamStore, AttentionParams, Matrix, Matrix, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let p = AttentionParams::new(&mut store, "p", (5, 4, 3), d, &mut rng);
    let q = Matrix::random_normal(m, 5, 1.5, &mut rng);
    let k = Matrix::random_normal(n, 4, 1.5, &mut rng);
    let v = Matrix::random_normal(n, 3, 1.5, &mut rng);
    (store, p, q, k, v)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn rank_auc_is_pairwise_auc(pairs in prop::collection::vec((0u8..6, any::<bool>()), 2..80)) {
        let scores: Vec<f64> = pairs.iter().map(|p| p.0 as f64 * 0.25).collect();
        let labels: Vec<u8> = pairs.iter().map(|p| p.1 as u8).collect();
        prop_assert_eq!(auc(&scores, &labels).map(f64::to_bits), pairwise_auc(&scores, &labels).map(f64::to_bits));
    }

    #[test]
    fn linear_matches_oracle(seed in any::<u64>(), m in 1usize..40, n in 1usize..40, d in 1usize..12, kernel in kernel_strategy()) {
        let (store, p, q, k, v) = instance(seed, m, n, d);
        let fast = LinearAttention::new(p, kernel).forward(&store, &q, &k, &v).unwrap().output;
        let slow = dense_kernel_attention_oracle(&store, &q, &k, &v, p, kernel).unwrap();
        prop_assert!(max_rel_error(&fast, &slow, 1e-300) <= 1e-10);
    }

    #[test]
    fn key_order_is_irrelevant(seed in any::<u64>(), n in 2usize..30, shift in 1usize..29, kernel in kernel_strategy()) {
        let (store, p, q, k, v) = instance(seed, 4, n, 3);
        let rot: Vec<usize> = (0..n).map(|j| (j + shift) % n).collect();
        let att = LinearAttention::new(p, kernel);
        let a = att.forward(&store, &q, &k, &v).unwrap().output;
        let b = att.forward(&store, &q, &k.select_rows(&rot), &v.select_rows(&rot)).unwrap().output;
        prop_assert!(max_rel_error(&a, &b, 1e-12) <= 1e-10);
    }

    #[test]
    fn output_is_convex_combination(seed in any::<u64>(), m in 1usize..20, n in 1usize..20) {
        let (store, p, q, k, v) = instance(seed, m, n, 4);
        let out = LinearAttention::new(p, KernelFn::Softplus).forward(&store, &q, &k, &v).unwrap().output;
        let vp = v.matmul(store.value(p.w_v)).unwrap();
        for t in 0..vp.cols() {
            let col: Vec<f64> = (0..n).map(|j| vp.get(j, t)).collect();
            let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            for i in 0..m {
                prop_assert!(out.get(i, t) >= lo - 1e-12 && out.get(i, t) <= hi + 1e-12);
            }
        }
    }
}

#[test]
fn every_model_variant_passes_gradient_checks() {
    for seed in 0..4 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        for (name, cfg) in model_variants() {
            let err = grad_model(cfg, 20, &mut rng).unwrap();
            assert!(err <= 1e-5, "{name} seed {seed}: {err:e}");
        }
    }
}

#[test]
fn batch_scoring_matches_single_requests() {
    let gen = GenConfig {
        num_requests: 12,
        n: 40,
        m: 10,
        ..GenConfig::default()
    };
    let reqs = Generator::generate(&gen).unwrap();
    let (user_vocab, item_vocab, cross_vocab) = gen.vocab();
    let model = IfaModel::new(
        ModelConfig {
            user_vocab,
            item_vocab,
            cross_vocab,
            ..ModelConfig::default()
        },
        4,
    )
    .unwrap();
    let batch = model.score_batch(&reqs).unwrap();
    for (r, b) in reqs.iter().zip(&batch) {
        assert_eq!(&model.score(r).unwrap(), b);
    }
}

#[test]
fn toy_request_scores_are_probabilities() {
    for (name, cfg) in model_variants() {
        let model = IfaModel::new(cfg, 9).unwrap();
        for s in model.score(&toy_request()).unwrap() {
            assert!(s.y_imp > 0.0 && s.y_imp < 1.0 && s.y_cli > 0.0 && s.y_cli < 1.0, "{name}");
            assert!(s.pitctr <= s.y_imp.min(s.y_cli), "{name}");
        }
    }
}
