mod common;

use std::sync::Arc;

use alnlg_core::gateway::{Gateway, GenerationResult, MockBackend, Usage};
use alnlg_core::labeling::{annotate_batch_llm, compute_cost, AgentSpec, CostLedger, LlmTask, PriceSheet, PromptTemplate};
use alnlg_core::metrics::{exact_match, relaxed_exact_match, rouge_l, rouge_n, sentence_bleu};
use alnlg_core::strategy::{
    score_bleuvar, score_huds, score_idds, score_mte, score_nsp, score_random, select_facility_location, select_top_k,
    LabeledView, StrategyContext, UnlabeledView,
};
use common::brute;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 8] = ["the", "cat", "sat", "on", "a", "mat", "blue", "sky"];

/// Per-instance generation logprobs and embedding.
#[derive(Debug, Clone)]
struct Item {
    logprobs: Vec<f64>,
    embedding: Vec<f64>,
}

fn items(dim: usize) -> impl Strategy<Value = Vec<Item>> {
    prop::collection::vec(
        (prop::collection::vec(-6.0f64..-0.001, 1..6), prop::collection::vec(-1.0f64..1.0, dim)).prop_filter_map(
            "non-zero embedding",
            |(logprobs, embedding)| {
                (embedding.iter().map(|x| x * x).sum::<f64>() > 1e-6).then_some(Item { logprobs, embedding })
            },
        ),
        2..10,
    )
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(&WORDS[..]), 1..8).prop_map(|w| w.join(" "))
}

/// Context over `items` with ids `i0..`, inserted in `order`.
fn context(items: &[Item], order: &[usize], labeled: &[Vec<f64>], scale: f64) -> StrategyContext {
    let mut ctx = StrategyContext::new(
        order.iter().map(|i| UnlabeledView { id: format!("i{i}"), input: String::new() }).collect(),
        (0..labeled.len())
            .map(|j| LabeledView { id: format!("l{j}"), input: String::new(), annotation: "x".into() })
            .collect(),
    );
    for &i in order {
        let it = &items[i];
        let tokens = (0..it.logprobs.len()).map(|t| format!("w{t}")).collect();
        let alts = it.logprobs.iter().map(|&lp| vec![("w".to_string(), lp), ("v".to_string(), (lp - 1.0).min(-0.001))]).collect();
        ctx.generations.insert(
            format!("i{i}"),
            vec![GenerationResult::from_logprobs(tokens, it.logprobs.clone()).with_alternatives(alts)],
        );
        ctx.embeddings.insert(format!("i{i}"), it.embedding.iter().map(|x| x * scale).collect());
    }
    for (j, v) in labeled.iter().enumerate() {
        ctx.embeddings.insert(format!("l{j}"), v.iter().map(|x| x * scale).collect());
    }
    ctx
}

fn assert_same_scores(a: &alnlg_core::strategy::ScoreVector, b: &alnlg_core::strategy::ScoreVector, tol: f64) {
    assert_eq!(a.len(), b.len());
    for (id, s) in a.entries() {
        let t = b.get(id).unwrap();
        assert!((s - t).abs() <= tol, "{id}: {s} vs {t}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scores_ignore_pool_order(items in items(4), shuffle_seed: u64) {
        let n = items.len();
        let forward: Vec<usize> = (0..n).collect();
        let mut shuffled = forward.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        let lab = vec![vec![0.5, -0.2, 0.1, 0.3]];
        let a = context(&items, &forward, &lab, 1.0);
        let b = context(&items, &shuffled, &lab, 1.0);
        assert_same_scores(&score_nsp(&a).unwrap(), &score_nsp(&b).unwrap(), 0.0);
        assert_same_scores(&score_mte(&a).unwrap(), &score_mte(&b).unwrap(), 0.0);
        assert_same_scores(&score_idds(&a, 0.7).unwrap(), &score_idds(&b, 0.7).unwrap(), 1e-12);
        assert_same_scores(&score_huds(&a, 0.4, 3).unwrap(), &score_huds(&b, 0.4, 3).unwrap(), 1e-12);
        prop_assert_eq!(score_random(&a.clone().with_seed(9)).ranking(), score_random(&b.clone().with_seed(9)).ranking());
    }

    #[test]
    fn score_ranges(items in items(3)) {
        let order: Vec<usize> = (0..items.len()).collect();
        let ctx = context(&items, &order, &[], 1.0);
        for (_, s) in score_nsp(&ctx).unwrap().entries() {
            prop_assert!((0.0..1.0).contains(s));
        }
        for (_, s) in score_mte(&ctx).unwrap().entries() {
            prop_assert!(*s >= 0.0);
        }
        // With every cosine non-negative the stratum distance stays in [0, 1].
        let positive: Vec<Item> =
            items.iter().map(|it| Item { embedding: it.embedding.iter().map(|x| x.abs() + 0.01).collect(), ..it.clone() }).collect();
        let ctx = context(&positive, &order, &[], 1.0);
        for beta in [0.0, 0.5, 1.0] {
            for (_, s) in score_huds(&ctx, beta, 2).unwrap().entries() {
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(s), "huds {s}");
            }
        }
    }

    #[test]
    fn bleuvar_range(samples in prop::collection::vec(sentence(), 2..5)) {
        let k = samples.len();
        let gens = samples
            .iter()
            .map(|s| {
                let toks: Vec<String> = s.split_whitespace().map(str::to_string).collect();
                let lps = vec![-0.1; toks.len()];
                GenerationResult::from_logprobs(toks, lps)
            })
            .collect();
        let ctx = StrategyContext::from_ids(["x"]).with_generations("x", gens);
        let v = score_bleuvar(&ctx, k).unwrap().get("x").unwrap();
        prop_assert!(v >= 0.0 && v <= (k * (k - 1)) as f64 + 1e-12, "{v}");
    }

    #[test]
    fn geometry_scores_are_scale_invariant(items in items(5), scale in 0.01f64..100.0) {
        let order: Vec<usize> = (0..items.len()).collect();
        let lab = vec![vec![1.0, 0.0, -0.5, 0.2, 0.0], vec![0.0, 0.3, 0.3, 0.0, 1.0]];
        let a = context(&items, &order, &lab, 1.0);
        let b = context(&items, &order, &lab, scale);
        assert_same_scores(&score_idds(&a, 1.0).unwrap(), &score_idds(&b, 1.0).unwrap(), 1e-9);
        assert_same_scores(&score_huds(&a, 0.5, 2).unwrap(), &score_huds(&b, 0.5, 2).unwrap(), 1e-9);
    }

    #[test]
    fn facility_trace_is_monotone_with_diminishing_gains(items in items(3), k in 1usize..10, lab in prop::collection::vec(prop::collection::vec(0.1f64..1.0, 3), 0..3)) {
        let order: Vec<usize> = (0..items.len()).collect();
        let ctx = context(&items, &order, &lab, 1.0);
        let t = select_facility_location(&ctx, k, true).unwrap();
        prop_assert_eq!(t.ids.len(), k.min(items.len()));
        let mut prev: Option<(f64, f64)> = None;
        for (i, (&g, &v)) in t.gains.iter().zip(&t.values).enumerate() {
            prop_assert!(g >= -1e-12);
            if let Some((pg, pv)) = prev {
                prop_assert!(v >= pv - 1e-12, "value dropped at step {}", i);
                prop_assert!(g <= pg + 1e-9, "gain grew at step {}: {} > {}", i, g, pg);
                prop_assert!((v - pv - g).abs() < 1e-9);
            }
            prev = Some((g, v));
        }
    }

    #[test]
    fn greedy_bounds_hold_on_tiny_pools(
        unl in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..8),
        lab in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 0..3),
        k in 1usize..8,
    ) {
        let pool = brute::Pool::new(unl, lab);
        pool.check_fl(k).map_err(TestCaseError::fail)?;
        pool.check_coreset(k).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn random_top_k_is_the_seeded_permutation(n in 1usize..60, k in 0usize..70, seed: u64) {
        let ids: Vec<String> = (0..n).map(|i| format!("id{i:03}")).collect();
        let ctx = StrategyContext::from_ids(ids.clone()).with_seed(seed);
        let mut perm = ids;
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        perm.truncate(k);
        prop_assert_eq!(select_top_k(&score_random(&ctx), k), perm);
    }

    #[test]
    fn ledger_sums_per_call_costs(calls in prop::collection::vec((0u64..2_000_000, 0u64..500_000, any::<bool>()), 0..200)) {
        let prices = PriceSheet::new(2.0, 8.0);
        let mut ledger = CostLedger::new(None);
        let mut sum = 0.0;
        for &(i, o, batch) in &calls {
            let c = compute_cost(i, o, &prices, batch);
            prop_assert!(c >= 0.0);
            if batch {
                prop_assert_eq!(c, compute_cost(i, o, &prices, false) * 0.5);
            }
            ledger.record(Usage { input_tokens: i, output_tokens: o }, c);
            sum += c;
        }
        prop_assert_eq!(ledger.spent.to_bits(), sum.to_bits());
        prop_assert_eq!(ledger.calls, calls.len() as u64);
    }

    #[test]
    fn llm_labelling_never_exceeds_budget(budget in 0.0f64..200.0, n in 1usize..30, parallelism in 1usize..6, batch: bool) {
        let gw = Gateway::new(Arc::new(MockBackend::new(3)));
        let tasks: Vec<LlmTask> =
            (0..n).map(|i| LlmTask { id: format!("t{i}"), input: format!("question number {i} about the sky") }).collect();
        let agent = AgentSpec { model: "agent".into(), max_tokens: 6, parallelism, ..AgentSpec::default() };
        let prices = PriceSheet::new(1e6, 3e6);
        let mut ledger = CostLedger::new(Some(budget));
        let out = annotate_batch_llm(&tasks, &gw, &agent, &PromptTemplate::default(), &prices, &mut ledger, batch).unwrap();
        prop_assert!(ledger.spent <= budget, "spent {} > {}", ledger.spent, budget);
        prop_assert_eq!(out.results.len(), n);
        let paid: f64 = out.results.iter().map(|r| r.cost).sum();
        prop_assert!((paid - ledger.spent).abs() < 1e-9);
    }

    #[test]
    fn metric_ranges(pred in sentence(), reference in sentence()) {
        for v in [rouge_n(&pred, &reference, 1), rouge_n(&pred, &reference, 2), rouge_l(&pred, &reference)] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(rouge_l(&pred, &pred), 1.0);
        let em = exact_match(&pred, &[&reference]);
        prop_assert!(em == 0.0 || em == 1.0);
        prop_assert!(relaxed_exact_match(&pred, &[&reference]) >= em);
        let toks = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
        let b = sentence_bleu(&toks(&pred), &toks(&reference));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&b));
    }
}
