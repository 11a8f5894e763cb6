//! Comparisons against the values frozen by the scripts in `oracles/`. Each
//! check returns the first mismatch as an error message.

#![allow(dead_code)]

pub mod brute;

use alnlg_core::gateway::{GenerationResult, Usage};
use alnlg_core::labeling::{compute_cost, CostLedger, PriceSheet};
use alnlg_core::metrics::{bleu_corpus, relaxed_exact_match, rouge_l, rouge_n};
use alnlg_core::strategy::{
    delfy_weight, score_bleuvar, score_huds, score_idds, score_mte, score_nsp, LabeledView, StrategyContext,
    UnlabeledView,
};
use serde::Deserialize;
use serde_json::Value;

pub const TOL: f64 = 1e-9;

pub type Check = Result<(), String>;

fn close(what: &str, got: f64, want: f64) -> Check {
    if (got - want).abs() < TOL {
        Ok(())
    } else {
        Err(format!("{what}: got {got}, want {want}"))
    }
}

fn strategy_fixture() -> Value {
    serde_json::from_str(include_str!("../fixtures/strategy_oracle.json")).unwrap()
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(f).collect()
}

fn generation(logprobs: Vec<f64>) -> GenerationResult {
    let tokens = (0..logprobs.len()).map(|i| format!("t{i}")).collect();
    GenerationResult::from_logprobs(tokens, logprobs)
}

fn text_sample(text: &str) -> GenerationResult {
    let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    let lps = vec![-0.1; tokens.len()];
    GenerationResult::from_logprobs(tokens, lps)
}

fn only(scores: Result<alnlg_core::strategy::ScoreVector, alnlg_core::strategy::StrategyError>) -> Result<f64, String> {
    let scores = scores.map_err(|e| e.to_string())?;
    scores.get("x").ok_or_else(|| "no score for x".to_string())
}

pub fn check_nsp() -> Check {
    let fx = &strategy_fixture()["nsp"];
    let ctx = StrategyContext::from_ids(["x"]).with_generations("x", vec![generation(floats(&fx["logprobs"]))]);
    let got = only(score_nsp(&ctx))?;
    close("nsp", got, f(&fx["value"]))?;
    close("nsp worked value", got, 0.75)
}

pub fn check_mte() -> Check {
    for key in ["mte", "mte_residual"] {
        let fx = &strategy_fixture()[key];
        let positions: Vec<Vec<f64>> = fx["positions"].as_array().unwrap().iter().map(floats).collect();
        let alts: Vec<Vec<(String, f64)>> = positions
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &lp)| (format!("a{i}"), lp)).collect())
            .collect();
        let chosen: Vec<f64> = positions.iter().map(|p| p[0]).collect();
        let g = generation(chosen).with_alternatives(alts);
        let ctx = StrategyContext::from_ids(["x"]).with_generations("x", vec![g]);
        close(key, only(score_mte(&ctx))?, f(&fx["value"]))?;
    }
    Ok(())
}

pub fn check_delfy_weight() -> Check {
    close("te_delfy weight", delfy_weight(3, 1, 1.0), f(&strategy_fixture()["delfy_weight"]["value"]))
}

pub fn check_bleuvar() -> Check {
    for key in ["bleuvar_disjoint", "bleuvar_three"] {
        let fx = &strategy_fixture()[key];
        let samples: Vec<GenerationResult> =
            fx["samples"].as_array().unwrap().iter().map(|s| text_sample(s.as_str().unwrap())).collect();
        let k = samples.len();
        let ctx = StrategyContext::from_ids(["x"]).with_generations("x", samples);
        close(key, only(score_bleuvar(&ctx, k))?, f(&fx["value"]))?;
    }
    Ok(())
}

pub fn check_idds() -> Check {
    let fx = &strategy_fixture()["idds"];
    let unlabeled = fx["unlabeled"].as_object().unwrap();
    let labeled = fx["labeled"].as_object().unwrap();
    let mut ctx = StrategyContext::new(
        unlabeled.keys().map(|id| UnlabeledView { id: id.clone(), input: String::new() }).collect(),
        labeled.keys().map(|id| LabeledView { id: id.clone(), input: String::new(), annotation: "x".into() }).collect(),
    );
    for (id, v) in unlabeled.iter().chain(labeled) {
        ctx.embeddings.insert(id.clone(), floats(v));
    }
    let scores = score_idds(&ctx, f(&fx["lambda"])).map_err(|e| e.to_string())?;
    for (id, want) in fx["scores"].as_object().unwrap() {
        close(&format!("idds {id}"), scores.get(id).ok_or(format!("no idds score for {id}"))?, f(want))?;
    }
    Ok(())
}

pub fn check_huds() -> Check {
    let fx = &strategy_fixture()["huds"];
    let logprobs = fx["logprobs"].as_object().unwrap();
    let mut ctx = StrategyContext::from_ids(logprobs.keys().cloned());
    for (id, lps) in logprobs {
        ctx.generations.insert(id.clone(), vec![generation(floats(lps))]);
        ctx.embeddings.insert(id.clone(), floats(&fx["embeddings"][id]));
    }
    let scores = score_huds(&ctx, f(&fx["beta"]), fx["num_strata"].as_u64().unwrap() as usize)
        .map_err(|e| e.to_string())?;
    for (id, want) in fx["scores"].as_object().unwrap() {
        close(&format!("huds {id}"), scores.get(id).ok_or(format!("no huds score for {id}"))?, f(want))?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct Pair {
    prediction: String,
    reference: String,
    rouge2: f64,
    #[serde(rename = "rougeL")]
    rouge_l: f64,
}

#[derive(Deserialize)]
struct EmCase {
    prediction: String,
    references: Vec<String>,
    expected: f64,
}

#[derive(Deserialize)]
struct MetricFixture {
    pairs: Vec<Pair>,
    bleu: f64,
    bleu_two_refs: f64,
    relaxed_em: Vec<EmCase>,
}

fn metric_fixture() -> MetricFixture {
    serde_json::from_str(include_str!("../fixtures/metric_oracle.json")).unwrap()
}

pub fn check_rouge() -> Check {
    let fx = metric_fixture();
    if fx.pairs.len() != 20 {
        return Err(format!("expected 20 pairs, fixture has {}", fx.pairs.len()));
    }
    for p in &fx.pairs {
        close(&format!("rouge2 on {:?}", p.prediction), rouge_n(&p.prediction, &p.reference, 2), p.rouge2)?;
        close(&format!("rougeL on {:?}", p.prediction), rouge_l(&p.prediction, &p.reference), p.rouge_l)?;
    }
    Ok(())
}

pub fn check_bleu() -> Check {
    let fx = metric_fixture();
    let preds: Vec<String> = fx.pairs.iter().map(|p| p.prediction.clone()).collect();
    let refs: Vec<Vec<String>> = fx.pairs.iter().map(|p| vec![p.reference.clone()]).collect();
    close("corpus bleu", bleu_corpus(&preds, &refs).map_err(|e| e.to_string())?, fx.bleu)?;

    // Second reference: the hypothesis minus its last token.
    let two: Vec<Vec<String>> = fx
        .pairs
        .iter()
        .map(|p| {
            let toks: Vec<&str> = p.prediction.split_whitespace().collect();
            vec![p.reference.clone(), toks[..toks.len() - 1].join(" ")]
        })
        .collect();
    close("corpus bleu, two references", bleu_corpus(&preds, &two).map_err(|e| e.to_string())?, fx.bleu_two_refs)
}

pub fn check_relaxed_em() -> Check {
    let fx = metric_fixture();
    if fx.relaxed_em.len() != 50 {
        return Err(format!("expected 50 cases, fixture has {}", fx.relaxed_em.len()));
    }
    let wrong: Vec<String> = fx
        .relaxed_em
        .iter()
        .enumerate()
        .filter(|(_, c)| relaxed_exact_match(&c.prediction, &c.references) != c.expected)
        .map(|(i, c)| format!("#{i} {:?}", c.prediction))
        .collect();
    if wrong.is_empty() {
        Ok(())
    } else {
        Err(format!("disagreements: {}", wrong.join(", ")))
    }
}

#[derive(Deserialize)]
struct CostCall {
    input: u64,
    output: u64,
    batch: bool,
    cost: String,
    spent: String,
}

#[derive(Deserialize)]
struct CostFixture {
    calls: Vec<CostCall>,
    total_input: u64,
    total_output: u64,
}

fn from_bits(hex: &str) -> f64 {
    f64::from_bits(u64::from_str_radix(hex, 16).unwrap())
}

/// Replays the 1,000 simulated calls through the ledger and requires every
/// per-call cost and running total to match bit for bit.
pub fn check_cost_ledger() -> Check {
    let fx: CostFixture = serde_json::from_str(include_str!("../fixtures/cost_oracle.json")).unwrap();
    if fx.calls.len() != 1000 {
        return Err(format!("expected 1000 calls, fixture has {}", fx.calls.len()));
    }
    let prices = PriceSheet::new(2.0, 8.0);
    let mut ledger = CostLedger::new(None);
    for (i, c) in fx.calls.iter().enumerate() {
        let cost = compute_cost(c.input, c.output, &prices, c.batch);
        if cost.to_bits() != from_bits(&c.cost).to_bits() {
            return Err(format!("call {i}: cost {cost:e} vs {:e}", from_bits(&c.cost)));
        }
        ledger.record(Usage { input_tokens: c.input, output_tokens: c.output }, cost);
        if ledger.spent.to_bits() != from_bits(&c.spent).to_bits() {
            return Err(format!("call {i}: spent {:e} vs {:e}", ledger.spent, from_bits(&c.spent)));
        }
    }
    if ledger.input_tokens != fx.total_input || ledger.output_tokens != fx.total_output || ledger.calls != 1000 {
        return Err(format!("token totals {}/{} differ", ledger.input_tokens, ledger.output_tokens));
    }
    Ok(())
}
