//! LLM-as-annotator with budget-guarded, bounded-parallel calls.

use serde::{Deserialize, Serialize};

use super::{compute_cost, CostLedger, LabelError, PriceSheet};
use crate::gateway::{DecodeParams, Gateway, Usage};
use crate::pool::SkipReason;

const PLACEHOLDER: &str = "{input}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate(String);

impl PromptTemplate {
    pub fn new(template: impl Into<String>) -> Result<Self, LabelError> {
        let t = template.into();
        if !t.contains(PLACEHOLDER) {
            return Err(LabelError::Config(format!("prompt template lacks the {PLACEHOLDER} placeholder")));
        }
        Ok(Self(t))
    }

    pub fn render(&self, input: &str) -> String {
        self.0.replace(PLACEHOLDER, input)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self(PLACEHOLDER.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub model: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
    /// Calls issued together per wave.
    pub parallelism: usize,
}

impl Default for AgentSpec {
    fn default() -> Self {
        Self { model: String::new(), max_tokens: 256, temperature: 0.0, top_p: 1.0, parallelism: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmTask {
    pub id: String,
    pub input: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmTaskResult {
    pub id: String,
    pub annotation: Option<String>,
    pub usage: Usage,
    pub cost: f64,
    pub skip: Option<SkipReason>,
    pub error: Option<String>,
}

impl LlmTaskResult {
    fn skipped(id: &str, reason: SkipReason, error: Option<String>) -> Self {
        Self { id: id.to_string(), annotation: None, usage: Usage::default(), cost: 0.0, skip: Some(reason), error }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LlmOutcome {
    /// One entry per task, in task order.
    pub results: Vec<LlmTaskResult>,
    pub calls_issued: usize,
}

/// Cost assumed for the next call before it is made: the larger of the mean
/// observed cost and the cost of the full prompt plus `max_tokens` of output.
fn projected_cost(ledger: &CostLedger, prompt: &str, agent: &AgentSpec, prices: &PriceSheet, batch: bool) -> f64 {
    let worst = compute_cost(prompt.split_whitespace().count() as u64, agent.max_tokens as u64, prices, batch);
    ledger.mean_cost().map_or(worst, |m| m.max(worst))
}

/// Annotates `tasks` through the gateway. Calls go out in waves of
/// `agent.parallelism`; before each call is admitted its projected cost must
/// fit the remaining budget, otherwise it and every later task are returned
/// with reason `budget` and the ledger is marked exhausted.
pub fn annotate_batch_llm(
    tasks: &[LlmTask],
    gateway: &Gateway,
    agent: &AgentSpec,
    template: &PromptTemplate,
    prices: &PriceSheet,
    ledger: &mut CostLedger,
    batch_mode: bool,
) -> Result<LlmOutcome, LabelError> {
    prices.validate()?;
    let decode = DecodeParams {
        temperature: agent.temperature,
        top_p: agent.top_p,
        max_tokens: agent.max_tokens,
        num_samples: 1,
        logprobs_k: 0,
    };
    let mut out = LlmOutcome::default();
    let mut next = 0;
    while next < tasks.len() {
        if ledger.budget_reached() {
            break;
        }
        let mut reserved = 0.0;
        let mut wave: Vec<(&LlmTask, String)> = Vec::new();
        while next < tasks.len() && wave.len() < agent.parallelism.max(1) {
            let prompt = template.render(&tasks[next].input);
            let projected = projected_cost(ledger, &prompt, agent, prices, batch_mode);
            if !ledger.fits(reserved, projected) {
                ledger.exhausted = true;
                break;
            }
            reserved += projected;
            wave.push((&tasks[next], prompt));
            next += 1;
        }
        if wave.is_empty() {
            break;
        }
        let responses = gateway.map_bounded(&wave, |(_, prompt)| gateway.generate(&agent.model, prompt, &decode));
        out.calls_issued += wave.len();
        for ((task, _), response) in wave.iter().zip(responses) {
            let result = match response {
                Ok(gens) => {
                    let mut usage = Usage::default();
                    for g in &gens {
                        usage += g.usage;
                    }
                    let cost = compute_cost(usage.input_tokens, usage.output_tokens, prices, batch_mode);
                    ledger.record(usage, cost);
                    let text = gens.into_iter().next().map(|g| g.text.trim().to_string()).unwrap_or_default();
                    if text.is_empty() {
                        LlmTaskResult { usage, cost, ..LlmTaskResult::skipped(&task.id, SkipReason::Empty, None) }
                    } else {
                        LlmTaskResult { id: task.id.clone(), annotation: Some(text), usage, cost, skip: None, error: None }
                    }
                }
                Err(e) => {
                    tracing::warn!(id = %task.id, error = %e, "annotation call failed");
                    LlmTaskResult::skipped(&task.id, SkipReason::Backend, Some(e.to_string()))
                }
            };
            out.results.push(result);
        }
    }
    for task in &tasks[next..] {
        out.results.push(LlmTaskResult::skipped(&task.id, SkipReason::Budget, None));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use crate::gateway::MockBackend;

    fn tasks(n: usize) -> Vec<LlmTask> {
        (0..n).map(|i| LlmTask { id: format!("t{i}"), input: format!("question number {i}") }).collect()
    }

    #[test]
    fn template_needs_placeholder() {
        assert!(PromptTemplate::new("Answer:").is_err());
        assert_eq!(PromptTemplate::new("Q: {input}\nA:").unwrap().render("2+2"), "Q: 2+2\nA:");
    }

    #[test]
    fn ledger_equals_mock_usage() {
        let gw = Gateway::mock(3);
        let mut ledger = CostLedger::new(None);
        let agent = AgentSpec { model: "agent".into(), max_tokens: 8, ..AgentSpec::default() };
        let prices = PriceSheet::new(2.0, 8.0);
        let out = annotate_batch_llm(&tasks(3), &gw, &agent, &PromptTemplate::default(), &prices, &mut ledger, false).unwrap();
        assert_eq!(out.results.iter().filter(|r| r.annotation.is_some()).count(), 3);
        let stats = gw.stats();
        assert_eq!(ledger.input_tokens, stats.usage.input_tokens);
        assert_eq!(ledger.output_tokens, stats.usage.output_tokens);
        let mut replay = 0.0;
        for r in &out.results {
            replay += compute_cost(r.usage.input_tokens, r.usage.output_tokens, &prices, false);
        }
        assert_eq!(ledger.spent.to_bits(), replay.to_bits());
    }

    #[test]
    fn exhausted_budget_issues_no_calls() {
        let gw = Gateway::mock(3);
        let mut ledger = CostLedger::new(Some(1.0));
        ledger.spent = 1.0;
        let out = annotate_batch_llm(
            &tasks(3),
            &gw,
            &AgentSpec::default(),
            &PromptTemplate::default(),
            &PriceSheet::new(2.0, 8.0),
            &mut ledger,
            false,
        )
        .unwrap();
        assert_eq!(out.calls_issued, 0);
        assert_eq!(gw.stats().generate_calls, 0);
        assert!(out.results.iter().all(|r| r.skip == Some(SkipReason::Budget)));
    }

    #[test]
    fn budget_covers_two_of_three() {
        // Scripted answers of 4 tokens, prompts of 3 tokens; at 1e6 per 1M
        // tokens a task costs exactly 7 and the worst case (max_tokens 4) too.
        let mut backend = MockBackend::new(0);
        for t in tasks(3) {
            backend = backend.script(t.input.clone(), "w x y z");
        }
        let gw = Gateway::new(Arc::new(backend));
        let agent = AgentSpec { max_tokens: 4, parallelism: 1, ..AgentSpec::default() };
        let mut ledger = CostLedger::new(Some(15.0));
        let out = annotate_batch_llm(
            &tasks(3),
            &gw,
            &agent,
            &PromptTemplate::default(),
            &PriceSheet::new(1e6, 1e6),
            &mut ledger,
            false,
        )
        .unwrap();
        assert_eq!(out.results.iter().filter(|r| r.annotation.is_some()).count(), 2);
        assert_eq!(out.results[2].skip, Some(SkipReason::Budget));
        assert_eq!(ledger.spent, 14.0);
        assert!(ledger.exhausted);
    }

    #[test]
    fn backend_failure_skips_task() {
        let t = tasks(2);
        let gw = Gateway::new(Arc::new(MockBackend::new(0).fail_on(t[1].input.clone())));
        let mut ledger = CostLedger::new(None);
        let out = annotate_batch_llm(&t, &gw, &AgentSpec::default(), &PromptTemplate::default(), &PriceSheet::default(), &mut ledger, true)
            .unwrap();
        assert!(out.results[0].annotation.is_some());
        assert_eq!(out.results[1].skip, Some(SkipReason::Backend));
        assert_eq!(ledger.calls, 1);
    }
}
