//! Every broken config invariant comes back as a 422 naming exactly the
//! offending fields, from both the validate and the create endpoints.

mod common;

use alnlg_core::RunConfig;
use axum::http::{Method, StatusCode};
use common::*;
use proptest::prelude::*;
use serde_json::{json, Value};

/// (field, dotted path, invalid value)
const VIOLATIONS: &[(&str, &str, &str)] = &[
    ("al.strategy", "al.strategy", r#""best_guess""#),
    ("al.init_query_size", "al.init_query_size", "1.5"),
    ("al.init_query_size", "al.init_query_size", "0"),
    ("al.query_size", "al.query_size", "-3"),
    ("al.query_size", "al.query_size", "2.25"),
    ("al.num_iterations", "al.num_iterations", "0"),
    ("al.budget", "al.budget", "-1"),
    ("data.test_fraction", "data.test_fraction", "1.0"),
    ("data.input_field", "data.input_field", r#"" ""#),
    ("model.max_concurrent", "model.max_concurrent", "0"),
    ("generation.temperature", "generation.temperature", "-0.5"),
    ("generation.top_p", "generation.top_p", "0"),
    ("generation.top_p", "generation.top_p", "1.5"),
    ("generation.max_tokens", "generation.max_tokens", "0"),
    ("labeller.price.input_per_1m", "labeller.price.input_per_1m", "-2"),
    ("labeller.price.output_per_1m", "labeller.price.output_per_1m", "-8"),
    ("labeller.price.batch_discount", "labeller.price.batch_discount", "0"),
    ("labeller.price.per_label", "labeller.price.per_label", "-0.1"),
    ("labeller.prompt_template", "labeller.prompt_template", r#""Answer the question.""#),
    ("labeller.error_rate", "labeller.error_rate", "1.5"),
    ("evaluation.eval_split", "evaluation.eval_split", "1.0"),
    ("evaluation.metrics", "evaluation.metrics", r#"["accuracy"]"#),
];

fn set(tree: &mut Value, path: &str, value: Value) {
    let mut cur = tree;
    let parts: Vec<&str> = path.split('.').collect();
    for p in &parts[..parts.len() - 1] {
        cur = cur.as_object_mut().unwrap().entry(p.to_string()).or_insert_with(|| json!({}));
    }
    cur[parts[parts.len() - 1]] = value;
}

/// A valid base config with the chosen violations applied, plus the expected
/// field set.
fn invalid_form(picks: &[usize]) -> (Value, Vec<String>) {
    let mut tree = json!({ "al": { "strategy": "huds", "init_query_size": 10, "query_size": 0.01, "num_iterations": 3 } });
    let mut expected = Vec::new();
    for &i in picks {
        let (field, path, raw) = VIOLATIONS[i];
        set(&mut tree, path, serde_json::from_str(raw).unwrap());
        expected.push(field.to_string());
    }
    expected.sort();
    expected.dedup();
    (tree, expected)
}

#[test]
fn every_violation_is_caught_by_the_core_validator() {
    for (i, (field, ..)) in VIOLATIONS.iter().enumerate() {
        let (tree, _) = invalid_form(&[i]);
        let err = RunConfig::from_json_value(tree).unwrap().validate().unwrap_err();
        assert_eq!(err.fields(), vec![*field]);
    }
    let (tree, expected) = invalid_form(&[]);
    assert!(expected.is_empty());
    RunConfig::from_json_value(tree).unwrap().validate().unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn server_rejects_with_the_same_fields(picks in prop::collection::vec(0..VIOLATIONS.len(), 1..4)) {
        let (tree, expected) = invalid_form(&picks);
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        let app = app();
        for (uri, body) in [("/v1/configs/validate", json!({ "config": tree })), ("/v1/runs", create_body(tree.clone(), 20))] {
            let (status, v) = rt.block_on(call(&app, Method::POST, uri, Some(body)));
            prop_assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
            prop_assert_eq!(&v["error"]["code"], "validation");
            prop_assert_eq!(fields(&v), expected.clone(), "{}", uri);
        }
        let (_, list) = rt.block_on(call(&app, Method::GET, "/v1/runs", None));
        prop_assert!(list["runs"].as_array().unwrap().is_empty());
    }
}
