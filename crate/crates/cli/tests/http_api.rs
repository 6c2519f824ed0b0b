mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use common::pipeline;
use restore_cli::commands::load_vocab;
use restore_cli::config::AppConfig;
use restore_cli::server::{router, AppState, CompletionResponse, ScoreResponse, ServedModel};
use restore_cli::CliError;
use restore_core::lm::checkpoint::sha256_hex;
use restore_core::tokenizer::Token;

fn app(model: &str) -> (Router, Arc<AppState>) {
    let mut config = pipeline().config.clone();
    config.server.model = model.into();
    let state = AppState::new(ServedModel::load(&config).unwrap());
    (router(Arc::clone(&state)), state)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::test]
async fn health_counts_requests() {
    let (app, _) = app("ngram");
    let (s, v) = call(&app, "GET", "/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["requests"], 1);
    let (_, v) = call(&app, "GET", "/health", None).await;
    assert_eq!(v["requests"], 2);
}

#[tokio::test]
async fn model_describes_the_loaded_checkpoint() {
    let (app, _) = app("lstm");
    let (s, v) = call(&app, "GET", "/model", None).await;
    assert_eq!(s, StatusCode::OK);
    let config = &pipeline().config;
    let vocab = load_vocab(config).unwrap();
    let bytes = std::fs::read(config.paths.lstm()).unwrap();
    assert_eq!(v["kind"], "lstm");
    assert_eq!(v["vocab_size"], vocab.len());
    assert_eq!(v["checkpoint_hash"], sha256_hex(&bytes));
    assert_eq!(v["config"]["hidden_dim"], 16);
    assert!(v["model_id"].as_str().unwrap().starts_with("lstm-"));
}

#[tokio::test]
async fn complete_returns_k_ranked_candidates() {
    let (app, state) = app("lstm");
    for mode in ["start", "full"] {
        let body = json!({"left": ["NUM"], "right": ["NUM"], "mode": mode, "k": 4}).to_string();
        let (s, v) = call(&app, "POST", "/complete", Some(&body)).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        let r: CompletionResponse = serde_json::from_value(v).unwrap();
        assert_eq!(r.candidates.len(), 4);
        assert_eq!(r.model_id, state.served.model_id);
        let ranks: Vec<usize> = r.candidates.iter().map(|c| c.rank).collect();
        assert_eq!(ranks, vec![1, 2, 3, 4]);
        assert!(r.candidates.windows(2).all(|w| w[0].log_score >= w[1].log_score));
        for c in &r.candidates {
            assert!(!["<BRK>", "<UNK>", "<i>", "</i>", "<EOS>"].contains(&c.token.as_str()));
        }
    }
}

#[tokio::test]
async fn bad_bodies_are_rejected() {
    let (app, state) = app("ngram");
    for body in [
        "{not json",
        r#"{"left": [], "mode": "start"}"#,
        r#"{"left": [], "mode": "middle", "k": 3}"#,
        r#"{"left": [], "mode": "start", "k": 3, "extra": 1}"#,
        r#"{"left": [], "mode": "start", "k": 0}"#,
    ] {
        let (s, v) = call(&app, "POST", "/complete", Some(body)).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");
        assert!(v["error"].is_string());
    }
    let (s, _) = call(&app, "POST", "/score", Some(r#"{"tokens": []}"#)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", "/tokenize", Some(r#"{"txt": "a"}"#)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(state.rejected.load(std::sync::atomic::Ordering::Relaxed), 7);
}

#[tokio::test]
async fn score_agrees_with_the_model() {
    let (app, state) = app("lstm");
    let tokens = ["NUM", "NAME", "NUM"];
    let body = json!({ "tokens": tokens }).to_string();
    let (s, v) = call(&app, "POST", "/score", Some(&body)).await;
    assert_eq!(s, StatusCode::OK);
    let r: ScoreResponse = serde_json::from_value(v).unwrap();
    let toks: Vec<Token> = tokens.iter().map(|t| Token::new(*t)).collect();
    let ids = state.served.vocab.encode(&toks).0;
    let ll = state.served.model.lm().score_sequence(&ids);
    assert_eq!(r.log_likelihood, ll);
    assert!((r.mean_nll - (-ll / 3.0)).abs() < 1e-12);
    assert!((r.perplexity_e - r.mean_nll.exp()).abs() < 1e-9);
    assert!((r.perplexity_2 - r.perplexity_e).abs() < 1e-9);
}

#[tokio::test]
async fn tokenize_applies_the_word_rules() {
    let (app, _) = app("ngram");
    let body = json!({ "text": "1 ma-na KU3.BABBAR\n\n[x x] 2" }).to_string();
    let (s, v) = call(&app, "POST", "/tokenize", Some(&body)).await;
    assert_eq!(s, StatusCode::OK);
    let tokens: Vec<&str> = v["tokens"].as_array().unwrap().iter().map(|t| t.as_str().unwrap()).collect();
    assert_eq!(tokens.first(), Some(&"NUM"));
    assert_eq!(tokens.last(), Some(&"<EOS>"));
    assert!(tokens.contains(&"<BRK>"));
}

#[tokio::test]
async fn unknown_routes_and_models() {
    let (app, _) = app("ngram");
    let (s, _) = call(&app, "GET", "/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let mut config: AppConfig = pipeline().config.clone();
    config.server.model = "gru".into();
    assert!(matches!(ServedModel::load(&config), Err(CliError::Config(_))));
}
