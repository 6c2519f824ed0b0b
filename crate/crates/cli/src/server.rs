use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use restore_core::eval::{CompletionQuery, DEFAULT_POOL_SIZE};
use restore_core::ingest::parse_rendered_line;
use restore_core::lm::checkpoint::{hex, sha256_hex};
use restore_core::model::{perplexity, perplexity_base2};
use restore_core::ngram::CompletionMode;
use restore_core::tokenizer::{tokenize_line, Token, TokenId, TokenizerOptions, Vocabulary};

use crate::commands::{load_vocab, AnyModel, ModelKind};
use crate::config::AppConfig;
use crate::CliError;

/// The single model a server process answers with.
pub struct ServedModel {
    pub model: AnyModel,
    pub vocab: Vocabulary,
    pub model_id: String,
    /// SHA-256 of the model file.
    pub checkpoint_hash: String,
    pub config_echo: Value,
    pub tokenizer: TokenizerOptions,
}

impl ServedModel {
    pub fn load(config: &AppConfig) -> Result<Self, CliError> {
        let kind = match config.server.model.as_str() {
            "lstm" => ModelKind::Lstm,
            "ngram" => ModelKind::Ngram,
            other => return Err(CliError::Config(format!("unknown server model `{other}`"))),
        };
        let vocab = load_vocab(config)?;
        let model = AnyModel::load(config, kind, &vocab)?;
        let path = match kind {
            ModelKind::Lstm => config.paths.lstm(),
            ModelKind::Ngram => config.paths.ngram(),
        };
        let bytes = std::fs::read(&path).map_err(|e| CliError::Io(path.clone(), e))?;
        let config_echo = match &model {
            AnyModel::Lstm(m) => text_block_to_json(&m.config().to_text()),
            AnyModel::NGram(m) => json!({
                "order": m.order(),
                "alpha": m.alpha(),
                "smoothing": m.smoothing().as_str(),
            }),
        };
        Ok(Self::new(
            model,
            vocab,
            sha256_hex(&bytes),
            config_echo,
            TokenizerOptions {
                collapse_breaks: config.tokenizer.collapse_breaks,
            },
        ))
    }

    pub fn new(
        model: AnyModel,
        vocab: Vocabulary,
        checkpoint_hash: String,
        config_echo: Value,
        tokenizer: TokenizerOptions,
    ) -> Self {
        let model_id = format!("{}-{}", model.kind().as_str(), &checkpoint_hash[..checkpoint_hash.len().min(12)]);
        ServedModel {
            model,
            vocab,
            model_id,
            checkpoint_hash,
            config_echo,
            tokenizer,
        }
    }

    fn encode(&self, tokens: &[String]) -> Vec<TokenId> {
        let toks: Vec<Token> = tokens.iter().map(Token::new).collect();
        self.vocab.encode(&toks).0
    }
}

fn text_block_to_json(text: &str) -> Value {
    let map = text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| {
            let value = match (v.parse::<i64>(), v.parse::<f64>()) {
                (Ok(i), _) => Value::from(i),
                (_, Ok(f)) => Value::from(f),
                _ => match v {
                    "true" => Value::Bool(true),
                    "false" => Value::Bool(false),
                    _ => Value::from(v),
                },
            };
            (k.to_string(), value)
        })
        .collect();
    Value::Object(map)
}

pub struct AppState {
    pub served: ServedModel,
    pub requests: AtomicU64,
    pub rejected: AtomicU64,
}

impl AppState {
    pub fn new(served: ServedModel) -> Arc<Self> {
        Arc::new(AppState {
            served,
            requests: AtomicU64::new(0),
            rejected: AtomicU64::new(0),
        })
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn parse_body<T: DeserializeOwned>(state: &AppState, body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| {
        state.rejected.fetch_add(1, Ordering::Relaxed);
        ApiError(StatusCode::BAD_REQUEST, e.to_string())
    })
}

fn bad_request(state: &AppState, msg: impl Into<String>) -> ApiError {
    state.rejected.fetch_add(1, Ordering::Relaxed);
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    let n = state.requests.fetch_add(1, Ordering::Relaxed) + 1;
    Json(json!({
        "status": "ok",
        "requests": n,
        "rejected": state.rejected.load(Ordering::Relaxed),
    }))
}

async fn model_info(State(state): State<Arc<AppState>>) -> Json<Value> {
    state.requests.fetch_add(1, Ordering::Relaxed);
    let s = &state.served;
    Json(json!({
        "model_id": s.model_id,
        "kind": s.model.kind().as_str(),
        "vocab_size": s.vocab.len(),
        "vocab_hash": hex(&s.vocab.content_hash()),
        "checkpoint_hash": s.checkpoint_hash,
        "config": s.config_echo,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizeRequest {
    pub text: String,
}

async fn tokenize(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<Value>, ApiError> {
    state.requests.fetch_add(1, Ordering::Relaxed);
    let req: TokenizeRequest = parse_body(&state, &body)?;
    let tokens: Vec<String> = req
        .text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .flat_map(|l| tokenize_line(&parse_rendered_line(l), &state.served.tokenizer))
        .map(|t| t.as_str().to_string())
        .collect();
    Ok(Json(json!({ "tokens": tokens })))
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ApiMode {
    Start,
    Full,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompleteRequest {
    #[serde(default)]
    pub left: Vec<String>,
    #[serde(default)]
    pub right: Vec<String>,
    pub mode: ApiMode,
    pub k: usize,
    #[serde(default)]
    pub pool_size: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CandidateJson {
    pub token: String,
    pub log_score: f64,
    pub rank: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CompletionResponse {
    pub candidates: Vec<CandidateJson>,
    pub mode: ApiMode,
    pub model_id: String,
    pub elapsed_ms: u64,
}

async fn complete(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<CompletionResponse>, ApiError> {
    state.requests.fetch_add(1, Ordering::Relaxed);
    let started = Instant::now();
    let req: CompleteRequest = parse_body(&state, &body)?;
    let s = &state.served;
    let query = CompletionQuery {
        left: s.encode(&req.left),
        right: s.encode(&req.right),
        mode: match req.mode {
            ApiMode::Start => CompletionMode::Start,
            ApiMode::Full => CompletionMode::Full,
        },
        pool_size: req.pool_size.unwrap_or(DEFAULT_POOL_SIZE.max(req.k)),
        k: req.k,
    };
    query.validate().map_err(|e| bad_request(&state, e.to_string()))?;
    let state2 = Arc::clone(&state);
    let ranked = tokio::task::spawn_blocking(move || state2.served.model.completer().complete(&query))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let candidates = ranked
        .entries
        .iter()
        .map(|c| CandidateJson {
            token: s.vocab.token_of(c.token_id).map(|t| t.as_str().to_string()).unwrap_or_default(),
            log_score: c.log_score,
            rank: c.rank,
        })
        .collect();
    Ok(Json(CompletionResponse {
        candidates,
        mode: req.mode,
        model_id: s.model_id.clone(),
        elapsed_ms: started.elapsed().as_millis() as u64,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    pub tokens: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ScoreResponse {
    pub log_likelihood: f64,
    pub mean_nll: f64,
    pub perplexity_e: f64,
    pub perplexity_2: f64,
}

async fn score(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<ScoreResponse>, ApiError> {
    state.requests.fetch_add(1, Ordering::Relaxed);
    let req: ScoreRequest = parse_body(&state, &body)?;
    if req.tokens.is_empty() {
        return Err(bad_request(&state, "tokens must not be empty"));
    }
    let ids = state.served.encode(&req.tokens);
    let ll = state.served.model.lm().score_sequence(&ids);
    let nll = -ll / ids.len() as f64;
    Ok(Json(ScoreResponse {
        log_likelihood: ll,
        mean_nll: nll,
        perplexity_e: perplexity(nll),
        perplexity_2: perplexity_base2(nll),
    }))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/model", get(model_info))
        .route("/tokenize", post(tokenize))
        .route("/complete", post(complete))
        .route("/score", post(score))
        .with_state(state)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        if let Ok(mut s) = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            s.recv().await;
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    tracing::info!("shutting down");
}

pub async fn serve(config: &AppConfig) -> Result<(), CliError> {
    let served = ServedModel::load(config)?;
    tracing::info!(model_id = %served.model_id, "model loaded");
    let listener = tokio::net::TcpListener::bind(&config.server.bind)
        .await
        .map_err(|e| CliError::Server(format!("cannot bind {}: {e}", config.server.bind)))?;
    eprintln!("listening on http://{}", config.server.bind);
    axum::serve(listener, router(AppState::new(served)))
        .with_graceful_shutdown(shutdown_signal())
        .await
        .map_err(|e| CliError::Server(e.to_string()))
}
