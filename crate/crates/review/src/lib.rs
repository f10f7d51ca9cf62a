//! JSON API for the sampled review pass.
//!
//! One [`ReviewState`] per server. Reads share a read lock; decisions take
//! the write lock, so they are applied one at a time and each is durable in
//! the decision log before the request is acknowledged.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::RwLock;

use surgkit_core::cleaning::{
    apply_rules, compile_rules, corpus_digest, ChangeLog, CleaningError, CleaningRule, FlagPolicy,
    PersistentSession, ReviewDecision, Verdict,
};
use surgkit_core::generation::{
    parse_grounding, write_corpus, ConversationParadigm, GroundedBox, InstructionRecord, SubTask,
};

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("{0}")]
    Invalid(String),
    #[error("missing or wrong review token")]
    Unauthorized,
    #[error("{0}")]
    Internal(String),
}

impl From<CleaningError> for ApiError {
    fn from(e: CleaningError) -> Self {
        match e {
            CleaningError::ForeignRecord(id) => ApiError::NotFound(format!("record `{id}` is not in the sample")),
            CleaningError::InvalidDecision { .. } => ApiError::Invalid(e.to_string()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Unauthorized => StatusCode::UNAUTHORIZED,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// Required as `Authorization: Bearer <token>` when set.
    pub token: Option<String>,
    pub rule_threshold: usize,
    pub flag_policy: FlagPolicy,
    /// Where finalize writes the cleaned corpus and compiled rules.
    pub output: Option<PathBuf>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            token: None,
            rule_threshold: surgkit_core::cleaning::DEFAULT_RULE_THRESHOLD,
            flag_policy: FlagPolicy::Drop,
            output: None,
        }
    }
}

pub struct ReviewState {
    session: PersistentSession,
    corpus: Vec<InstructionRecord>,
    index: BTreeMap<String, usize>,
    /// frame id → image file
    images: BTreeMap<String, PathBuf>,
    options: ServeOptions,
}

impl ReviewState {
    /// `session` must have been sampled from `corpus`.
    pub fn new(
        session: PersistentSession,
        corpus: Vec<InstructionRecord>,
        images: BTreeMap<String, PathBuf>,
        options: ServeOptions,
    ) -> Result<Self, ApiError> {
        let digest = corpus_digest(&corpus);
        if digest != session.session().corpus_digest {
            return Err(ApiError::Invalid(
                "decision log belongs to a different corpus".into(),
            ));
        }
        let index = corpus
            .iter()
            .enumerate()
            .map(|(i, r)| (r.record_id.clone(), i))
            .collect();
        Ok(Self {
            session,
            corpus,
            index,
            images,
            options,
        })
    }

    pub fn session(&self) -> &PersistentSession {
        &self.session
    }
}

#[derive(Clone)]
pub struct AppState(Arc<RwLock<ReviewState>>);

impl AppState {
    pub fn new(state: ReviewState) -> Self {
        Self(Arc::new(RwLock::new(state)))
    }

    pub async fn read(&self) -> tokio::sync::RwLockReadGuard<'_, ReviewState> {
        self.0.read().await
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub decided: usize,
    pub total: usize,
    /// 1-based position of the item in the sample.
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemBox {
    /// Index into `record.turns`.
    pub turn: usize,
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub record: InstructionRecord,
    pub image_url: String,
    pub boxes: Vec<ItemBox>,
    pub paradigm: ConversationParadigm,
    pub subtask: SubTask,
    pub progress: Progress,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<ReviewDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub corpus_digest: String,
    pub corpus_size: usize,
    pub ratio: f64,
    pub seed: u64,
    pub sample_size: usize,
    pub decided: usize,
    pub remaining: usize,
    pub complete: bool,
    pub accepted: usize,
    pub edited: usize,
    pub flagged: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalizeResponse {
    #[serde(flatten)]
    pub changes: ChangeLog,
    pub rules: Vec<CleaningRule>,
    pub records_in: usize,
    pub records_out: usize,
}

fn summary(state: &ReviewState) -> SessionSummary {
    let s = state.session.session();
    let count = |v: Verdict| s.decisions.values().filter(|d| d.verdict == v).count();
    SessionSummary {
        corpus_digest: s.corpus_digest.clone(),
        corpus_size: state.corpus.len(),
        ratio: s.ratio,
        seed: s.seed,
        sample_size: s.sample.len(),
        decided: s.decisions.len(),
        remaining: s.sample.len() - s.decisions.len(),
        complete: s.is_complete(),
        accepted: count(Verdict::Accept),
        edited: count(Verdict::Edit),
        flagged: count(Verdict::Flag),
        next: s.next_undecided().map(str::to_string),
    }
}

/// Boxes exactly as the grounding parser reads them from each turn's text.
pub fn item_boxes(record: &InstructionRecord) -> Vec<ItemBox> {
    record
        .turns
        .iter()
        .enumerate()
        .flat_map(|(turn, t)| {
            parse_grounding(&t.text)
                .boxes
                .into_iter()
                .map(move |GroundedBox { label, bbox }| ItemBox {
                    turn,
                    label,
                    bbox: bbox.to_array(),
                })
        })
        .collect()
}

fn item(state: &ReviewState, record_id: &str) -> Result<ReviewItem, ApiError> {
    let s = state.session.session();
    let position = s
        .sample
        .iter()
        .position(|id| id == record_id)
        .ok_or_else(|| ApiError::NotFound(format!("record `{record_id}` is not in the sample")))?;
    let record = state
        .index
        .get(record_id)
        .map(|&i| state.corpus[i].clone())
        .ok_or_else(|| ApiError::Internal(format!("sampled record `{record_id}` missing from corpus")))?;
    Ok(ReviewItem {
        image_url: format!("/api/images/{}", record.frame_id),
        boxes: item_boxes(&record),
        paradigm: record.paradigm,
        subtask: record.subtask,
        progress: Progress {
            decided: s.decisions.len(),
            total: s.sample.len(),
            position: position + 1,
        },
        decision: s.decisions.get(record_id).cloned(),
        record,
    })
}

async fn get_session(State(app): State<AppState>) -> Json<SessionSummary> {
    Json(summary(&*app.read().await))
}

async fn get_next(State(app): State<AppState>) -> Result<Response, ApiError> {
    let state = app.read().await;
    match state.session.session().next_undecided() {
        None => Ok(StatusCode::NO_CONTENT.into_response()),
        Some(id) => Ok(Json(item(&state, id)?).into_response()),
    }
}

async fn get_item(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<ReviewItem>, ApiError> {
    Ok(Json(item(&*app.read().await, &id)?))
}

async fn post_decision(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<ReviewDecision>, axum::extract::rejection::JsonRejection>,
) -> Result<StatusCode, ApiError> {
    let Json(mut decision) = body.map_err(|e| ApiError::Invalid(e.body_text()))?;
    if decision.record_id.is_empty() {
        decision.record_id = id.clone();
    } else if decision.record_id != id {
        return Err(ApiError::Invalid(format!(
            "body record_id `{}` does not match the URL",
            decision.record_id
        )));
    }
    let mut state = app.0.write().await;
    if !state.session.session().contains(&id) {
        return Err(ApiError::NotFound(format!("record `{id}` is not in the sample")));
    }
    state.session.record_decision(decision)?;
    log::info!("decision recorded for {id}");
    Ok(StatusCode::NO_CONTENT)
}

fn content_type(path: &std::path::Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("bmp") => "image/bmp",
        Some("webp") => "image/webp",
        _ => "application/octet-stream",
    }
}

async fn get_image(State(app): State<AppState>, Path(frame_id): Path<String>) -> Result<Response, ApiError> {
    let path = app
        .read()
        .await
        .images
        .get(&frame_id)
        .cloned()
        .ok_or_else(|| ApiError::NotFound(format!("no image for frame `{frame_id}`")))?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::NotFound(format!("{}: {e}", path.display())))?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

async fn finalize(State(app): State<AppState>) -> Result<Json<FinalizeResponse>, ApiError> {
    let state = app.0.write().await;
    let session = state.session.session();
    let rules = compile_rules(session, &state.corpus, state.options.rule_threshold);
    let (cleaned, changes) = apply_rules(&state.corpus, &rules, session, state.options.flag_policy);
    if let Some(dir) = &state.options.output {
        write_outputs(dir, &cleaned, &rules).map_err(|e| ApiError::Internal(e.to_string()))?;
    }
    log::info!(
        "finalized: {} rules, {} changes, {} conflicts",
        rules.len(),
        changes.entries.len(),
        changes.conflicts.len()
    );
    Ok(Json(FinalizeResponse {
        records_in: state.corpus.len(),
        records_out: cleaned.len(),
        changes,
        rules,
    }))
}

fn write_outputs(dir: &std::path::Path, cleaned: &[InstructionRecord], rules: &[CleaningRule]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut buf = Vec::new();
    write_corpus(&mut buf, cleaned)?;
    std::fs::write(dir.join("cleaned.jsonl"), buf)?;
    let rules = serde_json::to_vec_pretty(rules).map_err(std::io::Error::other)?;
    std::fs::write(dir.join("rules.json"), rules)
}

async fn require_token(
    State(token): State<Option<Arc<str>>>,
    headers: HeaderMap,
    request: Request,
    next: Next,
) -> Result<Response, ApiError> {
    if let Some(token) = token {
        let presented = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(&*token) {
            return Err(ApiError::Unauthorized);
        }
    }
    Ok(next.run(request).await)
}

pub fn router(app: AppState, token: Option<String>) -> Router {
    let token: Option<Arc<str>> = token.map(Into::into);
    Router::new()
        .route("/api/session", get(get_session))
        .route("/api/items/next", get(get_next))
        .route("/api/items/{id}", get(get_item))
        .route("/api/items/{id}/decision", post(post_decision))
        .route("/api/images/{frame_id}", get(get_image))
        .route("/api/finalize", post(finalize))
        .layer(middleware::from_fn_with_state(token, require_token))
        .with_state(app)
}

/// Build the router for `state`, honouring its token option.
pub fn app(state: ReviewState) -> Router {
    let token = state.options.token.clone();
    router(AppState::new(state), token)
}

/// Bind `addr` (port 0 picks a free port) and report the bound address
/// before serving.
pub async fn bind(addr: SocketAddr) -> std::io::Result<(TcpListener, SocketAddr)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((listener, local))
}

pub async fn serve(listener: TcpListener, router: Router) -> std::io::Result<()> {
    axum::serve(listener, router).await
}
