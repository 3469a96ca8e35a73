//! HTTP+JSON API with a server-sent event stream for chat turns.

use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use mudoc_core::agent::{run_turn, AgentContext};
use mudoc_core::docsearch::{doc_search, DocSearchError};
use mudoc_core::gateway::Provider;
use mudoc_core::generation::StreamEvent;
use mudoc_core::index::{Index, StoredImage};
use mudoc_core::ingest::{BBox, BlockKind};
use mudoc_core::retrieval::SearchBackend;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::mpsc;
use uuid::Uuid;

use crate::config::ServiceConfig;
use crate::session::{metrics, timing_state, Condition, Session, SessionEvent, SessionStore, Tab};

/// Events buffered between a running turn and a slow client.
const STREAM_BUFFER: usize = 4;

#[derive(Clone)]
pub struct AppState {
    pub index: Arc<Index>,
    pub provider: Arc<dyn Provider>,
    pub backend: Arc<dyn SearchBackend>,
    pub store: Arc<SessionStore>,
    pub config: Arc<ServiceConfig>,
}

impl AppState {
    fn agent_context(&self) -> AgentContext {
        AgentContext {
            provider: self.provider.clone(),
            backend: self.backend.clone(),
            index: self.index.clone(),
            retrieval: self.config.retrieval.clone(),
            config: self.config.agent.clone(),
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self { status, kind, message: message.into() }
    }

    fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "validation", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn condition(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "condition", message)
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "kind": self.kind, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/chat", post(chat))
        .route("/sessions/{id}/search", post(search))
        .route("/sessions/{id}/notes", get(get_notes).put(put_notes))
        .route("/sessions/{id}/events", post(post_event))
        .route("/sessions/{id}/metrics", get(get_metrics))
        .route("/sessions/{id}/timing", get(get_timing))
        .route("/sessions/{id}/turns/{turn}/trace", get(get_trace))
        .route("/docs", get(list_docs))
        .route("/docs/{doc}/blocks/{block}", get(get_block))
        .route("/docs/{doc}/blocks/{block}/image", get(get_block_image))
        .route("/docs/{doc}/pages/{page}", get(get_page))
        .with_state(state)
}

fn session(state: &AppState, id: &str) -> ApiResult<Arc<Session>> {
    Uuid::parse_str(id)
        .ok()
        .and_then(|id| state.store.get(&id))
        .ok_or_else(|| ApiError::not_found(format!("no session {id}")))
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    let (chunks, images) = state.index.counts();
    Json(json!({
        "status": "ok",
        "documents": state.index.documents().count(),
        "chunks": chunks,
        "images": images,
        "sessions": state.store.len(),
    }))
}

#[derive(Deserialize)]
struct CreateSession {
    condition: String,
}

#[derive(Serialize)]
struct SessionInfo {
    id: Uuid,
    condition: Condition,
    created_at_ms: u64,
    busy: bool,
}

impl SessionInfo {
    fn of(s: &Session) -> Self {
        Self { id: s.id, condition: s.condition, created_at_ms: s.created_at_ms, busy: s.is_busy() }
    }
}

async fn create_session(State(state): State<AppState>, Json(req): Json<CreateSession>) -> ApiResult<impl IntoResponse> {
    let condition: Condition = req.condition.parse().map_err(ApiError::validation)?;
    let s = state.store.create(condition).map_err(ApiError::internal)?;
    tracing::info!(session = %s.id, ?condition, "session created");
    Ok((StatusCode::CREATED, Json(SessionInfo::of(&s))))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionInfo>> {
    let s = session(&state, &id)?;
    Ok(Json(SessionInfo::of(&s)))
}

#[derive(Deserialize)]
struct ChatRequestBody {
    message: String,
}

fn sse_event(e: &StreamEvent) -> Event {
    Event::default().event(e.name()).data(serde_json::to_string(e).expect("stream events serialize"))
}

async fn chat(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<ChatRequestBody>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let s = session(&state, &id)?;
    if s.condition.agent_mode().is_none() {
        return Err(ApiError::condition("chat is not available in the DocSearch condition"));
    }
    let message = req.message.trim().to_string();
    if message.is_empty() {
        return Err(ApiError::validation("message is empty"));
    }
    let guard = s
        .try_begin_turn()
        .ok_or_else(|| ApiError::new(StatusCode::TOO_MANY_REQUESTS, "busy", "a turn is already in progress"))?;

    let (tx, rx) = mpsc::channel(STREAM_BUFFER);
    let ctx = state.agent_context();
    let store = state.store.clone();
    tokio::spawn(async move {
        let _guard = guard;
        let mut agent = s.agent.lock().await;
        let turn = agent.traces.len();
        if let Err(e) = s.append(store.now(), SessionEvent::ChatQuery { turn, message: message.clone() }) {
            tracing::error!(session = %s.id, error = %e, "could not log query");
        }
        let result = run_turn(&mut agent, &message, &ctx, &tx).await;
        let event = match result {
            Ok(outcome) => {
                let trace = agent.traces.last().cloned().expect("a completed turn records its trace");
                SessionEvent::ChatResponse { turn, response: outcome.response, trace }
            }
            Err(e) => SessionEvent::ChatFailed { turn, error: e.to_string() },
        };
        if let Err(e) = s.append(store.now(), event) {
            tracing::error!(session = %s.id, error = %e, "could not log turn outcome");
        }
    });

    let stream = futures::stream::unfold(rx, |mut rx| async move {
        rx.recv().await.map(|e| (Ok::<_, Infallible>(sse_event(&e)), rx))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

#[derive(Deserialize)]
struct SearchBody {
    query: String,
}

async fn search(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<SearchBody>,
) -> ApiResult<impl IntoResponse> {
    let s = session(&state, &id)?;
    if s.condition != Condition::DocSearch {
        return Err(ApiError::condition("search is only available in the DocSearch condition"));
    }
    let resp = doc_search(&req.query, &state.index, state.backend.as_ref(), state.provider.as_ref(), &state.config.docsearch)
        .await
        .map_err(|e| match e {
            DocSearchError::Validation(m) => ApiError::validation(m),
            DocSearchError::Retrieval(e) => ApiError::new(StatusCode::BAD_GATEWAY, "retrieval", e.to_string()),
        })?;
    s.append(
        state.store.now(),
        SessionEvent::Search { query: req.query.trim().to_string(), results: resp.results.len() },
    )
    .map_err(ApiError::internal)?;
    Ok(Json(resp))
}

#[derive(Serialize, Deserialize)]
struct Notes {
    text: String,
}

async fn get_notes(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Notes>> {
    Ok(Json(Notes { text: session(&state, &id)?.notes() }))
}

async fn put_notes(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<Notes>,
) -> ApiResult<StatusCode> {
    let s = session(&state, &id)?;
    let cap = state.config.notes_max_bytes;
    if req.text.len() > cap {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "payload_too_large",
            format!("notes are {} bytes; the limit is {cap}", req.text.len()),
        ));
    }
    s.save_notes(state.store.now(), req.text).map_err(ApiError::internal)?;
    Ok(StatusCode::NO_CONTENT)
}

/// Telemetry the browser reports. Queries, searches and note saves are
/// logged by their own endpoints and cannot be posted here.
#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ClientEvent {
    Heartbeat,
    TabSwitch { tab: Tab },
    CitationClick { doc_id: String, block_ids: Vec<u32> },
}

async fn post_event(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(ev): Json<ClientEvent>,
) -> ApiResult<StatusCode> {
    let s = session(&state, &id)?;
    let event = match ev {
        ClientEvent::Heartbeat => SessionEvent::Heartbeat,
        ClientEvent::TabSwitch { tab } => {
            if tab == Tab::Chat && s.condition == Condition::DocSearch {
                return Err(ApiError::condition("the DocSearch condition has no chat tab"));
            }
            SessionEvent::TabSwitch { tab }
        }
        ClientEvent::CitationClick { doc_id, block_ids } => SessionEvent::CitationClick { doc_id, block_ids },
    };
    s.append(state.store.now(), event).map_err(ApiError::internal)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn get_metrics(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let s = session(&state, &id)?;
    Ok(Json(metrics(&s.log(), &state.config.activity)))
}

async fn get_timing(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let s = session(&state, &id)?;
    let m = metrics(&s.log(), &state.config.activity);
    Ok(Json(timing_state(m.active_ms, &state.config.timing)))
}

async fn get_trace(State(state): State<AppState>, Path((id, turn)): Path<(String, usize)>) -> ApiResult<impl IntoResponse> {
    let s = session(&state, &id)?;
    // waits for a turn in flight, so a trace announced on the stream is readable
    let agent = s.agent.lock().await;
    agent
        .traces
        .iter()
        .find(|t| t.turn == turn)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("no trace for turn {turn}")))
}

async fn list_docs(State(state): State<AppState>) -> Json<serde_json::Value> {
    let docs: Vec<_> = state
        .index
        .documents()
        .map(|d| json!({ "doc_id": d.doc_id, "pages": d.pages, "blocks": d.blocks.len() }))
        .collect();
    Json(json!({ "documents": docs }))
}

#[derive(Serialize)]
struct BlockInfo {
    doc_id: String,
    block_id: u32,
    kind: BlockKind,
    page: u32,
    bbox: BBox,
    #[serde(skip_serializing_if = "Option::is_none")]
    image_url: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    caption: Option<String>,
}

fn parse_block(doc: &str, block: &str) -> ApiResult<u32> {
    block.parse().map_err(|_| ApiError::not_found(format!("no block {doc}/{block}")))
}

async fn get_block(State(state): State<AppState>, Path((doc, block)): Path<(String, String)>) -> ApiResult<Json<BlockInfo>> {
    let id = parse_block(&doc, &block)?;
    let b = state.index.block(&doc, id).ok_or_else(|| ApiError::not_found(format!("no block {doc}/{id}")))?;
    let is_figure = b.kind == BlockKind::Figure;
    Ok(Json(BlockInfo {
        doc_id: doc.clone(),
        block_id: id,
        kind: b.kind,
        page: b.page,
        bbox: b.bbox,
        image_url: (is_figure && state.index.image_bytes(&doc, id).is_some())
            .then(|| format!("/docs/{doc}/blocks/{id}/image")),
        caption: state.index.image_record(&doc, id).map(|r| r.caption.clone()),
    }))
}

fn image_response(img: &StoredImage) -> Response {
    (
        [(header::CONTENT_TYPE, img.mime.clone()), (header::CACHE_CONTROL, "public, max-age=86400".into())],
        Body::from(img.bytes.clone()),
    )
        .into_response()
}

async fn get_block_image(State(state): State<AppState>, Path((doc, block)): Path<(String, String)>) -> ApiResult<Response> {
    let id = parse_block(&doc, &block)?;
    state
        .index
        .image_bytes(&doc, id)
        .map(image_response)
        .ok_or_else(|| ApiError::not_found(format!("no image for block {doc}/{id}")))
}

async fn get_page(State(state): State<AppState>, Path((doc, page)): Path<(String, String)>) -> ApiResult<Response> {
    let n: u32 = page.parse().map_err(|_| ApiError::not_found(format!("no page {doc}/{page}")))?;
    state
        .index
        .page_image(&doc, n)
        .map(image_response)
        .ok_or_else(|| ApiError::not_found(format!("no page image {doc}/{n}")))
}
