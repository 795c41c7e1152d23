//! HTTP service for on-demand recognition.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::RwLock;
use tower_http::cors::{Any, CorsLayer};

use punner_core::schema::{Granularity, Group};
use punner_harness::ner::LoadedModel;
use punner_harness::HarnessError;
use punner_model::DecodeMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DecodeSpec {
    #[default]
    Greedy,
    Beam { width: usize },
}

impl DecodeSpec {
    pub fn from_width(width: usize) -> Self {
        if width <= 1 {
            DecodeSpec::Greedy
        } else {
            DecodeSpec::Beam { width }
        }
    }

    fn mode(self) -> DecodeMode {
        match self {
            DecodeSpec::Greedy => DecodeMode::Greedy,
            DecodeSpec::Beam { width } => DecodeMode::from_width(width),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NerRequest {
    pub text: String,
    pub entity_types: Vec<String>,
    #[serde(default)]
    pub decode: DecodeSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionOut {
    #[serde(rename = "type")]
    pub type_id: String,
    pub text: String,
    /// Character offsets; absent when the payload was not found in the text.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub end: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NerResponse {
    pub mentions: Vec<MentionOut>,
    pub null_types: Vec<String>,
    pub raw_target: String,
    pub parse_valid: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityTypeOut {
    pub id: String,
    pub name: String,
    pub prompt_name: String,
    pub group: Group,
    pub granularity: Granularity,
    pub datasets: Vec<String>,
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    /// Nothing recognisable in the generation; the response still carries
    /// the raw target.
    Unparseable(NerResponse),
    Unavailable,
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let err = |code: StatusCode, msg: String| (code, Json(serde_json::json!({ "error": msg }))).into_response();
        match self {
            ApiError::BadRequest(m) => err(StatusCode::BAD_REQUEST, m),
            ApiError::Unparseable(r) => (StatusCode::UNPROCESSABLE_ENTITY, Json(r)).into_response(),
            ApiError::Unavailable => err(StatusCode::SERVICE_UNAVAILABLE, "model is loading".into()),
            ApiError::Internal(m) => err(StatusCode::INTERNAL_SERVER_ERROR, m),
        }
    }
}

/// Runs one request against a loaded model. Shared by the service and the
/// `predict` command so both give identical answers.
pub fn answer(model: &LoadedModel, req: &NerRequest, strict: bool) -> Result<NerResponse, ApiError> {
    if req.text.trim().is_empty() {
        return Err(ApiError::BadRequest("text is empty".into()));
    }
    if req.entity_types.is_empty() {
        return Err(ApiError::BadRequest("entity_types is empty".into()));
    }
    let registry = model.codec.registry();
    if let Some(bad) = req.entity_types.iter().find(|t| registry.entity(t).is_none()) {
        return Err(ApiError::BadRequest(format!("unknown entity type `{bad}`")));
    }
    if let DecodeSpec::Beam { width: 0 } = req.decode {
        return Err(ApiError::BadRequest("beam width must be at least 1".into()));
    }
    let rec = model.recognizer().recognize(&req.text, &req.entity_types, req.decode.mode()).map_err(|e| match e {
        HarnessError::Input(m) => ApiError::BadRequest(m),
        HarnessError::Core(c) => ApiError::BadRequest(c.to_string()),
        other => ApiError::Internal(other.to_string()),
    })?;
    let mut out = NerResponse { mentions: Vec::new(), null_types: rec.null_types.clone(), raw_target: rec.raw_target.clone(), parse_valid: rec.parse_valid };
    if strict && !rec.parse_valid {
        out.null_types.clear();
        return Err(ApiError::Unparseable(out));
    }
    if rec.anchors == 0 {
        return Err(ApiError::Unparseable(out));
    }
    out.mentions = rec.mentions.iter().map(|m| MentionOut { type_id: m.type_id.clone(), text: m.text.clone(), start: Some(m.start), end: Some(m.end) }).collect();
    out.mentions.extend(rec.ungroundable.iter().map(|p| MentionOut {
        type_id: p.type_id.clone(),
        text: p.surface().unwrap_or_default().to_string(),
        start: None,
        end: None,
    }));
    Ok(out)
}

/// The loaded model, swapped atomically on reload.
pub struct AppState {
    model: RwLock<Option<Arc<LoadedModel>>>,
    reloading: AtomicBool,
    checkpoint: Option<PathBuf>,
}

impl AppState {
    pub fn new(model: LoadedModel) -> Arc<Self> {
        Arc::new(Self { model: RwLock::new(Some(Arc::new(model))), reloading: AtomicBool::new(false), checkpoint: None })
    }

    pub fn from_checkpoint(path: PathBuf) -> Result<Arc<Self>, HarnessError> {
        let model = LoadedModel::load(&path)?;
        Ok(Arc::new(Self { model: RwLock::new(Some(Arc::new(model))), reloading: AtomicBool::new(false), checkpoint: Some(path) }))
    }

    /// Marks the service unavailable until [`AppState::finish_reload`].
    pub fn begin_reload(&self) {
        self.reloading.store(true, Ordering::SeqCst);
    }

    pub async fn finish_reload(&self, model: Option<LoadedModel>) {
        if let Some(m) = model {
            *self.model.write().await = Some(Arc::new(m));
        }
        self.reloading.store(false, Ordering::SeqCst);
    }

    /// Re-reads the checkpoint the service was started with.
    pub async fn reload(self: &Arc<Self>) -> Result<(), HarnessError> {
        let Some(path) = self.checkpoint.clone() else { return Ok(()) };
        self.begin_reload();
        let loaded = tokio::task::spawn_blocking(move || LoadedModel::load(&path)).await.expect("loader does not panic");
        match loaded {
            Ok(m) => {
                self.finish_reload(Some(m)).await;
                Ok(())
            }
            Err(e) => {
                self.finish_reload(None).await;
                Err(e)
            }
        }
    }

    async fn current(&self) -> Result<Arc<LoadedModel>, ApiError> {
        if self.reloading.load(Ordering::SeqCst) {
            return Err(ApiError::Unavailable);
        }
        self.model.read().await.clone().ok_or(ApiError::Unavailable)
    }
}

#[derive(Debug, Default, Deserialize)]
struct NerQuery {
    #[serde(default)]
    strict: bool,
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn entity_types(State(state): State<Arc<AppState>>) -> Result<Json<Vec<EntityTypeOut>>, ApiError> {
    let model = state.current().await?;
    let codec = &model.codec;
    let registry = codec.registry();
    let out = registry
        .entity_types()
        .iter()
        .map(|e| EntityTypeOut {
            id: e.id.clone(),
            name: registry.display_name(e, codec.style()).to_string(),
            prompt_name: e.prompt_name.clone(),
            group: e.group,
            granularity: e.granularity,
            datasets: registry.datasets().iter().filter(|d| d.entity_ids.contains(&e.id)).map(|d| d.id.clone()).collect(),
        })
        .collect();
    Ok(Json(out))
}

async fn ner(State(state): State<Arc<AppState>>, Query(q): Query<NerQuery>, body: Result<Json<NerRequest>, axum::extract::rejection::JsonRejection>) -> Result<Json<NerResponse>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::BadRequest(e.body_text()))?;
    let model = state.current().await?;
    let resp = tokio::task::spawn_blocking(move || answer(&model, &req, q.strict)).await.map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(Json(resp))
}

pub fn router(state: Arc<AppState>, allow_origin: &str) -> Router {
    let cors = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    let cors = match allow_origin {
        "*" => cors.allow_origin(Any),
        o => cors.allow_origin(HeaderValue::from_str(o).unwrap_or(HeaderValue::from_static("null"))),
    };
    Router::new()
        .route("/api/health", get(health))
        .route("/api/entity-types", get(entity_types))
        .route("/api/ner", post(ner))
        .layer(cors)
        .with_state(state)
}
