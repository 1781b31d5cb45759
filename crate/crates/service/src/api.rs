//! REST surface over the project store. Bodies and responses use the core
//! serializations; model-bound writes run as background jobs.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use storyloom_core::batch_format::BatchFile;
use storyloom_core::bsv::{to_dot, ViewKind};
use storyloom_core::dimensions::ExtractionRequest;
use storyloom_core::oracle::Gateway;
use storyloom_core::player_sim::{ProfileRegistry, SimulationSpec};
use storyloom_core::{BatchId, DimensionId, Rule, StorylineId, Storyworld};

use crate::jobs::JobRegistry;
use crate::project::{HighlightQuery, Position, Project, ProjectError};
use crate::store::{ProjectHandle, ProjectStore, StoreError};

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<ProjectStore>,
    pub jobs: Arc<JobRegistry>,
    pub gateway: Arc<Gateway>,
    pub profiles: Arc<ProfileRegistry>,
    /// When set, every request needs `Authorization: Bearer <token>`.
    pub token: Option<String>,
}

impl AppState {
    pub fn new(store: ProjectStore, gateway: Gateway) -> Self {
        Self {
            store: Arc::new(store),
            jobs: Arc::new(JobRegistry::new()),
            gateway: Arc::new(gateway),
            profiles: Arc::new(ProfileRegistry::default()),
            token: None,
        }
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token;
        self
    }
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::UnknownProject(_) => StatusCode::NOT_FOUND,
            StoreError::Exists(_) => StatusCode::CONFLICT,
            StoreError::Project(p) => return p.into(),
            StoreError::Io { .. } | StoreError::Corrupt { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl From<&ProjectError> for ApiError {
    fn from(e: &ProjectError) -> Self {
        let status = if e.is_not_found() {
            StatusCode::NOT_FOUND
        } else {
            match e {
                ProjectError::DuplicateRule(_) => StatusCode::CONFLICT,
                ProjectError::Dimension(storyloom_core::dimensions::DimensionError::Oracle(_))
                | ProjectError::Session(storyloom_core::runtime::SessionError::Oracle(_)) => StatusCode::BAD_GATEWAY,
                _ => StatusCode::UNPROCESSABLE_ENTITY,
            }
        };
        ApiError(status, e.to_string())
    }
}

impl From<ProjectError> for ApiError {
    fn from(e: ProjectError) -> Self {
        (&e).into()
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

fn handle(state: &AppState, id: &str) -> ApiResult<Arc<ProjectHandle>> {
    Ok(state.store.get(id)?)
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return ApiError(StatusCode::UNAUTHORIZED, "missing or wrong bearer token".into()).into_response();
        }
    }
    next.run(req).await
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/projects", post(create_project))
        .route("/projects/:id", get(get_project))
        .route("/projects/:id/storyworld", get(get_storyworld).put(put_storyworld))
        .route("/projects/:id/rules", get(list_rules).post(create_rule))
        .route("/projects/:id/rules/:rule", get(get_rule).put(put_rule).delete(delete_rule))
        .route("/projects/:id/batches", get(list_batches).post(upload_batch))
        .route("/projects/:id/batches/:batch", get(get_batch))
        .route("/projects/:id/simulate", post(simulate))
        .route("/projects/:id/dimensions", get(list_dimensions).post(extract_dimensions))
        .route("/projects/:id/dimensions/:dim/values", put(edit_values))
        .route("/projects/:id/dimensions/:dim/classify", post(reclassify))
        .route("/projects/:id/dimensions/:dim/assignments/:batch", get(get_assignment))
        .route("/projects/:id/bsv", get(get_bsv))
        .route("/projects/:id/bsv/export.dot", get(get_bsv_dot))
        .route("/projects/:id/panels", get(list_panels).post(create_panel))
        .route("/projects/:id/panels/:a/combine/:b", post(combine_panels))
        .route("/projects/:id/highlight", get(get_highlight))
        .route("/projects/:id/playtest/:session", get(get_session).post(playtest_step))
        .route("/projects/:id/playtest/:session/export", get(export_session))
        .route("/jobs/:id", get(get_job))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateProject {
    project_id: Option<String>,
    storyworld: Option<Storyworld>,
    #[serde(default)]
    rules: Vec<Rule>,
}

async fn create_project(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: CreateProject = if body.is_empty() {
        CreateProject::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| bad_request(e.to_string()))?
    };
    let h = state.store.create(req.project_id.as_deref(), |p| {
        if let Some(sw) = req.storyworld {
            p.set_storyworld(sw)?;
        }
        for r in req.rules {
            p.add_rule(r)?;
        }
        Ok(())
    })?;
    Ok((StatusCode::CREATED, Json(json!({ "project_id": h.snapshot().project_id }))))
}

async fn get_project(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Project>> {
    Ok(Json((*handle(&state, &id)?.snapshot()).clone()))
}

async fn get_storyworld(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Storyworld>> {
    Ok(Json(handle(&state, &id)?.snapshot().storyworld()?.clone()))
}

async fn put_storyworld(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(sw): Json<Storyworld>,
) -> ApiResult<Json<Storyworld>> {
    handle(&state, &id)?.write(|p| p.set_storyworld(sw.clone()))?;
    Ok(Json(sw))
}

async fn list_rules(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Vec<Rule>>> {
    Ok(Json(handle(&state, &id)?.snapshot().rules.clone()))
}

async fn create_rule(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(rule): Json<Rule>,
) -> ApiResult<(StatusCode, Json<Rule>)> {
    handle(&state, &id)?.write(|p| p.add_rule(rule.clone()))?;
    Ok((StatusCode::CREATED, Json(rule)))
}

async fn get_rule(State(state): State<AppState>, Path((id, rule)): Path<(String, String)>) -> ApiResult<Json<Rule>> {
    Ok(Json(handle(&state, &id)?.snapshot().rule(&rule)?.clone()))
}

async fn put_rule(
    State(state): State<AppState>,
    Path((id, rule_id)): Path<(String, String)>,
    Json(rule): Json<Rule>,
) -> ApiResult<Json<Rule>> {
    let h = handle(&state, &id)?;
    h.write(|p| p.update_rule(&rule_id, rule))?;
    Ok(Json(h.snapshot().rule(&rule_id)?.clone()))
}

async fn delete_rule(State(state): State<AppState>, Path((id, rule)): Path<(String, String)>) -> ApiResult<Json<Rule>> {
    Ok(Json(handle(&state, &id)?.write(|p| p.delete_rule(&rule))?))
}

async fn list_batches(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let p = handle(&state, &id)?.snapshot();
    let list: Vec<Value> = p
        .batches
        .iter()
        .map(|b| json!({ "batch_id": b.batch_id, "storylines": b.storylines.len(), "t_max": b.t_max }))
        .collect();
    Ok(Json(Value::Array(list)))
}

async fn get_batch(State(state): State<AppState>, Path((id, batch)): Path<(String, u64)>) -> ApiResult<Json<BatchFile>> {
    let p = handle(&state, &id)?.snapshot();
    Ok(Json(BatchFile::from_storylines(&p.batch(BatchId(batch))?.storylines)))
}

/// Upload answers once the new batch is classified under every dimension.
async fn upload_batch(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let h = handle(&state, &id)?;
    let gateway = state.gateway.clone();
    let outcome = blocking(move || Ok(h.write(|p| p.upload_batch(&body, &gateway))?)).await?;
    Ok((StatusCode::CREATED, Json(json!(outcome))))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateBody {
    storyworld: Option<Storyworld>,
    rules: Option<Vec<Rule>>,
    profiles: Option<Vec<String>>,
    playthroughs_per_request: Option<usize>,
    rounds_per_playthrough: Option<u32>,
    seed: Option<u64>,
}

fn accepted(job: crate::jobs::Job) -> (StatusCode, Json<Value>) {
    (StatusCode::ACCEPTED, Json(json!(job)))
}

async fn simulate(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<SimulateBody>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let h = handle(&state, &id)?;
    let snapshot = h.snapshot();
    let storyworld = match body.storyworld {
        Some(sw) => sw,
        None => snapshot.storyworld()?.clone(),
    };
    let mut spec = SimulationSpec::new(storyworld, body.rules.unwrap_or_else(|| snapshot.rules.clone()));
    if let Some(p) = body.profiles {
        spec.profiles = p;
    }
    if let Some(n) = body.playthroughs_per_request {
        spec.playthroughs_per_request = n;
    }
    if let Some(n) = body.rounds_per_playthrough {
        spec.rounds_per_playthrough = n;
    }
    spec.seed = body.seed.unwrap_or(0);
    spec.validate(&state.profiles).map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    let (gateway, profiles) = (state.gateway.clone(), state.profiles.clone());
    let job = state.jobs.spawn("simulate", &id, move || {
        h.write(|p| p.simulate(&spec, &profiles, &gateway))
            .map(|o| json!(o))
            .map_err(|e| e.to_string())
    });
    Ok(accepted(job))
}

async fn list_dimensions(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(handle(&state, &id)?.snapshot().dimensions)))
}

async fn extract_dimensions(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<ExtractionRequest>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    req.validate().map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    let h = handle(&state, &id)?;
    let gateway = state.gateway.clone();
    let job = state.jobs.spawn("dimensions", &id, move || {
        h.write(|p| p.extract_dimensions(&req, &gateway))
            .map(|o| json!(o))
            .map_err(|e| e.to_string())
    });
    Ok(accepted(job))
}

#[derive(Debug, Deserialize)]
struct ValuesBody {
    values: Vec<String>,
}

async fn edit_values(
    State(state): State<AppState>,
    Path((id, dim)): Path<(String, String)>,
    Json(body): Json<ValuesBody>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let h = handle(&state, &id)?;
    h.snapshot().dimension(&dim)?;
    storyloom_core::validate_values(&body.values)
        .map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    let gateway = state.gateway.clone();
    let job = state.jobs.spawn("edit_value_schema", &id, move || {
        h.write(|p| p.edit_value_schema(&dim, body.values, &gateway))
            .map(|o| json!(o))
            .map_err(|e| e.to_string())
    });
    Ok(accepted(job))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassifyBody {
    batch_id: Option<BatchId>,
}

async fn reclassify(
    State(state): State<AppState>,
    Path((id, dim)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: ClassifyBody = if body.is_empty() {
        ClassifyBody::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| bad_request(e.to_string()))?
    };
    let h = handle(&state, &id)?;
    {
        let p = h.snapshot();
        p.dimension(&dim)?;
        p.batch_or_latest(req.batch_id)?;
    }
    let gateway = state.gateway.clone();
    let job = state.jobs.spawn("classify", &id, move || {
        h.write(|p| p.reclassify(&dim, req.batch_id, &gateway))
            .map(|(assignment, warnings)| json!({ "assignment": assignment, "warnings": warnings }))
            .map_err(|e| e.to_string())
    });
    Ok(accepted(job))
}

async fn get_assignment(
    State(state): State<AppState>,
    Path((id, dim, batch)): Path<(String, String, u64)>,
) -> ApiResult<Json<Value>> {
    let p = handle(&state, &id)?.snapshot();
    let d = p.dimension(&dim)?;
    p.batch(BatchId(batch))?;
    let a = p
        .assignment(&d.id, BatchId(batch))
        .ok_or(ProjectError::UnknownBatch(batch))?;
    Ok(Json(json!(a)))
}

fn param<'a>(q: &'a HashMap<String, String>, name: &'static str) -> ApiResult<&'a str> {
    q.get(name)
        .map(String::as_str)
        .ok_or_else(|| (&ProjectError::MissingParameter(name)).into())
}

fn parse_param<T: std::str::FromStr>(q: &HashMap<String, String>, name: &'static str) -> ApiResult<Option<T>>
where
    T::Err: std::fmt::Display,
{
    q.get(name)
        .map(|v| {
            v.parse::<T>().map_err(|e| {
                bad_request(
                    ProjectError::BadParameter {
                        name,
                        message: e.to_string(),
                    }
                    .to_string(),
                )
            })
        })
        .transpose()
}

fn dims_param(q: &HashMap<String, String>) -> ApiResult<Vec<DimensionId>> {
    Ok(param(q, "dims")?
        .split(',')
        .filter(|s| !s.is_empty())
        .map(DimensionId::new)
        .collect())
}

fn graph_query(
    q: &HashMap<String, String>,
) -> ApiResult<(Vec<DimensionId>, Option<BatchId>, ViewKind, bool)> {
    let dims = dims_param(q)?;
    let batch = parse_param::<u64>(q, "batch")?.map(BatchId);
    let view = match parse_param::<ViewKind>(q, "view")? {
        Some(v) => v,
        None if dims.len() == 2 => ViewKind::Grid2d,
        None => ViewKind::Timeline1d,
    };
    let compare = parse_param::<bool>(q, "compare")?.unwrap_or(false);
    Ok((dims, batch, view, compare))
}

async fn get_bsv(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<Value>> {
    let (dims, batch, view, compare) = graph_query(&q)?;
    let g = handle(&state, &id)?.graph(&dims, batch, view, compare)?;
    Ok(Json(json!(*g)))
}

async fn get_bsv_dot(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let (dims, batch, view, compare) = graph_query(&q)?;
    let g = handle(&state, &id)?.graph(&dims, batch, view, compare)?;
    Ok(([(header::CONTENT_TYPE, "text/vnd.graphviz")], to_dot(&g)).into_response())
}

async fn list_panels(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(handle(&state, &id)?.snapshot().canvas)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PanelBody {
    dimension_ids: Vec<DimensionId>,
    view: Option<ViewKind>,
    #[serde(default)]
    position: Position,
}

async fn create_panel(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<PanelBody>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let panel = handle(&state, &id)?.write(|p| p.add_panel(body.dimension_ids, body.view, body.position))?;
    Ok((StatusCode::CREATED, Json(json!(panel))))
}

async fn combine_panels(
    State(state): State<AppState>,
    Path((id, a, b)): Path<(String, String, String)>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let panel = handle(&state, &id)?.write(|p| p.combine_panels(&a, &b))?;
    Ok((StatusCode::CREATED, Json(json!(panel))))
}

fn highlight_query(q: &HashMap<String, String>) -> ApiResult<HighlightQuery> {
    let batch = parse_param::<u64>(q, "batch")?.map(BatchId);
    Ok(match param(q, "by")? {
        "storyline" => HighlightQuery::Storyline {
            storyline: StorylineId::new(param(q, "storyline")?),
            batch,
        },
        "value" => HighlightQuery::Value {
            dims: dims_param(q)?,
            value: param(q, "value")?.to_string(),
            batch,
        },
        "timestep" => HighlightQuery::Timestep {
            t: parse_param::<u32>(q, "t")?.ok_or_else(|| ApiError::from(&ProjectError::MissingParameter("t")))?,
            batch,
        },
        other => return Err(bad_request(format!("unknown highlight kind {other:?}"))),
    })
}

async fn get_highlight(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<Value>> {
    let query = highlight_query(&q)?;
    Ok(Json(json!(handle(&state, &id)?.snapshot().highlight(&query)?)))
}

async fn get_session(State(state): State<AppState>, Path((id, session)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(handle(&state, &id)?.snapshot().session(&session)?)))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TurnBody {
    player_text: Option<String>,
}

async fn playtest_step(
    State(state): State<AppState>,
    Path((id, session)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let turn: TurnBody = if body.is_empty() {
        TurnBody::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| bad_request(e.to_string()))?
    };
    let h = handle(&state, &id)?;
    let gateway = state.gateway.clone();
    let step = blocking(move || {
        Ok(h.write(|p| p.playtest_step(&session, turn.player_text.as_deref(), &gateway))?)
    })
    .await?;
    Ok(Json(json!(step)))
}

async fn export_session(
    State(state): State<AppState>,
    Path((id, session)): Path<(String, String)>,
) -> ApiResult<Json<BatchFile>> {
    Ok(Json(handle(&state, &id)?.snapshot().session(&session)?.to_batch_file(None)))
}

async fn get_job(State(state): State<AppState>, Path(id): Path<u64>) -> ApiResult<Json<Value>> {
    state
        .jobs
        .get(id)
        .map(|j| Json(json!(j)))
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown job {id}")))
}
