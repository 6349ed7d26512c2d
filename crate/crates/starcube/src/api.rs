//! HTTP server: catalog, dimension members, queries, navigation and admin jobs.
//!
//! Readers clone the current `Arc<State>` and run against it; admin jobs build
//! a new state on the side and swap it in, so a query sees exactly one epoch.

use std::collections::BTreeMap;
use std::net::{Ipv4Addr, SocketAddr};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State as AxState};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use starcube_core::nav::{NavError, NavState};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::pipeline::{persist, run_pipeline, write_report, EtlReport};
use crate::query_doc::{execute, DocError, ErrorBody, MemberDoc, QueryRequest, QueryResponse};
use crate::state::{State, WarehouseDir};

pub const DEFAULT_PORT: u16 = 8741;

/// The published request/response schema.
pub const API_SCHEMA: &str = include_str!("../../../schema/api.schema.json");

const MAX_PAGE: usize = 1000;

/// An error response: status and `{error, field?, detail}` body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, field: Option<String>, detail: impl Into<String>) -> Self {
        ApiError { status, body: ErrorBody { error: error.into(), field, detail: detail.into() } }
    }

    fn bad(field: Option<&str>, detail: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", field.map(String::from), detail)
    }

    fn not_found(field: Option<&str>, detail: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", field.map(String::from), detail)
    }

    fn internal(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", None, detail)
    }
}

impl From<DocError> for ApiError {
    fn from(e: DocError) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, body: e.body() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    EtlRun,
    RefreshViews,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: u64,
    pub kind: JobKind,
    pub status: JobState,
    /// Warehouse epoch when the job started, then when it ended.
    pub epoch: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub refreshed: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub report: Option<EtlReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<ErrorBody>,
}

/// Shared server state.
#[derive(Debug, Default)]
pub struct Api {
    /// `None` while the warehouse is loading.
    state: RwLock<Option<Arc<State>>>,
    busy: AtomicBool,
    jobs: Mutex<BTreeMap<u64, JobStatus>>,
    next_job: AtomicU64,
    pipeline: Option<PipelineConfig>,
    dir: Option<WarehouseDir>,
}

/// Releases the admin lock when dropped, even if the job panics.
struct AdminGuard(Arc<Api>);

impl Drop for AdminGuard {
    fn drop(&mut self) {
        self.0.busy.store(false, Ordering::Release);
    }
}

impl Api {
    pub fn new(state: State) -> Self {
        let api = Api::default();
        api.set_state(state);
        api
    }

    /// A server whose warehouse is still loading; data endpoints answer 503.
    pub fn loading() -> Self {
        Api::default()
    }

    /// The pipeline run by `POST /admin/etl-run`.
    pub fn with_pipeline(mut self, cfg: PipelineConfig) -> Self {
        self.pipeline = Some(cfg);
        self
    }

    /// Directory that admin jobs persist into.
    pub fn with_dir(mut self, dir: WarehouseDir) -> Self {
        self.dir = Some(dir);
        self
    }

    pub fn set_state(&self, state: State) {
        *self.state.write().expect("state lock") = Some(Arc::new(state));
    }

    pub fn current(&self) -> Option<Arc<State>> {
        self.state.read().expect("state lock").clone()
    }

    fn ready(&self) -> std::result::Result<Arc<State>, ApiError> {
        self.current()
            .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "loading", None, "warehouse is loading"))
    }

    pub fn job(&self, id: u64) -> Option<JobStatus> {
        self.jobs.lock().expect("jobs lock").get(&id).cloned()
    }

    fn record(&self, job: &JobStatus) {
        self.jobs.lock().expect("jobs lock").insert(job.id, job.clone());
    }

    fn acquire(self: &Arc<Self>) -> std::result::Result<AdminGuard, ApiError> {
        self.busy
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .map(|_| AdminGuard(self.clone()))
            .map_err(|_| ApiError::new(StatusCode::CONFLICT, "conflict", None, "an admin job is already running"))
    }

    fn new_job(&self, kind: JobKind, epoch: u64) -> JobStatus {
        let id = self.next_job.fetch_add(1, Ordering::Relaxed) + 1;
        JobStatus { id, kind, status: JobState::Running, epoch, refreshed: None, report: None, error: None }
    }

    fn run_etl(&self, mut job: JobStatus, cfg: &PipelineConfig, base: &State) -> JobStatus {
        let failed = |e: &Error| Some(ErrorBody { error: "internal".into(), field: None, detail: e.to_string() });
        match run_pipeline(cfg, base) {
            Ok(out) => {
                let saved = self.dir.as_ref().map_or(Ok(()), |d| persist(d, cfg, &out));
                job.epoch = out.state.wh.epoch();
                job.report = Some(out.report.clone());
                match saved {
                    Ok(()) => {
                        if out.report.committed {
                            self.set_state(out.state);
                        }
                        job.status = JobState::Succeeded;
                    }
                    Err(e) => {
                        job.epoch = base.wh.epoch();
                        job.status = JobState::Failed;
                        job.error = failed(&e);
                    }
                }
            }
            Err(Error::Etl { error, report }) => {
                if let Some(d) = &self.dir {
                    // best effort: the run failed either way
                    let _ = write_report(d, &report);
                }
                job.status = JobState::Failed;
                job.error = failed(&error);
                job.report = Some(*report);
            }
            Err(e) => {
                job.status = JobState::Failed;
                job.error = failed(&e);
            }
        }
        job
    }
}

pub fn router(api: Arc<Api>) -> Router {
    Router::new()
        .route("/catalog", get(catalog))
        .route("/schema", get(schema))
        .route("/dimensions/{name}/members", get(members))
        .route("/query", post(query))
        .route("/navigate", post(navigate))
        .route("/admin/refresh-views", post(refresh_views))
        .route("/admin/etl-run", post(etl_run))
        .route("/admin/jobs/{id}", get(job))
        .fallback(|| async { ApiError::not_found(None, "no such endpoint") })
        .with_state(api)
}

/// Serves on loopback until ctrl-c.
pub async fn serve(api: Arc<Api>, port: u16) -> Result<()> {
    let addr = SocketAddr::from((Ipv4Addr::LOCALHOST, port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Io { path: addr.to_string().into(), source: e })?;
    eprintln!("listening on http://{addr}");
    axum::serve(listener, router(api))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::Io { path: addr.to_string().into(), source: e })
}

async fn schema() -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "application/schema+json")], API_SCHEMA)
}

#[derive(Serialize)]
struct Catalog {
    epoch: u64,
    fact: FactDoc,
    dimensions: Vec<DimensionDoc>,
    views: Vec<ViewDoc>,
}

#[derive(Serialize)]
struct FactDoc {
    name: String,
    rows: usize,
    keys: Vec<KeyDoc>,
    measures: Vec<MeasureDoc>,
}

#[derive(Serialize)]
struct KeyDoc {
    dimension: String,
    column: String,
}

#[derive(Serialize)]
struct MeasureDoc {
    name: String,
    aggregator: String,
    unit: String,
    queryable: Vec<String>,
}

#[derive(Serialize)]
struct DimensionDoc {
    name: String,
    members: usize,
    attributes: Vec<AttributeDoc>,
    levels: Vec<LevelDoc>,
}

#[derive(Serialize)]
struct AttributeDoc {
    name: String,
    kind: &'static str,
}

#[derive(Serialize)]
struct LevelDoc {
    name: String,
    ordinal: usize,
    key: String,
    label: String,
    members: usize,
}

#[derive(Serialize)]
struct ViewDoc {
    name: String,
    grouping: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    built_epoch: Option<u64>,
    stale: bool,
    cells: usize,
    rewrite: bool,
}

async fn catalog(AxState(api): AxState<Arc<Api>>) -> ApiResult<Catalog> {
    let state = api.ready()?;
    let wh = &state.wh;
    let schema = wh.schema();
    let fact = FactDoc {
        name: schema.fact.name.clone(),
        rows: wh.fact_count(),
        keys: schema
            .fact
            .dimension_keys
            .iter()
            .map(|k| KeyDoc { dimension: k.dimension.clone(), column: k.column.clone() })
            .collect(),
        measures: schema
            .fact
            .measures
            .iter()
            .map(|m| MeasureDoc {
                name: m.name.clone(),
                aggregator: m.aggregator.clone(),
                unit: m.unit.clone(),
                queryable: ["sum", "count", "average"].iter().map(|a| format!("{a}({})", m.name)).collect(),
            })
            .collect(),
    };
    let dimensions = schema
        .dimensions
        .iter()
        .zip(wh.dimensions())
        .map(|(def, table)| DimensionDoc {
            name: def.name.clone(),
            members: table.member_count(),
            attributes: def
                .attributes
                .iter()
                .map(|a| AttributeDoc { name: a.name.clone(), kind: a.kind.as_str() })
                .collect(),
            levels: def
                .levels
                .iter()
                .zip(table.levels())
                .map(|(l, idx)| LevelDoc {
                    name: l.name.clone(),
                    ordinal: l.ordinal,
                    key: l.key_attribute.clone(),
                    label: l.label_attribute.clone(),
                    members: idx.cardinality() - 1,
                })
                .collect(),
        })
        .collect();
    let views = state
        .views
        .status(schema, wh.epoch())
        .into_iter()
        .map(|s| ViewDoc {
            name: s.name,
            grouping: s.grouping,
            built_epoch: s.built_epoch,
            stale: s.stale,
            cells: s.cells,
            rewrite: s.rewrite_enabled,
        })
        .collect();
    Ok(Json(Catalog { epoch: wh.epoch(), fact, dimensions, views }))
}

#[derive(Debug, Deserialize)]
pub struct MembersParams {
    level: Option<String>,
    parent: Option<String>,
    #[serde(default)]
    offset: usize,
    limit: Option<usize>,
}

#[derive(Serialize)]
struct MemberPage {
    dimension: String,
    level: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    parent: Option<String>,
    total: usize,
    offset: usize,
    members: Vec<MemberDoc>,
}

async fn members(
    AxState(api): AxState<Arc<Api>>,
    Path(name): Path<String>,
    params: std::result::Result<Query<MembersParams>, QueryRejection>,
) -> ApiResult<MemberPage> {
    let Query(p) = params.map_err(|e| ApiError::bad(None, e.body_text()))?;
    let state = api.ready()?;
    let (_, table) = state
        .wh
        .dimension_named(&name)
        .map_err(|_| ApiError::not_found(Some("name"), format!("unknown dimension '{name}'")))?;
    let l = match &p.level {
        None => 0,
        Some(level) => table
            .level_index(level)
            .ok_or_else(|| ApiError::not_found(Some("level"), format!("dimension '{name}' has no level '{level}'")))?,
    };
    let index = table.level(l);
    let mut ids: Vec<u32> = match &p.parent {
        None => (1..index.cardinality() as u32).collect(),
        Some(parent) => {
            let missing = || {
                ApiError::not_found(
                    Some("parent"),
                    format!("'{parent}' is not a parent member of level '{}'", index.name()),
                )
            };
            if l + 1 >= table.levels().len() {
                return Err(missing());
            }
            let pid = table.level(l + 1).id(parent).filter(|&id| id != 0).ok_or_else(missing)?;
            table.children(l, pid)
        }
    };
    ids.sort_by(|&a, &b| index.key(a).cmp(index.key(b)));
    let limit = p.limit.unwrap_or(100).min(MAX_PAGE);
    let members = ids
        .iter()
        .skip(p.offset)
        .take(limit)
        .map(|&id| MemberDoc { key: index.key(id).to_string(), label: index.label(id).to_string() })
        .collect();
    Ok(Json(MemberPage {
        dimension: table.name().to_string(),
        level: index.name().to_string(),
        parent: p.parent,
        total: ids.len(),
        offset: p.offset,
        members,
    }))
}

async fn query(AxState(api): AxState<Arc<Api>>, body: String) -> ApiResult<QueryResponse> {
    let state = api.ready()?;
    let req = QueryRequest::from_json(&body)?;
    tokio::task::spawn_blocking(move || {
        let (grid, ms) = execute(&state.engine(), &req)?;
        Ok(Json(QueryResponse::from_grid(&state.wh, &grid, req.echo.clone(), ms)))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NavAction {
    RollUp,
    DrillDown,
    Slice,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NavigateRequest {
    pub query: QueryRequest,
    pub action: NavAction,
    pub dimension: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub member: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NavigateResponse {
    pub query: QueryRequest,
}

/// Applies one navigation step to a query document and returns the next one.
async fn navigate(AxState(api): AxState<Arc<Api>>, body: String) -> ApiResult<NavigateResponse> {
    let state = api.ready()?;
    let req: NavigateRequest = serde_json::from_str(&body).map_err(|e| ApiError::bad(None, e.to_string()))?;
    let wh = &state.wh;
    let query = req.query.to_query(wh).map_err(|e| {
        let field = e.field.map(|f| format!("query.{f}"));
        ApiError { status: StatusCode::BAD_REQUEST, body: DocError { field, detail: e.detail }.body() }
    })?;
    let mut nav = NavState::new(query);
    let required = |v: &Option<String>, field: &str| {
        v.clone().ok_or_else(|| ApiError::bad(Some(field), format!("'{field}' is required for this action")))
    };
    let step = match req.action {
        NavAction::RollUp => nav.roll_up(wh, &req.dimension),
        NavAction::DrillDown => nav.drill_down(wh, &req.dimension, req.anchor.as_deref()),
        NavAction::Slice => {
            let (level, member) = (required(&req.level, "level")?, required(&req.member, "member")?);
            nav.slice(wh, &req.dimension, &level, &member)
        }
    };
    step.map_err(|e| {
        let field = match e {
            NavError::BadAnchor { .. } => "anchor",
            NavError::Store(_) if req.action == NavAction::Slice => "member",
            _ => "dimension",
        };
        ApiError::bad(Some(field), e.to_string())
    })?;
    let mut next = QueryRequest::from_query(wh, &nav.current);
    next.force = req.query.force;
    next.echo = req.query.echo;
    Ok(Json(NavigateResponse { query: next }))
}

async fn refresh_views(AxState(api): AxState<Arc<Api>>) -> ApiResult<JobStatus> {
    let base = api.ready()?;
    let guard = api.acquire()?;
    let api2 = api.clone();
    tokio::task::spawn_blocking(move || {
        // re-read under the lock: an ETL job may have swapped the state meanwhile
        let base = api2.current().unwrap_or(base);
        let mut job = api2.new_job(JobKind::RefreshViews, base.wh.epoch());
        let mut next = (*base).clone();
        match next.views.refresh_all_stale(&next.wh) {
            Ok(names) => {
                let saved = match (&api2.dir, names.is_empty()) {
                    (Some(d), false) => d.save_views(&next),
                    _ => Ok(()),
                };
                match saved {
                    Ok(()) => {
                        if !names.is_empty() {
                            api2.set_state(next);
                        }
                        job.status = JobState::Succeeded;
                        job.refreshed = Some(names);
                    }
                    Err(e) => {
                        job.status = JobState::Failed;
                        job.error = Some(ErrorBody { error: "internal".into(), field: None, detail: e.to_string() });
                    }
                }
            }
            Err(e) => {
                job.status = JobState::Failed;
                job.error = Some(ErrorBody { error: "internal".into(), field: None, detail: e.to_string() });
            }
        }
        drop(guard);
        api2.record(&job);
        Ok(Json(job))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
}

async fn etl_run(AxState(api): AxState<Arc<Api>>) -> std::result::Result<(StatusCode, Json<JobStatus>), ApiError> {
    api.ready()?;
    let cfg =
        api.pipeline.clone().ok_or_else(|| ApiError::bad(None, "the server was started without a pipeline config"))?;
    let guard = api.acquire()?;
    let base = api.ready()?;
    let job = api.new_job(JobKind::EtlRun, base.wh.epoch());
    api.record(&job);
    let api2 = api.clone();
    let running = job.clone();
    tokio::task::spawn_blocking(move || {
        let done = api2.run_etl(running, &cfg, &base);
        // release before publishing, so a poller seeing the result may start the next job
        drop(guard);
        api2.record(&done);
    });
    Ok((StatusCode::ACCEPTED, Json(job)))
}

async fn job(AxState(api): AxState<Arc<Api>>, Path(id): Path<String>) -> ApiResult<JobStatus> {
    let id: u64 = id.parse().map_err(|_| ApiError::not_found(Some("id"), format!("no job '{id}'")))?;
    api.job(id).map(Json).ok_or_else(|| ApiError::not_found(Some("id"), format!("no job {id}")))
}
