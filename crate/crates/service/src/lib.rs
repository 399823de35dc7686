//! HTTP job API over the segmentation pipeline.
//!
//! Every job owns its fields and evolution state. Mutating requests on a job
//! are serialized by the job lock; evolution runs on a blocking thread and
//! publishes immutable copies of the level set for readers.

pub mod job;
pub mod store;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use figac::config::{Mode, PipelineConfig};
use figac::edges::PromptSet;
use figac::io::{self, ContourDoc, RasterType, Sidecar};
use figac::levelset::extract_contour;
use figac::pipeline::{self, Fields, Input, Runner};
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;

use crate::job::{Job, JobCore, JobState, JobView, TransitionError};
use crate::store::Store;

const BODY_LIMIT: usize = 64 << 20;

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    Conflict(String),
    Invalid { error: String, field: Option<String> },
    Internal(String),
}

impl ApiError {
    fn invalid(error: impl ToString, field: impl Into<Option<String>>) -> Self {
        ApiError::Invalid {
            error: error.to_string(),
            field: field.into(),
        }
    }

    fn internal(e: impl ToString) -> Self {
        ApiError::Internal(e.to_string())
    }
}

impl From<figac::Error> for ApiError {
    fn from(e: figac::Error) -> Self {
        let field = e.field().map(str::to_string);
        ApiError::invalid(e, field)
    }
}

impl From<TransitionError> for ApiError {
    fn from(e: TransitionError) -> Self {
        match e {
            TransitionError::Illegal(..) => ApiError::Conflict(e.to_string()),
            TransitionError::Invalid(e) => e.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, json!({ "error": m })),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, json!({ "error": m })),
            ApiError::Invalid { error, field } => {
                (StatusCode::UNPROCESSABLE_ENTITY, json!({ "error": error, "field": field }))
            }
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": m })),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct Inner {
    store: Store,
    slices: RwLock<HashMap<String, Arc<Input>>>,
    jobs: RwLock<HashMap<String, Arc<Job>>>,
}

/// Shared server state; cheap to clone.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// Opens the store at `data_dir` and reloads every persisted slice and job.
    /// Jobs that were running when the process stopped come back paused.
    pub fn open(data_dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let store = Store::open(data_dir)?;
        let mut slices = HashMap::new();
        for id in store.slice_ids()? {
            let (png, sidecar) = store.load_slice(&id)?;
            match io::decode_png(&png, sidecar.as_ref()) {
                Ok(input) => {
                    slices.insert(id, Arc::new(input));
                }
                Err(e) => log::warn!("skipping slice {id}: {e}"),
            }
        }
        let mut jobs = HashMap::new();
        for id in store.job_ids()? {
            match restore_job(&store, &slices, &id) {
                Ok(job) => {
                    jobs.insert(id, Arc::new(job));
                }
                Err(e) => log::warn!("skipping job {id}: {e}"),
            }
        }
        log::info!("loaded {} slices and {} jobs", slices.len(), jobs.len());
        Ok(Self(Arc::new(Inner {
            store,
            slices: RwLock::new(slices),
            jobs: RwLock::new(jobs),
        })))
    }

    fn job(&self, id: &str) -> ApiResult<Arc<Job>> {
        let jobs = self.0.jobs.read().unwrap_or_else(|p| p.into_inner());
        jobs.get(id).cloned().ok_or_else(|| ApiError::NotFound(format!("unknown job {id}")))
    }

    fn slice(&self, id: &str) -> Option<Arc<Input>> {
        let slices = self.0.slices.read().unwrap_or_else(|p| p.into_inner());
        slices.get(id).cloned()
    }
}

fn restore_job(store: &Store, slices: &HashMap<String, Arc<Input>>, id: &str) -> Result<Job, String> {
    let (record, config, phi, snapshots) = store.load_job(id).map_err(|e| e.to_string())?;
    let input = slices
        .get(&record.slice_id)
        .ok_or_else(|| format!("slice {} missing", record.slice_id))?;
    let fields = pipeline::prepare(input, &config).map_err(|e| e.to_string())?;
    let runner = Runner::resume(&fields, &config, phi.clone(), record.iteration).map_err(|e| e.to_string())?;
    let state = match record.state {
        JobState::Running => JobState::Paused,
        s => s,
    };
    let core = JobCore {
        state,
        config,
        fields: Arc::new(fields),
        runner: Some(runner),
        field_version: record.field_version,
        error: record.error,
        phi: Arc::new(phi),
        iteration: record.iteration,
        snapshots: snapshots
            .into_iter()
            .map(|d| (d.iteration, Arc::new(d.polylines)))
            .collect(),
    };
    Ok(Job::new(id.to_string(), record.slice_id, core))
}

/// Builds the router with CORS enabled for any origin.
pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/slices", post(upload_slice))
        .route("/jobs", post(create_job))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/prompts", post(set_prompts))
        .route("/jobs/{id}/run", post(run_job))
        .route("/jobs/{id}/pause", post(pause_job))
        .route("/jobs/{id}/contour", get(get_contour))
        .route("/jobs/{id}/fields/{name}", get(get_field))
        .route("/jobs/{id}/mask", get(get_mask))
        .route("/jobs/{id}/phi", get(get_phi))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)
}

#[derive(Debug, Deserialize)]
struct SliceQuery {
    hu_offset: Option<f64>,
    pixel_spacing: Option<f64>,
}

async fn upload_slice(
    State(app): State<AppState>,
    Query(q): Query<SliceQuery>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let sidecar = match q.hu_offset {
        Some(hu_offset) => {
            let s = Sidecar {
                hu_offset,
                pixel_spacing: q.pixel_spacing,
            };
            // Reuse the sidecar validation.
            Some(Sidecar::from_json(&serde_json::to_vec(&s).map_err(ApiError::internal)?)?)
        }
        None => None,
    };
    let bytes = body.to_vec();
    let input = blocking(move || io::decode_png(&bytes, sidecar.as_ref()).map(|i| (i, bytes)))
        .await?
        .map_err(|e| match e.field() {
            Some(f) => ApiError::invalid(&e, f.to_string()),
            None => ApiError::invalid(format!("not a readable PNG: {e}"), "body".to_string()),
        })?;
    let (input, bytes) = input;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let (w, h) = input.dims();
    app.0.store.save_slice(&id, &bytes, sidecar.as_ref()).map_err(ApiError::internal)?;
    app.0
        .slices
        .write()
        .unwrap_or_else(|p| p.into_inner())
        .insert(id.clone(), Arc::new(input));
    Ok((StatusCode::CREATED, Json(json!({ "slice_id": id, "width": w, "height": h }))))
}

fn parse_config(value: Option<Value>) -> ApiResult<PipelineConfig> {
    let Some(value) = value else {
        return Ok(PipelineConfig::default());
    };
    let bytes = serde_json::to_vec(&value).map_err(ApiError::internal)?;
    PipelineConfig::from_json(&bytes).map_err(|e| {
        let field = e.field().map(str::to_string).unwrap_or_else(|| "config".to_string());
        ApiError::invalid(e, field)
    })
}

async fn create_job(State(app): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<JobView>)> {
    let mut body: Value =
        serde_json::from_slice(&body).map_err(|e| ApiError::invalid(e, "body".to_string()))?;
    let slice_id = body
        .get("slice_id")
        .and_then(Value::as_str)
        .ok_or_else(|| ApiError::invalid("`slice_id` is required", "slice_id".to_string()))?
        .to_string();
    let input = app
        .slice(&slice_id)
        .ok_or_else(|| ApiError::NotFound(format!("unknown slice {slice_id}")))?;
    let config = parse_config(body.get_mut("config").map(Value::take).filter(|v| !v.is_null()))?;

    let cfg = config.clone();
    let (fields, runner) = blocking(move || -> figac::Result<(Fields, Runner)> {
        let fields = pipeline::prepare(&input, &cfg)?;
        let runner = Runner::new(&fields, &cfg)?;
        Ok((fields, runner))
    })
    .await??;

    let id = uuid::Uuid::new_v4().simple().to_string();
    let phi = Arc::new(fields.phi0.clone());
    let core = JobCore {
        state: JobState::FieldsReady,
        config,
        fields: Arc::new(fields),
        runner: Some(runner),
        field_version: 1,
        error: None,
        phi,
        iteration: 0,
        snapshots: Default::default(),
    };
    let job = Arc::new(Job::new(id.clone(), slice_id, core));
    job.persist(&app.0.store).map_err(ApiError::internal)?;
    let view = job.view();
    app.0.jobs.write().unwrap_or_else(|p| p.into_inner()).insert(id, job);
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_job(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<JobView>> {
    Ok(Json(app.job(&id)?.view()))
}

async fn set_prompts(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let job = app.job(&id)?;
    let prompts = PromptSet::from_json(&body).map_err(|e| ApiError::invalid(e, "prompts".to_string()))?;
    let store = app.0.store.clone();
    let version = blocking(move || -> Result<u64, ApiError> {
        let v = job.set_prompts(prompts)?;
        job.persist(&store).map_err(ApiError::internal)?;
        Ok(v)
    })
    .await??;
    Ok(Json(json!({ "field_version": version })))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunRequest {
    /// Iterations to add; by default the remainder up to the configured count.
    iters: Option<usize>,
    /// Respond only after the evolution stops.
    #[serde(default)]
    wait: bool,
}

async fn run_job(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<JobView>)> {
    let job = app.job(&id)?;
    let req: RunRequest = if body.iter().all(u8::is_ascii_whitespace) {
        RunRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::invalid(e, "iters".to_string()))?
    };
    let (runner, config) = job.start()?;
    let iters = req
        .iters
        .unwrap_or_else(|| config.evolution.n_iters.saturating_sub(runner.iter()));
    let store = app.0.store.clone();
    let worker = job.clone();
    let task = tokio::task::spawn_blocking(move || worker.evolve(&store, runner, &config, iters));
    if req.wait {
        task.await.map_err(ApiError::internal)?;
        Ok((StatusCode::OK, Json(job.view())))
    } else {
        Ok((StatusCode::ACCEPTED, Json(job.view())))
    }
}

async fn pause_job(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<JobView>> {
    let job = app.job(&id)?;
    job.request_pause()?;
    Ok(Json(job.view()))
}

#[derive(Debug, Deserialize)]
struct ContourQuery {
    iter: Option<String>,
}

async fn get_contour(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ContourQuery>,
) -> ApiResult<Json<ContourDoc>> {
    let job = app.job(&id)?;
    match q.iter.as_deref() {
        None | Some("latest") => {
            let (iteration, phi) = {
                let c = job.lock();
                (c.iteration, c.phi.clone())
            };
            let polylines = blocking(move || extract_contour(&phi)).await?;
            Ok(Json(ContourDoc { iteration, polylines }))
        }
        Some(s) => {
            let n: usize = s
                .parse()
                .map_err(|_| ApiError::invalid("`iter` must be `latest` or an iteration number", "iter".to_string()))?;
            let c = job.lock();
            let polylines = c
                .snapshots
                .get(&n)
                .ok_or_else(|| ApiError::NotFound(format!("no snapshot at iteration {n}")))?;
            Ok(Json(ContourDoc {
                iteration: n,
                polylines: (**polylines).clone(),
            }))
        }
    }
}

async fn get_field(State(app): State<AppState>, Path((id, name)): Path<(String, String)>) -> ApiResult<Response> {
    let job = app.job(&id)?;
    let (fields, config) = {
        let c = job.lock();
        (c.fields.clone(), c.config.clone())
    };
    let bytes = match name.as_str() {
        "g" => {
            let hi = match config.mode {
                Mode::Figac => 1.0 + config.detector.gamma,
                Mode::Classical => 1.0,
            };
            blocking(move || io::encode_field_png(&fields.g, (0.0, hi))).await?
        }
        "beta" => {
            if fields.beta.is_none() {
                return Err(ApiError::NotFound("no distance factor in classical mode".into()));
            }
            blocking(move || io::encode_field_png(fields.beta.as_ref().expect("checked").field(), (0.0, 1.0))).await?
        }
        other => return Err(ApiError::NotFound(format!("unknown field {other}"))),
    };
    Ok(png(bytes.map_err(ApiError::internal)?))
}

async fn get_mask(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let job = app.job(&id)?;
    let (fields, config, phi, iteration, converged) = {
        let c = job.lock();
        let converged = c.runner.as_ref().and_then(|r| r.converged_at);
        (c.fields.clone(), c.config.clone(), c.phi.clone(), c.iteration, converged)
    };
    let bytes = blocking(move || -> figac::Result<Vec<u8>> {
        let res = pipeline::finalize(&fields, &config, (*phi).clone(), iteration, converged)?;
        io::encode_mask_png(&res.mask)
    })
    .await??;
    Ok(png(bytes))
}

/// Latest level set as an f64 raster.
async fn get_phi(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let job = app.job(&id)?;
    let phi = job.lock().phi.clone();
    let bytes = blocking(move || io::encode_raster(&phi, RasterType::F64)).await?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}
