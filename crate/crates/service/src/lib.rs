//! HTTP review service: parcel listings, index time series, rendered chips
//! and photo-interpretation verdicts over the artifacts of an output
//! directory.
//!
//! Everything is read-only except `POST /api/parcels/{id}/annotation`,
//! which appends to `annotations.jsonl` under a single writer lock.

pub mod chip;
pub mod data;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderName, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, NaiveDate, TimeDelta, Utc};
use eomwatch_core::evaluation::{
    append_annotation_log, distribution_tables, format_percent, photo_interp_recall, read_annotation_log,
    resolve_annotations, Annotation, DistributionRow, Season,
};
use eomwatch_core::indices::series_names;
use eomwatch_core::pipeline::RunConfig;
use serde::{Deserialize, Serialize};
use tower_http::cors::{Any, CorsLayer};
use tower_http::services::ServeDir;

use crate::chip::{render_chip, Layer};
use crate::data::ReviewData;

pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Server(#[source] std::io::Error),
    #[error(transparent)]
    Core(#[from] eomwatch_core::Error),
}

pub struct AppState {
    cfg: RunConfig,
    data: RwLock<Option<Arc<ReviewData>>>,
    annotations: RwLock<Arc<Vec<Annotation>>>,
    writer: tokio::sync::Mutex<()>,
}

impl AppState {
    /// Reads the annotation log eagerly; extraction artifacts are loaded on
    /// first use so the service can start before `extract` has run.
    pub fn new(cfg: RunConfig) -> eomwatch_core::Result<Self> {
        let log = read_annotation_log(&cfg.annotation_log())?;
        Ok(AppState {
            data: RwLock::new(ReviewData::load(&cfg).ok().map(Arc::new)),
            annotations: RwLock::new(Arc::new(log)),
            writer: tokio::sync::Mutex::new(()),
            cfg,
        })
    }

    fn data(&self) -> Result<Arc<ReviewData>, ApiError> {
        if let Some(d) = self.data.read().expect("data lock").as_ref() {
            return Ok(d.clone());
        }
        let loaded = ReviewData::load(&self.cfg).map_err(|e| {
            ApiError::new(StatusCode::SERVICE_UNAVAILABLE, format!("extraction artifacts unavailable: {e}"))
        })?;
        let loaded = Arc::new(loaded);
        *self.data.write().expect("data lock") = Some(loaded.clone());
        Ok(loaded)
    }

    fn annotations(&self) -> Arc<Vec<Annotation>> {
        self.annotations.read().expect("annotation lock").clone()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, what)
    }

    fn bad_request(what: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, what)
    }

    fn internal(e: impl ToString) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Serialize, Deserialize)]
pub struct ParcelSummary {
    pub parcel_id: String,
    pub crop_category: String,
    pub treated: bool,
    pub anchor_date: NaiveDate,
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    pub season: Season,
    /// `annotated`, `pending` or `control`.
    pub status: String,
    pub change_visible: Option<bool>,
    pub observations: usize,
}

async fn list_parcels(State(state): State<Arc<AppState>>) -> ApiResult<Json<Vec<ParcelSummary>>> {
    let data = state.data()?;
    let annotations = state.annotations();
    let latest = resolve_annotations(&annotations);
    let mut out = Vec::with_capacity(data.parcels.len());
    for p in data.parcels.sorted() {
        let w = data
            .windows
            .get(&p.parcel_id)
            .ok_or_else(|| ApiError::internal(format!("parcel {} missing from windows.csv", p.parcel_id)))?;
        let verdict = latest.get(p.parcel_id.as_str()).map(|a| a.change_visible);
        let status = match (p.treated, verdict) {
            (false, _) => "control",
            (true, Some(_)) => "annotated",
            (true, None) => "pending",
        };
        out.push(ParcelSummary {
            parcel_id: p.parcel_id.clone(),
            crop_category: p.crop_category.as_str().to_string(),
            treated: p.treated,
            anchor_date: w.window.anchor_date,
            window_start: w.window.start,
            window_end: w.window.end,
            season: Season::from_date(w.window.anchor_date),
            status: status.to_string(),
            change_visible: verdict,
            observations: data.series.get(&p.parcel_id).map_or(0, |s| s.observations.len()),
        });
    }
    Ok(Json(out))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TimeseriesPoint {
    pub date: NaiveDate,
    pub valid_fraction: f64,
    pub values: BTreeMap<String, Option<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Timeseries {
    pub parcel_id: String,
    pub treated: bool,
    pub anchor_date: NaiveDate,
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    pub series: Vec<TimeseriesPoint>,
}

async fn timeseries(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Timeseries>> {
    let data = state.data()?;
    let parcel = data.parcels.get(&id).ok_or_else(|| ApiError::not_found(format!("unknown parcel {id}")))?;
    let window = &data.windows.get(&id).ok_or_else(|| ApiError::not_found(format!("no window for parcel {id}")))?.window;
    let names = series_names();
    let series = data
        .series
        .get(&id)
        .map(|s| {
            s.observations
                .iter()
                .map(|o| TimeseriesPoint {
                    date: o.date,
                    valid_fraction: o.valid_fraction,
                    values: names.iter().cloned().zip(o.values.series()).collect(),
                })
                .collect()
        })
        .unwrap_or_default();
    Ok(Json(Timeseries {
        parcel_id: id,
        treated: parcel.treated,
        anchor_date: window.anchor_date,
        window_start: window.start,
        window_end: window.end,
        series,
    }))
}

#[derive(Debug, Deserialize)]
struct ChipQuery {
    date: Option<String>,
    layer: Option<String>,
}

async fn chip(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ChipQuery>,
) -> ApiResult<Response> {
    let layer: Layer = q.layer.as_deref().unwrap_or("").parse().map_err(ApiError::bad_request)?;
    let date_text = q.date.ok_or_else(|| ApiError::bad_request("missing date=YYYY-MM-DD"))?;
    let date = NaiveDate::parse_from_str(&date_text, "%Y-%m-%d")
        .map_err(|e| ApiError::bad_request(format!("bad date {date_text:?}: {e}")))?;
    let data = state.data()?;
    let parcel = data.parcels.get(&id).ok_or_else(|| ApiError::not_found(format!("unknown parcel {id}")))?.clone();
    if !data.scenes.contains_key(&date) {
        return Err(ApiError::not_found(format!("no scene acquired on {date}")));
    }
    let rendered = tokio::task::spawn_blocking(move || -> ApiResult<_> {
        let scenes = data.scenes_on(date).map_err(ApiError::internal)?;
        Ok(scenes.iter().find_map(|s| render_chip(s, &parcel, layer)))
    })
    .await
    .map_err(ApiError::internal)??;
    let chip = rendered.ok_or_else(|| ApiError::not_found(format!("no scene on {date} covers parcel {id}")))?;
    Ok((
        [
            (header::CONTENT_TYPE, HeaderValue::from_static("image/png")),
            (HeaderName::from_static("x-chip-layer"), HeaderValue::from_static(layer.as_str())),
            (HeaderName::from_static("x-chip-colormap"), HeaderValue::from_static(chip.meta.colormap)),
            (HeaderName::from_static("x-chip-value-range"), json_header(&chip.meta.value_range)),
            (HeaderName::from_static("x-chip-window"), json_header(&chip.meta.window)),
        ],
        chip.to_png(),
    )
        .into_response())
}

fn json_header<T: Serialize>(v: &T) -> HeaderValue {
    HeaderValue::from_str(&serde_json::to_string(v).expect("plain data serialises")).expect("ASCII JSON")
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationRequest {
    change_visible: bool,
    annotator: String,
}

async fn annotate(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Annotation>> {
    let req: AnnotationRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("malformed annotation body: {e}")))?;
    let annotator = req.annotator.trim();
    if annotator.is_empty() {
        return Err(ApiError::bad_request("annotator must not be empty"));
    }
    let data = state.data()?;
    let parcel = data.parcels.get(&id).ok_or_else(|| ApiError::not_found(format!("unknown parcel {id}")))?;
    if !parcel.treated {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("parcel {id} is a control; only treated parcels are annotated"),
        ));
    }

    let _guard = state.writer.lock().await;
    let current = state.annotations();
    // Strictly increasing timestamps keep last-write-wins unambiguous.
    let floor = current.iter().map(|a| a.timestamp).max().map(|t| t + TimeDelta::microseconds(1));
    let now = Utc::now();
    let timestamp: DateTime<Utc> = floor.map_or(now, |f| f.max(now));
    let record = Annotation {
        parcel_id: id,
        change_visible: req.change_visible,
        annotator: annotator.to_string(),
        timestamp,
    };
    append_annotation_log(&state.cfg.annotation_log(), &record).map_err(ApiError::internal)?;
    let mut next = (*current).clone();
    next.push(record.clone());
    *state.annotations.write().expect("annotation lock") = Arc::new(next);
    Ok(Json(record))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PhotoInterpretationStats {
    pub treated: usize,
    pub annotated: usize,
    pub visible: usize,
    /// `None` until at least one parcel is annotated.
    pub recall: Option<f64>,
    pub recall_display: Option<String>,
    pub coverage: f64,
    pub partial: bool,
    pub by_category: Vec<DistributionRow>,
    pub by_season: Vec<DistributionRow>,
    pub notes: Vec<String>,
}

async fn stats(State(state): State<Arc<AppState>>) -> ApiResult<Json<PhotoInterpretationStats>> {
    let data = state.data()?;
    let annotations = state.annotations();
    let pi = photo_interp_recall(&annotations, &data.parcels).map_err(ApiError::internal)?;
    let tables = distribution_tables(&annotations, &data.parcels, &data.events).map_err(ApiError::internal)?;
    let recall = (pi.annotated > 0).then_some(pi.recall);
    Ok(Json(PhotoInterpretationStats {
        treated: pi.treated,
        annotated: pi.annotated,
        visible: pi.visible,
        recall,
        recall_display: recall.map(format_percent),
        coverage: pi.coverage,
        partial: pi.partial,
        by_category: tables.by_category,
        by_season: tables.by_season,
        notes: tables.notes,
    }))
}

/// API routes plus, when given, a static directory served at `/`.
pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE])
        .expose_headers([
            HeaderName::from_static("x-chip-layer"),
            HeaderName::from_static("x-chip-colormap"),
            HeaderName::from_static("x-chip-value-range"),
            HeaderName::from_static("x-chip-window"),
        ]);
    let api = Router::new()
        .route("/api/parcels", get(list_parcels))
        .route("/api/parcels/{id}/timeseries", get(timeseries))
        .route("/api/parcels/{id}/chip", get(chip))
        .route("/api/parcels/{id}/annotation", post(annotate))
        .route("/api/stats/photo-interpretation", get(stats))
        .with_state(state);
    let app = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    app.layer(cors)
}

/// Bind `0.0.0.0:port` and serve until the process is interrupted.
pub async fn serve(cfg: RunConfig, port: u16, static_dir: Option<PathBuf>) -> Result<(), ServeError> {
    let state = Arc::new(AppState::new(cfg)?);
    let addr = SocketAddr::from(([0, 0, 0, 0], port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServeError::Bind { addr, source })?;
    eprintln!("review service listening on http://{addr}");
    axum::serve(listener, router(state, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(ServeError::Server)
}
