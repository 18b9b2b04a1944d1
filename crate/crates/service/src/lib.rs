//! HTTP facade over a loaded model artifact and the allocator.
//!
//! Scores are computed once at startup; every request works from that
//! immutable snapshot, so identical requests get identical bodies.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::header::{HeaderName, HeaderValue, CONTENT_TYPE};
use axum::http::{Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, CorsLayer};

use foodsec_core::allocator::{build_problem, solve, AllocationResult, ScoredCandidate, Solver, UtilityMode};
use foodsec_core::fairness::{apply_thresholds, calibrate_group_thresholds, positive_rates, GroupThresholds};
use foodsec_core::pipeline::{scored_candidates, ModelArtifact};
use foodsec_core::text::load_embeddings;
use foodsec_core::{Dataset, DistrictRecord, Error, Group, IndicatorSet};

const SERVER_TIMING: HeaderName = HeaderName::from_static("server-timing");

/// Everything a request may read. Built once, never mutated.
pub struct AppState {
    artifact: ModelArtifact,
    district_names: Vec<String>,
    candidates: Vec<ScoredCandidate>,
    district_ids: Vec<u32>,
    /// Evaluation report served verbatim by `/v1/metrics`.
    report: Option<String>,
}

impl AppState {
    pub fn new(artifact: ModelArtifact, data: &Dataset, report: Option<String>) -> foodsec_core::Result<Self> {
        let candidates = scored_candidates(&artifact, data)?;
        Ok(AppState {
            artifact,
            district_names: (0..data.num_districts).map(|d| data.district_name(d)).collect(),
            district_ids: data.records.iter().map(|r| r.district_id).collect(),
            candidates,
            report,
        })
    }

    /// Load the artifact, dataset and optional report from disk.
    pub fn load(
        model: &Path,
        data: &Path,
        report: Option<&Path>,
        embeddings: Option<&Path>,
    ) -> foodsec_core::Result<Self> {
        let mut artifact = ModelArtifact::load(model)?;
        if let Some(p) = embeddings {
            artifact = artifact.with_embeddings(Arc::new(load_embeddings(p)?))?;
        }
        let ds = Dataset::load(data)?;
        let report = match report {
            Some(p) => {
                let body = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str::<serde_json::Value>(&body)?;
                Some(body)
            }
            None => None,
        };
        Self::new(artifact, &ds, report)
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    pub budget: f64,
    #[serde(default)]
    pub floors: BTreeMap<Group, usize>,
    /// Recalibrate group thresholds to this parity gap before choosing
    /// eligible records; the artifact's thresholds otherwise.
    #[serde(default)]
    pub target_gap: Option<f64>,
    #[serde(default)]
    pub utility_mode: UtilityMode,
    #[serde(default)]
    pub solver: Solver,
    #[serde(default)]
    pub cost_resolution: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RankedRecord {
    pub rank: usize,
    pub record_id: String,
    pub district: String,
    pub group: Group,
    pub score: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WhatIfRow {
    #[serde(flatten)]
    pub record: RankedRecord,
    /// Classified insecure under the request's thresholds, so eligible.
    pub flagged: bool,
    pub selected: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WhatIfResponse {
    pub allocation: AllocationResult,
    /// Gap between the groups' selection rates (selected / group size).
    pub parity_gap: f64,
    /// Gap between the groups' flag rates under `thresholds`.
    pub decision_parity_gap: f64,
    pub thresholds: GroupThresholds,
    pub eligible: usize,
    pub ranked: Vec<WhatIfRow>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    #[serde(default)]
    pub record_id: Option<String>,
    pub district_id: u32,
    pub group: Group,
    pub indicators: IndicatorSet,
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PredictResponse {
    pub score: f64,
    pub threshold: f64,
    pub insecure: bool,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    group: Option<Group>,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
            group: None,
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, group) = match &e {
            Error::InfeasibleFloors { group, .. } => (StatusCode::UNPROCESSABLE_ENTITY, Some(*group)),
            Error::InvalidConfig(_)
            | Error::InvalidData(_)
            | Error::Json(_)
            | Error::DimensionMismatch { .. }
            | Error::MissingEmbedding(_)
            | Error::EmptyGroup(_)
            | Error::NonFinite(_) => (StatusCode::BAD_REQUEST, None),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, None),
        };
        ApiError {
            status,
            message: e.to_string(),
            group,
        }
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    group: Option<Group>,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: &self.message,
            group: self.group,
        };
        json_response(self.status, &body)
    }
}

fn json_response<T: Serialize>(status: StatusCode, value: &T) -> Response {
    match foodsec_core::json::to_string(value) {
        Ok(body) => (status, [(CONTENT_TYPE, "application/json")], body).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

/// Parse a JSON body ourselves so every malformed payload is a 400.
fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

fn ranked(state: &AppState) -> Vec<RankedRecord> {
    let mut order: Vec<usize> = (0..state.candidates.len()).collect();
    let c = &state.candidates;
    order.sort_by(|&a, &b| {
        c[b].score
            .total_cmp(&c[a].score)
            .then_with(|| c[a].record_id.cmp(&c[b].record_id))
    });
    order
        .into_iter()
        .enumerate()
        .map(|(rank, i)| RankedRecord {
            rank: rank + 1,
            record_id: c[i].record_id.clone(),
            district: state.district_names[state.district_ids[i] as usize].clone(),
            group: c[i].group,
            score: c[i].score,
            cost: c[i].cost,
        })
        .collect()
}

/// The allocation behind `/v1/whatif`, without HTTP concerns.
pub fn whatif(state: &AppState, req: &WhatIfRequest) -> Result<WhatIfResponse, ApiError> {
    if !(req.budget.is_finite() && req.budget >= 0.0) {
        return Err(ApiError::bad_request(format!(
            "budget {} must be finite and >= 0",
            req.budget
        )));
    }
    if let Some(t) = req.target_gap {
        if !(0.0..1.0).contains(&t) {
            return Err(ApiError::bad_request(format!("target_gap {t} must lie in [0, 1)")));
        }
    }
    let scores: Vec<f64> = state.candidates.iter().map(|c| c.score).collect();
    let groups: Vec<Group> = state.candidates.iter().map(|c| c.group).collect();
    let thresholds = match req.target_gap {
        Some(t) => {
            let paired: Vec<(f64, Group)> = scores.iter().copied().zip(groups.iter().copied()).collect();
            let base = state.artifact.thresholds.get(Group::Rural)?;
            calibrate_group_thresholds(&paired, None, t, base)?
        }
        None => state.artifact.thresholds.clone(),
    };
    let flags = apply_thresholds(&scores, &groups, &thresholds)?;
    let decision_rates = positive_rates(&flags, &groups)?;

    let eligible: Vec<ScoredCandidate> = state
        .candidates
        .iter()
        .zip(&flags)
        .filter(|(_, &f)| f == 1)
        .map(|(c, _)| c.clone())
        .collect();
    let problem = build_problem(
        &eligible,
        req.budget,
        req.floors.clone(),
        req.utility_mode,
        req.cost_resolution,
    )?;
    let allocation = solve(&problem, req.solver)?;

    let selected: std::collections::HashSet<&str> = allocation.selected.iter().map(String::as_str).collect();
    let chosen: Vec<u8> = state
        .candidates
        .iter()
        .map(|c| selected.contains(c.record_id.as_str()) as u8)
        .collect();
    let selection_rates = positive_rates(&chosen, &groups)?;
    let flagged: BTreeMap<&str, bool> = state
        .candidates
        .iter()
        .zip(&flags)
        .map(|(c, &f)| (c.record_id.as_str(), f == 1))
        .collect();

    let rows = ranked(state)
        .into_iter()
        .map(|r| WhatIfRow {
            flagged: flagged[r.record_id.as_str()],
            selected: selected.contains(r.record_id.as_str()),
            record: r,
        })
        .collect();
    Ok(WhatIfResponse {
        parity_gap: (selection_rates[&Group::Rural] - selection_rates[&Group::Urban]).abs(),
        decision_parity_gap: (decision_rates[&Group::Rural] - decision_rates[&Group::Urban]).abs(),
        thresholds,
        eligible: eligible.len(),
        allocation,
        ranked: rows,
    })
}

pub fn predict(state: &AppState, req: &PredictRequest) -> Result<PredictResponse, ApiError> {
    if req.district_id as usize >= state.district_names.len() {
        return Err(ApiError::bad_request(format!(
            "district_id {} out of range (have {})",
            req.district_id,
            state.district_names.len()
        )));
    }
    let record = DistrictRecord {
        record_id: req.record_id.clone().unwrap_or_else(|| "request".into()),
        district_id: req.district_id,
        group: req.group,
        indicators: req.indicators,
        text: req.text.clone(),
        label: None,
        cost: 0.0,
    };
    record.validate(state.district_names.len() as u32)?;
    let score = state.artifact.score(&record)?;
    let threshold = state.artifact.thresholds.get(req.group)?;
    Ok(PredictResponse {
        score,
        threshold,
        insecure: score >= threshold,
    })
}

async fn handle_whatif(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: WhatIfRequest = parse_body(&body)?;
    let start = Instant::now();
    let resp = tokio::task::spawn_blocking(move || whatif(&state, &req))
        .await
        .map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: e.to_string(),
            group: None,
        })??;
    let ms = start.elapsed().as_secs_f64() * 1000.0;
    let mut out = json_response(StatusCode::OK, &resp);
    if let Ok(v) = HeaderValue::from_str(&format!("solve;dur={ms:.3}")) {
        out.headers_mut().insert(SERVER_TIMING, v);
    }
    Ok(out)
}

async fn handle_predict(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: PredictRequest = parse_body(&body)?;
    Ok(json_response(StatusCode::OK, &predict(&state, &req)?))
}

async fn handle_metrics(State(state): State<Arc<AppState>>) -> Response {
    match &state.report {
        Some(body) => (StatusCode::OK, [(CONTENT_TYPE, "application/json")], body.clone()).into_response(),
        None => ApiError {
            status: StatusCode::NOT_FOUND,
            message: "no evaluation report configured".into(),
            group: None,
        }
        .into_response(),
    }
}

async fn handle_districts(State(state): State<Arc<AppState>>) -> Response {
    json_response(StatusCode::OK, &ranked(&state))
}

pub fn router(state: Arc<AppState>, cors_origin: Option<&str>) -> Router {
    let mut app = Router::new()
        .route("/v1/whatif", post(handle_whatif))
        .route("/v1/predict", post(handle_predict))
        .route("/v1/metrics", get(handle_metrics))
        .route("/v1/districts", get(handle_districts))
        .with_state(state);
    if let Some(origin) = cors_origin {
        let allow = if origin == "*" {
            AllowOrigin::any()
        } else {
            match HeaderValue::from_str(origin) {
                Ok(v) => AllowOrigin::exact(v),
                Err(_) => {
                    log::warn!("ignoring unusable CORS origin {origin:?}");
                    return app;
                }
            }
        };
        app = app.layer(
            CorsLayer::new()
                .allow_origin(allow)
                .allow_methods([Method::GET, Method::POST])
                .allow_headers([CONTENT_TYPE])
                .expose_headers([SERVER_TIMING]),
        );
    }
    app
}

/// Bind and serve until Ctrl-C.
pub async fn serve(addr: SocketAddr, app: Router) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
