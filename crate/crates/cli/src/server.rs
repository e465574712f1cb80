//! JSON-over-HTTP screening service backed by a [`RunStore`].

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use bidscreen::data::{Bid, Dataset, FirmId, Label, Procedure, Tender, TenderDate, TenderId};
use bidscreen::models::{ModelArtifact, ModelError};
use bidscreen::reporting::{
    self, ClusterMode, GroupBy, Light, ReportError, Thresholds, Verdict, DEFAULT_MAX_FIRMS,
};
use bidscreen::screens::{self, ScreenConfig, ScreenError, ScreenVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::store::{EscalationFlag, FlagStatus, RunStore, ScreeningRecord, StoreError};

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    store: RunStore,
    default_model: Option<String>,
    thresholds: Thresholds,
    screen_config: ScreenConfig,
    token: Option<String>,
    models: Mutex<HashMap<String, Arc<ModelArtifact>>>,
}

impl AppState {
    pub fn new(
        store: RunStore,
        default_model: Option<String>,
        thresholds: Thresholds,
        screen_config: ScreenConfig,
        token: Option<String>,
    ) -> Self {
        Self {
            inner: Arc::new(Inner {
                store,
                default_model,
                thresholds,
                screen_config,
                token: token.filter(|t| !t.is_empty()),
                models: Mutex::new(HashMap::new()),
            }),
        }
    }

    pub fn store(&self) -> &RunStore {
        &self.inner.store
    }

    /// The configured model, else the most recently stored one.
    fn default_model_id(&self) -> Result<Option<String>, ApiError> {
        if let Some(id) = &self.inner.default_model {
            return Ok(Some(id.clone()));
        }
        Ok(self.inner.store.models()?.last().map(|m| m.id.clone()))
    }

    fn resolve_model(&self, requested: Option<&str>) -> Result<(String, Arc<ModelArtifact>), ApiError> {
        let id = match requested {
            Some(id) => id.to_string(),
            None => self
                .default_model_id()?
                .ok_or_else(|| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "NoModel", "no model is stored"))?,
        };
        let mut cache = self.inner.models.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(m) = cache.get(&id) {
            return Ok((id, m.clone()));
        }
        let model = Arc::new(self.inner.store.get_model(&id)?);
        cache.insert(id.clone(), model.clone());
        Ok((id, model))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    name: String,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, name: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            name: name.to_string(),
            message: message.into(),
        }
    }

    pub fn status(&self) -> StatusCode {
        self.status
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn message(&self) -> &str {
        &self.message
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.name, "message": self.message }))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::bad_request(r.body_text())
    }
}

impl From<ScreenError> for ApiError {
    fn from(e: ScreenError) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.name(), e.to_string())
    }
}

impl From<ModelError> for ApiError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Screen(s) => s.into(),
            other => {
                let text = other.to_string();
                let name = text.split(':').next().unwrap_or("ModelError").to_string();
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, &name, text)
            }
        }
    }
}

impl From<ReportError> for ApiError {
    fn from(e: ReportError) -> Self {
        let name = match e {
            ReportError::Model(m) => return m.into(),
            ReportError::InvalidThresholds { .. } => "InvalidThresholds",
            ReportError::InvalidProbability(_) => "InvalidProbability",
            ReportError::EmptyInput => "EmptyInput",
            ReportError::TooManyFirms { .. } => "TooManyFirms",
            ReportError::UnknownTender(_) => "UnknownTender",
            ReportError::Csv(_) => "ReportError",
        };
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, name, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound { .. } => Self::new(StatusCode::NOT_FOUND, "NotFound", e.to_string()),
            StoreError::Conflict(_) => Self::new(StatusCode::CONFLICT, "Conflict", e.to_string()),
            StoreError::Model(m) => m.into(),
            other => {
                log::error!("store failure: {other}");
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "StoreError", other.to_string())
            }
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// A bid given either as a bare amount or with its firm.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum BidInput {
    Amount(f64),
    Firm { firm_id: String, amount: f64 },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScreenRequest {
    pub bids: Vec<BidInput>,
    #[serde(default)]
    pub model_id: Option<String>,
    #[serde(default)]
    pub thresholds: Option<Thresholds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureValue {
    pub name: String,
    pub value: f64,
}

/// Result of screening one set of bids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tender_id: Option<TenderId>,
    pub screens: ScreenVector,
    pub features: Vec<FeatureValue>,
    pub probability: f64,
    pub light: Light,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree_path: Option<Vec<String>>,
    pub model_id: String,
    pub thresholds: Thresholds,
}

/// Screens and scores `amounts`; shared by the CLI and the service so both
/// give identical answers.
pub fn screen_bids(
    model: &ModelArtifact,
    model_id: &str,
    amounts: &[f64],
    screen_config: &ScreenConfig,
    thresholds: Thresholds,
) -> Result<ScreenResponse, ApiError> {
    thresholds.validate()?;
    let screens = screens::screens_from_bids(amounts, screen_config)?;
    let features = model.features_for(&screens)?;
    let probability = model.predict_proba(&features)?;
    let light = reporting::traffic_light(probability, thresholds)?;
    let tree_path = model.as_cart().map(|c| c.decision_path(&features));
    Ok(ScreenResponse {
        tender_id: None,
        screens,
        features: model
            .feature_names
            .iter()
            .zip(&features)
            .map(|(n, v)| FeatureValue {
                name: n.clone(),
                value: *v,
            })
            .collect(),
        probability,
        light,
        tree_path,
        model_id: model_id.to_string(),
        thresholds,
    })
}

fn amounts_of(bids: &[BidInput]) -> Vec<f64> {
    bids.iter()
        .map(|b| match b {
            BidInput::Amount(a) => *a,
            BidInput::Firm { amount, .. } => *amount,
        })
        .collect()
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn screen(State(state): State<AppState>, body: Result<Json<ScreenRequest>, JsonRejection>) -> ApiResult<Json<ScreenResponse>> {
    let Json(req) = body?;
    let (id, model) = state.resolve_model(req.model_id.as_deref())?;
    let thresholds = req.thresholds.unwrap_or(state.inner.thresholds);
    Ok(Json(screen_bids(
        &model,
        &id,
        &amounts_of(&req.bids),
        &state.inner.screen_config,
        thresholds,
    )?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TenderRequest {
    pub tender_id: String,
    pub bids: Vec<BidInput>,
    #[serde(default)]
    pub date: Option<String>,
    #[serde(default)]
    pub region: Option<String>,
    #[serde(default)]
    pub procedure: Option<String>,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub model_id: Option<String>,
    #[serde(default)]
    pub thresholds: Option<Thresholds>,
}

fn build_tender(req: &TenderRequest) -> ApiResult<Tender> {
    if req.tender_id.trim().is_empty() {
        return Err(ApiError::bad_request("tender_id must be non-empty"));
    }
    let id = TenderId(req.tender_id.trim().to_string());
    let bids = req
        .bids
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let (firm, amount) = match b {
                BidInput::Amount(a) => (format!("bidder {}", i + 1), *a),
                BidInput::Firm { firm_id, amount } => (firm_id.trim().to_string(), *amount),
            };
            Bid {
                tender_id: id.clone(),
                firm_id: FirmId(firm),
                amount,
                variant_id: None,
            }
        })
        .collect();
    let mut tender = Tender::new(id, bids);
    tender.date = match req.date.as_deref() {
        None | Some("") => TenderDate::Unknown,
        Some(raw) => TenderDate::parse(raw).ok_or_else(|| ApiError::bad_request(format!("unparsable date `{raw}`")))?,
    };
    tender.region = req.region.clone().filter(|r| !r.trim().is_empty());
    tender.procedure = match req.procedure.as_deref() {
        None | Some("") => Procedure::Unknown,
        Some(raw) => Procedure::parse(raw).ok_or_else(|| ApiError::bad_request(format!("unknown procedure `{raw}`")))?,
    };
    tender.label = match req.label.as_deref() {
        None | Some("") => Label::Unknown,
        Some(raw) => Label::parse(raw).ok_or_else(|| ApiError::bad_request(format!("unknown label `{raw}`")))?,
    };
    Ok(tender)
}

async fn post_tender(
    State(state): State<AppState>,
    body: Result<Json<TenderRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<ScreenResponse>)> {
    let Json(req) = body?;
    let tender = build_tender(&req)?;
    if state.store().get_tender(&tender.tender_id).is_ok() {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "Conflict",
            format!("tender `{}` already exists", tender.tender_id),
        ));
    }
    let (id, model) = state.resolve_model(req.model_id.as_deref())?;
    let thresholds = req.thresholds.unwrap_or(state.inner.thresholds);
    let mut response = screen_bids(&model, &id, &tender.amounts(), &state.inner.screen_config, thresholds)?;
    response.tender_id = Some(tender.tender_id.clone());
    state.store().put_tender(&tender)?;
    state.store().record_screening(&ScreeningRecord {
        tender_id: tender.tender_id.clone(),
        model_id: id,
        probability: response.probability,
        light: response.light,
        thresholds,
        screens: response.screens,
    })?;
    Ok((StatusCode::CREATED, Json(response)))
}

#[derive(Debug, Serialize)]
struct TenderRow {
    tender_id: TenderId,
    date: TenderDate,
    region: Option<String>,
    procedure: Procedure,
    n_bids: usize,
    probability: Option<f64>,
    light: Option<Light>,
    model_id: Option<String>,
    thresholds: Option<Thresholds>,
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    light: Option<Light>,
    region: Option<String>,
    offset: Option<usize>,
    limit: Option<usize>,
}

async fn list_tenders(State(state): State<AppState>, Query(q): Query<ListQuery>) -> ApiResult<Json<Value>> {
    let latest: HashMap<TenderId, ScreeningRecord> = state
        .store()
        .latest_screenings()?
        .into_iter()
        .map(|r| (r.tender_id.clone(), r))
        .collect();
    let rows: Vec<TenderRow> = state
        .store()
        .tenders()?
        .into_iter()
        .map(|t| {
            let r = latest.get(&t.tender_id);
            TenderRow {
                n_bids: t.bids.len(),
                probability: r.map(|r| r.probability),
                light: r.map(|r| r.light),
                model_id: r.map(|r| r.model_id.clone()),
                thresholds: r.map(|r| r.thresholds),
                tender_id: t.tender_id,
                date: t.date,
                region: t.region,
                procedure: t.procedure,
            }
        })
        .filter(|r| q.light.is_none_or(|l| r.light == Some(l)))
        .filter(|r| q.region.as_ref().is_none_or(|g| r.region.as_ref() == Some(g)))
        .collect();
    let total = rows.len();
    let offset = q.offset.unwrap_or(0);
    let limit = q.limit.unwrap_or(usize::MAX);
    let items: Vec<&TenderRow> = rows.iter().skip(offset).take(limit).collect();
    Ok(Json(json!({
        "model_id": state.default_model_id()?,
        "thresholds": state.inner.thresholds,
        "total": total,
        "offset": offset,
        "items": items,
    })))
}

async fn get_tender(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let id = TenderId(id);
    let tender = state.store().get_tender(&id)?;
    let record = state.store().latest_screenings()?.into_iter().find(|r| r.tender_id == id);
    let tree_path = match &record {
        Some(r) => match state.resolve_model(Some(&r.model_id)) {
            Ok((_, model)) => model
                .as_cart()
                .map(|c| model.features_for(&r.screens).map(|x| c.decision_path(&x)))
                .transpose()?,
            Err(_) => None,
        },
        None => None,
    };
    let flags: Vec<EscalationFlag> = state.store().flags()?.into_iter().filter(|f| f.tender_id == id).collect();
    Ok(Json(json!({
        "tender": tender,
        "screening": record,
        "tree_path": tree_path,
        "model_id": record.as_ref().map(|r| r.model_id.clone()),
        "thresholds": record.as_ref().map(|r| r.thresholds).unwrap_or(state.inner.thresholds),
        "flags": flags,
    })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlagRequest {
    tender_id: String,
    manager_id: String,
    #[serde(default)]
    note: String,
}

async fn post_flag(
    State(state): State<AppState>,
    body: Result<Json<FlagRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<EscalationFlag>)> {
    let Json(req) = body?;
    if req.manager_id.trim().is_empty() {
        return Err(ApiError::bad_request("manager_id must be non-empty"));
    }
    let tender_id = TenderId(req.tender_id);
    state.store().get_tender(&tender_id)?;
    let flag = state.store().create_flag(tender_id, req.manager_id, req.note)?;
    Ok((StatusCode::CREATED, Json(flag)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlagPatch {
    #[serde(default)]
    status: Option<FlagStatus>,
    #[serde(default)]
    note: Option<String>,
}

async fn patch_flag(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<FlagPatch>, JsonRejection>,
) -> ApiResult<Json<EscalationFlag>> {
    let Json(req) = body?;
    Ok(Json(state.store().update_flag(&id, req.status, req.note)?))
}

#[derive(Debug, Deserialize)]
struct FlagQuery {
    status: Option<FlagStatus>,
    tender_id: Option<String>,
    manager_id: Option<String>,
}

async fn list_flags(State(state): State<AppState>, Query(q): Query<FlagQuery>) -> ApiResult<Json<Value>> {
    let flags: Vec<EscalationFlag> = state
        .store()
        .flags()?
        .into_iter()
        .filter(|f| q.status.is_none_or(|s| f.status == s))
        .filter(|f| q.tender_id.as_ref().is_none_or(|t| f.tender_id.as_str() == t))
        .filter(|f| q.manager_id.as_ref().is_none_or(|m| &f.manager_id == m))
        .collect();
    Ok(Json(json!({ "flags": flags })))
}

#[derive(Debug, Deserialize)]
struct ReportQuery {
    low: Option<f64>,
    high: Option<f64>,
    by: Option<String>,
    min_group_size: Option<usize>,
    min_suspicious: Option<usize>,
    mode: Option<ClusterMode>,
    top: Option<usize>,
}

struct Portfolio {
    dataset: Dataset,
    verdicts: Vec<Verdict>,
    thresholds: Thresholds,
    model_ids: Vec<String>,
}

/// Stored tenders and their latest verdicts, re-lit at the requested
/// thresholds.
fn portfolio(state: &AppState, q: &ReportQuery) -> ApiResult<Portfolio> {
    let t = Thresholds {
        low: q.low.unwrap_or(state.inner.thresholds.low),
        high: q.high.unwrap_or(state.inner.thresholds.high),
    };
    t.validate()?;
    let tenders = state.store().tenders()?;
    let records = state.store().latest_screenings()?;
    let mut model_ids: Vec<String> = Vec::new();
    let mut verdicts = Vec::with_capacity(records.len());
    for r in records {
        if !model_ids.contains(&r.model_id) {
            model_ids.push(r.model_id.clone());
        }
        verdicts.push(Verdict {
            light: reporting::traffic_light(r.probability, t)?,
            tender_id: r.tender_id,
            probability: r.probability,
            model_id: r.model_id,
        });
    }
    let dataset = Dataset::new(tenders, "service").map_err(StoreError::from)?;
    Ok(Portfolio {
        dataset,
        verdicts,
        thresholds: t,
        model_ids,
    })
}

async fn report_summary(State(state): State<AppState>, Query(q): Query<ReportQuery>) -> ApiResult<Json<Value>> {
    let p = portfolio(&state, &q)?;
    let summary = |threshold: f64| -> ApiResult<Value> {
        if p.verdicts.is_empty() {
            return Ok(json!({ "threshold": threshold, "total": 0, "flagged": 0, "not_flagged": 0 }));
        }
        let s = reporting::summarize(&p.verdicts, threshold)?;
        Ok(json!({
            "threshold": s.threshold,
            "total": s.total,
            "flagged": s.flagged,
            "not_flagged": s.not_flagged,
            "flagged_display": s.flagged_display(),
            "not_flagged_display": s.not_flagged_display(),
        }))
    };
    let mut lights: Vec<(Light, usize)> = vec![(Light::Green, 0), (Light::Suspicious, 0), (Light::VerySuspicious, 0)];
    for v in &p.verdicts {
        lights.iter_mut().find(|(l, _)| *l == v.light).expect("every light listed").1 += 1;
    }
    let flags = state.store().flags()?;
    let open: Vec<&EscalationFlag> = flags.iter().filter(|f| f.status == FlagStatus::Open).collect();
    Ok(Json(json!({
        "model_ids": p.model_ids,
        "thresholds": p.thresholds,
        "n_tenders": p.verdicts.len(),
        "low": summary(p.thresholds.low)?,
        "high": summary(p.thresholds.high)?,
        "lights": lights.iter().map(|(l, n)| (l.as_str().to_string(), json!(n))).collect::<serde_json::Map<_, _>>(),
        "flags": {
            "open": open.len(),
            "reviewed": flags.len() - open.len(),
            "open_flags": open,
        },
    })))
}

async fn report_clusters(State(state): State<AppState>, Query(q): Query<ReportQuery>) -> ApiResult<Json<Value>> {
    let p = portfolio(&state, &q)?;
    let groups: Vec<GroupBy> = match q.by.as_deref() {
        None => GroupBy::ALL.to_vec(),
        Some(raw) => vec![GroupBy::parse(raw).ok_or_else(|| ApiError::bad_request(format!("unknown grouping `{raw}`")))?],
    };
    let breakdowns = groups
        .into_iter()
        .map(|g| reporting::cluster_breakdown(&p.verdicts, &p.dataset, g, p.thresholds.low, q.min_group_size.unwrap_or(0)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Json(json!({
        "model_ids": p.model_ids,
        "thresholds": p.thresholds,
        "threshold": p.thresholds.low,
        "clusters": breakdowns,
    })))
}

async fn report_interactions(State(state): State<AppState>, Query(q): Query<ReportQuery>) -> ApiResult<Json<Value>> {
    let p = portfolio(&state, &q)?;
    let m = reporting::interaction_matrix(&p.dataset, &p.verdicts, p.thresholds.low, q.min_suspicious.unwrap_or(3));
    let rendered = m.render();
    Ok(Json(json!({
        "model_ids": p.model_ids,
        "thresholds": p.thresholds,
        "threshold": p.thresholds.low,
        "matrix": m,
        "rendered": rendered,
    })))
}

async fn report_suspicioucy(State(state): State<AppState>, Query(q): Query<ReportQuery>) -> ApiResult<Json<Value>> {
    let p = portfolio(&state, &q)?;
    let m = reporting::interaction_matrix(&p.dataset, &p.verdicts, p.thresholds.low, q.min_suspicious.unwrap_or(3));
    let mode = q.mode.unwrap_or(ClusterMode::WithDiagonal);
    let mut rates = reporting::suspicioucy_rates(&m.firms, &p.dataset, &p.verdicts, p.thresholds.low, mode, DEFAULT_MAX_FIRMS)?;
    let n_clusters = rates.len();
    if let Some(top) = q.top {
        rates.truncate(top);
    }
    Ok(Json(json!({
        "model_ids": p.model_ids,
        "thresholds": p.thresholds,
        "threshold": p.thresholds.low,
        "mode": mode,
        "firms": m.firms,
        "n_clusters": n_clusters,
        "clusters": rates,
    })))
}

async fn list_models(State(state): State<AppState>) -> ApiResult<Json<Value>> {
    Ok(Json(json!({
        "model_id": state.default_model_id()?,
        "thresholds": state.inner.thresholds,
        "models": state.store().models()?,
    })))
}

async fn get_model(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let (id, model) = state.resolve_model(Some(&id))?;
    Ok(Json(json!({
        "model_id": id,
        "thresholds": state.inner.thresholds,
        "model": *model,
    })))
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.inner.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|given| given == token);
        if !ok {
            return ApiError::new(StatusCode::UNAUTHORIZED, "Unauthorized", "missing or invalid bearer token").into_response();
        }
    }
    next.run(req).await
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such endpoint")
}

pub fn router(state: AppState) -> Router {
    let protected = Router::new()
        .route("/screen", post(screen))
        .route("/tenders", post(post_tender).get(list_tenders))
        .route("/tenders/{id}", get(get_tender))
        .route("/flags", post(post_flag).get(list_flags))
        .route("/flags/{id}", patch(patch_flag))
        .route("/reports/summary", get(report_summary))
        .route("/reports/clusters", get(report_clusters))
        .route("/reports/interactions", get(report_interactions))
        .route("/reports/suspicioucy", get(report_suspicioucy))
        .route("/models", get(list_models))
        .route("/models/{id}", get(get_model))
        .fallback(not_found)
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .route("/health", get(health))
        .merge(protected)
        .with_state(state)
}

pub async fn serve(state: AppState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
