use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use swallow_core::acquisition::{decode_stream, frames_to_segment, AdcConfig};
use swallow_core::classifier::health_index;
use swallow_core::signal::{Label, SignalSegment, Volume};
use swallow_core::{Error as CoreError, CHANNEL_COUNT};

use crate::error::{ApiError, ApiResult};
use crate::live::{self, LiveStart, LiveStatus};
use crate::store::{NewSession, SessionQuery, SessionRecord};
use crate::AppState;

pub const DEFAULT_PAGE: usize = 50;
pub const MAX_PAGE: usize = 1000;
pub const DEFAULT_WAVEFORM_POINTS: usize = 1000;
pub const MAX_WAVEFORM_POINTS: usize = 100_000;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(ingest).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/score", post(score_session))
        .route("/sessions/{id}/waveform", get(waveform))
        .route("/subjects", get(list_subjects))
        .route("/subjects/{id}/trend", get(trend))
        .route("/live", get(live_status))
        .route("/live/start", post(live_start))
        .route("/live/stop", post(live_stop))
        .with_state(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreStatus {
    Unscored,
    Pending,
    Scored,
    Failed,
}

/// A stored record plus the state of any background scoring job.
#[derive(Debug, Clone, Serialize)]
pub struct SessionView {
    #[serde(flatten)]
    pub record: SessionRecord,
    pub score_status: ScoreStatus,
    pub score_error: Option<String>,
}

#[derive(Debug, Clone)]
pub(crate) enum Job {
    Pending,
    Failed(String),
}

impl AppState {
    fn view(&self, record: SessionRecord) -> SessionView {
        let job = self.jobs.lock().expect("job table poisoned").get(&record.session_id).cloned();
        let (score_status, score_error) = match (job, record.health_index) {
            (Some(Job::Pending), _) => (ScoreStatus::Pending, None),
            (Some(Job::Failed(e)), None) => (ScoreStatus::Failed, Some(e)),
            (_, Some(_)) => (ScoreStatus::Scored, None),
            (_, None) => (ScoreStatus::Unscored, None),
        };
        SessionView { record, score_status, score_error }
    }
}

async fn healthz(State(st): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(serde_json::json!({
        "status": "ok",
        "sessions": st.store.len(),
        "model_version": st.model.as_ref().map(|m| m.model_version.clone()),
    }))
}

fn check_subject_id(id: &str) -> ApiResult<()> {
    let ok = !id.is_empty()
        && id.len() <= 64
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(ApiError::bad_request(
            "invalid_subject",
            format!("subject id must be 1-64 characters of [A-Za-z0-9._-], got {id:?}"),
        ))
    }
}

fn parse_label(s: &str) -> ApiResult<Label> {
    match s {
        "0" | "healthy" => Ok(Label::Healthy),
        "1" | "patient" => Ok(Label::Patient),
        _ => Err(ApiError::bad_request("invalid_label", format!("label must be healthy or patient, got {s:?}"))),
    }
}

fn parse_volume(s: &str) -> ApiResult<Volume> {
    s.parse::<u32>()
        .map_err(|e| e.to_string())
        .and_then(Volume::try_from)
        .map_err(|e| ApiError::bad_request("invalid_volume", e))
}

fn parse_time(name: &str, s: &str) -> ApiResult<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| ApiError::bad_request("invalid_time", format!("{name} must be RFC 3339: {e}")))
}

fn parse_usize(name: &str, s: &str) -> ApiResult<usize> {
    s.parse()
        .map_err(|_| ApiError::bad_request("invalid_query", format!("{name} must be a non-negative integer, got {s:?}")))
}

fn reject_unknown(q: &HashMap<String, String>, allowed: &[&str]) -> ApiResult<()> {
    match q.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(ApiError::bad_request("invalid_query", format!("unknown query parameter {k:?}"))),
        None => Ok(()),
    }
}

/// One line of a JSON-lines corpus, with optional session metadata.
#[derive(Debug, Deserialize)]
struct IngestJson {
    subject_id: String,
    label: Option<Label>,
    volume_ml: Option<Volume>,
    fs: f64,
    channels: Vec<Vec<f64>>,
    recorded_at: Option<DateTime<Utc>>,
}

impl AppState {
    fn check_segment(&self, seg: &SignalSegment) -> ApiResult<()> {
        if seg.channel_count() != CHANNEL_COUNT {
            return Err(ApiError::bad_request(
                "channel_count",
                format!("expected {CHANNEL_COUNT} channels, got {}", seg.channel_count()),
            ));
        }
        if seg.sample_rate_hz != self.sample_rate_hz {
            return Err(ApiError::bad_request(
                "unsupported_sample_rate",
                format!("sample rate must be {} Hz, got {}", self.sample_rate_hz, seg.sample_rate_hz),
            ));
        }
        if seg.is_empty() {
            return Err(ApiError::bad_request("empty_segment", "session has no samples"));
        }
        Ok(())
    }

    /// Validates, computes the envelope summary and persists a session.
    pub(crate) async fn ingest_segment(self: &Arc<Self>, mut new: NewSession) -> ApiResult<SessionRecord> {
        check_subject_id(&new.subject_id)?;
        self.check_segment(&new.segment)?;
        let st = Arc::clone(self);
        Ok(tokio::task::spawn_blocking(move || -> ApiResult<SessionRecord> {
            new.envelope_peak_mv = st.preprocessor.run(&new.segment)?.channel_peaks();
            Ok(st.store.insert(new)?)
        })
        .await??)
    }
}

async fn ingest(
    State(st): State<Arc<AppState>>,
    headers: HeaderMap,
    Query(q): Query<HashMap<String, String>>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let ctype = headers.get(header::CONTENT_TYPE).and_then(|v| v.to_str().ok()).unwrap_or("");
    let new = if ctype.starts_with("application/octet-stream") {
        reject_unknown(&q, &["subject_id", "label", "volume_ml", "recorded_at"])?;
        let subject_id = q
            .get("subject_id")
            .ok_or_else(|| ApiError::bad_request("invalid_payload", "frame uploads need ?subject_id="))?;
        let decoded = decode_stream(&body);
        if decoded.frames.is_empty() {
            return Err(ApiError::bad_request("no_frames", "no valid frames in the uploaded stream"));
        }
        let adc = AdcConfig { sample_rate_hz: st.sample_rate_hz, ..Default::default() };
        NewSession {
            subject_id: subject_id.clone(),
            recorded_at: q.get("recorded_at").map(|s| parse_time("recorded_at", s)).transpose()?.unwrap_or_else(Utc::now),
            volume_ml: q.get("volume_ml").map(|s| parse_volume(s)).transpose()?,
            label: q.get("label").map(|s| parse_label(s)).transpose()?,
            segment: frames_to_segment(&decoded.frames, &adc)?,
            envelope_peak_mv: Vec::new(),
            decode: Some(decoded.stats),
        }
    } else {
        reject_unknown(&q, &[])?;
        let j: IngestJson = serde_json::from_slice(&body)
            .map_err(|e| ApiError::bad_request("invalid_payload", format!("malformed session JSON: {e}")))?;
        if j.channels.len() != CHANNEL_COUNT {
            return Err(ApiError::bad_request(
                "channel_count",
                format!("expected {CHANNEL_COUNT} channels, got {}", j.channels.len()),
            ));
        }
        NewSession {
            subject_id: j.subject_id,
            recorded_at: j.recorded_at.unwrap_or_else(Utc::now),
            volume_ml: j.volume_ml,
            label: j.label,
            segment: SignalSegment::new(j.fs, j.channels)?,
            envelope_peak_mv: Vec::new(),
            decode: None,
        }
    };
    let rec = st.ingest_segment(new).await?;
    Ok((StatusCode::CREATED, Json(st.view(rec))))
}

async fn get_session(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let rec = st.store.get(&id).ok_or_else(|| ApiError::not_found(format!("session {id} not found")))?;
    Ok(Json(st.view(rec)))
}

async fn list_sessions(
    State(st): State<Arc<AppState>>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<impl IntoResponse> {
    reject_unknown(&q, &["subject_id", "from", "to", "limit", "offset"])?;
    let limit = q.get("limit").map(|s| parse_usize("limit", s)).transpose()?.unwrap_or(DEFAULT_PAGE);
    if limit == 0 || limit > MAX_PAGE {
        return Err(ApiError::bad_request("invalid_query", format!("limit must be in 1..={MAX_PAGE}")));
    }
    let query = SessionQuery {
        subject_id: q.get("subject_id").cloned(),
        from: q.get("from").map(|s| parse_time("from", s)).transpose()?,
        to: q.get("to").map(|s| parse_time("to", s)).transpose()?,
        limit,
        offset: q.get("offset").map(|s| parse_usize("offset", s)).transpose()?.unwrap_or(0),
    };
    if let (Some(f), Some(t)) = (query.from, query.to) {
        if f > t {
            return Err(ApiError::bad_request("invalid_query", "from must not be after to"));
        }
    }
    let page = st.store.query(&query);
    let items: Vec<SessionView> = page.items.into_iter().map(|r| st.view(r)).collect();
    Ok(Json(serde_json::json!({
        "items": items,
        "total": page.total,
        "limit": page.limit,
        "offset": page.offset,
    })))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScoreResponse {
    pub session_id: String,
    pub health_index: f64,
    pub p_patient: f64,
    pub model_version: String,
}

impl AppState {
    /// Scores a stored session with the loaded checkpoint and persists it.
    pub(crate) fn score_blocking(&self, id: &str) -> ApiResult<ScoreResponse> {
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no_model", "service started without a model"))?;
        let seg = self.store.load_segment(id)?;
        if model.preprocess.fs_hz != seg.sample_rate_hz {
            return Err(CoreError::IncompatibleModel(format!(
                "model expects {} Hz, session is {} Hz",
                model.preprocess.fs_hz, seg.sample_rate_hz
            ))
            .into());
        }
        let p = model.score(&seg)?;
        let hi = health_index(p)?;
        let rec = self.store.set_score(id, hi.value, p, &model.model_version)?;
        Ok(ScoreResponse {
            session_id: rec.session_id,
            health_index: rec.health_index.unwrap_or(hi.value),
            p_patient: rec.p_patient.unwrap_or(p),
            model_version: model.model_version.clone(),
        })
    }
}

async fn score_session(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<axum::response::Response> {
    reject_unknown(&q, &["async"])?;
    let background = match q.get("async").map(String::as_str) {
        None | Some("false") | Some("0") => false,
        Some("true") | Some("1") => true,
        Some(other) => return Err(ApiError::bad_request("invalid_query", format!("async must be true or false, got {other:?}"))),
    };
    if st.store.get(&id).is_none() {
        return Err(ApiError::not_found(format!("session {id} not found")));
    }
    if st.model.is_none() {
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no_model", "service started without a model"));
    }
    if !background {
        let s2 = Arc::clone(&st);
        let r = tokio::task::spawn_blocking(move || s2.score_blocking(&id)).await??;
        return Ok(Json(r).into_response());
    }
    st.jobs.lock().expect("job table poisoned").insert(id.clone(), Job::Pending);
    let s2 = Arc::clone(&st);
    let job_id = id.clone();
    tokio::spawn(async move {
        let s3 = Arc::clone(&s2);
        let jid = job_id.clone();
        let res = tokio::task::spawn_blocking(move || s3.score_blocking(&jid)).await;
        let mut jobs = s2.jobs.lock().expect("job table poisoned");
        match res {
            Ok(Ok(_)) => {
                jobs.remove(&job_id);
            }
            Ok(Err(e)) => {
                jobs.insert(job_id, Job::Failed(e.message));
            }
            Err(e) => {
                jobs.insert(job_id, Job::Failed(e.to_string()));
            }
        }
    });
    let rec = st.store.get(&id).ok_or_else(|| ApiError::not_found(format!("session {id} not found")))?;
    Ok((StatusCode::ACCEPTED, Json(st.view(rec))).into_response())
}

/// Indices kept by max-min bucketing: each of `points / 2` equal buckets
/// contributes its minimum and maximum, in time order.
pub fn max_min_indices(x: &[f64], points: usize) -> Vec<usize> {
    let n = x.len();
    if n <= points {
        return (0..n).collect();
    }
    let buckets = (points / 2).max(1);
    let mut out = Vec::with_capacity(2 * buckets);
    for b in 0..buckets {
        let (lo, hi) = (b * n / buckets, (b + 1) * n / buckets);
        if lo == hi {
            continue;
        }
        let mut imin = lo;
        let mut imax = lo;
        for i in lo..hi {
            if x[i] < x[imin] {
                imin = i;
            }
            if x[i] > x[imax] {
                imax = i;
            }
        }
        let (a, b) = (imin.min(imax), imin.max(imax));
        out.push(a);
        if b != a && points >= 2 {
            out.push(b);
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Series {
    pub t_s: Vec<f64>,
    pub mv: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChannelWaveform {
    pub channel: usize,
    pub raw: Series,
    pub envelope: Series,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Waveform {
    pub session_id: String,
    pub sample_rate_hz: f64,
    pub samples: usize,
    pub points: usize,
    pub channels: Vec<ChannelWaveform>,
}

fn bucket(x: &[f64], points: usize, fs: f64, t0: f64) -> Series {
    let idx = max_min_indices(x, points);
    Series {
        t_s: idx.iter().map(|&i| t0 + i as f64 / fs).collect(),
        mv: idx.iter().map(|&i| x[i]).collect(),
    }
}

pub(crate) fn waveform_of(id: &str, seg: &SignalSegment, envelope: &[Vec<f64>], points: usize, t0: f64) -> Waveform {
    let fs = seg.sample_rate_hz;
    Waveform {
        session_id: id.to_string(),
        sample_rate_hz: fs,
        samples: seg.len(),
        points,
        channels: seg
            .channels
            .iter()
            .zip(envelope)
            .enumerate()
            .map(|(c, (raw, env))| ChannelWaveform {
                channel: c,
                raw: bucket(raw, points, fs, t0),
                envelope: bucket(env, points, fs, t0),
            })
            .collect(),
    }
}

fn parse_points(q: &HashMap<String, String>, default: usize) -> ApiResult<usize> {
    let points = q.get("points").map(|s| parse_usize("points", s)).transpose()?.unwrap_or(default);
    if !(2..=MAX_WAVEFORM_POINTS).contains(&points) {
        return Err(ApiError::bad_request("invalid_query", format!("points must be in 2..={MAX_WAVEFORM_POINTS}")));
    }
    Ok(points)
}

async fn waveform(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<Waveform>> {
    reject_unknown(&q, &["points"])?;
    let points = parse_points(&q, DEFAULT_WAVEFORM_POINTS)?;
    let w = tokio::task::spawn_blocking(move || -> ApiResult<Waveform> {
        let seg = st.store.load_segment(&id)?;
        let env = st.preprocessor.run(&seg)?;
        Ok(waveform_of(&id, &seg, &env.channels, points, 0.0))
    })
    .await??;
    Ok(Json(w))
}

async fn list_subjects(State(st): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "subjects": st.store.subjects() }))
}

async fn trend(State(st): State<Arc<AppState>>, Path(subject): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let points = st
        .store
        .trend(&subject)
        .ok_or_else(|| ApiError::not_found(format!("subject {subject} has no sessions")))?;
    Ok(Json(serde_json::json!({ "subject_id": subject, "points": points })))
}

impl AppState {
    fn live_status(&self, rec: Option<&live::LiveRecording>) -> LiveStatus {
        LiveStatus {
            recording: rec.is_some(),
            subject_id: rec.map(|r| r.request.subject_id.clone()),
            started_at: rec.map(|r| r.started_at),
            sample_rate_hz: self.sample_rate_hz,
            samples: rec.map_or(0, |r| r.len()),
        }
    }
}

/// Status plus the latest window of raw samples and its envelope.
async fn live_status(
    State(st): State<Arc<AppState>>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<serde_json::Value>> {
    reject_unknown(&q, &["window", "points"])?;
    let window = q.get("window").map(|s| parse_usize("window", s)).transpose()?.unwrap_or(500);
    let points = parse_points(&q, 500)?;
    let guard = st.live.lock().await;
    let status = st.live_status(guard.as_ref());
    let view = match guard.as_ref() {
        Some(rec) if window > 0 => {
            let (t0, chans) = rec.window(window, st.sample_rate_hz);
            drop(guard);
            let seg = SignalSegment::new(st.sample_rate_hz, chans)?;
            let env = st.preprocessor.run(&seg)?;
            Some(waveform_of("live", &seg, &env.channels, points, t0))
        }
        _ => None,
    };
    Ok(Json(serde_json::json!({ "status": status, "window": view })))
}

async fn live_start(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: LiveStart = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request("invalid_payload", format!("malformed live start request: {e}")))?;
    check_subject_id(&req.subject_id)?;
    let mut guard = st.live.lock().await;
    if guard.is_some() {
        return Err(ApiError::conflict("already_recording", "a live recording is already running"));
    }
    *guard = Some(live::start(req, st.sample_rate_hz, st.live_speed));
    Ok((StatusCode::CREATED, Json(st.live_status(guard.as_ref()))))
}

async fn live_stop(State(st): State<Arc<AppState>>) -> ApiResult<impl IntoResponse> {
    let rec = st
        .live
        .lock()
        .await
        .take()
        .ok_or_else(|| ApiError::conflict("not_recording", "no live recording is running"))?;
    let req = rec.request.clone();
    let recorded_at = rec.started_at;
    let channels = rec.finish().await;
    let new = NewSession {
        subject_id: req.subject_id,
        recorded_at,
        volume_ml: Some(req.volume_ml.unwrap_or(Volume::Ml10)),
        label: Some(req.kind.into()),
        segment: SignalSegment::new(st.sample_rate_hz, channels)?,
        envelope_peak_mv: Vec::new(),
        decode: None,
    };
    let rec = st.ingest_segment(new).await?;
    let id = rec.session_id.clone();
    if st.model.is_some() {
        let s2 = Arc::clone(&st);
        tokio::task::spawn_blocking(move || s2.score_blocking(&id)).await??;
    }
    let rec = st.store.get(&rec.session_id).unwrap_or(rec);
    Ok((StatusCode::CREATED, Json(st.view(rec))))
}
