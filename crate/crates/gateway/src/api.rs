//! HTTP and WebSocket service over a single [`Session`].

use std::collections::BTreeMap;
use std::io;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::sync::atomic::{AtomicBool, Ordering};

use auris_core::audio::{encode_wav, read_wav_file, FileReplaySource};
use auris_core::kb::{ClassUpdate, Importance, KbError, KnowledgeBase, RecordId, SoundRecord};
use auris_core::pipeline::{Mode, PipelineError, Session, SessionConfig, SessionState, StopSignal};
use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use crate::hub::Hub;

pub const DEFAULT_HISTORY_PAGE: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

impl From<KbError> for ApiError {
    fn from(e: KbError) -> Self {
        let (status, code) = match &e {
            KbError::Validation(_) => (StatusCode::BAD_REQUEST, "validation"),
            KbError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            KbError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            KbError::Schema { .. } | KbError::Audio { .. } => (StatusCode::BAD_REQUEST, "bad_payload"),
            KbError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "io"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        if let PipelineError::Kb(k) = e {
            return k.into();
        }
        let (status, code) = match &e {
            PipelineError::Busy(_) => (StatusCode::CONFLICT, "busy"),
            PipelineError::CannotRecognize(_) => (StatusCode::CONFLICT, "cannot_recognize"),
            PipelineError::NoSound => (StatusCode::UNPROCESSABLE_ENTITY, "no_sound"),
            PipelineError::NoPending => (StatusCode::CONFLICT, "no_pending"),
            PipelineError::Config(_) => (StatusCode::BAD_REQUEST, "invalid_config"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self::new(status, code, e.to_string())
    }
}

/// JSON body whose rejections use the structured error shape.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(r) => Err(ApiError::new(r.status(), "malformed_request", r.body_text())),
        }
    }
}

/// Parses an optional JSON body; an empty body gives the default.
fn optional_body<T: DeserializeOwned + Default>(bytes: &Bytes) -> Result<T, ApiError> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(bytes).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_request", e.to_string()))
}

type Outcome = Result<Value, PipelineError>;

struct Running {
    mode: Mode,
    stop: StopSignal,
    /// Set by the worker before it hands over its outcome.
    done: Arc<AtomicBool>,
    result: Option<oneshot::Receiver<Outcome>>,
}

pub struct AppState {
    pub session: Arc<Session>,
    pub hub: Arc<Hub>,
    /// Replayed when a request names no source.
    pub default_source: Option<PathBuf>,
    pub realtime_default: bool,
    running: Mutex<Option<Running>>,
}

impl AppState {
    pub fn new(
        kb: KnowledgeBase,
        kb_dir: Option<PathBuf>,
        config: SessionConfig,
        default_source: Option<PathBuf>,
        realtime_default: bool,
    ) -> Result<Self, PipelineError> {
        let hub = Arc::new(Hub::default());
        let mut session = Session::new(kb, config, hub.clone())?;
        if let Some(dir) = kb_dir {
            session = session.persist_to(dir);
        }
        Ok(Self {
            session: Arc::new(session),
            hub,
            default_source,
            realtime_default,
            running: Mutex::new(None),
        })
    }

    fn open_source(&self, req: &SourceRequest) -> Result<FileReplaySource, ApiError> {
        let path = req
            .source
            .clone()
            .or_else(|| self.default_source.clone())
            .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "no_source", "no audio source given and none configured"))?;
        if path.as_os_str() == "live" {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "unsupported_source",
                "live capture is not available; pass a WAV file",
            ));
        }
        let buf = read_wav_file(&path)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_source", format!("{}: {e}", path.display())))?;
        let src = FileReplaySource::new(buf);
        Ok(if req.realtime.unwrap_or(self.realtime_default) { src.realtime() } else { src })
    }

    /// Runs `job` on a worker thread unless another process holds the session.
    fn start<F>(&self, mode: Mode, job: F) -> Result<(), ApiError>
    where
        F: FnOnce(&Session, &StopSignal) -> Outcome + Send + 'static,
    {
        let mut running = self.running.lock().unwrap();
        if let Some(r) = running.as_ref() {
            if !r.done.load(Ordering::SeqCst) {
                return Err(PipelineError::Busy(r.mode).into());
            }
        }
        let current = self.session.mode();
        if current != Mode::Idle {
            return Err(PipelineError::Busy(current).into());
        }
        let stop = StopSignal::new();
        let (tx, rx) = oneshot::channel();
        let session = Arc::clone(&self.session);
        let s = stop.clone();
        let done = Arc::new(AtomicBool::new(false));
        let d = Arc::clone(&done);
        std::thread::spawn(move || {
            let outcome = job(&session, &s);
            d.store(true, Ordering::SeqCst);
            let _ = tx.send(outcome);
        });
        *running = Some(Running {
            mode,
            stop,
            done,
            result: Some(rx),
        });
        Ok(())
    }

    /// Result channel of the current process, leaving it registered.
    fn take_result(&self) -> Option<oneshot::Receiver<Outcome>> {
        self.running.lock().unwrap().as_mut().and_then(|r| r.result.take())
    }

    /// Signals the process in `mode` to stop and waits for its outcome.
    async fn stop(&self, mode: Mode) -> Result<Value, ApiError> {
        let rx = {
            let mut running = self.running.lock().unwrap();
            match running.as_mut() {
                Some(r) if r.mode == mode && r.result.is_some() => {
                    r.stop.stop();
                    r.result.take()
                }
                _ => None,
            }
        };
        let rx = rx.ok_or_else(|| {
            ApiError::new(StatusCode::CONFLICT, "not_running", format!("no {} process to stop", mode_name(mode)))
        })?;
        await_outcome(rx).await
    }

    pub fn is_running(&self) -> bool {
        self.running.lock().unwrap().as_ref().is_some_and(|r| !r.done.load(Ordering::SeqCst))
    }

    /// Stops whatever is running without waiting.
    pub fn stop_any(&self) {
        if let Some(r) = self.running.lock().unwrap().as_ref() {
            r.stop.stop();
        }
    }
}

async fn await_outcome(rx: oneshot::Receiver<Outcome>) -> Result<Value, ApiError> {
    match rx.await {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => Err(e.into()),
        Err(_) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "worker exited without a result")),
    }
}

fn mode_name(mode: Mode) -> String {
    serde_json::to_value(mode)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

type AppResult<T> = Result<T, ApiError>;
type Shared = State<Arc<AppState>>;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SourceRequest {
    source: Option<PathBuf>,
    realtime: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecognizeRequest {
    source: Option<PathBuf>,
    realtime: Option<bool>,
    environment: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct RecordView {
    pub id: RecordId,
    pub class_name: String,
    pub environment: Option<String>,
    pub created_at: u64,
    pub audio_url: Option<String>,
    pub features: Vec<f64>,
}

impl From<&SoundRecord> for RecordView {
    fn from(r: &SoundRecord) -> Self {
        Self {
            id: r.id,
            class_name: r.class_name.clone(),
            environment: r.environment.clone(),
            created_at: r.created_at,
            audio_url: r.audio.as_ref().map(|_| format!("/api/records/{}/audio", r.id)),
            features: r.features.values().to_vec(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SoundView {
    pub name: String,
    pub importance: Importance,
    pub excluded: bool,
    pub records: Vec<RecordView>,
}

fn sound_view(kb: &KnowledgeBase, name: &str) -> AppResult<SoundView> {
    let class = kb
        .class(name)
        .ok_or_else(|| ApiError::from(KbError::NotFound(format!("class '{name}'"))))?;
    Ok(SoundView {
        name: class.name.clone(),
        importance: class.importance,
        excluded: class.excluded,
        records: kb.records_of(name).map(RecordView::from).collect(),
    })
}

async fn list_sounds(State(app): Shared) -> AppResult<Json<Vec<SoundView>>> {
    let kb = app.session.kb();
    let names: Vec<String> = kb.classes().map(|c| c.name.clone()).collect();
    Ok(Json(names.iter().map(|n| sound_view(&kb, n)).collect::<Result<_, _>>()?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewSound {
    name: String,
    #[serde(default)]
    importance: Importance,
}

async fn create_sound(State(app): Shared, Body(req): Body<NewSound>) -> AppResult<impl IntoResponse> {
    app.session.update_kb(|kb| kb.create_class(&req.name, req.importance))?;
    let view = sound_view(&app.session.kb(), req.name.trim())?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_sound(State(app): Shared, Path(name): Path<String>) -> AppResult<Json<SoundView>> {
    Ok(Json(sound_view(&app.session.kb(), &name)?))
}

async fn update_sound(
    State(app): Shared,
    Path(name): Path<String>,
    Body(update): Body<ClassUpdate>,
) -> AppResult<Json<SoundView>> {
    app.session.update_kb(|kb| kb.update_class(&name, &update))?;
    let now = update.new_name.as_deref().map(str::trim).unwrap_or(&name);
    Ok(Json(sound_view(&app.session.kb(), now)?))
}

async fn delete_sound(State(app): Shared, Path(name): Path<String>) -> AppResult<Json<Value>> {
    let removed = app.session.update_kb(|kb| kb.delete_class(&name))?;
    Ok(Json(json!({ "deleted_records": removed })))
}

async fn delete_record(State(app): Shared, Path(id): Path<RecordId>) -> AppResult<StatusCode> {
    app.session.update_kb(|kb| kb.delete_record(id))?;
    Ok(StatusCode::NO_CONTENT)
}

async fn record_audio(State(app): Shared, Path(id): Path<RecordId>) -> AppResult<Response> {
    let kb = app.session.kb();
    let rec = kb
        .record(id)
        .ok_or_else(|| ApiError::from(KbError::NotFound(format!("record {id}"))))?;
    let audio = rec
        .audio
        .as_ref()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no_audio", format!("record {id} has no recording")))?;
    Ok(([(header::CONTENT_TYPE, "audio/wav")], encode_wav(audio)).into_response())
}

#[derive(Debug, Serialize)]
struct EnvironmentView {
    name: String,
    record_count: usize,
}

async fn list_environments(State(app): Shared) -> Json<Vec<EnvironmentView>> {
    let kb = app.session.kb();
    Json(
        kb.environments()
            .map(|e| EnvironmentView {
                name: e.clone(),
                record_count: kb.records().iter().filter(|r| r.environment.as_ref() == Some(e)).count(),
            })
            .collect(),
    )
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvironmentName {
    name: String,
}

async fn create_environment(State(app): Shared, Body(req): Body<EnvironmentName>) -> AppResult<impl IntoResponse> {
    app.session.update_kb(|kb| kb.add_environment(&req.name))?;
    Ok((StatusCode::CREATED, Json(json!({ "name": req.name.trim() }))))
}

async fn rename_environment(
    State(app): Shared,
    Path(name): Path<String>,
    Body(req): Body<EnvironmentName>,
) -> AppResult<Json<Value>> {
    app.session.update_kb(|kb| kb.rename_environment(&name, &req.name))?;
    Ok(Json(json!({ "name": req.name.trim() })))
}

async fn delete_environment(State(app): Shared, Path(name): Path<String>) -> AppResult<StatusCode> {
    app.session.update_kb(|kb| kb.delete_environment(&name))?;
    Ok(StatusCode::NO_CONTENT)
}

async fn grouped_records(State(app): Shared) -> Json<BTreeMap<String, Vec<RecordView>>> {
    let kb = app.session.kb();
    Json(
        kb.list_by_environment()
            .into_iter()
            .map(|(env, recs)| (env, recs.into_iter().map(RecordView::from).collect()))
            .collect(),
    )
}

fn to_value<T: Serialize>(v: T) -> Outcome {
    Ok(serde_json::to_value(v).expect("response types serialize"))
}

async fn record_start(State(app): Shared, body: Bytes) -> AppResult<impl IntoResponse> {
    let req: SourceRequest = optional_body(&body)?;
    let source = app.open_source(&req)?;
    app.start(Mode::Recording, move |s, stop| to_value(s.run_recording(source, stop)?))?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "mode": Mode::Recording }))))
}

async fn record_stop(State(app): Shared) -> AppResult<Json<Value>> {
    Ok(Json(app.stop(Mode::Recording).await?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelRequest {
    class_name: String,
    environment: Option<String>,
}

async fn record_label(State(app): Shared, Body(req): Body<LabelRequest>) -> AppResult<impl IntoResponse> {
    let id = app.session.label_pending(&req.class_name, req.environment.as_deref())?;
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))))
}

async fn record_cancel(State(app): Shared) -> AppResult<StatusCode> {
    app.session.cancel_pending()?;
    Ok(StatusCode::NO_CONTENT)
}

async fn recognize(State(app): Shared, body: Bytes) -> AppResult<Json<Value>> {
    let req: RecognizeRequest = optional_body(&body)?;
    let source = app.open_source(&SourceRequest {
        source: req.source,
        realtime: req.realtime,
    })?;
    let env = req.environment;
    app.start(Mode::ManualRecognition, move |s, stop| {
        to_value(s.run_manual_recognition(source, env.as_deref(), stop)?)
    })?;
    let rx = app
        .take_result()
        .ok_or_else(|| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "result channel missing"))?;
    Ok(Json(await_outcome(rx).await?))
}

async fn auto_start(State(app): Shared, body: Bytes) -> AppResult<impl IntoResponse> {
    let req: SourceRequest = optional_body(&body)?;
    let source = app.open_source(&req)?;
    app.start(Mode::AutoRecognition, move |s, stop| to_value(s.run_auto_recognition(source, stop)?))?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "mode": Mode::AutoRecognition }))))
}

async fn auto_stop(State(app): Shared) -> AppResult<Json<Value>> {
    Ok(Json(app.stop(Mode::AutoRecognition).await?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HistoryQuery {
    before: Option<u64>,
    limit: Option<usize>,
}

async fn history(State(app): Shared, Query(q): Query<HistoryQuery>) -> Json<Value> {
    let page = app.session.history().page(q.before, q.limit.unwrap_or(DEFAULT_HISTORY_PAGE));
    Json(serde_json::to_value(page).expect("results serialize"))
}

#[derive(Serialize)]
struct SessionView {
    #[serde(flatten)]
    state: SessionState,
    /// A worker started through the API has not finished yet.
    process_running: bool,
}

async fn session_state(State(app): Shared) -> Json<SessionView> {
    Json(SessionView {
        state: app.session.state(),
        process_running: app.is_running(),
    })
}

async fn get_config(State(app): Shared) -> Json<SessionConfig> {
    Json(app.session.config())
}

async fn put_config(State(app): Shared, Body(cfg): Body<SessionConfig>) -> AppResult<Json<SessionConfig>> {
    app.session.set_config(cfg)?;
    Ok(Json(app.session.config()))
}

async fn events(State(app): Shared, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| stream_events(app, socket))
}

#[derive(Deserialize)]
struct ClientCommand {
    command: String,
}

/// Sends every queued event as `{seq, kind, payload}`; accepts
/// `{"command": "stop"}` from the client.
async fn stream_events(app: Arc<AppState>, socket: WebSocket) {
    let sub = app.hub.subscribe();
    let (mut tx, mut rx) = socket.split();
    let mut seq: u64 = 0;
    loop {
        tokio::select! {
            _ = sub.ready() => {
                for event in sub.drain() {
                    seq += 1;
                    let mut v = serde_json::to_value(&event).expect("events serialize");
                    v["seq"] = json!(seq);
                    if tx.send(Message::Text(v.to_string().into())).await.is_err() {
                        return;
                    }
                }
            }
            msg = rx.next() => match msg {
                Some(Ok(Message::Text(text))) => {
                    if let Ok(cmd) = serde_json::from_str::<ClientCommand>(&text) {
                        if cmd.command == "stop" {
                            app.stop_any();
                        }
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            }
        }
    }
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/sounds", get(list_sounds).post(create_sound))
        .route("/api/sounds/{name}", get(get_sound).patch(update_sound).delete(delete_sound))
        .route("/api/records/{id}", axum::routing::delete(delete_record))
        .route("/api/records/{id}/audio", get(record_audio))
        .route("/api/environments", get(list_environments).post(create_environment))
        .route("/api/environments/grouped", get(grouped_records))
        .route("/api/environments/{name}", patch(rename_environment).delete(delete_environment))
        .route("/api/record/start", post(record_start))
        .route("/api/record/stop", post(record_stop))
        .route("/api/record/label", post(record_label))
        .route("/api/record/cancel", post(record_cancel))
        .route("/api/recognize", post(recognize))
        .route("/api/auto/start", post(auto_start))
        .route("/api/auto/stop", post(auto_stop))
        .route("/api/history", get(history))
        .route("/api/session", get(session_state))
        .route("/api/config", get(get_config).put(put_config))
        .route("/api/events", get(events))
        .fallback(not_found)
        .with_state(state)
}

pub async fn serve(listener: TcpListener, state: Arc<AppState>) -> io::Result<()> {
    axum::serve(listener, router(state)).await
}
