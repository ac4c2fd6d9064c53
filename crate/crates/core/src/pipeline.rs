//! Recording, manual recognition and automatic recognition sessions.
//!
//! One capture loop (frames -> admission -> segmentation -> display columns)
//! drives all three processes. Automatic recognition hands each closed
//! segment to its own worker thread and re-orders the results by segment
//! start before they reach the history and the event sink.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioSource, Frame, Framer, SampleBuffer, SAMPLE_RATE};
use crate::classify::{train_naive_bayes, ClassifyError, NaiveBayesModel};
use crate::confidence::{gpi_with, ConfidenceConfig, ConfidenceError, GpiResult};
use crate::detection::{AdmissionConfig, ConfigError, EndReason, SegmentEvent, Segmenter};
use crate::dsp::{spectrogram_column, ColumnRate, ColumnState, SpectrogramColumn, DISPLAY_FFT_LEN};
use crate::features::{extract_segment_features, FeatureError, FeatureVector};
use crate::kb::{Importance, KbError, KnowledgeBase, RecordId};

pub const DEFAULT_HISTORY_CAPACITY: usize = 500;
pub const DEFAULT_RECORDING_TIMEOUT_S: f64 = 30.0;
pub const DEFAULT_DELAY_THRESHOLD_MS: f64 = 250.0;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("another process is running ({0:?})")]
    Busy(Mode),
    #[error("cannot recognize: {0}")]
    CannotRecognize(String),
    #[error("no sound was detected")]
    NoSound,
    #[error("no recording is waiting for a label")]
    NoPending,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Confidence(#[from] ConfidenceError),
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Idle,
    Recording,
    ManualRecognition,
    AutoRecognition,
}

/// Cooperative stop request shared with whoever drives a session.
#[derive(Debug, Clone, Default)]
pub struct StopSignal(Arc<AtomicBool>);

impl StopSignal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stop(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_stopped(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisplayState {
    Shown,
    Suppressed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognitionResult {
    /// Session-wide sequence number, increasing in emission order.
    pub id: u64,
    /// Segment start, seconds from the start of the stream.
    pub timestamp: f64,
    pub segment_end: f64,
    pub end_reason: EndReason,
    /// Wall clock at emission, Unix milliseconds.
    pub detected_at_ms: u64,
    pub class_name: String,
    pub posterior: f64,
    pub gpi: GpiResult,
    pub level: u8,
    pub importance: Importance,
    pub display_state: DisplayState,
    pub model_revision: u64,
    /// Segment close to result ready.
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnPayload {
    pub timestamp: f64,
    pub state: ColumnState,
    pub values: Vec<u8>,
}

impl From<&SpectrogramColumn> for ColumnPayload {
    fn from(c: &SpectrogramColumn) -> Self {
        Self {
            timestamp: c.timestamp,
            state: c.state,
            values: c.quantized(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub start_time: f64,
    pub end_time: f64,
    pub duration: f64,
    pub end_reason: EndReason,
}

impl From<&SegmentEvent> for SegmentSummary {
    fn from(s: &SegmentEvent) -> Self {
        Self {
            start_time: s.start_time(),
            end_time: s.end_time(),
            duration: s.duration(),
            end_reason: s.end_reason,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum PipelineEvent {
    SpectrogramColumn(ColumnPayload),
    DetectionState { timestamp: f64, active: bool, mode: Mode },
    RecognitionResult(RecognitionResult),
    DelayWarning { timestamp: f64, lag_ms: f64 },
    PendingLabelRequest(SegmentSummary),
}

impl PipelineEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::SpectrogramColumn(_) => "spectrogram_column",
            Self::DetectionState { .. } => "detection_state",
            Self::RecognitionResult(_) => "recognition_result",
            Self::DelayWarning { .. } => "delay_warning",
            Self::PendingLabelRequest(_) => "pending_label_request",
        }
    }
}

pub trait EventSink: Send + Sync {
    fn emit(&self, event: PipelineEvent);
}

pub struct NullSink;

impl EventSink for NullSink {
    fn emit(&self, _: PipelineEvent) {}
}

impl EventSink for crossbeam_channel::Sender<PipelineEvent> {
    fn emit(&self, event: PipelineEvent) {
        // a gone receiver just means nobody is listening
        let _ = self.send(event);
    }
}

/// Keeps every event in memory.
#[derive(Default)]
pub struct EventLog(Mutex<Vec<PipelineEvent>>);

impl EventLog {
    pub fn events(&self) -> Vec<PipelineEvent> {
        self.0.lock().unwrap().clone()
    }

    pub fn of_kind(&self, kind: &str) -> Vec<PipelineEvent> {
        self.events().into_iter().filter(|e| e.kind() == kind).collect()
    }

    pub fn results(&self) -> Vec<RecognitionResult> {
        self.events()
            .into_iter()
            .filter_map(|e| match e {
                PipelineEvent::RecognitionResult(r) => Some(r),
                _ => None,
            })
            .collect()
    }

    pub fn clear(&self) {
        self.0.lock().unwrap().clear();
    }
}

impl EventSink for EventLog {
    fn emit(&self, event: PipelineEvent) {
        self.0.lock().unwrap().push(event);
    }
}

/// Bounded, append-only list of results, oldest dropped first.
#[derive(Debug, Clone)]
pub struct History {
    capacity: usize,
    items: VecDeque<RecognitionResult>,
}

impl History {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, r: RecognitionResult) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(r);
    }

    pub fn set_capacity(&mut self, capacity: usize) {
        self.capacity = capacity.max(1);
        while self.items.len() > self.capacity {
            self.items.pop_front();
        }
    }

    pub fn snapshot(&self) -> Vec<RecognitionResult> {
        self.items.iter().cloned().collect()
    }

    /// Up to `limit` results with id below `before` (all ids when `None`),
    /// oldest first.
    pub fn page(&self, before: Option<u64>, limit: usize) -> Vec<RecognitionResult> {
        let eligible: Vec<_> = self
            .items
            .iter()
            .filter(|r| before.is_none_or(|b| r.id < b))
            .collect();
        let skip = eligible.len().saturating_sub(limit);
        eligible[skip..].iter().map(|r| (*r).clone()).collect()
    }
}

/// Releases items strictly in sequence order however they arrive.
#[derive(Debug)]
pub struct ReorderBuffer<T> {
    next: u64,
    waiting: BTreeMap<u64, T>,
}

impl<T> Default for ReorderBuffer<T> {
    fn default() -> Self {
        Self {
            next: 0,
            waiting: BTreeMap::new(),
        }
    }
}

impl<T> ReorderBuffer<T> {
    pub fn push(&mut self, seq: u64, item: T) -> Vec<T> {
        self.waiting.insert(seq, item);
        let mut ready = Vec::new();
        while let Some(item) = self.waiting.remove(&self.next) {
            ready.push(item);
            self.next += 1;
        }
        ready
    }

    pub fn pending(&self) -> usize {
        self.waiting.len()
    }
}

/// Flags when output lags the stream by more than a threshold.
#[derive(Debug)]
pub struct DelayMonitor {
    started: Instant,
    threshold_ms: f64,
    warned: bool,
}

impl DelayMonitor {
    pub fn new(threshold_ms: f64) -> Self {
        Self {
            started: Instant::now(),
            threshold_ms,
            warned: false,
        }
    }

    /// Lag to report when output for `stream_secs` is produced now. Warns
    /// once per excursion above the threshold.
    pub fn check(&mut self, stream_secs: f64) -> Option<f64> {
        self.check_at(stream_secs, self.started.elapsed().as_secs_f64())
    }

    pub fn check_at(&mut self, stream_secs: f64, wall_secs: f64) -> Option<f64> {
        let lag_ms = (wall_secs - stream_secs) * 1e3;
        if lag_ms > self.threshold_ms {
            if !self.warned {
                self.warned = true;
                return Some(lag_ms);
            }
        } else {
            self.warned = false;
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub admission: AdmissionConfig,
    pub confidence: ConfidenceConfig,
    pub column_rate: ColumnRate,
    pub recording_timeout_s: f64,
    pub history_capacity: usize,
    pub delay_threshold_ms: f64,
    /// Restricts recognition to records of this environment plus unlabeled ones.
    pub active_environment: Option<String>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            admission: AdmissionConfig::default(),
            confidence: ConfidenceConfig::default(),
            column_rate: ColumnRate::High,
            recording_timeout_s: DEFAULT_RECORDING_TIMEOUT_S,
            history_capacity: DEFAULT_HISTORY_CAPACITY,
            delay_threshold_ms: DEFAULT_DELAY_THRESHOLD_MS,
            active_environment: None,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.admission.validate()?;
        if !(self.recording_timeout_s > 0.0 && self.recording_timeout_s.is_finite()) {
            return Err(PipelineError::Config("recording_timeout_s must be positive".into()));
        }
        if self.history_capacity == 0 {
            return Err(PipelineError::Config("history_capacity must be at least 1".into()));
        }
        if !(self.delay_threshold_ms > 0.0 && self.delay_threshold_ms.is_finite()) {
            return Err(PipelineError::Config("delay_threshold_ms must be positive".into()));
        }
        Ok(())
    }
}

/// A classifier snapshot plus the raw instances GPI needs.
#[derive(Debug)]
pub struct TrainedModel {
    pub nb: NaiveBayesModel,
    pub instances: BTreeMap<String, Vec<Vec<f64>>>,
    pub revision: u64,
    pub environment: Option<String>,
}

impl TrainedModel {
    pub fn train(kb: &KnowledgeBase, environment: Option<&str>) -> Result<Self, PipelineError> {
        let set = kb.training_set(environment);
        if set.is_empty() {
            return Err(PipelineError::CannotRecognize(match environment {
                Some(env) => format!("no trainable records for environment '{env}'"),
                None => "the knowledge base has no trainable records".into(),
            }));
        }
        let nb = train_naive_bayes(&set)?;
        let mut instances: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
        for s in &set.samples {
            instances.entry(s.label.clone()).or_default().push(s.features.values().to_vec());
        }
        Ok(Self {
            nb,
            instances,
            revision: set.revision,
            environment: environment.map(str::to_string),
        })
    }

    /// Best class, its posterior, and the pertinence of the query to it.
    pub fn recognize(
        &self,
        features: &FeatureVector,
        confidence: &ConfidenceConfig,
    ) -> Result<(String, f64, GpiResult), PipelineError> {
        let top = self.nb.predict(features.values())?;
        let members = &self.instances[&top.class];
        let g = gpi_with(features.values(), members, &top.class, confidence.bounds_for(&top.class))?;
        Ok((top.class, top.posterior, g))
    }
}

/// What a recording session ended with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "segment", rename_all = "snake_case")]
pub enum RecordingOutcome {
    /// A segment waits for its label.
    Captured(SegmentSummary),
    /// Nothing was admitted for the configured time.
    Timeout,
    /// Stopped before a keepable segment existed.
    Discarded,
    SourceExhausted,
}

#[derive(Debug, Clone)]
pub struct PendingRecording {
    pub segment: SegmentEvent,
    pub features: FeatureVector,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AutoSummary {
    pub segments: usize,
    pub results: usize,
    pub suppressed: usize,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub mode: Mode,
    pub active_environment: Option<String>,
    pub kb_revision: u64,
    pub model_revision: Option<u64>,
    pub stale: bool,
    pub pending_label: Option<SegmentSummary>,
}

enum CaptureEnd {
    /// The segment callback asked to stop.
    Done,
    Stopped,
    Timeout,
    Exhausted,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Builds display columns from consecutive pairs of frames.
struct ColumnBuilder {
    block: Vec<f64>,
    block_start: usize,
    produced: usize,
    decimation: usize,
}

impl ColumnBuilder {
    fn new(rate: ColumnRate) -> Self {
        Self {
            block: Vec::with_capacity(DISPLAY_FFT_LEN),
            block_start: 0,
            produced: 0,
            decimation: rate.decimation(),
        }
    }

    fn push(&mut self, frame: &Frame, state: ColumnState) -> Option<SpectrogramColumn> {
        if self.block.is_empty() {
            self.block_start = frame.start;
        }
        self.block.extend_from_slice(&frame.samples);
        if self.block.len() < DISPLAY_FFT_LEN {
            return None;
        }
        let timestamp = self.block_start as f64 / SAMPLE_RATE as f64;
        let keep = self.produced % self.decimation == 0;
        self.produced += 1;
        let column = keep.then(|| spectrogram_column(&self.block, timestamp, state).expect("block is full"));
        self.block.clear();
        column
    }
}

/// Releases the session mode when a process ends, however it ends.
/// Returns the session to idle when a process ends, however it ends. If the
/// process captured audio, the closing `detection_state` goes out here so
/// that it follows every result of the process.
struct ModeGuard<'a>(&'a Session);

impl Drop for ModeGuard<'_> {
    fn drop(&mut self) {
        *self.0.mode.lock().unwrap() = Mode::Idle;
        if let Some(end) = self.0.capture_end.lock().unwrap().take() {
            self.0.sink.emit(PipelineEvent::DetectionState {
                timestamp: end,
                active: false,
                mode: Mode::Idle,
            });
        }
    }
}

pub struct Session {
    kb: RwLock<KnowledgeBase>,
    kb_dir: Option<PathBuf>,
    config: RwLock<SessionConfig>,
    models: Mutex<HashMap<Option<String>, Arc<TrainedModel>>>,
    trainings: AtomicU64,
    mode: Mutex<Mode>,
    history: RwLock<History>,
    next_result_id: AtomicU64,
    /// Stream time at which the running process stopped capturing.
    capture_end: Mutex<Option<f64>>,
    pending: Mutex<Option<PendingRecording>>,
    sink: Arc<dyn EventSink>,
}

impl Session {
    pub fn new(kb: KnowledgeBase, config: SessionConfig, sink: Arc<dyn EventSink>) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Self {
            kb: RwLock::new(kb),
            kb_dir: None,
            history: RwLock::new(History::new(config.history_capacity)),
            config: RwLock::new(config),
            models: Mutex::new(HashMap::new()),
            trainings: AtomicU64::new(0),
            mode: Mutex::new(Mode::Idle),
            next_result_id: AtomicU64::new(0),
            capture_end: Mutex::new(None),
            pending: Mutex::new(None),
            sink,
        })
    }

    /// Saves the knowledge base to `dir` after every mutation.
    pub fn persist_to(mut self, dir: impl Into<PathBuf>) -> Self {
        self.kb_dir = Some(dir.into());
        self
    }

    pub fn kb(&self) -> RwLockReadGuard<'_, KnowledgeBase> {
        self.kb.read().unwrap()
    }

    /// Applies `f` to a copy of the knowledge base, persists the copy, then
    /// swaps it in. A failed mutation or save leaves the session unchanged.
    pub fn update_kb<R>(&self, f: impl FnOnce(&mut KnowledgeBase) -> Result<R, KbError>) -> Result<R, PipelineError> {
        let mut guard = self.kb.write().unwrap();
        let mut next = guard.clone();
        let out = f(&mut next)?;
        if let Some(dir) = &self.kb_dir {
            next.save(dir)?;
        }
        *guard = next;
        Ok(out)
    }

    pub fn config(&self) -> SessionConfig {
        self.config.read().unwrap().clone()
    }

    pub fn set_config(&self, config: SessionConfig) -> Result<(), PipelineError> {
        config.validate()?;
        self.history.write().unwrap().set_capacity(config.history_capacity);
        *self.config.write().unwrap() = config;
        Ok(())
    }

    pub fn mode(&self) -> Mode {
        *self.mode.lock().unwrap()
    }

    pub fn history(&self) -> RwLockReadGuard<'_, History> {
        self.history.read().unwrap()
    }

    /// Number of classifier builds so far.
    pub fn training_count(&self) -> u64 {
        self.trainings.load(Ordering::SeqCst)
    }

    pub fn state(&self) -> SessionState {
        let env = self.config().active_environment;
        let kb_revision = self.kb().revision();
        let model_revision = self.models.lock().unwrap().get(&env).map(|m| m.revision);
        SessionState {
            mode: self.mode(),
            stale: model_revision.is_none_or(|r| r < kb_revision),
            active_environment: env,
            kb_revision,
            model_revision,
            pending_label: self.pending.lock().unwrap().as_ref().map(|p| SegmentSummary::from(&p.segment)),
        }
    }

    fn begin(&self, mode: Mode) -> Result<ModeGuard<'_>, PipelineError> {
        let mut current = self.mode.lock().unwrap();
        if *current != Mode::Idle {
            return Err(PipelineError::Busy(*current));
        }
        *current = mode;
        Ok(ModeGuard(self))
    }

    /// The model for `environment`, rebuilt only if the knowledge base
    /// changed since it was trained. Callers holding the previous `Arc`
    /// keep using it.
    pub fn ensure_trained(&self, environment: Option<&str>) -> Result<Arc<TrainedModel>, PipelineError> {
        let key = environment.map(str::to_string);
        let mut models = self.models.lock().unwrap();
        let kb = self.kb();
        if let Some(m) = models.get(&key) {
            if m.revision == kb.revision() {
                return Ok(Arc::clone(m));
            }
        }
        let model = Arc::new(TrainedModel::train(&kb, environment)?);
        self.trainings.fetch_add(1, Ordering::SeqCst);
        models.insert(key, Arc::clone(&model));
        Ok(model)
    }

    fn capture(
        &self,
        source: impl AudioSource,
        stop: &StopSignal,
        mode: Mode,
        timeout: Option<usize>,
        on_segment: impl FnMut(SegmentEvent, Instant) -> bool,
    ) -> CaptureEnd {
        self.sink.emit(PipelineEvent::DetectionState {
            timestamp: 0.0,
            active: false,
            mode,
        });
        let mut framer = Framer::new(source);
        let end = self.capture_frames(&mut framer, stop, mode, timeout, on_segment);
        *self.capture_end.lock().unwrap() = Some(framer.position() as f64 / SAMPLE_RATE as f64);
        end
    }

    fn capture_frames<S: AudioSource>(
        &self,
        framer: &mut Framer<S>,
        stop: &StopSignal,
        mode: Mode,
        timeout: Option<usize>,
        mut on_segment: impl FnMut(SegmentEvent, Instant) -> bool,
    ) -> CaptureEnd {
        let cfg = self.config();
        let mut segmenter = Segmenter::new(cfg.admission.clone());
        let mut columns = ColumnBuilder::new(cfg.column_rate);
        let mut delay = DelayMonitor::new(cfg.delay_threshold_ms);
        let mut quiet_since = 0usize;
        loop {
            if stop.is_stopped() {
                if let Some(s) = segmenter.user_stop() {
                    on_segment(s, Instant::now());
                }
                return CaptureEnd::Stopped;
            }
            let Some(frame) = framer.next() else {
                if let Some(s) = segmenter.finish() {
                    if on_segment(s, Instant::now()) {
                        return CaptureEnd::Done;
                    }
                }
                return CaptureEnd::Exhausted;
            };
            let was_active = segmenter.is_active();
            let step = segmenter.push(&frame);
            let closed_at = Instant::now();
            if step.admission.is_admitted() {
                quiet_since = frame.end();
            }
            let t = frame.start as f64 / SAMPLE_RATE as f64;
            if step.active != was_active {
                self.sink.emit(PipelineEvent::DetectionState {
                    timestamp: t,
                    active: step.active,
                    mode,
                });
            }
            let state = if was_active || step.active {
                ColumnState::Active
            } else {
                ColumnState::Monitor
            };
            if let Some(col) = columns.push(&frame, state) {
                self.sink.emit(PipelineEvent::SpectrogramColumn((&col).into()));
                if let Some(lag_ms) = delay.check(frame.end() as f64 / SAMPLE_RATE as f64) {
                    self.sink.emit(PipelineEvent::DelayWarning { timestamp: t, lag_ms });
                }
            }
            for s in step.emitted {
                if on_segment(s, closed_at) {
                    return CaptureEnd::Done;
                }
            }
            if let Some(limit) = timeout {
                if !segmenter.is_active() && frame.end() - quiet_since >= limit {
                    return CaptureEnd::Timeout;
                }
            }
        }
    }

    fn timeout_samples(&self) -> usize {
        (self.config().recording_timeout_s * SAMPLE_RATE as f64).round() as usize
    }

    /// Waits for one sound and keeps it until it is labeled or cancelled.
    pub fn run_recording(&self, source: impl AudioSource, stop: &StopSignal) -> Result<RecordingOutcome, PipelineError> {
        let _guard = self.begin(Mode::Recording)?;
        let mut captured = None;
        let end = self.capture(source, stop, Mode::Recording, Some(self.timeout_samples()), |s, _| {
            captured = Some(s);
            true
        });
        let Some(segment) = captured else {
            return Ok(match end {
                CaptureEnd::Timeout => RecordingOutcome::Timeout,
                CaptureEnd::Exhausted => RecordingOutcome::SourceExhausted,
                CaptureEnd::Stopped | CaptureEnd::Done => RecordingOutcome::Discarded,
            });
        };
        let features = extract_segment_features(&segment.frames())?;
        let summary = SegmentSummary::from(&segment);
        *self.pending.lock().unwrap() = Some(PendingRecording { segment, features });
        self.sink.emit(PipelineEvent::PendingLabelRequest(summary.clone()));
        Ok(RecordingOutcome::Captured(summary))
    }

    pub fn pending(&self) -> Option<PendingRecording> {
        self.pending.lock().unwrap().clone()
    }

    /// Stores the pending recording under `class_name`.
    pub fn label_pending(&self, class_name: &str, environment: Option<&str>) -> Result<RecordId, PipelineError> {
        let mut pending = self.pending.lock().unwrap();
        let p = pending.as_ref().ok_or(PipelineError::NoPending)?;
        let audio = SampleBuffer::from_clamped(p.segment.samples.iter().copied());
        let features = p.features.clone();
        let id = self.update_kb(|kb| kb.add_record(class_name, environment, features, Some(&audio)))?;
        *pending = None;
        Ok(id)
    }

    pub fn cancel_pending(&self) -> Result<(), PipelineError> {
        self.pending.lock().unwrap().take().map(|_| ()).ok_or(PipelineError::NoPending)
    }

    fn build_result(
        &self,
        model: &TrainedModel,
        segment: &SegmentEvent,
        closed_at: Instant,
        confidence: &ConfidenceConfig,
    ) -> Result<RecognitionResult, PipelineError> {
        let features = extract_segment_features(&segment.frames())?;
        let (class_name, posterior, gpi) = model.recognize(&features, confidence)?;
        let importance = self
            .kb()
            .class(&class_name)
            .map(|c| c.importance)
            .unwrap_or(Importance::Usual);
        Ok(RecognitionResult {
            id: 0,
            timestamp: segment.start_time(),
            segment_end: segment.end_time(),
            end_reason: segment.end_reason,
            detected_at_ms: 0,
            level: gpi.level,
            class_name,
            posterior,
            gpi,
            importance,
            display_state: if importance == Importance::Ignore {
                DisplayState::Suppressed
            } else {
                DisplayState::Shown
            },
            model_revision: model.revision,
            latency_ms: closed_at.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Stamps, records and (unless suppressed) announces a result.
    fn publish(&self, mut r: RecognitionResult) -> RecognitionResult {
        r.id = self.next_result_id.fetch_add(1, Ordering::SeqCst);
        r.detected_at_ms = now_ms();
        self.history.write().unwrap().push(r.clone());
        if r.display_state == DisplayState::Shown {
            self.sink.emit(PipelineEvent::RecognitionResult(r.clone()));
        }
        r
    }

    /// Captures one sound and classifies it.
    pub fn run_manual_recognition(
        &self,
        source: impl AudioSource,
        environment: Option<&str>,
        stop: &StopSignal,
    ) -> Result<RecognitionResult, PipelineError> {
        let _guard = self.begin(Mode::ManualRecognition)?;
        let model = self.ensure_trained(environment)?;
        let mut captured = None;
        self.capture(source, stop, Mode::ManualRecognition, Some(self.timeout_samples()), |s, at| {
            captured = Some((s, at));
            true
        });
        let (segment, closed_at) = captured.ok_or(PipelineError::NoSound)?;
        let confidence = self.config().confidence;
        let r = self.build_result(&model, &segment, closed_at, &confidence)?;
        Ok(self.publish(r))
    }

    /// Recognizes every sound until the source ends or `stop` is raised.
    ///
    /// Each segment is classified on its own thread with the model current
    /// when the segment closed; results are published in segment order.
    pub fn run_auto_recognition(&self, source: impl AudioSource, stop: &StopSignal) -> Result<AutoSummary, PipelineError> {
        let _guard = self.begin(Mode::AutoRecognition)?;
        let cfg = self.config();
        let env = cfg.active_environment.as_deref();
        self.ensure_trained(env)?;
        let (tx, rx) = crossbeam_channel::unbounded::<(u64, Result<RecognitionResult, String>)>();
        let mut summary = AutoSummary::default();
        std::thread::scope(|scope| {
            let collector = scope.spawn(|| {
                let mut reorder = ReorderBuffer::default();
                let (mut results, mut suppressed, mut failures) = (0, 0, Vec::new());
                for (seq, outcome) in rx {
                    for ready in reorder.push(seq, outcome) {
                        match ready {
                            Ok(r) => {
                                let r = self.publish(r);
                                results += 1;
                                suppressed += usize::from(r.display_state == DisplayState::Suppressed);
                            }
                            Err(e) => failures.push(e),
                        }
                    }
                }
                (results, suppressed, failures)
            });
            let mut seq = 0u64;
            self.capture(source, stop, Mode::AutoRecognition, None, |segment, closed_at| {
                let model = self.ensure_trained(env);
                let tx = tx.clone();
                let confidence = &cfg.confidence;
                let n = seq;
                seq += 1;
                scope.spawn(move || {
                    let outcome = model
                        .and_then(|m| self.build_result(&m, &segment, closed_at, confidence))
                        .map_err(|e| format!("segment at {:.3}s: {e}", segment.start_time()));
                    let _ = tx.send((n, outcome));
                });
                false
            });
            drop(tx);
            summary.segments = seq as usize;
            let (results, suppressed, failures) = collector.join().expect("collector thread");
            summary.results = results;
            summary.suppressed = suppressed;
            summary.failures = failures;
        });
        Ok(summary)
    }
}
