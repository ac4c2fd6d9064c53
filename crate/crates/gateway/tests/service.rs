use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use auris_core::audio::{write_wav_file, SampleBuffer};
use auris_core::kb::KnowledgeBase;
use auris_core::pipeline::SessionConfig;
use auris_core::synth::{generate, SynthInstance};
use auris_gateway::api::{self, AppState};
use futures_util::StreamExt;
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};
use tempfile::TempDir;
use tokio_tungstenite::tungstenite::Message;

struct Service {
    base: String,
    ws: String,
    http: Client,
    dir: TempDir,
    instances: Vec<SynthInstance>,
}

impl Service {
    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn get(&self, path: &str) -> (StatusCode, Value) {
        let r = self.http.get(self.url(path)).send().await.unwrap();
        let status = r.status();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    async fn send(&self, method: reqwest::Method, path: &str, body: Option<Value>) -> (StatusCode, Value) {
        let mut req = self.http.request(method, self.url(path));
        if let Some(b) = body {
            req = req.json(&b);
        }
        let r = req.send().await.unwrap();
        let status = r.status();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        self.send(reqwest::Method::POST, path, Some(body)).await
    }

    fn wav(&self, name: &str, samples: Vec<f64>) -> String {
        let path = self.dir.path().join(name);
        write_wav_file(&path, &SampleBuffer::from_clamped(samples)).unwrap();
        path.to_string_lossy().into_owned()
    }

    /// Three recordings of `class`, back to back.
    fn three_of(&self, class: &str) -> Vec<f64> {
        self.instances
            .iter()
            .filter(|i| i.class == class)
            .take(3)
            .flat_map(|i| i.audio.samples().to_vec())
            .collect()
    }

    async fn wait_idle(&self) {
        let t0 = Instant::now();
        loop {
            let (_, s) = self.get("/api/session").await;
            if s["process_running"] == false {
                return;
            }
            assert!(t0.elapsed() < Duration::from_secs(30), "process never finished");
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }
}

fn kb_dir(dir: &Path) -> PathBuf {
    dir.join("kb")
}

/// Starts a service on an ephemeral loopback port. With `populated`, the
/// knowledge base holds four synthetic classes of five recordings each.
async fn start(populated: bool) -> Service {
    let dir = tempfile::tempdir().unwrap();
    let instances = generate(4, 5, 77).unwrap();
    let mut kb = KnowledgeBase::new();
    if populated {
        for inst in &instances {
            kb.add_record(&inst.class, None, inst.features.clone(), None).unwrap();
        }
    }
    let state = Arc::new(AppState::new(kb, Some(kb_dir(dir.path())), SessionConfig::default(), None, false).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(api::serve(listener, state));
    Service {
        base: format!("http://{addr}"),
        ws: format!("ws://{addr}/api/events"),
        http: Client::new(),
        dir,
        instances,
    }
}

#[tokio::test]
async fn empty_kb_lists_nothing() {
    let s = start(false).await;
    assert_eq!(s.get("/api/sounds").await, (StatusCode::OK, json!([])));
    assert_eq!(s.get("/api/environments").await, (StatusCode::OK, json!([])));
    let (status, body) = s.get("/api/nope").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "not_found");
}

#[tokio::test]
async fn sound_crud_reads_its_writes_and_persists() {
    let s = start(false).await;
    let (status, body) = s.post("/api/sounds", json!({ "name": "doorbell" })).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["importance"], "usual");
    let (status, body) = s.post("/api/sounds", json!({ "name": "doorbell" })).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "conflict");

    let (status, body) = s
        .send(reqwest::Method::PATCH, "/api/sounds/doorbell", Some(json!({ "importance": "urgent" })))
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["importance"], "urgent");
    assert_eq!(s.get("/api/sounds/doorbell").await.1["importance"], "urgent");
    let on_disk = KnowledgeBase::load(kb_dir(s.dir.path())).unwrap();
    assert_eq!(on_disk.class("doorbell").unwrap().importance, auris_core::kb::Importance::Urgent);

    let (status, body) = s
        .send(reqwest::Method::PATCH, "/api/sounds/doorbell", Some(json!({ "new_name": "bell", "excluded": true })))
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["name"], "bell");
    assert_eq!(body["excluded"], true);
    assert_eq!(s.get("/api/sounds/doorbell").await.0, StatusCode::NOT_FOUND);

    let (status, body) = s.send(reqwest::Method::DELETE, "/api/sounds/bell", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["deleted_records"], 0);
    assert_eq!(s.get("/api/sounds").await.1, json!([]));
}

#[tokio::test]
async fn malformed_requests_get_structured_errors() {
    let s = start(false).await;
    let r = s
        .http
        .post(s.url("/api/sounds"))
        .header("content-type", "application/json")
        .body("{\"name\": ")
        .send()
        .await
        .unwrap();
    assert!(r.status().is_client_error());
    let body: Value = r.json().await.unwrap();
    assert_eq!(body["error"]["code"], "malformed_request");

    let (status, body) = s.post("/api/sounds", json!({ "name": "x", "colour": "red" })).await;
    assert!(status.is_client_error());
    assert_eq!(body["error"]["code"], "malformed_request");

    let (status, body) = s.post("/api/sounds", json!({ "name": "   " })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "validation");

    let (status, body) = s.post("/api/record/start", json!({ "source": "live" })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "unsupported_source");
    let (status, body) = s.post("/api/record/start", json!({})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "no_source");
    let (status, body) = s.post("/api/record/stop", json!({})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "not_running");
    let (status, body) = s.post("/api/record/label", json!({ "class_name": "x" })).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "no_pending");
}

#[tokio::test]
async fn environments_and_grouping() {
    let s = start(true).await;
    assert_eq!(s.post("/api/environments", json!({ "name": "kitchen" })).await.0, StatusCode::CREATED);
    let (status, _) = s
        .send(reqwest::Method::PATCH, "/api/environments/kitchen", Some(json!({ "name": "galley" })))
        .await;
    assert_eq!(status, StatusCode::OK);
    let (_, envs) = s.get("/api/environments").await;
    assert_eq!(envs, json!([{ "name": "galley", "record_count": 0 }]));
    let (_, grouped) = s.get("/api/environments/grouped").await;
    assert_eq!(grouped["(none)"].as_array().unwrap().len(), 20);
    assert_eq!(
        s.send(reqwest::Method::DELETE, "/api/environments/galley", None).await.0,
        StatusCode::NO_CONTENT
    );
    assert_eq!(
        s.send(reqwest::Method::DELETE, "/api/environments/galley", None).await.0,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn record_label_and_fetch_audio() {
    let s = start(false).await;
    let wav = s.wav("burst.wav", s.instances[0].audio.samples().to_vec());
    let (status, _) = s.post("/api/record/start", json!({ "source": wav })).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    s.wait_idle().await;
    let (_, state) = s.get("/api/session").await;
    assert_eq!(state["mode"], "idle");
    assert!(state["pending_label"]["duration"].as_f64().unwrap() >= 0.4);
    let (status, outcome) = s.post("/api/record/stop", json!({})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(outcome["outcome"], "captured");

    let (status, body) = s
        .post("/api/record/label", json!({ "class_name": "kettle", "environment": "kitchen" }))
        .await;
    assert_eq!(status, StatusCode::CREATED);
    let id = body["id"].as_u64().unwrap();
    let (_, sounds) = s.get("/api/sounds").await;
    assert_eq!(sounds[0]["records"][0]["environment"], "kitchen");
    assert_eq!(sounds[0]["records"][0]["features"].as_array().unwrap().len(), 54);
    let audio_url = sounds[0]["records"][0]["audio_url"].as_str().unwrap().to_string();
    let r = s.http.get(s.url(&audio_url)).send().await.unwrap();
    assert_eq!(r.headers()["content-type"], "audio/wav");
    let bytes = r.bytes().await.unwrap();
    assert_eq!(&bytes[..4], b"RIFF");
    assert!(KnowledgeBase::load(kb_dir(s.dir.path())).unwrap().record(id).is_some());

    // a second take, cancelled, leaves the count alone
    s.post("/api/record/start", json!({ "source": wav })).await;
    s.wait_idle().await;
    assert_eq!(
        s.send(reqwest::Method::POST, "/api/record/cancel", None).await.0,
        StatusCode::NO_CONTENT
    );
    let (_, sounds) = s.get("/api/sounds").await;
    assert_eq!(sounds[0]["records"].as_array().unwrap().len(), 1);

    assert_eq!(
        s.send(reqwest::Method::DELETE, &format!("/api/records/{id}"), None).await.0,
        StatusCode::NO_CONTENT
    );
    assert_eq!(s.http.get(s.url(&audio_url)).send().await.unwrap().status(), StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn manual_recognition_over_http() {
    let s = start(true).await;
    let inst = &s.instances[7];
    let wav = s.wav("probe.wav", inst.audio.samples().to_vec());
    let (status, r) = s.post("/api/recognize", json!({ "source": wav })).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(r["class_name"], inst.class.as_str());
    assert!(r["level"].as_u64().unwrap() >= 4);
    let silent = s.wav("silence.wav", vec![0.0; 48_000 * 2]);
    let (status, body) = s.post("/api/recognize", json!({ "source": silent })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "no_sound");
    let empty = start(false).await;
    let (status, body) = empty.post("/api/recognize", json!({ "source": wav })).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "cannot_recognize");
}

async fn collect_until_idle(
    s: &Service,
    ws: &mut tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>,
) -> Vec<Value> {
    s.wait_idle().await;
    let mut events = Vec::new();
    // the closing detection_state is the last event of a capture
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(10), ws.next())
            .await
            .expect("event stream stalled")
            .unwrap()
            .unwrap();
        let Message::Text(text) = msg else { continue };
        let v: Value = serde_json::from_str(&text).unwrap();
        let done = v["kind"] == "detection_state" && v["payload"]["mode"] == "idle";
        events.push(v);
        if done {
            return events;
        }
    }
}

#[tokio::test]
async fn urgent_results_stream_in_order() {
    let s = start(true).await;
    let class = s.instances[5].class.clone();
    s.send(reqwest::Method::PATCH, &format!("/api/sounds/{class}"), Some(json!({ "importance": "urgent" })))
        .await;
    let (mut ws, _) = tokio_tungstenite::connect_async(&s.ws).await.unwrap();
    let wav = s.wav("three.wav", s.three_of(&class));
    assert_eq!(s.post("/api/auto/start", json!({ "source": wav })).await.0, StatusCode::ACCEPTED);
    let events = collect_until_idle(&s, &mut ws).await;

    let seqs: Vec<u64> = events.iter().map(|e| e["seq"].as_u64().unwrap()).collect();
    assert!(seqs.windows(2).all(|w| w[1] == w[0] + 1));
    let results: Vec<&Value> = events.iter().filter(|e| e["kind"] == "recognition_result").collect();
    assert_eq!(results.len(), 3);
    for r in &results {
        assert_eq!(r["payload"]["class_name"], class.as_str());
        assert_eq!(r["payload"]["importance"], "urgent");
        assert_eq!(r["payload"]["display_state"], "shown");
    }
    let times: Vec<f64> = results.iter().map(|r| r["payload"]["timestamp"].as_f64().unwrap()).collect();
    assert!(times.windows(2).all(|w| w[0] < w[1]));
    let column = events.iter().find(|e| e["kind"] == "spectrogram_column").unwrap();
    assert_eq!(column["payload"]["values"].as_array().unwrap().len(), 1024);

    let (_, summary) = s.post("/api/auto/stop", json!({})).await;
    assert_eq!(summary["results"], 3);
    let (_, hist) = s.get("/api/history?limit=2").await;
    assert_eq!(hist.as_array().unwrap().len(), 2);
    let (_, all) = s.get("/api/history").await;
    assert_eq!(all.as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn silence_yields_no_results() {
    let s = start(true).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(&s.ws).await.unwrap();
    let wav = s.wav("silence.wav", vec![0.0; 48_000 * 3]);
    s.post("/api/auto/start", json!({ "source": wav })).await;
    let events = collect_until_idle(&s, &mut ws).await;
    assert!(events.iter().all(|e| e["kind"] != "recognition_result"));
    assert!(events.iter().any(|e| e["kind"] == "detection_state"));
    assert!(events
        .iter()
        .filter(|e| e["kind"] == "spectrogram_column")
        .all(|e| e["payload"]["state"] == "monitor"));
}

#[tokio::test]
async fn one_process_at_a_time() {
    let s = start(true).await;
    let wav = s.wav("long.wav", vec![0.0; 48_000 * 20]);
    let (status, _) = s.post("/api/auto/start", json!({ "source": wav, "realtime": true })).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let (status, body) = s.post("/api/record/start", json!({ "source": wav })).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "busy");
    let (status, _) = s.post("/api/recognize", json!({ "source": wav })).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let t0 = Instant::now();
    let (status, summary) = s.post("/api/auto/stop", json!({})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(summary["segments"], 0);
    assert!(t0.elapsed() < Duration::from_secs(3));
    assert_eq!(s.get("/api/session").await.1["mode"], "idle");
}

#[tokio::test]
async fn client_stop_command_ends_auto_mode() {
    let s = start(true).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(&s.ws).await.unwrap();
    let wav = s.wav("long.wav", vec![0.0; 48_000 * 20]);
    s.post("/api/auto/start", json!({ "source": wav, "realtime": true })).await;
    futures_util::SinkExt::send(&mut ws, Message::Text(json!({ "command": "stop" }).to_string().into()))
        .await
        .unwrap();
    let t0 = Instant::now();
    collect_until_idle(&s, &mut ws).await;
    assert!(t0.elapsed() < Duration::from_secs(5));
}

#[tokio::test]
async fn config_round_trip_and_validation() {
    let s = start(false).await;
    let (_, mut cfg) = s.get("/api/config").await;
    assert_eq!(cfg["column_rate"], "high");
    assert_eq!(cfg["admission"]["rms_min"], 0.01);
    cfg["column_rate"] = json!("low");
    cfg["admission"]["hangover_frames"] = json!(20);
    let (status, back) = s.send(reqwest::Method::PUT, "/api/config", Some(cfg.clone())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(back, cfg);
    assert_eq!(s.get("/api/config").await.1, cfg);
    cfg["admission"]["rms_min"] = json!(-1.0);
    let (status, body) = s.send(reqwest::Method::PUT, "/api/config", Some(cfg)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "invalid_config");
}
