use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use auris_core::audio::{frame_stream, read_wav_file, FileReplaySource};
use auris_core::classify::Algorithm;
use auris_core::dsp::ColumnRate;
use auris_core::evaluation::{cross_validate, learning_curves, timing_profile, CurveSettings, EvalError};
use auris_core::features::extract_segment_features;
use auris_core::kb::{KbError, KnowledgeBase};
use auris_core::pipeline::{NullSink, PipelineError, RecordingOutcome, Session, SessionConfig, StopSignal};
use auris_core::synth::corpus_kb;
use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::api::{self, AppState};

#[derive(Debug, Parser)]
#[command(name = "auris", version, about = "Environmental sound recognition")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the 54 feature values of a whole WAV file, one per line.
    Features { wav: PathBuf },
    /// Recognize the longest event in a WAV file.
    Recognize {
        wav: PathBuf,
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        env: Option<String>,
        /// Session configuration (JSON); admission keys live under "admission".
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Capture one event and store it under a label.
    Record {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        label: String,
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// WAV file to replay, or `live`.
        source: String,
    },
    /// Cross-validate a knowledge base and print CSV.
    Eval {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value = "nb", value_parser = parse_algo)]
        algo: Algorithm,
        /// Also print accuracy-vs-size curves.
        #[arg(long)]
        curves: bool,
        /// Also print train and recognition timings.
        #[arg(long)]
        timing: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic knowledge base with recordings.
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        classes: usize,
        #[arg(long, default_value_t = 10)]
        instances: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run the local HTTP/WebSocket service.
    Serve {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long, default_value_t = 7878)]
        port: u16,
        #[arg(long, value_parser = parse_rate)]
        columns_rate: Option<ColumnRate>,
        /// WAV file replayed when a request names no source.
        #[arg(long)]
        source: Option<PathBuf>,
        /// Pace replayed audio to wall-clock time.
        #[arg(long)]
        realtime: bool,
        /// Listen on all interfaces instead of loopback only.
        #[arg(long)]
        lan: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn parse_algo(s: &str) -> Result<Algorithm, String> {
    s.parse().map_err(|_| format!("expected nb or 1nn, got '{s}'"))
}

fn parse_rate(s: &str) -> Result<ColumnRate, String> {
    s.parse()
        .ok()
        .and_then(ColumnRate::from_per_second)
        .ok_or_else(|| format!("expected 23, 12 or 8, got '{s}'"))
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Domain(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn domain(msg: impl Into<String>) -> CliError {
    CliError::Domain(msg.into())
}

/// Parses `args` and runs the command. Returns the process exit code:
/// 0 on success, 1 for domain errors, 2 for usage errors.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let target: &mut dyn Write = if code == 0 { out } else { err };
            let _ = write!(target, "{e}");
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<SessionConfig, CliError> {
    let Some(path) = path else {
        return Ok(SessionConfig::default());
    };
    let text = std::fs::read_to_string(path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let cfg: SessionConfig = serde_path_to_error::deserialize(de)
        .map_err(|e| domain(format!("{} at {}: {}", path.display(), e.path(), e.inner())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn read_wav(path: &Path) -> Result<auris_core::audio::SampleBuffer, CliError> {
    read_wav_file(path).map_err(|e| domain(format!("{}: {e}", path.display())))
}

fn load_kb(path: &Path) -> Result<KnowledgeBase, CliError> {
    if !path.exists() {
        return Err(domain(format!("knowledge base {} does not exist", path.display())));
    }
    Ok(KnowledgeBase::load(path)?)
}

fn execute(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Features { wav } => {
            let buf = read_wav(&wav)?;
            if buf.is_empty() {
                return Err(domain(format!("{} holds no samples", wav.display())));
            }
            let features = extract_segment_features(&frame_stream(&buf)).map_err(|e| domain(e.to_string()))?;
            for v in features.values() {
                writeln!(out, "{v}")?;
            }
        }
        Command::Recognize { wav, kb, env, config } => {
            let session = Session::new(load_kb(&kb)?, load_config(config.as_deref())?, Arc::new(NullSink))?;
            let src = FileReplaySource::new(read_wav(&wav)?);
            let r = session.run_manual_recognition(src, env.as_deref(), &StopSignal::new())?;
            writeln!(
                out,
                "class={} level={} g={} posterior={}",
                r.class_name, r.level, r.gpi.g, r.posterior
            )?;
        }
        Command::Record {
            kb,
            label,
            env,
            config,
            source,
        } => {
            if source == "live" {
                return Err(domain("live capture is not available; pass a WAV file"));
            }
            let kb_store = KnowledgeBase::open_or_create(&kb)?;
            let session = Session::new(kb_store, load_config(config.as_deref())?, Arc::new(NullSink))?.persist_to(&kb);
            let src = FileReplaySource::new(read_wav(Path::new(&source))?);
            match session.run_recording(src, &StopSignal::new())? {
                RecordingOutcome::Captured(seg) => {
                    let id = session.label_pending(&label, env.as_deref())?;
                    writeln!(
                        out,
                        "record={id} class={} start={:.3} duration={:.3}",
                        label.trim(),
                        seg.start_time,
                        seg.duration
                    )?;
                }
                RecordingOutcome::Timeout => return Err(domain("no sound detected before the recording timeout")),
                RecordingOutcome::Discarded | RecordingOutcome::SourceExhausted => {
                    return Err(domain("no sound detected"))
                }
            }
        }
        Command::Eval {
            kb,
            folds,
            algo,
            curves,
            timing,
            seed,
        } => {
            let kb = load_kb(&kb)?;
            let report = cross_validate(&kb, folds, algo, seed)?;
            write!(out, "{}", report.to_csv())?;
            if curves {
                let set = kb.training_set(None);
                let mut per_class: BTreeMap<&str, usize> = BTreeMap::new();
                for s in &set.samples {
                    *per_class.entry(s.label.as_str()).or_default() += 1;
                }
                let min = per_class.values().copied().min().unwrap_or(0);
                let instance_grid: Vec<usize> = (2..=min.min(10)).collect();
                let mut class_grid: Vec<usize> = [2, 5, 10, 15, 20, 25, 30]
                    .into_iter()
                    .filter(|&c| c < per_class.len())
                    .collect();
                class_grid.push(per_class.len());
                let settings = CurveSettings {
                    folds,
                    seed,
                    ..Default::default()
                };
                let c = learning_curves(&set, &instance_grid, &class_grid, algo, &settings)?;
                writeln!(out)?;
                write!(out, "{}", c.to_csv())?;
            }
            if timing {
                let t = timing_profile(&kb, algo, 5)?;
                writeln!(out)?;
                writeln!(out, "stage,median_ms,p95_ms,samples")?;
                let mut row = |name: &str, s: &auris_core::evaluation::TimingStats| {
                    writeln!(out, "{name},{},{},{}", s.median_ms, s.p95_ms, s.samples)
                };
                row("train", &t.train)?;
                row("classify", &t.classify_only)?;
                if let Some(r) = &t.recognize {
                    row("recognize", r)?;
                }
            }
        }
        Command::SynthCorpus {
            out: dir,
            classes,
            instances,
            seed,
        } => {
            let kb = corpus_kb(classes, instances, seed).map_err(|e| domain(e.to_string()))?;
            kb.save(&dir)?;
            writeln!(
                out,
                "wrote {} records in {} classes to {}",
                kb.records().len(),
                kb.classes().count(),
                dir.display()
            )?;
        }
        Command::Serve {
            kb,
            port,
            columns_rate,
            source,
            realtime,
            lan,
            config,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(rate) = columns_rate {
                cfg.column_rate = rate;
            }
            let kb_store = KnowledgeBase::open_or_create(&kb)?;
            let state = Arc::new(AppState::new(kb_store, Some(kb), cfg, source, realtime)?);
            let ip = if lan { IpAddr::V4(Ipv4Addr::UNSPECIFIED) } else { IpAddr::V4(Ipv4Addr::LOCALHOST) };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(SocketAddr::new(ip, port))
                    .await
                    .map_err(|e| domain(format!("cannot listen on {ip}:{port}: {e}")))?;
                writeln!(out, "listening on http://{}", listener.local_addr()?)?;
                out.flush()?;
                axum::serve(listener, api::router(state))
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await?;
                Ok::<(), CliError>(())
            })?;
        }
    }
    Ok(())
}
