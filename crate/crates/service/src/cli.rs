//! Command-line entry points.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use kinlink_core::backends::{StubAnalyzer, StubGenerator};
use kinlink_core::config::{ClockMode, EngineConfig};
use kinlink_core::domain::Condition;
use kinlink_core::engine::{Engine, Horizon};
use kinlink_core::log::EventLog;
use kinlink_core::metrics::{sharing_stats, Measure, MeasureReport, UserRow};
use kinlink_core::replay::{replay_digest, replay_into};
use kinlink_core::sim::{run_simulation, Persona, SimSpec};
use kinlink_core::store::KnowledgeStore;
use serde::Serialize;

use crate::config::{load_persona, ConfigError, ServiceConfig};
use crate::delivery::{Loopback, RetryPolicy};
use crate::gateway::{system_clock, Gateway};
use crate::logfile::{read_log, write_log, LogFileError, LogSink};
use crate::remote::{RemoteGenerator, ServiceGenerator};

/// Fraction of agent comments that relayed partner information in the
/// original field study, printed beside simulated runs for comparison.
pub const REFERENCE_SHARING_FRACTION: f64 = 0.2885;

/// Inclusive range of per-user sharing counts observed in the field study.
pub const PLAUSIBLE_SHARING: std::ops::RangeInclusive<u32> = 4..=20;

#[derive(Parser, Debug)]
#[command(name = "kinlink", version, about = "Paired-user dialogue engine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the gateway and engine on the real clock.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Simulate scripted pairs and write the event log.
    Simulate {
        #[arg(long, default_value_t = 26)]
        pairs: usize,
        #[arg(long, default_value_t = 10)]
        days: u32,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "sharing")]
        condition: Condition,
        /// Service config whose `[engine]` table is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        elder_persona: Option<PathBuf>,
        #[arg(long)]
        younger_persona: Option<PathBuf>,
        #[arg(long, default_value = "run.log")]
        out: PathBuf,
        /// Also write the summary as JSON.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Compute behavioral measures from an event log.
    Metrics {
        #[arg(long)]
        log: PathBuf,
        /// Print only this measure per user.
        #[arg(long)]
        measure: Option<Measure>,
        /// Write the per-user table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write the full report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Rebuild the store from an event log and print its digest.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Log(#[from] LogFileError),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Other(String),
}

pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const NOT_FOUND: i32 = 3;
    pub const SCHEMA: i32 = 4;
    pub const LOG_CORRUPT: i32 = 5;
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(ConfigError::NotFound { .. }) | CliError::Log(LogFileError::NotFound { .. }) => {
                exit::NOT_FOUND
            }
            CliError::Config(ConfigError::Schema { .. }) | CliError::Invalid(_) => exit::SCHEMA,
            CliError::Log(LogFileError::Corrupt { .. }) => exit::LOG_CORRUPT,
            _ => exit::FAILURE,
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Serve { config } => serve(&config),
        Command::Simulate { pairs, days, seed, condition, config, elder_persona, younger_persona, out: path, summary } => {
            let engine = match config {
                Some(p) => ServiceConfig::load(&p)?.engine,
                None => EngineConfig::default(),
            };
            let mut spec = SimSpec::new(pairs, days, seed);
            if let Some(p) = elder_persona {
                spec.elder = load_persona(&p, Persona::elder())?;
            }
            if let Some(p) = younger_persona {
                spec.younger = load_persona(&p, Persona::younger())?;
            }
            let s = simulate(EngineConfig { condition, clock: ClockMode::Simulated, ..engine }, &spec, &path)?;
            write_summary(&s, out).map_err(io)?;
            if let Some(p) = summary {
                std::fs::write(&p, serde_json::to_string_pretty(&s).expect("summary serializes")).map_err(io)?;
            }
            Ok(())
        }
        Command::Metrics { log, measure, csv, json } => {
            let report = MeasureReport::from_log(&read_log(&log)?);
            match measure {
                Some(m) => write_measure(&report.users, m, out),
                None => write_table(&report.users, out),
            }
            .map_err(|e| CliError::Other(e.to_string()))?;
            if let Some(p) = csv {
                let f = std::fs::File::create(&p).map_err(io)?;
                write_table(&report.users, &mut std::io::BufWriter::new(f)).map_err(|e| CliError::Other(e.to_string()))?;
            }
            if let Some(p) = json {
                std::fs::write(&p, serde_json::to_string_pretty(&report).expect("report serializes")).map_err(io)?;
            }
            Ok(())
        }
        Command::Replay { log } => {
            let records = read_log(&log)?;
            let digest = replay_digest(&records).map_err(|e| CliError::Invalid(format!("{}: {e}", log.display())))?;
            writeln!(out, "records {}\ndigest {digest}", records.len()).map_err(io)
        }
    }
}

fn io(e: std::io::Error) -> CliError {
    CliError::Other(e.to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimSummary {
    pub pairs: usize,
    pub days: u32,
    pub seed: u64,
    pub condition: Condition,
    pub records: usize,
    pub comments: u32,
    pub sharing_comments: u32,
    pub sharing_fraction: Option<f64>,
    pub reference_fraction: f64,
    pub users: usize,
    pub users_in_band: usize,
    pub store_digest: String,
    pub log: PathBuf,
}

/// Runs the simulation, writes the log to `path` and summarizes it.
pub fn simulate(cfg: EngineConfig, spec: &SimSpec, path: &Path) -> Result<SimSummary, CliError> {
    let condition = cfg.condition;
    let output = run_simulation(&cfg, spec).map_err(|e| CliError::Invalid(e.to_string()))?;
    write_log(path, &output.records)?;
    let stats = sharing_stats(&output.records);
    Ok(SimSummary {
        pairs: spec.pairs,
        days: spec.days,
        seed: spec.seed,
        condition,
        records: output.records.len(),
        comments: stats.comments,
        sharing_comments: stats.sharing,
        sharing_fraction: stats.fraction,
        reference_fraction: REFERENCE_SHARING_FRACTION,
        users: stats.per_user.len(),
        users_in_band: stats.per_user.values().filter(|n| PLAUSIBLE_SHARING.contains(n)).count(),
        store_digest: output.store_digest,
        log: path.to_path_buf(),
    })
}

pub fn write_summary(s: &SimSummary, out: &mut dyn Write) -> std::io::Result<()> {
    let pct = |f: f64| format!("{:.2}%", 100.0 * f);
    writeln!(out, "log               {} ({} records)", s.log.display(), s.records)?;
    writeln!(out, "pairs x days      {} x {} (seed {}, {})", s.pairs, s.days, s.seed, s.condition)?;
    writeln!(out, "turn-3 comments   {}", s.comments)?;
    writeln!(
        out,
        "sharing comments  {} ({}; field study {})",
        s.sharing_comments,
        s.sharing_fraction.map_or("n/a".into(), pct),
        pct(s.reference_fraction)
    )?;
    writeln!(
        out,
        "users in [{}, {}]  {}/{}",
        PLAUSIBLE_SHARING.start(),
        PLAUSIBLE_SHARING.end(),
        s.users_in_band,
        s.users
    )?;
    writeln!(out, "store digest      {}", s.store_digest)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_default()
}

fn write_measure(rows: &[UserRow], m: Measure, out: &mut dyn Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_id", "pair_id", "member", "condition", m.as_str()])?;
    for r in rows {
        let value = match m {
            Measure::ResponseTime => opt(r.avg_response_minutes),
            Measure::Reminders => r.reminders.to_string(),
            Measure::SharingInfo => r.sharing_info.to_string(),
        };
        w.write_record([r.user_id.as_str(), r.pair_id.as_str(), member(r), r.condition.as_str(), &value])?;
    }
    w.flush()?;
    Ok(())
}

fn write_table(rows: &[UserRow], out: &mut dyn Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_id", "pair_id", "member", "condition", "response_time", "reminders", "sharing_info"])?;
    for r in rows {
        w.write_record([
            r.user_id.as_str(),
            r.pair_id.as_str(),
            member(r),
            r.condition.as_str(),
            &opt(r.avg_response_minutes),
            &r.reminders.to_string(),
            &r.sharing_info.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn member(r: &UserRow) -> &'static str {
    match r.member {
        kinlink_core::metrics::Member::Elder => "elder",
        kinlink_core::metrics::Member::Younger => "younger",
    }
}

/// Builds the engine for `serve`, continuing `log_path` if it exists.
pub fn build_engine(cfg: &ServiceConfig) -> Result<crate::gateway::ServiceEngine, CliError> {
    let assets = cfg.assets()?;
    let analyzer = StubAnalyzer::new(&assets.food, &assets.place, assets.lexicon.clone());
    let generator = match &cfg.generator {
        Some(remote) => ServiceGenerator::Remote(RemoteGenerator::new(remote).map_err(CliError::Invalid)?),
        None => ServiceGenerator::Stub(StubGenerator::new(&assets.templates, &assets.food, &assets.place, assets.lexicon.clone())),
    };
    let path = &cfg.gateway.log_path;
    let previous = match read_log(path) {
        Ok(records) => records,
        Err(LogFileError::NotFound { .. }) => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let mut now = (system_clock())();
    if let Some(last) = previous.last() {
        now = now.max(last.ts);
    }
    let log = EventLog::resuming_at(previous.len() as u64);
    let mut engine = Engine::resume(cfg.engine.clone(), assets, analyzer, generator, now, log)
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    if !previous.is_empty() {
        let mut store = KnowledgeStore::new();
        replay_into(&mut store, &previous).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        engine.restore_store(store);
    }
    for pair in &cfg.pairs {
        let link = pair.link(cfg.engine.condition).map_err(|e| CliError::Invalid(e.to_string()))?;
        let elder = pair.elder.profile().map_err(CliError::Invalid)?;
        let younger = pair.younger.profile().map_err(CliError::Invalid)?;
        engine.register_pair(link, elder, younger, Horizon::default(), now).map_err(|e| CliError::Invalid(e.to_string()))?;
    }
    Ok(engine)
}

fn serve(path: &Path) -> Result<(), CliError> {
    let cfg = ServiceConfig::load(path)?;
    let secret = std::env::var(&cfg.gateway.secret_env)
        .ok()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| CliError::Invalid(format!("environment variable {} is not set", cfg.gateway.secret_env)))?;
    let engine = build_engine(&cfg)?;
    let sink = LogSink::append(&cfg.gateway.log_path)?;
    let loopback = Arc::new(Loopback::default());
    let policy =
        RetryPolicy { attempts: cfg.gateway.delivery_attempts, backoff: Duration::from_millis(cfg.gateway.backoff_ms) };
    let runtime = tokio::runtime::Runtime::new().map_err(io)?;
    runtime.block_on(async move {
        let gw = Gateway::new(engine, Some(sink), loopback.clone(), loopback, policy, secret, system_clock());
        let listener = tokio::net::TcpListener::bind(&cfg.gateway.bind).await.map_err(io)?;
        tracing::info!("listening on {}", cfg.gateway.bind);
        let ticker = gw.clone();
        tokio::spawn(async move {
            let mut every = tokio::time::interval(Duration::from_secs(1));
            loop {
                every.tick().await;
                let g = ticker.clone();
                if tokio::task::spawn_blocking(move || g.tick()).await.is_err() {
                    tracing::error!("scheduler tick panicked");
                }
            }
        });
        axum::serve(listener, gw.router())
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(io)
    })
}
