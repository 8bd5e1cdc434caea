//! HTTP front end: inbound webhook, per-user processing queues, outbound
//! delivery and the message stream.

use std::collections::{HashMap, HashSet, VecDeque};
use std::convert::Infallible;
use std::sync::{Arc, Mutex};

use axum::body::{Body, Bytes};
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use kinlink_core::backends::StubAnalyzer;
use kinlink_core::dialogue::OutboundMessage;
use kinlink_core::domain::UserId;
use kinlink_core::engine::Engine;
use kinlink_core::log::LogEvent;
use kinlink_core::time::Timestamp;
use serde::Deserialize;
use tokio::sync::{broadcast, mpsc};

use crate::delivery::{deliver_outbound, Adapter, Loopback, RetryPolicy};
use crate::logfile::LogSink;
use crate::remote::ServiceGenerator;
use crate::wire::{Ack, AckStatus, WireError, WireInbound, WireOutbound, WIRE_VERSION};

pub const SECRET_HEADER: &str = "x-kinlink-secret";

pub type ServiceEngine = Engine<StubAnalyzer, ServiceGenerator>;

pub type Clock = Arc<dyn Fn() -> Timestamp + Send + Sync>;

/// Wall-clock seconds since the epoch.
pub fn system_clock() -> Clock {
    Arc::new(|| {
        let d = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).unwrap_or_default();
        Timestamp(d.as_secs() as i64)
    })
}

#[derive(Debug, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("missing or wrong shared secret")]
    Unauthenticated,
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
}

impl IntoResponse for GatewayError {
    fn into_response(self) -> Response {
        let (status, code) = match self {
            GatewayError::Unauthenticated => (StatusCode::UNAUTHORIZED, "unauthenticated"),
            GatewayError::MalformedPayload(_) => (StatusCode::BAD_REQUEST, "malformed_payload"),
        };
        (status, Json(WireError { v: WIRE_VERSION, error: code.into(), detail: self.to_string() })).into_response()
    }
}

pub struct Gateway {
    engine: Mutex<ServiceEngine>,
    sink: Mutex<Option<LogSink>>,
    adapter: Arc<dyn Adapter>,
    loopback: Arc<Loopback>,
    policy: RetryPolicy,
    secret: String,
    clock: Clock,
    seen: Mutex<HashSet<String>>,
    inbound: Mutex<HashMap<UserId, mpsc::UnboundedSender<String>>>,
    outbound: Mutex<HashMap<UserId, mpsc::UnboundedSender<OutboundMessage>>>,
}

impl Gateway {
    /// `adapter` carries outbound messages; pass the loopback itself to serve
    /// the stream endpoint only.
    pub fn new(
        engine: ServiceEngine,
        sink: Option<LogSink>,
        adapter: Arc<dyn Adapter>,
        loopback: Arc<Loopback>,
        policy: RetryPolicy,
        secret: String,
        clock: Clock,
    ) -> Arc<Self> {
        Arc::new(Self {
            engine: Mutex::new(engine),
            sink: Mutex::new(sink),
            adapter,
            loopback,
            policy,
            secret,
            clock,
            seen: Mutex::new(HashSet::new()),
            inbound: Mutex::new(HashMap::new()),
            outbound: Mutex::new(HashMap::new()),
        })
    }

    pub fn router(self: &Arc<Self>) -> Router {
        Router::new()
            .route("/v1/inbound", post(inbound))
            .route("/v1/stream", get(stream))
            .route("/v1/health", get(health))
            .with_state(self.clone())
    }

    /// Runs `f` against the engine, then appends whatever it logged.
    pub fn with_engine<T>(&self, f: impl FnOnce(&mut ServiceEngine) -> T) -> T {
        let mut engine = self.engine.lock().expect("engine lock");
        let out = f(&mut engine);
        let records = engine.drain_log();
        drop(engine);
        if let Some(sink) = self.sink.lock().expect("sink lock").as_mut() {
            if let Err(e) = sink.write(&records) {
                tracing::error!("log write failed: {e}");
            }
        }
        out
    }

    fn authenticate(&self, headers: &HeaderMap) -> Result<(), GatewayError> {
        match headers.get(SECRET_HEADER).and_then(|v| v.to_str().ok()) {
            Some(s) if !self.secret.is_empty() && s == self.secret => Ok(()),
            _ => Err(GatewayError::Unauthenticated),
        }
    }

    /// Validates and queues one inbound message. Must run inside a Tokio runtime.
    pub fn accept(self: &Arc<Self>, headers: &HeaderMap, body: &[u8]) -> Result<AckStatus, GatewayError> {
        self.authenticate(headers)?;
        let msg: WireInbound =
            serde_json::from_slice(body).map_err(|e| GatewayError::MalformedPayload(e.to_string()))?;
        if msg.v != WIRE_VERSION {
            return Err(GatewayError::MalformedPayload(format!("unsupported version {}", msg.v)));
        }
        if msg.idempotency_key.is_empty() {
            return Err(GatewayError::MalformedPayload("empty idempotency_key".into()));
        }
        if self.engine.lock().expect("engine lock").profile(&msg.user_id).is_none() {
            return Err(GatewayError::MalformedPayload(format!("unknown user {}", msg.user_id)));
        }
        if !self.seen.lock().expect("seen lock").insert(msg.idempotency_key.clone()) {
            return Ok(AckStatus::Duplicate);
        }
        let mut queues = self.inbound.lock().expect("queue lock");
        let tx = queues.entry(msg.user_id.clone()).or_insert_with(|| self.spawn_inbound_worker(msg.user_id.clone()));
        tx.send(msg.text).expect("inbound worker lives as long as the gateway");
        Ok(AckStatus::Queued)
    }

    fn spawn_inbound_worker(self: &Arc<Self>, user: UserId) -> mpsc::UnboundedSender<String> {
        let (tx, mut rx) = mpsc::unbounded_channel::<String>();
        let gw = self.clone();
        tokio::spawn(async move {
            while let Some(text) = rx.recv().await {
                let (g, u) = (gw.clone(), user.clone());
                let result = tokio::task::spawn_blocking(move || {
                    let now = (g.clock)();
                    g.with_engine(|e| e.handle_user_message(&u, &text, now))
                })
                .await;
                match result {
                    Ok(Ok(out)) => gw.dispatch(out),
                    Ok(Err(e)) => tracing::error!("message from {user} failed: {e}"),
                    Err(e) => tracing::error!("worker for {user} panicked: {e}"),
                }
            }
        });
        tx
    }

    /// Fires whatever the scheduler has due now.
    pub fn tick(self: &Arc<Self>) {
        let now = (self.clock)();
        match self.with_engine(|e| e.tick(now)) {
            Ok(out) => self.dispatch(out),
            Err(e) => tracing::error!("tick failed: {e}"),
        }
    }

    /// Hands messages to each user's delivery queue, preserving order per user.
    fn dispatch(self: &Arc<Self>, messages: Vec<OutboundMessage>) {
        let mut queues = self.outbound.lock().expect("queue lock");
        for msg in messages {
            let user = msg.user_id.clone();
            let tx = queues.entry(user.clone()).or_insert_with(|| self.spawn_outbound_worker(user));
            tx.send(msg).expect("outbound worker lives as long as the gateway");
        }
    }

    fn spawn_outbound_worker(self: &Arc<Self>, user: UserId) -> mpsc::UnboundedSender<OutboundMessage> {
        let (tx, mut rx) = mpsc::unbounded_channel::<OutboundMessage>();
        let gw = self.clone();
        tokio::spawn(async move {
            while let Some(msg) = rx.recv().await {
                let g = gw.clone();
                let done = tokio::task::spawn_blocking(move || {
                    let wire = WireOutbound::from_message(&msg, (g.clock)());
                    let record = |ev: LogEvent| {
                        let now = (g.clock)();
                        g.with_engine(|e| e.record(now, ev));
                    };
                    deliver_outbound(g.adapter.as_ref(), &wire, g.policy, std::thread::sleep, record)
                })
                .await;
                match done {
                    Ok(Err(e)) => tracing::warn!("{e}"),
                    Err(e) => tracing::error!("delivery to {user} panicked: {e}"),
                    Ok(Ok(_)) => {}
                }
            }
        });
        tx
    }
}

async fn inbound(State(gw): State<Arc<Gateway>>, headers: HeaderMap, body: Bytes) -> Response {
    match gw.accept(&headers, &body) {
        Ok(status) => (StatusCode::ACCEPTED, Json(Ack { v: WIRE_VERSION, status })).into_response(),
        Err(e) => e.into_response(),
    }
}

#[derive(Deserialize)]
struct StreamQuery {
    user_id: UserId,
    #[serde(default)]
    since: u64,
}

fn ndjson(msg: &WireOutbound) -> Result<String, Infallible> {
    let mut line = serde_json::to_string(msg).expect("wire messages serialize");
    line.push('\n');
    Ok(line)
}

/// Replays the user's messages after `since`, then follows new ones.
async fn stream(State(gw): State<Arc<Gateway>>, headers: HeaderMap, Query(q): Query<StreamQuery>) -> Response {
    if let Err(e) = gw.authenticate(&headers) {
        return e.into_response();
    }
    // subscribe before reading the backlog so nothing falls between them
    let rx = gw.loopback.subscribe();
    let backlog: VecDeque<WireOutbound> = gw.loopback.since(&q.user_id, q.since).into();
    let state = (rx, backlog, q.since, q.user_id, gw.loopback.clone());
    let lines = futures::stream::unfold(state, |(mut rx, mut buf, mut last, user, lb)| async move {
        loop {
            if let Some(m) = buf.pop_front() {
                if m.seq > last {
                    last = m.seq;
                    return Some((ndjson(&m), (rx, buf, last, user, lb)));
                }
                continue;
            }
            match rx.recv().await {
                Ok(m) if m.user_id == user => buf.push_back(m),
                Ok(_) => {}
                Err(broadcast::error::RecvError::Lagged(_)) => buf.extend(lb.since(&user, last)),
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    ([(header::CONTENT_TYPE, "application/x-ndjson")], Body::from_stream(lines)).into_response()
}

async fn health(State(gw): State<Arc<Gateway>>) -> Response {
    let engine = gw.engine.lock().expect("engine lock");
    Json(serde_json::json!({ "v": WIRE_VERSION, "status": "ok", "users": engine.users().count() })).into_response()
}
