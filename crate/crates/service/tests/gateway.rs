use std::sync::atomic::{AtomicI64, AtomicU32, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use chrono::NaiveDate;
use http_body_util::BodyExt;
use kinlink::delivery::{deliver_outbound, Adapter, Loopback, RetryPolicy};
use kinlink::gateway::{Clock, Gateway, SECRET_HEADER};
use kinlink::logfile::{read_log, LogSink};
use kinlink::remote::ServiceGenerator;
use kinlink::wire::{WireKind, WireOutbound};
use kinlink_core::assets::Assets;
use kinlink_core::backends::{StubAnalyzer, StubGenerator};
use kinlink_core::config::EngineConfig;
use kinlink_core::dialogue::Role;
use kinlink_core::domain::{Condition, PairId, PairLink, UserProfile};
use kinlink_core::engine::{Engine, Horizon};
use kinlink_core::log::LogEvent;
use kinlink_core::time::{local_to_utc, ClockMinutes, Timestamp};
use tower::ServiceExt;

const SECRET: &str = "s3cret";

fn profile(id: &str, name: &str) -> UserProfile {
    UserProfile {
        user_id: id.into(),
        display_name: name.into(),
        registered_wake_weekday: ClockMinutes::hm(7, 0),
        registered_wake_weekend: ClockMinutes::hm(7, 0),
        registered_bed_weekday: ClockMinutes::hm(23, 0),
        registered_bed_weekend: ClockMinutes::hm(23, 0),
        timezone: "Asia/Tokyo".into(),
    }
}

struct Fixture {
    gw: Arc<Gateway>,
    loopback: Arc<Loopback>,
    now: Arc<AtomicI64>,
    log: tempfile::NamedTempFile,
}

/// A gateway whose clock sits at the first question of the day, already sent.
fn fixture() -> Fixture {
    let day = NaiveDate::from_ymd_opt(2025, 3, 3).unwrap();
    let tz = chrono_tz::Asia::Tokyo;
    let start = local_to_utc(tz, day, 0);
    let a = Assets::default();
    let analyzer = StubAnalyzer::new(&a.food, &a.place, a.lexicon.clone());
    let generator = ServiceGenerator::Stub(StubGenerator::new(&a.templates, &a.food, &a.place, a.lexicon.clone()));
    let mut engine = Engine::new(EngineConfig::default(), a, analyzer, generator, start).unwrap();
    let link = PairLink::new(PairId::from("p"), "g".into(), "c".into(), Condition::Sharing).unwrap();
    let horizon = Horizon { first_date: Some(day), last_date: Some(day) };
    engine.register_pair(link, profile("g", "Hana"), profile("c", "Mike"), horizon, start).unwrap();

    let log = tempfile::NamedTempFile::new().unwrap();
    let now = Arc::new(AtomicI64::new(local_to_utc(tz, day, 7 * 60 + 30).0));
    let clock_now = now.clone();
    let clock: Clock = Arc::new(move || Timestamp(clock_now.load(Ordering::SeqCst)));
    let loopback = Arc::new(Loopback::default());
    let policy = RetryPolicy { attempts: 3, backoff: Duration::from_millis(1) };
    let sink = LogSink::append(log.path()).unwrap();
    let gw = Gateway::new(engine, Some(sink), loopback.clone(), loopback.clone(), policy, SECRET.into(), clock);
    Fixture { gw, loopback, now, log }
}

fn post(body: &str, secret: Option<&str>) -> Request<Body> {
    let mut req = Request::post("/v1/inbound").header("content-type", "application/json");
    if let Some(s) = secret {
        req = req.header(SECRET_HEADER, s);
    }
    req.body(Body::from(body.to_string())).unwrap()
}

fn inbound(user: &str, text: &str, key: &str) -> String {
    serde_json::json!({ "v": 1, "user_id": user, "text": text, "client_ts": 0, "idempotency_key": key }).to_string()
}

async fn body_json(resp: axum::response::Response) -> serde_json::Value {
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    serde_json::from_slice(&bytes).unwrap()
}

async fn wait_for(lb: &Loopback, user: &str, n: usize) -> Vec<WireOutbound> {
    for _ in 0..400 {
        let got = lb.since(&user.into(), 0);
        if got.len() >= n {
            return got;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    panic!("{user} never received {n} messages: {:?}", lb.since(&user.into(), 0));
}

#[tokio::test]
async fn reply_to_a_question_gets_a_comment() {
    let f = fixture();
    f.gw.tick();
    let question = wait_for(&f.loopback, "g", 1).await;
    assert_eq!(question[0].role, Role::Question);
    assert_eq!(question[0].seq, 1);

    f.now.fetch_add(120, Ordering::SeqCst);
    let resp = f.gw.router().oneshot(post(&inbound("g", "I woke up at 7 am", "k1"), Some(SECRET))).await.unwrap();
    assert_eq!(resp.status(), StatusCode::ACCEPTED);
    assert_eq!(body_json(resp).await["status"], "queued");
    let got = wait_for(&f.loopback, "g", 2).await;
    assert_eq!((got[1].role, got[1].turn, got[1].kind), (Role::Comment, Some(3), WireKind::Text));

    let log = read_log(f.log.path()).unwrap();
    assert!(log.iter().any(|r| matches!(r.event, LogEvent::DeliveryAttempt { ok: true, .. })));
}

#[tokio::test]
async fn duplicate_keys_are_processed_once() {
    let f = fixture();
    f.gw.tick();
    wait_for(&f.loopback, "g", 1).await;
    let body = inbound("g", "I woke up at 7 am", "same");
    for expected in ["queued", "duplicate"] {
        let resp = f.gw.router().oneshot(post(&body, Some(SECRET))).await.unwrap();
        assert_eq!(resp.status(), StatusCode::ACCEPTED);
        assert_eq!(body_json(resp).await["status"], expected);
    }
    wait_for(&f.loopback, "g", 2).await;
    tokio::time::sleep(Duration::from_millis(50)).await;
    let log = read_log(f.log.path()).unwrap();
    let user_messages = log.iter().filter(|r| matches!(r.event, LogEvent::UserMessage { .. })).count();
    assert_eq!(user_messages, 1);
}

#[tokio::test]
async fn bad_requests_are_rejected() {
    let f = fixture();
    let router = f.gw.router();
    let resp = router.clone().oneshot(post(&inbound("g", "hi", "k"), None)).await.unwrap();
    assert_eq!(resp.status(), StatusCode::UNAUTHORIZED);
    assert_eq!(body_json(resp).await["error"], "unauthenticated");
    let resp = router.clone().oneshot(post(&inbound("g", "hi", "k"), Some("wrong"))).await.unwrap();
    assert_eq!(resp.status(), StatusCode::UNAUTHORIZED);
    for body in ["{", r#"{"v":1}"#, &inbound("nobody", "hi", "k"), &inbound("g", "hi", "").replace("\"v\":1", "\"v\":2")] {
        let resp = router.clone().oneshot(post(body, Some(SECRET))).await.unwrap();
        assert_eq!(resp.status(), StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(body_json(resp).await["error"], "malformed_payload");
    }
    let resp = router.oneshot(Request::get("/v1/health").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(body_json(resp).await["users"], 2);
}

#[tokio::test]
async fn per_user_order_is_preserved() {
    let f = fixture();
    f.gw.tick();
    wait_for(&f.loopback, "g", 1).await;
    let router = f.gw.router();
    let texts = ["I woke up at 7 am", "Yes it was a nice long morning", "ok"];
    for (i, t) in texts.iter().enumerate() {
        let resp = router.clone().oneshot(post(&inbound("g", t, &format!("k{i}")), Some(SECRET))).await.unwrap();
        assert_eq!(resp.status(), StatusCode::ACCEPTED);
    }
    let got = wait_for(&f.loopback, "g", 4).await;
    let roles: Vec<Role> = got.iter().map(|m| m.role).collect();
    assert_eq!(roles, [Role::Question, Role::Comment, Role::Reply, Role::Overflow]);
    let seqs: Vec<u64> = got.iter().map(|m| m.seq).collect();
    assert_eq!(seqs, [1, 2, 3, 4]);
}

#[tokio::test]
async fn stream_replays_backlog_after_since() {
    let f = fixture();
    f.gw.tick();
    wait_for(&f.loopback, "c", 1).await;
    f.now.fetch_add(60, Ordering::SeqCst);
    let router = f.gw.router();
    router.clone().oneshot(post(&inbound("c", "woke at 8", "k"), Some(SECRET))).await.unwrap();
    wait_for(&f.loopback, "c", 2).await;

    let req = Request::get("/v1/stream?user_id=c&since=1").header(SECRET_HEADER, SECRET).body(Body::empty()).unwrap();
    let resp = router.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let mut body = resp.into_body();
    let frame = tokio::time::timeout(Duration::from_secs(2), body.frame()).await.unwrap().unwrap().unwrap();
    let line = String::from_utf8(frame.into_data().unwrap().to_vec()).unwrap();
    let msg: WireOutbound = serde_json::from_str(line.trim_end()).unwrap();
    assert_eq!((msg.seq, msg.role), (2, Role::Comment));

    let req = Request::get("/v1/stream?user_id=c").body(Body::empty()).unwrap();
    assert_eq!(router.oneshot(req).await.unwrap().status(), StatusCode::UNAUTHORIZED);
}

/// Fails a set number of times, then succeeds.
struct Flaky {
    failures: u32,
    calls: AtomicU32,
}

impl Adapter for Flaky {
    fn deliver(&self, _: &WireOutbound) -> Result<(), String> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if n < self.failures {
            Err(format!("failure {}", n + 1))
        } else {
            Ok(())
        }
    }
}

fn message() -> WireOutbound {
    WireOutbound {
        v: 1,
        seq: 0,
        user_id: "u".into(),
        kind: WireKind::Text,
        body: Some("hi".into()),
        sticker_id: None,
        server_ts: 0,
        role: Role::Question,
        session_id: None,
        turn: Some(1),
        response_kind: None,
    }
}

#[test]
fn retries_back_off_and_log_every_attempt() {
    let policy = RetryPolicy { attempts: 3, backoff: Duration::from_millis(100) };
    let adapter = Flaky { failures: 2, calls: AtomicU32::new(0) };
    let waits = Mutex::new(Vec::new());
    let mut events = Vec::new();
    let receipt =
        deliver_outbound(&adapter, &message(), policy, |d| waits.lock().unwrap().push(d), |e| events.push(e)).unwrap();
    assert_eq!(receipt.attempts, 3);
    assert_eq!(*waits.lock().unwrap(), [Duration::from_millis(100), Duration::from_millis(200)]);
    let oks: Vec<bool> = events
        .iter()
        .map(|e| match e {
            LogEvent::DeliveryAttempt { ok, .. } => *ok,
            other => panic!("unexpected {other:?}"),
        })
        .collect();
    assert_eq!(oks, [false, false, true]);
}

#[test]
fn permanent_failure_is_recorded() {
    let adapter = Flaky { failures: u32::MAX, calls: AtomicU32::new(0) };
    let mut events = Vec::new();
    let err = deliver_outbound(&adapter, &message(), RetryPolicy::default(), |_| {}, |e| events.push(e)).unwrap_err();
    assert_eq!(err.attempts, 3);
    assert_eq!(events.len(), 4);
    assert!(matches!(&events[3], LogEvent::DeliveryFailed { attempts: 3, detail, .. } if detail == "failure 3"));
}

#[test]
fn loopback_delivers_immediately() {
    let lb = Loopback::default();
    let receipt = deliver_outbound(&lb, &message(), RetryPolicy::default(), |_| panic!("no wait"), |_| {}).unwrap();
    assert_eq!(receipt.attempts, 1);
    assert_eq!(lb.since(&"u".into(), 0)[0].seq, 1);
}
