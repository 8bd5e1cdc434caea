use std::cell::Cell;

use chrono::NaiveDate;
use kinlink_core::assets::Assets;
use kinlink_core::backends::{BackendError, GenerationContext, Generator, StubAnalyzer, StubGenerator};
use kinlink_core::config::EngineConfig;
use kinlink_core::dialogue::{Content, Deps, Dialogue, Role};
use kinlink_core::domain::{Condition, ResponseKind, Slot, Topic, UserId, UserProfile};
use kinlink_core::metrics::sharing_stats;
use kinlink_core::sim::{run_simulation, SimSpec};
use kinlink_core::store::{KnowledgeStore, NewFact};
use kinlink_core::time::{ClockMinutes, Timestamp};
use proptest::prelude::*;

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

fn dialogue(cfg: EngineConfig) -> (Dialogue, Assets) {
    let a = Assets::default();
    (Dialogue { templates: a.templates.clone(), questions: a.questions.clone(), replies: a.replies.clone(), cfg }, a)
}

/// Counts calls and delegates to the stub.
struct Counting<'a> {
    inner: &'a StubGenerator,
    calls: Cell<u32>,
}

impl Generator for Counting<'_> {
    fn generate(&self, ctx: &GenerationContext) -> Result<String, BackendError> {
        self.calls.set(self.calls.get() + 1);
        self.inner.generate(ctx)
    }
}

/// Fraction of turn-3 comments that relay the partner fact, with a fresh
/// partner fact available in every trial.
fn sharing_fraction(topic: Topic, facet: Option<&str>, content: &str, answer: &str, trials: u32) -> f64 {
    let (mut d, a) = dialogue(EngineConfig { seed: 99, ..Default::default() });
    let analyzer = StubAnalyzer::new(&a.food, &a.place, a.lexicon.clone());
    let gen = StubGenerator::new(&a.templates, &a.food, &a.place, a.lexicon.clone());
    let mike = profile("g", "Mike");
    let (me, other): (UserId, UserId) = ("c".into(), "g".into());
    let start = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
    let mut shared = 0;
    for i in 0..trials {
        let date = start + chrono::Days::new(u64::from(i));
        let mut store = KnowledgeStore::new();
        store.link_partners(&me, &other);
        store
            .record_fact(NewFact {
                user_id: other.clone(),
                topic,
                facet: facet.map(String::from),
                content: content.into(),
                raw_utterance: content.into(),
                local_date: date,
                session_id: None,
            })
            .unwrap();
        let slot = if topic == Topic::Value { Slot::Evening } else { Slot::Noon };
        let (mut session, _) = d.open_session(&mut store, &me, date, slot, topic, Timestamp(0)).unwrap();
        session.facet = facet.map(String::from);
        let deps =
            Deps { store: &mut store, analyzer: &analyzer, generator: &gen, partner: Some(&mike), condition: Condition::Sharing };
        let step = d.advance_session(&mut session, answer, Timestamp(60), deps).unwrap();
        if step.outbound[0].response_kind == Some(ResponseKind::SharingInfo) {
            shared += 1;
        }
    }
    f64::from(shared) / f64::from(trials)
}

#[test]
fn sharing_rate_for_ordinary_topics() {
    let f = sharing_fraction(Topic::Meal, None, "pasta", "I had udon", 10_000);
    assert!((f - 0.40).abs() <= 0.03, "fraction {f}");
}

#[test]
fn sharing_rate_for_value_topic() {
    let f = sharing_fraction(Topic::Value, Some("food"), "sushi", "ramen", 10_000);
    assert!((f - 0.80).abs() <= 0.03, "fraction {f}");
}

#[test]
fn non_sharing_runs_never_relay() {
    let cfg = EngineConfig { condition: Condition::NonSharing, ..Default::default() };
    for seed in 0..1000 {
        let out = run_simulation(&cfg, &SimSpec::new(1, 3, seed)).unwrap();
        let stats = sharing_stats(&out.records);
        assert!(stats.comments > 0);
        assert_eq!(stats.sharing, 0, "seed {seed}");
    }
}

/// The location exchange: the older user is at home, the grandchild said
/// "home" on an earlier day, so the comment relays it in the past tense.
#[test]
fn location_exchange_with_partner_fact() {
    let cfg = EngineConfig { share_p: 1.0, ..Default::default() };
    let (mut d, a) = dialogue(cfg);
    let analyzer = StubAnalyzer::new(&a.food, &a.place, a.lexicon.clone());
    let gen = StubGenerator::new(&a.templates, &a.food, &a.place, a.lexicon.clone());
    let (elder, child): (UserId, UserId) = ("elder".into(), "child".into());
    let mut store = KnowledgeStore::new();
    store.link_partners(&elder, &child);
    let earlier = NaiveDate::from_ymd_opt(2024, 7, 1).unwrap();
    let today = NaiveDate::from_ymd_opt(2024, 7, 3).unwrap();
    store
        .record_fact(NewFact {
            user_id: child.clone(),
            topic: Topic::Location,
            facet: None,
            content: "home".into(),
            raw_utterance: "home, relaxing".into(),
            local_date: earlier,
            session_id: None,
        })
        .unwrap();
    d.questions.set_cursor(&elder, Topic::Location, 1);
    let (mut s, q) = d.open_session(&mut store, &elder, today, Slot::Afternoon, Topic::Location, Timestamp(0)).unwrap();
    assert_eq!(q.content, Content::Text("Hey, where are you spending time right now?".into()));

    let grandchild = profile("child", "Ken");
    let step = d
        .advance_session(&mut s, "I'm at home. I was cleaning the shoe rack.", Timestamp(60), Deps {
            store: &mut store,
            analyzer: &analyzer,
            generator: &gen,
            partner: Some(&grandchild),
            condition: Condition::Sharing,
        })
        .unwrap();
    assert_eq!(step.outbound[0].response_kind, Some(ResponseKind::SharingInfo));
    assert_eq!(
        step.outbound[0].content,
        Content::Text("I heard that Ken was also spending some time at home the other day.".into())
    );
    let step = d
        .advance_session(&mut s, "Definitely. It's nice and relaxing, and it's cool in here.", Timestamp(120), Deps {
            store: &mut store,
            analyzer: &analyzer,
            generator: &gen,
            partner: Some(&grandchild),
            condition: Condition::Sharing,
        })
        .unwrap();
    assert_eq!(step.outbound[0].role, Role::Reply);
    assert!(matches!(step.outbound[0].content, Content::Text(_)));
    assert!(store.facts().any(|f| f.user_id == child && f.shared_to_partner));
}

fn message() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("ok".to_string()),
        Just("ありがとう".to_string()),
        Just("hmm".to_string()),
        Just("I had ramen at the park".to_string()),
        "[a-z ]{0,12}",
    ]
}

proptest! {
    /// The generator runs only while producing turn 3 or turn 5; stickers
    /// carry no text and every comment carries a kind.
    #[test]
    fn generator_only_at_turns_three_and_five(msgs in proptest::collection::vec(message(), 1..10), topic in 0usize..6) {
        let (mut d, a) = dialogue(EngineConfig::default());
        let analyzer = StubAnalyzer::new(&a.food, &a.place, a.lexicon.clone());
        let stub = StubGenerator::new(&a.templates, &a.food, &a.place, a.lexicon.clone());
        let gen = Counting { inner: &stub, calls: Cell::new(0) };
        let mut store = KnowledgeStore::new();
        store.link_partners(&"c".into(), &"g".into());
        let topic = Topic::ALL[topic];
        let (mut s, _) = d
            .open_session(&mut store, &"c".into(), NaiveDate::from_ymd_opt(2025, 1, 1).unwrap(), Slot::Noon, topic, Timestamp(0))
            .unwrap();
        for (i, m) in msgs.iter().enumerate() {
            let before = gen.calls.get();
            let deps = Deps { store: &mut store, analyzer: &analyzer, generator: &gen, partner: None, condition: Condition::Sharing };
            let step = d.advance_session(&mut s, m, Timestamp(10 * (i as i64 + 1)), deps).unwrap();
            let out = &step.outbound[0];
            let turn = out.turn.unwrap();
            prop_assert_eq!(turn, 2 * i as u32 + 3);
            if gen.calls.get() > before {
                prop_assert!(turn == 3 || turn == 5, "generator called at turn {}", turn);
            }
            prop_assert_eq!(out.response_kind.is_some(), turn == 3);
            if let Content::Sticker(id) = &out.content {
                prop_assert!(kinlink_core::dialogue::STICKERS.contains(&id.as_str()));
            }
        }
    }
}
