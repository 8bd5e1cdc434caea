//! Discrete-event simulation of paired users talking to the engine.
//!
//! The clock jumps from one event to the next. Personas answer after a
//! lognormal delay or not at all; a delayed reply is dropped if the turn it
//! answers is no longer current when it arrives.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::dialogue::{OutboundMessage, Role};
use crate::domain::{DomainError, PairId, PairLink, SessionId, Topic, TurnState, UserId, UserProfile};
use crate::engine::{Engine, EngineError, Horizon};
use crate::log::LogRecord;
use crate::rng::{self, Stream};
use crate::time::{local_midnight, ClockMinutes, Timestamp, MINUTE};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("persona {persona}: {reason}")]
    Persona { persona: String, reason: String },
    #[error("need at least one pair and one day")]
    EmptyRun,
}

/// A scripted user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Persona {
    pub name: String,
    pub timezone: String,
    /// Median reply delay in minutes.
    pub latency_median_minutes: f64,
    /// Log-space standard deviation of the delay; 0 gives a fixed delay.
    pub latency_sigma: f64,
    /// Chance of ignoring any one agent message.
    pub ignore_p: f64,
    /// Chance of writing once more after the final reply.
    pub overflow_p: f64,
    pub wake: ClockMinutes,
    pub bed: ClockMinutes,
    /// Day-to-day wobble of reported sleep times, in minutes either way.
    pub sleep_jitter_minutes: u32,
    /// Per-user shift of the whole rhythm, in minutes either way, drawn once
    /// in 15-minute steps.
    pub rhythm_spread_minutes: u32,
    /// Answers keyed by `meal`, `location`, `impression`, `plan`,
    /// `value.season`, `value.food`, `value.place`. Sleep answers come from
    /// `wake` and `bed`.
    pub answers: BTreeMap<String, Vec<String>>,
    /// Turn-4 replies to the agent's comment.
    pub followups: Vec<String>,
}

const ANSWER_KEYS: [&str; 7] = ["meal", "location", "impression", "plan", "value.season", "value.food", "value.place"];

fn table(rows: &[(&str, &[&str])]) -> BTreeMap<String, Vec<String>> {
    rows.iter().map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect())).collect()
}

fn list(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for Persona {
    fn default() -> Self {
        Persona::elder()
    }
}

impl Persona {
    pub fn elder() -> Self {
        Persona {
            name: "elder".into(),
            timezone: "Asia/Tokyo".into(),
            latency_median_minutes: 35.0,
            latency_sigma: 1.0,
            ignore_p: 0.05,
            overflow_p: 0.1,
            wake: ClockMinutes::hm(6, 0),
            bed: ClockMinutes::hm(21, 30),
            sleep_jitter_minutes: 30,
            rhythm_spread_minutes: 30,
            answers: table(&[
                ("meal", &[
                    "I had soba at home", "Udon with tempura", "Just some rice and miso soup", "grilled fish and rice",
                    "Curry rice with my neighbor", "Some onigiri I made", "Only had tea", "Leftovers from yesterday",
                ]),
                ("location", &[
                    "I'm at home", "Working in the garden", "At the supermarket", "At the clinic for a checkup",
                    "Walking in the park", "At the community center", "Just resting", "Visiting the temple",
                ]),
                ("impression", &[
                    "It was a quiet and nice day", "Went to the park, it was lovely", "Tired today",
                    "Talked with friends at the community center", "Nothing special", "The garden looks great",
                ]),
                ("plan", &[
                    "Going to the hospital tomorrow", "I will stay home", "Shopping at the market",
                    "Meeting friends at the cafe", "Not sure yet", "Going to the shrine in the morning",
                ]),
                ("value.season", &["I love autumn", "Spring, for the flowers", "Autumn is best", "winter I think"]),
                ("value.food", &["sushi", "I like tempura", "Grilled fish", "Anything with tofu"]),
                ("value.place", &["The hot spring", "Kyoto", "My garden", "The beach"]),
            ]),
            followups: list(&[
                "Yes", "Thank you", "ok", "That's right, it was good", "Haha yes", "Thanks for asking", "うん",
                "I hope they are doing well",
            ]),
        }
    }

    pub fn younger() -> Self {
        Persona {
            name: "younger".into(),
            latency_median_minutes: 70.0,
            latency_sigma: 1.2,
            ignore_p: 0.1,
            wake: ClockMinutes::hm(7, 30),
            bed: ClockMinutes::hm(24, 0),
            sleep_jitter_minutes: 45,
            answers: table(&[
                ("meal", &[
                    "Ramen with friends", "pasta", "A sandwich at my desk", "Had a bento", "curry",
                    "Skipped lunch, too busy", "Pizza lol", "Burger and fries",
                ]),
                ("location", &[
                    "At school", "In the library", "At the office", "On the train", "At a cafe",
                    "Home", "At the gym", "In Shibuya with friends",
                ]),
                ("impression", &[
                    "Busy but fun", "Exams are tough", "Went to the cinema, it was great", "meh", "Pretty good",
                    "Long day at the office",
                ]),
                ("plan", &[
                    "Class in the morning then work", "Going to Osaka", "Gym and then the library", "Nothing much",
                    "Karaoke with friends", "Work",
                ]),
                ("value.season", &["summer", "Winter for snowboarding", "I like spring", "summer obviously"]),
                ("value.food", &["Ramen", "pizza", "Sushi", "ice cream"]),
                ("value.place", &["Tokyo", "The beach", "the cinema", "Any cafe"]),
            ]),
            followups: list(&[
                "ok", "lol", "thx", "Nice", "Yeah it was fun", "Cool", "haha", "Really? Tell them hi",
            ]),
            ..Persona::elder()
        }
    }

    /// Replies immediately and never ignores anything.
    pub fn prompt(self) -> Self {
        Persona { latency_median_minutes: 1.0, latency_sigma: 0.0, ignore_p: 0.0, overflow_p: 0.0, ..self }
    }

    /// Never replies.
    pub fn silent(self) -> Self {
        Persona { ignore_p: 1.0, ..self }
    }

    /// Replies to everything after exactly `minutes`.
    pub fn fixed_delay(self, minutes: f64) -> Self {
        Persona { latency_median_minutes: minutes, latency_sigma: 0.0, ignore_p: 0.0, overflow_p: 0.0, ..self }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |reason: String| Err(SimError::Persona { persona: self.name.clone(), reason });
        if !(self.latency_median_minutes.is_finite() && self.latency_median_minutes >= 0.0) {
            return fail("latency median must be a non-negative number".into());
        }
        if !(self.latency_sigma.is_finite() && self.latency_sigma >= 0.0) {
            return fail("latency sigma must be a non-negative number".into());
        }
        for (name, p) in [("ignore_p", self.ignore_p), ("overflow_p", self.overflow_p)] {
            if !(0.0..=1.0).contains(&p) {
                return fail(alloc::format!("{name} must be within [0, 1]"));
            }
        }
        if let Some(key) = ANSWER_KEYS.iter().find(|k| self.answers.get(**k).is_none_or(Vec::is_empty)) {
            return fail(alloc::format!("no answers for {key}"));
        }
        if self.followups.is_empty() {
            return fail("no followups".into());
        }
        Ok(())
    }

    /// Delay in whole seconds, at least one.
    pub fn sample_latency<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let z: f64 = StandardNormal.sample(rng);
        let minutes = self.latency_median_minutes * libm::exp(self.latency_sigma * z);
        let secs = libm::round(minutes * 60.0);
        if secs.is_finite() { (secs as i64).max(1) } else { i64::MAX / 4 }
    }

    fn answer<R: Rng + ?Sized>(&self, topic: Topic, facet: Option<&str>, rng: &mut R) -> String {
        if topic == Topic::Sleep {
            let jitter = i64::from(self.sleep_jitter_minutes);
            let delta = if jitter == 0 { 0 } else { rng.gen_range(-jitter..=jitter) / 5 * 5 };
            return if facet == Some("wake") {
                alloc::format!("I woke up at {}", spoken_clock(i64::from(self.wake.0) + delta))
            } else {
                alloc::format!("Went to bed around {}", spoken_clock(i64::from(self.bed.0) + delta))
            };
        }
        let key = match (topic, facet) {
            (Topic::Value, Some(f)) => alloc::format!("value.{f}"),
            (Topic::Value, None) => "value.season".to_string(),
            (t, _) => t.as_str().to_string(),
        };
        self.answers
            .get(&key)
            .and_then(|v| v.choose(rng))
            .cloned()
            .unwrap_or_else(|| "Not sure".to_string())
    }
}

/// "11:30 pm", "7 am".
fn spoken_clock(minutes: i64) -> String {
    let m = minutes.rem_euclid(1440);
    let (h, min) = (m / 60, m % 60);
    let (h12, suffix) = match h {
        0 => (12, "am"),
        1..=11 => (h, "am"),
        12 => (12, "pm"),
        _ => (h - 12, "pm"),
    };
    if min == 0 {
        alloc::format!("{h12} {suffix}")
    } else {
        alloc::format!("{h12}:{min:02} {suffix}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimSpec {
    pub pairs: usize,
    pub days: u32,
    pub seed: u64,
    pub start_date: NaiveDate,
    pub elder: Persona,
    pub younger: Persona,
}

impl SimSpec {
    pub fn new(pairs: usize, days: u32, seed: u64) -> Self {
        SimSpec {
            pairs,
            days,
            seed,
            start_date: NaiveDate::from_ymd_opt(2025, 1, 6).expect("valid date"),
            elder: Persona::elder(),
            younger: Persona::younger(),
        }
    }
}

pub struct SimOutput {
    pub records: Vec<LogRecord>,
    pub store_digest: String,
}

/// Which agent turn a pending reply answers.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Pending {
    user: UserId,
    session: SessionId,
    expects: TurnState,
    text: String,
}

const NAMES: [(&str, &str); 8] = [
    ("Hana", "Mike"),
    ("Kazuo", "Emma"),
    ("Yoshiko", "Ken"),
    ("Takeshi", "Aya"),
    ("Fumiko", "Sota"),
    ("Masao", "Yui"),
    ("Setsuko", "Ren"),
    ("Hiroshi", "Mio"),
];

/// Runs `spec.pairs` pairs for `spec.days` local days and returns the log.
///
/// Pair conditions come from `cfg.condition`; `spec.seed` replaces `cfg.seed`.
pub fn run_simulation(cfg: &EngineConfig, spec: &SimSpec) -> Result<SimOutput, SimError> {
    if spec.pairs == 0 || spec.days == 0 {
        return Err(SimError::EmptyRun);
    }
    spec.elder.validate()?;
    spec.younger.validate()?;
    let cfg = EngineConfig { seed: spec.seed, ..cfg.clone() };
    let last_date = spec.start_date + chrono::Days::new(u64::from(spec.days - 1));

    let mut personas: BTreeMap<UserId, (Persona, Stream)> = BTreeMap::new();
    let mut setup = Vec::new();
    for i in 0..spec.pairs {
        let pair_id = PairId(alloc::format!("p{:02}", i + 1));
        let (elder_name, younger_name) = NAMES[i % NAMES.len()];
        let mut members = Vec::new();
        for (role, persona, name) in [("elder", &spec.elder, elder_name), ("younger", &spec.younger, younger_name)] {
            let id = UserId(alloc::format!("{pair_id}-{role}"));
            let mut rng = rng::stream(cfg.seed, &["persona", id.as_str()]);
            let steps = i64::from(persona.rhythm_spread_minutes / 15);
            let shift = rng.gen_range(-steps..=steps) * 15;
            let moved = |c: ClockMinutes| ClockMinutes((i64::from(c.0) + shift).rem_euclid(2 * 1440) as u32);
            let persona = Persona { wake: moved(persona.wake), bed: moved(persona.bed), ..persona.clone() };
            let profile = UserProfile {
                user_id: id.clone(),
                display_name: name.to_string(),
                registered_wake_weekday: persona.wake,
                registered_wake_weekend: persona.wake,
                registered_bed_weekday: persona.bed,
                registered_bed_weekend: persona.bed,
                timezone: persona.timezone.clone(),
            };
            personas.insert(id.clone(), (persona, rng));
            members.push(profile);
        }
        let younger = members.pop().expect("two members");
        let elder = members.pop().expect("two members");
        let link = PairLink::new(pair_id, elder.user_id.clone(), younger.user_id.clone(), cfg.condition).map_err(EngineError::from)?;
        setup.push((link, elder, younger));
    }

    let zone = spec.elder.zone()?;
    let start = local_midnight(zone, spec.start_date).add_secs(-MINUTE);
    let mut engine = Engine::with_stubs(cfg, start)?;
    for (link, elder, younger) in setup {
        engine.register_pair(link, elder, younger, Horizon { first_date: Some(spec.start_date), last_date: Some(last_date) }, start)?;
    }

    // keyed by arrival time, then scheduling order
    let mut agenda: BTreeMap<(Timestamp, u64), Pending> = BTreeMap::new();
    let mut order = 0u64;
    loop {
        let due = engine.next_due();
        let reply_at = agenda.first_key_value().map(|((at, _), _)| *at);
        let outbound = match (due, reply_at) {
            (None, None) => break,
            (Some(d), r) if r.is_none_or(|r| d <= r) => engine.tick(d)?,
            _ => {
                let ((at, _), p) = agenda.pop_first().expect("peeked");
                let live = engine.session(&p.user).is_some_and(|s| s.session_id == p.session && s.is_open() && s.turn == p.expects);
                if !live {
                    continue;
                }
                engine.handle_user_message(&p.user, &p.text, at)?
            }
        };
        let now = engine.clock();
        for msg in outbound {
            if let Some(p) = plan_reply(&engine, &mut personas, &msg) {
                let (persona, rng) = personas.get_mut(&p.user).expect("known persona");
                let at = now.add_secs(persona.sample_latency(rng));
                order += 1;
                agenda.insert((at, order), p);
            }
        }
    }
    let store_digest = engine.store().digest();
    Ok(SimOutput { records: engine.drain_log(), store_digest })
}

fn plan_reply(
    engine: &Engine,
    personas: &mut BTreeMap<UserId, (Persona, Stream)>,
    msg: &OutboundMessage,
) -> Option<Pending> {
    let (persona, rng) = personas.get_mut(&msg.user_id)?;
    let session = engine.session(&msg.user_id)?;
    let sid = msg.session_id.clone()?;
    if session.session_id != sid {
        return None;
    }
    let (expects, text) = match msg.role {
        Role::Question | Role::Reminder if !session.answered() => {
            (TurnState::Turn(1), persona.answer(session.topic, session.facet.as_deref(), rng))
        }
        Role::Comment => (TurnState::Turn(3), persona.followups.choose(rng)?.clone()),
        Role::Reply if rng.gen_bool(persona.overflow_p) => (TurnState::Turn(5), persona.followups.choose(rng)?.clone()),
        _ => return None,
    };
    if rng.gen_bool(persona.ignore_p) {
        return None;
    }
    Some(Pending { user: msg.user_id.clone(), session: sid, expects, text })
}

impl Persona {
    fn zone(&self) -> Result<chrono_tz::Tz, SimError> {
        self.timezone.parse().map_err(|_| SimError::Engine(DomainError::UnknownZone(self.timezone.clone()).into()))
    }
}
