//! The five-turn exchange: question selection, the turn-3 comment decision
//! flow, and the turn-5 and post-turn-5 reply rules.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use chrono::NaiveDate;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::assets::{content_lines, fill, AssetError, Templates};
use crate::backends::{
    Analyzer, BackendError, ContextError, ContextTurn, Entity, EntityKind, GenerationContext, Generator, Provenance,
    Speaker,
};
use crate::config::EngineConfig;
use crate::domain::{
    code_points, Condition, DialogueSession, Fact, ResponseKind, SessionId, Topic, TurnState, UserId,
    UserProfile,
};
use crate::rng;
use crate::scheduler::find_clock_time;
use crate::store::{Direction, HistoryRecord, Journal, KnowledgeStore, NewFact, StoreError};
use crate::time::Timestamp;

/// Longest message, in code points, eligible for a canned or sticker reply.
pub const SHORT_MESSAGE_LIMIT: usize = 5;

pub const STICKERS: [&str; 5] = ["thumbs-up", "smile", "wave", "heart", "ok-hand"];

const DEFAULT_PREAMBLE: &str =
    "You are a warm companion chatting by text message. Reply in one short, casual sentence.";

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum DialogueError {
    #[error("session {0} is closed")]
    SessionClosed(SessionId),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Context(#[from] ContextError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionTemplate {
    pub facet: Option<String>,
    pub text: String,
}

/// Per-topic question lists with a per-user rotation cursor.
#[derive(Clone, Debug, Default)]
pub struct QuestionBank {
    per_topic: BTreeMap<Topic, Vec<QuestionTemplate>>,
    cursors: BTreeMap<(UserId, Topic), usize>,
}

impl QuestionBank {
    pub const MIN_PER_TOPIC: usize = 3;

    /// Reads `question.<topic>[.<facet>]` entries in file order.
    pub fn from_templates(t: &Templates) -> Result<Self, AssetError> {
        let mut per_topic: BTreeMap<Topic, Vec<QuestionTemplate>> = BTreeMap::new();
        for (key, text) in t.with_prefix("question") {
            let mut parts = key.splitn(3, '.').skip(1);
            let topic_name = parts.next().unwrap_or("");
            let topic: Topic = topic_name.parse().map_err(|_| AssetError::Invalid {
                asset: "templates",
                reason: alloc::format!("unknown topic in key {key}"),
            })?;
            let facet = parts.next().map(ToString::to_string);
            per_topic.entry(topic).or_default().push(QuestionTemplate { facet, text: text.to_string() });
        }
        for topic in Topic::ALL {
            let n = per_topic.get(&topic).map_or(0, Vec::len);
            if n < Self::MIN_PER_TOPIC {
                return Err(AssetError::Invalid {
                    asset: "templates",
                    reason: alloc::format!("topic {topic} has {n} questions, need {}", Self::MIN_PER_TOPIC),
                });
            }
        }
        Ok(Self { per_topic, cursors: BTreeMap::new() })
    }

    pub fn templates(&self, topic: Topic) -> &[QuestionTemplate] {
        self.per_topic.get(&topic).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Next template in rotation for `(user, topic)`; advances the cursor.
    pub fn select_question(&mut self, user: &UserId, topic: Topic) -> QuestionTemplate {
        let list = &self.per_topic[&topic];
        let cursor = self.cursors.entry((user.clone(), topic)).or_insert(0);
        let chosen = list[*cursor % list.len()].clone();
        *cursor = (*cursor + 1) % list.len();
        chosen
    }

    pub fn cursor(&self, user: &UserId, topic: Topic) -> usize {
        self.cursors.get(&(user.clone(), topic)).copied().unwrap_or(0)
    }

    pub fn set_cursor(&mut self, user: &UserId, topic: Topic, cursor: usize) {
        self.cursors.insert((user.clone(), topic), cursor);
    }
}

/// Exact-match replies for short messages.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PredefinedReplyTable {
    entries: BTreeMap<String, String>,
}

impl PredefinedReplyTable {
    /// `<message><TAB><reply>` per line; every message at most five code points.
    pub fn parse(text: &str) -> Result<Self, AssetError> {
        let mut entries = BTreeMap::new();
        for (line, raw) in content_lines(text) {
            let (key, reply) = raw.split_once('\t').ok_or_else(|| AssetError::Syntax {
                asset: "reply table",
                line,
                reason: "expected `<message>\\t<reply>`".into(),
            })?;
            let (key, reply) = (key.trim(), reply.trim());
            if key.is_empty() || reply.is_empty() {
                return Err(AssetError::Syntax { asset: "reply table", line, reason: "empty message or reply".into() });
            }
            if code_points(key) > SHORT_MESSAGE_LIMIT {
                return Err(AssetError::Syntax {
                    asset: "reply table",
                    line,
                    reason: alloc::format!("message {key:?} is longer than {SHORT_MESSAGE_LIMIT} characters"),
                });
            }
            entries.insert(key.to_string(), reply.to_string());
        }
        Ok(Self { entries })
    }

    pub fn lookup(&self, message: &str) -> Option<&str> {
        self.entries.get(message.trim()).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Content {
    Text(String),
    Sticker(String),
}

impl Content {
    pub fn text(&self) -> Option<&str> {
        match self {
            Content::Text(t) => Some(t),
            Content::Sticker(_) => None,
        }
    }

    pub fn is_sticker(&self) -> bool {
        matches!(self, Content::Sticker(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Question,
    Comment,
    Reply,
    Overflow,
    Reminder,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutboundMessage {
    pub user_id: UserId,
    pub session_id: Option<SessionId>,
    /// History turn number; `None` for reminders and session-less replies.
    pub turn: Option<u32>,
    pub role: Role,
    pub content: Content,
    pub response_kind: Option<ResponseKind>,
}

/// First applicable kind in precedence order; generation is the fallback.
pub fn select_response_kind(sharing: bool, memory: bool, comprehension: bool) -> ResponseKind {
    if sharing {
        ResponseKind::SharingInfo
    } else if memory {
        ResponseKind::Memory
    } else if comprehension {
        ResponseKind::Comprehension
    } else {
        ResponseKind::Generative
    }
}

/// "at home", "in Tokyo", "at the park".
pub fn place_phrase(place: &str) -> String {
    let lower = place.to_lowercase();
    if place.chars().next().is_some_and(char::is_uppercase) {
        return alloc::format!("in {place}");
    }
    match lower.as_str() {
        "home" | "work" | "school" | "church" | "university" | "karaoke" => alloc::format!("at {place}"),
        "car" => alloc::format!("in the {place}"),
        "train" | "bus" => alloc::format!("on the {place}"),
        _ if lower.contains("'s ") => alloc::format!("at a {place}"),
        _ => alloc::format!("at the {place}"),
    }
}

const SEASONS: [(&str, &str); 5] =
    [("spring", "spring"), ("summer", "summer"), ("autumn", "autumn"), ("fall", "autumn"), ("winter", "winter")];

fn format_clock(minutes: u32) -> String {
    let (h, m) = (minutes / 60 % 24, minutes % 60);
    let (h12, suffix) = match h {
        0 => (12, "am"),
        1..=11 => (h, "am"),
        12 => (12, "pm"),
        _ => (h - 12, "pm"),
    };
    if m == 0 {
        alloc::format!("{h12} {suffix}")
    } else {
        alloc::format!("{h12}:{m:02} {suffix}")
    }
}

/// The shareable content of a turn-2 answer, if any.
pub fn extract_fact_content(topic: Topic, facet: Option<&str>, answer: &str, entities: &[Entity]) -> Option<String> {
    let first = |kind: EntityKind| entities.iter().find(|e| e.kind == kind).map(|e| e.name.clone());
    match topic {
        Topic::Sleep => find_clock_time(answer).map(|m| format_clock(m.minutes)),
        Topic::Meal => first(EntityKind::Food),
        Topic::Location | Topic::Impression | Topic::Plan => first(EntityKind::Place),
        Topic::Value => match facet {
            Some("season") => {
                let lower = answer.to_lowercase();
                SEASONS
                    .iter()
                    .find(|(word, _)| {
                        lower.split(|c: char| !c.is_alphanumeric()).any(|w| w == *word)
                    })
                    .map(|(_, canonical)| canonical.to_string())
            }
            Some("food") => first(EntityKind::Food),
            Some("place") => first(EntityKind::Place),
            _ => entities.first().map(|e| e.name.clone()),
        },
    }
}

/// Sharing sentence for `fact`, told to the partner of its owner.
///
/// `today` is the listener's local date; location facts from the same day
/// read as current.
pub fn render_sharing_comment(
    templates: &Templates,
    fact: &Fact,
    partner: &UserProfile,
    topic: Topic,
    today: NaiveDate,
) -> String {
    let key = match topic {
        Topic::Sleep if fact.facet.as_deref() == Some("wake") => "share.sleep.wake".to_string(),
        Topic::Sleep => "share.sleep.bed".to_string(),
        Topic::Meal => "share.meal".to_string(),
        Topic::Location if fact.local_date == today => "share.location.today".to_string(),
        Topic::Location => "share.location.earlier".to_string(),
        Topic::Impression => "share.impression".to_string(),
        Topic::Plan => "share.plan".to_string(),
        Topic::Value => alloc::format!("share.value.{}", fact.facet.as_deref().unwrap_or("season")),
    };
    let template = templates
        .get(&key)
        .or_else(|| templates.get("share.value.season"))
        .unwrap_or("I heard that {name} mentioned {content}.");
    fill(template, &partner.display_name, &fact.content, &place_phrase(&fact.content))
}

/// What `turn5_reply` will do for a message, before any backend call.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ShortReply {
    Canned(String),
    Sticker,
    Generate,
}

pub fn classify_turn5(message: &str, table: &PredefinedReplyTable) -> ShortReply {
    let trimmed = message.trim();
    if code_points(trimmed) <= SHORT_MESSAGE_LIMIT {
        match table.lookup(trimmed) {
            Some(reply) => ShortReply::Canned(reply.to_string()),
            None => ShortReply::Sticker,
        }
    } else {
        ShortReply::Generate
    }
}

/// Turn-5 reply: canned text, sticker, or generated text for longer messages.
pub fn turn5_reply(
    message: &str,
    table: &PredefinedReplyTable,
    generator: &dyn Generator,
    ctx: &GenerationContext,
    sticker: &str,
) -> Result<Content, BackendError> {
    match classify_turn5(message, table) {
        ShortReply::Canned(reply) => Ok(Content::Text(reply)),
        ShortReply::Sticker => Ok(Content::Sticker(sticker.to_string())),
        ShortReply::Generate => generator.generate(ctx).map(Content::Text),
    }
}

/// After turn 5: canned text on a table match, otherwise a sticker. Never generates.
pub fn overflow_reply(message: &str, table: &PredefinedReplyTable, sticker: &str) -> Content {
    match table.lookup(message) {
        Some(reply) => Content::Text(reply.to_string()),
        None => Content::Sticker(sticker.to_string()),
    }
}

/// The turn-3 comment and how it was chosen.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Comment {
    pub kind: ResponseKind,
    pub text: String,
    /// Partner fact relayed by a sharing comment; the caller marks it shared.
    pub shared_fact: Option<Fact>,
}

/// Inputs to the turn-3 decision flow.
pub struct CommentRequest<'a> {
    pub user_id: &'a UserId,
    pub topic: Topic,
    pub facet: Option<&'a str>,
    pub today: NaiveDate,
    pub condition: Condition,
    pub partner: Option<&'a UserProfile>,
    /// Shareable content of this answer, used for the memory lookup.
    pub content: Option<&'a str>,
    pub entities: &'a [Entity],
}

/// Walks sharing → memory → comprehension → generative and returns the first
/// applicable comment.
///
/// The sharing probability draw happens only once a partner fact exists and
/// the pair is in the sharing condition.
pub fn make_comment<J: Journal, R: Rng + ?Sized>(
    req: &CommentRequest<'_>,
    templates: &Templates,
    cfg: &EngineConfig,
    store: &KnowledgeStore<J>,
    generator: &dyn Generator,
    ctx: impl FnOnce() -> Result<GenerationContext, ContextError>,
    rng: &mut R,
) -> Result<Comment, DialogueError> {
    if req.condition == Condition::Sharing {
        if let (Some(partner), Some(fact)) =
            (req.partner, store.retrieve_partner_fact(req.user_id, req.topic, req.facet)?)
        {
            if rng.gen_bool(cfg.sharing_probability(req.topic)) {
                return Ok(Comment {
                    kind: ResponseKind::SharingInfo,
                    text: render_sharing_comment(templates, fact, partner, req.topic, req.today),
                    shared_fact: Some(fact.clone()),
                });
            }
        }
    }
    if let Some(content) = req.content {
        if store.find_similar_past(req.user_id, req.topic, content, req.today).is_some() {
            let template = templates.get("memory").unwrap_or("You mentioned {content} before too, didn't you?");
            return Ok(Comment {
                kind: ResponseKind::Memory,
                text: fill(template, "", content, &place_phrase(content)),
                shared_fact: None,
            });
        }
    }
    if let Some(entity) = req.entities.first() {
        let key = match entity.kind {
            EntityKind::Food => "comprehension.food",
            EntityKind::Place => "comprehension.place",
        };
        let template = templates.get(key).unwrap_or("Oh, {content}!");
        return Ok(Comment {
            kind: ResponseKind::Comprehension,
            text: fill(template, "", &entity.name, &place_phrase(&entity.name)),
            shared_fact: None,
        });
    }
    let ctx = ctx()?;
    let text = generator.generate(&ctx)?;
    Ok(Comment { kind: ResponseKind::Generative, text, shared_fact: None })
}

/// Something the caller should log besides the outbound messages.
#[derive(Clone, Debug, PartialEq)]
pub enum DialogueNote {
    /// Turn-2 answer received; the scheduler should stop waiting.
    Answered,
    BackendFailure { turn: u32, detail: String },
    FactRecorded(Fact),
    FactShared(Fact),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Step {
    pub outbound: Vec<OutboundMessage>,
    pub notes: Vec<DialogueNote>,
    pub sentiment: Option<f64>,
    pub entities: Vec<Entity>,
}

/// Everything `advance_session` reads or writes outside the session itself.
pub struct Deps<'a, J> {
    pub store: &'a mut KnowledgeStore<J>,
    pub analyzer: &'a dyn Analyzer,
    pub generator: &'a dyn Generator,
    pub partner: Option<&'a UserProfile>,
    pub condition: Condition,
}

/// Stateless rules plus the question rotation.
#[derive(Clone, Debug)]
pub struct Dialogue {
    pub templates: Templates,
    pub questions: QuestionBank,
    pub replies: PredefinedReplyTable,
    pub cfg: EngineConfig,
}

impl Dialogue {
    fn preamble(&self) -> &str {
        self.templates.get("preamble").unwrap_or(DEFAULT_PREAMBLE)
    }

    fn sticker_for(&self, session: &SessionId, exchange: u32) -> &'static str {
        let label = alloc::format!("{exchange}");
        let mut r = rng::stream(self.cfg.seed, &["sticker", session.as_str(), &label]);
        STICKERS[r.gen_range(0..STICKERS.len())]
    }

    pub fn reminder_text(&self) -> &str {
        self.templates.get("reminder").unwrap_or("Just checking in!")
    }

    /// Turn 1: picks the question, opens the session and records it.
    pub fn open_session<J: Journal>(
        &mut self,
        store: &mut KnowledgeStore<J>,
        user: &UserId,
        date: NaiveDate,
        slot: crate::domain::Slot,
        topic: Topic,
        now: Timestamp,
    ) -> Result<(DialogueSession, OutboundMessage), DialogueError> {
        let q = self.questions.select_question(user, topic);
        let session = DialogueSession::open(user.clone(), date, slot, topic, q.facet.clone(), now);
        store.append_history(history(&session, 1, Direction::AgentToUser, &q.text, now, None))?;
        let msg = OutboundMessage {
            user_id: user.clone(),
            session_id: Some(session.session_id.clone()),
            turn: Some(1),
            role: Role::Question,
            content: Content::Text(q.text),
            response_kind: None,
        };
        Ok((session, msg))
    }

    fn context<J: Journal>(
        &self,
        store: &KnowledgeStore<J>,
        session: &DialogueSession,
        condition: Condition,
    ) -> Result<GenerationContext, ContextError> {
        let turns: Vec<ContextTurn> = store
            .session_history(&session.session_id)
            .map(|h| ContextTurn {
                speaker: match h.direction {
                    Direction::AgentToUser => Speaker::Agent,
                    Direction::UserToAgent => Speaker::User,
                },
                body: h.body.clone(),
                provenance: if h.response_kind == Some(ResponseKind::SharingInfo) {
                    Provenance::Partner
                } else {
                    Provenance::Own
                },
            })
            .collect();
        GenerationContext::new(session.topic, turns, self.preamble(), condition, self.cfg.context_window)
    }

    /// Routes one inbound message by the session's turn and produces the
    /// agent's reply.
    pub fn advance_session<J: Journal>(
        &mut self,
        session: &mut DialogueSession,
        inbound: &str,
        now: Timestamp,
        deps: Deps<'_, J>,
    ) -> Result<Step, DialogueError> {
        if !session.is_open() {
            return Err(DialogueError::SessionClosed(session.session_id.clone()));
        }
        let Deps { store, analyzer, generator, partner, condition } = deps;
        let mut step = Step::default();
        match analyzer.sentiment(inbound) {
            Ok(s) => step.sentiment = Some(s),
            Err(e) => step.notes.push(DialogueNote::BackendFailure { turn: session.exchanges + 1, detail: e.to_string() }),
        }
        let user_turn = session.exchanges + 1;
        store.append_history(history(session, user_turn, Direction::UserToAgent, inbound, now, None))?;
        session.exchanges = user_turn;
        session.last_user_msg_at = Some(now);
        let agent_turn = user_turn + 1;

        let (role, content, kind) = match session.turn {
            TurnState::Turn(1) => {
                step.notes.push(DialogueNote::Answered);
                let entities = match analyzer.extract_entities(inbound) {
                    Ok(e) => e,
                    Err(e) => {
                        step.notes.push(DialogueNote::BackendFailure { turn: user_turn, detail: e.to_string() });
                        Vec::new()
                    }
                };
                let content = extract_fact_content(session.topic, session.facet.as_deref(), inbound, &entities);
                let req = CommentRequest {
                    user_id: &session.user_id,
                    topic: session.topic,
                    facet: session.facet.as_deref(),
                    today: session.local_date,
                    condition,
                    partner,
                    content: content.as_deref(),
                    entities: &entities,
                };
                let mut draw = rng::stream(self.cfg.seed, &["share", session.session_id.as_str()]);
                let comment = {
                    let store_ref: &KnowledgeStore<J> = store;
                    make_comment(
                        &req,
                        &self.templates,
                        &self.cfg,
                        store_ref,
                        generator,
                        || self.context(store_ref, session, condition),
                        &mut draw,
                    )
                };
                let comment = match comment {
                    Ok(c) => c,
                    Err(DialogueError::Backend(e)) => {
                        step.notes.push(DialogueNote::BackendFailure { turn: agent_turn, detail: e.to_string() });
                        Comment {
                            kind: ResponseKind::Generative,
                            text: self.templates.get("acknowledge").unwrap_or("I see.").to_string(),
                            shared_fact: None,
                        }
                    }
                    Err(DialogueError::Context(e)) => {
                        step.notes.push(DialogueNote::BackendFailure { turn: agent_turn, detail: e.to_string() });
                        Comment {
                            kind: ResponseKind::Generative,
                            text: self.templates.get("acknowledge").unwrap_or("I see.").to_string(),
                            shared_fact: None,
                        }
                    }
                    Err(e) => return Err(e),
                };
                if let Some(fact) = &comment.shared_fact {
                    let shared = store.mark_shared(fact.fact_id)?;
                    step.notes.push(DialogueNote::FactShared(shared));
                }
                if let Some(content) = content {
                    let fact = store.record_fact(NewFact {
                        user_id: session.user_id.clone(),
                        topic: session.topic,
                        facet: session.facet.clone(),
                        content,
                        raw_utterance: inbound.to_string(),
                        local_date: session.local_date,
                        session_id: Some(session.session_id.clone()),
                    })?;
                    step.notes.push(DialogueNote::FactRecorded(fact));
                }
                step.entities = entities;
                session.turn = TurnState::Turn(3);
                (Role::Comment, Content::Text(comment.text), Some(comment.kind))
            }
            TurnState::Turn(3) => {
                let sticker = self.sticker_for(&session.session_id, agent_turn);
                let reply = match classify_turn5(inbound, &self.replies) {
                    ShortReply::Canned(text) => Content::Text(text),
                    ShortReply::Sticker => Content::Sticker(sticker.to_string()),
                    ShortReply::Generate => {
                        let generated = self
                            .context(store, session, condition)
                            .map_err(DialogueError::from)
                            .and_then(|ctx| generator.generate(&ctx).map_err(Into::into));
                        match generated {
                            Ok(text) => Content::Text(text),
                            Err(e) => {
                                step.notes.push(DialogueNote::BackendFailure { turn: agent_turn, detail: e.to_string() });
                                Content::Text(self.templates.get("acknowledge").unwrap_or("I see.").to_string())
                            }
                        }
                    }
                };
                session.turn = TurnState::Turn(5);
                (Role::Reply, reply, None)
            }
            _ => {
                let sticker = self.sticker_for(&session.session_id, agent_turn);
                session.turn = TurnState::Overflow;
                (Role::Overflow, overflow_reply(inbound, &self.replies, sticker), None)
            }
        };
        let body = match &content {
            Content::Text(t) | Content::Sticker(t) => t.clone(),
        };
        store.append_history(history(session, agent_turn, Direction::AgentToUser, &body, now, kind))?;
        session.exchanges = agent_turn;
        step.outbound.push(OutboundMessage {
            user_id: session.user_id.clone(),
            session_id: Some(session.session_id.clone()),
            turn: Some(agent_turn),
            role,
            content,
            response_kind: kind,
        });
        Ok(step)
    }

    /// Reply to a message that arrives with no open session.
    pub fn sessionless_reply(&self, user: &UserId, inbound: &str, now: Timestamp) -> OutboundMessage {
        let label = alloc::format!("{}", now.secs());
        let sid = SessionId(alloc::format!("{user}:idle:{label}"));
        OutboundMessage {
            user_id: user.clone(),
            session_id: None,
            turn: None,
            role: Role::Overflow,
            content: overflow_reply(inbound, &self.replies, self.sticker_for(&sid, 0)),
            response_kind: None,
        }
    }
}

fn history(
    session: &DialogueSession,
    turn: u32,
    direction: Direction,
    body: &str,
    at: Timestamp,
    kind: Option<ResponseKind>,
) -> HistoryRecord {
    HistoryRecord {
        user_id: session.user_id.clone(),
        session_id: session.session_id.clone(),
        turn,
        direction,
        body: body.to_string(),
        timestamp: at,
        response_kind: kind,
    }
}
