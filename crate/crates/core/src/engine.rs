//! The orchestration engine: turns clock ticks and inbound messages into
//! outbound messages and log records.

use alloc::collections::BTreeMap;
use alloc::string::ToString;
use alloc::vec::Vec;

use chrono::NaiveDate;

use crate::assets::Assets;
use crate::backends::{Analyzer, Generator, StubAnalyzer, StubGenerator};
use crate::config::{ConfigError, EngineConfig};
use crate::dialogue::{Content, Deps, Dialogue, DialogueError, DialogueNote, OutboundMessage, Role};
use crate::domain::{DialogueSession, DomainError, PairLink, SessionStatus, Topic, UserId, UserProfile};
use crate::log::{EventLog, LogEvent, LogRecord, FORMAT_VERSION};
use crate::scheduler::{PlanOutcome, Scheduler, SchedulerEventKind, SleepFacet};
use crate::store::{KnowledgeStore, StoreChange, StoreError};
use crate::time::{local_date_of, Timestamp};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("profile {found} does not match pair member {expected}")]
    PairMismatch { expected: UserId, found: UserId },
}

impl From<DialogueError> for EngineError {
    fn from(e: DialogueError) -> Self {
        match e {
            DialogueError::Store(s) => EngineError::Store(s),
            other => EngineError::Store(StoreError::StorageFailure(other.to_string())),
        }
    }
}

/// Scheduling window for a newly registered pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Horizon {
    /// First local day with questions; `None` means the day after registration.
    pub first_date: Option<NaiveDate>,
    /// Last local day with questions, inclusive; `None` runs indefinitely.
    pub last_date: Option<NaiveDate>,
}

pub struct Engine<A = StubAnalyzer, G = StubGenerator> {
    cfg: EngineConfig,
    scheduler: Scheduler,
    dialogue: Dialogue,
    store: KnowledgeStore,
    analyzer: A,
    generator: G,
    profiles: BTreeMap<UserId, UserProfile>,
    pairs: BTreeMap<UserId, PairLink>,
    sessions: BTreeMap<UserId, DialogueSession>,
    log: EventLog,
    clock: Timestamp,
}

impl Engine {
    /// An engine with the bundled assets and the dictionary-backed stubs.
    pub fn with_stubs(cfg: EngineConfig, start: Timestamp) -> Result<Self, EngineError> {
        let assets = Assets::default();
        let analyzer = StubAnalyzer::new(&assets.food, &assets.place, assets.lexicon.clone());
        let generator = StubGenerator::new(&assets.templates, &assets.food, &assets.place, assets.lexicon.clone());
        Engine::new(cfg, assets, analyzer, generator, start)
    }
}

impl<A: Analyzer, G: Generator> Engine<A, G> {
    pub fn new(cfg: EngineConfig, assets: Assets, analyzer: A, generator: G, start: Timestamp) -> Result<Self, EngineError> {
        Self::resume(cfg, assets, analyzer, generator, start, EventLog::new())
    }

    /// Like [`Engine::new`] but appending to `log`, whose numbering continues.
    pub fn resume(
        cfg: EngineConfig,
        assets: Assets,
        analyzer: A,
        generator: G,
        start: Timestamp,
        mut log: EventLog,
    ) -> Result<Self, EngineError> {
        cfg.validate()?;
        if log.next_seq() == 0 {
            log.push(start, LogEvent::Header { version: FORMAT_VERSION, config: cfg.clone() });
        }
        let dialogue =
            Dialogue { templates: assets.templates, questions: assets.questions, replies: assets.replies, cfg: cfg.clone() };
        Ok(Self {
            scheduler: Scheduler::new(&cfg),
            cfg,
            dialogue,
            store: KnowledgeStore::new(),
            analyzer,
            generator,
            profiles: BTreeMap::new(),
            pairs: BTreeMap::new(),
            sessions: BTreeMap::new(),
            log,
            clock: start,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn store(&self) -> &KnowledgeStore {
        &self.store
    }

    /// Replaces the knowledge store, e.g. with one rebuilt from an earlier log.
    pub fn restore_store(&mut self, store: KnowledgeStore) {
        self.store = store;
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.scheduler
    }

    pub fn profile(&self, user: &UserId) -> Option<&UserProfile> {
        self.profiles.get(user)
    }

    pub fn users(&self) -> impl Iterator<Item = &UserId> {
        self.profiles.keys()
    }

    pub fn pair_of(&self, user: &UserId) -> Option<&PairLink> {
        self.pairs.get(user)
    }

    /// The user's most recent session, open or not.
    pub fn session(&self, user: &UserId) -> Option<&DialogueSession> {
        self.sessions.get(user)
    }

    pub fn next_due(&self) -> Option<Timestamp> {
        self.scheduler.next_due()
    }

    /// Timestamp of the latest processed input; log time never goes backwards.
    pub fn clock(&self) -> Timestamp {
        self.clock
    }

    pub fn drain_log(&mut self) -> Vec<LogRecord> {
        self.log.drain()
    }

    /// Appends a record produced outside the engine, such as a delivery attempt.
    pub fn record(&mut self, now: Timestamp, event: LogEvent) {
        let now = self.advance(now);
        self.log.push(now, event);
    }

    fn advance(&mut self, now: Timestamp) -> Timestamp {
        self.clock = self.clock.max(now);
        self.clock
    }

    pub fn register_pair(
        &mut self,
        pair: PairLink,
        elder: UserProfile,
        younger: UserProfile,
        horizon: Horizon,
        now: Timestamp,
    ) -> Result<(), EngineError> {
        let now = self.advance(now);
        let elder = elder.validated()?;
        let younger = younger.validated()?;
        for (expected, found) in [(&pair.elder_id, &elder.user_id), (&pair.younger_id, &younger.user_id)] {
            if expected != found {
                return Err(EngineError::PairMismatch { expected: expected.clone(), found: found.clone() });
            }
        }
        for id in [&pair.elder_id, &pair.younger_id] {
            if self.pairs.contains_key(id) {
                return Err(DomainError::AlreadyPaired(id.clone()).into());
            }
        }
        self.log.push(now, LogEvent::PairRegistered { pair: pair.clone(), elder: elder.clone(), younger: younger.clone() });
        self.store.link_partners(&pair.elder_id, &pair.younger_id);
        for profile in [elder, younger] {
            let tz = profile.zone()?;
            let first = horizon.first_date.unwrap_or_else(|| {
                let today = local_date_of(tz, now);
                today.succ_opt().unwrap_or(today)
            });
            self.scheduler.add_user(profile.clone(), tz, first, horizon.last_date, now);
            self.pairs.insert(profile.user_id.clone(), pair.clone());
            self.profiles.insert(profile.user_id.clone(), profile);
        }
        Ok(())
    }

    /// Fires everything the scheduler has due at or before `now`.
    pub fn tick(&mut self, now: Timestamp) -> Result<Vec<OutboundMessage>, EngineError> {
        let now = self.advance(now);
        let events = self.scheduler.on_clock(now);
        for plan in self.scheduler.take_plans() {
            let event = match plan {
                PlanOutcome::Planned { schedule, fell_back } => LogEvent::DayPlanned { schedule, fell_back },
                PlanOutcome::Failed { user_id, date, error } => {
                    LogEvent::PlanFailed { user_id, local_date: date, reason: error.to_string() }
                }
            };
            self.log.push(now, event);
        }
        let mut out = Vec::new();
        for ev in events {
            let user = ev.user_id.clone();
            let current = self.sessions.get_mut(&user).filter(|s| s.session_id == ev.session_id);
            match ev.kind {
                SchedulerEventKind::SendQuestion => {
                    let (session, msg) =
                        self.dialogue.open_session(&mut self.store, &user, ev.local_date, ev.slot, ev.topic, now)?;
                    self.store.take_changes();
                    self.log.push(
                        now,
                        LogEvent::QuestionSent {
                            user_id: user.clone(),
                            session_id: session.session_id.clone(),
                            local_date: ev.local_date,
                            slot: ev.slot,
                            topic: ev.topic,
                            facet: session.facet.clone(),
                            text: msg.content.text().unwrap_or_default().to_string(),
                        },
                    );
                    self.sessions.insert(user, session);
                    out.push(msg);
                }
                SchedulerEventKind::SendReminder => {
                    if let Some(s) = current {
                        s.mark_reminded();
                    }
                    let text = self.dialogue.reminder_text().to_string();
                    self.log.push(
                        now,
                        LogEvent::ReminderSent { user_id: user.clone(), session_id: ev.session_id.clone(), text: text.clone() },
                    );
                    out.push(OutboundMessage {
                        user_id: user,
                        session_id: Some(ev.session_id),
                        turn: None,
                        role: Role::Reminder,
                        content: Content::Text(text),
                        response_kind: None,
                    });
                }
                SchedulerEventKind::SkipSlot => {
                    if let Some(s) = current {
                        s.status = SessionStatus::Skipped;
                    }
                    self.log.push(now, LogEvent::SlotSkipped { user_id: user, session_id: ev.session_id, slot: ev.slot });
                }
                SchedulerEventKind::ForceNextAfterTimeout => {
                    if let Some(s) = current {
                        s.status = SessionStatus::Abandoned;
                    }
                    self.log.push(now, LogEvent::SessionAbandoned { user_id: user, session_id: ev.session_id });
                }
            }
        }
        Ok(out)
    }

    /// Processes one inbound message, after first firing anything due.
    pub fn handle_user_message(
        &mut self,
        user: &UserId,
        text: &str,
        now: Timestamp,
    ) -> Result<Vec<OutboundMessage>, EngineError> {
        if !self.profiles.contains_key(user) {
            return Err(EngineError::UnknownUser(user.clone()));
        }
        let mut out = self.tick(now)?;
        let now = self.clock;
        let Some(session) = self.sessions.get_mut(user).filter(|s| s.is_open()) else {
            let sentiment = self.analyzer.sentiment(text).ok();
            self.log.push(
                now,
                LogEvent::UserMessage {
                    user_id: user.clone(),
                    session_id: None,
                    turn: None,
                    text: text.to_string(),
                    sentiment,
                    entities: Vec::new(),
                },
            );
            let reply = self.dialogue.sessionless_reply(user, text, now);
            self.push_agent(now, &reply);
            out.push(reply);
            return Ok(out);
        };

        let pair = &self.pairs[user];
        let partner = pair.partner_of(user).and_then(|p| self.profiles.get(p));
        let deps = Deps {
            store: &mut self.store,
            analyzer: &self.analyzer,
            generator: &self.generator,
            partner,
            condition: pair.condition,
        };
        let step = self.dialogue.advance_session(session, text, now, deps)?;
        let session = session.clone();
        self.log.push(
            now,
            LogEvent::UserMessage {
                user_id: user.clone(),
                session_id: Some(session.session_id.clone()),
                turn: Some(session.exchanges - 1),
                text: text.to_string(),
                sentiment: step.sentiment,
                entities: step.entities.clone(),
            },
        );
        for change in self.store.take_changes() {
            match change {
                StoreChange::FactRecorded { fact } => {
                    self.log.push(now, LogEvent::FactRecorded { fact });
                }
                StoreChange::FactShared { fact_id } => {
                    self.log.push(now, LogEvent::FactShared { fact_id, to: user.clone() });
                }
                // history is implied by the message records
                StoreChange::History { .. } => {}
            }
        }
        for note in &step.notes {
            match note {
                DialogueNote::Answered => {
                    self.scheduler.mark_answered(user, &session.session_id);
                    if session.topic == Topic::Sleep {
                        let facet = SleepFacet::from_key(session.facet.as_deref());
                        if let Some((day_type, estimate)) =
                            self.scheduler.observe_sleep_answer(user, session.local_date, facet, text, now)
                        {
                            self.log.push(now, LogEvent::RhythmUpdated { day_type, estimate });
                        }
                    }
                }
                DialogueNote::BackendFailure { turn, detail } => {
                    self.log.push(
                        now,
                        LogEvent::BackendFailure {
                            user_id: user.clone(),
                            session_id: Some(session.session_id.clone()),
                            turn: *turn,
                            detail: detail.clone(),
                        },
                    );
                }
                DialogueNote::FactRecorded(_) | DialogueNote::FactShared(_) => {}
            }
        }
        for msg in step.outbound {
            self.push_agent(now, &msg);
            out.push(msg);
        }
        Ok(out)
    }

    fn push_agent(&mut self, now: Timestamp, msg: &OutboundMessage) {
        self.log.push(
            now,
            LogEvent::AgentMessage {
                user_id: msg.user_id.clone(),
                session_id: msg.session_id.clone(),
                turn: msg.turn,
                role: msg.role,
                content: msg.content.clone(),
                response_kind: msg.response_kind,
            },
        );
    }
}
