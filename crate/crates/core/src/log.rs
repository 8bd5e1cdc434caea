//! The append-only event log: one JSON object per line.
//!
//! Every record carries `seq`, `ts` and a `kind` tag, followed by the
//! kind-specific fields in declaration order. Encoding is deterministic, so
//! equal inputs give byte-identical logs.

use alloc::string::String;
use alloc::vec::Vec;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::backends::Entity;
use crate::config::EngineConfig;
use crate::dialogue::{Content, Role};
use crate::domain::{
    DaySchedule, Fact, FactId, PairLink, ResponseKind, RhythmEstimate, SessionId, Slot, Topic, UserId, UserProfile,
};
use crate::time::{DayType, Timestamp};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEvent {
    Header {
        version: u32,
        config: EngineConfig,
    },
    PairRegistered {
        pair: PairLink,
        elder: UserProfile,
        younger: UserProfile,
    },
    DayPlanned {
        schedule: DaySchedule,
        fell_back: bool,
    },
    PlanFailed {
        user_id: UserId,
        local_date: NaiveDate,
        reason: String,
    },
    QuestionSent {
        user_id: UserId,
        session_id: SessionId,
        local_date: NaiveDate,
        slot: Slot,
        topic: Topic,
        facet: Option<String>,
        text: String,
    },
    ReminderSent {
        user_id: UserId,
        session_id: SessionId,
        text: String,
    },
    SlotSkipped {
        user_id: UserId,
        session_id: SessionId,
        slot: Slot,
    },
    SessionAbandoned {
        user_id: UserId,
        session_id: SessionId,
    },
    UserMessage {
        user_id: UserId,
        session_id: Option<SessionId>,
        turn: Option<u32>,
        text: String,
        sentiment: Option<f64>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        entities: Vec<Entity>,
    },
    AgentMessage {
        user_id: UserId,
        session_id: Option<SessionId>,
        turn: Option<u32>,
        role: Role,
        content: Content,
        response_kind: Option<ResponseKind>,
    },
    FactRecorded {
        fact: Fact,
    },
    FactShared {
        fact_id: FactId,
        to: UserId,
    },
    RhythmUpdated {
        day_type: DayType,
        estimate: RhythmEstimate,
    },
    BackendFailure {
        user_id: UserId,
        session_id: Option<SessionId>,
        turn: u32,
        detail: String,
    },
    DeliveryAttempt {
        user_id: UserId,
        attempt: u32,
        ok: bool,
        detail: Option<String>,
    },
    DeliveryFailed {
        user_id: UserId,
        attempts: u32,
        detail: String,
    },
}

impl LogEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            LogEvent::Header { .. } => "header",
            LogEvent::PairRegistered { .. } => "pair_registered",
            LogEvent::DayPlanned { .. } => "day_planned",
            LogEvent::PlanFailed { .. } => "plan_failed",
            LogEvent::QuestionSent { .. } => "question_sent",
            LogEvent::ReminderSent { .. } => "reminder_sent",
            LogEvent::SlotSkipped { .. } => "slot_skipped",
            LogEvent::SessionAbandoned { .. } => "session_abandoned",
            LogEvent::UserMessage { .. } => "user_message",
            LogEvent::AgentMessage { .. } => "agent_message",
            LogEvent::FactRecorded { .. } => "fact_recorded",
            LogEvent::FactShared { .. } => "fact_shared",
            LogEvent::RhythmUpdated { .. } => "rhythm_updated",
            LogEvent::BackendFailure { .. } => "backend_failure",
            LogEvent::DeliveryAttempt { .. } => "delivery_attempt",
            LogEvent::DeliveryFailed { .. } => "delivery_failed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    pub ts: Timestamp,
    #[serde(flatten)]
    pub event: LogEvent,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum LogError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: expected seq {expected}, found {found}")]
    SequenceGap { line: usize, expected: u64, found: u64 },
    #[error("line {line}: timestamp goes backwards")]
    TimeReversal { line: usize },
    #[error("log is empty or lacks a header")]
    MissingHeader,
}

impl LogRecord {
    pub fn encode(&self) -> String {
        serde_json::to_string(self).expect("log records always serialize")
    }

    pub fn decode(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

/// Buffers records and assigns consecutive sequence numbers.
#[derive(Clone, Debug, Default)]
pub struct EventLog {
    next_seq: u64,
    pending: Vec<LogRecord>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Continues numbering at `next_seq`, after an existing log.
    pub fn resuming_at(next_seq: u64) -> Self {
        Self { next_seq, pending: Vec::new() }
    }

    pub fn push(&mut self, ts: Timestamp, event: LogEvent) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.pending.push(LogRecord { seq, ts, event });
        seq
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn pending(&self) -> &[LogRecord] {
        &self.pending
    }

    pub fn drain(&mut self) -> Vec<LogRecord> {
        core::mem::take(&mut self.pending)
    }
}

/// Encodes records as JSON Lines, each line newline-terminated.
pub fn encode_all(records: &[LogRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.encode());
        out.push('\n');
    }
    out
}

/// Parses a whole log and checks sequence continuity, time order and the
/// leading header.
pub fn decode_all(text: &str) -> Result<Vec<LogRecord>, LogError> {
    let mut out: Vec<LogRecord> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec = LogRecord::decode(line)
            .map_err(|e| LogError::Malformed { line: line_no, reason: alloc::format!("{e}") })?;
        let expected = out.last().map_or(0, |r| r.seq + 1);
        if rec.seq != expected {
            return Err(LogError::SequenceGap { line: line_no, expected, found: rec.seq });
        }
        if out.last().is_some_and(|r| rec.ts < r.ts) {
            return Err(LogError::TimeReversal { line: line_no });
        }
        out.push(rec);
    }
    match out.first() {
        Some(LogRecord { event: LogEvent::Header { .. }, .. }) => Ok(out),
        _ => Err(LogError::MissingHeader),
    }
}

/// The configuration recorded in the header.
pub fn header_config(records: &[LogRecord]) -> Option<&EngineConfig> {
    match records.first() {
        Some(LogRecord { event: LogEvent::Header { config, .. }, .. }) => Some(config),
        _ => None,
    }
}
