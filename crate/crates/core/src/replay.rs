//! Rebuilds knowledge-store state from an event log.

use alloc::string::{String, ToString};

use crate::dialogue::Content;
use crate::domain::ResponseKind;
use crate::log::{LogEvent, LogRecord};
use crate::store::{Direction, HistoryRecord, Journal, KnowledgeStore, NullJournal, StoreChange, StoreError};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("record {seq}: {source}")]
pub struct ReplayError {
    pub seq: u64,
    pub source: StoreError,
}

/// Applies every store-affecting record in order to an empty store.
pub fn replay<'a>(records: impl IntoIterator<Item = &'a LogRecord>) -> Result<KnowledgeStore<NullJournal>, ReplayError> {
    let mut store = KnowledgeStore::replica();
    replay_into(&mut store, records)?;
    Ok(store)
}

/// Applies records onto an existing store without journaling them again.
pub fn replay_into<'a, J: Journal>(
    store: &mut KnowledgeStore<J>,
    records: impl IntoIterator<Item = &'a LogRecord>,
) -> Result<(), ReplayError> {
    for rec in records {
        apply(store, rec).map_err(|source| ReplayError { seq: rec.seq, source })?;
    }
    Ok(())
}

/// Store digest after replaying `records`.
pub fn replay_digest<'a>(records: impl IntoIterator<Item = &'a LogRecord>) -> Result<String, ReplayError> {
    replay(records).map(|s| s.digest())
}

fn apply<J: Journal>(store: &mut KnowledgeStore<J>, rec: &LogRecord) -> Result<(), StoreError> {
    let history = |user_id: &crate::domain::UserId,
                   session_id: &crate::domain::SessionId,
                   turn: u32,
                   direction: Direction,
                   body: &str,
                   response_kind: Option<ResponseKind>| {
        StoreChange::History {
            record: HistoryRecord {
                user_id: user_id.clone(),
                session_id: session_id.clone(),
                turn,
                direction,
                body: body.to_string(),
                timestamp: rec.ts,
                response_kind,
            },
        }
    };
    let change = match &rec.event {
        LogEvent::PairRegistered { pair, .. } => {
            store.link_partners(&pair.elder_id, &pair.younger_id);
            return Ok(());
        }
        LogEvent::QuestionSent { user_id, session_id, text, .. } => {
            history(user_id, session_id, 1, Direction::AgentToUser, text, None)
        }
        LogEvent::UserMessage { user_id, session_id: Some(sid), turn: Some(turn), text, .. } => {
            history(user_id, sid, *turn, Direction::UserToAgent, text, None)
        }
        LogEvent::AgentMessage { user_id, session_id: Some(sid), turn: Some(turn), content, response_kind, .. } => {
            let body = match content {
                Content::Text(t) | Content::Sticker(t) => t,
            };
            history(user_id, sid, *turn, Direction::AgentToUser, body, *response_kind)
        }
        LogEvent::FactRecorded { fact } => StoreChange::FactRecorded { fact: fact.clone() },
        LogEvent::FactShared { fact_id, .. } => StoreChange::FactShared { fact_id: *fact_id },
        _ => return Ok(()),
    };
    store.apply(change)
}
