//! Dialogue history and extracted facts.
//!
//! Every mutation is first written to a [`Journal`]; only a successful write
//! is applied in memory. The journal stream is what the event log persists,
//! and [`KnowledgeStore::apply`] rebuilds identical state from it.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{normalize, Fact, FactId, ResponseKind, SessionId, Topic, UserId};
use crate::time::Timestamp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AgentToUser,
    UserToAgent,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub user_id: UserId,
    pub session_id: SessionId,
    pub turn: u32,
    pub direction: Direction,
    pub body: String,
    pub timestamp: Timestamp,
    pub response_kind: Option<ResponseKind>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("storage write failed: {0}")]
    StorageFailure(String),
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("{0} was already shared")]
    AlreadyShared(FactId),
    #[error("unknown {0}")]
    UnknownFact(FactId),
    #[error("fact content is empty")]
    EmptyContent,
    #[error("history entry ({session}, turn {turn}, {direction:?}) already exists")]
    DuplicateHistory { session: SessionId, turn: u32, direction: Direction },
    #[error("history for {0} would go back in time")]
    HistoryOutOfOrder(SessionId),
}

/// One durable mutation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "change", rename_all = "snake_case")]
pub enum StoreChange {
    FactRecorded { fact: Fact },
    FactShared { fact_id: FactId },
    History { record: HistoryRecord },
}

pub trait Journal {
    fn write(&mut self, change: &StoreChange) -> Result<(), String>;
}

/// Buffers changes for the caller to drain into the event log.
impl Journal for Vec<StoreChange> {
    fn write(&mut self, change: &StoreChange) -> Result<(), String> {
        self.push(change.clone());
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct NullJournal;

impl Journal for NullJournal {
    fn write(&mut self, _change: &StoreChange) -> Result<(), String> {
        Ok(())
    }
}

/// What the caller knows about a new fact.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NewFact {
    pub user_id: UserId,
    pub topic: Topic,
    pub facet: Option<String>,
    pub content: String,
    pub raw_utterance: String,
    pub local_date: NaiveDate,
    pub session_id: Option<SessionId>,
}

#[derive(Clone, Debug, Default)]
pub struct KnowledgeStore<J = Vec<StoreChange>> {
    journal: J,
    partners: BTreeMap<UserId, UserId>,
    facts: BTreeMap<FactId, Fact>,
    facts_by_user: BTreeMap<UserId, Vec<FactId>>,
    history: Vec<HistoryRecord>,
    history_keys: BTreeSet<(SessionId, u32, Direction)>,
    by_session: BTreeMap<SessionId, Vec<usize>>,
    session_clock: BTreeMap<SessionId, Timestamp>,
    next_fact: u64,
}

impl<J: Journal> KnowledgeStore<J> {
    pub fn with_journal(journal: J) -> Self {
        Self {
            journal,
            partners: BTreeMap::new(),
            facts: BTreeMap::new(),
            facts_by_user: BTreeMap::new(),
            history: Vec::new(),
            history_keys: BTreeSet::new(),
            by_session: BTreeMap::new(),
            session_clock: BTreeMap::new(),
            next_fact: 1,
        }
    }

    pub fn journal_mut(&mut self) -> &mut J {
        &mut self.journal
    }

    /// Pair membership is configuration, not journaled state.
    pub fn link_partners(&mut self, a: &UserId, b: &UserId) {
        self.partners.insert(a.clone(), b.clone());
        self.partners.insert(b.clone(), a.clone());
    }

    pub fn partner_of(&self, user: &UserId) -> Option<&UserId> {
        self.partners.get(user)
    }

    fn commit(&mut self, change: StoreChange) -> Result<(), StoreError> {
        self.journal.write(&change).map_err(StoreError::StorageFailure)?;
        self.apply_unchecked(change);
        Ok(())
    }

    pub fn record_fact(&mut self, new: NewFact) -> Result<Fact, StoreError> {
        if new.content.trim().is_empty() {
            return Err(StoreError::EmptyContent);
        }
        let fact = Fact {
            fact_id: FactId(self.next_fact),
            user_id: new.user_id,
            topic: new.topic,
            facet: new.facet,
            content: new.content,
            raw_utterance: new.raw_utterance,
            local_date: new.local_date,
            session_id: new.session_id,
            shared_to_partner: false,
        };
        self.commit(StoreChange::FactRecorded { fact: fact.clone() })?;
        Ok(fact)
    }

    pub fn mark_shared(&mut self, fact_id: FactId) -> Result<Fact, StoreError> {
        match self.facts.get(&fact_id) {
            None => return Err(StoreError::UnknownFact(fact_id)),
            Some(f) if f.shared_to_partner => return Err(StoreError::AlreadyShared(fact_id)),
            Some(_) => {}
        }
        self.commit(StoreChange::FactShared { fact_id })?;
        Ok(self.facts[&fact_id].clone())
    }

    pub fn append_history(&mut self, record: HistoryRecord) -> Result<(), StoreError> {
        let key = (record.session_id.clone(), record.turn, record.direction);
        if self.history_keys.contains(&key) {
            return Err(StoreError::DuplicateHistory { session: key.0, turn: key.1, direction: key.2 });
        }
        if self.session_clock.get(&record.session_id).is_some_and(|&last| record.timestamp < last) {
            return Err(StoreError::HistoryOutOfOrder(record.session_id));
        }
        self.commit(StoreChange::History { record })
    }

    /// Most recent unshared partner fact on `topic`. Value facts must also
    /// share the question facet.
    pub fn retrieve_partner_fact(
        &self,
        user: &UserId,
        topic: Topic,
        facet: Option<&str>,
    ) -> Result<Option<&Fact>, StoreError> {
        let partner = self.partners.get(user).ok_or_else(|| StoreError::UnknownUser(user.clone()))?;
        let ids = self.facts_by_user.get(partner).map(Vec::as_slice).unwrap_or(&[]);
        Ok(ids
            .iter()
            .map(|id| &self.facts[id])
            .filter(|f| !f.shared_to_partner && f.topic == topic)
            .filter(|f| topic != Topic::Value || f.facet.as_deref() == facet)
            .max_by_key(|f| (f.local_date, f.fact_id)))
    }

    /// The user's own earlier statement of the same normalized topic and
    /// content from a previous local day.
    pub fn find_similar_past(
        &self,
        user: &UserId,
        topic: Topic,
        content: &str,
        today: NaiveDate,
    ) -> Option<&HistoryRecord> {
        let wanted = normalize(content);
        let ids = self.facts_by_user.get(user)?;
        ids.iter()
            .rev()
            .map(|id| &self.facts[id])
            .filter(|f| f.topic == topic && f.local_date < today && normalize(&f.content) == wanted)
            .find_map(|f| {
                let session = f.session_id.as_ref()?;
                self.session_history(session).find(|h| h.direction == Direction::UserToAgent && h.turn == 2)
            })
    }

    pub fn fact(&self, id: FactId) -> Option<&Fact> {
        self.facts.get(&id)
    }

    pub fn facts(&self) -> impl Iterator<Item = &Fact> {
        self.facts.values()
    }

    /// History of one session in append order.
    pub fn session_history<'a>(&'a self, session: &SessionId) -> impl Iterator<Item = &'a HistoryRecord> + 'a {
        let idx = self.by_session.get(session).map(Vec::as_slice).unwrap_or(&[]);
        idx.iter().map(move |&i| &self.history[i])
    }

    pub fn history(&self) -> &[HistoryRecord] {
        &self.history
    }

    /// Re-applies a journaled change without journaling it again.
    pub fn apply(&mut self, change: StoreChange) -> Result<(), StoreError> {
        match &change {
            StoreChange::FactRecorded { fact } if fact.content.trim().is_empty() => {
                return Err(StoreError::EmptyContent)
            }
            StoreChange::FactShared { fact_id } => match self.facts.get(fact_id) {
                None => return Err(StoreError::UnknownFact(*fact_id)),
                Some(f) if f.shared_to_partner => return Err(StoreError::AlreadyShared(*fact_id)),
                Some(_) => {}
            },
            StoreChange::History { record } => {
                let key = (record.session_id.clone(), record.turn, record.direction);
                if self.history_keys.contains(&key) {
                    return Err(StoreError::DuplicateHistory { session: key.0, turn: key.1, direction: key.2 });
                }
            }
            _ => {}
        }
        self.apply_unchecked(change);
        Ok(())
    }

    fn apply_unchecked(&mut self, change: StoreChange) {
        match change {
            StoreChange::FactRecorded { fact } => {
                self.next_fact = self.next_fact.max(fact.fact_id.0 + 1);
                self.facts_by_user.entry(fact.user_id.clone()).or_default().push(fact.fact_id);
                self.facts.insert(fact.fact_id, fact);
            }
            StoreChange::FactShared { fact_id } => {
                if let Some(f) = self.facts.get_mut(&fact_id) {
                    f.shared_to_partner = true;
                }
            }
            StoreChange::History { record } => {
                self.history_keys.insert((record.session_id.clone(), record.turn, record.direction));
                let clock = self.session_clock.entry(record.session_id.clone()).or_insert(record.timestamp);
                *clock = (*clock).max(record.timestamp);
                self.by_session.entry(record.session_id.clone()).or_default().push(self.history.len());
                self.history.push(record);
            }
        }
    }

    /// SHA-256 over the canonical encoding of facts and history, hex encoded.
    pub fn digest(&self) -> String {
        #[derive(Serialize)]
        struct Canonical<'a> {
            facts: Vec<&'a Fact>,
            history: &'a [HistoryRecord],
        }
        let canonical = Canonical { facts: self.facts.values().collect(), history: &self.history };
        let bytes = serde_json::to_vec(&canonical).expect("store state serializes");
        let hash = Sha256::digest(&bytes);
        let mut out = String::with_capacity(64);
        for b in hash {
            let _ = write!(out, "{b:02x}");
        }
        out
    }
}

impl KnowledgeStore<Vec<StoreChange>> {
    pub fn new() -> Self {
        Self::with_journal(Vec::new())
    }

    pub fn take_changes(&mut self) -> Vec<StoreChange> {
        core::mem::take(&mut self.journal)
    }
}

impl KnowledgeStore<NullJournal> {
    pub fn replica() -> Self {
        Self::with_journal(NullJournal)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2025, 1, day).unwrap()
    }

    fn new_fact(user: &str, topic: Topic, content: &str, day: u32) -> NewFact {
        NewFact {
            user_id: user.into(),
            topic,
            facet: None,
            content: content.into(),
            raw_utterance: alloc::format!("I had {content}"),
            local_date: d(day),
            session_id: Some(SessionId(alloc::format!("{user}:{day}"))),
        }
    }

    fn store() -> KnowledgeStore {
        let mut s = KnowledgeStore::new();
        s.link_partners(&"g".into(), &"c".into());
        s
    }

    #[test]
    fn record_fact_starts_unshared() {
        let mut s = store();
        let f = s.record_fact(new_fact("g", Topic::Meal, "pasta", 6)).unwrap();
        assert_eq!((f.topic, f.content.as_str(), f.shared_to_partner), (Topic::Meal, "pasta", false));
        let again = s.record_fact(new_fact("g", Topic::Meal, "pasta", 6)).unwrap();
        assert_ne!(f.fact_id, again.fact_id);
        assert_eq!(s.record_fact(new_fact("g", Topic::Meal, " ", 6)), Err(StoreError::EmptyContent));
        assert_eq!(s.take_changes().len(), 2);
    }

    #[test]
    fn partner_fact_is_most_recent_unshared() {
        let mut s = store();
        let day1 = s.record_fact(new_fact("c", Topic::Meal, "ramen", 1)).unwrap();
        let day2 = s.record_fact(new_fact("c", Topic::Meal, "sushi", 2)).unwrap();
        let _loc = s.record_fact(new_fact("c", Topic::Location, "park", 3)).unwrap();
        s.mark_shared(day1.fact_id).unwrap();
        // oracle: unshared meal facts sorted by date, take last
        let mut candidates: Vec<_> =
            s.facts().filter(|f| f.user_id.as_str() == "c" && f.topic == Topic::Meal && !f.shared_to_partner).collect();
        candidates.sort_by_key(|f| f.local_date);
        let expected = candidates.last().unwrap().fact_id;
        assert_eq!(expected, day2.fact_id);
        assert_eq!(s.retrieve_partner_fact(&"g".into(), Topic::Meal, None).unwrap().unwrap().fact_id, expected);
    }

    #[test]
    fn partner_fact_topic_mismatch_and_empty() {
        let mut s = store();
        assert_eq!(s.retrieve_partner_fact(&"g".into(), Topic::Meal, None).unwrap(), None);
        s.record_fact(new_fact("c", Topic::Location, "park", 1)).unwrap();
        assert_eq!(s.retrieve_partner_fact(&"g".into(), Topic::Meal, None).unwrap(), None);
        assert_eq!(
            s.retrieve_partner_fact(&"x".into(), Topic::Meal, None),
            Err(StoreError::UnknownUser("x".into()))
        );
    }

    #[test]
    fn value_facts_match_on_facet() {
        let mut s = store();
        let mut nf = new_fact("c", Topic::Value, "autumn", 1);
        nf.facet = Some("season".into());
        s.record_fact(nf).unwrap();
        assert!(s.retrieve_partner_fact(&"g".into(), Topic::Value, Some("food")).unwrap().is_none());
        assert!(s.retrieve_partner_fact(&"g".into(), Topic::Value, Some("season")).unwrap().is_some());
    }

    #[test]
    fn mark_shared_flips_once() {
        let mut s = store();
        let f = s.record_fact(new_fact("c", Topic::Meal, "pasta", 1)).unwrap();
        assert!(s.mark_shared(f.fact_id).unwrap().shared_to_partner);
        assert_eq!(s.mark_shared(f.fact_id), Err(StoreError::AlreadyShared(f.fact_id)));
        assert_eq!(s.mark_shared(FactId(99)), Err(StoreError::UnknownFact(FactId(99))));
        assert_eq!(s.retrieve_partner_fact(&"g".into(), Topic::Meal, None).unwrap(), None);
    }

    fn answer(user: &str, day: u32, body: &str) -> HistoryRecord {
        HistoryRecord {
            user_id: user.into(),
            session_id: SessionId(alloc::format!("{user}:{day}")),
            turn: 2,
            direction: Direction::UserToAgent,
            body: body.into(),
            timestamp: Timestamp(i64::from(day) * 86_400),
            response_kind: None,
        }
    }

    #[test]
    fn similar_past_requires_earlier_day() {
        let mut s = store();
        s.append_history(answer("g", 1, "I ate curry")).unwrap();
        s.record_fact(new_fact("g", Topic::Meal, "curry", 1)).unwrap();
        let hit = s.find_similar_past(&"g".into(), Topic::Meal, "Curry", d(4)).unwrap();
        assert_eq!(hit.body, "I ate curry");
        assert!(s.find_similar_past(&"g".into(), Topic::Meal, "sushi", d(4)).is_none());
        assert!(s.find_similar_past(&"g".into(), Topic::Meal, "curry", d(1)).is_none(), "same day only");
        assert!(s.find_similar_past(&"g".into(), Topic::Location, "curry", d(4)).is_none());
    }

    #[test]
    fn history_keys_are_unique_and_ordered() {
        let mut s = store();
        s.append_history(answer("g", 1, "a")).unwrap();
        assert!(matches!(s.append_history(answer("g", 1, "b")), Err(StoreError::DuplicateHistory { .. })));
        let mut earlier = answer("g", 1, "c");
        earlier.turn = 4;
        earlier.timestamp = Timestamp(0);
        assert!(matches!(s.append_history(earlier), Err(StoreError::HistoryOutOfOrder(_))));
    }

    struct Broken;
    impl Journal for Broken {
        fn write(&mut self, _: &StoreChange) -> Result<(), String> {
            Err("disk full".into())
        }
    }

    #[test]
    fn failed_write_leaves_state_untouched() {
        let mut s = KnowledgeStore::with_journal(Broken);
        assert_eq!(
            s.record_fact(new_fact("g", Topic::Meal, "pasta", 1)),
            Err(StoreError::StorageFailure("disk full".into()))
        );
        assert_eq!(s.facts().count(), 0);
    }

    #[test]
    fn replay_reproduces_digest() {
        let mut s = store();
        s.append_history(answer("g", 1, "I ate curry")).unwrap();
        let f = s.record_fact(new_fact("g", Topic::Meal, "curry", 1)).unwrap();
        s.mark_shared(f.fact_id).unwrap();
        let mut replica = KnowledgeStore::replica();
        for c in s.take_changes() {
            replica.apply(c).unwrap();
        }
        assert_eq!(replica.digest(), s.digest());
        assert_eq!(s.digest().len(), 64);
    }
}
