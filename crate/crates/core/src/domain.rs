//! Shared vocabulary: participants, pairs, topics, schedules, sessions and facts.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use chrono::NaiveDate;
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use crate::time::{ClockMinutes, DayType, Timestamp};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.into())
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

string_id!(
    /// Opaque participant identifier.
    UserId
);
string_id!(PairId);
string_id!(
    /// `user:date:slot`; unique per scheduled question.
    SessionId
);

impl SessionId {
    pub fn for_slot(user: &UserId, date: NaiveDate, slot: Slot) -> Self {
        Self(alloc::format!("{user}:{date}:{}", slot.as_str()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FactId(pub u64);

impl fmt::Display for FactId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "fact-{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum DomainError {
    #[error("user {0}: display name is empty")]
    EmptyDisplayName(UserId),
    #[error("user {user}: wake {wake} does not precede bed {bed} on {day:?}")]
    WakeAfterBed { user: UserId, day: DayType, wake: ClockMinutes, bed: ClockMinutes },
    #[error("unknown time zone {0:?}")]
    UnknownZone(String),
    #[error("pair {0}: elder and younger must be different users")]
    SelfPair(PairId),
    #[error("user {0} already belongs to a pair")]
    AlreadyPaired(UserId),
    #[error("slot status cannot move from {from:?} to {to:?}")]
    InvalidTransition { from: SlotStatus, to: SlotStatus },
    #[error("unknown {kind} {value:?}")]
    UnknownName { kind: &'static str, value: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Sharing,
    NonSharing,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Sharing => "sharing",
            Condition::NonSharing => "non_sharing",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "sharing" => Ok(Self::Sharing),
            "nonsharing" => Ok(Self::NonSharing),
            _ => Err(DomainError::UnknownName { kind: "condition", value: s.into() }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topic {
    Sleep,
    Meal,
    Location,
    Impression,
    Plan,
    Value,
}

impl Topic {
    pub const ALL: [Topic; 6] =
        [Topic::Sleep, Topic::Meal, Topic::Location, Topic::Impression, Topic::Plan, Topic::Value];

    pub fn as_str(self) -> &'static str {
        match self {
            Topic::Sleep => "sleep",
            Topic::Meal => "meal",
            Topic::Location => "location",
            Topic::Impression => "impression",
            Topic::Plan => "plan",
            Topic::Value => "value",
        }
    }
}

impl FromStr for Topic {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Topic::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| DomainError::UnknownName { kind: "topic", value: s.into() })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Morning,
    Noon,
    Afternoon,
    Evening,
    Night,
}

impl Slot {
    pub const ALL: [Slot; 5] = [Slot::Morning, Slot::Noon, Slot::Afternoon, Slot::Evening, Slot::Night];

    pub fn default_topic(self) -> Topic {
        match self {
            Slot::Morning => Topic::Sleep,
            Slot::Noon => Topic::Meal,
            Slot::Afternoon => Topic::Location,
            Slot::Evening => Topic::Impression,
            Slot::Night => Topic::Plan,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Slot::Morning => "morning",
            Slot::Noon => "noon",
            Slot::Afternoon => "afternoon",
            Slot::Evening => "evening",
            Slot::Night => "night",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotStatus {
    Pending,
    Sent,
    Answered,
    Reminded,
    Skipped,
}

impl SlotStatus {
    pub fn can_move_to(self, to: SlotStatus) -> bool {
        use SlotStatus::*;
        matches!(
            (self, to),
            (Pending, Sent) | (Sent, Answered | Reminded | Skipped) | (Reminded, Answered | Skipped)
        )
    }

    pub fn transition(&mut self, to: SlotStatus) -> Result<(), DomainError> {
        if !self.can_move_to(to) {
            return Err(DomainError::InvalidTransition { from: *self, to });
        }
        *self = to;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: UserId,
    pub display_name: String,
    pub registered_wake_weekday: ClockMinutes,
    pub registered_wake_weekend: ClockMinutes,
    pub registered_bed_weekday: ClockMinutes,
    pub registered_bed_weekend: ClockMinutes,
    pub timezone: String,
}

impl UserProfile {
    /// Checks invariants and normalizes bed times that fall past midnight.
    pub fn validated(mut self) -> Result<Self, DomainError> {
        if self.display_name.trim().is_empty() {
            return Err(DomainError::EmptyDisplayName(self.user_id));
        }
        self.zone()?;
        for day in [DayType::Weekday, DayType::Weekend] {
            let (wake, bed) = match day {
                DayType::Weekday => (self.registered_wake_weekday, &mut self.registered_bed_weekday),
                DayType::Weekend => (self.registered_wake_weekend, &mut self.registered_bed_weekend),
            };
            if *bed <= wake && bed.minutes() < 1440 {
                *bed = ClockMinutes(bed.minutes() + 1440);
            }
            if wake.minutes() >= 1440 || *bed <= wake {
                return Err(DomainError::WakeAfterBed { user: self.user_id.clone(), day, wake, bed: *bed });
            }
        }
        Ok(self)
    }

    pub fn zone(&self) -> Result<Tz, DomainError> {
        self.timezone.parse::<Tz>().map_err(|_| DomainError::UnknownZone(self.timezone.clone()))
    }

    pub fn registered(&self, day: DayType) -> (ClockMinutes, ClockMinutes) {
        match day {
            DayType::Weekday => (self.registered_wake_weekday, self.registered_bed_weekday),
            DayType::Weekend => (self.registered_wake_weekend, self.registered_bed_weekend),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairLink {
    pub pair_id: PairId,
    pub elder_id: UserId,
    pub younger_id: UserId,
    pub condition: Condition,
}

impl PairLink {
    pub fn new(pair_id: PairId, elder_id: UserId, younger_id: UserId, condition: Condition) -> Result<Self, DomainError> {
        if elder_id == younger_id {
            return Err(DomainError::SelfPair(pair_id));
        }
        Ok(Self { pair_id, elder_id, younger_id, condition })
    }

    pub fn partner_of(&self, user: &UserId) -> Option<&UserId> {
        if *user == self.elder_id {
            Some(&self.younger_id)
        } else if *user == self.younger_id {
            Some(&self.elder_id)
        } else {
            None
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhythmSource {
    Registered,
    Inferred,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RhythmEstimate {
    pub user_id: UserId,
    pub est_wake: ClockMinutes,
    pub est_bed: ClockMinutes,
    pub source: RhythmSource,
    pub last_updated: Timestamp,
}

impl RhythmEstimate {
    pub fn registered(profile: &UserProfile, day: DayType, at: Timestamp) -> Self {
        let (est_wake, est_bed) = profile.registered(day);
        Self { user_id: profile.user_id.clone(), est_wake, est_bed, source: RhythmSource::Registered, last_updated: at }
    }

    pub fn is_valid(&self) -> bool {
        self.est_wake < self.est_bed && self.est_wake.minutes() < 1440
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleSlot {
    pub slot: Slot,
    pub topic: Topic,
    pub fire_at: Timestamp,
    pub status: SlotStatus,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DaySchedule {
    pub user_id: UserId,
    pub local_date: NaiveDate,
    pub slots: Vec<ScheduleSlot>,
    pub value_substituted: Option<Slot>,
}

impl DaySchedule {
    pub fn slot(&self, slot: Slot) -> &ScheduleSlot {
        &self.slots[slot.index()]
    }

    pub fn slot_mut(&mut self, slot: Slot) -> &mut ScheduleSlot {
        &mut self.slots[slot.index()]
    }

    pub fn topics(&self) -> Vec<Topic> {
        self.slots.iter().map(|s| s.topic).collect()
    }

    pub fn check_invariants(&self) -> bool {
        self.slots.len() == 5
            && self.slots.iter().zip(Slot::ALL).all(|(s, expected)| s.slot == expected)
            && self.slots.windows(2).all(|w| w[0].fire_at < w[1].fire_at)
            && match self.value_substituted {
                None => self.slots.iter().all(|s| s.topic == s.slot.default_topic()),
                Some(replaced) => self.slots.iter().all(|s| {
                    if s.slot == replaced {
                        s.topic == Topic::Value
                    } else {
                        s.topic == s.slot.default_topic()
                    }
                }),
            }
    }
}

/// Progress through the five-turn exchange. Agent speaks on odd turns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnState {
    /// Last completed turn, 1..=5.
    Turn(u8),
    Overflow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Open,
    Skipped,
    Abandoned,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueSession {
    pub session_id: SessionId,
    pub user_id: UserId,
    pub local_date: NaiveDate,
    pub slot: Slot,
    pub topic: Topic,
    /// Question subtype (e.g. `bed`/`wake` for sleep, `season` for value).
    pub facet: Option<String>,
    pub turn: TurnState,
    /// Number of history entries written so far; overflow messages keep counting past 5.
    pub exchanges: u32,
    pub question_sent_at: Timestamp,
    pub last_user_msg_at: Option<Timestamp>,
    pub reminder_sent: bool,
    pub status: SessionStatus,
}

impl DialogueSession {
    pub fn open(
        user_id: UserId,
        local_date: NaiveDate,
        slot: Slot,
        topic: Topic,
        facet: Option<String>,
        sent_at: Timestamp,
    ) -> Self {
        Self {
            session_id: SessionId::for_slot(&user_id, local_date, slot),
            user_id,
            local_date,
            slot,
            topic,
            facet,
            turn: TurnState::Turn(1),
            exchanges: 1,
            question_sent_at: sent_at,
            last_user_msg_at: None,
            reminder_sent: false,
            status: SessionStatus::Open,
        }
    }

    pub fn is_open(&self) -> bool {
        self.status == SessionStatus::Open
    }

    pub fn answered(&self) -> bool {
        !matches!(self.turn, TurnState::Turn(1))
    }

    /// Flips `reminder_sent`; returns false if it was already set.
    pub fn mark_reminded(&mut self) -> bool {
        !core::mem::replace(&mut self.reminder_sent, true)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub fact_id: FactId,
    pub user_id: UserId,
    pub topic: Topic,
    pub facet: Option<String>,
    pub content: String,
    pub raw_utterance: String,
    pub local_date: NaiveDate,
    pub session_id: Option<SessionId>,
    pub shared_to_partner: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    SharingInfo,
    Memory,
    Comprehension,
    Generative,
}

impl ResponseKind {
    /// Evaluation order of the turn-3 comment flow.
    pub const PRECEDENCE: [ResponseKind; 4] =
        [ResponseKind::SharingInfo, ResponseKind::Memory, ResponseKind::Comprehension, ResponseKind::Generative];
}

/// Counts Unicode scalar values, the unit of the five-character rule.
pub fn code_points(text: &str) -> usize {
    text.chars().count()
}

pub(crate) fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&word.to_lowercase());
    }
    out
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl ResponseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ResponseKind::SharingInfo => "sharing_info",
            ResponseKind::Memory => "memory",
            ResponseKind::Comprehension => "comprehension",
            ResponseKind::Generative => "generative",
        }
    }
}

impl fmt::Display for ResponseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(wake: &str, bed: &str) -> UserProfile {
        UserProfile {
            user_id: "u1".into(),
            display_name: "Mike".into(),
            registered_wake_weekday: wake.parse().unwrap(),
            registered_wake_weekend: wake.parse().unwrap(),
            registered_bed_weekday: bed.parse().unwrap(),
            registered_bed_weekend: bed.parse().unwrap(),
            timezone: "Asia/Tokyo".into(),
        }
    }

    #[test]
    fn bed_after_midnight_is_normalized() {
        let p = profile("08:00", "01:00").validated().unwrap();
        assert_eq!(p.registered_bed_weekday, ClockMinutes::hm(25, 0));
    }

    #[test]
    fn profile_rejects_empty_name_and_bad_zone() {
        let mut p = profile("07:00", "23:00");
        p.display_name = "  ".into();
        assert!(matches!(p.validated(), Err(DomainError::EmptyDisplayName(_))));
        let mut p = profile("07:00", "23:00");
        p.timezone = "Mars/Olympus".into();
        assert!(matches!(p.validated(), Err(DomainError::UnknownZone(_))));
    }

    #[test]
    fn slot_status_follows_lifecycle() {
        use SlotStatus::*;
        let mut s = Pending;
        assert!(s.transition(Answered).is_err());
        s.transition(Sent).unwrap();
        s.transition(Reminded).unwrap();
        assert!(s.transition(Reminded).is_err());
        s.transition(Skipped).unwrap();
        assert!(s.transition(Answered).is_err());
    }

    #[test]
    fn pair_rejects_self_link() {
        assert!(PairLink::new("p".into(), "a".into(), "a".into(), Condition::Sharing).is_err());
        let p = PairLink::new("p".into(), "a".into(), "b".into(), Condition::Sharing).unwrap();
        assert_eq!(p.partner_of(&"b".into()), Some(&UserId::from("a")));
        assert_eq!(p.partner_of(&"c".into()), None);
    }

    #[test]
    fn reminder_flag_flips_once() {
        let date = NaiveDate::from_ymd_opt(2025, 1, 6).unwrap();
        let mut s = DialogueSession::open("u".into(), date, Slot::Noon, Topic::Meal, None, Timestamp(0));
        assert!(s.mark_reminded());
        assert!(!s.mark_reminded());
    }

    #[test]
    fn code_points_counts_scalars() {
        assert_eq!(code_points("ありがとう"), 5);
        assert_eq!(code_points("ok!!"), 4);
        assert_eq!(code_points("Thank you"), 9);
    }

    #[test]
    fn condition_parses_cli_spellings() {
        assert_eq!("sharing".parse::<Condition>().unwrap(), Condition::Sharing);
        assert_eq!("non-sharing".parse::<Condition>().unwrap(), Condition::NonSharing);
        assert_eq!("NonSharing".parse::<Condition>().unwrap(), Condition::NonSharing);
    }
}
