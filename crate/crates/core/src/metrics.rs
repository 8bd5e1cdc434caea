//! Behavioral measures computed purely from an event log.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dialogue::Role;
use crate::domain::{Condition, PairId, ResponseKind, SessionId, UserId};
use crate::log::{LogEvent, LogRecord};
use crate::time::Timestamp;

/// Question-to-first-reply delays in minutes, one per answered question.
pub fn response_delays(log: &[LogRecord], user: &UserId) -> Vec<f64> {
    let mut asked: BTreeMap<&SessionId, Timestamp> = BTreeMap::new();
    let mut delays = Vec::new();
    for r in log {
        match &r.event {
            LogEvent::QuestionSent { user_id, session_id, .. } if user_id == user => {
                asked.insert(session_id, r.ts);
            }
            LogEvent::UserMessage { user_id, session_id: Some(sid), turn: Some(2), .. } if user_id == user => {
                if let Some(sent) = asked.remove(sid) {
                    delays.push(r.ts.minutes_since(sent));
                }
            }
            _ => {}
        }
    }
    delays
}

/// Mean question-to-reply delay in minutes; `None` when nothing was answered.
pub fn avg_response_time(log: &[LogRecord], user: &UserId) -> Option<f64> {
    let d = response_delays(log, user);
    if d.is_empty() {
        None
    } else {
        Some(d.iter().sum::<f64>() / d.len() as f64)
    }
}

pub fn reminder_count(log: &[LogRecord], user: &UserId) -> u32 {
    let n = log.iter().filter(|r| matches!(&r.event, LogEvent::ReminderSent { user_id, .. } if user_id == user)).count();
    n as u32
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SharingStats {
    /// Turn-3 comments sent.
    pub comments: u32,
    /// Of those, sharing comments.
    pub sharing: u32,
    /// `sharing / comments`; `None` when no comment was sent.
    pub fraction: Option<f64>,
    /// Sharing comments received, for every registered user.
    pub per_user: BTreeMap<UserId, u32>,
}

pub fn sharing_stats(log: &[LogRecord]) -> SharingStats {
    let mut s = SharingStats::default();
    for r in log {
        match &r.event {
            LogEvent::PairRegistered { pair, .. } => {
                s.per_user.entry(pair.elder_id.clone()).or_default();
                s.per_user.entry(pair.younger_id.clone()).or_default();
            }
            LogEvent::AgentMessage { user_id, role: Role::Comment, response_kind, .. } => {
                s.comments += 1;
                if *response_kind == Some(ResponseKind::SharingInfo) {
                    s.sharing += 1;
                    *s.per_user.entry(user_id.clone()).or_default() += 1;
                }
            }
            _ => {}
        }
    }
    s.fraction = (s.comments > 0).then(|| f64::from(s.sharing) / f64::from(s.comments));
    s
}

/// Linear-interpolation quantile of unsorted data (the usual "type 7").
pub fn quantile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&p) || values.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut v = values.to_vec();
    let h = (v.len() - 1) as f64 * p;
    let lo = libm::floor(h) as usize;
    let cmp = |a: &f64, b: &f64| a.total_cmp(b);
    let (_, &mut x_lo, rest) = v.select_nth_unstable_by(lo, cmp);
    let frac = h - lo as f64;
    if frac == 0.0 || rest.is_empty() {
        return Some(x_lo);
    }
    let x_hi = rest.iter().copied().min_by(cmp).expect("non-empty");
    Some(x_lo + frac * (x_hi - x_lo))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Self> {
        let q1 = quantile(values, 0.25)?;
        let q3 = quantile(values, 0.75)?;
        Some(Spread { n: values.len(), median: quantile(values, 0.5)?, q1, q3, iqr: q3 - q1 })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Member {
    Elder,
    Younger,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserRow {
    pub user_id: UserId,
    pub pair_id: PairId,
    pub member: Member,
    pub condition: Condition,
    pub avg_response_minutes: Option<f64>,
    pub reminders: u32,
    pub sharing_info: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    ResponseTime,
    Reminders,
    SharingInfo,
}

impl Measure {
    pub const ALL: [Measure; 3] = [Measure::ResponseTime, Measure::Reminders, Measure::SharingInfo];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::ResponseTime => "response_time",
            Measure::Reminders => "reminders",
            Measure::SharingInfo => "sharing_info",
        }
    }

    fn of(self, row: &UserRow) -> Option<f64> {
        match self {
            Measure::ResponseTime => row.avg_response_minutes,
            Measure::Reminders => Some(f64::from(row.reminders)),
            Measure::SharingInfo => Some(f64::from(row.sharing_info)),
        }
    }
}

impl core::str::FromStr for Measure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Measure::ALL
            .into_iter()
            .find(|m| m.as_str() == s || (s == "response-time" && *m == Measure::ResponseTime))
            .ok_or_else(|| alloc::format!("unknown measure {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub condition: Condition,
    pub measure: Measure,
    /// `None` when no user in the condition has a value.
    pub spread: Option<Spread>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub users: Vec<UserRow>,
    pub aggregates: Vec<Aggregate>,
    pub sharing_fraction: Option<f64>,
}

impl MeasureReport {
    pub fn from_log(log: &[LogRecord]) -> Self {
        let sharing = sharing_stats(log);
        let mut users: Vec<UserRow> = Vec::new();
        for r in log {
            if let LogEvent::PairRegistered { pair, .. } = &r.event {
                // a restarted service registers its pairs again
                if users.iter().any(|u| u.pair_id == pair.pair_id) {
                    continue;
                }
                for (user, member) in [(&pair.elder_id, Member::Elder), (&pair.younger_id, Member::Younger)] {
                    users.push(UserRow {
                        user_id: user.clone(),
                        pair_id: pair.pair_id.clone(),
                        member,
                        condition: pair.condition,
                        avg_response_minutes: avg_response_time(log, user),
                        reminders: reminder_count(log, user),
                        sharing_info: sharing.per_user.get(user).copied().unwrap_or(0),
                    });
                }
            }
        }
        let aggregates = Self::aggregate(&users);
        MeasureReport { users, aggregates, sharing_fraction: sharing.fraction }
    }

    /// Per-condition median and IQR of every measure over the user rows.
    pub fn aggregate(users: &[UserRow]) -> Vec<Aggregate> {
        let mut conditions: Vec<Condition> = users.iter().map(|u| u.condition).collect();
        conditions.sort();
        conditions.dedup();
        let mut out = Vec::new();
        for condition in conditions {
            for measure in Measure::ALL {
                let values: Vec<f64> =
                    users.iter().filter(|u| u.condition == condition).filter_map(|u| measure.of(u)).collect();
                out.push(Aggregate { condition, measure, spread: Spread::of(&values) });
            }
        }
        out
    }
}
