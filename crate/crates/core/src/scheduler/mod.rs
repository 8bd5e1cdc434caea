//! Daily question scheduling, reminders, skips and the abandonment timeout.
//!
//! The scheduler owns all per-user timing state. Callers push answers in via
//! [`Scheduler::mark_answered`] and pull due work out via
//! [`Scheduler::on_clock`]; nothing else mutates it.

mod plan;
mod rhythm;

pub use plan::{Planner, ScheduleError};
pub use rhythm::{find_clock_time, update_rhythm, ClockMention, SleepFacet};

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use chrono::NaiveDate;
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::domain::{
    DaySchedule, RhythmEstimate, SessionId, Slot, SlotStatus, Topic, UserId, UserProfile,
};
use crate::rng;
use crate::time::{local_date_of, local_midnight, DayType, Timestamp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerEventKind {
    SendQuestion,
    SendReminder,
    SkipSlot,
    ForceNextAfterTimeout,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulerEvent {
    pub kind: SchedulerEventKind,
    pub user_id: UserId,
    pub local_date: NaiveDate,
    pub slot: Slot,
    pub topic: Topic,
    pub session_id: SessionId,
    pub due_at: Timestamp,
}

/// Outcome of planning one user-day.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PlanOutcome {
    Planned { schedule: DaySchedule, fell_back: bool },
    Failed { user_id: UserId, date: NaiveDate, error: ScheduleError },
}

#[derive(Clone, Debug)]
struct ActiveQuestion {
    date: NaiveDate,
    slot: Slot,
    session_id: SessionId,
    sent_at: Timestamp,
    answered: bool,
    reminder_sent: bool,
}

#[derive(Clone, Debug)]
struct Timeline {
    profile: UserProfile,
    tz: Tz,
    weekday: RhythmEstimate,
    weekend: RhythmEstimate,
    next_plan: NaiveDate,
    last_plan: Option<NaiveDate>,
    days: Vec<DaySchedule>,
    active: Option<ActiveQuestion>,
}

impl Timeline {
    fn estimate(&self, day: DayType) -> &RhythmEstimate {
        match day {
            DayType::Weekday => &self.weekday,
            DayType::Weekend => &self.weekend,
        }
    }

    fn plan_at(&self) -> Option<Timestamp> {
        match self.last_plan {
            Some(last) if self.next_plan > last => None,
            _ => Some(local_midnight(self.tz, self.next_plan)),
        }
    }

    fn next_slot(&self) -> Option<(usize, Slot, Timestamp)> {
        self.days
            .iter()
            .enumerate()
            .flat_map(|(d, day)| {
                day.slots.iter().filter(|s| s.status == SlotStatus::Pending).map(move |s| (d, s.slot, s.fire_at))
            })
            .min_by_key(|&(_, _, at)| at)
    }

    fn day_mut(&mut self, date: NaiveDate) -> Option<&mut DaySchedule> {
        self.days.iter_mut().find(|d| d.local_date == date)
    }

    fn set_status(&mut self, date: NaiveDate, slot: Slot, to: SlotStatus) {
        if let Some(day) = self.day_mut(date) {
            // statuses only move forward; a rejected move means it already got there
            let _ = day.slot_mut(slot).status.transition(to);
        }
    }

    fn prune(&mut self) {
        let active_date = self.active.as_ref().map(|a| a.date);
        while self.days.len() > 1 {
            let first = &self.days[0];
            let settled = first.slots.iter().all(|s| matches!(s.status, SlotStatus::Answered | SlotStatus::Skipped));
            if settled && Some(first.local_date) != active_date {
                self.days.remove(0);
            } else {
                break;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Due {
    Plan,
    Slot,
    Reminder,
    Abandon,
}

#[derive(Clone, Debug)]
pub struct Scheduler {
    planner: Planner,
    reminder_after: i64,
    abandon_after: i64,
    blend: f64,
    seed: u64,
    users: BTreeMap<UserId, Timeline>,
    plans: Vec<PlanOutcome>,
}

impl Scheduler {
    pub fn new(cfg: &EngineConfig) -> Self {
        Self {
            planner: Planner { offsets: cfg.offsets, value_substitution_p: cfg.value_substitution_p },
            reminder_after: cfg.reminder_after_secs,
            abandon_after: cfg.abandon_after_secs,
            blend: cfg.rhythm_blend,
            seed: cfg.seed,
            users: BTreeMap::new(),
            plans: Vec::new(),
        }
    }

    pub fn planner(&self) -> &Planner {
        &self.planner
    }

    /// Starts scheduling `profile` from `first_date`; `last_date` bounds planning (inclusive).
    pub fn add_user(
        &mut self,
        profile: UserProfile,
        tz: Tz,
        first_date: NaiveDate,
        last_date: Option<NaiveDate>,
        at: Timestamp,
    ) {
        let weekday = RhythmEstimate::registered(&profile, DayType::Weekday, at);
        let weekend = RhythmEstimate::registered(&profile, DayType::Weekend, at);
        let timeline = Timeline {
            profile,
            tz,
            weekday,
            weekend,
            next_plan: first_date,
            last_plan: last_date,
            days: Vec::new(),
            active: None,
        };
        self.users.insert(timeline.profile.user_id.clone(), timeline);
    }

    pub fn estimate(&self, user: &UserId, day: DayType) -> Option<&RhythmEstimate> {
        self.users.get(user).map(|t| t.estimate(day))
    }

    pub fn days(&self, user: &UserId) -> &[DaySchedule] {
        self.users.get(user).map(|t| t.days.as_slice()).unwrap_or(&[])
    }

    /// Feeds a sleep answer into the estimate for the day type it describes.
    ///
    /// Bedtime answers describe the night before `question_date`; wake answers
    /// describe `question_date` itself. Returns the estimate if it changed.
    pub fn observe_sleep_answer(
        &mut self,
        user: &UserId,
        question_date: NaiveDate,
        facet: SleepFacet,
        answer: &str,
        at: Timestamp,
    ) -> Option<(DayType, RhythmEstimate)> {
        let t = self.users.get_mut(user)?;
        let described = match facet {
            SleepFacet::Bedtime => question_date.pred_opt().unwrap_or(question_date),
            SleepFacet::WakeTime => question_date,
        };
        let day = DayType::of(described);
        let slot = match day {
            DayType::Weekday => &mut t.weekday,
            DayType::Weekend => &mut t.weekend,
        };
        let next = update_rhythm(slot, facet, answer, at, self.blend);
        if next == *slot {
            return None;
        }
        *slot = next.clone();
        Some((day, next))
    }

    /// Records the user's first reply to the active question. Returns false if
    /// `session` is not the user's active, unanswered question.
    pub fn mark_answered(&mut self, user: &UserId, session: &SessionId) -> bool {
        let Some(t) = self.users.get_mut(user) else { return false };
        let Some(active) = t.active.as_mut() else { return false };
        if active.session_id != *session || active.answered {
            return false;
        }
        active.answered = true;
        let (date, slot) = (active.date, active.slot);
        t.set_status(date, slot, SlotStatus::Answered);
        true
    }

    /// Restores an in-flight question, e.g. after a restart. The slot need not
    /// belong to a planned day.
    pub fn resume_question(
        &mut self,
        user: &UserId,
        date: NaiveDate,
        slot: Slot,
        sent_at: Timestamp,
        answered: bool,
        reminder_sent: bool,
    ) -> bool {
        let Some(t) = self.users.get_mut(user) else { return false };
        t.active = Some(ActiveQuestion {
            date,
            slot,
            session_id: SessionId::for_slot(user, date, slot),
            sent_at,
            answered,
            reminder_sent,
        });
        true
    }

    pub fn active_session(&self, user: &UserId) -> Option<&SessionId> {
        self.users.get(user)?.active.as_ref().map(|a| &a.session_id)
    }

    /// Drains day plans produced by earlier `on_clock` calls, in order.
    pub fn take_plans(&mut self) -> Vec<PlanOutcome> {
        core::mem::take(&mut self.plans)
    }

    /// Earliest instant at which `on_clock` would have work to do.
    pub fn next_due(&self) -> Option<Timestamp> {
        self.users.values().filter_map(|t| self.next_for(t).map(|(at, _)| at)).min()
    }

    fn next_for(&self, t: &Timeline) -> Option<(Timestamp, Due)> {
        let mut best: Option<(Timestamp, Due)> = None;
        let mut offer = |at: Timestamp, due: Due| {
            if best.is_none_or(|b| (at, due) < b) {
                best = Some((at, due));
            }
        };
        if let Some(at) = t.plan_at() {
            offer(at, Due::Plan);
        }
        if let Some((_, _, at)) = t.next_slot() {
            offer(at, Due::Slot);
        }
        if let Some(a) = t.active.as_ref().filter(|a| !a.answered) {
            if !a.reminder_sent {
                offer(a.sent_at.add_secs(self.reminder_after), Due::Reminder);
            }
            // strictly more than the timeout
            offer(a.sent_at.add_secs(self.abandon_after + 1), Due::Abandon);
        }
        best
    }

    /// Emits everything due at or before `now`, in time order per user.
    ///
    /// Idempotent: a second call with the same `now` returns nothing.
    pub fn on_clock(&mut self, now: Timestamp) -> Vec<SchedulerEvent> {
        let mut out = Vec::new();
        let users: Vec<UserId> = self.users.keys().cloned().collect();
        for user in users {
            loop {
                let t = &self.users[&user];
                let Some((at, due)) = self.next_for(t) else { break };
                if at > now {
                    break;
                }
                match due {
                    Due::Plan => self.plan_next(&user),
                    Due::Slot => self.fire_slot(&user, &mut out),
                    Due::Reminder => self.remind(&user, &mut out),
                    Due::Abandon => self.abandon(&user, &mut out),
                }
            }
            if let Some(t) = self.users.get_mut(&user) {
                t.prune();
            }
        }
        out
    }

    fn plan_next(&mut self, user: &UserId) {
        let planner = self.planner;
        let seed = self.seed;
        let t = self.users.get_mut(user).expect("known user");
        let date = t.next_plan;
        t.next_plan = date.succ_opt().expect("date in range");
        let label = alloc::format!("{date}");
        let mut stream = rng::stream(seed, &["plan", user.as_str(), &label]);
        let estimate = t.estimate(DayType::of(date)).clone();
        let outcome = match planner.plan_day(&estimate, t.tz, date, &mut stream) {
            Ok(schedule) => Ok((schedule, false)),
            Err(first) => {
                let registered = RhythmEstimate::registered(&t.profile, DayType::of(date), estimate.last_updated);
                let mut stream = rng::stream(seed, &["plan", user.as_str(), &label]);
                planner.plan_day(&registered, t.tz, date, &mut stream).map(|s| (s, true)).map_err(|_| first)
            }
        };
        match outcome {
            Ok((schedule, fell_back)) => {
                t.days.push(schedule.clone());
                self.plans.push(PlanOutcome::Planned { schedule, fell_back });
            }
            Err(error) => self.plans.push(PlanOutcome::Failed { user_id: user.clone(), date, error }),
        }
    }

    fn fire_slot(&mut self, user: &UserId, out: &mut Vec<SchedulerEvent>) {
        let t = self.users.get_mut(user).expect("known user");
        let (d, slot, fire_at) = t.next_slot().expect("slot due");
        if let Some(prev) = t.active.take() {
            if !prev.answered {
                let (date, pslot) = (prev.date, prev.slot);
                let topic = t.day_mut(date).map(|d| d.slot(pslot).topic).unwrap_or(pslot.default_topic());
                t.set_status(date, pslot, SlotStatus::Skipped);
                out.push(SchedulerEvent {
                    kind: SchedulerEventKind::SkipSlot,
                    user_id: user.clone(),
                    local_date: date,
                    slot: pslot,
                    topic,
                    session_id: prev.session_id,
                    due_at: fire_at,
                });
            }
        }
        let day = &mut t.days[d];
        let date = day.local_date;
        let entry = day.slot_mut(slot);
        let _ = entry.status.transition(SlotStatus::Sent);
        let topic = entry.topic;
        let session_id = SessionId::for_slot(user, date, slot);
        t.active = Some(ActiveQuestion {
            date,
            slot,
            session_id: session_id.clone(),
            sent_at: fire_at,
            answered: false,
            reminder_sent: false,
        });
        out.push(SchedulerEvent {
            kind: SchedulerEventKind::SendQuestion,
            user_id: user.clone(),
            local_date: date,
            slot,
            topic,
            session_id,
            due_at: fire_at,
        });
    }

    fn remind(&mut self, user: &UserId, out: &mut Vec<SchedulerEvent>) {
        let after = self.reminder_after;
        let t = self.users.get_mut(user).expect("known user");
        let active = t.active.as_mut().expect("active question");
        active.reminder_sent = true;
        let (date, slot, session_id, due_at) =
            (active.date, active.slot, active.session_id.clone(), active.sent_at.add_secs(after));
        t.set_status(date, slot, SlotStatus::Reminded);
        let topic = t.day_mut(date).map(|d| d.slot(slot).topic).unwrap_or(slot.default_topic());
        out.push(SchedulerEvent {
            kind: SchedulerEventKind::SendReminder,
            user_id: user.clone(),
            local_date: date,
            slot,
            topic,
            session_id,
            due_at,
        });
    }

    fn abandon(&mut self, user: &UserId, out: &mut Vec<SchedulerEvent>) {
        let after = self.abandon_after;
        let t = self.users.get_mut(user).expect("known user");
        let active = t.active.take().expect("active question");
        t.set_status(active.date, active.slot, SlotStatus::Skipped);
        let topic = t.day_mut(active.date).map(|d| d.slot(active.slot).topic).unwrap_or(active.slot.default_topic());
        out.push(SchedulerEvent {
            kind: SchedulerEventKind::ForceNextAfterTimeout,
            user_id: user.clone(),
            local_date: active.date,
            slot: active.slot,
            topic,
            session_id: active.session_id,
            due_at: active.sent_at.add_secs(after),
        });
    }

    /// Local calendar date of `at` for `user`.
    pub fn local_date(&self, user: &UserId, at: Timestamp) -> Option<NaiveDate> {
        self.users.get(user).map(|t| local_date_of(t.tz, at))
    }
}

#[cfg(test)]
mod tests;
