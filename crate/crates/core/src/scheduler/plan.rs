use alloc::vec::Vec;

use chrono::NaiveDate;
use chrono_tz::Tz;
use rand::Rng;

use crate::config::SlotOffsets;
use crate::domain::{DaySchedule, RhythmEstimate, ScheduleSlot, Slot, SlotStatus, Topic};
use crate::time::local_to_utc;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ScheduleError {
    #[error("rhythm too compressed on {date}: {earlier} slot does not precede {later} slot")]
    RhythmTooCompressed { date: NaiveDate, earlier: Slot, later: Slot },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Planner {
    pub offsets: SlotOffsets,
    pub value_substitution_p: f64,
}

impl Planner {
    /// Lays out the five question slots of `date`.
    ///
    /// One Bernoulli draw decides whether a value question replaces a slot's
    /// default topic; if so a second draw picks the slot uniformly.
    pub fn plan_day<R: Rng + ?Sized>(
        &self,
        rhythm: &RhythmEstimate,
        tz: Tz,
        date: NaiveDate,
        rng: &mut R,
    ) -> Result<DaySchedule, ScheduleError> {
        let (wake, bed) = (rhythm.est_wake.minutes(), rhythm.est_bed.minutes());
        let local: Vec<i64> = Slot::ALL.iter().map(|&s| self.offsets.local_minutes(s, wake, bed)).collect();
        let mut slots = Vec::with_capacity(5);
        for (i, &slot) in Slot::ALL.iter().enumerate() {
            let fire_at = local_to_utc(tz, date, local[i]);
            if let Some(prev) = slots.last().map(|s: &ScheduleSlot| (s.slot, s.fire_at)) {
                if local[i] <= local[i - 1] || fire_at <= prev.1 {
                    return Err(ScheduleError::RhythmTooCompressed { date, earlier: prev.0, later: slot });
                }
            }
            slots.push(ScheduleSlot { slot, topic: slot.default_topic(), fire_at, status: SlotStatus::Pending });
        }
        let value_substituted = if rng.gen_bool(self.value_substitution_p) {
            let slot = Slot::ALL[rng.gen_range(0..Slot::ALL.len())];
            slots[slot.index()].topic = Topic::Value;
            Some(slot)
        } else {
            None
        };
        Ok(DaySchedule { user_id: rhythm.user_id.clone(), local_date: date, slots, value_substituted })
    }
}
