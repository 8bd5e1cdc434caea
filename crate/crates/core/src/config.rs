//! Engine tunables. Defaults reproduce the published protocol constants.

use serde::{Deserialize, Serialize};

use crate::domain::{Condition, Slot};
use crate::time::HOUR;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("probability {name} = {value} is outside [0, 1]")]
    Probability { name: &'static str, value: f64 },
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("abandon_after must exceed reminder_after")]
    TimeoutOrder,
}

/// Offsets of the five daily slots, in minutes, relative to the rhythm anchors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlotOffsets {
    pub morning_after_wake: u32,
    pub noon_after_wake: u32,
    pub afternoon_after_wake: u32,
    pub evening_before_bed: u32,
    pub night_before_bed: u32,
}

impl Default for SlotOffsets {
    fn default() -> Self {
        Self {
            morning_after_wake: 30,
            noon_after_wake: 4 * 60,
            afternoon_after_wake: 6 * 60,
            evening_before_bed: 4 * 60,
            night_before_bed: 2 * 60,
        }
    }
}

impl SlotOffsets {
    /// Local fire time of `slot` in minutes past midnight (may be negative or past 24h).
    pub fn local_minutes(&self, slot: Slot, wake: u32, bed: u32) -> i64 {
        let (wake, bed) = (i64::from(wake), i64::from(bed));
        match slot {
            Slot::Morning => wake + i64::from(self.morning_after_wake),
            Slot::Noon => wake + i64::from(self.noon_after_wake),
            Slot::Afternoon => wake + i64::from(self.afternoon_after_wake),
            Slot::Evening => bed - i64::from(self.evening_before_bed),
            Slot::Night => bed - i64::from(self.night_before_bed),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    #[default]
    Real,
    Simulated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Condition applied to pairs that do not set their own.
    pub condition: Condition,
    pub share_p: f64,
    pub share_p_value: f64,
    pub value_substitution_p: f64,
    pub reminder_after_secs: i64,
    pub abandon_after_secs: i64,
    pub offsets: SlotOffsets,
    /// Weight of a new observation when blending rhythm estimates.
    pub rhythm_blend: f64,
    pub seed: u64,
    pub clock: ClockMode,
    /// Upper bound on exchanges kept in a generation context.
    pub context_window: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            condition: Condition::Sharing,
            share_p: 0.4,
            share_p_value: 0.8,
            value_substitution_p: 0.4,
            reminder_after_secs: 6 * HOUR,
            abandon_after_secs: 20 * HOUR,
            offsets: SlotOffsets::default(),
            rhythm_blend: 0.3,
            seed: 0,
            clock: ClockMode::Real,
            context_window: 5,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, value) in [
            ("share_p", self.share_p),
            ("share_p_value", self.share_p_value),
            ("value_substitution_p", self.value_substitution_p),
            ("rhythm_blend", self.rhythm_blend),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ConfigError::Probability { name, value });
            }
        }
        if self.reminder_after_secs <= 0 {
            return Err(ConfigError::NonPositive("reminder_after_secs"));
        }
        if self.abandon_after_secs <= self.reminder_after_secs {
            return Err(ConfigError::TimeoutOrder);
        }
        let o = &self.offsets;
        for (name, v) in [
            ("offsets.morning_after_wake", o.morning_after_wake),
            ("offsets.noon_after_wake", o.noon_after_wake),
            ("offsets.afternoon_after_wake", o.afternoon_after_wake),
            ("offsets.evening_before_bed", o.evening_before_bed),
            ("offsets.night_before_bed", o.night_before_bed),
        ] {
            if v == 0 {
                return Err(ConfigError::NonPositive(name));
            }
        }
        if self.context_window == 0 || self.context_window > 5 {
            return Err(ConfigError::NonPositive("context_window (1..=5)"));
        }
        Ok(())
    }

    pub fn sharing_probability(&self, topic: crate::domain::Topic) -> f64 {
        if topic == crate::domain::Topic::Value {
            self.share_p_value
        } else {
            self.share_p
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_protocol_constants() {
        let cfg = EngineConfig::default();
        assert_eq!(cfg.share_p, 0.4);
        assert_eq!(cfg.share_p_value, 0.8);
        assert_eq!(cfg.value_substitution_p, 0.4);
        assert_eq!(cfg.reminder_after_secs, 6 * 3600);
        assert_eq!(cfg.abandon_after_secs, 20 * 3600);
        assert_eq!(cfg.offsets.local_minutes(Slot::Morning, 420, 1380), 450);
        assert_eq!(cfg.offsets.local_minutes(Slot::Noon, 420, 1380), 660);
        assert_eq!(cfg.offsets.local_minutes(Slot::Afternoon, 420, 1380), 780);
        assert_eq!(cfg.offsets.local_minutes(Slot::Evening, 420, 1380), 1140);
        assert_eq!(cfg.offsets.local_minutes(Slot::Night, 420, 1380), 1260);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_out_of_range_probability() {
        let cfg = EngineConfig { share_p: 1.5, ..EngineConfig::default() };
        assert!(matches!(cfg.validate(), Err(ConfigError::Probability { name: "share_p", .. })));
        let cfg = EngineConfig { abandon_after_secs: 3600, ..EngineConfig::default() };
        assert_eq!(cfg.validate(), Err(ConfigError::TimeoutOrder));
    }
}
