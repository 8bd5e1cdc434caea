//! Timestamps, local clock times and zone conversion.
//!
//! All instants are stored as UTC seconds. Daily-rhythm arithmetic happens in
//! the user's local time ([`ClockMinutes`] past local midnight) and is then
//! converted back through the user's IANA zone.

use core::fmt;
use core::str::FromStr;

use chrono::{Datelike, NaiveDate, NaiveDateTime, TimeZone, Weekday};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

pub const MINUTE: i64 = 60;
pub const HOUR: i64 = 60 * MINUTE;
pub const DAY: i64 = 24 * HOUR;

/// Seconds since the Unix epoch, UTC.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub const fn from_secs(secs: i64) -> Self {
        Self(secs)
    }

    pub const fn secs(self) -> i64 {
        self.0
    }

    #[must_use]
    pub const fn add_secs(self, secs: i64) -> Self {
        Self(self.0 + secs)
    }

    /// Elapsed time since `earlier`, in minutes.
    pub fn minutes_since(self, earlier: Timestamp) -> f64 {
        (self.0 - earlier.0) as f64 / MINUTE as f64
    }

    pub fn to_utc(self) -> Option<NaiveDateTime> {
        chrono::DateTime::from_timestamp(self.0, 0).map(|dt| dt.naive_utc())
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.to_utc() {
            Some(dt) => write!(f, "{}Z", dt.format("%Y-%m-%dT%H:%M:%S")),
            None => write!(f, "@{}", self.0),
        }
    }
}

/// Minutes past local midnight.
///
/// Bed times after midnight keep counting past 24h, so 01:00 after a 23:00
/// evening is 25:00 (1500).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClockMinutes(pub u32);

impl ClockMinutes {
    pub const fn hm(hours: u32, minutes: u32) -> Self {
        Self(hours * 60 + minutes)
    }

    pub const fn minutes(self) -> u32 {
        self.0
    }

    /// Same wall-clock reading folded into `[0, 24h)`.
    pub const fn wall(self) -> Self {
        Self(self.0 % 1440)
    }
}

impl fmt::Display for ClockMinutes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02}:{:02}", self.0 / 60, self.0 % 60)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("invalid clock time {0:?}, expected HH:MM")]
pub struct ClockParseError(pub alloc::string::String);

impl FromStr for ClockMinutes {
    type Err = ClockParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ClockParseError(s.into());
        let (h, m) = s.trim().split_once(':').ok_or_else(err)?;
        let h: u32 = h.parse().map_err(|_| err())?;
        let m: u32 = m.parse().map_err(|_| err())?;
        if h >= 48 || m >= 60 {
            return Err(err());
        }
        Ok(Self::hm(h, m))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DayType {
    Weekday,
    Weekend,
}

impl DayType {
    pub fn of(date: NaiveDate) -> Self {
        match date.weekday() {
            Weekday::Sat | Weekday::Sun => Self::Weekend,
            _ => Self::Weekday,
        }
    }
}

/// Converts `minutes` past local midnight of `date` in `tz` to UTC.
///
/// Nonexistent local times (spring-forward gaps) resolve one hour later.
pub fn local_to_utc(tz: Tz, date: NaiveDate, minutes: i64) -> Timestamp {
    let midnight = date.and_hms_opt(0, 0, 0).expect("midnight exists");
    let naive = midnight + chrono::Duration::minutes(minutes);
    let resolved = tz
        .from_local_datetime(&naive)
        .earliest()
        .or_else(|| tz.from_local_datetime(&(naive + chrono::Duration::hours(1))).earliest())
        .expect("zone offset resolvable within an hour");
    Timestamp(resolved.timestamp())
}

pub fn local_midnight(tz: Tz, date: NaiveDate) -> Timestamp {
    local_to_utc(tz, date, 0)
}

pub fn local_date_of(tz: Tz, ts: Timestamp) -> NaiveDate {
    tz.timestamp_opt(ts.0, 0)
        .single()
        .map(|dt| dt.date_naive())
        .expect("timestamp in chrono range")
}

/// Minutes past local midnight for `ts`, in `[0, 24h)`.
pub fn local_clock_of(tz: Tz, ts: Timestamp) -> ClockMinutes {
    use chrono::Timelike;
    let dt = tz.timestamp_opt(ts.0, 0).single().expect("timestamp in chrono range");
    ClockMinutes(dt.hour() * 60 + dt.minute())
}
