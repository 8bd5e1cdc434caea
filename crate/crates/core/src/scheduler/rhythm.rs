//! Clock-time extraction from sleep answers and rolling rhythm estimates.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::domain::{RhythmEstimate, RhythmSource};
use crate::time::{ClockMinutes, Timestamp};

/// Which anchor a sleep question asks about.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SleepFacet {
    Bedtime,
    WakeTime,
}

impl SleepFacet {
    pub fn from_key(facet: Option<&str>) -> Self {
        match facet {
            Some("wake") => SleepFacet::WakeTime,
            _ => SleepFacet::Bedtime,
        }
    }
}

/// A clock reading found in free text.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClockMention {
    /// Minutes past midnight, `[0, 24h)`.
    pub minutes: u32,
    /// No am/pm marker and hour ≤ 12, so `minutes + 12h` is equally plausible.
    pub half_day_ambiguous: bool,
}

const TIME_PREPOSITIONS: &[&str] =
    &["at", "around", "about", "by", "until", "till", "til", "since", "near", "approximately", "after", "before"];

/// Finds the first clock time mentioned in `text`.
///
/// Accepted forms: `23:10`, `11pm`, `11 p.m.`, `7:30 am`, `at 11`, `around 1`,
/// `11 o'clock`, `midnight`, `noon`, `23時`, `7時半`. A bare number needs a time
/// preposition before it or `o'clock` after it.
pub fn find_clock_time(text: &str) -> Option<ClockMention> {
    let lower = text.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_ascii_alphabetic() && (i == 0 || !chars[i - 1].is_alphanumeric()) {
            let word: String = chars[i..].iter().take_while(|c| c.is_ascii_alphabetic()).collect();
            match word.as_str() {
                "midnight" => return Some(ClockMention { minutes: 0, half_day_ambiguous: false }),
                "noon" | "midday" => return Some(ClockMention { minutes: 720, half_day_ambiguous: false }),
                _ => {}
            }
            i += word.chars().count();
            continue;
        }
        if !c.is_ascii_digit() || (i > 0 && chars[i - 1].is_ascii_digit()) {
            i += 1;
            continue;
        }
        let digits: String = chars[i..].iter().take_while(|c| c.is_ascii_digit()).collect();
        let mut j = i + digits.len();
        if digits.len() > 2 {
            i = j;
            continue;
        }
        let hour: u32 = digits.parse().unwrap_or(99);
        let mut minute = 0;
        let mut has_minutes = false;
        if chars.get(j) == Some(&':') {
            let mm: String = chars[j + 1..].iter().take_while(|c| c.is_ascii_digit()).collect();
            if mm.len() == 2 {
                minute = mm.parse().unwrap_or(99);
                has_minutes = true;
                j += 3;
            }
        }
        let rest: String = chars[j..].iter().collect();
        let after = rest.trim_start();
        let meridiem = if after.starts_with("am") || after.starts_with("a.m") {
            Some(false)
        } else if after.starts_with("pm") || after.starts_with("p.m") {
            Some(true)
        } else {
            None
        };
        let kanji = rest.starts_with('時');
        let half = kanji && rest.chars().nth(1) == Some('半');
        let oclock = after.starts_with("o'clock") || after.starts_with("o’clock") || after.starts_with("oclock");
        let before: String = chars[..i].iter().collect();
        let prev_word = before.split(|c: char| !c.is_alphanumeric()).rfind(|w| !w.is_empty()).unwrap_or("");
        let preposition = TIME_PREPOSITIONS.contains(&prev_word) && before.trim_end().ends_with(prev_word);

        if hour > 24 || minute >= 60 {
            i = j;
            continue;
        }
        let mention = if let Some(pm) = meridiem {
            if !(1..=12).contains(&hour) {
                None
            } else {
                let h = match (hour, pm) {
                    (12, false) => 0,
                    (12, true) => 12,
                    (h, false) => h,
                    (h, true) => h + 12,
                };
                Some(ClockMention { minutes: h * 60 + minute, half_day_ambiguous: false })
            }
        } else if has_minutes || kanji || oclock || preposition {
            let minute = if half { 30 } else { minute };
            let h = hour % 24;
            Some(ClockMention { minutes: h * 60 + minute, half_day_ambiguous: (1..=12).contains(&hour) })
        } else {
            None
        };
        if mention.is_some() {
            return mention;
        }
        i = j;
    }
    None
}

/// Picks the reading of `mention` closest to `prior`.
///
/// Bed times may land past midnight (up to 48h representation); wake times stay
/// within the day.
fn resolve(mention: ClockMention, prior: ClockMinutes, facet: SleepFacet) -> ClockMinutes {
    let mut candidates: Vec<u32> = Vec::with_capacity(4);
    candidates.push(mention.minutes);
    if mention.half_day_ambiguous {
        candidates.push((mention.minutes + 720) % 1440);
    }
    if facet == SleepFacet::Bedtime {
        let day: Vec<u32> = candidates.iter().map(|m| m + 1440).collect();
        candidates.extend(day);
    }
    let target = prior.minutes();
    let best = candidates
        .into_iter()
        .min_by_key(|&c| (c.abs_diff(target), c))
        .expect("at least one candidate");
    ClockMinutes(best)
}

/// Blends a parsed sleep answer into the prior estimate.
///
/// `weight` is the share given to the new observation. Unparseable answers and
/// updates that would put wake at or after bed leave `prior` untouched.
pub fn update_rhythm(
    prior: &RhythmEstimate,
    facet: SleepFacet,
    sleep_answer: &str,
    answered_at: Timestamp,
    weight: f64,
) -> RhythmEstimate {
    let Some(mention) = find_clock_time(sleep_answer) else {
        return prior.clone();
    };
    let anchor = match facet {
        SleepFacet::Bedtime => prior.est_bed,
        SleepFacet::WakeTime => prior.est_wake,
    };
    let observed = resolve(mention, anchor, facet);
    let blended = blend(anchor, observed, weight);
    let mut next = prior.clone();
    match facet {
        SleepFacet::Bedtime => next.est_bed = blended,
        SleepFacet::WakeTime => next.est_wake = blended,
    }
    if !next.is_valid() {
        return prior.clone();
    }
    next.source = RhythmSource::Inferred;
    next.last_updated = answered_at;
    next
}

fn blend(prior: ClockMinutes, observed: ClockMinutes, weight: f64) -> ClockMinutes {
    let delta = (i64::from(observed.minutes()) - i64::from(prior.minutes())) as f64 * weight;
    // round half away from zero without libm
    let step = if delta >= 0.0 { (delta + 0.5) as i64 } else { -((-delta + 0.5) as i64) };
    ClockMinutes((i64::from(prior.minutes()) + step).max(0) as u32)
}
