use kinlink_core::config::EngineConfig;
use kinlink_core::domain::UserId;
use kinlink_core::log::{encode_all, LogEvent, LogRecord};
use kinlink_core::metrics::{reminder_count, response_delays, sharing_stats};
use kinlink_core::replay::replay_digest;
use kinlink_core::sim::{run_simulation, Persona, SimSpec};

fn count(log: &[LogRecord], user: &str, pred: impl Fn(&LogEvent) -> bool) -> usize {
    log.iter()
        .filter(|r| pred(&r.event))
        .filter(|r| serde_json::to_value(&r.event).unwrap()["user_id"] == user)
        .count()
}

/// Personas whose rhythm never drifts, so slot times are exactly known.
fn steady(p: Persona) -> Persona {
    Persona { sleep_jitter_minutes: 0, rhythm_spread_minutes: 0, ..p }
}

#[test]
fn prompt_users_get_five_questions_a_day() {
    let mut spec = SimSpec::new(1, 1, 3);
    spec.elder = spec.elder.prompt();
    spec.younger = spec.younger.prompt();
    let out = run_simulation(&EngineConfig::default(), &spec).unwrap();
    for user in ["p01-elder", "p01-younger"] {
        let asked = count(&out.records, user, |e| matches!(e, LogEvent::QuestionSent { .. }));
        assert_eq!(asked, 5, "{user}");
        assert_eq!(response_delays(&out.records, &UserId::from(user)).len(), 5);
        assert_eq!(reminder_count(&out.records, &UserId::from(user)), 0);
    }
}

#[test]
fn same_seed_gives_identical_logs() {
    let spec = SimSpec::new(3, 4, 11);
    let a = run_simulation(&EngineConfig::default(), &spec).unwrap();
    let b = run_simulation(&EngineConfig::default(), &spec).unwrap();
    assert_eq!(encode_all(&a.records), encode_all(&b.records));
    let c = run_simulation(&EngineConfig::default(), &SimSpec::new(3, 4, 12)).unwrap();
    assert_ne!(encode_all(&a.records), encode_all(&c.records));
}

#[test]
fn replayed_store_matches_live_store() {
    let out = run_simulation(&EngineConfig::default(), &SimSpec::new(4, 5, 5)).unwrap();
    assert_eq!(replay_digest(&out.records).unwrap(), out.store_digest);
}

// Slot gaps for the steady personas, elder waking 06:00 and sleeping 21:30:
//   06:30 -3.5h- 10:00 -2h- 12:00 -5.5h- 17:30 -2h- 19:30 -11h- next 06:30
// younger waking 07:30 and sleeping 24:00:
//   08:00 -3.5h- 11:30 -2h- 13:30 -6.5h- 20:00 -2h- 22:00 -10h- next 08:00
// A reminder needs more than six hours before the next slot.

#[test]
fn silent_users_follow_the_reminder_and_skip_rules() {
    let days = 4;
    let mut spec = SimSpec::new(1, days, 1);
    spec.elder = steady(spec.elder).silent();
    spec.younger = steady(spec.younger).silent();
    let out = run_simulation(&EngineConfig::default(), &spec).unwrap();
    let log = &out.records;
    let d = days as usize;
    for (user, reminders_per_day) in [("p01-elder", 1), ("p01-younger", 2)] {
        assert_eq!(count(log, user, |e| matches!(e, LogEvent::QuestionSent { .. })), 5 * d);
        assert_eq!(count(log, user, |e| matches!(e, LogEvent::ReminderSent { .. })), reminders_per_day * d, "{user}");
        assert_eq!(count(log, user, |e| matches!(e, LogEvent::SlotSkipped { .. })), 5 * d - 1, "{user}");
        // only the last question of the run has no successor
        assert_eq!(count(log, user, |e| matches!(e, LogEvent::SessionAbandoned { .. })), 1, "{user}");
        assert!(response_delays(log, &UserId::from(user)).is_empty());
    }
    assert_eq!(sharing_stats(log).comments, 0);
}

#[test]
fn seven_hour_replies_only_land_after_long_gaps() {
    let days = 3;
    let mut spec = SimSpec::new(1, days, 2);
    spec.elder = steady(spec.elder).fixed_delay(420.0);
    spec.younger = steady(spec.younger).fixed_delay(420.0);
    let out = run_simulation(&EngineConfig::default(), &spec).unwrap();
    let log = &out.records;
    let d = days as usize;
    for (user, reminders_per_day) in [("p01-elder", 1), ("p01-younger", 2)] {
        assert_eq!(count(log, user, |e| matches!(e, LogEvent::ReminderSent { .. })), reminders_per_day * d, "{user}");
        // the night question is the only one answered before the next slot
        let delays = response_delays(log, &UserId::from(user));
        assert_eq!(delays, vec![420.0; d], "{user}");
        assert_eq!(count(log, user, |e| matches!(e, LogEvent::SlotSkipped { .. })), 4 * d, "{user}");
        assert_eq!(count(log, user, |e| matches!(e, LogEvent::SessionAbandoned { .. })), 0, "{user}");
    }
}

#[test]
fn default_personas_land_in_a_plausible_band() {
    let out = run_simulation(&EngineConfig::default(), &SimSpec::new(26, 10, 7)).unwrap();
    let stats = sharing_stats(&out.records);
    assert_eq!(stats.per_user.len(), 52);
    let inside = stats.per_user.values().filter(|&&n| (4..=20).contains(&n)).count();
    assert!(inside * 100 >= 95 * 52, "{:?}", stats.per_user);
}
