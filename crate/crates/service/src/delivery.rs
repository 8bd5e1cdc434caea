//! Outbound delivery through a messaging adapter with bounded retry.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Duration;

use kinlink_core::domain::UserId;
use kinlink_core::log::LogEvent;
use tokio::sync::broadcast;

use crate::wire::WireOutbound;

/// A messaging platform, or anything else that can carry a message to a user.
pub trait Adapter: Send + Sync {
    fn deliver(&self, msg: &WireOutbound) -> Result<(), String>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Wait before the second attempt; doubled before each later one.
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, backoff: Duration::from_millis(200) }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Receipt {
    pub attempts: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("delivery to {user_id} failed after {attempts} attempts: {detail}")]
pub struct DeliveryFailed {
    pub user_id: UserId,
    pub attempts: u32,
    pub detail: String,
}

/// Tries up to `policy.attempts` times, reporting every attempt to `record`
/// and waiting through `sleep` between attempts.
pub fn deliver_outbound(
    adapter: &dyn Adapter,
    msg: &WireOutbound,
    policy: RetryPolicy,
    mut sleep: impl FnMut(Duration),
    mut record: impl FnMut(LogEvent),
) -> Result<Receipt, DeliveryFailed> {
    let mut wait = policy.backoff;
    let mut detail = String::new();
    for attempt in 1..=policy.attempts {
        if attempt > 1 {
            sleep(wait);
            wait = wait.saturating_mul(2);
        }
        let result = adapter.deliver(msg);
        record(LogEvent::DeliveryAttempt {
            user_id: msg.user_id.clone(),
            attempt,
            ok: result.is_ok(),
            detail: result.as_ref().err().cloned(),
        });
        match result {
            Ok(()) => return Ok(Receipt { attempts: attempt }),
            Err(e) => detail = e,
        }
    }
    record(LogEvent::DeliveryFailed { user_id: msg.user_id.clone(), attempts: policy.attempts, detail: detail.clone() });
    Err(DeliveryFailed { user_id: msg.user_id.clone(), attempts: policy.attempts, detail })
}

/// In-process adapter: keeps every user's messages and pushes them to
/// stream subscribers.
pub struct Loopback {
    history: Mutex<BTreeMap<UserId, Vec<WireOutbound>>>,
    live: broadcast::Sender<WireOutbound>,
}

impl Default for Loopback {
    fn default() -> Self {
        Self { history: Mutex::new(BTreeMap::new()), live: broadcast::channel(1024).0 }
    }
}

impl Loopback {
    /// Messages for `user` with `seq > since`.
    pub fn since(&self, user: &UserId, since: u64) -> Vec<WireOutbound> {
        let history = self.history.lock().expect("loopback lock");
        history.get(user).map(|v| v.iter().filter(|m| m.seq > since).cloned().collect()).unwrap_or_default()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<WireOutbound> {
        self.live.subscribe()
    }
}

impl Adapter for Loopback {
    fn deliver(&self, msg: &WireOutbound) -> Result<(), String> {
        let mut history = self.history.lock().map_err(|_| "loopback lock poisoned".to_string())?;
        let list = history.entry(msg.user_id.clone()).or_default();
        let stamped = WireOutbound { seq: list.len() as u64 + 1, ..msg.clone() };
        list.push(stamped.clone());
        // no subscribers is fine
        let _ = self.live.send(stamped);
        Ok(())
    }
}
