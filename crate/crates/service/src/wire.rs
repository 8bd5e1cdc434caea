//! JSON payloads exchanged with clients. Every payload carries `"v": 1`.

use kinlink_core::dialogue::{Content, OutboundMessage, Role};
use kinlink_core::domain::{ResponseKind, SessionId, UserId};
use kinlink_core::time::Timestamp;
use serde::{Deserialize, Serialize};

pub const WIRE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireInbound {
    pub v: u32,
    pub user_id: UserId,
    pub text: String,
    /// Client clock, seconds since the epoch; informational only.
    pub client_ts: i64,
    pub idempotency_key: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireKind {
    Text,
    Sticker,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireOutbound {
    pub v: u32,
    /// Position in this user's stream, from 1.
    pub seq: u64,
    pub user_id: UserId,
    pub kind: WireKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sticker_id: Option<String>,
    pub server_ts: i64,
    pub role: Role,
    pub session_id: Option<SessionId>,
    pub turn: Option<u32>,
    pub response_kind: Option<ResponseKind>,
}

impl WireOutbound {
    /// Wire form of `msg`; `seq` is assigned on delivery.
    pub fn from_message(msg: &OutboundMessage, server_ts: Timestamp) -> Self {
        let (kind, body, sticker_id) = match &msg.content {
            Content::Text(t) => (WireKind::Text, Some(t.clone()), None),
            Content::Sticker(s) => (WireKind::Sticker, None, Some(s.clone())),
        };
        Self {
            v: WIRE_VERSION,
            seq: 0,
            user_id: msg.user_id.clone(),
            kind,
            body,
            sticker_id,
            server_ts: server_ts.0,
            role: msg.role,
            session_id: msg.session_id.clone(),
            turn: msg.turn,
            response_kind: msg.response_kind,
        }
    }

    pub fn to_message(&self) -> Option<OutboundMessage> {
        let content = match (self.kind, &self.body, &self.sticker_id) {
            (WireKind::Text, Some(b), None) => Content::Text(b.clone()),
            (WireKind::Sticker, None, Some(s)) => Content::Sticker(s.clone()),
            _ => return None,
        };
        Some(OutboundMessage {
            user_id: self.user_id.clone(),
            session_id: self.session_id.clone(),
            turn: self.turn,
            role: self.role,
            content,
            response_kind: self.response_kind,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AckStatus {
    Queued,
    Duplicate,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub v: u32,
    pub status: AckStatus,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireError {
    pub v: u32,
    pub error: String,
    pub detail: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outbound_round_trips() {
        for content in [Content::Text("Hi".into()), Content::Sticker("wave".into())] {
            let msg = OutboundMessage {
                user_id: "u".into(),
                session_id: Some("s".into()),
                turn: Some(5),
                role: Role::Reply,
                content,
                response_kind: None,
            };
            let wire = WireOutbound::from_message(&msg, Timestamp(9));
            let text = serde_json::to_string(&wire).unwrap();
            assert!(text.starts_with(r#"{"v":1,"#));
            let back: WireOutbound = serde_json::from_str(&text).unwrap();
            assert_eq!(back.to_message(), Some(msg));
        }
    }

    #[test]
    fn inbound_rejects_unknown_fields() {
        let ok = r#"{"v":1,"user_id":"u","text":"hi","client_ts":0,"idempotency_key":"k"}"#;
        assert!(serde_json::from_str::<WireInbound>(ok).is_ok());
        let extra = r#"{"v":1,"user_id":"u","text":"hi","client_ts":0,"idempotency_key":"k","x":1}"#;
        assert!(serde_json::from_str::<WireInbound>(extra).is_err());
    }
}
