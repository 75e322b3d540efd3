//! Per-user push channel. Each authenticated WebSocket gets a queue; the
//! services publish into it through the [`Notifier`] interface once a change
//! is committed. Delivery is at-most-once: clients that miss frames catch up
//! by polling the HTTP routes.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;
use serde::Serialize;
use tokio::sync::mpsc;

use splitledger_core::ids::UserId;
use splitledger_core::notify::{Notification, Notifier};

use crate::views::{EventView, FriendRequestView};

#[derive(Serialize)]
pub struct PushEnvelope {
    #[serde(rename = "type")]
    pub kind: &'static str,
    pub payload: serde_json::Value,
}

impl PushEnvelope {
    pub fn from_notification(n: Notification) -> Self {
        let kind = n.kind();
        let payload = match n {
            Notification::Message(m) | Notification::Invitation(m) => serde_json::to_value(m),
            Notification::FriendRequest(r) => serde_json::to_value(FriendRequestView::from(r)),
            Notification::EventUpdate(e) => serde_json::to_value(EventView::from(e)),
        }
        .expect("views serialize");
        PushEnvelope { kind, payload }
    }
}

struct Connection {
    id: u64,
    session: String,
    tx: mpsc::UnboundedSender<String>,
}

#[derive(Default)]
pub struct PushHub {
    next_id: AtomicU64,
    connections: Mutex<HashMap<UserId, Vec<Connection>>>,
}

impl PushHub {
    pub fn new() -> Self {
        PushHub::default()
    }

    /// Opens a queue for `user`. A session holds at most one connection, so
    /// an older queue for the same session is closed.
    pub fn register(&self, user: &UserId, session: &str) -> (u64, mpsc::UnboundedReceiver<String>) {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = mpsc::unbounded_channel();
        let mut map = self.connections.lock();
        let conns = map.entry(user.clone()).or_default();
        conns.retain(|c| c.session != session);
        conns.push(Connection { id, session: session.to_string(), tx });
        (id, rx)
    }

    pub fn unregister(&self, user: &UserId, id: u64) {
        let mut map = self.connections.lock();
        if let Some(conns) = map.get_mut(user) {
            conns.retain(|c| c.id != id);
            if conns.is_empty() {
                map.remove(user);
            }
        }
    }

    pub fn connection_count(&self, user: &UserId) -> usize {
        self.connections.lock().get(user).map_or(0, Vec::len)
    }
}

impl Notifier for PushHub {
    fn notify(&self, user: &UserId, notification: Notification) {
        let mut map = self.connections.lock();
        let Some(conns) = map.get_mut(user) else {
            return;
        };
        let frame = serde_json::to_string(&PushEnvelope::from_notification(notification)).expect("envelope serializes");
        conns.retain(|c| c.tx.send(frame.clone()).is_ok());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use splitledger_core::ids::EventId;
    use splitledger_core::social::{Message, MessageBody};

    fn message() -> Message {
        Message {
            id: "c:0000000001".to_string().into(),
            conversation_id: "c".to_string().into(),
            sender: "u".to_string().into(),
            sequence: 1,
            sent_at: chrono::Utc::now(),
            system: false,
            body: MessageBody::Invitation { event_id: EventId::generate(), status: splitledger_core::social::InvitationStatus::Pending },
        }
    }

    #[test]
    fn same_session_replaces_connection() {
        let hub = PushHub::new();
        let user = UserId::generate();
        let (_a, mut rx_a) = hub.register(&user, "s1");
        let (_b, mut rx_b) = hub.register(&user, "s1");
        let (_c, mut rx_c) = hub.register(&user, "s2");
        assert_eq!(hub.connection_count(&user), 2);

        hub.notify(&user, Notification::Invitation(message()));
        assert!(rx_a.try_recv().is_err());
        let frame: serde_json::Value = serde_json::from_str(&rx_b.try_recv().unwrap()).unwrap();
        assert_eq!(frame["type"], "invitation");
        assert_eq!(frame["payload"]["body"]["type"], "invitation");
        assert!(rx_c.try_recv().is_ok());
    }

    #[test]
    fn closed_queues_are_pruned() {
        let hub = PushHub::new();
        let user = UserId::generate();
        let (id, rx) = hub.register(&user, "s");
        drop(rx);
        hub.notify(&user, Notification::Message(message()));
        assert_eq!(hub.connection_count(&user), 0);
        hub.unregister(&user, id);
    }
}
