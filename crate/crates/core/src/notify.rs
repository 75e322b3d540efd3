//! Outbound notifications. Services call a [`Notifier`] after a change has
//! been committed; delivery is best-effort and the store stays authoritative.

use crate::events::Event;
use crate::ids::UserId;
use crate::social::{FriendRequest, Message};

#[derive(Clone, Debug)]
pub enum Notification {
    Message(Message),
    Invitation(Message),
    FriendRequest(FriendRequest),
    EventUpdate(Event),
}

impl Notification {
    pub fn kind(&self) -> &'static str {
        match self {
            Notification::Message(_) => "message",
            Notification::Invitation(_) => "invitation",
            Notification::FriendRequest(_) => "friend_request",
            Notification::EventUpdate(_) => "event_update",
        }
    }
}

pub trait Notifier: Send + Sync {
    fn notify(&self, user: &UserId, notification: Notification);
}

/// Drops everything.
pub struct NullNotifier;

impl Notifier for NullNotifier {
    fn notify(&self, _user: &UserId, _notification: Notification) {}
}

/// Keeps every notification, for tests.
#[derive(Default)]
pub struct RecordingNotifier {
    seen: parking_lot::Mutex<Vec<(UserId, Notification)>>,
}

impl RecordingNotifier {
    pub fn take(&self) -> Vec<(UserId, Notification)> {
        std::mem::take(&mut *self.seen.lock())
    }
}

impl Notifier for RecordingNotifier {
    fn notify(&self, user: &UserId, notification: Notification) {
        self.seen.lock().push((user.clone(), notification));
    }
}
