//! Index declarations for every collection the services use.

use crate::storage::{Collection, IndexSpec};

pub const USER_USERNAME: &str = "username";
pub const USER_EMAIL: &str = "email";
pub const SESSION_USER: &str = "session_user";
pub const REQUEST_PENDING: &str = "pending_pair";
pub const REQUEST_PARTY: &str = "request_party";
pub const FRIEND_MEMBER: &str = "friend_member";
pub const CONVERSATION_PAIR: &str = "conversation_pair";
pub const CONVERSATION_PARTICIPANT: &str = "conversation_participant";
pub const MESSAGE_CONVERSATION: &str = "message_conversation";
pub const EVENT_MEMBER: &str = "event_member";
pub const PARTICIPATION_EVENT: &str = "participation_event";
pub const PARTICIPATION_MEMBER: &str = "participation_member";
pub const CARD_OWNER: &str = "card_owner";
pub const PAYMENT_IDEMPOTENCY: &str = "payment_idempotency";
pub const PAYMENT_SUCCESS: &str = "payment_success";
pub const PAYMENT_STATE: &str = "payment_state";

pub fn indexes() -> Vec<IndexSpec> {
    use Collection::*;
    vec![
        // email first: a signup colliding on both reports the email
        IndexSpec::unique(USER_EMAIL, Users, "email"),
        IndexSpec::unique(USER_USERNAME, Users, "username"),
        IndexSpec::new(SESSION_USER, Sessions, "user_id"),
        IndexSpec::unique(REQUEST_PENDING, FriendRequests, "pending_pair"),
        IndexSpec::new(REQUEST_PARTY, FriendRequests, "parties"),
        IndexSpec::new(FRIEND_MEMBER, Friendships, "members"),
        IndexSpec::unique(CONVERSATION_PAIR, Conversations, "pair_key"),
        IndexSpec::new(CONVERSATION_PARTICIPANT, Conversations, "participants"),
        IndexSpec::new(MESSAGE_CONVERSATION, Messages, "conversation_id"),
        IndexSpec::new(EVENT_MEMBER, Events, "members"),
        IndexSpec::new(PARTICIPATION_EVENT, Participations, "event_id"),
        IndexSpec::new(PARTICIPATION_MEMBER, Participations, "member"),
        IndexSpec::new(CARD_OWNER, Cards, "owner"),
        IndexSpec::new(PAYMENT_IDEMPOTENCY, Payments, "idempotency_key"),
        IndexSpec::unique(PAYMENT_SUCCESS, Payments, "success_key"),
        IndexSpec::new(PAYMENT_STATE, Payments, "state"),
    ]
}
