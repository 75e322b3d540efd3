//! Friends, 1:1 conversations and chat messages, including the invitation
//! messages that events send to their invitees.

use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::{AuthError, AuthService, PublicProfile};
use crate::clock::Clock;
use crate::ids::{pair_key, ConversationId, EventId, MessageId, RequestId, UserId};
use crate::notify::{Notification, Notifier};
use crate::repo::Repo;
use crate::schema;
use crate::storage::{Collection, Store, StoreError};

pub const MAX_MESSAGE_CHARS: usize = 2000;
pub const SEARCH_LIMIT: usize = 20;

#[derive(Debug, Error)]
pub enum SocialError {
    #[error("unknown user")]
    UnknownUser,
    #[error("already friends")]
    AlreadyFriends,
    #[error("a friend request between these users is already pending")]
    RequestAlreadyPending,
    #[error("cannot send a friend request to yourself")]
    SelfRequest,
    #[error("unknown friend request")]
    UnknownRequest,
    #[error("only the addressee can answer a friend request")]
    NotAddressee,
    #[error("friend request was already answered")]
    AlreadyResolved,
    #[error("unknown conversation")]
    UnknownConversation,
    #[error("not a participant of this conversation")]
    NotParticipant,
    #[error("message is empty")]
    EmptyMessage,
    #[error("message exceeds {MAX_MESSAGE_CHARS} characters")]
    MessageTooLong,
    #[error("search query is empty")]
    EmptyQuery,
    #[error("users are not friends")]
    NotFriends,
    #[error("unknown message")]
    UnknownMessage,
    #[error("invitation was already answered")]
    InvitationResolved,
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestStatus {
    Pending,
    Accepted,
    Declined,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FriendRequest {
    pub id: RequestId,
    pub from: UserId,
    pub to: UserId,
    pub status: RequestStatus,
    pub created_at: DateTime<Utc>,
    pub responded_at: Option<DateTime<Utc>>,
    parties: [UserId; 2],
    /// Unordered pair key, present only while pending. Its unique index
    /// allows one pending request per pair in either direction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pending_pair: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Friendship {
    members: [UserId; 2],
    since: DateTime<Utc>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: ConversationId,
    pub participants: [UserId; 2],
    pair_key: String,
    /// Sequence the next message will take; messages are numbered from 1.
    pub next_sequence: u64,
    pub last_activity: DateTime<Utc>,
}

impl Conversation {
    pub fn peer_of(&self, user: &UserId) -> &UserId {
        if &self.participants[0] == user {
            &self.participants[1]
        } else {
            &self.participants[0]
        }
    }

    pub fn has(&self, user: &UserId) -> bool {
        self.participants.contains(user)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvitationStatus {
    Pending,
    Confirmed,
    Cancelled,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MessageBody {
    Text { content: String },
    Invitation { event_id: EventId, status: InvitationStatus },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub id: MessageId,
    pub conversation_id: ConversationId,
    pub sender: UserId,
    pub sequence: u64,
    pub sent_at: DateTime<Utc>,
    /// Generated by the server rather than typed by the sender.
    #[serde(default)]
    pub system: bool,
    pub body: MessageBody,
}

fn message_id(conversation: &ConversationId, sequence: u64) -> MessageId {
    // Zero-padded so id order is sequence order.
    MessageId(format!("{conversation}:{sequence:010}"))
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    None,
    Friends,
    RequestSent,
    RequestReceived,
}

#[derive(Clone, Debug, Serialize)]
pub struct SearchHit {
    pub user: PublicProfile,
    pub relation: Relation,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConversationSummary {
    pub conversation: Conversation,
    pub peer: PublicProfile,
    pub last_message: Option<Message>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FriendsOverview {
    pub friends: Vec<PublicProfile>,
    pub incoming: Vec<FriendRequest>,
    pub outgoing: Vec<FriendRequest>,
}

pub struct SocialService {
    auth: Arc<AuthService>,
    requests: Repo<FriendRequest>,
    friendships: Repo<Friendship>,
    conversations: Repo<Conversation>,
    messages: Repo<Message>,
    clock: Arc<dyn Clock>,
    notifier: Arc<dyn Notifier>,
}

impl SocialService {
    pub fn new(
        store: Arc<dyn Store>,
        auth: Arc<AuthService>,
        clock: Arc<dyn Clock>,
        notifier: Arc<dyn Notifier>,
    ) -> Self {
        SocialService {
            auth,
            requests: Repo::new(store.clone(), Collection::FriendRequests),
            friendships: Repo::new(store.clone(), Collection::Friendships),
            conversations: Repo::new(store.clone(), Collection::Conversations),
            messages: Repo::new(store, Collection::Messages),
            clock,
            notifier,
        }
    }

    pub fn are_friends(&self, a: &UserId, b: &UserId) -> Result<bool, SocialError> {
        Ok(a != b && self.friendships.get(&pair_key(a, b))?.is_some())
    }

    pub fn search_users(&self, caller: &UserId, query: &str) -> Result<Vec<SearchHit>, SocialError> {
        let prefix = query.trim().to_lowercase();
        if prefix.is_empty() {
            return Err(SocialError::EmptyQuery);
        }
        let mut users: Vec<_> = self
            .auth
            .all_users()?
            .into_iter()
            .filter(|u| &u.id != caller && u.username.starts_with(&prefix))
            .collect();
        users.sort_by(|a, b| a.username.cmp(&b.username));
        users.truncate(SEARCH_LIMIT);
        users
            .into_iter()
            .map(|u| {
                let relation = self.relation(caller, &u.id)?;
                Ok(SearchHit { user: u.public(), relation })
            })
            .collect()
    }

    fn relation(&self, caller: &UserId, other: &UserId) -> Result<Relation, SocialError> {
        if self.are_friends(caller, other)? {
            return Ok(Relation::Friends);
        }
        let pending = self.requests.query(schema::REQUEST_PENDING, &pair_key(caller, other))?;
        Ok(match pending.first() {
            Some(r) if &r.value.from == caller => Relation::RequestSent,
            Some(_) => Relation::RequestReceived,
            None => Relation::None,
        })
    }

    pub fn send_friend_request(&self, from: &UserId, to_username: &str) -> Result<FriendRequest, SocialError> {
        let target = self.auth.find_by_username(to_username)?.ok_or(SocialError::UnknownUser)?;
        if &target.id == from {
            return Err(SocialError::SelfRequest);
        }
        if self.are_friends(from, &target.id)? {
            return Err(SocialError::AlreadyFriends);
        }
        let request = FriendRequest {
            id: RequestId::generate(),
            from: from.clone(),
            to: target.id.clone(),
            status: RequestStatus::Pending,
            created_at: self.clock.now(),
            responded_at: None,
            parties: [from.clone(), target.id.clone()],
            pending_pair: Some(pair_key(from, &target.id)),
        };
        match self.requests.insert(request.id.as_str(), request.clone()) {
            Ok(_) => {}
            Err(StoreError::UniqueViolation { .. }) => return Err(SocialError::RequestAlreadyPending),
            Err(e) => return Err(e.into()),
        }

        let sender = self.auth.profile(from)?;
        let conversation = self.ensure_conversation(from, &target.id)?;
        let note = self.append(
            &conversation.id,
            from,
            true,
            MessageBody::Text { content: format!("{} (@{}) sent you a friend request", sender.display_name, sender.username) },
        )?;
        self.notifier.notify(&target.id, Notification::FriendRequest(request.clone()));
        self.notifier.notify(&target.id, Notification::Message(note));
        Ok(request)
    }

    pub fn respond_friend_request(
        &self,
        caller: &UserId,
        request_id: &RequestId,
        accept: bool,
    ) -> Result<FriendRequest, SocialError> {
        let now = self.clock.now();
        let updated = self
            .requests
            .modify(request_id.as_str(), |r| {
                if &r.to != caller {
                    return Err(SocialError::NotAddressee);
                }
                if r.status != RequestStatus::Pending {
                    return Err(SocialError::AlreadyResolved);
                }
                Ok(Some(FriendRequest {
                    status: if accept { RequestStatus::Accepted } else { RequestStatus::Declined },
                    responded_at: Some(now),
                    pending_pair: None,
                    ..r.clone()
                }))
            })?
            .ok_or(SocialError::UnknownRequest)?
            .value;

        if accept {
            let key = pair_key(&updated.from, &updated.to);
            let friendship = Friendship { members: [updated.from.clone(), updated.to.clone()], since: now };
            match self.friendships.insert(&key, friendship) {
                Ok(_) | Err(StoreError::DuplicateId { .. }) => {}
                Err(e) => return Err(e.into()),
            }
            self.ensure_conversation(&updated.from, &updated.to)?;
        }
        self.notifier.notify(&updated.from, Notification::FriendRequest(updated.clone()));
        Ok(updated)
    }

    pub fn friends(&self, caller: &UserId) -> Result<FriendsOverview, SocialError> {
        let mut friends = Vec::new();
        for f in self.friendships.query(schema::FRIEND_MEMBER, caller.as_str())? {
            let other = if &f.value.members[0] == caller { &f.value.members[1] } else { &f.value.members[0] };
            friends.push(self.auth.profile(other)?.public());
        }
        friends.sort_by(|a, b| a.username.cmp(&b.username));
        let (mut incoming, mut outgoing) = (Vec::new(), Vec::new());
        for r in self.requests.query(schema::REQUEST_PARTY, caller.as_str())? {
            if r.value.status != RequestStatus::Pending {
                continue;
            }
            if &r.value.to == caller {
                incoming.push(r.value);
            } else {
                outgoing.push(r.value);
            }
        }
        Ok(FriendsOverview { friends, incoming, outgoing })
    }

    /// The one conversation between `a` and `b`, created on first use.
    pub fn ensure_conversation(&self, a: &UserId, b: &UserId) -> Result<Conversation, SocialError> {
        let key = pair_key(a, b);
        loop {
            if let Some(c) = self.conversations.query(schema::CONVERSATION_PAIR, &key)?.into_iter().next() {
                return Ok(c.value);
            }
            let conversation = Conversation {
                id: ConversationId::generate(),
                participants: [a.clone(), b.clone()],
                pair_key: key.clone(),
                next_sequence: 1,
                last_activity: self.clock.now(),
            };
            match self.conversations.insert(conversation.id.as_str(), conversation.clone()) {
                Ok(_) => return Ok(conversation),
                // lost the creation race; the winner's conversation is now visible
                Err(StoreError::UniqueViolation { .. }) => continue,
                Err(e) => return Err(e.into()),
            }
        }
    }

    pub fn list_conversations(&self, caller: &UserId) -> Result<Vec<ConversationSummary>, SocialError> {
        let mut conversations: Vec<_> = self
            .conversations
            .query(schema::CONVERSATION_PARTICIPANT, caller.as_str())?
            .into_iter()
            .map(|c| c.value)
            .collect();
        conversations.sort_by(|a, b| b.last_activity.cmp(&a.last_activity).then_with(|| a.id.cmp(&b.id)));
        conversations
            .into_iter()
            .map(|c| {
                let peer = self.auth.profile(c.peer_of(caller))?.public();
                let last_message = match c.next_sequence {
                    1 => None,
                    n => self.messages.get(message_id(&c.id, n - 1).as_str())?.map(|m| m.value),
                };
                Ok(ConversationSummary { conversation: c, peer, last_message })
            })
            .collect()
    }

    fn conversation_for(&self, caller: &UserId, id: &ConversationId) -> Result<Conversation, SocialError> {
        let c = self.conversations.get(id.as_str())?.ok_or(SocialError::UnknownConversation)?.value;
        if !c.has(caller) {
            return Err(SocialError::NotParticipant);
        }
        Ok(c)
    }

    /// Messages after `after_seq` (all when `None`), in sequence order.
    pub fn messages(
        &self,
        caller: &UserId,
        conversation: &ConversationId,
        after_seq: Option<u64>,
    ) -> Result<Vec<Message>, SocialError> {
        self.conversation_for(caller, conversation)?;
        let after = after_seq.unwrap_or(0);
        Ok(self
            .messages
            .query(schema::MESSAGE_CONVERSATION, conversation.as_str())?
            .into_iter()
            .map(|m| m.value)
            .filter(|m| m.sequence > after)
            .collect())
    }

    pub fn send_message(&self, caller: &UserId, conversation: &ConversationId, text: &str) -> Result<Message, SocialError> {
        let c = self.conversation_for(caller, conversation)?;
        if text.trim().is_empty() {
            return Err(SocialError::EmptyMessage);
        }
        if text.chars().count() > MAX_MESSAGE_CHARS {
            return Err(SocialError::MessageTooLong);
        }
        let message = self.append(&c.id, caller, false, MessageBody::Text { content: text.to_owned() })?;
        self.notifier.notify(c.peer_of(caller), Notification::Message(message.clone()));
        Ok(message)
    }

    /// Posts a pending invitation for `event` from `host` into their
    /// conversation with `invitee`.
    pub fn post_invitation(&self, host: &UserId, invitee: &UserId, event: &EventId) -> Result<Message, SocialError> {
        if !self.are_friends(host, invitee)? {
            return Err(SocialError::NotFriends);
        }
        let c = self.ensure_conversation(host, invitee)?;
        let message = self.append(
            &c.id,
            host,
            false,
            MessageBody::Invitation { event_id: event.clone(), status: InvitationStatus::Pending },
        )?;
        self.notifier.notify(invitee, Notification::Invitation(message.clone()));
        Ok(message)
    }

    /// Moves a pending invitation to Confirmed or Cancelled.
    pub fn resolve_invitation(&self, message: &MessageId, confirmed: bool) -> Result<Message, SocialError> {
        let updated = self
            .messages
            .modify(message.as_str(), |m| match &m.body {
                MessageBody::Invitation { event_id, status: InvitationStatus::Pending } => Ok(Some(Message {
                    body: MessageBody::Invitation {
                        event_id: event_id.clone(),
                        status: if confirmed { InvitationStatus::Confirmed } else { InvitationStatus::Cancelled },
                    },
                    ..m.clone()
                })),
                MessageBody::Invitation { .. } => Err(SocialError::InvitationResolved),
                MessageBody::Text { .. } => Err(SocialError::UnknownMessage),
            })?
            .ok_or(SocialError::UnknownMessage)?
            .value;
        if let Some(c) = self.conversations.get(updated.conversation_id.as_str())? {
            for p in &c.value.participants {
                self.notifier.notify(p, Notification::Invitation(updated.clone()));
            }
        }
        Ok(updated)
    }

    // Claims the conversation's next sequence number with an atomic insert;
    // a duplicate id means another writer took it first, so catch the
    // counter up and try the next one.
    fn append(
        &self,
        conversation: &ConversationId,
        sender: &UserId,
        system: bool,
        body: MessageBody,
    ) -> Result<Message, SocialError> {
        loop {
            let current = self.conversations.get(conversation.as_str())?.ok_or(SocialError::UnknownConversation)?;
            let sequence = current.value.next_sequence;
            let message = Message {
                id: message_id(conversation, sequence),
                conversation_id: conversation.clone(),
                sender: sender.clone(),
                sequence,
                sent_at: self.clock.now(),
                system,
                body: body.clone(),
            };
            let inserted = match self.messages.insert(message.id.as_str(), message.clone()) {
                Ok(_) => true,
                Err(StoreError::DuplicateId { .. }) => false,
                Err(e) => return Err(e.into()),
            };
            let now = self.clock.now();
            self.conversations.modify(conversation.as_str(), |c| {
                if c.next_sequence > sequence {
                    return Ok::<_, SocialError>(None);
                }
                Ok(Some(Conversation { next_sequence: sequence + 1, last_activity: now, ..c.clone() }))
            })?;
            if inserted {
                return Ok(message);
            }
        }
    }
}
