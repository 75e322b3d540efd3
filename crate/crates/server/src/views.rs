//! Wire representations. Money always goes out as integer minor units plus
//! a two-decimal display string.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use splitledger_core::auth::PublicProfile;
use splitledger_core::events::{
    Event, EventDetail, EventState, HomeEntry, MemberLine, Participation, ParticipationStatus, Role,
};
use splitledger_core::ids::{CardId, ConversationId, EventId, PaymentId, RequestId, UserId};
use splitledger_core::payments::{Card, Payment, PaymentState};
use splitledger_core::social::{ConversationSummary, FriendRequest, Message, RequestStatus};
use splitledger_core::{parse_money, Money, SplitRule};

use crate::error::ApiError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoneyView {
    pub amount: u64,
    pub display: String,
}

impl From<Money> for MoneyView {
    fn from(m: Money) -> Self {
        MoneyView { amount: m.minor(), display: m.display() }
    }
}

/// Accepts either integer minor units (`1234`) or decimal text (`"12.34"`).
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum MoneyInput {
    Minor(u64),
    Text(String),
}

impl MoneyInput {
    pub fn resolve(&self) -> Result<Money, ApiError> {
        Ok(match self {
            MoneyInput::Minor(m) => Money::from_minor(*m)?,
            MoneyInput::Text(t) => parse_money(t)?,
        })
    }
}

#[derive(Serialize)]
pub struct ShareView {
    pub member: UserId,
    pub share: MoneyView,
}

#[derive(Serialize)]
pub struct EventView {
    pub id: EventId,
    pub host: UserId,
    pub title: String,
    pub description: String,
    pub total: MoneyView,
    pub rule: SplitRule,
    pub members: Vec<UserId>,
    pub shares: Vec<ShareView>,
    pub state: EventState,
    pub created_at: DateTime<Utc>,
}

impl From<Event> for EventView {
    fn from(e: Event) -> Self {
        EventView {
            shares: e
                .shares
                .entries
                .into_iter()
                .map(|s| ShareView { member: s.member, share: s.share.into() })
                .collect(),
            id: e.id,
            host: e.host,
            title: e.title,
            description: e.description,
            total: e.total.into(),
            rule: e.rule,
            members: e.members,
            state: e.state,
            created_at: e.created_at,
        }
    }
}

#[derive(Serialize)]
pub struct HomeEntryView {
    pub event_id: EventId,
    pub title: String,
    pub role: Role,
    pub your_share: MoneyView,
    pub your_status: ParticipationStatus,
    pub event_state: EventState,
    pub created_at: DateTime<Utc>,
}

impl From<HomeEntry> for HomeEntryView {
    fn from(h: HomeEntry) -> Self {
        HomeEntryView {
            event_id: h.event_id,
            title: h.title,
            role: h.role,
            your_share: h.your_share.into(),
            your_status: h.your_status,
            event_state: h.event_state,
            created_at: h.created_at,
        }
    }
}

#[derive(Serialize)]
pub struct MemberView {
    pub user: PublicProfile,
    pub is_host: bool,
    pub share: MoneyView,
    pub status: ParticipationStatus,
}

impl From<MemberLine> for MemberView {
    fn from(m: MemberLine) -> Self {
        MemberView { user: m.user, is_host: m.is_host, share: m.share.into(), status: m.status }
    }
}

#[derive(Serialize)]
pub struct EventDetailView {
    pub event: EventView,
    pub members: Vec<MemberView>,
    pub your_role: Role,
    pub your_share: MoneyView,
    pub your_status: ParticipationStatus,
    pub can_pay: bool,
    pub uncollected: MoneyView,
    /// The caller's own payment attempts, oldest first.
    pub payments: Vec<PaymentView>,
}

impl EventDetailView {
    pub fn new(d: EventDetail, payments: Vec<Payment>) -> Self {
        EventDetailView {
            event: d.event.into(),
            members: d.members.into_iter().map(Into::into).collect(),
            your_role: d.your_role,
            your_share: d.your_share.into(),
            your_status: d.your_status,
            can_pay: d.can_pay,
            uncollected: d.uncollected.into(),
            payments: payments.into_iter().map(Into::into).collect(),
        }
    }
}

#[derive(Serialize)]
pub struct ParticipationView {
    pub event_id: EventId,
    pub member: UserId,
    pub role: Role,
    pub status: ParticipationStatus,
    pub share: MoneyView,
    pub payment_id: Option<PaymentId>,
}

impl From<Participation> for ParticipationView {
    fn from(p: Participation) -> Self {
        ParticipationView {
            event_id: p.event_id,
            member: p.member,
            role: p.role,
            status: p.status,
            share: p.share.into(),
            payment_id: p.payment_id,
        }
    }
}

#[derive(Serialize)]
pub struct PaymentView {
    pub id: PaymentId,
    pub event_id: EventId,
    pub payer: UserId,
    pub card_id: CardId,
    pub amount: MoneyView,
    pub state: PaymentState,
    pub gateway_ref: Option<String>,
    pub decline_reason: Option<String>,
    pub created_at: DateTime<Utc>,
}

impl From<Payment> for PaymentView {
    fn from(p: Payment) -> Self {
        PaymentView {
            id: p.id,
            event_id: p.event_id,
            payer: p.payer,
            card_id: p.card_id,
            amount: p.amount.into(),
            state: p.state,
            gateway_ref: p.gateway_ref,
            decline_reason: p.decline_reason,
            created_at: p.created_at,
        }
    }
}

/// Cards without their gateway token.
#[derive(Serialize)]
pub struct CardView {
    pub id: CardId,
    pub masked_pan: String,
    pub expiry_month: u32,
    pub expiry_year: i32,
    pub holder_name: String,
    pub created_at: DateTime<Utc>,
}

impl From<Card> for CardView {
    fn from(c: Card) -> Self {
        CardView {
            id: c.id,
            masked_pan: c.masked_pan,
            expiry_month: c.expiry_month,
            expiry_year: c.expiry_year,
            holder_name: c.holder_name,
            created_at: c.created_at,
        }
    }
}

#[derive(Serialize)]
pub struct FriendRequestView {
    pub id: RequestId,
    pub from: UserId,
    pub to: UserId,
    pub status: RequestStatus,
    pub created_at: DateTime<Utc>,
    pub responded_at: Option<DateTime<Utc>>,
}

impl From<FriendRequest> for FriendRequestView {
    fn from(r: FriendRequest) -> Self {
        FriendRequestView {
            id: r.id,
            from: r.from,
            to: r.to,
            status: r.status,
            created_at: r.created_at,
            responded_at: r.responded_at,
        }
    }
}

/// A pending request together with the user on the other side.
#[derive(Serialize)]
pub struct PendingRequestView {
    pub request: FriendRequestView,
    pub user: PublicProfile,
}

#[derive(Serialize)]
pub struct FriendsView {
    pub friends: Vec<PublicProfile>,
    pub incoming: Vec<PendingRequestView>,
    pub outgoing: Vec<PendingRequestView>,
}

#[derive(Serialize)]
pub struct ChatView {
    pub id: ConversationId,
    pub peer: PublicProfile,
    pub last_message: Option<Message>,
    pub last_activity: DateTime<Utc>,
}

impl From<ConversationSummary> for ChatView {
    fn from(s: ConversationSummary) -> Self {
        ChatView {
            id: s.conversation.id,
            peer: s.peer,
            last_message: s.last_message,
            last_activity: s.conversation.last_activity,
        }
    }
}
