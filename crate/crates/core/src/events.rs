//! Shared-payment events and each member's participation in them.
//!
//! Shares are computed once, at creation, over `[host, invitees...]`. The
//! host collects and is settled from the start; each invitee goes
//! `Invited -> Confirmed -> Paid` or `Invited -> Declined`. An event is
//! settled once no invitee is left Invited or Confirmed.

use std::sync::Arc;
use std::time::{Duration as StdDuration, Instant};

use chrono::{DateTime, Utc};
use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::{AuthError, AuthService, PublicProfile};
use crate::clock::Clock;
use crate::ids::{EventId, MessageId, PaymentId, UserId};
use crate::money::Money;
use crate::notify::{Notification, Notifier};
use crate::repo::{Repo, Versioned};
use crate::schema;
use crate::social::{SocialError, SocialService};
use crate::split::{compute_shares, RuleError, ShareAllocation, SplitRule};
use crate::storage::{Collection, Store, StoreError};

pub const MAX_MEMBERS: usize = 50;
pub const MAX_TITLE_CHARS: usize = 80;
pub const MAX_DESCRIPTION_CHARS: usize = 500;
const STRIPES: usize = 64;
const RESERVATION_WAIT: StdDuration = StdDuration::from_secs(30);

#[derive(Debug, Error)]
pub enum EventError {
    #[error("unknown event")]
    UnknownEvent,
    #[error("not a member of this event")]
    NotMember,
    #[error("not an invitee of this event")]
    NotInvitee,
    #[error("only the host can do this")]
    NotHost,
    #[error("invitation was already answered")]
    AlreadyResponded,
    #[error("event is no longer open")]
    EventNotOpen,
    #[error("share is not awaiting payment")]
    NotConfirmed,
    #[error("share is already paid")]
    AlreadyPaid,
    #[error("a payment for this share is in progress")]
    PaymentInProgress,
    #[error("payment amount {paid} does not match the share {share}")]
    AmountMismatch { paid: Money, share: Money },
    #[error("event already has payments")]
    HasPayments,
    #[error("{0} is not a friend of the host")]
    NotFriends(UserId),
    #[error("invalid split rule: {0}")]
    InvalidRule(#[from] RuleError),
    #[error("total must be greater than zero")]
    ZeroTotal,
    #[error("an event can have at most {MAX_MEMBERS} members")]
    TooManyMembers,
    #[error("invitee listed twice or is the host")]
    DuplicateInvitee,
    #[error("title must be 1-{MAX_TITLE_CHARS} characters")]
    InvalidTitle,
    #[error("description exceeds {MAX_DESCRIPTION_CHARS} characters")]
    DescriptionTooLong,
    #[error(transparent)]
    Social(#[from] SocialError),
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventState {
    Open,
    Settled,
    Cancelled,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub id: EventId,
    pub host: UserId,
    pub title: String,
    pub description: String,
    pub total: Money,
    pub rule: SplitRule,
    /// Host first, then invitees in the order they were given.
    pub members: Vec<UserId>,
    pub shares: ShareAllocation<UserId>,
    pub state: EventState,
    pub created_at: DateTime<Utc>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Host,
    Invitee,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParticipationStatus {
    HostAutoSettled,
    Invited,
    Confirmed,
    Declined,
    Paid,
}

impl ParticipationStatus {
    fn is_final(self) -> bool {
        matches!(self, ParticipationStatus::Paid | ParticipationStatus::Declined | ParticipationStatus::HostAutoSettled)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participation {
    pub event_id: EventId,
    pub member: UserId,
    pub role: Role,
    pub status: ParticipationStatus,
    pub share: Money,
    /// Set exactly when the status is Paid.
    pub payment_id: Option<PaymentId>,
    pub invitation: Option<MessageId>,
    /// A charge for this share is underway.
    #[serde(default)]
    pub pending_payment: Option<PaymentId>,
    pub updated_at: DateTime<Utc>,
}

fn participation_id(event: &EventId, member: &UserId) -> String {
    format!("{event}|{member}")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HomeEntry {
    pub event_id: EventId,
    pub title: String,
    pub role: Role,
    pub your_share: Money,
    pub your_status: ParticipationStatus,
    pub event_state: EventState,
    pub created_at: DateTime<Utc>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MemberLine {
    pub user: PublicProfile,
    pub is_host: bool,
    pub share: Money,
    pub status: ParticipationStatus,
}

#[derive(Clone, Debug, Serialize)]
pub struct EventDetail {
    pub event: Event,
    pub members: Vec<MemberLine>,
    pub your_role: Role,
    pub your_share: Money,
    pub your_status: ParticipationStatus,
    pub can_pay: bool,
    /// Sum of declined shares.
    pub uncollected: Money,
}

#[derive(Clone, Debug)]
pub struct NewEvent {
    pub title: String,
    pub description: String,
    pub total: Money,
    pub rule: SplitRule,
    pub invitees: Vec<UserId>,
}

#[derive(Default)]
struct Stripe {
    lock: Mutex<()>,
    changed: Condvar,
}

pub struct EventService {
    events: Repo<Event>,
    participations: Repo<Participation>,
    auth: Arc<AuthService>,
    social: Arc<SocialService>,
    clock: Arc<dyn Clock>,
    notifier: Arc<dyn Notifier>,
    // Transitions on one event are serialized by the stripe it hashes to.
    stripes: Vec<Stripe>,
}

impl EventService {
    pub fn new(
        store: Arc<dyn Store>,
        auth: Arc<AuthService>,
        social: Arc<SocialService>,
        clock: Arc<dyn Clock>,
        notifier: Arc<dyn Notifier>,
    ) -> Self {
        EventService {
            events: Repo::new(store.clone(), Collection::Events),
            participations: Repo::new(store, Collection::Participations),
            auth,
            social,
            clock,
            notifier,
            stripes: (0..STRIPES).map(|_| Stripe::default()).collect(),
        }
    }

    fn stripe(&self, event: &EventId) -> &Stripe {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        event.hash(&mut h);
        &self.stripes[(h.finish() as usize) % STRIPES]
    }

    pub fn create_event(&self, host: &UserId, new_event: NewEvent) -> Result<Event, EventError> {
        let title = new_event.title.trim();
        if title.is_empty() || title.chars().count() > MAX_TITLE_CHARS {
            return Err(EventError::InvalidTitle);
        }
        if new_event.description.chars().count() > MAX_DESCRIPTION_CHARS {
            return Err(EventError::DescriptionTooLong);
        }
        if new_event.total.is_zero() {
            return Err(EventError::ZeroTotal);
        }
        if new_event.invitees.len() + 1 > MAX_MEMBERS {
            return Err(EventError::TooManyMembers);
        }
        let mut members = Vec::with_capacity(new_event.invitees.len() + 1);
        members.push(host.clone());
        for invitee in &new_event.invitees {
            if members.contains(invitee) {
                return Err(EventError::DuplicateInvitee);
            }
            members.push(invitee.clone());
        }
        for invitee in &new_event.invitees {
            if !self.social.are_friends(host, invitee)? {
                return Err(EventError::NotFriends(invitee.clone()));
            }
        }
        let shares = compute_shares(new_event.total, &new_event.rule, &members)?;

        let now = self.clock.now();
        let event = Event {
            id: EventId::generate(),
            host: host.clone(),
            title: title.to_owned(),
            description: new_event.description,
            total: new_event.total,
            rule: new_event.rule,
            members,
            shares,
            state: if new_event.invitees.is_empty() { EventState::Settled } else { EventState::Open },
            created_at: now,
        };
        self.events.insert(event.id.as_str(), event.clone())?;
        for entry in &event.shares.entries {
            let is_host = &entry.member == host;
            self.participations.insert(
                &participation_id(&event.id, &entry.member),
                Participation {
                    event_id: event.id.clone(),
                    member: entry.member.clone(),
                    role: if is_host { Role::Host } else { Role::Invitee },
                    status: if is_host { ParticipationStatus::HostAutoSettled } else { ParticipationStatus::Invited },
                    share: entry.share,
                    payment_id: None,
                    invitation: None,
                    pending_payment: None,
                    updated_at: now,
                },
            )?;
        }
        // Participations exist before any invitation is visible, so an
        // invitee reacting to the push finds a consistent event.
        for invitee in &new_event.invitees {
            let message = self.social.post_invitation(host, invitee, &event.id)?;
            self.participations.modify(&participation_id(&event.id, invitee), |p| {
                Ok::<_, EventError>(Some(Participation { invitation: Some(message.id.clone()), ..p.clone() }))
            })?;
        }
        log::info!("event {} created by {} with {} members", event.id, host, event.members.len());
        Ok(event)
    }

    pub fn event(&self, id: &EventId) -> Result<Event, EventError> {
        Ok(self.events.get(id.as_str())?.ok_or(EventError::UnknownEvent)?.value)
    }

    pub fn participation(&self, event: &EventId, member: &UserId) -> Result<Option<Participation>, EventError> {
        Ok(self.participations.get(&participation_id(event, member))?.map(|p| p.value))
    }

    pub fn participations(&self, event: &EventId) -> Result<Vec<Participation>, EventError> {
        Ok(self
            .participations
            .query(schema::PARTICIPATION_EVENT, event.as_str())?
            .into_iter()
            .map(|p| p.value)
            .collect())
    }

    pub fn all_participations(&self) -> Result<Vec<Participation>, EventError> {
        Ok(self.participations.scan()?.into_iter().map(|p| p.value).collect())
    }

    pub fn respond_invitation(&self, caller: &UserId, event_id: &EventId, accept: bool) -> Result<Participation, EventError> {
        let stripe = self.stripe(event_id);
        let guard = stripe.lock.lock();
        let event = self.event(event_id)?;
        let current = self.invitee_participation(event_id, caller)?;
        if current.value.status != ParticipationStatus::Invited {
            return Err(EventError::AlreadyResponded);
        }
        if event.state != EventState::Open {
            return Err(EventError::EventNotOpen);
        }
        let status = if accept { ParticipationStatus::Confirmed } else { ParticipationStatus::Declined };
        let updated = self
            .participations
            .replace(&current, Participation { status, updated_at: self.clock.now(), ..current.value.clone() })?
            .value;
        if let Some(message) = &updated.invitation {
            match self.social.resolve_invitation(message, accept) {
                Ok(_) | Err(SocialError::InvitationResolved) => {}
                Err(e) => return Err(e.into()),
            }
        }
        let event = self.settle_if_done(event)?;
        drop(guard);
        self.broadcast(&event);
        Ok(updated)
    }

    fn invitee_participation(&self, event: &EventId, caller: &UserId) -> Result<Versioned<Participation>, EventError> {
        match self.participations.get(&participation_id(event, caller))? {
            Some(p) if p.value.role == Role::Invitee => Ok(p),
            _ => Err(EventError::NotInvitee),
        }
    }

    // Caller holds the event's stripe lock.
    fn settle_if_done(&self, event: Event) -> Result<Event, EventError> {
        if event.state != EventState::Open {
            return Ok(event);
        }
        if !self.participations(&event.id)?.iter().all(|p| p.status.is_final()) {
            return Ok(event);
        }
        let settled = self.events.modify(event.id.as_str(), |e| {
            if e.state != EventState::Open {
                return Ok::<_, EventError>(None);
            }
            Ok(Some(Event { state: EventState::Settled, ..e.clone() }))
        })?;
        let event = settled.ok_or(EventError::UnknownEvent)?.value;
        log::info!("event {} settled", event.id);
        Ok(event)
    }

    fn broadcast(&self, event: &Event) {
        for member in &event.members {
            self.notifier.notify(member, Notification::EventUpdate(event.clone()));
        }
    }

    /// Events for the caller's homepage, newest first: shares they have
    /// confirmed but not yet paid, and open events they host.
    pub fn list_home_events(&self, caller: &UserId) -> Result<Vec<HomeEntry>, EventError> {
        let mut entries = Vec::new();
        for p in self.participations.query(schema::PARTICIPATION_MEMBER, caller.as_str())? {
            let p = p.value;
            let wanted = match p.role {
                Role::Invitee => p.status == ParticipationStatus::Confirmed,
                Role::Host => true,
            };
            if !wanted {
                continue;
            }
            let event = self.event(&p.event_id)?;
            let shown = match p.role {
                Role::Invitee => event.state != EventState::Cancelled,
                Role::Host => event.state == EventState::Open,
            };
            if shown {
                entries.push(HomeEntry {
                    event_id: event.id,
                    title: event.title,
                    role: p.role,
                    your_share: p.share,
                    your_status: p.status,
                    event_state: event.state,
                    created_at: event.created_at,
                });
            }
        }
        entries.sort_by(|a, b| b.created_at.cmp(&a.created_at).then_with(|| a.event_id.cmp(&b.event_id)));
        Ok(entries)
    }

    pub fn get_event_detail(&self, caller: &UserId, event_id: &EventId) -> Result<EventDetail, EventError> {
        let event = self.event(event_id)?;
        if !event.members.contains(caller) {
            return Err(EventError::NotMember);
        }
        let participations = self.participations(event_id)?;
        let mut members = Vec::with_capacity(event.members.len());
        let mut uncollected = Money::ZERO;
        for member in &event.members {
            let p = participations.iter().find(|p| &p.member == member).ok_or(EventError::NotMember)?;
            if p.status == ParticipationStatus::Declined {
                uncollected = uncollected.checked_add(p.share).expect("bounded by total");
            }
            members.push(MemberLine {
                user: self.auth.profile(member)?.public(),
                is_host: member == &event.host,
                share: p.share,
                status: p.status,
            });
        }
        let mine = participations.iter().find(|p| &p.member == caller).ok_or(EventError::NotMember)?;
        Ok(EventDetail {
            your_role: mine.role,
            your_share: mine.share,
            your_status: mine.status,
            can_pay: mine.status == ParticipationStatus::Confirmed && event.state == EventState::Open,
            uncollected,
            members,
            event,
        })
    }

    /// Marks a confirmed share as being paid by `payment`, returning the
    /// amount to charge. If another charge for the share is underway, waits
    /// for it to finish first.
    pub fn reserve_payment(&self, event_id: &EventId, payer: &UserId, payment: &PaymentId) -> Result<Money, EventError> {
        let stripe = self.stripe(event_id);
        let mut guard = stripe.lock.lock();
        let deadline = Instant::now() + RESERVATION_WAIT;
        loop {
            let event = self.event(event_id)?;
            let current = match self.participations.get(&participation_id(event_id, payer))? {
                Some(p) if p.value.role == Role::Invitee => p,
                Some(_) => return Err(EventError::NotInvitee),
                None => return Err(EventError::NotMember),
            };
            match current.value.status {
                ParticipationStatus::Paid => return Err(EventError::AlreadyPaid),
                ParticipationStatus::Confirmed => {}
                _ => return Err(EventError::NotConfirmed),
            }
            if event.state != EventState::Open {
                return Err(EventError::EventNotOpen);
            }
            if current.value.pending_payment.is_some() {
                if stripe.changed.wait_until(&mut guard, deadline).timed_out() {
                    return Err(EventError::PaymentInProgress);
                }
                continue;
            }
            let share = current.value.share;
            self.participations
                .replace(&current, Participation { pending_payment: Some(payment.clone()), ..current.value.clone() })?;
            return Ok(share);
        }
    }

    /// Drops a reservation made by `payment`, leaving the share payable.
    pub fn release_payment(&self, event_id: &EventId, payer: &UserId, payment: &PaymentId) -> Result<(), EventError> {
        let stripe = self.stripe(event_id);
        let guard = stripe.lock.lock();
        self.participations.modify(&participation_id(event_id, payer), |p| {
            if p.pending_payment.as_ref() != Some(payment) {
                return Ok::<_, EventError>(None);
            }
            Ok(Some(Participation { pending_payment: None, ..p.clone() }))
        })?;
        drop(guard);
        stripe.changed.notify_all();
        Ok(())
    }

    /// Records a successful payment of `payer`'s share.
    pub fn apply_payment(
        &self,
        event_id: &EventId,
        payer: &UserId,
        payment: &PaymentId,
        amount: Money,
    ) -> Result<Participation, EventError> {
        let stripe = self.stripe(event_id);
        let guard = stripe.lock.lock();
        let event = self.event(event_id)?;
        let now = self.clock.now();
        let updated = self
            .participations
            .modify(&participation_id(event_id, payer), |p| {
                if p.role != Role::Invitee {
                    return Err(EventError::NotInvitee);
                }
                if p.status != ParticipationStatus::Confirmed {
                    return Err(EventError::NotConfirmed);
                }
                if p.share != amount {
                    return Err(EventError::AmountMismatch { paid: amount, share: p.share });
                }
                Ok(Some(Participation {
                    status: ParticipationStatus::Paid,
                    payment_id: Some(payment.clone()),
                    pending_payment: None,
                    updated_at: now,
                    ..p.clone()
                }))
            })?
            .ok_or(EventError::NotMember)?
            .value;
        let event = self.settle_if_done(event)?;
        drop(guard);
        stripe.changed.notify_all();
        self.broadcast(&event);
        Ok(updated)
    }

    /// Host-only; allowed while the event is open and nothing has been paid.
    pub fn cancel_event(&self, caller: &UserId, event_id: &EventId) -> Result<Event, EventError> {
        let stripe = self.stripe(event_id);
        let guard = stripe.lock.lock();
        let current = self.events.get(event_id.as_str())?.ok_or(EventError::UnknownEvent)?;
        if &current.value.host != caller {
            return Err(if current.value.members.contains(caller) { EventError::NotHost } else { EventError::NotMember });
        }
        if current.value.state != EventState::Open {
            return Err(EventError::EventNotOpen);
        }
        let paying = self
            .participations(event_id)?
            .iter()
            .any(|p| p.status == ParticipationStatus::Paid || p.pending_payment.is_some());
        if paying {
            return Err(EventError::HasPayments);
        }
        let event = self
            .events
            .replace(&current, Event { state: EventState::Cancelled, ..current.value.clone() })?
            .value;
        drop(guard);
        self.broadcast(&event);
        Ok(event)
    }
}
