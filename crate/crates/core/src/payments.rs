//! Linked cards and share payments.
//!
//! Card numbers only pass through [`PaymentService::add_card`]: they are
//! checked, handed to the gateway for a token and dropped. Only the last four
//! digits are kept.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration as StdDuration;

use chrono::{DateTime, Datelike, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::events::{EventError, EventService};
use crate::ids::{CardId, EventId, PaymentId, UserId};
use crate::money::Money;
use crate::repo::Repo;
use crate::schema;
use crate::storage::{Collection, Store, StoreError};

pub const MAX_CARDS: usize = 10;

#[derive(Debug, Error)]
pub enum PaymentError {
    #[error("card number must be 13-19 digits")]
    InvalidPan,
    #[error("card number fails the checksum")]
    LuhnFailure,
    #[error("security code must be 3 or 4 digits")]
    InvalidCvv,
    #[error("expiry month must be 1-12 and the year four digits")]
    InvalidExpiry,
    #[error("card has expired")]
    ExpiredCard,
    #[error("card holder name must be 1-50 characters")]
    InvalidHolderName,
    #[error("gateway rejected the card: {0}")]
    GatewayRejected(String),
    #[error("at most {MAX_CARDS} cards can be linked")]
    TooManyCards,
    #[error("unknown card")]
    UnknownCard,
    #[error("card belongs to another user")]
    NotOwner,
    #[error("share is already paid")]
    AlreadyPaid,
    #[error("share is not awaiting payment")]
    NotConfirmed,
    #[error("payment declined: {0}")]
    GatewayDeclined(String),
    #[error("payment gateway unavailable: {0}")]
    GatewayUnavailable(String),
    #[error(transparent)]
    Event(EventError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl From<EventError> for PaymentError {
    fn from(e: EventError) -> Self {
        match e {
            EventError::AlreadyPaid => PaymentError::AlreadyPaid,
            EventError::NotConfirmed => PaymentError::NotConfirmed,
            EventError::Store(s) => PaymentError::Store(s),
            other => PaymentError::Event(other),
        }
    }
}

/// Opaque reference the gateway issues for a card.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GatewayToken(pub String);

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct CardExpiry {
    pub month: u32,
    pub year: i32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ChargeOutcome {
    Succeeded { gateway_ref: String },
    Declined { reason: String },
    TransportError { detail: String },
}

/// The payment rail. Implementations must be safe to call concurrently and
/// may block.
pub trait GatewayClient: Send + Sync {
    fn tokenize(&self, pan: &str, expiry: CardExpiry, holder: &str) -> Result<GatewayToken, String>;
    fn charge(&self, token: &GatewayToken, amount: Money, idempotency_key: &str) -> ChargeOutcome;
}

/// Deterministic in-process gateway. Tokenizing accepts any card; a charge
/// is declined iff the card number ended in `0002`.
pub struct MockGateway {
    available: AtomicBool,
    delay: Mutex<StdDuration>,
    charges: AtomicUsize,
}

pub const MOCK_DECLINE_SUFFIX: &str = "0002";

impl Default for MockGateway {
    fn default() -> Self {
        MockGateway { available: AtomicBool::new(true), delay: Mutex::new(StdDuration::ZERO), charges: AtomicUsize::new(0) }
    }
}

impl MockGateway {
    pub fn set_available(&self, available: bool) {
        self.available.store(available, Ordering::SeqCst);
    }

    /// Makes each charge block for `delay`.
    pub fn set_delay(&self, delay: StdDuration) {
        *self.delay.lock() = delay;
    }

    /// Charges that reached the gateway, whatever their outcome.
    pub fn charge_count(&self) -> usize {
        self.charges.load(Ordering::SeqCst)
    }
}

impl GatewayClient for MockGateway {
    fn tokenize(&self, pan: &str, _expiry: CardExpiry, _holder: &str) -> Result<GatewayToken, String> {
        if !self.available.load(Ordering::SeqCst) {
            return Err("gateway offline".into());
        }
        let last4 = &pan[pan.len().saturating_sub(4)..];
        Ok(GatewayToken(format!("tok-{last4}-{}", uuid::Uuid::new_v4())))
    }

    fn charge(&self, token: &GatewayToken, _amount: Money, _idempotency_key: &str) -> ChargeOutcome {
        let delay = *self.delay.lock();
        if !delay.is_zero() {
            std::thread::sleep(delay);
        }
        if !self.available.load(Ordering::SeqCst) {
            return ChargeOutcome::TransportError { detail: "gateway offline".into() };
        }
        self.charges.fetch_add(1, Ordering::SeqCst);
        let suffix = token.0.strip_prefix("tok-").and_then(|rest| rest.get(..4));
        if suffix == Some(MOCK_DECLINE_SUFFIX) {
            ChargeOutcome::Declined { reason: "card declined".into() }
        } else {
            ChargeOutcome::Succeeded { gateway_ref: format!("ch-{}", uuid::Uuid::new_v4()) }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Card {
    pub id: CardId,
    pub owner: UserId,
    /// `**** **** **** dddd`
    pub masked_pan: String,
    pub expiry_month: u32,
    pub expiry_year: i32,
    pub holder_name: String,
    pub gateway_token: GatewayToken,
    pub created_at: DateTime<Utc>,
}

#[derive(Clone)]
pub struct NewCard {
    pub pan: String,
    pub expiry_month: u32,
    pub expiry_year: i32,
    pub holder_name: String,
    pub cvv: String,
}

impl std::fmt::Debug for NewCard {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NewCard")
            .field("pan", &mask(&self.pan))
            .field("expiry_month", &self.expiry_month)
            .field("expiry_year", &self.expiry_year)
            .finish_non_exhaustive()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaymentState {
    Succeeded,
    Declined,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payment {
    pub id: PaymentId,
    pub event_id: EventId,
    pub payer: UserId,
    pub card_id: CardId,
    pub amount: Money,
    pub state: PaymentState,
    pub gateway_ref: Option<String>,
    pub decline_reason: Option<String>,
    pub created_at: DateTime<Utc>,
    /// `event|payer`
    pub idempotency_key: String,
    /// Same as the idempotency key, on Succeeded payments only; backs the
    /// storage-level guarantee of one success per share.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    success_key: Option<String>,
}

pub fn idempotency_key(event: &EventId, payer: &UserId) -> String {
    format!("{event}|{payer}")
}

/// Deliberate crash sites for recovery testing.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum FailPoint {
    /// Abort the process after a successful payment is stored but before
    /// the share is marked paid.
    CrashAfterPaymentRecord,
}

pub struct PaymentService {
    cards: Repo<Card>,
    payments: Repo<Payment>,
    events: Arc<EventService>,
    gateway: Arc<dyn GatewayClient>,
    clock: Arc<dyn Clock>,
    card_lock: Mutex<()>,
    fail_point: Option<FailPoint>,
}

impl PaymentService {
    pub fn new(
        store: Arc<dyn Store>,
        events: Arc<EventService>,
        gateway: Arc<dyn GatewayClient>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        PaymentService {
            cards: Repo::new(store.clone(), Collection::Cards),
            payments: Repo::new(store, Collection::Payments),
            events,
            gateway,
            clock,
            card_lock: Mutex::new(()),
            fail_point: None,
        }
    }

    pub fn with_fail_point(mut self, fail_point: Option<FailPoint>) -> Self {
        self.fail_point = fail_point;
        self
    }

    pub fn add_card(&self, caller: &UserId, card: NewCard) -> Result<Card, PaymentError> {
        let pan: String = card.pan.chars().filter(|c| !c.is_whitespace() && *c != '-').collect();
        if !(13..=19).contains(&pan.len()) || !pan.bytes().all(|b| b.is_ascii_digit()) {
            return Err(PaymentError::InvalidPan);
        }
        if !luhn_valid(&pan) {
            return Err(PaymentError::LuhnFailure);
        }
        if !(3..=4).contains(&card.cvv.len()) || !card.cvv.bytes().all(|b| b.is_ascii_digit()) {
            return Err(PaymentError::InvalidCvv);
        }
        if !(1..=12).contains(&card.expiry_month) || !(1000..=9999).contains(&card.expiry_year) {
            return Err(PaymentError::InvalidExpiry);
        }
        let now = self.clock.now();
        if (card.expiry_year, card.expiry_month) < (now.year(), now.month()) {
            return Err(PaymentError::ExpiredCard);
        }
        let holder = card.holder_name.trim();
        if !(1..=50).contains(&holder.chars().count()) {
            return Err(PaymentError::InvalidHolderName);
        }

        let _guard = self.card_lock.lock();
        if self.cards.query(schema::CARD_OWNER, caller.as_str())?.len() >= MAX_CARDS {
            return Err(PaymentError::TooManyCards);
        }
        let expiry = CardExpiry { month: card.expiry_month, year: card.expiry_year };
        let token = self.gateway.tokenize(&pan, expiry, holder).map_err(PaymentError::GatewayRejected)?;
        let card = Card {
            id: CardId::generate(),
            owner: caller.clone(),
            masked_pan: mask(&pan),
            expiry_month: card.expiry_month,
            expiry_year: card.expiry_year,
            holder_name: holder.to_owned(),
            gateway_token: token,
            created_at: now,
        };
        self.cards.insert(card.id.as_str(), card.clone())?;
        Ok(card)
    }

    /// Newest first.
    pub fn list_cards(&self, caller: &UserId) -> Result<Vec<Card>, PaymentError> {
        let mut cards: Vec<Card> =
            self.cards.query(schema::CARD_OWNER, caller.as_str())?.into_iter().map(|c| c.value).collect();
        cards.sort_by(|a, b| b.created_at.cmp(&a.created_at).then_with(|| b.id.cmp(&a.id)));
        Ok(cards)
    }

    pub fn remove_card(&self, caller: &UserId, card: &CardId) -> Result<(), PaymentError> {
        let _guard = self.card_lock.lock();
        let found = self.cards.get(card.as_str())?.ok_or(PaymentError::UnknownCard)?;
        if &found.value.owner != caller {
            return Err(PaymentError::NotOwner);
        }
        match self.cards.delete(card.as_str()) {
            Ok(()) => Ok(()),
            Err(StoreError::NotFound { .. }) => Err(PaymentError::UnknownCard),
            Err(e) => Err(e.into()),
        }
    }

    /// Pays the caller's confirmed share of `event` with `card`.
    ///
    /// The share is reserved before the gateway is called, so of any number
    /// of concurrent calls for one share at most one reaches a successful
    /// charge; the rest see `AlreadyPaid` once it lands. A declined charge is
    /// recorded and leaves the share payable.
    pub fn pay_share(&self, caller: &UserId, event: &EventId, card: &CardId) -> Result<Payment, PaymentError> {
        let card = self.cards.get(card.as_str())?.ok_or(PaymentError::UnknownCard)?.value;
        if &card.owner != caller {
            return Err(PaymentError::NotOwner);
        }
        let payment_id = PaymentId::generate();
        let amount = self.events.reserve_payment(event, caller, &payment_id)?;
        let key = idempotency_key(event, caller);

        let outcome = self.gateway.charge(&card.gateway_token, amount, &key);
        let mut payment = Payment {
            id: payment_id.clone(),
            event_id: event.clone(),
            payer: caller.clone(),
            card_id: card.id.clone(),
            amount,
            state: PaymentState::Succeeded,
            gateway_ref: None,
            decline_reason: None,
            created_at: self.clock.now(),
            idempotency_key: key.clone(),
            success_key: None,
        };
        match outcome {
            ChargeOutcome::Succeeded { gateway_ref } => {
                payment.gateway_ref = Some(gateway_ref);
                payment.success_key = Some(key);
                if let Err(e) = self.payments.insert(payment.id.as_str(), payment.clone()) {
                    log::error!("charge {:?} succeeded but could not be recorded: {e}", payment.gateway_ref);
                    self.events.release_payment(event, caller, &payment_id)?;
                    return Err(match e {
                        StoreError::UniqueViolation { .. } => PaymentError::AlreadyPaid,
                        other => other.into(),
                    });
                }
                if self.fail_point == Some(FailPoint::CrashAfterPaymentRecord) {
                    log::error!("fail point hit: aborting after recording payment {}", payment.id);
                    std::process::abort();
                }
                self.events.apply_payment(event, caller, &payment_id, amount)?;
                Ok(payment)
            }
            ChargeOutcome::Declined { reason } => {
                payment.state = PaymentState::Declined;
                payment.decline_reason = Some(reason.clone());
                let id = payment.id.clone();
                let recorded = self.payments.insert(id.as_str(), payment);
                self.events.release_payment(event, caller, &payment_id)?;
                recorded?;
                Err(PaymentError::GatewayDeclined(reason))
            }
            ChargeOutcome::TransportError { detail } => {
                self.events.release_payment(event, caller, &payment_id)?;
                Err(PaymentError::GatewayUnavailable(detail))
            }
        }
    }

    /// The caller's payment attempts for `event`, oldest first.
    pub fn attempts(&self, caller: &UserId, event: &EventId) -> Result<Vec<Payment>, PaymentError> {
        let mut list: Vec<Payment> = self
            .payments
            .query(schema::PAYMENT_IDEMPOTENCY, &idempotency_key(event, caller))?
            .into_iter()
            .map(|p| p.value)
            .collect();
        list.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        Ok(list)
    }

    pub fn succeeded_payments(&self) -> Result<Vec<Payment>, PaymentError> {
        Ok(self.payments.query(schema::PAYMENT_STATE, "succeeded")?.into_iter().map(|p| p.value).collect())
    }
}

/// Mod-10 checksum over a digit string.
pub fn luhn_valid(digits: &str) -> bool {
    let mut sum = 0u32;
    for (i, b) in digits.bytes().rev().enumerate() {
        if !b.is_ascii_digit() {
            return false;
        }
        let mut d = u32::from(b - b'0');
        if i % 2 == 1 {
            d *= 2;
            if d > 9 {
                d -= 9;
            }
        }
        sum += d;
    }
    !digits.is_empty() && sum % 10 == 0
}

pub fn mask(pan: &str) -> String {
    let last4 = &pan[pan.len().saturating_sub(4)..];
    format!("**** **** **** {last4}")
}
