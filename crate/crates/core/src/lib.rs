//! Core of splitledger, a shared-expense service: people host events, split
//! the total between members, invite friends through chat and collect each
//! share through a card gateway.

pub mod auth;
pub mod clock;
pub mod events;
pub mod ids;
mod ledger;
pub mod money;
pub mod notify;
pub mod payments;
mod repo;
pub mod schema;
pub mod social;
pub mod split;
pub mod storage;

pub use ledger::{Ledger, LedgerOptions, RepairReport};
pub use money::{parse_money, Money, MoneyError};
pub use split::{compute_shares, validate_rule, ShareAllocation, SplitRule};
