use std::fmt;
use std::iter::Sum;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest representable amount, in minor units.
pub const MAX_MINOR: u64 = 1_000_000_000_000;

/// A non-negative amount of the (single) ledger currency, in minor units.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct Money(u64);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MoneyError {
    #[error("amount has more than two fraction digits")]
    PrecisionExceeded,
    #[error("amount is negative")]
    NegativeAmount,
    #[error("not a decimal amount")]
    NotANumber,
    #[error("amount exceeds {MAX_MINOR} minor units")]
    Overflow,
}

impl Money {
    pub const ZERO: Money = Money(0);

    pub fn from_minor(minor: u64) -> Result<Self, MoneyError> {
        if minor > MAX_MINOR {
            return Err(MoneyError::Overflow);
        }
        Ok(Money(minor))
    }

    pub fn minor(self) -> u64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn checked_add(self, other: Money) -> Result<Money, MoneyError> {
        self.0
            .checked_add(other.0)
            .ok_or(MoneyError::Overflow)
            .and_then(Money::from_minor)
    }

    pub fn checked_sub(self, other: Money) -> Result<Money, MoneyError> {
        self.0
            .checked_sub(other.0)
            .map(Money)
            .ok_or(MoneyError::NegativeAmount)
    }

    /// Renders as `units.cc`, e.g. `12.34`.
    pub fn display(self) -> String {
        self.to_string()
    }
}

impl TryFrom<u64> for Money {
    type Error = MoneyError;

    fn try_from(value: u64) -> Result<Self, Self::Error> {
        Money::from_minor(value)
    }
}

impl From<Money> for u64 {
    fn from(m: Money) -> u64 {
        m.0
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

impl<'a> Sum<&'a Money> for Result<Money, MoneyError> {
    fn sum<I: Iterator<Item = &'a Money>>(mut iter: I) -> Self {
        iter.try_fold(Money::ZERO, |acc, m| acc.checked_add(*m))
    }
}

/// Parses decimal text such as `12.34`, `0.5` or `7` into minor units.
pub fn parse_money(text: &str) -> Result<Money, MoneyError> {
    let text = text.trim();
    if let Some(rest) = text.strip_prefix('-') {
        // "-0" is still a negative literal; reject it like any other sign.
        return if is_decimal(rest) {
            Err(MoneyError::NegativeAmount)
        } else {
            Err(MoneyError::NotANumber)
        };
    }
    if !is_decimal(text) {
        return Err(MoneyError::NotANumber);
    }
    let (whole, frac) = match text.split_once('.') {
        Some((w, f)) => (w, f),
        None => (text, ""),
    };
    if frac.len() > 2 {
        return Err(MoneyError::PrecisionExceeded);
    }
    let whole = whole.trim_start_matches('0');
    // 10^12 minor units is 10^10 major units: 11 digits at most.
    if whole.len() > 11 {
        return Err(MoneyError::Overflow);
    }
    let whole: u64 = if whole.is_empty() { 0 } else { whole.parse().map_err(|_| MoneyError::NotANumber)? };
    let mut cents: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| MoneyError::NotANumber)? };
    if frac.len() == 1 {
        cents *= 10;
    }
    let minor = whole
        .checked_mul(100)
        .and_then(|w| w.checked_add(cents))
        .ok_or(MoneyError::Overflow)?;
    Money::from_minor(minor)
}

fn is_decimal(s: &str) -> bool {
    let (whole, frac) = match s.split_once('.') {
        Some((w, f)) => (w, Some(f)),
        None => (s, None),
    };
    let digits = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
    match frac {
        None => !whole.is_empty() && digits(whole),
        Some(f) => (!whole.is_empty() || !f.is_empty()) && digits(whole) && digits(f) && !f.is_empty(),
    }
}

impl FromStr for Money {
    type Err = MoneyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_money(s)
    }
}
