//! Share allocation for events.
//!
//! Every member receives `floor(total * w_i / W)`; the leftover units
//! (always fewer than the member count) go one each to the members with the
//! largest fractional remainder, earliest position first on ties. Equal is
//! the weighted rule with all weights equal.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::money::Money;

/// Weight sum of a valid weighted rule: one basis point is 0.01%.
pub const BASIS_POINTS_TOTAL: u32 = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitRule {
    Equal,
    /// One weight per member, in member order, in basis points.
    Weighted { weights: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleError {
    #[error("rule has {weights} weights for {members} members")]
    RuleLengthMismatch { weights: usize, members: usize },
    #[error("weights sum to {sum}, expected {BASIS_POINTS_TOTAL}")]
    RuleSumMismatch { sum: u64 },
    #[error("every weight is zero")]
    RuleAllZero,
    #[error("an event needs at least one member")]
    NoMembers,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareEntry<M> {
    pub member: M,
    pub share: Money,
}

/// Per-member dues, in the order the members were given.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareAllocation<M> {
    pub entries: Vec<ShareEntry<M>>,
}

impl<M: PartialEq> ShareAllocation<M> {
    pub fn share_of(&self, member: &M) -> Option<Money> {
        self.entries.iter().find(|e| &e.member == member).map(|e| e.share)
    }

    pub fn shares(&self) -> impl Iterator<Item = Money> + '_ {
        self.entries.iter().map(|e| e.share)
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|e| e.share.minor()).sum()
    }
}

pub fn validate_rule(rule: &SplitRule, member_count: usize) -> Result<&SplitRule, RuleError> {
    if member_count == 0 {
        return Err(RuleError::NoMembers);
    }
    if let SplitRule::Weighted { weights } = rule {
        if weights.len() != member_count {
            return Err(RuleError::RuleLengthMismatch { weights: weights.len(), members: member_count });
        }
        let sum: u64 = weights.iter().map(|&w| u64::from(w)).sum();
        if sum == 0 {
            return Err(RuleError::RuleAllZero);
        }
        if sum != u64::from(BASIS_POINTS_TOTAL) {
            return Err(RuleError::RuleSumMismatch { sum });
        }
    }
    Ok(rule)
}

/// Splits `total` across `members` under `rule`. The rule is validated
/// against the member list first.
pub fn compute_shares<M: Clone>(
    total: Money,
    rule: &SplitRule,
    members: &[M],
) -> Result<ShareAllocation<M>, RuleError> {
    validate_rule(rule, members.len())?;
    let weights: Vec<u128> = match rule {
        SplitRule::Equal => vec![1; members.len()],
        SplitRule::Weighted { weights } => weights.iter().map(|&w| u128::from(w)).collect(),
    };
    let shares = largest_remainder(total.minor(), &weights);
    let entries = members
        .iter()
        .zip(shares)
        .map(|(member, minor)| ShareEntry {
            member: member.clone(),
            // Each share is at most `total`, so it stays in range.
            share: Money::from_minor(minor).expect("share bounded by total"),
        })
        .collect();
    Ok(ShareAllocation { entries })
}

fn largest_remainder(total: u64, weights: &[u128]) -> Vec<u64> {
    let weight_sum: u128 = weights.iter().sum();
    let total = u128::from(total);
    let mut shares = Vec::with_capacity(weights.len());
    let mut remainders = Vec::with_capacity(weights.len());
    for (pos, &w) in weights.iter().enumerate() {
        let quota = total * w;
        shares.push((quota / weight_sum) as u64);
        // All quotas share the denominator, so numerators compare directly.
        remainders.push((quota % weight_sum, pos));
    }
    let floors: u64 = shares.iter().sum();
    let residual = (total as u64 - floors) as usize;
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, pos) in remainders.iter().take(residual) {
        shares[pos] += 1;
    }
    shares
}
