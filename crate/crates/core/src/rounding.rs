//! Sum-preserving integer rounding of proportional targets.
//!
//! Each target is rounded half away from zero; if the rounded parts miss the
//! quantity, the parts whose residuals most favor the fix move by one unit
//! (largest remainder). Exact residual ties are broken by a
//! [`ResidualPolicy`].

use std::cmp::Ordering;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ledger::{AccountSet, AllocationVector, Fill};

/// Exact per-account shares `alpha_i × quantity`.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionalTarget {
    pub quantity: i64,
    pub targets: Vec<BigRational>,
}

pub fn fractional_targets(quantity: i64, accounts: &AccountSet) -> FractionalTarget {
    let q = BigRational::from_integer(BigInt::from(quantity));
    FractionalTarget {
        quantity,
        targets: accounts.alphas().iter().map(|a| a * &q).collect(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CycleUnit {
    #[default]
    Day,
    Invocation,
}

/// Which account absorbs a tied ±1 adjustment.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Larger accounts take the larger share.
    #[default]
    LargestAccount,
    /// The size ranking is rotated one place per cycle.
    Rotation {
        #[serde(default = "one")]
        every: u32,
        #[serde(default)]
        unit: CycleUnit,
    },
    /// A fresh seeded permutation of accounts per invocation.
    Random { seed: u64 },
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone)]
pub struct ResidualPolicy {
    kind: PolicyKind,
    invocations: u64,
    rng: Option<ChaCha8Rng>,
}

impl ResidualPolicy {
    pub fn new(kind: PolicyKind) -> Self {
        let rng = match &kind {
            PolicyKind::Random { seed } => Some(ChaCha8Rng::seed_from_u64(*seed)),
            _ => None,
        };
        ResidualPolicy {
            kind,
            invocations: 0,
            rng,
        }
    }

    pub fn largest_account() -> Self {
        Self::new(PolicyKind::LargestAccount)
    }

    pub fn kind(&self) -> &PolicyKind {
        &self.kind
    }

    /// Account indices in tie-break priority for one rounding invocation;
    /// earlier entries receive the larger magnitude on ties.
    pub fn priority(&mut self, accounts: &AccountSet, day: u32) -> Vec<usize> {
        let mut order = accounts.by_size_desc();
        let n = order.len();
        let call = self.invocations;
        self.invocations += 1;
        match &self.kind {
            PolicyKind::LargestAccount => {}
            PolicyKind::Rotation { every, unit } => {
                let every = u64::from((*every).max(1));
                let cursor = match unit {
                    CycleUnit::Day => u64::from(day.saturating_sub(1)) / every,
                    CycleUnit::Invocation => call / every,
                };
                order.rotate_left((cursor % n as u64) as usize);
            }
            PolicyKind::Random { .. } => {
                if let Some(rng) = self.rng.as_mut() {
                    order.shuffle(rng);
                }
            }
        }
        order
    }
}

/// Rounds `targets` to integers summing to `targets.quantity`, using
/// `priority` (see [`ResidualPolicy::priority`]) for exact ties.
pub fn round_with_priority(targets: &FractionalTarget, priority: &[usize]) -> Vec<i64> {
    let half = BigRational::new(1.into(), 2.into());
    // Work on magnitudes so "away from zero" is "up" and no part can cross zero.
    let magnitudes: Vec<BigRational> = targets.targets.iter().map(|t| t.abs()).collect();
    let parts: Vec<i64> = magnitudes
        .iter()
        .map(|m| {
            (m + &half)
                .floor()
                .to_integer()
                .to_i64()
                .expect("part fits i64")
        })
        .collect();
    let residuals: Vec<BigRational> = magnitudes
        .iter()
        .zip(&parts)
        .map(|(m, &p)| m - BigRational::from_integer(BigInt::from(p)))
        .collect();
    fix_up(targets.quantity, parts, &residuals, priority)
}

/// Same result as [`round_with_priority`] on [`fractional_targets`], in
/// integers: every target is `a_i·q/T`, so residuals share the denominator `T`.
pub fn round_proportional(quantity: i64, accounts: &AccountSet, priority: &[usize]) -> Vec<i64> {
    let total = i128::from(accounts.total_aum().minor());
    let q = i128::from(quantity.abs());
    let mut parts = Vec::with_capacity(accounts.len());
    let mut residuals = Vec::with_capacity(accounts.len());
    for acct in accounts.accounts() {
        let num = i128::from(acct.aum.minor()) * q;
        let part = (2 * num + total) / (2 * total);
        parts.push(i64::try_from(part).expect("part fits i64"));
        residuals.push(num - part * total);
    }
    fix_up(quantity, parts, &residuals, priority)
}

/// Moves the parts with the most favorable residuals by one unit until the
/// magnitudes sum to `|quantity|`, then restores the sign.
fn fix_up<R: Ord>(
    quantity: i64,
    mut parts: Vec<i64>,
    residuals: &[R],
    priority: &[usize],
) -> Vec<i64> {
    let n = parts.len();
    let mut rank = vec![0usize; n];
    for (r, &i) in priority.iter().enumerate() {
        rank[i] = r;
    }
    let diff = quantity.abs() - parts.iter().sum::<i64>();
    let mut idx: Vec<usize> = (0..n).collect();
    match diff.cmp(&0) {
        Ordering::Greater => {
            idx.sort_by(|&a, &b| residuals[b].cmp(&residuals[a]).then(rank[a].cmp(&rank[b])));
            for &i in idx.iter().take(diff as usize) {
                parts[i] += 1;
            }
        }
        Ordering::Less => {
            idx.sort_by(|&a, &b| residuals[a].cmp(&residuals[b]).then(rank[b].cmp(&rank[a])));
            for &i in idx.iter().take((-diff) as usize) {
                parts[i] -= 1;
            }
        }
        Ordering::Equal => {}
    }
    let sign = quantity.signum();
    parts.iter().map(|p| p * sign).collect()
}

pub fn round_sum_preserving(
    targets: &FractionalTarget,
    accounts: &AccountSet,
    policy: &mut ResidualPolicy,
    day: u32,
) -> Vec<i64> {
    let priority = policy.priority(accounts, day);
    round_with_priority(targets, &priority)
}

pub fn allocate_fill_proportional(
    fill: &Fill,
    accounts: &AccountSet,
    policy: &mut ResidualPolicy,
) -> AllocationVector {
    let priority = policy.priority(accounts, fill.day);
    AllocationVector::new(fill.seq, round_proportional(fill.qty, accounts, &priority))
}
