//! Event-sequenced mark-to-market accounting for a fund and its accounts.
//!
//! Every fill price marks the fund and *every* account, including accounts
//! that received no part of the fill. The first fill only establishes the
//! mark. All arithmetic is exact: prices are integer minor units and P&L is
//! `position × price change`.

use std::collections::HashSet;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::money::Money;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("fill {seq}: quantity must be non-zero")]
    ZeroQuantity { seq: u64 },
    #[error("fill {seq}: price must be positive")]
    NonPositivePrice { seq: u64 },
    #[error("fill {seq}: day must be at least 1")]
    InvalidDay { seq: u64 },
    #[error("fill {seq}: sequence must increase (previous {prev})")]
    SeqOrder { seq: u64, prev: u64 },
    #[error("fill {seq}: day {day} precedes day {prev_day}")]
    DayOrder { seq: u64, day: u32, prev_day: u32 },
    #[error("allocation for fill {alloc_seq} presented with fill {fill_seq}")]
    FillMismatch { fill_seq: u64, alloc_seq: u64 },
    #[error("fill {seq}: allocation has {got} parts, expected {expected}")]
    WidthMismatch {
        seq: u64,
        expected: usize,
        got: usize,
    },
    #[error("fill {seq}: parts sum to {got}, fill quantity is {expected}")]
    SumMismatch { seq: u64, expected: i64, got: i64 },
    #[error("fill {seq}: account #{account} part {part} opposes fill quantity {qty}")]
    SignViolation {
        seq: u64,
        account: usize,
        part: i64,
        qty: i64,
    },
    #[error("{fills} fills but {allocations} allocations")]
    LengthMismatch { fills: usize, allocations: usize },
    #[error("at least one account is required")]
    NoAccounts,
    #[error("duplicate account id `{0}`")]
    DuplicateAccount(String),
    #[error("account `{0}` must have positive AUM")]
    NonPositiveAum(String),
}

/// One executed leg of a bunched order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fill {
    pub seq: u64,
    pub day: u32,
    pub price: Money,
    /// Signed contracts: buys positive, sells negative.
    pub qty: i64,
}

impl Fill {
    pub fn new(seq: u64, day: u32, price: Money, qty: i64) -> Result<Self, LedgerError> {
        if qty == 0 {
            return Err(LedgerError::ZeroQuantity { seq });
        }
        if !price.is_positive() {
            return Err(LedgerError::NonPositivePrice { seq });
        }
        if day == 0 {
            return Err(LedgerError::InvalidDay { seq });
        }
        Ok(Fill {
            seq,
            day,
            price,
            qty,
        })
    }

    pub fn is_buy(&self) -> bool {
        self.qty > 0
    }
}

/// Checks per-fill invariants plus strictly increasing `seq` and
/// non-decreasing `day`.
pub fn validate_fills(fills: &[Fill]) -> Result<(), LedgerError> {
    let mut prev: Option<&Fill> = None;
    for fill in fills {
        Fill::new(fill.seq, fill.day, fill.price, fill.qty)?;
        if let Some(p) = prev {
            if fill.seq <= p.seq {
                return Err(LedgerError::SeqOrder {
                    seq: fill.seq,
                    prev: p.seq,
                });
            }
            if fill.day < p.day {
                return Err(LedgerError::DayOrder {
                    seq: fill.seq,
                    day: fill.day,
                    prev_day: p.day,
                });
            }
        }
        prev = Some(fill);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AccountId(pub String);

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AccountId {
    fn from(s: &str) -> Self {
        AccountId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub id: AccountId,
    pub aum: Money,
}

impl Account {
    pub fn new(id: impl Into<String>, aum: Money) -> Self {
        Account {
            id: AccountId(id.into()),
            aum,
        }
    }
}

/// The participating accounts, in a fixed order, with their allocation
/// factors `aum_i / Σ aum` as exact rationals.
#[derive(Debug, Clone, PartialEq)]
pub struct AccountSet {
    accounts: Vec<Account>,
    alphas: Vec<BigRational>,
    total_aum: Money,
}

impl AccountSet {
    pub fn new(accounts: Vec<Account>) -> Result<Self, LedgerError> {
        if accounts.is_empty() {
            return Err(LedgerError::NoAccounts);
        }
        let mut seen = HashSet::new();
        for a in &accounts {
            if !seen.insert(&a.id) {
                return Err(LedgerError::DuplicateAccount(a.id.0.clone()));
            }
            if !a.aum.is_positive() {
                return Err(LedgerError::NonPositiveAum(a.id.0.clone()));
            }
        }
        let total_aum: Money = accounts.iter().map(|a| a.aum).sum();
        let total = BigInt::from(total_aum.minor());
        let alphas = accounts
            .iter()
            .map(|a| BigRational::new(BigInt::from(a.aum.minor()), total.clone()))
            .collect();
        Ok(AccountSet {
            accounts,
            alphas,
            total_aum,
        })
    }

    pub fn len(&self) -> usize {
        self.accounts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accounts.is_empty()
    }

    pub fn accounts(&self) -> &[Account] {
        &self.accounts
    }

    pub fn alphas(&self) -> &[BigRational] {
        &self.alphas
    }

    pub fn alpha(&self, i: usize) -> &BigRational {
        &self.alphas[i]
    }

    pub fn total_aum(&self) -> Money {
        self.total_aum
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.accounts.iter().position(|a| a.id.0 == id)
    }

    /// Account indices ordered by allocation factor, largest first; equal
    /// factors keep input order.
    pub fn by_size_desc(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            self.accounts[b]
                .aum
                .cmp(&self.accounts[a].aum)
                .then(a.cmp(&b))
        });
        order
    }
}

/// Per-account integer split of one fill, indexed like the [`AccountSet`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationVector {
    pub fill_seq: u64,
    pub parts: Vec<i64>,
}

impl AllocationVector {
    pub fn new(fill_seq: u64, parts: Vec<i64>) -> Self {
        AllocationVector { fill_seq, parts }
    }

    /// Sum preservation and sign admissibility against `fill`.
    pub fn check(&self, fill: &Fill, accounts: usize) -> Result<(), LedgerError> {
        if self.fill_seq != fill.seq {
            return Err(LedgerError::FillMismatch {
                fill_seq: fill.seq,
                alloc_seq: self.fill_seq,
            });
        }
        if self.parts.len() != accounts {
            return Err(LedgerError::WidthMismatch {
                seq: fill.seq,
                expected: accounts,
                got: self.parts.len(),
            });
        }
        if let Some((account, &part)) = self
            .parts
            .iter()
            .enumerate()
            .find(|(_, &p)| p != 0 && p.signum() != fill.qty.signum())
        {
            return Err(LedgerError::SignViolation {
                seq: fill.seq,
                account,
                part,
                qty: fill.qty,
            });
        }
        let got: i64 = self.parts.iter().sum();
        if got != fill.qty {
            return Err(LedgerError::SumMismatch {
                seq: fill.seq,
                expected: fill.qty,
                got,
            });
        }
        Ok(())
    }
}

/// Mark-to-market P&L of holding `net_position` while the price moves.
pub fn bucket_pnl(net_position: i64, prev_price: Money, price: Money) -> Money {
    (price - prev_price) * net_position
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountState {
    pub net_position: i64,
    pub cum_pnl: Money,
    pub last_bucket_pnl: Money,
}

impl AccountState {
    fn mark(&mut self, prev: Money, price: Money) {
        let pnl = bucket_pnl(self.net_position, prev, price);
        self.last_bucket_pnl = pnl;
        self.cum_pnl += pnl;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerState {
    pub fund: AccountState,
    pub accounts: Vec<AccountState>,
    pub last_price: Option<Money>,
}

impl LedgerState {
    pub fn new(accounts: usize) -> Self {
        LedgerState {
            fund: AccountState::default(),
            accounts: vec![AccountState::default(); accounts],
            last_price: None,
        }
    }

    /// Marks every position at `price`. The first mark only records the price.
    pub fn mark(&mut self, price: Money) {
        if let Some(prev) = self.last_price {
            self.fund.mark(prev, price);
            for a in &mut self.accounts {
                a.mark(prev, price);
            }
        }
        self.last_price = Some(price);
    }

    /// A copy of this state marked at `price`, positions untouched.
    pub fn marked(&self, price: Money) -> LedgerState {
        let mut next = self.clone();
        next.mark(price);
        next
    }

    /// Marks at the fill price, then books the allocation. A rejected
    /// allocation leaves the state unchanged.
    pub fn apply_fill(&mut self, fill: &Fill, alloc: &AllocationVector) -> Result<(), LedgerError> {
        alloc.check(fill, self.accounts.len())?;
        self.mark(fill.price);
        self.fund.net_position += fill.qty;
        for (state, part) in self.accounts.iter_mut().zip(&alloc.parts) {
            state.net_position += part;
        }
        Ok(())
    }

    /// Fund position and P&L equal the account sums.
    pub fn identities_hold(&self) -> bool {
        let np: i64 = self.accounts.iter().map(|a| a.net_position).sum();
        let pnl: Money = self.accounts.iter().map(|a| a.cum_pnl).sum();
        np == self.fund.net_position && pnl == self.fund.cum_pnl
    }

    pub fn positions(&self) -> Vec<i64> {
        self.accounts.iter().map(|a| a.net_position).collect()
    }
}

/// One leg (fund or account) of a trajectory row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegRow {
    pub qty: i64,
    pub net_position: i64,
    /// `None` on the first fill, which has no prior mark.
    pub bucket_pnl: Option<Money>,
    pub cum_pnl: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub seq: u64,
    pub day: u32,
    pub price: Money,
    pub fund: LegRow,
    pub accounts: Vec<LegRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
}

impl Trajectory {
    pub fn terminal(&self) -> Option<&TrajectoryRow> {
        self.rows.last()
    }
}

fn leg(state: &AccountState, qty: i64, first: bool) -> LegRow {
    LegRow {
        qty,
        net_position: state.net_position,
        bucket_pnl: (!first).then_some(state.last_bucket_pnl),
        cum_pnl: state.cum_pnl,
    }
}

fn row(fill: &Fill, state: &LedgerState, parts: &[i64], first: bool) -> TrajectoryRow {
    TrajectoryRow {
        seq: fill.seq,
        day: fill.day,
        price: fill.price,
        fund: leg(&state.fund, fill.qty, first),
        accounts: state
            .accounts
            .iter()
            .zip(parts)
            .map(|(a, &q)| leg(a, q, first))
            .collect(),
    }
}

/// Replays a fixed allocation sequence through a fresh ledger.
pub fn replay(
    fills: &[Fill],
    allocations: &[AllocationVector],
    accounts: &AccountSet,
) -> Result<Trajectory, LedgerError> {
    if fills.len() != allocations.len() {
        return Err(LedgerError::LengthMismatch {
            fills: fills.len(),
            allocations: allocations.len(),
        });
    }
    validate_fills(fills)?;
    let mut state = LedgerState::new(accounts.len());
    let mut rows = Vec::with_capacity(fills.len());
    for (i, (fill, alloc)) in fills.iter().zip(allocations).enumerate() {
        state.apply_fill(fill, alloc)?;
        rows.push(row(fill, &state, &alloc.parts, i == 0));
    }
    Ok(Trajectory { rows })
}

/// Fund-only trajectory; account legs are empty.
pub fn fund_trajectory(fills: &[Fill]) -> Vec<TrajectoryRow> {
    let mut state = LedgerState::new(0);
    fills
        .iter()
        .enumerate()
        .map(|(i, fill)| {
            state.mark(fill.price);
            state.fund.net_position += fill.qty;
            row(fill, &state, &[], i == 0)
        })
        .collect()
}

/// Realized cash of a fill stream: sell notional minus buy notional.
pub fn cash_flow(legs: impl IntoIterator<Item = (i64, Money)>) -> Money {
    legs.into_iter().map(|(qty, price)| -(price * qty)).sum()
}
