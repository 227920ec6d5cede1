//! Whole-blotter allocation methods: per-fill proportional rounding, HPHA
//! (highest prices to the largest accounts, batched per day and side) and
//! APS (per-day average pricing).

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::four::{self, FourConfig};
use crate::ledger::{validate_fills, AccountSet, AllocationVector, Fill, LedgerError, LedgerState};
use crate::money::Money;
use crate::rounding::{allocate_fill_proportional, round_proportional, ResidualPolicy};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MethodError {
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("day batch is empty")]
    EmptyBatch,
    #[error("day batch mixes day {0} and day {1}")]
    MixedDays(u32, u32),
    #[error("unknown method `{0}` (expected simple, hpha, aps or four)")]
    UnknownMethod(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Simple,
    Hpha,
    Aps,
    Four,
}

impl MethodKind {
    pub const ALL: [MethodKind; 4] = [
        MethodKind::Simple,
        MethodKind::Hpha,
        MethodKind::Aps,
        MethodKind::Four,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Simple => "simple",
            MethodKind::Hpha => "hpha",
            MethodKind::Aps => "aps",
            MethodKind::Four => "four",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = MethodError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MethodKind::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| MethodError::UnknownMethod(s.to_string()))
    }
}

/// How a method states its cumulative P&L.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PnlBasis {
    /// Sum of bucket P&L; open positions are marked at the last event price.
    MarkToMarket,
    /// Sell notional minus buy notional; open positions carry no P&L.
    Realized,
}

/// Terminal position and P&L (major currency units) of one account or the fund.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub position: i64,
    /// P&L on the method's own [`PnlBasis`].
    pub cum_pnl: BigRational,
    /// P&L with any open position marked at the final event price.
    pub marked_pnl: BigRational,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buy,
    Sell,
}

/// Per-account quantities of one day's side, all at the average price.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchAllocation {
    pub day: u32,
    pub side: Side,
    pub avg_price: BigRational,
    pub parts: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Allocations {
    PerFill(Vec<AllocationVector>),
    PerBatch(Vec<BatchAllocation>),
}

/// Squared divergence after a fill (or at a day end for batch methods).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DivergencePoint {
    pub seq: u64,
    pub q: BigRational,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodResult {
    pub method: MethodKind,
    pub basis: PnlBasis,
    pub allocations: Allocations,
    pub fund: Outcome,
    pub accounts: Vec<Outcome>,
    pub divergence: Vec<DivergencePoint>,
}

impl MethodResult {
    pub fn positions(&self) -> Vec<i64> {
        self.accounts.iter().map(|a| a.position).collect()
    }

    pub fn cum_pnls(&self) -> Vec<BigRational> {
        self.accounts.iter().map(|a| a.cum_pnl.clone()).collect()
    }

    /// Terminal squared divergence on marked P&L.
    pub fn terminal_q(&self, accounts: &AccountSet) -> BigRational {
        let marked: Vec<BigRational> = self.accounts.iter().map(|a| a.marked_pnl.clone()).collect();
        four::squared_gap(&self.fund.marked_pnl, &marked, accounts)
    }

    /// Σ_i |r − r_i| on marked P&L.
    pub fn terminal_abs_return_gap(&self, accounts: &AccountSet) -> BigRational {
        let total = accounts.total_aum().to_ratio();
        let fund_r = &self.fund.marked_pnl / &total;
        self.accounts
            .iter()
            .zip(accounts.accounts())
            .map(|(o, a)| {
                let d = &fund_r - &o.marked_pnl / a.aum.to_ratio();
                if d < BigRational::zero() {
                    -d
                } else {
                    d
                }
            })
            .fold(BigRational::zero(), |acc, d| acc + d)
    }

    /// Position and P&L sums across accounts match the fund on both bases.
    pub fn identities_hold(&self) -> bool {
        let np: i64 = self.accounts.iter().map(|a| a.position).sum();
        let cum = self
            .accounts
            .iter()
            .fold(BigRational::zero(), |s, a| s + &a.cum_pnl);
        let marked = self
            .accounts
            .iter()
            .fold(BigRational::zero(), |s, a| s + &a.marked_pnl);
        np == self.fund.position && cum == self.fund.cum_pnl && marked == self.fund.marked_pnl
    }
}

/// Whether a run records Q after every fill (or day, for batch methods) or
/// only the terminal state.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Trace {
    #[default]
    Full,
    Terminal,
}

/// Chooses the split of one fill given the ledger state before it.
pub trait FillAllocator {
    fn allocate(
        &mut self,
        fill: &Fill,
        state: &LedgerState,
        accounts: &AccountSet,
    ) -> AllocationVector;
}

/// Plain proportional rounding of each fill.
pub struct Proportional {
    pub policy: ResidualPolicy,
}

impl FillAllocator for Proportional {
    fn allocate(
        &mut self,
        fill: &Fill,
        _state: &LedgerState,
        accounts: &AccountSet,
    ) -> AllocationVector {
        allocate_fill_proportional(fill, accounts, &mut self.policy)
    }
}

fn money_outcome(position: i64, pnl: Money) -> Outcome {
    Outcome {
        position,
        cum_pnl: pnl.to_ratio(),
        marked_pnl: pnl.to_ratio(),
    }
}

fn ledger_q(state: &LedgerState, accounts: &AccountSet) -> BigRational {
    let pnl: Vec<BigRational> = state
        .accounts
        .iter()
        .map(|a| a.cum_pnl.to_ratio())
        .collect();
    four::squared_gap(&state.fund.cum_pnl.to_ratio(), &pnl, accounts)
}

/// Drives a [`FillAllocator`] through the blotter, booking each split.
pub fn run_per_fill(
    method: MethodKind,
    fills: &[Fill],
    accounts: &AccountSet,
    allocator: &mut dyn FillAllocator,
) -> Result<MethodResult, MethodError> {
    run_per_fill_traced(method, fills, accounts, allocator, Trace::Full)
}

pub fn run_per_fill_traced(
    method: MethodKind,
    fills: &[Fill],
    accounts: &AccountSet,
    allocator: &mut dyn FillAllocator,
    trace: Trace,
) -> Result<MethodResult, MethodError> {
    validate_fills(fills)?;
    let mut state = LedgerState::new(accounts.len());
    let mut allocations = Vec::with_capacity(fills.len());
    let mut divergence = Vec::with_capacity(fills.len());
    for fill in fills {
        let alloc = allocator.allocate(fill, &state, accounts);
        state.apply_fill(fill, &alloc)?;
        if trace == Trace::Full {
            divergence.push(DivergencePoint {
                seq: fill.seq,
                q: ledger_q(&state, accounts),
            });
        }
        allocations.push(alloc);
    }
    Ok(MethodResult {
        method,
        basis: PnlBasis::MarkToMarket,
        allocations: Allocations::PerFill(allocations),
        fund: money_outcome(state.fund.net_position, state.fund.cum_pnl),
        accounts: state
            .accounts
            .iter()
            .map(|a| money_outcome(a.net_position, a.cum_pnl))
            .collect(),
        divergence,
    })
}

pub fn run_simple_rounding(
    fills: &[Fill],
    accounts: &AccountSet,
    policy: ResidualPolicy,
) -> Result<MethodResult, MethodError> {
    run_per_fill(
        MethodKind::Simple,
        fills,
        accounts,
        &mut Proportional { policy },
    )
}

/// One trading day of fills split by side. Quantities are signed
/// (`sell_qty` ≤ 0); averages are quantity-weighted, in major units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DayBatch {
    pub day: u32,
    /// Buy fills, highest price first (equal prices in sequence order).
    pub buys: Vec<Fill>,
    pub sells: Vec<Fill>,
    pub buy_qty: i64,
    pub sell_qty: i64,
    pub avg_buy: Option<BigRational>,
    pub avg_sell: Option<BigRational>,
    /// Price of the day's last fill by sequence.
    pub close: Money,
    pub last_seq: u64,
}

fn average_price(side: &[Fill]) -> Option<BigRational> {
    let qty: i64 = side.iter().map(|f| f.qty).sum();
    if qty == 0 {
        return None;
    }
    let notional: i64 = side.iter().map(|f| f.qty * f.price.minor()).sum();
    let minor = BigRational::new(BigInt::from(notional), BigInt::from(qty));
    Some(minor / BigRational::from_integer(BigInt::from(crate::money::MINOR_PER_MAJOR)))
}

fn price_desc(a: &Fill, b: &Fill) -> std::cmp::Ordering {
    b.price.cmp(&a.price).then(a.seq.cmp(&b.seq))
}

pub fn batch_day(fills: &[Fill]) -> Result<DayBatch, MethodError> {
    let first = fills.first().ok_or(MethodError::EmptyBatch)?;
    if let Some(other) = fills.iter().find(|f| f.day != first.day) {
        return Err(MethodError::MixedDays(first.day, other.day));
    }
    let mut buys: Vec<Fill> = fills.iter().filter(|f| f.qty > 0).copied().collect();
    let mut sells: Vec<Fill> = fills.iter().filter(|f| f.qty < 0).copied().collect();
    buys.sort_by(price_desc);
    sells.sort_by(price_desc);
    let last = fills.iter().max_by_key(|f| f.seq).expect("non-empty");
    Ok(DayBatch {
        day: first.day,
        buy_qty: buys.iter().map(|f| f.qty).sum(),
        sell_qty: sells.iter().map(|f| f.qty).sum(),
        avg_buy: average_price(&buys),
        avg_sell: average_price(&sells),
        buys,
        sells,
        close: last.price,
        last_seq: last.seq,
    })
}

/// Splits an ordered blotter into consecutive day batches.
pub fn batch_days(fills: &[Fill]) -> Result<Vec<DayBatch>, MethodError> {
    fills
        .chunk_by(|a, b| a.day == b.day)
        .map(batch_day)
        .collect()
}

/// Per-account side totals, rounded from `alpha_i × total`.
fn side_totals(
    total: i64,
    day: u32,
    accounts: &AccountSet,
    policy: &mut ResidualPolicy,
) -> Vec<i64> {
    let priority = policy.priority(accounts, day);
    round_proportional(total, accounts, &priority)
}

/// HPHA: per day and side, fills sorted by price descending are consumed by
/// accounts in descending size order, each up to its rounded side total.
/// The resulting per-fill splits drive the ledger in original sequence.
/// `cum_pnl` is realized (sell minus buy notional).
pub fn run_hpha(
    fills: &[Fill],
    accounts: &AccountSet,
    policy: ResidualPolicy,
) -> Result<MethodResult, MethodError> {
    hpha(fills, accounts, policy, Trace::Full)
}

fn hpha(
    fills: &[Fill],
    accounts: &AccountSet,
    mut policy: ResidualPolicy,
    trace: Trace,
) -> Result<MethodResult, MethodError> {
    validate_fills(fills)?;
    let n = accounts.len();
    let mut parts: Vec<Vec<i64>> = vec![vec![0; n]; fills.len()];
    let index_of = |seq: u64| {
        fills
            .iter()
            .position(|f| f.seq == seq)
            .expect("fill in blotter")
    };
    let size_order = accounts.by_size_desc();
    for batch in batch_days(fills)? {
        for side in [&batch.buys, &batch.sells] {
            let total: i64 = side.iter().map(|f| f.qty).sum();
            if total == 0 {
                continue;
            }
            let sign = total.signum();
            let wants = side_totals(total, batch.day, accounts, &mut policy);
            let mut queue = side
                .iter()
                .map(|f| (index_of(f.seq), f.qty.abs()))
                .collect::<Vec<_>>();
            let mut head = 0;
            for &acct in &size_order {
                let mut need = wants[acct].abs();
                while need > 0 {
                    let (fi, left) = &mut queue[head];
                    let take = need.min(*left);
                    parts[*fi][acct] += take * sign;
                    *left -= take;
                    need -= take;
                    if *left == 0 {
                        head += 1;
                    }
                }
            }
        }
    }
    let allocations: Vec<AllocationVector> = fills
        .iter()
        .zip(parts)
        .map(|(f, p)| AllocationVector::new(f.seq, p))
        .collect();
    let mut replayed = run_per_fill_traced(
        MethodKind::Hpha,
        fills,
        accounts,
        &mut Fixed {
            allocations: allocations.iter(),
        },
        trace,
    )?;
    let mut cash = vec![Money::ZERO; n];
    for (fill, alloc) in fills.iter().zip(&allocations) {
        for (c, &q) in cash.iter_mut().zip(&alloc.parts) {
            *c += -(fill.price * q);
        }
    }
    let fund_cash: Money = fills.iter().map(|f| -(f.price * f.qty)).sum();
    replayed.basis = PnlBasis::Realized;
    replayed.fund.cum_pnl = fund_cash.to_ratio();
    for (o, c) in replayed.accounts.iter_mut().zip(cash) {
        o.cum_pnl = c.to_ratio();
    }
    Ok(replayed)
}

/// Replays a precomputed allocation sequence.
struct Fixed<'a> {
    allocations: std::slice::Iter<'a, AllocationVector>,
}

impl FillAllocator for Fixed<'_> {
    fn allocate(
        &mut self,
        _fill: &Fill,
        _state: &LedgerState,
        _accounts: &AccountSet,
    ) -> AllocationVector {
        self.allocations
            .next()
            .expect("one allocation per fill")
            .clone()
    }
}

/// Books a fixed allocation sequence on the mark-to-market basis. The
/// result is tagged `method` for reporting only.
pub fn run_replay(
    method: MethodKind,
    fills: &[Fill],
    allocations: &[AllocationVector],
    accounts: &AccountSet,
) -> Result<MethodResult, MethodError> {
    if fills.len() != allocations.len() {
        return Err(LedgerError::LengthMismatch {
            fills: fills.len(),
            allocations: allocations.len(),
        }
        .into());
    }
    run_per_fill(
        method,
        fills,
        accounts,
        &mut Fixed {
            allocations: allocations.iter(),
        },
    )
}

/// APS: every contract of a day's side is booked at that side's average
/// price; per-account quantities are the rounded `alpha_i × Q_B` and
/// `alpha_i × Q_S`. `cum_pnl` is realized at average prices; `marked_pnl`
/// adds open positions at the final fill price.
pub fn run_aps(
    fills: &[Fill],
    accounts: &AccountSet,
    policy: ResidualPolicy,
) -> Result<MethodResult, MethodError> {
    aps(fills, accounts, policy, Trace::Full)
}

fn aps(
    fills: &[Fill],
    accounts: &AccountSet,
    mut policy: ResidualPolicy,
    trace: Trace,
) -> Result<MethodResult, MethodError> {
    validate_fills(fills)?;
    let n = accounts.len();
    let zero = BigRational::zero;
    let mut cash: Vec<BigRational> = vec![zero(); n];
    let mut pos = vec![0i64; n];
    let mut fund_cash = zero();
    let mut fund_pos = 0i64;
    let mut batches = Vec::new();
    let mut divergence = Vec::new();
    let mut close = Money::ZERO;
    for batch in batch_days(fills)? {
        let sides = [
            (Side::Buy, batch.buy_qty, &batch.avg_buy),
            (Side::Sell, batch.sell_qty, &batch.avg_sell),
        ];
        for (side, total, avg) in sides {
            let Some(avg) = avg else { continue };
            let split = side_totals(total, batch.day, accounts, &mut policy);
            for i in 0..n {
                cash[i] -= avg * BigRational::from_integer(BigInt::from(split[i]));
                pos[i] += split[i];
            }
            fund_cash -= avg * BigRational::from_integer(BigInt::from(total));
            fund_pos += total;
            batches.push(BatchAllocation {
                day: batch.day,
                side,
                avg_price: avg.clone(),
                parts: split,
            });
        }
        close = batch.close;
        if trace == Trace::Terminal {
            continue;
        }
        let mark = |c: &BigRational, p: i64| {
            c + close.to_ratio() * BigRational::from_integer(BigInt::from(p))
        };
        let marked: Vec<BigRational> = cash.iter().zip(&pos).map(|(c, &p)| mark(c, p)).collect();
        divergence.push(DivergencePoint {
            seq: batch.last_seq,
            q: four::squared_gap(&mark(&fund_cash, fund_pos), &marked, accounts),
        });
    }
    let outcome = |c: &BigRational, p: i64| Outcome {
        position: p,
        cum_pnl: c.clone(),
        marked_pnl: c + close.to_ratio() * BigRational::from_integer(BigInt::from(p)),
    };
    Ok(MethodResult {
        method: MethodKind::Aps,
        basis: PnlBasis::Realized,
        allocations: Allocations::PerBatch(batches),
        fund: outcome(&fund_cash, fund_pos),
        accounts: cash.iter().zip(&pos).map(|(c, &p)| outcome(c, p)).collect(),
        divergence,
    })
}

/// Dispatches to a method by kind. `policy` seeds residual tie-breaking for
/// every method; FOUR also uses it for its base rounding.
pub fn run_method(
    method: MethodKind,
    fills: &[Fill],
    accounts: &AccountSet,
    policy: ResidualPolicy,
    four_config: &FourConfig,
) -> Result<MethodResult, MethodError> {
    run_method_traced(method, fills, accounts, policy, four_config, Trace::Full)
}

pub fn run_method_traced(
    method: MethodKind,
    fills: &[Fill],
    accounts: &AccountSet,
    policy: ResidualPolicy,
    four_config: &FourConfig,
    trace: Trace,
) -> Result<MethodResult, MethodError> {
    match method {
        MethodKind::Simple => {
            run_per_fill_traced(method, fills, accounts, &mut Proportional { policy }, trace)
        }
        MethodKind::Hpha => hpha(fills, accounts, policy, trace),
        MethodKind::Aps => aps(fills, accounts, policy, trace),
        MethodKind::Four => {
            let mut allocator = four::FourAllocator::new(four_config.clone(), policy);
            run_per_fill_traced(method, fills, accounts, &mut allocator, trace)
        }
    }
}
