//! FOUR (fair optimal unbiased rounding): per-fill choice of a
//! sum-preserving, sign-admissible integer split that minimizes
//! cross-account divergence.
//!
//! For account `i` with factor `alpha_i`, the P&L gap is
//! `D_i = PnL − PnL_i / alpha_i` and the position gap is
//! `E_i = np − np_i / alpha_i`; `Q = Σ D_i²`. Marking at the fill price makes
//! `Q` blind to the split of the fill itself, so candidates are scored by
//! their post-allocation position gap (`proportional` mode) or by `Q`
//! projected one probe move `h` ahead, `Σ (D_i + E_i·h)²` (`corrective`
//! mode). Remaining ties fall to the L1 distance from the fractional targets
//! and then to the lexicographically smallest split.
//!
//! Every score key is a separable convex function of the split, so the exact
//! minimum over the search box is found by marginal allocation rather than
//! enumeration; [`candidates`] provides the literal enumeration.

use std::cell::OnceCell;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::ledger::{AccountSet, AllocationVector, Fill, LedgerState};
use crate::methods::{run_per_fill, FillAllocator, MethodError, MethodKind, MethodResult};
use crate::money::Money;
use crate::rounding::{allocate_fill_proportional, ResidualPolicy};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMode {
    /// Minimize the post-allocation position gap `Σ w_i E_i²`.
    #[default]
    Proportional,
    /// Minimize the projected P&L gap `Σ w_i (D_i + E_i h)²`.
    Corrective,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchStrategy {
    /// Marginal allocation over the search box; same optimum as `Enumerate`.
    #[default]
    Exact,
    /// Score every candidate in the box.
    Enumerate,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightFrequency {
    #[default]
    PerFill,
    Weekly,
    Monthly,
    Quarterly,
}

impl WeightFrequency {
    /// Refresh period in trading days; `None` refreshes on every fill.
    pub fn period_days(self) -> Option<u32> {
        match self {
            WeightFrequency::PerFill => None,
            WeightFrequency::Weekly => Some(5),
            WeightFrequency::Monthly => Some(21),
            WeightFrequency::Quarterly => Some(63),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightConfig {
    pub enabled: bool,
    pub frequency: WeightFrequency,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FourConfig {
    /// L∞ radius of the search box around the base rounding.
    pub k: u32,
    pub mode: SearchMode,
    /// Fixed probe move `h`; by default the last price change, or 1% of the
    /// price when there is none.
    pub probe: Option<Money>,
    /// Above this many accounts the box search gives way to local search.
    pub nmax: usize,
    /// Local-search iteration cap; defaults to `N²`.
    pub max_iterations: Option<usize>,
    pub strategy: SearchStrategy,
    pub weights: WeightConfig,
}

impl Default for FourConfig {
    fn default() -> Self {
        FourConfig {
            k: 2,
            mode: SearchMode::Proportional,
            probe: None,
            nmax: 12,
            max_iterations: None,
            strategy: SearchStrategy::Exact,
            weights: WeightConfig::default(),
        }
    }
}

fn int(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

/// `D_i = fund − pnl_i / alpha_i` for every account.
pub fn pnl_gaps(
    fund: &BigRational,
    account_pnl: &[BigRational],
    accounts: &AccountSet,
) -> Vec<BigRational> {
    account_pnl
        .iter()
        .zip(accounts.alphas())
        .map(|(p, a)| fund - p / a)
        .collect()
}

/// `Σ_i (fund − pnl_i / alpha_i)²`.
pub fn squared_gap(
    fund: &BigRational,
    account_pnl: &[BigRational],
    accounts: &AccountSet,
) -> BigRational {
    pnl_gaps(fund, account_pnl, accounts)
        .into_iter()
        .fold(BigRational::zero(), |acc, d| acc + &d * &d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceState {
    /// `D_i`, major currency units.
    pub pnl_gap: Vec<BigRational>,
    /// `E_i`, contracts.
    pub position_gap: Vec<BigRational>,
    /// `Σ D_i²`.
    pub q: BigRational,
    pub fund_return: BigRational,
    pub account_returns: Vec<BigRational>,
}

impl DivergenceState {
    /// `Σ (r − r_i)²`, equal to `q / (Σ AUM)²`.
    pub fn q_return(&self) -> BigRational {
        self.account_returns
            .iter()
            .fold(BigRational::zero(), |acc, r| {
                let d = &self.fund_return - r;
                acc + &d * &d
            })
    }
}

pub fn divergence(state: &LedgerState, accounts: &AccountSet) -> DivergenceState {
    let fund = state.fund.cum_pnl.to_ratio();
    let pnl: Vec<BigRational> = state
        .accounts
        .iter()
        .map(|a| a.cum_pnl.to_ratio())
        .collect();
    let pnl_gap = pnl_gaps(&fund, &pnl, accounts);
    let np = int(state.fund.net_position);
    let position_gap = state
        .accounts
        .iter()
        .zip(accounts.alphas())
        .map(|(a, alpha)| &np - int(a.net_position) / alpha)
        .collect();
    let q = pnl_gap
        .iter()
        .fold(BigRational::zero(), |acc, d| acc + d * d);
    let fund_return = &fund / accounts.total_aum().to_ratio();
    let account_returns = pnl
        .iter()
        .zip(accounts.accounts())
        .map(|(p, a)| p / a.aum.to_ratio())
        .collect();
    DivergenceState {
        pnl_gap,
        position_gap,
        q,
        fund_return,
        account_returns,
    }
}

/// Softmax weights over per-account return gaps `δ_i = |r − r_i|`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReinforcementWeights {
    pub deltas: Vec<f64>,
    pub weights: Vec<f64>,
}

pub fn softmax(deltas: &[f64]) -> Vec<f64> {
    let max = deltas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = deltas.iter().map(|d| (d - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

impl ReinforcementWeights {
    pub fn from_deltas(deltas: Vec<f64>) -> Self {
        let weights = softmax(&deltas);
        ReinforcementWeights { deltas, weights }
    }
}

pub fn reinforcement_weights(state: &LedgerState, accounts: &AccountSet) -> ReinforcementWeights {
    let div = divergence(state, accounts);
    let deltas = div
        .account_returns
        .iter()
        .map(|r| (&div.fund_return - r).abs().to_f64().unwrap_or(0.0))
        .collect();
    ReinforcementWeights::from_deltas(deltas)
}

/// Holds weights constant between refreshes at the configured frequency.
#[derive(Debug, Clone)]
pub struct WeightSchedule {
    frequency: WeightFrequency,
    period: Option<u32>,
    current: Option<ReinforcementWeights>,
}

impl WeightSchedule {
    pub fn new(frequency: WeightFrequency) -> Self {
        WeightSchedule {
            frequency,
            period: None,
            current: None,
        }
    }

    pub fn frequency(&self) -> WeightFrequency {
        self.frequency
    }

    /// Weights in force for a fill on `day`, with `state` already marked at
    /// the fill price.
    pub fn weights_for(
        &mut self,
        day: u32,
        state: &LedgerState,
        accounts: &AccountSet,
    ) -> &ReinforcementWeights {
        let due = match self.frequency.period_days() {
            None => true,
            Some(days) => {
                let period = (day.max(1) - 1) / days;
                let due = self.period != Some(period);
                self.period = Some(period);
                due
            }
        };
        if due || self.current.is_none() {
            self.current = Some(reinforcement_weights(state, accounts));
        }
        self.current.as_ref().expect("weights computed")
    }
}

/// Ordered score of one candidate split; smaller is better.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Score {
    /// Primary, secondary and tertiary keys in comparison order.
    pub keys: [BigRational; 3],
    pub parts: Vec<i64>,
}

impl Score {
    pub fn primary(&self) -> &BigRational {
        &self.keys[0]
    }
}

/// Everything needed to score splits of one fill, taken after marking the
/// ledger at the fill price.
#[derive(Debug, Clone)]
pub struct ScoreContext {
    mode: SearchMode,
    fund_after: BigRational,
    positions: Vec<i64>,
    weights: Vec<BigRational>,
    probe: BigRational,
    fund_pnl: Money,
    pnl: Vec<Money>,
    // Rational per-account terms, only needed for whole-vector scoring.
    exact: OnceCell<Exact>,
    coeffs: Vec<Coeffs>,
    total_aum: BigInt,
    qty: i64,
}

#[derive(Debug, Clone)]
struct Exact {
    inv_alpha: Vec<BigRational>,
    gaps: Vec<BigRational>,
    targets: Vec<BigRational>,
}

/// An exact fraction kept unreduced; comparison cross-multiplies, so no gcd
/// is ever taken. The denominator is positive.
#[derive(Debug, Clone)]
struct Frac {
    num: BigInt,
    den: BigInt,
}

impl Frac {
    fn minus(&self, other: &Frac) -> Frac {
        Frac {
            num: &self.num * &other.den - &other.num * &self.den,
            den: &self.den * &other.den,
        }
    }

    fn zero() -> Frac {
        Frac {
            num: BigInt::zero(),
            den: BigInt::from(1),
        }
    }

    #[cfg(test)]
    fn to_ratio(&self) -> BigRational {
        BigRational::new(self.num.clone(), self.den.clone())
    }
}

impl PartialEq for Frac {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}

impl Eq for Frac {}

impl PartialOrd for Frac {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frac {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (&self.num * &other.den).cmp(&(&other.num * &self.den))
    }
}

/// Integer coefficients of one account's marginal increments, with money in
/// minor units, `a` the account AUM and `T` the total AUM (minor units), `F`
/// the fund position after the fill and `m` the account position after its
/// part:
///
/// * position key: `w·T·(T − 2·F·a + 2·m·T) / a²`
/// * projected key: `w·T·h·(c0 + m·c1) / (100·a²)` with `h` in major units
#[derive(Debug, Clone)]
struct Coeffs {
    a: BigInt,
    pos_num: BigInt,
    pos_const: BigInt,
    pos_slope: BigInt,
    pos_den: BigInt,
    proj_num: BigInt,
    proj_const: BigInt,
    proj_slope: BigInt,
    proj_den: BigInt,
}

/// The probe move `h`: configured, else the last price change, else 1% of
/// the fill price.
pub fn probe_move(config: &FourConfig, fill: &Fill, state: &LedgerState) -> BigRational {
    if let Some(p) = config.probe.filter(|p| p.is_positive()) {
        return p.to_ratio();
    }
    match state.last_price {
        Some(prev) if prev != fill.price => (fill.price - prev).abs().to_ratio(),
        _ => fill.price.to_ratio() / int(100),
    }
}

impl ScoreContext {
    /// `state` is the ledger before the fill; it is marked at the fill price
    /// here.
    pub fn new(
        fill: &Fill,
        state: &LedgerState,
        accounts: &AccountSet,
        config: &FourConfig,
        weights: Option<&ReinforcementWeights>,
    ) -> Self {
        let marked = state.marked(fill.price);
        Self::from_marked(fill, state, &marked, accounts, config, weights)
    }

    fn from_marked(
        fill: &Fill,
        state: &LedgerState,
        marked: &LedgerState,
        accounts: &AccountSet,
        config: &FourConfig,
        weights: Option<&ReinforcementWeights>,
    ) -> Self {
        let n = accounts.len();
        let weights: Vec<BigRational> = match weights {
            Some(w) => w
                .weights
                .iter()
                .map(|&x| BigRational::from_f64(x).unwrap_or_else(|| int(1)))
                .collect(),
            None => vec![int(1); n],
        };
        let probe = probe_move(config, fill, state);
        let fund_after = marked.fund.net_position + fill.qty;
        let total = BigInt::from(accounts.total_aum().minor());
        let coeffs = Self::coeffs(marked, accounts, &weights, &probe, fund_after, &total);
        ScoreContext {
            mode: config.mode,
            fund_after: int(fund_after),
            positions: marked.positions(),
            weights,
            probe,
            fund_pnl: marked.fund.cum_pnl,
            pnl: marked.accounts.iter().map(|a| a.cum_pnl).collect(),
            exact: OnceCell::new(),
            coeffs,
            total_aum: total,
            qty: fill.qty,
        }
    }

    fn exact(&self) -> &Exact {
        self.exact.get_or_init(|| {
            let fund = self.fund_pnl.to_ratio();
            let total = &self.total_aum;
            let inv_alpha: Vec<BigRational> = self
                .coeffs
                .iter()
                .map(|c| BigRational::new(total.clone(), c.a.clone()))
                .collect();
            let gaps = self
                .pnl
                .iter()
                .zip(&inv_alpha)
                .map(|(p, c)| &fund - p.to_ratio() * c)
                .collect();
            let targets = self
                .coeffs
                .iter()
                .map(|c| BigRational::new(&c.a * self.qty, total.clone()))
                .collect();
            Exact {
                inv_alpha,
                gaps,
                targets,
            }
        })
    }

    fn coeffs(
        marked: &LedgerState,
        accounts: &AccountSet,
        weights: &[BigRational],
        probe: &BigRational,
        fund_after: i64,
        total: &BigInt,
    ) -> Vec<Coeffs> {
        let (hn, hd) = (probe.numer(), probe.denom());
        let fund_pnl = BigInt::from(marked.fund.cum_pnl.minor());
        let f = BigInt::from(fund_after);
        let hundred = BigInt::from(100);
        accounts
            .accounts()
            .iter()
            .zip(&marked.accounts)
            .zip(weights)
            .map(|((acct, st), w)| {
                let a = BigInt::from(acct.aum.minor());
                let a2 = &a * &a;
                let (wn, wd) = (w.numer(), w.denom());
                let pnl = BigInt::from(st.cum_pnl.minor());
                // 100·a·hd·y = y0 − 100·m·T·hn, y the projected gap in major units.
                let y0 = (&fund_pnl * &a - &pnl * total) * hd + &hundred * &f * &a * hn;
                let t_hn = total * hn;
                Coeffs {
                    pos_num: wn * total,
                    pos_const: total - BigInt::from(2) * &f * &a,
                    pos_slope: BigInt::from(2) * total,
                    pos_den: wd * &a2,
                    proj_num: wn * &t_hn,
                    proj_const: &hundred * &t_hn - BigInt::from(2) * &y0,
                    proj_slope: BigInt::from(200) * &t_hn,
                    proj_den: &hundred * &a2 * hd * hd * wd,
                    a,
                }
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn pnl_gaps(&self) -> &[BigRational] {
        &self.exact().gaps
    }

    pub fn probe(&self) -> &BigRational {
        &self.probe
    }

    /// `E_i` after booking `part` to account `i`.
    fn position_gap(&self, i: usize, part: i64) -> BigRational {
        &self.fund_after - int(self.positions[i] + part) * &self.exact().inv_alpha[i]
    }

    fn order(
        &self,
        position: BigRational,
        projected: BigRational,
        l1: BigRational,
    ) -> [BigRational; 3] {
        match self.mode {
            SearchMode::Proportional => [position, projected, l1],
            SearchMode::Corrective => [projected, position, l1],
        }
    }

    /// Per-account contribution to each key.
    fn account_keys(&self, i: usize, part: i64) -> [BigRational; 3] {
        let e = self.position_gap(i, part);
        let x = self.exact();
        let y = &x.gaps[i] + &e * &self.probe;
        let w = &self.weights[i];
        let l1 = (int(part) - &x.targets[i]).abs();
        self.order(w * &e * &e, w * &y * &y, l1)
    }

    /// Key increments for raising account `i` from `part` to `part + 1`.
    fn increment(&self, i: usize, part: i64) -> [Frac; 3] {
        let c = &self.coeffs[i];
        let m = BigInt::from(self.positions[i] + part);
        let pos = Frac {
            num: &c.pos_num * (&c.pos_const + &m * &c.pos_slope),
            den: c.pos_den.clone(),
        };
        let proj = Frac {
            num: &c.proj_num * (&c.proj_const + &m * &c.proj_slope),
            den: c.proj_den.clone(),
        };
        let aq = &c.a * self.qty;
        let dist = |p: i64| (BigInt::from(p) * &self.total_aum - &aq).abs();
        let l1 = Frac {
            num: dist(part + 1) - dist(part),
            den: self.total_aum.clone(),
        };
        match self.mode {
            SearchMode::Proportional => [pos, proj, l1],
            SearchMode::Corrective => [proj, pos, l1],
        }
    }

    /// Reference form of [`Self::increment`] in reduced rationals.
    #[cfg(test)]
    fn marginal(&self, i: usize, part: i64) -> [BigRational; 3] {
        let e = self.position_gap(i, part);
        let x = self.exact();
        let c = &x.inv_alpha[i];
        let w = &self.weights[i];
        let ch = c * &self.probe;
        let y = &x.gaps[i] + &e * &self.probe;
        let two = int(2);
        let d_pos = w * c * (c - &two * &e);
        let d_proj = w * &ch * (&ch - &two * &y);
        let t = &x.targets[i];
        let d_l1 = (int(part + 1) - t).abs() - (int(part) - t).abs();
        self.order(d_pos, d_proj, d_l1)
    }

    pub fn score(&self, parts: &[i64]) -> Score {
        let mut keys = [
            BigRational::zero(),
            BigRational::zero(),
            BigRational::zero(),
        ];
        for (i, &p) in parts.iter().enumerate() {
            for (k, v) in keys.iter_mut().zip(self.account_keys(i, p)) {
                *k += v;
            }
        }
        Score {
            keys,
            parts: parts.to_vec(),
        }
    }
}

pub fn score(candidate: &AllocationVector, context: &ScoreContext) -> Score {
    context.score(&candidate.parts)
}

/// Per-account `[lo, hi]`: within `k` of the base, never opposite the fill.
pub fn search_bounds(qty: i64, base: &[i64], k: u32) -> Vec<(i64, i64)> {
    let k = i64::from(k);
    let (floor, ceil) = if qty > 0 { (0, qty) } else { (qty, 0) };
    base.iter()
        .map(|&b| ((b - k).max(floor), (b + k).min(ceil)))
        .collect()
}

fn enumerate_box(bounds: &[(i64, i64)], total: i64, out: &mut Vec<Vec<i64>>) {
    let n = bounds.len();
    let mut suffix_min = vec![0i64; n + 1];
    let mut suffix_max = vec![0i64; n + 1];
    for i in (0..n).rev() {
        suffix_min[i] = suffix_min[i + 1] + bounds[i].0;
        suffix_max[i] = suffix_max[i + 1] + bounds[i].1;
    }
    fn walk(
        i: usize,
        remaining: i64,
        bounds: &[(i64, i64)],
        smin: &[i64],
        smax: &[i64],
        cur: &mut Vec<i64>,
        out: &mut Vec<Vec<i64>>,
    ) {
        if i == bounds.len() {
            if remaining == 0 {
                out.push(cur.clone());
            }
            return;
        }
        let (lo, hi) = bounds[i];
        for v in lo..=hi {
            let rest = remaining - v;
            if rest < smin[i + 1] || rest > smax[i + 1] {
                continue;
            }
            cur.push(v);
            walk(i + 1, rest, bounds, smin, smax, cur, out);
            cur.pop();
        }
    }
    if total >= suffix_min[0] && total <= suffix_max[0] {
        walk(
            0,
            total,
            bounds,
            &suffix_min,
            &suffix_max,
            &mut Vec::with_capacity(n),
            out,
        );
    }
}

/// Admissible splits near `base`: the whole search box for up to `nmax`
/// accounts (lexicographic order), otherwise `base` and its single-unit
/// pairwise transfers.
pub fn candidates(
    fill: &Fill,
    base: &AllocationVector,
    config: &FourConfig,
) -> Vec<AllocationVector> {
    let bounds = search_bounds(fill.qty, &base.parts, config.k);
    let mut out = Vec::new();
    if base.parts.len() <= config.nmax {
        enumerate_box(&bounds, fill.qty, &mut out);
    } else {
        out.push(base.parts.clone());
        for i in 0..bounds.len() {
            for j in 0..bounds.len() {
                if i != j && base.parts[i] > bounds[i].0 && base.parts[j] < bounds[j].1 {
                    let mut v = base.parts.clone();
                    v[i] -= 1;
                    v[j] += 1;
                    out.push(v);
                }
            }
        }
    }
    out.into_iter()
        .map(|p| AllocationVector::new(fill.seq, p))
        .collect()
}

/// Exact minimizer over the box: start at the lower bounds and repeatedly
/// raise the account with the smallest marginal key increment. Equal
/// increments go to the higher index, which yields the lexicographically
/// smallest optimum.
fn select_exact(ctx: &ScoreContext, bounds: &[(i64, i64)], total: i64) -> Vec<i64> {
    let mut parts: Vec<i64> = bounds.iter().map(|b| b.0).collect();
    let mut remaining = total - parts.iter().sum::<i64>();
    let mut marginals: Vec<Option<[Frac; 3]>> = (0..parts.len())
        .map(|i| (parts[i] < bounds[i].1).then(|| ctx.increment(i, parts[i])))
        .collect();
    while remaining > 0 {
        let mut best: Option<usize> = None;
        for (i, m) in marginals.iter().enumerate() {
            if let Some(m) = m {
                match best {
                    Some(b) if marginals[b].as_ref().expect("candidate") < m => {}
                    _ => best = Some(i),
                }
            }
        }
        let i = best.expect("box holds the base split");
        parts[i] += 1;
        remaining -= 1;
        marginals[i] = (parts[i] < bounds[i].1).then(|| ctx.increment(i, parts[i]));
    }
    parts
}

/// Steepest-descent single-unit transfers from `start`, at most `iterations`
/// moves.
fn select_local(
    ctx: &ScoreContext,
    bounds: &[(i64, i64)],
    start: &[i64],
    iterations: usize,
) -> Vec<i64> {
    let n = start.len();
    let mut parts = start.to_vec();
    for _ in 0..iterations {
        let mut best: Option<([Frac; 3], usize, usize)> = None;
        let zero = [Frac::zero(), Frac::zero(), Frac::zero()];
        for i in 0..n {
            if parts[i] <= bounds[i].0 {
                continue;
            }
            let down = ctx.increment(i, parts[i] - 1);
            for j in 0..n {
                if j == i || parts[j] >= bounds[j].1 {
                    continue;
                }
                let up = ctx.increment(j, parts[j]);
                let delta: [Frac; 3] = std::array::from_fn(|k| up[k].minus(&down[k]));
                let improves = delta < zero || (delta == zero && i < j);
                if improves && best.as_ref().is_none_or(|(d, _, _)| delta < *d) {
                    best = Some((delta, i, j));
                }
            }
        }
        match best {
            Some((_, i, j)) => {
                parts[i] -= 1;
                parts[j] += 1;
            }
            None => break,
        }
    }
    parts
}

/// The base rounding and the selected split for one fill.
#[derive(Debug, Clone)]
pub struct FourChoice {
    pub base: AllocationVector,
    pub chosen: AllocationVector,
    pub context: ScoreContext,
}

impl FourChoice {
    pub fn base_score(&self) -> Score {
        self.context.score(&self.base.parts)
    }

    pub fn chosen_score(&self) -> Score {
        self.context.score(&self.chosen.parts)
    }
}

pub fn choose_fill_four(
    fill: &Fill,
    state: &LedgerState,
    accounts: &AccountSet,
    config: &FourConfig,
    policy: &mut ResidualPolicy,
    weights: Option<&ReinforcementWeights>,
) -> FourChoice {
    let context = ScoreContext::new(fill, state, accounts, config, weights);
    let base = allocate_fill_proportional(fill, accounts, policy);
    let bounds = search_bounds(fill.qty, &base.parts, config.k);
    let n = accounts.len();
    let parts = if n > config.nmax {
        let iterations = config.max_iterations.unwrap_or(n * n);
        select_local(&context, &bounds, &base.parts, iterations)
    } else {
        match config.strategy {
            SearchStrategy::Exact => select_exact(&context, &bounds, fill.qty),
            SearchStrategy::Enumerate => {
                candidates(fill, &base, config)
                    .into_iter()
                    .map(|c| context.score(&c.parts))
                    .min()
                    .expect("base is a candidate")
                    .parts
            }
        }
    };
    FourChoice {
        chosen: AllocationVector::new(fill.seq, parts),
        base,
        context,
    }
}

pub fn allocate_fill_four(
    fill: &Fill,
    state: &LedgerState,
    accounts: &AccountSet,
    config: &FourConfig,
    policy: &mut ResidualPolicy,
    weights: Option<&ReinforcementWeights>,
) -> AllocationVector {
    choose_fill_four(fill, state, accounts, config, policy, weights).chosen
}

/// Stateful FOUR allocator: owns the residual policy and, when enabled, the
/// reinforcement-weight schedule.
pub struct FourAllocator {
    config: FourConfig,
    policy: ResidualPolicy,
    schedule: Option<WeightSchedule>,
}

impl FourAllocator {
    pub fn new(config: FourConfig, policy: ResidualPolicy) -> Self {
        let schedule = config
            .weights
            .enabled
            .then(|| WeightSchedule::new(config.weights.frequency));
        FourAllocator {
            config,
            policy,
            schedule,
        }
    }

    pub fn choose(
        &mut self,
        fill: &Fill,
        state: &LedgerState,
        accounts: &AccountSet,
    ) -> FourChoice {
        let weights = self.schedule.as_mut().map(|s| {
            s.weights_for(fill.day, &state.marked(fill.price), accounts)
                .clone()
        });
        choose_fill_four(
            fill,
            state,
            accounts,
            &self.config,
            &mut self.policy,
            weights.as_ref(),
        )
    }
}

impl FillAllocator for FourAllocator {
    fn allocate(
        &mut self,
        fill: &Fill,
        state: &LedgerState,
        accounts: &AccountSet,
    ) -> AllocationVector {
        self.choose(fill, state, accounts).chosen
    }
}

pub fn run_four(
    fills: &[Fill],
    accounts: &AccountSet,
    config: &FourConfig,
    policy: ResidualPolicy,
) -> Result<MethodResult, MethodError> {
    let mut allocator = FourAllocator::new(config.clone(), policy);
    run_per_fill(MethodKind::Four, fills, accounts, &mut allocator)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::Account;

    fn ratio(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    fn two_accounts() -> AccountSet {
        AccountSet::new(vec![
            Account::new("A1", Money::from_major(900)),
            Account::new("A2", Money::from_major(100)),
        ])
        .unwrap()
    }

    fn fill(seq: u64, price: i64, qty: i64) -> Fill {
        Fill::new(seq, 1, Money::from_major(price), qty).unwrap()
    }

    #[test]
    fn candidate_examples() {
        let cfg = FourConfig::default();
        let sets = |f: &Fill, base: Vec<i64>, k: u32| {
            let cfg = FourConfig { k, ..cfg.clone() };
            candidates(f, &AllocationVector::new(f.seq, base), &cfg)
                .into_iter()
                .map(|c| c.parts)
                .collect::<Vec<_>>()
        };
        assert_eq!(
            sets(&fill(1, 10, 2), vec![2, 0], 2),
            vec![vec![0, 2], vec![1, 1], vec![2, 0]]
        );
        assert_eq!(sets(&fill(1, 10, 2), vec![2, 0], 0), vec![vec![2, 0]]);
        assert_eq!(
            sets(&fill(1, 10, -4), vec![-4, 0], 1),
            vec![vec![-4, 0], vec![-3, -1]]
        );
    }

    #[test]
    fn local_neighbourhood_above_nmax() {
        let cfg = FourConfig {
            nmax: 2,
            ..FourConfig::default()
        };
        let f = fill(1, 10, 6);
        let c = candidates(&f, &AllocationVector::new(1, vec![2, 2, 2]), &cfg);
        assert_eq!(c.len(), 7);
        assert!(c.iter().all(|v| v.parts.iter().sum::<i64>() == 6));
    }

    #[test]
    fn corrective_projection_example() {
        // One account term with D = −60, h = 10: E = +6 cancels, E = −4 does not.
        let projected = |d: i64, e: i64, h: i64| {
            let y = ratio(d, 1) + ratio(e, 1) * ratio(h, 1);
            &y * &y
        };
        assert_eq!(projected(-60, 6, 10), BigRational::zero());
        assert_eq!(projected(-60, -4, 10), ratio(10_000, 1));
    }

    #[test]
    fn softmax_examples() {
        let w = softmax(&[0.02, 0.02]);
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
        let w = softmax(&[0.0, 3f64.ln()]);
        assert!((w[0] - 0.25).abs() < 1e-12 && (w[1] - 0.75).abs() < 1e-12);
        let w = softmax(&[0.3; 7]);
        assert!(w.iter().all(|x| (x - 1.0 / 7.0).abs() < 1e-15));
    }

    #[test]
    fn weight_schedule_holds_between_refreshes() {
        let set = two_accounts();
        let mut st = LedgerState::new(2);
        let mut sched = WeightSchedule::new(WeightFrequency::Weekly);
        let w0 = sched.weights_for(1, &st, &set).clone();
        assert_eq!(w0.weights, vec![0.5, 0.5]);
        // Diverge the accounts, same week: weights unchanged.
        st.apply_fill(&fill(1, 100, 8), &AllocationVector::new(1, vec![8, 0]))
            .unwrap();
        st.mark(Money::from_major(130));
        assert_eq!(sched.weights_for(3, &st, &set), &w0);
        let w1 = sched.weights_for(6, &st, &set).clone();
        assert_ne!(w1, w0);
        assert!(w1.weights.iter().all(|&w| w > 0.0));
        assert!((w1.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn probe_defaults() {
        let cfg = FourConfig::default();
        let mut st = LedgerState::new(1);
        assert_eq!(probe_move(&cfg, &fill(1, 100, 1), &st), ratio(1, 1));
        st.mark(Money::from_major(100));
        assert_eq!(probe_move(&cfg, &fill(2, 130, 1), &st), ratio(30, 1));
        assert_eq!(probe_move(&cfg, &fill(2, 100, 1), &st), ratio(1, 1));
        let fixed = FourConfig {
            probe: Some(Money::from_minor(25)),
            ..cfg
        };
        assert_eq!(probe_move(&fixed, &fill(2, 130, 1), &st), ratio(1, 4));
    }

    #[test]
    fn integer_increments_match_rational_marginals() {
        let set = AccountSet::new(vec![
            Account::new("a", Money::from_minor(123_457)),
            Account::new("b", Money::from_minor(98_765_433)),
            Account::new("c", Money::from_minor(5_000_001)),
        ])
        .unwrap();
        let mut st = LedgerState::new(3);
        st.apply_fill(&fill(1, 100, 17), &AllocationVector::new(1, vec![0, 16, 1]))
            .unwrap();
        let next = Fill::new(2, 1, Money::from_minor(10_137), -9).unwrap();
        let w = ReinforcementWeights::from_deltas(vec![0.01, 0.2, 0.003]);
        for mode in [SearchMode::Proportional, SearchMode::Corrective] {
            for (probe, weights) in [(None, None), (Some(Money::from_minor(7)), Some(&w))] {
                let cfg = FourConfig {
                    mode,
                    probe,
                    ..FourConfig::default()
                };
                let ctx = ScoreContext::new(&next, &st, &set, &cfg, weights);
                for i in 0..3 {
                    for part in -9..=0 {
                        let fast: Vec<BigRational> =
                            ctx.increment(i, part).iter().map(Frac::to_ratio).collect();
                        let (lo, hi) = (ctx.account_keys(i, part), ctx.account_keys(i, part + 1));
                        let diff: Vec<BigRational> = (0..3).map(|k| &hi[k] - &lo[k]).collect();
                        assert_eq!(fast, diff, "{mode:?} {i} {part}");
                        assert_eq!(fast, ctx.marginal(i, part).to_vec(), "{mode:?} {i} {part}");
                    }
                }
            }
        }
    }

    #[test]
    fn exact_matches_enumeration_on_a_tie() {
        // Equal halves, zero divergence, odd unit: every key ties, the
        // lexicographically smallest split wins.
        let set = AccountSet::new(vec![
            Account::new("x", Money::from_major(1)),
            Account::new("y", Money::from_major(1)),
        ])
        .unwrap();
        let st = LedgerState::new(2);
        let f = fill(1, 10, 1);
        for strategy in [SearchStrategy::Exact, SearchStrategy::Enumerate] {
            let cfg = FourConfig {
                strategy,
                ..FourConfig::default()
            };
            let mut pol = ResidualPolicy::largest_account();
            let got = allocate_fill_four(&f, &st, &set, &cfg, &mut pol, None);
            assert_eq!(got.parts, vec![0, 1], "{strategy:?}");
        }
    }
}
