//! Test oracles shared by the integration suites and the acceptance runner.
//! Everything here works in integer cents and i128, independently of the
//! library's rational arithmetic.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tradealloc::four::{FourAllocator, WeightConfig, WeightFrequency};
use tradealloc::harness::io::{parse_accounts, parse_allocations, parse_blotter};
use tradealloc::methods::run_method;
use tradealloc::rounding::CycleUnit;
use tradealloc::{
    Account, AccountSet, AllocationVector, Fill, FourConfig, LedgerState, MethodKind, Money,
    PolicyKind, ResidualPolicy, SearchMode,
};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

pub fn sample() -> (Vec<Fill>, AccountSet) {
    let fills = parse_blotter(&fixture("sample_fills.csv")).expect("sample blotter");
    let accounts = parse_accounts(&fixture("sample_accounts.csv")).expect("sample accounts");
    (fills, accounts)
}

pub fn allocations(name: &str, fills: &[Fill], accounts: &AccountSet) -> Vec<AllocationVector> {
    parse_allocations(&fixture(name), fills, accounts).expect("allocation fixture")
}

/// Fund rows `(price, qty, np, bucket, cum)` in cents, booked by hand as
/// previous position times price change. Row 7 is -12 × -5 = 60.
pub const FUND_TRAJECTORY: [(i64, i64, i64, i64, i64); 8] = [
    (10_000, 8, 8, 0, 0),
    (13_000, 2, 10, 24_000, 24_000),
    (15_000, -4, 6, 20_000, 44_000),
    (14_000, -10, -4, -6_000, 38_000),
    (11_000, -4, -8, 12_000, 50_000),
    (11_500, -4, -12, -4_000, 46_000),
    (11_000, -4, -16, 6_000, 52_000),
    (8_000, 16, 0, 48_000, 100_000),
];

/// Cash plus position at the last price, in cents, for one leg.
pub fn marked_cents(fills: &[Fill], parts: impl Iterator<Item = i64>) -> (i64, i64) {
    let mut cash = 0i64;
    let mut pos = 0i64;
    for (f, q) in fills.iter().zip(parts) {
        cash -= f.price.minor() * q;
        pos += q;
    }
    let last = fills.last().map_or(0, |f| f.price.minor());
    (pos, cash + pos * last)
}

/// Per-account `(position, marked P&L cents)` for an allocation sequence.
pub fn legs(fills: &[Fill], allocs: &[AllocationVector], n: usize) -> Vec<(i64, i64)> {
    (0..n)
        .map(|i| marked_cents(fills, allocs.iter().map(|a| a.parts[i])))
        .collect()
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// AUMs divided by their common factor; alpha_i = a_i / Σa.
pub fn reduced_aums(accounts: &AccountSet) -> Vec<i64> {
    let raw: Vec<i64> = accounts.accounts().iter().map(|a| a.aum.minor()).collect();
    let g = raw.iter().fold(0, |g, &a| gcd(g, a));
    raw.iter().map(|a| a / g).collect()
}

/// Terminal divergence for two accounts scaled by `(100·a1·a2)²`, so that
/// minima compare exactly as integers.
pub fn scaled_q2(fund: i64, pnl: [i64; 2], a: [i64; 2]) -> i128 {
    let t = i128::from(a[0] + a[1]);
    let d = |i: usize| i128::from(fund) * i128::from(a[i]) - i128::from(pnl[i]) * t;
    let (d0, d1) = (d(0), d(1));
    let (a0, a1) = (i128::from(a[0]), i128::from(a[1]));
    d0 * d0 * a1 * a1 + d1 * d1 * a0 * a0
}

/// Exhaustive search over every sign-admissible split of every fill between
/// two accounts. Returns the minimal scaled terminal divergence, how many
/// sequences reach it, and how many sequences were examined.
pub fn brute_force_two(fills: &[Fill], accounts: &AccountSet) -> (i128, u64, u64) {
    assert_eq!(accounts.len(), 2);
    let a = reduced_aums(accounts);
    let (_, fund) = marked_cents(fills, fills.iter().map(|f| f.qty));
    let mut search = Search {
        fills,
        last: fills.last().expect("non-empty blotter").price.minor(),
        fund,
        a: [a[0], a[1]],
        best: i128::MAX,
        hits: 0,
        seen: 0,
    };
    search.walk(0, 0, 0);
    (search.best, search.hits, search.seen)
}

struct Search<'a> {
    fills: &'a [Fill],
    last: i64,
    fund: i64,
    a: [i64; 2],
    best: i128,
    hits: u64,
    seen: u64,
}

impl Search<'_> {
    fn walk(&mut self, i: usize, cash: i64, pos: i64) {
        let Some(f) = self.fills.get(i) else {
            let p0 = cash + pos * self.last;
            let q = scaled_q2(self.fund, [p0, self.fund - p0], self.a);
            self.seen += 1;
            if q < self.best {
                (self.best, self.hits) = (q, 1);
            } else if q == self.best {
                self.hits += 1;
            }
            return;
        };
        let (price, qty) = (f.price.minor(), f.qty);
        let (lo, hi) = if qty > 0 { (0, qty) } else { (qty, 0) };
        for x in lo..=hi {
            self.walk(i + 1, cash - price * x, pos + x);
        }
    }
}

/// A random blotter, account set and FOUR configuration.
#[derive(Debug, Clone)]
pub struct Case {
    pub accounts: AccountSet,
    pub fills: Vec<Fill>,
    pub config: FourConfig,
    pub policy: PolicyKind,
}

pub fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let n = rng.random_range(2..=10usize);
    // A small AUM palette forces exact residual ties now and then.
    let tied = rng.random_bool(0.3);
    let accounts = (0..n)
        .map(|i| {
            let minor = if tied {
                [100_000, 250_000, 500_000][rng.random_range(0..3)]
            } else {
                rng.random_range(100_000..=500_000_000)
            };
            Account::new(format!("A{}", i + 1), Money::from_minor(minor))
        })
        .collect();
    let accounts = AccountSet::new(accounts).expect("valid accounts");
    let m = rng.random_range(1..=25usize);
    let mut fills = Vec::with_capacity(m);
    let mut price = 10_000i64;
    let mut day = 1u32;
    for seq in 1..=m as u64 {
        if seq > 1 {
            price = (price + rng.random_range(-300..=300)).max(1);
            if rng.random_bool(0.3) {
                day += 1;
            }
        }
        let mut qty = rng.random_range(1..=60i64);
        if rng.random_bool(0.5) {
            qty = -qty;
        }
        fills.push(Fill::new(seq, day, Money::from_minor(price), qty).expect("valid fill"));
    }
    let mode = if rng.random_bool(0.5) {
        SearchMode::Proportional
    } else {
        SearchMode::Corrective
    };
    let weights = WeightConfig {
        enabled: rng.random_bool(0.3),
        frequency: [
            WeightFrequency::PerFill,
            WeightFrequency::Weekly,
            WeightFrequency::Monthly,
            WeightFrequency::Quarterly,
        ][rng.random_range(0..4)],
    };
    let config = FourConfig {
        k: rng.random_range(0..=3),
        mode,
        weights,
        ..FourConfig::default()
    };
    let policy = match rng.random_range(0..3) {
        0 => PolicyKind::LargestAccount,
        1 => PolicyKind::Rotation {
            every: rng.random_range(1..=3),
            unit: if rng.random_bool(0.5) {
                CycleUnit::Day
            } else {
                CycleUnit::Invocation
            },
        },
        _ => PolicyKind::Random { seed: rng.random() },
    };
    Case {
        accounts,
        fills,
        config,
        policy,
    }
}

pub fn random_cases(seed: u64, count: usize) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_case(&mut rng)).collect()
}

/// Checks one case: every FOUR split preserves the fill, never opposes it,
/// and scores no worse than its base rounding; every method keeps the fund
/// and account sums in step. Returns the first violation found.
pub fn check_case(case: &Case) -> Result<(), String> {
    let n = case.accounts.len();
    let mut four = FourAllocator::new(
        case.config.clone(),
        ResidualPolicy::new(case.policy.clone()),
    );
    let mut state = LedgerState::new(n);
    for fill in &case.fills {
        let choice = four.choose(fill, &state, &case.accounts);
        let parts = &choice.chosen.parts;
        if parts.len() != n || parts.iter().sum::<i64>() != fill.qty {
            return Err(format!(
                "fill {}: {parts:?} does not sum to {}",
                fill.seq, fill.qty
            ));
        }
        if parts.iter().any(|&p| p * fill.qty < 0) {
            return Err(format!("fill {}: {parts:?} opposes {}", fill.seq, fill.qty));
        }
        if choice.base.parts.iter().sum::<i64>() != fill.qty {
            return Err(format!(
                "fill {}: base {:?} off sum",
                fill.seq, choice.base.parts
            ));
        }
        let (chosen, base) = (choice.chosen_score(), choice.base_score());
        if chosen.keys > base.keys {
            return Err(format!(
                "fill {}: chosen {parts:?} scores above base {:?}",
                fill.seq, choice.base.parts
            ));
        }
        state
            .apply_fill(fill, &choice.chosen)
            .map_err(|e| format!("fill {}: {e}", fill.seq))?;
        if !state.identities_hold() {
            return Err(format!("fill {}: ledger identities broken", fill.seq));
        }
    }
    for kind in MethodKind::ALL {
        let result = run_method(
            kind,
            &case.fills,
            &case.accounts,
            ResidualPolicy::new(case.policy.clone()),
            &case.config,
        )
        .map_err(|e| format!("{kind}: {e}"))?;
        if !result.identities_hold() {
            return Err(format!("{kind}: sum identities broken"));
        }
        if result.fund.position != case.fills.iter().map(|f| f.qty).sum::<i64>() {
            return Err(format!("{kind}: fund position drifted"));
        }
    }
    Ok(())
}
