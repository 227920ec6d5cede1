mod common;

use std::time::{Duration, Instant};

use common::{brute_force_two, legs, reduced_aums, sample, scaled_q2};
use num_traits::Zero;
use tradealloc::four::run_four;
use tradealloc::methods::Allocations;
use tradealloc::{FourConfig, ResidualPolicy};

#[test]
fn exhaustive_search_agrees_with_four() {
    let (fills, accounts) = sample();
    let start = Instant::now();
    let (best, hits, seen) = brute_force_two(&fills, &accounts);
    assert!(start.elapsed() < Duration::from_secs(60));
    // Every sign-admissible full-horizon sequence: Π (|q|+1).
    let expected: u64 = fills.iter().map(|f| f.qty.unsigned_abs() + 1).product();
    assert_eq!(seen, expected);
    assert_eq!(best, 0);
    assert!(hits >= 1);

    let r = run_four(
        &fills,
        &accounts,
        &FourConfig::default(),
        ResidualPolicy::largest_account(),
    )
    .unwrap();
    assert!(r.terminal_q(&accounts).is_zero());
    let Allocations::PerFill(allocs) = &r.allocations else {
        panic!("per-fill result")
    };
    let l = legs(&fills, allocs, 2);
    let a = reduced_aums(&accounts);
    let fund = l[0].1 + l[1].1;
    assert_eq!(scaled_q2(fund, [l[0].1, l[1].1], [a[0], a[1]]), best);
}

#[test]
fn oracle_scaling_detects_divergence() {
    // (960, 40) on a 9:1 split of 1000: gaps of -66.67 and 600, so
    // Q = 364444.4, scaled by (100·9·1)².
    assert_eq!(
        scaled_q2(100_000, [96_000, 4_000], [9, 1]),
        60_000i128.pow(2) * 82
    );
    assert_eq!(scaled_q2(100_000, [90_000, 10_000], [9, 1]), 0);
}
