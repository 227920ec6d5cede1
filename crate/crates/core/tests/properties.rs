mod common;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tradealloc::four::choose_fill_four;
use tradealloc::methods::{batch_days, run_aps, run_hpha, run_method, Allocations};
use tradealloc::rounding::{fractional_targets, round_proportional, round_with_priority};
use tradealloc::{
    Account, AccountSet, AllocationVector, Fill, FourConfig, LedgerState, MethodKind, Money,
    ResidualPolicy, SearchMode, SearchStrategy,
};

fn account_set(aums: &[i64]) -> AccountSet {
    let accounts = aums
        .iter()
        .enumerate()
        .map(|(i, &a)| Account::new(format!("A{}", i + 1), Money::from_minor(a)))
        .collect();
    AccountSet::new(accounts).unwrap()
}

fn aums(max_len: usize) -> impl Strategy<Value = Vec<i64>> {
    prop_oneof![
        prop::collection::vec(100i64..=1_000_000_000, 1..=max_len),
        // Few distinct sizes, so residual ties are common.
        prop::collection::vec(
            prop::sample::select(vec![100_000i64, 200_000, 300_000]),
            1..=max_len
        ),
    ]
}

fn qty() -> impl Strategy<Value = i64> {
    (1i64..=80, any::<bool>()).prop_map(|(q, neg)| if neg { -q } else { q })
}

fn blotter(max_len: usize) -> impl Strategy<Value = Vec<Fill>> {
    prop::collection::vec((qty(), -400i64..=400, any::<bool>()), 1..=max_len).prop_map(|rows| {
        let mut price = 10_000i64;
        let mut day = 1;
        rows.iter()
            .enumerate()
            .map(|(i, &(q, step, next_day))| {
                if i > 0 {
                    price = (price + step).max(1);
                    day += u32::from(next_day);
                }
                Fill::new(i as u64 + 1, day, Money::from_minor(price), q).unwrap()
            })
            .collect()
    })
}

fn priority(n: usize, shift: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.rotate_left(shift % n);
    p
}

proptest! {
    #[test]
    fn rounding_preserves_sum_sign_and_stays_near_target(aums in aums(12), q in qty(), shift in 0usize..12) {
        let set = account_set(&aums);
        let prio = priority(set.len(), shift);
        let parts = round_proportional(q, &set, &prio);
        prop_assert_eq!(parts.iter().sum::<i64>(), q);
        prop_assert!(parts.iter().all(|&p| p * q >= 0));
        let targets = fractional_targets(q, &set);
        for (p, t) in parts.iter().zip(&targets.targets) {
            let dev = (BigRational::from_integer(BigInt::from(*p)) - t).abs();
            prop_assert!(dev < BigRational::from_integer(1.into()));
        }
        prop_assert_eq!(&round_proportional(q, &set, &prio), &parts);
        prop_assert_eq!(round_with_priority(&targets, &prio), parts);
    }

    #[test]
    fn ledger_identities_hold_for_any_admissible_split(
        aums in aums(6),
        fills in blotter(20),
        seed in any::<u64>(),
    ) {
        let set = account_set(&aums);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = LedgerState::new(set.len());
        for f in &fills {
            // Random split: deal units of the fill one at a time.
            let mut parts = vec![0i64; set.len()];
            for _ in 0..f.qty.abs() {
                parts[rand::Rng::random_range(&mut rng, 0..set.len())] += f.qty.signum();
            }
            state.apply_fill(f, &AllocationVector::new(f.seq, parts)).unwrap();
            prop_assert!(state.identities_hold());
        }
        let (np, pnl) = common::marked_cents(&fills, fills.iter().map(|f| f.qty));
        prop_assert_eq!(state.fund.net_position, np);
        prop_assert_eq!(state.fund.cum_pnl, Money::from_minor(pnl));
    }

    #[test]
    fn selection_ignores_a_common_aum_scale(
        aums in prop::collection::vec(100i64..=1_000_000, 2..=6),
        fills in blotter(12),
        scale in 2i64..=50,
        corrective in any::<bool>(),
    ) {
        let mode = if corrective { SearchMode::Corrective } else { SearchMode::Proportional };
        let config = FourConfig { mode, ..FourConfig::default() };
        let scaled: Vec<i64> = aums.iter().map(|a| a * scale).collect();
        let run = |a: &[i64]| {
            run_method(MethodKind::Four, &fills, &account_set(a), ResidualPolicy::largest_account(), &config)
                .unwrap()
                .allocations
        };
        prop_assert_eq!(run(&aums), run(&scaled));
    }

    #[test]
    fn exact_proportion_stays_at_zero_divergence(
        weights in prop::collection::vec(1i64..=5, 1..=5),
        lots in prop::collection::vec((1i64..=4, any::<bool>(), -300i64..=300), 1..=12),
    ) {
        let unit: i64 = weights.iter().sum();
        let set = account_set(&weights.iter().map(|w| w * 100_000).collect::<Vec<_>>());
        let mut price = 10_000;
        let fills: Vec<Fill> = lots
            .iter()
            .enumerate()
            .map(|(i, &(m, neg, step))| {
                price = (price + step).max(1);
                let q = if neg { -m * unit } else { m * unit };
                Fill::new(i as u64 + 1, 1 + i as u32 / 3, Money::from_minor(price), q).unwrap()
            })
            .collect();
        for kind in [MethodKind::Simple, MethodKind::Aps, MethodKind::Four] {
            let r = run_method(kind, &fills, &set, ResidualPolicy::largest_account(), &FourConfig::default()).unwrap();
            prop_assert!(r.terminal_q(&set).is_zero(), "{}", kind);
            prop_assert!(r.divergence.iter().all(|p| p.q.is_zero()), "{}", kind);
        }
    }

    #[test]
    fn hpha_hands_the_highest_prices_to_the_largest_accounts(aums in aums(6), fills in blotter(16)) {
        let set = account_set(&aums);
        let r = run_hpha(&fills, &set, ResidualPolicy::largest_account()).unwrap();
        let Allocations::PerFill(allocs) = &r.allocations else { panic!("per-fill result") };
        let order = set.by_size_desc();
        for batch in batch_days(&fills).unwrap() {
            for side in [&batch.buys, &batch.sells] {
                // Lots given to each account, in size order; each account's
                // lots must be priced at or below the previous account's.
                let mut floor = i64::MAX;
                for &acct in &order {
                    let prices: Vec<i64> = side
                        .iter()
                        .filter(|f| allocs[(f.seq - 1) as usize].parts[acct] != 0)
                        .map(|f| f.price.minor())
                        .collect();
                    if let Some(&hi) = prices.iter().max() {
                        prop_assert!(hi <= floor);
                        floor = *prices.iter().min().unwrap();
                    }
                }
                let total: i64 = side.iter().map(|f| f.qty).sum();
                if total != 0 {
                    let by_acct: Vec<i64> = (0..set.len())
                        .map(|i| side.iter().map(|f| allocs[(f.seq - 1) as usize].parts[i]).sum())
                        .collect();
                    prop_assert_eq!(by_acct, round_proportional(total, &set, &order));
                }
            }
        }
        for (f, a) in fills.iter().zip(allocs) {
            prop_assert_eq!(a.parts.iter().sum::<i64>(), f.qty);
            prop_assert!(a.parts.iter().all(|&p| p * f.qty >= 0));
        }
        prop_assert!(r.identities_hold());
    }

    #[test]
    fn aps_batches_conserve_quantity_and_notional(aums in aums(6), fills in blotter(16)) {
        let set = account_set(&aums);
        let r = run_aps(&fills, &set, ResidualPolicy::largest_account()).unwrap();
        let Allocations::PerBatch(batches) = &r.allocations else { panic!("batch result") };
        let mut cash = BigRational::zero();
        for b in batches {
            let total: i64 = b.parts.iter().sum();
            let side: Vec<&Fill> = fills
                .iter()
                .filter(|f| f.day == b.day && (f.qty > 0) == (total > 0))
                .collect();
            prop_assert_eq!(total, side.iter().map(|f| f.qty).sum::<i64>());
            let notional: i64 = side.iter().map(|f| f.qty * f.price.minor()).sum();
            let avg_total = &b.avg_price * BigRational::from_integer(total.into());
            prop_assert_eq!(avg_total, BigRational::new(notional.into(), 100.into()));
            cash -= BigRational::new(notional.into(), 100.into());
        }
        prop_assert_eq!(&r.fund.cum_pnl, &cash);
        prop_assert!(r.identities_hold());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_selection_equals_enumeration(
        aums in aums(4),
        fills in blotter(6),
        k in 0u32..=3,
        corrective in any::<bool>(),
    ) {
        let set = account_set(&aums);
        let mode = if corrective { SearchMode::Corrective } else { SearchMode::Proportional };
        let exact = FourConfig { k, mode, ..FourConfig::default() };
        let brute = FourConfig { strategy: SearchStrategy::Enumerate, ..exact.clone() };
        let mut state = LedgerState::new(set.len());
        let (mut pe, mut pb) = (ResidualPolicy::largest_account(), ResidualPolicy::largest_account());
        for f in &fills {
            let a = choose_fill_four(f, &state, &set, &exact, &mut pe, None);
            let b = choose_fill_four(f, &state, &set, &brute, &mut pb, None);
            prop_assert_eq!(&a.chosen, &b.chosen, "fill {}", f.seq);
            state.apply_fill(f, &a.chosen).unwrap();
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_cases_satisfy_every_invariant(seed in any::<u64>()) {
        let case = common::random_cases(seed, 1).pop().unwrap();
        prop_assert_eq!(common::check_case(&case), Ok(()));
    }
}
