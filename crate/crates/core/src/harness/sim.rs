//! Seeded Monte Carlo comparison of the allocation methods.
//!
//! Each scenario draws account sizes, an integer-tick random walk of prices
//! and signed fill quantities from its own ChaCha stream, runs every method,
//! and records the terminal Σ|r − r_i| and Q. Scenarios run in parallel when
//! the `parallel` feature is on; aggregation always folds in scenario order,
//! so the report is identical either way.

use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use super::config::Config;
use super::HarnessError;
use crate::ledger::{Account, AccountSet, Fill};
use crate::methods::{run_method_traced, Allocations, MethodKind, MethodResult, Trace};
use crate::money::{ratio_to_f64, Money};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AumDistribution {
    Uniform,
    /// Log-uniform between the bounds.
    #[default]
    LogSkewed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSpec {
    pub scenarios: usize,
    pub fills: usize,
    pub fills_per_day: usize,
    pub accounts: usize,
    pub aum_distribution: AumDistribution,
    pub aum_min: Money,
    pub aum_max: Money,
    pub start_price: Money,
    pub tick: Money,
    /// Each step moves the price by a uniform integer number of ticks in
    /// `[-max_ticks, max_ticks]`.
    pub max_ticks: i64,
    pub min_qty: i64,
    pub max_qty: i64,
    /// Force the last fill to close the fund position.
    pub flatten: bool,
    pub seed: u64,
}

impl Default for SimSpec {
    fn default() -> Self {
        SimSpec {
            scenarios: 500,
            fills: 200,
            fills_per_day: 10,
            accounts: 10,
            aum_distribution: AumDistribution::LogSkewed,
            aum_min: Money::from_major(100_000),
            aum_max: Money::from_major(10_000_000),
            start_price: Money::from_major(100),
            tick: Money::from_minor(1),
            max_ticks: 50,
            min_qty: 1,
            max_qty: 40,
            flatten: true,
            seed: 0,
        }
    }
}

impl SimSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Spec(m.to_string()));
        if self.scenarios == 0 {
            return bad("scenarios must be at least 1");
        }
        if self.fills == 0 || self.fills_per_day == 0 || self.accounts == 0 {
            return bad("fills, fills_per_day and accounts must be at least 1");
        }
        if self.flatten && self.fills < 2 {
            return bad("flatten needs at least 2 fills");
        }
        if !self.aum_min.is_positive() || self.aum_max < self.aum_min {
            return bad("AUM bounds must satisfy 0 < aum_min <= aum_max");
        }
        if !self.start_price.is_positive() || !self.tick.is_positive() || self.max_ticks < 0 {
            return bad("start_price and tick must be positive and max_ticks non-negative");
        }
        if self.min_qty < 1 || self.max_qty < self.min_qty {
            return bad("quantities must satisfy 1 <= min_qty <= max_qty");
        }
        Ok(())
    }
}

/// One generated portfolio and blotter.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub index: usize,
    pub accounts: AccountSet,
    pub fills: Vec<Fill>,
}

/// The scenario's private stream: the master seed with the scenario index
/// as ChaCha stream id.
pub fn scenario_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn generate(spec: &SimSpec, index: usize) -> Scenario {
    let mut rng = scenario_rng(spec.seed, index);
    let accounts = (0..spec.accounts)
        .map(|i| {
            let (lo, hi) = (spec.aum_min.minor(), spec.aum_max.minor());
            let minor = match spec.aum_distribution {
                AumDistribution::Uniform => rng.random_range(lo..=hi),
                AumDistribution::LogSkewed => {
                    let x: f64 = rng.random_range((lo as f64).ln()..=(hi as f64).ln());
                    (x.exp().round() as i64).clamp(lo, hi)
                }
            };
            Account::new(format!("A{}", i + 1), Money::from_minor(minor))
        })
        .collect();
    let accounts = AccountSet::new(accounts).expect("generated accounts are valid");

    let mut fills = Vec::with_capacity(spec.fills);
    let mut price = spec.start_price;
    let mut position = 0i64;
    for i in 0..spec.fills {
        if i > 0 {
            let ticks = rng.random_range(-spec.max_ticks..=spec.max_ticks);
            price = (price + spec.tick * ticks).max(spec.tick);
        }
        let mut qty = rng.random_range(spec.min_qty..=spec.max_qty);
        if rng.random_bool(0.5) {
            qty = -qty;
        }
        let last = i + 1 == spec.fills;
        if spec.flatten && last {
            qty = -position;
        } else if spec.flatten && i + 2 == spec.fills && position + qty == 0 {
            // Keep the closing fill non-empty.
            qty += qty.signum();
        }
        position += qty;
        let day = (i / spec.fills_per_day) as u32 + 1;
        fills.push(Fill::new(i as u64 + 1, day, price, qty).expect("generated fill is valid"));
    }
    Scenario {
        index,
        accounts,
        fills,
    }
}

/// Terminal metrics of one scenario, indexed like [`MethodKind::ALL`].
#[derive(Debug, Clone)]
pub struct ScenarioMetrics {
    pub index: usize,
    pub abs_gap: Vec<BigRational>,
    pub q: Vec<BigRational>,
    pub violations: usize,
}

fn violations(result: &MethodResult, scenario: &Scenario) -> usize {
    let mut count = usize::from(!result.identities_hold());
    if let Allocations::PerFill(allocs) = &result.allocations {
        count += scenario
            .fills
            .iter()
            .zip(allocs)
            .filter(|(f, a)| a.check(f, scenario.accounts.len()).is_err())
            .count();
    }
    count
}

pub fn run_scenario(scenario: &Scenario, config: &Config) -> Result<ScenarioMetrics, HarnessError> {
    let mut abs_gap = Vec::with_capacity(4);
    let mut q = Vec::with_capacity(4);
    let mut count = 0;
    let mut fund = None;
    for method in MethodKind::ALL {
        let result = run_method_traced(
            method,
            &scenario.fills,
            &scenario.accounts,
            config.policy(),
            &config.four,
            Trace::Terminal,
        )?;
        count += violations(&result, scenario);
        let terminal = (result.fund.position, result.fund.marked_pnl.clone());
        match &fund {
            None => fund = Some(terminal),
            Some(f) if *f != terminal => count += 1,
            Some(_) => {}
        }
        abs_gap.push(result.terminal_abs_return_gap(&scenario.accounts));
        q.push(result.terminal_q(&scenario.accounts));
    }
    Ok(ScenarioMetrics {
        index: scenario.index,
        abs_gap,
        q,
        violations: count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Runs every scenario; `Parallel` falls back to sequential without the
/// `parallel` feature.
pub fn run_scenarios(
    spec: &SimSpec,
    config: &Config,
    execution: Execution,
) -> Result<Vec<ScenarioMetrics>, HarnessError> {
    spec.validate()?;
    let one = |i: usize| run_scenario(&generate(spec, i), config);
    match execution {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..spec.scenarios).into_par_iter().map(one).collect()
        }
        _ => (0..spec.scenarios).map(one).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub mean: f64,
    pub max: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
}

impl Distribution {
    /// Nearest-rank quantiles.
    pub fn of(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rank = |p: f64| {
            let r = (p * sorted.len() as f64).ceil() as usize;
            sorted[r.clamp(1, sorted.len()) - 1]
        };
        Distribution {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            max: *sorted.last().expect("at least one scenario"),
            p50: rank(0.5),
            p90: rank(0.9),
            p99: rank(0.99),
        }
    }
}

/// One-sided paired sign test of "FOUR has the smaller value".
#[derive(Debug, Clone, PartialEq)]
pub struct SignTest {
    pub baseline: MethodKind,
    pub wins: u64,
    pub losses: u64,
    pub ties: u64,
    pub p_value: f64,
}

/// `P(X >= wins)` for `X ~ Binomial(wins + losses, 1/2)`.
pub fn sign_test_p(wins: u64, losses: u64) -> f64 {
    let n = wins + losses;
    if n == 0 || wins == 0 {
        return 1.0;
    }
    let dist = Binomial::new(0.5, n).expect("valid binomial");
    dist.sf(wins - 1)
}

#[derive(Debug, Clone)]
pub struct SimSummary {
    pub scenarios: usize,
    pub abs_gap: Vec<(MethodKind, Distribution)>,
    pub q: Vec<(MethodKind, Distribution)>,
    pub sign_tests: Vec<SignTest>,
    pub violations: usize,
}

pub fn summarize(metrics: &[ScenarioMetrics]) -> SimSummary {
    let column = |pick: fn(&ScenarioMetrics) -> &Vec<BigRational>, m: usize| -> Vec<f64> {
        metrics.iter().map(|s| ratio_to_f64(&pick(s)[m])).collect()
    };
    let four = MethodKind::ALL
        .iter()
        .position(|&m| m == MethodKind::Four)
        .expect("FOUR is a method");
    let mut abs_gap = Vec::new();
    let mut q = Vec::new();
    let mut sign_tests = Vec::new();
    for (m, &method) in MethodKind::ALL.iter().enumerate() {
        abs_gap.push((method, Distribution::of(&column(|s| &s.abs_gap, m))));
        q.push((method, Distribution::of(&column(|s| &s.q, m))));
        if m == four {
            continue;
        }
        let (mut wins, mut losses, mut ties) = (0, 0, 0);
        for s in metrics {
            match s.abs_gap[four].cmp(&s.abs_gap[m]) {
                std::cmp::Ordering::Less => wins += 1,
                std::cmp::Ordering::Greater => losses += 1,
                std::cmp::Ordering::Equal => ties += 1,
            }
        }
        sign_tests.push(SignTest {
            baseline: method,
            wins,
            losses,
            ties,
            p_value: sign_test_p(wins, losses),
        });
    }
    SimSummary {
        scenarios: metrics.len(),
        abs_gap,
        q,
        sign_tests,
        violations: metrics.iter().map(|s| s.violations).sum(),
    }
}

pub fn simulate_with(
    spec: &SimSpec,
    config: &Config,
    execution: Execution,
) -> Result<SimSummary, HarnessError> {
    Ok(summarize(&run_scenarios(spec, config, execution)?))
}

pub fn simulate(spec: &SimSpec, config: &Config) -> Result<SimSummary, HarnessError> {
    simulate_with(spec, config, Execution::default())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub mean: String,
    pub max: String,
    pub p50: String,
    pub p90: String,
    pub p99: String,
}

impl From<&Distribution> for DistributionReport {
    fn from(d: &Distribution) -> Self {
        let s = |v: f64| format!("{v:.6e}");
        DistributionReport {
            mean: s(d.mean),
            max: s(d.max),
            p50: s(d.p50),
            p90: s(d.p90),
            p99: s(d.p99),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodStatsReport {
    pub method: MethodKind,
    pub abs_return_gap: DistributionReport,
    pub terminal_q: DistributionReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignTestReport {
    pub baseline: MethodKind,
    pub four_better: u64,
    pub four_worse: u64,
    pub ties: u64,
    pub p_value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimReport {
    pub spec: SimSpec,
    pub config: Config,
    pub scenarios: usize,
    pub invariant_violations: usize,
    pub methods: Vec<MethodStatsReport>,
    pub sign_tests: Vec<SignTestReport>,
}

impl SimReport {
    pub fn new(spec: &SimSpec, config: &Config, summary: &SimSummary) -> Self {
        SimReport {
            spec: spec.clone(),
            config: config.clone(),
            scenarios: summary.scenarios,
            invariant_violations: summary.violations,
            methods: summary
                .abs_gap
                .iter()
                .zip(&summary.q)
                .map(|((m, gap), (_, q))| MethodStatsReport {
                    method: *m,
                    abs_return_gap: gap.into(),
                    terminal_q: q.into(),
                })
                .collect(),
            sign_tests: summary
                .sign_tests
                .iter()
                .map(|t| SignTestReport {
                    baseline: t.baseline,
                    four_better: t.wins,
                    four_worse: t.losses,
                    ties: t.ties,
                    p_value: format!("{:.6e}", t.p_value),
                })
                .collect(),
        }
    }

    pub fn csv_table(&self) -> String {
        let mut out = String::from(
            "method,gap_mean,gap_max,gap_p50,gap_p90,gap_p99,q_mean,q_max,q_p50,q_p90,q_p99,sign_test_p\n",
        );
        for m in &self.methods {
            let p = self
                .sign_tests
                .iter()
                .find(|t| t.baseline == m.method)
                .map(|t| t.p_value.as_str())
                .unwrap_or("");
            let (g, q) = (&m.abs_return_gap, &m.terminal_q);
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                m.method, g.mean, g.max, g.p50, g.p90, g.p99, q.mean, q.max, q.p50, q.p90, q.p99, p
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimSpec {
        SimSpec {
            scenarios: 4,
            fills: 30,
            accounts: 4,
            ..SimSpec::default()
        }
    }

    #[test]
    fn generated_scenarios_are_valid_and_flat() {
        let spec = small();
        for i in 0..spec.scenarios {
            let s = generate(&spec, i);
            assert_eq!(s.fills.len(), 30);
            assert_eq!(s.fills.iter().map(|f| f.qty).sum::<i64>(), 0);
            assert!(s.fills.iter().all(|f| f.price.is_positive() && f.qty != 0));
            assert_eq!(s.fills.last().unwrap().day, 3);
        }
    }

    #[test]
    fn streams_differ_per_scenario() {
        let spec = small();
        assert_ne!(generate(&spec, 0).fills, generate(&spec, 1).fills);
        assert_eq!(generate(&spec, 1).fills, generate(&spec, 1).fills);
    }

    #[test]
    fn zero_scenarios_rejected() {
        let spec = SimSpec {
            scenarios: 0,
            ..SimSpec::default()
        };
        assert!(matches!(
            simulate(&spec, &Config::default()),
            Err(HarnessError::Spec(_))
        ));
    }

    #[test]
    fn flat_prices_give_no_divergence() {
        let spec = SimSpec {
            max_ticks: 0,
            ..small()
        };
        let summary = simulate(&spec, &Config::default()).unwrap();
        for (_, d) in summary.abs_gap.iter().chain(&summary.q) {
            assert_eq!(d.max, 0.0);
        }
        assert_eq!(summary.violations, 0);
    }

    #[test]
    fn sign_test_tail() {
        assert_eq!(sign_test_p(0, 5), 1.0);
        assert!((sign_test_p(5, 0) - 1.0 / 32.0).abs() < 1e-12);
        assert!((sign_test_p(4, 1) - 6.0 / 32.0).abs() < 1e-12);
    }

    #[test]
    fn quantiles_nearest_rank() {
        let d = Distribution::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!((d.mean, d.max, d.p50, d.p90), (2.5, 4.0, 2.0, 4.0));
    }
}
