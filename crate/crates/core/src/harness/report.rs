//! Serializable reports. Decimals are pre-rendered strings with a fixed
//! scale (currency 2dp, averages 4dp, Q in scientific notation) so JSON and
//! CSV output is byte-stable and JSON round-trips exactly.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use super::config::Config;
use super::sim::SimReport;
use super::HarnessError;
use crate::ledger::{AccountSet, LegRow, Trajectory};
use crate::methods::{Allocations, MethodResult, Outcome, PnlBasis, Side};
use crate::money::{render_decimal, render_scientific, Money};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(HarnessError::Format(other.to_string())),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        })
    }
}

pub trait Report: Serialize {
    fn to_csv(&self) -> String;

    fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("reports serialize");
        text.push('\n');
        text
    }

    fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => self.to_json(),
            ReportFormat::Csv => self.to_csv(),
        }
    }
}

/// Writes `text` to `path`, or stdout when there is no path.
pub fn write_output(path: Option<&Path>, text: &str) -> Result<(), HarnessError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|source| HarnessError::Io {
            path: p.display().to_string(),
            source,
        }),
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|source| HarnessError::Io {
                    path: "<stdout>".to_string(),
                    source,
                })
        }
    }
}

pub fn emit_report(
    report: &impl Report,
    format: ReportFormat,
    path: Option<&Path>,
) -> Result<(), HarnessError> {
    write_output(path, &report.render(format))
}

fn money2(value: &BigRational) -> String {
    render_decimal(value, 2)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountEcho {
    pub account_id: String,
    pub aum: Money,
}

fn echo_accounts(accounts: &AccountSet) -> Vec<AccountEcho> {
    accounts
        .accounts()
        .iter()
        .map(|a| AccountEcho {
            account_id: a.id.to_string(),
            aum: a.aum,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Leg {
    pub id: String,
    pub position: i64,
    pub cum_pnl: String,
    pub marked_pnl: String,
}

impl Leg {
    fn new(id: &str, o: &Outcome) -> Self {
        Leg {
            id: id.to_string(),
            position: o.position,
            cum_pnl: money2(&o.cum_pnl),
            marked_pnl: money2(&o.marked_pnl),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QPoint {
    pub seq: u64,
    pub q: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayAverage {
    pub day: u32,
    pub side: Side,
    pub avg_price: String,
    pub parts: Vec<i64>,
}

/// One row of a comparison: terminal fund and account legs of one method.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub variant: String,
    pub basis: PnlBasis,
    pub fund: Leg,
    pub accounts: Vec<Leg>,
    pub terminal_q: String,
    pub identities_hold: bool,
    pub divergence: Vec<QPoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub day_averages: Vec<DayAverage>,
}

impl MethodRow {
    pub fn new(method: &str, variant: &str, result: &MethodResult, accounts: &AccountSet) -> Self {
        let day_averages = match &result.allocations {
            Allocations::PerBatch(batches) => batches
                .iter()
                .map(|b| DayAverage {
                    day: b.day,
                    side: b.side,
                    avg_price: render_decimal(&b.avg_price, 4),
                    parts: b.parts.clone(),
                })
                .collect(),
            Allocations::PerFill(_) => Vec::new(),
        };
        MethodRow {
            method: method.to_string(),
            variant: variant.to_string(),
            basis: result.basis,
            fund: Leg::new("fund", &result.fund),
            accounts: accounts
                .accounts()
                .iter()
                .zip(&result.accounts)
                .map(|(a, o)| Leg::new(&a.id.0, o))
                .collect(),
            terminal_q: render_scientific(&result.terminal_q(accounts)),
            identities_hold: result.identities_hold(),
            divergence: result
                .divergence
                .iter()
                .map(|p| QPoint {
                    seq: p.seq,
                    q: render_scientific(&p.q),
                })
                .collect(),
            day_averages,
        }
    }
}

fn rows_csv(rows: &[MethodRow], accounts: &[AccountEcho]) -> String {
    let mut out = String::from("method,variant,basis,fund_np,fund_cum");
    for a in accounts {
        out.push_str(&format!(",np_{0},cum_{0}", a.account_id));
    }
    out.push_str(",terminal_q\n");
    for r in rows {
        let basis = match r.basis {
            PnlBasis::MarkToMarket => "mark-to-market",
            PnlBasis::Realized => "realized",
        };
        out.push_str(&format!(
            "{},{},{},{},{}",
            r.method, r.variant, basis, r.fund.position, r.fund.cum_pnl
        ));
        for leg in &r.accounts {
            out.push_str(&format!(",{},{}", leg.position, leg.cum_pnl));
        }
        out.push_str(&format!(",{}\n", r.terminal_q));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub config: Config,
    pub accounts: Vec<AccountEcho>,
    pub rows: Vec<MethodRow>,
}

impl ComparisonReport {
    pub fn new(config: &Config, accounts: &AccountSet, rows: Vec<MethodRow>) -> Self {
        ComparisonReport {
            config: config.clone(),
            accounts: echo_accounts(accounts),
            rows,
        }
    }

    pub fn row(&self, method: &str, variant: &str) -> Option<&MethodRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.variant == variant)
    }
}

impl Report for ComparisonReport {
    fn to_csv(&self) -> String {
        rows_csv(&self.rows, &self.accounts)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegPoint {
    pub qty: i64,
    pub position: i64,
    pub bucket_pnl: Option<String>,
    pub cum_pnl: String,
}

impl From<&LegRow> for LegPoint {
    fn from(l: &LegRow) -> Self {
        LegPoint {
            qty: l.qty,
            position: l.net_position,
            bucket_pnl: l.bucket_pnl.map(|m| m.to_string()),
            cum_pnl: l.cum_pnl.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub seq: u64,
    pub day: u32,
    pub price: Money,
    pub fund: LegPoint,
    pub accounts: Vec<LegPoint>,
}

pub fn trajectory_points(trajectory: &Trajectory) -> Vec<TrajectoryPoint> {
    trajectory
        .rows
        .iter()
        .map(|r| TrajectoryPoint {
            seq: r.seq,
            day: r.day,
            price: r.price,
            fund: (&r.fund).into(),
            accounts: r.accounts.iter().map(Into::into).collect(),
        })
        .collect()
}

/// A single method (or replay) with its per-fill ledger trajectory. Batch
/// methods have no per-fill trajectory; their day averages are in the row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: Config,
    pub accounts: Vec<AccountEcho>,
    pub result: MethodRow,
    pub trajectory: Vec<TrajectoryPoint>,
}

impl RunReport {
    pub fn new(
        config: &Config,
        accounts: &AccountSet,
        result: MethodRow,
        trajectory: Option<&Trajectory>,
    ) -> Self {
        RunReport {
            config: config.clone(),
            accounts: echo_accounts(accounts),
            result,
            trajectory: trajectory.map(trajectory_points).unwrap_or_default(),
        }
    }
}

impl Report for RunReport {
    /// The per-fill trajectory when there is one, otherwise the day averages.
    fn to_csv(&self) -> String {
        let ids: Vec<&str> = self
            .accounts
            .iter()
            .map(|a| a.account_id.as_str())
            .collect();
        if self.trajectory.is_empty() {
            let mut out = String::from("day,side,avg_price");
            for id in &ids {
                out.push_str(&format!(",qty_{id}"));
            }
            out.push('\n');
            for d in &self.result.day_averages {
                let side = match d.side {
                    Side::Buy => "buy",
                    Side::Sell => "sell",
                };
                out.push_str(&format!("{},{},{}", d.day, side, d.avg_price));
                for q in &d.parts {
                    out.push_str(&format!(",{q}"));
                }
                out.push('\n');
            }
            return out;
        }
        let mut out = String::from("seq,day,price,qty,np,bucket_pnl,cum_pnl");
        for id in &ids {
            out.push_str(&format!(",qty_{id},np_{id},bucket_pnl_{id},cum_pnl_{id}"));
        }
        out.push('\n');
        let leg = |l: &LegPoint| {
            format!(
                "{},{},{},{}",
                l.qty,
                l.position,
                l.bucket_pnl.as_deref().unwrap_or(""),
                l.cum_pnl
            )
        };
        for p in &self.trajectory {
            out.push_str(&format!("{},{},{},{}", p.seq, p.day, p.price, leg(&p.fund)));
            for a in &p.accounts {
                out.push(',');
                out.push_str(&leg(a));
            }
            out.push('\n');
        }
        out
    }
}

impl Report for SimReport {
    fn to_csv(&self) -> String {
        self.csv_table()
    }
}
