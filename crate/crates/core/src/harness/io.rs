//! CSV inputs: blotters (`seq,day,price,qty`), accounts (`account_id,aum`)
//! and fixed allocation files (`seq,account_id,qty`).

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, Trim};

use super::HarnessError;
use crate::ledger::{Account, AccountSet, AllocationVector, Fill, LedgerError};
use crate::money::Money;

fn read(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

struct Table<'a> {
    file: &'a str,
    columns: Vec<usize>,
    names: &'static [&'static str],
    rows: Vec<(u64, StringRecord)>,
}

impl Table<'_> {
    fn field<'r>(&self, record: &'r StringRecord, col: usize) -> &'r str {
        record.get(self.columns[col]).unwrap_or("")
    }

    fn err(&self, line: u64, col: usize, message: impl Into<String>) -> HarnessError {
        HarnessError::Parse {
            file: self.file.to_string(),
            line,
            field: self.names[col].to_string(),
            message: message.into(),
        }
    }

    fn parse<T: std::str::FromStr>(
        &self,
        line: u64,
        record: &StringRecord,
        col: usize,
    ) -> Result<T, HarnessError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.field(record, col);
        raw.parse::<T>()
            .map_err(|e| self.err(line, col, format!("`{raw}`: {e}")))
    }
}

fn table<'a>(
    text: &str,
    file: &'a str,
    names: &'static [&'static str],
) -> Result<Table<'a>, HarnessError> {
    let mut reader = ReaderBuilder::new()
        .trim(Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header_err = |message: String| HarnessError::Parse {
        file: file.to_string(),
        line: 1,
        field: "header".to_string(),
        message,
    };
    let headers = reader
        .headers()
        .map_err(|e| header_err(e.to_string()))?
        .clone();
    let columns = names
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(name))
                .ok_or_else(|| header_err(format!("missing column `{name}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            HarnessError::Parse {
                file: file.to_string(),
                line,
                field: "row".to_string(),
                message: e.to_string(),
            }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        rows.push((line, record));
    }
    if rows.is_empty() {
        return Err(HarnessError::Empty {
            file: file.to_string(),
        });
    }
    Ok(Table {
        file,
        columns,
        names,
        rows,
    })
}

const BLOTTER: &[&str] = &["seq", "day", "price", "qty"];

pub fn parse_blotter_str(text: &str, file: &str) -> Result<Vec<Fill>, HarnessError> {
    let t = table(text, file, BLOTTER)?;
    let mut fills: Vec<Fill> = Vec::with_capacity(t.rows.len());
    for (line, rec) in &t.rows {
        let line = *line;
        let seq: u64 = t.parse(line, rec, 0)?;
        let day: u32 = t.parse(line, rec, 1)?;
        let price: Money = t.parse(line, rec, 2)?;
        let qty: i64 = t.parse(line, rec, 3)?;
        let fill = Fill::new(seq, day, price, qty).map_err(|e| {
            let col = match e {
                LedgerError::ZeroQuantity { .. } => 3,
                LedgerError::NonPositivePrice { .. } => 2,
                _ => 1,
            };
            t.err(line, col, e.to_string())
        })?;
        if let Some(prev) = fills.last() {
            if fill.seq <= prev.seq {
                return Err(t.err(
                    line,
                    0,
                    format!("seq {} does not follow {}", fill.seq, prev.seq),
                ));
            }
            if fill.day < prev.day {
                return Err(t.err(
                    line,
                    1,
                    format!("day {} precedes day {}", fill.day, prev.day),
                ));
            }
        }
        fills.push(fill);
    }
    Ok(fills)
}

pub fn parse_blotter(path: &Path) -> Result<Vec<Fill>, HarnessError> {
    parse_blotter_str(&read(path)?, &path.display().to_string())
}

const ACCOUNTS: &[&str] = &["account_id", "aum"];

pub fn parse_accounts_str(text: &str, file: &str) -> Result<AccountSet, HarnessError> {
    let t = table(text, file, ACCOUNTS)?;
    let mut seen = HashSet::new();
    let mut accounts = Vec::with_capacity(t.rows.len());
    for (line, rec) in &t.rows {
        let line = *line;
        let id = t.field(rec, 0).to_string();
        if id.is_empty() {
            return Err(t.err(line, 0, "empty account id"));
        }
        if !seen.insert(id.clone()) {
            return Err(t.err(line, 0, format!("duplicate account id `{id}`")));
        }
        let aum: Money = t.parse(line, rec, 1)?;
        if !aum.is_positive() {
            return Err(t.err(line, 1, "AUM must be positive"));
        }
        accounts.push(Account::new(id, aum));
    }
    Ok(AccountSet::new(accounts)?)
}

pub fn parse_accounts(path: &Path) -> Result<AccountSet, HarnessError> {
    parse_accounts_str(&read(path)?, &path.display().to_string())
}

const ALLOCATIONS: &[&str] = &["seq", "account_id", "qty"];

/// Builds one allocation vector per fill; accounts without a row get 0.
pub fn parse_allocations_str(
    text: &str,
    file: &str,
    fills: &[Fill],
    accounts: &AccountSet,
) -> Result<Vec<AllocationVector>, HarnessError> {
    let t = table(text, file, ALLOCATIONS)?;
    let by_seq: HashMap<u64, usize> = fills.iter().enumerate().map(|(i, f)| (f.seq, i)).collect();
    let mut out: Vec<AllocationVector> = fills
        .iter()
        .map(|f| AllocationVector::new(f.seq, vec![0; accounts.len()]))
        .collect();
    let mut seen = HashSet::new();
    for (line, rec) in &t.rows {
        let line = *line;
        let seq: u64 = t.parse(line, rec, 0)?;
        let fi = *by_seq
            .get(&seq)
            .ok_or_else(|| t.err(line, 0, format!("no fill with seq {seq}")))?;
        let id = t.field(rec, 1);
        let ai = accounts
            .index_of(id)
            .ok_or_else(|| t.err(line, 1, format!("unknown account `{id}`")))?;
        if !seen.insert((seq, ai)) {
            return Err(t.err(
                line,
                1,
                format!("second row for account `{id}` on seq {seq}"),
            ));
        }
        out[fi].parts[ai] = t.parse(line, rec, 2)?;
    }
    Ok(out)
}

pub fn parse_allocations(
    path: &Path,
    fills: &[Fill],
    accounts: &AccountSet,
) -> Result<Vec<AllocationVector>, HarnessError> {
    parse_allocations_str(&read(path)?, &path.display().to_string(), fills, accounts)
}

/// Renders fills in blotter CSV form.
pub fn blotter_csv(fills: &[Fill]) -> String {
    let mut out = String::from("seq,day,price,qty\n");
    for f in fills {
        out.push_str(&format!("{},{},{},{}\n", f.seq, f.day, f.price, f.qty));
    }
    out
}

pub fn accounts_csv(accounts: &AccountSet) -> String {
    let mut out = String::from("account_id,aum\n");
    for a in accounts.accounts() {
        out.push_str(&format!("{},{}\n", a.id, a.aum));
    }
    out
}

/// Renders allocations in the `seq,account_id,qty` schema, zero parts omitted.
pub fn allocations_csv(allocations: &[AllocationVector], accounts: &AccountSet) -> String {
    let mut out = String::from("seq,account_id,qty\n");
    for a in allocations {
        for (acct, &q) in accounts.accounts().iter().zip(&a.parts) {
            if q != 0 {
                out.push_str(&format!("{},{},{}\n", a.fill_seq, acct.id, q));
            }
        }
    }
    out
}
