//! Allocation of bunched orders into whole-contract per-account fills.
//!
//! * [`ledger`]: exact mark-to-market accounting for the fund and accounts.
//! * [`rounding`]: sum-preserving integer rounding with residual policies.
//! * [`methods`]: simple rounding, HPHA and APS.
//! * [`four`]: divergence-minimizing per-fill allocation.
//! * [`harness`]: CSV/TOML inputs, comparison reports and the Monte Carlo
//!   simulator.

pub mod four;
pub mod harness;
pub mod ledger;
pub mod methods;
pub mod money;
pub mod rounding;

pub use four::{FourConfig, SearchMode, SearchStrategy};
pub use ledger::{Account, AccountId, AccountSet, AllocationVector, Fill, LedgerState};
pub use methods::{MethodKind, MethodResult};
pub use money::Money;
pub use rounding::{PolicyKind, ResidualPolicy};
