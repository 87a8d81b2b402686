//! Collaborative business processes executed as guarded transactions over
//! role-bound assets, recorded on an append-only hash-chained ledger.
//!
//! A process definition declares the parties and the transactions each party
//! may perform, with boolean guards over the flags set by earlier
//! transactions. The engine admits a transaction only when the invoker's
//! identity, the access-control policy, and the guard all agree; every
//! attempt, committed or rejected, is recorded on the ledger. The ledger can
//! be re-verified and deterministically replayed into the exact world state
//! that produced it.
//!
//! Module map:
//!
//! - [`process`]: definition text format, guard evaluation, enabled set
//! - [`acl`]: ordered first-match access-control rules with bindings
//! - [`engine`]: participants, assets, the submit pipeline, queries
//! - [`ledger`]: hash-chained blocks, persistence, verification, replay
//! - [`canonical`]: canonical serialization and hashing shared by the above
//! - [`harness`]: seeded experiment runner and report rendering
//! - [`cli`]: the `procchain` command-line front end

pub mod acl;
pub mod canonical;
pub mod cli;
pub mod engine;
pub mod harness;
pub mod ledger;
pub mod process;

pub use acl::{AclOperation, AclPolicy, AclRule, Binding, Decision, Effect};
pub use engine::{
    Network, OrderAsset, Participant, RejectReason, TransactionOutcome, TransactionRequest,
    WorldState,
};
pub use ledger::{Block, Chain, ChainViolation, LedgerError, TxRecord};
pub use process::{FlagState, GuardExpr, ProcessDefinition, ProcessStatus, TransactionDef};
