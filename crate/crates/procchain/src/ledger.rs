//! The append-only chain of record.
//!
//! Every submitted request, committed or rejected, becomes one record;
//! records are sealed into blocks of at most `batch_size`, each block
//! hashing its index, its predecessor's hash, and its records' canonical
//! serialization. Verification recomputes the whole chain; replay re-runs
//! every request through the engine and demands that each recorded verdict
//! reproduces, so a verified, replayed ledger is the full proof of the
//! current world state.
//!
//! On disk: a header line `procchain-ledger v1`, then one block per line in
//! canonical JSON.

use crate::acl::AclPolicy;
use crate::canonical::{self, ZERO_DIGEST};
use crate::engine::{self, TransactionOutcome, TransactionRequest, WorldState};
use crate::process::{ProcessDefinition, ProcessStatus};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

pub const LEDGER_HEADER: &str = "procchain-ledger v1";

/// One recorded submission.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxRecord {
    /// Zero-based position across the whole chain.
    pub seq: u64,
    pub request: TransactionRequest,
    pub outcome: TransactionOutcome,
    /// Status of the addressed asset after this record; `None` when the
    /// asset does not exist (registrations, failed creates, unknown ids).
    pub resulting_asset_status: Option<ProcessStatus>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub index: u64,
    pub prev_hash: String,
    pub records: Vec<TxRecord>,
    /// SHA-256 over the canonical serialization of (index, prev_hash,
    /// records).
    pub hash: String,
}

#[derive(Serialize)]
struct BlockContent<'a> {
    index: u64,
    prev_hash: &'a str,
    records: &'a [TxRecord],
}

/// Hash a block's content. What gets hashed never includes the stored
/// `hash` field itself.
pub fn block_hash(index: u64, prev_hash: &str, records: &[TxRecord]) -> String {
    canonical::digest_value(&BlockContent {
        index,
        prev_hash,
        records,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Chain {
    blocks: Vec<Block>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    /// Stored hash differs from the recomputed one.
    HashMismatch,
    /// Index or predecessor hash does not continue the chain.
    LinkBroken,
    /// Record seqs are not the consecutive run 0,1,2,...
    SeqGap,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::HashMismatch => f.write_str("HASH_MISMATCH"),
            ViolationKind::LinkBroken => f.write_str("LINK_BROKEN"),
            ViolationKind::SeqGap => f.write_str("SEQ_GAP"),
        }
    }
}

/// First problem found while verifying, at the given block position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChainViolation {
    pub block: u64,
    pub kind: ViolationKind,
}

impl fmt::Display for ChainViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at block {}", self.kind, self.block)
    }
}

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a ledger file: first line must be `{LEDGER_HEADER}`")]
    BadHeader,
    #[error("malformed ledger file at line {line}: {message}")]
    MalformedFile { line: usize, message: String },
    #[error("batch size must be at least 1")]
    InvalidBatchSize,
    #[error("record seq {found} does not continue the chain (expected {expected})")]
    SeqOutOfOrder { expected: u64, found: u64 },
    #[error("chain verification failed: {0}")]
    Verification(ChainViolation),
    #[error(
        "replay diverged at seq {seq}: ledger records {recorded}, rules produce {reproduced}"
    )]
    ReplayVerdictMismatch {
        seq: u64,
        recorded: TransactionOutcome,
        reproduced: TransactionOutcome,
    },
    #[error("replay diverged at seq {seq}: recorded asset status does not reproduce")]
    ReplayStatusMismatch { seq: u64 },
}

impl Chain {
    /// Assembles a chain as-is, without verification; [`Chain::verify`] is
    /// the integrity gate.
    pub fn from_blocks(blocks: Vec<Block>) -> Self {
        Chain { blocks }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tip_hash(&self) -> &str {
        self.blocks.last().map(|b| b.hash.as_str()).unwrap_or(ZERO_DIGEST)
    }

    pub fn records(&self) -> impl Iterator<Item = &TxRecord> {
        self.blocks.iter().flat_map(|b| b.records.iter())
    }

    pub fn record_count(&self) -> usize {
        self.blocks.iter().map(|b| b.records.len()).sum()
    }

    /// Seals `records` into blocks of at most `batch_size`, linking each to
    /// the current tip. Record seqs must continue the chain's run.
    pub fn append(&mut self, records: Vec<TxRecord>, batch_size: usize) -> Result<(), LedgerError> {
        if batch_size == 0 {
            return Err(LedgerError::InvalidBatchSize);
        }
        let mut expected = self.record_count() as u64;
        for record in &records {
            if record.seq != expected {
                return Err(LedgerError::SeqOutOfOrder {
                    expected,
                    found: record.seq,
                });
            }
            expected += 1;
        }
        for chunk in records.chunks(batch_size) {
            let index = self.blocks.len() as u64;
            let prev_hash = self.tip_hash().to_string();
            let hash = block_hash(index, &prev_hash, chunk);
            self.blocks.push(Block {
                index,
                prev_hash,
                records: chunk.to_vec(),
                hash,
            });
        }
        Ok(())
    }

    /// Integrity check: recomputed hashes, the predecessor links, block
    /// indices, and the global record-seq run. Reports the first violation.
    pub fn verify(&self) -> Result<(), ChainViolation> {
        let mut expected_seq = 0u64;
        for (pos, block) in self.blocks.iter().enumerate() {
            let pos_u64 = pos as u64;
            let violation = |kind| ChainViolation {
                block: pos_u64,
                kind,
            };
            if block_hash(block.index, &block.prev_hash, &block.records) != block.hash {
                return Err(violation(ViolationKind::HashMismatch));
            }
            if block.index != pos_u64 {
                return Err(violation(ViolationKind::LinkBroken));
            }
            let expected_prev = if pos == 0 {
                ZERO_DIGEST
            } else {
                self.blocks[pos - 1].hash.as_str()
            };
            if block.prev_hash != expected_prev {
                return Err(violation(ViolationKind::LinkBroken));
            }
            for record in &block.records {
                if record.seq != expected_seq {
                    return Err(violation(ViolationKind::SeqGap));
                }
                expected_seq += 1;
            }
        }
        Ok(())
    }

    /// Writes the chain to `path` (header line plus one canonical-JSON
    /// block per line), atomically via a sibling temp file.
    pub fn persist(&self, path: &Path) -> Result<(), LedgerError> {
        let mut out = String::with_capacity(64 * (self.blocks.len() + 1));
        out.push_str(LEDGER_HEADER);
        out.push('\n');
        for block in &self.blocks {
            out.push_str(&canonical::to_canonical_json(block));
            out.push('\n');
        }
        let tmp_name = match path.file_name().and_then(|n| n.to_str()) {
            Some(name) => format!("{name}.tmp"),
            None => "ledger.tmp".to_string(),
        };
        let tmp = path.with_file_name(tmp_name);
        {
            let mut file = fs::File::create(&tmp)?;
            file.write_all(out.as_bytes())?;
            file.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Reads a persisted chain. Structural errors (bad header, a line that
    /// is not the canonical encoding of a block) fail here; hash integrity
    /// is [`Chain::verify`]'s job.
    ///
    /// Every line must re-encode byte-identically: parsers normalize, so
    /// without this check an edit the parser happens to erase (a mangled
    /// key absorbed by a default, reordered keys, inserted whitespace)
    /// would slip past hash verification.
    pub fn load(path: &Path) -> Result<Self, LedgerError> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        match lines.next() {
            Some(LEDGER_HEADER) => {}
            _ => return Err(LedgerError::BadHeader),
        }
        let mut blocks = Vec::new();
        for (idx, line) in lines.enumerate() {
            let block: Block = serde_json::from_str(line).map_err(|e| LedgerError::MalformedFile {
                line: idx + 2,
                message: e.to_string(),
            })?;
            if canonical::to_canonical_json(&block) != line {
                return Err(LedgerError::MalformedFile {
                    line: idx + 2,
                    message: "line is not the canonical block encoding".to_string(),
                });
            }
            blocks.push(block);
        }
        Ok(Chain { blocks })
    }
}

/// Replay with a per-record observer called after each record has been
/// re-applied; the observer sees the record and the state it produced.
pub fn replay_with(
    chain: &Chain,
    def: &ProcessDefinition,
    policy: &AclPolicy,
    mut observer: impl FnMut(&TxRecord, &WorldState),
) -> Result<WorldState, LedgerError> {
    chain.verify().map_err(LedgerError::Verification)?;
    let mut state = WorldState::default();
    for record in chain.records() {
        let outcome = engine::apply_request(&mut state, def, policy, &record.request);
        if outcome != record.outcome {
            return Err(LedgerError::ReplayVerdictMismatch {
                seq: record.seq,
                recorded: record.outcome,
                reproduced: outcome,
            });
        }
        let status = record
            .request
            .asset_id()
            .and_then(|id| state.assets.get(id))
            .map(|a| a.status);
        if status != record.resulting_asset_status {
            return Err(LedgerError::ReplayStatusMismatch { seq: record.seq });
        }
        observer(record, &state);
    }
    Ok(state)
}

/// Verifies the chain, then re-derives world state by re-running every
/// recorded request, requiring each verdict to reproduce exactly.
pub fn replay(
    chain: &Chain,
    def: &ProcessDefinition,
    policy: &AclPolicy,
) -> Result<WorldState, LedgerError> {
    replay_with(chain, def, policy, |_, _| {})
}
