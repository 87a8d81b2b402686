//! Transaction validation and state transition.
//!
//! World state is the identity registry plus all order assets. Requests go
//! through a fixed pipeline (identity, asset existence, life cycle,
//! once-only, ACL, guard) and either commit, mutating state, or reject,
//! leaving state untouched. Either way the caller records the attempt on
//! the ledger; [`crate::ledger::replay`] re-runs this pipeline record by
//! record and must reproduce every verdict.

use crate::acl::{self, AclOperation, AclPolicy, AclResource};
use crate::canonical;
use crate::ledger::{Chain, LedgerError, TxRecord};
use crate::process::{
    self, FlagState, PartyRole, ProcessDefinition, ProcessStatus, TransactionKind, Violation,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// The one asset type this engine manages.
pub const ORDER_ASSET_TYPE: &str = "Order";

/// Set-valued relationship holding the participants currently expected to
/// act on an asset.
pub const RESPONSIBLE_FIELD: &str = "responsible";

/// Identity allowed to register participants. Not a participant itself and
/// holds no rights on orders.
pub const ADMIN_ID: &str = "admin";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub id: String,
    pub role: PartyRole,
    pub first_name: String,
    pub last_name: String,
    pub company_name: String,
    pub position: String,
}

/// A participant id the asset's named relationship field points at.
#[derive(Clone, Copy, Debug)]
pub enum RelationshipRef<'a> {
    One(&'a str),
    Many(&'a BTreeSet<String>),
}

/// One process instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderAsset {
    pub id: String,
    pub name: String,
    pub description: String,
    pub status: ProcessStatus,
    /// One boolean per task transaction of the definition.
    pub flags: BTreeMap<String, bool>,
    /// Role name to participant id, one entry per declared party.
    pub parties: BTreeMap<String, String>,
    /// Participants bound in the actor role of some currently enabled
    /// task; recomputed after every commit touching this asset.
    pub responsible: BTreeSet<String>,
}

impl OrderAsset {
    pub fn asset_type(&self) -> &'static str {
        ORDER_ASSET_TYPE
    }

    /// Resolves a relationship field: a party role or [`RESPONSIBLE_FIELD`].
    pub fn relationship(&self, field: &str) -> Option<RelationshipRef<'_>> {
        if field == RESPONSIBLE_FIELD {
            return Some(RelationshipRef::Many(&self.responsible));
        }
        self.parties.get(field).map(|id| RelationshipRef::One(id))
    }

    pub fn flag_state(&self) -> FlagState {
        FlagState {
            flags: self.flags.clone(),
            status: self.status,
        }
    }

    fn set_flag_state(&mut self, state: FlagState) {
        self.flags = state.flags;
        self.status = state.status;
    }
}

/// What a request asks for.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RequestPayload {
    /// Admin-only identity registration.
    Register { participant: Participant },
    /// Instantiate the process: run the create transaction.
    Create {
        asset_id: String,
        name: String,
        description: String,
        /// Role name to participant id for every party except the create
        /// actor's role, which is bound to the invoker.
        parties: BTreeMap<String, String>,
    },
    /// Run a task transaction on an existing asset.
    Task { asset_id: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionRequest {
    /// Transaction name for create/task; `"register"` for registrations.
    pub tx_name: String,
    pub invoker_id: String,
    /// Caller-chosen replay guard: a nonce equal to one already applied
    /// is rejected as malformed.
    pub nonce: u64,
    pub payload: RequestPayload,
}

/// Name recorded for registration requests, which run no process
/// transaction.
pub const REGISTER_TX_NAME: &str = "register";

impl TransactionRequest {
    pub fn register(invoker_id: impl Into<String>, nonce: u64, participant: Participant) -> Self {
        TransactionRequest {
            tx_name: REGISTER_TX_NAME.to_string(),
            invoker_id: invoker_id.into(),
            nonce,
            payload: RequestPayload::Register { participant },
        }
    }

    pub fn create(
        tx_name: impl Into<String>,
        invoker_id: impl Into<String>,
        nonce: u64,
        asset_id: impl Into<String>,
        name: impl Into<String>,
        description: impl Into<String>,
        parties: BTreeMap<String, String>,
    ) -> Self {
        TransactionRequest {
            tx_name: tx_name.into(),
            invoker_id: invoker_id.into(),
            nonce,
            payload: RequestPayload::Create {
                asset_id: asset_id.into(),
                name: name.into(),
                description: description.into(),
                parties,
            },
        }
    }

    pub fn task(
        tx_name: impl Into<String>,
        invoker_id: impl Into<String>,
        nonce: u64,
        asset_id: impl Into<String>,
    ) -> Self {
        TransactionRequest {
            tx_name: tx_name.into(),
            invoker_id: invoker_id.into(),
            nonce,
            payload: RequestPayload::Task {
                asset_id: asset_id.into(),
            },
        }
    }

    /// Asset the request addresses, if any.
    pub fn asset_id(&self) -> Option<&str> {
        match &self.payload {
            RequestPayload::Register { .. } => None,
            RequestPayload::Create { asset_id, .. } | RequestPayload::Task { asset_id } => {
                Some(asset_id)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectReason {
    UnknownIdentity,
    UnknownAsset,
    AclDenied,
    GuardFalse,
    AlreadyPerformed,
    AssetClosed,
    DuplicateAssetId,
    Malformed,
}

impl RejectReason {
    pub fn code(&self) -> &'static str {
        match self {
            RejectReason::UnknownIdentity => "UNKNOWN_IDENTITY",
            RejectReason::UnknownAsset => "UNKNOWN_ASSET",
            RejectReason::AclDenied => "ACL_DENIED",
            RejectReason::GuardFalse => "GUARD_FALSE",
            RejectReason::AlreadyPerformed => "ALREADY_PERFORMED",
            RejectReason::AssetClosed => "ASSET_CLOSED",
            RejectReason::DuplicateAssetId => "DUPLICATE_ASSET_ID",
            RejectReason::Malformed => "MALFORMED",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// A verdict is committed or rejected-with-reason by construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reason", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TransactionOutcome {
    Committed,
    Rejected(RejectReason),
}

impl TransactionOutcome {
    pub fn is_committed(&self) -> bool {
        matches!(self, TransactionOutcome::Committed)
    }

    pub fn reason(&self) -> Option<RejectReason> {
        match self {
            TransactionOutcome::Committed => None,
            TransactionOutcome::Rejected(r) => Some(*r),
        }
    }
}

impl fmt::Display for TransactionOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransactionOutcome::Committed => f.write_str("COMMITTED"),
            TransactionOutcome::Rejected(r) => write!(f, "REJECTED {r}"),
        }
    }
}

/// Everything the rules see: identities, assets, and the nonces of applied
/// requests. Hash-stable via canonical serialization.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldState {
    pub participants: BTreeMap<String, Participant>,
    pub assets: BTreeMap<String, OrderAsset>,
    /// Nonces of committed requests only; rejected requests leave no trace
    /// in state.
    pub applied_nonces: BTreeSet<u64>,
}

impl WorldState {
    pub fn canonical_hash(&self) -> String {
        canonical::digest_value(self)
    }

    pub fn participants_with_role<'a>(
        &'a self,
        role: &'a PartyRole,
    ) -> impl Iterator<Item = &'a Participant> + 'a {
        self.participants.values().filter(move |p| p.role == *role)
    }
}

/// Validates `request` against the rules and applies it. State changes
/// exactly when the result is `Committed`.
pub fn apply_request(
    state: &mut WorldState,
    def: &ProcessDefinition,
    policy: &AclPolicy,
    request: &TransactionRequest,
) -> TransactionOutcome {
    match decide_request(state, def, policy, request) {
        Ok(commit) => {
            apply_commit(state, request, commit);
            TransactionOutcome::Committed
        }
        Err(reason) => TransactionOutcome::Rejected(reason),
    }
}

/// State change a validated request performs.
enum Commit {
    Register(Participant),
    CreateAsset(OrderAsset),
    TaskDone {
        asset_id: String,
        next: FlagState,
        responsible: BTreeSet<String>,
    },
}

fn decide_request(
    state: &WorldState,
    def: &ProcessDefinition,
    policy: &AclPolicy,
    request: &TransactionRequest,
) -> Result<Commit, RejectReason> {
    if state.applied_nonces.contains(&request.nonce) {
        return Err(RejectReason::Malformed);
    }
    match &request.payload {
        RequestPayload::Register { participant } => {
            decide_register(state, def, request, participant)
        }
        RequestPayload::Create {
            asset_id,
            name,
            description,
            parties,
        } => decide_create(state, def, policy, request, asset_id, name, description, parties),
        RequestPayload::Task { asset_id } => decide_task(state, def, policy, request, asset_id),
    }
}

fn decide_register(
    state: &WorldState,
    def: &ProcessDefinition,
    request: &TransactionRequest,
    participant: &Participant,
) -> Result<Commit, RejectReason> {
    if request.invoker_id != ADMIN_ID {
        return Err(RejectReason::AclDenied);
    }
    if request.tx_name != REGISTER_TX_NAME {
        return Err(RejectReason::Malformed);
    }
    if participant.id.is_empty() {
        return Err(RejectReason::Malformed);
    }
    if !def.has_party(&participant.role) {
        return Err(RejectReason::Malformed);
    }
    if participant.id == ADMIN_ID || state.participants.contains_key(&participant.id) {
        return Err(RejectReason::DuplicateAssetId);
    }
    Ok(Commit::Register(participant.clone()))
}

#[allow(clippy::too_many_arguments)]
fn decide_create(
    state: &WorldState,
    def: &ProcessDefinition,
    policy: &AclPolicy,
    request: &TransactionRequest,
    asset_id: &str,
    name: &str,
    description: &str,
    parties: &BTreeMap<String, String>,
) -> Result<Commit, RejectReason> {
    let invoker = lookup_invoker(state, &request.invoker_id)?;
    let tx = def
        .find_transaction(&request.tx_name)
        .filter(|t| t.kind == TransactionKind::Create)
        .ok_or(RejectReason::Malformed)?;
    if asset_id.is_empty() {
        return Err(RejectReason::Malformed);
    }
    if state.assets.contains_key(asset_id) {
        return Err(RejectReason::DuplicateAssetId);
    }

    // The invoker fills the create actor's role; the payload must name a
    // registered, correctly-roled participant for every other party.
    let mut bound: BTreeMap<String, String> = BTreeMap::new();
    bound.insert(tx.actor.as_str().to_string(), invoker.id.clone());
    for role in &def.parties {
        if *role == tx.actor {
            continue;
        }
        let id = parties.get(role.as_str()).ok_or(RejectReason::Malformed)?;
        let p = state.participants.get(id).ok_or(RejectReason::Malformed)?;
        if p.role != *role {
            return Err(RejectReason::Malformed);
        }
        bound.insert(role.as_str().to_string(), id.clone());
    }
    if parties.keys().any(|k| !def.has_party(&PartyRole::new(k.clone())) || k == tx.actor.as_str())
    {
        return Err(RejectReason::Malformed);
    }

    let mut asset = OrderAsset {
        id: asset_id.to_string(),
        name: name.to_string(),
        description: description.to_string(),
        status: ProcessStatus::Active,
        flags: def.initial_state().flags,
        parties: bound,
        responsible: BTreeSet::new(),
    };

    let decision = acl::evaluate(
        policy,
        invoker,
        AclOperation::Create,
        &AclResource::Transaction {
            name: &request.tx_name,
            asset: &asset,
        },
    )
    // A policy referencing fields the asset lacks fails closed.
    .map_err(|_| RejectReason::AclDenied)?;
    if !decision.is_allowed() {
        return Err(RejectReason::AclDenied);
    }

    asset.responsible = responsible_set(def, &asset).map_err(|_| RejectReason::Malformed)?;
    Ok(Commit::CreateAsset(asset))
}

fn decide_task(
    state: &WorldState,
    def: &ProcessDefinition,
    policy: &AclPolicy,
    request: &TransactionRequest,
    asset_id: &str,
) -> Result<Commit, RejectReason> {
    let invoker = lookup_invoker(state, &request.invoker_id)?;
    let tx = def
        .find_transaction(&request.tx_name)
        .filter(|t| t.kind == TransactionKind::Task)
        .ok_or(RejectReason::Malformed)?;
    let asset = state.assets.get(asset_id).ok_or(RejectReason::UnknownAsset)?;
    if asset.status != ProcessStatus::Active {
        return Err(RejectReason::AssetClosed);
    }
    match asset.flags.get(&tx.name) {
        Some(false) => {}
        Some(true) => return Err(RejectReason::AlreadyPerformed),
        None => return Err(RejectReason::Malformed),
    }

    let decision = acl::evaluate(
        policy,
        invoker,
        AclOperation::Update,
        &AclResource::Transaction {
            name: &request.tx_name,
            asset,
        },
    )
    .map_err(|_| RejectReason::AclDenied)?;
    if !decision.is_allowed() {
        return Err(RejectReason::AclDenied);
    }

    let current = asset.flag_state();
    let guard_ok =
        process::evaluate_guard(&tx.guard, &current).map_err(|_| RejectReason::Malformed)?;
    if !guard_ok {
        return Err(RejectReason::GuardFalse);
    }

    let next = process::apply_task(def, &current, &tx.name).map_err(|_| RejectReason::Malformed)?;
    let mut after = asset.clone();
    after.set_flag_state(next.clone());
    let responsible = responsible_set(def, &after).map_err(|_| RejectReason::Malformed)?;
    Ok(Commit::TaskDone {
        asset_id: asset_id.to_string(),
        next,
        responsible,
    })
}

fn lookup_invoker<'a>(
    state: &'a WorldState,
    invoker_id: &str,
) -> Result<&'a Participant, RejectReason> {
    if invoker_id == ADMIN_ID {
        // Known identity, but no rights on process transactions.
        return Err(RejectReason::AclDenied);
    }
    state
        .participants
        .get(invoker_id)
        .ok_or(RejectReason::UnknownIdentity)
}

fn apply_commit(state: &mut WorldState, request: &TransactionRequest, commit: Commit) {
    match commit {
        Commit::Register(p) => {
            state.participants.insert(p.id.clone(), p);
        }
        Commit::CreateAsset(asset) => {
            state.assets.insert(asset.id.clone(), asset);
        }
        Commit::TaskDone {
            asset_id,
            next,
            responsible,
        } => {
            let asset = state
                .assets
                .get_mut(&asset_id)
                .expect("decide_task checked existence");
            asset.set_flag_state(next);
            asset.responsible = responsible;
        }
    }
    state.applied_nonces.insert(request.nonce);
}

/// Participants bound in the actor role of some enabled task. Empty for
/// closed assets.
pub fn responsible_set(
    def: &ProcessDefinition,
    asset: &OrderAsset,
) -> Result<BTreeSet<String>, process::ProcessError> {
    let enabled = process::enabled_transactions(def, &asset.flag_state())?;
    let mut out = BTreeSet::new();
    for task in &enabled {
        let tx = def
            .find_transaction(task)
            .expect("enabled task exists in definition");
        if let Some(id) = asset.parties.get(tx.actor.as_str()) {
            out.insert(id.clone());
        }
    }
    Ok(out)
}

/// Why a query returned nothing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueryDenied {
    /// Invoker is not a registered participant.
    UnknownIdentity,
    /// Asset absent or READ denied; callers cannot tell which.
    NotVisible,
}

/// READ-gated asset lookup.
pub fn query_asset<'a>(
    state: &'a WorldState,
    policy: &AclPolicy,
    invoker_id: &str,
    asset_id: &str,
) -> Result<&'a OrderAsset, QueryDenied> {
    if invoker_id == ADMIN_ID {
        return Err(QueryDenied::NotVisible);
    }
    let invoker = state
        .participants
        .get(invoker_id)
        .ok_or(QueryDenied::UnknownIdentity)?;
    let asset = state.assets.get(asset_id).ok_or(QueryDenied::NotVisible)?;
    let allowed = acl::evaluate(policy, invoker, AclOperation::Read, &AclResource::Asset(asset))
        .map(|d| d.is_allowed())
        .unwrap_or(false);
    if allowed {
        Ok(asset)
    } else {
        Err(QueryDenied::NotVisible)
    }
}

/// Ledger records touching an asset, committed and rejected alike, gated by
/// the same READ visibility as [`query_asset`].
pub fn query_history<'a>(
    chain: &'a Chain,
    state: &WorldState,
    policy: &AclPolicy,
    invoker_id: &str,
    asset_id: &str,
) -> Result<Vec<&'a TxRecord>, QueryDenied> {
    query_asset(state, policy, invoker_id, asset_id)?;
    Ok(chain
        .records()
        .filter(|r| r.request.asset_id() == Some(asset_id))
        .collect())
}

/// A definition, its policy, the current state, and the chain of record,
/// kept consistent: every submit appends exactly one record, and blocks are
/// sealed every `batch_size` records.
#[derive(Clone, Debug)]
pub struct Network {
    definition: ProcessDefinition,
    policy: AclPolicy,
    state: WorldState,
    chain: Chain,
    pending: Vec<TxRecord>,
    batch_size: usize,
}

impl Network {
    /// Fresh network with an empty chain. Fails on an invalid definition
    /// or a zero batch size.
    pub fn new(
        definition: ProcessDefinition,
        policy: AclPolicy,
        batch_size: usize,
    ) -> Result<Self, NetworkInitError> {
        if batch_size == 0 {
            return Err(NetworkInitError::ZeroBatchSize);
        }
        let violations = process::validate_definition(&definition);
        if !violations.is_empty() {
            return Err(NetworkInitError::InvalidDefinition(violations));
        }
        Ok(Network {
            definition,
            policy,
            state: WorldState::default(),
            chain: Chain::default(),
            pending: Vec::new(),
            batch_size,
        })
    }

    /// Rebuilds a network from a persisted chain: verifies it, then replays
    /// every record, requiring each recorded verdict to reproduce.
    pub fn from_chain(
        definition: ProcessDefinition,
        policy: AclPolicy,
        chain: Chain,
        batch_size: usize,
    ) -> Result<Self, NetworkOpenError> {
        let mut network = Network::new(definition, policy, batch_size)?;
        let state = crate::ledger::replay(&chain, &network.definition, &network.policy)?;
        network.state = state;
        network.chain = chain;
        Ok(network)
    }

    pub fn definition(&self) -> &ProcessDefinition {
        &self.definition
    }

    pub fn policy(&self) -> &AclPolicy {
        &self.policy
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    /// The sealed chain. Call [`Network::flush`] first if unsealed records
    /// may be pending.
    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn has_pending(&self) -> bool {
        !self.pending.is_empty()
    }

    /// Smallest nonce strictly greater than every recorded one.
    pub fn next_nonce(&self) -> u64 {
        self.chain
            .records()
            .map(|r| r.request.nonce)
            .chain(self.pending.iter().map(|r| r.request.nonce))
            .max()
            .map(|n| n + 1)
            .unwrap_or(0)
    }

    /// Validates, applies, and records one request.
    pub fn submit(&mut self, request: TransactionRequest) -> TransactionOutcome {
        let outcome = apply_request(&mut self.state, &self.definition, &self.policy, &request);
        let resulting_asset_status = request
            .asset_id()
            .and_then(|id| self.state.assets.get(id))
            .map(|a| a.status);
        let seq = self.chain.record_count() as u64 + self.pending.len() as u64;
        self.pending.push(TxRecord {
            seq,
            request,
            outcome,
            resulting_asset_status,
        });
        if self.pending.len() >= self.batch_size {
            self.flush();
        }
        outcome
    }

    pub fn register_participant(
        &mut self,
        invoker_id: &str,
        nonce: u64,
        participant: Participant,
    ) -> TransactionOutcome {
        self.submit(TransactionRequest::register(invoker_id, nonce, participant))
    }

    /// Seals all pending records into blocks.
    pub fn flush(&mut self) {
        if self.pending.is_empty() {
            return;
        }
        let records = std::mem::take(&mut self.pending);
        self.chain
            .append(records, self.batch_size)
            .expect("submit keeps record seqs contiguous");
    }

    pub fn query_asset(&self, invoker_id: &str, asset_id: &str) -> Result<&OrderAsset, QueryDenied> {
        query_asset(&self.state, &self.policy, invoker_id, asset_id)
    }

    pub fn query_history(
        &self,
        invoker_id: &str,
        asset_id: &str,
    ) -> Result<Vec<&TxRecord>, QueryDenied> {
        query_history(&self.chain, &self.state, &self.policy, invoker_id, asset_id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum NetworkInitError {
    #[error("batch size must be at least 1")]
    ZeroBatchSize,
    #[error("invalid process definition: {0:?}")]
    InvalidDefinition(Vec<Violation>),
}

#[derive(Debug, thiserror::Error)]
pub enum NetworkOpenError {
    #[error(transparent)]
    Init(#[from] NetworkInitError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}
