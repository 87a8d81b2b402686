//! The `procchain` command line.
//!
//! One ledger file is one network. Commands load the file, verify and
//! replay it, act, and persist atomically; an advisory lock on a sibling
//! `.lock` file excludes concurrent invocations. The process definition
//! travels in a sibling `.def` file written at init time, so later
//! invocations agree on the rules; `--definition` overrides it.
//!
//! There is no authentication: `--as` names the identity a request claims,
//! and the access-control policy decides what that identity may do.
//!
//! Exit codes: 0 success or committed; 1 runtime error; 2 usage; 3 not
//! visible; 4 chain violation; 5 experiment enforcement failure; 10-17 the
//! rejection reasons in stable order (UNKNOWN_IDENTITY, UNKNOWN_ASSET,
//! ACL_DENIED, GUARD_FALSE, ALREADY_PERFORMED, ASSET_CLOSED,
//! DUPLICATE_ASSET_ID, MALFORMED).

use crate::acl::policy_for_definition;
use crate::canonical;
use crate::engine::{
    Network, Participant, QueryDenied, RejectReason, TransactionOutcome, TransactionRequest,
};
use crate::harness::{self, Acceptance, ExperimentConfig};
use crate::ledger::Chain;
use crate::process::{
    self, builtin_order_processing, render_guard, ProcessDefinition, TransactionKind,
};
use clap::{Args, Parser, Subcommand};
use std::collections::BTreeMap;
use std::fs;
use std::os::fd::AsRawFd;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "procchain",
    version,
    about = "Business processes as guarded transactions on a hash-chained ledger"
)]
struct Cli {
    /// Ledger file the command operates on
    #[arg(long, global = true, env = "PROCCHAIN_LEDGER", default_value = "procchain.ledger")]
    ledger: PathBuf,
    /// Process definition file; defaults to the ledger's deployed
    /// definition, or the built-in order process
    #[arg(long, global = true)]
    definition: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create an empty ledger and deploy the process definition
    #[command(subcommand)]
    Network(NetworkCmd),
    /// Identity registry operations
    #[command(subcommand)]
    Participant(ParticipantCmd),
    /// Submit process transactions
    #[command(subcommand)]
    Tx(TxCmd),
    /// Visibility-filtered asset views
    #[command(subcommand)]
    Order(OrderCmd),
    /// Chain integrity operations
    #[command(subcommand)]
    Ledger(LedgerCmd),
    /// Seeded end-to-end experiment
    #[command(subcommand)]
    Experiment(ExperimentCmd),
    /// Access-control policy
    #[command(subcommand)]
    Policy(PolicyCmd),
}

#[derive(Subcommand)]
enum NetworkCmd {
    Init,
}

#[derive(Subcommand)]
enum ParticipantCmd {
    Add(ParticipantAdd),
}

#[derive(Args)]
struct ParticipantAdd {
    /// Identity submitting the registration (must be admin)
    #[arg(long = "as", value_name = "IDENTITY")]
    invoker: String,
    #[arg(long)]
    id: String,
    /// Party role declared by the process definition
    #[arg(long)]
    role: String,
    #[arg(long, default_value = "")]
    first_name: String,
    #[arg(long, default_value = "")]
    last_name: String,
    #[arg(long, default_value = "")]
    company: String,
    #[arg(long, default_value = "")]
    position: String,
}

#[derive(Subcommand)]
enum TxCmd {
    Submit(TxSubmit),
}

#[derive(Args)]
struct TxSubmit {
    /// Identity invoking the transaction
    #[arg(long = "as", value_name = "IDENTITY")]
    invoker: String,
    /// Transaction name from the process definition
    #[arg(long)]
    name: String,
    /// Asset id: the target for tasks, the new id for the create
    /// transaction
    #[arg(long)]
    order: String,
    /// Asset display name (create only)
    #[arg(long, default_value = "")]
    order_name: String,
    /// Asset description (create only)
    #[arg(long, default_value = "")]
    description: String,
    /// role=participant binding (create only; repeat per role)
    #[arg(long = "party", value_name = "ROLE=ID")]
    parties: Vec<String>,
}

#[derive(Subcommand)]
enum OrderCmd {
    Show(OrderView),
    History(OrderView),
}

#[derive(Args)]
struct OrderView {
    /// Identity reading the asset
    #[arg(long = "as", value_name = "IDENTITY")]
    invoker: String,
    #[arg(long)]
    order: String,
    /// Canonical JSON instead of plain text
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum LedgerCmd {
    /// Recompute every hash and link
    Verify,
    /// Re-run every record and print the resulting state hash
    Replay,
}

#[derive(Subcommand)]
enum ExperimentCmd {
    Run(ExperimentRun),
}

#[derive(Args)]
struct ExperimentRun {
    #[arg(long, default_value_t = 20)]
    shoppers: u32,
    #[arg(long, default_value_t = 5)]
    sellers: u32,
    #[arg(long, default_value_t = 3)]
    deliveries: u32,
    #[arg(long, default_value_t = 200)]
    orders: u32,
    /// Exact number of accepted orders
    #[arg(long, default_value_t = 126, conflicts_with = "accept_probability")]
    accepted: u32,
    /// Accept each order independently with this probability instead
    #[arg(long)]
    accept_probability: Option<f64>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Records per block
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    /// Write the report as canonical JSON here as well
    #[arg(long)]
    report: Option<PathBuf>,
    /// Persist the experiment's ledger here
    #[arg(long)]
    ledger_out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum PolicyCmd {
    Show,
}

/// Runtime failure with its exit code.
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn new(code: u8, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }

    fn runtime(message: impl std::fmt::Display) -> Self {
        CliError::new(1, message.to_string())
    }
}

fn reason_exit(reason: RejectReason) -> u8 {
    match reason {
        RejectReason::UnknownIdentity => 10,
        RejectReason::UnknownAsset => 11,
        RejectReason::AclDenied => 12,
        RejectReason::GuardFalse => 13,
        RejectReason::AlreadyPerformed => 14,
        RejectReason::AssetClosed => 15,
        RejectReason::DuplicateAssetId => 16,
        RejectReason::Malformed => 17,
    }
}

pub fn run() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<u8, CliError> {
    match &cli.command {
        Command::Network(NetworkCmd::Init) => network_init(cli),
        Command::Participant(ParticipantCmd::Add(args)) => participant_add(cli, args),
        Command::Tx(TxCmd::Submit(args)) => tx_submit(cli, args),
        Command::Order(OrderCmd::Show(args)) => order_show(cli, args),
        Command::Order(OrderCmd::History(args)) => order_history(cli, args),
        Command::Ledger(LedgerCmd::Verify) => ledger_verify(cli),
        Command::Ledger(LedgerCmd::Replay) => ledger_replay(cli),
        Command::Experiment(ExperimentCmd::Run(args)) => experiment_run(args),
        Command::Policy(PolicyCmd::Show) => policy_show(cli),
    }
}

/// Exclusive advisory lock, released when the returned file drops.
struct LedgerLock {
    _file: fs::File,
}

fn acquire_lock(ledger: &Path) -> Result<LedgerLock, CliError> {
    let lock_path = sibling(ledger, "lock");
    let file = fs::OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(&lock_path)
        .map_err(|e| CliError::runtime(format!("cannot open {}: {e}", lock_path.display())))?;
    let rc = unsafe { libc::flock(file.as_raw_fd(), libc::LOCK_EX | libc::LOCK_NB) };
    if rc != 0 {
        return Err(CliError::runtime(format!(
            "{} is in use by another invocation",
            ledger.display()
        )));
    }
    Ok(LedgerLock { _file: file })
}

fn sibling(ledger: &Path, suffix: &str) -> PathBuf {
    let name = ledger
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("procchain.ledger");
    ledger.with_file_name(format!("{name}.{suffix}"))
}

/// `--definition` beats the deployed sidecar, which beats the built-in
/// definition.
fn resolve_definition(cli: &Cli) -> Result<ProcessDefinition, CliError> {
    let path = match &cli.definition {
        Some(p) => p.clone(),
        None => {
            let sidecar = sibling(&cli.ledger, "def");
            if !sidecar.exists() {
                return Ok(builtin_order_processing());
            }
            sidecar
        }
    };
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::runtime(format!("cannot read {}: {e}", path.display())))?;
    process::parse_process_definition(&text)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn load_network(cli: &Cli) -> Result<Network, CliError> {
    if !cli.ledger.exists() {
        return Err(CliError::runtime(format!(
            "{} does not exist; run `procchain network init` first",
            cli.ledger.display()
        )));
    }
    let def = resolve_definition(cli)?;
    let policy = policy_for_definition(&def);
    let chain = Chain::load(&cli.ledger).map_err(CliError::runtime)?;
    Network::from_chain(def, policy, chain, 1).map_err(CliError::runtime)
}

fn save_network(cli: &Cli, network: &mut Network) -> Result<(), CliError> {
    network.flush();
    network.chain().persist(&cli.ledger).map_err(CliError::runtime)
}

fn network_init(cli: &Cli) -> Result<u8, CliError> {
    let _lock = acquire_lock(&cli.ledger)?;
    if cli.ledger.exists() {
        return Err(CliError::runtime(format!(
            "{} already exists",
            cli.ledger.display()
        )));
    }
    let def = resolve_definition(cli)?;
    Chain::default().persist(&cli.ledger).map_err(CliError::runtime)?;
    let sidecar = sibling(&cli.ledger, "def");
    fs::write(&sidecar, process::render_definition(&def))
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", sidecar.display())))?;
    println!(
        "initialized {} (process {})",
        cli.ledger.display(),
        def.name
    );
    Ok(0)
}

fn finish_submission(
    cli: &Cli,
    network: &mut Network,
    def: &ProcessDefinition,
    what: &str,
    outcome: TransactionOutcome,
    tx_name: Option<&str>,
) -> Result<u8, CliError> {
    save_network(cli, network)?;
    match outcome {
        TransactionOutcome::Committed => {
            println!("COMMITTED {what}");
            Ok(0)
        }
        TransactionOutcome::Rejected(reason) => {
            let mut line = format!("REJECTED {reason} {what}");
            if reason == RejectReason::GuardFalse {
                if let Some(tx) = tx_name.and_then(|n| def.find_transaction(n)) {
                    line.push_str(&format!(" (guard of {}: {})", tx.name, render_guard(&tx.guard)));
                }
            }
            println!("{line}");
            Ok(reason_exit(reason))
        }
    }
}

fn participant_add(cli: &Cli, args: &ParticipantAdd) -> Result<u8, CliError> {
    let _lock = acquire_lock(&cli.ledger)?;
    let mut network = load_network(cli)?;
    let nonce = network.next_nonce();
    let participant = Participant {
        id: args.id.clone(),
        role: crate::process::PartyRole::new(args.role.clone()),
        first_name: args.first_name.clone(),
        last_name: args.last_name.clone(),
        company_name: args.company.clone(),
        position: args.position.clone(),
    };
    let outcome = network.register_participant(&args.invoker, nonce, participant);
    let def = network.definition().clone();
    finish_submission(
        cli,
        &mut network,
        &def,
        &format!("register {}", args.id),
        outcome,
        None,
    )
}

fn parse_party_bindings(raw: &[String]) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for item in raw {
        let (role, id) = item.split_once('=').ok_or_else(|| {
            CliError::runtime(format!("--party takes ROLE=ID, got `{item}`"))
        })?;
        if out.insert(role.to_string(), id.to_string()).is_some() {
            return Err(CliError::runtime(format!("role `{role}` bound twice")));
        }
    }
    Ok(out)
}

fn tx_submit(cli: &Cli, args: &TxSubmit) -> Result<u8, CliError> {
    let _lock = acquire_lock(&cli.ledger)?;
    let mut network = load_network(cli)?;
    let nonce = network.next_nonce();
    let def = network.definition().clone();
    let is_create = def
        .find_transaction(&args.name)
        .map(|t| t.kind == TransactionKind::Create)
        .unwrap_or(false);
    let request = if is_create {
        TransactionRequest::create(
            args.name.clone(),
            args.invoker.clone(),
            nonce,
            args.order.clone(),
            args.order_name.clone(),
            args.description.clone(),
            parse_party_bindings(&args.parties)?,
        )
    } else {
        TransactionRequest::task(
            args.name.clone(),
            args.invoker.clone(),
            nonce,
            args.order.clone(),
        )
    };
    let outcome = network.submit(request);
    finish_submission(
        cli,
        &mut network,
        &def,
        &format!("{} {}", args.name, args.order),
        outcome,
        Some(&args.name),
    )
}

fn query_exit(denied: QueryDenied) -> CliError {
    match denied {
        QueryDenied::UnknownIdentity => CliError::new(10, "unknown identity".to_string()),
        QueryDenied::NotVisible => CliError::new(3, "not visible".to_string()),
    }
}

fn order_show(cli: &Cli, args: &OrderView) -> Result<u8, CliError> {
    let _lock = acquire_lock(&cli.ledger)?;
    let network = load_network(cli)?;
    let asset = network
        .query_asset(&args.invoker, &args.order)
        .map_err(query_exit)?;
    if args.json {
        println!("{}", canonical::to_canonical_json(asset));
    } else {
        println!("id:          {}", asset.id);
        println!("name:        {}", asset.name);
        println!("description: {}", asset.description);
        println!("status:      {}", asset.status);
        let done: Vec<&str> = asset
            .flags
            .iter()
            .filter(|(_, v)| **v)
            .map(|(k, _)| k.as_str())
            .collect();
        println!("performed:   {}", if done.is_empty() { "-".to_string() } else { done.join(", ") });
        for (role, id) in &asset.parties {
            println!("party:       {role} = {id}");
        }
        let responsible: Vec<&str> = asset.responsible.iter().map(|s| s.as_str()).collect();
        println!(
            "responsible: {}",
            if responsible.is_empty() { "-".to_string() } else { responsible.join(", ") }
        );
    }
    Ok(0)
}

fn order_history(cli: &Cli, args: &OrderView) -> Result<u8, CliError> {
    let _lock = acquire_lock(&cli.ledger)?;
    let network = load_network(cli)?;
    let records = network
        .query_history(&args.invoker, &args.order)
        .map_err(query_exit)?;
    if args.json {
        println!("{}", canonical::to_canonical_json(&records));
    } else {
        for record in records {
            println!(
                "{:>5}  {}  {} by {}",
                record.seq, record.outcome, record.request.tx_name, record.request.invoker_id
            );
        }
    }
    Ok(0)
}

fn ledger_verify(cli: &Cli) -> Result<u8, CliError> {
    let _lock = acquire_lock(&cli.ledger)?;
    if !cli.ledger.exists() {
        return Err(CliError::runtime(format!(
            "{} does not exist",
            cli.ledger.display()
        )));
    }
    let chain = Chain::load(&cli.ledger).map_err(CliError::runtime)?;
    match chain.verify() {
        Ok(()) => {
            println!(
                "ok ({} blocks, {} records)",
                chain.blocks().len(),
                chain.record_count()
            );
            Ok(0)
        }
        Err(violation) => Err(CliError::new(4, format!("violation: {violation}"))),
    }
}

fn ledger_replay(cli: &Cli) -> Result<u8, CliError> {
    let _lock = acquire_lock(&cli.ledger)?;
    let network = load_network(cli)?;
    println!(
        "replayed {} records; state hash {}",
        network.chain().record_count(),
        network.state().canonical_hash()
    );
    Ok(0)
}

fn experiment_run(args: &ExperimentRun) -> Result<u8, CliError> {
    let accepted = match args.accept_probability {
        Some(p) => Acceptance::Probability(p),
        None => Acceptance::Count(args.accepted),
    };
    let config = ExperimentConfig {
        shoppers: args.shoppers,
        sellers: args.sellers,
        deliveries: args.deliveries,
        orders: args.orders,
        accepted,
        seed: args.seed,
        batch_size: args.batch_size,
    };
    let (report, chain) = harness::run_experiment(&config).map_err(CliError::runtime)?;
    print!("{}", harness::render_report(&report));
    if let Some(path) = &args.report {
        fs::write(path, canonical::to_canonical_json(&report))
            .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))?;
    }
    if let Some(path) = &args.ledger_out {
        chain.persist(path).map_err(CliError::runtime)?;
    }
    if report.all_enforced() {
        Ok(0)
    } else {
        Err(CliError::new(5, "enforcement failure: see report"))
    }
}

fn policy_show(cli: &Cli) -> Result<u8, CliError> {
    let def = resolve_definition(cli)?;
    print!("{}", policy_for_definition(&def));
    Ok(0)
}
