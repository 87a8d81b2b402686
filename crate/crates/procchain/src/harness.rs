//! Seeded experiment harness for the built-in order process.
//!
//! A run registers the configured participants, then drives every order
//! through a full life cycle, pairing each valid request with one
//! deliberately invalid request: either the right participant at the wrong
//! time (intra-process) or the right moment invoked by an unbound
//! participant of the correct role (inter-process). The whole schedule is a
//! pure function of configuration and seed, the report is derived from the
//! resulting ledger, and a run fails loudly if any valid request rejects or
//! any invalid request commits.

use crate::acl::default_order_processing_policy;
use crate::engine::{
    Network, Participant, TransactionOutcome, TransactionRequest, ADMIN_ID,
};
use crate::ledger::Chain;
use crate::process::{self, builtin_order_processing, FlagState, PartyRole, ProcessDefinition};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// How many orders end up accepted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Acceptance {
    /// Exactly this many accepted, positions shuffled by the seed.
    Count(u32),
    /// Independent draw per order with this probability.
    Probability(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub shoppers: u32,
    pub sellers: u32,
    pub deliveries: u32,
    pub orders: u32,
    pub accepted: Acceptance,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for ExperimentConfig {
    /// The standard demonstration setup: 20 shoppers, 5 sellers, 3
    /// delivery parties, 200 orders of which 126 accepted, seed 42,
    /// one record per block.
    fn default() -> Self {
        ExperimentConfig {
            shoppers: 20,
            sellers: 5,
            deliveries: 3,
            orders: 200,
            accepted: Acceptance::Count(126),
            seed: 42,
            batch_size: 1,
        }
    }
}

/// Why a scheduled request is expected to fail, if it is.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleTag {
    /// Must commit.
    Valid,
    /// Right participant, wrong process moment; must reject.
    IntraInvalid,
    /// Right moment, unbound participant of the correct role; must reject.
    InterInvalid,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub tag: ScheduleTag,
    pub request: TransactionRequest,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum HarnessError {
    #[error("infeasible configuration: {0}")]
    Infeasible(String),
    #[error("experiment aborted: {0}")]
    Run(String),
}

/// The participant roster for a configuration: shoppers S1.., sellers
/// M1.., delivery parties L1...
pub fn participant_roster(config: &ExperimentConfig) -> Vec<Participant> {
    let mut out = Vec::with_capacity((config.shoppers + config.sellers + config.deliveries) as usize);
    let mut push = |prefix: &str, role: &str, count: u32| {
        for i in 1..=count {
            let id = format!("{prefix}{i}");
            out.push(Participant {
                id: id.clone(),
                role: PartyRole::new(role),
                first_name: format!("{role}-{i}"),
                last_name: "Example".to_string(),
                company_name: format!("{role} co {i}"),
                position: role.to_string(),
            });
        }
    };
    push("S", "shopper", config.shoppers);
    push("M", "seller", config.sellers);
    push("L", "delivery", config.deliveries);
    out
}

struct OrderPlan {
    shopper: String,
    seller: String,
    delivery: String,
    tasks: Vec<String>,
}

fn check_feasible(config: &ExperimentConfig, def: &ProcessDefinition) -> Result<(), HarnessError> {
    let roles: Vec<&str> = def.parties.iter().map(|p| p.as_str()).collect();
    if roles != ["shopper", "seller", "delivery"] {
        return Err(HarnessError::Infeasible(
            "the harness drives the built-in order process; the definition's parties must be \
             shopper, seller, delivery"
                .to_string(),
        ));
    }
    if config.shoppers == 0 || config.sellers == 0 || config.deliveries == 0 {
        return Err(HarnessError::Infeasible(
            "every role needs at least one participant".to_string(),
        ));
    }
    match config.accepted {
        Acceptance::Count(a) if a > config.orders => Err(HarnessError::Infeasible(format!(
            "accepted count {a} exceeds order count {}",
            config.orders
        ))),
        Acceptance::Probability(p) if !(0.0..=1.0).contains(&p) => Err(HarnessError::Infeasible(
            format!("acceptance probability {p} outside [0, 1]"),
        )),
        _ => Ok(()),
    }
}

fn acceptance_decisions(config: &ExperimentConfig, rng: &mut ChaCha12Rng) -> Vec<bool> {
    match config.accepted {
        Acceptance::Count(a) => {
            let mut v = vec![false; config.orders as usize];
            for slot in v.iter_mut().take(a as usize) {
                *slot = true;
            }
            v.shuffle(rng);
            v
        }
        Acceptance::Probability(p) => (0..config.orders).map(|_| rng.random_bool(p)).collect(),
    }
}

/// The valid task sequence for one order. Accepted orders interleave
/// shipping anywhere among the three invoicing steps; `ship_pos` 0..=3 is
/// how many invoicing steps precede shipOrder.
fn task_sequence(accepted: bool, ship_pos: usize) -> Vec<String> {
    let mut tasks: Vec<String> = vec!["receiveOrder".to_string()];
    if accepted {
        tasks.push("accepted".to_string());
        tasks.push("fillOrder".to_string());
        let mut tail: Vec<String> = ["sendInvoice", "makePayment", "acceptPayment"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        tail.insert(ship_pos, "shipOrder".to_string());
        tasks.extend(tail);
    } else {
        tasks.push("rejected".to_string());
    }
    tasks.push("closeOrder".to_string());
    tasks
}

fn plan_orders(config: &ExperimentConfig, rng: &mut ChaCha12Rng) -> Vec<OrderPlan> {
    let decisions = acceptance_decisions(config, rng);
    decisions
        .into_iter()
        .map(|accepted| {
            let shopper = format!("S{}", rng.random_range(1..=config.shoppers));
            let seller = format!("M{}", rng.random_range(1..=config.sellers));
            let delivery = format!("L{}", rng.random_range(1..=config.deliveries));
            let ship_pos = if accepted { rng.random_range(0..=3) } else { 0 };
            OrderPlan {
                shopper,
                seller,
                delivery,
                tasks: task_sequence(accepted, ship_pos),
            }
        })
        .collect()
}

/// Picks the invalid request to pair with the just-applied valid one.
/// `state` is the order's flag state after that valid request.
fn invalid_request(
    def: &ProcessDefinition,
    plan: &OrderPlan,
    order_id: &str,
    state: &FlagState,
    config: &ExperimentConfig,
    rng: &mut ChaCha12Rng,
    nonce: u64,
) -> ScheduleEntry {
    let enabled = process::enabled_transactions(def, state).expect("schedule states are well formed");
    let actor_id = |role: &str| -> String {
        match role {
            "shopper" => plan.shopper.clone(),
            "seller" => plan.seller.clone(),
            "delivery" => plan.delivery.clone(),
            other => unreachable!("no such role {other}"),
        }
    };
    let role_count = |role: &str| -> u32 {
        match role {
            "shopper" => config.shoppers,
            "seller" => config.sellers,
            "delivery" => config.deliveries,
            other => unreachable!("no such role {other}"),
        }
    };

    // Inter-process needs an enabled task whose actor role has an unbound
    // participant to impersonate with.
    let inter_candidates: Vec<&str> = enabled
        .iter()
        .map(|t| t.as_str())
        .filter(|t| {
            let role = def.find_transaction(t).expect("enabled task").actor.as_str();
            role_count(role) > 1
        })
        .collect();
    // Intra-process: the bound participant invoking a currently-disabled
    // task. Always non-empty: an active order enables at most two of the
    // nine tasks, and a closed order enables none.
    let intra_candidates: Vec<&str> = def
        .task_transactions()
        .map(|t| t.name.as_str())
        .filter(|t| !enabled.contains(*t))
        .collect();

    let choose_inter = !inter_candidates.is_empty() && (intra_candidates.is_empty() || rng.random_bool(0.5));
    if choose_inter {
        let task = inter_candidates[rng.random_range(0..inter_candidates.len())];
        let tx = def.find_transaction(task).expect("enabled task");
        let role = tx.actor.as_str();
        let bound = actor_id(role);
        let bound_index: u32 = bound[1..].parse().expect("roster ids are prefix+index");
        // Uniform over the role's other participants.
        let offset = rng.random_range(1..role_count(role));
        let impostor_index = (bound_index - 1 + offset) % role_count(role) + 1;
        let prefix = &bound[..1];
        let impostor = format!("{prefix}{impostor_index}");
        ScheduleEntry {
            tag: ScheduleTag::InterInvalid,
            request: TransactionRequest::task(task, impostor, nonce, order_id),
        }
    } else {
        let task = intra_candidates[rng.random_range(0..intra_candidates.len())];
        let tx = def.find_transaction(task).expect("task");
        let invoker = actor_id(tx.actor.as_str());
        ScheduleEntry {
            tag: ScheduleTag::IntraInvalid,
            request: TransactionRequest::task(task, invoker, nonce, order_id),
        }
    }
}

/// The full request schedule for a configuration: for every order, its
/// create and task requests in a legal interleaving, each immediately
/// followed by one invalid request against the same order. Nonces start
/// after the roster registrations. Pure in (config, seed).
pub fn generate_schedule(
    config: &ExperimentConfig,
    def: &ProcessDefinition,
) -> Result<Vec<ScheduleEntry>, HarnessError> {
    check_feasible(config, def)?;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let plans = plan_orders(config, &mut rng);
    let mut nonce = (config.shoppers + config.sellers + config.deliveries) as u64;
    let mut entries = Vec::new();

    for (idx, plan) in plans.iter().enumerate() {
        let order_id = format!("O{}", idx + 1);
        let mut parties = BTreeMap::new();
        parties.insert("seller".to_string(), plan.seller.clone());
        parties.insert("delivery".to_string(), plan.delivery.clone());
        entries.push(ScheduleEntry {
            tag: ScheduleTag::Valid,
            request: TransactionRequest::create(
                "createOrder",
                plan.shopper.clone(),
                nonce,
                order_id.clone(),
                format!("order {}", idx + 1),
                format!("{} buying from {}", plan.shopper, plan.seller),
                parties,
            ),
        });
        nonce += 1;
        let mut state = def.initial_state();
        entries.push(invalid_request(def, plan, &order_id, &state, config, &mut rng, nonce));
        nonce += 1;

        for task in &plan.tasks {
            let tx = def.find_transaction(task).expect("planned task");
            let invoker = match tx.actor.as_str() {
                "shopper" => plan.shopper.clone(),
                "seller" => plan.seller.clone(),
                "delivery" => plan.delivery.clone(),
                other => unreachable!("no such role {other}"),
            };
            entries.push(ScheduleEntry {
                tag: ScheduleTag::Valid,
                request: TransactionRequest::task(task, invoker, nonce, order_id.clone()),
            });
            nonce += 1;
            state = process::apply_task(def, &state, task).expect("planned task applies");
            entries.push(invalid_request(def, plan, &order_id, &state, config, &mut rng, nonce));
            nonce += 1;
        }
    }
    Ok(entries)
}

/// Aggregated outcome of one run, derived from the ledger.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub shoppers: u64,
    pub sellers: u64,
    pub deliveries: u64,
    pub assets: u64,
    pub accepted_assets: u64,
    pub rejected_assets: u64,
    pub valid_total: u64,
    pub valid_committed: u64,
    pub intra_invalid_total: u64,
    pub intra_invalid_rejected: u64,
    pub inter_invalid_total: u64,
    pub inter_invalid_rejected: u64,
}

impl ExperimentReport {
    /// Every valid request committed and every invalid request rejected
    /// (vacuously true for an empty run).
    pub fn all_enforced(&self) -> bool {
        self.valid_committed == self.valid_total
            && self.intra_invalid_rejected == self.intra_invalid_total
            && self.inter_invalid_rejected == self.inter_invalid_total
    }
}

/// Registers the roster, submits the schedule, and derives the report from
/// the sealed ledger. Aborts with a diagnostic if any request's outcome
/// contradicts its tag.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(ExperimentReport, Chain), HarnessError> {
    let def = builtin_order_processing();
    let policy = default_order_processing_policy();
    if config.batch_size == 0 {
        return Err(HarnessError::Infeasible(
            "batch size must be at least 1".to_string(),
        ));
    }
    let entries = generate_schedule(config, &def)?;
    let mut network =
        Network::new(def, policy, config.batch_size).expect("built-in setup is valid");

    for (i, p) in participant_roster(config).into_iter().enumerate() {
        let id = p.id.clone();
        let outcome = network.register_participant(ADMIN_ID, i as u64, p);
        if !outcome.is_committed() {
            return Err(HarnessError::Run(format!(
                "registration of {id} did not commit: {outcome}"
            )));
        }
    }

    for entry in &entries {
        let outcome = network.submit(entry.request.clone());
        match (entry.tag, outcome) {
            (ScheduleTag::Valid, TransactionOutcome::Committed) => {}
            (ScheduleTag::IntraInvalid | ScheduleTag::InterInvalid, TransactionOutcome::Rejected(_)) => {}
            (tag, outcome) => {
                return Err(HarnessError::Run(format!(
                    "request nonce {} ({} {:?}) expected {} but got {outcome}",
                    entry.request.nonce,
                    entry.request.tx_name,
                    tag,
                    match tag {
                        ScheduleTag::Valid => "COMMITTED",
                        _ => "REJECTED",
                    },
                )));
            }
        }
    }
    network.flush();

    let report = derive_report(config, &entries, &network)?;
    Ok((report, network.chain().clone()))
}

fn derive_report(
    config: &ExperimentConfig,
    entries: &[ScheduleEntry],
    network: &Network,
) -> Result<ExperimentReport, HarnessError> {
    let mut report = ExperimentReport {
        seed: config.seed,
        shoppers: 0,
        sellers: 0,
        deliveries: 0,
        assets: 0,
        accepted_assets: 0,
        rejected_assets: 0,
        valid_total: 0,
        valid_committed: 0,
        intra_invalid_total: 0,
        intra_invalid_rejected: 0,
        inter_invalid_total: 0,
        inter_invalid_rejected: 0,
    };

    // Everything below comes from the chain and the state it replays to,
    // not from assumptions about what was submitted.
    let mut schedule_records = Vec::new();
    for record in network.chain().records() {
        match &record.request.payload {
            crate::engine::RequestPayload::Register { participant } => {
                if record.outcome.is_committed() {
                    match participant.role.as_str() {
                        "shopper" => report.shoppers += 1,
                        "seller" => report.sellers += 1,
                        "delivery" => report.deliveries += 1,
                        _ => {}
                    }
                }
            }
            _ => schedule_records.push(record),
        }
    }
    if schedule_records.len() != entries.len() {
        return Err(HarnessError::Run(format!(
            "ledger holds {} schedule records, schedule has {}",
            schedule_records.len(),
            entries.len()
        )));
    }
    for (record, entry) in schedule_records.iter().zip(entries) {
        if record.request != entry.request {
            return Err(HarnessError::Run(format!(
                "ledger record seq {} does not match its scheduled request",
                record.seq
            )));
        }
        let committed = record.outcome.is_committed();
        match entry.tag {
            ScheduleTag::Valid => {
                report.valid_total += 1;
                if committed {
                    report.valid_committed += 1;
                }
            }
            ScheduleTag::IntraInvalid => {
                report.intra_invalid_total += 1;
                if !committed {
                    report.intra_invalid_rejected += 1;
                }
            }
            ScheduleTag::InterInvalid => {
                report.inter_invalid_total += 1;
                if !committed {
                    report.inter_invalid_rejected += 1;
                }
            }
        }
    }

    for asset in network.state().assets.values() {
        report.assets += 1;
        if asset.flags.get("accepted").copied().unwrap_or(false) {
            report.accepted_assets += 1;
        }
        if asset.flags.get("rejected").copied().unwrap_or(false) {
            report.rejected_assets += 1;
        }
    }
    Ok(report)
}

fn percentage(numerator: u64, denominator: u64) -> String {
    if denominator == 0 {
        return "n/a".to_string();
    }
    let pct = numerator as f64 * 100.0 / denominator as f64;
    if (numerator * 100) % denominator == 0 {
        format!("{}%", (numerator * 100) / denominator)
    } else {
        format!("{pct:.2}%")
    }
}

/// Plain-text report table.
pub fn render_report(report: &ExperimentReport) -> String {
    let rows: Vec<(String, String)> = vec![
        ("Seed".to_string(), report.seed.to_string()),
        (
            "Number of participant instances with shopper type".to_string(),
            report.shoppers.to_string(),
        ),
        (
            "Number of participant instances with seller type".to_string(),
            report.sellers.to_string(),
        ),
        (
            "Number of participant instances with delivery type".to_string(),
            report.deliveries.to_string(),
        ),
        (
            "Number of all asset instances".to_string(),
            report.assets.to_string(),
        ),
        (
            "Number of asset instances with true \"accepted\" property".to_string(),
            report.accepted_assets.to_string(),
        ),
        (
            "Number of asset instances with true \"rejected\" property".to_string(),
            report.rejected_assets.to_string(),
        ),
        (
            "Number of all valid transactions".to_string(),
            report.valid_total.to_string(),
        ),
        (
            "Percentage of successful valid transaction".to_string(),
            percentage(report.valid_committed, report.valid_total),
        ),
        (
            "Number of all intra-process invalid transactions".to_string(),
            report.intra_invalid_total.to_string(),
        ),
        (
            "Number of all inter-processes invalid transactions".to_string(),
            report.inter_invalid_total.to_string(),
        ),
        (
            "Percentage of failed invalid transactions".to_string(),
            percentage(
                report.intra_invalid_rejected + report.inter_invalid_rejected,
                report.intra_invalid_total + report.inter_invalid_total,
            ),
        ),
        (
            "Percentage of failed intra-process invalid transactions".to_string(),
            percentage(report.intra_invalid_rejected, report.intra_invalid_total),
        ),
        (
            "Percentage of failed inter-processes invalid transactions".to_string(),
            percentage(report.inter_invalid_rejected, report.inter_invalid_total),
        ),
    ];
    let width = rows.iter().map(|(label, _)| label.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (label, value) in rows {
        out.push_str(&format!("{label:<width$}  {value}\n"));
    }
    out
}
