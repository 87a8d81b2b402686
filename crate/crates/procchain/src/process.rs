//! Process definitions: the line-oriented text format, guard expressions,
//! per-asset flag state, and the enabled-transaction relation.
//!
//! A definition names a process, its party roles, exactly one create
//! transaction, and any number of task transactions. Each task carries a
//! guard over the flags named after the task transactions themselves:
//! performing task `t` sets flag `t` on the asset, so guards express
//! ordering ("after fillOrder"), exclusive choice ("accepted and not
//! rejected"), and joins ("acceptPayment and shipOrder"). A task marked
//! `closes` ends the asset's life cycle.
//!
//! Guard grammar, loosest to tightest binding: `|` (or), `&` (and), `!`
//! (not), with parentheses allowed. Identifiers are `[A-Za-z_][A-Za-z0-9_]*`;
//! the statement keywords (`process`, `parties`, `create`, `task`, `by`,
//! `when`, `closes`, `true`, `false`) are reserved. `#` starts a comment
//! that runs to end of line.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::OnceLock;
use thiserror::Error;

/// A party role name, e.g. `seller`. Also used as the relationship field
/// that binds a participant to an asset in that role.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PartyRole(String);

impl PartyRole {
    pub fn new(name: impl Into<String>) -> Self {
        PartyRole(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PartyRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Boolean expression over task flags.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GuardExpr {
    Lit(bool),
    Flag(String),
    Not(Box<GuardExpr>),
    And(Box<GuardExpr>, Box<GuardExpr>),
    Or(Box<GuardExpr>, Box<GuardExpr>),
}

impl GuardExpr {
    pub fn flag(name: impl Into<String>) -> Self {
        GuardExpr::Flag(name.into())
    }

    pub fn not(e: GuardExpr) -> Self {
        GuardExpr::Not(Box::new(e))
    }

    pub fn and(a: GuardExpr, b: GuardExpr) -> Self {
        GuardExpr::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: GuardExpr, b: GuardExpr) -> Self {
        GuardExpr::Or(Box::new(a), Box::new(b))
    }

    /// Flags mentioned anywhere in the expression.
    pub fn referenced_flags(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_flags(&mut out);
        out
    }

    fn collect_flags<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            GuardExpr::Lit(_) => {}
            GuardExpr::Flag(name) => {
                out.insert(name.as_str());
            }
            GuardExpr::Not(inner) => inner.collect_flags(out),
            GuardExpr::And(a, b) | GuardExpr::Or(a, b) => {
                a.collect_flags(out);
                b.collect_flags(out);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransactionKind {
    Create,
    Task,
}

/// One transaction a definition admits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionDef {
    pub name: String,
    pub kind: TransactionKind,
    /// Role whose bound participant may invoke this transaction.
    pub actor: PartyRole,
    /// Declared guard. Always `Lit(true)` for the create transaction.
    pub guard: GuardExpr,
    /// Whether committing this task closes the asset.
    pub closes: bool,
}

/// A parsed process definition. Construct via [`parse_process_definition`]
/// or field-by-field; [`validate_definition`] checks well-formedness either
/// way.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessDefinition {
    pub name: String,
    pub parties: Vec<PartyRole>,
    pub transactions: Vec<TransactionDef>,
}

impl ProcessDefinition {
    /// The unique create transaction. Panics on a definition that failed
    /// validation (zero or several creates).
    pub fn create_transaction(&self) -> &TransactionDef {
        self.transactions
            .iter()
            .find(|t| t.kind == TransactionKind::Create)
            .expect("validated definition has exactly one create transaction")
    }

    pub fn task_transactions(&self) -> impl Iterator<Item = &TransactionDef> {
        self.transactions
            .iter()
            .filter(|t| t.kind == TransactionKind::Task)
    }

    pub fn find_transaction(&self, name: &str) -> Option<&TransactionDef> {
        self.transactions.iter().find(|t| t.name == name)
    }

    /// Flag names, i.e. the task-transaction names.
    pub fn flag_names(&self) -> impl Iterator<Item = &str> {
        self.task_transactions().map(|t| t.name.as_str())
    }

    pub fn has_party(&self, role: &PartyRole) -> bool {
        self.parties.iter().any(|p| p == role)
    }

    /// Fresh per-asset state: every flag false, status active.
    pub fn initial_state(&self) -> FlagState {
        FlagState {
            flags: self.flag_names().map(|f| (f.to_string(), false)).collect(),
            status: ProcessStatus::Active,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcessStatus {
    Active,
    Closed,
}

impl fmt::Display for ProcessStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProcessStatus::Active => f.write_str("active"),
            ProcessStatus::Closed => f.write_str("closed"),
        }
    }
}

/// Per-asset progress: one boolean per task flag plus the life-cycle status.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlagState {
    pub flags: BTreeMap<String, bool>,
    pub status: ProcessStatus,
}

impl FlagState {
    pub fn flag(&self, name: &str) -> Option<bool> {
        self.flags.get(name).copied()
    }

    pub fn is_active(&self) -> bool {
        self.status == ProcessStatus::Active
    }
}

/// Why a definition is not well-formed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    EmptyName,
    DuplicateParty { name: String },
    DuplicateTransaction { name: String },
    UnknownActor { transaction: String, role: String },
    UnknownFlag { transaction: String, flag: String },
    CreateCount { count: usize },
    CreateWithGuard { transaction: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyName => write!(f, "empty identifier"),
            Violation::DuplicateParty { name } => write!(f, "party `{name}` declared twice"),
            Violation::DuplicateTransaction { name } => {
                write!(f, "transaction `{name}` declared twice")
            }
            Violation::UnknownActor { transaction, role } => {
                write!(f, "transaction `{transaction}` names undeclared party `{role}`")
            }
            Violation::UnknownFlag { transaction, flag } => write!(
                f,
                "guard of `{transaction}` references `{flag}`, which is not a task name"
            ),
            Violation::CreateCount { count } => {
                write!(f, "definition has {count} create transactions, need exactly 1")
            }
            Violation::CreateWithGuard { transaction } => {
                write!(f, "create transaction `{transaction}` cannot carry a guard")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("definition invalid: {}", format_violations(.0))]
    Invalid(Vec<Violation>),
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ProcessError {
    #[error("guard references unknown flag `{0}`")]
    UnknownFlag(String),
    #[error("no task transaction named `{0}`")]
    UnknownTask(String),
    #[error("state flags do not match the definition's task set")]
    FlagSetMismatch,
}

const KEYWORDS: &[&str] = &[
    "process", "parties", "create", "task", "by", "when", "closes", "true", "false",
];

fn is_keyword(word: &str) -> bool {
    KEYWORDS.contains(&word)
}

fn is_ident(word: &str) -> bool {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Parses and validates the definition text format.
pub fn parse_process_definition(text: &str) -> Result<ProcessDefinition, ParseError> {
    let mut name: Option<String> = None;
    let mut parties: Vec<PartyRole> = Vec::new();
    let mut seen_parties_line = false;
    let mut transactions: Vec<TransactionDef> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        if line.trim().is_empty() {
            continue;
        }
        let mut lx = LineLexer::new(line, line_no);
        let (keyword, kw_col) = lx.expect_word()?;
        match keyword.as_str() {
            "process" => {
                if name.is_some() {
                    return Err(syntax(line_no, kw_col, "duplicate `process` line"));
                }
                if !transactions.is_empty() || seen_parties_line {
                    return Err(syntax(line_no, kw_col, "`process` must be the first statement"));
                }
                name = Some(lx.expect_ident("process name")?);
                lx.expect_end()?;
            }
            "parties" => {
                if seen_parties_line {
                    return Err(syntax(line_no, kw_col, "duplicate `parties` line"));
                }
                if name.is_none() {
                    return Err(syntax(line_no, kw_col, "`parties` must follow the `process` line"));
                }
                if !transactions.is_empty() {
                    return Err(syntax(line_no, kw_col, "`parties` must precede transactions"));
                }
                seen_parties_line = true;
                loop {
                    parties.push(PartyRole::new(lx.expect_ident("party name")?));
                    if !lx.eat_symbol(',') {
                        break;
                    }
                }
                lx.expect_end()?;
            }
            "create" => {
                if !seen_parties_line {
                    return Err(syntax(line_no, kw_col, "`create` must follow `parties`"));
                }
                let tx_name = lx.expect_ident("transaction name")?;
                lx.expect_keyword("by")?;
                let actor = PartyRole::new(lx.expect_ident("party name")?);
                lx.expect_end()?;
                transactions.push(TransactionDef {
                    name: tx_name,
                    kind: TransactionKind::Create,
                    actor,
                    guard: GuardExpr::Lit(true),
                    closes: false,
                });
            }
            "task" => {
                if !seen_parties_line {
                    return Err(syntax(line_no, kw_col, "`task` must follow `parties`"));
                }
                let tx_name = lx.expect_ident("transaction name")?;
                lx.expect_keyword("by")?;
                let actor = PartyRole::new(lx.expect_ident("party name")?);
                lx.expect_keyword("when")?;
                let guard = parse_guard(&mut lx)?;
                let closes = lx.eat_keyword("closes");
                lx.expect_end()?;
                transactions.push(TransactionDef {
                    name: tx_name,
                    kind: TransactionKind::Task,
                    actor,
                    guard,
                    closes,
                });
            }
            other => {
                return Err(syntax(
                    line_no,
                    kw_col,
                    format!("expected `process`, `parties`, `create` or `task`, found `{other}`"),
                ));
            }
        }
    }

    let name = match name {
        Some(n) => n,
        None => return Err(syntax(1, 1, "missing `process` line")),
    };
    let def = ProcessDefinition {
        name,
        parties,
        transactions,
    };
    let violations = validate_definition(&def);
    if violations.is_empty() {
        Ok(def)
    } else {
        Err(ParseError::Invalid(violations))
    }
}

fn syntax(line: usize, col: usize, message: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        line,
        col,
        message: message.into(),
    }
}

/// Single-line token reader with 1-based column tracking.
struct LineLexer<'a> {
    rest: &'a str,
    line: usize,
    col: usize,
}

impl<'a> LineLexer<'a> {
    fn new(line_text: &'a str, line: usize) -> Self {
        LineLexer {
            rest: line_text,
            line,
            col: 1,
        }
    }

    fn skip_ws(&mut self) {
        loop {
            let mut chars = self.rest.chars();
            match chars.next() {
                Some(c) if c.is_whitespace() => {
                    self.col += 1;
                    self.rest = chars.as_str();
                }
                _ => break,
            }
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.rest.chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let mut chars = self.rest.chars();
        let c = chars.next()?;
        self.col += 1;
        self.rest = chars.as_str();
        Some(c)
    }

    /// Next whitespace-delimited word made of ident characters.
    fn take_word(&mut self) -> Option<(String, usize)> {
        self.skip_ws();
        let start_col = self.col;
        let end = self
            .rest
            .char_indices()
            .find(|(_, c)| !c.is_ascii_alphanumeric() && *c != '_')
            .map(|(i, _)| i)
            .unwrap_or(self.rest.len());
        if end == 0 {
            return None;
        }
        let word = self.rest[..end].to_string();
        self.col += end;
        self.rest = &self.rest[end..];
        Some((word, start_col))
    }

    fn expect_word(&mut self) -> Result<(String, usize), ParseError> {
        self.take_word()
            .ok_or_else(|| syntax(self.line, self.col, "expected a word"))
    }

    fn expect_ident(&mut self, what: &str) -> Result<String, ParseError> {
        let col = {
            self.skip_ws();
            self.col
        };
        match self.take_word() {
            Some((w, _)) if is_ident(&w) && !is_keyword(&w) => Ok(w),
            Some((w, _)) => Err(syntax(
                self.line,
                col,
                format!("expected {what}, found `{w}`"),
            )),
            None => Err(syntax(self.line, col, format!("expected {what}"))),
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        let col = {
            self.skip_ws();
            self.col
        };
        match self.take_word() {
            Some((w, _)) if w == kw => Ok(()),
            Some((w, _)) => Err(syntax(
                self.line,
                col,
                format!("expected `{kw}`, found `{w}`"),
            )),
            None => Err(syntax(self.line, col, format!("expected `{kw}`"))),
        }
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        let saved_rest = self.rest;
        let saved_col = self.col;
        match self.take_word() {
            Some((w, _)) if w == kw => true,
            _ => {
                self.rest = saved_rest;
                self.col = saved_col;
                false
            }
        }
    }

    fn eat_symbol(&mut self, sym: char) -> bool {
        if self.peek() == Some(sym) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_end(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            None => Ok(()),
            Some(c) => Err(syntax(
                self.line,
                self.col,
                format!("unexpected trailing `{c}`"),
            )),
        }
    }
}

/// `expr := term ('|' term)*`, `term := factor ('&' factor)*`,
/// `factor := '!' factor | '(' expr ')' | ident | 'true' | 'false'`.
fn parse_guard(lx: &mut LineLexer<'_>) -> Result<GuardExpr, ParseError> {
    let mut expr = parse_guard_term(lx)?;
    while lx.eat_symbol('|') {
        let rhs = parse_guard_term(lx)?;
        expr = GuardExpr::or(expr, rhs);
    }
    Ok(expr)
}

fn parse_guard_term(lx: &mut LineLexer<'_>) -> Result<GuardExpr, ParseError> {
    let mut term = parse_guard_factor(lx)?;
    while lx.eat_symbol('&') {
        let rhs = parse_guard_factor(lx)?;
        term = GuardExpr::and(term, rhs);
    }
    Ok(term)
}

fn parse_guard_factor(lx: &mut LineLexer<'_>) -> Result<GuardExpr, ParseError> {
    match lx.peek() {
        Some('!') => {
            lx.bump();
            Ok(GuardExpr::not(parse_guard_factor(lx)?))
        }
        Some('(') => {
            lx.bump();
            let inner = parse_guard(lx)?;
            if !lx.eat_symbol(')') {
                return Err(syntax(lx.line, lx.col, "expected `)`"));
            }
            Ok(inner)
        }
        _ => {
            let col = {
                lx.skip_ws();
                lx.col
            };
            match lx.take_word() {
                Some((w, _)) if w == "true" => Ok(GuardExpr::Lit(true)),
                Some((w, _)) if w == "false" => Ok(GuardExpr::Lit(false)),
                // `closes` must stay available as the trailing marker.
                Some((w, _)) if is_ident(&w) && !is_keyword(&w) => Ok(GuardExpr::flag(w)),
                Some((w, _)) => Err(syntax(
                    lx.line,
                    col,
                    format!("expected a flag name, found `{w}`"),
                )),
                None => Err(syntax(lx.line, col, "expected a guard expression")),
            }
        }
    }
}

/// Well-formedness check; empty means valid.
pub fn validate_definition(def: &ProcessDefinition) -> Vec<Violation> {
    let mut out = Vec::new();

    if def.name.is_empty() {
        out.push(Violation::EmptyName);
    }
    let mut seen = BTreeSet::new();
    for p in &def.parties {
        if p.as_str().is_empty() {
            out.push(Violation::EmptyName);
        } else if !seen.insert(p.as_str()) {
            out.push(Violation::DuplicateParty {
                name: p.as_str().to_string(),
            });
        }
    }

    let mut tx_names = BTreeSet::new();
    for tx in &def.transactions {
        if tx.name.is_empty() {
            out.push(Violation::EmptyName);
        } else if !tx_names.insert(tx.name.as_str()) {
            out.push(Violation::DuplicateTransaction {
                name: tx.name.clone(),
            });
        }
        if !def.has_party(&tx.actor) {
            out.push(Violation::UnknownActor {
                transaction: tx.name.clone(),
                role: tx.actor.as_str().to_string(),
            });
        }
    }

    let create_count = def
        .transactions
        .iter()
        .filter(|t| t.kind == TransactionKind::Create)
        .count();
    if create_count != 1 {
        out.push(Violation::CreateCount {
            count: create_count,
        });
    }
    for tx in &def.transactions {
        if tx.kind == TransactionKind::Create && tx.guard != GuardExpr::Lit(true) {
            out.push(Violation::CreateWithGuard {
                transaction: tx.name.clone(),
            });
        }
    }

    let flags: BTreeSet<&str> = def.flag_names().collect();
    for tx in &def.transactions {
        if tx.kind != TransactionKind::Task {
            continue;
        }
        for flag in tx.guard.referenced_flags() {
            if !flags.contains(flag) {
                out.push(Violation::UnknownFlag {
                    transaction: tx.name.clone(),
                    flag: flag.to_string(),
                });
            }
        }
    }

    out
}

/// Evaluates a guard against the flags of `state`. Status is not consulted
/// here; [`enabled_transactions`] layers the life-cycle and once-only rules
/// on top.
pub fn evaluate_guard(guard: &GuardExpr, state: &FlagState) -> Result<bool, ProcessError> {
    match guard {
        GuardExpr::Lit(b) => Ok(*b),
        GuardExpr::Flag(name) => state
            .flag(name)
            .ok_or_else(|| ProcessError::UnknownFlag(name.clone())),
        GuardExpr::Not(inner) => Ok(!evaluate_guard(inner, state)?),
        GuardExpr::And(a, b) => Ok(evaluate_guard(a, state)? && evaluate_guard(b, state)?),
        GuardExpr::Or(a, b) => Ok(evaluate_guard(a, state)? || evaluate_guard(b, state)?),
    }
}

/// Task transactions admissible in `state`: declared guard true, own flag
/// still false, asset still active. Empty once the asset is closed.
pub fn enabled_transactions(
    def: &ProcessDefinition,
    state: &FlagState,
) -> Result<BTreeSet<String>, ProcessError> {
    let def_flags: BTreeSet<&str> = def.flag_names().collect();
    let state_flags: BTreeSet<&str> = state.flags.keys().map(|k| k.as_str()).collect();
    if def_flags != state_flags {
        return Err(ProcessError::FlagSetMismatch);
    }
    let mut out = BTreeSet::new();
    if !state.is_active() {
        return Ok(out);
    }
    for tx in def.task_transactions() {
        let own = state
            .flag(&tx.name)
            .ok_or_else(|| ProcessError::UnknownFlag(tx.name.clone()))?;
        if !own && evaluate_guard(&tx.guard, state)? {
            out.insert(tx.name.clone());
        }
    }
    Ok(out)
}

/// Pure task application: sets the task's flag and, for a closing task,
/// the closed status. Does not check enabledness; callers gate on
/// [`enabled_transactions`] first.
pub fn apply_task(
    def: &ProcessDefinition,
    state: &FlagState,
    task: &str,
) -> Result<FlagState, ProcessError> {
    let tx = def
        .find_transaction(task)
        .filter(|t| t.kind == TransactionKind::Task)
        .ok_or_else(|| ProcessError::UnknownTask(task.to_string()))?;
    let mut next = state.clone();
    match next.flags.get_mut(task) {
        Some(slot) => *slot = true,
        None => return Err(ProcessError::FlagSetMismatch),
    }
    if tx.closes {
        next.status = ProcessStatus::Closed;
    }
    Ok(next)
}

/// Renders a guard so that parsing the output reproduces the expression.
pub fn render_guard(guard: &GuardExpr) -> String {
    let mut out = String::new();
    render_guard_prec(guard, 1, &mut out);
    out
}

fn guard_prec(guard: &GuardExpr) -> u8 {
    match guard {
        GuardExpr::Or(..) => 1,
        GuardExpr::And(..) => 2,
        GuardExpr::Not(..) => 3,
        GuardExpr::Lit(_) | GuardExpr::Flag(_) => 4,
    }
}

fn render_guard_prec(guard: &GuardExpr, min_prec: u8, out: &mut String) {
    if guard_prec(guard) < min_prec {
        out.push('(');
        render_guard_prec(guard, 1, out);
        out.push(')');
        return;
    }
    match guard {
        GuardExpr::Lit(b) => out.push_str(if *b { "true" } else { "false" }),
        GuardExpr::Flag(name) => out.push_str(name),
        GuardExpr::Not(inner) => {
            out.push('!');
            render_guard_prec(inner, 3, out);
        }
        GuardExpr::And(a, b) => {
            render_guard_prec(a, 2, out);
            out.push_str(" & ");
            render_guard_prec(b, 3, out);
        }
        GuardExpr::Or(a, b) => {
            render_guard_prec(a, 1, out);
            out.push_str(" | ");
            render_guard_prec(b, 2, out);
        }
    }
}

/// Renders a definition in the text format; `parse_process_definition` of
/// the output reproduces the definition.
pub fn render_definition(def: &ProcessDefinition) -> String {
    let mut out = String::new();
    out.push_str("process ");
    out.push_str(&def.name);
    out.push('\n');
    out.push_str("parties ");
    for (i, p) in def.parties.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(p.as_str());
    }
    out.push('\n');
    for tx in &def.transactions {
        match tx.kind {
            TransactionKind::Create => {
                out.push_str(&format!("create {} by {}\n", tx.name, tx.actor));
            }
            TransactionKind::Task => {
                out.push_str(&format!(
                    "task {} by {} when {}",
                    tx.name,
                    tx.actor,
                    render_guard(&tx.guard)
                ));
                if tx.closes {
                    out.push_str(" closes");
                }
                out.push('\n');
            }
        }
    }
    out
}

/// The built-in order-processing definition: a shopper places an order, the
/// seller either rejects it or accepts, fills, invoices and takes payment
/// while a delivery party ships, and the seller closes it at the end of
/// either path.
pub const ORDER_PROCESSING_TEXT: &str = "\
process OrderProcessing
parties shopper, seller, delivery
create createOrder by shopper
task receiveOrder by seller when true
task accepted by seller when receiveOrder & !rejected
task rejected by seller when receiveOrder & !accepted
task fillOrder by seller when accepted
task sendInvoice by seller when fillOrder
task makePayment by shopper when sendInvoice
task acceptPayment by seller when makePayment
task shipOrder by delivery when fillOrder
task closeOrder by seller when rejected | (acceptPayment & shipOrder) closes
";

/// Parsed form of [`ORDER_PROCESSING_TEXT`].
pub fn builtin_order_processing() -> ProcessDefinition {
    static CACHE: OnceLock<ProcessDefinition> = OnceLock::new();
    CACHE
        .get_or_init(|| {
            parse_process_definition(ORDER_PROCESSING_TEXT)
                .expect("built-in definition must parse")
        })
        .clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state_of(def: &ProcessDefinition, set: &[&str]) -> FlagState {
        let mut s = def.initial_state();
        for f in set {
            *s.flags.get_mut(*f).expect("known flag") = true;
        }
        s
    }

    #[test]
    fn builtin_parses_to_expected_shape() {
        let def = builtin_order_processing();
        assert_eq!(def.name, "OrderProcessing");
        assert_eq!(
            def.parties,
            vec![
                PartyRole::new("shopper"),
                PartyRole::new("seller"),
                PartyRole::new("delivery")
            ]
        );
        assert_eq!(def.transactions.len(), 10);
        assert_eq!(def.create_transaction().name, "createOrder");
        assert_eq!(def.create_transaction().actor.as_str(), "shopper");
        assert_eq!(def.task_transactions().count(), 9);

        let close = def.find_transaction("closeOrder").expect("closeOrder");
        assert!(close.closes);
        assert_eq!(
            close.guard,
            GuardExpr::or(
                GuardExpr::flag("rejected"),
                GuardExpr::and(GuardExpr::flag("acceptPayment"), GuardExpr::flag("shipOrder")),
            )
        );
        let accepted = def.find_transaction("accepted").expect("accepted");
        assert_eq!(
            accepted.guard,
            GuardExpr::and(
                GuardExpr::flag("receiveOrder"),
                GuardExpr::not(GuardExpr::flag("rejected")),
            )
        );
        assert!(!accepted.closes);
        assert_eq!(
            def.find_transaction("shipOrder").expect("shipOrder").actor,
            PartyRole::new("delivery")
        );
        assert_eq!(validate_definition(&def), Vec::new());
    }

    #[test]
    fn guard_precedence_not_over_and_over_or() {
        let def = parse_process_definition(
            "process P\nparties a\ncreate c by a\ntask x by a when true\ntask y by a when true\n\
             task z by a when x | y & !x\n",
        )
        .expect("parses");
        let z = def.find_transaction("z").expect("z");
        assert_eq!(
            z.guard,
            GuardExpr::or(
                GuardExpr::flag("x"),
                GuardExpr::and(GuardExpr::flag("y"), GuardExpr::not(GuardExpr::flag("x"))),
            )
        );
    }

    #[test]
    fn guard_parentheses_override_precedence() {
        let def = parse_process_definition(
            "process P\nparties a\ncreate c by a\ntask x by a when true\ntask y by a when true\n\
             task z by a when (x | y) & !(x & y)\n",
        )
        .expect("parses");
        let z = def.find_transaction("z").expect("z");
        assert_eq!(
            z.guard,
            GuardExpr::and(
                GuardExpr::or(GuardExpr::flag("x"), GuardExpr::flag("y")),
                GuardExpr::not(GuardExpr::and(GuardExpr::flag("x"), GuardExpr::flag("y"))),
            )
        );
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "# heading\nprocess P\n\nparties a, b # roles\n create c by a\n\
                    task t by b when true # tail\n";
        let def = parse_process_definition(text).expect("parses");
        assert_eq!(def.parties.len(), 2);
        assert_eq!(def.transactions.len(), 2);
    }

    #[test]
    fn syntax_error_carries_position() {
        let err = parse_process_definition("process P\nparties a\ncreate c by a\ntask t by a when &\n")
            .expect_err("bad guard");
        match err {
            ParseError::Syntax { line, col, .. } => {
                assert_eq!(line, 4);
                assert_eq!(col, 18);
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn keyword_cannot_name_a_flag() {
        let err = parse_process_definition(
            "process P\nparties a\ncreate c by a\ntask closes by a when true\n",
        )
        .expect_err("reserved");
        assert!(matches!(err, ParseError::Syntax { line: 4, .. }));
    }

    #[test]
    fn unknown_guard_flag_is_a_violation() {
        let err = parse_process_definition(
            "process P\nparties a\ncreate c by a\ntask t by a when ghost\n",
        )
        .expect_err("unknown flag");
        match err {
            ParseError::Invalid(vs) => assert_eq!(
                vs,
                vec![Violation::UnknownFlag {
                    transaction: "t".to_string(),
                    flag: "ghost".to_string()
                }]
            ),
            other => panic!("expected invalid, got {other:?}"),
        }
    }

    #[test]
    fn create_name_is_not_a_flag() {
        // The create transaction contributes no flag, so guards cannot
        // reference it.
        let err = parse_process_definition(
            "process P\nparties a\ncreate c by a\ntask t by a when c\n",
        )
        .expect_err("create is not a flag");
        assert!(matches!(err, ParseError::Invalid(_)));
    }

    #[test]
    fn undeclared_actor_is_a_violation() {
        let err = parse_process_definition("process P\nparties a\ncreate c by b\n")
            .expect_err("unknown actor");
        match err {
            ParseError::Invalid(vs) => assert!(vs.contains(&Violation::UnknownActor {
                transaction: "c".to_string(),
                role: "b".to_string()
            })),
            other => panic!("expected invalid, got {other:?}"),
        }
    }

    #[test]
    fn missing_or_duplicate_create_is_a_violation() {
        let err = parse_process_definition("process P\nparties a\ntask t by a when true\n")
            .expect_err("no create");
        assert!(matches!(err, ParseError::Invalid(ref vs)
            if vs.contains(&Violation::CreateCount { count: 0 })));

        let err = parse_process_definition(
            "process P\nparties a\ncreate c by a\ncreate d by a\n",
        )
        .expect_err("two creates");
        assert!(matches!(err, ParseError::Invalid(ref vs)
            if vs.contains(&Violation::CreateCount { count: 2 })));
    }

    #[test]
    fn duplicate_names_are_violations() {
        let err = parse_process_definition(
            "process P\nparties a, a\ncreate c by a\ntask t by a when true\ntask t by a when true\n",
        )
        .expect_err("duplicates");
        match err {
            ParseError::Invalid(vs) => {
                assert!(vs.contains(&Violation::DuplicateParty {
                    name: "a".to_string()
                }));
                assert!(vs.contains(&Violation::DuplicateTransaction {
                    name: "t".to_string()
                }));
            }
            other => panic!("expected invalid, got {other:?}"),
        }
    }

    #[test]
    fn initial_state_all_false_active() {
        let def = builtin_order_processing();
        let s = def.initial_state();
        assert_eq!(s.flags.len(), 9);
        assert!(s.flags.values().all(|v| !v));
        assert_eq!(s.status, ProcessStatus::Active);
    }

    #[test]
    fn enabled_fresh_asset_is_receive_order_only() {
        let def = builtin_order_processing();
        let enabled = enabled_transactions(&def, &def.initial_state()).expect("enabled");
        assert_eq!(enabled.into_iter().collect::<Vec<_>>(), vec!["receiveOrder"]);
    }

    #[test]
    fn enabled_after_receive_is_the_exclusive_choice() {
        let def = builtin_order_processing();
        let s = state_of(&def, &["receiveOrder"]);
        let enabled = enabled_transactions(&def, &s).expect("enabled");
        assert_eq!(
            enabled.into_iter().collect::<Vec<_>>(),
            vec!["accepted", "rejected"]
        );
    }

    #[test]
    fn accepted_and_rejected_exclude_each_other() {
        let def = builtin_order_processing();
        let s = state_of(&def, &["receiveOrder", "accepted"]);
        let enabled = enabled_transactions(&def, &s).expect("enabled");
        assert!(!enabled.contains("rejected"));
        let s = state_of(&def, &["receiveOrder", "rejected"]);
        let enabled = enabled_transactions(&def, &s).expect("enabled");
        assert!(!enabled.contains("accepted"));
        assert!(enabled.contains("closeOrder"));
    }

    #[test]
    fn enabled_after_fill_forks_invoice_and_shipping() {
        let def = builtin_order_processing();
        let s = state_of(&def, &["receiveOrder", "accepted", "fillOrder"]);
        let enabled = enabled_transactions(&def, &s).expect("enabled");
        assert_eq!(
            enabled.into_iter().collect::<Vec<_>>(),
            vec!["sendInvoice", "shipOrder"]
        );
    }

    #[test]
    fn close_needs_payment_and_shipping_on_accepted_path() {
        let def = builtin_order_processing();
        let s = state_of(
            &def,
            &["receiveOrder", "accepted", "fillOrder", "sendInvoice", "makePayment", "acceptPayment"],
        );
        let enabled = enabled_transactions(&def, &s).expect("enabled");
        assert!(!enabled.contains("closeOrder"));
        let s = state_of(
            &def,
            &[
                "receiveOrder",
                "accepted",
                "fillOrder",
                "sendInvoice",
                "makePayment",
                "acceptPayment",
                "shipOrder",
            ],
        );
        let enabled = enabled_transactions(&def, &s).expect("enabled");
        assert_eq!(enabled.into_iter().collect::<Vec<_>>(), vec!["closeOrder"]);
    }

    #[test]
    fn performed_task_never_reenabled() {
        let def = builtin_order_processing();
        let s = state_of(&def, &["receiveOrder"]);
        let enabled = enabled_transactions(&def, &s).expect("enabled");
        assert!(!enabled.contains("receiveOrder"));
    }

    #[test]
    fn closed_asset_enables_nothing() {
        let def = builtin_order_processing();
        let mut s = state_of(&def, &["receiveOrder", "rejected", "closeOrder"]);
        s.status = ProcessStatus::Closed;
        let enabled = enabled_transactions(&def, &s).expect("enabled");
        assert!(enabled.is_empty());
    }

    #[test]
    fn flag_set_mismatch_is_an_error() {
        let def = builtin_order_processing();
        let mut s = def.initial_state();
        s.flags.remove("shipOrder");
        assert_eq!(
            enabled_transactions(&def, &s),
            Err(ProcessError::FlagSetMismatch)
        );
    }

    #[test]
    fn evaluate_guard_unknown_flag_errors() {
        let def = builtin_order_processing();
        let g = GuardExpr::flag("nonesuch");
        assert_eq!(
            evaluate_guard(&g, &def.initial_state()),
            Err(ProcessError::UnknownFlag("nonesuch".to_string()))
        );
    }

    #[test]
    fn apply_task_sets_flag_and_closes() {
        let def = builtin_order_processing();
        let s = state_of(&def, &["receiveOrder", "rejected"]);
        let next = apply_task(&def, &s, "closeOrder").expect("applies");
        assert_eq!(next.flag("closeOrder"), Some(true));
        assert_eq!(next.status, ProcessStatus::Closed);
        // Source state untouched.
        assert_eq!(s.flag("closeOrder"), Some(false));
        assert_eq!(s.status, ProcessStatus::Active);
    }

    #[test]
    fn apply_task_rejects_unknown_and_create_names() {
        let def = builtin_order_processing();
        let s = def.initial_state();
        assert!(matches!(
            apply_task(&def, &s, "nonesuch"),
            Err(ProcessError::UnknownTask(_))
        ));
        assert!(matches!(
            apply_task(&def, &s, "createOrder"),
            Err(ProcessError::UnknownTask(_))
        ));
    }

    #[test]
    fn render_builtin_round_trips() {
        let def = builtin_order_processing();
        let text = render_definition(&def);
        let reparsed = parse_process_definition(&text).expect("round trip parses");
        assert_eq!(reparsed, def);
    }

    #[test]
    fn render_guard_minimal_parens() {
        let g = GuardExpr::or(
            GuardExpr::flag("rejected"),
            GuardExpr::and(GuardExpr::flag("acceptPayment"), GuardExpr::flag("shipOrder")),
        );
        assert_eq!(render_guard(&g), "rejected | acceptPayment & shipOrder");
        let g = GuardExpr::and(
            GuardExpr::or(GuardExpr::flag("a"), GuardExpr::flag("b")),
            GuardExpr::flag("c"),
        );
        assert_eq!(render_guard(&g), "(a | b) & c");
        let g = GuardExpr::not(GuardExpr::and(GuardExpr::flag("a"), GuardExpr::flag("b")));
        assert_eq!(render_guard(&g), "!(a & b)");
        let g = GuardExpr::not(GuardExpr::not(GuardExpr::flag("a")));
        assert_eq!(render_guard(&g), "!!a");
    }

    #[test]
    fn right_nested_or_keeps_parens() {
        let g = GuardExpr::or(
            GuardExpr::flag("a"),
            GuardExpr::or(GuardExpr::flag("b"), GuardExpr::flag("c")),
        );
        let rendered = render_guard(&g);
        assert_eq!(rendered, "a | (b | c)");
    }
}
