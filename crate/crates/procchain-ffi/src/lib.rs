//! C ABI over the procchain engine.
//!
//! Handles are opaque pointers created and destroyed here; strings cross
//! the boundary as NUL-terminated UTF-8, with structured values (requests,
//! outcomes, assets, experiment configs and reports) encoded in the
//! engine's canonical JSON. Every function returns a status code; on any
//! non-OK status, [`procchain_last_error_message`] describes the failure
//! for the calling thread. Strings returned through out-parameters are
//! owned by the caller and must be released with [`procchain_string_free`].
//!
//! The generated header lives at `include/procchain.h`.

use procchain::acl::policy_for_definition;
use procchain::canonical;
use procchain::engine::{Network, QueryDenied, TransactionRequest};
use procchain::harness::{self, ExperimentConfig};
use procchain::ledger::Chain;
use procchain::process::{builtin_order_processing, parse_process_definition};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

/// Bumped on any breaking change to this interface.
pub const PROCCHAIN_ABI_VERSION: u32 = 1;

/// Result of every interface call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProcchainStatus {
    Ok = 0,
    /// Null pointer, zero batch size, or an otherwise unusable argument.
    InvalidArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Definition text or JSON input did not parse.
    ParseFailed = 3,
    /// Ledger load, verification, or replay failed.
    LedgerFailed = 4,
    /// Filesystem failure.
    IoFailed = 5,
    /// Asset absent or not readable by the invoker.
    NotVisible = 6,
    /// Invoker is not a registered participant.
    UnknownIdentity = 7,
    /// The experiment run aborted or was misconfigured.
    ExperimentFailed = 8,
    /// An internal panic was caught; the handle may be inconsistent.
    Panic = 9,
}

/// Opaque network handle.
pub struct ProcchainNetwork {
    inner: Network,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> =
        RefCell::new(CString::new("").expect("empty string has no NUL"));
}

fn set_last_error(message: &str) {
    let sanitized = message.replace('\0', "\u{fffd}");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("NUL bytes replaced");
    });
}

fn fail(status: ProcchainStatus, message: impl AsRef<str>) -> ProcchainStatus {
    set_last_error(message.as_ref());
    status
}

/// Message for the most recent failure on this thread. Valid until the
/// next interface call from the same thread; never null.
#[no_mangle]
pub extern "C" fn procchain_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn procchain_abi_version() -> u32 {
    PROCCHAIN_ABI_VERSION
}

/// # Safety
/// `ptr` must be null or a NUL-terminated string.
unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, ProcchainStatus> {
    if ptr.is_null() {
        return Err(fail(
            ProcchainStatus::InvalidArgument,
            format!("{what} must not be null"),
        ));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(ProcchainStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn give_string(out: *mut *mut c_char, value: String) -> Result<(), ProcchainStatus> {
    if out.is_null() {
        return Err(fail(
            ProcchainStatus::InvalidArgument,
            "out pointer must not be null",
        ));
    }
    let c = CString::new(value.replace('\0', "\u{fffd}")).expect("NUL bytes replaced");
    unsafe { *out = c.into_raw() };
    Ok(())
}

fn guarded(body: impl FnOnce() -> ProcchainStatus) -> ProcchainStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            fail(ProcchainStatus::Panic, format!("internal panic: {message}"))
        }
    }
}

unsafe fn borrow_network<'a>(
    handle: *mut ProcchainNetwork,
) -> Result<&'a mut ProcchainNetwork, ProcchainStatus> {
    handle.as_mut().ok_or_else(|| {
        fail(
            ProcchainStatus::InvalidArgument,
            "network handle must not be null",
        )
    })
}

fn build_network(definition_text: Option<&str>, batch_size: usize) -> Result<Network, ProcchainStatus> {
    let def = match definition_text {
        None => builtin_order_processing(),
        Some(text) => parse_process_definition(text)
            .map_err(|e| fail(ProcchainStatus::ParseFailed, e.to_string()))?,
    };
    let policy = policy_for_definition(&def);
    Network::new(def, policy, batch_size)
        .map_err(|e| fail(ProcchainStatus::InvalidArgument, e.to_string()))
}

/// Creates an empty network. `definition_text` may be null for the
/// built-in order process. On OK the caller owns `*out` and must free it
/// with `procchain_network_free`.
///
/// Safety: pointer arguments must satisfy the contracts above.
#[no_mangle]
pub unsafe extern "C" fn procchain_network_new(
    definition_text: *const c_char,
    batch_size: usize,
    out: *mut *mut ProcchainNetwork,
) -> ProcchainStatus {
    guarded(|| {
        if out.is_null() {
            return fail(ProcchainStatus::InvalidArgument, "out must not be null");
        }
        let text = if definition_text.is_null() {
            None
        } else {
            match read_str(definition_text, "definition_text") {
                Ok(s) => Some(s),
                Err(status) => return status,
            }
        };
        match build_network(text, batch_size) {
            Ok(network) => {
                *out = Box::into_raw(Box::new(ProcchainNetwork { inner: network }));
                ProcchainStatus::Ok
            }
            Err(status) => status,
        }
    })
}

/// Loads, verifies, and replays a persisted ledger into a network handle.
///
/// Safety: pointer arguments must satisfy the contracts above.
#[no_mangle]
pub unsafe extern "C" fn procchain_network_open(
    ledger_path: *const c_char,
    definition_text: *const c_char,
    batch_size: usize,
    out: *mut *mut ProcchainNetwork,
) -> ProcchainStatus {
    guarded(|| {
        if out.is_null() {
            return fail(ProcchainStatus::InvalidArgument, "out must not be null");
        }
        let path = match read_str(ledger_path, "ledger_path") {
            Ok(p) => p,
            Err(status) => return status,
        };
        let text = if definition_text.is_null() {
            None
        } else {
            match read_str(definition_text, "definition_text") {
                Ok(s) => Some(s),
                Err(status) => return status,
            }
        };
        let network = match build_network(text, batch_size) {
            Ok(n) => n,
            Err(status) => return status,
        };
        let chain = match Chain::load(Path::new(path)) {
            Ok(c) => c,
            Err(e) => return fail(ProcchainStatus::LedgerFailed, e.to_string()),
        };
        match Network::from_chain(
            network.definition().clone(),
            network.policy().clone(),
            chain,
            batch_size,
        ) {
            Ok(n) => {
                *out = Box::into_raw(Box::new(ProcchainNetwork { inner: n }));
                ProcchainStatus::Ok
            }
            Err(e) => fail(ProcchainStatus::LedgerFailed, e.to_string()),
        }
    })
}

/// Seals pending records and writes the chain to `ledger_path`.
///
/// Safety: pointer arguments must satisfy the contracts above.
#[no_mangle]
pub unsafe extern "C" fn procchain_network_save(
    handle: *mut ProcchainNetwork,
    ledger_path: *const c_char,
) -> ProcchainStatus {
    guarded(|| {
        let network = match borrow_network(handle) {
            Ok(n) => n,
            Err(status) => return status,
        };
        let path = match read_str(ledger_path, "ledger_path") {
            Ok(p) => p,
            Err(status) => return status,
        };
        network.inner.flush();
        match network.inner.chain().persist(Path::new(path)) {
            Ok(()) => ProcchainStatus::Ok,
            Err(e) => fail(ProcchainStatus::IoFailed, e.to_string()),
        }
    })
}

/// Releases a handle. Null is a no-op.
///
/// Safety: `handle` must come from this interface and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn procchain_network_free(handle: *mut ProcchainNetwork) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Submits one request, given as the canonical JSON of a transaction
/// request. On OK, `*out_outcome_json` holds the verdict as canonical
/// JSON (the request may well have been rejected; that is still OK here).
///
/// Safety: pointer arguments must satisfy the contracts above.
#[no_mangle]
pub unsafe extern "C" fn procchain_network_submit_json(
    handle: *mut ProcchainNetwork,
    request_json: *const c_char,
    out_outcome_json: *mut *mut c_char,
) -> ProcchainStatus {
    guarded(|| {
        let network = match borrow_network(handle) {
            Ok(n) => n,
            Err(status) => return status,
        };
        let raw = match read_str(request_json, "request_json") {
            Ok(r) => r,
            Err(status) => return status,
        };
        let request: TransactionRequest = match serde_json::from_str(raw) {
            Ok(r) => r,
            Err(e) => return fail(ProcchainStatus::ParseFailed, format!("request: {e}")),
        };
        let outcome = network.inner.submit(request);
        match give_string(out_outcome_json, canonical::to_canonical_json(&outcome)) {
            Ok(()) => ProcchainStatus::Ok,
            Err(status) => status,
        }
    })
}

/// READ-gated asset lookup; on OK, `*out_asset_json` holds the asset as
/// canonical JSON.
///
/// Safety: pointer arguments must satisfy the contracts above.
#[no_mangle]
pub unsafe extern "C" fn procchain_network_query_asset_json(
    handle: *mut ProcchainNetwork,
    invoker_id: *const c_char,
    asset_id: *const c_char,
    out_asset_json: *mut *mut c_char,
) -> ProcchainStatus {
    guarded(|| {
        let network = match borrow_network(handle) {
            Ok(n) => n,
            Err(status) => return status,
        };
        let invoker = match read_str(invoker_id, "invoker_id") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let asset = match read_str(asset_id, "asset_id") {
            Ok(s) => s,
            Err(status) => return status,
        };
        match network.inner.query_asset(invoker, asset) {
            Ok(found) => match give_string(out_asset_json, canonical::to_canonical_json(found)) {
                Ok(()) => ProcchainStatus::Ok,
                Err(status) => status,
            },
            Err(QueryDenied::NotVisible) => {
                fail(ProcchainStatus::NotVisible, format!("{asset} is not visible"))
            }
            Err(QueryDenied::UnknownIdentity) => fail(
                ProcchainStatus::UnknownIdentity,
                format!("{invoker} is not registered"),
            ),
        }
    })
}

/// Canonical hash of the current world state.
///
/// Safety: pointer arguments must satisfy the contracts above.
#[no_mangle]
pub unsafe extern "C" fn procchain_network_state_hash(
    handle: *mut ProcchainNetwork,
    out_hash_hex: *mut *mut c_char,
) -> ProcchainStatus {
    guarded(|| {
        let network = match borrow_network(handle) {
            Ok(n) => n,
            Err(status) => return status,
        };
        let hash = network.inner.state().canonical_hash();
        match give_string(out_hash_hex, hash) {
            Ok(()) => ProcchainStatus::Ok,
            Err(status) => status,
        }
    })
}

/// Verifies the sealed chain. OK with `*out_violation` set to null when
/// intact; `LedgerFailed` with a description when not.
///
/// Safety: pointer arguments must satisfy the contracts above.
#[no_mangle]
pub unsafe extern "C" fn procchain_network_verify(
    handle: *mut ProcchainNetwork,
    out_violation: *mut *mut c_char,
) -> ProcchainStatus {
    guarded(|| {
        let network = match borrow_network(handle) {
            Ok(n) => n,
            Err(status) => return status,
        };
        if out_violation.is_null() {
            return fail(ProcchainStatus::InvalidArgument, "out must not be null");
        }
        match network.inner.chain().verify() {
            Ok(()) => {
                *out_violation = std::ptr::null_mut();
                ProcchainStatus::Ok
            }
            Err(violation) => {
                let message = violation.to_string();
                match give_string(out_violation, message.clone()) {
                    Ok(()) => fail(ProcchainStatus::LedgerFailed, message),
                    Err(status) => status,
                }
            }
        }
    })
}

/// Runs the seeded experiment described by an experiment-config JSON
/// object and returns the report as canonical JSON.
///
/// Safety: pointer arguments must satisfy the contracts above.
#[no_mangle]
pub unsafe extern "C" fn procchain_experiment_run_json(
    config_json: *const c_char,
    out_report_json: *mut *mut c_char,
) -> ProcchainStatus {
    guarded(|| {
        let raw = match read_str(config_json, "config_json") {
            Ok(r) => r,
            Err(status) => return status,
        };
        let config: ExperimentConfig = match serde_json::from_str(raw) {
            Ok(c) => c,
            Err(e) => return fail(ProcchainStatus::ParseFailed, format!("config: {e}")),
        };
        match harness::run_experiment(&config) {
            Ok((report, _chain)) => {
                match give_string(out_report_json, canonical::to_canonical_json(&report)) {
                    Ok(()) => ProcchainStatus::Ok,
                    Err(status) => status,
                }
            }
            Err(e) => fail(ProcchainStatus::ExperimentFailed, e.to_string()),
        }
    })
}

/// Releases a string returned by this interface. Null is a no-op.
///
/// Safety: `s` must come from this interface and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn procchain_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
