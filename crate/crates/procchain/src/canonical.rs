//! Canonical serialization and hashing.
//!
//! Every hashed or persisted structure is rendered as canonical JSON: object
//! keys in lexicographic order, no insignificant whitespace, UTF-8. Two
//! values are equal iff their canonical forms are byte-identical, so block
//! hashes and state hashes are stable across runs and platforms. None of the
//! hashed structures contain floating-point numbers.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Digest recorded as the predecessor of the first block in a chain.
pub const ZERO_DIGEST: &str = "0000000000000000000000000000000000000000000000000000000000000000";

/// Renders `value` in canonical JSON.
///
/// Panics if `value` cannot be represented as JSON (not the case for any
/// type in this crate).
pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("value must be representable as JSON");
    // serde_json's default Value map is a BTreeMap, so `to_string` emits
    // keys sorted and compact.
    v.to_string()
}

/// Hex-encoded SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        use std::fmt::Write;
        write!(out, "{b:02x}").expect("writing to String cannot fail");
    }
    out
}

/// Hex-encoded SHA-256 of the canonical JSON form of `value`.
pub fn digest_value<T: Serialize>(value: &T) -> String {
    sha256_hex(to_canonical_json(value).as_bytes())
}
