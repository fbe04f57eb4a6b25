//! Content hashing helpers shared across the pipeline.
//!
//! Record ids, cache keys, and selection manifests all use the same
//! construction: SHA-256 truncated to 128 bits, rendered as lowercase hex.
//! Inputs are joined with a unit separator so `("ab", "c")` and `("a", "bc")`
//! never collide.

use sha2::{Digest, Sha256};

const FIELD_SEP: &[u8] = &[0x1f];

/// 128-bit content hash of the given parts, as a 32-char lowercase hex string.
pub fn content_hash(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            hasher.update(FIELD_SEP);
        }
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    to_hex(&digest[..16])
}

/// Full 256-bit hex digest, used where truncation buys nothing (file digests,
/// selection manifests).
pub fn digest_hex(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            hasher.update(FIELD_SEP);
        }
        hasher.update(part.as_bytes());
    }
    to_hex(&hasher.finalize())
}

/// Hex digest of raw bytes (for hashing file contents).
pub fn digest_bytes_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    to_hex(&hasher.finalize())
}

fn to_hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
