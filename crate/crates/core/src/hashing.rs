use serde::Serialize;
use sha2::{Digest, Sha256};

/// Short SHA-256 digest of the canonical (key-sorted) JSON form of `value`.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> String {
    // serde_json::Value keeps object keys sorted, which makes the digest
    // independent of field or key order in the source.
    let canonical = serde_json::to_value(value)
        .and_then(|v| serde_json::to_string(&v))
        .expect("config values serialize to JSON");
    let digest = Sha256::digest(canonical.as_bytes());
    hex::encode(&digest[..8])
}
