use serde::Serialize;
use sha2::{Digest, Sha256};

/// Hex SHA-256 of the canonical JSON encoding of `value`.
pub fn config_digest<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config types serialize");
    hex::encode(Sha256::digest(&bytes))
}

/// Digest of several already-computed digests, order-sensitive.
pub fn combine(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_and_sensitive() {
        let a = config_digest(&(1.0f64, "x"));
        assert_eq!(a, config_digest(&(1.0f64, "x")));
        assert_ne!(a, config_digest(&(1.5f64, "x")));
        assert_eq!(a.len(), 64);
        assert_ne!(combine(&["a", "b"]), combine(&["b", "a"]));
    }
}
