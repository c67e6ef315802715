use sha2::{Digest, Sha256};

/// Seed for a named stage: the first 8 bytes (little endian) of
/// `SHA-256(root.to_le_bytes() ++ name)`.
pub fn derive_seed(root: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stages_get_distinct_stable_seeds() {
        assert_eq!(derive_seed(7, "gbm"), derive_seed(7, "gbm"));
        assert_ne!(derive_seed(7, "gbm"), derive_seed(7, "basisnet"));
        assert_ne!(derive_seed(7, "gbm"), derive_seed(8, "gbm"));
    }
}
