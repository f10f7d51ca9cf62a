use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Generator keyed by a user seed and a list of context strings, so that
/// each draw depends only on what it is about and not on processing order.
pub(crate) fn keyed_rng(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

pub(crate) fn sha256_hex(chunks: impl IntoIterator<Item = impl AsRef<[u8]>>) -> String {
    let mut h = Sha256::new();
    for c in chunks {
        let c = c.as_ref();
        h.update((c.len() as u64).to_le_bytes());
        h.update(c);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Lowercase, strip punctuation other than intra-word hyphens, collapse
/// whitespace.
pub(crate) fn loose_text(s: &str) -> String {
    s.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '-' { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn keyed_rng_is_stable_and_context_sensitive() {
        let a: u64 = keyed_rng(7, &["f1", "t"]).random();
        let b: u64 = keyed_rng(7, &["f1", "t"]).random();
        let c: u64 = keyed_rng(7, &["f1t"]).random();
        let d: u64 = keyed_rng(8, &["f1", "t"]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn loose_text_normalizes() {
        assert_eq!(loose_text("  The Right-Bottom,  corner. "), "the right-bottom corner");
    }
}
