//! Deterministic feature-hashing embedder.
//!
//! Text is lower-cased and split on every non-alphanumeric character. Each
//! token is hashed with 64-bit FNV-1a over the seed (8 bytes, little-endian)
//! followed by the token's UTF-8 bytes. The bucket is `hash % dim` and the
//! sign is `+1` when the top bit of the hash is clear, `-1` otherwise. The
//! signed counts are accumulated in f64 and L2-normalized; text without
//! tokens maps to the zero vector.

use super::EmbeddingVector;

pub const HASH_MODEL_ID: &str = "hash-v1";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(state: u64, bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(state, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Bucket and sign for one (already lower-cased) token.
pub fn hash_token(token: &str, dim: usize, seed: u64) -> (usize, f64) {
    let h = fnv1a64(fnv1a64(FNV_OFFSET, &seed.to_le_bytes()), token.as_bytes());
    let bucket = (h % dim as u64) as usize;
    let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
    (bucket, sign)
}

pub(crate) fn hash_embed_tokens<I>(tokens: I, dim: usize, seed: u64) -> EmbeddingVector
where
    I: IntoIterator,
    I::Item: AsRef<str>,
{
    let mut acc = vec![0.0f64; dim];
    for token in tokens {
        let (bucket, sign) = hash_token(token.as_ref(), dim, seed);
        acc[bucket] += sign;
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut acc {
            *v /= norm;
        }
    }
    EmbeddingVector::new(acc.into_iter().map(|v| v as f32).collect())
        .expect("hashed counts are finite")
}

/// # Panics
/// If `dim` is zero.
pub fn hash_embed(text: &str, dim: usize, seed: u64) -> EmbeddingVector {
    assert!(dim > 0, "hash_embed requires a positive dimension");
    hash_embed_tokens(tokenize(text), dim, seed)
}
