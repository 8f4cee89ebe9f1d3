//! Prompt embedding: signed hashed bag of words.
//!
//! Tokens are maximal runs of ASCII alphanumerics, lowercased. Each token is
//! hashed with 64-bit FNV-1a; the hash modulo `dim` picks a bucket and the top
//! bit picks the sign. The embedding is the mean over tokens.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_ascii_lowercase)
        .collect()
}

/// Embeds `text` into `dim` buckets. Empty text maps to the zero vector.
pub fn embed_prompt(text: &str, dim: usize) -> Vec<f32> {
    assert!(dim > 0, "embedding dimension must be positive");
    let tokens = tokenize(text);
    let mut out = vec![0.0f32; dim];
    for t in &tokens {
        let h = fnv1a64(t.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        out[(h % dim as u64) as usize] += sign;
    }
    if !tokens.is_empty() {
        let n = tokens.len() as f32;
        out.iter_mut().for_each(|v| *v /= n);
    }
    out
}
