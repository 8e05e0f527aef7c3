//! Deterministic offline embedder based on signed feature hashing.

use crate::llm::{Embedder, LlmError, EMBEDDING_DIM};

pub const LOCAL_EMBEDDER_TAG: &str = "local-fh256-v1";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over the UTF-8 bytes.
pub fn fnv1a64(s: &str) -> u64 {
    s.bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Unigrams and adjacent bigrams hashed into 256 signed buckets, then
/// L2-normalized.
pub fn local_embed(text: &str) -> Result<Vec<f64>, LlmError> {
    let words = tokens(text);
    if words.is_empty() {
        return Err(LlmError::EmptyText);
    }
    let bigrams = words.windows(2).map(|w| format!("{} {}", w[0], w[1]));
    let mut v = vec![0.0f64; EMBEDDING_DIM];
    for feature in words.iter().cloned().chain(bigrams) {
        let h = fnv1a64(&feature);
        let sign = if h.is_multiple_of(2) { 1.0 } else { -1.0 };
        v[(h % EMBEDDING_DIM as u64) as usize] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(LlmError::EmptyText);
    }
    Ok(v.into_iter().map(|x| x / norm).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LocalEmbedder;

impl Embedder for LocalEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, LlmError> {
        local_embed(text)
    }
    fn tag(&self) -> String {
        LOCAL_EMBEDDER_TAG.into()
    }
}
