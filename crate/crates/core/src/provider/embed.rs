/// Text encoder producing unit-normalized vectors of a fixed dimension.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f32>;
}

/// Deterministic character-trigram feature-hashing embedder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    pub dimension: usize,
    pub seed: u64,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dimension: 64, seed: 0 }
    }
}

impl HashEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension >= 2, "embedding dimension must be at least 2");
        HashEmbedder { dimension, seed }
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Vec<f32> {
        hash_embed(text, self.dimension, self.seed)
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(seed: u64, salt: u8, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in seed.to_le_bytes().iter().chain(std::iter::once(&salt)).chain(bytes) {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Hashes the character trigrams of `^text$` into `dimension` buckets with a
/// ±1 sign per trigram, then L2-normalizes. Bucket and sign come from FNV-1a
/// over `seed (LE) ‖ salt ‖ utf8(trigram)` with salt 0 and 1 respectively.
/// An all-zero accumulation maps to the basis vector e₀.
pub fn hash_embed(text: &str, dimension: usize, seed: u64) -> Vec<f32> {
    assert!(dimension >= 2, "embedding dimension must be at least 2");
    let chars: Vec<char> = std::iter::once('^')
        .chain(text.chars())
        .chain(std::iter::once('$'))
        .collect();
    let mut acc = vec![0.0f64; dimension];
    let mut buf = String::with_capacity(12);
    for w in chars.windows(3) {
        buf.clear();
        buf.extend(w);
        let bucket = (fnv1a(seed, 0, buf.as_bytes()) % dimension as u64) as usize;
        let sign = if fnv1a(seed, 1, buf.as_bytes()) & 1 == 0 { 1.0 } else { -1.0 };
        acc[bucket] += sign;
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        let mut e0 = vec![0.0f32; dimension];
        e0[0] = 1.0;
        return e0;
    }
    acc.iter().map(|x| (x / norm) as f32).collect()
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}
