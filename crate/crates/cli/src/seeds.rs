//! Sub-seed derivation: every randomized stage draws its own generator from
//! the experiment seed and a fixed purpose tag, so stages stay independent
//! and reordering or skipping one never shifts another's stream.

/// SplitMix64 finalizer; the standard constants.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Deterministic sub-seed for (experiment seed, purpose tag).
pub fn sub_seed(base: u64, tag: u64) -> u64 {
    splitmix64(base ^ tag)
}

/// Purpose tags. Indexed purposes add the index (measurement count, beta
/// position) to the tag; tags are spaced far enough apart that sums from
/// different purposes can never collide.
pub mod tags {
    /// Gaussian measurement operator for measurement count m: `OPERATOR + m`.
    pub const OPERATOR: u64 = 0x0001_0000;
    /// Test-set measurement noise for measurement count m: `NOISE_TEST + m`.
    pub const NOISE_TEST: u64 = 0x0002_0000;
    /// Validation measurement noise for measurement count m.
    pub const NOISE_VAL: u64 = 0x0003_0000;
    /// Learned-operator training for measurement count m: `HECSA + m`.
    pub const HECSA: u64 = 0x0004_0000;
    /// VAE baseline training (once per experiment).
    pub const VAE: u64 = 0x0005_0000;
    /// VAE latent search restarts for measurement count m.
    pub const VAE_SEARCH: u64 = 0x0006_0000;
    /// Teacher classifier training.
    pub const TEACHER: u64 = 0x0007_0000;
    /// Stage-1 bottleneck training for beta index i: `BOTTLENECK + i`.
    pub const BOTTLENECK: u64 = 0x0008_0000;
    /// Stage-2 fine-tuning for beta index i: `STAGE2 + i`.
    pub const STAGE2: u64 = 0x0009_0000;
    /// Frame fuzzing in the acceptance suite.
    pub const FUZZ: u64 = 0x000A_0000;
}
