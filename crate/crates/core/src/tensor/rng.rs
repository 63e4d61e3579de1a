use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Seedable generator used everywhere randomness is needed.
///
/// Backed by ChaCha8, whose output stream is fixed by its specification and
/// therefore identical on every platform for a given seed.
#[derive(Debug, Clone)]
pub struct RngState(ChaCha8Rng);

impl RngState {
    pub fn seed_from(seed: u64) -> Self {
        RngState(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Independent generator for a named sub-stage, derived from `seed`.
    pub fn derived(seed: u64, stage: &str) -> Self {
        Self::seed_from(derive_seed(seed, stage))
    }
}

/// `hash(seed, label)` folded to 64 bits.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_is_pinned() {
        // Frozen from a first run; guards against accidental algorithm swaps.
        let mut rng = RngState::seed_from(42);
        let first: Vec<u64> = (0..3).map(|_| rng.next_u64()).collect();
        assert_eq!(
            first,
            vec![0xae90bfb5395d5ba1, 0xf3453fc625799188, 0x6d71b708c5b6538c]
        );
    }

    #[test]
    fn derived_seeds_differ_by_label() {
        assert_ne!(derive_seed(1, "train"), derive_seed(1, "datagen"));
        assert_eq!(derive_seed(1, "train"), derive_seed(1, "train"));
    }
}
