use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for derived random streams. Every consumer of randomness gets
/// its own stream keyed by (seed, tag, indices), so the draw order of one
/// consumer can never shift another's. This is what makes runs resumable from
/// checkpoints without replaying earlier stages.
pub mod stream {
    pub const SCENE: u32 = 1;
    pub const ORACLE_INIT: u32 = 2;
    pub const ORACLE_PSEUDO: u32 = 3;
    pub const FIELD_INIT: u32 = 4;
    pub const VIEW_SAMPLER: u32 = 5;
    pub const REFINE_SAMPLER: u32 = 6;
    pub const GRADCHECK: u32 = 7;
}

/// Deterministic substream: the 256-bit ChaCha key is the seed plus up to
/// six 32-bit context words (stage, frame, restart counter, ...).
pub fn substream(seed: u64, tags: &[u32]) -> ChaCha8Rng {
    assert!(tags.len() <= 6, "at most six context tags fit in the key");
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    for (i, tag) in tags.iter().enumerate() {
        key[8 + 4 * i..8 + 4 * (i + 1)].copy_from_slice(&tag.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_tags_same_stream() {
        let mut a = substream(7, &[stream::SCENE, 3]);
        let mut b = substream(7, &[stream::SCENE, 3]);
        for _ in 0..32 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }

    #[test]
    fn different_tags_diverge() {
        let mut a = substream(7, &[stream::SCENE, 3]);
        let mut b = substream(7, &[stream::SCENE, 4]);
        let same = (0..32).filter(|_| a.random::<u64>() == b.random::<u64>()).count();
        assert!(same < 2);
    }
}
