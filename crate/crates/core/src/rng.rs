//! Seeded generators.
//!
//! Every sampling step draws from a ChaCha8 stream derived from the run seed
//! and a label naming the item being sampled, so results do not depend on
//! the order (or the thread) in which items are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::hash::fnv1a64;

pub type ExperimentRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> ExperimentRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for one labelled item, e.g. `("pred", "12", "3")`.
pub fn for_item(seed: u64, labels: &[&str]) -> ExperimentRng {
    let mut key = seed.to_le_bytes().to_vec();
    for label in labels {
        key.push(0x1f);
        key.extend_from_slice(label.as_bytes());
    }
    ChaCha8Rng::seed_from_u64(fnv1a64(&key))
}
