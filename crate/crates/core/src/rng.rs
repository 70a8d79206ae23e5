//! Named random streams.
//!
//! Every random draw in a trial comes from a stream keyed by
//! `(seed, role, agent, iteration)`. Streams are independent of the order in
//! which they are opened, so agents can be stepped on any number of workers
//! and still reproduce the sequential run bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum StreamRole {
    GroundTruth = 1,
    Perturbation = 2,
    Arms = 3,
    Feedback = 4,
    DatasetRound = 5,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Opens the stream for `(seed, role, agent, iteration)`.
pub fn stream(seed: u64, role: StreamRole, agent: u64, iteration: u64) -> StreamRng {
    let mut state = seed;
    let mut mix = splitmix64(&mut state);
    for word in [role as u64, agent, iteration] {
        state ^= word.wrapping_mul(0xD6E8_FEB8_6659_FD93) ^ mix;
        mix = splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
