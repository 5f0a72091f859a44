//! Counter-based random substreams.
//!
//! Every trial owns a ChaCha stream keyed by the master seed and selected by
//! the trial index; inside a trial, independent lanes (geometry, one lane per
//! user) are disjoint blocks of the keystream. A trial therefore draws the
//! same numbers no matter which worker runs it or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Lane reserved for the spatial draws of a trial.
pub const GEOMETRY_LANE: u64 = 0;

/// Lane of user `k` (0-based) inside a trial.
pub fn user_lane(k: usize) -> u64 {
    1 + k as u64
}

pub fn substream(seed: u64, trial: u64, lane: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng.set_word_pos(u128::from(lane) << 40);
    rng
}
