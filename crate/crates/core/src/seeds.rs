//! Seed splitting.
//!
//! Every randomized stage draws from `ChaCha8Rng::seed_from_u64(run_seed)`
//! with its ChaCha stream set to the 64-bit FNV-1a hash of a fixed stage
//! name (listed below). Stages therefore never share random numbers, and a
//! stage's generator can be rebuilt from the run seed and its name alone.
//!
//! | name                  | used by                               |
//! |-----------------------|---------------------------------------|
//! | `synth.trajectory`    | endpoint pose of a synthetic sequence |
//! | `synth.thresholds`    | contrast threshold draw for `synth`   |
//! | `simulate.thresholds` | contrast threshold draw for `simulate`|
//! | `detect.weights`      | random network weights                |
//! | `anchors.kmeans`      | k-means initialisation                |
//! | `blink.fixture`       | scripted blink fixtures               |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const SYNTH_TRAJECTORY: &str = "synth.trajectory";
pub const SYNTH_THRESHOLDS: &str = "synth.thresholds";
pub const SIMULATE_THRESHOLDS: &str = "simulate.thresholds";
pub const DETECT_WEIGHTS: &str = "detect.weights";
pub const ANCHORS_KMEANS: &str = "anchors.kmeans";
pub const BLINK_FIXTURE: &str = "blink.fixture";

pub fn stream_id(name: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn stage_rng(run_seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    rng.set_stream(stream_id(name));
    rng
}

/// A `u64` seed for APIs that take a seed rather than a generator.
pub fn stage_seed(run_seed: u64, name: &str) -> u64 {
    use rand::RngCore;
    stage_rng(run_seed, name).next_u64()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(stream_id(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(stream_id("a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn stages_are_independent_and_reproducible() {
        let a = stage_rng(7, SYNTH_TRAJECTORY).next_u64();
        assert_eq!(a, stage_rng(7, SYNTH_TRAJECTORY).next_u64());
        assert_ne!(a, stage_rng(7, SYNTH_THRESHOLDS).next_u64());
        assert_ne!(a, stage_rng(8, SYNTH_TRAJECTORY).next_u64());
    }
}
