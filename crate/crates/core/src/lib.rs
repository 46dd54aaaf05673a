pub mod config;
pub mod data;
pub mod distill;
pub mod error;
pub mod gradcheck;
pub mod importance;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod online;
pub mod regularizers;
pub mod runner;
pub mod sequence;

pub use error::{Error, Result};

/// Mixes extra words into a base seed so nested RNGs (per task, per epoch,
/// per phase) stay decorrelated while remaining reproducible.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        z ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(z << 6);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}
