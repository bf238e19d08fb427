//! Causal out-of-distribution few-shot node classification on
//! heterogeneous graphs.
//!
//! The crate is organised bottom-up:
//!
//! - [`numcore`]: dense tensors, reverse-mode autodiff, Adam.
//! - [`hetgraph`]: typed graphs, relation adjacencies, k-hop subgraphs.
//! - [`episodes`]: N-way K-shot task sampling.
//! - [`oodgen`]: I.I.D./OOD splits and a seeded causal graph generator.
//! - [`vae_hgnn`]: the variational heterogeneous GNN and its loss terms.
//! - [`metalearn`]: node valuator, prototypes, meta-training and testing.
//! - [`experiment`]: end-to-end protocols shared by the CLI and tests.
//! - [`selfcheck`]: a seeded six-node fixture and gradient self-checks.

pub mod episodes;
pub mod error;
pub mod experiment;
pub mod hetgraph;
pub mod metalearn;
pub mod numcore;
pub mod oodgen;
pub mod selfcheck;
pub mod vae_hgnn;

pub use error::{Error, Result};

/// Name of the pseudorandom generator used for every seeded draw.
pub const RNG_ALGORITHM: &str = "ChaCha8";

/// The crate-wide seeded generator.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate-wide generator from a seed.
pub fn rng(seed: u64) -> Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

/// Derives an independent stream seed from a base seed and a label.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
