//! Tree-based genetic programming for symbolic regression, with a complete
//! genealogy of every reproduction event and exact subtree-level provenance.
//!
//! The crate is organised around a small set of building blocks:
//!
//! * [`exprtree`] — flat preorder expression trees (the genotype) and the
//!   subtree arithmetic everything else is built on,
//! * [`operators`] — crossover, mutation, fitness and selection schemes,
//!   each reporting exact fragment coordinates,
//! * [`engine`] — generational loops (standard GP and offspring-selection GP)
//!   that stream every event into a genealogy recorder,
//! * [`genealogy`] — the append-only run DAG plus its durable log format,
//! * [`trace`] — backward tracing of genotype fragments through the DAG,
//! * [`metrics`] — improvement, overlap, similarity and contribution-ratio
//!   measurements computed from the log alone,
//! * [`problems`] — benchmark problems and dataset generation,
//! * [`cli`] — the `data | run | trace | analyze` subcommands.

pub mod cli;
pub mod engine;
pub mod exprtree;
pub mod genealogy;
pub mod metrics;
pub mod operators;
pub mod par;
pub mod problems;
pub mod trace;

/// splitmix64 finalizer; the scrambler used everywhere a seed is derived.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and a list of tags.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut h = splitmix64(base);
    for &t in tags {
        h = splitmix64(h ^ t.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    h
}
