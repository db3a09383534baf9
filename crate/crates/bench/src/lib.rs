//! Shared fixtures for the benchmarks.

use cie_core::sentence_graph::{build_graph, SentenceGraph};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A pair of random sentence graphs with `t` nodes and `d`-dim features.
pub fn graph_pair(t: usize, d: usize, seed: u64) -> (SentenceGraph, SentenceGraph) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = || Array2::from_shape_fn((t, d), |_| rng.random_range(-1.0..1.0));
    let (x1, x2) = (features(), features());
    (
        build_graph(&x1, 0.5).expect("finite features"),
        build_graph(&x2, 0.5).expect("finite features"),
    )
}
