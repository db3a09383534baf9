//! Circuit-guided internal/external discrepancy scoring for
//! chain-of-thought faithfulness.
//!
//! A reasoning trace is turned into two sentence graphs: one from the
//! displayed text (pooled hidden states through an adaptor) and one from
//! attribution circuits traced at a few informative tokens per sentence
//! (through a GIN). Their fused Gromov-Wasserstein distance is the
//! unfaithfulness score.

// Negated comparisons such as `!(x >= 0.0)` are how NaN gets rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod circuit_graph;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod fgw;
pub mod sentence_graph;
pub mod synthetic;
pub mod tensor_io;
pub mod token_select;
pub mod trace_store;
pub mod training;

pub use error::{Error, Result};
