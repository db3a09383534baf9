//! Trace-level sentence graphs.
//!
//! Nodes are reasoning sentences. Each sentence links to its successor with
//! weight 1, and to every later sentence with `lambda_edge * max(0, cos)`.
//! Rows are then normalized by their sums, and the node measure is uniform.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceGraph {
    pub features: Array2<f64>,
    pub adjacency: Array2<f64>,
    pub measure: Array1<f64>,
}

impl SentenceGraph {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Replace node features while keeping adjacency and measure.
    pub fn with_features(&self, features: Array2<f64>) -> Self {
        Self {
            features,
            adjacency: self.adjacency.clone(),
            measure: self.measure.clone(),
        }
    }

    pub fn to_export(&self) -> GraphExport {
        let rows = |m: &Array2<f64>| m.rows().into_iter().map(|r| r.to_vec()).collect();
        GraphExport {
            features: rows(&self.features),
            adjacency: rows(&self.adjacency),
            measure: self.measure.to_vec(),
        }
    }
}

/// JSON-friendly dump of a graph for inspection and plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphExport {
    pub features: Vec<Vec<f64>>,
    pub adjacency: Vec<Vec<f64>>,
    pub measure: Vec<f64>,
}

fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a.dot(&b) / (na * nb)).clamp(-1.0, 1.0)
}

pub fn build_graph(features: &Array2<f64>, lambda_edge: f64) -> Result<SentenceGraph> {
    let t = features.nrows();
    if t == 0 {
        return Err(Error::InvalidArgument("sentence graph needs at least one node".into()));
    }
    if !(lambda_edge >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda_edge must be >= 0, got {lambda_edge}")));
    }
    if features.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("non-finite sentence feature".into()));
    }

    let mut adjacency = Array2::<f64>::zeros((t, t));
    for i in 0..t {
        for j in i + 1..t {
            let successor = if j == i + 1 { 1.0 } else { 0.0 };
            let similarity = if lambda_edge > 0.0 {
                lambda_edge * cosine(features.row(i), features.row(j)).max(0.0)
            } else {
                0.0
            };
            adjacency[[i, j]] = successor + similarity;
        }
        let sum: f64 = adjacency.row(i).sum();
        if sum > 0.0 {
            adjacency.row_mut(i).mapv_inplace(|x| x / sum);
        }
    }

    Ok(SentenceGraph {
        features: features.clone(),
        adjacency,
        measure: Array1::from_elem(t, 1.0 / t as f64),
    })
}

/// Build the external and internal graphs with one rule and one
/// `lambda_edge`.
pub fn shared_build(
    internal: &Array2<f64>,
    external: &Array2<f64>,
    lambda_edge: f64,
) -> Result<(SentenceGraph, SentenceGraph)> {
    if internal.nrows() != external.nrows() {
        return Err(Error::DimensionMismatch {
            expected: internal.nrows(),
            got: external.nrows(),
        });
    }
    Ok((build_graph(internal, lambda_edge)?, build_graph(external, lambda_edge)?))
}
