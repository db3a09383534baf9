//! Sentence encoders.
//!
//! Internal side: a two-layer GIN over the restricted circuit with signed,
//! weighted in-edge aggregation (`eps = 0`), mean readout and a linear head.
//! External side: mean-pooled token hidden states pushed through a two-layer
//! ReLU adaptor. Both sides cache their forward passes so that parameter
//! gradients can be computed exactly.

mod mlp;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::circuit_graph::AttributionGraph;
use crate::error::{Error, Result};
use crate::trace_store::SentenceRecord;

pub use mlp::{Linear, Mlp, MlpCache};

/// Width of the structural node feature vector.
pub const NODE_FEATURE_DIM: usize = 8;

/// `[kind one-hot (3), layer, position, activation, in-degree, out-degree]`,
/// with layer and position divided by `max + 1` and degrees by node count.
pub fn node_features(g: &AttributionGraph) -> Array2<f64> {
    let n = g.nodes.len();
    let mut x = Array2::zeros((n, NODE_FEATURE_DIM));
    if n == 0 {
        return x;
    }
    let index = g.index_of();
    let mut indeg = vec![0usize; n];
    let mut outdeg = vec![0usize; n];
    for e in &g.edges {
        outdeg[index[&e.src]] += 1;
        indeg[index[&e.dst]] += 1;
    }
    let max_layer = g.nodes.iter().map(|v| v.layer).max().unwrap_or(0);
    let max_pos = g.nodes.iter().map(|v| v.position).max().unwrap_or(0);
    let layer_scale = ((max_layer + 1) as f64).max(1.0);
    let pos_scale = ((max_pos + 1) as f64).max(1.0);
    for (i, v) in g.nodes.iter().enumerate() {
        x[[i, v.kind.index()]] = 1.0;
        x[[i, 3]] = v.layer as f64 / layer_scale;
        x[[i, 4]] = v.position as f64 / pos_scale;
        x[[i, 5]] = v.activation;
        x[[i, 6]] = indeg[i] as f64 / n as f64;
        x[[i, 7]] = outdeg[i] as f64 / n as f64;
    }
    x
}

/// A circuit reduced to what the GIN consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitInput {
    pub features: Array2<f64>,
    /// `(src, dst, weight)` by node index.
    pub edges: Vec<(usize, usize, f64)>,
    /// The source graph had no nodes; a single zero node stands in.
    pub empty: bool,
}

impl CircuitInput {
    pub fn from_graph(g: &AttributionGraph) -> Self {
        if g.is_empty() {
            return Self {
                features: Array2::zeros((1, NODE_FEATURE_DIM)),
                edges: Vec::new(),
                empty: true,
            };
        }
        let index = g.index_of();
        Self {
            features: node_features(g),
            edges: g
                .edges
                .iter()
                .map(|e| (index[&e.src], index[&e.dst], e.weight))
                .collect(),
            empty: false,
        }
    }

    pub fn node_count(&self) -> usize {
        self.features.nrows()
    }

    /// `h_i + sum_{j -> i} w_ji h_j` for every node.
    fn aggregate(&self, h: &Array2<f64>) -> Array2<f64> {
        let mut out = h.clone();
        for &(s, d, w) in &self.edges {
            let src = h.row(s).to_owned();
            out.row_mut(d).scaled_add(w, &src);
        }
        out
    }

    /// Adjoint of `aggregate`.
    fn aggregate_backward(&self, d_agg: &Array2<f64>) -> Array2<f64> {
        let mut out = d_agg.clone();
        for &(s, d, w) in &self.edges {
            let dst = d_agg.row(d).to_owned();
            out.row_mut(s).scaled_add(w, &dst);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GinParams {
    pub layers: Vec<Mlp>,
    pub readout: Linear,
}

#[derive(Debug, Clone)]
pub struct GinCache {
    layers: Vec<MlpCache>,
    pooled: Array1<f64>,
    nodes: usize,
}

impl GinCache {
    /// Pre-activations of every ReLU in the pass, in a fixed order.
    pub fn relu_inputs(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|c| c.pre.iter().copied())
    }
}

impl GinParams {
    pub fn init<R: rand::Rng>(d: usize, rng: &mut R) -> Self {
        let layers = vec![
            Mlp::init(NODE_FEATURE_DIM, d, d, rng),
            Mlp::init(d, d, d, rng),
        ];
        Self {
            layers,
            readout: Linear::init(d, d, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Mlp::zeros_like).collect(),
            readout: self.readout.zeros_like(),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.readout.out_dim()
    }

    pub fn forward(&self, input: &CircuitInput) -> (Array1<f64>, GinCache) {
        let mut h = input.features.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let agg = input.aggregate(&h);
            let (next, cache) = layer.forward(&agg);
            caches.push(cache);
            h = next;
        }
        let pooled = h.mean_axis(Axis(0)).expect("at least one node");
        let out = self.readout.w.dot(&pooled) + &self.readout.b;
        (
            out,
            GinCache {
                layers: caches,
                pooled,
                nodes: input.node_count(),
            },
        )
    }

    /// Accumulate gradients of a scalar loss into `grad`, given
    /// `d_out = d loss / d embedding`.
    pub fn backward(
        &self,
        input: &CircuitInput,
        cache: &GinCache,
        d_out: &Array1<f64>,
        grad: &mut GinParams,
    ) {
        let d_col = d_out.view().insert_axis(Axis(1));
        let pooled_row = cache.pooled.view().insert_axis(Axis(0));
        grad.readout.w += &d_col.dot(&pooled_row);
        grad.readout.b += d_out;
        let d_pooled = self.readout.w.t().dot(d_out) / cache.nodes as f64;
        let mut dh = Array2::from_shape_fn((cache.nodes, d_pooled.len()), |(_, c)| d_pooled[c]);
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let d_agg = layer.backward(&cache.layers[idx], &dh, &mut grad.layers[idx]);
            dh = input.aggregate_backward(&d_agg);
        }
    }

    pub(crate) fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, shape, data) in layer.tensors() {
                out.push((format!("gin.layer{i}.{name}"), shape, data));
            }
        }
        for (name, shape, data) in self.readout.tensors() {
            out.push((format!("gin.readout.{name}"), shape, data));
        }
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.extend(self.readout.tensors_mut());
        out
    }
}

#[derive(Debug, Clone)]
pub struct CircuitEncoding {
    pub embedding: Array1<f64>,
    /// Set when the circuit had no nodes and a zero node was encoded instead.
    pub empty_graph: bool,
}

pub fn encode_circuit(g: &AttributionGraph, params: &GinParams) -> CircuitEncoding {
    let input = CircuitInput::from_graph(g);
    let (embedding, _) = params.forward(&input);
    CircuitEncoding {
        embedding,
        empty_graph: input.empty,
    }
}

/// Mean of the sentence's token hidden states.
pub fn external_embed(sentence: &SentenceRecord) -> Result<Array1<f64>> {
    let rows = &sentence.hidden_states;
    let first = rows
        .first()
        .ok_or_else(|| Error::InvalidArgument("sentence has no hidden states".into()))?;
    let mut acc = Array1::<f64>::zeros(first.len());
    for row in rows {
        if row.len() != first.len() {
            return Err(Error::DimensionMismatch {
                expected: first.len(),
                got: row.len(),
            });
        }
        acc.zip_mut_with(&Array1::from(row.clone()), |a, b| *a += b);
    }
    Ok(acc / rows.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptorParams {
    pub mlp: Mlp,
}

impl AdaptorParams {
    pub fn init<R: rand::Rng>(d_model: usize, d: usize, rng: &mut R) -> Self {
        Self {
            mlp: Mlp::init(d_model, d, d, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            mlp: self.mlp.zeros_like(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.mlp.first.in_dim()
    }

    /// Adapt every row of `x`.
    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        if x.ncols() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim(),
                got: x.ncols(),
            });
        }
        Ok(self.mlp.forward(x))
    }

    pub fn backward(&self, cache: &MlpCache, d_out: &Array2<f64>, grad: &mut AdaptorParams) {
        self.mlp.backward(cache, d_out, &mut grad.mlp);
    }

    pub(crate) fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        self.mlp
            .tensors()
            .into_iter()
            .map(|(name, shape, data)| (format!("adaptor.{name}"), shape, data))
            .collect()
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.mlp.tensors_mut()
    }
}

/// `W2 relu(W1 x + b1) + b2` for a single vector.
pub fn adapt(x: &Array1<f64>, params: &AdaptorParams) -> Result<Array1<f64>> {
    let row = x.view().insert_axis(Axis(0)).to_owned();
    let (out, _) = params.forward(&row)?;
    Ok(out.row(0).to_owned())
}

/// All trainable state: the circuit encoder and the external adaptor.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub gin: GinParams,
    pub adaptor: AdaptorParams,
}

impl ModelParams {
    pub fn init(d_model: usize, d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gin = GinParams::init(d, &mut rng);
        let adaptor = AdaptorParams::init(d_model, d, &mut rng);
        Self { gin, adaptor }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            gin: self.gin.zeros_like(),
            adaptor: self.adaptor.zeros_like(),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = self.gin.named_tensors();
        out.extend(self.adaptor.named_tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.gin.tensors_mut();
        out.extend(self.adaptor.tensors_mut());
        out
    }

    pub fn len(&self) -> usize {
        self.named_tensors().iter().map(|t| t.2.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattened copy of every parameter, in checkpoint order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.named_tensors().iter().flat_map(|t| t.2.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        let mut it = values.iter();
        for slice in self.tensors_mut() {
            for x in slice.iter_mut() {
                *x = *it.next().expect("flat vector too short");
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.named_tensors()
            .iter()
            .flat_map(|t| t.2.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        let src: Vec<f64> = other.to_flat();
        let mut it = src.iter();
        for slice in self.tensors_mut() {
            for x in slice.iter_mut() {
                *x += scale * it.next().expect("shape mismatch");
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for slice in self.tensors_mut() {
            slice.iter_mut().for_each(|x| *x *= factor);
        }
    }
}
