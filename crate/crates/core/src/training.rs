//! Detector training: forward the full pipeline per trace, apply the margin
//! loss, step the encoder and adaptor parameters, then calibrate the
//! decision threshold on held-out traces.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Cursor;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit_graph::{graph_stats, restrict_circuit};
use crate::encoders::{external_embed, CircuitInput, GinCache, MlpCache, ModelParams};
use crate::error::{Error, Result};
use crate::evaluation::Confusion;
use crate::fgw::{fgw_grad_features, solve_fgw, FgwConfig, FgwResult};
use crate::sentence_graph::{shared_build, SentenceGraph};
use crate::tensor_io::{read_tensor, write_tensor};
use crate::token_select::{select_tokens, SelectionConfig};
use crate::trace_store::{TraceRecord, UnfaithType};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Weight of the structure term in the FGW score.
    pub alpha: f64,
    pub lambda_edge: f64,
    pub selection: SelectionConfig,
    pub seed: u64,
    /// Width of the GIN and adaptor layers.
    pub embed_dim: usize,
    /// Share of each class held out for threshold calibration by `train`.
    pub val_fraction: f64,
    pub clip_norm: f64,
    pub fgw: FgwConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            learning_rate: 1e-4,
            batch_size: 10,
            epochs: 30,
            alpha: 0.5,
            lambda_edge: 0.5,
            selection: SelectionConfig::default(),
            seed: 0,
            embed_dim: 256,
            val_fraction: 0.2,
            clip_norm: 5.0,
            fgw: FgwConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Settings tuned for the bundled synthetic generator: small embeddings,
    /// a fast step size and a margin sized to the scale of its scores.
    pub fn synthetic_benchmark() -> Self {
        Self {
            margin: 0.05,
            learning_rate: 0.05,
            batch_size: 4,
            lambda_edge: 0.2,
            embed_dim: 32,
            selection: SelectionConfig {
                k: 3,
                ..SelectionConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad(format!("margin must be positive, got {}", self.margin));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0,1], got {}", self.alpha));
        }
        if !(self.lambda_edge >= 0.0 && self.lambda_edge.is_finite()) {
            return bad(format!("lambda_edge must be >= 0, got {}", self.lambda_edge));
        }
        if self.embed_dim == 0 {
            return bad("embed_dim must be positive".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction must lie in (0,1), got {}", self.val_fraction));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if self.fgw.max_iters == 0 {
            return bad("fgw.max_iters must be positive".into());
        }
        self.selection.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub params: ModelParams,
    pub threshold: f64,
    pub config: TrainConfig,
}

impl Detector {
    pub fn predict(&self, score: f64) -> u8 {
        u8::from(score > self.threshold)
    }
}

/// Node and token counts before and after restriction, summed over a
/// trace's sentences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TracedUsage {
    pub tokens: usize,
    pub selected_tokens: usize,
    pub full_nodes: usize,
    pub restricted_nodes: usize,
    pub empty_circuits: usize,
}

impl std::ops::AddAssign for TracedUsage {
    fn add_assign(&mut self, o: Self) {
        self.tokens += o.tokens;
        self.selected_tokens += o.selected_tokens;
        self.full_nodes += o.full_nodes;
        self.restricted_nodes += o.restricted_nodes;
        self.empty_circuits += o.empty_circuits;
    }
}

/// Everything about a trace that does not depend on trainable parameters.
#[derive(Debug, Clone)]
pub struct PreparedTrace {
    pub id: String,
    pub label: Option<u8>,
    pub unfaith_type: Option<UnfaithType>,
    pub circuits: Vec<CircuitInput>,
    /// Mean-pooled hidden states, one row per sentence.
    pub external: Array2<f64>,
    pub usage: TracedUsage,
}

impl PreparedTrace {
    pub fn len(&self) -> usize {
        self.circuits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.circuits.is_empty()
    }
}

/// Select tokens, restrict circuits and pool hidden states for every
/// sentence.
pub fn prepare_trace(trace: &TraceRecord, selection: &SelectionConfig) -> Result<PreparedTrace> {
    if trace.sentences.is_empty() {
        return Err(Error::validation(&trace.id, "sentences", "trace has no sentences"));
    }
    let mut circuits = Vec::with_capacity(trace.sentences.len());
    let mut pooled: Vec<Array1<f64>> = Vec::with_capacity(trace.sentences.len());
    let mut usage = TracedUsage::default();
    for (s, sentence) in trace.sentences.iter().enumerate() {
        let stage = |e: Error| e.at_stage(&trace.id, s);
        let circuit = sentence.circuit.as_ref().ok_or_else(|| {
            stage(Error::validation(&trace.id, format!("sentences[{s}].circuit"), "missing circuit"))
        })?;
        let selection = select_tokens(sentence, selection).map_err(stage)?;
        let positions: BTreeSet<i64> = selection.selected.iter().map(|&p| p as i64).collect();
        let restricted = restrict_circuit(circuit, &positions).map_err(stage)?;
        let input = CircuitInput::from_graph(&restricted);
        usage += TracedUsage {
            tokens: sentence.tokens.len(),
            selected_tokens: positions.len(),
            full_nodes: graph_stats(circuit).nodes(),
            restricted_nodes: graph_stats(&restricted).nodes(),
            empty_circuits: usize::from(input.empty),
        };
        circuits.push(input);
        let row = external_embed(sentence).map_err(stage)?;
        if let Some(first) = pooled.first() {
            if first.len() != row.len() {
                return Err(stage(Error::DimensionMismatch {
                    expected: first.len(),
                    got: row.len(),
                }));
            }
        }
        pooled.push(row);
    }
    let d_model = pooled[0].len();
    let external = Array2::from_shape_fn((pooled.len(), d_model), |(t, c)| pooled[t][c]);
    Ok(PreparedTrace {
        id: trace.id.clone(),
        label: trace.label,
        unfaith_type: trace.unfaith_type,
        circuits,
        external,
        usage,
    })
}

pub fn prepare_many(
    traces: &[TraceRecord],
    selection: &SelectionConfig,
    workers: usize,
) -> Result<Vec<PreparedTrace>> {
    with_pool(workers, || {
        traces
            .par_iter()
            .map(|t| prepare_trace(t, selection))
            .collect()
    })
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Other(format!("thread pool: {e}")))
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    thread_pool(workers)?.install(f)
}

/// Cached intermediates of one forward pass.
pub struct ForwardPass {
    pub internal: SentenceGraph,
    pub external: SentenceGraph,
    pub result: FgwResult,
    gin: Vec<GinCache>,
    adaptor: MlpCache,
}

impl ForwardPass {
    /// Every ReLU pre-activation of the encoders, in a fixed order.
    pub fn relu_inputs(&self) -> Vec<f64> {
        self.gin
            .iter()
            .flat_map(|c| c.relu_inputs())
            .chain(self.adaptor.pre.iter().copied())
            .collect()
    }
}

pub fn forward(params: &ModelParams, trace: &PreparedTrace, config: &TrainConfig) -> Result<ForwardPass> {
    let t = trace.len();
    let d = params.gin.out_dim();
    let mut x_int = Array2::zeros((t, d));
    let mut gin = Vec::with_capacity(t);
    for (s, input) in trace.circuits.iter().enumerate() {
        let (emb, cache) = params.gin.forward(input);
        x_int.row_mut(s).assign(&emb);
        gin.push(cache);
    }
    let (x_ext, adaptor) = params.adaptor.forward(&trace.external)?;
    let (internal, external) = shared_build(&x_int, &x_ext, config.lambda_edge)?;
    let result = solve_fgw(&external, &internal, config.alpha, &config.fgw)?;
    Ok(ForwardPass {
        internal,
        external,
        result,
        gin,
        adaptor,
    })
}

pub fn score_prepared(params: &ModelParams, trace: &PreparedTrace, config: &TrainConfig) -> Result<FgwResult> {
    Ok(forward(params, trace, config)?.result)
}

/// `s(C) = FGW(G_ext, G_int)` for one trace.
pub fn score_trace(trace: &TraceRecord, detector: &Detector) -> Result<FgwResult> {
    let prepared = prepare_trace(trace, &detector.config.selection)?;
    score_prepared(&detector.params, &prepared, &detector.config)
}

pub fn score_many(detector: &Detector, traces: &[TraceRecord], workers: usize) -> Result<Vec<FgwResult>> {
    with_pool(workers, || {
        traces
            .par_iter()
            .map(|t| score_trace(t, detector))
            .collect()
    })
}

fn score_prepared_many(
    params: &ModelParams,
    traces: &[PreparedTrace],
    config: &TrainConfig,
    workers: usize,
) -> Result<Vec<f64>> {
    with_pool(workers, || {
        traces
            .par_iter()
            .map(|t| score_prepared(params, t, config).map(|r| r.value))
            .collect()
    })
}

/// `(1 - y) s + y max(0, m - s)`.
pub fn margin_loss(score: f64, label: u8, margin: f64) -> f64 {
    if label == 1 {
        (margin - score).max(0.0)
    } else {
        score
    }
}

/// Derivative of `margin_loss` in the score. The hinge kink counts as
/// inactive.
pub fn margin_loss_grad(score: f64, label: u8, margin: f64) -> f64 {
    match label {
        1 if score < margin => -1.0,
        1 => 0.0,
        _ => 1.0,
    }
}

fn label_of(trace: &PreparedTrace) -> Result<u8> {
    trace
        .label
        .ok_or_else(|| Error::validation(&trace.id, "label", "training needs labeled traces"))
}

/// Loss of one trace, with its parameter gradient accumulated into `grad`.
/// The coupling is frozen at the solver's output and adjacency is treated
/// as constant.
pub fn trace_loss_grad(
    params: &ModelParams,
    trace: &PreparedTrace,
    config: &TrainConfig,
    grad: &mut ModelParams,
) -> Result<f64> {
    let label = label_of(trace)?;
    let pass = forward(params, trace, config)?;
    let score = pass.result.value;
    let loss = margin_loss(score, label, config.margin);
    let dl_ds = margin_loss_grad(score, label, config.margin);
    if dl_ds == 0.0 {
        return Ok(loss);
    }
    let (d_ext, d_int) = fgw_grad_features(&pass.external, &pass.internal, &pass.result.coupling, config.alpha);
    params.adaptor.backward(&pass.adaptor, &(d_ext * dl_ds), &mut grad.adaptor);
    for (s, input) in trace.circuits.iter().enumerate() {
        let d_row = d_int.row(s).to_owned() * dl_ds;
        params.gin.backward(input, &pass.gin[s], &d_row, &mut grad.gin);
    }
    Ok(loss)
}

/// Mean margin loss over a batch, re-solving FGW for every trace.
pub fn batch_loss(params: &ModelParams, batch: &[PreparedTrace], config: &TrainConfig) -> Result<f64> {
    let mut total = 0.0;
    for t in batch {
        let s = score_prepared(params, t, config)?.value;
        total += margin_loss(s, label_of(t)?, config.margin);
    }
    Ok(total / batch.len().max(1) as f64)
}

/// Mean loss and mean gradient over a batch. Per-trace gradients are
/// computed in parallel and summed in batch order.
pub fn batch_loss_grad(
    params: &ModelParams,
    batch: &[&PreparedTrace],
    config: &TrainConfig,
) -> Result<(f64, ModelParams)> {
    let parts: Vec<Result<(f64, ModelParams)>> = batch
        .par_iter()
        .map(|t| {
            let mut g = params.zeros_like();
            let loss = trace_loss_grad(params, t, config, &mut g)?;
            Ok((loss, g))
        })
        .collect();
    let mut grad = params.zeros_like();
    let mut loss = 0.0;
    for part in parts {
        let (l, g) = part?;
        loss += l;
        grad.add_scaled(&g, 1.0);
    }
    let n = batch.len().max(1) as f64;
    grad.scale(1.0 / n);
    Ok((loss / n, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub f1: f64,
}

/// Pick the midpoint between consecutive distinct scores that maximizes F1
/// for `score > threshold`, preferring the smaller threshold on ties. With
/// a single distinct score the threshold sits one unit below it.
pub fn calibrate(scores: &[f64], labels: &[u8]) -> Result<Calibration> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("non-finite score".into()));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::InvalidArgument("threshold calibration needs both classes".into()));
    }
    let f1_at = |thr: f64| {
        let pred: Vec<u8> = scores.iter().map(|&s| u8::from(s > thr)).collect();
        Confusion::from_predictions(&pred, labels).f1()
    };
    let mut unique = scores.to_vec();
    unique.sort_by(f64::total_cmp);
    unique.dedup();
    if unique.len() == 1 {
        let threshold = unique[0] - 1.0;
        return Ok(Calibration {
            threshold,
            f1: f1_at(threshold),
        });
    }
    let mut best: Option<Calibration> = None;
    for w in unique.windows(2) {
        let threshold = 0.5 * (w[0] + w[1]);
        let f1 = f1_at(threshold);
        if best.is_none_or(|b| f1 > b.f1) {
            best = Some(Calibration { threshold, f1 });
        }
    }
    Ok(best.expect("at least one midpoint"))
}

pub fn calibrate_threshold(scores: &[f64], labels: &[u8]) -> Result<f64> {
    calibrate(scores, labels).map(|c| c.threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Mean loss of every update, in order.
    pub step_losses: Vec<f64>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss,val_f1\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{}\n", e.epoch, e.mean_loss, e.val_f1));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub detector: Detector,
    pub log: TrainLog,
    pub usage: TracedUsage,
}

fn labels_of(traces: &[PreparedTrace]) -> Result<Vec<u8>> {
    traces.iter().map(label_of).collect()
}

/// Hold out `val_fraction` of each class (at least one trace per class),
/// then train on the rest.
pub fn train(traces: &[TraceRecord], config: &TrainConfig, workers: usize) -> Result<TrainOutcome> {
    config.validate()?;
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, t) in traces.iter().enumerate() {
        let y = t
            .label
            .ok_or_else(|| Error::validation(&t.id, "label", "training needs labeled traces"))?;
        by_class[usize::from(y == 1)].push(i);
    }
    if by_class.iter().any(|c| c.len() < 2) {
        return Err(Error::InvalidArgument(
            "training needs at least two traces of each class".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut val_idx = BTreeSet::new();
    for class in &mut by_class {
        class.shuffle(&mut rng);
        let n_val = ((class.len() as f64 * config.val_fraction).floor() as usize).clamp(1, class.len() - 1);
        val_idx.extend(class[..n_val].iter().copied());
    }
    let (mut train_set, mut val_set) = (Vec::new(), Vec::new());
    for (i, t) in traces.iter().enumerate() {
        if val_idx.contains(&i) {
            val_set.push(t.clone());
        } else {
            train_set.push(t.clone());
        }
    }
    fit(&train_set, &val_set, config, workers)
}

/// Train on `train` and calibrate the threshold on `val`.
pub fn fit(
    train: &[TraceRecord],
    val: &[TraceRecord],
    config: &TrainConfig,
    workers: usize,
) -> Result<TrainOutcome> {
    config.validate()?;
    let train = prepare_many(train, &config.selection, workers)?;
    let val = prepare_many(val, &config.selection, workers)?;
    let train_labels = labels_of(&train)?;
    let val_labels = labels_of(&val)?;
    if train_labels.iter().all(|&y| y == train_labels[0]) {
        return Err(Error::InvalidArgument("single-class training set".into()));
    }
    let d_model = train[0].external.ncols();
    if let Some(t) = train.iter().chain(&val).find(|t| t.external.ncols() != d_model) {
        return Err(Error::validation(
            &t.id,
            "hidden_states",
            format!("width {} differs from {d_model}", t.external.ncols()),
        ));
    }

    let mut usage = TracedUsage::default();
    for t in train.iter().chain(&val) {
        usage += t.usage;
    }

    let mut params = ModelParams::init(d_model, config.embed_dim, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainLog::default();

    let pool = thread_pool(workers)?;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&PreparedTrace> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, mut grad) = pool.install(|| batch_loss_grad(&params, &batch, config))?;
            if !loss.is_finite() || grad.to_flat().iter().any(|g| !g.is_finite()) {
                return Err(Error::Other(format!(
                    "non-finite loss or gradient at update {}",
                    log.step_losses.len()
                )));
            }
            let norm = grad.norm();
            if norm > config.clip_norm {
                grad.scale(config.clip_norm / norm);
            }
            params.add_scaled(&grad, -config.learning_rate);
            log.step_losses.push(loss);
            epoch_loss += loss * chunk.len() as f64;
        }
        let scores = score_prepared_many(&params, &val, config, workers)?;
        let val_f1 = calibrate(&scores, &val_labels)?.f1;
        log.epochs.push(EpochLog {
            epoch,
            mean_loss: epoch_loss / train.len() as f64,
            val_f1,
        });
    }

    let scores = score_prepared_many(&params, &val, config, workers)?;
    let threshold = calibrate_threshold(&scores, &val_labels)?;
    Ok(TrainOutcome {
        detector: Detector {
            params,
            threshold,
            config: config.clone(),
        },
        log,
        usage,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

/// JSON sidecar describing a checkpoint's tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub d_model: usize,
    pub embed_dim: usize,
    pub threshold: f64,
    pub config: TrainConfig,
    pub tensors: BTreeMap<String, TensorEntry>,
}

/// `detector.ckpt` -> `detector.ckpt.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Serialize parameters as concatenated f32 tensor containers.
pub fn encode_checkpoint(detector: &Detector) -> (Vec<u8>, CheckpointManifest) {
    let mut bytes = Vec::new();
    let mut tensors = BTreeMap::new();
    for (name, shape, data) in detector.params.named_tensors() {
        let offset = bytes.len() as u64;
        write_tensor(&mut bytes, &shape, data).expect("writing to memory");
        tensors.insert(
            name,
            TensorEntry {
                dtype: "f32".into(),
                shape,
                offset,
            },
        );
    }
    let manifest = CheckpointManifest {
        d_model: detector.params.adaptor.in_dim(),
        embed_dim: detector.params.gin.out_dim(),
        threshold: detector.threshold,
        config: detector.config.clone(),
        tensors,
    };
    (bytes, manifest)
}

pub fn decode_checkpoint(bytes: &[u8], manifest: &CheckpointManifest) -> Result<Detector> {
    if !manifest.threshold.is_finite() {
        return Err(Error::Tensor("checkpoint threshold is not finite".into()));
    }
    let mut params = ModelParams::init(manifest.d_model, manifest.embed_dim, 0);
    let names: Vec<(String, Vec<usize>)> = params
        .named_tensors()
        .into_iter()
        .map(|(n, s, _)| (n, s))
        .collect();
    if names.len() != manifest.tensors.len() {
        return Err(Error::Tensor(format!(
            "expected {} tensors, manifest lists {}",
            names.len(),
            manifest.tensors.len()
        )));
    }
    for ((name, shape), slot) in names.iter().zip(params.tensors_mut()) {
        let entry = manifest
            .tensors
            .get(name)
            .ok_or_else(|| Error::Tensor(format!("missing tensor {name}")))?;
        if &entry.shape != shape || entry.dtype != "f32" {
            return Err(Error::Tensor(format!(
                "tensor {name}: expected f32 {shape:?}, manifest has {} {:?}",
                entry.dtype, entry.shape
            )));
        }
        let start = usize::try_from(entry.offset)
            .ok()
            .filter(|&o| o <= bytes.len())
            .ok_or_else(|| Error::Tensor(format!("tensor {name}: offset past end of file")))?;
        let tensor = read_tensor(&mut Cursor::new(&bytes[start..]))?;
        if &tensor.shape != shape {
            return Err(Error::Tensor(format!(
                "tensor {name}: stored shape {:?} differs from manifest",
                tensor.shape
            )));
        }
        slot.copy_from_slice(&tensor.data);
    }
    Ok(Detector {
        params,
        threshold: manifest.threshold,
        config: manifest.config.clone(),
    })
}

pub fn save_detector(detector: &Detector, path: &Path) -> Result<()> {
    let (bytes, manifest) = encode_checkpoint(detector);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Other(e.to_string()))?;
    std::fs::write(&mpath, json).map_err(|e| Error::io(mpath, e))
}

pub fn load_detector(path: &Path) -> Result<Detector> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: mpath.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    decode_checkpoint(&bytes, &manifest)
}
