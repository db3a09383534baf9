//! Labeled synthetic traces with a known internal/external relationship.
//!
//! Each trace follows a latent trajectory `z_1..z_T` with autoregressive
//! drift. Hidden states are a fixed linear map of the external latents plus
//! token-specific noise; circuits carry the true latents in the activations
//! of features placed at a few planted informative tokens. Faithful traces
//! use the same latents on both sides. Post-hoc traces resample the
//! external latents of some sentences; spurious traces swap them between
//! non-adjacent sentences.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::circuit_graph::{AttributionGraph, CircuitEdge, CircuitNode, NodeKind};
use crate::error::{Error, Result};
use crate::token_select::entropy_of;
use crate::trace_store::{CounterfactualRecord, SentenceRecord, TokenSignal, TraceRecord, UnfaithType};

const AR_COEF: f64 = 0.7;
const TOKEN_COMPONENT_STD: f64 = 2.5;
const SENT_EMBED_DIM: usize = 4;
const DOWN_VOCAB: usize = 8;
const MIN_RESAMPLE_DIST: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_traces: usize,
    /// Inclusive range of sentences per trace.
    pub t_range: (usize, usize),
    pub d_model: usize,
    pub d_latent: usize,
    pub noise_std: f64,
    pub post_hoc_fraction: f64,
    pub spurious_fraction: f64,
    /// Share of sentences perturbed in an unfaithful trace.
    pub corrupt_fraction: f64,
    pub seed: u64,
    /// Inclusive range of tokens per sentence.
    pub tokens_range: (usize, usize),
    /// Informative tokens planted per sentence.
    pub planted: usize,
    /// Vocabulary size of the recorded next-token distributions.
    pub vocab: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_traces: 600,
            t_range: (4, 8),
            d_model: 16,
            d_latent: 2,
            noise_std: 0.05,
            post_hoc_fraction: 0.3,
            spurious_fraction: 0.3,
            corrupt_fraction: 0.5,
            seed: 0,
            tokens_range: (8, 12),
            planted: 3,
            vocab: 16,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_traces == 0 {
            return bad("n_traces must be positive".into());
        }
        let (t0, t1) = self.t_range;
        if t0 == 0 || t0 > t1 {
            return bad(format!("t_range must satisfy 1 <= min <= max, got ({t0}, {t1})"));
        }
        if self.d_latent == 0 || self.d_model < self.d_latent {
            return bad(format!(
                "need 1 <= d_latent <= d_model, got d_latent {} and d_model {}",
                self.d_latent, self.d_model
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        for (name, f) in [
            ("post_hoc_fraction", self.post_hoc_fraction),
            ("spurious_fraction", self.spurious_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("{name} must lie in [0,1], got {f}"));
            }
        }
        if self.post_hoc_fraction + self.spurious_fraction > 1.0 + 1e-9 {
            return bad("unfaithful fractions sum to more than 1".into());
        }
        if !(self.corrupt_fraction > 0.0 && self.corrupt_fraction <= 1.0) {
            return bad(format!("corrupt_fraction must lie in (0,1], got {}", self.corrupt_fraction));
        }
        if self.spurious_fraction > 0.0 && t0 < 3 {
            return bad("spurious traces need at least 3 sentences".into());
        }
        if self.planted == 0 {
            return bad("planted must be positive".into());
        }
        let (l0, l1) = self.tokens_range;
        if l0 <= self.planted || l0 > l1 {
            return bad(format!(
                "tokens_range ({l0}, {l1}) must start above planted ({})",
                self.planted
            ));
        }
        if self.vocab < 2 {
            return bad("vocab must be at least 2".into());
        }
        Ok(())
    }
}

/// What the generator planted in one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub id: String,
    /// Planted informative positions per sentence, ascending.
    pub planted: Vec<Vec<usize>>,
    /// Latents driving the circuits.
    pub latents: Vec<Vec<f64>>,
    /// Latents driving the hidden states.
    pub external_latents: Vec<Vec<f64>>,
    /// Sentences whose external latents differ from the internal ones.
    pub corrupted: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unfaith_type: Option<UnfaithType>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub traces: Vec<TraceRecord>,
    pub truth: Vec<GroundTruth>,
    /// `d_model x d_latent` map from latents to hidden states.
    pub projection: Vec<Vec<f64>>,
}

/// Dataset-level random structure shared by every trace.
struct World {
    projection: Vec<Vec<f64>>,
    /// One direction and bias per dictionary feature.
    feat_dir: Vec<Vec<f64>>,
    feat_bias: Vec<f64>,
    infl_in: Vec<f64>,
    infl_ff: Vec<Vec<f64>>,
    infl_out: Vec<f64>,
}

impl World {
    fn n_features(&self) -> usize {
        self.feat_dir.len()
    }
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn normal_vec<R: Rng>(rng: &mut R, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| std * normal(rng)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

fn build_world<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> World {
    let n_feat = 2 * cfg.planted;
    let scale = 1.0 / (cfg.d_latent as f64).sqrt();
    World {
        projection: (0..cfg.d_model).map(|_| normal_vec(rng, cfg.d_latent, scale)).collect(),
        feat_dir: (0..n_feat).map(|_| normal_vec(rng, cfg.d_latent, 3.0 * scale)).collect(),
        feat_bias: (0..n_feat).map(|_| rng.random_range(-0.5..0.5)).collect(),
        infl_in: (0..n_feat).map(|_| rng.random_range(0.5..1.5)).collect(),
        infl_ff: (0..n_feat).map(|_| normal_vec(rng, n_feat, 0.5)).collect(),
        infl_out: (0..n_feat).map(|_| rng.random_range(0.5..1.5)).collect(),
    }
}

/// A distribution over `logits.len()` outcomes whose entropy is `target`,
/// found by bisection on an inverse temperature.
fn dist_with_entropy(logits: &[f64], target: f64) -> Vec<f64> {
    let entropy = |beta: f64| {
        let p = softmax(&logits.iter().map(|l| beta * l).collect::<Vec<_>>());
        -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while entropy(hi) > target && hi < 1e4 {
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if entropy(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    softmax(&logits.iter().map(|l| 0.5 * (lo + hi) * l).collect::<Vec<_>>())
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pj, _)| **pj > 0.0)
        .map(|(pj, qj)| pj * (pj / qj).ln())
        .sum()
}

/// Counterfactual inputs whose sentence change and KL shift both equal
/// `target` (which must lie in (0, 1]).
fn counterfactual<R: Rng>(rng: &mut R, target: f64) -> CounterfactualRecord {
    let unit = |v: Vec<f64>| {
        let n = dot(&v, &v).sqrt();
        v.into_iter().map(|x| x / n).collect::<Vec<_>>()
    };
    let e = unit(normal_vec(rng, SENT_EMBED_DIM, 1.0));
    let raw = normal_vec(rng, SENT_EMBED_DIM, 1.0);
    let proj = dot(&raw, &e);
    let perp = unit(raw.iter().zip(&e).map(|(r, x)| r - proj * x).collect());
    let c = 1.0 - target;
    let s = (1.0 - c * c).max(0.0).sqrt();
    let cf: Vec<f64> = e.iter().zip(&perp).map(|(a, b)| c * a + s * b).collect();

    let base = normal_vec(rng, DOWN_VOCAB, 1.0);
    let shift = normal_vec(rng, DOWN_VOCAB, 1.0);
    let p = softmax(&base);
    let shifted = |t: f64| softmax(&base.iter().zip(&shift).map(|(b, v)| b + t * v).collect::<Vec<_>>());
    let (mut lo, mut hi) = (0.0, 1.0);
    while kl(&p, &shifted(hi)) < target && hi < 1e4 {
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if kl(&p, &shifted(mid)) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    CounterfactualRecord {
        orig_sent_embed: e,
        cf_sent_embed: cf,
        orig_down_dist: p,
        cf_down_dist: shifted(0.5 * (lo + hi)),
    }
}

fn latent_path<R: Rng>(rng: &mut R, t: usize, d: usize) -> Vec<Vec<f64>> {
    let innovation = (1.0 - AR_COEF * AR_COEF).sqrt();
    let mut z = vec![normal_vec(rng, d, 1.0)];
    for _ in 1..t {
        let prev = z.last().expect("nonempty");
        let next = prev.iter().map(|p| AR_COEF * p + innovation * normal(rng)).collect();
        z.push(next);
    }
    z
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Disjoint non-adjacent sentence pairs to swap, most dissimilar latents
/// first so that the swap actually moves content.
fn spurious_swaps<R: Rng>(rng: &mut R, latents: &[Vec<f64>], n_swaps: usize) -> Vec<(usize, usize)> {
    let t = latents.len();
    let mut pairs: Vec<(usize, usize)> = (0..t)
        .flat_map(|i| (i + 2..t).map(move |j| (i, j)))
        .collect();
    pairs.shuffle(rng);
    pairs.sort_by(|&(a, b), &(c, d)| {
        distance(&latents[c], &latents[d]).total_cmp(&distance(&latents[a], &latents[b]))
    });
    let mut used = vec![false; t];
    let mut out = Vec::new();
    for (i, j) in pairs {
        if out.len() == n_swaps {
            break;
        }
        if !used[i] && !used[j] {
            used[i] = true;
            used[j] = true;
            out.push((i, j));
        }
    }
    out
}

/// A fresh latent at least `MIN_RESAMPLE_DIST` away from `z`, so a
/// resampled sentence cannot coincide with the original by chance.
fn resample_away<R: Rng>(rng: &mut R, z: &[f64]) -> Vec<f64> {
    let mut fresh = normal_vec(rng, z.len(), 1.0);
    for _ in 0..100 {
        if distance(&fresh, z) >= MIN_RESAMPLE_DIST {
            break;
        }
        fresh = normal_vec(rng, z.len(), 1.0);
    }
    fresh
}

struct CircuitBuilder {
    nodes: Vec<CircuitNode>,
    edges: Vec<CircuitEdge>,
}

impl CircuitBuilder {
    fn node(&mut self, kind: NodeKind, layer: i64, position: usize, feature: Option<i64>, act: f64) -> u64 {
        let id = self.nodes.len() as u64;
        self.nodes.push(CircuitNode {
            id,
            kind,
            layer,
            position: position as i64,
            feature_index: feature,
            activation: act,
        });
        id
    }

    fn edge(&mut self, src: u64, dst: u64, weight: f64) {
        self.edges.push(CircuitEdge { src, dst, weight });
    }
}

/// Full circuit of one sentence: an input and an output node at every
/// position, dictionary features at planted positions whose activations
/// encode `z`, and latent-independent filler features elsewhere.
fn build_circuit<R: Rng>(rng: &mut R, world: &World, z: &[f64], len: usize, planted: &[usize]) -> AttributionGraph {
    let n_feat = world.n_features();
    let out_layer = n_feat as i64;
    let mut b = CircuitBuilder {
        nodes: Vec::new(),
        edges: Vec::new(),
    };
    let inputs: Vec<u64> = (0..len).map(|p| b.node(NodeKind::Input, -1, p, None, 1.0)).collect();
    let outputs: Vec<u64> = (0..len).map(|p| b.node(NodeKind::Output, out_layer, p, None, 1.0)).collect();

    // (id, dictionary index, position, activation)
    let mut planted_feats: Vec<(u64, usize, usize, f64)> = Vec::new();
    for (slot, &pos) in planted.iter().enumerate() {
        for k in (slot..n_feat).step_by(planted.len()) {
            let act = softplus(dot(&world.feat_dir[k], z) + world.feat_bias[k]);
            let id = b.node(NodeKind::Feature, k as i64, pos, Some(k as i64), act);
            b.edge(inputs[pos], id, world.infl_in[k]);
            planted_feats.push((id, k, pos, act));
        }
    }
    for &(src, ka, pa, act) in &planted_feats {
        for &(dst, kb, pb, _) in &planted_feats {
            if kb > ka && pb >= pa {
                b.edge(src, dst, act * world.infl_ff[ka][kb]);
            }
        }
        for &out in &outputs[pa..len] {
            b.edge(src, out, act * world.infl_out[ka]);
        }
    }

    for pos in (0..len).filter(|p| !planted.contains(p)) {
        let count = rng.random_range(1..=2usize);
        for layer in index::sample(rng, n_feat, count.min(n_feat)) {
            let feature = (n_feat + rng.random_range(0..32usize)) as i64;
            let act = rng.random_range(0.1..1.5);
            let id = b.node(NodeKind::Feature, layer as i64, pos, Some(feature), act);
            b.edge(inputs[pos], id, rng.random_range(0.5..1.5));
            for &out in &outputs[pos..len] {
                b.edge(id, out, act * rng.random_range(0.2..1.0));
            }
        }
    }

    AttributionGraph {
        nodes: b.nodes,
        edges: b.edges,
        anchor_position: None,
    }
}

fn build_sentence<R: Rng>(
    rng: &mut R,
    cfg: &SynthConfig,
    world: &World,
    z_int: &[f64],
    z_ext: &[f64],
    index: usize,
) -> Result<(SentenceRecord, Vec<usize>)> {
    let len = rng.random_range(cfg.tokens_range.0..=cfg.tokens_range.1);
    let mut planted = index::sample(rng, len, cfg.planted).into_vec();
    planted.sort_unstable();
    let max_entropy = (cfg.vocab as f64).ln();

    let mut tokens = Vec::with_capacity(len);
    for p in 0..len {
        let is_planted = planted.contains(&p);
        let (h_frac, necessity) = if is_planted {
            (rng.random_range(0.88..0.98), rng.random_range(0.6..1.0))
        } else {
            (rng.random_range(0.1..0.8), rng.random_range(0.02..0.25))
        };
        let logits = normal_vec(rng, cfg.vocab, 1.0);
        let dist = dist_with_entropy(&logits, h_frac * max_entropy);
        tokens.push(TokenSignal {
            token_text: format!("w{index}_{p}"),
            entropy: entropy_of(&dist)?,
            dist: Some(dist),
            necessity_inputs: Some(counterfactual(rng, necessity)),
        });
    }

    let base: Vec<f64> = world.projection.iter().map(|row| dot(row, z_ext)).collect();
    let mut comps: Vec<Vec<f64>> = (0..len).map(|_| normal_vec(rng, cfg.d_model, TOKEN_COMPONENT_STD)).collect();
    for c in 0..cfg.d_model {
        let mean = comps.iter().map(|r| r[c]).sum::<f64>() / len as f64;
        comps.iter_mut().for_each(|r| r[c] -= mean);
    }
    let hidden_states = comps
        .into_iter()
        .map(|comp| {
            comp.iter()
                .zip(&base)
                .map(|(c, m)| m + c + cfg.noise_std * normal(rng))
                .collect()
        })
        .collect();

    let circuit = build_circuit(rng, world, z_int, len, &planted);
    Ok((
        SentenceRecord {
            text: format!("step {index}"),
            tokens,
            hidden_states,
            circuit: Some(circuit),
        },
        planted,
    ))
}

/// Generate a labeled dataset and its ground truth.
pub fn generate(cfg: &SynthConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let world = build_world(cfg, &mut rng);

    let n = cfg.n_traces;
    let n_post = ((n as f64) * cfg.post_hoc_fraction).round() as usize;
    let n_spur = (((n as f64) * cfg.spurious_fraction).round() as usize).min(n - n_post.min(n));
    let mut kinds: Vec<Option<UnfaithType>> = std::iter::repeat_n(Some(UnfaithType::PostHoc), n_post.min(n))
        .chain(std::iter::repeat_n(Some(UnfaithType::Spurious), n_spur))
        .collect();
    kinds.resize(n, None);
    kinds.shuffle(&mut rng);

    let mut traces = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for (i, kind) in kinds.into_iter().enumerate() {
        let id = format!("synth-{i:05}");
        let t = rng.random_range(cfg.t_range.0..=cfg.t_range.1);
        let latents = latent_path(&mut rng, t, cfg.d_latent);
        let mut external = latents.clone();
        let n_corrupt = ((cfg.corrupt_fraction * t as f64).round() as usize).clamp(1, t);
        let mut corrupted = Vec::new();
        match kind {
            Some(UnfaithType::PostHoc) => {
                corrupted = index::sample(&mut rng, t, n_corrupt).into_vec();
                corrupted.sort_unstable();
                for &s in &corrupted {
                    external[s] = resample_away(&mut rng, &latents[s]);
                }
            }
            Some(UnfaithType::Spurious) => {
                for (a, b) in spurious_swaps(&mut rng, &latents, n_corrupt.div_ceil(2)) {
                    external.swap(a, b);
                    corrupted.extend([a, b]);
                }
                corrupted.sort_unstable();
            }
            None => {}
        }

        let mut sentences = Vec::with_capacity(t);
        let mut planted = Vec::with_capacity(t);
        for s in 0..t {
            let (sentence, p) = build_sentence(&mut rng, cfg, &world, &latents[s], &external[s], s)?;
            sentences.push(sentence);
            planted.push(p);
        }
        traces.push(TraceRecord {
            id: id.clone(),
            question: format!("synthetic question {i}"),
            sentences,
            label: Some(u8::from(kind.is_some())),
            unfaith_type: kind,
        });
        truth.push(GroundTruth {
            id,
            planted,
            latents,
            external_latents: external,
            corrupted,
            unfaith_type: kind,
        });
    }
    Ok(SyntheticDataset {
        traces,
        truth,
        projection: world.projection,
    })
}

/// The planted informative positions of a generated trace.
pub fn selection_ground_truth(truth: &[GroundTruth], trace: &TraceRecord) -> Result<Vec<Vec<usize>>> {
    let found = truth
        .iter()
        .find(|g| g.id == trace.id)
        .ok_or_else(|| Error::InvalidArgument(format!("trace {} is not a synthetic trace", trace.id)))?;
    if found.planted.len() != trace.sentences.len() {
        return Err(Error::InvalidArgument(format!(
            "trace {} does not match its ground truth",
            trace.id
        )));
    }
    Ok(found.planted.clone())
}

/// Least-squares latents for a pooled hidden-state vector: the exact
/// inverse of the projection on noiseless data.
pub fn oracle_latents(projection: &[Vec<f64>], pooled: &[f64]) -> Result<Vec<f64>> {
    if projection.len() != pooled.len() {
        return Err(Error::DimensionMismatch {
            expected: projection.len(),
            got: pooled.len(),
        });
    }
    let d = projection.first().map_or(0, Vec::len);
    // Normal equations, solved by Gaussian elimination with partial pivoting.
    let mut a = vec![vec![0.0; d + 1]; d];
    for (row, &y) in projection.iter().zip(pooled) {
        for i in 0..d {
            for j in 0..d {
                a[i][j] += row[i] * row[j];
            }
            a[i][d] += row[i] * y;
        }
    }
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .expect("nonempty range");
        if a[pivot][col].abs() < 1e-12 {
            return Err(Error::InvalidArgument("projection is rank deficient".into()));
        }
        a.swap(col, pivot);
        for r in 0..d {
            if r != col {
                let f = a[r][col] / a[col][col];
                let pivot_row = a[col].clone();
                for (x, p) in a[r][col..=d].iter_mut().zip(&pivot_row[col..=d]) {
                    *x -= f * p;
                }
            }
        }
    }
    Ok((0..d).map(|i| a[i][d] / a[i][i]).collect())
}
