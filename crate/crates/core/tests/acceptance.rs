//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! reports a PASS or FAIL line, and exits non-zero when any of them fails.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use cie_core::circuit_graph::{restrict_circuit, AttributionGraph};
use cie_core::encoders::{encode_circuit, CircuitInput, GinParams, ModelParams};
use cie_core::evaluation::{
    answer_tracing, evaluate, information_gain, relative_transfer_ratio, roc_auc, type_correlations,
    Confusion, EvalReport, PerTrace,
};
use cie_core::fgw::{fgw_objective, solve_fgw, Coupling, FgwConfig, FgwResult};
use cie_core::sentence_graph::{build_graph, SentenceGraph};
use cie_core::synthetic::{generate, selection_ground_truth, SynthConfig};
use cie_core::token_select::{entropy_candidates, entropy_of, importance, select_tokens, SelectionConfig};
use cie_core::trace_store::{split_dataset, UnfaithType};
use cie_core::training::{
    calibrate_threshold, fit, forward, margin_loss, prepare_trace, trace_loss_grad, TrainConfig,
};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

fn random_graph(rng: &mut ChaCha8Rng, t: usize, d: usize) -> SentenceGraph {
    let lambda_edge = rng.random_range(0.0..1.0);
    build_graph(&normal_matrix(rng, t, d), lambda_edge).expect("valid features")
}

/// Every solver run recorded for the descent and feasibility checks.
#[derive(Default)]
struct SolverLog {
    results: Vec<(f64, FgwResult)>,
}

fn identity_check(log: &mut SolverLog) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let t = rng.random_range(2..=8);
        let d = rng.random_range(2..=16);
        let alpha = rng.random_range(0.0..=1.0);
        let g = random_graph(&mut rng, t, d);
        let r = solve_fgw(&g, &g, alpha, &FgwConfig::default()).map_err(|e| e.to_string())?;
        worst = worst.max(r.value.abs());
        log.results.push((alpha, r));
    }
    let elapsed = start.elapsed();
    ensure(worst <= 1e-9, || format!("largest self-distance {worst:e}"))?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("max |value| {worst:e} over 50 graphs in {elapsed:.2?}"))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for slot in 0..=p.len() {
            let mut q = p.clone();
            q.insert(slot, n - 1);
            out.push(q);
        }
    }
    out
}

fn oracle_check(log: &mut SolverLog) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_grid = f64::NEG_INFINITY;
    for _ in 0..50 {
        let d = rng.random_range(1..=6);
        let alpha = rng.random_range(0.0..=1.0);
        let (g1, g2) = (random_graph(&mut rng, 2, d), random_graph(&mut rng, 2, d));
        let r = solve_fgw(&g1, &g2, alpha, &FgwConfig::default()).map_err(|e| e.to_string())?;
        // Every 2x2 coupling with uniform marginals is [[t, 1/2 - t], [1/2 - t, t]].
        let steps = 20_000;
        let grid_min = (0..=steps)
            .map(|i| {
                let t = 0.5 * i as f64 / steps as f64;
                let pi = Coupling {
                    matrix: ndarray::array![[t, 0.5 - t], [0.5 - t, t]],
                };
                fgw_objective(&g1, &g2, &pi, alpha).expect("admissible").value
            })
            .fold(f64::INFINITY, f64::min);
        ensure(r.value <= grid_min + 1e-6, || {
            format!("T=2 solver {} above grid minimum {grid_min}", r.value)
        })?;
        worst_grid = worst_grid.max(r.value - grid_min);
        log.results.push((alpha, r));
    }

    let perms = permutations(3);
    let mut worst_perm = f64::NEG_INFINITY;
    for _ in 0..50 {
        let d = rng.random_range(1..=6);
        let alpha = rng.random_range(0.0..=1.0);
        let (g1, g2) = (random_graph(&mut rng, 3, d), random_graph(&mut rng, 3, d));
        let r = solve_fgw(&g1, &g2, alpha, &FgwConfig::default()).map_err(|e| e.to_string())?;
        let perm_min = perms
            .iter()
            .map(|p| {
                fgw_objective(&g1, &g2, &Coupling::from_permutation(p), alpha)
                    .expect("admissible")
                    .value
            })
            .fold(f64::INFINITY, f64::min);
        ensure(r.value <= perm_min + 1e-9, || {
            format!("T=3 solver {} above permutation minimum {perm_min}", r.value)
        })?;
        worst_perm = worst_perm.max(r.value - perm_min);
        log.results.push((alpha, r));
    }
    Ok(format!(
        "max solver - grid {worst_grid:.2e}, max solver - permutation {worst_perm:.2e}"
    ))
}

fn descent_check(log: &SolverLog) -> Outcome {
    let (mut runs, mut steps) = (0, 0);
    let mut worst_marginal: f64 = 0.0;
    let mut worst_identity: f64 = 0.0;
    for (alpha, r) in &log.results {
        for run in &r.runs {
            runs += 1;
            for w in run.objective.windows(2) {
                steps += 1;
                ensure(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0), || {
                    format!("objective rose from {} to {}", w[0], w[1])
                })?;
            }
            worst_marginal = worst_marginal.max(run.max_marginal_error);
        }
        let recomposed = alpha * r.structure_term + (1.0 - alpha) * r.feature_term;
        worst_identity = worst_identity.max((r.value - recomposed).abs());
    }
    ensure(worst_marginal <= 1e-9, || format!("marginal error {worst_marginal:e}"))?;
    ensure(worst_identity <= 1e-9, || format!("decomposition gap {worst_identity:e}"))?;
    Ok(format!(
        "{runs} runs, {steps} steps, max marginal error {worst_marginal:.1e}, max decomposition gap {worst_identity:.1e}"
    ))
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-7 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

fn signs(values: impl IntoIterator<Item = f64>) -> Vec<bool> {
    values.into_iter().map(|v| v > 0.0).collect()
}

struct EncoderProbe {
    circuits: Vec<CircuitInput>,
    external: Array2<f64>,
    gin_weights: Vec<Array1<f64>>,
    adaptor_weights: Array2<f64>,
}

impl EncoderProbe {
    /// A fixed random linear functional of every encoder output, plus the
    /// ReLU sign pattern of the pass.
    fn loss(&self, params: &ModelParams) -> (f64, Vec<bool>) {
        let mut total = 0.0;
        let mut pattern = Vec::new();
        for (c, w) in self.circuits.iter().zip(&self.gin_weights) {
            let (out, cache) = params.gin.forward(c);
            total += out.dot(w);
            pattern.extend(signs(cache.relu_inputs()));
        }
        let (out, cache) = params.adaptor.forward(&self.external).expect("matching width");
        total += (&out * &self.adaptor_weights).sum();
        pattern.extend(signs(cache.pre.iter().copied()));
        (total, pattern)
    }

    fn grad(&self, params: &ModelParams) -> Vec<f64> {
        let mut g = params.zeros_like();
        for (c, w) in self.circuits.iter().zip(&self.gin_weights) {
            let (_, cache) = params.gin.forward(c);
            params.gin.backward(c, &cache, w, &mut g.gin);
        }
        let (_, cache) = params.adaptor.forward(&self.external).expect("matching width");
        params.adaptor.backward(&cache, &self.adaptor_weights, &mut g.adaptor);
        g.to_flat()
    }
}

/// Central differences on randomly chosen coordinates. Probes whose
/// perturbation flips a ReLU are skipped because the loss is not smooth
/// there.
fn probe_gradient(
    params: &ModelParams,
    analytic: &[f64],
    wanted: usize,
    rng: &mut ChaCha8Rng,
    loss: impl Fn(&ModelParams) -> (f64, Vec<bool>),
) -> std::result::Result<(usize, usize, f64), String> {
    let h = 1e-6;
    let base = params.to_flat();
    let (_, pattern) = loss(params);
    let mut order: Vec<usize> = (0..base.len()).collect();
    order.shuffle(rng);
    let (mut probed, mut skipped) = (0, 0);
    let mut worst: f64 = 0.0;
    let mut shifted = params.clone();
    for i in order {
        if probed == wanted {
            break;
        }
        let mut theta = base.clone();
        theta[i] = base[i] + h;
        shifted.set_flat(&theta);
        let (up, p_up) = loss(&shifted);
        theta[i] = base[i] - h;
        shifted.set_flat(&theta);
        let (down, p_down) = loss(&shifted);
        if p_up != pattern || p_down != pattern {
            skipped += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * h);
        let err = relative_error(analytic[i], numeric);
        worst = worst.max(err);
        probed += 1;
    }
    ensure(probed >= wanted.min(base.len()), || format!("only {probed} smooth probes"))?;
    Ok((probed, skipped, worst))
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let data = generate(&SynthConfig {
        n_traces: 6,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let selection = SelectionConfig {
        k: 3,
        ..SelectionConfig::default()
    };

    // Encoders alone.
    let prep = prepare_trace(&data.traces[0], &selection).map_err(|e| e.to_string())?;
    let d = 8;
    let params = ModelParams::init(prep.external.ncols(), d, 5);
    let probe = EncoderProbe {
        gin_weights: (0..prep.circuits.len())
            .map(|_| Array1::from_shape_fn(d, |_| rng.sample(StandardNormal)))
            .collect(),
        adaptor_weights: normal_matrix(&mut rng, prep.external.nrows(), d),
        circuits: prep.circuits.clone(),
        external: prep.external.clone(),
    };
    let analytic = probe.grad(&params);
    let (probed, skipped, worst) = probe_gradient(&params, &analytic, 200, &mut rng, |p| probe.loss(p))?;
    ensure(worst < 1e-4, || format!("encoder relative error {worst:e}"))?;

    // Whole pipeline at a frozen coupling on three-sentence traces.
    let small = generate(&SynthConfig {
        n_traces: 10,
        t_range: (3, 3),
        seed: 9,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let config = TrainConfig {
        lambda_edge: 0.0,
        embed_dim: d,
        margin: 100.0,
        selection: selection.clone(),
        ..TrainConfig::default()
    };
    let mut e2e_worst: f64 = 0.0;
    let mut e2e_probed = 0;
    for trace in small.traces.iter().take(4) {
        let prep = prepare_trace(trace, &selection).map_err(|e| e.to_string())?;
        let label = prep.label.expect("labeled");
        let pass = forward(&params, &prep, &config).map_err(|e| e.to_string())?;
        let coupling = pass.result.coupling.clone();
        let mut g = params.zeros_like();
        trace_loss_grad(&params, &prep, &config, &mut g).map_err(|e| e.to_string())?;
        let loss = |p: &ModelParams| {
            let pass = forward(p, &prep, &config).expect("forward");
            let s = fgw_objective(&pass.external, &pass.internal, &coupling, config.alpha)
                .expect("admissible")
                .value;
            (margin_loss(s, label, config.margin), signs(pass.relu_inputs()))
        };
        let (n, _, w) = probe_gradient(&params, &g.to_flat(), 30, &mut rng, loss)?;
        e2e_probed += n;
        e2e_worst = e2e_worst.max(w);
    }
    ensure(e2e_worst < 1e-3, || format!("end-to-end relative error {e2e_worst:e}"))?;
    Ok(format!(
        "encoders: {probed} probes ({skipped} kinks skipped), max rel err {worst:.1e}; end-to-end: {e2e_probed} probes, max rel err {e2e_worst:.1e}"
    ))
}

fn relabel(g: &AttributionGraph, rng: &mut ChaCha8Rng) -> AttributionGraph {
    let mut ids: Vec<u64> = (0..g.nodes.len() as u64).map(|i| 1000 + 7 * i).collect();
    ids.shuffle(rng);
    let map: std::collections::HashMap<u64, u64> = g.nodes.iter().map(|n| n.id).zip(ids).collect();
    let mut out = g.clone();
    for n in &mut out.nodes {
        n.id = map[&n.id];
    }
    for e in &mut out.edges {
        e.src = map[&e.src];
        e.dst = map[&e.dst];
    }
    out.nodes.shuffle(rng);
    out.edges.shuffle(rng);
    out
}

fn permutation_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let data = generate(&SynthConfig {
        n_traces: 20,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let graphs: Vec<&AttributionGraph> = data
        .traces
        .iter()
        .flat_map(|t| t.sentences.iter().filter_map(|s| s.circuit.as_ref()))
        .take(100)
        .collect();
    ensure(graphs.len() == 100, || format!("only {} circuits", graphs.len()))?;
    let params = GinParams::init(16, &mut rng);
    let mut worst: f64 = 0.0;
    for g in graphs {
        let a = encode_circuit(g, &params).embedding;
        let b = encode_circuit(&relabel(g, &mut rng), &params).embedding;
        worst = worst.max((&a - &b).iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    ensure(worst < 1e-6, || format!("embedding moved by {worst:e}"))?;
    Ok(format!("100 relabeled circuits, max embedding difference {worst:.1e}"))
}

fn selection_check() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    ensure(close(entropy_of(&[0.25; 4]).unwrap(), 4f64.ln()), || "uniform entropy".into())?;
    ensure(entropy_of(&[0.0, 1.0, 0.0]).unwrap() == 0.0, || "one-hot entropy".into())?;
    ensure(close(entropy_of(&[0.5, 0.5, 0.0, 0.0]).unwrap(), 2f64.ln()), || "half entropy".into())?;
    ensure(entropy_candidates(&[0.1, 0.2, 0.3, 0.4], 0.5).unwrap() == vec![1, 2, 3], || {
        "quantile example".into()
    })?;
    ensure(entropy_candidates(&[0.7; 5], 0.3).unwrap() == vec![0, 1, 2, 3, 4], || {
        "all-equal entropies".into()
    })?;
    ensure(entropy_candidates(&[0.2], 0.9).unwrap() == vec![0], || "single token".into())?;
    ensure(importance(1.0, 1.0, 0.5) == 1.5, || "importance example".into())?;
    ensure(importance(0.3, 0.8, 0.0) == 0.3, || "beta zero".into())?;
    ensure(importance(0.0, 0.6, 0.5) == 0.0, || "zero necessity".into())?;

    let synth = SynthConfig::default();
    let data = generate(&synth).map_err(|e| e.to_string())?;
    let config = SelectionConfig {
        k: synth.planted,
        ..SelectionConfig::default()
    };
    let (mut hit, mut total) = (0usize, 0usize);
    for trace in &data.traces {
        let planted = selection_ground_truth(&data.truth, trace).map_err(|e| e.to_string())?;
        for (sentence, truth) in trace.sentences.iter().zip(planted) {
            let picked = select_tokens(sentence, &config).map_err(|e| e.to_string())?.selected;
            hit += truth.iter().filter(|p| picked.contains(p)).count();
            total += truth.len();
        }
    }
    let recall = hit as f64 / total as f64;
    ensure(recall >= 0.95, || format!("recall {recall:.4}"))?;
    Ok(format!("unit examples exact; recall {recall:.4} over {total} planted tokens"))
}

struct Benchmark {
    report: EvalReport,
    elapsed: Duration,
}

fn run_benchmark() -> std::result::Result<Benchmark, String> {
    let start = Instant::now();
    let data = generate(&SynthConfig::default()).map_err(|e| e.to_string())?;
    let split = split_dataset(&data.traces, (0.7, 0.15, 0.15), 0).map_err(|e| e.to_string())?;
    let outcome = fit(&split.train, &split.val, &TrainConfig::synthetic_benchmark(), 1)
        .map_err(|e| e.to_string())?;
    let report = evaluate(&outcome.detector, &split.test, 1).map_err(|e| e.to_string())?;
    Ok(Benchmark {
        report,
        elapsed: start.elapsed(),
    })
}

fn detection_check(bench: &std::result::Result<Benchmark, String>) -> Outcome {
    let b = bench.as_ref().map_err(Clone::clone)?;
    let auc = b.report.roc_auc.ok_or("single-class test split")?;
    let f1 = b.report.f1;
    let detail = format!(
        "held-out AUC {auc:.3}, F1 {f1:.3}, accuracy {:.3} on {} traces in {:.1?}",
        b.report.accuracy,
        b.report.per_trace.len(),
        b.elapsed
    );
    ensure(auc >= 0.90 && f1 >= 0.85 && b.elapsed < Duration::from_secs(300), || detail.clone())?;
    Ok(detail)
}

fn type_direction_check(bench: &std::result::Result<Benchmark, String>) -> Outcome {
    let b = bench.as_ref().map_err(Clone::clone)?;
    let c = type_correlations(&b.report.per_trace).map_err(|e| e.to_string())?;
    let detail = format!(
        "post-hoc r_feat {:.3} vs r_struct {:.3}; spurious r_struct {:.3} vs r_feat {:.3}",
        c.post_hoc.r_feat, c.post_hoc.r_struct, c.spurious.r_struct, c.spurious.r_feat
    );
    ensure(
        c.post_hoc.r_feat > c.post_hoc.r_struct && c.spurious.r_struct > c.spurious.r_feat,
        || detail.clone(),
    )?;
    Ok(detail)
}

fn restriction_check() -> Outcome {
    let synth = SynthConfig::default();
    let data = generate(&synth).map_err(|e| e.to_string())?;
    let config = SelectionConfig {
        k: synth.planted,
        ..SelectionConfig::default()
    };
    let (mut sum, mut count, mut worst_cover) = (0.0, 0usize, 0.0f64);
    for sentence in data.traces.iter().flat_map(|t| &t.sentences) {
        let full = sentence.circuit.as_ref().ok_or("sentence without circuit")?;
        let picked = select_tokens(sentence, &config).map_err(|e| e.to_string())?.selected;
        worst_cover = worst_cover.max(picked.len() as f64 / sentence.tokens.len() as f64);
        let positions: BTreeSet<i64> = picked.iter().map(|&p| p as i64).collect();
        let restricted = restrict_circuit(full, &positions).map_err(|e| e.to_string())?;
        sum += 1.0 - restricted.nodes.len() as f64 / full.nodes.len() as f64;
        count += 1;
    }
    let mean = sum / count as f64;
    ensure(worst_cover <= 0.4, || format!("selection covers {worst_cover:.2} of a sentence"))?;
    ensure(mean >= 0.5, || format!("mean node reduction {mean:.3}"))?;
    Ok(format!(
        "mean node reduction {:.1}% over {count} circuits (K covers at most {:.0}% of positions)",
        100.0 * mean,
        100.0 * worst_cover
    ))
}

fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

fn brute_f1(scores: &[f64], labels: &[u8], thr: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s > thr, y == 1) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            _ => {}
        }
    }
    if tp + fp + fn_ == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fn_)
    }
}

/// Every midpoint between distinct scores, keeping the first strict F1
/// improvement in ascending order.
fn brute_threshold(scores: &[f64], labels: &[u8]) -> f64 {
    let mut u = scores.to_vec();
    u.sort_by(f64::total_cmp);
    u.dedup();
    if u.len() == 1 {
        return u[0] - 1.0;
    }
    let mut best = (f64::NAN, -1.0);
    for i in 0..u.len() - 1 {
        let thr = (u[i] + u[i + 1]) / 2.0;
        let f = brute_f1(scores, labels, thr);
        if f > best.1 {
            best = (thr, f);
        }
    }
    best.0
}

fn metric_fuzz() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let iterations = 1000;
    for it in 0..iterations {
        let n = rng.random_range(2..=12);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        // Coarse scores so ties are common.
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 / 4.0).collect();
        let thr = rng.random_range(-0.5..2.5);

        let per_trace: Vec<PerTrace> = scores
            .iter()
            .zip(&labels)
            .enumerate()
            .map(|(i, (&score, &label))| PerTrace {
                id: format!("t{i}"),
                score,
                feature_term: score,
                structure_term: 0.0,
                prediction: 0,
                label,
                unfaith_type: (label == 1).then_some(UnfaithType::PostHoc),
            })
            .collect();
        let report = EvalReport::from_scored(thr, per_trace);
        let correct = scores
            .iter()
            .zip(&labels)
            .filter(|(&s, &y)| u8::from(s > thr) == y)
            .count();
        let preds: Vec<u8> = scores.iter().map(|&s| u8::from(s > thr)).collect();
        ensure(report.accuracy == correct as f64 / n as f64, || format!("accuracy at iteration {it}"))?;
        ensure(report.f1 == brute_f1(&scores, &labels, thr), || format!("F1 at iteration {it}"))?;
        ensure(report.confusion == Confusion::from_predictions(&preds, &labels), || {
            format!("confusion at iteration {it}")
        })?;
        let auc = report.roc_auc.ok_or("missing AUC")?;
        ensure((auc - brute_auc(&scores, &labels)).abs() < 1e-12, || format!("AUC at iteration {it}"))?;
        ensure(roc_auc(&scores, &labels).unwrap() == auc, || format!("AUC mismatch at iteration {it}"))?;

        let calibrated = calibrate_threshold(&scores, &labels).map_err(|e| e.to_string())?;
        ensure(calibrated == brute_threshold(&scores, &labels), || {
            format!("threshold at iteration {it}: {calibrated}")
        })?;

        let cross = rng.random_range(0.0..100.0);
        let own = rng.random_range(1.0..100.0);
        ensure(relative_transfer_ratio(cross, own).unwrap() == cross / own, || {
            format!("transfer ratio at iteration {it}")
        })?;

        let probs: Vec<f64> = (0..rng.random_range(2..8)).map(|_| rng.random_range(0.0..=1.0)).collect();
        let deltas = answer_tracing(&probs).map_err(|e| e.to_string())?;
        ensure(deltas.len() == probs.len() - 1, || format!("tracing length at iteration {it}"))?;
        for (i, dlt) in deltas.iter().enumerate() {
            ensure(*dlt == probs[i + 1] - probs[i], || format!("tracing at iteration {it}"))?;
        }

        let m = rng.random_range(1..8);
        let cond: Vec<f64> = (0..m).map(|_| -rng.random_range(0.0..5.0)).collect();
        let uncond: Vec<f64> = (0..m).map(|_| -rng.random_range(0.0..5.0)).collect();
        let expected = cond.iter().sum::<f64>() - uncond.iter().sum::<f64>();
        let gain = information_gain(&cond, &uncond).map_err(|e| e.to_string())?;
        ensure((gain - expected).abs() < 1e-12, || format!("information gain at iteration {it}"))?;
    }
    Ok(format!("{iterations} randomized cases agree with brute force"))
}

fn main() {
    let mut log = SolverLog::default();
    let identity = identity_check(&mut log);
    let oracle = oracle_check(&mut log);
    let descent = descent_check(&log);
    let bench = run_benchmark();

    let results: Vec<(&str, Outcome)> = vec![
        ("1 fgw identity", identity),
        ("2 fgw oracle bounds", oracle),
        ("3 descent, feasibility, decomposition", descent),
        ("4 gradient checks", gradient_check()),
        ("5 gin permutation invariance", permutation_check()),
        ("6 token selection", selection_check()),
        ("7 synthetic detection benchmark", detection_check(&bench)),
        ("8 discrepancy type directions", type_direction_check(&bench)),
        ("9 restriction efficiency", restriction_check()),
        ("10 metric exactness", metric_fuzz()),
    ];
    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
