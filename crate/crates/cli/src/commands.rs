use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cie_core::circuit_graph::restrict_circuit;
use cie_core::evaluation::{evaluate, transfer_matrix, type_correlations, EvalReport, PerTrace};
use cie_core::synthetic::{generate, SynthConfig};
use cie_core::token_select::{select_tokens, Selection, SelectionConfig};
use cie_core::trace_store::{load_traces, write_traces, TraceRecord, UnfaithType};
use cie_core::training::{
    encode_checkpoint, load_detector, manifest_path, score_many, train, Detector, TracedUsage, TrainConfig,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::args::*;
use crate::output::{read_json, to_json, CliError, CliResult, Outputs, Run};

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Select(a) => select(a),
        Command::TraceRestrict(a) => trace_restrict(a),
        Command::Train(a) => train_cmd(a),
        Command::Score(a) => score(a),
        Command::Eval(a) => eval(a),
        Command::Transfer(a) => transfer(a),
        Command::Analyze(a) => analyze(a),
        Command::Couplings(a) => couplings(a),
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Start from `base`, overlay the JSON file's fields, and reject unknown
/// or ill-typed ones.
fn layered<T: Serialize + DeserializeOwned>(base: T, file: Option<&Path>) -> CliResult<T> {
    let Some(path) = file else {
        return Ok(base);
    };
    let mut value = serde_json::to_value(&base).map_err(|e| CliError::Internal(e.to_string()))?;
    let overlay: Value = read_json(path)?;
    if !overlay.is_object() {
        return Err(CliError::Data(format!("{}: config must be a JSON object", path.display())));
    }
    let known = value.clone();
    check_keys(&known, &overlay, path, "")?;
    merge(&mut value, overlay);
    serde_json::from_value(value).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn check_keys(known: &Value, overlay: &Value, path: &Path, prefix: &str) -> CliResult<()> {
    if let (Value::Object(k), Value::Object(o)) = (known, overlay) {
        for (key, v) in o {
            let Some(inner) = k.get(key) else {
                return Err(CliError::Data(format!(
                    "{}: unknown config field {prefix}{key}",
                    path.display()
                )));
            };
            check_keys(inner, v, path, &format!("{prefix}{key}."))?;
        }
    }
    Ok(())
}

fn load(path: &Path) -> CliResult<Vec<TraceRecord>> {
    let traces = load_traces(path, true)?;
    if traces.is_empty() {
        return Err(CliError::Data(format!("{}: no traces", path.display())));
    }
    Ok(traces)
}

fn jsonl<T: Serialize>(rows: &[T]) -> CliResult<Vec<u8>> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, row).map_err(|e| CliError::Internal(e.to_string()))?;
        out.push(b'\n');
    }
    Ok(out)
}

fn traces_jsonl(traces: &[TraceRecord]) -> CliResult<Vec<u8>> {
    let mut out = Vec::new();
    write_traces(traces, &mut out).map_err(|e| CliError::Internal(e.to_string()))?;
    Ok(out)
}

fn in_sentence(trace: &TraceRecord, sentence: usize) -> impl Fn(cie_core::Error) -> CliError + '_ {
    move |e| {
        let msg = format!("trace {}, sentence {sentence}: {e}", trace.id);
        if e.is_data_error() {
            CliError::Data(msg)
        } else {
            CliError::Internal(msg)
        }
    }
}

fn synth(a: SynthArgs) -> CliResult<()> {
    let run = Run::start("synth");
    let mut cfg = layered(SynthConfig::default(), a.config.as_deref())?;
    if let Some(n) = a.n_traces {
        cfg.n_traces = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(v) = a.noise_std {
        cfg.noise_std = v;
    }
    let data = generate(&cfg)?;
    let mut outputs = Outputs::default();
    outputs.add(&a.out, traces_jsonl(&data.traces)?);
    outputs.add(a.out.with_extension("truth.jsonl"), jsonl(&data.truth)?);
    let inputs: Vec<&Path> = a.config.as_deref().into_iter().collect();
    run.finish(outputs, &a.out, &cfg, Some(cfg.seed), &inputs, None)
}

fn selection_config(flags: &SelectionFlags) -> CliResult<SelectionConfig> {
    let mut cfg = layered(SelectionConfig::default(), flags.config.as_deref())?;
    if let Some(v) = flags.rho {
        cfg.rho = v;
    }
    if let Some(v) = flags.lambda_nec {
        cfg.lambda_nec = v;
    }
    if let Some(v) = flags.beta {
        cfg.beta = v;
    }
    if let Some(v) = flags.k {
        cfg.k = v;
    }
    if let Some(v) = flags.redundancy {
        cfg.redundancy_threshold = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct SentenceSelection<'a> {
    trace_id: &'a str,
    sentence: usize,
    #[serde(flatten)]
    selection: Selection,
}

fn select(a: SelectArgs) -> CliResult<()> {
    let run = Run::start("select");
    let cfg = selection_config(&a.selection)?;
    let traces = load(&a.input)?;
    let mut rows = Vec::new();
    for trace in &traces {
        for (s, sentence) in trace.sentences.iter().enumerate() {
            rows.push(SentenceSelection {
                trace_id: &trace.id,
                sentence: s,
                selection: select_tokens(sentence, &cfg).map_err(in_sentence(trace, s))?,
            });
        }
    }
    let mut outputs = Outputs::default();
    outputs.add(&a.out, jsonl(&rows)?);
    run.finish(outputs, &a.out, &cfg, None, &[&a.input], None)
}

fn trace_restrict(a: RestrictArgs) -> CliResult<()> {
    let run = Run::start("trace-restrict");
    let cfg = selection_config(&a.selection)?;
    let mut traces = load(&a.input)?;
    let mut usage = TracedUsage::default();
    for trace in &mut traces {
        let snapshot = trace.clone();
        for (s, sentence) in trace.sentences.iter_mut().enumerate() {
            let err = in_sentence(&snapshot, s);
            let Some(circuit) = sentence.circuit.as_ref() else {
                return Err(CliError::Data(format!(
                    "trace {}, sentence {s}: missing circuit",
                    snapshot.id
                )));
            };
            let picked = select_tokens(sentence, &cfg).map_err(&err)?.selected;
            let positions: BTreeSet<i64> = picked.iter().map(|&p| p as i64).collect();
            let restricted = restrict_circuit(circuit, &positions).map_err(&err)?;
            usage += TracedUsage {
                tokens: sentence.tokens.len(),
                selected_tokens: positions.len(),
                full_nodes: circuit.nodes.len(),
                restricted_nodes: restricted.nodes.len(),
                empty_circuits: usize::from(restricted.nodes.is_empty()),
            };
            sentence.circuit = Some(restricted);
        }
    }
    let mut outputs = Outputs::default();
    outputs.add(&a.out, traces_jsonl(&traces)?);
    run.finish(outputs, &a.out, &cfg, None, &[&a.input], Some(usage))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn train_config(a: &TrainArgs) -> CliResult<TrainConfig> {
    let base = if a.synthetic_preset {
        TrainConfig::synthetic_benchmark()
    } else {
        TrainConfig::default()
    };
    let mut cfg = layered(base, a.config.as_deref())?;
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.margin {
        cfg.margin = v;
    }
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = a.lambda_edge {
        cfg.lambda_edge = v;
    }
    if let Some(v) = a.embed_dim {
        cfg.embed_dim = v;
    }
    if let Some(v) = a.k {
        cfg.selection.k = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(a: TrainArgs) -> CliResult<()> {
    let run = Run::start("train");
    let cfg = train_config(&a)?;
    let traces = load(&a.data)?;
    let outcome = train(&traces, &cfg, a.common.workers())?;
    let (bytes, manifest) = encode_checkpoint(&outcome.detector);
    let mut outputs = Outputs::default();
    outputs.add(&a.out, bytes);
    outputs.add(manifest_path(&a.out), to_json(&manifest)?);
    let log = a.log.clone().unwrap_or_else(|| with_suffix(&a.out, ".log.csv"));
    outputs.add(log, outcome.log.to_csv().into_bytes());
    let mut inputs: Vec<&Path> = vec![&a.data];
    inputs.extend(a.config.as_deref());
    run.finish(outputs, &a.out, &cfg, Some(cfg.seed), &inputs, Some(outcome.usage))
}

fn detector(path: &Path) -> CliResult<Detector> {
    Ok(load_detector(path)?)
}

fn score(a: ScoreArgs) -> CliResult<()> {
    let run = Run::start("score");
    let det = detector(&a.detector)?;
    let traces = load(&a.data)?;
    let results = score_many(&det, &traces, a.common.workers())?;
    let mut csv = String::from("id,score,feature_term,structure_term,prediction\n");
    for (t, r) in traces.iter().zip(&results) {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            t.id,
            r.value,
            r.feature_term,
            r.structure_term,
            u8::from(r.value > det.threshold)
        );
    }
    let mut outputs = Outputs::default();
    outputs.add(&a.out, csv.into_bytes());
    run.finish(outputs, &a.out, &det.config, Some(det.config.seed), &[&a.detector, &a.data], None)
}

fn eval(a: EvalArgs) -> CliResult<()> {
    let run = Run::start("eval");
    let det = detector(&a.detector)?;
    let traces = load(&a.data)?;
    let report = evaluate(&det, &traces, a.common.workers())?;
    let mut outputs = Outputs::default();
    outputs.add(&a.report, to_json(&report)?);
    if let Some(p) = &a.per_trace {
        outputs.add(p, report.per_trace_csv().into_bytes());
    }
    run.finish(outputs, &a.report, &det.config, Some(det.config.seed), &[&a.detector, &a.data], None)
}

fn metric_of(report: &EvalReport, metric: Metric) -> CliResult<f64> {
    match metric {
        Metric::F1 => Ok(report.f1),
        Metric::Accuracy => Ok(report.accuracy),
        Metric::Auc => report
            .roc_auc
            .ok_or_else(|| CliError::Data("ROC-AUC needs both classes in every test set".into())),
    }
}

fn domain_name(path: &Path) -> String {
    let stem = if path.is_dir() { path.file_name() } else { path.file_stem() };
    stem.map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn transfer(a: TransferArgs) -> CliResult<()> {
    let run = Run::start("transfer");
    if a.detectors.len() != a.data_dirs.len() {
        return Err(CliError::Usage(format!(
            "--detectors lists {} entries but --data-dirs lists {}",
            a.detectors.len(),
            a.data_dirs.len()
        )));
    }
    let files: Vec<PathBuf> = a
        .data_dirs
        .iter()
        .map(|p| if p.is_dir() { p.join("test.jsonl") } else { p.clone() })
        .collect();
    let detectors = a.detectors.iter().map(|p| detector(p)).collect::<CliResult<Vec<_>>>()?;
    let sets = files.iter().map(|p| load(p)).collect::<CliResult<Vec<_>>>()?;
    let mut perf = Vec::with_capacity(detectors.len());
    for det in &detectors {
        let row = sets
            .iter()
            .map(|s| metric_of(&evaluate(det, s, a.common.workers())?, a.metric))
            .collect::<CliResult<Vec<f64>>>()?;
        perf.push(row);
    }
    let rtr = transfer_matrix(&perf)?;
    let names: Vec<String> = a.data_dirs.iter().map(|p| domain_name(p)).collect();
    let mut csv = format!("train\\test,{}\n", names.join(","));
    for (name, row) in names.iter().zip(&rtr) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(csv, "{name},{}", cells.join(","));
    }
    let mut outputs = Outputs::default();
    outputs.add(&a.out, csv.into_bytes());
    let mut inputs: Vec<&Path> = a.detectors.iter().map(PathBuf::as_path).collect();
    inputs.extend(files.iter().map(PathBuf::as_path));
    let config = serde_json::json!({ "metric": format!("{:?}", a.metric), "perf": perf });
    run.finish(outputs, &a.out, &config, None, &inputs, None)
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct TermMeans {
    count: usize,
    mean_score: f64,
    mean_feature_term: f64,
    mean_structure_term: f64,
}

fn term_means<'a>(rows: impl Iterator<Item = &'a PerTrace>) -> TermMeans {
    let mut m = TermMeans::default();
    for r in rows {
        m.count += 1;
        m.mean_score += r.score;
        m.mean_feature_term += r.feature_term;
        m.mean_structure_term += r.structure_term;
    }
    if m.count > 0 {
        let n = m.count as f64;
        m.mean_score /= n;
        m.mean_feature_term /= n;
        m.mean_structure_term /= n;
    }
    m
}

fn analyze(a: AnalyzeArgs) -> CliResult<()> {
    let run = Run::start("analyze");
    let det = detector(&a.detector)?;
    let traces = load(&a.data)?;
    let report = evaluate(&det, &traces, a.common.workers())?;
    let correlations = type_correlations(&report.per_trace)?;
    let of = |kind: Option<UnfaithType>| {
        term_means(
            report
                .per_trace
                .iter()
                .filter(move |t| t.label == u8::from(kind.is_some()) && (kind.is_none() || t.unfaith_type == kind)),
        )
    };
    let analysis = serde_json::json!({
        "type_correlations": correlations,
        "breakdown": {
            "faithful": of(None),
            "post_hoc": of(Some(UnfaithType::PostHoc)),
            "spurious": of(Some(UnfaithType::Spurious)),
        },
    });
    let mut outputs = Outputs::default();
    outputs.add(&a.out, to_json(&analysis)?);
    run.finish(outputs, &a.out, &det.config, Some(det.config.seed), &[&a.detector, &a.data], None)
}

/// Trace ids may hold characters that are awkward in file names.
fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn couplings(a: CouplingsArgs) -> CliResult<()> {
    let run = Run::start("couplings");
    let det = detector(&a.detector)?;
    let mut traces = load(&a.data)?;
    if !a.ids.is_empty() {
        let known: BTreeSet<&str> = traces.iter().map(|t| t.id.as_str()).collect();
        if let Some(missing) = a.ids.iter().find(|id| !known.contains(id.as_str())) {
            return Err(CliError::Data(format!("no trace with id {missing}")));
        }
        traces.retain(|t| a.ids.contains(&t.id));
    }
    let results = score_many(&det, &traces, a.common.workers())?;
    let mut outputs = Outputs::default();
    let mut seen = BTreeSet::new();
    for (t, r) in traces.iter().zip(&results) {
        let stem = file_stem(&t.id);
        if !seen.insert(stem.clone()) {
            return Err(CliError::Data(format!("trace ids collide on file name {stem}")));
        }
        let mut csv = String::new();
        for row in r.coupling.matrix.rows() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(csv, "{}", cells.join(","));
        }
        outputs.add(a.out_dir.join(format!("{stem}.csv")), csv.into_bytes());
        let meta = serde_json::json!({
            "id": t.id,
            "value": r.value,
            "feature_term": r.feature_term,
            "structure_term": r.structure_term,
            "alpha": det.config.alpha,
            "rows": "external sentences",
            "cols": "internal sentences",
        });
        outputs.add(a.out_dir.join(format!("{stem}.json")), to_json(&meta)?);
    }
    let primary = a.out_dir.join("couplings");
    run.finish(outputs, &primary, &det.config, Some(det.config.seed), &[&a.detector, &a.data], None)
}
