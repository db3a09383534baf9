//! Recorded trace data: questions, reasoning sentences, per-token signals,
//! hidden states and optional circuits, stored one trace per JSON line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::circuit_graph::AttributionGraph;
use crate::error::{Error, Result};
use crate::tensor_io;

const DIST_TOL: f64 = 1e-6;
const ENTROPY_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualRecord {
    pub orig_sent_embed: Vec<f64>,
    pub cf_sent_embed: Vec<f64>,
    pub orig_down_dist: Vec<f64>,
    pub cf_down_dist: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSignal {
    pub token_text: String,
    /// Entropy in nats of the (temperature-scaled) next-token distribution.
    pub entropy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub necessity_inputs: Option<CounterfactualRecord>,
}

/// Hidden states as they appear on disk: inline rows, or a reference into a
/// binary tensor container relative to the trace file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum HiddenStatesRepr {
    Inline(Vec<Vec<f64>>),
    External { bin: PathBuf, offset: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub text: String,
    pub tokens: Vec<TokenSignal>,
    /// One row per token: layer hidden states.
    pub hidden_states: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub circuit: Option<AttributionGraph>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnfaithType {
    PostHoc,
    Spurious,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub id: String,
    pub question: String,
    pub sentences: Vec<SentenceRecord>,
    /// 1 = unfaithful.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unfaith_type: Option<UnfaithType>,
}

impl TraceRecord {
    pub fn is_unfaithful(&self) -> Option<bool> {
        self.label.map(|l| l == 1)
    }

    pub fn validate(&self) -> Result<()> {
        let id = self.id.as_str();
        if self.sentences.is_empty() {
            return Err(Error::validation(id, "sentences", "trace has no sentences"));
        }
        if let Some(l) = self.label {
            if l > 1 {
                return Err(Error::validation(id, "label", format!("must be 0 or 1, got {l}")));
            }
        }
        let mut d_model = None;
        for (s, sent) in self.sentences.iter().enumerate() {
            let field = |name: &str| format!("sentences[{s}].{name}");
            if sent.tokens.is_empty() {
                return Err(Error::validation(id, field("tokens"), "sentence has no tokens"));
            }
            if sent.hidden_states.len() != sent.tokens.len() {
                return Err(Error::validation(
                    id,
                    field("hidden_states"),
                    format!(
                        "{} rows for {} tokens",
                        sent.hidden_states.len(),
                        sent.tokens.len()
                    ),
                ));
            }
            for row in &sent.hidden_states {
                let width = *d_model.get_or_insert(row.len());
                if row.len() != width || width == 0 {
                    return Err(Error::validation(
                        id,
                        field("hidden_states"),
                        format!("row width {} differs from {width}", row.len()),
                    ));
                }
                if row.iter().any(|x| !x.is_finite()) {
                    return Err(Error::validation(id, field("hidden_states"), "non-finite entry"));
                }
            }
            for (t, tok) in sent.tokens.iter().enumerate() {
                validate_token(tok).map_err(|msg| {
                    Error::validation(id, format!("sentences[{s}].tokens[{t}].{}", msg.0), msg.1)
                })?;
            }
            if let Some(circuit) = &sent.circuit {
                let report = crate::circuit_graph::validate_graph(circuit);
                if !report.is_empty() {
                    return Err(Error::validation(id, field("circuit"), report.join("; ")));
                }
            }
        }
        Ok(())
    }
}

fn check_dist(p: &[f64]) -> std::result::Result<(), String> {
    if p.is_empty() {
        return Err("empty distribution".into());
    }
    if let Some(x) = p.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
        return Err(format!("entry {x} is not a nonnegative finite number"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > DIST_TOL {
        return Err(format!("sums to {sum}, not 1"));
    }
    Ok(())
}

fn validate_token(tok: &TokenSignal) -> std::result::Result<(), (&'static str, String)> {
    if !(tok.entropy >= 0.0) || !tok.entropy.is_finite() {
        return Err(("entropy", format!("{} is not a nonnegative number", tok.entropy)));
    }
    if let Some(p) = &tok.dist {
        check_dist(p).map_err(|m| ("dist", m))?;
        let h = crate::token_select::entropy_unchecked(p);
        if (h - tok.entropy).abs() > ENTROPY_TOL {
            return Err((
                "entropy",
                format!("stored {} but dist implies {h}", tok.entropy),
            ));
        }
    }
    if let Some(cf) = &tok.necessity_inputs {
        if cf.orig_sent_embed.len() != cf.cf_sent_embed.len() || cf.orig_sent_embed.is_empty() {
            return Err((
                "necessity_inputs",
                "sentence embeddings must share a nonzero dimension".into(),
            ));
        }
        check_dist(&cf.orig_down_dist).map_err(|m| ("necessity_inputs.orig_down_dist", m))?;
        check_dist(&cf.cf_down_dist).map_err(|m| ("necessity_inputs.cf_down_dist", m))?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct RawSentence {
    text: String,
    tokens: Vec<TokenSignal>,
    hidden_states: HiddenStatesRepr,
    #[serde(default)]
    circuit: Option<AttributionGraph>,
}

#[derive(Deserialize)]
struct RawTrace {
    id: String,
    question: String,
    sentences: Vec<RawSentence>,
    #[serde(default)]
    label: Option<u8>,
    #[serde(default)]
    unfaith_type: Option<UnfaithType>,
}

fn resolve(raw: RawTrace, base: &Path) -> Result<TraceRecord> {
    let mut sentences = Vec::with_capacity(raw.sentences.len());
    for s in raw.sentences {
        let hidden_states = match s.hidden_states {
            HiddenStatesRepr::Inline(rows) => rows,
            HiddenStatesRepr::External { bin, offset } => {
                let path = if bin.is_absolute() { bin } else { base.join(bin) };
                tensor_io::read_tensor_at(&path, offset)?.to_rows()?
            }
        };
        sentences.push(SentenceRecord {
            text: s.text,
            tokens: s.tokens,
            hidden_states,
            circuit: s.circuit,
        });
    }
    Ok(TraceRecord {
        id: raw.id,
        question: raw.question,
        sentences,
        label: raw.label,
        unfaith_type: raw.unfaith_type,
    })
}

/// Load a JSON Lines trace file. Blank lines are skipped. With
/// `schema_check` every record invariant is validated.
pub fn load_traces(path: impl AsRef<Path>, schema_check: bool) -> Result<Vec<TraceRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawTrace = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let record = resolve(raw, base)?;
        if schema_check {
            record.validate()?;
        }
        out.push(record);
    }
    Ok(out)
}

pub fn write_traces<W: Write>(records: &[TraceRecord], w: &mut W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_traces(records: &[TraceRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_traces(records, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded three-way partition. Validation and test sizes are floors of
/// their fractions; train takes the remainder.
pub fn split_dataset<T: Clone>(records: &[T], fractions: (f64, f64, f64), seed: u64) -> Result<Split<T>> {
    let (ftrain, fval, ftest) = fractions;
    if records.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 records to split, got {}",
            records.len()
        )));
    }
    if !(ftrain > 0.0 && fval > 0.0 && ftest > 0.0) || (ftrain + fval + ftest - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "fractions {fractions:?} must be positive and sum to 1"
        )));
    }
    let n = records.len();
    let n_val = (n as f64 * fval).floor() as usize;
    let n_test = (n as f64 * ftest).floor() as usize;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<T>>();
    Ok(Split {
        val: pick(&order[..n_val]),
        test: pick(&order[n_val..n_val + n_test]),
        train: pick(&order[n_val + n_test..]),
    })
}
