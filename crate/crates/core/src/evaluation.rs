//! Detection metrics, transfer ratios, discrepancy-type correlations and
//! the two logit-based baselines. Unfaithful is the positive class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace_store::{TraceRecord, UnfaithType};
use crate::training::{score_many, Detector};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(predictions: &[u8], labels: &[u8]) -> Self {
        let mut c = Confusion::default();
        for (&p, &y) in predictions.iter().zip(labels) {
            match (p == 1, y == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => (self.tp + self.tn) as f64 / n as f64,
        }
    }

    /// `2tp / (2tp + fp + fn)`, with 0/0 taken as 0.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerTrace {
    pub id: String,
    pub score: f64,
    pub feature_term: f64,
    pub structure_term: f64,
    pub prediction: u8,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unfaith_type: Option<UnfaithType>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub f1: f64,
    pub confusion: Confusion,
    pub threshold: f64,
    /// Absent when only one class is present.
    pub roc_auc: Option<f64>,
    pub per_trace: Vec<PerTrace>,
}

impl EvalReport {
    /// Build a report from scored traces; `prediction` fields are overwritten
    /// with `score > threshold`.
    pub fn from_scored(threshold: f64, mut per_trace: Vec<PerTrace>) -> Self {
        for t in &mut per_trace {
            t.prediction = u8::from(t.score > threshold);
        }
        let predictions: Vec<u8> = per_trace.iter().map(|t| t.prediction).collect();
        let labels: Vec<u8> = per_trace.iter().map(|t| t.label).collect();
        let scores: Vec<f64> = per_trace.iter().map(|t| t.score).collect();
        let confusion = Confusion::from_predictions(&predictions, &labels);
        Self {
            accuracy: confusion.accuracy(),
            f1: confusion.f1(),
            confusion,
            threshold,
            roc_auc: roc_auc(&scores, &labels).ok(),
            per_trace,
        }
    }

    /// `id,score,feature_term,structure_term,prediction,label,unfaith_type`.
    pub fn per_trace_csv(&self) -> String {
        let mut out = String::from("id,score,feature_term,structure_term,prediction,label,unfaith_type\n");
        for t in &self.per_trace {
            let kind = match t.unfaith_type {
                Some(UnfaithType::PostHoc) => "post_hoc",
                Some(UnfaithType::Spurious) => "spurious",
                None => "",
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                t.id, t.score, t.feature_term, t.structure_term, t.prediction, t.label, kind
            ));
        }
        out
    }
}

/// Score every trace with the detector and compare against its label.
pub fn evaluate(detector: &Detector, traces: &[TraceRecord], workers: usize) -> Result<EvalReport> {
    for t in traces {
        if t.label.is_none() {
            return Err(Error::validation(&t.id, "label", "evaluation needs labeled traces"));
        }
    }
    let results = score_many(detector, traces, workers)?;
    let per_trace = traces
        .iter()
        .zip(results)
        .map(|(t, r)| PerTrace {
            id: t.id.clone(),
            score: r.value,
            feature_term: r.feature_term,
            structure_term: r.structure_term,
            prediction: 0,
            label: t.label.unwrap_or(0),
            unfaith_type: t.unfaith_type,
        })
        .collect();
    Ok(EvalReport::from_scored(detector.threshold, per_trace))
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument("ROC-AUC needs both classes".into()));
    }
    // Mann-Whitney U with mid-ranks for tied scores.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if labels[k] == 1 {
                rank_sum += mid_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

pub fn relative_transfer_ratio(perf_cross: f64, perf_in_domain: f64) -> Result<f64> {
    if perf_in_domain == 0.0 || !perf_in_domain.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "in-domain performance must be nonzero and finite, got {perf_in_domain}"
        )));
    }
    Ok(perf_cross / perf_in_domain)
}

/// `perf[i][j]` is the score of a detector trained on domain `i` and tested
/// on domain `j`. Each column is normalized by its diagonal entry.
pub fn transfer_matrix(perf: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = perf.len();
    if let Some(row) = perf.iter().find(|r| r.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: row.len(),
        });
    }
    perf.iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(j, &p)| relative_transfer_ratio(p, perf[j][j]))
                .collect()
        })
        .collect()
}

/// Pearson correlation. Errors on length mismatch or a constant series.
pub fn pearson(x: &[f64], y: &[f64], x_name: &str, y_name: &str) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("correlation needs at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    for (s, name) in [(sxx, x_name), (syy, y_name)] {
        if !(s > 0.0) {
            return Err(Error::InvalidArgument(format!("series {name} has zero variance")));
        }
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// `(r_feat, r_struct)` for one type indicator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeCorrelation {
    pub r_feat: f64,
    pub r_struct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeCorrelations {
    pub post_hoc: TypeCorrelation,
    pub spurious: TypeCorrelation,
}

/// Correlate each type indicator with the feature and structure terms
/// across all evaluated traces.
pub fn type_correlations(per_trace: &[PerTrace]) -> Result<TypeCorrelations> {
    let feat: Vec<f64> = per_trace.iter().map(|t| t.feature_term).collect();
    let structure: Vec<f64> = per_trace.iter().map(|t| t.structure_term).collect();
    let one = |kind: UnfaithType, name: &str| -> Result<TypeCorrelation> {
        let indicator: Vec<f64> = per_trace
            .iter()
            .map(|t| if t.unfaith_type == Some(kind) { 1.0 } else { 0.0 })
            .collect();
        let count = indicator.iter().filter(|&&v| v == 1.0).count();
        if count < 3 {
            return Err(Error::InvalidArgument(format!(
                "need at least 3 {name} traces, got {count}"
            )));
        }
        Ok(TypeCorrelation {
            r_feat: pearson(&indicator, &feat, name, "s_feat")?,
            r_struct: pearson(&indicator, &structure, name, "s_struct")?,
        })
    };
    Ok(TypeCorrelations {
        post_hoc: one(UnfaithType::PostHoc, "post_hoc")?,
        spurious: one(UnfaithType::Spurious, "spurious")?,
    })
}

/// Step-wise change in answer probability, `p_i - p_{i-1}`.
pub fn answer_tracing(answer_probs: &[f64]) -> Result<Vec<f64>> {
    if answer_probs.len() < 2 {
        return Err(Error::InvalidArgument("answer tracing needs at least two steps".into()));
    }
    if let Some(p) = answer_probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]")));
    }
    Ok(answer_probs.windows(2).map(|w| w[1] - w[0]).collect())
}

/// Log-likelihood ratio of the realized trace with and without the
/// question, used as a surrogate for `H(C) - H(C | Q)`.
pub fn information_gain(cond_logprobs: &[f64], uncond_logprobs: &[f64]) -> Result<f64> {
    if cond_logprobs.len() != uncond_logprobs.len() {
        return Err(Error::DimensionMismatch {
            expected: cond_logprobs.len(),
            got: uncond_logprobs.len(),
        });
    }
    if cond_logprobs.is_empty() {
        return Err(Error::InvalidArgument("information gain needs at least one step".into()));
    }
    Ok(cond_logprobs.iter().sum::<f64>() - uncond_logprobs.iter().sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(score: f64, label: u8) -> PerTrace {
        PerTrace {
            id: String::new(),
            score,
            feature_term: 0.0,
            structure_term: 0.0,
            prediction: 0,
            label,
            unfaith_type: None,
        }
    }

    #[test]
    fn confusion_examples() {
        let c = Confusion { tp: 3, fp: 1, tn: 4, fn_: 2 };
        assert_eq!(c.accuracy(), 0.7);
        assert!((c.f1() - 6.0 / 9.0).abs() < 1e-15);
        let none = Confusion { tp: 0, fp: 0, tn: 5, fn_: 3 };
        assert_eq!(none.f1(), 0.0);
        assert_eq!(Confusion::default().f1(), 0.0);
    }

    #[test]
    fn perfect_report() {
        let r = EvalReport::from_scored(0.5, vec![trace(0.1, 0), trace(0.9, 1), trace(0.7, 1)]);
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.f1, 1.0);
        assert_eq!(r.roc_auc, Some(1.0));
        assert_eq!(r.confusion.total(), 3);
    }

    #[test]
    fn confusion_serializes_fn_key() {
        let json = serde_json::to_string(&Confusion { tp: 1, fp: 2, tn: 3, fn_: 4 }).unwrap();
        assert_eq!(json, r#"{"tp":1,"fp":2,"tn":3,"fn":4}"#);
    }

    #[test]
    fn auc_with_ties() {
        assert_eq!(roc_auc(&[0.5, 0.5], &[0, 1]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.9, 0.1], &[0, 1]).unwrap(), 0.0);
        assert!(roc_auc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn rtr_examples() {
        assert_eq!(relative_transfer_ratio(40.0, 80.0).unwrap(), 0.5);
        assert_eq!(relative_transfer_ratio(71.5, 71.5).unwrap(), 1.0);
        assert!((relative_transfer_ratio(82.9, 80.0).unwrap() - 1.03625).abs() < 1e-12);
        assert!(relative_transfer_ratio(1.0, 0.0).is_err());
        let m = transfer_matrix(&[vec![80.0, 30.0], vec![40.0, 60.0]]).unwrap();
        assert_eq!(m, vec![vec![1.0, 0.5], vec![0.5, 1.0]]);
    }

    #[test]
    fn pearson_examples() {
        let x = [0.0, 0.0, 1.0, 1.0];
        assert!((pearson(&x, &[0.1, 0.2, 0.8, 0.9], "x", "y").unwrap() - 0.9899494936611665).abs() < 1e-12);
        assert!((pearson(&x, &x, "x", "x").unwrap() - 1.0).abs() < 1e-15);
        match pearson(&x, &[1.0; 4], "ind", "s_feat") {
            Err(Error::InvalidArgument(m)) => assert!(m.contains("s_feat")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tracing_and_gain_examples() {
        let d = answer_tracing(&[0.2, 0.5, 0.9]).unwrap();
        assert!((d[0] - 0.3).abs() < 1e-15 && (d[1] - 0.4).abs() < 1e-15);
        assert_eq!(answer_tracing(&[0.4; 4]).unwrap(), vec![0.0; 3]);
        assert!(answer_tracing(&[0.9, 0.5, 0.1]).unwrap().iter().all(|&x| x < 0.0));
        assert!(answer_tracing(&[0.5]).is_err());

        assert_eq!(information_gain(&[-1.0, -2.0], &[-1.0, -2.0]).unwrap(), 0.0);
        let cond = [-1.0, -1.1, -0.4, -2.0, -0.3];
        let uncond: Vec<f64> = cond.iter().map(|c| c - 0.1).collect();
        assert!((information_gain(&cond, &uncond).unwrap() - 0.5).abs() < 1e-12);
        assert!(information_gain(&[-3.0], &[-1.0]).unwrap() < 0.0);
        assert!(information_gain(&[-1.0], &[]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn pearson_bounded_and_affine_invariant(
            pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..30),
            a in 0.1f64..5.0, b in -3.0f64..3.0,
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            if let Ok(r) = pearson(&x, &y, "x", "y") {
                proptest::prop_assert!((-1.0..=1.0).contains(&r));
                let y2: Vec<f64> = y.iter().map(|v| a * v + b).collect();
                let r2 = pearson(&x, &y2, "x", "y").unwrap();
                proptest::prop_assert!((r - r2).abs() < 1e-9);
            }
        }
    }
}
