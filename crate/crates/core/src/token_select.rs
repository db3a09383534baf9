//! Informative-token selection within one reasoning sentence.
//!
//! Candidates pass an entropy quantile filter, get a counterfactual
//! necessity score (semantic change of the sentence plus KL shift of the
//! downstream distribution), and are ranked by necessity modulated by
//! entropy. The top `k` non-redundant candidates are kept.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace_store::SentenceRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    /// Entropy quantile for the candidate filter, in (0, 1).
    pub rho: f64,
    /// Weight of the sentence-level change in the necessity score.
    pub lambda_nec: f64,
    /// Strength of the entropy modulation, >= 0.
    pub beta: f64,
    pub k: usize,
    /// Hidden-state cosine above which a candidate counts as redundant.
    pub redundancy_threshold: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            rho: 0.5,
            lambda_nec: 0.5,
            beta: 0.5,
            k: 8,
            redundancy_threshold: 0.85,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad(format!("rho must lie in (0,1), got {}", self.rho));
        }
        if !(0.0..=1.0).contains(&self.lambda_nec) {
            return bad(format!("lambda_nec must lie in [0,1], got {}", self.lambda_nec));
        }
        if !(self.beta >= 0.0) {
            return bad(format!("beta must be >= 0, got {}", self.beta));
        }
        if self.k == 0 {
            return bad("k must be positive".into());
        }
        if !(self.redundancy_threshold > 0.0 && self.redundancy_threshold <= 1.0) {
            return bad(format!(
                "redundancy_threshold must lie in (0,1], got {}",
                self.redundancy_threshold
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub position: usize,
    pub entropy: f64,
    pub d_sent: f64,
    pub d_traj: f64,
    pub necessity: f64,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Selected positions, ascending.
    pub selected: Vec<usize>,
    /// One score per entropy candidate, in position order.
    pub scores: Vec<TokenScore>,
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidDistribution("empty".into()));
    }
    if let Some((i, x)) = p.iter().enumerate().find(|(_, x)| !(**x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidDistribution(format!("entry {i} is {x}")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidDistribution(format!("sums to {sum}")));
    }
    Ok(())
}

pub(crate) fn entropy_unchecked(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy_of(dist: &[f64]) -> Result<f64> {
    check_distribution(dist)?;
    Ok(entropy_unchecked(dist).max(0.0))
}

/// Positions whose entropy reaches the nearest-rank lower `rho` quantile.
pub fn entropy_candidates(entropies: &[f64], rho: f64) -> Result<Vec<usize>> {
    if entropies.is_empty() {
        return Err(Error::InvalidArgument("no token entropies".into()));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidArgument(format!("rho must lie in (0,1), got {rho}")));
    }
    let mut sorted = entropies.to_vec();
    sorted.sort_by(f64::total_cmp);
    // The epsilon keeps products like 0.3 * 10 from rounding up a rank.
    let rank = ((rho * sorted.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let threshold = sorted[rank - 1];
    Ok(entropies
        .iter()
        .enumerate()
        .filter(|(_, &h)| h >= threshold)
        .map(|(i, _)| i)
        .collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity, defined as 0 when either vector is zero.
pub(crate) fn cosine_or_zero(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// `1 - cos(orig, cf)`, in [0, 2].
pub fn sentence_change(orig_embed: &[f64], cf_embed: &[f64]) -> Result<f64> {
    if orig_embed.len() != cf_embed.len() {
        return Err(Error::DimensionMismatch {
            expected: orig_embed.len(),
            got: cf_embed.len(),
        });
    }
    if norm(orig_embed) == 0.0 || norm(cf_embed) == 0.0 {
        return Err(Error::InvalidArgument("zero sentence embedding".into()));
    }
    Ok(1.0 - cosine_or_zero(orig_embed, cf_embed))
}

/// `KL(p || q)` in nats. Requires `q_j = 0 => p_j = 0`.
pub fn traj_change(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    check_distribution(p)?;
    check_distribution(q)?;
    let mut kl = 0.0;
    for (j, (&pj, &qj)) in p.iter().zip(q).enumerate() {
        if pj == 0.0 {
            continue;
        }
        if qj == 0.0 {
            return Err(Error::SupportViolation { index: j, p: pj });
        }
        kl += pj * (pj / qj).ln();
    }
    Ok(kl.max(0.0))
}

pub fn necessity(d_sent: f64, d_traj: f64, lambda_nec: f64) -> f64 {
    lambda_nec * d_sent + (1.0 - lambda_nec) * d_traj
}

/// Min-max rescale to [0, 1]; a constant input maps to 0.5 everywhere.
pub fn rescale_unit(values: &[f64]) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return vec![0.5; values.len()];
    }
    values.iter().map(|x| (x - min) / (max - min)).collect()
}

pub fn importance(n_tilde: f64, h_tilde: f64, beta: f64) -> f64 {
    n_tilde * (1.0 + beta * h_tilde)
}

pub fn select_tokens(sentence: &SentenceRecord, config: &SelectionConfig) -> Result<Selection> {
    config.validate()?;
    let entropies: Vec<f64> = sentence.tokens.iter().map(|t| t.entropy).collect();
    let candidates = entropy_candidates(&entropies, config.rho)?;

    let mut scores = Vec::with_capacity(candidates.len());
    for &pos in &candidates {
        let cf = sentence.tokens[pos]
            .necessity_inputs
            .as_ref()
            .ok_or(Error::MissingCounterfactual { position: pos })?;
        let d_sent = sentence_change(&cf.orig_sent_embed, &cf.cf_sent_embed)?;
        let d_traj = traj_change(&cf.orig_down_dist, &cf.cf_down_dist)?;
        scores.push(TokenScore {
            position: pos,
            entropy: entropies[pos],
            d_sent,
            d_traj,
            necessity: necessity(d_sent, d_traj, config.lambda_nec),
            importance: 0.0,
        });
    }

    let n_tilde = rescale_unit(&scores.iter().map(|s| s.necessity).collect::<Vec<_>>());
    let h_tilde = rescale_unit(&scores.iter().map(|s| s.entropy).collect::<Vec<_>>());
    for (i, s) in scores.iter_mut().enumerate() {
        s.importance = importance(n_tilde[i], h_tilde[i], config.beta);
    }

    let mut ranked: Vec<&TokenScore> = scores.iter().collect();
    ranked.sort_by(|a, b| {
        b.importance
            .total_cmp(&a.importance)
            .then(a.position.cmp(&b.position))
    });

    let hidden = &sentence.hidden_states;
    let mut selected: Vec<usize> = Vec::with_capacity(config.k);
    for s in ranked {
        if selected.len() == config.k {
            break;
        }
        let redundant = hidden.get(s.position).is_some_and(|h| {
            selected
                .iter()
                .any(|&p| cosine_or_zero(h, &hidden[p]) > config.redundancy_threshold)
        });
        if !redundant {
            selected.push(s.position);
        }
    }
    selected.sort_unstable();
    Ok(Selection { selected, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace_store::{CounterfactualRecord, TokenSignal};
    use std::f64::consts::LN_2;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy_of(&[0.25; 4]).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!((entropy_of(&[0.25; 4]).unwrap() - 1.386294).abs() < 1e-6);
        assert_eq!(entropy_of(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((entropy_of(&[0.5, 0.5, 0.0, 0.0]).unwrap() - LN_2).abs() < 1e-12);
        assert!(entropy_of(&[0.5, 0.4]).is_err());
        assert!(entropy_of(&[1.5, -0.5]).is_err());
    }

    /// Brute-force nearest-rank quantile: the smallest sorted value such that
    /// at least `rho * L` entries are at or below it.
    fn quantile_oracle(h: &[f64], rho: f64) -> f64 {
        let mut s = h.to_vec();
        s.sort_by(f64::total_cmp);
        for (i, v) in s.iter().enumerate() {
            if (i + 1) as f64 >= rho * h.len() as f64 - 1e-9 {
                return *v;
            }
        }
        unreachable!()
    }

    #[test]
    fn candidates_examples() {
        let h = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(quantile_oracle(&h, 0.5), 0.2);
        assert_eq!(entropy_candidates(&h, 0.5).unwrap(), vec![1, 2, 3]);
        assert_eq!(entropy_candidates(&[0.7; 5], 0.5).unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(entropy_candidates(&[1.3], 0.9).unwrap(), vec![0]);
        assert!(entropy_candidates(&[], 0.5).is_err());
    }

    #[test]
    fn sentence_change_examples() {
        assert!(close(sentence_change(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0));
        assert!(close(sentence_change(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 1.0));
        assert!(close(sentence_change(&[1.0, -1.0], &[-2.0, 2.0]).unwrap(), 2.0));
        assert!(sentence_change(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn traj_change_examples() {
        assert_eq!(traj_change(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!(close(traj_change(&[1.0, 0.0], &[0.5, 0.5]).unwrap(), LN_2));
        let direct = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!(close(traj_change(&[0.5, 0.5], &[0.9, 0.1]).unwrap(), direct));
        match traj_change(&[0.5, 0.5], &[1.0, 0.0]) {
            Err(Error::SupportViolation { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn necessity_examples() {
        assert!(close(necessity(0.2, 0.4, 0.5), 0.3));
        assert_eq!(necessity(0.2, 0.4, 1.0), 0.2);
        assert_eq!(necessity(0.2, 0.4, 0.0), 0.4);
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(rescale_unit(&[1.0, 2.0, 3.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(rescale_unit(&[4.0, 4.0]), vec![0.5, 0.5]);
        assert_eq!(rescale_unit(&[-1.0, 1.0]), vec![0.0, 1.0]);
    }

    #[test]
    fn importance_examples() {
        assert_eq!(importance(1.0, 1.0, 0.5), 1.5);
        assert_eq!(importance(0.4, 0.9, 0.0), 0.4);
        assert_eq!(importance(0.0, 0.7, 0.5), 0.0);
    }

    /// Token with a counterfactual whose sentence change equals `d`
    /// (and zero downstream shift).
    fn token(entropy: f64, d: f64) -> TokenSignal {
        let theta = (1.0 - d).acos();
        TokenSignal {
            token_text: "t".into(),
            entropy,
            dist: None,
            necessity_inputs: Some(CounterfactualRecord {
                orig_sent_embed: vec![1.0, 0.0],
                cf_sent_embed: vec![theta.cos(), theta.sin()],
                orig_down_dist: vec![0.5, 0.5],
                cf_down_dist: vec![0.5, 0.5],
            }),
        }
    }

    fn sentence(tokens: Vec<TokenSignal>, hidden: Vec<Vec<f64>>) -> SentenceRecord {
        SentenceRecord {
            text: String::new(),
            tokens,
            hidden_states: hidden,
            circuit: None,
        }
    }

    fn basis(n: usize, i: usize) -> Vec<f64> {
        (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn budget_slack_selects_all_candidates() {
        let s = sentence(
            (0..4).map(|i| token(1.0, 0.1 * (i + 1) as f64)).collect(),
            (0..4).map(|i| basis(4, i)).collect(),
        );
        let cfg = SelectionConfig { k: 10, ..Default::default() };
        assert_eq!(select_tokens(&s, &cfg).unwrap().selected, vec![0, 1, 2, 3]);
    }

    #[test]
    fn redundant_duplicate_is_skipped() {
        let s = sentence(
            vec![token(1.0, 0.2), token(1.0, 0.9)],
            vec![vec![1.0, 2.0], vec![1.0, 2.0]],
        );
        let cfg = SelectionConfig {
            k: 2,
            redundancy_threshold: 0.9,
            ..Default::default()
        };
        assert_eq!(select_tokens(&s, &cfg).unwrap().selected, vec![1]);
    }

    #[test]
    fn top_k_matches_enumeration() {
        // Necessity values are chosen so that rescaled importances with
        // beta = 0 are proportional to (0.9, 0.8, 0.7, 0.2, 0.1) shifted.
        let nec = [0.7, 0.1, 0.9, 0.2, 0.8];
        let s = sentence(
            nec.iter().map(|&d| token(1.0, d)).collect(),
            (0..5).map(|i| basis(5, i)).collect(),
        );
        let cfg = SelectionConfig { k: 3, beta: 0.0, ..Default::default() };
        let sel = select_tokens(&s, &cfg).unwrap();

        // Enumerate every 3-subset and keep the one with the largest total.
        let mut best = (f64::NEG_INFINITY, vec![]);
        for a in 0..5 {
            for b in a + 1..5 {
                for c in b + 1..5 {
                    let total = nec[a] + nec[b] + nec[c];
                    if total > best.0 {
                        best = (total, vec![a, b, c]);
                    }
                }
            }
        }
        assert_eq!(sel.selected, best.1);
        assert_eq!(sel.selected, vec![0, 2, 4]);
    }

    #[test]
    fn missing_counterfactual_names_position() {
        let mut s = sentence(
            vec![token(0.1, 0.5), token(2.0, 0.5)],
            vec![vec![1.0], vec![1.0]],
        );
        s.tokens[1].necessity_inputs = None;
        match select_tokens(&s, &SelectionConfig::default()) {
            Err(Error::MissingCounterfactual { position }) => assert_eq!(position, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn necessity_identity_holds_in_scores() {
        let s = sentence(
            (0..6).map(|i| token(i as f64 * 0.3, 0.05 + 0.1 * i as f64)).collect(),
            (0..6).map(|i| basis(6, i)).collect(),
        );
        let cfg = SelectionConfig::default();
        for sc in select_tokens(&s, &cfg).unwrap().scores {
            assert_eq!(sc.necessity, cfg.lambda_nec * sc.d_sent + (1.0 - cfg.lambda_nec) * sc.d_traj);
            assert!(sc.importance >= 0.0);
        }
    }

    proptest::proptest! {
        #[test]
        fn entropy_bounded_by_log_support(raw in proptest::collection::vec(0.0f64..1.0, 1..20)) {
            let sum: f64 = raw.iter().sum();
            proptest::prop_assume!(sum > 1e-6);
            let p: Vec<f64> = raw.iter().map(|x| x / sum).collect();
            let h = entropy_of(&p).unwrap();
            proptest::prop_assert!(h >= 0.0 && h <= (p.len() as f64).ln() + 1e-12);
        }

        #[test]
        fn necessity_is_linear(a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0,
                               d in -5.0f64..5.0, lam in 0.0f64..1.0, s in -3.0f64..3.0) {
            let sum = necessity(a + c, b + d, lam);
            proptest::prop_assert!((sum - necessity(a, b, lam) - necessity(c, d, lam)).abs() < 1e-9);
            proptest::prop_assert!((necessity(s * a, s * b, lam) - s * necessity(a, b, lam)).abs() < 1e-9);
        }

        #[test]
        fn selection_size_bounded(n in 1usize..12, k in 1usize..6, seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let s = sentence(
                (0..n).map(|_| token(rng.random_range(0.0..3.0), rng.random_range(0.01..1.5))).collect(),
                (0..n).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
            );
            let sel = select_tokens(&s, &SelectionConfig { k, ..Default::default() }).unwrap();
            proptest::prop_assert!(!sel.selected.is_empty() && sel.selected.len() <= k);
            proptest::prop_assert!(sel.selected.windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn monotone_entropy_transform_keeps_selection(n in 2usize..10, k in 1usize..5, seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let ent: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
            let nec: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.5)).collect();
            let hidden: Vec<Vec<f64>> = (0..n).map(|i| basis(n, i)).collect();
            let a = sentence(ent.iter().zip(&nec).map(|(&h, &d)| token(h, d)).collect(), hidden.clone());
            let b = sentence(ent.iter().zip(&nec).map(|(&h, &d)| token(h.exp() * 2.0 + 1.0, d)).collect(), hidden);
            let cfg = SelectionConfig { k, beta: 0.0, ..Default::default() };
            proptest::prop_assert_eq!(select_tokens(&a, &cfg).unwrap().selected, select_tokens(&b, &cfg).unwrap().selected);
        }
    }
}
