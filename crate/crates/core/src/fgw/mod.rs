//! Fused Gromov-Wasserstein distance between two sentence graphs.
//!
//! For graphs `(A1, X1, mu1)` and `(A2, X2, mu2)` and a coupling `pi` with
//! marginals `mu1`, `mu2`:
//!
//! ```text
//! structure(pi) = sum_{i,j,k,l} (A1[i,j] - A2[k,l])^2 pi[i,k] pi[j,l]
//! feature(pi)   = sum_{i,k} |X1[i] - X2[k]|^2 pi[i,k]
//! value(pi)     = alpha * structure + (1 - alpha) * feature
//! ```
//!
//! The distance is the minimum of `value` over couplings, found with a
//! conditional-gradient (Frank-Wolfe) loop whose linear subproblem is solved
//! exactly. The objective is a nonconvex quadratic, so the loop is started
//! from both the independent coupling and, for equal sizes, the scaled
//! identity, and the better run wins.

mod hungarian;
mod transport;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sentence_graph::SentenceGraph;

pub use hungarian::solve as solve_assignment;
pub use transport::solve as solve_transport;

const MARGINAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FgwConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
    /// Equal-size pairs up to this many nodes also start from every
    /// permutation coupling.
    pub vertex_starts_max_nodes: usize,
}

impl Default for FgwConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            rel_tol: 1e-8,
            vertex_starts_max_nodes: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub matrix: Array2<f64>,
}

impl Coupling {
    pub fn product(mu1: &Array1<f64>, mu2: &Array1<f64>) -> Self {
        let matrix = Array2::from_shape_fn((mu1.len(), mu2.len()), |(i, k)| mu1[i] * mu2[k]);
        Self { matrix }
    }

    /// `1/T` on the entries `(i, perm[i])`.
    pub fn from_permutation(perm: &[usize]) -> Self {
        let t = perm.len();
        let mut matrix = Array2::zeros((t, t));
        for (i, &k) in perm.iter().enumerate() {
            matrix[[i, k]] = 1.0 / t as f64;
        }
        Self { matrix }
    }

    pub fn scaled_identity(t: usize) -> Self {
        Self {
            matrix: Array2::eye(t) / t as f64,
        }
    }

    /// Largest absolute deviation of the row and column sums from the
    /// prescribed marginals.
    pub fn marginal_error(&self, mu1: &Array1<f64>, mu2: &Array1<f64>) -> f64 {
        let rows = self.matrix.rows().into_iter().zip(mu1).map(|(r, m)| (r.sum() - m).abs());
        let cols = self
            .matrix
            .columns()
            .into_iter()
            .zip(mu2)
            .map(|(c, m)| (c.sum() - m).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }

    pub fn check(&self, mu1: &Array1<f64>, mu2: &Array1<f64>) -> Result<()> {
        if self.matrix.dim() != (mu1.len(), mu2.len()) {
            return Err(Error::InadmissibleCoupling(format!(
                "shape {:?} but marginals have lengths ({}, {})",
                self.matrix.dim(),
                mu1.len(),
                mu2.len()
            )));
        }
        if self.matrix.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::InadmissibleCoupling("negative or NaN entry".into()));
        }
        let err = self.marginal_error(mu1, mu2);
        if err > MARGINAL_TOL {
            return Err(Error::InadmissibleCoupling(format!("marginal error {err:e}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FgwTerms {
    pub value: f64,
    pub feature_term: f64,
    pub structure_term: f64,
}

/// Per-start record of a solver run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    /// Objective after initialization and after every accepted step.
    pub objective: Vec<f64>,
    /// Worst marginal deviation seen over all iterates of the run.
    pub max_marginal_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FgwResult {
    pub value: f64,
    /// Unweighted feature term at the returned coupling.
    pub feature_term: f64,
    /// Unweighted structure term at the returned coupling.
    pub structure_term: f64,
    pub coupling: Coupling,
    pub iterations: usize,
    pub converged: bool,
    pub runs: Vec<RunTrace>,
}

impl FgwResult {
    pub fn terms(&self) -> FgwTerms {
        FgwTerms {
            value: self.value,
            feature_term: self.feature_term,
            structure_term: self.structure_term,
        }
    }
}

fn check_pair(g1: &SentenceGraph, g2: &SentenceGraph, alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must lie in [0,1], got {alpha}")));
    }
    if g1.is_empty() || g2.is_empty() {
        return Err(Error::InvalidArgument("empty sentence graph".into()));
    }
    if g1.features.ncols() != g2.features.ncols() {
        return Err(Error::DimensionMismatch {
            expected: g1.features.ncols(),
            got: g2.features.ncols(),
        });
    }
    Ok(())
}

/// Squared Euclidean distances between every row of `x1` and of `x2`.
pub fn feature_costs(x1: &Array2<f64>, x2: &Array2<f64>) -> Array2<f64> {
    Array2::from_shape_fn((x1.nrows(), x2.nrows()), |(i, k)| {
        x1.row(i)
            .iter()
            .zip(x2.row(k))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    })
}

/// Four-index structure term, evaluated directly.
fn structure_term(a1: &Array2<f64>, a2: &Array2<f64>, pi: &Array2<f64>) -> f64 {
    let (n1, n2) = pi.dim();
    let mut total = 0.0;
    for i in 0..n1 {
        for k in 0..n2 {
            let pik = pi[[i, k]];
            if pik == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for j in 0..n1 {
                for l in 0..n2 {
                    let pjl = pi[[j, l]];
                    if pjl != 0.0 {
                        let diff = a1[[i, j]] - a2[[k, l]];
                        inner += diff * diff * pjl;
                    }
                }
            }
            total += pik * inner;
        }
    }
    total
}

struct Problem<'a> {
    a1: &'a Array2<f64>,
    a2: &'a Array2<f64>,
    costs: Array2<f64>,
    alpha: f64,
}

impl Problem<'_> {
    fn terms(&self, pi: &Array2<f64>) -> FgwTerms {
        let structure_term = structure_term(self.a1, self.a2, pi);
        let feature_term = (&self.costs * pi).sum();
        FgwTerms {
            value: self.alpha * structure_term + (1.0 - self.alpha) * feature_term,
            feature_term,
            structure_term,
        }
    }

    fn value(&self, pi: &Array2<f64>) -> f64 {
        self.terms(pi).value
    }

    /// d value / d pi[i,k], by direct four-index evaluation.
    fn gradient(&self, pi: &Array2<f64>) -> Array2<f64> {
        let (n1, n2) = pi.dim();
        let (a1, a2) = (self.a1, self.a2);
        Array2::from_shape_fn((n1, n2), |(i, k)| {
            let mut s = 0.0;
            for j in 0..n1 {
                for l in 0..n2 {
                    let pjl = pi[[j, l]];
                    if pjl != 0.0 {
                        let fwd = a1[[i, j]] - a2[[k, l]];
                        let bwd = a1[[j, i]] - a2[[l, k]];
                        s += (fwd * fwd + bwd * bwd) * pjl;
                    }
                }
            }
            (1.0 - self.alpha) * self.costs[[i, k]] + self.alpha * s
        })
    }
}

/// Evaluate the FGW objective and both raw terms at a given coupling.
pub fn fgw_objective(
    g1: &SentenceGraph,
    g2: &SentenceGraph,
    pi: &Coupling,
    alpha: f64,
) -> Result<FgwTerms> {
    check_pair(g1, g2, alpha)?;
    pi.check(&g1.measure, &g2.measure)?;
    let problem = Problem {
        a1: &g1.adjacency,
        a2: &g2.adjacency,
        costs: feature_costs(&g1.features, &g2.features),
        alpha,
    };
    Ok(problem.terms(&pi.matrix))
}

fn is_uniform(mu: &Array1<f64>) -> bool {
    mu.iter().all(|&m| m == mu[0])
}

fn linear_minimizer(
    grad: &Array2<f64>,
    mu1: &Array1<f64>,
    mu2: &Array1<f64>,
) -> Result<Array2<f64>> {
    let (n1, n2) = grad.dim();
    if n1 == n2 && is_uniform(mu1) && is_uniform(mu2) {
        let assignment = hungarian::solve(grad);
        let mut vertex = Array2::zeros((n1, n2));
        for (i, &k) in assignment.iter().enumerate() {
            vertex[[i, k]] = 1.0 / n1 as f64;
        }
        Ok(vertex)
    } else {
        transport::solve(mu1.as_slice().unwrap(), mu2.as_slice().unwrap(), grad)
    }
}

struct Run {
    pi: Array2<f64>,
    terms: FgwTerms,
    iterations: usize,
    converged: bool,
    trace: RunTrace,
}

fn frank_wolfe(
    problem: &Problem,
    mu1: &Array1<f64>,
    mu2: &Array1<f64>,
    start: Coupling,
    config: &FgwConfig,
) -> Result<Run> {
    let mut pi = start.matrix;
    let mut value = problem.value(&pi);
    let mut trace = RunTrace {
        objective: vec![value],
        max_marginal_error: Coupling { matrix: pi.clone() }.marginal_error(mu1, mu2),
    };
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iters {
        if value == 0.0 {
            converged = true;
            break;
        }
        let grad = problem.gradient(&pi);
        if grad.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { iteration: iterations });
        }
        let vertex = linear_minimizer(&grad, mu1, mu2)?;
        let direction = &vertex - &pi;

        // The objective is exactly quadratic along the segment; recover
        // a*g^2 + b*g + c from three evaluations.
        let f_half = problem.value(&(&pi + &(&direction * 0.5)));
        let f_one = problem.value(&vertex);
        let c = value;
        let a = 2.0 * f_one - 4.0 * f_half + 2.0 * c;
        let b = 4.0 * f_half - 3.0 * c - f_one;
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::NonFinite { iteration: iterations });
        }
        let gamma = if a > 0.0 {
            (-b / (2.0 * a)).clamp(0.0, 1.0)
        } else if f_one < c {
            1.0
        } else {
            0.0
        };
        if gamma == 0.0 {
            converged = true;
            break;
        }

        let candidate = if gamma == 1.0 {
            vertex
        } else {
            &pi + &(&direction * gamma)
        };
        let new_value = problem.value(&candidate);
        if !new_value.is_finite() {
            return Err(Error::NonFinite { iteration: iterations });
        }
        if new_value >= value {
            converged = true;
            break;
        }
        iterations += 1;
        let decrease = value - new_value;
        pi = candidate;
        value = new_value;
        trace.objective.push(value);
        trace.max_marginal_error = trace
            .max_marginal_error
            .max(Coupling { matrix: pi.clone() }.marginal_error(mu1, mu2));
        if decrease <= config.rel_tol * value.abs() {
            converged = true;
            break;
        }
    }

    debug_assert!(trace.objective.windows(2).all(|w| w[1] <= w[0]));
    Ok(Run {
        terms: problem.terms(&pi),
        pi,
        iterations,
        converged,
        trace,
    })
}

/// All permutations of `0..n` in lexicographic order.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        out.push(p.clone());
        let Some(i) = (1..n).rev().find(|&i| p[i - 1] < p[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| p[j] > p[i - 1]).expect("successor exists");
        p.swap(i - 1, j);
        p[i..].reverse();
    }
}

/// Minimize the FGW objective over admissible couplings.
pub fn solve_fgw(
    g1: &SentenceGraph,
    g2: &SentenceGraph,
    alpha: f64,
    config: &FgwConfig,
) -> Result<FgwResult> {
    check_pair(g1, g2, alpha)?;
    let problem = Problem {
        a1: &g1.adjacency,
        a2: &g2.adjacency,
        costs: feature_costs(&g1.features, &g2.features),
        alpha,
    };
    let (mu1, mu2) = (&g1.measure, &g2.measure);

    let mut starts = vec![Coupling::product(mu1, mu2)];
    if g1.len() == g2.len() {
        let t = g1.len();
        starts.push(Coupling::scaled_identity(t));
        if t <= config.vertex_starts_max_nodes {
            starts.extend(
                permutations(t)
                    .into_iter()
                    .filter(|p| p.iter().enumerate().any(|(i, &k)| i != k))
                    .map(|p| Coupling::from_permutation(&p)),
            );
        }
    }

    let mut best: Option<Run> = None;
    let mut runs = Vec::with_capacity(starts.len());
    for start in starts {
        let run = frank_wolfe(&problem, mu1, mu2, start, config)?;
        runs.push(run.trace.clone());
        if best.as_ref().is_none_or(|b| run.terms.value < b.terms.value) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one start");
    Ok(FgwResult {
        value: best.terms.value,
        feature_term: best.terms.feature_term,
        structure_term: best.terms.structure_term,
        coupling: Coupling { matrix: best.pi },
        iterations: best.iterations,
        converged: best.converged,
        runs,
    })
}

/// Gradients of the FGW value with respect to both feature matrices, with
/// the coupling (and adjacency) held fixed.
pub fn fgw_grad_features(
    g1: &SentenceGraph,
    g2: &SentenceGraph,
    coupling: &Coupling,
    alpha: f64,
) -> (Array2<f64>, Array2<f64>) {
    let pi = &coupling.matrix;
    let (x1, x2) = (&g1.features, &g2.features);
    let scale = 2.0 * (1.0 - alpha);
    let mut d1 = Array2::zeros(x1.raw_dim());
    let mut d2 = Array2::zeros(x2.raw_dim());
    for i in 0..x1.nrows() {
        for k in 0..x2.nrows() {
            let w = scale * pi[[i, k]];
            if w == 0.0 {
                continue;
            }
            for c in 0..x1.ncols() {
                let diff = x1[[i, c]] - x2[[k, c]];
                d1[[i, c]] += w * diff;
                d2[[k, c]] -= w * diff;
            }
        }
    }
    (d1, d2)
}
