//! Time-varying graphs, mixing matrices and joint-spectrum estimation.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed::derive_round_rng;

/// Undirected edge with `i < j`, zero-based.
pub type Edge = (usize, usize);

/// Deterministic, replayable stream of edge sets over a fixed vertex set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum GraphSequence {
    /// Complete graph every round.
    Complete { n: usize },
    /// The same edge set every round.
    Static { n: usize, edges: Vec<Edge> },
    /// Complete graph with each edge independently removed per round.
    IidLinkFailure { n: usize, removal_prob: f64, seed: u64 },
    /// Cycles through the given edge sets.
    Alternating { n: usize, phases: Vec<Vec<Edge>> },
}

impl GraphSequence {
    pub fn n(&self) -> usize {
        match self {
            Self::Complete { n }
            | Self::Static { n, .. }
            | Self::IidLinkFailure { n, .. }
            | Self::Alternating { n, .. } => *n,
        }
    }

    /// Edge set of round `k`. Same `(self, k)` always yields the same set.
    pub fn edges_at(&self, k: u64) -> Vec<Edge> {
        match self {
            Self::Complete { n } => complete_edges(*n),
            Self::Static { edges, .. } => edges.clone(),
            Self::IidLinkFailure { n, removal_prob, seed } => {
                let mut rng = derive_round_rng(*seed, "edges", k);
                complete_edges(*n)
                    .into_iter()
                    .filter(|_| rng.gen::<f64>() >= *removal_prob)
                    .collect()
            }
            Self::Alternating { phases, .. } => {
                phases[(k % phases.len() as u64) as usize].clone()
            }
        }
    }
}

/// Complete graph on `n` vertices, with each edge independently removed per
/// round with probability `removal_prob`.
pub fn iid_link_failure_sequence(n: usize, removal_prob: f64, seed: u64) -> GraphSequence {
    assert!(n >= 1, "need at least one vertex");
    assert!((0.0..=1.0).contains(&removal_prob), "removal_prob must be in [0,1]");
    GraphSequence::IidLinkFailure { n, removal_prob, seed }
}

fn complete_edges(n: usize) -> Vec<Edge> {
    let mut edges = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            edges.push((i, j));
        }
    }
    edges
}

pub fn vertex_degrees(edges: &[Edge], n: usize) -> Vec<usize> {
    let mut deg = vec![0usize; n];
    for &(i, j) in edges {
        deg[i] += 1;
        deg[j] += 1;
    }
    deg
}

/// Metropolis weights: `w_ij = 1/(1 + max(d_i, d_j))` on edges, diagonal takes
/// the slack. Symmetric and doubly stochastic for any undirected edge set;
/// the identity for the edgeless graph.
pub fn metropolis_weights(edges: &[Edge], n: usize) -> DMatrix<f64> {
    let deg = vertex_degrees(edges, n);
    let mut w = DMatrix::zeros(n, n);
    for &(i, j) in edges {
        let weight = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
        w[(i, j)] = weight;
        w[(j, i)] = weight;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    w
}

/// `(I + W) / 2`: doubly stochastic, and positive semi-definite for symmetric
/// `W` with eigenvalues >= -1.
pub fn lazy_variant(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    (DMatrix::identity(n, n) + w) * 0.5
}

/// Unweighted graph Laplacian `U = D - A`.
pub fn laplacian_communication_matrix(edges: &[Edge], n: usize) -> DMatrix<f64> {
    let deg = vertex_degrees(edges, n);
    let mut u = DMatrix::zeros(n, n);
    for &(i, j) in edges {
        u[(i, j)] = -1.0;
        u[(j, i)] = -1.0;
    }
    for i in 0..n {
        u[(i, i)] = deg[i] as f64;
    }
    u
}

pub fn is_connected(edges: &[Edge], n: usize) -> bool {
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                stack.push(w);
            }
        }
    }
    count == n
}

/// Weight-construction rule for a mixing sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MixingRule {
    Metropolis,
    /// Metropolis followed by `(I + W)/2`; positive semi-definite.
    LazyMetropolis,
    /// `(1/n) 1 1^T` every round regardless of the graph (reference only).
    ExactAverage,
}

/// Per-round doubly stochastic matrices `W(k)` respecting `E(k)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixingSequence {
    pub graph: GraphSequence,
    pub rule: MixingRule,
}

impl MixingSequence {
    pub fn metropolis(graph: GraphSequence) -> Self {
        Self { graph, rule: MixingRule::Metropolis }
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn matrix_at(&self, k: u64) -> DMatrix<f64> {
        let n = self.graph.n();
        match self.rule {
            MixingRule::Metropolis => metropolis_weights(&self.graph.edges_at(k), n),
            MixingRule::LazyMetropolis => {
                lazy_variant(&metropolis_weights(&self.graph.edges_at(k), n))
            }
            MixingRule::ExactAverage => DMatrix::from_element(n, n, 1.0 / n as f64),
        }
    }
}

/// `W_B(k) = W(k) W(k-1) ... W(k-B+1)`, with `W_B(k) = I` for `k < 0` and
/// `W_0(k) = I`.
pub fn window_product(mix: &MixingSequence, k: i64, b: usize) -> DMatrix<f64> {
    let n = mix.n();
    let mut prod = DMatrix::identity(n, n);
    if k < 0 {
        return prod;
    }
    for t in 0..b as i64 {
        let idx = k - t;
        if idx < 0 {
            break;
        }
        prod = &prod * mix.matrix_at(idx as u64);
    }
    prod
}

/// Finite-window estimate of the joint-spectrum contraction factor.
#[derive(Clone, Debug)]
pub struct SpectrumEstimate {
    pub b: usize,
    pub delta: f64,
    pub window_checked: usize,
    /// False when the finite-window max reached `1 - 1e-12`, i.e. (P3) could
    /// not be certified over the inspected window.
    pub certified: bool,
}

/// Max over `k in [B-1, rounds)` of `sigma_max(W_B(k) - (1/n)11^T)`. A
/// finite-window estimate of the all-rounds supremum.
pub fn estimate_delta(mix: &MixingSequence, b: usize, rounds: usize) -> SpectrumEstimate {
    assert!(b >= 1, "window must be >= 1");
    assert!(rounds >= b, "need rounds >= B");
    let n = mix.n();
    let avg = DMatrix::from_element(n, n, 1.0 / n as f64);
    let mut delta: f64 = 0.0;
    let mut checked = 0;
    for k in (b - 1)..rounds {
        let diff = window_product(mix, k as i64, b) - &avg;
        let sigma = diff.singular_values().max();
        delta = delta.max(sigma);
        checked += 1;
    }
    SpectrumEstimate { b, delta, window_checked: checked, certified: delta < 1.0 - 1e-12 }
}

/// Smallest window `B <= cap` whose delta estimate drops below 1, together
/// with the estimate.
pub fn find_contraction_window(
    mix: &MixingSequence,
    rounds: usize,
    cap: usize,
) -> Option<SpectrumEstimate> {
    for b in 1..=cap {
        let est = estimate_delta(mix, b, rounds.max(b));
        if est.certified {
            return Some(est);
        }
    }
    None
}

#[derive(Clone, Debug)]
pub struct PropertyCheck {
    pub passed: bool,
    /// Worst-case slack observed (interpretation depends on the property).
    pub worst_slack: f64,
    pub detail: String,
}

/// Assumption report for a mixing sequence over a window of rounds.
#[derive(Clone, Debug)]
pub struct MixingReport {
    pub decentralized: PropertyCheck,
    pub doubly_stochastic: PropertyCheck,
    pub joint_spectrum: PropertyCheck,
    pub estimate: SpectrumEstimate,
}

impl MixingReport {
    pub fn all_passed(&self) -> bool {
        self.decentralized.passed && self.doubly_stochastic.passed && self.joint_spectrum.passed
    }
}

/// Check (P1) zero pattern, (P2) row/column sums and (P3) joint spectrum over
/// `rounds` rounds with window `b`.
pub fn verify_mixing_assumptions(mix: &MixingSequence, rounds: usize, b: usize) -> MixingReport {
    let n = mix.n();
    let mut pattern_ok = true;
    let mut pattern_detail = String::from("zero pattern matches E(k)");
    let mut sum_slack: f64 = 0.0;
    for k in 0..rounds as u64 {
        let w = mix.matrix_at(k);
        let edges = mix.graph.edges_at(k);
        let mut allowed = vec![vec![false; n]; n];
        for i in 0..n {
            allowed[i][i] = true;
        }
        for (i, j) in edges {
            allowed[i][j] = true;
            allowed[j][i] = true;
        }
        for i in 0..n {
            for j in 0..n {
                if w[(i, j)] != 0.0 && !allowed[i][j] {
                    pattern_ok = false;
                    pattern_detail = format!("w[{},{}](k={}) = {} off-edge", i, j, k, w[(i, j)]);
                }
            }
        }
        for i in 0..n {
            let row: f64 = w.row(i).sum();
            let col: f64 = w.column(i).sum();
            sum_slack = sum_slack.max((row - 1.0).abs()).max((col - 1.0).abs());
        }
    }
    let estimate = estimate_delta(mix, b, rounds.max(b));
    MixingReport {
        decentralized: PropertyCheck {
            passed: pattern_ok,
            worst_slack: 0.0,
            detail: pattern_detail,
        },
        doubly_stochastic: PropertyCheck {
            passed: sum_slack <= 1e-12,
            worst_slack: sum_slack,
            detail: format!("max |row/col sum - 1| = {sum_slack:.3e}"),
        },
        joint_spectrum: PropertyCheck {
            passed: estimate.certified,
            worst_slack: 1.0 - estimate.delta,
            detail: format!(
                "delta estimate {:.6} over {} rounds (B = {}); finite-window estimate of the sup",
                estimate.delta, estimate.window_checked, estimate.b
            ),
        },
        estimate,
    }
}

/// One line per round: `k: (i,j) (i,j) ...` with 1-based vertices.
pub fn export_edge_lists(graph: &GraphSequence, rounds: u64) -> String {
    let mut out = String::new();
    for k in 0..rounds {
        out.push_str(&format!("{}:", k));
        for (i, j) in graph.edges_at(k) {
            out.push_str(&format!(" ({},{})", i + 1, j + 1));
        }
        out.push('\n');
    }
    out
}
