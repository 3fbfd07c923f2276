//! Synchronous-round state machines: PANDA, accelerated PANDA, DIGing and two
//! reference dual-ascent schemes, all on stacked `n*p`-dimensional state.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{block_average, project_disagreement, stack, ModelError, ProblemInstance};
use crate::network::MixingSequence;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("initial dual stack has block average norm {norm:.3e}; must be average-free")]
    InfeasibleDualInit { norm: f64 },
    #[error("divergence guard tripped at round {round}: ||x|| = {norm:.3e}")]
    Divergence { round: u64, norm: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Per-agent (x, z, y) triples stacked as `n*p` vectors, plus the bookkeeping
/// for the accelerated and DIGing variants.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverState {
    pub x: DVector<f64>,
    pub z: DVector<f64>,
    pub y: DVector<f64>,
    /// Extrapolated dual (accelerated variant only).
    pub y_bar: DVector<f64>,
    /// Tracked gradient stack (DIGing only).
    pub g_track: DVector<f64>,
    pub k: u64,
}

#[derive(Clone, Debug, Default)]
pub struct StepReport {
    /// p-dimensional vectors transmitted network-wide this round.
    pub messages_sent: u64,
    /// Inner-solver iterations per agent (zero for closed-form solves).
    pub per_agent_solve_iters: Vec<usize>,
}

/// All-zero PANDA start: x = z = 0 and the canonical average-free y = 0.
pub fn panda_init(prob: &ProblemInstance) -> SolverState {
    let d = prob.stacked_dim();
    SolverState {
        x: DVector::zeros(d),
        z: DVector::zeros(d),
        y: DVector::zeros(d),
        y_bar: DVector::zeros(d),
        g_track: DVector::zeros(d),
        k: 0,
    }
}

/// PANDA start from a caller-chosen dual stack, which must be average-free.
pub fn panda_init_with_dual(
    prob: &ProblemInstance,
    y0: DVector<f64>,
) -> Result<SolverState, SolverError> {
    let norm = block_average(&y0, prob.n(), prob.p()).norm();
    if norm > 1e-12 {
        return Err(SolverError::InfeasibleDualInit { norm });
    }
    let mut state = panda_init(prob);
    state.y_bar = y0.clone();
    state.y = y0;
    Ok(state)
}

/// DIGing start: x = 0, tracked gradient seeded with `grad f(x(0))`.
pub fn diging_init(prob: &ProblemInstance) -> Result<SolverState, SolverError> {
    let mut state = panda_init(prob);
    state.g_track = prob.stacked_gradient(&state.x)?;
    Ok(state)
}

fn apply_mixing(w: &DMatrix<f64>, v: &DVector<f64>, n: usize, p: usize) -> DVector<f64> {
    // (W ⊗ I_p) v without materializing the Kronecker product
    let mut out = DVector::zeros(n * p);
    for i in 0..n {
        let mut acc = DVector::zeros(p);
        for j in 0..n {
            let wij = w[(i, j)];
            if wij != 0.0 {
                acc.axpy(wij, &v.rows(j * p, p).into_owned(), 1.0);
            }
        }
        out.rows_mut(i * p, p).copy_from(&acc);
    }
    out
}

fn directed_edge_count(w: &DMatrix<f64>) -> u64 {
    let n = w.nrows();
    let mut count = 0u64;
    for i in 0..n {
        for j in 0..n {
            if i != j && w[(i, j)] != 0.0 {
                count += 1;
            }
        }
    }
    count
}

/// One PANDA round: local solves against y(k), average-tracking z update,
/// dual ascent against the tracking gap. One p-vector per directed edge.
pub fn panda_step(
    state: &mut SolverState,
    prob: &ProblemInstance,
    w: &DMatrix<f64>,
    c: f64,
) -> Result<StepReport, SolverError> {
    if !(c > 0.0) {
        return Err(SolverError::InvalidParameter("step size c must be positive".into()));
    }
    let (n, p) = (prob.n(), prob.p());
    let (x_next, iters) = prob.conjugate_gradient_map_counted(&state.y)?;
    let z_next = apply_mixing(w, &state.z, n, p) + &x_next - &state.x;
    let y_next = &state.y - c * (&x_next - &z_next);
    state.x = x_next;
    state.z = z_next;
    state.y = y_next;
    state.k += 1;
    Ok(StepReport { messages_sent: directed_edge_count(w), per_agent_solve_iters: iters })
}

/// PANDA with Nesterov extrapolation on the dual: the local solve uses
/// `y_bar(k)`, then `y_bar(k+1) = (1+eta) y(k+1) - eta y(k)`.
pub fn accelerated_panda_step(
    state: &mut SolverState,
    prob: &ProblemInstance,
    w: &DMatrix<f64>,
    c: f64,
    eta: f64,
) -> Result<StepReport, SolverError> {
    if !(c > 0.0) {
        return Err(SolverError::InvalidParameter("step size c must be positive".into()));
    }
    if eta < 0.0 {
        return Err(SolverError::InvalidParameter("eta must be nonnegative".into()));
    }
    let (n, p) = (prob.n(), prob.p());
    let (x_next, iters) = prob.conjugate_gradient_map_counted(&state.y_bar)?;
    let z_next = apply_mixing(w, &state.z, n, p) + &x_next - &state.x;
    let y_next = &state.y - c * (&x_next - &z_next);
    state.y_bar = (1.0 + eta) * &y_next - eta * &state.y;
    state.x = x_next;
    state.z = z_next;
    state.y = y_next;
    state.k += 1;
    Ok(StepReport { messages_sent: directed_edge_count(w), per_agent_solve_iters: iters })
}

/// One DIGing round: consensus step on x minus the tracked gradient, then the
/// gradient-tracking update. Two p-vectors per directed edge.
pub fn diging_step(
    state: &mut SolverState,
    prob: &ProblemInstance,
    w: &DMatrix<f64>,
    alpha: f64,
) -> Result<StepReport, SolverError> {
    if !(alpha > 0.0) {
        return Err(SolverError::InvalidParameter("step size alpha must be positive".into()));
    }
    let (n, p) = (prob.n(), prob.p());
    let x_next = apply_mixing(w, &state.x, n, p) - alpha * &state.g_track;
    let g_old = prob.stacked_gradient(&state.x)?;
    let g_new = prob.stacked_gradient(&x_next)?;
    state.g_track = apply_mixing(w, &state.g_track, n, p) + &g_new - &g_old;
    state.x = x_next;
    state.k += 1;
    Ok(StepReport { messages_sent: 2 * directed_edge_count(w), per_agent_solve_iters: vec![0; n] })
}

/// Idealized fully-connected iterate: local solves, then dual update against
/// the exact network average of the fresh x.
pub fn exact_average_dual_ascent_step(
    state: &mut SolverState,
    prob: &ProblemInstance,
    c: f64,
) -> Result<StepReport, SolverError> {
    if !(c > 0.0) {
        return Err(SolverError::InvalidParameter("step size c must be positive".into()));
    }
    let (n, p) = (prob.n(), prob.p());
    let (x_next, iters) = prob.conjugate_gradient_map_counted(&state.y)?;
    let deviation = project_disagreement(&x_next, n, p);
    state.y -= c * deviation;
    state.x = x_next;
    state.z = stack(&block_average(&state.x, n, p), n);
    state.k += 1;
    Ok(StepReport { messages_sent: 0, per_agent_solve_iters: iters })
}

/// Classic static-graph dual ascent against a communication matrix `U`.
pub fn static_dual_ascent_step(
    state: &mut SolverState,
    prob: &ProblemInstance,
    u: &DMatrix<f64>,
    c: f64,
) -> Result<StepReport, SolverError> {
    if !(c > 0.0) {
        return Err(SolverError::InvalidParameter("step size c must be positive".into()));
    }
    let (n, p) = (prob.n(), prob.p());
    let (x_next, iters) = prob.conjugate_gradient_map_counted(&state.y)?;
    let ux = apply_mixing(u, &x_next, n, p);
    state.y -= c * ux;
    state.x = x_next;
    state.k += 1;
    Ok(StepReport { messages_sent: directed_edge_count(u), per_agent_solve_iters: iters })
}

/// Algorithm selector with its per-algorithm parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Algorithm {
    Panda { c: f64 },
    AcceleratedPanda { c: f64, eta: f64 },
    Diging { alpha: f64 },
    ExactAverage { c: f64 },
    StaticDual { c: f64 },
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Panda { .. } => "panda",
            Self::AcceleratedPanda { .. } => "panda-accel",
            Self::Diging { .. } => "diging",
            Self::ExactAverage { .. } => "exact-avg",
            Self::StaticDual { .. } => "static-dual",
        }
    }
}

/// Full-state snapshot at a recorded round.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Snapshot {
    pub k: u64,
    pub x: DVector<f64>,
    pub z: DVector<f64>,
    pub y: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Completed,
    /// Aborted by the divergence guard at the recorded round.
    Diverged { round: u64 },
}

/// Per-iterate record of residuals, snapshots and message counts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunTrace {
    pub algorithm: String,
    /// Relative residual ||x(k) - x*stack|| / ||x*stack - x(0)|| per round,
    /// starting at k = 0.
    pub residuals: Vec<f64>,
    /// Cumulative p-vector message counts, aligned with `residuals[1..]`.
    pub cumulative_messages: Vec<u64>,
    /// Snapshots at rounds `0, stride, 2*stride, ...`.
    pub snapshots: Vec<Snapshot>,
    pub snapshot_stride: u64,
    pub status: RunStatus,
}

impl RunTrace {
    pub fn rounds_completed(&self) -> usize {
        self.residuals.len().saturating_sub(1)
    }

    /// First round whose relative residual is at or below `threshold`.
    pub fn rounds_to_threshold(&self, threshold: f64) -> Option<u64> {
        self.residuals.iter().position(|&r| r <= threshold).map(|k| k as u64)
    }
}

/// Round-matrix source for `run`.
pub enum RoundMatrices<'a> {
    Mixing(&'a MixingSequence),
    StaticU(&'a DMatrix<f64>),
    /// `(1/n) 1 1^T` without a graph (used by the exact-average reference).
    None,
}

/// Iterate the chosen algorithm for `iters` rounds, recording residuals,
/// snapshots (per `stride`) and cumulative message counts.
pub fn run(
    algorithm: &Algorithm,
    prob: &ProblemInstance,
    matrices: RoundMatrices<'_>,
    iters: u64,
    stride: u64,
) -> Result<RunTrace, SolverError> {
    if iters < 1 {
        return Err(SolverError::InvalidParameter("iters must be >= 1".into()));
    }
    if stride < 1 {
        return Err(SolverError::InvalidParameter("snapshot stride must be >= 1".into()));
    }
    let n = prob.n();
    let x_bar_star = prob.centralized_solution()?;
    let x_star_stack = stack(&x_bar_star, n);
    let mut state = match algorithm {
        Algorithm::Diging { .. } => diging_init(prob)?,
        _ => panda_init(prob),
    };
    let denom = (&x_star_stack - &state.x).norm();
    let guard = 1e12 * (1.0 + denom);
    let rel = |x: &DVector<f64>| (x - &x_star_stack).norm() / denom;

    let mut trace = RunTrace {
        algorithm: algorithm.name().to_string(),
        residuals: vec![rel(&state.x)],
        cumulative_messages: Vec::with_capacity(iters as usize),
        snapshots: vec![Snapshot { k: 0, x: state.x.clone(), z: state.z.clone(), y: state.y.clone() }],
        snapshot_stride: stride,
        status: RunStatus::Completed,
    };
    let mut total_messages = 0u64;
    for k in 0..iters {
        let report = match algorithm {
            Algorithm::Panda { c } => {
                let w = match &matrices {
                    RoundMatrices::Mixing(m) => m.matrix_at(k),
                    RoundMatrices::None => DMatrix::from_element(n, n, 1.0 / n as f64),
                    RoundMatrices::StaticU(_) => {
                        return Err(SolverError::InvalidParameter(
                            "panda needs a mixing sequence, not a communication matrix".into(),
                        ))
                    }
                };
                panda_step(&mut state, prob, &w, *c)?
            }
            Algorithm::AcceleratedPanda { c, eta } => {
                let w = match &matrices {
                    RoundMatrices::Mixing(m) => m.matrix_at(k),
                    RoundMatrices::None => DMatrix::from_element(n, n, 1.0 / n as f64),
                    RoundMatrices::StaticU(_) => {
                        return Err(SolverError::InvalidParameter(
                            "panda needs a mixing sequence, not a communication matrix".into(),
                        ))
                    }
                };
                accelerated_panda_step(&mut state, prob, &w, *c, *eta)?
            }
            Algorithm::Diging { alpha } => {
                let w = match &matrices {
                    RoundMatrices::Mixing(m) => m.matrix_at(k),
                    RoundMatrices::None => DMatrix::from_element(n, n, 1.0 / n as f64),
                    RoundMatrices::StaticU(_) => {
                        return Err(SolverError::InvalidParameter(
                            "diging needs a mixing sequence, not a communication matrix".into(),
                        ))
                    }
                };
                diging_step(&mut state, prob, &w, *alpha)?
            }
            Algorithm::ExactAverage { c } => exact_average_dual_ascent_step(&mut state, prob, *c)?,
            Algorithm::StaticDual { c } => {
                let u = match &matrices {
                    RoundMatrices::StaticU(u) => *u,
                    _ => {
                        return Err(SolverError::InvalidParameter(
                            "static dual ascent needs a communication matrix".into(),
                        ))
                    }
                };
                static_dual_ascent_step(&mut state, prob, u, *c)?
            }
        };
        total_messages += report.messages_sent;
        trace.residuals.push(rel(&state.x));
        trace.cumulative_messages.push(total_messages);
        if state.k % stride == 0 {
            trace.snapshots.push(Snapshot {
                k: state.k,
                x: state.x.clone(),
                z: state.z.clone(),
                y: state.y.clone(),
            });
        }
        let norm = state.x.norm();
        if !norm.is_finite() || norm > guard {
            trace.status = RunStatus::Diverged { round: state.k };
            break;
        }
    }
    Ok(trace)
}
