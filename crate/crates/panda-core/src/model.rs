//! Local objectives, instance generation and centralized oracles.
//!
//! Each agent owns a strongly convex objective `f_i`. The solvers only interact
//! with objectives through `local_solve` (the conjugate-gradient map) and
//! `gradient`, so quadratic least-squares blocks and user-supplied smooth
//! objectives are interchangeable.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::seed::derive_rng;

/// Condition number (of the Gram matrix) beyond which a quadratic block is
/// treated as numerically singular.
const GRAM_COND_LIMIT: f64 = 1e12;
/// Iteration cap for the inner gradient-descent solver on custom objectives.
const INNER_ITER_CAP: usize = 1_000_000;
/// Draw cap for condition-number rejection sampling, per agent.
const DRAW_CAP: usize = 100_000;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("degenerate objective: Gram matrix condition number {cond:.3e} exceeds {limit:.1e}")]
    DegenerateObjective { cond: f64, limit: f64 },
    #[error("inner solver did not reach gradient norm {tol:.3e} within {cap} iterations")]
    InnerSolverDivergence { tol: f64, cap: usize },
    #[error("instance generation: no matrix with condition number <= {cond_cap} found in {cap} draws")]
    GenerationFailure { cond_cap: f64, cap: usize },
    #[error("aggregate system is singular; instance is degenerate")]
    DegenerateInstance,
    #[error("dual optimum blocks average to {norm:.3e} > 1e-8; x_star is not optimal")]
    InconsistentOptimum { norm: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("instance parse error: {0}")]
    Parse(String),
}

type ValueFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// One agent's objective.
#[derive(Clone)]
pub enum LocalObjective {
    /// `f_i(x) = 1/2 ||H x - m||^2`.
    Quadratic(QuadraticObjective),
    /// User-supplied smooth strongly convex objective with declared constants.
    Custom(CustomObjective),
}

#[derive(Clone)]
pub struct QuadraticObjective {
    h: DMatrix<f64>,
    m: DVector<f64>,
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    mu: f64,
    lip: f64,
}

#[derive(Clone)]
pub struct CustomObjective {
    pub value: ValueFn,
    pub gradient: GradFn,
    pub mu: f64,
    pub lip: f64,
    pub dim: usize,
}

impl QuadraticObjective {
    pub fn new(h: DMatrix<f64>, m: DVector<f64>) -> Result<Self, ModelError> {
        assert_eq!(h.nrows(), m.len(), "measurement dimension mismatch");
        let gram = h.transpose() * &h;
        let eigs = gram.clone().symmetric_eigenvalues();
        let mu = eigs.min();
        let lip = eigs.max();
        if !(mu > 0.0) || !mu.is_finite() || !lip.is_finite() || lip / mu > GRAM_COND_LIMIT {
            return Err(ModelError::DegenerateObjective {
                cond: lip / mu,
                limit: GRAM_COND_LIMIT,
            });
        }
        let chol = nalgebra::Cholesky::new(gram.clone()).ok_or(ModelError::DegenerateObjective {
            cond: lip / mu,
            limit: GRAM_COND_LIMIT,
        })?;
        let rhs = h.transpose() * &m;
        Ok(Self { h, m, gram, rhs, chol, mu, lip })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn measurement(&self) -> &DVector<f64> {
        &self.m
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }
}

impl LocalObjective {
    pub fn quadratic(h: DMatrix<f64>, m: DVector<f64>) -> Result<Self, ModelError> {
        Ok(Self::Quadratic(QuadraticObjective::new(h, m)?))
    }

    pub fn custom(obj: CustomObjective) -> Result<Self, ModelError> {
        if !(obj.mu > 0.0) || !(obj.lip >= obj.mu) || !obj.lip.is_finite() {
            return Err(ModelError::InvalidParameter(format!(
                "custom objective needs 0 < mu <= lip < inf, got mu={} lip={}",
                obj.mu, obj.lip
            )));
        }
        Ok(Self::Custom(obj))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Quadratic(q) => q.h.ncols(),
            Self::Custom(c) => c.dim,
        }
    }

    /// Strong convexity constant `mu_i`.
    pub fn mu(&self) -> f64 {
        match self {
            Self::Quadratic(q) => q.mu,
            Self::Custom(c) => c.mu,
        }
    }

    /// Gradient Lipschitz constant `L_i`.
    pub fn lip(&self) -> f64 {
        match self {
            Self::Quadratic(q) => q.lip,
            Self::Custom(c) => c.lip,
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            Self::Quadratic(q) => 0.5 * (&q.h * x - &q.m).norm_squared(),
            Self::Custom(c) => (c.value)(x),
        }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Quadratic(q) => &q.gram * x - &q.rhs,
            Self::Custom(c) => (c.gradient)(x),
        }
    }

    /// `argmin_x f_i(x) - y^T x`. Exact for quadratics, inner gradient descent
    /// (step `1/L_i`, gradient-norm stop) otherwise. Returns the minimizer and
    /// the number of inner iterations spent.
    pub fn local_solve(
        &self,
        y: &DVector<f64>,
        tol: f64,
    ) -> Result<(DVector<f64>, usize), ModelError> {
        if y.len() != self.dim() {
            return Err(ModelError::DimensionMismatch { expected: self.dim(), got: y.len() });
        }
        if !(tol > 0.0) {
            return Err(ModelError::InvalidParameter("tol must be positive".into()));
        }
        match self {
            Self::Quadratic(q) => Ok((q.chol.solve(&(&q.rhs + y)), 0)),
            Self::Custom(c) => {
                let mut x = DVector::zeros(c.dim);
                let step = 1.0 / c.lip;
                for it in 0..INNER_ITER_CAP {
                    let g = (c.gradient)(&x) - y;
                    if g.norm() <= tol {
                        return Ok((x, it));
                    }
                    x -= step * g;
                }
                Err(ModelError::InnerSolverDivergence { tol, cap: INNER_ITER_CAP })
            }
        }
    }
}

/// The global problem: `n` local objectives over a shared `p`-dimensional
/// variable, with aggregate constants `mu = min_i mu_i`, `L = max_i L_i`.
#[derive(Clone)]
pub struct ProblemInstance {
    agents: Vec<LocalObjective>,
    p: usize,
    mu: f64,
    lip: f64,
    /// Seed the instance was generated from, when applicable; kept for
    /// serialization round-trips.
    seed: Option<u64>,
}

impl ProblemInstance {
    pub fn new(agents: Vec<LocalObjective>) -> Result<Self, ModelError> {
        if agents.is_empty() {
            return Err(ModelError::InvalidParameter("need at least one agent".into()));
        }
        let p = agents[0].dim();
        if p == 0 {
            return Err(ModelError::InvalidParameter("dimension must be >= 1".into()));
        }
        if agents.iter().any(|a| a.dim() != p) {
            return Err(ModelError::InvalidParameter("agents disagree on dimension".into()));
        }
        let mu = agents.iter().map(|a| a.mu()).fold(f64::INFINITY, f64::min);
        let lip = agents.iter().map(|a| a.lip()).fold(0.0, f64::max);
        Ok(Self { agents, p, mu, lip, seed: None })
    }

    pub fn n(&self) -> usize {
        self.agents.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn lip(&self) -> f64 {
        self.lip
    }

    /// Condition number `kappa = mu / L`, in `(0, 1]`.
    pub fn kappa(&self) -> f64 {
        self.mu / self.lip
    }

    pub fn agents(&self) -> &[LocalObjective] {
        &self.agents
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Stacked dimension `n * p`.
    pub fn stacked_dim(&self) -> usize {
        self.agents.len() * self.p
    }

    pub fn block<'a>(&self, v: &'a DVector<f64>, i: usize) -> DVector<f64> {
        v.rows(i * self.p, self.p).into_owned()
    }

    /// `argmin_x f(x) - y^T x` blockwise; equals `grad f*(y)`.
    pub fn conjugate_gradient_map(&self, y: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        self.conjugate_gradient_map_counted(y).map(|(x, _)| x)
    }

    pub fn conjugate_gradient_map_counted(
        &self,
        y: &DVector<f64>,
    ) -> Result<(DVector<f64>, Vec<usize>), ModelError> {
        if y.len() != self.stacked_dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.stacked_dim(),
                got: y.len(),
            });
        }
        let mut out = DVector::zeros(self.stacked_dim());
        let mut iters = Vec::with_capacity(self.n());
        for (i, agent) in self.agents.iter().enumerate() {
            let yi = y.rows(i * self.p, self.p).into_owned();
            let (xi, it) = agent.local_solve(&yi, INNER_TOL)?;
            out.rows_mut(i * self.p, self.p).copy_from(&xi);
            iters.push(it);
        }
        Ok((out, iters))
    }

    /// Stacked gradient of `f` at a stacked point.
    pub fn stacked_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        if x.len() != self.stacked_dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.stacked_dim(),
                got: x.len(),
            });
        }
        let mut out = DVector::zeros(self.stacked_dim());
        for (i, agent) in self.agents.iter().enumerate() {
            let xi = x.rows(i * self.p, self.p).into_owned();
            out.rows_mut(i * self.p, self.p).copy_from(&agent.gradient(&xi));
        }
        Ok(out)
    }

    /// Minimizer of `sum_i f_i` — the ground-truth consensus solution.
    pub fn centralized_solution(&self) -> Result<DVector<f64>, ModelError> {
        let all_quadratic = self.agents.iter().all(|a| matches!(a, LocalObjective::Quadratic(_)));
        if all_quadratic {
            let mut a = DMatrix::zeros(self.p, self.p);
            let mut b = DVector::zeros(self.p);
            for agent in &self.agents {
                if let LocalObjective::Quadratic(q) = agent {
                    a += &q.gram;
                    b += &q.rhs;
                }
            }
            let chol = nalgebra::Cholesky::new(a).ok_or(ModelError::DegenerateInstance)?;
            Ok(chol.solve(&b))
        } else {
            // High-precision gradient descent on the aggregate.
            let step = 1.0 / (self.agents.iter().map(|a| a.lip()).sum::<f64>());
            let mut x = DVector::zeros(self.p);
            for _ in 0..INNER_ITER_CAP {
                let g: DVector<f64> =
                    self.agents.iter().map(|a| a.gradient(&x)).fold(DVector::zeros(self.p), |s, g| s + g);
                if g.norm() <= 1e-12 {
                    return Ok(x);
                }
                x -= step * g;
            }
            Err(ModelError::InnerSolverDivergence { tol: 1e-12, cap: INNER_ITER_CAP })
        }
    }

    /// Dual optimum `y*`: blocks `grad f_i(x_bar_star)`. Average-free within
    /// 1e-8 when `x_star` is optimal.
    pub fn dual_optimum(&self, x_star: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        if x_star.len() != self.p {
            return Err(ModelError::DimensionMismatch { expected: self.p, got: x_star.len() });
        }
        let mut y = DVector::zeros(self.stacked_dim());
        for (i, agent) in self.agents.iter().enumerate() {
            y.rows_mut(i * self.p, self.p).copy_from(&agent.gradient(x_star));
        }
        let avg = block_average(&y, self.n(), self.p);
        let norm = avg.norm();
        if norm > 1e-8 {
            return Err(ModelError::InconsistentOptimum { norm });
        }
        Ok(y)
    }
}

const INNER_TOL: f64 = 1e-10;

/// Average of the `n` blocks of a stacked vector.
pub fn block_average(v: &DVector<f64>, n: usize, p: usize) -> DVector<f64> {
    let mut avg = DVector::zeros(p);
    for i in 0..n {
        avg += v.rows(i * p, p);
    }
    avg / n as f64
}

/// Stack `n` copies of a `p`-vector.
pub fn stack(v: &DVector<f64>, n: usize) -> DVector<f64> {
    let p = v.len();
    let mut out = DVector::zeros(n * p);
    for i in 0..n {
        out.rows_mut(i * p, p).copy_from(v);
    }
    out
}

/// Apply the disagreement projector `Pi_perp (x) = x - stack(avg x)` blockwise.
pub fn project_disagreement(v: &DVector<f64>, n: usize, p: usize) -> DVector<f64> {
    let avg = block_average(v, n, p);
    let mut out = v.clone();
    for i in 0..n {
        let mut b = out.rows_mut(i * p, p);
        b -= &avg;
    }
    out
}

fn condition_number(h: &DMatrix<f64>) -> f64 {
    let sv = h.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Seeded least-squares instance: standard-Gaussian `H_i` redrawn until the
/// condition number is within `cond_cap`, `m_i = H_i x_true + noise`.
pub fn generate_least_squares_instance(
    n: usize,
    p: usize,
    cond_cap: f64,
    noise_scale: f64,
    seed: u64,
) -> Result<ProblemInstance, ModelError> {
    if n < 1 || p < 1 {
        return Err(ModelError::InvalidParameter("need n >= 1 and p >= 1".into()));
    }
    if !(cond_cap >= 1.0) {
        return Err(ModelError::InvalidParameter("cond_cap must be >= 1".into()));
    }
    let mut rng = derive_rng(seed, "instance");
    let x_true = DVector::from_fn(p, |_, _| rng.sample(StandardNormal));
    let mut agents = Vec::with_capacity(n);
    for _ in 0..n {
        let mut h = None;
        for _ in 0..DRAW_CAP {
            let cand = DMatrix::from_fn(p, p, |_, _| rng.sample(StandardNormal));
            if condition_number(&cand) <= cond_cap {
                h = Some(cand);
                break;
            }
        }
        let h = h.ok_or(ModelError::GenerationFailure { cond_cap, cap: DRAW_CAP })?;
        let noise = DVector::from_fn(p, |_, _| noise_scale * rng.sample::<f64, _>(StandardNormal));
        let m = &h * &x_true + noise;
        agents.push(LocalObjective::quadratic(h, m)?);
    }
    let mut inst = ProblemInstance::new(agents)?;
    inst.seed = Some(seed);
    Ok(inst)
}

fn fmt_f64(x: f64) -> String {
    // 17 significant digits round-trips every finite f64.
    format!("{:.16e}", x)
}

/// Serialize a quadratic instance as a self-describing JSON document with
/// 17-significant-digit decimals (exact f64 round-trip).
pub fn instance_to_text(inst: &ProblemInstance) -> Result<String, ModelError> {
    let mut s = String::new();
    s.push_str("{\n");
    let _ = writeln!(s, "  \"n\": {},", inst.n());
    let _ = writeln!(s, "  \"p\": {},", inst.p());
    match inst.seed {
        Some(seed) => {
            let _ = writeln!(s, "  \"seed\": {},", seed);
        }
        None => {
            let _ = writeln!(s, "  \"seed\": null,");
        }
    }
    s.push_str("  \"agents\": [\n");
    for (i, agent) in inst.agents.iter().enumerate() {
        let q = match agent {
            LocalObjective::Quadratic(q) => q,
            LocalObjective::Custom(_) => {
                return Err(ModelError::InvalidParameter(
                    "only quadratic instances are serializable".into(),
                ))
            }
        };
        s.push_str("    {\"h\": [");
        let p = inst.p();
        // row-major
        let entries: Vec<String> =
            (0..q.h.nrows()).flat_map(|r| (0..p).map(move |c| (r, c))).map(|(r, c)| fmt_f64(q.h[(r, c)])).collect();
        s.push_str(&entries.join(", "));
        s.push_str("], \"m\": [");
        let m_entries: Vec<String> = q.m.iter().map(|&v| fmt_f64(v)).collect();
        s.push_str(&m_entries.join(", "));
        s.push_str("]}");
        s.push_str(if i + 1 < inst.n() { ",\n" } else { "\n" });
    }
    s.push_str("  ]\n}\n");
    Ok(s)
}

pub fn instance_from_text(text: &str) -> Result<ProblemInstance, ModelError> {
    let v: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
    let n = v["n"].as_u64().ok_or_else(|| ModelError::Parse("missing n".into()))? as usize;
    let p = v["p"].as_u64().ok_or_else(|| ModelError::Parse("missing p".into()))? as usize;
    let seed = v["seed"].as_u64();
    let agents_json =
        v["agents"].as_array().ok_or_else(|| ModelError::Parse("missing agents".into()))?;
    if agents_json.len() != n {
        return Err(ModelError::Parse(format!("expected {} agents, got {}", n, agents_json.len())));
    }
    let mut agents = Vec::with_capacity(n);
    for a in agents_json {
        let h_entries: Vec<f64> = a["h"]
            .as_array()
            .ok_or_else(|| ModelError::Parse("missing h".into()))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| ModelError::Parse("bad number".into())))
            .collect::<Result<_, _>>()?;
        if h_entries.len() % p != 0 {
            return Err(ModelError::Parse("h size not a multiple of p".into()));
        }
        let rows = h_entries.len() / p;
        let h = DMatrix::from_row_slice(rows, p, &h_entries);
        let m_entries: Vec<f64> = a["m"]
            .as_array()
            .ok_or_else(|| ModelError::Parse("missing m".into()))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| ModelError::Parse("bad number".into())))
            .collect::<Result<_, _>>()?;
        agents.push(LocalObjective::quadratic(h, DVector::from_vec(m_entries))?);
    }
    let mut inst = ProblemInstance::new(agents)?;
    inst.seed = seed;
    Ok(inst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_objective(p: usize, m: DVector<f64>) -> LocalObjective {
        LocalObjective::quadratic(DMatrix::identity(p, p), m).unwrap()
    }

    #[test]
    fn local_solve_identity() {
        // H = I, m = 0: argmin 1/2||x||^2 - y^T x = y
        let obj = identity_objective(2, DVector::zeros(2));
        let y = DVector::from_vec(vec![3.0, -1.0]);
        let (x, _) = obj.local_solve(&y, 1e-10).unwrap();
        assert!((x - y).norm() < 1e-14);
    }

    #[test]
    fn local_solve_scaled() {
        // H = 2I, m = 0: 4x = y
        let obj = LocalObjective::quadratic(2.0 * DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        let (x, _) = obj.local_solve(&DVector::from_vec(vec![4.0, 8.0]), 1e-10).unwrap();
        assert!((x - DVector::from_vec(vec![1.0, 2.0])).norm() < 1e-14);
    }

    #[test]
    fn local_solve_matches_normal_equations_oracle() {
        let mut rng = derive_rng(42, "test-local-solve");
        for _ in 0..5 {
            let h = loop {
                let c = DMatrix::from_fn(5, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
                if condition_number(&c) <= 100.0 {
                    break c;
                }
            };
            let m = DVector::from_fn(5, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y = DVector::from_fn(5, |_, _| rng.sample::<f64, _>(StandardNormal));
            let obj = LocalObjective::quadratic(h.clone(), m.clone()).unwrap();
            let (x, _) = obj.local_solve(&y, 1e-10).unwrap();
            // independent oracle: explicit inverse of the normal equations
            let gram = h.transpose() * &h;
            let oracle = gram.try_inverse().unwrap() * (h.transpose() * &m + &y);
            assert!((x - oracle).norm() < 1e-8);
        }
    }

    #[test]
    fn local_solve_residual_invariant() {
        let mut rng = derive_rng(43, "test-residual");
        let h: DMatrix<f64> =
            DMatrix::from_fn(4, 4, |_, _| rng.sample::<f64, _>(StandardNormal))
                + 3.0 * DMatrix::<f64>::identity(4, 4);
        let m = DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let obj = LocalObjective::quadratic(h.clone(), m.clone()).unwrap();
        let y = DVector::from_fn(4, |_, _| 10.0 * rng.sample::<f64, _>(StandardNormal));
        let (x, _) = obj.local_solve(&y, 1e-10).unwrap();
        let gram = h.transpose() * &h;
        let resid = (&gram * &x - h.transpose() * &m - &y).norm();
        assert!(resid <= 1e-10 * (1.0 + y.norm()), "residual {resid}");
    }

    #[test]
    fn gradient_trivial_and_vanishing() {
        let obj = identity_objective(2, DVector::zeros(2));
        let g = obj.gradient(&DVector::from_vec(vec![1.0, 1.0]));
        assert!((g - DVector::from_vec(vec![1.0, 1.0])).norm() < 1e-15);

        let obj = identity_objective(2, DVector::from_vec(vec![2.0, 0.0]));
        let g = obj.gradient(&DVector::from_vec(vec![2.0, 0.0]));
        assert!(g.norm() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = derive_rng(44, "test-fd");
        let h = DMatrix::from_fn(3, 3, |_, _| rng.sample::<f64, _>(StandardNormal)) + 2.0 * DMatrix::identity(3, 3);
        let m = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let obj = LocalObjective::quadratic(h, m).unwrap();
        let x = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let g = obj.gradient(&x);
        let eps = 1e-6;
        for i in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += eps;
            xm[i] -= eps;
            let fd = (obj.value(&xp) - obj.value(&xm)) / (2.0 * eps);
            assert!((fd - g[i]).abs() <= 1e-4 * (1.0 + g[i].abs()), "fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn conjugate_map_single_block_and_symmetric() {
        let obj = identity_objective(2, DVector::zeros(2));
        let inst = ProblemInstance::new(vec![obj]).unwrap();
        let y = DVector::from_vec(vec![1.0, -2.0]);
        let x = inst.conjugate_gradient_map(&y).unwrap();
        assert!((x - y).norm() < 1e-14);

        // identical agents, y = 0: every block is the common minimizer
        let m = DVector::from_vec(vec![1.0, 2.0]);
        let agents = vec![identity_objective(2, m.clone()); 3];
        let inst = ProblemInstance::new(agents).unwrap();
        let x = inst.conjugate_gradient_map(&DVector::zeros(6)).unwrap();
        for i in 0..3 {
            assert!((inst.block(&x, i) - &m).norm() < 1e-14);
        }
    }

    #[test]
    fn conjugate_map_is_inverse_mu_lipschitz() {
        let inst = generate_least_squares_instance(4, 3, 100.0, 1.0, 5).unwrap();
        let mut rng = derive_rng(45, "test-lip");
        let lip = 1.0 / inst.mu();
        for _ in 0..20 {
            let ya = DVector::from_fn(12, |_, _| rng.sample::<f64, _>(StandardNormal));
            let yb = DVector::from_fn(12, |_, _| rng.sample::<f64, _>(StandardNormal));
            let xa = inst.conjugate_gradient_map(&ya).unwrap();
            let xb = inst.conjugate_gradient_map(&yb).unwrap();
            assert!((xa - xb).norm() <= lip * (ya - yb).norm() + 1e-12);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_least_squares_instance(10, 5, 100.0, 1.0, 7).unwrap();
        let b = generate_least_squares_instance(10, 5, 100.0, 1.0, 7).unwrap();
        assert_eq!(instance_to_text(&a).unwrap(), instance_to_text(&b).unwrap());
    }

    #[test]
    fn generation_one_by_one() {
        let inst = generate_least_squares_instance(1, 1, 1.0, 1.0, 3).unwrap();
        if let LocalObjective::Quadratic(q) = &inst.agents()[0] {
            assert_eq!(q.h.nrows(), 1);
            assert!((condition_number(&q.h) - 1.0).abs() < 1e-12);
        } else {
            panic!("expected quadratic");
        }
    }

    #[test]
    fn generation_respects_cond_cap() {
        let inst = generate_least_squares_instance(3, 2, 100.0, 1.0, 1).unwrap();
        for agent in inst.agents() {
            if let LocalObjective::Quadratic(q) = agent {
                assert!(condition_number(&q.h) <= 100.0);
            }
        }
    }

    #[test]
    fn centralized_solution_mean_case() {
        // all H_i = I, m_i = c_i: solution is the mean of the c_i
        let c1 = DVector::from_vec(vec![1.0, 2.0]);
        let c2 = DVector::from_vec(vec![3.0, 4.0]);
        let inst =
            ProblemInstance::new(vec![identity_objective(2, c1), identity_objective(2, c2)]).unwrap();
        let x = inst.centralized_solution().unwrap();
        assert!((x - DVector::from_vec(vec![2.0, 3.0])).norm() < 1e-12);
    }

    #[test]
    fn centralized_solution_zero_gradient() {
        let inst = generate_least_squares_instance(3, 4, 100.0, 1.0, 11).unwrap();
        let x = inst.centralized_solution().unwrap();
        let g: DVector<f64> = inst
            .agents()
            .iter()
            .map(|a| a.gradient(&x))
            .fold(DVector::zeros(4), |s, g| s + g);
        assert!(g.norm() <= 1e-10, "aggregate gradient {}", g.norm());
    }

    #[test]
    fn dual_optimum_cases() {
        // n = 1: y* = 0
        let inst = ProblemInstance::new(vec![identity_objective(2, DVector::from_vec(vec![1.0, 1.0]))]).unwrap();
        let xs = inst.centralized_solution().unwrap();
        let ys = inst.dual_optimum(&xs).unwrap();
        assert!(ys.norm() < 1e-12);

        // identical agents: every block zero
        let m = DVector::from_vec(vec![1.0, -1.0]);
        let inst = ProblemInstance::new(vec![identity_objective(2, m.clone()); 4]).unwrap();
        let xs = inst.centralized_solution().unwrap();
        let ys = inst.dual_optimum(&xs).unwrap();
        assert!(ys.norm() < 1e-12);
    }

    #[test]
    fn dual_optimum_fixed_point() {
        let inst = generate_least_squares_instance(3, 3, 100.0, 1.0, 13).unwrap();
        let xs = inst.centralized_solution().unwrap();
        let ys = inst.dual_optimum(&xs).unwrap();
        assert!(block_average(&ys, 3, 3).norm() <= 1e-8);
        let x = inst.conjugate_gradient_map(&ys).unwrap();
        let consensual = stack(&xs, 3);
        assert!((x - consensual).norm() <= 1e-8);
    }

    #[test]
    fn dual_optimum_rejects_non_optimal_point() {
        let inst = generate_least_squares_instance(3, 3, 100.0, 1.0, 17).unwrap();
        let bogus = DVector::from_vec(vec![10.0, -3.0, 4.0]);
        assert!(matches!(
            inst.dual_optimum(&bogus),
            Err(ModelError::InconsistentOptimum { .. })
        ));
    }

    #[test]
    fn serialization_round_trip_is_exact() {
        let inst = generate_least_squares_instance(4, 3, 100.0, 1.0, 19).unwrap();
        let text = instance_to_text(&inst).unwrap();
        let back = instance_from_text(&text).unwrap();
        assert_eq!(text, instance_to_text(&back).unwrap());
    }

    #[test]
    fn custom_objective_inner_solver() {
        // f(x) = 1/2 x^T x + cos-free smooth term; use a plain quadratic so the
        // inner solver result can be checked exactly.
        let obj = LocalObjective::custom(CustomObjective {
            value: Arc::new(|x: &DVector<f64>| 0.5 * x.norm_squared()),
            gradient: Arc::new(|x: &DVector<f64>| x.clone()),
            mu: 1.0,
            lip: 1.0,
            dim: 2,
        })
        .unwrap();
        let y = DVector::from_vec(vec![0.5, -0.25]);
        let (x, _) = obj.local_solve(&y, 1e-9).unwrap();
        assert!((x - y).norm() < 1e-8);
    }

    #[test]
    fn degenerate_objective_rejected() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(LocalObjective::quadratic(h, DVector::zeros(2)).is_err());
    }
}
