//! Step-size admissibility, rate certificates and the small-gain verification
//! machinery for PANDA over B-connected time-varying graphs.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{block_average, project_disagreement, stack, ModelError, ProblemInstance};
use crate::solvers::RunTrace;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("side condition violated: {0}")]
    SideCondition(String),
    #[error(
        "trace snapshots have stride {stride}; residual sequences need every round (stride 1)"
    )]
    InsufficientSnapshots { stride: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn validate_problem_constants(mu: f64, lip: f64, b: usize, delta: f64) -> Result<(), TheoryError> {
    if !(mu > 0.0) || !(lip > 0.0) || mu > lip {
        return Err(TheoryError::InvalidParameter(format!(
            "need 0 < mu <= L, got mu = {mu}, L = {lip}"
        )));
    }
    if b < 1 {
        return Err(TheoryError::InvalidParameter("window B must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&delta) {
        return Err(TheoryError::InvalidParameter(format!(
            "contraction factor delta must lie in [0, 1), got {delta}"
        )));
    }
    Ok(())
}

/// Largest certified dual step size: `mu sqrt(kappa) (1 - delta^2) / (4 B^2)`
/// with `kappa = mu / L`.
pub fn max_step_size(mu: f64, lip: f64, b: usize, delta: f64) -> Result<f64, TheoryError> {
    validate_problem_constants(mu, lip, b, delta)?;
    let kappa = mu / lip;
    Ok(mu * kappa.sqrt() * (1.0 - delta * delta) / (4.0 * (b * b) as f64))
}

/// Branch threshold for the rate bound. Returns `None` when the inner square
/// root does not dominate `8 delta B`, in which case the threshold is
/// undefined and the sublinear branch applies for every admissible step size.
pub fn alpha_threshold(
    mu: f64,
    lip: f64,
    b: usize,
    delta: f64,
) -> Result<Option<f64>, TheoryError> {
    validate_problem_constants(mu, lip, b, delta)?;
    let kappa = mu / lip;
    let bf = b as f64;
    // The exponents on kappa differ between the two terms; kept exactly as
    // stated even though the asymmetry looks like a typo upstream.
    let root = ((1.0 - delta * delta) * kappa.powf(2.0 / 3.0) + 8.0 * bf * bf).sqrt();
    let numerator = root - 8.0 * delta * bf;
    if numerator <= 0.0 {
        return Ok(None);
    }
    let ratio = numerator / (kappa.powf(1.5) + 8.0 * bf * bf);
    Ok(Some(2.0 * kappa.sqrt() * mu * ratio * ratio))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RateBranch {
    /// `c <= alpha`: `lambda = (1 - c/(2L))^(1/(2B))`.
    Contractive,
    /// `c > alpha` (or alpha undefined): `lambda = (delta + sqrt(4 c B^2 / (mu sqrt(kappa))))^(1/B)`.
    Sublinear,
}

/// Certified geometric rate for a given step size, together with the
/// quantities it was derived from.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateCertificate {
    pub mu: f64,
    pub lip: f64,
    pub b: usize,
    pub delta: f64,
    pub c: f64,
    pub c_max: f64,
    pub alpha: Option<f64>,
    pub lambda: f64,
    pub branch: RateBranch,
    /// True when the certified `lambda >= 1`: the bound carries no decay
    /// information and must not be treated as a convergence guarantee.
    pub vacuous: bool,
}

pub fn rate_bound(
    mu: f64,
    lip: f64,
    b: usize,
    delta: f64,
    c: f64,
) -> Result<RateCertificate, TheoryError> {
    let c_max = max_step_size(mu, lip, b, delta)?;
    if !(c > 0.0) || c > c_max {
        return Err(TheoryError::InvalidParameter(format!(
            "step size must lie in (0, {c_max:.6e}], got {c}"
        )));
    }
    let alpha = alpha_threshold(mu, lip, b, delta)?;
    let kappa = mu / lip;
    let bf = b as f64;
    let (branch, lambda) = match alpha {
        Some(a) if c <= a => (RateBranch::Contractive, (1.0 - c / (2.0 * lip)).powf(1.0 / (2.0 * bf))),
        _ => (
            RateBranch::Sublinear,
            (delta + (4.0 * c * bf * bf / (mu * kappa.sqrt())).sqrt()).powf(1.0 / bf),
        ),
    };
    Ok(RateCertificate {
        mu,
        lip,
        b,
        delta,
        c,
        c_max,
        alpha,
        lambda,
        branch,
        vacuous: lambda >= 1.0,
    })
}

/// `sup_{k <= K} lambda^{-k} s(k)` over the scalar norm sequence `s`.
pub fn lambda_k_norm(norms: &[f64], lambda: f64, k_max: usize) -> Result<f64, TheoryError> {
    if !(lambda > 0.0) {
        return Err(TheoryError::InvalidParameter("lambda must be positive".into()));
    }
    if norms.len() <= k_max {
        return Err(TheoryError::InvalidParameter(format!(
            "norm sequence has {} entries, need at least {}",
            norms.len(),
            k_max + 1
        )));
    }
    let mut sup: f64 = 0.0;
    let mut scale = 1.0;
    for &s in norms.iter().take(k_max + 1) {
        sup = sup.max(s * scale);
        scale /= lambda;
    }
    Ok(sup)
}

/// Norm sequences of the five residual signals driven around the small-gain
/// cycle: `r -> x_perp -> dxz_perp -> dy -> z_perp -> r`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualBundle {
    pub r: Vec<f64>,
    pub x_perp: Vec<f64>,
    pub dxz_perp: Vec<f64>,
    pub dy: Vec<f64>,
    pub z_perp: Vec<f64>,
}

impl ResidualBundle {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

/// Extract the five residual norm sequences from a trace recorded with
/// stride-1 snapshots. Index 0 carries `||r(0)||` and zeros for the other
/// four signals, matching the starting convention.
pub fn residual_sequences(
    trace: &RunTrace,
    prob: &ProblemInstance,
) -> Result<ResidualBundle, TheoryError> {
    if trace.snapshot_stride != 1 {
        return Err(TheoryError::InsufficientSnapshots { stride: trace.snapshot_stride });
    }
    let (n, p) = (prob.n(), prob.p());
    let x_bar_star = prob.centralized_solution()?;
    let y_star = prob.dual_optimum(&x_bar_star)?;
    let snaps = &trace.snapshots;
    if snaps.is_empty() {
        return Err(TheoryError::InvalidParameter("trace holds no snapshots".into()));
    }
    let mut bundle = ResidualBundle {
        r: Vec::with_capacity(snaps.len()),
        x_perp: vec![0.0],
        dxz_perp: vec![0.0],
        dy: vec![0.0],
        z_perp: vec![0.0],
    };
    bundle.r.push((&snaps[0].y - &y_star).norm());
    for w in snaps.windows(2) {
        let (prev, cur) = (&w[0], &w[1]);
        bundle.r.push((&cur.y - &y_star).norm());
        let xp = project_disagreement(&cur.x, n, p);
        let zp = project_disagreement(&cur.z, n, p);
        bundle.x_perp.push(xp.norm());
        bundle.z_perp.push(zp.norm());
        bundle.dxz_perp.push((xp - zp).norm());
        bundle.dy.push((&cur.y - &prev.y).norm());
    }
    Ok(bundle)
}

/// Per-arrow gains and offsets, evaluated for a concrete `(c, lambda)` and
/// the residual prefixes the offsets depend on.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmallGainGains {
    pub gamma: [f64; 5],
    pub omega: [f64; 5],
    pub lambda: f64,
    pub b: usize,
}

/// Compute the five arrow gains and offsets. Fails when a side condition of
/// the underlying bounds is violated, naming the condition.
pub fn small_gain_gains(
    mu: f64,
    lip: f64,
    b: usize,
    delta: f64,
    c: f64,
    lambda: f64,
    bundle: &ResidualBundle,
) -> Result<SmallGainGains, TheoryError> {
    validate_problem_constants(mu, lip, b, delta)?;
    if !(0.0 < lambda && lambda < 1.0) {
        return Err(TheoryError::InvalidParameter(format!(
            "lambda must lie in (0, 1), got {lambda}"
        )));
    }
    let lam_b = lambda.powi(b as i32);
    if lam_b <= delta {
        return Err(TheoryError::SideCondition(format!(
            "lambda^B > delta required by the consensus-contraction bounds \
             (lambda^B = {lam_b:.6e}, delta = {delta:.6e})"
        )));
    }
    let floor = (1.0 - c / (2.0 * lip)).sqrt();
    if lambda < floor {
        return Err(TheoryError::SideCondition(format!(
            "lambda >= sqrt(1 - c/(2L)) required by the dual-residual bound \
             (lambda = {lambda:.6e}, floor = {floor:.6e})"
        )));
    }
    if !(c > 0.0) || c > mu / 2.0 {
        return Err(TheoryError::SideCondition(format!(
            "c in (0, mu/2] required by the dual-residual bound (c = {c}, mu/2 = {})",
            mu / 2.0
        )));
    }
    if bundle.len() <= b {
        return Err(TheoryError::InvalidParameter(format!(
            "residual bundle holds {} rounds, offsets need at least {}",
            bundle.len(),
            b + 1
        )));
    }
    let window_factor = lam_b / (lam_b - delta);
    let mut omega2 = 0.0;
    let mut omega4 = 0.0;
    for t in 1..=b {
        let weight = lambda.powi(1 - t as i32);
        omega2 += weight * bundle.x_perp[t - 1];
        // The t-1 index is off by one here: the starting convention zeroes
        // z_perp(0), which would let the offset vanish at B = 1 while
        // z_perp(1) is already nonzero. Summing z_perp(t) keeps the bound
        // valid for every admissible start.
        omega4 += weight * bundle.z_perp[t];
    }
    omega2 *= window_factor;
    omega4 *= window_factor;
    let gamma = [
        1.0 / (mu * lambda),
        2.0 * (1.0 - lam_b) / ((1.0 - lambda) * (lam_b - delta)),
        c,
        (1.0 - lam_b) / (mu * (1.0 - lambda) * (lam_b - delta)),
        (lip * mu).sqrt(),
    ];
    let omega = [0.0, omega2, 0.0, omega4, 2.0 * bundle.r[0]];
    Ok(SmallGainGains { gamma, omega, lambda, b })
}

impl SmallGainGains {
    pub fn loop_gain(&self) -> f64 {
        self.gamma.iter().product()
    }
}

/// Loop gain strictly below one closes the cycle.
pub fn check_small_gain(gains: &SmallGainGains) -> bool {
    gains.loop_gain() < 1.0
}

/// Outcome of checking one arrow inequality at one horizon.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArrowCheck {
    pub arrow: String,
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`; nonnegative (up to the fixed tolerance) means the bound holds.
    pub slack: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArrowReport {
    pub lambda: f64,
    pub checks: Vec<ArrowCheck>,
}

impl ArrowReport {
    pub fn all_hold(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }
}

const ARROW_SLACK: f64 = 1e-12;

/// Evaluate all five arrow inequalities at each horizon in `k_values`,
/// reporting left/right sides and slack per check.
pub fn verify_arrows(
    bundle: &ResidualBundle,
    gains: &SmallGainGains,
    k_values: &[usize],
) -> Result<ArrowReport, TheoryError> {
    let lambda = gains.lambda;
    let cycle: [(&'static str, &[f64], &[f64]); 5] = [
        ("A1: r -> x_perp", &bundle.r, &bundle.x_perp),
        ("A2: x_perp -> dxz_perp", &bundle.x_perp, &bundle.dxz_perp),
        ("A3: dxz_perp -> dy", &bundle.dxz_perp, &bundle.dy),
        ("A4: dy -> z_perp", &bundle.dy, &bundle.z_perp),
        ("A5: z_perp -> r", &bundle.z_perp, &bundle.r),
    ];
    let mut checks = Vec::new();
    for &k in k_values {
        for (i, (arrow, src, dst)) in cycle.iter().enumerate() {
            let lhs = lambda_k_norm(dst, lambda, k)?;
            let rhs = gains.gamma[i] * lambda_k_norm(src, lambda, k)? + gains.omega[i];
            let slack = rhs - lhs;
            checks.push(ArrowCheck {
                arrow: arrow.to_string(),
                k,
                lhs,
                rhs,
                slack,
                holds: slack >= -ARROW_SLACK,
            });
        }
    }
    Ok(ArrowReport { lambda, checks })
}

/// One inequality of the feasibility system, with both sides evaluated.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeasibilityCondition {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub conditions: Vec<FeasibilityCondition>,
    /// Sufficient simplification `(1-lambda^B)^2 / (lambda (1-lambda)^2) <= 2 B^2`
    /// for `lambda in [0.5, 1)`; reported alongside, not required.
    pub relaxation: FeasibilityCondition,
}

impl FeasibilityReport {
    pub fn feasible(&self) -> bool {
        self.conditions.iter().all(|c| c.holds)
    }
}

/// Check the four joint feasibility inequalities on `(c, lambda)` plus the
/// windowed relaxation.
pub fn feasible_region_check(
    mu: f64,
    lip: f64,
    b: usize,
    delta: f64,
    c: f64,
    lambda: f64,
) -> Result<FeasibilityReport, TheoryError> {
    validate_problem_constants(mu, lip, b, delta)?;
    if !(lambda > 0.0) || lambda >= 1.0 {
        return Err(TheoryError::InvalidParameter(format!(
            "lambda must lie in (0, 1), got {lambda}"
        )));
    }
    let lam_b = lambda.powi(b as i32);
    let one_minus = 1.0 - lambda;
    let gap = lam_b - delta;
    let lhs_a = if gap > 0.0 {
        c * (1.0 - lam_b) * (1.0 - lam_b) / (lambda * one_minus * one_minus * gap * gap)
    } else {
        f64::INFINITY
    };
    let rhs_a = 0.5 * mu * (mu / lip).sqrt();
    let floor = (1.0 - c / (2.0 * lip)).sqrt();
    let conditions = vec![
        FeasibilityCondition { name: "loop-gain budget".into(), lhs: lhs_a, rhs: rhs_a, holds: lhs_a <= rhs_a },
        FeasibilityCondition { name: "step-size cap c <= mu/2".into(), lhs: c, rhs: mu / 2.0, holds: c > 0.0 && c <= mu / 2.0 },
        FeasibilityCondition {
            name: "lambda >= sqrt(1 - c/(2L))".into(),
            lhs: floor,
            rhs: lambda,
            holds: lambda >= floor,
        },
        FeasibilityCondition {
            name: "delta^(1/B) < lambda < 1".into(),
            lhs: delta.powf(1.0 / b as f64),
            rhs: lambda,
            holds: delta.powf(1.0 / b as f64) < lambda && lambda < 1.0,
        },
    ];
    let relax_lhs = (1.0 - lam_b) * (1.0 - lam_b) / (lambda * one_minus * one_minus);
    let relax_rhs = 2.0 * (b * b) as f64;
    let relaxation = FeasibilityCondition {
        name: "windowed relaxation (lambda in [0.5, 1))".into(),
        lhs: relax_lhs,
        rhs: relax_rhs,
        holds: lambda < 0.5 || relax_lhs <= relax_rhs,
    };
    Ok(FeasibilityReport { conditions, relaxation })
}

/// Dual optimum stacked over agents, as needed by residual extraction.
pub fn stacked_dual_optimum(prob: &ProblemInstance) -> Result<DVector<f64>, TheoryError> {
    let x_bar = prob.centralized_solution()?;
    let y = prob.dual_optimum(&x_bar)?;
    // ensure average-free (the model layer already enforces this)
    debug_assert!(block_average(&y, prob.n(), prob.p()).norm() <= 1e-8);
    Ok(y)
}

/// Stacked primal optimum `1_n \otimes x_bar_star`.
pub fn stacked_primal_optimum(prob: &ProblemInstance) -> Result<DVector<f64>, TheoryError> {
    let x_bar = prob.centralized_solution()?;
    Ok(stack(&x_bar, prob.n()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::generate_least_squares_instance;
    use crate::network::{estimate_delta, GraphSequence, MixingSequence};
    use crate::solvers::{run, Algorithm, RoundMatrices};

    #[test]
    fn max_step_reference_value() {
        assert_eq!(max_step_size(1.0, 1.0, 1, 0.0).unwrap(), 0.25);
        // scaling checks against an independent evaluation
        let c = max_step_size(1.0, 4.0, 2, 0.5).unwrap();
        assert!((c - 1.0 * 0.5 * 0.75 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn max_step_rejects_bad_inputs() {
        assert!(max_step_size(-1.0, 1.0, 1, 0.0).is_err());
        assert!(max_step_size(2.0, 1.0, 1, 0.0).is_err());
        assert!(max_step_size(1.0, 1.0, 0, 0.0).is_err());
        assert!(max_step_size(1.0, 1.0, 1, 1.0).is_err());
    }

    #[test]
    fn alpha_threshold_reference_value() {
        // kappa = 1, delta = 0, B = 1: 2 * (3/9)^2 = 2/9
        let a = alpha_threshold(1.0, 1.0, 1, 0.0).unwrap().unwrap();
        assert!((a - 2.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn alpha_threshold_undefined_for_dominant_delta_window() {
        // sqrt((1-d^2) kappa^(2/3) + 8 B^2) <= 8 d B forces None
        let a = alpha_threshold(1e-6, 1.0, 4, 0.99).unwrap();
        assert!(a.is_none());
    }

    #[test]
    fn rate_bound_contractive_branch_value() {
        let cert = rate_bound(1.0, 1.0, 1, 0.0, 0.1).unwrap();
        assert_eq!(cert.branch, RateBranch::Contractive);
        assert!((cert.lambda - 0.95f64.sqrt()).abs() < 1e-15);
        assert!(!cert.vacuous);
    }

    #[test]
    fn rate_bound_at_cmax_vacuous_on_sublinear_branch() {
        // whenever c_max lands on the sublinear branch, lambda^B =
        // delta + sqrt(1 - delta^2) >= 1 and the certificate must be flagged
        for &delta in &[0.3, 0.7] {
            let c_max = max_step_size(1.0, 4.0, 2, delta).unwrap();
            let cert = rate_bound(1.0, 4.0, 2, delta, c_max).unwrap();
            assert_eq!(cert.branch, RateBranch::Sublinear);
            assert!(cert.vacuous, "endpoint certificate must be flagged");
            assert!(cert.lambda >= 1.0);
        }
        // with delta = 0 the threshold exceeds c_max, so the endpoint stays
        // on the contractive branch and the certificate is informative
        let c_max = max_step_size(1.0, 4.0, 2, 0.0).unwrap();
        let cert = rate_bound(1.0, 4.0, 2, 0.0, c_max).unwrap();
        assert_eq!(cert.branch, RateBranch::Contractive);
        assert!(!cert.vacuous);
    }

    #[test]
    fn rate_bound_rejects_out_of_range_step() {
        assert!(rate_bound(1.0, 1.0, 1, 0.0, 0.0).is_err());
        assert!(rate_bound(1.0, 1.0, 1, 0.0, 0.26).is_err());
    }

    #[test]
    fn lambda_k_norm_reference_values() {
        // constant ones at lambda = 0.5, K = 3: sup is 0.5^{-3} = 8
        let ones = [1.0; 5];
        assert_eq!(lambda_k_norm(&ones, 0.5, 3).unwrap(), 8.0);
        // geometric sequence at its own rate: sup = 1
        let lam: f64 = 0.7;
        let geo: Vec<f64> = (0..10).map(|k| lam.powi(k)).collect();
        assert!((lambda_k_norm(&geo, lam, 9).unwrap() - 1.0).abs() < 1e-12);
        // truncation too short errors
        assert!(lambda_k_norm(&ones, 0.5, 10).is_err());
    }

    #[test]
    fn side_conditions_are_named() {
        let bundle = ResidualBundle {
            r: vec![1.0; 5],
            x_perp: vec![0.0; 5],
            dxz_perp: vec![0.0; 5],
            dy: vec![0.0; 5],
            z_perp: vec![0.0; 5],
        };
        let err = small_gain_gains(1.0, 1.0, 1, 0.9, 0.1, 0.5, &bundle).unwrap_err();
        assert!(err.to_string().contains("lambda^B > delta"));
        let err = small_gain_gains(1.0, 1.0, 1, 0.0, 0.4, 0.5, &bundle).unwrap_err();
        assert!(err.to_string().contains("sqrt(1 - c/(2L))"));
        let err = small_gain_gains(1.0, 1.0, 1, 0.0, 0.9, 0.99, &bundle).unwrap_err();
        assert!(err.to_string().contains("c in (0, mu/2]"));
    }

    #[test]
    fn gains_match_hand_computation() {
        let bundle = ResidualBundle {
            r: vec![2.0; 4],
            x_perp: vec![0.0, 0.5, 0.4, 0.3],
            dxz_perp: vec![0.0; 4],
            dy: vec![0.0; 4],
            z_perp: vec![0.0, 0.6, 0.5, 0.4],
        };
        let (mu, lip, b, delta, c, lam) = (1.0, 2.0, 1usize, 0.2, 0.1, 0.99);
        let g = small_gain_gains(mu, lip, b, delta, c, lam, &bundle).unwrap();
        assert!((g.gamma[0] - 1.0 / (mu * lam)).abs() < 1e-15);
        assert!((g.gamma[1] - 2.0 * 0.01 / (0.01 * 0.79)).abs() < 1e-12);
        assert_eq!(g.gamma[2], c);
        assert!((g.gamma[3] - 0.01 / (mu * 0.01 * 0.79)).abs() < 1e-12);
        assert!((g.gamma[4] - 2.0f64.sqrt()).abs() < 1e-15);
        // omega2 uses x_perp(0) = 0; omega4 uses z_perp(1)
        assert_eq!(g.omega[1], 0.0);
        let wf = lam / (lam - delta);
        assert!((g.omega[3] - wf * 0.6).abs() < 1e-12, "omega4 = {}", g.omega[3]);
        assert_eq!(g.omega[4], 4.0);
    }

    #[test]
    fn loop_gain_below_one_on_feasible_grid_point() {
        // pick c, lambda satisfying the feasibility system, then the gain
        // product must close
        let (mu, lip, b, delta) = (1.0, 1.0, 1usize, 0.0);
        let c = 0.05;
        let lam = 0.995;
        let report = feasible_region_check(mu, lip, b, delta, c, lam).unwrap();
        assert!(report.feasible(), "{report:?}");
        let bundle = ResidualBundle {
            r: vec![1.0; 3],
            x_perp: vec![0.0; 3],
            dxz_perp: vec![0.0; 3],
            dy: vec![0.0; 3],
            z_perp: vec![0.0; 3],
        };
        let g = small_gain_gains(mu, lip, b, delta, c, lam, &bundle).unwrap();
        assert!(check_small_gain(&g), "loop gain {}", g.loop_gain());
        // oracle: product equals 2 c (1-lam^B)^2 sqrt(L mu) / (mu^2 lam (1-lam)^2 (lam^B-d)^2)
        let lam_b = lam;
        let oracle = 2.0 * c * (1.0 - lam_b) * (1.0 - lam_b) * (lip * mu).sqrt()
            / (mu * mu * lam * (1.0 - lam) * (1.0 - lam) * (lam_b - delta) * (lam_b - delta));
        assert!((g.loop_gain() - oracle).abs() < 1e-10 * oracle);
    }

    #[test]
    fn feasibility_violations_are_reported() {
        let report = feasible_region_check(1.0, 1.0, 1, 0.0, 0.4, 0.6).unwrap();
        assert!(!report.feasible());
        let names: Vec<_> =
            report.conditions.iter().filter(|c| !c.holds).map(|c| c.name.as_str()).collect();
        assert!(names.contains(&"loop-gain budget"), "{names:?}");
    }

    #[test]
    fn residual_sequences_require_stride_one() {
        let prob = generate_least_squares_instance(3, 2, 50.0, 1.0, 11).unwrap();
        let mix = MixingSequence::metropolis(GraphSequence::Complete { n: 3 });
        let trace =
            run(&Algorithm::Panda { c: 0.3 * prob.mu() }, &prob, RoundMatrices::Mixing(&mix), 20, 5)
                .unwrap();
        assert!(matches!(
            residual_sequences(&trace, &prob),
            Err(TheoryError::InsufficientSnapshots { stride: 5 })
        ));
    }

    #[test]
    fn residual_sequences_start_with_convention_zeros() {
        let prob = generate_least_squares_instance(3, 2, 50.0, 1.0, 13).unwrap();
        let mix = MixingSequence::metropolis(GraphSequence::Complete { n: 3 });
        let trace =
            run(&Algorithm::Panda { c: 0.3 * prob.mu() }, &prob, RoundMatrices::Mixing(&mix), 30, 1)
                .unwrap();
        let bundle = residual_sequences(&trace, &prob).unwrap();
        assert_eq!(bundle.len(), 31);
        assert_eq!(bundle.x_perp[0], 0.0);
        assert_eq!(bundle.dy[0], 0.0);
        assert_eq!(bundle.z_perp[0], 0.0);
        assert_eq!(bundle.dxz_perp[0], 0.0);
        // r(0) = ||y(0) - y_star|| = ||y_star|| under the zero start
        let y_star = stacked_dual_optimum(&prob).unwrap();
        assert!((bundle.r[0] - y_star.norm()).abs() < 1e-12);
    }

    #[test]
    fn arrows_hold_on_a_compliant_run() {
        let prob = generate_least_squares_instance(4, 3, 4.0, 1.0, 17).unwrap();
        let mix = MixingSequence::metropolis(GraphSequence::Complete { n: 4 });
        let est = estimate_delta(&mix, 1, 20);
        let c_max = max_step_size(prob.mu(), prob.lip(), 1, est.delta).unwrap();
        let alpha = alpha_threshold(prob.mu(), prob.lip(), 1, est.delta)
            .unwrap()
            .unwrap_or(f64::INFINITY);
        let c = 0.9 * c_max.min(alpha).min(prob.mu() / 2.0);
        let cert = rate_bound(prob.mu(), prob.lip(), 1, est.delta, c).unwrap();
        assert!(!cert.vacuous);
        let trace = run(
            &Algorithm::Panda { c },
            &prob,
            RoundMatrices::Mixing(&mix),
            220,
            1,
        )
        .unwrap();
        let bundle = residual_sequences(&trace, &prob).unwrap();
        let gains =
            small_gain_gains(prob.mu(), prob.lip(), 1, est.delta, c, cert.lambda, &bundle)
                .unwrap();
        let report = verify_arrows(&bundle, &gains, &[10, 50, 200]).unwrap();
        for check in &report.checks {
            assert!(check.holds, "{} failed at K={}: slack {:.3e}", check.arrow, check.k, check.slack);
        }
    }

    #[test]
    fn arrow_report_records_violations() {
        // shrink gamma artificially so A1 must fail
        let bundle = ResidualBundle {
            r: vec![1.0, 1.0],
            x_perp: vec![0.0, 5.0],
            dxz_perp: vec![0.0, 0.0],
            dy: vec![0.0, 0.0],
            z_perp: vec![0.0, 0.0],
        };
        let gains = SmallGainGains {
            gamma: [0.1, 0.0, 0.0, 0.0, 0.0],
            omega: [0.0; 5],
            lambda: 0.9,
            b: 1,
        };
        let report = verify_arrows(&bundle, &gains, &[1]).unwrap();
        assert!(!report.all_hold());
        let a1 = &report.checks[0];
        assert!(a1.arrow.starts_with("A1"));
        assert!(a1.slack < 0.0);
    }
}
