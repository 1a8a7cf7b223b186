//! Deterministic fitting drivers over a problem contract.
//!
//! All drivers share one cycle shape: compute expected complete-data
//! statistics at the current iterate, then apply the problem's conditional
//! maximization steps in order. A step either consumes those statistics
//! (conditioning on the full or a reduced augmentation) or ignores them and
//! maximizes the observed-data objective over its block directly.
//!
//! Statistics are computed once per cycle, at the iterate the cycle starts
//! from. A direct step moves the iterate by a criterion the statistics know
//! nothing about, so any statistics-consuming step after it would work from
//! a stale surrogate and can push the objective downhill. The ordering
//! validator therefore requires augmentation levels to be non-increasing
//! across a cycle: full first, then reduced, then direct. An unchecked
//! driver that skips the validator exists so tests can demonstrate the
//! failure the rule prevents.
//!
//! Monotone flavors treat an objective decrease beyond a tiny slack as a
//! hard error rather than a warning: the guarded update steps make ascent
//! a structural property, so a decrease means an implementation bug, not
//! bad luck.

use std::time::Instant;

use crate::error::{FitError, OrderingViolation};

/// What a conditional maximization step conditions on.
///
/// `Full` consumes expected statistics of the complete hierarchy, `Reduced`
/// consumes statistics of a working augmentation that imputes less, and
/// `ObservedOnly` ignores augmentation and maximizes the observed-data
/// objective over its block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugLevel {
    Full,
    Reduced,
    ObservedOnly,
}

impl AugLevel {
    fn rank(self) -> u8 {
        match self {
            AugLevel::Full => 2,
            AugLevel::Reduced => 1,
            AugLevel::ObservedOnly => 0,
        }
    }

    fn augmented(self) -> bool {
        self != AugLevel::ObservedOnly
    }
}

/// One conditional maximization step of a cycle.
#[derive(Debug, Clone)]
pub struct CmStep {
    pub label: String,
    pub aug: AugLevel,
}

impl CmStep {
    pub fn new(label: impl Into<String>, aug: AugLevel) -> Self {
        CmStep {
            label: label.into(),
            aug,
        }
    }
}

/// Contract the deterministic drivers run against.
///
/// `e_step` must return statistics sufficient for every augmented step of
/// one cycle; a problem mixing full and reduced steps computes both views
/// in the one call. `apply_step` must never decrease the conditional
/// objective of the step it implements.
pub trait FitProblem {
    type Params: Clone;
    type Stats;

    fn param_labels(&self) -> Vec<String>;
    fn param_vector(&self, params: &Self::Params) -> Vec<f64>;
    fn loglik(&self, params: &Self::Params) -> Result<f64, FitError>;
    fn cm_steps(&self) -> Vec<CmStep>;
    fn e_step(&self, params: &Self::Params) -> Result<Self::Stats, FitError>;
    /// Apply step `index` of [`FitProblem::cm_steps`]. `stats` is `Some`
    /// for augmented steps and `None` for direct ones.
    fn apply_step(
        &self,
        params: &Self::Params,
        index: usize,
        stats: Option<&Self::Stats>,
    ) -> Result<Self::Params, FitError>;
}

/// Problems that can also draw imputations, for Monte Carlo E-steps.
pub trait McemProblem: FitProblem {
    fn impute_stats(&self, params: &Self::Params, seed: u64) -> Result<Self::Stats, FitError>;
    fn average_stats(&self, draws: &[Self::Stats]) -> Self::Stats;
}

/// Problems whose maximization step is itself solved by an inner EM run
/// against a cheaper outer augmentation.
pub trait NestedProblem: FitProblem {
    type OuterStats;

    /// The expensive reconstruction, done once per outer iteration.
    fn outer_e_step(&self, params: &Self::Params) -> Result<Self::OuterStats, FitError>;
    /// One full inner EM cycle holding the outer statistics fixed.
    fn inner_cycle(
        &self,
        params: &Self::Params,
        outer: &Self::OuterStats,
    ) -> Result<Self::Params, FitError>;
    /// The inner observed-data objective (the outer expected complete-data
    /// objective). Must not decrease across inner cycles.
    fn inner_objective(
        &self,
        params: &Self::Params,
        outer: &Self::OuterStats,
    ) -> Result<f64, FitError>;
}

/// Result of one parameter-expanded maximization.
pub struct PxUpdate<P> {
    pub params: P,
    /// True when the expanded maximizer sat at (or ran off) the working
    /// parameter's boundary and the returned iterate is the finite limit
    /// of the profile curve.
    pub boundary: bool,
}

/// Problems exposing a parameter-expanded surrogate: one call performs the
/// expectation at the identity working value and the joint maximization
/// over the expanded block.
pub trait PxemProblem: FitProblem {
    fn px_step(&self, params: &Self::Params) -> Result<PxUpdate<Self::Params>, FitError>;
}

/// Stopping and sizing knobs shared by all drivers.
#[derive(Debug, Clone)]
pub struct EmOptions {
    pub max_iter: usize,
    /// Relative change threshold; convergence needs both the objective and
    /// every parameter below it for two consecutive iterations.
    pub tol: f64,
    /// Inner cycles per outer iteration for the nested driver.
    pub inner_iters: usize,
    /// Imputations per iteration for the Monte Carlo driver.
    pub mc_size: usize,
    pub seed: u64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iter: 500,
            tol: 1e-8,
            inner_iters: 1,
            mc_size: 100,
            seed: 0,
        }
    }
}

impl EmOptions {
    fn validate(&self) -> Result<(), FitError> {
        if !(self.tol > 0.0) {
            return Err(FitError::Usage(format!(
                "tolerance must be positive, got {}",
                self.tol
            )));
        }
        if self.inner_iters < 1 {
            return Err(FitError::Usage("inner iteration count must be >= 1".into()));
        }
        if self.max_iter < 1 {
            return Err(FitError::Usage("iteration limit must be >= 1".into()));
        }
        Ok(())
    }
}

/// Slack allowed before an objective decrease counts as a failure.
pub const MONOTONE_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub seconds: f64,
    pub loglik: f64,
    pub params: Vec<f64>,
}

/// Per-iteration record of a run. Row 0 is the starting point.
#[derive(Debug, Clone)]
pub struct Trace {
    pub param_labels: Vec<String>,
    pub rows: Vec<TraceRow>,
    pub converged: bool,
    /// Free-form run annotations (boundary events, tolerated decreases of
    /// the unchecked driver).
    pub notes: Vec<String>,
}

impl Trace {
    pub fn final_row(&self) -> &TraceRow {
        self.rows.last().expect("a trace always has its start row")
    }

    pub fn iterations(&self) -> usize {
        self.rows.len() - 1
    }
}

/// Estimated geometric convergence rate of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RateEstimate {
    pub rho_hat: f64,
    /// Number of iterate ratios the estimate used.
    pub window: usize,
    /// Spread of those ratios (standard deviation over mean).
    pub cv: f64,
    pub reliable: bool,
}

/// Checks that augmentation levels never increase across a cycle.
///
/// A later step at a higher level would consume cycle-start statistics
/// that an earlier lower-level step already invalidated.
pub fn validate_ordering(steps: &[CmStep]) -> Result<(), OrderingViolation> {
    for (i, earlier) in steps.iter().enumerate() {
        for (j, later) in steps.iter().enumerate().skip(i + 1) {
            if later.aug.rank() > earlier.aug.rank() {
                return Err(OrderingViolation {
                    first: i,
                    first_label: earlier.label.clone(),
                    second: j,
                    second_label: later.label.clone(),
                });
            }
        }
    }
    Ok(())
}

struct Monitor {
    start: Instant,
    trace: Trace,
    streak: usize,
    tol: f64,
    enforce_monotone: bool,
}

impl Monitor {
    fn begin<P: FitProblem>(
        problem: &P,
        params: &P::Params,
        tol: f64,
        enforce_monotone: bool,
    ) -> Result<Self, FitError> {
        let ll = problem.loglik(params)?;
        if !ll.is_finite() {
            return Err(FitError::NonFinite {
                iter: 0,
                what: "starting log likelihood".into(),
            });
        }
        let trace = Trace {
            param_labels: problem.param_labels(),
            rows: vec![TraceRow {
                iter: 0,
                seconds: 0.0,
                loglik: ll,
                params: problem.param_vector(params),
            }],
            converged: false,
            notes: Vec::new(),
        };
        Ok(Monitor {
            start: Instant::now(),
            trace,
            streak: 0,
            tol,
            enforce_monotone,
        })
    }

    /// Records the iterate; returns true when the run should stop.
    fn record<P: FitProblem>(
        &mut self,
        problem: &P,
        params: &P::Params,
        iter: usize,
    ) -> Result<bool, FitError> {
        let ll = problem.loglik(params)?;
        let vec = problem.param_vector(params);
        if !ll.is_finite() {
            return Err(FitError::NonFinite {
                iter,
                what: "log likelihood".into(),
            });
        }
        if let Some(k) = vec.iter().position(|v| !v.is_finite()) {
            return Err(FitError::NonFinite {
                iter,
                what: format!("parameter {}", self.trace.param_labels[k]),
            });
        }
        let prev = self.trace.rows.last().unwrap();
        let drop = prev.loglik - ll;
        if drop > MONOTONE_SLACK {
            if self.enforce_monotone {
                return Err(FitError::NonMonotone { iter, drop });
            }
            self.trace
                .notes
                .push(format!("iteration {iter}: objective decreased by {drop:.3e}"));
        }
        let rel_ll = (ll - prev.loglik).abs() / prev.loglik.abs().max(1.0);
        let rel_par = vec
            .iter()
            .zip(&prev.params)
            .map(|(&a, &b)| (a - b).abs() / a.abs().max(1.0))
            .fold(0.0f64, f64::max);
        self.trace.rows.push(TraceRow {
            iter,
            seconds: self.start.elapsed().as_secs_f64(),
            loglik: ll,
            params: vec,
        });
        if rel_ll < self.tol && rel_par < self.tol {
            self.streak += 1;
        } else {
            self.streak = 0;
        }
        if self.streak >= 2 {
            self.trace.converged = true;
            return Ok(true);
        }
        Ok(false)
    }

    fn finish(self) -> Trace {
        self.trace
    }
}

fn run_cycles<P: FitProblem>(
    problem: &P,
    theta0: &P::Params,
    opts: &EmOptions,
    enforce_monotone: bool,
) -> Result<Trace, FitError> {
    opts.validate()?;
    let steps = problem.cm_steps();
    if steps.is_empty() {
        return Err(FitError::Usage("problem declares no update steps".into()));
    }
    let needs_stats = steps.iter().any(|s| s.aug.augmented());
    let mut mon = Monitor::begin(problem, theta0, opts.tol, enforce_monotone)?;
    let mut theta = theta0.clone();
    for iter in 1..=opts.max_iter {
        let stats = if needs_stats {
            Some(problem.e_step(&theta)?)
        } else {
            None
        };
        for (k, step) in steps.iter().enumerate() {
            let s = if step.aug.augmented() {
                stats.as_ref()
            } else {
                None
            };
            theta = problem.apply_step(&theta, k, s)?;
        }
        if mon.record(problem, &theta, iter)? {
            break;
        }
    }
    Ok(mon.finish())
}

/// Classic alternation: expectations, then one full maximization.
pub fn run_em<P: FitProblem>(
    problem: &P,
    theta0: &P::Params,
    opts: &EmOptions,
) -> Result<Trace, FitError> {
    let steps = problem.cm_steps();
    if steps.len() != 1 || steps[0].aug != AugLevel::Full {
        return Err(FitError::Usage(
            "this driver needs a single full-augmentation maximization step".into(),
        ));
    }
    run_cycles(problem, theta0, opts, true)
}

/// Conditional maximization cycle, every step on the full augmentation.
pub fn run_ecm<P: FitProblem>(
    problem: &P,
    theta0: &P::Params,
    opts: &EmOptions,
) -> Result<Trace, FitError> {
    let steps = problem.cm_steps();
    if steps.iter().any(|s| s.aug != AugLevel::Full) {
        return Err(FitError::Usage(
            "this driver needs every step on the full augmentation".into(),
        ));
    }
    run_cycles(problem, theta0, opts, true)
}

/// Cycle mixing full-augmentation steps with direct observed-objective
/// steps. The direct steps must come last; see [`validate_ordering`].
pub fn run_ecme<P: FitProblem>(
    problem: &P,
    theta0: &P::Params,
    opts: &EmOptions,
) -> Result<Trace, FitError> {
    let steps = problem.cm_steps();
    if steps.iter().any(|s| s.aug == AugLevel::Reduced) {
        return Err(FitError::Usage(
            "this driver mixes full and direct steps only; use the per-step-augmentation driver for reduced steps".into(),
        ));
    }
    validate_ordering(&steps)?;
    run_cycles(problem, theta0, opts, true)
}

/// Cycle with a free choice of augmentation level per step, subject to the
/// ordering rule.
pub fn run_aecm<P: FitProblem>(
    problem: &P,
    theta0: &P::Params,
    opts: &EmOptions,
) -> Result<Trace, FitError> {
    validate_ordering(&problem.cm_steps())?;
    run_cycles(problem, theta0, opts, true)
}

/// Like [`run_aecm`] but with no ordering validation and decreases logged
/// in the trace notes instead of failing the run.
///
/// This exists so tests can show what the validator prevents. Do not use
/// it for real fits.
pub fn run_aecm_unchecked<P: FitProblem>(
    problem: &P,
    theta0: &P::Params,
    opts: &EmOptions,
) -> Result<Trace, FitError> {
    run_cycles(problem, theta0, opts, false)
}

/// Plain EM against a reduced augmentation fixed for the whole run.
///
/// The reduction (the fixed working-parameter value) is part of the
/// problem's construction; every augmented step must declare it.
pub fn run_cda_em<P: FitProblem>(
    problem: &P,
    theta0: &P::Params,
    opts: &EmOptions,
) -> Result<Trace, FitError> {
    let steps = problem.cm_steps();
    if !steps.iter().any(|s| s.aug == AugLevel::Reduced) {
        return Err(FitError::Usage(
            "this driver needs at least one reduced-augmentation step".into(),
        ));
    }
    validate_ordering(&steps)?;
    run_cycles(problem, theta0, opts, true)
}

/// EM with the expectation replaced by an average over seeded imputations.
///
/// Stopping widens the tolerance threefold to absorb Monte Carlo noise,
/// and the trace is exempt from the monotonicity check.
pub fn run_mcem<P: McemProblem>(
    problem: &P,
    theta0: &P::Params,
    opts: &EmOptions,
) -> Result<Trace, FitError> {
    opts.validate()?;
    if opts.mc_size < 2 {
        return Err(FitError::Usage(format!(
            "Monte Carlo size must be >= 2, got {}",
            opts.mc_size
        )));
    }
    let steps = problem.cm_steps();
    if steps.iter().any(|s| !s.aug.augmented()) {
        return Err(FitError::Usage(
            "Monte Carlo cycles need every step on an augmentation".into(),
        ));
    }
    let mut mon = Monitor::begin(problem, theta0, 3.0 * opts.tol, false)?;
    let mut theta = theta0.clone();
    for iter in 1..=opts.max_iter {
        let draws: Vec<P::Stats> = (0..opts.mc_size)
            .map(|rep| {
                let seed = opts
                    .seed
                    .wrapping_add((iter as u64) * opts.mc_size as u64 + rep as u64);
                problem.impute_stats(&theta, seed)
            })
            .collect::<Result<_, _>>()?;
        let stats = problem.average_stats(&draws);
        for (k, step) in steps.iter().enumerate() {
            debug_assert!(step.aug.augmented());
            theta = problem.apply_step(&theta, k, Some(&stats))?;
        }
        if mon.record(problem, &theta, iter)? {
            break;
        }
    }
    Ok(mon.finish())
}

/// Outer cycle doing the expensive reconstruction once, inner EM cycles
/// doing the maximization against it.
pub fn run_nested_em<P: NestedProblem>(
    problem: &P,
    theta0: &P::Params,
    opts: &EmOptions,
) -> Result<Trace, FitError> {
    opts.validate()?;
    let mut mon = Monitor::begin(problem, theta0, opts.tol, true)?;
    let mut theta = theta0.clone();
    for iter in 1..=opts.max_iter {
        let outer = problem.outer_e_step(&theta)?;
        let mut inner_obj = problem.inner_objective(&theta, &outer)?;
        for _ in 0..opts.inner_iters {
            theta = problem.inner_cycle(&theta, &outer)?;
            let obj = problem.inner_objective(&theta, &outer)?;
            if obj < inner_obj - MONOTONE_SLACK {
                return Err(FitError::NonMonotone {
                    iter,
                    drop: inner_obj - obj,
                });
            }
            inner_obj = obj;
        }
        if mon.record(problem, &theta, iter)? {
            break;
        }
    }
    Ok(mon.finish())
}

/// Parameter-expanded EM: each iteration maximizes the expanded surrogate
/// jointly over the original block and the working parameter.
pub fn run_pxem<P: PxemProblem>(
    problem: &P,
    theta0: &P::Params,
    opts: &EmOptions,
) -> Result<Trace, FitError> {
    opts.validate()?;
    let mut mon = Monitor::begin(problem, theta0, opts.tol, true)?;
    let mut theta = theta0.clone();
    for iter in 1..=opts.max_iter {
        let up = problem.px_step(&theta)?;
        theta = up.params;
        if up.boundary {
            mon.trace.notes.push(format!(
                "iteration {iter}: expanded maximizer at the working-parameter boundary; used the profile limit"
            ));
        }
        if mon.record(problem, &theta, iter)? {
            break;
        }
    }
    Ok(mon.finish())
}

/// Geometric rate from the tail of a trace.
///
/// Distances to the converged point use a sup norm standardized by the
/// target's own scale. The estimate averages the last few distance ratios;
/// it is flagged unreliable unless at least five consecutive ratios agree
/// to a coefficient of variation under 0.2.
pub fn estimate_rate(trace: &Trace, theta_star: &[f64]) -> Result<RateEstimate, FitError> {
    if trace.rows.len() < 3 {
        return Err(FitError::Usage(
            "rate estimation needs at least two iterations".into(),
        ));
    }
    if theta_star.len() != trace.param_labels.len() {
        return Err(FitError::Usage(format!(
            "target has {} coordinates, trace has {}",
            theta_star.len(),
            trace.param_labels.len()
        )));
    }
    let dist = |params: &[f64]| -> f64 {
        params
            .iter()
            .zip(theta_star)
            .map(|(&p, &s)| (p - s).abs() / s.abs().max(1.0))
            .fold(0.0f64, f64::max)
    };
    let d: Vec<f64> = trace.rows.iter().map(|r| dist(&r.params)).collect();
    // Exact arrival at the target means the run converged in finitely many
    // steps; the geometric rate of the tail is zero.
    if d.iter().skip(1).any(|&v| v == 0.0) {
        return Ok(RateEstimate {
            rho_hat: 0.0,
            window: 0,
            cv: 0.0,
            reliable: true,
        });
    }
    let mut ratios: Vec<f64> = Vec::new();
    for t in 0..d.len() - 1 {
        // Ratios from the noise floor carry no signal.
        if d[t] > 1e-13 && d[t + 1] > 1e-15 {
            ratios.push(d[t + 1] / d[t]);
        }
    }
    let tail: Vec<f64> = ratios.iter().rev().take(10).rev().copied().collect();
    if tail.len() < 5 {
        let rho = tail.last().copied().unwrap_or(0.0).clamp(0.0, 1.0 - 1e-9);
        return Ok(RateEstimate {
            rho_hat: rho,
            window: tail.len(),
            cv: f64::INFINITY,
            reliable: false,
        });
    }
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let var = tail.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / tail.len() as f64;
    let cv = var.sqrt() / mean.abs().max(1e-300);
    let rho = mean.clamp(0.0, 1.0 - 1e-9);
    Ok(RateEstimate {
        rho_hat: rho,
        window: tail.len(),
        cv,
        reliable: cv < 0.2 && mean < 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn steps(levels: &[AugLevel]) -> Vec<CmStep> {
        levels
            .iter()
            .enumerate()
            .map(|(i, &aug)| CmStep::new(format!("block{i}"), aug))
            .collect()
    }

    #[test]
    fn ordering_accepts_nonincreasing_plans() {
        assert!(validate_ordering(&steps(&[AugLevel::Full])).is_ok());
        assert!(validate_ordering(&steps(&[AugLevel::Full, AugLevel::ObservedOnly])).is_ok());
        assert!(validate_ordering(&steps(&[
            AugLevel::Full,
            AugLevel::Full,
            AugLevel::Reduced,
            AugLevel::ObservedOnly
        ]))
        .is_ok());
    }

    #[test]
    fn ordering_rejects_direct_before_augmented() {
        let err = validate_ordering(&steps(&[AugLevel::ObservedOnly, AugLevel::Full]))
            .expect_err("must reject");
        assert_eq!((err.first, err.second), (0, 1));
        assert_eq!(err.first_label, "block0");
        assert_eq!(err.second_label, "block1");
    }

    #[test]
    fn ordering_rejects_return_to_full_after_direct() {
        let err = validate_ordering(&steps(&[
            AugLevel::Full,
            AugLevel::ObservedOnly,
            AugLevel::Full,
        ]))
        .expect_err("must reject");
        assert_eq!((err.first, err.second), (1, 2));
    }

    #[test]
    fn ordering_rejects_reduced_before_full() {
        let err = validate_ordering(&steps(&[AugLevel::Reduced, AugLevel::Full]))
            .expect_err("must reject");
        assert_eq!((err.first, err.second), (0, 1));
    }

    fn synthetic_trace(distances: &[f64]) -> Trace {
        Trace {
            param_labels: vec!["x".into()],
            rows: distances
                .iter()
                .enumerate()
                .map(|(t, &d)| TraceRow {
                    iter: t,
                    seconds: t as f64,
                    loglik: 0.0,
                    params: vec![10.0 + d],
                })
                .collect(),
            converged: true,
            notes: Vec::new(),
        }
    }

    #[test]
    fn rate_recovers_exact_geometric_decay() {
        let d: Vec<f64> = (0..15).map(|t| 0.8f64.powi(t)).collect();
        let est = estimate_rate(&synthetic_trace(&d), &[10.0]).unwrap();
        assert!(est.reliable, "exact decay should be reliable: {est:?}");
        assert!((est.rho_hat - 0.8).abs() < 1e-9, "rho {}", est.rho_hat);
    }

    #[test]
    fn rate_is_zero_for_finite_step_convergence() {
        let est = estimate_rate(&synthetic_trace(&[5.0, 0.0, 0.0]), &[10.0]).unwrap();
        assert_eq!(est.rho_hat, 0.0);
        assert!(est.reliable);
    }

    #[test]
    fn rate_flags_unstable_ratios_as_unreliable() {
        let d = [1.0, 0.9, 0.2, 0.18, 0.05, 0.045, 0.01, 0.009, 0.002, 0.0018];
        let est = estimate_rate(&synthetic_trace(&d), &[10.0]).unwrap();
        assert!(!est.reliable, "alternating ratios must be unreliable: {est:?}");
    }

    #[test]
    fn rate_requires_a_real_trace() {
        let r = estimate_rate(&synthetic_trace(&[1.0]), &[10.0]);
        assert!(matches!(r, Err(FitError::Usage(_))));
    }

    #[test]
    fn options_reject_nonpositive_tolerance() {
        let opts = EmOptions {
            tol: 0.0,
            ..EmOptions::default()
        };
        assert!(opts.validate().is_err());
        let opts = EmOptions {
            inner_iters: 0,
            ..EmOptions::default()
        };
        assert!(opts.validate().is_err());
    }
}
