//! Stochastic sampling drivers over problem contracts.
//!
//! The deterministic drivers in [`crate::em`] have stochastic counterparts
//! here: the two-step augmentation chain swaps the E-step for a draw of the
//! latent data and the M-step for a draw from the conditional posterior,
//! and the multi-block variants cycle conditional draws the way ECM cycles
//! conditional maximizations. A plan names which variables each step draws,
//! conditions on, and integrates out; runners execute plans against a
//! problem that knows how to realize each conditional.
//!
//! Partially collapsed plans are validated structurally before they run.
//! Integrating a variable out of one step leaves its stored value stale, so
//! a later step conditioning on it, or a cycle ending before it is redrawn,
//! silently changes the stationary distribution. That failure mode is easy
//! to write down and expensive to notice from output, so the validator
//! rejects it up front; an unchecked runner exists to demonstrate the
//! damage deliberately.
//!
//! Chains carry their seed and burn-in; diagnostics (autocorrelations,
//! effective sample size, moment summaries) are computed on the post
//! burn-in draws only.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{PlanViolation, SamplerError};

/// One conditional draw of a sampling cycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanStep {
    pub draws: Vec<String>,
    pub conditions_on: Vec<String>,
    pub marginalizes_out: Vec<String>,
}

impl PlanStep {
    pub fn new<S: Into<String>>(
        draws: Vec<S>,
        conditions_on: Vec<S>,
        marginalizes_out: Vec<S>,
    ) -> Self {
        PlanStep {
            draws: draws.into_iter().map(Into::into).collect(),
            conditions_on: conditions_on.into_iter().map(Into::into).collect(),
            marginalizes_out: marginalizes_out.into_iter().map(Into::into).collect(),
        }
    }

    /// Parse one step from `draw:<vars> given:<vars> marg:<vars>` with
    /// comma-separated variable lists; `given` and `marg` may be omitted.
    pub fn parse(line: &str) -> Result<Self, SamplerError> {
        let mut draws = None;
        let mut given = None;
        let mut marg = None;
        for token in line.split_whitespace() {
            let (key, list) = token.split_once(':').ok_or_else(|| {
                SamplerError::Usage(format!(
                    "plan token `{token}` is not of the form key:vars"
                ))
            })?;
            let vars: Vec<String> = list
                .split(',')
                .filter(|v| !v.is_empty())
                .map(str::to_owned)
                .collect();
            let slot = match key {
                "draw" => &mut draws,
                "given" => &mut given,
                "marg" => &mut marg,
                _ => {
                    return Err(SamplerError::Usage(format!(
                        "unknown plan key `{key}` (expected draw, given, or marg)"
                    )))
                }
            };
            if slot.replace(vars).is_some() {
                return Err(SamplerError::Usage(format!(
                    "plan key `{key}` given twice in one step"
                )));
            }
        }
        let draws = draws
            .filter(|d: &Vec<String>| !d.is_empty())
            .ok_or_else(|| {
                SamplerError::Usage("every plan step needs a nonempty draw list".into())
            })?;
        Ok(PlanStep {
            draws,
            conditions_on: given.unwrap_or_default(),
            marginalizes_out: marg.unwrap_or_default(),
        })
    }
}

/// Ordered conditional-draw steps forming one cycle of a sampler.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplerPlan {
    pub steps: Vec<PlanStep>,
}

impl SamplerPlan {
    pub fn new(steps: Vec<PlanStep>) -> Self {
        SamplerPlan { steps }
    }

    /// Parse a plan from text, one step per line. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self, SamplerError> {
        let mut steps = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let step = PlanStep::parse(line).map_err(|e| match e {
                SamplerError::Usage(msg) => {
                    SamplerError::Usage(format!("plan line {}: {msg}", k + 1))
                }
                other => other,
            })?;
            steps.push(step);
        }
        if steps.is_empty() {
            return Err(SamplerError::Usage("the plan has no steps".into()));
        }
        Ok(SamplerPlan { steps })
    }

    /// The full-conditional Gibbs plan over `vars`: one step per variable,
    /// in order, each conditioning on all the others.
    pub fn full_conditionals(vars: &[&str]) -> Self {
        let steps = vars
            .iter()
            .map(|&v| {
                PlanStep::new(
                    vec![v],
                    vars.iter().copied().filter(|&o| o != v).collect(),
                    vec![],
                )
            })
            .collect();
        SamplerPlan { steps }
    }

    /// Every variable the plan mentions, in first-appearance order.
    pub fn variables(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for step in &self.steps {
            for v in step
                .draws
                .iter()
                .chain(&step.conditions_on)
                .chain(&step.marginalizes_out)
            {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
        }
        out
    }

    fn has_marginalization(&self) -> Option<usize> {
        self.steps
            .iter()
            .position(|s| !s.marginalizes_out.is_empty())
    }
}

/// Structural soundness check for a partially collapsed plan.
///
/// A plan passes when it could have been derived from a full-conditional
/// cycle by marginalizing, permuting, and trimming: every step accounts for
/// every variable exactly once, every variable is drawn somewhere, and a
/// variable integrated out of a step is redrawn later in the same cycle
/// before anything conditions on it. The recorded state is the cycle-end
/// state, so "later" does not wrap around.
pub fn validate_pcg_plan(plan: &SamplerPlan) -> Result<(), PlanViolation> {
    let universe = plan.variables();
    for (k, step) in plan.steps.iter().enumerate() {
        for (a, fa, b, fb) in [
            (&step.draws, "draw", &step.conditions_on, "given"),
            (&step.draws, "draw", &step.marginalizes_out, "marg"),
            (&step.conditions_on, "given", &step.marginalizes_out, "marg"),
        ] {
            if let Some(v) = a.iter().find(|v| b.contains(v)) {
                return Err(PlanViolation::Overlap {
                    step: k,
                    var: v.clone(),
                    field_a: fa,
                    field_b: fb,
                });
            }
        }
        for v in &universe {
            let mentioned = step.draws.contains(v)
                || step.conditions_on.contains(v)
                || step.marginalizes_out.contains(v);
            if !mentioned {
                return Err(PlanViolation::Incomplete {
                    step: k,
                    var: v.clone(),
                });
            }
        }
    }
    for v in &universe {
        if !plan.steps.iter().any(|s| s.draws.contains(v)) {
            return Err(PlanViolation::NotCovered { var: v.clone() });
        }
    }
    for (j, step) in plan.steps.iter().enumerate() {
        'var: for v in &step.marginalizes_out {
            for (k, later) in plan.steps.iter().enumerate().skip(j + 1) {
                if later.draws.contains(v) {
                    continue 'var;
                }
                if later.conditions_on.contains(v) {
                    return Err(PlanViolation::StaleConditioning {
                        var: v.clone(),
                        marginalizing_step: j,
                        conditioning_step: k,
                    });
                }
            }
            return Err(PlanViolation::StaleAtCycleEnd {
                var: v.clone(),
                marginalizing_step: j,
            });
        }
    }
    Ok(())
}

/// A plan may use only variables the problem knows, and must draw each of
/// them somewhere in the cycle.
fn check_plan_coverage(plan: &SamplerPlan, known: &[String]) -> Result<(), SamplerError> {
    for (k, step) in plan.steps.iter().enumerate() {
        for v in step
            .draws
            .iter()
            .chain(&step.conditions_on)
            .chain(&step.marginalizes_out)
        {
            if !known.contains(v) {
                return Err(PlanViolation::UnknownVariable {
                    step: k,
                    var: v.clone(),
                }
                .into());
            }
        }
    }
    for v in known {
        if !plan.steps.iter().any(|s| s.draws.contains(v)) {
            return Err(PlanViolation::NotCovered { var: v.clone() }.into());
        }
    }
    Ok(())
}

/// A recorded chain: one row of variable values per iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub labels: Vec<String>,
    /// iterations x variables.
    pub draws: Vec<Vec<f64>>,
    pub seed: u64,
    pub burn_in: usize,
}

impl ChainOutput {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Rows after burn-in, the ones diagnostics are computed from.
    pub fn post_burn(&self) -> &[Vec<f64>] {
        &self.draws[self.burn_in..]
    }

    /// Post burn-in values of one variable.
    pub fn post_burn_column(&self, var: usize) -> Vec<f64> {
        self.post_burn().iter().map(|row| row[var]).collect()
    }
}

/// Default burn-in: the first fifth of the run.
fn default_burn_in(iters: usize) -> usize {
    iters / 5
}

fn check_iters(iters: usize) -> Result<(), SamplerError> {
    if iters < 1 {
        return Err(SamplerError::Usage("iteration count must be >= 1".into()));
    }
    Ok(())
}

fn check_row_finite(row: &[f64], iter: usize) -> Result<(), SamplerError> {
    if row.iter().any(|v| !v.is_finite()) {
        return Err(SamplerError::NonFinite { iter });
    }
    Ok(())
}

/// Two-step augmentation chains: alternate a draw of the latent data given
/// the parameters with a draw of the parameters given the completed data.
///
/// Implementations may carry tuning state (adaptive proposal scales), which
/// is why the drawing methods take `&mut self`. Any adaptation must be
/// finished within the burn-in so the recorded tail is a fixed kernel.
pub trait DaProblem {
    type Params: Clone;
    type Aug;

    fn labels(&self) -> Vec<String>;
    fn param_vector(&self, params: &Self::Params) -> Vec<f64>;
    fn impute(
        &mut self,
        params: &Self::Params,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self::Aug, SamplerError>;
    /// Draw from (or take one kernel step toward) the parameter
    /// conditional given the completed data. `params` is the current
    /// iterate; an exact conjugate draw ignores it, a Metropolis step
    /// starts from it.
    fn draw_params(
        &mut self,
        params: &Self::Params,
        aug: &Self::Aug,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self::Params, SamplerError>;
}

/// The two-step chain: latent draw, then parameter draw, recorded once per
/// iteration.
pub fn run_da<P: DaProblem>(
    problem: &mut P,
    start: &P::Params,
    iters: usize,
    seed: u64,
) -> Result<ChainOutput, SamplerError> {
    check_iters(iters)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = start.clone();
    let mut draws = Vec::with_capacity(iters);
    for iter in 0..iters {
        let aug = problem.impute(&params, &mut rng)?;
        params = problem.draw_params(&params, &aug, &mut rng)?;
        let row = problem.param_vector(&params);
        check_row_finite(&row, iter)?;
        draws.push(row);
    }
    Ok(ChainOutput {
        labels: problem.labels(),
        draws,
        seed,
        burn_in: default_burn_in(iters),
    })
}

/// Multi-block problems: a state, a set of named variables, and the ability
/// to realize any plan step's conditional draw in place.
pub trait PlanProblem {
    type State: Clone;

    /// Names a plan may draw, condition on, or marginalize out.
    fn variables(&self) -> Vec<String>;
    /// Column labels of the recorded chain (may be finer grained than the
    /// block variables).
    fn labels(&self) -> Vec<String>;
    fn record(&self, state: &Self::State) -> Vec<f64>;
    /// Execute step `index` of the plan on `state`. Must fail with
    /// [`SamplerError::MissingConditional`] when the requested conditional
    /// is not available rather than silently substituting another.
    fn draw_step(
        &mut self,
        index: usize,
        step: &PlanStep,
        state: &mut Self::State,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), SamplerError>;
}

fn run_plan_cycles<P: PlanProblem>(
    problem: &mut P,
    plan: &SamplerPlan,
    start: &P::State,
    iters: usize,
    seed: u64,
    inner_n: usize,
) -> Result<ChainOutput, SamplerError> {
    check_iters(iters)?;
    check_plan_coverage(plan, &problem.variables())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = start.clone();
    let mut draws = Vec::with_capacity(iters);
    for iter in 0..iters {
        if inner_n == 1 {
            for (k, step) in plan.steps.iter().enumerate() {
                problem.draw_step(k, step, &mut state, &mut rng)?;
            }
        } else {
            problem.draw_step(0, &plan.steps[0], &mut state, &mut rng)?;
            for _ in 0..inner_n {
                for (k, step) in plan.steps.iter().enumerate().skip(1) {
                    problem.draw_step(k, step, &mut state, &mut rng)?;
                }
            }
        }
        let row = problem.record(&state);
        check_row_finite(&row, iter)?;
        draws.push(row);
    }
    Ok(ChainOutput {
        labels: problem.labels(),
        draws,
        seed,
        burn_in: default_burn_in(iters),
    })
}

/// Cycle the plan's full conditionals in order. The plan may not
/// marginalize anything out; that is what [`run_pcg`] is for.
pub fn run_gibbs<P: PlanProblem>(
    problem: &mut P,
    plan: &SamplerPlan,
    start: &P::State,
    iters: usize,
    seed: u64,
) -> Result<ChainOutput, SamplerError> {
    if let Some(k) = plan.has_marginalization() {
        return Err(SamplerError::Usage(format!(
            "step {k} marginalizes variables out; use the partially collapsed runner"
        )));
    }
    run_plan_cycles(problem, plan, start, iters, seed, 1)
}

/// One pass of the first (expensive) step, then `inner_n` passes of the
/// remaining steps, per recorded iteration. The stationary distribution is
/// the same for every `inner_n >= 1`; what changes is how much the cheap
/// blocks mix per expensive draw.
pub fn run_partially_blocked<P: PlanProblem>(
    problem: &mut P,
    plan: &SamplerPlan,
    inner_n: usize,
    start: &P::State,
    iters: usize,
    seed: u64,
) -> Result<ChainOutput, SamplerError> {
    if inner_n < 1 {
        return Err(SamplerError::Usage(
            "inner repetition count must be >= 1".into(),
        ));
    }
    if plan.steps.len() < 2 {
        return Err(SamplerError::Usage(
            "partial blocking needs an expensive first step and an inner cycle".into(),
        ));
    }
    if let Some(k) = plan.has_marginalization() {
        return Err(SamplerError::Usage(format!(
            "step {k} marginalizes variables out; use the partially collapsed runner"
        )));
    }
    run_plan_cycles(problem, plan, start, iters, seed, inner_n)
}

/// Validate, then execute a partially collapsed plan.
pub fn run_pcg<P: PlanProblem>(
    problem: &mut P,
    plan: &SamplerPlan,
    start: &P::State,
    iters: usize,
    seed: u64,
) -> Result<ChainOutput, SamplerError> {
    validate_pcg_plan(plan)?;
    run_plan_cycles(problem, plan, start, iters, seed, 1)
}

/// [`run_pcg`] without the validation. Exists so the damage an invalid
/// plan does to the stationary distribution can be demonstrated; never a
/// production path.
pub fn run_pcg_unchecked<P: PlanProblem>(
    problem: &mut P,
    plan: &SamplerPlan,
    start: &P::State,
    iters: usize,
    seed: u64,
) -> Result<ChainOutput, SamplerError> {
    run_plan_cycles(problem, plan, start, iters, seed, 1)
}

/// Proper working prior for marginal augmentation: the expansion parameter
/// is centered at its identity value with spread `tau`, and `tau = 0` is
/// the point mass that degenerates to the plain two-step chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkingPrior {
    tau: f64,
}

impl WorkingPrior {
    pub fn normal(tau: f64) -> Result<Self, SamplerError> {
        if !tau.is_finite() || tau < 0.0 {
            return Err(SamplerError::ImproperWorkingPrior(format!(
                "working spread must be finite and nonnegative, got {tau}"
            )));
        }
        Ok(WorkingPrior { tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

/// Problems exposing the expanded two-step scheme: draw the working value
/// and the transformed augmentation given the parameters, then the
/// parameters jointly with the working value given that augmentation.
pub trait MarginalAugProblem {
    type Params: Clone;

    fn labels(&self) -> Vec<String>;
    fn param_vector(&self, params: &Self::Params) -> Vec<f64>;
    /// One transition at working spread `tau`. At `tau = 0` this must
    /// consume randomness exactly like the plain two-step chain so the
    /// degeneracy is bit-for-bit.
    fn expanded_transition(
        &mut self,
        params: &Self::Params,
        tau: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self::Params, SamplerError>;
}

/// The expanded chain: average over the working parameter instead of
/// fixing it, which can only improve mixing on the problems it applies to.
pub fn run_marginal_aug<P: MarginalAugProblem>(
    problem: &mut P,
    prior: &WorkingPrior,
    start: &P::Params,
    iters: usize,
    seed: u64,
) -> Result<ChainOutput, SamplerError> {
    check_iters(iters)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = start.clone();
    let mut draws = Vec::with_capacity(iters);
    for iter in 0..iters {
        params = problem.expanded_transition(&params, prior.tau, &mut rng)?;
        let row = problem.param_vector(&params);
        check_row_finite(&row, iter)?;
        draws.push(row);
    }
    Ok(ChainOutput {
        labels: problem.labels(),
        draws,
        seed,
        burn_in: default_burn_in(iters),
    })
}

/// A scalar summary of the state for autocorrelation screening.
pub struct TestFunction {
    pub label: String,
    pub f: Box<dyn Fn(&[f64]) -> f64>,
}

impl TestFunction {
    pub fn new(label: impl Into<String>, f: impl Fn(&[f64]) -> f64 + 'static) -> Self {
        TestFunction {
            label: label.into(),
            f: Box::new(f),
        }
    }

    /// One test function per coordinate.
    pub fn coordinates(labels: &[String]) -> Vec<TestFunction> {
        labels
            .iter()
            .enumerate()
            .map(|(k, l)| TestFunction::new(l.clone(), move |row: &[f64]| row[k]))
            .collect()
    }
}

/// Post burn-in chain summaries.
#[derive(Debug, Clone)]
pub struct Diagnostics {
    pub labels: Vec<String>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Per variable, lags 0..=max_lag; lag 0 is exactly 1.
    pub autocorr: Vec<Vec<f64>>,
    /// Initial-positive-sequence estimate, `None` for a constant chain.
    pub ess: Vec<Option<f64>>,
    /// Largest lag-one autocorrelation over the supplied test functions;
    /// `None` when no function has positive variance.
    pub max_lag1: Option<f64>,
}

fn autocovariances(series: &[f64], max_lag: usize) -> (f64, Vec<f64>) {
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let gamma: Vec<f64> = (0..=max_lag)
        .map(|k| {
            centered[..n - k]
                .iter()
                .zip(&centered[k..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / n as f64
        })
        .collect();
    (mean, gamma)
}

fn lag1_autocorr(series: &[f64]) -> Option<f64> {
    let (_, gamma) = autocovariances(series, 1);
    if gamma[0] > 0.0 {
        Some(gamma[1] / gamma[0])
    } else {
        None
    }
}

/// Geyer's initial positive sequence: accumulate paired autocorrelations
/// while the pair sums stay positive.
fn ess_ips(rho: &[f64], n: usize) -> f64 {
    let mut tau = 0.0;
    let mut m = 0;
    while 2 * m + 1 < rho.len() {
        let pair = rho[2 * m] + rho[2 * m + 1];
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        m += 1;
    }
    tau -= 1.0;
    // tau can dip below 1 for antithetic chains; the estimate stays capped
    // at the sample size either way.
    (n as f64 / tau.max(1e-12)).min(n as f64)
}

/// Summaries of the post burn-in draws, per variable and over a screening
/// family of scalar test functions.
pub fn diagnostics(
    chain: &ChainOutput,
    test_functions: &[TestFunction],
) -> Result<Diagnostics, SamplerError> {
    if chain.len() <= chain.burn_in + 10 {
        return Err(SamplerError::Usage(format!(
            "chain of length {} is too short for diagnostics past burn-in {}",
            chain.len(),
            chain.burn_in
        )));
    }
    let post = chain.post_burn();
    let n = post.len();
    let report_lags = (n / 5).clamp(1, 50);
    let ess_lags = (n.saturating_sub(2)).min(2000);
    let k_vars = chain.labels.len();
    let mut mean = Vec::with_capacity(k_vars);
    let mut variance = Vec::with_capacity(k_vars);
    let mut autocorr = Vec::with_capacity(k_vars);
    let mut ess = Vec::with_capacity(k_vars);
    for v in 0..k_vars {
        let series: Vec<f64> = post.iter().map(|row| row[v]).collect();
        let (m, gamma) = autocovariances(&series, ess_lags.max(report_lags));
        mean.push(m);
        variance.push(gamma[0]);
        if gamma[0] > 0.0 {
            autocorr.push((0..=report_lags).map(|k| gamma[k] / gamma[0]).collect());
            let rho: Vec<f64> = gamma.iter().map(|g| g / gamma[0]).collect();
            ess.push(Some(ess_ips(&rho, n)));
        } else {
            let mut flat = vec![0.0; report_lags + 1];
            flat[0] = 1.0;
            autocorr.push(flat);
            ess.push(None);
        }
    }
    let max_lag1 = test_functions
        .iter()
        .filter_map(|t| {
            let series: Vec<f64> = post.iter().map(|row| (t.f)(row)).collect();
            lag1_autocorr(&series)
        })
        .fold(None, |acc: Option<f64>, r| {
            Some(acc.map_or(r, |a| a.max(r)))
        });
    Ok(Diagnostics {
        labels: chain.labels.clone(),
        mean,
        variance,
        autocorr,
        ess,
        max_lag1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand_distr::StandardNormal;

    #[test]
    fn plan_parsing_round_trips_the_step_structure() {
        let plan = SamplerPlan::parse(
            "# two-block collapse\n\
             draw:theta marg:psi\n\
             \n\
             draw:psi given:theta\n",
        )
        .unwrap();
        assert_eq!(plan.steps.len(), 2);
        assert_eq!(plan.steps[0].draws, vec!["theta"]);
        assert_eq!(plan.steps[0].marginalizes_out, vec!["psi"]);
        assert_eq!(plan.steps[1].conditions_on, vec!["theta"]);
        assert_eq!(plan.variables(), vec!["theta", "psi"]);
    }

    #[test]
    fn plan_parsing_rejects_malformed_lines() {
        for bad in [
            "draw:",
            "given:a",
            "draw:a draw:b",
            "draw:a blocked:b",
            "justwords",
        ] {
            assert!(
                SamplerPlan::parse(bad).is_err(),
                "`{bad}` should not parse"
            );
        }
        assert!(SamplerPlan::parse("# only a comment\n").is_err());
    }

    #[test]
    fn full_conditional_plans_validate() {
        let plan = SamplerPlan::full_conditionals(&["a", "b", "c"]);
        assert_eq!(plan.steps.len(), 3);
        validate_pcg_plan(&plan).unwrap();
    }

    #[test]
    fn wrong_order_collapse_is_rejected_at_cycle_end() {
        // Drawing psi against the old theta and then refreshing theta
        // marginally leaves the recorded pair mismatched: its law is the
        // product of the marginals, not the joint.
        let plan = SamplerPlan::new(vec![
            PlanStep::new(vec!["psi"], vec!["theta"], vec![]),
            PlanStep::new(vec!["theta"], vec![], vec!["psi"]),
        ]);
        let err = validate_pcg_plan(&plan).unwrap_err();
        assert!(matches!(
            err,
            PlanViolation::StaleAtCycleEnd { ref var, marginalizing_step: 1 } if var == "psi"
        ));
    }

    #[test]
    fn blocking_order_of_the_same_steps_is_accepted() {
        let plan = SamplerPlan::new(vec![
            PlanStep::new(vec!["theta"], vec![], vec!["psi"]),
            PlanStep::new(vec!["psi"], vec!["theta"], vec![]),
        ]);
        validate_pcg_plan(&plan).unwrap();
    }

    #[test]
    fn conditioning_on_a_stale_variable_is_rejected() {
        let plan = SamplerPlan::new(vec![
            PlanStep::new(vec!["a"], vec!["c"], vec!["b"]),
            PlanStep::new(vec!["c"], vec!["a", "b"], vec![]),
            PlanStep::new(vec!["b"], vec!["a", "c"], vec![]),
        ]);
        let err = validate_pcg_plan(&plan).unwrap_err();
        assert!(matches!(
            err,
            PlanViolation::StaleConditioning {
                ref var,
                marginalizing_step: 0,
                conditioning_step: 1,
            } if var == "b"
        ));
    }

    #[test]
    fn incomplete_and_uncovered_plans_are_rejected() {
        let unmentioned = SamplerPlan::new(vec![
            PlanStep::new(vec!["a"], vec!["b"], vec![]),
            PlanStep::new(vec!["b"], vec![], vec![]),
        ]);
        assert!(matches!(
            validate_pcg_plan(&unmentioned).unwrap_err(),
            PlanViolation::Incomplete { step: 1, ref var } if var == "a"
        ));
        let never_drawn = SamplerPlan::new(vec![PlanStep::new(
            vec!["a"],
            vec!["b"],
            vec![],
        )]);
        assert!(matches!(
            validate_pcg_plan(&never_drawn).unwrap_err(),
            PlanViolation::NotCovered { ref var } if var == "b"
        ));
        let overlap = SamplerPlan::new(vec![PlanStep::new(
            vec!["a"],
            vec!["a"],
            vec![],
        )]);
        assert!(matches!(
            validate_pcg_plan(&overlap).unwrap_err(),
            PlanViolation::Overlap { step: 0, .. }
        ));
    }

    #[test]
    fn working_prior_refuses_improper_spreads() {
        assert!(WorkingPrior::normal(0.0).is_ok());
        assert!(WorkingPrior::normal(2.5).is_ok());
        for bad in [-1.0, f64::INFINITY, f64::NAN] {
            assert!(matches!(
                WorkingPrior::normal(bad),
                Err(SamplerError::ImproperWorkingPrior(_))
            ));
        }
    }

    fn synthetic_chain(rows: Vec<Vec<f64>>, burn_in: usize) -> ChainOutput {
        ChainOutput {
            labels: (0..rows[0].len()).map(|k| format!("v{k}")).collect(),
            draws: rows,
            seed: 0,
            burn_in,
        }
    }

    #[test]
    fn iid_chain_diagnostics() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..20_000)
            .map(|_| vec![rng.sample::<f64, _>(StandardNormal)])
            .collect();
        let chain = synthetic_chain(rows, 1000);
        let d = diagnostics(&chain, &TestFunction::coordinates(&chain.labels)).unwrap();
        assert_abs_diff_eq!(d.autocorr[0][0], 1.0, epsilon = 0.0);
        assert!(d.autocorr[0][1].abs() < 0.03);
        let ess = d.ess[0].unwrap();
        let n = chain.post_burn().len() as f64;
        assert!(ess > 0.9 * n && ess <= n, "ess {ess} of {n}");
        assert!(d.max_lag1.unwrap().abs() < 0.03);
        assert_abs_diff_eq!(d.mean[0], 0.0, epsilon = 0.05);
        assert_abs_diff_eq!(d.variance[0], 1.0, epsilon = 0.05);
    }

    #[test]
    fn ar1_chain_matches_the_closed_form_sample_size() {
        let phi: f64 = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut x = 0.0;
        let rows: Vec<Vec<f64>> = (0..60_000)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                x = phi * x + z;
                vec![x]
            })
            .collect();
        let chain = synthetic_chain(rows, 5000);
        let d = diagnostics(&chain, &[]).unwrap();
        assert_abs_diff_eq!(d.autocorr[0][1], phi, epsilon = 0.03);
        assert_abs_diff_eq!(d.autocorr[0][2], phi * phi, epsilon = 0.03);
        let n = chain.post_burn().len() as f64;
        let expect = n * (1.0 - phi) / (1.0 + phi);
        let ess = d.ess[0].unwrap();
        assert!(
            (ess / expect - 1.0).abs() < 0.15,
            "ess {ess}, closed form {expect}"
        );
        assert!(d.max_lag1.is_none(), "no test functions were supplied");
    }

    #[test]
    fn constant_chains_are_flagged_not_crashed() {
        let rows = vec![vec![3.0, 1.0]; 200]
            .into_iter()
            .enumerate()
            .map(|(t, mut r)| {
                r[1] = (t % 7) as f64;
                r
            })
            .collect();
        let chain = synthetic_chain(rows, 20);
        let d = diagnostics(&chain, &TestFunction::coordinates(&chain.labels)).unwrap();
        assert!(d.ess[0].is_none(), "constant coordinate must be flagged");
        assert!(d.ess[1].is_some());
        assert_abs_diff_eq!(d.autocorr[0][0], 1.0, epsilon = 0.0);
        assert_abs_diff_eq!(d.autocorr[0][1], 0.0, epsilon = 0.0);
        // The screening maximum ignores the constant coordinate.
        assert!(d.max_lag1.is_some());
    }

    #[test]
    fn diagnostics_demand_room_past_burn_in() {
        let chain = synthetic_chain(vec![vec![0.0]; 12], 5);
        assert!(matches!(
            diagnostics(&chain, &[]),
            Err(SamplerError::Usage(_))
        ));
    }
}
