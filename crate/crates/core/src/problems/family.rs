//! Plan-driven sampling binding for the correlated Gaussian family.
//!
//! Every conditional a plan can ask for exists in closed form here, and
//! dropping a coordinate from a step is the exact marginalization, so this
//! binding exercises the whole plan grammar: full-conditional cycles,
//! partial blocking, and collapsed steps, with analytic mixing rates to
//! test against.

use rand_chacha::ChaCha8Rng;

use crate::error::SamplerError;
use crate::sampler::{PlanProblem, PlanStep};
use crate::toys::GaussianFamilyToy;

/// The family as a sampling target with coordinates named `x0`, `x1`, ...
#[derive(Debug, Clone)]
pub struct FamilySampler {
    pub family: GaussianFamilyToy,
}

impl FamilySampler {
    fn coordinate(&self, name: &str, step: usize) -> Result<usize, SamplerError> {
        name.strip_prefix('x')
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&i| i < self.family.dim())
            .ok_or_else(|| SamplerError::MissingConditional {
                step,
                detail: format!("no coordinate named `{name}`"),
            })
    }
}

impl PlanProblem for FamilySampler {
    type State = Vec<f64>;

    fn variables(&self) -> Vec<String> {
        (0..self.family.dim()).map(|k| format!("x{k}")).collect()
    }

    fn labels(&self) -> Vec<String> {
        self.variables()
    }

    fn record(&self, state: &Vec<f64>) -> Vec<f64> {
        state.clone()
    }

    /// Draw the step's coordinates from their exact conditional given the
    /// stored values of the conditioned-on coordinates. Marginalized
    /// coordinates are simply left out of the conditioning, which is the
    /// exact collapse for a Gaussian.
    fn draw_step(
        &mut self,
        index: usize,
        step: &PlanStep,
        state: &mut Vec<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), SamplerError> {
        let draw: Vec<usize> = step
            .draws
            .iter()
            .map(|v| self.coordinate(v, index))
            .collect::<Result<_, _>>()?;
        let given: Vec<(usize, f64)> = step
            .conditions_on
            .iter()
            .map(|v| self.coordinate(v, index).map(|i| (i, state[i])))
            .collect::<Result<_, _>>()?;
        let block = self.family.conditional(&draw, &given)?;
        let values = block.draw(rng);
        for (&i, v) in draw.iter().zip(values) {
            state[i] = v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::PlanViolation;
    use crate::sampler::{
        diagnostics, run_gibbs, run_partially_blocked, run_pcg, run_pcg_unchecked,
        validate_pcg_plan, SamplerPlan, TestFunction,
    };
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn corr(chain: &crate::sampler::ChainOutput, a: usize, b: usize) -> f64 {
        let xa = chain.post_burn_column(a);
        let xb = chain.post_burn_column(b);
        let n = xa.len() as f64;
        let ma = xa.iter().sum::<f64>() / n;
        let mb = xb.iter().sum::<f64>() / n;
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for (x, y) in xa.iter().zip(&xb) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn two_block_cycle_mixes_at_the_squared_correlation() {
        let rho: f64 = 0.9;
        let mut problem = FamilySampler {
            family: GaussianFamilyToy::bivariate(rho).unwrap(),
        };
        let plan = SamplerPlan::full_conditionals(&["x0", "x1"]);
        let chain = run_gibbs(&mut problem, &plan, &vec![3.0, -3.0], 60_000, 17).unwrap();
        let d = diagnostics(&chain, &TestFunction::coordinates(&chain.labels)).unwrap();
        // Each coordinate's subchain is AR(1) with coefficient rho^2.
        assert_abs_diff_eq!(d.autocorr[0][1], rho * rho, epsilon = 0.02);
        assert_abs_diff_eq!(d.autocorr[1][1], rho * rho, epsilon = 0.02);
        assert_abs_diff_eq!(corr(&chain, 0, 1), rho, epsilon = 0.02);
        for k in 0..2 {
            let se = (d.variance[k] / d.ess[k].unwrap()).sqrt();
            assert_abs_diff_eq!(d.mean[k], 0.0, epsilon = 4.0 * se);
            assert_abs_diff_eq!(d.variance[k], 1.0, epsilon = 0.06);
        }
    }

    #[test]
    fn single_block_cycle_is_direct_sampling() {
        let family = GaussianFamilyToy::bivariate(0.7).unwrap();
        let mut problem = FamilySampler {
            family: family.clone(),
        };
        let plan = SamplerPlan::parse("draw:x0,x1").unwrap();
        let chain = run_gibbs(&mut problem, &plan, &vec![0.0, 0.0], 400, 23).unwrap();
        // Same block, same seed, drawn directly: bit for bit equal.
        let block = family.marginal(&[0, 1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for row in &chain.draws {
            assert_eq!(*row, block.draw(&mut rng));
        }
        let d = diagnostics(&chain, &[]).unwrap();
        assert!(d.autocorr[0][1].abs() < 0.1);
    }

    #[test]
    fn gibbs_refuses_marginalizing_plans_and_unknown_names() {
        let mut problem = FamilySampler {
            family: GaussianFamilyToy::bivariate(0.5).unwrap(),
        };
        let collapsed = SamplerPlan::parse("draw:x0 marg:x1\ndraw:x1 given:x0").unwrap();
        assert!(matches!(
            run_gibbs(&mut problem, &collapsed, &vec![0.0, 0.0], 100, 1),
            Err(SamplerError::Usage(_))
        ));
        let unknown = SamplerPlan::parse("draw:x0 given:x9\ndraw:x9").unwrap();
        assert!(matches!(
            run_gibbs(&mut problem, &unknown, &vec![0.0, 0.0], 100, 1),
            Err(SamplerError::Plan(PlanViolation::UnknownVariable { .. }))
        ));
        let partial = SamplerPlan::parse("draw:x0 given:x1").unwrap();
        assert!(matches!(
            run_gibbs(&mut problem, &partial, &vec![0.0, 0.0], 100, 1),
            Err(SamplerError::Plan(PlanViolation::NotCovered { .. }))
        ));
    }

    #[test]
    fn one_inner_pass_reproduces_the_plain_cycle_bit_for_bit() {
        let plan = SamplerPlan::full_conditionals(&["x0", "x1", "x2"]);
        let family = GaussianFamilyToy::trivariate(0.3, 0.3, 0.95).unwrap();
        let start = vec![1.0, 1.0, 1.0];
        let a = run_gibbs(
            &mut FamilySampler { family: family.clone() },
            &plan,
            &start,
            2_000,
            5,
        )
        .unwrap();
        let b = run_partially_blocked(
            &mut FamilySampler { family },
            &plan,
            1,
            &start,
            2_000,
            5,
        )
        .unwrap();
        assert_eq!(a.draws, b.draws);
    }

    #[test]
    fn inner_repetition_buys_effective_draws_when_the_inner_pair_is_slow() {
        // x1 and x2 stay highly correlated given x0, so the inner pair is
        // the mixing bottleneck; x0 is cast as the expensive step.
        let family = GaussianFamilyToy::trivariate(0.3, 0.3, 0.95).unwrap();
        let plan = SamplerPlan::full_conditionals(&["x0", "x1", "x2"]);
        let iters = 40_000;
        let mut ess = Vec::new();
        for inner_n in [1usize, 5] {
            let chain = run_partially_blocked(
                &mut FamilySampler { family: family.clone() },
                &plan,
                inner_n,
                &vec![0.0, 0.0, 0.0],
                iters,
                29,
            )
            .unwrap();
            let d = diagnostics(&chain, &[]).unwrap();
            for k in 0..3 {
                let se = (d.variance[k] / d.ess[k].unwrap()).sqrt();
                assert_abs_diff_eq!(d.mean[k], 0.0, epsilon = 4.0 * se);
            }
            ess.push(d.ess[1].unwrap().min(d.ess[2].unwrap()));
        }
        // Charge the expensive step 1 and each inner conditional 0.005:
        // five inner passes cost 5% more and should buy far more than 5%.
        let cost = |inner_n: f64| 1.0 + inner_n * 2.0 * 0.005;
        assert!(
            ess[1] / cost(5.0) > 1.5 * ess[0] / cost(1.0),
            "inner ess {} vs {}",
            ess[1],
            ess[0]
        );
    }

    #[test]
    fn collapsed_cycle_in_the_wrong_order_breaks_the_joint() {
        let rho: f64 = 0.9;
        let family = GaussianFamilyToy::bivariate(rho).unwrap();
        // x1 against the stale x0, then x0 refreshed marginally: each
        // recorded pair mixes draws from different cycles.
        let wrong = SamplerPlan::parse("draw:x1 given:x0\ndraw:x0 marg:x1").unwrap();
        assert!(matches!(
            validate_pcg_plan(&wrong),
            Err(PlanViolation::StaleAtCycleEnd { .. })
        ));
        assert!(matches!(
            run_pcg(
                &mut FamilySampler { family: family.clone() },
                &wrong,
                &vec![0.0, 0.0],
                100,
                3
            ),
            Err(SamplerError::Plan(PlanViolation::StaleAtCycleEnd { .. }))
        ));
        let chain = run_pcg_unchecked(
            &mut FamilySampler { family },
            &wrong,
            &vec![0.0, 0.0],
            40_000,
            3,
        )
        .unwrap();
        let c = corr(&chain, 0, 1);
        assert!(
            c.abs() < 0.05,
            "stale cycle should destroy the correlation, got {c}"
        );
    }

    #[test]
    fn collapsed_cycle_in_blocking_order_is_exact_and_faster() {
        let rho: f64 = 0.9;
        let family = GaussianFamilyToy::bivariate(rho).unwrap();
        let blocked = SamplerPlan::parse("draw:x0 marg:x1\ndraw:x1 given:x0").unwrap();
        let chain = run_pcg(
            &mut FamilySampler { family: family.clone() },
            &blocked,
            &vec![0.0, 0.0],
            40_000,
            41,
        )
        .unwrap();
        assert_abs_diff_eq!(corr(&chain, 0, 1), rho, epsilon = 0.02);
        let d = diagnostics(&chain, &[]).unwrap();
        for k in 0..2 {
            let se = (d.variance[k] / d.ess[k].unwrap()).sqrt();
            assert_abs_diff_eq!(d.mean[k], 0.0, epsilon = 4.0 * se);
            assert_abs_diff_eq!(d.variance[k], 1.0, epsilon = 0.06);
        }
        // Collapsing x1 out of the first step makes the x0 draws
        // independent, so the collapsed chain dominates the two-block one.
        let gibbs = run_gibbs(
            &mut FamilySampler { family },
            &SamplerPlan::full_conditionals(&["x0", "x1"]),
            &vec![0.0, 0.0],
            40_000,
            41,
        )
        .unwrap();
        let dg = diagnostics(&gibbs, &[]).unwrap();
        for k in 0..2 {
            assert!(
                d.ess[k].unwrap() >= dg.ess[k].unwrap(),
                "collapsed ess {:?} vs plain {:?}",
                d.ess[k],
                dg.ess[k]
            );
        }
    }
}
