//! Driver bindings for the analytic location toy.
//!
//! Every update here is a closed form from [`crate::toys`], so a driver
//! run on these problems can be checked against exact trajectories.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::em::{
    AugLevel, CmStep, FitProblem, McemProblem, NestedProblem, PxUpdate, PxemProblem,
};
use crate::error::{FitError, SamplerError};
use crate::sampler::{DaProblem, MarginalAugProblem};
use crate::toys::GaussianToy;

/// Plain EM on the toy: one full-augmentation location update.
#[derive(Debug, Clone, Copy)]
pub struct ToyEmProblem {
    pub toy: GaussianToy,
}

impl FitProblem for ToyEmProblem {
    type Params = f64;
    /// Conditional mean of the missing values at the cycle-start iterate.
    type Stats = f64;

    fn param_labels(&self) -> Vec<String> {
        vec!["theta".into()]
    }

    fn param_vector(&self, params: &f64) -> Vec<f64> {
        vec![*params]
    }

    fn loglik(&self, params: &f64) -> Result<f64, FitError> {
        Ok(self.toy.observed_loglik(*params))
    }

    fn cm_steps(&self) -> Vec<CmStep> {
        vec![CmStep::new("location", AugLevel::Full)]
    }

    fn e_step(&self, params: &f64) -> Result<f64, FitError> {
        Ok(*params)
    }

    fn apply_step(
        &self,
        _params: &f64,
        _index: usize,
        stats: Option<&f64>,
    ) -> Result<f64, FitError> {
        let s = stats.expect("the location step is augmented");
        Ok(self.toy.em_update(*s))
    }
}

impl McemProblem for ToyEmProblem {
    fn impute_stats(&self, params: &f64, seed: u64) -> Result<f64, FitError> {
        if self.toy.m == 0 {
            return Ok(*params);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: f64 = StandardNormal.sample(&mut rng);
        Ok(*params + z / (2.0 * self.toy.m as f64).sqrt())
    }

    fn average_stats(&self, draws: &[f64]) -> f64 {
        draws.iter().sum::<f64>() / draws.len() as f64
    }
}

/// The toy under a fixed working value: the missing values carry only a
/// `(1 - alpha)` share of their dependence on the location, so the
/// augmentation imputes less and the iteration contracts faster.
#[derive(Debug, Clone, Copy)]
pub struct ToyCdaProblem {
    pub toy: GaussianToy,
    pub alpha: f64,
}

impl FitProblem for ToyCdaProblem {
    type Params = f64;
    type Stats = f64;

    fn param_labels(&self) -> Vec<String> {
        vec!["theta".into()]
    }

    fn param_vector(&self, params: &f64) -> Vec<f64> {
        vec![*params]
    }

    fn loglik(&self, params: &f64) -> Result<f64, FitError> {
        Ok(self.toy.observed_loglik(*params))
    }

    fn cm_steps(&self) -> Vec<CmStep> {
        vec![CmStep::new("location", AugLevel::Reduced)]
    }

    fn e_step(&self, params: &f64) -> Result<f64, FitError> {
        Ok(*params)
    }

    fn apply_step(
        &self,
        _params: &f64,
        _index: usize,
        stats: Option<&f64>,
    ) -> Result<f64, FitError> {
        let s = stats.expect("the location step is augmented");
        Ok(self.toy.cda_update(self.alpha, *s))
    }
}

/// Degenerate single-block cycle maximizing the observed objective
/// directly. Reaches the closed-form maximizer in one step.
#[derive(Debug, Clone, Copy)]
pub struct ToyDirectProblem {
    pub toy: GaussianToy,
}

impl FitProblem for ToyDirectProblem {
    type Params = f64;
    type Stats = ();

    fn param_labels(&self) -> Vec<String> {
        vec!["theta".into()]
    }

    fn param_vector(&self, params: &f64) -> Vec<f64> {
        vec![*params]
    }

    fn loglik(&self, params: &f64) -> Result<f64, FitError> {
        Ok(self.toy.observed_loglik(*params))
    }

    fn cm_steps(&self) -> Vec<CmStep> {
        vec![CmStep::new("location", AugLevel::ObservedOnly)]
    }

    fn e_step(&self, _params: &f64) -> Result<(), FitError> {
        Ok(())
    }

    fn apply_step(
        &self,
        _params: &f64,
        _index: usize,
        _stats: Option<&()>,
    ) -> Result<f64, FitError> {
        Ok(self.toy.mle())
    }
}

/// The toy as a nested problem. The outer expectation fills in the missing
/// values; the inner cycle maximizes the resulting surrogate, which here
/// is exact in one step, so the nested driver must reproduce plain EM.
#[derive(Debug, Clone, Copy)]
pub struct ToyNestedProblem {
    pub toy: GaussianToy,
}

impl FitProblem for ToyNestedProblem {
    type Params = f64;
    type Stats = f64;

    fn param_labels(&self) -> Vec<String> {
        vec!["theta".into()]
    }

    fn param_vector(&self, params: &f64) -> Vec<f64> {
        vec![*params]
    }

    fn loglik(&self, params: &f64) -> Result<f64, FitError> {
        Ok(self.toy.observed_loglik(*params))
    }

    fn cm_steps(&self) -> Vec<CmStep> {
        vec![CmStep::new("location", AugLevel::Full)]
    }

    fn e_step(&self, params: &f64) -> Result<f64, FitError> {
        Ok(*params)
    }

    fn apply_step(
        &self,
        _params: &f64,
        _index: usize,
        stats: Option<&f64>,
    ) -> Result<f64, FitError> {
        let s = stats.expect("the location step is augmented");
        Ok(self.toy.em_update(*s))
    }
}

impl NestedProblem for ToyNestedProblem {
    type OuterStats = f64;

    fn outer_e_step(&self, params: &f64) -> Result<f64, FitError> {
        Ok(*params)
    }

    fn inner_cycle(&self, _params: &f64, outer: &f64) -> Result<f64, FitError> {
        Ok(self.toy.em_update(*outer))
    }

    fn inner_objective(&self, params: &f64, outer: &f64) -> Result<f64, FitError> {
        Ok(self.toy.q_value(*params, *outer))
    }
}

/// The toy under parameter expansion: the joint step lands on the
/// maximizer at once, or on the profile-curve limit when the expanded
/// maximum is not attained.
#[derive(Debug, Clone, Copy)]
pub struct ToyPxemProblem {
    pub toy: GaussianToy,
}

impl FitProblem for ToyPxemProblem {
    type Params = f64;
    type Stats = f64;

    fn param_labels(&self) -> Vec<String> {
        vec!["theta".into()]
    }

    fn param_vector(&self, params: &f64) -> Vec<f64> {
        vec![*params]
    }

    fn loglik(&self, params: &f64) -> Result<f64, FitError> {
        Ok(self.toy.observed_loglik(*params))
    }

    fn cm_steps(&self) -> Vec<CmStep> {
        vec![CmStep::new("location", AugLevel::Full)]
    }

    fn e_step(&self, params: &f64) -> Result<f64, FitError> {
        Ok(*params)
    }

    fn apply_step(
        &self,
        _params: &f64,
        _index: usize,
        stats: Option<&f64>,
    ) -> Result<f64, FitError> {
        let s = stats.expect("the location step is augmented");
        Ok(self.toy.em_update(*s))
    }
}

impl PxemProblem for ToyPxemProblem {
    fn px_step(&self, params: &f64) -> Result<PxUpdate<f64>, FitError> {
        let (next, boundary) = self.toy.pxem_joint_step(*params);
        Ok(PxUpdate {
            params: next,
            boundary,
        })
    }
}

/// The toy as a two-step sampling target under a flat prior on the
/// location. The imputation is collapsed to its sufficient statistic (the
/// mean of the missing values), so one transition costs two normal draws.
#[derive(Debug, Clone, Copy)]
pub struct ToyDaProblem {
    pub toy: GaussianToy,
}

impl DaProblem for ToyDaProblem {
    type Params = f64;
    /// Mean of the imputed missing values; absent when nothing is missing.
    type Aug = Option<f64>;

    fn labels(&self) -> Vec<String> {
        vec!["theta".into()]
    }

    fn param_vector(&self, params: &f64) -> Vec<f64> {
        vec![*params]
    }

    fn impute(&mut self, params: &f64, rng: &mut ChaCha8Rng) -> Result<Option<f64>, SamplerError> {
        if self.toy.m == 0 {
            return Ok(None);
        }
        let m = self.toy.m as f64;
        let z: f64 = StandardNormal.sample(rng);
        Ok(Some(params + z / (2.0 * m).sqrt()))
    }

    fn draw_params(
        &mut self,
        _params: &f64,
        aug: &Option<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64, SamplerError> {
        let (n, m) = (self.toy.n as f64, self.toy.m as f64);
        let (mean, var) = match aug {
            Some(y_bar) => (
                (n * self.toy.x_bar + m * y_bar) / (n + m),
                1.0 / (2.0 * (n + m)),
            ),
            None => (self.toy.posterior_mean(), self.toy.posterior_var()),
        };
        let z: f64 = StandardNormal.sample(rng);
        Ok(mean + var.sqrt() * z)
    }
}

impl MarginalAugProblem for ToyDaProblem {
    type Params = f64;

    fn labels(&self) -> Vec<String> {
        vec!["theta".into()]
    }

    fn param_vector(&self, params: &f64) -> Vec<f64> {
        vec![*params]
    }

    /// Shift each missing value by a working offset `alpha` drawn from its
    /// `N(0, tau^2)` prior, impute the shifted mean, then draw the
    /// location jointly with the offset and keep the location margin. The
    /// chain stays exactly first order autoregressive with coefficient
    /// `m / (2 n m tau^2 + n + m)`, which recovers the plain two-step
    /// coefficient `m / (n + m)` at `tau = 0` and vanishes as the prior
    /// widens.
    fn expanded_transition(
        &mut self,
        params: &f64,
        tau: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64, SamplerError> {
        if tau == 0.0 || self.toy.m == 0 {
            let aug = self.impute(params, rng)?;
            return self.draw_params(params, &aug, rng);
        }
        let (n, m) = (self.toy.n as f64, self.toy.m as f64);
        let z1: f64 = StandardNormal.sample(rng);
        let alpha = tau * z1;
        let z2: f64 = StandardNormal.sample(rng);
        let z_bar = params - alpha + z2 / (2.0 * m).sqrt();
        // Joint precision of (location, offset) given the shifted mean and
        // the observed mean, under the flat location prior.
        let a = 2.0 * (n + m);
        let b = -2.0 * m;
        let c = 2.0 * m + 1.0 / (tau * tau);
        let det = a * c - b * b;
        let b0 = 2.0 * n * self.toy.x_bar + 2.0 * m * z_bar;
        let b1 = -2.0 * m * z_bar;
        let mean = (c * b0 - b * b1) / det;
        let var = c / det;
        let z3: f64 = StandardNormal.sample(rng);
        Ok(mean + var.sqrt() * z3)
    }
}
