//! Posterior sampling bindings for the spectral model.
//!
//! The two-step chain alternates one full imputation of the count
//! hierarchy with draws from each parameter block's conditional given the
//! completed data. Given the full augmentation the blocks decouple: the
//! continuum sees only its restored counts, the line only its own, and the
//! absorption scale only the survivor/absorbed split, so the parameter
//! draw is a product of small conditionals.
//!
//! Conjugate pieces are drawn exactly: the line strength and the free
//! continuum intensities (without smoothing) are gamma, and the line shape
//! takes normal-theory moment draws with the restored counts piled at
//! their bin centers. The power-law pair and the absorption scale have
//! log-linear likelihoods with no conjugate family, so they take one
//! Gaussian random-walk Metropolis step each; an adaptation budget,
//! normally the burn-in, retunes the proposal scales toward a 20 to 50
//! percent acceptance window, and the kernel is frozen once the budget
//! runs out so the recorded tail is a fixed chain.
//!
//! Priors are flat on every block over its legal range. The sampler
//! refuses a smoothed free continuum: the smoothing term couples
//! neighboring bins and the gamma conditional no longer applies.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rand_chacha::ChaCha8Rng;

use crate::augmentation::{impute_full, AugmentedCounts, WorkingAugmentation};
use crate::error::{ModelError, SamplerError};
use crate::grid::{EnergyGrid, ResponseMatrix};
use crate::model::{
    line_bin_probs, sigma2_floor, AbsorptionKind, ContinuumSpec, LineSpec, ObservedSpectrum,
    SpectralParams,
};
use crate::problems::spectral::{spectral_labels, spectral_values};
use crate::sampler::{DaProblem, PlanProblem, PlanStep};

/// Proposal scales for the random-walk scalars, tuned in windows while an
/// adaptation budget lasts and frozen afterwards.
#[derive(Debug, Clone)]
struct MhTuner {
    scales: Vec<f64>,
    window_prop: Vec<u32>,
    window_acc: Vec<u32>,
    tuned_prop: Vec<u64>,
    tuned_acc: Vec<u64>,
    remaining: usize,
}

impl MhTuner {
    const WINDOW: u32 = 25;

    fn new(dims: usize) -> Self {
        MhTuner {
            scales: vec![0.2; dims],
            window_prop: vec![0; dims],
            window_acc: vec![0; dims],
            tuned_prop: vec![0; dims],
            tuned_acc: vec![0; dims],
            remaining: 0,
        }
    }

    fn tally(&mut self, dim: usize, accepted: bool) {
        if self.remaining == 0 {
            self.tuned_prop[dim] += 1;
            self.tuned_acc[dim] += accepted as u64;
            return;
        }
        self.window_prop[dim] += 1;
        self.window_acc[dim] += accepted as u32;
        if self.window_prop[dim] >= Self::WINDOW {
            let rate = self.window_acc[dim] as f64 / self.window_prop[dim] as f64;
            if rate < 0.20 {
                self.scales[dim] *= 0.5;
            } else if rate > 0.50 {
                self.scales[dim] *= 1.8;
            }
            self.window_prop[dim] = 0;
            self.window_acc[dim] = 0;
        }
    }

    fn end_draw(&mut self) {
        self.remaining = self.remaining.saturating_sub(1);
    }
}

/// One Metropolis step of a scalar: symmetric Gaussian proposal, optional
/// reflection onto the half line. Always consumes one normal and one
/// uniform so the stream stays aligned across accept and reject.
fn mh_scalar(
    rng: &mut ChaCha8Rng,
    current: f64,
    scale: f64,
    reflect_at_zero: bool,
    log_target: impl Fn(f64) -> f64,
) -> (f64, bool) {
    let z: f64 = StandardNormal.sample(rng);
    let mut proposal = current + scale * z;
    if reflect_at_zero {
        proposal = proposal.abs();
    }
    let lp = log_target(proposal);
    let u: f64 = rng.random();
    if lp.is_finite() && u.ln() < lp - log_target(current) {
        (proposal, true)
    } else {
        (current, false)
    }
}

/// The spectral model as a posterior sampling target.
#[derive(Debug, Clone)]
pub struct SpectralSampler {
    grid: EnergyGrid,
    rsp: ResponseMatrix,
    data: ObservedSpectrum,
    template: SpectralParams,
    tuner: MhTuner,
}

/// State of a plan-driven spectral chain: the current parameters and the
/// latest imputed hierarchy, absent until a plan step draws it.
#[derive(Debug, Clone)]
pub struct SpectralState {
    pub params: SpectralParams,
    pub aug: Option<AugmentedCounts>,
}

impl SpectralSampler {
    pub fn new(
        grid: EnergyGrid,
        rsp: ResponseMatrix,
        data: ObservedSpectrum,
        template: SpectralParams,
    ) -> Result<Self, ModelError> {
        template.validate(&grid, &rsp)?;
        if data.counts.len() != grid.detector_bins() {
            return Err(ModelError::Dimension(format!(
                "{} observed counts for {} detector bins",
                data.counts.len(),
                grid.detector_bins()
            )));
        }
        if let ContinuumSpec::Free { omega, .. } = &template.continuum {
            if omega.iter().any(|&w| w > 0.0) {
                return Err(ModelError::Invalid(
                    "the smoothing prior couples continuum bins; the gamma draw \
                     needs all smoothing weights zero"
                        .into(),
                ));
            }
        }
        let mh_dims = match template.continuum {
            ContinuumSpec::PowerLaw { .. } => 2,
            ContinuumSpec::Free { .. } => 0,
        } + template.absorption.is_free() as usize;
        Ok(SpectralSampler {
            grid,
            rsp,
            data,
            template,
            tuner: MhTuner::new(mh_dims),
        })
    }

    /// Tune the Metropolis proposal scales during the first `draws`
    /// parameter draws. Pass the chain's burn-in; the kernel must not
    /// adapt on recorded draws.
    pub fn with_adaptation(mut self, draws: usize) -> Self {
        self.tuner.remaining = draws;
        self
    }

    /// Post-adaptation acceptance rate of each random-walk scalar, in the
    /// order amplitude, index, absorption scale (free pieces only). `None`
    /// before any frozen-kernel proposal has been made.
    pub fn acceptance_rates(&self) -> Vec<Option<f64>> {
        self.tuner
            .tuned_prop
            .iter()
            .zip(&self.tuner.tuned_acc)
            .map(|(&p, &a)| (p > 0).then(|| a as f64 / p as f64))
            .collect()
    }

    pub fn initial_state(&self, params: &SpectralParams) -> SpectralState {
        SpectralState {
            params: params.clone(),
            aug: None,
        }
    }

    fn impute_counts(
        &self,
        params: &SpectralParams,
        rng: &mut ChaCha8Rng,
    ) -> Result<AugmentedCounts, SamplerError> {
        let seed = rng.random::<u64>();
        Ok(impute_full(
            params,
            &self.grid,
            &self.rsp,
            &self.data,
            &WorkingAugmentation::none(),
            seed,
        )?)
    }

    fn draw_continuum(
        &mut self,
        params: &mut SpectralParams,
        aug: &AugmentedCounts,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), SamplerError> {
        match &params.continuum {
            ContinuumSpec::PowerLaw { gamma, beta } => {
                let total: f64 = aug.yddot_c.iter().map(|&c| c as f64).sum();
                let log_e_total: f64 = aug
                    .yddot_c
                    .iter()
                    .zip(self.grid.means())
                    .map(|(&c, &e)| c as f64 * e.ln())
                    .sum();
                let loglik = |g: f64, b: f64| -> f64 {
                    if !(g > 0.0) {
                        return f64::NEG_INFINITY;
                    }
                    let expected: f64 = self
                        .grid
                        .widths()
                        .iter()
                        .zip(self.grid.means())
                        .map(|(&w, &e)| w * e.powf(-b))
                        .sum();
                    total * g.ln() - b * log_e_total - g * expected
                };
                // The amplitude walks on the log scale; the extra `x` is
                // the Jacobian of that reparameterization.
                let beta_cur = *beta;
                let (lg, acc) = mh_scalar(rng, gamma.ln(), self.tuner.scales[0], false, |x| {
                    loglik(x.exp(), beta_cur) + x
                });
                self.tuner.tally(0, acc);
                let gamma_next = lg.exp();
                let (beta_next, acc) =
                    mh_scalar(rng, beta_cur, self.tuner.scales[1], false, |b| {
                        loglik(gamma_next, b)
                    });
                self.tuner.tally(1, acc);
                params.continuum = ContinuumSpec::PowerLaw {
                    gamma: gamma_next,
                    beta: beta_next,
                };
            }
            ContinuumSpec::Free { theta, omega } => {
                let mut next = theta.clone();
                for (j, t) in next.iter_mut().enumerate() {
                    let shape = aug.yddot_c[j] as f64 + 1.0;
                    let scale = 1.0 / self.grid.widths()[j];
                    *t = Gamma::new(shape, scale)
                        .map_err(|e| SamplerError::Usage(format!("gamma draw: {e}")))?
                        .sample(rng);
                }
                params.continuum = ContinuumSpec::Free {
                    theta: next,
                    omega: omega.clone(),
                };
            }
        }
        Ok(())
    }

    fn draw_line(
        &mut self,
        params: &mut SpectralParams,
        aug: &AugmentedCounts,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), SamplerError> {
        let w_total: f64 = aug.yddot_l.iter().map(|&c| c as f64).sum();
        match params.line {
            LineSpec::None => {}
            LineSpec::Delta { bin, .. } => {
                let nu = Gamma::new(w_total + 1.0, 1.0)
                    .map_err(|e| SamplerError::Usage(format!("gamma draw: {e}")))?
                    .sample(rng);
                params.line = LineSpec::Delta { nu, bin };
            }
            LineSpec::Gaussian { mu, sigma2, .. } => {
                // Shape from the restored counts at their bin centers;
                // with under two photons the shape conditional is flat and
                // the current values stand.
                let (mu_next, sigma2_next) = if w_total >= 2.0 {
                    let e_bar: f64 = aug
                        .yddot_l
                        .iter()
                        .zip(self.grid.means())
                        .map(|(&c, &e)| c as f64 * e)
                        .sum::<f64>()
                        / w_total;
                    let spread: f64 = aug
                        .yddot_l
                        .iter()
                        .zip(self.grid.means())
                        .map(|(&c, &e)| c as f64 * (e - e_bar) * (e - e_bar))
                        .sum();
                    if spread > 0.0 {
                        let chi = Gamma::new((w_total - 1.0) / 2.0, 2.0)
                            .map_err(|e| SamplerError::Usage(format!("gamma draw: {e}")))?
                            .sample(rng);
                        let s2 = (spread / chi).max(sigma2_floor(&self.grid));
                        let z: f64 = StandardNormal.sample(rng);
                        (e_bar + (s2 / w_total).sqrt() * z, s2)
                    } else {
                        // Every photon in one bin: recenter there, keep
                        // the current width.
                        (e_bar, sigma2.max(sigma2_floor(&self.grid)))
                    }
                } else {
                    (mu, sigma2)
                };
                let shape = LineSpec::Gaussian {
                    nu: 1.0,
                    mu: mu_next,
                    sigma2: sigma2_next,
                };
                let mass: f64 = line_bin_probs(&shape, &self.grid)?.iter().sum();
                let nu = Gamma::new(w_total + 1.0, 1.0 / mass.max(1e-12))
                    .map_err(|e| SamplerError::Usage(format!("gamma draw: {e}")))?
                    .sample(rng);
                params.line = LineSpec::Gaussian {
                    nu,
                    mu: mu_next,
                    sigma2: sigma2_next,
                };
            }
        }
        Ok(())
    }

    fn draw_absorption(
        &mut self,
        params: &mut SpectralParams,
        aug: &AugmentedCounts,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), SamplerError> {
        let AbsorptionKind::Exponential { xi } = params.absorption.kind else {
            return Ok(());
        };
        let dim = self.tuner.scales.len() - 1;
        let survivors: Vec<f64> = aug
            .ydot_c
            .iter()
            .zip(&aug.ydot_l)
            .map(|(&c, &l)| (c + l) as f64)
            .collect();
        let absorbed: Vec<f64> = aug
            .yddot_c
            .iter()
            .zip(&aug.yddot_l)
            .zip(&survivors)
            .map(|((&c, &l), &s)| (c + l) as f64 - s)
            .collect();
        let area = params.absorption.effective_area.clone();
        let means = self.grid.means().to_vec();
        let loglik = move |x: f64| -> f64 {
            if x < 0.0 {
                return f64::NEG_INFINITY;
            }
            let mut lp = 0.0;
            for j in 0..means.len() {
                let t = area[j] * (-x / means[j]).exp();
                if survivors[j] > 0.0 {
                    if t <= 0.0 {
                        return f64::NEG_INFINITY;
                    }
                    lp += survivors[j] * t.ln();
                }
                if absorbed[j] > 0.0 {
                    if t >= 1.0 {
                        return f64::NEG_INFINITY;
                    }
                    lp += absorbed[j] * (1.0 - t).ln();
                }
            }
            lp
        };
        let (xi_next, acc) = mh_scalar(rng, xi, self.tuner.scales[dim], true, loglik);
        self.tuner.tally(dim, acc);
        params.absorption.kind = AbsorptionKind::Exponential { xi: xi_next };
        Ok(())
    }
}

impl DaProblem for SpectralSampler {
    type Params = SpectralParams;
    type Aug = AugmentedCounts;

    fn labels(&self) -> Vec<String> {
        spectral_labels(&self.template)
    }

    fn param_vector(&self, params: &SpectralParams) -> Vec<f64> {
        spectral_values(params)
    }

    fn impute(
        &mut self,
        params: &SpectralParams,
        rng: &mut ChaCha8Rng,
    ) -> Result<AugmentedCounts, SamplerError> {
        self.impute_counts(params, rng)
    }

    fn draw_params(
        &mut self,
        params: &SpectralParams,
        aug: &AugmentedCounts,
        rng: &mut ChaCha8Rng,
    ) -> Result<SpectralParams, SamplerError> {
        let mut next = params.clone();
        self.draw_continuum(&mut next, aug, rng)?;
        self.draw_line(&mut next, aug, rng)?;
        self.draw_absorption(&mut next, aug, rng)?;
        self.tuner.end_draw();
        Ok(next)
    }
}

impl PlanProblem for SpectralSampler {
    type State = SpectralState;

    fn variables(&self) -> Vec<String> {
        let mut vars = vec!["aug".to_string(), "continuum".to_string()];
        if !matches!(self.template.line, LineSpec::None) {
            vars.push("line".into());
        }
        if self.template.absorption.is_free() {
            vars.push("absorption".into());
        }
        vars
    }

    fn labels(&self) -> Vec<String> {
        spectral_labels(&self.template)
    }

    fn record(&self, state: &SpectralState) -> Vec<f64> {
        spectral_values(&state.params)
    }

    fn draw_step(
        &mut self,
        index: usize,
        step: &PlanStep,
        state: &mut SpectralState,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), SamplerError> {
        if !step.marginalizes_out.is_empty() {
            return Err(SamplerError::MissingConditional {
                step: index,
                detail: "no collapsed conditionals exist for the spectral blocks".into(),
            });
        }
        let SpectralState { params, aug } = state;
        for name in &step.draws {
            match name.as_str() {
                "aug" => *aug = Some(self.impute_counts(params, rng)?),
                block @ ("continuum" | "line" | "absorption") => {
                    let aug = aug.as_ref().ok_or_else(|| SamplerError::MissingConditional {
                        step: index,
                        detail: format!(
                            "the {block} draw conditions on an augmentation no step \
                             has drawn yet"
                        ),
                    })?;
                    match block {
                        "continuum" => self.draw_continuum(params, aug, rng)?,
                        "line" => self.draw_line(params, aug, rng)?,
                        _ => self.draw_absorption(params, aug, rng)?,
                    }
                }
                other => {
                    return Err(SamplerError::MissingConditional {
                        step: index,
                        detail: format!("no conditional draws variable `{other}`"),
                    })
                }
            }
        }
        if step.draws.iter().any(|v| v != "aug") {
            self.tuner.end_draw();
        }
        Ok(())
    }
}
