//! Driver bindings for the spectral model.
//!
//! One problem value fixes the data, the parameter structure, and a cycle
//! plan: which block updates in which order, conditioning on which
//! augmentation. Named constructors build the standard plans; the raw
//! plan constructor exists so callers (and tests) can also build invalid
//! ones and watch the ordering validator reject them.
//!
//! The working reduction is not stored as a number. A plan that declares
//! reduced steps recomputes the legal reduction from the current iterate
//! at every expectation step, so the reduction tracks the absorption
//! parameters as they move.
//!
//! Reduced plans trim the line source only. The continuum's reduction is
//! a separate opt-in: its support is the whole grid, so trimming it packs
//! the remaining restored counts against the least absorbed bins, and
//! with a movable absorption scale that sharpens the augmented
//! information for the scale enough to slow the whole fit down.

use rand::Rng;

use crate::augmentation::{
    deblur_expect, e_step_full, impute_full, restore_absorbed_expect, split_sources_expect,
    strip_background_expect, AugExpectations, WorkingAugmentation,
};
use crate::em::{AugLevel, CmStep, FitProblem, McemProblem, NestedProblem, PxUpdate, PxemProblem};
use crate::error::{FitError, ModelError};
use crate::grid::{EnergyGrid, ResponseMatrix};
use crate::model::{
    line_bin_probs, observed_loglik, smoothing_log_prior, thinned_intensity, LineSpec,
    ObservedSpectrum, SpectralParams,
};
use crate::mstep::{
    cm_step_absorption, cm_step_free_continuum, cm_step_powerlaw, m_step_line, DAMP_LIMIT,
};

/// Which parameters one plan step updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectralBlock {
    /// Every free block from the same statistics (a full M-step).
    AllBlocks,
    Continuum,
    Line,
    Absorption,
    /// The line center alone, by direct search on the observed objective.
    LineCenter,
}

impl SpectralBlock {
    fn label(self) -> &'static str {
        match self {
            SpectralBlock::AllBlocks => "all-blocks",
            SpectralBlock::Continuum => "continuum",
            SpectralBlock::Line => "line",
            SpectralBlock::Absorption => "absorption",
            SpectralBlock::LineCenter => "line-center",
        }
    }

    fn touches_line(self) -> bool {
        matches!(self, SpectralBlock::AllBlocks | SpectralBlock::Line)
    }

    fn touches_continuum(self) -> bool {
        matches!(self, SpectralBlock::AllBlocks | SpectralBlock::Continuum)
    }
}

/// One step of a spectral cycle plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpectralStep {
    pub block: SpectralBlock,
    pub aug: AugLevel,
}

impl SpectralStep {
    pub fn new(block: SpectralBlock, aug: AugLevel) -> Self {
        SpectralStep { block, aug }
    }
}

/// A spectral data set bound to a cycle plan.
#[derive(Debug, Clone)]
pub struct SpectralProblem {
    grid: EnergyGrid,
    rsp: ResponseMatrix,
    data: ObservedSpectrum,
    template: SpectralParams,
    steps: Vec<SpectralStep>,
    reduced: bool,
    reduce_continuum: bool,
}

impl SpectralProblem {
    /// Binds an arbitrary plan. Augmented blocks that appear at `Reduced`
    /// level turn on the corresponding working reduction; the ordering of
    /// the plan is deliberately NOT validated here (the drivers do that),
    /// so misordered plans can be constructed and rejected downstream.
    pub fn from_steps(
        grid: EnergyGrid,
        rsp: ResponseMatrix,
        data: ObservedSpectrum,
        template: SpectralParams,
        steps: Vec<SpectralStep>,
    ) -> Result<Self, ModelError> {
        template.validate(&grid, &rsp)?;
        if data.counts.len() != grid.detector_bins() {
            return Err(ModelError::Dimension(format!(
                "{} observed counts for {} detector bins",
                data.counts.len(),
                grid.detector_bins()
            )));
        }
        if steps.is_empty() {
            return Err(ModelError::Invalid("a cycle plan needs at least one step".into()));
        }
        let mut reduced = false;
        for step in &steps {
            match (step.block, step.aug) {
                (SpectralBlock::LineCenter, AugLevel::ObservedOnly) => {}
                (SpectralBlock::LineCenter, _) => {
                    return Err(ModelError::Invalid(
                        "the line-center search maximizes the observed objective; \
                         it cannot condition on an augmentation"
                            .into(),
                    ))
                }
                (block, AugLevel::ObservedOnly) => {
                    return Err(ModelError::Invalid(format!(
                        "no direct observed-objective search is implemented for the \
                         {} block",
                        block.label()
                    )))
                }
                (_, AugLevel::Reduced) => reduced = true,
                (_, AugLevel::Full) => {}
            }
        }
        let problem = SpectralProblem {
            grid,
            rsp,
            data,
            template,
            steps,
            reduced,
            reduce_continuum: false,
        };
        problem.check_full_claims()?;
        Ok(problem)
    }

    /// One set of statistics serves the whole cycle, so a step claiming
    /// the full augmentation is a lie whenever its block consumes
    /// expectations of a source the plan reduces.
    fn check_full_claims(&self) -> Result<(), ModelError> {
        if !self.reduced {
            return Ok(());
        }
        let line_reduced = !matches!(self.template.line, LineSpec::None);
        for step in &self.steps {
            if step.aug != AugLevel::Full {
                continue;
            }
            let reads_line = line_reduced
                && (step.block.touches_line() || step.block == SpectralBlock::Absorption);
            let reads_continuum = self.reduce_continuum
                && (step.block.touches_continuum() || step.block == SpectralBlock::Absorption);
            if reads_line || reads_continuum {
                return Err(ModelError::Invalid(format!(
                    "step `{}` wants full statistics for a source the plan \
                     reduces",
                    step.block.label()
                )));
            }
        }
        Ok(())
    }

    /// Extends a reduced plan's trim to the continuum source, at its own
    /// legal rate (the lowest absorption over the whole grid). Worthwhile
    /// when every bin absorbs and the absorption parameters are fixed;
    /// with a free absorption scale it usually backfires (see the module
    /// notes). No effect on plans without reduced steps.
    pub fn with_continuum_reduction(mut self) -> Result<Self, ModelError> {
        self.reduce_continuum = true;
        self.check_full_claims()?;
        Ok(self)
    }

    /// Single full maximization per cycle.
    pub fn em(
        grid: EnergyGrid,
        rsp: ResponseMatrix,
        data: ObservedSpectrum,
        template: SpectralParams,
    ) -> Result<Self, ModelError> {
        Self::from_steps(
            grid,
            rsp,
            data,
            template,
            vec![SpectralStep::new(SpectralBlock::AllBlocks, AugLevel::Full)],
        )
    }

    /// One conditional maximization per free block, all on the full
    /// augmentation.
    pub fn ecm(
        grid: EnergyGrid,
        rsp: ResponseMatrix,
        data: ObservedSpectrum,
        template: SpectralParams,
    ) -> Result<Self, ModelError> {
        let steps = Self::per_block_steps(&template, AugLevel::Full);
        Self::from_steps(grid, rsp, data, template, steps)
    }

    /// Conditional cycle ending with a direct search for the line center.
    pub fn ecme(
        grid: EnergyGrid,
        rsp: ResponseMatrix,
        data: ObservedSpectrum,
        template: SpectralParams,
    ) -> Result<Self, ModelError> {
        if !matches!(template.line, LineSpec::Gaussian { .. }) {
            return Err(ModelError::Invalid(
                "the direct line-center step needs a line with a movable center".into(),
            ));
        }
        let mut steps = Self::per_block_steps(&template, AugLevel::Full);
        steps.push(SpectralStep::new(
            SpectralBlock::LineCenter,
            AugLevel::ObservedOnly,
        ));
        Self::from_steps(grid, rsp, data, template, steps)
    }

    /// Continuum and absorption on the full augmentation, the line on the
    /// reduced one.
    pub fn aecm(
        grid: EnergyGrid,
        rsp: ResponseMatrix,
        data: ObservedSpectrum,
        template: SpectralParams,
    ) -> Result<Self, ModelError> {
        if matches!(template.line, LineSpec::None) {
            return Err(ModelError::Invalid(
                "the reduced line step needs a line component".into(),
            ));
        }
        let mut steps = vec![SpectralStep::new(SpectralBlock::Continuum, AugLevel::Full)];
        if template.absorption.is_free() {
            // The absorption step consumes the line's restored counts, so
            // it shares the line's reduced level.
            steps.push(SpectralStep::new(
                SpectralBlock::Absorption,
                AugLevel::Reduced,
            ));
        }
        steps.push(SpectralStep::new(SpectralBlock::Line, AugLevel::Reduced));
        Self::from_steps(grid, rsp, data, template, steps)
    }

    /// Plain EM against the reduced augmentation: both sources impute only
    /// the absorbed photons the reduction cannot drop.
    pub fn cda(
        grid: EnergyGrid,
        rsp: ResponseMatrix,
        data: ObservedSpectrum,
        template: SpectralParams,
    ) -> Result<Self, ModelError> {
        Self::from_steps(
            grid,
            rsp,
            data,
            template,
            vec![SpectralStep::new(SpectralBlock::AllBlocks, AugLevel::Reduced)],
        )
    }

    fn per_block_steps(template: &SpectralParams, aug: AugLevel) -> Vec<SpectralStep> {
        let mut steps = vec![SpectralStep::new(SpectralBlock::Continuum, aug)];
        if !matches!(template.line, LineSpec::None) {
            steps.push(SpectralStep::new(SpectralBlock::Line, aug));
        }
        if template.absorption.is_free() {
            steps.push(SpectralStep::new(SpectralBlock::Absorption, aug));
        }
        steps
    }

    pub fn grid(&self) -> &EnergyGrid {
        &self.grid
    }

    pub fn data(&self) -> &ObservedSpectrum {
        &self.data
    }

    pub fn template(&self) -> &SpectralParams {
        &self.template
    }

    /// The reduction in force at the given iterate. Recomputed rather than
    /// stored: legality depends on the current absorption parameters.
    pub fn working(&self, params: &SpectralParams) -> Result<WorkingAugmentation, ModelError> {
        if !self.reduced {
            return Ok(WorkingAugmentation::none());
        }
        if self.reduce_continuum {
            WorkingAugmentation::auto_with_continuum(params, &self.grid)
        } else {
            WorkingAugmentation::auto(params, &self.grid)
        }
    }

    fn update_continuum(
        &self,
        params: &SpectralParams,
        stats: &AugExpectations,
    ) -> Result<SpectralParams, FitError> {
        let mut next = params.clone();
        next.continuum = match params.continuum {
            crate::model::ContinuumSpec::PowerLaw { .. } => {
                cm_step_powerlaw(stats, &self.grid, &params.continuum)?.continuum
            }
            crate::model::ContinuumSpec::Free { .. } => {
                cm_step_free_continuum(stats, &self.grid, &params.continuum)?
            }
        };
        Ok(next)
    }

    fn update_line(
        &self,
        params: &SpectralParams,
        stats: &AugExpectations,
    ) -> Result<SpectralParams, FitError> {
        let mut next = params.clone();
        next.line = m_step_line(stats, &self.grid, &params.line)?;
        Ok(next)
    }

    fn update_absorption(
        &self,
        params: &SpectralParams,
        stats: &AugExpectations,
    ) -> Result<SpectralParams, FitError> {
        if !params.absorption.is_free() {
            return Ok(params.clone());
        }
        let mut next = params.clone();
        next.absorption = cm_step_absorption(stats, &self.grid, params)?;
        Ok(next)
    }

    fn update_all(
        &self,
        params: &SpectralParams,
        stats: &AugExpectations,
    ) -> Result<SpectralParams, FitError> {
        let next = self.update_continuum(params, stats)?;
        let next = self.update_line(&next, stats)?;
        self.update_absorption(&next, stats)
    }

    /// Global-ish search for the line center on the observed objective:
    /// coarse scan over the grid range, golden-section refinement, and a
    /// guard that keeps the current center when nothing beats it.
    fn search_line_center(&self, params: &SpectralParams) -> Result<SpectralParams, FitError> {
        let LineSpec::Gaussian { nu, mu, sigma2 } = params.line else {
            return Err(FitError::Usage(
                "the line-center search needs a line with a movable center".into(),
            ));
        };
        let eval = |center: f64| -> f64 {
            let mut p = params.clone();
            p.line = LineSpec::Gaussian {
                nu,
                mu: center,
                sigma2,
            };
            observed_loglik(&p, &self.grid, &self.rsp, &self.data).unwrap_or(f64::NEG_INFINITY)
        };
        let lo = self.grid.edges()[0];
        let hi = *self.grid.edges().last().unwrap();
        let scans = 4 * self.grid.ideal_bins();
        let mut best = (eval(mu), mu);
        for k in 0..=scans {
            let center = lo + (hi - lo) * k as f64 / scans as f64;
            let val = eval(center);
            if val > best.0 {
                best = (val, center);
            }
        }
        let spacing = (hi - lo) / scans as f64;
        let (mut a, mut b) = ((best.1 - spacing).max(lo), (best.1 + spacing).min(hi));
        let ratio = 0.5 * (5.0f64.sqrt() - 1.0);
        let (mut x1, mut x2) = (b - ratio * (b - a), a + ratio * (b - a));
        let (mut f1, mut f2) = (eval(x1), eval(x2));
        for _ in 0..80 {
            if f1 < f2 {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + ratio * (b - a);
                f2 = eval(x2);
            } else {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - ratio * (b - a);
                f1 = eval(x1);
            }
        }
        let refined = 0.5 * (a + b);
        let mut winner = best;
        if eval(refined) > winner.0 {
            winner = (eval(refined), refined);
        }
        if winner.0 <= eval(mu) {
            return Ok(params.clone());
        }
        let mut next = params.clone();
        next.line = LineSpec::Gaussian {
            nu,
            mu: winner.1,
            sigma2,
        };
        Ok(next)
    }

    /// Expanded objective of the line block: survivor and absorbed counts
    /// as independent streams, the absorbed stream scaled by the working
    /// parameter. `q` holds the survival probabilities the streams split
    /// on.
    fn expanded_line_objective(
        &self,
        surv: &[f64],
        absorbed: &[f64],
        q: &[f64],
        shape: &LineSpec,
        nu: f64,
        alpha: f64,
    ) -> f64 {
        if !(nu > 0.0) || !(alpha > 0.0) {
            return f64::NEG_INFINITY;
        }
        let probs = match line_bin_probs(shape, &self.grid) {
            Ok(p) => p,
            Err(_) => return f64::NEG_INFINITY,
        };
        let mut h = 0.0;
        for j in 0..probs.len() {
            let pq = probs[j] * q[j];
            let pr = probs[j] * (1.0 - q[j]);
            if surv[j] > 0.0 {
                if pq <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                h += surv[j] * (nu * pq).ln();
            }
            h -= nu * pq;
            if absorbed[j] > 0.0 {
                if pr <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                h += absorbed[j] * (nu * alpha * pr).ln();
            }
            h -= nu * alpha * pr;
        }
        h
    }

    /// Joint update of the line block and its working scale.
    ///
    /// Profiling the scale out leaves the survivor-only amplitude update
    /// `nu = sum(surviving) / sum(p q)`: the imputed absorbed photons stop
    /// constraining the amplitude, which is the entire point of the
    /// expansion. The step is damped toward the current block on the
    /// expanded objective so the overall surrogate cannot decrease.
    fn expanded_line_update(
        &self,
        params: &SpectralParams,
        after: &SpectralParams,
        stats: &AugExpectations,
    ) -> Result<(LineSpec, bool), FitError> {
        let surv = &stats.ydot_l;
        let absorbed: Vec<f64> = stats
            .yddot_l
            .iter()
            .zip(surv)
            .map(|(&tot, &s)| (tot - s).max(0.0))
            .collect();
        let s_total: f64 = surv.iter().sum();
        let a_total: f64 = absorbed.iter().sum();
        let q = after.absorption.thin_probs(&self.grid);
        let (nu_cur, unit_shape) = match params.line {
            LineSpec::None => return Ok((LineSpec::None, false)),
            LineSpec::Gaussian { nu, mu, sigma2 } => (
                nu,
                LineSpec::Gaussian {
                    nu: 1.0,
                    mu,
                    sigma2,
                },
            ),
            LineSpec::Delta { nu, bin } => (nu, LineSpec::Delta { nu: 1.0, bin }),
        };
        if s_total <= 0.0 {
            // No surviving line photons: the amplitude maximizer is zero.
            // With absorbed mass still imputed, the expanded supremum is
            // approached only as the scale diverges; zero is the profile
            // curve's finite limit.
            let line = match params.line {
                LineSpec::Gaussian { mu, sigma2, .. } => LineSpec::Gaussian {
                    nu: 0.0,
                    mu,
                    sigma2,
                },
                LineSpec::Delta { bin, .. } => LineSpec::Delta { nu: 0.0, bin },
                LineSpec::None => unreachable!(),
            };
            return Ok((line, a_total > 0.0));
        }
        // Candidate shape from the moments of the fully restored counts,
        // candidate amplitude from survivors alone.
        let cand_shape = match m_step_line(stats, &self.grid, &params.line)? {
            LineSpec::Gaussian { mu, sigma2, .. } => LineSpec::Gaussian {
                nu: 1.0,
                mu,
                sigma2,
            },
            LineSpec::Delta { bin, .. } => LineSpec::Delta { nu: 1.0, bin },
            LineSpec::None => unreachable!("survivors exist"),
        };
        let cand_probs = line_bin_probs(&cand_shape, &self.grid)?;
        let denom: f64 = cand_probs.iter().zip(&q).map(|(&p, &qj)| p * qj).sum();
        let lost: f64 = cand_probs
            .iter()
            .zip(&q)
            .map(|(&p, &qj)| p * (1.0 - qj))
            .sum();
        let nu_cand = if denom > 0.0 { s_total / denom } else { nu_cur };
        let alpha_cand = if a_total > 0.0 && lost > 0.0 && nu_cand > 0.0 {
            a_total / (nu_cand * lost)
        } else {
            1.0
        };
        let current = self.expanded_line_objective(surv, &absorbed, &q, &unit_shape, nu_cur, 1.0);
        let blend = |t: f64, a: f64, b: f64| a + t * (b - a);
        let mut t = 1.0;
        for _ in 0..DAMP_LIMIT {
            let shape = match (&unit_shape, &cand_shape) {
                (
                    LineSpec::Gaussian { mu: m0, sigma2: s0, .. },
                    LineSpec::Gaussian { mu: m1, sigma2: s1, .. },
                ) => LineSpec::Gaussian {
                    nu: 1.0,
                    mu: blend(t, *m0, *m1),
                    sigma2: blend(t, *s0, *s1),
                },
                (LineSpec::Delta { bin, .. }, _) => LineSpec::Delta { nu: 1.0, bin: *bin },
                _ => unreachable!(),
            };
            let nu_t = blend(t, nu_cur, nu_cand);
            let alpha_t = blend(t, 1.0, alpha_cand);
            let val = self.expanded_line_objective(surv, &absorbed, &q, &shape, nu_t, alpha_t);
            if val.is_finite() && val >= current {
                let line = match shape {
                    LineSpec::Gaussian { mu, sigma2, .. } => LineSpec::Gaussian {
                        nu: nu_t,
                        mu,
                        sigma2,
                    },
                    LineSpec::Delta { bin, .. } => LineSpec::Delta { nu: nu_t, bin },
                    LineSpec::None => unreachable!(),
                };
                return Ok((line, false));
            }
            t *= 0.5;
        }
        Ok((params.line.clone(), false))
    }

    fn stats_from_deblurred(
        &self,
        params: &SpectralParams,
        deblurred: &[f64],
    ) -> Result<AugExpectations, FitError> {
        let working = self.working(params)?;
        let (ydot_c, ydot_l) = split_sources_expect(params, &self.grid, deblurred)?;
        let (yddot_c, yddot_l) =
            restore_absorbed_expect(params, &self.grid, &ydot_c, &ydot_l, &working)?;
        Ok(AugExpectations {
            y_plus: vec![0.0; self.grid.detector_bins()],
            ydot_plus: deblurred.to_vec(),
            ydot_c,
            ydot_l,
            yddot_c,
            yddot_l,
            working,
            thin: params.absorption.thin_probs(&self.grid),
        })
    }
}

/// Free-parameter labels in the fixed reporting order: continuum, then
/// line, then absorption scale.
pub fn spectral_labels(template: &SpectralParams) -> Vec<String> {
    let mut labels = Vec::new();
    match &template.continuum {
        crate::model::ContinuumSpec::PowerLaw { .. } => {
            labels.push("gamma".into());
            labels.push("beta".into());
        }
        crate::model::ContinuumSpec::Free { theta, .. } => {
            for j in 1..=theta.len() {
                labels.push(format!("theta_{j}"));
            }
        }
    }
    match &template.line {
        LineSpec::None => {}
        LineSpec::Gaussian { .. } => {
            labels.push("nu".into());
            labels.push("mu".into());
            labels.push("sigma2".into());
        }
        LineSpec::Delta { .. } => labels.push("nu".into()),
    }
    if template.absorption.is_free() {
        labels.push("xi".into());
    }
    labels
}

/// Free-parameter values in the order of [`spectral_labels`].
pub fn spectral_values(params: &SpectralParams) -> Vec<f64> {
    let mut v = Vec::new();
    match &params.continuum {
        crate::model::ContinuumSpec::PowerLaw { gamma, beta } => {
            v.push(*gamma);
            v.push(*beta);
        }
        crate::model::ContinuumSpec::Free { theta, .. } => v.extend_from_slice(theta),
    }
    match &params.line {
        LineSpec::None => {}
        LineSpec::Gaussian { nu, mu, sigma2 } => {
            v.push(*nu);
            v.push(*mu);
            v.push(*sigma2);
        }
        LineSpec::Delta { nu, .. } => v.push(*nu),
    }
    if let crate::model::AbsorptionKind::Exponential { xi } = params.absorption.kind {
        v.push(xi);
    }
    v
}

impl FitProblem for SpectralProblem {
    type Params = SpectralParams;
    type Stats = AugExpectations;

    fn param_labels(&self) -> Vec<String> {
        spectral_labels(&self.template)
    }

    fn param_vector(&self, params: &SpectralParams) -> Vec<f64> {
        spectral_values(params)
    }

    fn loglik(&self, params: &SpectralParams) -> Result<f64, FitError> {
        Ok(observed_loglik(params, &self.grid, &self.rsp, &self.data)?)
    }

    fn cm_steps(&self) -> Vec<CmStep> {
        self.steps
            .iter()
            .map(|s| CmStep::new(s.block.label(), s.aug))
            .collect()
    }

    fn e_step(&self, params: &SpectralParams) -> Result<AugExpectations, FitError> {
        let working = self.working(params)?;
        Ok(e_step_full(params, &self.grid, &self.rsp, &self.data, &working)?)
    }

    fn apply_step(
        &self,
        params: &SpectralParams,
        index: usize,
        stats: Option<&AugExpectations>,
    ) -> Result<SpectralParams, FitError> {
        let step = self.steps[index];
        match step.block {
            SpectralBlock::LineCenter => self.search_line_center(params),
            block => {
                let stats = stats.ok_or_else(|| {
                    FitError::Usage(format!(
                        "step `{}` conditions on an augmentation but got no statistics",
                        block.label()
                    ))
                })?;
                match block {
                    SpectralBlock::AllBlocks => self.update_all(params, stats),
                    SpectralBlock::Continuum => self.update_continuum(params, stats),
                    SpectralBlock::Line => self.update_line(params, stats),
                    SpectralBlock::Absorption => self.update_absorption(params, stats),
                    SpectralBlock::LineCenter => unreachable!(),
                }
            }
        }
    }
}

impl McemProblem for SpectralProblem {
    fn impute_stats(&self, params: &SpectralParams, seed: u64) -> Result<AugExpectations, FitError> {
        let working = self.working(params)?;
        let draw = impute_full(params, &self.grid, &self.rsp, &self.data, &working, seed)?;
        let to_f64 = |v: &[u64]| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
        Ok(AugExpectations {
            y_plus: to_f64(&draw.y_plus),
            ydot_plus: to_f64(&draw.ydot_plus),
            ydot_c: to_f64(&draw.ydot_c),
            ydot_l: to_f64(&draw.ydot_l),
            yddot_c: to_f64(&draw.yddot_c),
            yddot_l: to_f64(&draw.yddot_l),
            working,
            thin: params.absorption.thin_probs(&self.grid),
        })
    }

    fn average_stats(&self, draws: &[AugExpectations]) -> AugExpectations {
        let n = draws.len() as f64;
        let mean = |field: fn(&AugExpectations) -> &Vec<f64>| -> Vec<f64> {
            let len = field(&draws[0]).len();
            let mut acc = vec![0.0; len];
            for d in draws {
                for (a, &v) in acc.iter_mut().zip(field(d)) {
                    *a += v;
                }
            }
            acc.iter_mut().for_each(|a| *a /= n);
            acc
        };
        AugExpectations {
            y_plus: mean(|d| &d.y_plus),
            ydot_plus: mean(|d| &d.ydot_plus),
            ydot_c: mean(|d| &d.ydot_c),
            ydot_l: mean(|d| &d.ydot_l),
            yddot_c: mean(|d| &d.yddot_c),
            yddot_l: mean(|d| &d.yddot_l),
            working: draws[0].working,
            thin: draws[0].thin.clone(),
        }
    }
}

impl NestedProblem for SpectralProblem {
    /// Expected deblurred background-free counts per ideal bin.
    type OuterStats = Vec<f64>;

    fn outer_e_step(&self, params: &SpectralParams) -> Result<Vec<f64>, FitError> {
        let y_plus = strip_background_expect(params, &self.grid, &self.rsp, &self.data)?;
        Ok(deblur_expect(params, &self.grid, &self.rsp, &y_plus)?)
    }

    fn inner_cycle(
        &self,
        params: &SpectralParams,
        deblurred: &Vec<f64>,
    ) -> Result<SpectralParams, FitError> {
        let stats = self.stats_from_deblurred(params, deblurred)?;
        self.update_all(params, &stats)
    }

    fn inner_objective(
        &self,
        params: &SpectralParams,
        deblurred: &Vec<f64>,
    ) -> Result<f64, FitError> {
        let rates = thinned_intensity(params, &self.grid)?;
        let mut val = smoothing_log_prior(&params.continuum);
        for (&w, &rate) in deblurred.iter().zip(&rates) {
            if w > 0.0 {
                if rate <= 0.0 {
                    return Err(FitError::Model(ModelError::Domain(format!(
                        "deblurred mass {w} in a bin with zero model intensity"
                    ))));
                }
                val += w * rate.ln();
            }
            val -= rate;
        }
        Ok(val)
    }
}

impl PxemProblem for SpectralProblem {
    fn px_step(&self, params: &SpectralParams) -> Result<PxUpdate<SpectralParams>, FitError> {
        let stats = e_step_full(
            params,
            &self.grid,
            &self.rsp,
            &self.data,
            &WorkingAugmentation::none(),
        )?;
        let after = self.update_continuum(params, &stats)?;
        let after = self.update_absorption(&after, &stats)?;
        let (line, boundary) = self.expanded_line_update(params, &after, &stats)?;
        let mut next = after;
        next.line = line;
        Ok(PxUpdate {
            params: next,
            boundary,
        })
    }
}

/// Instance generator for tests and the bundled comparison data: a power
/// law with a Gaussian line under exponential absorption and mild blur,
/// sized by the grid dimensions.
pub fn standard_instance(
    detector_bins: usize,
    ideal_bins: usize,
    rng: &mut impl Rng,
) -> (EnergyGrid, ResponseMatrix, SpectralParams) {
    let lo = 1.0;
    let hi = 6.0;
    let edges: Vec<f64> = (0..=ideal_bins)
        .map(|k| lo + (hi - lo) * k as f64 / ideal_bins as f64)
        .collect();
    let grid = EnergyGrid::from_edges(detector_bins, edges).unwrap();
    let width = (hi - lo) / ideal_bins as f64;
    // Each ideal bin spreads over nearby detector bins with a geometric
    // kernel; column sums land a touch below one, so every column leaks a
    // little off the detector.
    let mut dense = vec![0.0; detector_bins * ideal_bins];
    for j in 0..ideal_bins {
        let center = j as f64 * detector_bins as f64 / ideal_bins as f64;
        let mut col = 0.0;
        for i in 0..detector_bins {
            let dist = (i as f64 - center).abs();
            dense[i * ideal_bins + j] = (-1.2 * dist).exp();
            col += dense[i * ideal_bins + j];
        }
        let keep = rng.random_range(0.95..1.0);
        for i in 0..detector_bins {
            dense[i * ideal_bins + j] *= keep / col;
        }
    }
    let rsp = ResponseMatrix::from_dense(detector_bins, ideal_bins, dense).unwrap();
    // Keep the line narrow relative to the grid so it stays identifiable
    // against the continuum.
    let mu = rng.random_range(lo + 1.0..hi - 1.0);
    let params = SpectralParams {
        continuum: crate::model::ContinuumSpec::PowerLaw {
            gamma: rng.random_range(20.0..60.0),
            beta: rng.random_range(0.3..1.2),
        },
        line: LineSpec::Gaussian {
            nu: rng.random_range(30.0..120.0),
            mu,
            sigma2: rng.random_range(0.6 * width..1.5 * width).powi(2),
        },
        absorption: crate::model::AbsorptionSpec {
            kind: crate::model::AbsorptionKind::Exponential {
                xi: rng.random_range(0.2..1.0),
            },
            effective_area: (0..ideal_bins)
                .map(|_| rng.random_range(0.75..1.0))
                .collect(),
        },
        background: (0..detector_bins)
            .map(|_| rng.random_range(0.0..1.5))
            .collect(),
    };
    (grid, rsp, params)
}
