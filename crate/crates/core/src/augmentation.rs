//! Conditional reconstruction of the latent photon counts.
//!
//! The generative chain loses information in four places: absorbed photons,
//! source mixing, detector blurring, and background contamination. Each op
//! here inverts one stage by Bayes' rule, conditional on the current
//! parameters, in either exact-expectation or seeded-draw form. Chaining all
//! four from the observed counts yields the sufficient statistics of the
//! complete-data log posterior (the expectation form) or one imputation of
//! the full latent hierarchy (the draw form).
//!
//! Every conditional mean is linear in the count it conditions on, so
//! composing the expectation forms down the chain gives exact marginal
//! posterior means, not approximations.

use crate::draws::{draw_binomial, draw_multinomial, draw_poisson};
use crate::error::ModelError;
use crate::grid::{EnergyGrid, ResponseMatrix};
use crate::model::{
    bin_intensity, line_probs_or_zero, thinned_intensity, ObservedSpectrum, SpectralParams,
};
use crate::rng::{substream, Level};

/// Bins where a line component must be treated as present.
pub(crate) const LINE_SUPPORT_EPS: f64 = 1e-6;

/// One draw of the latent hierarchy.
///
/// `y_plus` are source photons per detector channel, `ydot_*` are photons
/// that survived to the detector per ideal bin, and `yddot_*` are the ideal
/// emitted photons per bin. Sources: `c` continuum, `l` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedCounts {
    pub y_plus: Vec<u64>,
    pub ydot_plus: Vec<u64>,
    pub ydot_c: Vec<u64>,
    pub ydot_l: Vec<u64>,
    pub yddot_c: Vec<u64>,
    pub yddot_l: Vec<u64>,
}

impl AugmentedCounts {
    pub(crate) fn zeros(detector_bins: usize, ideal_bins: usize) -> Self {
        AugmentedCounts {
            y_plus: vec![0; detector_bins],
            ydot_plus: vec![0; ideal_bins],
            ydot_c: vec![0; ideal_bins],
            ydot_l: vec![0; ideal_bins],
            yddot_c: vec![0; ideal_bins],
            yddot_l: vec![0; ideal_bins],
        }
    }

    /// Ordering invariants of the hierarchy. Panics on violation; these can
    /// only fail through a programming error, not through bad user input.
    pub fn assert_consistent(&self) {
        for j in 0..self.ydot_plus.len() {
            assert_eq!(
                self.ydot_plus[j],
                self.ydot_c[j] + self.ydot_l[j],
                "source split must preserve bin {j} total"
            );
            assert!(
                self.yddot_c[j] >= self.ydot_c[j] && self.yddot_l[j] >= self.ydot_l[j],
                "ideal counts in bin {j} below surviving counts"
            );
        }
    }
}

/// Conditional expectations of the latent hierarchy, same shape as
/// [`AugmentedCounts`], plus the working reduction they were computed under
/// and the survival probabilities in force at that point.
///
/// The survival probabilities matter to the updates because the restore
/// step floors its intensity at zero bin by bin: in bins absorbing less
/// than the working reduction assumes, the restored totals cover only the
/// surviving fraction, and the conditional objectives must weight those
/// bins accordingly or they drift off the true surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct AugExpectations {
    pub y_plus: Vec<f64>,
    pub ydot_plus: Vec<f64>,
    pub ydot_c: Vec<f64>,
    pub ydot_l: Vec<f64>,
    pub yddot_c: Vec<f64>,
    pub yddot_l: Vec<f64>,
    pub working: WorkingAugmentation,
    /// `d_j g_j` at the parameters the expectations were taken under.
    pub thin: Vec<f64>,
}

impl AugExpectations {
    /// Restored-count scale of bin `j` for a source reduced by `a`: the
    /// surviving fraction plus whatever the floored restore step adds back.
    pub fn restored_scale(&self, j: usize, a: f64) -> f64 {
        self.thin[j] + (1.0 - self.thin[j] - a).max(0.0)
    }
}

/// How much of the absorbed-photon imputation to skip.
///
/// The complete-data model stays valid if a constant absorption rate `a` is
/// left out of the restore step, provided `a` never exceeds the actual
/// absorption rate `1 - d_j g_j` on the component's support. Skipping
/// imputation shrinks the augmented information and speeds convergence
/// without changing the fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkingAugmentation {
    pub line_a_min: f64,
    pub continuum_a_min: f64,
}

impl WorkingAugmentation {
    /// Full imputation: restore every absorbed photon.
    pub fn none() -> Self {
        WorkingAugmentation {
            line_a_min: 0.0,
            continuum_a_min: 0.0,
        }
    }

    /// Largest legal reduction for the line at the current parameters: the
    /// lowest absorption rate over bins carrying line mass. The continuum's
    /// support is the whole grid, where the lowest rate is typically near
    /// zero, so its reduction stays off.
    pub fn auto(params: &SpectralParams, grid: &EnergyGrid) -> Result<Self, ModelError> {
        let probs = line_probs_or_zero(&params.line, grid)?;
        let thin = params.absorption.thin_probs(grid);
        let a = probs
            .iter()
            .zip(&thin)
            .filter(|(&p, _)| p > LINE_SUPPORT_EPS)
            .map(|(_, &t)| 1.0 - t)
            .fold(f64::INFINITY, f64::min);
        Ok(WorkingAugmentation {
            line_a_min: if a.is_finite() { a.max(0.0) } else { 0.0 },
            continuum_a_min: 0.0,
        })
    }

    /// Reduction for both components. The continuum's support is the whole
    /// grid, so its reduction is the lowest absorption rate anywhere; this
    /// is only worthwhile when every bin absorbs (heavy absorption or a
    /// uniformly small effective area).
    pub fn auto_with_continuum(
        params: &SpectralParams,
        grid: &EnergyGrid,
    ) -> Result<Self, ModelError> {
        let mut w = Self::auto(params, grid)?;
        let a = params
            .absorption
            .thin_probs(grid)
            .iter()
            .map(|&t| 1.0 - t)
            .fold(f64::INFINITY, f64::min);
        if a.is_finite() && a > 0.0 && a < 1.0 {
            w.continuum_a_min = a;
        }
        Ok(w)
    }

    fn validate(&self, params: &SpectralParams, grid: &EnergyGrid) -> Result<(), ModelError> {
        for (label, a) in [("line", self.line_a_min), ("continuum", self.continuum_a_min)] {
            if !(0.0..1.0).contains(&a) {
                return Err(ModelError::Invalid(format!(
                    "{label} reduction must lie in [0, 1), got {a}"
                )));
            }
        }
        let thin = params.absorption.thin_probs(grid);
        if self.line_a_min > 0.0 {
            let probs = line_probs_or_zero(&params.line, grid)?;
            for (j, (&p, &t)) in probs.iter().zip(&thin).enumerate() {
                if p > LINE_SUPPORT_EPS && self.line_a_min > (1.0 - t) + 1e-12 {
                    return Err(ModelError::Invalid(format!(
                        "line reduction {} exceeds the absorption rate {} of bin {j}",
                        self.line_a_min,
                        1.0 - t
                    )));
                }
            }
        }
        if self.continuum_a_min > 0.0 {
            for (j, &t) in thin.iter().enumerate() {
                if self.continuum_a_min > (1.0 - t) + 1e-12 {
                    return Err(ModelError::Invalid(format!(
                        "continuum reduction {} exceeds the absorption rate {} of bin {j}",
                        self.continuum_a_min,
                        1.0 - t
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_counts_len(len: usize, want: usize, what: &str) -> Result<(), ModelError> {
    if len != want {
        return Err(ModelError::Dimension(format!(
            "{len} {what} entries, expected {want}"
        )));
    }
    Ok(())
}

/// Fraction of each channel's counts that are source rather than background.
fn source_fractions(
    params: &SpectralParams,
    grid: &EnergyGrid,
    rsp: &ResponseMatrix,
) -> Result<Vec<f64>, ModelError> {
    let xi = crate::model::expected_counts(params, grid, rsp)?;
    Ok(xi
        .iter()
        .zip(&params.background)
        .map(|(&x, &b)| if x > 0.0 { (x - b) / x } else { 0.0 })
        .collect())
}

/// Expected source counts per channel given the observation.
///
/// Background photons are Poisson with known mean, so each observed count is
/// source with probability `(xi_i - b_i) / xi_i` independently.
pub fn strip_background_expect(
    params: &SpectralParams,
    grid: &EnergyGrid,
    rsp: &ResponseMatrix,
    data: &ObservedSpectrum,
) -> Result<Vec<f64>, ModelError> {
    check_counts_len(data.counts.len(), grid.detector_bins(), "observed count")?;
    let frac = source_fractions(params, grid, rsp)?;
    Ok(data
        .counts
        .iter()
        .zip(&frac)
        .map(|(&y, &f)| y as f64 * f)
        .collect())
}

/// Seeded draw of the source counts per channel; see
/// [`strip_background_expect`].
pub fn strip_background_draw(
    params: &SpectralParams,
    grid: &EnergyGrid,
    rsp: &ResponseMatrix,
    data: &ObservedSpectrum,
    seed: u64,
) -> Result<Vec<u64>, ModelError> {
    check_counts_len(data.counts.len(), grid.detector_bins(), "observed count")?;
    let frac = source_fractions(params, grid, rsp)?;
    Ok(data
        .counts
        .iter()
        .zip(&frac)
        .enumerate()
        .map(|(i, (&y, &f))| draw_binomial(&mut substream(seed, Level::StripBackground, i), y, f))
        .collect())
}

/// Origin probabilities for photons seen in one detector channel.
///
/// A photon in channel `i` came from ideal bin `j` with probability
/// proportional to `M_ij * lambda_j d_j g_j`.
fn origin_weights(
    rsp: &ResponseMatrix,
    thinned: &[f64],
    i: usize,
) -> Result<Vec<f64>, ModelError> {
    let row = rsp.row(i);
    let mut w: Vec<f64> = row.iter().zip(thinned).map(|(&m, &l)| m * l).collect();
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(ModelError::Domain(format!(
            "channel {i} has photons but zero expected source intensity"
        )));
    }
    for v in &mut w {
        *v /= total;
    }
    Ok(w)
}

/// Mean counts blurred off the detector from each ideal bin.
fn unseen_means(rsp: &ResponseMatrix, thinned: &[f64]) -> Vec<f64> {
    thinned
        .iter()
        .enumerate()
        .map(|(j, &l)| l * (1.0 - rsp.col_sum(j)).max(0.0))
        .collect()
}

/// Expected surviving photons per ideal bin given source counts per channel.
///
/// Channel counts redistribute over origins by Bayes' rule; photons blurred
/// off the detector are unobserved, so their posterior stays Poisson and
/// contributes its prior mean `lambda_j d_j g_j (1 - colsum_j)`.
pub fn deblur_expect(
    params: &SpectralParams,
    grid: &EnergyGrid,
    rsp: &ResponseMatrix,
    y_plus: &[f64],
) -> Result<Vec<f64>, ModelError> {
    check_counts_len(y_plus.len(), grid.detector_bins(), "channel count")?;
    let thinned = thinned_intensity(params, grid)?;
    let mut out = unseen_means(rsp, &thinned);
    for (i, &y) in y_plus.iter().enumerate() {
        if y == 0.0 {
            continue;
        }
        let w = origin_weights(rsp, &thinned, i)?;
        for (o, &wj) in out.iter_mut().zip(&w) {
            *o += y * wj;
        }
    }
    Ok(out)
}

/// Seeded draw of the surviving photons per ideal bin; see [`deblur_expect`].
pub fn deblur_draw(
    params: &SpectralParams,
    grid: &EnergyGrid,
    rsp: &ResponseMatrix,
    y_plus: &[u64],
    seed: u64,
) -> Result<Vec<u64>, ModelError> {
    check_counts_len(y_plus.len(), grid.detector_bins(), "channel count")?;
    let thinned = thinned_intensity(params, grid)?;
    let mut out = vec![0u64; grid.ideal_bins()];
    for (j, &m) in unseen_means(rsp, &thinned).iter().enumerate() {
        out[j] = draw_poisson(&mut substream(seed, Level::DeblurLost, j), m);
    }
    for (i, &y) in y_plus.iter().enumerate() {
        if y == 0 {
            continue;
        }
        let w = origin_weights(rsp, &thinned, i)?;
        let cells = draw_multinomial(&mut substream(seed, Level::Deblur, i), y, &w);
        for (o, c) in out.iter_mut().zip(cells) {
            *o += c;
        }
    }
    Ok(out)
}

/// Per-bin probability that a surviving photon is a line photon.
fn line_fractions(params: &SpectralParams, grid: &EnergyGrid) -> Result<Vec<f64>, ModelError> {
    let lambda = bin_intensity(params, grid)?;
    let probs = line_probs_or_zero(&params.line, grid)?;
    let nu = params.line.nu();
    Ok(lambda
        .iter()
        .zip(&probs)
        .map(|(&l, &p)| if l > 0.0 { nu * p / l } else { 0.0 })
        .collect())
}

fn check_split_feasible(
    lambda_zero: &[f64],
    counts_positive: impl Iterator<Item = (usize, bool)>,
) -> Result<(), ModelError> {
    for (j, positive) in counts_positive {
        if positive && lambda_zero[j] <= 0.0 {
            return Err(ModelError::Domain(format!(
                "bin {j} has photons but zero total intensity"
            )));
        }
    }
    Ok(())
}

/// Expected (continuum, line) counts per ideal bin given bin totals.
///
/// Within a bin the two sources are exchangeable Poisson streams, so each
/// photon is line with probability `nu p_j / lambda_j`.
pub fn split_sources_expect(
    params: &SpectralParams,
    grid: &EnergyGrid,
    ydot_plus: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    check_counts_len(ydot_plus.len(), grid.ideal_bins(), "ideal bin count")?;
    let lambda = bin_intensity(params, grid)?;
    check_split_feasible(&lambda, ydot_plus.iter().enumerate().map(|(j, &y)| (j, y > 0.0)))?;
    let frac = line_fractions(params, grid)?;
    let line: Vec<f64> = ydot_plus.iter().zip(&frac).map(|(&y, &q)| y * q).collect();
    let cont: Vec<f64> = ydot_plus.iter().zip(&line).map(|(&y, &l)| y - l).collect();
    Ok((cont, line))
}

/// Seeded draw of the source split; see [`split_sources_expect`].
pub fn split_sources_draw(
    params: &SpectralParams,
    grid: &EnergyGrid,
    ydot_plus: &[u64],
    seed: u64,
) -> Result<(Vec<u64>, Vec<u64>), ModelError> {
    check_counts_len(ydot_plus.len(), grid.ideal_bins(), "ideal bin count")?;
    let lambda = bin_intensity(params, grid)?;
    check_split_feasible(&lambda, ydot_plus.iter().enumerate().map(|(j, &y)| (j, y > 0)))?;
    let frac = line_fractions(params, grid)?;
    let mut line = vec![0u64; ydot_plus.len()];
    for (j, (&y, &q)) in ydot_plus.iter().zip(&frac).enumerate() {
        line[j] = draw_binomial(&mut substream(seed, Level::SplitSources, j), y, q);
    }
    let cont: Vec<u64> = ydot_plus.iter().zip(&line).map(|(&y, &l)| y - l).collect();
    Ok((cont, line))
}

/// Mean absorbed counts to impute per bin, after the working reduction.
///
/// Returns `(continuum, line)` rates. The reduction subtracts a constant
/// `a_min` from each absorption rate; legality is checked against the
/// component supports, and the tiny off-support line tail is clamped at
/// zero rather than policed.
fn restore_rates(
    params: &SpectralParams,
    grid: &EnergyGrid,
    working: &WorkingAugmentation,
) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    working.validate(params, grid)?;
    let thin = params.absorption.thin_probs(grid);
    let flux = params.continuum.flux(grid)?;
    let probs = line_probs_or_zero(&params.line, grid)?;
    let nu = params.line.nu();
    let mut cont = vec![0.0; grid.ideal_bins()];
    let mut line = vec![0.0; grid.ideal_bins()];
    for j in 0..grid.ideal_bins() {
        let absorbed = 1.0 - thin[j];
        cont[j] = grid.widths()[j] * flux[j] * (absorbed - working.continuum_a_min).max(0.0);
        line[j] = nu * probs[j] * (absorbed - working.line_a_min).max(0.0);
    }
    Ok((cont, line))
}

/// Expected ideal counts per bin given the surviving counts.
///
/// Absorbed photons are independent of the survivors, so the posterior adds
/// their prior Poisson mean.
pub fn restore_absorbed_expect(
    params: &SpectralParams,
    grid: &EnergyGrid,
    ydot_c: &[f64],
    ydot_l: &[f64],
    working: &WorkingAugmentation,
) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    check_counts_len(ydot_c.len(), grid.ideal_bins(), "continuum count")?;
    check_counts_len(ydot_l.len(), grid.ideal_bins(), "line count")?;
    let (eta_c, eta_l) = restore_rates(params, grid, working)?;
    let c = ydot_c.iter().zip(&eta_c).map(|(&y, &e)| y + e).collect();
    let l = ydot_l.iter().zip(&eta_l).map(|(&y, &e)| y + e).collect();
    Ok((c, l))
}

/// Seeded draw of the ideal counts; see [`restore_absorbed_expect`].
pub fn restore_absorbed_draw(
    params: &SpectralParams,
    grid: &EnergyGrid,
    ydot_c: &[u64],
    ydot_l: &[u64],
    working: &WorkingAugmentation,
    seed: u64,
) -> Result<(Vec<u64>, Vec<u64>), ModelError> {
    check_counts_len(ydot_c.len(), grid.ideal_bins(), "continuum count")?;
    check_counts_len(ydot_l.len(), grid.ideal_bins(), "line count")?;
    let (eta_c, eta_l) = restore_rates(params, grid, working)?;
    let mut c = vec![0u64; ydot_c.len()];
    let mut l = vec![0u64; ydot_l.len()];
    for j in 0..ydot_c.len() {
        c[j] = ydot_c[j] + draw_poisson(&mut substream(seed, Level::RestoreContinuum, j), eta_c[j]);
        l[j] = ydot_l[j] + draw_poisson(&mut substream(seed, Level::RestoreLine, j), eta_l[j]);
    }
    Ok((c, l))
}

/// Exact conditional expectations of the whole hierarchy given the data.
pub fn e_step_full(
    params: &SpectralParams,
    grid: &EnergyGrid,
    rsp: &ResponseMatrix,
    data: &ObservedSpectrum,
    working: &WorkingAugmentation,
) -> Result<AugExpectations, ModelError> {
    let y_plus = strip_background_expect(params, grid, rsp, data)?;
    let ydot_plus = deblur_expect(params, grid, rsp, &y_plus)?;
    let (ydot_c, ydot_l) = split_sources_expect(params, grid, &ydot_plus)?;
    let (yddot_c, yddot_l) = restore_absorbed_expect(params, grid, &ydot_c, &ydot_l, working)?;
    Ok(AugExpectations {
        y_plus,
        ydot_plus,
        ydot_c,
        ydot_l,
        yddot_c,
        yddot_l,
        working: *working,
        thin: params.absorption.thin_probs(grid),
    })
}

/// One seeded draw of the whole hierarchy given the data.
pub fn impute_full(
    params: &SpectralParams,
    grid: &EnergyGrid,
    rsp: &ResponseMatrix,
    data: &ObservedSpectrum,
    working: &WorkingAugmentation,
    seed: u64,
) -> Result<AugmentedCounts, ModelError> {
    let y_plus = strip_background_draw(params, grid, rsp, data, seed)?;
    let ydot_plus = deblur_draw(params, grid, rsp, &y_plus, seed)?;
    let (ydot_c, ydot_l) = split_sources_draw(params, grid, &ydot_plus, seed)?;
    let (yddot_c, yddot_l) =
        restore_absorbed_draw(params, grid, &ydot_c, &ydot_l, working, seed)?;
    Ok(AugmentedCounts {
        y_plus,
        ydot_plus,
        ydot_c,
        ydot_l,
        yddot_c,
        yddot_l,
    })
}
