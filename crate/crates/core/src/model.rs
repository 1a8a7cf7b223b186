//! Poisson spectral forward model.
//!
//! Photon intensity on an ideal energy grid is a smooth continuum plus an
//! optional narrow emission line:
//!
//! ```text
//! lambda_j = delta_j * f(continuum, E_j) + nu * p_j(mu, sigma2)
//! ```
//!
//! Photons survive absorption and the detector's effective area with
//! probability `d_j * g_j`, are blurred into detector channels by the
//! response matrix, and are observed on top of a known background, giving
//! independent Poisson counts with means
//!
//! ```text
//! xi_i = sum_j M_ij * lambda_j * d_j * g_j + b_i
//! ```
//!
//! This module holds the parameter types, the forward evaluation, the log
//! likelihood, and the simulator. Parameter updates live in
//! [`crate::mstep`], conditional reconstruction of the latent counts in
//! [`crate::augmentation`].

use crate::augmentation::AugmentedCounts;
use crate::draws::{draw_binomial, draw_multinomial, draw_poisson};
use crate::error::ModelError;
use crate::grid::{EnergyGrid, ResponseMatrix};
use crate::rng::{substream, Level};

/// Continuum component: intensity per unit energy at each ideal bin.
#[derive(Debug, Clone, PartialEq)]
pub enum ContinuumSpec {
    /// `f(E) = gamma * E^(-beta)`.
    PowerLaw { gamma: f64, beta: f64 },
    /// One free nonnegative intensity per ideal bin, with optional smoothing.
    ///
    /// `omega[k]` penalizes the jump between bins `k` and `k + 1`: each
    /// interior intensity is a priori normal around its left neighbor with
    /// precision `omega[k]`, and the first bin is unconstrained.
    Free { theta: Vec<f64>, omega: Vec<f64> },
}

impl ContinuumSpec {
    /// Flat spectrum in photons per unit energy, without smoothing.
    pub fn flat(level: f64, bins: usize) -> Self {
        ContinuumSpec::Free {
            theta: vec![level; bins],
            omega: vec![0.0; bins.saturating_sub(1)],
        }
    }

    /// Intensity per unit energy at each mean energy.
    pub fn flux(&self, grid: &EnergyGrid) -> Result<Vec<f64>, ModelError> {
        match self {
            ContinuumSpec::PowerLaw { gamma, beta } => Ok(grid
                .means()
                .iter()
                .map(|&e| gamma * e.powf(-beta))
                .collect()),
            ContinuumSpec::Free { theta, .. } => {
                if theta.len() != grid.ideal_bins() {
                    return Err(ModelError::Dimension(format!(
                        "{} continuum intensities for {} ideal bins",
                        theta.len(),
                        grid.ideal_bins()
                    )));
                }
                Ok(theta.clone())
            }
        }
    }

    fn validate(&self, grid: &EnergyGrid) -> Result<(), ModelError> {
        match self {
            ContinuumSpec::PowerLaw { gamma, beta } => {
                if !(*gamma > 0.0) || !gamma.is_finite() {
                    return Err(ModelError::Invalid(format!(
                        "power-law amplitude must be positive, got {gamma}"
                    )));
                }
                if !beta.is_finite() {
                    return Err(ModelError::Invalid("power-law index must be finite".into()));
                }
            }
            ContinuumSpec::Free { theta, omega } => {
                if theta.len() != grid.ideal_bins() {
                    return Err(ModelError::Dimension(format!(
                        "{} continuum intensities for {} ideal bins",
                        theta.len(),
                        grid.ideal_bins()
                    )));
                }
                if omega.len() != grid.ideal_bins().saturating_sub(1) {
                    return Err(ModelError::Dimension(format!(
                        "{} smoothing weights for {} ideal bins (need J-1)",
                        omega.len(),
                        grid.ideal_bins()
                    )));
                }
                if theta.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(ModelError::Invalid(
                        "free continuum intensities must be finite and >= 0".into(),
                    ));
                }
                if omega.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(ModelError::Invalid(
                        "smoothing weights must be finite and >= 0".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Emission line component.
#[derive(Debug, Clone, PartialEq)]
pub enum LineSpec {
    None,
    /// Expected line counts `nu` spread over bins by a truncated Gaussian
    /// profile; mass outside the grid is dropped, not renormalized.
    Gaussian { nu: f64, mu: f64, sigma2: f64 },
    /// All `nu` expected counts concentrated in one ideal bin.
    Delta { nu: f64, bin: usize },
}

impl LineSpec {
    /// Expected line counts (zero when no line is present).
    pub fn nu(&self) -> f64 {
        match self {
            LineSpec::None => 0.0,
            LineSpec::Gaussian { nu, .. } | LineSpec::Delta { nu, .. } => *nu,
        }
    }

    fn validate(&self, grid: &EnergyGrid) -> Result<(), ModelError> {
        match self {
            LineSpec::None => Ok(()),
            LineSpec::Gaussian { nu, mu, sigma2 } => {
                if !(*nu >= 0.0) || !nu.is_finite() {
                    return Err(ModelError::Invalid(format!(
                        "line counts must be >= 0, got {nu}"
                    )));
                }
                if !mu.is_finite() {
                    return Err(ModelError::Invalid("line center must be finite".into()));
                }
                if !(*sigma2 > 0.0) || !sigma2.is_finite() {
                    return Err(ModelError::Invalid(format!(
                        "line width must be positive, got sigma2 = {sigma2}"
                    )));
                }
                Ok(())
            }
            LineSpec::Delta { nu, bin } => {
                if !(*nu >= 0.0) || !nu.is_finite() {
                    return Err(ModelError::Invalid(format!(
                        "line counts must be >= 0, got {nu}"
                    )));
                }
                if *bin >= grid.ideal_bins() {
                    return Err(ModelError::Dimension(format!(
                        "delta line in bin {bin} of a {}-bin grid",
                        grid.ideal_bins()
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Smallest admissible Gaussian line variance for a grid.
///
/// A Gaussian narrower than a tenth of the finest bin is indistinguishable
/// from a delta line at this resolution; updates clamp here instead of
/// collapsing.
pub fn sigma2_floor(grid: &EnergyGrid) -> f64 {
    let s = grid.min_width() / 10.0;
    s * s
}

/// Photon survival: absorption curve and effective area.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorptionSpec {
    pub kind: AbsorptionKind,
    /// Effective area `d_j` of each ideal bin, in [0, 1].
    pub effective_area: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AbsorptionKind {
    None,
    /// Survival `g(E) = exp(-xi / E)` with `xi >= 0`, so `g` is a
    /// probability that grows with energy.
    Exponential { xi: f64 },
}

impl AbsorptionSpec {
    /// No absorption and unit effective area everywhere.
    pub fn transparent(bins: usize) -> Self {
        AbsorptionSpec {
            kind: AbsorptionKind::None,
            effective_area: vec![1.0; bins],
        }
    }

    /// Survival probability `g_j` from absorption alone.
    pub fn survival(&self, grid: &EnergyGrid) -> Vec<f64> {
        match self.kind {
            AbsorptionKind::None => vec![1.0; grid.ideal_bins()],
            AbsorptionKind::Exponential { xi } => {
                grid.means().iter().map(|&e| (-xi / e).exp()).collect()
            }
        }
    }

    /// Combined survival `d_j * g_j`: the thinning probability of each bin.
    pub fn thin_probs(&self, grid: &EnergyGrid) -> Vec<f64> {
        let mut g = self.survival(grid);
        for (gj, &dj) in g.iter_mut().zip(&self.effective_area) {
            *gj *= dj;
        }
        g
    }

    /// Whether the absorption carries a parameter the fit can move.
    pub fn is_free(&self) -> bool {
        matches!(self.kind, AbsorptionKind::Exponential { .. })
    }

    fn validate(&self, grid: &EnergyGrid) -> Result<(), ModelError> {
        if self.effective_area.len() != grid.ideal_bins() {
            return Err(ModelError::Dimension(format!(
                "{} effective-area entries for {} ideal bins",
                self.effective_area.len(),
                grid.ideal_bins()
            )));
        }
        if self
            .effective_area
            .iter()
            .any(|d| !d.is_finite() || !(0.0..=1.0).contains(d))
        {
            return Err(ModelError::Invalid(
                "effective area entries must lie in [0, 1]".into(),
            ));
        }
        if let AbsorptionKind::Exponential { xi } = self.kind {
            if !(xi >= 0.0) || !xi.is_finite() {
                return Err(ModelError::Invalid(format!(
                    "absorption scale must be >= 0, got {xi}"
                )));
            }
        }
        Ok(())
    }
}

/// Full parameter set: fitted components plus the known background.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralParams {
    pub continuum: ContinuumSpec,
    pub line: LineSpec,
    pub absorption: AbsorptionSpec,
    /// Known expected background counts per detector channel; never fitted.
    pub background: Vec<f64>,
}

impl SpectralParams {
    pub fn validate(&self, grid: &EnergyGrid, rsp: &ResponseMatrix) -> Result<(), ModelError> {
        if rsp.cols() != grid.ideal_bins() || rsp.rows() != grid.detector_bins() {
            return Err(ModelError::Dimension(format!(
                "{}x{} response for {} detector / {} ideal bins",
                rsp.rows(),
                rsp.cols(),
                grid.detector_bins(),
                grid.ideal_bins()
            )));
        }
        if self.background.len() != grid.detector_bins() {
            return Err(ModelError::Dimension(format!(
                "{} background entries for {} detector bins",
                self.background.len(),
                grid.detector_bins()
            )));
        }
        if self.background.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(ModelError::Invalid(
                "background must be finite and >= 0".into(),
            ));
        }
        self.continuum.validate(grid)?;
        self.line.validate(grid)?;
        self.absorption.validate(grid)
    }
}

/// Observed detector counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservedSpectrum {
    pub counts: Vec<u64>,
}

impl ObservedSpectrum {
    pub fn new(counts: Vec<u64>) -> Self {
        ObservedSpectrum { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub(crate) fn std_normal_cdf(z: f64) -> f64 {
    use statrs::distribution::ContinuousCDF;
    use statrs::distribution::Normal;
    Normal::standard().cdf(z)
}

/// Probability that a line photon lands in each ideal bin.
///
/// Gaussian lines integrate the profile over each bin; mass beyond the grid
/// edges is lost, so the probabilities sum to at most one.
pub fn line_bin_probs(line: &LineSpec, grid: &EnergyGrid) -> Result<Vec<f64>, ModelError> {
    match line {
        LineSpec::None => Err(ModelError::Invalid(
            "no line component to take bin probabilities of".into(),
        )),
        LineSpec::Gaussian { mu, sigma2, .. } => {
            if !(*sigma2 > 0.0) {
                return Err(ModelError::Invalid(format!(
                    "line width must be positive, got sigma2 = {sigma2}"
                )));
            }
            let sigma = sigma2.sqrt();
            let edges = grid.edges();
            let cdfs: Vec<f64> = edges
                .iter()
                .map(|&e| std_normal_cdf((e - mu) / sigma))
                .collect();
            Ok(cdfs.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect())
        }
        LineSpec::Delta { bin, .. } => {
            line.validate(grid)?;
            let mut p = vec![0.0; grid.ideal_bins()];
            p[*bin] = 1.0;
            Ok(p)
        }
    }
}

/// Like [`line_bin_probs`] but yielding zeros when no line is present.
pub(crate) fn line_probs_or_zero(
    line: &LineSpec,
    grid: &EnergyGrid,
) -> Result<Vec<f64>, ModelError> {
    match line {
        LineSpec::None => Ok(vec![0.0; grid.ideal_bins()]),
        _ => line_bin_probs(line, grid),
    }
}

/// Expected source counts `lambda_j` per ideal bin, before absorption.
pub fn bin_intensity(params: &SpectralParams, grid: &EnergyGrid) -> Result<Vec<f64>, ModelError> {
    params.continuum.validate(grid)?;
    params.line.validate(grid)?;
    let flux = params.continuum.flux(grid)?;
    let probs = line_probs_or_zero(&params.line, grid)?;
    let nu = params.line.nu();
    Ok(grid
        .widths()
        .iter()
        .zip(flux.iter().zip(&probs))
        .map(|(&w, (&f, &p))| w * f + nu * p)
        .collect())
}

/// Expected source counts per ideal bin after absorption: `lambda_j d_j g_j`.
pub(crate) fn thinned_intensity(
    params: &SpectralParams,
    grid: &EnergyGrid,
) -> Result<Vec<f64>, ModelError> {
    let mut lambda = bin_intensity(params, grid)?;
    for (l, t) in lambda.iter_mut().zip(params.absorption.thin_probs(grid)) {
        *l *= t;
    }
    Ok(lambda)
}

/// Expected detector counts `xi_i`, background included.
pub fn expected_counts(
    params: &SpectralParams,
    grid: &EnergyGrid,
    rsp: &ResponseMatrix,
) -> Result<Vec<f64>, ModelError> {
    params.validate(grid, rsp)?;
    let thinned = thinned_intensity(params, grid)?;
    Ok((0..grid.detector_bins())
        .map(|i| {
            let blurred: f64 = rsp
                .row(i)
                .iter()
                .zip(&thinned)
                .map(|(&m, &l)| m * l)
                .sum();
            blurred + params.background[i]
        })
        .collect())
}

/// Smoothing penalty of a free continuum; zero for all other continua.
pub(crate) fn smoothing_log_prior(continuum: &ContinuumSpec) -> f64 {
    match continuum {
        ContinuumSpec::Free { theta, omega } => -0.5
            * omega
                .iter()
                .zip(theta.windows(2))
                .map(|(&w, pair)| w * (pair[1] - pair[0]).powi(2))
                .sum::<f64>(),
        ContinuumSpec::PowerLaw { .. } => 0.0,
    }
}

/// Observed-data log likelihood `sum_i [Y_i ln xi_i - xi_i]`, dropping the
/// count-factorial constant, plus the continuum smoothing penalty when one
/// is configured.
pub fn observed_loglik(
    params: &SpectralParams,
    grid: &EnergyGrid,
    rsp: &ResponseMatrix,
    data: &ObservedSpectrum,
) -> Result<f64, ModelError> {
    if data.counts.len() != grid.detector_bins() {
        return Err(ModelError::Dimension(format!(
            "{} observed counts for {} detector bins",
            data.counts.len(),
            grid.detector_bins()
        )));
    }
    let xi = expected_counts(params, grid, rsp)?;
    let mut ll = 0.0;
    for (i, (&y, &x)) in data.counts.iter().zip(&xi).enumerate() {
        if y > 0 {
            if x <= 0.0 {
                return Err(ModelError::Domain(format!(
                    "expected count of bin {i} is zero but {y} photons observed"
                )));
            }
            ll += y as f64 * x.ln();
        }
        ll -= x;
    }
    Ok(ll + smoothing_log_prior(&params.continuum))
}

/// Simulate one observation, returning both the detector counts and the
/// latent truth at every level of the hierarchy. Deterministic given `seed`.
pub fn simulate_spectrum(
    params: &SpectralParams,
    grid: &EnergyGrid,
    rsp: &ResponseMatrix,
    seed: u64,
) -> Result<(ObservedSpectrum, AugmentedCounts), ModelError> {
    params.validate(grid, rsp)?;
    let jn = grid.ideal_bins();
    let in_ = grid.detector_bins();
    let flux = params.continuum.flux(grid)?;
    let probs = line_probs_or_zero(&params.line, grid)?;
    let nu = params.line.nu();
    let thin = params.absorption.thin_probs(grid);

    let mut aug = AugmentedCounts::zeros(in_, jn);
    for j in 0..jn {
        let cont_mean = grid.widths()[j] * flux[j];
        aug.yddot_c[j] = draw_poisson(&mut substream(seed, Level::IdealContinuum, j), cont_mean);
        aug.yddot_l[j] = draw_poisson(&mut substream(seed, Level::IdealLine, j), nu * probs[j]);
        aug.ydot_c[j] = draw_binomial(
            &mut substream(seed, Level::ThinContinuum, j),
            aug.yddot_c[j],
            thin[j],
        );
        aug.ydot_l[j] = draw_binomial(
            &mut substream(seed, Level::ThinLine, j),
            aug.yddot_l[j],
            thin[j],
        );
        aug.ydot_plus[j] = aug.ydot_c[j] + aug.ydot_l[j];
    }

    for j in 0..jn {
        let column: Vec<f64> = (0..in_).map(|i| rsp.get(i, j)).collect();
        let scatter = draw_multinomial(
            &mut substream(seed, Level::Blur, j),
            aug.ydot_plus[j],
            &column,
        );
        for (i, &c) in scatter.iter().enumerate() {
            aug.y_plus[i] += c;
        }
    }

    let mut observed = vec![0u64; in_];
    for i in 0..in_ {
        let bg = draw_poisson(&mut substream(seed, Level::Background, i), params.background[i]);
        observed[i] = aug.y_plus[i] + bg;
    }
    Ok((ObservedSpectrum::new(observed), aug))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_grid(bins: usize) -> EnergyGrid {
        let edges: Vec<f64> = (0..=bins).map(|k| 1.0 + k as f64).collect();
        EnergyGrid::from_edges(bins, edges).unwrap()
    }

    fn flat_params(level: f64, grid: &EnergyGrid) -> SpectralParams {
        SpectralParams {
            continuum: ContinuumSpec::flat(level, grid.ideal_bins()),
            line: LineSpec::None,
            absorption: AbsorptionSpec::transparent(grid.ideal_bins()),
            background: vec![0.0; grid.detector_bins()],
        }
    }

    #[test]
    fn flat_free_continuum_without_line_gives_constant_intensity() {
        let grid = unit_grid(4);
        let lambda = bin_intensity(&flat_params(3.0, &grid), &grid).unwrap();
        assert_eq!(lambda, vec![3.0; 4]);
    }

    #[test]
    fn unit_power_law_with_zero_index_gives_unit_intensity() {
        let grid = unit_grid(3);
        let mut params = flat_params(0.0, &grid);
        params.continuum = ContinuumSpec::PowerLaw {
            gamma: 1.0,
            beta: 0.0,
        };
        let lambda = bin_intensity(&params, &grid).unwrap();
        for l in lambda {
            assert_abs_diff_eq!(l, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn gaussian_line_mass_in_single_bin_matches_cdf_difference() {
        let grid = EnergyGrid::from_edges(1, vec![1.95, 2.05]).unwrap();
        let mut params = flat_params(0.0, &grid);
        params.continuum = ContinuumSpec::flat(0.0, 1);
        params.line = LineSpec::Gaussian {
            nu: 100.0,
            mu: 2.0,
            sigma2: 0.01,
        };
        let lambda = bin_intensity(&params, &grid).unwrap();
        let expect = 100.0 * (std_normal_cdf(0.5) - std_normal_cdf(-0.5));
        assert_abs_diff_eq!(lambda[0], expect, epsilon = 1e-12);
        assert_abs_diff_eq!(lambda[0], 38.292, epsilon = 1e-3);
    }

    #[test]
    fn line_probs_match_cdf_over_narrow_window() {
        let grid = EnergyGrid::from_edges(2, vec![1.9, 2.1, 4.0]).unwrap();
        let line = LineSpec::Gaussian {
            nu: 1.0,
            mu: 2.0,
            sigma2: 0.01,
        };
        let p = line_bin_probs(&line, &grid).unwrap();
        assert_abs_diff_eq!(p[0], 0.682689, epsilon = 1e-6);
    }

    #[test]
    fn delta_line_probs_are_an_indicator() {
        let grid = unit_grid(3);
        let line = LineSpec::Delta { nu: 5.0, bin: 1 };
        assert_eq!(line_bin_probs(&line, &grid).unwrap(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn line_probs_symmetric_about_centered_mean() {
        let grid = EnergyGrid::from_edges(4, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let line = LineSpec::Gaussian {
            nu: 1.0,
            mu: 3.0,
            sigma2: 0.5,
        };
        let p = line_bin_probs(&line, &grid).unwrap();
        assert_abs_diff_eq!(p[0], p[3], epsilon = 1e-14);
        assert_abs_diff_eq!(p[1], p[2], epsilon = 1e-14);
    }

    #[test]
    fn line_probs_total_matches_grid_span_mass() {
        let grid = EnergyGrid::from_edges(8, (0..=8).map(|k| 0.5 + k as f64 * 0.5).collect())
            .unwrap();
        let line = LineSpec::Gaussian {
            nu: 1.0,
            mu: 2.2,
            sigma2: 0.9,
        };
        let p = line_bin_probs(&line, &grid).unwrap();
        let sigma = 0.9f64.sqrt();
        let span = std_normal_cdf((4.5 - 2.2) / sigma) - std_normal_cdf((0.5 - 2.2) / sigma);
        assert_abs_diff_eq!(p.iter().sum::<f64>(), span, epsilon = 1e-10);
        assert!(p.iter().sum::<f64>() <= 1.0);
    }

    #[test]
    fn identity_response_without_degradation_passes_intensity_through() {
        let grid = unit_grid(3);
        let params = flat_params(2.5, &grid);
        let rsp = ResponseMatrix::identity(3);
        let xi = expected_counts(&params, &grid, &rsp).unwrap();
        let lambda = bin_intensity(&params, &grid).unwrap();
        assert_eq!(xi, lambda);
    }

    #[test]
    fn shared_half_half_columns_blend_and_add_background() {
        let grid = unit_grid(2);
        let mut params = flat_params(2.0, &grid);
        params.background = vec![1.0, 1.0];
        let rsp = ResponseMatrix::from_dense(2, 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let xi = expected_counts(&params, &grid, &rsp).unwrap();
        assert_abs_diff_eq!(xi[0], 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(xi[1], 3.0, epsilon = 1e-14);
    }

    #[test]
    fn full_columns_conserve_total_intensity() {
        let grid = unit_grid(3);
        let mut params = flat_params(1.7, &grid);
        params.absorption.effective_area = vec![0.9, 0.8, 0.7];
        let rsp = ResponseMatrix::from_dense(
            3,
            3,
            vec![0.2, 0.3, 0.5, 0.5, 0.3, 0.2, 0.3, 0.4, 0.3],
        )
        .unwrap();
        let xi = expected_counts(&params, &grid, &rsp).unwrap();
        let thinned = thinned_intensity(&params, &grid).unwrap();
        assert_abs_diff_eq!(
            xi.iter().sum::<f64>(),
            thinned.iter().sum::<f64>(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn loglik_of_zero_counts_is_negative_total_intensity() {
        let grid = unit_grid(2);
        let params = flat_params(1.0, &grid);
        let rsp = ResponseMatrix::identity(2);
        let ll = observed_loglik(&params, &grid, &rsp, &ObservedSpectrum::new(vec![0, 0])).unwrap();
        assert_abs_diff_eq!(ll, -2.0, epsilon = 1e-14);
    }

    #[test]
    fn loglik_matches_independent_poisson_logpmf_sum() {
        use statrs::distribution::{Discrete, Poisson};
        let grid = unit_grid(2);
        let mut params = flat_params(0.0, &grid);
        params.continuum = ContinuumSpec::Free {
            theta: vec![2.0, 3.0],
            omega: vec![0.0],
        };
        let rsp = ResponseMatrix::identity(2);
        let data = ObservedSpectrum::new(vec![2, 3]);
        let ll = observed_loglik(&params, &grid, &rsp, &data).unwrap();
        // Independent oracle: sum of Poisson log-pmfs with the dropped
        // factorial constant restored.
        let mut want = 0.0;
        for (&y, &xi) in data.counts.iter().zip(&[2.0f64, 3.0]) {
            want += Poisson::new(xi).unwrap().ln_pmf(y);
            want += statrs::function::gamma::ln_gamma(y as f64 + 1.0);
        }
        assert_abs_diff_eq!(ll, want, epsilon = 1e-12);
        assert_abs_diff_eq!(ll, 2.0 * 2.0f64.ln() - 2.0 + 3.0 * 3.0f64.ln() - 3.0, epsilon = 1e-12);
    }

    #[test]
    fn loglik_rejects_counts_where_intensity_vanishes() {
        let grid = unit_grid(2);
        let params = flat_params(0.0, &grid);
        let rsp = ResponseMatrix::identity(2);
        let r = observed_loglik(&params, &grid, &rsp, &ObservedSpectrum::new(vec![1, 0]));
        assert!(matches!(r, Err(ModelError::Domain(_))));
    }

    #[test]
    fn smoothing_penalty_enters_loglik() {
        let grid = unit_grid(3);
        let rsp = ResponseMatrix::identity(3);
        let data = ObservedSpectrum::new(vec![1, 1, 1]);
        let smooth = SpectralParams {
            continuum: ContinuumSpec::Free {
                theta: vec![1.0, 2.0, 4.0],
                omega: vec![1.0, 2.0],
            },
            ..flat_params(0.0, &grid)
        };
        let free = SpectralParams {
            continuum: ContinuumSpec::Free {
                theta: vec![1.0, 2.0, 4.0],
                omega: vec![0.0, 0.0],
            },
            ..flat_params(0.0, &grid)
        };
        let with = observed_loglik(&smooth, &grid, &rsp, &data).unwrap();
        let without = observed_loglik(&free, &grid, &rsp, &data).unwrap();
        // Penalty is -0.5 * (1*(2-1)^2 + 2*(4-2)^2) = -4.5.
        assert_abs_diff_eq!(with, without - 4.5, epsilon = 1e-12);
    }

    #[test]
    fn simulation_is_deterministic_given_seed() {
        let grid = unit_grid(4);
        let mut params = flat_params(5.0, &grid);
        params.line = LineSpec::Gaussian {
            nu: 20.0,
            mu: 3.0,
            sigma2: 0.25,
        };
        params.background = vec![0.5; 4];
        let rsp = ResponseMatrix::from_dense(
            4,
            4,
            vec![
                0.7, 0.2, 0.0, 0.0, 0.3, 0.6, 0.2, 0.0, 0.0, 0.2, 0.6, 0.3, 0.0, 0.0, 0.2, 0.7,
            ],
        )
        .unwrap();
        let (a1, l1) = simulate_spectrum(&params, &grid, &rsp, 99).unwrap();
        let (a2, l2) = simulate_spectrum(&params, &grid, &rsp, 99).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(l1, l2);
        let (b, _) = simulate_spectrum(&params, &grid, &rsp, 100).unwrap();
        assert_ne!(a1, b, "different seeds should give different data");
    }

    #[test]
    fn simulation_conserves_counts_with_full_columns_and_no_background() {
        let grid = unit_grid(3);
        let params = flat_params(30.0, &grid);
        let rsp = ResponseMatrix::from_dense(
            3,
            3,
            vec![0.2, 0.3, 0.5, 0.5, 0.3, 0.2, 0.3, 0.4, 0.3],
        )
        .unwrap();
        for seed in 0..50 {
            let (obs, aug) = simulate_spectrum(&params, &grid, &rsp, seed).unwrap();
            assert_eq!(obs.total(), aug.ydot_plus.iter().sum::<u64>());
            assert_eq!(obs.total(), aug.y_plus.iter().sum::<u64>());
        }
    }

    #[test]
    fn simulation_mean_tracks_expected_counts() {
        let grid = unit_grid(2);
        let mut params = flat_params(8.0, &grid);
        params.background = vec![2.0, 1.0];
        params.absorption.effective_area = vec![0.8, 0.9];
        let rsp = ResponseMatrix::from_dense(2, 2, vec![0.8, 0.3, 0.1, 0.6]).unwrap();
        let xi = expected_counts(&params, &grid, &rsp).unwrap();
        let reps = 20_000u64;
        let mut sums = [0.0f64; 2];
        for seed in 0..reps {
            let (obs, _) = simulate_spectrum(&params, &grid, &rsp, seed).unwrap();
            sums[0] += obs.counts[0] as f64;
            sums[1] += obs.counts[1] as f64;
        }
        for i in 0..2 {
            let mean = sums[i] / reps as f64;
            // 4 standard errors of a Poisson mean over `reps` draws.
            let band = 4.0 * (xi[i] / reps as f64).sqrt();
            assert!(
                (mean - xi[i]).abs() < band,
                "bin {i}: mean {mean} vs expectation {} (band {band})",
                xi[i]
            );
        }
    }

    #[test]
    fn delta_line_photons_all_land_in_their_bin() {
        let grid = unit_grid(3);
        let mut params = flat_params(0.0, &grid);
        params.line = LineSpec::Delta { nu: 50.0, bin: 2 };
        let rsp = ResponseMatrix::identity(3);
        let (_, aug) = simulate_spectrum(&params, &grid, &rsp, 5).unwrap();
        assert_eq!(aug.yddot_l[0], 0);
        assert_eq!(aug.yddot_l[1], 0);
        assert!(aug.yddot_l[2] > 0);
    }
}
