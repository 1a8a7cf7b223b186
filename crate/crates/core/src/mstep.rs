//! Parameter updates given expected latent counts.
//!
//! Each update maximizes (or at least never decreases) the piece of the
//! complete-data expected log posterior that involves its block, holding
//! the other blocks fixed. The moment formulas for the line and the Newton
//! steps for the log-linear blocks are exact maximizers only in the limit
//! of fine bins and a fully contained line, so every update is guarded by
//! a damping loop on its conditional objective. The guard makes each step
//! a generalized (ascent) step, which is what the monotone convergence of
//! the surrounding drivers relies on.
//!
//! When the expectations were computed under a working reduction `a`, the
//! augmented ideal counts cover only part of each source's intensity:
//! `1 - a` of it where the restore step ran, the surviving fraction alone
//! where its floored intensity hit zero. The updates below weight their
//! intensity terms by exactly that per-bin coverage so the fixed point is
//! unchanged; a uniform `1 - a` would miss the floored bins and push the
//! step off the true surrogate.

use crate::augmentation::AugExpectations;
use crate::error::ModelError;
use crate::grid::EnergyGrid;
use crate::model::{
    line_bin_probs, line_probs_or_zero, sigma2_floor, AbsorptionKind, AbsorptionSpec,
    ContinuumSpec, LineSpec, SpectralParams,
};

pub(crate) const DAMP_LIMIT: u32 = 60;

/// Expected line counts, center, and width from weighted bin moments,
/// guarded so the conditional objective cannot decrease.
pub fn m_step_line(
    expected: &AugExpectations,
    grid: &EnergyGrid,
    current: &LineSpec,
) -> Result<LineSpec, ModelError> {
    let w = &expected.yddot_l;
    if w.len() != grid.ideal_bins() {
        return Err(ModelError::Dimension(format!(
            "{} line expectations for {} ideal bins",
            w.len(),
            grid.ideal_bins()
        )));
    }
    if w.iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(ModelError::Domain(
            "line expectations must be finite and >= 0".into(),
        ));
    }
    let a = expected.working.line_a_min;
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        // No line mass imputed: the intensity drops to zero and the shape
        // parameters carry no information, so they stay put.
        return Ok(match *current {
            LineSpec::None => LineSpec::None,
            LineSpec::Gaussian { mu, sigma2, .. } => LineSpec::Gaussian {
                nu: 0.0,
                mu,
                sigma2,
            },
            LineSpec::Delta { bin, .. } => LineSpec::Delta { nu: 0.0, bin },
        });
    }
    match *current {
        LineSpec::None => Err(ModelError::Domain(
            "line mass imputed for a model without a line component".into(),
        )),
        // A delta line cannot move: any other bin has zero profile mass and
        // an infinitely bad complete-data objective. Only its size updates,
        // and its one support bin's coverage is the exact denominator.
        LineSpec::Delta { bin, .. } => Ok(LineSpec::Delta {
            nu: total / expected.restored_scale(bin, a),
            bin,
        }),
        LineSpec::Gaussian { mu, sigma2, .. } => {
            let mu_new: f64 = grid
                .means()
                .iter()
                .zip(w)
                .map(|(&e, &wj)| e * wj)
                .sum::<f64>()
                / total;
            let var_new: f64 = grid
                .means()
                .iter()
                .zip(w)
                .map(|(&e, &wj)| (e - mu_new).powi(2) * wj)
                .sum::<f64>()
                / total;
            let sigma2_new = var_new.max(sigma2_floor(grid));
            // The amplitude maximizer at a given shape divides by the
            // coverage-weighted profile mass still on the grid. Dropping
            // the off-grid part makes a line near an edge shrink a little
            // every cycle; dropping the per-bin coverage misprices tail
            // bins whose restore floor binds.
            let s: Vec<f64> = (0..w.len()).map(|j| expected.restored_scale(j, a)).collect();
            let denom: f64 = match line_bin_probs(
                &LineSpec::Gaussian {
                    nu: 1.0,
                    mu: mu_new,
                    sigma2: sigma2_new,
                },
                grid,
            ) {
                Ok(p) => p.iter().zip(&s).map(|(&pj, &sj)| pj * sj).sum(),
                Err(_) => 0.0,
            };
            if !(denom > 0.0) {
                return Ok(LineSpec::Gaussian {
                    nu: current.nu(),
                    mu,
                    sigma2,
                });
            }
            let cand = [total / denom, mu_new, sigma2_new];
            let cur = [current.nu(), mu, sigma2];
            let h_cur = gaussian_line_objective(grid, w, &s, cur[0], cur[1], cur[2]);
            let mut t = 1.0;
            for _ in 0..DAMP_LIMIT {
                let p: Vec<f64> = (0..3).map(|k| cur[k] + t * (cand[k] - cur[k])).collect();
                let h = gaussian_line_objective(grid, w, &s, p[0], p[1], p[2]);
                if h.is_finite() && h >= h_cur {
                    return Ok(LineSpec::Gaussian {
                        nu: p[0],
                        mu: p[1],
                        sigma2: p[2],
                    });
                }
                if !h_cur.is_finite() {
                    // Nothing to beat and the candidate is broken too.
                    break;
                }
                t *= 0.5;
            }
            Ok(LineSpec::Gaussian {
                nu: cur[0],
                mu,
                sigma2,
            })
        }
    }
}

/// Conditional objective for the Gaussian line block, up to terms constant
/// in (nu, mu, sigma2): `sum_j w_j log(nu p_j) - nu sum_j p_j s_j`, with
/// `s_j` the per-bin coverage of the augmentation.
fn gaussian_line_objective(
    grid: &EnergyGrid,
    w: &[f64],
    s: &[f64],
    nu: f64,
    mu: f64,
    sigma2: f64,
) -> f64 {
    if !(sigma2 > 0.0) || !(nu > 0.0) {
        return f64::NEG_INFINITY;
    }
    let probs = match line_bin_probs(
        &LineSpec::Gaussian {
            nu: 1.0,
            mu,
            sigma2,
        },
        grid,
    ) {
        Ok(p) => p,
        Err(_) => return f64::NEG_INFINITY,
    };
    let mut h = 0.0;
    for ((&wj, &pj), &sj) in w.iter().zip(&probs).zip(s) {
        if wj > 0.0 {
            if pj <= 0.0 {
                return f64::NEG_INFINITY;
            }
            h += wj * (nu * pj).ln();
        }
        h -= nu * pj * sj;
    }
    h
}

/// Result of a power-law update. `fell_back` marks a degenerate curvature
/// in the index direction (all bin energies equal, or no continuum mass),
/// in which case the index is left where it was.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerLawUpdate {
    pub continuum: ContinuumSpec,
    pub fell_back: bool,
}

/// Amplitude by closed form, index by one guarded Newton step.
///
/// With the index fixed the amplitude has the Poisson closed form
/// `gamma = S / sum_j c_j E_j^(-beta)`, so the update profiles the
/// amplitude out and takes a Newton step on the index alone. The profiled
/// objective is concave, and step-halving keeps the step an ascent.
pub fn cm_step_powerlaw(
    expected: &AugExpectations,
    grid: &EnergyGrid,
    current: &ContinuumSpec,
) -> Result<PowerLawUpdate, ModelError> {
    let (_, beta_cur) = match *current {
        ContinuumSpec::PowerLaw { gamma, beta } => (gamma, beta),
        ContinuumSpec::Free { .. } => {
            return Err(ModelError::Invalid(
                "power-law update applied to a free continuum".into(),
            ))
        }
    };
    let w = &expected.yddot_c;
    if w.len() != grid.ideal_bins() {
        return Err(ModelError::Dimension(format!(
            "{} continuum expectations for {} ideal bins",
            w.len(),
            grid.ideal_bins()
        )));
    }
    let scale = 1.0 - expected.working.continuum_a_min;
    let exposures: Vec<f64> = grid.widths().iter().map(|&d| d * scale).collect();
    let s: f64 = w.iter().sum();
    if s <= 0.0 {
        return Ok(PowerLawUpdate {
            continuum: current.clone(),
            fell_back: true,
        });
    }
    let u: f64 = w
        .iter()
        .zip(grid.means())
        .map(|(&wj, &e)| wj * e.ln())
        .sum();
    // Profiled objective of beta and its first two derivatives, via the
    // exposure-weighted moments of log E under E^(-beta).
    let moments = |beta: f64| -> (f64, f64, f64) {
        let mut t = 0.0;
        let mut v = 0.0;
        let mut x = 0.0;
        for (&c, &e) in exposures.iter().zip(grid.means()) {
            let base = c * e.powf(-beta);
            let le = e.ln();
            t += base;
            v += base * le;
            x += base * le * le;
        }
        (t, v, x)
    };
    let phi = |beta: f64| -> f64 {
        let (t, _, _) = moments(beta);
        s * (s / t).ln() - beta * u - s
    };
    let (t0, v0, x0) = moments(beta_cur);
    let grad = s * v0 / t0 - u;
    let curv = -s * (x0 * t0 - v0 * v0) / (t0 * t0);
    if !(curv < -1e-12 * s) || !grad.is_finite() {
        // No usable curvature: the amplitude still has its closed form.
        return Ok(PowerLawUpdate {
            continuum: ContinuumSpec::PowerLaw {
                gamma: s / t0,
                beta: beta_cur,
            },
            fell_back: true,
        });
    }
    let mut step = -grad / curv;
    let phi_cur = phi(beta_cur);
    for _ in 0..DAMP_LIMIT {
        let beta_new = beta_cur + step;
        let val = phi(beta_new);
        if val.is_finite() && val >= phi_cur {
            let (t_new, _, _) = moments(beta_new);
            return Ok(PowerLawUpdate {
                continuum: ContinuumSpec::PowerLaw {
                    gamma: s / t_new,
                    beta: beta_new,
                },
                fell_back: false,
            });
        }
        step *= 0.5;
    }
    Ok(PowerLawUpdate {
        continuum: ContinuumSpec::PowerLaw {
            gamma: s / t0,
            beta: beta_cur,
        },
        fell_back: false,
    })
}

/// Maximizer of `w log(theta) - c theta - oL/2 (theta-tL)^2 - oR/2 (tR-theta)^2`
/// over `theta >= 0`.
///
/// Setting the derivative to zero and multiplying by theta gives the
/// quadratic `A theta^2 - 2 B theta - w = 0` with `A = oL + oR` and
/// `B = -(c - oL tL - oR tR) / 2`; the positive root is the maximizer. With
/// no smoothing the quadratic degenerates and the plain Poisson maximizer
/// `w / c` is the limit.
pub fn smoothed_poisson_root(
    w: f64,
    c: f64,
    omega_left: f64,
    theta_left: f64,
    omega_right: f64,
    theta_right: f64,
) -> f64 {
    let a = omega_left + omega_right;
    if a == 0.0 {
        return w / c;
    }
    let b = -(c - omega_left * theta_left - omega_right * theta_right) / 2.0;
    ((b + (b * b + a * w).sqrt()) / a).max(0.0)
}

/// One pass of coordinate-wise closed-form updates for a smoothed free
/// continuum. Bins update in order, each seeing its left neighbor already
/// updated and its right neighbor not yet.
pub fn free_continuum_update(
    weights: &[f64],
    exposures: &[f64],
    omega: &[f64],
    current: &[f64],
) -> Vec<f64> {
    let j_n = current.len();
    let mut theta = current.to_vec();
    for j in 0..j_n {
        let (ol, tl) = if j > 0 {
            (omega[j - 1], theta[j - 1])
        } else {
            (0.0, 0.0)
        };
        let (or, tr) = if j + 1 < j_n {
            (omega[j], theta[j + 1])
        } else {
            (0.0, 0.0)
        };
        theta[j] = smoothed_poisson_root(weights[j], exposures[j], ol, tl, or, tr);
    }
    theta
}

/// Free-continuum update from expected ideal continuum counts.
pub fn cm_step_free_continuum(
    expected: &AugExpectations,
    grid: &EnergyGrid,
    current: &ContinuumSpec,
) -> Result<ContinuumSpec, ModelError> {
    let (theta, omega) = match current {
        ContinuumSpec::Free { theta, omega } => (theta, omega),
        ContinuumSpec::PowerLaw { .. } => {
            return Err(ModelError::Invalid(
                "free-continuum update applied to a power law".into(),
            ))
        }
    };
    let w = &expected.yddot_c;
    if w.len() != grid.ideal_bins() || theta.len() != grid.ideal_bins() {
        return Err(ModelError::Dimension(format!(
            "{} continuum expectations for {} ideal bins",
            w.len(),
            grid.ideal_bins()
        )));
    }
    if w.iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(ModelError::Domain(
            "continuum expectations must be finite and >= 0".into(),
        ));
    }
    let scale = 1.0 - expected.working.continuum_a_min;
    let exposures: Vec<f64> = grid.widths().iter().map(|&d| d * scale).collect();
    Ok(ContinuumSpec::Free {
        theta: free_continuum_update(w, &exposures, omega, theta),
        omega: omega.clone(),
    })
}

/// Absorption scale by one guarded Newton step on its conditional
/// objective, with the other blocks held at the values in `params`.
///
/// Surviving counts pull the scale down, restored counts push it up. The
/// restore step imputes with per-bin intensity floored at zero, so where
/// the floor binds the coverage `q + c` moves with the scale and the
/// intensity terms stay in the objective; everywhere else they are flat
/// and the objective reduces to the plain thinning likelihood. The
/// objective is concave on the unclamped side, and step-halving plus a
/// floor at zero keeps the step a feasible ascent. When nothing was
/// restored and no reduction is active the maximizer sits at the boundary
/// and the scale goes straight to zero.
pub fn cm_step_absorption(
    expected: &AugExpectations,
    grid: &EnergyGrid,
    params: &SpectralParams,
) -> Result<AbsorptionSpec, ModelError> {
    let current = &params.absorption;
    let xi_cur = match current.kind {
        AbsorptionKind::Exponential { xi } => xi,
        AbsorptionKind::None => {
            return Err(ModelError::Invalid(
                "absorption update applied to a model without absorption".into(),
            ))
        }
    };
    let j_n = grid.ideal_bins();
    if expected.ydot_c.len() != j_n || expected.yddot_c.len() != j_n {
        return Err(ModelError::Dimension(format!(
            "{} expectations for {} ideal bins",
            expected.ydot_c.len(),
            j_n
        )));
    }
    let flux = params.continuum.flux(grid)?;
    let pi_c: Vec<f64> = grid
        .widths()
        .iter()
        .zip(&flux)
        .map(|(&d, &f)| d * f)
        .collect();
    let nu = params.line.nu();
    let pi_l: Vec<f64> = line_probs_or_zero(&params.line, grid)?
        .iter()
        .map(|&p| nu * p)
        .collect();
    // Per-source surviving counts, ideal counts, intensities, and the
    // working reduction that decides where the restore floor binds.
    let sources = [
        (
            &expected.ydot_c,
            &expected.yddot_c,
            &pi_c,
            expected.working.continuum_a_min,
        ),
        (
            &expected.ydot_l,
            &expected.yddot_l,
            &pi_l,
            expected.working.line_a_min,
        ),
    ];
    let restored_total: f64 = sources
        .iter()
        .flat_map(|(surv, ideal, _, _)| {
            surv.iter().zip(ideal.iter()).map(|(&s, &i)| (i - s).max(0.0))
        })
        .sum();
    let reduced =
        expected.working.continuum_a_min > 0.0 || expected.working.line_a_min > 0.0;
    if restored_total <= 0.0 && !reduced {
        return Ok(AbsorptionSpec {
            kind: AbsorptionKind::Exponential { xi: 0.0 },
            effective_area: current.effective_area.clone(),
        });
    }
    let objective = |xi: f64| -> f64 {
        if xi < 0.0 {
            return f64::NEG_INFINITY;
        }
        let mut val = 0.0;
        for (surv, ideal, pi, a) in &sources {
            for j in 0..j_n {
                let q = current.effective_area[j] * (-xi / grid.means()[j]).exp();
                let c = (1.0 - q - a).max(0.0);
                let rest = (ideal[j] - surv[j]).max(0.0);
                if surv[j] > 0.0 {
                    if q <= 0.0 {
                        return f64::NEG_INFINITY;
                    }
                    val += surv[j] * q.ln();
                }
                if rest > 0.0 {
                    if c <= 0.0 {
                        return f64::NEG_INFINITY;
                    }
                    val += rest * c.ln();
                }
                val -= pi[j] * (q + c);
            }
        }
        val
    };
    let mut grad = 0.0;
    let mut curv = 0.0;
    for (surv, ideal, pi, a) in &sources {
        for j in 0..j_n {
            let e = grid.means()[j];
            let q = current.effective_area[j] * (-xi_cur / e).exp();
            let rest = (ideal[j] - surv[j]).max(0.0);
            let comp = 1.0 - q - a;
            grad -= surv[j] / e;
            if comp > 0.0 {
                if rest > 0.0 {
                    grad += rest * q / (e * comp);
                    curv -= rest * q * (1.0 - a) / (e * e * comp * comp);
                }
            } else {
                // Floor bound: `q + c = q` here, so the intensity term is
                // the one that moves.
                grad += pi[j] * q / e;
                curv -= pi[j] * q / (e * e);
            }
        }
    }
    let obj_cur = objective(xi_cur);
    let mut step = if curv < -1e-300 {
        -grad / curv
    } else if grad != 0.0 {
        // No curvature signal: probe a unit-scale move uphill and let the
        // halvings size it.
        grad.signum() * (1.0 + xi_cur)
    } else {
        0.0
    };
    if step == 0.0 {
        return Ok(current.clone());
    }
    for _ in 0..DAMP_LIMIT {
        let xi_new = (xi_cur + step).max(0.0);
        let val = objective(xi_new);
        if val.is_finite() && val >= obj_cur {
            return Ok(AbsorptionSpec {
                kind: AbsorptionKind::Exponential { xi: xi_new },
                effective_area: current.effective_area.clone(),
            });
        }
        step *= 0.5;
    }
    Ok(current.clone())
}
