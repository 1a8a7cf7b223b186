//! Error types shared across the crate.
//!
//! Three families: model construction/evaluation errors, fitter errors, and
//! sampler errors. Validation reports (step ordering, sampler plans) carry
//! enough structure to name the offending steps. File parsers report the
//! offending line.

use thiserror::Error;

/// A malformed input file. `line` is one-based; 0 means the defect is not
/// tied to a single line (a missing key, an empty file).
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl ParseError {
    pub fn at(line: usize, message: impl Into<String>) -> Self {
        ParseError {
            line,
            message: message.into(),
        }
    }

    pub fn whole_file(message: impl Into<String>) -> Self {
        Self::at(0, message)
    }
}

impl std::fmt::Display for ParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.line > 0 {
            write!(f, "line {}: {}", self.line, self.message)
        } else {
            write!(f, "{}", self.message)
        }
    }
}

/// Errors from model construction or evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("domain error: {0}")]
    Domain(String),
}

/// A step-ordering violation found by the fitter plan validator.
///
/// `first` and `second` are zero-based indices of the offending step pair:
/// `second` consumes expectations that `first` has invalidated.
#[derive(Debug, Clone, PartialEq, Error)]
#[error(
    "invalid step ordering: step {second} ({second_label}) uses augmented-data \
     expectations that are stale after step {first} ({first_label}); augmented \
     steps must precede direct steps between expectation refreshes"
)]
pub struct OrderingViolation {
    pub first: usize,
    pub first_label: String,
    pub second: usize,
    pub second_label: String,
}

/// Errors from the deterministic fit drivers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ordering(#[from] OrderingViolation),
    #[error("fit driver misuse: {0}")]
    Usage(String),
    #[error(
        "log likelihood decreased by {drop:.3e} at iteration {iter}; \
         monotone drivers must never decrease it (implementation bug)"
    )]
    NonMonotone { iter: usize, drop: f64 },
    #[error("non-finite value at iteration {iter}: {what}")]
    NonFinite { iter: usize, what: String },
}

/// A structural defect in a sampler plan.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanViolation {
    #[error("step {step}: variable `{var}` appears in both `{field_a}` and `{field_b}`")]
    Overlap {
        step: usize,
        var: String,
        field_a: &'static str,
        field_b: &'static str,
    },
    #[error("step {step}: unknown variable `{var}`")]
    UnknownVariable { step: usize, var: String },
    #[error("step {step}: variable `{var}` is neither drawn, conditioned on, nor marginalized out")]
    Incomplete { step: usize, var: String },
    #[error("variable `{var}` is never drawn by any step")]
    NotCovered { var: String },
    #[error(
        "step {conditioning_step} conditions on `{var}`, but its value is stale: \
         step {marginalizing_step} drew other variables with `{var}` marginalized \
         out and `{var}` is not redrawn in between"
    )]
    StaleConditioning {
        var: String,
        marginalizing_step: usize,
        conditioning_step: usize,
    },
    #[error(
        "variable `{var}` is still stale when the cycle ends: step \
         {marginalizing_step} marginalized it out and no later step redraws it, \
         so the recorded joint state does not have the target distribution"
    )]
    StaleAtCycleEnd { var: String, marginalizing_step: usize },
}

/// Errors from the samplers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplerError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Plan(#[from] PlanViolation),
    #[error("sampler misuse: {0}")]
    Usage(String),
    #[error("step {step} has no available conditional: {detail}")]
    MissingConditional { step: usize, detail: String },
    #[error("non-finite draw at iteration {iter}")]
    NonFinite { iter: usize },
    #[error("improper working prior refused: {0}")]
    ImproperWorkingPrior(String),
}
