//! Text formats for every file the tools read or write.
//!
//! Everything here is line-based CSV or flat `key = value` text so runs
//! diff cleanly and the formats stay hand-editable. Parsers take string
//! content, not paths; callers own file access. Blank lines and lines
//! starting with `#` are skipped everywhere, and every parse failure
//! reports the one-based line it happened on.
//!
//! Formats:
//!   grid      `detector_bins,<I>` header, then one edge per line (J+1 rows)
//!   response  `i,j,value` triplets, unlisted entries zero
//!   spectrum  `bin_index,count`, unlisted bins zero
//!   params    flat `key = value`, lists comma-separated, scalars broadcast
//!   trace     `iter,seconds,loglik,<labels...>`
//!   chain     `iter,<labels...>`
//!   latent    `level,bin,count` long form, one row per latent count
//!
//! Writers always emit the canonical header; parsers accept it optionally
//! (except the grid header, which carries data and is required).

use std::fmt::Write as _;

use crate::augmentation::AugmentedCounts;
use crate::em::Trace;
use crate::error::ParseError;
use crate::grid::{EnergyGrid, ResponseMatrix};
use crate::model::{
    AbsorptionKind, AbsorptionSpec, ContinuumSpec, LineSpec, ObservedSpectrum, SpectralParams,
};
use crate::sampler::{ChainOutput, Diagnostics};

/// Lines that carry content, with their one-based positions.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(idx, raw)| {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            None
        } else {
            Some((idx + 1, line))
        }
    })
}

fn fields(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

fn num<T: std::str::FromStr>(field: &str, line: usize, what: &str) -> Result<T, ParseError> {
    field
        .parse()
        .map_err(|_| ParseError::at(line, format!("expected {what}, got `{field}`")))
}

/// Parses a grid file: a `detector_bins,<I>` header followed by one energy
/// edge per line, low to high.
pub fn parse_grid(text: &str) -> Result<EnergyGrid, ParseError> {
    let mut lines = content_lines(text);
    let (header_line, header) = lines
        .next()
        .ok_or_else(|| ParseError::whole_file("empty grid file"))?;
    let f = fields(header);
    if f.len() != 2 || !f[0].eq_ignore_ascii_case("detector_bins") {
        return Err(ParseError::at(
            header_line,
            format!("expected `detector_bins,<count>` header, got `{header}`"),
        ));
    }
    let detector_bins: usize = num(f[1], header_line, "a detector bin count")?;

    let mut edges = Vec::new();
    for (line_no, line) in lines {
        let f = fields(line);
        if f.len() != 1 {
            return Err(ParseError::at(
                line_no,
                format!("expected a single edge value, got `{line}`"),
            ));
        }
        edges.push(num::<f64>(f[0], line_no, "an energy edge")?);
    }
    EnergyGrid::from_edges(detector_bins, edges)
        .map_err(|e| ParseError::whole_file(format!("invalid grid: {e}")))
}

pub fn format_grid(grid: &EnergyGrid) -> String {
    let mut out = format!("detector_bins,{}\n", grid.detector_bins());
    for edge in grid.edges() {
        let _ = writeln!(out, "{edge}");
    }
    out
}

/// Parses a response file of `i,j,value` triplets into a dense matrix with
/// the given shape. Unlisted entries are zero; listing one twice is an
/// error rather than a silent overwrite.
pub fn parse_response(text: &str, rows: usize, cols: usize) -> Result<ResponseMatrix, ParseError> {
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut lines = content_lines(text).peekable();
    if let Some(&(_, line)) = lines.peek() {
        if line.to_ascii_lowercase().replace(' ', "") == "i,j,value" {
            lines.next();
        }
    }
    for (line_no, line) in lines {
        let f = fields(line);
        if f.len() != 3 {
            return Err(ParseError::at(
                line_no,
                format!("expected `i,j,value`, got `{line}`"),
            ));
        }
        let i: usize = num(f[0], line_no, "a detector bin index")?;
        let j: usize = num(f[1], line_no, "an ideal bin index")?;
        let v: f64 = num(f[2], line_no, "a response entry")?;
        if i >= rows || j >= cols {
            return Err(ParseError::at(
                line_no,
                format!("entry ({i}, {j}) outside a {rows}x{cols} response"),
            ));
        }
        if triplets.iter().any(|&(a, b, _)| (a, b) == (i, j)) {
            return Err(ParseError::at(line_no, format!("duplicate entry ({i}, {j})")));
        }
        triplets.push((i, j, v));
    }
    ResponseMatrix::from_triplets(rows, cols, &triplets)
        .map_err(|e| ParseError::whole_file(format!("invalid response: {e}")))
}

/// Writes the nonzero entries in row-major order.
pub fn format_response(rsp: &ResponseMatrix) -> String {
    let mut out = String::from("i,j,value\n");
    for i in 0..rsp.rows() {
        for j in 0..rsp.cols() {
            let v = rsp.get(i, j);
            if v != 0.0 {
                let _ = writeln!(out, "{i},{j},{v}");
            }
        }
    }
    out
}

/// Parses a spectrum file of `bin_index,count` rows. Bins may appear in any
/// order; unlisted bins are zero.
pub fn parse_spectrum(text: &str, bins: usize) -> Result<ObservedSpectrum, ParseError> {
    let mut counts = vec![0u64; bins];
    let mut seen = vec![false; bins];
    let mut lines = content_lines(text).peekable();
    if let Some(&(_, line)) = lines.peek() {
        if line.to_ascii_lowercase().replace(' ', "") == "bin_index,count" {
            lines.next();
        }
    }
    for (line_no, line) in lines {
        let f = fields(line);
        if f.len() != 2 {
            return Err(ParseError::at(
                line_no,
                format!("expected `bin_index,count`, got `{line}`"),
            ));
        }
        let bin: usize = num(f[0], line_no, "a bin index")?;
        let count: u64 = num(f[1], line_no, "a count")?;
        if bin >= bins {
            return Err(ParseError::at(
                line_no,
                format!("bin {bin} outside the {bins}-bin spectrum"),
            ));
        }
        if seen[bin] {
            return Err(ParseError::at(line_no, format!("duplicate bin {bin}")));
        }
        seen[bin] = true;
        counts[bin] = count;
    }
    Ok(ObservedSpectrum::new(counts))
}

/// Writes every bin, zeros included.
pub fn format_spectrum(spectrum: &ObservedSpectrum) -> String {
    let mut out = String::from("bin_index,count\n");
    for (bin, count) in spectrum.counts.iter().enumerate() {
        let _ = writeln!(out, "{bin},{count}");
    }
    out
}

/// Model keys a params file may set. Run-option keys (`alg`, `tol`, ...)
/// live in the same file and are handled by [`parse_run_overrides`]; both
/// parsers reject anything outside the union so typos fail loudly.
const MODEL_KEYS: &[&str] = &[
    "continuum",
    "gamma",
    "beta",
    "theta",
    "omega",
    "line",
    "nu",
    "mu",
    "sigma2",
    "bin",
    "absorption",
    "xi",
    "area",
    "background",
];

const RUN_KEYS: &[&str] = &["alg", "tol", "max_iter", "inner_n", "mc_size", "amin", "seed"];

/// `key = value` pairs with their line numbers, duplicates rejected.
fn key_values(text: &str) -> Result<Vec<(usize, String, String)>, ParseError> {
    let mut pairs: Vec<(usize, String, String)> = Vec::new();
    for (line_no, line) in content_lines(text) {
        let (key, value) = line.split_once('=').ok_or_else(|| {
            ParseError::at(line_no, format!("expected `key = value`, got `{line}`"))
        })?;
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim().to_string();
        if !MODEL_KEYS.contains(&key.as_str()) && !RUN_KEYS.contains(&key.as_str()) {
            return Err(ParseError::at(line_no, format!("unknown key `{key}`")));
        }
        if pairs.iter().any(|(_, k, _)| *k == key) {
            return Err(ParseError::at(line_no, format!("duplicate key `{key}`")));
        }
        pairs.push((line_no, key, value));
    }
    Ok(pairs)
}

struct KeySet {
    pairs: Vec<(usize, String, String)>,
}

impl KeySet {
    fn get(&self, key: &str) -> Option<(usize, &str)> {
        self.pairs
            .iter()
            .find(|(_, k, _)| k == key)
            .map(|(line, _, v)| (*line, v.as_str()))
    }

    fn required(&self, key: &str) -> Result<(usize, &str), ParseError> {
        self.get(key)
            .ok_or_else(|| ParseError::whole_file(format!("missing key `{key}`")))
    }

    fn scalar(&self, key: &str) -> Result<f64, ParseError> {
        let (line, v) = self.required(key)?;
        num(v, line, "a number")
    }

    /// A comma list, or a single scalar broadcast to `len` entries.
    fn list(&self, key: &str, len: usize, default: Option<f64>) -> Result<Vec<f64>, ParseError> {
        match self.get(key) {
            None => match default {
                Some(d) => Ok(vec![d; len]),
                None => Err(ParseError::whole_file(format!("missing key `{key}`"))),
            },
            Some((line, v)) => {
                let parts: Vec<f64> = v
                    .split(',')
                    .map(|p| num(p.trim(), line, "a number"))
                    .collect::<Result<_, _>>()?;
                if parts.len() == 1 {
                    Ok(vec![parts[0]; len])
                } else if parts.len() == len {
                    Ok(parts)
                } else {
                    Err(ParseError::at(
                        line,
                        format!("`{key}` needs 1 or {len} values, got {}", parts.len()),
                    ))
                }
            }
        }
    }
}

/// Parses a model params file against a grid (list keys broadcast scalars
/// to the grid's bin counts). Structural checks only; the model layer
/// revalidates ranges when a fit or simulation is built.
pub fn parse_params(text: &str, grid: &EnergyGrid) -> Result<SpectralParams, ParseError> {
    let keys = KeySet {
        pairs: key_values(text)?,
    };
    let ideal = grid.ideal_bins();

    let continuum = match keys.required("continuum")? {
        (_, v) if v.eq_ignore_ascii_case("powerlaw") => ContinuumSpec::PowerLaw {
            gamma: keys.scalar("gamma")?,
            beta: keys.scalar("beta")?,
        },
        (_, v) if v.eq_ignore_ascii_case("free") => ContinuumSpec::Free {
            theta: keys.list("theta", ideal, None)?,
            omega: keys.list("omega", ideal.saturating_sub(1), Some(0.0))?,
        },
        (line, v) => {
            return Err(ParseError::at(
                line,
                format!("continuum must be `powerlaw` or `free`, got `{v}`"),
            ))
        }
    };

    let line_spec = match keys.get("line") {
        None => LineSpec::None,
        Some((_, v)) if v.eq_ignore_ascii_case("none") => LineSpec::None,
        Some((_, v)) if v.eq_ignore_ascii_case("gaussian") => LineSpec::Gaussian {
            nu: keys.scalar("nu")?,
            mu: keys.scalar("mu")?,
            sigma2: keys.scalar("sigma2")?,
        },
        Some((_, v)) if v.eq_ignore_ascii_case("delta") => LineSpec::Delta {
            nu: keys.scalar("nu")?,
            bin: {
                let (line, v) = keys.required("bin")?;
                num(v, line, "a bin index")?
            },
        },
        Some((line, v)) => {
            return Err(ParseError::at(
                line,
                format!("line must be `none`, `gaussian`, or `delta`, got `{v}`"),
            ))
        }
    };

    let kind = match keys.get("absorption") {
        None => AbsorptionKind::None,
        Some((_, v)) if v.eq_ignore_ascii_case("none") => AbsorptionKind::None,
        Some((_, v)) if v.eq_ignore_ascii_case("exponential") => AbsorptionKind::Exponential {
            xi: keys.scalar("xi")?,
        },
        Some((line, v)) => {
            return Err(ParseError::at(
                line,
                format!("absorption must be `none` or `exponential`, got `{v}`"),
            ))
        }
    };

    Ok(SpectralParams {
        continuum,
        line: line_spec,
        absorption: AbsorptionSpec {
            kind,
            effective_area: keys.list("area", ideal, Some(1.0))?,
        },
        background: keys.list("background", grid.detector_bins(), Some(0.0))?,
    })
}

/// Algorithm-run settings a params file may carry; flags override these.
/// All fields optional so the CLI can layer file, then flags, then defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOverrides {
    pub alg: Option<String>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub inner_n: Option<usize>,
    pub mc_size: Option<usize>,
    pub amin: Option<String>,
    pub seed: Option<u64>,
}

pub fn parse_run_overrides(text: &str) -> Result<RunOverrides, ParseError> {
    let mut out = RunOverrides::default();
    for (line_no, key, value) in key_values(text)? {
        match key.as_str() {
            "alg" => out.alg = Some(value),
            "tol" => out.tol = Some(num(&value, line_no, "a tolerance")?),
            "max_iter" => out.max_iter = Some(num(&value, line_no, "an iteration count")?),
            "inner_n" => out.inner_n = Some(num(&value, line_no, "an inner pass count")?),
            "mc_size" => out.mc_size = Some(num(&value, line_no, "a sample size")?),
            "amin" => out.amin = Some(value),
            "seed" => out.seed = Some(num(&value, line_no, "a seed")?),
            _ => {}
        }
    }
    Ok(out)
}

fn list_string(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Writes a params file in the explicit full-length form; round-trips
/// through [`parse_params`] exactly.
pub fn format_params(params: &SpectralParams) -> String {
    let mut out = String::new();
    match &params.continuum {
        ContinuumSpec::PowerLaw { gamma, beta } => {
            let _ = writeln!(out, "continuum = powerlaw");
            let _ = writeln!(out, "gamma = {gamma}");
            let _ = writeln!(out, "beta = {beta}");
        }
        ContinuumSpec::Free { theta, omega } => {
            let _ = writeln!(out, "continuum = free");
            let _ = writeln!(out, "theta = {}", list_string(theta));
            let _ = writeln!(out, "omega = {}", list_string(omega));
        }
    }
    match &params.line {
        LineSpec::None => {
            let _ = writeln!(out, "line = none");
        }
        LineSpec::Gaussian { nu, mu, sigma2 } => {
            let _ = writeln!(out, "line = gaussian");
            let _ = writeln!(out, "nu = {nu}");
            let _ = writeln!(out, "mu = {mu}");
            let _ = writeln!(out, "sigma2 = {sigma2}");
        }
        LineSpec::Delta { nu, bin } => {
            let _ = writeln!(out, "line = delta");
            let _ = writeln!(out, "nu = {nu}");
            let _ = writeln!(out, "bin = {bin}");
        }
    }
    match params.absorption.kind {
        AbsorptionKind::None => {
            let _ = writeln!(out, "absorption = none");
        }
        AbsorptionKind::Exponential { xi } => {
            let _ = writeln!(out, "absorption = exponential");
            let _ = writeln!(out, "xi = {xi}");
        }
    }
    let _ = writeln!(out, "area = {}", list_string(&params.absorption.effective_area));
    let _ = writeln!(out, "background = {}", list_string(&params.background));
    out
}

/// Writes a fit trace with the run's wall-clock column. Everything except
/// `seconds` is seed-deterministic.
pub fn format_trace(trace: &Trace) -> String {
    let mut out = String::from("iter,seconds,loglik");
    for label in &trace.param_labels {
        let _ = write!(out, ",{label}");
    }
    out.push('\n');
    for row in &trace.rows {
        let _ = write!(out, "{},{:.6},{}", row.iter, row.seconds, row.loglik);
        for p in &row.params {
            let _ = write!(out, ",{p}");
        }
        out.push('\n');
    }
    out
}

/// Writes every recorded draw, burn-in included, numbered from 0.
pub fn format_chain(chain: &ChainOutput) -> String {
    let mut out = String::from("iter");
    for label in &chain.labels {
        let _ = write!(out, ",{label}");
    }
    out.push('\n');
    for (iter, row) in chain.draws.iter().enumerate() {
        let _ = write!(out, "{iter}");
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Latent-count levels written by the simulator, one `level,bin,count` row
/// per entry. Ideal-bin levels first, then the detector-bin source counts.
pub fn format_latent(aug: &AugmentedCounts) -> String {
    let mut out = String::from("level,bin,count\n");
    let ideal_levels: [(&str, &[u64]); 5] = [
        ("ideal_continuum", &aug.yddot_c),
        ("ideal_line", &aug.yddot_l),
        ("surviving_continuum", &aug.ydot_c),
        ("surviving_line", &aug.ydot_l),
        ("surviving_total", &aug.ydot_plus),
    ];
    for (level, counts) in ideal_levels {
        for (bin, count) in counts.iter().enumerate() {
            let _ = writeln!(out, "{level},{bin},{count}");
        }
    }
    for (bin, count) in aug.y_plus.iter().enumerate() {
        let _ = writeln!(out, "detected_source,{bin},{count}");
    }
    out
}

/// Plain-text diagnostics table: one row per variable, then the worst
/// lag-one autocorrelation over the run's test functions if any were given.
pub fn format_diagnostics(diag: &Diagnostics, post_burn_len: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "draws after burn-in: {post_burn_len}");
    let _ = writeln!(
        out,
        "{:<14} {:>12} {:>12} {:>8} {:>10}",
        "variable", "mean", "sd", "lag1", "ess"
    );
    for (k, label) in diag.labels.iter().enumerate() {
        let lag1 = diag.autocorr[k].get(1).copied().unwrap_or(0.0);
        let ess = match diag.ess[k] {
            Some(e) => format!("{e:.0}"),
            None => "constant".to_string(),
        };
        let _ = writeln!(
            out,
            "{:<14} {:>12.5} {:>12.5} {:>8.3} {:>10}",
            label,
            diag.mean[k],
            diag.variance[k].sqrt(),
            lag1,
            ess
        );
    }
    if let Some(worst) = diag.max_lag1 {
        let _ = writeln!(out, "worst lag-1 autocorrelation over test functions: {worst:.3}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::TraceRow;

    fn grid4() -> EnergyGrid {
        EnergyGrid::from_edges(4, vec![1.0, 1.5, 2.2, 3.1, 4.5]).unwrap()
    }

    #[test]
    fn grid_round_trips() {
        let grid = grid4();
        let text = format_grid(&grid);
        let back = parse_grid(&text).unwrap();
        assert_eq!(back.detector_bins(), 4);
        assert_eq!(back.edges(), grid.edges());
    }

    #[test]
    fn grid_errors_name_the_line() {
        let err = parse_grid("detector_bins,4\n1.0\nbad\n2.0\n").unwrap_err();
        assert_eq!(err.line, 3);
        assert!(err.to_string().starts_with("line 3:"), "{err}");

        let err = parse_grid("4\n1.0\n2.0\n").unwrap_err();
        assert_eq!(err.line, 1);

        let err = parse_grid("").unwrap_err();
        assert_eq!(err.line, 0);

        // Edge ordering is a whole-file property.
        let err = parse_grid("detector_bins,2\n1.0\n0.5\n").unwrap_err();
        assert_eq!(err.line, 0);
        assert!(err.to_string().contains("invalid grid"), "{err}");
    }

    #[test]
    fn response_round_trips_and_rejects_duplicates() {
        let rsp = ResponseMatrix::from_dense(2, 2, vec![0.7, 0.2, 0.0, 0.6]).unwrap();
        let text = format_response(&rsp);
        let back = parse_response(&text, 2, 2).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(back.get(i, j), rsp.get(i, j));
            }
        }
        // The zero entry is unlisted.
        assert!(!text.lines().any(|l| l.starts_with("1,0,")));

        let err = parse_response("0,0,0.5\n0,0,0.4\n", 2, 2).unwrap_err();
        assert_eq!(err.line, 2);
        assert!(err.to_string().contains("duplicate"), "{err}");

        let err = parse_response("0,5,0.5\n", 2, 2).unwrap_err();
        assert_eq!(err.line, 1);
    }

    #[test]
    fn spectrum_round_trips_with_sparse_input() {
        let spectrum = ObservedSpectrum::new(vec![3, 0, 7, 1]);
        let text = format_spectrum(&spectrum);
        assert_eq!(parse_spectrum(&text, 4).unwrap(), spectrum);

        // Order-free and sparse: unlisted bins are zero.
        let sparse = parse_spectrum("3,1\n0,3\n2,7\n", 4).unwrap();
        assert_eq!(sparse, spectrum);

        let err = parse_spectrum("0,3\n0,4\n", 4).unwrap_err();
        assert_eq!(err.line, 2);
        let err = parse_spectrum("9,3\n", 4).unwrap_err();
        assert_eq!(err.line, 1);
        let err = parse_spectrum("0,-2\n", 4).unwrap_err();
        assert_eq!(err.line, 1);
    }

    #[test]
    fn params_round_trip_all_component_shapes() {
        let grid = grid4();
        let cases = [
            SpectralParams {
                continuum: ContinuumSpec::PowerLaw {
                    gamma: 50.0,
                    beta: 0.8,
                },
                line: LineSpec::Gaussian {
                    nu: 80.0,
                    mu: 2.5,
                    sigma2: 0.09,
                },
                absorption: AbsorptionSpec {
                    kind: AbsorptionKind::Exponential { xi: 0.5 },
                    effective_area: vec![1.0, 0.9, 0.8, 0.95],
                },
                background: vec![0.4, 0.4, 0.2, 0.1],
            },
            SpectralParams {
                continuum: ContinuumSpec::Free {
                    theta: vec![2.0, 3.0, 1.0, 0.5],
                    omega: vec![0.0, 0.0, 0.0],
                },
                line: LineSpec::Delta { nu: 12.0, bin: 2 },
                absorption: AbsorptionSpec::transparent(4),
                background: vec![0.0; 4],
            },
            SpectralParams {
                continuum: ContinuumSpec::PowerLaw {
                    gamma: 5.0,
                    beta: 0.0,
                },
                line: LineSpec::None,
                absorption: AbsorptionSpec::transparent(4),
                background: vec![0.0; 4],
            },
        ];
        for params in cases {
            let text = format_params(&params);
            assert_eq!(parse_params(&text, &grid).unwrap(), params, "{text}");
        }
    }

    #[test]
    fn params_broadcast_scalars_and_apply_defaults() {
        let grid = grid4();
        let params = parse_params(
            "continuum = powerlaw\ngamma = 10\nbeta = 1\narea = 0.9\n",
            &grid,
        )
        .unwrap();
        assert_eq!(params.absorption.effective_area, vec![0.9; 4]);
        assert_eq!(params.background, vec![0.0; 4]);
        assert_eq!(params.line, LineSpec::None);
        assert_eq!(params.absorption.kind, AbsorptionKind::None);

        // Free continuum with a broadcast level and defaulted smoothing.
        let params = parse_params("continuum = free\ntheta = 2.5\n", &grid).unwrap();
        assert_eq!(
            params.continuum,
            ContinuumSpec::Free {
                theta: vec![2.5; 4],
                omega: vec![0.0; 3],
            }
        );
    }

    #[test]
    fn params_reject_bad_keys_lines_and_lengths() {
        let grid = grid4();
        let err = parse_params("continuum = powerlaw\ngamma = 10\nbeta = 1\nwat = 3\n", &grid)
            .unwrap_err();
        assert_eq!(err.line, 4);
        assert!(err.to_string().contains("unknown key"), "{err}");

        let err = parse_params("continuum = powerlaw\ngamma = 10\ngamma = 11\nbeta = 1\n", &grid)
            .unwrap_err();
        assert_eq!(err.line, 3);

        let err = parse_params("continuum = powerlaw\nbeta = 1\n", &grid).unwrap_err();
        assert_eq!(err.line, 0);
        assert!(err.to_string().contains("`gamma`"), "{err}");

        let err = parse_params(
            "continuum = powerlaw\ngamma = 10\nbeta = 1\narea = 1,1\n",
            &grid,
        )
        .unwrap_err();
        assert_eq!(err.line, 4);
        assert!(err.to_string().contains("1 or 4"), "{err}");

        let err = parse_params("continuum = bent\n", &grid).unwrap_err();
        assert_eq!(err.line, 1);

        let err = parse_params("continuum: powerlaw\n", &grid).unwrap_err();
        assert_eq!(err.line, 1);
        assert!(err.to_string().contains("key = value"), "{err}");
    }

    #[test]
    fn params_ignore_comments_and_run_keys() {
        let grid = grid4();
        let text = "# model\ncontinuum = powerlaw # flavor\ngamma = 10\nbeta = 1\n\nalg = em\ntol = 1e-8\nseed = 7\n";
        let params = parse_params(text, &grid).unwrap();
        assert_eq!(
            params.continuum,
            ContinuumSpec::PowerLaw {
                gamma: 10.0,
                beta: 1.0
            }
        );
        let run = parse_run_overrides(text).unwrap();
        assert_eq!(run.alg.as_deref(), Some("em"));
        assert_eq!(run.tol, Some(1e-8));
        assert_eq!(run.seed, Some(7));
        assert_eq!(run.max_iter, None);
    }

    #[test]
    fn trace_and_chain_files_have_label_headers() {
        let trace = Trace {
            param_labels: vec!["gamma".into(), "beta".into()],
            rows: vec![
                TraceRow {
                    iter: 0,
                    seconds: 0.0,
                    loglik: -10.5,
                    params: vec![1.0, 2.0],
                },
                TraceRow {
                    iter: 1,
                    seconds: 0.25,
                    loglik: -9.0,
                    params: vec![1.5, 2.5],
                },
            ],
            converged: true,
            notes: vec![],
        };
        let text = format_trace(&trace);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("iter,seconds,loglik,gamma,beta"));
        assert_eq!(lines.next(), Some("0,0.000000,-10.5,1,2"));
        assert_eq!(lines.next(), Some("1,0.250000,-9,1.5,2.5"));

        let chain = ChainOutput {
            labels: vec!["theta".into()],
            draws: vec![vec![0.5], vec![0.75]],
            seed: 9,
            burn_in: 1,
        };
        let text = format_chain(&chain);
        assert_eq!(text, "iter,theta\n0,0.5\n1,0.75\n");
    }

    #[test]
    fn latent_file_is_long_form_by_level() {
        let aug = AugmentedCounts {
            y_plus: vec![5, 3],
            ydot_plus: vec![4, 4],
            ydot_c: vec![3, 2],
            ydot_l: vec![1, 2],
            yddot_c: vec![4, 2],
            yddot_l: vec![1, 3],
        };
        let text = format_latent(&aug);
        assert!(text.starts_with("level,bin,count\n"));
        assert!(text.contains("ideal_continuum,0,4\n"));
        assert!(text.contains("surviving_total,1,4\n"));
        assert!(text.contains("detected_source,1,3\n"));
        // level rows x bins plus the header.
        assert_eq!(text.lines().count(), 1 + 5 * 2 + 2);
    }

    #[test]
    fn diagnostics_report_is_a_readable_table() {
        let diag = Diagnostics {
            labels: vec!["theta".into(), "flat".into()],
            mean: vec![0.5, 1.0],
            variance: vec![0.04, 0.0],
            autocorr: vec![vec![1.0, 0.3], vec![1.0, 0.0]],
            ess: vec![Some(420.0), None],
            max_lag1: Some(0.3),
        };
        let text = format_diagnostics(&diag, 800);
        assert!(text.contains("draws after burn-in: 800"));
        assert!(text.contains("theta"));
        assert!(text.contains("420"));
        assert!(text.contains("constant"));
        assert!(text.contains("0.300"));
    }
}
