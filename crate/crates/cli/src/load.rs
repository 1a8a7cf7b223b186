//! Input loading: every failure becomes a parse error naming the file,
//! with the line number when one exists.

use std::fs;

use specfit::grid::{EnergyGrid, ResponseMatrix};
use specfit::io;
use specfit::model::{ObservedSpectrum, SpectralParams};

use crate::CliError;

pub fn read(path: &str) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Parse(format!("{path}: {e}")))
}

pub fn grid(path: &str) -> Result<EnergyGrid, CliError> {
    io::parse_grid(&read(path)?).map_err(|e| CliError::Parse(format!("{path}: {e}")))
}

pub fn response(path: &str, grid: &EnergyGrid) -> Result<ResponseMatrix, CliError> {
    io::parse_response(&read(path)?, grid.detector_bins(), grid.ideal_bins())
        .map_err(|e| CliError::Parse(format!("{path}: {e}")))
}

pub fn spectrum(path: &str, grid: &EnergyGrid) -> Result<ObservedSpectrum, CliError> {
    io::parse_spectrum(&read(path)?, grid.detector_bins())
        .map_err(|e| CliError::Parse(format!("{path}: {e}")))
}

/// The model values and any run-option keys from the same file.
pub fn params(
    path: &str,
    grid: &EnergyGrid,
) -> Result<(SpectralParams, io::RunOverrides), CliError> {
    let text = read(path)?;
    let params =
        io::parse_params(&text, grid).map_err(|e| CliError::Parse(format!("{path}: {e}")))?;
    let overrides =
        io::parse_run_overrides(&text).map_err(|e| CliError::Parse(format!("{path}: {e}")))?;
    Ok((params, overrides))
}

/// Writes into the run's output directory, creating it on first use.
pub fn write_out(dir: &str, name: &str, content: &str) -> Result<std::path::PathBuf, CliError> {
    fs::create_dir_all(dir)?;
    let path = std::path::Path::new(dir).join(name);
    fs::write(&path, content)?;
    Ok(path)
}
