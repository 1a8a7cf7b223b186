//! Fit step plans: one `block,aug` line per conditional-maximization step.
//!
//! Blocks name what the step updates (`all`, `continuum`, `line`,
//! `absorption`, `center`); the augmentation level says which statistics it
//! uses (`full`, `reduced`, `direct`). Parsing checks names only; whether
//! the order is legal is the drivers' validator's job, so a misordered
//! plan loads fine here and is rejected at run time with a report.

use specfit::em::AugLevel;
use specfit::error::ParseError;
use specfit::problems::spectral::{SpectralBlock, SpectralStep};

pub fn parse(text: &str) -> Result<Vec<SpectralStep>, ParseError> {
    let mut steps = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() || line.eq_ignore_ascii_case("block,aug") {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 2 {
            return Err(ParseError::at(
                line_no,
                format!("expected `block,aug`, got `{line}`"),
            ));
        }
        let block = match parts[0].to_ascii_lowercase().as_str() {
            "all" => SpectralBlock::AllBlocks,
            "continuum" => SpectralBlock::Continuum,
            "line" => SpectralBlock::Line,
            "absorption" => SpectralBlock::Absorption,
            "center" => SpectralBlock::LineCenter,
            other => {
                return Err(ParseError::at(
                    line_no,
                    format!(
                        "unknown block `{other}` (expected all, continuum, line, absorption, or center)"
                    ),
                ))
            }
        };
        let aug = match parts[1].to_ascii_lowercase().as_str() {
            "full" => AugLevel::Full,
            "reduced" => AugLevel::Reduced,
            "direct" => AugLevel::ObservedOnly,
            other => {
                return Err(ParseError::at(
                    line_no,
                    format!("unknown augmentation `{other}` (expected full, reduced, or direct)"),
                ))
            }
        };
        steps.push(SpectralStep::new(block, aug));
    }
    if steps.is_empty() {
        return Err(ParseError::whole_file("empty step plan"));
    }
    Ok(steps)
}
