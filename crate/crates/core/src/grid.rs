//! Detector geometry: the ideal energy grid and the instrument response.

use crate::error::ModelError;

/// Ideal energy binning plus the detector channel count.
///
/// The ideal grid has `J` contiguous bins described by `J + 1` edges; each bin
/// carries a width `δ_j` and a representative mean energy `E_j`. The detector
/// side has `I` channels, coupled to the ideal grid only through a
/// [`ResponseMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyGrid {
    edges: Vec<f64>,
    widths: Vec<f64>,
    means: Vec<f64>,
    detector_bins: usize,
}

impl EnergyGrid {
    /// Build a grid from bin edges, taking bin midpoints as mean energies.
    pub fn from_edges(detector_bins: usize, edges: Vec<f64>) -> Result<Self, ModelError> {
        let means = edge_midpoints(&edges);
        Self::with_means(detector_bins, edges, means)
    }

    /// Build a grid with explicit per-bin mean energies.
    pub fn with_means(
        detector_bins: usize,
        edges: Vec<f64>,
        means: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if edges.len() < 2 {
            return Err(ModelError::Invalid(
                "energy grid needs at least 2 edges".into(),
            ));
        }
        if detector_bins == 0 {
            return Err(ModelError::Invalid(
                "detector bin count must be positive".into(),
            ));
        }
        if means.len() != edges.len() - 1 {
            return Err(ModelError::Dimension(format!(
                "{} mean energies for {} bins",
                means.len(),
                edges.len() - 1
            )));
        }
        for w in edges.windows(2) {
            if !(w[1] > w[0]) {
                return Err(ModelError::Invalid(format!(
                    "edges must be strictly increasing; got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        for (j, (&m, w)) in means.iter().zip(edges.windows(2)).enumerate() {
            if !(m >= w[0] && m <= w[1]) || !m.is_finite() {
                return Err(ModelError::Invalid(format!(
                    "mean energy {m} of bin {j} outside its edges [{}, {}]",
                    w[0], w[1]
                )));
            }
            if m <= 0.0 {
                return Err(ModelError::Invalid(format!(
                    "mean energy of bin {j} must be positive, got {m}"
                )));
            }
        }
        let widths = edges.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Self {
            edges,
            widths,
            means,
            detector_bins,
        })
    }

    /// Number of ideal bins `J`.
    pub fn ideal_bins(&self) -> usize {
        self.widths.len()
    }

    /// Number of detector channels `I`.
    pub fn detector_bins(&self) -> usize {
        self.detector_bins
    }

    /// Bin widths `δ_j`.
    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    /// Representative mean energies `E_j`.
    pub fn means(&self) -> &[f64] {
        &self.means
    }

    /// The `J + 1` bin edges.
    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Smallest bin width; used for the line-width floor.
    pub fn min_width(&self) -> f64 {
        self.widths.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

fn edge_midpoints(edges: &[f64]) -> Vec<f64> {
    edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

/// Instrument response: `entries[i][j]` is the probability that a photon from
/// ideal bin `j` is recorded in detector channel `i`.
///
/// Column sums may fall short of one; the deficit is the probability of the
/// photon landing off-detector and never being recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    entries: Vec<f64>, // row-major, rows = detector channels
    rows: usize,
    cols: usize,
    col_sums: Vec<f64>,
}

impl ResponseMatrix {
    /// Build from a dense row-major buffer of `rows * cols` probabilities.
    pub fn from_dense(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self, ModelError> {
        if entries.len() != rows * cols {
            return Err(ModelError::Dimension(format!(
                "{} entries for a {rows}x{cols} response",
                entries.len()
            )));
        }
        for (k, &v) in entries.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(ModelError::Invalid(format!(
                    "response entry ({}, {}) = {v} outside [0, 1]",
                    k / cols,
                    k % cols
                )));
            }
        }
        let mut col_sums = vec![0.0; cols];
        for i in 0..rows {
            for j in 0..cols {
                col_sums[j] += entries[i * cols + j];
            }
        }
        for (j, &s) in col_sums.iter().enumerate() {
            if s > 1.0 + 1e-9 {
                return Err(ModelError::Invalid(format!(
                    "column {j} of the response sums to {s} > 1"
                )));
            }
            if s <= 0.0 {
                return Err(ModelError::Invalid(format!(
                    "column {j} of the response sums to {s}; every ideal bin \
                     needs a positive detection probability"
                )));
            }
        }
        Ok(Self {
            entries,
            rows,
            cols,
            col_sums,
        })
    }

    /// Build from `(i, j, value)` triplets; unlisted entries are zero.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, ModelError> {
        let mut entries = vec![0.0; rows * cols];
        for &(i, j, v) in triplets {
            if i >= rows || j >= cols {
                return Err(ModelError::Dimension(format!(
                    "response entry ({i}, {j}) outside a {rows}x{cols} matrix"
                )));
            }
            entries[i * cols + j] = v;
        }
        Self::from_dense(rows, cols, entries)
    }

    /// The identity response (no blurring, nothing lost).
    pub fn identity(n: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        Self::from_dense(n, n, entries).expect("identity response is always valid")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    /// Detection probability of ideal bin `j` (its column sum).
    pub fn col_sum(&self, j: usize) -> f64 {
        self.col_sums[j]
    }

    /// Row `i` as a slice over ideal bins.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }
}
