//! Spatial weight matrices: neighbor graphs, row standardization, spectra
//! and the admissible interval for the spatial coefficient.

pub mod banded;
pub mod gal;
pub mod lattice;
pub mod points;
mod sparse;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use gal::{read_gal, read_gal_file, write_gal, write_gal_file};
pub use lattice::{build_lattice_adjacency, ContiguityRule, LatticeSpec};
pub use points::{build_knn, build_minimum_distance, build_sphere_of_influence, PointSet};
pub use sparse::CsrMatrix;
pub use banded::BandedLu;

use crate::error::{Error, Result};

/// Binary neighbor indicators with a structurally zero diagonal. May be
/// directed (k-nearest graphs).
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    csr: CsrMatrix,
}

impl AdjacencyMatrix {
    pub fn from_csr(csr: CsrMatrix) -> Result<Self> {
        for (i, j, v) in csr.iter() {
            if i == j {
                return Err(Error::InvalidInput(format!("self-loop at unit {i}")));
            }
            if v != 1.0 {
                return Err(Error::InvalidInput(format!(
                    "adjacency entry ({i},{j}) = {v} is not 0/1"
                )));
            }
        }
        Ok(Self { csr })
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        Self::from_csr(CsrMatrix::from_dense(rows)?)
    }

    pub fn n(&self) -> usize {
        self.csr.n()
    }

    pub fn csr(&self) -> &CsrMatrix {
        &self.csr
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.csr.row(i).map(|(j, _)| j)
    }

    pub fn is_symmetric(&self) -> bool {
        self.csr.is_symmetric()
    }

    /// Union with the transpose.
    pub fn symmetrize(&self) -> Self {
        let n = self.n();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, j, _) in self.csr.iter() {
            rows[i].push((j, 1.0));
            if self.csr.get(j, i) == 0.0 {
                rows[j].push((i, 1.0));
            }
        }
        Self {
            csr: CsrMatrix::from_rows(n, rows).expect("valid symmetric union"),
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        self.csr.to_dense()
    }
}

/// Eigenvalues of a weight matrix, ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
}

impl Spectrum {
    pub fn new(mut eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spectrum"));
        }
        eigenvalues.sort_by(f64::total_cmp);
        Ok(Self { eigenvalues })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Largest eigenvalue modulus.
    pub fn radius(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn rho_interval(&self) -> RhoInterval {
        let tau = self.radius();
        if tau == 0.0 {
            RhoInterval {
                lower: f64::NEG_INFINITY,
                upper: f64::INFINITY,
            }
        } else {
            RhoInterval {
                lower: -1.0 / tau,
                upper: 1.0 / tau,
            }
        }
    }
}

/// Open interval `(-1/tau, 1/tau)` on which `I - rho W` stays nonsingular.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoInterval {
    pub lower: f64,
    pub upper: f64,
}

impl RhoInterval {
    pub fn contains(&self, rho: f64) -> bool {
        rho > self.lower && rho < self.upper
    }

    /// The interval pulled in by `margin` at each finite end.
    pub fn shrink(&self, margin: f64) -> Self {
        Self {
            lower: self.lower + margin,
            upper: self.upper - margin,
        }
    }
}

/// Spatial weights used by the model. When `standardized`, every row sums to
/// one and the source adjacency row sums are kept so the real spectrum can be
/// computed from the similar symmetric matrix `D^-1/2 A D^-1/2`.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    matrix: CsrMatrix,
    standardized: bool,
    source_row_sums: Option<Vec<f64>>,
    symmetric_source: bool,
    spectrum: Option<Arc<Spectrum>>,
}

impl WeightMatrix {
    /// Unstandardized weights taken as-is.
    pub fn raw(matrix: CsrMatrix) -> Result<Self> {
        if matrix.iter().any(|(i, j, v)| i == j && v != 0.0) {
            return Err(Error::InvalidInput("weight matrix diagonal must be zero".into()));
        }
        if matrix.iter().any(|(_, _, v)| v < 0.0) {
            return Err(Error::InvalidInput("weights must be nonnegative".into()));
        }
        let symmetric_source = matrix.is_symmetric();
        Ok(Self {
            matrix,
            standardized: false,
            source_row_sums: None,
            symmetric_source,
            spectrum: None,
        })
    }

    pub fn from_adjacency(adj: &AdjacencyMatrix) -> Self {
        Self::raw(adj.csr.clone()).expect("adjacency is a valid weight matrix")
    }

    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    pub fn csr(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(x)
    }

    pub fn spectrum(&self) -> Option<&Spectrum> {
        self.spectrum.as_deref()
    }

    /// Admissible rho interval, once the spectrum is known.
    pub fn rho_interval(&self) -> Option<RhoInterval> {
        self.spectrum().map(Spectrum::rho_interval)
    }

    /// Computes and attaches the spectrum (no-op when already present).
    pub fn with_spectrum(mut self) -> Result<Self> {
        if self.spectrum.is_none() {
            let (spectrum, _) = spectrum_and_bounds(&self)?;
            self.spectrum = Some(Arc::new(spectrum));
        }
        Ok(self)
    }

    /// Attaches an externally computed spectrum, e.g. one shared across
    /// Monte Carlo replicates on the same lattice.
    pub fn with_known_spectrum(mut self, spectrum: Arc<Spectrum>) -> Result<Self> {
        if spectrum.len() != self.n() {
            return Err(Error::Shape(format!(
                "spectrum has {} values for n = {}",
                spectrum.len(),
                self.n()
            )));
        }
        self.spectrum = Some(spectrum);
        Ok(self)
    }

    pub fn shared_spectrum(&self) -> Option<Arc<Spectrum>> {
        self.spectrum.clone()
    }

    /// The symmetric matrix whose spectrum equals that of `W`.
    fn symmetric_similar(&self) -> Result<CsrMatrix> {
        if !self.symmetric_source {
            return Err(Error::Spectrum(
                "weights are neither symmetric nor standardized from a symmetric adjacency".into(),
            ));
        }
        if !self.standardized {
            return Ok(self.matrix.clone());
        }
        let d = self
            .source_row_sums
            .as_ref()
            .ok_or_else(|| Error::Spectrum("missing source row sums".into()))?;
        let s = self.matrix.map_values(|i, j, v| v * (d[i] / d[j]).sqrt());
        Ok(s)
    }
}

/// Divides every row by its sum.
pub fn row_standardize(adj: &AdjacencyMatrix) -> Result<WeightMatrix> {
    let n = adj.n();
    let sums: Vec<f64> = (0..n).map(|i| adj.csr.row_sum(i)).collect();
    if let Some(i) = sums.iter().position(|&s| s == 0.0) {
        return Err(Error::IsolatedUnit(i));
    }
    let matrix = adj.csr.map_values(|i, _, v| v / sums[i]);
    Ok(WeightMatrix {
        matrix,
        standardized: true,
        source_row_sums: Some(sums),
        symmetric_source: adj.is_symmetric(),
        spectrum: None,
    })
}

/// Real spectrum of `w` and the admissible rho interval. Supports symmetric
/// weights and row-standardized weights built from a symmetric adjacency.
pub fn spectrum_and_bounds(w: &WeightMatrix) -> Result<(Spectrum, RhoInterval)> {
    if let Some(s) = w.spectrum() {
        return Ok((s.clone(), s.rho_interval()));
    }
    let sym = w.symmetric_similar()?;
    let spectrum = Spectrum::new(banded::symmetric_eigenvalues(&sym)?)?;
    let interval = spectrum.rho_interval();
    Ok((spectrum, interval))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Queen contiguity on the 3x3 lattice, written out by hand.
    pub(crate) fn queen_3x3_reference() -> Vec<Vec<f64>> {
        [
            [0, 1, 0, 1, 1, 0, 0, 0, 0],
            [1, 0, 1, 1, 1, 1, 0, 0, 0],
            [0, 1, 0, 0, 1, 1, 0, 0, 0],
            [1, 1, 0, 0, 1, 0, 1, 1, 0],
            [1, 1, 1, 1, 0, 1, 1, 1, 1],
            [0, 1, 1, 0, 1, 0, 0, 1, 1],
            [0, 0, 0, 1, 1, 0, 0, 1, 0],
            [0, 0, 0, 1, 1, 1, 1, 0, 1],
            [0, 0, 0, 0, 1, 1, 0, 1, 0],
        ]
        .iter()
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect()
    }

    #[test]
    fn queen_three_by_three_matches_reference() {
        let adj = build_lattice_adjacency(&LatticeSpec::queen(3, 3).unwrap()).unwrap();
        assert_eq!(adj.to_dense(), queen_3x3_reference());
    }

    #[test]
    fn standardized_first_row_is_thirds() {
        let adj = AdjacencyMatrix::from_dense(&queen_3x3_reference()).unwrap();
        let w = row_standardize(&adj).unwrap();
        for j in [1, 3, 4] {
            assert!((w.get(0, j) - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(w.csr().row(0).count(), 3);
    }

    #[test]
    fn isolated_unit_is_an_error() {
        let adj = AdjacencyMatrix::from_dense(&[
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0],
        ])
        .unwrap();
        assert!(matches!(row_standardize(&adj), Err(Error::IsolatedUnit(2))));
    }

    #[test]
    fn two_by_two_spectrum() {
        let adj = AdjacencyMatrix::from_dense(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let w = row_standardize(&adj).unwrap();
        assert_eq!(w.csr(), adj.csr());
        let (s, interval) = spectrum_and_bounds(&w).unwrap();
        assert!((s.eigenvalues()[0] + 1.0).abs() < 1e-15);
        assert!((s.eigenvalues()[1] - 1.0).abs() < 1e-15);
        assert!((interval.lower + 1.0).abs() < 1e-15 && (interval.upper - 1.0).abs() < 1e-15);
    }

    #[test]
    fn queen_intervals() {
        let adj = AdjacencyMatrix::from_dense(&queen_3x3_reference()).unwrap();
        let (_, raw) = spectrum_and_bounds(&WeightMatrix::from_adjacency(&adj)).unwrap();
        assert!((raw.upper - 0.207).abs() < 5e-4, "{}", raw.upper);
        assert!((raw.lower + 0.207).abs() < 5e-4);
        let (s, std) = spectrum_and_bounds(&row_standardize(&adj).unwrap()).unwrap();
        assert!((s.eigenvalues().last().unwrap() - 1.0).abs() < 1e-10);
        assert!((std.upper - 1.0).abs() < 1e-10 && (std.lower + 1.0).abs() < 1e-10);
    }

    #[test]
    fn directed_weights_have_no_supported_spectrum() {
        let p = PointSet::new(vec![[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]]).unwrap();
        let w = row_standardize(&build_knn(&p, 1).unwrap()).unwrap();
        assert!(matches!(spectrum_and_bounds(&w), Err(Error::Spectrum(_))));
        let sym = row_standardize(&build_knn(&p, 1).unwrap().symmetrize()).unwrap();
        assert!(spectrum_and_bounds(&sym).is_ok());
    }

    #[test]
    fn zero_matrix_interval_is_unbounded() {
        let w = WeightMatrix::raw(CsrMatrix::zeros(1)).unwrap();
        let (_, i) = spectrum_and_bounds(&w).unwrap();
        assert!(i.contains(1e6));
    }
}
