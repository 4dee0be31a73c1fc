use serde::{Deserialize, Serialize};

use super::{AdjacencyMatrix, CsrMatrix};
use crate::error::{Error, Result};

/// Contiguity rule on a regular lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContiguityRule {
    /// Shared edge.
    Rook,
    /// Shared vertex only.
    Bishop,
    /// Shared edge or vertex.
    Queen,
}

impl ContiguityRule {
    fn connects(self, dr: usize, dc: usize) -> bool {
        match self {
            Self::Rook => dr + dc == 1,
            Self::Bishop => dr == 1 && dc == 1,
            Self::Queen => dr.max(dc) == 1,
        }
    }
}

impl std::str::FromStr for ContiguityRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rook" => Ok(Self::Rook),
            "bishop" => Ok(Self::Bishop),
            "queen" => Ok(Self::Queen),
            other => Err(Error::InvalidInput(format!("unknown contiguity rule '{other}'"))),
        }
    }
}

/// An `rows x cols` lattice; units are numbered row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub rows: usize,
    pub cols: usize,
    pub rule: ContiguityRule,
}

impl LatticeSpec {
    pub fn new(rows: usize, cols: usize, rule: ContiguityRule) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput(format!("lattice {rows}x{cols} is empty")));
        }
        Ok(Self { rows, cols, rule })
    }

    pub fn queen(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, ContiguityRule::Queen)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn build_lattice_adjacency(spec: &LatticeSpec) -> Result<AdjacencyMatrix> {
    let LatticeSpec { rows, cols, rule } = *spec;
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidInput(format!("lattice {rows}x{cols} is empty")));
    }
    let n = rows * cols;
    let mut out = Vec::with_capacity(n);
    for r in 0..rows {
        for c in 0..cols {
            let mut nbrs = Vec::with_capacity(8);
            for r2 in r.saturating_sub(1)..=(r + 1).min(rows - 1) {
                for c2 in c.saturating_sub(1)..=(c + 1).min(cols - 1) {
                    if rule.connects(r.abs_diff(r2), c.abs_diff(c2)) {
                        nbrs.push((r2 * cols + c2, 1.0));
                    }
                }
            }
            out.push(nbrs);
        }
    }
    AdjacencyMatrix::from_csr(CsrMatrix::from_rows(n, out)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rook_center_of_three_by_three() {
        let a = build_lattice_adjacency(&LatticeSpec::new(3, 3, ContiguityRule::Rook).unwrap()).unwrap();
        let nbrs: Vec<usize> = a.neighbors(4).collect();
        // units 2, 4, 6, 8 in 1-based labels
        assert_eq!(nbrs, vec![1, 3, 5, 7]);
    }

    #[test]
    fn bishop_center_of_three_by_three() {
        let a = build_lattice_adjacency(&LatticeSpec::new(3, 3, ContiguityRule::Bishop).unwrap()).unwrap();
        assert_eq!(a.neighbors(4).collect::<Vec<_>>(), vec![0, 2, 6, 8]);
    }

    #[test]
    fn single_cell_lattice_has_no_neighbors() {
        let a = build_lattice_adjacency(&LatticeSpec::queen(1, 1).unwrap()).unwrap();
        assert_eq!(a.n(), 1);
        assert_eq!(a.csr().nnz(), 0);
    }

    #[test]
    fn empty_lattice_rejected() {
        assert!(LatticeSpec::queen(0, 3).is_err());
    }

    #[test]
    fn rule_parsing() {
        assert_eq!("Queen".parse::<ContiguityRule>().unwrap(), ContiguityRule::Queen);
        assert!("king".parse::<ContiguityRule>().is_err());
    }
}
