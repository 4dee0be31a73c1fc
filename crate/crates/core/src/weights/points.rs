//! Neighbor graphs for irregular point locations.

use serde::{Deserialize, Serialize};

use super::{AdjacencyMatrix, CsrMatrix};
use crate::error::{Error, Result};

/// Planar locations with Euclidean distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    coords: Vec<[f64; 2]>,
}

impl PointSet {
    pub fn new(coords: Vec<[f64; 2]>) -> Result<Self> {
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point coordinates"));
        }
        for i in 0..coords.len() {
            for j in i + 1..coords.len() {
                if coords[i] == coords[j] {
                    return Err(Error::InvalidInput(format!("points {i} and {j} coincide")));
                }
            }
        }
        Ok(Self { coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.coords[i], self.coords[j]);
        (a[0] - b[0]).hypot(a[1] - b[1])
    }

    /// Distance from each point to its nearest other point.
    pub fn nearest_distances(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                (0..self.len())
                    .filter(|&j| j != i)
                    .map(|j| self.distance(i, j))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    fn require_pairs(&self) -> Result<()> {
        if self.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 points, got {}",
                self.len()
            )));
        }
        Ok(())
    }
}

fn from_predicate(points: &PointSet, linked: impl Fn(usize, usize) -> bool) -> Result<AdjacencyMatrix> {
    let n = points.len();
    let rows = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i && linked(i, j))
                .map(|j| (j, 1.0))
                .collect()
        })
        .collect();
    AdjacencyMatrix::from_csr(CsrMatrix::from_rows(n, rows)?)
}

/// Links every pair closer than the largest nearest-neighbor distance, so
/// that no unit is isolated.
pub fn build_minimum_distance(points: &PointSet) -> Result<AdjacencyMatrix> {
    points.require_pairs()?;
    let threshold = points
        .nearest_distances()
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    from_predicate(points, |i, j| {
        let d = points.distance(i, j);
        d > 0.0 && d <= threshold
    })
}

/// Directed k-nearest-neighbor graph; equal distances go to the lower index.
pub fn build_knn(points: &PointSet, k: usize) -> Result<AdjacencyMatrix> {
    let n = points.len();
    if k == 0 || k + 1 > n {
        return Err(Error::InvalidInput(format!(
            "k = {k} must lie in 1..={}",
            n.saturating_sub(1)
        )));
    }
    let rows = (0..n)
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (points.distance(i, j), j))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.truncate(k);
            others.into_iter().map(|(_, j)| (j, 1.0)).collect()
        })
        .collect();
    AdjacencyMatrix::from_csr(CsrMatrix::from_rows(n, rows)?)
}

/// Sphere-of-influence graph: the circles of radius equal to each point's
/// nearest-neighbor distance must cross in two points. Tangent circles are
/// not neighbors.
pub fn build_sphere_of_influence(points: &PointSet) -> Result<AdjacencyMatrix> {
    points.require_pairs()?;
    let radius = points.nearest_distances();
    from_predicate(points, |i, j| {
        let d = points.distance(i, j);
        (radius[i] - radius[j]).abs() < d && d < radius[i] + radius[j]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64]) -> PointSet {
        PointSet::new(xs.iter().map(|&x| [x, 0.0]).collect()).unwrap()
    }

    fn edges(a: &AdjacencyMatrix) -> Vec<(usize, usize)> {
        a.csr().iter().map(|(i, j, _)| (i, j)).collect()
    }

    #[test]
    fn minimum_distance_on_a_line() {
        let a = build_minimum_distance(&line(&[0.0, 1.0, 3.0])).unwrap();
        assert_eq!(edges(&a), vec![(0, 1), (1, 0), (1, 2), (2, 1)]);
    }

    #[test]
    fn two_points_are_mutual_neighbors() {
        let p = line(&[0.0, 2.5]);
        for a in [build_minimum_distance(&p).unwrap(), build_sphere_of_influence(&p).unwrap()] {
            assert_eq!(edges(&a), vec![(0, 1), (1, 0)]);
        }
    }

    #[test]
    fn unit_square_minimum_distance_skips_diagonals() {
        let p = PointSet::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap();
        let a = build_minimum_distance(&p).unwrap();
        // brute force: pairs at distance <= 1
        for i in 0..4 {
            for j in 0..4 {
                let expect = i != j && p.distance(i, j) <= 1.0 + 1e-12;
                assert_eq!(a.csr().get(i, j) == 1.0, expect, "({i},{j})");
            }
        }
        assert_eq!(a.csr().nnz(), 8);
    }

    #[test]
    fn knn_line_is_asymmetric() {
        let a = build_knn(&line(&[0.0, 1.0, 3.0]), 1).unwrap();
        assert_eq!(edges(&a), vec![(0, 1), (1, 0), (2, 1)]);
        assert!(!a.csr().is_symmetric());
    }

    #[test]
    fn knn_ties_prefer_lower_index() {
        // point 1 is equidistant from 0 and 2
        let a = build_knn(&line(&[0.0, 1.0, 2.0]), 1).unwrap();
        assert_eq!(a.neighbors(1).collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn knn_complete_and_out_of_range() {
        let p = line(&[0.0, 1.0, 3.0, 7.0]);
        let a = build_knn(&p, 3).unwrap();
        assert_eq!(a.csr().nnz(), 12);
        assert!(build_knn(&p, 0).is_err());
        assert!(build_knn(&p, 4).is_err());
    }

    #[test]
    fn equilateral_triangle_all_linked() {
        let h = 3f64.sqrt() / 2.0;
        let p = PointSet::new(vec![[0.0, 0.0], [1.0, 0.0], [0.5, h]]).unwrap();
        let a = build_sphere_of_influence(&p).unwrap();
        assert_eq!(a.csr().nnz(), 6);
    }

    #[test]
    fn sphere_of_influence_tangency_is_not_neighborhood() {
        // radii 1, 1, 1, 1 on a line at spacing 1: consecutive circles cross,
        // points two apart are tangent (d = r_i + r_j = 2)
        let a = build_sphere_of_influence(&line(&[0.0, 1.0, 2.0, 3.0])).unwrap();
        assert_eq!(a.csr().get(0, 2), 0.0);
        assert_eq!(a.csr().get(0, 1), 1.0);
    }

    #[test]
    fn rejects_too_few_or_duplicate_points() {
        assert!(build_minimum_distance(&line(&[0.0])).is_err());
        assert!(build_sphere_of_influence(&line(&[1.0])).is_err());
        assert!(PointSet::new(vec![[0.0, 0.0], [0.0, 0.0]]).is_err());
        assert!(PointSet::new(vec![[f64::NAN, 0.0]]).is_err());
    }

    /// Two circles cross in two points when the chord half-length is real.
    fn circles_cross(d: f64, r1: f64, r2: f64) -> bool {
        let a = (d * d + r1 * r1 - r2 * r2) / (2.0 * d);
        r1 * r1 - a * a > 0.0
    }

    #[test]
    fn four_point_sphere_of_influence_layout() {
        let p = PointSet::new(vec![[-3.0, 0.0], [0.0, 0.0], [1.0, 0.2], [1.0, -0.2]]).unwrap();
        let a = build_sphere_of_influence(&p).unwrap();
        let expected = [[0, 1, 0, 0], [1, 0, 1, 1], [0, 1, 0, 1], [0, 1, 1, 0]];
        let r = p.nearest_distances();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(a.csr().get(i, j), expected[i][j] as f64, "({i},{j})");
                if i != j {
                    assert_eq!(circles_cross(p.distance(i, j), r[i], r[j]), expected[i][j] == 1);
                }
            }
        }
    }
}
