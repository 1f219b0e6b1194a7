//! Discrete probability distributions over points in `R^d`, plus the cost
//! and flow matrices used by the exact transportation solver.

use crate::error::{Error, Result};

/// Weights must sum to 1 within this tolerance after construction.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// A discrete distribution: `n` bins at coordinates in `R^d` with
/// non-negative weights summing to one.
///
/// Bins are stored sorted lexicographically by coordinates; duplicate
/// coordinates are merged on construction with their weights summed, so no
/// two bins of a constructed distribution coincide.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    id: u64,
    dim: usize,
    /// Row-major `n x dim` coordinates.
    bins: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteDistribution {
    /// Builds a distribution, validating every invariant. `bins` holds the
    /// coordinates of each bin in turn (`n * dim` values).
    pub fn new(id: u64, dim: usize, bins: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        Self::build(id, dim, bins, weights, false)
    }

    /// Like [`new`](Self::new) but rescales the weights to sum to exactly
    /// one instead of rejecting a drifted sum. The sum must be positive.
    pub fn new_renormalized(id: u64, dim: usize, bins: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        Self::build(id, dim, bins, weights, true)
    }

    fn build(id: u64, dim: usize, bins: Vec<f64>, mut weights: Vec<f64>, renormalize: bool) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDistribution {
                id,
                reason: "dimension must be at least 1".into(),
            });
        }
        if weights.is_empty() {
            return Err(Error::EmptyDistribution { id });
        }
        if bins.len() != weights.len() * dim {
            return Err(Error::InvalidDistribution {
                id,
                reason: format!(
                    "{} coordinates do not form {} bins of dimension {}",
                    bins.len(),
                    weights.len(),
                    dim
                ),
            });
        }
        if bins.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidDistribution {
                id,
                reason: "bin coordinates must be finite".into(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution {
                id,
                reason: "weights must be finite and non-negative".into(),
            });
        }
        let sum: f64 = weights.iter().sum();
        if renormalize {
            if sum <= 0.0 {
                return Err(Error::InvalidDistribution {
                    id,
                    reason: "weights sum to zero; nothing to renormalize".into(),
                });
            }
            for w in &mut weights {
                *w /= sum;
            }
        } else if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::WeightSum { id, sum });
        }

        // Sort bins lexicographically and merge exact coordinate duplicates.
        let n = weights.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let ba = &bins[a * dim..(a + 1) * dim];
            let bb = &bins[b * dim..(b + 1) * dim];
            ba.partial_cmp(bb).expect("finite coordinates compare")
        });
        let mut merged_bins = Vec::with_capacity(bins.len());
        let mut merged_weights: Vec<f64> = Vec::with_capacity(n);
        for &i in &order {
            let coords = &bins[i * dim..(i + 1) * dim];
            let last = merged_bins.len().checked_sub(dim);
            if let Some(start) = last {
                if &merged_bins[start..] == coords {
                    *merged_weights.last_mut().unwrap() += weights[i];
                    continue;
                }
            }
            merged_bins.extend_from_slice(coords);
            merged_weights.push(weights[i]);
        }

        Ok(Self {
            id,
            dim,
            bins: merged_bins,
            weights: merged_weights,
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of (distinct) bins.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Coordinates of bin `i`.
    pub fn bin(&self, i: usize) -> &[f64] {
        &self.bins[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Raw row-major coordinate storage.
    pub fn bins_flat(&self) -> &[f64] {
        &self.bins
    }
}

/// Euclidean distance between two coordinate slices of equal length.
pub(crate) fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Pairwise ground-distance matrix between the bins of two distributions
/// (rows follow the first argument, columns the second). Entries are L2
/// distances, so a matrix built from a distribution against itself has a
/// zero diagonal, is symmetric, and satisfies the triangle inequality.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn between(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<Self> {
        if p.dim() != q.dim() {
            return Err(Error::DimensionMismatch {
                left: p.dim(),
                right: q.dim(),
            });
        }
        let (rows, cols) = (p.len(), q.len());
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let bi = p.bin(i);
            for j in 0..cols {
                data.push(l2(bi, q.bin(j)));
            }
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

/// A feasible transportation plan between two distributions: how much mass
/// moves from each source bin to each sink bin.
#[derive(Debug, Clone)]
pub struct Flow {
    rows: usize,
    cols: usize,
    /// Sparse entries `(source bin, sink bin, amount)` with `amount > 0`
    /// (degenerate zero-amount basis cells are dropped).
    entries: Vec<(usize, usize, f64)>,
}

impl Flow {
    pub(crate) fn new(rows: usize, cols: usize, entries: Vec<(usize, usize, f64)>) -> Self {
        Self { rows, cols, entries }
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// Total mass moved.
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|&(_, _, f)| f).sum()
    }

    /// Transport cost of this plan under the given ground distances.
    pub fn cost(&self, costs: &CostMatrix) -> f64 {
        self.entries
            .iter()
            .map(|&(i, j, f)| f * costs.at(i, j))
            .sum()
    }

    /// Mass leaving each source bin.
    pub fn row_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.rows];
        for &(i, _, f) in &self.entries {
            sums[i] += f;
        }
        sums
    }

    /// Mass arriving at each sink bin.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for &(_, j, f) in &self.entries {
            sums[j] += f;
        }
        sums
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(id: u64, dim: usize, bins: &[f64], weights: &[f64]) -> DiscreteDistribution {
        DiscreteDistribution::new(id, dim, bins.to_vec(), weights.to_vec()).unwrap()
    }

    #[test]
    fn rejects_empty_and_mismatched_input() {
        assert!(matches!(
            DiscreteDistribution::new(7, 2, vec![], vec![]),
            Err(Error::EmptyDistribution { id: 7 })
        ));
        assert!(DiscreteDistribution::new(0, 2, vec![0.0, 0.0, 1.0], vec![1.0]).is_err());
        assert!(DiscreteDistribution::new(0, 0, vec![], vec![1.0]).is_err());
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(matches!(
            DiscreteDistribution::new(1, 1, vec![0.0, 1.0], vec![0.3, 0.3]),
            Err(Error::WeightSum { id: 1, .. })
        ));
        assert!(DiscreteDistribution::new(1, 1, vec![0.0, 1.0], vec![-0.5, 1.5]).is_err());
        assert!(DiscreteDistribution::new(1, 1, vec![0.0, 1.0], vec![f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn renormalizes_on_request() {
        let d = DiscreteDistribution::new_renormalized(3, 1, vec![0.0, 2.0], vec![1.0, 3.0]).unwrap();
        assert_eq!(d.weights(), &[0.25, 0.75]);
        assert!((d.weights().iter().sum::<f64>() - 1.0).abs() <= WEIGHT_SUM_TOL);
    }

    #[test]
    fn merges_duplicate_bins() {
        let d = dist(0, 2, &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0], &[0.25, 0.5, 0.25]);
        assert_eq!(d.len(), 2);
        assert_eq!(d.bin(0), &[0.0, 0.0]);
        assert_eq!(d.bin(1), &[1.0, 1.0]);
        assert_eq!(d.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn zero_weight_bins_are_kept() {
        let d = dist(0, 1, &[0.0, 1.0, 3.0], &[0.5, 0.5, 0.0]);
        assert_eq!(d.len(), 3);
        assert_eq!(d.weights()[2], 0.0);
    }

    #[test]
    fn cost_matrix_is_a_metric_on_shared_bins() {
        let d = dist(0, 2, &[0.0, 0.0, 3.0, 4.0, 1.0, -1.0], &[0.2, 0.3, 0.5]);
        let c = CostMatrix::between(&d, &d).unwrap();
        for i in 0..c.rows() {
            assert_eq!(c.at(i, i), 0.0);
            for j in 0..c.cols() {
                assert_eq!(c.at(i, j), c.at(j, i));
                assert!(c.at(i, j) >= 0.0);
                for k in 0..c.cols() {
                    assert!(c.at(i, j) <= c.at(i, k) + c.at(k, j) + 1e-12);
                }
            }
        }
        // Spot-check one distance: (0,0) to (3,4) is 5 (bins are stored
        // sorted, so (3,4) is the last one).
        assert!((c.at(0, 2) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn cost_matrix_rejects_dimension_mismatch() {
        let a = dist(0, 1, &[0.0], &[1.0]);
        let b = dist(1, 2, &[0.0, 0.0], &[1.0]);
        assert!(matches!(
            CostMatrix::between(&a, &b),
            Err(Error::DimensionMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn flow_accounting() {
        let f = Flow::new(2, 2, vec![(0, 0, 0.5), (0, 1, 0.1), (1, 1, 0.4)]);
        assert!((f.total() - 1.0).abs() < 1e-15);
        assert_eq!(f.row_sums(), vec![0.6, 0.4]);
        assert_eq!(f.col_sums(), vec![0.5, 0.5]);
    }
}
