//! 1-D projections of distributions and the exact EMD between projected
//! distributions.
//!
//! Projecting every bin of a distribution onto a unit vector yields a 1-D
//! distribution whose EMD against another projection of the same vector
//! never exceeds the original EMD, which makes projected distances cheap,
//! sound pruning bounds. In one dimension the EMD is the area between the
//! two step CDFs, computed exactly by a linear merge of the breakpoints.

use crate::distribution::DiscreteDistribution;
use crate::error::{Error, Result};

/// How far a projection vector's norm may drift from 1.
pub const UNIT_NORM_TOL: f64 = 1e-12;

/// A unit-length direction plus the centering constant subtracted from
/// every projected value (the dataset mean of projected bin values).
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionVector {
    components: Vec<f64>,
    center: f64,
}

impl ProjectionVector {
    pub fn new(components: Vec<f64>, center: f64) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter(
                "projection vector must have at least one component".into(),
            ));
        }
        if components.iter().any(|x| !x.is_finite()) || !center.is_finite() {
            return Err(Error::InvalidParameter(
                "projection vector must be finite".into(),
            ));
        }
        let norm = components.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::InvalidParameter(format!(
                "projection vector norm {norm} is not 1"
            )));
        }
        Ok(Self { components, center })
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    /// Centered projection of one bin.
    pub fn project_value(&self, coords: &[f64]) -> f64 {
        debug_assert_eq!(coords.len(), self.components.len());
        self.components
            .iter()
            .zip(coords)
            .map(|(s, x)| s * x)
            .sum::<f64>()
            - self.center
    }
}

/// A projection vector together with the dataset-global projected range
/// `[t_min, t_max]`. Everything derived from one frame (projected
/// distributions, normal summaries, sub-interval grids) shares this range,
/// and values from different frames must never be mixed.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionFrame {
    vector: ProjectionVector,
    t_min: f64,
    t_max: f64,
}

impl ProjectionFrame {
    pub fn new(vector: ProjectionVector, t_min: f64, t_max: f64) -> Result<Self> {
        if !(t_min < t_max) || !t_min.is_finite() || !t_max.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "invalid projected range [{t_min}, {t_max}]"
            )));
        }
        Ok(Self { vector, t_min, t_max })
    }

    /// Builds the frame for a dataset: centers the vector on the mean
    /// projected bin value (so the range straddles zero) and records the
    /// global min/max projected values.
    pub fn for_dataset(dataset: &[DiscreteDistribution], direction: ProjectionVector) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::InvalidParameter("empty dataset".into()));
        }
        let dim = direction.dim();
        let mut sum = 0.0;
        let mut count = 0usize;
        for d in dataset {
            if d.dim() != dim {
                return Err(Error::DimensionMismatch { left: dim, right: d.dim() });
            }
            for i in 0..d.len() {
                sum += direction
                    .components()
                    .iter()
                    .zip(d.bin(i))
                    .map(|(s, x)| s * x)
                    .sum::<f64>();
                count += 1;
            }
        }
        let center = direction.center() + sum / count as f64;
        let vector = ProjectionVector::new(direction.components().to_vec(), center)?;
        let mut t_min = f64::INFINITY;
        let mut t_max = f64::NEG_INFINITY;
        for d in dataset {
            for i in 0..d.len() {
                let t = vector.project_value(d.bin(i));
                t_min = t_min.min(t);
                t_max = t_max.max(t);
            }
        }
        if t_max - t_min < 1e-12 {
            // Every bin projects to the same value; give the frame a
            // nominal width so downstream integrals stay well defined.
            t_min = -1.0;
            t_max = 1.0;
        }
        Self::new(vector, t_min, t_max)
    }

    pub fn vector(&self) -> &ProjectionVector {
        &self.vector
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }
}

/// A distribution projected onto one frame: sorted distinct breakpoints
/// with their weights, plus the frame's global range. Query points may
/// fall outside the range; the range records the indexed dataset's extent.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedDistribution {
    points: Vec<(f64, f64)>,
    t_min: f64,
    t_max: f64,
}

impl ProjectedDistribution {
    /// `(t, weight)` pairs sorted by strictly increasing `t`.
    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    /// Smallest breakpoint (may lie below `t_min` for query points).
    pub fn support_min(&self) -> f64 {
        self.points[0].0
    }

    pub fn support_max(&self) -> f64 {
        self.points[self.points.len() - 1].0
    }

    /// Step-CDF value at `t` (right-continuous).
    pub fn cdf(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for &(x, w) in &self.points {
            if x <= t {
                acc += w;
            } else {
                break;
            }
        }
        acc
    }

    fn same_frame(&self, other: &Self) -> bool {
        self.t_min == other.t_min && self.t_max == other.t_max
    }
}

/// Projects a distribution onto a frame. Bins that project to the exact
/// same value are merged with their weights summed.
pub fn project(dist: &DiscreteDistribution, frame: &ProjectionFrame) -> Result<ProjectedDistribution> {
    if dist.dim() != frame.vector().dim() {
        return Err(Error::DimensionMismatch {
            left: frame.vector().dim(),
            right: dist.dim(),
        });
    }
    let mut points: Vec<(f64, f64)> = (0..dist.len())
        .map(|i| (frame.vector().project_value(dist.bin(i)), dist.weights()[i]))
        .collect();
    points.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite projections"));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for (t, w) in points {
        match merged.last_mut() {
            Some(last) if last.0 == t => last.1 += w,
            _ => merged.push((t, w)),
        }
    }
    Ok(ProjectedDistribution {
        points: merged,
        t_min: frame.t_min(),
        t_max: frame.t_max(),
    })
}

/// Exact 1-D EMD between two projections of the same frame: the area
/// between their step CDFs, by a linear merge of breakpoints.
pub fn projection_emd(a: &ProjectedDistribution, b: &ProjectedDistribution) -> Result<f64> {
    if !a.same_frame(b) {
        return Err(Error::ProvenanceMismatch(
            a.t_min, a.t_max, b.t_min, b.t_max,
        ));
    }
    let (pa, pb) = (a.points(), b.points());
    let (mut i, mut j) = (0usize, 0usize);
    let (mut cdf_a, mut cdf_b) = (0.0f64, 0.0f64);
    let mut prev: Option<f64> = None;
    let mut area = 0.0;
    while i < pa.len() || j < pb.len() {
        let t = match (pa.get(i), pb.get(j)) {
            (Some(&(ta, _)), Some(&(tb, _))) => ta.min(tb),
            (Some(&(ta, _)), None) => ta,
            (None, Some(&(tb, _))) => tb,
            (None, None) => unreachable!(),
        };
        if let Some(p) = prev {
            area += (t - p) * (cdf_a - cdf_b).abs();
        }
        while i < pa.len() && pa[i].0 == t {
            cdf_a += pa[i].1;
            i += 1;
        }
        while j < pb.len() && pb[j].0 == t {
            cdf_b += pb[j].1;
            j += 1;
        }
        prev = Some(t);
    }
    Ok(area)
}

/// Combines per-projection lower bounds into one bound on the original
/// EMD: `(1/sqrt(d')) * sum(bounds)`.
pub fn combine_projection_bounds(bounds: &[f64]) -> Result<f64> {
    if bounds.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot combine an empty set of projection bounds".into(),
        ));
    }
    Ok(bounds.iter().sum::<f64>() / (bounds.len() as f64).sqrt())
}

/// Selects `count` projection directions by PCA over the pooled bin
/// locations of the dataset, each bin weighted by its probability mass.
/// Components are orthonormal, ordered by decreasing explained variance,
/// and sign-fixed so the largest-magnitude component is positive. If any
/// selected direction carries (numerically) zero variance the canonical
/// axes are used instead, with a warning.
pub fn select_projections(dataset: &[DiscreteDistribution], count: usize) -> Result<Vec<ProjectionFrame>> {
    if dataset.is_empty() {
        return Err(Error::InvalidParameter("empty dataset".into()));
    }
    let dim = dataset[0].dim();
    if count == 0 || count > dim {
        return Err(Error::InvalidParameter(format!(
            "projection count {count} must be in 1..={dim}"
        )));
    }
    for d in dataset {
        if d.dim() != dim {
            return Err(Error::DimensionMismatch { left: dim, right: d.dim() });
        }
    }

    // Mass-weighted mean of pooled bin locations.
    let mut mean = vec![0.0f64; dim];
    let mut total_mass = 0.0f64;
    for d in dataset {
        for i in 0..d.len() {
            let w = d.weights()[i];
            for (k, x) in d.bin(i).iter().enumerate() {
                mean[k] += w * x;
            }
            total_mass += w;
        }
    }
    for x in &mut mean {
        *x /= total_mass;
    }

    // Mass-weighted covariance of pooled bin locations.
    let mut cov = vec![0.0f64; dim * dim];
    for d in dataset {
        for i in 0..d.len() {
            let w = d.weights()[i];
            let b = d.bin(i);
            for r in 0..dim {
                let dr = b[r] - mean[r];
                for c in r..dim {
                    cov[r * dim + c] += w * dr * (b[c] - mean[c]);
                }
            }
        }
    }
    for r in 0..dim {
        for c in r..dim {
            cov[r * dim + c] /= total_mass;
            cov[c * dim + r] = cov[r * dim + c];
        }
    }

    let mat = nalgebra::DMatrix::from_fn(dim, dim, |r, c| cov[r * dim + c]);
    let eig = mat.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let trace: f64 = (0..dim).map(|k| cov[k * dim + k]).sum();
    let degenerate_tol = 1e-12 * trace.max(f64::MIN_POSITIVE);
    let degenerate = order[..count]
        .iter()
        .any(|&k| eig.eigenvalues[k] <= degenerate_tol);

    let directions: Vec<Vec<f64>> = if degenerate {
        log::warn!(
            "pooled bin cloud has (numerically) zero variance along a requested component; \
             falling back to canonical axes"
        );
        (0..count)
            .map(|k| {
                let mut v = vec![0.0; dim];
                v[k] = 1.0;
                v
            })
            .collect()
    } else {
        order[..count]
            .iter()
            .map(|&k| {
                let col = eig.eigenvectors.column(k);
                let mut v: Vec<f64> = col.iter().copied().collect();
                // Normalize defensively and fix the sign on the
                // largest-magnitude component.
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                for x in &mut v {
                    *x /= norm;
                }
                let lead = v
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                    .map(|(i, _)| i)
                    .unwrap();
                if v[lead] < 0.0 {
                    for x in &mut v {
                        *x = -*x;
                    }
                }
                v
            })
            .collect()
    };

    directions
        .into_iter()
        .map(|v| ProjectionFrame::for_dataset(dataset, ProjectionVector::new(v, 0.0)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact_emd;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn dist(id: u64, dim: usize, bins: &[f64], weights: &[f64]) -> DiscreteDistribution {
        DiscreteDistribution::new(id, dim, bins.to_vec(), weights.to_vec()).unwrap()
    }

    fn axis_frame(lo: f64, hi: f64) -> ProjectionFrame {
        ProjectionFrame::new(ProjectionVector::new(vec![1.0, 0.0], 0.0).unwrap(), lo, hi).unwrap()
    }

    fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-3 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }

    #[test]
    fn vector_must_be_unit_length() {
        assert!(ProjectionVector::new(vec![0.6, 0.8], 0.0).is_ok());
        assert!(ProjectionVector::new(vec![1.0, 1.0], 0.0).is_err());
        assert!(ProjectionVector::new(vec![], 0.0).is_err());
    }

    #[test]
    fn project_extracts_first_coordinate() {
        let d = dist(0, 2, &[0.0, 5.0, 1.0, 7.0], &[0.3, 0.7]);
        let p = project(&d, &axis_frame(-10.0, 10.0)).unwrap();
        assert_eq!(p.points(), &[(0.0, 0.3), (1.0, 0.7)]);
    }

    #[test]
    fn project_merges_coincident_values() {
        // Distinct 2-D bins that collapse onto the same projected value.
        let d = dist(0, 2, &[2.0, 1.0, 2.0, 9.0, 0.0, 0.0], &[0.25, 0.25, 0.5]);
        let p = project(&d, &axis_frame(-10.0, 10.0)).unwrap();
        assert_eq!(p.points(), &[(0.0, 0.5), (2.0, 0.5)]);
    }

    #[test]
    fn projection_emd_examples() {
        let f = axis_frame(-5.0, 5.0);
        let p = project(&dist(0, 2, &[0.0, 0.0, 1.0, 0.0, 3.0, 0.0], &[0.5, 0.5, 0.0]), &f).unwrap();
        let q = project(&dist(1, 2, &[0.0, 0.0, 1.0, 0.0, 3.0, 0.0], &[0.0, 0.5, 0.5]), &f).unwrap();
        assert!((projection_emd(&p, &q).unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(projection_emd(&p, &p).unwrap(), 0.0);

        // Point masses: distance between the projected locations.
        let a = project(&dist(2, 2, &[-2.5, 0.0], &[1.0]), &f).unwrap();
        let b = project(&dist(3, 2, &[1.25, 0.0], &[1.0]), &f).unwrap();
        assert!((projection_emd(&a, &b).unwrap() - 3.75).abs() < 1e-12);
    }

    #[test]
    fn projection_emd_rejects_mixed_frames() {
        let d = dist(0, 2, &[0.0, 0.0], &[1.0]);
        let p = project(&d, &axis_frame(-5.0, 5.0)).unwrap();
        let q = project(&d, &axis_frame(-6.0, 5.0)).unwrap();
        assert!(matches!(
            projection_emd(&p, &q),
            Err(Error::ProvenanceMismatch(..))
        ));
    }

    #[test]
    fn combine_examples() {
        assert!((combine_projection_bounds(&[1.7]).unwrap() - 1.7).abs() < 1e-15);
        let c = combine_projection_bounds(&[1.0, 2.0]).unwrap();
        assert!((c - 3.0 / 2.0f64.sqrt()).abs() < 1e-12);
        assert!((c - 2.1213203435596424).abs() < 1e-12);
        assert_eq!(combine_projection_bounds(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!(combine_projection_bounds(&[]).is_err());
    }

    #[test]
    fn one_dimensional_projection_is_exact() {
        // Along a single axis the projected EMD equals the exact EMD.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let n = rng.gen_range(1..10);
            let bins: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let m = rng.gen_range(1..10);
            let bins_q: Vec<f64> = (0..m).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let wp: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
            let wq: Vec<f64> = (0..m).map(|_| rng.gen_range(0.05..1.0)).collect();
            let p = DiscreteDistribution::new_renormalized(0, 1, bins, wp).unwrap();
            let q = DiscreteDistribution::new_renormalized(1, 1, bins_q, wq).unwrap();
            let frame = ProjectionFrame::for_dataset(
                &[p.clone(), q.clone()],
                ProjectionVector::new(vec![1.0], 0.0).unwrap(),
            )
            .unwrap();
            let pp = project(&p, &frame).unwrap();
            let qq = project(&q, &frame).unwrap();
            let lhs = projection_emd(&pp, &qq).unwrap();
            let rhs = exact_emd(&p, &q).unwrap();
            assert!((lhs - rhs).abs() <= 1e-9, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn projection_bound_is_sound() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..60 {
            let mk = |rng: &mut ChaCha8Rng, id| {
                let n = rng.gen_range(1..12);
                let bins: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-4.0..4.0)).collect();
                let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
                DiscreteDistribution::new_renormalized(id, 2, bins, w).unwrap()
            };
            let p = mk(&mut rng, 0);
            let q = mk(&mut rng, 1);
            let exact = exact_emd(&p, &q).unwrap();
            let u = random_unit(&mut rng, 2);
            let frame = ProjectionFrame::for_dataset(
                &[p.clone(), q.clone()],
                ProjectionVector::new(u, 0.0).unwrap(),
            )
            .unwrap();
            let bound =
                projection_emd(&project(&p, &frame).unwrap(), &project(&q, &frame).unwrap())
                    .unwrap();
            assert!(bound <= exact + 1e-6, "{bound} > {exact}");
        }
    }

    #[test]
    fn combined_bound_is_sound_and_translation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..30 {
            let mk = |rng: &mut ChaCha8Rng, id, shift: &[f64]| {
                let n = rng.gen_range(2..10);
                let bins: Vec<f64> = (0..2 * n)
                    .map(|k| rng.gen_range(-4.0..4.0) + shift[k % 2])
                    .collect();
                let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
                DiscreteDistribution::new_renormalized(id, 2, bins, w).unwrap()
            };
            let seed = rng.gen::<u64>();
            let mut r1 = ChaCha8Rng::seed_from_u64(seed);
            let p = mk(&mut r1, 0, &[0.0, 0.0]);
            let q = mk(&mut r1, 1, &[0.0, 0.0]);
            let mut r2 = ChaCha8Rng::seed_from_u64(seed);
            let shift = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let ps = mk(&mut r2, 0, &shift);
            let qs = mk(&mut r2, 1, &shift);

            let frames = select_projections(&[p.clone(), q.clone()], 2).unwrap();
            let bounds: Vec<f64> = frames
                .iter()
                .map(|f| {
                    projection_emd(&project(&p, f).unwrap(), &project(&q, f).unwrap()).unwrap()
                })
                .collect();
            let combined = combine_projection_bounds(&bounds).unwrap();
            let exact = exact_emd(&p, &q).unwrap();
            assert!(combined <= exact + 1e-6, "{combined} > {exact}");

            // Translating both distributions by the same offset leaves every
            // per-frame projected EMD unchanged (frames re-centered).
            let frames_s = select_projections(&[ps.clone(), qs.clone()], 2).unwrap();
            let bounds_s: Vec<f64> = frames_s
                .iter()
                .map(|f| {
                    projection_emd(&project(&ps, f).unwrap(), &project(&qs, f).unwrap()).unwrap()
                })
                .collect();
            let combined_s = combine_projection_bounds(&bounds_s).unwrap();
            assert!(
                (combined - combined_s).abs() <= 1e-9,
                "{combined} vs {combined_s}"
            );
        }
    }

    #[test]
    fn pca_finds_the_spread_axis() {
        // Bins vary only along x; the first component must be +e1.
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let data: Vec<DiscreteDistribution> = (0..20)
            .map(|id| {
                let n = 4;
                let bins: Vec<f64> = (0..n)
                    .flat_map(|_| [rng.gen_range(-5.0..5.0), 2.0])
                    .collect();
                DiscreteDistribution::new_renormalized(id, 2, bins, vec![1.0; n]).unwrap()
            })
            .collect();
        let frames = select_projections(&data, 1).unwrap();
        let v = frames[0].vector().components();
        assert!((v[0] - 1.0).abs() < 1e-9, "expected +e1, got {v:?}");
        assert!(v[1].abs() < 1e-9);
        // Centering guarantees the range straddles zero.
        assert!(frames[0].t_min() < 0.0 && frames[0].t_max() > 0.0);

        // Asking for a second component hits the zero-variance fallback.
        let frames = select_projections(&data, 2).unwrap();
        assert_eq!(frames[0].vector().components(), &[1.0, 0.0]);
        assert_eq!(frames[1].vector().components(), &[0.0, 1.0]);
    }

    #[test]
    fn pca_components_are_orthonormal_and_variance_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let data: Vec<DiscreteDistribution> = (0..30)
            .map(|id| {
                let n = 6;
                let bins: Vec<f64> = (0..n)
                    .flat_map(|_| {
                        let a = rng.gen_range(-3.0..3.0);
                        let b = rng.gen_range(-1.0..1.0);
                        // A tilted anisotropic cloud.
                        [2.0 * a + 0.3 * b, a - b]
                    })
                    .collect();
                DiscreteDistribution::new_renormalized(id, 2, bins, vec![1.0; n]).unwrap()
            })
            .collect();
        let frames = select_projections(&data, 2).unwrap();
        let v1 = frames[0].vector().components();
        let v2 = frames[1].vector().components();
        let dot: f64 = v1.iter().zip(v2).map(|(a, b)| a * b).sum();
        assert!(dot.abs() <= 1e-10);
        for v in [v1, v2] {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-10);
        }

        // Projected mass-weighted variance must be non-increasing.
        let variance = |frame: &ProjectionFrame| {
            let mut mean = 0.0;
            let mut mass = 0.0;
            for d in &data {
                for i in 0..d.len() {
                    mean += d.weights()[i] * frame.vector().project_value(d.bin(i));
                    mass += d.weights()[i];
                }
            }
            mean /= mass;
            let mut var = 0.0;
            for d in &data {
                for i in 0..d.len() {
                    let t = frame.vector().project_value(d.bin(i)) - mean;
                    var += d.weights()[i] * t * t;
                }
            }
            var / mass
        };
        assert!(variance(&frames[0]) >= variance(&frames[1]) - 1e-12);
    }

    #[test]
    fn select_projections_rejects_bad_counts() {
        let d = dist(0, 2, &[0.0, 0.0], &[1.0]);
        assert!(select_projections(std::slice::from_ref(&d), 0).is_err());
        assert!(select_projections(&[d], 3).is_err());
        assert!(select_projections(&[], 1).is_err());
    }
}
