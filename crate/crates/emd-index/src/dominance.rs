//! Dominance space: normals as points, dominance as componentwise order,
//! and the region lower bound `emd_br`.
//!
//! A summarized normal is mapped to the line `z(t) = m*t + b` of its CDF
//! argument (`m = 1/sigma`, `b = -mu/sigma`) and then to the sheared
//! coordinates `(u, v)`: the line's values at the two ends of the frame
//! range. One normal's CDF lies below another's everywhere in range
//! exactly when both `u` and `v` are larger, so dominance becomes a
//! componentwise comparison and a set of normals gets an axis-aligned
//! bounding box. `emd_br` lower-bounds `emd_lb` against every member of
//! such a box at once, which is what lets the quad-tree prune whole
//! subtrees per node visit.

use crate::error::{Error, Result};
use crate::normal::{
    emd_normal, intersection_point, NormalParams, NormalSummary, SubIntervalGrid,
};

/// Margin by which a dominance comparison must clear to count as strict;
/// anything closer is classified as intersecting.
pub const DOMINANCE_SLACK: f64 = 1e-12;

/// Smallest slope for which a `(u, v)` corner still inverts to a proper
/// normal.
pub const MIN_CORNER_SLOPE: f64 = 1e-12;

/// A summarized normal in dominance space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DominancePoint {
    /// Line slope `1/sigma`.
    pub m: f64,
    /// Line offset `-mu/sigma`.
    pub b: f64,
    /// Line value at `t_min`.
    pub u: f64,
    /// Line value at `t_max`.
    pub v: f64,
}

/// Maps a summary onto its dominance-space point for the given range.
pub fn to_dominance_point(s: &NormalSummary, t_min: f64, t_max: f64) -> DominancePoint {
    from_params(s.normal(), t_min, t_max)
}

fn from_params(n: NormalParams, t_min: f64, t_max: f64) -> DominancePoint {
    let m = 1.0 / n.sigma;
    let b = -n.mu / n.sigma;
    DominancePoint {
        m,
        b,
        u: m * t_min + b,
        v: m * t_max + b,
    }
}

/// Outcome of a dominance comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dominance {
    /// `P`'s CDF lies strictly below `Q`'s over the whole range.
    PDominatesQ,
    /// `Q`'s CDF lies strictly below `P`'s over the whole range.
    QDominatesP,
    /// The CDFs cross inside the range (or touch within the slack).
    Intersecting,
}

/// Componentwise dominance test in `(u, v)`.
pub fn dominates(p: DominancePoint, q: DominancePoint) -> Dominance {
    if q.u - p.u > DOMINANCE_SLACK && q.v - p.v > DOMINANCE_SLACK {
        Dominance::PDominatesQ
    } else if p.u - q.u > DOMINANCE_SLACK && p.v - q.v > DOMINANCE_SLACK {
        Dominance::QDominatesP
    } else {
        Dominance::Intersecting
    }
}

/// Inverts a `(u, v)` corner back to `(mu, sigma)`. `None` when the
/// implied slope is too small to describe a proper normal.
pub fn corner_to_normal(u: f64, v: f64, t_min: f64, t_max: f64) -> Option<NormalParams> {
    let m = (v - u) / (t_max - t_min);
    if !(m > MIN_CORNER_SLOPE) {
        return None;
    }
    let b = u - m * t_min;
    Some(NormalParams {
        mu: -b / m,
        sigma: 1.0 / m,
    })
}

/// Axis-aligned box around a set of dominance points, together with the
/// members' aggregated error envelopes.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundingRegion {
    u_lo: f64,
    u_hi: f64,
    v_lo: f64,
    v_hi: f64,
    /// Per sub-interval, the smallest member `err_min`.
    err_min: Vec<f64>,
    /// Per sub-interval, the largest member `err_max`.
    err_max: Vec<f64>,
    /// Envelope of the members' full-range error values.
    err_full_min: f64,
    err_full_max: f64,
    member_count: usize,
}

impl BoundingRegion {
    /// Region around the given members.
    pub fn from_members<'a, I>(members: I, t_min: f64, t_max: f64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a NormalSummary>,
    {
        let mut region: Option<Self> = None;
        for s in members {
            let single = Self::from_single(s, t_min, t_max);
            region = Some(match region {
                None => single,
                Some(r) => r.merged(&single)?,
            });
        }
        region.ok_or_else(|| {
            Error::InvalidParameter("a bounding region needs at least one member".into())
        })
    }

    fn from_single(s: &NormalSummary, t_min: f64, t_max: f64) -> Self {
        let p = to_dominance_point(s, t_min, t_max);
        Self {
            u_lo: p.u,
            u_hi: p.u,
            v_lo: p.v,
            v_hi: p.v,
            err_min: s.err_min().to_vec(),
            err_max: s.err_max().to_vec(),
            err_full_min: s.err_full(),
            err_full_max: s.err_full(),
            member_count: 1,
        }
    }

    /// Componentwise union of two regions (used when aggregating tree
    /// nodes); identical to building from the combined member set.
    pub fn merged(&self, other: &Self) -> Result<Self> {
        if self.err_min.len() != other.err_min.len() {
            return Err(Error::GridMismatch(format!(
                "cannot merge regions with {} and {} sub-intervals",
                self.err_min.len(),
                other.err_min.len()
            )));
        }
        Ok(Self {
            u_lo: self.u_lo.min(other.u_lo),
            u_hi: self.u_hi.max(other.u_hi),
            v_lo: self.v_lo.min(other.v_lo),
            v_hi: self.v_hi.max(other.v_hi),
            err_min: self
                .err_min
                .iter()
                .zip(&other.err_min)
                .map(|(a, b)| a.min(*b))
                .collect(),
            err_max: self
                .err_max
                .iter()
                .zip(&other.err_max)
                .map(|(a, b)| a.max(*b))
                .collect(),
            err_full_min: self.err_full_min.min(other.err_full_min),
            err_full_max: self.err_full_max.max(other.err_full_max),
            member_count: self.member_count + other.member_count,
        })
    }

    pub fn u_lo(&self) -> f64 {
        self.u_lo
    }

    pub fn u_hi(&self) -> f64 {
        self.u_hi
    }

    pub fn v_lo(&self) -> f64 {
        self.v_lo
    }

    pub fn v_hi(&self) -> f64 {
        self.v_hi
    }

    pub fn member_count(&self) -> usize {
        self.member_count
    }

    pub fn sub_intervals(&self) -> usize {
        self.err_min.len()
    }

    pub fn err_min(&self) -> &[f64] {
        &self.err_min
    }

    pub fn err_max(&self) -> &[f64] {
        &self.err_max
    }

    pub fn err_full_min(&self) -> f64 {
        self.err_full_min
    }

    pub fn err_full_max(&self) -> f64 {
        self.err_full_max
    }

    /// Whether the point lies inside the box (boundaries included).
    pub fn contains(&self, p: DominancePoint) -> bool {
        self.u_lo <= p.u && p.u <= self.u_hi && self.v_lo <= p.v && p.v <= self.v_hi
    }

    /// Whether `other` lies entirely inside this box.
    pub fn contains_region(&self, other: &Self) -> bool {
        self.u_lo <= other.u_lo
            && other.u_hi <= self.u_hi
            && self.v_lo <= other.v_lo
            && other.v_hi <= self.v_hi
    }

    /// Aggregated envelope around an intersection point, mirroring
    /// `NormalSummary::err_bounds_at`.
    fn err_bounds_at(&self, t_is: Option<f64>, grid: &SubIntervalGrid) -> (f64, f64) {
        match t_is.and_then(|t| grid.locate(t)) {
            Some(i) => (self.err_min[i], self.err_max[i]),
            None => (self.err_full_min, self.err_full_max),
        }
    }

    fn global_err_min(&self) -> f64 {
        self.err_min.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn global_err_max(&self) -> f64 {
        self.err_max
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Position of a query relative to a region's box, deciding which bound
/// formula `emd_br` applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EmdBrCase {
    /// The query is beyond the box in both coordinates, same side: a
    /// strict dominance relation with every member.
    Complete,
    /// Beyond the box in exactly one coordinate.
    Partial,
    /// Beyond the box in both coordinates, opposite sides: the query's
    /// line crosses every member's line inside the range.
    Opposite,
    /// Inside the box.
    Inside,
}

/// Classifies a query point against a region's box.
pub fn dispatch_case(region: &BoundingRegion, q: DominancePoint) -> EmdBrCase {
    let u_hi = q.u > region.u_hi;
    let u_lo = q.u < region.u_lo;
    let v_hi = q.v > region.v_hi;
    let v_lo = q.v < region.v_lo;
    if (u_hi && v_hi) || (u_lo && v_lo) {
        EmdBrCase::Complete
    } else if (u_hi && v_lo) || (u_lo && v_hi) {
        EmdBrCase::Opposite
    } else if u_hi || u_lo || v_hi || v_lo {
        EmdBrCase::Partial
    } else {
        EmdBrCase::Inside
    }
}

/// Triangle lower bound on the normal distance from `q` to anything on the
/// dominance-ordered segment between `corner` and `m_is`:
/// `(d(corner,q) + d(m_is,q) - d(m_is,corner)) / 2`.
fn triangle_term(
    corner: Option<NormalParams>,
    m_is: Option<NormalParams>,
    q: NormalParams,
    t_min: f64,
    t_max: f64,
) -> f64 {
    match (corner, m_is) {
        (Some(c), Some(m)) => {
            let nt = 0.5
                * (emd_normal(c, q, t_min, t_max) + emd_normal(m, q, t_min, t_max)
                    - emd_normal(m, c, t_min, t_max));
            nt.max(0.0)
        }
        // A degenerate corner cannot be inverted to a normal; fall back to
        // the errors-only bound.
        _ => 0.0,
    }
}

/// Lower bound on `emd_lb(member, q)` over every member of the region.
///
/// The normal term depends on where `q` falls relative to the box: the
/// nearest box corner under complete dominance, a triangle bound through
/// the clamped boundary point under partial or no dominance, and zero when
/// `q` is inside the box. The error term always takes the pessimistic
/// direction; where members on both sides of `q` can occur, both sign
/// patterns are evaluated and the smaller (safe) value wins.
pub fn emd_br(region: &BoundingRegion, q: &NormalSummary, grid: &SubIntervalGrid) -> Result<f64> {
    let s = grid.count();
    if region.sub_intervals() != s || q.err_min().len() != s {
        return Err(Error::GridMismatch(format!(
            "region has {} sub-intervals, query {}, grid {}",
            region.sub_intervals(),
            q.err_min().len(),
            s
        )));
    }
    let (t_min, t_max) = (grid.t_min(), grid.t_max());
    let qp = from_params(q.normal(), t_min, t_max);
    let nq = q.normal();

    // Error sign patterns, from the two orientations of the exact
    // inequality behind emd_lb. When every member's CDF starts below the
    // query's at t_min, the "members below" pattern applies; when every
    // member starts above, the "query below" pattern; when members sit on
    // both sides, the minimum of the two is a bound for each member
    // individually (global envelopes over all sub-intervals throughout).
    let members_below = |nt: f64| nt - region.global_err_max() + q.global_err_min();
    let query_below = |nt: f64| nt + region.global_err_min() - q.global_err_max();
    let mixed = |nt: f64| members_below(nt).min(query_below(nt));

    let bound = match dispatch_case(region, qp) {
        EmdBrCase::Complete => {
            // Every member relates to q the same way its nearest box
            // corner does; that corner also minimizes the normal distance
            // over the box (its CDF sits between every member's and q's).
            let region_below = qp.u > region.u_hi;
            let corner = if region_below {
                corner_to_normal(region.u_hi, region.v_hi, t_min, t_max)
            } else {
                corner_to_normal(region.u_lo, region.v_lo, t_min, t_max)
            };
            match corner {
                Some(c) => {
                    let t_is = intersection_point(c, nq);
                    let nt = emd_normal(c, nq, t_min, t_max);
                    let (r_min, r_max) = region.err_bounds_at(t_is, grid);
                    let (q_min, q_max) = q.err_bounds_at(t_is, grid);
                    if region_below {
                        nt - r_max + q_min
                    } else {
                        nt + r_min - q_max
                    }
                }
                None => {
                    if region_below {
                        members_below(0.0)
                    } else {
                        query_below(0.0)
                    }
                }
            }
        }
        EmdBrCase::Partial => {
            let u_hi = qp.u > region.u_hi;
            let u_lo = qp.u < region.u_lo;
            let v_hi = qp.v > region.v_hi;
            // Clamp q onto the box; the relevant corner shares the box
            // edge that the clamped point lands on.
            let (corner, m_is) = if u_hi {
                ((region.u_hi, region.v_hi), (region.u_hi, qp.v))
            } else if u_lo {
                ((region.u_lo, region.v_lo), (region.u_lo, qp.v))
            } else if v_hi {
                ((region.u_hi, region.v_hi), (qp.u, region.v_hi))
            } else {
                ((region.u_lo, region.v_lo), (qp.u, region.v_lo))
            };
            let nt = triangle_term(
                corner_to_normal(corner.0, corner.1, t_min, t_max),
                corner_to_normal(m_is.0, m_is.1, t_min, t_max),
                nq,
                t_min,
                t_max,
            );
            if u_hi {
                // Every member starts below q at t_min.
                members_below(nt)
            } else if u_lo {
                query_below(nt)
            } else {
                // v beyond the box with u inside: members on both sides.
                mixed(nt)
            }
        }
        EmdBrCase::Opposite => {
            let u_hi = qp.u > region.u_hi;
            // The synthetic corner nearest q; it may invert to nothing, in
            // which case only the errors-only bound remains.
            let m_is = if u_hi {
                corner_to_normal(region.u_hi, region.v_lo, t_min, t_max)
            } else {
                corner_to_normal(region.u_lo, region.v_hi, t_min, t_max)
            };
            // Neither box corner is guaranteed to realize the minimum
            // normal distance here, so evaluate the triangle through both
            // and keep the smaller bound.
            let nt_l = triangle_term(
                corner_to_normal(region.u_lo, region.v_lo, t_min, t_max),
                m_is,
                nq,
                t_min,
                t_max,
            );
            let nt_u = triangle_term(
                corner_to_normal(region.u_hi, region.v_hi, t_min, t_max),
                m_is,
                nq,
                t_min,
                t_max,
            );
            let nt = nt_l.min(nt_u);
            if u_hi {
                // q starts above every member and ends below: every
                // member's line crosses q's inside the range, with the
                // member below on the left.
                members_below(nt)
            } else {
                query_below(nt)
            }
        }
        EmdBrCase::Inside => mixed(0.0),
    };
    Ok(bound.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::DiscreteDistribution;
    use crate::normal::{emd_lb, fit_normal, phi_cdf, precompute_errors};
    use crate::projection::{project, ProjectedDistribution, ProjectionFrame, ProjectionVector};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn frame(lo: f64, hi: f64) -> ProjectionFrame {
        ProjectionFrame::new(ProjectionVector::new(vec![1.0], 0.0).unwrap(), lo, hi).unwrap()
    }

    fn projected(bins: &[f64], weights: &[f64], lo: f64, hi: f64) -> ProjectedDistribution {
        let d = DiscreteDistribution::new_renormalized(0, 1, bins.to_vec(), weights.to_vec())
            .unwrap();
        project(&d, &frame(lo, hi)).unwrap()
    }

    fn random_summary(
        rng: &mut ChaCha8Rng,
        grid: &SubIntervalGrid,
        id: u64,
        spread: f64,
    ) -> NormalSummary {
        let (lo, hi) = (grid.t_min(), grid.t_max());
        let n = rng.gen_range(1..8);
        let center = rng.gen_range(-spread..spread);
        let margin = 0.05 * (hi - lo);
        let bins: Vec<f64> = (0..n)
            .map(|_| {
                (center + rng.gen_range(-1.0..1.0f64))
                    .clamp(lo + margin, hi - margin)
            })
            .collect();
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let p = projected(&bins, &w, lo, hi);
        precompute_errors(&p, fit_normal(&p), grid, id).unwrap()
    }

    #[test]
    fn dominance_point_examples() {
        let mk = |mu: f64, sigma: f64| NormalParams { mu, sigma };
        let p = from_params(mk(0.0, 1.0), -1.0, 1.0);
        assert_eq!((p.m, p.b), (1.0, 0.0));
        let p = from_params(mk(2.0, 0.5), -1.0, 1.0);
        assert_eq!((p.m, p.b), (2.0, -4.0));
        let p = from_params(mk(2.0, 1.0), -1.0, 1.0);
        assert_eq!((p.u, p.v), (-3.0, -1.0));
    }

    #[test]
    fn corner_round_trip_and_degenerate() {
        let n = corner_to_normal(-3.0, -1.0, -1.0, 1.0).unwrap();
        assert!((n.mu - 2.0).abs() < 1e-12);
        assert!((n.sigma - 1.0).abs() < 1e-12);
        assert!(corner_to_normal(0.5, 0.5, -1.0, 1.0).is_none());
        assert!(corner_to_normal(0.5, 0.4, -1.0, 1.0).is_none());

        let mut rng = ChaCha8Rng::seed_from_u64(50);
        for _ in 0..50 {
            let mu = rng.gen_range(-3.0..3.0);
            let sigma = rng.gen_range(0.05..4.0);
            let p = from_params(NormalParams { mu, sigma }, -2.0, 3.0);
            let back = corner_to_normal(p.u, p.v, -2.0, 3.0).unwrap();
            assert!((back.mu - mu).abs() < 1e-9);
            assert!((back.sigma - sigma).abs() < 1e-9);
        }
    }

    #[test]
    fn dominance_examples() {
        let mk = |mu: f64, sigma: f64| from_params(NormalParams { mu, sigma }, -1.0, 1.0);
        // (t-2) < t everywhere on the range.
        assert_eq!(dominates(mk(2.0, 1.0), mk(0.0, 1.0)), Dominance::PDominatesQ);
        assert_eq!(dominates(mk(0.0, 1.0), mk(2.0, 1.0)), Dominance::QDominatesP);
        assert_eq!(dominates(mk(0.5, 1.0), mk(0.5, 1.0)), Dominance::Intersecting);
        // Lines t and (t-0.1)/2 cross inside the range.
        assert_eq!(
            dominates(mk(0.0, 1.0), mk(0.1, 2.0)),
            Dominance::Intersecting
        );
    }

    #[test]
    fn line_test_matches_dense_cdf_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..200 {
            let (lo, hi) = (-2.0 - rng.gen_range(0.0..2.0), 2.0 + rng.gen_range(0.0..2.0));
            let p = NormalParams {
                mu: rng.gen_range(-2.0..2.0),
                sigma: rng.gen_range(0.1..3.0),
            };
            let q = NormalParams {
                mu: rng.gen_range(-2.0..2.0),
                sigma: rng.gen_range(0.1..3.0),
            };
            let dp = from_params(p, lo, hi);
            let dq = from_params(q, lo, hi);
            let mut p_strictly_below = true;
            let mut q_strictly_below = true;
            for i in 0..=1000 {
                let t = lo + (hi - lo) * i as f64 / 1000.0;
                let cp = phi_cdf((t - p.mu) / p.sigma);
                let cq = phi_cdf((t - q.mu) / q.sigma);
                if cp >= cq {
                    p_strictly_below = false;
                }
                if cq >= cp {
                    q_strictly_below = false;
                }
            }
            match dominates(dp, dq) {
                Dominance::PDominatesQ => assert!(p_strictly_below),
                Dominance::QDominatesP => assert!(q_strictly_below),
                Dominance::Intersecting => {
                    // Slack may demote borderline strict cases; it must
                    // never promote a crossing pair.
                    let margin_u = (dp.u - dq.u).abs();
                    let margin_v = (dp.v - dq.v).abs();
                    assert!(
                        !(p_strictly_below || q_strictly_below)
                            || margin_u <= 1e-3
                            || margin_v <= 1e-3
                    );
                }
            }
        }
    }

    #[test]
    fn region_box_is_componentwise() {
        let mk = |u: f64, v: f64, id: u64| {
            let n = corner_to_normal(u, v, -1.0, 1.0).unwrap();
            NormalSummary::from_parts(id, n.mu, n.sigma, 0.0, vec![0.0; 2], vec![0.0; 2]).unwrap()
        };
        let members = [mk(0.0, 1.0, 0), mk(1.0, 2.0, 1), mk(0.5, 3.0, 2)];
        let r = BoundingRegion::from_members(members.iter(), -1.0, 1.0).unwrap();
        assert!((r.u_lo() - 0.0).abs() < 1e-12);
        assert!((r.u_hi() - 1.0).abs() < 1e-12);
        assert!((r.v_lo() - 1.0).abs() < 1e-12);
        assert!((r.v_hi() - 3.0).abs() < 1e-12);
        assert_eq!(r.member_count(), 3);
        assert!(
            BoundingRegion::from_members(std::iter::empty(), -1.0, 1.0).is_err()
        );
    }

    #[test]
    fn region_corners_envelop_members() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let grid = SubIntervalGrid::even(-3.0, 3.0, 3).unwrap();
        let members: Vec<NormalSummary> = (0..40)
            .map(|i| random_summary(&mut rng, &grid, i, 2.0))
            .collect();
        let r = BoundingRegion::from_members(members.iter(), -3.0, 3.0).unwrap();
        let m_l = DominancePoint {
            m: 0.0,
            b: 0.0,
            u: r.u_lo(),
            v: r.v_lo(),
        };
        let m_u = DominancePoint {
            m: 0.0,
            b: 0.0,
            u: r.u_hi(),
            v: r.v_hi(),
        };
        for s in &members {
            let p = to_dominance_point(s, -3.0, 3.0);
            assert!(r.contains(p));
            // Never the wrong strict order against the corners.
            assert_ne!(dominates(m_l, p), Dominance::QDominatesP);
            assert_ne!(dominates(p, m_u), Dominance::QDominatesP);
        }
        // The synthetic corners always invert on the main diagonal.
        assert!(corner_to_normal(r.u_lo(), r.v_lo(), -3.0, 3.0).is_some());
        assert!(corner_to_normal(r.u_hi(), r.v_hi(), -3.0, 3.0).is_some());
    }

    #[test]
    fn merged_equals_from_members() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let grid = SubIntervalGrid::even(-3.0, 3.0, 4).unwrap();
        let members: Vec<NormalSummary> = (0..20)
            .map(|i| random_summary(&mut rng, &grid, i, 2.0))
            .collect();
        let all = BoundingRegion::from_members(members.iter(), -3.0, 3.0).unwrap();
        let left = BoundingRegion::from_members(members[..7].iter(), -3.0, 3.0).unwrap();
        let right = BoundingRegion::from_members(members[7..].iter(), -3.0, 3.0).unwrap();
        let merged = left.merged(&right).unwrap();
        assert_eq!(all, merged);
        assert!(merged.contains_region(&left) && merged.contains_region(&right));
    }

    #[test]
    fn singleton_complete_dominance_equals_emd_lb() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let grid = SubIntervalGrid::even(-4.0, 4.0, 3).unwrap();
        let mut checked = 0;
        while checked < 60 {
            let member = random_summary(&mut rng, &grid, 0, 1.0);
            let q = random_summary(&mut rng, &grid, 1, 3.0);
            let region = BoundingRegion::from_members([&member], -4.0, 4.0).unwrap();
            let qp = to_dominance_point(&q, -4.0, 4.0);
            if dispatch_case(&region, qp) != EmdBrCase::Complete {
                continue;
            }
            let br = emd_br(&region, &q, &grid).unwrap();
            let lb = emd_lb(&member, &q, &grid).unwrap();
            assert!(
                (br - lb).abs() < 1e-9,
                "singleton complete case: {br} vs {lb}"
            );
            checked += 1;
        }
    }

    #[test]
    fn inside_with_zero_envelopes_is_zero() {
        let grid = SubIntervalGrid::even(-1.0, 1.0, 2).unwrap();
        let mk = |u: f64, v: f64, id: u64| {
            let n = corner_to_normal(u, v, -1.0, 1.0).unwrap();
            NormalSummary::from_parts(id, n.mu, n.sigma, 0.0, vec![0.0; 2], vec![0.0; 2]).unwrap()
        };
        let region =
            BoundingRegion::from_members([&mk(0.0, 1.0, 0), &mk(1.0, 3.0, 1)], -1.0, 1.0).unwrap();
        let q = mk(0.5, 2.0, 2);
        assert_eq!(
            dispatch_case(&region, to_dominance_point(&q, -1.0, 1.0)),
            EmdBrCase::Inside
        );
        assert_eq!(emd_br(&region, &q, &grid).unwrap(), 0.0);
    }

    #[test]
    fn corner_minimizes_normal_distance_over_dominated_box() {
        // When the whole box dominates q, the upper corner's normal is the
        // closest: every other valid point in the box sits pointwise
        // farther from q's CDF.
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let (lo, hi) = (-4.0, 4.0);
        let grid = SubIntervalGrid::even(lo, hi, 2).unwrap();
        let mut checked = 0;
        while checked < 40 {
            let members: Vec<NormalSummary> = (0..6)
                .map(|i| random_summary(&mut rng, &grid, i, 1.0))
                .collect();
            let region = BoundingRegion::from_members(members.iter(), lo, hi).unwrap();
            let q = random_summary(&mut rng, &grid, 99, 3.0);
            let qp = to_dominance_point(&q, lo, hi);
            if !(qp.u > region.u_hi() && qp.v > region.v_hi()) {
                continue;
            }
            let corner = corner_to_normal(region.u_hi(), region.v_hi(), lo, hi).unwrap();
            let base = emd_normal(corner, q.normal(), lo, hi);
            for _ in 0..50 {
                let u = rng.gen_range(region.u_lo()..=region.u_hi());
                let v = rng.gen_range(region.v_lo()..=region.v_hi());
                if let Some(r) = corner_to_normal(u, v, lo, hi) {
                    let d = emd_normal(r, q.normal(), lo, hi);
                    assert!(base <= d + 1e-9, "{base} > {d}");
                }
            }
            checked += 1;
        }
    }

    #[test]
    fn emd_br_is_sound_across_all_cases() {
        // The central property: emd_br never exceeds any member's emd_lb,
        // exercised across every dispatch case.
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let (lo, hi) = (-5.0, 5.0);
        let grid = SubIntervalGrid::even(lo, hi, 4).unwrap();
        let mut seen: HashMap<EmdBrCase, usize> = HashMap::new();
        let mut trials = 0;
        while trials < 20000
            && (seen.len() < 4 || seen.values().any(|&c| c < 120))
        {
            trials += 1;
            let count = rng.gen_range(1..24);
            let member_spread = rng.gen_range(0.1..1.0);
            let members: Vec<NormalSummary> = (0..count)
                .map(|i| random_summary(&mut rng, &grid, i, member_spread))
                .collect();
            let region = BoundingRegion::from_members(members.iter(), lo, hi).unwrap();
            let q_spread = rng.gen_range(0.5..3.5);
            let q = random_summary(&mut rng, &grid, 999, q_spread);
            let case = dispatch_case(&region, to_dominance_point(&q, lo, hi));
            *seen.entry(case).or_insert(0) += 1;
            let br = emd_br(&region, &q, &grid).unwrap();
            assert!(br >= 0.0);
            let min_lb = members
                .iter()
                .map(|m| emd_lb(m, &q, &grid).unwrap())
                .fold(f64::INFINITY, f64::min);
            assert!(
                br <= min_lb + 1e-6,
                "case {case:?}: emd_br {br} exceeds min member emd_lb {min_lb}"
            );
        }
        assert!(
            seen.len() == 4 && seen.values().all(|&c| c >= 120),
            "case coverage too thin: {seen:?} after {trials} trials"
        );
    }

    #[test]
    fn emd_br_rejects_grid_mismatch() {
        let grid3 = SubIntervalGrid::even(-1.0, 1.0, 3).unwrap();
        let grid2 = SubIntervalGrid::even(-1.0, 1.0, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let s = random_summary(&mut rng, &grid3, 0, 0.5);
        let region = BoundingRegion::from_members([&s], -1.0, 1.0).unwrap();
        assert!(matches!(
            emd_br(&region, &s, &grid2),
            Err(Error::GridMismatch(_))
        ));
    }
}
