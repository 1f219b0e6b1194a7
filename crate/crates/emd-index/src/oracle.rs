//! Slow, independent reference implementations used to validate the fast
//! kernels.
//!
//! Everything here trades speed for obviousness and deliberately avoids the
//! algorithmic shortcuts of the production code paths: the 1-D EMD oracle
//! works on prefix sums instead of a merge walk, integrals come from
//! adaptive quadrature instead of closed forms, and the error extrema come
//! from dense sampling instead of the piecewise-concavity argument. Tests
//! compare the two sides at tight tolerances.

use crate::distribution::DiscreteDistribution;
use crate::emd::exact_emd;
use crate::error::Result;
use crate::normal::{NormalParams, SubIntervalGrid};
use crate::projection::ProjectedDistribution;

/// Adaptive Simpson quadrature to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)] // recursion state, not an API
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, m, fm, whole, tol, 48)
}

/// 1-D EMD by prefix sums: sort the pooled breakpoints, accumulate both
/// CDFs independently, and sum `|F_a - F_b| * width` over the gaps.
pub fn oracle_emd_1d(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let mut cuts: Vec<f64> = a.iter().chain(b).map(|&(t, _)| t).collect();
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cuts.dedup();
    let cdf = |pts: &[(f64, f64)], t: f64| -> f64 {
        pts.iter().filter(|&&(x, _)| x <= t).map(|&(_, w)| w).sum()
    };
    let mut total = 0.0;
    for w in cuts.windows(2) {
        total += (cdf(a, w[0]) - cdf(b, w[0])).abs() * (w[1] - w[0]);
    }
    total
}

/// Exhaustive K-NN by scanning every object, ordered by `(distance, id)`.
pub fn oracle_knn(
    dataset: &[DiscreteDistribution],
    query: &DiscreteDistribution,
    k: usize,
) -> Result<Vec<(u64, f64)>> {
    let mut scored = Vec::with_capacity(dataset.len());
    for obj in dataset {
        scored.push((obj.id(), exact_emd(query, obj)?));
    }
    scored.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .unwrap()
            .then_with(|| a.0.cmp(&b.0))
    });
    scored.truncate(k);
    Ok(scored)
}

/// Error difference `D(t)` evaluated independently of the closed forms:
/// the step-CDF part of each segment is exact (`level * width`), the
/// normal part comes from adaptive Simpson on `Phi` itself.
pub fn oracle_error_difference(p: &ProjectedDistribution, n: NormalParams, t: f64) -> f64 {
    let phi = |x: f64| crate::normal::phi_cdf((x - n.mu) / n.sigma);
    let integral_to = |x: f64| -> f64 {
        let pts = p.points();
        let mut pi = 0;
        let mut level = 0.0;
        while pi < pts.len() && pts[pi].0 <= p.t_min() {
            level += pts[pi].1;
            pi += 1;
        }
        let mut acc = 0.0;
        let mut cur = p.t_min();
        while cur < x {
            let seg_end = if pi < pts.len() && pts[pi].0 < x {
                pts[pi].0
            } else {
                x
            };
            acc += level * (seg_end - cur) - adaptive_simpson(&phi, cur, seg_end, 1e-13);
            cur = seg_end;
            while pi < pts.len() && pts[pi].0 == seg_end {
                level += pts[pi].1;
                pi += 1;
            }
        }
        acc
    };
    2.0 * integral_to(t) - integral_to(p.t_max())
}

/// Dense-sampling extrema of the error difference `D` per sub-interval.
///
/// Samples `D` on a uniform grid (plus every CDF breakpoint and both
/// endpoints of each sub-interval) and sharpens the best interior samples
/// with ternary search, relying only on local unimodality between adjacent
/// samples. Returns `(err_min, err_max)` tables.
pub fn oracle_error_extrema(
    p: &ProjectedDistribution,
    n: NormalParams,
    grid: &SubIntervalGrid,
    samples_per_interval: usize,
) -> (Vec<f64>, Vec<f64>) {
    // Same evaluator as `error_difference_at`, with the constant full-range
    // integral hoisted out of the sampling loop.
    let full = crate::normal::integral_err_to(p, n, p.t_max());
    let d = |t: f64| 2.0 * crate::normal::integral_err_to(p, n, t) - full;
    let s = grid.count();
    let mut mins = vec![f64::INFINITY; s];
    let mut maxs = vec![f64::NEG_INFINITY; s];
    for k in 0..s {
        let (a, b) = (grid.boundaries()[k], grid.boundaries()[k + 1]);
        let mut ts: Vec<f64> = (0..=samples_per_interval)
            .map(|i| a + (b - a) * i as f64 / samples_per_interval as f64)
            .collect();
        for &(t, _) in p.points() {
            if t > a && t < b {
                ts.push(t);
                // straddle the jump in the step CDF
                ts.push(t - 1e-12 * (b - a));
            }
        }
        ts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        ts.dedup();
        let vals: Vec<f64> = ts.iter().map(|&t| d(t)).collect();
        for (i, &v) in vals.iter().enumerate() {
            if v < mins[k] {
                mins[k] = v;
            }
            if v > maxs[k] {
                maxs[k] = v;
            }
            // Ternary-polish around strict interior sample extrema. Ties are
            // skipped on purpose: equal neighbours mean the curvature there
            // is below sampling resolution, so the raw samples are already
            // as accurate as a search would get, and plateaus (saturated
            // tails) would otherwise trigger a search at every sample.
            if i > 0 && i + 1 < vals.len() {
                if v > vals[i - 1] && v > vals[i + 1] {
                    let refined = ternary_extremum(&d, ts[i - 1], ts[i + 1], true);
                    if refined > maxs[k] {
                        maxs[k] = refined;
                    }
                } else if v < vals[i - 1] && v < vals[i + 1] {
                    let refined = ternary_extremum(&d, ts[i - 1], ts[i + 1], false);
                    if refined < mins[k] {
                        mins[k] = refined;
                    }
                }
            }
        }
    }
    (mins, maxs)
}

/// Ternary search for a local extremum of `f` on `[a, b]`. Ninety rounds
/// shrink the bracket by (2/3)^90 ~ 1.5e-16, past f64 resolution.
fn ternary_extremum<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, maximize: bool) -> f64 {
    for _ in 0..90 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        let keep_left = if maximize {
            f(m1) >= f(m2)
        } else {
            f(m1) <= f(m2)
        };
        if keep_left {
            b = m2;
        } else {
            a = m1;
        }
    }
    let m = 0.5 * (a + b);
    if maximize {
        f(a).max(f(b)).max(f(m))
    } else {
        f(a).min(f(b)).min(f(m))
    }
}
