//! Exact K-NN query processing.
//!
//! A query runs three stages. First a best-first traversal of every
//! projection's quad-tree, with a min-priority queue per projection keyed
//! by the node bound (`emd_br`) or, for leaf entries, the per-object
//! normal bound (`emd_lb`). The traversals are aggregated round-robin in
//! the style of a threshold algorithm: the first time an object is popped
//! anywhere, its normal bound in every other projection is read directly
//! from the summary tables, giving its combined index bound at once, and
//! traversal halts when the combined queue frontiers exceed the current
//! k-th best exact distance. Surviving candidates then pass a combined
//! exact-projection bound and finally the exact EMD.
//!
//! Every reported neighbor underwent `exact_emd`, so results are exact;
//! the bounds only decide how much work that takes. Pruning always
//! compares `bound > threshold * (1 + PRUNE_SLACK)`, so equality never
//! prunes and the k seeds taken before the threshold exists keep the
//! first comparisons sound.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use crate::distribution::DiscreteDistribution;
use crate::dominance::{emd_br, to_dominance_point, DominancePoint};
use crate::emd::exact_emd;
use crate::error::{Error, Result};
use crate::index::EmdIndex;
use crate::normal::{emd_lb, fit_normal, precompute_errors, NormalSummary};
use crate::par;
use crate::projection::{
    combine_projection_bounds, project, projection_emd, ProjectedDistribution,
};
use crate::quadtree::NodeKind;

/// Relative slack on every prune comparison; equality never prunes.
pub const PRUNE_SLACK: f64 = 1e-9;

/// The query-side analogue of what the index stores per projection: the
/// projected distribution, its fitted normal summary over the stored grid,
/// and its dominance-space position.
#[derive(Debug, Clone)]
pub struct QuerySummary {
    projections: Vec<QueryProjection>,
}

#[derive(Debug, Clone)]
struct QueryProjection {
    projected: ProjectedDistribution,
    summary: NormalSummary,
    point: DominancePoint,
}

impl QuerySummary {
    /// Projects and summarizes `query` with the index's stored frames and
    /// grids.
    pub fn new(index: &EmdIndex, query: &DiscreteDistribution) -> Result<Self> {
        if query.dim() != index.dim() {
            return Err(Error::DimensionMismatch {
                left: index.dim(),
                right: query.dim(),
            });
        }
        let projections = index
            .projections()
            .iter()
            .map(|p| {
                let projected = project(query, p.frame())?;
                let params = fit_normal(&projected);
                let summary = precompute_errors(&projected, params, p.grid(), query.id())?;
                let point = to_dominance_point(&summary, p.frame().t_min(), p.frame().t_max());
                Ok(QueryProjection {
                    projected,
                    summary,
                    point,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { projections })
    }

    pub fn projected(&self, projection: usize) -> &ProjectedDistribution {
        &self.projections[projection].projected
    }

    pub fn summary(&self, projection: usize) -> &NormalSummary {
        &self.projections[projection].summary
    }

    pub fn point(&self, projection: usize) -> DominancePoint {
        self.projections[projection].point
    }
}

/// The k nearest neighbors, ascending by exact distance, ties broken by
/// ascending object id. Every distance was computed by `exact_emd`.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub neighbors: Vec<(u64, f64)>,
}

/// Work counters and stage timings for one query.
#[derive(Debug, Clone, Default)]
pub struct QueryStats {
    /// Quad-tree nodes expanded across all projections.
    pub nodes_visited: usize,
    /// Candidates whose combined index bound passed the threshold.
    pub index_survivors: usize,
    /// Of those, candidates whose combined exact-projection bound passed.
    pub projection_survivors: usize,
    /// Of those, exact EMD evaluations (always all of them).
    pub exact_emds_performed: usize,
    pub traversal_time: Duration,
    pub projection_time: Duration,
    pub exact_time: Duration,
}

impl QueryStats {
    /// Total time across stages.
    pub fn wall_time(&self) -> Duration {
        self.traversal_time + self.projection_time + self.exact_time
    }
}

/// One refined candidate's bounds, for inspecting filter tightness.
#[derive(Debug, Clone, Copy)]
pub struct CandidateTrace {
    pub object_id: u64,
    pub index_bound: f64,
    pub projection_bound: f64,
    pub exact: f64,
}

/// Aggregate over a batch of queries.
#[derive(Debug, Clone)]
pub struct BatchReport {
    pub queries: usize,
    pub mean_wall_time: Duration,
    pub median_wall_time: Duration,
    pub mean_nodes_visited: f64,
    pub mean_index_survivors: f64,
    pub mean_projection_survivors: f64,
    pub mean_exact_emds: f64,
}

/// Exact K-NN of `query` among the indexed records.
pub fn knn(
    index: &EmdIndex,
    query: &DiscreteDistribution,
    k: usize,
) -> Result<(QueryResult, QueryStats)> {
    let (result, stats, _) = knn_inner(index, query, k, false)?;
    Ok((result, stats))
}

/// As [`knn`], additionally returning the bound chain of every candidate
/// that reached the exact stage.
pub fn knn_traced(
    index: &EmdIndex,
    query: &DiscreteDistribution,
    k: usize,
) -> Result<(QueryResult, QueryStats, Vec<CandidateTrace>)> {
    knn_inner(index, query, k, true)
}

/// Runs `queries` (in parallel when the `parallel` feature is active) and
/// aggregates their statistics. Results are in query order and identical
/// to running [`knn`] per query.
pub fn batch_query(
    index: &EmdIndex,
    queries: &[DiscreteDistribution],
    k: usize,
) -> Result<(Vec<(QueryResult, QueryStats)>, BatchReport)> {
    let outcomes = par::map_collect(queries, |q| knn(index, q, k))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let n = outcomes.len();
    let mut walls: Vec<Duration> = outcomes.iter().map(|(_, s)| s.wall_time()).collect();
    walls.sort_unstable();
    let mean = |f: &dyn Fn(&QueryStats) -> usize| -> f64 {
        if n == 0 {
            0.0
        } else {
            outcomes.iter().map(|(_, s)| f(s) as f64).sum::<f64>() / n as f64
        }
    };
    let report = BatchReport {
        queries: n,
        mean_wall_time: if n == 0 {
            Duration::ZERO
        } else {
            walls.iter().sum::<Duration>() / n as u32
        },
        median_wall_time: walls.get(n / 2).copied().unwrap_or(Duration::ZERO),
        mean_nodes_visited: mean(&|s| s.nodes_visited),
        mean_index_survivors: mean(&|s| s.index_survivors),
        mean_projection_survivors: mean(&|s| s.projection_survivors),
        mean_exact_emds: mean(&|s| s.exact_emds_performed),
    };
    Ok((outcomes, report))
}

/// What sits in a projection's priority queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Item {
    /// A tree node awaiting expansion.
    Node(usize),
    /// A leaf entry: a position into the summary table.
    Entry(u32),
}

impl Item {
    /// Deterministic tie key: entries before nodes, then by id.
    fn tie_key(&self) -> (u8, u64) {
        match *self {
            Item::Entry(e) => (0, e as u64),
            Item::Node(n) => (1, n as u64),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct QueueItem {
    bound: f64,
    item: Item,
}

// BinaryHeap is a max-heap; reverse the comparison so the smallest bound
// (with a deterministic tie key) pops first.
impl Ord for QueueItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.item.tie_key().cmp(&self.item.tie_key()))
    }
}

impl PartialOrd for QueueItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for QueueItem {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for QueueItem {}

/// Max-heap key for the current k best: largest (distance, id) on top, so
/// popping overflow keeps the smallest distances with ties won by lower id.
#[derive(Debug, Clone, Copy)]
struct Best {
    distance: f64,
    id: u64,
}

impl Ord for Best {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then_with(|| self.id.cmp(&other.id))
    }
}

impl PartialOrd for Best {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Best {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Best {}

fn knn_inner(
    index: &EmdIndex,
    query: &DiscreteDistribution,
    k: usize,
    trace: bool,
) -> Result<(QueryResult, QueryStats, Vec<CandidateTrace>)> {
    let n = index.len();
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!(
            "k must be between 1 and the {n} indexed records, got {k}"
        )));
    }
    let start = Instant::now();
    let qs = QuerySummary::new(index, query)?;
    let projections = index.projections();
    let p_count = projections.len();

    let mut heaps: Vec<BinaryHeap<QueueItem>> = Vec::with_capacity(p_count);
    for (pi, p) in projections.iter().enumerate() {
        let mut heap = BinaryHeap::new();
        let bound = emd_br(p.tree().root().region(), qs.summary(pi), p.grid())?;
        heap.push(QueueItem {
            bound,
            item: Item::Node(0),
        });
        heaps.push(heap);
    }

    let mut seen = vec![false; n];
    let mut kbest: BinaryHeap<Best> = BinaryHeap::with_capacity(k + 1);
    let mut stats = QueryStats::default();
    let mut traces = Vec::new();
    let mut seeded = 0usize;
    let mut projection_time = Duration::ZERO;
    let mut exact_time = Duration::ZERO;

    let threshold = |kbest: &BinaryHeap<Best>| -> f64 {
        if kbest.len() == k {
            kbest.peek().map_or(f64::INFINITY, |b| b.distance)
        } else {
            f64::INFINITY
        }
    };

    'traversal: loop {
        let mut popped_any = false;
        for pi in 0..p_count {
            // Threshold-algorithm stop: once the combined queue frontiers
            // exceed the k-th best exact distance, no unseen object can
            // still belong to the result set (an exhausted queue means
            // every object was already seen, so an infinite frontier is
            // also a correct stop).
            let tau = threshold(&kbest);
            if tau.is_finite() {
                let frontiers: Vec<f64> = heaps
                    .iter()
                    .map(|h| h.peek().map_or(f64::INFINITY, |i| i.bound))
                    .collect();
                let combined = if frontiers.iter().all(|f| f.is_finite()) {
                    combine_projection_bounds(&frontiers)?
                } else {
                    f64::INFINITY
                };
                if combined > tau * (1.0 + PRUNE_SLACK) {
                    break 'traversal;
                }
            }

            let Some(popped) = heaps[pi].pop() else {
                continue;
            };
            popped_any = true;
            match popped.item {
                Item::Node(id) => {
                    stats.nodes_visited += 1;
                    let node = projections[pi].tree().node(id);
                    match node.kind() {
                        NodeKind::Internal(children) => {
                            for &c in children {
                                let child = projections[pi].tree().node(c);
                                let bound =
                                    emd_br(child.region(), qs.summary(pi), projections[pi].grid())?;
                                heaps[pi].push(QueueItem {
                                    bound,
                                    item: Item::Node(c),
                                });
                            }
                        }
                        NodeKind::Leaf(entries) => {
                            for &e in entries {
                                let bound = emd_lb(
                                    &projections[pi].summaries()[e as usize],
                                    qs.summary(pi),
                                    projections[pi].grid(),
                                )?;
                                heaps[pi].push(QueueItem {
                                    bound,
                                    item: Item::Entry(e),
                                });
                            }
                        }
                    }
                }
                Item::Entry(pos) => {
                    let object = pos as usize;
                    if seen[object] {
                        continue;
                    }
                    seen[object] = true;
                    let record = &index.dataset()[object];

                    // Random access: the object's normal bound in every
                    // projection comes straight from the summary tables.
                    let mut normal_bounds = Vec::with_capacity(p_count);
                    for (pj, p) in projections.iter().enumerate() {
                        normal_bounds.push(emd_lb(
                            &p.summaries()[object],
                            qs.summary(pj),
                            p.grid(),
                        )?);
                    }
                    let index_bound = combine_projection_bounds(&normal_bounds)?;

                    // The first k candidates seed the threshold and skip
                    // the filters.
                    let seed = seeded < k;
                    if seed {
                        seeded += 1;
                    }
                    let tau = threshold(&kbest);
                    if !seed && index_bound > tau * (1.0 + PRUNE_SLACK) {
                        continue;
                    }
                    stats.index_survivors += 1;

                    let stage = Instant::now();
                    let mut proj_bounds = Vec::with_capacity(p_count);
                    for (pj, p) in projections.iter().enumerate() {
                        let po = project(record, p.frame())?;
                        proj_bounds.push(projection_emd(&po, qs.projected(pj))?);
                    }
                    let projection_bound = combine_projection_bounds(&proj_bounds)?;
                    projection_time += stage.elapsed();
                    let tau = threshold(&kbest);
                    if !seed && projection_bound > tau * (1.0 + PRUNE_SLACK) {
                        continue;
                    }
                    stats.projection_survivors += 1;

                    let stage = Instant::now();
                    let exact = exact_emd(record, query)?;
                    exact_time += stage.elapsed();
                    stats.exact_emds_performed += 1;
                    kbest.push(Best {
                        distance: exact,
                        id: record.id(),
                    });
                    if kbest.len() > k {
                        kbest.pop();
                    }
                    if trace {
                        traces.push(CandidateTrace {
                            object_id: record.id(),
                            index_bound,
                            projection_bound,
                            exact,
                        });
                    }
                }
            }
        }
        if !popped_any {
            break;
        }
    }

    let neighbors: Vec<(u64, f64)> = kbest
        .into_sorted_vec()
        .into_iter()
        .map(|b| (b.id, b.distance))
        .collect();
    debug_assert_eq!(neighbors.len(), k);

    stats.projection_time = projection_time;
    stats.exact_time = exact_time;
    stats.traversal_time = start.elapsed().saturating_sub(projection_time + exact_time);
    Ok((QueryResult { neighbors }, stats, traces))
}
