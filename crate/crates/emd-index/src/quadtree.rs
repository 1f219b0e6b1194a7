//! Quad-tree over dominance space.
//!
//! Nodes live in a flat arena (`Vec<Node>`, root at 0, children referenced
//! by index) so the finished tree serializes trivially and traversal needs
//! no pointer chasing. Each node carries a tight [`BoundingRegion`] over
//! its entries — the box plus the aggregated error envelopes consumed by
//! `emd_br` — so a best-first search can bound a whole subtree from the
//! node alone. Splits are 4-way at the box midpoint in `(u, v)`; a node
//! stops splitting at `node_capacity` entries, at [`MAX_DEPTH`], or when a
//! split cannot separate its entries (degenerate or float-adjacent
//! coordinates).

use crate::dominance::{to_dominance_point, BoundingRegion, DominancePoint};
use crate::error::{Error, Result};
use crate::normal::NormalSummary;

/// Depth at which splitting always stops, guarding pathological clusters.
pub const MAX_DEPTH: u32 = 32;

/// Default leaf capacity.
pub const DEFAULT_NODE_CAPACITY: usize = 100;

/// Leaf payload or child links.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    /// Indices of child nodes in the arena (1..=4; empty quadrants are
    /// not materialized).
    Internal(Vec<usize>),
    /// Positions into the summary table this tree was built over.
    Leaf(Vec<u32>),
}

/// One arena node.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    region: BoundingRegion,
    depth: u32,
    kind: NodeKind,
}

impl Node {
    pub fn new(region: BoundingRegion, depth: u32, kind: NodeKind) -> Self {
        Self {
            region,
            depth,
            kind,
        }
    }

    pub fn region(&self) -> &BoundingRegion {
        &self.region
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn kind(&self) -> &NodeKind {
        &self.kind
    }
}

/// An immutable quad-tree over one projection's summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadTree {
    nodes: Vec<Node>,
    node_capacity: usize,
}

/// Builds the tree for `summaries` over the frame range `[t_min, t_max]`.
/// Leaf entries are positions into `summaries`.
pub fn build_quadtree(
    summaries: &[NormalSummary],
    t_min: f64,
    t_max: f64,
    node_capacity: usize,
) -> Result<QuadTree> {
    if summaries.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot build a quad-tree over an empty summary table".into(),
        ));
    }
    if node_capacity == 0 {
        return Err(Error::InvalidParameter(
            "node capacity must be positive".into(),
        ));
    }
    let points: Vec<DominancePoint> = summaries
        .iter()
        .map(|s| to_dominance_point(s, t_min, t_max))
        .collect();
    let mut tree = QuadTree {
        nodes: Vec::new(),
        node_capacity,
    };
    let all: Vec<u32> = (0..summaries.len() as u32).collect();
    tree.build_node(summaries, &points, t_min, t_max, all, 0)?;
    Ok(tree)
}

impl QuadTree {
    fn build_node(
        &mut self,
        summaries: &[NormalSummary],
        points: &[DominancePoint],
        t_min: f64,
        t_max: f64,
        positions: Vec<u32>,
        depth: u32,
    ) -> Result<usize> {
        let region = BoundingRegion::from_members(
            positions.iter().map(|&i| &summaries[i as usize]),
            t_min,
            t_max,
        )?;
        let id = self.nodes.len();
        self.nodes.push(Node {
            region: region.clone(),
            depth,
            kind: NodeKind::Leaf(Vec::new()),
        });

        let splittable = positions.len() > self.node_capacity
            && depth < MAX_DEPTH
            && (region.u_hi() > region.u_lo() || region.v_hi() > region.v_lo());
        if !splittable {
            self.nodes[id].kind = NodeKind::Leaf(positions);
            return Ok(id);
        }

        let mid_u = 0.5 * (region.u_lo() + region.u_hi());
        let mid_v = 0.5 * (region.v_lo() + region.v_hi());
        let mut buckets: [Vec<u32>; 4] = Default::default();
        for &pos in &positions {
            let p = points[pos as usize];
            let quadrant = (p.u > mid_u) as usize + 2 * ((p.v > mid_v) as usize);
            buckets[quadrant].push(pos);
        }
        // Midpoint rounding can leave every entry on one side; keep the
        // node as an (oversized) leaf rather than recurse forever.
        if buckets.iter().any(|b| b.len() == positions.len()) {
            self.nodes[id].kind = NodeKind::Leaf(positions);
            return Ok(id);
        }

        let mut children = Vec::with_capacity(4);
        for bucket in buckets {
            if !bucket.is_empty() {
                children.push(self.build_node(summaries, points, t_min, t_max, bucket, depth + 1)?);
            }
        }
        self.nodes[id].kind = NodeKind::Internal(children);
        Ok(id)
    }

    /// Rebuilds a tree from deserialized parts; `audit` should be run on
    /// the result.
    pub fn from_parts(nodes: Vec<Node>, node_capacity: usize) -> Result<Self> {
        if nodes.is_empty() || node_capacity == 0 {
            return Err(Error::IndexFormat(
                "a quad-tree needs at least a root node and a positive capacity".into(),
            ));
        }
        Ok(Self {
            nodes,
            node_capacity,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn node_capacity(&self) -> usize {
        self.node_capacity
    }

    /// Total entries across all leaves.
    pub fn entry_count(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| match &n.kind {
                NodeKind::Leaf(entries) => entries.len(),
                NodeKind::Internal(_) => 0,
            })
            .sum()
    }

    /// Structural invariant audit: tree-shaped links, tight regions,
    /// parent/child containment, envelope nesting, capacity discipline,
    /// and exactly-once coverage of all `summaries` positions.
    pub fn audit(&self, summaries: &[NormalSummary], t_min: f64, t_max: f64) -> Result<()> {
        let fail = |msg: String| Err(Error::Verification(msg));
        let mut seen = vec![false; summaries.len()];
        let mut visited = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            if id >= self.nodes.len() {
                return fail(format!("child index {id} out of bounds"));
            }
            if visited[id] {
                return fail(format!("node {id} reachable twice"));
            }
            visited[id] = true;
            let node = &self.nodes[id];
            match &node.kind {
                NodeKind::Internal(children) => {
                    if children.is_empty() || children.len() > 4 {
                        return fail(format!(
                            "node {id} has {} children",
                            children.len()
                        ));
                    }
                    let mut merged: Option<BoundingRegion> = None;
                    for &c in children {
                        if c >= self.nodes.len() {
                            return fail(format!("child index {c} out of bounds"));
                        }
                        let child = &self.nodes[c];
                        if child.depth != node.depth + 1 {
                            return fail(format!(
                                "child {c} depth {} under parent depth {}",
                                child.depth, node.depth
                            ));
                        }
                        if !node.region.contains_region(&child.region) {
                            return fail(format!("child {c} box escapes parent {id}"));
                        }
                        let s = node.region.sub_intervals();
                        if child.region.sub_intervals() != s {
                            return fail(format!("child {c} grid differs from parent"));
                        }
                        for i in 0..s {
                            if child.region.err_min()[i] < node.region.err_min()[i]
                                || child.region.err_max()[i] > node.region.err_max()[i]
                            {
                                return fail(format!(
                                    "child {c} error envelope escapes parent {id}"
                                ));
                            }
                        }
                        if child.region.err_full_min() < node.region.err_full_min()
                            || child.region.err_full_max() > node.region.err_full_max()
                        {
                            return fail(format!(
                                "child {c} full-range envelope escapes parent {id}"
                            ));
                        }
                        merged = Some(match merged {
                            None => child.region.clone(),
                            Some(m) => m.merged(&child.region)?,
                        });
                        stack.push(c);
                    }
                    if merged.as_ref() != Some(&node.region) {
                        return fail(format!(
                            "node {id} region is not the exact union of its children"
                        ));
                    }
                }
                NodeKind::Leaf(entries) => {
                    if entries.is_empty() {
                        return fail(format!("leaf {id} is empty"));
                    }
                    for &pos in entries {
                        let pos = pos as usize;
                        if pos >= summaries.len() {
                            return fail(format!("leaf {id} references position {pos}"));
                        }
                        if seen[pos] {
                            return fail(format!("position {pos} appears in two leaves"));
                        }
                        seen[pos] = true;
                        if !node
                            .region
                            .contains(to_dominance_point(&summaries[pos], t_min, t_max))
                        {
                            return fail(format!("leaf {id} does not contain entry {pos}"));
                        }
                    }
                    let exact = BoundingRegion::from_members(
                        entries.iter().map(|&i| &summaries[i as usize]),
                        t_min,
                        t_max,
                    )?;
                    if exact != node.region {
                        return fail(format!("leaf {id} region is not tight"));
                    }
                    if entries.len() > self.node_capacity && node.depth < MAX_DEPTH {
                        // Oversized leaves are only legal when a midpoint
                        // split cannot separate the entries.
                        let mid_u = 0.5 * (node.region.u_lo() + node.region.u_hi());
                        let mid_v = 0.5 * (node.region.v_lo() + node.region.v_hi());
                        let mut counts = [0usize; 4];
                        for &pos in entries {
                            let p = to_dominance_point(&summaries[pos as usize], t_min, t_max);
                            counts[(p.u > mid_u) as usize + 2 * ((p.v > mid_v) as usize)] += 1;
                        }
                        if !counts.contains(&entries.len()) {
                            return fail(format!(
                                "leaf {id} holds {} entries over capacity {}",
                                entries.len(),
                                self.node_capacity
                            ));
                        }
                    }
                }
            }
        }
        if let Some(unreached) = visited.iter().position(|&v| !v) {
            return fail(format!("node {unreached} unreachable from the root"));
        }
        if let Some(missing) = seen.iter().position(|&v| !v) {
            return fail(format!("position {missing} is in no leaf"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::DiscreteDistribution;
    use crate::normal::{fit_normal, precompute_errors, SubIntervalGrid};
    use crate::projection::{project, ProjectionFrame, ProjectionVector};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn summaries(n: usize, seed: u64, grid: &SubIntervalGrid) -> Vec<NormalSummary> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fr = ProjectionFrame::new(
            ProjectionVector::new(vec![1.0], 0.0).unwrap(),
            grid.t_min(),
            grid.t_max(),
        )
        .unwrap();
        (0..n)
            .map(|id| {
                let count = rng.gen_range(1..6);
                let bins: Vec<f64> = (0..count)
                    .map(|_| rng.gen_range(grid.t_min() * 0.9..grid.t_max() * 0.9))
                    .collect();
                let w: Vec<f64> = (0..count).map(|_| rng.gen_range(0.1..1.0)).collect();
                let d =
                    DiscreteDistribution::new_renormalized(id as u64, 1, bins, w).unwrap();
                let p = project(&d, &fr).unwrap();
                precompute_errors(&p, fit_normal(&p), grid, id as u64).unwrap()
            })
            .collect()
    }

    #[test]
    fn small_input_stays_one_leaf() {
        let grid = SubIntervalGrid::even(-3.0, 3.0, 2).unwrap();
        let s = summaries(10, 60, &grid);
        let tree = build_quadtree(&s, -3.0, 3.0, 100).unwrap();
        assert_eq!(tree.nodes().len(), 1);
        assert!(matches!(tree.root().kind(), NodeKind::Leaf(e) if e.len() == 10));
        tree.audit(&s, -3.0, 3.0).unwrap();
    }

    #[test]
    fn identical_entries_stay_one_leaf() {
        let grid = SubIntervalGrid::even(-3.0, 3.0, 2).unwrap();
        let one = summaries(1, 61, &grid).pop().unwrap();
        let many: Vec<NormalSummary> = (0..500)
            .map(|id| {
                NormalSummary::from_parts(
                    id,
                    one.mu(),
                    one.sigma(),
                    one.err_full(),
                    one.err_min().to_vec(),
                    one.err_max().to_vec(),
                )
                .unwrap()
            })
            .collect();
        let tree = build_quadtree(&many, -3.0, 3.0, 100).unwrap();
        assert_eq!(tree.nodes().len(), 1, "degenerate box must not split");
        tree.audit(&many, -3.0, 3.0).unwrap();
    }

    #[test]
    fn large_tree_passes_structural_audit() {
        let grid = SubIntervalGrid::even(-4.0, 4.0, 3).unwrap();
        let s = summaries(5000, 62, &grid);
        let tree = build_quadtree(&s, -4.0, 4.0, 100).unwrap();
        assert!(tree.nodes().len() > 1);
        assert_eq!(tree.entry_count(), 5000);
        tree.audit(&s, -4.0, 4.0).unwrap();
        // Leaf discipline beyond what audit tolerates: all leaves within
        // capacity on this well-spread input.
        for node in tree.nodes() {
            if let NodeKind::Leaf(entries) = node.kind() {
                assert!(entries.len() <= 100);
            }
        }
    }

    #[test]
    fn rebuild_is_deterministic() {
        let grid = SubIntervalGrid::even(-4.0, 4.0, 3).unwrap();
        let s = summaries(800, 63, &grid);
        let a = build_quadtree(&s, -4.0, 4.0, 50).unwrap();
        let b = build_quadtree(&s, -4.0, 4.0, 50).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn capacity_changes_shape_but_not_content() {
        let grid = SubIntervalGrid::even(-4.0, 4.0, 2).unwrap();
        let s = summaries(600, 64, &grid);
        for cap in [50, 100, 200] {
            let tree = build_quadtree(&s, -4.0, 4.0, cap).unwrap();
            assert_eq!(tree.entry_count(), 600);
            tree.audit(&s, -4.0, 4.0).unwrap();
        }
    }

    #[test]
    fn rejects_empty_and_zero_capacity() {
        let grid = SubIntervalGrid::even(-1.0, 1.0, 1).unwrap();
        let s = summaries(3, 65, &grid);
        assert!(build_quadtree(&[], -1.0, 1.0, 10).is_err());
        assert!(build_quadtree(&s, -1.0, 1.0, 0).is_err());
    }

    #[test]
    fn audit_catches_corruption() {
        let grid = SubIntervalGrid::even(-3.0, 3.0, 2).unwrap();
        let s = summaries(300, 66, &grid);
        let tree = build_quadtree(&s, -3.0, 3.0, 40).unwrap();
        // Drop one leaf entry: coverage must fail.
        let mut nodes = tree.nodes().to_vec();
        for node in &mut nodes {
            if let NodeKind::Leaf(entries) = &mut node.kind {
                entries.pop();
                break;
            }
        }
        let broken = QuadTree::from_parts(nodes, 40).unwrap();
        assert!(broken.audit(&s, -3.0, 3.0).is_err());
    }
}
