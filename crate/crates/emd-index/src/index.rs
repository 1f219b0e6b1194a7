//! The persistent index: per-projection normal summaries plus quad-trees,
//! with a little-endian binary file format.
//!
//! File layout (version 1, all integers and floats little-endian):
//!
//! ```text
//! magic "NLBI" | u32 version
//! u64 record count N | u64 dimensionality d | u64 projection count P | u64 node capacity
//! P x projection header:
//!     u64 d | f64*d vector components | f64 center | f64 t_min | f64 t_max
//!     u64 s | f64*(s+1) grid boundaries
//! u64 summary-table byte length
//! summary table, projection-major; per record: mu, sigma, err_full,
//!     err_min[0..s], err_max[0..s]           (N * P * (3 + 2s) f64 values)
//! P x tree: u64 node count, then per node
//!     u32 depth | u8 tag | u64 len | len child ids (u64, tag 0)
//!                                  | len entry positions (u32, tag 1)
//! N x record: u64 id | u64 bin count n | f64*(n*d) bins | f64*n weights
//! ```
//!
//! Trees store structure only; bounding regions are pure min/max
//! aggregates of the summaries, so they are rebuilt bit-identically on
//! load. Parsing rejects trailing bytes, making the encoding canonical:
//! the same index always serializes to the same bytes.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distribution::DiscreteDistribution;
use crate::dominance::{emd_br, BoundingRegion};
use crate::emd::exact_emd;
use crate::error::{Error, Result};
use crate::normal::{
    emd_lb, fit_normal, precompute_errors, NormalSummary, SubIntervalGrid,
};
use crate::oracle::oracle_emd_1d;
use crate::par;
use crate::projection::{
    combine_projection_bounds, project, projection_emd, select_projections, ProjectionFrame,
    ProjectionVector,
};
use crate::quadtree::{build_quadtree, Node, NodeKind, QuadTree, DEFAULT_NODE_CAPACITY};

const MAGIC: &[u8; 4] = b"NLBI";
const FORMAT_VERSION: u32 = 1;

/// Relative slack used by the sampled soundness checks in [`EmdIndex::verify`].
const VERIFY_SLACK: f64 = 1e-6;

/// Build-time knobs. `None` fields are resolved from the dataset.
#[derive(Debug, Clone, Default)]
pub struct BuildConfig {
    /// Number of projections `d'` (default: 2 for data with `d >= 2`, else 1).
    pub projections: Option<usize>,
    /// Error-table sub-intervals `s` (default: `round(ln n)` for the largest
    /// record size `n`, at least 1).
    pub sub_intervals: Option<usize>,
    /// Quad-tree leaf capacity (default 100).
    pub node_capacity: Option<usize>,
}

impl BuildConfig {
    /// Resolves defaults against a dataset and validates the result.
    pub fn resolve(&self, dataset: &[DiscreteDistribution]) -> Result<ResolvedConfig> {
        let dim = dataset
            .first()
            .map(|d| d.dim())
            .ok_or_else(|| Error::InvalidParameter("cannot index an empty dataset".into()))?;
        let projections = self
            .projections
            .unwrap_or(if dim >= 2 { 2 } else { 1 });
        let max_bins = dataset.iter().map(|d| d.len()).max().unwrap_or(1);
        let sub_intervals = self
            .sub_intervals
            .unwrap_or_else(|| ((max_bins as f64).ln().round() as usize).max(1));
        let node_capacity = self.node_capacity.unwrap_or(DEFAULT_NODE_CAPACITY);
        if projections == 0 || sub_intervals == 0 || node_capacity == 0 {
            return Err(Error::InvalidParameter(
                "projections, sub-intervals and node capacity must all be positive".into(),
            ));
        }
        if projections > dim {
            return Err(Error::InvalidParameter(format!(
                "{projections} projections requested but the data has only {dim} dimensions"
            )));
        }
        Ok(ResolvedConfig {
            projections,
            sub_intervals,
            node_capacity,
        })
    }
}

/// A fully resolved build configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResolvedConfig {
    pub projections: usize,
    pub sub_intervals: usize,
    pub node_capacity: usize,
}

/// Everything the index stores for one projection.
#[derive(Debug, Clone)]
pub struct ProjectionIndex {
    frame: ProjectionFrame,
    grid: SubIntervalGrid,
    summaries: Vec<NormalSummary>,
    tree: QuadTree,
}

impl ProjectionIndex {
    pub fn frame(&self) -> &ProjectionFrame {
        &self.frame
    }

    pub fn grid(&self) -> &SubIntervalGrid {
        &self.grid
    }

    /// Summaries in dataset order (position `i` describes record `i`).
    pub fn summaries(&self) -> &[NormalSummary] {
        &self.summaries
    }

    pub fn tree(&self) -> &QuadTree {
        &self.tree
    }
}

/// The complete index: the dataset it was built from plus one
/// [`ProjectionIndex`] per projection.
#[derive(Debug, Clone)]
pub struct EmdIndex {
    dataset: Vec<DiscreteDistribution>,
    projections: Vec<ProjectionIndex>,
    node_capacity: usize,
}

impl EmdIndex {
    /// Builds the index over `dataset`.
    pub fn build(dataset: Vec<DiscreteDistribution>, config: &BuildConfig) -> Result<Self> {
        let resolved = config.resolve(&dataset)?;
        let dim = dataset[0].dim();
        for d in &dataset {
            if d.dim() != dim {
                return Err(Error::DimensionMismatch {
                    left: dim,
                    right: d.dim(),
                });
            }
        }
        let mut ids: Vec<u64> = dataset.iter().map(|d| d.id()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateId(w[0]));
        }

        let frames = select_projections(&dataset, resolved.projections)?;
        let projections = frames
            .into_iter()
            .map(|frame| {
                let grid =
                    SubIntervalGrid::even(frame.t_min(), frame.t_max(), resolved.sub_intervals)?;
                let summaries: Vec<NormalSummary> = par::map_collect(&dataset, |d| {
                    let p = project(d, &frame)?;
                    let n = fit_normal(&p);
                    precompute_errors(&p, n, &grid, d.id())
                })
                .into_iter()
                .collect::<Result<_>>()?;
                let tree = build_quadtree(
                    &summaries,
                    frame.t_min(),
                    frame.t_max(),
                    resolved.node_capacity,
                )?;
                Ok(ProjectionIndex {
                    frame,
                    grid,
                    summaries,
                    tree,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(Self {
            dataset,
            projections,
            node_capacity: resolved.node_capacity,
        })
    }

    pub fn dataset(&self) -> &[DiscreteDistribution] {
        &self.dataset
    }

    /// Number of indexed records.
    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }

    /// Dimensionality of the indexed data.
    pub fn dim(&self) -> usize {
        self.dataset[0].dim()
    }

    pub fn projections(&self) -> &[ProjectionIndex] {
        &self.projections
    }

    pub fn node_capacity(&self) -> usize {
        self.node_capacity
    }

    /// Number of stored reals in the summary table: per record and
    /// projection, mu, sigma, err_full and the two `s`-entry error tables.
    pub fn summary_table_reals(&self) -> usize {
        self.projections
            .iter()
            .map(|p| self.dataset.len() * (3 + 2 * p.grid.count()))
            .sum()
    }

    /// Byte length of the serialized summary table.
    pub fn summary_table_bytes(&self) -> usize {
        self.summary_table_reals() * 8
    }

    /// Serializes the index to its canonical byte encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        push_u32(&mut out, FORMAT_VERSION);
        push_u64(&mut out, self.dataset.len() as u64);
        push_u64(&mut out, self.dim() as u64);
        push_u64(&mut out, self.projections.len() as u64);
        push_u64(&mut out, self.node_capacity as u64);

        for p in &self.projections {
            let vector = p.frame.vector();
            push_u64(&mut out, vector.dim() as u64);
            for &c in vector.components() {
                push_f64(&mut out, c);
            }
            push_f64(&mut out, vector.center());
            push_f64(&mut out, p.frame.t_min());
            push_f64(&mut out, p.frame.t_max());
            push_u64(&mut out, p.grid.count() as u64);
            for &b in p.grid.boundaries() {
                push_f64(&mut out, b);
            }
        }

        push_u64(&mut out, self.summary_table_bytes() as u64);
        for p in &self.projections {
            for s in &p.summaries {
                push_f64(&mut out, s.mu());
                push_f64(&mut out, s.sigma());
                push_f64(&mut out, s.err_full());
                for &e in s.err_min() {
                    push_f64(&mut out, e);
                }
                for &e in s.err_max() {
                    push_f64(&mut out, e);
                }
            }
        }

        for p in &self.projections {
            push_u64(&mut out, p.tree.nodes().len() as u64);
            for node in p.tree.nodes() {
                push_u32(&mut out, node.depth());
                match node.kind() {
                    NodeKind::Internal(children) => {
                        out.push(0);
                        push_u64(&mut out, children.len() as u64);
                        for &c in children {
                            push_u64(&mut out, c as u64);
                        }
                    }
                    NodeKind::Leaf(entries) => {
                        out.push(1);
                        push_u64(&mut out, entries.len() as u64);
                        for &e in entries {
                            out.extend_from_slice(&e.to_le_bytes());
                        }
                    }
                }
            }
        }

        for d in &self.dataset {
            push_u64(&mut out, d.id());
            push_u64(&mut out, d.len() as u64);
            for i in 0..d.len() {
                for &x in d.bin(i) {
                    push_f64(&mut out, x);
                }
            }
            for &w in d.weights() {
                push_f64(&mut out, w);
            }
        }

        out
    }

    /// Parses the canonical encoding produced by [`EmdIndex::to_bytes`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Ok(parse_bytes(bytes)?.0)
    }

    /// Writes the index to `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Reads an index from `path`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    /// Full invariant audit of the in-memory index: structural checks on
    /// every tree, summary recomputation on a sample of records, and
    /// sampled soundness checks of every bound against its oracle.
    pub fn verify(&self) -> Result<VerifyReport> {
        let n = self.dataset.len();
        let mut checks = Vec::new();
        let fail = |msg: String| Err(Error::Verification(msg));

        for (pi, p) in self.projections.iter().enumerate() {
            if p.summaries.len() != n {
                return fail(format!(
                    "projection {pi} has {} summaries for {n} records",
                    p.summaries.len()
                ));
            }
            if p.grid.t_min() != p.frame.t_min() || p.grid.t_max() != p.frame.t_max() {
                return fail(format!("projection {pi} grid range differs from its frame"));
            }
            for (i, s) in p.summaries.iter().enumerate() {
                if s.object_id() != self.dataset[i].id() {
                    return fail(format!(
                        "projection {pi} summary {i} names object {} but the record is {}",
                        s.object_id(),
                        self.dataset[i].id()
                    ));
                }
            }
            if p.tree.node_capacity() != self.node_capacity {
                return fail(format!(
                    "projection {pi} tree capacity {} differs from the index capacity {}",
                    p.tree.node_capacity(),
                    self.node_capacity
                ));
            }
            p.tree
                .audit(&p.summaries, p.frame.t_min(), p.frame.t_max())?;
        }
        checks.push(format!(
            "structural audit of {} trees over {n} records",
            self.projections.len()
        ));

        // Recompute a sample of summaries from the raw records.
        let stride = (n / 64).max(1);
        let mut recomputed = 0usize;
        for p in &self.projections {
            for i in (0..n).step_by(stride) {
                let proj = project(&self.dataset[i], &p.frame)?;
                let fresh = precompute_errors(&proj, fit_normal(&proj), &p.grid, self.dataset[i].id())?;
                let stored = &p.summaries[i];
                let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()));
                let mut ok = close(fresh.mu(), stored.mu())
                    && close(fresh.sigma(), stored.sigma())
                    && close(fresh.err_full(), stored.err_full());
                ok = ok
                    && fresh
                        .err_min()
                        .iter()
                        .zip(stored.err_min())
                        .all(|(a, b)| close(*a, *b))
                    && fresh
                        .err_max()
                        .iter()
                        .zip(stored.err_max())
                        .all(|(a, b)| close(*a, *b));
                if !ok {
                    return fail(format!(
                        "stored summary for record {} does not match recomputation",
                        self.dataset[i].id()
                    ));
                }
                recomputed += 1;
            }
        }
        checks.push(format!("{recomputed} summaries recomputed from raw records"));

        // Sampled bound soundness, seeded so verification is reproducible.
        let mut rng = ChaCha8Rng::seed_from_u64(0x4e4c4249);
        let pair_checks = 200.min(n * n);
        let exact_checks = 24.min(n * n);
        let slack = |x: f64| VERIFY_SLACK * (1.0 + x.abs());

        for c in 0..pair_checks {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            for p in &self.projections {
                let pa = project(&self.dataset[i], &p.frame)?;
                let pb = project(&self.dataset[j], &p.frame)?;
                let proj_d = projection_emd(&pa, &pb)?;
                let lb = emd_lb(&p.summaries[i], &p.summaries[j], &p.grid)?;
                if lb > proj_d + slack(proj_d) {
                    return fail(format!(
                        "emd_lb {lb} exceeds the projected distance {proj_d} for records {} and {}",
                        self.dataset[i].id(),
                        self.dataset[j].id()
                    ));
                }
                let reference = oracle_emd_1d(pa.points(), pb.points());
                if (proj_d - reference).abs() > 1e-9 * (1.0 + reference.abs()) {
                    return fail(format!(
                        "projection_emd {proj_d} disagrees with its oracle {reference}"
                    ));
                }
            }
            if c < exact_checks {
                let exact = exact_emd(&self.dataset[i], &self.dataset[j])?;
                let mut per_proj = Vec::with_capacity(self.projections.len());
                for p in &self.projections {
                    let pa = project(&self.dataset[i], &p.frame)?;
                    let pb = project(&self.dataset[j], &p.frame)?;
                    per_proj.push(projection_emd(&pa, &pb)?);
                }
                let combined = combine_projection_bounds(&per_proj)?;
                if combined > exact + slack(exact) {
                    return fail(format!(
                        "combined projection bound {combined} exceeds the exact distance {exact}"
                    ));
                }
            }
        }
        checks.push(format!(
            "{pair_checks} sampled pairs: emd_lb <= projected <= exact chain holds"
        ));

        // Node bounds against their tightest member.
        let mut br_checks = 0usize;
        for p in &self.projections {
            for _ in 0..24 {
                let node = &p.tree.nodes()[rng.gen_range(0..p.tree.nodes().len())];
                let q = &p.summaries[rng.gen_range(0..n)];
                let members: Vec<u32> = match node.kind() {
                    NodeKind::Leaf(entries) => entries.clone(),
                    NodeKind::Internal(_) => continue,
                };
                let node_bound = emd_br(node.region(), q, &p.grid)?;
                let mut tightest = f64::INFINITY;
                for &m in &members {
                    tightest = tightest.min(emd_lb(&p.summaries[m as usize], q, &p.grid)?);
                }
                if node_bound > tightest + slack(tightest) {
                    return fail(format!(
                        "node bound {node_bound} exceeds its tightest member bound {tightest}"
                    ));
                }
                br_checks += 1;
            }
        }
        checks.push(format!(
            "{br_checks} sampled leaves: node bound never beats its tightest member"
        ));

        Ok(VerifyReport {
            records: n,
            dim: self.dim(),
            projections: self.projections.len(),
            sub_intervals: self.projections.iter().map(|p| p.grid.count()).collect(),
            node_capacity: self.node_capacity,
            summary_table_bytes: self.summary_table_bytes() as u64,
            claimed_summary_table_bytes: self.summary_table_bytes() as u64,
            checks,
        })
    }

    /// Loads `path` and audits it, including the byte-exact check that the
    /// stored summary table is exactly `N * P * (3 + 2s)` reals.
    pub fn verify_file(path: impl AsRef<Path>) -> Result<VerifyReport> {
        let bytes = std::fs::read(path)?;
        let (index, table) = parse_bytes(&bytes)?;

        let expected = index.summary_table_bytes() as u64;
        if table.claimed_bytes != expected {
            return Err(Error::Verification(format!(
                "stored summary table claims {} bytes but N x P x (3 + 2s) reals need {expected}",
                table.claimed_bytes
            )));
        }
        let mut fresh = Vec::with_capacity(expected as usize);
        for p in &index.projections {
            for s in &p.summaries {
                push_f64(&mut fresh, s.mu());
                push_f64(&mut fresh, s.sigma());
                push_f64(&mut fresh, s.err_full());
                for &e in s.err_min() {
                    push_f64(&mut fresh, e);
                }
                for &e in s.err_max() {
                    push_f64(&mut fresh, e);
                }
            }
        }
        if fresh != bytes[table.offset..table.offset + table.claimed_bytes as usize] {
            return Err(Error::Verification(
                "summary-table bytes do not round-trip the parsed summaries".into(),
            ));
        }

        let mut report = index.verify()?;
        report.claimed_summary_table_bytes = table.claimed_bytes;
        report.checks.insert(
            0,
            format!(
                "summary table is byte-exact: {} bytes = N x P x (3 + 2s) reals",
                table.claimed_bytes
            ),
        );
        Ok(report)
    }
}

/// What [`EmdIndex::verify`] measured; all checks passed if it was returned.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub records: usize,
    pub dim: usize,
    pub projections: usize,
    /// Sub-interval count per projection.
    pub sub_intervals: Vec<usize>,
    pub node_capacity: usize,
    /// Byte length the summary table must have given N, P and s.
    pub summary_table_bytes: u64,
    /// Byte length the file actually stores (equal when verification passes).
    pub claimed_summary_table_bytes: u64,
    /// Human-readable description of each check that ran.
    pub checks: Vec<String>,
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct SummaryTableSpan {
    offset: usize,
    claimed_bytes: u64,
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::IndexFormat(format!(
                "truncated index file: needed {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// A u64 count that must fit in memory: bounded by the bytes that are
    /// actually left, so corrupt counts cannot trigger huge allocations.
    fn count(&mut self, per_item_bytes: usize) -> Result<usize> {
        let v = self.u64()?;
        let remaining = (self.buf.len() - self.pos) as u64;
        if v.checked_mul(per_item_bytes as u64).is_none_or(|need| need > remaining) {
            return Err(Error::IndexFormat(format!(
                "count {v} at offset {} exceeds the remaining file",
                self.pos - 8
            )));
        }
        Ok(v as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn parse_bytes(bytes: &[u8]) -> Result<(EmdIndex, SummaryTableSpan)> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(Error::IndexFormat("missing NLBI magic bytes".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::IndexFormat(format!(
            "unsupported format version {version}"
        )));
    }
    let n = r.count(1)?;
    // Every projection header stores `dim` vector components, so 8 bytes
    // per unit is a safe lower bound on what must still follow.
    let dim = r.count(8)?;
    let projections = r.count(1)?;
    let node_capacity = r.u64()? as usize;
    if n == 0 || dim == 0 || projections == 0 || node_capacity == 0 {
        return Err(Error::IndexFormat(
            "record count, dimensionality, projections and capacity must be positive".into(),
        ));
    }

    struct Header {
        frame: ProjectionFrame,
        grid: SubIntervalGrid,
    }
    let mut headers = Vec::with_capacity(projections);
    for _ in 0..projections {
        let vdim = r.count(8)?;
        if vdim != dim {
            return Err(Error::IndexFormat(format!(
                "projection vector has {vdim} components in a {dim}-dimensional index"
            )));
        }
        let components = r.f64_vec(vdim)?;
        let center = r.f64()?;
        let t_min = r.f64()?;
        let t_max = r.f64()?;
        let s = r.count(8)?;
        let boundaries = r.f64_vec(s + 1)?;
        let vector = ProjectionVector::new(components, center)?;
        let frame = ProjectionFrame::new(vector, t_min, t_max)?;
        let grid = SubIntervalGrid::from_boundaries(boundaries)?;
        if grid.count() != s || grid.t_min() != t_min || grid.t_max() != t_max {
            return Err(Error::IndexFormat(
                "grid boundaries disagree with the projection header".into(),
            ));
        }
        headers.push(Header { frame, grid });
    }

    let claimed_bytes = r.u64()?;
    let table_offset = r.pos;
    let expected: usize = headers
        .iter()
        .map(|h| n * (3 + 2 * h.grid.count()) * 8)
        .sum();
    if claimed_bytes != expected as u64 {
        return Err(Error::IndexFormat(format!(
            "summary table claims {claimed_bytes} bytes, headers require {expected}"
        )));
    }

    // (mu, sigma, err_full, err_min, err_max) straight off the wire.
    type RawSummary = (f64, f64, f64, Vec<f64>, Vec<f64>);
    let mut tables: Vec<Vec<RawSummary>> = Vec::with_capacity(projections);
    for h in &headers {
        let s = h.grid.count();
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let mu = r.f64()?;
            let sigma = r.f64()?;
            let err_full = r.f64()?;
            let err_min = r.f64_vec(s)?;
            let err_max = r.f64_vec(s)?;
            rows.push((mu, sigma, err_full, err_min, err_max));
        }
        tables.push(rows);
    }

    struct RawNode {
        depth: u32,
        kind: NodeKind,
    }
    let mut raw_trees = Vec::with_capacity(projections);
    for _ in 0..projections {
        let node_count = r.count(13)?;
        if node_count == 0 {
            return Err(Error::IndexFormat("a tree must have a root node".into()));
        }
        let mut raw = Vec::with_capacity(node_count);
        for id in 0..node_count {
            let depth = r.u32()?;
            let tag = r.u8()?;
            let kind = match tag {
                0 => {
                    let len = r.count(8)?;
                    let mut children = Vec::with_capacity(len);
                    for _ in 0..len {
                        let c = r.u64()? as usize;
                        if c <= id || c >= node_count {
                            return Err(Error::IndexFormat(format!(
                                "node {id} links to child {c} outside ({id}, {node_count})"
                            )));
                        }
                        children.push(c);
                    }
                    NodeKind::Internal(children)
                }
                1 => {
                    let len = r.count(4)?;
                    let raw_entries = r.take(len * 4)?;
                    let entries: Vec<u32> = raw_entries
                        .chunks_exact(4)
                        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    if entries.iter().any(|&e| e as usize >= n) {
                        return Err(Error::IndexFormat(format!(
                            "leaf {id} references an entry beyond the {n} records"
                        )));
                    }
                    NodeKind::Leaf(entries)
                }
                other => {
                    return Err(Error::IndexFormat(format!(
                        "unknown node tag {other} in node {id}"
                    )));
                }
            };
            raw.push(RawNode { depth, kind });
        }
        raw_trees.push(raw);
    }

    let mut dataset = Vec::with_capacity(n);
    for _ in 0..n {
        let id = r.u64()?;
        let bins_n = r.count(dim * 8 + 8)?;
        let bins = r.f64_vec(bins_n * dim)?;
        let weights = r.f64_vec(bins_n)?;
        dataset.push(DiscreteDistribution::new(id, dim, bins, weights)?);
    }

    if r.pos != bytes.len() {
        return Err(Error::IndexFormat(format!(
            "{} trailing bytes after the dataset section",
            bytes.len() - r.pos
        )));
    }

    let mut projections_out = Vec::with_capacity(projections);
    for ((header, rows), raw) in headers.into_iter().zip(tables).zip(raw_trees) {
        let summaries: Vec<NormalSummary> = rows
            .into_iter()
            .zip(&dataset)
            .map(|((mu, sigma, err_full, err_min, err_max), d)| {
                NormalSummary::from_parts(d.id(), mu, sigma, err_full, err_min, err_max)
            })
            .collect::<Result<_>>()?;

        // Regions are min/max aggregates, so recomputing them bottom-up
        // reproduces the builder's values exactly (children always follow
        // their parent in index order).
        let mut regions: Vec<Option<BoundingRegion>> = vec![None; raw.len()];
        for id in (0..raw.len()).rev() {
            let region = match &raw[id].kind {
                NodeKind::Leaf(entries) => {
                    if entries.is_empty() {
                        return Err(Error::IndexFormat(format!("leaf {id} is empty")));
                    }
                    BoundingRegion::from_members(
                        entries.iter().map(|&e| &summaries[e as usize]),
                        header.frame.t_min(),
                        header.frame.t_max(),
                    )?
                }
                NodeKind::Internal(children) => {
                    if children.is_empty() {
                        return Err(Error::IndexFormat(format!(
                            "internal node {id} has no children"
                        )));
                    }
                    let mut acc: Option<BoundingRegion> = None;
                    for &c in children {
                        let child = regions[c]
                            .as_ref()
                            .ok_or_else(|| {
                                Error::IndexFormat(format!("region for node {c} missing"))
                            })?
                            .clone();
                        acc = Some(match acc {
                            None => child,
                            Some(a) => a.merged(&child)?,
                        });
                    }
                    acc.unwrap()
                }
            };
            regions[id] = Some(region);
        }

        let nodes: Vec<Node> = raw
            .into_iter()
            .enumerate()
            .map(|(id, rn)| Node::new(regions[id].take().unwrap(), rn.depth, rn.kind))
            .collect();
        let tree = QuadTree::from_parts(nodes, node_capacity)?;
        tree.audit(&summaries, header.frame.t_min(), header.frame.t_max())?;

        projections_out.push(ProjectionIndex {
            frame: header.frame,
            grid: header.grid,
            summaries,
            tree,
        });
    }

    Ok((
        EmdIndex {
            dataset,
            projections: projections_out,
            node_capacity,
        },
        SummaryTableSpan {
            offset: table_offset,
            claimed_bytes,
        },
    ))
}
