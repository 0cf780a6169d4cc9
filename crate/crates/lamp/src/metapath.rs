//! Meta-path sub-graph materialisation, integration and analytics.
//!
//! A *meta-path* is a typed walk pattern such as `PAP` (paper–author–paper),
//! written as a sequence of relation steps, each either forward or reversed.
//! Materialising a meta-path over a HIN yields an undirected sub-graph on
//! the target nodes: `u` and `v` are connected iff at least one path
//! instance of the pattern links them.
//!
//! # Instance-counting convention
//!
//! Counting is done by sparse integer matrix products of the per-step
//! adjacency matrices, with one refinement: whenever the pattern returns to
//! the target type mid-way (as in `PAPAP`, which visits the paper type at
//! positions 1, 3 and 5), the composition is split into target-to-target
//! *segments* and each segment matrix has its diagonal zeroed before the
//! segments are multiplied. Equivalently, an instance may revisit non-target
//! nodes freely, but two *consecutive* visits to the target type must land
//! on different nodes — without this rule, `PAPAP` would connect every pair
//! already connected by `PAP` through degenerate back-and-forth walks and
//! longer meta-paths would never carry new information. The final diagonal
//! (`u = v`) is always dropped.
//!
//! For a palindromic pattern (equal to its own reversal, like `PAP`), every
//! undirected instance is enumerated once from each endpoint, so the pair
//! count equals the directed count. For a non-palindromic pattern the two
//! directions are genuinely different instances and the pair count is their
//! sum.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::hin::{Hin, Label, RelId, TypeId};

/// One step of a meta-path: a relation traversed forward or in reverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    pub rel: RelId,
    pub reverse: bool,
}

impl Step {
    fn flipped(self) -> Step {
        Step {
            rel: self.rel,
            reverse: !self.reverse,
        }
    }

    /// (from, to) node types of this step.
    fn endpoints(self, hin: &Hin) -> (TypeId, TypeId) {
        let r = hin.relation(self.rel);
        if self.reverse {
            (r.dst, r.src)
        } else {
            (r.src, r.dst)
        }
    }
}

/// A named meta-path over a specific HIN schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaPath {
    pub name: String,
    pub steps: Vec<Step>,
}

/// Errors of the meta-path engine.
#[derive(Debug, Error)]
pub enum MetaPathError {
    #[error("cannot parse meta-path `{spec}`: {reason}")]
    Parse { spec: String, reason: String },
    #[error("meta-path `{0}` has no steps")]
    Empty(String),
    #[error("meta-path `{mp}`, step {step}: expected a step starting at `{expected}`, found one starting at `{found}`")]
    TypeChain {
        mp: String,
        step: usize,
        expected: String,
        found: String,
    },
    #[error("meta-path `{mp}` must start and end at the target type `{target}`")]
    NotTargetAnchored { mp: String, target: String },
    #[error("meta-path `{mp}`: instance count exceeds the 64-bit range")]
    CountOverflow { mp: String },
    #[error("meta-path `{mp}`: intermediate product has {nnz} nonzeros, over the density budget of {budget}")]
    DensityBudget {
        mp: String,
        nnz: usize,
        budget: usize,
    },
    #[error("homophily ratio of `{0}` is undefined: the sub-graph has no edges")]
    NoEdges(String),
    #[error("homophily ratio of `{mp}` is undefined: target node {node} has no label")]
    Unlabeled { mp: String, node: usize },
    #[error("jaccard of `{0}` and `{1}` is undefined: both edge sets are empty")]
    EmptyUnion(String, String),
    #[error("coverage of `{covered}` by `{covering}` is undefined: `{covered}` has no edges")]
    EmptyReference { covering: String, covered: String },
    #[error("sub-graphs span different target universes ({0} vs {1} nodes)")]
    UniverseMismatch(usize, usize),
    #[error("cannot integrate an empty list of sub-graphs")]
    NothingToIntegrate,
    #[error("at most 64 meta-paths can be integrated, got {0}")]
    TooManyMetaPaths(usize),
    #[error("combination min_size {min_size} is out of range 1..={k}")]
    MinSizeRange { min_size: usize, k: usize },
}

impl MetaPath {
    /// Parses one meta-path description against a HIN schema.
    ///
    /// Two forms are accepted:
    ///
    /// * explicit — `NAME = STEP ("," STEP)*` where a step is a relation name,
    ///   optionally prefixed with `~` for the reverse direction, e.g.
    ///   `PAPAP = PA, ~PA, PA, ~PA`;
    /// * shorthand — a sequence of node-type initials such as `PAP` or
    ///   `PPSP`, resolved against the schema (each adjacent initial pair must
    ///   match exactly one relation in exactly one direction). A leading `-`
    ///   reverses the direction of the first step, distinguishing e.g.
    ///   citing (`PPSP`) from cited-by (`-PPSP`) variants.
    ///
    /// The parsed path must type-check as a chain and must start and end at
    /// the target type.
    pub fn parse(spec: &str, hin: &Hin) -> Result<MetaPath, MetaPathError> {
        let mp = match spec.split_once('=') {
            Some((name, body)) => Self::parse_explicit(spec, name.trim(), body, hin)?,
            None => Self::parse_shorthand(spec.trim(), hin)?,
        };
        mp.check(hin)?;
        Ok(mp)
    }

    fn parse_explicit(
        spec: &str,
        name: &str,
        body: &str,
        hin: &Hin,
    ) -> Result<MetaPath, MetaPathError> {
        if name.is_empty() {
            return Err(MetaPathError::Parse {
                spec: spec.into(),
                reason: "missing name before `=`".into(),
            });
        }
        let mut steps = Vec::new();
        for raw in body.split(',') {
            let raw = raw.trim();
            if raw.is_empty() {
                return Err(MetaPathError::Parse {
                    spec: spec.into(),
                    reason: "empty step".into(),
                });
            }
            let (rel_name, reverse) = match raw.strip_prefix('~') {
                Some(rest) => (rest.trim(), true),
                None => (raw, false),
            };
            let rel = hin
                .relation_by_name(rel_name)
                .ok_or_else(|| MetaPathError::Parse {
                    spec: spec.into(),
                    reason: format!("unknown relation `{rel_name}`"),
                })?;
            steps.push(Step { rel, reverse });
        }
        Ok(MetaPath {
            name: name.to_string(),
            steps,
        })
    }

    fn parse_shorthand(spec: &str, hin: &Hin) -> Result<MetaPath, MetaPathError> {
        let err = |reason: String| MetaPathError::Parse {
            spec: spec.into(),
            reason,
        };
        let (flip_first, initials) = match spec.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, spec),
        };
        let chars: Vec<char> = initials.chars().collect();
        if chars.len() < 2 {
            return Err(err("expected at least two node-type initials".into()));
        }
        // Resolve every initial to the unique node type starting with it.
        let mut types = Vec::with_capacity(chars.len());
        for c in &chars {
            let matches: Vec<TypeId> = (0..hin.n_types())
                .map(TypeId)
                .filter(|t| {
                    hin.type_name(*t)
                        .chars()
                        .next()
                        .is_some_and(|first| first.eq_ignore_ascii_case(c))
                })
                .collect();
            match matches.as_slice() {
                [t] => types.push(*t),
                [] => return Err(err(format!("no node type starts with `{c}`"))),
                _ => return Err(err(format!("initial `{c}` is ambiguous; use the explicit `NAME=STEP,...` form"))),
            }
        }
        let mut steps = Vec::with_capacity(types.len() - 1);
        for (k, pair) in types.windows(2).enumerate() {
            let (from, to) = (pair[0], pair[1]);
            let forward: Vec<RelId> = (0..hin.n_relations())
                .map(RelId)
                .filter(|r| hin.relation(*r).src == from && hin.relation(*r).dst == to)
                .collect();
            let backward: Vec<RelId> = (0..hin.n_relations())
                .map(RelId)
                .filter(|r| {
                    let rel = hin.relation(*r);
                    rel.src == to && rel.dst == from && rel.src != rel.dst
                })
                .collect();
            let mut step = match (forward.as_slice(), backward.as_slice()) {
                ([r], []) => Step {
                    rel: *r,
                    reverse: false,
                },
                ([], [r]) => Step {
                    rel: *r,
                    reverse: true,
                },
                ([], []) => {
                    return Err(err(format!(
                        "no relation connects `{}` and `{}`",
                        hin.type_name(from),
                        hin.type_name(to)
                    )))
                }
                _ => {
                    return Err(err(format!(
                        "more than one relation connects `{}` and `{}`; use the explicit form",
                        hin.type_name(from),
                        hin.type_name(to)
                    )))
                }
            };
            if k == 0 && flip_first {
                step = step.flipped();
            }
            steps.push(step);
        }
        Ok(MetaPath {
            name: spec.to_string(),
            steps,
        })
    }

    /// Node-type sequence visited by the path (length = steps + 1), after
    /// verifying the chain and target anchoring.
    pub fn type_sequence(&self, hin: &Hin) -> Result<Vec<TypeId>, MetaPathError> {
        if self.steps.is_empty() {
            return Err(MetaPathError::Empty(self.name.clone()));
        }
        let mut seq = Vec::with_capacity(self.steps.len() + 1);
        let (first, _) = self.steps[0].endpoints(hin);
        seq.push(first);
        for (k, step) in self.steps.iter().enumerate() {
            let (from, to) = step.endpoints(hin);
            if from != *seq.last().expect("nonempty") {
                return Err(MetaPathError::TypeChain {
                    mp: self.name.clone(),
                    step: k,
                    expected: hin.type_name(*seq.last().expect("nonempty")).into(),
                    found: hin.type_name(from).into(),
                });
            }
            seq.push(to);
        }
        if seq[0] != hin.target_type() || *seq.last().expect("nonempty") != hin.target_type() {
            return Err(MetaPathError::NotTargetAnchored {
                mp: self.name.clone(),
                target: hin.type_name(hin.target_type()).into(),
            });
        }
        Ok(seq)
    }

    fn check(&self, hin: &Hin) -> Result<(), MetaPathError> {
        self.type_sequence(hin).map(|_| ())
    }

    /// Whether the step sequence equals its own direction-flipped reversal
    /// (`PAP`, `PAPAP`, ... but not `PPSP`).
    pub fn is_palindromic(&self) -> bool {
        let l = self.steps.len();
        (0..l).all(|k| self.steps[k] == self.steps[l - 1 - k].flipped())
    }

    /// Canonical `NAME=STEP,...` rendering against a schema.
    pub fn describe(&self, hin: &Hin) -> String {
        let steps: Vec<String> = self
            .steps
            .iter()
            .map(|s| {
                let name = &hin.relation(s.rel).name;
                if s.reverse {
                    format!("~{name}")
                } else {
                    name.clone()
                }
            })
            .collect();
        format!("{}={}", self.name, steps.join(","))
    }
}

/// Parses a list of `--metapaths` arguments.
///
/// An argument containing `=` is one explicit definition (its commas separate
/// steps); otherwise it is a comma-separated list of shorthand names.
/// Duplicate names are rejected.
pub fn parse_metapath_args(args: &[String], hin: &Hin) -> Result<Vec<MetaPath>, MetaPathError> {
    let mut out: Vec<MetaPath> = Vec::new();
    for arg in args {
        let specs: Vec<&str> = if arg.contains('=') {
            vec![arg.as_str()]
        } else {
            arg.split(',').map(str::trim).collect()
        };
        for spec in specs {
            let mp = MetaPath::parse(spec, hin)?;
            if out.iter().any(|m| m.name == mp.name) {
                return Err(MetaPathError::Parse {
                    spec: spec.into(),
                    reason: format!("duplicate meta-path name `{}`", mp.name),
                });
            }
            out.push(mp);
        }
    }
    Ok(out)
}

/// The undirected sub-graph induced on target nodes by one meta-path.
///
/// Node indices are *target-local* (`0..n`, i.e. dense target id minus the
/// target block offset). Edges are stored as `u < v` pairs in lexicographic
/// order; `counts`, when requested, is parallel to `edges`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaPathSubGraph {
    pub name: String,
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    pub counts: Option<Vec<u64>>,
}

impl MetaPathSubGraph {
    /// Undirected adjacency lists (each edge contributes both directions).
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }
}

/// Options for [`materialize`].
#[derive(Debug, Clone)]
pub struct MaterializeOptions {
    /// Record exact instance counts. When off, composition short-circuits to
    /// boolean reachability, which cannot overflow.
    pub count_instances: bool,
    /// Maximum number of nonzeros any intermediate product may hold.
    pub density_budget: usize,
}

impl Default for MaterializeOptions {
    fn default() -> Self {
        MaterializeOptions {
            count_instances: true,
            density_budget: 200_000_000,
        }
    }
}

// ---------------------------------------------------------------------------
// Sparse composition
// ---------------------------------------------------------------------------

/// Row-major sparse integer matrix; each row holds `(col, count)` pairs
/// sorted by column.
struct SparseMat {
    cols: usize,
    rows: Vec<Vec<(usize, u64)>>,
}

impl SparseMat {
    fn zero_diagonal(&mut self) {
        for (i, row) in self.rows.iter_mut().enumerate() {
            row.retain(|(j, _)| *j != i);
        }
    }

    /// Clamp every entry to 1 (boolean reachability).
    fn saturate(&mut self) {
        for row in &mut self.rows {
            for (_, c) in row {
                *c = 1;
            }
        }
    }

    fn mul(&self, rhs: &SparseMat, mp: &str, budget: usize) -> Result<SparseMat, MetaPathError> {
        let overflow = || MetaPathError::CountOverflow { mp: mp.into() };
        let mut scratch: Vec<u64> = vec![0; rhs.cols];
        let mut out_rows = Vec::with_capacity(self.rows.len());
        let mut nnz = 0usize;
        for row in &self.rows {
            let mut touched: Vec<usize> = Vec::new();
            for &(j, a) in row {
                for &(k, b) in &rhs.rows[j] {
                    let add = a.checked_mul(b).ok_or_else(overflow)?;
                    if scratch[k] == 0 && add > 0 {
                        touched.push(k);
                    }
                    scratch[k] = scratch[k].checked_add(add).ok_or_else(overflow)?;
                }
            }
            touched.sort_unstable();
            let out_row: Vec<(usize, u64)> = touched
                .iter()
                .map(|&k| {
                    let c = scratch[k];
                    scratch[k] = 0;
                    (k, c)
                })
                .collect();
            nnz += out_row.len();
            if nnz > budget {
                return Err(MetaPathError::DensityBudget {
                    mp: mp.into(),
                    nnz,
                    budget,
                });
            }
            out_rows.push(out_row);
        }
        Ok(SparseMat {
            cols: rhs.cols,
            rows: out_rows,
        })
    }
}

/// Adjacency matrix of one step in type-local indices.
fn step_matrix(hin: &Hin, step: Step) -> SparseMat {
    let (from, to) = step.endpoints(hin);
    let rel = hin.relation(step.rel);
    let mut rows = vec![Vec::new(); hin.type_count(from)];
    for e in hin.edges() {
        if e.rel != step.rel {
            continue;
        }
        // Stored edges follow the relation's declared orientation (reverses of
        // symmetric relations are stored flipped, which for same-type
        // relations makes the graph undirected, as intended).
        if hin.node_type(e.src) != rel.src || hin.node_type(e.dst) != rel.dst {
            continue;
        }
        let (r, c) = if step.reverse {
            (hin.local_index(e.dst), hin.local_index(e.src))
        } else {
            (hin.local_index(e.src), hin.local_index(e.dst))
        };
        rows[r].push((c, 1));
    }
    for row in &mut rows {
        row.sort_unstable_by_key(|(c, _)| *c);
        // Merge parallel entries (possible only in malformed inputs with
        // duplicate edges); counts add up.
        let mut merged: Vec<(usize, u64)> = Vec::with_capacity(row.len());
        for &(c, k) in row.iter() {
            match merged.last_mut() {
                Some((lc, lk)) if *lc == c => *lk += k,
                _ => merged.push((c, k)),
            }
        }
        *row = merged;
    }
    SparseMat {
        cols: hin.type_count(to),
        rows,
    }
}

/// Materialises the meta-path sub-graph of `mp` over `hin`.
pub fn materialize(
    hin: &Hin,
    mp: &MetaPath,
    opts: &MaterializeOptions,
) -> Result<MetaPathSubGraph, MetaPathError> {
    let seq = mp.type_sequence(hin)?;
    let target = hin.target_type();
    let n = hin.target_count();
    let budget = opts.density_budget;

    // Split the steps into target-to-target segments: a new segment starts
    // at every intermediate visit to the target type.
    let mut segments: Vec<Vec<Step>> = Vec::new();
    let mut current = Vec::new();
    for (k, step) in mp.steps.iter().enumerate() {
        current.push(*step);
        if seq[k + 1] == target {
            segments.push(std::mem::take(&mut current));
        }
    }
    debug_assert!(current.is_empty(), "sequence ends at the target type");

    // Compose each segment, zero its diagonal, then chain the segments.
    let mut total: Option<SparseMat> = None;
    for segment in &segments {
        let mut seg: Option<SparseMat> = None;
        for step in segment {
            let m = step_matrix(hin, *step);
            seg = Some(match seg {
                None => m,
                Some(acc) => acc.mul(&m, &mp.name, budget)?,
            });
        }
        let mut seg = seg.expect("segments are nonempty");
        seg.zero_diagonal();
        if !opts.count_instances {
            seg.saturate();
        }
        total = Some(match total {
            None => seg,
            Some(acc) => {
                let mut prod = acc.mul(&seg, &mp.name, budget)?;
                if !opts.count_instances {
                    prod.saturate();
                }
                prod
            }
        });
    }
    let mut total = total.expect("meta-paths have at least one step");
    total.zero_diagonal();

    // Collapse the directed count matrix to undirected pairs. For a
    // palindromic pattern the matrix is symmetric and each undirected
    // instance already appears once per direction; otherwise the directions
    // are distinct instances and add up.
    let palindromic = mp.is_palindromic();
    let mut upper: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for (u, row) in total.rows.iter().enumerate() {
        for &(v, c) in row {
            let key = (u.min(v), u.max(v));
            let slot = upper.entry(key).or_insert(0);
            *slot = slot
                .checked_add(c)
                .ok_or_else(|| MetaPathError::CountOverflow { mp: mp.name.clone() })?;
        }
    }
    let mut edges = Vec::with_capacity(upper.len());
    let mut counts = Vec::with_capacity(upper.len());
    for ((u, v), c) in upper {
        let c = if palindromic {
            debug_assert!(c % 2 == 0, "palindromic counts are direction-symmetric");
            c / 2
        } else {
            c
        };
        edges.push((u, v));
        counts.push(c);
    }
    Ok(MetaPathSubGraph {
        name: mp.name.clone(),
        n,
        edges,
        counts: if opts.count_instances {
            Some(counts)
        } else {
            None
        },
    })
}

// ---------------------------------------------------------------------------
// Integration
// ---------------------------------------------------------------------------

/// Union of several meta-path sub-graphs with per-edge binary encodings.
///
/// Edge `e = (u, v)` carries the encoding vector `e_uv ∈ {0,1}^m` whose
/// `p`-th component records whether meta-path `p` connects `u` and `v`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntegratedSubGraph {
    pub n: usize,
    pub metapath_names: Vec<String>,
    /// `u < v` pairs in lexicographic order.
    pub edges: Vec<(usize, usize)>,
    /// Bitmask per edge; bit `p` set iff meta-path `p` contains the edge.
    pub membership: Vec<u64>,
}

impl IntegratedSubGraph {
    pub fn n_metapaths(&self) -> usize {
        self.metapath_names.len()
    }

    pub fn has_path(&self, edge: usize, p: usize) -> bool {
        self.membership[edge] >> p & 1 == 1
    }

    /// The encoding `e_uv` of one edge as a dense 0/1 vector.
    pub fn encoding(&self, edge: usize) -> Vec<f64> {
        (0..self.n_metapaths())
            .map(|p| if self.has_path(edge, p) { 1.0 } else { 0.0 })
            .collect()
    }

    /// Row-major `|E| x m` matrix of all edge encodings.
    pub fn encoding_matrix(&self) -> Vec<f64> {
        let m = self.n_metapaths();
        let mut out = Vec::with_capacity(self.edges.len() * m);
        for e in 0..self.edges.len() {
            for p in 0..m {
                out.push(if self.has_path(e, p) { 1.0 } else { 0.0 });
            }
        }
        out
    }

    /// Restriction to a subset of edge positions (used by random edge drop);
    /// node universe and encodings are preserved.
    pub fn restrict(&self, keep: &[usize]) -> IntegratedSubGraph {
        IntegratedSubGraph {
            n: self.n,
            metapath_names: self.metapath_names.clone(),
            edges: keep.iter().map(|&e| self.edges[e]).collect(),
            membership: keep.iter().map(|&e| self.membership[e]).collect(),
        }
    }
}

/// Integrates meta-path sub-graphs over one target universe.
pub fn integrate(subgraphs: &[MetaPathSubGraph]) -> Result<IntegratedSubGraph, MetaPathError> {
    let first = subgraphs.first().ok_or(MetaPathError::NothingToIntegrate)?;
    if subgraphs.len() > 64 {
        return Err(MetaPathError::TooManyMetaPaths(subgraphs.len()));
    }
    for g in subgraphs {
        if g.n != first.n {
            return Err(MetaPathError::UniverseMismatch(first.n, g.n));
        }
    }
    let mut membership: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for (p, g) in subgraphs.iter().enumerate() {
        for &(u, v) in &g.edges {
            *membership.entry((u, v)).or_insert(0) |= 1 << p;
        }
    }
    let (edges, membership): (Vec<_>, Vec<_>) = membership.into_iter().unzip();
    Ok(IntegratedSubGraph {
        n: first.n,
        metapath_names: subgraphs.iter().map(|g| g.name.clone()).collect(),
        edges,
        membership,
    })
}

// ---------------------------------------------------------------------------
// Connectivity
// ---------------------------------------------------------------------------

/// Per-node connectivity table: `C[i][j]` = number of meta-path sub-graphs in
/// which `j` is a neighbour of `i`. Zero entries are omitted; `i` itself
/// never appears in its own map.
pub fn connectivity(subgraphs: &[MetaPathSubGraph]) -> Vec<BTreeMap<usize, u32>> {
    let n = subgraphs.first().map_or(0, |g| g.n);
    let mut table = vec![BTreeMap::new(); n];
    for g in subgraphs {
        for &(u, v) in &g.edges {
            *table[u].entry(v).or_insert(0) += 1;
            *table[v].entry(u).or_insert(0) += 1;
        }
    }
    table
}

// ---------------------------------------------------------------------------
// Analytics
// ---------------------------------------------------------------------------

fn labels_agree(a: &Label, b: &Label) -> bool {
    // Multi-label nodes agree when they share at least one class.
    a.classes().iter().any(|c| b.classes().contains(c))
}

/// Fraction of edges whose endpoints carry the same label (for multi-label
/// data: share at least one class).
pub fn homophily_ratio(g: &MetaPathSubGraph, hin: &Hin) -> Result<f64, MetaPathError> {
    if g.edges.is_empty() {
        return Err(MetaPathError::NoEdges(g.name.clone()));
    }
    let offset = hin.target_range().start;
    let label_of = |t: usize| {
        hin.label(offset + t).ok_or(MetaPathError::Unlabeled {
            mp: g.name.clone(),
            node: t,
        })
    };
    let mut same = 0usize;
    for &(u, v) in &g.edges {
        if labels_agree(label_of(u)?, label_of(v)?) {
            same += 1;
        }
    }
    Ok(same as f64 / g.edges.len() as f64)
}

/// Jaccard overlap of two edge sets; undefined when both are empty.
pub fn jaccard(a: &MetaPathSubGraph, b: &MetaPathSubGraph) -> Result<f64, MetaPathError> {
    if a.n != b.n {
        return Err(MetaPathError::UniverseMismatch(a.n, b.n));
    }
    let inter = intersection_size(a, b);
    let union = a.edges.len() + b.edges.len() - inter;
    if union == 0 {
        return Err(MetaPathError::EmptyUnion(a.name.clone(), b.name.clone()));
    }
    Ok(inter as f64 / union as f64)
}

/// Fraction of `b`'s edges also present in `a`: `|E_a ∩ E_b| / |E_b|`.
///
/// When `b` is empty the ratio is taken to be 1 if `a` is empty too (nothing
/// to cover, vacuously covered) and an error otherwise.
pub fn coverage(a: &MetaPathSubGraph, b: &MetaPathSubGraph) -> Result<f64, MetaPathError> {
    if a.n != b.n {
        return Err(MetaPathError::UniverseMismatch(a.n, b.n));
    }
    if b.edges.is_empty() {
        return if a.edges.is_empty() {
            Ok(1.0)
        } else {
            Err(MetaPathError::EmptyReference {
                covering: a.name.clone(),
                covered: b.name.clone(),
            })
        };
    }
    Ok(intersection_size(a, b) as f64 / b.edges.len() as f64)
}

fn intersection_size(a: &MetaPathSubGraph, b: &MetaPathSubGraph) -> usize {
    // Both edge lists are sorted; merge-count.
    let mut i = 0;
    let mut j = 0;
    let mut inter = 0;
    while i < a.edges.len() && j < b.edges.len() {
        match a.edges[i].cmp(&b.edges[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    inter
}

/// All index subsets of `0..k` with at least `min_size` members, ordered by
/// size and lexicographically within a size.
///
/// ```
/// let combos = lamp::metapath::enumerate_combinations(3, 1).unwrap();
/// assert_eq!(combos.len(), 7);
/// assert_eq!(combos[0], vec![0]);
/// assert_eq!(combos[6], vec![0, 1, 2]);
/// ```
pub fn enumerate_combinations(
    k: usize,
    min_size: usize,
) -> Result<Vec<Vec<usize>>, MetaPathError> {
    if min_size == 0 || min_size > k {
        return Err(MetaPathError::MinSizeRange { min_size, k });
    }
    let mut out = Vec::new();
    for size in min_size..=k {
        let mut combo: Vec<usize> = (0..size).collect();
        loop {
            out.push(combo.clone());
            // Advance to the next lexicographic combination of `size` out of `k`.
            let mut i = size;
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                if combo[i] != i + k - size {
                    combo[i] += 1;
                    for j in i + 1..size {
                        combo[j] = combo[j - 1] + 1;
                    }
                    break;
                }
                if i == 0 {
                    combo.clear();
                    break;
                }
            }
            if combo.is_empty() {
                break;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hin::Hin;

    fn toy() -> Hin {
        Hin::load(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/toy_acm.json")).unwrap()
    }

    fn mp(hin: &Hin, spec: &str) -> MetaPath {
        MetaPath::parse(spec, hin).unwrap()
    }

    fn mat(hin: &Hin, spec: &str) -> MetaPathSubGraph {
        materialize(hin, &mp(hin, spec), &MaterializeOptions::default()).unwrap()
    }

    #[test]
    fn shorthand_parsing_resolves_directions() {
        let hin = toy();
        let pap = mp(&hin, "PAP");
        assert_eq!(pap.name, "PAP");
        assert_eq!(pap.steps.len(), 2);
        assert!(!pap.steps[0].reverse);
        assert!(pap.steps[1].reverse);
        assert_eq!(pap.describe(&hin), "PAP=PA,~PA");
        assert!(pap.is_palindromic());
    }

    #[test]
    fn explicit_parsing_matches_shorthand() {
        let hin = toy();
        let a = mp(&hin, "PAPAP");
        let b = mp(&hin, "PAPAP=PA,~PA,PA,~PA");
        assert_eq!(a.steps, b.steps);
    }

    #[test]
    fn parse_rejects_unknown_relations_and_bad_chains() {
        let hin = toy();
        assert!(matches!(
            MetaPath::parse("X=QQ", &hin),
            Err(MetaPathError::Parse { .. })
        ));
        assert!(matches!(
            MetaPath::parse("X=PA,PA", &hin),
            Err(MetaPathError::TypeChain { step: 1, .. })
        ));
        // Ends at the author type, not the target.
        assert!(matches!(
            MetaPath::parse("X=PA", &hin),
            Err(MetaPathError::NotTargetAnchored { .. })
        ));
        assert!(matches!(
            MetaPath::parse("AA", &hin),
            Err(MetaPathError::Parse { .. })
        ));
    }

    #[test]
    fn pap_materialises_the_expected_sub_graph() {
        let hin = toy();
        let g = mat(&hin, "PAP");
        assert_eq!(g.n, 3);
        assert_eq!(g.edges, vec![(0, 1), (1, 2)]);
        assert_eq!(g.counts, Some(vec![1, 1]));
    }

    #[test]
    fn psp_materialises_the_expected_sub_graph() {
        let hin = toy();
        let g = mat(&hin, "PSP");
        assert_eq!(g.edges, vec![(0, 2)]);
        assert_eq!(g.counts, Some(vec![1]));
    }

    #[test]
    fn papap_excludes_degenerate_revisits() {
        // The only admissible PAPAP instance is p0-a0-p1-a1-p2; walks that
        // bounce back to the previous paper (p0-a0-p1-a0-p1, ...) are not
        // instances, so the sub-graph is exactly {p0-p2}.
        let hin = toy();
        let g = mat(&hin, "PAPAP");
        assert_eq!(g.edges, vec![(0, 2)]);
        assert_eq!(g.counts, Some(vec![1]));
    }

    #[test]
    fn boolean_short_circuit_drops_counts_but_keeps_edges() {
        let hin = toy();
        let opts = MaterializeOptions {
            count_instances: false,
            ..Default::default()
        };
        let g = materialize(&hin, &mp(&hin, "PAPAP"), &opts).unwrap();
        assert_eq!(g.edges, vec![(0, 2)]);
        assert_eq!(g.counts, None);
    }

    #[test]
    fn density_budget_is_enforced() {
        let hin = toy();
        let opts = MaterializeOptions {
            count_instances: true,
            density_budget: 1,
        };
        let err = materialize(&hin, &mp(&hin, "PAPAP"), &opts).unwrap_err();
        assert!(matches!(err, MetaPathError::DensityBudget { .. }));
    }

    #[test]
    fn checked_multiplication_detects_overflow() {
        let a = SparseMat {
            cols: 1,
            rows: vec![vec![(0, u64::MAX)]],
        };
        let b = SparseMat {
            cols: 1,
            rows: vec![vec![(0, 2)]],
        };
        assert!(matches!(
            a.mul(&b, "X", usize::MAX),
            Err(MetaPathError::CountOverflow { .. })
        ));
    }

    #[test]
    fn integration_produces_the_expected_encodings() {
        let hin = toy();
        let gs = vec![mat(&hin, "PAP"), mat(&hin, "PSP"), mat(&hin, "PAPAP")];
        let ig = integrate(&gs).unwrap();
        assert_eq!(ig.edges, vec![(0, 1), (0, 2), (1, 2)]);
        let encodings: Vec<Vec<f64>> = (0..3).map(|e| ig.encoding(e)).collect();
        assert_eq!(encodings[0], vec![1.0, 0.0, 0.0]); // p0-p1: PAP only
        assert_eq!(encodings[1], vec![0.0, 1.0, 1.0]); // p0-p2: PSP and PAPAP
        assert_eq!(encodings[2], vec![1.0, 0.0, 0.0]); // p1-p2: PAP only
    }

    #[test]
    fn integration_is_order_insensitive_up_to_component_permutation() {
        let hin = toy();
        let gs = vec![mat(&hin, "PAP"), mat(&hin, "PSP"), mat(&hin, "PAPAP")];
        let fwd = integrate(&gs).unwrap();
        let rev: Vec<MetaPathSubGraph> = gs.iter().rev().cloned().collect();
        let bwd = integrate(&rev).unwrap();
        assert_eq!(fwd.edges, bwd.edges);
        for e in 0..fwd.edges.len() {
            let f = fwd.encoding(e);
            let mut b = bwd.encoding(e);
            b.reverse();
            assert_eq!(f, b);
        }
    }

    #[test]
    fn integration_rejects_mismatched_universes_and_empty_input() {
        let hin = toy();
        let a = mat(&hin, "PAP");
        let mut b = mat(&hin, "PSP");
        b.n = 5;
        assert!(matches!(
            integrate(&[a.clone(), b]),
            Err(MetaPathError::UniverseMismatch(3, 5))
        ));
        assert!(matches!(
            integrate(&[]),
            Err(MetaPathError::NothingToIntegrate)
        ));
        let _ = a;
    }

    #[test]
    fn connectivity_counts_sub_graph_memberships() {
        let hin = toy();
        let gs = vec![mat(&hin, "PAP"), mat(&hin, "PSP"), mat(&hin, "PAPAP")];
        let c = connectivity(&gs);
        assert_eq!(c[0].get(&1), Some(&1)); // p1 is a PAP neighbour of p0
        assert_eq!(c[0].get(&2), Some(&2)); // p2 via PSP and PAPAP
        assert_eq!(c[0].get(&0), None); // never the node itself
        // The total equals the sum of per-sub-graph degrees.
        let degree_sum: u32 = c[1].values().sum();
        assert_eq!(degree_sum, 2); // p1 has PAP edges to p0 and p2 only
    }

    #[test]
    fn homophily_ratio_matches_hand_count() {
        // PAP = {p0-p1 (both class 0), p1-p2 (classes 0 vs 1)} -> 1/2.
        let hin = toy();
        let g = mat(&hin, "PAP");
        assert_eq!(homophily_ratio(&g, &hin).unwrap(), 0.5);
    }

    #[test]
    fn homophily_ratio_error_cases() {
        let hin = toy();
        let empty = MetaPathSubGraph {
            name: "E".into(),
            n: 3,
            edges: vec![],
            counts: None,
        };
        assert!(matches!(
            homophily_ratio(&empty, &hin),
            Err(MetaPathError::NoEdges(_))
        ));
        // Strip a label by materialising over a HIN whose p2 is unlabelled.
        let mut doc: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(concat!(
                env!("CARGO_MANIFEST_DIR"),
                "/fixtures/toy_acm.json"
            ))
            .unwrap())
            .unwrap();
        doc["nodes"][2].as_object_mut().unwrap().remove("label");
        let hin2 = Hin::from_json(&doc.to_string()).unwrap();
        let g2 = mat(&hin2, "PAP");
        assert!(matches!(
            homophily_ratio(&g2, &hin2),
            Err(MetaPathError::Unlabeled { node: 2, .. })
        ));
    }

    #[test]
    fn jaccard_and_coverage_match_hand_values() {
        let hin = toy();
        let pap = mat(&hin, "PAP");
        let psp = mat(&hin, "PSP");
        let papap = mat(&hin, "PAPAP");
        assert_eq!(jaccard(&pap, &psp).unwrap(), 0.0);
        assert_eq!(jaccard(&psp, &papap).unwrap(), 1.0);
        assert_eq!(coverage(&pap, &pap).unwrap(), 1.0);
        assert_eq!(coverage(&psp, &papap).unwrap(), 1.0);
        assert_eq!(coverage(&pap, &papap).unwrap(), 0.0);
    }

    #[test]
    fn empty_edge_set_rules() {
        let e1 = MetaPathSubGraph {
            name: "A".into(),
            n: 3,
            edges: vec![],
            counts: None,
        };
        let e2 = MetaPathSubGraph {
            name: "B".into(),
            n: 3,
            edges: vec![],
            counts: None,
        };
        let full = MetaPathSubGraph {
            name: "C".into(),
            n: 3,
            edges: vec![(0, 1)],
            counts: None,
        };
        assert!(matches!(
            jaccard(&e1, &e2),
            Err(MetaPathError::EmptyUnion(_, _))
        ));
        assert_eq!(coverage(&e1, &e2).unwrap(), 1.0);
        assert!(matches!(
            coverage(&full, &e1),
            Err(MetaPathError::EmptyReference { .. })
        ));
        // Covering an empty set by a nonempty one is fine the other way round.
        assert_eq!(coverage(&e1, &full).unwrap(), 0.0);
    }

    #[test]
    fn combination_enumeration_sizes() {
        assert_eq!(enumerate_combinations(3, 1).unwrap().len(), 7);
        assert_eq!(enumerate_combinations(4, 2).unwrap().len(), 11);
        assert_eq!(enumerate_combinations(5, 2).unwrap().len(), 26);
        assert!(matches!(
            enumerate_combinations(3, 0),
            Err(MetaPathError::MinSizeRange { .. })
        ));
        assert!(matches!(
            enumerate_combinations(3, 4),
            Err(MetaPathError::MinSizeRange { .. })
        ));
    }

    #[test]
    fn combinations_are_ordered_by_size_then_lexicographically() {
        let combos = enumerate_combinations(3, 1).unwrap();
        assert_eq!(
            combos,
            vec![
                vec![0],
                vec![1],
                vec![2],
                vec![0, 1],
                vec![0, 2],
                vec![1, 2],
                vec![0, 1, 2],
            ]
        );
    }

    #[test]
    fn parse_metapath_args_handles_lists_and_explicit_forms() {
        let hin = toy();
        let args = vec!["PAP,PSP".to_string(), "LONG=PA,~PA,PA,~PA".to_string()];
        let mps = parse_metapath_args(&args, &hin).unwrap();
        let names: Vec<&str> = mps.iter().map(|m| m.name.as_str()).collect();
        assert_eq!(names, ["PAP", "PSP", "LONG"]);
        let dup = vec!["PAP,PAP".to_string()];
        assert!(parse_metapath_args(&dup, &hin).is_err());
    }

    #[test]
    fn non_palindromic_paths_sum_both_directions() {
        // p0 cites p1; p1 and p2 share a subject. PPSP connects p0-p2 via
        // the directed instance p0->p1->s0->p2 only.
        let hin = Hin::from_json(
            r#"{
                "node_types": ["paper", "subject"],
                "relations": [
                    {"name": "PP", "src": "paper", "dst": "paper"},
                    {"name": "PS", "src": "paper", "dst": "subject", "symmetric": true}
                ],
                "nodes": [
                    {"id": "p0", "type": "paper"},
                    {"id": "p1", "type": "paper"},
                    {"id": "p2", "type": "paper"},
                    {"id": "s0", "type": "subject"}
                ],
                "edges": [
                    ["p0", "p1", "PP"],
                    ["p1", "s0", "PS"],
                    ["p2", "s0", "PS"]
                ],
                "target_type": "paper"
            }"#,
        )
        .unwrap();
        let ppsp = mp(&hin, "PPSP");
        assert!(!ppsp.is_palindromic());
        let g = materialize(&hin, &ppsp, &MaterializeOptions::default()).unwrap();
        assert_eq!(g.edges, vec![(0, 2)]);
        assert_eq!(g.counts, Some(vec![1]));
        // The cited-by variant starts with the flipped first step and finds
        // nothing from p0 (nobody cites p0).
        let rev = mp(&hin, "-PPSP");
        assert_eq!(rev.steps[0].reverse, true);
        let g_rev = materialize(&hin, &rev, &MaterializeOptions::default()).unwrap();
        assert_eq!(g_rev.edges, vec![]);
    }
}
