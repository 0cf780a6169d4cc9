//! The heterogeneous information network (HIN) data model and its JSON
//! interchange format.
//!
//! A HIN is a typed graph: every node has exactly one node type, every edge
//! belongs to a declared relation `(name, src type, dst type)`. One node type
//! is the *target* type — the type whose nodes are embedded, classified and
//! clustered downstream.
//!
//! # File format
//!
//! A single UTF-8 JSON document with five top-level keys (any order, unknown
//! keys rejected):
//!
//! ```json
//! {
//!   "node_types": ["paper", "author"],
//!   "relations":  [{"name": "PA", "src": "paper", "dst": "author", "symmetric": true}],
//!   "nodes":      [{"id": "p0", "type": "paper", "feature": [0.5, 1.0], "label": 0}],
//!   "edges":      [["p0", "a0", "PA"]],
//!   "target_type": "paper"
//! }
//! ```
//!
//! `feature` and `label` are optional; a label is either one class id or an
//! array of class ids (multi-label). If a relation is marked `symmetric`,
//! the reverse of every declared edge is materialised at load time.
//!
//! # Dense ids
//!
//! String node ids appear only at the file boundary. At load each node gets a
//! dense integer id: node types are laid out in declaration order, nodes of a
//! type in file order, so the nodes of any one type — in particular the
//! target type — occupy one contiguous id range. The original string ids are
//! kept in a sidecar map for output files and error messages.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a node type within [`Hin::type_names`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TypeId(pub usize);

/// Index of a relation within [`Hin::relations`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelId(pub usize);

/// A declared edge relation between two node types.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation {
    pub name: String,
    pub src: TypeId,
    pub dst: TypeId,
    /// When set, loading materialises the reverse of every declared edge.
    pub symmetric: bool,
}

/// A directed edge between dense node ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub rel: RelId,
}

/// A node label: one class id, or a set of class ids (multi-label).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Label {
    Single(usize),
    Multi(Vec<usize>),
}

impl Label {
    /// The class ids carried by this label, ascending.
    pub fn classes(&self) -> &[usize] {
        match self {
            Label::Single(c) => std::slice::from_ref(c),
            Label::Multi(cs) => cs,
        }
    }
}

/// Dense per-type feature matrix, row-major; row `k` belongs to the node with
/// type-local index `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// True when this matrix is exactly the identity — the shape produced
    /// by one-hot id features. Consumers use this to elide `I · W`
    /// products.
    pub fn is_identity(&self) -> bool {
        self.rows == self.cols
            && self.data.iter().enumerate().all(|(i, &v)| {
                let diag = i / self.cols == i % self.cols;
                v == if diag { 1.0 } else { 0.0 }
            })
    }
}

/// Errors raised while reading or constructing a [`Hin`].
#[derive(Debug, Error)]
pub enum HinError {
    #[error("failed to read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid HIN document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("document declares no node types")]
    NoNodeTypes,
    #[error("duplicate node type `{0}`")]
    DuplicateType(String),
    #[error("duplicate relation name `{0}`")]
    DuplicateRelation(String),
    #[error("relation `{name}` references unknown node type `{ty}`")]
    RelationType { name: String, ty: String },
    #[error("unknown target type `{0}`")]
    UnknownTargetType(String),
    #[error("node `{id}` has unknown type `{ty}`")]
    UnknownNodeType { id: String, ty: String },
    #[error("duplicate node id `{0}`")]
    DuplicateNodeId(String),
    #[error("edge {index} references unknown node `{id}`")]
    DanglingNode { index: usize, id: String },
    #[error("edge {index} references unknown relation `{name}`")]
    DanglingRelation { index: usize, name: String },
    #[error(
        "edge {index} (`{src}` -> `{dst}`) does not match relation `{rel}`: expected {expected}"
    )]
    EdgeTypeMismatch {
        index: usize,
        src: String,
        dst: String,
        rel: String,
        expected: String,
    },
    #[error("nodes of type `{0}` have missing or inconsistently sized feature vectors")]
    FeatureShape(String),
}

/// One finding of [`Hin::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Issue {
    /// Stable machine-readable code, e.g. `duplicate_edge`.
    pub code: String,
    /// Human-readable description.
    pub message: String,
    /// Index into [`Hin::edges`] when the issue concerns an edge.
    pub edge: Option<usize>,
    /// Dense node id when the issue concerns a node.
    pub node: Option<usize>,
}

/// Outcome of [`Hin::validate`]: empty `errors` if and only if the graph
/// satisfies every structural invariant of this module.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<Issue>,
    pub warnings: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.errors {
            writeln!(f, "error[{}]: {}", e.code, e.message)?;
        }
        for w in &self.warnings {
            writeln!(f, "warning[{}]: {}", w.code, w.message)?;
        }
        write!(
            f,
            "{} error(s), {} warning(s)",
            self.errors.len(),
            self.warnings.len()
        )
    }
}

/// An immutable heterogeneous information network.
///
/// Constructed by [`Hin::load`] / [`Hin::from_json`] and never mutated
/// afterwards; every downstream stage borrows it.
#[derive(Debug, Clone, PartialEq)]
pub struct Hin {
    type_names: Vec<String>,
    relations: Vec<Relation>,
    target: TypeId,
    /// First dense id of each type; `type_offsets[t]..type_offsets[t]+type_counts[t]`.
    type_offsets: Vec<usize>,
    type_counts: Vec<usize>,
    /// Per-node, indexed by dense id.
    node_type: Vec<TypeId>,
    original_ids: Vec<String>,
    labels: Vec<Option<Label>>,
    /// Optional per-type feature matrices (row = type-local index).
    features: Vec<Option<FeatureMatrix>>,
    /// All directed edges; the first `declared_edges` came from the document,
    /// the rest were materialised for symmetric relations.
    edges: Vec<Edge>,
    declared_edges: usize,
    /// Sidecar map from original string id to dense id.
    id_index: BTreeMap<String, usize>,
}

// ---------------------------------------------------------------------------
// JSON document shape
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    node_types: Vec<String>,
    relations: Vec<DocRelation>,
    nodes: Vec<DocNode>,
    edges: Vec<(String, String, String)>,
    target_type: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocRelation {
    name: String,
    src: String,
    dst: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    symmetric: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocNode {
    id: String,
    #[serde(rename = "type")]
    ty: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<DocLabel>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum DocLabel {
    Single(usize),
    Multi(Vec<usize>),
}

impl Hin {
    /// Loads a HIN document from `path`.
    pub fn load(path: impl AsRef<Path>) -> Result<Hin, HinError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| HinError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Hin::from_json(&text)
    }

    /// Parses a HIN document from a JSON string.
    pub fn from_json(text: &str) -> Result<Hin, HinError> {
        let doc: Document = serde_json::from_str(text)?;
        Hin::from_document(doc)
    }

    fn from_document(doc: Document) -> Result<Hin, HinError> {
        if doc.node_types.is_empty() {
            return Err(HinError::NoNodeTypes);
        }
        let mut type_index = BTreeMap::new();
        for (t, name) in doc.node_types.iter().enumerate() {
            if type_index.insert(name.clone(), TypeId(t)).is_some() {
                return Err(HinError::DuplicateType(name.clone()));
            }
        }
        let lookup_type = |name: &str| type_index.get(name).copied();

        let mut relations = Vec::with_capacity(doc.relations.len());
        let mut rel_index = BTreeMap::new();
        for r in &doc.relations {
            let src = lookup_type(&r.src).ok_or_else(|| HinError::RelationType {
                name: r.name.clone(),
                ty: r.src.clone(),
            })?;
            let dst = lookup_type(&r.dst).ok_or_else(|| HinError::RelationType {
                name: r.name.clone(),
                ty: r.dst.clone(),
            })?;
            if rel_index
                .insert(r.name.clone(), RelId(relations.len()))
                .is_some()
            {
                return Err(HinError::DuplicateRelation(r.name.clone()));
            }
            relations.push(Relation {
                name: r.name.clone(),
                src,
                dst,
                symmetric: r.symmetric,
            });
        }
        let target = lookup_type(&doc.target_type)
            .ok_or_else(|| HinError::UnknownTargetType(doc.target_type.clone()))?;

        // Bucket nodes by type, keeping file order inside each bucket, so the
        // dense id layout is: types in declaration order, file order within.
        let n_types = doc.node_types.len();
        let mut buckets: Vec<Vec<&DocNode>> = vec![Vec::new(); n_types];
        for node in &doc.nodes {
            let ty = lookup_type(&node.ty).ok_or_else(|| HinError::UnknownNodeType {
                id: node.id.clone(),
                ty: node.ty.clone(),
            })?;
            buckets[ty.0].push(node);
        }

        let n_nodes = doc.nodes.len();
        let mut type_offsets = Vec::with_capacity(n_types);
        let mut type_counts = Vec::with_capacity(n_types);
        let mut node_type = Vec::with_capacity(n_nodes);
        let mut original_ids = Vec::with_capacity(n_nodes);
        let mut labels = Vec::with_capacity(n_nodes);
        let mut features = Vec::with_capacity(n_types);
        let mut id_index = BTreeMap::new();

        for (t, bucket) in buckets.iter().enumerate() {
            type_offsets.push(node_type.len());
            type_counts.push(bucket.len());

            // Features are per type: either every node of the type carries a
            // vector of one common length, or none does.
            let dims: Vec<Option<usize>> = bucket
                .iter()
                .map(|n| n.feature.as_ref().map(Vec::len))
                .collect();
            let feat = match dims.first().copied().flatten() {
                Some(dim) if dims.iter().all(|d| *d == Some(dim)) => {
                    let mut data = Vec::with_capacity(bucket.len() * dim);
                    for n in bucket {
                        data.extend_from_slice(n.feature.as_ref().expect("checked above"));
                    }
                    Some(FeatureMatrix {
                        rows: bucket.len(),
                        cols: dim,
                        data,
                    })
                }
                Some(_) => return Err(HinError::FeatureShape(doc.node_types[t].clone())),
                None if dims.iter().any(Option::is_some) => {
                    return Err(HinError::FeatureShape(doc.node_types[t].clone()))
                }
                None => None,
            };
            features.push(feat);

            for node in bucket {
                match id_index.entry(node.id.clone()) {
                    Entry::Occupied(_) => return Err(HinError::DuplicateNodeId(node.id.clone())),
                    Entry::Vacant(slot) => slot.insert(node_type.len()),
                };
                node_type.push(TypeId(t));
                original_ids.push(node.id.clone());
                labels.push(node.label.as_ref().map(|l| match l {
                    DocLabel::Single(c) => Label::Single(*c),
                    DocLabel::Multi(cs) => {
                        let mut cs = cs.clone();
                        cs.sort_unstable();
                        cs.dedup();
                        Label::Multi(cs)
                    }
                }));
            }
        }

        let mut edges = Vec::with_capacity(doc.edges.len());
        let mut seen = BTreeMap::new();
        for (index, (src, dst, rel)) in doc.edges.iter().enumerate() {
            let s = *id_index.get(src).ok_or_else(|| HinError::DanglingNode {
                index,
                id: src.clone(),
            })?;
            let d = *id_index.get(dst).ok_or_else(|| HinError::DanglingNode {
                index,
                id: dst.clone(),
            })?;
            let r = *rel_index
                .get(rel)
                .ok_or_else(|| HinError::DanglingRelation {
                    index,
                    name: rel.clone(),
                })?;
            let decl = &relations[r.0];
            let forward = node_type[s] == decl.src && node_type[d] == decl.dst;
            // A symmetric relation may be declared in either orientation;
            // the flipped declaration simply is the reverse edge.
            let flipped = decl.symmetric && node_type[s] == decl.dst && node_type[d] == decl.src;
            if !forward && !flipped {
                let mut expected = format!(
                    "`{}` -> `{}`",
                    doc.node_types[decl.src.0], doc.node_types[decl.dst.0]
                );
                if decl.symmetric {
                    expected.push_str(" (or the reverse)");
                }
                return Err(HinError::EdgeTypeMismatch {
                    index,
                    src: src.clone(),
                    dst: dst.clone(),
                    rel: rel.clone(),
                    expected,
                });
            }
            seen.entry((s, d, r)).or_insert(index);
            edges.push(Edge {
                src: s,
                dst: d,
                rel: r,
            });
        }
        let declared_edges = edges.len();

        // Materialise the reverse direction of symmetric relations, skipping
        // reverses that the document already declares.
        for i in 0..declared_edges {
            let Edge { src, dst, rel } = edges[i];
            if relations[rel.0].symmetric && src != dst {
                if let Entry::Vacant(slot) = seen.entry((dst, src, rel)) {
                    slot.insert(edges.len());
                    edges.push(Edge {
                        src: dst,
                        dst: src,
                        rel,
                    });
                }
            }
        }

        Ok(Hin {
            type_names: doc.node_types,
            relations,
            target,
            type_offsets,
            type_counts,
            node_type,
            original_ids,
            labels,
            features,
            edges,
            declared_edges,
            id_index,
        })
    }

    /// Writes the HIN back out as a JSON document.
    ///
    /// Only declared edges are written; reverses materialised for symmetric
    /// relations are reconstructed on the next load. Loading the saved file
    /// yields a structurally identical [`Hin`].
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HinError> {
        let path = path.as_ref();
        let text = self.to_json();
        std::fs::write(path, text).map_err(|source| HinError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Serialises the HIN document as pretty-printed JSON.
    pub fn to_json(&self) -> String {
        let nodes = (0..self.n_nodes())
            .map(|v| {
                let ty = self.node_type[v];
                let local = v - self.type_offsets[ty.0];
                DocNode {
                    id: self.original_ids[v].clone(),
                    ty: self.type_names[ty.0].clone(),
                    feature: self.features[ty.0]
                        .as_ref()
                        .map(|f| f.row(local).to_vec()),
                    label: self.labels[v].as_ref().map(|l| match l {
                        Label::Single(c) => DocLabel::Single(*c),
                        Label::Multi(cs) => DocLabel::Multi(cs.clone()),
                    }),
                }
            })
            .collect();
        let doc = Document {
            node_types: self.type_names.clone(),
            relations: self
                .relations
                .iter()
                .map(|r| DocRelation {
                    name: r.name.clone(),
                    src: self.type_names[r.src.0].clone(),
                    dst: self.type_names[r.dst.0].clone(),
                    symmetric: r.symmetric,
                })
                .collect(),
            nodes,
            edges: self
                .edges
                .iter()
                .take(self.declared_edges)
                .map(|e| {
                    (
                        self.original_ids[e.src].clone(),
                        self.original_ids[e.dst].clone(),
                        self.relations[e.rel.0].name.clone(),
                    )
                })
                .collect(),
            target_type: self.type_names[self.target.0].clone(),
        };
        serde_json::to_string_pretty(&doc).expect("HIN document serialisation cannot fail")
    }

    /// Checks structural invariants that hold beyond what loading enforces.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let mut seen = BTreeMap::new();
        for (i, e) in self.edges.iter().enumerate() {
            if let Some(first) = seen.insert((e.src, e.dst, e.rel), i) {
                report.errors.push(Issue {
                    code: "duplicate_edge".into(),
                    message: format!(
                        "edge {} duplicates edge {} (`{}` -> `{}`, relation `{}`)",
                        i,
                        first,
                        self.original_ids[e.src],
                        self.original_ids[e.dst],
                        self.relations[e.rel.0].name
                    ),
                    edge: Some(i),
                    node: None,
                });
            }
        }
        if self.target_count() == 0 {
            report.errors.push(Issue {
                code: "empty_target".into(),
                message: format!(
                    "target type `{}` has no nodes",
                    self.type_names[self.target.0]
                ),
                edge: None,
                node: None,
            });
        }
        // A schema with |node types| + |relations| <= 2 is a homogeneous
        // graph in disguise; everything still works, but flag it.
        if self.type_names.len() + self.relations.len() <= 2 {
            report.warnings.push(Issue {
                code: "schema_arity".into(),
                message: format!(
                    "schema has {} node type(s) and {} relation(s); \
                     this is not a meaningfully heterogeneous network",
                    self.type_names.len(),
                    self.relations.len()
                ),
                edge: None,
                node: None,
            });
        }
        report
    }

    // -- accessors ----------------------------------------------------------

    pub fn n_nodes(&self) -> usize {
        self.node_type.len()
    }

    pub fn n_types(&self) -> usize {
        self.type_names.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn type_names(&self) -> &[String] {
        &self.type_names
    }

    pub fn type_name(&self, ty: TypeId) -> &str {
        &self.type_names[ty.0]
    }

    pub fn type_by_name(&self, name: &str) -> Option<TypeId> {
        self.type_names
            .iter()
            .position(|t| t == name)
            .map(TypeId)
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn relation(&self, rel: RelId) -> &Relation {
        &self.relations[rel.0]
    }

    pub fn relation_by_name(&self, name: &str) -> Option<RelId> {
        self.relations
            .iter()
            .position(|r| r.name == name)
            .map(RelId)
    }

    /// All directed edges, declared ones first, then symmetric reverses.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// The prefix of [`Hin::edges`] that was declared in the document.
    pub fn n_declared_edges(&self) -> usize {
        self.declared_edges
    }

    pub fn node_type(&self, node: usize) -> TypeId {
        self.node_type[node]
    }

    /// Dense-id range `offset..offset+count` of one node type.
    pub fn nodes_of_type(&self, ty: TypeId) -> std::ops::Range<usize> {
        let start = self.type_offsets[ty.0];
        start..start + self.type_counts[ty.0]
    }

    pub fn type_count(&self, ty: TypeId) -> usize {
        self.type_counts[ty.0]
    }

    /// Index of `node` within its own type's contiguous block.
    pub fn local_index(&self, node: usize) -> usize {
        node - self.type_offsets[self.node_type[node].0]
    }

    pub fn target_type(&self) -> TypeId {
        self.target
    }

    /// Dense-id range of the target-type nodes.
    pub fn target_range(&self) -> std::ops::Range<usize> {
        self.nodes_of_type(self.target)
    }

    pub fn target_count(&self) -> usize {
        self.type_counts[self.target.0]
    }

    pub fn original_id(&self, node: usize) -> &str {
        &self.original_ids[node]
    }

    pub fn dense_id(&self, original: &str) -> Option<usize> {
        self.id_index.get(original).copied()
    }

    pub fn label(&self, node: usize) -> Option<&Label> {
        self.labels[node].as_ref()
    }

    /// Supplied feature matrix of a type, if the document carried one.
    pub fn features(&self, ty: TypeId) -> Option<&FeatureMatrix> {
        self.features[ty.0].as_ref()
    }

    /// Identity feature matrix for a type without supplied attributes: node
    /// `k` of the type (in type-local order) gets the `k`-th standard basis
    /// vector.
    pub fn one_hot_id_features(&self, ty: TypeId) -> FeatureMatrix {
        let n = self.type_counts[ty.0];
        let mut data = vec![0.0; n * n];
        for k in 0..n {
            data[k * n + k] = 1.0;
        }
        FeatureMatrix {
            rows: n,
            cols: n,
            data,
        }
    }

    /// Features used by the pipeline: supplied ones when present, otherwise
    /// one-hot id vectors.
    pub fn effective_features(&self, ty: TypeId) -> FeatureMatrix {
        match self.features(ty) {
            Some(f) => f.clone(),
            None => self.one_hot_id_features(ty),
        }
    }

    /// Width of the feature vectors nodes of `ty` carry — the supplied
    /// width, or the type's node count when one-hot ids stand in.
    pub fn feature_dim(&self, ty: TypeId) -> usize {
        match self.features(ty) {
            Some(f) => f.cols,
            None => self.type_count(ty),
        }
    }
}

/// One-hot encoding of a relation id over `n` relations.
///
/// ```
/// use lamp::hin::{relation_one_hot, RelId};
/// assert_eq!(relation_one_hot(RelId(1), 3), vec![0.0, 1.0, 0.0]);
/// ```
pub fn relation_one_hot(rel: RelId, n: usize) -> Vec<f64> {
    assert!(rel.0 < n, "relation id {} out of range 0..{n}", rel.0);
    let mut v = vec![0.0; n];
    v[rel.0] = 1.0;
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const TOY_ACM: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/toy_acm.json");
    pub const TOY_IMDB: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/toy_imdb.json");

    #[test]
    fn toy_acm_loads_with_expected_shape() {
        let hin = Hin::load(TOY_ACM).unwrap();
        assert_eq!(hin.n_nodes(), 6);
        assert_eq!(hin.n_types(), 3);
        assert_eq!(hin.n_relations(), 2);
        assert_eq!(hin.n_declared_edges(), 6);
        // Both relations are symmetric, so each declared edge gains a reverse.
        assert_eq!(hin.edges().len(), 12);
        assert_eq!(hin.target_count(), 3);
        assert_eq!(hin.target_range(), 0..3);
        assert!(hin.validate().is_clean());
    }

    #[test]
    fn dense_ids_are_grouped_by_type_in_file_order() {
        let hin = Hin::load(TOY_ACM).unwrap();
        let ids: Vec<&str> = (0..hin.n_nodes()).map(|v| hin.original_id(v)).collect();
        assert_eq!(ids, ["p0", "p1", "p2", "a0", "a1", "s0"]);
        assert_eq!(hin.dense_id("a1"), Some(4));
        assert_eq!(hin.local_index(4), 1);
        assert_eq!(hin.dense_id("zzz"), None);
    }

    #[test]
    fn symmetric_reverse_edges_are_materialised_once() {
        let hin = Hin::from_json(
            r#"{
                "node_types": ["p", "a"],
                "relations": [{"name": "PA", "src": "p", "dst": "a", "symmetric": true}],
                "nodes": [{"id": "p0", "type": "p"}, {"id": "a0", "type": "a"}],
                "edges": [["p0", "a0", "PA"], ["a0", "p0", "PA"]],
                "target_type": "p"
            }"#,
        )
        .unwrap();
        // The reverse is already declared; materialisation must not add a
        // duplicate.
        assert_eq!(hin.edges().len(), 2);
        assert!(hin.validate().is_clean());
    }

    #[test]
    fn dangling_edge_is_a_load_error() {
        let err = Hin::from_json(
            r#"{
                "node_types": ["p", "a"],
                "relations": [{"name": "PA", "src": "p", "dst": "a"}],
                "nodes": [{"id": "p0", "type": "p"}],
                "edges": [["p0", "a9", "PA"]],
                "target_type": "p"
            }"#,
        )
        .unwrap_err();
        match err {
            HinError::DanglingNode { index: 0, id } => assert_eq!(id, "a9"),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn edge_endpoint_types_must_match_the_relation() {
        let err = Hin::from_json(
            r#"{
                "node_types": ["p", "a"],
                "relations": [{"name": "PA", "src": "p", "dst": "a"}],
                "nodes": [{"id": "p0", "type": "p"}, {"id": "p1", "type": "p"}],
                "edges": [["p0", "p1", "PA"]],
                "target_type": "p"
            }"#,
        )
        .unwrap_err();
        assert!(matches!(err, HinError::EdgeTypeMismatch { index: 0, .. }));
    }

    #[test]
    fn duplicate_declared_edges_fail_validation() {
        let hin = Hin::from_json(
            r#"{
                "node_types": ["p", "a"],
                "relations": [{"name": "PA", "src": "p", "dst": "a"}],
                "nodes": [{"id": "p0", "type": "p"}, {"id": "a0", "type": "a"}],
                "edges": [["p0", "a0", "PA"], ["p0", "a0", "PA"]],
                "target_type": "p"
            }"#,
        )
        .unwrap();
        let report = hin.validate();
        assert_eq!(report.errors.len(), 1);
        assert_eq!(report.errors[0].code, "duplicate_edge");
        assert_eq!(report.errors[0].edge, Some(1));
    }

    #[test]
    fn tiny_schemas_warn_but_do_not_error() {
        let hin = Hin::from_json(
            r#"{
                "node_types": ["p"],
                "relations": [{"name": "PP", "src": "p", "dst": "p"}],
                "nodes": [{"id": "p0", "type": "p"}],
                "edges": [],
                "target_type": "p"
            }"#,
        )
        .unwrap();
        let report = hin.validate();
        assert!(report.is_clean());
        assert_eq!(report.warnings.len(), 1);
        assert_eq!(report.warnings[0].code, "schema_arity");
    }

    #[test]
    fn unknown_document_keys_are_rejected() {
        let err = Hin::from_json(
            r#"{
                "node_types": ["p"], "relations": [], "nodes": [], "edges": [],
                "target_type": "p", "extra": 1
            }"#,
        )
        .unwrap_err();
        assert!(matches!(err, HinError::Parse(_)));
    }

    #[test]
    fn inconsistent_features_within_a_type_are_rejected() {
        let err = Hin::from_json(
            r#"{
                "node_types": ["p"],
                "relations": [],
                "nodes": [
                    {"id": "p0", "type": "p", "feature": [1.0, 2.0]},
                    {"id": "p1", "type": "p", "feature": [1.0]}
                ],
                "edges": [],
                "target_type": "p"
            }"#,
        )
        .unwrap_err();
        assert!(matches!(err, HinError::FeatureShape(_)));
    }

    #[test]
    fn one_hot_id_features_form_an_identity_block() {
        let hin = Hin::load(TOY_ACM).unwrap();
        let f = hin.one_hot_id_features(hin.target_type());
        assert_eq!((f.rows, f.cols), (3, 3));
        assert_eq!(f.data, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        // Rows are orthonormal: exactly one 1 per row and per column.
        for r in 0..3 {
            assert_eq!(f.row(r).iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn labels_round_trip_including_multi_label() {
        let hin = Hin::load(TOY_IMDB).unwrap();
        let m0 = hin.dense_id("m0").unwrap();
        assert_eq!(hin.label(m0), Some(&Label::Multi(vec![0, 2])));
        assert_eq!(hin.label(m0).unwrap().classes(), &[0, 2]);
    }

    #[test]
    fn save_then_load_is_structurally_identical() {
        let hin = Hin::load(TOY_ACM).unwrap();
        let reloaded = Hin::from_json(&hin.to_json()).unwrap();
        assert_eq!(hin, reloaded);
    }

    #[test]
    fn empty_target_type_is_a_validation_error() {
        let hin = Hin::from_json(
            r#"{
                "node_types": ["p", "a"],
                "relations": [{"name": "PA", "src": "p", "dst": "a"}],
                "nodes": [{"id": "a0", "type": "a"}],
                "edges": [],
                "target_type": "p"
            }"#,
        )
        .unwrap();
        assert!(hin
            .validate()
            .errors
            .iter()
            .any(|e| e.code == "empty_target"));
    }
}
