//! Shared helpers for the integration suites: an exhaustive walk-counting
//! oracle, generators for small random networks and meta-paths, a 12-node
//! fixture network, a central-difference gradient harness, and the
//! per-criterion verdict reporter used by the acceptance suite.

#![allow(dead_code)] // each test target pulls in a different subset

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;

use lamp::autodiff::{Tape, Tensor};
use lamp::hin::{Hin, RelId};
use lamp::metapath::{MetaPath, Step};
use lamp::rng;
use rand::Rng;

// ---------------------------------------------------------------------------
// Verdict reporting
// ---------------------------------------------------------------------------

/// Prints one line to the real stdout, past the harness's output capture,
/// so per-criterion verdicts stay visible in a plain `cargo test` run.
pub fn report(line: &str) {
    let mut out = std::io::stdout();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

/// Collects the checks behind one acceptance criterion and prints a single
/// `PASS criterion N` / `FAIL criterion N` line when finished.
pub struct Criterion {
    number: usize,
    title: &'static str,
    notes: Vec<String>,
    failures: Vec<String>,
}

impl Criterion {
    pub fn new(number: usize, title: &'static str) -> Criterion {
        Criterion {
            number,
            title,
            notes: Vec::new(),
            failures: Vec::new(),
        }
    }

    /// Records one named check; a false condition turns the verdict into a
    /// failure but keeps collecting, so the report shows every violation.
    pub fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    /// Extra context appended to the verdict line (measurements, margins).
    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    /// Prints the verdict line and panics if any check failed.
    pub fn finish(self) {
        let notes = if self.notes.is_empty() {
            String::new()
        } else {
            format!(" [{}]", self.notes.join("; "))
        };
        if self.failures.is_empty() {
            report(&format!(
                "PASS criterion {}: {}{}",
                self.number, self.title, notes
            ));
        } else {
            report(&format!(
                "FAIL criterion {}: {} — {}{}",
                self.number,
                self.title,
                self.failures.join(" | "),
                notes
            ));
            panic!(
                "criterion {} ({}) failed:\n  {}",
                self.number,
                self.title,
                self.failures.join("\n  ")
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Exhaustive meta-path oracle
// ---------------------------------------------------------------------------

/// Recounts a meta-path's instances by enumerating typed walks one edge at
/// a time — no matrices involved, so it shares nothing with the sparse
/// composition path except the network and the step list.
///
/// A walk follows the steps edge by edge. Whenever it lands on a node of
/// the target type it closes a leg: that node must differ from the node
/// that opened the leg (walks may not stall on a target node), and the
/// final node must differ from the start. Intermediate nodes of other
/// types are unconstrained. Directed counts are then folded onto unordered
/// pairs by summing both orientations; when the step list reads the same
/// backwards (same relations, opposite directions) the two orientations
/// describe the same instance and the sum is halved.
pub fn walk_count_oracle(hin: &Hin, mp: &MetaPath) -> (Vec<(usize, usize)>, Vec<u64>) {
    let seq = mp
        .type_sequence(hin)
        .expect("oracle requires a well-typed meta-path");
    let target = hin.target_type();
    let steps = &mp.steps;
    let len = steps.len();

    // Per-step neighbour lists over dense ids. A forward step uses edges
    // whose endpoint types match the relation's declaration; a reverse
    // step walks those same edges backwards. (For a symmetric relation
    // between two different types, the loader's materialised reverse
    // edges fail the type filter, which is exactly what keeps forward and
    // reverse from double-counting.)
    let mut adj: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new(); hin.n_nodes()]; len];
    for (k, step) in steps.iter().enumerate() {
        let rel = hin.relation(step.rel);
        for e in hin.edges() {
            if e.rel != step.rel
                || hin.node_type(e.src) != rel.src
                || hin.node_type(e.dst) != rel.dst
            {
                continue;
            }
            if step.reverse {
                adj[k][e.dst].push(e.src);
            } else {
                adj[k][e.src].push(e.dst);
            }
        }
    }

    let offset = hin.nodes_of_type(target).start;
    let mut directed: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for start in hin.nodes_of_type(target) {
        // Stack entries: (position, node, node that opened the current leg).
        let mut stack = vec![(0usize, start, start)];
        while let Some((pos, node, leg_start)) = stack.pop() {
            if pos == len {
                if node != start {
                    *directed.entry((start - offset, node - offset)).or_insert(0) += 1;
                }
                continue;
            }
            for &next in &adj[pos][node] {
                let closes_leg = seq[pos + 1] == target;
                if closes_leg && next == leg_start {
                    continue;
                }
                let opener = if closes_leg { next } else { leg_start };
                stack.push((pos + 1, next, opener));
            }
        }
    }

    // Independent palindrome test: position k must undo position L−1−k.
    let palindromic = (0..len).all(|k| {
        let (a, b) = (&steps[k], &steps[len - 1 - k]);
        a.rel == b.rel && a.reverse != b.reverse
    });

    let mut pairs: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for (&(u, v), &c) in &directed {
        let key = if u < v { (u, v) } else { (v, u) };
        *pairs.entry(key).or_insert(0) += c;
    }
    if palindromic {
        for c in pairs.values_mut() {
            assert!(*c % 2 == 0, "palindromic orientations must pair up");
            *c /= 2;
        }
    }
    (pairs.keys().copied().collect(), pairs.values().copied().collect())
}

// ---------------------------------------------------------------------------
// Random network and meta-path generators
// ---------------------------------------------------------------------------

/// Generates a small random network: 1–3 node types (type 0 is the
/// target), at most 60 nodes, and 1–4 relations of random shape and
/// symmetry. Relation `R0` always starts at the target type, so at least
/// one meta-path exists no matter how the dice fall. Edge lists are
/// duplicate-free; self-loops are never generated.
pub fn random_hin(rng: &mut impl Rng) -> Hin {
    let n_types = rng.gen_range(1..=3usize);
    let counts: Vec<usize> = (0..n_types)
        .map(|_| rng.gen_range(3..=60 / n_types))
        .collect();
    let type_names: Vec<String> = (0..n_types).map(|t| format!("t{t}")).collect();

    let n_rels = rng.gen_range(1..=4usize);
    let mut relations = Vec::new();
    for r in 0..n_rels {
        let src = if r == 0 { 0 } else { rng.gen_range(0..n_types) };
        let dst = rng.gen_range(0..n_types);
        relations.push((format!("R{r}"), src, dst, rng.gen_bool(0.5)));
    }

    let mut edges: Vec<serde_json::Value> = Vec::new();
    for (name, src, dst, symmetric) in &relations {
        let cap = (2 * counts[*src].max(counts[*dst])).min(80);
        let lo = if name == "R0" { counts[0] / 2 } else { 0 };
        let attempts = rng.gen_range(lo..=cap);
        let mut seen = BTreeSet::new();
        for _ in 0..attempts {
            let u = rng.gen_range(0..counts[*src]);
            let v = rng.gen_range(0..counts[*dst]);
            if src == dst && u == v {
                continue;
            }
            // One canonical orientation per unordered pair keeps a
            // same-type symmetric relation from declaring an edge twice.
            let key = if src == dst && *symmetric {
                (u.min(v), u.max(v))
            } else {
                (u, v)
            };
            if !seen.insert(key) {
                continue;
            }
            edges.push(serde_json::json!([
                format!("t{src}n{u}"),
                format!("t{dst}n{v}"),
                name
            ]));
        }
    }

    let nodes: Vec<serde_json::Value> = (0..n_types)
        .flat_map(|t| {
            (0..counts[t]).map(move |i| {
                serde_json::json!({ "id": format!("t{t}n{i}"), "type": format!("t{t}") })
            })
        })
        .collect();
    let rels: Vec<serde_json::Value> = relations
        .iter()
        .map(|(name, src, dst, symmetric)| {
            serde_json::json!({
                "name": name,
                "src": type_names[*src],
                "dst": type_names[*dst],
                "symmetric": symmetric,
            })
        })
        .collect();
    let doc = serde_json::json!({
        "node_types": type_names,
        "relations": rels,
        "nodes": nodes,
        "edges": edges,
        "target_type": "t0",
    });
    Hin::from_json(&doc.to_string()).expect("generated network must load")
}

/// Samples a random meta-path of 1–5 steps by walking the schema from the
/// target type until a walk happens to return there. Falls back to
/// `R0,~R0` (always well-typed by construction of [`random_hin`]) when
/// rejection sampling runs out of luck.
pub fn random_metapath(hin: &Hin, name: &str, rng: &mut impl Rng) -> MetaPath {
    let target = hin.target_type();
    for _ in 0..100 {
        let want = rng.gen_range(1..=5usize);
        let mut ty = target;
        let mut steps = Vec::new();
        for _ in 0..want {
            let moves: Vec<Step> = (0..hin.n_relations())
                .flat_map(|r| {
                    let rel = hin.relation(RelId(r));
                    let mut out = Vec::new();
                    if rel.src == ty {
                        out.push(Step { rel: RelId(r), reverse: false });
                    }
                    if rel.dst == ty {
                        out.push(Step { rel: RelId(r), reverse: true });
                    }
                    out
                })
                .collect();
            if moves.is_empty() {
                break;
            }
            let step = moves[rng.gen_range(0..moves.len())];
            let rel = hin.relation(step.rel);
            ty = if step.reverse { rel.src } else { rel.dst };
            steps.push(step);
        }
        if steps.len() == want && ty == target {
            return MetaPath { name: name.to_string(), steps };
        }
    }
    let r0 = hin.relation_by_name("R0").expect("R0 is always generated");
    MetaPath {
        name: name.to_string(),
        steps: vec![
            Step { rel: r0, reverse: false },
            Step { rel: r0, reverse: true },
        ],
    }
}

// ---------------------------------------------------------------------------
// The 12-node fixture network
// ---------------------------------------------------------------------------

/// A 12-node, three-type network: five labelled target nodes with
/// three-dimensional features, four `a` nodes, three `b` nodes, and two
/// symmetric relations. Dense enough that both meta-path sub-graphs have
/// edges and every parameter of the pipeline receives gradient.
pub fn toy_hin() -> Hin {
    let doc = serde_json::json!({
        "node_types": ["t", "a", "b"],
        "relations": [
            { "name": "TA", "src": "t", "dst": "a", "symmetric": true },
            { "name": "TB", "src": "t", "dst": "b", "symmetric": true },
        ],
        "nodes": [
            { "id": "t0", "type": "t", "label": 0, "feature": [0.9, 0.1, -0.3] },
            { "id": "t1", "type": "t", "label": 0, "feature": [0.8, -0.2, 0.1] },
            { "id": "t2", "type": "t", "label": 1, "feature": [-0.4, 0.7, 0.2] },
            { "id": "t3", "type": "t", "label": 1, "feature": [-0.6, 0.5, -0.1] },
            { "id": "t4", "type": "t", "label": 0, "feature": [0.7, 0.3, 0.4] },
            { "id": "a0", "type": "a" },
            { "id": "a1", "type": "a" },
            { "id": "a2", "type": "a" },
            { "id": "a3", "type": "a" },
            { "id": "b0", "type": "b" },
            { "id": "b1", "type": "b" },
            { "id": "b2", "type": "b" },
        ],
        "edges": [
            ["t0", "a0", "TA"], ["t1", "a0", "TA"], ["t1", "a1", "TA"],
            ["t2", "a1", "TA"], ["t2", "a2", "TA"], ["t3", "a2", "TA"],
            ["t4", "a3", "TA"], ["t0", "a3", "TA"], ["t3", "a3", "TA"],
            ["t0", "b0", "TB"], ["t1", "b0", "TB"], ["t2", "b1", "TB"],
            ["t3", "b1", "TB"], ["t4", "b2", "TB"], ["t0", "b2", "TB"],
        ],
        "target_type": "t",
    });
    Hin::from_json(&doc.to_string()).expect("fixture network must load")
}

/// The two length-2 meta-paths of the fixture network.
pub fn toy_metapaths(hin: &Hin) -> Vec<MetaPath> {
    vec![
        MetaPath::parse("TAT=TA,~TA", hin).expect("TAT parses"),
        MetaPath::parse("TBT=TB,~TB", hin).expect("TBT parses"),
    ]
}

// ---------------------------------------------------------------------------
// Finite-difference gradient harness
// ---------------------------------------------------------------------------

/// Relative error with a floor that turns near-zero comparisons absolute:
/// `|a − b| / max(|a|, |b|, 10⁻⁶)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Checks a scalar-valued graph against central finite differences.
///
/// `build` must be a pure function of the leaf values it is handed —
/// anything random inside (dropout masks, noise) has to be re-created
/// from a fixed seed on every call. Returns the largest relative error
/// over every component of every leaf.
pub fn max_fd_error(
    leaves: &[(usize, usize, Vec<f64>)],
    h: f64,
    build: &dyn Fn(&Tape, &[Tensor]) -> Tensor,
) -> f64 {
    let eval = |values: &[Vec<f64>]| -> f64 {
        let tape = Tape::new();
        let ts: Vec<Tensor> = leaves
            .iter()
            .zip(values)
            .map(|(&(r, c, _), v)| tape.leaf(r, c, v.clone(), false))
            .collect();
        build(&tape, &ts).item()
    };

    // One reverse-mode pass gives every gradient at once.
    let tape = Tape::new();
    let ts: Vec<Tensor> = leaves
        .iter()
        .map(|&(r, c, ref v)| tape.leaf(r, c, v.clone(), true))
        .collect();
    let scalar = build(&tape, &ts);
    assert_eq!(scalar.shape(), (1, 1), "gradient checks need a scalar output");
    scalar.backward().expect("backward must stay finite");
    let grads: Vec<Vec<f64>> = ts.iter().map(Tensor::grad).collect();

    let mut values: Vec<Vec<f64>> = leaves.iter().map(|(_, _, v)| v.clone()).collect();
    let mut worst = 0.0f64;
    for i in 0..leaves.len() {
        for j in 0..values[i].len() {
            let saved = values[i][j];
            values[i][j] = saved + h;
            let up = eval(&values);
            values[i][j] = saved - h;
            let down = eval(&values);
            values[i][j] = saved;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(grads[i][j], fd));
        }
    }
    worst
}

/// Deterministic filler values in `[lo, hi)` for gradient-check leaves.
pub fn fill(n: usize, lo: f64, hi: f64, stream: &str) -> Vec<f64> {
    let mut r = rng::stream(0x5eed, stream);
    (0..n).map(|_| r.gen_range(lo..hi)).collect()
}

/// Reduces any tensor to a scalar through a fixed, position-dependent
/// weighting, so every output component contributes a distinct gradient.
pub fn weighted_sum(tape: &Tape, y: &Tensor) -> Tensor {
    let n = y.rows() * y.cols();
    let w: Vec<f64> = (0..n).map(|k| 0.3 + 0.17 * k as f64).collect();
    y.mul(&tape.constant(y.rows(), y.cols(), w)).sum()
}
