//! Projection head, positive/negative selection, and the InfoNCE loss.
//!
//! Both views' embeddings pass through *one* projection head — the
//! parameters are shared, which the sharing audit can verify because both
//! passes bind the identical registry entries. Positives and negatives are
//! chosen once, before training, from meta-path connectivity:
//!
//! * `C_i(j)` counts the meta-path sub-graphs in which `j` neighbours `i`;
//! * the top `T_pos` candidates (ties broken by ascending node id) with
//!   `C_i(j) > 0` form `Pos_i`;
//! * every other target node except `i` itself forms `Neg_i`;
//! * a node with no meta-path neighbours falls back to `Pos_i = {i}` — its
//!   own cross-view embedding is its only positive.
//!
//! The loss for anchor `i` (schema view) against candidates (meta-path
//! view) is
//!
//! ```text
//! L_i = −log [ Σ_{j∈Pos_i} exp(cos(z_i, ẑ_j)/τ)
//!            / Σ_{k∈Pos_i∪Neg_i} exp(cos(z_i, ẑ_k)/τ) ]
//! ```
//!
//! and `J` is the mean over target nodes. Because `Pos ⊆ Pos∪Neg`, the
//! ratio is at most 1 and `L_i ≥ 0`; when `Neg_i` is empty the ratio is
//! exactly 1 and the loss contributes exactly zero.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::autodiff::params::{Binding, Init, ParamId, ParamStore};
use crate::autodiff::{Tape, Tensor};

use std::collections::BTreeSet;

/// Contrastive-stage failures.
#[derive(Debug, Error)]
pub enum ContrastiveError {
    #[error("T_pos must be at least 1, got {0}")]
    ThresholdTooSmall(usize),
    #[error("connectivity table is empty; no target nodes to contrast")]
    NoTargets,
}

/// The shared projection head: `z' = W₂·LeakyReLU(W₁z + b₁) + b₂`.
#[derive(Debug, Clone)]
pub struct ProjectionParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl ProjectionParams {
    /// Registers the head's four tensors (`d → d` with a `d`-wide hidden
    /// layer, matching the embedding width).
    pub fn register(store: &mut ParamStore, dim: usize, rng: &mut impl Rng) -> ProjectionParams {
        ProjectionParams {
            w1: store.add("proj/w1", dim, dim, Init::Glorot, rng),
            b1: store.add("proj/b1", 1, dim, Init::Zeros, rng),
            w2: store.add("proj/w2", dim, dim, Init::Glorot, rng),
            b2: store.add("proj/b2", 1, dim, Init::Zeros, rng),
        }
    }

    pub fn all_ids(&self) -> Vec<ParamId> {
        vec![self.w1, self.b1, self.w2, self.b2]
    }

    /// Applies the head. Calling this for both views on one `Binding`
    /// reuses the same tape nodes, so the sharing is structural, not a
    /// convention.
    pub fn project(
        &self,
        store: &ParamStore,
        binding: &mut Binding,
        z: &Tensor,
        used: &mut BTreeSet<ParamId>,
    ) -> Tensor {
        let w1 = binding.bind(store, self.w1);
        let b1 = binding.bind(store, self.b1);
        let w2 = binding.bind(store, self.w2);
        let b2 = binding.bind(store, self.b2);
        used.extend(self.all_ids());
        z.matmul(&w1)
            .add_row(&b1)
            .leaky_relu(0.2)
            .matmul(&w2)
            .add_row(&b2)
    }
}

/// Fixed positive/negative sets per target node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PosNegAssignment {
    pub t_pos: usize,
    /// `pos[i]`: ascending node ids; nonempty (self-fallback guarantees it).
    pub pos: Vec<Vec<usize>>,
    /// `neg[i]`: ascending node ids; disjoint from `pos[i]`, never contains `i`.
    pub neg: Vec<Vec<usize>>,
}

impl PosNegAssignment {
    pub fn n(&self) -> usize {
        self.pos.len()
    }

    /// Row-major `n × n` 0/1 masks: positives, and all candidates
    /// (positives ∪ negatives).
    pub fn masks(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        let mut pos = vec![0.0; n * n];
        let mut cand = vec![0.0; n * n];
        for i in 0..n {
            for &j in &self.pos[i] {
                pos[i * n + j] = 1.0;
                cand[i * n + j] = 1.0;
            }
            for &j in &self.neg[i] {
                cand[i * n + j] = 1.0;
            }
        }
        (pos, cand)
    }
}

/// Chooses `Pos_i`/`Neg_i` from the connectivity table.
///
/// Candidates are ranked by `(C_i(j) desc, j asc)`; the top
/// `min(T_pos, #nonzero)` become positives. Negatives default to every
/// remaining target node other than `i`; when `neg_samples > 0` they are
/// capped to that many, drawn uniformly without replacement from `rng`.
pub fn select_pos_neg(
    connectivity: &[BTreeMap<usize, u32>],
    t_pos: usize,
    neg_samples: usize,
    rng: &mut impl Rng,
) -> Result<PosNegAssignment, ContrastiveError> {
    if t_pos < 1 {
        return Err(ContrastiveError::ThresholdTooSmall(t_pos));
    }
    let n = connectivity.len();
    if n == 0 {
        return Err(ContrastiveError::NoTargets);
    }
    let mut pos = Vec::with_capacity(n);
    let mut neg = Vec::with_capacity(n);
    for i in 0..n {
        // BTreeMap iteration is id-ascending, so a stable sort on the
        // descending count alone realises the (count desc, id asc) order.
        let mut ranked: Vec<(usize, u32)> = connectivity[i]
            .iter()
            .filter(|&(&j, &c)| j != i && c > 0)
            .map(|(&j, &c)| (j, c))
            .collect();
        ranked.sort_by_key(|&(_, c)| std::cmp::Reverse(c));
        let mut pos_i: Vec<usize> = ranked.iter().take(t_pos).map(|&(j, _)| j).collect();
        if pos_i.is_empty() {
            pos_i.push(i);
        }
        pos_i.sort_unstable();
        let mut neg_i: Vec<usize> = (0..n)
            .filter(|&j| j != i && !pos_i.contains(&j))
            .collect();
        if neg_samples > 0 && neg_i.len() > neg_samples {
            neg_i.shuffle(rng);
            neg_i.truncate(neg_samples);
            neg_i.sort_unstable();
        }
        pos.push(pos_i);
        neg.push(neg_i);
    }
    Ok(PosNegAssignment { t_pos, pos, neg })
}

/// The InfoNCE result: per-node losses and their mean.
pub struct NceLoss {
    /// `n × 1` per-node `L_i`.
    pub per_node: Tensor,
    /// Scalar `J = mean(L_i)`.
    pub j: Tensor,
}

/// Computes the InfoNCE loss between anchor rows (schema view) and
/// candidate rows (meta-path view).
///
/// Similarities are cosine — both sides are ℓ₂-normalised with a `10⁻¹²`
/// floor, so zero rows are safe. The log-ratio is evaluated as
/// `log Σ_cand − log Σ_pos`; when a node has no negatives the two sums are
/// the same expression and the difference is exactly zero.
pub fn info_nce(
    tape: &Tape,
    anchors: &Tensor,
    candidates: &Tensor,
    assign: &PosNegAssignment,
    tau: f64,
) -> NceLoss {
    assert!(tau > 0.0, "InfoNCE temperature must be positive");
    let n = assign.n();
    assert_eq!(anchors.rows(), n, "anchor rows must match the assignment");
    assert_eq!(candidates.rows(), n, "candidate rows must match the assignment");
    let a = anchors.l2_normalize_rows(1e-12);
    let c = candidates.l2_normalize_rows(1e-12);
    let sims = a.matmul(&c.transpose());
    let e = sims.scale(1.0 / tau).exp();
    let (pos, cand) = assign.masks();
    let pos = tape.constant(n, n, pos);
    let cand = tape.constant(n, n, cand);
    let log_pos = e.mul(&pos).row_sum().log();
    let log_cand = e.mul(&cand).row_sum().log();
    let per_node = log_cand.sub(&log_pos);
    let j = per_node.mean();
    NceLoss { per_node, j }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn conn_from(pairs: &[&[(usize, u32)]]) -> Vec<BTreeMap<usize, u32>> {
        pairs
            .iter()
            .map(|row| row.iter().copied().collect())
            .collect()
    }

    #[test]
    fn threshold_selects_positively_connected_nodes_only() {
        // C_0 = {1: 3, 2: 2, 3: 0}; T_pos = 2 → Pos = {1, 2}.
        let conn = conn_from(&[
            &[(1, 3), (2, 2)],
            &[(0, 3)],
            &[(0, 2)],
            &[],
        ]);
        let mut r = rng::stream(0, "negs");
        let a = select_pos_neg(&conn, 2, 0, &mut r).unwrap();
        assert_eq!(a.pos[0], vec![1, 2]);
        assert_eq!(a.neg[0], vec![3]);
    }

    #[test]
    fn ties_at_the_boundary_break_by_ascending_id() {
        // C_0 = {1: 2, 2: 2, 3: 2}; T_pos = 2 → Pos = {1, 2}.
        let conn = conn_from(&[
            &[(3, 2), (1, 2), (2, 2)],
            &[],
            &[],
            &[],
        ]);
        let mut r = rng::stream(0, "negs");
        let a = select_pos_neg(&conn, 2, 0, &mut r).unwrap();
        assert_eq!(a.pos[0], vec![1, 2]);
        assert_eq!(a.neg[0], vec![3]);
    }

    #[test]
    fn higher_counts_beat_lower_ids() {
        let conn = conn_from(&[&[(1, 1), (2, 5)], &[], &[]]);
        let mut r = rng::stream(0, "negs");
        let a = select_pos_neg(&conn, 1, 0, &mut r).unwrap();
        assert_eq!(a.pos[0], vec![2]);
        assert_eq!(a.neg[0], vec![1]);
    }

    #[test]
    fn isolated_nodes_fall_back_to_self_positives() {
        let conn = conn_from(&[&[], &[(2, 1)], &[(1, 1)]]);
        let mut r = rng::stream(0, "negs");
        let a = select_pos_neg(&conn, 3, 0, &mut r).unwrap();
        assert_eq!(a.pos[0], vec![0]);
        assert_eq!(a.neg[0], vec![1, 2]);
        // Connected nodes never self-pair.
        assert_eq!(a.pos[1], vec![2]);
        assert_eq!(a.neg[1], vec![0]);
    }

    #[test]
    fn assignment_invariants_hold_on_random_tables() {
        let mut r = rng::stream(4, "conn");
        let n = 30;
        let mut conn = vec![BTreeMap::new(); n];
        for i in 0..n {
            for j in 0..n {
                if i != j && r.gen::<f64>() < 0.2 {
                    conn[i].insert(j, r.gen_range(1..4u32));
                }
            }
        }
        let mut nr = rng::stream(4, "negs");
        let a = select_pos_neg(&conn, 5, 0, &mut nr).unwrap();
        for i in 0..n {
            assert!(!a.pos[i].is_empty());
            assert!(a.pos[i].len() <= 5);
            assert!(!a.neg[i].contains(&i));
            assert!(a.pos[i].iter().all(|j| !a.neg[i].contains(j)));
            if a.pos[i] != vec![i] {
                assert!(!a.pos[i].contains(&i));
                assert_eq!(a.pos[i].len() + a.neg[i].len(), n - 1);
            }
        }
    }

    #[test]
    fn negative_sampling_caps_the_negative_sets_deterministically() {
        let row: &[(usize, u32)] = &[(1, 1)];
        let conn = conn_from(&[row; 40]);
        let mut r1 = rng::stream(7, "negs");
        let a1 = select_pos_neg(&conn, 1, 10, &mut r1).unwrap();
        let mut r2 = rng::stream(7, "negs");
        let a2 = select_pos_neg(&conn, 1, 10, &mut r2).unwrap();
        assert_eq!(a1, a2);
        for i in 0..40 {
            assert_eq!(a1.neg[i].len(), 10);
            assert!(a1.neg[i].iter().all(|&j| j != i && !a1.pos[i].contains(&j)));
        }
        // A different stream draws a different subset somewhere.
        let mut r3 = rng::stream(8, "negs");
        let a3 = select_pos_neg(&conn, 1, 10, &mut r3).unwrap();
        assert_ne!(a1.neg, a3.neg);
    }

    #[test]
    fn threshold_below_one_is_rejected() {
        let conn = conn_from(&[&[]]);
        let mut r = rng::stream(0, "negs");
        assert!(matches!(
            select_pos_neg(&conn, 0, 0, &mut r),
            Err(ContrastiveError::ThresholdTooSmall(0))
        ));
    }

    #[test]
    fn annihilating_projection_maps_everything_to_zero() {
        let mut store = ParamStore::new();
        let mut r = rng::stream(1, "init");
        let proj = ProjectionParams::register(&mut store, 4, &mut r);
        store.get_mut(proj.w2).value.iter_mut().for_each(|v| *v = 0.0);
        let tape = Tape::new();
        let mut binding = Binding::new(&tape);
        let mut used = BTreeSet::new();
        let z = tape.constant(3, 4, (0..12).map(|i| i as f64).collect());
        let out = proj.project(&store, &mut binding, &z, &mut used);
        assert_eq!(out.value(), vec![0.0; 12]);
    }

    #[test]
    fn identical_rows_project_identically() {
        let mut store = ParamStore::new();
        let mut r = rng::stream(2, "init");
        let proj = ProjectionParams::register(&mut store, 4, &mut r);
        let tape = Tape::new();
        let mut binding = Binding::new(&tape);
        let mut used = BTreeSet::new();
        let row = vec![0.3, -1.2, 0.8, 2.0];
        let z = tape.constant(2, 4, row.repeat(2));
        let out = proj.project(&store, &mut binding, &z, &mut used).value();
        assert_eq!(out[..4], out[4..]);
    }

    #[test]
    fn projection_matches_a_straight_line_recomputation() {
        let d = 3;
        let mut store = ParamStore::new();
        let mut r = rng::stream(3, "init");
        let proj = ProjectionParams::register(&mut store, d, &mut r);
        let tape = Tape::new();
        let mut binding = Binding::new(&tape);
        let mut used = BTreeSet::new();
        let z_data = vec![0.5, -0.25, 1.5, -2.0, 0.0, 0.75];
        let z = tape.constant(2, d, z_data.clone());
        let got = proj.project(&store, &mut binding, &z, &mut used).value();
        let w1 = &store.get(proj.w1).value;
        let b1 = &store.get(proj.b1).value;
        let w2 = &store.get(proj.w2).value;
        let b2 = &store.get(proj.b2).value;
        for row in 0..2 {
            let x = &z_data[row * d..(row + 1) * d];
            let mut hidden = vec![0.0; d];
            for j in 0..d {
                let mut s = b1[j];
                for (i, xi) in x.iter().enumerate() {
                    s += xi * w1[i * d + j];
                }
                hidden[j] = if s > 0.0 { s } else { 0.2 * s };
            }
            for j in 0..d {
                let mut s = b2[j];
                for (i, hi) in hidden.iter().enumerate() {
                    s += hi * w2[i * d + j];
                }
                assert!((got[row * d + j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn both_views_share_the_projection_nodes() {
        let mut store = ParamStore::new();
        let mut r = rng::stream(5, "init");
        let proj = ProjectionParams::register(&mut store, 2, &mut r);
        let tape = Tape::new();
        let mut binding = Binding::new(&tape);
        let mut used = BTreeSet::new();
        let za = tape.constant(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let zb = tape.constant(2, 2, vec![0.5, 0.5, 0.25, 0.75]);
        let _ = proj.project(&store, &mut binding, &za, &mut used);
        let _ = proj.project(&store, &mut binding, &zb, &mut used);
        // One tape node per parameter, not one per use.
        assert_eq!(binding.bound_ids().len(), 4);
    }

    #[test]
    fn equal_similarities_give_log_n_over_p() {
        // All projections identical → every cosine is 1 → L_i = log(n/p).
        let n = 6;
        let tape = Tape::new();
        let row = vec![0.3, -0.7, 0.2];
        let a = tape.constant(n, 3, row.repeat(n));
        let c = tape.constant(n, 3, row.repeat(n));
        let pos: Vec<Vec<usize>> = (0..n).map(|i| vec![(i + 1) % n, (i + 2) % n]).collect();
        let neg: Vec<Vec<usize>> = (0..n)
            .map(|i| (0..n).filter(|&j| j != i && !pos[i].contains(&j)).collect())
            .collect();
        let assign = PosNegAssignment { t_pos: 2, pos, neg };
        let loss = info_nce(&tape, &a, &c, &assign, 0.5);
        let want = ((n as f64 - 1.0) / 2.0).ln();
        for &l in &loss.per_node.value() {
            assert!((l - want).abs() < 1e-10, "L_i = {l}, want {want}");
        }
        assert!((loss.j.item() - want).abs() < 1e-10);
    }

    #[test]
    fn empty_negative_sets_give_exactly_zero_loss() {
        let n = 4;
        let tape = Tape::new();
        let mut r = rng::stream(6, "data");
        let a = tape.constant(n, 3, (0..n * 3).map(|_| r.gen_range(-1.0..1.0)).collect());
        let c = tape.constant(n, 3, (0..n * 3).map(|_| r.gen_range(-1.0..1.0)).collect());
        let assign = PosNegAssignment {
            t_pos: n,
            pos: (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect(),
            neg: vec![Vec::new(); n],
        };
        let loss = info_nce(&tape, &a, &c, &assign, 0.5);
        assert_eq!(loss.per_node.value(), vec![0.0; n]);
        assert_eq!(loss.j.item(), 0.0);
    }

    #[test]
    fn three_node_fixture_matches_a_hand_computed_loss() {
        // Anchors/candidates are unit vectors in the plane at known angles;
        // padding a zero third column leaves the cosines untouched.
        let deg = |d: f64| d.to_radians();
        let unit = |t: f64| vec![t.cos(), t.sin(), 0.0];
        let tape = Tape::new();
        let a_rows = [deg(0.0), deg(90.0), deg(45.0)];
        let c_rows = [deg(30.0), deg(120.0), deg(225.0)];
        let a = tape.constant(3, 3, a_rows.iter().flat_map(|&t| unit(t)).collect());
        let c = tape.constant(3, 3, c_rows.iter().flat_map(|&t| unit(t)).collect());
        let assign = PosNegAssignment {
            t_pos: 1,
            pos: vec![vec![0], vec![1], vec![2]],
            neg: vec![vec![1, 2], vec![0, 2], vec![0, 1]],
        };
        let tau = 0.5;
        let loss = info_nce(&tape, &a, &c, &assign, tau);
        // Oracle: plain scalar arithmetic over the same angles.
        let mut want_sum = 0.0;
        for i in 0..3 {
            let num: f64 = (a_rows[i] - c_rows[i]).cos().exp_tau(tau);
            let den: f64 = (0..3)
                .map(|k| (a_rows[i] - c_rows[k]).cos().exp_tau(tau))
                .sum();
            let li = -(num / den).ln();
            let got = loss.per_node.value()[i];
            assert!((got - li).abs() < 1e-10, "node {i}: {got} vs {li}");
            want_sum += li;
        }
        assert!((loss.j.item() - want_sum / 3.0).abs() < 1e-10);
    }

    trait ExpTau {
        fn exp_tau(self, tau: f64) -> f64;
    }
    impl ExpTau for f64 {
        fn exp_tau(self, tau: f64) -> f64 {
            (self / tau).exp()
        }
    }

    #[test]
    fn losses_are_nonnegative_on_random_data() {
        let n = 20;
        let tape = Tape::new();
        let mut r = rng::stream(9, "data");
        let a = tape.constant(n, 5, (0..n * 5).map(|_| r.gen_range(-2.0..2.0)).collect());
        let c = tape.constant(n, 5, (0..n * 5).map(|_| r.gen_range(-2.0..2.0)).collect());
        let mut conn = vec![BTreeMap::new(); n];
        for i in 0..n {
            for j in 0..n {
                if i != j && r.gen::<f64>() < 0.3 {
                    conn[i].insert(j, 1u32);
                }
            }
        }
        let mut nr = rng::stream(9, "negs");
        let assign = select_pos_neg(&conn, 3, 0, &mut nr).unwrap();
        let loss = info_nce(&tape, &a, &c, &assign, 0.5);
        for &l in &loss.per_node.value() {
            assert!(l >= 0.0, "negative InfoNCE term {l}");
        }
        assert!(loss.j.item() >= 0.0);
    }

    #[test]
    fn loss_is_invariant_under_positive_rescaling() {
        // Cosine similarity ignores row scale, so scaling every row of
        // either side by positive constants leaves J unchanged.
        let n = 8;
        let tape = Tape::new();
        let mut r = rng::stream(10, "data");
        let data: Vec<f64> = (0..n * 4).map(|_| r.gen_range(-1.0..1.0)).collect();
        let cand: Vec<f64> = (0..n * 4).map(|_| r.gen_range(-1.0..1.0)).collect();
        let assign = PosNegAssignment {
            t_pos: 1,
            pos: (0..n).map(|i| vec![(i + 1) % n]).collect(),
            neg: (0..n)
                .map(|i| (0..n).filter(|&j| j != i && j != (i + 1) % n).collect())
                .collect(),
        };
        let a = tape.constant(n, 4, data.clone());
        let c = tape.constant(n, 4, cand.clone());
        let j1 = info_nce(&tape, &a, &c, &assign, 0.5).j.item();
        let scaled: Vec<f64> = data.iter().map(|v| v * 37.5).collect();
        let a2 = tape.constant(n, 4, scaled);
        let c2 = tape.constant(n, 4, cand);
        let j2 = info_nce(&tape, &a2, &c2, &assign, 0.5).j.item();
        assert!((j1 - j2).abs() < 1e-12, "{j1} vs {j2}");
    }

    #[test]
    fn gradients_flow_to_both_sides_and_the_head() {
        let n = 5;
        let d = 4;
        let mut store = ParamStore::new();
        let mut r = rng::stream(11, "init");
        let proj = ProjectionParams::register(&mut store, d, &mut r);
        let za_id = store.add("za", n, d, Init::Glorot, &mut r);
        let zc_id = store.add("zc", n, d, Init::Glorot, &mut r);
        let tape = Tape::new();
        let mut binding = Binding::new(&tape);
        let mut used = BTreeSet::new();
        let za = binding.bind(&store, za_id);
        let zc = binding.bind(&store, zc_id);
        let pa = proj.project(&store, &mut binding, &za, &mut used);
        let pc = proj.project(&store, &mut binding, &zc, &mut used);
        let assign = PosNegAssignment {
            t_pos: 1,
            pos: (0..n).map(|i| vec![(i + 1) % n]).collect(),
            neg: (0..n)
                .map(|i| (0..n).filter(|&j| j != i && j != (i + 1) % n).collect())
                .collect(),
        };
        let loss = info_nce(&tape, &pa, &pc, &assign, 0.5);
        loss.j.backward().unwrap();
        binding.collect_grads(&mut store);
        for id in [proj.w1, proj.w2, za_id, zc_id] {
            assert!(
                store.get(id).grad.iter().any(|&v| v != 0.0),
                "dead gradient on {}",
                store.get(id).name
            );
        }
    }
}
