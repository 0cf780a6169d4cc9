//! The unified attention encoder applied to both views of the network.
//!
//! One set of weights encodes two different graphs:
//!
//! * the **schema view** — every node of the original network, messages
//!   along all (symmetrised) typed edges, with a relation one-hot as the
//!   per-edge payload;
//! * the **meta-path view** — target nodes only, messages along the
//!   integrated sub-graph's edges, with the γ-scaled membership bits
//!   `ê_uv = γ ⊙ e_uv` as the payload and optional soft edge weights from
//!   the augmenter.
//!
//! The *only* parameters not shared between the two passes are the two
//! relation-transform matrices `W_r` (their payload dimensions differ:
//! number of relations vs. number of meta-paths). Everything else — the
//! type-specific input MLPs, the per-layer attention weights, the residual
//! transforms — is one registry entry bound once per tape, so sharing is a
//! matter of node identity rather than of copying values around.
//!
//! A layer computes, for each directed message edge `j → i`,
//!
//! ```text
//! s_ij = LeakyReLU(aᵀ [W h_i ‖ W h_j ‖ W_r r̂_ij])
//! α_ij = softmax over i's in-edges of (s_ij + log p_ij)
//! α_ij ← (1 − β) α_ij + β α_ij^{prev}        (from the second layer on)
//! h_i' = ELU(Σ_j α_ij W h_j + W_res h_i)
//! ```
//!
//! Adding `log p` before the softmax multiplies the exponentiated score by
//! `p`, which keeps each attention row a proper distribution while letting
//! the augmenter's soft samples modulate messages differentiably. Nodes
//! with no in-edges keep only the `W_res` path.

use std::collections::BTreeSet;

use rand::Rng;

use crate::autodiff::params::{Binding, Init, ParamId, ParamStore};
use crate::autodiff::{Tape, Tensor};
use crate::hin::{relation_one_hot, FeatureMatrix, Hin, TypeId};
use crate::metapath::IntegratedSubGraph;

/// Hyper-parameters of the encoder architecture.
#[derive(Debug, Clone)]
pub struct EncoderConfig {
    /// Embedding width `d`; the hidden layer of each type MLP has the same
    /// width.
    pub dim: usize,
    /// Number of attention layers `L`.
    pub layers: usize,
    /// Attention heads per layer; head outputs are averaged.
    pub heads: usize,
    /// Edge-residual mixing weight `β ∈ [0, 1]`.
    pub beta: f64,
    /// Negative slope of the LeakyReLU scoring nonlinearity.
    pub leaky_slope: f64,
}

impl Default for EncoderConfig {
    fn default() -> EncoderConfig {
        EncoderConfig {
            dim: 64,
            layers: 2,
            heads: 1,
            beta: 0.05,
            leaky_slope: 0.2,
        }
    }
}

/// One type-specific input MLP: `h⁰ = W₂ · ELU(W₁ x + b₁) + b₂`.
#[derive(Debug, Clone, Copy)]
pub struct TypeMlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// One attention head's score parameters.
#[derive(Debug, Clone, Copy)]
pub struct HeadParams {
    /// `W`: `d×d` message transform.
    pub w: ParamId,
    /// `a`: `3d×1` scoring vector over `[Wh_i ‖ Wh_j ‖ W_r r̂]`.
    pub a: ParamId,
}

/// One layer: its heads plus the shared node-residual transform.
#[derive(Debug, Clone)]
pub struct LayerParams {
    pub heads: Vec<HeadParams>,
    /// `W_res`: `d×d`, shared by all heads of the layer.
    pub w_res: ParamId,
}

/// Registry ids of every encoder parameter.
///
/// The pair (`wr_schema`, `wr_metapath`) is deliberately the only
/// view-specific entry; [`EncoderParams::audit_sharing`] states that
/// contract as data so tests can assert it against the registry.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub cfg: EncoderConfig,
    /// Indexed by [`TypeId`].
    pub type_mlps: Vec<TypeMlp>,
    pub layers: Vec<LayerParams>,
    /// Relation transform of the schema view: `|ℛ| × d`.
    pub wr_schema: ParamId,
    /// Relation transform of the meta-path view: `|P| × d`.
    pub wr_metapath: ParamId,
    /// Meta-path importance vector `γ`: `1 × |P|`, all-ones at start.
    pub gamma: ParamId,
}

impl EncoderParams {
    /// Registers all encoder parameters for `hin` with `n_metapaths`
    /// membership bits per integrated edge.
    pub fn register(
        store: &mut ParamStore,
        hin: &Hin,
        n_metapaths: usize,
        cfg: EncoderConfig,
        rng: &mut impl Rng,
    ) -> EncoderParams {
        assert!((0.0..=1.0).contains(&cfg.beta), "beta must lie in [0, 1]");
        assert!(cfg.layers >= 1, "need at least one attention layer");
        assert!(cfg.heads >= 1, "need at least one attention head");
        let d = cfg.dim;
        let type_mlps = (0..hin.n_types())
            .map(|t| {
                let ty = TypeId(t);
                let name = hin.type_name(ty);
                let f = hin.feature_dim(ty);
                TypeMlp {
                    w1: store.add(&format!("enc/type/{name}/w1"), f, d, Init::Glorot, rng),
                    b1: store.add(&format!("enc/type/{name}/b1"), 1, d, Init::Zeros, rng),
                    w2: store.add(&format!("enc/type/{name}/w2"), d, d, Init::Glorot, rng),
                    b2: store.add(&format!("enc/type/{name}/b2"), 1, d, Init::Zeros, rng),
                }
            })
            .collect();
        let layers = (0..cfg.layers)
            .map(|l| LayerParams {
                heads: (0..cfg.heads)
                    .map(|h| HeadParams {
                        w: store.add(&format!("enc/l{l}/h{h}/w"), d, d, Init::Glorot, rng),
                        a: store.add(&format!("enc/l{l}/h{h}/a"), 3 * d, 1, Init::Glorot, rng),
                    })
                    .collect(),
                w_res: store.add(&format!("enc/l{l}/w_res"), d, d, Init::Glorot, rng),
            })
            .collect();
        let wr_schema = store.add("enc/wr_schema", hin.n_relations(), d, Init::Glorot, rng);
        let wr_metapath = store.add("enc/wr_metapath", n_metapaths, d, Init::Glorot, rng);
        let gamma = store.add("gamma", 1, n_metapaths, Init::Ones, rng);
        EncoderParams {
            cfg,
            type_mlps,
            layers,
            wr_schema,
            wr_metapath,
            gamma,
        }
    }

    /// Every id registered by the encoder, in registry order.
    pub fn all_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for m in &self.type_mlps {
            ids.extend([m.w1, m.b1, m.w2, m.b2]);
        }
        for l in &self.layers {
            for h in &l.heads {
                ids.extend([h.w, h.a]);
            }
            ids.push(l.w_res);
        }
        ids.extend([self.wr_schema, self.wr_metapath, self.gamma]);
        ids
    }

    /// The sharing contract as data: `(shared, schema-only, metapath-only)`.
    ///
    /// Exactly one parameter tensor is view-specific — the relation
    /// transform `W_r` — so the second and third sets are singletons.
    /// γ is listed as shared: the schema pass simply never reads it, which
    /// is what keeps it frozen there.
    pub fn audit_sharing(&self) -> (BTreeSet<ParamId>, BTreeSet<ParamId>, BTreeSet<ParamId>) {
        let schema_only = BTreeSet::from([self.wr_schema]);
        let metapath_only = BTreeSet::from([self.wr_metapath]);
        let shared = self
            .all_ids()
            .into_iter()
            .filter(|id| !schema_only.contains(id) && !metapath_only.contains(id))
            .collect();
        (shared, schema_only, metapath_only)
    }
}

/// Which payload and parameter set a view uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewKind {
    Schema,
    Metapath,
}

/// A graph prepared for the encoder: directed message edges sorted by
/// destination (so attention segments are contiguous) plus a per-edge
/// payload row.
#[derive(Debug, Clone)]
pub struct ViewGraph {
    pub kind: ViewKind,
    /// Number of nodes in the view's local indexing.
    pub n: usize,
    /// Destination (receiving) node per directed edge; non-decreasing.
    pub dst: Vec<usize>,
    /// Source (sending) node per directed edge.
    pub src: Vec<usize>,
    /// Row-major `E × payload_dim` relation payload.
    pub payload: Vec<f64>,
    pub payload_dim: usize,
    /// For meta-path views: the undirected integrated-edge index each
    /// directed edge came from (used to pull soft weights). Empty for the
    /// schema view.
    pub origin: Vec<usize>,
}

impl ViewGraph {
    /// The schema view: all nodes, every stored edge symmetrised, payload =
    /// relation one-hot. Parallel edges under different relations stay
    /// distinct message edges.
    pub fn schema(hin: &Hin) -> ViewGraph {
        let nr = hin.n_relations();
        let mut set = BTreeSet::new();
        for e in hin.edges() {
            set.insert((e.dst, e.src, e.rel));
            set.insert((e.src, e.dst, e.rel));
        }
        let mut dst = Vec::with_capacity(set.len());
        let mut src = Vec::with_capacity(set.len());
        let mut payload = Vec::with_capacity(set.len() * nr);
        for (d, s, r) in set {
            dst.push(d);
            src.push(s);
            payload.extend(relation_one_hot(r, nr));
        }
        ViewGraph {
            kind: ViewKind::Schema,
            n: hin.n_nodes(),
            dst,
            src,
            payload,
            payload_dim: nr,
            origin: Vec::new(),
        }
    }

    /// The meta-path view over an integrated sub-graph: target nodes only,
    /// each undirected edge unfolded into two directed message edges that
    /// share its membership bits and its augmenter weight.
    pub fn metapath(g: &IntegratedSubGraph) -> ViewGraph {
        let pd = g.n_metapaths();
        let mut directed: Vec<(usize, usize, usize)> = Vec::with_capacity(2 * g.edges.len());
        for (k, &(u, v)) in g.edges.iter().enumerate() {
            directed.push((u, v, k));
            directed.push((v, u, k));
        }
        directed.sort_unstable();
        let mut dst = Vec::with_capacity(directed.len());
        let mut src = Vec::with_capacity(directed.len());
        let mut origin = Vec::with_capacity(directed.len());
        let mut payload = Vec::with_capacity(directed.len() * pd);
        for (d, s, k) in directed {
            dst.push(d);
            src.push(s);
            origin.push(k);
            payload.extend(g.encoding(k));
        }
        ViewGraph {
            kind: ViewKind::Metapath,
            n: g.n,
            dst,
            src,
            payload,
            payload_dim: pd,
            origin,
        }
    }

    pub fn n_edges(&self) -> usize {
        self.dst.len()
    }
}

/// Binds a parameter and records it in the pass's audit set.
fn bind(
    binding: &mut Binding,
    store: &ParamStore,
    id: ParamId,
    used: &mut BTreeSet<ParamId>,
) -> Tensor {
    used.insert(id);
    binding.bind(store, id)
}

/// Projects one type's features through its MLP: `W₂·ELU(W₁x + b₁) + b₂`.
///
/// When the features are a one-hot identity (`FeatureMatrix::is_identity`),
/// `x·W₁` is just `W₁`, so the first matmul is elided and `W₁` acts as an
/// embedding table.
pub fn project_type(
    store: &ParamStore,
    binding: &mut Binding,
    tape: &Tape,
    mlp: &TypeMlp,
    feats: &FeatureMatrix,
    used: &mut BTreeSet<ParamId>,
) -> Tensor {
    let w1 = bind(binding, store, mlp.w1, used);
    let b1 = bind(binding, store, mlp.b1, used);
    let w2 = bind(binding, store, mlp.w2, used);
    let b2 = bind(binding, store, mlp.b2, used);
    let hidden = if feats.is_identity() {
        assert_eq!(feats.rows, w1.rows(), "one-hot width must match W₁");
        w1
    } else {
        let x = tape.constant(feats.rows, feats.cols, feats.data.clone());
        x.matmul(&w1)
    };
    hidden.add_row(&b1).elu().matmul(&w2).add_row(&b2)
}

/// Everything an encoder pass produces.
pub struct EncodeOutput {
    /// Final embeddings for the view's target rows (`t × d`).
    pub z: Tensor,
    /// Per-layer, per-head attention weights (after edge-residual mixing),
    /// aligned with the view's directed edges.
    pub alphas: Vec<Vec<Tensor>>,
    /// Parameter ids this pass bound.
    pub used: BTreeSet<ParamId>,
}

/// Per-call options for an encoder pass.
pub struct EncodeOptions {
    /// Feature dropout rate, applied to `H⁰` only.
    pub dropout: f64,
    /// Train mode enables dropout; eval mode is deterministic.
    pub train: bool,
}

impl EncoderParams {
    /// Runs the schema-view pass: projects every type, aggregates over all
    /// symmetrised typed edges, returns the target block's rows.
    #[allow(clippy::too_many_arguments)]
    pub fn encode_schema(
        &self,
        store: &ParamStore,
        binding: &mut Binding,
        tape: &Tape,
        hin: &Hin,
        view: &ViewGraph,
        opts: &EncodeOptions,
        rng: &mut impl Rng,
    ) -> EncodeOutput {
        assert_eq!(view.kind, ViewKind::Schema);
        assert_eq!(view.payload_dim, hin.n_relations());
        let mut used = BTreeSet::new();
        let blocks: Vec<Tensor> = (0..hin.n_types())
            .map(|t| {
                let feats = hin.effective_features(TypeId(t));
                project_type(store, binding, tape, &self.type_mlps[t], &feats, &mut used)
            })
            .collect();
        let refs: Vec<&Tensor> = blocks.iter().collect();
        let h0 = Tensor::concat_rows(&refs);
        let wr = bind(binding, store, self.wr_schema, &mut used);
        let payload = tape.constant(view.n_edges(), view.payload_dim, view.payload.clone());
        let rel_term = payload.matmul(&wr);
        let (h, alphas) = self.run_layers(store, binding, view, h0, rel_term, None, opts, rng, &mut used);
        let range = hin.target_range();
        let idx: Vec<usize> = range.collect();
        EncodeOutput {
            z: h.gather_rows(&idx),
            alphas,
            used,
        }
    }

    /// Runs the meta-path-view pass over the integrated sub-graph.
    ///
    /// `feats` are the target type's features; `p` are the augmenter's soft
    /// weights per *undirected* integrated edge (absent means all-ones).
    /// γ is bound here — the schema pass never touches it.
    #[allow(clippy::too_many_arguments)]
    pub fn encode_metapath(
        &self,
        store: &ParamStore,
        binding: &mut Binding,
        tape: &Tape,
        target_type: TypeId,
        feats: &FeatureMatrix,
        view: &ViewGraph,
        p: Option<&Tensor>,
        opts: &EncodeOptions,
        rng: &mut impl Rng,
    ) -> EncodeOutput {
        assert_eq!(view.kind, ViewKind::Metapath);
        let mut used = BTreeSet::new();
        let h0 = project_type(
            store,
            binding,
            tape,
            &self.type_mlps[target_type.0],
            feats,
            &mut used,
        );
        assert_eq!(h0.rows(), view.n, "feature rows must cover the view's nodes");
        let gamma = bind(binding, store, self.gamma, &mut used);
        let wr = bind(binding, store, self.wr_metapath, &mut used);
        let payload = tape.constant(view.n_edges(), view.payload_dim, view.payload.clone());
        // ê_uv = γ ⊙ e_uv, then through the relation transform.
        let rel_term = payload.scale_cols(&gamma).matmul(&wr);
        let p_log = p.map(|p| {
            assert_eq!(p.cols(), 1, "soft weights must be a column");
            p.gather_rows(&view.origin).log()
        });
        let (h, alphas) =
            self.run_layers(store, binding, view, h0, rel_term, p_log, opts, rng, &mut used);
        EncodeOutput {
            z: h,
            alphas,
            used,
        }
    }

    /// The shared layer stack.
    #[allow(clippy::too_many_arguments)]
    fn run_layers(
        &self,
        store: &ParamStore,
        binding: &mut Binding,
        view: &ViewGraph,
        h0: Tensor,
        rel_term: Tensor,
        p_log: Option<Tensor>,
        opts: &EncodeOptions,
        rng: &mut impl Rng,
        used: &mut BTreeSet<ParamId>,
    ) -> (Tensor, Vec<Vec<Tensor>>) {
        let beta = self.cfg.beta;
        let mut h = h0.dropout(opts.dropout, rng, opts.train);
        let mut all_alphas: Vec<Vec<Tensor>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let prev = all_alphas.last().cloned();
            let w_res = bind(binding, store, layer.w_res, used);
            let mut aggs: Vec<Tensor> = Vec::with_capacity(layer.heads.len());
            let mut alphas: Vec<Tensor> = Vec::with_capacity(layer.heads.len());
            for (hd, head) in layer.heads.iter().enumerate() {
                let w = bind(binding, store, head.w, used);
                let a = bind(binding, store, head.a, used);
                let wh = h.matmul(&w);
                let wh_dst = wh.gather_rows(&view.dst);
                let wh_src = wh.gather_rows(&view.src);
                let scores = Tensor::concat_cols(&[&wh_dst, &wh_src, &rel_term])
                    .matmul(&a)
                    .leaky_relu(self.cfg.leaky_slope);
                let scores = match &p_log {
                    Some(pl) => scores.add(pl),
                    None => scores,
                };
                let mut alpha = scores.segment_softmax(&view.dst);
                if let Some(prev) = &prev {
                    alpha = alpha.scale(1.0 - beta).add(&prev[hd].scale(beta));
                }
                aggs.push(wh_src.scale_rows(&alpha).scatter_sum(&view.dst, view.n));
                alphas.push(alpha);
            }
            let mut agg = aggs[0].clone();
            for a in &aggs[1..] {
                agg = agg.add(a);
            }
            if aggs.len() > 1 {
                agg = agg.scale(1.0 / aggs.len() as f64);
            }
            h = agg.add(&h.matmul(&w_res)).elu();
            all_alphas.push(alphas);
        }
        (h, all_alphas)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hin::Label;
    use crate::metapath::{
        enumerate_combinations, integrate, materialize, parse_metapath_args, MaterializeOptions,
    };
    use crate::rng;

    fn toy() -> Hin {
        Hin::load(std::path::Path::new(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/fixtures/toy_acm.json"
        )))
        .unwrap()
    }

    fn toy_integrated(hin: &Hin) -> IntegratedSubGraph {
        let mps = parse_metapath_args(&["PAP,PSP".into()], hin).unwrap();
        let opts = MaterializeOptions::default();
        let subs: Vec<_> = mps
            .iter()
            .map(|mp| materialize(hin, mp, &opts).unwrap())
            .collect();
        integrate(&subs).unwrap()
    }

    fn default_encoder(hin: &Hin, n_mp: usize, dim: usize) -> (ParamStore, EncoderParams) {
        let mut store = ParamStore::new();
        let mut r = rng::stream(7, "init");
        let cfg = EncoderConfig {
            dim,
            ..EncoderConfig::default()
        };
        let params = EncoderParams::register(&mut store, hin, n_mp, cfg, &mut r);
        (store, params)
    }

    fn eval_opts() -> EncodeOptions {
        EncodeOptions {
            dropout: 0.0,
            train: false,
        }
    }

    /// Straight-line recomputation of one metapath-view pass, sharing only
    /// the parameter *values* with the tape implementation.
    fn oracle_metapath_forward(
        store: &ParamStore,
        params: &EncoderParams,
        target: TypeId,
        feats: &FeatureMatrix,
        view: &ViewGraph,
    ) -> Vec<f64> {
        let d = params.cfg.dim;
        let val = |id: ParamId| store.get(id).value.clone();
        let elu = |v: f64| if v > 0.0 { v } else { v.exp() - 1.0 };
        let mlp = &params.type_mlps[target.0];
        // H0 rows.
        let (w1, b1, w2, b2) = (val(mlp.w1), val(mlp.b1), val(mlp.w2), val(mlp.b2));
        let f = feats.cols;
        let n = feats.rows;
        let mut h: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let x = &feats.data[i * f..(i + 1) * f];
                let mut hid = vec![0.0; d];
                for (j, h) in hid.iter_mut().enumerate() {
                    let mut s = b1[j];
                    for (k, xv) in x.iter().enumerate() {
                        s += xv * w1[k * d + j];
                    }
                    *h = elu(s);
                }
                let mut out = vec![0.0; d];
                for (j, o) in out.iter_mut().enumerate() {
                    let mut s = b2[j];
                    for (k, hv) in hid.iter().enumerate() {
                        s += hv * w2[k * d + j];
                    }
                    *o = s;
                }
                out
            })
            .collect();
        let gamma = val(params.gamma);
        let wr = val(params.wr_metapath);
        let pd = view.payload_dim;
        // Per-edge relation term: (γ ⊙ e) · W_r.
        let rel: Vec<Vec<f64>> = (0..view.n_edges())
            .map(|e| {
                let bits = &view.payload[e * pd..(e + 1) * pd];
                let mut out = vec![0.0; d];
                for (j, o) in out.iter_mut().enumerate() {
                    for k in 0..pd {
                        *o += bits[k] * gamma[k] * wr[k * d + j];
                    }
                }
                out
            })
            .collect();
        let mut prev_alpha: Option<Vec<f64>> = None;
        for layer in &params.layers {
            let head = &layer.heads[0];
            let (w, a, w_res) = (val(head.w), val(head.a), val(layer.w_res));
            let wh: Vec<Vec<f64>> = h
                .iter()
                .map(|row| {
                    let mut out = vec![0.0; d];
                    for (j, o) in out.iter_mut().enumerate() {
                        for (k, rv) in row.iter().enumerate() {
                            *o += rv * w[k * d + j];
                        }
                    }
                    out
                })
                .collect();
            let mut scores = vec![0.0; view.n_edges()];
            for e in 0..view.n_edges() {
                let mut s = 0.0;
                for j in 0..d {
                    s += a[j] * wh[view.dst[e]][j];
                    s += a[d + j] * wh[view.src[e]][j];
                    s += a[2 * d + j] * rel[e][j];
                }
                scores[e] = if s > 0.0 { s } else { 0.2 * s };
            }
            // Segment softmax over destination runs.
            let mut alpha = vec![0.0; view.n_edges()];
            let mut start = 0;
            while start < view.n_edges() {
                let mut end = start + 1;
                while end < view.n_edges() && view.dst[end] == view.dst[start] {
                    end += 1;
                }
                let m = scores[start..end]
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for e in start..end {
                    alpha[e] = (scores[e] - m).exp();
                    z += alpha[e];
                }
                for e in start..end {
                    alpha[e] /= z;
                }
                start = end;
            }
            if let Some(prev) = &prev_alpha {
                for e in 0..alpha.len() {
                    alpha[e] = (1.0 - params.cfg.beta) * alpha[e] + params.cfg.beta * prev[e];
                }
            }
            let mut next: Vec<Vec<f64>> = (0..view.n)
                .map(|i| {
                    let mut out = vec![0.0; d];
                    for (j, o) in out.iter_mut().enumerate() {
                        for (k, hv) in h[i].iter().enumerate() {
                            *o += hv * w_res[k * d + j];
                        }
                    }
                    out
                })
                .collect();
            for e in 0..view.n_edges() {
                for j in 0..d {
                    next[view.dst[e]][j] += alpha[e] * wh[view.src[e]][j];
                }
            }
            for row in &mut next {
                for v in row.iter_mut() {
                    *v = elu(*v);
                }
            }
            h = next;
            prev_alpha = Some(alpha);
        }
        h.into_iter().flatten().collect()
    }

    #[test]
    fn identity_mlp_on_nonnegative_features_is_the_identity() {
        let hin = toy();
        let (mut store, params) = default_encoder(&hin, 2, 3);
        // Make the target type's MLP the identity map.
        let mlp = &params.type_mlps[hin.target_type().0];
        let eye = |s: &mut ParamStore, id: ParamId| {
            let p = s.get_mut(id);
            p.value.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..p.rows.min(p.cols) {
                p.value[i * p.cols + i] = 1.0;
            }
        };
        eye(&mut store, mlp.w1);
        eye(&mut store, mlp.w2);
        let feats = FeatureMatrix {
            rows: 3,
            cols: 3,
            data: vec![0.5, 0.0, 1.0, 0.0, 2.0, 0.25, 1.5, 0.5, 0.0],
        };
        let tape = Tape::new();
        let mut binding = Binding::new(&tape);
        let mut used = BTreeSet::new();
        let h0 = project_type(&store, &mut binding, &tape, mlp, &feats, &mut used);
        assert_eq!(h0.value(), feats.data);
    }

    #[test]
    fn different_types_project_the_same_features_differently() {
        // Two type MLPs with the same shape but independent random inits
        // must map the same input to different outputs.
        let mut store = ParamStore::new();
        let mut r = rng::stream(13, "init");
        let mk = |prefix: &str, store: &mut ParamStore, r: &mut rand_chacha::ChaCha8Rng| TypeMlp {
            w1: store.add(&format!("{prefix}/w1"), 3, 4, Init::Glorot, r),
            b1: store.add(&format!("{prefix}/b1"), 1, 4, Init::Zeros, r),
            w2: store.add(&format!("{prefix}/w2"), 4, 4, Init::Glorot, r),
            b2: store.add(&format!("{prefix}/b2"), 1, 4, Init::Zeros, r),
        };
        let ma = mk("a", &mut store, &mut r);
        let mb = mk("b", &mut store, &mut r);
        let feats = FeatureMatrix {
            rows: 1,
            cols: 3,
            data: vec![1.0, 2.0, 3.0],
        };
        let tape = Tape::new();
        let mut binding = Binding::new(&tape);
        let mut used = BTreeSet::new();
        let a = project_type(&store, &mut binding, &tape, &ma, &feats, &mut used);
        let b = project_type(&store, &mut binding, &tape, &mb, &feats, &mut used);
        assert_ne!(a.value(), b.value());
    }

    #[test]
    fn one_hot_projection_matches_straight_line_recomputation() {
        let hin = toy();
        let (store, params) = default_encoder(&hin, 2, 5);
        let t = hin.target_type();
        let feats = hin.effective_features(t);
        assert!(feats.is_identity());
        let tape = Tape::new();
        let mut binding = Binding::new(&tape);
        let mut used = BTreeSet::new();
        let h0 = project_type(&store, &mut binding, &tape, &params.type_mlps[t.0], &feats, &mut used);
        // Independent recomputation: h0[i] = W₂·ELU(W₁[i,:] + b₁) + b₂.
        let d = 5;
        let w1 = &store.get(params.type_mlps[t.0].w1).value;
        let b1 = &store.get(params.type_mlps[t.0].b1).value;
        let w2 = &store.get(params.type_mlps[t.0].w2).value;
        let b2 = &store.get(params.type_mlps[t.0].b2).value;
        let got = h0.value();
        for i in 0..feats.rows {
            for j in 0..d {
                let mut s = b2[j];
                for k in 0..d {
                    let pre = w1[i * d + k] + b1[k];
                    let hid = if pre > 0.0 { pre } else { pre.exp() - 1.0 };
                    s += hid * w2[k * d + j];
                }
                assert!((got[i * d + j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_scores_give_uniform_attention() {
        let hin = toy();
        let isg = toy_integrated(&hin);
        let view = ViewGraph::metapath(&isg);
        let (mut store, params) = default_encoder(&hin, isg.n_metapaths(), 4);
        // Zero scoring vectors → all raw scores 0 → uniform per segment.
        for l in &params.layers {
            for h in &l.heads {
                store.get_mut(h.a).value.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let tape = Tape::new();
        let mut binding = Binding::new(&tape);
        let mut r = rng::stream(0, "test");
        let feats = hin.effective_features(hin.target_type());
        let out = params.encode_metapath(
            &store,
            &mut binding,
            &tape,
            hin.target_type(),
            &feats,
            &view,
            None,
            &eval_opts(),
            &mut r,
        );
        let alpha = out.alphas[0][0].value();
        // toy integrated edges: (0,1), (0,2), (1,2) → in-degrees all 2.
        assert_eq!(alpha, vec![0.5; view.n_edges()]);
    }

    #[test]
    fn attention_rows_sum_to_one_before_and_after_edge_residual() {
        let hin = toy();
        let isg = toy_integrated(&hin);
        let view = ViewGraph::metapath(&isg);
        let (store, params) = default_encoder(&hin, isg.n_metapaths(), 6);
        let tape = Tape::new();
        let mut binding = Binding::new(&tape);
        let mut r = rng::stream(1, "test");
        let feats = hin.effective_features(hin.target_type());
        let out = params.encode_metapath(
            &store,
            &mut binding,
            &tape,
            hin.target_type(),
            &feats,
            &view,
            None,
            &eval_opts(),
            &mut r,
        );
        for alphas in &out.alphas {
            let a = alphas[0].value();
            let mut start = 0;
            while start < view.n_edges() {
                let mut end = start + 1;
                while end < view.n_edges() && view.dst[end] == view.dst[start] {
                    end += 1;
                }
                let sum: f64 = a[start..end].iter().sum();
                assert!((sum - 1.0).abs() < 1e-12, "segment sum {sum}");
                start = end;
            }
        }
    }

    #[test]
    fn beta_one_repeats_the_previous_layers_attention_exactly() {
        let hin = toy();
        let isg = toy_integrated(&hin);
        let view = ViewGraph::metapath(&isg);
        let mut store = ParamStore::new();
        let mut r = rng::stream(3, "init");
        let cfg = EncoderConfig {
            dim: 4,
            beta: 1.0,
            ..EncoderConfig::default()
        };
        let params = EncoderParams::register(&mut store, &hin, isg.n_metapaths(), cfg, &mut r);
        let tape = Tape::new();
        let mut binding = Binding::new(&tape);
        let mut rr = rng::stream(4, "test");
        let feats = hin.effective_features(hin.target_type());
        let out = params.encode_metapath(
            &store,
            &mut binding,
            &tape,
            hin.target_type(),
            &feats,
            &view,
            None,
            &eval_opts(),
            &mut rr,
        );
        assert_eq!(out.alphas[0][0].value(), out.alphas[1][0].value());
    }

    #[test]
    fn metapath_pass_matches_the_straight_line_oracle() {
        let hin = toy();
        let isg = toy_integrated(&hin);
        let view = ViewGraph::metapath(&isg);
        let (store, params) = default_encoder(&hin, isg.n_metapaths(), 4);
        let tape = Tape::new();
        let mut binding = Binding::new(&tape);
        let mut r = rng::stream(5, "test");
        let feats = hin.effective_features(hin.target_type());
        let out = params.encode_metapath(
            &store,
            &mut binding,
            &tape,
            hin.target_type(),
            &feats,
            &view,
            None,
            &eval_opts(),
            &mut r,
        );
        let got = out.z.value();
        let want = oracle_metapath_forward(&store, &params, hin.target_type(), &feats, &view);
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn isolated_node_keeps_only_the_residual_path() {
        let hin = toy();
        // An integrated graph whose single edge leaves p2 isolated.
        let isg = IntegratedSubGraph {
            n: 3,
            metapath_names: vec!["PAP".into()],
            edges: vec![(0, 1)],
            membership: vec![1],
        };
        let view = ViewGraph::metapath(&isg);
        let (store, params) = default_encoder(&hin, 1, 4);
        let tape = Tape::new();
        let mut binding = Binding::new(&tape);
        let mut r = rng::stream(6, "test");
        let feats = hin.effective_features(hin.target_type());
        let out = params.encode_metapath(
            &store,
            &mut binding,
            &tape,
            hin.target_type(),
            &feats,
            &view,
            None,
            &eval_opts(),
            &mut r,
        );
        // Recompute p2's pure-residual path by hand.
        let d = 4;
        let elu = |v: f64| if v > 0.0 { v } else { v.exp() - 1.0 };
        let mlp = &params.type_mlps[hin.target_type().0];
        let (w1, b1) = (&store.get(mlp.w1).value, &store.get(mlp.b1).value);
        let (w2, b2) = (&store.get(mlp.w2).value, &store.get(mlp.b2).value);
        let mut h: Vec<f64> = (0..d)
            .map(|j| {
                let mut s = b2[j];
                for k in 0..d {
                    s += elu(w1[2 * d + k] + b1[k]) * w2[k * d + j];
                }
                s
            })
            .collect();
        for layer in &params.layers {
            let w_res = &store.get(layer.w_res).value;
            let next: Vec<f64> = (0..d)
                .map(|j| {
                    let mut s = 0.0;
                    for k in 0..d {
                        s += h[k] * w_res[k * d + j];
                    }
                    elu(s)
                })
                .collect();
            h = next;
        }
        let z = out.z.value();
        for j in 0..d {
            assert!((z[2 * d + j] - h[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn node_permutation_permutes_the_output_rows() {
        let hin = toy();
        let perm = [2usize, 0, 1]; // new index of each old node
        let feats = FeatureMatrix {
            rows: 3,
            cols: 3,
            data: vec![0.3, -0.7, 1.1, 0.9, 0.2, -0.4, -1.3, 0.8, 0.5],
        };
        let mut permuted = vec![0.0; 9];
        for old in 0..3 {
            permuted[perm[old] * 3..perm[old] * 3 + 3]
                .copy_from_slice(&feats.data[old * 3..old * 3 + 3]);
        }
        let feats_p = FeatureMatrix {
            rows: 3,
            cols: 3,
            data: permuted,
        };
        let isg = IntegratedSubGraph {
            n: 3,
            metapath_names: vec!["A".into(), "B".into()],
            edges: vec![(0, 1), (1, 2)],
            membership: vec![1, 3],
        };
        let mut edges_p: Vec<(usize, usize)> = isg
            .edges
            .iter()
            .map(|&(u, v)| {
                let (a, b) = (perm[u], perm[v]);
                (a.min(b), a.max(b))
            })
            .collect();
        let mut paired: Vec<_> = edges_p.drain(..).zip(isg.membership.clone()).collect();
        paired.sort_unstable();
        let isg_p = IntegratedSubGraph {
            n: 3,
            metapath_names: isg.metapath_names.clone(),
            edges: paired.iter().map(|&(e, _)| e).collect(),
            membership: paired.iter().map(|&(_, m)| m).collect(),
        };
        let (store, params) = default_encoder(&hin, 2, 4);
        let encode = |feats: &FeatureMatrix, isg: &IntegratedSubGraph| {
            let view = ViewGraph::metapath(isg);
            let tape = Tape::new();
            let mut binding = Binding::new(&tape);
            let mut r = rng::stream(9, "test");
            params
                .encode_metapath(
                    &store,
                    &mut binding,
                    &tape,
                    hin.target_type(),
                    feats,
                    &view,
                    None,
                    &eval_opts(),
                    &mut r,
                )
                .z
                .value()
        };
        let z = encode(&feats, &isg);
        let z_p = encode(&feats_p, &isg_p);
        for old in 0..3 {
            for j in 0..4 {
                let a = z[old * 4 + j];
                let b = z_p[perm[old] * 4 + j];
                assert!((a - b).abs() < 1e-9, "row {old} col {j}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn gamma_only_enters_through_the_relation_block() {
        let hin = toy();
        let isg = toy_integrated(&hin);
        let view = ViewGraph::metapath(&isg);
        let (mut store, params) = default_encoder(&hin, isg.n_metapaths(), 4);
        // Zero the W_r block of every scoring vector: entries [2d, 3d).
        for l in &params.layers {
            for h in &l.heads {
                let a = store.get_mut(h.a);
                for v in &mut a.value[8..12] {
                    *v = 0.0;
                }
            }
        }
        let encode = |store: &ParamStore| {
            let tape = Tape::new();
            let mut binding = Binding::new(&tape);
            let mut r = rng::stream(11, "test");
            let feats = hin.effective_features(hin.target_type());
            params
                .encode_metapath(
                    store,
                    &mut binding,
                    &tape,
                    hin.target_type(),
                    &feats,
                    &view,
                    None,
                    &eval_opts(),
                    &mut r,
                )
                .z
                .value()
        };
        let ones = encode(&store);
        store.get_mut(params.gamma).value = vec![2.0; isg.n_metapaths()];
        let twos = encode(&store);
        assert_eq!(ones, twos);
    }

    #[test]
    fn schema_pass_covers_all_types_and_returns_target_rows() {
        let hin = toy();
        let view = ViewGraph::schema(&hin);
        let (store, params) = default_encoder(&hin, 2, 4);
        let tape = Tape::new();
        let mut binding = Binding::new(&tape);
        let mut r = rng::stream(12, "test");
        let out = params.encode_schema(
            &store,
            &mut binding,
            &tape,
            &hin,
            &view,
            &eval_opts(),
            &mut r,
        );
        assert_eq!(out.z.shape(), (3, 4));
        // The pass must bind every type MLP, all layer params, and the
        // schema relation transform — but never the meta-path pair.
        assert!(out.used.contains(&params.wr_schema));
        assert!(!out.used.contains(&params.wr_metapath));
        assert!(!out.used.contains(&params.gamma));
        for m in &params.type_mlps {
            assert!(out.used.contains(&m.w1));
        }
    }

    #[test]
    fn schema_view_symmetrises_and_sorts_message_edges() {
        let hin = toy();
        let view = ViewGraph::schema(&hin);
        // toy_acm: 6 declared PA/PS edges, symmetric → 12 stored → the
        // schema view re-symmetrises without duplicating.
        assert_eq!(view.n_edges(), 12);
        assert!(view.dst.windows(2).all(|w| w[0] <= w[1]));
        // Each edge's payload is a one-hot over the two relations.
        for e in 0..view.n_edges() {
            let row = &view.payload[e * 2..e * 2 + 2];
            assert_eq!(row.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn sharing_audit_isolates_the_relation_transforms() {
        let hin = toy();
        let (_, params) = default_encoder(&hin, 2, 4);
        let (shared, schema_only, metapath_only) = params.audit_sharing();
        assert_eq!(schema_only.len(), 1);
        assert_eq!(metapath_only.len(), 1);
        assert!(shared.contains(&params.gamma));
        assert_eq!(
            shared.len() + 2,
            params.all_ids().len(),
            "every parameter is accounted for"
        );
    }

    #[test]
    fn combinations_fixture_sanity() {
        // Keep the sensitivity-combination helper visible from here so the
        // encoder tests fail fast if the meta-path API drifts.
        assert_eq!(enumerate_combinations(4, 2).unwrap().len(), 11);
        let hin = toy();
        assert_eq!(hin.label(0), Some(&Label::Single(0)));
    }
}
