//! The adversarial two-step trainer.
//!
//! Each epoch runs the same forward computation twice, against two
//! disjoint parameter groups:
//!
//! * **Step 1 (θ)** — the augmenter is frozen; one Adam update of the
//!   encoder, γ, and the projection head minimises the contrastive loss
//!   `J`.
//! * **Step 2 (φ)** — the encoder, γ, and projection are frozen; one Adam
//!   update of the augmenter minimises `−J − λ·R(ω)`, i.e. it *maximises*
//!   the contrastive loss while the retention regularizer `R` keeps it
//!   from simply suppressing every edge.
//!
//! Freezing is structural: a frozen parameter binds to a non-gradient tape
//! leaf, so its gradient buffer is exactly zero — auditable, not merely
//! skipped by the optimizer.
//!
//! The random edge drop, Gumbel noise, and feature-dropout draws are taken
//! from per-epoch sub-streams of the root seed, so both steps of an epoch
//! see identical randomness and any epoch can be replayed in isolation.
//! Training ends at the epoch limit or when Step 1's loss has not improved
//! for `patience` epochs. The returned embeddings come from a deterministic
//! inference pass: no edge drop, no dropout, and a dedicated noise stream.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::autodiff::params::{Adam, Binding, ParamId, ParamStore};
use crate::autodiff::{AutodiffError, Tape, Tensor};
use crate::config::TrainConfig;
use crate::contrastive::{self, ContrastiveError, PosNegAssignment, ProjectionParams};
use crate::encoder::{EncodeOptions, EncoderConfig, EncoderParams, ViewGraph};
use crate::hin::Hin;
use crate::lma::{self, AugmentError, AugmenterConfig, AugmenterParams};
use crate::metapath::{
    connectivity, integrate, materialize, IntegratedSubGraph, MaterializeOptions, MetaPath,
    MetaPathError,
};
use crate::rng;

/// Improvements smaller than this do not reset the patience counter.
const MIN_DELTA: f64 = 1e-7;

/// Trainer failures.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    MetaPath(#[from] MetaPathError),
    #[error(transparent)]
    Contrastive(#[from] ContrastiveError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error("numeric failure during {stage}: {source}")]
    NonFinite {
        stage: &'static str,
        source: AutodiffError,
    },
    #[error("inference produced non-finite embeddings")]
    BadEmbeddings,
}

/// Plateau detector over a minimised metric.
#[derive(Debug, Clone)]
pub struct EarlyStop {
    patience: usize,
    min_delta: f64,
    best: f64,
    best_epoch: usize,
    since: usize,
}

impl EarlyStop {
    pub fn new(patience: usize, min_delta: f64) -> EarlyStop {
        EarlyStop {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: 0,
            since: 0,
        }
    }

    /// Feeds one observation; returns `true` once the metric has failed to
    /// improve by more than `min_delta` for `patience` consecutive epochs.
    pub fn observe(&mut self, epoch: usize, value: f64) -> bool {
        if value < self.best - self.min_delta {
            self.best = value;
            self.best_epoch = epoch;
            self.since = 0;
        } else {
            self.since += 1;
        }
        self.since >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// One epoch's worth of diagnostics, one JSON object per line in
/// `log.jsonl`. Deliberately timestamp-free so identical runs produce
/// identical logs.
#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Contrastive loss observed by the θ step.
    pub j_step1: f64,
    /// Contrastive loss observed by the φ step (after the θ update).
    pub j_step2: f64,
    /// Mean retention q̄ = mean(sigmoid(ω)) at the φ step.
    pub retention: f64,
    /// Global gradient norm of the θ group in Step 1.
    pub grad_theta: f64,
    /// Global gradient norm of the φ group in Step 2.
    pub grad_phi: f64,
}

/// Why training stopped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    Plateau { best_epoch: usize },
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StopReason::MaxEpochs => write!(f, "reached the epoch limit"),
            StopReason::Plateau { best_epoch } => {
                write!(f, "step-1 loss plateaued (best epoch {best_epoch})")
            }
        }
    }
}

/// The inference-time augmentation: the full integrated graph scored with
/// the final augmenter, values detached from any tape.
#[derive(Debug, Clone)]
pub struct InferenceAugmentation {
    pub graph: IntegratedSubGraph,
    pub omega: Vec<f64>,
    pub p: Vec<f64>,
}

/// Everything a finished run hands to evaluation and the CLI.
#[derive(Debug)]
pub struct TrainedModel {
    pub store: ParamStore,
    pub enc: EncoderParams,
    pub aug: AugmenterParams,
    pub proj: ProjectionParams,
    pub assign: PosNegAssignment,
    pub isg: IntegratedSubGraph,
    pub dim: usize,
    /// Meta-path-view embeddings `Z^Ĝ` (pre-projection), row-major `t × dim`.
    pub embeddings: Vec<f64>,
    pub inference: InferenceAugmentation,
    pub log: Vec<EpochRecord>,
    pub stop: StopReason,
}

/// One forward pass's tensors, kept together so the caller can run
/// `backward` and collect gradients.
struct Forward {
    binding: Binding,
    j: Tensor,
    omega: Tensor,
    p: Tensor,
    graph: IntegratedSubGraph,
    z_metapath: Tensor,
}

/// Live training state. [`train`] is the one-call wrapper; the methods
/// are public so tests and tools can step through an epoch at a time.
pub struct Trainer<'a> {
    pub store: ParamStore,
    pub enc: EncoderParams,
    pub aug: AugmenterParams,
    pub proj: ProjectionParams,
    pub assign: PosNegAssignment,
    pub isg: IntegratedSubGraph,
    hin: &'a Hin,
    cfg: TrainConfig,
    schema_view: ViewGraph,
    adam_theta: Adam,
    adam_phi: Adam,
    stopper: EarlyStop,
    epoch: usize,
    log: Vec<EpochRecord>,
}

impl<'a> Trainer<'a> {
    /// Materialises and integrates the meta-paths, fixes `Pos`/`Neg` from
    /// their connectivity, and initialises all parameter groups.
    pub fn new(
        hin: &'a Hin,
        metapaths: &[MetaPath],
        cfg: TrainConfig,
    ) -> Result<Trainer<'a>, TrainError> {
        let opts = MaterializeOptions {
            count_instances: true,
            density_budget: cfg.density_budget,
        };
        let subs = metapaths
            .iter()
            .map(|mp| materialize(hin, mp, &opts))
            .collect::<Result<Vec<_>, _>>()?;
        let isg = integrate(&subs)?;
        // Pos/Neg come from the *original* sub-graphs and stay fixed; the
        // learned pruning never rewires the contrastive targets.
        let conn = connectivity(&subs);
        let mut neg_rng = rng::stream(cfg.seed, "negs");
        let assign = contrastive::select_pos_neg(&conn, cfg.t_pos, cfg.neg_samples, &mut neg_rng)?;
        let mut init_rng = rng::stream(cfg.seed, "init");
        let mut store = ParamStore::new();
        let enc = EncoderParams::register(
            &mut store,
            hin,
            isg.n_metapaths(),
            EncoderConfig {
                dim: cfg.dim,
                layers: cfg.layers,
                heads: cfg.heads,
                beta: cfg.beta,
                ..EncoderConfig::default()
            },
            &mut init_rng,
        );
        let aug = AugmenterParams::register(
            &mut store,
            isg.n_metapaths(),
            AugmenterConfig {
                gcn_layers: cfg.gcn_layers,
                dim: cfg.dim,
                hidden: cfg.dim,
            },
            &mut init_rng,
        );
        let proj = ProjectionParams::register(&mut store, cfg.dim, &mut init_rng);
        if cfg.freeze_gamma {
            store.set_trainable(&[enc.gamma], false);
        }
        let adam_theta = Adam::new(cfg.lr);
        let adam_phi = Adam::new(cfg.lr);
        let stopper = EarlyStop::new(cfg.patience, MIN_DELTA);
        Ok(Trainer {
            store,
            enc,
            aug,
            proj,
            assign,
            isg,
            hin,
            schema_view: ViewGraph::schema(hin),
            cfg,
            adam_theta,
            adam_phi,
            stopper,
            epoch: 0,
            log: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn epochs_run(&self) -> usize {
        self.epoch
    }

    pub fn log(&self) -> &[EpochRecord] {
        &self.log
    }

    /// The θ group: encoder (including γ unless frozen) plus projection.
    pub fn theta_ids(&self) -> Vec<ParamId> {
        let mut ids = self.enc.all_ids();
        ids.extend(self.proj.all_ids());
        if self.cfg.freeze_gamma {
            ids.retain(|&id| id != self.enc.gamma);
        }
        ids
    }

    /// The φ group: the augmenter.
    pub fn phi_ids(&self) -> Vec<ParamId> {
        self.aug.all_ids()
    }

    /// Runs the shared forward computation. `epoch = None` is the
    /// inference configuration: callers pass `rho = 0` and dropout stays
    /// off, with Gumbel noise from the dedicated `inference` stream.
    fn forward(&self, rho: f64, epoch: Option<usize>, train: bool) -> Result<Forward, TrainError> {
        let seed = self.cfg.seed;
        let (mut drop_rng, mut gumbel_rng, mut dropout_rng) = match epoch {
            Some(e) => (
                rng::stream_indexed(seed, "drop", e as u64),
                rng::stream_indexed(seed, "gumbel", e as u64),
                rng::stream_indexed(seed, "dropout", e as u64),
            ),
            None => (
                rng::stream(seed, "inference"),
                rng::stream(seed, "inference"),
                rng::stream(seed, "inference"),
            ),
        };
        let tape = Tape::new();
        let mut binding = Binding::new(&tape);
        let mut used = BTreeSet::new();
        // The augmenter consumes the same projected target features as the
        // encoder: one shared front end, identical parameter nodes.
        let t = self.hin.target_type();
        let feats = self.hin.effective_features(t);
        let h0 = crate::encoder::project_type(
            &self.store,
            &mut binding,
            &tape,
            &self.enc.type_mlps[t.0],
            &feats,
            &mut used,
        );
        let gamma = binding.bind(&self.store, self.enc.gamma);
        let augmented = lma::augment(
            &self.store,
            &mut binding,
            &tape,
            &self.aug,
            &self.isg,
            &h0,
            &gamma,
            rho,
            self.cfg.tau_gumbel,
            &mut drop_rng,
            &mut gumbel_rng,
            &mut used,
        )?;
        let opts = EncodeOptions {
            dropout: self.cfg.dropout,
            train,
        };
        let view = ViewGraph::metapath(&augmented.graph);
        let zm = self.enc.encode_metapath(
            &self.store,
            &mut binding,
            &tape,
            t,
            &feats,
            &view,
            Some(&augmented.p),
            &opts,
            &mut dropout_rng,
        );
        let zs = self.enc.encode_schema(
            &self.store,
            &mut binding,
            &tape,
            self.hin,
            &self.schema_view,
            &opts,
            &mut dropout_rng,
        );
        let mut proj_used = BTreeSet::new();
        let anchors = self
            .proj
            .project(&self.store, &mut binding, &zs.z, &mut proj_used);
        let candidates = self
            .proj
            .project(&self.store, &mut binding, &zm.z, &mut proj_used);
        let loss = contrastive::info_nce(&tape, &anchors, &candidates, &self.assign, self.cfg.tau_nce);
        Ok(Forward {
            binding,
            j: loss.j,
            omega: augmented.omega,
            p: augmented.p,
            graph: augmented.graph,
            z_metapath: zm.z,
        })
    }

    /// Step 1: updates θ against the frozen augmenter. Returns the loss
    /// and the θ gradient norm.
    pub fn step1(&mut self) -> Result<(f64, f64), TrainError> {
        self.store.zero_grads();
        let theta = self.theta_ids();
        self.store.set_trainable(&self.phi_ids(), false);
        self.store.set_trainable(&theta, true);
        let f = self.forward(self.cfg.drop_rate, Some(self.epoch), true)?;
        let j = f.j.item();
        f.j.backward().map_err(|e| TrainError::NonFinite {
            stage: "step 1",
            source: e,
        })?;
        f.binding.collect_grads(&mut self.store);
        let grad = self.store.grad_norm(&theta);
        self.adam_theta.step(&mut self.store, &theta);
        Ok((j, grad))
    }

    /// Step 2: updates φ against the frozen encoder. Returns the loss, the
    /// mean retention q̄, and the φ gradient norm.
    pub fn step2(&mut self) -> Result<(f64, f64, f64), TrainError> {
        self.store.zero_grads();
        let phi = self.phi_ids();
        let mut all_theta = self.enc.all_ids();
        all_theta.extend(self.proj.all_ids());
        self.store.set_trainable(&all_theta, false);
        self.store.set_trainable(&phi, true);
        let f = self.forward(self.cfg.drop_rate, Some(self.epoch), true)?;
        let j = f.j.item();
        let retention = {
            let w = f.omega.value();
            w.iter().map(|&x| 1.0 / (1.0 + (-x).exp())).sum::<f64>() / w.len() as f64
        };
        let reg = if self.cfg.reg_raw_logits {
            lma::raw_logit_regularizer(&f.omega)
        } else {
            lma::retention_regularizer(&f.omega)
        };
        // min over φ of (−J − λ·R): the adversary raises J, the
        // regularizer keeps edges alive.
        let objective = f.j.add(&reg.scale(self.cfg.lambda_reg)).neg();
        objective.backward().map_err(|e| TrainError::NonFinite {
            stage: "step 2",
            source: e,
        })?;
        f.binding.collect_grads(&mut self.store);
        let grad = self.store.grad_norm(&phi);
        self.adam_phi.step(&mut self.store, &phi);
        Ok((j, retention, grad))
    }

    /// Runs both steps of the current epoch and appends a log record.
    pub fn run_epoch(&mut self) -> Result<EpochRecord, TrainError> {
        let (j1, grad_theta) = self.step1()?;
        let (j2, retention, grad_phi) = self.step2()?;
        let record = EpochRecord {
            epoch: self.epoch,
            j_step1: j1,
            j_step2: j2,
            retention,
            grad_theta,
            grad_phi,
        };
        self.log.push(record.clone());
        self.epoch += 1;
        Ok(record)
    }

    /// The deterministic inference pass: full graph, no dropout, seeded
    /// noise. Returns `Z^Ĝ` values and the scored augmentation.
    pub fn infer(&self) -> Result<(Vec<f64>, InferenceAugmentation), TrainError> {
        let f = self.forward(0.0, None, false)?;
        let z = f.z_metapath.value();
        if z.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::BadEmbeddings);
        }
        Ok((
            z,
            InferenceAugmentation {
                graph: f.graph,
                omega: f.omega.value(),
                p: f.p.value(),
            },
        ))
    }

    /// The full loop: epochs with early stopping, then inference.
    pub fn run(mut self) -> Result<TrainedModel, TrainError> {
        let mut stop = StopReason::MaxEpochs;
        while self.epoch < self.cfg.epochs {
            let record = self.run_epoch()?;
            if self.stopper.observe(record.epoch, record.j_step1) {
                stop = StopReason::Plateau {
                    best_epoch: self.stopper.best_epoch(),
                };
                break;
            }
        }
        let (embeddings, inference) = self.infer()?;
        Ok(TrainedModel {
            store: self.store,
            enc: self.enc,
            aug: self.aug,
            proj: self.proj,
            assign: self.assign,
            isg: self.isg,
            dim: self.cfg.dim,
            embeddings,
            inference,
            log: self.log,
            stop,
        })
    }
}

/// Trains a model end to end.
pub fn train(
    hin: &Hin,
    metapaths: &[MetaPath],
    cfg: TrainConfig,
) -> Result<TrainedModel, TrainError> {
    Trainer::new(hin, metapaths, cfg)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metapath::parse_metapath_args;

    fn toy() -> Hin {
        Hin::load(std::path::Path::new(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/fixtures/toy_acm.json"
        )))
        .unwrap()
    }

    fn toy_cfg(epochs: usize) -> TrainConfig {
        // T_pos = 1 matters on a 3-node target set: a larger threshold
        // would make every other node a positive, leaving no negatives
        // and a constant-zero loss.
        TrainConfig {
            epochs,
            dim: 6,
            drop_rate: 0.3,
            t_pos: 1,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    fn toy_paths(hin: &Hin) -> Vec<MetaPath> {
        parse_metapath_args(&["PAP,PSP".into()], hin).unwrap()
    }

    fn snapshot(store: &ParamStore, ids: &[ParamId]) -> Vec<Vec<u64>> {
        ids.iter()
            .map(|&id| store.get(id).value.iter().map(|v| v.to_bits()).collect())
            .collect()
    }

    #[test]
    fn early_stop_requires_patience_epochs_without_improvement() {
        let mut s = EarlyStop::new(3, 1e-7);
        assert!(!s.observe(0, 1.0));
        assert!(!s.observe(1, 0.9)); // improvement resets
        assert!(!s.observe(2, 0.9)); // 1
        assert!(!s.observe(3, 0.95)); // 2
        assert!(s.observe(4, 0.9 - 5e-8)); // below min_delta: 3 → stop
        assert_eq!(s.best_epoch(), 1);
    }

    #[test]
    fn early_stop_ignores_sub_threshold_improvements() {
        let mut s = EarlyStop::new(2, 1e-3);
        assert!(!s.observe(0, 1.0));
        assert!(!s.observe(1, 1.0 - 5e-4));
        assert!(s.observe(2, 1.0 - 9e-4));
        assert_eq!(s.best_epoch(), 0);
    }

    #[test]
    fn step1_touches_only_theta_and_step2_only_phi() {
        let hin = toy();
        let mps = toy_paths(&hin);
        let mut t = Trainer::new(&hin, &mps, toy_cfg(1)).unwrap();
        let theta = t.theta_ids();
        let phi = t.phi_ids();

        let phi_before = snapshot(&t.store, &phi);
        let theta_before = snapshot(&t.store, &theta);
        t.step1().unwrap();
        // φ bytes untouched, zero gradients; θ moved.
        assert_eq!(snapshot(&t.store, &phi), phi_before);
        for &id in &phi {
            assert!(t.store.get(id).grad.iter().all(|&g| g == 0.0));
        }
        assert_ne!(snapshot(&t.store, &theta), theta_before);

        let theta_mid = snapshot(&t.store, &theta);
        let phi_mid = snapshot(&t.store, &phi);
        t.step2().unwrap();
        assert_eq!(snapshot(&t.store, &theta), theta_mid);
        for &id in &theta {
            assert!(t.store.get(id).grad.iter().all(|&g| g == 0.0));
        }
        assert_ne!(snapshot(&t.store, &phi), phi_mid);
    }

    #[test]
    fn one_adam_update_per_group_per_epoch() {
        let hin = toy();
        let mps = toy_paths(&hin);
        let mut t = Trainer::new(&hin, &mps, toy_cfg(3)).unwrap();
        for want in 1..=3u64 {
            t.run_epoch().unwrap();
            assert_eq!(t.adam_theta.steps(), want);
            assert_eq!(t.adam_phi.steps(), want);
        }
    }

    #[test]
    fn training_is_bitwise_reproducible() {
        let hin = toy();
        let mps = toy_paths(&hin);
        let run = || train(&hin, &mps, toy_cfg(2)).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(
            a.embeddings.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.embeddings.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        for (ra, rb) in a.log.iter().zip(&b.log) {
            assert_eq!(ra.j_step1.to_bits(), rb.j_step1.to_bits());
            assert_eq!(ra.j_step2.to_bits(), rb.j_step2.to_bits());
            assert_eq!(ra.retention.to_bits(), rb.retention.to_bits());
        }
        let ids: Vec<ParamId> = a.store.ids().collect();
        assert_eq!(snapshot(&a.store, &ids), snapshot(&b.store, &ids));
    }

    #[test]
    fn zero_epochs_returns_initialised_embeddings() {
        let hin = toy();
        let mps = toy_paths(&hin);
        let m = train(&hin, &mps, toy_cfg(0)).unwrap();
        assert!(m.log.is_empty());
        assert_eq!(m.stop, StopReason::MaxEpochs);
        assert_eq!(m.embeddings.len(), 3 * 6); // 3 papers × dim 6
        assert!(m.embeddings.iter().all(|v| v.is_finite()));
        // Inference scores the full graph.
        assert_eq!(m.inference.graph.edges, m.isg.edges);
        assert!(m.inference.p.iter().all(|&p| p > 0.0 && p <= 1.0));
    }

    #[test]
    fn freeze_gamma_pins_gamma_for_the_whole_run() {
        let hin = toy();
        let mps = toy_paths(&hin);
        let cfg = TrainConfig {
            freeze_gamma: true,
            ..toy_cfg(3)
        };
        let m = train(&hin, &mps, cfg).unwrap();
        assert_eq!(m.store.get(m.enc.gamma).value, vec![1.0, 1.0]);
        assert!(!m.store.get(m.enc.gamma).trainable);
    }

    #[test]
    fn loss_improves_on_the_toy_graph() {
        let hin = toy();
        let mps = toy_paths(&hin);
        let cfg = TrainConfig {
            drop_rate: 0.0,
            ..toy_cfg(25)
        };
        let m = train(&hin, &mps, cfg).unwrap();
        let first = m.log.first().unwrap().j_step1;
        let best = m.log.iter().map(|r| r.j_step1).fold(f64::INFINITY, f64::min);
        assert!(
            best < first,
            "no epoch improved on the initial loss {first} (best {best})"
        );
        assert!(m.log.iter().all(|r| r.j_step1.is_finite()
            && r.grad_theta.is_finite()
            && (0.0..=1.0).contains(&r.retention)));
    }

    #[test]
    fn corrupted_parameters_surface_as_numeric_errors() {
        let hin = toy();
        let mps = toy_paths(&hin);
        let mut t = Trainer::new(&hin, &mps, toy_cfg(1)).unwrap();
        let w1 = t.enc.type_mlps[0].w1;
        t.store.get_mut(w1).value.iter_mut().for_each(|v| *v = 1e308);
        let err = t.run_epoch().unwrap_err();
        assert!(matches!(err, TrainError::NonFinite { .. }), "{err}");
    }

    #[test]
    fn epoch_records_serialise_without_timestamps() {
        let rec = EpochRecord {
            epoch: 4,
            j_step1: 1.25,
            j_step2: 1.5,
            retention: 0.75,
            grad_theta: 0.1,
            grad_phi: 0.2,
        };
        let json = serde_json::to_string(&rec).unwrap();
        assert_eq!(
            json,
            r#"{"epoch":4,"j_step1":1.25,"j_step2":1.5,"retention":0.75,"grad_theta":0.1,"grad_phi":0.2}"#
        );
    }
}
