//! Downstream evaluation: linear-probe classification, k-means clustering,
//! the synthetic benchmark generator, and the meta-path sensitivity study.
//!
//! Everything here is deliberately deterministic: the probe optimiser is
//! seeded-free full-batch descent, clustering runs on named sub-streams,
//! and the synthetic generator is a pure function of its spec. The same
//! seed therefore reproduces every number in a report bit for bit.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::Rng;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::config::TrainConfig;
use crate::hin::{Hin, Label};
use crate::metapath::{enumerate_combinations, MetaPath, MetaPathError};
use crate::rng;
use crate::train::{self, TrainError};

/// Evaluation failures.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no labelled target nodes to evaluate")]
    NoLabels,
    #[error("class {class} has no members in the train split; re-stratify with a different seed or more labels")]
    ClassMissingFromTrain { class: usize },
    #[error("k-means needs at least k = {k} points, got {n}")]
    TooFewPoints { k: usize, n: usize },
    #[error("clustering requires single-label data")]
    MultiLabelClustering,
    #[error("cannot generate synthetic data: {0}")]
    InfeasibleSynthetic(String),
    #[error(transparent)]
    MetaPath(#[from] MetaPathError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

/// Train fraction of the stratified split.
pub const TRAIN_FRAC: f64 = 0.24;
/// Validation fraction of the stratified split.
pub const VAL_FRAC: f64 = 0.06;

/// A disjoint train/validation/test partition of labelled node indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Stratified 24/6/70 split over `primary[i]` = primary class of item
    /// `i`. Every class contributes to the train part (at least one item),
    /// and per class the allocated counts stay within one item of the
    /// exact fractions.
    pub fn stratified(primary: &[usize], rng: &mut impl Rng) -> Split {
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &c) in primary.iter().enumerate() {
            by_class.entry(c).or_default().push(i);
        }
        let mut split = Split {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        };
        for members in by_class.values() {
            let mut members = members.clone();
            // Fisher–Yates with our own loop so the draw count is fixed.
            for i in (1..members.len()).rev() {
                members.swap(i, rng.gen_range(0..=i));
            }
            let m = members.len();
            let n_train = ((m as f64 * TRAIN_FRAC).round() as usize).max(1).min(m);
            let n_val = ((m as f64 * VAL_FRAC).round() as usize).min(m - n_train);
            split.train.extend(&members[..n_train]);
            split.val.extend(&members[n_train..n_train + n_val]);
            split.test.extend(&members[n_train + n_val..]);
        }
        split.train.sort_unstable();
        split.val.sort_unstable();
        split.test.sort_unstable();
        split
    }
}

/// The labelled target nodes of a HIN: `(target-local ids, labels)`.
pub fn labeled_targets(hin: &Hin) -> (Vec<usize>, Vec<Label>) {
    let range = hin.target_range();
    let offset = range.start;
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for node in range {
        if let Some(l) = hin.label(node) {
            ids.push(node - offset);
            labels.push(l.clone());
        }
    }
    (ids, labels)
}

// ---------------------------------------------------------------------------
// F1
// ---------------------------------------------------------------------------

/// Micro/Macro-F1 of a classification run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassifyMetrics {
    pub micro_f1: f64,
    pub macro_f1: f64,
}

/// F1 over predicted and true class *sets* (single-label callers pass
/// singletons).
///
/// Micro-F1 pools true/false positives over every `(item, class)`
/// decision; Macro-F1 averages per-class F1 over the classes present in
/// either the truth or the predictions, scoring 0 where a class has
/// predictions but no true positives.
pub fn f1_scores(pred: &[Vec<usize>], truth: &[Vec<usize>]) -> ClassifyMetrics {
    assert_eq!(pred.len(), truth.len());
    let mut classes: BTreeSet<usize> = BTreeSet::new();
    for set in pred.iter().chain(truth) {
        classes.extend(set.iter().copied());
    }
    let mut micro_tp = 0.0;
    let mut micro_fp = 0.0;
    let mut micro_fn = 0.0;
    let mut macro_sum = 0.0;
    for &c in &classes {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fn_ = 0.0;
        for (p, t) in pred.iter().zip(truth) {
            match (p.contains(&c), t.contains(&c)) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                (false, false) => {}
            }
        }
        let denom = 2.0 * tp + fp + fn_;
        macro_sum += if denom > 0.0 { 2.0 * tp / denom } else { 0.0 };
        micro_tp += tp;
        micro_fp += fp;
        micro_fn += fn_;
    }
    let micro_denom = 2.0 * micro_tp + micro_fp + micro_fn;
    ClassifyMetrics {
        micro_f1: if micro_denom > 0.0 {
            2.0 * micro_tp / micro_denom
        } else {
            0.0
        },
        macro_f1: if classes.is_empty() {
            0.0
        } else {
            macro_sum / classes.len() as f64
        },
    }
}

// ---------------------------------------------------------------------------
// Linear probe
// ---------------------------------------------------------------------------

/// L2 weight on the probe's non-bias coefficients.
const PROBE_L2: f64 = 1e-4;
/// Iteration cap of the probe optimiser.
const PROBE_MAX_ITERS: usize = 500;

/// Dense matrix–vector helpers for the probe, kept local and boring.
struct Probe<'a> {
    x: &'a [f64],
    n: usize,
    d: usize, // including the bias column
    k: usize,
    /// Row-major `n × k` 0/1 targets.
    y: Vec<f64>,
    multi_label: bool,
}

impl Probe<'_> {
    /// Class scores `XW`, row-major `n × k`.
    fn logits(&self, w: &[f64]) -> Vec<f64> {
        let (n, d, k) = (self.n, self.d, self.k);
        let mut out = vec![0.0; n * k];
        for i in 0..n {
            for j in 0..d {
                let xij = self.x[i * d + j];
                if xij == 0.0 {
                    continue;
                }
                for c in 0..k {
                    out[i * k + c] += xij * w[j * k + c];
                }
            }
        }
        out
    }

    /// Mean cross-entropy plus the L2 term (bias row excluded).
    fn loss(&self, w: &[f64]) -> f64 {
        let logits = self.logits(w);
        let (n, k) = (self.n, self.k);
        let mut total = 0.0;
        for i in 0..n {
            let row = &logits[i * k..(i + 1) * k];
            if self.multi_label {
                for c in 0..k {
                    // Stable log(1 + e^z) − y·z.
                    let z = row[c];
                    total += z.max(0.0) - z * self.y[i * k + c] + (-z.abs()).exp().ln_1p();
                }
            } else {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
                for c in 0..k {
                    if self.y[i * k + c] > 0.0 {
                        total += lse - row[c];
                    }
                }
            }
        }
        let mut reg = 0.0;
        for j in 0..self.d - 1 {
            for c in 0..k {
                reg += w[j * k + c] * w[j * k + c];
            }
        }
        total / n as f64 + PROBE_L2 * reg
    }

    /// Gradient of [`Probe::loss`].
    fn grad(&self, w: &[f64]) -> Vec<f64> {
        let logits = self.logits(w);
        let (n, d, k) = (self.n, self.d, self.k);
        // dL/dz per row first.
        let mut dz = vec![0.0; n * k];
        for i in 0..n {
            let row = &logits[i * k..(i + 1) * k];
            if self.multi_label {
                for c in 0..k {
                    let p = 1.0 / (1.0 + (-row[c]).exp());
                    dz[i * k + c] = p - self.y[i * k + c];
                }
            } else {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|&z| (z - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                for c in 0..k {
                    dz[i * k + c] = exps[c] / sum - self.y[i * k + c];
                }
            }
        }
        let mut g = vec![0.0; d * k];
        for i in 0..n {
            for j in 0..d {
                let xij = self.x[i * d + j];
                if xij == 0.0 {
                    continue;
                }
                for c in 0..k {
                    g[j * k + c] += xij * dz[i * k + c];
                }
            }
        }
        for v in g.iter_mut() {
            *v /= n as f64;
        }
        for j in 0..d - 1 {
            for c in 0..k {
                g[j * k + c] += 2.0 * PROBE_L2 * w[j * k + c];
            }
        }
        g
    }
}

/// Predicted class sets under a weight matrix: argmax for single-label,
/// `sigmoid ≥ 0.5` (equivalently logit ≥ 0) for multi-label.
fn predict(x: &[f64], w: &[f64], n: usize, d: usize, k: usize, multi_label: bool) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut scores = vec![0.0; k];
        for j in 0..d {
            let xij = x[i * d + j];
            if xij == 0.0 {
                continue;
            }
            for c in 0..k {
                scores[c] += xij * w[j * k + c];
            }
        }
        if multi_label {
            out.push((0..k).filter(|&c| scores[c] >= 0.0).collect());
        } else {
            let best = scores
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (c, &s)| {
                    if s > acc.1 {
                        (c, s)
                    } else {
                        acc
                    }
                })
                .0;
            out.push(vec![best]);
        }
    }
    out
}

/// Bias-augmented design matrix for the given item rows.
fn design(z: &[f64], dim: usize, ids: &[usize]) -> Vec<f64> {
    let mut x = Vec::with_capacity(ids.len() * (dim + 1));
    for &i in ids {
        x.extend_from_slice(&z[i * dim..(i + 1) * dim]);
        x.push(1.0);
    }
    x
}

/// Fits a logistic-regression probe on the train split and reports test
/// F1 with the weights that scored best on validation Micro-F1.
///
/// Single-label data uses multinomial (softmax) regression; data with any
/// multi-class label switches to one-vs-rest with a 0.5 threshold. The
/// optimiser is full-batch gradient descent with Armijo backtracking —
/// deterministic, no randomness to seed.
pub fn linear_probe(
    z: &[f64],
    dim: usize,
    labels: &[Label],
    split: &Split,
) -> Result<ClassifyMetrics, EvalError> {
    if labels.is_empty() {
        return Err(EvalError::NoLabels);
    }
    let k = labels
        .iter()
        .flat_map(|l| l.classes())
        .max()
        .map_or(0, |&c| c + 1);
    let multi_label = labels.iter().any(|l| l.classes().len() > 1);
    // Every class that the probe will be graded on must be learnable.
    let train_classes: BTreeSet<usize> = split
        .train
        .iter()
        .flat_map(|&i| labels[i].classes())
        .copied()
        .collect();
    for &i in split.val.iter().chain(&split.test) {
        for &c in labels[i].classes() {
            if !train_classes.contains(&c) {
                return Err(EvalError::ClassMissingFromTrain { class: c });
            }
        }
    }
    let d = dim + 1;
    let sets = |ids: &[usize]| -> Vec<Vec<usize>> {
        ids.iter().map(|&i| labels[i].classes().to_vec()).collect()
    };
    let mut y = vec![0.0; split.train.len() * k];
    for (row, &i) in split.train.iter().enumerate() {
        for &c in labels[i].classes() {
            y[row * k + c] = 1.0;
        }
    }
    let x_train = design(z, dim, &split.train);
    let probe = Probe {
        x: &x_train,
        n: split.train.len(),
        d,
        k,
        y,
        multi_label,
    };
    let x_val = design(z, dim, &split.val);
    let truth_val = sets(&split.val);

    let mut w = vec![0.0; d * k];
    let mut best_w = w.clone();
    let mut best_val = f64::NEG_INFINITY;
    let mut loss = probe.loss(&w);
    for _ in 0..PROBE_MAX_ITERS {
        let g = probe.grad(&w);
        let gg: f64 = g.iter().map(|v| v * v).sum();
        if gg.sqrt() < 1e-10 {
            break;
        }
        // Armijo backtracking from a unit step.
        let mut t = 1.0;
        let mut candidate: Vec<f64>;
        let mut new_loss;
        loop {
            candidate = w
                .iter()
                .zip(&g)
                .map(|(wi, gi)| wi - t * gi)
                .collect();
            new_loss = probe.loss(&candidate);
            if new_loss <= loss - 1e-4 * t * gg || t < 1e-12 {
                break;
            }
            t *= 0.5;
        }
        w = candidate;
        loss = new_loss;
        if !split.val.is_empty() {
            let pred = predict(&x_val, &w, split.val.len(), d, k, multi_label);
            let val = f1_scores(&pred, &truth_val).micro_f1;
            if val > best_val {
                best_val = val;
                best_w = w.clone();
            }
        }
    }
    if split.val.is_empty() {
        best_w = w;
    }
    let x_test = design(z, dim, &split.test);
    let pred = predict(&x_test, &best_w, split.test.len(), d, k, multi_label);
    Ok(f1_scores(&pred, &sets(&split.test)))
}

/// Splits a HIN's labelled targets (stream `split` of `seed`) and probes
/// the given embeddings, which must be row-aligned with the target nodes.
pub fn probe_on_hin(
    hin: &Hin,
    z: &[f64],
    dim: usize,
    seed: u64,
) -> Result<ClassifyMetrics, EvalError> {
    let (ids, labels) = labeled_targets(hin);
    if ids.is_empty() {
        return Err(EvalError::NoLabels);
    }
    let primary: Vec<usize> = labels.iter().map(|l| l.classes()[0]).collect();
    let mut split_rng = rng::stream(seed, "split");
    let split = Split::stratified(&primary, &mut split_rng);
    // Restrict the embedding rows to the labelled nodes, in `ids` order.
    let z_labeled = design_rows(z, dim, &ids);
    linear_probe(&z_labeled, dim, &labels, &split)
}

fn design_rows(z: &[f64], dim: usize, ids: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(ids.len() * dim);
    for &i in ids {
        out.extend_from_slice(&z[i * dim..(i + 1) * dim]);
    }
    out
}

// ---------------------------------------------------------------------------
// Clustering
// ---------------------------------------------------------------------------

/// Averaged clustering agreement scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClusterMetrics {
    pub nmi: f64,
    pub ari: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One k-means run: k-means++ seeding, Lloyd iterations to convergence
/// (or 100 rounds), empty clusters re-seeded with the point farthest from
/// its current centroid.
pub fn kmeans(z: &[f64], n: usize, d: usize, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    assert!(k >= 1 && n >= k, "need at least k points");
    let row = |i: usize| &z[i * d..(i + 1) * d];
    // k-means++: subsequent centroids drawn ∝ squared distance to the
    // nearest chosen one.
    let mut centroids: Vec<Vec<f64>> = vec![row(rng.gen_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // All points coincide with a centroid; any point works.
            rng.gen_range(0..n)
        };
        centroids.push(row(next).to_vec());
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(row(i), centroids.last().unwrap()));
        }
    }
    let mut assign = vec![0usize; n];
    for _ in 0..100 {
        let mut changed = false;
        for i in 0..n {
            let best = (0..k)
                .map(|c| (c, sq_dist(row(i), &centroids[c])))
                .fold((0, f64::INFINITY), |acc, cur| {
                    if cur.1 < acc.1 {
                        cur
                    } else {
                        acc
                    }
                })
                .0;
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        // Re-seed empties with the point farthest from its centroid.
        for c in 0..k {
            if assign.iter().any(|&a| a == c) {
                continue;
            }
            let far = (0..n)
                .map(|i| (i, sq_dist(row(i), &centroids[assign[i]])))
                .fold((0, f64::NEG_INFINITY), |acc, cur| {
                    if cur.1 > acc.1 {
                        cur
                    } else {
                        acc
                    }
                })
                .0;
            assign[far] = c;
            changed = true;
        }
        for c in 0..k {
            let members: Vec<usize> = (0..n).filter(|&i| assign[i] == c).collect();
            let mut mean = vec![0.0; d];
            for &i in &members {
                for j in 0..d {
                    mean[j] += z[i * d + j];
                }
            }
            for v in mean.iter_mut() {
                *v /= members.len() as f64;
            }
            centroids[c] = mean;
        }
        if !changed {
            break;
        }
    }
    assign
}

fn entropy(counts: &BTreeMap<usize, usize>, n: usize) -> f64 {
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.ln()
        })
        .sum()
}

fn count_of<T: Ord + Copy>(xs: &[T]) -> BTreeMap<T, usize> {
    let mut m = BTreeMap::new();
    for &x in xs {
        *m.entry(x).or_insert(0) += 1;
    }
    m
}

/// Normalised mutual information with arithmetic-mean normalisation:
/// `I(U;V) / ((H(U)+H(V))/2)`. Two trivial partitions score 1; one
/// trivial against one informative scores 0.
pub fn nmi(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let ca = count_of(a);
    let cb = count_of(b);
    let ha = entropy(&ca, n);
    let hb = entropy(&cb, n);
    if ha == 0.0 && hb == 0.0 {
        return 1.0;
    }
    if ha == 0.0 || hb == 0.0 {
        return 0.0;
    }
    let joint = count_of(&a.iter().zip(b).map(|(&x, &y)| (x, y)).collect::<Vec<_>>());
    let mut mi = 0.0;
    for (&(x, y), &c) in &joint {
        let pij = c as f64 / n as f64;
        let pi = ca[&x] as f64 / n as f64;
        let qj = cb[&y] as f64 / n as f64;
        mi += pij * (pij / (pi * qj)).ln();
    }
    mi / ((ha + hb) / 2.0)
}

/// Adjusted Rand index. When both partitions are trivial (the chance
/// correction degenerates), identical partitions score 1 and differing
/// ones 0.
pub fn ari(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let comb2 = |x: usize| (x * x.saturating_sub(1)) as f64 / 2.0;
    let joint = count_of(&a.iter().zip(b).map(|(&x, &y)| (x, y)).collect::<Vec<_>>());
    let index: f64 = joint.values().map(|&c| comb2(c)).sum();
    let sum_a: f64 = count_of(a).values().map(|&c| comb2(c)).sum();
    let sum_b: f64 = count_of(b).values().map(|&c| comb2(c)).sum();
    let total = comb2(n);
    let expected = sum_a * sum_b / total;
    let maximum = (sum_a + sum_b) / 2.0;
    if (maximum - expected).abs() < 1e-12 {
        let same_comembership = (0..n).all(|i| {
            (0..i).all(|j| (a[i] == a[j]) == (b[i] == b[j]))
        });
        return if same_comembership { 1.0 } else { 0.0 };
    }
    (index - expected) / (maximum - expected)
}

/// k-means agreement with the labels over `runs` seeded restarts (stream
/// `kmeans`, one sub-stream per run), averaged.
pub fn cluster_metrics(
    z: &[f64],
    n: usize,
    d: usize,
    labels: &[usize],
    k: usize,
    seed: u64,
    runs: usize,
) -> Result<ClusterMetrics, EvalError> {
    assert_eq!(labels.len(), n);
    if n < k {
        return Err(EvalError::TooFewPoints { k, n });
    }
    let mut nmi_sum = 0.0;
    let mut ari_sum = 0.0;
    for run in 0..runs {
        let mut r = rng::stream_indexed(seed, "kmeans", run as u64);
        let assign = kmeans(z, n, d, k, &mut r);
        nmi_sum += nmi(&assign, labels);
        ari_sum += ari(&assign, labels);
    }
    Ok(ClusterMetrics {
        nmi: nmi_sum / runs as f64,
        ari: ari_sum / runs as f64,
    })
}

/// Splits out the single-label classes of a HIN's labelled targets and
/// clusters the matching embedding rows.
pub fn cluster_on_hin(
    hin: &Hin,
    z: &[f64],
    dim: usize,
    seed: u64,
    runs: usize,
) -> Result<ClusterMetrics, EvalError> {
    let (ids, labels) = labeled_targets(hin);
    if ids.is_empty() {
        return Err(EvalError::NoLabels);
    }
    if labels.iter().any(|l| l.classes().len() > 1) {
        return Err(EvalError::MultiLabelClustering);
    }
    let classes: Vec<usize> = labels.iter().map(|l| l.classes()[0]).collect();
    let k = classes.iter().max().unwrap() + 1;
    let z_labeled = design_rows(z, dim, &ids);
    cluster_metrics(&z_labeled, ids.len(), dim, &classes, k, seed, runs)
}

// ---------------------------------------------------------------------------
// Synthetic benchmark generator
// ---------------------------------------------------------------------------

/// Auxiliary type names; initials are distinct from each other and from
/// the target type so shorthand meta-paths like `TAT` resolve uniquely.
const AUX_NAMES: [&str; 4] = ["alpha", "beta", "gamma", "delta"];

/// Parameters of the planted-partition generator.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    /// Number of target nodes.
    pub n_target: usize,
    /// Number of auxiliary node types (1–4).
    pub n_aux_types: usize,
    /// Number of planted classes (≥ 2), assigned round-robin.
    pub classes: usize,
    /// Intended edge homophily of the composed target–aux–target
    /// sub-graphs. The generator solves for the attachment bias that
    /// realises it; values at or below the chance level of balanced
    /// classes give uniform (label-independent) attachment.
    pub homophily: f64,
    /// Attachments per target per auxiliary type.
    pub aux_degree: usize,
    /// Auxiliary nodes per class per type; `None` picks
    /// `max(2, n_target / (10 · classes))`.
    pub pool_per_class: Option<usize>,
    /// Uniform feature noise half-width added to the class indicator.
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> SyntheticSpec {
        SyntheticSpec {
            n_target: 300,
            n_aux_types: 2,
            classes: 3,
            homophily: 0.9,
            aux_degree: 3,
            pool_per_class: None,
            feature_noise: 0.25,
            seed: 0,
        }
    }
}

/// Solves for the per-pick own-pool probability that makes the composed
/// target–aux–target sub-graph's edge homophily come out near `h`.
///
/// Two targets become neighbours when they share an auxiliary node, so
/// class mixing compounds: with own-pool probability `a`, a same-class
/// pair meets with likelihood ∝ a² + (1−a)²/(k−1) while each of the more
/// numerous cross pairs meets ∝ 2a(1−a)/(k−1) + (k−2)(1−a)²/(k−1)².
/// Pool size and degree cancel from the ratio in the small-overlap
/// regime, so bisecting the resulting homophily curve over `a ∈ [1/k, 1]`
/// (it is monotone there) inverts the map without any randomness.
fn attachment_probability(h: f64, k: usize, class_size: f64) -> f64 {
    if h >= 1.0 {
        return 1.0;
    }
    let km1 = (k - 1) as f64;
    // Cross pairs per same-class pair under balanced classes.
    let r = km1 * class_size / (class_size - 1.0);
    let composed = |a: f64| {
        let f = 1.0 - a;
        let p_same = a * a + f * f / km1;
        let p_cross = 2.0 * a * f / km1 + (k as f64 - 2.0) * f * f / (km1 * km1);
        p_same / (p_same + r * p_cross)
    };
    let (mut lo, mut hi) = (1.0 / k as f64, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if composed(mid) < h {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Generates a planted-partition HIN.
///
/// Target node `t{i}` carries class `i mod classes` as its label and a
/// noisy class-indicator feature. Each auxiliary type holds a per-class
/// pool of nodes; every target attaches `aux_degree` times per type,
/// choosing its own class's pool with the solved attachment bias and a
/// uniformly random other-class node otherwise. Composed target–aux–target
/// paths then form communities whose purity tracks the homophily setting.
pub fn make_synthetic_hin(spec: &SyntheticSpec) -> Result<Hin, EvalError> {
    let infeasible = |msg: &str| EvalError::InfeasibleSynthetic(msg.to_string());
    if spec.classes < 2 {
        return Err(infeasible("need at least two classes"));
    }
    if spec.n_target < spec.classes {
        return Err(infeasible("need at least one target per class"));
    }
    if spec.n_aux_types == 0 || spec.n_aux_types > AUX_NAMES.len() {
        return Err(infeasible("supported auxiliary type counts are 1–4"));
    }
    if !(0.0..=1.0).contains(&spec.homophily) {
        return Err(infeasible("homophily must lie in [0, 1]"));
    }
    if spec.aux_degree == 0 {
        return Err(infeasible("aux_degree must be positive"));
    }
    let pool = spec
        .pool_per_class
        .unwrap_or_else(|| (spec.n_target / (10 * spec.classes)).max(2));
    let attach = attachment_probability(
        spec.homophily,
        spec.classes,
        spec.n_target as f64 / spec.classes as f64,
    );
    let mut feat_rng = rng::stream(spec.seed, "synthetic-features");
    let mut edge_rng = rng::stream(spec.seed, "synthetic-edges");

    let mut node_types = vec!["target".to_string()];
    node_types.extend(AUX_NAMES[..spec.n_aux_types].iter().map(|s| s.to_string()));
    let relations: Vec<serde_json::Value> = (0..spec.n_aux_types)
        .map(|a| {
            json!({
                "name": format!("T{}", AUX_NAMES[a].to_uppercase().chars().next().unwrap()),
                "src": "target",
                "dst": AUX_NAMES[a],
                "symmetric": true,
            })
        })
        .collect();

    let mut nodes = Vec::new();
    for i in 0..spec.n_target {
        let class = i % spec.classes;
        let feature: Vec<f64> = (0..spec.classes)
            .map(|c| {
                let base = if c == class { 1.0 } else { 0.0 };
                base + feat_rng.gen_range(-spec.feature_noise..=spec.feature_noise)
            })
            .collect();
        nodes.push(json!({
            "id": format!("t{i}"),
            "type": "target",
            "label": class,
            "feature": feature,
        }));
    }
    for a in 0..spec.n_aux_types {
        for j in 0..pool * spec.classes {
            nodes.push(json!({
                "id": format!("{}{}", &AUX_NAMES[a][..1], j),
                "type": AUX_NAMES[a],
            }));
        }
    }

    let mut edges: Vec<serde_json::Value> = Vec::new();
    for a in 0..spec.n_aux_types {
        let rel = format!("T{}", AUX_NAMES[a].to_uppercase().chars().next().unwrap());
        let mut seen = BTreeSet::new();
        for i in 0..spec.n_target {
            let class = i % spec.classes;
            for _ in 0..spec.aux_degree {
                // Own pool with the solved bias, any other-class node
                // otherwise. Pool j of class c spans [c·pool, (c+1)·pool).
                let j = if edge_rng.gen::<f64>() < attach {
                    class * pool + edge_rng.gen_range(0..pool)
                } else {
                    let other = edge_rng.gen_range(0..pool * (spec.classes - 1));
                    if other / pool >= class {
                        other + pool
                    } else {
                        other
                    }
                };
                if seen.insert((i, j)) {
                    edges.push(json!([
                        format!("t{i}"),
                        format!("{}{}", &AUX_NAMES[a][..1], j),
                        rel,
                    ]));
                }
            }
        }
    }

    let doc = json!({
        "node_types": node_types,
        "relations": relations,
        "nodes": nodes,
        "edges": edges,
        "target_type": "target",
    });
    Hin::from_json(&doc.to_string())
        .map_err(|e| EvalError::InfeasibleSynthetic(format!("generator bug: {e}")))
}

/// The shorthand meta-paths of a synthetic HIN: `TAT`, `TBT`, ... one per
/// auxiliary type.
pub fn synthetic_metapaths(hin: &Hin, n_aux_types: usize) -> Result<Vec<MetaPath>, EvalError> {
    (0..n_aux_types)
        .map(|a| {
            let initial = AUX_NAMES[a][..1].to_uppercase();
            MetaPath::parse(&format!("T{initial}T"), hin).map_err(EvalError::from)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Sensitivity study
// ---------------------------------------------------------------------------

/// Sample mean and standard deviation (`n − 1` denominator; 0 for fewer
/// than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (xs.len() - 1) as f64;
    (mean, var.sqrt())
}

/// One meta-path combination's outcomes.
#[derive(Debug, Clone, Serialize)]
pub struct CombinationResult {
    /// Indices into the study's meta-path list.
    pub indices: Vec<usize>,
    pub names: Vec<String>,
    /// Per-run test metrics; empty when the combination failed.
    pub runs: Vec<ClassifyMetrics>,
    pub micro_mean: f64,
    pub micro_std: f64,
    pub macro_mean: f64,
    pub macro_std: f64,
    /// Failure message, if any run of the combination errored.
    pub error: Option<String>,
}

/// The full study report.
#[derive(Debug, Clone, Serialize)]
pub struct SensitivityReport {
    pub runs_per_combination: usize,
    pub combinations: Vec<CombinationResult>,
    /// Sample standard deviation across successful combinations' mean
    /// Micro-F1.
    pub aggregate_std: f64,
    /// Max − min of the same means.
    pub gap: f64,
    /// Combination indices, best mean Micro-F1 first (failures last).
    pub ranking: Vec<usize>,
}

impl SensitivityReport {
    /// Recomputes the aggregate statistics from the per-combination table;
    /// reports must be internally consistent with this.
    pub fn recompute_aggregates(&self) -> (f64, f64) {
        let means: Vec<f64> = self
            .combinations
            .iter()
            .filter(|c| c.error.is_none())
            .map(|c| c.micro_mean)
            .collect();
        let (_, std) = mean_std(&means);
        let gap = match means.len() {
            0 => 0.0,
            _ => {
                let max = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let min = means.iter().cloned().fold(f64::INFINITY, f64::min);
                max - min
            }
        };
        (std, gap)
    }
}

fn assemble_report(
    runs_per_combination: usize,
    mut combinations: Vec<CombinationResult>,
) -> SensitivityReport {
    for combo in combinations.iter_mut() {
        let micros: Vec<f64> = combo.runs.iter().map(|m| m.micro_f1).collect();
        let macros: Vec<f64> = combo.runs.iter().map(|m| m.macro_f1).collect();
        let (mm, ms) = mean_std(&micros);
        let (am, asd) = mean_std(&macros);
        combo.micro_mean = mm;
        combo.micro_std = ms;
        combo.macro_mean = am;
        combo.macro_std = asd;
    }
    let mut ranking: Vec<usize> = (0..combinations.len()).collect();
    ranking.sort_by(|&a, &b| {
        let (ca, cb) = (&combinations[a], &combinations[b]);
        match (ca.error.is_none(), cb.error.is_none()) {
            (true, false) => std::cmp::Ordering::Less,
            (false, true) => std::cmp::Ordering::Greater,
            (false, false) => a.cmp(&b),
            (true, true) => cb
                .micro_mean
                .partial_cmp(&ca.micro_mean)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b)),
        }
    });
    let mut report = SensitivityReport {
        runs_per_combination,
        combinations,
        aggregate_std: 0.0,
        gap: 0.0,
        ranking,
    };
    let (std, gap) = report.recompute_aggregates();
    report.aggregate_std = std;
    report.gap = gap;
    report
}

/// How a study turns one meta-path combination and a per-run seed into
/// embeddings.
type EmbedFn<'a> = dyn Fn(&[MetaPath], u64) -> Result<(Vec<f64>, usize), TrainError> + 'a;

fn run_study(
    hin: &Hin,
    metapaths: &[MetaPath],
    min_size: usize,
    runs: usize,
    base_seed: u64,
    embed: &EmbedFn,
) -> Result<SensitivityReport, EvalError> {
    let combos = enumerate_combinations(metapaths.len(), min_size)?;
    let mut results = Vec::with_capacity(combos.len());
    for combo in &combos {
        let subset: Vec<MetaPath> = combo.iter().map(|&i| metapaths[i].clone()).collect();
        let names: Vec<String> = subset.iter().map(|mp| mp.name.clone()).collect();
        let mut metrics = Vec::with_capacity(runs);
        let mut error = None;
        for run in 0..runs {
            // The same per-run seed across combinations pairs the
            // comparisons (identical splits and initial conditions).
            let run_seed = rng::sub_seed(base_seed, &format!("study-run-{run}"));
            let outcome = embed(&subset, run_seed)
                .map_err(EvalError::from)
                .and_then(|(z, dim)| probe_on_hin(hin, &z, dim, run_seed));
            match outcome {
                Ok(m) => metrics.push(m),
                Err(e) => {
                    error = Some(e.to_string());
                    metrics.clear();
                    break;
                }
            }
        }
        results.push(CombinationResult {
            indices: combo.clone(),
            names,
            runs: metrics,
            micro_mean: f64::NAN,
            micro_std: 0.0,
            macro_mean: f64::NAN,
            macro_std: 0.0,
            error,
        });
    }
    Ok(assemble_report(runs, results))
}

/// Runs the full sensitivity study: every combination of ≥ `min_size`
/// meta-paths is trained `runs` times and probed; per-combination and
/// aggregate variation statistics summarise how much the outcome depends
/// on the chosen meta-path set.
///
/// A failing combination is recorded with its error and excluded from the
/// aggregates rather than aborting the study.
pub fn sensitivity_study(
    hin: &Hin,
    metapaths: &[MetaPath],
    cfg: &TrainConfig,
    min_size: usize,
    runs: usize,
) -> Result<SensitivityReport, EvalError> {
    run_study(hin, metapaths, min_size, runs, cfg.seed, &|subset, seed| {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = seed;
        let model = train::train(hin, subset, run_cfg)?;
        Ok((model.embeddings, model.dim))
    })
}

/// The no-integration reference study: each meta-path in a combination is
/// trained on its own (a one-path run has nothing to integrate) and the
/// per-path embeddings are mean-pooled before probing.
pub fn baseline_study(
    hin: &Hin,
    metapaths: &[MetaPath],
    cfg: &TrainConfig,
    min_size: usize,
    runs: usize,
) -> Result<SensitivityReport, EvalError> {
    run_study(hin, metapaths, min_size, runs, cfg.seed, &|subset, seed| {
        let mut pooled: Vec<f64> = Vec::new();
        for mp in subset {
            let mut run_cfg = cfg.clone();
            run_cfg.seed = rng::sub_seed(seed, &mp.name);
            let model = train::train(hin, std::slice::from_ref(mp), run_cfg)?;
            if pooled.is_empty() {
                pooled = model.embeddings;
            } else {
                for (acc, v) in pooled.iter_mut().zip(&model.embeddings) {
                    *acc += v;
                }
            }
        }
        let scale = 1.0 / subset.len() as f64;
        for v in pooled.iter_mut() {
            *v *= scale;
        }
        Ok((pooled, cfg.dim))
    })
}

/// Writes the human-readable ranking table.
pub fn write_sensitivity_tsv(
    out: &mut impl Write,
    report: &SensitivityReport,
) -> std::io::Result<()> {
    writeln!(out, "rank\tmetapaths\tmicro_f1\tstd\tmacro_f1\tstd\tstatus")?;
    for (rank, &idx) in report.ranking.iter().enumerate() {
        let c = &report.combinations[idx];
        match &c.error {
            None => writeln!(
                out,
                "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\tok",
                rank + 1,
                c.names.join("+"),
                c.micro_mean,
                c.micro_std,
                c.macro_mean,
                c.macro_std,
            )?,
            Some(e) => writeln!(
                out,
                "{}\t{}\t-\t-\t-\t-\tfailed: {}",
                rank + 1,
                c.names.join("+"),
                e
            )?,
        }
    }
    writeln!(
        out,
        "# combinations std = {:.4}, min-max gap = {:.4}",
        report.aggregate_std, report.gap
    )
}
