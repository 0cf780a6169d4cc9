//! Named parameters, their optimiser, and checkpoint I/O.
//!
//! Parameters live *outside* the tape in a [`ParamStore`]: a name, a shape,
//! a value buffer, a gradient buffer, and a `trainable` flag. Each forward
//! pass creates a fresh tape and a [`Binding`] that mirrors parameters onto
//! it as leaves — trainable ones with gradient tracking, frozen ones
//! without. Binding the same parameter twice yields the *same* tape node,
//! so weight sharing (a projection head used by two views, a relation
//! matrix used by every layer) falls out of identity rather than
//! convention, and gradient contributions from every use accumulate in one
//! buffer.
//!
//! [`Adam`] keeps first/second-moment state per parameter and is
//! instantiated once per optimised group, so the two groups of the
//! alternating scheme have independent step counters and moments.
//!
//! Checkpoints are a flat binary file of `[name][shape][f64 LE payload]`
//! records plus a JSON manifest describing the records and carrying
//! run-level metadata. Values round-trip bit-exactly.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use super::{Tape, Tensor};

/// Stable identifier of a parameter within its store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// How to fill a freshly created parameter.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Glorot/Xavier uniform: `U(−l, l)` with `l = √(6 / (rows + cols))`.
    Glorot,
    Zeros,
    Ones,
    Const(f64),
}

/// One named tensor of learnable state.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub trainable: bool,
}

impl Param {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All parameters of a model, in creation order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    /// Registers a new trainable parameter. Names must be unique.
    pub fn add(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name `{name}`"
        );
        let n = rows * cols;
        let value = match init {
            Init::Glorot => {
                let l = (6.0 / (rows + cols) as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-l..l)).collect()
            }
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Const(c) => vec![c; n],
        };
        let id = self.params.len();
        self.by_name.insert(name.to_string(), id);
        self.params.push(Param {
            name: name.to_string(),
            rows,
            cols,
            value,
            grad: vec![0.0; n],
            trainable: true,
        });
        ParamId(id)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of scalar entries across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    pub fn set_trainable(&mut self, ids: &[ParamId], trainable: bool) {
        for &id in ids {
            self.params[id.0].trainable = trainable;
        }
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for p in &mut self.params {
            p.trainable = trainable;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Global L2 norm of the gradients of `ids`.
    pub fn grad_norm(&self, ids: &[ParamId]) -> f64 {
        ids.iter()
            .flat_map(|&id| self.params[id.0].grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

/// Mirrors parameters of one store onto one tape, each exactly once.
pub struct Binding {
    tape: Tape,
    bound: BTreeMap<usize, Tensor>,
}

impl Binding {
    pub fn new(tape: &Tape) -> Binding {
        Binding {
            tape: tape.clone(),
            bound: BTreeMap::new(),
        }
    }

    /// The tape leaf for `id`, creating it on first use. Frozen parameters
    /// become non-gradient leaves: their values flow forward (and gradients
    /// flow *through* them to other nodes) but their own buffers stay zero.
    pub fn bind(&mut self, store: &ParamStore, id: ParamId) -> Tensor {
        if let Some(t) = self.bound.get(&id.0) {
            return t.clone();
        }
        let p = store.get(id);
        let t = self
            .tape
            .leaf(p.rows, p.cols, p.value.clone(), p.trainable);
        self.bound.insert(id.0, t.clone());
        t
    }

    /// Ids bound so far — the audit trail of which parameters a forward
    /// pass actually touched.
    pub fn bound_ids(&self) -> BTreeSet<ParamId> {
        self.bound.keys().map(|&i| ParamId(i)).collect()
    }

    /// The tape node id a parameter was bound to, if it was bound.
    pub fn node_id(&self, id: ParamId) -> Option<usize> {
        self.bound.get(&id.0).map(Tensor::id)
    }

    /// Copies tape gradients back into the store after `backward`.
    pub fn collect_grads(&self, store: &mut ParamStore) {
        for (&i, t) in &self.bound {
            store.params[i].grad = t.grad();
        }
    }
}

/// Adam with bias correction. One instance per optimised parameter group.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    state: BTreeMap<usize, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            state: BTreeMap::new(),
        }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update to every *trainable* parameter in `ids`, using
    /// the gradients currently held by the store.
    pub fn step(&mut self, store: &mut ParamStore, ids: &[ParamId]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for &id in ids {
            let p = store.get_mut(id);
            if !p.trainable {
                continue;
            }
            let (m, v) = self
                .state
                .entry(id.0)
                .or_insert_with(|| (vec![0.0; p.value.len()], vec![0.0; p.value.len()]));
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p.value[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Checkpoint failures: I/O, malformed metadata, or records that do not
/// match their manifest.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

const CHECKPOINT_FORMAT: &str = "lamp-checkpoint-v1";

#[derive(serde::Serialize, serde::Deserialize)]
struct ManifestParam {
    name: String,
    rows: usize,
    cols: usize,
    trainable: bool,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Manifest {
    format: String,
    params: Vec<ManifestParam>,
    #[serde(default)]
    extra: serde_json::Map<String, serde_json::Value>,
}

/// Writes `store` as a binary record file plus a JSON manifest.
///
/// `extra` carries run-level metadata (seed, config hash, epoch count) into
/// the manifest untouched.
pub fn save_checkpoint(
    store: &ParamStore,
    bin_path: &Path,
    manifest_path: &Path,
    extra: serde_json::Map<String, serde_json::Value>,
) -> Result<(), CheckpointError> {
    let mut bin = Vec::new();
    let mut manifest = Manifest {
        format: CHECKPOINT_FORMAT.to_string(),
        params: Vec::new(),
        extra,
    };
    for (_, p) in store.iter() {
        bin.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        bin.extend_from_slice(p.name.as_bytes());
        bin.extend_from_slice(&(p.rows as u32).to_le_bytes());
        bin.extend_from_slice(&(p.cols as u32).to_le_bytes());
        for v in &p.value {
            bin.extend_from_slice(&v.to_le_bytes());
        }
        manifest.params.push(ManifestParam {
            name: p.name.clone(),
            rows: p.rows,
            cols: p.cols,
            trainable: p.trainable,
        });
    }
    std::fs::File::create(bin_path)?.write_all(&bin)?;
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(manifest_path, json + "\n")?;
    Ok(())
}

/// A checkpoint read back from disk.
#[derive(Debug)]
pub struct Checkpoint {
    pub store: ParamStore,
    pub extra: serde_json::Map<String, serde_json::Value>,
}

/// Reads a checkpoint, verifying every record against the manifest.
pub fn load_checkpoint(bin_path: &Path, manifest_path: &Path) -> Result<Checkpoint, CheckpointError> {
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(manifest_path)?)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(CheckpointError::Corrupt(format!(
            "unsupported format `{}` (expected `{CHECKPOINT_FORMAT}`)",
            manifest.format
        )));
    }
    let mut bin = Vec::new();
    std::fs::File::open(bin_path)?.read_to_end(&mut bin)?;
    let mut reader = RecordReader { bin: &bin, at: 0 };
    let mut store = ParamStore::new();
    for mp in &manifest.params {
        let name_len = u32::from_le_bytes(reader.take(4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(reader.take(name_len)?.to_vec())
            .map_err(|_| CheckpointError::Corrupt("record name is not UTF-8".into()))?;
        let rows = u32::from_le_bytes(reader.take(4)?.try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(reader.take(4)?.try_into().unwrap()) as usize;
        if name != mp.name || rows != mp.rows || cols != mp.cols {
            return Err(CheckpointError::Corrupt(format!(
                "record `{name}` ({rows}x{cols}) does not match manifest entry `{}` ({}x{})",
                mp.name, mp.rows, mp.cols
            )));
        }
        let payload = reader.take(rows * cols * 8)?;
        let value: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let id = store.add(&name, rows, cols, Init::Zeros, &mut NoRng);
        let p = store.get_mut(id);
        p.value = value;
        p.trainable = mp.trainable;
    }
    if reader.at != bin.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} trailing bytes after the last record",
            bin.len() - reader.at
        )));
    }
    Ok(Checkpoint {
        store,
        extra: manifest.extra,
    })
}

struct RecordReader<'a> {
    bin: &'a [u8],
    at: usize,
}

impl<'a> RecordReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.at + n > self.bin.len() {
            return Err(CheckpointError::Corrupt(format!(
                "binary file truncated at byte {}",
                self.at
            )));
        }
        let s = &self.bin[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
}

/// An `Rng` for code paths that must never draw randomness.
struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("NoRng must not be sampled")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("NoRng must not be sampled")
    }
    fn fill_bytes(&mut self, _dest: &mut [u8]) {
        unreachable!("NoRng must not be sampled")
    }
    fn try_fill_bytes(&mut self, _dest: &mut [u8]) -> Result<(), rand::Error> {
        unreachable!("NoRng must not be sampled")
    }
}

/// Glorot bound for a `rows×cols` matrix, exposed for tests.
pub fn glorot_limit(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}
