//! Training configuration: defaults, the `key = value` file format, and
//! the resolved-config hash.
//!
//! A config file is line-oriented text. Blank lines and lines starting
//! with `#` are ignored; every other line must be `key = value`. Unknown
//! and duplicate keys are rejected — a typo should fail loudly, not
//! silently train with defaults.
//!
//! Every run prints `config_hash(...)`, an FNV-1a hash of the canonical
//! serialization, so two runs can be compared for identical configuration
//! at a glance.

use std::fmt;
use std::path::Path;

use thiserror::Error;

/// Configuration errors, each pointing at the offending line or key.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("config line {line_no}: expected `key = value`, got `{line}`")]
    Syntax { line_no: usize, line: String },
    #[error("config line {line_no}: unknown key `{key}`")]
    UnknownKey { line_no: usize, key: String },
    #[error("config line {line_no}: key `{key}` appears more than once")]
    DuplicateKey { line_no: usize, key: String },
    #[error("config line {line_no}: `{key}` expects {expected}, got `{value}`")]
    BadValue {
        line_no: usize,
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("config: `{key}` = {value} is outside the supported range {range}")]
    OutOfRange {
        key: &'static str,
        value: String,
        range: &'static str,
    },
}

/// All hyper-parameters of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Weight λ of the retention regularizer in the augmenter's objective.
    pub lambda_reg: f64,
    /// InfoNCE temperature.
    pub tau_nce: f64,
    /// Gumbel sampling temperature.
    pub tau_gumbel: f64,
    /// Positive-set threshold `T_pos`.
    pub t_pos: usize,
    /// Random edge-drop rate ρ.
    pub drop_rate: f64,
    /// Adam learning rate (both groups).
    pub lr: f64,
    /// Feature dropout on the projected inputs.
    pub dropout: f64,
    /// Early-stopping patience, in epochs.
    pub patience: usize,
    /// Maximum number of epochs.
    pub epochs: usize,
    /// Root seed; all streams derive from it.
    pub seed: u64,
    /// Embedding width `d`.
    pub dim: usize,
    /// Encoder depth `L`.
    pub layers: usize,
    /// Augmenter GCN depth `K`.
    pub gcn_layers: usize,
    /// Edge-residual mixing weight β.
    pub beta: f64,
    /// Attention heads per encoder layer.
    pub heads: usize,
    /// Keep γ at its initial value (ablation wiring).
    pub freeze_gamma: bool,
    /// Regularize mean raw logits instead of mean retention.
    pub reg_raw_logits: bool,
    /// Cap on negatives per anchor; 0 = use all.
    pub neg_samples: usize,
    /// Densest intermediate product allowed during materialization.
    pub density_budget: usize,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            lambda_reg: 0.3,
            tau_nce: 0.5,
            tau_gumbel: 1.0,
            t_pos: 7,
            drop_rate: 0.5,
            lr: 5e-3,
            dropout: 0.2,
            patience: 30,
            epochs: 200,
            seed: 0,
            dim: 64,
            layers: 2,
            gcn_layers: 2,
            beta: 0.05,
            heads: 1,
            freeze_gamma: false,
            reg_raw_logits: false,
            neg_samples: 0,
            density_budget: 200_000_000,
        }
    }
}

/// One macro source of truth for the key list, so parsing, serialization,
/// and the unknown-key check can never drift apart.
macro_rules! for_each_key {
    ($m:ident) => {
        $m!(lambda_reg, f64, "a number");
        $m!(tau_nce, f64, "a number");
        $m!(tau_gumbel, f64, "a number");
        $m!(t_pos, usize, "a non-negative integer");
        $m!(drop_rate, f64, "a number");
        $m!(lr, f64, "a number");
        $m!(dropout, f64, "a number");
        $m!(patience, usize, "a non-negative integer");
        $m!(epochs, usize, "a non-negative integer");
        $m!(seed, u64, "a non-negative integer");
        $m!(dim, usize, "a non-negative integer");
        $m!(layers, usize, "a non-negative integer");
        $m!(gcn_layers, usize, "a non-negative integer");
        $m!(beta, f64, "a number");
        $m!(heads, usize, "a non-negative integer");
        $m!(freeze_gamma, bool, "`true` or `false`");
        $m!(reg_raw_logits, bool, "`true` or `false`");
        $m!(neg_samples, usize, "a non-negative integer");
        $m!(density_budget, usize, "a non-negative integer");
    };
}

impl TrainConfig {
    /// Parses a config file's text, applying overrides to the defaults,
    /// then validates the result.
    pub fn parse(text: &str) -> Result<TrainConfig, ConfigError> {
        let mut cfg = TrainConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line_no,
                line: line.to_string(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(ConfigError::DuplicateKey {
                    line_no,
                    key: key.to_string(),
                });
            }
            cfg.apply(line_no, key, value)?;
            seen.push(key.to_string());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and parses a config file from disk.
    pub fn load(path: &Path) -> Result<TrainConfig, ConfigError> {
        TrainConfig::parse(&std::fs::read_to_string(path)?)
    }

    fn apply(&mut self, line_no: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        macro_rules! try_apply {
            ($field:ident, $ty:ty, $expected:literal) => {
                if key == stringify!($field) {
                    self.$field = value.parse::<$ty>().map_err(|_| ConfigError::BadValue {
                        line_no,
                        key: key.to_string(),
                        value: value.to_string(),
                        expected: $expected,
                    })?;
                    return Ok(());
                }
            };
        }
        for_each_key!(try_apply);
        Err(ConfigError::UnknownKey {
            line_no,
            key: key.to_string(),
        })
    }

    /// Enforces the supported hyper-parameter ranges.
    pub fn validate(&self) -> Result<(), ConfigError> {
        fn bad(key: &'static str, value: impl fmt::Display, range: &'static str) -> ConfigError {
            ConfigError::OutOfRange {
                key,
                value: value.to_string(),
                range,
            }
        }
        if !(1e-4..=5e-2).contains(&self.lr) {
            return Err(bad("lr", self.lr, "[1e-4, 5e-2]"));
        }
        if !(0.1..=0.5).contains(&self.dropout) {
            return Err(bad("dropout", self.dropout, "[0.1, 0.5]"));
        }
        if !(5..=200).contains(&self.patience) {
            return Err(bad("patience", self.patience, "[5, 200]"));
        }
        if !(self.lambda_reg >= 0.0) {
            return Err(bad("lambda_reg", self.lambda_reg, "[0, ∞)"));
        }
        if !(self.tau_nce > 0.0) {
            return Err(bad("tau_nce", self.tau_nce, "(0, ∞)"));
        }
        if !(self.tau_gumbel > 0.0) {
            return Err(bad("tau_gumbel", self.tau_gumbel, "(0, ∞)"));
        }
        if self.t_pos < 1 {
            return Err(bad("t_pos", self.t_pos, "[1, ∞)"));
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return Err(bad("drop_rate", self.drop_rate, "[0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(bad("beta", self.beta, "[0, 1]"));
        }
        for (key, v) in [
            ("dim", self.dim),
            ("layers", self.layers),
            ("gcn_layers", self.gcn_layers),
            ("heads", self.heads),
        ] {
            if v < 1 {
                return Err(match key {
                    "dim" => bad("dim", v, "[1, ∞)"),
                    "layers" => bad("layers", v, "[1, ∞)"),
                    "gcn_layers" => bad("gcn_layers", v, "[1, ∞)"),
                    _ => bad("heads", v, "[1, ∞)"),
                });
            }
        }
        Ok(())
    }

    /// Canonical `key = value` serialization, one line per key in a fixed
    /// order. `parse(canonical_text())` reproduces the config exactly.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        macro_rules! emit {
            ($field:ident, $ty:ty, $expected:literal) => {
                out.push_str(&format!("{} = {}\n", stringify!($field), self.$field));
            };
        }
        for_each_key!(emit);
        out
    }

    /// FNV-1a 64-bit hash of the canonical serialization, in hex.
    pub fn hash(&self) -> String {
        format!("{:016x}", fnv1a(self.canonical_text().as_bytes()))
    }
}

/// FNV-1a, 64-bit.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_their_documentation() {
        let c = TrainConfig::default();
        assert_eq!(c.lambda_reg, 0.3);
        assert_eq!(c.tau_nce, 0.5);
        assert_eq!(c.tau_gumbel, 1.0);
        assert_eq!(c.t_pos, 7);
        assert_eq!(c.drop_rate, 0.5);
        assert_eq!(c.lr, 5e-3);
        assert_eq!(c.dropout, 0.2);
        assert_eq!(c.patience, 30);
        assert_eq!(c.epochs, 200);
        assert_eq!(c.dim, 64);
        assert_eq!((c.layers, c.gcn_layers, c.heads), (2, 2, 1));
        assert_eq!(c.beta, 0.05);
        assert!(!c.freeze_gamma && !c.reg_raw_logits);
        c.validate().unwrap();
    }

    #[test]
    fn overrides_comments_and_blanks_parse() {
        let text = "\n# a comment\nlambda_reg = 1.5\n  epochs=10  \nfreeze_gamma = true\n";
        let c = TrainConfig::parse(text).unwrap();
        assert_eq!(c.lambda_reg, 1.5);
        assert_eq!(c.epochs, 10);
        assert!(c.freeze_gamma);
        // Untouched keys keep their defaults.
        assert_eq!(c.dim, 64);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = TrainConfig::parse("lamda_reg = 0.5\n").unwrap_err();
        assert!(matches!(
            err,
            ConfigError::UnknownKey { line_no: 1, ref key } if key == "lamda_reg"
        ));
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let err = TrainConfig::parse("epochs = 5\nepochs = 6\n").unwrap_err();
        assert!(matches!(
            err,
            ConfigError::DuplicateKey { line_no: 2, ref key } if key == "epochs"
        ));
    }

    #[test]
    fn malformed_lines_and_values_are_rejected() {
        assert!(matches!(
            TrainConfig::parse("epochs\n").unwrap_err(),
            ConfigError::Syntax { line_no: 1, .. }
        ));
        assert!(matches!(
            TrainConfig::parse("epochs = many\n").unwrap_err(),
            ConfigError::BadValue { ref key, .. } if key == "epochs"
        ));
        assert!(matches!(
            TrainConfig::parse("freeze_gamma = yes\n").unwrap_err(),
            ConfigError::BadValue { ref key, .. } if key == "freeze_gamma"
        ));
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        for (text, key) in [
            ("lr = 0.1\n", "lr"),
            ("lr = 0.00001\n", "lr"),
            ("dropout = 0.05\n", "dropout"),
            ("dropout = 0.6\n", "dropout"),
            ("patience = 3\n", "patience"),
            ("patience = 500\n", "patience"),
            ("drop_rate = 1.0\n", "drop_rate"),
            ("tau_nce = 0\n", "tau_nce"),
            ("t_pos = 0\n", "t_pos"),
            ("dim = 0\n", "dim"),
            ("beta = 1.5\n", "beta"),
        ] {
            let err = TrainConfig::parse(text).unwrap_err();
            assert!(
                matches!(err, ConfigError::OutOfRange { key: k, .. } if k == key),
                "{text:?} should fail on `{key}`, got: {err}"
            );
        }
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut c = TrainConfig::default();
        c.lambda_reg = 0.125;
        c.seed = 987654321;
        c.freeze_gamma = true;
        let back = TrainConfig::parse(&c.canonical_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = TrainConfig::default();
        let b = TrainConfig::default();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        let mut c = TrainConfig::default();
        c.seed = 1;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn fnv1a_matches_reference_vectors() {
        // Standard FNV-1a 64 test vectors.
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }
}
