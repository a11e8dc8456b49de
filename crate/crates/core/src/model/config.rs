use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::wave::CombineMode;

/// Structural hyperparameters of a Wave Network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Embedding width. Must be even for the sinusoidal positional encoding.
    pub d: usize,
    pub vocab_size: usize,
    pub n_layers: usize,
    pub combine_mode: CombineMode,
    pub dropout_p: f64,
    pub max_len: usize,
    pub n_classes: usize,
    pub ffn_hidden: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 768,
            vocab_size: 30_000,
            n_layers: 1,
            combine_mode: CombineMode::Modulation,
            dropout_p: 0.1,
            max_len: 128,
            n_classes: 4,
            ffn_hidden: 4 * 768,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// A config with `ffn_hidden = 4·d`.
    pub fn new(d: usize, vocab_size: usize, n_classes: usize, combine_mode: CombineMode) -> Self {
        Self {
            d,
            vocab_size,
            n_classes,
            combine_mode,
            ffn_hidden: 4 * d,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d % 2 != 0 {
            return Err(Error::config("d", format!("must be a positive even number, got {}", self.d)));
        }
        if self.vocab_size < 2 {
            return Err(Error::config("vocab_size", "must hold at least PAD and UNK"));
        }
        if self.n_layers == 0 {
            return Err(Error::config("n_layers", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config("dropout_p", format!("{} not in [0, 1)", self.dropout_p)));
        }
        if self.max_len == 0 {
            return Err(Error::config("max_len", "must be at least 1"));
        }
        if self.n_classes < 2 {
            return Err(Error::config("n_classes", "must be at least 2"));
        }
        if self.ffn_hidden == 0 {
            return Err(Error::config("ffn_hidden", "must be at least 1"));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("d", self.d);
        doc.set("vocab_size", self.vocab_size);
        doc.set("n_layers", self.n_layers);
        doc.set("combine_mode", self.combine_mode);
        doc.set("dropout_p", self.dropout_p);
        doc.set("max_len", self.max_len);
        doc.set("n_classes", self.n_classes);
        doc.set("ffn_hidden", self.ffn_hidden);
        doc.set("seed", self.seed);
        doc
    }

    /// Reads every model key from `doc`, falling back to `base` for absent
    /// ones. `ffn_hidden` defaults to `4·d` when `d` is given without it.
    pub fn from_kv(doc: &KvDoc, base: &ModelConfig) -> Result<Self> {
        let d = doc.parse_opt("d")?.unwrap_or(base.d);
        let ffn_default = if doc.contains("d") { 4 * d } else { base.ffn_hidden };
        let cfg = Self {
            d,
            vocab_size: doc.parse_opt("vocab_size")?.unwrap_or(base.vocab_size),
            n_layers: doc.parse_opt("n_layers")?.unwrap_or(base.n_layers),
            combine_mode: doc.parse_opt("combine_mode")?.unwrap_or(base.combine_mode),
            dropout_p: doc.parse_opt("dropout_p")?.unwrap_or(base.dropout_p),
            max_len: doc.parse_opt("max_len")?.unwrap_or(base.max_len),
            n_classes: doc.parse_opt("n_classes")?.unwrap_or(base.n_classes),
            ffn_hidden: doc.parse_opt("ffn_hidden")?.unwrap_or(ffn_default),
            seed: doc.parse_opt("seed")?.unwrap_or(base.seed),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
