use crate::error::{Error, Result};
use crate::kv::KvDoc;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Evaluate on the test split every this many optimizer steps.
    pub eval_every: Option<usize>,
    pub seed: u64,
    pub split_ratio: f64,
    pub min_freq: usize,
    pub max_vocab: usize,
    /// Use only the first `n` training rows (after loading, before the split).
    pub train_subset: Option<usize>,
    /// Stop after this many optimizer steps in total.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 64,
            epochs: 4,
            eval_every: None,
            seed: 0,
            split_ratio: 0.8,
            min_freq: 2,
            max_vocab: 30_000,
            train_subset: None,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive and finite"));
        }
        for (key, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(key, "must lie in [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("adam_eps", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.eval_every == Some(0) {
            return Err(Error::config("eval_every", "must be at least 1"));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::config("split_ratio", "must lie in (0, 1)"));
        }
        if self.max_vocab < 3 {
            return Err(Error::config("max_vocab", "must be at least 3"));
        }
        if self.train_subset.is_some_and(|n| n < 2) {
            return Err(Error::config("train_subset", "must be at least 2"));
        }
        Ok(())
    }

    pub fn from_kv(doc: &KvDoc, base: &TrainConfig) -> Result<Self> {
        let cfg = Self {
            lr: doc.parse_opt("lr")?.unwrap_or(base.lr),
            beta1: doc.parse_opt("beta1")?.unwrap_or(base.beta1),
            beta2: doc.parse_opt("beta2")?.unwrap_or(base.beta2),
            adam_eps: doc.parse_opt("adam_eps")?.unwrap_or(base.adam_eps),
            batch_size: doc.parse_opt("batch_size")?.unwrap_or(base.batch_size),
            epochs: doc.parse_opt("epochs")?.unwrap_or(base.epochs),
            eval_every: opt_count(doc, "eval_every")?.unwrap_or(base.eval_every),
            seed: doc.parse_opt("seed")?.unwrap_or(base.seed),
            split_ratio: doc.parse_opt("split_ratio")?.unwrap_or(base.split_ratio),
            min_freq: doc.parse_opt("min_freq")?.unwrap_or(base.min_freq),
            max_vocab: doc.parse_opt("max_vocab")?.unwrap_or(base.max_vocab),
            train_subset: opt_count(doc, "train_subset")?.unwrap_or(base.train_subset),
            max_steps: opt_count(doc, "max_steps")?.unwrap_or(base.max_steps),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("lr", self.lr);
        doc.set("beta1", self.beta1);
        doc.set("beta2", self.beta2);
        doc.set("adam_eps", self.adam_eps);
        doc.set("batch_size", self.batch_size);
        doc.set("epochs", self.epochs);
        doc.set("seed", self.seed);
        doc.set("split_ratio", self.split_ratio);
        doc.set("min_freq", self.min_freq);
        doc.set("max_vocab", self.max_vocab);
        let off = |v: Option<usize>| v.map_or("off".to_string(), |n| n.to_string());
        doc.set("eval_every", off(self.eval_every));
        doc.set("train_subset", off(self.train_subset));
        doc.set("max_steps", off(self.max_steps));
        doc
    }
}

/// `off` (or absent) means unset.
fn opt_count(doc: &KvDoc, key: &str) -> Result<Option<Option<usize>>> {
    match doc.get(key) {
        None => Ok(None),
        Some("off") | Some("none") => Ok(Some(None)),
        Some(_) => Ok(Some(Some(doc.require(key)?))),
    }
}
