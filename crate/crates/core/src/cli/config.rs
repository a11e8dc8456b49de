use std::fs;
use std::path::{Path, PathBuf};

use crate::data::DatasetSchema;
use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::model::ModelConfig;
use crate::train::TrainConfig;

const MODEL_KEYS: &[&str] = &[
    "d",
    "vocab_size",
    "n_layers",
    "combine_mode",
    "dropout_p",
    "max_len",
    "n_classes",
    "ffn_hidden",
    "seed",
];
const TRAIN_KEYS: &[&str] = &[
    "lr",
    "beta1",
    "beta2",
    "adam_eps",
    "batch_size",
    "epochs",
    "eval_every",
    "split_ratio",
    "min_freq",
    "max_vocab",
    "train_subset",
    "max_steps",
];
const SCHEMA_KEYS: &[&str] = &["dataset", "label_column", "text_columns", "label_base", "has_header"];
const OTHER_KEYS: &[&str] = &[
    "data",
    "out",
    "checkpoint",
    "train_file",
    "test_file",
    "vocab",
    "metrics",
    "suite",
    "text",
    "seq_len",
    "n_batches",
    "instances",
];

/// Everything a command needs, merged from the config file and flags.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub doc: KvDoc,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub schema: DatasetSchema,
}

impl RunConfig {
    /// Reads `path` (if any), applies `overrides` on top and parses every
    /// section. Unknown keys are rejected.
    pub fn load(path: Option<&Path>, overrides: &KvDoc) -> Result<Self> {
        let mut doc = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::config("config", format!("{}: {e}", p.display())))?;
                KvDoc::parse(&text)?
            }
            None => KvDoc::new(),
        };
        doc.merge(overrides);
        Self::from_doc(doc)
    }

    pub fn from_doc(doc: KvDoc) -> Result<Self> {
        let known = |k: &str| [MODEL_KEYS, TRAIN_KEYS, SCHEMA_KEYS, OTHER_KEYS].iter().any(|set| set.contains(&k));
        if let Some(k) = doc.keys().find(|k| !known(k)) {
            return Err(Error::config(k, "unknown key"));
        }
        let schema = DatasetSchema::from_kv(&doc)?;
        let base = ModelConfig {
            n_classes: schema.n_classes,
            ..ModelConfig::default()
        };
        let model = ModelConfig::from_kv(&doc, &base)?;
        if model.n_classes != schema.n_classes {
            return Err(Error::config(
                "n_classes",
                format!("model has {} classes but dataset `{}` has {}", model.n_classes, schema.name, schema.n_classes),
            ));
        }
        let train = TrainConfig::from_kv(&doc, &TrainConfig::default())?;
        Ok(Self {
            doc,
            model,
            train,
            schema,
        })
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.doc.get(key).map(PathBuf::from)
    }

    pub fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.doc.parse_opt(key)?.unwrap_or(default))
    }

    /// Train and test CSV paths under the `data` directory.
    pub fn data_files(&self) -> Result<(PathBuf, PathBuf)> {
        let dir = self
            .path("data")
            .ok_or_else(|| Error::config("data", "no dataset directory given (use --data)"))?;
        let train = dir.join(self.doc.get("train_file").unwrap_or("train.csv"));
        let test = dir.join(self.doc.get("test_file").unwrap_or("test.csv"));
        for p in [&train, &test] {
            if !p.is_file() {
                return Err(Error::Data(format!("dataset file {} does not exist", p.display())));
            }
        }
        Ok((train, test))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "# smoke\nd = 128\ncombine_mode = modulation\nepochs = 2\n").unwrap();
        let mut flags = KvDoc::new();
        flags.set("--combine-mode", "interference");
        let rc = RunConfig::load(Some(&path), &flags).unwrap();
        assert_eq!(rc.model.d, 128);
        assert_eq!(rc.model.ffn_hidden, 512);
        assert_eq!(rc.model.combine_mode.as_str(), "interference");
        assert_eq!(rc.train.epochs, 2);
        assert_eq!(rc.schema.name, "ag_news");
    }

    #[test]
    fn errors_name_the_key() {
        for (text, key) in [("d = 7", "d"), ("lr = -1", "lr"), ("colour = red", "colour"), ("dataset = imdb\nn_classes = 4", "n_classes")] {
            let err = RunConfig::from_doc(KvDoc::parse(text).unwrap()).unwrap_err();
            assert!(matches!(err, Error::Config { key: ref k, .. } if k == key), "{text}: {err}");
        }
    }

    #[test]
    fn dataset_preset_sets_classes() {
        let rc = RunConfig::from_doc(KvDoc::parse("dataset = dbpedia14").unwrap()).unwrap();
        assert_eq!(rc.model.n_classes, 14);
    }
}
