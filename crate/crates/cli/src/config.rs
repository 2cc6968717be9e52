//! Training run configuration read from TOML.
//!
//! ```toml
//! preset = "desk"          # or "full"; the tables below override it
//!
//! [model]
//! lstm_cells = 64
//!
//! [train]
//! epochs = 13
//! batch_size = 4
//!
//! [data]
//! min_count = 1
//! granularity = "char"
//! pinyin_embeddings = "vectors/pinyin.txt"
//! ```

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use p2c_core::corpus::Granularity;
use p2c_core::model::{ModelConfig, Variant};
use p2c_core::training::TrainConfig;
use serde::Deserialize;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Full,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub min_count: usize,
    pub granularity: Granularity,
    pub pinyin_embeddings: Option<PathBuf>,
    pub target_embeddings: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            min_count: 1,
            granularity: Granularity::Char,
            pinyin_embeddings: None,
            target_embeddings: None,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    preset: Preset,
    #[serde(default)]
    model: toml::Table,
    #[serde(default)]
    train: toml::Table,
    #[serde(default)]
    data: DataConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

fn overlay<T: serde::Serialize + serde::de::DeserializeOwned>(base: &T, over: toml::Table, what: &str) -> Result<T> {
    let mut table = toml::Table::try_from(base).context("serializing defaults")?;
    table.extend(over);
    toml::Value::Table(table)
        .try_into()
        .with_context(|| format!("invalid [{what}] table"))
}

impl RunConfig {
    pub fn parse(text: &str, variant: Variant) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text)?;
        for key in ["variant", "dropout"] {
            if raw.model.contains_key(key) {
                bail!("[model] may not set {key:?}: the variant comes from --variant and dropout from [train]");
            }
        }
        let (model, train) = match raw.preset {
            Preset::Desk => (ModelConfig::desk(variant), TrainConfig::desk()),
            Preset::Full => (ModelConfig::full(variant), TrainConfig::default()),
        };
        let train: TrainConfig = overlay(&train, raw.train, "train")?;
        let mut model: ModelConfig = overlay(&model, raw.model, "model")?;
        model.dropout = train.dropout;
        model.validate()?;
        train.validate()?;
        if raw.data.min_count == 0 {
            bail!("[data] min_count must be at least 1");
        }
        Ok(RunConfig {
            model,
            train,
            data: raw.data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_desk_preset() {
        let c = RunConfig::parse("", Variant::Gated).unwrap();
        assert_eq!(c.model, ModelConfig::desk(Variant::Gated));
        assert_eq!(c.train, TrainConfig::desk());
        assert_eq!(c.data, DataConfig::default());
    }

    #[test]
    fn tables_override_the_preset() {
        let c = RunConfig::parse("preset = \"full\"\n[model]\nlstm_layers = 2\n[train]\nepochs = 3\nhalve_after_epoch = 1\ndropout = 0.1\n", Variant::Basic).unwrap();
        assert_eq!(c.model.lstm_layers, 2);
        assert_eq!(c.model.lstm_cells, 500);
        assert_eq!(c.model.dropout, 0.1);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_size, 64);
    }

    #[test]
    fn rejects_bad_settings() {
        for text in ["[model]\ndropout = 0.2\n", "[model]\nlayers = 2\n", "[train]\nepochs = 0\n", "[data]\nmin_count = 0\n", "preset = \"huge\"\n"] {
            assert!(RunConfig::parse(text, Variant::Gated).is_err(), "{text}");
        }
    }
}
