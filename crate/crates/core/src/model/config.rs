use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Which source encoder the model uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Pinyin only; the context is ignored.
    Basic,
    /// Context tokens, a BC separator and the pinyin, read by one encoder.
    #[serde(alias = "simple")]
    SimpleConcat,
    /// BiGRU pinyin and context encoders joined by gated attention.
    Gated,
}

impl Variant {
    pub fn uses_context(self) -> bool {
        self != Variant::Basic
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Basic => "basic",
            Variant::SimpleConcat => "simple",
            Variant::Gated => "gated",
        })
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "basic" => Ok(Variant::Basic),
            "simple" | "simple_concat" => Ok(Variant::SimpleConcat),
            "gated" => Ok(Variant::Gated),
            other => Err(ModelError::Config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub pinyin_embed: usize,
    pub target_embed: usize,
    /// Hidden units per direction of each BiGRU.
    pub gru_hidden: usize,
    pub lstm_layers: usize,
    /// Cells per direction of each encoder layer; also the decoder width.
    pub lstm_cells: usize,
    pub ga_hops: usize,
    pub dropout: f64,
}

impl ModelConfig {
    /// Small configuration for CPU-scale experiments.
    pub fn desk(variant: Variant) -> Self {
        ModelConfig {
            variant,
            pinyin_embed: 32,
            target_embed: 32,
            gru_hidden: 32,
            lstm_layers: 1,
            lstm_cells: 64,
            ga_hops: 2,
            dropout: 0.3,
        }
    }

    /// Full-size setting: 3 x 500 LSTM, BiGRU 100, 3 attention hops.
    pub fn full(variant: Variant) -> Self {
        ModelConfig {
            variant,
            pinyin_embed: 500,
            target_embed: 500,
            gru_hidden: 100,
            lstm_layers: 3,
            lstm_cells: 500,
            ga_hops: 3,
            dropout: 0.3,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("pinyin_embed", self.pinyin_embed),
            ("target_embed", self.target_embed),
            ("gru_hidden", self.gru_hidden),
            ("lstm_layers", self.lstm_layers),
            ("lstm_cells", self.lstm_cells),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.variant == Variant::Gated && self.ga_hops == 0 {
            return Err(ModelError::Config("ga_hops must be at least 1".into()));
        }
        Ok(())
    }
}
