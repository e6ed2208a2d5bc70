use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    EncoderDecoder,
    EncoderDecoderShared,
    DecoderLm,
    PrefixLm,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::EncoderDecoder,
        Architecture::EncoderDecoderShared,
        Architecture::DecoderLm,
        Architecture::PrefixLm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::EncoderDecoder => "encoder_decoder",
            Architecture::EncoderDecoderShared => "encoder_decoder_shared",
            Architecture::DecoderLm => "decoder_lm",
            Architecture::PrefixLm => "prefix_lm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown architecture {s:?}")))
    }

    pub fn has_encoder(self) -> bool {
        matches!(self, Architecture::EncoderDecoder | Architecture::EncoderDecoderShared)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_ff: usize,
    pub d_kv: usize,
    pub num_heads: usize,
    /// Layers per stack.
    pub num_layers: usize,
    pub vocab_size: usize,
    pub dropout_rate: f64,
    pub num_rel_buckets: usize,
    pub rel_max_distance: usize,
    pub architecture: Architecture,
    /// Divide attention logits by `sqrt(d_kv)`.
    #[serde(default)]
    pub scale_attention: bool,
    /// Inner width of adapter blocks, when inserted.
    #[serde(default)]
    pub adapter_dim: Option<usize>,
    /// Token fed to the decoder before the first target token.
    pub start_id: u32,
}

impl ModelConfig {
    pub fn new(d_model: usize, d_ff: usize, d_kv: usize, num_heads: usize, num_layers: usize, vocab_size: usize) -> Self {
        ModelConfig {
            d_model,
            d_ff,
            d_kv,
            num_heads,
            num_layers,
            vocab_size,
            dropout_rate: 0.1,
            num_rel_buckets: 32,
            rel_max_distance: 128,
            architecture: Architecture::EncoderDecoder,
            scale_attention: false,
            adapter_dim: None,
            start_id: 0,
        }
    }

    pub fn with_architecture(mut self, architecture: Architecture) -> Self {
        self.architecture = architecture;
        self
    }

    pub fn inner_dim(&self) -> usize {
        self.num_heads * self.d_kv
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("d_kv", self.d_kv),
            ("num_heads", self.num_heads),
            ("vocab_size", self.vocab_size),
            ("rel_max_distance", self.rel_max_distance),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.num_rel_buckets < 2 {
            return Err(Error::Config("num_rel_buckets must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} not in [0, 1)", self.dropout_rate)));
        }
        if self.adapter_dim == Some(0) {
            return Err(Error::Config("adapter dimension must be positive".into()));
        }
        if self.start_id as usize >= self.vocab_size {
            return Err(Error::Config(format!(
                "start id {} outside vocabulary of {}",
                self.start_id, self.vocab_size
            )));
        }
        Ok(())
    }

    /// Stable hash of the configuration, used to match checkpoints.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
