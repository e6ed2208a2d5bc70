//! Size presets and compute-scaling plans.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Vocabulary size of the released models, used when none is given.
pub const DEFAULT_VOCAB_SIZE: usize = 32128;

pub const PRESET_NAMES: [&str; 5] = ["small", "base", "large", "3b", "11b"];

pub fn preset(name: &str, vocab_size: usize) -> Result<ModelConfig> {
    let (d_model, d_ff, d_kv, heads, layers) = match name {
        "small" => (512, 2048, 64, 8, 6),
        "base" => (768, 3072, 64, 12, 12),
        "large" => (1024, 4096, 64, 16, 24),
        "3b" | "xl-3b-like" => (1024, 16384, 128, 32, 24),
        "11b" | "xxl-11b-like" => (1024, 65536, 128, 128, 24),
        _ => return Err(Error::Parameter(format!("unknown preset {name:?}"))),
    };
    Ok(ModelConfig::new(d_model, d_ff, d_kv, heads, layers, vocab_size))
}

/// Presets whose weights are too large to allocate without opting in.
pub fn is_oversized(name: &str) -> bool {
    matches!(name, "large" | "3b" | "xl-3b-like" | "11b" | "xxl-11b-like")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingStrategy {
    MoreSteps,
    BiggerBatch,
    BiggerModel,
    Ensemble,
    EnsembleFinetuneOnly,
}

impl ScalingStrategy {
    pub const ALL: [ScalingStrategy; 5] = [
        ScalingStrategy::MoreSteps,
        ScalingStrategy::BiggerBatch,
        ScalingStrategy::BiggerModel,
        ScalingStrategy::Ensemble,
        ScalingStrategy::EnsembleFinetuneOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScalingStrategy::MoreSteps => "more_steps",
            ScalingStrategy::BiggerBatch => "bigger_batch",
            ScalingStrategy::BiggerModel => "bigger_model",
            ScalingStrategy::Ensemble => "ensemble",
            ScalingStrategy::EnsembleFinetuneOnly => "ensemble_finetune_only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown scaling strategy {s:?}")))
    }
}

/// One pre-train + fine-tune job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub model: ModelConfig,
    pub pretrain_steps: u64,
    pub finetune_steps: u64,
    pub batch_tokens: usize,
    pub pretrain_seed: u64,
    pub finetune_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPlan {
    pub strategy: ScalingStrategy,
    pub multiplier: u32,
    pub runs: Vec<RunSpec>,
    /// Members are evaluated together by averaging logits.
    pub ensemble: bool,
}

impl ScalingPlan {
    pub fn to_manifest(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("bad plan manifest: {e}")))
    }
}

/// Expands `strategy` at `multiplier` times the compute of `base`.
pub fn scaling_plan(base: &RunSpec, multiplier: u32, strategy: ScalingStrategy) -> Result<ScalingPlan> {
    if multiplier == 0 {
        return Err(Error::Parameter("compute multiplier must be at least 1".into()));
    }
    let m = multiplier as u64;
    let runs = match strategy {
        ScalingStrategy::MoreSteps => vec![RunSpec {
            pretrain_steps: base.pretrain_steps * m,
            finetune_steps: base.finetune_steps * m,
            ..base.clone()
        }],
        ScalingStrategy::BiggerBatch => vec![RunSpec {
            batch_tokens: base.batch_tokens * multiplier as usize,
            ..base.clone()
        }],
        ScalingStrategy::BiggerModel => {
            let mut model = base.model.clone();
            model.num_layers *= multiplier as usize;
            vec![RunSpec { model, ..base.clone() }]
        }
        ScalingStrategy::Ensemble => (0..m)
            .map(|i| RunSpec {
                pretrain_seed: base.pretrain_seed + i,
                finetune_seed: base.finetune_seed + i,
                ..base.clone()
            })
            .collect(),
        ScalingStrategy::EnsembleFinetuneOnly => (0..m)
            .map(|i| RunSpec {
                finetune_seed: base.finetune_seed + i,
                ..base.clone()
            })
            .collect(),
    };
    Ok(ScalingPlan {
        strategy,
        multiplier,
        ensemble: matches!(strategy, ScalingStrategy::Ensemble | ScalingStrategy::EnsembleFinetuneOnly),
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::count_params;

    fn base_run() -> RunSpec {
        RunSpec {
            model: preset("base", DEFAULT_VOCAB_SIZE).unwrap(),
            pretrain_steps: 1 << 19,
            finetune_steps: 1 << 18,
            batch_tokens: 1 << 16,
            pretrain_seed: 1,
            finetune_seed: 2,
        }
    }

    #[test]
    fn preset_shapes() {
        let b = preset("base", DEFAULT_VOCAB_SIZE).unwrap();
        assert_eq!((b.d_model, b.d_ff, b.d_kv, b.num_heads, b.num_layers), (768, 3072, 64, 12, 12));
        let s = preset("small", DEFAULT_VOCAB_SIZE).unwrap();
        assert_eq!((s.d_model, s.d_ff, s.num_heads, s.num_layers), (512, 2048, 8, 6));
        assert!(preset("tiny", 10).is_err());
    }

    #[test]
    fn preset_sizes_near_stated_counts() {
        let count = |n| count_params(&preset(n, DEFAULT_VOCAB_SIZE).unwrap()) as f64;
        assert!((200e6..=240e6).contains(&count("base")));
        assert!((50e6..=70e6).contains(&count("small")));
        assert!((700e6..=800e6).contains(&count("large")));
        assert!((2.7e9..=3.0e9).contains(&count("3b")));
        assert!((10.5e9..=11.5e9).contains(&count("11b")));
    }

    #[test]
    fn doubling_layers_roughly_doubles_params() {
        let base = preset("base", DEFAULT_VOCAB_SIZE).unwrap();
        let plan = scaling_plan(&base_run(), 2, ScalingStrategy::BiggerModel).unwrap();
        let ratio = count_params(&plan.runs[0].model) as f64 / count_params(&base) as f64;
        assert!((1.8..=2.2).contains(&ratio), "{ratio}");
    }

    #[test]
    fn plans() {
        let base = base_run();
        let p = scaling_plan(&base, 4, ScalingStrategy::MoreSteps).unwrap();
        assert_eq!(p.runs.len(), 1);
        assert_eq!(p.runs[0].pretrain_steps, 4 << 19);
        assert_eq!(p.runs[0].model, base.model);
        assert_eq!(scaling_plan(&base, 1, ScalingStrategy::MoreSteps).unwrap().runs, vec![base.clone()]);
        let p = scaling_plan(&base, 4, ScalingStrategy::Ensemble).unwrap();
        assert!(p.ensemble);
        assert_eq!(p.runs.len(), 4);
        let seeds: std::collections::BTreeSet<u64> = p.runs.iter().map(|r| r.pretrain_seed).collect();
        assert_eq!(seeds.len(), 4);
        let p = scaling_plan(&base, 4, ScalingStrategy::EnsembleFinetuneOnly).unwrap();
        assert!(p.runs.iter().all(|r| r.pretrain_seed == base.pretrain_seed));
        assert!(scaling_plan(&base, 0, ScalingStrategy::Ensemble).is_err());
        let back = ScalingPlan::from_manifest(&p.to_manifest()).unwrap();
        assert_eq!(back, p);
    }
}
