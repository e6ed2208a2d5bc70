use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{StackKind, Transformer};
use crate::{Error, Result};

/// Which parameters train during a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FineTuneMode {
    #[default]
    Full,
    /// Only adapters and norm gains; adapters must already be inserted.
    Adapters,
    /// Layers are enabled top-down in equal episodes over the run.
    GradualUnfreeze,
}

/// Splits `total_steps` into one episode per layer; the remainder of the
/// division goes to the last episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnfreezeSchedule {
    pub num_layers: usize,
    pub total_steps: u64,
}

impl UnfreezeSchedule {
    pub fn new(num_layers: usize, total_steps: u64) -> Result<Self> {
        if num_layers == 0 || total_steps < num_layers as u64 {
            return Err(Error::Parameter(format!(
                "{total_steps} steps cannot be split into {num_layers} episodes"
            )));
        }
        Ok(UnfreezeSchedule {
            num_layers,
            total_steps,
        })
    }

    pub fn episode_len(&self) -> u64 {
        self.total_steps / self.num_layers as u64
    }

    /// 1-based episode of a 0-based step.
    pub fn episode(&self, step: u64) -> usize {
        ((step / self.episode_len()) as usize).min(self.num_layers - 1) + 1
    }

    /// 0-based indices of the layers trained at `step`: the top `episode` layers.
    pub fn trainable_layers(&self, step: u64) -> std::ops::Range<usize> {
        self.num_layers - self.episode(step)..self.num_layers
    }

    /// Sets the model's trainable flags for `step`. Embedding, relative bias
    /// tables and final norms always train.
    pub fn apply(&self, model: &mut Transformer, step: u64) {
        let layers = self.trainable_layers(step);
        let mut on = model.non_layer_params();
        for kind in [StackKind::Encoder, StackKind::Decoder] {
            for l in layers.clone() {
                on.extend(model.layer_params(kind, l));
            }
        }
        let store = model.store_mut();
        store.set_all_trainable(false);
        for id in on {
            store.set_trainable(id, true);
        }
    }
}

/// Validation scores of one checkpoint, by task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointScores {
    pub step: u64,
    pub scores: BTreeMap<String, f64>,
}

/// Best step for each task; ties go to the earliest step.
pub fn select_best_checkpoint(evals: &[CheckpointScores]) -> Result<BTreeMap<String, u64>> {
    if evals.is_empty() {
        return Err(Error::Parameter("no checkpoints to choose from".into()));
    }
    let mut ordered: Vec<&CheckpointScores> = evals.iter().collect();
    ordered.sort_by_key(|e| e.step);
    let mut best: BTreeMap<String, (f64, u64)> = BTreeMap::new();
    for e in ordered {
        for (task, &score) in &e.scores {
            match best.get(task) {
                Some(&(b, _)) if !(score > b || (b.is_nan() && !score.is_nan())) => {}
                _ => {
                    best.insert(task.clone(), (score, e.step));
                }
            }
        }
    }
    Ok(best.into_iter().map(|(t, (_, s))| (t, s)).collect())
}
