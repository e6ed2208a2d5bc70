use std::collections::BTreeMap;

use crate::model::Checkpoint;
use crate::numerics::{ParamId, ParamStore, Tensor};
use crate::{Error, Result};

/// Result of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient was NaN or infinite; nothing changed.
    SkippedNonFinite,
}

/// Parameter update rule. Only trainable parameters are touched.
pub trait Optimizer {
    fn step(&mut self, store: &mut ParamStore, lr: f64) -> StepOutcome;
    /// Steps skipped because of non-finite gradients.
    fn skipped(&self) -> u64;
    /// Named tensors and a JSON blob that restore the state exactly.
    fn save_state(&self, store: &ParamStore) -> (Vec<(String, Tensor)>, serde_json::Value);
    fn load_state(&mut self, store: &ParamStore, checkpoint: &Checkpoint) -> Result<()>;
}

/// Adam with bias correction. Moment estimates are created on a parameter's
/// first update, each with its own step count.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the global gradient norm down to this value when exceeded.
    pub clip_norm: Option<f64>,
    state: BTreeMap<ParamId, Moments>,
    skipped: u64,
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new(0.9, 0.999, 1e-8)
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            clip_norm: None,
            state: BTreeMap::new(),
            skipped: 0,
        }
    }

    /// Counts a step skipped before reaching the optimizer.
    pub fn note_skip(&mut self) {
        self.skipped += 1;
    }

    pub fn with_clip_norm(mut self, clip: Option<f64>) -> Self {
        self.clip_norm = clip;
        self
    }
}

impl Optimizer for Adam {
    fn step(&mut self, store: &mut ParamStore, lr: f64) -> StepOutcome {
        let ids: Vec<ParamId> = store.ids().filter(|id| store.is_trainable(*id)).collect();
        let mut sq = 0.0;
        for id in &ids {
            for g in store.grad(*id) {
                if !g.is_finite() {
                    self.skipped += 1;
                    return StepOutcome::SkippedNonFinite;
                }
                sq += g * g;
            }
        }
        let factor = match self.clip_norm {
            Some(c) if sq.sqrt() > c => c / sq.sqrt(),
            _ => 1.0,
        };
        for id in ids {
            let n = store.value(id).numel();
            let grad: Vec<f64> = store.grad(id).iter().map(|g| g * factor).collect();
            let st = self.state.entry(id).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            });
            st.t += 1;
            let c1 = 1.0 - self.beta1.powi(st.t as i32);
            let c2 = 1.0 - self.beta2.powi(st.t as i32);
            let values = store.value_mut(id).data_mut();
            for i in 0..n {
                let g = grad[i];
                st.m[i] = self.beta1 * st.m[i] + (1.0 - self.beta1) * g;
                st.v[i] = self.beta2 * st.v[i] + (1.0 - self.beta2) * g * g;
                let mh = st.m[i] / c1;
                let vh = st.v[i] / c2;
                values[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        StepOutcome::Applied
    }

    fn skipped(&self) -> u64 {
        self.skipped
    }

    fn save_state(&self, store: &ParamStore) -> (Vec<(String, Tensor)>, serde_json::Value) {
        let mut entries = Vec::new();
        let mut steps = serde_json::Map::new();
        for (id, st) in &self.state {
            let name = store.name(*id);
            let n = st.m.len();
            entries.push((format!("optimizer/m/{name}"), Tensor::new(vec![n], st.m.clone()).expect("sized")));
            entries.push((format!("optimizer/v/{name}"), Tensor::new(vec![n], st.v.clone()).expect("sized")));
            steps.insert(name.to_string(), st.t.into());
        }
        let meta = serde_json::json!({ "steps": steps, "skipped": self.skipped });
        (entries, meta)
    }

    fn load_state(&mut self, store: &ParamStore, checkpoint: &Checkpoint) -> Result<()> {
        let meta = &checkpoint.manifest.meta["optimizer"];
        self.state.clear();
        self.skipped = meta["skipped"].as_u64().unwrap_or(0);
        let Some(steps) = meta["steps"].as_object() else {
            return Ok(());
        };
        for (name, t) in steps {
            let id = store
                .id(name)
                .ok_or_else(|| Error::Format(format!("optimizer state for unknown parameter {name}")))?;
            let get = |kind: &str| {
                checkpoint
                    .get(&format!("optimizer/{kind}/{name}"))
                    .map(|t| t.data().to_vec())
                    .ok_or_else(|| Error::Format(format!("missing optimizer {kind} for {name}")))
            };
            let (m, v) = (get("m")?, get("v")?);
            if m.len() != store.value(id).numel() || v.len() != m.len() {
                return Err(Error::Format(format!("optimizer state for {name} has the wrong size")));
            }
            let t = t
                .as_u64()
                .ok_or_else(|| Error::Format(format!("bad optimizer step for {name}")))?;
            self.state.insert(id, Moments { m, v, t });
        }
        Ok(())
    }
}
