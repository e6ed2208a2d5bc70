use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::finetune::{FineTuneMode, UnfreezeSchedule};
use super::optimizer::{Adam, Optimizer, StepOutcome};
use super::packing::{truncate_pair, Footprint, Packer};
use super::schedule::Schedule;
use crate::corruption::CorruptionPair;
use crate::model::{Checkpoint, ModelBatch, Transformer};
use crate::numerics::{Graph, Rng};
use crate::{Error, Result};

/// Rng streams at or above this value drive dropout; lower streams are
/// example indices.
const DROPOUT_STREAM: u64 = 1 << 62;
const MAX_EMPTY_RUN: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub batch_tokens: usize,
    pub max_seq_len: usize,
    pub schedule: Schedule,
    /// Checkpoint period in steps; 0 keeps only the first and last.
    pub checkpoint_every: u64,
    pub seed: u64,
    /// Wrap around a finite source instead of failing when it runs out.
    pub repeat: bool,
    pub clip_norm: Option<f64>,
    pub mode: FineTuneMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 1 << 19,
            batch_tokens: 1 << 16,
            max_seq_len: 512,
            schedule: Schedule::pretrain_default(),
            checkpoint_every: 5000,
            seed: 0,
            repeat: true,
            clip_norm: None,
            mode: FineTuneMode::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_seq_len == 0 || self.batch_tokens < self.max_seq_len {
            return Err(Error::Config(format!(
                "batch_tokens {} must be at least max_seq_len {} (> 0)",
                self.batch_tokens, self.max_seq_len
            )));
        }
        self.schedule.validate()
    }

    pub fn rows_per_batch(&self) -> usize {
        self.batch_tokens / self.max_seq_len
    }
}

/// Supplies training examples by index. Corruption noise comes from `rng`,
/// which is keyed by the global example position so runs are reproducible.
pub trait ExampleSource {
    /// Number of distinct examples; `None` for an endless source.
    fn len(&self) -> Option<u64>;
    fn example(&self, index: u64, rng: &mut Rng) -> Result<CorruptionPair>;
}

impl ExampleSource for Vec<CorruptionPair> {
    fn len(&self) -> Option<u64> {
        Some(self.len() as u64)
    }

    fn example(&self, index: u64, _rng: &mut Rng) -> Result<CorruptionPair> {
        self.get(index as usize)
            .cloned()
            .ok_or_else(|| Error::Index {
                index: index as usize,
                size: self.len(),
            })
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub tokens_seen: u64,
    pub wall_ms: u64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub skipped: bool,
}

/// Owns a model, its optimizer and the data cursor.
pub struct Trainer<S: ExampleSource> {
    model: Transformer,
    cfg: TrainConfig,
    source: S,
    opt: Adam,
    step: u64,
    cursor: u64,
    tokens_seen: u64,
    unfreeze: Option<UnfreezeSchedule>,
}

impl<S: ExampleSource> Trainer<S> {
    pub fn new(mut model: Transformer, cfg: TrainConfig, source: S) -> Result<Self> {
        cfg.validate()?;
        let unfreeze = match cfg.mode {
            FineTuneMode::Full => {
                model.store_mut().set_all_trainable(true);
                None
            }
            FineTuneMode::Adapters => {
                if model.adapter_params().is_empty() {
                    return Err(Error::Config("adapter fine-tuning needs inserted adapters".into()));
                }
                model.freeze_for_adapters();
                None
            }
            FineTuneMode::GradualUnfreeze => Some(UnfreezeSchedule::new(
                model.config().num_layers,
                cfg.total_steps,
            )?),
        };
        let opt = Adam::default().with_clip_norm(cfg.clip_norm);
        Ok(Trainer {
            model,
            cfg,
            source,
            opt,
            step: 0,
            cursor: 0,
            tokens_seen: 0,
            unfreeze,
        })
    }

    /// Continues a run from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(checkpoint: &Checkpoint, cfg: TrainConfig, source: S) -> Result<Self> {
        let model = checkpoint.to_model()?;
        let mut t = Trainer::new(model, cfg, source)?;
        let meta = &checkpoint.manifest.meta;
        t.step = checkpoint.step();
        t.cursor = meta["cursor"].as_u64().ok_or_else(|| Error::Format("checkpoint has no data cursor".into()))?;
        t.tokens_seen = meta["tokens_seen"].as_u64().unwrap_or(0);
        t.opt.load_state(t.model.store(), checkpoint)?;
        Ok(t)
    }

    pub fn model(&self) -> &Transformer {
        &self.model
    }

    pub fn into_model(self) -> Transformer {
        self.model
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Number of source positions consumed so far.
    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    pub fn skipped_steps(&self) -> u64 {
        self.opt.skipped()
    }

    /// Full run state: parameters, optimizer moments and data position.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_model(&self.model, self.step);
        let (entries, opt_meta) = self.opt.save_state(self.model.store());
        ck.entries.extend(entries);
        ck.manifest.meta = serde_json::json!({
            "cursor": self.cursor,
            "tokens_seen": self.tokens_seen,
            "optimizer": opt_meta,
        });
        ck
    }

    fn exhausted(&self, position: u64) -> bool {
        !self.cfg.repeat && self.source.len().is_some_and(|n| position >= n)
    }

    fn fetch(&self, position: u64) -> Result<CorruptionPair> {
        let index = match self.source.len() {
            Some(0) => return Err(Error::Data("training source is empty".into())),
            Some(n) if position >= n && !self.cfg.repeat => {
                return Err(Error::Data(format!("training data exhausted after {n} examples")))
            }
            Some(n) => position % n,
            None => position,
        };
        let mut rng = Rng::new(self.cfg.seed, position % DROPOUT_STREAM);
        let mut pair = self.source.example(index, &mut rng)?;
        truncate_pair(&mut pair, self.model.config().architecture, self.cfg.max_seq_len);
        Ok(pair)
    }

    /// Packs the next batch, advancing the cursor past the examples used.
    fn next_batch(&mut self) -> Result<ModelBatch> {
        let arch = self.model.config().architecture;
        let mut packer = Packer::new(self.cfg.max_seq_len, Some(self.cfg.rows_per_batch()));
        let mut pairs = Vec::new();
        let mut empties = 0;
        loop {
            if self.exhausted(self.cursor) && !pairs.is_empty() {
                break;
            }
            let pair = self.fetch(self.cursor)?;
            let fp = Footprint::of(&pair, arch);
            if fp.tokens() == 0 {
                self.cursor += 1;
                empties += 1;
                if empties > MAX_EMPTY_RUN {
                    return Err(Error::Data(format!("{MAX_EMPTY_RUN} empty examples in a row")));
                }
                continue;
            }
            if !packer.try_add(pairs.len(), fp)? {
                break;
            }
            self.tokens_seen += fp.tokens() as u64;
            pairs.push(pair);
            self.cursor += 1;
        }
        let rows: Vec<Vec<&CorruptionPair>> = packer
            .into_rows()
            .into_iter()
            .map(|r| r.into_iter().map(|i| &pairs[i]).collect())
            .collect();
        Ok(ModelBatch::from_rows(self.model.config(), &rows))
    }

    /// One optimization step.
    pub fn train_step(&mut self) -> Result<LogRecord> {
        let start = Instant::now();
        if let Some(u) = self.unfreeze {
            u.apply(&mut self.model, self.step);
        }
        let batch = self.next_batch()?;
        let lr = self.cfg.schedule.learning_rate(self.step);
        let mut rng = Rng::new(self.cfg.seed, DROPOUT_STREAM + self.step);
        let mut g = Graph::new();
        let loss = self.model.loss(&mut g, &batch, &mut rng, true)?;
        let loss_value = g.value(loss).item();
        let outcome = if loss_value.is_finite() {
            g.backward(loss)?;
            let store = self.model.store_mut();
            store.zero_grads();
            g.flush_param_grads(store);
            self.opt.step(store, lr)
        } else {
            self.opt.note_skip();
            StepOutcome::SkippedNonFinite
        };
        self.step += 1;
        Ok(LogRecord {
            step: self.step,
            loss: loss_value,
            lr,
            tokens_seen: self.tokens_seen,
            wall_ms: start.elapsed().as_millis() as u64,
            skipped: outcome == StepOutcome::SkippedNonFinite,
        })
    }

    /// Trains until `until` steps, calling `on_checkpoint` every
    /// `checkpoint_every` steps and at the end.
    pub fn run_until(
        &mut self,
        until: u64,
        mut on_checkpoint: impl FnMut(&Checkpoint) -> Result<()>,
        mut on_log: impl FnMut(&LogRecord),
    ) -> Result<()> {
        while self.step < until {
            let rec = self.train_step()?;
            on_log(&rec);
            let every = self.cfg.checkpoint_every;
            if self.step == until || (every > 0 && self.step % every == 0) {
                on_checkpoint(&self.checkpoint())?;
            }
        }
        Ok(())
    }
}

/// Result of [`train`].
pub struct TrainOutput {
    pub model: Transformer,
    pub checkpoints: Vec<Checkpoint>,
    pub log: Vec<LogRecord>,
}

/// Runs `cfg.total_steps` steps from scratch, keeping every checkpoint in
/// memory, starting with the initial one.
pub fn train<S: ExampleSource>(model: Transformer, source: S, cfg: TrainConfig) -> Result<TrainOutput> {
    let total = cfg.total_steps;
    let mut trainer = Trainer::new(model, cfg, source)?;
    let mut checkpoints = vec![trainer.checkpoint()];
    let mut log = Vec::new();
    trainer.run_until(total, |c| {
        checkpoints.push(c.clone());
        Ok(())
    }, |r| log.push(r.clone()))?;
    Ok(TrainOutput {
        model: trainer.into_model(),
        checkpoints,
        log,
    })
}

/// Appends log records as JSON lines.
pub fn write_log(path: &Path, records: &[LogRecord]) -> Result<()> {
    use std::io::Write as _;
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    for r in records {
        let line = serde_json::to_string(r).expect("log record serializes");
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
