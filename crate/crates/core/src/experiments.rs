//! Toy-scale experiment drivers over a synthetic world: a Zipfian word
//! vocabulary, an unlabeled corpus and a small text-to-text task suite
//! (copy, reverse, addition written as digits).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corruption::{CorruptionPair, ObjectiveSpec};
use crate::decode::greedy_decode;
use crate::model::{ModelConfig, Transformer};
use crate::numerics::Rng;
use crate::training::{append_eos, ExampleSource, LogRecord, Schedule, TrainConfig, Trainer};
use crate::vocab::{TokenId, Vocabulary, DEFAULT_NUM_SENTINELS, NUM_BYTE_PIECES, NUM_SPECIALS};
use crate::{Error, Result};

pub const SYNTHETIC_VOCAB_SIZE: usize = 5000;
pub const SYNTHETIC_TASKS: [&str; 3] = ["copy", "reverse", "add"];
const TASK_PIECES: [&str; 3] = ["copy:", "reverse:", "add:"];

/// Shape of the synthetic data. Ranges are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    /// Word `k` (0-based rank) has weight `(k + 1)^-zipf_exponent`.
    pub zipf_exponent: f64,
    pub phrase_words: (usize, usize),
    pub task_words: (usize, usize),
    pub doc_len: (usize, usize),
    /// Addition operands are drawn below this.
    pub max_operand: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            zipf_exponent: 1.0,
            phrase_words: (3, 6),
            task_words: (1, 3),
            doc_len: (16, 28),
            max_operand: 10,
        }
    }
}

/// Vocabulary and samplers shared by the corpus and the tasks.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    vocab: Vocabulary,
    num_words: usize,
    cdf: Vec<f64>,
    cfg: WorldConfig,
}

impl SyntheticWorld {
    /// `size` ids in total: bytes, the three task prefixes, word pieces
    /// `w0, w1, ...`, specials and sentinels.
    pub fn new(size: usize) -> Result<Self> {
        Self::with_config(size, WorldConfig::default())
    }

    pub fn with_config(size: usize, cfg: WorldConfig) -> Result<Self> {
        let ranges = [cfg.phrase_words, cfg.task_words, cfg.doc_len];
        if ranges.iter().any(|(lo, hi)| *lo == 0 || lo > hi) || cfg.max_operand == 0 {
            return Err(Error::Config("synthetic ranges must be non-empty and start above 0".into()));
        }
        let fixed = NUM_BYTE_PIECES + TASK_PIECES.len() + NUM_SPECIALS + DEFAULT_NUM_SENTINELS;
        if size <= fixed {
            return Err(Error::Config(format!("synthetic vocabulary needs more than {fixed} ids")));
        }
        let num_words = size - fixed;
        let pieces = TASK_PIECES
            .iter()
            .map(|p| p.as_bytes().to_vec())
            .chain((0..num_words).map(|k| format!("w{k}").into_bytes()))
            .collect();
        let vocab = Vocabulary::from_pieces(pieces, DEFAULT_NUM_SENTINELS)?;
        let weights: Vec<f64> = (0..num_words).map(|k| ((k + 1) as f64).powf(-cfg.zipf_exponent)).collect();
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let cdf = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        Ok(SyntheticWorld {
            vocab,
            num_words,
            cdf,
            cfg,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn num_words(&self) -> usize {
        self.num_words
    }

    fn task_id(&self, task: usize) -> TokenId {
        (NUM_BYTE_PIECES + task) as TokenId
    }

    pub fn word(&self, rank: usize) -> TokenId {
        (NUM_BYTE_PIECES + TASK_PIECES.len() + rank) as TokenId
    }

    fn sample_word(&self, rng: &mut Rng) -> TokenId {
        let u = rng.uniform();
        let k = self.cdf.partition_point(|c| *c < u).min(self.num_words - 1);
        self.word(k)
    }

    fn words(&self, rng: &mut Rng, (lo, hi): (usize, usize)) -> Vec<TokenId> {
        let n = lo + rng.below(hi - lo + 1);
        (0..n).map(|_| self.sample_word(rng)).collect()
    }

    fn digits(&self, n: usize) -> Vec<TokenId> {
        n.to_string().bytes().map(TokenId::from).collect()
    }

    fn sum_tokens(&self, a: usize, b: usize) -> (Vec<TokenId>, Vec<TokenId>) {
        let mut lhs = self.digits(a);
        lhs.push(TokenId::from(b'+'));
        lhs.extend(self.digits(b));
        (lhs, self.digits(a + b))
    }

    /// An unlabeled document: phrases followed by a repeat or a reversal of
    /// themselves, and addition facts, cut to a random length.
    pub fn document(&self, rng: &mut Rng) -> Vec<TokenId> {
        let (lo, hi) = self.cfg.doc_len;
        let len = lo + rng.below(hi - lo + 1);
        let mut doc = Vec::new();
        while doc.len() < len {
            match rng.below(10) {
                0..=3 => {
                    let p = self.words(rng, self.cfg.phrase_words);
                    doc.extend(&p);
                    doc.extend(&p);
                }
                4..=6 => {
                    let p = self.words(rng, self.cfg.phrase_words);
                    doc.extend(&p);
                    doc.extend(p.iter().rev());
                }
                _ => {
                    let (lhs, sum) = self.sum_tokens(rng.below(self.cfg.max_operand), rng.below(self.cfg.max_operand));
                    doc.extend(lhs);
                    doc.push(TokenId::from(b'='));
                    doc.extend(sum);
                }
            }
        }
        doc.truncate(len);
        doc
    }

    /// One example of task `task` (an index into [`SYNTHETIC_TASKS`]), with
    /// EOS appended to both sides.
    pub fn task_example(&self, task: usize, rng: &mut Rng) -> CorruptionPair {
        let (body, target) = match task {
            0 => {
                let w = self.words(rng, self.cfg.task_words);
                (w.clone(), w)
            }
            1 => {
                let w = self.words(rng, self.cfg.task_words);
                let r = w.iter().rev().copied().collect();
                (w, r)
            }
            _ => self.sum_tokens(rng.below(self.cfg.max_operand), rng.below(self.cfg.max_operand)),
        };
        let mut input = vec![self.task_id(task)];
        input.extend(body);
        let mut pair = CorruptionPair { input, target };
        append_eos(&mut pair, self.vocab.eos_id());
        pair
    }

    /// `per_task` examples of each task drawn from `seed`, grouped by task.
    pub fn eval_set(&self, per_task: usize, seed: u64) -> Vec<Vec<CorruptionPair>> {
        (0..SYNTHETIC_TASKS.len())
            .map(|t| {
                let mut rng = Rng::new(seed, t as u64);
                (0..per_task).map(|_| self.task_example(t, &mut rng)).collect()
            })
            .collect()
    }
}

/// Corrupted synthetic documents. Document `i` depends only on
/// `(doc_seed, i)`; the corruption noise comes from the trainer.
pub struct CorpusSource<'a> {
    pub world: &'a SyntheticWorld,
    pub objective: ObjectiveSpec,
    pub doc_seed: u64,
    /// Distinct documents; `None` for an endless stream.
    pub num_docs: Option<u64>,
}

impl ExampleSource for CorpusSource<'_> {
    fn len(&self) -> Option<u64> {
        self.num_docs
    }

    fn example(&self, index: u64, rng: &mut Rng) -> Result<CorruptionPair> {
        let doc = self.world.document(&mut Rng::new(self.doc_seed, index));
        let mut pair = self.objective.apply(&doc, rng, self.world.vocab())?;
        append_eos(&mut pair, self.world.vocab().eos_id());
        Ok(pair)
    }
}

/// Task suite examples cycling through the tasks. Example `i` depends only
/// on `(seed, i)`.
pub struct TaskSource<'a> {
    pub world: &'a SyntheticWorld,
    pub seed: u64,
    /// Distinct examples; `None` for an endless stream.
    pub num_examples: Option<u64>,
}

impl ExampleSource for TaskSource<'_> {
    fn len(&self) -> Option<u64> {
        self.num_examples
    }

    fn example(&self, index: u64, _rng: &mut Rng) -> Result<CorruptionPair> {
        let task = (index % SYNTHETIC_TASKS.len() as u64) as usize;
        Ok(self.world.task_example(task, &mut Rng::new(self.seed, index)))
    }
}

/// Fraction of examples whose greedy output equals the target exactly.
pub fn sequence_accuracy(model: &Transformer, examples: &[CorruptionPair], eos: TokenId) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Data("no examples to evaluate".into()));
    }
    let mut hits = 0;
    for ex in examples {
        let want: Vec<TokenId> = ex.target.iter().copied().filter(|t| *t != eos).collect();
        if greedy_decode(model, &ex.input, eos, want.len() + 2)? == want {
            hits += 1;
        }
    }
    Ok(hits as f64 / examples.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyRunConfig {
    pub model: ModelConfig,
    pub batch_tokens: usize,
    pub max_seq_len: usize,
}

impl ToyRunConfig {
    /// Two-layer, 32-wide encoder-decoder over the 5000-id synthetic
    /// vocabulary, without dropout.
    pub fn small() -> Self {
        let mut model = ModelConfig::new(32, 64, 16, 2, 2, SYNTHETIC_VOCAB_SIZE);
        model.dropout_rate = 0.0;
        ToyRunConfig {
            model,
            batch_tokens: 256,
            max_seq_len: 32,
        }
    }

    fn train_config(&self, steps: u64, lr: f64, seed: u64, repeat: bool) -> TrainConfig {
        TrainConfig {
            total_steps: steps,
            batch_tokens: self.batch_tokens,
            max_seq_len: self.max_seq_len,
            schedule: Schedule::Constant { lr },
            checkpoint_every: 0,
            seed,
            repeat,
            ..TrainConfig::default()
        }
    }
}

fn run<S: ExampleSource>(model: Transformer, cfg: TrainConfig, source: S) -> Result<(Transformer, Vec<LogRecord>, u64)> {
    let steps = cfg.total_steps;
    let mut trainer = Trainer::new(model, cfg, source)?;
    let mut log = Vec::new();
    trainer.run_until(steps, |_| Ok(()), |r| log.push(r.clone()))?;
    let consumed = trainer.cursor();
    Ok((trainer.into_model(), log, consumed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub run: ToyRunConfig,
    pub pretrain_steps: u64,
    pub finetune_steps: u64,
    pub pretrain_lr: f64,
    pub finetune_lr: f64,
    /// Distinct fine-tuning examples across all tasks; `None` for fresh
    /// examples every step.
    pub finetune_examples: Option<u64>,
    pub eval_per_task: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            run: ToyRunConfig::small(),
            pretrain_steps: 2000,
            finetune_steps: 500,
            pretrain_lr: 1e-3,
            finetune_lr: 3e-4,
            finetune_examples: None,
            eval_per_task: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferOutcome {
    pub seed: u64,
    pub pretrained: BTreeMap<String, f64>,
    pub scratch: BTreeMap<String, f64>,
    pub pretrain_final_loss: f64,
}

fn mean(m: &BTreeMap<String, f64>) -> f64 {
    m.values().sum::<f64>() / m.len().max(1) as f64
}

impl TransferOutcome {
    pub fn pretrained_mean(&self) -> f64 {
        mean(&self.pretrained)
    }

    pub fn scratch_mean(&self) -> f64 {
        mean(&self.scratch)
    }
}

fn tail_loss(log: &[LogRecord], k: usize) -> f64 {
    let tail = &log[log.len().saturating_sub(k)..];
    tail.iter().map(|r| r.loss).sum::<f64>() / tail.len().max(1) as f64
}

/// Pre-train with span corruption then fine-tune on the task suite, against
/// the same initialization fine-tuned without pre-training.
pub fn transfer_experiment(world: &SyntheticWorld, cfg: &TransferConfig, seed: u64) -> Result<TransferOutcome> {
    let init = Transformer::new(cfg.run.model.clone(), &mut Rng::new(seed, 0))?;
    let corpus = CorpusSource {
        world,
        objective: ObjectiveSpec::span_corruption(),
        doc_seed: seed,
        num_docs: None,
    };
    let (pretrained, log, _) = run(
        init.clone(),
        cfg.run.train_config(cfg.pretrain_steps, cfg.pretrain_lr, seed, true),
        corpus,
    )?;
    let eval = world.eval_set(cfg.eval_per_task, seed ^ 0x5eed);
    let eos = world.vocab().eos_id();
    let mut outcome = TransferOutcome {
        seed,
        pretrained: BTreeMap::new(),
        scratch: BTreeMap::new(),
        pretrain_final_loss: tail_loss(&log, 50),
    };
    for (start, scores) in [(pretrained, &mut outcome.pretrained), (init, &mut outcome.scratch)] {
        let ft = cfg.run.train_config(cfg.finetune_steps, cfg.finetune_lr, seed + 1, true);
        let source = TaskSource {
            world,
            seed: seed + 1,
            num_examples: cfg.finetune_examples,
        };
        let (model, _, _) = run(start, ft, source)?;
        for (t, examples) in SYNTHETIC_TASKS.iter().zip(&eval) {
            scores.insert(t.to_string(), sequence_accuracy(&model, examples, eos)?);
        }
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionConfig {
    pub run: ToyRunConfig,
    pub steps: u64,
    pub lr: f64,
    /// How many times the truncated corpus is repeated over the run.
    pub repeats: u64,
    /// Final loss is the mean over this many last steps.
    pub tail: usize,
}

impl Default for RepetitionConfig {
    fn default() -> Self {
        RepetitionConfig {
            run: ToyRunConfig::small(),
            steps: 400,
            lr: 3e-3,
            repeats: 64,
            tail: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionOutcome {
    pub seed: u64,
    pub full_loss: f64,
    pub repeated_loss: f64,
    /// Distinct documents in the truncated corpus.
    pub truncated_docs: u64,
}

/// Same steps and initialization on an endless corpus and on a truncation
/// of it small enough to be seen `repeats` times.
pub fn repetition_experiment(world: &SyntheticWorld, cfg: &RepetitionConfig, seed: u64) -> Result<RepetitionOutcome> {
    let init = Transformer::new(cfg.run.model.clone(), &mut Rng::new(seed, 0))?;
    let source = |num_docs| CorpusSource {
        world,
        objective: ObjectiveSpec::span_corruption(),
        doc_seed: seed,
        num_docs,
    };
    let tc = cfg.run.train_config(cfg.steps, cfg.lr, seed, true);
    let (_, full_log, consumed) = run(init.clone(), tc.clone(), source(None))?;
    let truncated_docs = (consumed / cfg.repeats.max(1)).max(1);
    let (_, rep_log, _) = run(init, tc, source(Some(truncated_docs)))?;
    Ok(RepetitionOutcome {
        seed,
        full_loss: tail_loss(&full_log, cfg.tail),
        repeated_loss: tail_loss(&rep_log, cfg.tail),
        truncated_docs,
    })
}
