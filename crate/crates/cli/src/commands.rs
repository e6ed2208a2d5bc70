use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use ttx::cleaning::{read_pages, write_pages, BadWords, CleanConfig, Cleaner, DedupMode, DomainFilter, PageFormat};
use ttx::corruption::{CorruptionPair, ObjectiveKind, ObjectiveSpec};
use ttx::decode::{beam_decode, Ensemble, LogitModel};
use ttx::experiments::{CorpusSource, SyntheticWorld, ToyRunConfig, SYNTHETIC_VOCAB_SIZE};
use ttx::metrics::evaluate_task;
use ttx::mixture::{MixingStrategy, MixtureSpec, MixtureTask, DEFAULT_TEMPERATURE_LIMIT};
use ttx::model::{count_params, Checkpoint, ModelConfig, Transformer};
use ttx::numerics::Rng;
use ttx::scaling::{is_oversized, preset};
use ttx::tasks::{format_example, load_tsv, schema, TaskSchema};
use ttx::training::{append_eos, write_log, ExampleSource, FineTuneMode, LogRecord, Schedule, TrainConfig, Trainer};
use ttx::vocab::{train_vocab as learn_vocab, TokenId, Vocabulary, DEFAULT_NUM_SENTINELS};

use crate::settings::Settings;
use crate::{CliError, Result};

const FINAL_CHECKPOINT: &str = "final.ckpt";
const LOG_EVERY: u64 = 100;

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Creates the output directory if one was given.
fn out_dir(s: &Settings) -> Result<Option<PathBuf>> {
    let Some(dir) = s.path("out")? else {
        return Ok(None);
    };
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(Some(dir))
}

fn require_out(s: &Settings) -> Result<PathBuf> {
    out_dir(s)?.ok_or_else(|| CliError::Config("missing required setting 'out'".into()))
}

fn load_vocab(s: &Settings) -> Result<Vocabulary> {
    Ok(Vocabulary::load(&s.require::<PathBuf>("vocab")?)?)
}

fn objective(s: &Settings) -> Result<ObjectiveSpec> {
    let kind = ObjectiveKind::parse(&s.or("objective", "random_spans".to_string())?)?;
    Ok(ObjectiveSpec::new(kind, s.or("rate", 0.15)?, s.or("mean-span", 3.0)?)?)
}

fn task_schema(s: &Settings) -> Result<TaskSchema> {
    Ok(schema(&s.require::<String>("task")?)?)
}

/// Loads one checkpoint per comma-separated path.
fn load_models(s: &Settings, vocab: &Vocabulary) -> Result<Vec<Transformer>> {
    let list: String = s.require("checkpoint")?;
    list.split(',')
        .map(|p| {
            let model = Checkpoint::load(Path::new(p.trim()))?.to_model()?;
            if model.config().vocab_size != vocab.size() {
                return Err(CliError::Config(format!(
                    "checkpoint {p} has vocabulary size {}, vocabulary file has {}",
                    model.config().vocab_size,
                    vocab.size()
                )));
            }
            Ok(model)
        })
        .collect()
}

fn encode_input(vocab: &Vocabulary, text: &str) -> Vec<TokenId> {
    let mut ids = vocab.encode(text);
    if !ids.is_empty() {
        ids.push(vocab.eos_id());
    }
    ids
}

pub fn train_vocab(s: &Settings) -> Result<()> {
    let text = read_text(&s.require::<PathBuf>("input")?)?;
    let size = s.or("size", 1000usize)?;
    let sentinels = s.or("sentinels", DEFAULT_NUM_SENTINELS)?;
    let out = require_out(s)?;
    let vocab = learn_vocab(text.lines(), size, sentinels)?;
    vocab.save(&out.join("vocab.txt"))?;
    s.echo(&out)?;
    eprintln!("vocabulary of {} ids with {} merges", vocab.size(), vocab.num_merges());
    Ok(())
}

pub fn clean_corpus(s: &Settings) -> Result<()> {
    let input: PathBuf = s.require("input")?;
    let format: PageFormat = s.or("format", "tsv".to_string())?.parse()?;
    let bad_words = match s.path("bad-words")? {
        Some(p) => BadWords::load(&p)?,
        None => BadWords::default(),
    };
    let domain = DomainFilter::load(&s.or("domain-mode", "none".to_string())?, s.path("allowlist")?.as_deref())?;
    let dedup = match s.or("dedup", "spans".to_string())?.as_str() {
        "off" => DedupMode::Off,
        "spans" => DedupMode::Spans,
        "pages" => DedupMode::Pages,
        other => return Err(CliError::Config(format!("unknown dedup mode '{other}' (off, spans or pages)"))),
    };
    let cfg = CleanConfig {
        language_threshold: s.or("language-threshold", ttx::cleaning::DEFAULT_LANGUAGE_THRESHOLD)?,
        bad_words,
        domain,
        dedup,
    };
    let out = require_out(s)?;
    let file = std::fs::File::open(&input).map_err(|e| CliError::io(&input, e))?;
    let pages = read_pages(BufReader::new(file), format)?;
    let mut cleaner = Cleaner::new(cfg);
    let kept = cleaner.process_all(pages);
    let name = match format {
        PageFormat::Tsv => "pages.tsv",
        PageFormat::Binary => "pages.bin",
    };
    let mut buf = Vec::new();
    write_pages(&mut buf, &kept, format).map_err(|e| CliError::io(out.join(name), e))?;
    write_file(&out.join(name), buf)?;
    let report = cleaner.report().to_text();
    write_file(&out.join("report.txt"), &report)?;
    s.echo(&out)?;
    print!("{report}");
    Ok(())
}

pub fn corrupt_preview(s: &Settings) -> Result<()> {
    let text = match (s.get::<String>("text")?, s.path("input")?) {
        (Some(t), _) => t,
        (None, Some(p)) => read_text(&p)?,
        (None, None) => return Err(CliError::Config("one of 'text' or 'input' is required".into())),
    };
    let spec = objective(s)?;
    let samples = s.or("samples", 1usize)?;
    let seed = s.or("seed", 0u64)?;
    // without a vocabulary file every whitespace-separated word is a token
    let (vocab, ids, sep) = match s.path("vocab")? {
        Some(p) => {
            let v = Vocabulary::load(&p)?;
            let ids = v.encode(&text);
            (v, ids, "")
        }
        None => {
            let words: Vec<&[u8]> = text.split_whitespace().map(str::as_bytes).collect();
            let distinct: BTreeSet<Vec<u8>> = words.iter().filter(|w| w.len() > 1).map(|w| w.to_vec()).collect();
            let v = Vocabulary::from_pieces(distinct.into_iter().collect(), DEFAULT_NUM_SENTINELS)?;
            let ids = words.iter().map(|w| v.id_of(w).expect("word is in the vocabulary")).collect();
            (v, ids, " ")
        }
    };
    let mut shown = String::new();
    for i in 0..samples {
        let pair = spec.apply(&ids, &mut Rng::new(seed, i as u64), &vocab)?;
        if i > 0 {
            shown.push('\n');
        }
        writeln!(shown, "input:  {}", vocab.render(&pair.input, sep).trim()).expect("string write");
        writeln!(shown, "target: {}", vocab.render(&pair.target, sep).trim()).expect("string write");
    }
    if let Some(out) = out_dir(s)? {
        write_file(&out.join("preview.txt"), &shown)?;
        s.echo(&out)?;
    }
    print!("{shown}");
    Ok(())
}

fn parse_tasks(list: &str) -> Result<Vec<MixtureTask>> {
    list.split(',')
        .map(|item| {
            let (name, size) = item
                .trim()
                .split_once(':')
                .ok_or_else(|| CliError::Config(format!("task '{item}' is not name:size")))?;
            let size = size
                .parse()
                .map_err(|_| CliError::Config(format!("task '{item}' has a bad size")))?;
            Ok(MixtureTask {
                name: name.to_string(),
                size,
            })
        })
        .collect()
}

pub fn mix_preview(s: &Settings) -> Result<()> {
    let tasks = parse_tasks(&s.require::<String>("tasks")?)?;
    let k = s.or("limit", DEFAULT_TEMPERATURE_LIMIT)?;
    let strategy = match s.or("strategy", "proportional".to_string())?.as_str() {
        "proportional" => MixingStrategy::ExamplesProportional { k },
        "temperature" => MixingStrategy::Temperature {
            t: s.or("temperature", 1.0)?,
            k,
        },
        "equal" => MixingStrategy::Equal,
        other => {
            return Err(CliError::Config(format!(
                "unknown strategy '{other}' (proportional, temperature or equal)"
            )))
        }
    };
    let spec = MixtureSpec::new(tasks, strategy)?;
    let mut table = String::from("task\tsize\tcapped\trate\n");
    for ((t, capped), rate) in spec.tasks.iter().zip(spec.capped_sizes()).zip(spec.rates()) {
        writeln!(table, "{}\t{}\t{}\t{:.6}", t.name, t.size, capped, rate).expect("string write");
    }
    if let Some(out) = out_dir(s)? {
        write_file(&out.join("rates.tsv"), &table)?;
        s.echo(&out)?;
    }
    print!("{table}");
    Ok(())
}

/// Documents from a text file, corrupted with the trainer's noise.
struct TextSource {
    docs: Vec<Vec<TokenId>>,
    objective: ObjectiveSpec,
    vocab: Vocabulary,
}

impl ExampleSource for TextSource {
    fn len(&self) -> Option<u64> {
        Some(self.docs.len() as u64)
    }

    fn example(&self, index: u64, rng: &mut Rng) -> ttx::Result<CorruptionPair> {
        let mut pair = self.objective.apply(&self.docs[index as usize], rng, &self.vocab)?;
        append_eos(&mut pair, self.vocab.eos_id());
        Ok(pair)
    }
}

fn model_config(s: &Settings, vocab_size: usize) -> Result<ModelConfig> {
    let name = s.or("preset", "toy".to_string())?;
    let mut cfg = if name == "toy" {
        let mut c = ToyRunConfig::small().model;
        c.vocab_size = vocab_size;
        c
    } else {
        if is_oversized(&name) && !s.flag("allow-oversized")? {
            return Err(CliError::Config(format!(
                "preset '{name}' is too large to instantiate without allow-oversized"
            )));
        }
        preset(&name, vocab_size)?
    };
    if let Some(d) = s.get("dropout")? {
        cfg.dropout_rate = d;
    }
    Ok(cfg)
}

/// Runs `cfg.total_steps` steps, saving checkpoints and the log into `out`.
fn run_training<S: ExampleSource>(model: Transformer, cfg: TrainConfig, source: S, out: &Path) -> Result<Transformer> {
    let steps = cfg.total_steps;
    let mut trainer = Trainer::new(model, cfg, source)?;
    let mut log: Vec<LogRecord> = Vec::new();
    trainer.checkpoint().save(&out.join(format!("ckpt-{:08}.ckpt", 0)))?;
    trainer.run_until(
        steps,
        |c| c.save(&out.join(format!("ckpt-{:08}.ckpt", c.step()))),
        |r| {
            if r.step % LOG_EVERY == 0 || r.step == steps {
                eprintln!("step {} loss {:.4} lr {:.6}", r.step, r.loss, r.lr);
            }
            log.push(r.clone());
        },
    )?;
    trainer.checkpoint().save(&out.join(FINAL_CHECKPOINT))?;
    let log_path = out.join("log.jsonl");
    if log_path.exists() {
        std::fs::remove_file(&log_path).map_err(|e| CliError::io(&log_path, e))?;
    }
    write_log(&log_path, &log)?;
    Ok(trainer.into_model())
}

pub fn pretrain(s: &Settings) -> Result<()> {
    let seed = s.or("seed", 0u64)?;
    let spec = objective(s)?;
    let schedule = match s.or("schedule", "inverse_sqrt".to_string())?.as_str() {
        "inverse_sqrt" => Schedule::InverseSqrt {
            warmup: s.or("warmup", 10_000u64)?,
            scale: 1.0,
        },
        "constant" => Schedule::Constant { lr: s.or("lr", 0.01)? },
        other => return Err(CliError::Config(format!("unknown schedule '{other}'"))),
    };
    let cfg = TrainConfig {
        total_steps: s.or("steps", 1000u64)?,
        batch_tokens: s.or("batch-tokens", 256usize)?,
        max_seq_len: s.or("max-len", 32usize)?,
        schedule,
        checkpoint_every: s.or("checkpoint-every", 0u64)?,
        seed,
        repeat: true,
        clip_norm: None,
        mode: FineTuneMode::Full,
    };
    cfg.validate()?;
    let world;
    let text = match s.path("input")? {
        Some(p) => Some((read_text(&p)?, load_vocab(s)?)),
        None => None,
    };
    let vocab_size = text.as_ref().map_or(SYNTHETIC_VOCAB_SIZE, |(_, v)| v.size());
    let model_cfg = model_config(s, vocab_size)?;
    let out = require_out(s)?;
    s.echo(&out)?;
    let model = Transformer::new(model_cfg, &mut Rng::new(seed, 0))?;
    eprintln!("model with {} parameters", count_params(model.config()));
    match text {
        Some((text, vocab)) => {
            let docs: Vec<Vec<TokenId>> = text
                .lines()
                .map(|l| vocab.encode(l))
                .filter(|d| d.len() >= 2 && d.len() as f64 * spec.corruption_rate >= 1.0)
                .collect();
            if docs.is_empty() {
                return Err(CliError::Data("no document is long enough to corrupt".into()));
            }
            vocab.save(&out.join("vocab.txt"))?;
            run_training(model, cfg, TextSource { docs, objective: spec, vocab }, &out)?;
        }
        None => {
            world = SyntheticWorld::new(SYNTHETIC_VOCAB_SIZE)?;
            world.vocab().save(&out.join("vocab.txt"))?;
            let source = CorpusSource {
                world: &world,
                objective: spec,
                doc_seed: seed,
                num_docs: None,
            };
            run_training(model, cfg, source, &out)?;
        }
    }
    Ok(())
}

fn task_pairs(schema: &TaskSchema, path: &Path, vocab: &Vocabulary) -> Result<(Vec<CorruptionPair>, Vec<String>)> {
    let examples = load_tsv(schema, path)?;
    if examples.is_empty() {
        return Err(CliError::Data(format!("{} has no examples", path.display())));
    }
    let mut pairs = Vec::new();
    let mut targets = Vec::new();
    for ex in &examples {
        let (input, target) = format_example(schema, ex)?;
        let mut pair = CorruptionPair {
            input: vocab.encode(&input),
            target: vocab.encode(&target),
        };
        append_eos(&mut pair, vocab.eos_id());
        pairs.push(pair);
        targets.push(target);
    }
    Ok((pairs, targets))
}

pub fn finetune(s: &Settings) -> Result<()> {
    let seed = s.or("seed", 0u64)?;
    let vocab = load_vocab(s)?;
    let schema = task_schema(s)?;
    let train_path: PathBuf = s.require("train")?;
    let mut models = load_models(s, &vocab)?;
    if models.len() != 1 {
        return Err(CliError::Config("finetune takes a single checkpoint".into()));
    }
    let mut model = models.remove(0);
    let mode = match s.or("mode", "full".to_string())?.as_str() {
        "full" => FineTuneMode::Full,
        "adapters" => {
            model.insert_adapters(s.or("adapter-dim", 32usize)?, &mut Rng::new(seed, 1))?;
            FineTuneMode::Adapters
        }
        "gradual_unfreeze" => FineTuneMode::GradualUnfreeze,
        other => {
            return Err(CliError::Config(format!(
                "unknown mode '{other}' (full, adapters or gradual_unfreeze)"
            )))
        }
    };
    let cfg = TrainConfig {
        total_steps: s.or("steps", 500u64)?,
        batch_tokens: s.or("batch-tokens", 256usize)?,
        max_seq_len: s.or("max-len", 64usize)?,
        schedule: Schedule::Constant { lr: s.or("lr", 0.001)? },
        checkpoint_every: s.or("checkpoint-every", 0u64)?,
        seed,
        repeat: true,
        clip_norm: None,
        mode,
    };
    cfg.validate()?;
    let (pairs, _) = task_pairs(&schema, &train_path, &vocab)?;
    let out = require_out(s)?;
    s.echo(&out)?;
    vocab.save(&out.join("vocab.txt"))?;
    run_training(model, cfg, pairs, &out)?;
    Ok(())
}

struct DecodeSettings {
    beam: usize,
    alpha: f64,
    max_len: usize,
}

impl DecodeSettings {
    fn read(s: &Settings) -> Result<Self> {
        Ok(DecodeSettings {
            beam: s.or("beam", 1usize)?,
            alpha: s.or("alpha", 0.6)?,
            max_len: s.or("max-len", 64usize)?,
        })
    }
}

fn generate(models: &[Transformer], vocab: &Vocabulary, inputs: &[Vec<TokenId>], d: &DecodeSettings) -> Result<Vec<String>> {
    let ensemble = Ensemble::new(models.iter().map(|m| m as &dyn LogitModel).collect())?;
    inputs
        .iter()
        .map(|ids| {
            let h = beam_decode(&ensemble, ids, vocab.eos_id(), d.beam, d.alpha, d.max_len)?;
            Ok(vocab.decode(&h.ids))
        })
        .collect()
}

/// Values are percentages except BLEU, which is already on a 0-100 scale.
fn reported(metric: &str, value: f64) -> f64 {
    if metric == "bleu" {
        value
    } else {
        100.0 * value
    }
}

pub fn evaluate(s: &Settings) -> Result<()> {
    let vocab = load_vocab(s)?;
    let schema = task_schema(s)?;
    let data: PathBuf = s.require("data")?;
    let d = DecodeSettings::read(s)?;
    let format = s.or("format", "table".to_string())?;
    if format != "table" && format != "json" {
        return Err(CliError::Config(format!("unknown format '{format}' (table or json)")));
    }
    let models = load_models(s, &vocab)?;
    let (pairs, targets) = task_pairs(&schema, &data, &vocab)?;
    let inputs: Vec<Vec<TokenId>> = pairs.into_iter().map(|p| p.input).collect();
    let outputs = generate(&models, &vocab, &inputs, &d)?;
    let metrics = evaluate_task(&schema, &outputs, &targets)?;
    let mut table = String::from("task\tmetric\tvalue\tcount\n");
    let mut rows = Vec::new();
    for m in &metrics {
        let v = reported(&m.name, m.value);
        writeln!(table, "{}\t{}\t{:.2}\t{}", schema.name, m.name, v, m.count).expect("string write");
        rows.push(serde_json::json!({"task": schema.name, "metric": m.name, "value": v, "count": m.count}));
    }
    let json = serde_json::to_string_pretty(&rows).expect("metrics serialize") + "\n";
    if let Some(out) = out_dir(s)? {
        write_file(&out.join("metrics.tsv"), &table)?;
        write_file(&out.join("metrics.json"), &json)?;
        write_file(&out.join("predictions.txt"), outputs.join("\n") + "\n")?;
        s.echo(&out)?;
    }
    print!("{}", if format == "json" { &json } else { &table });
    Ok(())
}

pub fn decode(s: &Settings) -> Result<()> {
    let vocab = load_vocab(s)?;
    let texts: Vec<String> = match (s.get::<String>("text")?, s.path("input")?) {
        (Some(t), _) => vec![t],
        (None, Some(p)) => read_text(&p)?.lines().map(str::to_string).collect(),
        (None, None) => return Err(CliError::Config("one of 'text' or 'input' is required".into())),
    };
    let d = DecodeSettings::read(s)?;
    let models = load_models(s, &vocab)?;
    let inputs: Vec<Vec<TokenId>> = texts.iter().map(|t| encode_input(&vocab, t)).collect();
    let outputs = generate(&models, &vocab, &inputs, &d)?;
    let mut text = outputs.join("\n");
    text.push('\n');
    if let Some(out) = out_dir(s)? {
        write_file(&out.join("decoded.txt"), &text)?;
        s.echo(&out)?;
    }
    print!("{text}");
    Ok(())
}

pub fn inspect_checkpoint(s: &Settings) -> Result<()> {
    let ckpt = Checkpoint::load(&s.require::<PathBuf>("checkpoint")?)?;
    let m = &ckpt.manifest;
    let c = &m.config;
    let mut text = String::new();
    let mut put = |k: &str, v: String| writeln!(text, "{k}={v}").expect("string write");
    put("step", m.step.to_string());
    put("fingerprint", m.fingerprint.clone());
    put("architecture", c.architecture.name().to_string());
    put("d_model", c.d_model.to_string());
    put("d_ff", c.d_ff.to_string());
    put("d_kv", c.d_kv.to_string());
    put("num_heads", c.num_heads.to_string());
    put("num_layers", c.num_layers.to_string());
    put("vocab_size", c.vocab_size.to_string());
    put("dropout_rate", c.dropout_rate.to_string());
    put("adapter_dim", c.adapter_dim.map_or("none".to_string(), |d| d.to_string()));
    put("parameters", ckpt.entries.iter().map(|(_, t)| t.numel()).sum::<usize>().to_string());
    put("tensors", ckpt.entries.len().to_string());
    for (name, t) in &ckpt.entries {
        put(&format!("tensor.{name}"), format!("{:?}", t.shape()));
    }
    if let Some(out) = out_dir(s)? {
        write_file(&out.join("inspect.txt"), &text)?;
        s.echo(&out)?;
    }
    print!("{text}");
    Ok(())
}
