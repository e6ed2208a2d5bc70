//! The `ttx` command line: vocabulary training, corpus cleaning, objective
//! and mixture previews, pre-training, fine-tuning, evaluation and decoding.

mod commands;
pub mod settings;

use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches, Command};
use thiserror::Error;

pub use settings::{parse_config, Settings, ECHO_FILE};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] ttx::Error),
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Io { .. } => "io",
            CliError::Core(e) => match e {
                ttx::Error::Config(_) | ttx::Error::Parameter(_) => "config",
                ttx::Error::Io { .. } => "io",
                ttx::Error::Format(_) => "format",
                _ => "data",
            },
        }
    }

    /// `error kind=<kind> message=<JSON string>`, always one line.
    pub fn line(&self) -> String {
        format!(
            "error kind={} message={}",
            self.kind(),
            serde_json::Value::String(self.to_string())
        )
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

const COMMON: [(&str, &str); 3] = [
    ("seed", "seed for every random choice (default 0)"),
    ("out", "output directory"),
    ("threads", "maximum worker threads"),
];

/// Per command: name, summary and the settings it reads.
const COMMANDS: [(&str, &str, &[(&str, &str)]); 9] = [
    (
        "train-vocab",
        "train a byte-pair vocabulary on a text file (one document per line)",
        &[
            ("input", "text file"),
            ("size", "total vocabulary size (default 1000)"),
            ("sentinels", "number of sentinel ids (default 100)"),
        ],
    ),
    (
        "clean-corpus",
        "filter and deduplicate a page file",
        &[
            ("input", "page file"),
            ("format", "tsv or binary (default tsv)"),
            ("language-threshold", "minimum English probability, 0 disables (default 0.99)"),
            ("bad-words", "file with one blocked word or phrase per line"),
            ("domain-mode", "none, domain or url (default none)"),
            ("allowlist", "allowlist file for domain-mode"),
            ("dedup", "off, spans or pages (default spans)"),
        ],
    ),
    (
        "corrupt-preview",
        "show the input and target an objective produces for a text",
        &[
            ("text", "text to corrupt"),
            ("input", "file to read the text from"),
            ("objective", "objective name (default random_spans)"),
            ("rate", "corruption rate (default 0.15)"),
            ("mean-span", "mean span length (default 3)"),
            ("samples", "number of draws to show (default 1)"),
            ("vocab", "vocabulary file; by default every word is one token"),
        ],
    ),
    (
        "mix-preview",
        "print the mixing-rate table for a set of tasks",
        &[
            ("tasks", "comma-separated name:size list"),
            ("strategy", "proportional, temperature or equal (default proportional)"),
            ("limit", "size cap K (default 2097152)"),
            ("temperature", "mixing temperature T (default 1)"),
        ],
    ),
    (
        "pretrain",
        "pre-train a model on unlabeled text or the synthetic corpus",
        &[
            ("preset", "model size: toy, small, base, large, 3b, 11b (default toy)"),
            ("allow-oversized", "permit presets too large for a desk machine"),
            ("input", "text file, one document per line; synthetic corpus if absent"),
            ("vocab", "vocabulary file, required with input"),
            ("objective", "objective name (default random_spans)"),
            ("rate", "corruption rate (default 0.15)"),
            ("mean-span", "mean span length (default 3)"),
            ("steps", "training steps (default 1000)"),
            ("batch-tokens", "tokens per batch (default 256)"),
            ("max-len", "row length (default 32)"),
            ("schedule", "inverse_sqrt or constant (default inverse_sqrt)"),
            ("warmup", "inverse_sqrt warm-up steps (default 10000)"),
            ("lr", "constant learning rate (default 0.01)"),
            ("dropout", "dropout rate (default from preset)"),
            ("checkpoint-every", "checkpoint period in steps, 0 for first and last only (default 0)"),
        ],
    ),
    (
        "finetune",
        "fine-tune a checkpoint on a task file",
        &[
            ("checkpoint", "checkpoint to start from"),
            ("vocab", "vocabulary file"),
            ("task", "task name"),
            ("train", "tab-separated training examples"),
            ("steps", "training steps (default 500)"),
            ("batch-tokens", "tokens per batch (default 256)"),
            ("max-len", "row length (default 64)"),
            ("lr", "constant learning rate (default 0.001)"),
            ("mode", "full, adapters or gradual_unfreeze (default full)"),
            ("adapter-dim", "adapter width for mode adapters (default 32)"),
            ("checkpoint-every", "checkpoint period in steps (default 0)"),
        ],
    ),
    (
        "evaluate",
        "score a checkpoint on a task file",
        &[
            ("checkpoint", "checkpoint, or comma-separated checkpoints to ensemble"),
            ("vocab", "vocabulary file"),
            ("task", "task name"),
            ("data", "tab-separated evaluation examples"),
            ("beam", "beam width (default 1)"),
            ("alpha", "length penalty exponent (default 0.6)"),
            ("max-len", "maximum output tokens (default 64)"),
            ("format", "table or json (default table)"),
        ],
    ),
    (
        "decode",
        "generate outputs for input texts",
        &[
            ("checkpoint", "checkpoint, or comma-separated checkpoints to ensemble"),
            ("vocab", "vocabulary file"),
            ("text", "single input text"),
            ("input", "file with one input per line"),
            ("beam", "beam width (default 1)"),
            ("alpha", "length penalty exponent (default 0.6)"),
            ("max-len", "maximum output tokens (default 64)"),
        ],
    ),
    (
        "inspect-checkpoint",
        "print a checkpoint's manifest and tensor shapes",
        &[("checkpoint", "checkpoint file")],
    ),
];

fn command() -> Command {
    let mut root = Command::new("ttx")
        .about("Text-to-text transfer learning toolkit")
        .subcommand_required(true)
        .disable_help_subcommand(true);
    for (name, about, keys) in COMMANDS {
        let mut sub = Command::new(name).about(about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key = value settings file; flags override it"),
        );
        for (key, help) in keys.iter().chain(COMMON.iter()) {
            sub = sub.arg(Arg::new(*key).long(*key).value_name("VALUE").help(*help).action(ArgAction::Set));
        }
        root = root.subcommand(sub);
    }
    root
}

fn keys_of(name: &str) -> Vec<&'static str> {
    COMMANDS
        .iter()
        .find(|c| c.0 == name)
        .map(|c| c.2.iter().chain(COMMON.iter()).map(|k| k.0).collect())
        .unwrap_or_default()
}

fn dispatch(name: &str, m: &ArgMatches) -> Result<()> {
    let s = Settings::from_matches(m, &keys_of(name))?;
    if let Some(n) = s.get::<usize>("threads")? {
        if n == 0 {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        // fails only if a pool already exists, which keeps its own size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match name {
        "train-vocab" => commands::train_vocab(&s),
        "clean-corpus" => commands::clean_corpus(&s),
        "corrupt-preview" => commands::corrupt_preview(&s),
        "mix-preview" => commands::mix_preview(&s),
        "pretrain" => commands::pretrain(&s),
        "finetune" => commands::finetune(&s),
        "evaluate" => commands::evaluate(&s),
        "decode" => commands::decode(&s),
        "inspect-checkpoint" => commands::inspect_checkpoint(&s),
        other => Err(CliError::Usage(format!("unknown command '{other}'"))),
    }
}

/// Runs one invocation (`argv[0]` is the program name) and returns the
/// process exit code. Errors are reported as a single line on stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = match command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            let err = CliError::Usage(first);
            eprintln!("{}", err.line());
            return err.exit_code();
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    match dispatch(name, sub) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}
