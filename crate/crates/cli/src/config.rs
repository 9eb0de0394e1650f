//! Run configuration: built-in defaults, then a `key=value` file, then
//! command-line overrides, last writer wins.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sdgnn::eval::DEFAULT_THRESHOLD;
use sdgnn::model::SdgnnConfig;
use sdgnn::train::TrainConfig;

/// Bad flags or configuration. Maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub min_freq: usize,
    /// Reject the whole file on the first bad record instead of skipping it.
    pub strict: bool,
    pub threshold: f64,
    pub model: SdgnnConfig,
    pub training: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let training = TrainConfig::default();
        RunConfig {
            train: None,
            val: None,
            data: None,
            vectors: None,
            checkpoint: None,
            out: None,
            seed: training.seed,
            min_freq: 1,
            strict: true,
            threshold: DEFAULT_THRESHOLD,
            model: SdgnnConfig::default(),
            training,
        }
    }
}

pub const KEYS: &[&str] = &[
    "train",
    "val",
    "data",
    "vectors",
    "checkpoint",
    "out",
    "seed",
    "min_freq",
    "strict",
    "threshold",
    "d",
    "d_word",
    "k",
    "dropout",
    "leaky_slope",
    "mode",
    "max_len",
    "share_relations",
    "lr",
    "batch_size",
    "eta",
    "l2",
    "max_epochs",
    "patience",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| format!("{key}: cannot parse {value:?}: {e}"))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let path = || Some(PathBuf::from(value));
        match key {
            "train" => self.train = path(),
            "val" => self.val = path(),
            "data" => self.data = path(),
            "vectors" => self.vectors = path(),
            "checkpoint" => self.checkpoint = path(),
            "out" => self.out = path(),
            "seed" => self.seed = parse(key, value)?,
            "min_freq" => self.min_freq = parse(key, value)?,
            "strict" => self.strict = parse(key, value)?,
            "threshold" => self.threshold = parse(key, value)?,
            "d" => self.model.d = parse(key, value)?,
            "d_word" => self.model.d_word = parse(key, value)?,
            "k" => self.model.k = parse(key, value)?,
            "dropout" => self.model.dropout = parse(key, value)?,
            "leaky_slope" => self.model.leaky_slope = parse(key, value)?,
            "mode" => self.model.mode = parse(key, value)?,
            "max_len" => self.model.max_len = parse(key, value)?,
            "share_relations" => self.model.share_relations = parse(key, value)?,
            "lr" => self.training.lr = parse(key, value)?,
            "batch_size" => self.training.batch_size = parse(key, value)?,
            "eta" => self.training.eta = parse(key, value)?,
            "l2" => self.training.l2 = parse(key, value)?,
            "max_epochs" => self.training.max_epochs = parse(key, value)?,
            "patience" => self.training.patience = parse(key, value)?,
            _ => return Err(format!("unknown key {key:?} (known: {})", KEYS.join(", "))),
        }
        Ok(())
    }

    /// Applies a `key=value` file. Blank lines and lines starting with `#`
    /// are ignored; a key may appear once.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), String> {
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = |msg: String| format!("{origin}:{}: {msg}", i + 1);
            let (key, value) = line.split_once('=').ok_or_else(|| at(format!("expected key=value, got {line:?}")))?;
            let key = key.trim();
            if !seen.insert(key.to_owned()) {
                return Err(at(format!("duplicate key {key:?}")));
            }
            self.set(key, value.trim()).map_err(at)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> anyhow::Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("--config {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string()).map_err(usage)
    }

    /// Applies one `key=value` override from the command line.
    pub fn apply_pair(&mut self, pair: &str) -> Result<(), String> {
        let (key, value) = pair.split_once('=').ok_or_else(|| format!("--set expects key=value, got {pair:?}"))?;
        self.set(key.trim(), value.trim())
    }

    /// Training settings with the run seed folded in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.training.clone() }
    }
}
