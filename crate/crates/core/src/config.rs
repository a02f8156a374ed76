//! Experiment configuration: a flat `key = value` file where every key can
//! also be overridden on the command line.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::LatentSpec;
use crate::networks::{Generation, NetworkDims};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Dae,
    Dst,
    Dvae,
    Dvst,
    DiVae,
    DiVst,
    AeEd,
    StEd,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Dae,
        Variant::Dst,
        Variant::Dvae,
        Variant::Dvst,
        Variant::DiVae,
        Variant::DiVst,
        Variant::AeEd,
        Variant::StEd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dae => "dae",
            Variant::Dst => "dst",
            Variant::Dvae => "dvae",
            Variant::Dvst => "dvst",
            Variant::DiVae => "di-vae",
            Variant::DiVst => "di-vst",
            Variant::AeEd => "ae-ed",
            Variant::StEd => "st-ed",
        }
    }

    pub fn is_laed(self) -> bool {
        matches!(self, Variant::AeEd | Variant::StEd)
    }

    /// What the sentence model (or, for LAED, its recognizer) is trained to generate.
    pub fn generation(self) -> Generation {
        match self {
            Variant::Dae | Variant::Dvae | Variant::DiVae | Variant::AeEd => Generation::Reconstruct,
            Variant::Dst | Variant::Dvst | Variant::DiVst | Variant::StEd => Generation::SkipThought,
        }
    }

    /// The sentence variant used to pre-train a LAED recognizer.
    pub fn recognizer_variant(self) -> Option<Variant> {
        match self {
            Variant::AeEd => Some(Variant::DiVae),
            Variant::StEd => Some(Variant::DiVst),
            _ => None,
        }
    }

    pub fn uses_elbo(self) -> bool {
        matches!(self, Variant::Dvae | Variant::Dvst)
    }

    pub fn uses_batch_prior(self) -> bool {
        matches!(self, Variant::DiVae | Variant::DiVst)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == norm || v.name().replace('-', "") == norm)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::config("variant", format!("unknown variant `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

/// How the corpus file is laid out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorpusFormat {
    /// One sentence per line.
    Sentences,
    /// One JSON dialog per line.
    Dialogs,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sentences" => Ok(CorpusFormat::Sentences),
            "dialogs" => Ok(CorpusFormat::Dialogs),
            _ => Err(Error::config("format", format!("expected `sentences` or `dialogs`, got `{s}`"))),
        }
    }
}

impl fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorpusFormat::Sentences => "sentences",
            CorpusFormat::Dialogs => "dialogs",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub num_vars: usize,
    pub num_classes: usize,
    pub temperature: f64,
    pub embed_dim: usize,
    pub recognizer_hidden: usize,
    pub utterance_hidden: usize,
    pub context_hidden: usize,
    pub decoder_hidden: usize,
    pub policy_hidden: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub lambda: f64,
    pub lambda_warmup: u64,
    pub kl_anneal: bool,
    pub warmup_steps: u64,
    pub bow: bool,
    pub bow_weight: f64,
    pub context_window: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// 0 means no step limit.
    pub max_steps: u64,
    pub vocab_size: usize,
    pub max_len: usize,
    pub eval_attribute_samples: usize,
    pub seed: u64,
    pub format: CorpusFormat,
    pub tokenizer: String,
    pub data_path: Option<PathBuf>,
    pub train_path: Option<PathBuf>,
    pub valid_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    /// Pre-trained run whose recognizer a LAED variant reuses.
    pub recognizer_run: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub run_name: Option<String>,
    pub sweep_batch_sizes: Vec<usize>,
    pub sweep_budget: u64,
    pub sweep_num_vars: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::DiVae,
            num_vars: 20,
            num_classes: 10,
            temperature: 1.0,
            embed_dim: 200,
            recognizer_hidden: 512,
            utterance_hidden: 256,
            context_hidden: 512,
            decoder_hidden: 512,
            policy_hidden: 512,
            batch_size: 30,
            learning_rate: 0.001,
            grad_clip: 5.0,
            lambda: 1.0,
            lambda_warmup: 30,
            kl_anneal: false,
            warmup_steps: 10_000,
            bow: false,
            bow_weight: 1.0,
            context_window: 10,
            max_epochs: 50,
            patience: 5,
            max_steps: 0,
            vocab_size: 10_000,
            max_len: crate::laed::DEFAULT_MAX_LEN,
            eval_attribute_samples: 200,
            seed: 0,
            format: CorpusFormat::Sentences,
            tokenizer: "whitespace".into(),
            data_path: None,
            train_path: None,
            valid_path: None,
            test_path: None,
            recognizer_run: None,
            output_dir: PathBuf::from("runs"),
            run_name: None,
            sweep_batch_sizes: vec![2, 5, 10, 30],
            sweep_budget: 1000,
            sweep_num_vars: vec![1, 3, 5],
        }
    }
}

/// Every configuration key with a one-line description.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("variant", "dae, dst, dvae, dvst, di-vae, di-vst, ae-ed or st-ed"),
    ("M", "number of latent variables"),
    ("K", "classes per latent variable"),
    ("tau", "Gumbel-Softmax temperature"),
    ("embed_dim", "word embedding size"),
    ("recognizer_hidden", "recognition GRU size"),
    ("utterance_hidden", "utterance encoder GRU size per direction"),
    ("context_hidden", "discourse GRU size (must equal decoder_hidden)"),
    ("decoder_hidden", "decoder GRU size"),
    ("policy_hidden", "policy MLP hidden size"),
    ("batch_size", "mini-batch size"),
    ("learning_rate", "Adam learning rate"),
    ("grad_clip", "global gradient-norm clip"),
    ("lambda", "attribute loss weight (LAED variants)"),
    ("lambda_warmup", "steps over which lambda ramps up"),
    ("kl_anneal", "anneal the KL weight (dvae, dvst)"),
    ("warmup_steps", "KL annealing length in steps"),
    ("bow", "add the bag-of-words loss (dvae, dvst)"),
    ("bow_weight", "bag-of-words loss weight"),
    ("context_window", "context utterances per response"),
    ("max_epochs", "epoch limit"),
    ("patience", "early-stopping patience in epochs"),
    ("max_steps", "optimization step limit (0 = none)"),
    ("vocab_size", "vocabulary cap, specials excluded"),
    ("max_len", "generation length limit"),
    ("eval_attribute_samples", "pairs used for attribute accuracy in evaluation"),
    ("seed", "random seed"),
    ("format", "sentences or dialogs"),
    ("tokenizer", "whitespace or simple"),
    ("data_path", "corpus split 80/10/10 by the seed"),
    ("train_path", "training split"),
    ("valid_path", "validation split"),
    ("test_path", "test split"),
    ("recognizer_run", "pre-trained run providing the LAED recognizer"),
    ("output_dir", "directory holding run directories"),
    ("run_name", "run directory name (default: variant-seed)"),
    ("sweep_batch_sizes", "comma-separated batch sizes for the batch sweep"),
    ("sweep_budget", "K^M budget for the shape sweep"),
    ("sweep_num_vars", "comma-separated M values for the shape sweep"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::config(key, format!("expected a boolean, got `{value}`"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|v| parse(key, v.trim()))
        .collect()
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn join(list: &[usize]) -> String {
    list.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl ModelConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "variant" => self.variant = value.parse()?,
            "M" => self.num_vars = parse(key, value)?,
            "K" => self.num_classes = parse(key, value)?,
            "tau" => self.temperature = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "recognizer_hidden" => self.recognizer_hidden = parse(key, value)?,
            "utterance_hidden" => self.utterance_hidden = parse(key, value)?,
            "context_hidden" => self.context_hidden = parse(key, value)?,
            "decoder_hidden" => self.decoder_hidden = parse(key, value)?,
            "policy_hidden" => self.policy_hidden = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "grad_clip" => self.grad_clip = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "lambda_warmup" => self.lambda_warmup = parse(key, value)?,
            "kl_anneal" => self.kl_anneal = parse_bool(key, value)?,
            "warmup_steps" => self.warmup_steps = parse(key, value)?,
            "bow" => self.bow = parse_bool(key, value)?,
            "bow_weight" => self.bow_weight = parse(key, value)?,
            "context_window" => self.context_window = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "max_steps" => self.max_steps = parse(key, value)?,
            "vocab_size" => self.vocab_size = parse(key, value)?,
            "max_len" => self.max_len = parse(key, value)?,
            "eval_attribute_samples" => self.eval_attribute_samples = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "format" => self.format = value.parse()?,
            "tokenizer" => self.tokenizer = value.to_string(),
            "data_path" => self.data_path = opt_path(value),
            "train_path" => self.train_path = opt_path(value),
            "valid_path" => self.valid_path = opt_path(value),
            "test_path" => self.test_path = opt_path(value),
            "recognizer_run" => self.recognizer_run = opt_path(value),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "run_name" => self.run_name = (!value.is_empty()).then(|| value.to_string()),
            "sweep_batch_sizes" => self.sweep_batch_sizes = parse_list(key, value)?,
            "sweep_budget" => self.sweep_budget = parse(key, value)?,
            "sweep_num_vars" => self.sweep_num_vars = parse_list(key, value)?,
            _ => return Err(Error::config(key, "unknown configuration key")),
        }
        Ok(())
    }

    /// Text form of one key.
    pub fn get(&self, key: &str) -> Result<String> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        Ok(match key {
            "variant" => self.variant.to_string(),
            "M" => self.num_vars.to_string(),
            "K" => self.num_classes.to_string(),
            "tau" => self.temperature.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "recognizer_hidden" => self.recognizer_hidden.to_string(),
            "utterance_hidden" => self.utterance_hidden.to_string(),
            "context_hidden" => self.context_hidden.to_string(),
            "decoder_hidden" => self.decoder_hidden.to_string(),
            "policy_hidden" => self.policy_hidden.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "grad_clip" => self.grad_clip.to_string(),
            "lambda" => self.lambda.to_string(),
            "lambda_warmup" => self.lambda_warmup.to_string(),
            "kl_anneal" => self.kl_anneal.to_string(),
            "warmup_steps" => self.warmup_steps.to_string(),
            "bow" => self.bow.to_string(),
            "bow_weight" => self.bow_weight.to_string(),
            "context_window" => self.context_window.to_string(),
            "max_epochs" => self.max_epochs.to_string(),
            "patience" => self.patience.to_string(),
            "max_steps" => self.max_steps.to_string(),
            "vocab_size" => self.vocab_size.to_string(),
            "max_len" => self.max_len.to_string(),
            "eval_attribute_samples" => self.eval_attribute_samples.to_string(),
            "seed" => self.seed.to_string(),
            "format" => self.format.to_string(),
            "tokenizer" => self.tokenizer.clone(),
            "data_path" => path(&self.data_path),
            "train_path" => path(&self.train_path),
            "valid_path" => path(&self.valid_path),
            "test_path" => path(&self.test_path),
            "recognizer_run" => path(&self.recognizer_run),
            "output_dir" => self.output_dir.display().to_string(),
            "run_name" => self.run_name.clone().unwrap_or_default(),
            "sweep_batch_sizes" => join(&self.sweep_batch_sizes),
            "sweep_budget" => self.sweep_budget.to_string(),
            "sweep_num_vars" => join(&self.sweep_num_vars),
            _ => return Err(Error::config(key, "unknown configuration key")),
        })
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(line, format!("line {}: expected `key = value`", i + 1))
            })?;
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse_text(&text)
    }

    /// Every key, in [`CONFIG_KEYS`] order; round-trips through [`Self::parse_text`].
    pub fn to_text(&self) -> String {
        CONFIG_KEYS
            .iter()
            .map(|(k, _)| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn latent_spec(&self) -> Result<LatentSpec> {
        LatentSpec::new(self.num_vars, self.num_classes, self.temperature)
            .map_err(|e| Error::config("M", e.to_string()))
    }

    pub fn dims(&self) -> NetworkDims {
        NetworkDims {
            embed_dim: self.embed_dim,
            recognizer_hidden: self.recognizer_hidden,
            decoder_hidden: self.decoder_hidden,
            utterance_hidden: self.utterance_hidden,
            context_hidden: self.context_hidden,
            policy_hidden: self.policy_hidden,
        }
    }

    pub fn run_name(&self) -> String {
        self.run_name
            .clone()
            .unwrap_or_else(|| format!("{}-seed{}", self.variant, self.seed))
    }

    pub fn validate(&self) -> Result<()> {
        let positive: [(&str, usize); 11] = [
            ("M", self.num_vars),
            ("embed_dim", self.embed_dim),
            ("recognizer_hidden", self.recognizer_hidden),
            ("utterance_hidden", self.utterance_hidden),
            ("context_hidden", self.context_hidden),
            ("decoder_hidden", self.decoder_hidden),
            ("policy_hidden", self.policy_hidden),
            ("batch_size", self.batch_size),
            ("context_window", self.context_window),
            ("max_epochs", self.max_epochs),
            ("max_len", self.max_len),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::config(k, "must be positive"));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::config("K", "must be at least 2"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config("tau", "must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::config("grad_clip", "must be positive"));
        }
        if self.warmup_steps == 0 {
            return Err(Error::config("warmup_steps", "must be positive"));
        }
        if !(self.bow_weight >= 0.0) {
            return Err(Error::config("bow_weight", "must be non-negative"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::config("lambda", "must be non-negative"));
        }
        if self.lambda != 1.0 && !self.variant.is_laed() {
            return Err(Error::config("lambda", "only applies to ae-ed and st-ed"));
        }
        if (self.kl_anneal || self.bow) && !self.variant.uses_elbo() {
            return Err(Error::config(
                if self.bow { "bow" } else { "kl_anneal" },
                "only applies to dvae and dvst",
            ));
        }
        if self.variant.is_laed() && self.context_hidden != self.decoder_hidden {
            return Err(Error::config("context_hidden", "must equal decoder_hidden"));
        }
        if !matches!(self.tokenizer.as_str(), "whitespace" | "simple") {
            return Err(Error::config("tokenizer", "expected `whitespace` or `simple`"));
        }
        if self.sweep_batch_sizes.iter().any(|&n| n == 0) {
            return Err(Error::config("sweep_batch_sizes", "batch sizes must be positive"));
        }
        if self.sweep_num_vars.iter().any(|&m| m == 0) {
            return Err(Error::config("sweep_num_vars", "M values must be positive"));
        }
        if self.sweep_budget < 2 {
            return Err(Error::config("sweep_budget", "must be at least 2"));
        }
        Ok(())
    }
}
