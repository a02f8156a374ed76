//! Data preparation, optimization, early stopping, checkpoints and sweeps.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Graph, Matrix, ParamStore};
use crate::config::{CorpusFormat, ModelConfig, Variant};
use crate::corpus::{
    encode_corpus, make_context_pairs, make_triples, read_dialogs, read_sentences, split_dialogs,
    Batcher, ContextResponsePair, Dialog, RawCorpus, SentenceTriple, SimpleTokenizer, Tokenizer,
    Utterance, Vocabulary, WhitespaceTokenizer,
};
use crate::error::{Error, Result};
use crate::gradcheck::HasParams;
use crate::laed::{attr_laed_loss, lambda_schedule, LaedModel};
use crate::metrics::{evaluate_laed, evaluate_sentence_model, EvalSet, MetricsReport};
use crate::networks::{load_params, SentenceModel};
use crate::objectives::{kl_anneal_schedule, sentence_loss, LossBreakdown, Objective, SentenceBatch, SentenceObjective};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const VALIDATION_NOISE_SEED: u64 = 0x5eed_0f_7a11d;

/// Encoded train/valid/test dialogs sharing one vocabulary. A plain-sentence
/// corpus is held as one-turn dialogs.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub train: Vec<Dialog>,
    pub valid: Vec<Dialog>,
    pub test: Vec<Dialog>,
    pub dialogic: bool,
}

pub fn tokenizer_named(name: &str) -> Result<Box<dyn Tokenizer>> {
    match name {
        "whitespace" => Ok(Box::new(WhitespaceTokenizer)),
        "simple" => Ok(Box::new(SimpleTokenizer)),
        _ => Err(Error::config("tokenizer", format!("unknown tokenizer `{name}`"))),
    }
}

impl Dataset {
    /// Builds the vocabulary from the training split unless one is given.
    pub fn from_raw(
        train: &RawCorpus,
        valid: &RawCorpus,
        test: &RawCorpus,
        vocab: Option<Vocabulary>,
        vocab_cap: usize,
        dialogic: bool,
    ) -> Result<Self> {
        let vocab = match vocab {
            Some(v) => v,
            None => Vocabulary::build(train.sentences(), vocab_cap)?,
        };
        Ok(Self {
            train: encode_corpus(train, &vocab),
            valid: encode_corpus(valid, &vocab),
            test: encode_corpus(test, &vocab),
            vocab,
            dialogic,
        })
    }

    pub fn read_raw(config: &ModelConfig) -> Result<(RawCorpus, RawCorpus, RawCorpus)> {
        let tok = tokenizer_named(&config.tokenizer)?;
        let read = |p: &Path| match config.format {
            CorpusFormat::Sentences => read_sentences(p, tok.as_ref()),
            CorpusFormat::Dialogs => read_dialogs(p, tok.as_ref()),
        };
        if let Some(p) = &config.data_path {
            let raw = read(p)?;
            let (a, b, c) = split_dialogs(&raw.dialogs, config.seed);
            let wrap = |dialogs| RawCorpus { dialogs, dropped_empty: 0 };
            return Ok((wrap(a), wrap(b), wrap(c)));
        }
        match (&config.train_path, &config.valid_path, &config.test_path) {
            (Some(a), Some(b), Some(c)) => Ok((read(a)?, read(b)?, read(c)?)),
            _ => Err(Error::config(
                "data_path",
                "set data_path, or all of train_path, valid_path and test_path",
            )),
        }
    }

    pub fn load(config: &ModelConfig, vocab: Option<Vocabulary>) -> Result<Self> {
        let (a, b, c) = Self::read_raw(config)?;
        Self::from_raw(&a, &b, &c, vocab, config.vocab_size, config.format == CorpusFormat::Dialogs)
    }

    pub fn split(&self, name: &str) -> Result<&[Dialog]> {
        match name {
            "train" => Ok(&self.train),
            "valid" | "validation" => Ok(&self.valid),
            "test" => Ok(&self.test),
            _ => Err(Error::invalid(format!("unknown split `{name}` (train, valid or test)"))),
        }
    }
}

/// The training items a variant consumes.
#[derive(Clone, Debug)]
pub enum TrainItems {
    Sentences(Vec<Utterance>),
    Triples(Vec<SentenceTriple>),
    Pairs(Vec<ContextResponsePair>),
}

impl TrainItems {
    pub fn len(&self) -> usize {
        match self {
            TrainItems::Sentences(v) => v.len(),
            TrainItems::Triples(v) => v.len(),
            TrainItems::Pairs(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn incompatible(variant: Variant, reason: &str) -> Error {
    Error::IncompatibleCorpus {
        variant: variant.to_string(),
        reason: reason.to_string(),
    }
}

/// Sentences (non-empty utterances), triples or context-response pairs.
pub fn items_for(variant: Variant, dialogs: &[Dialog], dialogic: bool, window: usize) -> Result<TrainItems> {
    if variant.is_laed() {
        if !dialogic {
            return Err(incompatible(variant, "context-response pairs need a dialog corpus"));
        }
        let pairs: Vec<_> = make_context_pairs(dialogs, window)
            .into_iter()
            .filter(|p| !p.response.is_empty())
            .collect();
        if pairs.is_empty() {
            return Err(incompatible(variant, "no dialog has two turns"));
        }
        return Ok(TrainItems::Pairs(pairs));
    }
    match variant.generation() {
        crate::networks::Generation::Reconstruct => {
            let s: Vec<Utterance> = dialogs.iter().flatten().filter(|u| !u.is_empty()).cloned().collect();
            if s.is_empty() {
                return Err(Error::EmptyCorpus);
            }
            Ok(TrainItems::Sentences(s))
        }
        crate::networks::Generation::SkipThought => {
            if !dialogic {
                return Err(incompatible(variant, "sentence triples need a dialog corpus"));
            }
            let t: Vec<_> = make_triples(dialogs)
                .into_iter()
                .filter(|t| !t.current.is_empty())
                .collect();
            if t.is_empty() {
                return Err(incompatible(variant, "no dialog has three turns"));
            }
            Ok(TrainItems::Triples(t))
        }
    }
}

/// A trained sentence model or LAED model.
#[derive(Clone, Debug)]
pub enum AnyModel {
    Sentence(SentenceModel),
    Laed(LaedModel),
}

impl HasParams for AnyModel {
    fn params(&self) -> &ParamStore {
        match self {
            AnyModel::Sentence(m) => &m.store,
            AnyModel::Laed(m) => &m.store,
        }
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            AnyModel::Sentence(m) => &mut m.store,
            AnyModel::Laed(m) => &mut m.store,
        }
    }
}

impl AnyModel {
    pub fn as_sentence(&self) -> Option<&SentenceModel> {
        match self {
            AnyModel::Sentence(m) => Some(m),
            AnyModel::Laed(_) => None,
        }
    }

    pub fn as_laed(&self) -> Option<&LaedModel> {
        match self {
            AnyModel::Laed(m) => Some(m),
            AnyModel::Sentence(_) => None,
        }
    }

    pub fn spec(&self) -> crate::latent::LatentSpec {
        match self {
            AnyModel::Sentence(m) => m.spec,
            AnyModel::Laed(m) => m.spec,
        }
    }
}

/// Adam with bias correction; moments are kept per parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Matrix> = store.entries().iter().map(|e| Matrix::zeros(e.value.dim())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Updates every trainable parameter that received a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, scale: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            if store.is_frozen(id) {
                continue;
            }
            let Some(g) = grads.param(id) else { continue };
            let (b1, b2) = (self.beta1, self.beta2);
            self.m[i].zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * g * scale);
            self.v[i].zip_mut_with(g, |v, &g| *v = b2 * *v + (1.0 - b2) * (g * scale) * (g * scale));
            let (lr, eps) = (self.lr, self.eps);
            let p = store.get_mut(id);
            ndarray::Zip::from(p)
                .and(&self.m[i])
                .and(&self.v[i])
                .for_each(|p, &m, &v| *p -= lr * (m / c1) / ((v / c2).sqrt() + eps));
        }
    }
}

/// Global L2 norm of the trainable gradients.
pub fn gradient_norm(store: &ParamStore, grads: &Gradients) -> f64 {
    grads
        .params()
        .filter(|(id, _)| !store.is_frozen(*id))
        .map(|(_, g)| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Factor that brings the global norm down to `clip` (1 when already below).
pub fn clip_scale(norm: f64, clip: f64) -> f64 {
    if norm > clip {
        clip / norm
    } else {
        1.0
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub variant: Variant,
    pub step: u64,
    pub epoch: usize,
    pub best_valid: f64,
    pub params: ParamStore,
    pub optimizer: Adam,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
        let c: Self = serde_json::from_reader(std::io::BufReader::new(f))?;
        if c.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Training(format!(
                "checkpoint format {} is not supported (expected {CHECKPOINT_FORMAT_VERSION})",
                c.format_version
            )));
        }
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub grad_norm: f64,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub epoch: usize,
    pub step: u64,
    pub valid_loss: f64,
    pub validation: MetricsReport,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub config: ModelConfig,
    pub model: AnyModel,
    pub vocab: Vocabulary,
    pub best_valid_loss: f64,
    pub best_step: u64,
    pub steps: u64,
    pub epochs: usize,
    pub valid_report: MetricsReport,
    pub steps_log: Vec<StepRecord>,
    pub validations: Vec<ValidationRecord>,
    pub run_dir: Option<PathBuf>,
}

/// Weights that change during training.
#[derive(Clone, Copy, Debug)]
struct Schedule {
    kl: f64,
    lambda: f64,
}

fn schedule_at(config: &ModelConfig, step: u64) -> Schedule {
    Schedule {
        kl: if config.kl_anneal {
            kl_anneal_schedule(step, config.warmup_steps)
        } else {
            1.0
        },
        lambda: lambda_schedule(config.lambda, step, config.lambda_warmup),
    }
}

fn sentence_objective(config: &ModelConfig, s: Schedule) -> SentenceObjective {
    match config.variant {
        Variant::Dae | Variant::Dst => SentenceObjective::unregularized(),
        Variant::Dvae | Variant::Dvst => {
            SentenceObjective::elbo(s.kl, if config.bow { config.bow_weight } else { 0.0 })
        }
        _ => SentenceObjective::info_max(),
    }
}

fn batch_loss(
    g: &mut Graph,
    model: &AnyModel,
    items: &TrainItems,
    idx: &[usize],
    config: &ModelConfig,
    s: Schedule,
    rng: &mut ChaCha8Rng,
) -> Result<Objective> {
    match (model, items) {
        (AnyModel::Sentence(m), TrainItems::Sentences(v)) => {
            let b: Vec<&Utterance> = idx.iter().map(|&i| &v[i]).collect();
            sentence_loss(g, m, SentenceBatch::Autoencode(&b), &sentence_objective(config, s), rng)
        }
        (AnyModel::Sentence(m), TrainItems::Triples(v)) => {
            let b: Vec<&SentenceTriple> = idx.iter().map(|&i| &v[i]).collect();
            sentence_loss(g, m, SentenceBatch::SkipThought(&b), &sentence_objective(config, s), rng)
        }
        (AnyModel::Laed(m), TrainItems::Pairs(v)) => {
            let b: Vec<&ContextResponsePair> = idx.iter().map(|&i| &v[i]).collect();
            attr_laed_loss(g, m, &b, s.lambda, rng)
        }
        _ => Err(Error::Training("model and training items do not match".into())),
    }
}

/// Size-weighted mean total loss over fixed, unshuffled batches with fixed
/// noise. Never touches parameters.
pub fn validation_loss(model: &AnyModel, items: &TrainItems, config: &ModelConfig) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let full = Schedule {
        kl: 1.0,
        lambda: config.lambda,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(VALIDATION_NOISE_SEED);
    let all: Vec<usize> = (0..items.len()).collect();
    let mut total = 0.0;
    for idx in all.chunks(config.batch_size) {
        let mut g = Graph::new();
        let obj = batch_loss(&mut g, model, items, idx, config, full, &mut rng)?;
        total += obj.breakdown.total * idx.len() as f64;
    }
    Ok(total / items.len() as f64)
}

/// Metrics of `model` on one split of `data`.
pub fn evaluate(model: &AnyModel, data: &Dataset, split: &str, config: &ModelConfig) -> Result<MetricsReport> {
    evaluate_with(model, data, split, config, config.eval_attribute_samples)
}

fn evaluate_with(
    model: &AnyModel,
    data: &Dataset,
    split: &str,
    config: &ModelConfig,
    attribute_samples: usize,
) -> Result<MetricsReport> {
    let items = items_for(config.variant, data.split(split)?, data.dialogic, config.context_window)?;
    evaluate_items(model, &items, split, config, attribute_samples)
}

fn evaluate_items(
    model: &AnyModel,
    items: &TrainItems,
    split: &str,
    config: &ModelConfig,
    attribute_samples: usize,
) -> Result<MetricsReport> {
    match (model, items) {
        (AnyModel::Sentence(m), TrainItems::Sentences(v)) => evaluate_sentence_model(m, EvalSet::Sentences(v), split),
        (AnyModel::Sentence(m), TrainItems::Triples(v)) => evaluate_sentence_model(m, EvalSet::Triples(v), split),
        (AnyModel::Laed(m), TrainItems::Pairs(v)) => evaluate_laed(m, v, split, config.max_len, attribute_samples),
        _ => Err(Error::Training("model and evaluation items do not match".into())),
    }
}

fn new_model(config: &ModelConfig, vocab_size: usize, rng: &mut ChaCha8Rng) -> Result<AnyModel> {
    let spec = config.latent_spec()?;
    if config.variant.is_laed() {
        Ok(AnyModel::Laed(LaedModel::new(
            spec,
            config.dims(),
            config.variant.generation(),
            vocab_size,
            rng,
        )?))
    } else {
        Ok(AnyModel::Sentence(SentenceModel::new(
            spec,
            config.dims(),
            config.variant.generation(),
            vocab_size,
            config.bow,
            rng,
        )))
    }
}

/// Reads the best checkpoint of a run directory.
#[derive(Clone, Debug)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub model: AnyModel,
    pub step: u64,
    pub best_valid: f64,
}

pub const CONFIG_FILE: &str = "config";
pub const VOCAB_FILE: &str = "vocab";
pub const BEST_FILE: &str = "best";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const RECOGNIZER_DIR: &str = "recognizer";

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact(path))
    }
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let config = ModelConfig::load(&require(dir.join(CONFIG_FILE))?)?;
    let vocab = Vocabulary::load(&require(dir.join(VOCAB_FILE))?)?;
    let best = fs::read_to_string(require(dir.join(BEST_FILE))?)?;
    let ckpt = Checkpoint::load(&dir.join(best.trim()))?;
    let mut model = new_model(&config, vocab.len(), &mut ChaCha8Rng::seed_from_u64(0))?;
    load_params(model.params_mut(), &ckpt.params)?;
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        config,
        vocab,
        model,
        step: ckpt.step,
        best_valid: ckpt.best_valid,
    })
}

struct RunWriter {
    dir: PathBuf,
    log: fs::File,
    current: Option<PathBuf>,
}

impl RunWriter {
    fn create(dir: &Path, config: &ModelConfig, vocab: &Vocabulary) -> Result<Self> {
        fs::create_dir_all(dir)?;
        config.save(&dir.join(CONFIG_FILE))?;
        vocab.save(&dir.join(VOCAB_FILE))?;
        let log = fs::File::create(dir.join(LOG_FILE))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            log,
            current: None,
        })
    }

    fn record<T: Serialize>(&mut self, value: &T) -> Result<()> {
        serde_json::to_writer(&mut self.log, value)?;
        self.log.write_all(b"\n")?;
        Ok(())
    }

    /// Writes `params-step-S`, points `best` at it and drops the previous best.
    fn save_best(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let name = format!("params-step-{}", ckpt.step);
        let path = self.dir.join(&name);
        ckpt.save(&path)?;
        fs::write(self.dir.join(BEST_FILE), format!("{name}\n"))?;
        if let Some(old) = self.current.replace(path.clone()) {
            if old != path {
                fs::remove_file(old)?;
            }
        }
        Ok(())
    }
}

/// Trains `config.variant` on `data`. LAED variants reuse the recognizer of
/// `config.recognizer_run`, or pre-train one first (under
/// `<run_dir>/recognizer` when a run directory is given).
pub fn train(config: &ModelConfig, data: &Dataset, run_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let items = items_for(config.variant, &data.train, data.dialogic, config.context_window)?;
    let valid_items = items_for(config.variant, &data.valid, data.dialogic, config.context_window)?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = new_model(config, data.vocab.len(), &mut init_rng)?;
    if let AnyModel::Laed(laed) = &mut model {
        let recognizer = pretrained_recognizer(config, data, run_dir)?;
        *laed = LaedModel::from_recognizer(&recognizer, config.dims(), &mut init_rng)?;
    }

    let mut writer = match run_dir {
        Some(d) => Some(RunWriter::create(d, config, &data.vocab)?),
        None => None,
    };
    let mut adam = Adam::new(model.params(), config.learning_rate);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let batcher = Batcher::new(config.batch_size, config.seed);

    let mut step = 0u64;
    let mut best = f64::INFINITY;
    let mut best_step = 0;
    let mut best_params = model.params().clone();
    let mut stale = 0;
    let mut epochs = 0;
    let mut steps_log = Vec::new();
    let mut validations = Vec::new();
    let mut valid_report = None;

    'epochs: for epoch in 0..config.max_epochs {
        epochs = epoch + 1;
        let mut stop = false;
        for idx in batcher.epoch(items.len(), epoch as u64) {
            let s = schedule_at(config, step);
            let mut g = Graph::new();
            let obj = batch_loss(&mut g, &model, &items, &idx, config, s, &mut noise_rng)?;
            if !obj.breakdown.total.is_finite() {
                return Err(Error::Training(format!("non-finite loss at step {step}")));
            }
            let grads = g.backward(obj.total);
            let norm = gradient_norm(model.params(), &grads);
            adam.step(model.params_mut(), &grads, clip_scale(norm, config.grad_clip));
            step += 1;
            let rec = StepRecord {
                step,
                epoch,
                grad_norm: norm,
                loss: obj.breakdown,
            };
            if let Some(w) = writer.as_mut() {
                w.record(&rec)?;
            }
            steps_log.push(rec);
            if config.max_steps > 0 && step >= config.max_steps {
                stop = true;
                break;
            }
        }

        let vloss = validation_loss(&model, &valid_items, config)?;
        let report = evaluate_items(&model, &valid_items, "valid", config, 0)?;
        info!(
            "epoch {epoch} step {step}: valid loss {vloss:.4}, ppl {:.3}, mi {:.4}, kl {:.4}",
            report.ppl, report.mi, report.marginal_kl
        );
        let vrec = ValidationRecord {
            epoch,
            step,
            valid_loss: vloss,
            validation: report.clone(),
        };
        if let Some(w) = writer.as_mut() {
            w.record(&vrec)?;
        }
        validations.push(vrec);
        if vloss < best {
            best = vloss;
            best_step = step;
            best_params = model.params().clone();
            valid_report = Some(report);
            stale = 0;
            if let Some(w) = writer.as_mut() {
                w.save_best(&Checkpoint {
                    format_version: CHECKPOINT_FORMAT_VERSION,
                    variant: config.variant,
                    step,
                    epoch,
                    best_valid: vloss,
                    params: model.params().clone(),
                    optimizer: adam.clone(),
                })?;
            }
        } else {
            stale += 1;
            debug!("no improvement for {stale} epoch(s)");
        }
        if stop || stale >= config.patience {
            break 'epochs;
        }
    }

    load_params(model.params_mut(), &best_params)?;
    let mut valid_report = valid_report.ok_or_else(|| Error::Training("validation loss never finite".into()))?;
    if config.variant.is_laed() && config.eval_attribute_samples > 0 {
        valid_report = evaluate_items(&model, &valid_items, "valid", config, config.eval_attribute_samples)?;
    }
    Ok(TrainOutcome {
        config: config.clone(),
        model,
        vocab: data.vocab.clone(),
        best_valid_loss: best,
        best_step,
        steps: step,
        epochs,
        valid_report,
        steps_log,
        validations,
        run_dir: run_dir.map(Path::to_path_buf),
    })
}

fn pretrained_recognizer(config: &ModelConfig, data: &Dataset, run_dir: Option<&Path>) -> Result<SentenceModel> {
    let want = config.variant.generation();
    if let Some(dir) = &config.recognizer_run {
        let run = load_run(dir)?;
        if run.vocab != data.vocab {
            return Err(Error::config("recognizer_run", "vocabulary differs from this corpus"));
        }
        return match run.model {
            AnyModel::Sentence(m) if m.generation == want => Ok(m),
            _ => Err(Error::config(
                "recognizer_run",
                format!("{} needs a recognizer trained with {}", config.variant, config.variant.recognizer_variant().unwrap()),
            )),
        };
    }
    let mut rc = config.clone();
    rc.variant = config.variant.recognizer_variant().expect("LAED variant");
    rc.lambda = 1.0;
    rc.recognizer_run = None;
    info!("pre-training the {} recognizer", rc.variant);
    let dir = run_dir.map(|d| d.join(RECOGNIZER_DIR));
    match train(&rc, data, dir.as_deref())?.model {
        AnyModel::Sentence(m) => Ok(m),
        AnyModel::Laed(_) => unreachable!("recognizer variants are sentence models"),
    }
}

/// Loads data, trains, and writes the run under `output_dir/run_name`.
pub fn run_training(config: &ModelConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let vocab = match (&config.recognizer_run, config.variant.is_laed()) {
        (Some(dir), true) => Some(Vocabulary::load(&require(dir.join(VOCAB_FILE))?)?),
        _ => None,
    };
    let data = Dataset::load(config, vocab)?;
    let dir = config.output_dir.join(config.run_name());
    train(config, &data, Some(&dir))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub batch_size: usize,
    pub num_vars: usize,
    pub num_classes: usize,
    pub ppl: f64,
    pub mi: f64,
    pub marginal_kl: f64,
    pub valid_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub kind: String,
    pub split: String,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:>6} {:>4} {:>6} {:>10} {:>10} {:>10}\n",
            "N", "M", "K", "PPL", "I(x,z)", "KL(q|p)"
        );
        for r in &self.rows {
            s += &format!(
                "{:>6} {:>4} {:>6} {:>10.3} {:>10.4} {:>10.4}\n",
                r.batch_size, r.num_vars, r.num_classes, r.ppl, r.mi, r.marginal_kl
            );
        }
        s
    }
}

fn sweep_row(config: &ModelConfig, data: &Dataset, split: &str) -> Result<SweepRow> {
    if config.variant.is_laed() {
        return Err(Error::config("variant", "sweeps apply to sentence variants"));
    }
    let out = train(config, data, None)?;
    let r = evaluate(&out.model, data, split, config)?;
    Ok(SweepRow {
        batch_size: config.batch_size,
        num_vars: config.num_vars,
        num_classes: config.num_classes,
        ppl: r.ppl,
        mi: r.mi,
        marginal_kl: r.marginal_kl,
        valid_loss: out.best_valid_loss,
    })
}

/// One training per batch size, identical otherwise; rows ordered by N.
pub fn sweep_batch_size(config: &ModelConfig, data: &Dataset, sizes: &[usize]) -> Result<SweepTable> {
    let mut sizes = sizes.to_vec();
    sizes.sort_unstable();
    let rows = sizes
        .iter()
        .map(|&n| {
            let c = ModelConfig {
                batch_size: n,
                ..config.clone()
            };
            sweep_row(&c, data, "test")
        })
        .collect::<Result<_>>()?;
    Ok(SweepTable {
        kind: "batch".into(),
        split: "test".into(),
        rows,
    })
}

/// `(K, M)` with the smallest K such that `K^M >= budget`, for each M.
pub fn latent_shapes_for_budget(budget: u64, num_vars: &[usize]) -> Vec<(usize, usize)> {
    num_vars
        .iter()
        .map(|&m| {
            let mut k = (budget as f64).powf(1.0 / m as f64).floor().max(2.0) as u64;
            while (k as u128).pow(m as u32) < budget as u128 {
                k += 1;
            }
            while k > 2 && ((k - 1) as u128).pow(m as u32) >= budget as u128 {
                k -= 1;
            }
            (k as usize, m)
        })
        .collect()
}

/// One training per `(K, M)` shape, identical otherwise.
pub fn sweep_latent_shape(config: &ModelConfig, data: &Dataset, shapes: &[(usize, usize)]) -> Result<SweepTable> {
    let rows = shapes
        .iter()
        .map(|&(k, m)| {
            let c = ModelConfig {
                num_classes: k,
                num_vars: m,
                ..config.clone()
            };
            sweep_row(&c, data, "test")
        })
        .collect::<Result<_>>()?;
    Ok(SweepTable {
        kind: "shape".into(),
        split: "test".into(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{RawTurn, Speaker};

    fn raw_dialogs(n: usize) -> RawCorpus {
        let words = ["a", "b", "c", "d", "e", "f"];
        let dialogs = (0..n)
            .map(|i| {
                (0..4)
                    .map(|j| {
                        let mut t = RawTurn::new(vec![words[(i + j) % 6].into(), words[(2 * i + j) % 6].into()]);
                        t.speaker = Some(if j % 2 == 0 { Speaker::Usr } else { Speaker::Sys });
                        t
                    })
                    .collect()
            })
            .collect();
        RawCorpus { dialogs, dropped_empty: 0 }
    }

    fn tiny_config(variant: Variant) -> ModelConfig {
        ModelConfig {
            variant,
            num_vars: 2,
            num_classes: 3,
            embed_dim: 4,
            recognizer_hidden: 5,
            utterance_hidden: 3,
            context_hidden: 5,
            decoder_hidden: 5,
            policy_hidden: 4,
            batch_size: 4,
            max_epochs: 2,
            eval_attribute_samples: 3,
            ..Default::default()
        }
    }

    fn tiny_data(dialogic: bool) -> Dataset {
        let r = raw_dialogs(12);
        Dataset::from_raw(&r, &raw_dialogs(3), &raw_dialogs(3), None, 100, dialogic).unwrap()
    }

    #[test]
    fn same_seed_same_losses() {
        let data = tiny_data(true);
        let c = ModelConfig { max_steps: 2, ..tiny_config(Variant::DiVae) };
        let a = train(&c, &data, None).unwrap();
        let b = train(&c, &data, None).unwrap();
        assert_eq!(a.steps_log.len(), 2);
        assert_eq!(a.steps_log, b.steps_log);
    }

    #[test]
    fn incompatible_corpora_are_rejected() {
        let data = tiny_data(false);
        for v in [Variant::DiVst, Variant::Dst, Variant::AeEd, Variant::StEd] {
            let err = train(&tiny_config(v), &data, None).unwrap_err();
            assert!(matches!(err, Error::IncompatibleCorpus { .. }), "{v}: {err}");
            assert_eq!(err.exit_code(), 2);
        }
    }

    #[test]
    fn epoch_touches_every_item_once() {
        let data = tiny_data(true);
        let items = items_for(Variant::DiVae, &data.train, true, 10).unwrap();
        let mut seen: Vec<usize> = Batcher::new(4, 3).epoch(items.len(), 0).concat();
        seen.sort_unstable();
        assert_eq!(seen, (0..items.len()).collect::<Vec<_>>());
    }

    #[test]
    fn validation_does_not_change_parameters() {
        let data = tiny_data(true);
        let c = tiny_config(Variant::DiVst);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = new_model(&c, data.vocab.len(), &mut rng).unwrap();
        let before = model.params().clone();
        let items = items_for(c.variant, &data.valid, true, 10).unwrap();
        let a = validation_loss(&model, &items, &c).unwrap();
        let b = validation_loss(&model, &items, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(model.params().entries(), before.entries());
    }

    #[test]
    fn checkpoint_round_trip_reproduces_validation() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_data(true);
        let c = tiny_config(Variant::Dvae);
        let out = train(&c, &data, Some(dir.path())).unwrap();
        let run = load_run(dir.path()).unwrap();
        assert_eq!(run.config, c);
        assert_eq!(run.best_valid, out.best_valid_loss);
        let items = items_for(c.variant, &data.valid, true, 10).unwrap();
        let again = validation_loss(&run.model, &items, &c).unwrap();
        assert!((again - out.best_valid_loss).abs() < 1e-6);
        let log = fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
        assert_eq!(log.lines().count(), out.steps_log.len() + out.validations.len());
        let best = fs::read_to_string(dir.path().join(BEST_FILE)).unwrap();
        assert_eq!(best.trim(), format!("params-step-{}", out.best_step));
    }

    #[test]
    fn laed_pretrains_and_freezes_its_recognizer() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_data(true);
        let c = ModelConfig { max_steps: 3, ..tiny_config(Variant::StEd) };
        let out = train(&c, &data, Some(dir.path())).unwrap();
        let rec = load_run(&dir.path().join(RECOGNIZER_DIR)).unwrap();
        let laed = out.model.as_laed().unwrap();
        for e in rec.model.params().entries() {
            if e.name.starts_with("recognizer.") || e.name == "embedding" {
                let id = laed.store.id(&e.name).unwrap();
                assert_eq!(laed.store.get(id), &e.value, "{}", e.name);
            }
        }
        let p = out.valid_report.policy.as_ref().unwrap();
        assert!(p.per_speaker.contains_key("sys") && p.per_speaker.contains_key("usr"));
        assert!(out.valid_report.attribute_accuracy.is_some());
        // reuse as an explicit recognizer run
        let c2 = ModelConfig {
            recognizer_run: Some(dir.path().join(RECOGNIZER_DIR)),
            ..c.clone()
        };
        train(&c2, &data, None).unwrap();
        let wrong = ModelConfig { variant: Variant::AeEd, ..c2 };
        assert!(matches!(train(&wrong, &data, None).unwrap_err(), Error::Config { .. }));
    }

    #[test]
    fn shapes_for_budget() {
        assert_eq!(latent_shapes_for_budget(1000, &[1, 3, 5]), vec![(1000, 1), (10, 3), (4, 5)]);
        for (k, m) in latent_shapes_for_budget(1000, &[1, 3, 5]) {
            let size = (k as u64).pow(m as u32);
            assert!((1000..=1024).contains(&size));
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let w = store.add("w", ndarray::array![[1.0, -2.0]]);
        let mut g = Graph::new();
        let x = g.param(&store, w);
        let y = g.sum(x);
        let grads = g.backward(y);
        let mut adam = Adam::new(&store, 0.1);
        adam.step(&mut store, &grads, 1.0);
        let v = store.get(w);
        assert!((v[[0, 0]] - 0.9).abs() < 1e-6 && (v[[0, 1]] + 2.1).abs() < 1e-6);
        assert_eq!(clip_scale(10.0, 5.0), 0.5);
        assert_eq!(clip_scale(1.0, 5.0), 1.0);
    }
}
