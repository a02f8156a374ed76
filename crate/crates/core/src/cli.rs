//! The `laed` command line: train, eval, interpret, report, interpolate,
//! generate, sweep and synth.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgMatches, Args, Command, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use crate::config::{ModelConfig, CONFIG_KEYS};
use crate::corpus::{encode_corpus, read_dialogs, write_dialogs, Utterance};
use crate::error::{Error, Result};
use crate::interpretation::{
    action_table, emit_report, generation_records, interpolate, interpolation_text, SWEEP_PREFIX,
};
use crate::latent::LatentAssignment;
use crate::synthetic::{cluster_sentences, markov_dialogs, Transition};
use crate::training::{
    evaluate, items_for, latent_shapes_for_budget, load_run, run_training, sweep_batch_size, sweep_latent_shape,
    tokenizer_named, AnyModel, Dataset, TrainItems,
};

#[derive(Parser, Debug)]
#[command(name = "laed", version, about = "Discrete latent actions for dialog generation")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Config file (`key = value` lines)
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArg {
    /// Run directory written by `train`
    #[arg(long)]
    run: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SweepKind {
    Batch,
    Shape,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SynthKind {
    /// One-sentence dialogs from ten templated topic clusters
    Clusters,
    /// Dialogs whose next topic follows a permutation with probability `follow`
    Markov,
    /// Dialogs whose next turn is a function of the current one
    Chain,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Train a model and write its run directory
    Train(ConfigArgs),
    /// Evaluate a run on a split
    Eval {
        #[command(flatten)]
        run: RunArg,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Print utterances grouped by latent action
    Interpret {
        #[command(flatten)]
        run: RunArg,
        #[arg(long, default_value_t = 5)]
        samples: usize,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Write the report bundle into `<run>/report`
    Report {
        #[command(flatten)]
        run: RunArg,
    },
    /// Walk between the codes of two sentences
    Interpolate {
        #[command(flatten)]
        run: RunArg,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
    },
    /// Generate responses for contexts (dialog JSON lines, one context per line)
    Generate {
        #[command(flatten)]
        run: RunArg,
        #[arg(long)]
        context: PathBuf,
        /// Force this code, e.g. "1-4-2"
        #[arg(long)]
        action: Option<String>,
    },
    /// Batch-size or latent-shape sweep
    Sweep {
        #[arg(long, value_enum)]
        kind: SweepKind,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Write a synthetic corpus in the dialog format
    Synth {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5000)]
        n: usize,
        #[arg(long, default_value_t = 6)]
        turns: usize,
        #[arg(long, default_value_t = 0.5)]
        follow: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn keys_help() -> String {
    let defaults = ModelConfig::default();
    let mut s = String::from("Config keys (train and sweep take each as --KEY VALUE):\n");
    for (key, desc) in CONFIG_KEYS {
        let d = defaults.get(key).unwrap_or_default();
        let d = if d.is_empty() { "unset".to_string() } else { d };
        s += &format!("  {key:<24} {desc} [default: {d}]\n");
    }
    s
}

fn with_config_keys(cmd: Command) -> Command {
    let defaults = ModelConfig::default();
    CONFIG_KEYS.iter().fold(cmd, |cmd, (key, desc)| {
        let d = defaults.get(key).unwrap_or_default();
        cmd.arg(
            Arg::new(*key)
                .long(*key)
                .value_name("VALUE")
                .help(format!("{desc} [default: {}]", if d.is_empty() { "unset" } else { &d }))
                .help_heading("Config keys"),
        )
    })
}

/// The full command tree, config-key flags included.
pub fn command() -> Command {
    Cli::command()
        .after_help(keys_help())
        .mut_subcommand("train", with_config_keys)
        .mut_subcommand("sweep", with_config_keys)
}

fn build_config(file: Option<&Path>, m: &ArgMatches) -> Result<ModelConfig> {
    let mut config = match file {
        Some(p) => ModelConfig::load(p)?,
        None => ModelConfig::default(),
    };
    for (key, _) in CONFIG_KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            config.set(key, v)?;
        }
    }
    config.validate()?;
    Ok(config)
}

fn encode_text(run: &crate::training::LoadedRun, text: &str) -> Result<Utterance> {
    let tok = tokenizer_named(&run.config.tokenizer)?;
    let u = Utterance::new(run.vocab.encode(&tok.tokenize(text)));
    if u.is_empty() {
        return Err(Error::invalid(format!("no tokens in {text:?}")));
    }
    Ok(u)
}

fn split_utterances(run: &crate::training::LoadedRun, split: &str) -> Result<Vec<Utterance>> {
    let data = Dataset::load(&run.config, Some(run.vocab.clone()))?;
    let dialogs = data.split(split)?;
    Ok(match items_for(run.config.variant, dialogs, data.dialogic, run.config.context_window)? {
        TrainItems::Sentences(v) => v,
        TrainItems::Triples(v) => v.into_iter().map(|t| t.current).collect(),
        TrainItems::Pairs(v) => v.into_iter().map(|p| p.response).collect(),
    })
}

fn execute(cli: Cli, m: &ArgMatches, out: &mut dyn Write) -> Result<()> {
    let sub = m.subcommand().map(|(_, s)| s).expect("subcommand required");
    match cli.command {
        Cmd::Train(args) => {
            let config = build_config(args.config.as_deref(), sub)?;
            let outcome = run_training(&config)?;
            if let Some(dir) = &outcome.run_dir {
                writeln!(out, "run: {}", dir.display())?;
            }
            writeln!(
                out,
                "steps {}  epochs {}  best valid loss {:.4} at step {}",
                outcome.steps, outcome.epochs, outcome.best_valid_loss, outcome.best_step
            )?;
            write!(out, "{}", outcome.valid_report.to_table())?;
        }
        Cmd::Eval { run, split } => {
            let r = load_run(&run.run)?;
            let data = Dataset::load(&r.config, Some(r.vocab.clone()))?;
            let report = evaluate(&r.model, &data, &split, &r.config)?;
            fs::write(run.run.join(format!("metrics-{split}.json")), report.to_json()? + "\n")?;
            write!(out, "{}", report.to_table())?;
        }
        Cmd::Interpret { run, samples, split } => {
            let r = load_run(&run.run)?;
            let utts = split_utterances(&r, &split)?;
            let table = match &r.model {
                AnyModel::Sentence(model) => action_table(model, &utts, &r.vocab, samples, r.config.seed)?,
                AnyModel::Laed(model) => action_table(model, &utts, &r.vocab, samples, r.config.seed)?,
            };
            write!(out, "{}", table.to_text())?;
        }
        Cmd::Report { run } => {
            let bundle = emit_report(&run.run)?;
            for f in &bundle.files {
                writeln!(out, "{}", run.run.join(f).display())?;
            }
        }
        Cmd::Interpolate { run, from, to } => {
            let r = load_run(&run.run)?;
            let model = r.model.as_sentence().ok_or(Error::NotAutoencoder)?;
            let steps = interpolate(model, &encode_text(&r, &from)?, &encode_text(&r, &to)?, r.config.max_len)?;
            write!(out, "{}", interpolation_text(&from, &to, &steps, &r.vocab))?;
        }
        Cmd::Generate { run, context, action } => {
            let r = load_run(&run.run)?;
            let model = r
                .model
                .as_laed()
                .ok_or_else(|| Error::invalid("generate needs an ae-ed or st-ed run"))?;
            let forced = action
                .map(|a| {
                    let code: LatentAssignment = a.parse()?;
                    LatentAssignment::new(code.codes().to_vec(), &model.spec)
                })
                .transpose()?;
            let tok = tokenizer_named(&r.config.tokenizer)?;
            let raw = read_dialogs(&context, tok.as_ref())?;
            let window = r.config.context_window;
            let contexts: Vec<Vec<Utterance>> = encode_corpus(&raw, &r.vocab)
                .into_iter()
                .map(|d| d[d.len().saturating_sub(window)..].to_vec())
                .collect();
            if contexts.iter().any(Vec::is_empty) {
                return Err(Error::invalid("empty context"));
            }
            let records = generation_records(model, &contexts, &r.vocab, forced.as_ref(), r.config.max_len, 3)?;
            for rec in &records {
                writeln!(out, "{}", serde_json::to_string(rec)?)?;
            }
        }
        Cmd::Sweep { kind, config } => {
            let config = build_config(config.config.as_deref(), sub)?;
            let data = Dataset::load(&config, None)?;
            let (name, table) = match kind {
                SweepKind::Batch => ("batch", sweep_batch_size(&config, &data, &config.sweep_batch_sizes)?),
                SweepKind::Shape => {
                    let shapes = latent_shapes_for_budget(config.sweep_budget, &config.sweep_num_vars);
                    ("shape", sweep_latent_shape(&config, &data, &shapes)?)
                }
            };
            let dir = config.output_dir.join(format!("{}-sweep", config.run_name()));
            fs::create_dir_all(&dir)?;
            config.save(&dir.join(crate::training::CONFIG_FILE))?;
            fs::write(
                dir.join(format!("{SWEEP_PREFIX}{name}.json")),
                serde_json::to_string_pretty(&table)? + "\n",
            )?;
            fs::write(dir.join(format!("{SWEEP_PREFIX}{name}.txt")), table.to_text())?;
            writeln!(out, "run: {}", dir.display())?;
            write!(out, "{}", table.to_text())?;
        }
        Cmd::Synth {
            kind,
            out: path,
            n,
            turns,
            follow,
            seed,
        } => {
            let corpus = match kind {
                SynthKind::Clusters => cluster_sentences(n, seed),
                SynthKind::Markov => {
                    if !(0.0..=1.0).contains(&follow) {
                        return Err(Error::invalid("follow must lie in [0, 1]"));
                    }
                    markov_dialogs(n, turns, Transition::Stochastic { follow }, seed)
                }
                SynthKind::Chain => markov_dialogs(n, turns, Transition::Deterministic, seed),
            };
            write_dialogs(&path, &corpus)?;
            writeln!(out, "wrote {} dialogs to {}", corpus.dialogs.len(), path.display())?;
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 ok, 2 usage or config error, 3 data error, 4 other.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let result = Cli::from_arg_matches(&matches)
        .map_err(|e| Error::invalid(e.to_string()))
        .and_then(|cli| execute(cli, &matches, out));
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
