//! Corpus ingestion: tokenization, capped vocabularies, dialog structure and
//! randomized batching.
//!
//! Two on-disk formats are read. Plain-sentence corpora hold one
//! pre-tokenized sentence per line; every line becomes a one-turn dialog.
//! Dialog corpora are JSON lines of the form
//! `{"turns": [{"speaker": "usr"|"sys", "text": str, "act": str?, "emotion": str?}]}`.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Default window of preceding utterances used as dialog context.
pub const DEFAULT_CONTEXT_WINDOW: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps the `cap` most frequent tokens, ties broken lexicographically.
    pub fn build<'a, I>(sentences: I, cap: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: HashMap<&'a str, usize> = HashMap::new();
        let mut seen_any = false;
        for sentence in sentences {
            for tok in sentence {
                seen_any = true;
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        if !seen_any {
            return Err(Error::EmptyCorpus);
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, _)| !SPECIAL_TOKENS.contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(cap);
        Ok(Self::from_tokens(
            ranked.into_iter().map(|(t, _)| t.to_string()),
        ))
    }

    fn from_tokens(words: impl IntoIterator<Item = String>) -> Self {
        let tokens: Vec<String> = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(words)
            .collect();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of retained word types, excluding specials.
    pub fn num_words(&self) -> usize {
        self.tokens.len() - SPECIAL_TOKENS.len()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or("<unk>")
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Joins tokens with spaces, stopping at end-of-sentence.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .take_while(|&&id| id != EOS)
            .filter(|&&id| id != PAD && id != BOS)
            .map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        for t in &self.tokens {
            writeln!(f, "{t}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        for (i, special) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*special) {
                return Err(Error::Data {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("expected special token {special}"),
                });
            }
        }
        Ok(Self::from_tokens(tokens.into_iter().skip(SPECIAL_TOKENS.len())))
    }
}

/// Convenience wrapper matching the stream-oriented signature.
pub fn build_vocab<'a, I>(sentences: I, cap: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a [String]>,
{
    Vocabulary::build(sentences, cap)
}

pub trait Tokenizer {
    fn tokenize(&self, text: &str) -> Vec<String>;
}

/// Splits on whitespace; for pre-tokenized corpora.
#[derive(Clone, Copy, Debug, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_string).collect()
    }
}

/// Lowercases and splits punctuation into separate tokens; for raw dialog text.
#[derive(Clone, Copy, Debug, Default)]
pub struct SimpleTokenizer;

impl Tokenizer for SimpleTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for chunk in text.split_whitespace() {
            let mut word = String::new();
            for ch in chunk.chars().flat_map(char::to_lowercase) {
                if ch.is_alphanumeric() || ch == '\'' || ch == '_' {
                    word.push(ch);
                } else {
                    if !word.is_empty() {
                        out.push(std::mem::take(&mut word));
                    }
                    out.push(ch.to_string());
                }
            }
            if !word.is_empty() {
                out.push(word);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Sys,
    Usr,
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Speaker::Sys => "sys",
            Speaker::Usr => "usr",
        })
    }
}

impl FromStr for Speaker {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sys" => Ok(Speaker::Sys),
            "usr" => Ok(Speaker::Usr),
            other => Err(Error::invalid(format!("unknown speaker {other:?}"))),
        }
    }
}

/// A tokenized turn before vocabulary encoding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawTurn {
    pub tokens: Vec<String>,
    pub speaker: Option<Speaker>,
    pub act: Option<String>,
    pub emotion: Option<String>,
}

impl RawTurn {
    pub fn new(tokens: Vec<String>) -> Self {
        Self {
            tokens,
            speaker: None,
            act: None,
            emotion: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawCorpus {
    pub dialogs: Vec<Vec<RawTurn>>,
    /// Turns that were empty after tokenization.
    pub dropped_empty: usize,
}

impl RawCorpus {
    pub fn sentences(&self) -> impl Iterator<Item = &[String]> {
        self.dialogs
            .iter()
            .flatten()
            .map(|t| t.tokens.as_slice())
    }

    pub fn num_turns(&self) -> usize {
        self.dialogs.iter().map(Vec::len).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Utterance {
    /// Word ids, no specials.
    pub tokens: Vec<usize>,
    pub speaker: Option<Speaker>,
    pub act: Option<String>,
    pub emotion: Option<String>,
}

impl Utterance {
    pub fn new(tokens: Vec<usize>) -> Self {
        Self {
            tokens,
            speaker: None,
            act: None,
            emotion: None,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Decoder targets: the words followed by end-of-sentence.
    pub fn target(&self) -> Vec<usize> {
        let mut t = self.tokens.clone();
        t.push(EOS);
        t
    }
}

pub type Dialog = Vec<Utterance>;

#[derive(Clone, Debug, PartialEq)]
pub struct SentenceTriple {
    pub previous: Utterance,
    pub current: Utterance,
    pub next: Utterance,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContextResponsePair {
    pub context: Vec<Utterance>,
    pub response: Utterance,
}

#[derive(Deserialize)]
struct JsonTurn {
    speaker: Option<String>,
    text: String,
    act: Option<String>,
    emotion: Option<String>,
}

#[derive(Deserialize)]
struct JsonDialog {
    turns: Vec<JsonTurn>,
}

#[derive(Serialize)]
struct JsonTurnOut<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    speaker: Option<Speaker>,
    text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    act: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    emotion: Option<&'a str>,
}

#[derive(Serialize)]
struct JsonDialogOut<'a> {
    turns: Vec<JsonTurnOut<'a>>,
}

fn push_turn(dialog: &mut Vec<RawTurn>, dropped: &mut usize, turn: RawTurn) {
    if turn.tokens.is_empty() {
        *dropped += 1;
    } else {
        dialog.push(turn);
    }
}

/// Reads a one-sentence-per-line corpus.
pub fn read_sentences(path: &Path, tokenizer: &dyn Tokenizer) -> Result<RawCorpus> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut corpus = RawCorpus::default();
    for line in reader.lines() {
        let line = line?;
        let mut dialog = Vec::new();
        push_turn(
            &mut dialog,
            &mut corpus.dropped_empty,
            RawTurn::new(tokenizer.tokenize(&line)),
        );
        if !dialog.is_empty() {
            corpus.dialogs.push(dialog);
        }
    }
    if corpus.dropped_empty > 0 {
        log::info!(
            "{}: dropped {} empty lines",
            path.display(),
            corpus.dropped_empty
        );
    }
    Ok(corpus)
}

/// Parses dialog JSON lines from text; `path` is only used in error messages.
pub fn parse_dialogs(text: &str, path: &Path, tokenizer: &dyn Tokenizer) -> Result<RawCorpus> {
    let mut corpus = RawCorpus::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let data_err = |message: String| Error::Data {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let parsed: JsonDialog =
            serde_json::from_str(line).map_err(|e| data_err(e.to_string()))?;
        let mut dialog = Vec::with_capacity(parsed.turns.len());
        for turn in parsed.turns {
            let speaker = turn
                .speaker
                .as_deref()
                .map(Speaker::from_str)
                .transpose()
                .map_err(|e| data_err(e.to_string()))?;
            push_turn(
                &mut dialog,
                &mut corpus.dropped_empty,
                RawTurn {
                    tokens: tokenizer.tokenize(&turn.text),
                    speaker,
                    act: turn.act,
                    emotion: turn.emotion,
                },
            );
        }
        if !dialog.is_empty() {
            corpus.dialogs.push(dialog);
        }
    }
    if corpus.dropped_empty > 0 {
        log::info!(
            "{}: dropped {} empty turns",
            path.display(),
            corpus.dropped_empty
        );
    }
    Ok(corpus)
}

pub fn read_dialogs(path: &Path, tokenizer: &dyn Tokenizer) -> Result<RawCorpus> {
    let text = fs::read_to_string(path)?;
    parse_dialogs(&text, path, tokenizer)
}

/// Writes dialogs in the JSON-lines schema, tokens joined by spaces.
pub fn write_dialogs(path: &Path, corpus: &RawCorpus) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for dialog in &corpus.dialogs {
        let out = JsonDialogOut {
            turns: dialog
                .iter()
                .map(|t| JsonTurnOut {
                    speaker: t.speaker,
                    text: t.tokens.join(" "),
                    act: t.act.as_deref(),
                    emotion: t.emotion.as_deref(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut f, &out)?;
        writeln!(f)?;
    }
    f.flush()?;
    Ok(())
}

pub fn encode_corpus(raw: &RawCorpus, vocab: &Vocabulary) -> Vec<Dialog> {
    raw.dialogs
        .iter()
        .map(|d| {
            d.iter()
                .map(|t| Utterance {
                    tokens: vocab.encode(&t.tokens),
                    speaker: t.speaker,
                    act: t.act.clone(),
                    emotion: t.emotion.clone(),
                })
                .collect()
        })
        .collect()
}

/// One triple per interior position of every dialog.
pub fn make_triples(dialogs: &[Dialog]) -> Vec<SentenceTriple> {
    dialogs
        .iter()
        .flat_map(|d| {
            d.windows(3).map(|w| SentenceTriple {
                previous: w[0].clone(),
                current: w[1].clone(),
                next: w[2].clone(),
            })
        })
        .collect()
}

/// One pair per utterance after the first, with up to `window` preceding turns.
pub fn make_context_pairs(dialogs: &[Dialog], window: usize) -> Vec<ContextResponsePair> {
    assert!(window >= 1, "context window must be at least 1");
    let mut out = Vec::new();
    for d in dialogs {
        for pos in 1..d.len() {
            let start = pos.saturating_sub(window);
            out.push(ContextResponsePair {
                context: d[start..pos].to_vec(),
                response: d[pos].clone(),
            });
        }
    }
    out
}

/// Seeded per-epoch shuffling into fixed-size batches.
#[derive(Clone, Copy, Debug)]
pub struct Batcher {
    pub batch_size: usize,
    pub seed: u64,
    pub drop_last: bool,
}

impl Batcher {
    pub fn new(batch_size: usize, seed: u64) -> Self {
        assert!(batch_size >= 1, "batch size must be at least 1");
        Self {
            batch_size,
            seed,
            drop_last: false,
        }
    }

    pub fn drop_last(mut self, drop: bool) -> Self {
        self.drop_last = drop;
        self
    }

    /// Index batches covering `0..num_items` for the given epoch.
    pub fn epoch(&self, num_items: usize, epoch: u64) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..num_items).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
        order
            .chunks(self.batch_size)
            .filter(|c| !self.drop_last || c.len() == self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }

    pub fn batches<'a, T>(
        &self,
        items: &'a [T],
        epoch: u64,
    ) -> impl Iterator<Item = Vec<&'a T>> + 'a {
        self.epoch(items.len(), epoch)
            .into_iter()
            .map(move |b| b.into_iter().map(|i| &items[i]).collect())
    }
}

pub fn batch_iterator<'a, T>(
    items: &'a [T],
    batch_size: usize,
    seed: u64,
    epoch: u64,
    drop_last: bool,
) -> impl Iterator<Item = Vec<&'a T>> + 'a {
    Batcher::new(batch_size, seed)
        .drop_last(drop_last)
        .batches(items, epoch)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub vocab_size: usize,
    pub num_dialogs: usize,
    pub avg_dialog_len: f64,
    pub avg_utterance_len: f64,
}

pub fn corpus_stats(dialogs: &[Dialog], vocab: &Vocabulary) -> CorpusStats {
    let turns: usize = dialogs.iter().map(Vec::len).sum();
    let words: usize = dialogs.iter().flatten().map(Utterance::len).sum();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    CorpusStats {
        vocab_size: vocab.num_words(),
        num_dialogs: dialogs.len(),
        avg_dialog_len: ratio(turns, dialogs.len()),
        avg_utterance_len: ratio(words, turns),
    }
}

/// 80/10/10 split by dialog with the given seed.
pub fn split_dialogs<T: Clone>(dialogs: &[T], seed: u64) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut order: Vec<usize> = (0..dialogs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = dialogs.len();
    let n_valid = n / 10;
    let n_test = n / 10;
    let n_train = n - n_valid - n_test;
    let pick = |idx: &[usize]| idx.iter().map(|&i| dialogs[i].clone()).collect::<Vec<_>>();
    (
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_valid]),
        pick(&order[n_train + n_valid..]),
    )
}
