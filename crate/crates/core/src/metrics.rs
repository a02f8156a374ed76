//! Evaluation: perplexity, information quantities of an evaluation split,
//! homogeneity of latent actions, attribute accuracy and policy quality.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Matrix};
use crate::corpus::{ContextResponsePair, SentenceTriple, Utterance};
use crate::error::{Error, Result};
use crate::laed::{generate, GenerationMode, LaedModel};
use crate::latent::{LatentAssignment, LatentSpec};
use crate::networks::{Generation, SentenceModel};
use crate::objectives::{kl_decomposition, BatchPosterior, Prior};

const EVAL_CHUNK: usize = 128;

pub fn perplexity(total_token_nll: f64, total_tokens: usize) -> Result<f64> {
    if total_tokens == 0 {
        return Err(Error::invalid("perplexity needs at least one token"));
    }
    Ok((total_token_nll / total_tokens as f64).exp())
}

/// Counts of gold classes (rows) against latent actions (columns).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub classes: Vec<String>,
    pub actions: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ContingencyTable {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let cols = counts.first().map_or(0, Vec::len);
        if counts.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged contingency table".into()));
        }
        Ok(Self {
            classes: (0..counts.len()).map(|i| i.to_string()).collect(),
            actions: (0..cols).map(|i| i.to_string()).collect(),
            counts,
        })
    }

    /// Rows and columns in sorted label order.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut cells: BTreeMap<(&str, &str), u64> = BTreeMap::new();
        for p in pairs {
            *cells.entry(p).or_default() += 1;
        }
        let mut classes: Vec<String> = cells.keys().map(|(c, _)| c.to_string()).collect();
        classes.dedup();
        let mut actions: Vec<String> = cells.keys().map(|(_, a)| a.to_string()).collect();
        actions.sort();
        actions.dedup();
        let mut counts = vec![vec![0; actions.len()]; classes.len()];
        for ((c, a), n) in cells {
            let i = classes.binary_search_by(|x| x.as_str().cmp(c)).unwrap();
            let j = actions.binary_search_by(|x| x.as_str().cmp(a)).unwrap();
            counts[i][j] = n;
        }
        Self {
            classes,
            actions,
            counts,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

/// `1 - H(class | action) / H(class)`, defined as 1 when H(class) = 0.
pub fn homogeneity(table: &ContingencyTable) -> Result<f64> {
    let n = table.total() as f64;
    if n == 0.0 {
        return Err(Error::invalid("homogeneity of an empty table"));
    }
    let cols = table.counts[0].len();
    let col_totals: Vec<f64> = (0..cols)
        .map(|j| table.counts.iter().map(|r| r[j] as f64).sum())
        .collect();
    let mut h_class = 0.0;
    let mut h_cond = 0.0;
    for row in &table.counts {
        let rt: f64 = row.iter().map(|&c| c as f64).sum();
        if rt > 0.0 {
            h_class -= rt / n * (rt / n).ln();
        }
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                h_cond -= c / n * (c / col_totals[j]).ln();
            }
        }
    }
    if h_class <= 0.0 {
        return Ok(1.0);
    }
    Ok((1.0 - h_cond / h_class).clamp(0.0, 1.0))
}

/// Anything that maps token sequences to greedy latent codes.
pub trait Recognizer {
    fn latent_spec(&self) -> LatentSpec;
    fn greedy_codes(&self, seqs: &[&[usize]]) -> Result<Vec<LatentAssignment>>;
}

impl Recognizer for SentenceModel {
    fn latent_spec(&self) -> LatentSpec {
        self.spec
    }
    fn greedy_codes(&self, seqs: &[&[usize]]) -> Result<Vec<LatentAssignment>> {
        SentenceModel::greedy_codes(self, seqs)
    }
}

impl Recognizer for LaedModel {
    fn latent_spec(&self) -> LatentSpec {
        self.spec
    }
    fn greedy_codes(&self, seqs: &[&[usize]]) -> Result<Vec<LatentAssignment>> {
        LaedModel::greedy_codes(self, seqs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeAccuracy {
    /// Fraction of (sample, variable) pairs whose recovered code matches.
    pub per_variable: f64,
    /// Fraction of samples whose whole code matches.
    pub exact: f64,
    pub samples: usize,
}

/// Scores generated responses by whether the recognizer recovers the code
/// they were generated from. Empty responses count as full mismatches.
pub fn attribute_accuracy<R: Recognizer + ?Sized>(
    generated: &[(LatentAssignment, Vec<usize>)],
    recognizer: &R,
) -> Result<AttributeAccuracy> {
    if generated.is_empty() {
        return Err(Error::invalid("attribute accuracy of an empty list"));
    }
    let m = recognizer.latent_spec().num_vars;
    let nonempty: Vec<&[usize]> = generated
        .iter()
        .filter(|(_, t)| !t.is_empty())
        .map(|(_, t)| t.as_slice())
        .collect();
    let mut recovered = recognizer.greedy_codes(&nonempty)?.into_iter();
    let (mut hits, mut exact) = (0usize, 0usize);
    for (code, tokens) in generated {
        if tokens.is_empty() {
            continue;
        }
        let r = recovered.next().expect("one code per non-empty response");
        let h = code
            .codes()
            .iter()
            .zip(r.codes())
            .filter(|(a, b)| a == b)
            .count();
        hits += h;
        exact += usize::from(h == m);
    }
    Ok(AttributeAccuracy {
        per_variable: hits as f64 / (m * generated.len()) as f64,
        exact: exact as f64 / generated.len() as f64,
        samples: generated.len(),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyScore {
    pub accuracy: f64,
    pub exact_accuracy: f64,
    /// exp of the mean per-variable NLL of the recognizer's codes.
    pub perplexity: f64,
    /// exp of the mean joint NLL (sum over variables).
    pub joint_perplexity: f64,
    pub count: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    #[serde(flatten)]
    pub overall: PolicyScore,
    /// Split by the speaker of the response, when the corpus is tagged.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub per_speaker: BTreeMap<String, PolicyScore>,
}

#[derive(Default)]
struct PolicyAcc {
    hits: usize,
    exact: usize,
    nll: f64,
    count: usize,
}

impl PolicyAcc {
    fn score(&self, m: usize) -> PolicyScore {
        let c = self.count.max(1) as f64;
        PolicyScore {
            accuracy: self.hits as f64 / (c * m as f64),
            exact_accuracy: self.exact as f64 / c,
            perplexity: (self.nll / (c * m as f64)).exp(),
            joint_perplexity: (self.nll / c).exp(),
            count: self.count,
        }
    }
}

/// Agreement between π's argmax on the context and R's greedy code of the
/// gold response, plus the perplexity π assigns to R's codes.
pub fn policy_evaluation(pairs: &[ContextResponsePair], model: &LaedModel) -> Result<PolicyEvaluation> {
    if pairs.is_empty() {
        return Err(Error::invalid("policy evaluation of an empty split"));
    }
    let m = model.spec.num_vars;
    let mut overall = PolicyAcc::default();
    let mut per_speaker: BTreeMap<String, PolicyAcc> = BTreeMap::new();
    for chunk in pairs.chunks(EVAL_CHUNK) {
        let responses: Vec<&[usize]> = chunk.iter().map(|p| p.response.tokens.as_slice()).collect();
        let gold = model.greedy_codes(&responses)?;
        let contexts: Vec<&[Utterance]> = chunk.iter().map(|p| p.context.as_slice()).collect();
        let policy = model.predict_policy(&contexts)?;
        for ((pair, code), pi) in chunk.iter().zip(&gold).zip(&policy) {
            let pred = crate::latent::greedy_map(pi);
            let hits = pred.codes().iter().zip(code.codes()).filter(|(a, b)| a == b).count();
            let nll: f64 = code
                .codes()
                .iter()
                .enumerate()
                .map(|(v, &k)| -pi.rows()[[v, k]].ln())
                .sum();
            let add = |acc: &mut PolicyAcc| {
                acc.hits += hits;
                acc.exact += usize::from(hits == m);
                acc.nll += nll;
                acc.count += 1;
            };
            add(&mut overall);
            if let Some(s) = pair.response.speaker {
                add(per_speaker.entry(s.to_string()).or_default());
            }
        }
    }
    Ok(PolicyEvaluation {
        overall: overall.score(m),
        per_speaker: per_speaker.iter().map(|(k, v)| (k.clone(), v.score(m))).collect(),
    })
}

/// Everything one evaluation pass reports.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub items: usize,
    pub tokens: usize,
    pub ppl: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ppl_prev: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ppl_next: Option<f64>,
    pub marginal_kl: f64,
    pub mi: f64,
    /// Mean per-sample KL (equals `mi + marginal_kl`).
    pub sample_kl: f64,
    pub distinct_actions: usize,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub homogeneity: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attribute_accuracy: Option<AttributeAccuracy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyEvaluation>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Fixed-width text table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>10} {:>10} {:>10} {:>8}", "split", "PPL", "KL(q|p)", "I(x,z)", "actions");
        let _ = writeln!(
            s,
            "{:<10} {:>10.3} {:>10.4} {:>10.4} {:>8}",
            self.split, self.ppl, self.marginal_kl, self.mi, self.distinct_actions
        );
        if let (Some(p), Some(n)) = (self.ppl_prev, self.ppl_next) {
            let _ = writeln!(s, "{:<10} {:>10.3}", "PPL prev", p);
            let _ = writeln!(s, "{:<10} {:>10.3}", "PPL next", n);
        }
        for (label, h) in &self.homogeneity {
            let _ = writeln!(s, "{:<10} {:>10.4}", format!("homo {label}"), h);
        }
        if let Some(a) = &self.attribute_accuracy {
            let _ = writeln!(s, "{:<10} {:>10.4} {:>10.4}", "attr acc", a.per_variable, a.exact);
        }
        if let Some(p) = &self.policy {
            let o = &p.overall;
            let _ = writeln!(
                s,
                "{:<10} {:>10.4} {:>10.4} {:>10.3} {:>10.3}",
                "policy", o.accuracy, o.exact_accuracy, o.perplexity, o.joint_perplexity
            );
            for (spk, o) in &p.per_speaker {
                let _ = writeln!(
                    s,
                    "{:<10} {:>10.4} {:>10.4} {:>10.3}",
                    format!("policy {spk}"),
                    o.accuracy,
                    o.exact_accuracy,
                    o.perplexity
                );
            }
        }
        s
    }
}

/// Evaluation data for a sentence model.
#[derive(Clone, Copy, Debug)]
pub enum EvalSet<'a> {
    Sentences(&'a [Utterance]),
    Triples(&'a [SentenceTriple]),
}

impl<'a> EvalSet<'a> {
    fn sources(&self) -> Vec<&'a Utterance> {
        match *self {
            EvalSet::Sentences(s) => s.iter().collect(),
            EvalSet::Triples(t) => t.iter().map(|t| &t.current).collect(),
        }
    }

    fn targets(&self) -> Vec<Vec<&'a Utterance>> {
        match *self {
            EvalSet::Sentences(s) => vec![s.iter().collect()],
            EvalSet::Triples(t) => vec![
                t.iter().map(|t| &t.previous).collect(),
                t.iter().map(|t| &t.next).collect(),
            ],
        }
    }
}

/// Information quantities of the whole split plus homogeneity of greedy codes.
struct CodeStats {
    codes: Vec<LatentAssignment>,
    marginal_kl: f64,
    mi: f64,
    sample_kl: f64,
    distinct: usize,
    homogeneity: BTreeMap<String, f64>,
}

fn code_stats(
    posteriors: Vec<crate::latent::PosteriorStack>,
    spec: &LatentSpec,
    utterances: &[&Utterance],
) -> Result<CodeStats> {
    let codes: Vec<LatentAssignment> = posteriors.iter().map(crate::latent::greedy_map).collect();
    let bp = BatchPosterior::new(posteriors)?;
    let d = kl_decomposition(&bp, &Prior::uniform(spec))?;
    let keys: Vec<String> = codes.iter().map(ToString::to_string).collect();
    let mut distinct = keys.clone();
    distinct.sort();
    distinct.dedup();
    let mut homogeneity = BTreeMap::new();
    type Label = fn(&Utterance) -> Option<&String>;
    let labels: [(&str, Label); 2] = [("act", |u| u.act.as_ref()), ("emotion", |u| u.emotion.as_ref())];
    for (name, get) in labels {
        let pairs: Vec<(&str, &str)> = utterances
            .iter()
            .zip(&keys)
            .filter_map(|(u, k)| get(u).map(|l| (l.as_str(), k.as_str())))
            .collect();
        if !pairs.is_empty() {
            homogeneity.insert(name.to_string(), homogeneity_of(pairs)?);
        }
    }
    Ok(CodeStats {
        codes,
        marginal_kl: d.marginal_kl,
        mi: d.mi,
        sample_kl: d.lhs,
        distinct: distinct.len(),
        homogeneity,
    })
}

fn homogeneity_of(pairs: Vec<(&str, &str)>) -> Result<f64> {
    homogeneity(&ContingencyTable::from_pairs(pairs))
}

fn posteriors_chunked(
    model_posteriors: impl Fn(&[&[usize]]) -> Result<Vec<crate::latent::PosteriorStack>>,
    seqs: &[&[usize]],
) -> Result<Vec<crate::latent::PosteriorStack>> {
    let mut out = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(EVAL_CHUNK) {
        out.extend(model_posteriors(chunk)?);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
/// Summed NLL and token count of `targets` decoded from the hard `codes`
/// (optionally on top of per-item context states).
fn hard_code_nll(
    store: &crate::autodiff::ParamStore,
    embedding: &crate::networks::Embedding,
    latent: &crate::networks::LatentEmbeddingTable,
    decoder: &crate::networks::SentenceDecoder,
    num_classes: usize,
    codes: &[LatentAssignment],
    targets: &[Vec<usize>],
    context: Option<&Matrix>,
) -> (f64, usize) {
    let mut g = Graph::new();
    let inputs = latent.one_hot_inputs(&mut g, codes, num_classes);
    let mut h0 = latent.initial_state(&mut g, store, &inputs);
    if let Some(c) = context {
        let c = g.constant(c.clone());
        h0 = g.add(h0, c);
    }
    let refs: Vec<&[usize]> = targets.iter().map(Vec::as_slice).collect();
    let tf = decoder.teacher_forced(&mut g, store, embedding, h0, &refs);
    let total = g.sum(tf.seq_nll);
    (g.scalar(total), tf.total_tokens())
}

/// Evaluates a sentence model on a split: reconstruction (or skip-thought)
/// perplexity under greedy codes, information quantities over the whole
/// split, and homogeneity against whatever labels the utterances carry.
pub fn evaluate_sentence_model(model: &SentenceModel, data: EvalSet<'_>, split: &str) -> Result<MetricsReport> {
    let compatible = matches!(
        (data, model.generation),
        (EvalSet::Sentences(_), Generation::Reconstruct) | (EvalSet::Triples(_), Generation::SkipThought)
    );
    if !compatible {
        return Err(Error::invalid("evaluation data does not match the model's generation mode"));
    }
    let sources = data.sources();
    if sources.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let seqs: Vec<&[usize]> = sources.iter().map(|u| u.tokens.as_slice()).collect();
    let posteriors = posteriors_chunked(|c| model.posteriors(c), &seqs)?;
    let stats = code_stats(posteriors, &model.spec, &sources)?;

    let mut per_decoder = Vec::new();
    for (d, targets) in data.targets().iter().enumerate() {
        let (mut nll, mut tokens) = (0.0, 0);
        for (chunk, codes) in targets.chunks(EVAL_CHUNK).zip(stats.codes.chunks(EVAL_CHUNK)) {
            let t: Vec<Vec<usize>> = chunk.iter().map(|u| u.target()).collect();
            let (a, b) = hard_code_nll(
                &model.store,
                &model.embedding,
                &model.latent,
                &model.decoders[d],
                model.spec.num_classes,
                codes,
                &t,
                None,
            );
            nll += a;
            tokens += b;
        }
        per_decoder.push((nll, tokens));
    }
    let nll: f64 = per_decoder.iter().map(|p| p.0).sum();
    let tokens: usize = per_decoder.iter().map(|p| p.1).sum();
    let (ppl_prev, ppl_next) = if per_decoder.len() == 2 {
        (
            Some(perplexity(per_decoder[0].0, per_decoder[0].1)?),
            Some(perplexity(per_decoder[1].0, per_decoder[1].1)?),
        )
    } else {
        (None, None)
    };
    Ok(MetricsReport {
        split: split.to_string(),
        items: sources.len(),
        tokens,
        ppl: perplexity(nll, tokens)?,
        ppl_prev,
        ppl_next,
        marginal_kl: stats.marginal_kl,
        mi: stats.mi,
        sample_kl: stats.sample_kl,
        distinct_actions: stats.distinct,
        homogeneity: stats.homogeneity,
        attribute_accuracy: None,
        policy: None,
    })
}

/// Generates one response per pair with the recognizer's code of the gold
/// response forced, for attribute-accuracy scoring.
pub fn forced_generations(
    model: &LaedModel,
    pairs: &[ContextResponsePair],
    max_len: usize,
) -> Result<Vec<(LatentAssignment, Vec<usize>)>> {
    let responses: Vec<&[usize]> = pairs.iter().map(|p| p.response.tokens.as_slice()).collect();
    let codes = model.greedy_codes(&responses)?;
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    pairs
        .iter()
        .zip(codes)
        .map(|(p, code)| {
            let g = generate(model, &p.context, &GenerationMode::ForcedCode(code.clone()), max_len, &mut rng)?;
            Ok((code, g.tokens))
        })
        .collect()
}

/// Evaluates a LAED model: response perplexity given the recognizer's code
/// and the context, the recognizer's information quantities on the
/// responses, policy quality and attribute accuracy of forced generations
/// (on at most `attribute_samples` pairs).
pub fn evaluate_laed(
    model: &LaedModel,
    pairs: &[ContextResponsePair],
    split: &str,
    max_len: usize,
    attribute_samples: usize,
) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let responses: Vec<&Utterance> = pairs.iter().map(|p| &p.response).collect();
    let seqs: Vec<&[usize]> = responses.iter().map(|u| u.tokens.as_slice()).collect();
    let posteriors = posteriors_chunked(
        |c| model.recognizer.posteriors(&model.store, &model.embedding, c),
        &seqs,
    )?;
    let stats = code_stats(posteriors, &model.spec, &responses)?;

    let (mut nll, mut tokens) = (0.0, 0);
    for (chunk, codes) in pairs.chunks(EVAL_CHUNK).zip(stats.codes.chunks(EVAL_CHUNK)) {
        let contexts: Vec<&[Utterance]> = chunk.iter().map(|p| p.context.as_slice()).collect();
        let mut g = Graph::new();
        let h = model.context.encode(&mut g, &model.store, &model.embedding, &contexts);
        let h = g.value(h).clone();
        let t: Vec<Vec<usize>> = chunk.iter().map(|p| p.response.target()).collect();
        let (a, b) = hard_code_nll(
            &model.store,
            &model.embedding,
            &model.latent,
            &model.decoder,
            model.spec.num_classes,
            codes,
            &t,
            Some(&h),
        );
        nll += a;
        tokens += b;
    }
    let policy = policy_evaluation(pairs, model)?;
    let attr_pairs = &pairs[..pairs.len().min(attribute_samples)];
    let attribute_accuracy = if attr_pairs.is_empty() {
        None
    } else {
        Some(attribute_accuracy(&forced_generations(model, attr_pairs, max_len)?, model)?)
    };
    Ok(MetricsReport {
        split: split.to_string(),
        items: pairs.len(),
        tokens,
        ppl: perplexity(nll, tokens)?,
        ppl_prev: None,
        ppl_next: None,
        marginal_kl: stats.marginal_kl,
        mi: stats.mi,
        sample_kl: stats.sample_kl,
        distinct_actions: stats.distinct,
        homogeneity: stats.homogeneity,
        attribute_accuracy,
        policy: Some(policy),
    })
}
