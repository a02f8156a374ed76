//! Losses and regularizers for discrete sentence representation learning.
//!
//! All information quantities are in nats and summed over the M independent
//! latent variables. The batch-level quantities are recorded on a [`Graph`]
//! so the same code serves training (differentiated) and evaluation (plain
//! numbers through the `*_estimate` / [`kl_decomposition`] wrappers).
//!
//! Reconstruction NLL is summed over the tokens of a sentence (including the
//! end-of-sentence token) and averaged over the batch.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Matrix, Var};
use crate::corpus::{SentenceTriple, Utterance};
use crate::error::{Error, Result};
use crate::latent::{gumbel_noise, gumbel_softmax_node, LatentSpec, PosteriorStack};
use crate::networks::{decode_init, Generation, LatentInput, Linear, SentenceModel};

/// Per-variable prior p(z_m), strictly positive.
#[derive(Clone, Debug, PartialEq)]
pub struct Prior {
    rows: Matrix,
}

impl Prior {
    pub fn uniform(spec: &LatentSpec) -> Self {
        let k = spec.num_classes;
        Self {
            rows: Matrix::from_elem((spec.num_vars, k), 1.0 / k as f64),
        }
    }

    pub fn new(rows: Matrix) -> Result<Self> {
        if rows.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::invalid("prior must put positive mass on every class"));
        }
        for (m, row) in rows.rows().into_iter().enumerate() {
            if (row.sum() - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!("prior row {m} does not sum to 1")));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &Matrix {
        &self.rows
    }

    fn log_column(&self, m: usize) -> Matrix {
        self.rows
            .row(m)
            .mapv(f64::ln)
            .insert_axis(ndarray::Axis(1))
    }

    fn check(&self, num_vars: usize, num_classes: usize) -> Result<()> {
        if self.rows.dim() != (num_vars, num_classes) {
            return Err(Error::Shape(format!(
                "prior is {:?}, posteriors are ({num_vars}, {num_classes})",
                self.rows.dim()
            )));
        }
        Ok(())
    }
}

/// The posteriors of one batch; q'(z) is their per-variable mean.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchPosterior {
    stacks: Vec<PosteriorStack>,
}

impl BatchPosterior {
    pub fn new(stacks: Vec<PosteriorStack>) -> Result<Self> {
        let first = stacks
            .first()
            .ok_or_else(|| Error::invalid("batch posterior needs at least one item"))?;
        let dims = (first.num_vars(), first.num_classes());
        if stacks.iter().any(|s| (s.num_vars(), s.num_classes()) != dims) {
            return Err(Error::Shape("posterior stacks differ in shape".into()));
        }
        Ok(Self { stacks })
    }

    pub fn len(&self) -> usize {
        self.stacks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stacks.is_empty()
    }

    pub fn num_vars(&self) -> usize {
        self.stacks[0].num_vars()
    }

    pub fn num_classes(&self) -> usize {
        self.stacks[0].num_classes()
    }

    pub fn stacks(&self) -> &[PosteriorStack] {
        &self.stacks
    }

    /// M matrices of shape N×K: row n of matrix m is q(z_m | x_n).
    pub fn per_variable(&self) -> Vec<Matrix> {
        (0..self.num_vars())
            .map(|m| {
                Matrix::from_shape_fn((self.len(), self.num_classes()), |(n, k)| {
                    self.stacks[n].rows()[[m, k]]
                })
            })
            .collect()
    }

    /// q'(z): M×K batch-averaged posterior.
    pub fn marginal(&self) -> Matrix {
        let mut acc = Matrix::zeros((self.num_vars(), self.num_classes()));
        for s in &self.stacks {
            acc += s.rows();
        }
        acc / self.len() as f64
    }
}

/// `KL(q'(z) || p(z))` summed over variables: batch prior regularization.
pub fn marginal_kl_node(g: &mut Graph, probs: &[Var], prior: &Prior) -> Var {
    let mut terms = Vec::with_capacity(probs.len());
    for (m, &q) in probs.iter().enumerate() {
        let marginal = g.mean_rows(q);
        terms.push(kl_rows(g, marginal, prior, m));
    }
    sum_all(g, &terms)
}

/// Mean over the batch of `KL(q(z|x_n) || p(z))`, summed over variables.
pub fn mean_sample_kl_node(g: &mut Graph, probs: &[Var], prior: &Prior) -> Var {
    let mut terms = Vec::with_capacity(probs.len());
    for (m, &q) in probs.iter().enumerate() {
        let n = g.shape(q).0 as f64;
        let total = kl_rows(g, q, prior, m);
        terms.push(g.scale(total, 1.0 / n));
    }
    sum_all(g, &terms)
}

/// `H(q'(z)) - mean_n H(q(z|x_n))` summed over variables.
pub fn mutual_information_node(g: &mut Graph, probs: &[Var]) -> Var {
    let mut terms = Vec::with_capacity(probs.len());
    for &q in probs {
        let n = g.shape(q).0 as f64;
        let marginal = g.mean_rows(q);
        let neg_h_marginal = g.xlogx(marginal);
        let neg_h_marginal = g.sum(neg_h_marginal);
        let neg_h_cond = g.xlogx(q);
        let neg_h_cond = g.sum(neg_h_cond);
        let mean_neg_h_cond = g.scale(neg_h_cond, 1.0 / n);
        terms.push(g.sub(mean_neg_h_cond, neg_h_marginal));
    }
    sum_all(g, &terms)
}

/// Sum over rows of `KL(row || prior_m)`, as a 1×1 node.
fn kl_rows(g: &mut Graph, q: Var, prior: &Prior, m: usize) -> Var {
    let neg_entropy = g.xlogx(q);
    let neg_entropy = g.sum(neg_entropy);
    let log_p = g.constant(prior.log_column(m));
    let cross = g.matmul(q, log_p);
    let cross = g.sum(cross);
    g.sub(neg_entropy, cross)
}

fn sum_all(g: &mut Graph, terms: &[Var]) -> Var {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t);
    }
    acc
}

fn batch_nodes(g: &mut Graph, bp: &BatchPosterior) -> Vec<Var> {
    bp.per_variable().into_iter().map(|m| g.constant(m)).collect()
}

pub fn batch_prior_regularization(bp: &BatchPosterior, prior: &Prior) -> Result<f64> {
    prior.check(bp.num_vars(), bp.num_classes())?;
    let mut g = Graph::new();
    let probs = batch_nodes(&mut g, bp);
    let v = marginal_kl_node(&mut g, &probs, prior);
    Ok(g.scalar(v))
}

pub fn mutual_information_estimate(bp: &BatchPosterior) -> f64 {
    let mut g = Graph::new();
    let probs = batch_nodes(&mut g, bp);
    let v = mutual_information_node(&mut g, &probs);
    g.scalar(v)
}

pub fn mean_sample_kl(bp: &BatchPosterior, prior: &Prior) -> Result<f64> {
    prior.check(bp.num_vars(), bp.num_classes())?;
    let mut g = Graph::new();
    let probs = batch_nodes(&mut g, bp);
    let v = mean_sample_kl_node(&mut g, &probs, prior);
    Ok(g.scalar(v))
}

/// Mean per-sample KL split into mutual information plus marginal KL.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlDecomposition {
    pub lhs: f64,
    pub mi: f64,
    pub marginal_kl: f64,
}

pub fn kl_decomposition(bp: &BatchPosterior, prior: &Prior) -> Result<KlDecomposition> {
    Ok(KlDecomposition {
        lhs: mean_sample_kl(bp, prior)?,
        mi: mutual_information_estimate(bp),
        marginal_kl: batch_prior_regularization(bp, prior)?,
    })
}

/// Linear warmup from 0 to 1 over `warmup_steps`, then 1.
pub fn kl_anneal_schedule(step: u64, warmup_steps: u64) -> f64 {
    assert!(warmup_steps >= 1, "warmup must be at least one step");
    (step as f64 / warmup_steps as f64).min(1.0)
}

/// Which regularizer acts on the latent posterior.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regularizer {
    /// No latent regularization (discrete autoencoder / skip thought).
    None,
    /// Per-sample `KL(q(z|x) || p(z))`, the ELBO term.
    SampleKl,
    /// `KL(q'(z) || p(z))` on the batch marginal.
    BatchPrior,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceObjective {
    pub regularizer: Regularizer,
    /// Multiplier on the per-sample KL (annealing weight).
    pub kl_weight: f64,
    pub bow_weight: f64,
}

impl SentenceObjective {
    pub fn info_max() -> Self {
        Self {
            regularizer: Regularizer::BatchPrior,
            kl_weight: 1.0,
            bow_weight: 0.0,
        }
    }

    pub fn unregularized() -> Self {
        Self {
            regularizer: Regularizer::None,
            kl_weight: 0.0,
            bow_weight: 0.0,
        }
    }

    pub fn elbo(anneal_weight: f64, bow_weight: f64) -> Self {
        Self {
            regularizer: Regularizer::SampleKl,
            kl_weight: anneal_weight,
            bow_weight,
        }
    }
}

/// Scalar components of one loss evaluation (nats, batch means).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reconstruction_prev: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reconstruction_next: Option<f64>,
    pub bpr_kl: f64,
    pub mi_estimate: f64,
    pub sample_kl: f64,
    pub annealed_kl: f64,
    pub bow: f64,
    pub policy_nll: f64,
    pub attribute: f64,
    pub total: f64,
    pub batch_size: usize,
    /// Target tokens scored by the reconstruction term.
    pub tokens: usize,
}

/// A loss recorded on a graph, ready for [`Graph::backward`].
pub struct Objective {
    pub total: Var,
    pub breakdown: LossBreakdown,
}

/// The items of one training batch.
#[derive(Clone, Copy, Debug)]
pub enum SentenceBatch<'a> {
    Autoencode(&'a [&'a Utterance]),
    SkipThought(&'a [&'a SentenceTriple]),
}

impl SentenceBatch<'_> {
    pub fn len(&self) -> usize {
        match self {
            SentenceBatch::Autoencode(b) => b.len(),
            SentenceBatch::SkipThought(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-variable Gumbel-Softmax samples and posteriors for a batch of inputs.
pub(crate) struct LatentDraw {
    pub probs: Vec<Var>,
    pub samples: Vec<Var>,
}

pub(crate) fn draw_latents<R: Rng + ?Sized>(
    g: &mut Graph,
    logits: &[Var],
    tau: f64,
    rng: &mut R,
) -> LatentDraw {
    let mut probs = Vec::with_capacity(logits.len());
    let mut samples = Vec::with_capacity(logits.len());
    for &l in logits {
        probs.push(g.softmax(l));
        let noise = gumbel_noise(g.shape(l), rng);
        samples.push(gumbel_softmax_node(g, l, &noise, tau));
    }
    LatentDraw { probs, samples }
}

/// Bag-of-words NLL: every target token scored under one distribution
/// projected from the initial state; mean over the batch.
pub fn bag_of_words_node(
    g: &mut Graph,
    store: &crate::autodiff::ParamStore,
    bow: &Linear,
    h0: Var,
    targets: &[&[usize]],
) -> Var {
    let logits = bow.forward(g, store, h0);
    let log_probs = g.log_softmax(logits);
    let mut counts = Matrix::zeros(g.shape(log_probs));
    for (i, t) in targets.iter().enumerate() {
        for &tok in t.iter() {
            counts[[i, tok]] -= 1.0;
        }
    }
    let counts = g.constant(counts);
    let weighted = g.mul(counts, log_probs);
    let total = g.sum(weighted);
    g.scale(total, 1.0 / targets.len() as f64)
}

/// Bag-of-words loss of one target given a latent sample.
pub fn bag_of_words_loss(
    model: &SentenceModel,
    sample: LatentInput<'_>,
    target: &Utterance,
) -> Result<f64> {
    let bow = model
        .bow
        .as_ref()
        .ok_or_else(|| Error::invalid("model has no bag-of-words head"))?;
    let h0 = decode_init(&model.store, &model.latent, &model.spec, sample, None)?;
    let mut g = Graph::new();
    let h0 = g.constant(h0);
    let v = bag_of_words_node(&mut g, &model.store, bow, h0, &[target.tokens.as_slice()]);
    Ok(g.scalar(v))
}

/// Records the loss of `objective` on `batch` through `model`.
pub fn sentence_loss<R: Rng + ?Sized>(
    g: &mut Graph,
    model: &SentenceModel,
    batch: SentenceBatch<'_>,
    objective: &SentenceObjective,
    rng: &mut R,
) -> Result<Objective> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let n = batch.len();
    let (sources, target_sets): (Vec<&[usize]>, Vec<Vec<Vec<usize>>>) = match (batch, model.generation) {
        (SentenceBatch::Autoencode(items), Generation::Reconstruct) => (
            items.iter().map(|u| u.tokens.as_slice()).collect(),
            vec![items.iter().map(|u| u.target()).collect()],
        ),
        (SentenceBatch::SkipThought(items), Generation::SkipThought) => (
            items.iter().map(|t| t.current.tokens.as_slice()).collect(),
            vec![
                items.iter().map(|t| t.previous.target()).collect(),
                items.iter().map(|t| t.next.target()).collect(),
            ],
        ),
        _ => {
            return Err(Error::invalid(
                "batch kind does not match the model's generation mode",
            ))
        }
    };
    if sources.iter().any(|s| s.is_empty()) {
        return Err(Error::invalid("cannot recognize an empty token sequence"));
    }

    let store = &model.store;
    let logits = model
        .recognizer
        .logits(g, store, &model.embedding, &sources);
    let draw = draw_latents(g, &logits, model.spec.temperature, rng);
    let h0 = model.latent.initial_state(g, store, &draw.samples);

    let mut breakdown = LossBreakdown {
        batch_size: n,
        ..Default::default()
    };
    let mut recon_terms = Vec::new();
    for (decoder, targets) in model.decoders.iter().zip(&target_sets) {
        let refs: Vec<&[usize]> = targets.iter().map(Vec::as_slice).collect();
        let tf = decoder.teacher_forced(g, store, &model.embedding, h0, &refs);
        breakdown.tokens += tf.total_tokens();
        let total = g.sum(tf.seq_nll);
        recon_terms.push(g.scale(total, 1.0 / n as f64));
    }
    let recon = sum_all(g, &recon_terms);
    breakdown.reconstruction = g.scalar(recon);
    if recon_terms.len() == 2 {
        breakdown.reconstruction_prev = Some(g.scalar(recon_terms[0]));
        breakdown.reconstruction_next = Some(g.scalar(recon_terms[1]));
    }

    let prior = Prior::uniform(&model.spec);
    let bpr = marginal_kl_node(g, &draw.probs, &prior);
    let sample_kl = mean_sample_kl_node(g, &draw.probs, &prior);
    let mi = mutual_information_node(g, &draw.probs);
    breakdown.bpr_kl = g.scalar(bpr);
    breakdown.sample_kl = g.scalar(sample_kl);
    breakdown.mi_estimate = g.scalar(mi);

    let mut total = recon;
    match objective.regularizer {
        Regularizer::None => {}
        Regularizer::BatchPrior => total = g.add(total, bpr),
        Regularizer::SampleKl => {
            let annealed = g.scale(sample_kl, objective.kl_weight);
            breakdown.annealed_kl = g.scalar(annealed);
            total = g.add(total, annealed);
        }
    }

    if objective.bow_weight > 0.0 {
        let bow = model
            .bow
            .as_ref()
            .ok_or_else(|| Error::invalid("bag-of-words weight set but model has no bag-of-words head"))?;
        let mut terms = Vec::new();
        for targets in &target_sets {
            let words: Vec<&[usize]> = targets.iter().map(|t| &t[..t.len() - 1]).collect();
            terms.push(bag_of_words_node(g, store, bow, h0, &words));
        }
        let bow_total = sum_all(g, &terms);
        breakdown.bow = g.scalar(bow_total);
        let weighted = g.scale(bow_total, objective.bow_weight);
        total = g.add(total, weighted);
    }

    breakdown.total = g.scalar(total);
    Ok(Objective { total, breakdown })
}

/// Reconstruction NLL plus batch prior regularization.
pub fn di_vae_loss<R: Rng + ?Sized>(
    g: &mut Graph,
    model: &SentenceModel,
    batch: &[&Utterance],
    rng: &mut R,
) -> Result<Objective> {
    sentence_loss(g, model, SentenceBatch::Autoencode(batch), &SentenceObjective::info_max(), rng)
}

/// Previous- and next-sentence NLL plus batch prior regularization.
pub fn di_vst_loss<R: Rng + ?Sized>(
    g: &mut Graph,
    model: &SentenceModel,
    batch: &[&SentenceTriple],
    rng: &mut R,
) -> Result<Objective> {
    sentence_loss(g, model, SentenceBatch::SkipThought(batch), &SentenceObjective::info_max(), rng)
}

/// ELBO with an annealed per-sample KL and optional bag-of-words term.
pub fn dvae_elbo_loss<R: Rng + ?Sized>(
    g: &mut Graph,
    model: &SentenceModel,
    batch: SentenceBatch<'_>,
    anneal_weight: f64,
    bow_weight: f64,
    rng: &mut R,
) -> Result<Objective> {
    sentence_loss(g, model, batch, &SentenceObjective::elbo(anneal_weight, bow_weight), rng)
}
