//! Latent action encoder-decoder: a context encoder and response decoder
//! conditioned on latent actions, a policy predicting actions from context,
//! and attribute forcing through a frozen recognition network.

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Matrix, ParamStore, Var};
use crate::corpus::{ContextResponsePair, Utterance};
use crate::error::{Error, Result};
use crate::gradcheck::HasParams;
use crate::latent::{argmax, gumbel_noise, LatentAssignment, LatentSpec, PosteriorStack};
use crate::networks::{
    copy_params, ContextEncoder, Embedding, Generation, LatentEmbeddingTable, NetworkDims,
    PolicyNetwork, RecognitionEncoder, SentenceDecoder, SentenceModel,
};
use crate::objectives::{LossBreakdown, Objective};

pub const DEFAULT_MAX_LEN: usize = 40;

#[derive(Clone, Debug)]
pub struct LaedModel {
    pub spec: LatentSpec,
    pub dims: NetworkDims,
    pub vocab_size: usize,
    /// How the frozen recognizer was pre-trained (AE-ED vs ST-ED).
    pub source: Generation,
    pub store: ParamStore,
    /// Shared with (and frozen alongside) the recognizer.
    pub embedding: Embedding,
    pub recognizer: RecognitionEncoder,
    pub context: ContextEncoder,
    pub latent: LatentEmbeddingTable,
    pub decoder: SentenceDecoder,
    pub policy: PolicyNetwork,
}

impl HasParams for LaedModel {
    fn params(&self) -> &ParamStore {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}

impl LaedModel {
    /// Fresh model with randomly initialized (but frozen) recognizer slots.
    pub fn new<R: Rng + ?Sized>(
        spec: LatentSpec,
        dims: NetworkDims,
        source: Generation,
        vocab_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.context_hidden != dims.decoder_hidden {
            return Err(Error::config(
                "context_hidden",
                format!(
                    "must equal decoder_hidden ({}) so the context state can be added to the latent embedding",
                    dims.decoder_hidden
                ),
            ));
        }
        let mut store = ParamStore::new();
        let embedding = Embedding::new(&mut store, "embedding", vocab_size, dims.embed_dim, rng);
        let recognizer = RecognitionEncoder::new(
            &mut store,
            "recognizer",
            dims.embed_dim,
            dims.recognizer_hidden,
            spec,
            rng,
        );
        let context = ContextEncoder::new(&mut store, "context", &dims, rng);
        let latent = LatentEmbeddingTable::new(&mut store, "latent", &spec, dims.decoder_hidden, rng);
        let decoder = SentenceDecoder::new(
            &mut store,
            "decoder",
            dims.embed_dim,
            dims.decoder_hidden,
            vocab_size,
            rng,
        );
        let policy = PolicyNetwork::new(
            &mut store,
            "policy",
            dims.context_hidden,
            dims.policy_hidden,
            spec,
            rng,
        );
        store.freeze_prefix("embedding");
        store.freeze_prefix("recognizer.");
        Ok(Self {
            spec,
            dims,
            vocab_size,
            source,
            store,
            embedding,
            recognizer,
            context,
            latent,
            decoder,
            policy,
        })
    }

    /// Builds a model around the recognizer (and embedding) of a pre-trained
    /// sentence model; those parameters are copied and frozen.
    pub fn from_recognizer<R: Rng + ?Sized>(
        pretrained: &SentenceModel,
        dims: NetworkDims,
        rng: &mut R,
    ) -> Result<Self> {
        let d = &pretrained.dims;
        if (d.embed_dim, d.recognizer_hidden) != (dims.embed_dim, dims.recognizer_hidden) {
            return Err(Error::Shape(
                "recognizer dimensions differ from the pre-trained model".into(),
            ));
        }
        let mut model = Self::new(
            pretrained.spec,
            dims,
            pretrained.generation,
            pretrained.vocab_size,
            rng,
        )?;
        copy_params(&mut model.store, &pretrained.store, "embedding")?;
        copy_params(&mut model.store, &pretrained.store, "recognizer.")?;
        Ok(model)
    }

    pub fn recognize(&self, utterance: &Utterance) -> Result<PosteriorStack> {
        self.recognizer
            .recognize(&self.store, &self.embedding, utterance)
    }

    pub fn greedy_codes(&self, seqs: &[&[usize]]) -> Result<Vec<LatentAssignment>> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(256) {
            let stacks = self.recognizer.posteriors(&self.store, &self.embedding, chunk)?;
            out.extend(stacks.iter().map(crate::latent::greedy_map));
        }
        Ok(out)
    }

    /// p_π(z | c) for a batch of contexts.
    pub fn predict_policy(&self, contexts: &[&[Utterance]]) -> Result<Vec<PosteriorStack>> {
        if contexts.iter().any(|c| c.is_empty()) {
            return Err(Error::invalid("policy needs a non-empty context"));
        }
        let mut g = Graph::new();
        let h = self.context.encode(&mut g, &self.store, &self.embedding, contexts);
        let logits = self.policy.logits(&mut g, &self.store, h);
        let probs: Vec<Matrix> = logits
            .into_iter()
            .map(|l| {
                let p = g.softmax(l);
                g.value(p).clone()
            })
            .collect();
        (0..contexts.len())
            .map(|i| {
                PosteriorStack::new(Matrix::from_shape_fn(
                    (self.spec.num_vars, self.spec.num_classes),
                    |(m, k)| probs[m][[i, k]],
                ))
            })
            .collect()
    }

    fn context_state(&self, context: &[Utterance]) -> Result<Matrix> {
        if context.is_empty() {
            return Err(Error::invalid("generation needs a non-empty context"));
        }
        let mut g = Graph::new();
        let h = self.context.encode(&mut g, &self.store, &self.embedding, &[context]);
        Ok(g.value(h).clone())
    }
}

/// Draws hard codes z ~ q_R(z|x) with the Gumbel-max trick.
fn sample_codes<R: Rng + ?Sized>(
    g: &Graph,
    logits: &[Var],
    spec: &LatentSpec,
    rng: &mut R,
) -> Vec<LatentAssignment> {
    let n = g.shape(logits[0]).0;
    let mut codes = vec![Vec::with_capacity(spec.num_vars); n];
    for &l in logits {
        let noisy = g.value(l) + &gumbel_noise(g.shape(l), rng);
        for (i, row) in noisy.rows().into_iter().enumerate() {
            codes[i].push(argmax(row.iter()));
        }
    }
    codes.into_iter().map(LatentAssignment::from_codes).collect()
}

/// `E · o_t` for each step: a probability-weighted sum of word embeddings.
pub fn relaxed_recognition_input(
    g: &mut Graph,
    store: &ParamStore,
    embedding: &Embedding,
    step_probs: &[Var],
) -> Vec<Var> {
    let table = g.param(store, embedding.table);
    step_probs.iter().map(|&o| g.matmul(o, table)).collect()
}

/// Graph nodes of the three LAED terms (each a batch mean).
pub struct LaedTerms {
    pub policy: Var,
    pub reconstruction: Var,
    pub attribute: Option<Var>,
    pub codes: Vec<LatentAssignment>,
    pub tokens: usize,
}

/// Records the policy, reconstruction and (if `with_attribute`) attribute
/// terms for one batch of context-response pairs.
pub fn laed_terms<R: Rng + ?Sized>(
    g: &mut Graph,
    model: &LaedModel,
    batch: &[&ContextResponsePair],
    with_attribute: bool,
    rng: &mut R,
) -> Result<LaedTerms> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if batch.iter().any(|p| p.context.is_empty() || p.response.is_empty()) {
        return Err(Error::invalid("pairs need a non-empty context and response"));
    }
    let n = batch.len() as f64;
    let store = &model.store;
    let spec = &model.spec;

    let responses: Vec<&[usize]> = batch.iter().map(|p| p.response.tokens.as_slice()).collect();
    let r_logits = model
        .recognizer
        .logits(g, store, &model.embedding, &responses);
    let codes = sample_codes(g, &r_logits, spec, rng);

    let contexts: Vec<&[Utterance]> = batch.iter().map(|p| p.context.as_slice()).collect();
    let h_e = model.context.encode(g, store, &model.embedding, &contexts);

    let p_logits = model.policy.logits(g, store, h_e);
    let mut policy_terms = Vec::with_capacity(spec.num_vars);
    for (m, &l) in p_logits.iter().enumerate() {
        let lp = g.log_softmax(l);
        let ids: Vec<usize> = codes.iter().map(|c| c.codes()[m]).collect();
        let picked = g.pick(lp, &ids);
        let s = g.sum(picked);
        policy_terms.push(g.scale(s, -1.0 / n));
    }
    let policy = sum_all(g, &policy_terms);

    let one_hot = model.latent.one_hot_inputs(g, &codes, spec.num_classes);
    let latent_state = model.latent.initial_state(g, store, &one_hot);
    let h0 = g.add(h_e, latent_state);
    let targets: Vec<Vec<usize>> = batch.iter().map(|p| p.response.target()).collect();
    let target_refs: Vec<&[usize]> = targets.iter().map(Vec::as_slice).collect();
    let tf = model
        .decoder
        .teacher_forced(g, store, &model.embedding, h0, &target_refs);
    let tokens = tf.total_tokens();
    let nll = g.sum(tf.seq_nll);
    let reconstruction = g.scale(nll, 1.0 / n);

    let attribute = if with_attribute {
        // word positions only; the final end-token step carries no content
        let word_steps = tf.steps() - 1;
        let probs: Vec<Var> = (0..word_steps).map(|t| tf.step_probs(g, t)).collect();
        let inputs = relaxed_recognition_input(g, store, &model.embedding, &probs);
        let masks: Vec<Vec<f64>> = (0..word_steps)
            .map(|t| {
                batch
                    .iter()
                    .map(|p| if t < p.response.len() { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        let a_logits = model
            .recognizer
            .logits_from_inputs(g, store, &inputs, &masks, batch.len());
        let mut terms = Vec::with_capacity(spec.num_vars);
        for (m, &l) in a_logits.iter().enumerate() {
            let lp = g.log_softmax(l);
            let ids: Vec<usize> = codes.iter().map(|c| c.codes()[m]).collect();
            let picked = g.pick(lp, &ids);
            let s = g.sum(picked);
            terms.push(g.scale(s, -1.0 / n));
        }
        Some(sum_all(g, &terms))
    } else {
        None
    };

    Ok(LaedTerms {
        policy,
        reconstruction,
        attribute,
        codes,
        tokens,
    })
}

fn sum_all(g: &mut Graph, terms: &[Var]) -> Var {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t);
    }
    acc
}

fn assemble(g: &mut Graph, terms: &LaedTerms, lambda: f64, batch_size: usize) -> Objective {
    let mut total = g.add(terms.policy, terms.reconstruction);
    let mut breakdown = LossBreakdown {
        reconstruction: g.scalar(terms.reconstruction),
        policy_nll: g.scalar(terms.policy),
        batch_size,
        tokens: terms.tokens,
        ..Default::default()
    };
    if let Some(a) = terms.attribute {
        breakdown.attribute = g.scalar(a);
        if lambda != 0.0 {
            let weighted = g.scale(a, lambda);
            total = g.add(total, weighted);
        }
    }
    breakdown.total = g.scalar(total);
    Objective { total, breakdown }
}

/// Policy NLL of the sampled code plus response reconstruction NLL.
pub fn laed_loss<R: Rng + ?Sized>(
    g: &mut Graph,
    model: &LaedModel,
    batch: &[&ContextResponsePair],
    rng: &mut R,
) -> Result<Objective> {
    let terms = laed_terms(g, model, batch, false, rng)?;
    Ok(assemble(g, &terms, 0.0, batch.len()))
}

/// `-log q_R(z | E·o_1..E·o_T)` for the sampled code z, batch mean.
pub fn attribute_loss<R: Rng + ?Sized>(
    g: &mut Graph,
    model: &LaedModel,
    batch: &[&ContextResponsePair],
    rng: &mut R,
) -> Result<Var> {
    let terms = laed_terms(g, model, batch, true, rng)?;
    Ok(terms.attribute.expect("attribute term requested"))
}

/// LAED loss plus `lambda` times the attribute loss, on one shared code sample.
pub fn attr_laed_loss<R: Rng + ?Sized>(
    g: &mut Graph,
    model: &LaedModel,
    batch: &[&ContextResponsePair],
    lambda: f64,
    rng: &mut R,
) -> Result<Objective> {
    let terms = laed_terms(g, model, batch, true, rng)?;
    Ok(assemble(g, &terms, lambda, batch.len()))
}

/// λ ramps linearly to its configured value over `warmup_steps`.
pub fn lambda_schedule(lambda: f64, step: u64, warmup_steps: u64) -> f64 {
    if warmup_steps == 0 {
        lambda
    } else {
        lambda * (step as f64 / warmup_steps as f64).min(1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GenerationMode {
    PolicySample,
    PolicyArgmax,
    ForcedCode(LatentAssignment),
}

impl FromStr for GenerationMode {
    type Err = Error;

    /// `policy-sample`, `policy-argmax`, or `forced-code:<a1-a2-...>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "policy-sample" => Ok(GenerationMode::PolicySample),
            "policy-argmax" => Ok(GenerationMode::PolicyArgmax),
            _ => match s.strip_prefix("forced-code:") {
                Some(code) => Ok(GenerationMode::ForcedCode(code.parse()?)),
                None => Err(Error::invalid(format!("unknown generation mode `{s}`"))),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionProb {
    pub action: String,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub assignment: LatentAssignment,
    /// Word ids, without the end token.
    pub tokens: Vec<usize>,
    pub policy: PosteriorStack,
}

/// Decodes one response for `context` with the code chosen by `mode`.
pub fn generate<R: Rng + ?Sized>(
    model: &LaedModel,
    context: &[Utterance],
    mode: &GenerationMode,
    max_len: usize,
    rng: &mut R,
) -> Result<Generated> {
    let h_e = model.context_state(context)?;
    let policy = model.predict_policy(&[context])?.remove(0);
    let assignment = match mode {
        GenerationMode::PolicyArgmax => crate::latent::greedy_map(&policy),
        GenerationMode::PolicySample => {
            let codes = policy
                .rows()
                .rows()
                .into_iter()
                .map(|row| {
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    let mut pick = row.len() - 1;
                    for (k, &p) in row.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            pick = k;
                            break;
                        }
                    }
                    pick
                })
                .collect();
            LatentAssignment::from_codes(codes)
        }
        GenerationMode::ForcedCode(code) => LatentAssignment::new(code.codes().to_vec(), &model.spec)?,
    };
    let mut g = Graph::new();
    let one_hot = model
        .latent
        .one_hot_inputs(&mut g, std::slice::from_ref(&assignment), model.spec.num_classes);
    let latent_state = model.latent.initial_state(&mut g, &model.store, &one_hot);
    let h_e = g.constant(h_e);
    let h0 = g.add(h_e, latent_state);
    let h0 = g.value(h0).clone();
    let tokens = model
        .decoder
        .greedy_decode(&model.store, &model.embedding, &h0, max_len)
        .remove(0);
    Ok(Generated {
        assignment,
        tokens,
        policy,
    })
}

/// The `n` most probable joint actions under independent per-variable rows.
pub fn policy_top(policy: &PosteriorStack, n: usize) -> Vec<ActionProb> {
    // exact: every prefix of a top-n assignment is itself a top-n prefix
    let mut beam: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 1.0)];
    for row in policy.rows().rows() {
        let mut next: Vec<(Vec<usize>, f64)> = beam
            .iter()
            .flat_map(|(codes, p)| {
                row.iter().enumerate().map(move |(k, &q)| {
                    let mut c = codes.clone();
                    c.push(k);
                    (c, p * q)
                })
            })
            .collect();
        next.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        next.truncate(n.max(1));
        beam = next;
    }
    beam.truncate(n);
    beam.into_iter()
        .map(|(codes, prob)| ActionProb {
            action: LatentAssignment::from_codes(codes).to_string(),
            prob,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EOS;
    use crate::gradcheck::{check_gradients, DEFAULT_EPS};
    use crate::networks::Linear;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_dims() -> NetworkDims {
        NetworkDims {
            embed_dim: 3,
            recognizer_hidden: 4,
            decoder_hidden: 4,
            utterance_hidden: 2,
            context_hidden: 4,
            policy_hidden: 3,
        }
    }

    fn tiny() -> LaedModel {
        let spec = LatentSpec::new(2, 3, 1.0).unwrap();
        LaedModel::new(spec, tiny_dims(), Generation::Reconstruct, 11, &mut ChaCha8Rng::seed_from_u64(8))
            .unwrap()
    }

    fn pairs() -> Vec<ContextResponsePair> {
        vec![
            ContextResponsePair {
                context: vec![Utterance::new(vec![4, 5]), Utterance::new(vec![6])],
                response: Utterance::new(vec![7, 8, 9]),
            },
            ContextResponsePair {
                context: vec![Utterance::new(vec![10])],
                response: Utterance::new(vec![5, 4]),
            },
        ]
    }

    fn zero(model: &mut LaedModel, lin: &Linear) {
        model.store.get_mut(lin.weight).fill(0.0);
        model.store.get_mut(lin.bias).fill(0.0);
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(21)
    }

    #[test]
    fn mismatched_context_width_is_a_config_error() {
        let spec = LatentSpec::new(2, 3, 1.0).unwrap();
        let mut dims = tiny_dims();
        dims.context_hidden = 5;
        let err = LaedModel::new(spec, dims, Generation::Reconstruct, 11, &mut rng()).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn uniform_policy_costs_m_ln_k() {
        let mut m = tiny();
        let out = m.policy.out.clone();
        zero(&mut m, &out);
        let ps = pairs();
        let batch: Vec<_> = ps.iter().collect();
        let mut g = Graph::new();
        let obj = laed_loss(&mut g, &m, &batch, &mut rng()).unwrap();
        assert!((obj.breakdown.policy_nll - 2.0 * 3f64.ln()).abs() < 1e-12);
        let top = policy_top(&m.predict_policy(&[&ps[0].context]).unwrap()[0], 3);
        assert_eq!(top.len(), 3);
        assert!((top[0].prob - 1.0 / 9.0).abs() < 1e-12);
        assert_eq!(top[0].action, "0-0");
    }

    #[test]
    fn recognizer_and_embedding_get_no_gradient() {
        let m = tiny();
        let ps = pairs();
        let batch: Vec<_> = ps.iter().collect();
        let mut g = Graph::new();
        let obj = attr_laed_loss(&mut g, &m, &batch, 1.0, &mut rng()).unwrap();
        let grads = g.backward(obj.total);
        for id in m.store.ids() {
            let name = m.store.name(id);
            let frozen = name.starts_with("recognizer.") || name == "embedding";
            assert_eq!(m.store.is_frozen(id), frozen, "{name}");
            if frozen {
                assert!(grads.param(id).is_none(), "{name}");
            } else {
                assert!(grads.param(id).is_some(), "{name}");
            }
        }
    }

    #[test]
    fn attribute_weight_is_linear_and_shares_the_code_sample() {
        let m = tiny();
        let ps = pairs();
        let batch: Vec<_> = ps.iter().collect();
        let mut g = Graph::new();
        let base = laed_loss(&mut g, &m, &batch, &mut rng()).unwrap().breakdown;
        let attr_var = attribute_loss(&mut g, &m, &batch, &mut rng()).unwrap();
        let attr = g.scalar(attr_var);
        assert!(attr > 0.0);
        for lambda in [0.0, 0.5, 2.0] {
            let b = attr_laed_loss(&mut g, &m, &batch, lambda, &mut rng()).unwrap().breakdown;
            assert!((b.total - (base.total + lambda * attr)).abs() < 1e-12);
            assert_eq!(b.policy_nll, base.policy_nll);
        }
        let zero = attr_laed_loss(&mut g, &m, &batch, 0.0, &mut rng()).unwrap().breakdown;
        assert_eq!(zero.total, base.total);
    }

    #[test]
    fn policy_and_decoder_terms_are_separable() {
        let m = tiny();
        let ps = pairs();
        let batch: Vec<_> = ps.iter().collect();
        let mut g = Graph::new();
        let terms = laed_terms(&mut g, &m, &batch, false, &mut rng()).unwrap();
        let total = g.add(terms.policy, terms.reconstruction);
        let full = g.backward(total);
        let only_policy = g.backward(terms.policy);
        let only_recon = g.backward(terms.reconstruction);
        for id in m.store.ids() {
            let name = m.store.name(id);
            if name.starts_with("policy.") {
                assert_eq!(full.param(id), only_policy.param(id), "{name}");
                assert!(only_recon.param(id).is_none());
            }
            if name.starts_with("decoder.") || name.starts_with("latent.") {
                assert_eq!(full.param(id), only_recon.param(id), "{name}");
                assert!(only_policy.param(id).is_none());
            }
        }
    }

    #[test]
    fn relaxed_input_of_one_hot_and_uniform() {
        let m = tiny();
        let e = m.store.get(m.embedding.table).clone();
        let mut g = Graph::new();
        let mut oh = Matrix::zeros((1, 11));
        oh[[0, 6]] = 1.0;
        let oh = g.constant(oh);
        let uni = g.constant(Matrix::from_elem((1, 11), 1.0 / 11.0));
        let out = relaxed_recognition_input(&mut g, &m.store, &m.embedding, &[oh, uni]);
        let row = g.value(out[0]);
        for d in 0..3 {
            assert!((row[[0, d]] - e[[6, d]]).abs() < 1e-15);
            let mean = e.column(d).mean().unwrap();
            assert!((g.value(out[1])[[0, d]] - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn forced_code_ignores_policy_and_argmax_is_deterministic() {
        let mut m = tiny();
        let ps = pairs();
        let code: LatentAssignment = "2-1".parse().unwrap();
        let mode = GenerationMode::ForcedCode(code.clone());
        let a = generate(&m, &ps[0].context, &mode, DEFAULT_MAX_LEN, &mut rng()).unwrap();
        assert_eq!(a.assignment, code);
        let out = m.policy.out.clone();
        m.store.get_mut(out.weight).mapv_inplace(|v| v * 7.0 - 1.0);
        let b = generate(&m, &ps[0].context, &mode, DEFAULT_MAX_LEN, &mut rng()).unwrap();
        assert_eq!(a.tokens, b.tokens);
        let x = generate(&m, &ps[1].context, &GenerationMode::PolicyArgmax, 5, &mut rng()).unwrap();
        let y = generate(&m, &ps[1].context, &GenerationMode::PolicyArgmax, 5, &mut rng()).unwrap();
        assert_eq!(x, y);
        assert!(x.tokens.len() <= 5);
        assert!(generate(&m, &[], &GenerationMode::PolicyArgmax, 5, &mut rng()).is_err());
    }

    #[test]
    fn generation_mode_parsing() {
        assert_eq!("policy-sample".parse::<GenerationMode>().unwrap(), GenerationMode::PolicySample);
        assert_eq!(
            "forced-code:1-4-2".parse::<GenerationMode>().unwrap(),
            GenerationMode::ForcedCode("1-4-2".parse().unwrap())
        );
        assert!("beam".parse::<GenerationMode>().is_err());
    }

    #[test]
    fn perfect_policy_and_decoder_give_zero() {
        let mut m = tiny();
        let ps = vec![ContextResponsePair {
            context: vec![Utterance::new(vec![4])],
            response: Utterance::new(vec![5]),
        }];
        // recognizer certain of code 1-2, policy certain of the same, decoder certain of `5 </s>`
        let heads = m.recognizer.heads.clone();
        zero(&mut m, &heads);
        m.store.get_mut(heads.bias)[[0, 1]] = 1e3;
        m.store.get_mut(heads.bias)[[0, 3 + 2]] = 1e3;
        let pol = m.policy.out.clone();
        zero(&mut m, &pol);
        m.store.get_mut(pol.bias)[[0, 1]] = 1e3;
        m.store.get_mut(pol.bias)[[0, 3 + 2]] = 1e3;
        let dec = m.decoder.out.clone();
        zero(&mut m, &dec);
        // the decoder input at step 0 is <s>, at step 1 the word 5; separate them through the input weights
        let w_ih = m.decoder.gru.w_ih;
        m.store.get_mut(w_ih).fill(0.0);
        let emb = m.embedding.table;
        m.store.get_mut(emb).fill(0.0);
        m.store.get_mut(emb)[[5, 0]] = 1.0;
        // candidate gate (columns 2H..3H) copies embedding dim 0 into hidden unit 0
        m.store.get_mut(w_ih)[[0, 8]] = 50.0;
        let w_hh = m.decoder.gru.w_hh;
        m.store.get_mut(w_hh).fill(0.0);
        for lin in [&m.latent.tables[0], &m.latent.tables[1]] {
            m.store.get_mut(*lin).fill(0.0);
        }
        let b_ih = m.decoder.gru.b_ih;
        let b_hh = m.decoder.gru.b_hh;
        m.store.get_mut(b_ih).fill(0.0);
        m.store.get_mut(b_hh).fill(0.0);
        // update gate strongly closed (u -> 0) so h' is the candidate
        for j in 4..8 {
            m.store.get_mut(b_ih)[[0, j]] = -50.0;
        }
        m.store.get_mut(dec.weight)[[0, EOS]] = 1e3;
        m.store.get_mut(dec.bias)[[0, 5]] = 500.0;
        // context encoder output must not disturb the decoder: zero its projection
        let proj = m.context.proj.clone();
        zero(&mut m, &proj);
        let batch: Vec<_> = ps.iter().collect();
        let mut g = Graph::new();
        let b = attr_laed_loss(&mut g, &m, &batch, 1.0, &mut rng()).unwrap().breakdown;
        assert!(b.policy_nll.abs() < 1e-9, "{b:?}");
        assert!(b.reconstruction.abs() < 1e-9, "{b:?}");
        assert!(b.total.abs() < 1e-9, "{b:?}");
    }

    #[test]
    fn laed_gradients_match_finite_differences() {
        let mut m = tiny();
        let ps = pairs();
        let batch: Vec<_> = ps.iter().collect();
        let r = check_gradients(&mut m, DEFAULT_EPS, |m, g| {
            laed_loss(g, m, &batch, &mut rng()).unwrap().total
        });
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
        assert_eq!(r.frozen_max_abs, 0.0);
        let r = check_gradients(&mut m, DEFAULT_EPS, |m, g| {
            attribute_loss(g, m, &batch, &mut rng()).unwrap()
        });
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
        assert!(r.nonzero > 0);
        let r = check_gradients(&mut m, DEFAULT_EPS, |m, g| {
            attr_laed_loss(g, m, &batch, 0.7, &mut rng()).unwrap().total
        });
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }
}
