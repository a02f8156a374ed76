//! Parametric components: embedding, GRU recurrences, the recognition
//! encoder, latent embedding table, sentence decoders, the hierarchical
//! context encoder and the policy network.
//!
//! Every component stores [`ParamId`]s into a [`ParamStore`] owned by the
//! enclosing model and records its forward pass on a [`Graph`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Matrix, ParamId, ParamStore, Var};
use crate::corpus::{Utterance, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::latent::{argmax, LatentAssignment, LatentSpec, PosteriorStack, RelaxedSample};

/// Half-width of the uniform initializer.
pub const INIT_SCALE: f64 = 0.08;

/// Layer sizes shared by every model variant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkDims {
    pub embed_dim: usize,
    pub recognizer_hidden: usize,
    /// Generator / response decoder cell size (D).
    pub decoder_hidden: usize,
    /// Per-direction size of the bi-directional utterance encoder.
    pub utterance_hidden: usize,
    pub context_hidden: usize,
    pub policy_hidden: usize,
}

impl Default for NetworkDims {
    fn default() -> Self {
        Self {
            embed_dim: 200,
            recognizer_hidden: 512,
            decoder_hidden: 512,
            utterance_hidden: 256,
            context_hidden: 512,
            policy_hidden: 512,
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: (usize, usize)) -> Matrix {
    Matrix::from_shape_simple_fn(shape, || rng.gen_range(-INIT_SCALE..INIT_SCALE))
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        zero_bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), uniform(rng, (input, output)));
        let bias_init = if zero_bias {
            Matrix::zeros((1, output))
        } else {
            uniform(rng, (1, output))
        };
        let bias = store.add(format!("{name}.bias"), bias_init);
        Self {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let xw = g.matmul(x, w);
        g.add_row(xw, b)
    }
}

/// Gated recurrent unit, gates laid out as [reset | update | candidate].
#[derive(Clone, Debug)]
pub struct Gru {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w_ih: store.add(format!("{name}.w_ih"), uniform(rng, (input, 3 * hidden))),
            w_hh: store.add(format!("{name}.w_hh"), uniform(rng, (hidden, 3 * hidden))),
            b_ih: store.add(format!("{name}.b_ih"), uniform(rng, (1, 3 * hidden))),
            b_hh: store.add(format!("{name}.b_hh"), uniform(rng, (1, 3 * hidden))),
            input,
            hidden,
        }
    }

    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: Var, h: Var) -> Var {
        let hd = self.hidden;
        let (w_ih, w_hh) = (g.param(store, self.w_ih), g.param(store, self.w_hh));
        let (b_ih, b_hh) = (g.param(store, self.b_ih), g.param(store, self.b_hh));
        let gx = g.matmul(x, w_ih);
        let gx = g.add_row(gx, b_ih);
        let gh = g.matmul(h, w_hh);
        let gh = g.add_row(gh, b_hh);

        let gates_x = g.slice_cols(gx, 0, 2 * hd);
        let gates_h = g.slice_cols(gh, 0, 2 * hd);
        let gates = g.add(gates_x, gates_h);
        let gates = g.sigmoid(gates);
        let reset = g.slice_cols(gates, 0, hd);
        let update = g.slice_cols(gates, hd, 2 * hd);

        let cand_x = g.slice_cols(gx, 2 * hd, 3 * hd);
        let cand_h = g.slice_cols(gh, 2 * hd, 3 * hd);
        let cand_h = g.mul(reset, cand_h);
        let cand = g.add(cand_x, cand_h);
        let cand = g.tanh(cand);

        // h' = (1 - u) * n + u * h
        let diff = g.sub(h, cand);
        let keep = g.mul(update, diff);
        g.add(cand, keep)
    }

    /// Runs over `inputs`, holding the state fixed on rows whose mask is 0.
    /// Returns the state after every step.
    pub fn run(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        inputs: &[Var],
        masks: &[Vec<f64>],
        h0: Var,
    ) -> Vec<Var> {
        let mut h = h0;
        let mut states = Vec::with_capacity(inputs.len());
        for (x, mask) in inputs.iter().zip(masks) {
            let next = self.step(g, store, *x, h);
            h = if mask.iter().all(|&m| m == 1.0) {
                next
            } else {
                g.blend(next, h, mask)
            };
            states.push(h);
        }
        states
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub dim: usize,
}

impl Embedding {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        vocab: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            table: store.add(name, uniform(rng, (vocab, dim))),
            dim,
        }
    }

    pub fn lookup(&self, g: &mut Graph, store: &ParamStore, ids: &[usize]) -> Var {
        let t = g.param(store, self.table);
        g.gather(t, ids)
    }
}

/// Time-major padded id batch.
#[derive(Clone, Debug)]
pub struct PaddedBatch {
    pub steps: Vec<Vec<usize>>,
    pub masks: Vec<Vec<f64>>,
    pub lengths: Vec<usize>,
}

impl PaddedBatch {
    pub fn new(seqs: &[&[usize]]) -> Self {
        let t_max = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut steps = Vec::with_capacity(t_max);
        let mut masks = Vec::with_capacity(t_max);
        for t in 0..t_max {
            steps.push(seqs.iter().map(|s| s.get(t).copied().unwrap_or(PAD)).collect());
            masks.push(
                seqs.iter()
                    .map(|s| if t < s.len() { 1.0 } else { 0.0 })
                    .collect(),
            );
        }
        Self {
            steps,
            masks,
            lengths: seqs.iter().map(|s| s.len()).collect(),
        }
    }

    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }
}

/// Splits an N×(M·K) logit matrix into M per-variable N×K blocks.
fn split_heads(g: &mut Graph, logits: Var, spec: &LatentSpec) -> Vec<Var> {
    let k = spec.num_classes;
    (0..spec.num_vars)
        .map(|m| g.slice_cols(logits, m * k, (m + 1) * k))
        .collect()
}

/// Sentence → posterior over the latent variables.
#[derive(Clone, Debug)]
pub struct RecognitionEncoder {
    pub gru: Gru,
    /// The M affine heads stacked column-wise; head m owns columns `m*K..(m+1)*K`.
    pub heads: Linear,
    pub spec: LatentSpec,
}

impl RecognitionEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        embed_dim: usize,
        hidden: usize,
        spec: LatentSpec,
        rng: &mut R,
    ) -> Self {
        let gru = Gru::new(store, &format!("{name}.gru"), embed_dim, hidden, rng);
        let heads = Linear::new(
            store,
            &format!("{name}.heads"),
            hidden,
            spec.num_vars * spec.num_classes,
            true,
            rng,
        );
        Self { gru, heads, spec }
    }

    /// Per-variable logits from already-embedded inputs (time-major, N×E each).
    pub fn logits_from_inputs(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        inputs: &[Var],
        masks: &[Vec<f64>],
        batch: usize,
    ) -> Vec<Var> {
        let h0 = g.constant(Matrix::zeros((batch, self.gru.hidden)));
        let states = self.gru.run(g, store, inputs, masks, h0);
        let last = states.last().copied().unwrap_or(h0);
        let logits = self.heads.forward(g, store, last);
        split_heads(g, logits, &self.spec)
    }

    pub fn logits(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        embedding: &Embedding,
        seqs: &[&[usize]],
    ) -> Vec<Var> {
        let batch = PaddedBatch::new(seqs);
        let inputs: Vec<Var> = batch
            .steps
            .iter()
            .map(|ids| embedding.lookup(g, store, ids))
            .collect();
        self.logits_from_inputs(g, store, &inputs, &batch.masks, seqs.len())
    }

    /// Posterior stacks for a batch of non-empty sequences.
    pub fn posteriors(
        &self,
        store: &ParamStore,
        embedding: &Embedding,
        seqs: &[&[usize]],
    ) -> Result<Vec<PosteriorStack>> {
        if seqs.iter().any(|s| s.is_empty()) {
            return Err(Error::invalid("cannot recognize an empty token sequence"));
        }
        if seqs.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let logits = self.logits(&mut g, store, embedding, seqs);
        let probs: Vec<Matrix> = logits
            .into_iter()
            .map(|l| {
                let p = g.softmax(l);
                g.value(p).clone()
            })
            .collect();
        (0..seqs.len())
            .map(|i| {
                let rows = Matrix::from_shape_fn(
                    (self.spec.num_vars, self.spec.num_classes),
                    |(m, k)| probs[m][[i, k]],
                );
                PosteriorStack::new(rows)
            })
            .collect()
    }

    pub fn recognize(
        &self,
        store: &ParamStore,
        embedding: &Embedding,
        utterance: &Utterance,
    ) -> Result<PosteriorStack> {
        Ok(self
            .posteriors(store, embedding, &[utterance.tokens.as_slice()])?
            .remove(0))
    }
}

/// Either a relaxed sample or a hard code.
#[derive(Clone, Copy, Debug)]
pub enum LatentInput<'a> {
    Soft(&'a RelaxedSample),
    Hard(&'a LatentAssignment),
}

/// `e_m`: one K×D matrix per latent variable.
#[derive(Clone, Debug)]
pub struct LatentEmbeddingTable {
    pub tables: Vec<ParamId>,
    pub dim: usize,
}

impl LatentEmbeddingTable {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        spec: &LatentSpec,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let tables = (0..spec.num_vars)
            .map(|m| store.add(format!("{name}.e{m}"), uniform(rng, (spec.num_classes, dim))))
            .collect();
        Self { tables, dim }
    }

    /// `sum_m sample_m · e_m` for per-variable N×K (soft or one-hot) samples.
    pub fn initial_state(&self, g: &mut Graph, store: &ParamStore, samples: &[Var]) -> Var {
        assert_eq!(samples.len(), self.tables.len());
        let mut acc: Option<Var> = None;
        for (s, id) in samples.iter().zip(&self.tables) {
            let e = g.param(store, *id);
            let term = g.matmul(*s, e);
            acc = Some(match acc {
                Some(a) => g.add(a, term),
                None => term,
            });
        }
        acc.expect("latent table has at least one variable")
    }

    /// One-hot constants (per variable, N×K) for a batch of hard codes.
    pub fn one_hot_inputs(
        &self,
        g: &mut Graph,
        codes: &[LatentAssignment],
        num_classes: usize,
    ) -> Vec<Var> {
        (0..self.tables.len())
            .map(|m| {
                let mut oh = Matrix::zeros((codes.len(), num_classes));
                for (i, c) in codes.iter().enumerate() {
                    oh[[i, c.codes()[m]]] = 1.0;
                }
                g.constant(oh)
            })
            .collect()
    }
}

/// Initial decoder state: `sum_m e_m(z_m)`, plus `h^e` in context-conditioned mode.
pub fn decode_init(
    store: &ParamStore,
    table: &LatentEmbeddingTable,
    spec: &LatentSpec,
    sample: LatentInput<'_>,
    context_state: Option<&Matrix>,
) -> Result<Matrix> {
    let rows = match sample {
        LatentInput::Soft(s) => s.rows().clone(),
        LatentInput::Hard(a) => {
            if a.codes().iter().any(|&c| c >= spec.num_classes) {
                return Err(Error::invalid("latent code out of range"));
            }
            a.one_hot(spec.num_classes)
        }
    };
    if rows.dim() != (spec.num_vars, spec.num_classes) || table.tables.len() != spec.num_vars {
        return Err(Error::Shape(format!(
            "latent sample is {:?}, expected ({}, {})",
            rows.dim(),
            spec.num_vars,
            spec.num_classes
        )));
    }
    let mut g = Graph::new();
    let inputs: Vec<Var> = rows
        .rows()
        .into_iter()
        .map(|r| g.constant(r.to_owned().insert_axis(ndarray::Axis(0))))
        .collect();
    let mut state = table.initial_state(&mut g, store, &inputs);
    if let Some(ctx) = context_state {
        if ctx.dim() != (1, table.dim) {
            return Err(Error::Shape(format!(
                "context state is {:?}, decoder expects (1, {})",
                ctx.dim(),
                table.dim
            )));
        }
        let c = g.constant(ctx.clone());
        state = g.add(state, c);
    }
    Ok(g.value(state).clone())
}

/// Teacher-forced decoder unroll recorded on a graph.
pub struct TeacherForced {
    /// (T·N)×V log-probabilities, row `t*N + i` for step `t` of sequence `i`.
    pub log_probs: Var,
    /// N×1 summed negative log-likelihood of each target sequence.
    pub seq_nll: Var,
    pub batch: PaddedBatch,
}

impl TeacherForced {
    pub fn steps(&self) -> usize {
        self.batch.num_steps()
    }

    /// N×V log-probabilities at step `t`.
    pub fn step_log_probs(&self, g: &mut Graph, t: usize) -> Var {
        let n = self.batch.batch_size();
        g.slice_rows(self.log_probs, t * n, (t + 1) * n)
    }

    /// N×V normalized probabilities `o_t`.
    pub fn step_probs(&self, g: &mut Graph, t: usize) -> Var {
        let lp = self.step_log_probs(g, t);
        g.exp(lp)
    }

    pub fn total_tokens(&self) -> usize {
        self.batch.lengths.iter().sum()
    }
}

/// Autoregressive GRU generator with an output projection to the vocabulary.
#[derive(Clone, Debug)]
pub struct SentenceDecoder {
    pub gru: Gru,
    pub out: Linear,
}

impl SentenceDecoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        embed_dim: usize,
        hidden: usize,
        vocab: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            gru: Gru::new(store, &format!("{name}.gru"), embed_dim, hidden, rng),
            out: Linear::new(store, &format!("{name}.out"), hidden, vocab, false, rng),
        }
    }

    /// Scores `targets` given the N×D initial state; inputs are `<s>` then the
    /// targets shifted right.
    pub fn teacher_forced(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        embedding: &Embedding,
        h0: Var,
        targets: &[&[usize]],
    ) -> TeacherForced {
        let batch = PaddedBatch::new(targets);
        let n = batch.batch_size();
        let t_max = batch.num_steps();
        let inputs: Vec<Var> = (0..t_max)
            .map(|t| {
                let ids: Vec<usize> = if t == 0 {
                    vec![BOS; n]
                } else {
                    batch.steps[t - 1].clone()
                };
                embedding.lookup(g, store, &ids)
            })
            .collect();
        let states = self.gru.run(g, store, &inputs, &batch.masks, h0);
        let stacked = g.concat_rows(&states);
        let logits = self.out.forward(g, store, stacked);
        let log_probs = g.log_softmax(logits);

        let flat_targets: Vec<usize> = batch.steps.iter().flatten().copied().collect();
        let picked = g.pick(log_probs, &flat_targets);
        let mut select = Matrix::zeros((n, t_max * n));
        for t in 0..t_max {
            for i in 0..n {
                select[[i, t * n + i]] = -batch.masks[t][i];
            }
        }
        let select = g.constant(select);
        let seq_nll = g.matmul(select, picked);
        TeacherForced {
            log_probs,
            seq_nll,
            batch,
        }
    }

    /// Greedy decoding from N×D initial states until `</s>` or `max_len` tokens.
    pub fn greedy_decode(
        &self,
        store: &ParamStore,
        embedding: &Embedding,
        h0: &Matrix,
        max_len: usize,
    ) -> Vec<Vec<usize>> {
        let n = h0.nrows();
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut done = vec![false; n];
        let mut prev = vec![BOS; n];
        let mut h = h0.clone();
        for _ in 0..max_len {
            let mut g = Graph::new();
            let hv = g.constant(h);
            let x = embedding.lookup(&mut g, store, &prev);
            let next = self.gru.step(&mut g, store, x, hv);
            let logits = self.out.forward(&mut g, store, next);
            let lv = g.value(logits);
            for i in 0..n {
                let tok = argmax(lv.row(i).iter());
                prev[i] = tok;
                if !done[i] {
                    if tok == EOS {
                        done[i] = true;
                    } else {
                        out[i].push(tok);
                    }
                }
            }
            h = g.value(next).clone();
            if done.iter().all(|&d| d) {
                break;
            }
        }
        out
    }
}

/// Hierarchical encoder: bi-directional utterance GRU, then a discourse GRU.
#[derive(Clone, Debug)]
pub struct ContextEncoder {
    pub forward: Gru,
    pub backward: Gru,
    pub proj: Linear,
    pub discourse: Gru,
}

impl ContextEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dims: &NetworkDims,
        rng: &mut R,
    ) -> Self {
        let hu = dims.utterance_hidden;
        Self {
            forward: Gru::new(store, &format!("{name}.utt_fwd"), dims.embed_dim, hu, rng),
            backward: Gru::new(store, &format!("{name}.utt_bwd"), dims.embed_dim, hu, rng),
            proj: Linear::new(store, &format!("{name}.proj"), 2 * hu, dims.context_hidden, false, rng),
            discourse: Gru::new(
                store,
                &format!("{name}.discourse"),
                dims.context_hidden,
                dims.context_hidden,
                rng,
            ),
        }
    }

    fn final_state(
        &self,
        gru: &Gru,
        g: &mut Graph,
        store: &ParamStore,
        embedding: &Embedding,
        seqs: &[&[usize]],
    ) -> Var {
        let batch = PaddedBatch::new(seqs);
        let inputs: Vec<Var> = batch
            .steps
            .iter()
            .map(|ids| embedding.lookup(g, store, ids))
            .collect();
        let h0 = g.constant(Matrix::zeros((seqs.len(), gru.hidden)));
        let states = gru.run(g, store, &inputs, &batch.masks, h0);
        states.last().copied().unwrap_or(h0)
    }

    /// N×H_c discourse state after the last utterance of each context.
    pub fn encode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        embedding: &Embedding,
        contexts: &[&[Utterance]],
    ) -> Var {
        let n = contexts.len();
        let w = contexts.iter().map(|c| c.len()).max().unwrap_or(0);
        let empty: &[usize] = &[];
        let mut fwd: Vec<&[usize]> = Vec::with_capacity(n * w);
        let mut reversed: Vec<Vec<usize>> = Vec::with_capacity(n * w);
        for j in 0..w {
            for c in contexts {
                let toks = c.get(j).map_or(empty, |u| u.tokens.as_slice());
                fwd.push(toks);
                reversed.push(toks.iter().rev().copied().collect());
            }
        }
        let bwd: Vec<&[usize]> = reversed.iter().map(Vec::as_slice).collect();
        let hf = self.final_state(&self.forward, g, store, embedding, &fwd);
        let hb = self.final_state(&self.backward, g, store, embedding, &bwd);
        let both = g.concat_cols(&[hf, hb]);
        let proj = self.proj.forward(g, store, both);
        let utt = g.tanh(proj);

        let inputs: Vec<Var> = (0..w).map(|j| g.slice_rows(utt, j * n, (j + 1) * n)).collect();
        let masks: Vec<Vec<f64>> = (0..w)
            .map(|j| {
                contexts
                    .iter()
                    .map(|c| if j < c.len() { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        let h0 = g.constant(Matrix::zeros((n, self.discourse.hidden)));
        let states = self.discourse.run(g, store, &inputs, &masks, h0);
        states.last().copied().unwrap_or(h0)
    }
}

/// Two-layer perceptron from the context state to M×K latent logits.
#[derive(Clone, Debug)]
pub struct PolicyNetwork {
    pub hidden: Linear,
    pub out: Linear,
    pub spec: LatentSpec,
}

impl PolicyNetwork {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        spec: LatentSpec,
        rng: &mut R,
    ) -> Self {
        Self {
            hidden: Linear::new(store, &format!("{name}.hidden"), input, hidden, false, rng),
            out: Linear::new(
                store,
                &format!("{name}.out"),
                hidden,
                spec.num_vars * spec.num_classes,
                true,
                rng,
            ),
            spec,
        }
    }

    pub fn logits(&self, g: &mut Graph, store: &ParamStore, context_state: Var) -> Vec<Var> {
        let h = self.hidden.forward(g, store, context_state);
        let h = g.tanh(h);
        let logits = self.out.forward(g, store, h);
        split_heads(g, logits, &self.spec)
    }
}

/// What the generator network predicts from the latent sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generation {
    /// Reconstruct the input sentence.
    Reconstruct,
    /// Predict the previous and next sentences.
    SkipThought,
}

/// Recognition network plus generator(s): the sentence representation learner.
#[derive(Clone, Debug)]
pub struct SentenceModel {
    pub spec: LatentSpec,
    pub dims: NetworkDims,
    pub generation: Generation,
    pub vocab_size: usize,
    pub store: ParamStore,
    pub embedding: Embedding,
    pub recognizer: RecognitionEncoder,
    pub latent: LatentEmbeddingTable,
    /// `[reconstruction]` or `[previous, next]`.
    pub decoders: Vec<SentenceDecoder>,
    /// Non-autoregressive bag-of-words head used by the ELBO baselines.
    pub bow: Option<Linear>,
}

impl crate::gradcheck::HasParams for SentenceModel {
    fn params(&self) -> &ParamStore {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}

impl SentenceModel {
    pub fn new<R: Rng + ?Sized>(
        spec: LatentSpec,
        dims: NetworkDims,
        generation: Generation,
        vocab_size: usize,
        with_bow: bool,
        rng: &mut R,
    ) -> Self {
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
        let latent = LatentEmbeddingTable::new(&mut store, "latent", &spec, dims.decoder_hidden, rng);
        let names: &[&str] = match generation {
            Generation::Reconstruct => &["decoder"],
            Generation::SkipThought => &["decoder_prev", "decoder_next"],
        };
        let decoders = names
            .iter()
            .map(|n| {
                SentenceDecoder::new(
                    &mut store,
                    n,
                    dims.embed_dim,
                    dims.decoder_hidden,
                    vocab_size,
                    rng,
                )
            })
            .collect();
        let bow = with_bow
            .then(|| Linear::new(&mut store, "bow", dims.decoder_hidden, vocab_size, false, rng));
        Self {
            spec,
            dims,
            generation,
            vocab_size,
            store,
            embedding,
            recognizer,
            latent,
            decoders,
            bow,
        }
    }

    pub fn recognize(&self, utterance: &Utterance) -> Result<PosteriorStack> {
        self.recognizer
            .recognize(&self.store, &self.embedding, utterance)
    }

    pub fn posteriors(&self, seqs: &[&[usize]]) -> Result<Vec<PosteriorStack>> {
        self.recognizer.posteriors(&self.store, &self.embedding, seqs)
    }

    /// Greedy codes for a batch of sequences (chunked to bound graph size).
    pub fn greedy_codes(&self, seqs: &[&[usize]]) -> Result<Vec<LatentAssignment>> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(256) {
            out.extend(self.posteriors(chunk)?.iter().map(crate::latent::greedy_map));
        }
        Ok(out)
    }

    /// Greedy decode from hard codes with the first (reconstruction or previous) decoder.
    pub fn decode_codes(&self, codes: &[LatentAssignment], max_len: usize) -> Result<Vec<Vec<usize>>> {
        self.decode_codes_with(0, codes, max_len)
    }

    pub fn decode_codes_with(
        &self,
        decoder: usize,
        codes: &[LatentAssignment],
        max_len: usize,
    ) -> Result<Vec<Vec<usize>>> {
        for c in codes {
            LatentAssignment::new(c.codes().to_vec(), &self.spec)?;
        }
        let mut g = Graph::new();
        let inputs = self
            .latent
            .one_hot_inputs(&mut g, codes, self.spec.num_classes);
        let h0 = self.latent.initial_state(&mut g, &self.store, &inputs);
        let h0 = g.value(h0).clone();
        Ok(self.decoders[decoder].greedy_decode(&self.store, &self.embedding, &h0, max_len))
    }
}

/// Copies every parameter whose name starts with `prefix` from `src` into `dst`
/// (matching names and shapes required).
pub fn copy_params(dst: &mut ParamStore, src: &ParamStore, prefix: &str) -> Result<()> {
    for entry in src.entries().iter().filter(|e| e.name.starts_with(prefix)) {
        let id = dst
            .id(&entry.name)
            .ok_or_else(|| Error::Shape(format!("parameter {} missing", entry.name)))?;
        if dst.get(id).dim() != entry.value.dim() {
            return Err(Error::Shape(format!(
                "parameter {} is {:?}, expected {:?}",
                entry.name,
                entry.value.dim(),
                dst.get(id).dim()
            )));
        }
        *dst.get_mut(id) = entry.value.clone();
    }
    Ok(())
}

/// Replaces every value in `dst` by the same-named entry of `src`; both must
/// hold exactly the same names and shapes. Frozen flags follow `dst`.
pub fn load_params(dst: &mut ParamStore, src: &ParamStore) -> Result<()> {
    if dst.len() != src.len() {
        return Err(Error::Shape(format!(
            "checkpoint has {} parameters, model expects {}",
            src.len(),
            dst.len()
        )));
    }
    copy_params(dst, src, "")
}
