//! Category-conditioned relational-memory generator with Gumbel-Softmax
//! relaxation.
//!
//! Computation is batched over rows: the memory of a batch is held as one
//! `B x mem_dim` matrix per slot, so each slot row of a sequence's memory
//! matrix lives in row `b` of the corresponding slot matrix.
//!
//! Per step, for each head `h` and memory slot `s`:
//!
//! ```text
//! x_t      = [E_y[y_t] ; E_c[c]] W_x
//! R        = [M_1 .. M_m ; x_t]                    (m + 1 key/value rows)
//! a_{s,h}  = softmax_j( (M_s Wq_h) . (R_j Wk_h) / sqrt(d_k) )
//! P_s      = concat_h sum_j a_{s,h,j} (R_j Wv_h)   (proposed update)
//! U_s      = P_s + MLP([P_s, M_s])
//! i, f     = sigmoid([P_s, tanh(M_s)] W_g + b_g)
//! M'_s     = i * tanh(U_s) + f * M_s
//! o_t      = [M'_1 .. M'_m] W_o + b_o
//! ```
//!
//! Sampling uses the Gumbel-Max trick on `o_t`; the relaxed row is
//! `softmax(tau * (o_t + g_t))`, with the temperature multiplying the
//! perturbed logits.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_rows, Graph, Matrix, Var};
use crate::checkpoint::{Container, DType};
use crate::corpus::TokenSequence;
use crate::error::{Error, Result};
use crate::params::{rng_for, BoundParams, ParamStore};

/// Logit offset applied to tokens the generator may never emit.
pub const BANNED_LOGIT: f64 = -1e9;

/// Rows per forward graph when scoring or sampling large sets.
const CHUNK: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub vocab_size: usize,
    pub num_categories: usize,
    pub emb_dim: usize,
    pub cat_dim: usize,
    pub mem_slots: usize,
    pub mem_dim: usize,
    pub num_heads: usize,
    pub mlp_hidden: usize,
    /// Token fed at the first step.
    pub start_id: usize,
    /// Token ids masked out of the output distribution.
    #[serde(default)]
    pub banned_outputs: Vec<usize>,
    /// Feed the relaxed row back as the next input instead of the sampled
    /// token.
    #[serde(default)]
    pub soft_feedback: bool,
}

impl GeneratorConfig {
    /// Defaults for a given vocabulary and category count.
    pub fn new(vocab_size: usize, num_categories: usize, start_id: usize) -> Self {
        Self {
            vocab_size,
            num_categories,
            emb_dim: 32,
            cat_dim: 32,
            mem_slots: 1,
            mem_dim: 64,
            num_heads: 2,
            mlp_hidden: 64,
            start_id,
            banned_outputs: Vec::new(),
            soft_feedback: false,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.mem_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("num_categories", self.num_categories),
            ("emb_dim", self.emb_dim),
            ("cat_dim", self.cat_dim),
            ("mem_slots", self.mem_slots),
            ("mem_dim", self.mem_dim),
            ("num_heads", self.num_heads),
            ("mlp_hidden", self.mlp_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("generator {name} must be positive")));
            }
        }
        if !self.mem_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "generator mem_dim {} is not divisible by num_heads {}",
                self.mem_dim, self.num_heads
            )));
        }
        if self.start_id >= self.vocab_size {
            return Err(Error::TokenOutOfRange {
                id: self.start_id,
                size: self.vocab_size,
            });
        }
        if let Some(&b) = self.banned_outputs.iter().find(|&&b| b >= self.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id: b,
                size: self.vocab_size,
            });
        }
        if self.banned_outputs.len() >= self.vocab_size {
            return Err(Error::Config("every output token is banned".into()));
        }
        Ok(())
    }
}

/// Generator weights. Cloning is a deep copy.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub config: GeneratorConfig,
    pub store: ParamStore,
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_shape_simple_fn((rows, cols), || rng.random_range(-a..a))
}

impl GeneratorParams {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let d = c.mem_dim;
        let mut rng = rng_for(seed, &[0x6e]);
        let mut store = ParamStore::new();
        store.insert("token_embedding", glorot(c.vocab_size, c.emb_dim, &mut rng));
        store.insert("category_embedding", glorot(c.num_categories, c.cat_dim, &mut rng));
        store.insert("input_proj", glorot(c.emb_dim + c.cat_dim, d, &mut rng));
        for s in 0..c.mem_slots {
            store.insert(format!("initial_memory.{s}"), glorot(1, d, &mut rng));
        }
        store.insert("w_query", glorot(d, d, &mut rng));
        store.insert("w_key", glorot(d, d, &mut rng));
        store.insert("w_value", glorot(d, d, &mut rng));
        store.insert("mlp_w1", glorot(2 * d, c.mlp_hidden, &mut rng));
        store.insert("mlp_b1", Matrix::zeros((1, c.mlp_hidden)));
        store.insert("mlp_w2", glorot(c.mlp_hidden, d, &mut rng));
        store.insert("mlp_b2", Matrix::zeros((1, d)));
        store.insert("gate_w", glorot(2 * d, 2 * d, &mut rng));
        // Forget gate starts biased open.
        let mut gate_b = Matrix::zeros((1, 2 * d));
        gate_b.slice_mut(ndarray::s![.., d..]).fill(1.0);
        store.insert("gate_b", gate_b);
        store.insert("output_w", glorot(c.mem_slots * d, c.vocab_size, &mut rng));
        store.insert("output_b", Matrix::zeros((1, c.vocab_size)));
        Ok(Self { config, store })
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn bind(&self, graph: &mut Graph, tracked: bool) -> BoundGenerator<'_> {
        let vars = self.store.bind(graph, tracked);
        let mask = if self.config.banned_outputs.is_empty() {
            None
        } else {
            let mut m = Matrix::zeros((1, self.config.vocab_size));
            for &b in &self.config.banned_outputs {
                m[[0, b]] = BANNED_LOGIT;
            }
            Some(graph.constant(m))
        };
        BoundGenerator {
            config: &self.config,
            vars,
            mask,
        }
    }

    fn check_category(&self, c: usize) -> Result<()> {
        if c < self.config.num_categories {
            Ok(())
        } else {
            Err(Error::CategoryOutOfRange {
                category: c,
                k: self.config.num_categories,
            })
        }
    }

    /// Samples `n` sequences of category `c`.
    pub fn generate(
        &self,
        category: usize,
        n: usize,
        seq_len: usize,
        tau: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<SoftSequence>> {
        self.check_category(category)?;
        check_tau(tau)?;
        let mut out = Vec::with_capacity(n);
        let mut remaining = n;
        while remaining > 0 {
            let b = remaining.min(CHUNK);
            remaining -= b;
            let mut g = Graph::new();
            let gen = self.bind(&mut g, false);
            let roll = gen.rollout(&mut g, &vec![category; b], seq_len, tau, &mut NoiseSource::Rng(rng))?;
            out.extend(roll.to_sequences(&g, category, tau));
        }
        Ok(out)
    }

    /// Teacher-forced log-probabilities (nats), no noise and no temperature.
    pub fn log_probs(&self, sequences: &[&[usize]], categories: &[usize]) -> Result<Vec<f64>> {
        if sequences.len() != categories.len() {
            return Err(Error::Dimension {
                context: "log_probs categories",
                expected: sequences.len(),
                actual: categories.len(),
            });
        }
        for &c in categories {
            self.check_category(c)?;
        }
        for s in sequences {
            if let Some(&bad) = s.iter().find(|&&t| t >= self.config.vocab_size) {
                return Err(Error::TokenOutOfRange {
                    id: bad,
                    size: self.config.vocab_size,
                });
            }
        }
        let mut out = Vec::with_capacity(sequences.len());
        for (seqs, cats) in sequences.chunks(CHUNK).zip(categories.chunks(CHUNK)) {
            let mut g = Graph::new();
            let gen = self.bind(&mut g, false);
            let lp = gen.teacher_forced(&mut g, seqs, cats)?;
            out.extend(g.value(lp).iter().copied());
        }
        Ok(out)
    }

    pub fn sequence_log_prob(&self, sequence: &TokenSequence, category: usize) -> Result<f64> {
        Ok(self.log_probs(&[&sequence.ids], &[category])?[0])
    }

    pub fn write_into(&self, c: &mut Container, prefix: &str) {
        c.set_meta(&format!("{prefix}config"), &self.config);
        c.push_store(prefix, DType::F64, &self.store);
    }

    pub fn read_from(c: &Container, prefix: &str) -> Result<Self> {
        let config: GeneratorConfig = c
            .meta(&format!("{prefix}config"))
            .ok_or_else(|| Error::invalid(format!("container lacks `{prefix}config`")))?;
        let fresh = Self::new(config, 0)?;
        let store = c.store(prefix);
        check_same_layout(&fresh.store, &store, "generator")?;
        Ok(Self {
            config: fresh.config,
            store,
        })
    }
}

pub(crate) fn check_same_layout(expected: &ParamStore, got: &ParamStore, what: &str) -> Result<()> {
    let ok = expected.len() == got.len()
        && expected
            .iter()
            .zip(got.iter())
            .all(|((a, ma), (b, mb))| a == b && ma.dim() == mb.dim());
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} parameters do not match the configuration")))
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("temperature must be positive, got {tau}")))
    }
}

/// Memory of a batch: one `B x mem_dim` node per slot.
#[derive(Debug, Clone)]
pub struct MemoryState {
    pub slots: Vec<Var>,
}

/// Previous-step token for [`BoundGenerator::embed_input`].
#[derive(Debug, Clone, Copy)]
pub enum StepInput<'a> {
    Ids(&'a [usize]),
    /// `B x vocab_size` probability rows; embeds as the weighted mixture.
    Probs(Var),
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub memory: MemoryState,
    pub logits: Var,
    /// Proposed update per slot, before the gated combination.
    pub proposal: Vec<Var>,
    /// Attention weights, indexed `head * mem_slots + slot`, each
    /// `B x (mem_slots + 1)`.
    pub attention: Vec<Var>,
}

/// Source of Gumbel noise for a rollout.
pub enum NoiseSource<'a> {
    Rng(&'a mut ChaCha8Rng),
    /// Pre-drawn noise, one `B x vocab_size` matrix per step.
    Fixed(&'a [Matrix]),
}

impl NoiseSource<'_> {
    fn draw(&mut self, step: usize, rows: usize, cols: usize) -> Matrix {
        match self {
            NoiseSource::Rng(rng) => gumbel_noise(rows, cols, rng),
            NoiseSource::Fixed(m) => {
                let n = m[step].clone();
                assert_eq!(n.dim(), (rows, cols), "fixed noise shape");
                n
            }
        }
    }
}

/// Standard Gumbel draws `-ln(-ln U)`, `U ~ Uniform(0, 1)`.
pub fn gumbel_noise(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_shape_simple_fn((rows, cols), || {
        let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        -(-u.ln()).ln()
    })
}

/// Index of the first maximal entry.
pub fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in row.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// One Gumbel-Max draw with its relaxed row.
pub fn gumbel_sample(logits: &[f64], tau: f64, rng: &mut ChaCha8Rng) -> Result<(usize, Vec<f64>)> {
    check_tau(tau)?;
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            component: "gumbel_sample",
            step: 0,
        });
    }
    let noise = gumbel_noise(1, logits.len(), rng);
    Ok(gumbel_with_noise(logits, noise.as_slice().unwrap(), tau))
}

/// Gumbel-Max and relaxation for given noise.
pub fn gumbel_with_noise(logits: &[f64], noise: &[f64], tau: f64) -> (usize, Vec<f64>) {
    let perturbed: Vec<f64> = logits.iter().zip(noise).map(|(o, g)| o + g).collect();
    let hard = argmax(perturbed.iter().copied());
    let scaled = Matrix::from_shape_fn((1, perturbed.len()), |(_, j)| tau * perturbed[j]);
    (hard, softmax_rows(&scaled).into_raw_vec_and_offset().0)
}

/// A sampled sequence with its per-step relaxed rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftSequence {
    /// `T x vocab_size`, each row on the simplex.
    pub rows: Matrix,
    pub hard_ids: Vec<usize>,
    pub category: usize,
    pub tau: f64,
}

impl SoftSequence {
    pub fn tokens(&self) -> TokenSequence {
        TokenSequence::full(self.hard_ids.clone())
    }
}

/// Graph-level record of a batched rollout.
#[derive(Debug, Clone)]
pub struct Rollout {
    /// Relaxed rows per step, `B x vocab_size` each.
    pub soft: Vec<Var>,
    pub logits: Vec<Var>,
    /// Sampled ids, `hard[b][t]`.
    pub hard: Vec<Vec<usize>>,
}

impl Rollout {
    pub fn to_sequences(&self, g: &Graph, category: usize, tau: f64) -> Vec<SoftSequence> {
        let steps = self.soft.len();
        (0..self.hard.len())
            .map(|b| {
                let vocab = g.shape(self.soft[0]).1;
                let mut rows = Matrix::zeros((steps, vocab));
                for t in 0..steps {
                    rows.row_mut(t).assign(&g.value(self.soft[t]).row(b));
                }
                SoftSequence {
                    rows,
                    hard_ids: self.hard[b].clone(),
                    category,
                    tau,
                }
            })
            .collect()
    }
}

/// Generator parameters placed on a graph.
pub struct BoundGenerator<'a> {
    pub config: &'a GeneratorConfig,
    pub vars: BoundParams,
    mask: Option<Var>,
}

impl BoundGenerator<'_> {
    pub fn initial_memory(&self, g: &mut Graph, batch: usize) -> MemoryState {
        let slots = (0..self.config.mem_slots)
            .map(|s| {
                let row = self.vars.var(&format!("initial_memory.{s}"));
                g.repeat_rows(row, batch)
            })
            .collect();
        MemoryState { slots }
    }

    pub fn embed_input(&self, g: &mut Graph, input: StepInput<'_>, categories: &[usize]) -> Var {
        let table = self.vars.var("token_embedding");
        let tok = match input {
            StepInput::Ids(ids) => g.embed_rows(table, ids),
            StepInput::Probs(p) => g.matmul(p, table),
        };
        let cat = g.embed_rows(self.vars.var("category_embedding"), categories);
        let joined = g.concat_cols(&[tok, cat]);
        g.matmul(joined, self.vars.var("input_proj"))
    }

    pub fn rmc_step(&self, g: &mut Graph, memory: &MemoryState, x: Var) -> StepOutput {
        let c = self.config;
        let (heads, dk) = (c.num_heads, c.head_dim());
        let scale = 1.0 / (dk as f64).sqrt();
        let (wq, wk, wv) = (
            self.vars.var("w_query"),
            self.vars.var("w_key"),
            self.vars.var("w_value"),
        );

        let rows: Vec<Var> = memory.slots.iter().copied().chain([x]).collect();
        let queries: Vec<Var> = memory.slots.iter().map(|&s| g.matmul(s, wq)).collect();
        let keys: Vec<Var> = rows.iter().map(|&r| g.matmul(r, wk)).collect();
        let values: Vec<Var> = rows.iter().map(|&r| g.matmul(r, wv)).collect();

        let mut per_slot: Vec<Vec<Var>> = vec![Vec::with_capacity(heads); c.mem_slots];
        let mut attention = Vec::with_capacity(heads * c.mem_slots);
        for h in 0..heads {
            let (lo, hi) = (h * dk, (h + 1) * dk);
            let kh: Vec<Var> = keys.iter().map(|&k| g.slice_cols(k, lo, hi)).collect();
            let vh: Vec<Var> = values.iter().map(|&v| g.slice_cols(v, lo, hi)).collect();
            for (s, &q) in queries.iter().enumerate() {
                let qh = g.slice_cols(q, lo, hi);
                let scores: Vec<Var> = kh
                    .iter()
                    .map(|&k| {
                        let prod = g.mul(qh, k);
                        let dot = g.sum_cols(prod);
                        g.scale(dot, scale)
                    })
                    .collect();
                let scores = g.concat_cols(&scores);
                let weights = g.softmax_rows(scores);
                attention.push(weights);
                let mut acc: Option<Var> = None;
                for (j, &v) in vh.iter().enumerate() {
                    let w = g.slice_cols(weights, j, j + 1);
                    let term = g.mul(v, w);
                    acc = Some(match acc {
                        None => term,
                        Some(a) => g.add(a, term),
                    });
                }
                per_slot[s].push(acc.expect("at least one key row"));
            }
        }

        let d = c.mem_dim;
        let mut proposal = Vec::with_capacity(c.mem_slots);
        let mut next = Vec::with_capacity(c.mem_slots);
        for (s, heads_out) in per_slot.iter().enumerate() {
            let prev = memory.slots[s];
            let p = g.concat_cols(heads_out);
            proposal.push(p);

            let both = g.concat_cols(&[p, prev]);
            let h1 = g.matmul(both, self.vars.var("mlp_w1"));
            let h1 = g.add(h1, self.vars.var("mlp_b1"));
            let h1 = g.relu(h1);
            let h2 = g.matmul(h1, self.vars.var("mlp_w2"));
            let h2 = g.add(h2, self.vars.var("mlp_b2"));
            let candidate = g.add(p, h2);

            let squashed_prev = g.tanh(prev);
            let gate_in = g.concat_cols(&[p, squashed_prev]);
            let gates = g.matmul(gate_in, self.vars.var("gate_w"));
            let gates = g.add(gates, self.vars.var("gate_b"));
            let gates = g.sigmoid(gates);
            let input_gate = g.slice_cols(gates, 0, d);
            let forget_gate = g.slice_cols(gates, d, 2 * d);

            let cand = g.tanh(candidate);
            let written = g.mul(input_gate, cand);
            let kept = g.mul(forget_gate, prev);
            next.push(g.add(written, kept));
        }

        let flat = if next.len() == 1 {
            next[0]
        } else {
            g.concat_cols(&next)
        };
        let logits = g.matmul(flat, self.vars.var("output_w"));
        let mut logits = g.add(logits, self.vars.var("output_b"));
        if let Some(mask) = self.mask {
            logits = g.add(logits, mask);
        }
        StepOutput {
            memory: MemoryState { slots: next },
            logits,
            proposal,
            attention,
        }
    }

    /// Ancestral rollout from the start token.
    pub fn rollout(
        &self,
        g: &mut Graph,
        categories: &[usize],
        seq_len: usize,
        tau: f64,
        noise: &mut NoiseSource<'_>,
    ) -> Result<Rollout> {
        check_tau(tau)?;
        let batch = categories.len();
        let vocab = self.config.vocab_size;
        let mut memory = self.initial_memory(g, batch);
        let start = vec![self.config.start_id; batch];
        let mut prev_ids = start.clone();
        let mut prev_soft: Option<Var> = None;
        let mut hard = vec![Vec::with_capacity(seq_len); batch];
        let mut soft = Vec::with_capacity(seq_len);
        let mut logits_out = Vec::with_capacity(seq_len);

        for t in 0..seq_len {
            let input = match (self.config.soft_feedback, prev_soft) {
                (true, Some(p)) => StepInput::Probs(p),
                _ => StepInput::Ids(&prev_ids),
            };
            let x = self.embed_input(g, input, categories);
            let out = self.rmc_step(g, &memory, x);
            memory = out.memory;
            if g.value(out.logits).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    component: "generator",
                    step: t,
                });
            }
            let noise_t = g.constant(noise.draw(t, batch, vocab));
            let perturbed = g.add(out.logits, noise_t);
            for (b, row) in g.value(perturbed).rows().into_iter().enumerate() {
                let id = argmax(row.iter().copied());
                hard[b].push(id);
                prev_ids[b] = id;
            }
            let scaled = g.scale(perturbed, tau);
            let relaxed = g.softmax_rows(scaled);
            soft.push(relaxed);
            logits_out.push(out.logits);
            prev_soft = Some(relaxed);
        }
        Ok(Rollout {
            soft,
            logits: logits_out,
            hard,
        })
    }

    /// Per-sequence teacher-forced log-probability, a `B x 1` node.
    pub fn teacher_forced(&self, g: &mut Graph, sequences: &[&[usize]], categories: &[usize]) -> Result<Var> {
        let batch = sequences.len();
        let len = sequences.first().map_or(0, |s| s.len());
        if let Some(bad) = sequences.iter().find(|s| s.len() != len) {
            return Err(Error::Dimension {
                context: "teacher forcing length",
                expected: len,
                actual: bad.len(),
            });
        }
        let mut memory = self.initial_memory(g, batch);
        let mut inputs = vec![self.config.start_id; batch];
        let mut total: Option<Var> = None;
        let mut targets = vec![0; batch];
        for t in 0..len {
            let x = self.embed_input(g, StepInput::Ids(&inputs), categories);
            let out = self.rmc_step(g, &memory, x);
            memory = out.memory;
            if g.value(out.logits).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    component: "generator",
                    step: t,
                });
            }
            let logp = g.log_softmax_rows(out.logits);
            for (b, s) in sequences.iter().enumerate() {
                targets[b] = s[t];
            }
            let picked = g.pick_per_row(logp, &targets);
            total = Some(match total {
                None => picked,
                Some(acc) => g.add(acc, picked),
            });
            inputs.copy_from_slice(&targets);
        }
        Ok(total.unwrap_or_else(|| g.constant(Matrix::zeros((batch, 1)))))
    }
}
