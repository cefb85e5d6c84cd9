//! Building blocks of evolutionary adversarial training: MLE pretraining,
//! the temperature schedule, variation of children along the
//! temperature x objective grid, fitness evaluation, hierarchical
//! selection, and discriminator updates.

use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Matrix, Var};
use crate::corpus::{batch_iter, LabeledDataset, TokenSequence};
use crate::discriminator::{one_hot_steps, BoundDiscriminator, DiscriminatorParams};
use crate::error::{Error, Result};
use crate::generator::{BoundGenerator, GeneratorParams, NoiseSource, SoftSequence};
use crate::objectives::{
    graph_d_loss_catra, graph_g_loss_catra, graph_g_loss_catrs, relativistic_score, GraphPair, LogitBatchPair,
    Side,
};
use crate::params::{derive_seed, grads_finite, rng_for, Adam};

/// Generator objective used by a child.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    CatRS,
    CatRa,
}

impl Objective {
    pub const ALL: [Objective; 2] = [Objective::CatRS, Objective::CatRa];
}

/// One cell of the temperature-offset x objective grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MutationDirection {
    pub temp_offset: i32,
    pub objective: Objective,
}

impl MutationDirection {
    pub const OFFSETS: [i32; 3] = [-1, 0, 1];

    /// The full grid in a fixed order (offset-major).
    pub fn grid() -> Vec<MutationDirection> {
        Self::OFFSETS
            .iter()
            .flat_map(|&temp_offset| Objective::ALL.map(|objective| MutationDirection { temp_offset, objective }))
            .collect()
    }

    /// Stable position in [`MutationDirection::grid`].
    pub fn grid_index(&self) -> usize {
        let o = (self.temp_offset + 1) as usize;
        let j = Objective::ALL.iter().position(|&x| x == self.objective).unwrap();
        o * Objective::ALL.len() + j
    }
}

/// Which directions a round explores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Single child with offset 0 and CatRa, no selection.
    pub no_h: bool,
    /// Temperature offset fixed to 0.
    pub no_t: bool,
    /// Objective fixed to CatRa.
    pub no_o: bool,
}

impl Ablation {
    pub fn directions(&self) -> Vec<MutationDirection> {
        if self.no_h {
            return vec![MutationDirection {
                temp_offset: 0,
                objective: Objective::CatRa,
            }];
        }
        MutationDirection::grid()
            .into_iter()
            .filter(|d| !self.no_t || d.temp_offset == 0)
            .filter(|d| !self.no_o || d.objective == Objective::CatRa)
            .collect()
    }
}

/// Exponential schedule `f(n) = tau_tar^(n / N)` clamped to `[0, N]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    pub tau_tar: f64,
    pub total: usize,
    pub n: i64,
}

impl TemperatureSchedule {
    pub fn new(tau_tar: f64, total: usize) -> Result<Self> {
        if !(tau_tar >= 1.0) || !tau_tar.is_finite() {
            return Err(Error::Config(format!("tau_tar must be a finite value >= 1, got {tau_tar}")));
        }
        if total == 0 {
            return Err(Error::Config("the number of adversarial rounds must be >= 1".into()));
        }
        Ok(Self { tau_tar, total, n: 0 })
    }

    pub fn at(&self, n: i64) -> Self {
        Self { n, ..*self }
    }

    /// `f` evaluated at an arbitrary (clamped) position.
    pub fn value(&self, position: i64) -> f64 {
        let p = position.clamp(0, self.total as i64);
        if p == 0 {
            1.0
        } else if p == self.total as i64 {
            self.tau_tar
        } else {
            self.tau_tar.powf(p as f64 / self.total as f64)
        }
    }
}

/// Candidate temperature `f(n + offset)`.
pub fn schedule_tau(s: &TemperatureSchedule, offset: i32) -> f64 {
    s.value(s.n + i64::from(offset))
}

/// A generator lineage member with its optimizer state and fitness.
#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub params: GeneratorParams,
    pub optimizer: Adam,
    pub direction: MutationDirection,
    pub tau: f64,
    pub f_temp: Option<f64>,
    pub f_obj: Option<f64>,
    pub valid: bool,
}

impl Individual {
    pub fn new(params: GeneratorParams, optimizer: Adam) -> Self {
        Self {
            params,
            optimizer,
            direction: MutationDirection {
                temp_offset: 0,
                objective: Objective::CatRa,
            },
            tau: 1.0,
            f_temp: None,
            f_obj: None,
            valid: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

fn check_finite_loss(loss: f64, component: &'static str, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { component, step })
    }
}

/// One teacher-forced step; returns the batch loss (mean NLL per sequence).
pub fn mle_step(gen: &mut GeneratorParams, opt: &mut Adam, sequences: &[TokenSequence], labels: &[usize]) -> Result<f64> {
    let refs: Vec<&[usize]> = sequences.iter().map(|s| s.ids.as_slice()).collect();
    let mut g = Graph::new();
    let bound = gen.bind(&mut g, true);
    let lp = bound.teacher_forced(&mut g, &refs, labels)?;
    let m = g.mean(lp);
    let loss = g.neg(m);
    let value = g.scalar_value(loss);
    check_finite_loss(value, "generator pretraining", opt.step as usize)?;
    let mut grads = g.backward(loss);
    let grads = bound.vars.gradients(&mut grads);
    if !grads_finite(&grads) {
        return Err(Error::NonFinite {
            component: "generator pretraining gradient",
            step: opt.step as usize,
        });
    }
    opt.update(&mut gen.store, &grads);
    Ok(value)
}

/// Runs epochs `start..cfg.epochs`, calling `on_epoch(epoch, mean_loss, gen, opt)`
/// after each. Batches of an epoch depend only on the seed and epoch index.
pub fn mle_pretrain_with(
    gen: &mut GeneratorParams,
    opt: &mut Adam,
    data: &LabeledDataset,
    cfg: &PretrainConfig,
    start: usize,
    mut on_epoch: impl FnMut(usize, f64, &GeneratorParams, &Adam) -> Result<()>,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let batch = cfg.batch_size.min(data.len());
    let mut losses = Vec::new();
    for epoch in start..cfg.epochs {
        let mut it = batch_iter(data, batch, false, derive_seed(cfg.seed, &[0x9e, epoch as u64]))?;
        let n = it.batches_per_epoch();
        let mut total = 0.0;
        for _ in 0..n {
            let b = it.next().expect("batch stream is endless");
            total += mle_step(gen, opt, &b.sequences, &b.labels)?;
        }
        let mean = total / n as f64;
        losses.push(mean);
        on_epoch(epoch, mean, gen, opt)?;
    }
    Ok(losses)
}

/// Trains a copy of `gen` with MLE and returns it with its per-epoch losses.
pub fn mle_pretrain(
    gen: &GeneratorParams,
    data: &LabeledDataset,
    cfg: &PretrainConfig,
) -> Result<(GeneratorParams, Vec<f64>)> {
    let mut out = gen.clone();
    let mut opt = Adam::new(&out.store, cfg.lr);
    let losses = mle_pretrain_with(&mut out, &mut opt, data, cfg, 0, |_, _, _, _| Ok(()))?;
    Ok((out, losses))
}

/// Draws `per_category` real sequences of every category, without
/// replacement when the pool is large enough.
pub fn draw_real(data: &LabeledDataset, per_category: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<TokenSequence>>> {
    (0..data.num_categories)
        .map(|c| {
            let pool = data.category_indices(c);
            if pool.is_empty() {
                return Err(Error::invalid(format!("category {c} has no training sequences")));
            }
            Ok(pick(&pool, per_category, rng)
                .into_iter()
                .map(|i| data.sequences[i].clone())
                .collect())
        })
        .collect()
}

/// Draws `n` sequences from the pooled data.
pub fn draw_pooled(data: &LabeledDataset, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<TokenSequence>> {
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let all: Vec<usize> = (0..data.len()).collect();
    Ok(pick(&all, n, rng).into_iter().map(|i| data.sequences[i].clone()).collect())
}

fn pick(pool: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::Rng;
    if n <= pool.len() {
        index::sample(rng, pool.len(), n).into_iter().map(|i| pool[i]).collect()
    } else {
        (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect()
    }
}

fn column(v: &[f64]) -> Matrix {
    Matrix::from_shape_vec((v.len(), 1), v.to_vec()).expect("column")
}

/// Generator loss for one category-grouped fake batch. `real_logits[c]`
/// holds the discriminator's logits on the real batch of category `c`; one
/// fake is generated per real, so CatRS pairs are index-aligned.
#[allow(clippy::too_many_arguments)]
pub fn generator_loss_graph(
    g: &mut Graph,
    gen: &BoundGenerator<'_>,
    disc: &BoundDiscriminator<'_>,
    real_logits: &[Vec<f64>],
    seq_len: usize,
    objective: Objective,
    tau: f64,
    noise: &mut NoiseSource<'_>,
) -> Result<Var> {
    if real_logits.len() != gen.config.num_categories {
        return Err(Error::Dimension {
            context: "real logits per category",
            expected: gen.config.num_categories,
            actual: real_logits.len(),
        });
    }
    if real_logits.iter().any(Vec::is_empty) {
        return Err(Error::invalid("every category needs at least one real logit"));
    }
    let categories: Vec<usize> = real_logits
        .iter()
        .enumerate()
        .flat_map(|(c, r)| std::iter::repeat_n(c, r.len()))
        .collect();
    let roll = gen.rollout(g, &categories, seq_len, tau, noise)?;
    let fake = disc.forward(g, &roll.soft)?;
    let total = categories.len();
    let mut pairs = Vec::with_capacity(real_logits.len());
    let mut offset = 0;
    for r in real_logits {
        // Row selection as a constant matrix product keeps gradients flowing.
        let sel = Matrix::from_shape_fn((r.len(), total), |(i, j)| f64::from(j == offset + i));
        let sel = g.constant(sel);
        let fake_c = g.matmul(sel, fake);
        let real_c = g.constant(column(r));
        pairs.push(GraphPair { real: real_c, fake: fake_c });
        offset += r.len();
    }
    let all_real: Vec<f64> = real_logits.concat();
    let all = GraphPair {
        real: g.constant(column(&all_real)),
        fake,
    };
    Ok(match objective {
        Objective::CatRa => graph_g_loss_catra(g, &pairs, all),
        Objective::CatRS => graph_g_loss_catrs(g, &pairs, all),
    })
}

/// Real-batch discriminator logits, grouped by category.
pub fn real_logits(disc: &DiscriminatorParams, real: &[Vec<TokenSequence>]) -> Result<Vec<Vec<f64>>> {
    real.iter().map(|batch| disc.discriminate_tokens(batch)).collect()
}

/// Copies `parent` and takes `real_logits.len()` optimizer steps on the
/// direction's objective at temperature `tau`, with the discriminator frozen.
/// A non-finite loss or gradient marks the child invalid.
#[allow(clippy::too_many_arguments)]
pub fn vary(
    parent: &Individual,
    direction: MutationDirection,
    tau: f64,
    real_logits: &[Vec<Vec<f64>>],
    disc: &DiscriminatorParams,
    seq_len: usize,
    lr: f64,
    noise_seed: u64,
) -> Result<Individual> {
    let mut child = Individual {
        params: parent.params.clone(),
        optimizer: parent.optimizer.clone(),
        direction,
        tau,
        f_temp: None,
        f_obj: None,
        valid: true,
    };
    child.optimizer.lr = lr;
    for (step, logits) in real_logits.iter().enumerate() {
        let mut rng = rng_for(noise_seed, &[step as u64]);
        let mut g = Graph::new();
        let gen = child.params.bind(&mut g, true);
        let d = disc.bind(&mut g, false);
        let loss = match generator_loss_graph(
            &mut g,
            &gen,
            &d,
            logits,
            seq_len,
            direction.objective,
            tau,
            &mut NoiseSource::Rng(&mut rng),
        ) {
            Ok(l) => l,
            Err(Error::NonFinite { .. }) => {
                child.valid = false;
                break;
            }
            Err(e) => return Err(e),
        };
        if !g.scalar_value(loss).is_finite() {
            child.valid = false;
            break;
        }
        let mut grads = g.backward(loss);
        let grads = gen.vars.gradients(&mut grads);
        if !grads_finite(&grads) {
            child.valid = false;
            break;
        }
        child.optimizer.update(&mut child.params.store, &grads);
    }
    if child.valid && !child.params.store.all_finite() {
        child.valid = false;
    }
    Ok(child)
}

/// mean σ(fake_i − mean real).
pub fn f_temp_from_logits(real: &[f64], fake: &[f64]) -> Result<f64> {
    let pair = LogitBatchPair::new(real.to_vec(), fake.to_vec(), None)?;
    let s = relativistic_score(&pair, Side::Fake)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

/// Generated samples and their relativistic scores, reusable for both
/// fitness stages.
#[derive(Debug, Clone)]
pub struct FitnessProbe {
    pub f_temp: f64,
    pub samples: Vec<SoftSequence>,
}

/// Sample counts per category for `eval_n` samples split as evenly as
/// possible (earlier categories take the remainder).
pub fn split_counts(eval_n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|c| eval_n / k + usize::from(c < eval_n % k)).collect()
}

impl FitnessProbe {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        gen: &GeneratorParams,
        disc: &DiscriminatorParams,
        real_logits: &[f64],
        eval_n: usize,
        seq_len: usize,
        tau: f64,
        seed: u64,
    ) -> Result<Self> {
        if eval_n == 0 {
            return Err(Error::invalid("eval_n must be >= 1"));
        }
        if real_logits.is_empty() {
            return Err(Error::invalid("fitness needs a non-empty real batch"));
        }
        let k = gen.config.num_categories;
        let mut samples = Vec::with_capacity(eval_n);
        for (c, n) in split_counts(eval_n, k).into_iter().enumerate() {
            if n > 0 {
                let mut rng = rng_for(seed, &[c as u64]);
                samples.extend(gen.generate(c, n, seq_len, tau, &mut rng)?);
            }
        }
        let fake = disc.discriminate(&samples)?;
        let f_temp = f_temp_from_logits(real_logits, &fake)?;
        Ok(Self { f_temp, samples })
    }

    /// Self-scored NLL of the probe's hard samples.
    pub fn nll_div(&self, gen: &GeneratorParams) -> Result<f64> {
        let refs: Vec<&[usize]> = self.samples.iter().map(|s| s.hard_ids.as_slice()).collect();
        let cats: Vec<usize> = self.samples.iter().map(|s| s.category).collect();
        let lp = gen.log_probs(&refs, &cats)?;
        Ok(-lp.iter().sum::<f64>() / lp.len() as f64)
    }

    pub fn f_obj(&self, gen: &GeneratorParams, lambda: f64) -> Result<f64> {
        if !(lambda >= 0.0) {
            return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
        }
        if lambda == 0.0 {
            return Ok(self.f_temp);
        }
        Ok(self.f_temp + lambda * self.nll_div(gen)?)
    }
}

/// Quality fitness: mean relativistic score of `eval_n` generated samples.
#[allow(clippy::too_many_arguments)]
pub fn eval_f_temp(
    gen: &GeneratorParams,
    disc: &DiscriminatorParams,
    real_logits: &[f64],
    eval_n: usize,
    seq_len: usize,
    tau: f64,
    seed: u64,
) -> Result<f64> {
    Ok(FitnessProbe::new(gen, disc, real_logits, eval_n, seq_len, tau, seed)?.f_temp)
}

/// Quality-plus-diversity fitness on the same samples as [`eval_f_temp`].
#[allow(clippy::too_many_arguments)]
pub fn eval_f_obj(
    gen: &GeneratorParams,
    disc: &DiscriminatorParams,
    real_logits: &[f64],
    eval_n: usize,
    seq_len: usize,
    tau: f64,
    lambda: f64,
    seed: u64,
) -> Result<f64> {
    FitnessProbe::new(gen, disc, real_logits, eval_n, seq_len, tau, seed)?.f_obj(gen, lambda)
}

/// Indices of the surviving children of both selection stages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    /// One winner per objective that has a valid child, in objective order.
    pub stage_temp: Vec<usize>,
    pub survivor: usize,
}

/// Best valid child per objective by `f_temp`; ties go to the lowest offset.
pub fn select_stage_temp(children: &[Individual]) -> Vec<usize> {
    let mut winners = Vec::new();
    for objective in Objective::ALL {
        let mut best: Option<usize> = None;
        for (i, c) in children.iter().enumerate() {
            if !c.valid || c.direction.objective != objective {
                continue;
            }
            let Some(f) = c.f_temp else { continue };
            best = match best {
                None => Some(i),
                Some(b) => {
                    let (bf, bo) = (children[b].f_temp.unwrap(), children[b].direction.temp_offset);
                    if f > bf || (f == bf && c.direction.temp_offset < bo) {
                        Some(i)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        winners.extend(best);
    }
    winners
}

/// Best of the stage winners by `f_obj`; ties go to CatRa.
pub fn select_stage_obj(children: &[Individual], winners: &[usize]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &i in winners {
        let f = children[i]
            .f_obj
            .ok_or_else(|| Error::invalid(format!("stage winner {i} has no f_obj")))?;
        let better = match best {
            None => true,
            Some((b, bf)) => {
                f > bf || (f == bf && children[i].direction.objective == Objective::CatRa && children[b].direction.objective != Objective::CatRa)
            }
        };
        if better {
            best = Some((i, f));
        }
    }
    best.map(|(i, _)| i).ok_or_else(|| Error::invalid("no stage winners"))
}

/// Two-stage selection over children whose stage winners carry `f_obj`.
pub fn select_hierarchical(children: &[Individual], round: usize) -> Result<Selection> {
    let stage_temp = select_stage_temp(children);
    if stage_temp.is_empty() {
        return Err(Error::NoValidChild { round });
    }
    let survivor = select_stage_obj(children, &stage_temp)?;
    Ok(Selection { stage_temp, survivor })
}

/// One discriminator step on the category-wise relativistic loss. `real[c]`
/// and `fake[c]` are the batches of category `c`. Returns the loss before
/// the update.
pub fn discriminator_step(
    disc: &mut DiscriminatorParams,
    opt: &mut Adam,
    real: &[Vec<TokenSequence>],
    fake: &[Vec<SoftSequence>],
    round: usize,
) -> Result<f64> {
    if real.len() != fake.len() {
        return Err(Error::Dimension {
            context: "discriminator categories",
            expected: real.len(),
            actual: fake.len(),
        });
    }
    let vocab = disc.config.vocab_size;
    let mut g = Graph::new();
    let d = disc.bind(&mut g, true);
    let mut pairs = Vec::with_capacity(real.len());
    for (r, f) in real.iter().zip(fake) {
        if r.is_empty() || f.is_empty() {
            return Err(Error::invalid("discriminator batches must be non-empty"));
        }
        let ids: Vec<&[usize]> = r.iter().map(|s| s.ids.as_slice()).collect();
        let rows: Vec<Var> = one_hot_steps(&ids, vocab)?.into_iter().map(|m| g.constant(m)).collect();
        let real_logits = d.forward(&mut g, &rows)?;
        let steps = f[0].rows.nrows();
        let rows: Vec<Var> = (0..steps)
            .map(|t| {
                let m = Matrix::from_shape_fn((f.len(), vocab), |(b, j)| f[b].rows[[t, j]]);
                g.constant(m)
            })
            .collect();
        let fake_logits = d.forward(&mut g, &rows)?;
        pairs.push(GraphPair {
            real: real_logits,
            fake: fake_logits,
        });
    }
    let reals: Vec<Var> = pairs.iter().map(|p| p.real).collect();
    let fakes: Vec<Var> = pairs.iter().map(|p| p.fake).collect();
    let all = GraphPair {
        real: g.concat_rows(&reals),
        fake: g.concat_rows(&fakes),
    };
    let loss = graph_d_loss_catra(&mut g, &pairs, all);
    let value = g.scalar_value(loss);
    check_finite_loss(value, "discriminator", round)?;
    let mut grads = g.backward(loss);
    let grads = d.vars.gradients(&mut grads);
    if !grads_finite(&grads) {
        return Err(Error::NonFinite {
            component: "discriminator gradient",
            step: round,
        });
    }
    opt.update(&mut disc.store, &grads);
    Ok(value)
}
