//! The adversarial training loop: one surviving generator lineage, six
//! (or fewer, under ablation) children per round, two-stage selection,
//! then discriminator updates against the survivor.
//!
//! Every random draw is seeded from `(seed, purpose, round, ...)`, so a run
//! resumed from a checkpoint replays exactly the rounds it would have run.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Container, DType};
use crate::config::{ExperimentConfig, Mode};
use crate::corpus::LabeledDataset;
use crate::discriminator::DiscriminatorParams;
use crate::error::{Error, Result};
use crate::evolution::{
    discriminator_step, draw_pooled, draw_real, real_logits, schedule_tau, select_stage_obj, select_stage_temp,
    vary, Ablation, FitnessProbe, Individual, Objective, TemperatureSchedule,
};
use crate::generator::{GeneratorParams, SoftSequence};
use crate::metrics::{EvalSuite, MetricsReport};
use crate::oracle::OracleModel;
use crate::params::{derive_seed, rng_for, Adam};

const TAG_REAL: u64 = 0x11;
const TAG_NOISE: u64 = 0x12;
const TAG_FIT_REAL: u64 = 0x13;
const TAG_FIT: u64 = 0x14;
const TAG_D_REAL: u64 = 0x15;
const TAG_D_FAKE: u64 = 0x16;
const TAG_EVAL: u64 = 0x17;
const TAG_WARMUP: u64 = 0x18;

const STATE_KIND: &str = "trainer";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialConfig {
    pub seq_len: usize,
    pub rounds: usize,
    pub tau_tar: f64,
    pub lambda: f64,
    pub gen_steps: usize,
    pub d_steps: usize,
    pub eval_n: usize,
    /// Real (and fake) sequences per category in every training batch.
    pub batch_size: usize,
    pub gen_lr: f64,
    pub dis_lr: f64,
    pub seed: u64,
    pub ablation: Ablation,
    pub persistent_tms: bool,
    pub log_every: usize,
    pub metric_samples: usize,
    pub bleu_orders: Vec<usize>,
}

impl From<&ExperimentConfig> for AdversarialConfig {
    fn from(c: &ExperimentConfig) -> Self {
        Self {
            seq_len: c.seq_len,
            rounds: c.rounds,
            tau_tar: c.tau_tar,
            lambda: c.lambda,
            gen_steps: c.gen_steps,
            d_steps: c.d_steps,
            eval_n: c.eval_n,
            batch_size: c.batch_size,
            gen_lr: c.gen_lr,
            dis_lr: c.dis_lr,
            seed: c.seed,
            ablation: c.ablation(),
            persistent_tms: c.persistent_tms,
            log_every: c.log_every,
            metric_samples: c.metric_samples,
            bleu_orders: if c.mode == Mode::Real { c.bleu_orders.clone() } else { Vec::new() },
        }
    }
}

/// Everything needed to continue training after `round` completed rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub round: usize,
    /// Accumulated temperature offsets (always 0 without persistent TMS).
    pub tms_shift: i64,
    pub gen: GeneratorParams,
    pub gen_opt: Adam,
    pub disc: DiscriminatorParams,
    pub disc_opt: Adam,
}

pub(crate) fn push_adam(c: &mut Container, prefix: &str, opt: &Adam) {
    c.set_meta(&format!("{prefix}adam"), [opt.lr, opt.beta1, opt.beta2, opt.eps]);
    c.set_meta(&format!("{prefix}adam_step"), opt.step);
    for (i, (m, v)) in opt.first.iter().zip(&opt.second).enumerate() {
        c.push(format!("{prefix}m.{i:04}"), DType::F64, m.clone());
        c.push(format!("{prefix}v.{i:04}"), DType::F64, v.clone());
    }
}

pub(crate) fn read_adam(c: &Container, prefix: &str, n: usize, path: &Path) -> Result<Adam> {
    let bad = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let [lr, beta1, beta2, eps]: [f64; 4] = c
        .meta(&format!("{prefix}adam"))
        .ok_or_else(|| bad(format!("missing `{prefix}adam`")))?;
    let step: u64 = c
        .meta(&format!("{prefix}adam_step"))
        .ok_or_else(|| bad(format!("missing `{prefix}adam_step`")))?;
    let mut first = Vec::with_capacity(n);
    let mut second = Vec::with_capacity(n);
    for i in 0..n {
        let get = |k: &str| {
            c.get(&format!("{prefix}{k}.{i:04}"))
                .cloned()
                .ok_or_else(|| bad(format!("missing optimizer moment {prefix}{k}.{i:04}")))
        };
        first.push(get("m")?);
        second.push(get("v")?);
    }
    Ok(Adam {
        lr,
        beta1,
        beta2,
        eps,
        step,
        first,
        second,
    })
}

impl TrainerState {
    pub fn new(gen: GeneratorParams, gen_lr: f64, disc: DiscriminatorParams, dis_lr: f64) -> Self {
        let gen_opt = Adam::new(&gen.store, gen_lr);
        let disc_opt = Adam::new(&disc.store, dis_lr);
        Self {
            round: 0,
            tms_shift: 0,
            gen,
            gen_opt,
            disc,
            disc_opt,
        }
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(STATE_KIND);
        c.set_meta("round", self.round);
        c.set_meta("tms_shift", self.tms_shift);
        self.gen.write_into(&mut c, "gen.");
        self.disc.write_into(&mut c, "disc.");
        push_adam(&mut c, "gen_opt.", &self.gen_opt);
        push_adam(&mut c, "disc_opt.", &self.disc_opt);
        c
    }

    pub fn from_container(c: &Container, path: &Path) -> Result<Self> {
        c.expect_kind(STATE_KIND, path)?;
        let round = c.meta("round").ok_or_else(|| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: "missing round".into(),
        })?;
        let tms_shift = c.meta("tms_shift").unwrap_or(0);
        let gen = GeneratorParams::read_from(c, "gen.")?;
        let disc = DiscriminatorParams::read_from(c, "disc.")?;
        let gen_opt = read_adam(c, "gen_opt.", gen.store.len(), path)?;
        let disc_opt = read_adam(c, "disc_opt.", disc.store.len(), path)?;
        Ok(Self {
            round,
            tms_shift,
            gen,
            gen_opt,
            disc,
            disc_opt,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?, path)
    }
}

/// Data sources for training and evaluation.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a LabeledDataset,
    /// Synthetic mode only.
    pub oracle: Option<&'a OracleModel>,
    pub test: Option<&'a LabeledDataset>,
    /// Padding id used to cut sequences for BLEU.
    pub pad_id: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildRecord {
    pub objective: Objective,
    pub temp_offset: i32,
    pub tau: f64,
    pub f_temp: Option<f64>,
    pub f_obj: Option<f64>,
    pub valid: bool,
}

/// One line of the training metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub phase: String,
    pub round: usize,
    /// Temperature of the surviving child.
    pub tau: f64,
    /// Schedule value at the round's position.
    pub schedule_tau: f64,
    pub objective_chosen: Objective,
    pub temp_offset_chosen: i32,
    pub f_temp: f64,
    pub f_obj: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub nll_oracle: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub nll_gen: Option<f64>,
    pub nll_div: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bleu: Option<BTreeMap<String, f64>>,
    /// Mean discriminator loss over the round's updates.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub d_loss: Option<f64>,
    pub children: Vec<ChildRecord>,
    /// Indices into `children` that won the temperature stage.
    pub stage_temp_survivors: Vec<usize>,
    pub survivor: usize,
}

/// What a single round did, before metrics are attached.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundSummary {
    pub round: usize,
    pub schedule_tau: f64,
    pub children: Vec<ChildRecord>,
    pub stage_temp: Vec<usize>,
    pub survivor: usize,
    pub d_loss: Option<f64>,
}

/// Full metric suite on `gen`, with samples drawn from a fixed evaluation
/// seed so successive evaluations share random numbers.
pub fn evaluate(
    gen: &GeneratorParams,
    data: &TrainData<'_>,
    cfg: &AdversarialConfig,
    meta: BTreeMap<String, serde_json::Value>,
) -> Result<MetricsReport> {
    EvalSuite {
        gen,
        oracle: data.oracle,
        test: data.test,
        samples_per_category: cfg.metric_samples,
        seq_len: cfg.seq_len,
        seed: derive_seed(cfg.seed, &[TAG_EVAL]),
        bleu_orders: cfg.bleu_orders.clone(),
        pad_id: data.pad_id,
    }
    .run(meta)
}

fn survivor_fakes(
    gen: &GeneratorParams,
    per_category: usize,
    seq_len: usize,
    tau: f64,
    seed: u64,
) -> Result<Vec<Vec<SoftSequence>>> {
    (0..gen.config.num_categories)
        .map(|c| gen.generate(c, per_category, seq_len, tau, &mut rng_for(seed, &[c as u64])))
        .collect()
}

/// Discriminator steps against the current generator before round 1.
pub fn warmup_discriminator(
    cfg: &AdversarialConfig,
    data: &TrainData<'_>,
    state: &mut TrainerState,
    steps: usize,
) -> Result<Vec<f64>> {
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let real = draw_real(data.train, cfg.batch_size, &mut rng_for(cfg.seed, &[TAG_WARMUP, step as u64, 0]))?;
        let fake = survivor_fakes(
            &state.gen,
            cfg.batch_size,
            cfg.seq_len,
            1.0,
            derive_seed(cfg.seed, &[TAG_WARMUP, step as u64, 1]),
        )?;
        losses.push(discriminator_step(&mut state.disc, &mut state.disc_opt, &real, &fake, 0)?);
    }
    Ok(losses)
}

/// Runs round `state.round + 1` in place.
pub fn run_round(cfg: &AdversarialConfig, data: &TrainData<'_>, state: &mut TrainerState) -> Result<RoundSummary> {
    let n = state.round + 1;
    let round_tag = n as u64;
    let schedule = TemperatureSchedule::new(cfg.tau_tar, cfg.rounds)?.at(n as i64 + state.tms_shift);
    let schedule_value = schedule_tau(&schedule, 0);

    // Variation: every child sees the same real batches.
    let mut logits = Vec::with_capacity(cfg.gen_steps);
    for step in 0..cfg.gen_steps {
        let real = draw_real(data.train, cfg.batch_size, &mut rng_for(cfg.seed, &[TAG_REAL, round_tag, step as u64]))?;
        logits.push(real_logits(&state.disc, &real)?);
    }
    let parent = Individual::new(state.gen.clone(), state.gen_opt.clone());
    let mut children = Vec::new();
    for d in cfg.ablation.directions() {
        let tau = schedule_tau(&schedule, d.temp_offset);
        let noise = derive_seed(cfg.seed, &[TAG_NOISE, round_tag, d.grid_index() as u64]);
        children.push(vary(&parent, d, tau, &logits, &state.disc, cfg.seq_len, cfg.gen_lr, noise)?);
    }

    // Evaluation on a pooled real batch shared by all children.
    let pooled = draw_pooled(data.train, cfg.eval_n, &mut rng_for(cfg.seed, &[TAG_FIT_REAL, round_tag]))?;
    let pooled_logits = state.disc.discriminate_tokens(&pooled)?;
    let fit_seed = derive_seed(cfg.seed, &[TAG_FIT, round_tag]);
    let mut probes = Vec::with_capacity(children.len());
    for child in &mut children {
        if !child.valid {
            probes.push(None);
            continue;
        }
        let probe = FitnessProbe::new(&child.params, &state.disc, &pooled_logits, cfg.eval_n, cfg.seq_len, child.tau, fit_seed)?;
        if probe.f_temp.is_finite() {
            child.f_temp = Some(probe.f_temp);
        } else {
            child.valid = false;
        }
        probes.push(Some(probe));
    }

    let stage_temp = if cfg.ablation.no_h {
        if children[0].valid { vec![0] } else { Vec::new() }
    } else {
        select_stage_temp(&children)
    };
    if stage_temp.is_empty() {
        return Err(Error::NoValidChild { round: n });
    }
    for &i in &stage_temp {
        let probe = probes[i].as_ref().expect("valid children carry a probe");
        let f = probe.f_obj(&children[i].params, cfg.lambda)?;
        children[i].f_obj = Some(f);
    }
    let survivor = if cfg.ablation.no_h {
        0
    } else {
        select_stage_obj(&children, &stage_temp)?
    };

    let records: Vec<ChildRecord> = children
        .iter()
        .map(|c| ChildRecord {
            objective: c.direction.objective,
            temp_offset: c.direction.temp_offset,
            tau: c.tau,
            f_temp: c.f_temp,
            f_obj: c.f_obj,
            valid: c.valid,
        })
        .collect();
    let winner = children.swap_remove(survivor);
    if cfg.persistent_tms {
        state.tms_shift += i64::from(winner.direction.temp_offset);
    }
    state.gen = winner.params;
    state.gen_opt = winner.optimizer;

    // The survivor becomes the environment's opponent.
    let d_tau = schedule.value(n as i64 + state.tms_shift);
    let mut d_total = 0.0;
    for step in 0..cfg.d_steps {
        let s = step as u64;
        let real = draw_real(data.train, cfg.batch_size, &mut rng_for(cfg.seed, &[TAG_D_REAL, round_tag, s]))?;
        let fake = survivor_fakes(
            &state.gen,
            cfg.batch_size,
            cfg.seq_len,
            d_tau,
            derive_seed(cfg.seed, &[TAG_D_FAKE, round_tag, s]),
        )?;
        d_total += discriminator_step(&mut state.disc, &mut state.disc_opt, &real, &fake, n)?;
    }
    state.round = n;
    Ok(RoundSummary {
        round: n,
        schedule_tau: schedule_value,
        children: records,
        stage_temp,
        survivor,
        d_loss: (cfg.d_steps > 0).then(|| d_total / cfg.d_steps as f64),
    })
}

/// Attaches metrics of the current generator to a round summary.
pub fn round_record(summary: &RoundSummary, report: &MetricsReport) -> RoundRecord {
    let chosen = &summary.children[summary.survivor];
    let bleu: BTreeMap<String, f64> = report
        .harmonic
        .iter()
        .filter(|(k, _)| k.starts_with("bleu"))
        .map(|(k, v)| (k.clone(), *v))
        .collect();
    RoundRecord {
        phase: "adversarial".into(),
        round: summary.round,
        tau: chosen.tau,
        schedule_tau: summary.schedule_tau,
        objective_chosen: chosen.objective,
        temp_offset_chosen: chosen.temp_offset,
        f_temp: chosen.f_temp.unwrap_or(f64::NAN),
        f_obj: chosen.f_obj.unwrap_or(f64::NAN),
        nll_oracle: report.harmonic.get("nll_oracle").copied(),
        nll_gen: report.harmonic.get("nll_gen").copied(),
        nll_div: report.harmonic["nll_div"],
        bleu: (!bleu.is_empty()).then_some(bleu),
        d_loss: summary.d_loss,
        children: summary.children.clone(),
        stage_temp_survivors: summary.stage_temp.clone(),
        survivor: summary.survivor,
    }
}

/// Runs rounds `state.round + 1 ..= min(until, cfg.rounds)`. After every
/// round, `on_round` receives the state and, on logged rounds, the record.
pub fn train_adversarial(
    cfg: &AdversarialConfig,
    data: &TrainData<'_>,
    mut state: TrainerState,
    until: usize,
    mut on_round: impl FnMut(&TrainerState, Option<&RoundRecord>) -> Result<()>,
) -> Result<TrainerState> {
    if cfg.log_every == 0 {
        return Err(Error::Config("log_every must be >= 1".into()));
    }
    while state.round < until.min(cfg.rounds) {
        let summary = run_round(cfg, data, &mut state)?;
        let record = if summary.round % cfg.log_every == 0 || summary.round == cfg.rounds {
            let meta = BTreeMap::from([("round".to_string(), serde_json::json!(summary.round))]);
            let report = evaluate(&state.gen, data, cfg, meta)?;
            Some(round_record(&summary, &report))
        } else {
            None
        };
        on_round(&state, record.as_ref())?;
    }
    Ok(state)
}
