//! Experiment configuration: one flat TOML table, validated before any
//! compute starts. Unknown keys are rejected.
//!
//! ```toml
//! mode = "synthetic"
//! k = 2
//! seq_len = 20
//! rounds = 2000
//! tau_tar = 100.0
//! ```
//!
//! Every key has a default, so an empty file is a valid desk-scale
//! synthetic setup. `key=value` overrides use TOML value syntax for the
//! right-hand side, with bare strings accepted for string keys.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::discriminator::DiscriminatorConfig;
use crate::error::{Error, Result};
use crate::evolution::{Ablation, PretrainConfig, TemperatureSchedule};
use crate::generator::GeneratorConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Synthetic,
    Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// Parent of timestamped run directories.
    pub out_dir: PathBuf,
    pub seed: u64,

    // data
    pub k: usize,
    pub seq_len: usize,
    /// Content vocabulary of the synthetic oracles.
    pub vocab_size: usize,
    pub samples_per_category: usize,
    pub test_samples_per_category: usize,
    pub oracle_hidden: usize,
    /// Real mode: one training file per category.
    pub train_files: Vec<PathBuf>,
    /// Real mode: one held-out file per category (optional).
    pub test_files: Vec<PathBuf>,
    /// Real mode: vocabulary file; built from the training files when unset.
    pub vocab_file: Option<PathBuf>,

    // generator
    pub gen_emb_dim: usize,
    pub gen_cat_dim: usize,
    pub mem_slots: usize,
    pub mem_dim: usize,
    pub num_heads: usize,
    pub mlp_hidden: usize,
    pub soft_feedback: bool,

    // discriminator
    pub dis_emb_dim: usize,
    pub dis_filter_widths: Vec<usize>,
    pub dis_num_filters: usize,
    pub dis_hidden: usize,

    // pretraining
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub batch_size: usize,

    // adversarial training
    pub rounds: usize,
    pub tau_tar: f64,
    pub lambda: f64,
    pub gen_steps: usize,
    pub d_steps: usize,
    /// Discriminator steps on the pretrained generator before round 1.
    pub dis_warmup_steps: usize,
    pub eval_n: usize,
    pub gen_lr: f64,
    pub dis_lr: f64,
    pub no_h: bool,
    pub no_t: bool,
    pub no_o: bool,
    /// Let the chosen temperature offset shift all later schedule positions.
    pub persistent_tms: bool,

    // logging
    pub log_every: usize,
    /// Rounds between checkpoints; 0 picks every round for runs of at most
    /// 100 rounds and every 50 otherwise.
    pub checkpoint_every: usize,
    /// Generated samples per category for logged metrics.
    pub metric_samples: usize,
    pub bleu_orders: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Synthetic,
            out_dir: PathBuf::from("runs"),
            seed: 1,
            k: 2,
            seq_len: 20,
            vocab_size: 5000,
            samples_per_category: 10_000,
            test_samples_per_category: 1000,
            oracle_hidden: 32,
            train_files: Vec::new(),
            test_files: Vec::new(),
            vocab_file: None,
            gen_emb_dim: 32,
            gen_cat_dim: 32,
            mem_slots: 1,
            mem_dim: 64,
            num_heads: 2,
            mlp_hidden: 64,
            soft_feedback: false,
            dis_emb_dim: 64,
            dis_filter_widths: vec![2, 3, 4],
            dis_num_filters: 16,
            dis_hidden: 64,
            pretrain_epochs: 50,
            pretrain_lr: 1e-2,
            batch_size: 64,
            rounds: 2000,
            tau_tar: 100.0,
            lambda: 0.001,
            gen_steps: 1,
            d_steps: 5,
            dis_warmup_steps: 0,
            eval_n: 64,
            gen_lr: 1e-2,
            dis_lr: 1e-2,
            no_h: false,
            no_t: false,
            no_o: false,
            persistent_tms: false,
            log_every: 1,
            checkpoint_every: 0,
            metric_samples: 500,
            bleu_orders: vec![2, 3, 4, 5],
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Loads `path` (or the defaults) and applies `key=value` overrides.
    pub fn load_with_overrides(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse()
                    .map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not of the form key=value")))?;
            let key = key.trim();
            let value = parse_override(raw.trim());
            table.insert(key.to_string(), value);
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.k == 0 {
            return fail("k must be >= 1".into());
        }
        if self.seq_len == 0 {
            return fail("seq_len must be >= 1".into());
        }
        TemperatureSchedule::new(self.tau_tar, self.rounds)?;
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return fail(format!("lambda must be >= 0, got {}", self.lambda));
        }
        for (name, lr) in [("pretrain_lr", self.pretrain_lr), ("gen_lr", self.gen_lr), ("dis_lr", self.dis_lr)] {
            if !(lr > 0.0) || !lr.is_finite() {
                return fail(format!("{name} must be positive, got {lr}"));
            }
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("eval_n", self.eval_n),
            ("log_every", self.log_every),
            ("metric_samples", self.metric_samples),
        ] {
            if v == 0 {
                return fail(format!("{name} must be >= 1"));
            }
        }
        if let Some(&n) = self.bleu_orders.iter().find(|&&n| !(2..=5).contains(&n)) {
            return fail(format!("bleu order {n} is outside 2..=5"));
        }
        match self.mode {
            Mode::Synthetic => {
                if self.vocab_size == 0 || self.samples_per_category == 0 || self.oracle_hidden == 0 {
                    return fail("vocab_size, samples_per_category and oracle_hidden must be >= 1".into());
                }
            }
            Mode::Real => {
                if self.train_files.len() != self.k {
                    return fail(format!(
                        "real mode needs one train file per category: k = {}, got {}",
                        self.k,
                        self.train_files.len()
                    ));
                }
                if !self.test_files.is_empty() && self.test_files.len() != self.k {
                    return fail(format!(
                        "test_files must be empty or list one file per category (k = {})",
                        self.k
                    ));
                }
            }
        }
        // The vocabulary size is only known later in real mode; use a
        // placeholder that satisfies the token-id checks.
        self.generator_config(self.k + 2, 0, &[]).validate()?;
        self.discriminator_config(2).validate(self.seq_len)?;
        Ok(())
    }

    pub fn generator_config(&self, vocab_size: usize, start_id: usize, banned: &[usize]) -> GeneratorConfig {
        GeneratorConfig {
            vocab_size,
            num_categories: self.k,
            emb_dim: self.gen_emb_dim,
            cat_dim: self.gen_cat_dim,
            mem_slots: self.mem_slots,
            mem_dim: self.mem_dim,
            num_heads: self.num_heads,
            mlp_hidden: self.mlp_hidden,
            start_id,
            banned_outputs: banned.to_vec(),
            soft_feedback: self.soft_feedback,
        }
    }

    pub fn discriminator_config(&self, vocab_size: usize) -> DiscriminatorConfig {
        DiscriminatorConfig {
            vocab_size,
            emb_dim: self.dis_emb_dim,
            filter_widths: self.dis_filter_widths.clone(),
            num_filters: self.dis_num_filters,
            hidden: self.dis_hidden,
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            epochs: self.pretrain_epochs,
            lr: self.pretrain_lr,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }

    pub fn ablation(&self) -> Ablation {
        Ablation {
            no_h: self.no_h,
            no_t: self.no_t,
            no_o: self.no_o,
        }
    }

    pub fn effective_checkpoint_every(&self) -> usize {
        match self.checkpoint_every {
            0 if self.rounds <= 100 => 1,
            0 => 50,
            n => n,
        }
    }
}

fn parse_override(raw: &str) -> toml::Value {
    // Parse the right-hand side as a TOML value; fall back to a bare string.
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
