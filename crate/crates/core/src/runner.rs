//! Experiment commands over a run directory.
//!
//! ```text
//! <run>/config.toml        resolved configuration
//! <run>/vocab.txt          one token per line
//! <run>/oracle.ckpt        synthetic mode
//! <run>/data/train_c<i>.txt, data/test_c<i>.txt
//! <run>/pretrain.ckpt      generator + optimizer after the last epoch
//! <run>/pretrain.jsonl     one record per epoch (epoch 0 = initialization)
//! <run>/train.ckpt         full trainer state
//! <run>/train.jsonl        one record per logged round
//! <run>/eval.jsonl, eval.txt
//! ```

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Container;
use crate::config::{ExperimentConfig, Mode};
use crate::corpus::{build_vocab, load_labeled, LabeledDataset, Vocabulary, BOS, PAD};
use crate::discriminator::DiscriminatorParams;
use crate::error::{Error, Result};
use crate::evolution::mle_pretrain_with;
use crate::generator::GeneratorParams;
use crate::metrics::MetricsReport;
use crate::oracle::OracleModel;
use crate::params::{derive_seed, rng_for, Adam};
use crate::trainer::{evaluate, push_adam, read_adam, train_adversarial, warmup_discriminator, AdversarialConfig, TrainData, TrainerState};

const TAG_TRAIN_DATA: u64 = 0x21;
const TAG_TEST_DATA: u64 = 0x22;
const TAG_GEN_INIT: u64 = 0x23;
const TAG_DISC_INIT: u64 = 0x24;
const TAG_SAMPLE: u64 = 0x25;

const PRETRAIN_KIND: &str = "pretrain";

/// File layout of one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
    pub fn vocab(&self) -> PathBuf {
        self.root.join("vocab.txt")
    }
    pub fn oracle(&self) -> PathBuf {
        self.root.join("oracle.ckpt")
    }
    pub fn train_file(&self, c: usize) -> PathBuf {
        self.root.join("data").join(format!("train_c{c}.txt"))
    }
    pub fn test_file(&self, c: usize) -> PathBuf {
        self.root.join("data").join(format!("test_c{c}.txt"))
    }
    pub fn pretrain_ckpt(&self) -> PathBuf {
        self.root.join("pretrain.ckpt")
    }
    pub fn pretrain_log(&self) -> PathBuf {
        self.root.join("pretrain.jsonl")
    }
    pub fn train_ckpt(&self) -> PathBuf {
        self.root.join("train.ckpt")
    }
    pub fn train_log(&self) -> PathBuf {
        self.root.join("train.jsonl")
    }
    pub fn eval_jsonl(&self) -> PathBuf {
        self.root.join("eval.jsonl")
    }
    pub fn eval_table(&self) -> PathBuf {
        self.root.join("eval.txt")
    }

    /// Creates the directory and writes the resolved configuration.
    pub fn prepare(&self, cfg: &ExperimentConfig) -> Result<()> {
        fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let p = self.config();
        fs::write(&p, cfg.to_toml()).map_err(|e| Error::io(&p, e))
    }
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingInput {
            what: what.to_string(),
            path: path.to_path_buf(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    /// Oracle NLL of its own held-out samples, per category.
    pub entropy: Vec<f64>,
    pub entropy_harmonic: f64,
    pub train_lines: usize,
    pub test_lines: usize,
}

/// Samples oracle corpora and writes them with the oracle checkpoint.
pub fn cmd_synth(cfg: &ExperimentConfig, paths: &RunPaths) -> Result<SynthSummary> {
    if cfg.mode != Mode::Synthetic {
        return Err(Error::Config("synth requires mode = \"synthetic\"".into()));
    }
    let data_dir = paths.root.join("data");
    fs::create_dir_all(&data_dir).map_err(|e| Error::io(&data_dir, e))?;
    let vocab = Vocabulary::synthetic(cfg.vocab_size);
    vocab.save(&paths.vocab())?;
    let oracle = OracleModel::new(cfg.k, cfg.vocab_size, cfg.oracle_hidden, cfg.seed)?;
    oracle.save(&paths.oracle())?;
    let mut entropy = Vec::with_capacity(cfg.k);
    let (mut train_lines, mut test_lines) = (0, 0);
    for c in 0..cfg.k {
        let train = oracle.sample(c, cfg.samples_per_category, cfg.seq_len, derive_seed(cfg.seed, &[TAG_TRAIN_DATA]))?;
        train.write_category(c, &vocab, &paths.train_file(c))?;
        train_lines += train.len();
        let n_test = cfg.test_samples_per_category.max(1);
        let test = oracle.sample(c, n_test, cfg.seq_len, derive_seed(cfg.seed, &[TAG_TEST_DATA]))?;
        test.write_category(c, &vocab, &paths.test_file(c))?;
        test_lines += test.len();
        let nll = oracle.nll(&test.sequences, &test.labels)?;
        entropy.push(nll.per_category[c].expect("category present"));
    }
    let entropy_harmonic = crate::metrics::harmonic_mean(&entropy)?;
    Ok(SynthSummary {
        entropy,
        entropy_harmonic,
        train_lines,
        test_lines,
    })
}

/// Vocabulary, datasets and (synthetic mode) oracle of a run.
#[derive(Debug, Clone)]
pub struct RunData {
    pub vocab: Vocabulary,
    pub train: LabeledDataset,
    pub test: Option<LabeledDataset>,
    pub oracle: Option<OracleModel>,
}

impl RunData {
    pub fn as_train_data(&self) -> TrainData<'_> {
        TrainData {
            train: &self.train,
            oracle: self.oracle.as_ref(),
            test: self.test.as_ref(),
            pad_id: Some(self.vocab.pad_id()),
        }
    }
}

/// Loads the run's data. Synthetic runs read what `synth` wrote; real runs
/// read the configured files and save the vocabulary into the run.
pub fn load_run_data(cfg: &ExperimentConfig, paths: &RunPaths) -> Result<RunData> {
    match cfg.mode {
        Mode::Synthetic => {
            require(&paths.oracle(), "oracle checkpoint (run `synth` first)")?;
            let vocab = Vocabulary::load(&paths.vocab())?;
            let oracle = OracleModel::load(&paths.oracle())?;
            if oracle.num_categories() != cfg.k || oracle.vocab_size() != cfg.vocab_size {
                return Err(Error::Config(format!(
                    "oracle in {} has k = {}, vocab = {}, but the config says k = {}, vocab = {}",
                    paths.oracle().display(),
                    oracle.num_categories(),
                    oracle.vocab_size(),
                    cfg.k,
                    cfg.vocab_size
                )));
            }
            let train_files: Vec<PathBuf> = (0..cfg.k).map(|c| paths.train_file(c)).collect();
            for f in &train_files {
                require(f, "training corpus")?;
            }
            let train = load_labeled(&train_files, &vocab, cfg.seq_len)?;
            let test_files: Vec<PathBuf> = (0..cfg.k).map(|c| paths.test_file(c)).collect();
            let test = if test_files.iter().all(|f| f.exists()) {
                Some(load_labeled(&test_files, &vocab, cfg.seq_len)?)
            } else {
                None
            };
            Ok(RunData {
                vocab,
                train,
                test,
                oracle: Some(oracle),
            })
        }
        Mode::Real => {
            let vocab = match &cfg.vocab_file {
                Some(p) => Vocabulary::load(p)?,
                None if paths.vocab().exists() => Vocabulary::load(&paths.vocab())?,
                None => build_vocab(&cfg.train_files, &[PAD, BOS])?,
            };
            vocab.save(&paths.vocab())?;
            let train = load_labeled(&cfg.train_files, &vocab, cfg.seq_len)?;
            let test = if cfg.test_files.is_empty() {
                None
            } else {
                Some(load_labeled(&cfg.test_files, &vocab, cfg.seq_len)?)
            };
            Ok(RunData {
                vocab,
                train,
                test,
                oracle: None,
            })
        }
    }
}

/// Generator layout for a run's vocabulary.
pub fn fresh_generator(cfg: &ExperimentConfig, vocab: &Vocabulary) -> Result<GeneratorParams> {
    let banned = match cfg.mode {
        Mode::Synthetic => vec![vocab.pad_id(), vocab.bos_id()],
        Mode::Real => vec![vocab.bos_id()],
    };
    let gc = cfg.generator_config(vocab.size(), vocab.bos_id(), &banned);
    GeneratorParams::new(gc, derive_seed(cfg.seed, &[TAG_GEN_INIT]))
}

pub fn fresh_discriminator(cfg: &ExperimentConfig, vocab: &Vocabulary) -> Result<DiscriminatorParams> {
    let dc = cfg.discriminator_config(vocab.size());
    dc.validate(cfg.seq_len)?;
    DiscriminatorParams::new(dc, derive_seed(cfg.seed, &[TAG_DISC_INIT]))
}

/// One line of the pretraining log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainRecord {
    pub phase: String,
    pub epoch: usize,
    /// Mean training NLL of the epoch; absent for the initial record.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub nll_oracle: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub nll_gen: Option<f64>,
    pub nll_div: f64,
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Keeps the log lines whose `key` field is at most `last`, dropping
/// unparseable lines.
fn truncate_log(path: &Path, key: &str, last: usize) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut kept = String::new();
    for line in text.lines() {
        let Ok(v) = serde_json::from_str::<serde_json::Value>(line) else { continue };
        if v.get(key).and_then(|x| x.as_u64()).is_some_and(|r| r as usize <= last) {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(path, kept).map_err(|e| Error::io(path, e))
}

fn save_pretrain(path: &Path, gen: &GeneratorParams, opt: &Adam, epoch: usize, seq_len: usize) -> Result<()> {
    let mut c = Container::new(PRETRAIN_KIND);
    c.set_meta("epoch", epoch);
    c.set_meta("seq_len", seq_len);
    gen.write_into(&mut c, "gen.");
    push_adam(&mut c, "gen_opt.", opt);
    c.save(path)
}

/// Generator, optimizer and completed epochs of a pretraining checkpoint.
pub fn load_pretrain(path: &Path) -> Result<(GeneratorParams, Adam, usize)> {
    let c = Container::load(path)?;
    c.expect_kind(PRETRAIN_KIND, path)?;
    let gen = GeneratorParams::read_from(&c, "gen.")?;
    let opt = read_adam(&c, "gen_opt.", gen.store.len(), path)?;
    Ok((gen, opt, c.meta("epoch").unwrap_or(0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainSummary {
    pub records: Vec<PretrainRecord>,
    pub generator: GeneratorParams,
}

fn pretrain_record(
    epoch: usize,
    loss: Option<f64>,
    gen: &GeneratorParams,
    data: &TrainData<'_>,
    acfg: &AdversarialConfig,
) -> Result<PretrainRecord> {
    let meta = BTreeMap::from([("epoch".to_string(), serde_json::json!(epoch))]);
    let r = evaluate(gen, data, acfg, meta)?;
    Ok(PretrainRecord {
        phase: "pretrain".into(),
        epoch,
        loss,
        nll_oracle: r.harmonic.get("nll_oracle").copied(),
        nll_gen: r.harmonic.get("nll_gen").copied(),
        nll_div: r.harmonic["nll_div"],
    })
}

/// MLE pretraining with one log record per epoch and a checkpoint after each.
pub fn cmd_pretrain(cfg: &ExperimentConfig, paths: &RunPaths, resume: bool) -> Result<PretrainSummary> {
    let data = load_run_data(cfg, paths)?;
    let td = data.as_train_data();
    let acfg = AdversarialConfig {
        bleu_orders: Vec::new(),
        ..AdversarialConfig::from(cfg)
    };
    let pcfg = cfg.pretrain_config();
    let (mut gen, mut opt, start) = if resume {
        require(&paths.pretrain_ckpt(), "pretraining checkpoint to resume from")?;
        let (g, o, e) = load_pretrain(&paths.pretrain_ckpt())?;
        truncate_log(&paths.pretrain_log(), "epoch", e)?;
        (g, o, e)
    } else {
        let g = fresh_generator(cfg, &data.vocab)?;
        let o = Adam::new(&g.store, pcfg.lr);
        let log = paths.pretrain_log();
        if log.exists() {
            fs::remove_file(&log).map_err(|e| Error::io(&log, e))?;
        }
        let first = pretrain_record(0, None, &g, &td, &acfg)?;
        append_line(&log, &serde_json::to_string(&first)?)?;
        save_pretrain(&paths.pretrain_ckpt(), &g, &o, 0, cfg.seq_len)?;
        (g, o, 0)
    };
    mle_pretrain_with(&mut gen, &mut opt, &data.train, &pcfg, start, |epoch, loss, g, o| {
        let rec = pretrain_record(epoch + 1, Some(loss), g, &td, &acfg)?;
        log::info!("pretrain epoch {} loss {loss:.4} nll_div {:.4}", epoch + 1, rec.nll_div);
        append_line(&paths.pretrain_log(), &serde_json::to_string(&rec)?)?;
        save_pretrain(&paths.pretrain_ckpt(), g, o, epoch + 1, cfg.seq_len)
    })?;
    let records = read_records(&paths.pretrain_log())?.0;
    Ok(PretrainSummary { records, generator: gen })
}

/// Parses a JSONL log, returning the records and the number of skipped lines.
pub fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(Vec<T>, usize)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut skipped = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(_) => skipped += 1,
        }
    }
    Ok((out, skipped))
}

/// Adversarial training from the pretrained generator, or from the last
/// trainer checkpoint when `resume` is set. `until` stops early after that
/// round (with a checkpoint) so a later resume can finish the run.
pub fn cmd_train(cfg: &ExperimentConfig, paths: &RunPaths, resume: bool, until: Option<usize>) -> Result<TrainerState> {
    let data = load_run_data(cfg, paths)?;
    let td = data.as_train_data();
    let acfg = AdversarialConfig::from(cfg);
    let state = if resume {
        require(&paths.train_ckpt(), "training checkpoint to resume from")?;
        let s = TrainerState::load(&paths.train_ckpt())?;
        truncate_log(&paths.train_log(), "round", s.round)?;
        s
    } else {
        require(&paths.pretrain_ckpt(), "pretrained generator (run `pretrain` first)")?;
        let (gen, _, _) = load_pretrain(&paths.pretrain_ckpt())?;
        let disc = fresh_discriminator(cfg, &data.vocab)?;
        let mut s = TrainerState::new(gen, cfg.gen_lr, disc, cfg.dis_lr);
        warmup_discriminator(&acfg, &td, &mut s, cfg.dis_warmup_steps)?;
        let log = paths.train_log();
        if log.exists() {
            fs::remove_file(&log).map_err(|e| Error::io(&log, e))?;
        }
        s
    };
    let every = cfg.effective_checkpoint_every();
    let ckpt = paths.train_ckpt();
    let stop = until.unwrap_or(cfg.rounds).min(cfg.rounds);
    let result = train_adversarial(&acfg, &td, state, stop, |s, rec| {
        if let Some(r) = rec {
            log::info!(
                "round {} tau {:.3} {:?}@{:+} nll_div {:.4}{}",
                r.round,
                r.tau,
                r.objective_chosen,
                r.temp_offset_chosen,
                r.nll_div,
                r.nll_oracle.map(|v| format!(" nll_oracle {v:.4}")).unwrap_or_default()
            );
            append_line(&paths.train_log(), &serde_json::to_string(r)?)?;
        }
        if s.round % every == 0 || s.round == stop {
            let mut c = s.to_container();
            c.set_meta("seq_len", cfg.seq_len);
            c.save(&ckpt)?;
        }
        Ok(())
    });
    if let Err(e @ Error::NonFinite { .. }) = &result {
        // Keep whatever state led here for diagnosis.
        log::error!("training aborted: {e}");
    }
    result
}

/// Generator and sequence length stored in a pretraining or trainer checkpoint.
pub fn load_generator(path: &Path) -> Result<(GeneratorParams, Option<usize>)> {
    let c = Container::load(path)?;
    if c.kind != PRETRAIN_KIND && c.kind != "trainer" {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            reason: format!("`{}` checkpoints carry no generator", c.kind),
        });
    }
    Ok((GeneratorParams::read_from(&c, "gen.")?, c.meta("seq_len")))
}

/// Decoded samples, one per line. With no category, `n` samples of every
/// category are drawn. Lines carry a `cat=<id>\t` prefix when k > 1.
pub fn cmd_sample(
    gen: &GeneratorParams,
    vocab: &Vocabulary,
    category: Option<usize>,
    n: usize,
    seq_len: usize,
    tau: f64,
    seed: u64,
) -> Result<Vec<String>> {
    let k = gen.config.num_categories;
    if gen.config.vocab_size != vocab.size() {
        return Err(Error::Dimension {
            context: "generator vs vocabulary size",
            expected: vocab.size(),
            actual: gen.config.vocab_size,
        });
    }
    let cats: Vec<usize> = match category {
        Some(c) if c >= k => return Err(Error::CategoryOutOfRange { category: c, k }),
        Some(c) => vec![c],
        None => (0..k).collect(),
    };
    let mut lines = Vec::with_capacity(n * cats.len());
    for c in cats {
        let mut rng = rng_for(seed, &[TAG_SAMPLE, c as u64]);
        for s in gen.generate(c, n, seq_len, tau, &mut rng)? {
            let end = s.hard_ids.iter().position(|&t| t == vocab.pad_id()).unwrap_or(s.hard_ids.len());
            let text = vocab.decode(&s.hard_ids[..end]);
            lines.push(if k > 1 { format!("cat={c}\t{text}") } else { text });
        }
    }
    Ok(lines)
}

/// Full metric suite on a checkpoint (default: the trainer checkpoint, else
/// the pretraining one). Writes `eval.jsonl` and `eval.txt`.
pub fn cmd_eval(cfg: &ExperimentConfig, paths: &RunPaths, checkpoint: Option<&Path>) -> Result<MetricsReport> {
    let path = match checkpoint {
        Some(p) => p.to_path_buf(),
        None if paths.train_ckpt().exists() => paths.train_ckpt(),
        None => paths.pretrain_ckpt(),
    };
    require(&path, "checkpoint to evaluate")?;
    let (gen, _) = load_generator(&path)?;
    let data = load_run_data(cfg, paths)?;
    let acfg = AdversarialConfig::from(cfg);
    let meta = BTreeMap::from([
        ("checkpoint".to_string(), serde_json::json!(path.display().to_string())),
        ("samples_per_category".to_string(), serde_json::json!(cfg.metric_samples)),
        ("seed".to_string(), serde_json::json!(cfg.seed)),
    ]);
    let report = evaluate(&gen, &data.as_train_data(), &acfg, meta)?;
    let j = paths.eval_jsonl();
    fs::write(&j, report.to_jsonl()).map_err(|e| Error::io(&j, e))?;
    let t = paths.eval_table();
    fs::write(&t, report.to_table()).map_err(|e| Error::io(&t, e))?;
    Ok(report)
}
