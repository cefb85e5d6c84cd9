//! Python bindings (`pycatgan`): vocabularies, oracles, generator and
//! discriminator models, the relativistic losses, metrics, the temperature
//! schedule and the experiment runner commands.

use std::collections::BTreeMap;
use std::path::PathBuf;

use catgan::config::ExperimentConfig;
use catgan::corpus::{TokenSequence, Vocabulary};
use catgan::discriminator::{DiscriminatorConfig, DiscriminatorParams};
use catgan::evolution::{schedule_tau, TemperatureSchedule};
use catgan::generator::{GeneratorConfig, GeneratorParams};
use catgan::objectives::LogitBatchPair;
use catgan::oracle::OracleModel;
use catgan::params::rng_for;
use catgan::runner::{self, RunPaths};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: catgan::Error) -> PyErr {
    match e {
        catgan::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        catgan::Error::Config(_)
        | catgan::Error::InvalidArgument(_)
        | catgan::Error::CategoryOutOfRange { .. }
        | catgan::Error::TokenOutOfRange { .. }
        | catgan::Error::Dimension { .. }
        | catgan::Error::MissingInput { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

type PyRes<T> = PyResult<T>;

#[pyclass(name = "Config", module = "pycatgan", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    /// Defaults, or a TOML file, with `key=value` overrides applied.
    #[new]
    #[pyo3(signature = (path=None, overrides=Vec::new()))]
    fn new(path: Option<PathBuf>, overrides: Vec<String>) -> PyRes<Self> {
        let inner = ExperimentConfig::load_with_overrides(path.as_deref(), &overrides).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyRes<Self> {
        Ok(Self {
            inner: ExperimentConfig::from_toml_str(text).map_err(to_py)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    /// The value of one key as a JSON string.
    fn get(&self, key: &str) -> PyRes<String> {
        let v = serde_json::to_value(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        v.get(key)
            .map(|x| x.to_string())
            .ok_or_else(|| PyValueError::new_err(format!("unknown key `{key}`")))
    }

    fn __repr__(&self) -> String {
        format!("Config(mode={:?}, k={}, seq_len={}, rounds={})", self.inner.mode, self.inner.k, self.inner.seq_len, self.inner.rounds)
    }
}

#[pyclass(name = "Vocabulary", module = "pycatgan")]
struct PyVocabulary {
    inner: Vocabulary,
}

#[pymethods]
impl PyVocabulary {
    #[staticmethod]
    fn synthetic(content_size: usize) -> Self {
        Self {
            inner: Vocabulary::synthetic(content_size),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyRes<Self> {
        Ok(Self {
            inner: Vocabulary::load(&path).map_err(to_py)?,
        })
    }

    #[getter]
    fn size(&self) -> usize {
        self.inner.size()
    }

    #[getter]
    fn pad_id(&self) -> usize {
        self.inner.pad_id()
    }

    #[getter]
    fn bos_id(&self) -> usize {
        self.inner.bos_id()
    }

    fn encode(&self, sentence: &str) -> PyRes<Vec<usize>> {
        self.inner
            .encode(sentence)
            .map_err(|t| PyValueError::new_err(format!("out-of-vocabulary token `{t}`")))
    }

    fn decode(&self, ids: Vec<usize>) -> String {
        self.inner.decode(&ids)
    }
}

#[pyclass(name = "Oracle", module = "pycatgan")]
struct PyOracle {
    inner: OracleModel,
}

#[pymethods]
impl PyOracle {
    #[new]
    fn new(k: usize, vocab_size: usize, hidden_size: usize, seed: u64) -> PyRes<Self> {
        Ok(Self {
            inner: OracleModel::new(k, vocab_size, hidden_size, seed).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyRes<Self> {
        Ok(Self {
            inner: OracleModel::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyRes<()> {
        self.inner.save(&path).map_err(to_py)
    }

    fn sample(&self, category: usize, n: usize, seq_len: usize, seed: u64) -> PyRes<Vec<Vec<usize>>> {
        let d = self.inner.sample(category, n, seq_len, seed).map_err(to_py)?;
        Ok(d.sequences.into_iter().map(|s| s.ids).collect())
    }

    fn log_probs(&self, category: usize, sequences: Vec<Vec<usize>>) -> PyRes<Vec<f64>> {
        let refs: Vec<&[usize]> = sequences.iter().map(Vec::as_slice).collect();
        self.inner.log_probs(category, &refs).map_err(to_py)
    }
}

#[pyclass(name = "Generator", module = "pycatgan")]
struct PyGenerator {
    inner: GeneratorParams,
}

#[pymethods]
impl PyGenerator {
    /// A freshly initialized generator. `banned` ids never appear in samples.
    #[new]
    #[pyo3(signature = (vocab_size, num_categories, start_id, seed, emb_dim=32, mem_dim=64, num_heads=2, banned=Vec::new()))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        vocab_size: usize,
        num_categories: usize,
        start_id: usize,
        seed: u64,
        emb_dim: usize,
        mem_dim: usize,
        num_heads: usize,
        banned: Vec<usize>,
    ) -> PyRes<Self> {
        let cfg = GeneratorConfig {
            emb_dim,
            cat_dim: emb_dim,
            mem_dim,
            num_heads,
            mlp_hidden: mem_dim,
            banned_outputs: banned,
            ..GeneratorConfig::new(vocab_size, num_categories, start_id)
        };
        Ok(Self {
            inner: GeneratorParams::new(cfg, seed).map_err(to_py)?,
        })
    }

    /// The generator stored in a pretraining or training checkpoint.
    #[staticmethod]
    fn load(path: PathBuf) -> PyRes<Self> {
        Ok(Self {
            inner: runner::load_generator(&path).map_err(to_py)?.0,
        })
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.num_parameters()
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.config.vocab_size
    }

    /// `(hard_ids, soft_rows)` per sample; soft rows are `T x V` lists.
    #[allow(clippy::type_complexity)]
    fn generate(&self, category: usize, n: usize, seq_len: usize, tau: f64, seed: u64) -> PyRes<Vec<(Vec<usize>, Vec<Vec<f64>>)>> {
        let mut rng = rng_for(seed, &[]);
        let out = self.inner.generate(category, n, seq_len, tau, &mut rng).map_err(to_py)?;
        Ok(out
            .into_iter()
            .map(|s| {
                let rows = s.rows.rows().into_iter().map(|r| r.to_vec()).collect();
                (s.hard_ids, rows)
            })
            .collect())
    }

    fn log_probs(&self, sequences: Vec<Vec<usize>>, categories: Vec<usize>) -> PyRes<Vec<f64>> {
        let refs: Vec<&[usize]> = sequences.iter().map(Vec::as_slice).collect();
        self.inner.log_probs(&refs, &categories).map_err(to_py)
    }
}

#[pyclass(name = "Discriminator", module = "pycatgan")]
struct PyDiscriminator {
    inner: DiscriminatorParams,
}

#[pymethods]
impl PyDiscriminator {
    #[new]
    fn new(vocab_size: usize, seed: u64) -> PyRes<Self> {
        Ok(Self {
            inner: DiscriminatorParams::new(DiscriminatorConfig::new(vocab_size), seed).map_err(to_py)?,
        })
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.num_parameters()
    }

    fn discriminate(&self, sequences: Vec<Vec<usize>>) -> PyRes<Vec<f64>> {
        let seqs: Vec<TokenSequence> = sequences.into_iter().map(TokenSequence::full).collect();
        self.inner.discriminate_tokens(&seqs).map_err(to_py)
    }
}

fn pairs(per_category: Vec<(Vec<f64>, Vec<f64>)>) -> PyRes<(Vec<LogitBatchPair>, LogitBatchPair)> {
    let (mut all_r, mut all_f) = (Vec::new(), Vec::new());
    let mut per = Vec::with_capacity(per_category.len());
    for (c, (r, f)) in per_category.into_iter().enumerate() {
        all_r.extend(&r);
        all_f.extend(&f);
        per.push(LogitBatchPair::new(r, f, Some(c)).map_err(to_py)?);
    }
    Ok((per, LogitBatchPair::new(all_r, all_f, None).map_err(to_py)?))
}

/// Pair loss on one real/fake logit batch.
#[pyfunction]
fn loss_ra(real: Vec<f64>, fake: Vec<f64>) -> PyRes<f64> {
    catgan::objectives::loss_ra(&LogitBatchPair::new(real, fake, None).map_err(to_py)?).map_err(to_py)
}

/// Category-wise discriminator loss; `per_category[c] = (real, fake)`.
#[pyfunction]
fn d_loss_catra(per_category: Vec<(Vec<f64>, Vec<f64>)>) -> PyRes<f64> {
    let k = per_category.len();
    let (per, all) = pairs(per_category)?;
    catgan::objectives::d_loss_catra(&per, &all, k).map_err(to_py)
}

#[pyfunction]
fn g_loss_catra(per_category: Vec<(Vec<f64>, Vec<f64>)>) -> PyRes<f64> {
    let k = per_category.len();
    let (per, all) = pairs(per_category)?;
    catgan::objectives::g_loss_catra(&per, &all, k).map_err(to_py)
}

#[pyfunction]
fn g_loss_catrs(per_category: Vec<(Vec<f64>, Vec<f64>)>) -> PyRes<f64> {
    let k = per_category.len();
    let (per, all) = pairs(per_category)?;
    catgan::objectives::g_loss_catrs(&per, &all, k).map_err(to_py)
}

/// Schedule temperature at round `n` shifted by `offset`.
#[pyfunction]
#[pyo3(signature = (tau_tar, total, n, offset=0))]
fn temperature(tau_tar: f64, total: usize, n: i64, offset: i32) -> PyRes<f64> {
    let s = TemperatureSchedule::new(tau_tar, total).map_err(to_py)?;
    Ok(schedule_tau(&s.at(n), offset))
}

#[pyfunction]
fn harmonic_mean(values: Vec<f64>) -> PyRes<f64> {
    catgan::metrics::harmonic_mean(&values).map_err(to_py)
}

/// Mean sentence BLEU-n of candidates against a shared reference set.
#[pyfunction]
fn bleu(candidates: Vec<Vec<usize>>, references: Vec<Vec<usize>>, n: usize) -> PyRes<f64> {
    catgan::metrics::bleu_n(&candidates, &references, n).map_err(to_py)
}

#[pyfunction]
fn nll_div(gen: &PyGenerator, category: usize, n: usize, seq_len: usize, seed: u64) -> PyRes<f64> {
    catgan::metrics::nll_div(&gen.inner, category, n, seq_len, seed).map_err(to_py)
}

#[pyfunction]
fn nll_oracle(oracle: &PyOracle, gen: &PyGenerator, category: usize, n: usize, seq_len: usize, seed: u64) -> PyRes<f64> {
    catgan::metrics::nll_oracle_metric(&oracle.inner, &gen.inner, category, n, seq_len, seed).map_err(to_py)
}

/// Writes the configuration into `run_dir` and samples the oracle corpora.
/// Returns the per-category oracle entropies.
#[pyfunction]
fn synth(config: &PyConfig, run_dir: PathBuf) -> PyRes<Vec<f64>> {
    let paths = RunPaths::new(run_dir);
    paths.prepare(&config.inner).map_err(to_py)?;
    Ok(runner::cmd_synth(&config.inner, &paths).map_err(to_py)?.entropy)
}

/// MLE pretraining; returns the pretraining log as JSON lines.
#[pyfunction]
#[pyo3(signature = (config, run_dir, resume=false))]
fn pretrain(py: Python<'_>, config: &PyConfig, run_dir: PathBuf, resume: bool) -> PyRes<Vec<String>> {
    let cfg = config.inner.clone();
    let summary = py
        .detach(move || {
            let paths = RunPaths::new(run_dir);
            paths.prepare(&cfg)?;
            runner::cmd_pretrain(&cfg, &paths, resume)
        })
        .map_err(to_py)?;
    summary
        .records
        .iter()
        .map(|r| serde_json::to_string(r).map_err(|e| PyRuntimeError::new_err(e.to_string())))
        .collect()
}

/// Adversarial training; returns the number of completed rounds.
#[pyfunction]
#[pyo3(signature = (config, run_dir, resume=false, until=None))]
fn train(py: Python<'_>, config: &PyConfig, run_dir: PathBuf, resume: bool, until: Option<usize>) -> PyRes<usize> {
    let cfg = config.inner.clone();
    let state = py
        .detach(move || {
            let paths = RunPaths::new(run_dir);
            paths.prepare(&cfg)?;
            runner::cmd_train(&cfg, &paths, resume, until)
        })
        .map_err(to_py)?;
    Ok(state.round)
}

/// Harmonic-mean metrics of a checkpoint (default: the run's latest).
#[pyfunction]
#[pyo3(signature = (config, run_dir, checkpoint=None))]
fn evaluate(config: &PyConfig, run_dir: PathBuf, checkpoint: Option<PathBuf>) -> PyRes<BTreeMap<String, f64>> {
    let paths = RunPaths::new(run_dir);
    let report = runner::cmd_eval(&config.inner, &paths, checkpoint.as_deref()).map_err(to_py)?;
    Ok(report.harmonic)
}

/// Decoded samples from a checkpoint.
#[pyfunction]
#[pyo3(signature = (checkpoint, vocab, n, category=None, tau=1.0, seed=0))]
fn sample(checkpoint: PathBuf, vocab: &PyVocabulary, n: usize, category: Option<usize>, tau: f64, seed: u64) -> PyRes<Vec<String>> {
    let (gen, seq_len) = runner::load_generator(&checkpoint).map_err(to_py)?;
    let seq_len = seq_len.ok_or_else(|| PyValueError::new_err("checkpoint does not record a sequence length"))?;
    runner::cmd_sample(&gen, &vocab.inner, category, n, seq_len, tau, seed).map_err(to_py)
}

#[pymodule]
fn pycatgan(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyVocabulary>()?;
    m.add_class::<PyOracle>()?;
    m.add_class::<PyGenerator>()?;
    m.add_class::<PyDiscriminator>()?;
    m.add_function(wrap_pyfunction!(loss_ra, m)?)?;
    m.add_function(wrap_pyfunction!(d_loss_catra, m)?)?;
    m.add_function(wrap_pyfunction!(g_loss_catra, m)?)?;
    m.add_function(wrap_pyfunction!(g_loss_catrs, m)?)?;
    m.add_function(wrap_pyfunction!(temperature, m)?)?;
    m.add_function(wrap_pyfunction!(harmonic_mean, m)?)?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(nll_div, m)?)?;
    m.add_function(wrap_pyfunction!(nll_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    Ok(())
}
