//! Frozen random LSTM language models that define synthetic ground truth,
//! one per category.
//!
//! Every weight is drawn from a standard normal and rounded to `f32`, so a
//! model written to a checkpoint reloads bit-identically. Sequences start
//! from a dedicated start-symbol embedding (row `vocab_size` of the table)
//! with zero hidden and cell state.

use std::path::Path;

use ndarray::{concatenate, s, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{log_softmax_rows, sigmoid, softmax_rows, Matrix};
use crate::checkpoint::{Container, DType};
use crate::corpus::{LabeledDataset, TokenSequence};
use crate::error::{Error, Result};
use crate::metrics::harmonic_mean;
use crate::params::{rng_for, ParamStore};

const KIND: &str = "oracle";

#[derive(Debug, Clone, PartialEq)]
pub struct OracleModel {
    vocab_size: usize,
    hidden_size: usize,
    seed: u64,
    categories: Vec<ParamStore>,
}

/// Per-category and harmonic-mean NLL, in nats per sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct NllSummary {
    pub per_category: Vec<Option<f64>>,
    pub harmonic: f64,
}

struct LstmState {
    h: Matrix,
    c: Matrix,
}

impl OracleModel {
    pub fn new(k: usize, vocab_size: usize, hidden_size: usize, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("oracle needs at least one category"));
        }
        if vocab_size < 2 {
            return Err(Error::invalid("oracle vocabulary needs at least two tokens"));
        }
        if hidden_size == 0 {
            return Err(Error::invalid("oracle hidden size must be positive"));
        }
        let categories = (0..k)
            .map(|c| {
                let mut rng = rng_for(seed, &[c as u64]);
                let mut normal = |rows: usize, cols: usize| {
                    Matrix::from_shape_simple_fn((rows, cols), || {
                        let v: f64 = StandardNormal.sample(&mut rng);
                        v as f32 as f64
                    })
                };
                let mut store = ParamStore::new();
                store.insert("embedding", normal(vocab_size + 1, hidden_size));
                store.insert("w_gates", normal(2 * hidden_size, 4 * hidden_size));
                store.insert("b_gates", normal(1, 4 * hidden_size));
                store.insert("w_out", normal(hidden_size, vocab_size));
                store.insert("b_out", normal(1, vocab_size));
                store
            })
            .collect();
        Ok(Self {
            vocab_size,
            hidden_size,
            seed,
            categories,
        })
    }

    /// Builds a model from explicit per-category parameters (names
    /// `embedding`, `w_gates`, `b_gates`, `w_out`, `b_out`).
    pub fn from_params(vocab_size: usize, hidden_size: usize, categories: Vec<ParamStore>) -> Result<Self> {
        if categories.is_empty() {
            return Err(Error::invalid("oracle needs at least one category"));
        }
        let h = hidden_size;
        let expected = [
            ("embedding", (vocab_size + 1, h)),
            ("w_gates", (2 * h, 4 * h)),
            ("b_gates", (1, 4 * h)),
            ("w_out", (h, vocab_size)),
            ("b_out", (1, vocab_size)),
        ];
        for store in &categories {
            for (name, shape) in expected {
                let m = store
                    .get(name)
                    .ok_or_else(|| Error::invalid(format!("oracle parameter `{name}` missing")))?;
                if m.dim() != shape {
                    return Err(Error::invalid(format!(
                        "oracle parameter `{name}` has shape {:?}, expected {shape:?}",
                        m.dim()
                    )));
                }
            }
        }
        Ok(Self {
            vocab_size,
            hidden_size,
            seed: 0,
            categories,
        })
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self, category: usize) -> &ParamStore {
        &self.categories[category]
    }

    fn check_category(&self, category: usize) -> Result<()> {
        if category < self.categories.len() {
            Ok(())
        } else {
            Err(Error::CategoryOutOfRange {
                category,
                k: self.categories.len(),
            })
        }
    }

    fn start(&self, n: usize) -> LstmState {
        LstmState {
            h: Matrix::zeros((n, self.hidden_size)),
            c: Matrix::zeros((n, self.hidden_size)),
        }
    }

    /// One LSTM step; returns next-token logits.
    fn step(&self, p: &ParamStore, state: &mut LstmState, inputs: &[usize]) -> Matrix {
        let h = self.hidden_size;
        let x = p.expect("embedding").select(Axis(0), inputs);
        let xh = concatenate(Axis(1), &[x.view(), state.h.view()]).unwrap();
        let gates = xh.dot(p.expect("w_gates")) + p.expect("b_gates");
        let i = gates.slice(s![.., 0..h]).mapv(sigmoid);
        let f = gates.slice(s![.., h..2 * h]).mapv(sigmoid);
        let g = gates.slice(s![.., 2 * h..3 * h]).mapv(f64::tanh);
        let o = gates.slice(s![.., 3 * h..4 * h]).mapv(sigmoid);
        state.c = &f * &state.c + &i * &g;
        state.h = &o * &state.c.mapv(f64::tanh);
        state.h.dot(p.expect("w_out")) + p.expect("b_out")
    }

    /// Next-token distributions of `category` along each sequence prefix:
    /// entry `t` holds the rows for predicting token `t` (`n x vocab_size`).
    pub fn step_distributions(&self, category: usize, sequences: &[&[usize]]) -> Result<Vec<Matrix>> {
        self.check_category(category)?;
        let n = sequences.len();
        let len = sequences.first().map_or(0, |s| s.len());
        let p = &self.categories[category];
        let mut state = self.start(n);
        let mut inputs = vec![self.vocab_size; n];
        let mut out = Vec::with_capacity(len);
        for t in 0..len {
            out.push(softmax_rows(&self.step(p, &mut state, &inputs)));
            for (i, s) in sequences.iter().enumerate() {
                inputs[i] = s[t];
            }
        }
        Ok(out)
    }

    /// Ancestral samples of length `seq_len` from one category's model,
    /// labeled with that category.
    pub fn sample(&self, category: usize, n: usize, seq_len: usize, seed: u64) -> Result<LabeledDataset> {
        self.check_category(category)?;
        let p = &self.categories[category];
        let mut rng = rng_for(seed, &[category as u64, 0x5a]);
        let mut state = self.start(n);
        let mut inputs = vec![self.vocab_size; n];
        let mut ids = vec![Vec::with_capacity(seq_len); n];
        for _ in 0..seq_len {
            let probs = softmax_rows(&self.step(p, &mut state, &inputs));
            for (i, row) in probs.rows().into_iter().enumerate() {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = self.vocab_size - 1;
                for (j, &q) in row.iter().enumerate() {
                    acc += q;
                    if u < acc {
                        pick = j;
                        break;
                    }
                }
                ids[i].push(pick);
                inputs[i] = pick;
            }
        }
        let sequences = ids.into_iter().map(TokenSequence::full).collect();
        LabeledDataset::new(sequences, vec![category; n], self.categories.len(), seq_len)
    }

    /// Log-probability (nats) of each sequence under one category's model.
    pub fn log_probs(&self, category: usize, sequences: &[&[usize]]) -> Result<Vec<f64>> {
        self.check_category(category)?;
        if sequences.is_empty() {
            return Ok(Vec::new());
        }
        let len = sequences[0].len();
        for s in sequences {
            if s.len() != len {
                return Err(Error::Dimension {
                    context: "oracle scoring length",
                    expected: len,
                    actual: s.len(),
                });
            }
            if let Some(&bad) = s.iter().find(|&&t| t >= self.vocab_size) {
                return Err(Error::TokenOutOfRange {
                    id: bad,
                    size: self.vocab_size,
                });
            }
        }
        let p = &self.categories[category];
        let mut state = self.start(sequences.len());
        let mut inputs = vec![self.vocab_size; sequences.len()];
        let mut total = vec![0.0; sequences.len()];
        for t in 0..len {
            let logp = log_softmax_rows(&self.step(p, &mut state, &inputs));
            for (i, s) in sequences.iter().enumerate() {
                total[i] += logp[[i, s[t]]];
                inputs[i] = s[t];
            }
        }
        Ok(total)
    }

    /// Mean NLL per category (sequences routed by label) and the harmonic
    /// mean over the categories present.
    pub fn nll(&self, sequences: &[TokenSequence], labels: &[usize]) -> Result<NllSummary> {
        if sequences.len() != labels.len() {
            return Err(Error::Dimension {
                context: "oracle nll labels",
                expected: sequences.len(),
                actual: labels.len(),
            });
        }
        let k = self.categories.len();
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::CategoryOutOfRange { category: bad, k });
        }
        let mut per_category = vec![None; k];
        for (c, slot) in per_category.iter_mut().enumerate() {
            let group: Vec<&[usize]> = sequences
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == c)
                .map(|(s, _)| s.ids.as_slice())
                .collect();
            if group.is_empty() {
                continue;
            }
            let lp = self.log_probs(c, &group)?;
            *slot = Some(-lp.iter().sum::<f64>() / lp.len() as f64);
        }
        let present: Vec<f64> = per_category.iter().flatten().copied().collect();
        let harmonic = if present.is_empty() {
            f64::NAN
        } else {
            harmonic_mean(&present)?
        };
        Ok(NllSummary {
            per_category,
            harmonic,
        })
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(KIND);
        c.set_meta("vocab_size", self.vocab_size);
        c.set_meta("hidden_size", self.hidden_size);
        c.set_meta("seed", self.seed);
        c.set_meta("num_categories", self.categories.len());
        for (i, store) in self.categories.iter().enumerate() {
            c.push_store(&format!("c{i}."), DType::F32, store);
        }
        c
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::load(path)?;
        c.expect_kind(KIND, path)?;
        let bad = |what: &str| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: format!("missing `{what}`"),
        };
        let vocab_size: usize = c.meta("vocab_size").ok_or_else(|| bad("vocab_size"))?;
        let hidden_size: usize = c.meta("hidden_size").ok_or_else(|| bad("hidden_size"))?;
        let seed: u64 = c.meta("seed").ok_or_else(|| bad("seed"))?;
        let k: usize = c.meta("num_categories").ok_or_else(|| bad("num_categories"))?;
        let categories = (0..k).map(|i| c.store(&format!("c{i}."))).collect();
        let mut model = Self::from_params(vocab_size, hidden_size, categories)?;
        model.seed = seed;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Oracle whose output layer ignores the state: `w_out = 0` and the given
    /// bias.
    fn bias_only(vocab: usize, bias: Vec<f64>) -> OracleModel {
        let mut m = OracleModel::new(1, vocab, 3, 0).unwrap();
        let store = &mut m.categories[0];
        store.insert("w_out", Matrix::zeros((3, vocab)));
        store.insert("b_out", Matrix::from_shape_vec((1, vocab), bias).unwrap());
        m
    }

    #[test]
    fn determinism_and_independence() {
        let a = OracleModel::new(2, 6, 4, 11).unwrap();
        let b = OracleModel::new(2, 6, 4, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sample(1, 20, 5, 3).unwrap(), b.sample(1, 20, 5, 3).unwrap());
        assert_ne!(a.params(0), a.params(1));
    }

    #[test]
    fn sampling_contract() {
        let m = OracleModel::new(2, 5, 4, 1).unwrap();
        assert!(m.sample(0, 0, 7, 0).unwrap().is_empty());
        let ds = m.sample(1, 50, 7, 0).unwrap();
        assert_eq!(ds.len(), 50);
        assert!(ds.labels.iter().all(|&l| l == 1));
        assert!(ds.max_id().unwrap() < 5);
        assert!(m.sample(2, 1, 1, 0).is_err());
    }

    #[test]
    fn synthetic_dataset_size() {
        let m = OracleModel::new(2, 16, 8, 5).unwrap();
        let mut ds = m.sample(0, 10_000, 4, 1).unwrap();
        ds.extend(m.sample(1, 10_000, 4, 1).unwrap()).unwrap();
        assert_eq!(ds.len(), 20_000);
    }

    #[test]
    fn rows_are_distributions() {
        let m = OracleModel::new(1, 7, 5, 2).unwrap();
        let ds = m.sample(0, 10, 6, 0).unwrap();
        let seqs: Vec<&[usize]> = ds.sequences.iter().map(|s| s.ids.as_slice()).collect();
        for rows in m.step_distributions(0, &seqs).unwrap() {
            for row in rows.rows() {
                assert!(row.iter().all(|&p| p >= 0.0));
                assert!((row.sum() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn deterministic_oracle_has_zero_nll() {
        let m = bias_only(4, vec![0.0, 1000.0, 0.0, 0.0]);
        let seq = TokenSequence::full(vec![1, 1, 1]);
        let s = m.nll(&[seq], &[0]).unwrap();
        assert_eq!(s.per_category[0], Some(0.0));
    }

    #[test]
    fn uniform_oracle_nll() {
        let m = bias_only(8, vec![0.0; 8]);
        let seqs = vec![TokenSequence::full(vec![0, 3, 7, 2]), TokenSequence::full(vec![5, 5, 5, 5])];
        let s = m.nll(&seqs, &[0, 0]).unwrap();
        assert!((s.per_category[0].unwrap() - 4.0 * 8f64.ln()).abs() < 1e-9);
        assert!((4.0 * 8f64.ln() - 8.3178).abs() < 1e-4);
    }

    #[test]
    fn nll_rejects_bad_label_and_is_order_free() {
        let m = OracleModel::new(2, 5, 4, 9).unwrap();
        let ds = m.sample(0, 30, 4, 1).unwrap();
        assert!(matches!(
            m.nll(&ds.sequences, &vec![2; 30]),
            Err(Error::CategoryOutOfRange { .. })
        ));
        let forward = m.nll(&ds.sequences, &ds.labels).unwrap();
        let mut rev = ds.sequences.clone();
        rev.reverse();
        let backward = m.nll(&rev, &ds.labels).unwrap();
        assert!((forward.harmonic - backward.harmonic).abs() < 1e-12);
        let again = m.nll(&ds.sequences, &ds.labels).unwrap();
        assert_eq!(forward.harmonic.to_bits(), again.harmonic.to_bits());
    }

    #[test]
    fn checkpoint_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("oracle.ckpt");
        let m = OracleModel::new(2, 6, 4, 77).unwrap();
        m.save(&p).unwrap();
        assert_eq!(OracleModel::load(&p).unwrap(), m);
    }
}
