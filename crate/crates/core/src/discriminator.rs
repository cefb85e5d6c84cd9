//! CNN sequence scorer: embedding, multi-width 1-D convolutions with
//! max-over-time pooling, one hidden layer, one unbounded logit.
//!
//! Inputs are per-step probability rows over the vocabulary; discrete
//! sequences enter as one-hot rows so both kinds share one code path.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Matrix, Var};
use crate::checkpoint::{Container, DType};
use crate::corpus::TokenSequence;
use crate::error::{Error, Result};
use crate::generator::{check_same_layout, SoftSequence};
use crate::params::{rng_for, BoundParams, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub vocab_size: usize,
    pub emb_dim: usize,
    pub filter_widths: Vec<usize>,
    pub num_filters: usize,
    pub hidden: usize,
}

impl DiscriminatorConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            emb_dim: 64,
            filter_widths: vec![2, 3, 4],
            num_filters: 16,
            hidden: 64,
        }
    }

    pub fn validate(&self, seq_len: usize) -> Result<()> {
        if self.vocab_size == 0 || self.emb_dim == 0 || self.num_filters == 0 || self.hidden == 0 {
            return Err(Error::Config("discriminator sizes must be positive".into()));
        }
        if self.filter_widths.is_empty() {
            return Err(Error::Config("discriminator needs at least one filter width".into()));
        }
        if let Some(&w) = self.filter_widths.iter().find(|&&w| w == 0 || w > seq_len) {
            return Err(Error::Config(format!(
                "filter width {w} does not fit sequence length {seq_len}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorParams {
    pub config: DiscriminatorConfig,
    pub store: ParamStore,
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_shape_simple_fn((rows, cols), || rng.random_range(-a..a))
}

impl DiscriminatorParams {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        let c = &config;
        let mut rng = rng_for(seed, &[0xd1]);
        let mut store = ParamStore::new();
        store.insert("embedding", glorot(c.vocab_size, c.emb_dim, &mut rng));
        for &w in &c.filter_widths {
            store.insert(format!("conv{w}.w"), glorot(w * c.emb_dim, c.num_filters, &mut rng));
            store.insert(format!("conv{w}.b"), Matrix::zeros((1, c.num_filters)));
        }
        let features = c.filter_widths.len() * c.num_filters;
        store.insert("hidden.w", glorot(features, c.hidden, &mut rng));
        store.insert("hidden.b", Matrix::zeros((1, c.hidden)));
        store.insert("out.w", glorot(c.hidden, 1, &mut rng));
        store.insert("out.b", Matrix::zeros((1, 1)));
        Ok(Self { config, store })
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn bind(&self, graph: &mut Graph, tracked: bool) -> BoundDiscriminator<'_> {
        BoundDiscriminator {
            config: &self.config,
            vars: self.store.bind(graph, tracked),
        }
    }

    /// Logits for relaxed sequences, in input order.
    pub fn discriminate(&self, batch: &[SoftSequence]) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let steps = batch[0].rows.nrows();
        for s in batch {
            if s.rows.ncols() != self.config.vocab_size {
                return Err(Error::Dimension {
                    context: "discriminator row width",
                    expected: self.config.vocab_size,
                    actual: s.rows.ncols(),
                });
            }
            if s.rows.nrows() != steps {
                return Err(Error::Dimension {
                    context: "discriminator sequence length",
                    expected: steps,
                    actual: s.rows.nrows(),
                });
            }
        }
        let per_step: Vec<Matrix> = (0..steps)
            .map(|t| {
                Matrix::from_shape_fn((batch.len(), self.config.vocab_size), |(b, j)| {
                    batch[b].rows[[t, j]]
                })
            })
            .collect();
        self.score_rows(per_step)
    }

    /// Logits for discrete sequences via their one-hot rows.
    pub fn discriminate_tokens(&self, batch: &[TokenSequence]) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let refs: Vec<&[usize]> = batch.iter().map(|s| s.ids.as_slice()).collect();
        self.score_rows(one_hot_steps(&refs, self.config.vocab_size)?)
    }

    fn score_rows(&self, per_step: Vec<Matrix>) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let d = self.bind(&mut g, false);
        let rows: Vec<Var> = per_step.into_iter().map(|m| g.constant(m)).collect();
        let logits = d.forward(&mut g, &rows)?;
        Ok(g.value(logits).iter().copied().collect())
    }

    pub fn write_into(&self, c: &mut Container, prefix: &str) {
        c.set_meta(&format!("{prefix}config"), &self.config);
        c.push_store(prefix, DType::F64, &self.store);
    }

    pub fn read_from(c: &Container, prefix: &str) -> Result<Self> {
        let config: DiscriminatorConfig = c
            .meta(&format!("{prefix}config"))
            .ok_or_else(|| Error::invalid(format!("container lacks `{prefix}config`")))?;
        let fresh = Self::new(config, 0)?;
        let store = c.store(prefix);
        check_same_layout(&fresh.store, &store, "discriminator")?;
        Ok(Self {
            config: fresh.config,
            store,
        })
    }
}

/// Time-major one-hot rows: entry `t` is `B x vocab`.
pub fn one_hot_steps(sequences: &[&[usize]], vocab: usize) -> Result<Vec<Matrix>> {
    let steps = sequences.first().map_or(0, |s| s.len());
    for s in sequences {
        if s.len() != steps {
            return Err(Error::Dimension {
                context: "one-hot sequence length",
                expected: steps,
                actual: s.len(),
            });
        }
        if let Some(&bad) = s.iter().find(|&&t| t >= vocab) {
            return Err(Error::TokenOutOfRange { id: bad, size: vocab });
        }
    }
    Ok((0..steps)
        .map(|t| {
            let mut m = Matrix::zeros((sequences.len(), vocab));
            for (b, s) in sequences.iter().enumerate() {
                m[[b, s[t]]] = 1.0;
            }
            m
        })
        .collect())
}

pub struct BoundDiscriminator<'a> {
    pub config: &'a DiscriminatorConfig,
    pub vars: BoundParams,
}

impl BoundDiscriminator<'_> {
    /// `rows[t]` is the `B x vocab` input at step `t`; returns `B x 1` logits.
    pub fn forward(&self, g: &mut Graph, rows: &[Var]) -> Result<Var> {
        let c = self.config;
        if let Some(&w) = c.filter_widths.iter().find(|&&w| w > rows.len()) {
            return Err(Error::Dimension {
                context: "discriminator filter width vs sequence length",
                expected: w,
                actual: rows.len(),
            });
        }
        for r in rows {
            let width = g.shape(*r).1;
            if width != c.vocab_size {
                return Err(Error::Dimension {
                    context: "discriminator row width",
                    expected: c.vocab_size,
                    actual: width,
                });
            }
        }
        let table = self.vars.var("embedding");
        let embedded: Vec<Var> = rows.iter().map(|&r| g.matmul(r, table)).collect();
        let mut pooled = Vec::with_capacity(c.filter_widths.len());
        for &w in &c.filter_widths {
            let (cw, cb) = (
                self.vars.var(&format!("conv{w}.w")),
                self.vars.var(&format!("conv{w}.b")),
            );
            let windows: Vec<Var> = (0..=rows.len() - w)
                .map(|p| {
                    let window = if w == 1 {
                        embedded[p]
                    } else {
                        g.concat_cols(&embedded[p..p + w])
                    };
                    let z = g.matmul(window, cw);
                    let z = g.add(z, cb);
                    g.relu(z)
                })
                .collect();
            pooled.push(g.max_of(&windows));
        }
        let features = g.concat_cols(&pooled);
        let h = g.matmul(features, self.vars.var("hidden.w"));
        let h = g.add(h, self.vars.var("hidden.b"));
        let h = g.relu(h);
        let out = g.matmul(h, self.vars.var("out.w"));
        Ok(g.add(out, self.vars.var("out.b")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DiscriminatorParams {
        let cfg = DiscriminatorConfig {
            vocab_size: 5,
            emb_dim: 3,
            filter_widths: vec![2, 3],
            num_filters: 4,
            hidden: 6,
        };
        DiscriminatorParams::new(cfg, 1).unwrap()
    }

    fn one_hot_soft(ids: &[usize], vocab: usize) -> SoftSequence {
        SoftSequence {
            rows: Matrix::from_shape_fn((ids.len(), vocab), |(t, j)| f64::from(ids[t] == j)),
            hard_ids: ids.to_vec(),
            category: 0,
            tau: 1.0,
        }
    }

    #[test]
    fn one_hot_and_tokens_agree_bitwise() {
        let d = tiny();
        let seqs = [vec![0, 4, 2, 2], vec![1, 1, 3, 0]];
        let soft: Vec<SoftSequence> = seqs.iter().map(|s| one_hot_soft(s, 5)).collect();
        let tokens: Vec<TokenSequence> = seqs.iter().map(|s| TokenSequence::full(s.clone())).collect();
        let a = d.discriminate(&soft).unwrap();
        let b = d.discriminate_tokens(&tokens).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn batch_permutation_permutes_logits() {
        let d = tiny();
        let seqs: Vec<TokenSequence> = [[0, 1, 2, 3], [4, 4, 4, 4], [2, 0, 1, 3]]
            .iter()
            .map(|s| TokenSequence::full(s.to_vec()))
            .collect();
        let fwd = d.discriminate_tokens(&seqs).unwrap();
        assert_eq!(fwd.len(), 3);
        let perm = vec![seqs[2].clone(), seqs[0].clone(), seqs[1].clone()];
        let back = d.discriminate_tokens(&perm).unwrap();
        assert!((back[0] - fwd[2]).abs() < 1e-12);
        assert!((back[1] - fwd[0]).abs() < 1e-12);
        assert!((back[2] - fwd[1]).abs() < 1e-12);
    }

    #[test]
    fn zero_network_scores_zero() {
        let mut d = tiny();
        for (_, m) in d.store.iter_mut() {
            m.fill(0.0);
        }
        let logits = d
            .discriminate_tokens(&[TokenSequence::full(vec![0, 1, 2]), TokenSequence::full(vec![4, 4, 4])])
            .unwrap();
        assert_eq!(logits, vec![0.0, 0.0]);
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let d = tiny();
        let bad = one_hot_soft(&[0, 1, 2], 7);
        assert!(matches!(d.discriminate(&[bad]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn logit_gradient_wrt_soft_rows_matches_finite_differences() {
        let d = tiny();
        let rows: Vec<Matrix> = (0..4)
            .map(|t| {
                let raw = Matrix::from_shape_fn((1, 5), |(_, j)| ((t * 5 + j) as f64 * 0.37).sin());
                crate::autodiff::softmax_rows(&raw)
            })
            .collect();
        let eval = |rows: &[Matrix]| {
            let mut g = Graph::new();
            let b = d.bind(&mut g, false);
            let vars: Vec<Var> = rows.iter().map(|m| g.constant(m.clone())).collect();
            let out = b.forward(&mut g, &vars).unwrap();
            g.scalar_value(out)
        };
        let mut g = Graph::new();
        let b = d.bind(&mut g, false);
        let vars: Vec<Var> = rows.iter().map(|m| g.param(m.clone())).collect();
        let out = b.forward(&mut g, &vars).unwrap();
        let grads = g.backward(out);
        let h = 1e-6;
        for t in 0..rows.len() {
            let analytic = grads.get(vars[t]);
            for j in 0..5 {
                let mut plus = rows.clone();
                plus[t][[0, j]] += h;
                let mut minus = rows.clone();
                minus[t][[0, j]] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic[[0, j]];
                let rel = (a - numeric).abs() / numeric.abs().max(1e-8);
                assert!(rel < 1e-3 || (a - numeric).abs() < 1e-9, "t={t} j={j}: {a} vs {numeric}");
            }
        }
    }

    #[test]
    fn config_rejects_wide_filters() {
        let cfg = DiscriminatorConfig::new(10);
        assert!(cfg.validate(3).is_err());
        assert!(cfg.validate(4).is_ok());
    }

    #[test]
    fn checkpoint_round_trip() {
        let d = tiny();
        let mut c = Container::new("discriminator");
        d.write_into(&mut c, "disc.");
        assert_eq!(DiscriminatorParams::read_from(&c, "disc.").unwrap(), d);
    }
}
