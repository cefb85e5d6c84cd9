//! Quality and diversity metrics with per-category harmonic aggregation.
//!
//! All NLL values are in nats, summed over time steps and averaged over
//! sequences.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledDataset, TokenSequence};
use crate::error::{Error, Result};
use crate::generator::GeneratorParams;
use crate::oracle::OracleModel;
use crate::params::rng_for;

const SAMPLE_TAG: u64 = 0x6d65;

/// `len / Σ 1/v`. Any zero yields zero (the continuous limit).
pub fn harmonic_mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("harmonic mean of an empty list"));
    }
    if let Some(v) = values.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::invalid(format!("harmonic mean needs non-negative values, got {v}")));
    }
    if values.contains(&0.0) {
        return Ok(0.0);
    }
    Ok(values.len() as f64 / values.iter().map(|v| 1.0 / v).sum::<f64>())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Hard-token samples drawn for metric evaluation. The temperature does not
/// change the sampled argmax, so samples are drawn at τ = 1.
pub fn sample_tokens(
    gen: &GeneratorParams,
    category: usize,
    n: usize,
    seq_len: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::invalid("metric sample count must be positive"));
    }
    let mut rng = rng_for(seed, &[SAMPLE_TAG, category as u64]);
    Ok(gen
        .generate(category, n, seq_len, 1.0, &mut rng)?
        .into_iter()
        .map(|s| s.hard_ids)
        .collect())
}

/// Self-scored NLL of the generator's own samples.
pub fn nll_div(gen: &GeneratorParams, category: usize, n: usize, seq_len: usize, seed: u64) -> Result<f64> {
    let samples = sample_tokens(gen, category, n, seq_len, seed)?;
    nll_div_of(gen, category, &samples)
}

/// NLL_div for samples that were already drawn.
pub fn nll_div_of(gen: &GeneratorParams, category: usize, samples: &[Vec<usize>]) -> Result<f64> {
    let refs: Vec<&[usize]> = samples.iter().map(Vec::as_slice).collect();
    let lp = gen.log_probs(&refs, &vec![category; refs.len()])?;
    Ok(-mean(&lp))
}

/// Teacher-forced NLL of real sequences under the generator.
pub fn nll_gen(gen: &GeneratorParams, sequences: &[TokenSequence], labels: &[usize]) -> Result<f64> {
    if sequences.is_empty() {
        return Err(Error::invalid("nll_gen needs at least one sequence"));
    }
    let refs: Vec<&[usize]> = sequences.iter().map(|s| s.ids.as_slice()).collect();
    let lp = gen.log_probs(&refs, labels)?;
    Ok(-mean(&lp))
}

/// NLL of generated samples under the oracle.
pub fn nll_oracle_metric(
    oracle: &OracleModel,
    gen: &GeneratorParams,
    category: usize,
    n: usize,
    seq_len: usize,
    seed: u64,
) -> Result<f64> {
    let samples = sample_tokens(gen, category, n, seq_len, seed)?;
    nll_oracle_of(oracle, category, &samples)
}

pub fn nll_oracle_of(oracle: &OracleModel, category: usize, samples: &[Vec<usize>]) -> Result<f64> {
    let refs: Vec<&[usize]> = samples.iter().map(Vec::as_slice).collect();
    let lp = oracle.log_probs(category, &refs)?;
    Ok(-mean(&lp))
}

/// Reference statistics for repeated sentence-level BLEU: for every order,
/// the largest count of each n-gram in any single reference.
#[derive(Debug, Clone)]
pub struct BleuReference<T> {
    max_order: usize,
    max_counts: Vec<HashMap<Vec<T>, usize>>,
    lengths: Vec<usize>,
}

fn ngram_counts<T: Eq + Hash + Clone>(s: &[T], n: usize) -> HashMap<Vec<T>, usize> {
    let mut m = HashMap::new();
    if s.len() >= n {
        for w in s.windows(n) {
            *m.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    m
}

impl<T: Eq + Hash + Clone> BleuReference<T> {
    pub fn new(references: &[Vec<T>], max_order: usize) -> Result<Self> {
        if references.is_empty() {
            return Err(Error::invalid("BLEU needs at least one reference"));
        }
        if max_order == 0 {
            return Err(Error::invalid("BLEU order must be positive"));
        }
        let mut max_counts = vec![HashMap::new(); max_order];
        for r in references {
            for (i, table) in max_counts.iter_mut().enumerate() {
                for (gram, c) in ngram_counts(r, i + 1) {
                    let e = table.entry(gram).or_insert(0);
                    *e = (*e).max(c);
                }
            }
        }
        let mut lengths: Vec<usize> = references.iter().map(Vec::len).collect();
        lengths.sort_unstable();
        lengths.dedup();
        Ok(Self {
            max_order,
            max_counts,
            lengths,
        })
    }

    /// Closest reference length; ties go to the shorter one.
    fn closest_length(&self, c: usize) -> usize {
        *self
            .lengths
            .iter()
            .min_by_key(|&&r| (r.abs_diff(c), r))
            .expect("non-empty references")
    }

    /// Unsmoothed sentence BLEU with uniform weights over orders `1..=n`.
    pub fn sentence(&self, candidate: &[T], n: usize) -> f64 {
        assert!(n >= 1 && n <= self.max_order, "order {n} outside 1..={}", self.max_order);
        if candidate.is_empty() {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for order in 1..=n {
            let counts = ngram_counts(candidate, order);
            let total: usize = counts.values().sum();
            let clipped: usize = counts
                .iter()
                .map(|(g, &c)| c.min(self.max_counts[order - 1].get(g).copied().unwrap_or(0)))
                .sum();
            if clipped == 0 {
                return 0.0;
            }
            log_sum += (clipped as f64 / total as f64).ln();
        }
        let c = candidate.len();
        let r = self.closest_length(c);
        let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
        bp * (log_sum / n as f64).exp()
    }
}

/// Mean sentence-level BLEU-n of `candidates` against the whole reference set.
pub fn bleu_n<T: Eq + Hash + Clone>(candidates: &[Vec<T>], references: &[Vec<T>], n: usize) -> Result<f64> {
    if !(2..=5).contains(&n) {
        return Err(Error::invalid(format!("BLEU order must be in 2..=5, got {n}")));
    }
    if candidates.is_empty() {
        return Err(Error::invalid("BLEU needs at least one candidate"));
    }
    let index = BleuReference::new(references, n)?;
    Ok(candidates.iter().map(|c| index.sentence(c, n)).sum::<f64>() / candidates.len() as f64)
}

/// Per-category metric table with harmonic-mean aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_category: BTreeMap<usize, BTreeMap<String, f64>>,
    pub harmonic: BTreeMap<String, f64>,
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl MetricsReport {
    /// Builds a report, computing each harmonic value over the categories
    /// that carry that metric.
    pub fn from_per_category(
        per_category: BTreeMap<usize, BTreeMap<String, f64>>,
        meta: BTreeMap<String, serde_json::Value>,
    ) -> Result<Self> {
        let mut by_metric: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for metrics in per_category.values() {
            for (name, &v) in metrics {
                by_metric.entry(name.clone()).or_default().push(v);
            }
        }
        let mut harmonic = BTreeMap::new();
        for (name, values) in by_metric {
            harmonic.insert(name, harmonic_mean(&values)?);
        }
        Ok(Self {
            per_category,
            harmonic,
            meta,
        })
    }

    /// Whether the stored harmonic values match a fresh recomputation.
    pub fn is_consistent(&self) -> bool {
        Self::from_per_category(self.per_category.clone(), self.meta.clone())
            .is_ok_and(|r| r.harmonic == self.harmonic)
    }

    /// One JSON object per category followed by one for the aggregates.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (c, metrics) in &self.per_category {
            let rec = serde_json::json!({"scope": "category", "category": c, "metrics": metrics, "meta": self.meta});
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        let rec = serde_json::json!({"scope": "harmonic", "metrics": self.harmonic, "meta": self.meta});
        out.push_str(&rec.to_string());
        out.push('\n');
        out
    }

    /// Aligned plain-text table, one row per category plus a harmonic row.
    pub fn to_table(&self) -> String {
        let names: Vec<&String> = self.harmonic.keys().collect();
        let width = names.iter().map(|n| n.len()).max().unwrap_or(0).max(10);
        let mut out = String::new();
        let _ = write!(out, "{:<10}", "category");
        for n in &names {
            let _ = write!(out, " {:>width$}", n);
        }
        out.push('\n');
        let mut row = |label: String, metrics: &BTreeMap<String, f64>| {
            let _ = write!(out, "{label:<10}");
            for n in &names {
                match metrics.get(*n) {
                    Some(v) => {
                        let _ = write!(out, " {:>width$.4}", v);
                    }
                    None => {
                        let _ = write!(out, " {:>width$}", "-");
                    }
                }
            }
            out.push('\n');
        };
        for (c, metrics) in &self.per_category {
            row(c.to_string(), metrics);
        }
        row("harmonic".into(), &self.harmonic);
        out
    }
}

/// Inputs to the full metric suite.
pub struct EvalSuite<'a> {
    pub gen: &'a GeneratorParams,
    /// Present in synthetic mode only.
    pub oracle: Option<&'a OracleModel>,
    /// Held-out real data for NLL_gen and BLEU references.
    pub test: Option<&'a LabeledDataset>,
    pub samples_per_category: usize,
    pub seq_len: usize,
    pub seed: u64,
    pub bleu_orders: Vec<usize>,
    /// Tokens after which a sequence is considered finished (BLEU only).
    pub pad_id: Option<usize>,
}

fn strip_pad(ids: &[usize], pad: Option<usize>) -> Vec<usize> {
    match pad.and_then(|p| ids.iter().position(|&t| t == p)) {
        Some(end) => ids[..end].to_vec(),
        None => ids.to_vec(),
    }
}

impl EvalSuite<'_> {
    /// Evaluates every available metric per category on a shared sample set.
    pub fn run(&self, meta: BTreeMap<String, serde_json::Value>) -> Result<MetricsReport> {
        let k = self.gen.config.num_categories;
        let mut per_category = BTreeMap::new();
        for c in 0..k {
            let samples = sample_tokens(self.gen, c, self.samples_per_category, self.seq_len, self.seed)?;
            let mut m = BTreeMap::new();
            m.insert("nll_div".to_string(), nll_div_of(self.gen, c, &samples)?);
            if let Some(oracle) = self.oracle {
                m.insert("nll_oracle".to_string(), nll_oracle_of(oracle, c, &samples)?);
            }
            if let Some(test) = self.test {
                let idx = test.category_indices(c);
                if !idx.is_empty() {
                    let (seqs, labels) = test.subset(&idx);
                    m.insert("nll_gen".to_string(), nll_gen(self.gen, &seqs, &labels)?);
                    if !self.bleu_orders.is_empty() {
                        let refs: Vec<Vec<usize>> = seqs.iter().map(|s| s.content().to_vec()).collect();
                        let cands: Vec<Vec<usize>> = samples.iter().map(|s| strip_pad(s, self.pad_id)).collect();
                        let top = *self.bleu_orders.iter().max().unwrap();
                        let index = BleuReference::new(&refs, top)?;
                        for &n in &self.bleu_orders {
                            if !(2..=5).contains(&n) {
                                return Err(Error::invalid(format!("BLEU order must be in 2..=5, got {n}")));
                            }
                            let v = cands.iter().map(|s| index.sentence(s, n)).sum::<f64>() / cands.len() as f64;
                            m.insert(format!("bleu{n}"), v);
                        }
                    }
                }
            }
            per_category.insert(c, m);
        }
        MetricsReport::from_per_category(per_category, meta)
    }
}
