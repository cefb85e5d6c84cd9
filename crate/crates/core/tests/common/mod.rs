//! Helpers shared by the integration test binaries: independent reference
//! implementations and the desk-scale benchmark driver.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use catgan::config::ExperimentConfig;
use catgan::evolution::{Individual, MutationDirection, Objective};
use catgan::generator::{GeneratorConfig, GeneratorParams};
use catgan::params::Adam;
use catgan::runner::{cmd_pretrain, cmd_synth, cmd_train, read_records, PretrainRecord, RunPaths};
use catgan::trainer::RoundRecord;

pub fn tiny_config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.toml")
}

/// The shipped desk-scale benchmark configuration with overrides applied.
pub fn tiny_config(overrides: &[&str]) -> ExperimentConfig {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    ExperimentConfig::load_with_overrides(Some(&tiny_config_path()), &o).expect("tiny config")
}

/// A much smaller variant for structural tests.
pub fn micro_config(overrides: &[&str]) -> ExperimentConfig {
    let mut o = vec![
        "samples_per_category=200",
        "test_samples_per_category=50",
        "pretrain_epochs=2",
        "rounds=4",
        "metric_samples=50",
        "eval_n=16",
        "batch_size=16",
        "d_steps=2",
    ];
    o.extend_from_slice(overrides);
    tiny_config(&o)
}

pub struct BenchRun {
    pub paths: RunPaths,
    pub pretrain: Vec<PretrainRecord>,
    pub rounds: Vec<RoundRecord>,
}

/// synth, pretrain and train into `dir`.
pub fn run_benchmark(cfg: &ExperimentConfig, dir: &Path) -> BenchRun {
    let paths = RunPaths::new(dir);
    paths.prepare(cfg).unwrap();
    cmd_synth(cfg, &paths).unwrap();
    cmd_pretrain(cfg, &paths, false).unwrap();
    cmd_train(cfg, &paths, false, None).unwrap();
    read_bench(paths)
}

pub fn read_bench(paths: RunPaths) -> BenchRun {
    let (pretrain, skipped) = read_records::<PretrainRecord>(&paths.pretrain_log()).unwrap();
    assert_eq!(skipped, 0);
    let (rounds, skipped) = read_records::<RoundRecord>(&paths.train_log()).unwrap();
    assert_eq!(skipped, 0);
    BenchRun { paths, pretrain, rounds }
}

/// All `v^t` sequences over ids `0..v`, in lexicographic order.
pub fn enumerate_sequences(v: usize, t: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..t {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..v).map(move |x| {
                    let mut q = p.clone();
                    q.push(x);
                    q
                })
            })
            .collect();
    }
    out
}

fn count_in(seq: &[usize], gram: &[usize]) -> usize {
    if seq.len() < gram.len() {
        return 0;
    }
    (0..=seq.len() - gram.len()).filter(|&i| &seq[i..i + gram.len()] == gram).count()
}

/// Sentence BLEU-n by direct n-gram scanning: clipped precision of every
/// order against the per-reference maximum count, geometric mean, brevity
/// penalty from the closest reference length (shorter on ties).
pub fn brute_bleu(cand: &[usize], refs: &[Vec<usize>], n: usize) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for order in 1..=n {
        if cand.len() < order {
            return 0.0;
        }
        let positions = cand.len() - order + 1;
        let mut seen: Vec<&[usize]> = Vec::new();
        let mut clipped = 0;
        for i in 0..positions {
            let gram = &cand[i..i + order];
            if seen.contains(&gram) {
                continue;
            }
            seen.push(gram);
            let mine = count_in(cand, gram);
            let cap = refs.iter().map(|r| count_in(r, gram)).max().unwrap_or(0);
            clipped += mine.min(cap);
        }
        if clipped == 0 {
            return 0.0;
        }
        log_sum += (clipped as f64 / positions as f64).ln();
    }
    let c = cand.len();
    let mut best = refs[0].len();
    for r in refs {
        let (d, bd) = (r.len().abs_diff(c), best.abs_diff(c));
        if d < bd || (d == bd && r.len() < best) {
            best = r.len();
        }
    }
    let bp = if c > best { 1.0 } else { (1.0 - best as f64 / c as f64).exp() };
    bp * (log_sum / n as f64).exp()
}

/// A child carrying the given fitness values, for selection tables.
pub fn table_child(offset: i32, objective: Objective, f_temp: f64, f_obj: Option<f64>) -> Individual {
    let cfg = GeneratorConfig {
        emb_dim: 2,
        cat_dim: 2,
        mem_dim: 2,
        num_heads: 1,
        mlp_hidden: 2,
        ..GeneratorConfig::new(3, 1, 0)
    };
    let params = GeneratorParams::new(cfg, 0).unwrap();
    let optimizer = Adam::new(&params.store, 0.1);
    Individual {
        direction: MutationDirection {
            temp_offset: offset,
            objective,
        },
        f_temp: Some(f_temp),
        f_obj,
        ..Individual::new(params, optimizer)
    }
}

/// Structural contract of one logged round under the given ablation flags.
pub fn check_round_structure(r: &RoundRecord, no_h: bool, no_t: bool, no_o: bool) -> Result<(), String> {
    let expected_children = if no_h {
        1
    } else {
        (if no_t { 1 } else { 3 }) * (if no_o { 1 } else { 2 })
    };
    if r.children.len() != expected_children {
        return Err(format!("round {}: {} children, expected {expected_children}", r.round, r.children.len()));
    }
    let expected_stage = if no_h || no_o { 1 } else { 2 };
    if r.stage_temp_survivors.len() != expected_stage {
        return Err(format!(
            "round {}: {} stage-temp survivors, expected {expected_stage}",
            r.round,
            r.stage_temp_survivors.len()
        ));
    }
    if r.survivor >= r.children.len() || !r.stage_temp_survivors.contains(&r.survivor) {
        return Err(format!("round {}: survivor {} is not a stage winner", r.round, r.survivor));
    }
    if (no_h || no_t)
        && r.children.iter().any(|c| c.temp_offset != 0) {
            return Err(format!("round {}: non-zero temperature offset", r.round));
        }
    if (no_h || no_o)
        && r.children.iter().any(|c| c.objective != Objective::CatRa) {
            return Err(format!("round {}: objective other than CatRa", r.round));
        }
    if !no_h {
        // Stage winners are maximal within their objective group, and the
        // survivor is maximal among stage winners.
        for &w in &r.stage_temp_survivors {
            let wc = &r.children[w];
            let wf = wc.f_temp.ok_or("stage winner without f_temp")?;
            for c in r.children.iter().filter(|c| c.objective == wc.objective && c.valid) {
                if c.f_temp.unwrap() > wf {
                    return Err(format!("round {}: stage winner {w} is not maximal", r.round));
                }
            }
        }
        let sf = r.children[r.survivor].f_obj.ok_or("survivor without f_obj")?;
        for &w in &r.stage_temp_survivors {
            if r.children[w].f_obj.unwrap() > sf {
                return Err(format!("round {}: survivor f_obj is not maximal", r.round));
            }
        }
    }
    Ok(())
}
