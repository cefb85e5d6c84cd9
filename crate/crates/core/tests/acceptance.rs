//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Runs as a plain binary (no libtest
//! harness) so the report is never swallowed by output capture.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use catgan::autodiff::Graph;
use catgan::corpus::Vocabulary;
use catgan::discriminator::{DiscriminatorConfig, DiscriminatorParams};
use catgan::evolution::{
    generator_loss_graph, schedule_tau, select_hierarchical, Objective, TemperatureSchedule,
};
use catgan::generator::{gumbel_noise, gumbel_sample, GeneratorConfig, GeneratorParams, NoiseSource};
use catgan::metrics::{bleu_n, harmonic_mean, nll_div, nll_oracle_metric};
use catgan::objectives::{d_loss_catra, g_loss_catra, g_loss_catrs, loss_ra, LogitBatchPair};
use catgan::oracle::OracleModel;
use catgan::params::rng_for;
use catgan::runner::{cmd_train, RunPaths};
use catgan::Error;
use common::*;
use rand::Rng;

type Outcome = Result<String, String>;

struct Report {
    failures: usize,
}

impl Report {
    fn run(&mut self, id: usize, name: &str, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{id:2}] {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                self.failures += 1;
                println!("FAIL [{id:2}] {name} ({secs:.1}s): {detail}");
            }
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_pairs(rng: &mut impl Rng, k: usize, shift: f64) -> (Vec<LogitBatchPair>, LogitBatchPair) {
    let mut per = Vec::new();
    let (mut all_r, mut all_f) = (Vec::new(), Vec::new());
    for c in 0..k {
        let nr = rng.random_range(1..9);
        let nf = rng.random_range(1..9);
        let r: Vec<f64> = (0..nr).map(|_| rng.random_range(-4.0..4.0) + shift).collect();
        let f: Vec<f64> = (0..nf).map(|_| rng.random_range(-4.0..4.0) + shift).collect();
        all_r.extend(&r);
        all_f.extend(&f);
        per.push(LogitBatchPair::new(r, f, Some(c)).unwrap());
    }
    (per, LogitBatchPair::new(all_r, all_f, None).unwrap())
}

fn shifted(p: &LogitBatchPair, s: f64) -> LogitBatchPair {
    let add = |v: &[f64]| v.iter().map(|x| x + s).collect();
    LogitBatchPair::new(add(&p.real), add(&p.fake), p.category).unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_for(101, &[]);
    for trial in 0..100 {
        let k = rng.random_range(1..5);
        let (per, all) = random_pairs(&mut rng, k, 0.0);
        let d = d_loss_catra(&per, &all, k).unwrap();
        let g = g_loss_catra(&per, &all, k).unwrap();
        ensure(g == -d, || format!("trial {trial}: g = {g}, -d = {}", -d))?;
    }
    let ln2 = std::f64::consts::LN_2;
    for trial in 0..100 {
        let x: f64 = rng.random_range(-5.0..5.0);
        let n = rng.random_range(1..6);
        let sym = |c| LogitBatchPair::new(vec![x; n], vec![x; n], c).unwrap();
        let per = vec![sym(Some(0)), sym(Some(1))];
        let all = LogitBatchPair::new(vec![x; 2 * n], vec![x; 2 * n], None).unwrap();
        let checks = [
            ("L^Ra", loss_ra(&sym(None)).unwrap(), 2.0 * ln2),
            ("CatRa", d_loss_catra(&per, &all, 2).unwrap(), 6.0 * ln2),
            ("CatRS", g_loss_catrs(&per, &all, 2).unwrap(), 3.0 * ln2),
        ];
        for (name, got, want) in checks {
            ensure((got - want).abs() < 1e-9, || format!("trial {trial}: {name} = {got}, expected {want}"))?;
        }
    }
    let t = start.elapsed();
    ensure(t < Duration::from_secs(1), || format!("took {t:?}"))?;
    Ok(format!("100 random batches, g = -d bitwise; symmetric points exact in {t:?}"))
}

fn criterion_2() -> Outcome {
    let mut rng = rng_for(102, &[]);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let k = rng.random_range(1..5);
        let (per, all) = random_pairs(&mut rng, k, 0.0);
        let s: f64 = rng.random_range(-50.0..50.0);
        let per_s: Vec<_> = per.iter().map(|p| shifted(p, s)).collect();
        let all_s = shifted(&all, s);
        let pairs = [
            (loss_ra(&all).unwrap(), loss_ra(&all_s).unwrap()),
            (d_loss_catra(&per, &all, k).unwrap(), d_loss_catra(&per_s, &all_s, k).unwrap()),
            (g_loss_catra(&per, &all, k).unwrap(), g_loss_catra(&per_s, &all_s, k).unwrap()),
        ];
        let mut diffs: Vec<f64> = pairs.iter().map(|(a, b)| (a - b).abs()).collect();
        // CatRS pairs reals and fakes index-wise, so it needs equal sizes.
        let eq = |p: &LogitBatchPair| LogitBatchPair::new(p.real.clone(), p.real.iter().map(|x| x * 0.5 - 1.0).collect(), p.category).unwrap();
        let per_eq: Vec<_> = per.iter().map(eq).collect();
        let all_eq = eq(&all);
        let per_eq_s: Vec<_> = per_eq.iter().map(|p| shifted(p, s)).collect();
        diffs.push(
            (g_loss_catrs(&per_eq, &all_eq, k).unwrap() - g_loss_catrs(&per_eq_s, &shifted(&all_eq, s), k).unwrap()).abs(),
        );
        for d in diffs {
            worst = worst.max(d);
            ensure(d < 1e-9, || format!("trial {trial}: shift {s} changed a loss by {d}"))?;
        }
    }
    Ok(format!("100 trials, max change {worst:.2e}"))
}

fn criterion_3() -> Outcome {
    for tau in [1.0, 100.0] {
        for total in [10usize, 2000] {
            let s = TemperatureSchedule::new(tau, total).unwrap();
            let (f0, fn_) = (s.value(0), s.value(total as i64));
            ensure(f0 == 1.0, || format!("tau {tau} N {total}: f(0) = {f0}"))?;
            ensure(fn_ == tau, || format!("tau {tau} N {total}: f(N) = {fn_}"))?;
            let clamped = schedule_tau(&s.at(total as i64), 1);
            ensure(clamped == tau, || format!("tau {tau} N {total}: f(N+1) clamps to {clamped}"))?;
            let low = schedule_tau(&s.at(0), -1);
            ensure(low == 1.0, || format!("tau {tau} N {total}: f(-1) clamps to {low}"))?;
        }
    }
    let s = TemperatureSchedule::new(100.0, 2000).unwrap();
    let mid = s.value(1000);
    ensure((mid - 10.0).abs() < 1e-12, || format!("f(N/2) = {mid}"))?;
    Ok(format!("f(0) = 1, f(N) = tau_tar exact, f(N/2) = {mid}"))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_for(104, &[]);
    let w: Vec<f64> = (0..8).map(|_| rng.random_range(0.05..1.0)).collect();
    let z: f64 = w.iter().sum();
    let p: Vec<f64> = w.iter().map(|x| x / z).collect();
    let logits: Vec<f64> = p.iter().map(|x| x.ln()).collect();
    let n = 100_000;
    let mut counts = [0usize; 8];
    for _ in 0..n {
        let (hard, _) = gumbel_sample(&logits, 1.0, &mut rng).unwrap();
        counts[hard] += 1;
    }
    let tv: f64 = 0.5 * counts.iter().zip(&p).map(|(&c, &q)| (c as f64 / n as f64 - q).abs()).sum::<f64>();
    let t = start.elapsed();
    ensure(tv < 0.02, || format!("TV = {tv}"))?;
    ensure(t < Duration::from_secs(10), || format!("took {t:?}"))?;
    Ok(format!("TV = {tv:.4} over {n} draws in {t:?}"))
}

fn criterion_5() -> Outcome {
    let vocab = Vocabulary::synthetic(4);
    let gcfg = GeneratorConfig {
        emb_dim: 3,
        cat_dim: 2,
        mem_slots: 1,
        mem_dim: 4,
        num_heads: 1,
        mlp_hidden: 4,
        banned_outputs: vec![vocab.pad_id(), vocab.bos_id()],
        ..GeneratorConfig::new(vocab.size(), 2, vocab.bos_id())
    };
    let gen = GeneratorParams::new(gcfg, 55).unwrap();
    let dcfg = DiscriminatorConfig {
        emb_dim: 2,
        filter_widths: vec![2],
        num_filters: 2,
        hidden: 3,
        ..DiscriminatorConfig::new(vocab.size())
    };
    let disc = DiscriminatorParams::new(dcfg, 56).unwrap();
    let total = gen.num_parameters() + disc.num_parameters();
    ensure(total <= 500, || format!("{total} parameters"))?;

    let seq_len = 3;
    let real = vec![vec![0.3, -0.7], vec![1.1, 0.2]];
    let mut rng = rng_for(105, &[]);
    let noise: Vec<_> = (0..seq_len).map(|_| gumbel_noise(4, vocab.size(), &mut rng)).collect();
    let tau = 1.7;
    let loss_of = |gp: &GeneratorParams, tracked: bool| {
        let mut g = Graph::new();
        let bg = gp.bind(&mut g, tracked);
        let bd = disc.bind(&mut g, false);
        let l = generator_loss_graph(&mut g, &bg, &bd, &real, seq_len, Objective::CatRa, tau, &mut NoiseSource::Fixed(&noise)).unwrap();
        let v = g.scalar_value(l);
        let grads = tracked.then(|| bg.vars.gradients(&mut g.backward(l)));
        (v, grads)
    };
    let (_, grads) = loss_of(&gen, true);
    let grads = grads.unwrap();
    let names: Vec<String> = gen.store.iter().map(|(n, _)| n.to_string()).collect();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (i, name) in names.iter().enumerate() {
        let shape = gen.store.get(name).unwrap().dim();
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let mut plus = gen.clone();
                plus.store.get_mut(name).unwrap()[[r, c]] += h;
                let mut minus = gen.clone();
                minus.store.get_mut(name).unwrap()[[r, c]] -= h;
                let numeric = (loss_of(&plus, false).0 - loss_of(&minus, false).0) / (2.0 * h);
                let analytic = grads[i][[r, c]];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    ensure(worst < 1e-3, || format!("max relative error {worst:.3e} over {checked} entries"))?;
    Ok(format!("{total} parameters, {checked} generator entries, max relative error {worst:.2e}"))
}

fn criterion_6() -> Outcome {
    // (a) enumeration on V = 4, T = 3.
    let vocab = Vocabulary::synthetic(4);
    let gcfg = GeneratorConfig {
        emb_dim: 8,
        cat_dim: 4,
        mem_dim: 8,
        num_heads: 2,
        mlp_hidden: 8,
        banned_outputs: vec![vocab.pad_id(), vocab.bos_id()],
        ..GeneratorConfig::new(vocab.size(), 2, vocab.bos_id())
    };
    let mut gen = GeneratorParams::new(gcfg, 61).unwrap();
    // Sharpen the output layer so the distribution is far from uniform.
    for (name, m) in gen.store.iter_mut() {
        if name.starts_with("out") {
            m.mapv_inplace(|x| 4.0 * x);
        }
    }
    let oracle = OracleModel::new(2, 4, 8, 62).unwrap();
    let seqs = enumerate_sequences(4, 3);
    let refs: Vec<&[usize]> = seqs.iter().map(Vec::as_slice).collect();
    let mut detail = Vec::new();
    for c in 0..2 {
        let lp = gen.log_probs(&refs, &vec![c; refs.len()]).unwrap();
        let mass: f64 = lp.iter().map(|l| l.exp()).sum();
        ensure((mass - 1.0).abs() < 1e-9, || format!("generator mass {mass}"))?;
        let entropy: f64 = lp.iter().map(|l| -l.exp() * l).sum();
        // Oracle log-probabilities by the chain rule over its step distributions.
        let steps = oracle.step_distributions(c, &refs).unwrap();
        let cross: f64 = seqs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let lo: f64 = s.iter().enumerate().map(|(t, &y)| steps[t][[i, y]].ln()).sum();
                -lp[i].exp() * lo
            })
            .sum();
        let mc_div = nll_div(&gen, c, 50_000, 3, 63).unwrap();
        let mc_oracle = nll_oracle_metric(&oracle, &gen, c, 50_000, 3, 64).unwrap();
        let e1 = (mc_div - entropy).abs() / entropy;
        let e2 = (mc_oracle - cross).abs() / cross;
        ensure(e1 < 0.01, || format!("cat {c}: NLL_div {mc_div} vs exact {entropy}"))?;
        ensure(e2 < 0.01, || format!("cat {c}: NLL_oracle {mc_oracle} vs exact {cross}"))?;
        detail.push(format!("cat {c} div err {:.2}% oracle err {:.2}%", 100.0 * e1, 100.0 * e2));
    }
    // (b) BLEU against the brute-force scanner.
    let mut rng = rng_for(106, &[]);
    let mut nonzero = 0;
    for pair in 0..20 {
        let cl = rng.random_range(2..12);
        let rl = rng.random_range(2..12);
        let cand: Vec<usize> = (0..cl).map(|_| rng.random_range(0..3)).collect();
        let reference: Vec<usize> = (0..rl).map(|_| rng.random_range(0..3)).collect();
        for n in 2..=5 {
            let got = bleu_n(std::slice::from_ref(&cand), std::slice::from_ref(&reference), n).unwrap();
            let want = brute_bleu(&cand, std::slice::from_ref(&reference), n);
            ensure(got.to_bits() == want.to_bits(), || format!("pair {pair} n {n}: {got} vs {want}"))?;
            nonzero += usize::from(got > 0.0);
        }
    }
    // (c)
    let hm = harmonic_mean(&[0.4, 0.6]).unwrap();
    ensure(hm == 0.48, || format!("harmonic_mean(0.4, 0.6) = {hm}"))?;
    Ok(format!("{}; BLEU exact on 20 pairs x 4 orders ({nonzero} non-zero); harmonic 0.48", detail.join(", ")))
}

fn criterion_7(runs: &[BenchRun]) -> Outcome {
    use Objective::{CatRa, CatRS};
    struct Case {
        name: &'static str,
        kids: Vec<(i32, Objective, f64, Option<f64>, bool)>,
        stage: Vec<(i32, Objective)>,
        survivor: (i32, Objective),
    }
    let cases = vec![
        Case {
            name: "worked example",
            kids: vec![
                (-1, CatRa, 0.4, None, true),
                (0, CatRa, 0.6, Some(0.61), true),
                (1, CatRa, 0.5, None, true),
                (-1, CatRS, 0.7, Some(0.55), true),
                (0, CatRS, 0.2, None, true),
                (1, CatRS, 0.3, None, true),
            ],
            stage: vec![(0, CatRa), (-1, CatRS)],
            survivor: (0, CatRa),
        },
        Case {
            name: "all ties",
            kids: [-1, 0, 1]
                .iter()
                .flat_map(|&o| [(o, CatRS, 0.5, Some(0.5), true), (o, CatRa, 0.5, Some(0.5), true)])
                .collect(),
            stage: vec![(-1, CatRS), (-1, CatRa)],
            survivor: (-1, CatRa),
        },
        Case {
            name: "CatRS wins on f_obj",
            kids: vec![
                (-1, CatRa, 0.1, None, true),
                (0, CatRa, 0.2, None, true),
                (1, CatRa, 0.9, Some(0.3), true),
                (-1, CatRS, 0.2, None, true),
                (0, CatRS, 0.8, Some(0.4), true),
                (1, CatRS, 0.8, None, true),
            ],
            stage: vec![(0, CatRS), (1, CatRa)],
            survivor: (0, CatRS),
        },
        Case {
            name: "invalid best child is skipped",
            kids: vec![
                (-1, CatRa, 0.3, Some(0.2), true),
                (0, CatRa, 0.9, None, false),
                (1, CatRa, 0.1, None, true),
                (-1, CatRS, 0.4, None, false),
                (0, CatRS, 0.5, Some(0.1), true),
                (1, CatRS, 0.2, None, true),
            ],
            stage: vec![(0, CatRS), (-1, CatRa)],
            survivor: (-1, CatRa),
        },
    ];
    for case in &cases {
        let kids: Vec<_> = case
            .kids
            .iter()
            .map(|&(o, obj, ft, fo, valid)| {
                let mut c = table_child(o, obj, ft, fo);
                c.valid = valid;
                c
            })
            .collect();
        let sel = select_hierarchical(&kids, 1).map_err(|e| format!("{}: {e}", case.name))?;
        let key = |i: usize| (kids[i].direction.temp_offset, kids[i].direction.objective);
        let mut stage: Vec<_> = sel.stage_temp.iter().map(|&i| key(i)).collect();
        let mut want = case.stage.clone();
        stage.sort_by_key(|&(o, obj)| (obj == CatRa, o));
        want.sort_by_key(|&(o, obj)| (obj == CatRa, o));
        ensure(stage == want, || format!("{}: stage winners {stage:?}, expected {want:?}", case.name))?;
        ensure(key(sel.survivor) == case.survivor, || {
            format!("{}: survivor {:?}, expected {:?}", case.name, key(sel.survivor), case.survivor)
        })?;
    }
    let mut dead = vec![table_child(0, CatRa, 0.5, Some(0.5)), table_child(0, CatRS, 0.5, Some(0.5))];
    dead.iter_mut().for_each(|c| c.valid = false);
    ensure(matches!(select_hierarchical(&dead, 9), Err(Error::NoValidChild { round: 9 })), || {
        "all-invalid round did not abort".into()
    })?;

    let mut rounds = 0;
    for run in runs {
        for r in &run.rounds {
            check_round_structure(r, false, false, false)?;
            ensure(r.children.len() == 6 && r.stage_temp_survivors.len() == 2, || format!("round {}", r.round))?;
            rounds += 1;
        }
    }
    ensure(rounds > 0, || "no logged rounds".into())?;
    Ok(format!("{} selection tables plus all-invalid; {rounds} logged rounds show 6 children, 2 stage winners, 1 survivor", cases.len()))
}

struct SeedResult {
    seed: u64,
    init: f64,
    end: f64,
    end_div: f64,
    best: f64,
    best_round: usize,
    best_div: f64,
}

impl SeedResult {
    fn from_run(seed: u64, run: &BenchRun) -> Self {
        let init = run.pretrain.first().unwrap().nll_oracle.unwrap();
        let last = run.pretrain.last().unwrap();
        let best = run
            .rounds
            .iter()
            .min_by(|a, b| a.nll_oracle.unwrap().total_cmp(&b.nll_oracle.unwrap()))
            .unwrap();
        Self {
            seed,
            init,
            end: last.nll_oracle.unwrap(),
            end_div: last.nll_div,
            best: best.nll_oracle.unwrap(),
            best_round: best.round,
            best_div: best.nll_div,
        }
    }

    fn checks(&self) -> [bool; 3] {
        [
            self.end <= 0.8 * self.init,
            self.best <= self.end,
            self.best_div >= 0.5 * self.end_div,
        ]
    }

    fn describe(&self) -> String {
        let [a, b, c] = self.checks();
        format!(
            "seed {}: oracle {:.3} -> {:.3} ({:.0}% drop, {}), best {:.3} @ round {} ({}), div {:.3} vs {:.3} ({:.0}%, {})",
            self.seed,
            self.init,
            self.end,
            100.0 * (1.0 - self.end / self.init),
            if a { "ok" } else { "FAIL" },
            self.best,
            self.best_round,
            if b { "ok" } else { "FAIL" },
            self.best_div,
            self.end_div,
            100.0 * self.best_div / self.end_div,
            if c { "ok" } else { "FAIL" },
        )
    }
}

fn criterion_8(runs: &[BenchRun], elapsed: Duration) -> Outcome {
    let results: Vec<SeedResult> = runs.iter().enumerate().map(|(i, r)| SeedResult::from_run(i as u64 + 1, r)).collect();
    for r in &results {
        println!("       {}", r.describe());
    }
    let passing = results.iter().filter(|r| r.checks().iter().all(|&x| x)).count();
    let summary = format!("{passing}/{} seeds pass, {:.0}s for all seeds", results.len(), elapsed.as_secs_f64());
    ensure(elapsed < Duration::from_secs(600), || format!("runtime over 10 minutes; {summary}"))?;
    ensure(2 * passing > results.len(), || summary.clone())?;
    Ok(summary)
}

fn copy_prefix(from: &RunPaths, to: &Path) -> RunPaths {
    let paths = RunPaths::new(to);
    std::fs::create_dir_all(to.join("data")).unwrap();
    for name in ["vocab.txt", "oracle.ckpt", "pretrain.ckpt", "pretrain.jsonl"] {
        std::fs::copy(from.root.join(name), to.join(name)).unwrap();
    }
    for entry in std::fs::read_dir(from.root.join("data")).unwrap() {
        let e = entry.unwrap();
        std::fs::copy(e.path(), to.join("data").join(e.file_name())).unwrap();
    }
    paths
}

fn criterion_9(base: &BenchRun, scratch: &Path) -> Outcome {
    let mut notes = Vec::new();
    for (flag, h, t, o) in [("no_h", true, false, false), ("no_t", false, true, false), ("no_o", false, false, true)] {
        let cfg = tiny_config(&["seed=1", &format!("{flag}=true")]);
        let paths = copy_prefix(&base.paths, &scratch.join(flag));
        paths.prepare(&cfg).unwrap();
        cmd_train(&cfg, &paths, false, None).map_err(|e| format!("{flag}: {e}"))?;
        let run = read_bench(paths);
        ensure(run.rounds.len() == cfg.rounds, || format!("{flag}: {} records", run.rounds.len()))?;
        for r in &run.rounds {
            check_round_structure(r, h, t, o).map_err(|e| format!("{flag}: {e}"))?;
        }
        notes.push(format!("{flag} {} rounds ok", run.rounds.len()));
    }
    Ok(notes.join(", "))
}

fn criterion_10(base: &BenchRun, scratch: &Path) -> Outcome {
    let cfg = tiny_config(&["seed=1"]);
    let again = run_benchmark(&cfg, &scratch.join("repeat"));
    let mut bytes = 0;
    for (a, b) in [
        (base.paths.pretrain_log(), again.paths.pretrain_log()),
        (base.paths.train_log(), again.paths.train_log()),
    ] {
        let (x, y) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        ensure(x == y, || format!("{} differs between identical runs", a.display()))?;
        bytes += x.len();
    }
    Ok(format!("pretrain and train logs byte-identical ({bytes} bytes)"))
}

fn main() {
    let mut report = Report { failures: 0 };
    let scratch = tempfile::tempdir().expect("scratch dir");

    report.run(1, "loss identities", criterion_1);
    report.run(2, "shift invariance", criterion_2);
    report.run(3, "temperature schedule", criterion_3);
    report.run(4, "Gumbel-Max sampling", criterion_4);
    report.run(5, "gradient fidelity", criterion_5);
    report.run(6, "metric oracles", criterion_6);

    let start = Instant::now();
    let runs: Vec<BenchRun> = (1..=3u64)
        .map(|seed| run_benchmark(&tiny_config(&[&format!("seed={seed}")]), &scratch.path().join(format!("seed{seed}"))))
        .collect();
    let bench_time = start.elapsed();

    report.run(7, "selection logic", || criterion_7(&runs));
    report.run(8, "desk-scale trend", || criterion_8(&runs, bench_time));
    report.run(9, "ablation structure", || criterion_9(&runs[0], scratch.path()));
    report.run(10, "determinism", || criterion_10(&runs[0], scratch.path()));

    println!("{} of 10 criteria passed", 10 - report.failures);
    if report.failures > 0 {
        std::process::exit(1);
    }
}
