//! `catgan` command-line runner.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
//! failures while running.

mod plot;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use catgan::config::ExperimentConfig;
use catgan::corpus::Vocabulary;
use catgan::runner::{self, RunPaths};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "catgan", version, about = "Category-aware relativistic text GAN with evolutionary training")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML configuration. Defaults to the run directory's config.toml.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set rounds=10`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Run directory. `synth` and `pretrain` create a timestamped one under
    /// `out_dir` when omitted.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the synthetic oracles and sample their corpora.
    Synth,
    /// MLE pretraining of the generator.
    Pretrain {
        #[arg(long)]
        resume: bool,
    },
    /// Adversarial training with hierarchical evolutionary selection.
    Train {
        #[arg(long)]
        resume: bool,
        /// Stop after this round; `--resume` continues later.
        #[arg(long)]
        until: Option<usize>,
    },
    /// Decode samples from a checkpoint.
    Sample {
        /// Defaults to the training checkpoint, else the pretraining one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Category to sample; all categories when omitted.
        #[arg(long)]
        category: Option<usize>,
        #[arg(short, long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Full metric suite on a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Draw the NLL curves of a run as a PNG.
    Plot {
        /// Defaults to `<run-dir>/curves.png`.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

/// Failure classes that map to exit codes.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<catgan::Error> for Failure {
    fn from(e: catgan::Error) -> Self {
        match e {
            catgan::Error::Config(_) | catgan::Error::MissingInput { .. } => Failure::Usage(e.into()),
            other => Failure::Runtime(other.into()),
        }
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Resolves the configuration and run directory for a command.
fn setup(g: &Global, may_create: bool) -> Result<(ExperimentConfig, RunPaths), Failure> {
    let config = match (&g.config, &g.run_dir) {
        (Some(c), _) => Some(c.clone()),
        (None, Some(d)) if d.join("config.toml").exists() => Some(d.join("config.toml")),
        _ => None,
    };
    let cfg = ExperimentConfig::load_with_overrides(config.as_deref(), &g.overrides).map_err(usage)?;
    let root = match &g.run_dir {
        Some(d) => d.clone(),
        None if may_create => fresh_run_dir(&cfg.out_dir),
        None => return Err(usage(anyhow!("--run-dir is required for this command"))),
    };
    if !may_create && !root.is_dir() {
        return Err(usage(anyhow!("run directory {} does not exist", root.display())));
    }
    let paths = RunPaths::new(root);
    Ok((cfg, paths))
}

fn fresh_run_dir(out_dir: &Path) -> PathBuf {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S").to_string();
    let mut dir = out_dir.join(&stamp);
    let mut i = 1;
    while dir.exists() {
        dir = out_dir.join(format!("{stamp}-{i}"));
        i += 1;
    }
    dir
}

fn run(cli: Cli) -> Result<(), Failure> {
    let g = &cli.global;
    match cli.command {
        Command::Synth => {
            let (cfg, paths) = setup(g, true)?;
            paths.prepare(&cfg)?;
            let s = runner::cmd_synth(&cfg, &paths)?;
            println!("run directory: {}", paths.root.display());
            println!(
                "wrote {} training and {} test sequences; oracle entropy per category {:?} (harmonic {:.4})",
                s.train_lines, s.test_lines, s.entropy, s.entropy_harmonic
            );
        }
        Command::Pretrain { resume } => {
            let (cfg, paths) = setup(g, !resume)?;
            paths.prepare(&cfg)?;
            let s = runner::cmd_pretrain(&cfg, &paths, resume)?;
            println!("run directory: {}", paths.root.display());
            if let Some(last) = s.records.last() {
                println!(
                    "epoch {}: nll_div {:.4}{}",
                    last.epoch,
                    last.nll_div,
                    last.nll_oracle.map(|v| format!(", nll_oracle {v:.4}")).unwrap_or_default()
                );
            }
        }
        Command::Train { resume, until } => {
            let (cfg, paths) = setup(g, false)?;
            paths.prepare(&cfg)?;
            let state = runner::cmd_train(&cfg, &paths, resume, until)?;
            println!("completed round {} of {}; checkpoint {}", state.round, cfg.rounds, paths.train_ckpt().display());
        }
        Command::Sample {
            checkpoint,
            category,
            n,
            tau,
            seed,
            output,
        } => {
            let (cfg, paths) = setup(g, false)?;
            let ckpt = checkpoint.unwrap_or_else(|| default_checkpoint(&paths));
            if !ckpt.exists() {
                return Err(usage(anyhow!("checkpoint {} not found", ckpt.display())));
            }
            let (gen, seq_len) = runner::load_generator(&ckpt)?;
            let vocab = Vocabulary::load(&paths.vocab())?;
            let lines = runner::cmd_sample(&gen, &vocab, category, n, seq_len.unwrap_or(cfg.seq_len), tau, seed)
                .map_err(|e| match e {
                    catgan::Error::CategoryOutOfRange { .. } | catgan::Error::InvalidArgument(_) => usage(e),
                    other => other.into(),
                })?;
            let mut text = lines.join("\n");
            text.push('\n');
            match output {
                Some(p) => fs::write(&p, text).with_context(|| format!("writing {}", p.display())).map_err(runtime)?,
                None => std::io::stdout().write_all(text.as_bytes()).map_err(runtime)?,
            }
        }
        Command::Eval { checkpoint } => {
            let (cfg, paths) = setup(g, false)?;
            if let Some(c) = &checkpoint {
                if !c.exists() {
                    return Err(usage(anyhow!("checkpoint {} not found", c.display())));
                }
            }
            let report = runner::cmd_eval(&cfg, &paths, checkpoint.as_deref())?;
            print!("{}", report.to_table());
        }
        Command::Plot { output } => {
            let (_, paths) = setup(g, false)?;
            let out = output.unwrap_or_else(|| paths.root.join("curves.png"));
            let summary = plot::plot_run(&paths, &out).map_err(|e| match e {
                plot::PlotError::NoData(_) => usage(e),
                other => runtime(other),
            })?;
            if summary.skipped > 0 {
                eprintln!("warning: skipped {} unreadable log lines", summary.skipped);
            }
            println!("wrote {} ({} points)", out.display(), summary.points);
        }
    }
    Ok(())
}

fn default_checkpoint(paths: &RunPaths) -> PathBuf {
    if paths.train_ckpt().exists() {
        paths.train_ckpt()
    } else {
        paths.pretrain_ckpt()
    }
}
