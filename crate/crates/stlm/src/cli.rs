use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::commands::{self, Axis, RunContext, CONFIG_FILE};
use crate::config::{Config, SECTIONS, SEED_ENV};
use crate::error::{Result, StlmError};

#[derive(Parser, Debug)]
#[command(name = "stlm", version, about = "Two-stream distillation anomaly detector")]
#[command(after_help = "Any config key can be overridden with a dotted flag, e.g. --train.adam_lr 1e-3.")]
pub struct Cli {
    /// Worker threads for evaluation and ablation variants.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Suppress progress output on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic MVTec-style dataset.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Shorthand for --train.stage_mode.
        #[arg(long)]
        stage: Option<String>,
        /// Continue from a checkpoint written by `train`.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split of one or more datasets.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the config.json next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Pixels averaged for the image score.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        fpr_limit: Option<f64>,
    },
    /// Write anomaly maps and image scores for PNG files or directories.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Train and evaluate every value of one design axis.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seeds shared by all variants; defaults to train.seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Dataset directory; a synthetic set per seed is used otherwise.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Finite-difference check of every primitive and loss.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        /// Swap in a wrong backward rule for the named primitive.
        #[arg(long)]
        inject_fault: Option<String>,
    },
}

/// Splits `--section.key value` and `--section.key=value` out of the
/// argument list.
pub fn split_overrides(args: &[String]) -> Result<(Vec<String>, Vec<(String, String)>)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let dotted = a
            .strip_prefix("--")
            .filter(|k| SECTIONS.iter().any(|s| k.starts_with(&format!("{s}."))));
        match dotted {
            Some(k) => {
                let (key, value) = match k.split_once('=') {
                    Some((key, v)) => (key.to_string(), v.to_string()),
                    None => {
                        let v = it.next().ok_or_else(|| StlmError::Usage(format!("{a} needs a value")))?;
                        (k.to_string(), v.clone())
                    }
                };
                overrides.push((key, value));
            }
            None => rest.push(a.clone()),
        }
    }
    Ok((rest, overrides))
}

fn sibling_config(checkpoint: &Path) -> Option<PathBuf> {
    let p = checkpoint.parent()?.join(CONFIG_FILE);
    p.is_file().then_some(p)
}

fn execute(cli: Cli, overrides: Vec<(String, String)>, args: Vec<String>) -> Result<()> {
    let ctx = RunContext {
        args,
        jobs: cli.jobs,
        quiet: cli.quiet,
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    let resolve = |file: Option<PathBuf>, mut extra: Vec<(String, String)>| {
        extra.splice(0..0, overrides.iter().cloned());
        Config::resolve(file.as_deref(), env_seed.as_deref(), &extra)
    };
    match cli.command {
        Command::Synth { config, out } => {
            let cfg = resolve(config, vec![])?;
            commands::synth(&cfg, &out, &ctx)?;
        }
        Command::Train {
            config,
            data,
            out,
            stage,
            resume,
        } => {
            let extra = stage.map(|s| ("train.stage_mode".to_string(), s)).into_iter().collect();
            let cfg = resolve(config, extra)?;
            let s = commands::train(&cfg, &data, &out, resume.as_deref(), &ctx)?;
            println!("trained {} steps (now at step {}) in {:.1}s -> {}", s.steps, s.final_step, s.seconds, s.checkpoint.display());
        }
        Command::Eval {
            checkpoint,
            config,
            data,
            out,
            k,
            fpr_limit,
        } => {
            let mut extra = Vec::new();
            if let Some(k) = k {
                extra.push(("eval.top_k".into(), k.to_string()));
            }
            if let Some(f) = fpr_limit {
                extra.push(("eval.fpr_limit".into(), f.to_string()));
            }
            let cfg = resolve(config.or_else(|| sibling_config(&checkpoint)), extra)?;
            let r = commands::eval(&cfg, &checkpoint, &data, &out, &ctx)?;
            println!(
                "image_auroc {:.4}  pixel_auroc {:.4}  pro {:.4}  ap {:.4}  fnr {:.4}",
                r.image_auroc, r.pixel_auroc, r.pro, r.ap, r.fnr
            );
        }
        Command::Infer {
            checkpoint,
            config,
            input,
            out,
            k,
        } => {
            let extra = k.map(|k| ("eval.top_k".to_string(), k.to_string())).into_iter().collect();
            let cfg = resolve(config.or_else(|| sibling_config(&checkpoint)), extra)?;
            let scores = commands::infer(&cfg, &checkpoint, &input, &out, &ctx)?;
            println!("wrote {} maps to {}", scores.len(), out.display());
        }
        Command::Ablate {
            config,
            axis,
            out,
            seeds,
            data,
        } => {
            let cfg = resolve(config, vec![])?;
            let seeds = if seeds.is_empty() { vec![cfg.train.seed] } else { seeds };
            let rows = commands::ablate(&cfg, axis, &seeds, data.as_deref(), &out, &ctx)?;
            for r in rows {
                println!(
                    "{:>16}  i-auroc {:.4}  p-auroc {:.4}  pro {:.4}  ap {:.4}  params {}",
                    r.variant, r.image_auroc, r.pixel_auroc, r.pro, r.ap, r.params
                );
            }
        }
        Command::Gradcheck { seeds, inject_fault } => {
            let fault = inject_fault.as_deref().map(commands::fault_name).transpose()?;
            commands::gradcheck(seeds, fault, &ctx)?;
        }
    }
    Ok(())
}

/// Parses and runs one invocation; returns the process exit status.
pub fn run(args: Vec<String>) -> i32 {
    let (rest, overrides) = match split_overrides(&args) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(&rest) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let recorded = args.iter().skip(1).cloned().collect();
    match execute(cli, overrides, recorded) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
