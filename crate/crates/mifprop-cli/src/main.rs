use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mifprop::data::Split;
use mifprop_cli::config::{Config, CONFIG_TEMPLATE};
use mifprop_cli::eval::cmd_eval;
use mifprop_cli::gradcheck::cmd_gradcheck;
use mifprop_cli::simulate::{cmd_simulate, parse_schedule};
use mifprop_cli::train::cmd_train;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "mifprop",
    version,
    about = "Train, evaluate and simulate memristive integrate-and-fire neuron networks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Shorthand for --override training.seed=N.
    #[arg(long)]
    seed: Option<u64>,
    /// Shorthand for --override output.dir=DIR.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Set one config key, e.g. --override training.lr=5e-3 (repeatable).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<Config> {
        let mut cfg = Config::load(self.config.as_deref())?;
        cfg.apply_overrides(&self.overrides)?;
        if let Some(seed) = self.seed {
            cfg.training.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a network and write checkpoints plus a metrics log.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint: accuracy and a confusion-matrix CSV.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset split to score: train or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Integrate a single neuron and write its waveform CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        t_total: usize,
        /// Injection schedule as step:scale pairs, e.g. "0:500,400:250".
        #[arg(long, default_value = "0:500")]
        schedule: String,
    },
    /// Compare adjoint gradients against finite differences on a tiny net.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Test hook: corrupt one adjoint entry, "layer,row,col,delta".
        #[arg(long, hide = true)]
        inject_grad_error: Option<String>,
    },
    /// Configuration helpers.
    Config {
        #[command(subcommand)]
        action: ConfigCmd,
    },
}

#[derive(Subcommand)]
enum ConfigCmd {
    /// Print (or write with --path) a fully commented default config.
    Init {
        #[arg(long)]
        path: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Train { common } => {
            let cfg = common.resolve()?;
            let result = cmd_train(&cfg)?;
            println!(
                "trained {} iterations over {} epochs; artifacts in {}",
                result.iterations,
                result.epochs_run,
                result.out_dir.display()
            );
            if let Some(acc) = result.final_test_acc {
                println!("final test accuracy: {acc:.4}");
            }
        }
        Cmd::Eval { common, checkpoint, split } => {
            let cfg = common.resolve()?;
            let split = match split.as_str() {
                "train" => Split::Train,
                "test" => Split::Test,
                other => bail!("--split must be 'train' or 'test', got '{other}'"),
            };
            let outcome = cmd_eval(&cfg, &checkpoint, split)?;
            println!(
                "accuracy: {:.4} ({}/{})",
                outcome.accuracy, outcome.correct, outcome.total
            );
            println!("confusion matrix: {}", outcome.confusion_path.display());
        }
        Cmd::Simulate { common, t_total, schedule } => {
            let cfg = common.resolve()?;
            let params = cfg.mif_params()?;
            let sched = parse_schedule(&schedule)?;
            let path = cmd_simulate(&params, &sched, t_total, &cfg.output.dir)?;
            println!("waveform: {}", path.display());
        }
        Cmd::Gradcheck { common, tolerance, inject_grad_error } => {
            let cfg = common.resolve()?;
            // Without an explicit config the checker uses its own tiny
            // architecture instead of the full training default.
            let widths = if common.config.is_some()
                || common.overrides.iter().any(|o| o.starts_with("model.widths"))
            {
                cfg.model.widths.clone()
            } else {
                vec![4, 3, 2, 2]
            };
            let inject = inject_grad_error
                .map(|text| parse_injection(&text))
                .transpose()?;
            let report =
                cmd_gradcheck(&widths, &cfg.mif_params()?, cfg.training.seed, tolerance, inject)?;
            println!(
                "checked {} weights: max relative error {:.3e} at layer {} ({}, {}), tolerance {:.1e}",
                report.checked,
                report.max_rel,
                report.worst.0,
                report.worst.1,
                report.worst.2,
                report.tolerance
            );
            if report.pass {
                println!("gradcheck PASS");
            } else {
                println!("gradcheck FAIL");
                std::process::exit(1);
            }
        }
        Cmd::Config { action } => match action {
            ConfigCmd::Init { path } => match path {
                Some(p) => {
                    std::fs::write(&p, CONFIG_TEMPLATE)
                        .with_context(|| format!("writing {}", p.display()))?;
                    println!("wrote {}", p.display());
                }
                None => print!("{CONFIG_TEMPLATE}"),
            },
        },
    }
    Ok(())
}

fn parse_injection(text: &str) -> Result<(usize, usize, usize, f64)> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 4 {
        bail!("--inject-grad-error expects layer,row,col,delta");
    }
    Ok((
        parts[0].trim().parse().context("bad layer")?,
        parts[1].trim().parse().context("bad row")?,
        parts[2].trim().parse().context("bad col")?,
        parts[3].trim().parse().context("bad delta")?,
    ))
}
