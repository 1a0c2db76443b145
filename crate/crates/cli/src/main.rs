use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tdae::config::ExperimentConfig;
use tdae::experiment::{cmd_gradcheck, cmd_preprocess, cmd_run, cmd_sweep, format_metrics_table, format_stats};
use tdae::synth::{generate, write_raw, SynthConfig};

/// Trust-aware denoising auto-encoder experiments.
#[derive(Parser)]
#[command(name = "tdae", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key=value config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key (repeatable), e.g. --set alpha=0.6
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Master seed for every random stream
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Binarize and filter the raw files, write the dataset cache
    Preprocess,
    /// Cross-validated training and evaluation
    Run,
    /// One run per grid value of alpha, beta or k
    Sweep,
    /// Finite-difference check of the analytic gradients
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
    /// Write a planted-community dataset as raw rating and trust files
    Synth {
        #[arg(long, default_value = "synthetic")]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        communities: usize,
        #[arg(long, default_value_t = 50)]
        users_per_community: usize,
        #[arg(long, default_value_t = 300)]
        items: usize,
        #[arg(long, default_value_t = 60)]
        block: usize,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    Ok(ExperimentConfig::load(common.config.as_deref(), &overrides)?)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Preprocess => {
            let (stats, hash) = cmd_preprocess(&cfg)?;
            print!("{}", format_stats(&stats));
            println!("cache {} ({hash})", cfg.cache.display());
        }
        Command::Run => {
            let summary = cmd_run(&cfg)?;
            print!("{}", format_metrics_table(&summary.outcome.rows));
            println!("wrote {}", summary.metrics_path.display());
        }
        Command::Sweep => {
            let (rows, path) = cmd_sweep(&cfg)?;
            let failed = rows.iter().filter(|r| r.result.is_err()).count();
            for r in &rows {
                match &r.result {
                    Ok(m) if m.metric == "map" => println!("{}={} map@{} {:.4}", r.param, r.value, m.cutoff, m.mean),
                    Ok(_) => {}
                    Err(e) => eprintln!("{}={} failed: {e}", r.param, r.value),
                }
            }
            println!("wrote {}", path.display());
            if failed > 0 {
                bail!("{failed} sweep point(s) failed");
            }
        }
        Command::Gradcheck { instances } => {
            let checks = cmd_gradcheck(&cfg, instances)?;
            let mut bad = 0;
            for (i, c) in checks.iter().enumerate() {
                println!(
                    "instance {i:>3}: {} entries, max abs {:.2e}, max rel {:.2e}, {} failures",
                    c.entries, c.max_abs_error, c.max_rel_error, c.failures
                );
                bad += c.failures;
            }
            if bad > 0 {
                bail!("{bad} gradient entries disagree with finite differences");
            }
            println!("all {instances} instances agree");
        }
        Command::Synth { out, communities, users_per_community, items, block } => {
            let synth = SynthConfig { communities, users_per_community, items, block, ..SynthConfig::default() };
            let s = generate(&synth, cfg.hp.seed)?;
            write_raw(&s, &out).with_context(|| format!("writing {}", out.display()))?;
            println!(
                "{} users, {} positives, {} trust edges -> {}",
                s.dataset.n,
                s.dataset.ratings.len(),
                s.dataset.trusts.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
