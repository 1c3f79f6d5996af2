use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use softseg_cli::{run_panel, run_runtime, run_sweep, run_theory, ExperimentConfig};

#[derive(Parser)]
#[command(name = "softseg", version, about = "Benchmarks, estimators and theory checks for contextual decision weights")]
struct Cli {
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output root.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Added to every seed in the config.
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Fit every method on every seed and write the comparison tables.
    Panel(Common),
    /// Repeat the panel along one benchmark axis.
    Sweep(Common),
    /// Run the numerical theory checks.
    Theory {
        #[command(flatten)]
        common: Common,
        /// Multiply the floor slope κ (values above 1 should make the floor check fail).
        #[arg(long)]
        kappa_scale: Option<f64>,
    },
    /// Time EM against the soft-segmentation fit.
    Runtime(Common),
}

fn setup(c: &Common) -> Result<ExperimentConfig> {
    rayon::ThreadPoolBuilder::new().num_threads(c.jobs.max(1)).build_global()?;
    Ok(ExperimentConfig::load(&c.config)?.with_seed_offset(c.seed_offset))
}

fn report_failures(failures: &[String]) -> ExitCode {
    for f in failures {
        eprintln!("invariant failure: {f}");
    }
    if failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Panel(c) => {
            let cfg = setup(&c)?;
            let out = run_panel(&cfg, &c.out)?;
            for a in &out.aggregate {
                println!(
                    "{:<14} regret {:.4} ± {:.4}   mse {:.4} ± {:.4}   ({} seeds)",
                    a.method, a.mean_regret, a.sd_regret, a.mean_mse, a.sd_mse, a.seeds_ok
                );
            }
            println!("wrote {}", out.dir.display());
            Ok(report_failures(&out.invariant_failures))
        }
        Command::Sweep(c) => {
            let cfg = setup(&c)?;
            let out = run_sweep(&cfg, &c.out)?;
            for m in &cfg.methods {
                let curve: Vec<String> = out.mean_regret(&m.label()).iter().map(|v| format!("{v:.4}")).collect();
                println!("{:<14} {}", m.label(), curve.join("  "));
            }
            println!("wrote {}", out.dir.display());
            Ok(report_failures(&out.invariant_failures))
        }
        Command::Theory { common, kappa_scale } => {
            let cfg = setup(&common)?;
            let out = run_theory(&cfg, &common.out, kappa_scale)?;
            for c in &out.checks {
                println!("{} {:<36} bound {:.6e}  realized {:.6e}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.bound, c.realized);
            }
            println!("wrote {}", out.dir.display());
            Ok(if out.all_pass() { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::Runtime(c) => {
            let cfg = setup(&c)?;
            let out = run_runtime(&cfg, &c.out)?;
            for r in &out.rows {
                let mean = r.seconds.iter().sum::<f64>() / r.seconds.len() as f64;
                println!("{:<10} {:.3}s mean over {} seeds", r.method, mean, r.seconds.len());
            }
            println!("em/otss ratio {:.2}", out.ratio);
            println!("wrote {}", out.dir.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
