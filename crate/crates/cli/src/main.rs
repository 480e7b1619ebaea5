use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand as ClapSub};
use mtcp_cli::config::{Overrides, Subcommand};

#[derive(Parser)]
#[command(name = "mtcp", version, about = "Simulation lab for the asymmetric multitype contact process")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true, env = "MTCP_THREADS")]
    threads: Option<usize>,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the horizon.
    #[arg(long)]
    horizon: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "mtcp-out")]
    out: PathBuf,
}

#[derive(ClapSub)]
enum Cmd {
    /// Sample a system, evolve ξ and write the trajectory.
    Simulate(Common),
    /// Evaluate ξ_t(x) or ξ_{t−}(x) at listed points.
    EvolveQuery(Common),
    /// Reachability, enumeration, free and reverse-free paths.
    Paths(Common),
    /// Ancestor process of a point, with bifurcation times.
    Ancestor(Common),
    /// Renewal point and steered sequence.
    Renewal(Common),
    /// Simulate a steered renewal walk.
    Walk(Common),
    /// Run a Monte Carlo estimator.
    Estimate(Common),
    /// Draw a space-time diagram as SVG.
    Render(Common),
    /// Re-run a manifest and compare output digests.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "mtcp-replay")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    let (sub, common) = match cli.command {
        Cmd::Simulate(c) => (Subcommand::Simulate, c),
        Cmd::EvolveQuery(c) => (Subcommand::EvolveQuery, c),
        Cmd::Paths(c) => (Subcommand::Paths, c),
        Cmd::Ancestor(c) => (Subcommand::Ancestor, c),
        Cmd::Renewal(c) => (Subcommand::Renewal, c),
        Cmd::Walk(c) => (Subcommand::Walk, c),
        Cmd::Estimate(c) => (Subcommand::Estimate, c),
        Cmd::Render(c) => (Subcommand::Render, c),
        Cmd::Replay { manifest, out } => {
            return match mtcp_cli::replay(&manifest, &out) {
                Ok(r) => {
                    for (f, same) in &r.files {
                        println!("{} {f}", if *same { "identical" } else { "DIFFERS" });
                    }
                    if r.identical() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::FAILURE
                    }
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::FAILURE
                }
            };
        }
    };
    let overrides = Overrides { seed: common.seed, horizon: common.horizon };
    match mtcp_cli::run_config(sub, &common.config, &overrides, &common.out) {
        Ok(m) => {
            println!("{} {} -> {}", m.subcommand, m.config_hash, common.out.join(mtcp_cli::output::MANIFEST).display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
