use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mimo_phasenoise::coding::{generate_code, girth, DEFAULT_CODE_SEED};
use mimo_phasenoise::harness::{write_outputs, SimConfig, Simulator};
use mimo_phasenoise::oracle::{run_check, CHECK_NAMES};

#[derive(Parser)]
#[command(name = "pnsim", version, about = "MIMO phase-noise receiver simulations")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// JSON simulation config.
    #[arg(long)]
    config: PathBuf,
    /// Output CSV; metadata goes to `<out>.meta.json`.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a single (detector, Eb/N0) point.
    Simulate(RunArgs),
    /// Run every detector over the Eb/N0 grid.
    Sweep(RunArgs),
    /// Run a brute-force reference check; exits nonzero on failure.
    OracleCheck {
        /// Check name, or `all`.
        name: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Write a seeded PEG parity-check matrix as alist.
    Codegen {
        #[arg(long)]
        rate: String,
        #[arg(long)]
        length: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CODE_SEED)]
        seed: u64,
    },
}

fn run(args: RunArgs, single: bool) -> Result<ExitCode> {
    if let Some(t) = args.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("thread pool")?;
    }
    let mut config =
        SimConfig::load(&args.config).with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if single && (config.detectors.len() != 1 || config.ebn0_db.len() != 1) {
        bail!("simulate takes one detector and one Eb/N0 value; use sweep for grids");
    }
    let sim = Simulator::new(&config)?;
    let result = sim.run_sweep();
    write_outputs(&config, sim.frame_len(), &result, &args.out)?;
    let mut failed = false;
    for r in result.rows() {
        println!(
            "{:<14} {:>6.2} dB  BER {:.3e}  SER {:.3e}  FER {:.3e}  ({} frames){}",
            r.detector.name(),
            r.ebn0_db,
            r.ber,
            r.ser,
            r.fer,
            r.frames,
            if r.partial { " partial" } else { "" }
        );
        if !r.error.is_empty() {
            eprintln!("  error: {}", r.error);
            failed = true;
        }
    }
    Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn main() -> Result<ExitCode> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().cmd {
        Cmd::Simulate(a) => run(a, true),
        Cmd::Sweep(a) => run(a, false),
        Cmd::OracleCheck { name, seed } => {
            let names: Vec<&str> = if name == "all" { CHECK_NAMES.to_vec() } else { vec![name.as_str()] };
            let mut ok = true;
            for n in names {
                let rep = run_check(n, seed)?;
                print!("{rep}");
                ok &= rep.passed();
            }
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Cmd::Codegen { rate, length, out, seed } => {
            let h = generate_code(&rate, length, seed)?;
            std::fs::write(&out, h.to_alist()).with_context(|| format!("writing {}", out.display()))?;
            log::info!("girth {:?}", girth(&h));
            println!("{}x{} parity-check matrix, {} edges -> {}", h.m, h.n, h.edges(), out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
