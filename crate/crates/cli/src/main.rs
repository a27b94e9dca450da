//! `mmwave-mdp`: solve per-UE cell-selection policies, simulate them against
//! the baselines, sweep handover costs and UE counts, and inspect the results.

mod cache;
mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigError, Overrides};

#[derive(Parser, Debug)]
#[command(name = "mmwave-mdp", version, about = "MDP-based cell selection for mmWave networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// TOML experiment file; command-line flags win over it
    #[arg(short, long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Channel preset name
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Handover cost(s) as a fraction of the slot, e.g. 0.1 or 0.03,0.3
    #[arg(long, value_name = "F", value_delimiter = ',')]
    oh: Option<Vec<f64>>,
    /// Number(s) of UEs
    #[arg(long, value_name = "N", value_delimiter = ',')]
    ues: Option<Vec<u32>>,
    /// Number of BSs
    #[arg(long, value_name = "L")]
    bss: Option<usize>,
    /// Slots per seed, warmup included
    #[arg(long, value_name = "S")]
    slots: Option<u64>,
    /// Number of seeds
    #[arg(long, value_name = "K")]
    seeds: Option<u64>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Scheme(s): mdp, load, rate, channel, upper
    #[arg(long = "scheme", value_name = "NAME", value_delimiter = ',')]
    schemes: Option<Vec<String>>,
    /// Worker threads (default: all cores); results do not depend on it
    #[arg(long, value_name = "T")]
    threads: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            preset: self.preset.clone(),
            oh: self.oh.clone(),
            ues: self.ues.clone(),
            bss: self.bss,
            slots: self.slots,
            seeds: self.seeds,
            out: self.out.clone(),
            schemes: self.schemes.clone(),
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run best-response dynamics for each (N, OH) and cache the converged policies
    Solve {
        #[command(flatten)]
        common: Common,
        /// Recompute even when a cached policy exists
        #[arg(long)]
        force: bool,
    },
    /// Simulate the selected schemes at one handover cost
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Solve and cache missing MDP policies instead of failing
        #[arg(long)]
        solve_missing: bool,
    },
    /// Simulate every (OH, N) combination and tabulate the gain over `channel`
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Solve and cache missing MDP policies instead of failing
        #[arg(long)]
        solve_missing: bool,
    },
    /// Count states by enumeration and by the closed form
    Statespace {
        #[command(flatten)]
        common: Common,
        /// Channel states K (default: from the channel)
        #[arg(long, value_name = "K")]
        channel_states: Option<usize>,
        /// Also write every enumerated state to CSV
        #[arg(long)]
        dump: bool,
    },
    /// Summarize a policy file
    InspectPolicy {
        #[command(flatten)]
        common: Common,
        /// Policy file (default: the cached file for the configured N and OH)
        #[arg(long, value_name = "PATH")]
        policy: Option<PathBuf>,
        /// Print the action of every UE in every state
        #[arg(long)]
        states: bool,
        /// Write the best-response kernel of this UE (1-based) to CSV
        #[arg(long, value_name = "UE")]
        dump_kernel: Option<usize>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let common = match &cli.command {
        Command::Solve { common, .. }
        | Command::Simulate { common, .. }
        | Command::Sweep { common, .. }
        | Command::Statespace { common, .. }
        | Command::InspectPolicy { common, .. } => common.clone(),
    };
    if let Some(t) = common.threads {
        if t == 0 {
            return Err(config::config_error("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    let file = match &common.config {
        Some(path) => config::FileConfig::load(path)?,
        None => config::FileConfig::default(),
    };
    let flags = common.overrides();
    match cli.command {
        Command::Solve { force, .. } => commands::solve(&file, &flags, force),
        Command::Simulate { solve_missing, .. } => commands::simulate(&file, &flags, solve_missing),
        Command::Sweep { solve_missing, .. } => commands::sweep(&file, &flags, solve_missing),
        Command::Statespace { channel_states, dump, .. } => commands::statespace(&file, &flags, channel_states, dump),
        Command::InspectPolicy { policy, states, dump_kernel, .. } => {
            commands::inspect_policy(&file, &flags, policy, states, dump_kernel)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
