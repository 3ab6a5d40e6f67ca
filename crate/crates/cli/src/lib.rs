//! Experiment runner: topology I/O, the solve, simulate, select, compare and
//! gen-topology subcommands, and their CSV outputs.

pub mod args;
pub mod commands;
pub mod config;

use anyhow::{bail, Result};

pub use args::{Cli, Command};
pub use commands::Status;
pub use config::{ExperimentConfig, Mode};

pub fn run(cli: &Cli) -> Result<Status> {
    let mode = match &cli.command {
        Command::Solve => Some(Mode::Solve),
        Command::Simulate(_) => Some(Mode::Simulate),
        Command::Select(_) => Some(Mode::Select),
        Command::Compare(_) => Some(Mode::Compare),
        Command::GenTopology(_) => None,
    };
    let resolve = |sim| -> Result<ExperimentConfig> {
        let cfg = ExperimentConfig::resolve(&cli.global, sim)?;
        if let (Some(want), Some(got)) = (cfg.mode, mode) {
            if want != got {
                bail!("mode: config selects {want:?} but the subcommand is {got:?}");
            }
        }
        Ok(cfg)
    };
    match &cli.command {
        Command::Solve => commands::cmd_solve(&resolve(None)?),
        Command::Simulate(a) => commands::cmd_simulate(&resolve(Some(&a.sim))?, a),
        Command::Select(a) => commands::cmd_select(&resolve(Some(&a.sim))?, a),
        Command::Compare(a) => commands::cmd_compare(&resolve(Some(&a.sim))?, a),
        Command::GenTopology(a) => commands::cmd_gen_topology(&resolve(None)?, a),
    }
}
