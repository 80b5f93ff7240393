use std::path::PathBuf;
use std::process::exit;

use clap::{Parser, Subcommand};

use graspsim_cli::config::FileConfig;
use graspsim_cli::{
    compare, eval, experiment, gen_dataset, gen_objects, train, trial, CliError, CompareArgs,
    EvalArgs, ExperimentArgs, GenDatasetArgs, GenObjectsArgs, TrainArgs, TrialArgs,
};

/// Simulation testbed for a closed-loop visuomotor grasp controller.
#[derive(Parser)]
#[command(name = "graspsim", version)]
struct Cli {
    /// Flat `key = value` config file consulted for any flag left unset.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample an object template library.
    GenObjects(GenObjectsArgs),
    /// Render and label a training/test dataset.
    GenDataset(GenDatasetArgs),
    /// Train the distance CNN on a dataset.
    Train(TrainArgs),
    /// Report held-out L1 and prediction/label correlation.
    Eval(EvalArgs),
    /// Run one closed-loop trial and dump its trajectory.
    Trial(TrialArgs),
    /// Run a Monte Carlo scenario and write its distance CSV + SVG.
    Experiment(ExperimentArgs),
    /// Rank-sum comparison of two experiment CSVs.
    Compare(CompareArgs),
}

fn dispatch(cmd: Cmd, file: &FileConfig) -> Result<(), CliError> {
    match cmd {
        Cmd::GenObjects(a) => gen_objects(a, file),
        Cmd::GenDataset(a) => gen_dataset(a, file),
        Cmd::Train(a) => train(a, file),
        Cmd::Eval(a) => eval(a, file),
        Cmd::Trial(a) => trial(a, file),
        Cmd::Experiment(a) => experiment(a, file),
        Cmd::Compare(a) => compare(a, file),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version arrive here too; only real parse
            // problems are usage errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            exit(code);
        }
    };
    let result = match cli.config {
        Some(path) => FileConfig::load(&path),
        None => Ok(FileConfig::empty()),
    }
    .and_then(|file| dispatch(cli.cmd, &file));
    if let Err(e) = result {
        eprintln!("error: {e}");
        exit(e.code());
    }
}
