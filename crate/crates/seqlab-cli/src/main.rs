use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use seqlab_cli::config::{resolve, reference_toml, Preset};
use seqlab_cli::pipeline::{
    cmd_eval, cmd_extract_cls, cmd_extract_reg, cmd_gen_data, cmd_leak_scan, cmd_selftest,
    cmd_serve_oracle, cmd_sweep_queries, cmd_train_oracle, RunContext,
};
use seqlab_cli::CliError;

/// Model-extraction lab for recurrent sequence models.
#[derive(Parser)]
#[command(name = "seqlab", version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration; omitted keys keep preset, then built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory receiving the manifest, reports, CSVs, and checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// Run seed, overriding the preset and the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Named starting configuration.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Directory with real dataset files, overriding $SEQLAB_DATA.
    #[arg(long)]
    data_root: Option<PathBuf>,
}

impl RunArgs {
    fn context(&self) -> Result<RunContext, CliError> {
        let cfg = resolve(
            self.preset,
            self.config.as_deref(),
            self.seed,
            self.data_root.as_deref(),
        )?;
        RunContext::new(
            cfg,
            self.out.clone(),
            self.preset.map(|p| p.name().to_string()),
            self.config.clone(),
        )
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the original model and report its test metric.
    TrainOracle(RunArgs),
    /// Find the first timestep whose output already gives away the answer.
    LeakScan(RunArgs),
    /// Train a classification substitute against the query API.
    ExtractCls(RunArgs),
    /// Train a regression substitute against the query API.
    ExtractReg(RunArgs),
    /// Repeat the classification attack across ascending query budgets.
    SweepQueries(RunArgs),
    /// Score the checkpoints in the output directory on the test set.
    Eval(RunArgs),
    /// Expose the original model over a line-delimited JSON TCP socket.
    ServeOracle {
        #[command(flatten)]
        args: RunArgs,
        /// Address to bind; port 0 picks a free port.
        #[arg(long, default_value = "127.0.0.1:0")]
        listen: String,
        /// Stop after this many seconds; 0 serves until killed.
        #[arg(long, default_value_t = 0)]
        for_seconds: u64,
    },
    /// Run the library's invariant checks; failures exit nonzero.
    Selftest(RunArgs),
    /// Write stand-in datasets for both tasks into the output directory.
    GenData(RunArgs),
    /// Print the reference configuration with every key at its default.
    ConfigRef,
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::TrainOracle(args) => {
            cmd_train_oracle(&args.context()?)?;
        }
        Command::LeakScan(args) => {
            cmd_leak_scan(&args.context()?)?;
        }
        Command::ExtractCls(args) => {
            cmd_extract_cls(&args.context()?)?;
        }
        Command::ExtractReg(args) => {
            cmd_extract_reg(&args.context()?)?;
        }
        Command::SweepQueries(args) => {
            cmd_sweep_queries(&args.context()?)?;
        }
        Command::Eval(args) => {
            cmd_eval(&args.context()?)?;
        }
        Command::ServeOracle {
            args,
            listen,
            for_seconds,
        } => {
            cmd_serve_oracle(&args.context()?, &listen, for_seconds)?;
        }
        Command::Selftest(args) => {
            cmd_selftest(&args.context()?)?;
        }
        Command::GenData(args) => {
            cmd_gen_data(&args.context()?)?;
        }
        Command::ConfigRef => {
            print!("{}", reference_toml());
        }
    }
    Ok(())
}

fn main() {
    if let Err(err) = run() {
        eprintln!("{err}");
        std::process::exit(err.exit_code());
    }
}
