//! `mcnn`: ingest sequences, train and evaluate MC-NN models, run nested
//! cross-validation and the nearest-neighbour baseline, and predict.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Mask;
use config::{Needs, Overrides, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(name = "mcnn", about = "Influenza A host and subtype prediction from HA/NA sequences", disable_version_flag = true)]
struct Cli {
    /// Print the program and file format versions.
    #[arg(long)]
    version: bool,

    /// More log output (-v info, -vv debug). RUST_LOG takes precedence.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long, short)]
    config: PathBuf,
    /// Override a config key, e.g. `--set train.max_epochs=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `jobs`, the number of concurrent grid trials.
    #[arg(long)]
    jobs: Option<usize>,
    /// Overrides `data.output`.
    #[arg(long)]
    output: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self, needs: &[Needs]) -> Result<RunConfig, CliError> {
        let over = Overrides {
            sets: self.sets.clone(),
            seed: self.seed,
            jobs: self.jobs,
            output: self.output.clone(),
        };
        RunConfig::load(&self.config, &over, needs)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Join FASTA files with a metadata table and curate them into a dataset.
    Ingest {
        /// HA FASTA files.
        #[arg(long, required = true, num_args = 1..)]
        ha: Vec<PathBuf>,
        /// NA FASTA files.
        #[arg(long, required = true, num_args = 1..)]
        na: Vec<PathBuf>,
        /// Tab-separated metadata: strain_id, source, host, subtype, year, completeness.
        #[arg(long)]
        metadata: PathBuf,
        /// Label schema TOML; the bundled schema when omitted.
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Output dataset (newline-delimited JSON).
        #[arg(long)]
        out: PathBuf,
        /// Curation log; defaults to the dataset path with a `.log` extension.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Also write pre20/post20/incomplete splits into this directory.
        #[arg(long)]
        split_dir: Option<PathBuf>,
    },
    /// Train one model and write a checkpoint plus its history.
    Train(ConfigArgs),
    /// Nested cross-validation over the hyperparameter grid.
    NestedCv(ConfigArgs),
    /// Nearest-neighbour baseline (or imported best hits) under the same folds.
    Baseline(ConfigArgs),
    /// Score a checkpoint on a labelled dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Directory for the report files.
        #[arg(long)]
        out: PathBuf,
        /// File stem of the report files.
        #[arg(long, default_value = "eval")]
        stem: String,
        /// Mask the NA channel.
        #[arg(long, conflicts_with = "na_only")]
        ha_only: bool,
        /// Mask the HA channel.
        #[arg(long)]
        na_only: bool,
    },
    /// Predict host and subtypes for unlabelled sequences.
    #[command(group = clap::ArgGroup::new("inputs").required(true).multiple(true).args(["ha", "na"]))]
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// HA FASTA; records pair with NA records by strain key.
        #[arg(long)]
        ha: Option<PathBuf>,
        /// NA FASTA.
        #[arg(long)]
        na: Option<PathBuf>,
        /// Output TSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic corpus with motif-determined labels and its schema.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Schema output; defaults to `<out>.schema.toml`.
        #[arg(long)]
        schema_out: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        n: usize,
        /// Per-residue substitution rate applied to the host motifs.
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 1)]
        world_seed: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "syn")]
        prefix: String,
    },
}

fn init_logging(verbose: u8, config_level: Option<&str>) {
    let level = match verbose {
        0 => config_level.unwrap_or("warn"),
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn run_config(args: &ConfigArgs, verbose: u8, needs: &[Needs]) -> Result<RunConfig, CliError> {
    let cfg = args.load(needs)?;
    init_logging(verbose, cfg.verbosity.as_deref());
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let v = cli.verbose;
    let Some(command) = cli.command else {
        return Err(CliError::Config(vec!["no command given; see --help".into()]));
    };
    match command {
        Command::Ingest { ha, na, metadata, schema, out, log, split_dir } => {
            init_logging(v, None);
            commands::ingest(&commands::IngestArgs { ha, na, metadata, schema, out, log, split_dir })
        }
        Command::Train(a) => commands::cmd_train(&run_config(&a, v, &[Needs::Model])?),
        Command::NestedCv(a) => commands::cmd_nested_cv(&run_config(&a, v, &[Needs::Model, Needs::Grid])?),
        Command::Baseline(a) => commands::cmd_baseline(&run_config(&a, v, &[Needs::Baseline])?),
        Command::Evaluate { checkpoint, dataset, out, stem, ha_only, na_only } => {
            init_logging(v, None);
            let mask = match (ha_only, na_only) {
                (true, _) => Mask::HaOnly,
                (_, true) => Mask::NaOnly,
                _ => Mask::None,
            };
            commands::cmd_evaluate(&checkpoint, &dataset, &out, &stem, mask)
        }
        Command::Predict { checkpoint, ha, na, out } => {
            init_logging(v, None);
            commands::cmd_predict(&checkpoint, ha.as_deref(), na.as_deref(), out.as_deref())
        }
        Command::Synth { out, schema_out, n, noise, world_seed, seed, prefix } => {
            init_logging(v, None);
            commands::cmd_synth(&commands::SynthArgs { out, schema_out, n, noise, world_seed, seed, prefix })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.version {
        println!("{}", commands::version_text());
        return ExitCode::SUCCESS;
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mcnn: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
