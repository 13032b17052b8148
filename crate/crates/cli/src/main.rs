use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ubem_gp_core::evaluation::Split;
use ubem_gp_cli::pipeline::{parse_ks, parse_split};
use ubem_gp_cli::{config, CliResult, Run, RunConfig, Stage, StageOptions};

#[derive(Parser)]
#[command(name = "ubem-gp", version, about = "Gaussian-process modelling of UBEM error structure")]
struct Cli {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long, global = true, env = "UBEM_GP_CONFIG")]
    config: Option<PathBuf>,
    /// Run directory holding inputs and artifacts.
    #[arg(long, global = true, default_value = "run")]
    out_dir: PathBuf,
    /// Overrides scenario.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic district's measurement, weather, building and bill files.
    Synth,
    /// Run clean → calibrate → build-ve → select → train → eval → grid, resuming cached stages.
    Pipeline {
        /// Run only this stage.
        #[arg(long, value_parser = |s: &str| s.parse::<Stage>())]
        stage: Option<Stage>,
    },
    /// Mask anomalous slots and atypical seasons.
    Clean,
    /// Brute-force calibrate every weekly window.
    Calibrate,
    /// Build the weighted validation-experiment dataset.
    BuildVe,
    /// Rank features by distance correlation and order them.
    Select,
    /// Fit the error model.
    Train {
        /// Comma-separated features, overriding the selection ordering.
        #[arg(long, value_delimiter = ',')]
        features: Option<Vec<String>>,
        /// Training size, overriding eval.n_train.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Evaluate under the interpolation and extrapolation splits.
    Eval {
        #[arg(long, value_parser = parse_split)]
        split: Option<Split>,
    },
    /// Training-size sweep.
    SweepSize {
        #[arg(long, value_delimiter = ',')]
        features: Option<Vec<String>>,
        /// A single size instead of eval.sizes.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Feature-count sweep.
    SweepFeatures {
        /// `1..9`, `1..=9` or `1,3,5`; defaults to 1..=eval.k_max.
        #[arg(long, value_parser = parse_ks)]
        k: Option<KList>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Error curve and pairwise surfaces of the trained model.
    Grid,
    /// Print every configuration key with its default.
    ConfigReference,
}

/// One parsed `--k` value; an alias so clap does not treat it as repeated values.
type KList = Vec<usize>;

fn run(cli: Cli) -> CliResult<()> {
    if let Command::ConfigReference = cli.command {
        print!("{}", config::reference());
        return Ok(());
    }
    let mut config = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.scenario.seed = seed;
    }
    let run = Run::new(config, cli.out_dir);
    let none = StageOptions::default();
    match cli.command {
        Command::ConfigReference => unreachable!(),
        Command::Synth => {
            let files = run.synth()?;
            println!("synth: wrote {} files under {}", files.len(), run.layout.root.display());
            Ok(())
        }
        Command::Pipeline { stage } => run.pipeline(stage, &none),
        Command::Clean => run.run_stage(Stage::Clean, &none).map(drop),
        Command::Calibrate => run.run_stage(Stage::Calibrate, &none).map(drop),
        Command::BuildVe => run.run_stage(Stage::BuildVe, &none).map(drop),
        Command::Select => run.run_stage(Stage::Select, &none).map(drop),
        Command::Train { features, n } => {
            run.run_stage(Stage::Train, &StageOptions { features, n, ..none }).map(drop)
        }
        Command::Eval { split } => run.run_stage(Stage::Eval, &StageOptions { split, ..none }).map(drop),
        Command::SweepSize { features, n } => {
            run.run_stage(Stage::SweepSize, &StageOptions { features, n, ..none }).map(drop)
        }
        Command::SweepFeatures { k, n } => {
            run.run_stage(Stage::SweepFeatures, &StageOptions { ks: k, n, ..none }).map(drop)
        }
        Command::Grid => run.run_stage(Stage::Grid, &none).map(drop),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("UBEM_GP_LOG").unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
