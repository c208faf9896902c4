//! `helioflux` command-line pipeline.

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use helioflux::datagen::Split;

pub mod commands;
pub mod config;
pub mod report;

use config::RunConfig;
use report::Table;

/// Bad arguments or configuration; maps to exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_VALIDATION;
        }
        if let Some(h) = cause.downcast_ref::<helioflux::HelioError>() {
            return if h.is_validation() { EXIT_VALIDATION } else { EXIT_RUNTIME };
        }
    }
    EXIT_RUNTIME
}

#[derive(Debug, Parser)]
#[command(name = "helioflux", version, about = "Heliostat flux simulation and surface reconstruction")]
pub struct Cli {
    /// Master seed; every random draw derives from it.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// JSON run configuration; omitted sections take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a procedural heliostat field.
    GenField {
        #[arg(long)]
        out: PathBuf,
        /// Overrides `field.heliostats` from the config.
        #[arg(long)]
        heliostats: Option<usize>,
    },
    /// Simulate a training dataset for a field.
    Generate {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes model.hfck and history.csv.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a model on a dataset split.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Train with and without randomization and compare on degraded test data.
    Ablation {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Receiver extrapolation with superposition over the aim grid.
    Scenario {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a flux record to .pgm or .png.
    Render {
        #[arg(long)]
        flux: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn print(title: &str, t: &Table) {
    println!("{title}");
    print!("{}", t.to_text());
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Command::GenField {
        heliostats: Some(n), ..
    } = &cli.command
    {
        cfg.field.heliostats = *n;
        cfg.validate()?;
    }
    if cli.threads > 0 {
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    let seed = cli.seed;
    match &cli.command {
        Command::GenField { out, .. } => print("field", &commands::gen_field(&cfg, seed, out)?),
        Command::Generate { field, out } => print("dataset", &commands::generate(&cfg, seed, field, out)?),
        Command::Train { dataset, out } => print("training history", &commands::train(&cfg, seed, dataset, out)?),
        Command::Evaluate {
            dataset,
            model,
            out,
            split,
        } => {
            let r = commands::evaluate(&cfg, seed, dataset, model, (*split).into(), out)?;
            print("evaluation", &r.rows_table());
            print("summary", &r.summary_table());
            println!("mispredictions (ssim < {}): {}", helioflux::metrics::MISPREDICTION_SSIM, r.mispredictions);
        }
        Command::Ablation { dataset, out } => print("ablation (surface MAE, mm)", &commands::ablation(&cfg, seed, dataset, out)?),
        Command::Scenario { field, model, out } => {
            let r = commands::scenario(&cfg, seed, field, model, out)?;
            print("per-heliostat receiver accuracy", &r.heliostat_table());
            print("scenario", &r.summary_table());
        }
        Command::Render { flux, out } => {
            let p = commands::render(flux, out)?;
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}
