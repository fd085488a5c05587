//! Configuration-driven command line: `screen`, `prevalence`, `analyze`,
//! `synth`, `report`, and `run` for everything plus a manifest.

mod config;
mod pipeline;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::dataset::ItemCode;
use crate::error::{ErrorKind, Result};

pub use config::{load_config, validate_config, InputSpec, ItemSelection, RunConfig};
pub use pipeline::{
    item_dir, load_input, rebuild_reports, run_pipeline, run_stages, synthetic_seed, write_atomic,
    write_json, write_synthetic, ItemFailure, ItemPrevalence, LoadedInput, RunSummary, Stages,
    FAILURES_JSON, ITEMS_DIR, MANIFEST_JSON, PREVALENCE_CSV, PREVALENCE_JSON, REJECTED_ROWS_CSV,
    REPEATED_JSON, SCREENING_HISTOGRAMS_CSV, SCREENING_JSON, SELECTIONS_CSV, TABLE2_CSV, TABLE3_CSV,
};

#[derive(Debug, Parser)]
#[command(name = "thinprice", version, about = "Thin price sampling survey toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Screen items by within-FSU price homogeneity.
    Screen(CommonArgs),
    /// Screening plus prevalence probabilities.
    Prevalence(CommonArgs),
    /// Screening plus the repeated KS procedure.
    Analyze(CommonArgs),
    /// Write the synthetic survey as CSV with its ground truth.
    Synth(CommonArgs),
    /// Rebuild summary tables from an output directory.
    Report(CommonArgs),
    /// All stages and a run manifest.
    Run(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Comma-separated item codes, overriding the config.
    #[arg(long, value_delimiter = ',')]
    pub items: Option<Vec<ItemCode>>,
    /// Master seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Worker threads, 0 for one per core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Screen(a)
            | Command::Prevalence(a)
            | Command::Analyze(a)
            | Command::Synth(a)
            | Command::Report(a)
            | Command::Run(a) => a,
        }
    }
}

/// Config file with command-line overrides applied.
pub fn resolve_config(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = load_config(&args.config)?;
    if let Some(items) = &args.items {
        cfg.items = ItemSelection::List(items.clone());
    }
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &args.output {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn execute(cmd: &Command) -> Result<i32> {
    let args = cmd.common();
    if args.threads > 0 {
        // Fails only if a pool already exists, which leaves that pool in use.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(args.threads).build_global();
    }
    let cfg = resolve_config(args)?;
    let violations = validate_config(&cfg);
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("config: {v}");
        }
        return Ok(ErrorKind::Config.exit_code());
    }
    let stages = match cmd {
        Command::Synth(_) => {
            let path = write_synthetic(&cfg)?;
            eprintln!("wrote {}", path.display());
            return Ok(0);
        }
        Command::Report(_) => {
            rebuild_reports(&cfg.output_dir)?;
            return Ok(0);
        }
        Command::Screen(_) => Stages { prevalence: false, analyze: false, manifest: false },
        Command::Prevalence(_) => Stages { prevalence: true, analyze: false, manifest: false },
        Command::Analyze(_) => Stages { prevalence: false, analyze: true, manifest: false },
        Command::Run(_) => Stages::ALL,
    };
    let summary = run_stages(&cfg, stages)?;
    for f in &summary.failures {
        match f.item {
            Some(item) => eprintln!("item {item}: {} failed: {}", f.stage, f.message),
            None => eprintln!("{} failed: {}", f.stage, f.message),
        }
    }
    Ok(summary.exit_code())
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { ErrorKind::Config.exit_code() } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.kind().exit_code()
        }
    }
}
