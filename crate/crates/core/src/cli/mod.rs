//! The `raggededge` command line: ingest, train, evaluate, explain, disagg
//! and validate, each writing CSVs into one output directory.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{cmd_disagg, cmd_evaluate, cmd_explain, cmd_ingest, cmd_train, cmd_validate, Context};
pub use config::{DataSource, DisaggSettings, ExplainSettings, RunConfig, ValidateSettings};

use crate::disagg::DisaggMethod;
use crate::error::{Error, Result};
use crate::features::ConfigId;

/// Caps worker threads when set.
pub const THREADS_ENV: &str = "RAGGEDEDGE_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "raggededge",
    version,
    about = "Nowcast annual series and disaggregate them into months"
)]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Comma-separated configurations, e.g. `AGT,LagRD`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    /// Comma-separated disaggregation methods.
    #[arg(long, global = true, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long, global = true)]
    pub tau: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load or generate the panel.
    Ingest,
    /// Train the ensembles and OLS baselines on all observed years.
    Train,
    /// Hold out the last years and score every configuration.
    Evaluate,
    /// SHAP tables and elasticities.
    Explain,
    /// Monthly series for every selected method.
    Disagg,
    /// Lagged correlations against an external monthly series.
    Validate {
        /// `country,year,month,value` CSV; overrides `validate.external`.
        #[arg(long)]
        external: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Explain => "explain",
            Command::Disagg => "disagg",
            Command::Validate { .. } => "validate",
        }
    }
}

/// Loads the config and applies the command-line overrides.
pub fn resolve(cli: &Cli) -> Result<Context> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(tau) = cli.tau {
        cfg.tau = tau;
    }
    if let Some(models) = &cli.models {
        let ids = models.iter().map(|m| m.parse()).collect::<Result<Vec<ConfigId>>>()?;
        // explain works on the listed models, the other commands on configs
        cfg.explain.models.clone_from(&ids);
        cfg.configs = ids;
    }
    if let Some(methods) = &cli.methods {
        cfg.methods = methods
            .iter()
            .map(|m| m.parse())
            .collect::<Result<Vec<DisaggMethod>>>()?;
    }
    cfg.validate()?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("raggededge-out"));
    Ok(Context::new(cfg, out))
}

pub fn run(cli: &Cli) -> Result<()> {
    let ctx = resolve(cli)?;
    match &cli.command {
        Command::Ingest => cmd_ingest(&ctx),
        Command::Train => cmd_train(&ctx),
        Command::Evaluate => cmd_evaluate(&ctx),
        Command::Explain => cmd_explain(&ctx),
        Command::Disagg => cmd_disagg(&ctx),
        Command::Validate { external } => cmd_validate(&ctx, external.as_deref()),
    }
}

/// One-line JSON description of a failure.
pub fn error_line(command: Option<&str>, err: &Error) -> String {
    let mut v = serde_json::json!({
        "error": err.kind(),
        "message": err.to_string(),
    });
    if let Some(c) = command {
        v["command"] = c.into();
    }
    if let Error::MissingArtifact { artifact, requires } = err {
        v["artifact"] = artifact.as_str().into();
        v["requires"] = requires.as_str().into();
    }
    v.to_string()
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let v = serde_json::json!({"error": "usage", "message": e.to_string().trim()});
            eprintln!("{v}");
            return 2;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("{}", error_line(None, &e));
        return 1;
    }
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(Some(cli.command.name()), &e));
            1
        }
    }
}
