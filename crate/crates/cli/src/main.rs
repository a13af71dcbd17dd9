//! `vsfdc` command-line front end.
//!
//! Exit codes: 0 success or all wafers NoFault, 1 fault detected, 2 usage or
//! config error, 3 data error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vsfdc::config::RunConfig;
use vsfdc::model::{EtchRegion, SensorSuite};
use vsfdc::regress::Technique;
use vsfdc::Error;

#[derive(Parser)]
#[command(name = "vsfdc", version, about = "Virtual-sensor fault detection for plasma etch")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides the config seed (and the GA seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Where this command writes: the dataset directory for `simulate`,
    /// the output directory otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the designed experiment and write the dataset.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Extract per-region feature matrices from the dataset traces.
    Pretreat {
        #[command(flatten)]
        common: Common,
    },
    /// Train the f⁻¹ and g banks and write the model bundle.
    Train {
        #[command(flatten)]
        common: Common,
        /// MLR, PCR, LinearPLS, PolyPLS or NNPLS; overrides model.technique.
        #[arg(long, value_parser = parse::<Technique>)]
        technique: Option<Technique>,
        /// Restrict to one suite (repeatable).
        #[arg(long, value_parser = parse::<SensorSuite>)]
        suite: Vec<SensorSuite>,
        /// Restrict to one region (repeatable).
        #[arg(long, value_parser = parse::<EtchRegion>)]
        region: Vec<EtchRegion>,
    },
    /// Classify wafers against the trained bundle. With no ids, every test
    /// and unassigned wafer is checked.
    Detect {
        #[command(flatten)]
        common: Common,
        /// Wafer ids from the manifest.
        wafers: Vec<String>,
    },
    /// Genetic-algorithm variable selection for one target and matrix.
    GaSelect {
        #[command(flatten)]
        common: Common,
        /// Recipe target (e.g. pressure) or per-die wafer state (e.g. lwr[3]).
        #[arg(long)]
        target: String,
        /// MLR, PCR, LinearPLS, PolyPLS or NNPLS; overrides model.technique.
        #[arg(long, value_parser = parse::<Technique>)]
        technique: Option<Technique>,
        #[arg(long, value_parser = parse::<SensorSuite>, default_value = "Machine")]
        suite: SensorSuite,
        #[arg(long, value_parser = parse::<EtchRegion>, default_value = "TiN")]
        region: EtchRegion,
    },
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Failure with its exit status.
pub struct Failure {
    pub code: u8,
    pub error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = if error.is_data_error() { 3 } else { 2 };
        Failure { code, error }
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path),
        None => {
            let mut c = RunConfig::default();
            c.resolve_paths(std::path::Path::new("")).map(|_| c)
        }
    }
    .map_err(|error| Failure { code: 2, error })?;
    if let Some(seed) = common.seed {
        config.seed = seed;
        config.ga.seed = seed;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Simulate { common } => {
            let mut config = load_config(&common)?;
            if let Some(out) = common.out {
                config.paths.dataset = out;
            }
            commands::simulate(&config)?;
            Ok(0)
        }
        Command::Pretreat { common } => {
            let config = with_out(load_config(&common)?, common.out);
            commands::pretreat(&config)?;
            Ok(0)
        }
        Command::Train {
            common,
            technique,
            suite,
            region,
        } => {
            let mut config = with_out(load_config(&common)?, common.out);
            if let Some(t) = technique {
                config.model.technique = t;
            }
            commands::train(&config, &suite, &region)?;
            Ok(0)
        }
        Command::Detect { common, wafers } => {
            let config = with_out(load_config(&common)?, common.out);
            let any_fault = commands::detect(&config, &wafers)?;
            Ok(u8::from(any_fault))
        }
        Command::GaSelect {
            common,
            target,
            technique,
            suite,
            region,
        } => {
            let mut config = with_out(load_config(&common)?, common.out);
            if let Some(t) = technique {
                config.model.technique = t;
            }
            commands::ga_select(&config, &target, suite, region)?;
            Ok(0)
        }
    }
}

fn with_out(mut config: RunConfig, out: Option<PathBuf>) -> RunConfig {
    if let Some(out) = out {
        config.paths.output = out;
    }
    config
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}
