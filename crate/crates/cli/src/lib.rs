//! Command-line front end for cavity-perturbation permeability extraction.
//!
//! Exit codes: 0 success, 2 configuration, parse or i/o error, 3 no
//! pairable resonance, 4 unphysical inversion.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod commands;
pub mod config;
pub mod error;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use permeameter_core::traceio::DataFormat;
use serde::Serialize;

pub use config::{MaterialTable, Resolved, RunConfig};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "permeameter",
    version,
    about = "Complex permeability from cavity resonance shifts"
)]
pub struct Cli {
    /// JSON run configuration; the built-in default geometry is used otherwise.
    #[arg(long, global = true, env = "PERMEAMETER_CONFIG")]
    pub config: Option<PathBuf>,
    /// Override synth.seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Ri,
    Ma,
    Db,
}

impl From<FormatArg> for DataFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Ri => DataFormat::RI,
            FormatArg::Ma => DataFormat::MA,
            FormatArg::Db => DataFormat::DB,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List TE10n resonances; even modes are starred.
    Modes {
        /// Number of modes, default mode.max_n.
        count: Option<u32>,
    },
    /// Extract permeability from an empty and a loaded trace.
    Extract {
        #[arg(long)]
        empty: PathBuf,
        #[arg(long)]
        loaded: PathBuf,
    },
    /// Write synthetic Touchstone traces for a material roster.
    Synth {
        #[arg(long)]
        materials: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Defaults to synth.format.
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        /// Also write a CSV next to every trace.
        #[arg(long)]
        csv: bool,
    },
    /// Synthesize, re-extract and tabulate a roster with both formulas.
    Compare {
        #[arg(long)]
        materials: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare closed-form geometry factors against quadrature.
    Quadcheck,
}

pub fn load_config(cli: &Cli) -> Result<Resolved, CliError> {
    let mut raw = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        raw.synth.seed = seed;
    }
    raw.resolve()
}

fn emit<T: Serialize>(out: &mut dyn Write, json: bool, report: &T, text: String) -> Result<(), CliError> {
    let body = if json {
        serde_json::to_string_pretty(report).expect("reports serialize") + "\n"
    } else {
        text
    };
    out.write_all(body.as_bytes())
        .map_err(|e| CliError::Io(format!("cannot write output: {e}")))
}

/// Run one parsed command, writing its report to `out`. Returns the exit
/// code for reports that were produced.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Modes { count } => {
            let r = commands::modes(&cfg, count.unwrap_or(cfg.max_n));
            emit(out, cli.json, &r, r.render())?;
            Ok(0)
        }
        Command::Extract { empty, loaded } => {
            let r = commands::extract(&cfg, empty, loaded)?;
            emit(out, cli.json, &r, r.render())?;
            Ok(r.exit_code())
        }
        Command::Synth {
            materials,
            out_dir,
            format,
            csv,
        } => {
            let format = format.map(DataFormat::from).unwrap_or(cfg.synth.format);
            let inputs = commands::input_paths(cli.config.as_ref(), &[materials.as_path()]);
            let r = commands::synth(&cfg, materials, out_dir, format, *csv, &inputs)?;
            emit(out, cli.json, &r, r.render())?;
            Ok(0)
        }
        Command::Compare { materials, out: path } => {
            let inputs = commands::input_paths(cli.config.as_ref(), &[materials.as_path()]);
            let r = commands::compare(&cfg, materials, path, &inputs)?;
            emit(out, cli.json, &r, r.render())?;
            Ok(r.exit_code())
        }
        Command::Quadcheck => {
            let r = commands::quadcheck(&cfg)?;
            emit(out, cli.json, &r, r.render())?;
            Ok(0)
        }
    }
}
