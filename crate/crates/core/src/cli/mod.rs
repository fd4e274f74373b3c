//! Command-line pipeline driver: synthetic world, training, P×M generation,
//! benchmark calibration and the verification tables.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage error, 3 missing input,
//! 4 invalid configuration, 5 model, grid or climatology mismatch.

mod commands;
mod config;

pub use commands::{
    cmd_bootstrap, cmd_calibrate, cmd_eof, cmd_generate, cmd_report, cmd_spectrum, cmd_synth, cmd_train, cmd_verify,
    Layout, ScoreSummary, Summary,
};
pub use config::{sample_hyperparameters, validate_search_ranges, RunConfig};

use crate::error::{Error, Result};
use crate::models::MechanismKind;
use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "downscale", version, about = "Probabilistic downscaling of ensemble forecasts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate the synthetic predictor, target and forecast ensembles
    Synth,
    /// Train one mechanism on the training split
    Train,
    /// Downscale the test-split forecast members of one lead week
    Generate,
    /// Mean-variance adjust the benchmark ensemble
    Calibrate,
    /// Grid-wise scores, skill scores and relative differences
    Verify,
    /// Skill of K'-mode EOF reconstructions
    Eof,
    /// Zonal energy spectra and RESS
    Spectrum,
    /// Paired bootstrap significance of the relative differences
    Bootstrap,
    /// Join all score tables into summary.json
    Report,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON run configuration; flags take precedence over it
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub model: Option<MechanismKind>,
    /// Input members M
    #[arg(long, global = true)]
    pub members: Option<usize>,
    /// Realisations P per input member
    #[arg(long, global = true)]
    pub samples_per_member: Option<usize>,
    #[arg(long, global = true)]
    pub lead_week: Option<usize>,
    #[arg(long, global = true)]
    pub replicates: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub fair_crps: bool,
    #[arg(long, global = true)]
    pub cos_weight: bool,
    #[arg(long, global = true)]
    pub anomaly_spectrum: bool,
}

impl Flags {
    /// Loads the config file (or defaults) and applies the flags on top.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.model {
            c.model = v;
        }
        if let Some(v) = self.members {
            c.synth.members = v;
        }
        if let Some(v) = self.samples_per_member {
            c.samples_per_member = Some(v);
        }
        if let Some(v) = self.lead_week {
            c.lead_week = v;
        }
        if let Some(v) = self.replicates {
            c.replicates = v;
        }
        if let Some(v) = &self.out {
            c.out = v.clone();
        }
        if let Some(v) = self.threads {
            c.threads = Some(v);
        }
        c.fair_crps |= self.fair_crps;
        c.cos_weight |= self.cos_weight;
        c.anomaly_spectrum |= self.anomaly_spectrum;
        c.validate()?;
        Ok(c)
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::MissingInput(_) => 3,
        Error::InvalidConfig(_) | Error::InvalidGrid(_) | Error::OutOfRange(_) => 4,
        Error::ShapeMismatch { .. }
        | Error::GridMismatch(_)
        | Error::FlagMismatch(_)
        | Error::WrongMechanism { .. }
        | Error::ClimatologyMismatch(_) => 5,
        _ => 1,
    }
}

pub fn execute(command: Command, cfg: &RunConfig) -> Result<()> {
    if let Some(k) = cfg.threads {
        // A pool that already exists (a second call in one process) is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    match command {
        Command::Synth => cmd_synth(cfg),
        Command::Train => cmd_train(cfg),
        Command::Generate => cmd_generate(cfg),
        Command::Calibrate => cmd_calibrate(cfg),
        Command::Verify => cmd_verify(cfg),
        Command::Eof => cmd_eof(cfg),
        Command::Spectrum => cmd_spectrum(cfg),
        Command::Bootstrap => cmd_bootstrap(cfg),
        Command::Report => cmd_report(cfg),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match cli.flags.resolve().and_then(|cfg| execute(cli.command, &cfg)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        std::fs::write(&p, r#"{"seed": 5, "lead_week": 2, "replicates": 10}"#).unwrap();
        let f = Flags {
            config: Some(p),
            seed: Some(9),
            model: Some(MechanismKind::Qnn),
            fair_crps: true,
            ..Flags::default()
        };
        let c = f.resolve().unwrap();
        assert_eq!((c.seed, c.lead_week, c.replicates, c.model), (9, 2, 10, MechanismKind::Qnn));
        assert!(c.fair_crps);
    }

    #[test]
    fn error_classes_map_to_distinct_codes() {
        assert_eq!(exit_code(&Error::MissingInput("x".into())), 3);
        assert_eq!(exit_code(&Error::InvalidConfig("x".into())), 4);
        assert_eq!(exit_code(&Error::ClimatologyMismatch("x".into())), 5);
        assert_eq!(exit_code(&Error::ZeroVariance(0)), 1);
    }

    #[test]
    fn model_names_parse() {
        let cli = Cli::try_parse_from(["downscale", "train", "--model", "dnn", "--lead-week", "3"]).unwrap();
        assert_eq!(cli.command, Command::Train);
        assert_eq!(cli.flags.model, Some(MechanismKind::Dnn));
        assert!(Cli::try_parse_from(["downscale", "train", "--model", "gan"]).is_err());
    }
}
