//! The whole command-line pipeline run in-process on a small synthetic world:
//! synth, calibrate, then train, generate and verify each mechanism, and a
//! final report. Artifacts go to the directory given as the first argument
//! (a temporary one otherwise).

use ensemble_downscaling::cli::{
    cmd_bootstrap, cmd_calibrate, cmd_eof, cmd_generate, cmd_report, cmd_spectrum, cmd_synth, cmd_train, cmd_verify,
    RunConfig,
};
use ensemble_downscaling::models::{DiffusionConfig, MechanismKind, SamplerKind, TrainConfig};
use ensemble_downscaling::synth::SynthConfig;

fn main() -> ensemble_downscaling::error::Result<()> {
    let tmp = tempfile::tempdir()?;
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| tmp.path().join("run"));
    let base = RunConfig {
        out: out.clone(),
        replicates: 200,
        eof_k_primes: vec![1, 5, 20],
        synth: SynthConfig {
            n_lat: 8,
            n_lon: 12,
            n_samples: 120,
            members: 5,
            lead_weeks: 2,
            ..SynthConfig::default()
        },
        train: TrainConfig {
            max_epochs: 10,
            batch_size: Some(32),
            widths: vec![4, 8],
            learning_rate: 3e-3,
            ..TrainConfig::default()
        },
        dnn: DiffusionConfig {
            sampler: SamplerKind::Strided {
                steps: 10,
                eta: 1.0,
                temperature: 1.0,
            },
            ..DiffusionConfig::default()
        },
        ..RunConfig::default()
    };
    base.validate()?;
    cmd_synth(&base)?;
    for week in 1..=2 {
        cmd_calibrate(&RunConfig {
            lead_week: week,
            ..base.clone()
        })?;
    }
    for model in MechanismKind::ALL {
        let cfg = RunConfig { model, ..base.clone() };
        cmd_train(&cfg)?;
        for lead_week in 1..=2 {
            let cfg = RunConfig { lead_week, ..cfg.clone() };
            cmd_generate(&cfg)?;
            cmd_verify(&cfg)?;
            cmd_eof(&cfg)?;
            cmd_spectrum(&cfg)?;
            cmd_bootstrap(&cfg)?;
        }
    }
    cmd_report(&base)?;
    println!("artifacts in {}", out.display());
    Ok(())
}
