//! Trains the four uncertainty mechanisms on a small synthetic world and
//! downscales a multi-member forecast with each.
//!
//! `cargo run --release --example mechanisms -- 120` sets the epoch budget.

use ensemble_downscaling::ensemble::{generate_ensemble, GenerationPlan};
use ensemble_downscaling::fields::{fit_climatology, standardize, standardize_ensemble};
use ensemble_downscaling::metrics::{crps_ensemble, mse_ensemble_mean, ssr};
use ensemble_downscaling::models::{
    train, DiffusionConfig, MechanismConfig, MechanismKind, SamplerKind, TrainConfig, TrainingData,
};
use ensemble_downscaling::synth::{gen_forecast_ensemble, gen_predictor, gen_target, SynthConfig};
use std::time::Instant;

fn main() -> ensemble_downscaling::error::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(60);
    let cfg = SynthConfig {
        n_lat: 8,
        n_lon: 12,
        n_samples: 200,
        ..SynthConfig::default()
    };
    let splits = cfg.splits();
    let x = gen_predictor(&cfg)?;
    let (y, _) = gen_target(&x, &cfg)?;
    let x_clim = fit_climatology(&x, &splits.train)?;
    let y_clim = fit_climatology(&y, &splits.train)?;
    let xs = standardize(&x, &x_clim)?;
    let ys = standardize(&y, &y_clim)?;
    let data = TrainingData::new(
        xs.select(&splits.train)?,
        ys.select(&splits.train)?,
        xs.select(&splits.validation)?,
        ys.select(&splits.validation)?,
    )?
    .with_climatologies(x_clim.clone(), y_clim);

    let fc = gen_forecast_ensemble(&x, 5, 1, &cfg)?;
    let forecast = standardize_ensemble(&fc[0].select(&splits.test)?, &x_clim)?;
    let obs = y.select(&splits.test)?;

    let train_cfg = TrainConfig {
        max_epochs: epochs,
        batch_size: Some(32),
        widths: vec![8, 16],
        learning_rate: 3e-3,
        ..TrainConfig::default()
    };
    for (i, kind) in MechanismKind::ALL.into_iter().enumerate() {
        let mut mech = MechanismConfig::default_for(kind);
        if let MechanismConfig::Dnn(d) = &mut mech {
            *d = DiffusionConfig {
                steps: 200,
                beta_end: 0.05,
                sampler: SamplerKind::Strided {
                    steps: 10,
                    eta: 1.0,
                    temperature: 1.0,
                },
                ..DiffusionConfig::default()
            };
        }
        let t0 = Instant::now();
        let (bundle, log) = train(&mech, &data, &train_cfg, i as u64)?;
        let ens = generate_ensemble(&bundle, &forecast, &GenerationPlan::new(kind, 100 + i as u64))?;
        println!(
            "{kind}: {} params, best epoch {} of {}, {} members, MSE {:.3}, CRPS {:.3}, SSR {:.3} ({:.1} s)",
            bundle.n_parameters(),
            log.best_epoch,
            log.epochs.len(),
            ens.n_members(),
            mse_ensemble_mean(&ens, &obs)?.mean,
            crps_ensemble(&ens, &obs)?.mean,
            ssr(&ens, &obs)?.mean,
            t0.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
