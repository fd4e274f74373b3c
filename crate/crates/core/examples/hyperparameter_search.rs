//! A short random search over learning rate, weight decay and the diffusion
//! settings, ranking trials by validation loss.

use ensemble_downscaling::cli::RunConfig;
use ensemble_downscaling::fields::{fit_climatology, standardize};
use ensemble_downscaling::models::{train, MechanismConfig, MechanismKind, TrainConfig, TrainingData};
use ensemble_downscaling::synth::{gen_predictor, gen_target, SynthConfig};

fn main() -> ensemble_downscaling::error::Result<()> {
    let base = RunConfig {
        model: MechanismKind::Dnn,
        synth: SynthConfig {
            n_lat: 8,
            n_lon: 12,
            n_samples: 120,
            ..SynthConfig::default()
        },
        train: TrainConfig {
            max_epochs: 4,
            batch_size: Some(32),
            widths: vec![4, 8],
            ..TrainConfig::default()
        },
        ..RunConfig::default()
    };
    let splits = base.synth.splits();
    let x = gen_predictor(&base.synth)?;
    let (y, _) = gen_target(&x, &base.synth)?;
    let xs = standardize(&x, &fit_climatology(&x, &splits.train)?)?;
    let ys = standardize(&y, &fit_climatology(&y, &splits.train)?)?;
    let data = TrainingData::new(
        xs.select(&splits.train)?,
        ys.select(&splits.train)?,
        xs.select(&splits.validation)?,
        ys.select(&splits.validation)?,
    )?;

    let mut results = Vec::new();
    for trial in 0..6 {
        let cfg = RunConfig {
            search_trial: Some(trial),
            ..base.clone()
        };
        let (mech, tc) = cfg.training_setup();
        let (bundle, _) = train(&mech, &data, &tc, trial)?;
        let MechanismConfig::Dnn(d) = &mech else { unreachable!() };
        let loss = bundle.metadata.best_validation_loss;
        println!(
            "trial {trial}: lr {:.1e}, wd {:.1e}, T {}, beta [{:.1e}, {:.3}], val loss {loss:.4}",
            tc.learning_rate, tc.weight_decay, d.steps, d.beta_start, d.beta_end
        );
        results.push((loss, trial));
    }
    results.sort_by(|a, b| a.0.total_cmp(&b.0));
    println!("best trial {} with validation loss {:.4}", results[0].1, results[0].0);
    Ok(())
}
