//! Trained diffusion model against the synthetic world's conditional mean.

use ensemble_downscaling::ensemble::{generate_ensemble, GenerationPlan};
use ensemble_downscaling::fields::{fit_climatology, standardize, EnsembleSeries};
use ensemble_downscaling::metrics::mse_ensemble_mean;
use ensemble_downscaling::models::{
    train, DiffusionConfig, MechanismConfig, MechanismKind, SamplerKind, TrainConfig, TrainingData,
};
use ensemble_downscaling::synth::{gen_predictor, gen_target, SynthConfig};

#[test]
fn dnn_ensemble_mean_tracks_oracle_mse() {
    let cfg = SynthConfig::default();
    let splits = cfg.splits();
    let x = gen_predictor(&cfg).unwrap();
    let (y, oracle) = gen_target(&x, &cfg).unwrap();
    let mut xc = fit_climatology(&x, &splits.train).unwrap();
    xc.source_split = "x:train".into();
    let mut yc = fit_climatology(&y, &splits.train).unwrap();
    yc.source_split = "y:train".into();
    let xs = standardize(&x, &xc).unwrap();
    let ys = standardize(&y, &yc).unwrap();
    let data = TrainingData::new(
        xs.select(&splits.train).unwrap(),
        ys.select(&splits.train).unwrap(),
        xs.select(&splits.validation).unwrap(),
        ys.select(&splits.validation).unwrap(),
    )
    .unwrap()
    .with_climatologies(xc, yc);
    let mech = MechanismConfig::Dnn(DiffusionConfig {
        sampler: SamplerKind::Strided {
            steps: 10,
            eta: 1.0,
            temperature: 1.0,
        },
        ..DiffusionConfig::default()
    });
    let tc = TrainConfig {
        max_epochs: 120,
        batch_size: Some(32),
        patience: 30,
        learning_rate: 3e-3,
        ..TrainConfig::default()
    };
    let (model, _) = train(&mech, &data, &tc, 3).unwrap();

    let x_test = EnsembleSeries::from_field(&xs.select(&splits.test).unwrap());
    let ens = generate_ensemble(&model, &x_test, &GenerationPlan::new(MechanismKind::Dnn, 5)).unwrap();
    let y_test = y.select(&splits.test).unwrap();
    let model_mse = mse_ensemble_mean(&ens, &y_test).unwrap().mean;
    let oracle_ens = EnsembleSeries::from_field(&oracle.conditional_mean.select(&splits.test).unwrap());
    let oracle_mse = mse_ensemble_mean(&oracle_ens, &y_test).unwrap().mean;
    let ratio = model_mse / oracle_mse;
    assert!((ratio - 1.0).abs() <= 0.15, "model {model_mse:.4} vs oracle {oracle_mse:.4}");
}
