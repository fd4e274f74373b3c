//! The synthetic world: a predictor with a power-law zonal spectrum, a target
//! with known conditional mean and noise, and forecast ensembles that degrade
//! with lead time.

use ensemble_downscaling::metrics::{mse_ensemble_mean, ssr};
use ensemble_downscaling::synth::{gen_forecast_ensemble, gen_predictor, gen_target, SynthConfig};

fn main() -> ensemble_downscaling::error::Result<()> {
    let cfg = SynthConfig {
        n_samples: 200,
        ..SynthConfig::default()
    };
    let x = gen_predictor(&cfg)?;
    let (y, oracle) = gen_target(&x, &cfg)?;
    let splits = cfg.splits();
    println!(
        "grid {}x{}, splits {}/{}/{}",
        cfg.n_lat,
        cfg.n_lon,
        splits.train.len(),
        splits.validation.len(),
        splits.test.len()
    );

    let noise = oracle.noise_std.iter().map(|s| s * s).sum::<f64>() / oracle.noise_std.len() as f64;
    let resid: f64 = y
        .values()
        .iter()
        .zip(oracle.conditional_mean.values())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / y.values().len() as f64;
    println!("target noise variance: expected {noise:.3}, realised {resid:.3}");
    println!(
        "predictor spectrum k=1..4: {:?}",
        oracle.predictor_spectrum[1..5].iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>()
    );

    let fc = gen_forecast_ensemble(&x, 10, 3, &cfg)?;
    for (w, e) in fc.iter().enumerate() {
        println!(
            "week {}: predictor MSE {:.3}, SSR {:.3}",
            w + 1,
            mse_ensemble_mean(e, &x)?.mean,
            ssr(e, &x)?.mean
        );
    }
    Ok(())
}
