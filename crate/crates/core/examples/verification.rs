//! Grid-wise verification of a raw and a mean-variance adjusted benchmark
//! against the synthetic truth, with skill scores, relative differences and
//! their bootstrap significance.

use ensemble_downscaling::ensemble::mva_calibrate;
use ensemble_downscaling::fields::{fit_climatology, Climatology};
use ensemble_downscaling::metrics::{
    bootstrap_significance, crps_ensemble, crps_ensemble_fair, mse_ensemble_mean, relative_difference, skill_score, ssr,
    ScoreKind,
};
use ensemble_downscaling::synth::{gen_benchmark_ensemble, gen_forecast_ensemble, gen_predictor, gen_target, SynthConfig};

fn main() -> ensemble_downscaling::error::Result<()> {
    let cfg = SynthConfig {
        n_samples: 300,
        ..SynthConfig::default()
    };
    let x = gen_predictor(&cfg)?;
    let (y, _) = gen_target(&x, &cfg)?;
    let fc = gen_forecast_ensemble(&x, 10, 1, &cfg)?;
    let raw = gen_benchmark_ensemble(&fc[0], 1, &cfg)?;

    let fit: Vec<usize> = (0..200).collect();
    let test: Vec<usize> = (200..300).collect();
    let cal = mva_calibrate(&raw, &Climatology::fit_ensemble(&raw, &fit)?, &fit_climatology(&y, &fit)?)?;
    let (raw, cal, obs) = (raw.select(&test)?, cal.select(&test)?, y.select(&test)?);

    for (name, e) in [("raw", &raw), ("adjusted", &cal)] {
        println!(
            "{name:>8}: MSE {:.3}, CRPS {:.3}, fair CRPS {:.3}, SSR {:.3}",
            mse_ensemble_mean(e, &obs)?.mean,
            crps_ensemble(e, &obs)?.mean,
            crps_ensemble_fair(e, &obs)?.mean,
            ssr(e, &obs)?.mean
        );
    }

    let c_cal = crps_ensemble(&cal, &obs)?;
    let c_raw = crps_ensemble(&raw, &obs)?;
    println!("CRPSS of adjusted over raw: {:.3}", skill_score(&c_cal, &c_raw)?.mean);
    let dr = relative_difference(&c_cal, &c_raw)?;
    let improved = dr.values.iter().filter(|v| **v < 0.0).count();
    println!("relative CRPS difference < 0 at {improved} of {} points", dr.values.len());

    let b = bootstrap_significance(&cal, &raw, &obs, ScoreKind::Crps, 500, 1)?;
    let flagged = b.points.iter().filter(|p| !p.flag.is_empty()).count();
    println!(
        "bootstrap: domain median {:.3}, p {:.3}, {flagged} significant points",
        b.domain.median, b.domain.p_value
    );
    println!("{}", b.to_csv().lines().take(4).collect::<Vec<_>>().join("\n"));
    Ok(())
}
