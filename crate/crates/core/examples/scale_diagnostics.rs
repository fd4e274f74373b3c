//! Scale-dependent diagnostics: explained variance of the target EOFs, the
//! EOF reconstruction skill curve and zonal energy spectra with RESS.

use ensemble_downscaling::fields::EnsembleSeries;
use ensemble_downscaling::rng::{normals, stream};
use ensemble_downscaling::spatial::{compute_eofs, eof_skill_curve, ress, zonal_spectrum, zonal_spectrum_ensemble};
use ensemble_downscaling::synth::{apply_operator, gen_forecast_ensemble, gen_predictor, gen_target, SynthConfig};

fn main() -> ensemble_downscaling::error::Result<()> {
    let cfg = SynthConfig {
        n_samples: 300,
        ..SynthConfig::default()
    };
    let x = gen_predictor(&cfg)?;
    let (y, oracle) = gen_target(&x, &cfg)?;
    let fc = gen_forecast_ensemble(&x, 10, 1, &cfg)?;
    let fit: Vec<usize> = (0..200).collect();
    let eval: Vec<usize> = (200..300).collect();

    let basis = compute_eofs(&y.select(&fit)?)?;
    for k in [1, 5, 10, 50] {
        let part: f64 = basis.explained_variance[..k.min(basis.n_modes())].iter().sum();
        println!("{k:3} modes explain {:.1}% of variance", 100.0 * part);
    }

    // The operator applied to each member is smooth; adding white noise of
    // the target's noise level fills the small scales.
    let members = fc[0].select(&eval)?;
    let g = members.grid().clone();
    let smooth: Vec<f64> = (0..100)
        .flat_map(|n| (0..10).map(move |m| (n, m)))
        .flat_map(|(n, m)| apply_operator(&cfg, members.member(n, m)))
        .collect();
    let smooth = EnsembleSeries::new(g.clone(), 100, 10, smooth, false)?;
    let sigma = oracle.noise_std.iter().sum::<f64>() / oracle.noise_std.len() as f64;
    let white = normals(&mut stream(9, &[]), smooth.values().len());
    let noisy = smooth.values().iter().zip(&white).map(|(v, e)| v + sigma * e).collect();
    let noisy = EnsembleSeries::new(g, 100, 10, noisy, false)?;

    let obs = y.select(&eval)?;
    let k_full = basis.n_modes();
    println!("K'    MSSS   CRPSS  SSR (noisy vs smooth)");
    for r in eof_skill_curve(&noisy, &smooth, &obs, &basis, &[1, 5, 20, 100, k_full], false)? {
        println!("{:4} {:6.3} {:7.3} {:5.3}", r.k_prime, r.msss, r.crpss, r.ssr);
    }

    let reference = zonal_spectrum(&obs, false)?;
    let r_smooth = ress(&zonal_spectrum_ensemble(&smooth, false)?, &reference)?;
    let r_noisy = ress(&zonal_spectrum_ensemble(&noisy, false)?, &reference)?;
    println!(" k  wavelength km  RESS smooth  RESS noisy");
    for k in 1..=r_smooth.len() {
        println!(
            "{k:2} {:14.0} {:12.3} {:11.3}",
            reference.mean_wavelength_km(k),
            r_smooth[k - 1],
            r_noisy[k - 1]
        );
    }
    Ok(())
}
