//! Forward noising and reverse sampling with an exact noise predictor for a
//! point mass, using both the ancestral and the strided sampler.

use ensemble_downscaling::models::{denoise_step, diffuse_forward, make_beta_schedule, strided_step};
use ensemble_downscaling::rng::{normals, stream};

fn summary(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

fn main() -> ensemble_downscaling::error::Result<()> {
    let s = make_beta_schedule(1e-4, 0.02, 1000)?;
    let mut rng = stream(5, &[]);
    let target = 1.5;
    let y0 = vec![target; 4000];
    for t in [1, 100, 500, 1000] {
        let eps = normals(&mut rng, y0.len());
        let (m, sd) = summary(&diffuse_forward(&y0, t, &eps, &s)?);
        println!("t={t:4}: alpha {:.4}, noised mean {m:.3}, std {sd:.3}", s.alpha(t));
    }

    let eps_hat = |y: &[f64], t: usize| -> Vec<f64> {
        let a = s.alpha(t);
        y.iter().map(|v| (v - a.sqrt() * target) / (1.0 - a).sqrt()).collect()
    };

    let mut y = normals(&mut rng, 4000);
    for t in (1..=s.steps()).rev() {
        let z = normals(&mut rng, y.len());
        y = denoise_step(&y, t, &eps_hat(&y, t), &z, &s)?;
    }
    let (m, sd) = summary(&y);
    println!("ancestral, 1000 steps: mean {m:.4}, std {sd:.2e}");

    let ts: Vec<usize> = (0..=20).rev().map(|i| i * 50).collect();
    let mut y = normals(&mut rng, 4000);
    for pair in ts.windows(2) {
        let z = normals(&mut rng, y.len());
        y = strided_step(&y, pair[0], pair[1], &eps_hat(&y, pair[0]), &z, 1.0, 1.0, &s)?;
    }
    let (m, sd) = summary(&y);
    println!("strided, 20 steps: mean {m:.4}, std {sd:.2e}");
    Ok(())
}
