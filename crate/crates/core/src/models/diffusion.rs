//! Linear-β DDPM schedule, forward noising and reverse steps.

use crate::error::{shape_mismatch, Error, Result};
use crate::rng::{fill_normal, StreamRng};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    /// β_t for t = 1..=T (index t−1).
    pub betas: Vec<f64>,
    /// Cumulative α_t = Π_{s≤t}(1 − β_s).
    pub alphas: Vec<f64>,
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// α_t, with the α_0 = 1 convention.
    pub fn alpha(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alphas[t - 1]
        }
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::OutOfRange(format!("timestep {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }
}

pub fn make_beta_schedule(beta_start: f64, beta_end: f64, steps: usize) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::InvalidConfig(format!("diffusion needs T ≥ 2, got {steps}")));
    }
    if !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "need 0 < beta_start < beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| beta_start + i as f64 * (beta_end - beta_start) / (steps - 1) as f64)
        .collect();
    let mut acc = 1.0;
    let alphas = betas
        .iter()
        .map(|b| {
            acc *= 1.0 - b;
            acc
        })
        .collect();
    Ok(NoiseSchedule { betas, alphas })
}

/// `y_t = √α_t · y0 + √(1 − α_t) · ε`. `t = 0` returns `y0`.
pub fn diffuse_forward(y0: &[f64], t: usize, eps: &[f64], s: &NoiseSchedule) -> Result<Vec<f64>> {
    if t > s.steps() {
        return Err(Error::OutOfRange(format!("timestep {t} outside 0..={}", s.steps())));
    }
    if y0.len() != eps.len() {
        return Err(shape_mismatch(&[y0.len()], &[eps.len()]));
    }
    let a = s.alpha(t);
    let (ca, cn) = (a.sqrt(), (1.0 - a).sqrt());
    Ok(y0.iter().zip(eps).map(|(y, e)| ca * y + cn * e).collect())
}

/// One ancestral reverse step from `y_t` to `y_{t−1}`. The fresh noise is
/// dropped at `t = 1`.
pub fn denoise_step(
    y_t: &[f64],
    t: usize,
    eps_hat: &[f64],
    noise: &[f64],
    s: &NoiseSchedule,
) -> Result<Vec<f64>> {
    s.check_t(t)?;
    if y_t.len() != eps_hat.len() || y_t.len() != noise.len() {
        return Err(shape_mismatch(&[y_t.len(), y_t.len()], &[eps_hat.len(), noise.len()]));
    }
    let b = s.beta(t);
    let c = b / (1.0 - s.alpha(t)).sqrt();
    let inv = 1.0 / (1.0 - b).sqrt();
    let sigma = if t == 1 { 0.0 } else { b.sqrt() };
    Ok(y_t
        .iter()
        .zip(eps_hat)
        .zip(noise)
        .map(|((y, e), z)| (y - c * e) * inv + sigma * z)
        .collect())
}

/// Generalised strided step from `t` to `t_prev` (< t, 0 for the final
/// step). `eta` = 0 is deterministic; `eta` = 1 matches the ancestral
/// posterior variance. `temperature` scales the injected noise.
#[allow(clippy::too_many_arguments)]
pub fn strided_step(
    y_t: &[f64],
    t: usize,
    t_prev: usize,
    eps_hat: &[f64],
    noise: &[f64],
    eta: f64,
    temperature: f64,
    s: &NoiseSchedule,
) -> Result<Vec<f64>> {
    s.check_t(t)?;
    if t_prev >= t {
        return Err(Error::OutOfRange(format!("previous step {t_prev} not below {t}")));
    }
    if y_t.len() != eps_hat.len() || y_t.len() != noise.len() {
        return Err(shape_mismatch(&[y_t.len(), y_t.len()], &[eps_hat.len(), noise.len()]));
    }
    let (a, ap) = (s.alpha(t), s.alpha(t_prev));
    let sigma = eta * ((1.0 - ap) / (1.0 - a) * (1.0 - a / ap)).max(0.0).sqrt();
    let dir = (1.0 - ap - sigma * sigma).max(0.0).sqrt();
    let (sa, sna) = (a.sqrt(), (1.0 - a).sqrt());
    Ok(y_t
        .iter()
        .zip(eps_hat)
        .zip(noise)
        .map(|((y, e), z)| {
            let y0 = (y - sna * e) / sa;
            ap.sqrt() * y0 + dir * e + temperature * sigma * z
        })
        .collect())
}

/// Noised training batch: a uniform timestep per sample, its noise and the
/// resulting `y_t`. `y0` holds `batch` consecutive fields of `dim` values.
pub(crate) fn noised_batch(
    y0: &[f64],
    dim: usize,
    s: &NoiseSchedule,
    rng: &mut StreamRng,
) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let batch = y0.len() / dim;
    let ts: Vec<usize> = (0..batch).map(|_| rng.gen_range(1..=s.steps())).collect();
    let mut eps = vec![0.0; y0.len()];
    fill_normal(rng, &mut eps);
    let mut y_t = vec![0.0; y0.len()];
    for (b, &t) in ts.iter().enumerate() {
        let a = s.alpha(t);
        let (ca, cn) = (a.sqrt(), (1.0 - a).sqrt());
        for i in b * dim..(b + 1) * dim {
            y_t[i] = ca * y0[i] + cn * eps[i];
        }
    }
    (ts, eps, y_t)
}

/// Noise-prediction MSE for an arbitrary predictor
/// `predict(y_t, t per sample) -> ε̂`, drawing timesteps and noise from `seed`.
pub fn dnn_loss<F>(y0: &[f64], dim: usize, s: &NoiseSchedule, seed: u64, mut predict: F) -> Result<f64>
where
    F: FnMut(&[f64], &[usize]) -> Result<Vec<f64>>,
{
    if dim == 0 || y0.len() % dim != 0 {
        return Err(shape_mismatch(&[dim], &[y0.len()]));
    }
    let mut rng = crate::rng::stream(seed, &[]);
    let (ts, eps, y_t) = noised_batch(y0, dim, s, &mut rng);
    let eps_hat = predict(&y_t, &ts)?;
    if eps_hat.len() != eps.len() {
        return Err(shape_mismatch(&[eps.len()], &[eps_hat.len()]));
    }
    Ok(eps.iter().zip(&eps_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / eps.len().max(1) as f64)
}

/// Sinusoidal timestep embedding laid out [dim, batch].
pub(crate) fn time_embedding(ts: &[usize], dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let b = ts.len();
    let mut out = vec![0.0; dim * b];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        for (j, &t) in ts.iter().enumerate() {
            let a = t as f64 * freq;
            out[i * b + j] = a.sin();
            out[(half + i) * b + j] = a.cos();
        }
    }
    out
}

/// Evenly spaced descending timesteps T = τ_S > … > τ_1 ≥ 1.
pub(crate) fn strided_timesteps(total: usize, steps: usize) -> Vec<usize> {
    let mut ts: Vec<usize> = (1..=steps)
        .map(|i| ((i as f64 * total as f64 / steps as f64).round() as usize).clamp(1, total))
        .collect();
    ts.dedup();
    ts.reverse();
    ts
}
