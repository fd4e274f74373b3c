//! Scalar loss functions on plain buffers. The training graph uses the
//! equivalent tape ops; these are the reference definitions.

use super::QuantileLevels;
use crate::error::{shape_mismatch, Error, Result};
use crate::numerics::rho;

fn ensure_finite(xs: &[f64], what: &str) -> Result<()> {
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.into()));
    }
    Ok(())
}

/// Mean quantile loss. `q` holds one block of `y.len()` values per level.
pub fn pinball_loss(y: &[f64], q: &[f64], levels: &QuantileLevels) -> Result<f64> {
    let p = levels.len();
    if q.len() != p * y.len() {
        return Err(shape_mismatch(&[p * y.len()], &[q.len()]));
    }
    crate::numerics::check_levels(levels.levels())?;
    if y.is_empty() {
        return Ok(0.0);
    }
    let mut s = 0.0;
    for (tau, block) in levels.levels().iter().zip(q.chunks_exact(y.len())) {
        s += y.iter().zip(block).map(|(yv, qv)| rho(tau, yv - qv)).sum::<f64>();
    }
    Ok(s / q.len() as f64)
}

/// KL divergence of 𝒩(μ, σ²) from 𝒩(0, I), summed over latent dimensions.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> Result<f64> {
    if mu.len() != logvar.len() {
        return Err(shape_mismatch(&[mu.len()], &[logvar.len()]));
    }
    ensure_finite(mu, "latent mean")?;
    ensure_finite(logvar, "latent log-variance")?;
    Ok(-0.5
        * mu
            .iter()
            .zip(logvar)
            .map(|(m, lv)| 1.0 + lv - m * m - lv.exp())
            .sum::<f64>())
}

/// `z = μ + exp(½ logσ²) ⊙ ε`. A log-variance of −∞ gives `z = μ`.
pub fn reparameterize(mu: &[f64], logvar: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != logvar.len() || mu.len() != eps.len() {
        return Err(shape_mismatch(&[mu.len(), mu.len()], &[logvar.len(), eps.len()]));
    }
    ensure_finite(mu, "latent mean")?;
    ensure_finite(eps, "latent noise")?;
    if logvar.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::NonFinite("latent log-variance".into()));
    }
    Ok(mu
        .iter()
        .zip(logvar)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}

/// Reconstruction MSE plus `beta` times the per-sample mean KL. `mu` and
/// `logvar` hold `batch` consecutive latent vectors.
pub fn vnn_loss(
    y: &[f64],
    y_hat: &[f64],
    mu: &[f64],
    logvar: &[f64],
    batch: usize,
    beta: f64,
) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(shape_mismatch(&[y.len()], &[y_hat.len()]));
    }
    if batch == 0 || mu.len() % batch != 0 {
        return Err(shape_mismatch(&[batch], &[mu.len()]));
    }
    if !(beta >= 0.0) {
        return Err(Error::InvalidConfig("KL weight must be non-negative".into()));
    }
    let mse = if y.is_empty() {
        0.0
    } else {
        y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
    };
    let kl = kl_divergence(mu, logvar)? / batch as f64;
    Ok(mse + beta * kl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, Tape, Tensor};
    use proptest::prelude::*;

    fn lv(levels: &[f64]) -> QuantileLevels {
        QuantileLevels::new(levels.to_vec()).unwrap()
    }

    #[test]
    fn pinball_examples() {
        assert_eq!(pinball_loss(&[2.0], &[0.0], &lv(&[0.5])).unwrap(), 1.0);
        assert!((pinball_loss(&[1.0], &[0.0], &lv(&[0.9])).unwrap() - 0.9).abs() < 1e-15);
        assert!((pinball_loss(&[0.0], &[1.0], &lv(&[0.1])).unwrap() - 0.9).abs() < 1e-15);
        let y = [0.3, -1.2, 4.0];
        let q: Vec<f64> = y.iter().cycle().take(30).copied().collect();
        assert_eq!(pinball_loss(&y, &q, &QuantileLevels::default()).unwrap(), 0.0);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&[0.0], &[0.0]).unwrap(), 0.0);
        assert!((kl_divergence(&[1.0], &[0.0]).unwrap() - 0.5).abs() < 1e-15);
        let v = kl_divergence(&[0.0], &[4f64.ln()]).unwrap();
        assert!((v - 0.806_852_8).abs() < 1e-7, "{v}");
        assert!(kl_divergence(&[f64::NAN], &[0.0]).is_err());
    }

    #[test]
    fn reparameterize_examples() {
        assert_eq!(reparameterize(&[1.5], &[f64::NEG_INFINITY], &[3.0]).unwrap(), vec![1.5]);
        assert_eq!(reparameterize(&[1.5, -2.0], &[0.7, 0.1], &[0.0, 0.0]).unwrap(), vec![1.5, -2.0]);
        let z = reparameterize(&[0.0], &[4f64.ln()], &[1.0]).unwrap();
        assert!((z[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn reparameterize_gradient_wrt_mean_is_one() {
        let mu = Tensor::new(vec![3], vec![0.2, -0.4, 1.0]).unwrap();
        let mut tape = Tape::new();
        let m = tape.param(mu);
        let lv = tape.constant(Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap());
        let e = tape.constant(Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap());
        let half = tape.scale(lv, 0.5);
        let s = tape.exp(half);
        let se = tape.mul(s, e).unwrap();
        let z = tape.add(m, se).unwrap();
        let sum = tape.sum(z);
        tape.backward(sum).unwrap();
        assert_eq!(tape.grad(m).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn vnn_loss_examples() {
        assert_eq!(vnn_loss(&[1.0, 2.0], &[1.0, 2.0], &[0.0; 4], &[0.0; 4], 2, 5.0).unwrap(), 0.0);
        let y = [1.0, 2.0, 3.0];
        let yh = [0.0, 2.5, 3.0];
        let mse = (1.0 + 0.25) / 3.0;
        assert_eq!(vnn_loss(&y, &yh, &[0.3], &[0.2], 1, 0.0).unwrap(), mse);
        // Two samples each with μ = 1, logσ² = 0 → KL 0.5 per sample.
        let v = vnn_loss(&[1.0; 4], &[0.0; 4], &[1.0, 1.0], &[0.0, 0.0], 2, 2.0).unwrap();
        assert!((v - 2.0).abs() < 1e-15);
    }

    #[test]
    fn pinball_tape_gradient_matches_fd() {
        let levels = [0.1, 0.5, 0.9];
        let target = Tensor::new(vec![1, 4], vec![0.3, -0.7, 1.1, 0.05]).unwrap();
        let q = Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64 * 0.77).sin()).collect()).unwrap();
        let err = grad_check(
            |t, q| {
                let y = t.constant(target.clone());
                t.pinball(q, y, &levels)
            },
            &q,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    proptest! {
        #[test]
        fn median_pinball_is_half_mae(pairs in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..40)) {
            let (y, q): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let mae = y.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64;
            let p = pinball_loss(&y, &q, &lv(&[0.5])).unwrap();
            prop_assert!((p - 0.5 * mae).abs() <= 1e-12 * (1.0 + mae));
        }

        #[test]
        fn pinball_is_non_negative(pairs in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..40), tau in 0.01f64..0.99) {
            let (y, q): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assert!(pinball_loss(&y, &q, &lv(&[tau])).unwrap() >= 0.0);
        }

        #[test]
        fn kl_is_non_negative_and_zero_only_at_prior(
            v in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..16)
        ) {
            let (mu, lvs): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let kl = kl_divergence(&mu, &lvs).unwrap();
            prop_assert!(kl >= 0.0);
            let off_prior = mu.iter().chain(&lvs).any(|x| x.abs() > 1e-3);
            if off_prior {
                prop_assert!(kl > 0.0);
            }
        }

        #[test]
        fn kl_gradient_matches_fd(v in prop::collection::vec(-2.0f64..2.0, 2..10)) {
            let n = v.len();
            let x = Tensor::new(vec![n], v).unwrap();
            // f(μ) = −½ Σ(1 + lv − μ² − e^lv) with lv = μ/2 to exercise both terms.
            let err = grad_check(|t, m| {
                let lv = t.scale(m, 0.5);
                let e = t.exp(lv);
                let m2 = t.square(m);
                let a = t.add_scalar(lv, 1.0);
                let a = t.sub(a, m2)?;
                let a = t.sub(a, e)?;
                let s = t.sum(a);
                Ok(t.scale(s, -0.5))
            }, &x, 1e-6).unwrap();
            prop_assert!(err < 1e-4);
        }
    }
}
