//! Per-mechanism inference. Inputs must be standardized; outputs are
//! standardized ensembles tagged with the model's target climatology.
//!
//! Realisation `p` of input sample `n` draws from its own stream
//! `(seed, n, p)`, so results do not depend on how chains are batched.

use super::diffusion::strided_timesteps;
use super::network::Net;
use super::{MechanismConfig, MechanismKind, ModelBundle, SamplerKind, SnnNoiseModel};
use crate::error::{Error, Result};
use crate::fields::{EnsembleSeries, FieldSeries};
use crate::numerics::{Tape, Var};
use crate::rng::{fill_normal, stream, StreamRng};

const CHUNK: usize = 128;

fn check_input(m: &ModelBundle, x: &FieldSeries) -> Result<()> {
    if !x.is_standardized() {
        return Err(Error::FlagMismatch("model input must be standardized".into()));
    }
    m.grid.ensure_same(x.grid())
}

fn check_count(p: usize) -> Result<()> {
    if p == 0 {
        return Err(Error::InvalidConfig("need at least one realisation per input".into()));
    }
    Ok(())
}

fn inference_vars(m: &ModelBundle, tape: &mut Tape) -> Vec<Var> {
    m.params.iter().map(|p| tape.constant(p.tensor.clone())).collect()
}

fn output(m: &ModelBundle, n: usize, p: usize, values: Vec<f64>) -> Result<EnsembleSeries> {
    let mut e = EnsembleSeries::new(m.grid.clone(), n, p, values, true)?.with_variable("prediction", "standardized");
    e.climatology = m.y_climatology.as_ref().map(|c| c.source_split.clone());
    Ok(e)
}

/// Backbone output per input sample, chunked.
fn backbone_output(m: &ModelBundle, net: &Net, x: &FieldSeries) -> Result<Vec<f64>> {
    let (h, w) = (m.grid.n_lat(), m.grid.n_lon());
    let g = m.grid.len();
    let n = x.n_samples();
    let channels = m.backbone.out_channels;
    let mut out = vec![0.0; n * channels * g];
    for start in (0..n).step_by(CHUNK) {
        let b = CHUNK.min(n - start);
        let mut tape = Tape::inference();
        let vars = inference_vars(m, &mut tape);
        let y = net.predict(&mut tape, &vars, &x.values()[start * g..(start + b) * g], b, h, w)?;
        // [channels, b, g] → [sample, channel, g]
        for c in 0..channels {
            for j in 0..b {
                let src = &y[(c * b + j) * g..][..g];
                out[((start + j) * channels + c) * g..][..g].copy_from_slice(src);
            }
        }
    }
    Ok(out)
}

/// Deterministic output: the SNN backbone, or the VNN decoded at the latent prior mean.
pub fn predict_deterministic(m: &ModelBundle, x: &FieldSeries) -> Result<FieldSeries> {
    check_input(m, x)?;
    let net = m.network()?;
    let values = match m.kind() {
        MechanismKind::Snn => backbone_output(m, &net, x)?,
        MechanismKind::Vnn => {
            let MechanismConfig::Vnn(cfg) = &m.mechanism else { unreachable!() };
            vnn_decode_all(m, &net, x, 1, |_, _, eps| eps.iter_mut().for_each(|v| *v = 0.0), cfg.latent_dim)?
        }
        other => {
            return Err(Error::WrongMechanism {
                expected: "snn or vnn".into(),
                actual: other.to_string(),
            })
        }
    };
    let mut f = FieldSeries::new(m.grid.clone(), x.n_samples(), values, true)?.with_variable("prediction", "standardized");
    f.climatology = m.y_climatology.as_ref().map(|c| c.source_split.clone());
    Ok(f)
}

pub(crate) fn fit_noise_from_residuals(resid: &[f64], g: usize) -> Result<SnnNoiseModel> {
    let n = resid.len() / g.max(1);
    if n < 2 {
        return Err(Error::InvalidConfig("noise fit needs at least two residual samples".into()));
    }
    let mut sigma = vec![0.0; g];
    for (gi, s) in sigma.iter_mut().enumerate() {
        let mean = (0..n).map(|i| resid[i * g + gi]).sum::<f64>() / n as f64;
        let ss = (0..n).map(|i| (resid[i * g + gi] - mean).powi(2)).sum::<f64>();
        *s = (ss / (n - 1) as f64).sqrt();
    }
    Ok(SnnNoiseModel { sigma, pooled: None })
}

/// Per-grid sample std (n−1) of residuals.
pub fn snn_fit_noise(residuals: &FieldSeries) -> Result<SnnNoiseModel> {
    fit_noise_from_residuals(residuals.values(), residuals.grid().len())
}

pub fn snn_sample(m: &ModelBundle, x: &FieldSeries, p: usize, seed: u64) -> Result<EnsembleSeries> {
    m.ensure_kind(MechanismKind::Snn)?;
    check_input(m, x)?;
    check_count(p)?;
    let MechanismConfig::Snn { noise } = &m.mechanism else { unreachable!() };
    let g = m.grid.len();
    if noise.pooled.is_none() && noise.sigma.len() != g {
        return Err(Error::InvalidConfig("SNN noise model has not been fitted for this grid".into()));
    }
    let det = backbone_output(m, &m.network()?, x)?;
    let n = x.n_samples();
    let mut values = vec![0.0; n * p * g];
    let mut z = vec![0.0; g];
    for i in 0..n {
        for r in 0..p {
            fill_normal(&mut stream(seed, &[i as u64, r as u64]), &mut z);
            let dst = &mut values[(i * p + r) * g..][..g];
            for gi in 0..g {
                dst[gi] = det[i * g + gi] + noise.sigma_at(gi) * z[gi];
            }
        }
    }
    output(m, n, p, values)
}

/// Ten-channel (one per level) quantile output, returned as an ensemble.
pub fn qnn_predict(m: &ModelBundle, x: &FieldSeries) -> Result<EnsembleSeries> {
    m.ensure_kind(MechanismKind::Qnn)?;
    check_input(m, x)?;
    let values = backbone_output(m, &m.network()?, x)?;
    output(m, x.n_samples(), m.backbone.out_channels, values)
}

/// Decodes `p` latent draws per input; `fill(n, r, eps)` supplies the noise.
fn vnn_decode_all(
    m: &ModelBundle,
    net: &Net,
    x: &FieldSeries,
    p: usize,
    mut fill: impl FnMut(usize, usize, &mut [f64]),
    latent: usize,
) -> Result<Vec<f64>> {
    let (h, w) = (m.grid.n_lat(), m.grid.n_lon());
    let g = m.grid.len();
    let pairs: Vec<(usize, usize)> = (0..x.n_samples()).flat_map(|i| (0..p).map(move |r| (i, r))).collect();
    let mut values = vec![0.0; pairs.len() * g];
    let mut eps_one = vec![0.0; latent];
    for (ci, chunk) in pairs.chunks(CHUNK).enumerate() {
        let b = chunk.len();
        let mut xs = Vec::with_capacity(b * g);
        let mut eps = vec![0.0; latent * b];
        for (j, &(i, r)) in chunk.iter().enumerate() {
            xs.extend_from_slice(x.sample(i));
            fill(i, r, &mut eps_one);
            for (k, e) in eps_one.iter().enumerate() {
                eps[k * b + j] = *e;
            }
        }
        let mut tape = Tape::inference();
        let vars = inference_vars(m, &mut tape);
        let y = net.vnn_decode(&mut tape, &vars, &xs, eps, b, h, w)?;
        values[ci * CHUNK * g..][..b * g].copy_from_slice(&y);
    }
    Ok(values)
}

pub fn vnn_sample(m: &ModelBundle, x: &FieldSeries, p: usize, seed: u64) -> Result<EnsembleSeries> {
    m.ensure_kind(MechanismKind::Vnn)?;
    check_input(m, x)?;
    check_count(p)?;
    let MechanismConfig::Vnn(cfg) = &m.mechanism else { unreachable!() };
    let net = m.network()?;
    let values = vnn_decode_all(
        m,
        &net,
        x,
        p,
        |i, r, eps| fill_normal(&mut stream(seed, &[i as u64, r as u64]), eps),
        cfg.latent_dim,
    )?;
    output(m, x.n_samples(), p, values)
}

pub fn dnn_sample(m: &ModelBundle, x: &FieldSeries, p: usize, seed: u64) -> Result<EnsembleSeries> {
    m.ensure_kind(MechanismKind::Dnn)?;
    check_input(m, x)?;
    check_count(p)?;
    let MechanismConfig::Dnn(cfg) = &m.mechanism else { unreachable!() };
    let net = m.network()?;
    let schedule = net.schedule().expect("diffusion network").clone();
    let (h, w) = (m.grid.n_lat(), m.grid.n_lon());
    let g = m.grid.len();
    let steps: Vec<usize> = match cfg.sampler {
        SamplerKind::Ancestral => (1..=schedule.steps()).rev().collect(),
        SamplerKind::Strided { steps, .. } => strided_timesteps(schedule.steps(), steps),
    };
    let pairs: Vec<(usize, usize)> = (0..x.n_samples()).flat_map(|i| (0..p).map(move |r| (i, r))).collect();
    let mut values = vec![0.0; pairs.len() * g];
    let mut z = vec![0.0; g];
    for (ci, chunk) in pairs.chunks(CHUNK).enumerate() {
        let b = chunk.len();
        let mut rngs: Vec<StreamRng> = chunk.iter().map(|&(i, r)| stream(seed, &[i as u64, r as u64])).collect();
        let mut xs = Vec::with_capacity(b * g);
        let mut y = vec![0.0; b * g];
        for (j, &(i, _)) in chunk.iter().enumerate() {
            xs.extend_from_slice(x.sample(i));
            fill_normal(&mut rngs[j], &mut y[j * g..(j + 1) * g]);
        }
        for (si, &t) in steps.iter().enumerate() {
            let mut tape = Tape::inference();
            let vars = inference_vars(m, &mut tape);
            let eps_hat = net.eps_hat(&mut tape, &vars, &y, &xs, &vec![t; b], h, w)?;
            for j in 0..b {
                fill_normal(&mut rngs[j], &mut z);
                let range = j * g..(j + 1) * g;
                let next = match cfg.sampler {
                    SamplerKind::Ancestral => {
                        super::denoise_step(&y[range.clone()], t, &eps_hat[range.clone()], &z, &schedule)?
                    }
                    SamplerKind::Strided { eta, temperature, .. } => {
                        let t_prev = steps.get(si + 1).copied().unwrap_or(0);
                        super::strided_step(
                            &y[range.clone()],
                            t,
                            t_prev,
                            &eps_hat[range.clone()],
                            &z,
                            eta,
                            temperature,
                            &schedule,
                        )?
                    }
                };
                y[range].copy_from_slice(&next);
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("diffusion sampler produced a non-finite value".into()));
        }
        values[ci * CHUNK * g..][..b * g].copy_from_slice(&y);
    }
    output(m, x.n_samples(), p, values)
}

/// Dispatches to the mechanism's sampler. QNN ignores `p` and `seed` and
/// returns its quantile channels.
pub fn sample_ensemble(m: &ModelBundle, x: &FieldSeries, p: usize, seed: u64) -> Result<EnsembleSeries> {
    match m.kind() {
        MechanismKind::Snn => snn_sample(m, x, p, seed),
        MechanismKind::Qnn => qnn_predict(m, x),
        MechanismKind::Vnn => vnn_sample(m, x, p, seed),
        MechanismKind::Dnn => dnn_sample(m, x, p, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::GridSpec;
    use crate::models::{train, TrainConfig, TrainingData};
    use crate::rng::normals;

    fn grid() -> GridSpec {
        GridSpec::regular(60.0, -2.7, 4, 0.0, 2.7, 8).unwrap()
    }

    fn std_field(n: usize, seed: u64) -> FieldSeries {
        FieldSeries::new(grid(), n, normals(&mut stream(seed, &[]), n * 32), true).unwrap()
    }

    fn tiny(kind: MechanismKind) -> ModelBundle {
        let data = TrainingData::new(std_field(6, 1), std_field(6, 2), std_field(3, 3), std_field(3, 4)).unwrap();
        let cfg = TrainConfig {
            max_epochs: 1,
            widths: vec![2, 3],
            ..TrainConfig::default()
        };
        let mut mech = MechanismConfig::default_for(kind);
        if let MechanismConfig::Dnn(d) = &mut mech {
            d.steps = 10;
            d.time_embedding_dim = 8;
        }
        if let MechanismConfig::Vnn(v) = &mut mech {
            v.latent_dim = 4;
        }
        train(&mech, &data, &cfg, 9).unwrap().0
    }

    #[test]
    fn samplers_are_deterministic_under_seed() {
        let x = std_field(2, 5);
        for kind in MechanismKind::ALL {
            let m = tiny(kind);
            let a = sample_ensemble(&m, &x, 3, 17).unwrap();
            let b = sample_ensemble(&m, &x, 3, 17).unwrap();
            assert_eq!(a.values(), b.values(), "{kind}");
            if kind != MechanismKind::Qnn {
                let c = sample_ensemble(&m, &x, 3, 18).unwrap();
                assert_ne!(a.values(), c.values(), "{kind}");
                assert_eq!(a.n_members(), 3);
            }
        }
    }

    #[test]
    fn single_member_matches_first_of_many() {
        // Each realisation owns its stream, so P only truncates.
        let x = std_field(2, 5);
        for kind in [MechanismKind::Snn, MechanismKind::Vnn, MechanismKind::Dnn] {
            let m = tiny(kind);
            let one = sample_ensemble(&m, &x, 1, 4).unwrap();
            let many = sample_ensemble(&m, &x, 4, 4).unwrap();
            for n in 0..2 {
                assert_eq!(one.member(n, 0), many.member(n, 0), "{kind}");
            }
        }
    }

    #[test]
    fn zero_sigma_snn_is_deterministic() {
        let mut m = tiny(MechanismKind::Snn);
        m.mechanism = MechanismConfig::Snn {
            noise: SnnNoiseModel {
                sigma: vec![0.0; 32],
                pooled: None,
            },
        };
        let x = std_field(2, 5);
        let det = predict_deterministic(&m, &x).unwrap();
        let e = snn_sample(&m, &x, 5, 1).unwrap();
        for n in 0..2 {
            for r in 0..5 {
                assert_eq!(e.member(n, r), det.sample(n));
            }
        }
    }

    #[test]
    fn snn_member_mean_obeys_clt() {
        let mut m = tiny(MechanismKind::Snn);
        let sigma = 0.7;
        m.mechanism = MechanismConfig::Snn {
            noise: SnnNoiseModel {
                sigma: vec![0.0; 32],
                pooled: Some(sigma),
            },
        };
        let x = std_field(1, 5);
        let det = predict_deterministic(&m, &x).unwrap();
        let p = 10_000;
        let e = snn_sample(&m, &x, p, 2).unwrap();
        for g in 0..32 {
            let mean = (0..p).map(|r| e.member(0, r)[g]).sum::<f64>() / p as f64;
            assert!((mean - det.sample(0)[g]).abs() < 3.0 * sigma / (p as f64).sqrt());
        }
    }

    #[test]
    fn snn_perturbations_are_spatially_white() {
        let m = tiny(MechanismKind::Snn);
        let x = std_field(1, 5);
        let det = predict_deterministic(&m, &x).unwrap();
        let p = 400;
        let e = snn_sample(&m, &x, p, 3).unwrap();
        let MechanismConfig::Snn { noise } = &m.mechanism else { unreachable!() };
        let (mut num, mut den) = (0.0, 0.0);
        for r in 0..p {
            let z: Vec<f64> = (0..32).map(|g| (e.member(0, r)[g] - det.sample(0)[g]) / noise.sigma_at(g)).collect();
            for i in 0..4 {
                for j in 0..8 {
                    let a = z[i * 8 + j];
                    num += a * z[i * 8 + (j + 1) % 8];
                    den += a * a;
                }
            }
        }
        assert!(p * 32 >= 10_000);
        assert!((num / den).abs() < 0.05, "lag-1 r = {}", num / den);
    }

    #[test]
    fn qnn_returns_one_member_per_level() {
        let m = tiny(MechanismKind::Qnn);
        let e = qnn_predict(&m, &std_field(3, 5)).unwrap();
        assert_eq!(e.n_members(), 10);
        assert_eq!(e.n_samples(), 3);
    }

    #[test]
    fn collapsed_vnn_posterior_gives_identical_members() {
        let mut m = tiny(MechanismKind::Vnn);
        for p in m.params.iter_mut() {
            if p.name == "vnn.prior.logvar.w" {
                p.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
            if p.name == "vnn.prior.logvar.b" {
                p.tensor.data_mut().iter_mut().for_each(|v| *v = -80.0);
            }
        }
        let e = vnn_sample(&m, &std_field(2, 5), 20, 6).unwrap();
        for n in 0..2 {
            for r in 1..20 {
                let d = e.member(n, r).iter().zip(e.member(n, 0)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(d < 1e-10);
            }
        }
    }

    #[test]
    fn wrong_kind_and_unstandardized_input() {
        let m = tiny(MechanismKind::Snn);
        let x = std_field(2, 5);
        assert!(matches!(dnn_sample(&m, &x, 2, 1), Err(Error::WrongMechanism { .. })));
        assert!(matches!(qnn_predict(&m, &x), Err(Error::WrongMechanism { .. })));
        assert!(matches!(vnn_sample(&m, &x, 2, 1), Err(Error::WrongMechanism { .. })));
        let raw = FieldSeries::new(grid(), 2, x.values().to_vec(), false).unwrap();
        assert!(matches!(snn_sample(&m, &raw, 2, 1), Err(Error::FlagMismatch(_))));
        assert!(matches!(snn_sample(&m, &x, 0, 1), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn noise_fit_examples() {
        let g = grid();
        let zero = FieldSeries::new(g.clone(), 3, vec![0.0; 96], true).unwrap();
        assert!(snn_fit_noise(&zero).unwrap().sigma.iter().all(|s| *s == 0.0));
        let mut v = vec![-1.0; 32];
        v.extend(vec![1.0; 32]);
        let two = FieldSeries::new(g.clone(), 2, v, true).unwrap();
        for s in snn_fit_noise(&two).unwrap().sigma {
            assert!((s - 2f64.sqrt()).abs() < 1e-12);
        }
        let one = FieldSeries::new(g, 1, vec![0.0; 32], true).unwrap();
        assert!(snn_fit_noise(&one).is_err());
    }
}
