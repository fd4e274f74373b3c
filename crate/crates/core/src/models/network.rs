//! Mechanism-specific graphs built around the shared backbone.

use super::backbone::{conv, dense, flatten, push_linear, unflatten};
use super::diffusion::{make_beta_schedule, noised_batch, time_embedding, NoiseSchedule};
use super::{Backbone, BackboneConfig, MechanismConfig, NamedTensor};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::rng::{fill_normal, StreamRng};

/// Convolutional encoder mapping a field stack to (μ_z, logσ²_z), each [d_z, batch].
#[derive(Debug, Clone)]
pub(crate) struct LatentHead {
    convs: Vec<usize>,
    mu: usize,
    logvar: usize,
}

impl LatentHead {
    fn init(
        prefix: &str,
        in_channels: usize,
        widths: &[usize],
        features: usize,
        latent: usize,
        params: &mut Vec<NamedTensor>,
        rng: &mut StreamRng,
    ) -> Self {
        let mut convs = Vec::new();
        let mut cin = in_channels;
        for (s, &w) in widths.iter().enumerate() {
            convs.push(push_linear(params, &format!("{prefix}.conv{s}"), w, cin * 9, 1.0, rng));
            cin = w;
        }
        let mu = push_linear(params, &format!("{prefix}.mu"), latent, features, 0.5, rng);
        let logvar = push_linear(params, &format!("{prefix}.logvar"), latent, features, 0.1, rng);
        Self { convs, mu, logvar }
    }

    fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<(Var, Var)> {
        let mut h = x;
        for (s, &c) in self.convs.iter().enumerate() {
            if s > 0 {
                h = tape.avg_pool2(h)?;
            }
            h = conv(tape, vars, c, h)?;
            h = tape.relu(h);
        }
        let f = flatten(tape, h)?;
        Ok((dense(tape, vars, self.mu, f)?, dense(tape, vars, self.logvar, f)?))
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Net {
    Snn {
        bb: Backbone,
    },
    Qnn {
        bb: Backbone,
        levels: Vec<f64>,
    },
    Vnn {
        bb: Backbone,
        zproj: usize,
        posterior: LatentHead,
        prior: LatentHead,
        latent: usize,
        kl_weight: f64,
        bottleneck: (usize, usize, usize),
    },
    Dnn {
        bb: Backbone,
        schedule: NoiseSchedule,
        time_dim: usize,
    },
}

/// Backbone contract implied by a mechanism.
pub(crate) fn backbone_config(mech: &MechanismConfig, widths: &[usize]) -> BackboneConfig {
    let mut cfg = BackboneConfig::new(1, 1, widths.to_vec());
    match mech {
        MechanismConfig::Snn { .. } => {}
        MechanismConfig::Qnn { levels } => cfg.out_channels = levels.len(),
        MechanismConfig::Vnn(v) => {
            if v.skips.len() + 1 == widths.len() {
                cfg.skips = v.skips.clone();
            }
        }
        MechanismConfig::Dnn(d) => {
            cfg.in_channels = 2;
            cfg.time_embedding = Some(d.time_embedding_dim);
        }
    }
    cfg
}

/// Builds the network and appends its freshly initialised parameters.
pub(crate) fn build(
    mech: &MechanismConfig,
    cfg: &BackboneConfig,
    n_lat: usize,
    n_lon: usize,
    params: &mut Vec<NamedTensor>,
    rng: &mut StreamRng,
) -> Result<Net> {
    mech.validate()?;
    cfg.validate(n_lat, n_lon)?;
    let expected = backbone_config(mech, &cfg.widths);
    if expected.in_channels != cfg.in_channels
        || expected.out_channels != cfg.out_channels
        || expected.time_embedding != cfg.time_embedding
    {
        return Err(Error::InvalidConfig(format!(
            "backbone {}→{} channels does not match the {} mechanism",
            cfg.in_channels,
            cfg.out_channels,
            mech.kind()
        )));
    }
    let bb = Backbone::init(cfg, "backbone", params, rng);
    Ok(match mech {
        MechanismConfig::Snn { .. } => Net::Snn { bb },
        MechanismConfig::Qnn { levels } => Net::Qnn {
            bb,
            levels: levels.levels().to_vec(),
        },
        MechanismConfig::Vnn(v) => {
            if v.skips.len() + 1 != cfg.widths.len() {
                return Err(Error::InvalidConfig(format!(
                    "{} skip flags for {} stages",
                    v.skips.len(),
                    cfg.widths.len()
                )));
            }
            let (c, h, w) = cfg.bottleneck_shape(n_lat, n_lon);
            let features = c * h * w;
            let zproj = push_linear(params, "vnn.zproj", features, v.latent_dim, 0.5, rng);
            let posterior = LatentHead::init("vnn.posterior", 2, &cfg.widths, features, v.latent_dim, params, rng);
            let prior = LatentHead::init("vnn.prior", 1, &cfg.widths, features, v.latent_dim, params, rng);
            Net::Vnn {
                bb,
                zproj,
                posterior,
                prior,
                latent: v.latent_dim,
                kl_weight: v.kl_weight,
                bottleneck: (c, h, w),
            }
        }
        MechanismConfig::Dnn(d) => Net::Dnn {
            bb,
            schedule: make_beta_schedule(d.beta_start, d.beta_end, d.steps)?,
            time_dim: d.time_embedding_dim,
        },
    })
}

/// Reconstructs the network for stored parameters, checking names and shapes.
pub(crate) fn rebuild(
    mech: &MechanismConfig,
    cfg: &BackboneConfig,
    n_lat: usize,
    n_lon: usize,
    params: &[NamedTensor],
) -> Result<Net> {
    let mut fresh = Vec::new();
    let net = build(mech, cfg, n_lat, n_lon, &mut fresh, &mut crate::rng::stream(0, &[]))?;
    if fresh.len() != params.len() {
        return Err(Error::InvalidConfig(format!(
            "expected {} parameter tensors, found {}",
            fresh.len(),
            params.len()
        )));
    }
    for (a, b) in fresh.iter().zip(params) {
        if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
            return Err(Error::InvalidConfig(format!(
                "parameter '{}' {:?} does not match expected '{}' {:?}",
                b.name,
                b.tensor.shape(),
                a.name,
                a.tensor.shape()
            )));
        }
    }
    Ok(net)
}

fn field_var(tape: &mut Tape, data: Vec<f64>, c: usize, b: usize, h: usize, w: usize) -> Result<Var> {
    Ok(tape.constant(Tensor::new(vec![c, b, h, w], data)?))
}

impl Net {
    pub(crate) fn backbone(&self) -> &Backbone {
        match self {
            Net::Snn { bb } | Net::Qnn { bb, .. } | Net::Vnn { bb, .. } | Net::Dnn { bb, .. } => bb,
        }
    }

    pub(crate) fn schedule(&self) -> Option<&NoiseSchedule> {
        match self {
            Net::Dnn { schedule, .. } => Some(schedule),
            _ => None,
        }
    }

    /// Training objective on a batch of `b` standardized samples laid out
    /// sample-major. `rng` supplies latent and diffusion noise.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn loss(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: &[f64],
        y: &[f64],
        b: usize,
        h: usize,
        w: usize,
        rng: &mut StreamRng,
    ) -> Result<Var> {
        let xv = field_var(tape, x.to_vec(), 1, b, h, w)?;
        let yv = field_var(tape, y.to_vec(), 1, b, h, w)?;
        match self {
            Net::Snn { bb } => {
                let pred = bb.forward(tape, vars, xv, None, None)?;
                tape.mse(pred, yv)
            }
            Net::Qnn { bb, levels } => {
                let pred = bb.forward(tape, vars, xv, None, None)?;
                tape.pinball(pred, yv, levels)
            }
            Net::Vnn {
                bb,
                zproj,
                posterior,
                prior,
                latent,
                kl_weight,
                bottleneck: (c, bh, bw),
            } => {
                let xy = tape.concat(&[xv, yv])?;
                let (mu, lv) = posterior.forward(tape, vars, xy)?;
                let mut eps = vec![0.0; latent * b];
                fill_normal(rng, &mut eps);
                let eps = tape.constant(Tensor::new(vec![*latent, b], eps)?);
                let half = tape.scale(lv, 0.5);
                let sd = tape.exp(half);
                let noise = tape.mul(sd, eps)?;
                let z = tape.add(mu, noise)?;
                let zb = dense(tape, vars, *zproj, z)?;
                let zb = unflatten(tape, zb, *c, *bh, *bw)?;
                let pred = bb.forward(tape, vars, xv, None, Some(zb))?;
                let rec = tape.mse(pred, yv)?;

                let kl = gaussian_kl_to_standard(tape, mu, lv, b)?;
                let weighted = tape.scale(kl, *kl_weight);
                let total = tape.add(rec, weighted)?;

                // The x-only head learns to match the (frozen) posterior so that
                // forecasts can draw latents without y.
                let mu_q = tape.detach(mu);
                let lv_q = tape.detach(lv);
                let (mu_p, lv_p) = prior.forward(tape, vars, xv)?;
                let aux = gaussian_kl(tape, mu_q, lv_q, mu_p, lv_p, b)?;
                tape.add(total, aux)
            }
            Net::Dnn {
                bb,
                schedule,
                time_dim,
            } => {
                let (ts, eps, y_t) = noised_batch(y, h * w, schedule, rng);
                let ytv = field_var(tape, y_t, 1, b, h, w)?;
                let inp = tape.concat(&[ytv, xv])?;
                let emb = tape.constant(Tensor::new(vec![*time_dim, b], time_embedding(&ts, *time_dim))?);
                let pred = bb.forward(tape, vars, inp, Some(emb), None)?;
                let target = field_var(tape, eps, 1, b, h, w)?;
                tape.mse(pred, target)
            }
        }
    }

    /// Backbone output for SNN / QNN: [channels, b, h, w] flattened.
    pub(crate) fn predict(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: &[f64],
        b: usize,
        h: usize,
        w: usize,
    ) -> Result<Vec<f64>> {
        let xv = field_var(tape, x.to_vec(), 1, b, h, w)?;
        let out = self.backbone().forward(tape, vars, xv, None, None)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// VNN decoder output for latents drawn from the x-only head with noise `eps` ([d_z, b]).
    pub(crate) fn vnn_decode(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: &[f64],
        eps: Vec<f64>,
        b: usize,
        h: usize,
        w: usize,
    ) -> Result<Vec<f64>> {
        let Net::Vnn {
            bb,
            zproj,
            prior,
            latent,
            bottleneck: (c, bh, bw),
            ..
        } = self
        else {
            return Err(Error::InvalidConfig("not a variational network".into()));
        };
        let xv = field_var(tape, x.to_vec(), 1, b, h, w)?;
        let (mu, lv) = prior.forward(tape, vars, xv)?;
        let eps = tape.constant(Tensor::new(vec![*latent, b], eps)?);
        let half = tape.scale(lv, 0.5);
        let sd = tape.exp(half);
        let noise = tape.mul(sd, eps)?;
        let z = tape.add(mu, noise)?;
        let zb = dense(tape, vars, *zproj, z)?;
        let zb = unflatten(tape, zb, *c, *bh, *bw)?;
        let pred = bb.forward(tape, vars, xv, None, Some(zb))?;
        Ok(tape.value(pred).data().to_vec())
    }

    /// Noise prediction ε̂(y_t, t, x) for `b` chains.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn eps_hat(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        y_t: &[f64],
        x: &[f64],
        ts: &[usize],
        h: usize,
        w: usize,
    ) -> Result<Vec<f64>> {
        let Net::Dnn { bb, time_dim, .. } = self else {
            return Err(Error::InvalidConfig("not a diffusion network".into()));
        };
        let b = ts.len();
        let ytv = field_var(tape, y_t.to_vec(), 1, b, h, w)?;
        let xv = field_var(tape, x.to_vec(), 1, b, h, w)?;
        let inp = tape.concat(&[ytv, xv])?;
        let emb = tape.constant(Tensor::new(vec![*time_dim, b], time_embedding(ts, *time_dim))?);
        let pred = bb.forward(tape, vars, inp, Some(emb), None)?;
        Ok(tape.value(pred).data().to_vec())
    }
}

/// Mean over the batch of KL(𝒩(μ, σ²) ‖ 𝒩(0, I)).
fn gaussian_kl_to_standard(tape: &mut Tape, mu: Var, lv: Var, b: usize) -> Result<Var> {
    let m2 = tape.square(mu);
    let e = tape.exp(lv);
    let a = tape.add_scalar(lv, 1.0);
    let a = tape.sub(a, m2)?;
    let a = tape.sub(a, e)?;
    let s = tape.sum(a);
    Ok(tape.scale(s, -0.5 / b as f64))
}

/// Mean over the batch of KL(𝒩(μ_q, σ_q²) ‖ 𝒩(μ_p, σ_p²)).
fn gaussian_kl(tape: &mut Tape, mu_q: Var, lv_q: Var, mu_p: Var, lv_p: Var, b: usize) -> Result<Var> {
    let d = tape.sub(mu_q, mu_p)?;
    let d2 = tape.square(d);
    let vq = tape.exp(lv_q);
    let num = tape.add(vq, d2)?;
    let neg = tape.scale(lv_p, -1.0);
    let inv_vp = tape.exp(neg);
    let ratio = tape.mul(num, inv_vp)?;
    let a = tape.sub(lv_p, lv_q)?;
    let a = tape.add(a, ratio)?;
    let a = tape.add_scalar(a, -1.0);
    let s = tape.sum(a);
    Ok(tape.scale(s, 0.5 / b as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{kl_divergence, DiffusionConfig, QuantileLevels, VnnConfig};
    use crate::numerics::grad_check;

    #[test]
    fn kl_graph_matches_reference() {
        let mu = vec![0.3, -1.0, 0.5, 2.0];
        let lv = vec![0.1, -0.4, 1.2, 0.0];
        let mut tape = Tape::new();
        let m = tape.constant(Tensor::new(vec![2, 2], mu.clone()).unwrap());
        let l = tape.constant(Tensor::new(vec![2, 2], lv.clone()).unwrap());
        let k = gaussian_kl_to_standard(&mut tape, m, l, 2).unwrap();
        let reference = kl_divergence(&mu, &lv).unwrap() / 2.0;
        assert!((tape.value(k).data()[0] - reference).abs() < 1e-14);
        // KL(q ‖ 𝒩(0, I)) via the general form.
        let zero = tape.constant(Tensor::zeros(&[2, 2]));
        let g = gaussian_kl(&mut tape, m, l, zero, zero, 2).unwrap();
        assert!((tape.value(g).data()[0] - reference).abs() < 1e-14);
    }

    fn grad_check_loss(mech: MechanismConfig) {
        let (h, w, b) = (4, 4, 2);
        let cfg = backbone_config(&mech, &[2, 3]);
        let mut params = Vec::new();
        let net = build(&mech, &cfg, h, w, &mut params, &mut crate::rng::stream(5, &[])).unwrap();
        let x: Vec<f64> = (0..b * h * w).map(|i| (i as f64 * 0.41).sin()).collect();
        let y: Vec<f64> = (0..b * h * w).map(|i| (i as f64 * 0.23).cos()).collect();
        // Perturb the first parameter tensor (first conv weights).
        let target = params[0].tensor.clone();
        let err = grad_check(
            |t, p0| {
                let mut vars = vec![p0];
                vars.extend(params[1..].iter().map(|p| t.constant(p.tensor.clone())));
                net.loss(t, &vars, &x, &y, b, h, w, &mut crate::rng::stream(9, &[]))
            },
            &target,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{:?}: {err}", mech.kind());
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        grad_check_loss(MechanismConfig::default_for(crate::models::MechanismKind::Snn));
        grad_check_loss(MechanismConfig::Vnn(VnnConfig {
            latent_dim: 3,
            kl_weight: 0.5,
            skips: vec![true],
        }));
        grad_check_loss(MechanismConfig::Dnn(DiffusionConfig {
            steps: 10,
            time_embedding_dim: 4,
            ..DiffusionConfig::default()
        }));
        grad_check_loss(MechanismConfig::Qnn {
            levels: QuantileLevels::new(vec![0.25, 0.75]).unwrap(),
        });
    }

    #[test]
    fn rebuild_rejects_foreign_parameters() {
        let mech = MechanismConfig::default_for(crate::models::MechanismKind::Qnn);
        let cfg = backbone_config(&mech, &[2, 3]);
        let mut params = Vec::new();
        build(&mech, &cfg, 4, 4, &mut params, &mut crate::rng::stream(1, &[])).unwrap();
        assert!(rebuild(&mech, &cfg, 4, 4, &params).is_ok());
        params.pop();
        assert!(rebuild(&mech, &cfg, 4, 4, &params).is_err());
        let snn = MechanismConfig::default_for(crate::models::MechanismKind::Snn);
        assert!(build(&snn, &cfg, 4, 4, &mut Vec::new(), &mut crate::rng::stream(1, &[])).is_err());
    }
}
