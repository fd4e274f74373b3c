//! Encoder-decoder convolutional backbone with skip connections.

use super::NamedTensor;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::rng::{fill_normal, StreamRng};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Channel width per resolution stage, finest first.
    pub widths: Vec<usize>,
    /// Skip connection per decoder stage, finest first (`widths.len() - 1` flags).
    pub skips: Vec<bool>,
    /// Dimension of the timestep embedding projected into every stage.
    pub time_embedding: Option<usize>,
}

impl BackboneConfig {
    pub fn new(in_channels: usize, out_channels: usize, widths: Vec<usize>) -> Self {
        let skips = vec![true; widths.len().saturating_sub(1)];
        Self {
            in_channels,
            out_channels,
            widths,
            skips,
            time_embedding: None,
        }
    }

    pub fn validate(&self, n_lat: usize, n_lon: usize) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::InvalidConfig("backbone widths must be non-empty and positive".into()));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidConfig("backbone needs at least one input and output channel".into()));
        }
        if self.skips.len() + 1 != self.widths.len() {
            return Err(Error::InvalidConfig(format!(
                "{} skip flags for {} stages",
                self.skips.len(),
                self.widths.len()
            )));
        }
        let f = 1usize << (self.widths.len() - 1);
        if n_lat % f != 0 || n_lon % f != 0 {
            return Err(Error::InvalidConfig(format!(
                "grid {n_lat}x{n_lon} is not divisible by {f} for {} stages",
                self.widths.len()
            )));
        }
        Ok(())
    }

    /// Channels and spatial size of the deepest feature map.
    pub fn bottleneck_shape(&self, n_lat: usize, n_lon: usize) -> (usize, usize, usize) {
        let f = 1usize << (self.widths.len() - 1);
        (*self.widths.last().expect("validated"), n_lat / f, n_lon / f)
    }
}

/// Draws a He-normal weight matrix and a zero bias.
pub(crate) fn push_linear(
    params: &mut Vec<NamedTensor>,
    name: &str,
    rows: usize,
    fan_in: usize,
    gain: f64,
    rng: &mut StreamRng,
) -> usize {
    let mut w = vec![0.0; rows * fan_in];
    fill_normal(rng, &mut w);
    let std = gain * (2.0 / fan_in as f64).sqrt();
    w.iter_mut().for_each(|v| *v *= std);
    let start = params.len();
    params.push(NamedTensor::new(
        &format!("{name}.w"),
        Tensor::new(vec![rows, fan_in], w).expect("consistent shape"),
    ));
    params.push(NamedTensor::new(&format!("{name}.b"), Tensor::zeros(&[rows])));
    start
}

/// `w · x + b` for `x` laid out [features, batch].
pub(crate) fn dense(tape: &mut Tape, vars: &[Var], at: usize, x: Var) -> Result<Var> {
    let y = tape.matmul(vars[at], x)?;
    tape.broadcast_add(y, vars[at + 1])
}

pub(crate) fn conv(tape: &mut Tape, vars: &[Var], at: usize, x: Var) -> Result<Var> {
    tape.conv3x3(x, vars[at], vars[at + 1])
}

/// [c, batch, h, w] → [c·h·w, batch].
pub(crate) fn flatten(tape: &mut Tape, x: Var) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let y = tape.reshape(x, &[s[0], s[1], s[2] * s[3]])?;
    let y = tape.swap_inner(y)?;
    tape.reshape(y, &[s[0] * s[2] * s[3], s[1]])
}

/// [c·h·w, batch] → [c, batch, h, w].
pub(crate) fn unflatten(tape: &mut Tape, x: Var, c: usize, h: usize, w: usize) -> Result<Var> {
    let b = tape.shape(x)[1];
    let y = tape.reshape(x, &[c, h * w, b])?;
    let y = tape.swap_inner(y)?;
    tape.reshape(y, &[c, b, h, w])
}

#[derive(Debug, Clone)]
pub struct Backbone {
    config: BackboneConfig,
    enc: Vec<(usize, usize, Option<usize>)>,
    dec: Vec<usize>,
    out: usize,
}

impl Backbone {
    /// Appends freshly initialised parameters under `prefix`.
    pub(crate) fn init(
        config: &BackboneConfig,
        prefix: &str,
        params: &mut Vec<NamedTensor>,
        rng: &mut StreamRng,
    ) -> Self {
        let mut enc = Vec::new();
        let mut cin = config.in_channels;
        for (s, &w) in config.widths.iter().enumerate() {
            let a = push_linear(params, &format!("{prefix}.enc{s}a"), w, cin * 9, 1.0, rng);
            let b = push_linear(params, &format!("{prefix}.enc{s}b"), w, w * 9, 1.0, rng);
            let t = config
                .time_embedding
                .map(|d| push_linear(params, &format!("{prefix}.time{s}"), w, d, 0.5, rng));
            enc.push((a, b, t));
            cin = w;
        }
        let mut dec = vec![0; config.widths.len() - 1];
        for s in (0..config.widths.len() - 1).rev() {
            let skip = if config.skips[s] { config.widths[s] } else { 0 };
            let cin = config.widths[s + 1] + skip;
            dec[s] = push_linear(params, &format!("{prefix}.dec{s}"), config.widths[s], cin * 9, 1.0, rng);
        }
        let out = push_linear(
            params,
            &format!("{prefix}.out"),
            config.out_channels,
            config.widths[0] * 9,
            0.5,
            rng,
        );
        Self {
            config: config.clone(),
            enc,
            dec,
            out,
        }
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    /// `x`: [in, batch, h, w]; `time`: [d_t, batch]; `bottleneck` is added to
    /// the deepest feature map. Returns [out, batch, h, w].
    pub(crate) fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        time: Option<Var>,
        bottleneck: Option<Var>,
    ) -> Result<Var> {
        let mut h = x;
        let mut feats = Vec::with_capacity(self.enc.len());
        for (s, &(a, b, t)) in self.enc.iter().enumerate() {
            if s > 0 {
                h = tape.avg_pool2(h)?;
            }
            h = conv(tape, vars, a, h)?;
            if let (Some(t), Some(time)) = (t, time) {
                let proj = dense(tape, vars, t, time)?;
                h = tape.broadcast_add(h, proj)?;
            }
            h = tape.relu(h);
            h = conv(tape, vars, b, h)?;
            h = tape.relu(h);
            feats.push(h);
        }
        if let Some(z) = bottleneck {
            h = tape.add(h, z)?;
        }
        for s in (0..self.dec.len()).rev() {
            h = tape.upsample2(h);
            if self.config.skips[s] {
                h = tape.concat(&[h, feats[s]])?;
            }
            h = conv(tape, vars, self.dec[s], h)?;
            h = tape.relu(h);
        }
        conv(tape, vars, self.out, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;

    #[test]
    fn output_shape_and_gradients() {
        let mut cfg = BackboneConfig::new(1, 2, vec![3, 4]);
        cfg.time_embedding = Some(4);
        cfg.validate(4, 8).unwrap();
        let mut params = Vec::new();
        let bb = Backbone::init(&cfg, "bb", &mut params, &mut crate::rng::stream(2, &[]));
        let x: Vec<f64> = (0..2 * 32).map(|i| (i as f64 * 0.3).sin()).collect();
        let x = Tensor::new(vec![1, 2, 4, 8], x).unwrap();
        let temb = Tensor::new(vec![4, 2], vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6, 0.7, 0.8]).unwrap();
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p.tensor.clone())).collect();
        let xv = tape.constant(x.clone());
        let tv = tape.constant(temb.clone());
        let y = bb.forward(&mut tape, &vars, xv, Some(tv), None).unwrap();
        assert_eq!(tape.shape(y), &[2, 2, 4, 8]);

        let err = grad_check(
            |t, xv| {
                let vars: Vec<Var> = params.iter().map(|p| t.constant(p.tensor.clone())).collect();
                let tv = t.constant(temb.clone());
                let y = bb.forward(t, &vars, xv, Some(tv), None)?;
                let y = t.tanh(y);
                Ok(t.mean(y))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn indivisible_grid_is_rejected() {
        let cfg = BackboneConfig::new(1, 1, vec![4, 4, 4]);
        assert!(cfg.validate(16, 20).is_ok());
        assert!(cfg.validate(16, 18).is_err());
    }

    #[test]
    fn flatten_roundtrip() {
        let mut tape = Tape::new();
        let x = Tensor::new(vec![2, 3, 2, 2], (0..24).map(|v| v as f64).collect()).unwrap();
        let xv = tape.constant(x.clone());
        let f = flatten(&mut tape, xv).unwrap();
        assert_eq!(tape.shape(f), &[8, 3]);
        // feature (c=1, pixel=2) of batch item 1 is x[1,1,1,0]
        assert_eq!(tape.value(f).data()[(4 + 2) * 3 + 1], x.data()[((3 + 1) * 2 + 1) * 2]);
        let u = unflatten(&mut tape, f, 2, 2, 2).unwrap();
        assert_eq!(tape.value(u).data(), x.data());
    }
}
