//! Seeded mini-batch Adam training with early stopping on validation loss.

use super::bundle::{ModelBundle, NamedTensor, TrainingMetadata};
use super::network::{backbone_config, build, Net};
use super::sample::fit_noise_from_residuals;
use super::MechanismConfig;
use crate::error::{Error, Result};
use crate::fields::{Climatology, FieldSeries};
use crate::numerics::{adam_step, AdamConfig, AdamState, Tape, Tensor, Var};
use crate::rng::{fill_normal, named_seed, stream, StreamRng};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Samples per optimiser step; `None` uses the whole training split.
    pub batch_size: Option<usize>,
    pub patience: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Std of the Gaussian noise added to standardized inputs.
    pub augment_sigma: f64,
    pub widths: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 2000,
            batch_size: None,
            patience: 100,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            augment_sigma: 0.1,
            widths: vec![8, 16],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max_epochs must be at least 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) || !(self.augment_sigma >= 0.0) {
            return Err(Error::InvalidConfig(
                "learning rate must be positive; weight decay and augmentation non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Standardized train/validation pairs on one grid.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub x_train: FieldSeries,
    pub y_train: FieldSeries,
    pub x_val: FieldSeries,
    pub y_val: FieldSeries,
    pub x_climatology: Option<Climatology>,
    pub y_climatology: Option<Climatology>,
}

impl TrainingData {
    pub fn new(x_train: FieldSeries, y_train: FieldSeries, x_val: FieldSeries, y_val: FieldSeries) -> Result<Self> {
        for (f, name) in [(&x_train, "x_train"), (&y_train, "y_train"), (&x_val, "x_val"), (&y_val, "y_val")] {
            if !f.is_standardized() {
                return Err(Error::FlagMismatch(format!("{name} must be standardized")));
            }
            x_train.grid().ensure_same(f.grid())?;
        }
        if x_train.n_samples() != y_train.n_samples() || x_val.n_samples() != y_val.n_samples() {
            return Err(Error::ShapeMismatch {
                expected: vec![x_train.n_samples(), x_val.n_samples()],
                actual: vec![y_train.n_samples(), y_val.n_samples()],
            });
        }
        if x_train.n_samples() == 0 || x_val.n_samples() < 2 {
            return Err(Error::InvalidConfig(
                "need at least one training and two validation samples".into(),
            ));
        }
        Ok(Self {
            x_train,
            y_train,
            x_val,
            y_val,
            x_climatology: None,
            y_climatology: None,
        })
    }

    pub fn with_climatologies(mut self, x: Climatology, y: Climatology) -> Self {
        self.x_climatology = Some(x);
        self.y_climatology = Some(y);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn gather(f: &FieldSeries, ids: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(ids.len() * f.grid().len());
    for &i in ids {
        out.extend_from_slice(f.sample(i));
    }
    out
}

fn loss_and_grads(
    net: &Net,
    params: &[Tensor],
    x: &[f64],
    y: &[f64],
    b: usize,
    hw: (usize, usize),
    rng: &mut StreamRng,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = net.loss(&mut tape, &vars, x, y, b, hw.0, hw.1, rng)?;
    let value = tape.value(loss).data()[0];
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    tape.backward(loss)?;
    let grads = params
        .iter()
        .zip(&vars)
        .map(|(p, v)| {
            let g = tape.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.len()]);
            Tensor::new(p.shape().to_vec(), g)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((value, grads))
}

/// Loss over a whole split without augmentation, with a fixed noise stream.
pub(crate) fn evaluate_loss(
    net: &Net,
    params: &[Tensor],
    x: &FieldSeries,
    y: &FieldSeries,
    batch: usize,
    seed: u64,
) -> Result<f64> {
    let (h, w) = (x.grid().n_lat(), x.grid().n_lon());
    let n = x.n_samples();
    let mut rng = stream(seed, &[]);
    let mut total = 0.0;
    let ids: Vec<usize> = (0..n).collect();
    for chunk in ids.chunks(batch.max(1)) {
        let mut tape = Tape::inference();
        let vars: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
        let l = net.loss(&mut tape, &vars, &gather(x, chunk), &gather(y, chunk), chunk.len(), h, w, &mut rng)?;
        total += tape.value(l).data()[0] * chunk.len() as f64;
    }
    Ok(total / n as f64)
}

/// Trains a model of the given mechanism. The SNN noise model is fitted on
/// validation residuals after training.
pub fn train(
    mechanism: &MechanismConfig,
    data: &TrainingData,
    config: &TrainConfig,
    seed: u64,
) -> Result<(ModelBundle, TrainingLog)> {
    config.validate()?;
    let grid = data.x_train.grid().clone();
    let (h, w) = (grid.n_lat(), grid.n_lon());
    let g = grid.len();
    let backbone = backbone_config(mechanism, &config.widths);
    let root = named_seed(seed, "train");
    let mut named = Vec::new();
    let net = build(mechanism, &backbone, h, w, &mut named, &mut stream(root, &[0]))?;
    let names: Vec<String> = named.iter().map(|p| p.name.clone()).collect();
    let mut params: Vec<Tensor> = named.into_iter().map(|p| p.tensor).collect();
    let mut adam = AdamState::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            weight_decay: config.weight_decay,
            ..AdamConfig::default()
        },
        &params,
    )?;

    let n = data.x_train.n_samples();
    let batch = config.batch_size.unwrap_or(n).min(n);
    let eval_batch = batch.max(64);
    let val_seed = crate::rng::derive_seed(root, &[2]);
    let mut best = evaluate_loss(&net, &params, &data.x_val, &data.y_val, eval_batch, val_seed)?;
    let mut best_params = params.clone();
    let mut log = TrainingLog::default();
    let mut stale = 0;
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=config.max_epochs {
        let mut rng = stream(root, &[1, epoch as u64]);
        order.shuffle(&mut rng);
        let mut train_total = 0.0;
        for chunk in order.chunks(batch) {
            let mut x = gather(&data.x_train, chunk);
            if config.augment_sigma > 0.0 {
                let mut noise = vec![0.0; x.len()];
                fill_normal(&mut rng, &mut noise);
                for (v, e) in x.iter_mut().zip(noise) {
                    *v += config.augment_sigma * e;
                }
            }
            let y = gather(&data.y_train, chunk);
            let (loss, grads) = loss_and_grads(&net, &params, &x, &y, chunk.len(), (h, w), &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("training loss became {loss} (learning rate {})", config.learning_rate),
                });
            }
            adam_step(&mut params, &grads, &mut adam)?;
            train_total += loss * chunk.len() as f64;
        }
        let val = evaluate_loss(&net, &params, &data.x_val, &data.y_val, eval_batch, val_seed)?;
        if !val.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!("validation loss became {val}"),
            });
        }
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: train_total / n as f64,
            validation_loss: val,
        });
        if val < best {
            best = val;
            best_params.clone_from(&params);
            log.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                log.stopped_early = true;
                break;
            }
        }
    }

    let mut mechanism = mechanism.clone();
    if let MechanismConfig::Snn { noise } = &mut mechanism {
        let mut tape = Tape::inference();
        let vars: Vec<Var> = best_params.iter().map(|p| tape.constant(p.clone())).collect();
        let pred = net.predict(&mut tape, &vars, data.x_val.values(), data.x_val.n_samples(), h, w)?;
        let resid: Vec<f64> = data.y_val.values().iter().zip(&pred).map(|(a, b)| a - b).collect();
        *noise = fit_noise_from_residuals(&resid, g)?;
    }

    let bundle = ModelBundle {
        mechanism,
        backbone: backbone.clone(),
        grid,
        params: names
            .iter()
            .zip(best_params)
            .map(|(name, t)| NamedTensor::new(name, t))
            .collect(),
        x_climatology: data.x_climatology.clone(),
        y_climatology: data.y_climatology.clone(),
        metadata: TrainingMetadata {
            seed,
            epochs_run: log.epochs.len(),
            best_epoch: log.best_epoch,
            best_validation_loss: best,
            train: config.clone(),
            architecture: format!(
                "encoder-decoder, widths {:?}, 3x3 convs, 2x average-pool down, nearest up, skips {:?}",
                backbone.widths, backbone.skips
            ),
        },
    };
    Ok((bundle, log))
}
