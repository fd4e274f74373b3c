use crate::error::{Error, Result};
use crate::models::{DiffusionConfig, MechanismConfig, MechanismKind, QuantileLevels, SamplerKind, TrainConfig, VnnConfig};
use crate::rng::{derive_seed, stream, StreamRng};
use crate::synth::SynthConfig;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// One pipeline run. Precedence: command-line flags, then the JSON config
/// file, then these defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub model: MechanismKind,
    /// Realisations per input member; the mechanism default when unset.
    pub samples_per_member: Option<usize>,
    pub lead_week: usize,
    pub replicates: usize,
    pub threads: Option<usize>,
    pub fair_crps: bool,
    pub cos_weight: bool,
    pub anomaly_spectrum: bool,
    /// K′ values of the EOF skill curve; values above K are dropped and K is
    /// always included.
    pub eof_k_primes: Vec<usize>,
    /// When set, `train` draws its hyperparameters from the search ranges
    /// with this trial index instead of using `train`, `vnn` and `dnn`.
    pub search_trial: Option<u64>,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub qnn_levels: QuantileLevels,
    pub vnn: VnnConfig,
    pub dnn: DiffusionConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out: PathBuf::from("run"),
            model: MechanismKind::Snn,
            samples_per_member: None,
            lead_week: 1,
            replicates: 1000,
            threads: None,
            fair_crps: false,
            cos_weight: false,
            anomaly_spectrum: false,
            eof_k_primes: vec![1, 2, 3, 5, 10, 20, 50, 100],
            search_trial: None,
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            qnn_levels: QuantileLevels::default(),
            vnn: VnnConfig::default(),
            dnn: DiffusionConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn samples_per_member(&self) -> usize {
        self.samples_per_member.unwrap_or_else(|| self.model.default_samples_per_member())
    }

    /// Mechanism configuration of the selected model.
    pub fn mechanism(&self) -> MechanismConfig {
        match self.model {
            MechanismKind::Qnn => MechanismConfig::Qnn {
                levels: self.qnn_levels.clone(),
            },
            MechanismKind::Vnn => MechanismConfig::Vnn(self.vnn.clone()),
            MechanismKind::Dnn => MechanismConfig::Dnn(self.dnn.clone()),
            MechanismKind::Snn => MechanismConfig::default_for(MechanismKind::Snn),
        }
    }

    /// Structural checks plus the search ranges for the selected model.
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.synth.validate_splits()?;
        self.train.validate()?;
        if self.synth.members == 0 {
            return Err(Error::InvalidConfig("members must be at least 1".into()));
        }
        if self.samples_per_member == Some(0) {
            return Err(Error::InvalidConfig("samples per member must be at least 1".into()));
        }
        if self.synth.lead_weeks > 6 {
            return Err(Error::InvalidConfig("at most 6 lead weeks".into()));
        }
        if self.lead_week < 1 || self.lead_week > self.synth.lead_weeks {
            return Err(Error::InvalidConfig(format!(
                "lead week {} outside 1..={}",
                self.lead_week, self.synth.lead_weeks
            )));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidConfig("need at least one bootstrap replicate".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidConfig("threads must be at least 1".into()));
        }
        if self.eof_k_primes.contains(&0) {
            return Err(Error::InvalidConfig("K' must be at least 1".into()));
        }
        self.mechanism().validate()?;
        validate_search_ranges(self.model, &self.train, &self.vnn, &self.dnn)
    }

    /// Hyperparameters used by `train`: the configured ones, or a draw from
    /// the search ranges when `search_trial` is set.
    pub fn training_setup(&self) -> (MechanismConfig, TrainConfig) {
        match self.search_trial {
            None => (self.mechanism(), self.train.clone()),
            Some(trial) => {
                let mut rng = stream(derive_seed(self.seed, &[0x5ea2c4, trial]), &[]);
                sample_hyperparameters(self.model, self, &mut rng)
            }
        }
    }
}

fn in_range(name: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if !(v >= lo && v <= hi) {
        return Err(Error::InvalidConfig(format!("{name} = {v} outside [{lo}, {hi}]")));
    }
    Ok(())
}

fn in_set<T: PartialEq + std::fmt::Debug>(name: &str, v: T, set: &[T]) -> Result<()> {
    if !set.contains(&v) {
        return Err(Error::InvalidConfig(format!("{name} = {v:?} not in {set:?}")));
    }
    Ok(())
}

/// Upper learning-rate bound per mechanism.
fn max_learning_rate(kind: MechanismKind) -> f64 {
    match kind {
        MechanismKind::Vnn => 5e-2,
        _ => 1e-1,
    }
}

const LATENT_DIMS: [usize; 6] = [32, 64, 128, 256, 512, 1024];
const ETAS: [f64; 3] = [0.0, 0.5, 1.0];
const TEMPERATURES: [f64; 4] = [0.5, 1.0, 1.5, 2.0];

fn diffusion_steps() -> Vec<usize> {
    (1..=10).map(|i| 100 * i).collect()
}

fn embedding_dims() -> Vec<usize> {
    (128..=512).step_by(64).collect()
}

fn strided_counts() -> Vec<usize> {
    (10..=80).step_by(5).collect()
}

/// Bounds of the hyperparameter search. A weight decay of 0 disables it and
/// is always accepted.
pub fn validate_search_ranges(kind: MechanismKind, train: &TrainConfig, vnn: &VnnConfig, dnn: &DiffusionConfig) -> Result<()> {
    in_range("learning_rate", train.learning_rate, 1e-6, max_learning_rate(kind))?;
    if train.weight_decay != 0.0 {
        in_range("weight_decay", train.weight_decay, 1e-6, 1e-1)?;
    }
    match kind {
        MechanismKind::Vnn => {
            in_set("latent_dim", vnn.latent_dim, &LATENT_DIMS)?;
            in_range("kl_weight", vnn.kl_weight, 1e-4, 2e3)?;
        }
        MechanismKind::Dnn => {
            in_range("beta_start", dnn.beta_start, 1e-6, 1e-3)?;
            in_range("beta_end", dnn.beta_end, 1e-2, 0.2)?;
            in_set("steps", dnn.steps, &diffusion_steps())?;
            in_set("time_embedding_dim", dnn.time_embedding_dim, &embedding_dims())?;
            if let SamplerKind::Strided {
                steps,
                eta,
                temperature,
            } = dnn.sampler
            {
                in_set("sampler.steps", steps, &strided_counts())?;
                in_set("sampler.eta", eta, &ETAS)?;
                in_set("sampler.temperature", temperature, &TEMPERATURES)?;
            }
        }
        MechanismKind::Snn | MechanismKind::Qnn => {}
    }
    Ok(())
}

fn log_uniform(rng: &mut StreamRng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..=hi.ln())).exp()
}

/// One random-search draw within the search ranges. Architecture widths,
/// epochs and batching are kept from `base`.
pub fn sample_hyperparameters(kind: MechanismKind, base: &RunConfig, rng: &mut StreamRng) -> (MechanismConfig, TrainConfig) {
    let train = TrainConfig {
        learning_rate: log_uniform(rng, 1e-6, max_learning_rate(kind)),
        weight_decay: log_uniform(rng, 1e-6, 1e-1),
        ..base.train.clone()
    };
    let mech = match kind {
        MechanismKind::Snn => MechanismConfig::default_for(MechanismKind::Snn),
        MechanismKind::Qnn => MechanismConfig::Qnn {
            levels: base.qnn_levels.clone(),
        },
        MechanismKind::Vnn => MechanismConfig::Vnn(VnnConfig {
            latent_dim: *LATENT_DIMS.choose(rng).expect("non-empty"),
            kl_weight: log_uniform(rng, 1e-4, 2e3),
            skips: (0..base.train.widths.len().saturating_sub(1)).map(|_| rng.gen_bool(0.5)).collect(),
        }),
        MechanismKind::Dnn => MechanismConfig::Dnn(DiffusionConfig {
            steps: *diffusion_steps().choose(rng).expect("non-empty"),
            beta_start: log_uniform(rng, 1e-6, 1e-3),
            beta_end: rng.gen_range(1e-2..=0.2),
            time_embedding_dim: *embedding_dims().choose(rng).expect("non-empty"),
            sampler: SamplerKind::Strided {
                steps: *strided_counts().choose(rng).expect("non-empty"),
                eta: *ETAS.choose(rng).expect("non-empty"),
                temperature: *TEMPERATURES.choose(rng).expect("non-empty"),
            },
        }),
    };
    (mech, train)
}
