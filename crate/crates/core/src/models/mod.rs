//! Shared convolutional backbone and the four uncertainty mechanisms:
//! stochastic perturbation (SNN), quantile regression (QNN), variational
//! autoencoder (VNN) and denoising diffusion (DNN).

mod backbone;
mod bundle;
pub mod diffusion;
mod losses;
mod network;
mod sample;
mod train;

pub use backbone::{Backbone, BackboneConfig};
pub use bundle::{load_bundle, save_bundle, ModelBundle, NamedTensor, TrainingMetadata};
pub use diffusion::{
    denoise_step, diffuse_forward, dnn_loss, make_beta_schedule, strided_step, NoiseSchedule,
};
pub use losses::{kl_divergence, pinball_loss, reparameterize, vnn_loss};
pub use sample::{
    dnn_sample, predict_deterministic, qnn_predict, sample_ensemble, snn_fit_noise, snn_sample,
    vnn_sample,
};
pub use train::{train, EpochRecord, TrainConfig, TrainingData, TrainingLog};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismKind {
    Snn,
    Qnn,
    Vnn,
    Dnn,
}

impl MechanismKind {
    pub const ALL: [MechanismKind; 4] = [Self::Snn, Self::Qnn, Self::Vnn, Self::Dnn];

    /// Realisations drawn per input member: ten quantiles for QNN, twenty samples otherwise.
    pub fn default_samples_per_member(self) -> usize {
        match self {
            Self::Qnn => 10,
            _ => 20,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Snn => "snn",
            Self::Qnn => "qnn",
            Self::Vnn => "vnn",
            Self::Dnn => "dnn",
        }
    }
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MechanismKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "snn" => Ok(Self::Snn),
            "qnn" => Ok(Self::Qnn),
            "vnn" => Ok(Self::Vnn),
            "dnn" => Ok(Self::Dnn),
            other => Err(Error::InvalidConfig(format!("unknown mechanism '{other}'"))),
        }
    }
}

/// Strictly increasing quantile levels in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileLevels(Vec<f64>);

impl QuantileLevels {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        crate::numerics::check_levels(&levels)?;
        if levels.is_empty() || levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "quantile levels must be non-empty and strictly increasing".into(),
            ));
        }
        Ok(Self(levels))
    }

    pub fn levels(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for QuantileLevels {
    /// 0.05, 0.15, …, 0.95.
    fn default() -> Self {
        Self((0..10).map(|p| 0.05 + 0.1 * p as f64).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VnnConfig {
    pub latent_dim: usize,
    pub kl_weight: f64,
    /// One flag per decoder stage of the backbone.
    pub skips: Vec<bool>,
}

impl Default for VnnConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            kl_weight: 1e-2,
            skips: vec![true],
        }
    }
}

impl VnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::InvalidConfig("latent dimension must be at least 1".into()));
        }
        if !(self.kl_weight >= 0.0) || !self.kl_weight.is_finite() {
            return Err(Error::InvalidConfig("KL weight must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SamplerKind {
    /// Full reverse chain through every step.
    Ancestral,
    /// Deterministic-by-default sampler over an evenly strided subset of steps.
    Strided {
        steps: usize,
        eta: f64,
        temperature: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub time_embedding_dim: usize,
    pub sampler: SamplerKind,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            beta_start: 1e-4,
            beta_end: 0.2,
            time_embedding_dim: 128,
            sampler: SamplerKind::Ancestral,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        make_beta_schedule(self.beta_start, self.beta_end, self.steps)?;
        if self.time_embedding_dim < 2 || self.time_embedding_dim % 2 != 0 {
            return Err(Error::InvalidConfig("time embedding dimension must be even and ≥ 2".into()));
        }
        if let SamplerKind::Strided {
            steps,
            eta,
            temperature,
        } = self.sampler
        {
            if steps < 1 || steps > self.steps {
                return Err(Error::InvalidConfig(format!(
                    "strided sampler needs 1..={} steps, got {steps}",
                    self.steps
                )));
            }
            if !(eta >= 0.0) || !(temperature >= 0.0) {
                return Err(Error::InvalidConfig("eta and temperature must be non-negative".into()));
            }
        }
        Ok(())
    }
}

/// Per-grid residual standard deviation used to perturb deterministic output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnnNoiseModel {
    pub sigma: Vec<f64>,
    /// When set, replaces the per-grid values with one domain-wide std.
    pub pooled: Option<f64>,
}

impl SnnNoiseModel {
    pub fn sigma_at(&self, g: usize) -> f64 {
        self.pooled.unwrap_or(self.sigma[g])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MechanismConfig {
    Snn { noise: SnnNoiseModel },
    Qnn { levels: QuantileLevels },
    Vnn(VnnConfig),
    Dnn(DiffusionConfig),
}

impl MechanismConfig {
    pub fn kind(&self) -> MechanismKind {
        match self {
            Self::Snn { .. } => MechanismKind::Snn,
            Self::Qnn { .. } => MechanismKind::Qnn,
            Self::Vnn(_) => MechanismKind::Vnn,
            Self::Dnn(_) => MechanismKind::Dnn,
        }
    }

    /// Default configuration of a mechanism; the SNN noise model starts empty
    /// and is fitted after training.
    pub fn default_for(kind: MechanismKind) -> Self {
        match kind {
            MechanismKind::Snn => Self::Snn {
                noise: SnnNoiseModel {
                    sigma: Vec::new(),
                    pooled: None,
                },
            },
            MechanismKind::Qnn => Self::Qnn {
                levels: QuantileLevels::default(),
            },
            MechanismKind::Vnn => Self::Vnn(VnnConfig::default()),
            MechanismKind::Dnn => Self::Dnn(DiffusionConfig::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Snn { noise } => {
                if noise.sigma.iter().chain(noise.pooled.iter()).any(|s| !(*s >= 0.0)) {
                    return Err(Error::InvalidConfig("noise std must be non-negative".into()));
                }
                Ok(())
            }
            Self::Qnn { levels } => QuantileLevels::new(levels.levels().to_vec()).map(|_| ()),
            Self::Vnn(c) => c.validate(),
            Self::Dnn(c) => c.validate(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_levels() {
        let q = QuantileLevels::default();
        assert_eq!(q.len(), 10);
        assert!((q.levels()[0] - 0.05).abs() < 1e-12);
        assert!((q.levels()[9] - 0.95).abs() < 1e-12);
        assert!(QuantileLevels::new(vec![0.5, 0.4]).is_err());
        assert!(QuantileLevels::new(vec![0.0, 0.4]).is_err());
    }

    #[test]
    fn default_member_counts() {
        assert_eq!(MechanismKind::Qnn.default_samples_per_member(), 10);
        assert_eq!(MechanismKind::Dnn.default_samples_per_member(), 20);
        assert_eq!(MechanismKind::Vnn.default_samples_per_member(), 20);
        assert_eq!(MechanismKind::Snn.default_samples_per_member(), 20);
    }

    #[test]
    fn config_validation() {
        assert!(VnnConfig {
            latent_dim: 0,
            ..VnnConfig::default()
        }
        .validate()
        .is_err());
        let mut d = DiffusionConfig::default();
        assert!(d.validate().is_ok());
        d.sampler = SamplerKind::Strided {
            steps: 500,
            eta: 1.0,
            temperature: 1.0,
        };
        assert!(d.validate().is_err());
        assert_eq!("DNN".parse::<MechanismKind>().unwrap(), MechanismKind::Dnn);
    }
}
