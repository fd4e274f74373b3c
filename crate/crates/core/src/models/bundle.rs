//! Trained model bundle and its on-disk form: a JSON manifest plus one GFLD1
//! container of parameters next to it (`<stem>.params.gfld`).
//!
//! Each parameter is stored as an f32 pair (value, residual) in the two
//! members of the container, which keeps about 48 bits of the f64 mantissa.

use super::network::{rebuild, Net};
use super::{BackboneConfig, MechanismConfig, MechanismKind, TrainConfig};
use crate::error::{Error, Result};
use crate::fields::{read_container, write_container, Climatology, Container, GridSpec};
use crate::numerics::Tensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

impl NamedTensor {
    pub fn new(name: &str, tensor: Tensor) -> Self {
        Self {
            name: name.to_string(),
            tensor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub train: TrainConfig,
    pub architecture: String,
}

#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub mechanism: MechanismConfig,
    pub backbone: BackboneConfig,
    pub grid: GridSpec,
    pub params: Vec<NamedTensor>,
    pub x_climatology: Option<Climatology>,
    pub y_climatology: Option<Climatology>,
    pub metadata: TrainingMetadata,
}

impl ModelBundle {
    pub fn kind(&self) -> MechanismKind {
        self.mechanism.kind()
    }

    pub fn ensure_kind(&self, expected: MechanismKind) -> Result<()> {
        if self.kind() != expected {
            return Err(Error::WrongMechanism {
                expected: expected.to_string(),
                actual: self.kind().to_string(),
            });
        }
        Ok(())
    }

    pub fn n_parameters(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub(crate) fn network(&self) -> Result<Net> {
        rebuild(
            &self.mechanism,
            &self.backbone,
            self.grid.n_lat(),
            self.grid.n_lon(),
            &self.params,
        )
    }
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    kind: MechanismKind,
    mechanism: MechanismConfig,
    backbone: BackboneConfig,
    grid: GridSpec,
    parameters: Vec<ParamEntry>,
    parameter_file: String,
    x_climatology: Option<Climatology>,
    y_climatology: Option<Climatology>,
    metadata: TrainingMetadata,
}

fn params_path(manifest: &Path) -> PathBuf {
    let stem = manifest
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    manifest.with_file_name(format!("{stem}.params.gfld"))
}

pub fn save_bundle(bundle: &ModelBundle, manifest_path: &Path) -> Result<()> {
    let pp = params_path(manifest_path);
    let flat: Vec<f64> = bundle.params.iter().flat_map(|p| p.tensor.data().iter().copied()).collect();
    let hi: Vec<f32> = flat.iter().map(|&v| v as f32).collect();
    let lo: Vec<f32> = flat.iter().zip(&hi).map(|(&v, &h)| (v - h as f64) as f32).collect();
    let count = flat.len();
    write_container(
        &pp,
        &Container {
            n: 1,
            members: 2,
            g_lat: 1,
            g_lon: count as u32,
            lats: vec![0.0],
            lons: (0..count).map(|i| i as f64).collect(),
            values: hi.into_iter().chain(lo).collect(),
        },
    )?;
    let manifest = Manifest {
        format: "ensemble-downscaling-model/1".into(),
        kind: bundle.kind(),
        mechanism: bundle.mechanism.clone(),
        backbone: bundle.backbone.clone(),
        grid: bundle.grid.clone(),
        parameters: bundle
            .params
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
            })
            .collect(),
        parameter_file: pp
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        x_climatology: bundle.x_climatology.clone(),
        y_climatology: bundle.y_climatology.clone(),
        metadata: bundle.metadata.clone(),
    };
    fs::write(manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load_bundle(manifest_path: &Path) -> Result<ModelBundle> {
    if !manifest_path.exists() {
        return Err(Error::MissingInput(manifest_path.to_path_buf()));
    }
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    if manifest.kind != manifest.mechanism.kind() {
        return Err(Error::WrongMechanism {
            expected: manifest.kind.to_string(),
            actual: manifest.mechanism.kind().to_string(),
        });
    }
    let pp = manifest_path.with_file_name(&manifest.parameter_file);
    let c = read_container(&pp)?;
    let count: usize = manifest.parameters.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    if c.n != 1 || c.members != 2 || c.g_lat != 1 || c.g_lon as usize != count {
        return Err(Error::ShapeMismatch {
            expected: vec![1, 2, 1, count],
            actual: vec![c.n as usize, c.members as usize, c.g_lat as usize, c.g_lon as usize],
        });
    }
    let (hi, lo) = c.values.split_at(count);
    let mut flat = hi.iter().zip(lo).map(|(&h, &l)| h as f64 + l as f64);
    let params = manifest
        .parameters
        .iter()
        .map(|p| {
            let n = p.shape.iter().product();
            let data: Vec<f64> = flat.by_ref().take(n).collect();
            Ok(NamedTensor::new(&p.name, Tensor::new(p.shape.clone(), data)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let bundle = ModelBundle {
        mechanism: manifest.mechanism,
        backbone: manifest.backbone,
        grid: manifest.grid,
        params,
        x_climatology: manifest.x_climatology,
        y_climatology: manifest.y_climatology,
        metadata: manifest.metadata,
    };
    bundle.network()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::network::{backbone_config, build};

    fn tiny_bundle(kind: MechanismKind) -> ModelBundle {
        let grid = GridSpec::regular(60.0, -2.7, 4, 0.0, 2.7, 8).unwrap();
        let mechanism = MechanismConfig::default_for(kind);
        let backbone = backbone_config(&mechanism, &[2, 3]);
        let mut params = Vec::new();
        build(&mechanism, &backbone, 4, 8, &mut params, &mut crate::rng::stream(4, &[])).unwrap();
        ModelBundle {
            mechanism,
            backbone,
            grid,
            params,
            x_climatology: None,
            y_climatology: None,
            metadata: TrainingMetadata {
                seed: 4,
                epochs_run: 0,
                best_epoch: 0,
                best_validation_loss: 0.0,
                train: TrainConfig::default(),
                architecture: "test".into(),
            },
        }
    }

    #[test]
    fn roundtrip_preserves_parameters() {
        let dir = tempfile::tempdir().unwrap();
        for kind in MechanismKind::ALL {
            let b = tiny_bundle(kind);
            let p = dir.path().join(format!("{kind}.json"));
            save_bundle(&b, &p).unwrap();
            let back = load_bundle(&p).unwrap();
            assert_eq!(back.kind(), kind);
            assert_eq!(back.params.len(), b.params.len());
            for (a, c) in b.params.iter().zip(&back.params) {
                assert_eq!(a.name, c.name);
                for (x, y) in a.tensor.data().iter().zip(c.tensor.data()) {
                    assert!((x - y).abs() <= 1e-13 * x.abs().max(1e-300), "{x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn kind_mismatch_is_reported() {
        let b = tiny_bundle(MechanismKind::Qnn);
        let err = b.ensure_kind(MechanismKind::Vnn).unwrap_err();
        assert!(matches!(err, Error::WrongMechanism { .. }));
    }

    #[test]
    fn missing_manifest() {
        assert!(matches!(
            load_bundle(Path::new("/nonexistent/model.json")),
            Err(Error::MissingInput(_))
        ));
    }
}
