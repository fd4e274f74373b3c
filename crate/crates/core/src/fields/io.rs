//! GFLD1 container: `GFLD1` magic, little-endian u32 N, members, G_lat,
//! G_lon, then f64 latitudes and longitudes, then f32 values in row-major
//! (sample, member, lat, lon) order. A `<name>.meta.json` sidecar carries the
//! variable name, units, standardized flag and climatology reference.

use super::{EnsembleSeries, FieldSeries, GridSpec};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 5] = b"GFLD1";
const HEADER_LEN: usize = 5 + 4 * 4;

/// Raw decoded container, without grid validation.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub n: u32,
    pub members: u32,
    pub g_lat: u32,
    pub g_lon: u32,
    pub lats: Vec<f64>,
    pub lons: Vec<f64>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FieldMeta {
    pub variable: String,
    pub units: String,
    pub standardized: bool,
    #[serde(default)]
    pub climatology: Option<String>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.meta.json"))
}

pub fn write_container(path: &Path, c: &Container) -> Result<()> {
    let expected = c.n as usize * c.members as usize * c.g_lat as usize * c.g_lon as usize;
    if c.values.len() != expected || c.lats.len() != c.g_lat as usize || c.lons.len() != c.g_lon as usize {
        return Err(crate::error::shape_mismatch(
            &[expected, c.g_lat as usize, c.g_lon as usize],
            &[c.values.len(), c.lats.len(), c.lons.len()],
        ));
    }
    if c.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("value not representable as finite f32".into()));
    }
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * (c.lats.len() + c.lons.len()) + 4 * c.values.len());
    buf.extend_from_slice(MAGIC);
    for d in [c.n, c.members, c.g_lat, c.g_lon] {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for v in c.lats.iter().chain(&c.lons) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in &c.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

fn decode(bytes: &[u8]) -> Result<Container> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::UnrecognizedContainer);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload);
    }
    let dim = |i: usize| {
        let o = MAGIC.len() + 4 * i;
        u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4-byte slice"))
    };
    let (n, members, g_lat, g_lon) = (dim(0), dim(1), dim(2), dim(3));
    let n_coords = g_lat as usize + g_lon as usize;
    let n_values = (n as u64) * (members as u64) * (g_lat as u64) * (g_lon as u64);
    let needed = HEADER_LEN as u64 + 8 * n_coords as u64 + 4 * n_values;
    if (bytes.len() as u64) < needed {
        return Err(Error::TruncatedPayload);
    }
    if (bytes.len() as u64) > needed {
        return Err(Error::UnrecognizedContainer);
    }
    let coords: Vec<f64> = bytes[HEADER_LEN..HEADER_LEN + 8 * n_coords]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let values: Vec<f32> = bytes[HEADER_LEN + 8 * n_coords..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    if let Some(i) = values.iter().position(|v| v.is_nan()) {
        return Err(Error::NonFinite(format!("NaN in payload at value {i}")));
    }
    if values.iter().any(|v| v.is_infinite()) || coords.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("infinite value in payload".into()));
    }
    let (lats, lons) = coords.split_at(g_lat as usize);
    Ok(Container {
        n,
        members,
        g_lat,
        g_lon,
        lats: lats.to_vec(),
        lons: lons.to_vec(),
        values,
    })
}

pub fn read_container(path: &Path) -> Result<Container> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    decode(&fs::read(path)?)
}

pub fn read_meta(path: &Path) -> Result<Option<FieldMeta>> {
    let p = sidecar_path(path);
    if !p.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(&fs::read_to_string(p)?)?))
}

fn write_meta(path: &Path, meta: &FieldMeta) -> Result<()> {
    fs::write(sidecar_path(path), serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(())
}

fn to_container(grid: &GridSpec, n: usize, members: usize, values: &[f64]) -> Container {
    Container {
        n: n as u32,
        members: members as u32,
        g_lat: grid.n_lat() as u32,
        g_lon: grid.n_lon() as u32,
        lats: grid.lats().to_vec(),
        lons: grid.lons().to_vec(),
        values: values.iter().map(|&v| v as f32).collect(),
    }
}

pub fn save_field(f: &FieldSeries, path: &Path) -> Result<()> {
    write_container(path, &to_container(f.grid(), f.n_samples(), 1, f.values()))?;
    write_meta(
        path,
        &FieldMeta {
            variable: f.variable.clone(),
            units: f.units.clone(),
            standardized: f.is_standardized(),
            climatology: f.climatology.clone(),
        },
    )
}

pub fn save_ensemble(e: &EnsembleSeries, path: &Path) -> Result<()> {
    write_container(
        path,
        &to_container(e.grid(), e.n_samples(), e.n_members(), e.values()),
    )?;
    write_meta(
        path,
        &FieldMeta {
            variable: e.variable.clone(),
            units: e.units.clone(),
            standardized: e.is_standardized(),
            climatology: e.climatology.clone(),
        },
    )
}

pub fn load_ensemble(path: &Path) -> Result<EnsembleSeries> {
    let c = read_container(path)?;
    let meta = read_meta(path)?.unwrap_or_default();
    let grid = GridSpec::new(c.lats, c.lons)?;
    let values = c.values.iter().map(|&v| v as f64).collect();
    let mut e = EnsembleSeries::new(grid, c.n as usize, c.members as usize, values, meta.standardized)?
        .with_variable(&meta.variable, &meta.units);
    e.climatology = meta.climatology;
    Ok(e)
}

pub fn load_field(path: &Path) -> Result<FieldSeries> {
    let c = read_container(path)?;
    if c.members != 1 {
        return Err(Error::ShapeMismatch {
            expected: vec![1],
            actual: vec![c.members as usize],
        });
    }
    let meta = read_meta(path)?.unwrap_or_default();
    let grid = GridSpec::new(c.lats, c.lons)?;
    let values = c.values.iter().map(|&v| v as f64).collect();
    let mut f = FieldSeries::new(grid, c.n as usize, values, meta.standardized)?
        .with_variable(&meta.variable, &meta.units);
    f.climatology = meta.climatology;
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_field() -> FieldSeries {
        let grid = GridSpec::regular(60.0, -2.7, 6, 0.0, 2.7, 8).unwrap();
        let mut rng = crate::rng::stream(3, &[]);
        let v = (0..4 * 48).map(|_| rng.gen_range(-10.0..10.0)).collect();
        FieldSeries::new(grid, 4, v, false)
            .unwrap()
            .with_variable("u100", "m s-1")
    }

    fn value_block(path: &Path, n_coords: usize) -> Vec<u8> {
        fs::read(path).unwrap()[HEADER_LEN + 8 * n_coords..].to_vec()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.gfld");
        let p2 = dir.path().join("b.gfld");
        let mut f = random_field();
        f.climatology = Some("clim_y".into());
        save_field(&f, &p1).unwrap();
        let back = load_field(&p1).unwrap();
        save_field(&back, &p2).unwrap();
        assert_eq!(value_block(&p1, 14), value_block(&p2, 14));
        assert_eq!(back.grid(), f.grid());
        assert_eq!(back.variable, "u100");
        for (a, b) in f.values().iter().zip(back.values()) {
            assert_eq!(*a as f32, *b as f32);
        }
        let meta = read_meta(&p1).unwrap().unwrap();
        assert_eq!(meta.climatology.as_deref(), Some("clim_y"));
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.gfld");
        save_field(&random_field(), &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes[0] = b'X';
        fs::write(&p, bytes).unwrap();
        assert_eq!(load_field(&p).unwrap_err().to_string(), "unrecognized container");
    }

    #[test]
    fn short_payload_is_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.gfld");
        let f = random_field().select(&[0, 1, 2]).unwrap();
        save_field(&f, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 48 * 4]).unwrap();
        assert_eq!(load_field(&p).unwrap_err().to_string(), "truncated payload");
    }

    #[test]
    fn nan_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.gfld");
        save_field(&random_field(), &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        let o = HEADER_LEN + 8 * 14 + 4 * 5;
        bytes[o..o + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&p, bytes).unwrap();
        assert!(matches!(load_field(&p), Err(Error::NonFinite(_))));
    }

    #[test]
    fn ensemble_roundtrip_keeps_members() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.gfld");
        let f = random_field();
        let e = EnsembleSeries::new(f.grid().clone(), 2, 2, f.values().to_vec(), true).unwrap();
        save_ensemble(&e, &p).unwrap();
        let back = load_ensemble(&p).unwrap();
        assert_eq!(back.n_members(), 2);
        assert!(back.is_standardized());
        assert!(load_field(&p).is_err());
    }

    #[test]
    fn missing_file_reports_path() {
        let err = load_field(Path::new("/nonexistent/x.gfld")).unwrap_err();
        assert!(matches!(err, Error::MissingInput(_)));
    }
}
