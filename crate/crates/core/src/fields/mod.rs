//! Grid geometry, field and ensemble containers, and standardisation.
//!
//! Values are stored row-major as (sample, [member,] latitude, longitude)
//! with latitudes ordered as given by the [`GridSpec`] (north to south for
//! every grid this crate generates) and longitudes west to east.

mod io;

pub use io::{
    load_ensemble, load_field, read_container, read_meta, save_ensemble, save_field,
    sidecar_path, write_container, Container, FieldMeta,
};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

const SPACING_TOL: f64 = 1e-9;

/// Regular latitude/longitude grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    lats: Vec<f64>,
    lons: Vec<f64>,
}

fn check_axis(name: &str, axis: &[f64], min_len: usize) -> Result<()> {
    if axis.len() < min_len {
        return Err(Error::InvalidGrid(format!(
            "{name} needs at least {min_len} points, got {}",
            axis.len()
        )));
    }
    if axis.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidGrid(format!("{name} contains non-finite values")));
    }
    let step = axis[1] - axis[0];
    if step == 0.0 {
        return Err(Error::InvalidGrid(format!("{name} is not strictly monotone")));
    }
    for w in axis.windows(2) {
        let d = w[1] - w[0];
        if d.signum() != step.signum() || d == 0.0 {
            return Err(Error::InvalidGrid(format!("{name} is not strictly monotone")));
        }
        if (d - step).abs() > SPACING_TOL {
            return Err(Error::InvalidGrid(format!("{name} spacing is not uniform")));
        }
    }
    Ok(())
}

impl GridSpec {
    pub fn new(lats: Vec<f64>, lons: Vec<f64>) -> Result<Self> {
        check_axis("latitudes", &lats, 2)?;
        check_axis("longitudes", &lons, 4)?;
        if lats.iter().any(|l| !(-90.0..=90.0).contains(l)) {
            return Err(Error::InvalidGrid("latitudes must lie in [-90, 90]".into()));
        }
        Ok(Self { lats, lons })
    }

    /// Builds a grid from its first point, signed spacing and count on each axis.
    pub fn regular(
        lat0: f64,
        dlat: f64,
        n_lat: usize,
        lon0: f64,
        dlon: f64,
        n_lon: usize,
    ) -> Result<Self> {
        let lats = (0..n_lat).map(|i| lat0 + dlat * i as f64).collect();
        let lons = (0..n_lon).map(|j| lon0 + dlon * j as f64).collect();
        Self::new(lats, lons)
    }

    pub fn lats(&self) -> &[f64] {
        &self.lats
    }

    pub fn lons(&self) -> &[f64] {
        &self.lons
    }

    pub fn n_lat(&self) -> usize {
        self.lats.len()
    }

    pub fn n_lon(&self) -> usize {
        self.lons.len()
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.lats.len() * self.lons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Absolute latitude spacing in degrees.
    pub fn dlat(&self) -> f64 {
        (self.lats[1] - self.lats[0]).abs()
    }

    /// Absolute longitude spacing in degrees.
    pub fn dlon(&self) -> f64 {
        (self.lons[1] - self.lons[0]).abs()
    }

    pub fn index(&self, lat: usize, lon: usize) -> usize {
        lat * self.n_lon() + lon
    }

    pub(crate) fn ensure_same(&self, other: &GridSpec) -> Result<()> {
        if self.lats.len() != other.lats.len() || self.lons.len() != other.lons.len() {
            return Err(Error::GridMismatch(format!(
                "{}x{} vs {}x{}",
                self.n_lat(),
                self.n_lon(),
                other.n_lat(),
                other.n_lon()
            )));
        }
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-6);
        if !close(&self.lats, &other.lats) || !close(&self.lons, &other.lons) {
            return Err(Error::GridMismatch("coordinates differ".into()));
        }
        Ok(())
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("value at flat index {i}")));
    }
    Ok(())
}

/// N samples of one variable on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSeries {
    grid: GridSpec,
    n_samples: usize,
    values: Vec<f64>,
    standardized: bool,
    pub variable: String,
    pub units: String,
    /// Identifier of the climatology used to standardize the values, if any.
    pub climatology: Option<String>,
}

impl FieldSeries {
    pub fn new(grid: GridSpec, n_samples: usize, values: Vec<f64>, standardized: bool) -> Result<Self> {
        let expected = n_samples * grid.len();
        if values.len() != expected {
            return Err(crate::error::shape_mismatch(
                &[n_samples, grid.n_lat(), grid.n_lon()],
                &[values.len()],
            ));
        }
        check_finite(&values)?;
        Ok(Self {
            grid,
            n_samples,
            values,
            standardized,
            variable: String::new(),
            units: String::new(),
            climatology: None,
        })
    }

    pub fn with_variable(mut self, variable: &str, units: &str) -> Self {
        self.variable = variable.to_string();
        self.units = units.to_string();
        self
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    pub fn sample(&self, n: usize) -> &[f64] {
        let g = self.grid.len();
        &self.values[n * g..(n + 1) * g]
    }

    pub fn get(&self, n: usize, lat: usize, lon: usize) -> f64 {
        self.values[n * self.grid.len() + self.grid.index(lat, lon)]
    }

    /// Subset of samples in the given order.
    pub fn select(&self, ids: &[usize]) -> Result<Self> {
        let g = self.grid.len();
        let mut values = Vec::with_capacity(ids.len() * g);
        for &n in ids {
            if n >= self.n_samples {
                return Err(Error::OutOfRange(format!("sample {n} of {}", self.n_samples)));
            }
            values.extend_from_slice(self.sample(n));
        }
        Ok(Self {
            grid: self.grid.clone(),
            n_samples: ids.len(),
            values,
            standardized: self.standardized,
            variable: self.variable.clone(),
            units: self.units.clone(),
            climatology: self.climatology.clone(),
        })
    }

    pub(crate) fn map_values(&self, values: Vec<f64>, standardized: bool) -> Self {
        Self {
            grid: self.grid.clone(),
            n_samples: self.n_samples,
            values,
            standardized,
            variable: self.variable.clone(),
            units: self.units.clone(),
            climatology: self.climatology.clone(),
        }
    }
}

/// N samples of an ensemble with `n_members` exchangeable members.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSeries {
    grid: GridSpec,
    n_samples: usize,
    n_members: usize,
    values: Vec<f64>,
    standardized: bool,
    pub variable: String,
    pub units: String,
    /// Identifier of the climatology used to standardize the values, if any.
    pub climatology: Option<String>,
}

impl EnsembleSeries {
    pub fn new(
        grid: GridSpec,
        n_samples: usize,
        n_members: usize,
        values: Vec<f64>,
        standardized: bool,
    ) -> Result<Self> {
        if n_members == 0 {
            return Err(Error::InvalidConfig("an ensemble needs at least one member".into()));
        }
        let expected = n_samples * n_members * grid.len();
        if values.len() != expected {
            return Err(crate::error::shape_mismatch(
                &[n_samples, n_members, grid.n_lat(), grid.n_lon()],
                &[values.len()],
            ));
        }
        check_finite(&values)?;
        Ok(Self {
            grid,
            n_samples,
            n_members,
            values,
            standardized,
            variable: String::new(),
            units: String::new(),
            climatology: None,
        })
    }

    /// Wraps a field as a one-member ensemble.
    pub fn from_field(f: &FieldSeries) -> Self {
        Self {
            grid: f.grid.clone(),
            n_samples: f.n_samples,
            n_members: 1,
            values: f.values.clone(),
            standardized: f.standardized,
            variable: f.variable.clone(),
            units: f.units.clone(),
            climatology: f.climatology.clone(),
        }
    }

    pub fn with_variable(mut self, variable: &str, units: &str) -> Self {
        self.variable = variable.to_string();
        self.units = units.to_string();
        self
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_members(&self) -> usize {
        self.n_members
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    pub fn member(&self, n: usize, m: usize) -> &[f64] {
        let g = self.grid.len();
        let off = (n * self.n_members + m) * g;
        &self.values[off..off + g]
    }

    /// Member `m` of every sample, as a field series.
    pub fn member_field(&self, m: usize) -> FieldSeries {
        let mut values = Vec::with_capacity(self.n_samples * self.grid.len());
        for n in 0..self.n_samples {
            values.extend_from_slice(self.member(n, m));
        }
        FieldSeries {
            grid: self.grid.clone(),
            n_samples: self.n_samples,
            values,
            standardized: self.standardized,
            variable: self.variable.clone(),
            units: self.units.clone(),
            climatology: self.climatology.clone(),
        }
    }

    /// Reorders members identically in every sample; `perm[i]` is the source of member `i`.
    pub fn permute_members(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.n_members];
        if perm.len() != self.n_members
            || perm.iter().any(|&p| p >= self.n_members || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::InvalidConfig("not a permutation of the members".into()));
        }
        let mut values = Vec::with_capacity(self.values.len());
        for n in 0..self.n_samples {
            for &p in perm {
                values.extend_from_slice(self.member(n, p));
            }
        }
        Ok(Self {
            values,
            ..self.clone()
        })
    }

    pub fn select(&self, ids: &[usize]) -> Result<Self> {
        let block = self.n_members * self.grid.len();
        let mut values = Vec::with_capacity(ids.len() * block);
        for &n in ids {
            if n >= self.n_samples {
                return Err(Error::OutOfRange(format!("sample {n} of {}", self.n_samples)));
            }
            values.extend_from_slice(&self.values[n * block..(n + 1) * block]);
        }
        Ok(Self {
            n_samples: ids.len(),
            values,
            ..self.clone()
        })
    }

    pub(crate) fn map_values(&self, values: Vec<f64>, standardized: bool) -> Self {
        Self {
            values,
            standardized,
            ..self.clone()
        }
    }
}

/// Per-grid-point mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Climatology {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub source_split: String,
}

impl Climatology {
    pub fn new(mean: Vec<f64>, std: Vec<f64>, source_split: &str) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(crate::error::shape_mismatch(&[mean.len()], &[std.len()]));
        }
        if let Some(g) = std.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::ZeroVariance(g));
        }
        check_finite(&mean)?;
        Ok(Self {
            mean,
            std,
            source_split: source_split.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Pools every member of the selected samples.
    pub fn fit_ensemble(ens: &EnsembleSeries, sample_ids: &[usize]) -> Result<Self> {
        let g = ens.grid.len();
        let rows: Vec<&[f64]> = sample_ids
            .iter()
            .flat_map(|&n| (0..ens.n_members).map(move |m| (n, m)))
            .map(|(n, m)| {
                if n >= ens.n_samples {
                    Err(Error::OutOfRange(format!("sample {n} of {}", ens.n_samples)))
                } else {
                    Ok(ens.member(n, m))
                }
            })
            .collect::<Result<_>>()?;
        moments(&rows, g, "ensemble")
    }
}

fn moments(rows: &[&[f64]], g: usize, split: &str) -> Result<Climatology> {
    if rows.len() < 2 {
        return Err(Error::InvalidConfig(
            "climatology needs at least two samples".into(),
        ));
    }
    let n = rows.len() as f64;
    let mut mean = vec![0.0; g];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; g];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std: Vec<f64> = var.iter().map(|s| (s / (n - 1.0)).sqrt()).collect();
    Climatology::new(mean, std, split)
}

/// Per-grid mean and sample standard deviation (n−1) over the selected samples.
pub fn fit_climatology(f: &FieldSeries, sample_ids: &[usize]) -> Result<Climatology> {
    let rows: Vec<&[f64]> = sample_ids
        .iter()
        .map(|&n| {
            if n >= f.n_samples {
                Err(Error::OutOfRange(format!("sample {n} of {}", f.n_samples)))
            } else {
                Ok(f.sample(n))
            }
        })
        .collect::<Result<_>>()?;
    moments(&rows, f.grid.len(), "selection")
}

fn apply_affine(values: &[f64], g: usize, f: impl Fn(usize, f64) -> f64) -> Vec<f64> {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| f(i % g, v))
        .collect()
}

fn check_clim(len: usize, grid_len: usize, tag: &Option<String>, c: &Climatology) -> Result<()> {
    if len != grid_len {
        return Err(Error::GridMismatch("climatology size differs from grid".into()));
    }
    match tag {
        Some(t) if *t != c.source_split => Err(Error::ClimatologyMismatch(format!(
            "values standardized with '{t}', got '{}'",
            c.source_split
        ))),
        _ => Ok(()),
    }
}

/// `(f − mean) / std` per grid point; tags the result with `c.source_split`.
pub fn standardize(f: &FieldSeries, c: &Climatology) -> Result<FieldSeries> {
    if f.standardized {
        return Err(Error::FlagMismatch("field is already standardized".into()));
    }
    check_clim(c.len(), f.grid.len(), &None, c)?;
    let v = apply_affine(&f.values, c.len(), |g, v| (v - c.mean[g]) / c.std[g]);
    let mut out = f.map_values(v, true);
    out.climatology = Some(c.source_split.clone());
    Ok(out)
}

pub fn destandardize(f: &FieldSeries, c: &Climatology) -> Result<FieldSeries> {
    if !f.standardized {
        return Err(Error::FlagMismatch("field is not standardized".into()));
    }
    check_clim(c.len(), f.grid.len(), &f.climatology, c)?;
    let v = apply_affine(&f.values, c.len(), |g, v| v * c.std[g] + c.mean[g]);
    let mut out = f.map_values(v, false);
    out.climatology = None;
    Ok(out)
}

pub fn standardize_ensemble(e: &EnsembleSeries, c: &Climatology) -> Result<EnsembleSeries> {
    if e.standardized {
        return Err(Error::FlagMismatch("ensemble is already standardized".into()));
    }
    check_clim(c.len(), e.grid.len(), &None, c)?;
    let v = apply_affine(&e.values, c.len(), |g, v| (v - c.mean[g]) / c.std[g]);
    let mut out = e.map_values(v, true);
    out.climatology = Some(c.source_split.clone());
    Ok(out)
}

pub fn destandardize_ensemble(e: &EnsembleSeries, c: &Climatology) -> Result<EnsembleSeries> {
    if !e.standardized {
        return Err(Error::FlagMismatch("ensemble is not standardized".into()));
    }
    check_clim(c.len(), e.grid.len(), &e.climatology, c)?;
    let v = apply_affine(&e.values, c.len(), |g, v| v * c.std[g] + c.mean[g]);
    let mut out = e.map_values(v, false);
    out.climatology = None;
    Ok(out)
}

/// Wind speed magnitude from its zonal and meridional components.
pub fn wind_speed_from_components(u: &FieldSeries, v: &FieldSeries) -> Result<FieldSeries> {
    u.grid.ensure_same(&v.grid)?;
    if u.n_samples != v.n_samples {
        return Err(crate::error::shape_mismatch(&[u.n_samples], &[v.n_samples]));
    }
    if u.standardized || v.standardized {
        return Err(Error::FlagMismatch("wind components must be in physical units".into()));
    }
    let values = u.values.iter().zip(&v.values).map(|(a, b)| a.hypot(*b)).collect();
    Ok(u.map_values(values, false).with_variable("wind_speed", &u.units.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> GridSpec {
        GridSpec::regular(74.0, -2.7, 2, -13.0, 2.7, 4).unwrap()
    }

    fn field(values: Vec<f64>) -> FieldSeries {
        let n = values.len() / 8;
        FieldSeries::new(grid(), n, values, false).unwrap()
    }

    fn constant(v: f64, n: usize) -> FieldSeries {
        field(vec![v; 8 * n])
    }

    #[test]
    fn grid_rejects_bad_axes() {
        assert!(GridSpec::regular(0.0, 1.0, 1, 0.0, 1.0, 4).is_err());
        assert!(GridSpec::regular(0.0, 1.0, 2, 0.0, 1.0, 3).is_err());
        assert!(GridSpec::new(vec![0.0, 1.0, 1.5], vec![0.0, 1.0, 2.0, 3.0]).is_err());
        assert!(GridSpec::new(vec![0.0, 1.0], vec![0.0, 1.0, 1.0, 3.0]).is_err());
        let g = grid();
        assert_eq!(g.len(), 8);
        assert!((g.dlat() - 2.7).abs() < 1e-12);
    }

    #[test]
    fn wind_speed_examples() {
        let u = field(vec![3.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let v = field(vec![4.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let w = wind_speed_from_components(&u, &v).unwrap();
        assert_eq!(w.values()[0], 5.0);
        assert_eq!(w.values()[1], 0.0);
        assert!((w.values()[2] - std::f64::consts::SQRT_2).abs() < 1e-8);
    }

    #[test]
    fn wind_speed_shape_mismatch() {
        let u = constant(1.0, 2);
        let v = constant(1.0, 3);
        assert!(wind_speed_from_components(&u, &v).is_err());
    }

    #[test]
    fn climatology_examples() {
        let mut vals = vec![0.0; 16];
        vals[..8].fill(1.0);
        vals[8..].fill(3.0);
        let c = fit_climatology(&field(vals), &[0, 1]).unwrap();
        assert_eq!(c.mean[0], 2.0);
        // n-1 estimator: sqrt(((1-2)^2 + (3-2)^2) / 1)
        assert!((c.std[0] - 2f64.sqrt()).abs() < 1e-15);

        let f: Vec<f64> = [0.0, 0.0, 3.0, 3.0]
            .iter()
            .flat_map(|v| std::iter::repeat_n(*v, 8))
            .collect();
        let c = fit_climatology(&field(f), &[0, 1, 2, 3]).unwrap();
        assert_eq!(c.mean[3], 1.5);
        assert!((c.std[3] - 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constant_series_is_zero_variance() {
        let err = fit_climatology(&constant(2.0, 4), &[0, 1, 2, 3]).unwrap_err();
        assert!(err.to_string().contains("zero variance"));
    }

    #[test]
    fn climatology_needs_two_samples() {
        assert!(fit_climatology(&constant(2.0, 4), &[0]).is_err());
    }

    #[test]
    fn standardize_examples() {
        let c = Climatology::new(vec![5.0; 8], vec![2.0; 8], "train").unwrap();
        let s = standardize(&constant(7.0, 1), &c).unwrap();
        assert!(s.values().iter().all(|&v| v == 1.0));
        let s = standardize(&constant(5.0, 1), &c).unwrap();
        assert!(s.values().iter().all(|&v| v == 0.0));
        assert!(standardize(&s, &c).is_err());
        assert!(destandardize(&constant(5.0, 1), &c).is_err());
    }

    #[test]
    fn standardized_training_mean_is_zero() {
        let f = field((0..80).map(|i| ((i * 37) % 11) as f64 + 0.1 * i as f64).collect());
        let ids: Vec<usize> = (0..10).collect();
        let c = fit_climatology(&f, &ids).unwrap();
        let s = standardize(&f, &c).unwrap();
        let c2 = fit_climatology(&s, &ids).unwrap();
        assert!(c2.mean.iter().all(|m| m.abs() < 1e-6));
    }

    #[test]
    fn permute_members_validates() {
        let e = EnsembleSeries::new(grid(), 1, 2, (0..16).map(f64::from).collect(), false).unwrap();
        let p = e.permute_members(&[1, 0]).unwrap();
        assert_eq!(p.member(0, 0), e.member(0, 1));
        assert!(e.permute_members(&[0, 0]).is_err());
    }

    proptest! {
        #[test]
        fn standardize_roundtrip(vals in proptest::collection::vec(-1e3f64..1e3, 24),
                                 means in proptest::collection::vec(-50f64..50.0, 8),
                                 stds in proptest::collection::vec(0.1f64..20.0, 8)) {
            let f = field(vals);
            let c = Climatology::new(means, stds, "train").unwrap();
            let back = destandardize(&standardize(&f, &c).unwrap(), &c).unwrap();
            for (a, b) in f.values().iter().zip(back.values()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }

        #[test]
        fn wind_speed_sign_invariant(u in proptest::collection::vec(-30f64..30.0, 8),
                                     v in proptest::collection::vec(-30f64..30.0, 8)) {
            let neg = |x: &Vec<f64>| x.iter().map(|a| -a).collect::<Vec<_>>();
            let a = wind_speed_from_components(&field(u.clone()), &field(v.clone())).unwrap();
            let b = wind_speed_from_components(&field(neg(&u)), &field(neg(&v))).unwrap();
            prop_assert_eq!(a.values(), b.values());
            prop_assert!(a.values().iter().all(|w| *w >= 0.0));
        }
    }
}
