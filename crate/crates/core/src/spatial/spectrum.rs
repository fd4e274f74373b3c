use crate::error::{Error, Result};
use crate::fields::{EnsembleSeries, FieldSeries, GridSpec};
use crate::synth::EARTH_RADIUS_KM;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;

/// C_0 = 2π·R_E in km.
pub fn earth_circumference_km() -> f64 {
    2.0 * PI * EARTH_RADIUS_KM
}

/// Zonal energy spectra for k = 0..=⌊G_lon/2⌋.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSeries {
    pub wavenumbers: Vec<usize>,
    /// Latitude-averaged (and member-averaged) S(k) per sample, row-major.
    pub per_sample: Vec<f64>,
    pub n_samples: usize,
    /// Sample-averaged S_i(k) per latitude, [n_lat][k].
    pub per_latitude: Vec<Vec<f64>>,
    /// Sample- and latitude-averaged S(k).
    pub mean: Vec<f64>,
    /// Wavelength in km per latitude for k ≥ 1, [n_lat][k − 1].
    pub wavelength_km: Vec<Vec<f64>>,
}

impl SpectrumSeries {
    pub fn n_wavenumbers(&self) -> usize {
        self.wavenumbers.len()
    }

    pub fn sample(&self, r: usize) -> &[f64] {
        let k = self.n_wavenumbers();
        &self.per_sample[r * k..(r + 1) * k]
    }

    /// Wavelength of `k ≥ 1` at the latitude-mean cos φ.
    pub fn mean_wavelength_km(&self, k: usize) -> f64 {
        let n = self.wavelength_km.len() as f64;
        self.wavelength_km.iter().map(|row| row[k - 1]).sum::<f64>() / n
    }
}

fn c_phi(lat: f64) -> f64 {
    earth_circumference_km() * lat.to_radians().cos()
}

/// Sum of `xs` in sorted order, so the result does not depend on member order.
fn sorted_sum(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs.iter().sum()
}

/// Spectra of `samples × members` fields laid out as consecutive G-blocks.
/// Members are averaged per sample in sorted order.
fn spectra(values: &[f64], samples: usize, members: usize, grid: &GridSpec, anomaly: bool) -> Result<SpectrumSeries> {
    let (h, w) = (grid.n_lat(), grid.n_lon());
    if w < 4 {
        return Err(Error::InvalidGrid("zonal spectra need at least 4 longitudes".into()));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("field value {i}")));
    }
    let g = h * w;
    let mut buf_m = vec![0.0; members];
    let centre: Vec<f64> = if anomaly && samples > 0 {
        (0..g)
            .map(|gi| {
                let mut total = 0.0;
                for n in 0..samples {
                    for (m, b) in buf_m.iter_mut().enumerate() {
                        *b = values[(n * members + m) * g + gi];
                    }
                    total += sorted_sum(&mut buf_m);
                }
                total / (samples * members) as f64
            })
            .collect()
    } else {
        vec![0.0; g]
    };
    let kmax = w / 2;
    let nk = kmax + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(w);
    let mut buf = vec![Complex::new(0.0, 0.0); w];
    let mut per_sample = vec![0.0; samples * nk];
    let mut per_latitude = vec![vec![0.0; nk]; h];
    // [member][k] energies of one latitude row of one sample
    let mut row_energy = vec![vec![0.0; nk]; members];
    for n in 0..samples {
        for i in 0..h {
            let c = c_phi(grid.lats()[i]);
            for (m, energy) in row_energy.iter_mut().enumerate() {
                let off = (n * members + m) * g + i * w;
                for j in 0..w {
                    buf[j] = Complex::new(values[off + j] - centre[i * w + j], 0.0);
                }
                fft.process(&mut buf);
                for (k, e) in energy.iter_mut().enumerate() {
                    let f = buf[k] / w as f64;
                    // The mean and (for even G) the Nyquist term have no mirror.
                    let factor = if k == 0 || 2 * k == w { 1.0 } else { 2.0 };
                    *e = factor * c * f.norm_sqr();
                }
            }
            for k in 0..nk {
                for (b, energy) in buf_m.iter_mut().zip(&row_energy) {
                    *b = energy[k];
                }
                let s = sorted_sum(&mut buf_m) / members as f64;
                per_sample[n * nk + k] += s / h as f64;
                per_latitude[i][k] += s / samples as f64;
            }
        }
    }
    let mean = (0..nk)
        .map(|k| per_latitude.iter().map(|row| row[k]).sum::<f64>() / h as f64)
        .collect();
    let wavelength_km = (0..h)
        .map(|i| (1..nk).map(|k| wavelength_at(grid, i, k)).collect())
        .collect();
    Ok(SpectrumSeries {
        wavenumbers: (0..nk).collect(),
        per_sample,
        n_samples: samples,
        per_latitude,
        mean,
        wavelength_km,
    })
}

/// Zonal spectra of every sample. With `anomaly`, the temporal mean per grid
/// point is removed first.
pub fn zonal_spectrum(fields: &FieldSeries, anomaly: bool) -> Result<SpectrumSeries> {
    spectra(fields.values(), fields.n_samples(), 1, fields.grid(), anomaly)
}

/// Member-averaged spectra per sample.
pub fn zonal_spectrum_ensemble(ens: &EnsembleSeries, anomaly: bool) -> Result<SpectrumSeries> {
    spectra(ens.values(), ens.n_samples(), ens.n_members(), ens.grid(), anomaly)
}

/// `1 − S_model(k)/S_ref(k)` for k = 1..=⌊G_lon/2⌋; positive means the model
/// under-estimates energy.
pub fn ress(model: &SpectrumSeries, reference: &SpectrumSeries) -> Result<Vec<f64>> {
    if model.wavenumbers != reference.wavenumbers {
        return Err(crate::error::shape_mismatch(
            &[reference.n_wavenumbers()],
            &[model.n_wavenumbers()],
        ));
    }
    (1..model.n_wavenumbers())
        .map(|k| {
            let r = reference.mean[k];
            if !(r > 0.0) {
                return Err(Error::ZeroReference(k));
            }
            Ok(1.0 - model.mean[k] / r)
        })
        .collect()
}

fn wavelength_at(grid: &GridSpec, lat_index: usize, k: usize) -> f64 {
    let dlon_km = c_phi(grid.lats()[lat_index]) * grid.dlon().abs() / 360.0;
    grid.n_lon() as f64 * dlon_km / k as f64
}

/// `G_lon · C_0 cos φ · dlon/360 / k` in km.
pub fn wavenumber_to_wavelength(k: usize, grid: &GridSpec, lat_index: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::OutOfRange("wavenumber 0 has infinite wavelength".into()));
    }
    if lat_index >= grid.n_lat() {
        return Err(Error::OutOfRange(format!("latitude index {lat_index} of {}", grid.n_lat())));
    }
    Ok(wavelength_at(grid, lat_index, k))
}

/// `k,wavelength_km,S_model,S_ref,ress` rows for k ≥ 1, wavelengths averaged
/// over latitudes.
pub fn spectrum_csv(model: &SpectrumSeries, reference: &SpectrumSeries) -> Result<String> {
    let r = ress(model, reference)?;
    let mut s = String::from("k,wavelength_km,S_model,S_ref,ress\n");
    for k in 1..model.n_wavenumbers() {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            k,
            model.mean_wavelength_km(k),
            model.mean[k],
            reference.mean[k],
            r[k - 1]
        );
    }
    Ok(s)
}
