//! Gaussian-linear synthetic world with closed-form answers.
//!
//! The predictor is a red-spectrum random field, the target is a smoothed and
//! scaled copy of it plus spatially correlated heteroscedastic noise, and the
//! forecast ensemble perturbs the predictor with lead-dependent, exchangeable
//! perturbations.

use crate::error::{Error, Result};
use crate::fields::{EnsembleSeries, FieldSeries, GridSpec};
use crate::rng::{fill_normal, named_seed, stream, StreamRng};
use serde::{Deserialize, Serialize};

/// Mean Earth radius in km.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_lat: usize,
    pub n_lon: usize,
    /// Northernmost latitude; rows run southward in steps of `dlat`.
    pub lat0: f64,
    pub lon0: f64,
    pub dlat: f64,
    pub dlon: f64,
    pub n_samples: usize,
    /// Zonal spectral slope of the predictor.
    pub gamma: f64,
    /// Meridional AR(1) coefficient between neighbouring rows.
    pub meridional_rho: f64,
    /// Gain of the predictor-to-target operator.
    pub operator_scale: f64,
    /// Neighbour weight of the operator's 3-point smoothing kernel.
    pub operator_smoothing: f64,
    /// Target climatological mean at the northern and southern rows.
    pub offset_north: f64,
    pub offset_south: f64,
    /// Target noise std at the northern and southern rows.
    pub noise_std_north: f64,
    pub noise_std_south: f64,
    /// Neighbour weight of the noise smoothing kernel.
    pub noise_smoothing: f64,
    pub members: usize,
    pub lead_weeks: usize,
    /// Perturbation std at week 1 and its increase per week.
    pub perturbation_std: f64,
    pub perturbation_growth: f64,
    /// Additive bias and anomaly scaling applied to the raw benchmark hindcast.
    pub benchmark_bias: f64,
    pub benchmark_spread: f64,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_lat: 16,
            n_lon: 20,
            lat0: 74.0,
            lon0: -13.0,
            dlat: 2.7,
            dlon: 2.7,
            n_samples: 800,
            gamma: 3.0,
            meridional_rho: 0.6,
            operator_scale: 1.5,
            operator_smoothing: 0.2,
            offset_north: 9.0,
            offset_south: 6.0,
            noise_std_north: 1.2,
            noise_std_south: 0.6,
            noise_smoothing: 0.2,
            members: 10,
            lead_weeks: 6,
            perturbation_std: 0.15,
            perturbation_growth: 0.15,
            benchmark_bias: 1.0,
            benchmark_spread: 0.5,
            train_fraction: 0.7,
            validation_fraction: 0.15,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.gamma > 0.0) {
            return bad("spectral slope gamma must be positive");
        }
        if !(self.meridional_rho.abs() < 1.0) {
            return bad("meridional coupling must lie in (-1, 1)");
        }
        if !(self.noise_std_north >= 0.0 && self.noise_std_south >= 0.0) {
            return bad("noise std must be non-negative");
        }
        for c in [self.operator_smoothing, self.noise_smoothing] {
            if !(0.0..0.5).contains(&c) {
                return bad("smoothing weights must lie in [0, 0.5)");
            }
        }
        if self.members < 2 {
            return bad("forecast ensembles need at least two members");
        }
        if self.lead_weeks == 0 || !(self.perturbation_std > 0.0) || !(self.perturbation_growth >= 0.0) {
            return bad("need at least one lead week, positive perturbation std and non-negative growth");
        }
        if !(self.benchmark_spread > 0.0) {
            return bad("benchmark spread scaling must be positive");
        }
        let (tr, va) = (self.train_fraction, self.validation_fraction);
        if !(tr > 0.0 && va > 0.0 && tr + va < 1.0) {
            return bad("train and validation fractions must be positive and leave a test split");
        }
        Ok(())
    }

    /// Like [`validate`](Self::validate), and also requires usable splits.
    pub fn validate_splits(&self) -> Result<()> {
        self.validate()?;
        let s = self.splits();
        if s.train.is_empty() || s.validation.len() < 2 || s.test.len() < 2 {
            return Err(Error::InvalidConfig("too few samples for the train/validation/test split".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::regular(self.lat0, -self.dlat, self.n_lat, self.lon0, self.dlon, self.n_lon)
    }

    /// Lead-week perturbation std, increasing with `week` (1-based).
    pub fn perturbation_std_at(&self, week: usize) -> f64 {
        self.perturbation_std + self.perturbation_growth * (week.max(1) - 1) as f64
    }

    /// Contiguous chronological split.
    pub fn splits(&self) -> Splits {
        let n = self.n_samples;
        let tr = (self.train_fraction * n as f64).round() as usize;
        let va = (self.validation_fraction * n as f64).round() as usize;
        let va_end = (tr + va).min(n);
        Splits {
            train: (0..tr.min(n)).collect(),
            validation: (tr.min(n)..va_end).collect(),
            test: (va_end..n).collect(),
        }
    }

    fn row_weight(&self, i: usize) -> f64 {
        if self.n_lat < 2 {
            0.0
        } else {
            i as f64 / (self.n_lat - 1) as f64
        }
    }

    /// Target climatological mean per grid point.
    pub fn offset(&self) -> Vec<f64> {
        (0..self.n_lat)
            .flat_map(|i| {
                let v = self.offset_north + (self.offset_south - self.offset_north) * self.row_weight(i);
                std::iter::repeat_n(v, self.n_lon)
            })
            .collect()
    }

    /// Target noise std σ_n(g).
    pub fn noise_std(&self) -> Vec<f64> {
        (0..self.n_lat)
            .flat_map(|i| {
                let v = self.noise_std_north + (self.noise_std_south - self.noise_std_north) * self.row_weight(i);
                std::iter::repeat_n(v, self.n_lon)
            })
            .collect()
    }

    /// Zonal amplitude² s_k² for k = 0..=G_lon/2, normalised to unit variance (s_0 = 0).
    pub fn zonal_power(&self) -> Vec<f64> {
        let kmax = self.n_lon / 2;
        let mut p: Vec<f64> = (0..=kmax)
            .map(|k| if k == 0 { 0.0 } else { (k as f64).powf(-self.gamma) })
            .collect();
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        p
    }

    /// Expected latitude-averaged zonal spectrum of the predictor.
    pub fn predictor_spectrum(&self) -> Result<Vec<f64>> {
        let grid = self.grid()?;
        let mean_c: f64 = grid
            .lats()
            .iter()
            .map(|lat| 2.0 * std::f64::consts::PI * EARTH_RADIUS_KM * lat.to_radians().cos())
            .sum::<f64>()
            / grid.n_lat() as f64;
        Ok(self.zonal_power().iter().map(|p| mean_c * p).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Closed-form answers of the synthetic world.
#[derive(Debug, Clone)]
pub struct OracleAnswer {
    /// E[y | x] per sample.
    pub conditional_mean: FieldSeries,
    /// σ_n(g).
    pub noise_std: Vec<f64>,
    /// Neighbour weight of the noise smoothing kernel.
    pub noise_smoothing: f64,
    /// Expected latitude-averaged predictor spectrum S_true(k).
    pub predictor_spectrum: Vec<f64>,
}

impl OracleAnswer {
    /// Dense G×G noise covariance Σ_η.
    pub fn noise_covariance(&self) -> Vec<f64> {
        let grid = self.conditional_mean.grid();
        let (h, w) = (grid.n_lat(), grid.n_lon());
        let g = h * w;
        let l = smoothing_matrix(h, w, self.noise_smoothing);
        let mut llt = vec![0.0; g * g];
        crate::numerics::linalg::gemm(g, g, g, &l, false, &l, true, 0.0, &mut llt);
        let scale: Vec<f64> = (0..g).map(|i| self.noise_std[i] / llt[i * g + i].sqrt()).collect();
        for i in 0..g {
            for j in 0..g {
                llt[i * g + j] *= scale[i] * scale[j];
            }
        }
        llt
    }
}

/// Separable 3-point smoothing: periodic in longitude, edge-clamped in latitude.
pub fn smooth(field: &[f64], h: usize, w: usize, c: f64) -> Vec<f64> {
    let mut zonal = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let l = field[i * w + (j + w - 1) % w];
            let r = field[i * w + (j + 1) % w];
            zonal[i * w + j] = c * l + (1.0 - 2.0 * c) * field[i * w + j] + c * r;
        }
    }
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        let up = i.saturating_sub(1);
        let down = (i + 1).min(h - 1);
        for j in 0..w {
            out[i * w + j] = c * zonal[up * w + j] + (1.0 - 2.0 * c) * zonal[i * w + j] + c * zonal[down * w + j];
        }
    }
    out
}

/// Dense matrix of [`smooth`] (row-major G×G).
pub fn smoothing_matrix(h: usize, w: usize, c: f64) -> Vec<f64> {
    let g = h * w;
    let mut m = vec![0.0; g * g];
    let mut e = vec![0.0; g];
    for col in 0..g {
        e[col] = 1.0;
        let s = smooth(&e, h, w, c);
        for row in 0..g {
            m[row * g + col] = s[row];
        }
        e[col] = 0.0;
    }
    m
}

/// One red-spectrum field with unit per-point variance.
fn spectral_field(cfg: &SynthConfig, power: &[f64], rng: &mut StreamRng) -> Vec<f64> {
    let (h, w) = (cfg.n_lat, cfg.n_lon);
    let kmax = w / 2;
    let amp: Vec<f64> = power.iter().map(|p| p.sqrt()).collect();
    let mut coeffs = vec![0.0; 2 * (kmax + 1)];
    let mut out = vec![0.0; h * w];
    let rho = cfg.meridional_rho;
    let innov = (1.0 - rho * rho).sqrt();
    for i in 0..h {
        fill_normal(rng, &mut coeffs);
        for j in 0..w {
            let mut v = 0.0;
            for k in 1..=kmax {
                let ph = 2.0 * std::f64::consts::PI * (k * j) as f64 / w as f64;
                if 2 * k == w {
                    v += amp[k] * coeffs[2 * k] * ph.cos();
                } else {
                    v += amp[k] * (coeffs[2 * k] * ph.cos() + coeffs[2 * k + 1] * ph.sin());
                }
            }
            out[i * w + j] = if i == 0 { v } else { rho * out[(i - 1) * w + j] + innov * v };
        }
    }
    out
}

fn root(cfg: &SynthConfig) -> u64 {
    named_seed(cfg.seed, "synth")
}

pub fn gen_predictor(cfg: &SynthConfig) -> Result<FieldSeries> {
    cfg.validate()?;
    let power = cfg.zonal_power();
    let mut values = Vec::with_capacity(cfg.n_samples * cfg.n_lat * cfg.n_lon);
    for n in 0..cfg.n_samples {
        values.extend(spectral_field(cfg, &power, &mut stream(root(cfg), &[1, n as u64])));
    }
    Ok(FieldSeries::new(cfg.grid()?, cfg.n_samples, values, false)?.with_variable("predictor", "1"))
}

/// `offset + scale · smooth(x)`.
pub fn apply_operator(cfg: &SynthConfig, x: &[f64]) -> Vec<f64> {
    let off = cfg.offset();
    smooth(x, cfg.n_lat, cfg.n_lon, cfg.operator_smoothing)
        .iter()
        .zip(&off)
        .map(|(v, o)| o + cfg.operator_scale * v)
        .collect()
}

/// Correlated noise η with per-point std σ_n(g).
fn correlated_noise(cfg: &SynthConfig, rng: &mut StreamRng) -> Vec<f64> {
    let (h, w) = (cfg.n_lat, cfg.n_lon);
    let mut white = vec![0.0; h * w];
    fill_normal(rng, &mut white);
    let s = smooth(&white, h, w, cfg.noise_smoothing);
    let norm = noise_norm(cfg);
    let sd = cfg.noise_std();
    s.iter().zip(&norm).zip(&sd).map(|((v, d), sd)| sd * v / d).collect()
}

/// Per-point std of the smoothed white noise, √diag(L Lᵀ).
fn noise_norm(cfg: &SynthConfig) -> Vec<f64> {
    let l = smoothing_matrix(cfg.n_lat, cfg.n_lon, cfg.noise_smoothing);
    let g = cfg.n_lat * cfg.n_lon;
    (0..g).map(|i| l[i * g..(i + 1) * g].iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
}

pub fn gen_target(x: &FieldSeries, cfg: &SynthConfig) -> Result<(FieldSeries, OracleAnswer)> {
    cfg.validate()?;
    cfg.grid()?.ensure_same(x.grid())?;
    let g = x.grid().len();
    let mut mean = Vec::with_capacity(x.values().len());
    let mut y = Vec::with_capacity(x.values().len());
    for n in 0..x.n_samples() {
        let m = apply_operator(cfg, x.sample(n));
        let eta = correlated_noise(cfg, &mut stream(root(cfg), &[2, n as u64]));
        y.extend(m.iter().zip(&eta).map(|(a, b)| a + b));
        mean.extend(m);
    }
    debug_assert_eq!(y.len(), x.n_samples() * g);
    let grid = x.grid().clone();
    let target = FieldSeries::new(grid.clone(), x.n_samples(), y, false)?.with_variable("target", "m s-1");
    let oracle = OracleAnswer {
        conditional_mean: FieldSeries::new(grid, x.n_samples(), mean, false)?.with_variable("oracle_mean", "m s-1"),
        noise_std: cfg.noise_std(),
        noise_smoothing: cfg.noise_smoothing,
        predictor_spectrum: cfg.predictor_spectrum()?,
    };
    Ok((target, oracle))
}

/// Forecast ensembles for lead weeks `1..=lead_weeks`: each member is the
/// truth plus a shared error and a member-specific perturbation of equal std,
/// so the truth is statistically exchangeable with the members.
pub fn gen_forecast_ensemble(
    x_truth: &FieldSeries,
    members: usize,
    lead_weeks: usize,
    cfg: &SynthConfig,
) -> Result<Vec<EnsembleSeries>> {
    cfg.validate()?;
    if members < 2 {
        return Err(Error::InvalidConfig("forecast ensembles need at least two members".into()));
    }
    cfg.grid()?.ensure_same(x_truth.grid())?;
    let power = cfg.zonal_power();
    let g = x_truth.grid().len();
    let mut out = Vec::with_capacity(lead_weeks);
    for week in 1..=lead_weeks {
        let sd = cfg.perturbation_std_at(week);
        let mut values = Vec::with_capacity(x_truth.n_samples() * members * g);
        for n in 0..x_truth.n_samples() {
            let mut rng = stream(root(cfg), &[3, week as u64, n as u64]);
            let shared = spectral_field(cfg, &power, &mut rng);
            for _ in 0..members {
                let own = spectral_field(cfg, &power, &mut rng);
                values.extend(
                    x_truth
                        .sample(n)
                        .iter()
                        .zip(&shared)
                        .zip(&own)
                        .map(|((t, s), o)| t + sd * (s + o)),
                );
            }
        }
        out.push(
            EnsembleSeries::new(x_truth.grid().clone(), x_truth.n_samples(), members, values, false)?
                .with_variable("predictor", "1"),
        );
    }
    Ok(out)
}

/// Raw benchmark hindcast of the target for one lead week: the true operator
/// applied to every forecast member plus independent noise, then biased and
/// with anomalies scaled about the climatological offset.
pub fn gen_benchmark_ensemble(forecast: &EnsembleSeries, week: usize, cfg: &SynthConfig) -> Result<EnsembleSeries> {
    cfg.validate()?;
    cfg.grid()?.ensure_same(forecast.grid())?;
    let off = cfg.offset();
    let mut values = Vec::with_capacity(forecast.values().len());
    for n in 0..forecast.n_samples() {
        let mut rng = stream(root(cfg), &[4, week as u64, n as u64]);
        for m in 0..forecast.n_members() {
            let mean = apply_operator(cfg, forecast.member(n, m));
            let eta = correlated_noise(cfg, &mut rng);
            values.extend(
                mean.iter()
                    .zip(&eta)
                    .zip(&off)
                    .map(|((a, e), o)| o + cfg.benchmark_bias + cfg.benchmark_spread * (a + e - o)),
            );
        }
    }
    Ok(EnsembleSeries::new(forecast.grid().clone(), forecast.n_samples(), forecast.n_members(), values, false)?
        .with_variable("target", "m s-1"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> SynthConfig {
        SynthConfig {
            n_samples: n,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = small(20);
        assert_eq!(gen_predictor(&cfg).unwrap().values(), gen_predictor(&cfg).unwrap().values());
        let other = SynthConfig { seed: 43, ..cfg.clone() };
        assert_ne!(gen_predictor(&cfg).unwrap().values(), gen_predictor(&other).unwrap().values());
    }

    #[test]
    fn spectral_slope_is_recovered() {
        let cfg = small(500);
        let x = gen_predictor(&cfg).unwrap();
        let (h, w) = (cfg.n_lat, cfg.n_lon);
        // Direct-DFT periodogram averaged over samples and rows.
        let mut s = vec![0.0; 7];
        for n in 0..x.n_samples() {
            let f = x.sample(n);
            for i in 0..h {
                for (k, sk) in s.iter_mut().enumerate().skip(1) {
                    let (mut re, mut im) = (0.0, 0.0);
                    for j in 0..w {
                        let ph = 2.0 * std::f64::consts::PI * (k * j) as f64 / w as f64;
                        re += f[i * w + j] * ph.cos();
                        im -= f[i * w + j] * ph.sin();
                    }
                    *sk += re * re + im * im;
                }
            }
        }
        let pts: Vec<(f64, f64)> = (1..=6).map(|k| ((k as f64).ln(), s[k].ln())).collect();
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / 6.0;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / 6.0;
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((slope + cfg.gamma).abs() < 0.3, "slope {slope}");
    }

    #[test]
    fn spatial_mean_near_zero() {
        let cfg = small(200);
        let x = gen_predictor(&cfg).unwrap();
        let n = x.values().len() as f64;
        let mean = x.values().iter().sum::<f64>() / n;
        assert!(mean.abs() < 3.0 / n.sqrt(), "{mean}");
    }

    #[test]
    fn unit_variance_per_point() {
        let cfg = small(2000);
        let x = gen_predictor(&cfg).unwrap();
        let g = x.grid().len();
        let var: f64 = x.values().iter().map(|v| v * v).sum::<f64>() / x.values().len() as f64;
        assert!((var - 1.0).abs() < 0.05, "{var} over {g} points");
    }

    #[test]
    fn noiseless_target_equals_operator() {
        let cfg = SynthConfig {
            noise_std_north: 0.0,
            noise_std_south: 0.0,
            ..small(5)
        };
        let x = gen_predictor(&cfg).unwrap();
        let (y, oracle) = gen_target(&x, &cfg).unwrap();
        assert_eq!(y.values(), oracle.conditional_mean.values());
    }

    #[test]
    fn target_regression_and_noise_variance() {
        let cfg = small(600);
        let x = gen_predictor(&cfg).unwrap();
        let (y, oracle) = gen_target(&x, &cfg).unwrap();
        let g = x.grid().len();
        let n = x.n_samples();
        let sd = cfg.noise_std();
        let mut ratio = 0.0;
        for gi in 0..g {
            let a: Vec<f64> = (0..n).map(|i| oracle.conditional_mean.sample(i)[gi]).collect();
            let b: Vec<f64> = (0..n).map(|i| y.sample(i)[gi]).collect();
            let ma = a.iter().sum::<f64>() / n as f64;
            let mb = b.iter().sum::<f64>() / n as f64;
            let cov: f64 = a.iter().zip(&b).map(|(p, q)| (p - ma) * (q - mb)).sum();
            let var: f64 = a.iter().map(|p| (p - ma).powi(2)).sum();
            assert!((cov / var - 1.0).abs() < 0.2, "slope {} at {gi}", cov / var);
            let r: Vec<f64> = a.iter().zip(&b).map(|(p, q)| q - p).collect();
            let mr = r.iter().sum::<f64>() / n as f64;
            let vr = r.iter().map(|v| (v - mr).powi(2)).sum::<f64>() / (n - 1) as f64;
            ratio += vr / (sd[gi] * sd[gi]) / g as f64;
        }
        assert!((ratio - 1.0).abs() < 0.05, "noise var ratio {ratio}");
    }

    #[test]
    fn noise_covariance_diagonal_matches_std() {
        let cfg = small(3);
        let x = gen_predictor(&cfg).unwrap();
        let (_, oracle) = gen_target(&x, &cfg).unwrap();
        let cov = oracle.noise_covariance();
        let g = x.grid().len();
        for i in 0..g {
            assert!((cov[i * g + i] - oracle.noise_std[i].powi(2)).abs() < 1e-12);
            assert!((cov[i * g + (i + 1) % g] - cov[((i + 1) % g) * g + i]).abs() < 1e-12);
        }
        // PSD: random quadratic forms are non-negative.
        let mut rng = stream(3, &[]);
        for _ in 0..10 {
            let v = crate::rng::normals(&mut rng, g);
            let mut q = 0.0;
            for i in 0..g {
                for j in 0..g {
                    q += v[i] * cov[i * g + j] * v[j];
                }
            }
            assert!(q >= -1e-12);
        }
    }

    #[test]
    fn forecast_spread_grows_with_lead() {
        let cfg = small(60);
        let x = gen_predictor(&cfg).unwrap();
        let ens = gen_forecast_ensemble(&x, 10, 6, &cfg).unwrap();
        assert_eq!(ens.len(), 6);
        let mut prev = 0.0;
        for e in &ens {
            assert_eq!(e.n_members(), 10);
            let mut ss = 0.0;
            let mut cnt = 0.0;
            for n in 0..e.n_samples() {
                for m in 0..e.n_members() {
                    for (a, b) in e.member(n, m).iter().zip(x.sample(n)) {
                        ss += (a - b).powi(2);
                        cnt += 1.0;
                    }
                }
            }
            let sd = (ss / cnt).sqrt();
            assert!(sd > prev);
            prev = sd;
        }
    }

    #[test]
    fn splits_partition_samples() {
        let s = small(800).splits();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (560, 120, 120));
        assert_eq!(s.test.last(), Some(&799));
    }

    #[test]
    fn predictor_spectrum_is_normalised() {
        let cfg = small(1);
        let p = cfg.zonal_power();
        assert_eq!(p.len(), 11);
        assert_eq!(p[0], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.windows(2).skip(1).all(|w| w[1] < w[0]));
    }
}
