use crate::error::{Error, Result};
use crate::fields::{EnsembleSeries, FieldSeries, GridSpec};
use crate::metrics::Weighting;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Orthonormal spatial modes of a reference field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EofBasis {
    pub grid: GridSpec,
    /// K×G row-major; row k is EOF_k.
    pub modes: Vec<f64>,
    pub singular_values: Vec<f64>,
    pub explained_variance: Vec<f64>,
    /// Temporal mean of the reference, used for centering.
    pub mean: Vec<f64>,
    /// Per-point weights applied to anomalies before the factorisation.
    pub weights: Vec<f64>,
    pub weighting: Weighting,
}

impl EofBasis {
    pub fn n_modes(&self) -> usize {
        self.singular_values.len()
    }

    pub fn mode(&self, k: usize) -> &[f64] {
        let g = self.grid.len();
        &self.modes[k * g..(k + 1) * g]
    }
}

/// Principal-component coefficients, one row of K per (sample, member).
#[derive(Debug, Clone, PartialEq)]
pub struct Pcs {
    pub n_samples: usize,
    pub n_members: usize,
    pub k: usize,
    pub coefficients: Vec<f64>,
    standardized: bool,
}

impl Pcs {
    pub fn row(&self, n: usize, m: usize) -> &[f64] {
        let i = n * self.n_members + m;
        &self.coefficients[i * self.k..(i + 1) * self.k]
    }
}

pub fn compute_eofs(reference: &FieldSeries) -> Result<EofBasis> {
    compute_eofs_weighted(reference, Weighting::Uniform)
}

/// EOFs of temporal-mean anomalies; `CosLat` scales anomalies by √cos φ first.
pub fn compute_eofs_weighted(reference: &FieldSeries, weighting: Weighting) -> Result<EofBasis> {
    let n = reference.n_samples();
    if n < 2 {
        return Err(Error::InvalidConfig("EOFs need at least two samples".into()));
    }
    let grid = reference.grid().clone();
    let g = grid.len();
    let weights: Vec<f64> = match weighting {
        Weighting::Uniform => vec![1.0; g],
        Weighting::CosLat => (0..g)
            .map(|i| grid.lats()[i / grid.n_lon()].to_radians().cos().max(0.0).sqrt())
            .collect(),
    };
    if weights.contains(&0.0) {
        return Err(Error::InvalidGrid("cos-latitude weight vanishes at a pole".into()));
    }
    let mut mean = vec![0.0; g];
    for s in 0..n {
        mean.iter_mut().zip(reference.sample(s)).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let a = DMatrix::from_fn(n, g, |s, gi| (reference.sample(s)[gi] - mean[gi]) * weights[gi]);
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::NonFinite("SVD did not converge".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let k = (n - 1).min(g);
    order.truncate(k);
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut modes = Vec::with_capacity(k * g);
    for &i in &order {
        let row: Vec<f64> = (0..g).map(|c| v_t[(i, c)]).collect();
        // Sign convention: largest-magnitude loading positive.
        let pivot = row.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        modes.extend(row.into_iter().map(|v| v * sign));
    }
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    let explained_variance = singular_values
        .iter()
        .map(|s| if total > 0.0 { s * s / total } else { 0.0 })
        .collect();
    Ok(EofBasis {
        grid,
        modes,
        singular_values,
        explained_variance,
        mean,
        weights,
        weighting,
    })
}

fn project_rows<'a>(rows: impl Iterator<Item = &'a [f64]>, basis: &EofBasis) -> Vec<f64> {
    let k = basis.n_modes();
    let mut out = Vec::new();
    let mut anom = vec![0.0; basis.grid.len()];
    for r in rows {
        for (i, a) in anom.iter_mut().enumerate() {
            *a = (r[i] - basis.mean[i]) * basis.weights[i];
        }
        for j in 0..k {
            out.push(basis.mode(j).iter().zip(&anom).map(|(e, a)| e * a).sum());
        }
    }
    out
}

/// PC_k = (anomaly w.r.t. the basis climatology) · EOF_k per sample.
pub fn project(fields: &FieldSeries, basis: &EofBasis) -> Result<Pcs> {
    basis.grid.ensure_same(fields.grid())?;
    Ok(Pcs {
        n_samples: fields.n_samples(),
        n_members: 1,
        k: basis.n_modes(),
        coefficients: project_rows((0..fields.n_samples()).map(|n| fields.sample(n)), basis),
        standardized: fields.is_standardized(),
    })
}

/// Projects every member independently.
pub fn project_ensemble(ens: &EnsembleSeries, basis: &EofBasis) -> Result<Pcs> {
    basis.grid.ensure_same(ens.grid())?;
    let m = ens.n_members();
    Ok(Pcs {
        n_samples: ens.n_samples(),
        n_members: m,
        k: basis.n_modes(),
        coefficients: project_rows(
            (0..ens.n_samples()).flat_map(|n| (0..m).map(move |j| ens.member(n, j))),
            basis,
        ),
        standardized: ens.is_standardized(),
    })
}

fn reconstruct_values(pcs: &Pcs, basis: &EofBasis, k_prime: usize) -> Result<Vec<f64>> {
    if k_prime == 0 || k_prime > basis.n_modes() || k_prime > pcs.k {
        return Err(Error::OutOfRange(format!(
            "K' = {k_prime} outside 1..={}",
            basis.n_modes().min(pcs.k)
        )));
    }
    let g = basis.grid.len();
    let rows = pcs.n_samples * pcs.n_members;
    let mut out = Vec::with_capacity(rows * g);
    let mut acc = vec![0.0; g];
    for r in 0..rows {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for j in 0..k_prime {
            let c = pcs.coefficients[r * pcs.k + j];
            acc.iter_mut().zip(basis.mode(j)).for_each(|(a, e)| *a += c * e);
        }
        out.extend(acc.iter().enumerate().map(|(i, a)| a / basis.weights[i] + basis.mean[i]));
    }
    Ok(out)
}

/// Σ_{k ≤ K'} PC_k·EOF_k plus the basis climatology.
pub fn reconstruct(pcs: &Pcs, basis: &EofBasis, k_prime: usize) -> Result<EnsembleSeries> {
    let v = reconstruct_values(pcs, basis, k_prime)?;
    EnsembleSeries::new(basis.grid.clone(), pcs.n_samples, pcs.n_members, v, pcs.standardized)
}

pub fn reconstruct_field(pcs: &Pcs, basis: &EofBasis, k_prime: usize) -> Result<FieldSeries> {
    if pcs.n_members != 1 {
        return Err(Error::InvalidConfig("coefficients come from an ensemble; use reconstruct".into()));
    }
    let v = reconstruct_values(pcs, basis, k_prime)?;
    FieldSeries::new(basis.grid.clone(), pcs.n_samples, v, pcs.standardized)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EofSkillRow {
    pub k_prime: usize,
    pub msss: f64,
    pub crpss: f64,
    pub ssr: f64,
}

/// Domain-aggregated scores of the reconstructed ensembles.
fn aggregate(ens: &EnsembleSeries, obs: &FieldSeries, fair: bool) -> Result<(f64, f64, f64)> {
    let mse = crate::metrics::mse_ensemble_mean(ens, obs)?;
    let crps = if fair {
        crate::metrics::crps_ensemble_fair(ens, obs)?
    } else {
        crate::metrics::crps_ensemble(ens, obs)?
    };
    let var = ensemble_variance_mean(ens);
    Ok((mse.mean, crps.mean, var))
}

/// Mean over samples and grid points of the unbiased member variance.
fn ensemble_variance_mean(ens: &EnsembleSeries) -> f64 {
    let m = ens.n_members();
    if m < 2 {
        return 0.0;
    }
    let g = ens.grid().len();
    let mut total = 0.0;
    let mut buf = Vec::with_capacity(m);
    for n in 0..ens.n_samples() {
        for gi in 0..g {
            buf.clear();
            buf.extend((0..m).map(|j| ens.member(n, j)[gi]));
            buf.sort_by(f64::total_cmp);
            let mean = buf.iter().sum::<f64>() / m as f64;
            total += buf.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        }
    }
    total / (ens.n_samples() * g) as f64
}

/// For each K', reconstructs model, benchmark and observation with K' modes
/// and reports MSSS and CRPSS of the model against the benchmark and the
/// model's SSR. Skill scores use domain-mean scores and SSR pools spread and
/// error over the domain, so near-zero local errors at small K' cannot
/// dominate.
pub fn eof_skill_curve(
    model: &EnsembleSeries,
    benchmark: &EnsembleSeries,
    obs: &FieldSeries,
    basis: &EofBasis,
    k_primes: &[usize],
    fair_crps: bool,
) -> Result<Vec<EofSkillRow>> {
    if model.n_members() < 2 {
        return Err(Error::InvalidConfig("SSR needs at least two model members".into()));
    }
    let pm = project_ensemble(model, basis)?;
    let pb = project_ensemble(benchmark, basis)?;
    let po = project(obs, basis)?;
    let mut rows = Vec::with_capacity(k_primes.len());
    for &k in k_primes {
        let m = reconstruct(&pm, basis, k)?;
        let b = reconstruct(&pb, basis, k)?;
        let o = reconstruct_field(&po, basis, k)?;
        let (mse_m, crps_m, var_m) = aggregate(&m, &o, fair_crps)?;
        let (mse_b, crps_b, _) = aggregate(&b, &o, fair_crps)?;
        if mse_b == 0.0 || crps_b == 0.0 {
            return Err(Error::ZeroReference(0));
        }
        if mse_m == 0.0 {
            return Err(Error::DegeneratePerfectForecast(0));
        }
        let mm = model.n_members() as f64;
        rows.push(EofSkillRow {
            k_prime: k,
            msss: 1.0 - mse_m / mse_b,
            crpss: 1.0 - crps_m / crps_b,
            ssr: ((mm + 1.0) / mm * var_m).sqrt() / mse_m.sqrt(),
        });
    }
    Ok(rows)
}

/// `K_prime,msss,crpss,ssr` rows.
pub fn eof_curve_csv(rows: &[EofSkillRow]) -> String {
    let mut s = String::from("K_prime,msss,crpss,ssr\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.k_prime, r.msss, r.crpss, r.ssr);
    }
    s
}
