//! Grid-wise verification scores, skill scores, relative differences and
//! paired bootstrap significance.
//!
//! Members are sorted (by `total_cmp`) before any reduction, so every score
//! is bit-identical under member permutation.

use crate::error::{Error, Result};
use crate::fields::{EnsembleSeries, FieldSeries, GridSpec};
use crate::rng::{named_seed, stream};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    #[default]
    Uniform,
    CosLat,
}

/// Per-grid-point values of one score with their spatial mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub name: String,
    pub model: Option<String>,
    pub benchmark: Option<String>,
    pub lead_week: Option<usize>,
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub mean: f64,
    pub weighting: Weighting,
}

fn spatial_mean(grid: &GridSpec, values: &[f64], weighting: Weighting) -> f64 {
    match weighting {
        Weighting::Uniform => values.iter().sum::<f64>() / values.len() as f64,
        Weighting::CosLat => {
            let w = grid.n_lon();
            let (mut num, mut den) = (0.0, 0.0);
            for (i, v) in values.iter().enumerate() {
                let c = grid.lats()[i / w].to_radians().cos();
                num += c * v;
                den += c;
            }
            num / den
        }
    }
}

impl ScoreTable {
    pub fn new(name: &str, grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(crate::error::shape_mismatch(&[grid.len()], &[values.len()]));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{name} at grid point {i}")));
        }
        let mean = spatial_mean(&grid, &values, Weighting::Uniform);
        Ok(Self {
            name: name.to_string(),
            model: None,
            benchmark: None,
            lead_week: None,
            grid,
            values,
            mean,
            weighting: Weighting::Uniform,
        })
    }

    pub fn with_weighting(mut self, weighting: Weighting) -> Self {
        self.weighting = weighting;
        self.mean = spatial_mean(&self.grid, &self.values, weighting);
        self
    }

    pub fn with_meta(mut self, model: Option<&str>, benchmark: Option<&str>, lead_week: Option<usize>) -> Self {
        self.model = model.map(str::to_string);
        self.benchmark = benchmark.map(str::to_string);
        self.lead_week = lead_week;
        self
    }

    /// `lat,lon,value` rows in storage order.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lat,lon,value\n");
        let w = self.grid.n_lon();
        for (i, v) in self.values.iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", self.grid.lats()[i / w], self.grid.lons()[i % w], v);
        }
        s
    }

    fn derived(&self, name: &str, values: Vec<f64>) -> Result<Self> {
        let mut t = ScoreTable::new(name, self.grid.clone(), values)?.with_weighting(self.weighting);
        t.model = self.model.clone();
        t.lead_week = self.lead_week;
        Ok(t)
    }
}

fn check_pair(ens: &EnsembleSeries, obs: &FieldSeries) -> Result<()> {
    ens.grid().ensure_same(obs.grid())?;
    if ens.n_samples() != obs.n_samples() {
        return Err(crate::error::shape_mismatch(&[obs.n_samples()], &[ens.n_samples()]));
    }
    if ens.n_samples() == 0 {
        return Err(Error::InvalidConfig("nothing to verify: zero samples".into()));
    }
    Ok(())
}

/// Members at one (sample, grid point), sorted.
fn sorted_members(ens: &EnsembleSeries, n: usize, gi: usize, buf: &mut Vec<f64>) {
    buf.clear();
    buf.extend((0..ens.n_members()).map(|m| ens.member(n, m)[gi]));
    buf.sort_by(f64::total_cmp);
}

fn mean_of(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn unbiased_var(xs: &[f64]) -> f64 {
    let m = mean_of(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// CRPS of a sorted ensemble against `y`. The fair form uses M(M−1) in the
/// spread term.
fn crps_sorted(xs: &[f64], y: f64, fair: bool) -> f64 {
    let m = xs.len() as f64;
    let abs_err = xs.iter().map(|x| (x - y).abs()).sum::<f64>() / m;
    // ΣΣ|x_i − x_j| = 2 Σ_i (2i − M − 1) x_(i), 1-based ranks
    let pair: f64 = xs
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * (i + 1) as f64 - m - 1.0) * x)
        .sum::<f64>()
        * 2.0;
    if !fair {
        return (abs_err - pair / (2.0 * m * m)).max(0.0);
    }
    if xs.len() < 2 {
        return abs_err;
    }
    abs_err - pair / (2.0 * m * (m - 1.0))
}

/// Scores that can be bootstrapped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Mse,
    Crps,
    FairCrps,
    /// Positively oriented: larger spread-skill counts as improvement.
    Ssr,
}

impl ScoreKind {
    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Mse => "mse",
            ScoreKind::Crps => "crps",
            ScoreKind::FairCrps => "fair_crps",
            ScoreKind::Ssr => "ssr",
        }
    }

    pub fn negatively_oriented(self) -> bool {
        !matches!(self, ScoreKind::Ssr)
    }
}

/// Per-(sample, grid) contributions from which a score is aggregated over
/// any subset of samples.
struct Contributions {
    kind: ScoreKind,
    n: usize,
    g: usize,
    members: usize,
    /// Squared error of the ensemble mean, or CRPS.
    a: Vec<f64>,
    /// Unbiased ensemble variance (SSR only).
    b: Vec<f64>,
}

impl Contributions {
    fn compute(ens: &EnsembleSeries, obs: &FieldSeries, kind: ScoreKind) -> Result<Self> {
        check_pair(ens, obs)?;
        if kind == ScoreKind::Ssr && ens.n_members() < 2 {
            return Err(Error::InvalidConfig("SSR needs at least two members".into()));
        }
        let (n, g) = (ens.n_samples(), ens.grid().len());
        let mut a = vec![0.0; n * g];
        let mut b = if kind == ScoreKind::Ssr { vec![0.0; n * g] } else { Vec::new() };
        let mut buf = Vec::with_capacity(ens.n_members());
        for s in 0..n {
            let o = obs.sample(s);
            for gi in 0..g {
                sorted_members(ens, s, gi, &mut buf);
                let k = s * g + gi;
                a[k] = match kind {
                    ScoreKind::Crps => crps_sorted(&buf, o[gi], false),
                    ScoreKind::FairCrps => crps_sorted(&buf, o[gi], true),
                    ScoreKind::Mse | ScoreKind::Ssr => (mean_of(&buf) - o[gi]).powi(2),
                };
                if kind == ScoreKind::Ssr {
                    b[k] = unbiased_var(&buf);
                }
            }
        }
        Ok(Self {
            kind,
            n,
            g,
            members: ens.n_members(),
            a,
            b,
        })
    }

    /// Per-grid score over the given sample indices (with repetition).
    fn score(&self, ids: &[usize]) -> Result<Vec<f64>> {
        let mut sa = vec![0.0; self.g];
        let mut sb = vec![0.0; self.g];
        for &s in ids {
            let row = &self.a[s * self.g..(s + 1) * self.g];
            sa.iter_mut().zip(row).for_each(|(acc, v)| *acc += v);
            if self.kind == ScoreKind::Ssr {
                let row = &self.b[s * self.g..(s + 1) * self.g];
                sb.iter_mut().zip(row).for_each(|(acc, v)| *acc += v);
            }
        }
        let k = ids.len() as f64;
        if self.kind != ScoreKind::Ssr {
            return Ok(sa.into_iter().map(|v| v / k).collect());
        }
        let corr = (self.members as f64 + 1.0) / self.members as f64;
        sa.iter()
            .zip(&sb)
            .enumerate()
            .map(|(gi, (e, v))| {
                let rmse = (e / k).sqrt();
                if rmse == 0.0 {
                    return Err(Error::DegeneratePerfectForecast(gi));
                }
                Ok((corr * v / k).sqrt() / rmse)
            })
            .collect()
    }

    fn all(&self) -> Vec<usize> {
        (0..self.n).collect()
    }
}

fn table(kind: ScoreKind, ens: &EnsembleSeries, obs: &FieldSeries) -> Result<ScoreTable> {
    let c = Contributions::compute(ens, obs, kind)?;
    ScoreTable::new(kind.name(), ens.grid().clone(), c.score(&c.all())?)
}

/// Mean over samples of (ensemble mean − obs)² per grid point.
pub fn mse_ensemble_mean(ens: &EnsembleSeries, obs: &FieldSeries) -> Result<ScoreTable> {
    table(ScoreKind::Mse, ens, obs)
}

/// Empirical CRPS, `(1/M)Σ|x_i − y| − (1/2M²)ΣΣ|x_i − x_j|`, averaged over samples.
pub fn crps_ensemble(ens: &EnsembleSeries, obs: &FieldSeries) -> Result<ScoreTable> {
    table(ScoreKind::Crps, ens, obs)
}

/// Fair CRPS with a `1/(2M(M−1))` spread term.
pub fn crps_ensemble_fair(ens: &EnsembleSeries, obs: &FieldSeries) -> Result<ScoreTable> {
    table(ScoreKind::FairCrps, ens, obs)
}

/// `sqrt((M+1)/M · mean unbiased variance) / RMSE(ensemble mean)` per grid point.
pub fn ssr(ens: &EnsembleSeries, obs: &FieldSeries) -> Result<ScoreTable> {
    table(ScoreKind::Ssr, ens, obs)
}

fn check_geometry(a: &ScoreTable, b: &ScoreTable) -> Result<()> {
    a.grid.ensure_same(&b.grid)?;
    if a.values.len() != b.values.len() {
        return Err(crate::error::shape_mismatch(&[b.values.len()], &[a.values.len()]));
    }
    Ok(())
}

/// `1 − model/reference` per grid point (MSSS from MSE, CRPSS from CRPS).
pub fn skill_score(model: &ScoreTable, reference: &ScoreTable) -> Result<ScoreTable> {
    check_geometry(model, reference)?;
    if model.name != reference.name {
        return Err(Error::InvalidConfig(format!(
            "cannot compare score '{}' with '{}'",
            model.name, reference.name
        )));
    }
    if let Some(i) = reference.values.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::ZeroReference(i));
    }
    let name = match model.name.as_str() {
        "mse" => "msss".to_string(),
        "crps" | "fair_crps" => "crpss".to_string(),
        other => format!("{other}_skill"),
    };
    let values = model.values.iter().zip(&reference.values).map(|(m, r)| 1.0 - m / r).collect();
    let mut t = model.derived(&name, values)?;
    t.benchmark = reference.model.clone();
    Ok(t)
}

/// `(s − b)/b × 100` per grid point.
pub fn relative_difference(score_s: &ScoreTable, score_b: &ScoreTable) -> Result<ScoreTable> {
    check_geometry(score_s, score_b)?;
    if let Some(i) = score_b.values.iter().position(|v| *v == 0.0) {
        return Err(Error::ZeroReference(i));
    }
    let values = score_s
        .values
        .iter()
        .zip(&score_b.values)
        .map(|(s, b)| (s - b) / b * 100.0)
        .collect();
    let mut t = score_s.derived(&format!("delta_r_{}", score_s.name), values)?;
    t.benchmark = score_b.model.clone();
    Ok(t)
}

/// Significance markers for α = 0.01, 0.05, 0.1.
pub const SIGNIFICANCE_LEVELS: [(f64, &str); 3] = [(0.01, "+"), (0.05, "Y"), (0.1, "I")];

/// Bootstrap summary at one location (a grid point or the domain mean).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapPoint {
    pub median: f64,
    /// Proportion of replicates showing improvement (ties count half).
    pub p_value: f64,
    /// Every replicate was an exact tie.
    pub degenerate: bool,
    /// Marker of the smallest α at which the difference is significant in
    /// either direction; empty when not significant or degenerate.
    pub flag: String,
}

impl BootstrapPoint {
    fn from_deltas(deltas: &mut [f64], improves: impl Fn(f64) -> bool) -> Self {
        let r = deltas.len() as f64;
        let ties = deltas.iter().filter(|d| **d == 0.0).count();
        let better = deltas.iter().filter(|d| improves(**d)).count();
        let degenerate = ties == deltas.len();
        let p_value = if degenerate { 0.0 } else { (better as f64 + 0.5 * ties as f64) / r };
        deltas.sort_by(f64::total_cmp);
        let k = deltas.len();
        let median = if k % 2 == 1 {
            deltas[k / 2]
        } else {
            0.5 * (deltas[k / 2 - 1] + deltas[k / 2])
        };
        let tail = p_value.min(1.0 - p_value);
        let flag = if degenerate {
            String::new()
        } else {
            SIGNIFICANCE_LEVELS
                .iter()
                .find(|(a, _)| tail <= *a)
                .map(|(_, f)| f.to_string())
                .unwrap_or_default()
        };
        Self {
            median,
            p_value,
            degenerate,
            flag,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub score: ScoreKind,
    pub replicates: usize,
    pub seed: u64,
    pub grid: GridSpec,
    /// Δ_r of the spatial-mean score per replicate.
    pub domain_deltas: Vec<f64>,
    pub domain: BootstrapPoint,
    pub points: Vec<BootstrapPoint>,
}

impl BootstrapResult {
    /// `lat,lon,value,p_value,sig` with the median Δ_r as value.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lat,lon,value,p_value,sig\n");
        let w = self.grid.n_lon();
        for (i, p) in self.points.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                self.grid.lats()[i / w],
                self.grid.lons()[i % w],
                p.median,
                p.p_value,
                p.flag
            );
        }
        s
    }

    pub fn any_degenerate(&self) -> bool {
        self.domain.degenerate || self.points.iter().any(|p| p.degenerate)
    }
}

/// Paired bootstrap of Δ_r between `ens_s` and the baseline `ens_b`. Each
/// replicate resamples the N sample indices with replacement from its own
/// stream, identically for both ensembles.
pub fn bootstrap_significance(
    ens_s: &EnsembleSeries,
    ens_b: &EnsembleSeries,
    obs: &FieldSeries,
    kind: ScoreKind,
    replicates: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    if replicates < 1 {
        return Err(Error::InvalidConfig("need at least one bootstrap replicate".into()));
    }
    let cs = Contributions::compute(ens_s, obs, kind)?;
    let cb = Contributions::compute(ens_b, obs, kind)?;
    let (n, g) = (cs.n, cs.g);
    let root = named_seed(seed, "bootstrap");
    let per_rep: Vec<Result<(Vec<f64>, f64)>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(root, &[r as u64]);
            let ids: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let s = cs.score(&ids)?;
            let b = cb.score(&ids)?;
            let mut d = Vec::with_capacity(g);
            for (gi, (x, y)) in s.iter().zip(&b).enumerate() {
                if *y == 0.0 {
                    return Err(Error::ZeroReference(gi));
                }
                d.push((x - y) / y * 100.0);
            }
            let (ms, mb) = (mean_of(&s), mean_of(&b));
            if mb == 0.0 {
                return Err(Error::ZeroReference(0));
            }
            Ok((d, (ms - mb) / mb * 100.0))
        })
        .collect();
    let mut grid_deltas = vec![Vec::with_capacity(replicates); g];
    let mut domain_deltas = Vec::with_capacity(replicates);
    for rep in per_rep {
        let (d, dm) = rep?;
        for (col, v) in grid_deltas.iter_mut().zip(d) {
            col.push(v);
        }
        domain_deltas.push(dm);
    }
    let neg = kind.negatively_oriented();
    let improves = move |d: f64| if neg { d < 0.0 } else { d > 0.0 };
    let points = grid_deltas
        .iter_mut()
        .map(|col| BootstrapPoint::from_deltas(col, improves))
        .collect();
    let domain = BootstrapPoint::from_deltas(&mut domain_deltas.clone(), improves);
    Ok(BootstrapResult {
        score: kind,
        replicates,
        seed,
        grid: ens_s.grid().clone(),
        domain_deltas,
        domain,
        points,
    })
}
