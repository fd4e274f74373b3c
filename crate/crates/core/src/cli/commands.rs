//! Pipeline stages. Each reads and writes artifacts under the run's output
//! directory only, so any stage can be rerun on its own.

use super::RunConfig;
use crate::ensemble::{generate_ensemble, mva_calibrate, GenerationPlan};
use crate::error::{Error, Result};
use crate::fields::{
    fit_climatology, load_ensemble, load_field, save_ensemble, save_field, standardize, standardize_ensemble,
    Climatology, EnsembleSeries, FieldSeries,
};
use crate::metrics::{
    bootstrap_significance, crps_ensemble, crps_ensemble_fair, mse_ensemble_mean, relative_difference,
    skill_score, ssr, ScoreKind, ScoreTable, Weighting,
};
use crate::models::{load_bundle, save_bundle, train, MechanismKind, TrainingData};
use crate::rng::{derive_seed, named_seed};
use crate::spatial::{
    compute_eofs_weighted, eof_curve_csv, eof_skill_curve, spectrum_csv, zonal_spectrum, zonal_spectrum_ensemble,
};
use crate::synth::{gen_benchmark_ensemble, gen_forecast_ensemble, gen_predictor, gen_target, Splits};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

/// Where each artifact of a run lives.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    fn dir(&self, name: &str) -> Result<PathBuf> {
        let d = self.root.join(name);
        fs::create_dir_all(&d)?;
        Ok(d)
    }

    fn input(&self, rel: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if !p.exists() {
            return Err(Error::MissingInput(p));
        }
        Ok(p)
    }

    pub fn predictor(&self) -> PathBuf {
        self.root.join("synth/x.gfld")
    }

    pub fn target(&self) -> PathBuf {
        self.root.join("synth/y.gfld")
    }

    pub fn splits(&self) -> PathBuf {
        self.root.join("synth/splits.json")
    }

    pub fn forecast(&self, week: usize) -> PathBuf {
        self.root.join(format!("synth/forecast_w{week}.gfld"))
    }

    pub fn raw_benchmark(&self, week: usize) -> PathBuf {
        self.root.join(format!("synth/benchmark_w{week}.gfld"))
    }

    pub fn model(&self, kind: MechanismKind) -> PathBuf {
        self.root.join(format!("models/{kind}.json"))
    }

    pub fn ensemble(&self, name: &str, week: usize) -> PathBuf {
        self.root.join(format!("ensembles/{name}_w{week}.gfld"))
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.json")
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(v)? + "\n"))
}

fn read_splits(layout: &Layout) -> Result<Splits> {
    let p = layout.input("synth/splits.json")?;
    Ok(serde_json::from_str(&fs::read_to_string(p)?)?)
}

fn load(path: PathBuf) -> Result<FieldSeries> {
    if !path.exists() {
        return Err(Error::MissingInput(path));
    }
    load_field(&path)
}

fn load_ens(path: PathBuf) -> Result<EnsembleSeries> {
    if !path.exists() {
        return Err(Error::MissingInput(path));
    }
    load_ensemble(&path)
}

fn non_test(splits: &Splits) -> Vec<usize> {
    splits.train.iter().chain(&splits.validation).copied().collect()
}

fn weighting(cfg: &RunConfig) -> Weighting {
    if cfg.cos_weight {
        Weighting::CosLat
    } else {
        Weighting::Uniform
    }
}

fn kind_index(kind: MechanismKind) -> u64 {
    MechanismKind::ALL.iter().position(|k| *k == kind).expect("listed") as u64
}

/// Predictor, target with oracle mean, forecast and raw benchmark ensembles
/// for every lead week, and the chronological splits.
pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out);
    let mut s = cfg.synth.clone();
    s.seed = cfg.seed;
    let x = gen_predictor(&s)?.with_variable("z500", "m");
    let (y, oracle) = gen_target(&x, &s)?;
    let y = y.with_variable("u100", "m/s");
    layout.dir("synth")?;
    save_field(&x, &layout.predictor())?;
    save_field(&y, &layout.target())?;
    save_field(
        &oracle.conditional_mean.with_variable("u100_conditional_mean", "m/s"),
        &layout.root.join("synth/oracle_mean.gfld"),
    )?;
    let forecasts = gen_forecast_ensemble(&x, s.members, s.lead_weeks, &s)?;
    for (w, fc) in forecasts.iter().enumerate() {
        let week = w + 1;
        save_ensemble(&fc.clone().with_variable("z500", "m"), &layout.forecast(week))?;
        let bench = gen_benchmark_ensemble(fc, week, &s)?.with_variable("u100", "m/s");
        save_ensemble(&bench, &layout.raw_benchmark(week))?;
    }
    write_json(&layout.splits(), &s.splits())?;
    write_json(&layout.root.join("synth/config.json"), &s)?;
    println!("synth: {} samples, {} members, {} lead weeks -> {}", s.n_samples, s.members, s.lead_weeks, layout.root.join("synth").display());
    Ok(())
}

/// Fits train-split climatologies, standardizes, trains the selected model
/// and writes its bundle and training curve.
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out);
    let splits = read_splits(&layout)?;
    let x = load(layout.predictor())?;
    let y = load(layout.target())?;
    let mut xc = fit_climatology(&x, &splits.train)?;
    xc.source_split = "x:train".into();
    let mut yc = fit_climatology(&y, &splits.train)?;
    yc.source_split = "y:train".into();
    let xs = standardize(&x, &xc)?;
    let ys = standardize(&y, &yc)?;
    let data = TrainingData::new(
        xs.select(&splits.train)?,
        ys.select(&splits.train)?,
        xs.select(&splits.validation)?,
        ys.select(&splits.validation)?,
    )?
    .with_climatologies(xc, yc);
    let (mech, train_cfg) = cfg.training_setup();
    let seed = derive_seed(cfg.seed, &[kind_index(cfg.model)]);
    let (bundle, log) = train(&mech, &data, &train_cfg, seed)?;
    layout.dir("models")?;
    save_bundle(&bundle, &layout.model(cfg.model))?;
    let mut curve = String::from("epoch,train_loss,validation_loss\n");
    for e in &log.epochs {
        let _ = writeln!(curve, "{},{},{}", e.epoch, e.train_loss, e.validation_loss);
    }
    write(&layout.root.join(format!("models/{}_curve.csv", cfg.model)), &curve)?;
    println!(
        "train: {} {} epochs (best {}, validation loss {})",
        cfg.model, log.epochs.len(), log.best_epoch, bundle.metadata.best_validation_loss
    );
    Ok(())
}

/// Downscales the test-split forecast members of one lead week into a P×M
/// ensemble in physical units.
pub fn cmd_generate(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out);
    let splits = read_splits(&layout)?;
    let model = load_bundle(&layout.input(&format!("models/{}.json", cfg.model))?)?;
    model.ensure_kind(cfg.model)?;
    let xc = model
        .x_climatology
        .as_ref()
        .ok_or_else(|| Error::ClimatologyMismatch("model carries no predictor climatology".into()))?;
    let fc = load_ens(layout.forecast(cfg.lead_week))?.select(&splits.test)?;
    let x = standardize_ensemble(&fc, xc)?;
    let seed = derive_seed(named_seed(cfg.seed, "sample"), &[kind_index(cfg.model), cfg.lead_week as u64]);
    let plan = GenerationPlan::new(cfg.model, seed).with_samples_per_member(cfg.samples_per_member());
    let ens = generate_ensemble(&model, &x, &plan)?.with_variable("u100", "m/s");
    layout.dir("ensembles")?;
    let path = layout.ensemble(cfg.model.as_str(), cfg.lead_week);
    save_ensemble(&ens, &path)?;
    println!("generate: {} members x {} samples -> {}", ens.n_members(), ens.n_samples(), path.display());
    Ok(())
}

/// Mean-variance adjustment of the raw benchmark: moments are fitted on the
/// non-test dates and applied to the test dates.
pub fn cmd_calibrate(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out);
    let splits = read_splits(&layout)?;
    let raw = load_ens(layout.raw_benchmark(cfg.lead_week))?;
    let y = load(layout.target())?;
    let fit_ids = non_test(&splits);
    let hc = Climatology::fit_ensemble(&raw, &fit_ids)?;
    let rf = fit_climatology(&y, &fit_ids)?;
    let cal = mva_calibrate(&raw.select(&splits.test)?, &hc, &rf)?;
    layout.dir("ensembles")?;
    let path = layout.ensemble("benchmark", cfg.lead_week);
    save_ensemble(&cal, &path)?;
    println!("calibrate: week {} benchmark -> {}", cfg.lead_week, path.display());
    Ok(())
}

fn observations(layout: &Layout) -> Result<FieldSeries> {
    let splits = read_splits(layout)?;
    load(layout.target())?.select(&splits.test)
}

fn physical(e: &EnsembleSeries, what: &str) -> Result<()> {
    if e.is_standardized() {
        return Err(Error::FlagMismatch(format!("{what} ensemble must be in physical units")));
    }
    Ok(())
}

fn model_and_benchmark(cfg: &RunConfig, layout: &Layout) -> Result<(EnsembleSeries, EnsembleSeries)> {
    let model = load_ens(layout.ensemble(cfg.model.as_str(), cfg.lead_week))?;
    let bench = load_ens(layout.ensemble("benchmark", cfg.lead_week))?;
    physical(&model, "model")?;
    physical(&bench, "benchmark")?;
    Ok((model, bench))
}

/// Domain-mean scores of one ensemble at one lead week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub model: String,
    pub lead_week: usize,
    pub metrics: BTreeMap<String, f64>,
}

fn score_set(
    cfg: &RunConfig,
    name: &str,
    ens: &EnsembleSeries,
    obs: &FieldSeries,
) -> Result<(ScoreTable, ScoreTable, ScoreTable)> {
    let w = weighting(cfg);
    let meta = |t: ScoreTable| t.with_weighting(w).with_meta(Some(name), None, Some(cfg.lead_week));
    let crps = if cfg.fair_crps {
        crps_ensemble_fair(ens, obs)?
    } else {
        crps_ensemble(ens, obs)?
    };
    Ok((meta(mse_ensemble_mean(ens, obs)?), meta(crps), meta(ssr(ens, obs)?)))
}

/// Grid-wise MSE, CRPS and SSR of the model and the calibrated benchmark,
/// MSSS/CRPSS and Δ_r against the benchmark.
pub fn cmd_verify(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out);
    let (model, bench) = model_and_benchmark(cfg, &layout)?;
    let obs = observations(&layout)?;
    let name = cfg.model.as_str();
    let (mse_m, crps_m, ssr_m) = score_set(cfg, name, &model, &obs)?;
    let (mse_b, crps_b, ssr_b) = score_set(cfg, "benchmark", &bench, &obs)?;
    let crps_label = if cfg.fair_crps { "fair_crps" } else { "crps" };
    let dir = layout.dir("scores")?;
    let week = cfg.lead_week;

    let mut model_tables = vec![
        ("mse".to_string(), mse_m.clone()),
        (crps_label.to_string(), crps_m.clone()),
        ("ssr".to_string(), ssr_m),
        ("msss".to_string(), skill_score(&mse_m, &mse_b)?),
        ("crpss".to_string(), skill_score(&crps_m, &crps_b)?),
    ];
    model_tables.push(("delta_r_mse".to_string(), relative_difference(&mse_m, &mse_b)?));
    model_tables.push((format!("delta_r_{crps_label}"), relative_difference(&crps_m, &crps_b)?));
    let bench_tables = [
        ("mse".to_string(), mse_b),
        (crps_label.to_string(), crps_b),
        ("ssr".to_string(), ssr_b),
    ];
    for (owner, tables) in [(name, &model_tables[..]), ("benchmark", &bench_tables[..])] {
        let mut metrics = BTreeMap::new();
        for (metric, t) in tables {
            write(&dir.join(format!("{owner}_w{week}_{metric}.csv")), &t.to_csv())?;
            metrics.insert(metric.clone(), t.mean);
        }
        write_json(
            &dir.join(format!("{owner}_w{week}.json")),
            &ScoreSummary {
                model: owner.to_string(),
                lead_week: week,
                metrics,
            },
        )?;
    }
    println!("verify: {name} week {week} -> {}", dir.display());
    Ok(())
}

/// Skill of K′-mode reconstructions against the benchmark, with EOFs of the
/// training-split target.
pub fn cmd_eof(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out);
    let splits = read_splits(&layout)?;
    let (model, bench) = model_and_benchmark(cfg, &layout)?;
    let y = load(layout.target())?;
    let basis = compute_eofs_weighted(&y.select(&splits.train)?, weighting(cfg))?;
    let k = basis.n_modes();
    let mut ks: Vec<usize> = cfg.eof_k_primes.iter().copied().filter(|v| *v <= k).collect();
    ks.push(k);
    ks.sort_unstable();
    ks.dedup();
    let rows = eof_skill_curve(&model, &bench, &y.select(&splits.test)?, &basis, &ks, cfg.fair_crps)?;
    let path = layout.root.join(format!("eof/{}_w{}.csv", cfg.model, cfg.lead_week));
    write(&path, &eof_curve_csv(&rows))?;
    let mut ev = String::from("mode,explained_variance\n");
    for (i, v) in basis.explained_variance.iter().enumerate() {
        let _ = writeln!(ev, "{},{}", i + 1, v);
    }
    write(&layout.root.join("eof/explained_variance.csv"), &ev)?;
    println!("eof: {} K' values -> {}", ks.len(), path.display());
    Ok(())
}

/// Zonal spectra and RESS of the model and benchmark ensembles against the
/// test-split target.
pub fn cmd_spectrum(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out);
    let (model, bench) = model_and_benchmark(cfg, &layout)?;
    let reference = zonal_spectrum(&observations(&layout)?, cfg.anomaly_spectrum)?;
    for (name, ens) in [(cfg.model.as_str(), &model), ("benchmark", &bench)] {
        let s = zonal_spectrum_ensemble(ens, cfg.anomaly_spectrum)?;
        let path = layout.root.join(format!("spectrum/{name}_w{}.csv", cfg.lead_week));
        write(&path, &spectrum_csv(&s, &reference)?)?;
    }
    println!("spectrum: {} week {} -> {}", cfg.model, cfg.lead_week, layout.root.join("spectrum").display());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BootstrapSummary {
    model: String,
    lead_week: usize,
    replicates: usize,
    seed: u64,
    score: String,
    domain_median_delta_r: f64,
    domain_p_value: f64,
    domain_flag: String,
    degenerate: bool,
}

/// Paired bootstrap of Δ_r(MSE) and Δ_r(CRPS) against the benchmark.
pub fn cmd_bootstrap(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out);
    let (model, bench) = model_and_benchmark(cfg, &layout)?;
    let obs = observations(&layout)?;
    let crps = if cfg.fair_crps { ScoreKind::FairCrps } else { ScoreKind::Crps };
    let mut summaries = Vec::new();
    for kind in [ScoreKind::Mse, crps] {
        let r = bootstrap_significance(&model, &bench, &obs, kind, cfg.replicates, cfg.seed)?;
        let path = layout.root.join(format!("bootstrap/{}_w{}_{}.csv", cfg.model, cfg.lead_week, kind.name()));
        write(&path, &r.to_csv())?;
        summaries.push(BootstrapSummary {
            model: cfg.model.to_string(),
            lead_week: cfg.lead_week,
            replicates: cfg.replicates,
            seed: cfg.seed,
            score: kind.name().to_string(),
            domain_median_delta_r: r.domain.median,
            domain_p_value: r.domain.p_value,
            domain_flag: r.domain.flag.clone(),
            degenerate: r.any_degenerate(),
        });
    }
    write_json(
        &layout.root.join(format!("bootstrap/{}_w{}.json", cfg.model, cfg.lead_week)),
        &summaries,
    )?;
    println!("bootstrap: {} replicates -> {}", cfg.replicates, layout.root.join("bootstrap").display());
    Ok(())
}

/// model → lead week → metric → domain mean.
pub type Summary = BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>;

/// Joins every verified score table into `summary.json` and prints it as a
/// table.
pub fn cmd_report(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out);
    let dir = layout.root.join("scores");
    if !dir.is_dir() {
        return Err(Error::MissingInput(dir));
    }
    let mut names: Vec<PathBuf> = fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    names.sort();
    let mut summary = Summary::new();
    for p in names {
        let s: ScoreSummary = serde_json::from_str(&fs::read_to_string(&p)?)?;
        summary
            .entry(s.model)
            .or_default()
            .entry(s.lead_week.to_string())
            .or_default()
            .extend(s.metrics);
    }
    if summary.is_empty() {
        return Err(Error::MissingInput(dir.join("*.json")));
    }
    write_json(&layout.summary(), &summary)?;
    println!("{:<10} {:>4} {:<14} {:>12}", "model", "week", "metric", "value");
    for (model, weeks) in &summary {
        for (week, metrics) in weeks {
            for (metric, v) in metrics {
                println!("{model:<10} {week:>4} {metric:<14} {v:>12.5}");
            }
        }
    }
    Ok(())
}
