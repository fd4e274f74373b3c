//! P×M ensemble generation from M-member predictor ensembles, and
//! mean-variance adjustment of a benchmark ensemble.

use crate::error::{Error, Result};
use crate::fields::{destandardize_ensemble, Climatology, EnsembleSeries};
use crate::models::{sample_ensemble, MechanismConfig, MechanismKind, ModelBundle};
use crate::rng::derive_seed;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationPlan {
    pub kind: MechanismKind,
    pub samples_per_member: usize,
    pub seed: u64,
}

impl GenerationPlan {
    /// Plan with the mechanism's default P.
    pub fn new(kind: MechanismKind, seed: u64) -> Self {
        Self {
            kind,
            samples_per_member: kind.default_samples_per_member(),
            seed,
        }
    }

    pub fn with_samples_per_member(mut self, p: usize) -> Self {
        self.samples_per_member = p;
        self
    }
}

/// FNV-1a over the bit patterns of one member's values.
fn content_hash(values: impl Iterator<Item = f64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Per-member seeds keyed by member content (and occurrence among identical
/// members), so permuting the input members permutes the output blocks.
fn member_seeds(x: &EnsembleSeries, seed: u64) -> Vec<u64> {
    let mut seen: HashMap<u64, u64> = HashMap::new();
    (0..x.n_members())
        .map(|m| {
            let h = content_hash((0..x.n_samples()).flat_map(|n| x.member(n, m).iter().copied()));
            let k = seen.entry(h).or_insert(0);
            let s = derive_seed(seed, &[h, *k]);
            *k += 1;
            s
        })
        .collect()
}

/// Downscales every input member with the model's sampler. Output member
/// `m·P + p` is realisation `p` of input member `m`, in physical units when
/// the model carries a target climatology.
pub fn generate_ensemble(m: &ModelBundle, x_ens: &EnsembleSeries, plan: &GenerationPlan) -> Result<EnsembleSeries> {
    m.ensure_kind(plan.kind)?;
    let p = plan.samples_per_member;
    if p == 0 {
        return Err(Error::InvalidConfig("samples per member must be at least 1".into()));
    }
    if let MechanismConfig::Qnn { levels } = &m.mechanism {
        if levels.len() != p {
            return Err(Error::InvalidConfig(format!(
                "QNN emits one member per quantile level ({}), plan asks for {p}",
                levels.len()
            )));
        }
    }
    if !x_ens.is_standardized() {
        return Err(Error::FlagMismatch("input ensemble must be standardized".into()));
    }
    if let Some(c) = &m.x_climatology {
        if x_ens.climatology.as_deref() != Some(c.source_split.as_str()) {
            return Err(Error::ClimatologyMismatch(format!(
                "model expects inputs standardized with '{}', got {:?}",
                c.source_split, x_ens.climatology
            )));
        }
    }
    m.grid.ensure_same(x_ens.grid())?;

    let g = m.grid.len();
    let (n, big_m) = (x_ens.n_samples(), x_ens.n_members());
    let seeds = member_seeds(x_ens, plan.seed);
    let mut values = vec![0.0; n * big_m * p * g];
    let mut tag = None;
    for (mi, seed) in seeds.iter().enumerate() {
        let out = sample_ensemble(m, &x_ens.member_field(mi), p, *seed)?;
        tag = out.climatology.clone();
        for s in 0..n {
            for r in 0..p {
                values[((s * big_m + mi) * p + r) * g..][..g].copy_from_slice(out.member(s, r));
            }
        }
    }
    let mut ens = EnsembleSeries::new(m.grid.clone(), n, big_m * p, values, true)?.with_variable("prediction", "standardized");
    ens.climatology = tag;
    match &m.y_climatology {
        Some(c) => Ok(destandardize_ensemble(&ens, c)?.with_variable("prediction", "physical")),
        None => Ok(ens),
    }
}

/// `(v − μ_hc)·σ_ref/σ_hc + μ_ref` per grid point.
pub fn mva_calibrate(hindcast: &EnsembleSeries, hindcast_clim: &Climatology, ref_clim: &Climatology) -> Result<EnsembleSeries> {
    let g = hindcast.grid().len();
    for c in [hindcast_clim, ref_clim] {
        if c.len() != g || c.std.len() != g {
            return Err(Error::GridMismatch("climatology size differs from grid".into()));
        }
    }
    if let Some(i) = hindcast_clim.std.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::ZeroVariance(i));
    }
    let values: Vec<f64> = hindcast
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let k = i % g;
            (v - hindcast_clim.mean[k]) * (ref_clim.std[k] / hindcast_clim.std[k]) + ref_clim.mean[k]
        })
        .collect();
    let mut out = EnsembleSeries::new(
        hindcast.grid().clone(),
        hindcast.n_samples(),
        hindcast.n_members(),
        values,
        hindcast.is_standardized(),
    )?;
    out.variable = hindcast.variable.clone();
    out.units = hindcast.units.clone();
    out.climatology = hindcast.climatology.clone();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{fit_climatology, standardize, FieldSeries, GridSpec};
    use crate::models::{predict_deterministic, train, SnnNoiseModel, TrainConfig, TrainingData};
    use crate::rng::{normals, stream};
    use proptest::prelude::*;

    fn grid() -> GridSpec {
        GridSpec::regular(60.0, -2.7, 4, 0.0, 2.7, 8).unwrap()
    }

    fn std_field(n: usize, seed: u64) -> FieldSeries {
        let v = normals(&mut stream(seed, &[]), n * 32);
        let mut f = FieldSeries::new(grid(), n, v, true).unwrap();
        f.climatology = Some("train".into());
        f
    }

    fn tiny_model(kind: MechanismKind) -> ModelBundle {
        let data = TrainingData::new(std_field(6, 1), std_field(6, 2), std_field(3, 3), std_field(3, 4)).unwrap();
        let cfg = TrainConfig {
            max_epochs: 1,
            widths: vec![2, 3],
            ..TrainConfig::default()
        };
        let mut mech = MechanismConfig::default_for(kind);
        if let MechanismConfig::Dnn(d) = &mut mech {
            d.steps = 10;
            d.time_embedding_dim = 8;
        }
        if let MechanismConfig::Vnn(v) = &mut mech {
            v.latent_dim = 4;
        }
        let mut b = train(&mech, &data, &cfg, 9).unwrap().0;
        let c = Climatology::new(vec![0.0; 32], vec![1.0; 32], "train").unwrap();
        b.x_climatology = Some(c.clone());
        b.y_climatology = Some(Climatology::new(vec![5.0; 32], vec![2.0; 32], "train").unwrap());
        b
    }

    fn input(members: usize) -> EnsembleSeries {
        let v = normals(&mut stream(7, &[]), 2 * members * 32);
        let mut e = EnsembleSeries::new(grid(), 2, members, v, true).unwrap();
        e.climatology = Some("train".into());
        e
    }

    #[test]
    fn member_counts_are_p_times_m() {
        for kind in MechanismKind::ALL {
            let m = tiny_model(kind);
            let out = generate_ensemble(&m, &input(3), &GenerationPlan::new(kind, 1)).unwrap();
            assert_eq!(out.n_members(), 3 * kind.default_samples_per_member(), "{kind}");
            assert!(!out.is_standardized());
        }
    }

    #[test]
    fn block_exchangeability() {
        for kind in MechanismKind::ALL {
            let m = tiny_model(kind);
            let x = input(3);
            let plan = GenerationPlan::new(kind, 5);
            let a = generate_ensemble(&m, &x, &plan).unwrap();
            let b = generate_ensemble(&m, &x.permute_members(&[2, 0, 1]).unwrap(), &plan).unwrap();
            let p = plan.samples_per_member;
            let perm: Vec<usize> = [2, 0, 1].iter().flat_map(|&mi| (0..p).map(move |r| mi * p + r)).collect();
            assert_eq!(a.permute_members(&perm).unwrap().values(), b.values(), "{kind}");
        }
    }

    #[test]
    fn zero_noise_snn_collapses_to_deterministic() {
        let mut m = tiny_model(MechanismKind::Snn);
        m.mechanism = MechanismConfig::Snn {
            noise: SnnNoiseModel {
                sigma: vec![0.0; 32],
                pooled: None,
            },
        };
        let x = input(1);
        let out = generate_ensemble(&m, &x, &GenerationPlan::new(MechanismKind::Snn, 3)).unwrap();
        assert_eq!(out.n_members(), 20);
        let det = predict_deterministic(&m, &x.member_field(0)).unwrap();
        let det = crate::fields::destandardize(&det, m.y_climatology.as_ref().unwrap()).unwrap();
        for n in 0..2 {
            for r in 0..20 {
                assert_eq!(out.member(n, r), det.sample(n));
            }
        }
    }

    #[test]
    fn plan_and_climatology_mismatches() {
        let m = tiny_model(MechanismKind::Qnn);
        let x = input(2);
        let wrong_kind = GenerationPlan::new(MechanismKind::Dnn, 1);
        assert!(matches!(generate_ensemble(&m, &x, &wrong_kind), Err(Error::WrongMechanism { .. })));
        let wrong_p = GenerationPlan::new(MechanismKind::Qnn, 1).with_samples_per_member(20);
        assert!(matches!(generate_ensemble(&m, &x, &wrong_p), Err(Error::InvalidConfig(_))));
        let mut other = x.clone();
        other.climatology = Some("test".into());
        assert!(matches!(
            generate_ensemble(&m, &other, &GenerationPlan::new(MechanismKind::Qnn, 1)),
            Err(Error::ClimatologyMismatch(_))
        ));
        let raw = EnsembleSeries::new(grid(), 2, 2, x.values().to_vec(), false).unwrap();
        assert!(matches!(
            generate_ensemble(&m, &raw, &GenerationPlan::new(MechanismKind::Qnn, 1)),
            Err(Error::FlagMismatch(_))
        ));
    }

    #[test]
    fn same_seed_same_ensemble() {
        let m = tiny_model(MechanismKind::Dnn);
        let plan = GenerationPlan::new(MechanismKind::Dnn, 11).with_samples_per_member(3);
        let a = generate_ensemble(&m, &input(2), &plan).unwrap();
        let b = generate_ensemble(&m, &input(2), &plan).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn mva_direct_evaluation() {
        let g = GridSpec::regular(0.0, 1.0, 2, 0.0, 1.0, 4).unwrap();
        let e = EnsembleSeries::new(g, 1, 1, vec![12.0; 8], false).unwrap();
        let hc = Climatology::new(vec![10.0; 8], vec![2.0; 8], "hc").unwrap();
        let rf = Climatology::new(vec![8.0; 8], vec![1.0; 8], "ref").unwrap();
        assert_eq!(mva_calibrate(&e, &hc, &rf).unwrap().values(), &[9.0; 8]);
    }

    #[test]
    fn mva_identity_when_moments_match() {
        let e = input(3);
        let c = Climatology::new(vec![0.3; 32], vec![1.7; 32], "a").unwrap();
        let out = mva_calibrate(&e, &c, &c).unwrap();
        for (a, b) in out.values().iter().zip(e.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mva_rejects_zero_hindcast_std() {
        let e = input(2);
        let mut c = Climatology::new(vec![0.0; 32], vec![1.0; 32], "a").unwrap();
        c.std[4] = 0.0;
        let ok = Climatology::new(vec![0.0; 32], vec![1.0; 32], "b").unwrap();
        assert!(matches!(mva_calibrate(&e, &c, &ok), Err(Error::ZeroVariance(4))));
    }

    #[test]
    fn mva_removes_injected_bias_and_deflation() {
        use crate::synth::*;
        let cfg = SynthConfig {
            n_samples: 500,
            ..SynthConfig::default()
        };
        let x = gen_predictor(&cfg).unwrap();
        let (y, _) = gen_target(&x, &cfg).unwrap();
        let fc = gen_forecast_ensemble(&x, 10, 1, &cfg).unwrap();
        let bench = gen_benchmark_ensemble(&fc[0], 1, &cfg).unwrap();
        let ids: Vec<usize> = (0..500).collect();
        let hc = Climatology::fit_ensemble(&bench, &ids).unwrap();
        let rf = fit_climatology(&y, &ids).unwrap();
        let cal = mva_calibrate(&bench, &hc, &rf).unwrap();
        let after = Climatology::fit_ensemble(&cal, &ids).unwrap();
        for k in 0..y.grid().len() {
            assert!((after.mean[k] - rf.mean[k]).abs() < 0.05);
            assert!((after.std[k] / rf.std[k] - 1.0).abs() < 0.05);
        }
        // Standardizing the reference with its own climatology stays consistent.
        let _ = standardize(&y, &rf).unwrap();
    }

    proptest! {
        #[test]
        fn mva_preserves_member_rank(vals in proptest::collection::vec(-50.0f64..50.0, 5),
                                     mh in -5.0f64..5.0, sh in 0.1f64..5.0, mr in -5.0f64..5.0, sr in 0.1f64..5.0) {
            let g = GridSpec::regular(0.0, 1.0, 2, 0.0, 1.0, 4).unwrap();
            let spread: Vec<f64> = vals.iter().flat_map(|v| [*v; 8]).collect();
            let e = EnsembleSeries::new(g, 1, 5, spread, false).unwrap();
            let hc = Climatology::new(vec![mh; 8], vec![sh; 8], "h").unwrap();
            let rf = Climatology::new(vec![mr; 8], vec![sr; 8], "r").unwrap();
            let out = mva_calibrate(&e, &hc, &rf).unwrap();
            for i in 0..5 {
                for j in 0..5 {
                    if vals[i] < vals[j] {
                        prop_assert!(out.values()[8 * i] <= out.values()[8 * j]);
                    }
                }
            }
        }
    }
}
