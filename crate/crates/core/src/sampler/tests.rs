use super::*;
use crate::ingest::BoundSpec;
use crate::model::{tests as fixtures, ModelConfig};
use crate::types::{Observation, VrStatus};

fn cfg() -> ModelConfig {
    ModelConfig {
        projection_end: Some(2015.0),
        ..ModelConfig::default()
    }
}

fn short(seed: u64) -> SamplerConfig {
    SamplerConfig {
        n_chains: 2,
        n_iter: 600,
        burn_in: 300,
        thin: 3,
        seed,
        ..SamplerConfig::default()
    }
}

#[test]
fn protocol_constants() {
    let g = SamplerConfig::global_default(1);
    assert_eq!((g.n_chains, g.retained_per_chain()), (6, 2000));
    let c = SamplerConfig::country_default(1);
    assert_eq!((c.n_chains, c.retained_per_chain()), (6, 1250));
    let bad = SamplerConfig {
        burn_in: 600,
        ..short(1)
    };
    assert!(matches!(bad.validate(), Err(Error::SamplerConfig(_))));
}

#[test]
fn same_seed_same_draws_and_execution_independent() {
    let model = Model::assemble(&fixtures::small_dataset(), &cfg()).unwrap();
    let a = run_global(&model, &short(7)).unwrap();
    let b = run_global(&model, &short(7)).unwrap();
    let seq = run_global(
        &model,
        &SamplerConfig {
            execution: Execution::Sequential,
            ..short(7)
        },
    )
    .unwrap();
    assert_eq!(a.chains.len(), 2);
    assert_eq!(a.chains[0].draws.len(), 100);
    for ((x, y), z) in a.draws().zip(b.draws()).zip(seq.draws()) {
        assert_eq!(x, y);
        assert_eq!(x, z);
    }
    let other = run_global(&model, &short(8)).unwrap();
    assert_ne!(a.chains[0].draws[0], other.chains[0].draws[0]);
}

#[test]
fn acceptance_rates_after_adaptation() {
    let model = Model::assemble(&fixtures::small_dataset(), &cfg()).unwrap();
    let post = run_global(
        &model,
        &SamplerConfig {
            n_iter: 2000,
            burn_in: 1000,
            thin: 10,
            ..short(11)
        },
    )
    .unwrap();
    for (name, rate) in &post.diagnostics.acceptance {
        if name.starts_with("spline") {
            continue;
        }
        assert!(*rate > 0.05 && *rate < 0.95, "{name}: {rate}");
    }
    assert!(post.diagnostics.acceptance.contains_key("nu"));
    assert!(post.diagnostics.acceptance.contains_key("omega[census_indirect]"));
}

fn flagged_country() -> (Vec<Observation>, ModelConfig) {
    let mut data = Vec::new();
    for (y, u) in [(1990.0, 30.0), (1992.0, 36.0), (1994.0, 34.0), (2006.0, 15.0)] {
        let mut o = fixtures::obs("MDA", "M-VR", crate::SourceType::Vr, y, u, None, None);
        o.vr_status = VrStatus::Incomplete;
        data.push(o);
    }
    for y in 0..10 {
        data.push(fixtures::obs(
            "MDA",
            "M-DHS",
            crate::SourceType::DhsDirect,
            1986.0 + 2.0 * y as f64,
            45.0 - 2.5 * y as f64,
            Some(2008.0),
            Some(0.08),
        ));
    }
    let mut c = ModelConfig {
        projection_end: Some(2012.0),
        ..ModelConfig::default()
    };
    c.incomplete_vr.bounds.insert(
        "MDA".into(),
        BoundSpec {
            min_completeness: Some(0.7),
            years: None,
        },
    );
    (data, c)
}

#[test]
fn retained_draws_respect_bounds() {
    let (data, c) = flagged_country();
    let model = Model::assemble(&data, &c).unwrap();
    let cm = &model.countries[0];
    assert_eq!(cm.bounds.len(), 1);
    let post = run_global(&model, &short(3)).unwrap();
    for d in post.draws() {
        let theta = crate::model::CountryModel::theta_of(&d.countries[0]);
        for (b, l) in cm.bounds.iter().zip(&d.bounds[0]) {
            let psi: f64 = b.row.iter().zip(&theta).map(|(r, t)| r * t).sum();
            assert!(psi > *l && psi < l - b.log_m.unwrap(), "{psi} vs {l}");
        }
        let t = d.countries[0].theta_vr.unwrap();
        assert!(t > 0.0 && t < 1.0);
    }
}

#[test]
fn prior_only_nu_is_uniform() {
    let model = Model::assemble(&fixtures::small_dataset(), &cfg()).unwrap();
    let post = run_global(
        &model,
        &SamplerConfig {
            n_chains: 4,
            n_iter: 26_000,
            burn_in: 1000,
            thin: 10,
            prior_only: true,
            ..short(5)
        },
    )
    .unwrap();
    let mut nu: Vec<f64> = post.draws().map(|d| d.global.nu).collect();
    assert_eq!(nu.len(), 10_000);
    nu.sort_by(f64::total_cmp);
    let n = nu.len() as f64;
    let d = nu
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = (x - 2.0) / 28.0;
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    assert!(d < 0.05, "KS distance {d}");
}

#[test]
fn country_mode_requires_fixed_hyperparameters() {
    let data = fixtures::small_dataset();
    let model = Model::assemble(&data, &cfg()).unwrap();
    let global = run_global(&model, &short(2)).unwrap();
    let mut g = global.global_medians();
    let only_b: Vec<Observation> = data.iter().filter(|o| o.country == "BBB").cloned().collect();
    let cm = Model::assemble(&only_b, &cfg()).unwrap();
    let country_cfg = SamplerConfig {
        n_iter: 400,
        burn_in: 200,
        thin: 2,
        ..short(2)
    };
    let post = run_country(&cm, &g, &country_cfg).unwrap();
    assert!(post.fixed_globals);
    for d in post.draws() {
        assert_eq!(d.global, g);
    }
    g.omega = crate::types::EnumMap::new();
    assert!(matches!(
        run_country(&cm, &g, &country_cfg),
        Err(Error::MissingHyperparameter(_))
    ));
}

#[test]
fn vr_only_country_has_no_series() {
    let data: Vec<Observation> = fixtures::small_dataset()
        .into_iter()
        .filter(|o| o.source_type == crate::SourceType::Vr)
        .collect();
    let model = Model::assemble(&data, &cfg()).unwrap();
    assert!(model.series.is_empty());
    let post = run_global(&model, &short(1)).unwrap();
    assert!(post.draws().all(|d| d.series.is_empty()));
}

#[test]
fn rhat_flags_constant_traces() {
    let data: Vec<Observation> = fixtures::small_dataset()
        .into_iter()
        .filter(|o| o.source_type == crate::SourceType::Vr)
        .collect();
    let mut c = cfg();
    c.fixed_sigma = Some(0.05);
    let model = Model::assemble(&data, &c).unwrap();
    let post = run_global(&model, &short(9)).unwrap();
    assert!(!post.diagnostics.rhat.contains_key("sigma[AAA]"));
    let r = post.diagnostics.rhat["lambda0[AAA]"].value().unwrap();
    assert!(r < 1.2, "{r}");
}
