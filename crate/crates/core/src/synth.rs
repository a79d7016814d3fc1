//! Simulation of datasets from the full generative model with known
//! parameters, for recovery and calibration checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StudentT};

use crate::error::{Error, Result};
use crate::ingest;
use crate::model::{self, Branch, CountryParams, GlobalParams, Model, ModelConfig, SeriesParams};
use crate::stats;
use crate::types::{EnumMap, Indexed, Observation, SourceSubtype, SourceType, VrStatus};

/// Data-collection layout shared by every simulated country.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub first_year: f64,
    pub last_year: f64,
    /// Surveys per country for each repeated source type, spread over the span.
    pub surveys: Vec<(SourceType, usize)>,
    /// Reference dates per survey, at these retrospective periods.
    pub retro_periods: Vec<f64>,
    /// Reported log-scale SE for DHS-class surveys.
    pub dhs_se: f64,
    /// Every `vr_every`-th country has complete annual VR; 0 for none.
    pub vr_every: usize,
    pub births: f64,
    /// Non-repeated source types with one point each at the span midpoint.
    pub single_points: Vec<SourceType>,
}

impl Default for Design {
    fn default() -> Self {
        Self {
            first_year: 1975.0,
            last_year: 2010.0,
            surveys: vec![(SourceType::DhsDirect, 3), (SourceType::CensusIndirect, 2)],
            retro_periods: vec![1.5, 4.5, 7.5, 10.5, 13.5],
            dhs_se: 0.08,
            vr_every: 0,
            births: 40_000.0,
            single_points: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_countries: usize,
    pub design: Design,
    pub truth: GlobalParams,
    /// Range of U5MR at the centre spline.
    pub level_range: (f64, f64),
    /// Range of the per-interval change in log U5MR.
    pub slope_range: (f64, f64),
    pub model: ModelConfig,
    pub seed: u64,
}

impl SynthConfig {
    /// Defaults with `χ = −3`, `ω = 0.05` on every subtype, direct DHS bias
    /// at its prior mean and a `0.10` census bias.
    pub fn standard(n_countries: usize, seed: u64) -> Self {
        let mut truth = GlobalParams {
            chi: -3.0,
            phi_sigma: 0.3,
            mu0: EnumMap::new(),
            phi0: EnumMap::new(),
            mu1: EnumMap::new(),
            phi1: EnumMap::new(),
            omega: EnumMap::new(),
            nu: 6.0,
        };
        for &d in <SourceType as Indexed>::ALL.iter().filter(|d| **d != SourceType::Vr) {
            truth.mu0.insert(
                d,
                match d {
                    SourceType::DhsDirect => -0.0123,
                    SourceType::CensusIndirect => 0.10,
                    _ => -0.05,
                },
            );
            if d.is_repeated() {
                truth.phi0.insert(d, 0.08);
                truth.mu1.insert(d, 0.0);
                truth.phi1.insert(d, 0.005);
            }
        }
        for &s in <SourceSubtype as Indexed>::ALL {
            if s != SourceSubtype::Vr {
                truth.omega.insert(s, 0.05);
            }
        }
        Self {
            n_countries,
            design: Design::default(),
            truth,
            level_range: (40.0, 180.0),
            slope_range: (-0.12, -0.02),
            model: ModelConfig {
                projection_end: Some(2012.0),
                ..ModelConfig::default()
            },
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub observations: Vec<Observation>,
    pub model: Model,
    pub countries: Vec<CountryParams>,
    pub series: Vec<SeriesParams>,
    /// True `Ψ` at every observation, indexed like `observations`.
    pub psi: Vec<f64>,
}

fn layout(cfg: &SynthConfig) -> Vec<Observation> {
    let d = &cfg.design;
    let span = d.last_year - d.first_year;
    let max_back = d.retro_periods.iter().copied().fold(0.0, f64::max);
    let mut out = Vec::new();
    for c in 0..cfg.n_countries {
        let code = format!("C{c:02}");
        let base = |series: String, t: SourceType, year: f64, survey: Option<f64>, se: Option<f64>| Observation {
            country: code.clone(),
            ref_year: year,
            u5mr: 1.0,
            log_u5mr: 0.0,
            series_id: series,
            source_type: t,
            sample_vr: false,
            survey_year: survey,
            reported_se: se,
            vr_status: if t == SourceType::Vr {
                VrStatus::Complete
            } else {
                VrStatus::NotVr
            },
            births: (t == SourceType::Vr).then_some(d.births),
            deaths: None,
        };
        for &(t, n) in &d.surveys {
            for s in 0..n {
                // survey dates evenly spaced, staggered by country and type
                let frac = (s as f64 + 0.5 + 0.13 * ((c + t as usize) % 3) as f64) / n as f64;
                let survey = (d.first_year + max_back + frac.min(1.0) * (span - max_back)).round();
                let se = t.is_dhs_class().then_some(d.dhs_se);
                for &z in &d.retro_periods {
                    out.push(base(format!("{code}-{t}-{s}"), t, survey - z, Some(survey), se));
                }
            }
        }
        for &t in &d.single_points {
            out.push(base(format!("{code}-{t}"), t, d.first_year + 0.5 * span, None, None));
        }
        if d.vr_every > 0 && c % d.vr_every == 0 {
            let mut y = d.first_year.ceil();
            while y <= d.last_year {
                out.push(base(format!("{code}-vr"), SourceType::Vr, y, None, None));
                y += 1.0;
            }
        }
    }
    out
}

/// Simulate one dataset. The returned model is assembled from the
/// simulated observations.
pub fn simulate(cfg: &SynthConfig) -> Result<SynthData> {
    let mut obs = layout(cfg);
    if obs.is_empty() {
        return Err(Error::InvalidArgument("design produces no observations".into()));
    }
    let skeleton = Model::assemble(&obs, &cfg.model)?;
    let g = &cfg.truth;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let missing = |what: &str| Error::MissingHyperparameter(format!("{what} in simulation truth"));

    let series: Vec<SeriesParams> = skeleton
        .series
        .iter()
        .map(|s| {
            let d = s.source_type;
            let m0 = *g.mu0.get(d).ok_or_else(|| missing("mu0"))?;
            let p0 = *g.phi0.get(d).ok_or_else(|| missing("phi0"))?;
            let m1 = *g.mu1.get(d).ok_or_else(|| missing("mu1"))?;
            let p1 = *g.phi1.get(d).ok_or_else(|| missing("phi1"))?;
            Ok(SeriesParams {
                beta0: m0 + p0 * stats::std_normal(&mut rng),
                beta1: m1 + p1 * stats::std_normal(&mut rng),
            })
        })
        .collect::<Result<_>>()?;

    let t_dist = StudentT::new(g.nu).map_err(|e| Error::InvalidArgument(format!("nu: {e}")))?;
    let mut psi_all = vec![f64::NAN; obs.len()];
    let mut countries = Vec::new();
    for c in &skeleton.countries {
        let sigma = cfg
            .model
            .fixed_sigma
            .unwrap_or_else(|| (g.chi + g.phi_sigma * stats::std_normal(&mut rng)).exp());
        let level = rng.random_range(cfg.level_range.0..cfg.level_range.1);
        let slope = rng.random_range(cfg.slope_range.0..cfg.slope_range.1);
        let params = CountryParams {
            lambda0: level.ln(),
            lambda1: slope,
            eps: (0..c.n_eps()).map(|_| sigma * stats::std_normal(&mut rng)).collect(),
            sigma,
            theta_vr: None,
        };
        let psi = c.psi_obs(&model::CountryModel::theta_of(&params));
        for (o, p) in c.obs.iter().zip(&psi) {
            psi_all[o.source] = *p;
            let e = match o.branch {
                Branch::CompleteVr => {
                    // the skeleton's sd was taken at a placeholder level
                    let at_truth = &mut obs[o.source];
                    at_truth.u5mr = p.exp();
                    ingest::observation_vr_sd(at_truth)? * stats::std_normal(&mut rng)
                }
                Branch::Normal | Branch::StudentT => {
                    let phi = match o.series {
                        Some(s) => model::bias_mean(&series[s], o.z),
                        None => *g.mu0.get(o.source_type).ok_or_else(|| missing("mu0"))?,
                    };
                    let omega = *g.omega.get(o.subtype).ok_or_else(|| missing("omega"))?;
                    let scale = model::obs_scale(omega, o.v);
                    let z = if o.branch == Branch::StudentT {
                        t_dist.sample(&mut rng)
                    } else {
                        stats::std_normal(&mut rng)
                    };
                    phi + scale * z
                }
                _ => {
                    return Err(Error::InvalidArgument(
                        "simulation supports complete VR and survey data".into(),
                    ))
                }
            };
            let y = p + e;
            let target = &mut obs[o.source];
            target.log_u5mr = y;
            target.u5mr = y.exp();
        }
        countries.push(params);
    }
    let model = Model::assemble(&obs, &cfg.model)?;
    Ok(SynthData {
        observations: obs,
        model,
        countries,
        series,
        psi: psi_all,
    })
}
