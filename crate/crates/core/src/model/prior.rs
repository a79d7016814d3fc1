use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CountryModel, CountryParams, GlobalParams, Model, SeriesParams};
use crate::error::{Error, Result};
use crate::stats::normal_ln_pdf;
use crate::types::SourceType;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior {
    pub mean: f64,
    pub sd: f64,
}

/// Prior constants. Uniform priors are given by their `(lo, hi)` endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConstants {
    /// Range of `exp(λ0)`.
    pub level_range: (f64, f64),
    /// Range of `λ1 / I`.
    pub slope_range: (f64, f64),
    pub chi_mean: f64,
    /// Second argument of the χ prior.
    pub chi_spread: f64,
    /// Read `chi_spread` as a standard deviation instead of a variance.
    pub chi_spread_is_sd: bool,
    pub phi_max: f64,
    pub omega_max: f64,
    pub nu_range: (f64, f64),
    pub mu0_default: NormalPrior,
    pub mu0: BTreeMap<SourceType, NormalPrior>,
    pub mu1: NormalPrior,
    pub default_se_census: f64,
    pub default_se_other: f64,
}

impl Default for PriorConstants {
    fn default() -> Self {
        let mut mu0 = BTreeMap::new();
        mu0.insert(
            SourceType::DhsDirect,
            NormalPrior {
                mean: -0.0123,
                sd: 0.00556,
            },
        );
        Self {
            level_range: (1.0, 1000.0),
            slope_range: (-0.25, 0.2),
            chi_mean: -3.0,
            chi_spread: 10.0,
            chi_spread_is_sd: false,
            phi_max: 5.0,
            omega_max: 0.5,
            nu_range: (2.0, 30.0),
            mu0_default: NormalPrior { mean: 0.0, sd: 0.15 },
            mu0,
            mu1: NormalPrior { mean: 0.0, sd: 0.02 },
            default_se_census: 0.025,
            default_se_other: 0.1,
        }
    }
}

impl PriorConstants {
    pub fn validate(&self) -> Result<()> {
        let ordered = |(a, b): (f64, f64)| a < b;
        if !(self.level_range.0 > 0.0 && ordered(self.level_range))
            || !ordered(self.slope_range)
            || !ordered(self.nu_range)
            || !(self.chi_spread > 0.0 && self.phi_max > 0.0 && self.omega_max > 0.0)
            || !(self.default_se_census > 0.0 && self.default_se_other > 0.0)
        {
            return Err(Error::Config("invalid prior constants".into()));
        }
        Ok(())
    }

    pub fn chi_sd(&self) -> f64 {
        if self.chi_spread_is_sd {
            self.chi_spread
        } else {
            self.chi_spread.sqrt()
        }
    }

    pub fn mu0_for(&self, d: SourceType) -> NormalPrior {
        self.mu0.get(&d).copied().unwrap_or(self.mu0_default)
    }

    /// Support of `λ0`.
    pub fn lambda0_range(&self) -> (f64, f64) {
        (self.level_range.0.ln(), self.level_range.1.ln())
    }

    /// Support of `λ1` for knot spacing `interval`.
    pub fn lambda1_range(&self, interval: f64) -> (f64, f64) {
        (self.slope_range.0 * interval, self.slope_range.1 * interval)
    }
}

fn uniform_ln(x: f64, lo: f64, hi: f64) -> f64 {
    if x > lo && x < hi {
        -(hi - lo).ln()
    } else {
        f64::NEG_INFINITY
    }
}

pub(crate) fn global_log_prior(model: &Model, g: &GlobalParams) -> Result<f64> {
    let p = &model.config.priors;
    let missing = |what: &str, key: &dyn std::fmt::Display| Error::MissingHyperparameter(format!("{what} for {key}"));
    let mut lp = normal_ln_pdf(g.chi, p.chi_mean, p.chi_sd());
    lp += uniform_ln(g.phi_sigma, 0.0, p.phi_max);
    for &d in &model.types {
        let mu0 = *g.mu0.get(d).ok_or_else(|| missing("mu0", &d))?;
        let pr = p.mu0_for(d);
        lp += normal_ln_pdf(mu0, pr.mean, pr.sd);
        if d.is_repeated() {
            let phi0 = *g.phi0.get(d).ok_or_else(|| missing("phi0", &d))?;
            let mu1 = *g.mu1.get(d).ok_or_else(|| missing("mu1", &d))?;
            let phi1 = *g.phi1.get(d).ok_or_else(|| missing("phi1", &d))?;
            lp += uniform_ln(phi0, 0.0, p.phi_max)
                + uniform_ln(phi1, 0.0, p.phi_max)
                + normal_ln_pdf(mu1, p.mu1.mean, p.mu1.sd);
        }
    }
    for &s in &model.subtypes {
        let w = *g.omega.get(s).ok_or_else(|| missing("omega", &s))?;
        lp += uniform_ln(w, 0.0, p.omega_max);
    }
    if model.has_t_branch() {
        lp += uniform_ln(g.nu, p.nu_range.0, p.nu_range.1);
    }
    Ok(lp)
}

pub(crate) fn country_log_prior(model: &Model, c: &CountryModel, g: &GlobalParams, params: &CountryParams) -> f64 {
    let p = &model.config.priors;
    let (l0, h0) = p.lambda0_range();
    let (l1, h1) = p.lambda1_range(c.basis.interval());
    if !(params.lambda0 > l0 && params.lambda0 < h0 && params.lambda1 > l1 && params.lambda1 < h1)
        || !(params.sigma > 0.0)
    {
        return f64::NEG_INFINITY;
    }
    // exp(λ0) uniform: density of λ0 is e^λ0 / (hi − lo)
    let mut lp = params.lambda0 - (p.level_range.1 - p.level_range.0).ln();
    lp += -(h1 - l1).ln();
    if model.config.fixed_sigma.is_none() {
        let ls = params.sigma.ln();
        // density of σ through log σ ~ N(χ, φσ²)
        lp += normal_ln_pdf(ls, g.chi, g.phi_sigma) - ls;
    }
    lp += params
        .eps
        .iter()
        .map(|&e| normal_ln_pdf(e, 0.0, params.sigma))
        .sum::<f64>();
    if c.has_theta {
        match params.theta_vr {
            Some(t) if t > 0.0 && t < 1.0 => {}
            _ => return f64::NEG_INFINITY,
        }
    }
    lp
}

pub(crate) fn series_log_prior(model: &Model, g: &GlobalParams, series: &[SeriesParams]) -> Result<f64> {
    let mut lp = 0.0;
    for (m, s) in model.series.iter().zip(series) {
        let d = m.source_type;
        let get = |map: &crate::types::EnumMap<SourceType, f64>, what: &str| {
            map.get(d)
                .copied()
                .ok_or_else(|| Error::MissingHyperparameter(format!("{what} for {d}")))
        };
        let (mu0, phi0, mu1, phi1) = (
            get(&g.mu0, "mu0")?,
            get(&g.phi0, "phi0")?,
            get(&g.mu1, "mu1")?,
            get(&g.phi1, "phi1")?,
        );
        lp += normal_ln_pdf(s.beta0, mu0, phi0) + normal_ln_pdf(s.beta1, mu1, phi1);
    }
    Ok(lp)
}

/// Joint log prior; `−∞` outside the support.
pub fn log_prior(
    model: &Model,
    global: &GlobalParams,
    countries: &[CountryParams],
    series: &[SeriesParams],
) -> Result<f64> {
    if countries.len() != model.countries.len() {
        return Err(Error::Dimension {
            expected: model.countries.len(),
            got: countries.len(),
        });
    }
    if series.len() != model.series.len() {
        return Err(Error::Dimension {
            expected: model.series.len(),
            got: series.len(),
        });
    }
    let mut lp = global_log_prior(model, global)?;
    if lp == f64::NEG_INFINITY {
        return Ok(lp);
    }
    for (c, params) in model.countries.iter().zip(countries) {
        if params.eps.len() != c.n_eps() {
            return Err(Error::Dimension {
                expected: c.n_eps(),
                got: params.eps.len(),
            });
        }
        lp += country_log_prior(model, c, global, params);
    }
    Ok(lp + series_log_prior(model, global, series)?)
}

/// Joint log posterior (unnormalized). `latent_bounds[c][j]` is the sampled
/// lower bound `L` for constraint `j` of country `c`; an empty slice checks
/// the bounds at the observed values instead.
pub fn log_posterior(
    model: &Model,
    global: &GlobalParams,
    countries: &[CountryParams],
    series: &[SeriesParams],
    latent_bounds: &[Vec<f64>],
) -> Result<f64> {
    let mut lp = log_prior(model, global, countries, series)?;
    if lp == f64::NEG_INFINITY {
        return Ok(lp);
    }
    for (ci, (c, params)) in model.countries.iter().zip(countries).enumerate() {
        let theta = CountryModel::theta_of(params);
        let psi = c.psi_obs(&theta);
        for (o, p) in c.obs.iter().zip(&psi) {
            let s = o.series.map(|i| &series[i]);
            lp += super::log_likelihood(o, *p, global, s, params.theta_vr)?;
        }
        let constraints: Vec<super::BoundConstraint> = c
            .bounds
            .iter()
            .enumerate()
            .map(|(j, b)| {
                let lower = latent_bounds.get(ci).and_then(|l| l.get(j)).copied().unwrap_or(b.y);
                if latent_bounds.get(ci).is_some_and(|l| l.len() > j) {
                    lp += normal_ln_pdf(lower, b.y, b.v);
                }
                super::BoundConstraint {
                    country: c.code.clone(),
                    year: b.year,
                    lower,
                    upper: b.log_m.map(|lm| lower - lm),
                }
            })
            .collect();
        let bound_psi: Vec<f64> = c
            .bounds
            .iter()
            .map(|b| b.row.iter().zip(&theta).map(|(r, t)| r * t).sum())
            .collect();
        if !super::bound_indicator(&bound_psi, &constraints) {
            return Ok(f64::NEG_INFINITY);
        }
    }
    Ok(lp)
}
