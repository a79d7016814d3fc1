use rand::Rng;

use super::{Draw, SamplerConfig};
use crate::error::{Error, Result};
use crate::model::{self, Branch, CountryModel, CountryParams, GlobalParams, Model, PriorConstants, SeriesParams};
use crate::stats;
use crate::types::EnumMap;

/// Mutable chain state. `psi[c][i]` caches Ψ at observation `i` of country `c`.
#[derive(Debug, Clone)]
pub(crate) struct State {
    pub global: GlobalParams,
    pub countries: Vec<CountryParams>,
    pub series: Vec<SeriesParams>,
    /// Latent precision weights; 1 outside the Student-t branch.
    pub w: Vec<Vec<f64>>,
    pub latent: Vec<Vec<f64>>,
    pub psi: Vec<Vec<f64>>,
}

pub(crate) fn check_fixed_globals(model: &Model, g: &GlobalParams) -> Result<()> {
    for &d in &model.types {
        let ok =
            g.mu0.contains(d) && (!d.is_repeated() || (g.phi0.contains(d) && g.mu1.contains(d) && g.phi1.contains(d)));
        if !ok {
            return Err(Error::MissingHyperparameter(format!("source type {d}")));
        }
    }
    for &s in &model.subtypes {
        if !g.omega.contains(s) {
            return Err(Error::MissingHyperparameter(format!("omega for subtype {s}")));
        }
    }
    if model.has_t_branch() && !(g.nu >= 2.0 && g.nu <= 30.0) {
        return Err(Error::MissingHyperparameter(format!("nu = {} outside [2, 30]", g.nu)));
    }
    Ok(())
}

fn jitter_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    // middle half of the range
    let w = hi - lo;
    lo + w * (0.25 + 0.5 * rng.random::<f64>())
}

fn initial_globals<R: Rng + ?Sized>(model: &Model, p: &PriorConstants, rng: &mut R) -> GlobalParams {
    let mut g = GlobalParams {
        chi: p.chi_mean + 0.1 * stats::std_normal(rng),
        phi_sigma: jitter_uniform(rng, 0.0, p.phi_max),
        mu0: EnumMap::new(),
        phi0: EnumMap::new(),
        mu1: EnumMap::new(),
        phi1: EnumMap::new(),
        omega: EnumMap::new(),
        nu: jitter_uniform(rng, p.nu_range.0, p.nu_range.1),
    };
    for &d in &model.types {
        let pr = p.mu0_for(d);
        g.mu0.insert(d, pr.mean + 0.5 * pr.sd * stats::std_normal(rng));
        if d.is_repeated() {
            g.phi0.insert(d, jitter_uniform(rng, 0.0, p.phi_max));
            g.mu1.insert(d, p.mu1.mean + 0.5 * p.mu1.sd * stats::std_normal(rng));
            g.phi1.insert(d, jitter_uniform(rng, 0.0, p.phi_max));
        }
    }
    for &s in &model.subtypes {
        g.omega.insert(s, jitter_uniform(rng, 0.0, p.omega_max));
    }
    g
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mx = stats::mean(xs);
    let my = stats::mean(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return 0.0;
    }
    xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / sxx
}

fn initial_country<R: Rng + ?Sized>(model: &Model, c: &CountryModel, g: &GlobalParams, rng: &mut R) -> CountryParams {
    let p = &model.config.priors;
    let (l0, h0) = p.lambda0_range();
    let (l1, h1) = p.lambda1_range(c.basis.interval());
    let ys: Vec<f64> = c.obs.iter().map(|o| o.y).collect();
    let xs: Vec<f64> = c.obs.iter().map(|o| o.year).collect();
    let level = if ys.is_empty() {
        0.5 * (l0 + h0)
    } else {
        stats::mean(&ys.iter().map(|y| y.exp()).collect::<Vec<_>>()).ln()
    };
    let slope = least_squares_slope(&xs, &ys) * c.basis.interval();
    let clamp = |x: f64, lo: f64, hi: f64| {
        let pad = 1e-3 * (hi - lo);
        x.clamp(lo + pad, hi - pad)
    };
    let sigma = model
        .config
        .fixed_sigma
        .unwrap_or_else(|| (g.chi + 0.2 * stats::std_normal(rng)).exp());
    CountryParams {
        lambda0: clamp(level + 0.05 * stats::std_normal(rng), l0, h0),
        lambda1: clamp(slope + 0.01 * stats::std_normal(rng), l1, h1),
        eps: vec![0.0; c.n_eps()],
        sigma,
        theta_vr: c.has_theta.then(|| jitter_uniform(rng, 0.2, 1.0)),
    }
}

impl State {
    pub fn init<R: Rng + ?Sized>(
        model: &Model,
        config: &SamplerConfig,
        fixed: Option<&GlobalParams>,
        rng: &mut R,
    ) -> Result<Self> {
        let p = &model.config.priors;
        let global = match fixed {
            Some(g) => g.clone(),
            None => initial_globals(model, p, rng),
        };
        let countries: Vec<CountryParams> = model
            .countries
            .iter()
            .map(|c| initial_country(model, c, &global, rng))
            .collect();
        let series: Vec<SeriesParams> = model
            .series
            .iter()
            .map(|s| SeriesParams {
                beta0: global.mu0.get(s.source_type).copied().unwrap_or(0.0),
                beta1: global.mu1.get(s.source_type).copied().unwrap_or(0.0),
            })
            .collect();
        let psi = model
            .countries
            .iter()
            .zip(&countries)
            .map(|(c, cp)| c.psi_obs(&CountryModel::theta_of(cp)))
            .collect();
        let latent = model
            .countries
            .iter()
            .zip(&countries)
            .map(|(c, cp)| {
                let theta = CountryModel::theta_of(cp);
                c.bounds
                    .iter()
                    .map(|b| {
                        let at = dot(&b.row, &theta);
                        match b.log_m {
                            Some(lm) => at + 0.5 * lm,
                            None => at - b.v,
                        }
                    })
                    .collect()
            })
            .collect();
        let w = model.countries.iter().map(|c| vec![1.0; c.obs.len()]).collect();
        let st = State {
            global,
            countries,
            series,
            w,
            latent,
            psi,
        };
        if !config.prior_only {
            st.check_finite(model)?;
        }
        Ok(st)
    }

    fn check_finite(&self, model: &Model) -> Result<()> {
        let fail = |block: String| Err(Error::NonFiniteInit { block });
        if model::log_prior(model, &self.global, &self.countries, &self.series)?.is_infinite() {
            return fail("prior".into());
        }
        for (ci, c) in model.countries.iter().enumerate() {
            let cp = &self.countries[ci];
            for (o, &psi) in c.obs.iter().zip(&self.psi[ci]) {
                let s = o.series.map(|i| &self.series[i]);
                let ll = model::log_likelihood(o, psi, &self.global, s, cp.theta_vr)?;
                if !ll.is_finite() {
                    return fail(format!("likelihood of {} at {}", c.code, o.year));
                }
            }
        }
        if !model::log_posterior(model, &self.global, &self.countries, &self.series, &self.latent)?.is_finite() {
            return fail("bounds".into());
        }
        Ok(())
    }

    pub fn snapshot(&self, model: &Model) -> Draw {
        let alpha = model
            .countries
            .iter()
            .zip(&self.countries)
            .map(|(c, cp)| {
                let free = c.reparam.to_alpha(&crate::basis::CoefficientReparam {
                    lambda0: cp.lambda0,
                    lambda1: cp.lambda1,
                    eps: cp.eps.clone(),
                });
                c.map.expand(&free.expect("eps length fixed by the model"))
            })
            .collect();
        Draw {
            global: self.global.clone(),
            countries: self.countries.clone(),
            series: self.series.clone(),
            alpha,
            bounds: self.latent.clone(),
        }
    }

    /// Conditional Gaussian `(mean, variance)` of `y_i − Ψ_i` given the
    /// current latent weights.
    pub fn gauss_term(&self, model: &Model, ci: usize, i: usize) -> (f64, f64) {
        let o = &model.countries[ci].obs[i];
        let v2 = o.v * o.v;
        match o.branch {
            Branch::CompleteVr => (0.0, v2),
            Branch::IncompleteVrTrend => (self.countries[ci].theta_vr.map_or(0.0, f64::ln), v2),
            Branch::Normal | Branch::StudentT => {
                let phi = self.bias(model, ci, i);
                let om = self.global.omega.get(o.subtype).copied().unwrap_or(0.0);
                let var = om * om + v2;
                if o.branch == Branch::StudentT {
                    (phi, var / self.w[ci][i])
                } else {
                    (phi, var)
                }
            }
            Branch::Excluded => (0.0, f64::INFINITY),
        }
    }

    pub fn bias(&self, model: &Model, ci: usize, i: usize) -> f64 {
        let o = &model.countries[ci].obs[i];
        match o.series {
            Some(s) => model::bias_mean(&self.series[s], o.z),
            None => self.global.mu0.get(o.source_type).copied().unwrap_or(0.0),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
