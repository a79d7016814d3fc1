//! Metropolis-within-Gibbs sampler over the joint posterior.
//!
//! Each sweep updates, in order: the latent bound values, each country's
//! spline block, the series biases, the conjugate means, the random-walk
//! blocks for scales and the collapsed Student-t parameters, and finally the
//! latent t precisions. Chains are independent and seeded from
//! `(seed, chain_index)`.

mod adapt;
mod blocks;
pub mod diagnostics;
mod state;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CountryParams, GlobalParams, Model, SeriesParams};
use crate::par::{self, Execution};
use crate::stats;
use crate::types::{SourceSubtype, SourceType};

pub use diagnostics::{effective_sample_size, gelman_rubin, posterior_summary, Rhat, Summary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Proposal scales adapt during the first `adapt_window` iterations,
    /// capped at `burn_in`. `None` adapts through the whole burn-in.
    pub adapt_window: Option<usize>,
    pub execution: Execution,
    /// Drop every data term; the chain then targets the prior.
    pub prior_only: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self::global_default(1)
    }
}

impl SamplerConfig {
    pub fn global_default(seed: u64) -> Self {
        Self {
            n_chains: 6,
            n_iter: 50_000,
            burn_in: 10_000,
            thin: 20,
            seed,
            adapt_window: None,
            execution: Execution::default(),
            prior_only: false,
        }
    }

    pub fn country_default(seed: u64) -> Self {
        Self {
            n_iter: 35_000,
            ..Self::global_default(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::SamplerConfig("n_chains must be at least 1".into()));
        }
        if self.burn_in >= self.n_iter {
            return Err(Error::SamplerConfig(format!(
                "burn_in ({}) must be below n_iter ({})",
                self.burn_in, self.n_iter
            )));
        }
        if self.thin == 0 {
            return Err(Error::SamplerConfig("thin must be at least 1".into()));
        }
        Ok(())
    }

    pub fn retained_per_chain(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }

    fn adapt_until(&self) -> usize {
        self.adapt_window.unwrap_or(self.burn_in).min(self.burn_in)
    }
}

/// One joint posterior sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub global: GlobalParams,
    pub countries: Vec<CountryParams>,
    pub series: Vec<SeriesParams>,
    /// Expanded spline coefficients over the `K` observation splines.
    pub alpha: Vec<Vec<f64>>,
    /// Sampled lower bounds `L`, per country and constraint.
    pub bounds: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Chain {
    pub draws: Vec<Draw>,
    /// Post-adaptation acceptance rate per Metropolis block.
    pub acceptance: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub rhat: BTreeMap<String, Rhat>,
    pub ess: BTreeMap<String, f64>,
    /// Acceptance rates averaged over chains.
    pub acceptance: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct Posterior {
    pub chains: Vec<Chain>,
    pub diagnostics: Diagnostics,
    /// `true` when global hyperparameters were held fixed.
    pub fixed_globals: bool,
}

impl Posterior {
    pub fn draws(&self) -> impl Iterator<Item = &Draw> + '_ {
        self.chains.iter().flat_map(|c| c.draws.iter())
    }

    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }

    /// Traces of every scalar parameter, one vector per chain.
    pub fn traces(&self, model: &Model) -> BTreeMap<String, Vec<Vec<f64>>> {
        let names = scalar_names(model, !self.fixed_globals);
        let mut out: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
        let mut buf = Vec::with_capacity(names.len());
        for chain in &self.chains {
            let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(chain.draws.len()); names.len()];
            for d in &chain.draws {
                buf.clear();
                scalar_values(model, d, !self.fixed_globals, &mut buf);
                for (c, v) in cols.iter_mut().zip(&buf) {
                    c.push(*v);
                }
            }
            for (n, c) in names.iter().zip(cols) {
                out.entry(n.clone()).or_default().push(c);
            }
        }
        out
    }

    /// Posterior medians of the global hyperparameters.
    pub fn global_medians(&self) -> GlobalParams {
        let draws: Vec<&Draw> = self.draws().collect();
        let first = &draws[0].global;
        let med =
            |f: &dyn Fn(&GlobalParams) -> f64| stats::median(&draws.iter().map(|d| f(&d.global)).collect::<Vec<_>>());
        let mut g = first.clone();
        g.chi = med(&|g| g.chi);
        g.phi_sigma = med(&|g| g.phi_sigma);
        g.nu = med(&|g| g.nu);
        for d in first.mu0.keys().collect::<Vec<SourceType>>() {
            g.mu0.insert(d, med(&|g| g.mu0.get(d).copied().unwrap_or(f64::NAN)));
        }
        for d in first.phi0.keys().collect::<Vec<SourceType>>() {
            g.phi0.insert(d, med(&|g| g.phi0.get(d).copied().unwrap_or(f64::NAN)));
            g.mu1.insert(d, med(&|g| g.mu1.get(d).copied().unwrap_or(f64::NAN)));
            g.phi1.insert(d, med(&|g| g.phi1.get(d).copied().unwrap_or(f64::NAN)));
        }
        for s in first.omega.keys().collect::<Vec<SourceSubtype>>() {
            g.omega.insert(s, med(&|g| g.omega.get(s).copied().unwrap_or(f64::NAN)));
        }
        g
    }
}

/// Names of the scalar parameters summarized in diagnostics and traces.
pub fn scalar_names(model: &Model, include_globals: bool) -> Vec<String> {
    let mut n = Vec::new();
    if include_globals {
        if model.config.fixed_sigma.is_none() {
            n.push("chi".to_string());
            n.push("phi_sigma".to_string());
        }
        for &d in &model.types {
            n.push(format!("mu0[{d}]"));
            if d.is_repeated() {
                n.push(format!("phi0[{d}]"));
                n.push(format!("mu1[{d}]"));
                n.push(format!("phi1[{d}]"));
            }
        }
        for &s in &model.subtypes {
            n.push(format!("omega[{s}]"));
        }
        if model.has_t_branch() {
            n.push("nu".to_string());
        }
    }
    for c in &model.countries {
        n.push(format!("lambda0[{}]", c.code));
        n.push(format!("lambda1[{}]", c.code));
        if model.config.fixed_sigma.is_none() {
            n.push(format!("sigma[{}]", c.code));
        }
        if c.has_theta {
            n.push(format!("theta_vr[{}]", c.code));
        }
        for k in 0..c.basis.k() {
            n.push(format!("alpha[{}][{}]", c.code, k + 1));
        }
    }
    for s in &model.series {
        n.push(format!("beta0[{}]", s.id));
        n.push(format!("beta1[{}]", s.id));
    }
    n
}

fn scalar_values(model: &Model, d: &Draw, include_globals: bool, out: &mut Vec<f64>) {
    let g = &d.global;
    if include_globals {
        if model.config.fixed_sigma.is_none() {
            out.push(g.chi);
            out.push(g.phi_sigma);
        }
        for &t in &model.types {
            out.push(g.mu0.get(t).copied().unwrap_or(f64::NAN));
            if t.is_repeated() {
                out.push(g.phi0.get(t).copied().unwrap_or(f64::NAN));
                out.push(g.mu1.get(t).copied().unwrap_or(f64::NAN));
                out.push(g.phi1.get(t).copied().unwrap_or(f64::NAN));
            }
        }
        for &s in &model.subtypes {
            out.push(g.omega.get(s).copied().unwrap_or(f64::NAN));
        }
        if model.has_t_branch() {
            out.push(g.nu);
        }
    }
    for ((c, p), a) in model.countries.iter().zip(&d.countries).zip(&d.alpha) {
        out.push(p.lambda0);
        out.push(p.lambda1);
        if model.config.fixed_sigma.is_none() {
            out.push(p.sigma);
        }
        if c.has_theta {
            out.push(p.theta_vr.unwrap_or(f64::NAN));
        }
        out.extend_from_slice(a);
    }
    for s in &d.series {
        out.push(s.beta0);
        out.push(s.beta1);
    }
}

pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// Sample the full joint posterior, hyperparameters included.
pub fn run_global(model: &Model, config: &SamplerConfig) -> Result<Posterior> {
    run(model, config, None)
}

/// Sample country and series parameters with the global hyperparameters
/// held at `fixed`.
pub fn run_country(model: &Model, fixed: &GlobalParams, config: &SamplerConfig) -> Result<Posterior> {
    state::check_fixed_globals(model, fixed)?;
    run(model, config, Some(fixed))
}

fn run(model: &Model, config: &SamplerConfig, fixed: Option<&GlobalParams>) -> Result<Posterior> {
    config.validate()?;
    let chains = par::map_indices(config.execution, config.n_chains, |i| {
        run_chain(model, config, fixed, i)
    });
    let chains: Vec<Chain> = chains.into_iter().collect::<Result<_>>()?;
    let mut post = Posterior {
        chains,
        diagnostics: Diagnostics {
            rhat: BTreeMap::new(),
            ess: BTreeMap::new(),
            acceptance: BTreeMap::new(),
        },
        fixed_globals: fixed.is_some(),
    };
    post.diagnostics = diagnostics::compute(model, &post);
    Ok(post)
}

fn run_chain(model: &Model, config: &SamplerConfig, fixed: Option<&GlobalParams>, index: usize) -> Result<Chain> {
    let mut rng = chain_rng(config.seed, index);
    let mut st = state::State::init(model, config, fixed, &mut rng)?;
    let mut ad = adapt::Adaptation::new(model);
    let adapt_until = config.adapt_until();
    let mut draws = Vec::with_capacity(config.retained_per_chain());
    for it in 0..config.n_iter {
        let adapting = it < adapt_until;
        if it == config.burn_in {
            ad.reset_counts();
        }
        blocks::sweep(model, config, fixed.is_some(), &mut st, &mut ad, adapting, &mut rng);
        if it >= config.burn_in && (it - config.burn_in + 1).is_multiple_of(config.thin) {
            draws.push(st.snapshot(model));
        }
    }
    Ok(Chain {
        draws,
        acceptance: ad.rates(model),
    })
}

#[cfg(test)]
mod tests;
