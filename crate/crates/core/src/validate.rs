//! Out-of-sample validation: survey-date cutoff, left-out predictive
//! distributions, and error, coverage and interval-score summaries.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::OnceLock;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest;
use crate::model::{self, Branch, Model, ModelConfig};
use crate::par::{self, Execution};
use crate::project::{self, GlobalChangeDist};
use crate::sampler::{self, Posterior, SamplerConfig};
use crate::stats;
use crate::types::{Observation, SourceSubtype};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationConfig {
    pub cutoff_year: f64,
    pub n_sets: usize,
    /// Interval significance level `x`.
    pub significance: f64,
    /// Countries need at least this U5MR at `reference_year`.
    pub high_mortality_threshold: f64,
    pub reference_year: f64,
    /// Left-out observations split into `≤ split_year` and `> split_year`.
    pub split_year: f64,
    pub estimate_years: Vec<f64>,
    pub arr_years: (f64, f64),
    pub seed: u64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            cutoff_year: 2006.0,
            n_sets: 100,
            significance: 0.1,
            high_mortality_threshold: 40.0,
            reference_year: 1990.0,
            split_year: 2005.0,
            estimate_years: vec![2000.0, 2005.0],
            arr_years: (1990.0, 2005.0),
            seed: 1,
        }
    }
}

impl ValidationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.significance > 0.0 && self.significance < 1.0) {
            return Err(Error::Config(format!(
                "significance must be in (0, 1), got {}",
                self.significance
            )));
        }
        if self.n_sets == 0 {
            return Err(Error::Config("n_sets must be at least 1".into()));
        }
        Ok(())
    }
}

/// Series-atomic split by collection date. Non-VR series move as a whole
/// according to their latest collection date; VR points move individually.
pub fn split_training(observations: &[Observation], cutoff: f64) -> (Vec<Observation>, Vec<Observation>) {
    let mut latest: BTreeMap<&str, f64> = BTreeMap::new();
    for o in observations.iter().filter(|o| !o.is_vr()) {
        let e = latest.entry(o.series_id.as_str()).or_insert(f64::NEG_INFINITY);
        *e = e.max(o.collection_year());
    }
    observations.iter().cloned().partition(|o| {
        let date = if o.is_vr() {
            o.collection_year()
        } else {
            latest[o.series_id.as_str()]
        };
        date < cutoff
    })
}

/// Interval score on the log scale at significance `x`.
pub fn interval_score(l: f64, r: f64, u: f64, x: f64) -> Result<f64> {
    if !(l > 0.0 && r > 0.0 && u > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "interval score needs positive values, got l={l} r={r} u={u}"
        )));
    }
    interval_score_linear(l.ln(), r.ln(), u.ln(), x)
}

/// Interval score on the natural scale of its arguments.
pub fn interval_score_linear(l: f64, r: f64, u: f64, x: f64) -> Result<f64> {
    if !(l <= r) {
        return Err(Error::InvalidArgument(format!("interval lower {l} above upper {r}")));
    }
    let mut s = r - l;
    if u < l {
        s += 2.0 / x * (l - u);
    }
    if u > r {
        s += 2.0 / x * (u - r);
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coverage {
    pub inside: f64,
    pub below: f64,
    pub above: f64,
}

/// Fractions of `(l, r, u)` triples with `u` inside the closed interval,
/// below it and above it.
pub fn coverage(points: &[(f64, f64, f64)]) -> Coverage {
    let n = points.len();
    if n == 0 {
        return Coverage {
            inside: f64::NAN,
            below: f64::NAN,
            above: f64::NAN,
        };
    }
    let below = points.iter().filter(|(l, _, u)| u < l).count();
    let above = points.iter().filter(|(_, r, u)| u > r).count();
    let inside = n - below - above;
    let f = |k: usize| k as f64 / n as f64;
    Coverage {
        inside: f(inside),
        below: f(below),
        above: f(above),
    }
}

/// Annual rate of reduction in percent per year.
pub fn arr(level1: f64, level2: f64, t1: f64, t2: f64) -> Result<f64> {
    if !(level1 > 0.0 && level2 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ARR needs positive levels, got {level1} and {level2}"
        )));
    }
    if t1 == t2 {
        return Err(Error::InvalidArgument("ARR needs two distinct years".into()));
    }
    Ok(100.0 * (level1 / level2).ln() / (t2 - t1))
}

/// For each of `n_sets` sets, one uniformly drawn candidate per country.
/// Countries with no candidates are dropped with a warning.
pub fn sample_validation_sets(
    pools: &BTreeMap<String, Vec<usize>>,
    n_sets: usize,
    seed: u64,
) -> (Vec<Vec<usize>>, Vec<String>) {
    let mut warnings = Vec::new();
    let usable: Vec<&Vec<usize>> = pools
        .iter()
        .filter_map(|(c, p)| {
            if p.is_empty() {
                warnings.push(format!("{c}: no left-out observations, dropped from validation sets"));
                None
            } else {
                Some(p)
            }
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sets = (0..n_sets)
        .map(|_| {
            usable
                .iter()
                .map(|p| *p.choose(&mut rng).expect("nonempty pool"))
                .collect()
        })
        .collect();
    (sets, warnings)
}

/// A left-out observation with the subtype its series would have had.
#[derive(Debug, Clone)]
pub struct LeftOut {
    pub obs: Observation,
    pub subtype: SourceSubtype,
}

pub fn leftout_targets(test: &[Observation]) -> Vec<LeftOut> {
    let meta: BTreeMap<String, SourceSubtype> = ingest::series_meta(test)
        .into_iter()
        .map(|m| (m.series_id, m.subtype))
        .collect();
    test.iter()
        .map(|o| LeftOut {
            obs: o.clone(),
            subtype: meta[&o.series_id],
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictive {
    /// Natural-scale predictive draws.
    pub draws: Vec<f64>,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Posterior predictions from one fitted model with projected coefficients.
pub struct Predictor<'a> {
    model: &'a Model,
    post: &'a Posterior,
    dist: GlobalChangeDist,
    w: f64,
    seed: u64,
    exec: Execution,
    projected: Vec<OnceLock<Vec<Vec<f64>>>>,
}

impl<'a> Predictor<'a> {
    pub fn new(
        model: &'a Model,
        post: &'a Posterior,
        dist: GlobalChangeDist,
        w: f64,
        seed: u64,
        exec: Execution,
    ) -> Self {
        Self {
            model,
            post,
            dist,
            w,
            seed,
            exec,
            projected: (0..model.countries.len()).map(|_| OnceLock::new()).collect(),
        }
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    /// Projected coefficient draws over all `P` splines of country `ci`.
    pub fn coefficients(&self, ci: usize) -> Result<&Vec<Vec<f64>>> {
        if let Some(a) = self.projected[ci].get() {
            return Ok(a);
        }
        let a = project::project_coefficients(self.model, self.post, ci, self.dist, self.w, self.seed, self.exec)?;
        Ok(self.projected[ci].get_or_init(|| a))
    }

    /// Draws of Ψ at `t` for country `ci`.
    pub fn psi_draws(&self, ci: usize, t: f64) -> Result<Vec<f64>> {
        let b = self.model.countries[ci].basis.eval(t)?;
        Ok(self
            .coefficients(ci)?
            .iter()
            .map(|a| b.iter().zip(a).map(|(w, x)| w * x).sum())
            .collect())
    }

    pub fn trajectory(&self, ci: usize, years: &[f64]) -> Result<Vec<project::TrajectoryPoint>> {
        project::trajectory(self.coefficients(ci)?, &self.model.countries[ci].basis, years)
    }

    /// Predictive distribution of a left-out observation. `index` selects
    /// the RNG stream.
    pub fn predictive_leftout(&self, target: &LeftOut, index: usize) -> Result<Predictive> {
        let o = &target.obs;
        let ci = self
            .model
            .country_index(&o.country)
            .ok_or_else(|| Error::InvalidArgument(format!("{}: country not in the fitted model", o.country)))?;
        let psi = self.psi_draws(ci, o.ref_year)?;
        let branch = model::route(o, false)?;
        let config = &self.model.config;
        let v = match branch {
            Branch::CompleteVr => ingest::observation_vr_sd(o)?,
            Branch::Normal | Branch::StudentT => o
                .reported_se
                .unwrap_or_else(|| model::default_sampling_sd(&config.priors, target.subtype)),
            _ => {
                return Err(Error::Unrouteable(format!(
                    "series {} at {}: no predictive distribution for incomplete VR",
                    o.series_id, o.ref_year
                )))
            }
        };
        let d = o.source_type;
        let seen = self.model.series.iter().position(|s| s.id == o.series_id);
        let z = o.retrospective_period().unwrap_or(model::RETRO_CENTER);
        let missing = |what: &str| Error::MissingHyperparameter(format!("{what} for {d}"));
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x2545_f491_4f6c_dd1d);
        rng.set_stream(index as u64);
        let mut draws = Vec::with_capacity(psi.len());
        for (draw, p) in self.post.draws().zip(&psi) {
            let g = &draw.global;
            let y = match branch {
                Branch::CompleteVr => p + v * stats::std_normal(&mut rng),
                _ => {
                    let phi = if d.is_repeated() {
                        let beta = match seen {
                            Some(s) => draw.series[s],
                            None => {
                                let mu0 = *g.mu0.get(d).ok_or_else(|| missing("mu0"))?;
                                let phi0 = *g.phi0.get(d).ok_or_else(|| missing("phi0"))?;
                                let mu1 = *g.mu1.get(d).ok_or_else(|| missing("mu1"))?;
                                let phi1 = *g.phi1.get(d).ok_or_else(|| missing("phi1"))?;
                                model::SeriesParams {
                                    beta0: mu0 + phi0 * stats::std_normal(&mut rng),
                                    beta1: mu1 + phi1 * stats::std_normal(&mut rng),
                                }
                            }
                        };
                        model::bias_mean(&beta, z)
                    } else {
                        *g.mu0.get(d).ok_or_else(|| missing("mu0"))?
                    };
                    let omega = *g
                        .omega
                        .get(target.subtype)
                        .ok_or_else(|| Error::MissingHyperparameter(format!("omega for {}", target.subtype)))?;
                    let scale = model::obs_scale(omega, v);
                    let e = if branch == Branch::StudentT {
                        StudentT::new(g.nu).expect("nu within its support").sample(&mut rng)
                    } else {
                        stats::std_normal(&mut rng)
                    };
                    p + phi + scale * e
                }
            };
            draws.push(y.exp());
        }
        let s = sampler::diagnostics::summary90(&draws)?;
        Ok(Predictive {
            draws,
            median: s.median,
            lower: s.lower,
            upper: s.upper,
        })
    }
}

/// One summary statistic with its spread across validation sets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metric {
    pub name: &'static str,
    pub value: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportTable {
    pub table: String,
    pub w: f64,
    pub subset: String,
    pub n_countries: usize,
    pub metrics: Vec<Metric>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub cutoff_year: f64,
    pub tables: Vec<ReportTable>,
    pub warnings: Vec<String>,
}

/// Error summaries of one group: `errors[i] = truth − prediction`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct GroupStats {
    median_error: f64,
    mean_error: f64,
    median_abs_error: f64,
    mean_abs_error: f64,
    median_rel_error: f64,
    mean_rel_error: f64,
    median_abs_rel_error: f64,
    mean_abs_rel_error: f64,
    interval_score: f64,
    below: f64,
    inside: f64,
    above: f64,
}

const METRIC_NAMES: [&str; 12] = [
    "median_error",
    "mean_error",
    "median_abs_error",
    "mean_abs_error",
    "median_rel_error",
    "mean_rel_error",
    "median_abs_rel_error",
    "mean_abs_rel_error",
    "interval_score",
    "pct_below",
    "pct_inside",
    "pct_above",
];

impl GroupStats {
    fn values(&self) -> [f64; 12] {
        [
            self.median_error,
            self.mean_error,
            self.median_abs_error,
            self.mean_abs_error,
            self.median_rel_error,
            self.mean_rel_error,
            self.median_abs_rel_error,
            self.mean_abs_rel_error,
            self.interval_score,
            100.0 * self.below,
            100.0 * self.inside,
            100.0 * self.above,
        ]
    }
}

/// One scored prediction: truth, median and 90% interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub truth: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
    pub score: f64,
}

fn group_stats(items: &[Scored]) -> GroupStats {
    let e: Vec<f64> = items.iter().map(|s| s.truth - s.median).collect();
    let ae: Vec<f64> = e.iter().map(|x| x.abs()).collect();
    let re: Vec<f64> = items.iter().zip(&e).map(|(s, e)| 100.0 * e / s.truth).collect();
    let are: Vec<f64> = re.iter().map(|x| x.abs()).collect();
    let cov = coverage(&items.iter().map(|s| (s.lower, s.upper, s.truth)).collect::<Vec<_>>());
    GroupStats {
        median_error: stats::median(&e),
        mean_error: stats::mean(&e),
        median_abs_error: stats::median(&ae),
        mean_abs_error: stats::mean(&ae),
        median_rel_error: stats::median(&re),
        mean_rel_error: stats::mean(&re),
        median_abs_rel_error: stats::median(&are),
        mean_abs_rel_error: stats::mean(&are),
        interval_score: stats::mean(&items.iter().map(|s| s.score).collect::<Vec<_>>()),
        below: cov.below,
        inside: cov.inside,
        above: cov.above,
    }
}

/// Median across sets of each statistic, with its across-set sd.
fn summarize_sets(per_set: &[GroupStats]) -> Vec<Metric> {
    let vals: Vec<[f64; 12]> = per_set.iter().map(GroupStats::values).collect();
    (0..12)
        .map(|k| {
            let col: Vec<f64> = vals.iter().map(|v| v[k]).collect();
            Metric {
                name: METRIC_NAMES[k],
                value: stats::median(&col),
                sd: if col.len() > 1 {
                    stats::sample_variance(&col).sqrt()
                } else {
                    0.0
                },
            }
        })
        .collect()
}

fn single_group(items: &[Scored]) -> Vec<Metric> {
    let g = group_stats(items);
    g.values()
        .iter()
        .zip(METRIC_NAMES)
        .map(|(v, n)| Metric {
            name: n,
            value: *v,
            sd: 0.0,
        })
        .collect()
}

/// Full-data medians `Λ̂` compared against training intervals `Λ̃` at the
/// same (country, quantity) keys. Scores of level quantities use the log
/// scale; `linear` keys (rates) use the natural scale.
pub fn estimate_errors(
    full: &BTreeMap<String, f64>,
    training: &BTreeMap<String, (f64, f64, f64)>,
    x: f64,
    linear: bool,
) -> Result<Vec<Scored>> {
    let mut out = Vec::new();
    for (key, &truth) in full {
        let Some(&(median, lower, upper)) = training.get(key) else {
            continue;
        };
        let score = if linear {
            interval_score_linear(lower, upper, truth, x)?
        } else {
            interval_score(lower, upper, truth, x)?
        };
        out.push(Scored {
            truth,
            median,
            lower,
            upper,
            score,
        });
    }
    Ok(out)
}

/// ARR draws between `t1` and `t2` from coefficient draws.
pub fn arr_draws(pred: &Predictor<'_>, ci: usize, t1: f64, t2: f64) -> Result<Vec<f64>> {
    let a = pred.psi_draws(ci, t1)?;
    let b = pred.psi_draws(ci, t2)?;
    a.iter().zip(&b).map(|(x, y)| arr(x.exp(), y.exp(), t1, t2)).collect()
}

/// Inputs shared by every pooling weight in a validation sweep.
pub struct Fits<'a> {
    pub training_model: &'a Model,
    pub training: &'a Posterior,
    pub full_model: &'a Model,
    pub full: &'a Posterior,
    pub test: &'a [Observation],
    pub training_obs: &'a [Observation],
}

pub fn fit_both(
    observations: &[Observation],
    model_config: &ModelConfig,
    sampler_config: &SamplerConfig,
    cutoff: f64,
) -> Result<(Vec<Observation>, Vec<Observation>, Model, Posterior, Model, Posterior)> {
    let (train, test) = split_training(observations, cutoff);
    // training basis must reach the left-out years
    let horizon = model_config.projection_end_or_default().max(
        observations
            .iter()
            .map(|o| o.ref_year)
            .fold(f64::NEG_INFINITY, f64::max),
    );
    let cfg = ModelConfig {
        projection_end: Some(horizon),
        ..model_config.clone()
    };
    let tm = Model::assemble(&train, &cfg)?;
    let fm = Model::assemble(observations, &cfg)?;
    let tp = sampler::run_global(&tm, sampler_config)?;
    let fp = sampler::run_global(&fm, sampler_config)?;
    Ok((train, test, tm, tp, fm, fp))
}

/// Validation tables for every pooling weight in `weights`.
pub fn run_validation(
    fits: &Fits<'_>,
    weights: &[f64],
    config: &ValidationConfig,
    exec: Execution,
) -> Result<ValidationReport> {
    config.validate()?;
    let mut warnings = Vec::new();
    let mut tables = Vec::new();
    let x = config.significance;
    let train_dist =
        project::build_global_dist(&project::posterior_median_changes(fits.training_model, fits.training))?;
    let full_dist = project::build_global_dist(&project::posterior_median_changes(fits.full_model, fits.full))?;

    let train_countries: BTreeSet<&str> = fits.training_obs.iter().map(|o| o.country.as_str()).collect();
    let targets = leftout_targets(fits.test);

    for &w in weights {
        let tpred = Predictor::new(fits.training_model, fits.training, train_dist, w, config.seed, exec);
        let fpred = Predictor::new(fits.full_model, fits.full, full_dist, w, config.seed, exec);

        // high-mortality filter on full-data estimates
        let mut eligible: BTreeSet<String> = BTreeSet::new();
        for (ci, c) in fits.full_model.countries.iter().enumerate() {
            let level = match fpred.psi_draws(ci, config.reference_year) {
                Ok(p) => stats::median(&p).exp(),
                Err(_) => continue,
            };
            if level >= config.high_mortality_threshold
                && train_countries.contains(c.code.as_str())
                && fits.training_model.country_index(&c.code).is_some()
            {
                eligible.insert(c.code.clone());
            }
        }

        // left-out observations
        let scored: Vec<Option<Scored>> = par::map_indices(exec, targets.len(), |i| {
            let t = &targets[i];
            if !eligible.contains(&t.obs.country) {
                return None;
            }
            let p = tpred.predictive_leftout(t, i).ok()?;
            let score = interval_score(p.lower, p.upper, t.obs.u5mr, x).ok()?;
            Some(Scored {
                truth: t.obs.u5mr,
                median: p.median,
                lower: p.lower,
                upper: p.upper,
                score,
            })
        });
        let skipped = targets
            .iter()
            .zip(&scored)
            .filter(|(t, s)| s.is_none() && eligible.contains(&t.obs.country))
            .count();
        if skipped > 0 {
            warnings.push(format!("W={w}: {skipped} left-out observations could not be predicted"));
        }
        for (subset, keep) in [("le_split", true), ("gt_split", false)] {
            let mut pools: BTreeMap<String, Vec<usize>> = BTreeMap::new();
            for (i, (t, s)) in targets.iter().zip(&scored).enumerate() {
                if s.is_some() && (t.obs.ref_year <= config.split_year) == keep {
                    pools.entry(t.obs.country.clone()).or_default().push(i);
                }
            }
            if pools.is_empty() {
                continue;
            }
            let (sets, _) = sample_validation_sets(&pools, config.n_sets, config.seed);
            let per_set: Vec<GroupStats> = sets
                .iter()
                .map(|set| {
                    let items: Vec<Scored> = set.iter().map(|&i| scored[i].expect("pooled")).collect();
                    group_stats(&items)
                })
                .collect();
            tables.push(ReportTable {
                table: "leftout_observations".into(),
                w,
                subset: subset.into(),
                n_countries: pools.len(),
                metrics: summarize_sets(&per_set),
            });
        }

        // estimates: levels and ARR
        let mut full_level: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        let mut train_level: BTreeMap<String, BTreeMap<String, (f64, f64, f64)>> = BTreeMap::new();
        let mut quantities: Vec<(String, bool)> = config
            .estimate_years
            .iter()
            .map(|y| (format!("u5mr_{y}"), false))
            .collect();
        let (t1, t2) = config.arr_years;
        quantities.push((format!("arr_{t1}_{t2}"), true));
        for code in &eligible {
            let fci = fits.full_model.country_index(code).expect("eligible");
            let tci = fits.training_model.country_index(code).expect("eligible");
            for y in &config.estimate_years {
                let key = format!("u5mr_{y}");
                let (Ok(f), Ok(t)) = (fpred.psi_draws(fci, *y), tpred.psi_draws(tci, *y)) else {
                    continue;
                };
                let f: Vec<f64> = f.iter().map(|p| p.exp()).collect();
                let t: Vec<f64> = t.iter().map(|p| p.exp()).collect();
                let s = sampler::diagnostics::summary90(&t)?;
                full_level
                    .entry(key.clone())
                    .or_default()
                    .insert(code.clone(), stats::median(&f));
                train_level
                    .entry(key)
                    .or_default()
                    .insert(code.clone(), (s.median, s.lower, s.upper));
            }
            let key = format!("arr_{t1}_{t2}");
            if let (Ok(f), Ok(t)) = (arr_draws(&fpred, fci, t1, t2), arr_draws(&tpred, tci, t1, t2)) {
                let s = sampler::diagnostics::summary90(&t)?;
                full_level
                    .entry(key.clone())
                    .or_default()
                    .insert(code.clone(), stats::median(&f));
                train_level
                    .entry(key)
                    .or_default()
                    .insert(code.clone(), (s.median, s.lower, s.upper));
            }
        }
        for (q, linear) in quantities {
            let (Some(f), Some(t)) = (full_level.get(&q), train_level.get(&q)) else {
                continue;
            };
            let items = estimate_errors(f, t, x, linear)?;
            if items.is_empty() {
                continue;
            }
            tables.push(ReportTable {
                table: "estimates".into(),
                w,
                subset: q,
                n_countries: items.len(),
                metrics: single_group(&items),
            });
        }
    }
    Ok(ValidationReport {
        cutoff_year: config.cutoff_year,
        tables,
        warnings,
    })
}

impl ValidationReport {
    pub fn write_csv<W: Write>(&self, w: W, path: &std::path::Path) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let e = |err| Error::csv(path, err);
        wr.write_record(["table", "w", "subset", "n_countries", "metric", "value", "sd"])
            .map_err(e)?;
        for t in &self.tables {
            for m in &t.metrics {
                wr.write_record([
                    t.table.clone(),
                    format!("{}", t.w),
                    t.subset.clone(),
                    t.n_countries.to_string(),
                    m.name.to_string(),
                    format!("{:.6}", m.value),
                    format!("{:.6}", m.sd),
                ])
                .map_err(e)?;
            }
        }
        wr.flush().map_err(|err| Error::io(path, err))
    }

    pub fn summary_text(&self) -> String {
        let mut s = format!("validation with training cutoff {}\n", self.cutoff_year);
        for t in &self.tables {
            let get = |n: &str| t.metrics.iter().find(|m| m.name == n).map_or(f64::NAN, |m| m.value);
            s.push_str(&format!(
                "{:<22} W={:<4} {:<22} countries={:<4} MAE={:.3} MARE={:.2}% score={:.3} below={:.1}% above={:.1}%\n",
                t.table,
                t.w,
                t.subset,
                t.n_countries,
                get("mean_abs_error"),
                get("mean_abs_rel_error"),
                get("interval_score"),
                get("pct_below"),
                get("pct_above"),
            ));
        }
        for w in &self.warnings {
            s.push_str(&format!("warning: {w}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::obs;
    use crate::types::SourceType;

    #[test]
    fn split_is_series_atomic() {
        let mut data = Vec::new();
        for y in 1990..2006 {
            data.push(obs(
                "A",
                "dhs06",
                SourceType::DhsDirect,
                y as f64,
                50.0,
                Some(2006.0),
                None,
            ));
            data.push(obs(
                "A",
                "dhs05",
                SourceType::DhsDirect,
                y as f64,
                50.0,
                Some(2005.0),
                None,
            ));
        }
        data.push(obs("A", "vr", SourceType::Vr, 2007.0, 20.0, None, None));
        data.push(obs("A", "vr", SourceType::Vr, 2004.0, 20.0, None, None));
        let (train, test) = split_training(&data, 2006.0);
        assert_eq!(train.len() + test.len(), data.len());
        assert!(test.iter().filter(|o| o.series_id == "dhs06").count() == 16);
        assert!(train.iter().all(|o| o.series_id != "dhs06"));
        assert!(train.iter().filter(|o| o.series_id == "dhs05").count() == 16);
        assert!(test.iter().any(|o| o.series_id == "vr" && o.ref_year == 2007.0));
        assert!(train.iter().any(|o| o.series_id == "vr" && o.ref_year == 2004.0));
    }

    #[test]
    fn interval_score_examples() {
        let a = interval_score(90.0, 110.0, 100.0, 0.1).unwrap();
        assert!((a - (110.0f64 / 90.0).ln()).abs() < 1e-15);
        assert!((a - 0.2007).abs() < 1e-4);
        assert_eq!(interval_score(90.0, 110.0, 90.0, 0.1).unwrap(), a);
        let b = interval_score(90.0, 110.0, 80.0, 0.1).unwrap();
        assert!((b - 2.556331).abs() < 1e-6, "{b}");
        assert!(interval_score(0.0, 110.0, 80.0, 0.1).is_err());
    }

    #[test]
    fn interval_score_minimized_when_covering() {
        let u: f64 = 50.0;
        let width = 0.3;
        let inside = interval_score(u * (-0.1f64).exp(), u * (0.2f64).exp(), u, 0.1).unwrap();
        assert!((inside - width).abs() < 1e-12);
        for shift in [0.25, 0.4, -0.35, -0.6] {
            let l = u * (shift - 0.15f64).exp();
            let r = l * width.exp();
            assert!(interval_score(l, r, u, 0.1).unwrap() > inside);
        }
    }

    #[test]
    fn coverage_counts() {
        let mut pts: Vec<(f64, f64, f64)> = (0..8).map(|_| (1.0, 2.0, 1.5)).collect();
        pts.push((1.0, 2.0, 0.5));
        pts.push((1.0, 2.0, 2.5));
        let c = coverage(&pts);
        assert!((c.inside - 0.8).abs() < 1e-15);
        assert!((c.below - 0.1).abs() < 1e-15);
        assert!((c.above - 0.1).abs() < 1e-15);
        assert_eq!(c.inside + c.below + c.above, 1.0);
        assert_eq!(coverage(&[(1.0, 2.0, 1.0), (1.0, 2.0, 2.0)]).inside, 1.0);
    }

    #[test]
    fn arr_examples() {
        let r = arr(100.0, 100.0 / 3.0, 1990.0, 2015.0).unwrap();
        assert!((r - 4.39).abs() < 0.05);
        assert_eq!(arr(50.0, 50.0, 1990.0, 2005.0).unwrap(), 0.0);
        assert!((arr(100.0, 50.0, 1990.0, 2005.0).unwrap() - 4.62).abs() < 0.005);
        assert!(arr(0.0, 50.0, 1990.0, 2005.0).is_err());
    }

    #[test]
    fn validation_sets() {
        let mut pools = BTreeMap::new();
        pools.insert("A".to_string(), vec![3]);
        pools.insert("B".to_string(), vec![4, 5, 6]);
        pools.insert("C".to_string(), vec![]);
        let (sets, warn) = sample_validation_sets(&pools, 50, 9);
        assert_eq!(sets.len(), 50);
        assert_eq!(warn.len(), 1);
        assert!(sets
            .iter()
            .all(|s| s.len() == 2 && s[0] == 3 && (4..=6).contains(&s[1])));
        let (again, _) = sample_validation_sets(&pools, 50, 9);
        assert_eq!(sets, again);
        let seen: BTreeSet<usize> = sets.iter().map(|s| s[1]).collect();
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn identical_estimates_have_zero_error() {
        let mut full = BTreeMap::new();
        let mut train = BTreeMap::new();
        for (i, c) in ["A", "B", "C"].iter().enumerate() {
            let v = 30.0 + i as f64;
            full.insert(c.to_string(), v);
            train.insert(c.to_string(), (v, v - 2.0, v + 2.0));
        }
        let items = estimate_errors(&full, &train, 0.1, false).unwrap();
        let m = single_group(&items);
        let get = |n: &str| m.iter().find(|x| x.name == n).unwrap().value;
        assert_eq!(get("mean_abs_error"), 0.0);
        assert_eq!(get("pct_inside"), 100.0);
    }

    #[test]
    fn estimate_errors_match_offsets() {
        let mut full = BTreeMap::new();
        let mut train = BTreeMap::new();
        let offsets = [1.0, -2.0, 3.0, 0.5];
        for (i, d) in offsets.iter().enumerate() {
            full.insert(format!("c{i}"), 50.0 + d);
            train.insert(format!("c{i}"), (50.0, 48.0, 52.0));
        }
        let items = estimate_errors(&full, &train, 0.1, false).unwrap();
        let g = group_stats(&items);
        assert!((g.mean_error - 0.625).abs() < 1e-12);
        assert!((g.mean_abs_error - 1.625).abs() < 1e-12);
        assert!((g.median_error - 0.75).abs() < 1e-12);
        assert!((g.above - 0.25).abs() < 1e-15);
        let expect_rel = offsets.iter().map(|d| 100.0 * d / (50.0 + d)).sum::<f64>() / 4.0;
        assert!((g.mean_rel_error - expect_rel).abs() < 1e-12);
    }
}
