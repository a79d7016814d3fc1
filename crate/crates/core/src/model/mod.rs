//! Joint posterior assembly: spline process priors, hierarchical smoothing
//! variances and the per-observation data model.

mod likelihood;
mod prior;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{self, CoefficientMap, Reparameterization, SplineBasis};
use crate::error::{Error, Result};
use crate::ingest::{self, IncompleteVrConfig};
use crate::types::{EnumMap, Observation, SourceSubtype, SourceType};

pub use likelihood::{bias_mean, bound_indicator, default_sampling_sd, log_likelihood, obs_scale, route, Branch};
pub use prior::{log_posterior, log_prior, NormalPrior, PriorConstants};

/// Retrospective periods are centred at this many years in the bias model.
pub const RETRO_CENTER: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictPeriod {
    pub country: String,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Knot spacing `I` in years.
    pub interval: f64,
    /// Last year covered by the basis. Defaults to the current year + 2.
    pub projection_end: Option<f64>,
    pub priors: PriorConstants,
    pub incomplete_vr: IncompleteVrConfig,
    pub conflict_periods: Vec<ConflictPeriod>,
    /// Merge single-year VR observations until their CV is below this.
    pub vr_cv_threshold: Option<f64>,
    /// Hold every country's smoothing sd at this value.
    pub fixed_sigma: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            interval: basis::DEFAULT_INTERVAL,
            projection_end: None,
            priors: PriorConstants::default(),
            incomplete_vr: IncompleteVrConfig::default(),
            conflict_periods: Vec::new(),
            vr_cv_threshold: Some(0.10),
            fixed_sigma: None,
        }
    }
}

impl ModelConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.interval > 0.0) {
            return Err(Error::Config(format!(
                "interval must be positive, got {}",
                self.interval
            )));
        }
        if let Some(s) = self.fixed_sigma {
            if !(s > 0.0) {
                return Err(Error::Config(format!("fixed_sigma must be positive, got {s}")));
            }
        }
        self.incomplete_vr.validate()?;
        self.priors.validate()
    }

    pub fn projection_end_or_default(&self) -> f64 {
        self.projection_end.unwrap_or_else(|| current_year() + 2.0)
    }
}

fn current_year() -> f64 {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    (1970.0 + secs / 31_556_952.0).floor()
}

/// Global (cross-country) hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalParams {
    pub chi: f64,
    pub phi_sigma: f64,
    pub mu0: EnumMap<SourceType, f64>,
    pub phi0: EnumMap<SourceType, f64>,
    pub mu1: EnumMap<SourceType, f64>,
    pub phi1: EnumMap<SourceType, f64>,
    pub omega: EnumMap<SourceSubtype, f64>,
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountryParams {
    pub lambda0: f64,
    pub lambda1: f64,
    pub eps: Vec<f64>,
    pub sigma: f64,
    pub theta_vr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SeriesParams {
    pub beta0: f64,
    pub beta1: f64,
}

/// A sampled bound on log(U5MR) at one year.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundConstraint {
    pub country: String,
    pub year: f64,
    pub lower: f64,
    pub upper: Option<f64>,
}

/// One observation as it enters the likelihood.
#[derive(Debug, Clone)]
pub struct ObsModel {
    /// Index into the observation slice given to [`Model::assemble`].
    pub source: usize,
    pub year: f64,
    pub y: f64,
    /// Sampling (or stochastic) sd on the log scale.
    pub v: f64,
    /// Raw retrospective period, years.
    pub z: f64,
    pub branch: Branch,
    pub source_type: SourceType,
    pub subtype: SourceSubtype,
    /// Index into [`Model::series`] for repeated-source series.
    pub series: Option<usize>,
    /// Nonzero basis weights `(k, b_k(t))` at `year`, over the K observation splines.
    pub basis_row: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct BoundModel {
    pub source: usize,
    pub year: f64,
    pub y: f64,
    pub v: f64,
    pub log_m: Option<f64>,
    /// Row mapping the spline block to Ψ at `year`.
    pub row: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CountryModel {
    pub code: String,
    pub basis: SplineBasis,
    pub map: CoefficientMap,
    pub reparam: Reparameterization,
    /// Maps the spline block `θ = (λ0, λ1, ε)` to the `K` coefficients α.
    pub alpha_map: DMatrix<f64>,
    /// `n_obs × dim(θ)`; row `i` gives Ψ at observation `i`.
    pub design: DMatrix<f64>,
    pub obs: Vec<ObsModel>,
    pub bounds: Vec<BoundModel>,
    pub has_theta: bool,
    /// Observations of this country left out of the likelihood.
    pub excluded: Vec<usize>,
}

impl CountryModel {
    pub fn n_theta(&self) -> usize {
        self.alpha_map.ncols()
    }

    pub fn n_eps(&self) -> usize {
        self.n_theta() - 2
    }

    pub fn alpha(&self, theta: &[f64]) -> Vec<f64> {
        let th = nalgebra::DVector::from_column_slice(theta);
        (&self.alpha_map * th).iter().copied().collect()
    }

    pub fn psi_obs(&self, theta: &[f64]) -> Vec<f64> {
        let th = nalgebra::DVector::from_column_slice(theta);
        (&self.design * th).iter().copied().collect()
    }

    pub fn theta_of(params: &CountryParams) -> Vec<f64> {
        let mut th = Vec::with_capacity(params.eps.len() + 2);
        th.push(params.lambda0);
        th.push(params.lambda1);
        th.extend_from_slice(&params.eps);
        th
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeriesModel {
    pub id: String,
    pub country: usize,
    pub source_type: SourceType,
    pub subtype: SourceSubtype,
}

/// Assembled model: immutable after construction.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub countries: Vec<CountryModel>,
    /// Repeated-source series carrying `(β0, β1)`.
    pub series: Vec<SeriesModel>,
    /// Non-VR source types with observations in the likelihood.
    pub types: Vec<SourceType>,
    pub subtypes: Vec<SourceSubtype>,
    pub warnings: Vec<String>,
}

impl Model {
    pub fn assemble(observations: &[Observation], config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let meta: BTreeMap<String, crate::types::SeriesMeta> = ingest::series_meta(observations)
            .into_iter()
            .map(|m| (m.series_id.clone(), m))
            .collect();

        let mut by_country: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, o) in observations.iter().enumerate() {
            by_country.entry(o.country.as_str()).or_default().push(i);
        }

        let projection_end = config.projection_end_or_default();
        let mut countries = Vec::new();
        let mut series: Vec<SeriesModel> = Vec::new();
        let mut series_index: BTreeMap<String, usize> = BTreeMap::new();
        let mut warnings = Vec::new();

        for (code, idx) in by_country {
            let local: Vec<Observation> = idx.iter().map(|&i| observations[i].clone()).collect();
            let selection = ingest::select_incomplete_vr(&local, &config.incomplete_vr);
            warnings.extend(selection.warnings.iter().cloned());

            let mut branches = Vec::with_capacity(local.len());
            for (j, o) in local.iter().enumerate() {
                branches.push(route(o, selection.trend_obs.contains(&j))?);
            }
            let years = local
                .iter()
                .enumerate()
                .filter(|(j, _)| branches[*j] != Branch::Excluded || selection.bound_obs.contains(j))
                .map(|(_, o)| o.ref_year);
            let (first, last) = years.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
            if !first.is_finite() {
                warnings.push(format!("{code}: no usable observations, country skipped"));
                continue;
            }
            let basis = SplineBasis::new(first, last, projection_end.max(last), config.interval)
                .map_err(|e| Error::Basis(format!("{code}: {e}")))?;
            let periods: Vec<(f64, f64)> = config
                .conflict_periods
                .iter()
                .filter(|p| p.country == code)
                .map(|p| (p.start, p.end))
                .collect();
            let map = basis::merge_conflict_splines(&basis, &periods)?;
            if map.n_free < 3 {
                return Err(Error::Basis(format!(
                    "{code}: fewer than three free spline coefficients after merging"
                )));
            }
            // λ1 keeps the centring of the unmerged index set
            let reparam = Reparameterization::new(map.n_free, basis.k() as f64 / 2.0);
            let alpha_map = map.matrix() * reparam.design();

            let row_at = |t: f64| -> Result<Vec<f64>> {
                let b = basis.eval_obs(t)?;
                let bv = nalgebra::RowDVector::from_row_slice(&b);
                Ok((bv * &alpha_map).iter().copied().collect())
            };

            let c_index = countries.len();
            let mut obs = Vec::new();
            let mut rows = Vec::new();
            let mut excluded = Vec::new();
            for (j, o) in local.iter().enumerate() {
                let branch = branches[j];
                if branch == Branch::Excluded {
                    excluded.push(idx[j]);
                    continue;
                }
                let m = &meta[&o.series_id];
                let v = match branch {
                    Branch::CompleteVr => ingest::observation_vr_sd(o)?,
                    Branch::IncompleteVrTrend => incomplete_vr_sd(o),
                    _ => o
                        .reported_se
                        .unwrap_or_else(|| default_sampling_sd(&config.priors, m.subtype)),
                };
                let series_slot = if o.source_type.is_repeated() {
                    let next = series.len();
                    let s = *series_index.entry(o.series_id.clone()).or_insert_with(|| {
                        series.push(SeriesModel {
                            id: o.series_id.clone(),
                            country: c_index,
                            source_type: o.source_type,
                            subtype: m.subtype,
                        });
                        next
                    });
                    Some(s)
                } else {
                    None
                };
                rows.push(row_at(o.ref_year)?);
                let basis_row = sparse(&basis.eval_obs(o.ref_year)?);
                obs.push(ObsModel {
                    source: idx[j],
                    year: o.ref_year,
                    y: o.log_u5mr,
                    v,
                    z: o.retrospective_period().unwrap_or(RETRO_CENTER),
                    branch,
                    source_type: o.source_type,
                    subtype: m.subtype,
                    series: series_slot,
                    basis_row,
                });
            }
            let mut bounds = Vec::new();
            for (b, &j) in selection.bound_obs.iter().enumerate() {
                let o = &local[j];
                let m = selection.min_completeness[b];
                bounds.push(BoundModel {
                    source: idx[j],
                    year: o.ref_year,
                    y: o.log_u5mr,
                    v: incomplete_vr_sd(o),
                    log_m: m.filter(|m| *m < 1.0).map(f64::ln),
                    row: row_at(o.ref_year)?,
                });
            }
            let n_theta = alpha_map.ncols();
            let design = DMatrix::from_fn(rows.len(), n_theta, |r, c| rows[r][c]);
            countries.push(CountryModel {
                code: code.to_string(),
                basis,
                map,
                reparam,
                alpha_map,
                design,
                obs,
                bounds,
                has_theta: !selection.trend_obs.is_empty(),
                excluded,
            });
        }

        let mut types: Vec<SourceType> = Vec::new();
        let mut subtypes: Vec<SourceSubtype> = Vec::new();
        for c in &countries {
            for o in &c.obs {
                if matches!(o.branch, Branch::Normal | Branch::StudentT) {
                    if !types.contains(&o.source_type) {
                        types.push(o.source_type);
                    }
                    if !subtypes.contains(&o.subtype) {
                        subtypes.push(o.subtype);
                    }
                }
            }
        }
        types.sort();
        subtypes.sort();

        Ok(Self {
            config: config.clone(),
            countries,
            series,
            types,
            subtypes,
            warnings,
        })
    }

    pub fn country_index(&self, code: &str) -> Option<usize> {
        self.countries.iter().position(|c| c.code == code)
    }

    pub fn n_obs(&self) -> usize {
        self.countries.iter().map(|c| c.obs.len()).sum()
    }

    /// Whether any observation uses the Student-t branch.
    pub fn has_t_branch(&self) -> bool {
        self.countries
            .iter()
            .any(|c| c.obs.iter().any(|o| o.branch == Branch::StudentT))
    }

    pub fn repeated_types(&self) -> impl Iterator<Item = SourceType> + '_ {
        self.types.iter().copied().filter(|d| d.is_repeated())
    }
}

fn sparse(b: &[f64]) -> Vec<(usize, f64)> {
    b.iter()
        .enumerate()
        .filter(|(_, w)| **w != 0.0)
        .map(|(k, w)| (k, *w))
        .collect()
}

/// Incomplete VR observations: delta-method sd when births are known,
/// otherwise the reported SE, otherwise the unreported default; all floored.
fn incomplete_vr_sd(o: &Observation) -> f64 {
    ingest::observation_vr_sd(o).unwrap_or(ingest::SVR_DEFAULT_SD)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::types::VrStatus;

    pub fn obs(
        country: &str,
        series: &str,
        d: SourceType,
        year: f64,
        u5mr: f64,
        survey: Option<f64>,
        se: Option<f64>,
    ) -> Observation {
        Observation {
            country: country.into(),
            ref_year: year,
            u5mr,
            log_u5mr: u5mr.ln(),
            series_id: series.into(),
            source_type: d,
            sample_vr: false,
            survey_year: survey,
            reported_se: se,
            vr_status: if d == SourceType::Vr {
                VrStatus::Complete
            } else {
                VrStatus::NotVr
            },
            births: (d == SourceType::Vr).then_some(50_000.0),
            deaths: None,
        }
    }

    pub fn small_dataset() -> Vec<Observation> {
        let mut v = Vec::new();
        for y in 0..20 {
            let year = 1990.0 + y as f64;
            v.push(obs(
                "AAA",
                "A-VR",
                SourceType::Vr,
                year,
                60.0 - year + 1990.0,
                None,
                None,
            ));
        }
        for y in 0..10 {
            let year = 1985.0 + y as f64;
            v.push(obs(
                "AAA",
                "A-DHS1",
                SourceType::DhsDirect,
                year,
                70.0 - 0.5 * y as f64,
                Some(1996.0),
                Some(0.1),
            ));
            v.push(obs(
                "BBB",
                "B-CEN",
                SourceType::CensusIndirect,
                year + 1.0,
                120.0 - 2.0 * y as f64,
                Some(2000.0),
                None,
            ));
            v.push(obs(
                "BBB",
                "B-LT",
                SourceType::OthersLifeTable,
                year + 10.0,
                90.0 - 2.0 * y as f64,
                None,
                None,
            ));
        }
        v
    }

    #[test]
    fn assembly_routes_and_indexes() {
        let cfg = ModelConfig {
            projection_end: Some(2015.0),
            ..ModelConfig::default()
        };
        let data = small_dataset();
        let m = Model::assemble(&data, &cfg).unwrap();
        assert_eq!(m.countries.len(), 2);
        assert_eq!(m.series.len(), 2);
        assert_eq!(
            m.types,
            vec![
                SourceType::DhsDirect,
                SourceType::CensusIndirect,
                SourceType::OthersLifeTable
            ]
        );
        let a = &m.countries[0];
        assert_eq!(a.design.nrows(), 30);
        assert_eq!(a.n_theta(), a.basis.k());
        // VR with 50000 births at ~50 per 1000: 2500 deaths → floored sd
        let vr = a.obs.iter().find(|o| o.branch == Branch::CompleteVr).unwrap();
        assert_eq!(vr.v, 0.025);
        let b = &m.countries[1];
        let census = b
            .obs
            .iter()
            .find(|o| o.source_type == SourceType::CensusIndirect)
            .unwrap();
        assert_eq!(census.v, 0.025);
        assert_eq!(census.branch, Branch::StudentT);
        let lt = b
            .obs
            .iter()
            .find(|o| o.source_type == SourceType::OthersLifeTable)
            .unwrap();
        assert_eq!(lt.v, 0.1);
        assert!(lt.series.is_none());
    }

    #[test]
    fn design_rows_reproduce_basis_times_alpha() {
        let cfg = ModelConfig {
            projection_end: Some(2015.0),
            ..ModelConfig::default()
        };
        let m = Model::assemble(&small_dataset(), &cfg).unwrap();
        let c = &m.countries[0];
        let theta: Vec<f64> = (0..c.n_theta()).map(|i| 4.0 - 0.01 * i as f64).collect();
        let alpha = c.alpha(&theta);
        let psi = c.psi_obs(&theta);
        for (o, p) in c.obs.iter().zip(&psi) {
            let b = c.basis.eval_obs(o.year).unwrap();
            let direct: f64 = b.iter().zip(&alpha).map(|(w, a)| w * a).sum();
            assert!((direct - p).abs() < 1e-10);
        }
    }

    #[test]
    fn conflict_merge_reduces_block() {
        let cfg = ModelConfig {
            projection_end: Some(2015.0),
            conflict_periods: vec![ConflictPeriod {
                country: "AAA".into(),
                start: 1995.0,
                end: 2000.0,
            }],
            ..ModelConfig::default()
        };
        let m = Model::assemble(&small_dataset(), &cfg).unwrap();
        let c = &m.countries[0];
        assert!(c.n_theta() < c.basis.k());
        assert_eq!(c.reparam.center(), c.basis.k() as f64 / 2.0);
    }

    #[test]
    fn missing_births_is_error() {
        let mut data = small_dataset();
        data[0].births = None;
        let cfg = ModelConfig {
            projection_end: Some(2015.0),
            ..ModelConfig::default()
        };
        assert!(matches!(Model::assemble(&data, &cfg), Err(Error::MissingBirths { .. })));
    }

    #[test]
    fn config_toml_round_trip() {
        let mut cfg = ModelConfig::default();
        cfg.projection_end = Some(2016.0);
        cfg.conflict_periods.push(ConflictPeriod {
            country: "SOM".into(),
            start: 1990.0,
            end: 1995.0,
        });
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(ModelConfig::from_toml(&text).unwrap(), cfg);
        assert!(ModelConfig::from_toml("interval = -1.0").is_err());
    }

    #[test]
    fn incomplete_vr_in_flagged_country() {
        let mut data = Vec::new();
        for (y, u) in [(1990.0, 30.0), (1992.0, 36.0), (1994.0, 34.0), (2008.0, 15.0)] {
            let mut o = obs("MDA", "M-VR", SourceType::Vr, y, u, None, None);
            o.vr_status = VrStatus::Incomplete;
            data.push(o);
        }
        for y in 0..8 {
            data.push(obs(
                "MDA",
                "M-DHS",
                SourceType::DhsDirect,
                1988.0 + 2.0 * y as f64,
                40.0 - 2.0 * y as f64,
                Some(2006.0),
                Some(0.1),
            ));
        }
        let mut cfg = ModelConfig {
            projection_end: Some(2012.0),
            ..ModelConfig::default()
        };
        cfg.incomplete_vr.bounds.insert(
            "MDA".into(),
            ingest::BoundSpec {
                min_completeness: Some(0.8),
                years: None,
            },
        );
        let m = Model::assemble(&data, &cfg).unwrap();
        let c = &m.countries[0];
        assert!(c.has_theta);
        let trend = c.obs.iter().filter(|o| o.branch == Branch::IncompleteVrTrend).count();
        assert_eq!(trend, 2);
        assert_eq!(c.bounds.len(), 1);
        assert_eq!(c.bounds[0].year, 2008.0);
        assert_eq!(c.excluded.len(), 2);
        assert!((c.bounds[0].log_m.unwrap() - 0.8f64.ln()).abs() < 1e-15);
    }
}
