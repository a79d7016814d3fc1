use super::{BoundConstraint, GlobalParams, ObsModel, PriorConstants, SeriesParams, RETRO_CENTER};
use crate::error::{Error, Result};
use crate::stats::{normal_ln_pdf, student_t_ln_pdf};
use crate::types::{Observation, SourceSubtype, SourceType, VrStatus};

/// Likelihood branch of one observation. Every observation maps to exactly one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    /// `δ ~ N(0, v²)`.
    CompleteVr,
    /// `δ ~ N(log ϑ_c, v²)`.
    IncompleteVrTrend,
    /// DHS class: `δ ~ N(Φ, Ω²)`.
    Normal,
    /// Remaining non-VR types: `δ ~ t_ν(Φ, Ω)`.
    StudentT,
    /// Incomplete VR outside the trend set; contributes only through bounds.
    Excluded,
}

pub fn route(o: &Observation, in_trend_set: bool) -> Result<Branch> {
    match (o.source_type, o.vr_status) {
        (SourceType::Vr, VrStatus::Complete) if !in_trend_set => Ok(Branch::CompleteVr),
        (SourceType::Vr, VrStatus::Incomplete) if in_trend_set => Ok(Branch::IncompleteVrTrend),
        (SourceType::Vr, VrStatus::Incomplete) => Ok(Branch::Excluded),
        (d, VrStatus::NotVr) if d != SourceType::Vr => Ok(if d.is_dhs_class() {
            Branch::Normal
        } else {
            Branch::StudentT
        }),
        (d, s) => Err(Error::Unrouteable(format!(
            "series {} at {}: source type {d} with VR status {s}",
            o.series_id, o.ref_year
        ))),
    }
}

/// Series-level bias at retrospective period `z`.
pub fn bias_mean(series: &SeriesParams, z: f64) -> f64 {
    series.beta0 + series.beta1 * (z - RETRO_CENTER)
}

pub fn obs_scale(omega: f64, v: f64) -> f64 {
    omega.hypot(v)
}

/// Sampling sd used when a subtype's observation has no reported SE.
pub fn default_sampling_sd(priors: &PriorConstants, subtype: SourceSubtype) -> f64 {
    if subtype == SourceSubtype::CensusIndirect {
        priors.default_se_census
    } else {
        priors.default_se_other
    }
}

/// `Φ_i` for a non-VR observation.
pub(crate) fn obs_bias(obs: &ObsModel, global: &GlobalParams, series: Option<&SeriesParams>) -> Result<f64> {
    if obs.source_type.is_repeated() {
        let s =
            series.ok_or_else(|| Error::MissingHyperparameter(format!("series parameters for {}", obs.source_type)))?;
        Ok(bias_mean(s, obs.z))
    } else {
        global
            .mu0
            .get(obs.source_type)
            .copied()
            .ok_or_else(|| Error::MissingHyperparameter(format!("mu0 for {}", obs.source_type)))
    }
}

pub(crate) fn obs_omega(obs: &ObsModel, global: &GlobalParams) -> Result<f64> {
    global
        .omega
        .get(obs.subtype)
        .copied()
        .ok_or_else(|| Error::MissingHyperparameter(format!("omega for {}", obs.subtype)))
}

/// Log density of `y − ψ` under the observation's branch.
pub fn log_likelihood(
    obs: &ObsModel,
    psi: f64,
    global: &GlobalParams,
    series: Option<&SeriesParams>,
    theta_vr: Option<f64>,
) -> Result<f64> {
    let delta = obs.y - psi;
    match obs.branch {
        Branch::CompleteVr => Ok(normal_ln_pdf(delta, 0.0, obs.v)),
        Branch::IncompleteVrTrend => {
            let theta = theta_vr
                .ok_or_else(|| Error::MissingHyperparameter("incomplete-VR fraction for trend observation".into()))?;
            if !(theta > 0.0 && theta < 1.0) {
                return Ok(f64::NEG_INFINITY);
            }
            Ok(normal_ln_pdf(delta, theta.ln(), obs.v))
        }
        Branch::Normal => {
            let phi = obs_bias(obs, global, series)?;
            let omega = obs_scale(obs_omega(obs, global)?, obs.v);
            Ok(normal_ln_pdf(delta, phi, omega))
        }
        Branch::StudentT => {
            let phi = obs_bias(obs, global, series)?;
            let omega = obs_scale(obs_omega(obs, global)?, obs.v);
            Ok(student_t_ln_pdf(delta, phi, omega, global.nu))
        }
        Branch::Excluded => Ok(0.0),
    }
}

/// True iff every `Ψ` value lies strictly inside its constraint interval.
/// `psi[j]` is the trajectory at `constraints[j].year`.
pub fn bound_indicator(psi: &[f64], constraints: &[BoundConstraint]) -> bool {
    psi.iter()
        .zip(constraints)
        .all(|(&p, c)| p > c.lower && c.upper.is_none_or(|u| p < u))
}
