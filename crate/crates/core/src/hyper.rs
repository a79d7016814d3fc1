//! Point estimates of the global hyperparameters, exported from a global
//! fit and consumed by country-specific fits.
//!
//! The file is TOML: a `[global]` table keyed like [`GlobalParams`] and an
//! optional `[projection]` table holding the global change distribution.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GlobalParams, Model};
use crate::project::{self, GlobalChangeDist};
use crate::sampler::Posterior;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperFile {
    pub global: GlobalParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub projection: Option<GlobalChangeDist>,
}

fn all_finite(g: &GlobalParams) -> bool {
    [g.chi, g.phi_sigma, g.nu].iter().all(|v| v.is_finite())
        && [&g.mu0, &g.phi0, &g.mu1, &g.phi1]
            .iter()
            .all(|m| m.iter().all(|(_, v)| v.is_finite()))
        && g.omega.iter().all(|(_, v)| v.is_finite())
}

/// Posterior medians of every global parameter, with the change
/// distribution when it is estimable.
pub fn export(model: &Model, post: &Posterior) -> Result<HyperFile> {
    if post.n_draws() == 0 || post.fixed_globals {
        return Err(Error::InvalidArgument(
            "hyperparameter export needs retained draws from a global fit".into(),
        ));
    }
    let global = post.global_medians();
    if !all_finite(&global) {
        return Err(Error::InvalidArgument("posterior medians are not all finite".into()));
    }
    let projection = project::build_global_dist(&project::posterior_median_changes(model, post)).ok();
    Ok(HyperFile { global, projection })
}

impl HyperFile {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize hyperparameters: {e}")))
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let h: HyperFile = toml::from_str(s).map_err(|e| Error::Config(format!("hyperparameter file: {e}")))?;
        if !all_finite(&h.global) {
            return Err(Error::Config("hyperparameter file has non-finite values".into()));
        }
        Ok(h)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}
