use std::collections::BTreeMap;

use crate::model::Model;
use crate::types::{EnumMap, Indexed, SourceSubtype, SourceType};

const TARGET: f64 = 0.44;

/// Random-walk step for one scalar block, tuned by Robbins–Monro on the
/// log step size while adapting.
#[derive(Debug, Clone)]
pub(crate) struct Step {
    log_step: f64,
    updates: u64,
    tried: u64,
    accepted: u64,
}

impl Step {
    pub fn new(step: f64) -> Self {
        Self {
            log_step: step.ln(),
            updates: 0,
            tried: 0,
            accepted: 0,
        }
    }

    pub fn size(&self) -> f64 {
        self.log_step.exp()
    }

    pub fn record(&mut self, accepted: bool, adapting: bool) {
        self.tried += 1;
        self.accepted += u64::from(accepted);
        if adapting {
            self.updates += 1;
            let gain = (self.updates as f64 + 1.0).powf(-0.6);
            let a = if accepted { 1.0 } else { 0.0 };
            self.log_step = (self.log_step + gain * (a - TARGET)).clamp(-20.0, 5.0);
        }
    }

    pub fn rate(&self) -> Option<f64> {
        (self.tried > 0).then(|| self.accepted as f64 / self.tried as f64)
    }

    fn reset(&mut self) {
        self.tried = 0;
        self.accepted = 0;
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Adaptation {
    pub log_sigma: Vec<Step>,
    pub theta_vr: Vec<Step>,
    /// Independence proposals for the spline blocks; never adapted.
    pub spline: Vec<Step>,
    pub phi_sigma: Step,
    pub phi0: EnumMap<SourceType, Step>,
    pub phi1: EnumMap<SourceType, Step>,
    /// Log-scale steps of the joint (φ, β) rescaling moves.
    pub rescale0: EnumMap<SourceType, Step>,
    pub rescale1: EnumMap<SourceType, Step>,
    pub rescale_sigma: Step,
    pub omega: EnumMap<SourceSubtype, Step>,
    pub nu: Step,
}

impl Adaptation {
    pub fn new(model: &Model) -> Self {
        let n = model.countries.len();
        let mut phi0 = EnumMap::new();
        let mut phi1 = EnumMap::new();
        let mut rescale0 = EnumMap::new();
        let mut rescale1 = EnumMap::new();
        for d in model.repeated_types() {
            phi0.insert(d, Step::new(0.05));
            phi1.insert(d, Step::new(0.005));
            rescale0.insert(d, Step::new(0.3));
            rescale1.insert(d, Step::new(0.3));
        }
        let mut omega = EnumMap::new();
        for &s in &model.subtypes {
            omega.insert(s, Step::new(0.02));
        }
        Self {
            log_sigma: vec![Step::new(0.3); n],
            theta_vr: vec![Step::new(0.05); n],
            spline: vec![Step::new(1.0); n],
            phi_sigma: Step::new(0.1),
            phi0,
            phi1,
            rescale0,
            rescale1,
            rescale_sigma: Step::new(0.3),
            omega,
            nu: Step::new(3.0),
        }
    }

    pub fn reset_counts(&mut self) {
        let all = self
            .log_sigma
            .iter_mut()
            .chain(self.theta_vr.iter_mut())
            .chain(self.spline.iter_mut())
            .chain(std::iter::once(&mut self.phi_sigma))
            .chain(std::iter::once(&mut self.rescale_sigma))
            .chain(std::iter::once(&mut self.nu));
        for s in all {
            s.reset();
        }
        for d in SourceType::ALL {
            if let Some(s) = self.phi0.get_mut(*d) {
                s.reset();
            }
            for m in [&mut self.phi1, &mut self.rescale0, &mut self.rescale1] {
                if let Some(s) = m.get_mut(*d) {
                    s.reset();
                }
            }
        }
        for s in SourceSubtype::ALL {
            if let Some(s) = self.omega.get_mut(*s) {
                s.reset();
            }
        }
    }

    /// Acceptance rates of every block that was tried, keyed by parameter.
    pub fn rates(&self, model: &Model) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        let mut put = |name: String, s: &Step| {
            if let Some(r) = s.rate() {
                out.insert(name, r);
            }
        };
        for (c, cm) in model.countries.iter().enumerate() {
            put(format!("sigma[{}]", cm.code), &self.log_sigma[c]);
            put(format!("theta_vr[{}]", cm.code), &self.theta_vr[c]);
            put(format!("spline[{}]", cm.code), &self.spline[c]);
        }
        put("phi_sigma".into(), &self.phi_sigma);
        put("nu".into(), &self.nu);
        put("rescale_sigma".into(), &self.rescale_sigma);
        for (d, s) in self.phi0.iter() {
            put(format!("phi0[{d}]"), s);
        }
        for (d, s) in self.phi1.iter() {
            put(format!("phi1[{d}]"), s);
        }
        for (d, s) in self.rescale0.iter() {
            put(format!("rescale0[{d}]"), s);
        }
        for (d, s) in self.rescale1.iter() {
            put(format!("rescale1[{d}]"), s);
        }
        for (d, s) in self.omega.iter() {
            put(format!("omega[{d}]"), s);
        }
        out
    }
}
