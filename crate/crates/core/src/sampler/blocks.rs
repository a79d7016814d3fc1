use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::adapt::{Adaptation, Step};
use super::state::{dot, State};
use super::SamplerConfig;
use crate::model::{Branch, CountryModel, Model};
use crate::stats::{self, normal_ln_pdf, truncated_normal};
use crate::types::SourceType;

/// Extra proposal precision on `(λ0, λ1)`; corrected exactly in the
/// acceptance ratio, so it only matters when the data barely identify them.
const LAMBDA_JITTER: f64 = 1e-4;

pub(crate) fn sweep<R: Rng + ?Sized>(
    model: &Model,
    config: &SamplerConfig,
    fixed_globals: bool,
    st: &mut State,
    ad: &mut Adaptation,
    adapting: bool,
    rng: &mut R,
) {
    if config.prior_only {
        prior_sweep(model, fixed_globals, st, ad, adapting, rng);
        return;
    }
    for ci in 0..model.countries.len() {
        latent_bounds(model, st, ci, rng);
        spline_block(model, st, ad, ci, rng);
    }
    series_block(model, st, rng);
    if !fixed_globals {
        mean_blocks(model, st, true, rng);
    }
    for ci in 0..model.countries.len() {
        if model.config.fixed_sigma.is_none() {
            sigma_block(st, &mut ad.log_sigma[ci], ci, adapting, rng);
        }
        if model.countries[ci].has_theta {
            theta_vr_block(model, st, &mut ad.theta_vr[ci], ci, adapting, rng);
        }
    }
    if !fixed_globals {
        scale_blocks(model, st, ad, adapting, rng);
        rescale_blocks(model, st, ad, adapting, rng);
        collapsed_t_blocks(model, st, ad, adapting, rng);
    }
    t_weights(model, st, rng);
}

fn mh<R: Rng + ?Sized>(
    step: &mut Step,
    current: f64,
    lo: f64,
    hi: f64,
    adapting: bool,
    rng: &mut R,
    target: impl Fn(f64) -> f64,
) -> f64 {
    let prop = current + step.size() * stats::std_normal(rng);
    let accepted = if prop > lo && prop < hi {
        let log_a = target(prop) - target(current);
        log_a >= 0.0 || rng.random::<f64>().ln() < log_a
    } else {
        false
    };
    step.record(accepted, adapting);
    if accepted {
        prop
    } else {
        current
    }
}

fn latent_bounds<R: Rng + ?Sized>(model: &Model, st: &mut State, ci: usize, rng: &mut R) {
    let c = &model.countries[ci];
    if c.bounds.is_empty() {
        return;
    }
    let theta = CountryModel::theta_of(&st.countries[ci]);
    for (j, b) in c.bounds.iter().enumerate() {
        let at = dot(&b.row, &theta);
        let lo = b.log_m.map_or(f64::NEG_INFINITY, |lm| at + lm);
        st.latent[ci][j] = truncated_normal(rng, b.y, b.v, lo, at);
    }
}

fn draw_gaussian<R: Rng + ?Sized>(q: DMatrix<f64>, b: &DVector<f64>, rng: &mut R) -> Option<DVector<f64>> {
    let n = b.len();
    let chol = q.cholesky()?;
    let mean = chol.solve(b);
    let z = DVector::from_fn(n, |_, _| stats::std_normal(rng));
    let lt = chol.l().transpose();
    let dev = lt.solve_upper_triangular(&z)?;
    Some(mean + dev)
}

/// Gibbs draw of `θ = (λ0, λ1, ε)` from its Gaussian full conditional under
/// the latent t weights, accepted only inside the prior support and bounds.
fn spline_block<R: Rng + ?Sized>(model: &Model, st: &mut State, ad: &mut Adaptation, ci: usize, rng: &mut R) {
    let c = &model.countries[ci];
    let k = c.basis.k();
    let n = c.n_theta();
    let mut h = DMatrix::<f64>::zeros(k, k);
    let mut g = DVector::<f64>::zeros(k);
    for (i, o) in c.obs.iter().enumerate() {
        let (a, var) = st.gauss_term(model, ci, i);
        let r = (o.y - a) / var;
        for &(j, bj) in &o.basis_row {
            g[j] += bj * r;
            for &(l, bl) in &o.basis_row {
                h[(j, l)] += bj * bl / var;
            }
        }
    }
    let at = c.alpha_map.transpose();
    let mut q = &at * h * &c.alpha_map;
    let mut b = &at * g;
    // exp(λ0) uniform contributes e^λ0 to the density of λ0
    b[0] += 1.0;
    let cp = &st.countries[ci];
    let prec = 1.0 / (cp.sigma * cp.sigma);
    for e in 2..n {
        q[(e, e)] += prec;
    }
    q[(0, 0)] += LAMBDA_JITTER;
    q[(1, 1)] += LAMBDA_JITTER;
    let Some(prop) = draw_gaussian(q, &b, rng) else {
        ad.spline[ci].record(false, false);
        return;
    };

    let p = &model.config.priors;
    let (l0, h0) = p.lambda0_range();
    let (l1, h1) = p.lambda1_range(c.basis.interval());
    let mut ok = prop[0] > l0 && prop[0] < h0 && prop[1] > l1 && prop[1] < h1;
    let theta = prop.as_slice();
    if ok {
        ok = c.bounds.iter().enumerate().all(|(j, bnd)| {
            let at = dot(&bnd.row, theta);
            let lower = st.latent[ci][j];
            at > lower && bnd.log_m.is_none_or(|lm| at < lower - lm)
        });
    }
    if ok {
        let cur = [cp.lambda0, cp.lambda1];
        let log_a = 0.5 * LAMBDA_JITTER * (prop[0] * prop[0] + prop[1] * prop[1])
            - 0.5 * LAMBDA_JITTER * (cur[0] * cur[0] + cur[1] * cur[1]);
        ok = log_a >= 0.0 || rng.random::<f64>().ln() < log_a;
    }
    ad.spline[ci].record(ok, false);
    if ok {
        let cp = &mut st.countries[ci];
        cp.lambda0 = prop[0];
        cp.lambda1 = prop[1];
        cp.eps.copy_from_slice(&theta[2..]);
        st.psi[ci] = c.psi_obs(theta);
    }
}

fn series_block<R: Rng + ?Sized>(model: &Model, st: &mut State, rng: &mut R) {
    if model.series.is_empty() {
        return;
    }
    let (xtx, xty) = series_stats(model, st);
    let g = &st.global;
    for (s, m) in model.series.iter().enumerate() {
        let d = m.source_type;
        let (mu0, phi0) = (
            g.mu0.get(d).copied().unwrap_or(0.0),
            g.phi0.get(d).copied().unwrap_or(1.0),
        );
        let (mu1, phi1) = (
            g.mu1.get(d).copied().unwrap_or(0.0),
            g.phi1.get(d).copied().unwrap_or(1.0),
        );
        let a = xtx[s][0] + 1.0 / (phi0 * phi0);
        let bq = xtx[s][1];
        let cq = xtx[s][2] + 1.0 / (phi1 * phi1);
        let r0 = xty[s][0] + mu0 / (phi0 * phi0);
        let r1 = xty[s][1] + mu1 / (phi1 * phi1);
        let det = a * cq - bq * bq;
        let m0 = (cq * r0 - bq * r1) / det;
        let m1 = (a * r1 - bq * r0) / det;
        // Cholesky of the 2×2 precision: Q = L L'
        let l11 = a.sqrt();
        let l21 = bq / l11;
        let l22 = (cq - l21 * l21).sqrt();
        let z0 = stats::std_normal(rng);
        let z1 = stats::std_normal(rng);
        // solve L' x = z
        let x1 = z1 / l22;
        let x0 = (z0 - l21 * x1) / l11;
        st.series[s].beta0 = m0 + x0;
        st.series[s].beta1 = m1 + x1;
    }
}

/// Sufficient statistics of the per-series bias regression: the packed
/// precision `[Σ1/v, Σx/v, Σx²/v]` and `[Σr/v, Σxr/v]`.
fn series_stats(model: &Model, st: &State) -> (Vec<[f64; 3]>, Vec<[f64; 2]>) {
    let ns = model.series.len();
    let mut xtx = vec![[0.0f64; 3]; ns];
    let mut xty = vec![[0.0f64; 2]; ns];
    for (ci, c) in model.countries.iter().enumerate() {
        for (i, o) in c.obs.iter().enumerate() {
            let Some(s) = o.series else { continue };
            let (_, var) = st.gauss_term(model, ci, i);
            let x = o.z - crate::model::RETRO_CENTER;
            let r = o.y - st.psi[ci][i];
            xtx[s][0] += 1.0 / var;
            xtx[s][1] += x / var;
            xtx[s][2] += x * x / var;
            xty[s][0] += r / var;
            xty[s][1] += x * r / var;
        }
    }
    (xtx, xty)
}

/// Joint move `φ → φe^u`, `β → μ + (β − μ)e^u` over all series of a type,
/// and likewise for `φσ` with the country log scales.
/// The β prior keeps its standardized form, so only the data term and the
/// Jacobian on φ enter the ratio. Breaks the funnel between a scale and its
/// series effects when the series are weakly identified.
fn rescale_blocks<R: Rng + ?Sized>(model: &Model, st: &mut State, ad: &mut Adaptation, adapting: bool, rng: &mut R) {
    let phi_max = model.config.priors.phi_max;
    if model.config.fixed_sigma.is_none() && !model.countries.is_empty() {
        let chi = st.global.chi;
        let step = &mut ad.rescale_sigma;
        let u = step.size() * stats::std_normal(rng);
        let scale = u.exp();
        let prop_ps = st.global.phi_sigma * scale;
        let mut accepted = false;
        if prop_ps < phi_max {
            let mut log_a = u;
            for c in &st.countries {
                let ls = c.sigma.ln();
                let nls = chi + (ls - chi) * scale;
                let ss: f64 = c.eps.iter().map(|e| e * e).sum();
                let q = c.eps.len() as f64;
                log_a += -q * (nls - ls) - 0.5 * ss * ((-2.0 * nls).exp() - (-2.0 * ls).exp());
            }
            accepted = log_a >= 0.0 || rng.random::<f64>().ln() < log_a;
        }
        step.record(accepted, adapting);
        if accepted {
            st.global.phi_sigma = prop_ps;
            for c in &mut st.countries {
                c.sigma = (chi + (c.sigma.ln() - chi) * scale).exp();
            }
        }
    }
    let (xtx, xty) = series_stats(model, st);
    let loglik = |s: usize, b0: f64, b1: f64| {
        let q = &xtx[s];
        -0.5 * (q[0] * b0 * b0 + 2.0 * q[1] * b0 * b1 + q[2] * b1 * b1) + xty[s][0] * b0 + xty[s][1] * b1
    };
    let types: Vec<SourceType> = model.repeated_types().collect();
    for d in types {
        let members: Vec<usize> = (0..model.series.len())
            .filter(|&s| model.series[s].source_type == d)
            .collect();
        if members.is_empty() {
            continue;
        }
        for slope in [false, true] {
            let (mu, phi, step) = if slope {
                (
                    st.global.mu1.get(d).copied().unwrap_or(0.0),
                    st.global.phi1.get(d).copied().unwrap_or(1.0),
                    ad.rescale1.get_mut(d),
                )
            } else {
                (
                    st.global.mu0.get(d).copied().unwrap_or(0.0),
                    st.global.phi0.get(d).copied().unwrap_or(1.0),
                    ad.rescale0.get_mut(d),
                )
            };
            let step = step.expect("step for every repeated type");
            let u = step.size() * stats::std_normal(rng);
            let scale = u.exp();
            let prop_phi = phi * scale;
            let mut accepted = false;
            if prop_phi < phi_max {
                let mut log_a = u;
                for &s in &members {
                    let (b0, b1) = (st.series[s].beta0, st.series[s].beta1);
                    let (n0, n1) = if slope {
                        (b0, mu + (b1 - mu) * scale)
                    } else {
                        (mu + (b0 - mu) * scale, b1)
                    };
                    log_a += loglik(s, n0, n1) - loglik(s, b0, b1);
                }
                accepted = log_a >= 0.0 || rng.random::<f64>().ln() < log_a;
            }
            step.record(accepted, adapting);
            if accepted {
                for &s in &members {
                    let b = &mut st.series[s];
                    if slope {
                        b.beta1 = mu + (b.beta1 - mu) * scale;
                    } else {
                        b.beta0 = mu + (b.beta0 - mu) * scale;
                    }
                }
                if slope {
                    st.global.phi1.insert(d, prop_phi);
                } else {
                    st.global.phi0.insert(d, prop_phi);
                }
            }
        }
    }
}

fn normal_conjugate<R: Rng + ?Sized>(
    rng: &mut R,
    prior_mean: f64,
    prior_sd: f64,
    precision: f64,
    weighted_sum: f64,
) -> f64 {
    let p = precision + 1.0 / (prior_sd * prior_sd);
    let m = (weighted_sum + prior_mean / (prior_sd * prior_sd)) / p;
    m + stats::std_normal(rng) / p.sqrt()
}

fn mean_blocks<R: Rng + ?Sized>(model: &Model, st: &mut State, use_data: bool, rng: &mut R) {
    let pc = &model.config.priors;
    for &d in &model.types {
        let prior = pc.mu0_for(d);
        if d.is_repeated() {
            let phi0 = st.global.phi0.get(d).copied().unwrap_or(1.0);
            let phi1 = st.global.phi1.get(d).copied().unwrap_or(1.0);
            let (mut n, mut s0, mut s1) = (0.0, 0.0, 0.0);
            for (m, s) in model.series.iter().zip(&st.series) {
                if m.source_type == d {
                    n += 1.0;
                    s0 += s.beta0;
                    s1 += s.beta1;
                }
            }
            let mu0 = normal_conjugate(rng, prior.mean, prior.sd, n / (phi0 * phi0), s0 / (phi0 * phi0));
            let mu1 = normal_conjugate(rng, pc.mu1.mean, pc.mu1.sd, n / (phi1 * phi1), s1 / (phi1 * phi1));
            st.global.mu0.insert(d, mu0);
            st.global.mu1.insert(d, mu1);
        } else {
            let (mut prec, mut sum) = (0.0, 0.0);
            for (ci, c) in model.countries.iter().enumerate().filter(|_| use_data) {
                for (i, o) in c.obs.iter().enumerate() {
                    if o.source_type == d && matches!(o.branch, Branch::Normal | Branch::StudentT) {
                        let (_, var) = st.gauss_term(model, ci, i);
                        prec += 1.0 / var;
                        sum += (o.y - st.psi[ci][i]) / var;
                    }
                }
            }
            st.global
                .mu0
                .insert(d, normal_conjugate(rng, prior.mean, prior.sd, prec, sum));
        }
    }
    if model.config.fixed_sigma.is_none() && !model.countries.is_empty() {
        let ps = st.global.phi_sigma;
        let n = model.countries.len() as f64;
        let sum: f64 = st.countries.iter().map(|c| c.sigma.ln()).sum();
        st.global.chi = normal_conjugate(rng, pc.chi_mean, pc.chi_sd(), n / (ps * ps), sum / (ps * ps));
    }
}

fn sigma_block<R: Rng + ?Sized>(st: &mut State, step: &mut Step, ci: usize, adapting: bool, rng: &mut R) {
    let (chi, ps) = (st.global.chi, st.global.phi_sigma);
    let eps = &st.countries[ci].eps;
    let ss: f64 = eps.iter().map(|e| e * e).sum();
    let q = eps.len() as f64;
    let target = |ls: f64| -q * ls - 0.5 * ss * (-2.0 * ls).exp() + normal_ln_pdf(ls, chi, ps);
    let cur = st.countries[ci].sigma.ln();
    let next = mh(step, cur, f64::NEG_INFINITY, f64::INFINITY, adapting, rng, target);
    st.countries[ci].sigma = next.exp();
}

fn theta_vr_block<R: Rng + ?Sized>(
    model: &Model,
    st: &mut State,
    step: &mut Step,
    ci: usize,
    adapting: bool,
    rng: &mut R,
) {
    let c = &model.countries[ci];
    let terms: Vec<(f64, f64)> = c
        .obs
        .iter()
        .zip(&st.psi[ci])
        .filter(|(o, _)| o.branch == Branch::IncompleteVrTrend)
        .map(|(o, p)| (o.y - p, o.v))
        .collect();
    let target = |t: f64| terms.iter().map(|(d, v)| normal_ln_pdf(*d, t.ln(), *v)).sum::<f64>();
    let cur = st.countries[ci].theta_vr.unwrap_or(0.5);
    st.countries[ci].theta_vr = Some(mh(step, cur, 0.0, 1.0, adapting, rng, target));
}

fn scale_blocks<R: Rng + ?Sized>(model: &Model, st: &mut State, ad: &mut Adaptation, adapting: bool, rng: &mut R) {
    let phi_max = model.config.priors.phi_max;
    if model.config.fixed_sigma.is_none() && !model.countries.is_empty() {
        let chi = st.global.chi;
        let ls: Vec<f64> = st.countries.iter().map(|c| c.sigma.ln()).collect();
        let target = |p: f64| ls.iter().map(|x| normal_ln_pdf(*x, chi, p)).sum::<f64>();
        st.global.phi_sigma = mh(
            &mut ad.phi_sigma,
            st.global.phi_sigma,
            0.0,
            phi_max,
            adapting,
            rng,
            target,
        );
    }
    let types: Vec<SourceType> = model.repeated_types().collect();
    for d in types {
        let b: Vec<(f64, f64)> = model
            .series
            .iter()
            .zip(&st.series)
            .filter(|(m, _)| m.source_type == d)
            .map(|(_, s)| (s.beta0, s.beta1))
            .collect();
        let mu0 = st.global.mu0.get(d).copied().unwrap_or(0.0);
        let mu1 = st.global.mu1.get(d).copied().unwrap_or(0.0);
        let t0 = |p: f64| b.iter().map(|x| normal_ln_pdf(x.0, mu0, p)).sum::<f64>();
        let t1 = |p: f64| b.iter().map(|x| normal_ln_pdf(x.1, mu1, p)).sum::<f64>();
        let cur0 = st.global.phi0.get(d).copied().unwrap_or(1.0);
        let cur1 = st.global.phi1.get(d).copied().unwrap_or(1.0);
        let s0 = ad.phi0.get_mut(d).expect("step for every repeated type");
        let n0 = mh(s0, cur0, 0.0, phi_max, adapting, rng, t0);
        let s1 = ad.phi1.get_mut(d).expect("step for every repeated type");
        let n1 = mh(s1, cur1, 0.0, phi_max, adapting, rng, t1);
        st.global.phi0.insert(d, n0);
        st.global.phi1.insert(d, n1);
    }
}

/// Residual `y − Ψ − Φ` of a non-VR observation with its sampling sd.
struct Resid {
    ci: usize,
    i: usize,
    e: f64,
    v: f64,
    t: bool,
}

fn residuals(model: &Model, st: &State) -> Vec<Resid> {
    let mut out = Vec::new();
    for (ci, c) in model.countries.iter().enumerate() {
        for (i, o) in c.obs.iter().enumerate() {
            if matches!(o.branch, Branch::Normal | Branch::StudentT) {
                out.push(Resid {
                    ci,
                    i,
                    e: o.y - st.psi[ci][i] - st.bias(model, ci, i),
                    v: o.v,
                    t: o.branch == Branch::StudentT,
                });
            }
        }
    }
    out
}

/// Sum of Student-t log densities of `e/scale` with `nu` df, minus log scale.
fn t_log_density_sum<'a>(nu: f64, terms: impl Iterator<Item = (f64, f64)> + 'a) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let c = ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI).ln();
    terms
        .map(|(e, s)| c - s.ln() - 0.5 * (nu + 1.0) * (1.0 + (e / s).powi(2) / nu).ln())
        .sum()
}

/// ω and ν under the likelihood with the t precisions integrated out.
fn collapsed_t_blocks<R: Rng + ?Sized>(
    model: &Model,
    st: &mut State,
    ad: &mut Adaptation,
    adapting: bool,
    rng: &mut R,
) {
    let res = residuals(model, st);
    let omega_max = model.config.priors.omega_max;
    for &sub in &model.subtypes {
        let mine: Vec<&Resid> = res
            .iter()
            .filter(|r| model.countries[r.ci].obs[r.i].subtype == sub)
            .collect();
        let nu = st.global.nu;
        let target = |w: f64| {
            let normal: f64 = mine
                .iter()
                .filter(|r| !r.t)
                .map(|r| normal_ln_pdf(r.e, 0.0, w.hypot(r.v)))
                .sum();
            normal + t_log_density_sum(nu, mine.iter().filter(|r| r.t).map(|r| (r.e, w.hypot(r.v))))
        };
        let cur = st.global.omega.get(sub).copied().unwrap_or(0.1);
        let step = ad.omega.get_mut(sub).expect("step for every subtype");
        let next = mh(step, cur, 0.0, omega_max, adapting, rng, target);
        st.global.omega.insert(sub, next);
    }
    if model.has_t_branch() {
        let scaled: Vec<(f64, f64)> = res
            .iter()
            .filter(|r| r.t)
            .map(|r| {
                let sub = model.countries[r.ci].obs[r.i].subtype;
                let w = st.global.omega.get(sub).copied().unwrap_or(0.0);
                (r.e, w.hypot(r.v))
            })
            .collect();
        let (lo, hi) = model.config.priors.nu_range;
        let target = |nu: f64| t_log_density_sum(nu, scaled.iter().copied());
        st.global.nu = mh(&mut ad.nu, st.global.nu, lo, hi, adapting, rng, target);
    }
}

/// Redraw the scale-mixture precisions of the Student-t observations.
fn t_weights<R: Rng + ?Sized>(model: &Model, st: &mut State, rng: &mut R) {
    let nu = st.global.nu;
    for (ci, c) in model.countries.iter().enumerate() {
        for (i, o) in c.obs.iter().enumerate() {
            if o.branch != Branch::StudentT {
                continue;
            }
            let om = st.global.omega.get(o.subtype).copied().unwrap_or(0.0);
            let e = (o.y - st.psi[ci][i] - st.bias(model, ci, i)) / om.hypot(o.v);
            let rate = 0.5 * (nu + e * e);
            let g = Gamma::new(0.5 * (nu + 1.0), 1.0 / rate).expect("positive gamma parameters");
            st.w[ci][i] = g.sample(rng);
        }
    }
}

/// Prior-only sweep: every block targets its prior conditional.
fn prior_sweep<R: Rng + ?Sized>(
    model: &Model,
    fixed_globals: bool,
    st: &mut State,
    ad: &mut Adaptation,
    adapting: bool,
    rng: &mut R,
) {
    let p = &model.config.priors;
    for (ci, c) in model.countries.iter().enumerate() {
        let (l0, h0) = p.lambda0_range();
        let (l1, h1) = p.lambda1_range(c.basis.interval());
        // λ0 has density ∝ e^λ0 on its support
        let u: f64 = rng.random();
        let (e0, e1) = (l0.exp(), h0.exp());
        let cp = &mut st.countries[ci];
        cp.lambda0 = (e0 + u * (e1 - e0)).ln();
        cp.lambda1 = l1 + (h1 - l1) * rng.random::<f64>();
        for e in cp.eps.iter_mut() {
            *e = cp.sigma * stats::std_normal(rng);
        }
        let theta = CountryModel::theta_of(cp);
        st.psi[ci] = c.psi_obs(&theta);
        if model.config.fixed_sigma.is_none() {
            sigma_block(st, &mut ad.log_sigma[ci], ci, adapting, rng);
        }
        if c.has_theta {
            st.countries[ci].theta_vr = Some(rng.random::<f64>());
        }
    }
    let g = &st.global;
    for (m, s) in model.series.iter().zip(st.series.iter_mut()) {
        let d = m.source_type;
        s.beta0 = g.mu0.get(d).copied().unwrap_or(0.0) + g.phi0.get(d).copied().unwrap_or(1.0) * stats::std_normal(rng);
        s.beta1 = g.mu1.get(d).copied().unwrap_or(0.0) + g.phi1.get(d).copied().unwrap_or(1.0) * stats::std_normal(rng);
    }
    if fixed_globals {
        return;
    }
    mean_blocks(model, st, false, rng);
    scale_blocks(model, st, ad, adapting, rng);
    let omega_max = p.omega_max;
    for &sub in &model.subtypes {
        st.global.omega.insert(sub, omega_max * rng.random::<f64>());
    }
    if model.has_t_branch() {
        let (lo, hi) = p.nu_range;
        st.global.nu = mh(&mut ad.nu, st.global.nu, lo, hi, adapting, rng, |_| 0.0);
    }
}
