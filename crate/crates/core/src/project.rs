//! Short-term projection of spline coefficients by logarithmic pooling of
//! the model random walk with a global distribution of coefficient changes.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::SplineBasis;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::par::{self, Execution};
use crate::sampler::{self, Posterior};
use crate::stats;

pub const DEFAULT_POOLING_WEIGHT: f64 = 0.5;

/// Offset separating projection RNG streams from sampler streams.
const STREAM_SALT: u64 = 0x5851_f42d_4c95_7f2d;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalChangeDist {
    pub g: f64,
    pub v: f64,
}

/// Median and unbiased variance of the posterior-median coefficient changes.
pub fn build_global_dist(gamma_hat: &[f64]) -> Result<GlobalChangeDist> {
    if gamma_hat.len() < 2 {
        return Err(Error::Degenerate(format!(
            "global change distribution needs at least 2 values, got {}",
            gamma_hat.len()
        )));
    }
    let v = stats::sample_variance(gamma_hat);
    let scale = gamma_hat.iter().map(|g| g * g).sum::<f64>() / gamma_hat.len() as f64;
    // rounding leaves a residue of order ε·scale for identical values
    if !(v > 16.0 * f64::EPSILON * scale) {
        return Err(Error::Degenerate("global change distribution has zero variance".into()));
    }
    Ok(GlobalChangeDist {
        g: stats::median(gamma_hat),
        v,
    })
}

/// Posterior medians of `γ_{c,k} = α_{c,k} − α_{c,k−1}` for `k = 2..K_c−1`
/// (1-based), over all countries.
pub fn posterior_median_changes(model: &Model, post: &Posterior) -> Vec<f64> {
    let mut out = Vec::new();
    for (ci, c) in model.countries.iter().enumerate() {
        let k = c.basis.k();
        for j in 1..k.saturating_sub(1) {
            let g: Vec<f64> = post.draws().map(|d| d.alpha[ci][j] - d.alpha[ci][j - 1]).collect();
            out.push(stats::median(&g));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolStep {
    /// Pooled mean `Γ`.
    pub mean: f64,
    /// Pooled variance `Θ`.
    pub var: f64,
    /// Logarithmic weight on the global density.
    pub log_weight: f64,
}

/// Pooled mean and variance for one step after `prev_gamma` with model
/// variance `prev_theta`.
pub fn pool_step(prev_gamma: f64, prev_theta: f64, dist: GlobalChangeDist, w: f64) -> PoolStep {
    let wv = w * dist.v;
    let rest = (1.0 - w) * prev_theta;
    PoolStep {
        mean: w * dist.g + (1.0 - w) * prev_gamma,
        var: wv + rest,
        log_weight: if wv + rest > 0.0 { wv / (wv + rest) } else { 0.0 },
    }
}

/// Normal density proportional to `p1^(1−w)·p2^w` for `p_i = N(m_i, v_i)`.
pub fn log_pool_normal(m1: f64, v1: f64, m2: f64, v2: f64, w: f64) -> (f64, f64) {
    let prec = (1.0 - w) / v1 + w / v2;
    let mean = ((1.0 - w) * m1 / v1 + w * m2 / v2) / prec;
    (mean, 1.0 / prec)
}

/// `Θ` after `a` pooled steps from `Θ_0 = sigma2`.
pub fn theta_closed_form(a: u32, w: f64, v: f64, sigma2: f64) -> f64 {
    let r = (1.0 - w).powi(a as i32);
    v * (1.0 - r) + r * sigma2
}

/// Extend one draw of `α_1..α_K` to `α_1..α_P`, replacing `α_K`.
pub fn project_alpha<R: Rng + ?Sized>(
    alpha: &[f64],
    sigma: f64,
    p: usize,
    dist: GlobalChangeDist,
    w: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let k = alpha.len();
    if k < 3 {
        return Err(Error::InvalidArgument(format!("projection needs K >= 3, got {k}")));
    }
    if p < k {
        return Err(Error::InvalidArgument(format!("projection end P = {p} below K = {k}")));
    }
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::InvalidArgument(format!("pooling weight {w} outside [0, 1]")));
    }
    let mut out = alpha[..k - 1].to_vec();
    let mut gamma = alpha[k - 2] - alpha[k - 3];
    let mut theta = sigma * sigma;
    for _ in k..=p {
        let s = pool_step(gamma, theta, dist, w);
        gamma = s.mean + s.var.sqrt() * stats::std_normal(rng);
        theta = s.var;
        let last = *out.last().expect("nonempty");
        out.push(last + gamma);
    }
    Ok(out)
}

fn draw_rng(seed: u64, draw: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ STREAM_SALT);
    r.set_stream(draw as u64);
    r
}

/// Projected coefficient draws `α_1..α_P` for country `ci`, one per
/// retained posterior draw in chain order.
pub fn project_coefficients(
    model: &Model,
    post: &Posterior,
    ci: usize,
    dist: GlobalChangeDist,
    w: f64,
    seed: u64,
    exec: Execution,
) -> Result<Vec<Vec<f64>>> {
    let c = &model.countries[ci];
    let p = c.basis.p();
    let draws: Vec<&sampler::Draw> = post.draws().collect();
    // streams are offset per country so countries project independently
    let base = seed.wrapping_add((ci as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    par::map_indices(exec, draws.len(), |j| {
        let d = draws[j];
        let mut rng = draw_rng(base, j);
        project_alpha(&d.alpha[ci], d.countries[ci].sigma, p, dist, w, &mut rng)
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub year: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Per-year median and 90% interval of `Λ(t) = exp(Σ b_k(t)·α_k)`.
pub fn trajectory(alpha_draws: &[Vec<f64>], basis: &SplineBasis, years: &[f64]) -> Result<Vec<TrajectoryPoint>> {
    if alpha_draws.is_empty() {
        return Err(Error::InvalidArgument("no coefficient draws".into()));
    }
    years
        .iter()
        .map(|&t| {
            let b = basis.eval(t)?;
            let lam: Vec<f64> = alpha_draws
                .iter()
                .map(|a| {
                    if a.len() != b.len() {
                        return Err(Error::Dimension {
                            expected: b.len(),
                            got: a.len(),
                        });
                    }
                    Ok(b.iter().zip(a).map(|(w, x)| w * x).sum::<f64>().exp())
                })
                .collect::<Result<_>>()?;
            let s = sampler::diagnostics::summary90(&lam)?;
            Ok(TrajectoryPoint {
                year: t,
                median: s.median,
                lower: s.lower,
                upper: s.upper,
            })
        })
        .collect()
}

/// Whole years from the first observation year through the projection end.
pub fn yearly_grid(basis: &SplineBasis) -> Vec<f64> {
    let start = basis.first_obs().ceil() as i64;
    let end = basis.projection_end().floor() as i64;
    (start..=end).map(|y| y as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn global_dist_examples() {
        assert!(matches!(
            build_global_dist(&[-0.1, -0.1, -0.1]),
            Err(Error::Degenerate(_))
        ));
        let d = build_global_dist(&[-0.2, -0.1, 0.0]).unwrap();
        assert!((d.g + 0.1).abs() < 1e-15);
        assert!((d.v - 0.01).abs() < 1e-12);
        assert!(build_global_dist(&[0.3]).is_err());
    }

    #[test]
    fn pool_step_limits() {
        let dist = GlobalChangeDist { g: -0.1, v: 0.004 };
        let s = pool_step(-0.3, 0.02, dist, 0.0);
        assert_eq!((s.mean, s.var, s.log_weight), (-0.3, 0.02, 0.0));
        let s = pool_step(-0.3, 0.02, dist, 1.0);
        assert_eq!((s.mean, s.var, s.log_weight), (-0.1, 0.004, 1.0));
        let s = pool_step(-0.3, 0.02, dist, 0.5);
        assert!((s.mean + 0.2).abs() < 1e-15);
    }

    #[test]
    fn recursion_is_a_logarithmic_pool() {
        let dist = GlobalChangeDist { g: -0.05, v: 0.003 };
        for &(gp, th, w) in &[(-0.2, 0.01, 0.3), (0.1, 0.0004, 0.5), (0.0, 0.05, 0.9)] {
            let s = pool_step(gp, th, dist, w);
            let (m, v) = log_pool_normal(gp, th, dist.g, dist.v, s.log_weight);
            assert!((m - s.mean).abs() < 1e-14);
            assert!((v - s.var).abs() < 1e-14);
            let direct = w * dist.v / (w * dist.v + (1.0 - w) * th);
            assert!((s.log_weight - direct).abs() < 1e-15);
        }
    }

    #[test]
    fn theta_unrolled_matches_closed_form() {
        let dist = GlobalChangeDist { g: 0.0, v: 0.002 };
        for &w in &[0.1, 0.5, 0.8] {
            let mut theta = 0.03f64.powi(2);
            for a in 1..=40u32 {
                theta = pool_step(0.0, theta, dist, w).var;
                let cf = theta_closed_form(a, w, dist.v, 0.03f64.powi(2));
                assert!((theta - cf).abs() < 1e-15, "a={a} w={w}");
            }
        }
        let mut theta = 5.0;
        for _ in 0..200 {
            theta = pool_step(0.0, theta, dist, 0.5).var;
        }
        assert!((theta - dist.v).abs() < 1e-6);
    }

    #[test]
    fn full_pooling_sets_gamma_and_theta_every_step() {
        let dist = GlobalChangeDist { g: -0.07, v: 0.001 };
        let mut gamma = 0.4;
        let mut theta = 0.2;
        let mut r = rng(1);
        for _ in 0..10 {
            let s = pool_step(gamma, theta, dist, 1.0);
            assert_eq!(s.mean, dist.g);
            assert_eq!(s.var, dist.v);
            gamma = s.mean + s.var.sqrt() * stats::std_normal(&mut r);
            theta = s.var;
        }
    }

    #[test]
    fn one_step_mean_is_average() {
        let dist = GlobalChangeDist { g: -0.1, v: 0.001 };
        let mut r = rng(2);
        let n = 20000;
        let alpha_base = [4.0, 3.9, 3.75, 3.7];
        let mut sum_gamma = 0.0;
        let mut sum_prev = 0.0;
        for i in 0..n {
            let shift = 0.05 * ((i % 7) as f64 - 3.0);
            let a = [alpha_base[0], alpha_base[1], alpha_base[2] + shift, alpha_base[3]];
            let out = project_alpha(&a, 0.01, 4, dist, 0.5, &mut r).unwrap();
            sum_gamma += out[3] - out[2];
            sum_prev += a[2] - a[1];
        }
        let mean = sum_gamma / n as f64;
        let expect = 0.5 * dist.g + 0.5 * sum_prev / n as f64;
        // sd per draw is sqrt(0.5·0.001 + 0.5·1e-4) ≈ 0.023
        assert!((mean - expect).abs() < 4.0 * 0.0235 / (n as f64).sqrt());
    }

    #[test]
    fn errors() {
        let dist = GlobalChangeDist { g: 0.0, v: 0.001 };
        let mut r = rng(3);
        assert!(project_alpha(&[1.0, 1.0, 1.0, 1.0], 0.1, 3, dist, 0.5, &mut r).is_err());
        assert!(project_alpha(&[1.0, 1.0, 1.0, 1.0], 0.1, 6, dist, 1.5, &mut r).is_err());
        assert_eq!(
            project_alpha(&[1.0, 1.0, 1.0, 1.0], 0.1, 6, dist, 0.5, &mut r)
                .unwrap()
                .len(),
            6
        );
    }

    #[test]
    fn constant_and_linear_trajectories() {
        let basis = SplineBasis::new(1990.0, 2010.0, 2015.0, 2.5).unwrap();
        let p = basis.p();
        let flat = vec![vec![3.0; p]; 5];
        let years = yearly_grid(&basis);
        for pt in trajectory(&flat, &basis, &years).unwrap() {
            assert!((pt.median - 3f64.exp()).abs() < 1e-10);
        }
        let lin: Vec<Vec<f64>> = vec![(0..p).map(|k| 4.5 - 0.1 * k as f64).collect(); 3];
        let tr = trajectory(&lin, &basis, &years).unwrap();
        let logs: Vec<f64> = tr.iter().map(|p| p.median.ln()).collect();
        let slope = (logs[1] - logs[0]) / (years[1] - years[0]);
        for (w, ys) in logs.windows(2).zip(years.windows(2)) {
            assert!(((w[1] - w[0]) / (ys[1] - ys[0]) - slope).abs() < 1e-10);
            assert!(w[1] < w[0]);
        }
        assert!(trajectory(&flat, &basis, &[1900.0]).is_err());
    }
}
