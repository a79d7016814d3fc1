//! Convergence diagnostics and posterior summaries.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{Diagnostics, Posterior};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::stats;

/// Gelman–Rubin potential scale reduction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rhat {
    Value(f64),
    /// Every chain is constant, so the ratio is undefined.
    ZeroWithinVariance,
}

impl Rhat {
    pub fn value(self) -> Option<f64> {
        match self {
            Rhat::Value(v) => Some(v),
            Rhat::ZeroWithinVariance => None,
        }
    }
}

/// `sqrt(((n−1)/n·W + B/n) / W)` over `m ≥ 2` chains of equal length `n ≥ 10`.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> Result<Rhat> {
    if chains.len() < 2 {
        return Err(Error::InvalidArgument("Gelman-Rubin needs at least 2 chains".into()));
    }
    let n = chains[0].len();
    if n < 10 || chains.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidArgument(
            "Gelman-Rubin needs chains of equal length with at least 10 draws".into(),
        ));
    }
    Ok(gelman_rubin_unchecked(chains))
}

fn gelman_rubin_unchecked(chains: &[Vec<f64>]) -> Rhat {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| stats::mean(c)).collect();
    let w = stats::mean(&chains.iter().map(|c| stats::sample_variance(c)).collect::<Vec<_>>());
    if !(w > 0.0) {
        return Rhat::ZeroWithinVariance;
    }
    let b = n * stats::sample_variance(&means);
    let var_plus = (n - 1.0) / n * w + b / n;
    Rhat::Value((var_plus / w).sqrt())
}

/// Multi-chain effective sample size with Geyer's initial positive sequence.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    if m == 0 {
        return 0.0;
    }
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if n < 4 {
        return (m * n) as f64;
    }
    let means: Vec<f64> = chains.iter().map(|c| stats::mean(&c[..n])).collect();
    let centred: Vec<Vec<f64>> = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c[..n].iter().map(|v| v - mu).collect())
        .collect();
    let nf = n as f64;
    // autocovariance at `lag`, averaged over chains
    let acov = |lag: usize| {
        centred
            .iter()
            .map(|d| d[..n - lag].iter().zip(&d[lag..]).map(|(a, b)| a * b).sum::<f64>() / nf)
            .sum::<f64>()
            / m as f64
    };
    let acov0 = acov(0);
    let w = acov0 * nf / (nf - 1.0);
    let b_over_n = if m > 1 { stats::sample_variance(&means) } else { 0.0 };
    let var_plus = w * (nf - 1.0) / nf + b_over_n;
    if !(var_plus > 0.0) {
        return (m * n) as f64;
    }
    let rho = |a: f64| 1.0 - (w - a) / var_plus;
    let mut sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let a0 = if t == 0 { acov0 } else { acov(t) };
        let pair = rho(a0) + rho(acov(t + 1));
        if pair < 0.0 {
            break;
        }
        // monotone initial sequence
        let pair = pair.min(prev_pair);
        sum += pair;
        prev_pair = pair;
        t += 2;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / (m * n) as f64);
    (m * n) as f64 / tau
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub lower: f64,
    pub median: f64,
    pub upper: f64,
}

/// Type-7 quantiles of `draws` at each probability in `probs`.
pub fn posterior_summary(draws: &[f64], probs: &[f64]) -> Result<Vec<f64>> {
    if draws.is_empty() {
        return Err(Error::InvalidArgument("no draws to summarize".into()));
    }
    let s = stats::sorted(draws);
    Ok(probs.iter().map(|&p| stats::quantile_sorted(&s, p)).collect())
}

/// Median with the 5th and 95th percentiles.
pub fn summary90(draws: &[f64]) -> Result<Summary> {
    let q = posterior_summary(draws, &[0.05, 0.5, 0.95])?;
    Ok(Summary {
        lower: q[0],
        median: q[1],
        upper: q[2],
    })
}

pub(crate) fn compute(model: &Model, post: &Posterior) -> Diagnostics {
    let mut rhat = BTreeMap::new();
    let mut ess = BTreeMap::new();
    let usable = post.chains.len() >= 2 && post.chains.iter().all(|c| c.draws.len() >= 10);
    for (name, chains) in post.traces(model) {
        if usable && chains.iter().all(|c| c.len() == chains[0].len()) {
            rhat.insert(name.clone(), gelman_rubin_unchecked(&chains));
        }
        ess.insert(name, effective_sample_size(&chains));
    }
    let mut acceptance: BTreeMap<String, f64> = BTreeMap::new();
    for chain in &post.chains {
        for (k, v) in &chain.acceptance {
            *acceptance.entry(k.clone()).or_default() += v / post.chains.len() as f64;
        }
    }
    Diagnostics { rhat, ess, acceptance }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_computed_two_chains() {
        // below the public length minimum; the formula itself is length-agnostic
        let a = vec![1.0, 2.0, 3.0, 4.0];
        let b = vec![2.0, 3.0, 4.0, 5.0];
        // means 2.5, 3.5; s² = 5/3 each; W = 5/3; B = 4·0.5 = 2
        // var+ = 3/4·5/3 + 2/4 = 1.75; R̂ = sqrt(1.75 / (5/3)) = sqrt(1.05)
        let r = gelman_rubin_unchecked(&[a, b]).value().unwrap();
        assert!((r - 1.05f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn input_checks() {
        assert!(gelman_rubin(&[vec![0.0; 20]]).is_err());
        assert!(gelman_rubin(&[vec![0.0; 5], vec![0.0; 5]]).is_err());
        assert_eq!(
            gelman_rubin(&[vec![1.0; 20], vec![1.0; 20]]).unwrap(),
            Rhat::ZeroWithinVariance
        );
    }

    #[test]
    fn identical_distributions_give_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..5000).map(|_| stats::std_normal(&mut rng)).collect())
            .collect();
        let r = gelman_rubin(&chains).unwrap().value().unwrap();
        assert!((r - 1.0).abs() < 0.05, "{r}");
        let e = effective_sample_size(&chains);
        assert!(e > 15000.0 && e < 25000.0, "{e}");
    }

    #[test]
    fn disjoint_supports() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<f64> = (0..200).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 10.0).collect();
        assert!(gelman_rubin(&[a, b]).unwrap().value().unwrap() > 1.5);
    }

    #[test]
    fn ess_of_ar1_near_theory() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let phi: f64 = 0.8;
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut x = 0.0;
                (0..20000)
                    .map(|_| {
                        x = phi * x + stats::std_normal(&mut rng);
                        x
                    })
                    .collect()
            })
            .collect();
        let theory = 80000.0 * (1.0 - phi) / (1.0 + phi);
        let e = effective_sample_size(&chains);
        assert!((e / theory - 1.0).abs() < 0.15, "{e} vs {theory}");
    }

    #[test]
    fn summaries() {
        let d: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = summary90(&d).unwrap();
        assert!((s.median - 50.5).abs() < 1e-12);
        assert!((s.lower - 5.95).abs() < 1e-12);
        assert!((s.upper - 95.05).abs() < 1e-12);
        let c = summary90(&[2.0; 17]).unwrap();
        assert_eq!((c.lower, c.median, c.upper), (2.0, 2.0, 2.0));
        assert!(posterior_summary(&[], &[0.5]).is_err());
    }
}
