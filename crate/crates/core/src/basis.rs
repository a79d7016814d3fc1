//! Cubic B-spline bases on equally spaced knots, the second-order
//! difference reparameterization of the coefficients, and merging of
//! coefficients over conflict periods.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_INTERVAL: f64 = 2.5;
const DEGREE: usize = 3;

/// Cubic B-spline basis for one country.
///
/// Spline `k` (1-based) has support `[T_k − 2I, T_k + 2I]` around its centre
/// knot `T_k`. The `K`-th spline is centred at `t_n + 1.5·I`, so it overlaps
/// the observation period by `0.5·I` years; splines `K+1..=P` are nonzero
/// only in the projection period.
#[derive(Debug, Clone)]
pub struct SplineBasis {
    interval: f64,
    knots: Vec<f64>,
    k_obs: usize,
    p_total: usize,
    first_obs: f64,
    last_obs: f64,
    projection_end: f64,
}

impl SplineBasis {
    pub fn new(first_obs: f64, last_obs: f64, projection_end: f64, interval: f64) -> Result<Self> {
        if !(interval > 0.0) {
            return Err(Error::Basis(format!("interval must be positive, got {interval}")));
        }
        if !(first_obs.is_finite() && last_obs.is_finite() && projection_end.is_finite()) {
            return Err(Error::Basis("non-finite basis bounds".into()));
        }
        if last_obs - first_obs < interval {
            return Err(Error::Basis(format!(
                "observation span {first_obs}..{last_obs} shorter than one interval ({interval})"
            )));
        }
        if projection_end < last_obs {
            return Err(Error::Basis(format!(
                "projection end {projection_end} before last observation {last_obs}"
            )));
        }
        let anchor = last_obs + 1.5 * interval;
        // Smallest K whose first centre lies in (t0 − 2I, t0 − I].
        let m = (anchor - first_obs + interval) / interval;
        let k_obs = (m - 1e-9).ceil() as usize + 1;
        let first_center = anchor - (k_obs - 1) as f64 * interval;
        let p_span = (projection_end + 2.0 * interval - first_center) / interval;
        let p_total = ((p_span - 1e-9).ceil() as usize).max(k_obs);
        // offsets from the anchor keep T_K exact
        let knots = (0..p_total + DEGREE + 1)
            .map(|j| anchor + (j as f64 - (k_obs + 1) as f64) * interval)
            .collect();
        Ok(Self {
            interval,
            knots,
            k_obs,
            p_total,
            first_obs,
            last_obs,
            projection_end,
        })
    }

    pub fn interval(&self) -> f64 {
        self.interval
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of splines nonzero during the observation period (`K`).
    pub fn k(&self) -> usize {
        self.k_obs
    }

    /// Number of splines including the projection period (`P`).
    pub fn p(&self) -> usize {
        self.p_total
    }

    /// Number of second differences (`K − 2`).
    pub fn q(&self) -> usize {
        self.k_obs - 2
    }

    /// Centre knot of spline `k` (1-based).
    pub fn center(&self, k: usize) -> f64 {
        self.knots[k + 1]
    }

    pub fn support(&self, k: usize) -> (f64, f64) {
        (self.knots[k - 1], self.knots[k + 3])
    }

    pub fn first_obs(&self) -> f64 {
        self.first_obs
    }

    pub fn last_obs(&self) -> f64 {
        self.last_obs
    }

    pub fn projection_end(&self) -> f64 {
        self.projection_end
    }

    pub fn span(&self) -> (f64, f64) {
        (self.first_obs, self.projection_end)
    }

    /// All `P` basis values at `t` (Cox–de Boor recursion).
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let (lo, hi) = self.span();
        let tol = 1e-9;
        if !(t >= lo - tol && t <= hi + tol) {
            return Err(Error::OutsideSpan { t, lo, hi });
        }
        let mut out = vec![0.0; self.p_total];
        let (first, vals) = self.nonzero(t);
        for (j, v) in vals.iter().enumerate() {
            if let Some(slot) = out.get_mut(first + j) {
                *slot = *v;
            }
        }
        Ok(out)
    }

    /// The first `K` basis values at an observation-period time.
    pub fn eval_obs(&self, t: f64) -> Result<Vec<f64>> {
        let mut b = self.eval(t)?;
        b.truncate(self.k_obs);
        Ok(b)
    }

    /// Index (0-based) of the first of the four splines that may be
    /// nonzero at `t`, and their values.
    fn nonzero(&self, t: f64) -> (usize, [f64; DEGREE + 1]) {
        let u = &self.knots;
        // knot span j with u[j] <= t < u[j+1]; the span range [DEGREE, P-1]
        // keeps all four splines inside the basis
        let raw = ((t - u[0]) / self.interval).floor() as isize;
        let j = raw.clamp(DEGREE as isize, self.p_total as isize - 1) as usize;
        let mut n = [0.0; DEGREE + 1];
        let mut left = [0.0; DEGREE + 1];
        let mut right = [0.0; DEGREE + 1];
        n[0] = 1.0;
        for d in 1..=DEGREE {
            left[d] = t - u[j + 1 - d];
            right[d] = u[j + d] - t;
            let mut saved = 0.0;
            for r in 0..d {
                let denom = right[r + 1] + left[d - r];
                let tmp = n[r] / denom;
                n[r] = saved + right[r + 1] * tmp;
                saved = left[d - r] * tmp;
            }
            n[d] = saved;
        }
        (j - DEGREE, n)
    }

    /// Second-order difference matrix of size `(K − 2) × K`.
    pub fn difference_matrix(&self) -> DMatrix<f64> {
        difference_matrix(self.k_obs)
    }

    pub fn reparam(&self) -> Reparameterization {
        Reparameterization::new(self.k_obs, self.k_obs as f64 / 2.0)
    }
}

pub fn make_basis(
    first_obs_year: f64,
    last_obs_year: f64,
    projection_end_year: f64,
    interval: f64,
) -> Result<SplineBasis> {
    SplineBasis::new(first_obs_year, last_obs_year, projection_end_year, interval)
}

pub fn difference_matrix(n: usize) -> DMatrix<f64> {
    let q = n.saturating_sub(2);
    let mut d = DMatrix::zeros(q, n);
    for i in 0..q {
        d[(i, i)] = 1.0;
        d[(i, i + 1)] = -2.0;
        d[(i, i + 2)] = 1.0;
    }
    d
}

/// Level, slope and second differences of the spline coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientReparam {
    pub lambda0: f64,
    pub lambda1: f64,
    pub eps: Vec<f64>,
}

/// Maps `(λ0, λ1, ε)` to coefficients
/// `α_k = λ0 + λ1·(k − centre) + [D'(DD')⁻¹ε]_k`, `k = 1..=n`.
#[derive(Debug, Clone)]
pub struct Reparameterization {
    n: usize,
    center: f64,
    /// `D'(DD')⁻¹`, `n × (n − 2)`.
    pinv: DMatrix<f64>,
}

impl Reparameterization {
    pub fn new(n: usize, center: f64) -> Self {
        assert!(n >= 3, "reparameterization needs at least 3 coefficients");
        let d = difference_matrix(n);
        let ddt = &d * d.transpose();
        let inv = ddt.cholesky().expect("DD' is positive definite").inverse();
        Self {
            n,
            center,
            pinv: d.transpose() * inv,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.n - 2
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn pinv(&self) -> &DMatrix<f64> {
        &self.pinv
    }

    /// `n × (n)` map from `θ = (λ0, λ1, ε)` to α.
    pub fn design(&self) -> DMatrix<f64> {
        let mut t = DMatrix::zeros(self.n, self.n);
        for k in 0..self.n {
            t[(k, 0)] = 1.0;
            t[(k, 1)] = (k + 1) as f64 - self.center;
            for q in 0..self.q() {
                t[(k, 2 + q)] = self.pinv[(k, q)];
            }
        }
        t
    }

    pub fn to_alpha(&self, rep: &CoefficientReparam) -> Result<Vec<f64>> {
        if rep.eps.len() != self.q() {
            return Err(Error::Dimension {
                expected: self.q(),
                got: rep.eps.len(),
            });
        }
        let eps = DVector::from_column_slice(&rep.eps);
        let smooth = &self.pinv * eps;
        Ok((0..self.n)
            .map(|k| rep.lambda0 + rep.lambda1 * ((k + 1) as f64 - self.center) + smooth[k])
            .collect())
    }
}

pub fn reparam_to_alpha(rep: &CoefficientReparam, basis: &SplineBasis) -> Result<Vec<f64>> {
    basis.reparam().to_alpha(rep)
}

/// Assignment of the `K` observation-period splines to free coefficients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoefficientMap {
    /// For each spline (0-based), the index of its free coefficient.
    pub groups: Vec<usize>,
    pub n_free: usize,
}

impl CoefficientMap {
    pub fn identity(k: usize) -> Self {
        Self {
            groups: (0..k).collect(),
            n_free: k,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.n_free == self.groups.len()
    }

    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        self.groups.iter().map(|&g| free[g]).collect()
    }

    /// `K × n_free` 0/1 matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.groups.len(), self.n_free);
        for (k, &g) in self.groups.iter().enumerate() {
            m[(k, g)] = 1.0;
        }
        m
    }
}

/// Merge every observation-period spline whose support overlaps a period
/// into one shared coefficient, so the fitted curve is constant over the
/// period.
pub fn merge_conflict_splines(basis: &SplineBasis, periods: &[(f64, f64)]) -> Result<CoefficientMap> {
    let mut sorted: Vec<(f64, f64)> = periods.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in sorted.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(Error::OverlappingPeriods {
                a0: w[0].0,
                a1: w[0].1,
                b0: w[1].0,
                b1: w[1].1,
            });
        }
    }
    for &(a, b) in &sorted {
        if !(a < b) {
            return Err(Error::InvalidArgument(format!("empty conflict period [{a}, {b}]")));
        }
    }
    let k = basis.k();
    // period id per spline
    let mut tag: Vec<Option<usize>> = vec![None; k];
    for (p, &(a, b)) in sorted.iter().enumerate() {
        for (i, slot) in tag.iter_mut().enumerate() {
            let (lo, hi) = basis.support(i + 1);
            if lo < b && hi > a {
                // adjacent periods sharing a spline collapse into one group
                *slot = Some(slot.map_or(p, |q| q.min(p)));
            }
        }
    }
    let mut groups = Vec::with_capacity(k);
    let mut next = 0usize;
    for i in 0..k {
        let shares_prev = i > 0 && tag[i].is_some() && tag[i - 1].is_some();
        if shares_prev {
            groups.push(next - 1);
        } else {
            groups.push(next);
            next += 1;
        }
    }
    Ok(CoefficientMap { groups, n_free: next })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Cox–de Boor by the textbook recursion on the full knot vector, used as
    /// an oracle for the triangular evaluation.
    fn cox_de_boor(knots: &[f64], i: usize, p: usize, t: f64) -> f64 {
        if p == 0 {
            return if knots[i] <= t && t < knots[i + 1] { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 > 0.0 {
            v += (t - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, t);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + p + 1] - t) / d2 * cox_de_boor(knots, i + 1, p - 1, t);
        }
        v
    }

    fn basis() -> SplineBasis {
        make_basis(1980.0, 2012.0, 2016.0, 2.5).unwrap()
    }

    #[test]
    fn knot_rule() {
        let b = basis();
        assert_eq!(b.center(b.k()), 2015.75);
        let (lo, hi) = b.support(1);
        assert_eq!(hi - lo, 10.0);
        // K-th spline overlaps the observation period for 1.25 years
        let (lo_k, _) = b.support(b.k());
        assert_abs_diff_eq!(b.last_obs() - lo_k, 1.25, epsilon = 1e-12);
        // spline K+1 is zero during the observation period
        assert!(b.support(b.k() + 1).0 > b.last_obs());
        // first spline is needed at the first observation year
        let (lo1, hi1) = b.support(1);
        assert!(lo1 < 1980.0 && hi1 > 1980.0);
        assert!(b.knots()[0] <= 1980.0 - 3.0 * 2.5);
    }

    #[test]
    fn knot_weights_match_uniform_pattern() {
        let b = basis();
        let t = b.center(5);
        let w = b.eval(t).unwrap();
        let nz: Vec<f64> = w.iter().copied().filter(|v| *v > 1e-14).collect();
        assert_eq!(nz.len(), 3);
        assert_abs_diff_eq!(nz[0], 1.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(nz[1], 4.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(nz[2], 1.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn midpoint_weights_symmetric() {
        let b = basis();
        let t = 0.5 * (b.center(5) + b.center(6));
        let w = b.eval(t).unwrap();
        let nz: Vec<f64> = w.iter().copied().filter(|v| *v > 0.0).collect();
        assert_eq!(nz.len(), 4);
        assert_abs_diff_eq!(nz[0], nz[3], epsilon = 1e-14);
        assert_abs_diff_eq!(nz[1], nz[2], epsilon = 1e-14);
    }

    #[test]
    fn agrees_with_recursive_oracle() {
        let b = basis();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let t = rng.random_range(1980.0..2016.0);
            let w = b.eval(t).unwrap();
            for (i, wi) in w.iter().enumerate() {
                assert_abs_diff_eq!(*wi, cox_de_boor(b.knots(), i, 3, t), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn errors() {
        assert!(make_basis(2000.0, 2001.0, 2005.0, 2.5).is_err());
        let b = basis();
        assert!(matches!(b.eval(1970.0), Err(Error::OutsideSpan { .. })));
        assert!(matches!(b.eval(2030.0), Err(Error::OutsideSpan { .. })));
        let rep = CoefficientReparam {
            lambda0: 0.0,
            lambda1: 0.0,
            eps: vec![0.0; 2],
        };
        assert!(matches!(reparam_to_alpha(&rep, &b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn reparam_examples() {
        let b = basis();
        let rep = CoefficientReparam {
            lambda0: 1.0,
            lambda1: 0.0,
            eps: vec![0.0; b.q()],
        };
        for a in reparam_to_alpha(&rep, &b).unwrap() {
            assert_abs_diff_eq!(a, 1.0, epsilon = 1e-14);
        }
        let r8 = Reparameterization::new(8, 4.0);
        let alpha = r8
            .to_alpha(&CoefficientReparam {
                lambda0: 1.0,
                lambda1: 0.1,
                eps: vec![0.0; 6],
            })
            .unwrap();
        for (i, a) in alpha.iter().enumerate() {
            assert_abs_diff_eq!(*a, 1.0 + 0.1 * ((i + 1) as f64 - 4.0), epsilon = 1e-14);
        }
    }

    #[test]
    fn pinv_is_right_inverse() {
        for n in 3..30 {
            let r = Reparameterization::new(n, n as f64 / 2.0);
            let prod = difference_matrix(n) * r.pinv();
            let id = DMatrix::<f64>::identity(n - 2, n - 2);
            assert!((prod - id).abs().max() < 1e-10);
        }
    }

    #[test]
    fn projection_horizon_does_not_move_observation_weights() {
        let a = make_basis(1980.0, 2012.0, 2014.0, 2.5).unwrap();
        let b = make_basis(1980.0, 2012.0, 2030.0, 2.5).unwrap();
        assert_eq!(a.k(), b.k());
        assert!(b.p() > a.p());
        for i in 0..100 {
            let t = 1980.0 + 0.32 * i as f64;
            assert_eq!(a.eval_obs(t).unwrap(), b.eval_obs(t).unwrap());
        }
    }

    #[test]
    fn merge_identity_and_counts() {
        let b = basis();
        assert_eq!(
            merge_conflict_splines(&b, &[]).unwrap(),
            CoefficientMap::identity(b.k())
        );
        let c = b.center(8);
        let m = merge_conflict_splines(&b, &[(c, c + 5.0)]).unwrap();
        // supports overlapping (c, c + 2I): centres c - I ..= c + 3I, five splines
        assert_eq!(m.n_free, b.k() - 4);
        assert!(merge_conflict_splines(&b, &[(1990.0, 1995.0), (1994.0, 1999.0)]).is_err());
    }

    #[test]
    fn merged_fit_constant_over_period() {
        let b = basis();
        let (p0, p1) = (1993.0, 2001.0);
        let m = merge_conflict_splines(&b, &[(p0, p1)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let free: Vec<f64> = (0..m.n_free).map(|_| rng.random_range(3.0..5.0)).collect();
        let alpha = m.expand(&free);
        let psi = |t: f64| -> f64 { b.eval_obs(t).unwrap().iter().zip(&alpha).map(|(w, a)| w * a).sum() };
        let reference = psi(p0);
        for i in 0..=80 {
            let t = p0 + (p1 - p0) * i as f64 / 80.0;
            assert_abs_diff_eq!(psi(t), reference, epsilon = 1e-10);
        }
    }

    proptest! {
        #[test]
        fn partition_of_unity(t0 in 1950.0..2000.0f64, len in 3.0..50.0f64, u in 0.0..1.0f64, extra in 0.0..15.0f64) {
            let b = make_basis(t0, t0 + len, t0 + len + extra, 2.5).unwrap();
            let t = t0 + u * (len + extra);
            let w = b.eval(t).unwrap();
            let s: f64 = w.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().filter(|v| **v != 0.0).count() <= 4);
            prop_assert!(w.iter().all(|v| *v >= 0.0));
        }

        #[test]
        fn reparam_is_linear(l0 in -5.0..5.0f64, l1 in -1.0..1.0f64, scale in -3.0..3.0f64, seed in 0u64..1000) {
            let r = Reparameterization::new(12, 6.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let eps: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = r.to_alpha(&CoefficientReparam { lambda0: l0, lambda1: l1, eps: eps.clone() }).unwrap();
            let scaled = r.to_alpha(&CoefficientReparam {
                lambda0: scale * l0,
                lambda1: scale * l1,
                eps: eps.iter().map(|e| scale * e).collect(),
            }).unwrap();
            for (x, y) in a.iter().zip(&scaled) {
                prop_assert!((scale * x - y).abs() < 1e-10);
            }
        }
    }
}
