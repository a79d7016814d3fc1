use proptest::prelude::*;
use u5mr_core::project::{pool_step, theta_closed_form, GlobalChangeDist};
use u5mr_core::validate::{arr, coverage, interval_score};

proptest! {
    #[test]
    fn pooled_step_is_convex(
        prev_g in -0.2..0.2f64,
        prev_t in 1e-6..0.05f64,
        g in -0.2..0.2f64,
        v in 1e-6..0.05f64,
        w in 0.0..=1.0f64,
    ) {
        let s = pool_step(prev_g, prev_t, GlobalChangeDist { g, v }, w);
        let tol = 1e-12;
        prop_assert!(s.mean >= prev_g.min(g) - tol && s.mean <= prev_g.max(g) + tol);
        prop_assert!(s.var >= prev_t.min(v) - tol && s.var <= prev_t.max(v) + tol);
        prop_assert!((0.0..=1.0).contains(&s.log_weight));
    }

    #[test]
    fn theta_recursion_matches_closed_form(
        a in 0u32..60,
        w in 0.0..=1.0f64,
        v in 1e-5..0.05f64,
        sigma2 in 1e-5..0.05f64,
    ) {
        let dist = GlobalChangeDist { g: 0.0, v };
        let mut theta = sigma2;
        for _ in 0..a {
            theta = pool_step(0.0, theta, dist, w).var;
        }
        prop_assert!((theta - theta_closed_form(a, w, v, sigma2)).abs() < 1e-12);
    }

    #[test]
    fn interval_score_bounds(
        l in 5.0..100.0f64,
        width in 0.0..100.0f64,
        x in 1.0..300.0f64,
        alpha in 0.01..0.5f64,
    ) {
        let r = l + width;
        let s = interval_score(l, r, x, alpha).unwrap();
        let log_width = r.ln() - l.ln();
        prop_assert!(s >= log_width - 1e-12);
        if l <= x && x <= r {
            prop_assert!((s - log_width).abs() < 1e-12);
        }
    }

    #[test]
    fn coverage_fractions_partition(
        pts in proptest::collection::vec((0.0..10.0f64, 0.0..10.0f64, -1.0..12.0f64), 1..50),
    ) {
        let pts: Vec<(f64, f64, f64)> = pts.into_iter().map(|(a, b, u)| (a.min(b), a.max(b), u)).collect();
        let c = coverage(&pts);
        prop_assert!((c.inside + c.below + c.above - 1.0).abs() < 1e-12);
        prop_assert!(c.inside >= 0.0 && c.below >= 0.0 && c.above >= 0.0);
    }

    #[test]
    fn arr_is_antisymmetric(
        l1 in 1.0..300.0f64,
        l2 in 1.0..300.0f64,
        t1 in 1950.0..2000.0f64,
        gap in 0.5..30.0f64,
    ) {
        let t2 = t1 + gap;
        let fwd = arr(l1, l2, t1, t2).unwrap();
        prop_assert!((fwd + arr(l2, l1, t1, t2).unwrap()).abs() < 1e-9);
        prop_assert!((fwd - arr(l2, l1, t2, t1).unwrap()).abs() < 1e-9);
    }
}
