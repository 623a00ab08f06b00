//! Property tests for the piecewise-linear algebra.

use daytoll_core::pwl::{approximate_bpr, ApproxConfig, BprFunction, PwlFunction, Segment};
use proptest::prelude::*;

/// Strategy: a valid increasing pwl function built from 1..=4 random
/// segments (positive slopes, continuity by construction).
fn pwl_strategy() -> impl Strategy<Value = PwlFunction> {
    (
        1usize..=4,
        prop::collection::vec((0.1f64..5.0, 0.2f64..3.0), 4),
        0.0f64..4.0,
    )
        .prop_map(|(count, params, start_value)| {
            let mut segments = Vec::new();
            let mut x = 0.0;
            let mut value = start_value;
            for &(slope, width) in params.iter().take(count) {
                segments.push(Segment {
                    x_start: x,
                    slope,
                    intercept: value - slope * x,
                });
                value += slope * width;
                x += width;
            }
            PwlFunction::new(segments).expect("constructed to satisfy the invariants")
        })
}

proptest! {
    #[test]
    fn invert_then_eval_round_trips(f in pwl_strategy(), x in 0.0f64..20.0) {
        let y = f.eval(x).unwrap();
        let back = f.invert_monotone(y).unwrap();
        prop_assert!((back - x).abs() <= 1e-10 * x.max(1.0));
    }

    #[test]
    fn add_is_commutative(f in pwl_strategy(), g in pwl_strategy()) {
        let fg = f.add(&g);
        let gf = g.add(&f);
        prop_assert_eq!(fg.segments().len(), gf.segments().len());
        for (a, b) in fg.segments().iter().zip(gf.segments()) {
            prop_assert!((a.x_start - b.x_start).abs() < 1e-12);
            prop_assert!((a.slope - b.slope).abs() < 1e-12);
            prop_assert!((a.intercept - b.intercept).abs() < 1e-12);
        }
    }

    #[test]
    fn add_is_associative_on_breakpoints(
        f in pwl_strategy(),
        g in pwl_strategy(),
        h in pwl_strategy(),
        x in 0.0f64..15.0,
    ) {
        let left = f.add(&g).add(&h);
        let right = f.add(&g.add(&h));
        prop_assert_eq!(left.segments().len(), right.segments().len());
        let lv = left.eval(x).unwrap();
        let rv = right.eval(x).unwrap();
        prop_assert!((lv - rv).abs() <= 1e-9 * lv.abs().max(1.0));
    }

    #[test]
    fn sum_evaluates_pointwise(f in pwl_strategy(), g in pwl_strategy(), x in 0.0f64..20.0) {
        let h = f.add(&g);
        let expect = f.eval(x).unwrap() + g.eval(x).unwrap();
        prop_assert!((h.eval(x).unwrap() - expect).abs() <= 1e-9 * expect.abs().max(1.0));
    }

    #[test]
    fn band_bound_holds_for_random_bpr(
        c in 0.2f64..4.0,
        a in 1.5f64..5.0,
        b in 0.0f64..3.0,
        eps in 0.1f64..2.0,
        eta in 1usize..=6,
    ) {
        let bpr = BprFunction::new(c, a, b).unwrap();
        let approx = approximate_bpr(&bpr, &ApproxConfig::new(eps, eta).unwrap()).unwrap();
        prop_assert_eq!(approx.segments().len(), eta);
        // Band guarantee on the first eta - 1 segments.
        let last = approx.last_breakpoint();
        for k in 0..=1000 {
            let x = last * k as f64 / 1000.0;
            let err = (approx.eval(x).unwrap() - bpr.value(x)).abs();
            prop_assert!(err <= 2.0 * eps + 1e-9, "error {} at {}", err, x);
        }
    }
}
