use proptest::prelude::*;

use solar_bess::degradation::{
    aging_coefficient, degradation_coefficient, rainflow_cycles, turning_points, update_capacity, CycleRecord,
};
use solar_bess::DegradationParams;

fn sorted(c: &[CycleRecord]) -> Vec<(f64, f64)> {
    let mut v: Vec<(f64, f64)> = c.iter().map(|c| (c.weight, c.depth)).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

fn series() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..=1.0f64, 2..80)
}

proptest! {
    #[test]
    fn interior_points_do_not_change_cycles(xs in series(), at in any::<prop::sample::Index>(), f in 0.01..0.99f64) {
        // a point strictly between two neighbours is not a reversal
        let i = 1 + at.index(xs.len() - 1);
        let mid = xs[i - 1] + f * (xs[i] - xs[i - 1]);
        let mut ys = xs.clone();
        ys.insert(i, mid);
        let (a, b) = (sorted(&rainflow_cycles(&xs)), sorted(&rainflow_cycles(&ys)));
        prop_assert_eq!(a.len(), b.len());
        for (p, q) in a.iter().zip(&b) {
            prop_assert_eq!(p.0, q.0);
            prop_assert!((p.1 - q.1).abs() <= 1e-12);
        }
    }

    #[test]
    fn cycles_are_bounded_by_the_range(xs in series()) {
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for c in rainflow_cycles(&xs) {
            prop_assert!(c.depth > 0.0 && c.depth <= hi - lo + 1e-12);
            prop_assert!(c.weight == 0.5 || c.weight == 1.0);
        }
        let tp = turning_points(&xs);
        prop_assert!(tp.windows(3).all(|w| (w[1] - w[0]) * (w[2] - w[1]) < 0.0));
    }

    #[test]
    fn capacity_fades_multiplicatively(e in 1.0..20.0f64, k1 in 0.0..0.1f64, k2 in 0.0..0.1f64) {
        let two = update_capacity(update_capacity(e, k1), k2);
        let one = update_capacity(e, k1 + k2);
        prop_assert!((two - one).abs() <= 1e-12 * e);
        prop_assert!(update_capacity(e, k1) <= e);
    }

    #[test]
    fn aging_and_price_are_non_negative(xs in series(), hours in 0.0..500.0f64, t in 0.0..50.0f64, loss in 0.0..0.5f64) {
        let k = aging_coefficient(&rainflow_cycles(&xs), hours, &DegradationParams::default());
        prop_assert!(k >= 0.0);
        let d = degradation_coefficient(9.5, 9.5 - loss, t, 1e5);
        prop_assert!(d >= 0.0);
        if t == 0.0 {
            prop_assert_eq!(d, 0.0);
        }
    }
}
