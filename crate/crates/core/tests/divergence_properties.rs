use proptest::prelude::*;
use siddm_core::divergence::{jsd, kl, run_trials, tv_distance, verify_theorem, DiscreteJoint, TrialSummary};

/// Normalized weights; roughly a fifth of the cells are exactly zero.
fn table(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![1 => Just(0.0), 4 => 0.0f64..1.0], n).prop_filter_map("all zero", |w| {
        let s: f64 = w.iter().sum();
        (s > 0.0).then(|| w.iter().map(|v| v / s).collect())
    })
}

fn joint_pair() -> impl Strategy<Value = (DiscreteJoint, DiscreteJoint)> {
    (1usize..=8, 1usize..=8).prop_flat_map(|(nx, ny)| {
        (table(nx * ny), table(nx * ny)).prop_map(move |(a, b)| {
            (DiscreteJoint::new(nx, ny, a).unwrap(), DiscreteJoint::new(nx, ny, b).unwrap())
        })
    })
}

proptest! {
    #[test]
    fn divergences_stay_in_range((q, p) in joint_pair()) {
        let (a, b) = (q.table(), p.table());
        let tv = tv_distance(a, b).unwrap();
        let j = jsd(a, b).unwrap();
        prop_assert!((0.0..=1.0 + 1e-15).contains(&tv));
        prop_assert!(j >= 0.0 && j <= std::f64::consts::LN_2 + 1e-15);
        prop_assert!((j - jsd(b, a).unwrap()).abs() < 1e-14);
        prop_assert!(0.5 * tv * tv <= j + 1e-12 && j <= 2.0 * tv + 1e-12);
        if let Ok(k) = kl(a, b) {
            prop_assert!(k >= 0.0);
            prop_assert!(tv <= (k / 2.0).sqrt() + 1e-12);
        }
    }

    #[test]
    fn proven_steps_hold_on_tables_with_zeros((q, p) in joint_pair()) {
        let r = verify_theorem(&q, &p).unwrap();
        prop_assert!(r.triangle.holds);
        prop_assert!(r.pinsker_holds);
        prop_assert!(r.sandwich_holds);
        prop_assert!(r.holds != Some(false), "{:?}", r);
        if let Some(s) = r.slack {
            prop_assert_eq!(r.holds, Some(s >= -1e-12));
        }
    }
}

#[test]
fn thousand_dirichlet_trials() {
    let start = std::time::Instant::now();
    let reports = run_trials(1000, 8, 2024).unwrap();
    let elapsed = start.elapsed();
    let s = TrialSummary::from_reports(&reports);
    assert_eq!(s.trials, 1000);
    assert_eq!(s.triangle_failures, 0);
    assert_eq!(s.pinsker_failures, 0);
    assert_eq!(s.sandwich_failures, 0);
    assert_eq!(s.not_applicable, 0);
    assert_eq!(s.violations, 0, "{s:?}");
    assert!(elapsed.as_secs_f64() < 10.0);
}
