use proptest::prelude::*;

use yaglom::evolve::{brute_force_distribution, evolve_trace, Evolution};
use yaglom::extrapolate::richardson_series;
use yaglom::measures::TabulatedMeasure;
use yaglom::{kernel_step, MassState, NNKernel, Region, StepKernel, StepLaw};

/// A step law with total mass in `[0.3, 1]` and every move possible.
fn law() -> impl Strategy<Value = StepLaw> {
    (0.05f64..1.0, 0.0f64..1.0, 0.05f64..1.0, 0.3f64..1.0).prop_map(|(u, s, d, total)| {
        let z = (u + s + d) / total;
        StepLaw::new(u / z, s / z, d / z)
    })
}

/// Three regions split at `-k` and `k`, plus one override at the origin.
fn kernel() -> impl Strategy<Value = NNKernel> {
    (law(), law(), law(), law(), 1i64..6).prop_map(|(left, mid, right, origin, k)| {
        NNKernel::new(
            vec![
                Region::new(None, Some(-k - 1), left),
                Region::new(Some(-k), Some(k), mid),
                Region::new(Some(k + 1), None, right),
            ],
            [(0, origin)],
        )
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conditioned_law_is_a_probability(k in kernel(), x0 in -8i64..8, n in 1usize..200) {
        let t = evolve_trace(&k, x0, n, &[]).unwrap();
        let total: f64 = t.distribution.iter().map(|(_, p)| p).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(t.distribution.iter().all(|(_, p)| p >= 0.0));
        prop_assert!(t.survival_factors.iter().all(|s| (0.0..=1.0 + 1e-15).contains(s)));
        let logs = t.log_masses.iter().zip(&t.log_masses[1..]);
        prop_assert!(logs.zip(&t.survival_factors).all(|((a, b), s)| ((b - a).exp() - s).abs() < 1e-12));
    }

    #[test]
    fn evolution_agrees_with_exact_arithmetic(k in kernel(), x0 in -4i64..4, n in 1usize..10) {
        let exact = brute_force_distribution(&k, x0, n).unwrap();
        let mut ev = Evolution::new(&k, x0);
        ev.advance(n).unwrap();
        let total = ev.log_mass().exp();
        prop_assert!((total / exact.survival_f64() - 1.0).abs() < 1e-12);
        for x in exact.window.sites() {
            let m = exact.mass(x);
            if m > 0.0 {
                prop_assert!((ev.prob(x) * total / m - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_steps_compose(k in kernel(), x0 in -5i64..5) {
        let (one, s1) = kernel_step(&k, &MassState::point(x0)).unwrap();
        let (two, s2) = kernel_step(&k, &one).unwrap();
        let mut ev = Evolution::new(&k, x0);
        ev.advance(2).unwrap();
        prop_assert!((ev.log_mass() - (s1 * s2).ln()).abs() < 1e-12);
        for (x, p) in two.iter() {
            prop_assert!((ev.prob(x) - p).abs() < 1e-14);
        }
    }

    #[test]
    fn mirroring_twice_is_the_identity(k in kernel()) {
        let back = k.mirrored().mirrored();
        for x in -10..=10 {
            prop_assert_eq!(k.law(x), back.law(x));
            let (l, m) = (k.law(x), k.mirrored().law(-x));
            prop_assert_eq!((l.up, l.stay, l.down), (m.down, m.stay, m.up));
        }
    }

    #[test]
    fn lazification_keeps_kill_ratio(k in kernel(), r in 0.0f64..0.9) {
        let lazy = k.lazify(r).unwrap();
        for x in -8..=8 {
            let (a, b) = (k.law(x), lazy.law(x));
            prop_assert!((b.kill() - (1.0 - r) * a.kill()).abs() < 1e-14);
            prop_assert!((b.stay - (r + (1.0 - r) * a.stay)).abs() < 1e-14);
        }
    }

    #[test]
    fn total_variation_is_a_metric(k in kernel(), x0 in -3i64..3, n in 5usize..60, m in 5usize..60) {
        let law_at = |steps| {
            let mut ev = Evolution::new(&k, x0);
            ev.advance(steps).unwrap();
            TabulatedMeasure::from(&ev.state())
        };
        let (a, b) = (law_at(n), law_at(m));
        let d = a.total_variation(&b);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&d));
        prop_assert!((d - b.total_variation(&a)).abs() < 1e-15);
        prop_assert!(a.total_variation(&a) == 0.0);
    }

    #[test]
    fn richardson_cancels_first_order(a in -5.0f64..5.0, b in -50.0f64..50.0) {
        let s: Vec<f64> = (1..=400).map(|n| a + b / n as f64).collect();
        let e = richardson_series(&s, 1);
        prop_assert!((e[399].unwrap() - a).abs() < 1e-12 * (1.0 + b.abs()));
    }
}
