use std::sync::Arc;

use yaglom::evolve::{evolve_trace, Evolution};
use yaglom::measures::{
    extremal_minus, extremal_plus, Measure, Scale, SymmetricParams, TabulatedMeasure,
};
use yaglom::montecarlo::{orey_trace, sparse_grid, transformed_endpoints, MeanEstimate};
use yaglom::scenarios::{build_alpha_walk, build_symmetric, build_two_sided};
use yaglom::spectral::{chi_entrance, TwoSidedParams};
use yaglom::transforms::{
    hitting_split, symmetric_hhat, time_reversal, two_sided_hhat, TransformedKernel, HORIZON_CAP,
    HORIZON_START,
};
use yaglom::{NNKernel, Site, StepKernel, Window};

fn lazy_two_sided() -> (TwoSidedParams, NNKernel) {
    let p = TwoSidedParams::reference();
    (p, build_two_sided(&p).lazify(0.5).unwrap())
}

fn outside(ev: &Evolution<'_, NNKernel>, m: Site) -> f64 {
    let w = ev.window();
    w.sites().filter(|x| x.abs() > m).map(|x| ev.prob(x)).sum()
}

#[test]
fn survival_factors_settle_on_the_lazy_walk() {
    let (p, k) = lazy_two_sided();
    let rho = 0.5 + 0.5 * p.rho();
    let t = evolve_trace(&k, 0, 3000, &[-2, 2]).unwrap();
    for n in 2000..3000 {
        assert!((t.survival_factors[n] - rho).abs() < 1e-3, "n = {n}");
    }
    // the approach is from below and the trend only moves up
    let coarse: Vec<f64> = (1000..3000)
        .step_by(100)
        .map(|n| t.survival_factors[n])
        .collect();
    assert!(coarse.windows(2).all(|w| w[0] <= w[1]));
    for s in &t.tracked {
        assert!((s.last_ratio().unwrap() - rho).abs() < 2e-3);
    }
}

#[test]
fn conditioned_laws_are_tight() {
    let (_, k) = lazy_two_sided();
    let mut ev = Evolution::new(&k, 0);
    let ms: Vec<Site> = (0..=100).step_by(5).collect();
    let mut sup = vec![0.0f64; ms.len()];
    for n in [100, 200, 500, 1000, 2000, 4000] {
        ev.advance(n - ev.steps_taken()).unwrap();
        let tails: Vec<f64> = ms.iter().map(|&m| outside(&ev, m)).collect();
        assert!(tails.windows(2).all(|w| w[1] <= w[0]));
        for (s, t) in sup.iter_mut().zip(&tails) {
            *s = s.max(*t);
        }
    }
    assert!(sup.windows(2).all(|w| w[1] <= w[0]));
    assert!(sup[sup.len() - 1] < 1e-6, "{sup:?}");
}

#[test]
fn entrance_laws_are_tight_in_the_start() {
    let (p, k) = lazy_two_sided();
    let w = 1.0 / (0.5 + 0.5 * p.rho());
    let mut worst = 0.0f64;
    for z in (10..=60).step_by(10) {
        let chi = chi_entrance(&k, z, w, 1500).unwrap();
        assert!(chi.iter().all(|(_, v)| v >= 0.0));
        assert!((chi.total() - 1.0).abs() < 1e-12);
        let far: f64 = chi
            .iter()
            .filter(|(x, _)| x.abs() > z + 100)
            .map(|(_, v)| v)
            .sum();
        worst = worst.max(far);
    }
    assert!(worst < 0.05, "{worst}");
}

#[test]
fn minus_harmonic_is_negligible_far_right() {
    let p = TwoSidedParams::reference();
    let (hp, hm) = (
        extremal_plus(&p).dual_harmonic(),
        extremal_minus(&p).dual_harmonic(),
    );
    let ratios: Vec<f64> = (0..=60)
        .map(|y| (hm.log_value(y) - hp.log_value(y)).exp())
        .collect();
    assert!(ratios.windows(2).all(|w| w[1] < w[0]));
    // the decay is only 1/(1 + c1 y), far slower than any fixed small bound
    let want = 1.0 / (1.0 + p.c1() * 60.0);
    assert!((ratios[60] - want).abs() / want < 1e-10);
}

// On the right the transform moves like a walk conditioned to stay positive,
// so the escape is diffusive: the share beyond sqrt(n) is stable in n.
#[test]
fn hhat_transform_escapes_to_plus_infinity() {
    let p = TwoSidedParams::reference();
    let tk = TransformedKernel::from_shared(
        Arc::new(build_two_sided(&p)),
        two_sided_hhat(&p),
        p.radius(),
    );
    let share = |steps: usize, level: Site| {
        let ends = transformed_endpoints(&tk, 0, steps, 11, 10_000).unwrap();
        ends.iter().filter(|&&x| x > level).count() as f64 / ends.len() as f64
    };
    assert!(share(2000, 0) > 0.99);
    let (a, b) = (share(2000, 44), share(8000, 89));
    assert!((a - b).abs() < 0.03, "{a} {b}");
    assert!(share(8000, 50) > share(2000, 50));
}

#[test]
fn symmetric_transform_splits_evenly() {
    let s = SymmetricParams::with_default_origin(0.25).unwrap();
    let k = build_symmetric(&s).lazify(0.5).unwrap();
    let tk = TransformedKernel::from_shared(
        Arc::new(k),
        symmetric_hhat(&s),
        1.0 / (0.5 + 0.5 * s.rho()),
    );
    let w = hitting_split(&tk, 0, HORIZON_START, HORIZON_CAP).unwrap();
    let ends = transformed_endpoints(&tk, 0, 1000, 5, 100_000).unwrap();
    let hits: Vec<f64> = ends.iter().map(|&x| f64::from(u8::from(x > 0))).collect();
    let est = MeanEstimate::from_samples(&hits);
    assert!(est.z_score(w.w_plus) < 3.0, "{est:?}");
    assert!(ends.iter().filter(|&&x| x == 0).count() < 100);
}

fn orey_probe(plus: bool) -> (Vec<Site>, f64, f64) {
    let (p, k) = lazy_two_sided();
    let rho = 0.5 + 0.5 * p.rho();
    let mu = if plus {
        extremal_plus(&p)
    } else {
        extremal_minus(&p)
    };
    let init = mu.tabulate(Window::centered(200), Scale::Probability);
    let rk = time_reversal(k, mu, rho);
    let grid = sparse_grid(3000);
    let t = orey_trace(&rk, &init, &grid, 42, &[0], 4096).unwrap();
    let last = t.points.last().unwrap();
    (
        t.points.iter().map(|pt| pt.site).collect(),
        last.ratios[0].1,
        mu.probability(0),
    )
}

#[test]
fn orey_path_of_plus_reversal() {
    let (sites, ratio, want) = orey_probe(true);
    // diffusive escape, about sqrt(m) away after m steps
    assert!(*sites.last().unwrap() > 20, "{sites:?}");
    assert!((ratio - want).abs() < 2e-2, "{ratio} vs {want}");
}

#[test]
fn orey_path_of_minus_reversal() {
    let (sites, ratio, want) = orey_probe(false);
    assert!(*sites.last().unwrap() < -100, "{sites:?}");
    assert!((ratio - want).abs() < 2e-2, "{ratio} vs {want}");
}

#[test]
fn symmetric_chain_commutes_with_the_mirror() {
    let s = SymmetricParams::with_default_origin(0.3).unwrap();
    let k = build_symmetric(&s);
    for x in -20..=20 {
        let (l, m) = (k.law(x), k.law(-x));
        assert_eq!((l.up, l.stay, l.down), (m.down, m.stay, m.up));
    }
    for x in [0, 3, -7] {
        let (mut a, mut b) = (Evolution::new(&k, x), Evolution::new(&k, -x));
        a.advance(400).unwrap();
        b.advance(400).unwrap();
        assert_eq!(a.log_mass(), b.log_mass());
        for y in a.window().sites() {
            assert!((a.prob(y) - b.prob(-y)).abs() <= 1e-15 * a.prob(y).max(1e-300) + 1e-300);
        }
    }
}

#[test]
fn alpha_walk_return_mass_follows_stirling() {
    let (alpha, a, b) = (0.9, 0.6, 0.4);
    let k = build_alpha_walk(alpha, a, b).unwrap();
    let t = evolve_trace(&k, 0, 500, &[0]).unwrap();
    let n = 500.0f64;
    let log_asym =
        2.0 * n * alpha.ln() + n * (4.0 * a * b).ln() - 0.5 * (std::f64::consts::PI * n).ln();
    let ratio = (t.tracked[0].log_mass[500] - log_asym).exp();
    assert!((ratio - 1.0).abs() < 0.02, "{ratio}");
}

#[test]
fn tabulated_limit_matches_closed_form() {
    let (p, _) = lazy_two_sided();
    let m = extremal_plus(&p);
    let t: TabulatedMeasure = m.tabulate(Window::centered(300), Scale::Probability);
    assert!((t.total() + t.tail_bound - 1.0).abs() < 1e-12);
    assert!((t.get(0) - m.probability(0)).abs() < 1e-15);
}
