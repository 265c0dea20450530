//! Spectral radius estimation, generating functions and the closed forms of
//! the two-sided walk.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::chain::{stable_sum, StepKernel, Window};
use crate::error::{Error, Result};
use crate::evolve::{Evolution, YaglomTrace};
use crate::extrapolate::{
    cauchy_spread, fit_power_tail, richardson_limit, PowerTail, CAUCHY_TOL, CAUCHY_WINDOW,
};
use crate::measures::{Scale, TabulatedMeasure};
use crate::Site;

/// Minimum trace length accepted by [`estimate_rho`].
pub const MIN_RHO_STEPS: usize = 200;

/// Power of `n` in the Green-function tail model.
pub const TAIL_EXPONENT: f64 = -1.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateMethod {
    RatioLimit,
    ClosedForm,
}

/// Estimate of the spectral radius `rho = 1 / R`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpectralEstimate {
    pub rho_hat: f64,
    /// Infinite when the Cauchy criterion fails.
    pub error_bound: f64,
    /// Spread of the extrapolated series over the last window.
    pub spread: f64,
    /// Change of the extrapolated value between `n/2` and `n`.
    pub half_gap: f64,
    pub method: EstimateMethod,
}

impl SpectralEstimate {
    pub fn converged(&self) -> bool {
        self.error_bound.is_finite()
    }

    pub fn radius(&self) -> f64 {
        1.0 / self.rho_hat
    }
}

/// Limit of the survival factors by Richardson extrapolation in `1/n`.
///
/// A factor sequence that is constant over the last window is reported as is.
/// If the extrapolated tail moves by more than [`CAUCHY_TOL`] the estimate is
/// returned with an infinite error bound.
pub fn estimate_rho(trace: &YaglomTrace) -> Result<SpectralEstimate> {
    estimate_rho_periodic(trace, 1)
}

/// [`estimate_rho`] on the `d`-step factors `(K^{(m+1)d}(x0,S) / K^{md}(x0,S))^{1/d}`.
///
/// One-step factors of a chain with period `d` oscillate forever; the
/// `d`-step factors converge to the same limit.
pub fn estimate_rho_periodic(trace: &YaglomTrace, d: usize) -> Result<SpectralEstimate> {
    let d = d.max(1);
    let need = MIN_RHO_STEPS * d;
    if trace.survival_factors.len() < need {
        return Err(Error::TraceTooShort {
            got: trace.survival_factors.len(),
            need,
        });
    }
    let stepped: Vec<f64>;
    let s = if d == 1 {
        &trace.survival_factors
    } else {
        let logs: Vec<f64> = trace.log_masses.iter().copied().step_by(d).collect();
        stepped = logs
            .windows(2)
            .map(|w| ((w[1] - w[0]) / d as f64).exp())
            .collect();
        &stepped
    };
    if cauchy_spread(s, CAUCHY_WINDOW) == Some(0.0) && s[s.len() / 2] == s[s.len() - 1] {
        return Ok(SpectralEstimate {
            rho_hat: s[s.len() - 1],
            error_bound: 0.0,
            spread: 0.0,
            half_gap: 0.0,
            method: EstimateMethod::RatioLimit,
        });
    }
    let e = richardson_limit(s, 0, CAUCHY_WINDOW).expect("trace is longer than the window");
    let bound = e.error_bound();
    Ok(SpectralEstimate {
        rho_hat: e.limit,
        error_bound: if bound <= CAUCHY_TOL {
            bound
        } else {
            f64::INFINITY
        },
        spread: e.spread,
        half_gap: e.half_gap,
        method: EstimateMethod::RatioLimit,
    })
}

/// Parameters of the two-sided walk: up `p`, down `q` on the positive side,
/// up `a`, down `b` on the negative side, up `p` and down `b` at the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoSidedParams {
    pub p: f64,
    pub q: f64,
    pub a: f64,
    pub b: f64,
}

const PARAM_TOL: f64 = 1e-12;

impl TwoSidedParams {
    pub fn new(p: f64, q: f64, a: f64, b: f64) -> Result<Self> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        for v in [p, q, a, b] {
            if !(v > 0.0 && v < 1.0) {
                return bad(&format!("{v} is not in (0, 1)"));
            }
        }
        if (p + q - 1.0).abs() > PARAM_TOL || (a + b - 1.0).abs() > PARAM_TOL {
            return bad("need p + q = 1 and a + b = 1");
        }
        if p >= q {
            return bad("need p < q");
        }
        if b >= a {
            return bad("need b < a");
        }
        if p * q <= a * b {
            return bad("need pq > ab");
        }
        if b >= p {
            return bad("need b < p");
        }
        Ok(Self { p, q, a, b })
    }

    /// The reference parameter set used throughout the examples and tests.
    pub fn reference() -> Self {
        Self {
            p: 0.25,
            q: 0.75,
            a: 0.9,
            b: 0.1,
        }
    }

    pub fn rho(&self) -> f64 {
        2.0 * (self.p * self.q).sqrt()
    }

    pub fn radius(&self) -> f64 {
        1.0 / self.rho()
    }

    /// Killing probability at the origin.
    pub fn kappa(&self) -> f64 {
        1.0 - self.p - self.b
    }

    /// Roots `t0 <= t1` of `b t^2 - 2 sqrt(pq) t + a = 0`.
    pub fn quadratic_roots(&self) -> (f64, f64) {
        let s = (self.p * self.q).sqrt();
        let d = (self.p * self.q - self.a * self.b).sqrt();
        let t1 = (s + d) / self.b;
        // product form avoids cancellation in s - d
        (self.a / (self.b * t1), t1)
    }

    /// Largest admissible slope of the invariant family, `sqrt(1 - ab/pq)`.
    pub fn c1(&self) -> f64 {
        (1.0 - self.a * self.b / (self.p * self.q)).sqrt()
    }

    /// Generating function of the first return time to the origin, `0 <= z <= R`.
    pub fn closed_form_f00(&self, z: f64) -> Result<f64> {
        let r = self.radius();
        if !(z >= 0.0) || z > r * (1.0 + 1e-15) {
            return Err(Error::AboveRadius { w: z });
        }
        let rad = |x: f64| (1.0 - 4.0 * x * z * z).max(0.0).sqrt();
        Ok((1.0 - rad(self.p * self.q)) / 2.0 + (1.0 - rad(self.a * self.b)) / 2.0)
    }

    /// `V = F_00(R)`.
    pub fn v(&self) -> f64 {
        0.5 + (1.0 - self.c1()) / 2.0
    }

    /// `E_0 R^zeta = kappa R / (1 - V)`.
    pub fn e0_r_zeta(&self) -> f64 {
        self.kappa() * self.radius() / (1.0 - self.v())
    }

    /// `E_z R^zeta`: the walk must first reach 0, whose passage time has
    /// generating function `sqrt(q/p)` per level from above and `t0` from below at `R`.
    pub fn e_z_r_zeta(&self, z: Site) -> f64 {
        let per_level = if z >= 0 {
            0.5 * (self.q / self.p).ln()
        } else {
            self.quadratic_roots().0.ln()
        };
        (z.unsigned_abs() as f64 * per_level).exp() * self.e0_r_zeta()
    }

    /// Asymptotic form of `K^{2n}(0, 0)`.
    pub fn k2n00_asymptotic(&self, n: u64) -> f64 {
        self.log_k2n00_asymptotic(n).exp()
    }

    pub fn log_k2n00_asymptotic(&self, n: u64) -> f64 {
        let pq = self.p * self.q;
        let nf = n as f64;
        (pq / (pq - self.a * self.b)).ln() + nf * (4.0 * pq).ln() - 0.5 * PI.ln() - 1.5 * nf.ln()
    }
}

pub fn two_sided_rho(params: &TwoSidedParams) -> f64 {
    params.rho()
}

/// Column of the Green function: a site, or the whole state space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GreenTarget {
    Site(Site),
    Survival,
}

/// Partial sum of a Green function with a fitted (heuristic) tail.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GreenPartial {
    pub partial_sum: f64,
    pub tail_estimate: f64,
    pub tail: Option<PowerTail>,
    /// Always true: the tail comes from a fit, not a bound.
    pub heuristic: bool,
}

impl GreenPartial {
    pub fn total(&self) -> f64 {
        self.partial_sum + self.tail_estimate
    }
}

fn tail_from_terms(terms: &[(usize, f64)], w: f64) -> Result<(f64, Option<PowerTail>)> {
    if terms.len() < 30 {
        return Ok((0.0, None));
    }
    let Some(t) = fit_power_tail(terms, TAIL_EXPONENT) else {
        return Ok((0.0, None));
    };
    if t.log_q > 1e-3 {
        return Err(Error::AboveRadius { w });
    }
    Ok((t.tail_sum(), Some(t)))
}

/// `sum_{n <= N} w^n K^n(x, y)` (or `K^n(x, S)`) and a tail fitted as
/// `c n^{-3/2} q^n` over the last decade of terms.
pub fn green_partial<K: StepKernel + ?Sized>(
    kernel: &K,
    x: Site,
    target: GreenTarget,
    w: f64,
    n: usize,
) -> Result<GreenPartial> {
    if !(w >= 0.0) {
        return Err(Error::OutOfRange {
            name: "w",
            value: w,
            range: "[0, R]",
        });
    }
    let at_zero = match target {
        GreenTarget::Site(y) => f64::from(u8::from(x == y)),
        GreenTarget::Survival => 1.0,
    };
    if w == 0.0 {
        return Ok(GreenPartial {
            partial_sum: at_zero,
            tail_estimate: 0.0,
            tail: None,
            heuristic: true,
        });
    }
    let lw = w.ln();
    let mut terms = Vec::with_capacity(n + 1);
    terms.push((0usize, at_zero.ln()));
    let mut ev = Evolution::new(kernel, x);
    for k in 1..=n {
        ev.step()?;
        let lk = match target {
            GreenTarget::Site(y) => ev.log_mass_at(y),
            GreenTarget::Survival => ev.log_mass(),
        };
        terms.push((k, lk + k as f64 * lw));
    }
    let partial_sum = stable_sum(terms.iter().map(|(_, l)| l.exp()));
    let (tail_estimate, tail) = tail_from_terms(&terms, w)?;
    Ok(GreenPartial {
        partial_sum,
        tail_estimate,
        tail,
        heuristic: true,
    })
}

/// Both sides of the single-kill identity at a finite horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OnekillCheck {
    /// `sum_{n <= N} w^n K^n(z, x0)`.
    pub lhs: f64,
    /// `(1/kappa) [(1 - 1/w) G_S^(N) + (1/w)(1 - w^{N+1} K^{N+1}(z, S))]`.
    pub rhs: f64,
}

impl OnekillCheck {
    pub fn relative_gap(&self) -> f64 {
        (self.lhs - self.rhs).abs() / self.lhs.abs().max(f64::MIN_POSITIVE)
    }
}

/// Evaluates the finite-horizon single-kill identity from one evolution.
///
/// Summing `K^{n+1}(z,S) = K^n(z,S) - kappa K^n(z,x0)` against `w^n` gives the
/// two sides exactly, with the boundary term `w^{N+1} K^{N+1}(z, S)`.
pub fn onekill_identity<K: StepKernel + ?Sized>(
    kernel: &K,
    z: Site,
    x0: Site,
    kappa: f64,
    w: f64,
    n: usize,
) -> Result<OnekillCheck> {
    let lw = w.ln();
    let mut at_x0 = vec![f64::from(u8::from(z == x0))];
    let mut surv = vec![1.0];
    let mut ev = Evolution::new(kernel, z);
    for k in 1..=n {
        ev.step()?;
        at_x0.push((ev.log_mass_at(x0) + k as f64 * lw).exp());
        surv.push((ev.log_mass() + k as f64 * lw).exp());
    }
    ev.step()?;
    let boundary = (ev.log_mass() + (n + 1) as f64 * lw).exp();
    let g_s = stable_sum(surv);
    Ok(OnekillCheck {
        lhs: stable_sum(at_x0),
        rhs: ((1.0 - 1.0 / w) * g_s + (1.0 - boundary) / w) / kappa,
    })
}

/// Normalized partial Green measure `y -> sum_{n <= N} w^n K^n(z, y)`.
pub fn chi_entrance<K: StepKernel + ?Sized>(
    kernel: &K,
    z: Site,
    w: f64,
    n: usize,
) -> Result<TabulatedMeasure> {
    let window = Window::point(z).grow(n as Site);
    let mut acc = vec![0.0; window.len()];
    acc[n] = 1.0;
    let lw = w.ln();
    let mut ev = Evolution::new(kernel, z);
    for k in 1..=n {
        ev.step()?;
        let scale = (ev.log_mass() + k as f64 * lw).exp();
        let off = (ev.window().lo - window.lo) as usize;
        for (i, v) in ev.values().iter().enumerate() {
            acc[off + i] += scale * v;
        }
    }
    let total = stable_sum(acc.iter().copied());
    for v in &mut acc {
        *v /= total;
    }
    Ok(TabulatedMeasure::new(window, acc, Scale::Probability, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolve::{evolve_trace, taboo_first_return};
    use crate::scenarios::{build_alpha_walk, build_two_sided};
    use proptest::prelude::*;

    #[test]
    fn reference_closed_forms() {
        let p = TwoSidedParams::reference();
        assert!((p.rho() - 0.866_025_403_784_438_6).abs() < 1e-15);
        let (t0, t1) = p.quadratic_roots();
        assert!((t0 - 1.207_63).abs() < 1e-5, "{t0}");
        assert!((t1 - 7.452_62).abs() < 1e-5, "{t1}");
        assert!((t0 * t1 - 9.0).abs() < 1e-12);
        assert!(((t0 + t1) / 2.0 - (p.p * p.q).sqrt() / p.b).abs() < 1e-12);
        assert!((p.c1() - 0.721_110_3).abs() < 1e-7);
        assert!((p.v() - 0.639_445).abs() < 1e-6);
        assert!((p.closed_form_f00(p.radius()).unwrap() - p.v()).abs() < 1e-12);
        assert_eq!(p.closed_form_f00(0.0).unwrap(), 0.0);
        assert!(p.closed_form_f00(p.radius() * 1.01).is_err());
        assert!((p.e0_r_zeta() - 2.0817).abs() < 1e-4);
        let alt = TwoSidedParams::new(0.2, 0.8, 0.9, 0.1).unwrap();
        assert!((two_sided_rho(&alt) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(TwoSidedParams::new(0.5, 0.5, 0.9, 0.1).is_err());
        assert!(TwoSidedParams::new(0.25, 0.75, 0.1, 0.9).is_err());
        assert!(TwoSidedParams::new(0.25, 0.7, 0.9, 0.1).is_err());
        assert!(TwoSidedParams::new(0.1, 0.9, 0.6, 0.4).is_err());
    }

    #[test]
    fn asymptotic_regression_pin() {
        let p = TwoSidedParams::reference();
        let pin = (0.1875 / 0.0975) * 0.75f64.powi(10) / (PI.sqrt() * 10f64.powf(1.5));
        assert!((p.k2n00_asymptotic(10) - pin).abs() < 1e-15 * pin.max(1.0));
        let slope = p.log_k2n00_asymptotic(101) - p.log_k2n00_asymptotic(100);
        assert!((slope - (0.75f64.ln() + 1.5 * (100f64 / 101.0).ln())).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn root_identities(p in 0.05f64..0.45, b_frac in 0.05f64..0.95) {
            let q = 1.0 - p;
            // b ranges over (0, b_max) with ab < pq and b < p
            let b_max = (0.5 - (0.25 - p * q).max(0.0).sqrt()).min(p);
            let b = b_frac * b_max;
            let prm = TwoSidedParams::new(p, q, 1.0 - b, b).unwrap();
            let (t0, t1) = prm.quadratic_roots();
            prop_assert!(t0 > 1.0 && t0 <= t1);
            for t in [t0, t1] {
                prop_assert!((prm.a / t + prm.b * t - prm.rho()).abs() < 1e-12);
            }
            prop_assert!((t0 * t1 - prm.a / prm.b).abs() < 1e-12 * prm.a / prm.b);
        }
    }

    #[test]
    fn alpha_walk_rho_is_exact() {
        let k = build_alpha_walk(0.9, 0.6, 0.4).unwrap();
        let t = evolve_trace(&k, 0, 300, &[]).unwrap();
        let e = estimate_rho(&t).unwrap();
        assert!((e.rho_hat - 0.81).abs() < 1e-15);
        assert!(e.error_bound < 1e-14);
    }

    #[test]
    fn short_trace_rejected() {
        let k = build_alpha_walk(0.9, 0.6, 0.4).unwrap();
        let t = evolve_trace(&k, 0, 100, &[]).unwrap();
        assert!(matches!(estimate_rho(&t), Err(Error::TraceTooShort { .. })));
    }

    #[test]
    fn green_at_zero_weight() {
        let k = build_two_sided(&TwoSidedParams::reference());
        let g = green_partial(&k, 3, GreenTarget::Site(3), 0.0, 100).unwrap();
        assert_eq!(g.partial_sum, 1.0);
        let g = green_partial(&k, 3, GreenTarget::Site(2), 0.0, 100).unwrap();
        assert_eq!(g.partial_sum, 0.0);
        let g = green_partial(&k, 3, GreenTarget::Survival, 0.0, 100).unwrap();
        assert_eq!(g.partial_sum, 1.0);
    }

    #[test]
    fn green_above_radius_rejected() {
        let p = TwoSidedParams::reference();
        let k = build_two_sided(&p);
        let r = green_partial(&k, 0, GreenTarget::Survival, p.radius() * 1.05, 2000);
        assert!(matches!(r, Err(Error::AboveRadius { .. })));
    }

    #[test]
    fn periodic_walk_needs_two_step_factors() {
        let p = TwoSidedParams::reference();
        let k = build_two_sided(&p);
        let t = evolve_trace(&k, 0, 2000, &[]).unwrap();
        assert!(!estimate_rho(&t).unwrap().converged());
        let e = estimate_rho_periodic(&t, 2).unwrap();
        assert!(e.converged());
        assert!((e.rho_hat - p.rho()).abs() < 1e-4, "{e:?}");
    }

    #[test]
    fn moment_from_negative_side() {
        let p = TwoSidedParams::reference();
        let k = build_two_sided(&p);
        let g = green_partial(&k, -20, GreenTarget::Survival, p.radius(), 8000).unwrap();
        let e = 1.0 + (p.radius() - 1.0) * g.total();
        assert!((e / p.e_z_r_zeta(-20) - 1.0).abs() < 2e-3, "{e}");
        assert!((p.e_z_r_zeta(2) / p.e0_r_zeta() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn first_return_series_approaches_v() {
        let p = TwoSidedParams::reference();
        let k = build_two_sided(&p);
        let fr = taboo_first_return(&k, 0, 4000).unwrap();
        let partial = fr.transform(p.radius());
        let tail = fit_power_tail(&fr.log_terms(p.radius()), TAIL_EXPONENT).unwrap();
        assert!(partial < p.v());
        assert!((partial + tail.tail_sum() - p.v()).abs() < 5e-3);
    }

    #[test]
    fn onekill_identity_small_horizon() {
        let p = TwoSidedParams::reference();
        let k = build_two_sided(&p).lazify(0.5).unwrap();
        let w = 1.0 / (0.5 + 0.5 * p.rho());
        for z in [-3, 0, 4] {
            let c = onekill_identity(&k, z, 0, 0.5 * p.kappa(), w, 300).unwrap();
            assert!(c.relative_gap() < 1e-12, "z={z}: {c:?}");
        }
    }
}
