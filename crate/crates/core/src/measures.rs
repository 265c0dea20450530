//! Invariant measures: the closed-form family of the two-sided walk, its two
//! extremals, the reversibility measure and the dual harmonic functions.
//!
//! Closed forms are evaluated in log space; `(p/q)^{x/2}` underflows long
//! before the windows used for tail checks end.

use serde::Serialize;

use crate::chain::{stable_sum, MassState, StepKernel, Window};
use crate::error::{Error, Result};
use crate::spectral::TwoSidedParams;
use crate::Site;

/// A positive measure (or function) on the integers, evaluated through its log.
pub trait Measure {
    fn log_value(&self, x: Site) -> f64;

    fn value(&self, x: Site) -> f64 {
        self.log_value(x).exp()
    }
}

/// Adapter turning a log-valued closure into a [`Measure`].
pub struct LogFn<F>(pub F);

impl<F: Fn(Site) -> f64> Measure for LogFn<F> {
    fn log_value(&self, x: Site) -> f64 {
        (self.0)(x)
    }
}

impl<M: Measure + ?Sized> Measure for &M {
    fn log_value(&self, x: Site) -> f64 {
        (**self).log_value(x)
    }
}

fn log_sum_exp2(la: f64, lb: f64) -> f64 {
    let m = la.max(lb);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((la - m).exp() + (lb - m).exp()).ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Raw,
    Probability,
}

/// A measure tabulated on a finite window.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TabulatedMeasure {
    pub window: Window,
    pub values: Vec<f64>,
    pub scale: Scale,
    /// Mass outside the window (exact remainder when known, else a bound).
    pub tail_bound: f64,
}

impl TabulatedMeasure {
    pub fn new(window: Window, values: Vec<f64>, scale: Scale, tail_bound: f64) -> Self {
        assert_eq!(window.len(), values.len(), "window and values disagree");
        Self {
            window,
            values,
            scale,
            tail_bound,
        }
    }

    pub fn get(&self, x: Site) -> f64 {
        self.window.index(x).map_or(0.0, |i| self.values[i])
    }

    pub fn total(&self) -> f64 {
        stable_sum(self.values.iter().copied())
    }

    pub fn iter(&self) -> impl Iterator<Item = (Site, f64)> + '_ {
        self.window.sites().zip(self.values.iter().copied())
    }

    /// Rescaled to unit mass on the window.
    pub fn normalized(&self) -> TabulatedMeasure {
        let t = self.total();
        TabulatedMeasure {
            window: self.window,
            values: self.values.iter().map(|v| v / t).collect(),
            scale: Scale::Probability,
            tail_bound: self.tail_bound / t,
        }
    }

    /// Mass of `[w, inf)` within the window.
    pub fn upper_tail(&self, w: Site) -> f64 {
        stable_sum(self.iter().filter(|(x, _)| *x >= w).map(|(_, v)| v))
    }

    pub fn total_variation(&self, other: &TabulatedMeasure) -> f64 {
        total_variation(self, other)
    }
}

impl From<&MassState> for TabulatedMeasure {
    fn from(s: &MassState) -> Self {
        TabulatedMeasure::new(s.window(), s.values().to_vec(), Scale::Probability, 0.0)
    }
}

impl Measure for TabulatedMeasure {
    fn log_value(&self, x: Site) -> f64 {
        self.get(x).ln()
    }
}

/// Half the l1 distance over the union of the two windows.
pub fn total_variation(a: &TabulatedMeasure, b: &TabulatedMeasure) -> f64 {
    let lo = a.window.lo.min(b.window.lo);
    let hi = a.window.hi.max(b.window.hi);
    0.5 * stable_sum((lo..=hi).map(|x| (a.get(x) - b.get(x)).abs()))
}

/// Smallest value of `upper([w, inf)) - lower([w, inf))` over a range of `w`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OrderGap {
    pub min_gap: f64,
    pub at: Site,
}

/// Checks that `upper` dominates `lower` on every upper set `[w, inf)`, `w` in `ws`.
///
/// Left of the origin the gap is computed from lower sets, which avoids
/// cancellation between two tails close to one.
pub fn stochastic_order_gap(
    upper: &TabulatedMeasure,
    lower: &TabulatedMeasure,
    ws: Window,
) -> OrderGap {
    let u = upper.normalized();
    let l = lower.normalized();
    let below = |m: &TabulatedMeasure, w: Site| {
        stable_sum(m.iter().filter(|(x, _)| *x < w).map(|(_, v)| v))
    };
    let mut best = OrderGap {
        min_gap: f64::INFINITY,
        at: ws.lo,
    };
    for w in ws.sites() {
        let gap = if w <= 0 {
            below(&l, w) - below(&u, w)
        } else {
            u.upper_tail(w) - l.upper_tail(w)
        };
        if gap < best.min_gap {
            best = OrderGap {
                min_gap: gap,
                at: w,
            };
        }
    }
    best
}

/// Member of the invariant family of the two-sided walk with slope `c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClosedFormMeasure {
    pub params: TwoSidedParams,
    pub c: f64,
    pub d0: f64,
    pub d1: f64,
    pub t0: f64,
    pub t1: f64,
}

/// `d0(c) = ((1-c) sqrt(pq)/a - 1/t1) / (1/t0 - 1/t1)`.
pub fn d0_of(params: &TwoSidedParams, c: f64) -> f64 {
    let (t0, t1) = params.quadratic_roots();
    ((1.0 - c) * (params.p * params.q).sqrt() / params.a - 1.0 / t1) / (1.0 / t0 - 1.0 / t1)
}

pub fn family_measure(params: &TwoSidedParams, c: f64) -> Result<ClosedFormMeasure> {
    let c1 = params.c1();
    if !(c >= 0.0 && c <= c1 * (1.0 + 1e-12)) {
        return Err(Error::OutOfRange {
            name: "c",
            value: c,
            range: "[0, sqrt(1 - ab/pq)]",
        });
    }
    let (t0, t1) = params.quadratic_roots();
    let d0 = d0_of(params, c).max(0.0);
    let m = ClosedFormMeasure {
        params: *params,
        c,
        d0,
        d1: 1.0 - d0,
        t0,
        t1,
    };
    Ok(m)
}

/// The extremal whose probability version sits at `+inf`: `c = c1`, `d0 = 0`.
pub fn extremal_plus(params: &TwoSidedParams) -> ClosedFormMeasure {
    let mut m = family_measure(params, params.c1()).expect("c1 is admissible");
    m.d0 = 0.0;
    m.d1 = 1.0;
    m
}

/// The extremal at `-inf`: `c = 0`.
pub fn extremal_minus(params: &TwoSidedParams) -> ClosedFormMeasure {
    family_measure(params, 0.0).expect("0 is admissible")
}

impl ClosedFormMeasure {
    fn half_log_ratio(&self) -> f64 {
        0.5 * (self.params.p / self.params.q).ln()
    }

    /// Total mass `T(c)`.
    pub fn normalizer(&self) -> f64 {
        normalizer_t(self)
    }

    /// Probability version `mu / T`.
    pub fn probability(&self, x: Site) -> f64 {
        (self.log_value(x) - self.normalizer().ln()).exp()
    }

    /// Exact mass of `mu` outside `window` (which must contain 0).
    pub fn tail_outside(&self, window: Window) -> f64 {
        let s = (self.params.p / self.params.q).sqrt();
        let h = window.hi.max(0) as f64;
        // sum_{x > h} s^x and sum_{x > h} x s^x
        let geo = s.powf(h + 1.0) / (1.0 - s);
        let lin = s.powf(h + 1.0) * ((h + 1.0) - h * s) / (1.0 - s).powi(2);
        let upper = geo + self.c * lin;
        let l = window.lo.min(0) as f64;
        // sum_{x < l} t^x = t^l / (t - 1)
        let lower = self.d0 * self.t0.powf(l) / (self.t0 - 1.0)
            + self.d1 * self.t1.powf(l) / (self.t1 - 1.0);
        upper + lower
    }

    pub fn tabulate(&self, window: Window, scale: Scale) -> TabulatedMeasure {
        let norm = match scale {
            Scale::Raw => 1.0,
            Scale::Probability => self.normalizer(),
        };
        TabulatedMeasure::new(
            window,
            window.sites().map(|x| self.value(x) / norm).collect(),
            scale,
            self.tail_outside(window) / norm,
        )
    }

    /// `h = mu / gamma`.
    pub fn dual_harmonic(&self) -> DualHarmonic {
        DualHarmonic { measure: *self }
    }
}

impl Measure for ClosedFormMeasure {
    fn log_value(&self, x: Site) -> f64 {
        match x {
            0 => 0.0,
            x if x > 0 => (self.c * x as f64).ln_1p() + x as f64 * self.half_log_ratio(),
            x => {
                let xf = x as f64;
                let a = if self.d0 > 0.0 {
                    self.d0.ln() + xf * self.t0.ln()
                } else {
                    f64::NEG_INFINITY
                };
                log_sum_exp2(a, self.d1.ln() + xf * self.t1.ln())
            }
        }
    }
}

/// `T(c) = 1/(1-s) + c s/(1-s)^2 + d0/(t0 - 1) + d1/(t1 - 1)` with `s = sqrt(p/q)`.
pub fn normalizer_t(m: &ClosedFormMeasure) -> f64 {
    let s = (m.params.p / m.params.q).sqrt();
    let inv0 = 1.0 / m.t0;
    let inv1 = 1.0 / m.t1;
    1.0 / (1.0 - s)
        + m.c * s / (1.0 - s).powi(2)
        + m.d0 * inv0 / (1.0 - inv0)
        + m.d1 * inv1 / (1.0 - inv1)
}

/// `max_y |sum_x mu(x) K(x, y) - theta mu(y)| / mu(y)` over the window.
pub fn invariance_residual<K: StepKernel + ?Sized, M: Measure + ?Sized>(
    kernel: &K,
    measure: &M,
    theta: f64,
    window: Window,
) -> f64 {
    window
        .sites()
        .map(|y| {
            let ly = measure.log_value(y);
            let from = |x: Site| (measure.log_value(x) - ly).exp();
            let inflow = from(y - 1) * kernel.law(y - 1).up
                + kernel.law(y).stay
                + from(y + 1) * kernel.law(y + 1).down;
            (inflow - theta).abs()
        })
        .fold(0.0, f64::max)
}

/// `max_x |sum_y K(x, y) h(y) - theta h(x)| / h(x)` over the window.
pub fn harmonic_residual<K: StepKernel + ?Sized, M: Measure + ?Sized>(
    kernel: &K,
    h: &M,
    theta: f64,
    window: Window,
) -> f64 {
    window
        .sites()
        .map(|x| {
            let lx = h.log_value(x);
            let to = |y: Site| (h.log_value(y) - lx).exp();
            let l = kernel.law(x);
            let out = l.up * to(x + 1) + l.stay + l.down * to(x - 1);
            (out - theta).abs()
        })
        .fold(0.0, f64::max)
}

/// Reversibility measure `gamma(x) = prod_{k=1}^{x} p_{k-1}/q_k` (and the
/// reciprocal product for `x < 0`), tabulated in log space.
#[derive(Clone, Debug, PartialEq)]
pub struct ReversibilityMeasure {
    window: Window,
    log_values: Vec<f64>,
}

impl ReversibilityMeasure {
    pub fn from_kernel<K: StepKernel + ?Sized>(kernel: &K, window: Window) -> Self {
        let w = Window {
            lo: window.lo.min(0),
            hi: window.hi.max(0),
        };
        let mut log_values = vec![0.0; w.len()];
        let zero = (-w.lo) as usize;
        for x in 1..=w.hi {
            let i = zero + x as usize;
            log_values[i] = log_values[i - 1] + kernel.law(x - 1).up.ln() - kernel.law(x).down.ln();
        }
        for x in (w.lo..0).rev() {
            let i = zero - (-x) as usize;
            log_values[i] = log_values[i + 1] + kernel.law(x + 1).down.ln() - kernel.law(x).up.ln();
        }
        Self {
            window: w,
            log_values,
        }
    }

    pub fn window(&self) -> Window {
        self.window
    }
}

impl Measure for ReversibilityMeasure {
    fn log_value(&self, x: Site) -> f64 {
        self.window
            .index(x)
            .map_or(f64::NAN, |i| self.log_values[i])
    }
}

/// Closed-form reversibility measure of the two-sided walk:
/// `(p/q)^x` for `x > 0`, `(b/a)^{|x|}` for `x < 0`.
pub fn reversibility_gamma(params: &TwoSidedParams) -> impl Measure + Copy {
    #[derive(Clone, Copy)]
    struct G(TwoSidedParams);
    impl Measure for G {
        fn log_value(&self, x: Site) -> f64 {
            let p = &self.0;
            if x >= 0 {
                x as f64 * (p.p / p.q).ln()
            } else {
                (-x) as f64 * (p.b / p.a).ln()
            }
        }

        fn value(&self, x: Site) -> f64 {
            let p = &self.0;
            if x >= 0 {
                (p.p / p.q).powi(x as i32)
            } else {
                (p.b / p.a).powi((-x) as i32)
            }
        }
    }
    G(*params)
}

/// `max |gamma(x) K(x, x+1) - gamma(x+1) K(x+1, x)| / (gamma(x) K(x, x+1))` over the window.
pub fn detailed_balance_residual<K: StepKernel + ?Sized, M: Measure + ?Sized>(
    kernel: &K,
    gamma: &M,
    window: Window,
) -> f64 {
    window
        .sites()
        .map(|x| {
            let lhs = gamma.value(x) * kernel.law(x).up;
            let rhs = gamma.value(x + 1) * kernel.law(x + 1).down;
            (rhs - lhs).abs() / lhs
        })
        .fold(0.0, f64::max)
}

/// Harmonic function `mu / gamma` dual to a member of the invariant family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DualHarmonic {
    pub measure: ClosedFormMeasure,
}

pub fn dual_harmonic(m: &ClosedFormMeasure) -> DualHarmonic {
    m.dual_harmonic()
}

impl Measure for DualHarmonic {
    fn log_value(&self, x: Site) -> f64 {
        self.measure.log_value(x) - reversibility_gamma(&self.measure.params).log_value(x)
    }
}

/// Mirror-symmetric chain: up `p`, down `1-p` for `x > 0`, the mirror image
/// for `x < 0`, and up = down = `origin_up` at 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SymmetricParams {
    pub p: f64,
    pub origin_up: f64,
}

impl SymmetricParams {
    pub fn new(p: f64, origin_up: f64) -> Result<Self> {
        if !(p > 0.0 && p < 0.5) {
            return Err(Error::OutOfRange {
                name: "p",
                value: p,
                range: "(0, 1/2)",
            });
        }
        if !(origin_up > 0.0 && origin_up < p) {
            return Err(Error::OutOfRange {
                name: "origin_up",
                value: origin_up,
                range: "(0, p)",
            });
        }
        Ok(Self { p, origin_up })
    }

    /// Default origin rate `p / 2`.
    pub fn with_default_origin(p: f64) -> Result<Self> {
        Self::new(p, p / 2.0)
    }

    pub fn q(&self) -> f64 {
        1.0 - self.p
    }

    pub fn rho(&self) -> f64 {
        2.0 * (self.p * self.q()).sqrt()
    }

    pub fn kappa(&self) -> f64 {
        1.0 - 2.0 * self.origin_up
    }

    /// Slope of the linear factor in the `+inf` extremal, `2(p/p0 - 1)`.
    pub fn slope(&self) -> f64 {
        2.0 * (self.p / self.origin_up - 1.0)
    }

    fn half_log_ratio(&self) -> f64 {
        0.5 * (self.p / self.q()).ln()
    }

    /// `ln mu_{+inf}(x)`.
    pub fn log_mu_plus(&self, x: Site) -> f64 {
        let base = (self.origin_up / self.p).ln() + x.abs() as f64 * self.half_log_ratio();
        match x {
            0 => 0.0,
            x if x > 0 => base + (self.slope() * x as f64).ln_1p(),
            _ => base,
        }
    }

    pub fn log_mu_minus(&self, x: Site) -> f64 {
        self.log_mu_plus(-x)
    }

    /// Total mass of either extremal.
    pub fn normalizer(&self) -> f64 {
        let s = (self.p / self.q()).sqrt();
        1.0 + (self.origin_up / self.p)
            * (2.0 * s / (1.0 - s) + self.slope() * s / (1.0 - s).powi(2))
    }

    /// `ln h_{+inf}(x)`: `(1 + Bx)(q/p)^{x/2}` for `x >= 0`, `(q/p)^{|x|/2}` for `x < 0`.
    pub fn log_h_plus(&self, x: Site) -> f64 {
        let base = -(x.abs() as f64) * self.half_log_ratio();
        if x > 0 {
            base + (self.slope() * x as f64).ln_1p()
        } else {
            base
        }
    }

    pub fn log_h_minus(&self, x: Site) -> f64 {
        self.log_h_plus(-x)
    }

    pub fn log_gamma(&self, x: Site) -> f64 {
        if x == 0 {
            0.0
        } else {
            (self.origin_up / self.p).ln() + 2.0 * x.abs() as f64 * self.half_log_ratio()
        }
    }

    pub fn pi_plus(&self, window: Window) -> TabulatedMeasure {
        self.tabulate(window, |x| self.log_mu_plus(x))
    }

    pub fn pi_minus(&self, window: Window) -> TabulatedMeasure {
        self.tabulate(window, |x| self.log_mu_minus(x))
    }

    fn tabulate(&self, window: Window, log_mu: impl Fn(Site) -> f64) -> TabulatedMeasure {
        let lt = self.normalizer().ln();
        let values: Vec<f64> = window.sites().map(|x| (log_mu(x) - lt).exp()).collect();
        let tail = (1.0 - stable_sum(values.iter().copied())).max(0.0);
        TabulatedMeasure::new(window, values, Scale::Probability, tail)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::{build_symmetric, build_two_sided};

    fn reference() -> TwoSidedParams {
        TwoSidedParams::reference()
    }

    #[test]
    fn plus_dominates_minus() {
        let p = reference();
        let w = Window::centered(400);
        let plus = extremal_plus(&p).tabulate(w, Scale::Probability);
        let minus = extremal_minus(&p).tabulate(w, Scale::Probability);
        let g = stochastic_order_gap(&plus, &minus, Window::centered(100));
        assert!(g.min_gap >= 0.0, "{g:?}");
        let back = stochastic_order_gap(&minus, &plus, Window::centered(100));
        assert!(back.min_gap < -0.1);
    }

    #[test]
    fn extremal_values() {
        let p = reference();
        let (t0, t1) = p.quadratic_roots();
        let minus = extremal_minus(&p);
        assert!((minus.d0 - 0.5).abs() < 1e-12);
        let plus = extremal_plus(&p);
        assert!((plus.value(-1) - 1.0 / t1).abs() < 1e-15);
        assert!((plus.value(-1) - 0.134_181).abs() < 1e-6);
        assert!((plus.value(1) - 0.993_683_5).abs() < 1e-7);
        let h = plus.dual_harmonic();
        assert!((h.value(-1) - t0).abs() < 1e-12);
        assert!((h.value(2) - 7.3267).abs() < 1e-4);
    }

    #[test]
    fn d0_endpoints_and_range() {
        let p = reference();
        assert!(d0_of(&p, p.c1()).abs() < 1e-12);
        assert!(family_measure(&p, p.c1() + 0.01).is_err());
        assert!(family_measure(&p, -0.01).is_err());
        // affine and decreasing
        let g: Vec<f64> = (0..=10)
            .map(|i| d0_of(&p, p.c1() * i as f64 / 10.0))
            .collect();
        for w in g.windows(3) {
            assert!(w[1] < w[0]);
            assert!(((w[0] - w[1]) - (w[1] - w[2])).abs() < 1e-12);
        }
    }

    #[test]
    fn normalizer_matches_summation() {
        let p = reference();
        for c in [0.0, 0.3, p.c1()] {
            let m = family_measure(&p, c).unwrap();
            let direct = stable_sum((-400..=400).map(|x| m.value(x)));
            assert!((normalizer_t(&m) - direct).abs() < 1e-10, "c={c}");
        }
        let plus = extremal_plus(&p);
        assert!((normalizer_t(&plus) - 4.8517).abs() < 1e-3);
        assert!((1.0 / normalizer_t(&plus) - 0.20611).abs() < 1e-5);
    }

    #[test]
    fn tail_outside_is_the_remainder() {
        let p = reference();
        let m = family_measure(&p, 0.4).unwrap();
        let w = Window::new(-20, 30).unwrap();
        let inside = stable_sum(w.sites().map(|x| m.value(x)));
        assert!((inside + m.tail_outside(w) - normalizer_t(&m)).abs() < 1e-12);
    }

    #[test]
    fn residuals() {
        let p = reference();
        let k = build_two_sided(&p);
        let w = Window::centered(60);
        let plus = extremal_plus(&p);
        assert!(invariance_residual(&k, &plus, p.rho(), w) < 1e-12);
        let lazy = k.lazify(0.5).unwrap();
        assert!(invariance_residual(&lazy, &plus, 0.5 + 0.5 * p.rho(), w) < 1e-12);
        let bumped = LogFn(|x: Site| plus.log_value(x) + if x == 5 { 1.01f64.ln() } else { 0.0 });
        assert!(invariance_residual(&k, &bumped, p.rho(), Window::new(4, 6).unwrap()) >= 0.005);
        assert!(harmonic_residual(&k, &plus.dual_harmonic(), p.rho(), w) < 1e-12);
    }

    #[test]
    fn gamma_closed_form_and_general() {
        let p = reference();
        let k = build_two_sided(&p);
        let g = reversibility_gamma(&p);
        assert!((g.value(1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((g.value(-1) - 1.0 / 9.0).abs() < 1e-15);
        let w = Window::centered(50);
        assert!(detailed_balance_residual(&k, &g, w) < 1e-15);
        let general = ReversibilityMeasure::from_kernel(&k, Window::centered(51));
        for x in w.sites() {
            assert!((general.log_value(x) - g.log_value(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_extremals() {
        let s = SymmetricParams::with_default_origin(0.25).unwrap();
        let k = build_symmetric(&s);
        let w = Window::centered(80);
        let plus = LogFn(|x| s.log_mu_plus(x));
        let minus = LogFn(|x| s.log_mu_minus(x));
        assert!(invariance_residual(&k, &plus, s.rho(), w) < 1e-12);
        assert!(invariance_residual(&k, &minus, s.rho(), w) < 1e-12);
        assert!(harmonic_residual(&k, &LogFn(|x| s.log_h_plus(x)), s.rho(), w) < 1e-12);
        let g = LogFn(|x| s.log_gamma(x));
        assert!(detailed_balance_residual(&k, &g, w) < 1e-13);
        let pi = s.pi_plus(Window::centered(400));
        assert!((pi.get(0) - (1.0 - s.rho()) / s.kappa()).abs() < 1e-12);
        assert!((pi.total() - 1.0).abs() < 1e-12);
    }
}
