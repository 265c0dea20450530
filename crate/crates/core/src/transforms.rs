//! h-transforms, time reversals, boundary weights and the mixture limit.

use std::sync::Arc;

use serde::Serialize;

use crate::chain::{StepKernel, StepLaw, Window};
use crate::error::{Error, Result};
use crate::evolve::{ColumnEvolution, Evolution};
use crate::extrapolate::{cauchy_spread, richardson_series, CAUCHY_TOL, CAUCHY_WINDOW};
use crate::measures::{extremal_plus, LogFn, Measure, Scale, SymmetricParams, TabulatedMeasure};
use crate::spectral::TwoSidedParams;
use crate::Site;

/// Shared log-valued positive function.
pub type SharedMeasure = Arc<dyn Measure + Send + Sync>;

/// Wraps a log-valued closure as a [`SharedMeasure`].
pub fn shared<F: Fn(Site) -> f64 + Send + Sync + 'static>(log_f: F) -> SharedMeasure {
    Arc::new(LogFn(log_f))
}

/// `K~(x, y) = R K(x, y) h(y) / h(x)`.
#[derive(Clone)]
pub struct TransformedKernel {
    base: Arc<dyn StepKernel>,
    h: SharedMeasure,
    radius: f64,
}

impl TransformedKernel {
    pub fn from_shared(base: Arc<dyn StepKernel>, h: SharedMeasure, radius: f64) -> Self {
        Self { base, h, radius }
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn base(&self) -> &Arc<dyn StepKernel> {
        &self.base
    }

    pub fn h(&self) -> &SharedMeasure {
        &self.h
    }

    /// `ln(K~(x, x-1) / K~(x, x+1))`, evaluated without forming the ratio of h values.
    pub fn log_down_over_up(&self, x: Site) -> f64 {
        let l = self.base.law(x);
        l.down.ln() + self.h.log_value(x - 1) - l.up.ln() - self.h.log_value(x + 1)
    }

    /// Largest `|row sum - 1|` over the window and where it occurs.
    pub fn max_row_deviation(&self, window: Window) -> (Site, f64) {
        window
            .sites()
            .map(|x| (x, (self.law(x).total() - 1.0).abs()))
            .fold((window.lo, 0.0), |acc, v| if v.1 > acc.1 { v } else { acc })
    }

    pub fn check_stochastic(&self, window: Window, tol: f64) -> Result<()> {
        let (site, deviation) = self.max_row_deviation(window);
        if deviation > tol {
            return Err(Error::NotStochastic { site, deviation });
        }
        Ok(())
    }
}

impl StepKernel for TransformedKernel {
    fn law(&self, x: Site) -> StepLaw {
        let l = self.base.law(x);
        let hx = self.h.log_value(x);
        StepLaw::new(
            self.radius * l.up * (self.h.log_value(x + 1) - hx).exp(),
            self.radius * l.stay,
            self.radius * l.down * (self.h.log_value(x - 1) - hx).exp(),
        )
    }
}

pub fn h_transform<K, H>(kernel: K, h: H, radius: f64) -> TransformedKernel
where
    K: StepKernel + 'static,
    H: Measure + Send + Sync + 'static,
{
    TransformedKernel {
        base: Arc::new(kernel),
        h: Arc::new(h),
        radius,
    }
}

/// `<-K(x, z) = mu(z) K(z, x) / (theta mu(x))`.
#[derive(Clone)]
pub struct ReversedKernel {
    base: Arc<dyn StepKernel>,
    mu: SharedMeasure,
    theta: f64,
}

impl ReversedKernel {
    pub fn from_shared(base: Arc<dyn StepKernel>, mu: SharedMeasure, theta: f64) -> Self {
        Self { base, mu, theta }
    }

    pub fn base(&self) -> &Arc<dyn StepKernel> {
        &self.base
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn measure(&self) -> &SharedMeasure {
        &self.mu
    }

    /// Reversing again with respect to the same measure and `1/theta` gives back the base kernel.
    pub fn reversed_again(&self) -> ReversedKernel {
        ReversedKernel {
            base: Arc::new(self.clone()),
            mu: self.mu.clone(),
            theta: 1.0 / self.theta,
        }
    }

    pub fn max_row_deviation(&self, window: Window) -> (Site, f64) {
        window
            .sites()
            .map(|x| (x, (self.law(x).total() - 1.0).abs()))
            .fold((window.lo, 0.0), |acc, v| if v.1 > acc.1 { v } else { acc })
    }
}

impl StepKernel for ReversedKernel {
    fn law(&self, x: Site) -> StepLaw {
        let mx = self.mu.log_value(x);
        StepLaw::new(
            (self.mu.log_value(x + 1) - mx).exp() * self.base.law(x + 1).down / self.theta,
            self.base.law(x).stay / self.theta,
            (self.mu.log_value(x - 1) - mx).exp() * self.base.law(x - 1).up / self.theta,
        )
    }
}

pub fn time_reversal<K, M>(kernel: K, measure: M, theta: f64) -> ReversedKernel
where
    K: StepKernel + 'static,
    M: Measure + Send + Sync + 'static,
{
    ReversedKernel {
        base: Arc::new(kernel),
        mu: Arc::new(measure),
        theta,
    }
}

/// Compares the reversal of the space-time transform with the reversal of `K`.
///
/// With `H(x, -n) = R^n K^n(x, S)` the space-time kernel
/// `K~((x,-n), (y,-n+1)) = R K(x,y) H(y,-n+1) / H(x,-n)` is reversed with
/// respect to `H(x,-n) pi(x)`. Returns the largest relative difference from
/// `<-K^pi(y, x)` (with `theta = rho`) over neighbour pairs in the window.
pub fn space_time_reversal_gap<K, M>(
    kernel: &K,
    pi: &M,
    rho: f64,
    window: Window,
    n: usize,
) -> Result<f64>
where
    K: StepKernel + ?Sized,
    M: Measure + ?Sized,
{
    let radius = 1.0 / rho;
    // ln H(x, -n) and ln H(x, -n+1) from one forward evolution per site
    let sites: Vec<Site> = window.grow(1).sites().collect();
    let mut log_h_n = Vec::with_capacity(sites.len());
    let mut log_h_prev = Vec::with_capacity(sites.len());
    for &x in &sites {
        let mut ev = Evolution::new(kernel, x);
        ev.advance(n - 1)?;
        log_h_prev.push(ev.log_mass() + (n - 1) as f64 * radius.ln());
        ev.step()?;
        log_h_n.push(ev.log_mass() + n as f64 * radius.ln());
    }
    let idx = |x: Site| (x - window.lo + 1) as usize;
    let mut worst: f64 = 0.0;
    for y in window.sites() {
        for x in [y - 1, y, y + 1] {
            let kxy = kernel.entry(x, y);
            if kxy == 0.0 {
                continue;
            }
            // nu(x,-n) K~((x,-n),(y,-n+1)) / nu(y,-n+1)
            let log_nu_x = log_h_n[idx(x)] + pi.log_value(x);
            let log_nu_y = log_h_prev[idx(y)] + pi.log_value(y);
            let log_kt = radius.ln() + kxy.ln() + log_h_prev[idx(y)] - log_h_n[idx(x)];
            let space_time = (log_nu_x + log_kt - log_nu_y).exp();
            let plain = (pi.log_value(x) - pi.log_value(y)).exp() * kxy / rho;
            worst = worst.max((space_time - plain).abs() / plain);
        }
    }
    Ok(worst)
}

/// Limiting exit distribution of the transformed chain between `-inf` and `+inf`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundaryWeights {
    pub w_minus: f64,
    pub w_plus: f64,
    /// Largest horizon used.
    pub horizon: Site,
    /// Last change of the extrapolated value.
    pub change: f64,
}

impl BoundaryWeights {
    pub fn new(w_minus: f64, w_plus: f64) -> Result<Self> {
        if !(w_minus >= 0.0 && w_plus >= 0.0) || (w_minus + w_plus - 1.0).abs() > 1e-9 {
            return Err(Error::Mismatch(format!(
                "weights {w_minus} and {w_plus} do not form a probability"
            )));
        }
        Ok(Self {
            w_minus,
            w_plus,
            horizon: 0,
            change: 0.0,
        })
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

/// `P_x(hit +M before -M)` and its complement, from the birth-death scale function.
pub fn hitting_probability(tk: &TransformedKernel, x: Site, m: Site) -> (f64, f64) {
    // L_j = sum_{i=-M+1}^{j} ln(d_i / u_i), L_{-M} = 0; S(y) = sum_{j=-M}^{y-1} e^{L_j}
    let mut logs = Vec::with_capacity((2 * m) as usize);
    let mut acc = 0.0;
    logs.push(acc);
    for i in -m + 1..m {
        acc += tk.log_down_over_up(i);
        logs.push(acc);
    }
    let split = (x + m) as usize;
    let total = log_sum_exp(&logs);
    let below = log_sum_exp(&logs[..split]);
    let above = log_sum_exp(&logs[split..]);
    ((above - total).exp(), (below - total).exp())
}

/// Default starting horizon of [`hitting_split`].
pub const HORIZON_START: Site = 64;
/// Default horizon cap of [`hitting_split`].
pub const HORIZON_CAP: Site = 4096;

/// Boundary weights `mu_x(-inf), mu_x(+inf)` of the transformed chain started at `x`.
///
/// The two-point problem on `[-M, M]` is solved for `M` doubling from
/// `start`; the sequence is extrapolated by a Romberg table in `1/M` and
/// accepted once successive diagonal entries agree within `1e-9`.
pub fn hitting_split(
    tk: &TransformedKernel,
    x: Site,
    start: Site,
    cap: Site,
) -> Result<BoundaryWeights> {
    let mut m = start.max(2 * x.abs() + 2);
    tk.check_stochastic(Window::centered(m), 1e-9)?;
    let mut table: Vec<Vec<f64>> = Vec::new();
    let mut last_change = f64::INFINITY;
    loop {
        let (_, plus) = hitting_probability(tk, x, m);
        let mut row = vec![plus];
        for j in 1..=table.len() {
            let f = (1u64 << j) as f64;
            let prev = table[table.len() - 1][j - 1];
            row.push((f * row[j - 1] - prev) / (f - 1.0));
        }
        if let Some(prev) = table.last() {
            last_change = (row[row.len() - 1] - prev[prev.len() - 1]).abs();
            if last_change < 1e-9 {
                let w_plus = row[row.len() - 1].clamp(0.0, 1.0);
                return Ok(BoundaryWeights {
                    w_minus: 1.0 - w_plus,
                    w_plus,
                    horizon: m,
                    change: last_change,
                });
            }
        }
        table.push(row);
        if m >= cap {
            return Err(Error::HorizonExhausted {
                horizon: m,
                change: last_change,
            });
        }
        m *= 2;
    }
}

/// One row of [`HhatTable`].
#[derive(Clone, Debug, Serialize)]
pub struct HhatEntry {
    pub site: Site,
    /// Raw ratio `K^n(x, x0) / K^n(x0, x0)` at `n = n_max`.
    pub raw: f64,
    /// Richardson-extrapolated limit.
    pub limit: f64,
    pub spread: f64,
    pub half_gap: f64,
    pub converged: bool,
}

/// Ratio limits `h^(x) / h^(x0)` with convergence verdicts.
#[derive(Clone, Debug, Serialize)]
pub struct HhatTable {
    pub x0: Site,
    pub n_max: usize,
    pub entries: Vec<HhatEntry>,
}

impl HhatTable {
    pub fn all_converged(&self) -> bool {
        self.entries.iter().all(|e| e.converged)
    }

    pub fn get(&self, x: Site) -> Option<&HhatEntry> {
        self.entries.iter().find(|e| e.site == x)
    }
}

/// Evolves the column `K^n(., x0)` and reports `K^n(x, x0) / K^n(x0, x0)` for each site.
///
/// The limit is the Richardson extrapolation in `1/n`. Convergence requires
/// the extrapolated series over `[n_max/2, n_max]` to stay within
/// [`CAUCHY_TOL`] (relative once the limit exceeds one) on the last window
/// and between the two ends.
pub fn estimate_hhat<K: StepKernel + ?Sized>(
    kernel: &K,
    x0: Site,
    sites: &[Site],
    n_max: usize,
) -> Result<HhatTable> {
    if n_max < 2 * CAUCHY_WINDOW {
        return Err(Error::TraceTooShort {
            got: n_max,
            need: 2 * CAUCHY_WINDOW,
        });
    }
    let mut col = ColumnEvolution::new(kernel, x0);
    let mut series: Vec<Vec<f64>> = vec![Vec::with_capacity(n_max); sites.len()];
    for _ in 0..n_max {
        col.step()?;
        for (s, &x) in series.iter_mut().zip(sites) {
            s.push(col.ratio(x, x0).unwrap_or(f64::NAN));
        }
    }
    let entries = sites
        .iter()
        .zip(&series)
        .map(|(&site, s)| {
            // s[i] is the ratio at n = i + 1
            let ext: Vec<f64> = richardson_series(s, 1)
                .into_iter()
                .map(|v| v.unwrap_or(f64::NAN))
                .collect();
            let limit = ext[n_max - 1];
            let spread = cauchy_spread(&ext, CAUCHY_WINDOW).unwrap_or(f64::INFINITY);
            let half_gap = (limit - ext[n_max / 2 - 1]).abs();
            let ok = |v: f64| v.is_finite() && v <= CAUCHY_TOL * limit.abs().max(1.0);
            HhatEntry {
                site,
                raw: s[n_max - 1],
                limit,
                spread,
                half_gap,
                converged: ok(spread) && ok(half_gap),
            }
        })
        .collect();
    Ok(HhatTable { x0, n_max, entries })
}

/// `h^(x) = t0^{-x}` for `x < 0` and `(1 + c1 x) (q/p)^{x/2}` for `x >= 0`.
pub fn closed_form_hhat(params: &TwoSidedParams, x: Site) -> f64 {
    log_closed_form_hhat(params, x).exp()
}

pub fn log_closed_form_hhat(params: &TwoSidedParams, x: Site) -> f64 {
    if x < 0 {
        -(x as f64) * params.quadratic_roots().0.ln()
    } else {
        (params.c1() * x as f64).ln_1p() + 0.5 * x as f64 * (params.q / params.p).ln()
    }
}

/// `h^` of the two-sided walk as a shareable function (equal to `mu_{+inf} / gamma`).
pub fn two_sided_hhat(params: &TwoSidedParams) -> SharedMeasure {
    Arc::new(extremal_plus(params).dual_harmonic())
}

/// `h^ = (h_{+inf} + h_{-inf}) / 2` of the symmetric chain.
pub fn symmetric_hhat(params: &SymmetricParams) -> SharedMeasure {
    let s = *params;
    shared(move |x| {
        let (a, b) = (s.log_h_plus(x), s.log_h_minus(x));
        let m = a.max(b);
        m + ((a - m).exp() + (b - m).exp()).ln() - std::f64::consts::LN_2
    })
}

/// `w_minus pi_{-inf} + w_plus pi_{+inf}` on the union of the two windows.
pub fn mixture_limit(
    weights: &BoundaryWeights,
    pi_minus: &TabulatedMeasure,
    pi_plus: &TabulatedMeasure,
) -> TabulatedMeasure {
    let window = Window {
        lo: pi_minus.window.lo.min(pi_plus.window.lo),
        hi: pi_minus.window.hi.max(pi_plus.window.hi),
    };
    TabulatedMeasure::new(
        window,
        window
            .sites()
            .map(|y| weights.w_minus * pi_minus.get(y) + weights.w_plus * pi_plus.get(y))
            .collect(),
        Scale::Probability,
        weights.w_minus * pi_minus.tail_bound + weights.w_plus * pi_plus.tail_bound,
    )
}
