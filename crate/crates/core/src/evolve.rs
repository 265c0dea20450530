//! Renormalized power iteration of a kernel, first-return probabilities and
//! an exact rational oracle for small step counts.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::Serialize;

use crate::chain::{stable_sum, MassState, StepKernel, StepLaw, Window};
use crate::error::{Error, Result};
use crate::Site;

/// Largest step count accepted by [`brute_force_distribution`].
pub const BRUTE_FORCE_MAX_STEPS: usize = 14;

/// Law table covering a window, rebuilt with slack when the window outgrows it.
struct LawCache {
    lo: Site,
    laws: Vec<StepLaw>,
}

impl LawCache {
    fn new() -> Self {
        Self {
            lo: 0,
            laws: Vec::new(),
        }
    }

    fn cover<K: StepKernel + ?Sized>(&mut self, kernel: &K, w: Window) {
        let hi = self.lo + self.laws.len() as Site - 1;
        if !self.laws.is_empty() && w.lo >= self.lo && w.hi <= hi {
            return;
        }
        let slack = (w.len() as Site).max(64);
        let cover = w.grow(slack);
        self.lo = cover.lo;
        self.laws = cover.sites().map(|x| kernel.law(x)).collect();
    }

    #[inline]
    fn get(&self, x: Site) -> &StepLaw {
        &self.laws[(x - self.lo) as usize]
    }
}

/// Forward evolution of the conditioned law `K^n(x0, .) / K^n(x0, S)`.
pub struct Evolution<'a, K: StepKernel + ?Sized> {
    kernel: &'a K,
    cache: LawCache,
    window: Window,
    values: Vec<f64>,
    scratch: Vec<f64>,
    log_mass: f64,
    step: usize,
    clip: Option<f64>,
    clipped: f64,
}

impl<'a, K: StepKernel + ?Sized> Evolution<'a, K> {
    pub fn new(kernel: &'a K, x0: Site) -> Self {
        Self::from_state(kernel, MassState::point(x0))
    }

    pub fn from_state(kernel: &'a K, state: MassState) -> Self {
        Self {
            kernel,
            cache: LawCache::new(),
            window: state.window(),
            values: state.values().to_vec(),
            scratch: Vec::new(),
            log_mass: state.log_mass(),
            step: 0,
            clip: None,
            clipped: 0.0,
        }
    }

    /// Discards boundary values below `eps` after each step. The discarded
    /// conditioned mass is accumulated in [`Evolution::clipped`].
    pub fn with_clip(mut self, eps: f64) -> Self {
        self.clip = Some(eps);
        self
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn log_mass(&self) -> f64 {
        self.log_mass
    }

    pub fn clipped(&self) -> f64 {
        self.clipped
    }

    pub fn prob(&self, x: Site) -> f64 {
        self.window.index(x).map_or(0.0, |i| self.values[i])
    }

    /// `ln K^n(x0, x)`.
    pub fn log_mass_at(&self, x: Site) -> f64 {
        self.prob(x).ln() + self.log_mass
    }

    pub fn state(&self) -> MassState {
        MassState::from_parts(self.window, self.values.clone(), self.log_mass)
    }

    /// Applies the kernel once and returns the survival factor.
    pub fn step(&mut self) -> Result<f64> {
        let grown = self.window.grow(1);
        self.cache.cover(self.kernel, self.window);
        self.scratch.clear();
        self.scratch.resize(grown.len(), 0.0);
        for (i, (&v, x)) in self.values.iter().zip(self.window.sites()).enumerate() {
            if v == 0.0 {
                continue;
            }
            let l = self.cache.get(x);
            self.scratch[i] += v * l.down;
            self.scratch[i + 1] += v * l.stay;
            self.scratch[i + 2] += v * l.up;
        }
        let factor = stable_sum(self.scratch.iter().copied());
        if !(factor > 0.0) {
            return Err(Error::Extinct {
                step: self.step + 1,
            });
        }
        for v in &mut self.scratch {
            *v /= factor;
        }
        std::mem::swap(&mut self.values, &mut self.scratch);
        self.window = grown;
        self.log_mass += factor.ln();
        self.step += 1;
        if let Some(eps) = self.clip {
            self.trim(eps);
        }
        Ok(factor)
    }

    fn trim(&mut self, eps: f64) {
        let first = self.values.iter().position(|&v| v >= eps);
        let Some(first) = first else { return };
        let last = self.values.iter().rposition(|&v| v >= eps).unwrap_or(first);
        if first == 0 && last + 1 == self.values.len() {
            return;
        }
        let dropped = stable_sum(
            self.values[..first]
                .iter()
                .chain(&self.values[last + 1..])
                .copied(),
        );
        self.values.truncate(last + 1);
        self.values.drain(..first);
        self.window = Window {
            lo: self.window.lo + first as Site,
            hi: self.window.lo + last as Site,
        };
        let keep = 1.0 - dropped;
        for v in &mut self.values {
            *v /= keep;
        }
        self.clipped += dropped;
    }

    pub fn advance(&mut self, k: usize) -> Result<()> {
        for _ in 0..k {
            self.step()?;
        }
        Ok(())
    }
}

/// Backward evolution of a column `x -> K^n(x, target)`.
///
/// The vector is kept normalized to unit sum with the log scale tracked
/// separately, so ratios `K^n(x, target) / K^n(y, target)` stay accurate for
/// large `n`.
pub struct ColumnEvolution<'a, K: StepKernel + ?Sized> {
    kernel: &'a K,
    cache: LawCache,
    target: Site,
    window: Window,
    values: Vec<f64>,
    scratch: Vec<f64>,
    log_scale: f64,
    step: usize,
}

impl<'a, K: StepKernel + ?Sized> ColumnEvolution<'a, K> {
    pub fn new(kernel: &'a K, target: Site) -> Self {
        Self {
            kernel,
            cache: LawCache::new(),
            target,
            window: Window::point(target),
            values: vec![1.0],
            scratch: Vec::new(),
            log_scale: 0.0,
            step: 0,
        }
    }

    pub fn target(&self) -> Site {
        self.target
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn window(&self) -> Window {
        self.window
    }

    /// `ln K^n(x, target)`.
    pub fn log_value(&self, x: Site) -> f64 {
        self.window
            .index(x)
            .map_or(f64::NEG_INFINITY, |i| self.values[i].ln() + self.log_scale)
    }

    /// `K^n(x, target) / K^n(y, target)`; `None` when the denominator vanishes.
    pub fn ratio(&self, x: Site, y: Site) -> Option<f64> {
        let den = self.window.index(y).map(|i| self.values[i])?;
        if den == 0.0 {
            return None;
        }
        Some(self.window.index(x).map_or(0.0, |i| self.values[i]) / den)
    }

    pub fn step(&mut self) -> Result<()> {
        let grown = self.window.grow(1);
        self.cache.cover(self.kernel, grown);
        self.scratch.clear();
        self.scratch.resize(grown.len(), 0.0);
        let n = self.values.len();
        for (j, x) in grown.sites().enumerate() {
            // x = window.lo - 1 + j, so v(x + d) sits at index j - 1 + d
            let l = self.cache.get(x);
            let at = |k: isize| -> f64 {
                if k >= 0 && (k as usize) < n {
                    self.values[k as usize]
                } else {
                    0.0
                }
            };
            let j = j as isize;
            self.scratch[j as usize] = l.down * at(j - 2) + l.stay * at(j - 1) + l.up * at(j);
        }
        let total = stable_sum(self.scratch.iter().copied());
        if !(total > 0.0) {
            return Err(Error::Extinct {
                step: self.step + 1,
            });
        }
        for v in &mut self.scratch {
            *v /= total;
        }
        std::mem::swap(&mut self.values, &mut self.scratch);
        self.window = grown;
        self.log_scale += total.ln();
        self.step += 1;
        Ok(())
    }

    pub fn advance(&mut self, k: usize) -> Result<()> {
        for _ in 0..k {
            self.step()?;
        }
        Ok(())
    }
}

/// Series recorded for one tracked site `y`.
#[derive(Clone, Debug, Serialize)]
pub struct TrackedSeries {
    pub site: Site,
    /// `ln K^k(x0, y)` for `k = 0..=n` (`-inf` while unreachable).
    pub log_mass: Vec<f64>,
    /// `K^{k+1}(x0, y) / K^k(x0, y)` for `k < n`; absent while either term is zero.
    pub ratios: Vec<Option<f64>>,
}

impl TrackedSeries {
    pub fn last_ratio(&self) -> Option<f64> {
        self.ratios.last().copied().flatten()
    }
}

/// Output of [`evolve_trace`].
#[derive(Clone, Debug, Serialize)]
pub struct YaglomTrace {
    pub start: Site,
    pub steps: usize,
    /// `s_k = K^{k+1}(x0, S) / K^k(x0, S)` for `k < n`.
    pub survival_factors: Vec<f64>,
    /// `ln K^k(x0, S)` for `k = 0..=n`.
    pub log_masses: Vec<f64>,
    pub distribution: MassState,
    pub tracked: Vec<TrackedSeries>,
    /// Conditioned mass discarded by clipping (zero without clipping).
    pub clipped_mass: f64,
}

impl YaglomTrace {
    pub fn tracked_site(&self, y: Site) -> Option<&TrackedSeries> {
        self.tracked.iter().find(|t| t.site == y)
    }
}

/// Evolves `n` steps from `x0`, recording survival factors and the ratio
/// series of the tracked sites.
pub fn evolve_trace<K: StepKernel + ?Sized>(
    kernel: &K,
    x0: Site,
    n: usize,
    tracked: &[Site],
) -> Result<YaglomTrace> {
    evolve_trace_clipped(kernel, x0, n, tracked, None)
}

/// [`evolve_trace`] with optional boundary clipping at threshold `clip`.
pub fn evolve_trace_clipped<K: StepKernel + ?Sized>(
    kernel: &K,
    x0: Site,
    n: usize,
    tracked: &[Site],
    clip: Option<f64>,
) -> Result<YaglomTrace> {
    if n == 0 {
        return Err(Error::OutOfRange {
            name: "n",
            value: 0.0,
            range: ">= 1",
        });
    }
    let mut ev = Evolution::new(kernel, x0);
    if let Some(eps) = clip {
        ev = ev.with_clip(eps);
    }
    let mut survival_factors = Vec::with_capacity(n);
    let mut log_masses = Vec::with_capacity(n + 1);
    log_masses.push(0.0);
    let mut series: Vec<TrackedSeries> = tracked
        .iter()
        .map(|&y| TrackedSeries {
            site: y,
            log_mass: vec![ev.log_mass_at(y)],
            ratios: Vec::with_capacity(n),
        })
        .collect();
    for _ in 0..n {
        let s = ev.step()?;
        survival_factors.push(s);
        log_masses.push(ev.log_mass());
        for t in &mut series {
            let prev = *t.log_mass.last().unwrap();
            let cur = ev.log_mass_at(t.site);
            t.log_mass.push(cur);
            t.ratios
                .push((prev.is_finite() && cur.is_finite()).then(|| (cur - prev).exp()));
        }
    }
    Ok(YaglomTrace {
        start: x0,
        steps: n,
        survival_factors,
        log_masses,
        distribution: ev.state(),
        tracked: series,
        clipped_mass: ev.clipped(),
    })
}

/// First-return probabilities `f_k = P_{x0}(X_k = x0, X_j != x0 for 0 < j < k)`,
/// stored as logarithms so long horizons do not underflow.
#[derive(Clone, Debug, Serialize)]
pub struct FirstReturn {
    pub site: Site,
    /// `ln f_k` for `k = 1..=n_max` (index `k - 1`).
    pub log_f: Vec<f64>,
}

impl FirstReturn {
    pub fn f(&self, k: usize) -> f64 {
        if k == 0 || k > self.log_f.len() {
            0.0
        } else {
            self.log_f[k - 1].exp()
        }
    }

    pub fn n_max(&self) -> usize {
        self.log_f.len()
    }

    /// Total return probability within the horizon.
    pub fn total(&self) -> f64 {
        stable_sum(self.log_f.iter().map(|l| l.exp()))
    }

    /// Partial transform `sum_{k <= n_max} w^k f_k`.
    pub fn transform(&self, w: f64) -> f64 {
        let lw = w.ln();
        stable_sum(
            self.log_f
                .iter()
                .enumerate()
                .map(|(i, l)| (l + (i + 1) as f64 * lw).exp()),
        )
    }

    /// Log terms `(k, ln(w^k f_k))` of the transform.
    pub fn log_terms(&self, w: f64) -> Vec<(usize, f64)> {
        let lw = w.ln();
        self.log_f
            .iter()
            .enumerate()
            .map(|(i, l)| (i + 1, l + (i + 1) as f64 * lw))
            .collect()
    }
}

/// Taboo evolution: mass arriving at `x0` is recorded and removed.
pub fn taboo_first_return<K: StepKernel + ?Sized>(
    kernel: &K,
    x0: Site,
    n_max: usize,
) -> Result<FirstReturn> {
    if n_max == 0 {
        return Err(Error::OutOfRange {
            name: "n_max",
            value: 0.0,
            range: ">= 1",
        });
    }
    let mut log_f = Vec::with_capacity(n_max);
    let mut ev = Evolution::new(kernel, x0);
    for _ in 0..n_max {
        match ev.step() {
            Ok(_) => {}
            Err(Error::Extinct { .. }) => break,
            Err(e) => return Err(e),
        }
        let at = ev.prob(x0);
        log_f.push(at.ln() + ev.log_mass());
        if at >= 1.0 {
            break;
        }
        let i = ev.window.index(x0).expect("start stays inside the window");
        ev.values[i] = 0.0;
        let keep = 1.0 - at;
        for v in &mut ev.values {
            *v /= keep;
        }
        ev.log_mass += keep.ln();
    }
    log_f.resize(n_max, f64::NEG_INFINITY);
    Ok(FirstReturn { site: x0, log_f })
}

/// Exact `K^n(x0, .)` and `K^n(x0, S)` from rational dynamic programming.
#[derive(Clone, Debug)]
pub struct ExactDistribution {
    pub window: Window,
    pub masses: Vec<BigRational>,
    pub survival: BigRational,
}

impl ExactDistribution {
    pub fn mass(&self, x: Site) -> f64 {
        self.window
            .index(x)
            .map_or(0.0, |i| self.masses[i].to_f64().unwrap_or(f64::NAN))
    }

    pub fn survival_f64(&self) -> f64 {
        self.survival.to_f64().unwrap_or(f64::NAN)
    }
}

fn exact(v: f64) -> BigRational {
    BigRational::from_float(v).unwrap_or_else(|| BigRational::from_integer(BigInt::zero()))
}

/// Ground truth for small `n`: every transition probability is taken as the
/// exact binary rational it is stored as.
pub fn brute_force_distribution<K: StepKernel + ?Sized>(
    kernel: &K,
    x0: Site,
    n: usize,
) -> Result<ExactDistribution> {
    if n > BRUTE_FORCE_MAX_STEPS {
        return Err(Error::TooManySteps {
            n,
            max: BRUTE_FORCE_MAX_STEPS,
        });
    }
    let window = Window::point(x0).grow(n as Site);
    let laws: Vec<[BigRational; 3]> = window
        .sites()
        .map(|x| {
            let l = kernel.law(x);
            [exact(l.down), exact(l.stay), exact(l.up)]
        })
        .collect();
    let zero = BigRational::from_integer(BigInt::zero());
    let mut cur = vec![zero.clone(); window.len()];
    cur[n] = BigRational::from_integer(BigInt::from(1));
    for _ in 0..n {
        let mut next = vec![zero.clone(); window.len()];
        for (i, v) in cur.iter().enumerate() {
            if v.is_zero() {
                continue;
            }
            let [d, s, u] = &laws[i];
            // mass never reaches the window edge within n steps
            next[i - 1] += v * d;
            next[i] += v * s;
            next[i + 1] += v * u;
        }
        cur = next;
    }
    let survival = cur.iter().fold(zero, |acc, v| acc + v);
    Ok(ExactDistribution {
        window,
        masses: cur,
        survival,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{kernel_step, NNKernel, Region};

    fn two_sided() -> NNKernel {
        NNKernel::new(
            vec![
                Region::new(None, Some(0), StepLaw::new(0.9, 0.0, 0.1)),
                Region::new(Some(1), None, StepLaw::new(0.25, 0.0, 0.75)),
            ],
            [(0, StepLaw::new(0.25, 0.0, 0.1))],
        )
        .unwrap()
    }

    #[test]
    fn evolution_matches_kernel_step_bitwise() {
        let k = two_sided().lazify(0.3).unwrap();
        let mut ev = Evolution::new(&k, 2);
        let mut st = MassState::point(2);
        for _ in 0..40 {
            let f1 = ev.step().unwrap();
            let (s, f2) = kernel_step(&k, &st).unwrap();
            st = s;
            assert_eq!(f1, f2);
        }
        assert_eq!(ev.state(), st);
    }

    #[test]
    fn one_step_distribution() {
        let k = two_sided().lazify(0.2).unwrap();
        let t = evolve_trace(&k, 4, 1, &[]).unwrap();
        let l = k.law(4);
        let d = &t.distribution;
        assert_eq!(d.window(), Window::new(3, 5).unwrap());
        assert_eq!((d.prob(3), d.prob(4), d.prob(5)), (l.down, l.stay, l.up));
    }

    #[test]
    fn brute_force_small_cases() {
        let k = two_sided();
        let b0 = brute_force_distribution(&k, 0, 0).unwrap();
        assert_eq!(b0.survival_f64(), 1.0);
        let b1 = brute_force_distribution(&k, 0, 1).unwrap();
        assert_eq!((b1.mass(-1), b1.mass(0), b1.mass(1)), (0.1, 0.0, 0.25));
        assert!((b1.survival_f64() - 0.35).abs() < 1e-15);
        assert!(matches!(
            brute_force_distribution(&k, 0, 15),
            Err(Error::TooManySteps { .. })
        ));
    }

    #[test]
    fn two_steps_against_path_sum() {
        // the nine two-step paths from 0, written out by hand
        let k = two_sided().lazify(0.5).unwrap();
        let mut exact = std::collections::BTreeMap::new();
        for a in [-1i64, 0, 1] {
            for b in [-1i64, 0, 1] {
                let x1 = a;
                let x2 = a + b;
                let w = k.entry(0, x1) * k.entry(x1, x2);
                *exact.entry(x2).or_insert(0.0) += w;
            }
        }
        let t = evolve_trace(&k, 0, 2, &[]).unwrap();
        let total: f64 = exact.values().sum();
        assert!((t.log_masses[2].exp() - total).abs() < 1e-15);
        for (x, w) in exact {
            assert!((t.distribution.mass(x) - w).abs() < 1e-15);
        }
    }

    #[test]
    fn first_return_small_k() {
        let k = two_sided().lazify(0.4).unwrap();
        let x0 = 3;
        let fr = taboo_first_return(&k, x0, 5).unwrap();
        let (l, up, dn) = (k.law(x0), k.law(x0 + 1), k.law(x0 - 1));
        assert!((fr.f(1) - l.stay).abs() < 1e-15);
        assert!((fr.f(2) - (l.up * up.down + l.down * dn.up)).abs() < 1e-15);
    }

    #[test]
    fn tracked_ratios_absent_until_reachable() {
        let k = two_sided();
        let t = evolve_trace(&k, 0, 6, &[3]).unwrap();
        let s = t.tracked_site(3).unwrap();
        assert!(s.ratios[..3].iter().all(|r| r.is_none()));
        // period two: mass at 3 alternates with zero
        assert!(s.ratios[3].is_none() && s.ratios[4].is_none());
    }

    #[test]
    fn column_matches_forward() {
        let k = two_sided().lazify(0.5).unwrap();
        let mut col = ColumnEvolution::new(&k, 0);
        col.advance(30).unwrap();
        for x in [-4, 0, 5] {
            let t = evolve_trace(&k, x, 30, &[0]).unwrap();
            let fwd = t.tracked_site(0).unwrap().log_mass[30];
            assert!((fwd - col.log_value(x)).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn clipping_is_accounted() {
        let k = two_sided().lazify(0.5).unwrap();
        let t = evolve_trace_clipped(&k, 0, 400, &[], Some(1e-30)).unwrap();
        let full = evolve_trace(&k, 0, 400, &[]).unwrap();
        assert!(t.distribution.window().len() < full.distribution.window().len());
        assert!(t.clipped_mass < 1e-25);
        let diff = (t.log_masses[400] - full.log_masses[400]).abs();
        assert!(diff < 1e-12);
    }
}
