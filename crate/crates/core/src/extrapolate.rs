//! Sequence acceleration and convergence diagnostics shared by the estimators.

use serde::Serialize;

use crate::chain::stable_sum;

/// Width of the sliding Cauchy window.
pub const CAUCHY_WINDOW: usize = 50;
/// Spread below which a window counts as converged.
pub const CAUCHY_TOL: f64 = 1e-3;

/// Richardson extrapolation in `1/n`: `e(n) = (n a_n - m a_m) / (n - m)` with `m = n / 2`.
///
/// `a[i]` is the term with index `n = i + offset`. The output has the same
/// indexing; entries whose half-index falls before `offset` are `None`.
pub fn richardson_series(a: &[f64], offset: usize) -> Vec<Option<f64>> {
    (0..a.len())
        .map(|i| {
            let n = i + offset;
            let m = n / 2;
            if m < offset.max(1) || m == n {
                return None;
            }
            let (an, am) = (a[i], a[m - offset]);
            Some((n as f64 * an - m as f64 * am) / (n - m) as f64)
        })
        .collect()
}

/// `max - min` over the last `window` entries, or `None` if there are fewer.
pub fn cauchy_spread(values: &[f64], window: usize) -> Option<f64> {
    if window == 0 || values.len() < window {
        return None;
    }
    let tail = &values[values.len() - window..];
    let (lo, hi) = tail
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    Some(hi - lo)
}

/// Extrapolated limit of a sequence with its diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Extrapolated {
    pub limit: f64,
    /// Cauchy spread of the extrapolated values over the last window.
    pub spread: f64,
    /// `|e(N) - e(N/2)|`: catches drifts slower than the window sees.
    pub half_gap: f64,
}

impl Extrapolated {
    pub fn error_bound(&self) -> f64 {
        self.spread.max(self.half_gap)
    }

    pub fn converged(&self, tol: f64) -> bool {
        self.error_bound() <= tol
    }
}

/// Richardson limit of `a` (indexed from `offset`) with window and half-horizon checks.
pub fn richardson_limit(a: &[f64], offset: usize, window: usize) -> Option<Extrapolated> {
    let series = richardson_series(a, offset);
    let valid: Vec<f64> = series.iter().flatten().copied().collect();
    let spread = cauchy_spread(&valid, window)?;
    let limit = *valid.last()?;
    let half = series
        .get(series.len() / 2)
        .copied()
        .flatten()
        .unwrap_or(limit);
    Some(Extrapolated {
        limit,
        spread,
        half_gap: (limit - half).abs(),
    })
}

/// Fitted tail model `t_k ~ c k^e q^k` on the residue class of the observed terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PowerTail {
    pub log_c: f64,
    pub log_q: f64,
    pub exponent: f64,
    /// Spacing between nonzero terms (2 for period-two chains).
    pub period: usize,
    pub last: usize,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Least-squares fit of `ln t_k - e ln k = ln c + k ln q` over the last decade
/// `k in [N/10, N]` of the finite log terms.
pub fn fit_power_tail(terms: &[(usize, f64)], exponent: f64) -> Option<PowerTail> {
    let finite: Vec<(usize, f64)> = terms
        .iter()
        .copied()
        .filter(|(_, l)| l.is_finite())
        .collect();
    let last = finite.last()?.0;
    let pts: Vec<(f64, f64)> = finite
        .iter()
        .filter(|(k, _)| *k * 10 >= last && *k > 0)
        .map(|&(k, l)| (k as f64, l - exponent * (k as f64).ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let period = finite
        .iter()
        .filter(|(k, _)| *k * 10 >= last)
        .fold(0, |g, (k, _)| gcd(g, last - k))
        .max(1);
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let log_q = sxy / sxx;
    Some(PowerTail {
        log_c: my - log_q * mx,
        log_q,
        exponent,
        period,
        last,
    })
}

impl PowerTail {
    /// Sum of the model over the terms after `last` in the same residue class.
    /// Growth rates up to `ln q = 1e-3` are treated as critical (`q = 1`).
    pub fn tail_sum(&self) -> f64 {
        let log_q = self.log_q.min(0.0);
        let d = self.period;
        let term =
            |k: usize| (self.log_c + self.exponent * (k as f64).ln() + k as f64 * log_q).exp();
        const EXPLICIT: usize = 200_000;
        let mut parts = Vec::with_capacity(EXPLICIT);
        let mut k = self.last + d;
        for _ in 0..EXPLICIT {
            let t = term(k);
            parts.push(t);
            if t < 1e-300 {
                break;
            }
            k += d;
        }
        let mut sum = stable_sum(parts);
        if self.exponent < -1.0 {
            // integral remainder of the power part, damped by the geometric factor
            let kf = k as f64;
            let rem = self.log_c.exp() * kf.powf(self.exponent + 1.0)
                / (-(self.exponent + 1.0) * d as f64)
                * (kf * log_q).exp();
            sum += rem;
        }
        sum
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn richardson_removes_one_over_n() {
        let a: Vec<f64> = (1..=400).map(|n| 0.9 * (1.0 - 1.5 / n as f64)).collect();
        let e = richardson_limit(&a, 1, CAUCHY_WINDOW).unwrap();
        assert!((e.limit - 0.9).abs() < 1e-12);
        assert!(e.converged(1e-10));
    }

    #[test]
    fn constant_series_is_exact() {
        let a = vec![0.81; 300];
        let e = richardson_limit(&a, 0, CAUCHY_WINDOW).unwrap();
        assert!((e.limit - 0.81).abs() < 1e-15);
        assert!(e.error_bound() < 1e-15);
    }

    #[test]
    fn oscillation_is_not_converged() {
        let a: Vec<f64> = (0..400)
            .map(|n| 0.9 + 0.01 * (n as f64 / 30.0).sin())
            .collect();
        let e = richardson_limit(&a, 0, CAUCHY_WINDOW).unwrap();
        assert!(!e.converged(CAUCHY_TOL));
    }

    #[test]
    fn short_series_has_no_spread() {
        assert!(cauchy_spread(&[1.0, 2.0], 50).is_none());
        assert_eq!(cauchy_spread(&[1.0, 3.0, 2.0], 2), Some(1.0));
    }

    #[test]
    fn tail_fit_recovers_model() {
        let (c, q) = (0.7f64, 0.995f64);
        let terms: Vec<(usize, f64)> = (1..=2000)
            .map(|k| (k, c.ln() - 1.5 * (k as f64).ln() + k as f64 * q.ln()))
            .collect();
        let t = fit_power_tail(&terms, -1.5).unwrap();
        assert!((t.log_q - q.ln()).abs() < 1e-10);
        assert!((t.log_c - c.ln()).abs() < 1e-8);
        let exact: f64 = (2001..400_000)
            .map(|k| c * (k as f64).powf(-1.5) * q.powi(k))
            .sum();
        assert!((t.tail_sum() - exact).abs() < 1e-12 * exact.max(1e-300) + 1e-15);
    }

    #[test]
    fn critical_tail_with_period_two() {
        let terms: Vec<(usize, f64)> = (1..=4000)
            .map(|k| {
                let l = if k % 2 == 0 {
                    -1.5 * (k as f64).ln()
                } else {
                    f64::NEG_INFINITY
                };
                (k, l)
            })
            .collect();
        let t = fit_power_tail(&terms, -1.5).unwrap();
        assert_eq!(t.period, 2);
        let exact: f64 = (2001..20_000_000u64)
            .map(|j| ((2 * j) as f64).powf(-1.5))
            .sum::<f64>()
            + 2.0 * (40_000_000f64).powf(-0.5) / 2.0;
        assert!(
            (t.tail_sum() - exact).abs() / exact < 1e-4,
            "{} vs {}",
            t.tail_sum(),
            exact
        );
    }
}
