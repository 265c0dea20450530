//! Seeded trajectory simulation.
//!
//! Every path owns a ChaCha8 generator seeded from `(seed, path index)`, so
//! results do not depend on how rayon schedules the work.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::chain::{StepKernel, StepLaw, Window};
use crate::error::{Error, Result};
use crate::evolve::Evolution;
use crate::measures::TabulatedMeasure;
use crate::transforms::{ReversedKernel, TransformedKernel};
use crate::Site;

/// Generator for path `index` of a run seeded with `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Outcome of one step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Move {
    Down,
    Stay,
    Up,
    Killed,
}

/// Draws a move from a substochastic law; the deficit is killing.
pub fn draw(law: &StepLaw, rng: &mut impl Rng) -> Move {
    let u: f64 = rng.random();
    if u < law.up {
        Move::Up
    } else if u < law.up + law.stay {
        Move::Stay
    } else if u < law.up + law.stay + law.down {
        Move::Down
    } else {
        Move::Killed
    }
}

/// Draws a move from a law rescaled to total mass one.
fn draw_stochastic(law: &StepLaw, rng: &mut impl Rng) -> Move {
    let u: f64 = rng.random::<f64>() * law.total();
    if u < law.up {
        Move::Up
    } else if u < law.up + law.stay {
        Move::Stay
    } else {
        Move::Down
    }
}

/// Step laws tabulated on a window; sites outside fall back to the kernel.
pub struct LawTable<'a, K: StepKernel + ?Sized> {
    kernel: &'a K,
    window: Window,
    laws: Vec<StepLaw>,
}

impl<'a, K: StepKernel + ?Sized> LawTable<'a, K> {
    pub fn new(kernel: &'a K, window: Window) -> Self {
        Self {
            kernel,
            window,
            laws: window.sites().map(|x| kernel.law(x)).collect(),
        }
    }

    pub fn law(&self, x: Site) -> StepLaw {
        match self.window.index(x) {
            Some(i) => self.laws[i],
            None => self.kernel.law(x),
        }
    }
}

/// A sampled path; `absorbed_at` is the killing step, `None` if the path survived.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TrajectorySample {
    pub seed: u64,
    pub start: Site,
    pub path: Vec<Site>,
    pub absorbed_at: Option<usize>,
}

impl TrajectorySample {
    pub fn last(&self) -> Site {
        *self.path.last().expect("path holds the start")
    }
}

fn apply(x: Site, m: Move) -> Site {
    match m {
        Move::Up => x + 1,
        Move::Down => x - 1,
        _ => x,
    }
}

/// One path of the killed chain, up to `horizon` steps.
pub fn simulate_absorbed<K: StepKernel + ?Sized>(
    kernel: &K,
    x0: Site,
    horizon: usize,
    seed: u64,
) -> Result<TrajectorySample> {
    if horizon == 0 {
        return Err(Error::OutOfRange {
            name: "horizon",
            value: 0.0,
            range: ">= 1",
        });
    }
    let mut rng = path_rng(seed, 0);
    let mut path = vec![x0];
    let mut x = x0;
    for step in 1..=horizon {
        match draw(&kernel.law(x), &mut rng) {
            Move::Killed => {
                return Ok(TrajectorySample {
                    seed,
                    start: x0,
                    path,
                    absorbed_at: Some(step),
                })
            }
            m => {
                x = apply(x, m);
                path.push(x);
            }
        }
    }
    Ok(TrajectorySample {
        seed,
        start: x0,
        path,
        absorbed_at: None,
    })
}

/// Absorption times of `paths` independent runs, `None` for runs alive after `horizon`.
pub fn absorption_times<K: StepKernel + ?Sized>(
    kernel: &K,
    x0: Site,
    horizon: usize,
    seed: u64,
    paths: usize,
) -> Vec<Option<usize>> {
    let table = LawTable::new(kernel, Window::point(x0).grow(horizon.min(1 << 16) as Site));
    (0..paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i);
            let mut x = x0;
            for step in 1..=horizon {
                match draw(&table.law(x), &mut rng) {
                    Move::Killed => return Some(step),
                    m => x = apply(x, m),
                }
            }
            None
        })
        .collect()
}

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl MeanEstimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        Self {
            mean,
            std_error: (var / n).sqrt(),
            samples: values.len(),
        }
    }

    /// `|mean - target|` in units of the standard error.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.mean - target).abs() / self.std_error
    }
}

/// Empirical `P(zeta > n)` from absorption times.
pub fn survival_estimate(times: &[Option<usize>], n: usize) -> MeanEstimate {
    let hits: Vec<f64> = times
        .iter()
        .map(|t| f64::from(u8::from(t.is_none_or(|k| k > n))))
        .collect();
    MeanEstimate::from_samples(&hits)
}

/// Result of [`r_zeta_estimate`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RZetaEstimate {
    pub estimate: MeanEstimate,
    /// Paths still alive at the cap (counted with `zeta = cap`).
    pub unresolved: usize,
    pub longest: usize,
}

/// Monte Carlo `E_x0 R^zeta`. Paths alive after `horizon` steps are continued
/// with a doubled horizon up to `cap` steps.
pub fn r_zeta_estimate<K: StepKernel + ?Sized>(
    kernel: &K,
    x0: Site,
    radius: f64,
    seed: u64,
    paths: usize,
    horizon: usize,
    cap: usize,
) -> RZetaEstimate {
    let table = LawTable::new(kernel, Window::point(x0).grow(horizon.min(1 << 16) as Site));
    let lr = radius.ln();
    let out: Vec<(usize, bool)> = (0..paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i);
            let mut x = x0;
            let mut limit = horizon;
            let mut step = 0;
            loop {
                while step < limit {
                    step += 1;
                    match draw(&table.law(x), &mut rng) {
                        Move::Killed => return (step, true),
                        m => x = apply(x, m),
                    }
                }
                if limit >= cap {
                    return (step, false);
                }
                limit = (limit * 2).min(cap);
            }
        })
        .collect();
    let values: Vec<f64> = out.iter().map(|(z, _)| (*z as f64 * lr).exp()).collect();
    RZetaEstimate {
        estimate: MeanEstimate::from_samples(&values),
        unresolved: out.iter().filter(|o| !o.1).count(),
        longest: out.iter().map(|o| o.0).max().unwrap_or(0),
    }
}

/// Path of the (stochastic) transformed chain of length `steps`.
pub fn simulate_transformed(
    tk: &TransformedKernel,
    x0: Site,
    steps: usize,
    seed: u64,
) -> Result<TrajectorySample> {
    let window = Window::point(x0).grow(steps as Site);
    tk.check_stochastic(window, 1e-9)?;
    let table = LawTable::new(tk, window);
    let mut rng = path_rng(seed, 0);
    Ok(TrajectorySample {
        seed,
        start: x0,
        path: walk(&table, x0, steps, &mut rng),
        absorbed_at: None,
    })
}

fn walk<K: StepKernel + ?Sized>(
    table: &LawTable<K>,
    x0: Site,
    steps: usize,
    rng: &mut impl Rng,
) -> Vec<Site> {
    let mut path = Vec::with_capacity(steps + 1);
    let mut x = x0;
    path.push(x);
    for _ in 0..steps {
        x = apply(x, draw_stochastic(&table.law(x), rng));
        path.push(x);
    }
    path
}

/// Final sites of `paths` independent runs of the transformed chain.
pub fn transformed_endpoints(
    tk: &TransformedKernel,
    x0: Site,
    steps: usize,
    seed: u64,
    paths: usize,
) -> Result<Vec<Site>> {
    let window = Window::point(x0).grow(steps as Site);
    tk.check_stochastic(window, 1e-9)?;
    let table = LawTable::new(tk, window);
    Ok((0..paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i);
            let mut x = x0;
            for _ in 0..steps {
                x = apply(x, draw_stochastic(&table.law(x), &mut rng));
            }
            x
        })
        .collect())
}

/// Counts of (down, stay, up, killed) over `draws` single steps from `x`.
pub fn one_step_counts<K: StepKernel + ?Sized>(
    kernel: &K,
    x: Site,
    draws: usize,
    seed: u64,
) -> [u64; 4] {
    let law = kernel.law(x);
    let mut rng = path_rng(seed, 0);
    let mut c = [0u64; 4];
    for _ in 0..draws {
        let i = match draw(&law, &mut rng) {
            Move::Down => 0,
            Move::Stay => 1,
            Move::Up => 2,
            Move::Killed => 3,
        };
        c[i] += 1;
    }
    c
}

/// Pearson statistic over cells with positive probability, with its degrees of freedom.
pub fn chi_square(counts: &[u64], probs: &[f64]) -> (f64, usize) {
    let n: u64 = counts.iter().sum();
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&c, &p) in counts.iter().zip(probs) {
        if p > 1e-12 {
            let e = p * n as f64;
            stat += (c as f64 - e).powi(2) / e;
            cells += 1;
        }
    }
    (stat, cells.saturating_sub(1))
}

/// Upper `1e-3` quantiles of the chi-square law with 1 to 4 degrees of freedom.
pub const CHI2_CRIT_1E3: [f64; 4] = [10.828, 13.816, 16.266, 18.467];

/// One point of an Orey trace.
#[derive(Clone, Debug, Serialize)]
pub struct OreyPoint {
    pub m: usize,
    pub site: Site,
    /// `(y, K^m(X_m, y) / K^m(X_m, S))` for every probe `y`.
    pub ratios: Vec<(Site, f64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct OreyTrace {
    pub seed: u64,
    /// Mass of the initial law outside the sampled truncation.
    pub truncation_mass: f64,
    pub path: Vec<Site>,
    pub points: Vec<OreyPoint>,
}

/// Samples a site from a tabulated probability by inverse CDF.
pub fn sample_tabulated(init: &TabulatedMeasure, rng: &mut impl Rng) -> Site {
    let total = init.total();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (x, v) in init.iter() {
        acc += v;
        if u < acc {
            return x;
        }
    }
    init.window.hi
}

/// Runs the reversed chain from `init` and evaluates the conditioned law of
/// the base kernel from `X_m` after `m` steps at each grid time.
pub fn orey_trace(
    rk: &ReversedKernel,
    init: &TabulatedMeasure,
    m_grid: &[usize],
    seed: u64,
    probes: &[Site],
    bound: Site,
) -> Result<OreyTrace> {
    let m_max = m_grid.iter().copied().max().unwrap_or(0);
    let window = Window::centered(bound);
    let (site, deviation) = rk.max_row_deviation(init.window.grow(m_max as Site).clamp_to(window));
    if deviation > 1e-9 {
        return Err(Error::NotStochastic { site, deviation });
    }
    let table = LawTable::new(rk, window);
    let mut rng = path_rng(seed, 0);
    let x0 = sample_tabulated(init, &mut rng);
    let path = walk(&table, x0, m_max, &mut rng);
    if path.iter().any(|x| !window.contains(*x)) {
        return Err(Error::WindowBlowUp {
            lo: window.lo,
            hi: window.hi,
        });
    }
    let base = rk.base();
    let points = m_grid
        .par_iter()
        .map(|&m| {
            let x = path[m];
            let mut ev = Evolution::new(base.as_ref(), x);
            ev.advance(m)?;
            Ok(OreyPoint {
                m,
                site: x,
                ratios: probes.iter().map(|&y| (y, ev.prob(y))).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OreyTrace {
        seed,
        truncation_mass: init.tail_bound,
        path,
        points,
    })
}

/// Powers of two up to `m_max`, with `m_max` itself appended.
pub fn sparse_grid(m_max: usize) -> Vec<usize> {
    let mut g: Vec<usize> = (4..)
        .map(|k| 1usize << k)
        .take_while(|&m| m < m_max)
        .collect();
    g.push(m_max);
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::NNKernel;
    use crate::scenarios::build_two_sided;
    use crate::spectral::TwoSidedParams;

    #[test]
    fn certain_kill() {
        let k = NNKernel::homogeneous(StepLaw::new(0.5, 0.0, 0.5))
            .with_override(0, StepLaw::new(0.0, 0.0, 0.0));
        for seed in 0..20 {
            let s = simulate_absorbed(&k, 0, 10, seed).unwrap();
            assert_eq!(s.absorbed_at, Some(1));
            assert_eq!(s.path, vec![0]);
        }
    }

    #[test]
    fn reproducible_paths() {
        let k = build_two_sided(&TwoSidedParams::reference());
        let a = simulate_absorbed(&k, 3, 500, 42).unwrap();
        let b = simulate_absorbed(&k, 3, 500, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_absorbed(&k, 3, 500, 43).unwrap();
        assert!(a != c || a.path.len() == 1);
        assert!(a.path.windows(2).all(|w| (w[0] - w[1]).abs() <= 1));
        let t1 = absorption_times(&k, 0, 200, 9, 1000);
        let t2 = absorption_times(&k, 0, 200, 9, 1000);
        assert_eq!(t1, t2);
    }

    #[test]
    fn one_step_chi_square() {
        let k = build_two_sided(&TwoSidedParams::reference())
            .lazify(0.5)
            .unwrap();
        for x in [-3, 0, 4] {
            let l = k.law(x);
            let counts = one_step_counts(&k, x, 100_000, (10 + x) as u64);
            let (stat, dof) = chi_square(&counts, &[l.down, l.stay, l.up, l.kill()]);
            assert!(stat < CHI2_CRIT_1E3[dof - 1], "x={x}: {stat}");
        }
    }

    #[test]
    fn grid_is_sparse() {
        assert_eq!(sparse_grid(100), vec![16, 32, 64, 100]);
    }
}
