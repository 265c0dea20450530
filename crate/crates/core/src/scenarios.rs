//! Builders for the named chains and the oscillation probe.

use serde::{Deserialize, Serialize};

use crate::chain::{NNKernel, Region, StepLaw};
use crate::error::{Error, Result};
use crate::evolve::Evolution;
use crate::measures::{total_variation, SymmetricParams, TabulatedMeasure};
use crate::spectral::TwoSidedParams;
use crate::Site;

/// Two-sided walk: `(p, q)` on the positive side, `(a, b)` on the negative
/// side, up `p` and down `b` at the origin, which is the only killing site.
pub fn build_two_sided(params: &TwoSidedParams) -> NNKernel {
    let TwoSidedParams { p, q, a, b } = *params;
    NNKernel::new(
        vec![
            Region::new(None, Some(-1), StepLaw::new(a, 0.0, b)),
            Region::new(Some(0), Some(0), StepLaw::new(p, 0.0, b)),
            Region::new(Some(1), None, StepLaw::new(p, 0.0, q)),
        ],
        [],
    )
    .expect("three regions tile the integers")
}

/// Mirror-symmetric chain drifting towards the origin from both sides.
pub fn build_symmetric(params: &SymmetricParams) -> NNKernel {
    let (p, q, o) = (params.p, params.q(), params.origin_up);
    NNKernel::new(
        vec![
            Region::new(None, Some(-1), StepLaw::new(q, 0.0, p)),
            Region::new(Some(0), Some(0), StepLaw::new(o, 0.0, o)),
            Region::new(Some(1), None, StepLaw::new(p, 0.0, q)),
        ],
        [],
    )
    .expect("three regions tile the integers")
}

/// Holding-rate schedule of the oscillating chain.
///
/// On the positive side `r_x = c_k` for `a_k <= x < a_{k+1}`; on the negative
/// side `r_x = d_k` for `-b_{k+1} < x <= -b_k`. Sites closer to the origin
/// hold with `r0`. Away from the origin the remaining mass `1 - r_x` is split
/// `p : 1-p` towards the origin on both sides; at the origin it moves up or
/// down with `(1 - r0) p / 2` each and is otherwise killed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KestenSchedule {
    pub a: Vec<Site>,
    pub b: Vec<Site>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub r0: f64,
    pub p: f64,
}

impl Default for KestenSchedule {
    /// Four alternations with cutoffs growing by a factor of eight.
    fn default() -> Self {
        Self {
            a: vec![2, 16, 128, 1024],
            b: vec![1, 6, 48, 384],
            c: vec![0.31, 0.39, 0.47, 0.49],
            d: vec![0.27, 0.35, 0.43, 0.48],
            r0: 0.2,
            p: 0.25,
        }
    }
}

impl KestenSchedule {
    /// Checks the interval and rate orderings.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Schedule(m));
        let k = self.a.len();
        if k == 0 || self.b.len() != k || self.c.len() != k || self.d.len() != k {
            return bad("a, b, c and d need the same nonzero length".into());
        }
        if !(self.p > 0.0 && self.p < 0.5) {
            return bad(format!("profile p = {} is not in (0, 1/2)", self.p));
        }
        if self.b[0] < 1 {
            return bad("b_1 must be at least 1".into());
        }
        for i in 0..k {
            if self.a[i] < self.b[i] {
                return bad(format!(
                    "a_{} = {} < b_{} = {}",
                    i + 1,
                    self.a[i],
                    i + 1,
                    self.b[i]
                ));
            }
            if i + 1 < k && self.b[i + 1] < self.a[i] {
                return bad(format!(
                    "b_{} = {} < a_{} = {}",
                    i + 2,
                    self.b[i + 1],
                    i + 1,
                    self.a[i]
                ));
            }
            for (name, v) in [("c", self.c[i]), ("d", self.d[i])] {
                if !(0.25..=0.5).contains(&v) {
                    return bad(format!("{name}_{} = {v} is outside [1/4, 1/2]", i + 1));
                }
            }
        }
        let mut chain = vec![("r0".to_string(), self.r0)];
        for i in 0..k {
            chain.push((format!("d_{}", i + 1), self.d[i]));
            chain.push((format!("c_{}", i + 1), self.c[i]));
        }
        for w in chain.windows(2) {
            if !(w[0].1 < w[1].1) {
                return bad(format!(
                    "{} = {} must be below {} = {}",
                    w[0].0, w[0].1, w[1].0, w[1].1
                ));
            }
        }
        if !(0.0..1.0).contains(&self.r0) {
            return bad(format!("r0 = {} is not in [0, 1)", self.r0));
        }
        Ok(())
    }
}

pub fn build_kesten(schedule: &KestenSchedule) -> Result<NNKernel> {
    schedule.validate()?;
    let p = schedule.p;
    let q = 1.0 - p;
    let pos = |r: f64| StepLaw::new((1.0 - r) * p, r, (1.0 - r) * q);
    let neg = |r: f64| StepLaw::new((1.0 - r) * q, r, (1.0 - r) * p);
    let k = schedule.a.len();
    let mut regions = Vec::new();
    // negative side, far to near
    regions.push(Region::new(
        None,
        Some(-schedule.b[k - 1]),
        neg(schedule.d[k - 1]),
    ));
    for i in (0..k - 1).rev() {
        let (from, to) = (-schedule.b[i + 1] + 1, -schedule.b[i]);
        if from <= to {
            regions.push(Region::new(Some(from), Some(to), neg(schedule.d[i])));
        }
    }
    if schedule.b[0] > 1 {
        regions.push(Region::new(
            Some(-schedule.b[0] + 1),
            Some(-1),
            neg(schedule.r0),
        ));
    }
    let side = (1.0 - schedule.r0) * p / 2.0;
    regions.push(Region::new(
        Some(0),
        Some(0),
        StepLaw::new(side, schedule.r0, side),
    ));
    if schedule.a[0] > 1 {
        regions.push(Region::new(
            Some(1),
            Some(schedule.a[0] - 1),
            pos(schedule.r0),
        ));
    }
    for i in 0..k - 1 {
        let (from, to) = (schedule.a[i], schedule.a[i + 1] - 1);
        if from <= to {
            regions.push(Region::new(Some(from), Some(to), pos(schedule.c[i])));
        }
    }
    regions.push(Region::new(
        Some(schedule.a[k - 1]),
        None,
        pos(schedule.c[k - 1]),
    ));
    NNKernel::new(regions, [])
}

/// Step grid used by the default oscillation demo.
pub fn default_kesten_grid() -> Vec<usize> {
    vec![300, 1250, 4000, 8000]
}

/// Square of the walk killed with probability `1 - alpha` per step, moving
/// down with `a` and up with `b`, restricted to the even sites.
pub fn build_alpha_walk(alpha: f64, a: f64, b: f64) -> Result<NNKernel> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::OutOfRange {
            name: "alpha",
            value: alpha,
            range: "(0, 1)",
        });
    }
    if !(a > 0.0 && b > 0.0) || (a + b - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParams(format!(
            "need a + b = 1 with a, b > 0, got a={a}, b={b}"
        )));
    }
    NNKernel::homogeneous(StepLaw::new(alpha * b, 0.0, alpha * a)).square_even()
}

/// Pairwise total-variation distances between conditioned laws at the grid times.
#[derive(Clone, Debug, Serialize)]
pub struct OscillationReport {
    pub start: Site,
    pub n_grid: Vec<usize>,
    pub tv: Vec<Vec<f64>>,
    /// `(n_i, n_j, tv)` of the largest off-diagonal entry.
    pub witness: Option<(usize, usize, f64)>,
    /// Conditioned mass on the positive half-line at each grid time.
    pub positive_mass: Vec<f64>,
}

impl OscillationReport {
    pub fn max_tv(&self) -> f64 {
        self.witness.map_or(0.0, |w| w.2)
    }
}

pub fn oscillation_probe(
    kernel: &NNKernel,
    x0: Site,
    n_grid: &[usize],
) -> Result<OscillationReport> {
    if n_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Schedule("n_grid must be sorted".into()));
    }
    let mut ev = Evolution::new(kernel, x0);
    let mut snaps: Vec<TabulatedMeasure> = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        ev.advance(n - ev.steps_taken())?;
        snaps.push(TabulatedMeasure::from(&ev.state()));
    }
    let m = snaps.len();
    let mut tv = vec![vec![0.0; m]; m];
    let mut witness: Option<(usize, usize, f64)> = None;
    for i in 0..m {
        for j in i + 1..m {
            let d = total_variation(&snaps[i], &snaps[j]);
            tv[i][j] = d;
            tv[j][i] = d;
            if witness.is_none_or(|w| d > w.2) {
                witness = Some((n_grid[i], n_grid[j], d));
            }
        }
    }
    Ok(OscillationReport {
        start: x0,
        n_grid: n_grid.to_vec(),
        tv,
        witness,
        positive_mass: snaps.iter().map(|s| s.upper_tail(1)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{StepKernel, Window};

    #[test]
    fn two_sided_kill() {
        let k = build_two_sided(&TwoSidedParams::reference());
        assert!((k.law(0).kill() - 0.65).abs() < 1e-15);
        assert!(k.validate(Window::centered(100)).is_empty());
        assert_eq!(k.kill_support().single_site(), Some(0));
    }

    #[test]
    fn symmetric_is_mirror_invariant() {
        let s = SymmetricParams::with_default_origin(0.25).unwrap();
        let k = build_symmetric(&s);
        assert_eq!(k.mirrored(), k);
        assert!((k.law(0).kill() - 0.75).abs() < 1e-15);
        assert!(k.validate(Window::centered(100)).is_empty());
    }

    #[test]
    fn kesten_default_is_valid() {
        let sched = KestenSchedule::default();
        let k = build_kesten(&sched).unwrap();
        assert!(k.validate(Window::centered(3000)).is_empty());
        assert_eq!(k.kill_support().single_site(), Some(0));
        assert_eq!(k.law(5).stay, 0.31);
        assert_eq!(k.law(16).stay, 0.39);
        assert_eq!(k.law(-6).stay, 0.35);
        assert_eq!(k.law(-5).stay, 0.27);
        assert_eq!(k.law(5000).stay, 0.49);
        assert_eq!(k.law(-5000).stay, 0.48);
    }

    #[test]
    fn kesten_rejects_bad_ordering() {
        let mut s = KestenSchedule::default();
        s.d[0] = 0.32;
        assert!(matches!(build_kesten(&s), Err(Error::Schedule(_))));
        let mut s = KestenSchedule::default();
        s.a[1] = 5;
        assert!(build_kesten(&s).is_err());
    }

    #[test]
    fn alpha_walk_mass() {
        let k = build_alpha_walk(0.9, 0.6, 0.4).unwrap();
        for x in -3..=3 {
            assert!((k.law(x).total() - 0.81).abs() < 1e-15);
        }
        assert!(build_alpha_walk(1.0, 0.6, 0.4).is_err());
    }

    #[test]
    fn probe_with_single_time_has_no_witness() {
        let k = build_two_sided(&TwoSidedParams::reference())
            .lazify(0.5)
            .unwrap();
        let r = oscillation_probe(&k, 0, &[50]).unwrap();
        assert!(r.witness.is_none());
        assert_eq!(r.max_tv(), 0.0);
    }
}
