//! Substochastic nearest-neighbour kernels on the integers.
//!
//! A kernel is stored as a tiling of the integers by homogeneous regions plus a
//! finite table of per-site overrides. Killing is implicit: whatever mass a
//! site does not send up, down or keep is lost.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Site;

/// Tolerance used when checking that probabilities add up.
pub const PROB_TOL: f64 = 1e-12;

/// One-step law at a site: probabilities of moving up, staying, moving down.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLaw {
    pub up: f64,
    pub stay: f64,
    pub down: f64,
}

impl StepLaw {
    pub const fn new(up: f64, stay: f64, down: f64) -> Self {
        Self { up, stay, down }
    }

    /// Probability of surviving one step.
    pub fn total(&self) -> f64 {
        self.up + self.stay + self.down
    }

    /// Probability of being killed on this step.
    pub fn kill(&self) -> f64 {
        1.0 - self.total()
    }

    /// `r I + (1 - r) K` applied to a single row.
    pub fn lazify(&self, r: f64) -> StepLaw {
        StepLaw {
            up: (1.0 - r) * self.up,
            stay: r + (1.0 - r) * self.stay,
            down: (1.0 - r) * self.down,
        }
    }

    /// Row of the mirrored kernel `K'(x, y) = K(-x, -y)`.
    pub fn mirrored(&self) -> StepLaw {
        StepLaw::new(self.down, self.stay, self.up)
    }
}

/// Anything that can report a nearest-neighbour step law at every site.
pub trait StepKernel: Send + Sync {
    fn law(&self, x: Site) -> StepLaw;

    /// Value of `K(x, y)`; zero unless `|x - y| <= 1`.
    fn entry(&self, x: Site, y: Site) -> f64 {
        let l = self.law(x);
        match y - x {
            1 => l.up,
            0 => l.stay,
            -1 => l.down,
            _ => 0.0,
        }
    }
}

impl<K: StepKernel + ?Sized> StepKernel for &K {
    fn law(&self, x: Site) -> StepLaw {
        (**self).law(x)
    }
}

impl<K: StepKernel + ?Sized> StepKernel for std::sync::Arc<K> {
    fn law(&self, x: Site) -> StepLaw {
        (**self).law(x)
    }
}

/// A finite interval of sites, both ends inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub lo: Site,
    pub hi: Site,
}

impl Window {
    pub fn new(lo: Site, hi: Site) -> Result<Self> {
        if lo > hi {
            return Err(Error::Coverage(format!("empty window [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn point(x: Site) -> Self {
        Self { lo: x, hi: x }
    }

    /// Symmetric window `[-m, m]`.
    pub fn centered(m: Site) -> Self {
        Self {
            lo: -m.abs(),
            hi: m.abs(),
        }
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, x: Site) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn index(&self, x: Site) -> Option<usize> {
        self.contains(x).then(|| (x - self.lo) as usize)
    }

    pub fn sites(&self) -> impl Iterator<Item = Site> + Clone {
        self.lo..=self.hi
    }

    /// Intersection with `outer` (collapses to a boundary point if disjoint).
    pub fn clamp_to(&self, outer: Window) -> Window {
        let lo = self.lo.clamp(outer.lo, outer.hi);
        let hi = self.hi.clamp(outer.lo, outer.hi);
        Window { lo, hi }
    }

    pub fn grow(&self, k: Site) -> Window {
        Window {
            lo: self.lo - k,
            hi: self.hi + k,
        }
    }
}

/// A maximal run of sites sharing one step law. `None` ends are unbounded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub from: Option<Site>,
    pub to: Option<Site>,
    pub law: StepLaw,
}

impl Region {
    pub fn new(from: Option<Site>, to: Option<Site>, law: StepLaw) -> Self {
        Self { from, to, law }
    }

    pub fn contains(&self, x: Site) -> bool {
        self.from.is_none_or(|f| f <= x) && self.to.is_none_or(|t| x <= t)
    }

    fn label(&self) -> String {
        let lo = self.from.map_or("-inf".to_string(), |f| f.to_string());
        let hi = self.to.map_or("+inf".to_string(), |t| t.to_string());
        format!("[{lo}, {hi}]")
    }
}

/// Where an invariant violation was found.
#[derive(Clone, Debug, PartialEq)]
pub enum Location {
    Site(Site),
    Region(String),
}

/// A broken kernel invariant. Violations are data: `validate` collects them.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    ZeroUp(Location),
    ZeroDown(Location),
    NegativeKill(Location, f64),
    OutOfRange(Location, &'static str, f64),
    NoKilling,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn sub(loc: &Location, sym: &str) -> String {
            match loc {
                Location::Site(x) => format!("{sym}_{x}"),
                Location::Region(r) => format!("{sym} on region {r}"),
            }
        }
        match self {
            Violation::ZeroUp(l) => write!(f, "{}=0 breaks irreducibility", sub(l, "p")),
            Violation::ZeroDown(l) => write!(f, "{}=0 breaks irreducibility", sub(l, "q")),
            Violation::NegativeKill(l, k) => {
                write!(f, "{}={k:e} < 0: row sum exceeds one", sub(l, "k"))
            }
            Violation::OutOfRange(l, name, v) => {
                write!(f, "{}={v} is not a probability", sub(l, name))
            }
            Violation::NoKilling => write!(f, "no killing anywhere: kernel is stochastic"),
        }
    }
}

fn check_law(law: &StepLaw, loc: Location, out: &mut Vec<Violation>) {
    for (name, v) in [("p", law.up), ("r", law.stay), ("q", law.down)] {
        if !(0.0..=1.0).contains(&v) || v.is_nan() {
            out.push(Violation::OutOfRange(loc.clone(), name, v));
        }
    }
    if law.up <= 0.0 {
        out.push(Violation::ZeroUp(loc.clone()));
    }
    if law.down <= 0.0 {
        out.push(Violation::ZeroDown(loc.clone()));
    }
    let k = law.kill();
    if k < -PROB_TOL {
        out.push(Violation::NegativeKill(loc, k));
    }
}

/// Sites (or unbounded stretches) where the kernel kills mass.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KillSupport {
    /// Individual killing sites, including every site of bounded killing regions.
    pub sites: Vec<Site>,
    /// True when some unbounded region kills at every one of its sites.
    pub unbounded: bool,
}

impl KillSupport {
    pub fn single_site(&self) -> Option<Site> {
        (!self.unbounded && self.sites.len() == 1).then(|| self.sites[0])
    }
}

/// Substochastic nearest-neighbour kernel on the integers.
#[derive(Clone, Debug, PartialEq)]
pub struct NNKernel {
    regions: Vec<Region>,
    overrides: BTreeMap<Site, StepLaw>,
}

impl NNKernel {
    /// Builds a kernel from regions that tile the integers and site overrides.
    pub fn new(
        mut regions: Vec<Region>,
        overrides: impl IntoIterator<Item = (Site, StepLaw)>,
    ) -> Result<Self> {
        if regions.is_empty() {
            return Err(Error::Coverage("no regions".into()));
        }
        regions.sort_by_key(|r| r.from.unwrap_or(Site::MIN));
        if regions[0].from.is_some() {
            return Err(Error::Coverage(format!(
                "sites below {} are not covered",
                regions[0].label()
            )));
        }
        if regions[regions.len() - 1].to.is_some() {
            return Err(Error::Coverage(format!(
                "sites above {} are not covered",
                regions[regions.len() - 1].label()
            )));
        }
        for r in &regions {
            if let (Some(f), Some(t)) = (r.from, r.to) {
                if f > t {
                    return Err(Error::Coverage(format!("region {} is empty", r.label())));
                }
            }
        }
        for pair in regions.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            match (a.to, b.from) {
                (Some(t), Some(f)) if f == t + 1 => {}
                (Some(t), Some(f)) if f <= t => {
                    return Err(Error::Coverage(format!(
                        "regions {} and {} overlap",
                        a.label(),
                        b.label()
                    )))
                }
                _ => {
                    return Err(Error::Coverage(format!(
                        "gap between regions {} and {}",
                        a.label(),
                        b.label()
                    )))
                }
            }
        }
        Ok(Self {
            regions,
            overrides: overrides.into_iter().collect(),
        })
    }

    /// Kernel with the same law at every site.
    pub fn homogeneous(law: StepLaw) -> Self {
        Self {
            regions: vec![Region::new(None, None, law)],
            overrides: BTreeMap::new(),
        }
    }

    pub fn with_override(mut self, site: Site, law: StepLaw) -> Self {
        self.overrides.insert(site, law);
        self
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn overrides(&self) -> &BTreeMap<Site, StepLaw> {
        &self.overrides
    }

    fn region_of(&self, x: Site) -> &Region {
        // regions are sorted and tile Z, so the last region starting at or before x holds it
        let idx = self
            .regions
            .partition_point(|r| r.from.is_none_or(|f| f <= x));
        &self.regions[idx.saturating_sub(1)]
    }

    /// Every step law that appears somewhere in the kernel.
    pub fn laws(&self) -> impl Iterator<Item = &StepLaw> {
        self.regions
            .iter()
            .map(|r| &r.law)
            .chain(self.overrides.values())
    }

    /// 2 when no site can hold (the chain alternates parity), else 1.
    pub fn period(&self) -> usize {
        if self.laws().all(|l| l.stay == 0.0) {
            2
        } else {
            1
        }
    }

    /// Smallest holding probability over all sites.
    pub fn min_stay(&self) -> f64 {
        self.laws().map(|l| l.stay).fold(f64::INFINITY, f64::min)
    }

    /// Checks every invariant: sites of `window` individually, regions globally.
    pub fn validate(&self, window: Window) -> Vec<Violation> {
        let mut out = Vec::new();
        for r in &self.regions {
            check_law(&r.law, Location::Region(r.label()), &mut out);
        }
        for x in window.sites() {
            if let Some(law) = self.overrides.get(&x) {
                check_law(law, Location::Site(x), &mut out);
            }
        }
        if !self.laws().any(|l| l.kill() > PROB_TOL) {
            out.push(Violation::NoKilling);
        }
        out
    }

    /// Where killing happens.
    pub fn kill_support(&self) -> KillSupport {
        let mut sites = BTreeSet::new();
        let mut unbounded = false;
        for r in &self.regions {
            if r.law.kill() > PROB_TOL {
                match (r.from, r.to) {
                    (Some(f), Some(t)) => {
                        sites.extend((f..=t).filter(|x| !self.overrides.contains_key(x)))
                    }
                    _ => unbounded = true,
                }
            }
        }
        for (&x, law) in &self.overrides {
            if law.kill() > PROB_TOL {
                sites.insert(x);
            } else {
                sites.remove(&x);
            }
        }
        KillSupport {
            sites: sites.into_iter().collect(),
            unbounded,
        }
    }

    /// Sites adjacent to a change of law; outside these the kernel is locally homogeneous.
    pub fn breakpoints(&self) -> BTreeSet<Site> {
        let mut pts = BTreeSet::new();
        for r in &self.regions {
            if let Some(f) = r.from {
                pts.insert(f);
            }
            if let Some(t) = r.to {
                pts.insert(t);
            }
        }
        pts.extend(self.overrides.keys().copied());
        pts
    }

    /// `K_r = r I + (1 - r) K`.
    pub fn lazify(&self, r: f64) -> Result<NNKernel> {
        if !(0.0..1.0).contains(&r) {
            return Err(Error::OutOfRange {
                name: "r",
                value: r,
                range: "[0, 1)",
            });
        }
        if r == 0.0 {
            return Ok(self.clone());
        }
        Ok(NNKernel {
            regions: self
                .regions
                .iter()
                .map(|reg| Region::new(reg.from, reg.to, reg.law.lazify(r)))
                .collect(),
            overrides: self
                .overrides
                .iter()
                .map(|(&x, l)| (x, l.lazify(r)))
                .collect(),
        })
    }

    /// Kernel of `x -> -x` conjugation: `K'(x, y) = K(-x, -y)`.
    pub fn mirrored(&self) -> NNKernel {
        let regions = self
            .regions
            .iter()
            .map(|r| Region::new(r.to.map(|t| -t), r.from.map(|f| -f), r.law.mirrored()))
            .collect();
        NNKernel::new(
            regions,
            self.overrides.iter().map(|(&x, l)| (-x, l.mirrored())),
        )
        .expect("mirror of a tiling is a tiling")
    }

    /// Two-step kernel on the even sites, relabelled `2m -> m`.
    ///
    /// Only defined for period-2 kernels (`r_x = 0` everywhere), where the
    /// two-step chain started on an even site never leaves the even class.
    pub fn square_even(&self) -> Result<NNKernel> {
        for r in &self.regions {
            if r.law.stay != 0.0 {
                return Err(Error::NotPeriodic(r.from.or(r.to).unwrap_or(0)));
            }
        }
        if let Some((&x, _)) = self.overrides.iter().find(|(_, l)| l.stay != 0.0) {
            return Err(Error::NotPeriodic(x));
        }
        let two_step = |x: Site| -> StepLaw {
            let (l, c, u) = (self.law(x - 1), self.law(x), self.law(x + 1));
            StepLaw::new(c.up * u.up, c.up * u.down + c.down * l.up, c.down * l.down)
        };
        let squared =
            |l: &StepLaw| StepLaw::new(l.up * l.up, l.up * l.down + l.down * l.up, l.down * l.down);

        let ceil_half = |f: Site| -((-f).div_euclid(2));
        let mut regions = Vec::new();
        for r in &self.regions {
            let from = r.from.map(ceil_half);
            let to = r.to.map(|t| t.div_euclid(2));
            if let (Some(f), Some(t)) = (from, to) {
                if f > t {
                    continue;
                }
            }
            regions.push(Region::new(from, to, squared(&r.law)));
        }
        // merge-free tiling: consecutive retained regions are adjacent in the relabelled line
        let mut overrides = BTreeMap::new();
        let candidates: BTreeSet<Site> = self
            .breakpoints()
            .iter()
            .flat_map(|&b| [b - 1, b, b + 1])
            .filter(|x| x.rem_euclid(2) == 0)
            .collect();
        let base = NNKernel::new(regions.clone(), std::iter::empty())?;
        for x in candidates {
            let law = two_step(x);
            if base.law(x / 2) != law {
                overrides.insert(x / 2, law);
            }
        }
        NNKernel::new(regions, overrides)
    }
}

impl StepKernel for NNKernel {
    fn law(&self, x: Site) -> StepLaw {
        if let Some(l) = self.overrides.get(&x) {
            return *l;
        }
        self.region_of(x).law
    }
}

/// Compensated (Neumaier) summation.
pub(crate) fn stable_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Conditioned law `K^n(x, .) / K^n(x, S)` on a finite window, with the
/// accumulated log of the surviving mass `K^n(x, S)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MassState {
    window: Window,
    values: Vec<f64>,
    log_mass: f64,
}

impl MassState {
    /// Point mass at `x`, surviving mass one.
    pub fn point(x: Site) -> Self {
        Self {
            window: Window::point(x),
            values: vec![1.0],
            log_mass: 0.0,
        }
    }

    /// Builds a state from nonnegative weights; they are renormalized and the
    /// log of their total is added to `log_mass`.
    pub fn from_weights(window: Window, weights: Vec<f64>, log_mass: f64) -> Result<Self> {
        if weights.len() != window.len() {
            return Err(Error::Mismatch(format!(
                "{} weights for a window of {} sites",
                weights.len(),
                window.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Mismatch("negative or NaN weight".into()));
        }
        let total = stable_sum(weights.iter().copied());
        if total <= 0.0 {
            return Err(Error::Extinct { step: 0 });
        }
        Ok(Self {
            window,
            values: weights.into_iter().map(|w| w / total).collect(),
            log_mass: log_mass + total.ln(),
        })
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

    /// Conditioned probability at `x` (zero outside the window).
    pub fn prob(&self, x: Site) -> f64 {
        self.window.index(x).map_or(0.0, |i| self.values[i])
    }

    /// Unconditioned mass `K^n(x0, x)`.
    pub fn mass(&self, x: Site) -> f64 {
        self.prob(x) * self.log_mass.exp()
    }

    /// `ln K^n(x0, x)`, `-inf` where the mass is zero.
    pub fn log_mass_at(&self, x: Site) -> f64 {
        self.prob(x).ln() + self.log_mass
    }

    pub fn iter(&self) -> impl Iterator<Item = (Site, f64)> + '_ {
        self.window.sites().zip(self.values.iter().copied())
    }

    /// Conditioned mass outside `[lo, hi]`.
    pub fn mass_outside(&self, lo: Site, hi: Site) -> f64 {
        stable_sum(
            self.iter()
                .filter(|(x, _)| *x < lo || *x > hi)
                .map(|(_, v)| v),
        )
    }

    pub(crate) fn from_parts(window: Window, values: Vec<f64>, log_mass: f64) -> Self {
        Self {
            window,
            values,
            log_mass,
        }
    }
}

/// One application of `K` followed by renormalization.
///
/// Returns the new state (window grown by one site per side) and the survival
/// factor `K^{n+1}(x, S) / K^n(x, S)`.
pub fn kernel_step<K: StepKernel + ?Sized>(
    kernel: &K,
    state: &MassState,
) -> Result<(MassState, f64)> {
    let w = state.window.grow(1);
    let mut next = vec![0.0; w.len()];
    for (i, (x, v)) in state.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let l = kernel.law(x);
        // x sits at index i + 1 of the grown window
        next[i] += v * l.down;
        next[i + 1] += v * l.stay;
        next[i + 2] += v * l.up;
    }
    let factor = stable_sum(next.iter().copied());
    if !(factor > 0.0) {
        return Err(Error::Extinct { step: 1 });
    }
    for v in &mut next {
        *v /= factor;
    }
    Ok((
        MassState::from_parts(w, next, state.log_mass + factor.ln()),
        factor,
    ))
}
