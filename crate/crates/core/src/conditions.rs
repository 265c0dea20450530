//! Executable checks of the hypotheses behind the Yaglom limit theorems.
//!
//! Each check returns a verdict with the numbers it was based on. Structural
//! facts (nearest-neighbour moves, a finite kill set) are certified directly;
//! limits are judged from finite budgets, so an inconclusive run yields
//! [`Verdict::EvidenceOnly`] rather than an error.

use serde::Serialize;

use crate::chain::{NNKernel, StepKernel};
use crate::evolve::{evolve_trace, Evolution};
use crate::spectral::{
    estimate_rho_periodic, green_partial, GreenTarget, TwoSidedParams, MIN_RHO_STEPS,
};
use crate::transforms::{estimate_hhat, two_sided_hhat, SharedMeasure};
use crate::Site;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Holds,
    Fails,
    EvidenceOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evidence {
    pub name: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionVerdict {
    pub id: u8,
    pub verdict: Verdict,
    pub note: String,
    pub evidence: Vec<Evidence>,
}

impl ConditionVerdict {
    fn new(id: u8, verdict: Verdict, note: impl Into<String>) -> Self {
        Self {
            id,
            verdict,
            note: note.into(),
            evidence: Vec::new(),
        }
    }

    fn with(mut self, name: impl Into<String>, value: f64) -> Self {
        self.evidence.push(Evidence {
            name: name.into(),
            value,
        });
        self
    }
}

/// Computation budgets of [`check_conditions`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Budgets {
    /// Steps used to estimate `rho`.
    pub n_rho: usize,
    /// Terms of each Green partial sum.
    pub n_green: usize,
    /// Steps of the ratio evolution behind `h^`.
    pub n_hhat: usize,
    /// Starting points at which `E_z R^zeta` is evaluated.
    pub probes: Vec<Site>,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            n_rho: 2000,
            n_green: 2000,
            n_hhat: 3000,
            probes: vec![-20, 0, 20],
        }
    }
}

/// What is known about the kernel beyond its transition probabilities.
#[derive(Clone, Default)]
pub struct ScenarioHints {
    /// Reference site for ratio limits; defaults to the single killing site.
    pub x0: Option<Site>,
    /// Closed forms of the two-sided walk (unchanged by lazification).
    pub two_sided: Option<TwoSidedParams>,
    /// The extremal harmonic function `h_{+inf}`; implied by `two_sided`.
    pub h_plus: Option<SharedMeasure>,
}

impl ScenarioHints {
    pub fn two_sided(params: TwoSidedParams) -> Self {
        Self {
            x0: Some(0),
            two_sided: Some(params),
            h_plus: Some(two_sided_hhat(&params)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionReport {
    pub x0: Site,
    pub budgets: Budgets,
    pub conditions: Vec<ConditionVerdict>,
}

impl ConditionReport {
    pub fn get(&self, id: u8) -> Option<&ConditionVerdict> {
        self.conditions.iter().find(|c| c.id == id)
    }

    pub fn verdict(&self, id: u8) -> Option<Verdict> {
        self.get(id).map(|c| c.verdict)
    }

    pub fn all_hold(&self, ids: &[u8]) -> bool {
        ids.iter().all(|&i| self.verdict(i) == Some(Verdict::Holds))
    }
}

/// Sites with `h^` checked against `h_{+inf}`.
const HPLUS_OFFSETS: [Site; 7] = [-3, -2, -1, 0, 1, 2, 3];
/// Relative tolerance for `h^ = h_{+inf}`.
const HPLUS_TOL: f64 = 1e-2;

pub fn check_conditions(
    kernel: &NNKernel,
    hints: &ScenarioHints,
    budgets: &Budgets,
) -> ConditionReport {
    let support = kernel.kill_support();
    let x0 = hints.x0.or(support.single_site()).unwrap_or(0);
    let hhat = estimate_hhat(
        kernel,
        x0,
        &HPLUS_OFFSETS.map(|d| x0 + d),
        budgets.n_hhat.max(100),
    );
    let conditions = vec![
        aperiodicity(kernel, x0),
        radius_and_moment(kernel, x0, hints, budgets),
        escape(kernel, budgets),
        ConditionVerdict::new(
            4,
            Verdict::Holds,
            "structural: nearest-neighbour boundary is {-inf, +inf}",
        )
        .with("max_jump", 1.0),
        jacka_roberts(x0, &hhat, support.single_site().is_some()),
        single_kill(kernel),
        laziness(kernel),
        hhat_is_h_plus(x0, &hhat, hints),
    ];
    ConditionReport {
        x0,
        budgets: budgets.clone(),
        conditions,
    }
}

fn aperiodicity(kernel: &NNKernel, x0: Site) -> ConditionVerdict {
    let delta = kernel.min_stay();
    if delta > 0.0 {
        return ConditionVerdict::new(
            1,
            Verdict::Holds,
            "r_x >= delta > 0 gives K^k(x,x) >= delta^k from k0 = 1",
        )
        .with("delta", delta)
        .with("k0", 1.0);
    }
    let mut ev = Evolution::new(kernel, x0);
    let mut odd = Vec::new();
    for k in 1..=5 {
        if ev.step().is_err() {
            break;
        }
        if k % 2 == 1 {
            odd.push((k, ev.log_mass_at(x0).exp()));
        }
    }
    let bipartite = kernel.period() == 2;
    let mut v = if bipartite {
        ConditionVerdict::new(
            1,
            Verdict::Fails,
            "r_x = 0 everywhere: returns only at even times",
        )
    } else {
        ConditionVerdict::new(
            1,
            Verdict::EvidenceOnly,
            "some r_x = 0; sufficient criterion r_x >= delta not met",
        )
    };
    v = v.with("delta", delta);
    for (k, m) in odd {
        v = v.with(format!("K^{k}(x0,x0)"), m);
    }
    v
}

fn radius_and_moment(
    kernel: &NNKernel,
    x0: Site,
    hints: &ScenarioHints,
    budgets: &Budgets,
) -> ConditionVerdict {
    let d = kernel.period();
    let est = evolve_trace(kernel, x0, budgets.n_rho.max(MIN_RHO_STEPS * d), &[])
        .and_then(|t| estimate_rho_periodic(&t, d));
    let est = match est {
        Ok(e) => e,
        Err(e) => {
            return ConditionVerdict::new(
                2,
                Verdict::EvidenceOnly,
                format!("rho estimate failed: {e}"),
            )
            .with("n_rho", budgets.n_rho as f64)
        }
    };
    let base = |v: Verdict, note: String| {
        ConditionVerdict::new(2, v, note)
            .with("rho_hat", est.rho_hat)
            .with("rho_error_bound", est.error_bound)
            .with("R", est.radius())
    };
    if !est.converged() {
        return base(
            Verdict::EvidenceOnly,
            "survival factors did not settle".into(),
        )
        .with("half_gap", est.half_gap)
        .with("spread", est.spread);
    }
    if est.rho_hat + est.error_bound >= 1.0 {
        return base(Verdict::Fails, "R = 1".into());
    }
    let r = est.radius();
    let mut v = base(
        Verdict::Holds,
        format!(
            "E_z R^zeta = 1 + (R - 1) G_zS(R) sampled at z in {:?}",
            budgets.probes
        ),
    );
    for &z in &budgets.probes {
        match green_partial(kernel, z, GreenTarget::Survival, r, budgets.n_green) {
            Ok(g) => {
                let moment = 1.0 + (r - 1.0) * g.total();
                v = v
                    .with(format!("E_{z} R^zeta"), moment)
                    .with(format!("tail_share_{z}"), g.tail_estimate / g.total());
                if let Some(p) = hints.two_sided {
                    v = v.with(format!("E_{z} R^zeta (closed form)"), p.e_z_r_zeta(z));
                }
                if !moment.is_finite() || g.tail_estimate > g.partial_sum {
                    v.verdict = Verdict::EvidenceOnly;
                }
            }
            Err(e) => {
                v.verdict = Verdict::EvidenceOnly;
                v.note = format!("green sum at z = {z}: {e}");
                v = v.with(format!("E_{z} R^zeta"), f64::INFINITY);
            }
        }
    }
    v
}

fn escape(kernel: &NNKernel, budgets: &Budgets) -> ConditionVerdict {
    let s = kernel.kill_support();
    if s.unbounded {
        return ConditionVerdict::new(3, Verdict::EvidenceOnly, "killing on an unbounded region")
            .with("kill_sites_listed", s.sites.len() as f64);
    }
    let (lo, hi) = (s.sites[0], s.sites[s.sites.len() - 1]);
    let mut v = ConditionVerdict::new(
        3,
        Verdict::Holds,
        "structural: P_z(zeta <= m) = 0 once dist(z, kill set) > m",
    )
    .with("kill_set_lo", lo as f64)
    .with("kill_set_hi", hi as f64);
    for &z in &budgets.probes {
        let d = if z < lo {
            lo - z
        } else if z > hi {
            z - hi
        } else {
            0
        };
        v = v.with(format!("dist_{z}"), d as f64);
    }
    v
}

fn jacka_roberts(
    x0: Site,
    hhat: &crate::Result<crate::transforms::HhatTable>,
    single: bool,
) -> ConditionVerdict {
    let table = match hhat {
        Ok(t) => t,
        Err(e) => {
            return ConditionVerdict::new(
                5,
                Verdict::EvidenceOnly,
                format!("ratio evolution failed: {e}"),
            )
            .with("x0", x0 as f64)
        }
    };
    let side: Vec<_> = [x0 - 1, x0 + 1]
        .iter()
        .filter_map(|&x| table.get(x))
        .collect();
    let ok = side.iter().all(|e| e.converged);
    let (verdict, note) = match (ok, single) {
        (true, true) => (Verdict::Holds, "K^n(x0 +- 1, x0) / K^n(x0, x0) converge"),
        (true, false) => (
            Verdict::EvidenceOnly,
            "ratios converge but killing is not at a single site",
        ),
        (false, _) => (
            Verdict::EvidenceOnly,
            "ratios K^n(x0 +- 1, x0) / K^n(x0, x0) do not settle",
        ),
    };
    let mut v = ConditionVerdict::new(5, verdict, note).with("n", table.n_max as f64);
    for e in side {
        v = v
            .with(format!("hhat({})", e.site), e.limit)
            .with(format!("half_gap({})", e.site), e.half_gap)
            .with(format!("spread({})", e.site), e.spread);
    }
    v
}

fn single_kill(kernel: &NNKernel) -> ConditionVerdict {
    let s = kernel.kill_support();
    match s.single_site() {
        Some(x) => ConditionVerdict::new(6, Verdict::Holds, format!("kill set {{{x}}}"))
            .with("site", x as f64)
            .with("kappa", kernel.law(x).kill()),
        None => ConditionVerdict::new(
            6,
            Verdict::Fails,
            if s.unbounded {
                "killing on an unbounded region"
            } else {
                "several killing sites"
            },
        )
        .with("kill_sites", s.sites.len() as f64),
    }
}

fn laziness(kernel: &NNKernel) -> ConditionVerdict {
    let r = kernel.min_stay();
    let verdict = if r >= 0.5 {
        Verdict::Holds
    } else {
        Verdict::Fails
    };
    ConditionVerdict::new(7, verdict, "inf r_x over regions and overrides").with("inf_r", r)
}

fn hhat_is_h_plus(
    x0: Site,
    hhat: &crate::Result<crate::transforms::HhatTable>,
    hints: &ScenarioHints,
) -> ConditionVerdict {
    let (Ok(table), Some(h)) = (hhat, &hints.h_plus) else {
        let v = ConditionVerdict::new(8, Verdict::EvidenceOnly, "no reference h_{+inf} supplied");
        return match hhat {
            Ok(t) => t
                .entries
                .iter()
                .fold(v, |v, e| v.with(format!("hhat({})", e.site), e.limit)),
            Err(_) => v.with("x0", x0 as f64),
        };
    };
    let h0 = h.log_value(x0);
    let mut worst: f64 = 0.0;
    let mut v = ConditionVerdict::new(8, Verdict::Holds, "");
    for e in &table.entries {
        let reference = (h.log_value(e.site) - h0).exp();
        let rel = (e.limit / reference - 1.0).abs();
        worst = worst.max(if rel.is_nan() { f64::INFINITY } else { rel });
        v = v
            .with(format!("hhat({})", e.site), e.limit)
            .with(format!("h_plus({})", e.site), reference);
    }
    let converged = table.all_converged();
    v.verdict = match (converged, worst <= HPLUS_TOL) {
        (true, true) => Verdict::Holds,
        (true, false) => Verdict::Fails,
        (false, _) => Verdict::EvidenceOnly,
    };
    v.note = format!("max relative gap to h_{{+inf}} {worst:.2e} (tolerance {HPLUS_TOL:e})");
    v.with("max_relative_gap", worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::SymmetricParams;
    use crate::scenarios::{build_kesten, build_symmetric, build_two_sided, KestenSchedule};
    use crate::transforms::shared;

    #[test]
    fn lazy_two_sided_satisfies_everything() {
        let p = TwoSidedParams::reference();
        let k = build_two_sided(&p).lazify(0.5).unwrap();
        let rep = check_conditions(&k, &ScenarioHints::two_sided(p), &Budgets::default());
        for c in &rep.conditions {
            assert_eq!(c.verdict, Verdict::Holds, "{c:?}");
            assert!(!c.evidence.is_empty());
        }
        let c2 = rep.get(2).unwrap();
        let r = c2.evidence.iter().find(|e| e.name == "R").unwrap().value;
        assert!((r - 1.0 / 0.933_012_7).abs() < 1e-4);
    }

    #[test]
    fn periodic_two_sided_fails_laziness() {
        let k = build_two_sided(&TwoSidedParams::reference());
        let b = Budgets {
            n_rho: 300,
            n_green: 300,
            n_hhat: 300,
            ..Budgets::default()
        };
        let rep = check_conditions(&k, &ScenarioHints::default(), &b);
        assert_eq!(rep.verdict(7), Some(Verdict::Fails));
        assert_eq!(rep.verdict(1), Some(Verdict::Fails));
        let odd = rep
            .get(1)
            .unwrap()
            .evidence
            .iter()
            .find(|e| e.name == "K^3(x0,x0)")
            .unwrap();
        assert_eq!(odd.value, 0.0);
    }

    #[test]
    fn symmetric_hhat_is_not_h_plus() {
        let s = SymmetricParams::with_default_origin(0.25).unwrap();
        let k = build_symmetric(&s).lazify(0.5).unwrap();
        let hints = ScenarioHints {
            x0: Some(0),
            two_sided: None,
            h_plus: Some(shared(move |x| s.log_h_plus(x))),
        };
        let rep = check_conditions(&k, &hints, &Budgets::default());
        assert!(rep.all_hold(&[1, 3, 4, 5, 6, 7]), "{rep:#?}");
        assert_eq!(rep.verdict(8), Some(Verdict::Fails));
    }

    #[test]
    fn kesten_ratios_do_not_settle() {
        let k = build_kesten(&KestenSchedule::default()).unwrap();
        let rep = check_conditions(&k, &ScenarioHints::default(), &Budgets::default());
        assert_eq!(rep.verdict(5), Some(Verdict::EvidenceOnly));
        assert_eq!(rep.verdict(6), Some(Verdict::Holds));
    }
}
