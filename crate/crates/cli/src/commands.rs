//! One function per subcommand. Each writes its artifacts into the output
//! directory and returns a JSON summary that is also printed to stdout.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use yaglom::conditions::{check_conditions, Budgets, ScenarioHints};
use yaglom::evolve::{evolve_trace, ColumnEvolution, Evolution};
use yaglom::export::{self, Header};
use yaglom::measures::{
    detailed_balance_residual, extremal_minus, extremal_plus, family_measure, invariance_residual,
    reversibility_gamma, stochastic_order_gap, LogFn, Scale, TabulatedMeasure,
};
use yaglom::montecarlo::{
    absorption_times, chi_square, one_step_counts, orey_trace, r_zeta_estimate, simulate_absorbed,
    sparse_grid, survival_estimate, CHI2_CRIT_1E3,
};
use yaglom::scenarios::{default_kesten_grid, oscillation_probe};
use yaglom::spectral::{
    estimate_rho, estimate_rho_periodic, green_partial, onekill_identity, GreenTarget,
    MIN_RHO_STEPS,
};
use yaglom::transforms::{
    estimate_hhat, hitting_split, mixture_limit, shared, symmetric_hhat, two_sided_hhat,
    BoundaryWeights, ReversedKernel, SharedMeasure, TransformedKernel, HORIZON_START,
};
use yaglom::{Site, StepKernel, Window};

use crate::config::{build_scenario, Config, Family, Scenario};
use crate::fail::CliError;

type Out = Result<Value, CliError>;

/// Threshold on the final TV distance reported by `yaglom`.
pub const TV_THRESHOLD: f64 = 1e-2;

pub struct Ctx {
    pub config: Config,
    pub scenario: Scenario,
    out: PathBuf,
    header: Header,
}

impl Ctx {
    pub fn new(config: Config) -> Result<Self, CliError> {
        let scenario = build_scenario(&config)?;
        let out = config.out_dir();
        std::fs::create_dir_all(&out)?;
        let header = Header::new(config.to_toml(), Some(config.seed()));
        Ok(Self {
            config,
            scenario,
            out,
            header,
        })
    }

    fn file(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        Ok(BufWriter::new(File::create(self.out.join(name))?))
    }

    /// Wraps `result` with the resolved config and seed and writes it to `name`.
    fn report<T: Serialize>(&self, name: &str, result: &T) -> Out {
        let v = json!({
            "config": self.config,
            "seed": self.config.seed(),
            "result": result,
        });
        serde_json::to_writer_pretty(self.file(name)?, &v)?;
        Ok(v)
    }

    fn kernel(&self) -> &yaglom::NNKernel {
        &self.scenario.kernel
    }
}

fn extremes(s: &Scenario, window: Window) -> Option<(TabulatedMeasure, TabulatedMeasure)> {
    match &s.family {
        Family::TwoSided(p) => Some((
            extremal_minus(p).tabulate(window, Scale::Probability),
            extremal_plus(p).tabulate(window, Scale::Probability),
        )),
        Family::Symmetric(sp) => Some((sp.pi_minus(window), sp.pi_plus(window))),
        _ => None,
    }
}

fn reference_hhat(s: &Scenario) -> Option<SharedMeasure> {
    match &s.family {
        Family::TwoSided(p) => Some(two_sided_hhat(p)),
        Family::Symmetric(sp) => Some(symmetric_hhat(sp)),
        _ => None,
    }
}

/// `rho`-invariant measure whose probability is `pi_{+inf}`.
fn plus_measure(s: &Scenario) -> Option<SharedMeasure> {
    match &s.family {
        Family::TwoSided(p) => Some(Arc::new(extremal_plus(p))),
        Family::Symmetric(sp) => {
            let sp = *sp;
            Some(shared(move |x| sp.log_mu_plus(x)))
        }
        _ => None,
    }
}

fn boundary_weights(
    s: &Scenario,
    x0: Site,
    cap: Site,
) -> Result<Option<BoundaryWeights>, CliError> {
    let (Some(h), Some(rho)) = (reference_hhat(s), s.closed_form_rho()) else {
        return Ok(None);
    };
    let tk = TransformedKernel::from_shared(Arc::new(s.kernel.clone()), h, 1.0 / rho);
    Ok(Some(hitting_split(&tk, x0, HORIZON_START, cap)?))
}

/// Closed-form Yaglom limit from `x0`, if the chain has one.
fn limit_reference(
    s: &Scenario,
    x0: Site,
    window: Window,
    cap: Site,
) -> Result<Option<(BoundaryWeights, TabulatedMeasure)>, CliError> {
    let Some((minus, plus)) = extremes(s, window) else {
        return Ok(None);
    };
    Ok(boundary_weights(s, x0, cap)?.map(|w| {
        let m = mixture_limit(&w, &minus, &plus);
        (w, m)
    }))
}

pub fn yaglom(ctx: &Ctx) -> Out {
    let (x0, n) = (ctx.config.x0(), ctx.config.n());
    let k = ctx.kernel();
    let trace = evolve_trace(k, x0, n, &ctx.config.tracked_sites())?;
    export::write_trace(ctx.file("trace.csv")?, &ctx.header, &trace)?;
    export::write_distribution(
        ctx.file("distribution.csv")?,
        &ctx.header,
        &trace.distribution,
    )?;
    let rho = if n >= MIN_RHO_STEPS {
        Some(estimate_rho(&trace)?)
    } else {
        None
    };
    let window = Window::point(x0).grow(n as Site);
    let reference = limit_reference(&ctx.scenario, x0, window, ctx.config.horizon_m())?;
    let mut final_tv = None;
    if let Some((_, limit)) = &reference {
        let mut ev = Evolution::new(k, x0);
        let mut rows = Vec::new();
        for i in 1..=20 {
            let target = (i * n / 20).max(1);
            if target <= ev.steps_taken() {
                continue;
            }
            ev.advance(target - ev.steps_taken())?;
            let tv = TabulatedMeasure::from(&ev.state()).total_variation(limit);
            rows.push([target.to_string(), tv.to_string()]);
            final_tv = Some(tv);
        }
        export::write_rows(
            ctx.file("convergence.csv")?,
            &ctx.header,
            &["n", "tv_to_limit"],
            rows,
        )?;
    }
    let tracked: Vec<Value> = trace
        .tracked
        .iter()
        .map(|t| json!({"site": t.site, "last_ratio": t.last_ratio()}))
        .collect();
    ctx.report(
        "yaglom.json",
        &json!({
            "start": x0,
            "steps": n,
            "rho": rho,
            "closed_form_rho": ctx.scenario.closed_form_rho(),
            "tracked": tracked,
            "weights": reference.as_ref().map(|r| r.0),
            "final_tv": final_tv,
            "tv_threshold": TV_THRESHOLD,
            "below_threshold": final_tv.map(|t| t < TV_THRESHOLD),
            "clipped_mass": trace.clipped_mass,
        }),
    )
}

pub fn spectral(ctx: &Ctx) -> Out {
    let k = ctx.kernel();
    let period = k.period();
    let (x0, n) = (ctx.config.x0(), ctx.config.n().max(MIN_RHO_STEPS * period));
    let trace = evolve_trace(k, x0, n, &[])?;
    let est = estimate_rho_periodic(&trace, period)?;
    let cf = ctx.scenario.closed_form_rho();
    let rho = cf.or(est.converged().then_some(est.rho_hat));
    let mut out = json!({
        "estimate": est,
        "period": period,
        "closed_form_rho": cf,
        "estimate_gap": cf.map(|r| (r - est.rho_hat).abs()),
    });
    if let Some(rho) = rho.filter(|r| *r < 1.0) {
        let r = 1.0 / rho;
        let g = green_partial(k, x0, GreenTarget::Survival, r, ctx.config.n_max())?;
        out["green"] = json!({
            "radius": r,
            "partial_sum": g.partial_sum,
            "tail_estimate": g.tail_estimate,
            "heuristic_tail": g.heuristic,
            "e_r_zeta": 1.0 + (r - 1.0) * g.total(),
        });
        if let Some(site) = k.kill_support().single_site() {
            let kappa = k.law(site).kill();
            let c = onekill_identity(k, x0, site, kappa, r, ctx.config.n_max())?;
            out["onekill"] = json!({"lhs": c.lhs, "rhs": c.rhs, "relative_gap": c.relative_gap()});
        }
    }
    if let Family::TwoSided(p) = &ctx.scenario.family {
        let (t0, t1) = p.quadratic_roots();
        out["closed_forms"] = json!({
            "rho": p.rho(), "radius": p.radius(), "kappa": p.kappa(), "t0": t0, "t1": t1,
            "c1": p.c1(), "v": p.v(), "e0_r_zeta": p.e0_r_zeta(), "e_x0_r_zeta": p.e_z_r_zeta(x0),
        });
        if ctx.scenario.lazify == 0.0 {
            let half = ctx.config.n() as u64;
            let mut col = ColumnEvolution::new(k, 0);
            col.advance(2 * half as usize)?;
            out["return_asymptotics"] = json!({
                "n": half,
                "k2n00_over_asymptotic": (col.log_value(0) - p.log_k2n00_asymptotic(half)).exp(),
                "k2n_m2_over_k2n00": col.ratio(-2, 0),
                "t0_squared": t0 * t0,
            });
        }
    }
    let v = ctx.report("spectral.json", &out)?;
    if !est.converged() {
        return Err(CliError::Budget(format!(
            "survival factors did not settle within {n} steps"
        )));
    }
    Ok(v)
}

pub fn invariant(ctx: &Ctx) -> Out {
    let k = ctx.kernel();
    let rho = ctx.scenario.closed_form_rho();
    let (Some(rho), Some((minus, plus))) = (rho, extremes(&ctx.scenario, Window::centered(400)))
    else {
        return Err(CliError::Validation(
            "closed-form invariant measures exist for the two_sided and symmetric presets".into(),
        ));
    };
    let residual_window = Window::centered(60);
    let table = Window::centered(100);
    let order = stochastic_order_gap(&plus, &minus, table);
    let write_pair = |name: &str, m: &TabulatedMeasure| -> Result<(), CliError> {
        let rows = table.sites().map(|x| {
            [
                x.to_string(),
                m.get(x).to_string(),
                (m.get(x) / m.total()).to_string(),
            ]
        });
        export::write_rows(
            ctx.file(name)?,
            &ctx.header,
            &["site", "raw", "probability"],
            rows,
        )?;
        Ok(())
    };
    write_pair("measure_plus.csv", &plus)?;
    write_pair("measure_minus.csv", &minus)?;
    let out = match &ctx.scenario.family {
        Family::TwoSided(p) => {
            let c1 = p.c1();
            let family: Vec<(f64, f64, f64, f64)> = (0..20)
                .into_par_iter()
                .map(|i| {
                    let c = c1 * i as f64 / 19.0;
                    let m = family_measure(p, c).expect("grid stays in [0, c1]");
                    (
                        c,
                        m.d0,
                        m.normalizer(),
                        invariance_residual(k, &m, rho, residual_window),
                    )
                })
                .collect();
            let rows = family
                .iter()
                .map(|(c, d0, t, r)| [c.to_string(), d0.to_string(), t.to_string(), r.to_string()]);
            export::write_rows(
                ctx.file("family.csv")?,
                &ctx.header,
                &["c", "d0", "T", "residual"],
                rows,
            )?;
            json!({
                "rho": rho,
                "max_family_residual": family.iter().map(|f| f.3).fold(0.0, f64::max),
                "pi_plus_0": 1.0 / extremal_plus(p).normalizer(),
                "one_minus_rho_over_kappa": (1.0 - p.rho()) / p.kappa(),
                "detailed_balance_residual": detailed_balance_residual(k, &reversibility_gamma(p), residual_window),
                "order_gap": order,
            })
        }
        Family::Symmetric(s) => {
            let s = *s;
            let res =
                |f: &dyn Fn(Site) -> f64| invariance_residual(k, &LogFn(f), rho, residual_window);
            json!({
                "rho": rho,
                "residual_plus": res(&|x| s.log_mu_plus(x)),
                "residual_minus": res(&|x| s.log_mu_minus(x)),
                "detailed_balance_residual": detailed_balance_residual(k, &LogFn(|x| s.log_gamma(x)), residual_window),
                "order_gap": order,
            })
        }
        _ => unreachable!("extremes exist only for the closed-form families"),
    };
    ctx.report("invariant.json", &out)
}

pub fn transform(ctx: &Ctx) -> Out {
    let x0 = ctx.config.x0();
    let k = ctx.kernel();
    let sites: Vec<Site> = (x0 - 3..=x0 + 3).collect();
    let table = estimate_hhat(k, x0, &sites, ctx.config.n_max())?;
    export::write_hhat(ctx.file("hhat.csv")?, &ctx.header, &table)?;
    let gap = reference_hhat(&ctx.scenario).map(|h| {
        let h0 = h.log_value(x0);
        table
            .entries
            .iter()
            .map(|e| (e.limit / (h.log_value(e.site) - h0).exp() - 1.0).abs())
            .fold(0.0, f64::max)
    });
    let window = Window::centered(x0.abs() + 400);
    let reference = limit_reference(&ctx.scenario, x0, window, ctx.config.horizon_m())?;
    if let Some((_, m)) = &reference {
        export::write_tabulated(ctx.file("mixture.csv")?, &ctx.header, m)?;
    }
    let v = ctx.report(
        "transform.json",
        &json!({
            "hhat": table,
            "max_relative_gap_to_closed_form": gap,
            "weights": reference.as_ref().map(|r| r.0),
        }),
    )?;
    if !table.all_converged() {
        return Err(CliError::Budget(format!(
            "ratio limits did not settle within n_max = {}",
            table.n_max
        )));
    }
    Ok(v)
}

pub fn simulate(ctx: &Ctx) -> Out {
    let c = &ctx.config;
    let (x0, n, seed, paths) = (c.x0(), c.n(), c.seed(), c.mc_paths());
    let k = ctx.kernel();
    let times = absorption_times(k, x0, n, seed, paths);
    let mut ladder: Vec<usize> = [1, 2, 5, 10, 20, 50, 100, 200, 500, 1000]
        .into_iter()
        .filter(|&m| m < n)
        .collect();
    ladder.push(n);
    let mut ev = Evolution::new(k, x0);
    let mut survival = Vec::new();
    for &m in &ladder {
        ev.advance(m - ev.steps_taken())?;
        let exact = ev.log_mass().exp();
        let est = survival_estimate(&times, m);
        survival.push(
            json!({"n": m, "estimate": est, "deterministic": exact, "z": est.z_score(exact)}),
        );
    }
    let mut out = json!({ "survival": survival });
    if let Some(rho) = ctx.scenario.closed_form_rho() {
        let rz = r_zeta_estimate(
            k,
            x0,
            1.0 / rho,
            seed,
            paths,
            n.max(1),
            c.horizon_m().max(1) as usize,
        );
        let closed = match &ctx.scenario.family {
            Family::TwoSided(p) => Some(p.e_z_r_zeta(x0)),
            _ => None,
        };
        out["r_zeta"] = json!({
            "estimate": rz,
            "closed_form": closed,
            "z": closed.map(|v| rz.estimate.z_score(v)),
            "note": "R^zeta has infinite variance at R-transience; the standard error is not reliable",
        });
    }
    let samples: Vec<_> = (0..10u64)
        .map(|i| simulate_absorbed(k, x0, n.max(1), seed.wrapping_add(i)))
        .collect::<Result<_, _>>()?;
    export::write_paths(ctx.file("paths.csv")?, &ctx.header, &samples)?;
    let law = k.law(x0);
    let counts = one_step_counts(k, x0, paths.min(100_000), seed);
    let (stat, dof) = chi_square(&counts, &[law.down, law.stay, law.up, law.kill()]);
    out["one_step"] = json!({
        "counts": counts, "chi_square": stat, "dof": dof,
        "critical_1e-3": dof.checked_sub(1).and_then(|i| CHI2_CRIT_1E3.get(i)),
    });
    if let (Some(mu), Some(rho), Some((_, plus))) = (
        plus_measure(&ctx.scenario),
        ctx.scenario.closed_form_rho(),
        extremes(&ctx.scenario, Window::centered(200)),
    ) {
        let rk = ReversedKernel::from_shared(Arc::new(k.clone()), mu, rho);
        let grid = sparse_grid(n.clamp(16, 2000));
        let trace = orey_trace(&rk, &plus, &grid, seed, &c.tracked_sites(), c.horizon_m())?;
        export::write_orey(ctx.file("orey.csv")?, &ctx.header, &trace)?;
        out["orey"] = json!({
            "grid": grid,
            "sites": trace.points.iter().map(|p| p.site).collect::<Vec<_>>(),
            "truncation_mass": trace.truncation_mass,
        });
    }
    ctx.report("simulate.json", &out)
}

pub fn conditions(ctx: &Ctx) -> Out {
    let hints = match &ctx.scenario.family {
        Family::TwoSided(p) => ScenarioHints::two_sided(*p),
        Family::Symmetric(s) => {
            let s = *s;
            ScenarioHints {
                x0: Some(0),
                two_sided: None,
                h_plus: Some(shared(move |x| s.log_h_plus(x))),
            }
        }
        _ => ScenarioHints::default(),
    };
    let budgets = Budgets {
        n_rho: ctx.config.n(),
        n_green: ctx.config.n(),
        n_hhat: ctx.config.n_max(),
        ..Budgets::default()
    };
    let report = check_conditions(ctx.kernel(), &hints, &budgets);
    ctx.report("conditions.json", &report)
}

pub fn kesten(ctx: &Ctx) -> Out {
    let x0 = ctx.config.x0();
    let grid = default_kesten_grid();
    let probe = oscillation_probe(ctx.kernel(), x0, &grid)?;
    let rows = grid.iter().enumerate().flat_map(|(i, ni)| {
        let probe = &probe;
        grid.iter()
            .enumerate()
            .map(move |(j, nj)| [ni.to_string(), nj.to_string(), probe.tv[i][j].to_string()])
    });
    export::write_rows(
        ctx.file("kesten_tv.csv")?,
        &ctx.header,
        &["n_i", "n_j", "tv"],
        rows,
    )?;
    let n_max = *grid.last().expect("grid is not empty");
    let rho = estimate_rho(&evolve_trace(ctx.kernel(), x0, n_max, &[])?)?;
    ctx.report(
        "kesten.json",
        &json!({
            "probe": probe,
            "max_tv": probe.max_tv(),
            "rho": rho,
            "rho_converged": rho.converged(),
        }),
    )
}
