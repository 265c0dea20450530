//! Run configuration: a TOML document, overridden field by field by flags.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use yaglom::measures::SymmetricParams;
use yaglom::scenarios::{
    build_alpha_walk, build_kesten, build_symmetric, build_two_sided, KestenSchedule,
};
use yaglom::spectral::TwoSidedParams;
use yaglom::{NNKernel, Region, Site, StepLaw, Window};

use crate::fail::CliError;

pub const PRESETS: [&str; 4] = ["two_sided", "symmetric", "kesten", "alpha_walk"];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub chain: ChainConfig,
    pub lazify: Option<f64>,
    pub square_even: Option<bool>,
    pub x0: Option<Site>,
    pub n: Option<usize>,
    pub tracked_sites: Option<Vec<Site>>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub budgets: BudgetConfig,
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub preset: Option<String>,
    /// Numeric parameters of the preset; missing ones take the preset defaults.
    pub params: Option<PresetParams>,
    /// Interval schedule of the `kesten` preset.
    pub schedule: Option<KestenSchedule>,
    pub regions: Option<Vec<RegionSpec>>,
    pub overrides: Option<Vec<OverrideSpec>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetParams {
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub alpha: Option<f64>,
    pub origin_up: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub from: Option<Site>,
    pub to: Option<Site>,
    pub p: f64,
    #[serde(default)]
    pub r: f64,
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverrideSpec {
    pub site: Site,
    pub p: f64,
    #[serde(default)]
    pub r: f64,
    pub q: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    pub n_max: Option<usize>,
    pub mc_paths: Option<usize>,
    #[serde(rename = "horizon_M")]
    pub horizon_m: Option<Site>,
}

/// Flags shared by every subcommand. Each one overrides the config field of the same name.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// TOML run configuration
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named chain: two_sided, symmetric, kesten or alpha_walk
    #[arg(long)]
    pub preset: Option<String>,
    /// Holding probability r of the lazified kernel rI + (1-r)K
    #[arg(long)]
    pub lazify: Option<f64>,
    /// Restrict the two-step kernel to even sites
    #[arg(long)]
    pub square_even: bool,
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<Site>,
    /// Number of steps
    #[arg(long)]
    pub n: Option<usize>,
    /// Sites whose ratio series are recorded, comma separated
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub tracked_sites: Option<Vec<Site>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long)]
    pub mc_paths: Option<usize>,
    /// Hitting horizon cap (and Monte Carlo continuation cap)
    #[arg(long = "horizon-m")]
    pub horizon_m: Option<Site>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Schema(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
    }

    /// Config file (if any) with the flags applied on top.
    pub fn resolve(flags: &Overrides) -> Result<Self, CliError> {
        let mut c = match &flags.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(p) = &flags.preset {
            c.chain.preset = Some(p.clone());
            c.chain.regions = None;
        }
        macro_rules! take {
            ($($f:ident => $dst:expr),*) => {$(if let Some(v) = flags.$f.clone() { $dst = Some(v); })*};
        }
        take!(lazify => c.lazify, x0 => c.x0, n => c.n, tracked_sites => c.tracked_sites,
              seed => c.seed, out_dir => c.out_dir, n_max => c.budgets.n_max,
              mc_paths => c.budgets.mc_paths, horizon_m => c.budgets.horizon_m);
        if flags.square_even {
            c.square_even = Some(true);
        }
        Ok(c)
    }

    /// Resolved config as TOML, embedded in every output file.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    pub fn x0(&self) -> Site {
        self.x0.unwrap_or(0)
    }

    pub fn n(&self) -> usize {
        self.n.unwrap_or(2000)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(42)
    }

    pub fn lazify(&self) -> f64 {
        self.lazify.unwrap_or(0.0)
    }

    pub fn n_max(&self) -> usize {
        self.budgets.n_max.unwrap_or(3000)
    }

    pub fn mc_paths(&self) -> usize {
        self.budgets.mc_paths.unwrap_or(100_000)
    }

    pub fn horizon_m(&self) -> Site {
        self.budgets.horizon_m.unwrap_or(4096)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn tracked_sites(&self) -> Vec<Site> {
        self.tracked_sites
            .clone()
            .unwrap_or_else(|| vec![self.x0() - 1, self.x0(), self.x0() + 1])
    }
}

/// Closed forms available for the resolved chain.
#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    TwoSided(TwoSidedParams),
    Symmetric(SymmetricParams),
    Kesten(KestenSchedule),
    AlphaWalk,
    Custom,
}

pub struct Scenario {
    pub kernel: NNKernel,
    pub family: Family,
    /// Holding probability added by lazification.
    pub lazify: f64,
}

impl Scenario {
    /// Spectral radius from a closed form, adjusted for lazification.
    pub fn closed_form_rho(&self) -> Option<f64> {
        let rho = match &self.family {
            Family::TwoSided(p) => p.rho(),
            Family::Symmetric(s) => s.rho(),
            _ => return None,
        };
        Some(self.lazify + (1.0 - self.lazify) * rho)
    }
}

fn check(name: &'static str, v: f64, ok: bool) -> Result<f64, CliError> {
    if ok {
        Ok(v)
    } else {
        Err(CliError::Validation(format!(
            "{name} = {v} is out of range"
        )))
    }
}

pub fn build_scenario(c: &Config) -> Result<Scenario, CliError> {
    let chain = &c.chain;
    let params = chain.params.clone().unwrap_or_default();
    let (mut kernel, mut family) = match (&chain.preset, &chain.regions) {
        (Some(_), Some(_)) => {
            return Err(CliError::Schema(
                "chain.preset and chain.regions are exclusive".into(),
            ))
        }
        (None, None) => {
            return Err(CliError::Schema(
                "chain needs a preset or a region list".into(),
            ))
        }
        (None, Some(regions)) => {
            let regions = regions
                .iter()
                .map(|r| Region::new(r.from, r.to, StepLaw::new(r.p, r.r, r.q)))
                .collect();
            (NNKernel::new(regions, [])?, Family::Custom)
        }
        (Some(name), None) => match name.as_str() {
            "two_sided" => {
                let d = TwoSidedParams::reference();
                let p = TwoSidedParams::new(
                    params.p.unwrap_or(d.p),
                    params.q.unwrap_or(d.q),
                    params.a.unwrap_or(d.a),
                    params.b.unwrap_or(d.b),
                )?;
                (build_two_sided(&p), Family::TwoSided(p))
            }
            "symmetric" => {
                let p = params.p.unwrap_or(0.25);
                let s = SymmetricParams::new(p, params.origin_up.unwrap_or(p / 2.0))?;
                (build_symmetric(&s), Family::Symmetric(s))
            }
            "kesten" => {
                let s = chain.schedule.clone().unwrap_or_default();
                (build_kesten(&s)?, Family::Kesten(s))
            }
            "alpha_walk" => {
                let k = build_alpha_walk(
                    params.alpha.unwrap_or(0.9),
                    params.a.unwrap_or(0.6),
                    params.b.unwrap_or(0.4),
                )?;
                (k, Family::AlphaWalk)
            }
            other => {
                return Err(CliError::Schema(format!(
                    "unknown preset {other:?}; expected one of {}",
                    PRESETS.join(", ")
                )))
            }
        },
    };
    if let Some(ovs) = &chain.overrides {
        for o in ovs {
            kernel = kernel.with_override(o.site, StepLaw::new(o.p, o.r, o.q));
        }
        if !ovs.is_empty() {
            family = Family::Custom;
        }
    }
    let r = check("lazify", c.lazify(), (0.0..1.0).contains(&c.lazify()))?;
    if r > 0.0 {
        kernel = kernel.lazify(r)?;
    }
    if c.square_even == Some(true) {
        kernel = kernel.square_even()?;
        family = Family::Custom;
    }
    let window = Window::centered(c.x0().abs() + 2 * c.n() as Site + 2);
    let violations = kernel.validate(window);
    if !violations.is_empty() {
        let msg: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(CliError::Validation(msg.join("; ")));
    }
    Ok(Scenario {
        kernel,
        family,
        lazify: r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use yaglom::StepKernel;

    #[test]
    fn flags_override_file_values() {
        let mut c: Config = toml::from_str(
            "x0 = 3\nn = 10\n[chain]\npreset = \"symmetric\"\n[budgets]\nhorizon_M = 64\n",
        )
        .unwrap();
        assert_eq!(c.budgets.horizon_m, Some(64));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, c.to_toml()).unwrap();
        let flags = Overrides {
            config: Some(path),
            x0: Some(-2),
            preset: Some("two_sided".into()),
            ..Overrides::default()
        };
        let r = Config::resolve(&flags).unwrap();
        assert_eq!(r.x0, Some(-2));
        assert_eq!(r.n, Some(10));
        assert_eq!(r.chain.preset.as_deref(), Some("two_sided"));
        c.x0 = Some(-2);
        c.chain.preset = Some("two_sided".into());
        assert_eq!(r, c);
    }

    #[test]
    fn unknown_keys_are_schema_errors() {
        assert!(toml::from_str::<Config>("x1 = 3").is_err());
        assert!(toml::from_str::<Config>("[chain]\nprest = \"a\"").is_err());
    }

    #[test]
    fn overrides_make_closed_forms_unavailable() {
        let c: Config = toml::from_str(
            "[chain]\npreset = \"two_sided\"\n[[chain.overrides]]\nsite = 5\np = 0.3\nq = 0.6\n",
        )
        .unwrap();
        let s = build_scenario(&c).unwrap();
        assert_eq!(s.family, Family::Custom);
        assert_eq!(s.kernel.law(5), StepLaw::new(0.3, 0.0, 0.6));
    }

    #[test]
    fn region_lists_build_kernels() {
        let c: Config = toml::from_str(
            "[chain]\n[[chain.regions]]\nto = -1\np = 0.5\nq = 0.5\n\
             [[chain.regions]]\nfrom = 0\nto = 0\np = 0.2\nq = 0.2\n\
             [[chain.regions]]\nfrom = 1\np = 0.5\nq = 0.5\n",
        )
        .unwrap();
        let s = build_scenario(&c).unwrap();
        assert_eq!(s.kernel.kill_support().single_site(), Some(0));
    }
}
