//! CSV writers with a commented reproducibility header.
//!
//! Every file starts with `# `-prefixed lines carrying the resolved run
//! configuration and seed, followed by an ordinary CSV table.
//!
//! Column orders:
//! - trace: `n, survival_factor, log_mass, ratio_<y>...` where row `n` holds
//!   `K^n(x0,S)/K^{n-1}(x0,S)`, `ln K^n(x0,S)` and `K^n(x0,y)/K^{n-1}(x0,y)`
//!   (the first two ratio columns are empty at `n = 0`)
//! - distribution: `site, probability`
//! - measure: `site, raw, probability`
//! - hhat: `site, raw, limit, spread, half_gap, converged`
//! - paths: `path, step, site`
//! - orey: `m, site, probe, ratio`

use std::io::Write;

use crate::chain::MassState;
use crate::evolve::YaglomTrace;
use crate::measures::{Measure, TabulatedMeasure};
use crate::montecarlo::{OreyTrace, TrajectorySample};
use crate::transforms::HhatTable;
use crate::Window;

/// Error type of the writers.
pub use csv::Error as CsvError;

/// Reproducibility header: the resolved configuration text and the seed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Header {
    pub config: String,
    pub seed: Option<u64>,
}

impl Header {
    pub fn new(config: impl Into<String>, seed: Option<u64>) -> Self {
        Self {
            config: config.into(),
            seed,
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        if let Some(s) = self.seed {
            writeln!(w, "# seed = {s}")?;
        }
        for line in self.config.lines() {
            if line.is_empty() {
                writeln!(w, "#")?;
            } else {
                writeln!(w, "# {line}")?;
            }
        }
        Ok(())
    }
}

fn table<W: Write>(mut w: W, header: &Header) -> csv::Result<csv::Writer<W>> {
    header.write_to(&mut w)?;
    Ok(csv::Writer::from_writer(w))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Free-form table with the standard header.
pub fn write_rows<W: Write, I, R>(
    w: W,
    header: &Header,
    columns: &[&str],
    rows: I,
) -> csv::Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut out = table(w, header)?;
    out.write_record(columns)?;
    for r in rows {
        out.write_record(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_trace<W: Write>(w: W, header: &Header, trace: &YaglomTrace) -> csv::Result<()> {
    let mut out = table(w, header)?;
    let mut cols = vec!["n".to_string(), "survival_factor".into(), "log_mass".into()];
    cols.extend(trace.tracked.iter().map(|t| format!("ratio_{}", t.site)));
    out.write_record(&cols)?;
    for n in 0..=trace.steps {
        let prev = n.checked_sub(1);
        let mut row = vec![
            n.to_string(),
            opt(prev.map(|k| trace.survival_factors[k])),
            trace.log_masses[n].to_string(),
        ];
        row.extend(
            trace
                .tracked
                .iter()
                .map(|t| opt(prev.and_then(|k| t.ratios[k]))),
        );
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_distribution<W: Write>(w: W, header: &Header, state: &MassState) -> csv::Result<()> {
    let mut out = table(w, header)?;
    out.write_record(["site", "probability"])?;
    for (x, p) in state.iter() {
        out.write_record(&[x.to_string(), p.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Raw values of `measure` on `window` next to their normalized probabilities.
pub fn write_measure<W: Write, M: Measure + ?Sized>(
    w: W,
    header: &Header,
    measure: &M,
    window: Window,
) -> csv::Result<()> {
    let raw: Vec<f64> = window.sites().map(|x| measure.value(x)).collect();
    let total: f64 = raw.iter().sum();
    let mut out = table(w, header)?;
    out.write_record(["site", "raw", "probability"])?;
    for (x, v) in window.sites().zip(&raw) {
        out.write_record(&[x.to_string(), v.to_string(), (v / total).to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_tabulated<W: Write>(w: W, header: &Header, m: &TabulatedMeasure) -> csv::Result<()> {
    write_measure(w, header, m, m.window)
}

pub fn write_hhat<W: Write>(w: W, header: &Header, t: &HhatTable) -> csv::Result<()> {
    let mut out = table(w, header)?;
    out.write_record(["site", "raw", "limit", "spread", "half_gap", "converged"])?;
    for e in &t.entries {
        out.write_record(&[
            e.site.to_string(),
            e.raw.to_string(),
            e.limit.to_string(),
            e.spread.to_string(),
            e.half_gap.to_string(),
            e.converged.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_paths<W: Write>(w: W, header: &Header, paths: &[TrajectorySample]) -> csv::Result<()> {
    let mut out = table(w, header)?;
    out.write_record(["path", "step", "site"])?;
    for (i, p) in paths.iter().enumerate() {
        for (k, x) in p.path.iter().enumerate() {
            out.write_record(&[i.to_string(), k.to_string(), x.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_orey<W: Write>(w: W, header: &Header, trace: &OreyTrace) -> csv::Result<()> {
    let mut out = table(w, header)?;
    out.write_record(["m", "site", "probe", "ratio"])?;
    for pt in &trace.points {
        for (y, r) in &pt.ratios {
            out.write_record(&[
                pt.m.to_string(),
                pt.site.to_string(),
                y.to_string(),
                r.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{NNKernel, StepLaw};
    use crate::evolve::evolve_trace;

    #[test]
    fn trace_layout() {
        let k = NNKernel::homogeneous(StepLaw::new(0.3, 0.2, 0.3));
        let t = evolve_trace(&k, 0, 3, &[1]).unwrap();
        let mut buf = Vec::new();
        write_trace(&mut buf, &Header::new("x0 = 0\nn = 3", Some(7)), &t).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[..3], ["# seed = 7", "# x0 = 0", "# n = 3"]);
        assert_eq!(lines[3], "n,survival_factor,log_mass,ratio_1");
        assert_eq!(lines[4], "0,,0,");
        assert!(lines[5].starts_with("1,0.8,"));
        assert_eq!(lines.len(), 8);
    }

    #[test]
    fn measure_probabilities_sum_to_one() {
        let m = TabulatedMeasure::new(
            Window::new(0, 2).unwrap(),
            vec![1.0, 2.0, 1.0],
            crate::measures::Scale::Raw,
            0.0,
        );
        let mut buf = Vec::new();
        write_tabulated(&mut buf, &Header::default(), &m).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "site,raw,probability\n0,1,0.25\n1,2,0.5\n2,1,0.25\n");
    }
}
