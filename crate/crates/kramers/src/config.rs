//! Experiment configuration: line-oriented `key = value` files with dotted
//! section prefixes.
//!
//! The format is deliberately primitive — one assignment per line, `#`
//! comments, lists as comma-separated values — so configs stay diffable and
//! parseable from any language.  Two rules keep typos loud: a key may appear
//! only once, and every key must be consumed by the block that owns it;
//! anything left over is an error naming the offending lines.
//!
//! Unset keys fall back to the benchmark: linear drift -x, unit constant G,
//! the interval (-1, 1), and the standard Gaussian-tail jump measure.

use std::cell::Cell;
use std::path::PathBuf;

use crate::dynamics::{Domain, Drift, GCoef, SystemSpec};
use crate::exitlab::TCapPolicy;
use crate::measures::{LevyMeasure, MeasureKind};
use crate::quasipotential::QpOpts;
use crate::{Error, Result};

/// One parsed assignment.
struct Entry {
    line: usize,
    key: String,
    value: String,
    consumed: Cell<bool>,
}

/// Raw key/value view of a config file; typed accessors mark keys consumed
/// so [`RawConfig::finish`] can reject everything unrecognized.
pub struct RawConfig {
    entries: Vec<Entry>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<Entry> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let Some((k, v)) = t.split_once('=') else {
                return Err(Error::Invalid(format!(
                    "line {line}: expected `key = value`, got `{t}`"
                )));
            };
            let key = k.trim().to_string();
            let value = v.trim().to_string();
            if key.is_empty() {
                return Err(Error::Invalid(format!("line {line}: empty key")));
            }
            if let Some(prev) = entries.iter().find(|e| e.key == key) {
                return Err(Error::Invalid(format!(
                    "line {line}: key `{key}` already set on line {}",
                    prev.line
                )));
            }
            entries.push(Entry { line, key, value, consumed: Cell::new(false) });
        }
        Ok(RawConfig { entries })
    }

    fn lookup(&self, key: &str) -> Option<&Entry> {
        let e = self.entries.iter().find(|e| e.key == key)?;
        e.consumed.set(true);
        Some(e)
    }

    pub fn str_of(&self, key: &str) -> Option<&str> {
        self.lookup(key).map(|e| e.value.as_str())
    }

    pub fn f64_of(&self, key: &str) -> Result<Option<f64>> {
        let Some(e) = self.lookup(key) else { return Ok(None) };
        match e.value.parse() {
            Ok(v) => Ok(Some(v)),
            Err(_) => Err(Error::Invalid(format!(
                "line {}: `{key}` expects a number, got `{}`",
                e.line, e.value
            ))),
        }
    }

    pub fn u64_of(&self, key: &str) -> Result<Option<u64>> {
        let Some(e) = self.lookup(key) else { return Ok(None) };
        match e.value.parse() {
            Ok(v) => Ok(Some(v)),
            Err(_) => Err(Error::Invalid(format!(
                "line {}: `{key}` expects a nonnegative integer, got `{}`",
                e.line, e.value
            ))),
        }
    }

    pub fn usize_of(&self, key: &str) -> Result<Option<usize>> {
        Ok(self.u64_of(key)?.map(|v| v as usize))
    }

    pub fn bool_of(&self, key: &str) -> Result<Option<bool>> {
        let Some(e) = self.lookup(key) else { return Ok(None) };
        match e.value.as_str() {
            "true" | "on" | "yes" => Ok(Some(true)),
            "false" | "off" | "no" => Ok(Some(false)),
            other => Err(Error::Invalid(format!(
                "line {}: `{key}` expects true/false, got `{other}`",
                e.line
            ))),
        }
    }

    /// Comma-separated list of numbers.
    pub fn list_of(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(e) = self.lookup(key) else { return Ok(None) };
        let mut out = Vec::new();
        for part in e.value.split(',') {
            let part = part.trim();
            out.push(part.parse().map_err(|_| {
                Error::Invalid(format!(
                    "line {}: `{key}` expects comma-separated numbers, got `{part}`",
                    e.line
                ))
            })?);
        }
        Ok(Some(out))
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.str_of(key)
            .ok_or_else(|| Error::Invalid(format!("missing required key `{key}`")))
    }

    /// Reject unconsumed keys, naming every one with its line.
    pub fn finish(&self) -> Result<()> {
        let stray: Vec<String> = self
            .entries
            .iter()
            .filter(|e| !e.consumed.get())
            .map(|e| format!("line {}: unknown key `{}`", e.line, e.key))
            .collect();
        if stray.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(stray.join("; ")))
        }
    }
}

/// Where the Kramers experiments get their barrier data.
#[derive(Clone, Debug)]
pub enum BarrierSource {
    /// Run the variational barrier search in-process.
    Auto,
    /// Read a previously written quasi-potential report.
    Report(PathBuf),
    /// No barrier: Kramers-scale caps and argmin statistics unavailable.
    None,
}

/// Fully parsed experiment configuration.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    pub measure: LevyMeasure,
    pub start: Vec<f64>,
    pub eps: Vec<f64>,
    pub n: usize,
    pub seed: u64,
    pub workers: usize,
    pub dt: Option<f64>,
    pub t_cap: TCapPolicy,
    pub barrier: BarrierSource,
    /// Optimizer settings for the quasi-potential commands.
    pub qp: QpOpts,
    /// Point target for `quasipotential` in point mode; barrier mode when
    /// unset.
    pub qp_target: Option<Vec<f64>>,
    pub window_frac: f64,
    pub loc_delta: f64,
    pub cycle_rho: f64,
    pub cycle_rho_prime: f64,
    /// Tilt selector for importance sampling: "identity", "constant", or
    /// "certificate".
    pub is_tilt: String,
    pub is_level: f64,
    pub is_horizon: f64,
    pub sim_horizon: f64,
    pub sim_paths: usize,
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let raw = RawConfig::parse(text)?;
        let cfg = Self::from_raw(&raw)?;
        raw.finish()?;
        Ok(cfg)
    }

    fn from_raw(raw: &RawConfig) -> Result<Self> {
        let dim = raw.usize_of("system.dim")?.unwrap_or(1);

        let drift = match raw.str_of("system.drift").unwrap_or("linear") {
            "linear" => Drift::Linear { rate: raw.f64_of("system.drift.rate")?.unwrap_or(1.0) },
            "cubic" => Drift::Poly { coeffs: vec![0.0, -1.0, 0.0, -1.0] },
            "poly" => {
                let coeffs = raw
                    .list_of("system.drift.coeffs")?
                    .ok_or_else(|| Error::Invalid("missing required key `system.drift.coeffs`".into()))?;
                Drift::Poly { coeffs }
            }
            other => {
                return Err(Error::Invalid(format!(
                    "`system.drift` must be linear, cubic or poly, got `{other}`"
                )))
            }
        };

        let g = match raw.str_of("system.g").unwrap_or("constant") {
            "constant" => GCoef::Constant(raw.f64_of("system.g.value")?.unwrap_or(1.0)),
            "affine" => GCoef::AffineClamped {
                a: raw.f64_of("system.g.a")?.unwrap_or(1.0),
                slope: raw.f64_of("system.g.slope")?.unwrap_or(0.0),
                min_abs: raw.f64_of("system.g.min_abs")?.unwrap_or(0.1),
            },
            other => {
                return Err(Error::Invalid(format!(
                    "`system.g` must be constant or affine, got `{other}`"
                )))
            }
        };

        let domain = match raw.str_of("system.domain").unwrap_or("interval") {
            "interval" => Domain::Interval {
                lo: raw.f64_of("system.domain.lo")?.unwrap_or(-1.0),
                hi: raw.f64_of("system.domain.hi")?.unwrap_or(1.0),
            },
            "ball" => Domain::Ball { radius: raw.f64_of("system.domain.radius")?.unwrap_or(1.0) },
            "box" => {
                let lo = raw
                    .list_of("system.domain.lo")?
                    .ok_or_else(|| Error::Invalid("missing required key `system.domain.lo`".into()))?;
                let hi = raw
                    .list_of("system.domain.hi")?
                    .ok_or_else(|| Error::Invalid("missing required key `system.domain.hi`".into()))?;
                Domain::Box { lo, hi }
            }
            "all" => Domain::All,
            other => {
                return Err(Error::Invalid(format!(
                    "`system.domain` must be interval, ball, box or all, got `{other}`"
                )))
            }
        };

        let system = SystemSpec::new(drift, g, domain, dim)?;

        let kind = match raw.require("measure.kind")? {
            "exponential-light" => MeasureKind::ExponentialLight {
                beta: raw.f64_of("measure.beta")?.unwrap_or(2.0),
            },
            "gauss-tempered-stable" => {
                let alpha = raw.f64_of("measure.alpha")?.unwrap_or(0.5);
                let gamma = raw.f64_of("measure.gamma")?.unwrap_or(1.0);
                let directions = match raw.str_of("measure.directions") {
                    None => default_directions(dim),
                    Some(spec) => parse_directions(spec, dim)?,
                };
                MeasureKind::GaussTemperedStable { alpha, gamma, directions }
            }
            "compact-support" => MeasureKind::CompactSupport {
                radius: raw.f64_of("measure.radius")?.unwrap_or(1.0),
                level: raw.f64_of("measure.level")?.unwrap_or(1.0),
            },
            other => {
                return Err(Error::Invalid(format!(
                    "`measure.kind` must be exponential-light, gauss-tempered-stable or compact-support, got `{other}`"
                )))
            }
        };
        let cutoff = raw.f64_of("measure.cutoff")?.unwrap_or(0.0);
        let measure = LevyMeasure::new(kind, dim, cutoff)?;

        let start = match raw.list_of("run.start")? {
            Some(p) => p,
            None => vec![0.0; dim],
        };
        let eps = raw
            .list_of("run.eps")?
            .unwrap_or_else(|| vec![0.4, 0.3, 0.2, 0.15]);
        let n = raw.usize_of("run.n")?.unwrap_or(2000);
        let seed = raw.u64_of("run.seed")?.unwrap_or(0);
        let workers = raw.usize_of("run.workers")?.unwrap_or(0);
        let dt = raw.f64_of("run.dt")?;

        let t_cap = match raw.str_of("run.t_cap").unwrap_or("kramers") {
            "kramers" => TCapPolicy::KramersMultiple {
                factor: raw.f64_of("run.t_cap.factor")?.unwrap_or(20.0),
            },
            "fixed" => {
                let value = raw.f64_of("run.t_cap.value")?.ok_or_else(|| {
                    Error::Invalid("missing required key `run.t_cap.value`".into())
                })?;
                TCapPolicy::Fixed(value)
            }
            other => {
                return Err(Error::Invalid(format!(
                    "`run.t_cap` must be kramers or fixed, got `{other}`"
                )))
            }
        };

        let barrier = match raw.str_of("run.barrier").unwrap_or("auto") {
            "auto" => BarrierSource::Auto,
            "none" => BarrierSource::None,
            path if path.starts_with("report:") => {
                BarrierSource::Report(PathBuf::from(path.trim_start_matches("report:").trim()))
            }
            other => {
                return Err(Error::Invalid(format!(
                    "`run.barrier` must be auto, none or report:PATH, got `{other}`"
                )))
            }
        };

        let mut qp = QpOpts { seed, ..QpOpts::default() };
        if let Some(v) = raw.usize_of("qp.restarts")? {
            qp.restarts = v;
        }
        if let Some(v) = raw.usize_of("qp.max_iter")? {
            qp.max_iter = v;
        }
        if let Some(v) = raw.usize_of("qp.init_segments")? {
            qp.init_segments = v;
        }
        if let Some(v) = raw.usize_of("qp.refine_rounds")? {
            qp.max_refine_rounds = v;
        }
        if let Some(v) = raw.f64_of("qp.refine_rel_tol")? {
            qp.refine_rel_tol = v;
        }
        if let Some(v) = raw.list_of("qp.t_grid")? {
            qp.t_grid = v;
        }
        if let Some(v) = raw.usize_of("qp.golden_iters")? {
            qp.golden_iters = v;
        }
        if let Some(v) = raw.f64_of("qp.endpoint_tol")? {
            qp.endpoint_tol = v;
        }
        if let Some(v) = raw.f64_of("qp.ode_dt")? {
            qp.ode_dt = v;
        }
        if let Some(v) = raw.bool_of("qp.grid_stage")? {
            qp.grid_stage = v;
        }
        let qp_target = raw.list_of("qp.target")?;

        let window_frac = raw.f64_of("exit.window_frac")?.unwrap_or(0.5);
        let loc_delta = raw.f64_of("exit.loc_delta")?.unwrap_or(0.25);
        let cycle_rho = raw.f64_of("cycle.rho")?.unwrap_or(0.3);
        let cycle_rho_prime = raw.f64_of("cycle.rho_prime")?.unwrap_or(0.7);

        let is_tilt = raw.str_of("is.tilt").unwrap_or("identity").to_string();
        if !matches!(is_tilt.as_str(), "identity" | "constant" | "certificate") {
            return Err(Error::Invalid(format!(
                "`is.tilt` must be identity, constant or certificate, got `{is_tilt}`"
            )));
        }
        let is_level = raw.f64_of("is.level")?.unwrap_or(1.3);
        let is_horizon = raw.f64_of("is.horizon")?.unwrap_or(2.0);

        let sim_horizon = raw.f64_of("simulate.horizon")?.unwrap_or(2.0);
        let sim_paths = raw.usize_of("simulate.paths")?.unwrap_or(1);

        Ok(ExperimentConfig {
            system,
            measure,
            start,
            eps,
            n,
            seed,
            workers,
            dt,
            t_cap,
            barrier,
            qp,
            qp_target,
            window_frac,
            loc_delta,
            cycle_rho,
            cycle_rho_prime,
            is_tilt,
            is_level,
            is_horizon,
            sim_horizon,
            sim_paths,
        })
    }
}

fn default_directions(dim: usize) -> Vec<(Vec<f64>, f64)> {
    let mut dirs = Vec::with_capacity(2 * dim);
    for k in 0..dim {
        for s in [1.0, -1.0] {
            let mut v = vec![0.0; dim];
            v[k] = s;
            dirs.push((v, 1.0 / (2 * dim) as f64));
        }
    }
    dirs
}

/// Directions spec: semicolon-separated `x,y,... @ weight` rays.
fn parse_directions(spec: &str, dim: usize) -> Result<Vec<(Vec<f64>, f64)>> {
    let mut out = Vec::new();
    for part in spec.split(';') {
        let part = part.trim();
        let Some((vec_part, w_part)) = part.split_once('@') else {
            return Err(Error::Invalid(format!(
                "`measure.directions` entries look like `x,y @ weight`, got `{part}`"
            )));
        };
        let mut dir = Vec::new();
        for c in vec_part.split(',') {
            dir.push(c.trim().parse::<f64>().map_err(|_| {
                Error::Invalid(format!("bad direction component `{}`", c.trim()))
            })?);
        }
        if dir.len() != dim {
            return Err(Error::Invalid(format!(
                "direction `{vec_part}` has dimension {}, expected {dim}",
                dir.len()
            )));
        }
        let w: f64 = w_part
            .trim()
            .parse()
            .map_err(|_| Error::Invalid(format!("bad direction weight `{}`", w_part.trim())))?;
        out.push((dir, w));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "measure.kind = exponential-light\n";

    #[test]
    fn minimal_config_fills_benchmark_defaults() {
        let cfg = ExperimentConfig::from_text(MINIMAL).unwrap();
        assert_eq!(cfg.system.dim(), 1);
        assert_eq!(cfg.start, vec![0.0]);
        assert_eq!(cfg.eps, vec![0.4, 0.3, 0.2, 0.15]);
        assert_eq!(cfg.n, 2000);
        assert_eq!(cfg.seed, 0);
        assert!(matches!(cfg.t_cap, TCapPolicy::KramersMultiple { factor } if factor == 20.0));
        assert!(matches!(cfg.barrier, BarrierSource::Auto));
        assert_eq!(cfg.window_frac, 0.5);
    }

    #[test]
    fn missing_measure_kind_is_named_in_the_error() {
        let err = ExperimentConfig::from_text("run.n = 100\n").unwrap_err();
        assert!(err.to_string().contains("measure.kind"), "{err}");
    }

    #[test]
    fn unknown_keys_error_with_line_numbers() {
        let text = "measure.kind = exponential-light\nrun.n = 200\nrun.paths = 3\n";
        let err = ExperimentConfig::from_text(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("run.paths"), "{msg}");
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let text = "measure.kind = exponential-light\nrun.n = 200\nrun.n = 300\n";
        let err = ExperimentConfig::from_text(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn bad_values_error_with_line_and_key() {
        let text = "measure.kind = exponential-light\nrun.n = many\n";
        let err = ExperimentConfig::from_text(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("run.n"), "{msg}");
    }

    #[test]
    fn full_config_parses_every_block() {
        let text = "\
# benchmark variant
system.dim = 1
system.drift = poly
system.drift.coeffs = 0, -1, 0, -1
system.g = affine
system.g.a = 1.0
system.g.slope = 0.2
system.g.min_abs = 0.3
system.domain = interval
system.domain.lo = -1.5
system.domain.hi = 1.0
measure.kind = exponential-light
measure.beta = 2.0
measure.cutoff = 0.0
run.start = 0.1
run.eps = 0.5, 0.4
run.n = 150
run.seed = 9
run.workers = 2
run.dt = 0.002
run.t_cap = fixed
run.t_cap.value = 30
run.barrier = report: qp-report.txt
qp.t_grid = 1.5, 2.5
qp.grid_stage = off
exit.window_frac = 0.4
exit.loc_delta = 0.3
cycle.rho = 0.2
cycle.rho_prime = 0.6
is.tilt = constant
is.level = 1.4
is.horizon = 3.0
simulate.horizon = 1.0
simulate.paths = 2
";
        let cfg = ExperimentConfig::from_text(text).unwrap();
        assert_eq!(cfg.eps, vec![0.5, 0.4]);
        assert_eq!(cfg.n, 150);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.workers, 2);
        assert_eq!(cfg.dt, Some(0.002));
        assert!(matches!(cfg.t_cap, TCapPolicy::Fixed(v) if v == 30.0));
        assert!(
            matches!(&cfg.barrier, BarrierSource::Report(p) if p.to_str() == Some("qp-report.txt"))
        );
        assert_eq!(cfg.qp.t_grid, vec![1.5, 2.5]);
        assert!(!cfg.qp.grid_stage);
        assert_eq!(cfg.qp.seed, 9);
        assert_eq!(cfg.window_frac, 0.4);
        assert_eq!(cfg.cycle_rho_prime, 0.6);
        assert_eq!(cfg.is_tilt, "constant");
        assert_eq!(cfg.sim_paths, 2);
    }

    #[test]
    fn gts_measure_defaults_symmetric_directions() {
        let text = "measure.kind = gauss-tempered-stable\nmeasure.cutoff = 0.05\n";
        let cfg = ExperimentConfig::from_text(text).unwrap();
        assert_eq!(cfg.measure.dim(), 1);
        let custom = "measure.kind = gauss-tempered-stable\nmeasure.cutoff = 0.05\nmeasure.directions = 1 @ 0.7 ; -1 @ 0.3\n";
        let cfg2 = ExperimentConfig::from_text(custom).unwrap();
        assert_eq!(cfg2.measure.dim(), 1);
        let bad = "measure.kind = gauss-tempered-stable\nmeasure.directions = 1,0 @ 0.5\n";
        assert!(ExperimentConfig::from_text(bad).is_err());
    }
}
