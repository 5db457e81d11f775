//! Kramers experiment orchestration.
//!
//! Everything downstream of the simulator and the variational optimizer meets
//! here: Monte Carlo first-exit statistics across a schedule of noise levels,
//! cross-validated against the certified barrier height.  The guiding
//! asymptotics, with sigma the first-exit time from the domain and Vbar the
//! barrier (the boundary infimum of the quasi-potential):
//!
//! * eps ln E[sigma] -> Vbar as eps -> 0, so the scaled log-means should
//!   trend toward the variational value along a decreasing eps schedule;
//! * P( exp((Vbar - delta)/eps) < sigma < exp((Vbar + delta)/eps) ) -> 1 for
//!   every fixed window half-width delta > 0;
//! * the exit location concentrates on the boundary argmin set of the
//!   quasi-potential: P( dist(X_sigma, argmin set) < delta ) -> 1.
//!
//! Two more diagnostics probe the *mechanism* rather than the limit. The
//! cycle decomposition watches each path through a stopping-time ladder
//! (return to a small ball around the stable point, excursion past a larger
//! shell, and so on) and checks that exits look like geometric trials: a
//! per-attempt success probability q, attempt counts roughly geometric(q),
//! and E[sigma] close to E[attempts] * E[cycle length].  Importance sampling
//! replays the exit estimate under an exponentially tilted jump measure and
//! transports it back with Girsanov weights evaluated at the stopped horizon,
//! giving an unbiasedness cross-check and (for rare exits) a variance probe.
//!
//! Estimation policy: mean exit times are truncated means (timeouts enter at
//! the simulation cap) and every report carries the timeout fraction; rows
//! with more than 20% timeouts are flagged INVALID-FOR-MEAN rather than
//! silently censored.  All confidence intervals are path-level bootstrap
//! percentile intervals with 1000 resamples.  Every path draws its own
//! counter-derived stream, so reports are bit-identical for a fixed seed no
//! matter how many worker threads participate.

use rand::Rng;
use rayon::prelude::*;

use crate::controls::Control;
use crate::dynamics::{
    first_exit, first_exit_given_jumps, first_exit_observed, ExitOutcome, SdeOpts, SystemSpec,
};
use crate::la;
use crate::measures::LevyMeasure;
use crate::noise::{girsanov_log_weight, simulate_tilted_prm, NoiseParams};
use crate::quasipotential::QuasiPotentialResult;
use crate::stream::rng_for;
use crate::{Error, Result};

/// Number of bootstrap resamples behind every reported confidence interval.
const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Timeout fraction above which a truncated mean stops being a defensible
/// estimate of E[sigma].
const TIMEOUT_INVALID_FRAC: f64 = 0.2;

/// Bins in the exit-location histogram.
const HIST_BINS: usize = 24;

/// How the per-epsilon simulation budget is chosen.
#[derive(Clone, Debug)]
pub enum TCapPolicy {
    /// Cap at factor * exp(Vbar / eps), a fixed multiple of the Kramers
    /// scale; needs a barrier reference.
    KramersMultiple { factor: f64 },
    /// Fixed cap, independent of eps.
    Fixed(f64),
}

/// Barrier data consumed by the experiments: the certified barrier height and
/// the boundary argmin set (one point, or a near-degenerate pair when the
/// runner-up ties within tolerance, as on symmetric domains).
#[derive(Clone, Debug)]
pub struct BarrierRef {
    pub vbar: f64,
    pub argmins: Vec<Vec<f64>>,
    /// Value gap to the best boundary candidate outside the leading argmin;
    /// a tie within tolerance moved that candidate *into* `argmins`.
    pub gap: Option<f64>,
}

impl BarrierRef {
    /// Extract the barrier data from a certified optimizer result.  A
    /// runner-up boundary point within 2e-4 * (1 + |Vbar|) of the minimum is
    /// treated as a member of the argmin set.
    pub fn from_result(result: &QuasiPotentialResult) -> Result<Self> {
        if !result.value.is_finite() {
            return Err(Error::Invalid(
                "barrier reference needs a finite certified value".into(),
            ));
        }
        let Some(z_star) = result.z_star.clone() else {
            return Err(Error::Invalid(
                "barrier reference needs a boundary argmin (run a barrier search, not a point query)".into(),
            ));
        };
        let mut argmins = vec![z_star];
        let tie_tol = 2e-4 * (1.0 + result.value.abs());
        let mut gap = result.runner_up_gap;
        if let (Some(g), Some(p)) = (result.runner_up_gap, result.runner_up_point.as_ref()) {
            if g <= tie_tol {
                argmins.push(p.clone());
                gap = None;
            }
        }
        Ok(BarrierRef { vbar: result.value, argmins, gap })
    }

    /// Distance from a point to the argmin set.
    fn dist_to_argmins(&self, p: &[f64]) -> f64 {
        self.argmins
            .iter()
            .map(|z| la::dist(p, z))
            .fold(f64::INFINITY, f64::min)
    }
}

/// A full exit experiment: the perturbed system, where it starts, which noise
/// levels to sweep, how many paths per level, and how long to wait.
#[derive(Clone, Debug)]
pub struct ExitExperiment {
    pub system: SystemSpec,
    pub measure: LevyMeasure,
    pub start: Vec<f64>,
    /// Noise levels, strictly decreasing, all in (0, 1].
    pub schedule: Vec<f64>,
    /// Paths per noise level.
    pub n: usize,
    pub t_cap: TCapPolicy,
    pub seed: u64,
    /// Barrier data; required by the Kramers-scale cap policy and by every
    /// statistic that compares against Vbar or the argmin set.
    pub barrier: Option<BarrierRef>,
    /// Window half-width as a fraction of Vbar for the exit-time window
    /// probability.
    pub window_frac: f64,
    /// Concentration radius around the argmin set for exit locations.
    pub loc_delta: f64,
    /// Optional importance-sampling tilt carried alongside the experiment
    /// (the CLI routes its is-exit subcommand through this).
    pub is_control: Option<Control>,
    pub sde: SdeOpts,
}

impl ExitExperiment {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        system: SystemSpec,
        measure: LevyMeasure,
        start: Vec<f64>,
        schedule: Vec<f64>,
        n: usize,
        t_cap: TCapPolicy,
        seed: u64,
        barrier: Option<BarrierRef>,
    ) -> Result<Self> {
        if start.len() != system.dim() {
            return Err(Error::Invalid(format!(
                "start point has dimension {}, system has {}",
                start.len(),
                system.dim()
            )));
        }
        if measure.dim() != system.dim() {
            return Err(Error::Invalid("measure and system dimensions differ".into()));
        }
        if !system.domain.contains(&start) {
            return Err(Error::Invalid("start point lies outside the domain".into()));
        }
        if n < 100 {
            return Err(Error::Invalid(format!(
                "need at least 100 paths per level for the bootstrap, got {n}"
            )));
        }
        if schedule.is_empty() {
            return Err(Error::Invalid("empty epsilon schedule".into()));
        }
        for (k, &e) in schedule.iter().enumerate() {
            if !(e > 0.0 && e <= 1.0) {
                return Err(Error::Invalid(format!("epsilon must lie in (0,1], got {e}")));
            }
            if k > 0 && e >= schedule[k - 1] {
                return Err(Error::Invalid(
                    "epsilon schedule must be strictly decreasing".into(),
                ));
            }
        }
        match &t_cap {
            TCapPolicy::KramersMultiple { factor } => {
                if !(*factor >= 1.0) {
                    return Err(Error::Invalid(format!(
                        "Kramers cap multiple must be >= 1, got {factor}"
                    )));
                }
                let ok = barrier.as_ref().map(|b| b.vbar.is_finite()).unwrap_or(false);
                if !ok {
                    return Err(Error::Invalid(
                        "Kramers-scale cap policy needs a barrier reference with finite Vbar"
                            .into(),
                    ));
                }
            }
            TCapPolicy::Fixed(c) => {
                if !(*c > 0.0 && c.is_finite()) {
                    return Err(Error::Invalid(format!("fixed cap must be positive, got {c}")));
                }
            }
        }
        let sde = SdeOpts::for_system(&system);
        Ok(ExitExperiment {
            system,
            measure,
            start,
            schedule,
            n,
            t_cap,
            seed,
            barrier,
            window_frac: 0.5,
            loc_delta: 0.25,
            is_control: None,
            sde,
        })
    }

    fn cap_for(&self, eps: f64) -> f64 {
        match &self.t_cap {
            TCapPolicy::KramersMultiple { factor } => {
                let vbar = self.barrier.as_ref().expect("validated at construction").vbar;
                factor * (vbar / eps).exp()
            }
            TCapPolicy::Fixed(c) => *c,
        }
    }
}

/// One simulated path, reduced to what the statistics need.
#[derive(Clone, Debug)]
struct PathSample {
    /// Exit time, or the cap when the path timed out.
    sigma: f64,
    exited: bool,
    /// Exit point for exited paths.
    point: Option<Vec<f64>>,
}

/// Run the n-path ensemble at every level of the schedule.  Paths draw the
/// stream keyed by (level index << 32) | path index, so the ensemble is
/// independent across levels and identical no matter the thread count or
/// which operation asks for it.
fn simulate_schedule(exp: &ExitExperiment) -> Result<Vec<(f64, Vec<PathSample>)>> {
    let mut out = Vec::with_capacity(exp.schedule.len());
    for (e, &eps) in exp.schedule.iter().enumerate() {
        let cap = exp.cap_for(eps);
        let samples: Vec<Result<PathSample>> = (0..exp.n)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng_for(exp.seed, "exit-mc", ((e as u64) << 32) | i as u64);
                let outcome = first_exit(
                    &exp.system,
                    &exp.measure,
                    &exp.start,
                    eps,
                    &mut rng,
                    &exp.sde,
                    cap,
                )?;
                Ok(match outcome {
                    ExitOutcome::Exited { time, point } => {
                        PathSample { sigma: time, exited: true, point: Some(point) }
                    }
                    ExitOutcome::Timeout => PathSample { sigma: cap, exited: false, point: None },
                })
            })
            .collect();
        let mut rows = Vec::with_capacity(exp.n);
        for s in samples {
            rows.push(s?);
        }
        out.push((cap, rows));
    }
    Ok(out)
}

/// Percentile bootstrap over path indices.  The statistic sees a resampled
/// index multiset; NaN replicates (e.g. a conditional statistic whose
/// conditioning event has no mass in the resample) are dropped before taking
/// percentiles.
fn bootstrap_ci<F: Fn(&[usize]) -> f64>(
    n: usize,
    seed: u64,
    domain: &str,
    index: u64,
    stat: F,
) -> (f64, f64) {
    let mut rng = rng_for(seed, domain, index);
    let mut vals = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut idx = vec![0usize; n];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        for v in idx.iter_mut() {
            *v = rng.random_range(0..n);
        }
        let s = stat(&idx);
        if !s.is_nan() {
            vals.push(s);
        }
    }
    if vals.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    vals.sort_by(f64::total_cmp);
    let m = vals.len();
    let lo = vals[(m as f64 * 0.025) as usize];
    let hi = vals[((m as f64 * 0.975) as usize).min(m - 1)];
    (lo, hi)
}

/// Spearman rank correlation; ties are not corrected for (the inputs here are
/// continuous statistics).
fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        for (k, &i) in order.iter().enumerate() {
            r[i] = k as f64;
        }
        r
    };
    let rx = rank(xs);
    let ry = rank(ys);
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
    1.0 - 6.0 * d2 / (n as f64 * ((n * n - 1) as f64))
}

/// Least-squares line y = intercept + slope * x.
fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

/// One histogram bin over exit locations: the exit coordinate itself in one
/// dimension, the distance to the argmin set (or to the origin without a
/// barrier) otherwise.
#[derive(Clone, Debug)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

fn exit_histogram(points: &[&Vec<f64>], barrier: Option<&BarrierRef>, dim: usize) -> Vec<HistBin> {
    if points.is_empty() {
        return Vec::new();
    }
    let coords: Vec<f64> = if dim == 1 {
        points.iter().map(|p| p[0]).collect()
    } else {
        points
            .iter()
            .map(|p| match barrier {
                Some(b) => b.dist_to_argmins(p),
                None => la::norm(p),
            })
            .collect()
    };
    let lo = coords.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = coords.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut bins: Vec<HistBin> = (0..HIST_BINS)
        .map(|k| HistBin {
            lo: lo + span * k as f64 / HIST_BINS as f64,
            hi: lo + span * (k + 1) as f64 / HIST_BINS as f64,
            count: 0,
        })
        .collect();
    for &c in &coords {
        let k = (((c - lo) / span * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
        bins[k].count += 1;
    }
    bins
}

/// Per-level exit statistics.
#[derive(Clone, Debug)]
pub struct EpsStats {
    pub eps: f64,
    pub t_cap: f64,
    pub exits: usize,
    pub timeouts: usize,
    pub timeout_frac: f64,
    /// Truncated mean: timeouts enter at t_cap.
    pub mean_sigma: f64,
    pub mean_ci: (f64, f64),
    pub eps_ln_mean: f64,
    /// Window bounds exp((Vbar -+ delta)/eps); NaN without a barrier.
    pub window: (f64, f64),
    /// Fraction of paths with sigma strictly inside the window (timeouts
    /// count as outside).
    pub window_prob: f64,
    pub window_ci: (f64, f64),
    /// Among exited paths: fraction landing within loc_delta of the argmin
    /// set.  NaN without a barrier or without exits.
    pub concentration: f64,
    pub concentration_ci: (f64, f64),
}

/// Aggregated Kramers report: per-level rows, the scaled-log-mean trend
/// against the barrier, the exit-location histogram at the smallest level,
/// and the accounting flags.
#[derive(Clone, Debug)]
pub struct KramersReport {
    pub rows: Vec<EpsStats>,
    pub vbar: Option<f64>,
    /// Window half-width delta = window_frac * Vbar.
    pub delta: Option<f64>,
    pub loc_delta: f64,
    /// Spearman correlation of |eps ln mean - Vbar| against eps; positive
    /// means the gap shrinks as eps does.
    pub spearman_gap: f64,
    /// Least-squares (intercept, slope) of eps ln mean against eps; the
    /// intercept extrapolates the trend to eps = 0.
    pub fit: (f64, f64),
    /// Exit-location histogram for the smallest level of the schedule.
    pub hist: Vec<HistBin>,
    pub flags: Vec<String>,
}

impl KramersReport {
    /// Structured-text form, one key = value per line.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("kramers.levels = {}\n", self.rows.len()));
        match self.vbar {
            Some(v) => out.push_str(&format!("kramers.vbar = {v}\n")),
            None => out.push_str("kramers.vbar = none\n"),
        }
        match self.delta {
            Some(d) => out.push_str(&format!("kramers.window.delta = {d}\n")),
            None => out.push_str("kramers.window.delta = none\n"),
        }
        out.push_str(&format!("kramers.loc_delta = {}\n", self.loc_delta));
        out.push_str(&format!("kramers.spearman_gap = {}\n", self.spearman_gap));
        out.push_str(&format!("kramers.fit.intercept = {}\n", self.fit.0));
        out.push_str(&format!("kramers.fit.slope = {}\n", self.fit.1));
        for (k, r) in self.rows.iter().enumerate() {
            let p = format!("kramers.row[{k}]");
            out.push_str(&format!("{p}.eps = {}\n", r.eps));
            out.push_str(&format!("{p}.t_cap = {}\n", r.t_cap));
            out.push_str(&format!("{p}.exits = {}\n", r.exits));
            out.push_str(&format!("{p}.timeouts = {}\n", r.timeouts));
            out.push_str(&format!("{p}.timeout_frac = {}\n", r.timeout_frac));
            out.push_str(&format!("{p}.mean_sigma = {}\n", r.mean_sigma));
            out.push_str(&format!("{p}.mean_ci = {} {}\n", r.mean_ci.0, r.mean_ci.1));
            out.push_str(&format!("{p}.eps_ln_mean = {}\n", r.eps_ln_mean));
            out.push_str(&format!("{p}.window = {} {}\n", r.window.0, r.window.1));
            out.push_str(&format!("{p}.window_prob = {}\n", r.window_prob));
            out.push_str(&format!("{p}.window_ci = {} {}\n", r.window_ci.0, r.window_ci.1));
            out.push_str(&format!("{p}.concentration = {}\n", r.concentration));
            out.push_str(&format!(
                "{p}.concentration_ci = {} {}\n",
                r.concentration_ci.0, r.concentration_ci.1
            ));
        }
        for (k, b) in self.hist.iter().enumerate() {
            out.push_str(&format!("kramers.hist[{k}] = {} {} {}\n", b.lo, b.hi, b.count));
        }
        for f in &self.flags {
            out.push_str(&format!("kramers.flag = {f}\n"));
        }
        out
    }

    /// Delimited table, one row per level.
    pub fn table(&self) -> String {
        let mut out =
            String::from("eps,mean,ci_lo,ci_hi,eps_ln_mean,window_prob,concentration\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.eps,
                r.mean_sigma,
                r.mean_ci.0,
                r.mean_ci.1,
                r.eps_ln_mean,
                r.window_prob,
                r.concentration
            ));
        }
        out
    }
}

/// Monte Carlo exit statistics over the full schedule.
pub fn run_exit_mc(exp: &ExitExperiment) -> Result<KramersReport> {
    let ensembles = simulate_schedule(exp)?;
    let vbar = exp.barrier.as_ref().map(|b| b.vbar);
    let delta = vbar.map(|v| exp.window_frac * v);
    let mut rows = Vec::with_capacity(ensembles.len());
    let mut flags = Vec::new();
    for (e, (cap, samples)) in ensembles.iter().enumerate() {
        let eps = exp.schedule[e];
        let n = samples.len();
        let exits = samples.iter().filter(|s| s.exited).count();
        let timeouts = n - exits;
        let timeout_frac = timeouts as f64 / n as f64;
        let sigmas: Vec<f64> = samples.iter().map(|s| s.sigma).collect();
        let mean_sigma = sigmas.iter().sum::<f64>() / n as f64;
        let mean_ci = bootstrap_ci(n, exp.seed, "exit-boot-mean", e as u64, |idx| {
            idx.iter().map(|&i| sigmas[i]).sum::<f64>() / idx.len() as f64
        });
        let eps_ln_mean = eps * mean_sigma.ln();

        let window = match (vbar, delta) {
            (Some(v), Some(d)) => (((v - d) / eps).exp(), ((v + d) / eps).exp()),
            _ => (f64::NAN, f64::NAN),
        };
        let in_window: Vec<bool> = samples
            .iter()
            .map(|s| s.exited && s.sigma > window.0 && s.sigma < window.1)
            .collect();
        let window_prob = if window.0.is_nan() {
            f64::NAN
        } else {
            in_window.iter().filter(|&&b| b).count() as f64 / n as f64
        };
        let window_ci = if window.0.is_nan() {
            (f64::NAN, f64::NAN)
        } else {
            bootstrap_ci(n, exp.seed, "exit-boot-window", e as u64, |idx| {
                idx.iter().filter(|&&i| in_window[i]).count() as f64 / idx.len() as f64
            })
        };
        if timeouts > 0 && window.1.is_finite() && *cap < window.1 {
            flags.push(format!(
                "WINDOW-CENSORED eps={eps} t_cap={cap} window_hi={}",
                window.1
            ));
        }

        let conc_flags: Vec<Option<bool>> = samples
            .iter()
            .map(|s| match (&s.point, exp.barrier.as_ref()) {
                (Some(p), Some(b)) => Some(b.dist_to_argmins(p) < exp.loc_delta),
                _ => None,
            })
            .collect();
        let conc_hits = conc_flags.iter().filter(|c| **c == Some(true)).count();
        let concentration = if exp.barrier.is_none() || exits == 0 {
            f64::NAN
        } else {
            conc_hits as f64 / exits as f64
        };
        let concentration_ci = if concentration.is_nan() {
            (f64::NAN, f64::NAN)
        } else {
            bootstrap_ci(n, exp.seed, "exit-boot-conc", e as u64, |idx| {
                let mut hit = 0usize;
                let mut tot = 0usize;
                for &i in idx {
                    match conc_flags[i] {
                        Some(true) => {
                            hit += 1;
                            tot += 1;
                        }
                        Some(false) => tot += 1,
                        None => {}
                    }
                }
                if tot == 0 {
                    f64::NAN
                } else {
                    hit as f64 / tot as f64
                }
            })
        };

        if timeout_frac > TIMEOUT_INVALID_FRAC {
            flags.push(format!(
                "INVALID-FOR-MEAN eps={eps} timeout_frac={timeout_frac}"
            ));
        }
        rows.push(EpsStats {
            eps,
            t_cap: *cap,
            exits,
            timeouts,
            timeout_frac,
            mean_sigma,
            mean_ci,
            eps_ln_mean,
            window,
            window_prob,
            window_ci,
            concentration,
            concentration_ci,
        });
    }

    let (spearman_gap, fit) = match vbar {
        Some(v) => {
            let xs: Vec<f64> = rows.iter().map(|r| r.eps).collect();
            let gaps: Vec<f64> = rows.iter().map(|r| (r.eps_ln_mean - v).abs()).collect();
            let ys: Vec<f64> = rows.iter().map(|r| r.eps_ln_mean).collect();
            (spearman(&xs, &gaps), fit_line(&xs, &ys))
        }
        None => (f64::NAN, (f64::NAN, f64::NAN)),
    };

    let last = ensembles.len() - 1;
    let pts: Vec<&Vec<f64>> = ensembles[last]
        .1
        .iter()
        .filter_map(|s| s.point.as_ref())
        .collect();
    let hist = exit_histogram(&pts, exp.barrier.as_ref(), exp.system.dim());

    Ok(KramersReport {
        rows,
        vbar,
        delta,
        loc_delta: exp.loc_delta,
        spearman_gap,
        fit,
        hist,
        flags,
    })
}

/// Per-level exit-location row.
#[derive(Clone, Debug)]
pub struct LocRow {
    pub eps: f64,
    pub exits: usize,
    pub timeouts: usize,
    /// P(dist(X_sigma, argmin set) < delta | exit), estimated among exited
    /// paths.
    pub prob: f64,
    pub ci: (f64, f64),
    /// Fraction of exited paths whose nearest argmin is the k-th one *and*
    /// which land within delta of it; sums to `prob` over the set.
    pub per_argmin: Vec<f64>,
}

/// Exit-location concentration report.
#[derive(Clone, Debug)]
pub struct LocationReport {
    pub rows: Vec<LocRow>,
    /// "unique-argmin" or "symmetric-pair", matching the size of the barrier
    /// argmin set.
    pub label: String,
    /// Value gap to the best boundary candidate outside the argmin set, when
    /// the optimizer surfaced one.
    pub uniqueness_gap: Option<f64>,
    /// True when the concentration sequence is nondecreasing along the
    /// schedule within bootstrap CIs (a row violates only if its CI sits
    /// strictly below the previous row's lower bound).
    pub nondecreasing_within_ci: bool,
    pub delta: f64,
    /// Histogram at the smallest level.
    pub hist: Vec<HistBin>,
    pub flags: Vec<String>,
}

impl LocationReport {
    pub fn describe(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("location.mode = {}\n", self.label));
        out.push_str(&format!("location.delta = {}\n", self.delta));
        match self.uniqueness_gap {
            Some(g) => out.push_str(&format!("location.uniqueness_gap = {g}\n")),
            None => out.push_str("location.uniqueness_gap = none\n"),
        }
        out.push_str(&format!(
            "location.nondecreasing_within_ci = {}\n",
            self.nondecreasing_within_ci
        ));
        for (k, r) in self.rows.iter().enumerate() {
            let p = format!("location.row[{k}]");
            out.push_str(&format!("{p}.eps = {}\n", r.eps));
            out.push_str(&format!("{p}.exits = {}\n", r.exits));
            out.push_str(&format!("{p}.timeouts = {}\n", r.timeouts));
            out.push_str(&format!("{p}.prob = {}\n", r.prob));
            out.push_str(&format!("{p}.ci = {} {}\n", r.ci.0, r.ci.1));
            for (j, m) in r.per_argmin.iter().enumerate() {
                out.push_str(&format!("{p}.argmin[{j}].mass = {m}\n"));
            }
        }
        for (k, b) in self.hist.iter().enumerate() {
            out.push_str(&format!("location.hist[{k}] = {} {} {}\n", b.lo, b.hi, b.count));
        }
        for f in &self.flags {
            out.push_str(&format!("location.flag = {f}\n"));
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = String::from("eps,exits,timeouts,prob,ci_lo,ci_hi\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.eps, r.exits, r.timeouts, r.prob, r.ci.0, r.ci.1
            ));
        }
        out
    }
}

/// Exit-location concentration around the barrier argmin set at radius
/// `delta`.  Shares the simulation streams with [`run_exit_mc`], so the rows
/// describe the same ensembles.
pub fn exit_location_stats(exp: &ExitExperiment, delta: f64) -> Result<LocationReport> {
    let Some(barrier) = exp.barrier.as_ref() else {
        return Err(Error::Invalid(
            "exit-location statistics need a barrier reference for the argmin set".into(),
        ));
    };
    if !(delta > 0.0) {
        return Err(Error::Invalid(format!(
            "concentration radius must be positive, got {delta}"
        )));
    }
    let ensembles = simulate_schedule(exp)?;
    let mut rows = Vec::with_capacity(ensembles.len());
    let mut flags = Vec::new();
    for (e, (_, samples)) in ensembles.iter().enumerate() {
        let eps = exp.schedule[e];
        let n = samples.len();
        let exits = samples.iter().filter(|s| s.exited).count();
        let timeouts = n - exits;
        // Nearest argmin index and hit flag per exited path.
        let marks: Vec<Option<(usize, bool)>> = samples
            .iter()
            .map(|s| {
                s.point.as_ref().map(|p| {
                    let mut best = 0usize;
                    let mut bd = f64::INFINITY;
                    for (k, z) in barrier.argmins.iter().enumerate() {
                        let d = la::dist(p, z);
                        if d < bd {
                            bd = d;
                            best = k;
                        }
                    }
                    (best, bd < delta)
                })
            })
            .collect();
        let hits = marks.iter().flatten().filter(|(_, h)| *h).count();
        let prob = if exits == 0 { f64::NAN } else { hits as f64 / exits as f64 };
        let ci = if exits == 0 {
            (f64::NAN, f64::NAN)
        } else {
            bootstrap_ci(n, exp.seed, "loc-boot", e as u64, |idx| {
                let mut hit = 0usize;
                let mut tot = 0usize;
                for &i in idx {
                    if let Some((_, h)) = marks[i] {
                        tot += 1;
                        hit += h as usize;
                    }
                }
                if tot == 0 {
                    f64::NAN
                } else {
                    hit as f64 / tot as f64
                }
            })
        };
        let mut per_argmin = vec![0.0; barrier.argmins.len()];
        for m in marks.iter().flatten() {
            if m.1 {
                per_argmin[m.0] += 1.0;
            }
        }
        if exits > 0 {
            for v in per_argmin.iter_mut() {
                *v /= exits as f64;
            }
        }
        if exits == 0 {
            flags.push(format!("NO-EXITS eps={eps}"));
        }
        rows.push(LocRow { eps, exits, timeouts, prob, ci, per_argmin });
    }

    let mut nondecreasing = true;
    let finite: Vec<&LocRow> = rows.iter().filter(|r| !r.prob.is_nan()).collect();
    for w in finite.windows(2) {
        // Schedule runs toward smaller eps; the later row may only drop below
        // the earlier one's CI by sampling noise.
        if w[1].ci.1 < w[0].ci.0 {
            nondecreasing = false;
        }
    }

    let last = ensembles.len() - 1;
    let pts: Vec<&Vec<f64>> = ensembles[last]
        .1
        .iter()
        .filter_map(|s| s.point.as_ref())
        .collect();
    let hist = exit_histogram(&pts, Some(barrier), exp.system.dim());

    let label =
        if barrier.argmins.len() > 1 { "symmetric-pair" } else { "unique-argmin" }.to_string();
    Ok(LocationReport {
        rows,
        label,
        uniqueness_gap: barrier.gap,
        nondecreasing_within_ci: nondecreasing,
        delta,
        hist,
        flags,
    })
}

/// Per-level cycle-decomposition row.
#[derive(Clone, Debug)]
pub struct CycleRow {
    pub eps: f64,
    pub paths: usize,
    pub exits: usize,
    pub timeouts: usize,
    /// Resolved attempts pooled over paths (an attempt still in flight at
    /// timeout is censored and not counted).
    pub attempts: u64,
    /// Pooled per-attempt exit probability, exits / attempts.
    pub q_hat: f64,
    /// Mean attempts per exited path.
    pub mean_attempts: f64,
    /// Mean duration of *failed* cycles (ball-to-ball return through the
    /// outer shell).
    pub mean_cycle: f64,
    pub failed_cycles: u64,
    pub mean_sigma: f64,
    /// mean_sigma / (mean_attempts * mean_cycle); the renewal picture puts
    /// this near 1.
    pub wald_ratio: f64,
    pub wald_ok: bool,
    /// Attempt-count distribution over exited paths.
    pub attempts_hist: Vec<(u32, usize)>,
}

/// Cycle-decomposition report.
#[derive(Clone, Debug)]
pub struct CycleReport {
    pub rows: Vec<CycleRow>,
    pub rho: f64,
    pub rho_prime: f64,
    pub flags: Vec<String>,
}

impl CycleReport {
    pub fn describe(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("cycle.rho = {}\n", self.rho));
        out.push_str(&format!("cycle.rho_prime = {}\n", self.rho_prime));
        for (k, r) in self.rows.iter().enumerate() {
            let p = format!("cycle.row[{k}]");
            out.push_str(&format!("{p}.eps = {}\n", r.eps));
            out.push_str(&format!("{p}.paths = {}\n", r.paths));
            out.push_str(&format!("{p}.exits = {}\n", r.exits));
            out.push_str(&format!("{p}.timeouts = {}\n", r.timeouts));
            out.push_str(&format!("{p}.attempts = {}\n", r.attempts));
            out.push_str(&format!("{p}.q_hat = {}\n", r.q_hat));
            out.push_str(&format!("{p}.mean_attempts = {}\n", r.mean_attempts));
            out.push_str(&format!("{p}.mean_cycle = {}\n", r.mean_cycle));
            out.push_str(&format!("{p}.failed_cycles = {}\n", r.failed_cycles));
            out.push_str(&format!("{p}.mean_sigma = {}\n", r.mean_sigma));
            out.push_str(&format!("{p}.wald_ratio = {}\n", r.wald_ratio));
            out.push_str(&format!("{p}.wald_ok = {}\n", r.wald_ok));
            for (a, c) in &r.attempts_hist {
                out.push_str(&format!("{p}.attempts_hist[{a}] = {c}\n"));
            }
        }
        for f in &self.flags {
            out.push_str(&format!("cycle.flag = {f}\n"));
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = String::from("eps,attempts,q_hat,mean_attempts,mean_cycle,wald_ratio\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.eps, r.attempts, r.q_hat, r.mean_attempts, r.mean_cycle, r.wald_ratio
            ));
        }
        out
    }
}

/// Ladder bookkeeping for one path.
#[derive(Clone, Copy)]
enum LadderState {
    /// Before the first visit to the inner ball.
    Descending,
    /// Inside a cycle, waiting to cross the outer shell; `zeta` is the cycle
    /// start (last entry into the inner ball).
    Inner { zeta: f64 },
    /// Past the outer shell: an attempt is in flight; it fails on return to
    /// the inner ball and succeeds if the path exits first.
    Attempting { zeta: f64 },
}

/// Cycle (renewal) decomposition diagnostic.  Each path is watched through
/// the stopping-time ladder: entries into the inner ball B_rho(0) start
/// cycles, crossings of the outer shell |x| = rho_prime open attempts, and an
/// attempt either fails (return to B_rho, closing a cycle) or succeeds (exit
/// from the domain).  An exit with no open attempt — a single jump can clear
/// both shells between observed states, or the path may exit before ever
/// reaching the inner ball — still counts as one successful attempt.  The
/// ladder is evaluated at the integrator's observation resolution.  Timeout
/// paths contribute their failed cycles but any attempt still in flight is
/// censored.
///
/// The renewal picture assumes the closed rho_prime-ball sits inside the
/// domain.  That is not enforced: an outer radius at or beyond the boundary
/// degenerates gracefully (no attempt can fail, so q = 1) and is flagged
/// SHELL-TOUCHES-BOUNDARY rather than rejected.
pub fn cycle_diagnostic(exp: &ExitExperiment, rho: f64, rho_prime: f64) -> Result<CycleReport> {
    if !(rho > 0.0 && rho < rho_prime) {
        return Err(Error::Invalid(format!(
            "need 0 < rho < rho_prime, got rho={rho} rho_prime={rho_prime}"
        )));
    }
    let mut flags = Vec::new();
    // Axis probes for the closed rho_prime-ball sitting inside the domain.
    let d = exp.system.dim();
    'probe: for k in 0..d {
        for s in [-1.0, 1.0] {
            let mut p = vec![0.0; d];
            p[k] = s * rho_prime;
            if exp.system.domain.sdf(&p) >= 0.0 {
                flags.push(format!("SHELL-TOUCHES-BOUNDARY rho_prime={rho_prime}"));
                break 'probe;
            }
        }
    }

    struct PathLadder {
        exited: bool,
        sigma: f64,
        /// Resolved attempts (failed + final success when exited).
        attempts: u32,
        cycle_total: f64,
        failed: u32,
    }

    let mut rows = Vec::with_capacity(exp.schedule.len());
    for (e, &eps) in exp.schedule.iter().enumerate() {
        let cap = exp.cap_for(eps);
        let ladders: Vec<Result<PathLadder>> = (0..exp.n)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng_for(exp.seed, "exit-mc", ((e as u64) << 32) | i as u64);
                let mut state = if la::norm(&exp.start) <= rho {
                    LadderState::Inner { zeta: 0.0 }
                } else {
                    LadderState::Descending
                };
                let mut failed = 0u32;
                let mut cycle_total = 0.0;
                let outcome = first_exit_observed(
                    &exp.system,
                    &exp.measure,
                    &exp.start,
                    eps,
                    &mut rng,
                    &exp.sde,
                    cap,
                    |t, x| {
                        let r = la::norm(x);
                        match state {
                            LadderState::Descending => {
                                if r <= rho {
                                    state = LadderState::Inner { zeta: t };
                                }
                            }
                            LadderState::Inner { zeta } => {
                                if r >= rho_prime {
                                    state = LadderState::Attempting { zeta };
                                }
                            }
                            LadderState::Attempting { zeta } => {
                                if r <= rho {
                                    failed += 1;
                                    cycle_total += t - zeta;
                                    state = LadderState::Inner { zeta: t };
                                }
                            }
                        }
                    },
                )?;
                let (exited, sigma) = match outcome {
                    ExitOutcome::Exited { time, .. } => (true, time),
                    ExitOutcome::Timeout => (false, cap),
                };
                let attempts = failed + exited as u32;
                Ok(PathLadder { exited, sigma, attempts, cycle_total, failed })
            })
            .collect();
        let mut paths = Vec::with_capacity(exp.n);
        for l in ladders {
            paths.push(l?);
        }

        let exits = paths.iter().filter(|p| p.exited).count();
        let timeouts = exp.n - exits;
        let attempts: u64 = paths.iter().map(|p| p.attempts as u64).sum();
        let failed_cycles: u64 = paths.iter().map(|p| p.failed as u64).sum();
        let cycle_sum: f64 = paths.iter().map(|p| p.cycle_total).sum();
        let q_hat = if attempts == 0 { f64::NAN } else { exits as f64 / attempts as f64 };
        let mean_attempts = if exits == 0 {
            f64::NAN
        } else {
            paths
                .iter()
                .filter(|p| p.exited)
                .map(|p| p.attempts as f64)
                .sum::<f64>()
                / exits as f64
        };
        let mean_cycle = if failed_cycles == 0 {
            flags.push(format!("NO-FAILED-CYCLES eps={eps}"));
            f64::NAN
        } else {
            cycle_sum / failed_cycles as f64
        };
        let mean_sigma = paths.iter().map(|p| p.sigma).sum::<f64>() / exp.n as f64;
        let wald_ratio = mean_sigma / (mean_attempts * mean_cycle);
        let wald_ok = (wald_ratio - 1.0).abs() <= 0.15;
        let mut hist_map = std::collections::BTreeMap::new();
        for p in paths.iter().filter(|p| p.exited) {
            *hist_map.entry(p.attempts).or_insert(0usize) += 1;
        }
        rows.push(CycleRow {
            eps,
            paths: exp.n,
            exits,
            timeouts,
            attempts,
            q_hat,
            mean_attempts,
            mean_cycle,
            failed_cycles,
            mean_sigma,
            wald_ratio,
            wald_ok,
            attempts_hist: hist_map.into_iter().collect(),
        });
    }
    Ok(CycleReport { rows, rho, rho_prime, flags })
}

/// Per-level importance-sampling row.  `weighted_p` estimates P(sigma <= T)
/// under the original law from tilted paths; `direct_p` is the plain Monte
/// Carlo estimate from matching streams.
#[derive(Clone, Debug)]
pub struct IsRow {
    pub eps: f64,
    pub weighted_p: f64,
    pub weighted_se: f64,
    pub direct_p: f64,
    pub direct_se: f64,
    /// Effective sample size (sum w)^2 / sum w^2 of the tilted ensemble.
    pub ess: f64,
    /// Per-sample variance ratio direct/weighted; above 1 the tilt helps.
    pub var_ratio: f64,
    pub unreliable: bool,
}

/// Importance-sampling report for P(sigma <= T) with T the tilt's horizon.
#[derive(Clone, Debug)]
pub struct IsReport {
    pub horizon: f64,
    pub rows: Vec<IsRow>,
    pub flags: Vec<String>,
}

impl IsReport {
    pub fn describe(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("is.horizon = {}\n", self.horizon));
        for (k, r) in self.rows.iter().enumerate() {
            let p = format!("is.row[{k}]");
            out.push_str(&format!("{p}.eps = {}\n", r.eps));
            out.push_str(&format!("{p}.weighted_p = {}\n", r.weighted_p));
            out.push_str(&format!("{p}.weighted_se = {}\n", r.weighted_se));
            out.push_str(&format!("{p}.direct_p = {}\n", r.direct_p));
            out.push_str(&format!("{p}.direct_se = {}\n", r.direct_se));
            out.push_str(&format!("{p}.ess = {}\n", r.ess));
            out.push_str(&format!("{p}.var_ratio = {}\n", r.var_ratio));
            out.push_str(&format!("{p}.unreliable = {}\n", r.unreliable));
        }
        for f in &self.flags {
            out.push_str(&format!("is.flag = {f}\n"));
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = String::from("eps,weighted_p,weighted_se,direct_p,direct_se,ess,var_ratio\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.eps, r.weighted_p, r.weighted_se, r.direct_p, r.direct_se, r.ess, r.var_ratio
            ));
        }
        out
    }
}

/// Importance-sampled exit probability P(sigma <= T), T = tilt.horizon().
///
/// Each path index drives *both* estimators from the same stream: the tilted
/// arm realizes the jump measure under the tilt and drives the dynamics
/// through the realized jumps; the direct arm re-derives a plain path from an
/// identical stream.  Weights are Girsanov factors evaluated at the stopped
/// horizon T ^ sigma — only jumps up to the stop enter, and the compensator
/// integral runs to the stop — so an identity tilt reproduces the direct arm
/// bitwise.  Rows whose effective sample size drops below 50 are flagged
/// UNRELIABLE; the variance comparison is reported, not asserted.
pub fn importance_sampled_exit(exp: &ExitExperiment, tilt: &Control) -> Result<IsReport> {
    let horizon = tilt.horizon();
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Invalid(format!(
            "importance sampling needs a finite positive tilt horizon, got {horizon}"
        )));
    }
    let mut rows = Vec::with_capacity(exp.schedule.len());
    let mut flags = Vec::new();
    for (e, &eps) in exp.schedule.iter().enumerate() {
        let triples: Vec<Result<(f64, f64, f64)>> = (0..exp.n)
            .into_par_iter()
            .map(|i| {
                let key = ((e as u64) << 32) | i as u64;

                // Tilted arm.
                let mut rng = rng_for(exp.seed, "is-exit", key);
                let params = NoiseParams::new(eps, &exp.measure, horizon)?;
                let jumps = simulate_tilted_prm(&params, tilt, &mut rng)?;
                let outcome = first_exit_given_jumps(
                    &exp.system,
                    &exp.measure,
                    &exp.start,
                    eps,
                    horizon,
                    &jumps,
                    &exp.sde,
                )?;
                let (exited, stopped) = match &outcome {
                    ExitOutcome::Exited { time, .. } => (true, *time),
                    ExitOutcome::Timeout => (false, horizon),
                };
                let k = jumps.partition_point(|j| j.time <= stopped);
                let stopped_params = NoiseParams::new(eps, &exp.measure, stopped)?;
                let log_w = girsanov_log_weight(&stopped_params, tilt, &jumps[..k])?;
                let w = log_w.exp();
                let weighted = w * exited as u32 as f64;

                // Direct arm, matching stream.
                let mut rng_d = rng_for(exp.seed, "is-exit", key);
                let direct = match first_exit(
                    &exp.system,
                    &exp.measure,
                    &exp.start,
                    eps,
                    &mut rng_d,
                    &exp.sde,
                    horizon,
                )? {
                    ExitOutcome::Exited { .. } => 1.0,
                    ExitOutcome::Timeout => 0.0,
                };
                Ok((weighted, w, direct))
            })
            .collect();
        let mut weighted = Vec::with_capacity(exp.n);
        let mut ws = Vec::with_capacity(exp.n);
        let mut direct = Vec::with_capacity(exp.n);
        for t in triples {
            let (a, w, d) = t?;
            weighted.push(a);
            ws.push(w);
            direct.push(d);
        }
        let n = exp.n as f64;
        let mean_se = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
            (m, var, (var / n).sqrt())
        };
        let (weighted_p, wvar, weighted_se) = mean_se(&weighted);
        let (direct_p, dvar, direct_se) = mean_se(&direct);
        let wsum: f64 = ws.iter().sum();
        let w2sum: f64 = ws.iter().map(|w| w * w).sum();
        let ess = if w2sum > 0.0 { wsum * wsum / w2sum } else { 0.0 };
        let var_ratio = dvar / wvar;
        let unreliable = ess < 50.0;
        if unreliable {
            flags.push(format!("UNRELIABLE eps={eps} ess={ess}"));
        }
        if var_ratio > 1.0 {
            flags.push(format!("IS-VARIANCE-GAIN eps={eps} ratio={var_ratio}"));
        }
        rows.push(IsRow {
            eps,
            weighted_p,
            weighted_se,
            direct_p,
            direct_se,
            ess,
            var_ratio,
            unreliable,
        });
    }
    Ok(IsReport { horizon, rows, flags })
}
