//! Quasi-potential of the controlled dynamics by direct variational descent.
//!
//! The transfer cost over a fixed horizon t,
//!
//!     V(x, y, t) = inf { E_t(g) : the controlled path from x reaches y at t },
//!
//! is minimised over polyline paths (free interior knots and knot times)
//! using the constructive mark-ball control of [`crate::controls`]: every
//! admissible polyline maps to a control whose entropy is computable to
//! quadrature accuracy, so each candidate yields a certified upper bound.
//! The quasi-potential and the barrier height follow by outer minimisation,
//!
//!     V(x, z) = inf_{t > 0} V(x, z, t),      Vbar = inf_{z on bdry D} V(0, z),
//!
//! with the horizon handled on a geometric grid plus golden-section
//! refinement, and the boundary handled by the interval endpoints in one
//! dimension or a mesh with local refinement in higher dimensions.
//!
//! Certification discipline: a reported value is always the exactly
//! re-evaluated entropy of a returned control whose controlled-ODE endpoint
//! lands within `endpoint_tol` of the target - never the raw optimizer
//! objective.  The simplex search itself runs on a fast surrogate (a cubic
//! spline of the one-dimensional ball entropy rate, valid when the noise
//! coefficient is constant and the mark density is everywhere positive; the
//! exact entropy otherwise), which keeps a candidate evaluation at the
//! microsecond scale without weakening the certificates.
//!
//! After the ball-family search an optional piecewise-constant tilt
//! relaxation runs on a fixed time/mark grid.  That family can linger and
//! mix jump sizes, which the ball construction cannot, so it often lands
//! strictly below the ball value; the difference is reported as an
//! optimality-gap heuristic for the ball family.

use rayon::prelude::*;

use rand::Rng;

use crate::controls::{control_for_path, solve_controlled_ode, Control, GridTiltControl};
use crate::dynamics::{flow_deterministic, Domain, GCoef, SystemSpec};
use crate::interp::MonotoneCubic;
use crate::la;
use crate::measures::LevyMeasure;
use crate::quad::{self, QuadOpts};
use crate::stream::rng_for;
use crate::{Error, Result};

/// Budget and tolerance knobs for the variational search.
#[derive(Clone, Debug)]
pub struct QpOpts {
    /// Extra simplex starts per refinement round; the incumbent (straight
    /// line on the first round) always runs as start zero.
    pub restarts: usize,
    /// Simplex iteration budget per start.
    pub max_iter: usize,
    /// Segment count of the initial polyline.
    pub init_segments: usize,
    /// Knot-doubling rounds after the initial one.
    pub max_refine_rounds: usize,
    /// Stop refining once a round improves the value by less than this
    /// relative amount.
    pub refine_rel_tol: f64,
    /// Horizon grid for the outer minimisation over t.
    pub t_grid: Vec<f64>,
    /// Golden-section probes (in log-horizon) around the best grid entry.
    pub golden_iters: usize,
    /// Certificate: the controlled-ODE endpoint must match the target this
    /// closely, else the candidate is rejected.
    pub endpoint_tol: f64,
    /// Certificate ODE step.
    pub ode_dt: f64,
    /// Run the piecewise-constant tilt relaxation after the ball search.
    pub grid_stage: bool,
    /// Stream seed for the start perturbations.
    pub seed: u64,
}

impl Default for QpOpts {
    fn default() -> Self {
        QpOpts {
            restarts: 2,
            max_iter: 400,
            init_segments: 2,
            max_refine_rounds: 3,
            refine_rel_tol: 1e-4,
            t_grid: vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0],
            golden_iters: 8,
            endpoint_tol: 1e-4,
            ode_dt: 1e-3,
            grid_stage: true,
            seed: 0,
        }
    }
}

impl QpOpts {
    /// Trimmed budget for bulk probing (triangle inequalities, continuity
    /// tables): fewer starts, no golden refinement, no relaxation stage.
    pub fn probe() -> Self {
        QpOpts {
            restarts: 1,
            max_iter: 160,
            max_refine_rounds: 1,
            golden_iters: 0,
            grid_stage: false,
            ..QpOpts::default()
        }
    }
}

/// Polyline steering candidate: knot times starting at zero and strictly
/// increasing, knot states with the first one pinned at the start point.
#[derive(Clone, Debug)]
pub struct PathCandidate {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl PathCandidate {
    pub fn terminal(&self) -> &[f64] {
        self.states.last().expect("path candidate has at least one knot")
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() || self.times.len() != self.states.len() {
            return Err(Error::Invalid("path candidate needs matching times and states".into()));
        }
        for w in self.times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Invalid("path candidate times must increase strictly".into()));
            }
        }
        if self.states.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("path candidate states must be finite".into()));
        }
        Ok(())
    }
}

/// One optimizer stage summary: what ran, how many objective evaluations it
/// spent, and the best value it reached.
#[derive(Clone, Debug)]
pub struct TraceEntry {
    pub stage: String,
    pub evaluations: usize,
    pub value: f64,
}

/// Outcome of a quasi-potential search.  `value` is a certified upper
/// bound: it equals the entropy of `control`, whose controlled ODE was
/// re-solved and verified to land on the target.
#[derive(Clone, Debug)]
pub struct QuasiPotentialResult {
    pub value: f64,
    /// Horizon of the winning candidate.
    pub horizon: f64,
    pub path: PathCandidate,
    pub control: Control,
    pub trace: Vec<TraceEntry>,
    pub knot_count: usize,
    pub refinement_level: usize,
    /// Boundary argmin (barrier searches only).
    pub z_star: Option<Vec<f64>>,
    /// Gap to the best boundary value away from the argmin; a uniqueness
    /// proxy for the exit-location concentration experiments.
    pub runner_up_gap: Option<f64>,
    /// Boundary point realizing the runner-up value; with a near-zero gap it
    /// is the second member of the argmin set (symmetric domains).
    pub runner_up_point: Option<Vec<f64>>,
    /// Ball-family minimum minus the tilt-relaxation minimum when both
    /// stages certified a candidate; positive means the relaxation undercut
    /// the ball family by that much.
    pub relaxation_delta: Option<f64>,
}

impl QuasiPotentialResult {
    pub fn describe(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("qp.value = {:.12e}\n", self.value));
        out.push_str("qp.value.kind = certified-upper-bound\n");
        out.push_str(&format!("qp.horizon = {}\n", self.horizon));
        out.push_str(&format!("qp.knots = {}\n", self.knot_count));
        out.push_str(&format!("qp.refinement_level = {}\n", self.refinement_level));
        if let Some(z) = &self.z_star {
            out.push_str(&format!("qp.z_star = {}\n", fmt_point(z)));
        }
        if let Some(gap) = self.runner_up_gap {
            out.push_str(&format!("qp.runner_up_gap = {gap:.6e}\n"));
        }
        if let Some(p) = &self.runner_up_point {
            out.push_str(&format!("qp.runner_up = {}\n", fmt_point(p)));
        }
        if let Some(delta) = self.relaxation_delta {
            out.push_str(&format!("qp.relaxation_delta = {delta:.6e}\n"));
        }
        for (i, e) in self.trace.iter().enumerate() {
            out.push_str(&format!(
                "qp.trace.{i} = stage={} evals={} value={:.6e}\n",
                e.stage, e.evaluations, e.value
            ));
        }
        let knots: Vec<String> = self
            .path
            .times
            .iter()
            .zip(&self.path.states)
            .map(|(t, x)| format!("{t:.6}:{}", fmt_point(x)))
            .collect();
        out.push_str(&format!("qp.path = {}\n", knots.join("; ")));
        out.push_str(&self.control.describe());
        out
    }
}

fn fmt_point(p: &[f64]) -> String {
    p.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(",")
}

/// Integrand of the ball entropy rate, written through logs so it stays
/// stable when the density underflows: l(1 + k/rho) rho = (rho + k) (ln(rho
/// + k) - ln rho) - k.
fn ball_rate_integrand(rho: f64, kappa: f64) -> f64 {
    if rho <= 0.0 {
        return f64::INFINITY;
    }
    (rho + kappa) * ((rho + kappa).ln() - rho.ln()) - kappa
}

/// Exact one-dimensional ball entropy rate at center c for a unit-radius
/// bump of height kappa / rho.
fn ball_rate_1d(measure: &LevyMeasure, c: f64, kappa: f64) -> Result<f64> {
    let opts = QuadOpts { abs_tol: 1e-12, rel_tol: 1e-9, ..QuadOpts::default() };
    quad::integrate(
        |z| ball_rate_integrand(measure.lebesgue_density(&[z]).unwrap_or(0.0), kappa),
        c - 1.0,
        c + 1.0,
        opts,
    )
}

/// Cubic-spline surrogate of the one-dimensional ball entropy rate as a
/// function of the bump center.  Valid only when the noise coefficient is a
/// nonzero constant and the mark density is strictly positive everywhere
/// (then the ball radius is pinned at 1 and kappa at 1/(2|G|)).  The knot
/// derivatives are exact - the rate is an integral over [c-1, c+1] of a
/// c-free integrand, so d/dc is just the boundary-term difference - which
/// makes the interpolation error O(h^4).
struct RateProfile {
    spline: MonotoneCubic,
    kappa: f64,
    g_sign: f64,
    lo: f64,
    hi: f64,
}

impl RateProfile {
    fn build(system: &SystemSpec, measure: &LevyMeasure) -> Option<RateProfile> {
        if system.dim() != 1 || measure.dim() != 1 {
            return None;
        }
        let g0 = match system.g {
            GCoef::Constant(g) => g,
            _ => return None,
        };
        if g0 == 0.0 || !measure.dist_to_support_complement(&[0.0]).is_infinite() {
            return None;
        }
        let kappa = 1.0 / (2.0 * g0.abs());
        let (lo, hi) = (-8.0f64, 8.0f64);
        let n = 2048usize;
        let mut xs = Vec::with_capacity(n + 1);
        let mut ys = Vec::with_capacity(n + 1);
        let mut ds = Vec::with_capacity(n + 1);
        let f = |z: f64| ball_rate_integrand(measure.lebesgue_density(&[z]).unwrap_or(0.0), kappa);
        for i in 0..=n {
            let c = lo + (hi - lo) * i as f64 / n as f64;
            let y = ball_rate_1d(measure, c, kappa).ok()?;
            if !y.is_finite() {
                return None;
            }
            xs.push(c);
            ys.push(y);
            ds.push(f(c + 1.0) - f(c - 1.0));
        }
        let spline = MonotoneCubic::with_slopes(xs, ys, ds).ok()?;
        Some(RateProfile { spline, kappa, g_sign: g0.signum(), lo, hi })
    }

    fn rate(&self, c: f64, measure: &LevyMeasure) -> f64 {
        if c < self.lo || c > self.hi {
            // Rare far-field query; fall back to direct quadrature rather
            // than extrapolate a clamped spline below the true rate.
            ball_rate_1d(measure, c, self.kappa).unwrap_or(f64::INFINITY)
        } else {
            self.spline.eval(c)
        }
    }
}

/// Shared state for polyline objective evaluations.
struct Evaluator<'a> {
    system: &'a SystemSpec,
    measure: &'a LevyMeasure,
    profile: Option<RateProfile>,
}

impl<'a> Evaluator<'a> {
    fn new(system: &'a SystemSpec, measure: &'a LevyMeasure) -> Self {
        Evaluator { system, measure, profile: RateProfile::build(system, measure) }
    }

    /// Surrogate polyline objective; +inf encodes inadmissibility.  With a
    /// rate profile this costs microseconds; otherwise it falls back to the
    /// exact control entropy.
    fn polyline_cost(&self, times: &[f64], states: &[Vec<f64>]) -> f64 {
        if let Some(p) = &self.profile {
            let mut total = 0.0;
            for k in 0..times.len() - 1 {
                let (a, b) = (times[k], times[k + 1]);
                let dur = b - a;
                if !(dur > 0.0) {
                    return f64::INFINITY;
                }
                let (xa, xb) = (states[k][0], states[k + 1][0]);
                let v = (xb - xa) / dur;
                let panels = (dur / 0.25).ceil().max(1.0) as usize;
                total += quad::gl8_panels(
                    |s| {
                        let w = (s - a) / dur;
                        let phi = xa + (xb - xa) * w;
                        let c = p.g_sign * (v - self.system.drift.eval(&[phi])[0]);
                        p.rate(c, self.measure)
                    },
                    a,
                    b,
                    panels,
                );
                if !total.is_finite() {
                    return f64::INFINITY;
                }
            }
            total
        } else {
            match control_for_path(times, states, self.system, self.measure) {
                Ok(c) => match c.entropy(self.measure) {
                    Ok(e) if e.is_finite() => e,
                    _ => f64::INFINITY,
                },
                Err(_) => f64::INFINITY,
            }
        }
    }
}

/// Flat parameterisation of a polyline with fixed endpoints and horizon:
/// interior knot states followed by log time-increment weights (the first
/// segment's weight is pinned, so times are a softmax of the rest).
struct Encoding<'a> {
    x0: &'a [f64],
    y: &'a [f64],
    t: f64,
    segs: usize,
    dim: usize,
}

impl Encoding<'_> {
    fn n_vars(&self) -> usize {
        (self.segs - 1) * (self.dim + 1)
    }

    fn decode(&self, v: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let m = self.segs - 1;
        let mut states = Vec::with_capacity(self.segs + 1);
        states.push(self.x0.to_vec());
        for k in 0..m {
            states.push(v[k * self.dim..(k + 1) * self.dim].to_vec());
        }
        states.push(self.y.to_vec());
        let mut incs = Vec::with_capacity(self.segs);
        incs.push(1.0);
        for k in 0..m {
            incs.push(v[m * self.dim + k].clamp(-6.0, 6.0).exp());
        }
        let total: f64 = incs.iter().sum();
        let mut times = Vec::with_capacity(self.segs + 1);
        times.push(0.0);
        let mut acc = 0.0;
        for k in 0..self.segs {
            acc += incs[k];
            times.push(if k + 1 == self.segs { self.t } else { self.t * acc / total });
        }
        (times, states)
    }

    fn encode(&self, times: &[f64], states: &[Vec<f64>]) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_vars());
        for state in states.iter().take(self.segs).skip(1) {
            v.extend_from_slice(state);
        }
        let d0 = (times[1] - times[0]).max(1e-12);
        for k in 1..self.segs {
            let r = ((times[k + 1] - times[k]).max(1e-12) / d0).ln();
            v.push(r.clamp(-6.0, 6.0));
        }
        debug_assert_eq!(v.len(), self.n_vars());
        v
    }
}

struct NmOutcome {
    best: Vec<f64>,
    value: f64,
    evals: usize,
}

/// Plain Nelder-Mead with standard coefficients; +inf objective values are
/// legal and simply sort last, so inadmissible regions act as walls.
fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    scales: &[f64],
    max_iter: usize,
) -> NmOutcome {
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |p: &[f64]| {
        evals += 1;
        let v = f(p);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    if n == 0 {
        let value = eval(x0);
        return NmOutcome { best: x0.to_vec(), value, evals };
    }
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    pts.push(x0.to_vec());
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += scales[i];
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p)).collect();
    for _ in 0..max_iter {
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = idx.iter().map(|&i| pts[i].clone()).collect();
        vals = idx.iter().map(|&i| vals[i]).collect();
        if !vals[0].is_finite() {
            break; // the whole simplex is inadmissible
        }
        if vals[n].is_finite() && vals[n] - vals[0] <= 1e-10 * (1.0 + vals[0].abs()) {
            break;
        }
        let mut centroid = vec![0.0; n];
        for p in pts.iter().take(n) {
            la::axpy(&mut centroid, 1.0 / n as f64, p);
        }
        let xr = la::add_scaled(&centroid, 1.0, &la::add_scaled(&centroid, -1.0, &pts[n]));
        let fr = eval(&xr);
        if fr < vals[0] {
            let xe = la::add_scaled(&centroid, 2.0, &la::add_scaled(&centroid, -1.0, &pts[n]));
            let fe = eval(&xe);
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
        } else {
            let (xc, fc) = if fr < vals[n] {
                let xc = la::add_scaled(&centroid, 0.5, &la::add_scaled(&centroid, -1.0, &pts[n]));
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = la::add_scaled(&centroid, -0.5, &la::add_scaled(&centroid, -1.0, &pts[n]));
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < vals[n].min(fr) {
                pts[n] = xc;
                vals[n] = fc;
            } else {
                for i in 1..=n {
                    pts[i] = la::lerp(&pts[0], &pts[i], 0.5);
                    vals[i] = eval(&pts[i]);
                }
            }
        }
    }
    let mut best = 0;
    for i in 1..=n {
        if vals[i] < vals[best] {
            best = i;
        }
    }
    NmOutcome { best: pts[best].clone(), value: vals[best], evals }
}

struct ScanOutcome {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    value: f64,
    evals: usize,
}

/// One multi-start simplex round at a fixed knot count.  Starts run in
/// parallel; the winner is picked by an ordered scan, so the outcome does
/// not depend on the worker count.
fn optimize_round(
    ev: &Evaluator,
    enc: &Encoding,
    init: &[f64],
    round: usize,
    opts: &QpOpts,
) -> ScanOutcome {
    let m = enc.segs - 1;
    let n = enc.n_vars();
    let mag = la::norm(enc.x0).max(la::norm(enc.y)).max(1.0);
    // The first round explores globally; refinement rounds polish a doubled
    // incumbent, so their simplex must shrink with the segment count or the
    // search destroys the warm start before it can reconverge.
    let (spread, wspread) = if round == 0 {
        (0.35 * mag, 0.35)
    } else {
        ((1.4 * mag / enc.segs as f64).max(0.02 * mag), 0.15)
    };
    let mut scales = vec![spread; n];
    for s in scales.iter_mut().skip(m * enc.dim) {
        *s = wspread;
    }
    // A simplex needs an iteration budget that grows with the dimension.
    let iters = opts.max_iter * (n + 6) / 8;
    let mut starts = vec![init.to_vec()];
    for r in 0..opts.restarts {
        let mut rng = rng_for(opts.seed, "qp-restart", ((round as u64) << 32) | r as u64);
        let mut s = init.to_vec();
        for (i, si) in s.iter_mut().enumerate() {
            let amp = if i < m * enc.dim { 3.0 * spread } else { 2.0 * wspread };
            *si += amp * (2.0 * rng.random::<f64>() - 1.0);
        }
        starts.push(s);
    }
    let outcomes: Vec<NmOutcome> = starts
        .par_iter()
        .map(|s| {
            nelder_mead(
                |v| {
                    let (times, states) = enc.decode(v);
                    ev.polyline_cost(&times, &states)
                },
                s,
                &scales,
                iters,
            )
        })
        .collect();
    let mut best = 0;
    for i in 1..outcomes.len() {
        if outcomes[i].value < outcomes[best].value {
            best = i;
        }
    }
    let evals = outcomes.iter().map(|o| o.evals).sum();
    let (times, states) = enc.decode(&outcomes[best].best);
    ScanOutcome { times, states, value: outcomes[best].value, evals }
}

/// Insert a midpoint knot into every segment.
fn double_knots(times: &[f64], states: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut t2 = vec![times[0]];
    let mut s2 = vec![states[0].clone()];
    for k in 0..times.len() - 1 {
        t2.push(0.5 * (times[k] + times[k + 1]));
        s2.push(la::lerp(&states[k], &states[k + 1], 0.5));
        t2.push(times[k + 1]);
        s2.push(states[k + 1].clone());
    }
    (t2, s2)
}

fn downsample_path(times: &[f64], states: &[Vec<f64>], max_knots: usize) -> PathCandidate {
    let stride = (times.len() / max_knots.max(2)).max(1);
    let mut ts = Vec::new();
    let mut xs = Vec::new();
    for i in 0..times.len() {
        if i % stride == 0 || i == times.len() - 1 {
            if ts.last().is_some_and(|&t| t >= times[i]) {
                continue;
            }
            ts.push(times[i]);
            xs.push(states[i].clone());
        }
    }
    PathCandidate { times: ts, states: xs }
}

struct TransferOutcome {
    value: f64,
    path: PathCandidate,
    control: Control,
    trace: Vec<TraceEntry>,
    knot_count: usize,
    refinement_level: usize,
}

fn transfer_cost_traced(
    x: &[f64],
    y: &[f64],
    t: f64,
    system: &SystemSpec,
    measure: &LevyMeasure,
    ev: &Evaluator,
    opts: &QpOpts,
) -> Result<TransferOutcome> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Invalid("transfer horizon must be positive and finite".into()));
    }
    if x.len() != system.dim() || y.len() != system.dim() {
        return Err(Error::Invalid("transfer endpoints must match the system dimension".into()));
    }
    if measure.dim() != system.dim() {
        return Err(Error::Invalid("measure dimension does not match the system".into()));
    }
    // Zero-cost shot: if the unperturbed flow already lands on y, the unit
    // control is optimal (entropy zero) and no search is needed.
    if let Ok(flow) = flow_deterministic(system, x, t, opts.ode_dt) {
        let (ts, xs): (Vec<f64>, Vec<Vec<f64>>) = flow.into_iter().unzip();
        if la::dist(xs.last().expect("flow has samples"), y) <= opts.endpoint_tol {
            let path = downsample_path(&ts, &xs, 33);
            return Ok(TransferOutcome {
                value: 0.0,
                knot_count: path.times.len(),
                path,
                control: Control::Identity { horizon: t },
                trace: vec![TraceEntry {
                    stage: "flow-shot".into(),
                    evaluations: 1,
                    value: 0.0,
                }],
                refinement_level: 0,
            });
        }
    }
    let mut segs = opts.init_segments.max(1);
    let mut inc_times: Vec<f64> = (0..=segs).map(|k| t * k as f64 / segs as f64).collect();
    let mut inc_states: Vec<Vec<f64>> =
        (0..=segs).map(|k| la::lerp(x, y, k as f64 / segs as f64)).collect();
    let mut trace = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut rounds_used = 0;
    for round in 0..=opts.max_refine_rounds {
        if round > 0 {
            let (t2, s2) = double_knots(&inc_times, &inc_states);
            inc_times = t2;
            inc_states = s2;
            segs *= 2;
        }
        let enc = Encoding { x0: x, y, t, segs, dim: system.dim() };
        let init = enc.encode(&inc_times, &inc_states);
        let out = optimize_round(ev, &enc, &init, round, opts);
        trace.push(TraceEntry {
            stage: format!("simplex segs={segs}"),
            evaluations: out.evals,
            value: out.value,
        });
        let improved = if best_val.is_finite() {
            out.value < best_val - opts.refine_rel_tol * best_val.abs().max(1e-12)
        } else {
            out.value.is_finite()
        };
        // The round started from the (doubled) incumbent, so it can only tie
        // or improve the surrogate value; adopt it unconditionally.
        if out.value <= best_val {
            best_val = out.value;
            inc_times = out.times;
            inc_states = out.states;
        }
        rounds_used = round;
        if best_val == 0.0 || (round > 0 && !improved) {
            break;
        }
    }
    if !best_val.is_finite() {
        return Err(Error::Invalid(
            "transfer: no admissible steering candidate (every probed path violates the mark-support constraint)"
                .into(),
        ));
    }
    // Certificate: exact entropy of the constructive control plus an
    // endpoint check of its controlled ODE.  The surrogate value is never
    // reported.
    let control = control_for_path(&inc_times, &inc_states, system, measure)?;
    let value = control.entropy(measure)?;
    if !value.is_finite() {
        return Err(Error::Numerical("certificate entropy is not finite".into()));
    }
    let sol = solve_controlled_ode(&control, system, measure, x, opts.ode_dt)?;
    let gap = la::dist(sol.terminal(), y);
    if gap > opts.endpoint_tol {
        return Err(Error::Numerical(format!(
            "certificate endpoint missed the target by {gap:.3e} (tolerance {:.1e})",
            opts.endpoint_tol
        )));
    }
    trace.push(TraceEntry { stage: "certificate".into(), evaluations: 1, value });
    Ok(TransferOutcome {
        value,
        path: PathCandidate { times: inc_times, states: inc_states },
        control,
        trace,
        knot_count: segs + 1,
        refinement_level: rounds_used,
    })
}

/// Certified upper bound on the transfer cost V(x, y, t), together with the
/// optimal polyline and its constructive control.
pub fn transfer_cost(
    x: &[f64],
    y: &[f64],
    t: f64,
    system: &SystemSpec,
    measure: &LevyMeasure,
    opts: &QpOpts,
) -> Result<(f64, PathCandidate, Control)> {
    let ev = Evaluator::new(system, measure);
    let out = transfer_cost_traced(x, y, t, system, measure, &ev, opts)?;
    Ok((out.value, out.path, out.control))
}

/// Closest approach of the deterministic flow from x to the target z over
/// (0, t_max]: coarse scan plus golden-section refinement of the approach
/// time.  Returns (time, distance).
fn flow_approach(
    system: &SystemSpec,
    x: &[f64],
    z: &[f64],
    t_max: f64,
) -> Option<(f64, f64)> {
    let coarse = (t_max / 16.0).min(1e-2).max(1e-6);
    let flow = flow_deterministic(system, x, t_max, coarse).ok()?;
    let mut bi = 0;
    let mut bd = f64::INFINITY;
    for (i, (_, st)) in flow.iter().enumerate() {
        let d = la::dist(st, z);
        if d < bd {
            bd = d;
            bi = i;
        }
    }
    let t_best = flow[bi].0;
    if t_best <= 1e-9 {
        return None;
    }
    let h = |tau: f64| -> f64 {
        flow_deterministic(system, x, tau, 1e-3)
            .map(|f| la::dist(&f.last().expect("flow has samples").1, z))
            .unwrap_or(f64::INFINITY)
    };
    let lo = (t_best - coarse).max(1e-9);
    let hi = (t_best + coarse).min(t_max);
    let (tau, dist) = golden_min(h, lo, hi, 40);
    Some((tau, dist))
}

fn golden_min<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

struct Candidate {
    horizon: f64,
    value: f64,
    path: PathCandidate,
    control: Control,
    knot_count: usize,
    refinement_level: usize,
}

impl Candidate {
    fn from_transfer(horizon: f64, out: TransferOutcome) -> (Candidate, TraceEntry) {
        let evals = out.trace.iter().map(|e| e.evaluations).sum();
        let entry = TraceEntry {
            stage: format!("ball t={horizon:.6}"),
            evaluations: evals,
            value: out.value,
        };
        (
            Candidate {
                horizon,
                value: out.value,
                path: out.path,
                control: out.control,
                knot_count: out.knot_count,
                refinement_level: out.refinement_level,
            },
            entry,
        )
    }
}

/// Quasi-potential V(x, z) = inf over horizons of the transfer cost, as a
/// certified upper bound with the full optimizer trace.
pub fn quasipotential_point(
    x: &[f64],
    z: &[f64],
    system: &SystemSpec,
    measure: &LevyMeasure,
    opts: &QpOpts,
) -> Result<QuasiPotentialResult> {
    if x.len() != system.dim() || z.len() != system.dim() {
        return Err(Error::Invalid("quasi-potential endpoints must match the system dimension".into()));
    }
    if la::dist(x, z) == 0.0 {
        // Identical endpoints: the infimum over horizons is zero (shrink t).
        return Ok(QuasiPotentialResult {
            value: 0.0,
            horizon: 0.0,
            path: PathCandidate { times: vec![0.0], states: vec![x.to_vec()] },
            control: Control::Identity { horizon: 0.0 },
            trace: vec![TraceEntry { stage: "degenerate".into(), evaluations: 0, value: 0.0 }],
            knot_count: 1,
            refinement_level: 0,
            z_star: None,
            runner_up_gap: None,
            runner_up_point: None,
            relaxation_delta: None,
        });
    }
    let mut horizons = opts.t_grid.clone();
    horizons.retain(|t| *t > 0.0 && t.is_finite());
    horizons.sort_by(f64::total_cmp);
    horizons.dedup();
    if horizons.is_empty() {
        return Err(Error::Invalid("horizon grid is empty".into()));
    }
    let t_max = *horizons.last().expect("nonempty grid");
    let ev = Evaluator::new(system, measure);
    let mut trace = Vec::new();

    // If the flow passes through z, the infimum is attained at cost zero.
    if let Some((tau, dist)) = flow_approach(system, x, z, t_max) {
        if dist <= opts.endpoint_tol {
            let flow = flow_deterministic(system, x, tau, opts.ode_dt)?;
            let (ts, xs): (Vec<f64>, Vec<Vec<f64>>) = flow.into_iter().unzip();
            let path = downsample_path(&ts, &xs, 33);
            return Ok(QuasiPotentialResult {
                value: 0.0,
                horizon: tau,
                knot_count: path.times.len(),
                path,
                control: Control::Identity { horizon: tau },
                trace: vec![TraceEntry {
                    stage: format!("flow-approach t={tau:.6}"),
                    evaluations: 1,
                    value: 0.0,
                }],
                refinement_level: 0,
                z_star: None,
                runner_up_gap: None,
                runner_up_point: None,
                relaxation_delta: None,
            });
        }
    }

    // Horizon grid, evaluated in parallel with an ordered reduction.
    let grid_runs: Vec<(f64, Result<TransferOutcome>)> = horizons
        .par_iter()
        .map(|&t| (t, transfer_cost_traced(x, z, t, system, measure, &ev, opts)))
        .collect();
    let mut candidates: Vec<Candidate> = Vec::new();
    let mut last_err: Option<Error> = None;
    for (t, run) in grid_runs {
        match run {
            Ok(out) => {
                let (cand, entry) = Candidate::from_transfer(t, out);
                trace.push(entry);
                candidates.push(cand);
            }
            Err(e) => {
                trace.push(TraceEntry {
                    stage: format!("ball t={t:.6}"),
                    evaluations: 0,
                    value: f64::INFINITY,
                });
                last_err = Some(e);
            }
        }
    }
    if candidates.is_empty() {
        return Err(last_err.unwrap_or_else(|| {
            Error::Invalid("quasi-potential: every horizon failed".into())
        }));
    }
    let best_idx = |cands: &[Candidate]| {
        let mut b = 0;
        for i in 1..cands.len() {
            if cands[i].value < cands[b].value {
                b = i;
            }
        }
        b
    };

    // Golden-section refinement of the horizon around the best grid entry,
    // in log-horizon so the geometric grid stays natural.
    if opts.golden_iters > 0 {
        let grid_best = candidates[best_idx(&candidates)].horizon;
        let gi = horizons
            .iter()
            .position(|&t| t == grid_best)
            .unwrap_or(horizons.len() - 1);
        let lo = if gi > 0 { horizons[gi - 1] } else { horizons[0] * 0.5 };
        let hi = if gi + 1 < horizons.len() { horizons[gi + 1] } else { t_max * 2.0 };
        let (mut a, mut b) = (lo.ln(), hi.ln());
        const INV_PHI: f64 = 0.618_033_988_749_894_8;
        let probe = |m: f64, candidates: &mut Vec<Candidate>, trace: &mut Vec<TraceEntry>| {
            let t = m.exp();
            match transfer_cost_traced(x, z, t, system, measure, &ev, opts) {
                Ok(out) => {
                    let (cand, mut entry) = Candidate::from_transfer(t, out);
                    entry.stage = format!("golden t={t:.6}");
                    let v = cand.value;
                    trace.push(entry);
                    candidates.push(cand);
                    v
                }
                Err(_) => {
                    trace.push(TraceEntry {
                        stage: format!("golden t={t:.6}"),
                        evaluations: 0,
                        value: f64::INFINITY,
                    });
                    f64::INFINITY
                }
            }
        };
        let mut c = b - INV_PHI * (b - a);
        let mut d = a + INV_PHI * (b - a);
        let mut fc = probe(c, &mut candidates, &mut trace);
        let mut fd = probe(d, &mut candidates, &mut trace);
        for _ in 0..opts.golden_iters.saturating_sub(2) {
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - INV_PHI * (b - a);
                fc = probe(c, &mut candidates, &mut trace);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + INV_PHI * (b - a);
                fd = probe(d, &mut candidates, &mut trace);
            }
        }
    }

    let ball_best = candidates[best_idx(&candidates)].value;

    // Piecewise-constant tilt relaxation on fixed horizons; a coarser but
    // structurally richer family (it can linger and mix jump sizes), used as
    // an optimality-gap probe for the ball value.  The best profile so far
    // seeds the next horizon (aligned to the terminal end, idling before).
    let mut relaxation_delta = None;
    if opts.grid_stage {
        let mut grid_best = f64::INFINITY;
        let mut warm: Option<(f64, Vec<f64>)> = None;
        for tg in [1.5, 2.5, 4.0] {
            match grid_tilt_stage(x, z, tg, system, measure, opts, warm.as_ref()) {
                Some(out) => {
                    trace.push(TraceEntry {
                        stage: format!("grid-tilt t={tg:.6}"),
                        evaluations: out.evals,
                        value: out.value,
                    });
                    if out.value < grid_best {
                        grid_best = out.value;
                        warm = Some((tg, out.theta));
                    }
                    candidates.push(Candidate {
                        horizon: tg,
                        value: out.value,
                        knot_count: out.path.times.len(),
                        path: out.path,
                        control: out.control,
                        refinement_level: 0,
                    });
                }
                None => trace.push(TraceEntry {
                    stage: format!("grid-tilt t={tg:.6}"),
                    evaluations: 0,
                    value: f64::INFINITY,
                }),
            }
        }
        if grid_best.is_finite() {
            relaxation_delta = Some(ball_best - grid_best);
        }
    }

    let best = candidates.swap_remove(best_idx(&candidates));
    Ok(QuasiPotentialResult {
        value: best.value,
        horizon: best.horizon,
        path: best.path,
        control: best.control,
        trace,
        knot_count: best.knot_count,
        refinement_level: best.refinement_level,
        z_star: None,
        runner_up_gap: None,
        runner_up_point: None,
        relaxation_delta,
    })
}

/// Solve a (tiny) dense linear system in place by Gaussian elimination with
/// partial pivoting; None when near-singular.
fn solve_linear(a: &mut [Vec<f64>], mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = b[col];
        for k in col + 1..n {
            s -= a[col][k] * b[k];
        }
        b[col] = s / a[col][col];
    }
    Some(b)
}

/// Reuse a tilt profile from one horizon on another by aligning it to the
/// terminal end (the escape burst lives there) and idling before it.
fn remap_tail(theta: &[f64], t_from: f64, t_to: f64, d: usize) -> Vec<f64> {
    let k_cells = theta.len() / d;
    let mut out = vec![0.0; theta.len()];
    for k in 0..k_cells {
        let mid = (k as f64 + 0.5) * t_to / k_cells as f64;
        let src = t_from - (t_to - mid);
        if src >= 0.0 {
            let kp = ((src / (t_from / k_cells as f64)) as usize).min(k_cells - 1);
            out[k * d..(k + 1) * d].copy_from_slice(&theta[kp * d..(kp + 1) * d]);
        }
    }
    out
}

struct GridStage {
    value: f64,
    control: Control,
    path: PathCandidate,
    evals: usize,
    theta: Vec<f64>,
}

/// Optimize a piecewise-constant tilt (8 time cells x the measure's ray/bin
/// grid) to reach z at horizon t, with an exponential-in-centroid ansatz
/// per time cell and a penalty ramp on the endpoint.  Returns a certified
/// (exact entropy, endpoint-verified) candidate or None.
fn grid_tilt_stage(
    x: &[f64],
    z: &[f64],
    t: f64,
    system: &SystemSpec,
    measure: &LevyMeasure,
    opts: &QpOpts,
    warm: Option<&(f64, Vec<f64>)>,
) -> Option<GridStage> {
    const K_TIME: usize = 8;
    const N_R: usize = 16;
    let base = GridTiltControl::new(measure, t, K_TIME, 0.01, 4.0, N_R).ok()?;
    let d = system.dim();
    let (nrays, nr) = (base.n_rays(), base.n_radial());
    let cps = nrays * nr;
    let mut cents = Vec::with_capacity(cps);
    for ir in 0..nrays {
        for j in 0..nr {
            cents.push(base.cell_centroid(ir, j));
        }
    }
    let mids: Vec<f64> = (0..K_TIME).map(|k| (k as f64 + 0.5) * t / K_TIME as f64).collect();
    let levels_for = |theta: &[f64]| -> Vec<f64> {
        let mut levels = vec![1.0; K_TIME * cps];
        for k in 0..K_TIME {
            let th = &theta[k * d..(k + 1) * d];
            for (c, cent) in cents.iter().enumerate() {
                levels[k * cps + c] = la::dot(th, cent).clamp(-30.0, 30.0).exp();
            }
        }
        levels
    };
    let objective = |theta: &[f64], pen: f64| -> f64 {
        let mut g = base.clone();
        if g.set_levels(&levels_for(theta)).is_err() {
            return f64::INFINITY;
        }
        let control = Control::GridTilt(g);
        let ent = match control.entropy(measure) {
            Ok(e) if e.is_finite() => e,
            _ => return f64::INFINITY,
        };
        // Endpoint via per-cell RK4; the field is constant on a time cell.
        let mut xc = x.to_vec();
        const SUB: usize = 8;
        let h = t / (K_TIME * SUB) as f64;
        for &mid in &mids {
            let ik = match control.mark_integral(measure, mid) {
                Ok(v) => v,
                Err(_) => return f64::INFINITY,
            };
            let f = |y: &[f64]| la::add_scaled(&system.drift.eval(y), system.g.eval(y), &ik);
            for _ in 0..SUB {
                let k1 = f(&xc);
                let k2 = f(&la::add_scaled(&xc, 0.5 * h, &k1));
                let k3 = f(&la::add_scaled(&xc, 0.5 * h, &k2));
                let k4 = f(&la::add_scaled(&xc, h, &k3));
                for i in 0..d {
                    xc[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
                if xc.iter().any(|v| !v.is_finite()) {
                    return f64::INFINITY;
                }
            }
        }
        let miss = la::dist(&xc, z);
        ent + pen * miss * miss
    };
    // Several deterministic initials: do-nothing, idle-then-burst, and the
    // best profile from a previously solved horizon when available.  The
    // landscape has shallow local basins (effort spread evenly over time vs.
    // concentrated at the end), so one cold start is not enough.
    let mut inits: Vec<Vec<f64>> = vec![vec![0.0; K_TIME * d]];
    let mut burst = vec![0.0; K_TIME * d];
    for v in burst.iter_mut().skip(K_TIME * d / 2) {
        *v = 0.9;
    }
    inits.push(burst);
    if let Some((tw, thw)) = warm {
        inits.push(remap_tail(thw, *tw, t, d));
    }
    let mut evals = 0usize;
    let mut ramped: Option<(f64, Vec<f64>)> = None;
    for init in inits {
        let mut theta = init;
        let mut obj = f64::INFINITY;
        for pen in [1e2, 1e4, 1e6] {
            let out = nelder_mead(|th| objective(th, pen), &theta, &vec![0.5; K_TIME * d], 500);
            theta = out.best;
            obj = out.value;
            evals += out.evals;
        }
        if ramped.as_ref().map_or(true, |(v, _)| obj < *v) {
            ramped = Some((obj, theta));
        }
    }
    let (_, mut theta) = ramped?;
    // The penalty solution lands within ~1e-3 of the target.  Polish the
    // final time cell's tilt by damped Newton shooting against the production
    // ODE solver so the certificate endpoint check is met with margin; the
    // terminal state responds monotonically to the final-cell tilt, so a few
    // steps suffice.
    let terminal_of = |th: &[f64]| -> Option<Vec<f64>> {
        let mut g = base.clone();
        g.set_levels(&levels_for(th)).ok()?;
        let sol =
            solve_controlled_ode(&Control::GridTilt(g), system, measure, x, opts.ode_dt).ok()?;
        let term = sol.terminal().to_vec();
        term.iter().all(|v| v.is_finite()).then_some(term)
    };
    let tail = (K_TIME - 1) * d;
    for _ in 0..12 {
        let term = terminal_of(&theta)?;
        evals += 1;
        if la::dist(&term, z) <= 0.2 * opts.endpoint_tol {
            break;
        }
        let hstep = 1e-4;
        let mut jac = vec![vec![0.0; d]; d];
        for j in 0..d {
            let mut tp = theta.clone();
            tp[tail + j] += hstep;
            let tpt = terminal_of(&tp)?;
            evals += 1;
            for i in 0..d {
                jac[i][j] = (tpt[i] - term[i]) / hstep;
            }
        }
        let rhs: Vec<f64> = (0..d).map(|i| z[i] - term[i]).collect();
        let delta = solve_linear(&mut jac, rhs)?;
        for j in 0..d {
            theta[tail + j] += delta[j].clamp(-0.5, 0.5);
        }
    }
    // Certify with the exact entropy and the production ODE solver.
    let mut g = base.clone();
    g.set_levels(&levels_for(&theta)).ok()?;
    let control = Control::GridTilt(g);
    let value = control.entropy(measure).ok()?;
    if !value.is_finite() {
        return None;
    }
    let sol = solve_controlled_ode(&control, system, measure, x, opts.ode_dt).ok()?;
    if la::dist(sol.terminal(), z) > opts.endpoint_tol {
        return None;
    }
    let path = downsample_path(&sol.times, &sol.states, 65);
    Some(GridStage { value, control, path, evals, theta })
}

/// Barrier height: minimize the quasi-potential from the origin over the
/// domain boundary.  In one dimension the boundary is the two interval
/// endpoints; otherwise a mesh of 64 points with three x4 local refinement
/// rounds around the incumbent.  Reports the argmin and the runner-up gap
/// (best value among boundary points away from the argmin) as a uniqueness
/// proxy.
pub fn barrier_height(
    system: &SystemSpec,
    measure: &LevyMeasure,
    opts: &QpOpts,
) -> Result<QuasiPotentialResult> {
    let dim = system.dim();
    let origin = vec![0.0; dim];
    if !system.domain.contains(&origin) {
        return Err(Error::Invalid("barrier search needs the origin inside the domain".into()));
    }
    let initial: Vec<Vec<f64>> = match &system.domain {
        Domain::Interval { lo, hi } => vec![vec![*lo], vec![*hi]],
        dom => dom.boundary_mesh(64, dim)?.into_iter().map(|(p, _)| p).collect(),
    };
    let mut evaluated: Vec<(Vec<f64>, QuasiPotentialResult)> = Vec::new();
    let mut last_err: Option<Error> = None;
    let eval_points = |points: &[Vec<f64>],
                           evaluated: &mut Vec<(Vec<f64>, QuasiPotentialResult)>,
                           last_err: &mut Option<Error>| {
        for p in points {
            if evaluated.iter().any(|(q, _)| la::dist(q, p) <= 1e-12) {
                continue;
            }
            match quasipotential_point(&origin, p, system, measure, opts) {
                Ok(res) => evaluated.push((p.clone(), res)),
                Err(e) => *last_err = Some(e),
            }
        }
    };
    eval_points(&initial, &mut evaluated, &mut last_err);
    if evaluated.is_empty() {
        return Err(last_err
            .unwrap_or_else(|| Error::Invalid("barrier: no boundary point was reachable".into())));
    }
    let best_of = |ev: &[(Vec<f64>, QuasiPotentialResult)]| {
        let mut b = 0;
        for i in 1..ev.len() {
            if ev[i].1.value < ev[b].1.value {
                b = i;
            }
        }
        b
    };
    // Local refinement only matters when the boundary is a genuine mesh.
    if !matches!(system.domain, Domain::Interval { .. }) && initial.len() > 2 {
        for round in 1..=3usize {
            let incumbent = evaluated[best_of(&evaluated)].0.clone();
            let mesh = system.domain.boundary_mesh(64 << (2 * round), dim)?;
            let mut near: Vec<Vec<f64>> =
                mesh.into_iter().map(|(p, _)| p).collect();
            near.sort_by(|a, b| {
                la::dist(a, &incumbent).total_cmp(&la::dist(b, &incumbent))
            });
            near.truncate(4);
            eval_points(&near, &mut evaluated, &mut last_err);
        }
    }
    let bi = best_of(&evaluated);
    let z_star = evaluated[bi].0.clone();
    let best_value = evaluated[bi].1.value;
    let sep = 0.25 * system.domain.scale();
    let runner = evaluated
        .iter()
        .filter(|(p, _)| la::dist(p, &z_star) > sep)
        .min_by(|a, b| a.1.value.total_cmp(&b.1.value))
        .map(|(p, r)| (p.clone(), r.value));
    let mut result = evaluated.swap_remove(bi).1;
    for (p, r) in &evaluated {
        result.trace.push(TraceEntry {
            stage: format!("boundary z=[{}]", fmt_point(p)),
            evaluations: 0,
            value: r.value,
        });
    }
    result.z_star = Some(z_star);
    if let Some((p, v)) = runner {
        if v.is_finite() {
            result.runner_up_gap = Some(v - best_value);
            result.runner_up_point = Some(p);
        }
    }
    Ok(result)
}

/// One row of the small-ball continuity table.
#[derive(Clone, Debug)]
pub struct ContinuityRow {
    pub rho: f64,
    /// max over sampled pairs of (min over t in (0, 1] of the transfer cost).
    pub value: f64,
    /// Same max/min over the one-segment straight-line controls: an
    /// explicit constructive upper bound the optimizer must not exceed.
    pub straight_bound: f64,
}

/// Transfer-cost continuity near the origin: for each rho, steer between
/// deterministic sample pairs inside the ball of radius rho (plus pairs
/// hugging the domain boundary) minimising over horizons t <= 1, and report
/// the worst pair.  The values must shrink to zero with rho.
pub fn continuity_probe(
    rho_list: &[f64],
    system: &SystemSpec,
    measure: &LevyMeasure,
) -> Result<Vec<ContinuityRow>> {
    let dim = system.dim();
    let ev = Evaluator::new(system, measure);
    let opts = QpOpts {
        restarts: 1,
        max_iter: 160,
        max_refine_rounds: 1,
        golden_iters: 0,
        grid_stage: false,
        ..QpOpts::default()
    };
    let t_grid = [1.0 / 64.0, 1.0 / 32.0, 1.0 / 16.0, 0.125, 0.25, 0.5, 1.0];
    // Deterministic sample pairs in the unit ball (scaled per rho below).
    let mut unit_pairs: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for i in 0..4u64 {
        let mut rng = rng_for(0x5eed, "qp-continuity", i);
        let mut point = || loop {
            let p: Vec<f64> = (0..dim).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
            if la::norm(&p) <= 1.0 {
                return p;
            }
        };
        let a = point();
        let b = point();
        unit_pairs.push((a, b));
    }
    let boundary: Vec<(Vec<f64>, Vec<f64>)> = system
        .domain
        .boundary_mesh(4, dim)?
        .into_iter()
        .take(2)
        .collect();
    let mut rows = Vec::with_capacity(rho_list.len());
    for &rho in rho_list {
        if !(rho >= 0.0) {
            return Err(Error::Invalid("continuity radii must be nonnegative".into()));
        }
        if rho == 0.0 {
            // Identical endpoints: inf over t of V(x, x, t) vanishes as t -> 0.
            rows.push(ContinuityRow { rho, value: 0.0, straight_bound: 0.0 });
            continue;
        }
        let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = unit_pairs
            .iter()
            .map(|(a, b)| (la::scaled(a, rho), la::scaled(b, rho)))
            .collect();
        for (p, nrm) in &boundary {
            pairs.push((
                la::add_scaled(p, -0.75 * rho, nrm),
                la::add_scaled(p, -0.25 * rho, nrm),
            ));
        }
        let runs: Vec<(usize, f64, f64)> = pairs
            .par_iter()
            .enumerate()
            .flat_map_iter(|(pi, pair)| t_grid.iter().map(move |&t| (pi, pair, t)))
            .map(|(pi, (a, b), t)| {
                let cost = transfer_cost_traced(a, b, t, system, measure, &ev, &opts)
                    .map(|o| o.value)
                    .unwrap_or(f64::INFINITY);
                let straight = straight_line_entropy(a, b, t, system, measure);
                (pi, cost, straight)
            })
            .collect();
        let mut per_pair_cost = vec![f64::INFINITY; pairs.len()];
        let mut per_pair_bound = vec![f64::INFINITY; pairs.len()];
        for (pi, cost, straight) in runs {
            per_pair_cost[pi] = per_pair_cost[pi].min(cost);
            per_pair_bound[pi] = per_pair_bound[pi].min(straight);
        }
        let value = per_pair_cost.iter().cloned().fold(0.0f64, f64::max);
        let straight_bound = per_pair_bound.iter().cloned().fold(0.0f64, f64::max);
        if !value.is_finite() {
            return Err(Error::Invalid(format!(
                "continuity probe: an rho = {rho} pair admitted no steering control"
            )));
        }
        rows.push(ContinuityRow { rho, value, straight_bound });
    }
    Ok(rows)
}

/// Exact entropy of the one-segment straight-line control between two
/// points (infinity when inadmissible).
fn straight_line_entropy(
    a: &[f64],
    b: &[f64],
    t: f64,
    system: &SystemSpec,
    measure: &LevyMeasure,
) -> f64 {
    let times = vec![0.0, t];
    let states = vec![a.to_vec(), b.to_vec()];
    match control_for_path(&times, &states, system, measure) {
        Ok(c) => c.entropy(measure).unwrap_or(f64::INFINITY),
        Err(_) => f64::INFINITY,
    }
}
