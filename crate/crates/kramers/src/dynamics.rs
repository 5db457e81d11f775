//! Deterministic flow and pathwise SDE integration with first-exit
//! detection.
//!
//! The perturbed state follows
//!
//!   X_t = x + int_0^t b(X_s) ds + eps int_0^t int G(X_{s-}) z Ntilde^{1/eps}(ds,dz),
//!
//! where Ntilde is the compensated accelerated jump measure. Pathwise this
//! splits into an effective drift b(x) - G(x) m1 between jumps (m1 is the
//! mean mark of the restricted measure; the 1/eps intensity cancels the eps
//! amplitude in the compensator) and discrete updates x -> x + eps G(x-) z
//! at realized jump times. Jump times are known exactly per realization, so
//! the only numerical error is the O(dt^4) bias of the inter-jump
//! Runge-Kutta integrator; step-halving reports let callers bound it.
//!
//! Exits are detected continuously: membership is tested at every sub-step
//! and refined by bisection in time (to dt * 1e-3), and again after every
//! jump, with boundary-exact states counted as exits since the domain is
//! open.

use crate::measures::LevyMeasure;
use crate::noise::{simulate_prm, JumpRecord, NoiseParams};
use crate::stream::rng_for;
use crate::{la, Error, Result};
use rand::Rng;

/// Drift fields b with b(0) = 0.
#[derive(Clone, Debug)]
pub enum Drift {
    /// b(x) = -rate * x (any dimension).
    Linear { rate: f64 },
    /// b(x) = sum_k coeffs[k] x^k, one-dimensional; coeffs[0] must be 0.
    Poly { coeffs: Vec<f64> },
}

impl Drift {
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Drift::Linear { rate } => x.iter().map(|v| -rate * v).collect(),
            Drift::Poly { coeffs } => {
                let mut p = 0.0;
                for &c in coeffs.iter().rev() {
                    p = p * x[0] + c;
                }
                vec![p]
            }
        }
    }
}

/// Scalar jump coefficient G with |G| bounded away from zero.
#[derive(Clone, Debug)]
pub enum GCoef {
    Constant(f64),
    /// G(x) = a + slope * x[0], clamped to keep |G| >= min_abs.
    AffineClamped { a: f64, slope: f64, min_abs: f64 },
}

impl GCoef {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            GCoef::Constant(g) => *g,
            GCoef::AffineClamped { a, slope, min_abs } => {
                let raw = a + slope * x[0];
                if raw.abs() >= *min_abs {
                    raw
                } else if raw == 0.0 {
                    *min_abs
                } else {
                    min_abs * raw.signum()
                }
            }
        }
    }

    fn lipschitz(&self) -> f64 {
        match self {
            GCoef::Constant(_) => 0.0,
            GCoef::AffineClamped { slope, .. } => slope.abs(),
        }
    }
}

/// Open region containing the rest point 0.  `All` is the degenerate
/// whole-space case: no boundary, so first-exit experiments only ever time
/// out (useful as a control experiment).
#[derive(Clone, Debug)]
pub enum Domain {
    Interval { lo: f64, hi: f64 },
    Ball { radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    All,
}

impl Domain {
    /// Negative inside, zero on the boundary, positive outside.
    pub fn sdf(&self, x: &[f64]) -> f64 {
        match self {
            Domain::Interval { lo, hi } => (lo - x[0]).max(x[0] - hi),
            Domain::Ball { radius } => la::norm(x) - radius,
            Domain::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(xi, (l, h))| (l - xi).max(xi - h))
                .fold(f64::NEG_INFINITY, f64::max),
            Domain::All => f64::NEG_INFINITY,
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.sdf(x) < 0.0
    }

    pub fn dim_hint(&self) -> Option<usize> {
        match self {
            Domain::Interval { .. } => Some(1),
            Domain::Ball { .. } | Domain::All => None,
            Domain::Box { lo, .. } => Some(lo.len()),
        }
    }

    /// Characteristic radius, for probe scaling; the whole space has no
    /// intrinsic scale and reports 1.
    pub fn scale(&self) -> f64 {
        match self {
            Domain::Interval { lo, hi } => lo.abs().max(hi.abs()),
            Domain::Ball { radius } => *radius,
            Domain::Box { lo, hi } => lo
                .iter()
                .chain(hi)
                .fold(0.0f64, |m, v| m.max(v.abs())),
            Domain::All => 1.0,
        }
    }

    /// Mesh of boundary points with outward unit normals. For the interval
    /// the mesh is its two endpoints regardless of the requested size.
    pub fn boundary_mesh(&self, n: usize, dim: usize) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        match self {
            Domain::Interval { lo, hi } => {
                Ok(vec![(vec![*lo], vec![-1.0]), (vec![*hi], vec![1.0])])
            }
            Domain::Ball { radius } if dim == 1 => {
                Ok(vec![(vec![-radius], vec![-1.0]), (vec![*radius], vec![1.0])])
            }
            Domain::Ball { radius } if dim == 2 => Ok((0..n)
                .map(|k| {
                    let th = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                    let nrm = vec![th.cos(), th.sin()];
                    (nrm.iter().map(|c| c * radius).collect(), nrm)
                })
                .collect()),
            Domain::Box { lo, hi } if dim == 2 => {
                let mut out = Vec::with_capacity(n);
                let (w, h) = (hi[0] - lo[0], hi[1] - lo[1]);
                let perim = 2.0 * (w + h);
                for k in 0..n {
                    let mut s = perim * k as f64 / n as f64;
                    let (p, nrm);
                    if s < w {
                        p = vec![lo[0] + s, lo[1]];
                        nrm = vec![0.0, -1.0];
                    } else if {
                        s -= w;
                        s < h
                    } {
                        p = vec![hi[0], lo[1] + s];
                        nrm = vec![1.0, 0.0];
                    } else if {
                        s -= h;
                        s < w
                    } {
                        p = vec![hi[0] - s, hi[1]];
                        nrm = vec![0.0, 1.0];
                    } else {
                        s -= w;
                        p = vec![lo[0], hi[1] - s];
                        nrm = vec![-1.0, 0.0];
                    }
                    out.push((p, nrm));
                }
                Ok(out)
            }
            _ => Err(Error::Unsupported(format!(
                "boundary mesh not available for this domain in dimension {dim}"
            ))),
        }
    }
}

/// A validated dynamical system.
#[derive(Clone, Debug)]
pub struct SystemSpec {
    pub drift: Drift,
    pub g: GCoef,
    pub domain: Domain,
    dim: usize,
    /// Probed coercivity constant (infimum of -<db, dy>/|dy|^2).
    pub c1: f64,
    /// Lipschitz constant of |G|.
    pub l_g: f64,
    /// Probed bound on the drift Jacobian, used for the default step size.
    db_norm: f64,
}

impl SystemSpec {
    /// Validates the structural hypotheses on probe points: b(0) = 0,
    /// coercivity of b, |G| Lipschitz and nonvanishing, the domain holding 0
    /// in its interior, and b pointing inward on the boundary.
    pub fn new(drift: Drift, g: GCoef, domain: Domain, dim: usize) -> Result<Self> {
        let spec = Self::new_unchecked(drift, g, domain, dim)?;
        let origin = vec![0.0; dim];
        let b0 = spec.drift.eval(&origin);
        if la::norm(&b0) > 1e-14 {
            return Err(Error::Invalid("drift must vanish at the origin".into()));
        }
        if spec.c1 <= 1e-12 {
            return Err(Error::Invalid(format!(
                "drift is not coercive on probe pairs (c1 estimate {:.3e})",
                spec.c1
            )));
        }
        if spec.g.eval(&origin) == 0.0 {
            return Err(Error::Invalid("jump coefficient must not vanish".into()));
        }
        if !spec.domain.contains(&origin) {
            return Err(Error::Invalid("domain must contain the origin".into()));
        }
        if let Some(d) = spec.domain.dim_hint() {
            if d != dim {
                return Err(Error::Invalid("domain dimension mismatch".into()));
            }
        }
        if !matches!(spec.domain, Domain::All) {
            let mesh = spec.domain.boundary_mesh(64, dim)?;
            for (p, n) in &mesh {
                if la::dot(&spec.drift.eval(p), n) >= 0.0 {
                    return Err(Error::Invalid(format!(
                        "drift does not point inward at boundary point {p:?}"
                    )));
                }
            }
        }
        Ok(spec)
    }

    /// Build without hypothesis validation; probes still run to estimate
    /// the constants. Intended for degenerate test systems (b = 0, G taking
    /// a sign, ...) that deliberately step outside the hypotheses.
    pub fn new_unchecked(drift: Drift, g: GCoef, domain: Domain, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("dimension must be positive".into()));
        }
        if matches!(drift, Drift::Poly { .. }) && dim != 1 {
            return Err(Error::Invalid("polynomial drift is one-dimensional".into()));
        }
        let mut spec = SystemSpec { drift, g, domain, dim, c1: 0.0, l_g: 0.0, db_norm: 0.0 };
        spec.probe_constants();
        Ok(spec)
    }

    fn probe_constants(&mut self) {
        let scale = 1.5 * self.domain.scale().max(1.0);
        let mut rng = rng_for(0x51, "system-probe", 0);
        let mut c1 = f64::INFINITY;
        let mut l_g = self.g.lipschitz();
        let mut db = 0.0f64;
        let probe = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            (0..self.dim).map(|_| rng.random_range(-scale..scale)).collect()
        };
        for _ in 0..200 {
            let y1 = probe(&mut rng);
            let y2 = probe(&mut rng);
            let dy = la::add_scaled(&y1, -1.0, &y2);
            let d2 = la::dot(&dy, &dy);
            if d2 < 1e-12 {
                continue;
            }
            let dbv = la::add_scaled(&self.drift.eval(&y1), -1.0, &self.drift.eval(&y2));
            c1 = c1.min(-la::dot(&dbv, &dy) / d2);
            db = db.max(la::norm(&dbv) / d2.sqrt());
            l_g = l_g.max((self.g.eval(&y1).abs() - self.g.eval(&y2).abs()).abs() / d2.sqrt());
        }
        self.c1 = c1;
        self.l_g = l_g;
        self.db_norm = db;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Default integrator step 1e-3 * min(1, 1/||Db||) from probed Jacobian.
    pub fn default_dt(&self) -> f64 {
        1e-3 * (1.0f64).min(1.0 / self.db_norm.max(1e-12))
    }
}

/// b(x) - G(x) * m1: the inter-jump drift of the compensated system.
pub fn effective_drift(system: &SystemSpec, measure: &LevyMeasure, x: &[f64]) -> Vec<f64> {
    let m1 = measure.mean_mark();
    let mut v = system.drift.eval(x);
    la::axpy(&mut v, -system.g.eval(x), m1);
    v
}

fn rk4_step<F: Fn(&[f64]) -> Vec<f64>>(f: &F, x: &[f64], h: f64) -> Vec<f64> {
    let k1 = f(x);
    let k2 = f(&la::add_scaled(x, 0.5 * h, &k1));
    let k3 = f(&la::add_scaled(x, 0.5 * h, &k2));
    let k4 = f(&la::add_scaled(x, h, &k3));
    let mut out = x.to_vec();
    for i in 0..x.len() {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

const BLOWUP: f64 = 1e9;

fn check_finite(x: &[f64], t: f64) -> Result<()> {
    if x.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP) {
        return Err(Error::Numerical(format!("state blew up at t = {t}")));
    }
    Ok(())
}

/// Integrate the deterministic flow xdot = b(x) on [0, T].
///
/// Returns the sampled path ((0, x), ..., (T, x_T)) at step boundaries.
pub fn flow_deterministic(
    system: &SystemSpec,
    x: &[f64],
    horizon: f64,
    dt: f64,
) -> Result<Vec<(f64, Vec<f64>)>> {
    assert!(dt > 0.0, "step size must be positive");
    let f = |y: &[f64]| system.drift.eval(y);
    let mut path = vec![(0.0, x.to_vec())];
    let mut state = x.to_vec();
    let n = (horizon / dt).ceil() as usize;
    for k in 0..n {
        let t0 = k as f64 * dt;
        let h = dt.min(horizon - t0);
        if h <= 0.0 {
            break;
        }
        state = rk4_step(&f, &state, h);
        check_finite(&state, t0 + h)?;
        path.push((t0 + h, state.clone()));
    }
    Ok(path)
}

/// One breakpoint of a trajectory; `pre` and `post` differ only at jumps.
#[derive(Clone, Debug)]
pub struct Breakpoint {
    pub time: f64,
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
    pub jump: bool,
}

/// A realized path of the perturbed system.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub breakpoints: Vec<Breakpoint>,
    pub terminal_time: f64,
    pub terminal_state: Vec<f64>,
    pub exited: bool,
    pub exit_time: Option<f64>,
    pub exit_point: Option<Vec<f64>>,
}

/// Result of a first-exit simulation.
#[derive(Clone, Debug, PartialEq)]
pub enum ExitOutcome {
    Exited { time: f64, point: Vec<f64> },
    /// Simulation budget t_cap elapsed with the state still inside.
    Timeout,
}

/// What the leg integrator ran into.
enum LegEnd {
    Reached(Vec<f64>),
    Exit { time: f64, point: Vec<f64> },
}

/// Integrate the effective drift from (t0, x) to t1 with sub-step exit
/// checks (when `watch_exit`), refining crossings by time bisection.
fn drift_leg<F: Fn(&[f64]) -> Vec<f64>>(
    f: &F,
    domain: &Domain,
    mut x: Vec<f64>,
    t0: f64,
    t1: f64,
    dt: f64,
    watch_exit: bool,
    observer: &mut dyn FnMut(f64, &[f64]),
) -> Result<LegEnd> {
    let mut t = t0;
    while t < t1 {
        let h = dt.min(t1 - t);
        let next = rk4_step(f, &x, h);
        check_finite(&next, t + h)?;
        if watch_exit && domain.sdf(&next) >= 0.0 {
            // Bisect the step for the earliest boundary contact.
            let (mut lo, mut hi) = (0.0, h);
            let tol = dt * 1e-3;
            let mut hit = next.clone();
            while hi - lo > tol {
                let mid = 0.5 * (lo + hi);
                let probe = rk4_step(f, &x, mid);
                if domain.sdf(&probe) >= 0.0 {
                    hi = mid;
                    hit = probe;
                } else {
                    lo = mid;
                }
            }
            return Ok(LegEnd::Exit { time: t + hi, point: hit });
        }
        x = next;
        t += h;
        observer(t, &x);
    }
    Ok(LegEnd::Reached(x))
}

/// Options shared by the SDE drivers.
#[derive(Clone, Copy, Debug)]
pub struct SdeOpts {
    pub dt: f64,
    /// Cap on realized jumps per path, guarding tiny epsilon.
    pub max_jumps: u64,
}

impl SdeOpts {
    pub fn for_system(system: &SystemSpec) -> Self {
        SdeOpts { dt: system.default_dt(), max_jumps: 500_000_000 }
    }
}

/// Drive the state through a prescribed jump list on [0, horizon].
///
/// Core stepper shared by [`simulate_sde`], the exit drivers and the
/// importance sampler; `watch_exit` enables continuous boundary checks and
/// `observer` sees every accepted sub-step and post-jump state.
pub fn drive_path(
    system: &SystemSpec,
    measure: &LevyMeasure,
    x0: &[f64],
    eps: f64,
    horizon: f64,
    jumps: &[JumpRecord],
    opts: &SdeOpts,
    watch_exit: bool,
    mut observer: Option<&mut dyn FnMut(f64, &[f64])>,
) -> Result<Trajectory> {
    let m1 = measure.mean_mark().to_vec();
    if m1.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid(
            "mean mark of the restricted measure is not finite; use a larger cutoff".into(),
        ));
    }
    let f = |y: &[f64]| {
        let mut v = system.drift.eval(y);
        la::axpy(&mut v, -system.g.eval(y), &m1);
        v
    };
    let mut sink = |_: f64, _: &[f64]| {};
    let obs: &mut dyn FnMut(f64, &[f64]) = match observer.as_deref_mut() {
        Some(o) => o,
        None => &mut sink,
    };

    let mut traj = Trajectory {
        breakpoints: vec![Breakpoint { time: 0.0, pre: x0.to_vec(), post: x0.to_vec(), jump: false }],
        terminal_time: 0.0,
        terminal_state: x0.to_vec(),
        exited: false,
        exit_time: None,
        exit_point: None,
    };
    let finish_exit = |traj: &mut Trajectory, time: f64, point: Vec<f64>| {
        traj.terminal_time = time;
        traj.terminal_state = point.clone();
        traj.exited = true;
        traj.exit_time = Some(time);
        traj.exit_point = Some(point);
    };

    if watch_exit && system.domain.sdf(x0) >= 0.0 {
        finish_exit(&mut traj, 0.0, x0.to_vec());
        return Ok(traj);
    }

    let mut x = x0.to_vec();
    let mut t = 0.0;
    for (k, j) in jumps.iter().enumerate() {
        if k as u64 >= opts.max_jumps {
            return Err(Error::Numerical(format!(
                "jump budget {} exhausted at t = {t}",
                opts.max_jumps
            )));
        }
        if j.time > horizon {
            break;
        }
        match drift_leg(&f, &system.domain, x, t, j.time, opts.dt, watch_exit, obs)? {
            LegEnd::Exit { time, point } => {
                finish_exit(&mut traj, time, point);
                return Ok(traj);
            }
            LegEnd::Reached(state) => x = state,
        }
        t = j.time;
        let pre = x.clone();
        la::axpy(&mut x, eps * system.g.eval(&pre), &j.mark);
        check_finite(&x, t)?;
        traj.breakpoints.push(Breakpoint { time: t, pre, post: x.clone(), jump: true });
        obs(t, &x);
        if watch_exit && system.domain.sdf(&x) >= 0.0 {
            finish_exit(&mut traj, t, x.clone());
            return Ok(traj);
        }
    }
    match drift_leg(&f, &system.domain, x, t, horizon, opts.dt, watch_exit, obs)? {
        LegEnd::Exit { time, point } => {
            finish_exit(&mut traj, time, point);
            Ok(traj)
        }
        LegEnd::Reached(state) => {
            traj.breakpoints.push(Breakpoint {
                time: horizon,
                pre: state.clone(),
                post: state.clone(),
                jump: false,
            });
            traj.terminal_time = horizon;
            traj.terminal_state = state;
            Ok(traj)
        }
    }
}

/// Simulate the perturbed system on [0, horizon].
pub fn simulate_sde<R: Rng + ?Sized>(
    system: &SystemSpec,
    measure: &LevyMeasure,
    x0: &[f64],
    eps: f64,
    horizon: f64,
    rng: &mut R,
    opts: &SdeOpts,
) -> Result<Trajectory> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Invalid(format!("epsilon must lie in (0,1], got {eps}")));
    }
    check_finite(x0, 0.0)?;
    let params = NoiseParams::new(eps, measure, horizon)?;
    let jumps = simulate_prm(&params, rng)?;
    drive_path(system, measure, x0, eps, horizon, &jumps, opts, false, None)
}

/// Simulate until the state leaves the domain or `t_cap` elapses.
///
/// Jumps are generated on the fly, so exponentially long pre-exit stretches
/// cost no memory.
pub fn first_exit<R: Rng + ?Sized>(
    system: &SystemSpec,
    measure: &LevyMeasure,
    x0: &[f64],
    eps: f64,
    rng: &mut R,
    opts: &SdeOpts,
    t_cap: f64,
) -> Result<ExitOutcome> {
    first_exit_observed(system, measure, x0, eps, rng, opts, t_cap, |_, _| {})
}

/// [`first_exit`] with an observer that sees every accepted interior state
/// (inter-jump sub-steps and post-jump states), for stopping-time ladders
/// and occupation statistics.  The exit state itself is reported through the
/// returned outcome, not the observer.
#[allow(clippy::too_many_arguments)]
pub fn first_exit_observed<R: Rng + ?Sized, F: FnMut(f64, &[f64])>(
    system: &SystemSpec,
    measure: &LevyMeasure,
    x0: &[f64],
    eps: f64,
    rng: &mut R,
    opts: &SdeOpts,
    t_cap: f64,
    mut observer: F,
) -> Result<ExitOutcome> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Invalid(format!("epsilon must lie in (0,1], got {eps}")));
    }
    if system.domain.sdf(x0) >= 0.0 {
        return Ok(ExitOutcome::Exited { time: 0.0, point: x0.to_vec() });
    }
    let m_eff = measure.effective_mass();
    if !(m_eff > 0.0) || !m_eff.is_finite() {
        return Err(Error::Invalid("measure has no finite positive sampling mass".into()));
    }
    let m1 = measure.mean_mark().to_vec();
    if m1.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid(
            "mean mark of the restricted measure is not finite; use a larger cutoff".into(),
        ));
    }
    let f = |y: &[f64]| {
        let mut v = system.drift.eval(y);
        la::axpy(&mut v, -system.g.eval(y), &m1);
        v
    };
    let rate = m_eff / eps;
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut jumps: u64 = 0;
    loop {
        let gap = loop {
            let u: f64 = rng.random();
            let g = -(1.0 - u).ln() / rate;
            if g > 0.0 {
                break g;
            }
        };
        let t_next = (t + gap).min(t_cap);
        match drift_leg(&f, &system.domain, x, t, t_next, opts.dt, true, &mut observer)? {
            LegEnd::Exit { time, point } => return Ok(ExitOutcome::Exited { time, point }),
            LegEnd::Reached(state) => x = state,
        }
        if t + gap > t_cap {
            return Ok(ExitOutcome::Timeout);
        }
        t += gap;
        let mark = measure.sample_jump(rng)?;
        let g_pre = system.g.eval(&x);
        la::axpy(&mut x, eps * g_pre, &mark);
        check_finite(&x, t)?;
        if system.domain.sdf(&x) >= 0.0 {
            return Ok(ExitOutcome::Exited { time: t, point: x });
        }
        observer(t, &x);
        jumps += 1;
        if jumps >= opts.max_jumps {
            return Err(Error::Numerical(format!("jump budget {jumps} exhausted at t = {t}")));
        }
    }
}

/// First exit through a prescribed jump list (importance sampling driver).
///
/// Returns the outcome within [0, horizon]; `Timeout` means the horizon
/// elapsed inside the domain.
pub fn first_exit_given_jumps(
    system: &SystemSpec,
    measure: &LevyMeasure,
    x0: &[f64],
    eps: f64,
    horizon: f64,
    jumps: &[JumpRecord],
    opts: &SdeOpts,
) -> Result<ExitOutcome> {
    let traj = drive_path(system, measure, x0, eps, horizon, jumps, opts, true, None)?;
    Ok(if traj.exited {
        ExitOutcome::Exited {
            time: traj.exit_time.unwrap(),
            point: traj.exit_point.unwrap(),
        }
    } else {
        ExitOutcome::Timeout
    })
}

/// Step-halving self-consistency report for the inter-jump integrator.
#[derive(Clone, Debug)]
pub struct ConvergenceReport {
    pub dt: f64,
    /// Terminal-state distances between consecutive halvings.
    pub errors: Vec<f64>,
    /// Observed order estimates log2(e_k / e_{k+1}).
    pub orders: Vec<f64>,
}

/// Compare deterministic flows at dt, dt/2, dt/4, ... on one horizon.
pub fn step_halving_report(
    system: &SystemSpec,
    x: &[f64],
    horizon: f64,
    dt: f64,
    halvings: usize,
) -> Result<ConvergenceReport> {
    let mut terminals = Vec::new();
    for k in 0..=halvings {
        let path = flow_deterministic(system, x, horizon, dt / (1u64 << k) as f64)?;
        terminals.push(path.last().unwrap().1.clone());
    }
    let errors: Vec<f64> =
        terminals.windows(2).map(|w| la::dist(&w[0], &w[1])).collect();
    let orders = errors
        .windows(2)
        .map(|e| if e[1] > 0.0 { (e[0] / e[1]).log2() } else { f64::NAN })
        .collect();
    Ok(ConvergenceReport { dt, errors, orders })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::MeasureKind;

    fn benchmark_system() -> SystemSpec {
        SystemSpec::new(
            Drift::Linear { rate: 1.0 },
            GCoef::Constant(1.0),
            Domain::Interval { lo: -1.0, hi: 1.0 },
            1,
        )
        .unwrap()
    }

    fn exp_light() -> LevyMeasure {
        LevyMeasure::new(MeasureKind::ExponentialLight { beta: 2.0 }, 1, 0.0).unwrap()
    }

    #[test]
    fn flow_matches_linear_solution() {
        let sys = benchmark_system();
        let path = flow_deterministic(&sys, &[1.0], 1.0, 1e-3).unwrap();
        let (t, x) = path.last().unwrap();
        assert_eq!(*t, 1.0);
        assert!((x[0] - (-1.0f64).exp()).abs() < 1e-9, "got {}", x[0]);
    }

    #[test]
    fn flow_fixed_point_at_origin() {
        let sys = benchmark_system();
        let path = flow_deterministic(&sys, &[0.0], 5.0, 1e-2).unwrap();
        assert!(path.iter().all(|(_, x)| x[0] == 0.0));
    }

    #[test]
    fn flow_richardson_self_consistency() {
        let sys = SystemSpec::new(
            Drift::Poly { coeffs: vec![0.0, -1.0, 0.0, -1.0] },
            GCoef::Constant(1.0),
            Domain::Interval { lo: -3.0, hi: 3.0 },
            1,
        )
        .unwrap();
        let coarse = flow_deterministic(&sys, &[2.0], 0.5, 1e-3).unwrap();
        let fine = flow_deterministic(&sys, &[2.0], 0.5, 1e-4).unwrap();
        let xc = coarse.last().unwrap().1[0];
        let xf = fine.last().unwrap().1[0];
        assert!((xc - xf).abs() < 1e-8, "coarse {xc} fine {xf}");
    }

    #[test]
    fn step_halving_shows_fourth_order() {
        let sys = SystemSpec::new(
            Drift::Poly { coeffs: vec![0.0, -1.0, 0.0, -1.0] },
            GCoef::Constant(1.0),
            Domain::Interval { lo: -3.0, hi: 3.0 },
            1,
        )
        .unwrap();
        let rep = step_halving_report(&sys, &[2.0], 0.5, 0.05, 3).unwrap();
        // The contracting flow damps early errors, so the observed order can
        // exceed 4; each halving must still gain at least a factor 2^4
        // before round-off.
        for &o in rep.orders.iter().take(2) {
            assert!(o > 3.8, "observed order {o}");
        }
    }

    #[test]
    fn effective_drift_symmetric_measure() {
        let sys = benchmark_system();
        let m = exp_light();
        let v = effective_drift(&sys, &m, &[0.7]);
        assert_eq!(v, vec![-0.7]);
    }

    #[test]
    fn effective_drift_with_biased_measure() {
        // One-sided tempered-stable measure: m1 > 0 shifts the drift down.
        let sys = benchmark_system();
        let m = LevyMeasure::new(
            MeasureKind::GaussTemperedStable {
                alpha: 0.5,
                gamma: 1.0,
                directions: vec![(vec![1.0], 1.0)],
            },
            1,
            0.1,
        )
        .unwrap();
        let m1 = m.mean_mark()[0];
        assert!(m1 > 0.0);
        let v = effective_drift(&sys, &m, &[1.0]);
        assert!((v[0] - (-1.0 - m1)).abs() < 1e-12);
    }

    #[test]
    fn constructor_validates_hypotheses() {
        // Anti-coercive drift rejected.
        assert!(SystemSpec::new(
            Drift::Linear { rate: -1.0 },
            GCoef::Constant(1.0),
            Domain::Interval { lo: -1.0, hi: 1.0 },
            1
        )
        .is_err());
        // b(0) != 0 rejected.
        assert!(SystemSpec::new(
            Drift::Poly { coeffs: vec![0.5, -1.0] },
            GCoef::Constant(1.0),
            Domain::Interval { lo: -1.0, hi: 1.0 },
            1
        )
        .is_err());
        // Vanishing G rejected.
        assert!(SystemSpec::new(
            Drift::Linear { rate: 1.0 },
            GCoef::Constant(0.0),
            Domain::Interval { lo: -1.0, hi: 1.0 },
            1
        )
        .is_err());
        // Domain not containing 0 rejected.
        assert!(SystemSpec::new(
            Drift::Linear { rate: 1.0 },
            GCoef::Constant(1.0),
            Domain::Interval { lo: 0.5, hi: 1.0 },
            1
        )
        .is_err());
        // new_unchecked admits the degenerate probes.
        assert!(SystemSpec::new_unchecked(
            Drift::Poly { coeffs: vec![0.0] },
            GCoef::Constant(1.0),
            Domain::Interval { lo: -1.0, hi: 1.0 },
            1
        )
        .is_ok());
    }

    #[test]
    fn sde_no_jump_branch_equals_flow() {
        let sys = benchmark_system();
        let m = exp_light();
        let opts = SdeOpts { dt: 1e-3, max_jumps: 1000 };
        let traj = drive_path(&sys, &m, &[0.5], 0.3, 1.0, &[], &opts, false, None).unwrap();
        let flow = flow_deterministic(&sys, &[0.5], 1.0, 1e-3).unwrap();
        assert!(!traj.exited);
        assert!((traj.terminal_state[0] - flow.last().unwrap().1[0]).abs() < 1e-12);
        assert_eq!(traj.breakpoints.len(), 2);
    }

    #[test]
    fn sde_single_jump_update() {
        let sys = benchmark_system();
        let m = exp_light();
        let opts = SdeOpts { dt: 1e-3, max_jumps: 1000 };
        let eps = 0.25;
        let jumps = vec![JumpRecord { time: 0.4, mark: vec![0.8] }];
        let traj = drive_path(&sys, &m, &[0.1], eps, 1.0, &jumps, &opts, false, None).unwrap();
        let bp = &traj.breakpoints[1];
        assert!(bp.jump && bp.time == 0.4);
        assert!((bp.post[0] - (bp.pre[0] + eps * 0.8)).abs() < 1e-15);
        // Pre-jump state is the drift flow at 0.4.
        assert!((bp.pre[0] - 0.1 * (-0.4f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn compensated_martingale_isometry() {
        // b = 0, G = 1: X_T - x is the compensated Poisson integral; its
        // mean is 0 and its variance eps T int z^2 nu.
        let sys = SystemSpec::new_unchecked(
            Drift::Poly { coeffs: vec![0.0] },
            GCoef::Constant(1.0),
            Domain::Interval { lo: -1.0, hi: 1.0 },
            1,
        )
        .unwrap();
        let m = exp_light();
        let opts = SdeOpts { dt: 1e-2, max_jumps: 100_000 };
        let (eps, horizon) = (0.5, 1.0);
        let n = 10_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for i in 0..n {
            let mut rng = rng_for(31, "dyn-iso", i);
            let traj = simulate_sde(&sys, &m, &[0.0], eps, horizon, &mut rng, &opts).unwrap();
            let v = traj.terminal_state[0];
            s1 += v;
            s2 += v * v;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        let want = eps * horizon * m.second_moment_below(f64::INFINITY);
        assert!(mean.abs() < 3.0 * (want / n as f64).sqrt(), "mean {mean}");
        assert!((var - want).abs() < 0.05 * want, "var {var} vs {want}");
    }

    #[test]
    fn positive_invariance_of_flow() {
        let sys = benchmark_system();
        for k in 0..21 {
            let x0 = -1.0 + 0.1 * k as f64;
            let path = flow_deterministic(&sys, &[x0], 15.0, 1e-2).unwrap();
            assert!(path.iter().all(|(_, x)| sys.domain.sdf(x) <= 0.0));
            assert!(path.last().unwrap().1[0].abs() < 1e-6);
        }
    }

    #[test]
    fn small_eps_paths_concentrate_on_flow() {
        let sys = benchmark_system();
        let m = exp_light();
        let opts = SdeOpts { dt: 1e-2, max_jumps: 5_000_000 };
        let x0 = 0.5;
        let sup_dev = |eps: f64, i: u64, dom: &str| -> f64 {
            let mut rng = rng_for(32, dom, i);
            let mut sup = 0.0f64;
            let mut obs = |t: f64, x: &[f64]| {
                sup = sup.max((x[0] - x0 * (-t).exp()).abs());
            };
            let params = NoiseParams::new(eps, &m, 1.0).unwrap();
            let jumps = simulate_prm(&params, &mut rng).unwrap();
            drive_path(&sys, &m, &[x0], eps, 1.0, &jumps, &opts, false, Some(&mut obs)).unwrap();
            sup
        };

        // eps -> 0 surrogate: deviations stay tiny with high probability.
        let mut fails = 0;
        for i in 0..1000 {
            if sup_dev(1e-3, i, "dyn-conc") > 0.1 {
                fails += 1;
            }
        }
        assert!(fails <= 5, "{fails} of 1000 paths deviated past 0.1");

        // Monotone concentration along a decreasing eps ladder.
        let rho = 0.3;
        let n = 400;
        let ps: Vec<f64> = [0.4, 0.2, 0.1, 0.05]
            .iter()
            .map(|&eps| {
                (0..n).filter(|&i| sup_dev(eps, i, "dyn-mono") > rho).count() as f64 / n as f64
            })
            .collect();
        for w in ps.windows(2) {
            let slack = 3.0 * (w[0].max(w[1]).max(0.01) / n as f64).sqrt();
            assert!(w[1] <= w[0] + slack, "concentration not monotone: {ps:?}");
        }
    }

    #[test]
    fn exit_from_outside_is_instant() {
        let sys = benchmark_system();
        let m = exp_light();
        let opts = SdeOpts { dt: 1e-3, max_jumps: 1000 };
        let out = first_exit(&sys, &m, &[1.5], 0.3, &mut rng_for(33, "dyn", 0), &opts, 10.0)
            .unwrap();
        assert_eq!(out, ExitOutcome::Exited { time: 0.0, point: vec![1.5] });
    }

    #[test]
    fn tiny_eps_times_out() {
        let sys = benchmark_system();
        let m = exp_light();
        let opts = SdeOpts { dt: 1e-2, max_jumps: 100_000_000 };
        let out = first_exit(&sys, &m, &[0.0], 0.02, &mut rng_for(34, "dyn", 0), &opts, 10.0)
            .unwrap();
        assert_eq!(out, ExitOutcome::Timeout);
    }

    #[test]
    fn moderate_eps_exits_in_reasonable_time() {
        let sys = benchmark_system();
        let m = exp_light();
        let opts = SdeOpts { dt: 1e-3, max_jumps: 10_000_000 };
        let mut times: Vec<f64> = (0..200)
            .map(|i| {
                match first_exit(&sys, &m, &[0.0], 0.3, &mut rng_for(35, "dyn", i), &opts, 1e4)
                    .unwrap()
                {
                    ExitOutcome::Exited { time, point } => {
                        assert!(point[0].abs() >= 1.0);
                        time
                    }
                    ExitOutcome::Timeout => panic!("unexpected timeout"),
                }
            })
            .collect();
        times.sort_by(f64::total_cmp);
        let median = times[100];
        assert!(median > 1.0 && median < 100.0, "median exit time {median}");
    }

    #[test]
    fn exit_bisection_hits_boundary_tightly() {
        // Pure drift exit: start outside-attracted system pushed out by one
        // big jump, then drift grazes the boundary. Use an outward linear
        // drift via new_unchecked so the flow exits deterministically.
        let sys = SystemSpec::new_unchecked(
            Drift::Linear { rate: -0.5 }, // b(x) = +0.5 x, outward
            GCoef::Constant(1.0),
            Domain::Interval { lo: -1.0, hi: 1.0 },
            1,
        )
        .unwrap();
        let m = exp_light();
        let opts = SdeOpts { dt: 1e-3, max_jumps: 10 };
        let traj = drive_path(&sys, &m, &[0.5], 0.3, 10.0, &[], &opts, true, None).unwrap();
        assert!(traj.exited);
        let t_exit = traj.exit_time.unwrap();
        // x(t) = 0.5 e^{0.5 t} hits 1 at t = 2 ln 2.
        let want = 2.0 * (2.0f64).ln();
        assert!((t_exit - want).abs() < 2e-3, "exit time {t_exit} vs {want}");
        assert!((traj.exit_point.unwrap()[0] - 1.0).abs() < 1e-3);
    }
}
