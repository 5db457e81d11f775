//! One-dimensional quadrature.
//!
//! Two rules cover every need in this crate:
//!
//! * an adaptive Gauss–Kronrod 7/15 scheme for measure moments and tail
//!   integrals (absolute tolerance 1e-12, relative 1e-10 by default, with
//!   divergence declared once the accumulated interval sums pass 1e12), and
//! * a fixed 8-point Gauss–Legendre panel used for time integrals of smooth
//!   entropy densities, where a handful of panels already reaches round-off.
//!
//! The integrand is sampled only at interior nodes, so integrable endpoint
//! singularities (such as the r^{1-alpha} moment density of a tempered
//! stable measure at r = 0) are handled by subdivision alone.

use crate::{Error, Result};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Positive Kronrod abscissae for the 7/15 pair, ascending from the center.
/// Entries 0, 2, 4, 6 are the embedded Gauss-7 nodes.
pub const GK15_XGK: [f64; 8] = [
    0.0,
    0.207784955007898467600689403773245,
    0.405845151377397166906606412076961,
    0.586087235467691130294144838258730,
    0.741531185599394439863864773280788,
    0.864864423359769072789712788640926,
    0.949107912342758524526189684047851,
    0.991455371120812639206854697526329,
];

/// Kronrod weights matching [`GK15_XGK`].
pub const GK15_WGK: [f64; 8] = [
    0.209482141084727828012999174891714,
    0.204432940075298892414161999234649,
    0.190350578064785409913256402421014,
    0.169004726639267902826583426598550,
    0.140653259715525918745189590510238,
    0.104790010322250183839876322541518,
    0.063092092629978553290700663189204,
    0.022935322010529224963732008058970,
];

/// Gauss-7 weights for nodes `GK15_XGK[0, 2, 4, 6]`.
pub const GK15_WG: [f64; 4] = [
    0.417959183673469387755102040816327,
    0.381830050505118944950369775488975,
    0.279705391489276667901467771423780,
    0.129484966168869693270611432679082,
];

/// Positive abscissae of the 8-point Gauss–Legendre rule.
pub const GL8_X: [f64; 4] = [
    0.18343464249564980493947614236018,
    0.52553240991632898581773904918925,
    0.79666647741362673959155393647583,
    0.96028985649753623168356086856947,
];

/// Weights matching [`GL8_X`].
pub const GL8_W: [f64; 4] = [
    0.36268378337836198296515044927720,
    0.31370664587788728733796220198660,
    0.22238103445337447054435599442624,
    0.10122853629037625915253135430996,
];

/// Tolerances and safety rails for [`integrate`].
#[derive(Clone, Copy, Debug)]
pub struct QuadOpts {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Hard cap on the number of active subintervals.
    pub max_intervals: usize,
    /// Accumulated |interval value| beyond this is reported as divergence.
    pub divergence_sum: f64,
}

impl Default for QuadOpts {
    fn default() -> Self {
        QuadOpts {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            max_intervals: 20_000,
            divergence_sum: 1e12,
        }
    }
}

/// Result of one Gauss–Kronrod panel.
#[derive(Clone, Copy, Debug)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
    abs: f64,
    finite: bool,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Single 7/15 panel on [a, b] with the QUADPACK-style error estimate.
fn gk15_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Panel {
    let centr = 0.5 * (a + b);
    let hlgth = 0.5 * (b - a);

    let fc = f(centr);
    let mut fv_lo = [0.0f64; 8];
    let mut fv_hi = [0.0f64; 8];
    fv_lo[0] = fc;
    fv_hi[0] = fc;
    let mut finite = fc.is_finite();
    for j in 1..8 {
        let dx = hlgth * GK15_XGK[j];
        fv_lo[j] = f(centr - dx);
        fv_hi[j] = f(centr + dx);
        finite &= fv_lo[j].is_finite() && fv_hi[j].is_finite();
    }

    let mut resk = GK15_WGK[0] * fc;
    let mut resabs = GK15_WGK[0] * fc.abs();
    for j in 1..8 {
        resk += GK15_WGK[j] * (fv_lo[j] + fv_hi[j]);
        resabs += GK15_WGK[j] * (fv_lo[j].abs() + fv_hi[j].abs());
    }
    let mut resg = GK15_WG[0] * fc;
    for (i, &j) in [2usize, 4, 6].iter().enumerate() {
        resg += GK15_WG[i + 1] * (fv_lo[j] + fv_hi[j]);
    }

    let reskh = 0.5 * resk;
    let mut resasc = GK15_WGK[0] * (fc - reskh).abs();
    for j in 1..8 {
        resasc += GK15_WGK[j] * ((fv_lo[j] - reskh).abs() + (fv_hi[j] - reskh).abs());
    }

    let value = resk * hlgth;
    let resabs = resabs * hlgth.abs();
    let resasc = resasc * hlgth.abs();
    let mut err = ((resk - resg) * hlgth).abs();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    let round_off = 50.0 * f64::EPSILON * resabs;
    if round_off > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(round_off);
    }

    Panel {
        a,
        b,
        value,
        err,
        abs: resabs,
        finite,
    }
}

/// Adaptive integral of `f` over the finite interval [a, b].
///
/// Returns `Ok(f64::INFINITY)` when divergence is detected (non-finite
/// samples or interval sums past `divergence_sum`); `Err` only when the
/// subdivision budget is exhausted with the error estimate still above
/// tolerance.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, opts: QuadOpts) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let first = gk15_panel(&f, a, b);
    if !first.finite {
        return Ok(f64::INFINITY);
    }
    let mut heap = BinaryHeap::new();
    let mut total = first.value;
    let mut errsum = first.err;
    let mut abssum = first.abs;
    // Error mass on intervals too narrow to split further.
    let mut frozen = 0.0f64;
    heap.push(first);

    loop {
        let tol = opts.abs_tol.max(opts.rel_tol * total.abs());
        if errsum + frozen <= tol {
            return Ok(total);
        }
        if abssum > opts.divergence_sum {
            return Ok(f64::INFINITY);
        }
        if heap.len() >= opts.max_intervals || heap.is_empty() {
            if errsum + frozen <= tol.max(1e-6 * total.abs()) {
                return Ok(total);
            }
            let err = errsum + frozen;
            return Err(Error::Numerical(format!(
                "quadrature failed to converge on [{a}, {b}]: err {err:.3e} vs tol {tol:.3e}"
            )));
        }
        let worst = heap.pop().unwrap();
        let mid = 0.5 * (worst.a + worst.b);
        // Splitting below the local floating-point resolution would sample
        // nodes that round onto the panel ends; retire such panels instead.
        let width_floor = 4.0 * f64::EPSILON * worst.a.abs().max(worst.b.abs());
        if mid <= worst.a || mid >= worst.b || worst.b - worst.a <= width_floor {
            frozen += worst.err;
            errsum -= worst.err;
            if errsum < 0.01 * frozen {
                // Refining the live panels can no longer move the total.
                let tol = opts.abs_tol.max(opts.rel_tol * total.abs());
                if errsum + frozen <= tol.max(1e-6 * total.abs()) {
                    return Ok(total);
                }
                return Err(Error::Numerical(format!(
                    "quadrature stalled on [{a}, {b}] at error {:.3e}",
                    errsum + frozen
                )));
            }
            continue;
        }
        let left = gk15_panel(&f, worst.a, mid);
        let right = gk15_panel(&f, mid, worst.b);
        if !left.finite || !right.finite {
            return Ok(f64::INFINITY);
        }
        total += left.value + right.value - worst.value;
        errsum += left.err + right.err - worst.err;
        abssum += left.abs + right.abs - worst.abs;
        heap.push(left);
        heap.push(right);
    }
}

/// Adaptive integral of `f` over [a, +inf), via z = a + t/(1-t).
pub fn integrate_to_inf<F: Fn(f64) -> f64>(f: F, a: f64, opts: QuadOpts) -> Result<f64> {
    integrate(
        |t| {
            let om = 1.0 - t;
            if om <= 0.0 {
                // Rounding can push a node onto t = 1; a convergent mapped
                // integrand vanishes there, a divergent one is caught from
                // interior samples.
                return 0.0;
            }
            f(a + t / om) / (om * om)
        },
        0.0,
        1.0,
        opts,
    )
}

/// Fixed 8-point Gauss–Legendre panel on [a, b]; exact through degree 15.
pub fn gl8<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut s = 0.0;
    for j in 0..4 {
        let dx = h * GL8_X[j];
        s += GL8_W[j] * (f(c - dx) + f(c + dx));
    }
    s * h
}

/// Gauss–Legendre over [a, b] split into `n` equal panels.
pub fn gl8_panels<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    assert!(n > 0, "need at least one panel");
    let h = (b - a) / n as f64;
    (0..n)
        .map(|k| gl8(&f, a + k as f64 * h, a + (k + 1) as f64 * h))
        .sum()
}
