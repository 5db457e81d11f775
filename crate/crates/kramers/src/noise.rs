//! Accelerated Poisson random measures and their tilted variants.
//!
//! The driving noise of the perturbed system is a Poisson random measure
//! with intensity ds x (1/epsilon) nu(dz). Realizations are lists of
//! (time, mark) records on a finite horizon; jump times come from
//! exponential gaps, so no discretization error enters through the noise.
//!
//! A jump-intensity control g(s,z) changes the intensity to g nu / epsilon.
//! Such measures are realized exactly by thinning a proposal stream of rate
//! sup(g) * m_eff / epsilon, valid for the bounded controls used throughout.
//! The matching Girsanov log-weight
//!
//!   log W = sum_i ln(1/g(t_i, z_i)) + (1/eps) int_0^T int (g - 1) dnu ds
//!
//! is the log Doleans-Dade exponential of the change of measure from the
//! tilted intensity back to the original one, so that
//! E_tilted[f * e^{log W}] = E[f] for bounded path functionals f.

use crate::measures::LevyMeasure;
use crate::{Error, Result};
use rand::Rng;

/// Horizon and scale parameters for one noise realization.
#[derive(Clone, Debug)]
pub struct NoiseParams<'a> {
    pub epsilon: f64,
    pub measure: &'a LevyMeasure,
    pub horizon: f64,
}

impl<'a> NoiseParams<'a> {
    pub fn new(epsilon: f64, measure: &'a LevyMeasure, horizon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::Invalid(format!("epsilon must lie in (0,1], got {epsilon}")));
        }
        if !(horizon >= 0.0) {
            return Err(Error::Invalid(format!("horizon must be nonnegative, got {horizon}")));
        }
        Ok(NoiseParams { epsilon, measure, horizon })
    }
}

/// One atom of a realized jump measure.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpRecord {
    pub time: f64,
    pub mark: Vec<f64>,
}

/// A deterministic jump-intensity control, as seen by the sampler.
///
/// Implementations declare their own supremum and closed-form compensator;
/// nothing is estimated from samples, so thinning is exact and weights carry
/// no hidden bias.
pub trait JumpIntensity {
    /// Intensity multiplier g(s, z).
    fn g(&self, s: f64, z: &[f64]) -> f64;

    /// Declared bound with g(s,z) <= g_sup on [0,T] x supp(nu).
    fn g_sup(&self) -> f64;

    /// int_{t0}^{t1} int_{|z| > cutoff} (g(s,z) - 1) nu(dz) ds, closed form.
    fn compensator(&self, measure: &LevyMeasure, t0: f64, t1: f64) -> f64;

    /// True when g is identically one; lets the sampler fall back to the
    /// plain realization bit-for-bit.
    fn is_identity(&self) -> bool {
        false
    }
}

fn exponential_gap<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    loop {
        let u: f64 = rng.random();
        let gap = -(1.0 - u).ln() / rate;
        if gap > 0.0 {
            return gap;
        }
    }
}

/// Realize the accelerated Poisson random measure on [0, horizon].
///
/// Jump times form a Poisson process of rate m_eff/epsilon with marks i.i.d.
/// from the cutoff-restricted normalized measure.
pub fn simulate_prm<R: Rng + ?Sized>(params: &NoiseParams, rng: &mut R) -> Result<Vec<JumpRecord>> {
    let m_eff = params.measure.effective_mass();
    if !(m_eff > 0.0) || !m_eff.is_finite() {
        return Err(Error::Invalid(
            "measure has no finite positive sampling mass (set a cutoff for infinite-intensity measures)".into(),
        ));
    }
    let rate = m_eff / params.epsilon;
    let mut out = Vec::new();
    let mut t = exponential_gap(rng, rate);
    while t <= params.horizon {
        let mark = params.measure.sample_jump(rng)?;
        out.push(JumpRecord { time: t, mark });
        t += exponential_gap(rng, rate);
    }
    Ok(out)
}

/// Realize the tilted measure N^{g/eps} by exact thinning.
pub fn simulate_tilted_prm<R: Rng + ?Sized, C: JumpIntensity + ?Sized>(
    params: &NoiseParams,
    control: &C,
    rng: &mut R,
) -> Result<Vec<JumpRecord>> {
    if control.is_identity() {
        return simulate_prm(params, rng);
    }
    let g_max = control.g_sup();
    if !(g_max > 0.0) || !g_max.is_finite() {
        return Err(Error::Invalid(format!(
            "tilted simulation needs a finite positive control bound, got {g_max}"
        )));
    }
    let m_eff = params.measure.effective_mass();
    if !(m_eff > 0.0) || !m_eff.is_finite() {
        return Err(Error::Invalid(
            "measure has no finite positive sampling mass (set a cutoff for infinite-intensity measures)".into(),
        ));
    }
    let rate = g_max * m_eff / params.epsilon;
    let mut out = Vec::new();
    let mut t = exponential_gap(rng, rate);
    while t <= params.horizon {
        let mark = params.measure.sample_jump(rng)?;
        let accept: f64 = rng.random();
        let gz = control.g(t, &mark);
        if accept * g_max < gz {
            out.push(JumpRecord { time: t, mark });
        }
        t += exponential_gap(rng, rate);
    }
    Ok(out)
}

/// Log Girsanov weight of a tilted realization, transporting expectations
/// under the tilted law back to the original one.
pub fn girsanov_log_weight<C: JumpIntensity + ?Sized>(
    params: &NoiseParams,
    control: &C,
    jumps: &[JumpRecord],
) -> Result<f64> {
    let mut log_w = 0.0;
    for j in jumps {
        let g = control.g(j.time, &j.mark);
        if !(g > 0.0) {
            return Err(Error::Numerical(format!(
                "degenerate weight: control vanishes at realized jump t={}",
                j.time
            )));
        }
        log_w -= g.ln();
    }
    log_w += control.compensator(params.measure, 0.0, params.horizon) / params.epsilon;
    Ok(log_w)
}
