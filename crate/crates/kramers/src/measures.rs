//! Jump (Levy) measures: densities, moments, tail integrals and exact
//! radial sampling.
//!
//! Three families are supported.
//!
//! * `ExponentialLight`: density e^(-|z|^beta) with beta >= 2, finite total
//!   mass and square-exponential tail control.
//! * `GaussTemperedStable`: infinite-intensity measure carried by a finite
//!   set of weighted rays, with radial density e^(-gamma r^2 / 2) / r^(alpha+1)
//!   along each ray. The r^-(alpha+1) pole makes the total mass infinite
//!   while keeping int (1 ^ |z|^2) dnu finite.
//! * `CompactSupport`: constant density on a centered ball, zero outside.
//!
//! Sampling restricts an infinite-intensity measure to {|z| > cutoff}; the
//! induced bias is queryable through [`LevyMeasure::second_moment_below`]
//! evaluated at the cutoff. Radial laws are inverted through a 4096-knot
//! log-spaced CDF table with exact density slopes, so samples carry no
//! rejection residue and quantiles are accurate to well under 1e-10.

use crate::interp::MonotoneCubic;
use crate::quad::{self, QuadOpts};
use crate::{la, Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// Extended nonnegative real returned by mass-like queries.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mass {
    Finite(f64),
    Infinite,
}

impl Mass {
    pub fn is_finite(&self) -> bool {
        matches!(self, Mass::Finite(_))
    }

    /// Finite value, if any.
    pub fn finite(&self) -> Option<f64> {
        match self {
            Mass::Finite(v) => Some(*v),
            Mass::Infinite => None,
        }
    }

    fn from_quad(v: f64) -> Mass {
        if v.is_finite() {
            Mass::Finite(v)
        } else {
            Mass::Infinite
        }
    }
}

impl std::fmt::Display for Mass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mass::Finite(v) => write!(f, "{v}"),
            Mass::Infinite => write!(f, "INFINITE"),
        }
    }
}

/// Measure family and its parameters.
#[derive(Clone, Debug)]
pub enum MeasureKind {
    ExponentialLight {
        beta: f64,
    },
    GaussTemperedStable {
        alpha: f64,
        gamma: f64,
        /// Weighted unit directions carrying the radial law.
        directions: Vec<(Vec<f64>, f64)>,
    },
    CompactSupport {
        radius: f64,
        level: f64,
    },
}

/// One ray of the measure together with its weight, for mark-space
/// partitions of one-dimensional or ray-carried measures.
#[derive(Clone, Debug)]
pub struct Ray {
    pub dir: Vec<f64>,
    pub weight: f64,
}

const TABLE_KNOTS: usize = 4096;

/// A jump measure on R^d \ {0}.
#[derive(Clone, Debug)]
pub struct LevyMeasure {
    kind: MeasureKind,
    dim: usize,
    cutoff: f64,
    total: Mass,
    /// nu({|z| > cutoff}); infinite only when an infinite-intensity measure
    /// has cutoff 0, in which case sampling is refused.
    effective: f64,
    /// Radial CDF of the cutoff-restricted measure, in mass units.
    table: Option<MonotoneCubic>,
    r_hi: f64,
    mean: Vec<f64>,
}

/// Surface area of the unit sphere S^{d-1} (2 for d = 1).
fn sphere_area(d: usize) -> f64 {
    // 2 pi^{d/2} / Gamma(d/2), with Gamma at half-integers by recurrence.
    let mut g = if d % 2 == 0 { 1.0 } else { std::f64::consts::PI.sqrt() };
    let mut x = if d % 2 == 0 { 1.0 } else { 0.5 };
    while x < d as f64 / 2.0 - 0.25 {
        g *= x;
        x += 1.0;
    }
    2.0 * std::f64::consts::PI.powf(d as f64 / 2.0) / g
}

/// Volume of the d-dimensional ball of radius r.
pub fn ball_volume(d: usize, r: f64) -> f64 {
    sphere_area(d) / d as f64 * r.powi(d as i32)
}

impl LevyMeasure {
    /// Validate parameters and precompute mass and sampling tables.
    pub fn new(kind: MeasureKind, dim: usize, cutoff: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("dimension must be positive".into()));
        }
        if !(cutoff >= 0.0) || !cutoff.is_finite() {
            return Err(Error::Invalid("small-jump cutoff must be finite and >= 0".into()));
        }
        match &kind {
            MeasureKind::ExponentialLight { beta } => {
                if !(*beta >= 2.0) {
                    return Err(Error::Invalid(format!(
                        "exponential-light tail exponent must be >= 2, got {beta}"
                    )));
                }
            }
            MeasureKind::GaussTemperedStable { alpha, gamma, directions } => {
                if !(*alpha > 0.0 && *alpha < 2.0) {
                    return Err(Error::Invalid(format!("alpha must lie in (0,2), got {alpha}")));
                }
                if !(*gamma > 0.0) {
                    return Err(Error::Invalid(format!("gamma must be positive, got {gamma}")));
                }
                if directions.is_empty() {
                    return Err(Error::Invalid("need at least one direction".into()));
                }
                for (v, w) in directions {
                    if v.len() != dim {
                        return Err(Error::Invalid("direction dimension mismatch".into()));
                    }
                    if (la::norm(v) - 1.0).abs() > 1e-9 {
                        return Err(Error::Invalid("directions must be unit vectors".into()));
                    }
                    if !(*w > 0.0) {
                        return Err(Error::Invalid("direction weights must be positive".into()));
                    }
                }
            }
            MeasureKind::CompactSupport { radius, level } => {
                if !(*radius > 0.0) || !(*level > 0.0) {
                    return Err(Error::Invalid("compact measure needs positive radius and level".into()));
                }
                if cutoff >= *radius {
                    return Err(Error::Invalid("cutoff swallows the whole support".into()));
                }
            }
        }

        let mut m = LevyMeasure {
            kind,
            dim,
            cutoff,
            total: Mass::Infinite,
            effective: f64::INFINITY,
            table: None,
            r_hi: 0.0,
            mean: Vec::new(),
        };
        m.total = m.compute_total_mass();
        if m.total.is_finite() || m.cutoff > 0.0 {
            m.build_table()?;
        }
        m.mean = m.compute_mean_mark();
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn kind(&self) -> &MeasureKind {
        &self.kind
    }

    pub fn is_infinite_intensity(&self) -> bool {
        !self.total.is_finite()
    }

    /// Radial factor of the density along a ray, per unit direction weight.
    pub fn ray_radial(&self, r: f64) -> f64 {
        match &self.kind {
            MeasureKind::ExponentialLight { beta } => (-r.powf(*beta)).exp(),
            MeasureKind::GaussTemperedStable { alpha, gamma, .. } => {
                (-0.5 * gamma * r * r).exp() / r.powf(alpha + 1.0)
            }
            MeasureKind::CompactSupport { radius, level } => {
                if r <= *radius {
                    *level
                } else {
                    0.0
                }
            }
        }
    }

    /// Density of the radial projection nu(|z| in dr) w.r.t. dr.
    fn radial_weight(&self, r: f64) -> f64 {
        match &self.kind {
            MeasureKind::GaussTemperedStable { directions, .. } => {
                let w: f64 = directions.iter().map(|(_, w)| w).sum();
                w * self.ray_radial(r)
            }
            _ => sphere_area(self.dim) * r.powi(self.dim as i32 - 1) * self.ray_radial(r),
        }
    }

    fn compute_total_mass(&self) -> Mass {
        match &self.kind {
            MeasureKind::GaussTemperedStable { .. } => Mass::Infinite,
            MeasureKind::CompactSupport { radius, level } => {
                Mass::Finite(level * ball_volume(self.dim, *radius))
            }
            MeasureKind::ExponentialLight { .. } => {
                let v = quad::integrate_to_inf(|r| self.radial_weight(r), 0.0, QuadOpts::default())
                    .expect("total mass quadrature");
                Mass::from_quad(v)
            }
        }
    }

    /// Smallest radius with relative tail mass below 1e-15.
    fn find_r_hi(&self) -> f64 {
        if let MeasureKind::CompactSupport { radius, .. } = &self.kind {
            return *radius;
        }
        let mut r = 1.0;
        loop {
            let tail = quad::integrate_to_inf(|s| self.radial_weight(s), r, QuadOpts::default())
                .expect("tail quadrature");
            let head = quad::integrate(
                |s| self.radial_weight(s),
                self.cutoff.max(r * 1e-12),
                r,
                QuadOpts::default(),
            )
            .expect("head quadrature");
            if tail <= 1e-15 * (head + tail) {
                return r;
            }
            r *= 2.0;
        }
    }

    fn build_table(&mut self) -> Result<()> {
        let r_hi = self.find_r_hi();
        let r_lo = if self.cutoff > 0.0 { self.cutoff } else { r_hi * 1e-12 };
        let mut xs = Vec::with_capacity(TABLE_KNOTS + 1);
        if self.cutoff == 0.0 {
            xs.push(0.0);
        }
        let n = TABLE_KNOTS - 1;
        let log_step = (r_hi / r_lo).ln() / n as f64;
        for i in 0..=n {
            xs.push(r_lo * (log_step * i as f64).exp());
        }
        // Cumulative mass by per-segment Gauss-Legendre; segments are narrow
        // relative to their location, so a single panel is at round-off.
        let mut ys = Vec::with_capacity(xs.len());
        ys.push(0.0);
        for i in 1..xs.len() {
            let seg = quad::gl8(|r| self.radial_weight(r), xs[i - 1], xs[i]);
            ys.push(ys[i - 1] + seg);
        }
        let ds: Vec<f64> = xs.iter().map(|&r| if r == 0.0 { self.radial_weight(1e-300).min(1e300) } else { self.radial_weight(r) }).collect();
        let effective = *ys.last().unwrap();
        self.table = Some(MonotoneCubic::with_slopes(xs, ys, ds)?);
        self.effective = effective;
        self.r_hi = r_hi;
        Ok(())
    }

    /// Density dnu/dz at z != 0. For ray-carried measures this is the radial
    /// factor on the ray through z (zero off the rays).
    pub fn density(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.dim {
            return Err(Error::Invalid("point dimension mismatch".into()));
        }
        let r = la::norm(z);
        if r == 0.0 {
            return Err(Error::Invalid("density is undefined at the origin".into()));
        }
        match &self.kind {
            MeasureKind::GaussTemperedStable { directions, .. } => {
                let on_ray = directions.iter().any(|(v, _)| {
                    la::dist(&z.iter().map(|c| c / r).collect::<Vec<_>>(), v) < 1e-9
                });
                Ok(if on_ray { self.ray_radial(r) } else { 0.0 })
            }
            _ => Ok(self.ray_radial(r)),
        }
    }

    /// nu(R^d \ {0}).
    pub fn total_mass(&self) -> Mass {
        self.total
    }

    /// Mass available to the sampler: nu({|z| > cutoff}).
    pub fn effective_mass(&self) -> f64 {
        self.effective
    }

    /// int_{0 < |z| <= r} |z|^2 nu(dz). Accepts r = infinity.
    pub fn second_moment_below(&self, r: f64) -> f64 {
        assert!(r > 0.0, "radius must be positive");
        let f = |s: f64| s * s * self.radial_weight(s);
        if r.is_infinite() {
            quad::integrate_to_inf(f, 0.0, QuadOpts::default()).expect("second moment quadrature")
        } else {
            quad::integrate(f, 0.0, r, QuadOpts::default()).expect("second moment quadrature")
        }
    }

    /// int_{|z| > 1} e^{Gamma |z|^2} nu(dz), or INFINITE when it diverges.
    pub fn exp_tail_integral(&self, gamma_exp: f64) -> Mass {
        assert!(gamma_exp > 0.0, "tail exponent must be positive");
        // Fold the exponential into the density in log space so that huge
        // intermediate factors cannot round to inf * 0.
        let f = |r: f64| -> f64 {
            match &self.kind {
                MeasureKind::ExponentialLight { beta } => {
                    sphere_area(self.dim)
                        * r.powi(self.dim as i32 - 1)
                        * (gamma_exp * r * r - r.powf(*beta)).exp()
                }
                MeasureKind::GaussTemperedStable { alpha, gamma, directions } => {
                    let w: f64 = directions.iter().map(|(_, w)| w).sum();
                    w * ((gamma_exp - 0.5 * gamma) * r * r).exp() / r.powf(alpha + 1.0)
                }
                MeasureKind::CompactSupport { .. } => {
                    (gamma_exp * r * r).exp() * self.radial_weight(r)
                }
            }
        };
        if let MeasureKind::CompactSupport { radius, .. } = &self.kind {
            if *radius <= 1.0 {
                return Mass::Finite(0.0);
            }
            let v = quad::integrate(f, 1.0, *radius, QuadOpts::default()).expect("tail quadrature");
            return Mass::from_quad(v);
        }
        match quad::integrate_to_inf(f, 1.0, QuadOpts::default()) {
            Ok(v) => Mass::from_quad(v),
            Err(_) => Mass::Infinite,
        }
    }

    /// Analytic finiteness of [`Self::exp_tail_integral`] at the given exponent.
    pub fn light_tail_finite(&self, gamma_exp: f64) -> bool {
        match &self.kind {
            MeasureKind::ExponentialLight { beta } => *beta > 2.0 || gamma_exp < 1.0,
            MeasureKind::GaussTemperedStable { gamma, .. } => gamma_exp <= 0.5 * gamma,
            MeasureKind::CompactSupport { .. } => true,
        }
    }

    /// Draw one mark from nu restricted to {|z| > cutoff}, normalized.
    pub fn sample_jump<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let table = self.table.as_ref().ok_or_else(|| {
            Error::Invalid("infinite-intensity measure needs a positive cutoff to sample".into())
        })?;
        let u: f64 = rng.random::<f64>() * self.effective;
        let r = table.inverse(u.max(f64::MIN_POSITIVE));
        let dir = self.sample_direction(rng);
        Ok(dir.into_iter().map(|c| c * r).collect())
    }

    fn sample_direction<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        if let MeasureKind::GaussTemperedStable { directions, .. } = &self.kind {
            let w: f64 = directions.iter().map(|(_, w)| w).sum();
            let mut u: f64 = rng.random::<f64>() * w;
            for (v, wi) in directions {
                if u < *wi {
                    return v.clone();
                }
                u -= wi;
            }
            return directions.last().unwrap().0.clone();
        }
        if self.dim == 1 {
            return vec![if rng.random::<bool>() { 1.0 } else { -1.0 }];
        }
        loop {
            let v: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = la::norm(&v);
            if n > 1e-8 {
                return v.into_iter().map(|c| c / n).collect();
            }
        }
    }

    /// CDF of the sampled radial law (mass units), for goodness-of-fit tests.
    pub fn radial_cdf(&self, r: f64) -> Result<f64> {
        let table = self
            .table
            .as_ref()
            .ok_or_else(|| Error::Invalid("measure has no sampling table".into()))?;
        Ok(table.eval(r))
    }

    /// int_{|z| > cutoff} z nu(dz), precomputed once; exactly zero for the
    /// rotation- or sign-symmetric families.
    pub fn mean_mark(&self) -> &[f64] {
        &self.mean
    }

    fn compute_mean_mark(&self) -> Vec<f64> {
        match &self.kind {
            MeasureKind::GaussTemperedStable { directions, .. } => {
                let lo = if self.cutoff > 0.0 { self.cutoff } else { f64::MIN_POSITIVE };
                let m1 = quad::integrate_to_inf(|r| r * self.ray_radial(r), lo, QuadOpts::default())
                    .expect("first moment quadrature");
                let mut out = vec![0.0; self.dim];
                for (v, w) in directions {
                    la::axpy(&mut out, w * m1, v);
                }
                out
            }
            _ => vec![0.0; self.dim],
        }
    }

    /// Weighted rays for mark-space partitions; `None` when the measure is
    /// genuinely multidimensional-continuous.
    pub fn ray_set(&self) -> Option<Vec<Ray>> {
        match &self.kind {
            MeasureKind::GaussTemperedStable { directions, .. } => Some(
                directions
                    .iter()
                    .map(|(v, w)| Ray { dir: v.clone(), weight: *w })
                    .collect(),
            ),
            _ if self.dim == 1 => Some(vec![
                Ray { dir: vec![1.0], weight: 1.0 },
                Ray { dir: vec![-1.0], weight: 1.0 },
            ]),
            _ => None,
        }
    }

    /// (mass, first radial moment) of one ray segment r in [r0, r1], per
    /// unit ray weight.
    pub fn ray_cell_moments(&self, r0: f64, r1: f64) -> (f64, f64) {
        assert!(r1 >= r0 && r0 >= 0.0);
        if r0 == r1 {
            return (0.0, 0.0);
        }
        let lo = r0.max(1e-300);
        let m0 = quad::integrate(|r| self.ray_radial(r), lo, r1, QuadOpts::default())
            .expect("cell mass quadrature");
        let m1 = quad::integrate(|r| r * self.ray_radial(r), lo, r1, QuadOpts::default())
            .expect("cell moment quadrature");
        (m0, m1)
    }

    /// Mass of one ray beyond r0, per unit ray weight.
    pub fn ray_tail_mass(&self, r0: f64) -> f64 {
        if let MeasureKind::CompactSupport { radius, .. } = &self.kind {
            if r0 >= *radius {
                return 0.0;
            }
            return self.ray_cell_moments(r0, *radius).0;
        }
        quad::integrate_to_inf(|r| self.ray_radial(r), r0.max(1e-300), QuadOpts::default())
            .expect("ray tail quadrature")
    }

    /// Density w.r.t. Lebesgue measure including direction weights, when one
    /// exists (d = 1, or any continuous family).
    pub fn lebesgue_density(&self, z: &[f64]) -> Option<f64> {
        let r = la::norm(z);
        match &self.kind {
            MeasureKind::GaussTemperedStable { directions, .. } => {
                // The radial law is singular at the origin, so the density
                // is undefined there; elsewhere it lives on the rays only.
                if self.dim != 1 || r == 0.0 {
                    return None;
                }
                let sign = if z[0] > 0.0 { 1.0 } else { -1.0 };
                directions
                    .iter()
                    .find(|(v, _)| (v[0] - sign).abs() < 1e-9)
                    .map(|(_, w)| w * self.ray_radial(r))
                    .or(Some(0.0))
            }
            _ => Some(self.ray_radial(r)),
        }
    }

    /// Whether z lies in the support of nu.
    pub fn support_contains(&self, z: &[f64]) -> bool {
        let r = la::norm(z);
        match &self.kind {
            MeasureKind::ExponentialLight { .. } => true,
            MeasureKind::CompactSupport { radius, .. } => r <= *radius,
            MeasureKind::GaussTemperedStable { directions, .. } => {
                if r == 0.0 {
                    return true;
                }
                directions.iter().any(|(v, _)| {
                    la::dist(&z.iter().map(|c| c / r).collect::<Vec<_>>(), v) < 1e-9
                })
            }
        }
    }

    /// Distance from a point to the complement of supp(nu); infinite for
    /// fully supported measures.
    pub fn dist_to_support_complement(&self, c: &[f64]) -> f64 {
        match &self.kind {
            MeasureKind::ExponentialLight { .. } => f64::INFINITY,
            MeasureKind::CompactSupport { radius, .. } => (radius - la::norm(c)).max(0.0),
            MeasureKind::GaussTemperedStable { directions, .. } => {
                if self.dim == 1 {
                    let plus = directions.iter().any(|(v, _)| v[0] > 0.0);
                    let minus = directions.iter().any(|(v, _)| v[0] < 0.0);
                    match (plus, minus) {
                        (true, true) => f64::INFINITY,
                        (true, false) => c[0].max(0.0),
                        (false, true) => (-c[0]).max(0.0),
                        (false, false) => 0.0,
                    }
                } else {
                    // A finite union of rays has dense complement in d >= 2.
                    0.0
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::rng_for;

    fn exp_light() -> LevyMeasure {
        LevyMeasure::new(MeasureKind::ExponentialLight { beta: 2.0 }, 1, 0.0).unwrap()
    }

    fn gts(cutoff: f64) -> LevyMeasure {
        LevyMeasure::new(
            MeasureKind::GaussTemperedStable {
                alpha: 0.5,
                gamma: 1.0,
                directions: vec![(vec![1.0], 0.5), (vec![-1.0], 0.5)],
            },
            1,
            cutoff,
        )
        .unwrap()
    }

    fn compact() -> LevyMeasure {
        LevyMeasure::new(MeasureKind::CompactSupport { radius: 1.0, level: 1.0 }, 1, 0.0).unwrap()
    }

    #[test]
    fn density_values() {
        let m = exp_light();
        assert!((m.density(&[0.5]).unwrap() - (-0.25f64).exp()).abs() < 1e-15);
        assert!(m.density(&[0.0]).is_err());

        let g = gts(0.0);
        assert!((g.density(&[1.0]).unwrap() - (-0.5f64).exp()).abs() < 1e-15);

        let c = compact();
        assert_eq!(c.density(&[2.0]).unwrap(), 0.0);
        assert_eq!(c.density(&[0.3]).unwrap(), 1.0);
    }

    #[test]
    fn total_masses() {
        let pi = std::f64::consts::PI;
        assert!((exp_light().total_mass().finite().unwrap() - pi.sqrt()).abs() < 1e-10);
        assert_eq!(gts(0.0).total_mass(), Mass::Infinite);
        assert_eq!(compact().total_mass(), Mass::Finite(2.0));
    }

    #[test]
    fn second_moments() {
        let pi = std::f64::consts::PI;
        let m = exp_light();
        let full = m.second_moment_below(f64::INFINITY);
        assert!((full - pi.sqrt() / 2.0).abs() < 1e-10, "got {full}");
        assert!(m.second_moment_below(1e-6) < 1e-17);
        assert!(m.second_moment_below(0.5) < m.second_moment_below(1.0));

        // Compact uniform on [-1,1]: int z^2 dz = 2/3. The density jump at
        // |z| = 1 costs the adaptive scheme a couple of digits.
        let c = compact();
        assert!((c.second_moment_below(5.0) - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn gts_second_moment_matches_incomplete_gamma() {
        // For radial density e^{-gamma r^2/2} r^{-alpha-1} and total direction
        // weight W, the moment below theta is
        //   W (2/gamma)^{(2-alpha)/2} / 2 * gamma_lower((2-alpha)/2, gamma theta^2/2).
        let g = gts(0.0);
        let (alpha, gamma, w) = (0.5, 1.0, 1.0);
        for theta in [0.05f64, 0.3, 1.0, 2.5] {
            let got = g.second_moment_below(theta);
            let a = (2.0 - alpha) / 2.0;
            let closed = w * (2.0f64 / gamma).powf(a) / 2.0
                * statrs::function::gamma::gamma_li(a, gamma * theta * theta / 2.0);
            assert!(
                (got - closed).abs() <= 1e-8 * closed,
                "theta={theta}: {got} vs {closed}"
            );
            // Paper-style bound with the gaussian factor dropped.
            let bound = theta.powf(2.0 - alpha) * w / (2.0 - alpha);
            assert!(got <= bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn small_jump_scaling_stays_bounded() {
        let g = gts(0.0);
        let (alpha, w) = (0.5, 1.0);
        let mut last = f64::INFINITY;
        for k in 1..=6 {
            let eps = 10f64.powi(-k);
            let theta = eps.sqrt() * eps.ln().abs();
            let scaled = eps.ln().abs() * g.second_moment_below(theta);
            let bound = eps.ln().abs() * theta.powf(2.0 - alpha) * w / (2.0 - alpha);
            assert!(scaled <= bound * (1.0 + 1e-12));
            assert!(scaled <= 1.0, "not bounded at eps={eps}: {scaled}");
            last = scaled;
        }
        // Polynomial decay: by eps = 1e-6 the scaled moment is well under way
        // to zero even though it peaks around eps = 1e-2.
        assert!(last < 0.05, "scaled moment should decay, got {last}");
    }

    #[test]
    fn exp_tail_integrals() {
        let m = exp_light();
        let got = m.exp_tail_integral(0.5).finite().unwrap();
        // 2 int_1^inf e^{-z^2/2} dz = sqrt(2 pi) erfc(1/sqrt 2)
        let want = (2.0 * std::f64::consts::PI).sqrt()
            * statrs::function::erf::erfc(1.0 / 2.0f64.sqrt());
        assert!((got - want).abs() < 1e-8 * want, "{got} vs {want}");
        assert_eq!(m.exp_tail_integral(1.5), Mass::Infinite);
        assert_eq!(m.exp_tail_integral(1.0), Mass::Infinite);

        assert_eq!(compact().exp_tail_integral(3.0), Mass::Finite(0.0));

        let g = gts(0.0);
        assert!(g.exp_tail_integral(0.3).is_finite());
        assert_eq!(g.exp_tail_integral(0.7), Mass::Infinite);

        for gamma in [0.3, 0.5, 0.7, 1.5] {
            assert_eq!(m.exp_tail_integral(gamma).is_finite(), m.light_tail_finite(gamma));
            assert_eq!(g.exp_tail_integral(gamma).is_finite(), g.light_tail_finite(gamma));
        }
    }

    #[test]
    fn sampler_moments() {
        let m = exp_light();
        let mut rng = rng_for(7, "measure-test", 0);
        let n = 100_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z = m.sample_jump(&mut rng).unwrap()[0];
            s1 += z;
            s2 += z * z;
        }
        let mean = s1 / n as f64;
        let m2 = s2 / n as f64;
        // Marks are N(0, 1/2): sd of the mean is sqrt(0.5/n).
        assert!(mean.abs() < 3.0 * (0.5 / n as f64).sqrt(), "mean {mean}");
        // Var(z^2) = 3/4 - 1/4 = 1/2.
        assert!((m2 - 0.5).abs() < 3.0 * (0.5 / n as f64).sqrt(), "m2 {m2}");
    }

    #[test]
    fn sampler_respects_cutoff() {
        let g = gts(0.01);
        let mut rng = rng_for(8, "measure-test", 0);
        for _ in 0..10_000 {
            let z = g.sample_jump(&mut rng).unwrap();
            assert!(z[0].abs() > 0.01);
        }
        assert!(gts(0.0).sample_jump(&mut rng).is_err());
    }

    #[test]
    fn sampler_radial_ks() {
        let m = exp_light();
        let mut rng = rng_for(9, "measure-test", 0);
        let n = 100_000;
        let mut radii: Vec<f64> = (0..n)
            .map(|_| la::norm(&m.sample_jump(&mut rng).unwrap()))
            .collect();
        radii.sort_by(f64::total_cmp);
        let total = m.effective_mass();
        let mut d = 0.0f64;
        for (i, r) in radii.iter().enumerate() {
            let f = m.radial_cdf(*r).unwrap() / total;
            let lo = i as f64 / n as f64;
            let hi = (i + 1) as f64 / n as f64;
            d = d.max((f - lo).abs().max((f - hi).abs()));
        }
        // 1% critical value of the Kolmogorov statistic.
        assert!(d < 1.628 / (n as f64).sqrt(), "KS statistic {d}");
    }

    #[test]
    fn mean_mark_symmetry() {
        assert_eq!(exp_light().mean_mark(), vec![0.0]);
        let asym = LevyMeasure::new(
            MeasureKind::GaussTemperedStable {
                alpha: 0.5,
                gamma: 1.0,
                directions: vec![(vec![1.0], 1.0)],
            },
            1,
            0.1,
        )
        .unwrap();
        assert!(asym.mean_mark()[0] > 0.0);
        let g = gts(0.1);
        assert!(g.mean_mark()[0].abs() < 1e-12);
    }

    #[test]
    fn support_geometry() {
        let m = exp_light();
        assert_eq!(m.dist_to_support_complement(&[0.3]), f64::INFINITY);
        let c = compact();
        assert_eq!(c.dist_to_support_complement(&[0.25]), 0.75);
        assert!(c.support_contains(&[0.9]) && !c.support_contains(&[1.1]));
        let one_sided = LevyMeasure::new(
            MeasureKind::GaussTemperedStable {
                alpha: 0.5,
                gamma: 1.0,
                directions: vec![(vec![1.0], 1.0)],
            },
            1,
            0.01,
        )
        .unwrap();
        assert_eq!(one_sided.dist_to_support_complement(&[0.4]), 0.4);
        assert!(!one_sided.support_contains(&[-0.2]));
    }

    #[test]
    fn constructor_rejects_bad_params() {
        assert!(LevyMeasure::new(MeasureKind::ExponentialLight { beta: 1.5 }, 1, 0.0).is_err());
        assert!(LevyMeasure::new(
            MeasureKind::GaussTemperedStable {
                alpha: 2.5,
                gamma: 1.0,
                directions: vec![(vec![1.0], 1.0)]
            },
            1,
            0.0
        )
        .is_err());
        assert!(
            LevyMeasure::new(MeasureKind::CompactSupport { radius: 1.0, level: 1.0 }, 1, 2.0)
                .is_err()
        );
    }

    #[test]
    fn ball_volumes() {
        assert!((ball_volume(1, 2.0) - 4.0).abs() < 1e-14);
        assert!((ball_volume(2, 1.0) - std::f64::consts::PI).abs() < 1e-13);
        assert!((ball_volume(3, 1.0) - 4.0 * std::f64::consts::PI / 3.0).abs() < 1e-13);
    }
}
