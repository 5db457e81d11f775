//! Tiny dense-vector helpers.
//!
//! State vectors and jump marks live in R^d for small d (1 or 2 in all the
//! shipped experiments), so everything is plain `Vec<f64>` / slices with
//! allocation-light arithmetic. Nothing here is meant to scale past d ~ 10.

/// y += a * x
pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Euclidean norm.
pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Euclidean distance.
pub fn dist(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Dot product.
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// x + a*y as a fresh vector.
pub fn add_scaled(x: &[f64], a: f64, y: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    axpy(&mut out, a, y);
    out
}

/// Convex combination (1-t)*x + t*y.
pub fn lerp(x: &[f64], y: &[f64], t: f64) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a + t * (b - a)).collect()
}

/// Componentwise scale in place.
pub fn scale(x: &mut [f64], a: f64) {
    for v in x.iter_mut() {
        *v *= a;
    }
}

/// a * x as a fresh vector.
pub fn scaled(x: &[f64], a: f64) -> Vec<f64> {
    x.iter().map(|v| a * v).collect()
}
