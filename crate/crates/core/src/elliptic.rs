//! Complete elliptic integral of the first kind via the arithmetic-geometric mean.

use std::f64::consts::FRAC_PI_2;

/// Arithmetic-geometric mean of `a` and `b`, iterated to 1e-15 relative agreement.
pub fn agm(mut a: f64, mut b: f64) -> f64 {
    for _ in 0..64 {
        if (a - b).abs() <= 1e-15 * a.abs() {
            break;
        }
        let next = 0.5 * (a + b);
        b = (a * b).sqrt();
        a = next;
    }
    0.5 * (a + b)
}

/// K(k) for modulus `k` in [0, 1). Note the argument is the modulus, not m = k².
pub fn ellipk(k: f64) -> f64 {
    debug_assert!((0.0..1.0).contains(&k), "ellipk requires 0 <= k < 1, got {k}");
    let kp = (1.0 - k * k).sqrt();
    FRAC_PI_2 / agm(1.0, kp)
}

/// Ratio K(k)/K(k') with k' = √(1 − k²).
pub fn ellipk_ratio(k: f64) -> f64 {
    let kp = (1.0 - k * k).sqrt();
    ellipk(k) / ellipk(kp)
}
