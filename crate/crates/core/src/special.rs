//! Closed-form segment integrals shared by the stepper and the analytic
//! evaluators. Every 0/0 point is handled by a series branch, so resonant
//! modes (omega_k == omega_s) are ordinary inputs.

use num_complex::Complex64;

/// Below this magnitude `sin(x)/x` switches to its Taylor series.
pub const SINC_SERIES_THRESHOLD: f64 = 1e-8;

const RAMP_SERIES_THRESHOLD: f64 = 1.0;

pub fn sinc(x: f64) -> f64 {
    if x.abs() < SINC_SERIES_THRESHOLD {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// `∫_0^h e^{i δ t} dt`, i.e. `(e^{i δ h} - 1) / (i δ)`.
pub fn segment_integral(delta: f64, h: f64) -> Complex64 {
    let half = 0.5 * delta * h;
    Complex64::from_polar(h * sinc(half), half)
}

/// `|∫_0^h e^{i δ t} dt|²`, the per-segment transfer weight `4 sin²(δh/2)/δ²`.
pub fn segment_weight(delta: f64, h: f64) -> f64 {
    let s = h * sinc(0.5 * delta * h);
    s * s
}

/// `∫_0^h (h - t) e^{-i δ t} dt`, the frozen-amplitude kernel double integral
/// for one mode with unit coupling.
pub fn ramp_integral(delta: f64, h: f64) -> Complex64 {
    let x = delta * h;
    let s = sinc(0.5 * x);
    let re = 0.5 * h * h * s * s;
    let im = -h * h * x_minus_sin_over_sq(x);
    Complex64::new(re, im)
}

/// `(x - sin x) / x²`, evaluated without cancellation near zero.
fn x_minus_sin_over_sq(x: f64) -> f64 {
    if x.abs() < RAMP_SERIES_THRESHOLD {
        // Σ_k (-1)^k x^{2k+1} / (2k+3)!, truncated below 1e-19 at |x| = 1
        let x2 = x * x;
        let mut term = x / 6.0;
        let mut sum = term;
        for k in 1..10 {
            let m = (2 * k + 2) as f64;
            term *= -x2 / (m * (m + 1.0));
            sum += term;
        }
        sum
    } else {
        (x - x.sin()) / (x * x)
    }
}

/// Distance of `phase` from the nearest odd multiple of pi.
pub fn distance_to_odd_pi(phase: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let shifted = (phase - std::f64::consts::PI).rem_euclid(two_pi);
    shifted.min(two_pi - shifted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn midpoint<F: Fn(f64) -> Complex64>(f: F, h: f64, n: usize) -> Complex64 {
        let w = h / n as f64;
        (0..n).map(|j| f((j as f64 + 0.5) * w) * w).sum()
    }

    #[test]
    fn segment_integral_matches_quadrature() {
        for &(delta, h) in &[(1.0, 0.7), (-3.2, 0.4), (0.0, 1.3), (12.0, 0.25)] {
            let quad = midpoint(|t| Complex64::from_polar(1.0, delta * t), h, 20_000);
            let closed = segment_integral(delta, h);
            assert!(
                (quad - closed).norm() < 1e-8,
                "{delta} {h}: {quad} vs {closed}"
            );
        }
    }

    #[test]
    fn ramp_integral_matches_quadrature() {
        for &(delta, h) in &[
            (1.0, 0.7),
            (-3.2, 0.4),
            (0.0, 1.3),
            (0.05, 1.0),
            (12.0, 0.25),
        ] {
            let quad = midpoint(|t| Complex64::from_polar(h - t, -delta * t), h, 20_000);
            let closed = ramp_integral(delta, h);
            assert!(
                (quad - closed).norm() < 1e-8,
                "{delta} {h}: {quad} vs {closed}"
            );
        }
    }

    #[test]
    fn ramp_series_branch_is_continuous() {
        let x = RAMP_SERIES_THRESHOLD * (1.0 - 1e-9);
        let series = x_minus_sin_over_sq(x);
        let direct = (x - x.sin()) / (x * x);
        assert!((series - direct).abs() < 2e-15 * direct);
    }

    #[test]
    fn weight_is_squared_modulus() {
        for &(delta, h) in &[(1.0, 0.7), (0.0, 2.0), (-5.0, 0.3)] {
            let e = segment_integral(delta, h);
            assert!((e.norm_sqr() - segment_weight(delta, h)).abs() < 1e-15);
        }
    }

    #[test]
    fn odd_pi_distance() {
        assert!(distance_to_odd_pi(PI).abs() < 1e-15);
        assert!(distance_to_odd_pi(-PI).abs() < 1e-15);
        assert!(distance_to_odd_pi(3.0 * PI).abs() < 1e-14);
        assert!((distance_to_odd_pi(0.0) - PI).abs() < 1e-15);
        assert!((distance_to_odd_pi(PI + 0.1) - 0.1).abs() < 1e-14);
    }
}
