//! Exponentially scaled modified Bessel functions for the lattice walk kernel.
//!
//! The symmetric continuous-time walk on `δℤ` with per-coordinate jump rate
//! `1/δ²` has the one-dimensional transition function `e^{-ν} I_k(ν)` with
//! `ν = t/δ²`. Refinement sweeps push `ν` across many decades, so everything
//! is computed in the scaled form `e^{-ν} I_k(ν)` which stays in `[0, 1]`.

/// `e^{-ν} I_k(ν)` for `k = 0..=kmax` by Miller's downward recurrence.
///
/// The whole row is normalized at once through `I_0 + 2 Σ_{k≥1} I_k = e^ν`,
/// which also makes the returned one-dimensional walk kernel sum to exactly 1
/// over the integers (up to the evaluated band).
pub fn scaled_bessel_i_row(nu: f64, kmax: usize) -> Vec<f64> {
    assert!(nu >= 0.0 && nu.is_finite(), "argument must be finite and >= 0");
    if nu == 0.0 {
        let mut out = vec![0.0; kmax + 1];
        out[0] = 1.0;
        return out;
    }

    // Start the recurrence above both the requested order and the turning
    // point near k ≈ ν, where the orders stop being significant.
    let start = (nu + 12.0 * (nu.sqrt() + 1.0) + 40.0).ceil() as usize;
    let m = start.max(kmax + 40);

    let mut out = vec![0.0; kmax + 1];
    let mut above = 0.0_f64; // I_{k+1} (unnormalized)
    let mut here = 1e-300_f64; // I_k
    let mut norm = 0.0_f64;
    for k in (0..=m).rev() {
        if k <= kmax {
            out[k] = here;
        }
        norm += if k == 0 { here } else { 2.0 * here };
        if k > 0 {
            let below = above + (2.0 * k as f64 / nu) * here;
            above = here;
            here = below;
            if here > 1e250 {
                let scale = 1e-250;
                here *= scale;
                above *= scale;
                norm *= scale;
                for v in out.iter_mut() {
                    *v *= scale;
                }
            }
        }
    }
    for v in out.iter_mut() {
        *v /= norm;
    }
    out
}

/// Scalar `e^{-ν} I_k(ν)`.
pub fn scaled_bessel_i(nu: f64, k: usize) -> f64 {
    scaled_bessel_i_row(nu, k)[k]
}

pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

pub fn gamma(x: f64) -> f64 {
    libm::tgamma(x)
}
