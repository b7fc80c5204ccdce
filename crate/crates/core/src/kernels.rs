//! Continuous-space densities: Gaussian, Brownian-time, and 2-Brownian-times.
//!
//! The Brownian-time density subordinates a `d`-dimensional Gaussian kernel to
//! the folded one-dimensional Gaussian clock,
//!
//! ```text
//! K^{BT}_t(x, y) = 2 ∫_0^∞ K^{G,d}_s(x, y) K^{G,1}_t(0, s) ds,
//! ```
//!
//! evaluated after the substitution `s = √t·u` so node placement is
//! independent of `t`. The 2-Brownian-times density runs the outer process at
//! the clock `|B¹_u| + |B²_v|`; writing the clock's density in closed form
//! (a convolution of two half-Gaussians) collapses it to a single smooth
//! integral, which is what makes the L² kernel machinery cheap.

use crate::error::{BtpError, Result};
use crate::quad::{self, QuadratureSpec};
use crate::special;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Spatial dimension. Most kernels accept any `d ≥ 1`; the L² estimate
/// routines additionally require `1 ≤ d ≤ 3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dim(usize);

impl Dim {
    pub fn new(d: usize) -> Result<Self> {
        if d < 1 {
            return Err(BtpError::invalid("dimension must be at least 1"));
        }
        Ok(Dim(d))
    }

    pub const D1: Dim = Dim(1);
    pub const D2: Dim = Dim(2);
    pub const D3: Dim = Dim(3);

    pub fn get(&self) -> usize {
        self.0
    }

    /// Dimensions covered by the square-integrability estimates.
    pub fn require_l2_range(&self) -> Result<()> {
        if self.0 > 3 {
            return Err(BtpError::domain(format!(
                "L^2 kernel estimates require 1 <= d <= 3, got d = {}",
                self.0
            )));
        }
        Ok(())
    }
}

/// A point of `ℝᵈ` with finite coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpacePoint(Vec<f64>);

impl SpacePoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(BtpError::invalid("point must have at least one coordinate"));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(BtpError::invalid("point coordinates must be finite"));
        }
        Ok(SpacePoint(coords))
    }

    pub fn origin(d: Dim) -> Self {
        SpacePoint(vec![0.0; d.get()])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

fn dist2(x: &SpacePoint, y: &SpacePoint) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(BtpError::domain("points have mismatched dimensions"));
    }
    Ok(x.coords()
        .iter()
        .zip(y.coords())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

fn check_dim(p: &SpacePoint, d: Dim) -> Result<()> {
    if p.dim() != d.get() {
        return Err(BtpError::domain(format!(
            "point has {} coordinates, expected {}",
            p.dim(),
            d.get()
        )));
    }
    Ok(())
}

/// Standard normal density value, `e^{-u²/2}/√(2π)`.
#[inline]
pub(crate) fn std_normal_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
}

/// `d`-dimensional heat kernel `(2πt)^{-d/2} exp(-|x-y|²/2t)`.
pub fn bm_kernel(t: f64, x: &SpacePoint, y: &SpacePoint, d: Dim) -> Result<f64> {
    if !(t > 0.0) {
        return Err(BtpError::domain("bm_kernel requires t > 0"));
    }
    check_dim(x, d)?;
    check_dim(y, d)?;
    let r2 = dist2(x, y)?;
    Ok(gauss_d(t, r2, d.get()))
}

#[inline]
fn gauss_d(t: f64, r2: f64, d: usize) -> f64 {
    (-r2 / (2.0 * t)).exp() / (2.0 * PI * t).powf(d as f64 / 2.0)
}

/// One-dimensional Gaussian time weight `e^{-s²/2t}/√(2πt)`.
pub fn bm_time_weight(t: f64, s: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(BtpError::domain("bm_time_weight requires t > 0"));
    }
    Ok((-s * s / (2.0 * t)).exp() / (2.0 * PI * t).sqrt())
}

/// Brownian-time density `2∫_0^∞ K^{G,d}_s(x,y) K^{G,1}_t(0,s) ds`.
///
/// On-diagonal values diverge for `d ≥ 2` and are rejected. Node doubling is
/// checked against `q.rel_tol` on every call.
pub fn btbm_density(
    t: f64,
    x: &SpacePoint,
    y: &SpacePoint,
    d: Dim,
    q: &QuadratureSpec,
) -> Result<f64> {
    if !(t > 0.0) {
        return Err(BtpError::domain("btbm_density requires t > 0"));
    }
    q.validate()?;
    check_dim(x, d)?;
    check_dim(y, d)?;
    let r2 = dist2(x, y)?;
    if r2 == 0.0 && d.get() >= 2 {
        return Err(BtpError::domain(
            "on-diagonal Brownian-time density diverges for d >= 2",
        ));
    }
    quad::converged(|n| btbm_density_raw(t, r2, d.get(), q.tail_cutoff, n), q)
}

/// Radial density value used by mass checks, `K^{BT}_t` at distance `r`.
pub fn btbm_density_mass_kernel(t: f64, r: f64, d: Dim, q: &QuadratureSpec) -> f64 {
    btbm_density_raw(t, r * r, d.get(), q.tail_cutoff, q.node_count)
}

/// Unchecked single evaluation used by table builders.
pub(crate) fn btbm_density_raw(t: f64, r2: f64, d: usize, cutoff: f64, n: usize) -> f64 {
    let rt = t.sqrt();
    // Boundary layer of exp(-r²/(2√t u)) sits at u ~ r²/√t.
    let inner = r2 / rt;
    quad::integrate_sqrt_sub(
        |u| 2.0 * gauss_d(rt * u, r2, d) * std_normal_pdf(u),
        cutoff,
        inner,
        n,
    )
}

/// `∫_0^∞ m^{-d/2} e^{-m²/2} erf(λ m) dm`.
///
/// This one-parameter family carries the whole 2-Brownian-times machinery: the
/// clock density collapse leaves exactly this integral. The erf factor tempers
/// the origin; panels track both the `1/λ` transition and the Gaussian scale.
fn gauss_power_erf(d: usize, lambda: f64, cutoff: f64, n: usize) -> f64 {
    debug_assert!(lambda >= 0.0);
    if lambda == 0.0 {
        return 0.0;
    }
    let inner = (1.0 / lambda).min(1.0);
    quad::integrate_sqrt_sub(
        |m| m.powf(-(d as f64) / 2.0) * (-0.5 * m * m).exp() * special::erf(lambda * m),
        cutoff,
        inner,
        n,
    )
}

/// 2-Brownian-times density at the spatial origin for clock parameters
/// `(u, v)`, i.e. the density of `X^0(|B¹_u| + |B²_v|)` at `0`.
///
/// Off the diagonal the clock `T = |B¹_u| + |B²_v|` has the closed-form
/// density `f_T(w) = √(2/π(u+v)) e^{-w²/2(u+v)} [erf(wα) + erf(wβ)]`, so the
/// value is `E[(2πT)^{-d/2}]`, one smooth integral. On the diagonal the polar
/// reduction gives `c_d · u^{-d/4}` exactly.
pub fn btbm2_density(u: f64, v: f64, d: Dim, q: &QuadratureSpec) -> Result<f64> {
    if !(u > 0.0 && v > 0.0) {
        return Err(BtpError::domain("btbm2_density requires u, v > 0"));
    }
    d.require_l2_range()?;
    q.validate()?;
    if u == v {
        return Ok(bt2_diag_constant(d, q)? * u.powf(-(d.get() as f64) / 4.0));
    }
    quad::converged(|n| btbm2_density_raw(u, v, d.get(), q.tail_cutoff, n), q)
}

pub(crate) fn btbm2_density_raw(u: f64, v: f64, d: usize, cutoff: f64, n: usize) -> f64 {
    let df = d as f64;
    let pref = (2.0 * PI).powf(-df / 2.0) * (2.0 / PI).sqrt() * (u + v).powf(-df / 4.0);
    let ea = gauss_power_erf(d, (v / (2.0 * u)).sqrt(), cutoff, n);
    let eb = gauss_power_erf(d, (u / (2.0 * v)).sqrt(), cutoff, n);
    pref * (ea + eb)
}

/// The constant `c_d` with `∫_{ℝᵈ} [K^{BT}_t(x)]² dx = c_d · t^{-d/4}`,
/// computed from the polar form: the radial integral is a Gamma function and
/// only the angular factor `∫_0^{π/2} (cosθ + sinθ)^{-d/2} dθ` needs
/// quadrature. Finite precisely for `1 ≤ d ≤ 3`.
pub fn bt2_diag_constant(d: Dim, q: &QuadratureSpec) -> Result<f64> {
    d.require_l2_range()?;
    q.validate()?;
    quad::converged(|n| bt2_diag_constant_raw(d.get(), n), q)
}

pub(crate) fn bt2_diag_constant_raw(d: usize, n: usize) -> f64 {
    let df = d as f64;
    let angular = quad::integrate_gl(
        |th: f64| (th.cos() + th.sin()).powf(-df / 2.0),
        0.0,
        PI / 2.0,
        n,
    );
    let radial = 2.0_f64.powf(-df / 4.0) * special::gamma(1.0 - df / 4.0);
    4.0 * (2.0 * PI).powf(-(df + 2.0) / 2.0) * radial * angular
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    fn pt(coords: &[f64]) -> SpacePoint {
        SpacePoint::new(coords.to_vec()).unwrap()
    }

    #[test]
    fn bm_kernel_standard_values() {
        let v1 = bm_kernel(1.0, &pt(&[0.0]), &pt(&[0.0]), Dim::D1).unwrap();
        assert!((v1 - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-15);
        let v2 = bm_kernel(1.0, &pt(&[0.0, 0.0]), &pt(&[0.0, 0.0]), Dim::D2).unwrap();
        assert!((v2 - 1.0 / (2.0 * PI)).abs() < 1e-15);
        assert!(bm_kernel(0.0, &pt(&[0.0]), &pt(&[0.0]), Dim::D1).is_err());
    }

    #[test]
    fn bm_kernel_symmetric_and_normalized() {
        let x = pt(&[0.3, -1.2]);
        let y = pt(&[1.0, 0.4]);
        let a = bm_kernel(0.7, &x, &y, Dim::D2).unwrap();
        let b = bm_kernel(0.7, &y, &x, Dim::D2).unwrap();
        assert_eq!(a, b);
        // 1-d mass by direct quadrature.
        let mass = quad::integrate_panels(
            |yy| bm_kernel(2.0, &pt(&[0.5]), &pt(&[yy]), Dim::D1).unwrap(),
            &[-14.0, 0.5, 15.0],
            64,
        );
        assert!((mass - 1.0).abs() < 1e-12, "{mass}");
    }

    #[test]
    fn time_weight_values_and_symmetry() {
        let w = bm_time_weight(1.0, 0.0).unwrap();
        assert!((w - 0.3989422804014327).abs() < 1e-15);
        let w4 = bm_time_weight(4.0, 0.0).unwrap();
        assert!((w4 - 0.19947114020071635).abs() < 1e-15);
        assert_eq!(
            bm_time_weight(2.5, 1.3).unwrap(),
            bm_time_weight(2.5, -1.3).unwrap()
        );
    }

    #[test]
    fn btbm_on_diagonal_closed_form_d1() {
        // 2^{-3/4} Γ(1/4) / π from the Gamma-integral reduction of the
        // subordination integral; the quadrature must hit it to rel_tol.
        let anchor = 2.0_f64.powf(-0.75) * special::gamma(0.25) / PI;
        for &t in &[0.1f64, 1.0, 10.0] {
            let v = btbm_density(t, &pt(&[0.0]), &pt(&[0.0]), Dim::D1, &q()).unwrap();
            let rel = (v * t.powf(0.25) / anchor - 1.0).abs();
            assert!(rel < 1e-8, "t={t}: rel err {rel:e}");
        }
    }

    #[test]
    fn btbm_quarter_scaling_off_diagonal() {
        // K(t; 0, z) = t^{-d/4} K(1; 0, z t^{-1/4})
        let qd = q();
        for &t in &[0.5, 4.0, 16.0] {
            let z = 0.8;
            let a = btbm_density(t, &pt(&[0.0]), &pt(&[z]), Dim::D1, &qd).unwrap();
            let b = btbm_density(
                1.0,
                &pt(&[0.0]),
                &pt(&[z * t.powf(-0.25)]),
                Dim::D1,
                &qd,
            )
            .unwrap();
            assert!((a - b * t.powf(-0.25)).abs() < 1e-10 * b, "t={t}");
        }
    }

    #[test]
    fn btbm_rejects_bad_inputs() {
        assert!(btbm_density(-1.0, &pt(&[0.0]), &pt(&[0.0]), Dim::D1, &q()).is_err());
        assert!(btbm_density(1.0, &pt(&[0.0, 0.0]), &pt(&[0.0, 0.0]), Dim::D2, &q()).is_err());
    }

    #[test]
    fn btbm_mass_one_d1() {
        let qd = QuadratureSpec {
            node_count: 48,
            ..q()
        };
        for &t in &[0.1f64, 1.0, 10.0] {
            let rmax = 8.0 * (qd.tail_cutoff * t.sqrt()).sqrt();
            let mass = 2.0
                * quad::integrate_sqrt_sub(
                    |r| btbm_density_raw(t, r * r, 1, qd.tail_cutoff, qd.node_count),
                    rmax,
                    0.0,
                    qd.node_count,
                );
            assert!((mass - 1.0).abs() < 1e-7, "t={t}: mass {mass}");
        }
    }

    #[test]
    fn btbm_mass_one_d2_radial() {
        let qd = q();
        let t: f64 = 1.0;
        let rmax = 8.0 * (qd.tail_cutoff * t.sqrt()).sqrt();
        let mass = quad::integrate_panels(
            |r| {
                2.0 * PI
                    * r
                    * btbm_density_raw(t, r * r, 2, qd.tail_cutoff, qd.node_count)
            },
            &quad::scaled_edges(1e-4, rmax),
            48,
        );
        assert!((mass - 1.0).abs() < 1e-7, "mass {mass}");
    }

    #[test]
    fn bt2_constants_match_reported_values() {
        // 4·C_d for d = 1, 2, 3; quoted to ~3 significant digits.
        let qd = q();
        let c1 = bt2_diag_constant(Dim::D1, &qd).unwrap();
        let c2 = bt2_diag_constant(Dim::D2, &qd).unwrap();
        let c3 = bt2_diag_constant(Dim::D3, &qd).unwrap();
        assert!((c1 - 4.0 * 0.0914).abs() < 2e-3, "c1 = {c1}");
        assert!((c2 - 4.0 * 0.0396).abs() < 2e-3, "c2 = {c2}");
        assert!((c3 - 4.0 * 0.0243).abs() < 2e-3, "c3 = {c3}");
        // d = 2 angular integral is elementary: √2·ln(1+√2).
        let j2 = 2.0_f64.sqrt() * (1.0 + 2.0_f64.sqrt()).ln();
        let want_c2 = 4.0 * (2.0 * PI) .powf(-2.0) * 2.0_f64.powf(-0.5) * special::gamma(0.5) * j2;
        assert!((c2 - want_c2).abs() < 1e-12, "{c2} vs {want_c2}");
    }

    #[test]
    fn bt2_diag_rejects_d4() {
        assert!(bt2_diag_constant(Dim::new(4).unwrap(), &q()).is_err());
        assert!(btbm2_density(1.0, 1.0, Dim::new(4).unwrap(), &q()).is_err());
    }

    #[test]
    fn bt2_erf_route_agrees_with_polar_on_diagonal() {
        // Two independent reductions of the same double integral.
        let qd = q();
        for d in [1usize, 2, 3] {
            let dim = Dim::new(d).unwrap();
            let diag = bt2_diag_constant(dim, &qd).unwrap();
            let erf_route = btbm2_density_raw(1.0, 1.0 + 1e-13, d, qd.tail_cutoff, 96);
            assert!(
                (erf_route - diag).abs() < 1e-8 * diag,
                "d={d}: {erf_route} vs {diag}"
            );
        }
    }

    #[test]
    fn bt2_symmetric_exactly() {
        let qd = q();
        let a = btbm2_density(0.7, 2.3, Dim::D1, &qd).unwrap();
        let b = btbm2_density(2.3, 0.7, Dim::D1, &qd).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bt2_scaling_law() {
        let qd = q();
        for d in [1usize, 2, 3] {
            let dim = Dim::new(d).unwrap();
            let a = btbm2_density(2.0, 6.0, dim, &qd).unwrap();
            let b = btbm2_density(1.0, 3.0, dim, &qd).unwrap();
            let lam: f64 = 2.0;
            assert!(
                (a - b * lam.powf(-(d as f64) / 4.0)).abs() < 1e-9 * b,
                "d={d}"
            );
        }
    }
}
