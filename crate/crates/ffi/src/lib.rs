//! C ABI for the Brownian-time kernel and estimate routines.
//!
//! Conventions: every function returns a [`BtpStatus`] and writes its result
//! through an out-pointer; handles are opaque and freed with their matching
//! `_free` function; spatial points are `d`-length arrays. Lattice functions
//! take site index vectors plus the spacing. A nonpositive `delta` selects
//! the continuous mode where both modes exist.

use btp::estimates::{self, Mode};
use btp::kernels;
use btp::lattice::{self, LatticePoint, LatticeSpec};
use btp::{Dim, QuadratureSpec, SpacePoint};
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Result codes for every C-ABI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BtpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DomainError = 3,
    ConvergenceError = 4,
    InternalError = 5,
}

fn status_of(err: &btp::BtpError) -> BtpStatus {
    match err {
        btp::BtpError::Domain(_) => BtpStatus::DomainError,
        btp::BtpError::Convergence { .. } | btp::BtpError::PicardNoConvergence { .. } => {
            BtpStatus::ConvergenceError
        }
        btp::BtpError::Invalid(_) => BtpStatus::InvalidArgument,
        _ => BtpStatus::InternalError,
    }
}

/// Opaque quadrature handle.
pub struct BtpQuadrature {
    inner: QuadratureSpec,
}

fn guarded<F: FnOnce() -> BtpStatus>(f: F) -> BtpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => BtpStatus::InternalError,
    }
}

unsafe fn slice_arg<'a, T>(ptr: *const T, len: usize) -> Option<&'a [T]> {
    if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

fn write_result(out: *mut f64, value: btp::Result<f64>) -> BtpStatus {
    match value {
        Ok(v) => {
            unsafe { *out = v };
            BtpStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Create a quadrature handle; returns null on invalid parameters.
#[no_mangle]
pub extern "C" fn btp_quadrature_new(
    node_count: usize,
    tail_cutoff: f64,
    rel_tol: f64,
) -> *mut BtpQuadrature {
    match QuadratureSpec::new(node_count, tail_cutoff, rel_tol) {
        Ok(inner) => Box::into_raw(Box::new(BtpQuadrature { inner })),
        Err(_) => std::ptr::null_mut(),
    }
}

/// Default quadrature (40 nodes per panel, cutoff 8, rel_tol 1e-8).
#[no_mangle]
pub extern "C" fn btp_quadrature_default() -> *mut BtpQuadrature {
    Box::into_raw(Box::new(BtpQuadrature {
        inner: QuadratureSpec::default(),
    }))
}

/// Free a quadrature handle; null is ignored.
#[no_mangle]
pub extern "C" fn btp_quadrature_free(q: *mut BtpQuadrature) {
    if !q.is_null() {
        drop(unsafe { Box::from_raw(q) });
    }
}

/// Library version as a static C string.
#[no_mangle]
pub extern "C" fn btp_version() -> *const std::os::raw::c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const _
}

/// Gaussian heat kernel `(2πt)^{-d/2} exp(-|x-y|²/2t)`.
///
/// # Safety
/// `x` and `y` must point to `d` doubles; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn btp_bm_kernel(
    t: f64,
    x: *const f64,
    y: *const f64,
    d: usize,
    out: *mut f64,
) -> BtpStatus {
    if out.is_null() {
        return BtpStatus::NullPointer;
    }
    guarded(|| {
        let (Some(xs), Some(ys)) = (slice_arg(x, d), slice_arg(y, d)) else {
            return BtpStatus::NullPointer;
        };
        let value = (|| {
            let dim = Dim::new(d)?;
            kernels::bm_kernel(
                t,
                &SpacePoint::new(xs.to_vec())?,
                &SpacePoint::new(ys.to_vec())?,
                dim,
            )
        })();
        write_result(out, value)
    })
}

/// One-dimensional Gaussian clock weight `e^{-s²/2t}/√(2πt)`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn btp_bm_time_weight(t: f64, s: f64, out: *mut f64) -> BtpStatus {
    if out.is_null() {
        return BtpStatus::NullPointer;
    }
    guarded(|| write_result(out, kernels::bm_time_weight(t, s)))
}

/// Brownian-time density `2∫ K^{G,d}_s(x,y) K^{G,1}_t(0,s) ds`.
///
/// # Safety
/// `q` must be a live handle; `x`, `y` point to `d` doubles; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn btp_btbm_density(
    q: *const BtpQuadrature,
    t: f64,
    x: *const f64,
    y: *const f64,
    d: usize,
    out: *mut f64,
) -> BtpStatus {
    if out.is_null() || q.is_null() {
        return BtpStatus::NullPointer;
    }
    guarded(|| {
        let (Some(xs), Some(ys)) = (slice_arg(x, d), slice_arg(y, d)) else {
            return BtpStatus::NullPointer;
        };
        let quad = &(*q).inner;
        let value = (|| {
            let dim = Dim::new(d)?;
            kernels::btbm_density(
                t,
                &SpacePoint::new(xs.to_vec())?,
                &SpacePoint::new(ys.to_vec())?,
                dim,
                quad,
            )
        })();
        write_result(out, value)
    })
}

/// 2-clock Brownian-time density at the origin for clock parameters (u, v).
///
/// # Safety
/// `q` must be a live handle; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn btp_btbm2_density(
    q: *const BtpQuadrature,
    u: f64,
    v: f64,
    d: usize,
    out: *mut f64,
) -> BtpStatus {
    if out.is_null() || q.is_null() {
        return BtpStatus::NullPointer;
    }
    guarded(|| {
        let quad = &(*q).inner;
        let value = (|| kernels::btbm2_density(u, v, Dim::new(d)?, quad))();
        write_result(out, value)
    })
}

/// Continuous-time walk transition probability on `δℤᵈ`.
///
/// # Safety
/// `x`, `y` point to `d` site indices; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn btp_rw_density(
    t: f64,
    x: *const i64,
    y: *const i64,
    d: usize,
    delta: f64,
    out: *mut f64,
) -> BtpStatus {
    if out.is_null() {
        return BtpStatus::NullPointer;
    }
    guarded(|| {
        let (Some(xs), Some(ys)) = (slice_arg(x, d), slice_arg(y, d)) else {
            return BtpStatus::NullPointer;
        };
        let value = (|| {
            let spec = LatticeSpec::unbounded(delta, Dim::new(d)?)?;
            lattice::rw_density(
                t,
                &LatticePoint::new(xs.to_vec()),
                &LatticePoint::new(ys.to_vec()),
                &spec,
            )
        })();
        write_result(out, value)
    })
}

/// Brownian-time walk transition probability on `δℤᵈ`.
///
/// # Safety
/// `q` live handle; `x`, `y` point to `d` site indices; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn btp_btrw_density(
    q: *const BtpQuadrature,
    t: f64,
    x: *const i64,
    y: *const i64,
    d: usize,
    delta: f64,
    out: *mut f64,
) -> BtpStatus {
    if out.is_null() || q.is_null() {
        return BtpStatus::NullPointer;
    }
    guarded(|| {
        let (Some(xs), Some(ys)) = (slice_arg(x, d), slice_arg(y, d)) else {
            return BtpStatus::NullPointer;
        };
        let quad = &(*q).inner;
        let value = (|| {
            let spec = LatticeSpec::unbounded(delta, Dim::new(d)?)?;
            lattice::btrw_density(
                t,
                &LatticePoint::new(xs.to_vec()),
                &LatticePoint::new(ys.to_vec()),
                &spec,
                quad,
            )
        })();
        write_result(out, value)
    })
}

/// 2-clock Brownian-time walk probability at site offset `x`.
///
/// # Safety
/// `q` live handle; `x` points to `d` site indices; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn btp_btrw2_density(
    q: *const BtpQuadrature,
    u: f64,
    v: f64,
    x: *const i64,
    d: usize,
    delta: f64,
    out: *mut f64,
) -> BtpStatus {
    if out.is_null() || q.is_null() {
        return BtpStatus::NullPointer;
    }
    guarded(|| {
        let Some(xs) = slice_arg(x, d) else {
            return BtpStatus::NullPointer;
        };
        let quad = &(*q).inner;
        let value = (|| {
            let spec = LatticeSpec::unbounded(delta, Dim::new(d)?)?;
            lattice::btrw2_density(u, v, &LatticePoint::new(xs.to_vec()), &spec, quad)
        })();
        write_result(out, value)
    })
}

/// Squared-kernel space integral (continuous for `delta <= 0`, lattice sum
/// otherwise). Finite for `1 <= d <= 3` only.
///
/// # Safety
/// `q` live handle; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn btp_l2_kernel_norm(
    q: *const BtpQuadrature,
    t: f64,
    d: usize,
    delta: f64,
    out: *mut f64,
) -> BtpStatus {
    if out.is_null() || q.is_null() {
        return BtpStatus::NullPointer;
    }
    guarded(|| {
        let quad = &(*q).inner;
        let mode = if delta > 0.0 {
            Mode::Lattice { delta }
        } else {
            Mode::Continuous
        };
        let value = (|| estimates::l2_kernel_norm(t, Dim::new(d)?, mode, quad))();
        write_result(out, value)
    })
}

/// Time-integrated squared temporal kernel difference between horizons
/// `r < t` (continuous for `delta <= 0`).
///
/// # Safety
/// `q` live handle; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn btp_temporal_difference_integral(
    q: *const BtpQuadrature,
    r: f64,
    t: f64,
    d: usize,
    delta: f64,
    out: *mut f64,
) -> BtpStatus {
    if out.is_null() || q.is_null() {
        return BtpStatus::NullPointer;
    }
    guarded(|| {
        let quad = &(*q).inner;
        let mode = if delta > 0.0 {
            Mode::Lattice { delta }
        } else {
            Mode::Continuous
        };
        let value =
            (|| estimates::temporal_difference_integral(r, t, Dim::new(d)?, mode, quad))();
        write_result(out, value)
    })
}

/// Time-integrated squared spatial kernel difference at offset `z`
/// (continuous for `delta <= 0`; lattice offsets must be δ-multiples).
///
/// # Safety
/// `q` live handle; `z` points to `d` doubles; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn btp_spatial_difference_integral(
    q: *const BtpQuadrature,
    z: *const f64,
    t: f64,
    d: usize,
    delta: f64,
    out: *mut f64,
) -> BtpStatus {
    if out.is_null() || q.is_null() {
        return BtpStatus::NullPointer;
    }
    guarded(|| {
        let Some(zs) = slice_arg(z, d) else {
            return BtpStatus::NullPointer;
        };
        let quad = &(*q).inner;
        let mode = if delta > 0.0 {
            Mode::Lattice { delta }
        } else {
            Mode::Continuous
        };
        let value = (|| {
            estimates::spatial_difference_integral(
                &SpacePoint::new(zs.to_vec())?,
                t,
                Dim::new(d)?,
                mode,
                quad,
            )
        })();
        write_result(out, value)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_the_c_surface() {
        let q = btp_quadrature_default();
        assert!(!q.is_null());
        let mut out = 0.0_f64;
        unsafe {
            let x = [0.0_f64];
            let y = [0.0_f64];
            assert_eq!(
                btp_bm_kernel(1.0, x.as_ptr(), y.as_ptr(), 1, &mut out),
                BtpStatus::Ok
            );
            assert!((out - 0.3989422804014327).abs() < 1e-15);

            assert_eq!(
                btp_btbm_density(q, 1.0, x.as_ptr(), y.as_ptr(), 1, &mut out),
                BtpStatus::Ok
            );
            let anchor = 2.0_f64.powf(-0.75) * btp::special::gamma(0.25) / std::f64::consts::PI;
            assert!((out / anchor - 1.0).abs() < 1e-8);

            assert_eq!(btp_btbm2_density(q, 1.0, 1.0, 1, &mut out), BtpStatus::Ok);
            assert!((out - 0.3656).abs() < 2e-3);

            let xi = [0_i64];
            assert_eq!(
                btp_rw_density(0.0625, xi.as_ptr(), xi.as_ptr(), 1, 0.25, &mut out),
                BtpStatus::Ok
            );
            assert!((out - 0.46575960759364043).abs() < 1e-13);

            assert_eq!(btp_l2_kernel_norm(q, 1.0, 1, -1.0, &mut out), BtpStatus::Ok);
            assert!((out - 0.3656).abs() < 2e-3);
        }
        btp_quadrature_free(q);
    }

    #[test]
    fn error_codes_cross_the_boundary() {
        let q = btp_quadrature_default();
        let mut out = 0.0_f64;
        unsafe {
            let x = [0.0_f64];
            // t <= 0 is a domain error.
            assert_eq!(
                btp_bm_kernel(-1.0, x.as_ptr(), x.as_ptr(), 1, &mut out),
                BtpStatus::DomainError
            );
            // d = 4 has no finite L² norm.
            assert_eq!(
                btp_l2_kernel_norm(q, 1.0, 4, -1.0, &mut out),
                BtpStatus::DomainError
            );
            // Null pointers are flagged, not dereferenced.
            assert_eq!(
                btp_bm_kernel(1.0, std::ptr::null(), x.as_ptr(), 1, &mut out),
                BtpStatus::NullPointer
            );
            // On-diagonal divergence for d >= 2.
            let x2 = [0.0_f64, 0.0];
            assert_eq!(
                btp_btbm_density(q, 1.0, x2.as_ptr(), x2.as_ptr(), 2, &mut out),
                BtpStatus::DomainError
            );
        }
        btp_quadrature_free(q);
        // Invalid quadrature parameters yield a null handle.
        assert!(btp_quadrature_new(0, 8.0, 1e-8).is_null());
    }

    #[test]
    fn version_string_is_c_compatible() {
        let v = btp_version();
        assert!(!v.is_null());
        let s = unsafe { std::ffi::CStr::from_ptr(v) };
        assert!(!s.to_str().unwrap().is_empty());
    }
}
