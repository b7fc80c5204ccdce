//! Lattice geometry, discrete Laplacians, and walk-based transition kernels
//! on `δℤᵈ`.
//!
//! The continuous-time symmetric walk is fixed by its generator `Δ_δ/2`
//! (per-coordinate jump rate `1/δ²`, per-direction `1/(2δ²)`), which gives the
//! factorized transition function `Π_i e^{-ν} I_{|k_i|}(ν)` with `ν = t/δ²`.
//! Subordinating it to the folded Gaussian clock yields the Brownian-time walk
//! kernel; all subordination integrals share the quadrature layout of
//! [`crate::kernels`].

use crate::error::{BtpError, Result};
use crate::kernels::{self, Dim, SpacePoint};
use crate::quad::{self, QuadratureSpec};
use crate::special;
use serde::{Deserialize, Serialize};

/// Spacing, dimension, and optional truncation radius of a lattice `δℤᵈ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub delta: f64,
    pub dim: Dim,
    /// Half-width `l` of the truncation box `[-l, l]ᵈ`, if any.
    pub trunc_radius: Option<f64>,
}

impl LatticeSpec {
    pub fn new(delta: f64, dim: Dim, trunc_radius: Option<f64>) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(BtpError::invalid("lattice spacing must be positive"));
        }
        if let Some(l) = trunc_radius {
            if !(l >= delta) || !l.is_finite() {
                return Err(BtpError::invalid(
                    "truncation radius must be finite and at least one spacing",
                ));
            }
        }
        Ok(LatticeSpec {
            delta,
            dim,
            trunc_radius,
        })
    }

    pub fn truncated(delta: f64, dim: Dim, l: f64) -> Result<Self> {
        Self::new(delta, dim, Some(l))
    }

    pub fn unbounded(delta: f64, dim: Dim) -> Result<Self> {
        Self::new(delta, dim, None)
    }

    /// Largest site index inside the truncation box.
    pub fn max_index(&self) -> Result<i64> {
        let l = self
            .trunc_radius
            .ok_or_else(|| BtpError::invalid("lattice is unbounded"))?;
        Ok((l / self.delta + 1e-9).floor() as i64)
    }

    pub fn site_count(&self) -> Result<usize> {
        let m = self.max_index()?;
        Ok(((2 * m + 1) as usize).pow(self.dim.get() as u32))
    }

    /// All sites of the truncated block, in row-major index order.
    pub fn sites(&self) -> Result<Vec<LatticePoint>> {
        let m = self.max_index()?;
        let d = self.dim.get();
        let side = (2 * m + 1) as usize;
        let mut out = Vec::with_capacity(side.pow(d as u32));
        let mut idx = vec![-m; d];
        loop {
            out.push(LatticePoint::new(idx.clone()));
            let mut axis = d;
            loop {
                if axis == 0 {
                    return Ok(out);
                }
                axis -= 1;
                idx[axis] += 1;
                if idx[axis] <= m {
                    break;
                }
                idx[axis] = -m;
            }
        }
    }

    pub fn same_geometry(&self, other: &LatticeSpec) -> bool {
        self.delta == other.delta && self.dim == other.dim
    }

    /// Coordinate-wise `δ·⌊x/δ⌋` rounding of a continuous point.
    pub fn round_down(&self, x: &SpacePoint) -> LatticePoint {
        LatticePoint::new(
            x.coords()
                .iter()
                .map(|&c| (c / self.delta).floor() as i64)
                .collect(),
        )
    }
}

/// A lattice site, stored as the integer index vector (coordinates `index·δ`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticePoint(Vec<i64>);

impl LatticePoint {
    pub fn new(index: Vec<i64>) -> Self {
        LatticePoint(index)
    }

    pub fn index(&self) -> &[i64] {
        &self.0
    }

    pub fn coords(&self, spec: &LatticeSpec) -> Vec<f64> {
        self.0.iter().map(|&k| k as f64 * spec.delta).collect()
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Real values on the truncated block of a lattice; zero outside by
/// convention, which is what the discrete operators use at the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeField {
    spec: LatticeSpec,
    max_idx: i64,
    side: usize,
    values: Vec<f64>,
}

impl LatticeField {
    pub fn zeros(spec: &LatticeSpec) -> Result<Self> {
        let max_idx = spec.max_index()?;
        let side = (2 * max_idx + 1) as usize;
        let n = side.pow(spec.dim.get() as u32);
        Ok(LatticeField {
            spec: *spec,
            max_idx,
            side,
            values: vec![0.0; n],
        })
    }

    pub fn from_fn(spec: &LatticeSpec, f: impl Fn(&[i64]) -> f64) -> Result<Self> {
        let mut field = Self::zeros(spec)?;
        let sites = spec.sites()?;
        for (slot, site) in field.values.iter_mut().zip(&sites) {
            *slot = f(site.index());
        }
        if field.values.iter().any(|v| !v.is_finite()) {
            return Err(BtpError::invalid("field values must be finite"));
        }
        Ok(field)
    }

    pub fn constant(spec: &LatticeSpec, c: f64) -> Result<Self> {
        Self::from_fn(spec, |_| c)
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn flat(&self, idx: &[i64]) -> Option<usize> {
        let mut flat = 0usize;
        for &k in idx {
            if k.abs() > self.max_idx {
                return None;
            }
            flat = flat * self.side + (k + self.max_idx) as usize;
        }
        Some(flat)
    }

    /// Value at an index vector; zero outside the truncated block.
    pub fn get(&self, idx: &[i64]) -> f64 {
        self.flat(idx).map_or(0.0, |f| self.values[f])
    }

    pub fn set(&mut self, idx: &[i64], v: f64) {
        if let Some(f) = self.flat(idx) {
            self.values[f] = v;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// True when `idx` and its `ring`-neighborhood lie inside the block.
    pub fn is_interior(&self, idx: &[i64], ring: i64) -> bool {
        idx.iter().all(|&k| k.abs() + ring <= self.max_idx)
    }
}

/// Central second difference `Σ_i [f(x+δe_i) − 2f(x) + f(x−δe_i)]/δ²`
/// with zero padding outside the truncated block.
pub fn discrete_laplacian(f: &LatticeField) -> Result<LatticeField> {
    let spec = *f.spec();
    let inv_d2 = 1.0 / (spec.delta * spec.delta);
    let mut out = LatticeField::zeros(&spec)?;
    let sites = spec.sites()?;
    for site in &sites {
        let idx = site.index();
        let mut acc = 0.0;
        let center = f.get(idx);
        let mut nb = idx.to_vec();
        for axis in 0..spec.dim.get() {
            nb[axis] = idx[axis] + 1;
            let plus = f.get(&nb);
            nb[axis] = idx[axis] - 1;
            let minus = f.get(&nb);
            nb[axis] = idx[axis];
            acc += (plus - 2.0 * center + minus) * inv_d2;
        }
        out.set(idx, acc);
    }
    Ok(out)
}

/// The discrete bi-Laplacian, `Δ_δ` applied twice.
pub fn discrete_bilaplacian(f: &LatticeField) -> Result<LatticeField> {
    discrete_laplacian(&discrete_laplacian(f)?)
}

fn offsets_between(x: &LatticePoint, y: &LatticePoint) -> Result<Vec<i64>> {
    if x.dim() != y.dim() {
        return Err(BtpError::domain("lattice points have mismatched dimensions"));
    }
    Ok(x.index()
        .iter()
        .zip(y.index())
        .map(|(a, b)| (a - b).abs())
        .collect())
}

/// Walk transition probability `K^{W}_t(x, y) = Π_i e^{-ν} I_{|k_i|}(ν)`,
/// `ν = t/δ²`; the indicator of `x = y` at `t = 0`.
pub fn rw_density(t: f64, x: &LatticePoint, y: &LatticePoint, spec: &LatticeSpec) -> Result<f64> {
    if t < 0.0 {
        return Err(BtpError::domain("rw_density requires t >= 0"));
    }
    if x.dim() != spec.dim.get() || y.dim() != spec.dim.get() {
        return Err(BtpError::domain("points do not live on this lattice"));
    }
    let ks = offsets_between(x, y)?;
    if t == 0.0 {
        return Ok(if ks.iter().all(|&k| k == 0) { 1.0 } else { 0.0 });
    }
    let nu = t / (spec.delta * spec.delta);
    let kmax = ks.iter().copied().max().unwrap() as usize;
    let row = special::scaled_bessel_i_row(nu, kmax);
    Ok(ks.iter().map(|&k| row[k as usize]).product())
}

/// Precomputed Brownian-time walk kernel at a fixed `t`: per quadrature node,
/// the one-dimensional walk row, which factorizes the `d`-dimensional
/// evaluation into per-axis products under the subordination sum.
pub struct BtrwKernel {
    dim: usize,
    kmax: usize,
    /// Coefficient `2·w_j·φ(u_j)` per node (sqrt-substitution included).
    node_coeff: Vec<f64>,
    /// One-dimensional scaled walk rows, one per node.
    rows: Vec<Vec<f64>>,
}

impl BtrwKernel {
    /// Build the node tables for `K^{BTW}_t` on `spec` covering coordinate
    /// offsets up to `kmax`, with `n` Gauss–Legendre nodes per panel.
    pub fn build(t: f64, spec: &LatticeSpec, kmax: usize, cutoff: f64, n: usize) -> Result<Self> {
        if !(t > 0.0) {
            return Err(BtpError::domain("kernel table requires t > 0"));
        }
        let rt = t.sqrt();
        let d2 = spec.delta * spec.delta;
        // Geometric panels in v (u = v²); inner scale tracks the walk's
        // diffusive transition at u ~ δ²/√t.
        let vmax = cutoff.sqrt();
        let vlo = (d2 / rt).sqrt().min(vmax / 2.0);
        let edges = quad::scaled_edges(vlo.max(vmax * 1e-6), vmax);
        let (gl_x, gl_w) = quad::gauss_legendre(n);
        let mut node_coeff = Vec::new();
        let mut rows = Vec::new();
        for pair in edges.windows(2) {
            let c = 0.5 * (pair[1] - pair[0]);
            let mid = 0.5 * (pair[0] + pair[1]);
            for (x, w) in gl_x.iter().zip(gl_w) {
                let v = mid + c * x;
                let u = v * v;
                let nu = rt * u / d2;
                node_coeff.push(2.0 * w * c * 2.0 * v * kernels::std_normal_pdf(u));
                rows.push(special::scaled_bessel_i_row(nu, kmax));
            }
        }
        Ok(BtrwKernel {
            dim: spec.dim.get(),
            kmax,
            node_coeff,
            rows,
        })
    }

    /// Table for `∂_t K^{BTW}_t`: differentiating the Gaussian clock weight
    /// gives the extra node factor `(u² − 1)/(2t)` after the `s = √t·u`
    /// substitution, so the derivative is exact in `t` up to quadrature.
    pub fn build_time_derivative(
        t: f64,
        spec: &LatticeSpec,
        kmax: usize,
        cutoff: f64,
        n: usize,
    ) -> Result<Self> {
        let mut table = Self::build(t, spec, kmax, cutoff, n)?;
        let vmax = cutoff.sqrt();
        let d2 = spec.delta * spec.delta;
        let rt = t.sqrt();
        let vlo = (d2 / rt).sqrt().min(vmax / 2.0);
        let edges = quad::scaled_edges(vlo.max(vmax * 1e-6), vmax);
        let (gl_x, _) = quad::gauss_legendre(n);
        let mut i = 0;
        for pair in edges.windows(2) {
            let c = 0.5 * (pair[1] - pair[0]);
            let mid = 0.5 * (pair[0] + pair[1]);
            for x in gl_x {
                let v = mid + c * x;
                let u = v * v;
                table.node_coeff[i] *= (u * u - 1.0) / (2.0 * t);
                i += 1;
            }
        }
        debug_assert_eq!(i, table.node_coeff.len());
        Ok(table)
    }

    pub fn kmax(&self) -> usize {
        self.kmax
    }

    /// Total kernel mass over the whole lattice, computed through the
    /// per-axis row sums (each one-dimensional walk row sums to one, so the
    /// deviation from 1 measures quadrature plus band truncation error).
    pub fn total_mass(&self) -> f64 {
        let mut acc = 0.0;
        for (coeff, row) in self.node_coeff.iter().zip(&self.rows) {
            let axis_sum = row[0] + 2.0 * row[1..].iter().sum::<f64>();
            acc += coeff * axis_sum.powi(self.dim as i32);
        }
        acc
    }

    /// Kernel value for a coordinate offset vector (absolute values taken).
    pub fn eval(&self, offset: &[i64]) -> f64 {
        debug_assert_eq!(offset.len(), self.dim);
        let mut acc = 0.0;
        for (coeff, row) in self.node_coeff.iter().zip(&self.rows) {
            let mut prod = *coeff;
            for &k in offset {
                prod *= row[k.unsigned_abs() as usize];
            }
            acc += prod;
        }
        acc
    }

    /// Dense table over all offsets with `|k_i| <= extent`, row-major with
    /// axis index `k + extent`.
    pub fn offset_table(&self, extent: usize) -> OffsetTable {
        assert!(extent <= self.kmax, "table extent exceeds built band");
        let side = 2 * extent + 1;
        let len = side.pow(self.dim as u32);
        let mut values = vec![0.0; len];
        let mut offset = vec![0i64; self.dim];
        for (flat, slot) in values.iter_mut().enumerate() {
            let mut rem = flat;
            for axis in (0..self.dim).rev() {
                offset[axis] = (rem % side) as i64 - extent as i64;
                rem /= side;
            }
            *slot = self.eval(&offset);
        }
        OffsetTable {
            dim: self.dim,
            extent: extent as i64,
            side,
            values,
        }
    }
}

/// Dense kernel-by-offset lookup produced by [`BtrwKernel::offset_table`].
#[derive(Debug, Clone)]
pub struct OffsetTable {
    dim: usize,
    extent: i64,
    side: usize,
    values: Vec<f64>,
}

impl OffsetTable {
    pub fn get(&self, offset: &[i64]) -> f64 {
        self.flat_index(offset).map_or(0.0, |f| self.values[f])
    }

    /// Flat index for an offset, or `None` outside the table band.
    pub fn flat_index(&self, offset: &[i64]) -> Option<usize> {
        debug_assert_eq!(offset.len(), self.dim);
        let mut flat = 0usize;
        for &k in offset {
            if k.abs() > self.extent {
                return None;
            }
            flat = flat * self.side + (k + self.extent) as usize;
        }
        Some(flat)
    }

    pub fn by_flat(&self, flat: usize) -> f64 {
        self.values[flat]
    }

    pub fn extent(&self) -> i64 {
        self.extent
    }

    fn max_abs_diff(&self, other: &OffsetTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Offset table with a node-doubling convergence check.
pub fn checked_offset_table(
    t: f64,
    spec: &LatticeSpec,
    extent: usize,
    q: &QuadratureSpec,
) -> Result<OffsetTable> {
    let coarse = BtrwKernel::build(t, spec, extent, q.tail_cutoff, q.node_count)?
        .offset_table(extent);
    let fine = BtrwKernel::build(t, spec, extent, q.tail_cutoff, q.node_count * 2)?
        .offset_table(extent);
    let achieved = coarse.max_abs_diff(&fine);
    if achieved > q.rel_tol {
        return Err(BtpError::Convergence {
            achieved,
            required: q.rel_tol,
        });
    }
    Ok(fine)
}

/// `Σ_{x∈δℤᵈ} K_a(x) K_b(x + shift)` over the whole lattice.
///
/// Under the subordination sum the spatial sum factorizes per axis into
/// cross-correlations of the one-dimensional walk rows, so the infinite
/// lattice sum is exact up to the Bessel band of the tables. Both tables
/// must come from the same lattice and cover comparable bands.
pub fn btrw_l2_cross(a: &BtrwKernel, b: &BtrwKernel, shift: &[i64]) -> f64 {
    assert_eq!(a.dim, b.dim);
    assert_eq!(shift.len(), a.dim);
    let band = a.kmax.min(b.kmax) as i64;
    let mut acc = 0.0;
    for (ca, row_a) in a.node_coeff.iter().zip(&a.rows) {
        for (cb, row_b) in b.node_coeff.iter().zip(&b.rows) {
            let mut prod = ca * cb;
            for &m in shift {
                let mut axis = 0.0;
                for k in -band..=band {
                    let km = k + m;
                    if km.abs() <= band {
                        axis += row_a[k.unsigned_abs() as usize]
                            * row_b[km.unsigned_abs() as usize];
                    }
                }
                prod *= axis;
            }
            acc += prod;
        }
    }
    acc
}

/// Band of coordinate offsets beyond which the walk row at clock values up to
/// `nu_max` is negligible at double precision.
pub fn bessel_band(nu_max: f64) -> usize {
    (nu_max + 12.0 * (nu_max.sqrt() + 1.0) + 60.0).ceil() as usize
}

/// Brownian-time walk transition probability
/// `2∫_0^∞ K^{W}_s(x,y) K^{G,1}_t(0,s) ds`; the indicator of `x = y` at `t = 0`.
pub fn btrw_density(
    t: f64,
    x: &LatticePoint,
    y: &LatticePoint,
    spec: &LatticeSpec,
    q: &QuadratureSpec,
) -> Result<f64> {
    if t < 0.0 {
        return Err(BtpError::domain("btrw_density requires t >= 0"));
    }
    q.validate()?;
    let ks = offsets_between(x, y)?;
    if x.dim() != spec.dim.get() {
        return Err(BtpError::domain("points do not live on this lattice"));
    }
    if t == 0.0 {
        return Ok(if ks.iter().all(|&k| k == 0) { 1.0 } else { 0.0 });
    }
    let kmax = ks.iter().copied().max().unwrap() as usize;
    quad::converged(
        |n| {
            BtrwKernel::build(t, spec, kmax, q.tail_cutoff, n)
                .map(|k| k.eval(&ks))
                .unwrap_or(f64::NAN)
        },
        q,
    )
}

/// 2-Brownian-times walk probability at offset `x`,
/// `4∫∫ K^{W}_{r₁+r₂}(x) K^{G,1}_u(0,r₁) K^{G,1}_v(0,r₂) dr₁ dr₂`,
/// by tensor-product panel quadrature (the walk factor is bounded, so the
/// integrand has no corner singularity).
pub fn btrw2_density(
    u: f64,
    v: f64,
    x: &LatticePoint,
    spec: &LatticeSpec,
    q: &QuadratureSpec,
) -> Result<f64> {
    if !(u > 0.0 && v > 0.0) {
        return Err(BtpError::domain("btrw2_density requires u, v > 0"));
    }
    q.validate()?;
    if x.dim() != spec.dim.get() {
        return Err(BtpError::domain("point does not live on this lattice"));
    }
    let ks: Vec<i64> = x.index().iter().map(|k| k.abs()).collect();
    quad::converged(|n| btrw2_density_raw(u, v, &ks, spec, q.tail_cutoff, n), q)
}

pub(crate) fn btrw2_density_raw(
    u: f64,
    v: f64,
    ks: &[i64],
    spec: &LatticeSpec,
    cutoff: f64,
    n: usize,
) -> f64 {
    let (ru, rv) = (u.sqrt(), v.sqrt());
    let d2 = spec.delta * spec.delta;
    let kmax = ks.iter().map(|k| k.unsigned_abs() as usize).max().unwrap_or(0);
    // Outer integral in a (r₁ = √u·a), inner in b (r₂ = √v·b), both sqrt-substituted.
    quad::integrate_sqrt_sub(
        |a| {
            let base = ru * a;
            let inner = quad::integrate_sqrt_sub(
                |b| {
                    let nu = (base + rv * b) / d2;
                    let row = special::scaled_bessel_i_row(nu, kmax);
                    let prod: f64 = ks.iter().map(|&k| row[k.unsigned_abs() as usize]).product();
                    prod * kernels::std_normal_pdf(b)
                },
                cutoff,
                d2 / rv,
                n,
            );
            inner * kernels::std_normal_pdf(a)
        },
        cutoff,
        d2 / ru,
        n,
    ) * 4.0
}

/// Initial-data smoothing `Ũ_D(t, x) = Σ_y K^{BTW}_t(x, y) u₀(y)` on the
/// truncated block (`u₀` is zero-extended outside it).
pub fn deterministic_part(
    t: f64,
    u0: &LatticeField,
    spec: &LatticeSpec,
    q: &QuadratureSpec,
) -> Result<LatticeField> {
    if t < 0.0 {
        return Err(BtpError::domain("deterministic_part requires t >= 0"));
    }
    if !u0.spec().same_geometry(spec) {
        return Err(BtpError::domain("field lattice does not match"));
    }
    if t == 0.0 {
        return Ok(u0.clone());
    }
    q.validate()?;
    let m = u0.spec().max_index()?;
    let extent = (2 * m) as usize;
    let coarse = BtrwKernel::build(t, spec, extent, q.tail_cutoff, q.node_count)?
        .offset_table(extent);
    let fine = BtrwKernel::build(t, spec, extent, q.tail_cutoff, q.node_count * 2)?
        .offset_table(extent);
    let out_c = convolve(u0, &coarse)?;
    let out_f = convolve(u0, &fine)?;
    let scale = out_f.max_abs().max(1e-300);
    let achieved = out_c
        .values()
        .iter()
        .zip(out_f.values())
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
        / scale;
    if achieved > q.rel_tol {
        return Err(BtpError::Convergence {
            achieved,
            required: q.rel_tol,
        });
    }
    Ok(out_f)
}

fn convolve(u0: &LatticeField, table: &OffsetTable) -> Result<LatticeField> {
    let spec = *u0.spec();
    let sites = spec.sites()?;
    let mut out = LatticeField::zeros(&spec)?;
    let mut offset = vec![0i64; spec.dim.get()];
    for x in &sites {
        let mut acc = 0.0;
        for (y, &w) in sites.iter().zip(u0.values()) {
            if w != 0.0 {
                for (o, (a, b)) in offset.iter_mut().zip(x.index().iter().zip(y.index())) {
                    *o = a - b;
                }
                acc += table.get(&offset) * w;
            }
        }
        out.set(x.index(), acc);
    }
    Ok(out)
}
