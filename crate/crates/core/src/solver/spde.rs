//! The degenerate fourth-order lattice equation
//! `dŨ = [Δ u₀/√(8πt) + Δ²Ũ/8] dt + a(Ũ) dW/δ^{d/2}` and the residual of its
//! kernel formulation.
//!
//! The positive bi-Laplacian amplifies high modes at rate up to `2d²/δ⁴`, so
//! the spacing and horizon must keep `exp(2d²T/δ⁴)` moderate for the Euler
//! error to sit in its asymptotic regime; the context checks the explicit
//! step against the operator bound. The kernel formulation expresses the same
//! path through the Brownian-time walk kernel plus a Laplacian memory term,
//! and its residual measures the scheme's strong error.

use crate::error::{BtpError, Result};
use crate::lattice::{
    checked_offset_table, discrete_laplacian, BtrwKernel, LatticeField, LatticeSpec, OffsetTable,
};
use crate::quad::{self, QuadratureSpec};
use crate::solver::{DiffusionSpec, NoiseSystem, SiteGeometry, SolutionField, UniformGrid};
use std::f64::consts::PI;

/// Shared setup for the explicit scheme.
pub struct SpdeContext {
    spec: LatticeSpec,
    grid: UniformGrid,
    geom_coords: Vec<Vec<f64>>,
    neighbors: Vec<(usize, usize)>,
    site_count: usize,
    dim: usize,
    u0: Vec<f64>,
    lap_u0: Vec<f64>,
    inv_sqrt_dd: f64,
    inv_d2: f64,
}

impl SpdeContext {
    pub fn prepare(
        u0: &LatticeField,
        spec: &LatticeSpec,
        t_end: f64,
        steps: usize,
        noise: &NoiseSystem,
    ) -> Result<Self> {
        if !u0.spec().same_geometry(spec) {
            return Err(BtpError::domain("initial field lattice does not match"));
        }
        let grid = UniformGrid::new(t_end, steps, noise)?;
        let d = spec.dim.get() as f64;
        // Explicit-Euler bound for the +Δ²/8 drift: |λ|max = (4d/δ²)²/8.
        let lam = (4.0 * d / (spec.delta * spec.delta)).powi(2) / 8.0;
        if grid.dt() * lam > 1.9 {
            return Err(BtpError::invalid(format!(
                "explicit step {} unstable for the bi-Laplacian rate {lam:.3}",
                grid.dt()
            )));
        }
        let sites = spec.sites()?;
        let count = sites.len();
        let dim = spec.dim.get();
        let geom_coords: Vec<Vec<f64>> = sites.iter().map(|p| p.coords(spec)).collect();
        let m = spec.max_index()?;
        let side = (2 * m + 1) as usize;
        let flat_of = |idx: &[i64]| -> Option<usize> {
            let mut flat = 0usize;
            for &k in idx {
                if k.abs() > m {
                    return None;
                }
                flat = flat * side + (k + m) as usize;
            }
            Some(flat)
        };
        let mut neighbors = vec![(usize::MAX, usize::MAX); count * dim];
        for (si, site) in sites.iter().enumerate() {
            let mut idx = site.index().to_vec();
            for axis in 0..dim {
                idx[axis] -= 1;
                let minus = flat_of(&idx).unwrap_or(usize::MAX);
                idx[axis] += 2;
                let plus = flat_of(&idx).unwrap_or(usize::MAX);
                idx[axis] -= 1;
                neighbors[si * dim + axis] = (minus, plus);
            }
        }
        let lap_u0 = discrete_laplacian(u0)?.values().to_vec();
        Ok(SpdeContext {
            spec: *spec,
            grid,
            geom_coords,
            neighbors,
            site_count: count,
            dim,
            u0: u0.values().to_vec(),
            lap_u0,
            inv_sqrt_dd: spec.delta.powf(-(dim as f64) / 2.0),
            inv_d2: 1.0 / (spec.delta * spec.delta),
        })
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    fn lap(&self, field: &[f64], out: &mut [f64]) {
        for y in 0..self.site_count {
            let mut acc = 0.0;
            let center = field[y];
            for axis in 0..self.dim {
                let (minus, plus) = self.neighbors[y * self.dim + axis];
                let vm = if minus == usize::MAX { 0.0 } else { field[minus] };
                let vp = if plus == usize::MAX { 0.0 } else { field[plus] };
                acc += vp - 2.0 * center + vm;
            }
            out[y] = acc * self.inv_d2;
        }
    }

    fn advance(
        &self,
        a: Option<&DiffusionSpec>,
        dw: &[Vec<f64>],
    ) -> Vec<f64> {
        let s = self.site_count;
        let steps = self.grid.steps();
        let h = self.grid.dt();
        let mut traj = vec![0.0; (steps + 1) * s];
        traj[..s].copy_from_slice(&self.u0);
        let mut lap = vec![0.0; s];
        let mut bilap = vec![0.0; s];
        let mut cur = self.u0.clone();
        for r in 0..steps {
            let mid = 0.5 * (self.grid.times[r] + self.grid.times[r + 1]);
            let sing = 1.0 / (8.0 * PI * mid).sqrt();
            self.lap(&cur, &mut lap);
            self.lap(&lap, &mut bilap);
            for y in 0..s {
                let mut v = cur[y] + h * (self.lap_u0[y] * sing + 0.125 * bilap[y]);
                if let Some(a) = a {
                    v += a.eval(cur[y]) * dw[r][y] * self.inv_sqrt_dd;
                }
                cur[y] = v;
            }
            traj[(r + 1) * s..(r + 2) * s].copy_from_slice(&cur);
        }
        traj
    }

    /// Explicit Euler path with midpoint sampling of the `1/√(8πt)` factor;
    /// the deterministic part is the same scheme with `a ≡ 0`.
    pub fn run(
        &self,
        a: &DiffusionSpec,
        noise: &NoiseSystem,
        replicate: u64,
    ) -> Result<SolutionField> {
        a.validate()?;
        let dw = noise.increments(&self.geom_coords, replicate, &self.grid.master_idx)?;
        let values = self.advance(Some(a), &dw);
        let det = self.advance(None, &dw);
        SolutionField::new(self.spec, self.grid.times.clone(), values, det, replicate)
    }
}

/// One-call solve of the degenerate lattice equation.
pub fn btp_spde_lattice_solve(
    u0: &LatticeField,
    a: &DiffusionSpec,
    noise: &NoiseSystem,
    spec: &LatticeSpec,
    t_end: f64,
    steps: usize,
    replicate: u64,
) -> Result<SolutionField> {
    SpdeContext::prepare(u0, spec, t_end, steps, noise)?.run(a, noise, replicate)
}

/// Kernel-formulation pieces evaluated once per experiment: the initial
/// smoothing `Σ_y K_T(x,y) u₀(y)`, the clock-singular initial-Laplacian term
/// `Σ_y Δu₀(y) ∫_0^T K_{T−s}(x,y)/√(8πs) ds`, and the per-step stochastic
/// tables `K_{T−s_r}`.
pub struct SpdeResidualContext {
    spec: LatticeSpec,
    grid: UniformGrid,
    det_kernel: Vec<f64>,
    init_lap_term: Vec<f64>,
    stoch_tables: Vec<OffsetTable>,
    geom: SiteGeometry,
    neighbors: Vec<(usize, usize)>,
    dim: usize,
    inv_sqrt_dd: f64,
    inv_d2: f64,
}

impl SpdeResidualContext {
    pub fn prepare(
        u0: &LatticeField,
        spec: &LatticeSpec,
        t_end: f64,
        steps: usize,
        noise: &NoiseSystem,
        q: &QuadratureSpec,
    ) -> Result<Self> {
        q.validate()?;
        let grid = UniformGrid::new(t_end, steps, noise)?;
        let extent = (2 * spec.max_index()?) as usize;
        let mut stoch_tables = Vec::with_capacity(steps);
        for r in 0..steps {
            stoch_tables.push(checked_offset_table(
                grid.dt() * (steps - r) as f64,
                spec,
                extent,
                q,
            )?);
        }
        let det_kernel =
            crate::lattice::deterministic_part(t_end, u0, spec, q)?.values().to_vec();

        // ∫_0^T K_{T−s}(x,y)/√(8πs) ds via split sqrt-substitutions at both
        // endpoints (1/√s at s = 0; √-kinks of the short-time kernel at s = T).
        let lap_u0 = discrete_laplacian(u0)?;
        let sites = spec.sites()?;
        let count = sites.len();
        let n = q.node_count;
        let mut weighted = vec![0.0; (2 * extent + 1).pow(spec.dim.get() as u32)];
        let mut add_leg = |lo_sub: bool| -> Result<()> {
            // Integrate g(s) = K_{T−s}/√(8πs) over half the interval with the
            // substitution s = v² (lo) or s = T − v² (hi).
            let vmax = (t_end / 2.0).sqrt();
            let edges = quad::geometric_edges(vmax, 6);
            let (gx, gw) = quad::gauss_legendre(n);
            for pair in edges.windows(2) {
                let c = 0.5 * (pair[1] - pair[0]);
                let mid = 0.5 * (pair[0] + pair[1]);
                for (x, w) in gx.iter().zip(gw) {
                    let v = mid + c * x;
                    let s = if lo_sub { v * v } else { t_end - v * v };
                    let table = BtrwKernel::build(t_end - s, spec, extent, q.tail_cutoff, n)?
                        .offset_table(extent);
                    let coeff = w * c * 2.0 * v / (8.0 * PI * s).sqrt();
                    for (k, slot) in weighted.iter_mut().enumerate() {
                        *slot += coeff * table.by_flat(k);
                    }
                }
            }
            Ok(())
        };
        add_leg(true)?;
        add_leg(false)?;
        // Assemble Σ_y Δu₀(y)·weighted(x−y).
        let geom = SiteGeometry::new(spec, &stoch_tables[0])?;
        let mut init_lap_term = vec![0.0; count];
        for x in 0..count {
            let row = &geom.pair_flat[x * count..(x + 1) * count];
            let mut acc = 0.0;
            for (y, &flat) in row.iter().enumerate() {
                acc += weighted[flat] * lap_u0.values()[y];
            }
            init_lap_term[x] = acc;
        }

        let m = spec.max_index()?;
        let side = (2 * m + 1) as usize;
        let dim = spec.dim.get();
        let flat_of = |idx: &[i64]| -> Option<usize> {
            let mut flat = 0usize;
            for &k in idx {
                if k.abs() > m {
                    return None;
                }
                flat = flat * side + (k + m) as usize;
            }
            Some(flat)
        };
        let mut neighbors = vec![(usize::MAX, usize::MAX); count * dim];
        for (si, site) in sites.iter().enumerate() {
            let mut idx = site.index().to_vec();
            for axis in 0..dim {
                idx[axis] -= 1;
                let minus = flat_of(&idx).unwrap_or(usize::MAX);
                idx[axis] += 2;
                let plus = flat_of(&idx).unwrap_or(usize::MAX);
                idx[axis] -= 1;
                neighbors[si * dim + axis] = (minus, plus);
            }
        }
        Ok(SpdeResidualContext {
            spec: *spec,
            grid,
            det_kernel,
            init_lap_term,
            stoch_tables,
            geom,
            neighbors,
            dim,
            inv_sqrt_dd: spec.delta.powf(-(dim as f64) / 2.0),
            inv_d2: 1.0 / (spec.delta * spec.delta),
        })
    }

    /// Residual of the kernel formulation at the final time, per site.
    pub fn residual(
        &self,
        field: &SolutionField,
        a: &DiffusionSpec,
        noise: &NoiseSystem,
    ) -> Result<Vec<f64>> {
        if !field.spec().same_geometry(&self.spec) {
            return Err(BtpError::domain("field lattice does not match"));
        }
        let s = self.geom.count;
        let steps = self.grid.steps();
        if field.times().len() != steps + 1 {
            return Err(BtpError::domain("field grid does not match the context"));
        }
        let dw = noise.increments(&self.geom.coords, field.replicate_id(), &self.grid.master_idx)?;
        let h = self.grid.dt();
        let t_end = *self.grid.times.last().unwrap();

        let mut rhs: Vec<f64> = self
            .det_kernel
            .iter()
            .zip(&self.init_lap_term)
            .map(|(a, b)| a + b)
            .collect();
        // Memory term −∫ Δ Ũ(s,x)/√(8π(T−s)) ds, left-point field values and
        // midpoint singular factor.
        let mut lap = vec![0.0; s];
        for r in 0..steps {
            let mid = 0.5 * (self.grid.times[r] + self.grid.times[r + 1]);
            let sing = 1.0 / (8.0 * PI * (t_end - mid)).sqrt();
            let row = field.values_at(r);
            for y in 0..s {
                let mut acc = 0.0;
                let center = row[y];
                for axis in 0..self.dim {
                    let (mi, pl) = self.neighbors[y * self.dim + axis];
                    let vm = if mi == usize::MAX { 0.0 } else { row[mi] };
                    let vp = if pl == usize::MAX { 0.0 } else { row[pl] };
                    acc += vp - 2.0 * center + vm;
                }
                lap[y] = acc * self.inv_d2;
            }
            for x in 0..s {
                rhs[x] -= h * sing * lap[x];
            }
        }
        // Stochastic term with the same increments.
        let mut cbuf = vec![0.0; s];
        for r in 0..steps {
            let row = field.values_at(r);
            for (y, slot) in cbuf.iter_mut().enumerate() {
                *slot = a.eval(row[y]) * dw[r][y] * self.inv_sqrt_dd;
            }
            let table = &self.stoch_tables[r];
            for x in 0..s {
                let prow = &self.geom.pair_flat[x * s..(x + 1) * s];
                let mut acc = 0.0;
                for (y, &flat) in prow.iter().enumerate() {
                    acc += table.by_flat(flat) * cbuf[y];
                }
                rhs[x] += acc;
            }
        }
        let last = steps;
        Ok((0..s)
            .map(|x| field.value(last, x) - rhs[x])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Dim;

    fn setup() -> (LatticeSpec, LatticeField, NoiseSystem) {
        // 17 sites at unit spacing: the bi-Laplacian growth rate is 2/δ⁴ = 2,
        // mild over T = 0.5.
        let spec = LatticeSpec::truncated(1.0, Dim::D1, 8.0).unwrap();
        let u0 = LatticeField::from_fn(&spec, |i| match i[0].abs() {
            0 => 1.0,
            1 => 0.5,
            _ => 0.0,
        })
        .unwrap();
        let noise = NoiseSystem::new(77, 0.5, 1 << 10).unwrap();
        (spec, u0, noise)
    }

    #[test]
    fn zero_diffusion_equals_det_part() {
        let (spec, u0, noise) = setup();
        let field =
            btp_spde_lattice_solve(&u0, &DiffusionSpec::zero(), &noise, &spec, 0.5, 128, 0)
                .unwrap();
        for j in 0..field.times().len() {
            for x in 0..field.site_count() {
                assert_eq!(field.random_part(j, x), 0.0);
            }
        }
    }

    #[test]
    fn unstable_step_rejected() {
        let spec = LatticeSpec::truncated(0.25, Dim::D1, 2.0).unwrap();
        let u0 = LatticeField::zeros(&spec).unwrap();
        let noise = NoiseSystem::new(0, 1.0, 64).unwrap();
        // λ = (16/0.0625)²/8 = 8192: dt = 1/64 is way past the bound.
        let r = SpdeContext::prepare(&u0, &spec, 1.0, 64, &noise);
        assert!(r.is_err());
    }

    #[test]
    fn deterministic_residual_shrinks_with_step() {
        let (spec, u0, noise) = setup();
        let q = QuadratureSpec::default();
        let a = DiffusionSpec::zero();
        let mut res = Vec::new();
        for steps in [64usize, 256] {
            let ctx = SpdeContext::prepare(&u0, &spec, 0.5, steps, &noise).unwrap();
            let field = ctx.run(&a, &noise, 0).unwrap();
            let rctx = SpdeResidualContext::prepare(&u0, &spec, 0.5, steps, &noise, &q).unwrap();
            let r = rctx.residual(&field, &a, &noise).unwrap();
            res.push(r.iter().fold(0.0_f64, |m, v| m.max(v.abs())));
        }
        assert!(res[0] < 0.02, "{res:?}");
        assert!(res[1] < 0.6 * res[0], "{res:?}");
    }

    #[test]
    fn stochastic_residual_present_but_small() {
        let (spec, u0, noise) = setup();
        let q = QuadratureSpec::default();
        let a = DiffusionSpec::additive();
        let steps = 256;
        let ctx = SpdeContext::prepare(&u0, &spec, 0.5, steps, &noise).unwrap();
        let rctx = SpdeResidualContext::prepare(&u0, &spec, 0.5, steps, &noise, &q).unwrap();
        let field = ctx.run(&a, &noise, 1).unwrap();
        let r = rctx.residual(&field, &a, &noise).unwrap();
        let worst = r.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(worst > 0.0 && worst < 0.2, "residual {worst}");
    }
}
