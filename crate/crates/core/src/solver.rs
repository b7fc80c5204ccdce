//! Solvers for the Brownian-time-walk stochastic integral equations on
//! truncated lattices, all driven by one nested [`NoiseSystem`].
//!
//! * [`PicardContext`] — fixed-point iteration of the kernel SIE under a
//!   Lipschitz diffusion coefficient (left-point Itô discretization).
//! * [`EulerContext`] — the dyadic frozen-coefficient scheme for the
//!   terminal-time auxiliary equation; it needs only the growth bound, and
//!   its value at the terminal time is the truncated-SIE sample there.
//! * [`psdde`] — the parametrized fourth-order differential-difference
//!   system whose diagonal recovers the SIE.
//! * [`spde`] — the degenerate fourth-order lattice equation and its kernel
//!   formulation residual.
//!
//! Expensive kernel tables live in per-experiment contexts so replicate
//! ensembles share them; replicates are embarrassingly parallel and are
//! collected in index order, so results do not depend on the worker count.

pub mod noise;
pub mod psdde;
pub mod spde;

pub use noise::{BrownianPath, NoiseSystem};
pub use psdde::{PsddeContext, PsddeField, PsddeResidualContext};
pub use spde::{SpdeContext, SpdeResidualContext};

use crate::error::{BtpError, Result};
use crate::lattice::{
    checked_offset_table, deterministic_part, LatticeField, LatticeSpec, OffsetTable,
};
use crate::quad::QuadratureSpec;
use rayon::prelude::*;
use std::sync::Arc;

/// Diffusion coefficient `a(u)` with its analytic metadata.
#[derive(Clone)]
pub struct DiffusionSpec {
    label: String,
    kind: DiffusionKind,
    /// Lipschitz constant when known; `None` routes to the growth-only solver.
    pub lipschitz_const: Option<f64>,
    /// Constant `C` with `a²(u) ≤ C(1 + u²)`.
    pub growth_const: f64,
}

#[derive(Clone)]
enum DiffusionKind {
    Constant(f64),
    Linear(f64),
    Sine(f64),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for DiffusionSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "DiffusionSpec({})", self.label)
    }
}

impl DiffusionSpec {
    pub fn zero() -> Self {
        DiffusionSpec {
            label: "zero".into(),
            kind: DiffusionKind::Constant(0.0),
            lipschitz_const: Some(0.0),
            growth_const: 1e-12,
        }
    }

    /// Additive noise, `a ≡ 1`.
    pub fn additive() -> Self {
        DiffusionSpec {
            label: "additive".into(),
            kind: DiffusionKind::Constant(1.0),
            lipschitz_const: Some(0.0),
            growth_const: 1.0,
        }
    }

    pub fn linear(gain: f64) -> Self {
        DiffusionSpec {
            label: format!("linear({gain})"),
            kind: DiffusionKind::Linear(gain),
            lipschitz_const: Some(gain.abs()),
            growth_const: gain * gain,
        }
    }

    /// `a(u) = amp·sin(u)`: bounded with the growth bound only; registered
    /// without a Lipschitz constant so it exercises the growth-only route.
    pub fn bounded_sine(amp: f64) -> Self {
        DiffusionSpec {
            label: format!("sine({amp})"),
            kind: DiffusionKind::Sine(amp),
            lipschitz_const: None,
            growth_const: amp * amp,
        }
    }

    pub fn custom(
        label: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        lipschitz_const: Option<f64>,
        growth_const: f64,
    ) -> Self {
        DiffusionSpec {
            label: label.into(),
            kind: DiffusionKind::Custom(Arc::new(f)),
            lipschitz_const,
            growth_const,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match &self.kind {
            DiffusionKind::Constant(c) => *c,
            DiffusionKind::Linear(g) => g * u,
            DiffusionKind::Sine(a) => a * u.sin(),
            DiffusionKind::Custom(f) => f(u),
        }
    }

    /// Spot-check the growth bound (and the Lipschitz bound when declared)
    /// on a sampled grid of arguments.
    pub fn validate(&self) -> Result<()> {
        let us: Vec<f64> = (-40..=40).map(|i| i as f64 * 0.25).collect();
        for &u in &us {
            let a = self.eval(u);
            if a * a > self.growth_const * (1.0 + u * u) * (1.0 + 1e-9) + 1e-12 {
                return Err(BtpError::invalid(format!(
                    "diffusion `{}` violates its growth bound at u = {u}",
                    self.label
                )));
            }
        }
        if let Some(k) = self.lipschitz_const {
            for pair in us.windows(2) {
                let (u, v) = (pair[0], pair[1]);
                if (self.eval(u) - self.eval(v)).abs() > k * (u - v).abs() * (1.0 + 1e-9) + 1e-12 {
                    return Err(BtpError::invalid(format!(
                        "diffusion `{}` violates its declared Lipschitz constant near u = {u}",
                        self.label
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One replicate's solution on a time grid × truncated lattice, split into
/// its deterministic (seed-independent) and random parts.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    spec: LatticeSpec,
    times: Vec<f64>,
    values: Vec<f64>,
    det: Vec<f64>,
    replicate_id: u64,
}

impl SolutionField {
    /// Assemble a field from raw per-(time, site) arrays, validating shapes
    /// and finiteness; row-major site order must match `spec.sites()`.
    pub fn from_raw(
        spec: LatticeSpec,
        times: Vec<f64>,
        values: Vec<f64>,
        det: Vec<f64>,
        replicate_id: u64,
    ) -> Result<Self> {
        let sites = spec.site_count()?;
        if times.is_empty()
            || values.len() != times.len() * sites
            || det.len() != values.len()
        {
            return Err(BtpError::invalid("field array shapes do not match"));
        }
        Self::new(spec, times, values, det, replicate_id)
    }

    pub(crate) fn new(
        spec: LatticeSpec,
        times: Vec<f64>,
        values: Vec<f64>,
        det: Vec<f64>,
        replicate_id: u64,
    ) -> Result<Self> {
        if values.iter().chain(&det).any(|v| !v.is_finite()) {
            return Err(BtpError::Convergence {
                achieved: f64::INFINITY,
                required: f64::MAX,
            });
        }
        Ok(SolutionField {
            spec,
            times,
            values,
            det,
            replicate_id,
        })
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn site_count(&self) -> usize {
        self.values.len() / self.times.len()
    }

    pub fn replicate_id(&self) -> u64 {
        self.replicate_id
    }

    pub fn value(&self, time_idx: usize, site: usize) -> f64 {
        self.values[time_idx * self.site_count() + site]
    }

    pub fn det_value(&self, time_idx: usize, site: usize) -> f64 {
        self.det[time_idx * self.site_count() + site]
    }

    /// Stochastic-integral component, `value − deterministic`.
    pub fn random_part(&self, time_idx: usize, site: usize) -> f64 {
        self.value(time_idx, site) - self.det_value(time_idx, site)
    }

    pub fn values_at(&self, time_idx: usize) -> &[f64] {
        let s = self.site_count();
        &self.values[time_idx * s..(time_idx + 1) * s]
    }
}

/// Uniform solver grid `0, h, …, t_end`, aligned with the noise master grid.
#[derive(Debug, Clone)]
pub struct UniformGrid {
    pub times: Vec<f64>,
    pub master_idx: Vec<usize>,
}

impl UniformGrid {
    pub fn new(t_end: f64, steps: usize, noise: &NoiseSystem) -> Result<Self> {
        if steps == 0 || !(t_end > 0.0) {
            return Err(BtpError::invalid("grid needs t_end > 0 and steps >= 1"));
        }
        let mut times = Vec::with_capacity(steps + 1);
        let mut master_idx = Vec::with_capacity(steps + 1);
        for k in 0..=steps {
            let t = t_end * k as f64 / steps as f64;
            master_idx.push(noise.grid_index(t)?);
            times.push(t);
        }
        Ok(UniformGrid { times, master_idx })
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }
}

/// Site enumeration plus the site-pair → kernel-offset index map shared by
/// the dense solver loops.
pub(crate) struct SiteGeometry {
    pub coords: Vec<Vec<f64>>,
    pub pair_flat: Vec<usize>,
    pub count: usize,
}

impl SiteGeometry {
    pub fn new(spec: &LatticeSpec, table_layout: &OffsetTable) -> Result<Self> {
        let sites = spec.sites()?;
        let count = sites.len();
        let coords: Vec<Vec<f64>> = sites.iter().map(|p| p.coords(spec)).collect();
        let mut pair_flat = vec![0usize; count * count];
        let mut off = vec![0i64; spec.dim.get()];
        for (xi, x) in sites.iter().enumerate() {
            for (yi, y) in sites.iter().enumerate() {
                for (o, (a, b)) in off.iter_mut().zip(x.index().iter().zip(y.index())) {
                    *o = a - b;
                }
                pair_flat[xi * count + yi] = table_layout
                    .flat_index(&off)
                    .ok_or_else(|| BtpError::invalid("offset table band too small"))?;
            }
        }
        Ok(SiteGeometry {
            coords,
            pair_flat,
            count,
        })
    }
}

fn det_series(
    u0: &LatticeField,
    spec: &LatticeSpec,
    grid: &UniformGrid,
    q: &QuadratureSpec,
) -> Result<Vec<Vec<f64>>> {
    let mut det = Vec::with_capacity(grid.times.len());
    for &t in &grid.times {
        det.push(deterministic_part(t, u0, spec, q)?.values().to_vec());
    }
    Ok(det)
}

/// Precomputed tables for the Picard iteration of the truncated SIE on a
/// uniform grid: kernel offset tables per lag and the initial-data smoothing.
pub struct PicardContext {
    spec: LatticeSpec,
    pub(crate) grid: UniformGrid,
    pub(crate) det: Vec<Vec<f64>>,
    pub(crate) lag_tables: Vec<OffsetTable>,
    pub(crate) geom: SiteGeometry,
    pub(crate) inv_sqrt_dd: f64,
}

impl PicardContext {
    pub fn prepare(
        u0: &LatticeField,
        spec: &LatticeSpec,
        t_end: f64,
        steps: usize,
        noise: &NoiseSystem,
        q: &QuadratureSpec,
    ) -> Result<Self> {
        q.validate()?;
        if !u0.spec().same_geometry(spec) {
            return Err(BtpError::domain("initial field lattice does not match"));
        }
        let grid = UniformGrid::new(t_end, steps, noise)?;
        let extent = (2 * spec.max_index()?) as usize;
        let mut lag_tables = Vec::with_capacity(steps);
        for m in 1..=steps {
            lag_tables.push(checked_offset_table(grid.dt() * m as f64, spec, extent, q)?);
        }
        let det = det_series(u0, spec, &grid, q)?;
        let geom = SiteGeometry::new(spec, &lag_tables[0])?;
        let inv_sqrt_dd = spec.delta.powf(-(spec.dim.get() as f64) / 2.0);
        Ok(PicardContext {
            spec: *spec,
            grid,
            det,
            lag_tables,
            geom,
            inv_sqrt_dd,
        })
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    /// Run the fixed-point iteration for one replicate. Returns the solution
    /// and the sup-site L² residuals of successive iterates.
    pub fn run(
        &self,
        a: &DiffusionSpec,
        noise: &NoiseSystem,
        replicate: u64,
        max_iter: usize,
        tol: f64,
    ) -> Result<(SolutionField, Vec<f64>)> {
        if a.lipschitz_const.is_none() {
            return Err(BtpError::NonLipschitz(a.label().to_string()));
        }
        a.validate()?;
        let s = self.geom.count;
        let jn = self.grid.times.len();
        let dw = noise.increments(&self.geom.coords, replicate, &self.grid.master_idx)?;
        let det_flat: Vec<f64> = self.det.iter().flatten().copied().collect();

        let mut prev = det_flat.clone();
        let mut residuals = Vec::new();
        let mut cbuf = vec![0.0; s];
        for _ in 0..max_iter {
            let mut next = det_flat.clone();
            for k in 0..jn - 1 {
                for (y, slot) in cbuf.iter_mut().enumerate() {
                    *slot = a.eval(prev[k * s + y]) * dw[k][y] * self.inv_sqrt_dd;
                }
                for j in k + 1..jn {
                    let table = &self.lag_tables[j - k - 1];
                    let base = j * s;
                    for x in 0..s {
                        let mut acc = 0.0;
                        let row = &self.geom.pair_flat[x * s..(x + 1) * s];
                        for (y, &flat) in row.iter().enumerate() {
                            acc += table.by_flat(flat) * cbuf[y];
                        }
                        next[base + x] += acc;
                    }
                }
            }
            // Sup over sites of the L²-in-time change.
            let mut worst = 0.0_f64;
            for x in 0..s {
                let mut acc = 0.0;
                for j in 0..jn {
                    let d = next[j * s + x] - prev[j * s + x];
                    acc += d * d;
                }
                worst = worst.max((acc / jn as f64).sqrt());
            }
            residuals.push(worst);
            prev = next;
            if worst < tol {
                let field = SolutionField::new(
                    self.spec,
                    self.grid.times.clone(),
                    prev,
                    det_flat,
                    replicate,
                )?;
                return Ok((field, residuals));
            }
        }
        Err(BtpError::PicardNoConvergence { residuals })
    }
}

/// One-call Picard solve (prepares a context and runs a single replicate).
#[allow(clippy::too_many_arguments)]
pub fn picard_solve(
    u0: &LatticeField,
    a: &DiffusionSpec,
    noise: &NoiseSystem,
    spec: &LatticeSpec,
    t_end: f64,
    steps: usize,
    replicate: u64,
    max_iter: usize,
    tol: f64,
    q: &QuadratureSpec,
) -> Result<(SolutionField, Vec<f64>)> {
    PicardContext::prepare(u0, spec, t_end, steps, noise, q)?
        .run(a, noise, replicate, max_iter, tol)
}

/// Precomputed tables for the dyadic frozen-coefficient scheme of the
/// terminal-time auxiliary equation: the kernel is evaluated at `τ − k·2^{-i}`
/// and the diffusion argument at the left grid point.
pub struct EulerContext {
    spec: LatticeSpec,
    tau: f64,
    pub(crate) grid: UniformGrid,
    det: Vec<Vec<f64>>,
    kappa_tables: Vec<OffsetTable>,
    pub(crate) geom: SiteGeometry,
    inv_sqrt_dd: f64,
    u0: Vec<f64>,
}

impl EulerContext {
    pub fn prepare(
        u0: &LatticeField,
        spec: &LatticeSpec,
        tau: f64,
        level: u32,
        noise: &NoiseSystem,
        q: &QuadratureSpec,
    ) -> Result<Self> {
        q.validate()?;
        if !(tau > 0.0) {
            return Err(BtpError::domain("auxiliary solve requires tau > 0"));
        }
        if !u0.spec().same_geometry(spec) {
            return Err(BtpError::domain("initial field lattice does not match"));
        }
        let h = 2f64.powi(-(level as i32));
        let steps_f = tau / h;
        let steps = steps_f.round() as usize;
        if steps == 0 || (steps_f - steps as f64).abs() > 1e-9 {
            return Err(BtpError::invalid(
                "tau must be a multiple of the dyadic step 2^{-level}",
            ));
        }
        let grid = UniformGrid::new(tau, steps, noise)?;
        let extent = (2 * spec.max_index()?) as usize;
        // κ at step k freezes the kernel at lag τ − k·h = (steps − k)·h > 0.
        let mut kappa_tables = Vec::with_capacity(steps);
        for k in 0..steps {
            kappa_tables.push(checked_offset_table(
                grid.dt() * (steps - k) as f64,
                spec,
                extent,
                q,
            )?);
        }
        let det = det_series(u0, spec, &grid, q)?;
        let geom = SiteGeometry::new(spec, &kappa_tables[0])?;
        let inv_sqrt_dd = spec.delta.powf(-(spec.dim.get() as f64) / 2.0);
        Ok(EulerContext {
            spec: *spec,
            tau,
            grid,
            det,
            kappa_tables,
            geom,
            inv_sqrt_dd,
            u0: u0.values().to_vec(),
        })
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Advance one replicate across the dyadic grid.
    pub fn run(
        &self,
        a: &DiffusionSpec,
        noise: &NoiseSystem,
        replicate: u64,
    ) -> Result<SolutionField> {
        a.validate()?;
        let s = self.geom.count;
        let jn = self.grid.times.len();
        let dw = noise.increments(&self.geom.coords, replicate, &self.grid.master_idx)?;
        let mut values = vec![0.0; jn * s];
        values[..s].copy_from_slice(&self.u0);
        let mut cbuf = vec![0.0; s];
        for k in 0..jn - 1 {
            let (done, rest) = values.split_at_mut((k + 1) * s);
            let cur = &done[k * s..];
            let nxt = &mut rest[..s];
            for (y, slot) in cbuf.iter_mut().enumerate() {
                *slot = a.eval(cur[y]) * dw[k][y] * self.inv_sqrt_dd;
            }
            let table = &self.kappa_tables[k];
            for x in 0..s {
                let mut acc = 0.0;
                let row = &self.geom.pair_flat[x * s..(x + 1) * s];
                for (y, &flat) in row.iter().enumerate() {
                    acc += table.by_flat(flat) * cbuf[y];
                }
                nxt[x] = cur[x] + acc + (self.det[k + 1][x] - self.det[k][x]);
            }
        }
        let det_flat: Vec<f64> = self.det.iter().flatten().copied().collect();
        SolutionField::new(
            self.spec,
            self.grid.times.clone(),
            values,
            det_flat,
            replicate,
        )
    }
}

/// One-call dyadic Euler solve of the terminal-time auxiliary equation.
#[allow(clippy::too_many_arguments)]
pub fn euler_auxiliary_solve(
    u0: &LatticeField,
    a: &DiffusionSpec,
    noise: &NoiseSystem,
    spec: &LatticeSpec,
    tau: f64,
    level: u32,
    replicate: u64,
    q: &QuadratureSpec,
) -> Result<SolutionField> {
    EulerContext::prepare(u0, spec, tau, level, noise, q)?.run(a, noise, replicate)
}

/// Contexts for a sweep of terminal times sharing one noise system; the
/// assembled field at each τ is the truncated-SIE trajectory sample there.
pub struct SweepContext {
    contexts: Vec<EulerContext>,
    spec: LatticeSpec,
    tau_grid: Vec<f64>,
}

impl SweepContext {
    pub fn prepare(
        u0: &LatticeField,
        spec: &LatticeSpec,
        tau_grid: &[f64],
        level: u32,
        noise: &NoiseSystem,
        q: &QuadratureSpec,
    ) -> Result<Self> {
        if tau_grid.is_empty() || tau_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(BtpError::invalid("tau grid must be strictly increasing"));
        }
        let mut contexts = Vec::with_capacity(tau_grid.len());
        for &tau in tau_grid {
            contexts.push(EulerContext::prepare(u0, spec, tau, level, noise, q)?);
        }
        Ok(SweepContext {
            contexts,
            spec: *spec,
            tau_grid: tau_grid.to_vec(),
        })
    }

    pub fn run(
        &self,
        a: &DiffusionSpec,
        noise: &NoiseSystem,
        replicate: u64,
    ) -> Result<SolutionField> {
        let s = self.contexts[0].geom.count;
        let mut values = Vec::with_capacity(self.tau_grid.len() * s);
        let mut det = Vec::with_capacity(self.tau_grid.len() * s);
        for ctx in &self.contexts {
            let field = ctx.run(a, noise, replicate)?;
            let last = field.times().len() - 1;
            values.extend_from_slice(field.values_at(last));
            det.extend_from_slice(&ctx.det[last]);
        }
        SolutionField::new(self.spec, self.tau_grid.clone(), values, det, replicate)
    }
}

/// One-call sweep over a τ-grid.
#[allow(clippy::too_many_arguments)]
pub fn auxiliary_sweep(
    u0: &LatticeField,
    a: &DiffusionSpec,
    noise: &NoiseSystem,
    spec: &LatticeSpec,
    tau_grid: &[f64],
    level: u32,
    replicate: u64,
    q: &QuadratureSpec,
) -> Result<SolutionField> {
    SweepContext::prepare(u0, spec, tau_grid, level, noise, q)?.run(a, noise, replicate)
}

/// Run independent replicates in parallel, collecting in index order so
/// results do not depend on the worker count.
pub fn run_replicates<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    (0..n as u64).into_par_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Dim;

    fn setup() -> (LatticeSpec, LatticeField, NoiseSystem, QuadratureSpec) {
        let spec = LatticeSpec::truncated(0.25, Dim::D1, 2.0).unwrap();
        let u0 = LatticeField::from_fn(&spec, |i| {
            let x = i[0] as f64 * 0.25;
            (-x * x).exp()
        })
        .unwrap();
        let noise = NoiseSystem::new(99, 1.0, 256).unwrap();
        let q = QuadratureSpec::default();
        (spec, u0, noise, q)
    }

    #[test]
    fn picard_zero_diffusion_equals_deterministic() {
        let (spec, u0, noise, q) = setup();
        let (field, residuals) = picard_solve(
            &u0,
            &DiffusionSpec::zero(),
            &noise,
            &spec,
            0.5,
            32,
            0,
            20,
            1e-10,
            &q,
        )
        .unwrap();
        assert_eq!(residuals.len(), 1);
        for j in 0..field.times().len() {
            for x in 0..field.site_count() {
                assert_eq!(field.random_part(j, x), 0.0);
            }
        }
    }

    #[test]
    fn picard_constant_data_stays_constant_in_the_interior() {
        // Kernel conservation: with a ≡ 0 and wide truncation, the constant
        // initial state is a fixed point away from the boundary.
        let spec = LatticeSpec::truncated(0.25, Dim::D1, 8.0).unwrap();
        let u0 = LatticeField::constant(&spec, 3.0).unwrap();
        let noise = NoiseSystem::new(1, 0.5, 128).unwrap();
        let (field, _) = picard_solve(
            &u0,
            &DiffusionSpec::zero(),
            &noise,
            &spec,
            0.5,
            16,
            0,
            10,
            1e-10,
            &QuadratureSpec::default(),
        )
        .unwrap();
        let center = field.site_count() / 2;
        let last = field.times().len() - 1;
        assert!((field.value(last, center) - 3.0).abs() < 1e-6);
    }

    #[test]
    fn picard_rejects_growth_only_diffusion() {
        let (spec, u0, noise, q) = setup();
        let r = picard_solve(
            &u0,
            &DiffusionSpec::bounded_sine(1.0),
            &noise,
            &spec,
            0.5,
            32,
            0,
            20,
            1e-8,
            &q,
        );
        assert!(matches!(r, Err(BtpError::NonLipschitz(_))));
    }

    #[test]
    fn picard_bitwise_reproducible() {
        let (spec, u0, noise, q) = setup();
        let ctx = PicardContext::prepare(&u0, &spec, 1.0, 64, &noise, &q).unwrap();
        let a = DiffusionSpec::linear(0.5);
        let (f1, r1) = ctx.run(&a, &noise, 7, 30, 1e-8).unwrap();
        let (f2, r2) = ctx.run(&a, &noise, 7, 30, 1e-8).unwrap();
        assert_eq!(f1, f2);
        assert_eq!(r1, r2);
        let (f3, _) = ctx.run(&a, &noise, 8, 30, 1e-8).unwrap();
        assert_ne!(f1, f3);
    }

    #[test]
    fn picard_stochastic_integral_against_reordered_sum() {
        // Same discrete integral accumulated in a different loop order with
        // compensated summation; the two routes must agree to near machine.
        let (spec, u0, noise, q) = setup();
        let ctx = PicardContext::prepare(&u0, &spec, 0.5, 32, &noise, &q).unwrap();
        let a = DiffusionSpec::additive();
        let (field, _) = ctx.run(&a, &noise, 3, 20, 1e-9).unwrap();
        let s = ctx.geom.count;
        let jn = ctx.grid.times.len();
        let dw = noise
            .increments(&ctx.geom.coords, 3, &ctx.grid.master_idx)
            .unwrap();
        let j = jn - 1;
        for x in [0usize, s / 2, s - 1] {
            let mut sum = 0.0_f64;
            let mut comp = 0.0_f64;
            for y in 0..s {
                for k in (0..j).rev() {
                    let term = ctx.lag_tables[j - k - 1].by_flat(ctx.geom.pair_flat[x * s + y])
                        * dw[k][y]
                        * ctx.inv_sqrt_dd;
                    let t = sum + term;
                    comp += if sum.abs() >= term.abs() {
                        (sum - t) + term
                    } else {
                        (term - t) + sum
                    };
                    sum = t;
                }
            }
            let alt = sum + comp + ctx.det[j][x];
            let got = field.value(j, x);
            assert!(
                (alt - got).abs() < 1e-11 * got.abs().max(1.0),
                "x={x}: {alt} vs {got}"
            );
        }
    }

    #[test]
    fn euler_zero_diffusion_is_deterministic_part() {
        let (spec, u0, noise, q) = setup();
        let field =
            euler_auxiliary_solve(&u0, &DiffusionSpec::zero(), &noise, &spec, 1.0, 4, 0, &q)
                .unwrap();
        for j in 0..field.times().len() {
            for x in 0..field.site_count() {
                assert!(
                    field.random_part(j, x).abs() < 1e-14,
                    "j={j} x={x}: {}",
                    field.random_part(j, x)
                );
            }
        }
        // Initialization: X(0) = u0.
        for (x, &want) in u0.values().iter().enumerate() {
            assert_eq!(field.value(0, x), want);
        }
    }

    #[test]
    fn sweep_assembles_terminal_values() {
        let (spec, u0, noise, q) = setup();
        let a = DiffusionSpec::linear(0.5);
        let taus = [0.25, 0.5, 1.0];
        let ctx = SweepContext::prepare(&u0, &spec, &taus, 4, &noise, &q).unwrap();
        let sweep = ctx.run(&a, &noise, 5).unwrap();
        // Each τ entry equals the corresponding single solve at t = τ.
        for (ti, &tau) in taus.iter().enumerate() {
            let single = euler_auxiliary_solve(&u0, &a, &noise, &spec, tau, 4, 5, &q).unwrap();
            let last = single.times().len() - 1;
            for x in 0..sweep.site_count() {
                assert_eq!(sweep.value(ti, x), single.value(last, x), "tau={tau} x={x}");
            }
        }
        // Deterministic part of the assembly does not depend on the τ grid.
        let ctx2 = SweepContext::prepare(&u0, &spec, &[0.5, 1.0], 4, &noise, &q).unwrap();
        let sweep2 = ctx2.run(&a, &noise, 5).unwrap();
        for x in 0..sweep.site_count() {
            assert_eq!(sweep.det_value(1, x), sweep2.det_value(0, x));
        }
    }

    #[test]
    fn euler_approaches_picard_with_level() {
        // Cross-solver agreement under shared noise, coarse smoke version.
        let (spec, u0, noise, q) = setup();
        let a = DiffusionSpec::linear(0.5);
        let pic_ctx = PicardContext::prepare(&u0, &spec, 1.0, 256, &noise, &q).unwrap();
        let reps = 24u64;
        let mut dist = Vec::new();
        for level in [3u32, 6] {
            let e_ctx = EulerContext::prepare(&u0, &spec, 1.0, level, &noise, &q).unwrap();
            let mut acc = 0.0;
            for r in 0..reps {
                let (pf, _) = pic_ctx.run(&a, &noise, r, 40, 1e-9).unwrap();
                let ef = e_ctx.run(&a, &noise, r).unwrap();
                let lastp = pf.times().len() - 1;
                let laste = ef.times().len() - 1;
                let mut d2 = 0.0;
                for x in 0..pf.site_count() {
                    let d = pf.value(lastp, x) - ef.value(laste, x);
                    d2 += d * d;
                }
                acc += d2 / pf.site_count() as f64;
            }
            dist.push((acc / reps as f64).sqrt());
        }
        assert!(
            dist[1] < dist[0],
            "distances should shrink with level: {dist:?}"
        );
    }

    #[test]
    fn diffusion_validation() {
        assert!(DiffusionSpec::linear(2.0).validate().is_ok());
        assert!(DiffusionSpec::bounded_sine(1.5).validate().is_ok());
        let bad = DiffusionSpec::custom("bad", |u| u * u, Some(1.0), 1.0);
        assert!(bad.validate().is_err());
    }
}
