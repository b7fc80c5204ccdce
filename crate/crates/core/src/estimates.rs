//! Numerical verification of the kernel estimates: L² norms, temporal and
//! spatial difference integrals, the fourth-order differential-difference
//! residual, and the lattice-to-continuum asymptotics.
//!
//! Each routine measures a quantity whose exact value, scaling exponent, or
//! boundedness is known, and the standard checks package the measurements as
//! [`EstimateReport`]s with an explicit pass rule.

use crate::error::{BtpError, Result};
use crate::kernels::{self, Dim, SpacePoint};
use crate::lattice::{
    self, btrw_l2_cross, discrete_bilaplacian, discrete_laplacian, BtrwKernel, LatticeField,
    LatticeSpec,
};
use crate::quad::{self, QuadratureSpec};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Continuous-space integral or lattice sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Mode {
    Continuous,
    Lattice { delta: f64 },
}

/// Where a reference value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefSource {
    /// Exact closed form evaluated in code.
    ClosedForm,
    /// Independent quadrature or summation route.
    Oracle,
    /// A recorded constant or threshold, not asserted from first principles.
    Recorded,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Reference {
    pub value: f64,
    pub source: RefSource,
    pub description: String,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
}

/// Measured quantity against its reference; `pass` is a pure function of the
/// recorded numbers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    pub quantity: String,
    pub grid: Vec<f64>,
    pub measured: Vec<f64>,
    pub reference: Reference,
    pub fit: Option<SlopeFit>,
    pub tolerance: f64,
    pub pass: bool,
}

/// Ordinary least squares on `(ln x, ln y)`.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Result<SlopeFit> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(BtpError::invalid("need at least 3 points for a slope fit"));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return Err(BtpError::invalid("log-log fit requires positive data"));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let dof = (lx.len() - 2).max(1) as f64;
    let stderr = (ssr / dof / sxx).sqrt();
    Ok(SlopeFit {
        slope,
        intercept,
        stderr,
    })
}

/// Spatial Hölder exponent choice `α_d`, restricted to the admissible
/// interval: `(0,1]` for `d=1`, `(0,1)` for `d=2`, `(0,1/2)` for `d=3`.
/// The right endpoints for `d = 2, 3` are excluded because the associated
/// constants blow up there.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AlphaChoice {
    pub d: Dim,
    pub alpha: f64,
}

impl AlphaChoice {
    pub fn new(d: Dim, alpha: f64) -> Result<Self> {
        d.require_l2_range()?;
        let ok = match d.get() {
            1 => alpha > 0.0 && alpha <= 1.0,
            2 => alpha > 0.0 && alpha < 1.0,
            3 => alpha > 0.0 && alpha < 0.5,
            _ => unreachable!(),
        };
        if !ok {
            return Err(BtpError::domain(format!(
                "alpha = {} outside the admissible interval for d = {}",
                alpha,
                d.get()
            )));
        }
        Ok(AlphaChoice { d, alpha })
    }
}

fn nu_band(t: f64, delta: f64, cutoff: f64) -> usize {
    lattice::bessel_band(t.sqrt() * cutoff / (delta * delta))
}

fn lattice_table(t: f64, delta: f64, d: Dim, cutoff: f64, n: usize) -> Result<BtrwKernel> {
    let spec = LatticeSpec::unbounded(delta, d)?;
    BtrwKernel::build(t, &spec, nu_band(t, delta, cutoff), cutoff, n)
}

/// `∫_{ℝᵈ} [K^{BT}_t(x)]² dx` (continuous) or `Σ_x [K^{BTW}_t(x)]²`
/// (lattice). Continuous values follow the exact `c_d·t^{-d/4}` polar form;
/// lattice values are whole-lattice sums in axis-factorized form.
pub fn l2_kernel_norm(t: f64, d: Dim, mode: Mode, q: &QuadratureSpec) -> Result<f64> {
    if !(t > 0.0) {
        return Err(BtpError::domain("l2_kernel_norm requires t > 0"));
    }
    d.require_l2_range()?;
    q.validate()?;
    match mode {
        Mode::Continuous => {
            Ok(kernels::bt2_diag_constant(d, q)? * t.powf(-(d.get() as f64) / 4.0))
        }
        Mode::Lattice { delta } => quad::converged(
            |n| match lattice_table(t, delta, d, q.tail_cutoff, n) {
                Ok(tab) => btrw_l2_cross(&tab, &tab, &vec![0i64; d.get()]),
                Err(_) => f64::NAN,
            },
            q,
        ),
    }
}

/// `∫_0^{hi} f(σ) dσ` under `σ = z⁴`, which flattens the `σ^{-d/4}` kernel
/// singularities for `d ≤ 3`; `scale` marks an interior transition to keep
/// resolved.
fn integrate_quartic_sub<F: Fn(f64) -> f64>(f: F, hi: f64, scale: f64, n: usize) -> f64 {
    let zmax = hi.powf(0.25);
    let zlo = if scale > 0.0 {
        (scale.powf(0.25) * 0.5).min(zmax / 2.0)
    } else {
        zmax * 1e-3
    };
    let edges = quad::scaled_edges(zlo.max(zmax * 1e-9), zmax);
    quad::integrate_panels(|z| 4.0 * z.powi(3) * f(z * z * z * z), &edges, n)
}

/// `∫_0^t Σ_x [K_{t-s;x} − K_{r-s;x}]² ds` (with `K_s ≡ 0` for `s < 0`),
/// through the 2-clock decomposition
/// `Σ_x [K_u − K_v]² = K²_{u,u} + K²_{v,v} − 2K²_{u,v}`.
pub fn temporal_difference_integral(
    r: f64,
    t: f64,
    d: Dim,
    mode: Mode,
    q: &QuadratureSpec,
) -> Result<f64> {
    if !(r > 0.0) || !(t > 0.0) || r > t {
        return Err(BtpError::domain(
            "temporal_difference_integral requires 0 < r <= t",
        ));
    }
    d.require_l2_range()?;
    q.validate()?;
    if r == t {
        return Ok(0.0);
    }
    let gap = t - r;
    match mode {
        Mode::Continuous => {
            let df = d.get() as f64;
            let p = df / 4.0;
            let c_d = kernels::bt2_diag_constant(d, q)?;
            // Tail piece over s ∈ (r, t): only K_{t-s} survives there.
            let tail = c_d * gap.powf(1.0 - p) / (1.0 - p);
            let cutoff = q.tail_cutoff;
            let body = quad::converged(
                |n| {
                    integrate_quartic_sub(
                        |sig| {
                            c_d * ((sig + gap).powf(-p) + sig.powf(-p))
                                - 2.0
                                    * kernels::btbm2_density_raw(
                                        sig + gap,
                                        sig,
                                        d.get(),
                                        cutoff,
                                        n,
                                    )
                        },
                        r,
                        gap,
                        n,
                    )
                },
                q,
            )?;
            Ok(body + tail)
        }
        Mode::Lattice { delta } => quad::converged(
            |n| temporal_lattice_raw(r, t, d, delta, q.tail_cutoff, n),
            q,
        ),
    }
}

fn temporal_lattice_raw(r: f64, t: f64, d: Dim, delta: f64, cutoff: f64, n: usize) -> f64 {
    let gap = t - r;
    let zero_shift = vec![0i64; d.get()];
    let diff_sq = |u: f64, v: f64| -> f64 {
        let ta = lattice_table(u, delta, d, cutoff, n).expect("valid lattice");
        let tb = lattice_table(v, delta, d, cutoff, n).expect("valid lattice");
        btrw_l2_cross(&ta, &ta, &zero_shift) + btrw_l2_cross(&tb, &tb, &zero_shift)
            - 2.0 * btrw_l2_cross(&ta, &tb, &zero_shift)
    };
    let l2 = |u: f64| -> f64 {
        let ta = lattice_table(u, delta, d, cutoff, n).expect("valid lattice");
        btrw_l2_cross(&ta, &ta, &zero_shift)
    };
    // Lattice integrands are bounded at σ = 0 but vary on the δ² clock scale.
    let body = integrate_quartic_sub(
        |sig| diff_sq(sig + gap, sig),
        r,
        (delta * delta).min(gap),
        n / 2,
    );
    let tail = integrate_quartic_sub(l2, gap, delta * delta, n / 2);
    body + tail
}

/// `∫_0^t Σ_x [K_{s;x} − K_{s;x+z}]² ds` for a spatial offset `z`
/// (continuous mode collapses the space integral to a Gaussian difference;
/// lattice mode uses the factorized whole-lattice sum with an index shift).
pub fn spatial_difference_integral(
    z: &SpacePoint,
    t: f64,
    d: Dim,
    mode: Mode,
    q: &QuadratureSpec,
) -> Result<f64> {
    if !(t > 0.0) {
        return Err(BtpError::domain(
            "spatial_difference_integral requires t > 0",
        ));
    }
    d.require_l2_range()?;
    q.validate()?;
    if z.dim() != d.get() {
        return Err(BtpError::domain("offset dimension mismatch"));
    }
    let z2: f64 = z.coords().iter().map(|c| c * c).sum();
    if z2 == 0.0 {
        return Ok(0.0);
    }
    match mode {
        Mode::Continuous => {
            let cutoff = q.tail_cutoff;
            quad::converged(|n| spatial_continuous_raw(z2, t, d.get(), cutoff, n), q)
        }
        Mode::Lattice { delta } => {
            let mut shift = Vec::with_capacity(d.get());
            for &c in z.coords() {
                let m = c / delta;
                if (m - m.round()).abs() > 1e-9 {
                    return Err(BtpError::domain(
                        "lattice-mode offset must be a multiple of the spacing",
                    ));
                }
                shift.push(m.round() as i64);
            }
            quad::converged(
                |n| spatial_lattice_raw(&shift, t, d, delta, q.tail_cutoff, n),
                q,
            )
        }
    }
}

fn spatial_continuous_raw(z2: f64, t: f64, d: usize, cutoff: f64, n: usize) -> f64 {
    let df = d as f64;
    // Inner integral over the 2-clock value w: the space integral of the
    // squared kernel difference collapses to 2(1 − e^{-|z|²/2w}) against the
    // clock density f_{s,s}(w) and the flat factor (2πw)^{-d/2}.
    let inner = |s: f64| -> f64 {
        let rs = s.sqrt();
        quad::integrate_sqrt_sub(
            |w| {
                let f_ss = (1.0 / (PI * s).sqrt())
                    * (-w * w / (4.0 * s)).exp()
                    * 2.0
                    * libm::erf(w / (2.0 * rs));
                (1.0 - (-z2 / (2.0 * w)).exp()) * (2.0 * PI * w).powf(-df / 2.0) * f_ss
            },
            1.5 * cutoff * rs,
            z2.min(rs) * 0.25,
            n,
        )
    };
    2.0 * integrate_quartic_sub(inner, t, (z2 * z2).min(t), n)
}

fn spatial_lattice_raw(shift: &[i64], t: f64, d: Dim, delta: f64, cutoff: f64, n: usize) -> f64 {
    let zero_shift = vec![0i64; d.get()];
    integrate_quartic_sub(
        |s| {
            let tab = lattice_table(s, delta, d, cutoff, n / 2).expect("valid lattice");
            2.0 * (btrw_l2_cross(&tab, &tab, &zero_shift) - btrw_l2_cross(&tab, &tab, shift))
        },
        t,
        delta * delta,
        n / 2,
    )
}

/// Sup over sites of `|du/dt − Δ u₀ /√(8πt) − Δ² u / 8|` where
/// `u(t,·) = Σ_y K^{BTW}_t(·,y) u₀(y)` and `du/dt` differentiates the
/// Gaussian clock weight inside the quadrature, so the residual measures
/// quadrature error rather than finite-difference error.
pub fn dde_residual(
    t: f64,
    u0: &LatticeField,
    spec: &LatticeSpec,
    q: &QuadratureSpec,
) -> Result<f64> {
    if !(t > 0.0) {
        return Err(BtpError::domain("dde_residual requires t > 0"));
    }
    if !u0.spec().same_geometry(spec) {
        return Err(BtpError::domain("field lattice does not match"));
    }
    q.validate()?;
    let m = u0.spec().max_index()?;
    // Evaluate u on a 2-ring pad so the bi-Laplacian read on the original
    // block never touches unstored values of the zero-extended datum's image.
    let padded = LatticeSpec::truncated(
        spec.delta,
        spec.dim,
        (m as f64 + 2.5) * spec.delta,
    )?;
    let extent = (2 * m + 2) as usize;
    let n = q.node_count;
    let value_tab = BtrwKernel::build(t, spec, extent, q.tail_cutoff, n)?.offset_table(extent);
    let deriv_tab =
        BtrwKernel::build_time_derivative(t, spec, extent, q.tail_cutoff, n)?.offset_table(extent);

    let pad_sites = padded.sites()?;
    let mut u = LatticeField::zeros(&padded)?;
    let mut dudt = LatticeField::zeros(&padded)?;
    let u0_sites = spec.sites()?;
    let mut off = vec![0i64; spec.dim.get()];
    for x in &pad_sites {
        let mut acc_u = 0.0;
        let mut acc_d = 0.0;
        for (y, &w) in u0_sites.iter().zip(u0.values()) {
            if w != 0.0 {
                for (o, (a, b)) in off.iter_mut().zip(x.index().iter().zip(y.index())) {
                    *o = a - b;
                }
                acc_u += value_tab.get(&off) * w;
                acc_d += deriv_tab.get(&off) * w;
            }
        }
        u.set(x.index(), acc_u);
        dudt.set(x.index(), acc_d);
    }

    let lap_u0 = discrete_laplacian(u0)?;
    let bilap_u = discrete_bilaplacian(&u)?;
    let coef = 1.0 / (8.0 * PI * t).sqrt();
    let mut worst = 0.0_f64;
    for x in &u0_sites {
        let res =
            dudt.get(x.index()) - coef * lap_u0.get(x.index()) - bilap_u.get(x.index()) / 8.0;
        worst = worst.max(res.abs());
    }
    Ok(worst)
}

/// Residual of the continuous fourth-order identity for the `d = 1`
/// Brownian-time kernel away from its singular initial site:
/// `|∂_t K(t;x,0) − (1/8) ∂_x⁴ K(t;x,0)|`, all derivatives taken inside the
/// quadrature.
pub fn btbm_kernel_pde_residual(t: f64, x: f64, q: &QuadratureSpec) -> Result<f64> {
    if !(t > 0.0) {
        return Err(BtpError::domain("residual requires t > 0"));
    }
    if x == 0.0 {
        return Err(BtpError::domain(
            "the initial-data term is singular at x = 0; evaluate at x != 0",
        ));
    }
    q.validate()?;
    let rt = t.sqrt();
    let x2 = x * x;
    let inner = x2 / rt;
    let eval = |n: usize| -> f64 {
        let dt = quad::integrate_sqrt_sub(
            |u| {
                let s = rt * u;
                let g = (-x2 / (2.0 * s)).exp() / (2.0 * PI * s).sqrt();
                2.0 * g * kernels::std_normal_pdf(u) * (u * u - 1.0) / (2.0 * t)
            },
            q.tail_cutoff,
            inner,
            n,
        );
        let dx4 = quad::integrate_sqrt_sub(
            |u| {
                let s = rt * u;
                let g = (-x2 / (2.0 * s)).exp() / (2.0 * PI * s).sqrt();
                let h4 = (x2 * x2) / s.powi(4) - 6.0 * x2 / s.powi(3) + 3.0 / (s * s);
                2.0 * g * h4 * kernels::std_normal_pdf(u)
            },
            q.tail_cutoff,
            inner,
            n,
        );
        dt - dx4 / 8.0
    };
    Ok(eval(q.node_count * 2).abs())
}

/// Maximum relative deviation of `K^{BTW}_t([x],[y]) / (δᵈ K^{BT}_t(x,y))`
/// from 1 over a `(t, x, y)` grid, per spacing, with a monotone-decrease
/// verdict along the spacing sequence.
pub fn asymptotic_check(
    t_grid: &[f64],
    xy_grid: &[(SpacePoint, SpacePoint)],
    delta_seq: &[f64],
    d: Dim,
    q: &QuadratureSpec,
) -> Result<EstimateReport> {
    if t_grid.is_empty() || xy_grid.is_empty() || delta_seq.len() < 2 {
        return Err(BtpError::domain(
            "asymptotic check needs nonempty grids and at least two spacings",
        ));
    }
    for (x, y) in xy_grid {
        if x.coords() == y.coords() {
            return Err(BtpError::domain(
                "the kernel ratio is only defined for x != y",
            ));
        }
    }
    q.validate()?;
    let df = d.get() as f64;
    let mut devs = Vec::with_capacity(delta_seq.len());
    for &delta in delta_seq {
        let spec = LatticeSpec::unbounded(delta, d)?;
        let mut worst = 0.0_f64;
        for &t in t_grid {
            for (x, y) in xy_grid {
                let cont = kernels::btbm_density(t, x, y, d, q)?;
                let latt =
                    lattice::btrw_density(t, &spec.round_down(x), &spec.round_down(y), &spec, q)?;
                worst = worst.max((latt / (delta.powf(df) * cont) - 1.0).abs());
            }
        }
        devs.push(worst);
    }
    let decreasing = devs.windows(2).all(|w| w[1] < w[0]);
    Ok(EstimateReport {
        quantity: "btrw-to-btbm deviation".into(),
        grid: delta_seq.to_vec(),
        measured: devs,
        reference: Reference {
            value: 1.0,
            source: RefSource::ClosedForm,
            description: "lattice kernel over δᵈ × continuous kernel tends to 1".into(),
        },
        fit: None,
        tolerance: 0.0,
        pass: decreasing,
    })
}

// ---------------------------------------------------------------------------
// Standard checks: fixed parameter grids shared by the CLI and the test suite.
// ---------------------------------------------------------------------------

/// Reported L² constants at `t = 1` plus the exact scaling law.
pub fn standard_l2_report(d: Dim, q: &QuadratureSpec) -> Result<EstimateReport> {
    let recorded = match d.get() {
        1 => 4.0 * 0.0914,
        2 => 4.0 * 0.0396,
        3 => 4.0 * 0.0243,
        _ => return Err(BtpError::domain("l2 constants recorded for d = 1, 2, 3")),
    };
    let measured = l2_kernel_norm(1.0, d, Mode::Continuous, q)?;
    let tol = 2e-3;
    let ts = [0.01, 0.1, 1.0, 10.0, 100.0];
    let mut scaled = Vec::new();
    for &t in &ts {
        scaled.push(l2_kernel_norm(t, d, Mode::Continuous, q)? * t.powf(d.get() as f64 / 4.0));
    }
    let spread = scaled.iter().cloned().fold(f64::MIN, f64::max)
        - scaled.iter().cloned().fold(f64::MAX, f64::min);
    let pass = (measured - recorded).abs() < tol && spread < 1e-6 * measured;
    Ok(EstimateReport {
        quantity: format!("l2 kernel norm, d = {}", d.get()),
        grid: ts.to_vec(),
        measured: scaled,
        reference: Reference {
            value: recorded,
            source: RefSource::Recorded,
            description: "reported constant, cross-checked by quadrature".into(),
        },
        fit: None,
        tolerance: tol,
        pass,
    })
}

/// Log-log slope of the temporal difference integral against the gap.
pub fn standard_temporal_report(d: Dim, q: &QuadratureSpec) -> Result<EstimateReport> {
    let t = 1.0;
    let gaps: Vec<f64> = (0..9).map(|i| 1e-3 * 10f64.powf(i as f64 / 4.0)).collect();
    let mut vals = Vec::with_capacity(gaps.len());
    for &g in &gaps {
        vals.push(temporal_difference_integral(
            t - g,
            t,
            d,
            Mode::Continuous,
            q,
        )?);
    }
    let fit = fit_loglog(&gaps, &vals)?;
    let reference = (4.0 - d.get() as f64) / 4.0;
    let tol = 0.05;
    let pass = (fit.slope - reference).abs() < tol + 2.0 * fit.stderr;
    Ok(EstimateReport {
        quantity: format!("temporal difference exponent, d = {}", d.get()),
        grid: gaps,
        measured: vals,
        reference: Reference {
            value: reference,
            source: RefSource::ClosedForm,
            description: "(4-d)/4 scaling of the squared temporal kernel difference".into(),
        },
        fit: Some(fit),
        tolerance: tol,
        pass,
    })
}

/// Boundedness of `value / (|z|^{2α} t^{p})` over an offset sweep.
///
/// Two checks per offset: the ratio stays under a recorded cap over the whole
/// sweep (boundedness — the ratio legitimately decays once `|z|` reaches the
/// kernel's spatial scale and the difference saturates), and the
/// `t`-normalization holds to within 50% across the `t` grid at each fixed
/// offset.
pub fn standard_spatial_report(
    choice: AlphaChoice,
    t_grid: &[f64],
    q: &QuadratureSpec,
) -> Result<EstimateReport> {
    let d = choice.d;
    // p₁(1) = 1/4 is exact; other time exponents are treated as measured
    // (they are small near the upper end of the admissible α interval).
    let p = if d.get() == 1 && choice.alpha == 1.0 {
        0.25
    } else {
        0.0
    };
    let cap = match d.get() {
        1 => 2.6,
        _ => 3.5,
    };
    let zs: Vec<f64> = (0..7).map(|i| 1e-3 * 10f64.powf(i as f64 / 2.0)).collect();
    let mut ratios = Vec::new();
    let mut grid = Vec::new();
    let mut pass = true;
    for &zlen in &zs {
        let mut per_t = Vec::new();
        for &t in t_grid {
            let mut coords = vec![0.0; d.get()];
            coords[0] = zlen;
            let z = SpacePoint::new(coords)?;
            let v = spatial_difference_integral(&z, t, d, Mode::Continuous, q)?;
            let ratio = v / (zlen.powf(2.0 * choice.alpha) * t.powf(p));
            per_t.push(ratio);
            ratios.push(ratio);
            grid.push(zlen);
        }
        let hi = per_t.iter().cloned().fold(f64::MIN, f64::max);
        let lo = per_t.iter().cloned().fold(f64::MAX, f64::min);
        pass &= hi.is_finite() && hi <= cap && hi / lo - 1.0 < 0.5;
    }
    Ok(EstimateReport {
        quantity: format!(
            "spatial difference ratio, d = {}, alpha = {}",
            d.get(),
            choice.alpha
        ),
        grid,
        measured: ratios,
        reference: Reference {
            value: cap,
            source: RefSource::Recorded,
            description: "recorded cap on value/(|z|^{2α} t^p); not asserted a priori".into(),
        },
        fit: None,
        tolerance: 0.5,
        pass,
    })
}

/// Fourth-order residual for the kernel initial condition at `d = 1`.
pub fn standard_dde_report(q: &QuadratureSpec) -> Result<EstimateReport> {
    let spec = LatticeSpec::truncated(0.25, Dim::D1, 8.0)?;
    let mut u0 = LatticeField::zeros(&spec)?;
    u0.set(&[0], 1.0);
    let ts = [0.5, 1.0, 2.0];
    let mut vals = Vec::new();
    let mut pass = true;
    for &t in &ts {
        let res = dde_residual(t, &u0, &spec, q)?;
        let res_fine = dde_residual(t, &u0, &spec, &q.doubled())?;
        // Below ~1e-12 both evaluations sit at the floating-point floor and
        // the doubling comparison is rounding noise.
        pass &= res < 1e-6 && (res_fine <= res || res_fine < 1e-12);
        vals.push(res);
    }
    Ok(EstimateReport {
        quantity: "fourth-order differential-difference residual".into(),
        grid: ts.to_vec(),
        measured: vals,
        reference: Reference {
            value: 0.0,
            source: RefSource::Recorded,
            description: "quadrature floor 1e-6; must shrink under node doubling".into(),
        },
        fit: None,
        tolerance: 1e-6,
        pass,
    })
}

/// Lattice-to-continuum kernel ratio on the standard `d = 1` grid.
pub fn standard_asymptotic_report(q: &QuadratureSpec) -> Result<EstimateReport> {
    let x = SpacePoint::new(vec![0.0])?;
    let pairs: Vec<(SpacePoint, SpacePoint)> = [0.5, 1.0, 2.0]
        .iter()
        .map(|&g| (x.clone(), SpacePoint::new(vec![g]).unwrap()))
        .collect();
    asymptotic_check(&[1.0], &pairs, &[0.2, 0.1, 0.05], Dim::D1, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticePoint;

    fn q() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    #[test]
    fn l2_continuous_matches_reported_constants() {
        let want = [4.0 * 0.0914, 4.0 * 0.0396, 4.0 * 0.0243];
        for d in 1..=3usize {
            let v = l2_kernel_norm(1.0, Dim::new(d).unwrap(), Mode::Continuous, &q()).unwrap();
            assert!((v - want[d - 1]).abs() < 2e-3, "d={d}: {v}");
        }
        assert!(l2_kernel_norm(1.0, Dim::new(4).unwrap(), Mode::Continuous, &q()).is_err());
    }

    #[test]
    fn l2_ratio_law_exact() {
        let v1 = l2_kernel_norm(0.37, Dim::D2, Mode::Continuous, &q()).unwrap();
        let v2 = l2_kernel_norm(9.1, Dim::D2, Mode::Continuous, &q()).unwrap();
        let ratio = v1 / v2;
        let want = (9.1f64 / 0.37).powf(0.5);
        assert!((ratio / want - 1.0).abs() < 1e-9);
    }

    #[test]
    fn l2_lattice_factorized_matches_site_sum_d1() {
        // Axis-factorized whole-lattice sum against a plain site loop.
        let delta = 0.25;
        let spec = LatticeSpec::unbounded(delta, Dim::D1).unwrap();
        let qd = q();
        let t = 0.7;
        let o = LatticePoint::new(vec![0]);
        let mut direct = 0.0;
        for k in -80..=80i64 {
            let v = lattice::btrw_density(t, &LatticePoint::new(vec![k]), &o, &spec, &qd).unwrap();
            direct += v * v;
        }
        let fact = l2_kernel_norm(t, Dim::D1, Mode::Lattice { delta }, &qd).unwrap();
        assert!((fact - direct).abs() < 1e-10 * direct, "{fact} vs {direct}");
    }

    #[test]
    fn l2_lattice_converges_to_continuous() {
        let qd = q();
        let cont = l2_kernel_norm(1.0, Dim::D1, Mode::Continuous, &qd).unwrap();
        let mut prev = f64::INFINITY;
        for &delta in &[0.4, 0.2, 0.1] {
            let latt = l2_kernel_norm(1.0, Dim::D1, Mode::Lattice { delta }, &qd).unwrap();
            let dev = (latt / (delta * cont) - 1.0).abs();
            assert!(dev < prev, "delta={delta}: {dev}");
            prev = dev;
        }
        assert!(prev < 0.02, "{prev}");
    }

    #[test]
    fn temporal_zero_gap_and_domain() {
        let v = temporal_difference_integral(1.0, 1.0, Dim::D1, Mode::Continuous, &q()).unwrap();
        assert_eq!(v, 0.0);
        assert!(temporal_difference_integral(2.0, 1.0, Dim::D1, Mode::Continuous, &q()).is_err());
        assert!(temporal_difference_integral(0.5, 1.0, Dim::new(4).unwrap(), Mode::Continuous, &q())
            .is_err());
    }

    #[test]
    fn temporal_slope_d1_quick() {
        let qd = QuadratureSpec {
            node_count: 24,
            ..q()
        };
        let gaps = [1e-3, 1e-2, 1e-1];
        let vals: Vec<f64> = gaps
            .iter()
            .map(|&g| {
                temporal_difference_integral(1.0 - g, 1.0, Dim::D1, Mode::Continuous, &qd).unwrap()
            })
            .collect();
        let fit = fit_loglog(&gaps, &vals).unwrap();
        assert!((fit.slope - 0.75).abs() < 0.05, "slope {}", fit.slope);
    }

    #[test]
    fn temporal_lattice_close_to_continuous_at_fine_spacing() {
        let qd = QuadratureSpec {
            node_count: 24,
            ..q()
        };
        let delta = 0.1;
        let cont = temporal_difference_integral(0.9, 1.0, Dim::D1, Mode::Continuous, &qd).unwrap();
        let latt =
            temporal_difference_integral(0.9, 1.0, Dim::D1, Mode::Lattice { delta }, &qd).unwrap();
        assert!(
            (latt / (delta * cont) - 1.0).abs() < 0.05,
            "latt {latt}, cont {cont}"
        );
    }

    #[test]
    fn spatial_zero_offset_and_small_z_boundedness() {
        let z0 = SpacePoint::new(vec![0.0]).unwrap();
        assert_eq!(
            spatial_difference_integral(&z0, 1.0, Dim::D1, Mode::Continuous, &q()).unwrap(),
            0.0
        );
        // d = 1, α = 1: value/z² flattens to a finite limit as z ↓ 0 (the
        // bounded-constant regime) and decays once z reaches the kernel scale.
        let qd = QuadratureSpec {
            node_count: 24,
            ..q()
        };
        let mut ratios = Vec::new();
        for &zl in &[1e-3, 1e-2, 1e-1] {
            let z = SpacePoint::new(vec![zl]).unwrap();
            let v = spatial_difference_integral(&z, 1.0, Dim::D1, Mode::Continuous, &qd).unwrap();
            ratios.push(v / (zl * zl));
        }
        assert!((ratios[0] / ratios[1] - 1.0).abs() < 0.1, "{ratios:?}");
        assert!(ratios[1] > ratios[2] && ratios[2] > 0.5 * ratios[0], "{ratios:?}");
    }

    #[test]
    fn spatial_lattice_matches_direct_sum() {
        let qd = QuadratureSpec {
            node_count: 24,
            ..q()
        };
        let delta = 0.25;
        let z = SpacePoint::new(vec![0.5]).unwrap();
        let v =
            spatial_difference_integral(&z, 0.5, Dim::D1, Mode::Lattice { delta }, &qd).unwrap();
        // Independent route: integrate the site-summed squared difference.
        let spec = LatticeSpec::unbounded(delta, Dim::D1).unwrap();
        let o = LatticePoint::new(vec![0]);
        let site_sum = |s: f64| -> f64 {
            let mut acc = 0.0;
            for k in -90..=90i64 {
                let a =
                    lattice::btrw_density(s, &LatticePoint::new(vec![k]), &o, &spec, &qd).unwrap();
                let b =
                    lattice::btrw_density(s, &LatticePoint::new(vec![k + 2]), &o, &spec, &qd)
                        .unwrap();
                acc += (a - b) * (a - b);
            }
            acc
        };
        let direct = integrate_quartic_sub(site_sum, 0.5, delta * delta, 24);
        assert!((v - direct).abs() < 1e-6 * direct, "{v} vs {direct}");
    }

    #[test]
    fn dde_residual_kernel_initial_condition() {
        let spec = LatticeSpec::truncated(0.25, Dim::D1, 8.0).unwrap();
        let mut u0 = LatticeField::zeros(&spec).unwrap();
        u0.set(&[0], 1.0);
        let res = dde_residual(1.0, &u0, &spec, &q()).unwrap();
        assert!(res < 1e-6, "residual {res:e}");
    }

    #[test]
    fn dde_residual_constant_and_shift_invariance() {
        let spec = LatticeSpec::truncated(0.5, Dim::D1, 6.0).unwrap();
        let c = LatticeField::constant(&spec, 1.3).unwrap();
        let res = dde_residual(0.8, &c, &spec, &q()).unwrap();
        assert!(res < 1e-6, "residual {res:e}");
        // Adding a constant to compactly supported data changes nothing
        // that Δ sees, so the residual moves only by truncation leakage.
        let mut u0 = LatticeField::from_fn(&spec, |i| {
            if i[0].abs() <= 2 {
                (i[0] as f64 * 0.7).cos()
            } else {
                0.0
            }
        })
        .unwrap();
        let r1 = dde_residual(0.8, &u0, &spec, &q()).unwrap();
        for v in u0.values_mut() {
            *v += 2.0;
        }
        let r2 = dde_residual(0.8, &u0, &spec, &q()).unwrap();
        assert!((r1 - r2).abs() < 1e-6, "{r1} vs {r2}");
    }

    #[test]
    fn continuous_kernel_residual_d1() {
        let res = btbm_kernel_pde_residual(1.0, 0.7, &q()).unwrap();
        assert!(res < 1e-8, "{res:e}");
        assert!(btbm_kernel_pde_residual(1.0, 0.0, &q()).is_err());
    }

    #[test]
    fn alpha_intervals() {
        assert!(AlphaChoice::new(Dim::D1, 1.0).is_ok());
        assert!(AlphaChoice::new(Dim::D2, 1.0).is_err());
        assert!(AlphaChoice::new(Dim::D3, 0.45).is_ok());
        assert!(AlphaChoice::new(Dim::D3, 0.5).is_err());
    }

    #[test]
    fn asymptotic_check_rejects_equal_points() {
        let x = SpacePoint::new(vec![0.0]).unwrap();
        let r = asymptotic_check(
            &[1.0],
            &[(x.clone(), x.clone())],
            &[0.2, 0.1],
            Dim::D1,
            &q(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn fit_loglog_recovers_power_law() {
        let xs: Vec<f64> = (1..=8).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(1.7)).collect();
        let fit = fit_loglog(&xs, &ys).unwrap();
        assert!((fit.slope - 1.7).abs() < 1e-12);
        assert!(fit.stderr < 1e-10);
    }
}
