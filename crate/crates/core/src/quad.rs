//! Gauss–Legendre panel quadrature for the time-subordination integrals.
//!
//! All Brownian-time kernels reduce to integrals of a smooth-after-substitution
//! integrand against the folded Gaussian weight on `[0, ∞)`. After `s = √t·u`
//! the weight no longer depends on `t`, so a fixed cutoff in `u` works for
//! every `t`. Integrable power singularities at the origin are removed by the
//! further substitution `u = v²`; panels are geometrically refined toward zero
//! so boundary layers at scale `δ²/√t` (lattice kernels) or `|x−y|²/√t`
//! (Gaussian kernels) stay resolved.

use crate::error::{BtpError, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::{Mutex, OnceLock};

/// Discretization of the subordination integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Gauss–Legendre nodes per panel.
    pub node_count: usize,
    /// Upper limit in the substituted variable `u` (`s = √t·u`).
    pub tail_cutoff: f64,
    /// Relative tolerance: node doubling must move results by less than this.
    pub rel_tol: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            node_count: 40,
            tail_cutoff: 8.0,
            rel_tol: 1e-8,
        }
    }
}

impl QuadratureSpec {
    pub fn new(node_count: usize, tail_cutoff: f64, rel_tol: f64) -> Result<Self> {
        let q = QuadratureSpec {
            node_count,
            tail_cutoff,
            rel_tol,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if self.node_count < 4 {
            return Err(BtpError::invalid("node_count must be at least 4"));
        }
        if !(self.tail_cutoff > 0.0) || !self.tail_cutoff.is_finite() {
            return Err(BtpError::invalid("tail_cutoff must be positive and finite"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(BtpError::invalid("rel_tol must be positive"));
        }
        // Folded-Gaussian mass beyond the cutoff must be below rel_tol.
        let tail = libm::erfc(self.tail_cutoff / std::f64::consts::SQRT_2);
        if tail >= self.rel_tol {
            return Err(BtpError::invalid(format!(
                "tail_cutoff {} leaves Gaussian mass {:.3e} >= rel_tol {:.3e}",
                self.tail_cutoff, tail, self.rel_tol
            )));
        }
        Ok(())
    }

    pub fn doubled(&self) -> Self {
        QuadratureSpec {
            node_count: self.node_count * 2,
            ..*self
        }
    }
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
///
/// Computed by Newton iteration on the Legendre recurrence and cached.
pub fn gauss_legendre(n: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static CACHE: OnceLock<Mutex<BTreeMap<usize, &'static (Vec<f64>, Vec<f64>)>>> =
        OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(BTreeMap::new()));
    let mut guard = cache.lock().unwrap();
    if let Some(rule) = guard.get(&n) {
        return rule;
    }
    let rule: &'static (Vec<f64>, Vec<f64>) = Box::leak(Box::new(compute_gauss_legendre(n)));
    guard.insert(n, rule);
    rule
}

fn compute_gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi-style initial guess, then Newton.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_and_deriv(n, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_and_deriv(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        let (_, d) = legendre_and_deriv(n, 0.0);
        nodes[n / 2] = 0.0;
        weights[n / 2] = 2.0 / (d * d);
    }
    (nodes, weights)
}

fn legendre_and_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Integrate `f` over `[a, b]` with one `n`-point Gauss–Legendre rule.
pub fn integrate_gl<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let (nodes, weights) = gauss_legendre(n);
    let c = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(weights.iter()) {
        acc += w * f(mid + c * x);
    }
    acc * c
}

/// Integrate `f` over consecutive panels given by `edges`.
pub fn integrate_panels<F: Fn(f64) -> f64>(f: F, edges: &[f64], n: usize) -> f64 {
    let mut acc = 0.0;
    for pair in edges.windows(2) {
        acc += integrate_gl(&f, pair[0], pair[1], n);
    }
    acc
}

/// Panel edges `0, hi·2^{1-levels}, …, hi/2, hi`, geometrically refined at 0.
pub fn geometric_edges(hi: f64, levels: usize) -> Vec<f64> {
    let mut edges = Vec::with_capacity(levels + 1);
    edges.push(0.0);
    for m in (0..levels).rev() {
        edges.push(hi / (1u64 << m) as f64);
    }
    edges
}

/// Geometric panels from a problem-dependent inner scale `lo` up to `hi`.
///
/// The first panel is `[0, lo]`; edges then double until `hi`. Used when the
/// integrand has a boundary layer of known width.
pub fn scaled_edges(lo: f64, hi: f64) -> Vec<f64> {
    let lo = lo.clamp(hi * 1e-12, hi / 2.0);
    let mut edges = vec![0.0, lo];
    let mut e = lo;
    while e * 2.0 < hi {
        e *= 2.0;
        edges.push(e);
    }
    edges.push(hi);
    edges
}

/// `∫_0^{hi} f(u) du` with the substitution `u = v²` and geometric panels.
///
/// Removes `u^{-1/2}`-type endpoint singularities; `inner_scale` (in `u`) sets
/// the first panel so narrower features near 0 stay resolved.
pub fn integrate_sqrt_sub<F: Fn(f64) -> f64>(
    f: F,
    hi: f64,
    inner_scale: f64,
    n: usize,
) -> f64 {
    let vmax = hi.sqrt();
    let vlo = inner_scale.max(0.0).sqrt().min(vmax / 2.0);
    let edges = if vlo > 0.0 {
        scaled_edges(vlo, vmax)
    } else {
        geometric_edges(vmax, 7)
    };
    integrate_panels(|v| 2.0 * v * f(v * v), &edges, n)
}

/// Evaluate at `node_count` and `2·node_count`; error out if the two results
/// differ by more than `rel_tol` in relative terms.
pub fn converged<F: Fn(usize) -> f64>(eval: F, q: &QuadratureSpec) -> Result<f64> {
    let coarse = eval(q.node_count);
    let fine = eval(q.node_count * 2);
    let scale = fine.abs().max(1e-300);
    let achieved = (fine - coarse).abs() / scale;
    if achieved > q.rel_tol {
        return Err(BtpError::Convergence {
            achieved,
            required: q.rel_tol,
        });
    }
    Ok(fine)
}
