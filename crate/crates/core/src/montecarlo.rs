//! Path sampling for the subordinated walk and 2-clock processes, empirical
//! density validation, and Hölder-exponent estimation from solution
//! ensembles.

use crate::error::{BtpError, Result};
use crate::estimates::{fit_loglog, SlopeFit};
use crate::kernels::Dim;
use crate::lattice::{LatticePoint, LatticeSpec};
use crate::solver::SolutionField;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;

/// Terminal sites of subordinated-walk samples.
#[derive(Debug, Clone)]
pub struct BtrwBatch {
    pub seed: u64,
    pub t: f64,
    pub spec: LatticeSpec,
    pub terminals: Vec<Vec<i64>>,
}

impl BtrwBatch {
    /// Empirical probability per terminal site.
    pub fn empirical_pmf(&self) -> HashMap<Vec<i64>, f64> {
        let mut counts: HashMap<Vec<i64>, usize> = HashMap::new();
        for s in &self.terminals {
            *counts.entry(s.clone()).or_insert(0) += 1;
        }
        let n = self.terminals.len() as f64;
        counts
            .into_iter()
            .map(|(k, c)| (k, c as f64 / n))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.terminals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terminals.is_empty()
    }
}

fn replicate_rng(seed: u64, replicate: u64) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&0x6d6f_6e74_655f_7277_u64.to_le_bytes());
    let mut rng = ChaCha12Rng::from_seed(key);
    rng.set_stream(replicate);
    rng
}

/// Sample the walk run at the folded Gaussian clock: draw `|B_t| = √t·|Z|`,
/// then move each coordinate by a difference of two Poisson jump counts with
/// per-direction rate `1/(2δ²)` over the clock value.
pub fn sample_btrw(
    x: &LatticePoint,
    t: f64,
    spec: &LatticeSpec,
    n: usize,
    seed: u64,
) -> Result<BtrwBatch> {
    if t < 0.0 {
        return Err(BtpError::domain("sample_btrw requires t >= 0"));
    }
    if x.dim() != spec.dim.get() {
        return Err(BtpError::domain("start point does not live on this lattice"));
    }
    if n < 2 {
        return Err(BtpError::invalid("need at least two samples"));
    }
    let d2 = spec.delta * spec.delta;
    let start = x.index().to_vec();
    let terminals: Vec<Vec<i64>> = (0..n as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(seed, rep);
            let z: f64 = StandardNormal.sample(&mut rng);
            let clock = t.sqrt() * z.abs();
            let mean = clock / (2.0 * d2);
            let mut site = start.clone();
            if mean > 0.0 {
                let pois = Poisson::new(mean).expect("positive mean");
                for slot in site.iter_mut() {
                    let up: f64 = pois.sample(&mut rng);
                    let down: f64 = pois.sample(&mut rng);
                    *slot += up as i64 - down as i64;
                }
            }
            site
        })
        .collect();
    Ok(BtrwBatch {
        seed,
        t,
        spec: *spec,
        terminals,
    })
}

/// Clock samples `|B¹_u| + |B²_v|` of the 2-clock process, with the
/// conditional density estimator at the spatial origin: given the clock `T`,
/// the outer process density at the origin is `(2πT)^{-d/2}`, so averaging
/// that value is an exactly smoothed kernel density estimate.
#[derive(Debug, Clone)]
pub struct Bt2Batch {
    pub seed: u64,
    pub u: f64,
    pub v: f64,
    pub d: Dim,
    pub clocks: Vec<f64>,
}

impl Bt2Batch {
    /// Estimated density at the origin with standard error. Finite variance
    /// for `d = 1`; higher dimensions carry a heavy-tailed estimator and the
    /// reported stderr reflects that.
    pub fn density_at_origin(&self) -> (f64, f64) {
        let n = self.clocks.len() as f64;
        let df = self.d.get() as f64;
        let vals: Vec<f64> = self
            .clocks
            .iter()
            .map(|&t| (2.0 * PI * t).powf(-df / 2.0))
            .collect();
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    pub fn clock_moments(&self) -> (f64, f64) {
        let n = self.clocks.len() as f64;
        let m1 = self.clocks.iter().sum::<f64>() / n;
        let m2 = self.clocks.iter().map(|t| t * t).sum::<f64>() / n;
        (m1, m2)
    }
}

pub fn sample_btbm2(u: f64, v: f64, d: Dim, n: usize, seed: u64) -> Result<Bt2Batch> {
    if !(u > 0.0 && v > 0.0) {
        return Err(BtpError::domain("sample_btbm2 requires u, v > 0"));
    }
    if n < 2 {
        return Err(BtpError::invalid("need at least two samples"));
    }
    let clocks: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(seed ^ 0x3221, rep);
            let z1: f64 = StandardNormal.sample(&mut rng);
            let z2: f64 = StandardNormal.sample(&mut rng);
            u.sqrt() * z1.abs() + v.sqrt() * z2.abs()
        })
        .collect();
    Ok(Bt2Batch {
        seed,
        u,
        v,
        d,
        clocks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HolderAxis {
    Time,
    Space,
}

/// Moment-regression estimate of a local Hölder exponent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HolderReport {
    pub axis: HolderAxis,
    pub q: u32,
    /// Physical lags (time units or space units).
    pub lags: Vec<f64>,
    pub log_moments: Vec<f64>,
    /// Relative standard error of each moment across replicates.
    pub stderrs: Vec<f64>,
    pub fit: SlopeFit,
    /// `(4−d)q/4` on the time axis, `2qα_d` on the space axis.
    pub reference: f64,
}

/// Sites at least half a truncation radius away from the boundary, where the
/// infinite-lattice moment statements are not polluted by truncation.
fn interior_sites(spec: &LatticeSpec) -> Result<Vec<usize>> {
    let l = spec
        .trunc_radius
        .ok_or_else(|| BtpError::invalid("ensemble statistics need a truncated lattice"))?;
    let margin = l / 2.0 + 1e-9;
    Ok(spec
        .sites()?
        .iter()
        .enumerate()
        .filter(|(_, p)| p.coords(spec).iter().all(|c| c.abs() <= margin))
        .map(|(i, _)| i)
        .collect())
}

fn ensure_ensemble(fields: &[SolutionField], min: usize) -> Result<()> {
    if fields.len() < min {
        return Err(BtpError::invalid(format!(
            "need at least {min} replicates, got {}",
            fields.len()
        )));
    }
    let spec = fields[0].spec();
    let times = fields[0].times();
    for f in fields {
        if !f.spec().same_geometry(spec) || f.times() != times {
            return Err(BtpError::invalid("replicates must share grid and lattice"));
        }
    }
    Ok(())
}

/// Fit `E|ΔŨ_R|^{2q}` against the lag on log-log axes. The deterministic
/// part is subtracted exactly (it is computable), so the moments follow the
/// stochastic-part difference estimates.
pub fn holder_fit(
    fields: &[SolutionField],
    axis: HolderAxis,
    q: u32,
    lag_steps: &[usize],
) -> Result<HolderReport> {
    ensure_ensemble(fields, 200)?;
    if q < 1 {
        return Err(BtpError::invalid("moment order q must be at least 1"));
    }
    if lag_steps.len() < 3 || lag_steps.windows(2).any(|w| w[1] <= w[0]) || lag_steps[0] == 0 {
        return Err(BtpError::invalid("need at least 3 strictly increasing lags"));
    }
    let span = lag_steps[lag_steps.len() - 1] as f64 / lag_steps[0] as f64;
    if span < 10f64.powf(1.5) {
        return Err(BtpError::invalid("lag grid must span at least 1.5 decades"));
    }
    let any_random = fields.iter().take(8).any(|f| {
        (0..f.times().len()).any(|j| (0..f.site_count()).any(|x| f.random_part(j, x) != 0.0))
    });
    if !any_random {
        return Err(BtpError::domain(
            "ensemble carries no stochastic component; Hölder moments are degenerate",
        ));
    }
    let spec = *fields[0].spec();
    let times = fields[0].times().to_vec();
    let jn = times.len();
    let dt = times[1] - times[0];
    let interior = interior_sites(&spec)?;
    let power = 2 * q as i32;

    let mut lags = Vec::with_capacity(lag_steps.len());
    let mut moments = Vec::with_capacity(lag_steps.len());
    let mut stderrs = Vec::with_capacity(lag_steps.len());
    for &lag in lag_steps {
        let (physical, per_rep): (f64, Vec<f64>) = match axis {
            HolderAxis::Time => {
                // Base points in the later half of the horizon, so the moment
                // magnitudes are near their stationary scale.
                let j0 = jn / 2;
                if j0 + lag >= jn {
                    return Err(BtpError::invalid("time lag exceeds the base window"));
                }
                let bases: Vec<usize> = (j0..jn - lag).collect();
                let vals = fields
                    .par_iter()
                    .map(|f| {
                        let mut acc = 0.0;
                        for &j in &bases {
                            for &x in &interior {
                                let d = f.random_part(j + lag, x) - f.random_part(j, x);
                                acc += d.powi(power);
                            }
                        }
                        acc / (bases.len() * interior.len()) as f64
                    })
                    .collect();
                (lag as f64 * dt, vals)
            }
            HolderAxis::Space => {
                let j = jn - 1;
                let sites = spec.sites()?;
                let index_of: HashMap<&[i64], usize> = sites
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (p.index(), i))
                    .collect();
                let pairs: Vec<(usize, usize)> = interior
                    .iter()
                    .filter_map(|&x| {
                        let mut idx = sites[x].index().to_vec();
                        idx[0] += lag as i64;
                        index_of.get(idx.as_slice()).map(|&y| (x, y))
                    })
                    .collect();
                if pairs.is_empty() {
                    return Err(BtpError::invalid("space lag exceeds the block"));
                }
                let vals = fields
                    .par_iter()
                    .map(|f| {
                        let mut acc = 0.0;
                        for &(x, y) in &pairs {
                            let d = f.random_part(j, y) - f.random_part(j, x);
                            acc += d.powi(power);
                        }
                        acc / pairs.len() as f64
                    })
                    .collect();
                (lag as f64 * spec.delta, vals)
            }
        };
        let n = per_rep.len() as f64;
        let mean = per_rep.iter().sum::<f64>() / n;
        let var = per_rep.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        if !(mean > 0.0) {
            return Err(BtpError::domain("degenerate moment at some lag"));
        }
        lags.push(physical);
        moments.push(mean);
        stderrs.push((var / n).sqrt() / mean);
    }
    let fit = fit_loglog(&lags, &moments)?;
    let d = spec.dim.get() as f64;
    let reference = match axis {
        HolderAxis::Time => (4.0 - d) * q as f64 / 4.0,
        HolderAxis::Space => {
            // Supremum admissible spatial exponent: α₁ = 1, α₂ → 1, α₃ → 1/2.
            let alpha = if spec.dim.get() <= 2 { 1.0 } else { 0.5 };
            2.0 * q as f64 * alpha
        }
    };
    Ok(HolderReport {
        axis,
        q,
        lags,
        log_moments: moments.iter().map(|m| m.ln()).collect(),
        stderrs,
        fit,
        reference,
    })
}

/// Empirical `M_q(t) = sup_x Ê|Ũ(t,x)|^{2q}` over the interior, with a
/// normal-theory band at the maximizing site and a super-exponential flag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentSeries {
    pub q: u32,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub super_exponential: bool,
}

pub fn moment_tracker(fields: &[SolutionField], q: u32) -> Result<MomentSeries> {
    ensure_ensemble(fields, 100)?;
    let spec = *fields[0].spec();
    let times = fields[0].times().to_vec();
    let interior = interior_sites(&spec)?;
    let n = fields.len() as f64;
    let power = 2 * q as i32;
    let mut values = Vec::with_capacity(times.len());
    let mut stderr = Vec::with_capacity(times.len());
    for j in 0..times.len() {
        let mut best = f64::MIN;
        let mut best_se = 0.0;
        for &x in &interior {
            let samples: Vec<f64> = fields.iter().map(|f| f.value(j, x).powi(power)).collect();
            let mean = samples.iter().sum::<f64>() / n;
            if mean > best {
                let var =
                    samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
                best = mean;
                best_se = (var / n).sqrt();
            }
        }
        values.push(best);
        stderr.push(best_se);
    }
    // Exponential-envelope check: fit ln M linearly in t over the first half
    // and flag if the terminal value beats the extrapolation by more than 2x.
    let half = times.len() / 2;
    let super_exponential = if half >= 3 && values[..half].iter().all(|&v| v > 0.0) {
        let n_fit = half as f64;
        let mt: f64 = times[..half].iter().sum::<f64>() / n_fit;
        let mv: f64 = values[..half].iter().map(|v| v.ln()).sum::<f64>() / n_fit;
        let sxx: f64 = times[..half].iter().map(|t| (t - mt) * (t - mt)).sum();
        let sxy: f64 = times[..half]
            .iter()
            .zip(&values[..half])
            .map(|(t, v)| (t - mt) * (v.ln() - mv))
            .sum();
        if sxx > 0.0 {
            let rate = sxy / sxx;
            let icept = mv - rate * mt;
            let predicted = (icept + rate * times.last().unwrap()).exp();
            *values.last().unwrap() > 2.0 * predicted
        } else {
            false
        }
    } else {
        false
    };
    Ok(MomentSeries {
        q,
        times,
        values,
        stderr,
        super_exponential,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{btrw_density, LatticeField};
    use crate::quad::QuadratureSpec;
    use crate::solver::{DiffusionSpec, NoiseSystem, PicardContext};

    #[test]
    fn btrw_samples_at_time_zero_stay_put() {
        let spec = LatticeSpec::unbounded(0.25, Dim::D1).unwrap();
        let x = LatticePoint::new(vec![3]);
        let batch = sample_btrw(&x, 0.0, &spec, 100, 1).unwrap();
        assert!(batch.terminals.iter().all(|s| s == &vec![3]));
        assert!(sample_btrw(&x, -1.0, &spec, 100, 1).is_err());
    }

    #[test]
    fn btrw_sampling_deterministic_and_symmetric() {
        let spec = LatticeSpec::unbounded(0.25, Dim::D1).unwrap();
        let x = LatticePoint::new(vec![0]);
        let a = sample_btrw(&x, 1.0, &spec, 20_000, 9).unwrap();
        let b = sample_btrw(&x, 1.0, &spec, 20_000, 9).unwrap();
        assert_eq!(a.terminals, b.terminals);
        let mean: f64 = a.terminals.iter().map(|s| s[0] as f64).sum::<f64>() / a.len() as f64;
        let var: f64 =
            a.terminals.iter().map(|s| (s[0] as f64).powi(2)).sum::<f64>() / a.len() as f64;
        let se = (var / a.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn btrw_pmf_matches_quadrature() {
        let spec = LatticeSpec::unbounded(0.25, Dim::D1).unwrap();
        let origin = LatticePoint::new(vec![0]);
        let q = QuadratureSpec::default();
        let n = 200_000;
        let batch = sample_btrw(&origin, 1.0, &spec, n, 4).unwrap();
        let pmf = batch.empirical_pmf();
        for k in -6..=6i64 {
            let want = btrw_density(1.0, &LatticePoint::new(vec![k]), &origin, &spec, &q).unwrap();
            let got = pmf.get(&vec![k]).copied().unwrap_or(0.0);
            let se = (want * (1.0 - want) / n as f64).sqrt();
            assert!(
                (got - want).abs() < 4.0 * se + 1e-9,
                "k={k}: got {got}, want {want}, se {se}"
            );
        }
    }

    #[test]
    fn bt2_density_estimator_matches_quadrature_d1() {
        let q = QuadratureSpec::default();
        let want = crate::kernels::btbm2_density(1.0, 2.0, Dim::D1, &q).unwrap();
        let batch = sample_btbm2(1.0, 2.0, Dim::D1, 400_000, 11).unwrap();
        let (got, se) = batch.density_at_origin();
        assert!((got - want).abs() < 3.0 * se, "got {got}±{se}, want {want}");
        // Swapping the clock arguments leaves the law unchanged.
        let swapped = sample_btbm2(2.0, 1.0, Dim::D1, 400_000, 12).unwrap();
        let (m1a, m2a) = batch.clock_moments();
        let (m1b, m2b) = swapped.clock_moments();
        assert!((m1a - m1b).abs() < 0.01 && (m2a - m2b).abs() < 0.03);
    }

    fn additive_ensemble(n: usize) -> Vec<SolutionField> {
        let spec = LatticeSpec::truncated(0.25, Dim::D1, 2.0).unwrap();
        let u0 = LatticeField::constant(&spec, 0.0).unwrap();
        let noise = NoiseSystem::new(5, 1.0, 256).unwrap();
        let q = QuadratureSpec::default();
        let ctx = PicardContext::prepare(&u0, &spec, 1.0, 64, &noise, &q).unwrap();
        let a = DiffusionSpec::additive();
        crate::solver::run_replicates(n, |rep| ctx.run(&a, &noise, rep, 10, 1e-9).map(|(f, _)| f))
            .unwrap()
    }

    #[test]
    fn holder_fit_validates_inputs() {
        let fields = additive_ensemble(200);
        assert!(holder_fit(&fields, HolderAxis::Time, 1, &[1, 2]).is_err());
        assert!(holder_fit(&fields, HolderAxis::Time, 1, &[2, 4, 8]).is_err());
        let spec = LatticeSpec::truncated(0.25, Dim::D1, 2.0).unwrap();
        let u0 = LatticeField::constant(&spec, 1.0).unwrap();
        let noise = NoiseSystem::new(5, 1.0, 256).unwrap();
        let q = QuadratureSpec::default();
        let ctx = PicardContext::prepare(&u0, &spec, 1.0, 64, &noise, &q).unwrap();
        let det: Vec<SolutionField> = crate::solver::run_replicates(200, |rep| {
            ctx.run(&DiffusionSpec::zero(), &noise, rep, 10, 1e-9)
                .map(|(f, _)| f)
        })
        .unwrap();
        assert!(matches!(
            holder_fit(&det, HolderAxis::Time, 1, &[1, 4, 40]),
            Err(BtpError::Domain(_))
        ));
    }

    #[test]
    fn holder_time_slope_additive_smoke() {
        // Coarse version of the regularity fit: d = 1, additive noise, the
        // temporal moment slope sits near 3/4.
        let fields = additive_ensemble(240);
        let report = holder_fit(&fields, HolderAxis::Time, 1, &[1, 2, 4, 8, 16, 32]).unwrap();
        assert!((report.reference - 0.75).abs() < 1e-12);
        assert!(
            (report.fit.slope - 0.75).abs() < 0.15,
            "slope {} ± {}",
            report.fit.slope,
            report.fit.stderr
        );
    }

    #[test]
    fn moment_tracker_constant_data() {
        let spec = LatticeSpec::truncated(0.25, Dim::D1, 2.0).unwrap();
        let u0 = LatticeField::constant(&spec, 2.0).unwrap();
        let noise = NoiseSystem::new(5, 0.5, 128).unwrap();
        let q = QuadratureSpec::default();
        let ctx = PicardContext::prepare(&u0, &spec, 0.5, 32, &noise, &q).unwrap();
        let fields: Vec<SolutionField> = crate::solver::run_replicates(120, |rep| {
            ctx.run(&DiffusionSpec::zero(), &noise, rep, 10, 1e-9)
                .map(|(f, _)| f)
        })
        .unwrap();
        let series = moment_tracker(&fields, 1).unwrap();
        // M₁(0) = c²; later values sag only by boundary leakage.
        assert!((series.values[0] - 4.0).abs() < 1e-12);
        assert!(series.values.iter().all(|&v| v > 3.0 && v <= 4.0 + 1e-9));
        assert!(!series.super_exponential);
    }
}
