//! Command-line surface: configuration documents, experiment drivers,
//! CSV/JSON persistence, and run manifests.
//!
//! Every command is deterministic given its config (the seed is part of it):
//! re-running an identical config reproduces byte-identical output files,
//! which the manifest digests make checkable. Exit codes: 0 success/pass,
//! 1 check failure, 2 usage or config error, 3 numerical non-convergence.

use crate::error::{BtpError, Result};
use crate::estimates::{self, AlphaChoice, EstimateReport};
use crate::kernels::{self, Dim, SpacePoint};
use crate::lattice::{self, LatticeField, LatticeSpec};
use crate::montecarlo::{self, HolderAxis};
use crate::quad::QuadratureSpec;
use crate::solver::{self, DiffusionSpec, NoiseSystem, PicardContext, SolutionField};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatticeConfig {
    pub delta: f64,
    pub trunc_radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeConfig {
    pub t_end: f64,
    pub steps: usize,
    /// Master noise grid resolution; defaults to a multiple of `steps`.
    #[serde(default)]
    pub master_steps: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiffusionConfig {
    /// One of `zero`, `additive`, `linear`, `sine`.
    pub label: String,
    #[serde(default = "one")]
    pub param: f64,
}

fn one() -> f64 {
    1.0
}

impl DiffusionConfig {
    pub fn resolve(&self) -> Result<DiffusionSpec> {
        let spec = match self.label.as_str() {
            "zero" => DiffusionSpec::zero(),
            "one" | "additive" => DiffusionSpec::additive(),
            "linear" => DiffusionSpec::linear(self.param),
            "sine" => DiffusionSpec::bounded_sine(self.param),
            other => {
                return Err(BtpError::invalid(format!(
                    "unknown diffusion label `{other}` (expected zero|additive|linear|sine)"
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelTableConfig {
    /// `btbm` or `btrw`.
    pub kind: String,
    pub t_grid: Vec<f64>,
    /// Offsets along the first axis (other coordinates zero).
    pub x_grid: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveConfig {
    /// `picard`, `euler`, `sweep`, `psdde`, or `spde`.
    pub solver: String,
    #[serde(default)]
    pub level: Option<u32>,
    #[serde(default)]
    pub tau_grid: Option<Vec<f64>>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_max_iter() -> usize {
    50
}

fn default_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HolderConfig {
    /// `time` or `space`.
    pub axis: String,
    #[serde(default = "one_u32")]
    pub q: u32,
    pub lags: Vec<usize>,
}

fn one_u32() -> u32 {
    1
}

/// One experiment, fully determined by this document plus the subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub command: Option<String>,
    pub dimension: usize,
    #[serde(default)]
    pub lattice: Option<LatticeConfig>,
    #[serde(default)]
    pub time: Option<TimeConfig>,
    #[serde(default)]
    pub quadrature: Option<QuadratureSpec>,
    #[serde(default)]
    pub diffusion: Option<DiffusionConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub kernel_table: Option<KernelTableConfig>,
    #[serde(default)]
    pub solve: Option<SolveConfig>,
    #[serde(default)]
    pub holder: Option<HolderConfig>,
}

fn default_replicates() -> usize {
    200
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        Dim::new(self.dimension)?;
        if let Some(q) = &self.quadrature {
            q.validate()?;
        }
        if let Some(d) = &self.diffusion {
            d.resolve()?;
        }
        Ok(())
    }

    fn dim(&self) -> Dim {
        Dim::new(self.dimension).expect("validated")
    }

    fn quadrature(&self) -> QuadratureSpec {
        self.quadrature.unwrap_or_default()
    }

    fn lattice_spec(&self) -> Result<LatticeSpec> {
        let l = self
            .lattice
            .as_ref()
            .ok_or_else(|| BtpError::invalid("config needs a `lattice` section"))?;
        LatticeSpec::truncated(l.delta, self.dim(), l.trunc_radius)
    }

    fn noise(&self) -> Result<(NoiseSystem, usize)> {
        let t = self
            .time
            .as_ref()
            .ok_or_else(|| BtpError::invalid("config needs a `time` section"))?;
        let master = t.master_steps.unwrap_or(t.steps * 16);
        if master % t.steps != 0 {
            return Err(BtpError::invalid(
                "master_steps must be a multiple of steps",
            ));
        }
        Ok((NoiseSystem::new(self.seed, t.t_end, master)?, t.steps))
    }

    fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex_digest(&bytes)
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
}

/// Written next to every command's outputs; identical configs reproduce
/// identical output digests (wall time varies, digests do not).
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub tool_version: String,
    pub wall_ms: u128,
    pub outputs: Vec<ManifestEntry>,
}

struct OutputSet {
    dir: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl OutputSet {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(OutputSet {
            dir: dir.to_path_buf(),
            entries: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let mut f = std::fs::File::create(&path)?;
        f.write_all(bytes)?;
        self.entries.push(ManifestEntry {
            file: name.to_string(),
            sha256: hex_digest(bytes),
        });
        Ok(path)
    }

    fn finish(self, config_digest: String, started: Instant) -> Result<()> {
        let manifest = RunManifest {
            config_sha256: config_digest,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_ms: started.elapsed().as_millis(),
            outputs: self.entries,
        };
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "btp",
    version,
    about = "Brownian-time kernels, lattice stochastic integral equations, and regularity checks"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration document (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap the worker count (results are independent of it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (default `BTP_OUT` or `./btp-out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tabulate kernel values over a (t, x) grid into CSV.
    KernelTable,
    /// Run the built-in kernel estimate checks and emit a JSON report.
    Verify {
        /// `l2`, `dde`, `temporal`, `spatial`, `asymptotic`, or `all`.
        #[arg(long, default_value = "all")]
        check: String,
        /// Spatial dimension for the dimension-dependent checks.
        #[arg(long, default_value_t = 1)]
        d: usize,
    },
    /// Solve a configured lattice equation over replicates.
    Solve,
    /// Estimate Hölder exponents from a solution ensemble.
    Holder,
}

/// Entry point used by the `btp` binary; returns the process exit code.
pub fn main_entry() -> i32 {
    let args: Vec<String> = std::env::args().collect();
    run(&args)
}

pub fn run<S: AsRef<str>>(args: &[S]) -> i32 {
    let cli = match Cli::try_parse_from(args.iter().map(|s| s.as_ref())) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Some(n) = cli
        .threads
        .or_else(|| std::env::var("BTP_THREADS").ok().and_then(|v| v.parse().ok()))
    {
        // Best effort: the global pool may already exist (e.g. under tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var("BTP_OUT").ok().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("btp-out"))
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| BtpError::invalid("this command requires --config PATH"))?;
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::KernelTable => cmd_kernel_table(&load_config(cli)?, &out_dir(cli)),
        Command::Verify { check, d } => {
            let q = cli
                .config
                .as_ref()
                .map(|p| ExperimentConfig::from_path(p).map(|c| c.quadrature()))
                .transpose()?
                .unwrap_or_default();
            cmd_verify(check, *d, &q, &out_dir(cli))
        }
        Command::Solve => cmd_solve(&load_config(cli)?, &out_dir(cli)),
        Command::Holder => cmd_holder(&load_config(cli)?, &out_dir(cli)),
    }
}

fn float(v: f64) -> String {
    // Shortest round-trip representation keeps files byte-reproducible.
    format!("{v}")
}

// ---------------------------------------------------------------------------
// kernel-table
// ---------------------------------------------------------------------------

fn cmd_kernel_table(cfg: &ExperimentConfig, out: &Path) -> Result<i32> {
    let started = Instant::now();
    let table_cfg = cfg
        .kernel_table
        .as_ref()
        .ok_or_else(|| BtpError::invalid("config needs a `kernel_table` section"))?;
    if table_cfg.t_grid.is_empty() || table_cfg.x_grid.is_empty() {
        return Err(BtpError::invalid("kernel table needs nonempty grids"));
    }
    let d = cfg.dim();
    let q = cfg.quadrature();
    let mut csv = String::new();
    csv.push('t');
    for i in 1..=d.get() {
        csv.push_str(&format!(",x{i}"));
    }
    csv.push_str(",kind,value\n");

    let origin = SpacePoint::origin(d);
    for &t in &table_cfg.t_grid {
        for &x in &table_cfg.x_grid {
            let mut coords = vec![0.0; d.get()];
            coords[0] = x;
            let point = SpacePoint::new(coords.clone())?;
            let (kind, value) = match table_cfg.kind.as_str() {
                "btbm" => ("btbm", kernels::btbm_density(t, &point, &origin, d, &q)?),
                "btrw" => {
                    let spec = cfg.lattice_spec().map(|s| LatticeSpec {
                        trunc_radius: None,
                        ..s
                    })?;
                    let value = lattice::btrw_density(
                        t,
                        &spec.round_down(&point),
                        &spec.round_down(&origin),
                        &spec,
                        &q,
                    )?;
                    ("btrw", value)
                }
                other => {
                    return Err(BtpError::invalid(format!(
                        "unknown kernel kind `{other}` (expected btbm|btrw)"
                    )))
                }
            };
            csv.push_str(&float(t));
            for c in &coords {
                csv.push(',');
                csv.push_str(&float(*c));
            }
            csv.push_str(&format!(",{kind},{}\n", float(value)));
        }
        // Normalization check row: total mass of the tabulated kernel at t.
        let mass = match table_cfg.kind.as_str() {
            "btbm" => btbm_mass(t, d, &q)?,
            _ => btrw_mass(t, cfg, &q)?,
        };
        csv.push_str(&float(t));
        for _ in 0..d.get() {
            csv.push_str(",0");
        }
        csv.push_str(&format!(",{}-mass,{}\n", table_cfg.kind, float(mass)));
    }

    let mut outputs = OutputSet::new(out)?;
    outputs.write("kernel_table.csv", csv.as_bytes())?;
    outputs.finish(cfg.digest(), started)?;
    Ok(0)
}

fn btbm_mass(t: f64, d: Dim, q: &QuadratureSpec) -> Result<f64> {
    let rmax = 8.0 * (q.tail_cutoff * t.sqrt()).sqrt();
    let surface = |r: f64| -> f64 {
        match d.get() {
            1 => 2.0,
            2 => 2.0 * std::f64::consts::PI * r,
            _ => 4.0 * std::f64::consts::PI * r * r,
        }
    };
    Ok(crate::quad::integrate_panels(
        |r| surface(r) * kernels::btbm_density_mass_kernel(t, r, d, q),
        &crate::quad::scaled_edges(1e-4 * rmax, rmax),
        q.node_count,
    ))
}

fn btrw_mass(t: f64, cfg: &ExperimentConfig, q: &QuadratureSpec) -> Result<f64> {
    let l = cfg
        .lattice
        .as_ref()
        .ok_or_else(|| BtpError::invalid("btrw tables need a `lattice` section"))?;
    let spec = LatticeSpec::unbounded(l.delta, cfg.dim())?;
    let band = lattice::bessel_band(t.sqrt() * q.tail_cutoff / (l.delta * l.delta));
    let table = lattice::BtrwKernel::build(t, &spec, band, q.tail_cutoff, q.node_count)?;
    Ok(table.total_mass())
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

fn cmd_verify(check: &str, d: usize, q: &QuadratureSpec, out: &Path) -> Result<i32> {
    let started = Instant::now();
    let dim = Dim::new(d)?;
    let mut reports: Vec<EstimateReport> = Vec::new();
    let run_all = check == "all";
    if run_all || check == "l2" {
        reports.push(estimates::standard_l2_report(dim, q)?);
    }
    if run_all || check == "dde" {
        reports.push(estimates::standard_dde_report(q)?);
    }
    if run_all || check == "temporal" {
        reports.push(estimates::standard_temporal_report(dim, q)?);
    }
    if run_all || check == "spatial" {
        let alpha = match d {
            1 => 1.0,
            2 => 0.75,
            _ => 0.45,
        };
        reports.push(estimates::standard_spatial_report(
            AlphaChoice::new(dim, alpha)?,
            &[0.5, 1.0, 2.0],
            q,
        )?);
    }
    if run_all || check == "asymptotic" {
        reports.push(estimates::standard_asymptotic_report(q)?);
    }
    if reports.is_empty() {
        return Err(BtpError::invalid(format!(
            "unknown check `{check}` (expected l2|dde|temporal|spatial|asymptotic|all)"
        )));
    }
    for r in &reports {
        println!(
            "{}: {}",
            r.quantity,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
    let all_pass = reports.iter().all(|r| r.pass);
    let mut outputs = OutputSet::new(out)?;
    outputs.write(
        &format!("verify_{check}_d{d}.json"),
        &serde_json::to_vec_pretty(&reports)?,
    )?;
    outputs.finish(hex_digest(format!("verify:{check}:{d}").as_bytes()), started)?;
    Ok(if all_pass { 0 } else { 1 })
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

fn bump_field(spec: &LatticeSpec) -> Result<LatticeField> {
    // Default initial data: a smooth bump supported inside the block.
    let l = spec.trunc_radius.unwrap_or(1.0);
    LatticeField::from_fn(spec, |idx| {
        let r2: f64 = idx
            .iter()
            .map(|&k| {
                let c = k as f64 * spec.delta / (0.5 * l);
                c * c
            })
            .sum();
        if r2 < 1.0 {
            (1.0 - r2).powi(2)
        } else {
            0.0
        }
    })
}

fn fields_csv(fields: &[SolutionField], spec: &LatticeSpec) -> Result<String> {
    let sites = spec.sites()?;
    let mut csv = String::from("t");
    for i in 1..=spec.dim.get() {
        csv.push_str(&format!(",x{i}"));
    }
    csv.push_str(",value,det_value,replicate\n");
    for f in fields {
        for (j, &t) in f.times().iter().enumerate() {
            for (s, site) in sites.iter().enumerate() {
                csv.push_str(&float(t));
                for c in site.coords(spec) {
                    csv.push(',');
                    csv.push_str(&float(c));
                }
                csv.push_str(&format!(
                    ",{},{},{}\n",
                    float(f.value(j, s)),
                    float(f.det_value(j, s)),
                    f.replicate_id()
                ));
            }
        }
    }
    Ok(csv)
}

#[derive(Serialize)]
struct SolveSummary {
    solver: String,
    replicates: usize,
    moment_q1: Option<montecarlo::MomentSeries>,
    picard_iterations: Option<Vec<usize>>,
    picard_final_residuals: Option<Vec<f64>>,
    psdde_diag_residual_mean: Option<f64>,
    psdde_diag_residual_stderr: Option<f64>,
}

fn cmd_solve(cfg: &ExperimentConfig, out: &Path) -> Result<i32> {
    let started = Instant::now();
    let solve_cfg = cfg
        .solve
        .as_ref()
        .ok_or_else(|| BtpError::invalid("config needs a `solve` section"))?;
    let spec = cfg.lattice_spec()?;
    let q = cfg.quadrature();
    let (noise, steps) = cfg.noise()?;
    let t_end = noise.t_end();
    let a = cfg
        .diffusion
        .as_ref()
        .map(|d| d.resolve())
        .transpose()?
        .unwrap_or_else(DiffusionSpec::additive);
    let u0 = bump_field(&spec)?;
    let n = cfg.replicates;

    let mut summary = SolveSummary {
        solver: solve_cfg.solver.clone(),
        replicates: n,
        moment_q1: None,
        picard_iterations: None,
        picard_final_residuals: None,
        psdde_diag_residual_mean: None,
        psdde_diag_residual_stderr: None,
    };

    let fields: Vec<SolutionField> = match solve_cfg.solver.as_str() {
        "picard" => {
            let ctx = PicardContext::prepare(&u0, &spec, t_end, steps, &noise, &q)?;
            let results: Vec<(SolutionField, Vec<f64>)> = solver::run_replicates(n, |rep| {
                ctx.run(&a, &noise, rep, solve_cfg.max_iter, solve_cfg.tol)
            })?;
            summary.picard_iterations = Some(results.iter().map(|(_, r)| r.len()).collect());
            summary.picard_final_residuals = Some(
                results
                    .iter()
                    .map(|(_, r)| r.last().copied().unwrap_or(f64::NAN))
                    .collect(),
            );
            results.into_iter().map(|(f, _)| f).collect()
        }
        "euler" => {
            let level = solve_cfg
                .level
                .ok_or_else(|| BtpError::invalid("euler solver needs `level`"))?;
            let ctx = solver::EulerContext::prepare(&u0, &spec, t_end, level, &noise, &q)?;
            solver::run_replicates(n, |rep| ctx.run(&a, &noise, rep))?
        }
        "sweep" => {
            let level = solve_cfg
                .level
                .ok_or_else(|| BtpError::invalid("sweep solver needs `level`"))?;
            let taus = solve_cfg
                .tau_grid
                .clone()
                .ok_or_else(|| BtpError::invalid("sweep solver needs `tau_grid`"))?;
            let ctx = solver::SweepContext::prepare(&u0, &spec, &taus, level, &noise, &q)?;
            solver::run_replicates(n, |rep| ctx.run(&a, &noise, rep))?
        }
        "psdde" => {
            let ctx = solver::PsddeContext::prepare(&u0, &spec, t_end, steps, &noise)?;
            let rctx =
                solver::PsddeResidualContext::prepare(&u0, &spec, t_end, steps, &noise, &q)?;
            let residuals: Vec<Vec<f64>> = solver::run_replicates(n, |rep| {
                let field = ctx.run(&a, &noise, rep)?;
                rctx.residual(&field, &a, &noise)
            })?;
            // Diagonal residual statistic across replicates and sites.
            let flat: Vec<f64> = residuals.iter().flatten().copied().collect();
            let m = flat.iter().map(|r| r * r).sum::<f64>() / flat.len() as f64;
            let rms = m.sqrt();
            let var = flat
                .iter()
                .map(|r| (r * r - m) * (r * r - m))
                .sum::<f64>()
                / (flat.len() as f64 - 1.0);
            summary.psdde_diag_residual_mean = Some(rms);
            summary.psdde_diag_residual_stderr =
                Some((var / flat.len() as f64).sqrt() / (2.0 * rms.max(1e-300)));
            Vec::new()
        }
        "spde" => {
            let ctx = solver::SpdeContext::prepare(&u0, &spec, t_end, steps, &noise)?;
            solver::run_replicates(n, |rep| ctx.run(&a, &noise, rep))?
        }
        other => {
            return Err(BtpError::invalid(format!(
                "unknown solver `{other}` (expected picard|euler|sweep|psdde|spde)"
            )))
        }
    };

    let mut outputs = OutputSet::new(out)?;
    if !fields.is_empty() {
        outputs.write("fields.csv", fields_csv(&fields, &spec)?.as_bytes())?;
        if fields.len() >= 100 {
            summary.moment_q1 = Some(montecarlo::moment_tracker(&fields, 1)?);
        }
    }
    outputs.write("summary.json", &serde_json::to_vec_pretty(&summary)?)?;
    outputs.finish(cfg.digest(), started)?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// holder
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct HolderVerdict {
    axis: HolderAxis,
    q: u32,
    slope: f64,
    slope_stderr: f64,
    /// Target of the moment-slope fit: `(4−d)q/4` (time) or `2qα_d` (space).
    moment_slope_reference: f64,
    /// Implied path-exponent bound `reference/(2q)`, e.g. `(4−d)/8` in time.
    path_exponent_bound: f64,
    pass: bool,
}

fn cmd_holder(cfg: &ExperimentConfig, out: &Path) -> Result<i32> {
    let started = Instant::now();
    let holder_cfg = cfg
        .holder
        .as_ref()
        .ok_or_else(|| BtpError::invalid("config needs a `holder` section"))?;
    let axis = match holder_cfg.axis.as_str() {
        "time" => HolderAxis::Time,
        "space" => HolderAxis::Space,
        other => {
            return Err(BtpError::invalid(format!(
                "unknown axis `{other}` (expected time|space)"
            )))
        }
    };
    if cfg.replicates == 0 {
        return Err(BtpError::invalid("holder needs a nonempty ensemble"));
    }
    let spec = cfg.lattice_spec()?;
    let q = cfg.quadrature();
    let (noise, steps) = cfg.noise()?;
    let a = cfg
        .diffusion
        .as_ref()
        .map(|d| d.resolve())
        .transpose()?
        .unwrap_or_else(DiffusionSpec::additive);
    let u0 = LatticeField::constant(&spec, 0.0)?;
    let ctx = PicardContext::prepare(&u0, &spec, noise.t_end(), steps, &noise, &q)?;
    let fields: Vec<SolutionField> = solver::run_replicates(cfg.replicates, |rep| {
        ctx.run(&a, &noise, rep, 50, 1e-6).map(|(f, _)| f)
    })?;
    let report = montecarlo::holder_fit(&fields, axis, holder_cfg.q, &holder_cfg.lags)?;

    let mut csv = String::from("lag,log_moment,stderr\n");
    for ((lag, lm), se) in report
        .lags
        .iter()
        .zip(&report.log_moments)
        .zip(&report.stderrs)
    {
        csv.push_str(&format!("{},{},{}\n", float(*lag), float(*lm), float(*se)));
    }

    let pass = match axis {
        HolderAxis::Time => {
            (report.fit.slope - report.reference).abs() < 0.08 + 2.0 * report.fit.stderr
        }
        HolderAxis::Space => report.fit.slope >= 0.9 * report.reference,
    };
    let verdict = HolderVerdict {
        axis,
        q: report.q,
        slope: report.fit.slope,
        slope_stderr: report.fit.stderr,
        moment_slope_reference: report.reference,
        path_exponent_bound: report.reference / (2.0 * report.q as f64),
        pass,
    };
    println!(
        "holder {:?} slope {:.4} ± {:.4} vs {} → {}",
        axis,
        report.fit.slope,
        report.fit.stderr,
        report.reference,
        if pass { "pass" } else { "FAIL" }
    );

    let mut outputs = OutputSet::new(out)?;
    outputs.write("holder.csv", csv.as_bytes())?;
    outputs.write("holder.json", &serde_json::to_vec_pretty(&verdict)?)?;
    outputs.write("holder_report.json", &serde_json::to_vec_pretty(&report)?)?;
    outputs.finish(cfg.digest(), started)?;
    Ok(if pass { 0 } else { 1 })
}
