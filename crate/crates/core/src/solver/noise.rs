//! Seeded per-site Brownian family with the nesting rule across refining
//! lattices.
//!
//! Streams are keyed by the site's absolute coordinates (bit patterns), not
//! by lattice index, so a site shared by a coarse lattice and any dyadic
//! refinement reproduces the identical path by construction; sites that exist
//! only on the finer lattice simply never enter the coarse system's sums.
//! Time consistency works the same way: every solver grid must be a subgrid
//! of the master grid, and increments are sums of master increments, so
//! coarse and fine time discretizations see the same underlying path.

use crate::error::{BtpError, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic master-grid Brownian family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSystem {
    seed: u64,
    t_end: f64,
    master_steps: usize,
}

impl NoiseSystem {
    pub fn new(seed: u64, t_end: f64, master_steps: usize) -> Result<Self> {
        if !(t_end > 0.0) || master_steps == 0 {
            return Err(BtpError::invalid(
                "noise system needs t_end > 0 and at least one master step",
            ));
        }
        Ok(NoiseSystem {
            seed,
            t_end,
            master_steps,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn master_steps(&self) -> usize {
        self.master_steps
    }

    pub fn master_dt(&self) -> f64 {
        self.t_end / self.master_steps as f64
    }

    /// Master time grid, `0 = t_0 < … < t_M = t_end`.
    pub fn time_grid(&self) -> Vec<f64> {
        (0..=self.master_steps)
            .map(|k| self.t_end * k as f64 / self.master_steps as f64)
            .collect()
    }

    /// Index of `t` on the master grid; errors when `t` is off-grid.
    pub fn grid_index(&self, t: f64) -> Result<usize> {
        let pos = t / self.master_dt();
        let idx = pos.round() as i64;
        if idx < 0 || idx > self.master_steps as i64 || (pos - idx as f64).abs() > 1e-9 {
            return Err(BtpError::invalid(format!(
                "time {t} is not on the master noise grid (dt = {})",
                self.master_dt()
            )));
        }
        Ok(idx as usize)
    }

    fn stream_for(&self, coords: &[f64], replicate: u64) -> u64 {
        let mut h = splitmix(replicate ^ 0xA076_1D64_78BD_642F);
        for &c in coords {
            // Normalize -0.0 so the origin hashes identically everywhere.
            let bits = if c == 0.0 { 0u64 } else { c.to_bits() };
            h = splitmix(h ^ bits);
        }
        h
    }

    /// Cumulative path `W(t_k)`, `k = 0..=master_steps`, for the site at the
    /// given absolute coordinates.
    pub fn path(&self, coords: &[f64], replicate: u64) -> BrownianPath {
        let mut key = [0u8; 32];
        let mut s = self.seed;
        for chunk in key.chunks_mut(8) {
            s = splitmix(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        let mut rng = ChaCha12Rng::from_seed(key);
        rng.set_stream(self.stream_for(coords, replicate));
        let sqrt_dt = self.master_dt().sqrt();
        let mut w = Vec::with_capacity(self.master_steps + 1);
        let mut acc = 0.0;
        w.push(0.0);
        for _ in 0..self.master_steps {
            let z: f64 = StandardNormal.sample(&mut rng);
            acc += sqrt_dt * z;
            w.push(acc);
        }
        BrownianPath {
            w,
            dt: self.master_dt(),
        }
    }

    /// Per-interval increments of every site path over a solver grid given by
    /// master indices; result is `[interval][site]`.
    pub fn increments(
        &self,
        site_coords: &[Vec<f64>],
        replicate: u64,
        grid: &[usize],
    ) -> Result<Vec<Vec<f64>>> {
        if grid.len() < 2 || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(BtpError::invalid("solver grid must be strictly increasing"));
        }
        if *grid.last().unwrap() > self.master_steps {
            return Err(BtpError::invalid("solver grid exceeds the master grid"));
        }
        let paths: Vec<BrownianPath> = site_coords
            .iter()
            .map(|c| self.path(c, replicate))
            .collect();
        let mut out = Vec::with_capacity(grid.len() - 1);
        for pair in grid.windows(2) {
            out.push(
                paths
                    .iter()
                    .map(|p| p.increment(pair[0], pair[1]))
                    .collect(),
            );
        }
        Ok(out)
    }
}

/// One site's cumulative Brownian path on the master grid.
#[derive(Debug, Clone)]
pub struct BrownianPath {
    w: Vec<f64>,
    dt: f64,
}

impl BrownianPath {
    pub fn at(&self, idx: usize) -> f64 {
        self.w[idx]
    }

    pub fn increment(&self, i0: usize, i1: usize) -> f64 {
        self.w[i1] - self.w[i0]
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }
}
