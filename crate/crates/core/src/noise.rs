//! Counter-based sampling of the scalar Wiener process that drives every
//! grid point.
//!
//! The increment with index `k` on path `pathId` is a pure function of
//! `(baseSeed, pathId, k)`: a ChaCha12 block keyed by `baseSeed`, with the
//! path id as stream and `k` as block position, mapped through Box–Muller.
//! Results never depend on generation order or worker scheduling.
//!
//! Paths meant for refinement studies are generated at a finest level and
//! every coarser level is defined as block sums of it, so all levels see the
//! same Brownian path.

use std::f64::consts::TAU;
use std::io::Write;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

/// Key domain for the driving noise.
const NOISE_DOMAIN: u64 = 0x6e6f_6973_655f_5700;

/// ChaCha12 generator keyed by `(base_seed, domain)` on stream `path_id`.
pub fn keyed_rng(base_seed: u64, domain: u64, path_id: u64) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&base_seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    let mut rng = ChaCha12Rng::from_seed(key);
    rng.set_stream(path_id);
    rng
}

#[inline]
fn open_unit(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draw from two 64-bit words (cosine branch of Box–Muller).
#[inline]
pub(crate) fn box_muller(a: u64, b: u64) -> f64 {
    let u1 = open_unit(a);
    let u2 = open_unit(b);
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

/// Standard normals `z_k` for `k in start..start+count` on one stream.
fn standard_normals(base_seed: u64, path_id: u64, start: u64, count: usize) -> Vec<f64> {
    let mut rng = keyed_rng(base_seed, NOISE_DOMAIN, path_id);
    // two u64 words = four 32-bit words per draw
    rng.set_word_pos(start as u128 * 4);
    (0..count)
        .map(|_| {
            let a = rng.next_u64();
            let b = rng.next_u64();
            box_muller(a, b)
        })
        .collect()
}

/// The `k`-th standard normal of a stream, computed in isolation.
pub fn standard_normal_at(base_seed: u64, path_id: u64, k: u64) -> f64 {
    standard_normals(base_seed, path_id, k, 1)[0]
}

/// Brownian increments along one sample path.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePath {
    dt: f64,
    increments: Vec<f64>,
    base_seed: u64,
    path_id: u64,
    /// Finest-level increments; `increments` are block sums of `block` of them.
    fine: Vec<f64>,
    block: usize,
}

/// Increments of a single path at step `dt`, with no refinement headroom.
pub fn sample_increments(base_seed: u64, path_id: u64, steps: usize, dt: f64) -> Result<NoisePath> {
    NoisePath::sample(base_seed, path_id, steps, dt, 0)
}

/// Splits a path into `factor` times finer increments. Block sums of the
/// result reproduce `path` exactly.
pub fn refine(path: &NoisePath, factor: usize) -> Result<NoisePath> {
    path.refine(factor)
}

impl NoisePath {
    /// Samples `steps` increments of size `dt`, generated from a finest level
    /// with step `dt / 2^max_refine_level`.
    pub fn sample(base_seed: u64, path_id: u64, steps: usize, dt: f64, max_refine_level: u32) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("steps must be ≥ 1".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive (got {dt})")));
        }
        if max_refine_level > 20 {
            return Err(Error::InvalidArgument("maxRefineLevel must be ≤ 20".into()));
        }
        let block = 1usize << max_refine_level;
        let fine_dt = dt / block as f64;
        let scale = fine_dt.sqrt();
        let fine: Vec<f64> = standard_normals(base_seed, path_id, 0, steps * block)
            .into_iter()
            .map(|z| z * scale)
            .collect();
        Ok(Self::from_fine(base_seed, path_id, fine, fine_dt, block))
    }

    fn from_fine(base_seed: u64, path_id: u64, fine: Vec<f64>, fine_dt: f64, block: usize) -> Self {
        let increments = fine.chunks(block).map(|c| c.iter().sum()).collect();
        Self { dt: fine_dt * block as f64, increments, base_seed, path_id, fine, block }
    }

    /// A deterministic path with all increments zero (noise switched off).
    pub fn zero(steps: usize, dt: f64) -> Self {
        Self { dt, increments: vec![0.0; steps], base_seed: 0, path_id: 0, fine: vec![0.0; steps], block: 1 }
    }

    pub fn refine(&self, factor: usize) -> Result<Self> {
        if factor < 2 {
            return Err(Error::InvalidArgument(format!("refinement factor must be ≥ 2 (got {factor})")));
        }
        if !self.block.is_multiple_of(factor) {
            return Err(Error::InvalidArgument(format!(
                "cannot refine by {factor}: only {} finer levels were generated",
                self.block
            )));
        }
        let fine_dt = self.dt / self.block as f64;
        Ok(Self::from_fine(self.base_seed, self.path_id, self.fine.clone(), fine_dt, self.block / factor))
    }

    /// Remaining refinement headroom as a factor.
    pub fn headroom(&self) -> usize {
        self.block
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn steps(&self) -> usize {
        self.increments.len()
    }

    pub fn seed_info(&self) -> (u64, u64) {
        (self.base_seed, self.path_id)
    }

    /// `W(t_k)` for `k = 0..=steps`, with `W(0) = 0`.
    pub fn wiener(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.increments.len() + 1);
        let mut acc = 0.0;
        w.push(acc);
        for dw in &self.increments {
            acc += dw;
            w.push(acc);
        }
        w
    }

    /// CSV dump with columns `k,dW,W`; `k` runs over increments, `W` is the
    /// value after the increment.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "k,dW,W")?;
        let mut acc = 0.0;
        for (k, dw) in self.increments.iter().enumerate() {
            acc += dw;
            writeln!(out, "{k},{dw:.16e},{acc:.16e}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(x: &[f64]) -> (f64, f64) {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn increment_moments() {
        let p = sample_increments(7, 3, 1_000_000, 0.01).unwrap();
        let (m, v) = mean_var(p.increments());
        assert!(m.abs() <= 3.3e-4, "{m}");
        assert!((0.995 * 0.01..=1.005 * 0.01).contains(&v), "{v}");
    }

    #[test]
    fn deterministic_and_random_access() {
        let a = sample_increments(42, 5, 1000, 0.001).unwrap();
        let b = sample_increments(42, 5, 1000, 0.001).unwrap();
        assert_eq!(a, b);
        for k in [0u64, 17, 999] {
            let z = standard_normal_at(42, 5, k);
            assert_eq!((z * 0.001f64.sqrt()).to_bits(), a.increments()[k as usize].to_bits());
        }
        let c = sample_increments(43, 5, 1000, 0.001).unwrap();
        assert_ne!(a.increments(), c.increments());
    }

    #[test]
    fn refinement_is_consistent() {
        let coarse = NoisePath::sample(1, 2, 100, 0.01, 2).unwrap();
        let half = coarse.refine(2).unwrap();
        assert_eq!(half.steps(), 200);
        assert!((half.dt() - 0.005).abs() < 1e-18);
        for (c, pair) in coarse.increments().iter().zip(half.increments().chunks(2)) {
            assert!((c - (pair[0] + pair[1])).abs() <= 1e-15);
        }
        let twice = half.refine(2).unwrap();
        let once = coarse.refine(4).unwrap();
        assert_eq!(twice.increments(), once.increments());
        let wt = |p: &NoisePath| *p.wiener().last().unwrap();
        assert!((wt(&coarse) - wt(&once)).abs() < 1e-13);
        assert!((wt(&coarse) - wt(&half)).abs() < 1e-13);
        assert!(once.refine(2).is_err());
        assert!(coarse.refine(1).is_err());
    }

    #[test]
    fn wiener_starts_at_zero() {
        let p = sample_increments(0, 0, 10, 0.1).unwrap();
        let w = p.wiener();
        assert_eq!(w[0], 0.0);
        assert_eq!(w.len(), 11);
        assert!(sample_increments(0, 0, 0, 0.1).is_err());
        assert!(sample_increments(0, 0, 5, 0.0).is_err());
    }

    #[test]
    fn distinct_paths_are_uncorrelated() {
        let a = sample_increments(9, 0, 100_000, 1.0).unwrap();
        let b = sample_increments(9, 1, 100_000, 1.0).unwrap();
        let (ma, va) = mean_var(a.increments());
        let (mb, vb) = mean_var(b.increments());
        let cov = a.increments().iter().zip(b.increments()).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>()
            / (a.steps() as f64 - 1.0);
        assert!((cov / (va * vb).sqrt()).abs() < 0.01);
    }

    #[test]
    fn brownian_scaling_at_unit_time() {
        let finals: Vec<f64> = (0..1000)
            .map(|id| *sample_increments(11, id, 100, 0.01).unwrap().wiener().last().unwrap())
            .collect();
        let (_, v) = mean_var(&finals);
        assert!((0.87..=1.13).contains(&v), "{v}");
    }

    #[test]
    fn csv_dump_layout() {
        let p = sample_increments(1, 1, 3, 0.25).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "k,dW,W");
        assert_eq!(lines.len(), 4);
        let last: Vec<f64> = lines[3].split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(last[2], *p.wiener().last().unwrap());
    }
}
