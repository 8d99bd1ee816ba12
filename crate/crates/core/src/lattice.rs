//! The anisotropic frequency lattice and its block masks.
//!
//! At scale `R = 2^(n b)` with refinement `q`, axis `i` (1-based) has spacing
//! `h_i = 2^(-b i) / q`, so the spatial torus has period `q 2^(b i)` along it,
//! i.e. `q` dual boxes of the finest blocks. A fine block is the slab
//! `t0 <= ξ_1 < t0 + δ` intersected with `|λ_i| <= δ^i` for `i >= 2`, where `λ`
//! are the frame coordinates at `t0`. Coarse blocks are unions of fine slabs.

use serde::Serialize;

use crate::geometry::{moment_curve, moment_derivative};
use crate::{admissible_exponent, factorial, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Lattice {
    pub n: usize,
    pub b: u32,
    pub q: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct LatticeBlock {
    /// Slab index at width `2^-width_exp`.
    pub index: usize,
    pub width_exp: u32,
    /// Flattened `n`-tuples of lattice indices.
    pub points: Vec<i64>,
}

impl LatticeBlock {
    pub fn len(&self, n: usize) -> usize {
        self.points.len() / n
    }

    pub fn point(&self, n: usize, j: usize) -> &[i64] {
        &self.points[j * n..(j + 1) * n]
    }

    /// Per-axis `(min, max)` of the lattice indices.
    pub fn bounds(&self, n: usize) -> Vec<(i64, i64)> {
        let mut out = vec![(i64::MAX, i64::MIN); n];
        for p in self.points.chunks(n) {
            for (o, &v) in out.iter_mut().zip(p) {
                o.0 = o.0.min(v);
                o.1 = o.1.max(v);
            }
        }
        out
    }
}

impl Lattice {
    pub fn new(n: usize, r: u64, q: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::Invalid("dimension must be positive".into()));
        }
        if q == 0 || !q.is_power_of_two() {
            return Err(Error::Invalid(format!("lattice refinement q = {q} must be a power of two")));
        }
        let b = admissible_exponent(n, r)
            .ok_or_else(|| Error::Scale(format!("R = {r} is not a power of 2^{n}")))?;
        Ok(Lattice { n, b, q })
    }

    pub fn r(&self) -> u64 {
        1u64 << (self.n as u32 * self.b)
    }

    pub fn delta(&self) -> f64 {
        (-(self.b as f64)).exp2()
    }

    /// Spacing along 0-based axis `i`.
    pub fn spacing(&self, i: usize) -> f64 {
        (-((self.b as usize * (i + 1)) as f64)).exp2() / self.q as f64
    }

    pub fn period(&self, i: usize) -> f64 {
        1.0 / self.spacing(i)
    }

    pub fn freq(&self, k: &[i64]) -> Vec<f64> {
        k.iter().enumerate().map(|(i, &v)| v as f64 * self.spacing(i)).collect()
    }

    /// Number of fine blocks, `R^(1/n)`.
    pub fn block_count(&self) -> usize {
        1usize << self.b
    }

    /// Lattice points of every fine block, in slab order.
    pub fn fine_blocks(&self) -> Vec<LatticeBlock> {
        (0..self.block_count()).map(|l| self.enumerate_block(l)).collect()
    }

    fn enumerate_block(&self, l: usize) -> LatticeBlock {
        let n = self.n;
        let delta = self.delta();
        let t0 = l as f64 * delta;
        let base = moment_curve(n, t0);
        let cols: Vec<Vec<f64>> = (1..=n).map(|i| moment_derivative(n, i, t0)).collect();
        let q = self.q as i64;
        let mut points = Vec::new();
        let mut cur = vec![0i64; n];
        let mut lam = vec![0.0f64; n];
        for k1 in (l as i64 * q)..((l as i64 + 1) * q) {
            cur[0] = k1;
            lam[0] = k1 as f64 * self.spacing(0) - t0;
            self.descend(1, &base, &cols, &mut cur, &mut lam, &mut points);
        }
        LatticeBlock { index: l, width_exp: self.b, points }
    }

    fn descend(&self, j: usize, base: &[f64], cols: &[Vec<f64>], cur: &mut [i64], lam: &mut [f64], out: &mut Vec<i64>) {
        if j == self.n {
            out.extend_from_slice(cur);
            return;
        }
        // row j of the frame: ξ_j = base_j + Σ_{i<j} λ_i col_i[j] + (j+1)! λ_j
        let known: f64 = base[j] + (0..j).map(|i| lam[i] * cols[i][j]).sum::<f64>();
        let fj = factorial(j + 1);
        let half = fj * self.delta().powi(j as i32 + 1);
        let h = self.spacing(j);
        let lo = ((known - half) / h - 1e-9).ceil() as i64;
        let hi = ((known + half) / h + 1e-9).floor() as i64;
        for kj in lo..=hi {
            cur[j] = kj;
            lam[j] = (kj as f64 * h - known) / fj;
            self.descend(j + 1, base, cols, cur, lam, out);
        }
    }

    /// Per-axis `(min, max)` over all blocks.
    pub fn bounds(&self, blocks: &[LatticeBlock]) -> Vec<(i64, i64)> {
        let mut out = vec![(i64::MAX, i64::MIN); self.n];
        for b in blocks {
            for (o, v) in out.iter_mut().zip(b.bounds(self.n)) {
                o.0 = o.0.min(v.0);
                o.1 = o.1.max(v.1);
            }
        }
        out
    }
}

/// Fine block indices grouped into slabs of width `2^-a`, `a <= b`.
pub fn group_indices(b: u32, a: u32) -> Result<Vec<Vec<usize>>> {
    if a > b {
        return Err(Error::Invalid(format!("coarse width 2^-{a} is finer than 2^-{b}")));
    }
    let per = 1usize << (b - a);
    Ok((0..1usize << a).map(|g| (g * per..(g + 1) * per).collect()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::partition_moment;

    #[test]
    fn blocks_are_disjoint_and_inside() {
        for (n, r, q) in [(2usize, 64u64, 2u32), (3, 64, 1), (2, 16, 4)] {
            let lat = Lattice::new(n, r, q).unwrap();
            let blocks = lat.fine_blocks();
            let geo = partition_moment(n, r).unwrap();
            let mut seen = std::collections::HashSet::new();
            for (lb, gb) in blocks.iter().zip(&geo) {
                assert!(lb.len(n) > 0);
                for p in lb.points.chunks(n) {
                    assert!(seen.insert(p.to_vec()));
                    assert!(gb.contains(&lat.freq(p)).unwrap());
                }
            }
        }
    }

    #[test]
    fn point_counts() {
        // q values of k_1, then 2 j! q + 1 values of k_j
        let lat = Lattice::new(2, 256, 2).unwrap();
        for b in lat.fine_blocks() {
            assert_eq!(b.len(2), 2 * 9);
        }
    }
}
