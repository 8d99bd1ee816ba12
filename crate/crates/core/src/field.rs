//! Discrete fields on the periodic lattice.
//!
//! A field is a set of coefficients on the lattice points of each fine block.
//! Spatial samples are the inverse DFT of the coefficients placed on a grid
//! covering one period of the torus, so `f(x_a) = Σ c_k e(k·x_a)` exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::fft::{unflatten, wrap_index, NdFft};
use crate::geometry::{moment_derivative, MomentBlock};
use crate::lattice::{group_indices, Lattice, LatticeBlock};
use crate::weights::{omega_block, PeriodicBox};
use crate::{Error, Result, C64};

/// Sampling grid: one torus period per axis.
pub type Grid = PeriodicBox;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Profile {
    RandomPhase,
    Focusing,
    SingleBlock(usize),
    SparsePackets(usize),
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let num = |d: usize| -> Result<usize> {
            arg.map_or(Ok(d), |a| a.parse().map_err(|_| Error::Invalid(format!("bad profile argument in {s:?}"))))
        };
        match head {
            "random" | "random-phase" => Ok(Profile::RandomPhase),
            "focusing" => Ok(Profile::Focusing),
            "single" | "single-block" => Ok(Profile::SingleBlock(num(0)?)),
            "packets" | "sparse-packets" => Ok(Profile::SparsePackets(num(1)?)),
            _ => Err(Error::Invalid(format!("unknown profile {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiscreteField {
    pub lattice: Lattice,
    pub grid: Grid,
    pub blocks: Arc<Vec<LatticeBlock>>,
    /// Coefficients per fine block, aligned with `blocks[i].points`.
    pub coeffs: Vec<Vec<C64>>,
    /// Per-axis centre of the lattice span, used to unwrap DFT slots.
    center: Vec<i64>,
}

/// Grid with `oversample` times the lattice span per axis, rounded up to powers of two.
pub fn grid_for(lattice: &Lattice, blocks: &[LatticeBlock], oversample: usize) -> Grid {
    let bounds = lattice.bounds(blocks);
    let sides = bounds
        .iter()
        .map(|(lo, hi)| ((hi - lo + 1) as usize * oversample.max(1)).next_power_of_two())
        .collect();
    let lengths = (0..lattice.n).map(|i| lattice.period(i)).collect();
    Grid { lengths, sides }
}

impl DiscreteField {
    pub fn new(lattice: Lattice, grid: Grid, blocks: Arc<Vec<LatticeBlock>>, coeffs: Vec<Vec<C64>>) -> Result<Self> {
        let n = lattice.n;
        if grid.sides.len() != n || grid.lengths.len() != n {
            return Err(Error::Invalid("grid dimension does not match the lattice".into()));
        }
        if coeffs.len() != blocks.len() || coeffs.iter().zip(blocks.iter()).any(|(c, b)| c.len() != b.len(n)) {
            return Err(Error::Invalid("coefficient layout does not match the blocks".into()));
        }
        let bounds = lattice.bounds(&blocks);
        for (i, ((lo, hi), &s)) in bounds.iter().zip(&grid.sides).enumerate() {
            if !s.is_power_of_two() {
                return Err(Error::Invalid(format!("grid side {s} on axis {i} is not a power of two")));
            }
            if (hi - lo + 1) as usize > s {
                return Err(Error::Invalid(format!(
                    "Nyquist violation on axis {i}: lattice span {} exceeds {s} samples",
                    hi - lo + 1
                )));
            }
            if (grid.lengths[i] - lattice.period(i)).abs() > 1e-9 * lattice.period(i) {
                return Err(Error::Invalid(format!("grid length on axis {i} is not one torus period")));
            }
        }
        let center = bounds.iter().map(|(lo, hi)| (lo + hi).div_euclid(2)).collect();
        Ok(DiscreteField { lattice, grid, blocks, coeffs, center })
    }

    pub fn zeros(lattice: Lattice, grid: Grid, blocks: Arc<Vec<LatticeBlock>>) -> Result<Self> {
        let coeffs = blocks.iter().map(|b| vec![C64::new(0.0, 0.0); b.len(lattice.n)]).collect();
        DiscreteField::new(lattice, grid, blocks, coeffs)
    }

    pub fn n(&self) -> usize {
        self.lattice.n
    }

    pub fn volume(&self) -> f64 {
        self.grid.lengths.iter().product()
    }

    pub fn with_coeffs(&self, coeffs: Vec<Vec<C64>>) -> Result<Self> {
        DiscreteField::new(self.lattice, self.grid.clone(), self.blocks.clone(), coeffs)
    }

    /// Lattice frequency of DFT slot `a` on `axis`: the representative nearest the lattice span.
    pub fn slot_freq(&self, axis: usize, a: usize) -> i64 {
        let s = self.grid.sides[axis] as i64;
        let c = self.center[axis];
        let base = c - s / 2;
        base + (a as i64 - base).rem_euclid(s)
    }

    /// Grid coefficient array for the blocks in `subset` (all when `None`).
    pub fn spectrum(&self, subset: Option<&[usize]>) -> Vec<C64> {
        let n = self.n();
        let mut out = vec![C64::new(0.0, 0.0); self.grid.len()];
        let mut place = |i: usize| {
            for (p, c) in self.blocks[i].points.chunks(n).zip(&self.coeffs[i]) {
                out[wrap_index(p, &self.grid.sides)] += c;
            }
        };
        match subset {
            Some(s) => s.iter().for_each(|&i| place(i)),
            None => (0..self.blocks.len()).for_each(&mut place),
        }
        out
    }

    /// Spatial samples of `Σ_{θ ∈ subset} f_θ`.
    pub fn samples(&self, subset: Option<&[usize]>) -> Vec<C64> {
        let mut z = self.spectrum(subset);
        NdFft::new(&self.grid.sides).inverse(&mut z);
        z
    }

    pub fn component_samples(&self, block: usize) -> Vec<C64> {
        self.samples(Some(&[block]))
    }

    /// Samples of each coarse block at width `2^-a`.
    pub fn coarse_samples(&self, a: u32) -> Result<Vec<Vec<C64>>> {
        let groups = group_indices(self.lattice.b, a)?;
        let fft = NdFft::new(&self.grid.sides);
        Ok(groups
            .iter()
            .map(|g| {
                let mut z = self.spectrum(Some(g));
                fft.inverse(&mut z);
                z
            })
            .collect())
    }

    /// `Σ |c|²`, the mean of `|f|²` over the torus.
    pub fn mass(&self) -> f64 {
        self.coeffs.iter().flatten().map(|c| c.norm_sqr()).sum()
    }

    pub fn block_mass(&self, block: usize) -> f64 {
        self.coeffs[block].iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn is_zero_block(&self, block: usize) -> bool {
        self.coeffs[block].iter().all(|c| c.norm_sqr() == 0.0)
    }

    pub fn nonzero_blocks(&self) -> Vec<usize> {
        (0..self.blocks.len()).filter(|&i| !self.is_zero_block(i)).collect()
    }

    /// Keep only the listed fine blocks.
    pub fn restrict(&self, subset: &[usize]) -> Result<DiscreteField> {
        let mut keep = vec![false; self.blocks.len()];
        for &i in subset {
            if i >= keep.len() {
                return Err(Error::Invalid(format!("block {i} is not in the partition")));
            }
            if keep[i] {
                return Err(Error::Invalid(format!("block {i} listed twice")));
            }
            keep[i] = true;
        }
        let coeffs = self
            .coeffs
            .iter()
            .zip(&keep)
            .map(|(c, &k)| if k { c.clone() } else { vec![C64::new(0.0, 0.0); c.len()] })
            .collect();
        self.with_coeffs(coeffs)
    }

    /// Keep the fine blocks inside `[lo, hi)`; both ends must lie on the fine grid.
    pub fn restrict_interval(&self, lo: f64, hi: f64) -> Result<DiscreteField> {
        let count = self.blocks.len() as f64;
        let (a, b) = (lo * count, hi * count);
        if (a - a.round()).abs() > 1e-9 || (b - b.round()).abs() > 1e-9 || a < -1e-9 || b > count + 1e-9 || a > b {
            return Err(Error::Invalid(format!("interval [{lo}, {hi}) is not a union of fine blocks")));
        }
        let subset: Vec<usize> = (a.round() as usize..b.round() as usize).collect();
        self.restrict(&subset)
    }

    /// Keep the coarse blocks at width `2^-a` listed in `coarse`.
    pub fn restrict_coarse(&self, a: u32, coarse: &[usize]) -> Result<DiscreteField> {
        let groups = group_indices(self.lattice.b, a)?;
        let mut subset = Vec::new();
        for &g in coarse {
            subset.extend(groups.get(g).ok_or_else(|| Error::Invalid(format!("coarse block {g} out of range")))?);
        }
        self.restrict(&subset)
    }

    /// Approximate `‖f_θ‖_∞` from a 4x oversampled demodulated grid.
    pub fn block_sup(&self, block: usize) -> f64 {
        block_sup(self.n(), &self.blocks[block], &self.coeffs[block])
    }

    /// Write a binary snapshot: header, then little-endian complex64 coefficients per nonzero block.
    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(SNAPSHOT_MAGIC)?;
        for v in [SNAPSHOT_VERSION, self.n() as u32, self.lattice.b, self.lattice.q] {
            w.write_all(&v.to_le_bytes())?;
        }
        for &s in &self.grid.sides {
            w.write_all(&(s as u64).to_le_bytes())?;
        }
        for &l in &self.grid.lengths {
            w.write_all(&l.to_le_bytes())?;
        }
        let ids = self.nonzero_blocks();
        w.write_all(&(ids.len() as u32).to_le_bytes())?;
        for i in ids {
            w.write_all(&(i as u32).to_le_bytes())?;
            w.write_all(&(self.coeffs[i].len() as u32).to_le_bytes())?;
            for c in &self.coeffs[i] {
                w.write_all(&(c.re as f32).to_le_bytes())?;
                w.write_all(&(c.im as f32).to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_snapshot(path: &Path) -> Result<DiscreteField> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(Error::Invalid("not a field snapshot".into()));
        }
        let version = read_u32(&mut r)?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::Invalid(format!("unsupported snapshot version {version}")));
        }
        let (n, b, q) = (read_u32(&mut r)? as usize, read_u32(&mut r)?, read_u32(&mut r)?);
        let lattice = Lattice::new(n, 1u64 << (n as u32 * b), q)?;
        let mut sides = Vec::with_capacity(n);
        for _ in 0..n {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)?;
            sides.push(u64::from_le_bytes(buf) as usize);
        }
        let mut lengths = Vec::with_capacity(n);
        for _ in 0..n {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)?;
            lengths.push(f64::from_le_bytes(buf));
        }
        let blocks = Arc::new(lattice.fine_blocks());
        let mut coeffs: Vec<Vec<C64>> = blocks.iter().map(|bl| vec![C64::new(0.0, 0.0); bl.len(n)]).collect();
        let count = read_u32(&mut r)? as usize;
        for _ in 0..count {
            let id = read_u32(&mut r)? as usize;
            let len = read_u32(&mut r)? as usize;
            let slot = coeffs.get_mut(id).ok_or_else(|| Error::Invalid(format!("block id {id} out of range")))?;
            if slot.len() != len {
                return Err(Error::Invalid(format!("block {id} has {len} coefficients, expected {}", slot.len())));
            }
            for c in slot.iter_mut() {
                let re = read_f32(&mut r)?;
                let im = read_f32(&mut r)?;
                *c = C64::new(re as f64, im as f64);
            }
        }
        DiscreteField::new(lattice, Grid { lengths, sides }, blocks, coeffs)
    }

    /// CSV of a 2-D slice through the origin along `axes`.
    pub fn write_slice_csv(&self, path: &Path, samples: &[C64], axes: (usize, usize)) -> Result<()> {
        let n = self.n();
        if axes.0 >= n || axes.1 >= n || axes.0 == axes.1 {
            return Err(Error::Invalid("slice axes out of range".into()));
        }
        let sides = &self.grid.sides;
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["i", "j", "x", "y", "re", "im", "abs"]).map_err(csv_err)?;
        let mut idx = vec![0i64; n];
        for i in 0..sides[axes.0] {
            for j in 0..sides[axes.1] {
                idx[axes.0] = i as i64;
                idx[axes.1] = j as i64;
                let v = samples[wrap_index(&idx, sides)];
                let x = i as f64 * self.grid.lengths[axes.0] / sides[axes.0] as f64;
                let y = j as f64 * self.grid.lengths[axes.1] / sides[axes.1] as f64;
                w.write_record(&[
                    i.to_string(),
                    j.to_string(),
                    x.to_string(),
                    y.to_string(),
                    v.re.to_string(),
                    v.im.to_string(),
                    v.norm().to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"MSQF";
const SNAPSHOT_VERSION: u32 = 1;

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f32(r: &mut impl Read) -> Result<f32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(f32::from_le_bytes(buf))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Invalid(format!("csv: {e}"))
}

pub(crate) fn block_sup(n: usize, block: &LatticeBlock, coeffs: &[C64]) -> f64 {
    if coeffs.iter().all(|c| c.norm_sqr() == 0.0) {
        return 0.0;
    }
    let bounds = block.bounds(n);
    let sides: Vec<usize> = bounds.iter().map(|(lo, hi)| (4 * (hi - lo + 1) as usize).next_power_of_two()).collect();
    let mut z = vec![C64::new(0.0, 0.0); sides.iter().product()];
    let mut k = vec![0i64; n];
    for (p, c) in block.points.chunks(n).zip(coeffs) {
        for i in 0..n {
            k[i] = p[i] - bounds[i].0;
        }
        z[wrap_index(&k, &sides)] += c;
    }
    NdFft::new(&sides).inverse(&mut z);
    z.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// Build a field from a profile on the full fine partition.
pub fn synthesize(lattice: Lattice, grid: Grid, profile: Profile, seed: u64, normalize: bool) -> Result<DiscreteField> {
    let n = lattice.n;
    let blocks = Arc::new(lattice.fine_blocks());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = |rng: &mut ChaCha8Rng| C64::from_polar(1.0, TWO_PI * rng.gen::<f64>());
    let mut coeffs: Vec<Vec<C64>> = Vec::with_capacity(blocks.len());
    match profile {
        Profile::RandomPhase => {
            for b in blocks.iter() {
                coeffs.push((0..b.len(n)).map(|_| unit(&mut rng)).collect());
            }
        }
        Profile::Focusing => {
            for b in blocks.iter() {
                coeffs.push(vec![C64::new(1.0, 0.0); b.len(n)]);
            }
        }
        Profile::SingleBlock(which) => {
            if which >= blocks.len() {
                return Err(Error::Invalid(format!("block {which} out of range ({} blocks)", blocks.len())));
            }
            for (i, b) in blocks.iter().enumerate() {
                let v = if i == which { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
                coeffs.push(vec![v; b.len(n)]);
            }
        }
        Profile::SparsePackets(k) => {
            for b in blocks.iter() {
                let mut c = vec![C64::new(0.0, 0.0); b.len(n)];
                for _ in 0..k {
                    let x: Vec<f64> = grid.lengths.iter().map(|l| l * rng.gen::<f64>()).collect();
                    let u = unit(&mut rng);
                    for (cj, p) in c.iter_mut().zip(b.points.chunks(n)) {
                        let ph: f64 = lattice.freq(p).iter().zip(&x).map(|(f, xi)| f * xi).sum();
                        *cj += u * C64::from_polar(1.0, -TWO_PI * ph);
                    }
                }
                coeffs.push(c);
            }
        }
    }
    if normalize {
        for (b, c) in blocks.iter().zip(coeffs.iter_mut()) {
            let s = block_sup(n, b, c);
            if s > 0.0 {
                c.iter_mut().for_each(|v| *v /= s);
            }
        }
    }
    DiscreteField::new(lattice, grid, blocks, coeffs)
}

/// Smooth compactly supported partition of unity on `R`: `Σ_m Ψ(u - m) = 1`.
pub fn tile_bump(u: f64) -> f64 {
    let a = u.abs();
    if a >= 1.0 {
        return 0.0;
    }
    let h = |t: f64| if t > 0.0 { (-1.0 / t).exp() } else { 0.0 };
    let (p, q) = (h(1.0 - a), h(a));
    p / (p + q)
}

/// Tiling of the torus by translates of the dual box of a coarse block.
///
/// With `y = Bᵀx`, `B = F diag(s, s², …)`, tiles are unit cells in `y`. The torus
/// periods map to the integer lattice `G Z^n`, `G = Bᵀ diag(P)`, which is upper
/// triangular, so tiles are the cosets `Z^n / G Z^n`.
#[derive(Debug, Clone, Serialize)]
pub struct Tiling {
    pub n: usize,
    pub dilation: i64,
    pub width_exp: u32,
    pub index: usize,
    pub bt: Vec<Vec<f64>>,
    pub g: Vec<Vec<i64>>,
}

impl Tiling {
    /// Tiles twice the dual box when the period lattice allows it, else the dual box itself.
    pub fn new(lattice: &Lattice, width_exp: u32, index: usize) -> Result<Self> {
        let even = lattice.q > 1 || width_exp < lattice.b;
        Tiling::dilated(lattice, width_exp, index, if even { 2 } else { 1 })
    }

    /// Tiles `c` times the dual box along every axis; `c` must divide `G`.
    pub fn dilated(lattice: &Lattice, width_exp: u32, index: usize, c: i64) -> Result<Self> {
        let n = lattice.n;
        if c < 1 {
            return Err(Error::Invalid("tile dilation must be positive".into()));
        }
        if width_exp > lattice.b {
            return Err(Error::Invalid(format!("width 2^-{width_exp} is finer than the lattice blocks")));
        }
        if index >= 1usize << width_exp {
            return Err(Error::Invalid(format!("block {index} out of range at width 2^-{width_exp}")));
        }
        let s = (-(width_exp as f64)).exp2();
        let t0 = index as f64 * s;
        let cols: Vec<Vec<f64>> = (1..=n).map(|i| moment_derivative(n, i, t0)).collect();
        let bt: Vec<Vec<f64>> =
            (0..n).map(|i| (0..n).map(|j| cols[i][j] * s.powi(i as i32 + 1) / c as f64).collect()).collect();
        // exact integer G: G_ij = (j+1)!/(j-i)! l^(j-i) q 2^((b-a)(j+1)) for j >= i
        let l = index as i64;
        let ratio = 1i64 << (lattice.b - width_exp);
        let mut g = vec![vec![0i64; n]; n];
        for i in 0..n {
            for j in i..n {
                let falling: i64 = ((j - i + 1)..=(j + 1)).map(|v| v as i64).product();
                let v = falling * l.pow((j - i) as u32) * lattice.q as i64 * ratio.pow(j as u32 + 1);
                if v % c != 0 {
                    return Err(Error::Invalid(format!("tile dilation {c} does not divide the period lattice")));
                }
                g[i][j] = v / c;
            }
        }
        Ok(Tiling { n, dilation: c, width_exp, index, bt, g })
    }

    pub fn count(&self) -> usize {
        (0..self.n).map(|i| self.g[i][i] as usize).product()
    }

    pub fn y(&self, x: &[f64]) -> Vec<f64> {
        self.bt.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    /// Canonical tile id of the coset `m + G Z^n`.
    pub fn reduce(&self, m: &mut [i64]) -> usize {
        for j in (0..self.n).rev() {
            let c = m[j].div_euclid(self.g[j][j]);
            if c != 0 {
                for i in 0..=j {
                    m[i] -= c * self.g[i][j];
                }
            }
        }
        let mut id = 0usize;
        for j in 0..self.n {
            id = id * self.g[j][j] as usize + m[j] as usize;
        }
        id
    }

    /// The `2^n` tiles meeting `x` with their partition weights.
    pub fn weights_at(&self, x: &[f64], out: &mut Vec<(usize, f64)>) {
        out.clear();
        let y = self.y(x);
        let n = self.n;
        let fl: Vec<i64> = y.iter().map(|v| v.floor() as i64).collect();
        let mut m = vec![0i64; n];
        for corner in 0..1usize << n {
            let mut w = 1.0;
            for i in 0..n {
                m[i] = fl[i] + ((corner >> i) & 1) as i64;
                w *= tile_bump(y[i] - m[i] as f64);
            }
            if w > 0.0 {
                out.push((self.reduce(&mut m), w));
            }
        }
    }

    /// Tile of the cell containing `x`.
    pub fn cell_of(&self, x: &[f64]) -> usize {
        let mut m: Vec<i64> = self.y(x).iter().map(|v| v.round() as i64).collect();
        self.reduce(&mut m)
    }
}

/// Per grid point, the tiles meeting it and their weights.
#[derive(Debug, Clone)]
pub struct TileMap {
    pub tiling: Tiling,
    pub stride: usize,
    pub ids: Vec<u32>,
    pub weights: Vec<f64>,
    pub cells: Vec<u32>,
}

impl TileMap {
    pub fn new(tiling: Tiling, grid: &Grid) -> Self {
        let n = tiling.n;
        let stride = 1usize << n;
        let len = grid.len();
        let mut ids = vec![0u32; len * stride];
        let mut weights = vec![0.0; len * stride];
        let mut cells = vec![0u32; len];
        let mut a = vec![0usize; n];
        let mut buf = Vec::with_capacity(stride);
        for p in 0..len {
            unflatten(p, &grid.sides, &mut a);
            let x: Vec<f64> = (0..n).map(|i| a[i] as f64 * grid.lengths[i] / grid.sides[i] as f64).collect();
            tiling.weights_at(&x, &mut buf);
            for (s, &(id, w)) in buf.iter().enumerate() {
                ids[p * stride + s] = id as u32;
                weights[p * stride + s] = w;
            }
            cells[p] = tiling.cell_of(&x) as u32;
        }
        TileMap { tiling, stride, ids, weights, cells }
    }

    pub fn entries(&self, p: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = p * self.stride..(p + 1) * self.stride;
        self.ids[r.clone()].iter().zip(&self.weights[r]).filter(|(_, &w)| w > 0.0).map(|(&i, &w)| (i as usize, w))
    }

    /// `max_x ψ_T(x)^{1/2} |f(x)|` for every tile.
    pub fn amplitudes(&self, samples: &[C64]) -> Vec<f64> {
        let mut amp = vec![0.0f64; self.tiling.count()];
        for (p, v) in samples.iter().enumerate() {
            let a = v.norm();
            for (t, w) in self.entries(p) {
                amp[t] = amp[t].max(w.sqrt() * a);
            }
        }
        amp
    }

    /// `Σ_x |ψ_T f|²` for every tile.
    pub fn masses(&self, samples: &[C64]) -> Vec<f64> {
        let mut m = vec![0.0f64; self.tiling.count()];
        for (p, v) in samples.iter().enumerate() {
            let a = v.norm_sqr();
            for (t, w) in self.entries(p) {
                m[t] += w * w * a;
            }
        }
        m
    }

    /// `Σ_{T: keep(T)} ψ_T` on the grid.
    pub fn window(&self, keep: &[bool]) -> Vec<f64> {
        (0..self.cells.len()).map(|p| self.entries(p).filter(|(t, _)| keep[*t]).map(|(_, w)| w).sum()).collect()
    }

    pub fn packet(&self, samples: &[C64], tile: usize) -> Vec<C64> {
        samples
            .iter()
            .enumerate()
            .map(|(p, v)| v * self.entries(p).filter(|(t, _)| *t == tile).map(|(_, w)| w).sum::<f64>())
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WavePacket {
    pub block: usize,
    pub width_exp: u32,
    pub tile: usize,
    /// `‖ψ_T^{1/2} f_τ‖_∞` on the grid.
    pub amplitude: f64,
    /// `∫|ψ_T f_τ|²`.
    pub mass: f64,
}

#[derive(Debug, Clone)]
pub struct PacketDecomposition {
    pub map: TileMap,
    pub samples: Vec<C64>,
    pub packets: Vec<WavePacket>,
}

impl PacketDecomposition {
    pub fn windowed(&self, tile: usize) -> Vec<C64> {
        self.map.packet(&self.samples, tile)
    }

    /// Relative L² residual of `Σ_T ψ_T f_τ - f_τ`.
    pub fn reconstruction_residual(&self) -> f64 {
        let all = vec![true; self.map.tiling.count()];
        let w = self.map.window(&all);
        let (mut num, mut den) = (0.0, 0.0);
        for (v, s) in self.samples.iter().zip(&w) {
            num += (v * s - v).norm_sqr();
            den += v.norm_sqr();
        }
        if den == 0.0 {
            0.0
        } else {
            (num / den).sqrt()
        }
    }
}

/// Wave packets of the coarse block `index` at width `2^-width_exp`.
pub fn wave_packet_decompose(field: &DiscreteField, width_exp: u32, index: usize) -> Result<PacketDecomposition> {
    let groups = group_indices(field.lattice.b, width_exp)?;
    let members = groups.get(index).ok_or_else(|| Error::Invalid(format!("block {index} out of range")))?;
    let samples = field.samples(Some(members));
    let map = TileMap::new(Tiling::new(&field.lattice, width_exp, index)?, &field.grid);
    let amp = map.amplitudes(&samples);
    let cell = field.grid.cell();
    let packets = map
        .masses(&samples)
        .into_iter()
        .zip(amp)
        .enumerate()
        .filter(|(_, (m, _))| *m > 0.0)
        .map(|(tile, (m, a))| WavePacket { block: index, width_exp, tile, amplitude: a, mass: m * cell })
        .collect();
    Ok(PacketDecomposition { map, samples, packets })
}

/// Fraction of the spectral mass of `samples` outside the `dilate`-fold block.
pub fn fourier_leakage(field: &DiscreteField, samples: &[C64], block: &MomentBlock, dilate: f64) -> Result<f64> {
    let mut z = samples.to_vec();
    NdFft::new(&field.grid.sides).forward(&mut z);
    let n = field.n();
    let mut a = vec![0usize; n];
    let mut k = vec![0i64; n];
    let (mut out, mut total) = (0.0, 0.0);
    for (i, v) in z.iter().enumerate() {
        let m = v.norm_sqr();
        if m == 0.0 {
            continue;
        }
        total += m;
        unflatten(i, &field.grid.sides, &mut a);
        for ax in 0..n {
            k[ax] = field.slot_freq(ax, a[ax]);
        }
        if !block.contains_dilated(&field.lattice.freq(&k), dilate)? {
            out += m;
        }
    }
    Ok(if total == 0.0 { 0.0 } else { out / total })
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalConstantReport {
    pub width_exp: u32,
    pub index: usize,
    pub kappa: f64,
    pub ratio: f64,
    pub tiles: usize,
}

/// `max_T max_{x ∈ T} ‖f_τ‖²_{L∞(T)} / (|f_τ|² * ω_τ)(x)` over the cells of the tiling.
pub fn locally_constant_check(field: &DiscreteField, width_exp: u32, index: usize, kappa: f64) -> Result<LocalConstantReport> {
    let groups = group_indices(field.lattice.b, width_exp)?;
    let members = groups.get(index).ok_or_else(|| Error::Invalid(format!("block {index} out of range")))?;
    let samples = field.samples(Some(members));
    let tiling = Tiling::new(&field.lattice, width_exp, index)?;
    let tiles = tiling.count();
    let sq: Vec<f64> = samples.iter().map(|v| v.norm_sqr()).collect();
    if sq.iter().all(|&v| v == 0.0) {
        return Ok(LocalConstantReport { width_exp, index, kappa, ratio: 0.0, tiles });
    }
    let block = MomentBlock::new(field.n(), index, (-(width_exp as f64)).exp2());
    let conv = field.grid.convolve(&sq, &omega_block(&block, kappa)?)?;
    let mut hi = vec![0.0f64; tiles];
    let mut lo = vec![f64::INFINITY; tiles];
    let n = field.n();
    let mut a = vec![0usize; n];
    for p in 0..sq.len() {
        unflatten(p, &field.grid.sides, &mut a);
        let x: Vec<f64> = (0..n).map(|i| a[i] as f64 * field.grid.lengths[i] / field.grid.sides[i] as f64).collect();
        let t = tiling.cell_of(&x);
        hi[t] = hi[t].max(sq[p]);
        lo[t] = lo[t].min(conv[p]);
    }
    let ratio = hi
        .iter()
        .zip(&lo)
        .filter(|(h, _)| **h > 0.0)
        .map(|(h, l)| if *l > 0.0 { h / l } else { f64::INFINITY })
        .fold(0.0, f64::max);
    Ok(LocalConstantReport { width_exp, index, kappa, ratio, tiles })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, r: u64, q: u32, profile: Profile, seed: u64) -> DiscreteField {
        let lat = Lattice::new(n, r, q).unwrap();
        let grid = grid_for(&lat, &lat.fine_blocks(), 2);
        synthesize(lat, grid, profile, seed, false).unwrap()
    }

    #[test]
    fn plancherel_on_grid() {
        for (n, r) in [(2usize, 256u64), (3, 64)] {
            let f = small(n, r, 2, Profile::RandomPhase, 3);
            let s = f.samples(None);
            let integral = f.grid.cell() * s.iter().map(|v| v.norm_sqr()).sum::<f64>();
            let expected = f.volume() * f.mass();
            assert!((integral / expected - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn samples_match_direct_sum() {
        let f = small(2, 16, 2, Profile::RandomPhase, 9);
        let s = f.samples(None);
        let mut a = [0usize; 2];
        for p in [0usize, 5, 77, s.len() - 1] {
            unflatten(p, &f.grid.sides, &mut a);
            let x: Vec<f64> = (0..2).map(|i| a[i] as f64 * f.grid.lengths[i] / f.grid.sides[i] as f64).collect();
            let mut direct = C64::new(0.0, 0.0);
            for (b, c) in f.blocks.iter().zip(&f.coeffs) {
                for (pt, cv) in b.points.chunks(2).zip(c) {
                    let ph: f64 = f.lattice.freq(pt).iter().zip(&x).map(|(u, v)| u * v).sum();
                    direct += cv * C64::from_polar(1.0, TWO_PI * ph);
                }
            }
            assert!((direct - s[p]).norm() < 1e-9 * (1.0 + direct.norm()));
        }
    }

    #[test]
    fn profiles_behave() {
        let f = small(2, 64, 2, Profile::SingleBlock(3), 0);
        assert_eq!(f.nonzero_blocks(), vec![3]);
        let s = f.samples(None);
        let c = f.component_samples(3);
        assert_eq!(s, c);

        let f = small(2, 64, 2, Profile::Focusing, 0);
        let origin = f.samples(None)[0].norm();
        let parts: f64 = (0..f.blocks.len()).map(|i| f.component_samples(i)[0].norm()).sum();
        assert!((origin - parts).abs() < 1e-9 * parts);

        let a = small(2, 64, 2, Profile::RandomPhase, 42);
        let b = small(2, 64, 2, Profile::RandomPhase, 42);
        assert_eq!(a.coeffs, b.coeffs);
    }

    #[test]
    fn normalization_toggle() {
        let lat = Lattice::new(2, 64, 2).unwrap();
        let grid = grid_for(&lat, &lat.fine_blocks(), 2);
        let f = synthesize(lat, grid, Profile::SparsePackets(2), 5, true).unwrap();
        for i in 0..f.blocks.len() {
            let s = f.block_sup(i);
            assert!((0.5..=2.0).contains(&s));
        }
    }

    #[test]
    fn nyquist_violation_rejected() {
        let lat = Lattice::new(2, 64, 2).unwrap();
        let mut grid = grid_for(&lat, &lat.fine_blocks(), 1);
        grid.sides[1] /= 4;
        assert!(synthesize(lat, grid, Profile::Focusing, 0, false).is_err());
    }

    #[test]
    fn restriction_partitions() {
        let f = small(2, 256, 1, Profile::RandomPhase, 1);
        assert_eq!(f.restrict(&(0..16).collect::<Vec<_>>()).unwrap().coeffs, f.coeffs);
        assert_eq!(f.restrict(&[]).unwrap().mass(), 0.0);
        let coarse = f.coarse_samples(2).unwrap();
        let whole = f.samples(None);
        for (p, v) in whole.iter().enumerate() {
            let sum: C64 = coarse.iter().map(|c| c[p]).sum();
            assert!((sum - v).norm() < 1e-9);
        }
        let masses: f64 = (0..4).map(|g| f.restrict_coarse(2, &[g]).unwrap().mass()).sum();
        assert_eq!(masses, f.mass());
        assert!(f.restrict_interval(0.0, 0.3).is_err());
        assert!(f.restrict_interval(0.25, 0.5).is_ok());
        assert!(f.restrict(&[2, 2]).is_err());
    }

    #[test]
    fn tiling_counts_and_partition() {
        let lat = Lattice::new(2, 256, 2).unwrap();
        let grid = grid_for(&lat, &lat.fine_blocks(), 2);
        for (a, l) in [(4u32, 5usize), (2, 1), (0, 0)] {
            let t = Tiling::new(&lat, a, l).unwrap();
            let s = (-(a as f64)).exp2();
            let vol: f64 = grid.lengths.iter().product();
            let dual = 1.0 / (s * s.powi(2) * 2.0);
            let cells = vol / dual / (t.dilation as f64).powi(2);
            assert!((t.count() as f64 - cells).abs() < 1e-6);
            let map = TileMap::new(t, &grid);
            let w = map.window(&vec![true; map.tiling.count()]);
            assert!(w.iter().all(|v| (v - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn single_packet_dominates() {
        let lat = Lattice::new(2, 256, 2).unwrap();
        let blocks = Arc::new(lat.fine_blocks());
        let grid = grid_for(&lat, &blocks, 2);
        let mut f = DiscreteField::zeros(lat, grid, blocks.clone()).unwrap();
        let tiling = Tiling::new(&lat, 4, 6).unwrap();
        // centre of tile m = (3, 5): x = B^{-T} m
        let m = [3.0, 5.0];
        let bt = &tiling.bt;
        let det = bt[0][0] * bt[1][1] - bt[0][1] * bt[1][0];
        let x = [(bt[1][1] * m[0] - bt[0][1] * m[1]) / det, (bt[0][0] * m[1] - bt[1][0] * m[0]) / det];
        f.coeffs[6] = blocks[6]
            .points
            .chunks(2)
            .map(|p| {
                let ph: f64 = lat.freq(p).iter().zip(&x).map(|(a, b)| a * b).sum();
                C64::from_polar(1.0, -TWO_PI * ph)
            })
            .collect();
        let dec = wave_packet_decompose(&f, 4, 6).unwrap();
        let total: f64 = dec.packets.iter().map(|p| p.mass).sum();
        let top = dec.packets.iter().map(|p| p.mass).fold(0.0, f64::max);
        assert!(top / total >= 0.9, "dominant share {}", top / total);
        assert!(dec.reconstruction_residual() < 1e-8);
    }

    #[test]
    fn snapshot_round_trip() {
        let f = small(2, 64, 2, Profile::RandomPhase, 8);
        let dir = std::env::temp_dir().join(format!("momsq-snap-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("f.bin");
        f.write_snapshot(&path).unwrap();
        let g = DiscreteField::read_snapshot(&path).unwrap();
        for (a, b) in f.coeffs.iter().flatten().zip(g.coeffs.iter().flatten()) {
            assert!((a - b).norm() < 1e-6);
        }
        let csv = dir.join("slice.csv");
        f.write_slice_csv(&csv, &f.samples(None), (0, 1)).unwrap();
        let lines = std::fs::read_to_string(&csv).unwrap().lines().count();
        assert_eq!(lines, 1 + f.grid.len());
        std::fs::remove_dir_all(dir).ok();
    }
}
