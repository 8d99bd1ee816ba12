//! Moment-curve blocks, Taylor-cone sectors and dual boxes.
//!
//! Frames are stored row-major: `frame[row][col]`, with column `i` holding the
//! `i`-th derivative of the curve at the block's left endpoint. Both frames are
//! lower triangular, so coordinates are recovered by forward substitution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{admissible_exponent, factorial, Error, Result};

pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// `(t, t^2, ..., t^n)`.
pub fn moment_curve(n: usize, t: f64) -> Vec<f64> {
    moment_derivative(n, 0, t)
}

/// `i`-th derivative of the moment curve.
pub fn moment_derivative(n: usize, i: usize, t: f64) -> Vec<f64> {
    (1..=n)
        .map(|j| {
            if j < i {
                0.0
            } else {
                factorial(j) / factorial(j - i) * t.powi((j - i) as i32)
            }
        })
        .collect()
}

/// `(1, t/1!, ..., t^n/n!)`.
pub fn phi_curve(n: usize, t: f64) -> Vec<f64> {
    phi_derivative(n, 0, t)
}

/// `i`-th derivative of `phi_curve`; entry `j` is `t^(j-i)/(j-i)!`.
pub fn phi_derivative(n: usize, i: usize, t: f64) -> Vec<f64> {
    (0..=n)
        .map(|j| if j < i { 0.0 } else { t.powi((j - i) as i32) / factorial(j - i) })
        .collect()
}

fn moment_frame(n: usize, t: f64) -> Vec<Vec<f64>> {
    let cols: Vec<Vec<f64>> = (1..=n).map(|i| moment_derivative(n, i, t)).collect();
    (0..n).map(|r| (0..n).map(|c| cols[c][r]).collect()).collect()
}

fn phi_frame(n: usize, t: f64) -> Vec<Vec<f64>> {
    let cols: Vec<Vec<f64>> = (0..=n).map(|i| phi_derivative(n, i, t)).collect();
    (0..=n).map(|r| (0..=n).map(|c| cols[c][r]).collect()).collect()
}

/// Forward substitution for a lower-triangular matrix.
pub fn solve_lower(frame: &[Vec<f64>], rhs: &[f64]) -> Result<Vec<f64>> {
    let d = rhs.len();
    let scale = frame.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut x = vec![0.0; d];
    for r in 0..d {
        let piv = frame[r][r];
        if piv.abs() <= 1e-14 * scale.max(1.0) {
            return Err(Error::Degenerate(format!("zero pivot in row {r}")));
        }
        let s: f64 = (0..r).map(|c| frame[r][c] * x[c]).sum();
        x[r] = (rhs[r] - s) / piv;
    }
    Ok(x)
}

pub fn determinant(m: &[Vec<f64>]) -> f64 {
    let d = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut det = 1.0;
    for c in 0..d {
        let p = (c..d)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        if a[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            a.swap(p, c);
            det = -det;
        }
        det *= a[c][c];
        for r in c + 1..d {
            let f = a[r][c] / a[c][c];
            for k in c..d {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    det
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentBlock {
    pub n: usize,
    /// Scale `width^-n`.
    pub scale: f64,
    pub index: usize,
    pub t0: f64,
    pub width: f64,
    pub frame: Vec<Vec<f64>>,
    pub half_widths: Vec<f64>,
}

impl MomentBlock {
    pub fn new(n: usize, index: usize, width: f64) -> Self {
        let t0 = index as f64 * width;
        MomentBlock {
            n,
            scale: width.powi(-(n as i32)),
            index,
            t0,
            width,
            frame: moment_frame(n, t0),
            half_widths: (1..=n).map(|i| width.powi(i as i32)).collect(),
        }
    }

    /// Frame coordinates of `xi - gamma(t0)`.
    pub fn coords(&self, xi: &[f64]) -> Result<Vec<f64>> {
        if xi.len() != self.n {
            return Err(Error::Invalid("dimension mismatch".into()));
        }
        let base = moment_curve(self.n, self.t0);
        let rhs: Vec<f64> = xi.iter().zip(&base).map(|(a, b)| a - b).collect();
        solve_lower(&self.frame, &rhs)
    }

    pub fn contains(&self, xi: &[f64]) -> Result<bool> {
        self.contains_dilated(xi, 1.0)
    }

    pub fn contains_dilated(&self, xi: &[f64], dilate: f64) -> Result<bool> {
        let lam = self.coords(xi)?;
        Ok(lam
            .iter()
            .zip(&self.half_widths)
            .all(|(l, h)| l.abs() <= (1.0 + MEMBERSHIP_TOL) * dilate * h))
    }

    /// Point with coordinates `(width/2, 0, ..., 0)`.
    pub fn center(&self) -> Vec<f64> {
        let mut lam = vec![0.0; self.n];
        lam[0] = self.width / 2.0;
        self.point(&lam)
    }

    pub fn point(&self, lam: &[f64]) -> Vec<f64> {
        let mut x = moment_curve(self.n, self.t0);
        for (r, xr) in x.iter_mut().enumerate() {
            *xr += (0..self.n).map(|c| self.frame[r][c] * lam[c]).sum::<f64>();
        }
        x
    }

    /// The slab piece `0 <= lambda_1 <= width`, `|lambda_i| <= width^i`, as a parallelepiped.
    pub fn slab_parallelepiped(&self) -> Parallelepiped {
        let mut gens = Vec::with_capacity(self.n);
        for c in 0..self.n {
            let h = if c == 0 { self.width / 2.0 } else { self.half_widths[c] };
            gens.push((0..self.n).map(|r| self.frame[r][c] * h).collect());
        }
        Parallelepiped { center: self.center(), gens }
    }
}

pub fn partition_moment(n: usize, r: u64) -> Result<Vec<MomentBlock>> {
    let b = admissible_exponent(n, r)
        .ok_or_else(|| Error::Scale(format!("R = {r} is not a power of 2^{n}")))?;
    Ok(canonical_blocks(n, b))
}

/// Blocks of width `2^-b` tiling `[0, 1)`.
pub fn canonical_blocks(n: usize, b: u32) -> Vec<MomentBlock> {
    let count = 1usize << b;
    let width = 1.0 / count as f64;
    (0..count).map(|l| MomentBlock::new(n, l, width)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct TaylorConeSector {
    pub n: usize,
    pub m: usize,
    pub scale: f64,
    pub index: usize,
    pub a: f64,
    pub width: f64,
    pub frame: Vec<Vec<f64>>,
    pub half_widths: Vec<f64>,
}

impl TaylorConeSector {
    pub fn coords(&self, xi: &[f64]) -> Result<Vec<f64>> {
        if xi.len() != self.n + 1 {
            return Err(Error::Invalid("dimension mismatch".into()));
        }
        solve_lower(&self.frame, xi)
    }

    pub fn contains(&self, xi: &[f64]) -> Result<bool> {
        let lam = self.coords(xi)?;
        Ok(cone_conditions(&lam, self.n, self.m, self.scale, MEMBERSHIP_TOL) <= 0.0)
    }
}

/// Largest violation of the cone constraints at coordinates `lam` (nonpositive when satisfied).
fn cone_conditions(lam: &[f64], n: usize, m: usize, scale: f64, tol: f64) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for (i, l) in lam.iter().enumerate() {
        let hw = scale.powf(-(i as f64) / n as f64);
        worst = worst.max(l.abs() / hw - (1.0 + tol));
    }
    let low = (0..=m)
        .map(|j| lam[j].abs() * 2f64.powi((m + 1 - j) as i32) * scale.powf(j as f64 / n as f64))
        .fold(0.0f64, f64::max);
    worst.max((1.0 - tol) - low)
}

pub fn partition_cone(n: usize, m: usize, r: u64, c_block: f64) -> Result<Vec<TaylorConeSector>> {
    if m + 1 > n {
        return Err(Error::Invalid(format!("cone order m = {m} must satisfy m <= n - 1 = {}", n as i64 - 1)));
    }
    if !(c_block > 0.0 && c_block <= 1.0) {
        return Err(Error::Invalid("c_block must lie in (0, 1]".into()));
    }
    let b = admissible_exponent(n, r)
        .ok_or_else(|| Error::Scale(format!("R = {r} is not a power of 2^{n}")))?;
    let width = c_block / (1u64 << b) as f64;
    let count = (1.0 / width).round();
    if (count * width - 1.0).abs() > 1e-12 {
        return Err(Error::Invalid("c_block R^(-1/n) does not tile [0, 1]".into()));
    }
    Ok((0..count as usize)
        .map(|l| {
            let a = l as f64 * width;
            TaylorConeSector {
                n,
                m,
                scale: r as f64,
                index: l,
                a,
                width,
                frame: phi_frame(n, a),
                half_widths: (0..=n).map(|i| (r as f64).powf(-(i as f64) / n as f64)).collect(),
            }
        })
        .collect())
}

/// Coordinates of `xi` in the frame at `t`: the frame is `exp(tN)` for the shift `N`.
fn cone_coords_at(xi: &[f64], t: f64) -> Vec<f64> {
    (0..xi.len())
        .map(|j| (0..=j).map(|i| xi[i] * (-t).powi((j - i) as i32) / factorial(j - i)).sum())
        .collect()
}

/// Membership in `Γ_m^{n+1}(R)`: search over the curve parameter.
pub fn cone_contains(n: usize, m: usize, scale: f64, xi: &[f64]) -> bool {
    const GRID: usize = 4096;
    let viol = |t: f64| cone_conditions(&cone_coords_at(xi, t), n, m, scale, MEMBERSHIP_TOL);
    let mut best = (f64::INFINITY, 0usize);
    for g in 0..=GRID {
        let v = viol(g as f64 / GRID as f64);
        if v <= 0.0 {
            return true;
        }
        if v < best.0 {
            best = (v, g);
        }
    }
    // golden-section refinement around the best grid node
    let h = 1.0 / GRID as f64;
    let (mut lo, mut hi) = (((best.1 as f64 - 1.0) * h).max(0.0), ((best.1 as f64 + 1.0) * h).min(1.0));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let a = hi - phi * (hi - lo);
        let b = lo + phi * (hi - lo);
        let (va, vb) = (viol(a), viol(b));
        if va <= 0.0 || vb <= 0.0 {
            return true;
        }
        if va < vb {
            hi = b;
        } else {
            lo = a;
        }
    }
    viol(0.5 * (lo + hi)) <= 0.0
}

#[derive(Debug, Clone, Serialize)]
pub struct DualBox {
    pub center: Vec<f64>,
    pub axes: Vec<Vec<f64>>,
    pub half_lengths: Vec<f64>,
}

impl DualBox {
    pub fn orthonormality_residual(&self) -> f64 {
        let d = self.axes.len();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let dot: f64 = self.axes[i].iter().zip(&self.axes[j]).map(|(a, b)| a * b).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    /// Coordinates of `x` along the axes, divided by the half lengths.
    pub fn normalized_coords(&self, x: &[f64]) -> Vec<f64> {
        self.axes
            .iter()
            .zip(&self.half_lengths)
            .map(|(a, h)| a.iter().zip(x).zip(&self.center).map(|((ai, xi), ci)| ai * (xi - ci)).sum::<f64>() / h)
            .collect()
    }
}

/// Modified Gram-Schmidt on the frame columns.
pub fn gram_schmidt(cols: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(cols.len());
    for c in cols {
        let mut v = c.clone();
        for _ in 0..2 {
            for u in &out {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-13 {
            return Err(Error::Degenerate("frame columns are dependent".into()));
        }
        v.iter_mut().for_each(|a| *a /= norm);
        out.push(v);
    }
    Ok(out)
}

pub fn dual_box(block: &MomentBlock) -> Result<DualBox> {
    let cols: Vec<Vec<f64>> = (0..block.n).map(|c| (0..block.n).map(|r| block.frame[r][c]).collect()).collect();
    let axes = gram_schmidt(&cols)?;
    Ok(DualBox {
        center: vec![0.0; block.n],
        axes,
        half_lengths: block.half_widths.iter().map(|h| 1.0 / h).collect(),
    })
}

/// `center + sum_k s_k gens[k]`, `|s_k| <= 1`.
#[derive(Debug, Clone)]
pub struct Parallelepiped {
    pub center: Vec<f64>,
    pub gens: Vec<Vec<f64>>,
}

impl Parallelepiped {
    pub fn minkowski_sum(&self, other: &Parallelepiped) -> Parallelepiped {
        Parallelepiped {
            center: self.center.iter().zip(&other.center).map(|(a, b)| a + b).collect(),
            gens: self.gens.iter().chain(&other.gens).cloned().collect(),
        }
    }

    fn support_radius(&self, u: &[f64]) -> f64 {
        self.gens.iter().map(|g| dot(g, u).abs()).sum()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Normal to `n - 1` vectors in `R^n` from cofactor expansion.
fn normal_of(vs: &[&Vec<f64>], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let minor: Vec<Vec<f64>> = vs
                .iter()
                .map(|v| (0..n).filter(|&c| c != i).map(|c| v[c]).collect())
                .collect();
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            sign * if n == 1 { 1.0 } else { determinant(&minor) }
        })
        .collect()
}

fn combinations(k: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(m);
    fn rec(start: usize, k: usize, m: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for i in start..k {
            cur.push(i);
            rec(i + 1, k, m, cur, out);
            cur.pop();
        }
    }
    rec(0, k, m, &mut cur, &mut out);
    out
}

/// Zonotope intersection: bounding boxes in `coords` first, then separating axes.
/// Touching sets count as intersecting.
pub fn zonotopes_intersect(a: &Parallelepiped, b: &Parallelepiped, to_coords: &[Vec<f64>]) -> bool {
    let n = a.center.len();
    let tol = 1e-12;
    let d: Vec<f64> = a.center.iter().zip(&b.center).map(|(x, y)| x - y).collect();
    // bounding boxes along the rows of `to_coords`
    for row in to_coords {
        let gap = dot(row, &d).abs();
        if gap > a.support_radius(row) + b.support_radius(row) + tol * norm(row) {
            return false;
        }
    }
    let gens: Vec<&Vec<f64>> = a.gens.iter().chain(&b.gens).collect();
    for combo in combinations(gens.len(), n - 1) {
        let vs: Vec<&Vec<f64>> = combo.iter().map(|&i| gens[i]).collect();
        let u = normal_of(&vs, n);
        let un = norm(&u);
        if un < 1e-300 {
            continue;
        }
        let reach: f64 = gens.iter().map(|g| dot(g, &u).abs()).sum();
        if dot(&d, &u).abs() > reach + tol * un {
            return false;
        }
    }
    true
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn invert_lower(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = m.len();
    let mut inv = vec![vec![0.0; d]; d];
    for c in 0..d {
        let mut e = vec![0.0; d];
        e[c] = 1.0;
        let col = solve_lower(m, &e).expect("frame is invertible");
        for r in 0..d {
            inv[r][c] = col[r];
        }
    }
    inv
}

#[derive(Debug, Clone, Serialize)]
pub struct CensusReport {
    pub n: usize,
    pub r: u64,
    pub blocks: usize,
    pub max_overlap: usize,
    /// `histogram[c]` = number of pairs whose sumset meets exactly `c` pair-sumsets.
    pub histogram: Vec<usize>,
}

/// For every unordered pair of blocks, the number of unordered pairs whose sumset meets it.
pub fn sumset_overlap_census(n: usize, r: u64, cap: usize) -> Result<CensusReport> {
    let blocks = partition_moment(n, r)?;
    let m = blocks.len();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i..m).map(move |j| (i, j))).collect();
    if pairs.len().saturating_mul(pairs.len()) > cap {
        return Err(Error::Cap(format!("{} pair checks exceed cap {cap}", pairs.len() * pairs.len())));
    }
    let shapes: Vec<Parallelepiped> = blocks.iter().map(|b| b.slab_parallelepiped()).collect();
    let sums: Vec<Parallelepiped> = pairs.iter().map(|&(i, j)| shapes[i].minkowski_sum(&shapes[j])).collect();
    let mids: Vec<f64> = pairs
        .iter()
        .map(|&(i, j)| 0.5 * (blocks[i].t0 + blocks[j].t0) + blocks[i].width / 2.0)
        .collect();
    let mut counts = vec![0usize; pairs.len()];
    for a in 0..pairs.len() {
        let coords = invert_lower(&moment_frame(n, mids[a]));
        for b in 0..pairs.len() {
            if zonotopes_intersect(&sums[a], &sums[b], &coords) {
                counts[a] += 1;
            }
        }
    }
    let max_overlap = counts.iter().copied().max().unwrap_or(0);
    let mut histogram = vec![0usize; max_overlap + 1];
    for c in &counts {
        histogram[*c] += 1;
    }
    Ok(CensusReport { n, r, blocks: m, max_overlap, histogram })
}

#[derive(Debug, Clone, Serialize)]
pub struct NestingReport {
    pub n: usize,
    pub m: usize,
    pub big: u64,
    pub small: u64,
    pub samples: usize,
    /// Sampled points of the large-scale cone missing from the small-scale cone (`m = 0`).
    pub violations: usize,
    pub witness_big_minus_small: Option<Vec<f64>>,
    pub witness_small_minus_big: Option<Vec<f64>>,
}

fn sample_cone_point(n: usize, m: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let t: f64 = rng.gen();
    let mut lam: Vec<f64> = (0..=n)
        .map(|i| {
            let hw = scale.powf(-(i as f64) / n as f64);
            rng.gen_range(-hw..=hw)
        })
        .collect();
    // enforce the lower bound on one coordinate j <= m
    let j = rng.gen_range(0..=m);
    let hw = scale.powf(-(j as f64) / n as f64);
    let need = 1.0 / (2f64.powi((m + 1 - j) as i32) * scale.powf(j as f64 / n as f64));
    let mag = rng.gen_range(need.min(hw)..=hw);
    lam[j] = if rng.gen::<bool>() { mag } else { -mag };
    let mut xi = vec![0.0; n + 1];
    for (i, l) in lam.iter().enumerate() {
        for (x, d) in xi.iter_mut().zip(phi_derivative(n, i, t)) {
            *x += l * d;
        }
    }
    xi
}

/// Containment `Γ_0(R) ⊂ Γ_0(r)` by sampling, or symmetric-difference witnesses for `m > 0`.
pub fn cone_nesting_check(n: usize, m: usize, big: u64, small: u64, samples: usize, seed: u64) -> Result<NestingReport> {
    if small > big {
        return Err(Error::Invalid("requires r <= R".into()));
    }
    if m + 1 > n {
        return Err(Error::Invalid(format!("cone order m = {m} must satisfy m <= n - 1")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (bf, sf) = (big as f64, small as f64);
    let mut report = NestingReport {
        n,
        m,
        big,
        small,
        samples,
        violations: 0,
        witness_big_minus_small: None,
        witness_small_minus_big: None,
    };
    if m == 0 {
        for _ in 0..samples {
            let xi = sample_cone_point(n, 0, bf, &mut rng);
            if !cone_contains(n, 0, sf, &xi) {
                report.violations += 1;
                if report.witness_big_minus_small.is_none() {
                    report.witness_big_minus_small = Some(xi);
                }
            }
        }
        return Ok(report);
    }
    // candidates from {0}^m x S^{-m/n} Γ_0^{n-m+1}(S^{(n-m)/n}) at S = R and S = r
    let nd = n - m;
    let embed = |scale: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let inner = sample_cone_point(nd, 0, scale.powf(nd as f64 / n as f64), rng);
        let f = scale.powf(-(m as f64) / n as f64);
        let mut xi = vec![0.0; m];
        xi.extend(inner.iter().map(|v| v * f));
        xi
    };
    for _ in 0..samples {
        if report.witness_big_minus_small.is_none() {
            let xi = embed(bf, &mut rng);
            if cone_contains(n, m, bf, &xi) && !cone_contains(n, m, sf, &xi) {
                report.witness_big_minus_small = Some(xi);
            }
        }
        if report.witness_small_minus_big.is_none() {
            let xi = embed(sf, &mut rng);
            if cone_contains(n, m, sf, &xi) && !cone_contains(n, m, bf, &xi) {
                report.witness_small_minus_big = Some(xi);
            }
        }
        if report.witness_big_minus_small.is_some() && report.witness_small_minus_big.is_some() {
            break;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct L2TechParams {
    pub big_c: f64,
    pub small_c: f64,
    /// `|T| <= 1/l_cap`.
    pub l_cap: f64,
}

impl Default for L2TechParams {
    fn default() -> Self {
        L2TechParams { big_c: 2.0, small_c: 0.5, l_cap: 8.0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct L2TechReport {
    pub n: usize,
    pub r: f64,
    pub lambda: f64,
    pub trials: usize,
    pub max_t: f64,
    /// `max_t * r^(1/n)`.
    pub c_probe: f64,
}

/// One random admissible coefficient system for the two-point Taylor hypothesis.
struct HSystem {
    h2: Vec<Vec<f64>>,
    err: Vec<f64>,
    tol: f64,
}

impl HSystem {
    fn admissible(&self, t: f64) -> bool {
        let n = self.h2.len();
        (1..=n).all(|k| {
            let row = &self.h2[k - 1];
            let s: f64 = (0..k).map(|i| row[i] * t.powi((k - i) as i32) / factorial(k - i)).sum();
            (self.err[k - 1] - s).abs() <= self.tol
        })
    }
}

/// Largest `|T|` admissible for random coefficient systems, via scan then bisection.
pub fn l2tech_overlap_probe(n: usize, r: f64, lambda: f64, trials: usize, seed: u64, prm: L2TechParams) -> Result<L2TechReport> {
    let hw = |i: usize| r.powf(-(i as f64) / n as f64);
    let (cc, c) = (prm.big_c, prm.small_c);
    // signed constraints are feasible only where c lambda <= C min(hw_i, lambda)
    let signable: Vec<usize> = (0..n).filter(|&i| c * lambda <= cc * hw(i).min(lambda)).collect();
    let k0_choices: Vec<usize> = (0..n).filter(|&i| c * hw(i) <= cc * hw(i).min(lambda)).collect();
    if signable.is_empty() || k0_choices.is_empty() {
        return Err(Error::Invalid("no admissible coefficient system for this lambda".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tcap = 1.0 / prm.l_cap;
    let mut max_t = 0.0f64;
    for _ in 0..trials {
        let mut signs = vec![0i32; n];
        loop {
            for &i in &signable {
                signs[i] = rng.gen_range(-1..=1);
            }
            if signs.iter().any(|&s| s != 0) {
                break;
            }
        }
        let k0 = k0_choices[rng.gen_range(0..k0_choices.len())];
        let mut h2 = vec![vec![0.0; n + 1]; n];
        for row in h2.iter_mut() {
            for (i, h) in row.iter_mut().enumerate() {
                let ub = cc * hw(i).min(lambda);
                let mut lo = 0.0;
                if i < n && signs[i] != 0 {
                    lo = c * lambda;
                }
                if i == k0 {
                    lo = f64::max(lo, c * hw(i));
                }
                // log-uniform when unconstrained below, so near-degenerate systems are visited
                let mag = if lo == 0.0 {
                    ub * r.powf(-3.0 * rng.gen::<f64>())
                } else {
                    rng.gen_range(lo.min(ub)..=ub)
                };
                let sign = if i < n && signs[i] != 0 {
                    signs[i] as f64
                } else if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                };
                *h = sign * mag;
            }
        }
        let tol = cc * lambda / r;
        let err: Vec<f64> = (0..n).map(|_| rng.gen_range(-tol..=tol)).collect();
        let sys = HSystem { h2, err, tol };
        debug_assert!(sys.admissible(0.0));
        for sign in [1.0, -1.0] {
            const SCAN: usize = 20_000;
            let step = tcap / SCAN as f64;
            let mut last = 0usize;
            for g in 1..=SCAN {
                if sys.admissible(sign * g as f64 * step) {
                    last = g;
                }
            }
            let (mut lo, mut hi) = (last as f64 * step, ((last + 1) as f64 * step).min(tcap));
            if last < SCAN {
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if sys.admissible(sign * mid) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
            }
            max_t = max_t.max(lo);
        }
    }
    Ok(L2TechReport { n, r, lambda, trials, max_t, c_probe: max_t * r.powf(1.0 / n as f64) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curves() {
        assert_eq!(moment_curve(3, 0.0), vec![0.0, 0.0, 0.0]);
        assert_eq!(moment_curve(2, 1.0), vec![1.0, 1.0]);
        assert_eq!(moment_curve(4, 0.5), vec![0.5, 0.25, 0.125, 0.0625]);
        assert_eq!(phi_curve(2, 0.0), vec![1.0, 0.0, 0.0]);
        assert_eq!(phi_curve(2, 1.0), vec![1.0, 1.0, 0.5]);
        assert_eq!(phi_derivative(2, 1, 0.0), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn partitions() {
        let b = partition_moment(2, 16).unwrap();
        let t0: Vec<f64> = b.iter().map(|b| b.t0).collect();
        assert_eq!(t0, vec![0.0, 0.25, 0.5, 0.75]);
        assert_eq!(partition_moment(3, 512).unwrap().len(), 8);
        assert!(partition_moment(2, 15).is_err());
        assert_eq!(partition_cone(2, 0, 16, 1.0).unwrap().len(), 4);
        assert_eq!(partition_cone(2, 1, 16, 0.5).unwrap().len(), 8);
        assert!(partition_cone(2, 2, 16, 1.0).is_err());
    }

    #[test]
    fn membership() {
        for blk in partition_moment(3, 64).unwrap() {
            assert!(blk.contains(&blk.center()).unwrap());
            let on_curve = moment_curve(3, blk.t0 + blk.width / 2.0);
            assert!(blk.contains(&on_curve).unwrap());
            let mut lam = vec![0.0; 3];
            lam[0] = 2.0 * blk.width;
            assert!(!blk.contains(&blk.point(&lam)).unwrap());
        }
    }

    #[test]
    fn dual_boxes() {
        let b = &partition_moment(2, 16).unwrap()[0];
        let d = dual_box(b).unwrap();
        assert!((d.axes[0][0] - 1.0).abs() < 1e-15 && d.axes[0][1].abs() < 1e-15);
        assert!((d.axes[1][1] - 1.0).abs() < 1e-15 && d.axes[1][0].abs() < 1e-15);
        assert_eq!(d.half_lengths, vec![4.0, 16.0]);
        let b3 = &partition_moment(3, 64).unwrap()[0];
        let d3 = dual_box(b3).unwrap();
        assert_eq!(d3.half_lengths, vec![4.0, 16.0, 64.0]);
        for blk in partition_moment(3, 64).unwrap() {
            assert!(dual_box(&blk).unwrap().orthonormality_residual() < 1e-12);
        }
    }

    #[test]
    fn frame_determinant_uniform() {
        for n in 1..=4 {
            let dets: Vec<f64> = (0..=20)
                .map(|i| determinant(&moment_frame(n, i as f64 / 20.0)).abs())
                .collect();
            let (lo, hi) = dets.iter().fold((f64::MAX, 0.0f64), |(l, h), d| (l.min(*d), h.max(*d)));
            assert!((hi / lo).ln() < 3.0);
            let pd: Vec<f64> = (0..=20).map(|i| determinant(&phi_frame(n, i as f64 / 20.0)).abs()).collect();
            assert!(pd.iter().all(|d| (d - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn diagonal_pair_meets_itself() {
        let rep = sumset_overlap_census(2, 16, 1 << 20).unwrap();
        assert!(rep.histogram[0] == 0);
        assert!(rep.max_overlap >= 1);
    }

    #[test]
    fn census_cap() {
        assert!(matches!(sumset_overlap_census(2, 256, 10), Err(Error::Cap(_))));
    }

    #[test]
    fn nesting_equal_scales_has_no_difference() {
        let rep = cone_nesting_check(2, 1, 256, 256, 200, 3).unwrap();
        assert!(rep.witness_big_minus_small.is_none() && rep.witness_small_minus_big.is_none());
    }

    #[test]
    fn l2tech_zero_admissible() {
        let rep = l2tech_overlap_probe(1, 256.0, 1.0, 20, 1, L2TechParams::default()).unwrap();
        assert!(rep.max_t * 256.0 < 20.0);
    }
}
