//! Multi-scale pruning, the high/low split and the cascade of integral bounds.
//!
//! Pieces at level `k` live on slabs of width `2^-a_k`; a piece is stored as its
//! grid samples, and an empty vector stands for the zero function.

use serde::Serialize;

use crate::exponents::even_exponent;
use crate::fft::NdFft;
use crate::field::{fourier_leakage, DiscreteField, Grid, TileMap, Tiling};
use crate::geometry::MomentBlock;
use crate::weights::omega_block;
use crate::{admissible_exponent, Error, Result, C64};

pub type Pieces = Vec<Vec<C64>>;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Scales `1 = R_0 < … < R_N = R` near `R^{kε}`, rounded to powers of 8.
#[derive(Debug, Clone, Serialize)]
pub struct ScaleLadder {
    pub n: usize,
    pub r: u64,
    pub epsilon: f64,
    pub levels: usize,
    pub scales: Vec<u64>,
    /// `a_k = floor(log2 R_k / n)`, the slab width exponent at level `k`.
    pub width_exps: Vec<u32>,
    /// Decay of `ω_{τ_k}`: `4n + (N - k)`.
    pub kappas: Vec<f64>,
    pub k_const: f64,
    pub a_const: f64,
    /// Lowest pruned level.
    pub n0: usize,
}

pub fn build_ladder(n: usize, r: u64, epsilon: f64, k_const: f64, a_const: f64, n0: usize) -> Result<ScaleLadder> {
    let b = admissible_exponent(n, r).ok_or_else(|| Error::Scale(format!("R = {r} is not a power of 2^{n}")))?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Invalid(format!("epsilon = {epsilon} must lie in (0, 1)")));
    }
    if !(k_const >= 1.0 && a_const >= 1.0) {
        return Err(Error::Invalid("K and A must be at least 1".into()));
    }
    let levels = (1.0 / epsilon - 1e-9).ceil() as usize;
    if levels < 2 {
        return Err(Error::Scale(format!("epsilon = {epsilon} gives fewer than two levels")));
    }
    if n0 >= levels {
        return Err(Error::Invalid(format!("N0 = {n0} must be below N = {levels}")));
    }
    let log8 = (r as f64).log2() / 3.0;
    let mut scales = Vec::with_capacity(levels + 1);
    for k in 0..=levels {
        let s = if k == levels {
            r
        } else {
            let x = (k as f64 * epsilon * log8).min(log8);
            // nearest power of 8, ties toward the smaller one
            let j = (x - 0.5 - 1e-12).ceil().max(0.0) as u32;
            (8u64.pow(j)).min(r)
        };
        scales.push(s);
    }
    let width_exps = scales
        .iter()
        .enumerate()
        .map(|(k, &s)| if k == levels { b } else { (s.trailing_zeros() / n as u32).min(b) })
        .collect();
    let kappas = (0..=levels).map(|k| 4.0 * n as f64 + (levels - k) as f64).collect();
    Ok(ScaleLadder { n, r, epsilon, levels, scales, width_exps, kappas, k_const, a_const, n0 })
}

impl ScaleLadder {
    pub fn b(&self) -> u32 {
        self.width_exps[self.levels]
    }

    /// `K³ A^{N-k+1} β / α`.
    pub fn threshold(&self, k: usize, alpha: f64, beta: f64) -> f64 {
        self.k_const.powi(3) * self.a_const.powi((self.levels - k + 1) as i32) * beta / alpha
    }

    /// Smallest level whose slabs are strictly finer than `2^-a`, or `N`.
    pub fn level_for(&self, a: u32) -> usize {
        (0..=self.levels).find(|&k| self.width_exps[k] > a).unwrap_or(self.levels)
    }
}

/// Sum pieces at width `2^-from` into their parents at width `2^-to`.
pub fn coarsen(pieces: &[Vec<C64>], from: u32, to: u32) -> Result<Pieces> {
    if to > from {
        return Err(Error::Invalid(format!("cannot refine width 2^-{from} to 2^-{to}")));
    }
    let per = 1usize << (from - to);
    Ok(pieces
        .chunks(per)
        .map(|kids| {
            let mut acc: Vec<C64> = Vec::new();
            for k in kids.iter().filter(|k| !k.is_empty()) {
                if acc.is_empty() {
                    acc = k.clone();
                } else {
                    acc.iter_mut().zip(k).for_each(|(a, v)| *a += v);
                }
            }
            acc
        })
        .collect())
}

#[cfg(test)]
fn total(pieces: &[Vec<C64>], len: usize) -> Vec<C64> {
    let mut acc = vec![ZERO; len];
    for p in pieces.iter().filter(|p| !p.is_empty()) {
        acc.iter_mut().zip(p).for_each(|(a, v)| *a += v);
    }
    acc
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelPrune {
    pub k: usize,
    pub threshold: f64,
    pub tiles: usize,
    pub pruned_tiles: usize,
    /// `max |f^k_τ| / threshold`; at most `2^{n/2}`.
    pub sup_ratio: f64,
    /// Points where `|f^k_τ| > |f^{k+1}_τ|`.
    pub monotone_violations: usize,
}

/// The pruned pieces `f^k_{τ_k}` and the pre-pruning sums `f^{k+1}_{τ_k}`.
#[derive(Debug, Clone)]
pub struct PruneState {
    pub field: DiscreteField,
    pub ladder: ScaleLadder,
    pub alpha: f64,
    pub beta: f64,
    /// Indexed by level; levels below `n0` are empty. Level `N` holds `f_θ`.
    pub pruned: Vec<Pieces>,
    /// `upper[k][τ] = Σ_{τ' ⊂ τ} f^{k+1}_{τ'}` for `n0 <= k < N`.
    pub upper: Vec<Pieces>,
    pub report: Vec<LevelPrune>,
}

/// Prune wave packets of amplitude above the level threshold, from level `N-1` down to `N0`.
pub fn prune(field: &DiscreteField, ladder: &ScaleLadder, alpha: f64, beta: f64) -> Result<PruneState> {
    if field.n() != ladder.n || field.lattice.r() != ladder.r {
        return Err(Error::Invalid("ladder does not match the field".into()));
    }
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::Invalid("alpha and beta must be positive".into()));
    }
    let big_n = ladder.levels;
    let mut pruned: Vec<Pieces> = vec![Vec::new(); big_n + 1];
    let mut upper: Vec<Pieces> = vec![Vec::new(); big_n + 1];
    pruned[big_n] =
        (0..field.blocks.len()).map(|i| if field.is_zero_block(i) { Vec::new() } else { field.component_samples(i) }).collect();
    let mut report = Vec::new();
    let half_n = (field.n() as f64 / 2.0).exp2();
    for k in (ladder.n0..big_n).rev() {
        let a = ladder.width_exps[k];
        let up = coarsen(&pruned[k + 1], ladder.width_exps[k + 1], a)?;
        let thr = ladder.threshold(k, alpha, beta);
        let mut level = LevelPrune { k, threshold: thr, tiles: 0, pruned_tiles: 0, sup_ratio: 0.0, monotone_violations: 0 };
        let mut out = Vec::with_capacity(up.len());
        for (tau, u) in up.iter().enumerate() {
            if u.is_empty() {
                out.push(Vec::new());
                continue;
            }
            let map = TileMap::new(Tiling::new(&field.lattice, a, tau)?, &field.grid);
            let amp = map.amplitudes(u);
            let good: Vec<bool> = amp.iter().map(|&v| v <= thr).collect();
            level.tiles += amp.len();
            level.pruned_tiles += good.iter().filter(|g| !**g).count();
            let w = map.window(&good);
            let f: Vec<C64> = u.iter().zip(&w).map(|(v, s)| v * s).collect();
            for (x, y) in f.iter().zip(u) {
                let (fx, fy) = (x.norm(), y.norm());
                if fx > fy * (1.0 + 1e-12) + 1e-300 {
                    level.monotone_violations += 1;
                }
                if thr.is_finite() {
                    level.sup_ratio = level.sup_ratio.max(fx / thr);
                }
            }
            out.push(f);
        }
        if level.sup_ratio > half_n * (1.0 + 1e-9) {
            return Err(Error::Invalid(format!("pruned level {k} exceeds its sup bound")));
        }
        pruned[k] = out;
        upper[k] = up;
        report.push(level);
    }
    report.reverse();
    Ok(PruneState { field: field.clone(), ladder: ladder.clone(), alpha, beta, pruned, upper, report })
}

impl PruneState {
    /// No pruning at all: every threshold is infinite.
    pub fn unpruned(field: &DiscreteField, ladder: &ScaleLadder) -> Result<Self> {
        prune(field, ladder, 1.0, f64::INFINITY)
    }

    pub fn grid(&self) -> &Grid {
        &self.field.grid
    }

    /// Largest fraction of spectral mass of a pruned piece outside `3τ_k`.
    pub fn support_leakage(&self) -> Result<f64> {
        let mut worst = 0.0f64;
        for k in self.ladder.n0..self.ladder.levels {
            let s = (-(self.ladder.width_exps[k] as f64)).exp2();
            for (tau, f) in self.pruned[k].iter().enumerate() {
                if f.is_empty() {
                    continue;
                }
                let block = MomentBlock::new(self.ladder.n, tau, s);
                worst = worst.max(fourier_leakage(&self.field, f, &block, 3.0)?);
            }
        }
        Ok(worst)
    }
}

/// `Σ_τ (|F_τ|^power * ω_{τ,κ})` for pieces at width `2^-a`.
pub fn weighted_sum(grid: &Grid, n: usize, pieces: &[Vec<C64>], a: u32, kappa: f64, power: f64) -> Result<Vec<f64>> {
    let fft = NdFft::new(&grid.sides);
    let len = grid.len();
    let s = (-(a as f64)).exp2();
    let mut acc = vec![ZERO; len];
    for (tau, f) in pieces.iter().enumerate() {
        if f.is_empty() {
            continue;
        }
        let mut z: Vec<C64> = f.iter().map(|v| C64::new(v.norm().powf(power), 0.0)).collect();
        fft.forward(&mut z);
        let mult = grid.multiplier(&omega_block(&MomentBlock::new(n, tau, s), kappa)?)?;
        for ((o, v), m) in acc.iter_mut().zip(&z).zip(&mult) {
            *o += v * m;
        }
    }
    fft.inverse(&mut acc);
    Ok(acc.iter().map(|v| v.re / len as f64).collect())
}

/// `g_k = Σ_{τ_k} |f^{k+1}_{τ_k}|² * ω_{τ_k}`; `g_N = Σ_θ |f_θ|² * ω_{θ,D}`.
pub fn g(state: &PruneState, k: usize) -> Result<Vec<f64>> {
    let l = &state.ladder;
    if k < l.n0 || k > l.levels {
        return Err(Error::Invalid(format!("level {k} is outside [{}, {}]", l.n0, l.levels)));
    }
    let pieces = if k == l.levels { &state.pruned[k] } else { &state.upper[k] };
    weighted_sum(state.grid(), l.n, pieces, l.width_exps[k], l.kappas[k], 2.0)
}

/// Smooth radial cutoff: 1 on `[0, 1/2]`, 0 on `[1, ∞)`.
pub fn radial_cutoff(r: f64) -> f64 {
    let h = |t: f64| if t > 0.0 { (-1.0 / t).exp() } else { 0.0 };
    let t = 2.0 * (1.0 - r);
    if t >= 1.0 {
        1.0
    } else if t <= 0.0 {
        0.0
    } else {
        h(t) / (h(t) + h(1.0 - t))
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    pub cutoff: f64,
    /// Spectral mass fraction of `high` beyond `10·2^-a_k`.
    pub outer_leakage: f64,
    /// Largest `|ĝ_high|` inside the half-cutoff ball; zero by construction.
    pub inner_residue: f64,
}

/// `g = g_low + g_high` with `ĝ_low = ĝ η(|ξ| / 2^-a_{k+1})`.
pub fn highlow_split(values: &[f64], grid: &Grid, ladder: &ScaleLadder, k: usize) -> Result<Split> {
    if k >= ladder.levels {
        return Err(Error::Invalid(format!("no level above {k}")));
    }
    let cutoff = (-(ladder.width_exps[k + 1] as f64)).exp2();
    let outer = 10.0 * (-(ladder.width_exps[k] as f64)).exp2();
    let fft = NdFft::new(&grid.sides);
    let len = grid.len();
    let mut z: Vec<C64> = values.iter().map(|&v| C64::new(v, 0.0)).collect();
    fft.forward(&mut z);
    let mut low = z.clone();
    let mut buf = vec![0; grid.sides.len()];
    let (mut out_mass, mut mass, mut inner) = (0.0, 0.0, 0.0f64);
    for (i, (l, v)) in low.iter_mut().zip(&z).enumerate() {
        let xi = grid.frequency(i, &mut buf);
        let r = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
        let eta = radial_cutoff(r / cutoff);
        *l = v * eta;
        let h = (v * (1.0 - eta)).norm_sqr();
        mass += h;
        if r > outer {
            out_mass += h;
        }
        if r <= cutoff / 2.0 {
            inner = inner.max(h.sqrt());
        }
    }
    fft.inverse(&mut low);
    let low: Vec<f64> = low.iter().map(|v| v.re / len as f64).collect();
    let high = values.iter().zip(&low).map(|(g, l)| g - l).collect();
    Ok(Split { low, high, cutoff, outer_leakage: if mass > 0.0 { out_mass / mass } else { 0.0 }, inner_residue: inner })
}

#[derive(Debug, Clone, Serialize)]
pub struct LowRatio {
    pub k: usize,
    /// `sup |g_low_k| / g_{k+1}` over points with `g_{k+1}` above the floor.
    pub ratio: f64,
    pub points: usize,
}

/// The ladder with `A = 10 D̃`, `D̃` measured on the unpruned field.
pub fn calibrate(field: &DiscreteField, ladder: &ScaleLadder) -> Result<ScaleLadder> {
    let d = measure_low_constant(&PruneState::unpruned(field, ladder)?)?;
    let mut out = ladder.clone();
    out.a_const = (10.0 * d).max(1.0);
    Ok(out)
}

/// Relative floor on `g_{k+1}` below which points are skipped.
pub const LOW_FLOOR: f64 = 1e-12;

pub fn low_lemma_ratio(low: &[f64], next: &[f64], k: usize) -> LowRatio {
    let top = next.iter().cloned().fold(0.0f64, f64::max);
    let mut ratio = 0.0f64;
    let mut points = 0;
    for (l, g) in low.iter().zip(next) {
        if *g > LOW_FLOOR * top {
            ratio = ratio.max(l.abs() / g);
            points += 1;
        }
    }
    LowRatio { k, ratio, points }
}

/// `max_k sup |g_low_k| / g_{k+1}` over all levels of `state`.
pub fn measure_low_constant(state: &PruneState) -> Result<f64> {
    let l = &state.ladder;
    let mut next = g(state, l.levels)?;
    let mut worst = 0.0f64;
    for k in (l.n0..l.levels).rev() {
        let gk = g(state, k)?;
        let split = highlow_split(&gk, state.grid(), l, k)?;
        worst = worst.max(low_lemma_ratio(&split.low, &next, k).ratio);
        next = gk;
    }
    Ok(worst)
}

/// The partition of the level set `U_{α,β}` into `Ω_k` and the low set `L`.
#[derive(Debug, Clone)]
pub struct LevelSets {
    pub in_u: Vec<bool>,
    /// `Some(k)` for points of `Ω_k`, `None` for points of `L` or outside `U`.
    pub omega: Vec<Option<usize>>,
    pub counts: SetCounts,
}

#[derive(Debug, Clone, Serialize)]
pub struct SetCounts {
    pub u: usize,
    /// `|Ω_k|` indexed by level.
    pub omega: Vec<usize>,
    pub low: usize,
}

/// `U = {|f| >= α, β/2 <= S_w <= β}`, `Ω_k = {g_k >= A^{N-k} β}` minus the higher sets.
pub fn important_sets(state: &PruneState, f_abs: &[f64], gs: &[Vec<f64>]) -> Result<LevelSets> {
    let l = &state.ladder;
    if gs.len() != l.levels + 1 {
        return Err(Error::Invalid("need g_k for every level".into()));
    }
    let (alpha, beta) = (state.alpha, state.beta);
    let sw = &gs[l.levels];
    let len = f_abs.len();
    let in_u: Vec<bool> = (0..len).map(|x| f_abs[x] >= alpha && sw[x] >= beta / 2.0 && sw[x] <= beta).collect();
    let mut omega = vec![None; len];
    let mut counts = SetCounts { u: 0, omega: vec![0; l.levels + 1], low: 0 };
    for x in 0..len {
        if !in_u[x] {
            continue;
        }
        counts.u += 1;
        let hit = (l.n0..l.levels).rev().find(|&k| gs[k][x] >= l.a_const.powi((l.levels - k) as i32) * beta);
        match hit {
            Some(k) => {
                omega[x] = Some(k);
                counts.omega[k] += 1;
            }
            None => counts.low += 1,
        }
    }
    Ok(LevelSets { in_u, omega, counts })
}

/// Points of `Ω_k` where `g_k > 2|g_high_k|` fails.
pub fn high_dominance_check(sets: &LevelSets, gk: &[f64], high: &[f64], k: usize) -> usize {
    sets.omega
        .iter()
        .enumerate()
        .filter(|(x, o)| **o == Some(k) && !(gk[*x] <= 2.0 * high[*x].abs()))
        .count()
}

#[derive(Debug, Clone, Serialize)]
pub struct PruningError {
    pub width_exp: u32,
    /// `α / (A^{1/2} K³)`.
    pub bound: f64,
    /// Largest normalised error on each `Ω_k`, indexed by level.
    pub omega: Vec<f64>,
    pub low: f64,
}

/// `max_τ |f_τ - Σ_{τ_k ⊂ τ} f^{k+1}_{τ_k}|` on `Ω_k` (and with `f^{N0}` on `L`) at width `2^-a_s`.
pub fn pruning_error_check(state: &PruneState, sets: &LevelSets, a_s: u32) -> Result<PruningError> {
    let l = &state.ladder;
    if a_s > l.width_exps[l.n0] {
        return Err(Error::Invalid(format!("check width 2^-{a_s} is finer than level N0")));
    }
    let bound = state.alpha / (l.a_const.sqrt() * l.k_const.powi(3));
    let full = coarsen(&state.pruned[l.levels], l.b(), a_s)?;
    let worst = |approx: &Pieces, keep: &dyn Fn(usize) -> bool| -> f64 {
        let mut m = 0.0f64;
        for (f, g) in full.iter().zip(approx) {
            for x in (0..sets.omega.len()).filter(|&x| keep(x)) {
                let a = f.get(x).copied().unwrap_or(ZERO);
                let b = g.get(x).copied().unwrap_or(ZERO);
                m = m.max((a - b).norm());
            }
        }
        m / bound
    };
    let mut omega = vec![0.0; l.levels + 1];
    for (k, o) in omega.iter_mut().enumerate().take(l.levels).skip(l.n0) {
        let approx = coarsen(&state.upper[k], l.width_exps[k], a_s)?;
        *o = worst(&approx, &|x| sets.omega[x] == Some(k));
    }
    let approx = coarsen(&state.pruned[l.n0], l.width_exps[l.n0], a_s)?;
    let low = worst(&approx, &|x| sets.in_u[x] && sets.omega[x].is_none());
    Ok(PruningError { width_exp: a_s, bound, omega, low })
}

/// A candidate `(α, β)` pair from the dyadic levels of `S_w`.
#[derive(Debug, Clone, Serialize)]
pub struct LevelPair {
    pub alpha: f64,
    pub beta: f64,
    pub points: usize,
    /// `α^p |U_{α,β}|` in units of the grid cell.
    pub weight: f64,
}

/// `β = max S_w / 2^j` for `j < count`, with `α` the median of `|f|` on the β-level set.
pub fn level_pairs(f_abs: &[f64], sw: &[f64], p: f64, count: usize) -> Vec<LevelPair> {
    let top = sw.iter().cloned().fold(0.0f64, f64::max);
    let mut out = Vec::new();
    for j in 0..count {
        let beta = top / (j as f64).exp2();
        let mut vals: Vec<f64> =
            f_abs.iter().zip(sw).filter(|(_, s)| **s >= beta / 2.0 && **s <= beta).map(|(f, _)| *f).collect();
        if vals.is_empty() {
            continue;
        }
        vals.sort_by(f64::total_cmp);
        let alpha = vals[vals.len() / 2];
        if alpha <= 0.0 {
            continue;
        }
        let points = vals.iter().filter(|v| **v >= alpha).count();
        out.push(LevelPair { alpha, beta, points, weight: alpha.powf(p) * points as f64 });
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelReport {
    pub k: usize,
    pub low_ratio: f64,
    pub omega: usize,
    pub high_violations: usize,
    pub outer_leakage: f64,
    pub inner_residue: f64,
    pub pruning_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HighLowReport {
    pub ladder: ScaleLadder,
    pub alpha: f64,
    pub beta: f64,
    pub d_tilde: f64,
    pub sets: SetCounts,
    pub levels: Vec<LevelReport>,
    pub low_pruning_error: f64,
    pub prune: Vec<LevelPrune>,
}

/// Every high/low diagnostic for one `(α, β)` pair, with the check width `a_s = a_{N0}`.
pub fn analyze(field: &DiscreteField, ladder: &ScaleLadder, alpha: f64, beta: f64) -> Result<(PruneState, HighLowReport)> {
    let state = prune(field, ladder, alpha, beta)?;
    let l = &state.ladder;
    let gs: Vec<Vec<f64>> =
        (0..=l.levels).map(|k| if k < l.n0 { Ok(Vec::new()) } else { g(&state, k) }).collect::<Result<_>>()?;
    let f_abs: Vec<f64> = field.samples(None).iter().map(|v| v.norm()).collect();
    let sets = important_sets(&state, &f_abs, &gs)?;
    let err = pruning_error_check(&state, &sets, l.width_exps[l.n0])?;
    let mut levels = Vec::new();
    let mut d_tilde = 0.0f64;
    for k in l.n0..l.levels {
        let split = highlow_split(&gs[k], state.grid(), l, k)?;
        let low = low_lemma_ratio(&split.low, &gs[k + 1], k);
        d_tilde = d_tilde.max(low.ratio);
        levels.push(LevelReport {
            k,
            low_ratio: low.ratio,
            omega: sets.counts.omega[k],
            high_violations: high_dominance_check(&sets, &gs[k], &split.high, k),
            outer_leakage: split.outer_leakage,
            inner_residue: split.inner_residue,
            pruning_error: err.omega[k],
        });
    }
    let report = HighLowReport {
        ladder: l.clone(),
        alpha,
        beta,
        d_tilde,
        sets: sets.counts.clone(),
        levels,
        low_pruning_error: err.low,
        prune: state.report.clone(),
    };
    Ok((state, report))
}

#[derive(Debug, Clone, Serialize)]
pub struct BroadReport {
    pub k_blocks: usize,
    pub u_points: usize,
    pub broad_points: usize,
    /// Grid points where `|f| <= 2n max|f_τ| + K³ max |Π f_τi|^{1/n}` fails.
    pub violations: usize,
}

/// Broad part of `U_{α,β}` at block width `1/K`, with the pointwise broad-narrow inequality.
pub fn broad_set(field: &DiscreteField, k_exp: u32, alpha: f64, beta: f64, sw: &[f64]) -> Result<(Vec<bool>, BroadReport)> {
    let n = field.n();
    let k = 1usize << k_exp;
    if k < 2 * n - 1 {
        return Err(Error::Invalid(format!("K = {k} admits no {n}-tuple of separated blocks")));
    }
    let pieces = field.coarse_samples(k_exp)?;
    let total = field.samples(None);
    let kk = k as f64;
    let mut broad = vec![false; total.len()];
    let mut rep = BroadReport { k_blocks: k, u_points: 0, broad_points: 0, violations: 0 };
    let mut v = vec![0.0; k];
    // best[c][i]: largest product of c values from indices < i with gaps >= 2
    let mut best = vec![vec![0.0f64; k + 1]; n + 1];
    for x in 0..total.len() {
        for (t, p) in pieces.iter().enumerate() {
            v[t] = p[x].norm();
        }
        for row in best.iter_mut() {
            row.fill(0.0);
        }
        best[0].fill(1.0);
        for c in 1..=n {
            for i in 0..k {
                let take = if i == 0 {
                    if c == 1 { v[0] } else { 0.0 }
                } else {
                    best[c - 1][i - 1] * v[i]
                };
                best[c][i + 1] = best[c][i].max(take);
            }
        }
        let prod = best[n][k].powf(1.0 / n as f64);
        let narrow = v.iter().cloned().fold(0.0f64, f64::max);
        let fx = total[x].norm();
        if fx > 2.0 * n as f64 * narrow + kk.powi(3) * prod + 1e-12 * fx {
            rep.violations += 1;
        }
        if fx >= alpha && sw[x] >= beta / 2.0 && sw[x] <= beta {
            rep.u_points += 1;
            if alpha <= kk * prod && narrow <= alpha {
                broad[x] = true;
                rep.broad_points += 1;
            }
        }
    }
    Ok((broad, rep))
}

#[derive(Debug, Clone, Serialize)]
pub struct PigeonholeReport {
    pub classes: usize,
    /// `(upper amplitude, packets)` per dyadic class; the last class is the tail.
    pub class_sizes: Vec<(f64, usize)>,
    pub chosen: usize,
    pub amplitude: f64,
    /// Max over min packet amplitude in the chosen class.
    pub spread: f64,
    pub u_points: usize,
    pub retained: usize,
    pub retained_fraction: f64,
    /// `1 / classes`, guaranteed by pigeonholing.
    pub guaranteed: f64,
    pub log_bound: f64,
    /// `max_θ ‖Σ_{T kept} ψ_T f_θ‖_∞ / A`.
    pub sup_ratio: f64,
}

/// Keep the θ-packets of one dyadic amplitude class, chosen to retain most of `{|f| >= α}`.
pub fn pigeonhole_packets(field: &DiscreteField, alpha: f64) -> Result<(Vec<C64>, PigeonholeReport)> {
    let b = field.lattice.b;
    let r = field.lattice.r() as f64;
    let len = field.grid.len();
    let blocks = field.nonzero_blocks();
    let mut maps = Vec::new();
    let mut amps = Vec::new();
    let mut top = 0.0f64;
    for &t in &blocks {
        let map = TileMap::new(Tiling::new(&field.lattice, b, t)?, &field.grid);
        let f = field.component_samples(t);
        let mut amp = vec![0.0f64; map.tiling.count()];
        for (x, v) in f.iter().enumerate() {
            for (tile, w) in map.entries(x) {
                amp[tile] = amp[tile].max(w * v.norm());
            }
        }
        top = top.max(amp.iter().cloned().fold(0.0, f64::max));
        maps.push((map, f));
        amps.push(amp);
    }
    let floor = r.powf(-100.0 * field.n() as f64) * top;
    if top == 0.0 || alpha <= floor {
        return Err(Error::Degenerate("every packet lies below the degenerate threshold".into()));
    }
    let j = 2 * (r.log2().ceil() as usize) + 1;
    let classes = j + 1;
    let class_of = |a: f64| -> usize {
        if a <= 0.0 {
            return j;
        }
        ((top / a).log2().floor().max(0.0) as usize).min(j)
    };
    let mut parts = vec![vec![ZERO; len]; classes];
    let mut sizes = vec![0usize; classes];
    let mut lo = vec![f64::INFINITY; classes];
    let mut hi = vec![0.0f64; classes];
    for ((map, f), amp) in maps.iter().zip(&amps) {
        for &a in amp.iter().filter(|a| **a > 0.0) {
            let c = class_of(a);
            sizes[c] += 1;
            lo[c] = lo[c].min(a);
            hi[c] = hi[c].max(a);
        }
        for (x, v) in f.iter().enumerate() {
            for (tile, w) in map.entries(x) {
                parts[class_of(amp[tile])][x] += v * w;
            }
        }
    }
    let total = field.samples(None);
    let u: Vec<usize> = (0..len).filter(|&x| total[x].norm() >= alpha).collect();
    if u.is_empty() {
        return Err(Error::Degenerate(format!("no grid point has |f| >= {alpha}")));
    }
    let lvl = alpha / classes as f64;
    let counts: Vec<usize> = parts.iter().map(|p| u.iter().filter(|&&x| p[x].norm() >= lvl).count()).collect();
    let chosen = (0..classes).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap();
    let amplitude = hi[chosen];
    let mut sup_ratio = 0.0f64;
    for ((map, f), amp) in maps.iter().zip(&amps) {
        let keep: Vec<bool> = amp.iter().map(|&a| a > 0.0 && class_of(a) == chosen).collect();
        let w = map.window(&keep);
        let s = f.iter().zip(&w).map(|(v, w)| v.norm() * w).fold(0.0, f64::max);
        if amplitude > 0.0 {
            sup_ratio = sup_ratio.max(s / amplitude);
        }
    }
    let report = PigeonholeReport {
        classes,
        class_sizes: (0..classes).map(|c| (top / (c as f64).exp2(), sizes[c])).collect(),
        chosen,
        amplitude,
        spread: if sizes[chosen] > 0 { hi[chosen] / lo[chosen] } else { 1.0 },
        u_points: u.len(),
        retained: counts[chosen],
        retained_fraction: counts[chosen] as f64 / u.len() as f64,
        guaranteed: 1.0 / classes as f64,
        log_bound: 1.0 / r.ln(),
        sup_ratio,
    };
    Ok((parts.swap_remove(chosen), report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Branch {
    Low,
    High,
    Young,
    Terminal,
}

#[derive(Debug, Clone, Serialize)]
pub struct CascadeStep {
    pub step: usize,
    pub branch: Branch,
    /// Slab width `2^-a` after the step.
    pub sigma: f64,
    pub level: usize,
    pub exponent_index: u32,
    pub kappa: f64,
    pub value: f64,
    /// Previous value over the chosen term.
    pub constant: f64,
    /// Chosen term over the rejected one; 1 when there was no alternative.
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CascadeTrace {
    pub p: f64,
    pub k: usize,
    pub start: f64,
    pub final_value: f64,
    pub constant: f64,
    pub cap: usize,
    pub steps: Vec<CascadeStep>,
}

/// `∫ (Σ_τ |F_τ|^{p̃} * ω_{τ,κ})^{p/p̃}` with `F_τ` the level pieces summed to width `2^-a`.
fn cascade_term(state: &PruneState, level: usize, a: u32, l: u32, kappa: f64, p: f64) -> Result<f64> {
    let lad = &state.ladder;
    let from = lad.width_exps[level];
    let pieces = if a <= from { coarsen(&state.pruned[level], from, a)? } else {
        return Err(Error::Invalid(format!("level {level} pieces are coarser than 2^-{a}")));
    };
    let pt = even_exponent(l) as f64;
    let s = weighted_sum(state.grid(), lad.n, &pieces, a, kappa, pt)?;
    let cell = state.grid().cell();
    Ok(s.iter().map(|v| v.max(0.0).powf(p / pt)).sum::<f64>() * cell)
}

/// Follow the larger of the two admissible bounds at each step until the θ scale is reached.
pub fn unwind_cascade(state: &PruneState, k: usize, p: f64) -> Result<CascadeTrace> {
    let lad = &state.ladder;
    let n = lad.n;
    if k < lad.n0 || k >= lad.levels {
        return Err(Error::Invalid(format!("cascade level {k} is outside [{}, {})", lad.n0, lad.levels)));
    }
    if p < 2.0 {
        return Err(Error::Invalid(format!("p = {p} is below 2")));
    }
    let cap = (2.0 / lad.epsilon.powi(3)).ceil() as usize;
    let b = lad.b();
    let big_n = lad.levels;
    let kappa0 = lad.kappas[k];
    let kappa_at = |m: usize| (kappa0 - 0.5 * m as f64).max(n as f64 + 1.0);
    let d = lad.kappas[big_n];
    let final_value = cascade_term(state, big_n, b, 1, d, p)?;
    let start = {
        let s = g(state, k)?;
        s.iter().map(|v| v.max(0.0).powf(p / 2.0)).sum::<f64>() * state.grid().cell()
    };
    let single = state.field.nonzero_blocks().len() <= 1;
    let (mut a, mut level, mut l) = (lad.width_exps[k], k + 1, 1u32);
    let mut value = start;
    let mut steps = Vec::new();
    let mut m = 0usize;
    loop {
        if (a == b && l == 1) || single {
            let constant = if final_value > 0.0 { value / final_value } else { 1.0 };
            steps.push(CascadeStep {
                step: m,
                branch: Branch::Terminal,
                sigma: (-(b as f64)).exp2(),
                level: big_n,
                exponent_index: 1,
                kappa: d,
                value: final_value,
                constant,
                margin: 1.0,
            });
            break;
        }
        m += 1;
        if m > cap {
            return Err(Error::Cap(format!("cascade exceeded {cap} steps")));
        }
        let kappa = kappa_at(m);
        let ratio = p / even_exponent(l) as f64;
        let low_a = (a + 1).min(b);
        let low_level = level.max(lad.level_for(low_a)).min(big_n);
        let low = if a < b { Some(cascade_term(state, low_level, low_a, 1, kappa, p)?) } else { None };
        let other = if ratio >= 2.0 {
            let t = cascade_term(state, level, a, l + 1, kappa, p)?;
            Some((Branch::High, a, level, l + 1, t))
        } else if a < b || l > 1 {
            let na = lad.width_exps[level].max(a);
            let nl = (level + 1).max(lad.level_for(na)).min(big_n);
            let t = cascade_term(state, nl, na, 1, kappa, p)?;
            Some((Branch::Young, na, nl, 1, t))
        } else {
            None
        };
        let (branch, na, nl, nlx, t, margin) = match (low, other) {
            (Some(lo), Some((br, oa, ol, oi, t))) => {
                if t > 2.0 * lo {
                    (br, oa, ol, oi, t, if lo > 0.0 { t / lo } else { f64::INFINITY })
                } else {
                    (Branch::Low, low_a, low_level, 1, lo, if t > 0.0 { lo / t } else { f64::INFINITY })
                }
            }
            (Some(lo), None) => (Branch::Low, low_a, low_level, 1, lo, 1.0),
            (None, Some((br, oa, ol, oi, t))) => (br, oa, ol, oi, t, 1.0),
            (None, None) => return Err(Error::Invalid("cascade has no admissible step".into())),
        };
        let constant = if t > 0.0 { value / t } else { 1.0 };
        steps.push(CascadeStep {
            step: m,
            branch,
            sigma: (-(na as f64)).exp2(),
            level: nl,
            exponent_index: nlx,
            kappa,
            value: t,
            constant,
            margin,
        });
        a = na;
        level = nl;
        l = nlx;
        value = t;
    }
    let constant = if final_value > 0.0 { start / final_value } else { 1.0 };
    Ok(CascadeTrace { p, k, start, final_value, constant, cap, steps })
}
