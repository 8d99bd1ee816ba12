//! Dyadic weights `W(x) = Σ_j 2^{-κ j} |ψ̌|²(2^{-j} x)` and their calculus.
//!
//! `ψ` is the radial mollifier `exp(-1/(1-|ξ|²))` on the unit ball. Two
//! independent radial tables are kept: `ψ̌` (projection slice, then a cosine
//! transform) for spatial evaluation, and the autocorrelation `ψ*ψ` for the
//! Fourier side, where `Ŵ(η) = Σ_j 2^{j(n-κ)} (ψ*ψ)(2^j |η|)` is supported in
//! `|η| <= 2`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use serde::Serialize;

use crate::fft::{signed_freq, unflatten, NdFft};
use crate::geometry::{dual_box, determinant, MomentBlock};
use crate::{Error, Result, C64};

/// `ψ̌` is treated as zero beyond this radius.
pub const RHO_CUT: f64 = 64.0;
const CHECK_STEP: f64 = 1.0 / 128.0;
const AUTO_STEP: f64 = 1.0 / 512.0;

pub fn mollifier(rho: f64) -> f64 {
    if rho.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - rho * rho)).exp()
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if m == 1 {
                p1 = z;
                p0 = 1.0;
            }
            dp = m as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[m - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[m - 1 - i] = w[i];
    }
    (x, w)
}

/// Composite Gauss-Legendre rule on `[a, b]`.
fn integrate<F: Fn(f64) -> f64>(a: f64, b: f64, panels: usize, rule: &(Vec<f64>, Vec<f64>), f: F) -> f64 {
    if b <= a {
        return 0.0;
    }
    let h = (b - a) / panels as f64;
    let mut s = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        for (x, w) in rule.0.iter().zip(&rule.1) {
            s += w * f(lo + 0.5 * h * (x + 1.0));
        }
    }
    0.5 * h * s
}

/// Surface area of the unit sphere `S^k`.
pub fn sphere_area(k: usize) -> f64 {
    match k {
        0 => 2.0,
        1 => 2.0 * PI,
        _ => 2.0 * PI / (k as f64 - 1.0) * sphere_area(k - 2),
    }
}

/// Uniform radial table with Catmull-Rom interpolation, even about 0.
#[derive(Debug, Clone)]
struct RadialTable {
    step: f64,
    values: Vec<f64>,
}

impl RadialTable {
    fn eval(&self, rho: f64) -> f64 {
        let u = rho.abs() / self.step;
        let i = u.floor() as isize;
        let last = self.values.len() as isize - 1;
        if i >= last {
            return if i == last && u == last as f64 { self.values[last as usize] } else { 0.0 };
        }
        let at = |k: isize| -> f64 {
            let k = k.abs();
            if k > last {
                0.0
            } else {
                self.values[k as usize]
            }
        };
        let t = u - i as f64;
        let (p0, p1, p2, p3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
        0.5 * ((2.0 * p1)
            + (-p0 + p2) * t
            + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
            + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t * t)
    }
}

#[derive(Debug)]
pub struct Profiles {
    pub n: usize,
    check: RadialTable,
    auto: RadialTable,
}

impl Profiles {
    /// `ψ̌(ρ)` for the radial mollifier in dimension `n`.
    pub fn check(&self, rho: f64) -> f64 {
        self.check.eval(rho)
    }

    /// `(ψ*ψ)(ρ)`, zero for `ρ >= 2`.
    pub fn auto(&self, rho: f64) -> f64 {
        if rho.abs() >= 2.0 {
            0.0
        } else {
            self.auto.eval(rho)
        }
    }
}

fn build_profiles(n: usize) -> Profiles {
    let rule = gauss_legendre(48);
    // slice projection P(u) = ∫ ψ(√(u² + |ξ'|²)) dξ'
    let mu = 4096usize;
    let proj: Vec<f64> = (0..=mu)
        .map(|j| {
            let u = j as f64 / mu as f64;
            if n == 1 {
                return mollifier(u);
            }
            let a = (1.0 - u * u).max(0.0).sqrt();
            sphere_area(n - 2) * integrate(0.0, a, 4, &rule, |r| mollifier((u * u + r * r).sqrt()) * r.powi(n as i32 - 2))
        })
        .collect();
    // ψ̌(ρ) = ∫_{-1}^{1} P(u) cos(2πρu) du by the trapezoid rule on a smooth periodic integrand
    let hu = 1.0 / mu as f64;
    let nrho = (RHO_CUT / CHECK_STEP) as usize;
    let check: Vec<f64> = (0..=nrho)
        .map(|i| {
            let rho = i as f64 * CHECK_STEP;
            let w = 2.0 * PI * rho * hu;
            let mut s = 0.5 * proj[0];
            for (j, p) in proj.iter().enumerate().skip(1) {
                s += p * (w * j as f64).cos();
            }
            2.0 * hu * s
        })
        .collect();
    // autocorrelation with η = ρ e_1, ζ = (z, r ω')
    let nauto = (2.0 / AUTO_STEP) as usize;
    let auto: Vec<f64> = (0..=nauto)
        .map(|i| {
            let rho = i as f64 * AUTO_STEP;
            let (zlo, zhi) = (rho - 1.0, 1.0);
            if n == 1 {
                return integrate(zlo, zhi, 8, &rule, |z| mollifier(z) * mollifier(rho - z));
            }
            integrate(zlo, zhi, 8, &rule, |z| {
                let a = (1.0 - z * z).min(1.0 - (rho - z) * (rho - z));
                if a <= 0.0 {
                    return 0.0;
                }
                let rmax = a.sqrt();
                sphere_area(n - 2)
                    * integrate(0.0, rmax, 4, &rule, |r| {
                        mollifier((z * z + r * r).sqrt()) * mollifier(((rho - z).powi(2) + r * r).sqrt()) * r.powi(n as i32 - 2)
                    })
            })
        })
        .collect();
    Profiles { n, check: RadialTable { step: CHECK_STEP, values: check }, auto: RadialTable { step: AUTO_STEP, values: auto } }
}

/// Cached radial profiles for dimension `n`.
pub fn profiles(n: usize) -> Arc<Profiles> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Profiles>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(p) = cache.lock().unwrap().get(&n) {
        return p.clone();
    }
    let built = Arc::new(build_profiles(n));
    cache.lock().unwrap().entry(n).or_insert(built).clone()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Normalization {
    L1,
    LInf,
}

/// `x ↦ matrix (x - center)` maps the shape onto the unit ball.
#[derive(Debug, Clone, Serialize)]
pub struct Affine {
    pub center: Vec<f64>,
    pub matrix: Vec<Vec<f64>>,
}

impl Affine {
    pub fn identity(n: usize) -> Self {
        Affine {
            center: vec![0.0; n],
            matrix: (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect(),
        }
    }

    pub fn scaled(n: usize, radius: f64) -> Self {
        let mut a = Affine::identity(n);
        a.matrix.iter_mut().enumerate().for_each(|(i, row)| row[i] = 1.0 / radius);
        a
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix
            .iter()
            .map(|row| row.iter().zip(x).zip(&self.center).map(|((a, xi), c)| a * (xi - c)).sum())
            .collect()
    }

    /// `A^{-T} ξ`.
    pub fn dual(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let at: Vec<Vec<f64>> = (0..xi.len()).map(|i| (0..xi.len()).map(|j| self.matrix[j][i]).collect()).collect();
        solve_dense(&at, xi)
    }
}

fn solve_dense(m: &[Vec<f64>], rhs: &[f64]) -> Result<Vec<f64>> {
    let d = rhs.len();
    let mut a: Vec<Vec<f64>> = m.iter().zip(rhs).map(|(row, r)| {
        let mut v = row.clone();
        v.push(*r);
        v
    }).collect();
    for c in 0..d {
        let p = (c..d).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        if a[p][c].abs() < 1e-300 {
            return Err(Error::Degenerate("singular shape matrix".into()));
        }
        a.swap(p, c);
        for r in 0..d {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..=d {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    Ok((0..d).map(|i| a[i][d] / a[i][i]).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightSpec {
    pub n: usize,
    pub kappa: f64,
    pub shape: Affine,
    pub normalization: Normalization,
    /// Largest dyadic level; `None` truncates adaptively at relative tail `1e-12`.
    pub j_max: Option<u32>,
}

impl WeightSpec {
    pub fn new(n: usize, kappa: f64, shape: Affine, normalization: Normalization) -> Result<Self> {
        if kappa <= n as f64 {
            return Err(Error::Invalid(format!("kappa = {kappa} must exceed n = {n} for integrability")));
        }
        let det = determinant(&shape.matrix).abs();
        let scale = shape.matrix.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(det > 1e-12 * scale.powi(n as i32)) || !det.is_finite() {
            return Err(Error::Degenerate("shape matrix is singular".into()));
        }
        Ok(WeightSpec { n, kappa, shape, normalization, j_max: None })
    }

    pub fn unit(n: usize, kappa: f64) -> Self {
        WeightSpec::new(n, kappa, Affine::identity(n), Normalization::LInf).expect("unit ball is a valid shape")
    }

    fn factor(&self) -> f64 {
        match self.normalization {
            Normalization::LInf => 1.0,
            Normalization::L1 => determinant(&self.shape.matrix).abs() / radial_integral(self.n, self.kappa),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let y = self.shape.apply(x);
        let rho = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.factor() * radial_weight(self.n, self.kappa, rho, self.j_max)
    }

    /// Fourier transform at frequency `ξ` (for a shape centred at the origin).
    pub fn fourier(&self, xi: &[f64]) -> Result<C64> {
        let eta = self.shape.dual(xi)?;
        let rho = eta.iter().map(|v| v * v).sum::<f64>().sqrt();
        let det = determinant(&self.shape.matrix).abs();
        let phase: f64 = self.shape.center.iter().zip(xi).map(|(c, x)| c * x).sum();
        let mag = self.factor() / det * radial_fourier(self.n, self.kappa, rho);
        Ok(C64::from_polar(mag, -2.0 * PI * phase))
    }
}

/// `W(ρ)` for the unit ball.
pub fn radial_weight(n: usize, kappa: f64, rho: f64, j_max: Option<u32>) -> f64 {
    let prof = profiles(n);
    let peak = prof.check(0.0).powi(2);
    let mut sum = 0.0;
    let mut j = 0u32;
    loop {
        let scale = (-(j as f64)).exp2();
        let arg = rho * scale;
        let decay = (-kappa * j as f64).exp2();
        if arg < RHO_CUT {
            sum += decay * prof.check(arg).powi(2);
        }
        if let Some(m) = j_max {
            if j >= m {
                break;
            }
        } else if arg < 1.0 && decay * peak / (1.0 - (-kappa).exp2()) < 1e-12 * sum {
            break;
        }
        j += 1;
        if j > 4000 {
            break;
        }
    }
    sum
}

/// `∫ W = (ψ*ψ)(0) / (1 - 2^{n-κ})`.
pub fn radial_integral(n: usize, kappa: f64) -> f64 {
    profiles(n).auto(0.0) / (1.0 - (n as f64 - kappa).exp2())
}

/// `Ŵ(ρ)`; zero for `ρ >= 2`.
pub fn radial_fourier(n: usize, kappa: f64, rho: f64) -> f64 {
    radial_fourier_with(&profiles(n), n, kappa, rho)
}

fn radial_fourier_with(prof: &Profiles, n: usize, kappa: f64, rho: f64) -> f64 {
    if rho == 0.0 {
        return radial_integral(n, kappa);
    }
    let mut sum = 0.0;
    let mut j = 0i32;
    while rho * (j as f64).exp2() < 2.0 {
        sum += ((n as f64 - kappa) * j as f64).exp2() * prof.auto(rho * (j as f64).exp2());
        j += 1;
    }
    sum
}

/// L¹-normalized weight adapted to the dual box of `block`.
pub fn omega_block(block: &MomentBlock, kappa: f64) -> Result<WeightSpec> {
    let d = dual_box(block)?;
    let matrix: Vec<Vec<f64>> = d.axes.iter().zip(&d.half_lengths).map(|(a, h)| a.iter().map(|v| v / h).collect()).collect();
    WeightSpec::new(block.n, kappa, Affine { center: vec![0.0; block.n], matrix }, Normalization::L1)
}

/// A periodic sampling box `[-L_i/2, L_i/2)` with `sides[i]` points per axis.
#[derive(Debug, Clone, Serialize)]
pub struct PeriodicBox {
    pub lengths: Vec<f64>,
    pub sides: Vec<usize>,
}

impl PeriodicBox {
    pub fn cube(n: usize, length: f64, side: usize) -> Self {
        PeriodicBox { lengths: vec![length; n], sides: vec![side; n] }
    }

    pub fn len(&self) -> usize {
        self.sides.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, idx: usize, buf: &mut [usize]) -> Vec<f64> {
        unflatten(idx, &self.sides, buf);
        buf.iter()
            .zip(&self.sides)
            .zip(&self.lengths)
            .map(|((&a, &s), &l)| signed_freq(a, s) as f64 * l / s as f64)
            .collect()
    }

    pub fn frequency(&self, idx: usize, buf: &mut [usize]) -> Vec<f64> {
        unflatten(idx, &self.sides, buf);
        buf.iter()
            .zip(&self.sides)
            .zip(&self.lengths)
            .map(|((&a, &s), &l)| signed_freq(a, s) as f64 / l)
            .collect()
    }

    pub fn cell(&self) -> f64 {
        self.lengths.iter().zip(&self.sides).map(|(l, s)| l / *s as f64).product()
    }

    pub fn sample(&self, spec: &WeightSpec) -> Vec<f64> {
        let mut buf = vec![0; self.sides.len()];
        (0..self.len()).map(|i| spec.eval(&self.point(i, &mut buf))).collect()
    }

    /// `ŵ` at every grid frequency, for a weight centred at the origin.
    pub fn multiplier(&self, spec: &WeightSpec) -> Result<Vec<f64>> {
        let n = self.sides.len();
        // rows of A^{-T}: solve Aᵀ x = e_i column by column
        let at: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| spec.shape.matrix[j][i]).collect()).collect();
        let mut inv = vec![vec![0.0; n]; n];
        for c in 0..n {
            let mut e = vec![0.0; n];
            e[c] = 1.0;
            let col = solve_dense(&at, &e)?;
            for r in 0..n {
                inv[r][c] = col[r];
            }
        }
        let scale = spec.factor() / determinant(&spec.shape.matrix).abs();
        let prof = profiles(n);
        let mut buf = vec![0; n];
        let mut out = vec![0.0; self.len()];
        for (i, o) in out.iter_mut().enumerate() {
            let xi = self.frequency(i, &mut buf);
            let rho = inv.iter().map(|row| row.iter().zip(&xi).map(|(a, b)| a * b).sum::<f64>().powi(2)).sum::<f64>().sqrt();
            if rho < 2.0 {
                *o = scale * radial_fourier_with(&prof, n, spec.kappa, rho);
            }
        }
        Ok(out)
    }

    /// Periodic convolution of `data` with the weight, via the weight's Fourier transform.
    pub fn convolve(&self, data: &[f64], spec: &WeightSpec) -> Result<Vec<f64>> {
        let mut buf = vec![0; self.sides.len()];
        let mut z: Vec<C64> = data.iter().map(|&v| C64::new(v, 0.0)).collect();
        let fft = NdFft::new(&self.sides);
        fft.forward(&mut z);
        for (i, v) in z.iter_mut().enumerate() {
            *v *= spec.fourier(&self.frequency(i, &mut buf))?;
        }
        fft.inverse(&mut z);
        let norm = self.len() as f64;
        Ok(z.iter().map(|v| v.re / norm).collect())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CalculusReport {
    pub n: usize,
    pub kappa: f64,
    /// `(1+|x|)^κ W(x)` lies in `[c_lo, c_hi]` over the sampled radii.
    pub decay_c_lo: f64,
    pub decay_c_hi: f64,
    pub log2_ratio_1_8: f64,
    /// Share of spectral energy outside `|ξ| <= 2`, measured from spatial samples.
    pub fourier_tail: f64,
    /// `sup (W̃*W̃)/W̃` on the coarse and refined grids.
    pub self_conv: [f64; 2],
    /// `sup W_{A1}/W_{A2}` for `A1 ⊂ A2`.
    pub monotone_c: f64,
    /// `sup (W̃_{κ}*W̃_{κ-2})/W̃_{κ-2}` on the coarse and refined grids.
    pub mixed_conv: [f64; 2],
    pub drift_self: f64,
    pub drift_mixed: f64,
    pub pass: bool,
    pub notes: Vec<String>,
}

fn sup_ratio(num: &[f64], den: &[f64], pts: &PeriodicBox, radius: f64) -> f64 {
    let mut buf = vec![0; pts.sides.len()];
    let mut best = 0.0f64;
    for i in 0..num.len() {
        let x = pts.point(i, &mut buf);
        if x.iter().map(|v| v * v).sum::<f64>().sqrt() <= radius {
            best = best.max(num[i] / den[i]);
        }
    }
    best
}

/// Default coarse box for the calculus checks: spacing `1/4`, so frequencies up to `2` are resolved.
pub fn calculus_box(n: usize) -> PeriodicBox {
    match n {
        1 => PeriodicBox::cube(1, 256.0, 4096),
        2 => PeriodicBox::cube(2, 64.0, 256),
        _ => PeriodicBox::cube(n, 16.0, 64),
    }
}

/// Properties 1-3 of the weight calculus on `grid` and on its 2x refinement.
pub fn verify_weight_calculus(n: usize, kappa: f64, grid: &PeriodicBox) -> Result<CalculusReport> {
    if grid.sides.len() != n || grid.sides.iter().zip(&grid.lengths).any(|(s, l)| (*s as f64) / l < 4.0) {
        return Err(Error::Invalid("calculus grid must have spacing <= 1/4 in every axis".into()));
    }
    let unit = WeightSpec::unit(n, kappa);
    let mut notes = Vec::new();
    // property 1
    let (mut lo, mut hi) = (f64::MAX, 0.0f64);
    for i in 0..=2048 {
        let rho = i as f64 / 8.0;
        let v = radial_weight(n, kappa, rho, None) * (1.0 + rho).powf(kappa);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let log2_ratio_1_8 = (radial_weight(n, kappa, 1.0, None) / radial_weight(n, kappa, 8.0, None)).log2();
    let refined = PeriodicBox { lengths: grid.lengths.clone(), sides: grid.sides.iter().map(|s| 2 * s).collect() };
    // property 2: spectral energy of spatial samples outside |ξ| <= 2
    let samples = refined.sample(&unit);
    let mut z: Vec<C64> = samples.iter().map(|&v| C64::new(v, 0.0)).collect();
    NdFft::new(&refined.sides).forward(&mut z);
    let mut buf = vec![0; n];
    let (mut inside, mut outside) = (0.0, 0.0);
    for (i, v) in z.iter().enumerate() {
        let xi = refined.frequency(i, &mut buf);
        if xi.iter().map(|a| a * a).sum::<f64>().sqrt() <= 2.0 {
            inside += v.norm_sqr();
        } else {
            outside += v.norm_sqr();
        }
    }
    let fourier_tail = outside / (inside + outside);
    // property 3 on both resolutions
    let l1 = |k: f64| WeightSpec::new(n, k, Affine::identity(n), Normalization::L1);
    let w_hi = l1(kappa)?;
    let w_lo = l1(kappa - 2.0)?;
    let mut self_conv = [0.0; 2];
    let mut mixed_conv = [0.0; 2];
    for (slot, pts) in [grid, &refined].into_iter().enumerate() {
        let a = pts.sample(&w_hi);
        let b = pts.sample(&w_lo);
        let aa = pts.convolve(&a, &w_hi)?;
        let ab = pts.convolve(&a, &w_lo)?;
        let radius = pts.lengths.iter().cloned().fold(f64::MAX, f64::min) / 4.0;
        self_conv[slot] = sup_ratio(&aa, &a, pts, radius);
        mixed_conv[slot] = sup_ratio(&ab, &b, pts, radius);
    }
    let drift = |v: [f64; 2]| (v[1] - v[0]).abs() / v[1];
    let drift_self = drift(self_conv);
    let drift_mixed = drift(mixed_conv);
    // monotonicity: unit ball inside the ball of radius 2, and an ellipse inside the unit ball
    let mut monotone_c = 0.0f64;
    let inner_ellipse = Affine { center: vec![0.0; n], matrix: (0..n).map(|i| (0..n).map(|j| if i == j { if i == 0 { 1.0 } else { 2.0 } } else { 0.0 }).collect()).collect() };
    let pairs = [
        (Affine::identity(n), Affine::scaled(n, 2.0)),
        (inner_ellipse, Affine::identity(n)),
    ];
    for (a1, a2) in pairs {
        let s1 = WeightSpec::new(n, kappa, a1, Normalization::LInf)?;
        let s2 = WeightSpec::new(n, kappa, a2, Normalization::LInf)?;
        for i in 0..4000 {
            let rho = i as f64 / 20.0;
            for dir in 0..n {
                let mut x = vec![0.0; n];
                x[dir] = rho;
                monotone_c = monotone_c.max(s1.eval(&x) / s2.eval(&x));
            }
        }
    }
    let pass = lo > 0.0
        && hi.is_finite()
        && fourier_tail < 1e-6
        && self_conv.iter().all(|v| v.is_finite())
        && drift_self < 0.1
        && drift_mixed < 0.1
        && monotone_c <= 2.0;
    notes.push("mixed decay is checked as domination by the slower-decaying weight".into());
    Ok(CalculusReport {
        n,
        kappa,
        decay_c_lo: lo,
        decay_c_hi: hi,
        log2_ratio_1_8,
        fourier_tail,
        self_conv,
        monotone_c,
        mixed_conv,
        drift_self,
        drift_mixed,
        pass,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_exact_on_polynomials() {
        let rule = gauss_legendre(10);
        let s: f64 = rule.0.iter().zip(&rule.1).map(|(x, w)| w * x.powi(18)).sum();
        assert!((s - 2.0 / 19.0).abs() < 1e-14);
    }

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(2) - 4.0 * PI).abs() < 1e-12);
        assert!((sphere_area(3) - 2.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn profile_identities() {
        for n in 1..=3 {
            let p = profiles(n);
            // ψ̌(0) = ∫ψ and (ψ*ψ)(0) = ∫ψ²
            let rule = gauss_legendre(64);
            let int = |g: &dyn Fn(f64) -> f64| sphere_area(n - 1) * integrate(0.0, 1.0, 8, &rule, |r| g(r) * r.powi(n as i32 - 1));
            let m1 = int(&|r| mollifier(r));
            let m2 = int(&|r| mollifier(r).powi(2));
            assert!((p.check(0.0) - m1).abs() < 1e-10 * m1, "n={n} {} {m1}", p.check(0.0));
            assert!((p.auto(0.0) - m2).abs() < 1e-8 * m2, "n={n} {} {m2}", p.auto(0.0));
        }
    }

    #[test]
    fn origin_value() {
        let w = WeightSpec::unit(2, 8.0);
        assert!(w.eval(&[0.0, 0.0]) >= profiles(2).check(0.0).powi(2));
        let shifted = WeightSpec::new(
            2,
            8.0,
            Affine { center: vec![3.0, -1.0], matrix: vec![vec![0.5, 0.0], vec![0.0, 2.0]] },
            Normalization::LInf,
        )
        .unwrap();
        assert_eq!(shifted.eval(&[3.0, -1.0]), w.eval(&[0.0, 0.0]));
    }

    #[test]
    fn degenerate_shape_rejected() {
        let a = Affine { center: vec![0.0, 0.0], matrix: vec![vec![1.0, 2.0], vec![2.0, 4.0]] };
        assert!(WeightSpec::new(2, 8.0, a, Normalization::L1).is_err());
    }
}
