//! Closure arithmetic of the induction on scales, evaluated in log space.

use serde::Serialize;

use crate::{Error, Result};

const LN2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone, Serialize)]
pub struct RecursionConfig {
    pub epsilon: f64,
    pub n: u32,
    /// `C_{ε/8}`.
    pub c1: f64,
    /// `C_{ε/4}`.
    pub c2: f64,
    /// Multiplier of `C_{ε/4}` per step; `n` in the original recursion.
    pub n_factor: f64,
    /// Largest `log2 K` tried.
    pub log2_k_cap: u64,
    /// Largest step index checked before the tail certificate must apply.
    pub step_cap: u64,
}

impl RecursionConfig {
    pub fn new(epsilon: f64, n: u32) -> Self {
        RecursionConfig { epsilon, n, c1: 2.0, c2: 2.0, n_factor: n as f64, log2_k_cap: 1 << 24, step_cap: 1 << 22 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Invalid(format!("epsilon = {} must lie in (0, 1)", self.epsilon)));
        }
        if self.n == 0 || !(self.c1 > 0.0 && self.c2 > 0.0 && self.n_factor > 0.0) {
            return Err(Error::Invalid("n and every constant must be positive".into()));
        }
        Ok(())
    }

    fn q(&self) -> f64 {
        1.0 + (self.epsilon / 4.0).powi(self.n as i32)
    }

    /// `ln` of `C_{ε/8} K^{ε/8} (n C_{ε/4})^k r^{-ε/2 q^k}` with `K = 2^lk`, `r = 2^lr`.
    pub fn log_lhs(&self, k: u64, log2_k: f64, log2_r: f64) -> f64 {
        let e = self.epsilon;
        self.c1.ln() + e / 8.0 * log2_k * LN2 + k as f64 * (self.n_factor * self.c2).ln()
            - e / 2.0 * self.q().powf(k as f64) * log2_r * LN2
    }

    /// Derivative of `log_lhs(k, K, K)` in `k`.
    fn slope(&self, k: u64, log2_k: f64) -> f64 {
        let q = self.q();
        (self.n_factor * self.c2).ln() - self.epsilon / 2.0 * q.ln() * q.powf(k as f64) * log2_k * LN2
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub k: u64,
    pub log2_r: f64,
    pub log_value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HaltingReport {
    pub config: RecursionConfig,
    pub pass: bool,
    pub log2_k: u64,
    /// Steps `1..=k_checked` are evaluated; the slope is negative from `k_checked` on.
    pub k_checked: u64,
    pub tail_slope: f64,
    /// First failing step when `pass` is false.
    pub failing_k: Option<u64>,
    pub witnesses: Vec<Witness>,
}

/// Check every step `k >= 1` for `r = K = 2^log2_k` (the worst case, since the bound decreases in `r`).
///
/// The log of the left side is concave in `k`, so once its slope is negative it stays negative.
pub fn halting_at(cfg: &RecursionConfig, log2_k: u64) -> Result<HaltingReport> {
    cfg.validate()?;
    let lk = log2_k as f64;
    let mut witnesses = Vec::new();
    let mut failing = None;
    let mut k = 1u64;
    loop {
        let v = cfg.log_lhs(k, lk, lk);
        witnesses.push(Witness { k, log2_r: lk, log_value: v });
        if v > 0.0 && failing.is_none() {
            failing = Some(k);
            break;
        }
        if cfg.slope(k, lk) < 0.0 {
            break;
        }
        k += 1;
        if k > cfg.step_cap {
            return Err(Error::Cap(format!("slope still positive after {} steps", cfg.step_cap)));
        }
    }
    Ok(HaltingReport {
        config: cfg.clone(),
        pass: failing.is_none(),
        log2_k,
        k_checked: k,
        tail_slope: cfg.slope(k, lk),
        failing_k: failing,
        witnesses,
    })
}

/// Smallest `K = 2^j` passing `halting_at`, by doubling `j` then bisecting.
///
/// Raising `K` lowers every term, so the passing set is an up-ray.
pub fn snmm_halting_check(cfg: &RecursionConfig) -> Result<HaltingReport> {
    cfg.validate()?;
    let passes = |j: u64| -> Result<bool> { Ok(halting_at(cfg, j)?.pass) };
    if passes(0)? {
        return halting_at(cfg, 0);
    }
    let mut hi = 1u64;
    while !passes(hi)? {
        hi *= 2;
        if hi > cfg.log2_k_cap {
            return Err(Error::Cap(format!("no K below 2^{}", cfg.log2_k_cap)));
        }
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if passes(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    halting_at(cfg, hi)
}

/// Recompute a witness row independently of the search.
///
/// The terms nearly cancel for small `ε`, so agreement is measured against their magnitude.
pub fn reevaluate(cfg: &RecursionConfig, log2_k: u64, w: &Witness) -> bool {
    let e = cfg.epsilon;
    let growth = (w.k as f64 * (1.0 + (e / 4.0).powi(cfg.n as i32)).ln()).exp();
    // log2 of each factor, then back to ln
    let terms = [
        cfg.c1.log2(),
        e / 8.0 * log2_k as f64,
        w.k as f64 * (cfg.n_factor * cfg.c2).log2(),
        -e / 2.0 * growth * w.log2_r,
    ];
    let v = terms.iter().sum::<f64>() * LN2;
    let scale = terms.iter().map(|t| t.abs()).sum::<f64>() * LN2;
    (v - w.log_value).abs() <= 1e-9 * (1.0 + scale) && v <= 0.0
}

#[derive(Debug, Clone, Serialize)]
pub struct ClosureConstants {
    pub c10: f64,
    pub c54: f64,
    pub c4: f64,
    pub c10b: f64,
    pub c55: f64,
    /// `ε_1` is taken below `ε^{1/2} η / c220`.
    pub c220: f64,
}

impl Default for ClosureConstants {
    fn default() -> Self {
        ClosureConstants { c10: 10.0, c54: 54.0, c4: 4.0, c10b: 10.0, c55: 55.0, c220: 220.0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClosureReport {
    pub eta: f64,
    pub n: u32,
    pub feasible: bool,
    pub epsilon: f64,
    pub epsilon1: f64,
    /// The three exponents of `R` that must be positive.
    pub exponents: [f64; 3],
    pub reason: Option<String>,
}

/// Pick `ε = 4^-j` meeting both conditions, then `ε_1` at half its admissible bound.
pub fn s1bd_closure_check(eta: f64, n: u32, c: &ClosureConstants) -> ClosureReport {
    let mut rep = ClosureReport { eta, n, feasible: false, epsilon: 0.0, epsilon1: 0.0, exponents: [0.0; 3], reason: None };
    if !(eta > 0.0) {
        rep.reason = Some("eta must be positive".into());
        return rep;
    }
    let ok = |e: f64| {
        let s = e.sqrt();
        (eta - c.c10 * s).min(eta - c.c4 * e * s - c.c10b * s) > eta / 2.0
    };
    let Some(eps) = (1..200).map(|j| 4f64.powi(-j)).find(|&e| ok(e)) else {
        rep.reason = Some("no epsilon down to 4^-199".into());
        return rep;
    };
    let s = eps.sqrt();
    let b1 = (eta - c.c10 * s) / c.c54;
    let b2 = (s * eta - c.c4 * eps * eps - c.c10b * eps) / c.c55;
    let bound = (s * eta / c.c220).min(b1).min(b2).min(eta);
    let eps1 = bound / 2.0;
    let exps = [
        eta - c.c10 * s - c.c54 * eps1,
        s * eta - c.c4 * eps * eps - c.c10b * eps - c.c55 * eps1,
        (n as f64 - 2.0) * eps1,
    ];
    rep.epsilon = eps;
    rep.epsilon1 = eps1;
    rep.exponents = exps;
    rep.feasible = eps1 > 0.0 && exps.iter().all(|&e| e > 0.0);
    if !rep.feasible {
        rep.reason = Some(if exps[2] <= 0.0 { "third exponent vanishes for n <= 2".into() } else { "negative exponent".into() });
    }
    rep
}

#[derive(Debug, Clone, Serialize)]
pub enum KRule {
    /// `K = R^{ε_1}`.
    Power(f64),
    Constant(f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct FixedPointConfig {
    pub epsilon: f64,
    pub n0: f64,
    pub k_rule: KRule,
    pub a_const: f64,
    /// Implied constant of the recursion.
    pub c: f64,
    /// Power of `log R` multiplying the right side; it compounds along the `R/K³` chain.
    pub log_power: f64,
    /// Exponent of `R^{ε}` in the second term: `c4 ε² + c10 ε`.
    pub c4: f64,
    pub c10: f64,
    /// Keep the term not involving `T`.
    pub source: bool,
    /// `T(R) = t_base` for `log2 R <= base_log2`.
    pub t_base: f64,
    pub base_log2: u64,
    pub max_log2: u64,
}

impl FixedPointConfig {
    /// `N_0 = ε^{-1/2}`, `K = R^{ε_1}` with `ε_1 = ε^{1/2}/440`.
    pub fn literal_rule(epsilon: f64) -> Self {
        FixedPointConfig {
            epsilon,
            n0: epsilon.powf(-0.5).floor(),
            k_rule: KRule::Power(epsilon.sqrt() / 440.0),
            a_const: 2.0,
            c: 1.0,
            log_power: 2.0,
            c4: 4.0,
            c10: 10.0,
            source: true,
            t_base: 1.0,
            base_log2: 4,
            max_log2: 1 << 20,
        }
    }

    /// Growth exponent of a power-law solution, ignoring logarithms.
    pub fn threshold(&self) -> f64 {
        let e = self.epsilon;
        let k_exp = match self.k_rule {
            KRule::Power(e1) => e1,
            KRule::Constant(_) => 0.0,
        };
        let first = 53.0 * k_exp + 10.0 * e * self.n0;
        let gain = e * self.n0;
        let second = (53.0 * k_exp + self.c4 * e * e + self.c10 * e) / gain;
        first.max(second)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub delta: f64,
    pub bounded: bool,
    pub diverged: bool,
    /// `(log2 R, log2 T(R))` on the ladder.
    pub points: Vec<(u64, f64)>,
    /// Largest `log2 (T(R) / R^δ)`.
    pub peak: f64,
    /// Least-squares slope of `log2 T - δ log2 R` over the upper half of the ladder.
    pub tail_slope: f64,
}

fn log2_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp2() + (b - m).exp2()).log2()
}

/// Iterate `T(R) ≲ (log R)² (K^53 [R^{10εN_0} A^{1/ε} + R^{4ε²+10ε} A^{1/ε} T(R^ε)^{1/ε-N_0}] + T(R/K³))`.
pub fn multiscale_fixed_point(cfg: &FixedPointConfig, delta: f64) -> Result<Trajectory> {
    let e = cfg.epsilon;
    if !(e > 0.0 && e < 1.0) || cfg.n0 < 1.0 || cfg.n0 > 1.0 / e {
        return Err(Error::Invalid("need 0 < ε < 1 and 1 <= N0 <= 1/ε".into()));
    }
    let m = cfg.max_log2 as usize;
    let mut lt = vec![f64::NEG_INFINITY; m + 1];
    let base = if cfg.t_base > 0.0 { cfg.t_base.log2() } else { f64::NEG_INFINITY };
    let la = cfg.a_const.log2() / e;
    let mut diverged = false;
    for j in 0..=m {
        if j as u64 <= cfg.base_log2 {
            lt[j] = base;
            continue;
        }
        let jf = j as f64;
        let lk = match cfg.k_rule {
            // K is a block count, so at least 2
            KRule::Power(e1) => (e1 * jf).max(1.0),
            KRule::Constant(k) => k.log2(),
        };
        let shrink = (3.0 * lk).floor() as usize;
        if shrink == 0 {
            diverged = true;
            break;
        }
        let below = lt[j.saturating_sub(shrink)];
        let inner = lt[((e * jf).ceil() as usize).min(j - 1)];
        let mut v = f64::NEG_INFINITY;
        if cfg.source {
            v = 53.0 * lk + 10.0 * e * cfg.n0 * jf + la;
        }
        if inner > f64::NEG_INFINITY {
            v = log2_add(v, 53.0 * lk + (cfg.c4 * e * e + cfg.c10 * e) * jf + la + (1.0 / e - cfg.n0) * inner);
        }
        v = log2_add(v, below);
        if v > f64::NEG_INFINITY {
            v += cfg.c.log2() + cfg.log_power * (jf * std::f64::consts::LN_2).log2();
        }
        if !v.is_finite() && v != f64::NEG_INFINITY {
            diverged = true;
            break;
        }
        lt[j] = v;
    }
    let points: Vec<(u64, f64)> = (0..=m).map(|j| (j as u64, lt[j])).collect();
    let rel: Vec<(f64, f64)> = points.iter().filter(|p| p.1.is_finite()).map(|&(j, v)| (j as f64, v - delta * j as f64)).collect();
    let peak = rel.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let tail: Vec<&(f64, f64)> = rel.iter().filter(|r| r.0 >= m as f64 / 2.0).collect();
    let tail_slope = if tail.len() >= 2 {
        let nn = tail.len() as f64;
        let mx = tail.iter().map(|r| r.0).sum::<f64>() / nn;
        let my = tail.iter().map(|r| r.1).sum::<f64>() / nn;
        let sxy: f64 = tail.iter().map(|r| (r.0 - mx) * (r.1 - my)).sum();
        let sxx: f64 = tail.iter().map(|r| (r.0 - mx).powi(2)).sum();
        sxy / sxx
    } else {
        0.0
    };
    Ok(Trajectory { delta, bounded: !diverged && tail_slope <= 0.0, diverged, points, peak, tail_slope })
}

#[derive(Debug, Clone, Serialize)]
pub struct IngredientReport {
    pub a: f64,
    pub b: f64,
    pub delta: f64,
    pub k: f64,
    pub log2_r: f64,
    pub log2_big_r: f64,
    /// `log2` of the unrolled constant.
    pub log2_value: f64,
    pub depth: usize,
    /// The depth cap was hit before the scales closed.
    pub capped: bool,
    pub log2_bound: Option<f64>,
    pub within_bound: Option<bool>,
}

/// Unroll `D(r,R) <= A B K^{2δ} [D(rK,R) + D(K²,RK/r)]` (with `D(r,R) <= A K^δ D(K²,R)` for `r < K²`).
///
/// Nodes at depth `levels` or with `R/r < K` are replaced by 1.
pub fn ingredient_composition_check(
    a: f64,
    b: f64,
    delta: f64,
    k: f64,
    levels: usize,
    log2_r: f64,
    log2_big_r: f64,
) -> Result<IngredientReport> {
    if !(a > 0.0 && b > 0.0 && k >= 1.0 && delta >= 0.0) {
        return Err(Error::Invalid("need A, B > 0, K >= 1, δ >= 0".into()));
    }
    if levels > 64 {
        return Err(Error::Cap(format!("depth {levels} exceeds the cap 64")));
    }
    let lk = k.log2();
    let step = a.log2() + b.log2() + 2.0 * delta * lk;
    let base = a.log2() + delta * lk;
    let mut max_depth = 0usize;
    let mut capped = false;
    // memoised on the grid of log-scales, which are integer combinations of log2 K
    let mut memo = std::collections::HashMap::new();
    #[allow(clippy::too_many_arguments)]
    fn go(
        lr: f64,
        lbr: f64,
        depth: usize,
        levels: usize,
        lk: f64,
        step: f64,
        base: f64,
        max_depth: &mut usize,
        capped: &mut bool,
        memo: &mut std::collections::HashMap<(i64, i64, usize), f64>,
    ) -> f64 {
        let key = ((lr * 1e6).round() as i64, (lbr * 1e6).round() as i64, depth);
        if let Some(v) = memo.get(&key) {
            return *v;
        }
        *max_depth = (*max_depth).max(depth);
        let v = if lk > 0.0 && lbr - lr < lk {
            0.0
        } else if depth >= levels {
            *capped = true;
            0.0
        } else if lr < 2.0 * lk && 2.0 * lk <= lbr {
            base + go(2.0 * lk, lbr, depth, levels, lk, step, base, max_depth, capped, memo)
        } else {
            let x = go(lr + lk, lbr, depth + 1, levels, lk, step, base, max_depth, capped, memo);
            let y = go(2.0 * lk, lbr + lk - lr, depth + 1, levels, lk, step, base, max_depth, capped, memo);
            step + log2_add(x, y)
        };
        memo.insert(key, v);
        v
    }
    let v = go(log2_r, log2_big_r, 0, levels, lk, step, base, &mut max_depth, &mut capped, &mut memo);
    Ok(IngredientReport {
        a,
        b,
        delta,
        k,
        log2_r,
        log2_big_r,
        log2_value: v,
        depth: max_depth,
        capped,
        log2_bound: None,
        within_bound: None,
    })
}

/// The parameter rule `δ = ε/4`, `K = (2AB)^{2/ε}`, checked against `C_ε R^ε`
/// with `C_ε = A K^δ · 2AB K^{2δ}`.
pub fn ingredient_rule_check(a: f64, b: f64, epsilon: f64, log2_r: f64, log2_big_r: f64) -> Result<IngredientReport> {
    let delta = epsilon / 4.0;
    let k = (2.0 * a * b).powf(2.0 / epsilon).max(2.0);
    let mut rep = ingredient_composition_check(a, b, delta, k, 64, log2_r, log2_big_r)?;
    let lk = k.log2();
    let log2_c = a.log2() + delta * lk + (2.0 * a * b).log2() + 2.0 * delta * lk;
    let bound = log2_c + epsilon * log2_big_r;
    rep.log2_bound = Some(bound);
    rep.within_bound = Some(!rep.capped && rep.log2_value <= bound + 1e-9);
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halting_toy_constants() {
        let cfg = RecursionConfig::new(0.5, 2);
        let rep = snmm_halting_check(&cfg).unwrap();
        assert!(rep.pass);
        assert!(rep.tail_slope < 0.0);
        assert!(rep.witnesses.iter().all(|w| reevaluate(&cfg, rep.log2_k, w)));
        // one doubling less fails
        let below = halting_at(&cfg, rep.log2_k - 1).unwrap();
        assert!(!below.pass);
        let one = halting_at(&cfg, 0).unwrap();
        assert_eq!(one.failing_k, Some(1));
    }

    #[test]
    fn minimal_k_monotone_in_epsilon() {
        let ks: Vec<u64> = [0.1, 0.25, 0.5, 0.9]
            .iter()
            .map(|&e| snmm_halting_check(&RecursionConfig::new(e, 2)).unwrap().log2_k)
            .collect();
        assert!(ks.windows(2).all(|w| w[0] >= w[1]), "{ks:?}");
    }

    #[test]
    fn closure_search() {
        let c = ClosureConstants::default();
        for eta in [1.0, 0.5, 0.1] {
            let r = s1bd_closure_check(eta, 3, &c);
            assert!(r.feasible, "{r:?}");
            assert!(r.epsilon1 < r.epsilon.sqrt() * eta / 220.0);
        }
        assert!(!s1bd_closure_check(0.0, 3, &c).feasible);
        let big = ClosureConstants { c54: 5400.0, ..c.clone() };
        let a = s1bd_closure_check(1.0, 3, &c);
        let b = s1bd_closure_check(1.0, 3, &big);
        assert!(b.feasible && b.epsilon1 < a.epsilon1);
    }

    #[test]
    fn fixed_point_regimes() {
        let cfg = FixedPointConfig { log_power: 0.0, ..FixedPointConfig::literal_rule(1.0 / 64.0) };
        let th = cfg.threshold();
        assert!(multiscale_fixed_point(&cfg, th * 1.5 + 0.05).unwrap().bounded);
        assert!(!multiscale_fixed_point(&cfg, th * 0.5).unwrap().bounded);
        let flat = FixedPointConfig { k_rule: KRule::Constant(1.0), ..cfg.clone() };
        assert!(multiscale_fixed_point(&flat, 1.0).unwrap().diverged);
        // compounded log factors outgrow any fixed power on a finite ladder
        let logs = FixedPointConfig { log_power: 2.0, ..cfg.clone() };
        assert!(!multiscale_fixed_point(&logs, th * 1.5 + 0.05).unwrap().bounded);
        let zero = FixedPointConfig { source: false, t_base: 0.0, ..cfg };
        let t = multiscale_fixed_point(&zero, 1.0).unwrap();
        assert!(t.points.iter().all(|p| p.1 == f64::NEG_INFINITY));
    }

    #[test]
    fn ingredients_unroll() {
        let (a, b, d, k) = (3.0, 5.0, 0.1, 16.0);
        // r = K², R = K³: one progress step, both children terminal
        let rep = ingredient_composition_check(a, b, d, k, 1, 8.0, 12.0).unwrap();
        let want = (a * b * k.powf(2.0 * d) * 2.0).log2();
        assert!((rep.log2_value - want).abs() < 1e-12);
        assert!(!rep.capped);
        let flat = ingredient_composition_check(a, b, 0.0, 1.0, 20, 0.0, 40.0).unwrap();
        assert!(flat.capped);
        assert!((flat.log2_value - 20.0 * (2.0 * a * b).log2()).abs() < 1e-9);
        for (lr, lbr) in [(0.0, 200.0), (10.0, 400.0), (0.0, 1000.0)] {
            let r = ingredient_rule_check(2.0, 2.0, 0.25, lr, lbr).unwrap();
            assert_eq!(r.within_bound, Some(true), "{r:?}");
        }
    }
}
