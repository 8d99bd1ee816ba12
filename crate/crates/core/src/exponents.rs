//! Exponent sequences `p_n`, `p̃_n` and the index `n_p`.
//!
//! All arithmetic is exact over `Ratio<i64>`.

use num_rational::Ratio;
use serde::Serialize;

use crate::Error;

pub type Q = Ratio<i64>;

/// `p_n = n(n+1)/2 + 1`.
pub fn critical_exponent(n: u32) -> Q {
    let n = n as i64;
    Q::from_integer(n * (n + 1) / 2 + 1)
}

/// Even companion sequence: `p̃_1 = 2`, then `Σ_{i≤n} i` rounded up to even.
pub fn even_exponent(n: u32) -> i64 {
    assert!(n >= 1, "even_exponent is defined for n >= 1");
    if n == 1 {
        return 2;
    }
    let n = n as i64;
    let s = n * (n + 1) / 2;
    match n % 4 {
        1 | 2 => s + 1,
        _ => s,
    }
}

/// Smallest `l >= 2` with `1 <= p / p̃_{l-1} <= 2`, searching `l <= bound`.
pub fn next_even_index(p: Q, bound: u32) -> Result<u32, Error> {
    if p < Q::from_integer(2) {
        return Err(Error::Invalid(format!("p = {p} is below 2")));
    }
    for l in 2..=bound {
        let r = p / Q::from_integer(even_exponent(l - 1));
        if r >= Q::from_integer(1) && r <= Q::from_integer(2) {
            return Ok(l);
        }
    }
    Err(Error::Invalid(format!("no admissible l <= {bound} for p = {p}")))
}

#[derive(Debug, Clone, Serialize)]
pub struct ExponentTable {
    pub n_max: u32,
    pub p: Vec<String>,
    pub p_tilde: Vec<i64>,
}

pub fn table(n_max: u32) -> ExponentTable {
    ExponentTable {
        n_max,
        p: (1..=n_max).map(|n| critical_exponent(n).to_string()).collect(),
        p_tilde: (1..=n_max).map(even_exponent).collect(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub n: u32,
    pub k: u32,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyReport {
    pub property: u32,
    pub checked: usize,
    pub failures: Vec<Check>,
    pub witnesses: Vec<Check>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PpropsReport {
    pub n_max: u32,
    pub properties: Vec<PropertyReport>,
}

impl PpropsReport {
    pub fn all_pass(&self) -> bool {
        self.properties.iter().all(|p| p.failures.is_empty())
    }
}

/// Exhaustively checks the four table properties for `2 <= n <= n_max`.
///
/// Failures are collected with their `(n, k)` rather than aborting. A few
/// passing instances are kept as witnesses.
pub fn verify_pprops(n_max: u32) -> PpropsReport {
    const WITNESSES: usize = 4;
    let mut props: Vec<PropertyReport> = (1..=4)
        .map(|property| PropertyReport { property, checked: 0, failures: vec![], witnesses: vec![] })
        .collect();
    let mut record = |idx: usize, c: Check| {
        let pr = &mut props[idx];
        pr.checked += 1;
        if !c.pass {
            pr.failures.push(c);
        } else if pr.witnesses.len() < WITNESSES {
            pr.witnesses.push(c);
        }
    };
    let p_int = |n: u32| -> Q {
        if n == 0 {
            Q::from_integer(1)
        } else {
            critical_exponent(n)
        }
    };
    for n in 2..=n_max {
        let pt = even_exponent(n);
        let pn = critical_exponent(n);
        let ok1 = pt % 2 == 0 && pt >= 2 && Q::from_integer(pt) <= pn;
        record(0, Check { n, k: 0, pass: ok1, detail: format!("p~={pt}, p={pn}") });

        if n < n_max {
            let next = even_exponent(n + 1);
            record(1, Check { n, k: n + 1, pass: pt <= next, detail: format!("{pt} <= {next}") });
        }

        let prev = even_exponent(n - 1);
        let r = Q::new(pt, prev);
        record(2, Check { n, k: n - 1, pass: r <= Q::from_integer(2), detail: format!("ratio {r}") });

        for k in 1..=n {
            let r = pn / Q::from_integer(even_exponent(k));
            if r > Q::from_integer(2) {
                let cap = p_int(n - k);
                record(3, Check { n, k, pass: r <= cap, detail: format!("{r} <= {cap}") });
            }
        }
    }
    PpropsReport { n_max, properties: props }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn critical_values() {
        assert_eq!(critical_exponent(2), Q::from_integer(4));
        assert_eq!(critical_exponent(4), Q::from_integer(11));
        assert_eq!(critical_exponent(1), Q::from_integer(2));
    }

    #[test]
    fn even_values() {
        let got: Vec<i64> = (1..=8).map(even_exponent).collect();
        assert_eq!(got, vec![2, 4, 6, 10, 16, 22, 28, 36]);
    }

    #[test]
    fn index_values() {
        assert_eq!(next_even_index(Q::from_integer(11), 50).unwrap(), 4);
        assert_eq!(next_even_index(Q::from_integer(4), 50).unwrap(), 2);
        assert_eq!(next_even_index(Q::from_integer(2), 50).unwrap(), 2);
        assert_eq!(next_even_index(Q::new(7, 2), 50).unwrap(), 2);
        assert!(next_even_index(Q::from_integer(1000), 3).is_err());
        assert!(next_even_index(Q::from_integer(1), 10).is_err());
    }

    #[test]
    fn property_four_witness() {
        let r = critical_exponent(4) / Q::from_integer(even_exponent(1));
        assert_eq!(r, Q::new(11, 2));
        assert!(r > Q::from_integer(2) && r <= critical_exponent(3));
        let rep = verify_pprops(4);
        assert!(rep.all_pass());
        assert!(rep.properties[3]
            .witnesses
            .iter()
            .any(|c| c.n == 4 && c.k == 1));
    }
}
