//! Numerical laboratory for square-function estimates over the moment curve.
//!
//! The crate is organised by topic:
//! - [`exponents`]: exact arithmetic on the exponent sequences.
//! - [`geometry`]: blocks, cone sectors, dual boxes and brute-force overlap probes.
//! - [`weights`]: the dyadic weight functions and their convolution calculus.
//! - [`field`]: discrete fields on a periodic lattice, block components and wave packets.
//! - [`functionals`]: norms, square functions, ratio estimators and the phase optimizer.
//! - [`highlow`]: scale ladders, pruning, high/low splitting and the unwinding cascade.
//! - [`certify`]: log-space checks of the induction closure arithmetic.

pub mod certify;
pub mod exponents;
pub mod fft;
pub mod field;
pub mod functionals;
pub mod geometry;
pub mod highlow;
pub mod lattice;
pub mod weights;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("inadmissible scale: {0}")]
    Scale(String),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("resource cap exceeded: {0}")]
    Cap(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub type C64 = num_complex::Complex64;

pub(crate) fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * i as f64)
}

/// `Some(b)` when `r == 2^(n b)`.
pub fn admissible_exponent(n: usize, r: u64) -> Option<u32> {
    if r == 0 || !r.is_power_of_two() {
        return None;
    }
    let e = r.trailing_zeros();
    if e as usize % n == 0 {
        Some(e / n as u32)
    } else {
        None
    }
}
