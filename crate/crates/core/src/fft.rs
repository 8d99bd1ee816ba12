//! Axis-wise n-dimensional FFT on row-major arrays.
//!
//! The forward transform uses `e^{-2πi k a/N}`, the inverse `e^{+2πi k a/N}`;
//! neither is normalized.

use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::C64;

pub struct NdFft {
    sides: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl NdFft {
    pub fn new(sides: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        NdFft {
            sides: sides.to_vec(),
            forward: sides.iter().map(|&s| planner.plan_fft_forward(s)).collect(),
            inverse: sides.iter().map(|&s| planner.plan_fft_inverse(s)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.sides.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn forward(&self, data: &mut [C64]) {
        self.run(data, &self.forward);
    }

    pub fn inverse(&self, data: &mut [C64]) {
        self.run(data, &self.inverse);
    }

    fn run(&self, data: &mut [C64], plans: &[Arc<dyn Fft<f64>>]) {
        assert_eq!(data.len(), self.len());
        let d = self.sides.len();
        for axis in 0..d {
            let side = self.sides[axis];
            if side == 1 {
                continue;
            }
            let stride: usize = self.sides[axis + 1..].iter().product();
            let plan = &plans[axis];
            if stride == 1 {
                plan.process(data);
                continue;
            }
            let outer = data.len() / (side * stride);
            let mut line = vec![C64::new(0.0, 0.0); side];
            let mut scratch = vec![C64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
            for o in 0..outer {
                let base = o * side * stride;
                for s in 0..stride {
                    for (i, v) in line.iter_mut().enumerate() {
                        *v = data[base + i * stride + s];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (i, v) in line.iter().enumerate() {
                        data[base + i * stride + s] = *v;
                    }
                }
            }
        }
    }
}

/// Row-major flat index of a wrapped multi-index.
pub fn wrap_index(k: &[i64], sides: &[usize]) -> usize {
    let mut idx = 0usize;
    for (ki, &s) in k.iter().zip(sides) {
        idx = idx * s + ki.rem_euclid(s as i64) as usize;
    }
    idx
}

/// Signed frequency of a DFT slot: the representative in `[-N/2, N/2)`.
pub fn signed_freq(i: usize, n: usize) -> i64 {
    if i < n / 2 || n == 1 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Unflatten a row-major index.
pub fn unflatten(mut idx: usize, sides: &[usize], out: &mut [usize]) {
    for a in (0..sides.len()).rev() {
        out[a] = idx % sides[a];
        idx /= sides[a];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_direct_dft() {
        let sides = [4usize, 8, 2];
        let n: usize = sides.iter().product();
        let data: Vec<C64> = (0..n).map(|i| C64::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let mut fast = data.clone();
        NdFft::new(&sides).forward(&mut fast);
        let mut ka = [0usize; 3];
        let mut xa = [0usize; 3];
        for k in 0..n {
            unflatten(k, &sides, &mut ka);
            let mut acc = C64::new(0.0, 0.0);
            for (x, v) in data.iter().enumerate() {
                unflatten(x, &sides, &mut xa);
                let ph: f64 = (0..3).map(|a| (ka[a] * xa[a]) as f64 / sides[a] as f64).sum();
                acc += v * C64::from_polar(1.0, -2.0 * std::f64::consts::PI * ph);
            }
            assert!((acc - fast[k]).norm() < 1e-10);
        }
        let mut back = fast.clone();
        NdFft::new(&sides).inverse(&mut back);
        for (a, b) in back.iter().zip(&data) {
            assert!((a / n as f64 - b).norm() < 1e-12);
        }
    }
}
