use std::sync::Arc;

use proptest::prelude::*;

use momsq::certify::{snmm_halting_check, RecursionConfig};
use momsq::exponents::{critical_exponent, even_exponent, next_even_index, Q};
use momsq::field::{grid_for, synthesize, DiscreteField, Profile};
use momsq::functionals::{lp_norm, sq_constant};
use momsq::geometry::{dual_box, moment_derivative, partition_moment, determinant};
use momsq::highlow::build_ladder;
use momsq::lattice::Lattice;
use momsq::C64;

fn field(n: usize, r: u64, seed: u64) -> DiscreteField {
    let lat = Lattice::new(n, r, 1).unwrap();
    let blocks = Arc::new(lat.fine_blocks());
    let grid = grid_for(&lat, &blocks, 2);
    synthesize(lat, grid, Profile::RandomPhase, seed, false).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn even_exponent_bounds(n in 2u32..400) {
        let pt = Q::from_integer(even_exponent(n));
        prop_assert!(pt >= Q::from_integer(2) && pt <= critical_exponent(n));
        prop_assert!(even_exponent(n) <= even_exponent(n + 1));
        prop_assert!(even_exponent(n) <= 2 * even_exponent(n - 1));
    }

    #[test]
    fn next_even_index_is_monotone(a in 0i64..2000, b in 0i64..2000) {
        let (lo, hi) = (a.min(b), a.max(b));
        let top = critical_exponent(40) - Q::from_integer(2);
        let p = |t: i64| Q::from_integer(2) + top * Q::new(t, 2000);
        prop_assert!(next_even_index(p(lo), 64).unwrap() <= next_even_index(p(hi), 64).unwrap());
    }

    #[test]
    fn moment_partition_tiles(n in 1usize..4, j in 1u32..4) {
        let r = 1u64 << (n as u32 * j);
        let blocks = partition_moment(n, r).unwrap();
        prop_assert_eq!(blocks.len(), 1usize << j);
        prop_assert!(blocks[0].t0.abs() < 1e-15);
        for w in blocks.windows(2) {
            prop_assert!((w[0].t0 + w[0].width - w[1].t0).abs() < 1e-12);
        }
        let last = blocks.last().unwrap();
        prop_assert!((last.t0 + last.width - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dual_frames_are_orthonormal(n in 2usize..5, idx in 0usize..16) {
        let r = 1u64 << (4 * n as u32);
        let blocks = partition_moment(n, r).unwrap();
        let b = &blocks[idx % blocks.len()];
        let d = dual_box(b).unwrap();
        prop_assert!(d.orthonormality_residual() < 1e-10);
        let frame: Vec<Vec<f64>> = (1..=n).map(|i| moment_derivative(n, i, b.t0)).collect();
        let det = determinant(&frame).abs();
        let det0 = determinant(&(1..=n).map(|i| moment_derivative(n, i, 0.0)).collect::<Vec<_>>()).abs();
        prop_assert!((det / det0).ln().abs() < 3.0);
    }

    #[test]
    fn ratio_is_scale_invariant(seed in 0u64..1000, s in 0.01f64..100.0) {
        let f = field(2, 64, seed);
        let g = f.with_coeffs(f.coeffs.iter().map(|c| c.iter().map(|v| v * s).collect()).collect()).unwrap();
        for p in [3.5, 4.0] {
            let (a, b) = (sq_constant(&f, p).unwrap(), sq_constant(&g, p).unwrap());
            prop_assert!((a - b).abs() <= 1e-10 * a);
        }
    }

    #[test]
    fn plancherel_ceiling(seed in 0u64..1000) {
        prop_assert!(sq_constant(&field(2, 64, seed), 2.0).unwrap() <= 1.0 + 1e-9);
    }

    #[test]
    fn restrictions_sum_to_the_field(seed in 0u64..1000, cut in 1usize..8) {
        let f = field(2, 64, seed);
        let m = f.blocks.len();
        let cut = cut % m;
        let a = f.restrict(&(0..cut).collect::<Vec<_>>()).unwrap().samples(None);
        let b = f.restrict(&(cut..m).collect::<Vec<_>>()).unwrap().samples(None);
        let whole = f.samples(None);
        let err = whole.iter().zip(a.iter().zip(&b)).map(|(w, (x, y))| (w - x - y).norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-9);
    }

    #[test]
    fn sequence_norms_decrease(v in proptest::collection::vec(-10.0f64..10.0, 1..40)) {
        let c: Vec<C64> = v.iter().map(|x| C64::new(*x, 0.0)).collect();
        // lp_norm returns the integral of |v|^p
        let l8 = lp_norm(&c, 1.0, 8.0, None).unwrap().powf(1.0 / 8.0);
        let l6 = lp_norm(&c, 1.0, 6.0, None).unwrap().powf(1.0 / 6.0);
        prop_assert!(l8 <= l6 * (1.0 + 1e-12));
    }

    #[test]
    fn ladder_is_dyadic_and_ordered(n in 2usize..4, j in 2u32..5, den in 2u32..5) {
        let r = 1u64 << (3 * n as u32 * j);
        let lad = build_ladder(n, r, 1.0 / den as f64, 2.0, 1.0, 0).unwrap();
        prop_assert_eq!(*lad.scales.last().unwrap(), r);
        prop_assert_eq!(lad.scales[0], 1);
        for w in lad.scales.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
        for s in &lad.scales[..lad.levels] {
            prop_assert!(s.is_power_of_two() && s.trailing_zeros() % 3 == 0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn minimal_k_shrinks_with_epsilon(a in 0.2f64..0.9, b in 0.2f64..0.9) {
        let (lo, hi) = (a.min(b), a.max(b));
        let k_lo = snmm_halting_check(&RecursionConfig::new(lo, 3)).unwrap().log2_k;
        let k_hi = snmm_halting_check(&RecursionConfig::new(hi, 3)).unwrap().log2_k;
        prop_assert!(k_hi <= k_lo);
    }
}
