use proptest::prelude::*;
use rieszdual::bounds::{leibniz_check, shell_count};
use rieszdual::gramian::{eigen_extremes, nested_sections, spectral_norm};
use rieszdual::*;

fn window(d: usize, n: usize) -> LatticeWindow {
    LatticeWindow::new(d, n).unwrap()
}

fn matrix(w: LatticeWindow, vals: &[f64]) -> DecayMatrix {
    let n = w.len();
    DecayMatrix::new(w, nalgebra::DMatrix::from_column_slice(n, n, &vals[..n * n])).unwrap()
}

fn symmetric(w: LatticeWindow, vals: &[f64]) -> DecayMatrix {
    let m = matrix(w, vals);
    let e = m.entries();
    DecayMatrix::new(w, (e + e.transpose()) * 0.5).unwrap()
}

proptest! {
    #[test]
    fn leibniz_is_exact(
        d in 1usize..=2,
        p in prop::collection::vec(-1.0f64..1.0, 81),
        q in prop::collection::vec(-1.0f64..1.0, 81),
    ) {
        let w = if d == 1 { window(1, 4) } else { window(2, 1) };
        let (p, q) = (symmetric(w, &p), symmetric(w, &q));
        for axis in 0..d {
            prop_assert!(leibniz_check(&p, &q, axis).unwrap() < 1e-13);
        }
    }

    #[test]
    fn derivation_is_linear(
        a in -3.0f64..3.0,
        p in prop::collection::vec(-1.0f64..1.0, 25),
        q in prop::collection::vec(-1.0f64..1.0, 25),
        u in 0u32..4,
    ) {
        let w = window(1, 2);
        let (p, q) = (matrix(w, &p), matrix(w, &q));
        let combo = DecayMatrix::new(w, p.entries() * a + q.entries()).unwrap();
        let lhs = apply_derivation(&combo, 0, u).unwrap();
        let rhs = apply_derivation(&p, 0, u).unwrap().entries() * a + apply_derivation(&q, 0, u).unwrap().entries();
        prop_assert!((lhs.entries() - rhs).amax() < 1e-12);
    }

    #[test]
    fn schur_dominates_spectral_norm(vals in prop::collection::vec(-1.0f64..1.0, 25), sym in any::<bool>()) {
        let w = window(1, 2);
        let m = if sym { symmetric(w, &vals) } else { matrix(w, &vals) };
        prop_assert!(schur_bound(&m) >= spectral_norm(&m) * (1.0 - 1e-12));
    }

    #[test]
    fn w_decreases_in_u(u in 1.2f64..12.0, step in 0.05f64..3.0, d in 1usize..=2) {
        let u = u + d as f64 - 1.0;
        let lo = compute_w(u, d, 1e-9).unwrap().value;
        let hi = compute_w(u + step, d, 1e-9).unwrap().value;
        prop_assert!(hi < lo);
        prop_assert!(hi > 1.0);
    }

    #[test]
    fn theoretical_d_monotone(
        c in 1.0f64..4.0, a in 0.05f64..2.0, extra in 0.1f64..5.0, e in 0.1f64..3.0, bump in 0.01f64..1.0,
    ) {
        let tb = TheoreticalBound { c, a, s: 3.0 + extra, t: 2, d: 1, e };
        let base = theoretical_d(&tb).unwrap();
        let bigger_c = theoretical_d(&TheoreticalBound { c: c + bump, ..tb }).unwrap();
        let bigger_e = theoretical_d(&TheoreticalBound { e: e + bump, ..tb }).unwrap();
        let bigger_a = theoretical_d(&TheoreticalBound { a: a + bump, ..tb }).unwrap();
        let bigger_s = theoretical_d(&TheoreticalBound { s: tb.s + bump, ..tb }).unwrap();
        prop_assert!(bigger_c >= base && bigger_e >= base);
        prop_assert!(bigger_a <= base && bigger_s <= base);
    }

    #[test]
    fn nested_sections_interlace(vals in prop::collection::vec(-1.0f64..1.0, 81)) {
        let w = window(1, 4);
        let m = symmetric(w, &vals);
        let shifted = DecayMatrix::new(w, m.entries() + nalgebra::DMatrix::identity(9, 9) * 10.0).unwrap();
        let rb = riesz_bounds(&nested_sections(&shifted, &[1, 2, 4]).unwrap()).unwrap();
        prop_assert!(rb.interlacing_violation() <= 1e-10);
        let (lo, hi) = eigen_extremes(shifted.entries());
        prop_assert_eq!(rb.a_est, lo);
        prop_assert_eq!(rb.b_est, hi);
    }

    #[test]
    fn shell_counts_sum_to_cube(n in 0u64..40, d in 1usize..=3) {
        let total: f64 = (0..=n).map(|r| shell_count(r, d)).sum();
        prop_assert_eq!(total, ((2 * n + 1) as f64).powi(d as i32));
    }
}
