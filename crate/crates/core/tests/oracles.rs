//! Pipeline outputs against independently computed reference values.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rieszdual::analysis::{analyze_family, Settings};
use rieszdual::dual::{synthesize_dual, invert_section};
use rieszdual::gramian::{eigen_extremes, nested_sections};
use rieszdual::*;

fn window(d: usize, n: usize) -> LatticeWindow {
    LatticeWindow::new(d, n).unwrap()
}

/// `<f_0, f_j>` for the Gaussian of width `sigma`: `sigma sqrt(pi) exp(-j^2 / 4 sigma^2)`.
fn gaussian_gram(sigma: f64, j: f64) -> f64 {
    sigma * PI.sqrt() * (-j * j / (4.0 * sigma * sigma)).exp()
}

#[test]
fn gaussian_gramian_matches_closed_form() {
    let sigma = 0.5;
    let basis = make_basis(
        GeneratorSpec::new(Family::Gaussian { sigma }, 1).with_claimed_decay(5.0),
        window(1, 4),
    )
    .unwrap();
    let grid = Grid::new(1.0 / 64.0, 12.0, 1).unwrap();
    let m = assemble(&basis, &grid).unwrap().matrix;
    for k in -4..=4i64 {
        for j in -4..=4i64 {
            let exact = gaussian_gram(sigma, (k - j) as f64);
            let got = m.get(&[k], &[j]).unwrap();
            assert!((got - exact).abs() < 1e-8, "k={k} j={j}: {got} vs {exact}");
        }
    }
}

/// Composite Simpson on `[a, b]` with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

#[test]
fn bump_neighbour_product_converges_to_simpson_reference() {
    let f = |x: f64| (1.0 + x.abs()).powi(-5) * (1.0 + (x - 1.0).abs()).powi(-5);
    // Smooth on each piece; the tail past 400 is below 1e-22.
    let reference = simpson(f, -400.0, 0.0, 400_000) + simpson(f, 0.0, 1.0, 2_000) + simpson(f, 1.0, 401.0, 400_000);

    let basis = make_basis(GeneratorSpec::new(Family::PolynomialBump { s: 5.0 }, 1), window(1, 1)).unwrap();
    let err = |h: f64| {
        let grid = Grid::new(h, 400.0, 1).unwrap();
        let m = assemble(&basis, &grid).unwrap().matrix;
        (m.get(&[0], &[1]).unwrap() - reference).abs()
    };
    let (coarse, fine) = (err(1.0 / 64.0), err(1.0 / 128.0));
    assert!(coarse < 1e-4, "h=1/64 error {coarse}");
    // Kinks sit on grid nodes, so the sum behaves like the trapezoid rule.
    let ratio = coarse / fine;
    assert!((3.5..4.5).contains(&ratio), "error ratio {ratio}");
}

#[test]
fn gaussian_riesz_bounds_match_symbol_extremes() {
    let sigma = 0.5;
    // Symbol sum_j m_j e^{ij theta} is extremal at theta = pi (min) and 0 (max).
    let lo: f64 = (-40..=40).map(|j: i64| gaussian_gram(sigma, j as f64) * if j % 2 == 0 { 1.0 } else { -1.0 }).sum();
    let hi: f64 = (-40..=40).map(|j: i64| gaussian_gram(sigma, j as f64)).sum();

    let n = 128;
    let basis = make_basis(
        GeneratorSpec::new(Family::Gaussian { sigma }, 1).with_claimed_decay(5.0),
        window(1, n),
    )
    .unwrap();
    let grid = Grid::new(1.0 / 16.0, n as f64 + 8.0, 1).unwrap();
    let m = assemble(&basis, &grid).unwrap().matrix;
    let rb = riesz_bounds(&nested_sections(&m, &[32, 64, 128]).unwrap()).unwrap();
    assert!(rb.a_est >= lo - 1e-12 && rb.a_est - lo < 1e-4, "{} vs {lo}", rb.a_est);
    assert!(rb.b_est <= hi + 1e-12 && hi - rb.b_est < 1e-4, "{} vs {hi}", rb.b_est);
}

#[test]
fn tridiagonal_inverse_matches_fourier_coefficients() {
    let rho = 0.25;
    // c_j = int_0^1 e^{2 pi i j xi} / (1 + 2 rho cos 2 pi xi) dxi by the trapezoid rule,
    // which is spectrally accurate for periodic analytic integrands.
    let n_quad = 4096;
    let coef = |j: i64| {
        (0..n_quad)
            .map(|i| {
                let xi = i as f64 / n_quad as f64;
                (2.0 * PI * j as f64 * xi).cos() / (1.0 + 2.0 * rho * (2.0 * PI * xi).cos())
            })
            .sum::<f64>()
            / n_quad as f64
    };
    let w = window(1, 32);
    let m = DecayMatrix::from_fn(w, |k, j| match (k[0] - j[0]).abs() {
        0 => 1.0,
        1 => rho,
        _ => 0.0,
    });
    let ds = invert_section(&nested_sections(&m, &[16, 32]).unwrap(), 1e-8).unwrap();
    assert!(ds.core_radius() >= 8);
    let r = ds.core_radius() as i64;
    for k in -r..=r {
        for j in -r..=r {
            let got = ds.coeffs().get(&[k], &[j]).unwrap();
            let exact = coef(k - j);
            assert!((got - exact).abs() < 1e-8, "k={k} j={j}: {got} vs {exact}");
        }
    }
}

#[test]
fn gaussian_central_dual_matches_normal_equations() {
    // Reference: solve the normal equations on a much larger window with the
    // closed-form Gramian and synthesize g_0 directly.
    let sigma = 0.5;
    let big = 64i64;
    let size = (2 * big + 1) as usize;
    let gram = DMatrix::from_fn(size, size, |a, b| gaussian_gram(sigma, a as f64 - b as f64));
    let mut rhs = DVector::zeros(size);
    rhs[big as usize] = 1.0;
    let c0 = gram.lu().solve(&rhs).unwrap();
    let g_ref = |x: f64| {
        (0..size)
            .map(|a| c0[a] * (-(x - (a as i64 - big) as f64).powi(2) / (2.0 * sigma * sigma)).exp())
            .sum::<f64>()
    };

    let spec = GeneratorSpec::new(Family::Gaussian { sigma }, 1).with_claimed_decay(5.0);
    let fa = analyze_family("gaussian", spec, &Settings::default()).unwrap();
    let g = synthesize_dual(&fa.dual, &fa.basis, &[0], &fa.grid).unwrap();
    let peak = g.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let mut worst = 0.0_f64;
    let mut x = vec![0.0];
    for (i, v) in g.values.iter().enumerate() {
        g.grid.point_into(i, &mut x);
        worst = worst.max((v - g_ref(x[0])).abs());
    }
    assert!(worst / peak < 1e-7, "relative deviation {}", worst / peak);
}

#[test]
fn truncated_coefficients_break_biorthogonality() {
    // Coefficients from a radius-2 section applied inside a radius-16 window.
    let basis = make_basis(GeneratorSpec::new(Family::PolynomialBump { s: 5.0 }, 1), window(1, 16)).unwrap();
    let grid = Grid::new(1.0 / 64.0, 24.0, 1).unwrap();
    let m = assemble(&basis, &grid).unwrap().matrix;
    let small = m.section(2).unwrap();
    let inv = small.entries().clone().try_inverse().unwrap();
    let samples = basis.sample(&grid).unwrap();
    let w = basis.window();
    let row = small.window().position(&[0]).unwrap();
    let mut g = vec![0.0; grid.len()];
    for (b, j) in small.window().iter().enumerate() {
        let pos = w.position(&j).unwrap();
        for (o, f) in g.iter_mut().zip(&samples.rows[pos]) {
            *o += inv[(row, b)] * f;
        }
    }
    let origin = w.position(&[0]).unwrap();
    let residual = samples
        .rows
        .iter()
        .enumerate()
        .map(|(p, f)| {
            let ip = grid.weight() * g.iter().zip(f).map(|(a, b)| a * b).sum::<f64>();
            (ip - if p == origin { 1.0 } else { 0.0 }).abs()
        })
        .fold(0.0, f64::max);
    assert!(residual > 1e-3, "residual {residual}");
}

#[test]
fn section_inverse_norm_is_reciprocal_lambda_min() {
    let basis = make_basis(GeneratorSpec::new(Family::PolynomialBump { s: 5.0 }, 1), window(1, 8)).unwrap();
    let grid = Grid::new(1.0 / 32.0, 16.0, 1).unwrap();
    let m = assemble(&basis, &grid).unwrap().matrix;
    let (lmin, _) = eigen_extremes(m.entries());
    let inv = m.entries().clone().try_inverse().unwrap();
    let (_, inv_max) = eigen_extremes(&inv);
    assert!((inv_max * lmin - 1.0).abs() < 1e-12);
}
