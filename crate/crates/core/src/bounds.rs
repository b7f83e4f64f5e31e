//! Explicit constants of the dual-decay estimate: the lattice sums `W_u`,
//! the convolution constants, the derivation recursion and the constant `D`.
//!
//! Every implicit dimension constant is calibrated from data and reported
//! with the case that binds it; none is hard-coded.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Hypothesis, Result};
use crate::gramian::{apply_derivation, DecayMatrix};
use crate::lattice::{max_norm, max_norm_int, Grid, LatticeWindow};

/// Number of lattice points with max-norm exactly `n` in `Z^d`.
pub fn shell_count(n: u64, d: usize) -> f64 {
    if n == 0 {
        1.0
    } else {
        let n = n as f64;
        (2.0 * n + 1.0).powi(d as i32) - (2.0 * n - 1.0).powi(d as i32)
    }
}

/// Upper bound on `sum_{|k| > r} (1+|k|)^{-u}` from the shell estimate
/// `shell(n) <= d 2^d (1+n)^{d-1}` and integral comparison.
pub fn shell_tail_upper(u: f64, d: usize, r: u64) -> f64 {
    let df = d as f64;
    if u <= df {
        return f64::INFINITY;
    }
    df * 2f64.powi(d as i32) * (1.0 + r as f64).powf(df - u) / (u - df)
}

/// Coefficients `a_i` with `(2x+1)^d - (2x-1)^d = sum_i a_i y^i`, `y = 1+x`.
fn shell_polynomial(d: usize) -> Vec<f64> {
    let mut binom = vec![1.0f64; d + 1];
    for i in 1..=d {
        binom[i] = binom[i - 1] * (d + 1 - i) as f64 / i as f64;
    }
    (0..d)
        .map(|i| {
            let e = (d - i) as i32;
            binom[i] * 2f64.powi(i as i32) * ((-1f64).powi(e) - (-3f64).powi(e))
        })
        .collect()
}

/// `int_a^inf shell(x) (1+x)^{-u} dx` with the shell count continued polynomially.
fn shell_integral(coeffs: &[f64], u: f64, a: f64) -> f64 {
    let y = 1.0 + a;
    coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let p = i as f64 - u + 1.0;
            c * y.powf(p) / -p
        })
        .sum()
}

fn shell_term(coeffs: &[f64], u: f64, x: f64) -> f64 {
    let y = 1.0 + x;
    coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| c * y.powf(i as f64 - u))
        .sum()
}

/// Compensated running sum with a fixed accumulation order.
#[derive(Debug, Default, Clone, Copy)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// A truncated lattice sum and the width of the interval that must contain
/// the exact value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeSum {
    pub value: f64,
    pub tail_bound: f64,
    pub radius: u64,
}

/// `W_u` summed exactly over shells `0..=r`, with the tail bracketed by
/// `int_{r+1}^inf F + F(r+1)/2 <= tail <= int_{r+1/2}^inf F` (convex `F`).
pub fn compute_w_at_radius(u: f64, d: usize, r: u64) -> Result<LatticeSum> {
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    if !(u > d as f64) {
        return Err(Error::Divergent { u, d });
    }
    let mut acc = Neumaier::default();
    for n in 0..=r {
        acc.add(shell_count(n, d) * (1.0 + n as f64).powf(-u));
    }
    let coeffs = shell_polynomial(d);
    let r = r as f64;
    let upper = shell_integral(&coeffs, u, r + 0.5);
    let lower = shell_integral(&coeffs, u, r + 1.0) + 0.5 * shell_term(&coeffs, u, r + 1.0);
    Ok(LatticeSum {
        value: acc.value() + 0.5 * (upper + lower),
        tail_bound: (upper - lower).abs(),
        radius: r as u64,
    })
}

/// `W_u = sum_{k in Z^d} (1+|k|)^{-u}` to within `tol`.
pub fn compute_w(u: f64, d: usize, tol: f64) -> Result<LatticeSum> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let mut r = 16 * d as u64;
    loop {
        let s = compute_w_at_radius(u, d, r)?;
        if s.tail_bound < tol || r >= 1 << 26 {
            return Ok(s);
        }
        r *= 2;
    }
}

/// One ratio entering a calibrated constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub case: String,
    pub ratio: f64,
}

/// Least constant making an inequality hold over a finite set of cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub constant: f64,
    pub binding: String,
    pub points: Vec<CalibrationPoint>,
}

impl Calibration {
    pub fn from_points(points: Vec<CalibrationPoint>) -> Result<Calibration> {
        if points.iter().any(|p| !p.ratio.is_finite()) {
            return Err(Error::NonFinite("calibration ratio"));
        }
        let best = points
            .iter()
            .max_by(|a, b| a.ratio.total_cmp(&b.ratio))
            .ok_or_else(|| Error::InvalidParameter("no calibration cases".into()))?;
        Ok(Calibration {
            constant: best.ratio,
            binding: best.case.clone(),
            points: points.clone(),
        })
    }
}

/// Least `c` with `W_u <= c (1 + 1/(u-d))` over the given exponents.
pub fn verify_lemma_a(us: &[f64], d: usize, tol: f64) -> Result<Calibration> {
    let points = us
        .iter()
        .map(|&u| {
            let w = compute_w(u, d, tol)?;
            Ok(CalibrationPoint {
                case: format!("u={u}"),
                ratio: w.value / (1.0 + 1.0 / (u - d as f64)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Calibration::from_points(points)
}

/// Least `c` with `sum_j (1+|k-j|)^{-u} (1+|j|)^{-u} <= c (1+|k|)^{-u}` for
/// `|k| <= k_radius`, the sum running by brute force over `|j| <= j_radius`.
pub fn verify_convolution_discrete(
    u: f64,
    d: usize,
    k_radius: usize,
    j_radius: usize,
) -> Result<Calibration> {
    if !(u >= d as f64 + 1.0) {
        return Err(Error::InvalidParameter(format!(
            "convolution estimate needs u >= d+1, got u={u}, d={d}"
        )));
    }
    let kw = LatticeWindow::new(d, k_radius)?;
    let jw = LatticeWindow::new(d, j_radius)?;
    let table: Vec<f64> = (0..=(k_radius + j_radius + 1))
        .map(|r| (1.0 + r as f64).powf(-u))
        .collect();
    let js: Vec<Vec<i64>> = jw.iter().collect();
    let points = kw
        .iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|k| {
            let mut diff = vec![0i64; d];
            let mut acc = 0.0;
            for j in &js {
                for ((o, a), b) in diff.iter_mut().zip(k).zip(j) {
                    *o = a - b;
                }
                acc += table[max_norm_int(&diff) as usize] * table[max_norm_int(j) as usize];
            }
            CalibrationPoint {
                case: format!("k={k:?}"),
                ratio: acc / table[max_norm_int(k) as usize],
            }
        })
        .collect();
    Calibration::from_points(points)
}

/// Left-hand side of the discrete convolution estimate for a single `k`.
pub fn discrete_convolution(u: f64, k: &[i64], j_radius: usize) -> f64 {
    let d = k.len();
    let jw = LatticeWindow::new(d, j_radius).expect("positive dimension");
    let mut diff = vec![0i64; d];
    jw.iter()
        .map(|j| {
            for ((o, a), b) in diff.iter_mut().zip(k).zip(&j) {
                *o = a - b;
            }
            (1.0 + max_norm_int(&diff) as f64).powf(-u) * (1.0 + max_norm_int(&j) as f64).powf(-u)
        })
        .sum()
}

/// Midpoint approximation of `int (1+|x-y|)^{-u} (1+|y|)^{-u} dy` over the grid.
pub fn continuous_convolution(u: f64, x: &[f64], grid: &Grid) -> f64 {
    let d = grid.dim();
    let chunk = 8192;
    let n = grid.len();
    let parts: Vec<f64> = (0..n.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut y = vec![0.0; d];
            let mut diff = vec![0.0; d];
            let mut acc = 0.0;
            for i in c * chunk..((c + 1) * chunk).min(n) {
                grid.point_into(i, &mut y);
                for ((o, a), b) in diff.iter_mut().zip(x).zip(&y) {
                    *o = a - b;
                }
                acc += (1.0 + max_norm(&diff)).powf(-u) * (1.0 + max_norm(&y)).powf(-u);
            }
            acc
        })
        .collect();
    grid.weight() * parts.iter().sum::<f64>()
}

/// Continuous analogue of [`verify_convolution_discrete`] at the points `xs`.
pub fn verify_convolution_continuous(u: f64, grid: &Grid, xs: &[Vec<f64>]) -> Result<Calibration> {
    let d = grid.dim();
    if !(u >= d as f64 + 1.0) {
        return Err(Error::InvalidParameter(format!(
            "convolution estimate needs u >= d+1, got u={u}, d={d}"
        )));
    }
    let points = xs
        .iter()
        .map(|x| {
            if x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: x.len(),
                });
            }
            Ok(CalibrationPoint {
                case: format!("x={x:?}"),
                ratio: continuous_convolution(u, x, grid) * (1.0 + max_norm(x)).powf(u),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Calibration::from_points(points)
}

/// Parameters of the dual-decay estimate and the resulting constant `D`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalBound {
    pub c: f64,
    pub a: f64,
    pub s: f64,
    pub t: u32,
    pub d: usize,
    pub e: f64,
}

impl TheoreticalBound {
    pub fn check_hypotheses(c: f64, s: f64, t: u32, d: usize) -> Result<()> {
        if !(c >= 1.0) {
            return Err(Error::Hypothesis(Hypothesis::ConstantAtLeastOne));
        }
        if t as usize <= d {
            return Err(Error::Hypothesis(Hypothesis::TargetAboveDimension));
        }
        if !(s > (d as f64) + t as f64) {
            return Err(Error::Hypothesis(Hypothesis::DecayAboveDimensionPlusTarget));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        Self::check_hypotheses(self.c, self.s, self.t, self.d)?;
        if !(self.a > 0.0) || !(self.e > 0.0) {
            return Err(Error::InvalidParameter("A and E must be positive".into()));
        }
        Ok(())
    }

    /// `(1 + 1/(s-t-d))^t (C^{2t+1} / A^{t+1})`, the part of `D` without `E`.
    fn base(&self) -> f64 {
        let t = self.t as f64;
        let gap = self.s - t - self.d as f64;
        self.c.powf(2.0 * t + 1.0) / self.a.powf(t + 1.0) * (1.0 + 1.0 / gap).powf(t)
    }
}

/// `D = E^{t^2} C^{2t+1} A^{-(t+1)} (1 + 1/(s-t-d))^t`.
pub fn theoretical_d(tb: &TheoreticalBound) -> Result<f64> {
    tb.validate()?;
    let t = tb.t as f64;
    Ok(tb.e.powf(t * t) * tb.base())
}

/// Measurements of one family entering the calibration of `E`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteMember {
    pub label: String,
    pub d_emp: f64,
    pub c_meas: f64,
    pub a_est: f64,
    pub s: f64,
    pub t: u32,
    pub d: usize,
}

impl SuiteMember {
    /// `C` entering the bound: the measured constant, raised to 1 when the
    /// family is better localized than the hypothesis `C >= 1` requires.
    pub fn c_used(&self) -> f64 {
        self.c_meas.max(1.0)
    }

    pub fn bound(&self, e: f64) -> TheoreticalBound {
        TheoreticalBound {
            c: self.c_used(),
            a: self.a_est,
            s: self.s,
            t: self.t,
            d: self.d,
            e,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ECalibration {
    pub d: usize,
    pub e_emp: f64,
    pub binding: String,
    pub required: Vec<CalibrationPoint>,
}

/// Least `E` for which `D(C, A, s, t, d, E) >= D_emp` across the suite.
pub fn calibrate_e(suite: &[SuiteMember]) -> Result<ECalibration> {
    let d = suite
        .first()
        .ok_or_else(|| Error::InvalidParameter("empty calibration suite".into()))?
        .d;
    if suite.iter().any(|m| m.d != d) {
        return Err(Error::InvalidParameter(
            "calibration suite mixes dimensions".into(),
        ));
    }
    if suite.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "calibrating E needs at least 3 families, got {}",
            suite.len()
        )));
    }
    let required = suite
        .iter()
        .map(|m| {
            if !m.d_emp.is_finite() {
                return Err(Error::NonFinite("measured dual envelope"));
            }
            let tb = m.bound(1.0);
            tb.validate()?;
            let t2 = (m.t * m.t) as f64;
            let mut e = (m.d_emp / tb.base()).powf(1.0 / t2);
            if !(e > 0.0) {
                e = f64::MIN_POSITIVE;
            }
            while theoretical_d(&m.bound(e))? < m.d_emp {
                e = e.next_up();
            }
            Ok(CalibrationPoint {
                case: m.label.clone(),
                ratio: e,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let cal = Calibration::from_points(required)?;
    Ok(ECalibration {
        d,
        e_emp: cal.constant,
        binding: cal.binding,
        required: cal.points,
    })
}

fn same_window(p: &DecayMatrix, q: &DecayMatrix) -> Result<()> {
    if p.window() != q.window() {
        return Err(Error::DimensionMismatch {
            expected: p.window().len(),
            got: q.window().len(),
        });
    }
    Ok(())
}

/// Max-abs entry of `D_h(PQ) - D_h(P) Q - P D_h(Q)`.
pub fn leibniz_check(p: &DecayMatrix, q: &DecayMatrix, axis: usize) -> Result<f64> {
    same_window(p, q)?;
    let pq = DecayMatrix::new(*p.window(), p.entries() * q.entries())?;
    let lhs = apply_derivation(&pq, axis, 1)?;
    let dp = apply_derivation(p, axis, 1)?;
    let dq = apply_derivation(q, axis, 1)?;
    let rhs = dp.entries() * q.entries() + p.entries() * dq.entries();
    Ok((lhs.entries() - rhs).amax())
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Max-abs entry, over `|k|, |j| <= probe_radius`, of
/// `sum_l binom(u,l) D_h^l(M^{-1}) D_h^{u-l}(M) - D_h^u(I)`.
///
/// With `m_inv` the exact inverse of `m` this vanishes up to rounding; with a
/// block of the inverse of a larger section it measures the truncation.
pub fn binomial_identity_residual(
    m: &DecayMatrix,
    m_inv: &DecayMatrix,
    axis: usize,
    u: u32,
    probe_radius: usize,
) -> Result<f64> {
    same_window(m, m_inv)?;
    let n = m.window().len();
    let mut sum = DMatrix::zeros(n, n);
    for l in 0..=u {
        let left = apply_derivation(m_inv, axis, l)?;
        let right = apply_derivation(m, axis, u - l)?;
        sum += binomial(u, l) * (left.entries() * right.entries());
    }
    if u == 0 {
        sum -= DMatrix::<f64>::identity(n, n);
    }
    let probe = m.window().sub_positions(probe_radius);
    let mut worst = 0.0_f64;
    for &a in &probe {
        for &b in &probe {
            worst = worst.max(sum[(a, b)].abs());
        }
    }
    Ok(worst)
}

/// Bound sequence `v_0 = A^{-1}`, `v_u = c A^{-1} C^2 W 2^u v_{u-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecursionTrace {
    pub v: Vec<f64>,
    pub a_inv: f64,
    pub c_squared: f64,
    pub w: f64,
    pub schur_constant: f64,
}

impl RecursionTrace {
    pub fn final_bound(&self) -> f64 {
        *self.v.last().expect("v_0 is always present")
    }

    /// `c A^{-1} C^2 W`, which must be at least 1 since `A <= ||M||`.
    pub fn growth_factor(&self) -> f64 {
        self.schur_constant * self.a_inv * self.c_squared * self.w
    }
}

pub fn recursion_trace(a_est: f64, c_meas: f64, w: f64, t: u32, schur_constant: f64) -> Result<RecursionTrace> {
    if !(a_est > 0.0 && c_meas > 0.0 && w > 0.0 && schur_constant > 0.0) {
        return Err(Error::InvalidParameter(
            "recursion inputs must be positive".into(),
        ));
    }
    let a_inv = 1.0 / a_est;
    let c_squared = c_meas * c_meas;
    let mut v = vec![a_inv];
    for u in 1..=t {
        let prev = v[u as usize - 1];
        v.push(schur_constant * a_inv * c_squared * w * 2f64.powi(u as i32) * prev);
    }
    Ok(RecursionTrace {
        v,
        a_inv,
        c_squared,
        w,
        schur_constant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn shell_counts() {
        assert_eq!(shell_count(0, 2), 1.0);
        assert_eq!(shell_count(1, 2), 8.0);
        assert_eq!(shell_count(2, 2), 16.0);
        assert_eq!(shell_count(3, 1), 2.0);
        assert_eq!(shell_count(1, 3), 26.0);
        for d in 1..=4 {
            let c = shell_polynomial(d);
            for n in 1..6u64 {
                let direct = shell_count(n, d);
                let poly = shell_term(&c, 0.0, n as f64);
                assert!((direct - poly).abs() < 1e-9, "d={d} n={n}");
            }
        }
    }

    #[test]
    fn w2_matches_basel() {
        let w = compute_w(2.0, 1, 1e-12).unwrap();
        assert!((w.value - (PI * PI / 3.0 - 1.0)).abs() < 1e-10, "{w:?}");
        assert!(w.tail_bound < 1e-12);
    }

    #[test]
    fn w_large_u_is_near_one() {
        let w = compute_w(100.0, 1, 1e-14).unwrap();
        assert!((w.value - 1.0 - 2.0 * 2f64.powi(-100)).abs() < 1e-15);
    }

    #[test]
    fn w_d2_u3_direct_series() {
        // Oracle: 1 + sum_{n>=1} 8n (1+n)^{-3}, summed directly to a huge radius
        // with the remaining tail integrated in closed form.
        let big = 2_000_000u64;
        let mut acc = Neumaier::default();
        acc.add(1.0);
        for n in 1..=big {
            let n = n as f64;
            acc.add(8.0 * n * (1.0 + n).powi(-3));
        }
        let y = big as f64 + 1.5;
        let tail = 8.0 / y - 4.0 / (y * y);
        let oracle = acc.value() + tail;
        let w = compute_w(3.0, 2, 1e-12).unwrap();
        assert!((w.value - oracle).abs() < 1e-9, "{} vs {}", w.value, oracle);
    }

    #[test]
    fn w_rejects_divergent() {
        assert!(matches!(compute_w(1.0, 1, 1e-8), Err(Error::Divergent { .. })));
        assert!(matches!(compute_w(2.0, 2, 1e-8), Err(Error::Divergent { .. })));
    }

    #[test]
    fn lemma_a_at_u2() {
        let cal = verify_lemma_a(&[2.0], 1, 1e-12).unwrap();
        assert!((cal.constant - (PI * PI / 3.0 - 1.0) / 2.0).abs() < 1e-10);
        assert!((cal.constant - 1.1449).abs() < 1e-4);
    }

    #[test]
    fn discrete_convolution_at_origin() {
        // k = 0: the sum is W_{2u} in d = 1.
        let lhs = discrete_convolution(2.0, &[0], 5000);
        let w4 = compute_w(4.0, 1, 1e-14).unwrap().value;
        assert!((lhs - w4).abs() < 1e-10);
        let (a, b) = (discrete_convolution(3.0, &[5], 200), discrete_convolution(3.0, &[-5], 200));
        assert!((a - b).abs() <= 1e-15 * a);
    }

    #[test]
    fn continuous_convolution_at_origin() {
        // The cusp at the origin costs O(h^2) in the Riemann sum.
        let grid = Grid::new(1.0 / 256.0, 400.0, 1).unwrap();
        for u in [2.0, 3.0] {
            let v = continuous_convolution(u, &[0.0], &grid);
            let exact = 2.0 / (2.0 * u - 1.0);
            assert!((v - exact).abs() < 1e-4, "u={u}: {v} vs {exact}");
        }
    }

    #[test]
    fn theoretical_d_examples() {
        let tb = TheoreticalBound { c: 1.0, a: 1.0, s: 4.0, t: 2, d: 1, e: 1.0 };
        assert!((theoretical_d(&tb).unwrap() - 4.0).abs() < 1e-12);
        let tb2 = TheoreticalBound { c: 2.0, ..tb };
        assert!((theoretical_d(&tb2).unwrap() - 128.0).abs() < 1e-10);
        let half = TheoreticalBound { a: 0.5, ..tb };
        assert!((theoretical_d(&half).unwrap() / theoretical_d(&tb).unwrap() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn hypothesis_violations_are_named() {
        let base = TheoreticalBound { c: 1.0, a: 1.0, s: 4.0, t: 2, d: 1, e: 1.0 };
        let err = theoretical_d(&TheoreticalBound { s: 3.0, ..base }).unwrap_err();
        assert_eq!(err.to_string(), "hypothesis s > d+t violated");
        assert!(matches!(
            theoretical_d(&TheoreticalBound { t: 1, ..base }),
            Err(Error::Hypothesis(Hypothesis::TargetAboveDimension))
        ));
        assert!(matches!(
            theoretical_d(&TheoreticalBound { c: 0.5, ..base }),
            Err(Error::Hypothesis(Hypothesis::ConstantAtLeastOne))
        ));
    }

    #[test]
    fn recursion_example() {
        let tr = recursion_trace(1.0, 1.0, 1.0, 2, 1.0).unwrap();
        assert_eq!(tr.v, vec![1.0, 2.0, 8.0]);
        assert_eq!(tr.final_bound(), 8.0);
    }

    #[test]
    fn leibniz_on_identity() {
        let id = DecayMatrix::identity(LatticeWindow::new(1, 4).unwrap());
        assert_eq!(leibniz_check(&id, &id, 0).unwrap(), 0.0);
    }

    #[test]
    fn calibrate_e_needs_three_members() {
        let m = SuiteMember {
            label: "a".into(),
            d_emp: 1.0,
            c_meas: 1.0,
            a_est: 1.0,
            s: 5.0,
            t: 2,
            d: 1,
        };
        assert!(calibrate_e(&[m.clone(), m.clone()]).is_err());
        let cal = calibrate_e(&[m.clone(), m.clone(), m.clone()]).unwrap();
        let d = theoretical_d(&m.bound(cal.e_emp)).unwrap();
        assert!(d >= m.d_emp);
        let bad = SuiteMember { d_emp: f64::INFINITY, ..m.clone() };
        assert!(matches!(
            calibrate_e(&[m.clone(), m, bad]),
            Err(Error::NonFinite(_))
        ));
    }
}
