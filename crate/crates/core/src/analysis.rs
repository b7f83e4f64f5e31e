//! One family pushed through basis → Gramian → duals, and suite-level
//! calibration of the dimension constants.

use serde::{Deserialize, Serialize};

use crate::basis::{make_basis, measure_decay, BasisSet, GeneratorSpec, DECAY_WINDOW};
use crate::bounds::{
    calibrate_e, compute_w, recursion_trace, verify_convolution_discrete, Calibration,
    CalibrationPoint, ECalibration, RecursionTrace, SuiteMember, TheoreticalBound,
};
use crate::dual::{
    biorthogonality_from_samples, dual_envelope, gram_duals_check, invert_section,
    synthesize_from_samples, DualSystem, SampledFunction,
};
use crate::envelope::DecayMeasurement;
use crate::error::{Error, Result};
use crate::gramian::{
    apply_derivation, assemble, eigen_extremes, nested_sections, offdiag_fit, riesz_bounds,
    schur_bound, DecayMatrix, RieszBounds,
};
use crate::lattice::{Grid, LatticeWindow};

/// Resolution and targets shared by every family of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    /// Nested section radii, strictly increasing; the last one is the window.
    pub radii: Vec<usize>,
    pub grid_spacing: f64,
    /// Grid extent `R`; defaults to the window radius plus [`DECAY_WINDOW`].
    pub grid_extent: Option<f64>,
    pub t: u32,
    pub inversion_tol: f64,
    pub w_tol: f64,
}

/// Section radii for window `n`: powers of two from 4 below `n`, then `3n/4` and `n`.
///
/// The two largest sections stay close so that the core test at the default
/// tolerance passes for exponentially localized families at `n = 16`.
pub fn default_schedule(n: usize) -> Vec<usize> {
    let mut radii: Vec<usize> = std::iter::successors(Some(4usize), |r| Some(r * 2))
        .take_while(|&r| r < n)
        .collect();
    let three_quarters = 3 * n / 4;
    if three_quarters > 0 && radii.last().is_none_or(|&r| r < three_quarters) {
        radii.push(three_quarters);
    }
    radii.push(n);
    radii
}

impl Default for Settings {
    fn default() -> Self {
        Self::for_window(16)
    }
}

impl Settings {
    /// Defaults at window radius `n` with [`default_schedule`].
    pub fn for_window(n: usize) -> Self {
        Self {
            radii: default_schedule(n),
            grid_spacing: 1.0 / 64.0,
            grid_extent: None,
            t: 2,
            inversion_tol: 1e-8,
            w_tol: 1e-12,
        }
    }

    pub fn window_radius(&self) -> usize {
        *self.radii.last().expect("validated radii are nonempty")
    }

    pub fn extent(&self) -> f64 {
        self.grid_extent
            .unwrap_or(self.window_radius() as f64 + DECAY_WINDOW)
    }

    pub fn grid(&self, dim: usize) -> Result<Grid> {
        Grid::new(self.grid_spacing, self.extent(), dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.radii.len() < 2 || self.radii.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "need at least two strictly increasing section radii".into(),
            ));
        }
        for (name, v) in [
            ("inversion_tol", self.inversion_tol),
            ("w_tol", self.w_tol),
            ("grid_spacing", self.grid_spacing),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive")));
            }
        }
        if self.t == 0 {
            return Err(Error::InvalidParameter("target t must be positive".into()));
        }
        Ok(())
    }
}

/// Everything measured for one family.
#[derive(Debug, Clone)]
pub struct FamilyAnalysis {
    pub label: String,
    pub basis: BasisSet,
    pub grid: Grid,
    pub t: u32,
    /// Measured `C` at the claimed exponent, max over window members.
    pub c_meas: f64,
    /// Measured `C` at exponent `s - 1`, for the envelope-consistency check.
    pub c_meas_lower_exponent: f64,
    pub central_decay: DecayMeasurement,
    pub gramian: DecayMatrix,
    pub asymmetry: f64,
    pub quadrature_tail: f64,
    pub gram_fit: DecayMeasurement,
    pub riesz: RieszBounds,
    pub dual: DualSystem,
    pub duals: Vec<SampledFunction>,
    pub biorthogonality: f64,
    pub gram_duals: f64,
    /// `max_k ||g_k||^2` over core duals (quadrature norm).
    pub max_dual_norm_sq: f64,
    /// `max_k c_kk` over the core.
    pub max_core_diagonal: f64,
    pub core_lambda_max: f64,
    /// `max_k` of the envelope constant of `g_k` at exponent `t`.
    pub d_emp: f64,
    pub dual_fits: Vec<(Vec<i64>, DecayMeasurement)>,
    /// Decay of `|c_{0,j}|` over shells inside the core.
    pub coefficient_decay: DecayMeasurement,
    /// `max_h schur(D_h^u(M))` for `u = 0..=t`.
    pub schur_gram_derivatives: Vec<f64>,
    /// `max_h schur(D_h^t(core coefficients))`.
    pub schur_dual_t: f64,
    /// Spectral norm of the Gramian, the cross-check of its Schur bound.
    pub gram_spectral_norm: f64,
}

impl FamilyAnalysis {
    pub fn dim(&self) -> usize {
        self.basis.window().dim()
    }

    pub fn s(&self) -> f64 {
        self.basis.spec().claimed_s()
    }

    pub fn a_est(&self) -> f64 {
        self.riesz.a_est
    }

    /// `C` entering the bounds, at least 1.
    pub fn c_used(&self) -> f64 {
        self.c_meas.max(1.0)
    }

    /// True when `s > d + t`, so the dual-decay estimate applies.
    pub fn satisfies_hypotheses(&self) -> bool {
        TheoreticalBound::check_hypotheses(self.c_used(), self.s(), self.t, self.dim()).is_ok()
    }

    pub fn suite_member(&self) -> SuiteMember {
        SuiteMember {
            label: self.label.clone(),
            d_emp: self.d_emp,
            c_meas: self.c_meas,
            a_est: self.a_est(),
            s: self.s(),
            t: self.t,
            d: self.dim(),
        }
    }
}

/// Largest measured envelope constant over members whose decay window fits the grid.
fn measured_constant(basis: &BasisSet, grid: &Grid, u: f64) -> Result<f64> {
    let mut best = 0.0_f64;
    let mut any = false;
    for k in basis.window().iter() {
        let center: Vec<f64> = k.iter().map(|&v| v as f64).collect();
        if !grid.covers(&center, DECAY_WINDOW) {
            continue;
        }
        any = true;
        best = best.max(measure_decay(basis, &k, grid, u)?.envelope.constant);
    }
    if !any {
        return Err(Error::GridTooSmall {
            extent: grid.extent(),
            needed: DECAY_WINDOW,
        });
    }
    Ok(best)
}

/// `max_h schur(D_h^u(l))` over all axes.
fn max_derivation_schur(l: &DecayMatrix, u: u32) -> Result<f64> {
    let mut best = 0.0_f64;
    for h in 0..l.window().dim() {
        best = best.max(schur_bound(&apply_derivation(l, h, u)?));
    }
    Ok(best)
}

/// Basis-stage measurements: envelopes of the members.
#[derive(Debug, Clone)]
pub struct BasisStage {
    pub label: String,
    pub basis: BasisSet,
    pub grid: Grid,
    pub c_meas: f64,
    pub c_meas_lower_exponent: f64,
    pub central_decay: DecayMeasurement,
}

pub fn analyze_basis(label: &str, spec: GeneratorSpec, settings: &Settings) -> Result<BasisStage> {
    settings.validate()?;
    let dim = spec.dim();
    let window = LatticeWindow::new(dim, settings.window_radius())?;
    let basis = make_basis(spec, window)?;
    let grid = settings.grid(dim)?;
    let s = basis.spec().claimed_s();
    Ok(BasisStage {
        label: label.to_string(),
        c_meas: measured_constant(&basis, &grid, s)?,
        c_meas_lower_exponent: measured_constant(&basis, &grid, s - 1.0)?,
        central_decay: measure_decay(&basis, &vec![0; dim], &grid, s)?,
        basis,
        grid,
    })
}

/// Gramian-stage measurements.
#[derive(Debug, Clone)]
pub struct GramianStage {
    pub gramian: DecayMatrix,
    pub asymmetry: f64,
    pub quadrature_tail: f64,
    pub gram_fit: DecayMeasurement,
    pub riesz: RieszBounds,
    pub schur_gram_derivatives: Vec<f64>,
    pub gram_spectral_norm: f64,
}

pub fn analyze_gramian(stage: &BasisStage, settings: &Settings) -> Result<GramianStage> {
    let assembly = assemble(&stage.basis, &stage.grid)?;
    let mut gramian = assembly.matrix;
    let gram_fit = offdiag_fit(&gramian, stage.basis.spec().claimed_s());
    gramian.decay_fit = Some(gram_fit.clone());
    let riesz = riesz_bounds(&nested_sections(&gramian, &settings.radii)?)?;
    let schur_gram_derivatives = (0..=settings.t)
        .map(|u| max_derivation_schur(&gramian, u))
        .collect::<Result<Vec<_>>>()?;
    Ok(GramianStage {
        gram_spectral_norm: crate::gramian::spectral_norm(&gramian),
        gramian,
        asymmetry: assembly.asymmetry,
        quadrature_tail: assembly.tail_bound,
        gram_fit,
        riesz,
        schur_gram_derivatives,
    })
}

pub fn analyze_family(label: &str, spec: GeneratorSpec, settings: &Settings) -> Result<FamilyAnalysis> {
    let b = analyze_basis(label, spec, settings)?;
    let g = analyze_gramian(&b, settings)?;
    complete_family(b, g, settings)
}

/// Inverts the sections and synthesizes the core duals.
pub fn complete_family(b: BasisStage, g: GramianStage, settings: &Settings) -> Result<FamilyAnalysis> {
    let t = settings.t;
    let BasisStage {
        label,
        basis,
        grid,
        c_meas,
        c_meas_lower_exponent,
        central_decay,
    } = b;
    let sections = nested_sections(&g.gramian, &settings.radii)?;
    let dual = invert_section(&sections, settings.inversion_tol)?;

    let samples = basis.sample(&grid)?;
    let duals = dual
        .core_indices()
        .iter()
        .map(|k| synthesize_from_samples(&dual, &basis, k, &samples))
        .collect::<Result<Vec<_>>>()?;
    let biorthogonality = biorthogonality_from_samples(&duals, &basis, &samples)?;
    let gram_duals = gram_duals_check(&duals, &dual)?;
    let max_dual_norm_sq = duals
        .iter()
        .map(SampledFunction::norm_squared)
        .fold(0.0, f64::max);
    let core_block = dual.core_block();
    let max_core_diagonal = core_block
        .entries()
        .diagonal()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let core_lambda_max = eigen_extremes(core_block.entries()).1;

    let dual_fits = duals
        .iter()
        .map(|g| Ok((g.center.clone(), dual_envelope(g, t as f64)?)))
        .collect::<Result<Vec<_>>>()?;
    let d_emp = dual_fits
        .iter()
        .map(|(_, m)| m.envelope.constant)
        .fold(0.0, f64::max);
    let coefficient_decay = dual.central_row_decay(t as f64);
    let schur_dual_t = max_derivation_schur(&core_block, t)?;

    Ok(FamilyAnalysis {
        label,
        basis,
        grid,
        t,
        c_meas,
        c_meas_lower_exponent,
        central_decay,
        gramian: g.gramian,
        asymmetry: g.asymmetry,
        quadrature_tail: g.quadrature_tail,
        gram_fit: g.gram_fit,
        riesz: g.riesz,
        dual,
        duals,
        biorthogonality,
        gram_duals,
        max_dual_norm_sq,
        max_core_diagonal,
        core_lambda_max,
        d_emp,
        dual_fits,
        coefficient_decay,
        schur_gram_derivatives: g.schur_gram_derivatives,
        schur_dual_t,
        gram_spectral_norm: g.gram_spectral_norm,
    })
}

/// Largest `|f_k(x) - f_0(x - k)|` over the grid and the given members;
/// `None` when the family has node shifts and covariance is not expected.
pub fn translation_covariance(basis: &BasisSet, grid: &Grid, ks: &[Vec<i64>]) -> Result<Option<f64>> {
    if !basis.spec().perturbations().is_empty() {
        return Ok(None);
    }
    let origin = vec![0i64; basis.window().dim()];
    let mut x = vec![0.0; grid.dim()];
    let mut shifted = vec![0.0; grid.dim()];
    let mut worst = 0.0_f64;
    for k in ks {
        for i in 0..grid.len() {
            grid.point_into(i, &mut x);
            for ((o, a), b) in shifted.iter_mut().zip(&x).zip(k) {
                *o = a - *b as f64;
            }
            worst = worst.max((basis.evaluate(k, &x)? - basis.evaluate(&origin, &shifted)?).abs());
        }
    }
    Ok(Some(worst))
}

/// Measured `C` of a perturbed family against `C_0 (3/2)^s`, with `C_0` measured
/// on the same family without shifts; `None` without shifts.
pub fn perturbation_penalty(stage: &BasisStage) -> Result<Option<(f64, f64)>> {
    let spec = stage.basis.spec();
    if spec.perturbations().is_empty() {
        return Ok(None);
    }
    let plain = make_basis(spec.without_perturbations(), *stage.basis.window())?;
    let s = spec.claimed_s();
    let c0 = measured_constant(&plain, &stage.grid, s)?;
    Ok(Some((stage.c_meas, c0 * 1.5f64.powf(s))))
}

/// Largest relative pointwise deviation between the duals of `{alpha f_k}`
/// and `alpha^{-1} g_k`, over the core of the unscaled family.
pub fn scaling_deviation(fa: &FamilyAnalysis, alpha: f64, settings: &Settings) -> Result<f64> {
    let scaled = fa.basis.scaled(alpha)?;
    let m = assemble(&scaled, &fa.grid)?.matrix;
    let dual = invert_section(&nested_sections(&m, &settings.radii)?, settings.inversion_tol)?;
    let samples = scaled.sample(&fa.grid)?;
    let mut worst = 0.0_f64;
    for g in &fa.duals {
        let gs = synthesize_from_samples(&dual, &scaled, &g.center, &samples)?;
        let peak = g.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        for (a, b) in gs.values.iter().zip(&g.values) {
            worst = worst.max((a - b / alpha).abs() / (peak / alpha));
        }
    }
    Ok(worst)
}

/// Largest relative entrywise deviation of the Gramian of `{alpha f_k}` from `alpha^2 M`.
pub fn bilinearity_deviation(fa: &FamilyAnalysis, alpha: f64) -> Result<f64> {
    let scaled = fa.basis.scaled(alpha)?;
    let m = assemble(&scaled, &fa.grid)?.matrix;
    let expected = fa.gramian.entries() * (alpha * alpha);
    let scale = expected.amax();
    Ok((m.entries() - expected).amax() / scale)
}

/// Lemma-coef transfer for one dual: envelope of `g_k` at exponent `t`
/// against `4^t K_b alpha C`, where `alpha` is the coefficient envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferCheck {
    pub k: Vec<i64>,
    pub coefficient_envelope: f64,
    pub dual_envelope: f64,
    pub bound: f64,
}

/// Calibrated constants and per-family bounds for a suite in one dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteCalibration {
    pub d: usize,
    pub t: u32,
    /// `c_d` with `schur(D_h^u(M)) <= c_d C^2 W_{s-t}` for `u <= t`.
    pub schur_constant: Calibration,
    /// Present when at least three families are eligible.
    pub e: Option<ECalibration>,
    /// Discrete convolution constant at exponent `t`.
    pub convolution_t: Calibration,
    pub recursions: Vec<(String, RecursionTrace)>,
    pub transfers: Vec<(String, Vec<TransferCheck>)>,
    /// `W_{s-t}` per family.
    pub w_values: Vec<(String, f64)>,
}

/// Calibrates `c_d`, `E` and the transfer constant over the families that
/// satisfy the hypotheses.
pub fn calibrate_suite(families: &[FamilyAnalysis], w_tol: f64) -> Result<SuiteCalibration> {
    let eligible: Vec<&FamilyAnalysis> =
        families.iter().filter(|f| f.satisfies_hypotheses()).collect();
    let first = eligible
        .first()
        .ok_or_else(|| Error::InvalidParameter("no family satisfies s > d + t".into()))?;
    let (d, t) = (first.dim(), first.t);
    if eligible.iter().any(|f| f.dim() != d || f.t != t) {
        return Err(Error::InvalidParameter(
            "suite families must share dimension and target".into(),
        ));
    }

    let mut w_values = Vec::new();
    let mut schur_points = Vec::new();
    for f in &eligible {
        let w = compute_w(f.s() - t as f64, d, w_tol)?.value;
        w_values.push((f.label.clone(), w));
        for (u, sb) in f.schur_gram_derivatives.iter().enumerate() {
            schur_points.push(CalibrationPoint {
                case: format!("{} u={u}", f.label),
                ratio: sb / (f.c_used().powi(2) * w),
            });
        }
    }
    let schur_constant = Calibration::from_points(schur_points)?;

    let members: Vec<SuiteMember> = eligible.iter().map(|f| f.suite_member()).collect();
    let e = if members.len() >= 3 {
        Some(calibrate_e(&members)?)
    } else {
        None
    };

    let recursions = eligible
        .iter()
        .zip(&w_values)
        .map(|(f, (_, w))| {
            Ok((
                f.label.clone(),
                recursion_trace(f.a_est(), f.c_used(), *w, t, schur_constant.constant)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    // |k0 - j| reaches the grid extent plus the window radius.
    let reach = eligible
        .iter()
        .map(|f| f.grid.extent().ceil() as usize + f.basis.window().radius() + 1)
        .max()
        .unwrap_or(1);
    let (k_radius, j_radius) = if d == 1 { (reach, 4096) } else { (reach, 2 * reach + 64) };
    let convolution_t = verify_convolution_discrete(t as f64, d, k_radius, j_radius)?;
    let factor = 4f64.powi(t as i32) * convolution_t.constant;
    let transfers = eligible
        .iter()
        .map(|f| {
            let checks = f
                .dual_fits
                .iter()
                .map(|(k, m)| {
                    let alpha = f.dual.coefficient_envelope(k, t as f64)?;
                    Ok(TransferCheck {
                        k: k.clone(),
                        coefficient_envelope: alpha,
                        dual_envelope: m.envelope.constant,
                        bound: factor * alpha * f.c_meas,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((f.label.clone(), checks))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SuiteCalibration {
        d,
        t,
        schur_constant,
        e,
        convolution_t,
        recursions,
        transfers,
        w_values,
    })
}

/// The shipped one-dimensional suite at target `t = 2`, claimed exponent 5.
pub fn shipped_suite_d1() -> Vec<(String, GeneratorSpec)> {
    use crate::basis::Family;
    let s = 5.0;
    vec![
        (
            "bump".into(),
            GeneratorSpec::new(Family::PolynomialBump { s }, 1),
        ),
        (
            "gaussian".into(),
            GeneratorSpec::new(Family::Gaussian { sigma: 0.5 }, 1).with_claimed_decay(s),
        ),
        (
            "hat".into(),
            GeneratorSpec::new(Family::BsplineOrder { m: 1 }, 1).with_claimed_decay(s),
        ),
        (
            "indicator".into(),
            GeneratorSpec::new(Family::BsplineIndicator, 1).with_claimed_decay(s),
        ),
        (
            "bump-perturbed".into(),
            GeneratorSpec::new(Family::PolynomialBump { s }, 1).with_perturbation(vec![0], vec![0.3]),
        ),
    ]
}

/// Runs every family of `suite` at `settings`.
pub fn analyze_suite(suite: &[(String, GeneratorSpec)], settings: &Settings) -> Result<Vec<FamilyAnalysis>> {
    suite
        .iter()
        .map(|(label, spec)| analyze_family(label, spec.clone(), settings))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Family;

    #[test]
    fn schedules() {
        assert_eq!(default_schedule(16), vec![4, 8, 12, 16]);
        assert_eq!(default_schedule(32), vec![4, 8, 16, 24, 32]);
        assert_eq!(default_schedule(8), vec![4, 6, 8]);
        assert_eq!(default_schedule(4), vec![3, 4]);
        assert_eq!(Settings::default().extent(), 24.0);
    }

    #[test]
    fn settings_validation() {
        let repeated = Settings {
            radii: vec![8, 8],
            ..Settings::default()
        };
        assert!(repeated.validate().is_err());
        let zero_tol = Settings {
            inversion_tol: 0.0,
            ..Settings::default()
        };
        assert!(zero_tol.validate().is_err());
    }

    fn small() -> Settings {
        Settings {
            grid_spacing: 1.0 / 16.0,
            inversion_tol: 1e-6,
            ..Settings::for_window(8)
        }
    }

    #[test]
    fn indicator_family_is_self_dual() {
        let spec = GeneratorSpec::new(Family::BsplineIndicator, 1).with_claimed_decay(5.0);
        let fa = analyze_family("ind", spec, &small()).unwrap();
        assert_eq!(fa.a_est(), 1.0);
        assert_eq!(fa.riesz.b_est, 1.0);
        assert!(fa.biorthogonality < 1e-12);
        assert_eq!(fa.max_dual_norm_sq, 1.0);
        assert_eq!(fa.schur_gram_derivatives, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn bump_family_pipeline() {
        let spec = GeneratorSpec::new(Family::PolynomialBump { s: 5.0 }, 1);
        let settings = small();
        let fa = analyze_family("bump", spec, &settings).unwrap();
        assert!(fa.satisfies_hypotheses());
        assert!(fa.biorthogonality < 1e-10);
        assert!(fa.max_dual_norm_sq <= 1.0 / fa.a_est());
        assert!(fa.core_lambda_max <= 1.0 / fa.a_est() * (1.0 + 1e-9));
        assert!((fa.c_meas - 1.0).abs() < 1e-12);
        assert_eq!(scaling_deviation(&fa, 0.5, &settings).unwrap(), 0.0);
        assert!(bilinearity_deviation(&fa, 3.0).unwrap() < 1e-14);
    }

    #[test]
    fn covariance_and_penalty() {
        let settings = small();
        let plain = analyze_basis("bump", GeneratorSpec::new(Family::PolynomialBump { s: 5.0 }, 1), &settings).unwrap();
        let ks = vec![vec![3], vec![-5]];
        assert_eq!(translation_covariance(&plain.basis, &plain.grid, &ks).unwrap(), Some(0.0));
        assert_eq!(perturbation_penalty(&plain).unwrap(), None);
        let shifted = analyze_basis(
            "shifted",
            GeneratorSpec::new(Family::PolynomialBump { s: 5.0 }, 1).with_perturbation(vec![0], vec![0.5]),
            &settings,
        )
        .unwrap();
        let (c, allowed) = perturbation_penalty(&shifted).unwrap().unwrap();
        assert!(c > 1.0 && c <= allowed, "{c} vs {allowed}");
        assert_eq!(translation_covariance(&shifted.basis, &shifted.grid, &ks).unwrap(), None);
    }

    #[test]
    fn e_needs_three_eligible_families() {
        let settings = small();
        let suite = shipped_suite_d1();
        let picked = [suite[0].clone(), suite[3].clone()];
        let fams = analyze_suite(&picked, &settings).unwrap();
        let cal = calibrate_suite(&fams, 1e-12).unwrap();
        assert!(cal.e.is_none());
        assert_eq!(cal.recursions.len(), 2);
    }
}
