//! Decay envelopes `|f(x)| <= c (1 + r)^{-u}` measured from samples.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    MaxEnvelope,
    LoglogRegression,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeFit {
    pub constant: f64,
    pub exponent: f64,
    pub residual: f64,
    pub fit_method: FitMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayFlag {
    /// At least two nonzero shells and no trailing run of exact zeros.
    Polynomial,
    /// Samples vanish identically beyond some shell (compact support or a
    /// banded matrix), so no finite exponent describes the tail.
    SuperPolynomial,
    AllZero,
}

/// Max-envelope at a fixed exponent plus the shell-maxima regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayMeasurement {
    pub envelope: EnvelopeFit,
    pub regression: Option<EnvelopeFit>,
    pub flag: DecayFlag,
}

impl DecayMeasurement {
    /// Regression exponent, `+inf` for super-polynomial profiles.
    pub fn fitted_exponent(&self) -> f64 {
        match (self.flag, self.regression) {
            (DecayFlag::SuperPolynomial, _) | (DecayFlag::AllZero, _) => f64::INFINITY,
            (DecayFlag::Polynomial, Some(r)) => r.exponent,
            (DecayFlag::Polynomial, None) => f64::NAN,
        }
    }
}

/// Accumulates `|value|` samples at max-norm radius `r`: the envelope constant
/// at a fixed exponent and the maximum per unit shell `[n, n+1)`.
#[derive(Debug, Clone)]
pub struct ShellProfile {
    exponent: f64,
    constant: f64,
    shells: Vec<f64>,
}

impl ShellProfile {
    pub fn new(exponent: f64) -> Self {
        Self {
            exponent,
            constant: 0.0,
            shells: Vec::new(),
        }
    }

    pub fn push(&mut self, r: f64, value: f64) {
        let a = value.abs();
        let weighted = a * (1.0 + r).powf(self.exponent);
        if weighted > self.constant {
            self.constant = weighted;
        }
        let n = r.floor() as usize;
        if n >= self.shells.len() {
            self.shells.resize(n + 1, 0.0);
        }
        if a > self.shells[n] {
            self.shells[n] = a;
        }
    }

    pub fn merge(mut self, other: ShellProfile) -> ShellProfile {
        self.constant = self.constant.max(other.constant);
        if other.shells.len() > self.shells.len() {
            self.shells.resize(other.shells.len(), 0.0);
        }
        for (a, b) in self.shells.iter_mut().zip(other.shells) {
            *a = a.max(b);
        }
        self
    }

    /// Maxima per unit shell, index `n` covering radii `[n, n+1)`.
    pub fn shell_maxima(&self) -> &[f64] {
        &self.shells
    }

    /// Restricts the regression to shells `0..=max_shell`.
    pub fn truncate(&mut self, max_shell: usize) {
        self.shells.truncate(max_shell + 1);
    }

    pub fn finish(&self) -> DecayMeasurement {
        let envelope = EnvelopeFit {
            constant: self.constant,
            exponent: self.exponent,
            residual: 0.0,
            fit_method: FitMethod::MaxEnvelope,
        };
        let nonzero: Vec<(f64, f64)> = self
            .shells
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > 0.0)
            .map(|(n, &m)| ((1.0 + n as f64).ln(), m.ln()))
            .collect();
        if nonzero.is_empty() {
            return DecayMeasurement {
                envelope,
                regression: None,
                flag: DecayFlag::AllZero,
            };
        }
        let last_nonzero = self.shells.iter().rposition(|&m| m > 0.0).unwrap_or(0);
        let trailing_zeros = last_nonzero + 1 < self.shells.len();
        let regression = loglog_fit(&nonzero);
        let flag = if trailing_zeros || regression.is_none() {
            DecayFlag::SuperPolynomial
        } else {
            DecayFlag::Polynomial
        };
        DecayMeasurement {
            envelope,
            regression,
            flag,
        }
    }
}

/// Least-squares line through `(ln(1+r), ln m)`; the exponent is minus the slope.
pub fn loglog_fit(points: &[(f64, f64)]) -> Option<EnvelopeFit> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Some(EnvelopeFit {
        constant: intercept.exp(),
        exponent: -slope,
        residual: rms,
        fit_method: FitMethod::LoglogRegression,
    })
}
