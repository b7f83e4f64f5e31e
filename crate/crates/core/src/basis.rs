//! Localized function families centered at (possibly perturbed) lattice nodes.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envelope::{DecayMeasurement, ShellProfile};
use crate::error::{Error, Result};
use crate::lattice::{distance_to_node, max_norm, Grid, LatticeWindow};

/// Exponent claimed for families whose decay is faster than any polynomial
/// when the caller does not choose one.
pub const DEFAULT_CLAIMED_DECAY: f64 = 5.0;

/// Generator shapes. Multivariate members are tensor products except the
/// polynomial bump, which is radial in the max-norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Family {
    /// `(1 + |y|)^{-s}`
    PolynomialBump { s: f64 },
    /// `exp(-|y|_2^2 / (2 sigma^2))`
    Gaussian { sigma: f64 },
    /// Indicator of `[0,1)^d`, so member `k` lives on `k + [0,1)^d`.
    BsplineIndicator,
    /// Centered cardinal B-spline of degree `m` (order `m`, support `[-(m+1)/2, (m+1)/2]`).
    BsplineOrder { m: u32 },
}

impl Family {
    pub const TAGS: [&'static str; 4] = [
        "polynomial-bump",
        "gaussian",
        "bspline-indicator",
        "bspline-order-m",
    ];

    /// Builds a family from its tag and its single shape parameter.
    pub fn from_tag(tag: &str, param: Option<f64>) -> Result<Self> {
        let need = |name: &str| {
            param.ok_or_else(|| {
                Error::InvalidParameter(format!("family `{tag}` needs parameter `{name}`"))
            })
        };
        let family = match tag {
            "polynomial-bump" => Family::PolynomialBump { s: need("s")? },
            "gaussian" => Family::Gaussian {
                sigma: need("sigma")?,
            },
            "bspline-indicator" => Family::BsplineIndicator,
            "bspline-order-m" => {
                let m = need("m")?;
                if m < 0.0 || m.fract() != 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "spline order must be a nonnegative integer, got {m}"
                    )));
                }
                Family::BsplineOrder { m: m as u32 }
            }
            other => return Err(Error::UnknownFamily(other.to_string())),
        };
        family.validate()?;
        Ok(family)
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Family::PolynomialBump { .. } => Self::TAGS[0],
            Family::Gaussian { .. } => Self::TAGS[1],
            Family::BsplineIndicator => Self::TAGS[2],
            Family::BsplineOrder { .. } => Self::TAGS[3],
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Family::PolynomialBump { s } if !(s > 0.0 && s.is_finite()) => Err(
                Error::InvalidParameter(format!("bump exponent must be positive, got {s}")),
            ),
            Family::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => Err(
                Error::InvalidParameter(format!("gaussian width must be positive, got {sigma}")),
            ),
            Family::BsplineOrder { m } if m > 12 => Err(Error::InvalidParameter(format!(
                "spline order {m} too large for the truncated-power formula"
            ))),
            _ => Ok(()),
        }
    }

    /// Value of the generator at offset `y` from its node.
    pub fn generator(&self, y: &[f64]) -> f64 {
        match *self {
            Family::PolynomialBump { s } => (1.0 + max_norm(y)).powf(-s),
            Family::Gaussian { sigma } => {
                let r2: f64 = y.iter().map(|v| v * v).sum();
                (-r2 / (2.0 * sigma * sigma)).exp()
            }
            Family::BsplineIndicator => {
                if y.iter().all(|&v| (0.0..1.0).contains(&v)) {
                    1.0
                } else {
                    0.0
                }
            }
            Family::BsplineOrder { m } => y.iter().map(|&v| centered_bspline(m, v)).product(),
        }
    }

    /// Max-norm radius of the support around the node, `None` if unbounded.
    pub fn support_radius(&self) -> Option<f64> {
        match *self {
            Family::BsplineIndicator => Some(1.0),
            Family::BsplineOrder { m } => Some((m as f64 + 1.0) / 2.0),
            _ => None,
        }
    }

    /// `sup_y |phi(y)| (1+|y|)^s` for the unperturbed generator in dimension `dim`.
    pub fn envelope_constant(&self, s: f64, dim: usize) -> f64 {
        match *self {
            Family::PolynomialBump { s: own } => {
                if s <= own {
                    1.0
                } else {
                    f64::INFINITY
                }
            }
            Family::Gaussian { sigma } => {
                // |y|_2 >= |y|_inf, so the radial profile in the max-norm radius dominates.
                if s <= 0.0 {
                    return 1.0;
                }
                let r = (-1.0 + (1.0 + 4.0 * s * sigma * sigma).sqrt()) / 2.0;
                (-r * r / (2.0 * sigma * sigma)).exp() * (1.0 + r).powf(s)
            }
            Family::BsplineIndicator => 2f64.powf(s.max(0.0)),
            Family::BsplineOrder { m } => {
                let rho = (m as f64 + 1.0) / 2.0;
                let steps = 20_000;
                let sup1 = (0..=steps)
                    .map(|i| {
                        let y = rho * i as f64 / steps as f64;
                        centered_bspline(m, y) * (1.0 + y).powf(s)
                    })
                    .fold(0.0_f64, f64::max);
                // Sampled supremum, padded for the gap between scan points.
                let peak = centered_bspline(m, 0.0);
                sup1 * (1.0 + 1e-6) * peak.powi(dim as i32 - 1)
            }
        }
    }
}

/// Centered cardinal B-spline of degree `m` via truncated powers.
pub fn centered_bspline(m: u32, x: f64) -> f64 {
    if m == 0 {
        return if (-0.5..0.5).contains(&x) { 1.0 } else { 0.0 };
    }
    let half = (m as f64 + 1.0) / 2.0;
    if x.abs() >= half {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut binom = 1.0;
    let mut fact = 1.0;
    for i in 1..=m {
        fact *= i as f64;
    }
    for j in 0..=(m + 1) {
        let y = x + half - j as f64;
        if y > 0.0 {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * binom * y.powi(m as i32);
        }
        binom = binom * (m + 1 - j) as f64 / (j + 1) as f64;
    }
    (acc / fact).max(0.0)
}

/// A family `{f_k}` before it is bound to a window: generator, scaling,
/// finitely many node shifts and the claimed decay `|f_k(x)| <= C (1+|x-k|)^{-s}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    family: Family,
    dim: usize,
    scale: f64,
    perturbations: BTreeMap<Vec<i64>, Vec<f64>>,
    perturbation_cap: f64,
    claimed_c: f64,
    claimed_s: f64,
    explicit_claim: bool,
}

impl GeneratorSpec {
    pub const DEFAULT_PERTURBATION_CAP: f64 = 0.5;

    pub fn new(family: Family, dim: usize) -> Self {
        let claimed_s = match family {
            Family::PolynomialBump { s } => s,
            _ => DEFAULT_CLAIMED_DECAY,
        };
        let mut spec = Self {
            family,
            dim,
            scale: 1.0,
            perturbations: BTreeMap::new(),
            perturbation_cap: Self::DEFAULT_PERTURBATION_CAP,
            claimed_c: 1.0,
            claimed_s,
            explicit_claim: false,
        };
        spec.refresh_claim();
        spec
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self.refresh_claim();
        self
    }

    pub fn with_perturbation(mut self, node: Vec<i64>, shift: Vec<f64>) -> Self {
        self.perturbations.insert(node, shift);
        self.refresh_claim();
        self
    }

    /// The same spec with every node shift removed.
    pub fn without_perturbations(&self) -> Self {
        let mut spec = self.clone();
        spec.perturbations.clear();
        spec.refresh_claim();
        spec
    }

    pub fn with_perturbation_cap(mut self, cap: f64) -> Self {
        self.perturbation_cap = cap;
        self
    }

    /// Decay exponent to claim; the constant is recomputed unless set explicitly.
    pub fn with_claimed_decay(mut self, s: f64) -> Self {
        self.claimed_s = s;
        self.refresh_claim();
        self
    }

    pub fn with_claim(mut self, c: f64, s: f64) -> Self {
        self.claimed_c = c;
        self.claimed_s = s;
        self.explicit_claim = true;
        self
    }

    fn refresh_claim(&mut self) {
        if self.explicit_claim {
            return;
        }
        self.claimed_c = self.sound_constant(self.claimed_s).max(1.0);
    }

    /// A constant `C` valid for every member at exponent `s`: the generator
    /// envelope inflated by `(1 + |delta|)^s` for the largest node shift.
    pub fn sound_constant(&self, s: f64) -> f64 {
        let shift = self
            .perturbations
            .values()
            .map(|d| max_norm(d))
            .fold(0.0_f64, f64::max);
        self.scale.abs() * self.family.envelope_constant(s, self.dim) * (1.0 + shift).powf(s)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn claimed_c(&self) -> f64 {
        self.claimed_c
    }

    pub fn claimed_s(&self) -> f64 {
        self.claimed_s
    }

    pub fn perturbations(&self) -> &BTreeMap<Vec<i64>, Vec<f64>> {
        &self.perturbations
    }

    pub fn perturbation_cap(&self) -> f64 {
        self.perturbation_cap
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        if self.dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "scale must be positive, got {}",
                self.scale
            )));
        }
        if !(self.claimed_c >= 1.0) || !self.claimed_c.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "claimed C must be finite and >= 1, got {}",
                self.claimed_c
            )));
        }
        if !(self.claimed_s > self.dim as f64) {
            return Err(Error::InvalidParameter(format!(
                "claimed decay s = {} must exceed the dimension {}",
                self.claimed_s, self.dim
            )));
        }
        if !(self.perturbation_cap >= 0.0) {
            return Err(Error::InvalidParameter("perturbation cap must be >= 0".into()));
        }
        for (node, shift) in &self.perturbations {
            if node.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: node.len(),
                });
            }
            if shift.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: shift.len(),
                });
            }
            let magnitude = max_norm(shift);
            if !(magnitude <= self.perturbation_cap) {
                return Err(Error::PerturbationTooLarge {
                    node: node.clone(),
                    magnitude,
                    cap: self.perturbation_cap,
                });
            }
        }
        Ok(())
    }
}

/// Samples of every member on a grid, one row per window position.
#[derive(Debug, Clone)]
pub struct Samples {
    pub grid: Grid,
    pub rows: Vec<Vec<f64>>,
}

/// Claimed envelope of a single member, used for quadrature tail bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberEnvelope {
    pub constant: f64,
    pub exponent: f64,
    /// Lattice node `k` the envelope is measured from.
    pub center: Vec<f64>,
    /// Max-norm radius around `center` outside which the member vanishes.
    pub support_radius: Option<f64>,
}

/// A function on `R^d` with a known decay envelope.
pub trait Localized: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn envelope(&self) -> MemberEnvelope;
}

/// `{f_k : k in window}` for one generator spec.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    spec: GeneratorSpec,
    window: LatticeWindow,
    nodes: Vec<Vec<f64>>,
}

pub fn make_basis(spec: GeneratorSpec, window: LatticeWindow) -> Result<BasisSet> {
    spec.validate()?;
    if spec.dim() != window.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            got: window.dim(),
        });
    }
    let nodes = window
        .iter()
        .map(|k| {
            let mut node: Vec<f64> = k.iter().map(|&v| v as f64).collect();
            if let Some(delta) = spec.perturbations.get(&k) {
                for (n, d) in node.iter_mut().zip(delta) {
                    *n += d;
                }
            }
            node
        })
        .collect();
    Ok(BasisSet {
        spec,
        window,
        nodes,
    })
}

impl BasisSet {
    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn window(&self) -> &LatticeWindow {
        &self.window
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Concentration node `k + delta_k` of the member at `pos`.
    pub fn node(&self, pos: usize) -> &[f64] {
        &self.nodes[pos]
    }

    /// Same family with every member multiplied by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Result<BasisSet> {
        make_basis(self.spec.clone().with_scale(self.spec.scale * alpha), self.window)
    }

    pub fn evaluate(&self, k: &[i64], x: &[f64]) -> Result<f64> {
        let pos = self
            .window
            .position(k)
            .ok_or_else(|| Error::IndexOutOfWindow(k.to_vec()))?;
        if x.len() != self.window.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.window.dim(),
                got: x.len(),
            });
        }
        Ok(self.value_at(pos, x))
    }

    /// `f_k(x)` for the member at enumeration position `pos`.
    pub fn value_at(&self, pos: usize, x: &[f64]) -> f64 {
        let node = &self.nodes[pos];
        let mut y = [0.0f64; 8];
        let d = x.len();
        if d <= y.len() {
            for i in 0..d {
                y[i] = x[i] - node[i];
            }
            self.spec.scale * self.spec.family.generator(&y[..d])
        } else {
            let y: Vec<f64> = x.iter().zip(node).map(|(a, b)| a - b).collect();
            self.spec.scale * self.spec.family.generator(&y)
        }
    }

    pub fn member(&self, pos: usize) -> Member<'_> {
        Member { basis: self, pos }
    }

    pub fn sample(&self, grid: &Grid) -> Result<Samples> {
        if grid.dim() != self.window.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.window.dim(),
                got: grid.dim(),
            });
        }
        let rows = (0..self.len())
            .into_par_iter()
            .map(|pos| {
                let mut x = vec![0.0; grid.dim()];
                (0..grid.len())
                    .map(|i| {
                        grid.point_into(i, &mut x);
                        self.value_at(pos, &x)
                    })
                    .collect()
            })
            .collect();
        Ok(Samples { grid: *grid, rows })
    }
}

/// One member of a [`BasisSet`].
#[derive(Debug, Clone, Copy)]
pub struct Member<'a> {
    basis: &'a BasisSet,
    pos: usize,
}

impl Localized for Member<'_> {
    fn dim(&self) -> usize {
        self.basis.window.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.basis.value_at(self.pos, x)
    }

    fn envelope(&self) -> MemberEnvelope {
        let lattice = self.basis.window.index(self.pos);
        let node = &self.basis.nodes[self.pos];
        let shift = node
            .iter()
            .zip(&lattice)
            .fold(0.0_f64, |a, (n, &k)| a.max((n - k as f64).abs()));
        MemberEnvelope {
            constant: self.basis.spec.claimed_c,
            exponent: self.basis.spec.claimed_s,
            center: lattice.iter().map(|&v| v as f64).collect(),
            support_radius: self.basis.spec.family.support_radius().map(|r| r + shift),
        }
    }
}

/// Radius around the node that decay measurements must see.
pub const DECAY_WINDOW: f64 = 8.0;

/// Envelope of `f_k` at exponent `u` over the grid, measured from the lattice node `k`.
pub fn measure_decay(basis: &BasisSet, k: &[i64], grid: &Grid, u: f64) -> Result<DecayMeasurement> {
    let pos = basis
        .window
        .position(k)
        .ok_or_else(|| Error::IndexOutOfWindow(k.to_vec()))?;
    let center: Vec<f64> = k.iter().map(|&v| v as f64).collect();
    if !grid.covers(&center, DECAY_WINDOW) {
        return Err(Error::GridTooSmall {
            extent: grid.extent(),
            needed: max_norm(&center) + DECAY_WINDOW,
        });
    }
    Ok(profile_over_grid(grid, k, u, |_, x| basis.value_at(pos, x)).finish())
}

/// Shell profile of `f(i, x_i)` around lattice node `k` over every grid point.
pub(crate) fn profile_over_grid<F>(grid: &Grid, k: &[i64], u: f64, f: F) -> ShellProfile
where
    F: Fn(usize, &[f64]) -> f64 + Sync,
{
    let chunk = 4096;
    let n = grid.len();
    (0..n.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut prof = ShellProfile::new(u);
            let mut x = vec![0.0; grid.dim()];
            for i in c * chunk..((c + 1) * chunk).min(n) {
                grid.point_into(i, &mut x);
                prof.push(distance_to_node(&x, k), f(i, &x));
            }
            prof
        })
        .reduce(|| ShellProfile::new(u), ShellProfile::merge)
}

/// Writes sampled values as CSV with columns `x_1..x_d,value`.
pub fn write_samples_csv<W: Write>(mut out: W, grid: &Grid, values: &[f64]) -> Result<()> {
    let header: Vec<String> = (1..=grid.dim()).map(|i| format!("x_{i}")).collect();
    writeln!(out, "{},value", header.join(","))?;
    let mut x = vec![0.0; grid.dim()];
    for (i, v) in values.iter().enumerate() {
        grid.point_into(i, &mut x);
        for xi in &x {
            write!(out, "{xi},")?;
        }
        writeln!(out, "{v:e}")?;
    }
    Ok(())
}
