use std::path::{Path, PathBuf};

use rieszdual::analysis::{default_schedule, Settings};
use rieszdual::basis::{Family, GeneratorSpec};
use rieszdual::bounds::TheoreticalBound;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub window: WindowConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub targets: TargetConfig,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(rename = "family")]
    pub families: Vec<FamilyConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub dim: usize,
    pub radius: usize,
    /// Nested section radii ending at `radius`; defaults to the standard schedule.
    pub radii: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub spacing: f64,
    /// Defaults to the window radius plus 8.
    pub extent: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            spacing: 1.0 / 64.0,
            extent: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub t: u32,
    /// Scale factor for the homogeneity and bilinearity checks.
    pub alpha: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self { t: 2, alpha: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    pub inversion: f64,
    pub lattice_sum: f64,
    pub biorthogonality: f64,
    pub quadrature: f64,
    pub scaling: f64,
    pub interlacing: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            inversion: 1e-8,
            lattice_sum: 1e-12,
            biorthogonality: 1e-6,
            quadrature: 1e-6,
            scaling: 1e-10,
            interlacing: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub name: String,
    pub family: String,
    pub s: Option<f64>,
    pub sigma: Option<f64>,
    pub m: Option<f64>,
    pub claimed_c: Option<f64>,
    pub claimed_s: Option<f64>,
    pub scale: Option<f64>,
    #[serde(default)]
    pub perturbations: Vec<PerturbationConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    pub node: Vec<i64>,
    pub shift: Vec<f64>,
}

impl FamilyConfig {
    fn shape_parameter(&self) -> Option<f64> {
        match self.family.as_str() {
            "polynomial-bump" => self.s,
            "gaussian" => self.sigma,
            "bspline-order-m" => self.m,
            _ => None,
        }
    }

    /// Claimed `(C, s)` as they will enter the hypotheses.
    pub fn spec(&self, dim: usize) -> Result<GeneratorSpec, CliError> {
        let family = Family::from_tag(&self.family, self.shape_parameter())
            .map_err(|e| CliError::Config(format!("family `{}`: {e}", self.name)))?;
        let mut spec = GeneratorSpec::new(family, dim);
        if let Some(scale) = self.scale {
            spec = spec.with_scale(scale);
        }
        for p in &self.perturbations {
            spec = spec.with_perturbation(p.node.clone(), p.shift.clone());
        }
        if let Some(s) = self.claimed_s {
            spec = spec.with_claimed_decay(s);
        }
        if let Some(c) = self.claimed_c {
            let s = spec.claimed_s();
            spec = spec.with_claim(c, s);
        }
        Ok(spec)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn settings(&self) -> Settings {
        Settings {
            radii: self
                .window
                .radii
                .clone()
                .unwrap_or_else(|| default_schedule(self.window.radius)),
            grid_spacing: self.grid.spacing,
            grid_extent: self.grid.extent,
            t: self.targets.t,
            inversion_tol: self.tolerances.inversion,
            w_tol: self.tolerances.lattice_sum,
        }
    }

    /// Validates the config and returns the family specs. Structural problems
    /// are config errors; claimed constants that break the hypotheses are
    /// reported as hypothesis violations before any heavy computation.
    pub fn validate(&self) -> Result<Vec<(String, GeneratorSpec)>, CliError> {
        let t = &self.tolerances;
        for (name, v) in [
            ("inversion", t.inversion),
            ("lattice_sum", t.lattice_sum),
            ("biorthogonality", t.biorthogonality),
            ("quadrature", t.quadrature),
            ("scaling", t.scaling),
            ("interlacing", t.interlacing),
            ("alpha", self.targets.alpha),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.window.dim == 0 {
            return Err(CliError::Config("window dimension must be positive".into()));
        }
        if self.families.is_empty() {
            return Err(CliError::Config("no [[family]] given".into()));
        }
        let settings = self.settings();
        if settings.radii.last() != Some(&self.window.radius) {
            return Err(CliError::Config("the last section radius must equal the window radius".into()));
        }
        settings.validate().map_err(|e| CliError::Config(e.to_string()))?;
        settings
            .grid(self.window.dim)
            .map_err(|e| CliError::Config(e.to_string()))?;

        let mut names = std::collections::BTreeSet::new();
        let mut specs = Vec::with_capacity(self.families.len());
        for f in &self.families {
            if f.name.is_empty() || f.name.contains(['/', '\\']) || !names.insert(f.name.clone()) {
                return Err(CliError::Config(format!("bad or duplicate family name `{}`", f.name)));
            }
            let spec = f.spec(self.window.dim)?;
            TheoreticalBound::check_hypotheses(spec.claimed_c(), spec.claimed_s(), self.targets.t, self.window.dim)
                .map_err(|e| CliError::Hypothesis(format!("family `{}`: {e}", f.name)))?;
            spec.validate()
                .map_err(|e| CliError::Config(format!("family `{}`: {e}", f.name)))?;
            specs.push((f.name.clone(), spec));
        }
        Ok(specs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
        seed = 3
        [window]
        dim = 1
        radius = 8
        [[family]]
        name = "bump"
        family = "polynomial-bump"
        s = 5.0
    "#;

    #[test]
    fn defaults_fill_in() {
        let cfg = RunConfig::parse(BASE).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.targets.t, 2);
        assert_eq!(cfg.settings().radii, vec![4, 6, 8]);
        assert_eq!(cfg.settings().extent(), 16.0);
        let specs = cfg.validate().unwrap();
        assert_eq!(specs[0].1.claimed_s(), 5.0);
    }

    #[test]
    fn boundary_decay_is_a_hypothesis_violation() {
        let text = BASE.replace("s = 5.0", "s = 3.0");
        match RunConfig::parse(&text).unwrap().validate() {
            Err(CliError::Hypothesis(msg)) => assert!(msg.contains("hypothesis s > d+t violated"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn small_claimed_constant_is_a_hypothesis_violation() {
        let text = BASE.replace("s = 5.0", "s = 5.0\nclaimed_c = 0.5");
        assert!(matches!(
            RunConfig::parse(&text).unwrap().validate(),
            Err(CliError::Hypothesis(_))
        ));
    }

    #[test]
    fn structural_problems_are_config_errors() {
        for bad in [
            BASE.replace("polynomial-bump", "wavelet"),
            BASE.replace("seed = 3", "seed = 3\nbogus = 1"),
            BASE.replace("radius = 8", "radius = 8\nradii = [4, 6]"),
            format!("{BASE}\n[tolerances]\ninversion = 0.0\nlattice_sum = 1e-12\nbiorthogonality = 1e-6\nquadrature = 1e-6\nscaling = 1e-10\ninterlacing = 1e-10"),
        ] {
            let r = RunConfig::parse(&bad).and_then(|c| c.validate().map(|_| ()));
            assert!(matches!(r, Err(CliError::Config(_))), "{bad}: {r:?}");
        }
    }

    #[test]
    fn perturbations_and_claims_are_applied() {
        let text = BASE.replace(
            "s = 5.0",
            "s = 5.0\nclaimed_c = 40.0\nperturbations = [{ node = [0], shift = [0.25] }]",
        );
        let specs = RunConfig::parse(&text).unwrap().validate().unwrap();
        assert_eq!(specs[0].1.claimed_c(), 40.0);
        assert_eq!(specs[0].1.perturbations().len(), 1);
        let too_big = BASE.replace("s = 5.0", "s = 5.0\nperturbations = [{ node = [0], shift = [0.75] }]");
        assert!(matches!(
            RunConfig::parse(&too_big).unwrap().validate(),
            Err(CliError::Config(_))
        ));
    }
}
