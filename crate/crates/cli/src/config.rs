//! Experiment configuration: one JSON document per run.

use std::path::PathBuf;

use fbx_core::anomalous::{AnomalousConfig, AXISYM_TOL, AxisymSpec, BoundaryProfile, TouchRule};
use fbx_core::fixtures::{fixture, Fixture};
use fbx_core::monotonicity::{DEFAULT_TOL_REL, RADIUS_RATIO};
use fbx_core::solver::DEFAULT_TOL;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Solve,
    Diagnose,
    Classify,
    ConstructAnomalous,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Solve => "solve",
            Self::Diagnose => "diagnose",
            Self::Classify => "classify",
            Self::ConstructAnomalous => "construct-anomalous",
            Self::Report => "report",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Psor,
    ActiveSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// Boundary data by fixture id, e.g. `poly-diag-0.3-0.7`.
    pub fixture: String,
    pub h: f64,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    #[serde(default = "default_solver")]
    pub solver: SolverKind,
    /// PSOR relaxation; the grid's optimal value when absent.
    #[serde(default)]
    pub omega: Option<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    /// The fixture's known blow-up, if it has one.
    Fixture,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    #[serde(default)]
    pub centers: Vec<Vec<f64>>,
    #[serde(default = "default_r_max")]
    pub r_max: f64,
    #[serde(default = "default_ratio")]
    pub radius_ratio: f64,
    #[serde(default = "default_tol_rel")]
    pub tol_rel: f64,
    #[serde(default = "default_reference")]
    pub reference: Reference,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            centers: Vec::new(),
            r_max: default_r_max(),
            radius_ratio: default_ratio(),
            tol_rel: default_tol_rel(),
            reference: default_reference(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalousSection {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    pub h: f64,
    #[serde(default = "default_profile")]
    pub profile: BoundaryProfile,
    #[serde(default = "default_touch")]
    pub touch: TouchRule,
    #[serde(default = "default_bracket")]
    pub bracket: (f64, f64),
    #[serde(default = "default_tol_k")]
    pub tol_k: f64,
    #[serde(default = "default_coarsest")]
    pub coarsest_h: f64,
    #[serde(default = "default_axisym_tol")]
    pub tol: f64,
}

impl AnomalousSection {
    pub fn to_core(&self) -> AnomalousConfig {
        let spec = AxisymSpec { n: self.n, m: self.m, h: self.h, profile: self.profile, touch: self.touch, tol: self.tol };
        AnomalousConfig { bracket: self.bracket, tol_k: self.tol_k, coarsest_h: self.coarsest_h, ..AnomalousConfig::new(spec) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must match the subcommand when present.
    #[serde(default)]
    pub command: Option<Command>,
    #[serde(default)]
    pub problem: Option<ProblemConfig>,
    #[serde(default)]
    pub diagnostics: Option<DiagnosticsConfig>,
    /// Points to classify; the diagnostic centers when absent.
    #[serde(default)]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub anomalous: Option<AnomalousSection>,
    /// Manifests aggregated by `report`, relative to the config file.
    #[serde(default)]
    pub manifests: Vec<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_half_width() -> f64 {
    1.0
}
fn default_solver() -> SolverKind {
    SolverKind::ActiveSet
}
fn default_tol() -> f64 {
    DEFAULT_TOL
}
fn default_axisym_tol() -> f64 {
    AXISYM_TOL
}
fn default_r_max() -> f64 {
    0.4
}
fn default_ratio() -> f64 {
    RADIUS_RATIO
}
fn default_tol_rel() -> f64 {
    DEFAULT_TOL_REL
}
fn default_reference() -> Reference {
    Reference::Fixture
}
fn default_n() -> usize {
    3
}
fn default_m() -> usize {
    1
}
fn default_profile() -> BoundaryProfile {
    BoundaryProfile::Parabola
}
fn default_touch() -> TouchRule {
    TouchRule::Origin
}
fn default_bracket() -> (f64, f64) {
    (0.1, 200.0)
}
fn default_tol_k() -> f64 {
    1e-4
}
fn default_coarsest() -> f64 {
    1.0 / 64.0
}

fn positive(errors: &mut Vec<String>, name: &str, v: f64) {
    if !(v > 0.0 && v.is_finite()) {
        errors.push(format!("{name} must be positive and finite (got {v})"));
    }
}

impl ExperimentConfig {
    /// Every validation failure, not only the first.
    pub fn validate(&self, command: Command) -> Vec<String> {
        let mut errors = Vec::new();
        if let Some(c) = self.command {
            if c != command {
                errors.push(format!("config is for `{}` but `{}` was invoked", c.name(), command.name()));
            }
        }
        let needs_problem = matches!(command, Command::Solve | Command::Diagnose | Command::Classify);
        match (&self.problem, needs_problem) {
            (None, true) => errors.push("`problem` section is required".into()),
            (Some(p), _) => {
                positive(&mut errors, "problem.h", p.h);
                positive(&mut errors, "problem.tol", p.tol);
                positive(&mut errors, "problem.half_width", p.half_width);
                if let Some(w) = p.omega {
                    if !(w > 0.0 && w < 2.0) {
                        errors.push(format!("problem.omega must lie in (0, 2) (got {w})"));
                    }
                }
                match fixture(&p.fixture) {
                    Ok(f) => {
                        let dim = f.dim;
                        for (i, c) in self.centers().iter().enumerate() {
                            if c.len() != dim {
                                errors.push(format!("center {i} has dimension {} but the fixture has {dim}", c.len()));
                            }
                        }
                    }
                    Err(e) => errors.push(format!("problem.fixture: {e}")),
                }
            }
            (None, false) => {}
        }
        if let Some(d) = &self.diagnostics {
            positive(&mut errors, "diagnostics.r_max", d.r_max);
            positive(&mut errors, "diagnostics.tol_rel", d.tol_rel);
            if !(d.radius_ratio > 0.0 && d.radius_ratio < 1.0) {
                errors.push(format!("diagnostics.radius_ratio must lie in (0, 1) (got {})", d.radius_ratio));
            }
        }
        if command == Command::ConstructAnomalous {
            match &self.anomalous {
                None => errors.push("`anomalous` section is required".into()),
                Some(a) => {
                    positive(&mut errors, "anomalous.h", a.h);
                    positive(&mut errors, "anomalous.tol", a.tol);
                    positive(&mut errors, "anomalous.tol_k", a.tol_k);
                    positive(&mut errors, "anomalous.coarsest_h", a.coarsest_h);
                    if !(a.bracket.0 > 0.0 && a.bracket.1 > a.bracket.0) {
                        errors.push(format!("anomalous.bracket {:?} is not an increasing positive pair", a.bracket));
                    }
                    if let Err(e) = a.to_core().spec.validate() {
                        errors.push(format!("anomalous: {e}"));
                    }
                }
            }
        }
        if command == Command::Report && self.manifests.is_empty() {
            errors.push("`manifests` must list at least one manifest".into());
        }
        errors
    }

    pub fn diagnostics(&self) -> DiagnosticsConfig {
        self.diagnostics.clone().unwrap_or_default()
    }

    /// Diagnostic centers, defaulting to the origin.
    pub fn centers(&self) -> Vec<Vec<f64>> {
        let d = self.diagnostics();
        if !d.centers.is_empty() {
            return d.centers;
        }
        let dim = self.problem.as_ref().and_then(|p| fixture(&p.fixture).ok()).map_or(2, |f| f.dim);
        vec![vec![0.0; dim]]
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        self.points.clone().unwrap_or_else(|| self.centers())
    }

    pub fn fixture(&self) -> Option<Fixture> {
        self.problem.as_ref().and_then(|p| fixture(&p.fixture).ok())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let text = r#"{"command":"diagnose","problem":{"fixture":"poly-diag-0.3-0.7","h":0.03125},
            "diagnostics":{"centers":[[0.0,0.0]],"r_max":0.3}}"#;
        let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
        let again: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, again);
        assert!(cfg.validate(Command::Diagnose).is_empty());
    }

    #[test]
    fn all_errors_listed() {
        let text = r#"{"command":"solve","problem":{"fixture":"nope","h":-1,"tol":0},
            "diagnostics":{"radius_ratio":2}}"#;
        let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
        let errors = cfg.validate(Command::Diagnose);
        assert_eq!(errors.len(), 5, "{errors:?}");
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"problme":{}}"#).is_err());
    }
}
