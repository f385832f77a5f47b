use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{ModelParameters, PatientState, PharmacodynamicsParameters};
use crate::error::{Error, Result};
use crate::integrator::IntegratorSettings;
use crate::objective::{build_weights_normalized, DEFAULT_NORMALIZATION_DAYS};
use crate::optimizers::{Method, Scenario, SolverSettings};
use crate::regimens::DoseGrid;

/// Exposure multipliers of the nine reference scenarios, in table order.
pub const REFERENCE_G_VECTORS: [[f64; 3]; 9] = [
    [1.0, 1.0, 1.0],
    [5.0, 1.0, 1.0],
    [1.0, 5.0, 1.0],
    [1.0, 1.0, 5.0],
    [5.0, 5.0, 1.0],
    [5.0, 1.0, 5.0],
    [1.0, 5.0, 5.0],
    [5.0, 5.0, 5.0],
    [1.0, 5.0, 0.5],
];

/// Length used to normalize `beta` and `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// A fixed 360 days, whatever the horizon.
    #[default]
    Fixed,
    /// The scenario horizon.
    Horizon,
}

/// A complete scenario description as read from a TOML document. Every field has a
/// default, so an empty document describes the reference scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub horizon: f64,
    pub period: f64,
    pub weight_normalization: Normalization,
    pub g_vectors: Vec<[f64; 3]>,
    pub methods: Vec<Method>,
    pub output_dir: Option<PathBuf>,
    pub initial: PatientState,
    pub parameters: ModelParameters,
    pub pharmacodynamics: PharmacodynamicsParameters,
    pub grid: DoseGrid,
    pub integrator: IntegratorSettings,
    pub solver: SolverSettings,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            horizon: 360.0,
            period: 90.0,
            weight_normalization: Normalization::Fixed,
            g_vectors: REFERENCE_G_VECTORS.to_vec(),
            methods: Method::ALL.to_vec(),
            output_dir: None,
            initial: PatientState::table_default(),
            parameters: ModelParameters::default(),
            pharmacodynamics: PharmacodynamicsParameters::default(),
            grid: DoseGrid::default(),
            integrator: IntegratorSettings::default(),
            solver: SolverSettings::default(),
        }
    }
}

impl ScenarioConfig {
    /// Parses and validates a TOML document. Syntax and type errors carry the line and
    /// column reported by the parser; validation errors name the offending line when the
    /// key appears in the document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate().map_err(|e| locate(text, e))?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::param("horizon", "must be finite and > 0"));
        }
        for (k, g) in self.g_vectors.iter().enumerate() {
            if g.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::param(
                    "g_vectors",
                    format!("entry {k} has a negative or non-finite value"),
                ));
            }
        }
        let mut methods = self.methods.clone();
        methods.sort();
        methods.dedup();
        if methods.len() != self.methods.len() {
            return Err(Error::param("methods", "lists a method twice"));
        }
        self.scenario([1.0; 3])?.validate()?;
        if self
            .methods
            .iter()
            .any(|m| matches!(m, Method::Optimal | Method::Approximation))
        {
            self.solver.validate(self.horizon)?;
        }
        Ok(())
    }

    pub fn normalization_days(&self) -> f64 {
        match self.weight_normalization {
            Normalization::Fixed => DEFAULT_NORMALIZATION_DAYS,
            Normalization::Horizon => self.horizon,
        }
    }

    pub fn scenario(&self, g: [f64; 3]) -> Result<Scenario> {
        let weights = build_weights_normalized(
            g,
            self.initial.m,
            &self.pharmacodynamics.max_dose,
            self.horizon,
            self.normalization_days(),
        )?;
        Ok(Scenario {
            params: self.parameters.clone(),
            pd: self.pharmacodynamics.clone(),
            initial: self.initial,
            horizon: self.horizon,
            period: self.period,
            grid: self.grid.clone(),
            weights,
            integrator: self.integrator.clone(),
        })
    }
}

fn locate(text: &str, err: Error) -> Error {
    let Error::InvalidParameter { name, reason } = &err else {
        return Error::Config(err.to_string());
    };
    let key = name
        .split(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .find(|s| !s.is_empty())
        .unwrap_or(name);
    let line = text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    });
    match line {
        Some(n) => Error::Config(format!("line {}: invalid `{name}`: {reason}", n + 1)),
        None => Error::Config(format!("invalid `{name}`: {reason}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_reference_scenario() {
        let c = ScenarioConfig::from_toml_str("").unwrap();
        assert_eq!(c, ScenarioConfig::default());
        assert_eq!(c.g_vectors.len(), 9);
        assert_eq!(c.methods, Method::ALL.to_vec());
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = ScenarioConfig::default();
        let text = c.to_toml_string().unwrap();
        assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let err = ScenarioConfig::from_toml_str("horizon = 360\nperiod = = 90\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = ScenarioConfig::from_toml_str("horizon = 360\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn constraint_violation_is_named() {
        let text = "[parameters]\na_mm = 0.7\na_rm = 0.5\n";
        let err = ScenarioConfig::from_toml_str(text).unwrap_err().to_string();
        assert!(err.contains("a_mm + a_rm <= 1"), "{err}");
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn period_must_divide_horizon() {
        assert!(ScenarioConfig::from_toml_str("period = 70\n").is_err());
        assert!(ScenarioConfig::from_toml_str("period = 120\n").is_ok());
    }

    #[test]
    fn method_names_accept_short_forms() {
        let c = ScenarioConfig::from_toml_str("methods = [\"approx\", \"constant\"]\n").unwrap();
        assert_eq!(c.methods, vec![Method::Approximation, Method::Constant]);
    }

    #[test]
    fn horizon_normalization() {
        let c =
            ScenarioConfig::from_toml_str("horizon = 180\nweight_normalization = \"horizon\"\n")
                .unwrap();
        let s = c.scenario([1.0; 3]).unwrap();
        assert_eq!(s.weights.beta, 4.0 / 180.0);
    }
}
