//! Regimen optimizers. All four strategies share [`Scenario`] as input and return an
//! [`OptimizationResult`] whose objective comes from re-simulating the returned regimen
//! through [`Scenario::evaluate`].

mod control;
mod enumeration;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use control::{adjoint_gradient, optimize_control, ControlProblem, SolverSettings};
pub use enumeration::{optimize_constant, optimize_piecewise, optimize_piecewise_batch};

use crate::dynamics::{ModelParameters, PatientState, PharmacodynamicsParameters};
use crate::error::{Error, Result};
use crate::integrator::{simulate, IntegratorSettings, Trajectory};
use crate::objective::{build_weights, evaluate, ObjectiveValue, ObjectiveWeights};
use crate::regimens::{pc_approximate, period_count, DoseGrid, Regimen};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Constant,
    Piecewise,
    #[serde(alias = "control")]
    Optimal,
    #[serde(alias = "approx")]
    Approximation,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Constant,
        Method::Piecewise,
        Method::Optimal,
        Method::Approximation,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Method::Constant => "Constant",
            Method::Piecewise => "Piecewise-constant",
            Method::Optimal => "Optimal",
            Method::Approximation => "Approximation",
        }
    }

    pub fn slug(&self) -> &'static str {
        match self {
            Method::Constant => "constant",
            Method::Piecewise => "piecewise",
            Method::Optimal => "optimal",
            Method::Approximation => "approx",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "constant" => Some(Method::Constant),
            "piecewise" | "piecewise_constant" => Some(Method::Piecewise),
            "optimal" | "control" => Some(Method::Optimal),
            "approx" | "approximation" => Some(Method::Approximation),
            _ => None,
        }
    }
}

/// Everything an optimizer needs: model, initial state, horizon, period grid, dose grid,
/// objective weights and integrator tolerances.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub params: ModelParameters,
    pub pd: PharmacodynamicsParameters,
    pub initial: PatientState,
    pub horizon: f64,
    pub period: f64,
    pub grid: DoseGrid,
    pub weights: ObjectiveWeights,
    pub integrator: IntegratorSettings,
}

impl Scenario {
    /// Default model, initial state, 360-day horizon and 90-day periods for the given
    /// exposure multipliers.
    pub fn with_g(g: [f64; 3]) -> Result<Self> {
        let params = ModelParameters::default();
        let pd = PharmacodynamicsParameters::default();
        let initial = PatientState::table_default();
        let horizon = 360.0;
        let weights = build_weights(g, initial.m, &pd.max_dose, horizon)?;
        Ok(Self {
            params,
            pd,
            initial,
            horizon,
            period: 90.0,
            grid: DoseGrid::default(),
            weights,
            integrator: IntegratorSettings::default(),
        })
    }

    pub fn with_weights(&self, weights: ObjectiveWeights) -> Self {
        Self {
            weights,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.pd.validate()?;
        self.initial.validate_positive()?;
        self.integrator.validate()?;
        self.grid.validate(&self.pd.max_dose)?;
        period_count(self.period, self.horizon)?;
        if (self.weights.horizon - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(Error::HorizonMismatch {
                expected: self.horizon,
                found: self.weights.horizon,
            });
        }
        Ok(())
    }

    pub fn periods(&self) -> usize {
        period_count(self.period, self.horizon).unwrap_or(1)
    }

    /// Integrator settings with the period grid added as restart points, so every
    /// regimen is integrated on the same segment structure as the enumeration tree.
    pub fn integrator_settings(&self) -> IntegratorSettings {
        let mut s = self.integrator.clone();
        s.breakpoints
            .extend((1..self.periods()).map(|k| k as f64 * self.period));
        s
    }

    pub fn simulate(&self, regimen: &Regimen) -> Result<Trajectory> {
        simulate(
            &self.initial,
            regimen,
            self.horizon,
            &self.params,
            &self.pd,
            &self.integrator_settings(),
        )
    }

    pub fn evaluate(&self, regimen: &Regimen) -> Result<(Trajectory, ObjectiveValue)> {
        let traj = self.simulate(regimen)?;
        let value = evaluate(&traj, &self.weights)?;
        Ok((traj, value))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub candidates_evaluated: usize,
    pub failed_candidates: usize,
    pub period_integrations: usize,
    pub gradient_norm: Option<f64>,
    pub converged: bool,
    pub wall_time_s: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objective_history: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub method: Method,
    pub regimen: Regimen,
    pub objective: ObjectiveValue,
    pub final_state: PatientState,
    pub diagnostics: Diagnostics,
}

impl OptimizationResult {
    pub(crate) fn from_regimen(
        scenario: &Scenario,
        method: Method,
        regimen: Regimen,
        diagnostics: Diagnostics,
    ) -> Result<(Self, Trajectory)> {
        let (traj, objective) = scenario.evaluate(&regimen)?;
        Ok((
            Self {
                method,
                regimen,
                objective,
                final_state: traj.final_state(),
                diagnostics,
            },
            traj,
        ))
    }
}

/// Rounds an optimal-control result to the scenario's period and dose grid and
/// re-evaluates it.
pub fn approximate_result(
    scenario: &Scenario,
    optimal: &OptimizationResult,
) -> Result<OptimizationResult> {
    let start = Instant::now();
    let regimen = pc_approximate(&optimal.regimen, scenario.period, &scenario.grid)?;
    let diagnostics = Diagnostics {
        iterations: optimal.diagnostics.iterations,
        gradient_norm: optimal.diagnostics.gradient_norm,
        converged: optimal.diagnostics.converged,
        note: Some(format!(
            "rounded from an optimal control with J = {:.6}",
            optimal.objective.total
        )),
        ..Default::default()
    };
    let (mut result, _) =
        OptimizationResult::from_regimen(scenario, Method::Approximation, regimen, diagnostics)?;
    result.diagnostics.wall_time_s =
        start.elapsed().as_secs_f64() + optimal.diagnostics.wall_time_s;
    Ok(result)
}

/// Optimal control followed by per-period averaging and rounding to the dose grid.
pub fn optimize_approximation(
    scenario: &Scenario,
    settings: &SolverSettings,
) -> Result<OptimizationResult> {
    let optimal = optimize_control(scenario, settings)?;
    approximate_result(scenario, &optimal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DoseVector;

    #[test]
    fn scenario_defaults_are_valid() {
        let s = Scenario::with_g([1.0, 1.0, 1.0]).unwrap();
        s.validate().unwrap();
        assert_eq!(s.periods(), 4);
        assert_eq!(
            s.integrator_settings().breakpoints,
            vec![90.0, 180.0, 270.0]
        );
    }

    #[test]
    fn approximation_of_grid_control_keeps_its_cost() {
        let s = Scenario::with_g([1.0, 1.0, 1.0]).unwrap();
        let levels = [
            DoseVector::new(153.6975, 1.7663, 0.0),
            DoseVector::new(102.465, 0.8831, 90.0),
            DoseVector::new(51.2325, 0.0, 0.0),
            DoseVector::new(0.0, 0.0, 0.0),
        ];
        // a step-sampled control that already sits on the grid
        let times: Vec<f64> = (0..=4).map(|k| k as f64 * 90.0).collect();
        let mut doses = levels.to_vec();
        doses.push(levels[3]);
        let sampled = Regimen::Sampled {
            times,
            doses,
            interpolation: crate::regimens::Interpolation::Step,
        };
        let (traj, value) = s.evaluate(&sampled).unwrap();
        let optimal = OptimizationResult {
            method: Method::Optimal,
            regimen: sampled,
            objective: value,
            final_state: traj.final_state(),
            diagnostics: Diagnostics::default(),
        };
        let approx = approximate_result(&s, &optimal).unwrap();
        assert_eq!(approx.regimen, Regimen::piecewise(90.0, levels.to_vec()));
        assert_eq!(approx.objective.total, value.total);
    }
}
