//! Continuous dosing by first-order optimal control.
//!
//! Controls are piecewise linear on a uniform mesh and optimized in normalized units
//! `v = u / u_max` in `[0, 1]`. The gradient comes from the costate equation
//!
//! ```text
//! lambda' = -(beta e_M + (df/dx)^T lambda),   lambda(T) = (alpha, 0, 0, 0)
//! dJ/dv_{k,i} = u_i^max int (gamma_i + lambda . df/du_i) phi_k dt
//! ```
//!
//! integrated backward over each mesh interval against the continuous extension of the
//! forward solution, `phi_k` being the hat function of node `k`. Descent is a projected
//! gradient method with Barzilai-Borwein trial steps and monotone Armijo backtracking
//! along the projection arc.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{Diagnostics, Method, OptimizationResult, Scenario};
use crate::dynamics::{controlled_jacobian, DoseVector};
use crate::error::{Error, Result};
use crate::integrator::dopri::{self, DenseStep, EndpointOnly, StepControl};
use crate::integrator::{Trajectory, AUG};
use crate::objective::evaluate;
use crate::regimens::Regimen;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub max_iterations: usize,
    /// Stop when `max |v - P(v - g)|` falls below this, with `v` in normalized dose
    /// units and `g` the mass-lumped (per-day) gradient.
    pub tolerance: f64,
    /// Sufficient-decrease constant of the Armijo test.
    pub armijo: f64,
    /// Step reduction factor while backtracking.
    pub backtrack: f64,
    pub max_backtracks: usize,
    /// Control mesh spacing in days.
    pub mesh_step: f64,
    /// Initial guess as a fraction of each maximum dose.
    pub initial_fraction: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 3000,
            tolerance: 1e-6,
            armijo: 1e-4,
            backtrack: 0.5,
            max_backtracks: 40,
            mesh_step: 1.0,
            initial_fraction: 0.5,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self, horizon: f64) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::param("max_iterations", "must be > 0"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::param("tolerance", "must be > 0"));
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0) {
            return Err(Error::param("armijo", "must lie in (0, 1)"));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::param("backtrack", "must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.initial_fraction) {
            return Err(Error::param("initial_fraction", "must lie in [0, 1]"));
        }
        if !(self.mesh_step > 0.0) {
            return Err(Error::param("mesh_step", "must be > 0"));
        }
        let nodes = (horizon / self.mesh_step).round();
        if (nodes * self.mesh_step - horizon).abs() > 1e-9 * horizon {
            return Err(Error::param(
                "mesh_step",
                format!("{} does not divide the horizon {horizon}", self.mesh_step),
            ));
        }
        if nodes < 100.0 {
            return Err(Error::param(
                "mesh_step",
                format!("mesh has {nodes} intervals; at least 100 are required"),
            ));
        }
        Ok(())
    }
}

/// The discretized control problem of a scenario.
pub struct ControlProblem<'a> {
    scenario: &'a Scenario,
    times: Vec<f64>,
    /// Integral of each node's hat function (days).
    mass: Vec<f64>,
}

impl<'a> ControlProblem<'a> {
    pub fn new(scenario: &'a Scenario, mesh_step: f64) -> Result<Self> {
        scenario.validate()?;
        let intervals = (scenario.horizon / mesh_step).round() as usize;
        if intervals == 0 {
            return Err(Error::param("mesh_step", "larger than the horizon"));
        }
        let times: Vec<f64> = (0..=intervals)
            .map(|k| {
                if k == intervals {
                    scenario.horizon
                } else {
                    k as f64 * mesh_step
                }
            })
            .collect();
        let mass = (0..times.len())
            .map(|k| {
                let left = if k > 0 { times[k] - times[k - 1] } else { 0.0 };
                let right = if k + 1 < times.len() {
                    times[k + 1] - times[k]
                } else {
                    0.0
                };
                0.5 * (left + right)
            })
            .collect();
        Ok(Self {
            scenario,
            times,
            mass,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn nodes(&self) -> usize {
        self.times.len()
    }

    pub fn regimen(&self, v: &[[f64; 3]]) -> Regimen {
        let max = self.scenario.pd.max_dose.0;
        Regimen::sampled(
            self.times.clone(),
            v.iter()
                .map(|n| DoseVector(std::array::from_fn(|i| n[i] * max[i])))
                .collect(),
        )
    }

    /// Objective and forward trajectory for normalized nodal controls `v`.
    pub fn objective(&self, v: &[[f64; 3]]) -> Result<(f64, Trajectory)> {
        let (traj, value) = self.scenario.evaluate(&self.regimen(v))?;
        Ok((value.total, traj))
    }

    /// `dJ/dv` at every node, from a backward costate sweep along `traj`, which must be
    /// the forward solution for `v`.
    pub fn gradient(&self, v: &[[f64; 3]], traj: &Trajectory) -> Result<Vec<[f64; 3]>> {
        let s = self.scenario;
        let w = &s.weights;
        let max = s.pd.max_dose.0;
        let horizon = s.horizon;
        let ctl = StepControl {
            controlled: 10,
            ..s.integrator.step_control()
        };
        let dense = &traj.dense;
        let mut grad = vec![[0.0; 3]; self.times.len()];
        let mut lambda = [w.alpha, 0.0, 0.0, 0.0];

        for k in (0..self.times.len() - 1).rev() {
            let (ta, tb) = (self.times[k], self.times[k + 1]);
            let first = dense.partition_point(|d| d.end() <= ta);
            let last = dense.partition_point(|d| d.t < tb);
            let steps = &dense[first..last.max(first + 1).min(dense.len())];
            let ua: [f64; 3] = std::array::from_fn(|i| v[k][i] * max[i]);
            let ub: [f64; 3] = std::array::from_fn(|i| v[k + 1][i] * max[i]);

            // reversed time s = horizon - t
            let rhs = |sv: f64, z: &[f64; 10]| -> [f64; 10] {
                let t = horizon - sv;
                let x = interpolate(steps, t);
                let right = (t - ta) / (tb - ta);
                let left = 1.0 - right;
                let u: [f64; 3] =
                    std::array::from_fn(|i| (ua[i] + right * (ub[i] - ua[i])).max(0.0));
                let jac = controlled_jacobian([x[0], x[1], x[2], x[3]], u, &s.params, &s.pd);
                let mut dz = [0.0; 10];
                for j in 0..4 {
                    dz[j] = jac.state[0][j] * z[0]
                        + jac.state[1][j] * z[1]
                        + jac.state[2][j] * z[2]
                        + jac.state[3][j] * z[3];
                }
                dz[0] += w.beta;
                for i in 0..3 {
                    let switching = w.gamma[i]
                        + z[0] * jac.dose[0][i]
                        + z[1] * jac.dose[1][i]
                        + z[2] * jac.dose[2][i]
                        + z[3] * jac.dose[3][i];
                    dz[4 + i] = switching * left * max[i];
                    dz[7 + i] = switching * right * max[i];
                }
                dz
            };
            let mut z0 = [0.0; 10];
            z0[..4].copy_from_slice(&lambda);
            let z = dopri::integrate(
                &rhs,
                horizon - tb,
                z0,
                horizon - ta,
                &ctl,
                &mut EndpointOnly,
            )?;
            lambda.copy_from_slice(&z[..4]);
            for i in 0..3 {
                grad[k][i] += z[4 + i];
                grad[k + 1][i] += z[7 + i];
            }
        }
        Ok(grad)
    }
}

#[inline]
fn interpolate(steps: &[DenseStep<AUG>], t: f64) -> [f64; AUG] {
    let k = steps.partition_point(|d| d.end() < t).min(steps.len() - 1);
    steps[k].eval(t)
}

#[inline]
fn project(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Adjoint gradient of the objective with respect to the nodal doses (physical units) of
/// a linearly interpolated sampled regimen, together with its objective.
pub fn adjoint_gradient(
    scenario: &Scenario,
    mesh_step: f64,
    doses: &[DoseVector],
) -> Result<(f64, Vec<DoseVector>)> {
    let problem = ControlProblem::new(scenario, mesh_step)?;
    if doses.len() != problem.nodes() {
        return Err(Error::InvalidRegimen(format!(
            "expected {} nodal doses, got {}",
            problem.nodes(),
            doses.len()
        )));
    }
    let max = scenario.pd.max_dose.0;
    let v: Vec<[f64; 3]> = doses
        .iter()
        .map(|d| std::array::from_fn(|i| d.0[i] / max[i]))
        .collect();
    let (j, traj) = problem.objective(&v)?;
    let g = problem.gradient(&v, &traj)?;
    Ok((
        j,
        g.iter()
            .map(|n| DoseVector(std::array::from_fn(|i| n[i] / max[i])))
            .collect(),
    ))
}

/// Minimizes the objective over continuous dose schedules within the dose box.
pub fn optimize_control(
    scenario: &Scenario,
    settings: &SolverSettings,
) -> Result<OptimizationResult> {
    settings.validate(scenario.horizon)?;
    let start = Instant::now();
    let problem = ControlProblem::new(scenario, settings.mesh_step)?;
    let n = problem.nodes();
    let mass = &problem.mass;

    let mut v = vec![[settings.initial_fraction; 3]; n];
    let (mut j, traj) = problem.objective(&v)?;
    let mut g = problem.gradient(&v, &traj)?;
    let per_day = |g: &[[f64; 3]]| -> Vec<[f64; 3]> {
        g.iter()
            .zip(mass)
            .map(|(gk, m)| gk.map(|x| x / m))
            .collect()
    };
    let mut gd = per_day(&g);
    let pg_norm = |v: &[[f64; 3]], gd: &[[f64; 3]]| -> f64 {
        v.iter()
            .zip(gd)
            .flat_map(|(vk, gk)| (0..3).map(move |i| (vk[i] - project(vk[i] - gk[i])).abs()))
            .fold(0.0, f64::max)
    };

    let mut history = vec![j];
    let mut step = {
        let gmax = gd.iter().flatten().fold(0.0f64, |a, x| a.max(x.abs()));
        if gmax > 0.0 {
            0.25 / gmax
        } else {
            1.0
        }
    };
    let mut iterations = 0;
    let mut converged = false;
    let mut note = None;
    let mut norm = pg_norm(&v, &gd);

    while iterations < settings.max_iterations {
        if norm <= settings.tolerance {
            converged = true;
            break;
        }
        let mut trial_step = step;
        let mut accepted = None;
        for _ in 0..=settings.max_backtracks {
            let trial: Vec<[f64; 3]> = v
                .iter()
                .zip(&gd)
                .map(|(vk, gk)| std::array::from_fn(|i| project(vk[i] - trial_step * gk[i])))
                .collect();
            let decrease: f64 = trial
                .iter()
                .zip(&v)
                .zip(&g)
                .map(|((t, vk), gk)| (0..3).map(|i| gk[i] * (t[i] - vk[i])).sum::<f64>())
                .sum();
            if decrease >= 0.0 {
                // projection collapsed the step; nothing left to gain along this arc
                break;
            }
            if let Ok((jt, tt)) = problem.objective(&trial) {
                if jt <= j + settings.armijo * decrease {
                    accepted = Some((trial, jt, tt));
                    break;
                }
            }
            trial_step *= settings.backtrack;
        }
        let Some((trial, jt, tt)) = accepted else {
            note = Some("line search failed to find sufficient decrease".to_string());
            break;
        };
        let g_new = problem.gradient(&trial, &tt)?;
        let gd_new = per_day(&g_new);

        // Barzilai-Borwein step in the lumped-mass inner product
        let (mut ss, mut sy) = (0.0, 0.0);
        for k in 0..n {
            for i in 0..3 {
                let s = trial[k][i] - v[k][i];
                ss += mass[k] * s * s;
                sy += mass[k] * s * (gd_new[k][i] - gd[k][i]);
            }
        }
        step = if sy > 0.0 {
            (ss / sy).clamp(1e-6, 1e12)
        } else {
            trial_step * 4.0
        };

        v = trial;
        j = jt;
        g = g_new;
        gd = gd_new;
        history.push(j);
        iterations += 1;
        norm = pg_norm(&v, &gd);
    }
    if !converged && norm <= settings.tolerance {
        converged = true;
    }
    if !converged && note.is_none() {
        note = Some(format!(
            "stopped after {iterations} iterations with projected gradient {norm:.3e}; \
             initial states far from steady state slow convergence"
        ));
    }

    let regimen = problem.regimen(&v);
    let diagnostics = Diagnostics {
        iterations,
        gradient_norm: Some(norm),
        converged,
        objective_history: history,
        note,
        ..Default::default()
    };
    let (mut result, traj) =
        OptimizationResult::from_regimen(scenario, Method::Optimal, regimen, diagnostics)?;
    debug_assert_eq!(
        evaluate(&traj, &scenario.weights)?.total,
        result.objective.total
    );
    result.diagnostics.wall_time_s = start.elapsed().as_secs_f64();
    Ok(result)
}
