//! Exhaustive search over grid-valued regimens.
//!
//! The piecewise search walks the tree of per-period choices depth first. Each node holds
//! the augmented state (populations plus quadratures) at its period boundary, so a node
//! costs exactly one single-period integration. The trajectory does not depend on the
//! objective weights, so one traversal scores any number of weight vectors at the leaves.

use std::time::Instant;

use rayon::prelude::*;

use super::{Diagnostics, Method, OptimizationResult, Scenario};
use crate::dynamics::DoseVector;
use crate::error::{Error, Result};
use crate::integrator::dopri::{EndpointOnly, StepControl};
use crate::integrator::{augment, segment_bounds, Model, AUG};
use crate::objective::ObjectiveWeights;
use crate::regimens::{enumerate_grid, Regimen, SegmentControl};

/// Best constant regimen on the scenario's dose grid.
pub fn optimize_constant(scenario: &Scenario) -> Result<OptimizationResult> {
    scenario.validate()?;
    let start = Instant::now();
    let candidates = enumerate_grid(&scenario.grid);
    let outcomes: Vec<Result<f64>> = candidates
        .par_iter()
        .map(|dose| {
            scenario
                .evaluate(&Regimen::constant(*dose))
                .map(|(_, v)| v.total)
        })
        .collect();

    let mut best: Option<(f64, DoseVector)> = None;
    let mut failed = 0;
    let mut last_err = None;
    for (dose, outcome) in candidates.iter().zip(outcomes) {
        match outcome {
            Ok(j) => {
                if best.is_none_or(|(b, _)| j < b) {
                    best = Some((j, *dose));
                }
            }
            Err(e) => {
                failed += 1;
                last_err = Some(e);
            }
        }
    }
    let (_, dose) = best.ok_or_else(|| {
        Error::AllCandidatesFailed(Box::new(last_err.unwrap_or(Error::EmptyGrid(0))))
    })?;
    let diagnostics = Diagnostics {
        candidates_evaluated: candidates.len(),
        failed_candidates: failed,
        converged: true,
        ..Default::default()
    };
    let (mut result, _) = OptimizationResult::from_regimen(
        scenario,
        Method::Constant,
        Regimen::constant(dose),
        diagnostics,
    )?;
    result.diagnostics.wall_time_s = start.elapsed().as_secs_f64();
    Ok(result)
}

/// Best piecewise-constant regimen on the scenario's period and dose grid.
pub fn optimize_piecewise(scenario: &Scenario) -> Result<OptimizationResult> {
    let mut all = optimize_piecewise_batch(scenario, std::slice::from_ref(&scenario.weights))?;
    Ok(all.remove(0))
}

/// Piecewise search scoring several weight vectors in one traversal. Results are in the
/// order of `weights`.
pub fn optimize_piecewise_batch(
    scenario: &Scenario,
    weights: &[ObjectiveWeights],
) -> Result<Vec<OptimizationResult>> {
    scenario.validate()?;
    for w in weights {
        scenario.with_weights(w.clone()).validate()?;
    }
    if weights.is_empty() {
        return Ok(Vec::new());
    }
    let start = Instant::now();
    let tree = Tree {
        model: Model::new(&scenario.params, &scenario.pd),
        ctl: scenario.integrator.step_control(),
        candidates: enumerate_grid(&scenario.grid),
        segments: period_segments(scenario),
        periods: scenario.periods(),
        weights,
    };
    let root = augment(&scenario.initial);

    let branches: Vec<Branch> = (0..tree.candidates.len())
        .into_par_iter()
        .map(|i| {
            let mut branch = Branch::new(weights.len());
            let mut path = Vec::with_capacity(tree.periods);
            tree.visit(0, i, root, &mut path, &mut branch);
            branch
        })
        .collect();

    // first-period branches are disjoint and ordered, so a strict `<` keeps the
    // lexicographically first minimizer whatever the schedule was
    let mut total = Branch::new(weights.len());
    for b in branches {
        total.integrations += b.integrations;
        total.leaves += b.leaves;
        total.failed_leaves += b.failed_leaves;
        if b.last_error.is_some() {
            total.last_error = b.last_error;
        }
        for (acc, cand) in total.best.iter_mut().zip(b.best) {
            if let Some((j, path)) = cand {
                if acc.as_ref().is_none_or(|(bj, _)| j < *bj) {
                    *acc = Some((j, path));
                }
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();

    let mut results = Vec::with_capacity(weights.len());
    for (w, best) in weights.iter().zip(&total.best) {
        let Some((_, path)) = best else {
            let err = total.last_error.take().unwrap_or(Error::EmptyGrid(0));
            return Err(Error::AllCandidatesFailed(Box::new(err)));
        };
        let regimen = Regimen::piecewise(
            scenario.period,
            path.iter().map(|&i| tree.candidates[i]).collect(),
        );
        let diagnostics = Diagnostics {
            candidates_evaluated: total.leaves,
            failed_candidates: total.failed_leaves,
            period_integrations: total.integrations,
            converged: true,
            wall_time_s: elapsed,
            ..Default::default()
        };
        let (result, _) = OptimizationResult::from_regimen(
            &scenario.with_weights(w.clone()),
            Method::Piecewise,
            regimen,
            diagnostics,
        )?;
        results.push(result);
    }
    Ok(results)
}

struct Tree<'a> {
    model: Model<'a>,
    ctl: StepControl,
    candidates: Vec<DoseVector>,
    /// Integration restart points within each period, endpoints included.
    segments: Vec<Vec<f64>>,
    periods: usize,
    weights: &'a [ObjectiveWeights],
}

/// Splits the scenario's global segment structure by period so the tree integrates
/// exactly the segments [`Scenario::simulate`] would.
fn period_segments(scenario: &Scenario) -> Vec<Vec<f64>> {
    let n = scenario.periods();
    let layout = Regimen::piecewise(scenario.period, vec![DoseVector::ZERO; n]);
    let bounds = segment_bounds(
        &layout,
        scenario.horizon,
        &scenario.integrator_settings().breakpoints,
    );
    let starts: Vec<f64> = (0..n).map(|k| k as f64 * scenario.period).collect();
    (0..n)
        .map(|k| {
            let lo = starts[k];
            let hi = if k + 1 == n {
                scenario.horizon
            } else {
                starts[k + 1]
            };
            bounds
                .iter()
                .copied()
                .filter(|&t| t >= lo && t <= hi)
                .collect()
        })
        .collect()
}

struct Branch {
    best: Vec<Option<(f64, Vec<usize>)>>,
    integrations: usize,
    leaves: usize,
    failed_leaves: usize,
    last_error: Option<Error>,
}

impl Branch {
    fn new(n: usize) -> Self {
        Self {
            best: vec![None; n],
            integrations: 0,
            leaves: 0,
            failed_leaves: 0,
            last_error: None,
        }
    }
}

impl Tree<'_> {
    fn advance(&self, depth: usize, choice: usize, mut y: [f64; AUG]) -> Result<[f64; AUG]> {
        let ctrl = SegmentControl::Constant(self.candidates[choice].0);
        for w in self.segments[depth].windows(2) {
            y = self
                .model
                .advance(y, w[0], w[1], &ctrl, &self.ctl, &mut EndpointOnly)?;
        }
        Ok(y)
    }

    fn leaves_below(&self, depth: usize) -> usize {
        self.candidates.len().pow((self.periods - depth - 1) as u32)
    }

    /// Applies candidate `choice` during period `depth` starting from `y`.
    fn visit(
        &self,
        depth: usize,
        choice: usize,
        y: [f64; AUG],
        path: &mut Vec<usize>,
        out: &mut Branch,
    ) {
        out.integrations += 1;
        path.push(choice);
        match self.advance(depth, choice, y) {
            Ok(next) if depth + 1 == self.periods => {
                out.leaves += 1;
                let quad = [next[4], next[5], next[6], next[7]];
                for (w, best) in self.weights.iter().zip(out.best.iter_mut()) {
                    let j = w.value(next[0], &quad).total;
                    match best {
                        Some((bj, bp)) if j < *bj => {
                            *bj = j;
                            bp.clone_from(path);
                        }
                        None => *best = Some((j, path.clone())),
                        _ => {}
                    }
                }
            }
            Ok(next) => {
                for c in 0..self.candidates.len() {
                    self.visit(depth + 1, c, next, path, out);
                }
            }
            Err(e) => {
                let lost = self.leaves_below(depth);
                out.leaves += lost;
                out.failed_leaves += lost;
                out.last_error = Some(e);
            }
        }
        path.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regimens::DoseGrid;

    fn small_scenario() -> Scenario {
        let mut s = Scenario::with_g([1.0, 1.0, 1.0]).unwrap();
        s.grid = DoseGrid::new([vec![0.0, 153.6975], vec![0.0, 1.7663], vec![0.0, 90.0]]);
        s.horizon = 180.0;
        s.weights.horizon = 180.0;
        s
    }

    #[test]
    fn single_level_grid_is_the_untreated_run() {
        let mut s = Scenario::with_g([1.0, 1.0, 1.0]).unwrap();
        s.grid = DoseGrid::new([vec![0.0], vec![0.0], vec![0.0]]);
        let r = optimize_constant(&s).unwrap();
        assert_eq!(r.regimen, Regimen::zero());
        let (traj, v) = s.evaluate(&Regimen::zero()).unwrap();
        assert_eq!(r.objective, v);
        let w = &s.weights;
        let expected = w.alpha * traj.final_state().m + w.beta * traj.final_quadrature()[0];
        assert_eq!(v.total, expected);
    }

    #[test]
    fn one_period_matches_constant_search() {
        let mut s = small_scenario();
        s.period = 180.0;
        let c = optimize_constant(&s).unwrap();
        let p = optimize_piecewise(&s).unwrap();
        assert_eq!(p.objective.total, c.objective.total);
        let Regimen::Constant { dose } = c.regimen else {
            panic!()
        };
        assert_eq!(p.regimen, Regimen::piecewise(180.0, vec![dose]));
    }

    #[test]
    fn batch_matches_individual_runs() {
        let s = small_scenario();
        let ws: Vec<_> = [[1.0, 1.0, 1.0], [5.0, 5.0, 1.0]]
            .iter()
            .map(|g| crate::objective::build_weights(*g, 4.0, &s.pd.max_dose, s.horizon).unwrap())
            .collect();
        let batch = optimize_piecewise_batch(&s, &ws).unwrap();
        for (w, b) in ws.iter().zip(&batch) {
            let single = optimize_piecewise(&s.with_weights(w.clone())).unwrap();
            assert_eq!(single.regimen, b.regimen);
            assert_eq!(single.objective, b.objective);
        }
        assert_eq!(batch[0].diagnostics.candidates_evaluated, 64);
        assert_eq!(batch[0].diagnostics.period_integrations, 8 + 64);
    }
}
