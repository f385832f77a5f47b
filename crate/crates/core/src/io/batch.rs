use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::ScenarioConfig;
use super::files::{write_regimen_csv, write_trajectory_csv, RunRecord};
use super::table::ResultsTable;
use crate::error::{Error, Result};
use crate::optimizers::{
    approximate_result, optimize_constant, optimize_control, optimize_piecewise_batch, Method,
    OptimizationResult,
};

/// Directory holding the files of the `index`-th exposure vector.
pub fn cell_dir(out: &Path, index: usize, g: [f64; 3]) -> PathBuf {
    out.join(format!("g{index:02}_{}_{}_{}", g[0], g[1], g[2]))
}

/// Runs every requested method for every exposure vector of `config`, writing under
/// `out`:
///
/// - `gNN_<g1>_<g2>_<g3>/<method>.json`: the [`RunRecord`] of the cell,
/// - `gNN_.../<method>_regimen.csv` and `<method>_trajectory.csv` for successful cells,
/// - `table.csv` and `table.txt`: the aggregate table.
///
/// A failing cell is recorded in its row and does not stop the others; only I/O errors
/// abort the run.
pub fn run_scenario(config: &ScenarioConfig, out: &Path) -> Result<ResultsTable> {
    config.validate()?;
    std::fs::create_dir_all(out)?;
    let gs = &config.g_vectors;
    let wants = |m| config.methods.contains(&m);

    // The piecewise search shares one tree traversal across all exposure vectors.
    let piecewise: Vec<Option<Result<OptimizationResult>>> =
        if wants(Method::Piecewise) && !gs.is_empty() {
            let base = config.scenario(gs[0])?;
            let weights = gs
                .iter()
                .map(|g| config.scenario(*g).map(|s| s.weights))
                .collect::<Result<Vec<_>>>()?;
            match optimize_piecewise_batch(&base, &weights) {
                Ok(rs) => rs.into_iter().map(|r| Some(Ok(r))).collect(),
                Err(e) => {
                    let msg = e.to_string();
                    gs.iter()
                        .map(|_| Some(Err(Error::Config(msg.clone()))))
                        .collect()
                }
            }
        } else {
            gs.iter().map(|_| None).collect()
        };

    let records: Vec<Vec<RunRecord>> = gs
        .par_iter()
        .zip(piecewise)
        .enumerate()
        .map(|(index, (g, pc))| -> Result<Vec<RunRecord>> {
            let scenario = config.scenario(*g)?;
            let mut cells: Vec<(Method, Result<OptimizationResult>)> = Vec::new();
            if wants(Method::Constant) {
                cells.push((Method::Constant, optimize_constant(&scenario)));
            }
            if let Some(pc) = pc {
                cells.push((Method::Piecewise, pc));
            }
            if wants(Method::Optimal) || wants(Method::Approximation) {
                let optimal = optimize_control(&scenario, &config.solver);
                if wants(Method::Approximation) {
                    let approx = match &optimal {
                        Ok(o) => approximate_result(&scenario, o),
                        Err(e) => Err(Error::Config(format!("optimal control failed: {e}"))),
                    };
                    cells.push((Method::Approximation, approx));
                }
                if wants(Method::Optimal) {
                    cells.push((Method::Optimal, optimal));
                }
            }

            let dir = cell_dir(out, index, *g);
            std::fs::create_dir_all(&dir)?;
            let mut records = Vec::with_capacity(cells.len());
            for (method, outcome) in cells {
                let slug = method.slug();
                let (result, error) = match outcome {
                    Ok(r) => {
                        write_regimen_csv(
                            &dir.join(format!("{slug}_regimen.csv")),
                            &r.regimen,
                            scenario.horizon,
                        )?;
                        let traj = scenario.simulate(&r.regimen)?;
                        write_trajectory_csv(
                            &dir.join(format!("{slug}_trajectory.csv")),
                            &traj,
                            &scenario.weights,
                        )?;
                        (Some(r), None)
                    }
                    Err(e) => (None, Some(e.to_string())),
                };
                let record = RunRecord {
                    index,
                    g: *g,
                    method,
                    horizon: scenario.horizon,
                    period: scenario.period,
                    result,
                    error,
                };
                record.write(&dir.join(format!("{slug}.json")))?;
                records.push(record);
            }
            Ok(records)
        })
        .collect::<Result<_>>()?;

    let table = ResultsTable::from_records(&records.concat());
    table.write(out)?;
    Ok(table)
}
