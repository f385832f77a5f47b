//! File formats. Numbers in CSV files are written with 17 significant digits, which
//! round-trips every `f64` exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::DoseVector;
use crate::error::{Error, Result};
use crate::integrator::Trajectory;
use crate::objective::ObjectiveWeights;
use crate::optimizers::{Method, OptimizationResult};
use crate::regimens::{Interpolation, Regimen};

pub const TRAJECTORY_COLUMNS: [&str; 9] = [
    "t",
    "M",
    "T_C",
    "N",
    "T_R",
    "u1",
    "u2",
    "u3",
    "running_integral",
];
const PERIOD_COLUMNS: [&str; 5] = ["t_start", "t_end", "u1", "u2", "u3"];
const SAMPLE_COLUMNS: [&str; 4] = ["t", "u1", "u2", "u3"];

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `t, M, T_C, N, T_R, u1, u2, u3, running_integral` at every stored point.
pub fn write_trajectory_csv(
    path: &Path,
    traj: &Trajectory,
    weights: &ObjectiveWeights,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRAJECTORY_COLUMNS)?;
    let running = traj.running_integral(weights);
    for k in 0..traj.times.len() {
        let x = traj.states[k];
        let u = traj.doses[k].0;
        let row = [
            traj.times[k],
            x.m,
            x.t_c,
            x.n,
            x.t_r,
            u[0],
            u[1],
            u[2],
            running[k],
        ];
        w.write_record(row.map(fmt_f64))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trajectory CSV back as rows of the nine columns.
pub fn read_trajectory_csv(path: &Path) -> Result<Vec<[f64; 9]>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != TRAJECTORY_COLUMNS {
        return Err(Error::Config(format!(
            "{}: expected columns {}",
            path.display(),
            TRAJECTORY_COLUMNS.join(",")
        )));
    }
    r.records()
        .enumerate()
        .map(|(k, rec)| {
            let rec = rec?;
            let v = parse_row(&rec, k + 2, path)?;
            Ok(std::array::from_fn(|i| v[i]))
        })
        .collect()
}

fn parse_row(rec: &csv::StringRecord, line: usize, path: &Path) -> Result<Vec<f64>> {
    rec.iter()
        .map(|f| {
            f.trim().parse::<f64>().map_err(|_| {
                Error::Config(format!(
                    "{}: line {line}: `{f}` is not a number",
                    path.display()
                ))
            })
        })
        .collect()
}

/// Writes a regimen as a CSV file.
///
/// Constant, piecewise-constant and step-sampled regimens become a per-period table
/// `t_start, t_end, u1, u2, u3`; linearly interpolated regimens become `t, u1, u2, u3`
/// node values. A constant regimen needs `horizon` for its single row.
pub fn write_regimen_csv(path: &Path, regimen: &Regimen, horizon: f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let row5 = |a: f64, b: f64, u: &DoseVector| [a, b, u.0[0], u.0[1], u.0[2]].map(fmt_f64);
    match regimen {
        Regimen::Constant { dose } => {
            w.write_record(PERIOD_COLUMNS)?;
            w.write_record(row5(0.0, horizon, dose))?;
        }
        Regimen::PiecewiseConstant { period, doses } => {
            w.write_record(PERIOD_COLUMNS)?;
            for (k, d) in doses.iter().enumerate() {
                w.write_record(row5(k as f64 * period, (k + 1) as f64 * period, d))?;
            }
        }
        Regimen::Sampled {
            times,
            doses,
            interpolation: Interpolation::Step,
        } => {
            w.write_record(PERIOD_COLUMNS)?;
            for k in 0..times.len().saturating_sub(1) {
                w.write_record(row5(times[k], times[k + 1], &doses[k]))?;
            }
        }
        Regimen::Sampled {
            times,
            doses,
            interpolation: Interpolation::Linear,
        } => {
            w.write_record(SAMPLE_COLUMNS)?;
            for (t, d) in times.iter().zip(doses) {
                w.write_record([*t, d.0[0], d.0[1], d.0[2]].map(fmt_f64))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a regimen file: `.json` holds a serialized [`Regimen`], anything else is a
/// CSV in one of the layouts of [`write_regimen_csv`].
///
/// A per-period table must start at 0 and its rows must be contiguous. Equal-length rows
/// give a piecewise-constant regimen (a single row gives a constant one); unequal rows
/// give a step-sampled regimen. Whether the table covers the simulation horizon is
/// checked when the regimen is validated against it.
pub fn read_regimen(path: &Path) -> Result<Regimen> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path)?;
        return Ok(serde_json::from_str(&text)?);
    }
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_owned()).collect();
    let rows = r
        .records()
        .enumerate()
        .map(|(k, rec)| parse_row(&rec?, k + 2, path))
        .collect::<Result<Vec<_>>>()?;
    let bad = |msg: String| Error::InvalidRegimen(format!("{}: {msg}", path.display()));
    if rows.is_empty() {
        return Err(bad("no rows".into()));
    }
    let width = header.len();
    if let Some(k) = rows.iter().position(|r| r.len() != width) {
        return Err(bad(format!(
            "line {} has {} fields, expected {width}",
            k + 2,
            rows[k].len()
        )));
    }

    if header == PERIOD_COLUMNS {
        if rows[0][0] != 0.0 {
            return Err(bad(format!("first period starts at {}, not 0", rows[0][0])));
        }
        for (k, r) in rows.iter().enumerate() {
            if !(r[1] > r[0]) {
                return Err(bad(format!(
                    "line {}: period [{}, {}] is empty",
                    k + 2,
                    r[0],
                    r[1]
                )));
            }
            if k > 0 && r[0] != rows[k - 1][1] {
                return Err(bad(format!(
                    "line {}: gap or overlap between {} and {}; periods must tile [0, T]",
                    k + 2,
                    rows[k - 1][1],
                    r[0]
                )));
            }
        }
        let doses: Vec<DoseVector> = rows
            .iter()
            .map(|r| DoseVector([r[2], r[3], r[4]]))
            .collect();
        if rows.len() == 1 {
            return Ok(Regimen::constant(doses[0]));
        }
        let period = rows[0][1] - rows[0][0];
        let uniform = rows
            .iter()
            .enumerate()
            .all(|(k, r)| r[0] == k as f64 * period && r[1] == (k + 1) as f64 * period);
        if uniform {
            return Ok(Regimen::piecewise(period, doses));
        }
        let mut times: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        times.push(rows[rows.len() - 1][1]);
        let mut doses = doses;
        doses.push(doses[doses.len() - 1]);
        return Ok(Regimen::Sampled {
            times,
            doses,
            interpolation: Interpolation::Step,
        });
    }
    if header == SAMPLE_COLUMNS {
        return Ok(Regimen::sampled(
            rows.iter().map(|r| r[0]).collect(),
            rows.iter()
                .map(|r| DoseVector([r[1], r[2], r[3]]))
                .collect(),
        ));
    }
    Err(bad(format!(
        "unrecognized header `{}`; expected `{}` or `{}`",
        header.join(","),
        PERIOD_COLUMNS.join(","),
        SAMPLE_COLUMNS.join(",")
    )))
}

/// Everything persisted about one (G, method) cell of a batch run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Position of `g` in the run's list of exposure vectors.
    pub index: usize,
    pub g: [f64; 3],
    pub method: Method,
    pub horizon: f64,
    pub period: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<OptimizationResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunRecord {
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn period_table_layouts() {
        let dir = tempfile::tempdir().unwrap();
        let one = write(dir.path(), "a.csv", "t_start,t_end,u1,u2,u3\n0,360,1,2,3\n");
        assert_eq!(
            read_regimen(&one).unwrap(),
            Regimen::constant(DoseVector::new(1.0, 2.0, 3.0))
        );

        let two = write(
            dir.path(),
            "b.csv",
            "t_start,t_end,u1,u2,u3\n0,90,1,0,0\n90,180,0,1,0\n",
        );
        assert_eq!(
            read_regimen(&two).unwrap(),
            Regimen::piecewise(
                90.0,
                vec![
                    DoseVector::new(1.0, 0.0, 0.0),
                    DoseVector::new(0.0, 1.0, 0.0)
                ]
            )
        );

        let uneven = write(
            dir.path(),
            "c.csv",
            "t_start,t_end,u1,u2,u3\n0,30,1,0,0\n30,180,0,1,0\n",
        );
        let Regimen::Sampled {
            times,
            interpolation,
            ..
        } = read_regimen(&uneven).unwrap()
        else {
            panic!()
        };
        assert_eq!(times, vec![0.0, 30.0, 180.0]);
        assert_eq!(interpolation, Interpolation::Step);
    }

    #[test]
    fn non_tiling_tables_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        for text in [
            "t_start,t_end,u1,u2,u3\n0,90,1,0,0\n100,180,0,1,0\n",
            "t_start,t_end,u1,u2,u3\n10,90,1,0,0\n",
            "t_start,t_end,u1,u2,u3\n0,90,1,0,0\n90,90,0,1,0\n",
            "t_start,t_end,u1,u2,u3\n",
            "t_start,t_end,u1,u2,u3\n0,90,1,0\n",
            "from,to,a,b,c\n0,90,1,0,0\n",
            "t_start,t_end,u1,u2,u3\n0,90,x,0,0\n",
        ] {
            let p = write(dir.path(), "bad.csv", text);
            assert!(read_regimen(&p).is_err(), "{text}");
        }
    }

    #[test]
    fn every_layout_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let third = 1.0 / 3.0;
        let regimens = [
            Regimen::constant(DoseVector::new(third, 0.1, 95.0)),
            Regimen::piecewise(90.0, vec![DoseVector::new(third, 0.2, 0.0); 4]),
            Regimen::sampled(
                vec![0.0, 0.7, 360.0],
                vec![DoseVector::new(0.1, third, 1e-300); 3],
            ),
            Regimen::Sampled {
                times: vec![0.0, 10.0, 360.0],
                doses: vec![
                    DoseVector::new(third, 1.0, 2.0),
                    DoseVector::new(0.3, 0.0, 2.0),
                    DoseVector::new(0.3, 0.0, 2.0),
                ],
                interpolation: Interpolation::Step,
            },
        ];
        for r in regimens {
            let p = dir.path().join("r.csv");
            write_regimen_csv(&p, &r, 360.0).unwrap();
            assert_eq!(read_regimen(&p).unwrap(), r);
            let j = dir.path().join("r.json");
            std::fs::write(&j, serde_json::to_string(&r).unwrap()).unwrap();
            assert_eq!(read_regimen(&j).unwrap(), r);
        }
    }

    #[test]
    fn seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        let x = 2.0f64.sqrt();
        assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
    }
}
