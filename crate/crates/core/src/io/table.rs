use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::files::{fmt_f64, RunRecord};
use crate::dynamics::PatientState;
use crate::error::{Error, Result};
use crate::objective::ObjectiveValue;
use crate::optimizers::Method;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub g: [f64; 3],
    pub method: Method,
    pub objective: Option<ObjectiveValue>,
    pub final_state: Option<PatientState>,
    pub error: Option<String>,
}

impl ResultRow {
    pub fn from_record(r: &RunRecord) -> Self {
        Self {
            g: r.g,
            method: r.method,
            objective: r.result.as_ref().map(|x| x.objective),
            final_state: r.result.as_ref().map(|x| x.final_state),
            error: r.error.clone(),
        }
    }

    pub fn failed(&self) -> bool {
        self.error.is_some() || self.objective.is_none()
    }
}

/// Rows keyed by (G, method), grouped by G in run order with methods in the fixed order
/// constant, piecewise, optimal, approximation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn from_records(records: &[RunRecord]) -> Self {
        let mut sorted: Vec<&RunRecord> = records.iter().collect();
        sorted.sort_by_key(|r| (r.index, r.method));
        Self {
            rows: sorted.into_iter().map(ResultRow::from_record).collect(),
        }
    }

    /// Rebuilds the table from the per-cell JSON files under `dir`.
    pub fn from_runs_dir(dir: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for entry in std::fs::read_dir(dir)? {
            let sub = entry?.path();
            if !sub.is_dir() {
                continue;
            }
            for file in std::fs::read_dir(&sub)? {
                let file = file?.path();
                if file.extension().is_some_and(|e| e == "json") {
                    records.push(
                        RunRecord::read(&file)
                            .map_err(|e| Error::Config(format!("{}: {e}", file.display())))?,
                    );
                }
            }
        }
        Ok(Self::from_records(&records))
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.failed()).count()
    }

    pub fn get(&self, g: [f64; 3], method: Method) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.g == g && r.method == method)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "g1",
            "g2",
            "g3",
            "method",
            "J",
            "terminal",
            "burden",
            "toxicity_u1",
            "toxicity_u2",
            "toxicity_u3",
            "M",
            "T_C",
            "N",
            "T_R",
            "error",
        ])?;
        for r in &self.rows {
            let mut rec: Vec<String> = r.g.iter().map(|x| x.to_string()).collect();
            rec.push(r.method.slug().to_string());
            match (r.objective, r.final_state) {
                (Some(v), Some(x)) => {
                    let nums = [
                        v.total,
                        v.terminal,
                        v.burden,
                        v.toxicity[0],
                        v.toxicity[1],
                        v.toxicity[2],
                        x.m,
                        x.t_c,
                        x.n,
                        x.t_r,
                    ];
                    rec.extend(nums.map(fmt_f64));
                }
                _ => rec.extend(std::iter::repeat_n(String::new(), 10)),
            }
            rec.push(r.error.clone().unwrap_or_default());
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Aligned text with a blank line between exposure vectors.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:<20} {:>9} {:>9} {:>9} {:>9} {:>9}",
            "G", "Method", "J", "M", "T_C", "N", "T_R"
        );
        let mut last: Option<[f64; 3]> = None;
        for r in &self.rows {
            if last.is_some_and(|g| g != r.g) {
                out.push('\n');
            }
            last = Some(r.g);
            let g = format!("({}, {}, {})", r.g[0], r.g[1], r.g[2]);
            match (r.objective, r.final_state, &r.error) {
                (Some(v), Some(x), None) => {
                    let _ = writeln!(
                        out,
                        "{g:<16} {:<20} {:>9.4} {:>9.4} {:>9.2} {:>9.2} {:>9.4}",
                        r.method.label(),
                        v.total,
                        x.m,
                        x.t_c,
                        x.n,
                        x.t_r
                    );
                }
                (_, _, err) => {
                    let msg = err.as_deref().unwrap_or("no result");
                    let _ = writeln!(out, "{g:<16} {:<20} FAILED: {msg}", r.method.label());
                }
            }
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join("table.csv"), self.to_csv()?)?;
        std::fs::write(dir.join("table.txt"), self.to_text())?;
        Ok(())
    }
}
