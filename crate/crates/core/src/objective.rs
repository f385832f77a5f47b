//! Treatment objective: terminal tumor burden plus integrated burden and per-drug
//! exposure penalties,
//!
//! ```text
//! J = alpha M(T) + int_0^T (beta M + gamma_1 u_1 + gamma_2 u_2 + gamma_3 u_3) dt
//! ```

use serde::{Deserialize, Serialize};

use crate::dynamics::DoseVector;
use crate::error::{Error, Result};
use crate::integrator::Trajectory;

/// Days used to normalize the burden and exposure weights unless re-tied to the horizon.
pub const DEFAULT_NORMALIZATION_DAYS: f64 = 360.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: [f64; 3],
    /// Exposure multipliers the gammas were derived from.
    pub g: [f64; 3],
    pub horizon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub total: f64,
    /// `alpha M(T)`.
    pub terminal: f64,
    /// `int beta M dt`.
    pub burden: f64,
    /// `int gamma_i u_i dt` per drug.
    pub toxicity: [f64; 3],
}

/// Weights with `alpha = M_init`, `beta = alpha / 360` and
/// `gamma_i = G_i / (360 u_i^max)`.
pub fn build_weights(
    g: [f64; 3],
    m_init: f64,
    max_dose: &DoseVector,
    horizon: f64,
) -> Result<ObjectiveWeights> {
    build_weights_normalized(g, m_init, max_dose, horizon, DEFAULT_NORMALIZATION_DAYS)
}

/// As [`build_weights`] with an explicit normalization length in place of 360 days.
pub fn build_weights_normalized(
    g: [f64; 3],
    m_init: f64,
    max_dose: &DoseVector,
    horizon: f64,
    days: f64,
) -> Result<ObjectiveWeights> {
    for (i, u) in max_dose.0.iter().enumerate() {
        if !u.is_finite() || *u <= 0.0 {
            return Err(Error::param(
                format!("max_dose[{}]", i + 1),
                format!("must be > 0, got {u}"),
            ));
        }
    }
    for (i, gi) in g.iter().enumerate() {
        if !gi.is_finite() || *gi < 0.0 {
            return Err(Error::param(
                format!("G[{}]", i + 1),
                format!("must be >= 0, got {gi}"),
            ));
        }
    }
    if !m_init.is_finite() || m_init < 0.0 {
        return Err(Error::param(
            "M_init",
            format!("must be >= 0, got {m_init}"),
        ));
    }
    if !(days > 0.0) || !(horizon > 0.0) {
        return Err(Error::param(
            "horizon",
            "horizon and normalization must be > 0",
        ));
    }
    let alpha = m_init;
    Ok(ObjectiveWeights {
        alpha,
        beta: alpha / days,
        gamma: std::array::from_fn(|i| g[i] / (days * max_dose.0[i])),
        g,
        horizon,
    })
}

impl ObjectiveWeights {
    /// `beta int M + sum gamma_i int u_i` from the quadratures `(int M, int u_1..3)`.
    #[inline]
    pub fn integral_part(&self, quad: &[f64; 4]) -> f64 {
        self.beta * quad[0]
            + self.gamma[0] * quad[1]
            + self.gamma[1] * quad[2]
            + self.gamma[2] * quad[3]
    }

    /// Objective from the terminal tumor burden and the quadratures.
    #[inline]
    pub fn value(&self, m_final: f64, quad: &[f64; 4]) -> ObjectiveValue {
        let terminal = self.alpha * m_final;
        let burden = self.beta * quad[0];
        let toxicity = [
            self.gamma[0] * quad[1],
            self.gamma[1] * quad[2],
            self.gamma[2] * quad[3],
        ];
        ObjectiveValue {
            total: terminal + burden + toxicity[0] + toxicity[1] + toxicity[2],
            terminal,
            burden,
            toxicity,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.alpha == 0.0 && self.beta == 0.0 && self.gamma.iter().all(|g| *g == 0.0)
    }
}

/// Evaluates the objective on a trajectory spanning `[0, w.horizon]`.
pub fn evaluate(traj: &Trajectory, w: &ObjectiveWeights) -> Result<ObjectiveValue> {
    let end = traj.horizon();
    if (end - w.horizon).abs() > 1e-9 * w.horizon.max(1.0) {
        return Err(Error::HorizonMismatch {
            expected: w.horizon,
            found: end,
        });
    }
    Ok(w.value(traj.final_state().m, &traj.final_quadrature()))
}
