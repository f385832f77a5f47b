//! Four-population myeloma/immune model and its three-drug controlled form.
//!
//! State order is always `(M, T_C, N, T_R)`: M-protein (g/dL), cytotoxic T cells,
//! NK cells and regulatory T cells (cells/uL). Drug order is
//! `(pomalidomide, dexamethasone, elotuzumab)` as peripheral concentrations in ng/mL.
//!
//! Every interaction is a saturating `a x / (b + x)` term and every drug action is an
//! Emax term `phi u / (psi + u)` multiplying the rate it acts on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rate of change of the four populations, in state order.
pub type Rates = [f64; 4];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientState {
    /// M-protein, g/dL.
    pub m: f64,
    /// Cytotoxic T lymphocytes, cells/uL.
    pub t_c: f64,
    /// Natural killer cells, cells/uL.
    pub n: f64,
    /// Regulatory T cells, cells/uL.
    pub t_r: f64,
}

impl PatientState {
    pub const fn new(m: f64, t_c: f64, n: f64, t_r: f64) -> Self {
        Self { m, t_c, n, t_r }
    }

    /// Diseased-state observations used as the default initial condition.
    pub const fn table_default() -> Self {
        Self::new(4.0, 464.0, 227.0, 42.0)
    }

    /// Near-steady initial condition used for optimizer warm starts.
    pub const fn near_steady() -> Self {
        Self::new(5.0, 1000.0, 810.0, 75.0)
    }

    pub const fn to_array(self) -> [f64; 4] {
        [self.m, self.t_c, self.n, self.t_r]
    }

    pub const fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite() && *v > 0.0)
    }

    pub fn validate_positive(&self) -> Result<()> {
        for (name, v) in ["M", "T_C", "N", "T_R"].iter().zip(self.to_array()) {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::param(
                    *name,
                    format!("must be finite and > 0, got {v}"),
                ));
            }
        }
        Ok(())
    }
}

/// Drug concentrations `(u1, u2, u3)` in ng/mL.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DoseVector(pub [f64; 3]);

impl DoseVector {
    pub const ZERO: DoseVector = DoseVector([0.0; 3]);

    pub const fn new(pomalidomide: f64, dexamethasone: f64, elotuzumab: f64) -> Self {
        Self([pomalidomide, dexamethasone, elotuzumab])
    }

    pub fn pomalidomide(&self) -> f64 {
        self.0[0]
    }

    pub fn dexamethasone(&self) -> f64 {
        self.0[1]
    }

    pub fn elotuzumab(&self) -> f64 {
        self.0[2]
    }

    pub fn within(&self, max: &DoseVector) -> bool {
        self.0
            .iter()
            .zip(max.0)
            .all(|(u, hi)| u.is_finite() && *u >= 0.0 && *u <= hi)
    }

    pub fn validate_within(&self, max: &DoseVector) -> Result<()> {
        if self.within(max) {
            Ok(())
        } else {
            Err(Error::InvalidRegimen(format!(
                "dose {:?} outside the box [0, {:?}]",
                self.0, max.0
            )))
        }
    }
}

/// Rate and threshold constants of the untreated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParameters {
    pub s_m: f64,
    pub r_m: f64,
    pub k_m: f64,
    pub delta_m: f64,
    pub a_nm: f64,
    pub b_nm: f64,
    pub a_cm: f64,
    pub b_cm: f64,
    pub a_cnm: f64,
    pub a_mm: f64,
    pub b_mm: f64,
    pub a_rm: f64,
    pub b_rm: f64,
    pub r_c: f64,
    pub k_c: f64,
    pub delta_c: f64,
    pub a_mc: f64,
    pub b_mc: f64,
    pub a_nc: f64,
    pub b_nc: f64,
    pub s_n: f64,
    pub r_n: f64,
    pub k_n: f64,
    pub delta_n: f64,
    pub a_cn: f64,
    pub b_cn: f64,
    pub r_r: f64,
    pub k_r: f64,
    pub delta_r: f64,
    pub a_mr: f64,
    pub b_mr: f64,
}

impl Default for ModelParameters {
    fn default() -> Self {
        Self {
            s_m: 0.001,
            r_m: 0.0175,
            k_m: 10.0,
            delta_m: 0.002,
            a_nm: 5.0,
            b_nm: 150.0,
            a_cm: 5.0,
            b_cm: 375.0,
            a_cnm: 8.0,
            a_mm: 0.5,
            b_mm: 3.0,
            a_rm: 0.5,
            b_rm: 25.0,
            r_c: 0.013,
            k_c: 800.0,
            delta_c: 0.02,
            a_mc: 5.0,
            b_mc: 3.0,
            a_nc: 1.0,
            b_nc: 150.0,
            s_n: 0.03,
            r_n: 0.04,
            k_n: 450.0,
            delta_n: 0.025,
            a_cn: 1.0,
            b_cn: 375.0,
            r_r: 0.0831,
            k_r: 80.0,
            delta_r: 0.0757,
            a_mr: 2.0,
            b_mr: 3.0,
        }
    }
}

impl ModelParameters {
    pub fn named_values(&self) -> [(&'static str, f64); 31] {
        [
            ("s_m", self.s_m),
            ("r_m", self.r_m),
            ("k_m", self.k_m),
            ("delta_m", self.delta_m),
            ("a_nm", self.a_nm),
            ("b_nm", self.b_nm),
            ("a_cm", self.a_cm),
            ("b_cm", self.b_cm),
            ("a_cnm", self.a_cnm),
            ("a_mm", self.a_mm),
            ("b_mm", self.b_mm),
            ("a_rm", self.a_rm),
            ("b_rm", self.b_rm),
            ("r_c", self.r_c),
            ("k_c", self.k_c),
            ("delta_c", self.delta_c),
            ("a_mc", self.a_mc),
            ("b_mc", self.b_mc),
            ("a_nc", self.a_nc),
            ("b_nc", self.b_nc),
            ("s_n", self.s_n),
            ("r_n", self.r_n),
            ("k_n", self.k_n),
            ("delta_n", self.delta_n),
            ("a_cn", self.a_cn),
            ("b_cn", self.b_cn),
            ("r_r", self.r_r),
            ("k_r", self.k_r),
            ("delta_r", self.delta_r),
            ("a_mr", self.a_mr),
            ("b_mr", self.b_mr),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.named_values() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::param(
                    name,
                    format!("must be finite and >= 0, got {v}"),
                ));
            }
        }
        for (name, k) in [
            ("k_m", self.k_m),
            ("k_c", self.k_c),
            ("k_n", self.k_n),
            ("k_r", self.k_r),
        ] {
            if k <= 0.0 {
                return Err(Error::param(name, "carrying capacity must be > 0"));
            }
        }
        if self.a_mm + self.a_rm > 1.0 {
            return Err(Error::param(
                "a_mm + a_rm",
                format!(
                    "constraint a_mm + a_rm <= 1 violated ({} + {} = {})",
                    self.a_mm,
                    self.a_rm,
                    self.a_mm + self.a_rm
                ),
            ));
        }
        Ok(())
    }

    /// Rejects a non-negative state for which some saturation denominator `b + x` is zero.
    pub fn check_state(&self, x: &PatientState) -> Result<()> {
        for (name, v) in ["M", "T_C", "N", "T_R"].iter().zip(x.to_array()) {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Domain(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        let denominators = [
            ("b_nm + N", self.b_nm, x.n),
            ("b_cm + T_C", self.b_cm, x.t_c),
            ("b_mm + M", self.b_mm, x.m),
            ("b_rm + T_R", self.b_rm, x.t_r),
            ("b_mc + M", self.b_mc, x.m),
            ("b_nc + N", self.b_nc, x.n),
            ("b_cn + T_C", self.b_cn, x.t_c),
            ("b_mr + M", self.b_mr, x.m),
        ];
        for (what, b, pop) in denominators {
            if b + pop <= 0.0 {
                return Err(Error::Domain(format!(
                    "degenerate saturation term: {what} = 0"
                )));
            }
        }
        Ok(())
    }
}

/// Emax parameters of the three drugs.
///
/// `efficacy[i - 1]` and `half_effect[i - 1]` belong to drug action `i` (1..=14):
/// actions 1..=9 are driven by pomalidomide, 10..=13 by dexamethasone and 14 by
/// elotuzumab.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PharmacodynamicsParameters {
    pub efficacy: [f64; 14],
    pub half_effect: [f64; 14],
    pub max_dose: DoseVector,
}

impl Default for PharmacodynamicsParameters {
    fn default() -> Self {
        let mut half_effect = [40.986; 14];
        half_effect[9..13].fill(0.7065);
        half_effect[13] = 19.0;
        Self {
            efficacy: [0.5; 14],
            half_effect,
            max_dose: DoseVector::new(204.93, 3.5325, 95.0),
        }
    }
}

impl PharmacodynamicsParameters {
    /// Drug (0-based) driving each action (0-based).
    pub const ACTION_DRUG: [usize; 14] = [0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 2];

    pub fn validate(&self) -> Result<()> {
        for (i, phi) in self.efficacy.iter().enumerate() {
            if !(0.0..=1.0).contains(phi) {
                return Err(Error::param(
                    format!("efficacy[{}]", i + 1),
                    format!("must lie in [0, 1], got {phi}"),
                ));
            }
        }
        for (i, psi) in self.half_effect.iter().enumerate() {
            if !psi.is_finite() || *psi <= 0.0 {
                return Err(Error::param(
                    format!("half_effect[{}]", i + 1),
                    format!("must be > 0, got {psi}"),
                ));
            }
        }
        for (i, u) in self.max_dose.0.iter().enumerate() {
            if !u.is_finite() || *u <= 0.0 {
                return Err(Error::param(
                    format!("max_dose[{}]", i + 1),
                    format!("must be > 0, got {u}"),
                ));
            }
        }
        Ok(())
    }

    /// Effect of action `i` (1-based) at concentration `u`.
    #[inline]
    pub fn effect(&self, i: usize, u: f64) -> f64 {
        emax_unchecked(u, self.efficacy[i - 1], self.half_effect[i - 1])
    }

    /// Derivative of [`Self::effect`] with respect to `u`.
    #[inline]
    pub fn effect_slope(&self, i: usize, u: f64) -> f64 {
        let psi = self.half_effect[i - 1];
        let d = psi + u;
        self.efficacy[i - 1] * psi / (d * d)
    }

    /// Copy with every half-effect level of drug `drug` (0-based) multiplied by `factor`.
    pub fn scaled_drug(&self, drug: usize, factor: f64) -> Self {
        let mut out = self.clone();
        for (i, psi) in out.half_effect.iter_mut().enumerate() {
            if Self::ACTION_DRUG[i] == drug {
                *psi *= factor;
            }
        }
        out.max_dose.0[drug] *= factor;
        out
    }
}

/// Saturating drug effect `phi u / (psi + u)`.
pub fn emax(u: f64, phi: f64, psi: f64) -> Result<f64> {
    if !(psi > 0.0) || !psi.is_finite() {
        return Err(Error::Domain(format!(
            "half-effect level must be > 0, got {psi}"
        )));
    }
    if !(u >= 0.0) || !u.is_finite() {
        return Err(Error::Domain(format!(
            "concentration must be >= 0, got {u}"
        )));
    }
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::Domain(format!(
            "efficacy must lie in [0, 1], got {phi}"
        )));
    }
    Ok(emax_unchecked(u, phi, psi))
}

#[inline]
pub(crate) fn emax_unchecked(u: f64, phi: f64, psi: f64) -> f64 {
    phi * u / (psi + u)
}

/// Untreated right-hand side.
pub fn rhs_uncontrolled(x: &PatientState, p: &ModelParameters) -> Result<Rates> {
    p.check_state(x)?;
    Ok(uncontrolled_rates(x.to_array(), p))
}

/// Right-hand side under constant drug concentrations `u`.
pub fn rhs_controlled(
    x: &PatientState,
    u: &DoseVector,
    p: &ModelParameters,
    q: &PharmacodynamicsParameters,
) -> Result<Rates> {
    p.check_state(x)?;
    for (i, ui) in u.0.iter().enumerate() {
        if !ui.is_finite() || *ui < 0.0 {
            return Err(Error::Domain(format!("u{} must be >= 0, got {ui}", i + 1)));
        }
    }
    Ok(controlled_rates(x.to_array(), u.0, p, q))
}

// Both rate functions share one evaluation order so that the controlled form at zero
// dose is bit-identical to the untreated form (every drug factor collapses to an exact
// 1.0 or 0.0).

#[inline]
pub(crate) fn uncontrolled_rates(x: [f64; 4], p: &ModelParameters) -> Rates {
    let [m, tc, n, tr] = x;
    let n_sat = n / (p.b_nm + n);
    let c_sat = tc / (p.b_cm + tc);
    let m_inh = p.a_mm * m / (p.b_mm + m);
    let r_inh = p.a_rm * tr / (p.b_rm + tr);
    let shield = 1.0 - m_inh - r_inh;
    let loss = p.delta_m * m;

    // kill pathways e and c share N/(b_NM + N); pathway f is the T_C-only term
    let dm = p.s_m + p.r_m * (1.0 - m / p.k_m) * m
        - loss
        - loss * n_sat * (p.a_nm + p.a_cnm * c_sat) * shield
        - loss * (p.a_cm * c_sat) * shield;

    let mc = p.a_mc * m / (p.b_mc + m);
    let nc = p.a_nc * n / (p.b_nc + n);
    let dtc = p.r_c * (1.0 - tc / p.k_c) * tc * (1.0 + mc + nc) - p.delta_c * tc;

    let cn = p.a_cn * tc / (p.b_cn + tc);
    let dn = p.s_n + p.r_n * (1.0 - n / p.k_n) * n * (1.0 + cn) - p.delta_n * n;

    let mr = p.a_mr * m / (p.b_mr + m);
    let dtr = p.r_r * (1.0 - tr / p.k_r) * tr * (1.0 + mr) - p.delta_r * tr;

    [dm, dtc, dn, dtr]
}

#[inline]
pub(crate) fn controlled_rates(
    x: [f64; 4],
    u: [f64; 3],
    p: &ModelParameters,
    q: &PharmacodynamicsParameters,
) -> Rates {
    let [m, tc, n, tr] = x;
    let [u1, u2, u3] = u;
    let e = |i: usize, dose: f64| q.effect(i, dose);

    let n_sat = n / (p.b_nm + n);
    let c_sat = tc / (p.b_cm + tc);
    let m_inh = p.a_mm * m / (p.b_mm + m);
    let r_inh = p.a_rm * tr / (p.b_rm + tr);
    let shield_n = 1.0 - m_inh * (1.0 - e(7, u1)) - r_inh;
    let shield_c = 1.0 - m_inh * (1.0 - e(8, u1)) - r_inh;
    let loss = p.delta_m * m;

    let dm = p.s_m + p.r_m * (1.0 - m / p.k_m) * m * (1.0 - e(5, u1) - e(12, u2))
        - loss * (1.0 + e(9, u1))
        - loss
            * n_sat
            * (p.a_nm * (1.0 + e(6, u1) + e(14, u3)) + p.a_cnm * c_sat * (1.0 + e(4, u1)))
            * shield_n
        - loss * (p.a_cm * c_sat) * shield_c;

    let mc = p.a_mc * m / (p.b_mc + m);
    let nc = p.a_nc * n / (p.b_nc + n);
    let dtc =
        p.r_c * (1.0 - tc / p.k_c) * tc * (1.0 + e(2, u1) - e(11, u2) + mc + nc) - p.delta_c * tc;

    let cn = p.a_cn * tc / (p.b_cn + tc);
    let dn = p.s_n
        + p.r_n * (1.0 - n / p.k_n) * n * (1.0 + e(1, u1) - e(10, u2) + cn * (1.0 + e(3, u1)))
        - p.delta_n * n;

    let mr = p.a_mr * m / (p.b_mr + m);
    let dtr = p.r_r * (1.0 - tr / p.k_r) * tr * (1.0 - e(13, u2)) * (1.0 + mr) - p.delta_r * tr;

    [dm, dtc, dn, dtr]
}

/// Partial derivatives of the controlled rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateJacobian {
    /// `state[i][j] = d rate_i / d x_j`.
    pub state: [[f64; 4]; 4],
    /// `dose[i][k] = d rate_i / d u_k`.
    pub dose: [[f64; 3]; 4],
}

/// Hand-derived Jacobians of the controlled rates with respect to state and dose.
pub(crate) fn controlled_jacobian(
    x: [f64; 4],
    u: [f64; 3],
    p: &ModelParameters,
    q: &PharmacodynamicsParameters,
) -> RateJacobian {
    let [m, tc, n, tr] = x;
    let [u1, u2, u3] = u;
    let e = |i: usize, dose: f64| q.effect(i, dose);
    let de = |i: usize, dose: f64| q.effect_slope(i, dose);
    // d/dx of a x / (b + x)
    let sat_slope = |a: f64, b: f64, v: f64| a * b / ((b + v) * (b + v));

    let mut js = [[0.0; 4]; 4];
    let mut ju = [[0.0; 3]; 4];

    // M
    let n_sat = n / (p.b_nm + n);
    let c_sat = tc / (p.b_cm + tc);
    let m_inh = p.a_mm * m / (p.b_mm + m);
    let r_inh = p.a_rm * tr / (p.b_rm + tr);
    let (e4, e6, e7, e8, e9) = (e(4, u1), e(6, u1), e(7, u1), e(8, u1), e(9, u1));
    let shield_n = 1.0 - m_inh * (1.0 - e7) - r_inh;
    let shield_c = 1.0 - m_inh * (1.0 - e8) - r_inh;
    let boost_n = p.a_nm * (1.0 + e6 + e(14, u3)) + p.a_cnm * c_sat * (1.0 + e4);
    let kill_n = n_sat * boost_n;
    let kill_c = p.a_cm * c_sat;
    let growth = 1.0 - e(5, u1) - e(12, u2);
    let logistic_m = (1.0 - m / p.k_m) * m;
    let m_inh_slope = sat_slope(p.a_mm, p.b_mm, m);
    let c_slope = p.b_cm / ((p.b_cm + tc) * (p.b_cm + tc));
    let n_slope = p.b_nm / ((p.b_nm + n) * (p.b_nm + n));
    let r_slope = sat_slope(p.a_rm, p.b_rm, tr);
    let loss = p.delta_m * m;

    js[0][0] = p.r_m * (1.0 - 2.0 * m / p.k_m) * growth
        - p.delta_m * (1.0 + e9)
        - p.delta_m * (kill_n * shield_n + kill_c * shield_c)
        + loss * m_inh_slope * (kill_n * (1.0 - e7) + kill_c * (1.0 - e8));
    js[0][1] =
        -loss * (n_sat * p.a_cnm * c_slope * (1.0 + e4) * shield_n + p.a_cm * c_slope * shield_c);
    js[0][2] = -loss * n_slope * boost_n * shield_n;
    js[0][3] = loss * (kill_n + kill_c) * r_slope;

    ju[0][0] = -p.r_m * logistic_m * de(5, u1)
        - loss * de(9, u1)
        - loss
            * (n_sat * (p.a_nm * de(6, u1) + p.a_cnm * c_sat * de(4, u1)) * shield_n
                + kill_n * m_inh * de(7, u1)
                + kill_c * m_inh * de(8, u1));
    ju[0][1] = -p.r_m * logistic_m * de(12, u2);
    ju[0][2] = -loss * n_sat * p.a_nm * de(14, u3) * shield_n;

    // T_C
    let mc = p.a_mc * m / (p.b_mc + m);
    let nc = p.a_nc * n / (p.b_nc + n);
    let drive_c = 1.0 + e(2, u1) - e(11, u2) + mc + nc;
    let logistic_c = (1.0 - tc / p.k_c) * tc;
    js[1][0] = p.r_c * logistic_c * sat_slope(p.a_mc, p.b_mc, m);
    js[1][1] = p.r_c * (1.0 - 2.0 * tc / p.k_c) * drive_c - p.delta_c;
    js[1][2] = p.r_c * logistic_c * sat_slope(p.a_nc, p.b_nc, n);
    ju[1][0] = p.r_c * logistic_c * de(2, u1);
    ju[1][1] = -p.r_c * logistic_c * de(11, u2);

    // N
    let cn = p.a_cn * tc / (p.b_cn + tc);
    let e3 = e(3, u1);
    let drive_n = 1.0 + e(1, u1) - e(10, u2) + cn * (1.0 + e3);
    let logistic_n = (1.0 - n / p.k_n) * n;
    js[2][1] = p.r_n * logistic_n * sat_slope(p.a_cn, p.b_cn, tc) * (1.0 + e3);
    js[2][2] = p.r_n * (1.0 - 2.0 * n / p.k_n) * drive_n - p.delta_n;
    ju[2][0] = p.r_n * logistic_n * (de(1, u1) + cn * de(3, u1));
    ju[2][1] = -p.r_n * logistic_n * de(10, u2);

    // T_R
    let mr = p.a_mr * m / (p.b_mr + m);
    let damp = 1.0 - e(13, u2);
    let logistic_r = (1.0 - tr / p.k_r) * tr;
    js[3][0] = p.r_r * logistic_r * damp * sat_slope(p.a_mr, p.b_mr, m);
    js[3][3] = p.r_r * (1.0 - 2.0 * tr / p.k_r) * damp * (1.0 + mr) - p.delta_r;
    ju[3][1] = -p.r_r * logistic_r * de(13, u2) * (1.0 + mr);

    RateJacobian {
        state: js,
        dose: ju,
    }
}

/// Jacobians at a state, for callers outside the solver (checked inputs).
pub fn rate_jacobian(
    x: &PatientState,
    u: &DoseVector,
    p: &ModelParameters,
    q: &PharmacodynamicsParameters,
) -> Result<RateJacobian> {
    p.check_state(x)?;
    Ok(controlled_jacobian(x.to_array(), u.0, p, q))
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ic() -> PatientState {
        PatientState::table_default()
    }

    #[test]
    fn emax_values() {
        assert_eq!(emax(0.0, 0.5, 40.986).unwrap(), 0.0);
        for psi in [0.7065, 19.0, 40.986, 1234.5] {
            assert_relative_eq!(emax(psi, 0.5, psi).unwrap(), 0.25, max_relative = 1e-15);
        }
        assert_relative_eq!(
            emax(204.93, 0.5, 40.986).unwrap(),
            0.416_666_666_666_666_67,
            max_relative = 1e-15
        );
    }

    #[test]
    fn emax_rejects_bad_domain() {
        assert!(emax(1.0, 0.5, 0.0).is_err());
        assert!(emax(1.0, 0.5, -2.0).is_err());
        assert!(emax(-1.0, 0.5, 2.0).is_err());
        assert!(emax(1.0, 1.5, 2.0).is_err());
    }

    #[test]
    fn defaults_match_tables() {
        let q = PharmacodynamicsParameters::default();
        assert!(q.efficacy.iter().all(|&v| v == 0.5));
        assert!(q.half_effect[..9].iter().all(|&v| v == 40.986));
        assert!(q.half_effect[9..13].iter().all(|&v| v == 0.7065));
        assert_eq!(q.half_effect[13], 19.0);
        assert_eq!(q.max_dose, DoseVector::new(204.93, 3.5325, 95.0));
        ModelParameters::default().validate().unwrap();
        q.validate().unwrap();
    }

    #[test]
    fn empty_populations_leave_only_sources() {
        let p = ModelParameters::default();
        let r = rhs_uncontrolled(&PatientState::new(0.0, 0.0, 0.0, 0.0), &p).unwrap();
        assert_eq!(r, [0.001, 0.0, 0.03, 0.0]);
    }

    #[test]
    fn treg_at_capacity_without_tumor_decays_linearly() {
        let p = ModelParameters::default();
        let x = PatientState::new(0.0, 300.0, 200.0, p.k_r);
        let r = rhs_uncontrolled(&x, &p).unwrap();
        assert_eq!(r[3], -p.delta_r * p.k_r);
    }

    // Frozen from an independent 40-digit transcription of the equations.
    #[test]
    fn rates_at_initial_state_match_high_precision_oracle() {
        let p = ModelParameters::default();
        let q = PharmacodynamicsParameters::default();
        let cases: [([f64; 3], [f64; 4]); 5] = [
            (
                [0.0, 0.0, 0.0],
                [
                    0.0079351063051489446905,
                    2.01728,
                    1.3431248046616342206,
                    0.373125,
                ],
            ),
            (
                [204.93, 0.0, 0.0],
                [
                    -0.030770185830431742379,
                    3.07288,
                    4.2548434732706484792,
                    0.373125,
                ],
            ),
            (
                [0.0, 3.5325, 0.0],
                [
                    -0.0095648936948510553095,
                    0.96168,
                    -0.53172704719021763122,
                    -1.10709375,
                ],
            ),
            (
                [0.0, 0.0, 95.0],
                [
                    0.0039124005840386945015,
                    2.01728,
                    1.3431248046616342206,
                    0.373125,
                ],
            ),
            (
                [204.93, 3.5325, 95.0],
                [
                    -0.053487578091056118289,
                    2.01728,
                    2.3799916214187966274,
                    -1.10709375,
                ],
            ),
        ];
        for (u, want) in cases {
            let got = rhs_controlled(&ic(), &DoseVector(u), &p, &q).unwrap();
            for (g, w) in got.iter().zip(want) {
                assert_relative_eq!(*g, w, max_relative = 1e-13);
            }
        }
        let un = rhs_uncontrolled(&ic(), &p).unwrap();
        for (g, w) in un.iter().zip(cases[0].1) {
            assert_relative_eq!(*g, w, max_relative = 1e-13);
        }
    }

    #[test]
    fn degenerate_threshold_rejected() {
        let p = ModelParameters {
            b_mm: 0.0,
            ..Default::default()
        };
        let err = rhs_uncontrolled(&PatientState::new(0.0, 1.0, 1.0, 1.0), &p).unwrap_err();
        assert!(err.to_string().contains("b_mm + M"));
        assert!(rhs_uncontrolled(&PatientState::new(0.5, 1.0, 1.0, 1.0), &p).is_ok());
    }

    #[test]
    fn parameter_constraint_named() {
        let p = ModelParameters {
            a_mm: 0.7,
            a_rm: 0.5,
            ..Default::default()
        };
        let msg = p.validate().unwrap_err().to_string();
        assert!(msg.contains("a_mm + a_rm <= 1"), "{msg}");
        let p = ModelParameters {
            k_n: 0.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }

    fn central_difference<const K: usize>(
        f: impl Fn([f64; K]) -> Rates,
        at: [f64; K],
        j: usize,
    ) -> Rates {
        let h = 1e-6 * at[j].abs().max(1.0);
        let mut hi = at;
        let mut lo = at;
        hi[j] += h;
        lo[j] -= h;
        let (a, b) = (f(hi), f(lo));
        std::array::from_fn(|i| (a[i] - b[i]) / (2.0 * h))
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = ModelParameters::default();
        let q = PharmacodynamicsParameters::default();
        let states = [
            [4.0, 464.0, 227.0, 42.0],
            [0.07, 195.0, 268.0, 0.19],
            [8.0, 700.0, 400.0, 70.0],
        ];
        let doses = [[0.0, 0.0, 0.0], [102.0, 1.7, 45.0], [204.93, 3.5325, 95.0]];
        for x in states {
            for u in doses {
                let jac = controlled_jacobian(x, u, &p, &q);
                for j in 0..4 {
                    let fd = central_difference(|y| controlled_rates(y, u, &p, &q), x, j);
                    for i in 0..4 {
                        let scale = fd[i].abs().max(1e-8);
                        assert!(
                            (jac.state[i][j] - fd[i]).abs() <= 1e-6 * scale + 1e-12,
                            "d f{i}/d x{j} at {x:?},{u:?}: {} vs {}",
                            jac.state[i][j],
                            fd[i]
                        );
                    }
                }
                for k in 0..3 {
                    let fd = central_difference(|v| controlled_rates(x, v, &p, &q), u, k);
                    for i in 0..4 {
                        let scale = fd[i].abs().max(1e-8);
                        assert!(
                            (jac.dose[i][k] - fd[i]).abs() <= 1e-6 * scale + 1e-12,
                            "d f{i}/d u{k} at {x:?},{u:?}: {} vs {}",
                            jac.dose[i][k],
                            fd[i]
                        );
                    }
                }
            }
        }
    }
}
