//! Adaptive integration of the controlled model under a regimen.
//!
//! The state is augmented with four quadratures, `int M dt` and `int u_i dt`, so the
//! objective's running integral is carried by the same scheme and error control as the
//! populations. The dose quadratures are exact for piecewise-linear controls and are left
//! out of the error norm.
//!
//! Every regimen switch time (and every extra breakpoint in [`IntegratorSettings`]) ends
//! one integration segment and starts a fresh one, so no step straddles a control jump.

pub(crate) mod dopri;

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    controlled_rates, DoseVector, ModelParameters, PatientState, PharmacodynamicsParameters,
};
use crate::error::{Error, Result};
use crate::objective::ObjectiveWeights;
use crate::regimens::{Regimen, SegmentControl};
use dopri::{DenseStep, StepControl, StepSink};

/// Augmented state size: four populations and four quadratures.
pub(crate) const AUG: usize = 8;
/// Components under error control: the populations and `int M dt`.
const CONTROLLED: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSettings {
    pub rtol: f64,
    pub atol: f64,
    /// Upper bound on the step size in days; `None` means unbounded.
    pub max_step: Option<f64>,
    /// First step size in days; `None` picks it from the local derivatives.
    pub first_step: Option<f64>,
    /// Extra times (days) at which integration is restarted.
    pub breakpoints: Vec<f64>,
    pub max_steps: usize,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-10,
            max_step: None,
            first_step: None,
            breakpoints: Vec::new(),
            max_steps: 1_000_000,
        }
    }
}

impl IntegratorSettings {
    /// Reference-grade tolerances.
    pub fn oracle() -> Self {
        Self {
            rtol: 1e-12,
            atol: 1e-12,
            ..Self::default()
        }
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.rtol = tol;
        self.atol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0) || !(self.atol > 0.0) {
            return Err(Error::param("tolerance", "rtol and atol must be > 0"));
        }
        if let Some(h) = self.max_step {
            if !(h > 0.0) {
                return Err(Error::param("max_step", "must be > 0"));
            }
        }
        if let Some(h) = self.first_step {
            if !(h > 0.0) {
                return Err(Error::param("first_step", "must be > 0"));
            }
        }
        if self.max_steps == 0 {
            return Err(Error::param("max_steps", "must be > 0"));
        }
        Ok(())
    }

    pub(crate) fn step_control(&self) -> StepControl {
        StepControl {
            rtol: self.rtol,
            atol: self.atol,
            max_step: self.max_step.unwrap_or(f64::INFINITY),
            first_step: self.first_step,
            max_steps: self.max_steps,
            controlled: CONTROLLED,
        }
    }
}

/// Parameters bound together for repeated right-hand-side evaluation.
#[derive(Clone, Copy)]
pub(crate) struct Model<'a> {
    pub p: &'a ModelParameters,
    pub q: &'a PharmacodynamicsParameters,
}

impl<'a> Model<'a> {
    pub fn new(p: &'a ModelParameters, q: &'a PharmacodynamicsParameters) -> Self {
        Self { p, q }
    }

    #[inline]
    pub fn augmented(&self, ctrl: &SegmentControl, t: f64, y: &[f64; AUG]) -> [f64; AUG] {
        let u = ctrl.at(t);
        let r = controlled_rates([y[0], y[1], y[2], y[3]], u, self.p, self.q);
        [r[0], r[1], r[2], r[3], y[0], u[0], u[1], u[2]]
    }

    /// Advances the augmented state across one segment with a fixed control.
    pub fn advance<S: StepSink<AUG>>(
        &self,
        y: [f64; AUG],
        t0: f64,
        t1: f64,
        ctrl: &SegmentControl,
        ctl: &StepControl,
        sink: &mut S,
    ) -> Result<[f64; AUG]> {
        let f = |t: f64, y: &[f64; AUG]| self.augmented(ctrl, t, y);
        dopri::integrate(&f, t0, y, t1, ctl, sink)
    }
}

pub(crate) fn augment(x0: &PatientState) -> [f64; AUG] {
    let [m, c, n, r] = x0.to_array();
    [m, c, n, r, 0.0, 0.0, 0.0, 0.0]
}

/// Sorted segment boundaries `0 = b_0 < ... < b_k = horizon`.
pub(crate) fn segment_bounds(regimen: &Regimen, horizon: f64, extra: &[f64]) -> Vec<f64> {
    let mut cuts: Vec<f64> = regimen
        .switch_times(horizon)
        .into_iter()
        .chain(extra.iter().copied())
        .filter(|&t| t > 0.0 && t < horizon)
        .collect();
    cuts.sort_by(f64::total_cmp);
    let min_gap = 1e-9 * horizon.max(1.0);
    let mut bounds = Vec::with_capacity(cuts.len() + 2);
    bounds.push(0.0);
    for t in cuts {
        if t - bounds[bounds.len() - 1] > min_gap && horizon - t > min_gap {
            bounds.push(t);
        }
    }
    bounds.push(horizon);
    bounds
}

/// Simulated populations and quadratures at the accepted step points.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<PatientState>,
    /// Dose in effect at each time point (right-continuous at switches).
    pub doses: Vec<DoseVector>,
    /// `(int M, int u1, int u2, int u3)` from 0 to each time point.
    pub quadratures: Vec<[f64; 4]>,
    pub(crate) dense: Vec<DenseStep<AUG>>,
}

impl Trajectory {
    /// Builds a trajectory from samples, integrating `M` and the doses by the
    /// trapezoid rule. Meant for externally supplied or synthetic data.
    pub fn from_samples(
        times: Vec<f64>,
        states: Vec<PatientState>,
        doses: Vec<DoseVector>,
    ) -> Result<Self> {
        if times.is_empty() || times.len() != states.len() || times.len() != doses.len() {
            return Err(Error::Domain(
                "times, states and doses must have equal non-zero length".into(),
            ));
        }
        if times[0] != 0.0 || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain(
                "times must start at 0 and strictly increase".into(),
            ));
        }
        let mut quadratures = Vec::with_capacity(times.len());
        let mut acc = [0.0; 4];
        quadratures.push(acc);
        for i in 1..times.len() {
            let h = times[i] - times[i - 1];
            acc[0] += 0.5 * h * (states[i - 1].m + states[i].m);
            for d in 0..3 {
                acc[d + 1] += 0.5 * h * (doses[i - 1].0[d] + doses[i].0[d]);
            }
            quadratures.push(acc);
        }
        Ok(Self {
            times,
            states,
            doses,
            quadratures,
            dense: Vec::new(),
        })
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn final_state(&self) -> PatientState {
        self.states[self.states.len() - 1]
    }

    pub fn final_quadrature(&self) -> [f64; 4] {
        self.quadratures[self.quadratures.len() - 1]
    }

    /// `int_0^t (beta M + sum gamma_i u_i) ds` at every time point.
    pub fn running_integral(&self, w: &ObjectiveWeights) -> Vec<f64> {
        self.quadratures
            .iter()
            .map(|q| w.integral_part(q))
            .collect()
    }

    /// Populations at any `t` in `[0, horizon]` from the continuous extension.
    pub fn state_at(&self, t: f64) -> Option<PatientState> {
        self.augmented_at(t)
            .map(|y| PatientState::new(y[0], y[1], y[2], y[3]))
    }

    pub(crate) fn augmented_at(&self, t: f64) -> Option<[f64; AUG]> {
        if self.dense.is_empty() || t < 0.0 || t > self.horizon() {
            return None;
        }
        let k = self
            .dense
            .partition_point(|s| s.end() < t)
            .min(self.dense.len() - 1);
        Some(self.dense[k].eval(t))
    }

    /// Post-hoc quadrature of `M` over the continuous extension (5-point Gauss on every
    /// step). Independent of the augmented component; used as a cross-check.
    pub fn burden_by_quadrature(&self) -> Option<f64> {
        if self.dense.is_empty() {
            return None;
        }
        const NODES: [f64; 5] = [
            -0.906_179_845_938_664,
            -0.538_469_310_105_683_1,
            0.0,
            0.538_469_310_105_683_1,
            0.906_179_845_938_664,
        ];
        const WEIGHTS: [f64; 5] = [
            0.236_926_885_056_189_1,
            0.478_628_670_499_366_5,
            0.568_888_888_888_888_9,
            0.478_628_670_499_366_5,
            0.236_926_885_056_189_1,
        ];
        let total = self
            .dense
            .iter()
            .map(|s| {
                let half = 0.5 * s.h;
                let mid = s.t + half;
                NODES
                    .iter()
                    .zip(WEIGHTS)
                    .map(|(x, w)| w * s.eval(mid + half * x)[0])
                    .sum::<f64>()
                    * half
            })
            .sum();
        Some(total)
    }
}

struct Recorder<'a> {
    times: &'a mut Vec<f64>,
    ys: &'a mut Vec<[f64; AUG]>,
    dense: &'a mut Vec<DenseStep<AUG>>,
}

impl StepSink<AUG> for Recorder<'_> {
    const DENSE: bool = true;

    fn accept(&mut self, t: f64, y: &[f64; AUG], dense: Option<&DenseStep<AUG>>) {
        self.times.push(t);
        self.ys.push(*y);
        if let Some(d) = dense {
            self.dense.push(*d);
        }
    }
}

/// Integrates the controlled model from `x0` over `[0, horizon]` under `regimen`.
pub fn simulate(
    x0: &PatientState,
    regimen: &Regimen,
    horizon: f64,
    p: &ModelParameters,
    q: &PharmacodynamicsParameters,
    settings: &IntegratorSettings,
) -> Result<Trajectory> {
    x0.validate_positive()?;
    p.validate()?;
    q.validate()?;
    settings.validate()?;
    if !horizon.is_finite() || horizon < 0.0 {
        return Err(Error::param(
            "horizon",
            format!("must be finite and >= 0, got {horizon}"),
        ));
    }
    if let Some(t) = settings
        .breakpoints
        .iter()
        .find(|&&t| !(0.0..=horizon).contains(&t))
    {
        return Err(Error::param(
            "breakpoints",
            format!("{t} lies outside [0, {horizon}]"),
        ));
    }
    if horizon == 0.0 {
        let dose = regimen.dose_at(0.0)?;
        dose.validate_within(&q.max_dose)?;
        return Ok(Trajectory {
            times: vec![0.0],
            states: vec![*x0],
            doses: vec![dose],
            quadratures: vec![[0.0; 4]],
            dense: Vec::new(),
        });
    }
    regimen.validate(horizon, &q.max_dose)?;

    let model = Model::new(p, q);
    let ctl = settings.step_control();
    let bounds = segment_bounds(regimen, horizon, &settings.breakpoints);

    let mut times = vec![0.0];
    let mut ys = vec![augment(x0)];
    let mut dense = Vec::new();
    let mut y = ys[0];
    for w in bounds.windows(2) {
        let ctrl = regimen.segment_control(w[0], w[1]);
        let mut rec = Recorder {
            times: &mut times,
            ys: &mut ys,
            dense: &mut dense,
        };
        y = model.advance(y, w[0], w[1], &ctrl, &ctl, &mut rec)?;
    }
    debug_assert_eq!(times[times.len() - 1], horizon);

    let doses = times
        .iter()
        .map(|&t| regimen.dose_at(t))
        .collect::<Result<Vec<_>>>()?;
    let states = ys
        .iter()
        .map(|y| PatientState::new(y[0], y[1], y[2], y[3]))
        .collect();
    let quadratures = ys.iter().map(|y| [y[4], y[5], y[6], y[7]]).collect();
    Ok(Trajectory {
        times,
        states,
        doses,
        quadratures,
        dense,
    })
}

/// Per population, whether the maximum relative deviation from the final value over the
/// trailing `window` days stays below `tol`. Uses the whole trajectory when it is
/// shorter than the window.
pub fn steady_state_check(traj: &Trajectory, window: f64, tol: f64) -> [bool; 4] {
    let end = traj.horizon();
    let start = (end - window).max(0.0);
    let last = traj.final_state().to_array();
    let mut worst = [0.0f64; 4];
    let mut visit = |x: [f64; 4]| {
        for i in 0..4 {
            let rel = (x[i] - last[i]).abs() / last[i].abs().max(f64::MIN_POSITIVE);
            worst[i] = worst[i].max(rel);
        }
    };
    if let Some(x) = traj.state_at(start) {
        visit(x.to_array());
    }
    for (t, x) in traj.times.iter().zip(&traj.states) {
        if *t >= start {
            visit(x.to_array());
        }
    }
    worst.map(|w| w < tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults() -> (ModelParameters, PharmacodynamicsParameters) {
        (
            ModelParameters::default(),
            PharmacodynamicsParameters::default(),
        )
    }

    #[test]
    fn zero_horizon_is_a_single_point() {
        let (p, q) = defaults();
        let x0 = PatientState::table_default();
        let tr = simulate(
            &x0,
            &Regimen::zero(),
            0.0,
            &p,
            &q,
            &IntegratorSettings::default(),
        )
        .unwrap();
        assert_eq!(tr.times, vec![0.0]);
        assert_eq!(tr.states, vec![x0]);
        assert_eq!(tr.final_quadrature(), [0.0; 4]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (p, q) = defaults();
        let s = IntegratorSettings::default();
        let bad = PatientState::new(0.0, 1.0, 1.0, 1.0);
        assert!(simulate(&bad, &Regimen::zero(), 10.0, &p, &q, &s).is_err());
        let x0 = PatientState::table_default();
        assert!(simulate(&x0, &Regimen::zero(), -1.0, &p, &q, &s).is_err());
        let over = Regimen::constant(DoseVector::new(500.0, 0.0, 0.0));
        assert!(simulate(&x0, &over, 10.0, &p, &q, &s).is_err());
        let s2 = IntegratorSettings {
            breakpoints: vec![20.0],
            ..Default::default()
        };
        assert!(simulate(&x0, &Regimen::zero(), 10.0, &p, &q, &s2).is_err());
    }

    #[test]
    fn segment_bounds_merge_and_sort() {
        let r = Regimen::piecewise(90.0, vec![DoseVector::ZERO; 4]);
        let b = segment_bounds(&r, 360.0, &[45.0, 180.0, 0.0, 360.0]);
        assert_eq!(b, vec![0.0, 45.0, 90.0, 180.0, 270.0, 360.0]);
    }

    #[test]
    fn switch_times_are_step_points() {
        let (p, q) = defaults();
        let r = Regimen::piecewise(
            90.0,
            vec![
                DoseVector::new(204.93, 0.0, 0.0),
                DoseVector::ZERO,
                DoseVector::new(0.0, 3.5325, 95.0),
                DoseVector::ZERO,
            ],
        );
        let tr = simulate(
            &PatientState::table_default(),
            &r,
            360.0,
            &p,
            &q,
            &IntegratorSettings::default(),
        )
        .unwrap();
        for s in [90.0, 180.0, 270.0, 360.0] {
            assert!(tr.times.contains(&s));
        }
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
        let i = tr.times.iter().position(|&t| t == 180.0).unwrap();
        assert_eq!(tr.doses[i], DoseVector::new(0.0, 3.5325, 95.0));
        // exact quadrature of the piecewise-constant doses
        let q_end = tr.final_quadrature();
        assert!((q_end[1] - 204.93 * 90.0).abs() < 1e-9);
        assert!((q_end[2] - 3.5325 * 90.0).abs() < 1e-9);
    }

    #[test]
    fn steady_state_on_synthetic_data() {
        let times: Vec<f64> = (0..=100).map(f64::from).collect();
        let flat = Trajectory::from_samples(
            times.clone(),
            vec![PatientState::new(1.0, 2.0, 3.0, 4.0); 101],
            vec![DoseVector::ZERO; 101],
        )
        .unwrap();
        assert_eq!(steady_state_check(&flat, 50.0, 0.01), [true; 4]);

        let growing = Trajectory::from_samples(
            times.clone(),
            times
                .iter()
                .map(|t| {
                    let g = (0.05 * t).exp();
                    PatientState::new(g, g, g, g)
                })
                .collect(),
            vec![DoseVector::ZERO; 101],
        )
        .unwrap();
        assert_eq!(steady_state_check(&growing, 50.0, 0.01), [false; 4]);
    }
}
