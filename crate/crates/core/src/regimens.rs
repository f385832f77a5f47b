//! Dosing regimens: constant, piecewise-constant on a period grid, and mesh-sampled
//! controls, plus the discrete dose grids used by the enumeration strategies.

use serde::{Deserialize, Serialize};

use crate::dynamics::DoseVector;
use crate::error::{Error, Result};

/// Relative slack used when checking that periods or meshes tile a horizon.
const TILE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Piecewise-linear between mesh nodes.
    #[default]
    Linear,
    /// Zero-order hold, right-continuous at nodes.
    Step,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regimen {
    Constant {
        dose: DoseVector,
    },
    PiecewiseConstant {
        period: f64,
        doses: Vec<DoseVector>,
    },
    Sampled {
        times: Vec<f64>,
        doses: Vec<DoseVector>,
        #[serde(default)]
        interpolation: Interpolation,
    },
}

/// Control restricted to one integration segment: constant, or linear between two
/// endpoint values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum SegmentControl {
    Constant([f64; 3]),
    Linear {
        t0: f64,
        t1: f64,
        u0: [f64; 3],
        u1: [f64; 3],
    },
}

impl SegmentControl {
    #[inline]
    pub(crate) fn at(&self, t: f64) -> [f64; 3] {
        match *self {
            SegmentControl::Constant(u) => u,
            SegmentControl::Linear { t0, t1, u0, u1 } => {
                let w = (t - t0) / (t1 - t0);
                std::array::from_fn(|i| (u0[i] + w * (u1[i] - u0[i])).max(0.0))
            }
        }
    }
}

impl Regimen {
    pub fn constant(dose: DoseVector) -> Self {
        Regimen::Constant { dose }
    }

    pub fn zero() -> Self {
        Regimen::constant(DoseVector::ZERO)
    }

    pub fn piecewise(period: f64, doses: Vec<DoseVector>) -> Self {
        Regimen::PiecewiseConstant { period, doses }
    }

    pub fn sampled(times: Vec<f64>, doses: Vec<DoseVector>) -> Self {
        Regimen::Sampled {
            times,
            doses,
            interpolation: Interpolation::Linear,
        }
    }

    pub fn method_name(&self) -> &'static str {
        match self {
            Regimen::Constant { .. } => "constant",
            Regimen::PiecewiseConstant { .. } => "piecewise_constant",
            Regimen::Sampled { .. } => "sampled",
        }
    }

    /// End of the regimen's own time domain; constant regimens have none.
    pub fn horizon(&self) -> Option<f64> {
        match self {
            Regimen::Constant { .. } => None,
            Regimen::PiecewiseConstant { period, doses } => Some(period * doses.len() as f64),
            Regimen::Sampled { times, .. } => times.last().copied(),
        }
    }

    /// Checks bounds and that the regimen covers `[0, horizon]`.
    pub fn validate(&self, horizon: f64, max: &DoseVector) -> Result<()> {
        match self {
            Regimen::Constant { dose } => dose.validate_within(max),
            Regimen::PiecewiseConstant { period, doses } => {
                if !(*period > 0.0) || !period.is_finite() {
                    return Err(Error::InvalidRegimen(format!(
                        "period must be > 0, got {period}"
                    )));
                }
                if doses.is_empty() {
                    return Err(Error::InvalidRegimen("no periods".into()));
                }
                let covered = period * doses.len() as f64;
                if (covered - horizon).abs() > TILE_TOL * horizon.max(1.0) {
                    return Err(Error::InvalidRegimen(format!(
                        "{} periods of {period} days cover [0, {covered}], not [0, {horizon}]",
                        doses.len()
                    )));
                }
                doses.iter().try_for_each(|d| d.validate_within(max))
            }
            Regimen::Sampled { times, doses, .. } => {
                if times.len() < 2 || times.len() != doses.len() {
                    return Err(Error::InvalidRegimen(format!(
                        "sampled regimen needs >= 2 nodes with one dose each (got {} times, {} doses)",
                        times.len(),
                        doses.len()
                    )));
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::InvalidRegimen(
                        "mesh must be strictly increasing".into(),
                    ));
                }
                let slack = TILE_TOL * horizon.max(1.0);
                if times[0].abs() > slack || times[times.len() - 1] < horizon - slack {
                    return Err(Error::InvalidRegimen(format!(
                        "mesh [{}, {}] does not cover [0, {horizon}]",
                        times[0],
                        times[times.len() - 1]
                    )));
                }
                doses.iter().try_for_each(|d| d.validate_within(max))
            }
        }
    }

    /// Dose in effect at `t`. Piecewise regimens are right-continuous at switch times.
    pub fn dose_at(&self, t: f64) -> Result<DoseVector> {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::OutOfDomain {
                t,
                horizon: self.horizon().unwrap_or(f64::INFINITY),
            });
        }
        match self {
            Regimen::Constant { dose } => Ok(*dose),
            Regimen::PiecewiseConstant { period, doses } => {
                let end = period * doses.len() as f64;
                if t > end || doses.is_empty() {
                    return Err(Error::OutOfDomain { t, horizon: end });
                }
                let k = ((t / period).floor() as usize).min(doses.len() - 1);
                Ok(doses[k])
            }
            Regimen::Sampled {
                times,
                doses,
                interpolation,
            } => {
                let end = *times
                    .last()
                    .ok_or_else(|| Error::InvalidRegimen("empty mesh".into()))?;
                if t < times[0] || t > end {
                    return Err(Error::OutOfDomain { t, horizon: end });
                }
                // index of the last node <= t
                let k = times.partition_point(|&s| s <= t).saturating_sub(1);
                if k + 1 >= times.len() || times[k] == t {
                    return Ok(doses[k]);
                }
                Ok(match interpolation {
                    Interpolation::Step => doses[k],
                    Interpolation::Linear => DoseVector(
                        SegmentControl::Linear {
                            t0: times[k],
                            t1: times[k + 1],
                            u0: doses[k].0,
                            u1: doses[k + 1].0,
                        }
                        .at(t),
                    ),
                })
            }
        }
    }

    /// Interior times where the control (or its slope) may jump.
    pub fn switch_times(&self, horizon: f64) -> Vec<f64> {
        match self {
            Regimen::Constant { .. } => Vec::new(),
            Regimen::PiecewiseConstant { period, doses } => (1..doses.len())
                .map(|k| k as f64 * period)
                .filter(|&t| t < horizon)
                .collect(),
            Regimen::Sampled { times, .. } => times
                .iter()
                .copied()
                .filter(|&t| t > 0.0 && t < horizon)
                .collect(),
        }
    }

    /// Control on `[t0, t1]`, which must not straddle a switch time.
    pub(crate) fn segment_control(&self, t0: f64, t1: f64) -> SegmentControl {
        let mid = 0.5 * (t0 + t1);
        match self {
            Regimen::Constant { dose } => SegmentControl::Constant(dose.0),
            Regimen::PiecewiseConstant { period, doses } => {
                let k = ((mid / period).floor() as usize).min(doses.len() - 1);
                SegmentControl::Constant(doses[k].0)
            }
            Regimen::Sampled {
                times,
                doses,
                interpolation,
            } => {
                let k = times
                    .partition_point(|&s| s <= mid)
                    .saturating_sub(1)
                    .min(times.len() - 2);
                match interpolation {
                    Interpolation::Step => SegmentControl::Constant(doses[k].0),
                    Interpolation::Linear => SegmentControl::Linear {
                        t0: times[k],
                        t1: times[k + 1],
                        u0: doses[k].0,
                        u1: doses[k + 1].0,
                    },
                }
            }
        }
    }

    /// Exact mean dose of each drug over consecutive windows of length `period`
    /// tiling `[0, horizon]`.
    pub fn period_means(&self, period: f64, horizon: f64) -> Result<Vec<DoseVector>> {
        let count = period_count(period, horizon)?;
        (0..count)
            .map(|k| {
                let a = k as f64 * period;
                let b = if k + 1 == count { horizon } else { a + period };
                self.window_mean(a, b)
            })
            .collect()
    }

    fn window_mean(&self, a: f64, b: f64) -> Result<DoseVector> {
        let width = b - a;
        let mut acc = [0.0; 3];
        let mut add = |len: f64, value: [f64; 3]| {
            let w = len / width;
            for (s, v) in acc.iter_mut().zip(value) {
                *s += w * v;
            }
        };
        match self {
            Regimen::Constant { dose } => add(width, dose.0),
            Regimen::PiecewiseConstant { period, doses } => {
                for (k, d) in doses.iter().enumerate() {
                    let lo = (k as f64 * period).max(a);
                    let hi = ((k + 1) as f64 * period).min(b);
                    if hi > lo {
                        add(hi - lo, d.0);
                    }
                }
            }
            Regimen::Sampled {
                times,
                doses,
                interpolation,
            } => {
                for k in 0..times.len() - 1 {
                    let lo = times[k].max(a);
                    let hi = times[k + 1].min(b);
                    if hi <= lo {
                        continue;
                    }
                    let value = match interpolation {
                        Interpolation::Step => doses[k].0,
                        Interpolation::Linear => {
                            // linear piece: mean over [lo, hi] is its midpoint value
                            SegmentControl::Linear {
                                t0: times[k],
                                t1: times[k + 1],
                                u0: doses[k].0,
                                u1: doses[k + 1].0,
                            }
                            .at(0.5 * (lo + hi))
                        }
                    };
                    add(hi - lo, value);
                }
            }
        }
        Ok(DoseVector(acc))
    }
}

pub(crate) fn period_count(period: f64, horizon: f64) -> Result<usize> {
    if !(period > 0.0) || !(horizon > 0.0) {
        return Err(Error::InvalidRegimen(format!(
            "period ({period}) and horizon ({horizon}) must be > 0"
        )));
    }
    let n = (horizon / period).round();
    if n < 1.0 || (n * period - horizon).abs() > TILE_TOL * horizon {
        return Err(Error::InvalidRegimen(format!(
            "horizon {horizon} is not a whole number of {period}-day periods"
        )));
    }
    Ok(n as usize)
}

/// Allowed concentration levels per drug.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoseGrid {
    pub pomalidomide: Vec<f64>,
    pub dexamethasone: Vec<f64>,
    pub elotuzumab: Vec<f64>,
}

impl Default for DoseGrid {
    fn default() -> Self {
        Self {
            pomalidomide: vec![0.0, 51.2325, 102.4650, 153.6975, 204.9300],
            dexamethasone: vec![0.0, 0.8831, 1.7663, 2.6494, 3.5325],
            elotuzumab: vec![0.0, 90.0],
        }
    }
}

impl DoseGrid {
    pub fn new(levels: [Vec<f64>; 3]) -> Self {
        let [pomalidomide, dexamethasone, elotuzumab] = levels;
        Self {
            pomalidomide,
            dexamethasone,
            elotuzumab,
        }
    }

    pub fn levels(&self, drug: usize) -> &[f64] {
        match drug {
            0 => &self.pomalidomide,
            1 => &self.dexamethasone,
            2 => &self.elotuzumab,
            _ => panic!("drug index {drug} out of range"),
        }
    }

    pub fn validate(&self, max: &DoseVector) -> Result<()> {
        for drug in 0..3 {
            let levels = self.levels(drug);
            if levels.is_empty() {
                return Err(Error::EmptyGrid(drug + 1));
            }
            if levels.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::InvalidRegimen(format!(
                    "grid levels for drug {} must be strictly ascending",
                    drug + 1
                )));
            }
            if levels[0] < 0.0 || levels[levels.len() - 1] > max.0[drug] {
                return Err(Error::InvalidRegimen(format!(
                    "grid levels for drug {} leave [0, {}]",
                    drug + 1,
                    max.0[drug]
                )));
            }
        }
        Ok(())
    }

    pub fn candidate_count(&self) -> usize {
        (0..3).map(|d| self.levels(d).len()).product()
    }

    /// Closest allowed level; ties go to the lower dose.
    pub fn nearest(&self, drug: usize, value: f64) -> Result<f64> {
        let levels = self.levels(drug);
        let mut best = *levels.first().ok_or(Error::EmptyGrid(drug + 1))?;
        let mut best_gap = (value - best).abs();
        for &level in &levels[1..] {
            let gap = (value - level).abs();
            if gap < best_gap {
                best = level;
                best_gap = gap;
            }
        }
        Ok(best)
    }

    /// Widest spacing between adjacent levels of `drug`.
    pub fn largest_gap(&self, drug: usize) -> f64 {
        self.levels(drug)
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }
}

/// Every combination of grid levels, pomalidomide varying slowest.
pub fn enumerate_grid(grid: &DoseGrid) -> Vec<DoseVector> {
    let mut out = Vec::with_capacity(grid.candidate_count());
    for &a in &grid.pomalidomide {
        for &b in &grid.dexamethasone {
            for &c in &grid.elotuzumab {
                out.push(DoseVector::new(a, b, c));
            }
        }
    }
    out
}

/// Averages each drug over every period and snaps the mean to the nearest grid level.
pub fn pc_approximate(regimen: &Regimen, period: f64, grid: &DoseGrid) -> Result<Regimen> {
    let horizon = regimen.horizon().ok_or_else(|| {
        Error::InvalidRegimen("a constant regimen has no horizon to partition".into())
    })?;
    for drug in 0..3 {
        if grid.levels(drug).is_empty() {
            return Err(Error::EmptyGrid(drug + 1));
        }
    }
    let means = regimen.period_means(period, horizon)?;
    let doses = means
        .iter()
        .map(|mean| {
            let mut snapped = [0.0; 3];
            for (drug, s) in snapped.iter_mut().enumerate() {
                *s = grid.nearest(drug, mean.0[drug])?;
            }
            Ok(DoseVector(snapped))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Regimen::piecewise(period, doses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn umax() -> DoseVector {
        DoseVector::new(204.93, 3.5325, 95.0)
    }

    #[test]
    fn dose_at_conventions() {
        let c = DoseVector::new(1.0, 2.0, 3.0);
        assert_eq!(Regimen::constant(c).dose_at(123.0).unwrap(), c);

        let d: Vec<_> = (0..4)
            .map(|k| DoseVector::new(k as f64, 0.0, 0.0))
            .collect();
        let pc = Regimen::piecewise(90.0, d.clone());
        assert_eq!(pc.dose_at(90.0).unwrap(), d[1]);
        assert_eq!(pc.dose_at(89.999).unwrap(), d[0]);
        assert_eq!(pc.dose_at(360.0).unwrap(), d[3]);
        assert!(matches!(pc.dose_at(360.5), Err(Error::OutOfDomain { .. })));
        assert!(pc.dose_at(-1.0).is_err());

        let s = Regimen::sampled(
            vec![0.0, 1.0, 2.0],
            vec![
                DoseVector::new(0.0, 1.0, 2.0),
                DoseVector::new(10.0, 0.5, 2.0),
                DoseVector::new(4.0, 0.0, 0.0),
            ],
        );
        assert_eq!(s.dose_at(1.0).unwrap(), DoseVector::new(10.0, 0.5, 2.0));
        assert_eq!(s.dose_at(0.5).unwrap(), DoseVector::new(5.0, 0.75, 2.0));
        assert_eq!(s.dose_at(2.0).unwrap(), DoseVector::new(4.0, 0.0, 0.0));
    }

    #[test]
    fn enumerate_default_grid() {
        let all = enumerate_grid(&DoseGrid::default());
        assert_eq!(all.len(), 50);
        assert_eq!(all[0], DoseVector::ZERO);
        assert_eq!(all[1], DoseVector::new(0.0, 0.0, 90.0));
        assert_eq!(all[49], DoseVector::new(204.93, 3.5325, 90.0));
    }

    #[test]
    fn enumerate_small_grids() {
        let single = DoseGrid::new([vec![0.0], vec![0.0], vec![0.0]]);
        assert_eq!(enumerate_grid(&single), vec![DoseVector::ZERO]);
        let two = DoseGrid::new([vec![0.0, 1.0], vec![0.0, 2.0], vec![0.0, 3.0]]);
        let all = enumerate_grid(&two);
        assert_eq!(all.len(), 8);
        let expected: Vec<_> = [
            [0., 0., 0.],
            [0., 0., 3.],
            [0., 2., 0.],
            [0., 2., 3.],
            [1., 0., 0.],
            [1., 0., 3.],
            [1., 2., 0.],
            [1., 2., 3.],
        ]
        .into_iter()
        .map(DoseVector)
        .collect();
        assert_eq!(all, expected);
    }

    #[test]
    fn nearest_level_rounding() {
        let g = DoseGrid::default();
        assert_eq!(g.nearest(0, 0.6 * 204.93).unwrap(), 102.465);
        // exact midpoint between 0 and 90 goes down
        assert_eq!(g.nearest(2, 45.0).unwrap(), 0.0);
        assert_eq!(g.nearest(2, 45.000001).unwrap(), 90.0);
        assert_eq!(g.nearest(1, 100.0).unwrap(), 3.5325);
    }

    #[test]
    fn approximation_of_constant_fraction() {
        let times: Vec<f64> = (0..=360).map(f64::from).collect();
        let doses = vec![DoseVector::new(0.6 * 204.93, 0.0, 0.0); times.len()];
        let approx =
            pc_approximate(&Regimen::sampled(times, doses), 90.0, &DoseGrid::default()).unwrap();
        match approx {
            Regimen::PiecewiseConstant { period, doses } => {
                assert_eq!(period, 90.0);
                assert_eq!(doses, vec![DoseVector::new(102.465, 0.0, 0.0); 4]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn approximation_of_grid_level_is_that_level() {
        let level = DoseVector::new(153.6975, 2.6494, 90.0);
        let times: Vec<f64> = (0..=360).map(|k| k as f64).collect();
        let s = Regimen::sampled(times, vec![level; 361]);
        let approx = pc_approximate(&s, 90.0, &DoseGrid::default()).unwrap();
        assert_eq!(approx, Regimen::piecewise(90.0, vec![level; 4]));
    }

    #[test]
    fn approximation_errors() {
        let empty = DoseGrid::new([vec![], vec![0.0], vec![0.0]]);
        let s = Regimen::sampled(vec![0.0, 360.0], vec![DoseVector::ZERO; 2]);
        assert!(matches!(
            pc_approximate(&s, 90.0, &empty),
            Err(Error::EmptyGrid(1))
        ));
        assert!(pc_approximate(&s, 70.0, &DoseGrid::default()).is_err());
        assert!(pc_approximate(&Regimen::zero(), 90.0, &DoseGrid::default()).is_err());
    }

    #[test]
    fn validation_rejects_bad_tiling() {
        let r = Regimen::piecewise(90.0, vec![DoseVector::ZERO; 3]);
        let msg = r.validate(360.0, &umax()).unwrap_err().to_string();
        assert!(msg.contains("not [0, 360]"), "{msg}");
        let r = Regimen::piecewise(90.0, vec![DoseVector::new(300.0, 0.0, 0.0); 4]);
        assert!(r.validate(360.0, &umax()).is_err());
        let r = Regimen::sampled(vec![0.0, 100.0], vec![DoseVector::ZERO; 2]);
        assert!(r.validate(360.0, &umax()).is_err());
    }

    #[test]
    fn grid_validation() {
        DoseGrid::default().validate(&umax()).unwrap();
        let bad = DoseGrid::new([vec![0.0, 0.0], vec![0.0], vec![0.0]]);
        assert!(bad.validate(&umax()).is_err());
        let over = DoseGrid::new([vec![0.0], vec![0.0], vec![0.0, 95.5]]);
        assert!(over.validate(&umax()).is_err());
    }

    fn arb_sampled() -> impl Strategy<Value = Regimen> {
        proptest::collection::vec((0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64), 37).prop_map(|v| {
            let max = umax();
            let times = (0..37).map(|k| k as f64 * 10.0).collect();
            let doses = v
                .into_iter()
                .map(|(a, b, c)| DoseVector::new(a * max.0[0], b * max.0[1], c * max.0[2]))
                .collect();
            Regimen::sampled(times, doses)
        })
    }

    proptest! {
        #[test]
        fn approximation_stays_close_and_in_bounds(s in arb_sampled()) {
            let grid = DoseGrid::default();
            let approx = pc_approximate(&s, 90.0, &grid).unwrap();
            approx.validate(360.0, &umax()).unwrap();
            let means = s.period_means(90.0, 360.0).unwrap();
            let Regimen::PiecewiseConstant { doses, .. } = &approx else { unreachable!() };
            for (mean, chosen) in means.iter().zip(doses) {
                for drug in 0..3 {
                    let gap = grid.largest_gap(drug);
                    prop_assert!((mean.0[drug] - chosen.0[drug]).abs() <= 0.5 * gap + 1e-12);
                }
            }
        }

        #[test]
        fn approximation_idempotent_on_grid(idx in proptest::collection::vec(0usize..50, 4)) {
            let grid = DoseGrid::default();
            let all = enumerate_grid(&grid);
            let pc = Regimen::piecewise(90.0, idx.iter().map(|&i| all[i]).collect());
            let once = pc_approximate(&pc, 90.0, &grid).unwrap();
            prop_assert_eq!(&once, &pc);
            prop_assert_eq!(pc_approximate(&once, 90.0, &grid).unwrap(), once);
        }
    }
}
