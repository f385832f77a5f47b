//! Dormand-Prince 5(4) with FSAL, PI-free step control and the 4th-order continuous
//! extension. Works on fixed-size arrays so the hot path never allocates.

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    /// Overrides the automatic choice of the first step.
    pub first_step: Option<f64>,
    pub max_steps: usize,
    /// Only the leading `controlled` components enter the error norm.
    pub controlled: usize,
}

/// One accepted step with its continuous extension.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DenseStep<const N: usize> {
    pub t: f64,
    pub h: f64,
    pub coeffs: [[f64; N]; 5],
}

impl<const N: usize> DenseStep<N> {
    pub fn end(&self) -> f64 {
        self.t + self.h
    }

    #[inline]
    pub fn eval(&self, t: f64) -> [f64; N] {
        let theta = (t - self.t) / self.h;
        let theta1 = 1.0 - theta;
        let c = &self.coeffs;
        std::array::from_fn(|i| {
            c[0][i] + theta * (c[1][i] + theta1 * (c[2][i] + theta * (c[3][i] + theta1 * c[4][i])))
        })
    }
}

pub(crate) trait StepSink<const N: usize> {
    /// Whether [`StepSink::accept`] needs the dense coefficients.
    const DENSE: bool;

    fn accept(&mut self, t: f64, y: &[f64; N], dense: Option<&DenseStep<N>>);
}

/// Discards everything; the caller only wants the endpoint.
pub(crate) struct EndpointOnly;

impl<const N: usize> StepSink<N> for EndpointOnly {
    const DENSE: bool = false;

    #[inline]
    fn accept(&mut self, _t: f64, _y: &[f64; N], _dense: Option<&DenseStep<N>>) {}
}

#[inline]
fn error_norm<const N: usize>(
    err: &[f64; N],
    y0: &[f64; N],
    y1: &[f64; N],
    ctl: &StepControl,
) -> f64 {
    let n = ctl.controlled.min(N);
    let mut acc = 0.0;
    for i in 0..n {
        let sc = ctl.atol + ctl.rtol * y0[i].abs().max(y1[i].abs());
        let r = err[i] / sc;
        acc += r * r;
    }
    (acc / n as f64).sqrt()
}

#[inline]
fn scaled_norm<const N: usize>(v: &[f64; N], y: &[f64; N], ctl: &StepControl) -> f64 {
    let n = ctl.controlled.min(N);
    let mut acc = 0.0;
    for i in 0..n {
        let r = v[i] / (ctl.atol + ctl.rtol * y[i].abs());
        acc += r * r;
    }
    (acc / n as f64).sqrt()
}

#[inline]
fn axpy<const N: usize>(y: &[f64; N], terms: &[(f64, &[f64; N])]) -> [f64; N] {
    std::array::from_fn(|i| {
        let mut s = 0.0;
        for (c, k) in terms {
            s += c * k[i];
        }
        y[i] + s
    })
}

fn initial_step<const N: usize, F>(
    f: &F,
    t0: f64,
    y0: &[f64; N],
    f0: &[f64; N],
    span: f64,
    ctl: &StepControl,
) -> f64
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let d0 = scaled_norm(y0, y0, ctl);
    let d1 = scaled_norm(f0, y0, ctl);
    let mut h0 = if d0 < 1e-10 || d1 < 1e-10 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h0 = h0.min(ctl.max_step).min(span);
    let y1: [f64; N] = std::array::from_fn(|i| y0[i] + h0 * f0[i]);
    let f1 = f(t0 + h0, &y1);
    let diff: [f64; N] = std::array::from_fn(|i| f1[i] - f0[i]);
    let d2 = scaled_norm(&diff, y0, ctl) / h0;
    let dm = d1.max(d2);
    let h1 = if dm <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dm).powf(0.2)
    };
    (100.0 * h0).min(h1).min(ctl.max_step).min(span)
}

/// Integrates `y' = f(t, y)` from `t0` to `t1 >= t0`, landing exactly on `t1`.
pub(crate) fn integrate<const N: usize, F, S>(
    f: &F,
    t0: f64,
    y0: [f64; N],
    t1: f64,
    ctl: &StepControl,
    sink: &mut S,
) -> Result<[f64; N]>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
    S: StepSink<N>,
{
    let span = t1 - t0;
    if span <= 0.0 {
        return Ok(y0);
    }
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    let mut h = match ctl.first_step {
        Some(h0) => h0.min(ctl.max_step).min(span),
        None => initial_step(f, t, &y, &k1, span, ctl),
    };
    let mut last_rejected = false;
    let mut saw_nonfinite = false;
    let h_floor = 1e-14 * t0.abs().max(t1.abs()).max(1.0);

    for _ in 0..ctl.max_steps {
        let remaining = t1 - t;
        let last = h >= remaining * (1.0 - 1e-12);
        if last {
            h = remaining;
        }
        if h < h_floor && !last {
            return Err(if saw_nonfinite {
                Error::Divergence { t }
            } else {
                Error::StepUnderflow { t }
            });
        }

        let k2 = f(t + C2 * h, &axpy(&y, &[(h * A21, &k1)]));
        let k3 = f(t + C3 * h, &axpy(&y, &[(h * A31, &k1), (h * A32, &k2)]));
        let k4 = f(
            t + C4 * h,
            &axpy(&y, &[(h * A41, &k1), (h * A42, &k2), (h * A43, &k3)]),
        );
        let k5 = f(
            t + C5 * h,
            &axpy(
                &y,
                &[
                    (h * A51, &k1),
                    (h * A52, &k2),
                    (h * A53, &k3),
                    (h * A54, &k4),
                ],
            ),
        );
        let t_new = if last { t1 } else { t + h };
        let k6 = f(
            t_new,
            &axpy(
                &y,
                &[
                    (h * A61, &k1),
                    (h * A62, &k2),
                    (h * A63, &k3),
                    (h * A64, &k4),
                    (h * A65, &k5),
                ],
            ),
        );
        let y_new = axpy(
            &y,
            &[
                (h * A71, &k1),
                (h * A73, &k3),
                (h * A74, &k4),
                (h * A75, &k5),
                (h * A76, &k6),
            ],
        );
        let k7 = f(t_new, &y_new);
        let err: [f64; N] = std::array::from_fn(|i| {
            h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
        });
        let err_norm = error_norm(&err, &y, &y_new, ctl);

        if !err_norm.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
            saw_nonfinite = true;
            last_rejected = true;
            h *= FAC_MIN;
            continue;
        }

        if err_norm <= 1.0 {
            if S::DENSE {
                let mut coeffs = [[0.0; N]; 5];
                for i in 0..N {
                    let ydiff = y_new[i] - y[i];
                    let bspl = h * k1[i] - ydiff;
                    coeffs[0][i] = y[i];
                    coeffs[1][i] = ydiff;
                    coeffs[2][i] = bspl;
                    coeffs[3][i] = ydiff - h * k7[i] - bspl;
                    coeffs[4][i] = h
                        * (D1 * k1[i]
                            + D3 * k3[i]
                            + D4 * k4[i]
                            + D5 * k5[i]
                            + D6 * k6[i]
                            + D7 * k7[i]);
                }
                let step = DenseStep { t, h, coeffs };
                sink.accept(t_new, &y_new, Some(&step));
            } else {
                sink.accept(t_new, &y_new, None);
            }
            t = t_new;
            y = y_new;
            k1 = k7;
            if last {
                return Ok(y);
            }
            let mut fac = SAFETY * err_norm.max(1e-12).powf(-0.2);
            fac = fac.clamp(FAC_MIN, if last_rejected { 1.0 } else { FAC_MAX });
            h = (h * fac).min(ctl.max_step);
            last_rejected = false;
        } else {
            let fac = (SAFETY * err_norm.powf(-0.2)).max(FAC_MIN);
            h *= fac;
            last_rejected = true;
        }
    }
    Err(Error::TooManySteps { t })
}
