//! Autonomous ODE integrators: classical RK4 and the Dormand–Prince 5(4) pair.

use std::ops::{Add, Mul};

use crate::error::{Error, Result};

/// Smallest step the adaptive integrator accepts before giving up.
pub const MIN_ADAPTIVE_STEP: f64 = 1e-14;

/// State of an autonomous system `y' = f(y)`.
pub trait OdeState: Copy + Add<Output = Self> + Mul<f64, Output = Self> {
    /// Scaled max-norm of `self` (an error estimate) against the step endpoints.
    fn error_norm(&self, start: &Self, end: &Self, abs_tol: f64, rel_tol: f64) -> f64;
}

fn rk4_increment<S, F>(rhs: &mut F, y: S, h: f64) -> Result<S>
where
    S: OdeState,
    F: FnMut(&S) -> Result<S>,
{
    let k1 = rhs(&y)?;
    let k2 = rhs(&(y + k1 * (0.5 * h)))?;
    let k3 = rhs(&(y + k2 * (0.5 * h)))?;
    let k4 = rhs(&(y + k3 * h))?;
    Ok((k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

pub fn rk4_step<S, F>(rhs: &mut F, y: S, h: f64) -> Result<S>
where
    S: OdeState,
    F: FnMut(&S) -> Result<S>,
{
    Ok(y + rk4_increment(rhs, y, h)?)
}

/// `steps` equal RK4 steps covering `[0, span]`, with compensated summation
/// of the increments.
pub fn rk4<S, F>(mut rhs: F, mut y: S, span: f64, steps: usize) -> Result<S>
where
    S: OdeState,
    F: FnMut(&S) -> Result<S>,
{
    if steps == 0 {
        return Ok(y);
    }
    let h = span / steps as f64;
    let mut carry: Option<S> = None;
    for _ in 0..steps {
        let mut inc = rk4_increment(&mut rhs, y, h)?;
        if let Some(c) = carry {
            inc = inc + c * -1.0;
        }
        let next = y + inc;
        carry = Some((next + y * -1.0) + inc * -1.0);
        y = next;
    }
    Ok(y)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptiveConfig {
    pub initial_step: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_steps: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AdaptiveStats {
    pub accepted: usize,
    pub rejected: usize,
}

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Fifth-order weights minus the embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates `y' = f(y)` from `0` to `t_end` (either sign) with Dormand–Prince 5(4).
///
/// `observer` sees every accepted `(t, y)`, starting with `(0, y0)`.
pub fn dopri5<S, F, O>(
    mut rhs: F,
    y0: S,
    t_end: f64,
    cfg: &AdaptiveConfig,
    mut observer: O,
) -> Result<(S, AdaptiveStats)>
where
    S: OdeState,
    F: FnMut(&S) -> Result<S>,
    O: FnMut(f64, &S),
{
    let dir = if t_end < 0.0 { -1.0 } else { 1.0 };
    let span = t_end.abs();
    let mut f = |y: &S| -> Result<S> { Ok(rhs(y)? * dir) };

    let mut stats = AdaptiveStats::default();
    let mut y = y0;
    let mut t = 0.0;
    observer(0.0, &y);
    if span == 0.0 {
        return Ok((y, stats));
    }
    let mut h = cfg.initial_step.min(span);
    let mut k = [y; 7];
    k[0] = f(&y)?;
    while t < span {
        if stats.accepted + stats.rejected >= cfg.max_steps {
            return Err(Error::StepUnderflow {
                t: dir * t,
                min_step: MIN_ADAPTIVE_STEP,
            });
        }
        let last = t + h >= span;
        if last {
            h = span - t;
        }
        let mut y_new = y;
        for stage in 1..7 {
            let mut acc = y;
            for (j, kj) in k.iter().enumerate().take(stage) {
                if A[stage][j] != 0.0 {
                    acc = acc + *kj * (h * A[stage][j]);
                }
            }
            k[stage] = f(&acc)?;
            if stage == 6 {
                // FSAL: the last stage sits at the fifth-order solution.
                y_new = acc;
            }
        }
        let mut err = k[0] * (h * E[0]);
        for j in 2..7 {
            err = err + k[j] * (h * E[j]);
        }
        let err_norm = err.error_norm(&y, &y_new, cfg.abs_tol, cfg.rel_tol);
        if err_norm <= 1.0 {
            t = if last { span } else { t + h };
            y = y_new;
            k[0] = k[6];
            stats.accepted += 1;
            observer(dir * t, &y);
        } else {
            stats.rejected += 1;
        }
        let factor = if err_norm == 0.0 {
            5.0
        } else {
            (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
        if h < MIN_ADAPTIVE_STEP && t < span {
            return Err(Error::StepUnderflow {
                t: dir * t,
                min_step: MIN_ADAPTIVE_STEP,
            });
        }
    }
    Ok((y, stats))
}
