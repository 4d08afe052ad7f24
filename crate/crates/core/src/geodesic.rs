//! Geodesic spray, the Reeb field of the Hilbert form on `SM`, and real-time
//! integration of unit-speed geodesics.
//!
//! Coordinates on `SM` are `(x^1, .., x^n, φ)` for `n = 2` and `x` alone for
//! `n = 1`, where the ray is a fixed sign.

use std::ops::{Add, Mul};

use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finsler::{with_dim, Field, FinslerMetric, Ray, SpherePoint};
use crate::ode::{self, AdaptiveConfig, OdeState};

/// Condition estimate above which `g` counts as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

/// Smallest singular value of the Reeb system treated as degenerate.
const DEGENERATE_CONTACT: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct GeodesicState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationMethod {
    Rk4,
    Dopri5,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub method: IntegrationMethod,
    /// Fixed step for RK4, initial step for the adaptive pair.
    pub step: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: IntegrationMethod::Dopri5,
            step: 1e-3,
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            max_steps: 1_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn rk4(step: f64) -> Self {
        Self {
            method: IntegrationMethod::Rk4,
            step,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.step) || !positive(self.abs_tol) || !positive(self.rel_tol) {
            return Err(Error::InvalidArgument(
                "integrator step and tolerances must be positive".into(),
            ));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidArgument("max_steps must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn adaptive(&self) -> AdaptiveConfig {
        AdaptiveConfig {
            initial_step: self.step,
            abs_tol: self.abs_tol,
            rel_tol: self.rel_tol,
            max_steps: self.max_steps,
        }
    }
}

/// Phase-space state `(x, v)` over `f64` or `Complex64`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct PhaseState<T: Field, const N: usize> {
    pub x: SVector<T, N>,
    pub v: SVector<T, N>,
}

impl<T: Field, const N: usize> Add for PhaseState<T, N> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            x: self.x + o.x,
            v: self.v + o.v,
        }
    }
}

impl<T: Field, const N: usize> Mul<f64> for PhaseState<T, N> {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        let s = T::from_real(s);
        Self {
            x: self.x * s,
            v: self.v * s,
        }
    }
}

impl<T: Field, const N: usize> OdeState for PhaseState<T, N> {
    fn error_norm(&self, a: &Self, b: &Self, atol: f64, rtol: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..N {
            for (e, p, q) in [(self.x[i], a.x[i], b.x[i]), (self.v[i], a.v[i], b.v[i])] {
                let scale = atol + rtol * p.modulus().max(q.modulus());
                worst = worst.max(e.modulus() / scale);
            }
        }
        worst
    }
}

/// `ẍ = −2G(x, v)`.
pub(crate) fn spray_acceleration<T: Field, const N: usize>(
    metric: &FinslerMetric,
    x: &SVector<T, N>,
    v: &SVector<T, N>,
) -> Result<SVector<T, N>> {
    let jet = metric.jet(x, v)?;
    let g = jet.tensor();
    let inv = g.try_inverse().ok_or(Error::SingularTensor {
        condition: f64::INFINITY,
    })?;
    let condition = frobenius(&g) * frobenius(&inv);
    if !(condition <= SINGULAR_CONDITION) {
        return Err(Error::SingularTensor { condition });
    }
    let rhs = jet.f2_xv().transpose() * v - jet.f2_x();
    // −2G = −½ g⁻¹ (F²_xv^T v − F²_x)
    Ok(inv * rhs * T::from_real(-0.5))
}

fn frobenius<T: Field, const N: usize>(m: &SMatrix<T, N, N>) -> f64 {
    m.iter().map(|c| c.modulus().powi(2)).sum::<f64>().sqrt()
}

pub(crate) fn phase_rhs<T: Field, const N: usize>(
    metric: &FinslerMetric,
    y: &PhaseState<T, N>,
) -> Result<PhaseState<T, N>> {
    Ok(PhaseState {
        x: y.v,
        v: spray_acceleration(metric, &y.x, &y.v)?,
    })
}

fn check_dim(metric: &FinslerMetric, len: usize) -> Result<()> {
    if len != metric.dim() {
        return Err(Error::DimensionMismatch {
            expected: metric.dim(),
            found: len,
        });
    }
    Ok(())
}

fn check_point(metric: &FinslerMetric, p: &SpherePoint) -> Result<()> {
    check_dim(metric, p.dim())?;
    match (p.dim(), p.ray) {
        (1, Ray::Positive | Ray::Negative) | (2, Ray::Angle(_)) => Ok(()),
        _ => Err(Error::InvalidArgument(
            "ray kind does not match the manifold dimension".into(),
        )),
    }
}

/// Derivative of the state under the spray: `(v, −2G)`.
pub fn spray_rhs(metric: &FinslerMetric, state: &GeodesicState) -> Result<GeodesicState> {
    check_dim(metric, state.x.len())?;
    check_dim(metric, state.v.len())?;
    with_dim!(metric.dim(), N => {
        let y = PhaseState::<f64, N> {
            x: SVector::from_column_slice(&state.x),
            v: SVector::from_column_slice(&state.v),
        };
        let d = phase_rhs(metric, &y)?;
        Ok(GeodesicState { x: d.x.iter().copied().collect(), v: d.v.iter().copied().collect() })
    })
}

/// Base point of `p` with the unit-`F` vector of its ray.
pub fn initial_state(metric: &FinslerMetric, p: &SpherePoint) -> Result<GeodesicState> {
    check_point(metric, p)?;
    let e = p.direction();
    let f = metric.eval_f(&p.base, &e)?;
    Ok(GeodesicState {
        x: p.base.clone(),
        v: e.iter().map(|c| c / f).collect(),
    })
}

pub(crate) fn initial_phase<T: Field, const N: usize>(
    metric: &FinslerMetric,
    p: &SpherePoint,
) -> Result<PhaseState<T, N>> {
    let s = initial_state(metric, p)?;
    Ok(PhaseState {
        x: SVector::from_iterator(s.x.iter().map(|&c| T::from_real(c))),
        v: SVector::from_iterator(s.v.iter().map(|&c| T::from_real(c))),
    })
}

/// Integrates from `y` over time `t` (either sign) with `cfg`.
pub(crate) fn advance<T: Field, const N: usize>(
    metric: &FinslerMetric,
    y: PhaseState<T, N>,
    t: f64,
    cfg: &IntegratorConfig,
    mut observer: impl FnMut(f64, &PhaseState<T, N>),
) -> Result<PhaseState<T, N>> {
    match cfg.method {
        IntegrationMethod::Rk4 => {
            let steps = (t.abs() / cfg.step).ceil() as usize;
            observer(0.0, &y);
            let mut rhs = |y: &PhaseState<T, N>| phase_rhs(metric, y);
            let mut state = y;
            if steps > 0 {
                let h = t / steps as f64;
                for k in 1..=steps {
                    state = ode::rk4_step(&mut rhs, state, h)?;
                    observer(h * k as f64, &state);
                }
            }
            Ok(state)
        }
        IntegrationMethod::Dopri5 => {
            let (end, _) = ode::dopri5(
                |y: &PhaseState<T, N>| phase_rhs(metric, y),
                y,
                t,
                &cfg.adaptive(),
                observer,
            )?;
            Ok(end)
        }
    }
}

/// `γ_p(t)` with `γ(0) = base(p)` and unit-`F` initial velocity along the ray.
pub fn integrate_geodesic(
    metric: &FinslerMetric,
    p: &SpherePoint,
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<GeodesicState> {
    integrate_geodesic_observed(metric, p, t, cfg, |_, _| {})
}

/// As [`integrate_geodesic`], reporting every integrator node `(t, state)`.
pub fn integrate_geodesic_observed(
    metric: &FinslerMetric,
    p: &SpherePoint,
    t: f64,
    cfg: &IntegratorConfig,
    mut observer: impl FnMut(f64, &GeodesicState),
) -> Result<GeodesicState> {
    cfg.validate()?;
    if !t.is_finite() {
        return Err(Error::InvalidArgument(format!("time {t} is not finite")));
    }
    with_dim!(metric.dim(), N => {
        let y0 = initial_phase::<f64, N>(metric, p)?;
        let end = advance(metric, y0, t, cfg, |s, y| observer(s, &to_state(y)))?;
        Ok(to_state(&end))
    })
}

fn to_state<const N: usize>(y: &PhaseState<f64, N>) -> GeodesicState {
    GeodesicState {
        x: y.x.iter().copied().collect(),
        v: y.v.iter().copied().collect(),
    }
}

/// `sup |F(γ, γ') − 1|` over the integrator nodes in `[0, t_max]`.
pub fn conservation_defect(metric: &FinslerMetric, p: &SpherePoint, t_max: f64, cfg: &IntegratorConfig) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let mut failure = None;
    integrate_geodesic_observed(metric, p, t_max, cfg, |_, y| match metric.eval_f(&y.x, &y.v) {
        Ok(f) => worst = worst.max((f - 1.0).abs()),
        Err(e) => failure = Some(e),
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(worst),
    }
}

/// Hilbert coefficients `w = F_v(x, e)` and their `SM`-coordinate derivatives
/// `D[(j, A)] = ∂_A w_j`.
fn hilbert_jet(metric: &FinslerMetric, p: &SpherePoint) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_point(metric, p)?;
    with_dim!(metric.dim(), N => {
        let x = SVector::<f64, N>::from_column_slice(&p.base);
        let e = SVector::<f64, N>::from_column_slice(&p.direction());
        let jet = metric.jet(&x, &e)?;
        let m = sm_dim(N);
        let mut d = DMatrix::zeros(N, m);
        for j in 0..N {
            for k in 0..N {
                d[(j, k)] = jet.fxv[(k, j)];
            }
        }
        if let Some(de) = p.direction_derivative() {
            let de = SVector::<f64, N>::from_column_slice(&de);
            let dw = jet.fvv * de;
            for j in 0..N {
                d[(j, N)] = dw[j];
            }
        }
        Ok((DVector::from_iterator(N, jet.fv.iter().copied()), d))
    })
}

fn sm_dim(n: usize) -> usize {
    2 * n - 1
}

/// Components of `θ_F` on the coordinate frame of `SM`.
pub fn hilbert_form_on_sm(metric: &FinslerMetric, p: &SpherePoint) -> Result<Vec<f64>> {
    let (w, _) = hilbert_jet(metric, p)?;
    let mut theta = vec![0.0; sm_dim(metric.dim())];
    theta[..w.len()].copy_from_slice(w.as_slice());
    Ok(theta)
}

/// `dθ_F(∂_A, ∂_B)` on the coordinate frame of `SM`.
pub fn hilbert_differential_on_sm(metric: &FinslerMetric, p: &SpherePoint) -> Result<DMatrix<f64>> {
    let (_, d) = hilbert_jet(metric, p)?;
    let n = metric.dim();
    let e = DMatrix::from_fn(n, sm_dim(n), |j, b| if b == j { 1.0 } else { 0.0 });
    Ok(d.transpose() * &e - e.transpose() * &d)
}

/// `θ_F ∧ dθ_F` on `(∂_{x¹}, ∂_{x²}, ∂_φ)`; requires `n = 2`.
pub fn hilbert_contact_volume(metric: &FinslerMetric, p: &SpherePoint) -> Result<f64> {
    if metric.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: metric.dim(),
        });
    }
    let theta = hilbert_form_on_sm(metric, p)?;
    let omega = hilbert_differential_on_sm(metric, p)?;
    Ok(wedge3(&theta, &omega))
}

/// `θ ∧ Ω` evaluated on the first three coordinate vectors.
pub(crate) fn wedge3(theta: &[f64], omega: &DMatrix<f64>) -> f64 {
    theta[0] * omega[(1, 2)] - theta[1] * omega[(0, 2)] + theta[2] * omega[(0, 1)]
}

/// Solves `θ(X) = 1`, `X ⌋ Ω = 0` in the least-squares sense.
pub(crate) fn reeb_solve(theta: &[f64], omega: &DMatrix<f64>) -> Result<Vec<f64>> {
    let m = theta.len();
    let mut a = DMatrix::zeros(m + 1, m);
    let mut rhs = DVector::zeros(m + 1);
    for b in 0..m {
        a[(0, b)] = theta[b];
        for c in 0..m {
            a[(c + 1, b)] = omega[(b, c)];
        }
    }
    rhs[0] = 1.0;
    let svd = a.svd(true, true);
    let smallest = svd.singular_values.min();
    if smallest < DEGENERATE_CONTACT {
        return Err(Error::DegenerateContact { value: smallest });
    }
    let x = svd
        .solve(&rhs, 0.0)
        .map_err(|_| Error::DegenerateContact { value: smallest })?;
    Ok(x.iter().copied().collect())
}

/// The Reeb field of `θ_F` at `p` in `SM` coordinates.
pub fn reeb_field(metric: &FinslerMetric, p: &SpherePoint) -> Result<Vec<f64>> {
    let theta = hilbert_form_on_sm(metric, p)?;
    let omega = hilbert_differential_on_sm(metric, p)?;
    reeb_solve(&theta, &omega)
}

#[derive(Clone, Copy, Debug)]
struct SmState(SVector<f64, 3>);

impl Add for SmState {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        SmState(self.0 + o.0)
    }
}

impl Mul<f64> for SmState {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        SmState(self.0 * s)
    }
}

impl OdeState for SmState {
    fn error_norm(&self, a: &Self, b: &Self, atol: f64, rtol: f64) -> f64 {
        (0..3)
            .map(|i| self.0[i].abs() / (atol + rtol * a.0[i].abs().max(b.0[i].abs())))
            .fold(0.0, f64::max)
    }
}

/// Flows `p` along the Reeb field for time `t`.
pub fn reeb_flow(metric: &FinslerMetric, p: &SpherePoint, t: f64, cfg: &IntegratorConfig) -> Result<SpherePoint> {
    cfg.validate()?;
    check_point(metric, p)?;
    let coords = p.coords();
    let m = coords.len();
    let mut start = SVector::<f64, 3>::zeros();
    start.as_mut_slice()[..m].copy_from_slice(&coords);
    let rhs = |y: &SmState| -> Result<SmState> {
        let q = p.with_coords(&y.0.as_slice()[..m]);
        let field = reeb_field(metric, &q)?;
        let mut out = SVector::<f64, 3>::zeros();
        out.as_mut_slice()[..m].copy_from_slice(&field);
        Ok(SmState(out))
    };
    let end = match cfg.method {
        IntegrationMethod::Rk4 => {
            let steps = (t.abs() / cfg.step).ceil() as usize;
            ode::rk4(rhs, SmState(start), t, steps)?
        }
        IntegrationMethod::Dopri5 => ode::dopri5(rhs, SmState(start), t, &cfg.adaptive(), |_, _| {})?.0,
    };
    Ok(p.with_coords(&end.0.as_slice()[..m]))
}
