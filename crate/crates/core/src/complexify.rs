//! Complex-time continuation of geodesics and the tube map `μ(p, r) = γ_p(ir)`.
//!
//! Complex time is traversed along axis-parallel legs with fixed-step RK4 on
//! complex phase states. The imaginary leg always takes `⌈R/step⌉` steps, so
//! `μ` is a smooth function of `r` at fixed discretization.

use nalgebra::SVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::finsler::{with_dim, wrap_pi, wrap_two_pi, FinslerMetric, SpherePoint};
use crate::geodesic::{initial_phase, phase_rhs, PhaseState};
use crate::ode;

/// Default cap on `|s|` for a single continuation.
pub const DEFAULT_REAL_TIME_CAP: f64 = 20.0;

/// Default RK4 step along complex-time legs.
pub const DEFAULT_CONTINUATION_STEP: f64 = 1e-3;

/// `z = s + ir` in the half-strip `0 ≤ r < R`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HalfStripPoint {
    pub s: f64,
    pub r: f64,
}

impl HalfStripPoint {
    pub fn new(s: f64, r: f64) -> Self {
        Self { s, r }
    }
}

/// Point of `M_C = (C / 2πZ)^n` in the global chart.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexPoint {
    pub z: Vec<Complex64>,
}

impl ComplexPoint {
    pub fn new(z: Vec<Complex64>) -> Self {
        Self { z }
    }

    pub fn from_parts(re: &[f64], im: &[f64]) -> Self {
        Self {
            z: re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    pub fn re(&self) -> Vec<f64> {
        self.z.iter().map(|c| c.re).collect()
    }

    pub fn im(&self) -> Vec<f64> {
        self.z.iter().map(|c| c.im).collect()
    }

    /// Euclidean norm of the imaginary part.
    pub fn im_norm(&self) -> f64 {
        self.z.iter().map(|c| c.im * c.im).sum::<f64>().sqrt()
    }

    /// Real parts reduced into `[0, 2π)`.
    pub fn normalized(&self) -> Self {
        Self {
            z: self.z.iter().map(|c| Complex64::new(wrap_two_pi(c.re), c.im)).collect(),
        }
    }

    /// Distance with real parts compared modulo `2π`.
    pub fn chart_distance(&self, other: &Self) -> f64 {
        self.z
            .iter()
            .zip(&other.z)
            .map(|(a, b)| wrap_pi(a.re - b.re).powi(2) + (a.im - b.im).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Real coordinates `(Re z, Im z)` with the real part relative to `reference`
    /// taken through the nearest lift.
    pub(crate) fn real_offset(&self, reference: &Self) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; 2 * n];
        for j in 0..n {
            out[j] = wrap_pi(self.z[j].re - reference.z[j].re);
            out[n + j] = self.z[j].im - reference.z[j].im;
        }
        out
    }
}

/// A point of a complexified geodesic together with its holomorphic velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGeodesic {
    pub point: ComplexPoint,
    pub velocity: Vec<Complex64>,
}

/// Order in which the two legs of an L-shaped complex-time path are traversed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LegOrder {
    /// `0 → s → s + ir`.
    RealFirst,
    /// `0 → ir → s + ir`.
    ImaginaryFirst,
}

/// Complex continuation of the geodesic flow of a metric inside a tube of height `R`.
#[derive(Clone, Debug, PartialEq)]
pub struct Continuation {
    pub metric: FinslerMetric,
    pub radius: f64,
    pub step: f64,
    pub real_time_cap: f64,
}

impl Continuation {
    pub fn new(metric: FinslerMetric, radius: f64) -> Self {
        Self {
            metric,
            radius,
            step: DEFAULT_CONTINUATION_STEP,
            real_time_cap: DEFAULT_REAL_TIME_CAP,
        }
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    fn check(&self, z: HalfStripPoint) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidArgument(format!("step {} must be positive", self.step)));
        }
        if !z.s.is_finite() || !z.r.is_finite() {
            return Err(Error::InvalidArgument("complex time is not finite".into()));
        }
        if z.r < 0.0 {
            return Err(Error::InvalidArgument(format!("imaginary time {} is negative", z.r)));
        }
        if z.r >= self.radius {
            return Err(Error::TubeExceeded {
                r: z.r,
                radius: self.radius,
            });
        }
        if z.s.abs() > self.real_time_cap {
            return Err(Error::RealTimeCap {
                s: z.s,
                cap: self.real_time_cap,
            });
        }
        Ok(())
    }

    fn imaginary_steps(&self) -> usize {
        (self.radius / self.step).ceil().max(1.0) as usize
    }

    fn real_steps(&self, s: f64) -> usize {
        (s.abs() / self.step).ceil() as usize
    }

    /// Advances along `dir · σ` for `σ ∈ [0, len]`. Positions in `y` are
    /// displacements from the real point `base`.
    fn leg<const N: usize>(
        &self,
        base: &SVector<Complex64, N>,
        y: PhaseState<Complex64, N>,
        dir: Complex64,
        len: f64,
        steps: usize,
    ) -> Result<PhaseState<Complex64, N>> {
        if len == 0.0 || steps == 0 {
            return Ok(y);
        }
        let rhs = |y: &PhaseState<Complex64, N>| -> Result<PhaseState<Complex64, N>> {
            let at = PhaseState { x: base + y.x, v: y.v };
            let d = phase_rhs(&self.metric, &at)?;
            Ok(PhaseState {
                x: d.x * dir,
                v: d.v * dir,
            })
        };
        ode::rk4(rhs, y, len, steps)
    }

    pub(crate) fn evolve<const N: usize>(
        &self,
        p: &SpherePoint,
        z: HalfStripPoint,
        order: LegOrder,
    ) -> Result<PhaseState<Complex64, N>> {
        let (base, y) = self.evolve_displacement::<N>(p, z, order)?;
        Ok(PhaseState { x: base + y.x, v: y.v })
    }

    /// Like `evolve`, but returns the base point and the displacement from it
    /// separately so that small differences keep full precision.
    pub(crate) fn evolve_displacement<const N: usize>(
        &self,
        p: &SpherePoint,
        z: HalfStripPoint,
        order: LegOrder,
    ) -> Result<(SVector<Complex64, N>, PhaseState<Complex64, N>)> {
        self.check(z)?;
        let start = initial_phase::<Complex64, N>(&self.metric, p)?;
        let base = start.x;
        let y0 = PhaseState {
            x: SVector::zeros(),
            v: start.v,
        };
        let one = Complex64::new(1.0, 0.0);
        let i = Complex64::new(0.0, 1.0);
        let (ns, nr) = (self.real_steps(z.s), self.imaginary_steps());
        let y = match order {
            LegOrder::RealFirst => {
                let y = self.leg(&base, y0, one, z.s, ns)?;
                self.leg(&base, y, i, z.r, nr)?
            }
            LegOrder::ImaginaryFirst => {
                let y = self.leg(&base, y0, i, z.r, nr)?;
                self.leg(&base, y, one, z.s, ns)?
            }
        };
        Ok((base, y))
    }

    /// `γ^C_p(z)` along the path `0 → s → s + ir`.
    pub fn complex_geodesic(&self, p: &SpherePoint, z: HalfStripPoint) -> Result<ComplexGeodesic> {
        self.complex_geodesic_via(p, z, LegOrder::RealFirst)
    }

    pub fn complex_geodesic_via(&self, p: &SpherePoint, z: HalfStripPoint, order: LegOrder) -> Result<ComplexGeodesic> {
        if p.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: p.dim(),
            });
        }
        with_dim!(self.dim(), N => {
            let y = self.evolve::<N>(p, z, order)?;
            Ok(to_geodesic(&y))
        })
    }

    /// The tube map `μ(p, r) = γ^C_p(ir)`.
    pub fn mu(&self, p: &SpherePoint, r: f64) -> Result<ComplexGeodesic> {
        self.complex_geodesic(p, HalfStripPoint::new(0.0, r))
    }

    /// `‖∂_s γ^C − (1/i) ∂_r γ^C‖` by central differences of step `h`.
    pub fn cauchy_riemann_residual(&self, p: &SpherePoint, z: HalfStripPoint, h: f64) -> Result<f64> {
        if !(h > 0.0) {
            return Err(Error::InvalidArgument(format!("difference step {h} must be positive")));
        }
        if z.r - h < 0.0 || z.r + h >= self.radius {
            return Err(Error::TubeExceeded {
                r: z.r + h,
                radius: self.radius,
            });
        }
        let at = |ds: f64, dr: f64| {
            self.complex_geodesic(p, HalfStripPoint::new(z.s + ds, z.r + dr))
                .map(|g| g.point.z)
        };
        let (sp, sm, rp, rm) = (at(h, 0.0)?, at(-h, 0.0)?, at(0.0, h)?, at(0.0, -h)?);
        let i = Complex64::new(0.0, 1.0);
        let mut total = 0.0;
        for j in 0..self.dim() {
            let ds = (sp[j] - sm[j]) / (2.0 * h);
            let dr = (rp[j] - rm[j]) / (2.0 * h);
            total += (ds - dr / i).norm_sqr();
        }
        Ok(total.sqrt())
    }

    /// Chart distance between the two L-path continuations to `z`.
    pub fn path_independence(&self, p: &SpherePoint, z: HalfStripPoint) -> Result<f64> {
        let a = self.complex_geodesic_via(p, z, LegOrder::RealFirst)?;
        let b = self.complex_geodesic_via(p, z, LegOrder::ImaginaryFirst)?;
        Ok(a.point.chart_distance(&b.point))
    }
}

fn to_geodesic<const N: usize>(y: &PhaseState<Complex64, N>) -> ComplexGeodesic {
    ComplexGeodesic {
        point: ComplexPoint::new(y.x.iter().copied().collect()),
        velocity: y.v.iter().copied().collect(),
    }
}

/// `μ` on raw coordinates for the Newton solver: base point, displacement
/// and velocity.
pub(crate) fn mu_raw<const N: usize>(
    cont: &Continuation,
    p: &SpherePoint,
    r: f64,
) -> Result<(SVector<Complex64, N>, SVector<Complex64, N>, SVector<Complex64, N>)> {
    let (base, y) = cont.evolve_displacement::<N>(p, HalfStripPoint::new(0.0, r), LegOrder::RealFirst)?;
    Ok((base, y.x, y.v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesic::{integrate_geodesic, IntegratorConfig};
    use std::f64::consts::FRAC_PI_2;

    fn conformal() -> FinslerMetric {
        FinslerMetric::conformal(2, &[(vec![1.0, 0.0], 0.2, 0.0)]).unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn straight_line_examples() {
        let e = Continuation::new(FinslerMetric::euclidean(2).unwrap(), 0.5);
        let p = SpherePoint::planar(0.0, 0.0, 0.0);
        let g = e.complex_geodesic(&p, HalfStripPoint::new(0.2, 0.3)).unwrap();
        assert!((g.point.z[0] - c(0.2, 0.3)).norm() < 1e-14);
        assert!(g.point.z[1].norm() < 1e-14);

        let r = Continuation::new(FinslerMetric::randers(&[0.3, 0.0]).unwrap(), 1.5);
        let g = r.complex_geodesic(&p, HalfStripPoint::new(0.0, 1.3)).unwrap();
        assert!((g.point.z[0] - c(0.0, 1.0)).norm() < 1e-13);

        let m = e.mu(&SpherePoint::planar(0.0, 0.0, FRAC_PI_2), 0.4).unwrap();
        assert!((m.point.z[0]).norm() < 1e-14 && (m.point.z[1] - c(0.0, 0.4)).norm() < 1e-14);
    }

    #[test]
    fn mu_is_identity_at_r_zero() {
        let cont = Continuation::new(conformal(), 0.5);
        let p = SpherePoint::planar(0.3, 1.7, 2.0);
        let m = cont.mu(&p, 0.0).unwrap();
        assert_eq!(m.point.re(), p.base);
        assert_eq!(m.point.im(), vec![0.0, 0.0]);
    }

    #[test]
    fn real_restriction_matches_real_geodesic() {
        let metric = conformal();
        let cont = Continuation::new(metric.clone(), 0.5);
        let p = SpherePoint::planar(0.3, 0.2, 0.7);
        for s in [0.5, -0.8, 1.0] {
            let g = cont.complex_geodesic(&p, HalfStripPoint::new(s, 0.0)).unwrap();
            let real = integrate_geodesic(&metric, &p, s, &IntegratorConfig::default()).unwrap();
            for j in 0..2 {
                assert!((g.point.z[j].re - real.x[j]).abs() < 1e-10);
                assert_eq!(g.point.z[j].im, 0.0);
                assert!((g.velocity[j].re - real.v[j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn group_property_on_real_axis() {
        let metric = conformal();
        let cont = Continuation::new(metric.clone(), 0.5);
        let cfg = IntegratorConfig::default();
        let p = SpherePoint::planar(1.0, 0.5, 0.4);
        let (s1, s2) = (0.6, 0.9);
        let whole = cont.complex_geodesic(&p, HalfStripPoint::new(s1 + s2, 0.0)).unwrap();
        let mid = integrate_geodesic(&metric, &p, s1, &cfg).unwrap();
        let q = SpherePoint::from_vector(&mid.x, &mid.v).unwrap();
        let rest = integrate_geodesic(&metric, &q, s2, &cfg).unwrap();
        for j in 0..2 {
            assert!((whole.point.z[j].re - rest.x[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn transversal_to_m() {
        let cont = Continuation::new(conformal(), 0.5);
        let p = SpherePoint::planar(0.4, 0.0, 0.6);
        let h = 1e-4;
        let a = cont.mu(&p, h).unwrap().point.im();
        let e = p.direction();
        let cross = a[0] * e[1] - a[1] * e[0];
        assert!(a[0] * e[0] + a[1] * e[1] > 0.0);
        assert!(cross.abs() / h < 1e-3);
    }

    #[test]
    fn cauchy_riemann_examples() {
        let e = Continuation::new(FinslerMetric::euclidean(2).unwrap(), 0.5);
        let p = SpherePoint::planar(0.2, 0.1, 1.0);
        assert!(
            e.cauchy_riemann_residual(&p, HalfStripPoint::new(0.1, 0.2), 1e-3)
                .unwrap()
                < 1e-9
        );

        let cont = Continuation::new(conformal(), 0.5);
        let z = HalfStripPoint::new(0.3, 0.2);
        let r1 = cont.cauchy_riemann_residual(&p, z, 1e-3).unwrap();
        assert!(r1 < 1e-5, "{r1}");
        let r0 = cont.cauchy_riemann_residual(&p, z, 4e-2).unwrap();
        let r2 = cont.cauchy_riemann_residual(&p, z, 2e-2).unwrap();
        assert!((r0 / r2 - 4.0).abs() < 0.5, "ratio {}", r0 / r2);
    }

    #[test]
    fn path_independence_examples() {
        let p = SpherePoint::planar(0.2, 0.1, 1.0);
        for metric in [
            FinslerMetric::euclidean(2).unwrap(),
            FinslerMetric::randers(&[0.3, 0.0]).unwrap(),
        ] {
            let cont = Continuation::new(metric, 0.5);
            assert!(cont.path_independence(&p, HalfStripPoint::new(0.7, 0.3)).unwrap() < 1e-12);
        }
        let cont = Continuation::new(conformal(), 0.5);
        assert!(cont.path_independence(&p, HalfStripPoint::new(0.5, 0.3)).unwrap() < 1e-8);
        assert_eq!(cont.path_independence(&p, HalfStripPoint::new(0.0, 0.3)).unwrap(), 0.0);
    }

    #[test]
    fn domain_errors() {
        let cont = Continuation::new(conformal(), 0.5);
        let p = SpherePoint::planar(0.0, 0.0, 0.0);
        assert!(matches!(cont.mu(&p, 0.5), Err(Error::TubeExceeded { .. })));
        assert!(matches!(
            cont.complex_geodesic(&p, HalfStripPoint::new(25.0, 0.1)),
            Err(Error::RealTimeCap { .. })
        ));
        assert!(matches!(cont.mu(&p, -0.1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn chart_distance_is_periodic() {
        let a = ComplexPoint::from_parts(&[0.01, 3.0], &[0.2, 0.0]);
        let b = ComplexPoint::from_parts(&[std::f64::consts::TAU - 0.01, 3.0], &[0.2, 0.0]);
        assert!((a.chart_distance(&b) - 0.02).abs() < 1e-12);
        assert!((b.normalized().z[0].re - (std::f64::consts::TAU - 0.01)).abs() < 1e-15);
    }
}
