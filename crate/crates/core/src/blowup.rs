//! Normal blowup of `M` inside the tube and the contact form `θ_S` it induces on `SM`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::complexify::ComplexPoint;
use crate::error::{Error, Result};
use crate::finsler::SpherePoint;
use crate::geodesic::{hilbert_form_on_sm, wedge3};
use crate::hessian::{adapted_rotation, neville_at_zero};
use crate::model::MAModel;

/// Default heights at which interior quantities are evaluated before extrapolation.
pub const BOUNDARY_HEIGHTS: [f64; 2] = [0.02, 0.01];

/// Step of the tube Jacobian used for `du = e_r · Dμ⁻¹`.
const TUBE_STEP: f64 = 1e-5;

/// Step of the differences in `p` and along `SM`.
const CHART_STEP: f64 = 1e-3;

/// Smallest `|θ_S ∧ dθ_S|` accepted as non-degenerate.
pub const CONTACT_FLOOR: f64 = 1e-8;

/// Smallest normal speed accepted by [`lift_curve`].
pub const TANGENCY_FLOOR: f64 = 1e-10;

/// Blowup coordinates `(x^α, s, p^α, r)` around a ray `p₀`: a rotation takes the
/// ray to the last axis, then `ỹ = (r p, r)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlowupChart {
    center: SpherePoint,
    rotation: DMatrix<f64>,
}

/// A point of the blown-up tube in chart coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlowupPoint {
    /// Rotated base coordinates `(x^α, s)`.
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub r: f64,
}

impl BlowupChart {
    pub fn centered(center: &SpherePoint) -> Result<Self> {
        Ok(Self {
            center: center.clone(),
            rotation: adapted_rotation(center)?,
        })
    }

    pub fn center(&self) -> &SpherePoint {
        &self.center
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }

    fn rotate(&self, v: &[f64]) -> Vec<f64> {
        (&self.rotation * nalgebra::DVector::from_column_slice(v))
            .as_slice()
            .to_vec()
    }

    fn unrotate(&self, v: &[f64]) -> Vec<f64> {
        (self.rotation.transpose() * nalgebra::DVector::from_column_slice(v))
            .as_slice()
            .to_vec()
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: len,
            });
        }
        Ok(())
    }

    /// `(p, r)` of an imaginary part `y`.
    pub fn to_blowup(&self, y: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_dim(y.len())?;
        let n = self.dim();
        let t = self.rotate(y);
        let r = t[n - 1];
        if !(r > 0.0) {
            return Err(Error::OutOfChart);
        }
        let p: Vec<f64> = t[..n - 1].iter().map(|c| c / r).collect();
        if norm(&p) > 1.0 {
            return Err(Error::OutOfChart);
        }
        Ok((p, r))
    }

    /// The imaginary part `y` with blowup coordinates `(p, r)`.
    pub fn from_blowup(&self, p: &[f64], r: f64) -> Result<Vec<f64>> {
        self.check_dim(p.len() + 1)?;
        if !(r >= 0.0) {
            return Err(Error::InvalidArgument(format!("blowup height {r} is negative")));
        }
        if norm(p) > 1.0 {
            return Err(Error::OutOfChart);
        }
        let mut t: Vec<f64> = p.iter().map(|c| r * c).collect();
        t.push(r);
        Ok(self.unrotate(&t))
    }

    pub fn to_chart_base(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        Ok(self.rotate(x))
    }

    pub fn from_chart_base(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        Ok(self.unrotate(x))
    }

    /// The point of `C^n` at chart coordinates.
    pub fn point(&self, q: &BlowupPoint) -> Result<ComplexPoint> {
        let x = self.from_chart_base(&q.x)?;
        let y = self.from_blowup(&q.p, q.r)?;
        Ok(ComplexPoint::from_parts(&x, &y))
    }

    /// The ray of `SM` at `r = 0` with chart coordinates `(x, p)`.
    pub fn boundary_point(&self, x: &[f64], p: &[f64]) -> Result<SpherePoint> {
        let base = self.from_chart_base(x)?;
        let dir = self.from_blowup(p, 1.0)?;
        SpherePoint::from_vector(&base, &dir)
    }

    /// Chart coordinate vectors `∂x^α, ∂s, ∂p^α` at the boundary point with
    /// fibre coordinate `p`, as columns in `SM` coordinates `(x, φ)`.
    pub fn boundary_frame(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dim(p.len() + 1)?;
        let n = self.dim();
        let m = 2 * n - 1;
        let mut frame = DMatrix::zeros(m, m);
        for k in 0..n {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            let col = self.unrotate(&e);
            for j in 0..n {
                frame[(j, k)] = col[j];
            }
        }
        if n == 2 {
            frame[(2, 2)] = -1.0 / (1.0 + p[0] * p[0]);
        }
        Ok(frame)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// A curve leaving `M` and its lift to the blowup.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedCurve {
    /// The oriented ray of the normal part of `c'(0)`.
    pub boundary: SpherePoint,
    pub chart: BlowupChart,
    /// Lift of `c(t_k)` for the samples with `t_k > 0`.
    pub samples: Vec<BlowupPoint>,
}

/// Lifts a sampled curve with `c(0) ∈ M`; `times[0]` must be `0`.
pub fn lift_curve(times: &[f64], points: &[ComplexPoint]) -> Result<LiftedCurve> {
    if times.len() != points.len() || times.len() < 2 {
        return Err(Error::InvalidArgument("need at least two curve samples".into()));
    }
    if times[0] != 0.0 || times[1..].iter().any(|t| !(*t > 0.0)) {
        return Err(Error::InvalidArgument(
            "times must start at 0 and be positive after".into(),
        ));
    }
    let origin = &points[0];
    if origin.im_norm() > 1e-12 {
        return Err(Error::InvalidArgument("curve must start on M".into()));
    }
    let n = origin.dim();
    let mut order: Vec<usize> = (1..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    order.truncate(3);
    let ts: Vec<f64> = order.iter().map(|&k| times[k]).collect();
    let normal: Vec<f64> = (0..n)
        .map(|j| {
            let q: Vec<f64> = order.iter().map(|&k| points[k].z[j].im / times[k]).collect();
            neville_at_zero(&ts, &q)
        })
        .collect();
    let speed = norm(&normal);
    if !(speed >= TANGENCY_FLOOR) {
        return Err(Error::TangentToM { normal: speed });
    }
    let boundary = SpherePoint::from_vector(&origin.re(), &normal)?;
    let chart = BlowupChart::centered(&boundary)?;
    let samples = points[1..]
        .iter()
        .map(|c| {
            let (p, r) = chart.to_blowup(&c.im())?;
            Ok(BlowupPoint {
                x: chart.to_chart_base(&c.re())?,
                p,
                r,
            })
        })
        .collect::<Result<_>>()?;
    Ok(LiftedCurve {
        boundary,
        chart,
        samples,
    })
}

fn check_heights(heights: &[f64]) -> Result<()> {
    if heights.is_empty() || heights.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::InvalidArgument("heights must be positive".into()));
    }
    Ok(())
}

/// Components of `θ̃ = d^c u` on the `SM` coordinate fields at `μ(p, r)`:
/// `θ̃(dμ V) = −[Dμ⁻¹ J Dμ V]_r`.
fn theta_interior(model: &MAModel, p: &SpherePoint, r: f64) -> Result<Vec<f64>> {
    let n = model.dim();
    let jac = model.tube_jacobian(p, r, TUBE_STEP)?;
    let mut j_jac = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        j_jac.set_row(k, &(-jac.row(n + k)));
        j_jac.set_row(n + k, &jac.row(k));
    }
    let m = jac.lu().solve(&j_jac).ok_or(Error::DegenerateContact { value: 0.0 })?;
    Ok((0..2 * n - 1).map(|a| -m[(2 * n - 1, a)]).collect())
}

/// `θ_S` on the coordinate fields of `SM` at `p`, extrapolated to `r = 0` from `heights`.
pub fn theta_s_components(model: &MAModel, p: &SpherePoint, heights: &[f64]) -> Result<Vec<f64>> {
    check_heights(heights)?;
    let samples = heights
        .iter()
        .map(|&r| theta_interior(model, p, r))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..samples[0].len())
        .map(|a| {
            let v: Vec<f64> = samples.iter().map(|s| s[a]).collect();
            neville_at_zero(heights, &v)
        })
        .collect())
}

/// `θ_S(V)` for `V` given in `SM` coordinates `(x, φ)`.
pub fn theta_s(model: &MAModel, p: &SpherePoint, v: &[f64], heights: &[f64]) -> Result<f64> {
    let theta = theta_s_components(model, p, heights)?;
    if v.len() != theta.len() {
        return Err(Error::DimensionMismatch {
            expected: theta.len(),
            found: v.len(),
        });
    }
    Ok(theta.iter().zip(v).map(|(a, b)| a * b).sum())
}

/// `max_A |θ_F(∂_A) + θ_S(∂_A)|` at `p`.
pub fn hilbert_plus_theta(model: &MAModel, p: &SpherePoint, heights: &[f64]) -> Result<f64> {
    let theta_f = hilbert_form_on_sm(model.metric(), p)?;
    let theta_s = theta_s_components(model, p, heights)?;
    Ok(theta_f.iter().zip(&theta_s).fold(0.0, |m, (a, b)| m.max((a + b).abs())))
}

/// `U = u/r` and `∂U/∂p` at `r = 0` in a chart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileU {
    pub value: f64,
    pub slope: Vec<f64>,
}

pub fn profile_u(model: &MAModel, chart: &BlowupChart, x: &[f64], p: &[f64], heights: &[f64]) -> Result<ProfileU> {
    check_heights(heights)?;
    let u_at = |p: &[f64], r: f64| -> Result<f64> {
        let zeta = chart.point(&BlowupPoint {
            x: x.to_vec(),
            p: p.to_vec(),
            r,
        })?;
        Ok(model.invert_mu(&zeta)?.r / r)
    };
    let mut values = Vec::with_capacity(heights.len());
    let mut slopes = vec![Vec::with_capacity(heights.len()); p.len()];
    for &r in heights {
        values.push(u_at(p, r)?);
        for (a, slope) in slopes.iter_mut().enumerate() {
            let (mut pp, mut pm) = (p.to_vec(), p.to_vec());
            pp[a] += CHART_STEP;
            pm[a] -= CHART_STEP;
            slope.push((u_at(&pp, r)? - u_at(&pm, r)?) / (2.0 * CHART_STEP));
        }
    }
    Ok(ProfileU {
        value: neville_at_zero(heights, &values),
        slope: slopes.iter().map(|s| neville_at_zero(heights, s)).collect(),
    })
}

/// Comparison of `θ_S` with `−(U − p·∂U/∂p) ds − ∂U/∂p^α dx^α`, componentwise in
/// the chart basis `(∂x^α, ∂s, ∂p^α)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileCheck {
    pub profile: ProfileU,
    pub predicted: Vec<f64>,
    pub actual: Vec<f64>,
    pub residual: f64,
}

/// Checks the profile formula at fibre coordinate `offset` in the chart centered at `center`.
pub fn profile_formula_check(
    model: &MAModel,
    center: &SpherePoint,
    offset: &[f64],
    heights: &[f64],
) -> Result<ProfileCheck> {
    let chart = BlowupChart::centered(center)?;
    let x = chart.to_chart_base(&center.base)?;
    let profile = profile_u(model, &chart, &x, offset, heights)?;
    let n = chart.dim();
    let p_dot: f64 = offset.iter().zip(&profile.slope).map(|(a, b)| a * b).sum();
    let mut predicted: Vec<f64> = profile.slope.iter().map(|d| -d).collect();
    predicted.push(-(profile.value - p_dot));
    predicted.extend(std::iter::repeat_n(0.0, n - 1));

    let q = chart.boundary_point(&x, offset)?;
    let theta = nalgebra::DVector::from_vec(theta_s_components(model, &q, heights)?);
    let actual = (chart.boundary_frame(offset)?.transpose() * theta).as_slice().to_vec();
    let residual = predicted
        .iter()
        .zip(&actual)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(ProfileCheck {
        profile,
        predicted,
        actual,
        residual,
    })
}

/// `θ_S ∧ dθ_S (∂x¹, ∂x², ∂φ)` at `p` for `n = 2`, with `dθ_S` by central
/// differences along the coordinate fields.
pub fn contact_volume(model: &MAModel, p: &SpherePoint, heights: &[f64]) -> Result<f64> {
    if model.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: model.dim(),
        });
    }
    let theta = theta_s_components(model, p, heights)?;
    let coords = p.coords();
    let mut deriv = DMatrix::zeros(3, 3);
    for a in 0..3 {
        let shifted = |d: f64| -> Result<Vec<f64>> {
            let mut c = coords.clone();
            c[a] += d;
            theta_s_components(model, &p.with_coords(&c), heights)
        };
        let (plus, minus) = (shifted(CHART_STEP)?, shifted(-CHART_STEP)?);
        for b in 0..3 {
            deriv[(a, b)] = (plus[b] - minus[b]) / (2.0 * CHART_STEP);
        }
    }
    let omega = &deriv - deriv.transpose();
    let value = wedge3(&theta, &omega);
    if !(value.abs() >= CONTACT_FLOOR) {
        return Err(Error::DegenerateContact { value });
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finsler::{FinslerMetric, Ray, TangentVector};
    use crate::frames::{recover_finsler, RECOVERY_HEIGHTS};
    use crate::model::{sample_rays, ModelConfig};

    fn build(metric: FinslerMetric) -> MAModel {
        MAModel::build(metric, 0.5, &ModelConfig::default()).unwrap()
    }

    fn conformal() -> FinslerMetric {
        FinslerMetric::conformal(2, &[(vec![1.0, 0.0], 0.2, 0.0)]).unwrap()
    }

    #[test]
    fn chart_examples() {
        let up = BlowupChart::centered(&SpherePoint::planar(0.0, 0.0, std::f64::consts::FRAC_PI_2)).unwrap();
        let (p, r) = up.to_blowup(&[0.0, 0.3]).unwrap();
        assert!(p[0].abs() < 1e-15 && (r - 0.3).abs() < 1e-15);
        let y = up.from_blowup(&[0.2], 0.1).unwrap();
        assert!((y[0] - 0.02).abs() < 1e-15 && (y[1] - 0.1).abs() < 1e-15);
        assert_eq!(up.to_blowup(&[0.5, 0.1]), Err(Error::OutOfChart));
        assert_eq!(up.to_blowup(&[0.0, -0.1]), Err(Error::OutOfChart));
        assert_eq!(up.from_blowup(&[1.5], 0.1), Err(Error::OutOfChart));
    }

    #[test]
    fn chart_round_trip() {
        let chart = BlowupChart::centered(&SpherePoint::planar(1.0, 2.0, 2.3)).unwrap();
        for (p, r) in [(0.0, 0.1), (-0.7, 0.02), (0.99, 0.4)] {
            let y = chart.from_blowup(&[p], r).unwrap();
            let (p2, r2) = chart.to_blowup(&y).unwrap();
            assert!((p2[0] - p).abs() < 1e-15 && (r2 - r).abs() < 1e-15);
        }
        let line = BlowupChart::centered(&SpherePoint::on_line(0.3, false)).unwrap();
        let (p, r) = line.to_blowup(&[-0.25]).unwrap();
        assert!(p.is_empty() && (r - 0.25).abs() < 1e-15);
    }

    #[test]
    fn boundary_point_matches_fibre() {
        let center = SpherePoint::planar(0.5, 0.6, 1.0);
        let chart = BlowupChart::centered(&center).unwrap();
        let x = chart.to_chart_base(&center.base).unwrap();
        assert!(chart.boundary_point(&x, &[0.0]).unwrap().distance(&center) < 1e-14);
        let q = chart.boundary_point(&x, &[0.3]).unwrap();
        let Ray::Angle(phi) = q.ray else { panic!() };
        assert!((phi - (1.0 - 0.3f64.atan())).abs() < 1e-14);
    }

    #[test]
    fn lift_linear_curve() {
        let base = [1.0, 2.0];
        let x = [3.0, -4.0];
        let curve = |t: f64| ComplexPoint::from_parts(&base, &[t * x[0], t * x[1]]);
        let times = [0.0, 0.01, 0.02, 0.04];
        let points: Vec<_> = times.iter().map(|&t| curve(t)).collect();
        let lifted = lift_curve(&times, &points).unwrap();
        let expected = SpherePoint::from_vector(&base, &x).unwrap();
        assert!(lifted.boundary.distance(&expected) < 1e-12);
        assert!(lifted.samples.iter().all(|s| s.p[0].abs() < 1e-12));

        let re: Vec<_> = times.iter().map(|&t| curve(t * t + t)).collect();
        let relifted = lift_curve(&times, &re).unwrap();
        assert!(relifted.boundary.distance(&expected) < 1e-10);
    }

    #[test]
    fn lift_rejects_tangent_curve() {
        let times = [0.0, 0.01, 0.02, 0.03];
        let points: Vec<_> = times
            .iter()
            .map(|&t| ComplexPoint::from_parts(&[t, 0.0], &[t * t * t, 0.0]))
            .collect();
        assert!(matches!(lift_curve(&times, &points), Err(Error::TangentToM { .. })));
    }

    #[test]
    fn lift_rate_is_finsler_norm() {
        let model = build(conformal());
        let x = TangentVector::new(vec![0.4, 1.0], vec![0.6, -0.3]);
        let times = [0.0, 0.005, 0.01, 0.02];
        let rates: Vec<f64> = times[1..]
            .iter()
            .map(|&t| {
                let zeta = ComplexPoint::from_parts(&x.base, &[t * x.components[0], t * x.components[1]]);
                model.invert_mu(&zeta).unwrap().r / t
            })
            .collect();
        let rate = neville_at_zero(&times[1..], &rates);
        let recovered = recover_finsler(&model, &x, &RECOVERY_HEIGHTS).unwrap();
        assert!((rate - recovered).abs() < 1e-6, "{rate} {recovered}");
    }

    #[test]
    fn euclidean_theta_s() {
        let model = build(FinslerMetric::euclidean(2).unwrap());
        let p = SpherePoint::planar(0.2, 0.3, std::f64::consts::FRAC_PI_2);
        let ds = theta_s(&model, &p, &[0.0, 1.0, 0.0], &BOUNDARY_HEIGHTS).unwrap();
        assert!((ds + 1.0).abs() < 1e-8, "{ds}");
        let dp = theta_s(&model, &p, &[0.0, 0.0, 1.0], &BOUNDARY_HEIGHTS).unwrap();
        assert!(dp.abs() < 1e-8, "{dp}");
    }

    #[test]
    fn theta_s_is_minus_hilbert() {
        for metric in [
            FinslerMetric::euclidean(2).unwrap(),
            FinslerMetric::randers(&[0.3, 0.0]).unwrap(),
            conformal(),
        ] {
            let model = build(metric);
            for p in sample_rays(2, 5, 3) {
                let d = hilbert_plus_theta(&model, &p, &BOUNDARY_HEIGHTS).unwrap();
                assert!(d < 1e-3, "{d}");
            }
        }
    }

    #[test]
    fn theta_s_on_the_line() {
        let model = build(FinslerMetric::randers(&[0.4]).unwrap());
        for positive in [true, false] {
            let p = SpherePoint::on_line(0.7, positive);
            assert!(hilbert_plus_theta(&model, &p, &BOUNDARY_HEIGHTS).unwrap() < 1e-8);
        }
    }

    #[test]
    fn theta_s_extrapolation_is_stable() {
        let model = build(conformal());
        let p = SpherePoint::planar(0.3, 0.4, 0.9);
        let a = theta_s_components(&model, &p, &BOUNDARY_HEIGHTS).unwrap();
        let b = theta_s_components(&model, &p, &[0.01, 0.005]).unwrap();
        let change = a.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(change < 1e-4, "{change}");
    }

    #[test]
    fn profile_examples() {
        let euclid = build(FinslerMetric::euclidean(2).unwrap());
        let p = SpherePoint::planar(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let check = profile_formula_check(&euclid, &p, &[0.0], &BOUNDARY_HEIGHTS).unwrap();
        assert!((check.profile.value - 1.0).abs() < 1e-6);
        assert!(check.profile.slope[0].abs() < 1e-6);
        assert!(check.residual < 1e-6, "{check:?}");

        let randers = build(FinslerMetric::randers(&[0.3, 0.0]).unwrap());
        let axis = SpherePoint::planar(0.0, 0.0, 0.0);
        let check = profile_formula_check(&randers, &axis, &[0.0], &BOUNDARY_HEIGHTS).unwrap();
        assert!(check.residual < 1e-4, "{check:?}");
        let off = profile_formula_check(&randers, &axis, &[0.4], &BOUNDARY_HEIGHTS).unwrap();
        assert!(off.residual < 1e-4, "{off:?}");

        let curved = build(conformal());
        let q = SpherePoint::planar(0.7, 0.2, 2.0);
        let check = profile_formula_check(&curved, &q, &[0.3], &BOUNDARY_HEIGHTS).unwrap();
        assert!(check.residual < 1e-3, "{check:?}");
    }

    #[test]
    fn contact_volume_examples() {
        let euclid = build(FinslerMetric::euclidean(2).unwrap());
        for p in sample_rays(2, 3, 1) {
            let v = contact_volume(&euclid, &p, &BOUNDARY_HEIGHTS).unwrap();
            assert!((v.abs() - 1.0).abs() < 1e-6, "{v}");
        }
        let randers = build(FinslerMetric::randers(&[0.3, 0.0]).unwrap());
        let worst = SpherePoint::planar(0.0, 0.0, std::f64::consts::PI);
        let v = contact_volume(&randers, &worst, &BOUNDARY_HEIGHTS).unwrap();
        assert!((v.abs() - 0.7).abs() < 1e-6, "{v}");
    }

    #[test]
    fn contact_volume_shrinks_near_degenerate_randers() {
        let worst = SpherePoint::planar(0.0, 0.0, std::f64::consts::PI);
        let mut last = f64::INFINITY;
        for b in [0.3, 0.9, 0.99, 0.999] {
            let model = build(FinslerMetric::randers(&[b, 0.0]).unwrap());
            let v = contact_volume(&model, &worst, &BOUNDARY_HEIGHTS).unwrap().abs();
            assert!(v > 0.0 && v < last, "{b}: {v}");
            last = v;
        }
    }

    #[test]
    fn contact_volume_needs_a_plane() {
        let model = build(FinslerMetric::euclidean(1).unwrap());
        let p = SpherePoint::on_line(0.0, true);
        assert!(matches!(
            contact_volume(&model, &p, &BOUNDARY_HEIGHTS),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
