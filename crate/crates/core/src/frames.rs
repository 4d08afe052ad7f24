//! Leaves of the Monge-Ampère foliation and the frame `X, Y` on the tube.
//!
//! Real coordinates on `C^n` are ordered `(x, y)` with `z = x + iy`, and the
//! complex structure acts as `J∂x = ∂y`. With `d^c u = Σ (u_x dy − u_y dx)` the
//! one-form `θ = d^c u` has components `J∇u` and `dθ = −(AJ + JA)` for the real
//! Hessian `A` of `u`.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::complexify::{ComplexPoint, HalfStripPoint, LegOrder};
use crate::error::{Error, Result};
use crate::finsler::{SpherePoint, TangentVector};
use crate::geodesic::integrate_geodesic;
use crate::hessian::{neville_at_zero, real_jet, ScalarField};
use crate::model::MAModel;

/// Default heights for [`recover_finsler`].
pub const RECOVERY_HEIGHTS: [f64; 3] = [0.02, 0.01, 0.005];

/// The leaf through `p` at `z = s + ir`: `ν_s ∘ μ_r(p)`.
pub fn leaf_map(model: &MAModel, p: &SpherePoint, z: HalfStripPoint) -> Result<ComplexPoint> {
    model
        .continuation()
        .complex_geodesic_via(p, z, LegOrder::ImaginaryFirst)
        .map(|g| g.point)
}

/// Holomorphic tangent of the leaf, `∂_s φ_p`, by central differences in `s`.
fn leaf_tangents(model: &MAModel, p: &SpherePoint, z: HalfStripPoint, h: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let at = |ds: f64, dr: f64| leaf_map(model, p, HalfStripPoint::new(z.s + ds, z.r + dr));
    let center = leaf_map(model, p, z)?;
    let diff = |a: ComplexPoint, b: ComplexPoint| -> Vec<f64> {
        let (da, db) = (a.real_offset(&center), b.real_offset(&center));
        da.iter().zip(&db).map(|(x, y)| (x - y) / (2.0 * h)).collect()
    };
    let ts = diff(at(h, 0.0)?, at(-h, 0.0)?);
    let tr = diff(at(0.0, h)?, at(0.0, -h)?);
    Ok((ts, tr))
}

/// `‖∂_s φ_p − (1/i) ∂_r φ_p‖` at `z` by central differences of step `h`.
pub fn leaf_cauchy_riemann(model: &MAModel, p: &SpherePoint, z: HalfStripPoint, h: f64) -> Result<f64> {
    if !(h > 0.0) || z.r - h < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "stencil step {h} must be positive and at most r = {}",
            z.r
        )));
    }
    let n = model.dim();
    let (ts, tr) = leaf_tangents(model, p, z, h)?;
    Ok((0..n)
        .map(|j| (ts[j] - tr[n + j]).powi(2) + (ts[n + j] + tr[j]).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// `|φ_p^*(dd^c u)(∂_s, ∂_r)|` at `z`: `dd^c u` from the real Hessian at `φ_p(z)`,
/// the leaf tangents from an `(s, r)` stencil of step `h`.
pub fn leaf_pullback(model: &MAModel, p: &SpherePoint, z: HalfStripPoint, h: f64) -> Result<f64> {
    if !(h > 0.0) || z.r - h <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "stencil step {h} must be positive and below r = {}",
            z.r
        )));
    }
    let zeta = leaf_map(model, p, z)?;
    let jet = real_jet(model, &[ScalarField::U], &zeta, model.fd().hessian_step)?;
    let omega = dtheta(&jet.hessian[0]);
    let (ts, tr) = leaf_tangents(model, p, z, h)?;
    let (ts, tr) = (DVector::from_vec(ts), DVector::from_vec(tr));
    Ok((ts.transpose() * omega * tr)[(0, 0)].abs())
}

/// Defects of the leaf identities over a set of leaf parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafCheck {
    /// `max |u(φ_p(s + ir)) − r|`.
    pub level: f64,
    /// `max` chart distance between `φ_p(s)` and the real geodesic at time `s`.
    pub boundary: f64,
    /// `max |Im φ_p(s)|`.
    pub boundary_height: f64,
}

pub fn leaf_check(model: &MAModel, p: &SpherePoint, samples: &[HalfStripPoint]) -> Result<LeafCheck> {
    let mut out = LeafCheck {
        level: 0.0,
        boundary: 0.0,
        boundary_height: 0.0,
    };
    let integrator = &model.config().integrator;
    for z in samples {
        if z.r > 0.0 {
            let u = model.invert_mu(&leaf_map(model, p, *z)?)?.r;
            out.level = out.level.max((u - z.r).abs());
        }
        let edge = leaf_map(model, p, HalfStripPoint::new(z.s, 0.0))?;
        let real = integrate_geodesic(model.metric(), p, z.s, integrator)?;
        let real = ComplexPoint::from_parts(&real.x, &vec![0.0; real.x.len()]);
        out.boundary = out.boundary.max(edge.chart_distance(&real));
        out.boundary_height = out.boundary_height.max(edge.im_norm());
    }
    Ok(out)
}

/// `F(X)` read off the model as `lim u(base + itX)/t`, extrapolated over `heights`.
pub fn recover_finsler(model: &MAModel, x: &TangentVector, heights: &[f64]) -> Result<f64> {
    let n = model.dim();
    if x.base.len() != n || x.components.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: x.components.len(),
        });
    }
    if x.components.iter().all(|c| *c == 0.0) {
        return Err(Error::ZeroVector);
    }
    if heights.is_empty() || heights.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::InvalidArgument("heights must be positive".into()));
    }
    let mut values = Vec::with_capacity(heights.len());
    for &t in heights {
        let im: Vec<f64> = x.components.iter().map(|c| t * c).collect();
        values.push(model.invert_mu(&ComplexPoint::from_parts(&x.base, &im))?.r / t);
    }
    Ok(neville_at_zero(heights, &values))
}

/// The frame `X, Y` at a tube point and the residuals of its defining relations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// `|θ(X) + 1|`, `|du(X)|`, `‖X⌋dθ‖_∞`.
    pub x_residuals: [f64; 3],
    /// `|θ(Y)|`, `|du(Y) − 1|`, `‖Y⌋dθ‖_∞`.
    pub y_residuals: [f64; 3],
    /// `‖Y − JX‖`.
    pub y_minus_jx: f64,
    /// `+1` when `Y ≈ JX`, `−1` when `Y ≈ −JX`.
    pub sign: f64,
}

impl Frame {
    pub fn max_contraction_residual(&self) -> f64 {
        self.x_residuals
            .iter()
            .chain(&self.y_residuals)
            .fold(0.0, |m, r| m.max(*r))
    }
}

/// `J = [[0, −I], [I, 0]]` on `(x, y)`.
fn complex_structure(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        j[(k, n + k)] = -1.0;
        j[(n + k, k)] = 1.0;
    }
    j
}

fn dtheta(hess: &DMatrix<f64>) -> DMatrix<f64> {
    let j = complex_structure(hess.nrows() / 2);
    -(hess * &j + &j * hess)
}

/// Solves `X⌋θ = −1, X⌋du = 0, X⌋dθ = 0` and `Y⌋θ = 0, Y⌋du = 1, Y⌋dθ = 0` at `ζ`,
/// with `u` differenced at step `h`.
pub fn vector_fields_xy(model: &MAModel, zeta: &ComplexPoint, h: f64) -> Result<Frame> {
    let n = model.dim();
    let jet = real_jet(model, &[ScalarField::U], zeta, h)?;
    let grad = DVector::from_vec(jet.gradient[0].clone());
    let j = complex_structure(n);
    let theta = &j * &grad;
    let omega = dtheta(&jet.hessian[0]);

    let svd = omega.clone().svd(false, true);
    let v_t = svd.v_t.ok_or(Error::DegenerateFrame)?;
    let mut order: Vec<usize> = (0..2 * n).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let k0 = v_t.row(order[0]).transpose();
    let k1 = v_t.row(order[1]).transpose();

    let m = Matrix2::new(theta.dot(&k0), theta.dot(&k1), grad.dot(&k0), grad.dot(&k1));
    let scale = m.norm();
    if !(m.determinant().abs() > 1e-10 * scale * scale) {
        return Err(Error::DegenerateFrame);
    }
    let lu = m.lu();
    let solve = |rhs: Vector2<f64>| -> Result<DVector<f64>> {
        let c = lu.solve(&rhs).ok_or(Error::DegenerateFrame)?;
        Ok(&k0 * c[0] + &k1 * c[1])
    };
    let x = solve(Vector2::new(-1.0, 0.0))?;
    let y = solve(Vector2::new(0.0, 1.0))?;

    let contraction = |v: &DVector<f64>| (omega.transpose() * v).amax();
    let x_residuals = [(theta.dot(&x) + 1.0).abs(), grad.dot(&x).abs(), contraction(&x)];
    let y_residuals = [theta.dot(&y).abs(), (grad.dot(&y) - 1.0).abs(), contraction(&y)];
    let jx = &j * &x;
    let (minus, plus) = ((&y - &jx).norm(), (&y + &jx).norm());
    Ok(Frame {
        x: x.as_slice().to_vec(),
        y: y.as_slice().to_vec(),
        x_residuals,
        y_residuals,
        y_minus_jx: minus,
        sign: if minus <= plus { 1.0 } else { -1.0 },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Field {
    X,
    Y,
}

fn flow(model: &MAModel, zeta: &ComplexPoint, field: Field, t: f64, steps: usize, h: f64) -> Result<ComplexPoint> {
    let n = model.dim();
    let eval = |w: &[f64]| -> Result<Vec<f64>> {
        let frame = vector_fields_xy(model, &ComplexPoint::from_parts(&w[..n], &w[n..]), h)?;
        Ok(match field {
            Field::X => frame.x,
            Field::Y => frame.y,
        })
    };
    let axpy = |w: &[f64], a: f64, k: &[f64]| -> Vec<f64> { w.iter().zip(k).map(|(w, k)| w + a * k).collect() };
    let mut w: Vec<f64> = zeta.re().into_iter().chain(zeta.im()).collect();
    let dt = t / steps as f64;
    for _ in 0..steps {
        let k1 = eval(&w)?;
        let k2 = eval(&axpy(&w, 0.5 * dt, &k1))?;
        let k3 = eval(&axpy(&w, 0.5 * dt, &k2))?;
        let k4 = eval(&axpy(&w, dt, &k3))?;
        for i in 0..w.len() {
            w[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    Ok(ComplexPoint::from_parts(&w[..n], &w[n..]))
}

/// Chart distance between `Φ^Y_t ∘ Φ^X_t(ζ)` and `Φ^X_t ∘ Φ^Y_t(ζ)`, each flow by
/// RK4 with `steps` steps.
pub fn flow_commutation_defect(model: &MAModel, zeta: &ComplexPoint, t: f64, steps: usize) -> Result<f64> {
    if steps == 0 {
        return Err(Error::InvalidArgument("flow needs at least one step".into()));
    }
    let h = model.fd().hessian_step;
    let xy = flow(model, &flow(model, zeta, Field::X, t, steps, h)?, Field::Y, t, steps, h)?;
    let yx = flow(model, &flow(model, zeta, Field::Y, t, steps, h)?, Field::X, t, steps, h)?;
    Ok(xy.chart_distance(&yx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finsler::FinslerMetric;
    use crate::model::ModelConfig;

    fn build(metric: FinslerMetric) -> MAModel {
        MAModel::build(metric, 0.5, &ModelConfig::default()).unwrap()
    }

    fn shipped() -> Vec<MAModel> {
        vec![
            build(FinslerMetric::euclidean(2).unwrap()),
            build(FinslerMetric::randers(&[0.3, 0.0]).unwrap()),
            build(FinslerMetric::conformal(2, &[(vec![1.0, 0.0], 0.2, 0.0)]).unwrap()),
        ]
    }

    #[test]
    fn leaf_level_sets() {
        let p = SpherePoint::planar(0.4, 1.1, 0.7);
        let z = HalfStripPoint::new(0.3, 0.2);
        for model in shipped() {
            let u = model.invert_mu(&leaf_map(&model, &p, z).unwrap()).unwrap().r;
            assert!((u - 0.2).abs() < 1e-9, "{u}");
            let edge = leaf_map(&model, &p, HalfStripPoint::new(0.6, 0.0)).unwrap();
            assert!(edge.im_norm() < 1e-10);
        }
    }

    #[test]
    fn leaf_agrees_with_complex_geodesic() {
        let model = &shipped()[2];
        let p = SpherePoint::planar(2.0, 0.3, 2.5);
        let z = HalfStripPoint::new(0.7, 0.3);
        let a = leaf_map(model, &p, z).unwrap();
        let b = model.continuation().complex_geodesic(&p, z).unwrap().point;
        assert!(a.chart_distance(&b) < 1e-10);
    }

    #[test]
    fn leaf_check_conformal() {
        let model = &shipped()[2];
        let p = SpherePoint::planar(0.1, 0.2, 1.0);
        let samples: Vec<_> = (0..=5).map(|k| HalfStripPoint::new(0.2 * k as f64, 0.25)).collect();
        let c = leaf_check(model, &p, &samples).unwrap();
        assert!(
            c.level < 1e-9 && c.boundary < 1e-8 && c.boundary_height < 1e-10,
            "{c:?}"
        );
    }

    #[test]
    fn leaf_is_holomorphic() {
        let p = SpherePoint::planar(0.5, 0.5, 2.0);
        for model in shipped() {
            let cr = leaf_cauchy_riemann(&model, &p, HalfStripPoint::new(0.5, 0.2), 1e-3).unwrap();
            assert!(cr < 1e-5, "{cr}");
        }
    }

    #[test]
    fn pullback_vanishes() {
        let p = SpherePoint::planar(0.5, 0.5, 0.3);
        for model in shipped() {
            let v = leaf_pullback(&model, &p, HalfStripPoint::new(0.2, 0.2), 1e-3).unwrap();
            assert!(v < 1e-5, "{v}");
        }
    }

    #[test]
    fn recover_examples() {
        let models = shipped();
        let x = TangentVector::new(vec![1.0, 2.0], vec![3.0, 4.0]);
        let f = recover_finsler(&models[0], &x, &RECOVERY_HEIGHTS).unwrap();
        assert!((f - 5.0).abs() < 1e-6, "{f}");
        let x = TangentVector::new(vec![0.0, 0.0], vec![1.0, 0.0]);
        let f = recover_finsler(&models[1], &x, &RECOVERY_HEIGHTS).unwrap();
        assert!((f - 1.3).abs() < 1e-6, "{f}");
        let x = TangentVector::new(vec![0.4, 2.0], vec![-0.5, 1.5]);
        let f = recover_finsler(&models[2], &x, &RECOVERY_HEIGHTS).unwrap();
        let exact = models[2].metric().eval_f(&x.base, &x.components).unwrap();
        assert!(((f - exact) / exact).abs() < 1e-3, "{f} {exact}");
    }

    #[test]
    fn recover_too_tall() {
        let model = &shipped()[0];
        let x = TangentVector::new(vec![0.0, 0.0], vec![100.0, 0.0]);
        assert!(matches!(
            recover_finsler(model, &x, &RECOVERY_HEIGHTS),
            Err(Error::NewtonDiverged { .. }) | Err(Error::TubeExceeded { .. })
        ));
        let zero = TangentVector::new(vec![0.0, 0.0], vec![0.0, 0.0]);
        assert_eq!(recover_finsler(model, &zero, &RECOVERY_HEIGHTS), Err(Error::ZeroVector));
    }

    #[test]
    fn euclidean_frame() {
        let model = &shipped()[0];
        let zeta = ComplexPoint::from_parts(&[0.3, 0.7], &[0.0, 0.25]);
        let frame = vector_fields_xy(model, &zeta, 1e-3).unwrap();
        let (x, y) = (DVector::from_vec(frame.x.clone()), DVector::from_vec(frame.y.clone()));
        assert!((x - DVector::from_vec(vec![0.0, 1.0, 0.0, 0.0])).norm() < 1e-6);
        assert!((y - DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0])).norm() < 1e-6);
        assert!(frame.y_minus_jx < 1e-6 && frame.sign == 1.0);
        assert!(frame.max_contraction_residual() < 1e-8);
    }

    #[test]
    fn frames_on_shipped_metrics() {
        let p = SpherePoint::planar(1.0, 4.0, 2.2);
        for model in shipped() {
            let zeta = model.mu(&p, 0.3).unwrap();
            let frame = vector_fields_xy(&model, &zeta, 1e-3).unwrap();
            assert!(frame.max_contraction_residual() < 1e-8, "{frame:?}");
            assert!(frame.y_minus_jx < 1e-6, "{frame:?}");
        }
    }

    #[test]
    fn frame_on_the_line() {
        let model = build(FinslerMetric::euclidean(1).unwrap());
        let zeta = ComplexPoint::from_parts(&[1.0], &[-0.2]);
        let frame = vector_fields_xy(&model, &zeta, 1e-3).unwrap();
        assert!(frame.y_minus_jx < 1e-6, "{frame:?}");
    }

    #[test]
    fn commutation_randers() {
        let model = &shipped()[1];
        let zeta = model.mu(&SpherePoint::planar(0.2, 0.1, 0.9), 0.2).unwrap();
        let d = flow_commutation_defect(model, &zeta, 0.1, 2).unwrap();
        assert!(d < 1e-6, "{d}");
    }
}
