use std::f64::consts::TAU;

use nalgebra::DMatrix;
use proptest::prelude::*;

use mamodel_core::blowup::{lift_curve, BlowupChart};
use mamodel_core::geodesic::integrate_geodesic;
use mamodel_core::hessian::{complex_hessian, ma_residual, ScalarField};
use mamodel_core::model::sample_tube;
use mamodel_core::{
    ComplexPoint, Continuation, FinslerMetric, HalfStripPoint, IntegratorConfig, MAModel, ModelConfig, SpherePoint,
};

const R: f64 = 0.5;

fn metrics() -> Vec<FinslerMetric> {
    vec![
        FinslerMetric::euclidean(2).unwrap(),
        FinslerMetric::randers(&[0.3, 0.0]).unwrap(),
        FinslerMetric::conformal(2, &[(vec![1.0, 0.0], 0.2, 0.0)]).unwrap(),
    ]
}

fn conformal_model() -> MAModel {
    MAModel::build(metrics().remove(2), R, &ModelConfig::default()).unwrap()
}

fn flat(z: &ComplexPoint) -> Vec<f64> {
    z.re().into_iter().chain(z.im()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn blowup_chart_round_trip(
        x1 in 0.0..TAU, x2 in 0.0..TAU, phi in 0.0..TAU, p in -0.999f64..0.999, r in 1e-3f64..1.0,
    ) {
        let chart = BlowupChart::centered(&SpherePoint::planar(x1, x2, phi)).unwrap();
        let y = chart.from_blowup(&[p], r).unwrap();
        let (p2, r2) = chart.to_blowup(&y).unwrap();
        prop_assert!((p2[0] - p).abs() <= 1e-15 * p.abs().max(1.0), "{} vs {}", p2[0], p);
        prop_assert!((r2 - r).abs() <= 1e-15 * r.max(1.0), "{} vs {}", r2, r);
    }

    #[test]
    fn lift_is_reparameterization_invariant(
        phi in 0.0..TAU, len in 0.5f64..3.0, bend in -2.0f64..2.0, a in 0.5f64..2.0, b in -0.5f64..0.5,
    ) {
        let base = [0.4, 1.7];
        let x = [len * phi.cos(), len * phi.sin()];
        let curve = |t: f64| {
            ComplexPoint::from_parts(
                &[base[0] + bend * t * t, base[1] - t * t],
                &[t * x[0] + bend * t * t, t * x[1] + t * t * t],
            )
        };
        let times = [0.0, 0.002, 0.004, 0.008];
        let direct: Vec<_> = times.iter().map(|&t| curve(t)).collect();
        let warped: Vec<_> = times.iter().map(|&t| curve(a * t + b * t * t)).collect();
        let expected = SpherePoint::from_vector(&base, &x).unwrap();
        let once = lift_curve(&times, &direct).unwrap();
        let again = lift_curve(&times, &warped).unwrap();
        // Three-point extrapolation leaves an O(t³) remainder under reparameterization.
        prop_assert!(once.boundary.distance(&expected) < 1e-5);
        prop_assert!(again.boundary.distance(&once.boundary) < 1e-5);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn real_axis_group_property(
        x1 in 0.0..TAU, x2 in 0.0..TAU, phi in 0.0..TAU, s1 in 0.1f64..1.0, s2 in 0.1f64..1.0,
    ) {
        let cfg = IntegratorConfig::default();
        let p = SpherePoint::planar(x1, x2, phi);
        for metric in metrics() {
            let cont = Continuation::new(metric.clone(), R);
            let whole = cont.complex_geodesic(&p, HalfStripPoint::new(s1 + s2, 0.0)).unwrap();
            let mid = integrate_geodesic(&metric, &p, s1, &cfg).unwrap();
            let q = SpherePoint::from_vector(&mid.x, &mid.v).unwrap();
            let rest = integrate_geodesic(&metric, &q, s2, &cfg).unwrap();
            let end = ComplexPoint::from_parts(&rest.x, &[0.0, 0.0]);
            prop_assert!(whole.point.chart_distance(&end) < 1e-9);
        }
    }

    #[test]
    fn u_inverts_the_tube_map(
        x1 in 0.0..TAU, x2 in 0.0..TAU, phi in 0.0..TAU, r in 0.05f64..0.45,
    ) {
        let p = SpherePoint::planar(x1, x2, phi);
        for metric in metrics() {
            let model = MAModel::build(metric, R, &ModelConfig::default()).unwrap();
            let z = model.mu(&p, r).unwrap();
            let tc = model.invert_mu(&z).unwrap();
            prop_assert!((tc.r - r).abs() < 1e-9);
            prop_assert!(tc.p.distance(&p) < 1e-8);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn conformal_eigenvalue_profile(
        x1 in 0.0..TAU, x2 in 0.0..TAU, phi in 0.0..TAU, r in 0.1f64..0.3,
    ) {
        let model = conformal_model();
        let z = model.mu(&SpherePoint::planar(x1, x2, phi), r).unwrap();
        let h = model.config().fd.hessian_step;
        let ma = ma_residual(&model, &z, h).unwrap();
        prop_assert!(ma.eigenvalues[0].abs() < 1e-6, "{:?}", ma.eigenvalues);
        prop_assert!(ma.eigenvalues[1] > 1e-3, "{:?}", ma.eigenvalues);
        let u2 = complex_hessian(&model, ScalarField::USquared, &z, h).unwrap();
        prop_assert!(u2.hermitian_defect < 1e-8);
        prop_assert!(u2.min_eigenvalue() > 0.0);
    }
}

#[test]
fn tube_map_is_injective() {
    let model = conformal_model();
    let a = sample_tube(2, 200, 1, 0.05, R);
    let b = sample_tube(2, 200, 2, 0.05, R);
    let mut closest = f64::INFINITY;
    for ((p, r), (q, s)) in a.iter().zip(&b) {
        let za = model.mu(p, 0.999 * r).unwrap();
        let zb = model.mu(q, 0.999 * s).unwrap();
        closest = closest.min(za.chart_distance(&zb));
    }
    assert!(closest > 1e-6, "closest images {closest:e}");
}

#[test]
fn tube_map_is_an_immersion() {
    let h = 1e-4;
    for metric in metrics() {
        let cont = Continuation::new(metric, R);
        for (p, r) in sample_tube(2, 10, 42, 0.05, 0.45) {
            let coords = p.coords();
            let image = |q: &[f64], r: f64| {
                let z = cont.mu(&SpherePoint::planar(q[0], q[1], q[2]), r).unwrap().point;
                flat(&z)
            };
            let mut jac = DMatrix::zeros(4, 4);
            for k in 0..4 {
                let (mut plus, mut minus) = (coords.clone(), coords.clone());
                let (mut rp, mut rm) = (r, r);
                if k < 3 {
                    plus[k] += h;
                    minus[k] -= h;
                } else {
                    rp += h;
                    rm -= h;
                }
                let (fp, fm) = (image(&plus, rp), image(&minus, rm));
                for row in 0..4 {
                    jac[(row, k)] = (fp[row] - fm[row]) / (2.0 * h);
                }
            }
            let smallest = jac.singular_values().min();
            assert!(smallest > 1e-3, "smallest singular value {smallest:e} at r = {r}");
        }
    }
}
