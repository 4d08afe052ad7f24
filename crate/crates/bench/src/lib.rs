//! Fixtures shared by the benchmarks.

use mamodel_core::model::sample_tube;
use mamodel_core::{ComplexPoint, FinslerMetric, MAModel, ModelConfig, SpherePoint};

pub const RADIUS: f64 = 0.5;

/// The shipped metrics with their names.
pub fn shipped_metrics() -> Vec<(&'static str, FinslerMetric)> {
    vec![
        ("euclidean", FinslerMetric::euclidean(2).expect("euclidean")),
        ("randers", FinslerMetric::randers(&[0.3, 0.0]).expect("randers")),
        (
            "conformal",
            FinslerMetric::conformal(2, &[(vec![1.0, 0.0], 0.2, 0.0)]).expect("conformal"),
        ),
    ]
}

pub fn model(metric: FinslerMetric) -> MAModel {
    MAModel::build(metric, RADIUS, &ModelConfig::default()).expect("model builds")
}

/// Interior tube coordinates `(p, r)` away from `M` and the tube boundary.
pub fn tube_samples(count: usize) -> Vec<(SpherePoint, f64)> {
    sample_tube(2, count, 42, 0.1 * RADIUS, 0.6 * RADIUS)
}

/// Images `μ(p, r)` of [`tube_samples`].
pub fn tube_points(model: &MAModel, count: usize) -> Vec<ComplexPoint> {
    tube_samples(count)
        .iter()
        .map(|(p, r)| model.mu(p, *r).expect("inside the tube"))
        .collect()
}
