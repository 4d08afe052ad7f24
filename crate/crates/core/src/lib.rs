//! Monge-Ampère models of real-analytic Finsler tori.
//!
//! A Finsler metric on the flat torus `T^n` (`n ∈ {1, 2}`) is continued to
//! complex time along its geodesics; the resulting tube map `μ(p, r)` fills a
//! neighbourhood of `T^n` in `C^n / 2πZ^n`, and `u(μ(p, r)) = r` solves the
//! homogeneous complex Monge-Ampère equation there. The modules evaluate the
//! metric, integrate geodesics, build and invert the tube, differentiate `u`,
//! and check the identities tying `u` back to the metric.

// NaN must fail range checks, so they are written as negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blowup;
pub mod complexify;
pub mod error;
pub mod finsler;
pub mod frames;
pub mod geodesic;
pub mod harness;
pub mod hessian;
pub mod model;
pub mod ode;
pub mod sampling;

pub use complexify::{ComplexPoint, Continuation, HalfStripPoint};
pub use error::{Error, Result};
pub use finsler::{FinslerMetric, MetricFamily, MetricSpec, Ray, SpherePoint, TangentVector};
pub use geodesic::{GeodesicState, IntegrationMethod, IntegratorConfig};
pub use harness::{RunConfig, Suite, VerificationReport};
pub use model::{MAModel, ModelConfig, ModelDescriptor};
