//! Analytic Finsler metrics on the flat torus `T^n = R^n / 2πZ^n`.
//!
//! Every family is given in closed form so that the metric, its velocity and
//! position derivatives, and the fundamental tensor can be evaluated at real
//! and at complex arguments through the same code. The complex extension uses
//! the bilinear square `Σ (v^j)^2` and the principal square root.

use std::f64::consts::TAU;

use nalgebra::{ComplexField, DMatrix, SMatrix, SVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default exclusion radius around the branch point of `√(Σ v_j^2)`.
pub const DEFAULT_BRANCH_MARGIN: f64 = 1e-6;

/// Scalar type the metric formulas are evaluated over (`f64` or `Complex64`).
pub trait Field: ComplexField<RealField = f64> + Copy {
    const COMPLEX: bool;
}

impl Field for f64 {
    const COMPLEX: bool = false;
}

impl Field for Complex64 {
    const COMPLEX: bool = true;
}

/// Dispatches a runtime dimension (1 or 2) to a const-generic body.
macro_rules! with_dim {
    ($n:expr, $N:ident => $body:expr) => {
        match $n {
            1 => {
                const $N: usize = 1;
                $body
            }
            2 => {
                const $N: usize = 2;
                $body
            }
            other => unreachable!("unsupported dimension {other}"),
        }
    };
}
pub(crate) use with_dim;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricFamily {
    /// `F = λ(x)|v|` with a trigonometric-polynomial conformal factor.
    RiemannianConformal,
    /// Flat Randers metric `F = |v| + b·v`.
    Randers,
    /// Position-independent norm; the shipped instance is the Randers norm.
    Minkowski,
}

/// On-disk metric description.
///
/// `conformal` rows are `[k_1, .., k_n, a, b]` and contribute
/// `a cos(k·x) + b sin(k·x)` to `λ(x) = 1 + Σ ...`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSpec {
    pub family: MetricFamily,
    pub dim: usize,
    #[serde(default)]
    pub conformal: Vec<Vec<f64>>,
    #[serde(default)]
    pub b: Vec<f64>,
}

impl MetricSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::SpecInvalid(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConformalMode {
    pub wave: Vec<f64>,
    pub cos_coeff: f64,
    pub sin_coeff: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinslerMetric {
    family: MetricFamily,
    dim: usize,
    modes: Vec<ConformalMode>,
    drift: Vec<f64>,
    branch_margin: f64,
}

/// Value and first/second derivatives of `F` at one `(x, v)`.
///
/// `fxv[(k, j)]` is `∂²F/∂x^k∂v^j`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Jet<T: Field, const N: usize> {
    pub f: T,
    pub fv: SVector<T, N>,
    pub fx: SVector<T, N>,
    pub fvv: SMatrix<T, N, N>,
    pub fxv: SMatrix<T, N, N>,
}

impl<T: Field, const N: usize> Jet<T, N> {
    pub fn f2_x(&self) -> SVector<T, N> {
        self.fx * (self.f * T::from_real(2.0))
    }

    /// `½ ∂²F²/∂v∂v`.
    pub fn tensor(&self) -> SMatrix<T, N, N> {
        self.fv * self.fv.transpose() + self.fvv * self.f
    }

    /// `∂²F²/∂x^k∂v^l` indexed `(k, l)`.
    pub fn f2_xv(&self) -> SMatrix<T, N, N> {
        (self.fx * self.fv.transpose() + self.fxv * self.f) * T::from_real(2.0)
    }
}

impl FinslerMetric {
    pub fn from_spec(spec: &MetricSpec) -> Result<Self> {
        let invalid = |msg: String| Err(Error::SpecInvalid(msg));
        let dim = spec.dim;
        if !(1..=2).contains(&dim) {
            return invalid(format!("dim must be 1 or 2, got {dim}"));
        }
        let mut modes = Vec::with_capacity(spec.conformal.len());
        for (i, row) in spec.conformal.iter().enumerate() {
            if row.len() != dim + 2 {
                return invalid(format!(
                    "conformal mode {i} has {} entries, expected {}",
                    row.len(),
                    dim + 2
                ));
            }
            if row.iter().any(|c| !c.is_finite()) {
                return invalid(format!("conformal mode {i} is not finite"));
            }
            let wave = row[..dim].to_vec();
            if wave.iter().any(|k| k.fract() != 0.0) {
                return invalid(format!("conformal mode {i} has a non-integer wave vector"));
            }
            modes.push(ConformalMode {
                wave,
                cos_coeff: row[dim],
                sin_coeff: row[dim + 1],
            });
        }
        let drift = if spec.b.is_empty() {
            vec![0.0; dim]
        } else {
            spec.b.clone()
        };
        if drift.len() != dim {
            return invalid(format!("b has {} entries, expected {dim}", drift.len()));
        }
        if drift.iter().any(|c| !c.is_finite()) {
            return invalid("b is not finite".into());
        }
        match spec.family {
            MetricFamily::RiemannianConformal => {
                if drift.iter().any(|&c| c != 0.0) {
                    return invalid("riemannian_conformal metrics take no b".into());
                }
                let budget: f64 = modes.iter().map(|m| m.cos_coeff.abs() + m.sin_coeff.abs()).sum();
                if 1.0 - budget <= 0.0 {
                    return invalid(format!(
                        "conformal factor positivity certificate fails: 1 - Σ(|a|+|b|) = {}",
                        1.0 - budget
                    ));
                }
            }
            MetricFamily::Randers | MetricFamily::Minkowski => {
                if !modes.is_empty() {
                    return invalid("flat families take no conformal modes".into());
                }
                let norm = drift.iter().map(|c| c * c).sum::<f64>().sqrt();
                if norm >= 1.0 {
                    return invalid(format!("|b| = {norm} must be < 1 for strong convexity"));
                }
            }
        }
        Ok(Self {
            family: spec.family,
            dim,
            modes,
            drift,
            branch_margin: DEFAULT_BRANCH_MARGIN,
        })
    }

    pub fn to_spec(&self) -> MetricSpec {
        let conformal = self
            .modes
            .iter()
            .map(|m| {
                let mut row = m.wave.clone();
                row.push(m.cos_coeff);
                row.push(m.sin_coeff);
                row
            })
            .collect();
        let b = match self.family {
            MetricFamily::RiemannianConformal => Vec::new(),
            _ => self.drift.clone(),
        };
        MetricSpec {
            family: self.family,
            dim: self.dim,
            conformal,
            b,
        }
    }

    /// The flat metric `F = |v|`.
    pub fn euclidean(dim: usize) -> Result<Self> {
        Self::from_spec(&MetricSpec {
            family: MetricFamily::RiemannianConformal,
            dim,
            conformal: Vec::new(),
            b: Vec::new(),
        })
    }

    pub fn randers(b: &[f64]) -> Result<Self> {
        Self::from_spec(&MetricSpec {
            family: MetricFamily::Randers,
            dim: b.len(),
            conformal: Vec::new(),
            b: b.to_vec(),
        })
    }

    /// `λ(x) = 1 + Σ a cos(k·x) + b sin(k·x)` from `(k, a, b)` triples.
    pub fn conformal(dim: usize, modes: &[(Vec<f64>, f64, f64)]) -> Result<Self> {
        Self::from_spec(&MetricSpec {
            family: MetricFamily::RiemannianConformal,
            dim,
            conformal: modes
                .iter()
                .map(|(k, a, b)| {
                    let mut row = k.clone();
                    row.push(*a);
                    row.push(*b);
                    row
                })
                .collect(),
            b: Vec::new(),
        })
    }

    pub fn family(&self) -> MetricFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn drift(&self) -> &[f64] {
        &self.drift
    }

    /// True when `F` does not depend on the base point.
    pub fn is_flat(&self) -> bool {
        self.modes.is_empty()
    }

    /// True when `F(x, -v) = F(x, v)`.
    pub fn is_reversible(&self) -> bool {
        self.drift.iter().all(|&c| c == 0.0)
    }

    pub fn branch_margin(&self) -> f64 {
        self.branch_margin
    }

    pub fn with_branch_margin(mut self, margin: f64) -> Self {
        self.branch_margin = margin;
        self
    }

    /// Conformal factor and its gradient.
    pub(crate) fn conformal_factor_grad<T: Field, const N: usize>(&self, x: &SVector<T, N>) -> (T, SVector<T, N>) {
        let mut lambda = T::from_real(1.0);
        let mut grad = SVector::<T, N>::from_element(T::from_real(0.0));
        for mode in &self.modes {
            let mut phase = T::from_real(0.0);
            for j in 0..N {
                phase += x[j] * T::from_real(mode.wave[j]);
            }
            let (s, c) = (phase.sin(), phase.cos());
            let a = T::from_real(mode.cos_coeff);
            let b = T::from_real(mode.sin_coeff);
            lambda += a * c + b * s;
            let slope = b * c - a * s;
            for j in 0..N {
                grad[j] += slope * T::from_real(mode.wave[j]);
            }
        }
        (lambda, grad)
    }

    pub(crate) fn jet<T: Field, const N: usize>(&self, x: &SVector<T, N>, v: &SVector<T, N>) -> Result<Jet<T, N>> {
        if v.iter().all(|c| c.modulus() == 0.0) {
            return Err(Error::ZeroVector);
        }
        let square = v.dot(v);
        if T::COMPLEX && square.modulus() < self.branch_margin {
            return Err(Error::BranchCutProximity {
                modulus: square.modulus(),
                margin: self.branch_margin,
            });
        }
        let norm = square.sqrt();
        let unit = v / norm;
        let projector = (SMatrix::<T, N, N>::identity() - unit * unit.transpose()) / norm;
        let jet = match self.family {
            MetricFamily::RiemannianConformal => {
                let (lambda, grad) = self.conformal_factor_grad(x);
                Jet {
                    f: lambda * norm,
                    fv: unit * lambda,
                    fx: grad * norm,
                    fvv: projector * lambda,
                    fxv: grad * unit.transpose(),
                }
            }
            MetricFamily::Randers | MetricFamily::Minkowski => {
                let b = SVector::<T, N>::from_iterator(self.drift.iter().map(|&c| T::from_real(c)));
                Jet {
                    f: norm + b.dot(v),
                    fv: unit + b,
                    fx: SVector::from_element(T::from_real(0.0)),
                    fvv: projector,
                    fxv: SMatrix::from_element(T::from_real(0.0)),
                }
            }
        };
        Ok(jet)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: len,
            });
        }
        Ok(())
    }

    fn real_jet_dyn<R>(&self, x: &[f64], v: &[f64], read: impl FnOnce(JetView) -> R) -> Result<R> {
        self.check_len(x.len())?;
        self.check_len(v.len())?;
        with_dim!(self.dim, N => {
            let jet = self.jet::<f64, N>(
                &SVector::from_column_slice(x),
                &SVector::from_column_slice(v),
            )?;
            Ok(read(JetView::from_jet(&jet)))
        })
    }

    /// `F(x, v)`.
    pub fn eval_f(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        self.real_jet_dyn(x, v, |j| j.f)
    }

    /// Coefficients `∂F/∂v^j` of the Hilbert form.
    pub fn hilbert_coefficients(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.real_jet_dyn(x, v, |j| j.fv)
    }

    /// `g_ij = ½ ∂²F²/∂v^i∂v^j`.
    pub fn fundamental_tensor(&self, x: &[f64], v: &[f64]) -> Result<DMatrix<f64>> {
        self.real_jet_dyn(x, v, |j| j.tensor)
    }

    /// `|F(x, tv) − t F(x, v)|`.
    pub fn check_homogeneity(&self, x: &[f64], v: &[f64], t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::NonpositiveScale(t));
        }
        let scaled: Vec<f64> = v.iter().map(|c| c * t).collect();
        Ok((self.eval_f(x, &scaled)? - t * self.eval_f(x, v)?).abs())
    }

    /// Smallest eigenvalue of the fundamental tensor.
    pub fn min_tensor_eigenvalue(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        let g = self.fundamental_tensor(x, v)?;
        Ok(SymmetricEigen::new(g).eigenvalues.min())
    }

    /// `F`, `∂F/∂v` and `g` at complex arguments.
    pub fn complex_eval(&self, x: &[Complex64], v: &[Complex64]) -> Result<ComplexEval> {
        self.check_len(x.len())?;
        self.check_len(v.len())?;
        with_dim!(self.dim, N => {
            let jet = self.jet::<Complex64, N>(
                &SVector::from_column_slice(x),
                &SVector::from_column_slice(v),
            )?;
            let g = jet.tensor();
            Ok(ComplexEval {
                f: jet.f,
                hilbert: jet.fv.iter().copied().collect(),
                tensor: DMatrix::from_iterator(N, N, g.iter().copied()),
            })
        })
    }

    /// The conformal factor `λ` at a complex point (1 for flat families).
    pub fn complex_conformal_factor(&self, x: &[Complex64]) -> Result<Complex64> {
        self.check_len(x.len())?;
        with_dim!(self.dim, N => {
            Ok(self.conformal_factor_grad::<Complex64, N>(&SVector::from_column_slice(x)).0)
        })
    }
}

/// Dimension-erased copy of the parts of a real jet callers need.
struct JetView {
    f: f64,
    fv: Vec<f64>,
    tensor: DMatrix<f64>,
}

impl JetView {
    fn from_jet<const N: usize>(jet: &Jet<f64, N>) -> Self {
        let g = jet.tensor();
        Self {
            f: jet.f,
            fv: jet.fv.iter().copied().collect(),
            tensor: DMatrix::from_iterator(N, N, g.iter().copied()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexEval {
    pub f: Complex64,
    pub hilbert: Vec<Complex64>,
    pub tensor: DMatrix<Complex64>,
}

/// A nonzero tangent vector of `T^n`.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    pub base: Vec<f64>,
    pub components: Vec<f64>,
}

impl TangentVector {
    pub fn new(base: Vec<f64>, components: Vec<f64>) -> Self {
        Self { base, components }
    }
}

/// Oriented ray of a tangent space: a sign for `n = 1`, an angle for `n = 2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Ray {
    Positive,
    Negative,
    Angle(f64),
}

/// A point `(x, [v])` of the oriented projective tangent bundle `SM`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpherePoint {
    pub base: Vec<f64>,
    pub ray: Ray,
}

impl SpherePoint {
    pub fn planar(x1: f64, x2: f64, phi: f64) -> Self {
        Self {
            base: vec![x1, x2],
            ray: Ray::Angle(wrap_two_pi(phi)),
        }
    }

    pub fn on_line(x: f64, positive: bool) -> Self {
        Self {
            base: vec![x],
            ray: if positive { Ray::Positive } else { Ray::Negative },
        }
    }

    /// The ray generated by `v` at `base`.
    pub fn from_vector(base: &[f64], v: &[f64]) -> Result<Self> {
        if base.len() != v.len() {
            return Err(Error::DimensionMismatch {
                expected: base.len(),
                found: v.len(),
            });
        }
        match v.len() {
            1 if v[0] > 0.0 => Ok(Self::on_line(base[0], true)),
            1 if v[0] < 0.0 => Ok(Self::on_line(base[0], false)),
            2 if v[0] != 0.0 || v[1] != 0.0 => Ok(Self::planar(base[0], base[1], v[1].atan2(v[0]))),
            1 | 2 => Err(Error::ZeroVector),
            n => Err(Error::InvalidArgument(format!("unsupported dimension {n}"))),
        }
    }

    pub fn dim(&self) -> usize {
        self.base.len()
    }

    /// Euclidean unit vector spanning the ray.
    pub fn direction(&self) -> Vec<f64> {
        match self.ray {
            Ray::Positive => vec![1.0],
            Ray::Negative => vec![-1.0],
            Ray::Angle(phi) => vec![phi.cos(), phi.sin()],
        }
    }

    /// Derivative of [`Self::direction`] with respect to the ray angle.
    pub fn direction_derivative(&self) -> Option<Vec<f64>> {
        match self.ray {
            Ray::Angle(phi) => Some(vec![-phi.sin(), phi.cos()]),
            _ => None,
        }
    }

    /// The opposite ray at the same base point.
    pub fn reversed(&self) -> Self {
        let ray = match self.ray {
            Ray::Positive => Ray::Negative,
            Ray::Negative => Ray::Positive,
            Ray::Angle(phi) => Ray::Angle(wrap_two_pi(phi + std::f64::consts::PI)),
        };
        Self {
            base: self.base.clone(),
            ray,
        }
    }

    /// Coordinates on `SM`: the base point followed by the ray angle, if any.
    pub fn coords(&self) -> Vec<f64> {
        let mut c = self.base.clone();
        if let Ray::Angle(phi) = self.ray {
            c.push(phi);
        }
        c
    }

    /// Rebuilds a point from [`Self::coords`], keeping the discrete sign for `n = 1`.
    pub fn with_coords(&self, coords: &[f64]) -> Self {
        let n = self.dim();
        let ray = match self.ray {
            Ray::Angle(_) => Ray::Angle(wrap_two_pi(coords[n])),
            other => other,
        };
        Self {
            base: coords[..n].to_vec(),
            ray,
        }
    }

    /// Base point reduced into `[0, 2π)^n`.
    pub fn normalized(&self) -> Self {
        Self {
            base: self.base.iter().map(|&c| wrap_two_pi(c)).collect(),
            ray: self.ray,
        }
    }

    /// Distance on `SM` using periodic base and angle coordinates.
    pub fn distance(&self, other: &Self) -> f64 {
        let mut d2: f64 = self
            .base
            .iter()
            .zip(&other.base)
            .map(|(a, b)| wrap_pi(a - b).powi(2))
            .sum();
        match (self.ray, other.ray) {
            (Ray::Angle(a), Ray::Angle(b)) => d2 += wrap_pi(a - b).powi(2),
            (a, b) if a != b => return f64::INFINITY,
            _ => {}
        }
        d2.sqrt()
    }
}

/// Reduces an angle into `[0, 2π)`.
pub fn wrap_two_pi(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Reduces an angle into `[-π, π)`.
pub fn wrap_pi(a: f64) -> f64 {
    wrap_two_pi(a + std::f64::consts::PI) - std::f64::consts::PI
}
