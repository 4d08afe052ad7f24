//! Finite-difference complex Hessians of `u`, `u²` and `τ = u²/2`, the
//! Monge-Ampère residual, plurisubharmonicity and the boundary identity
//! `H_C(u²) → ¼ H_R(F²)` as `r → 0`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::complexify::ComplexPoint;
use crate::error::{Error, Result};
use crate::finsler::{Ray, SpherePoint};
use crate::model::{MAModel, NewtonStart, TubeCoordinates, SINGULAR_SET_CUTOFF};

/// `|Im ζ|` below which derivatives are taken by extrapolation from the interior.
pub const NEAR_M: f64 = 0.01;

/// Interior heights used to extrapolate Hessians of near-`M` queries.
const NEAR_M_HEIGHTS: [f64; 2] = [0.02, 0.04];

/// Heights used for the boundary identity.
pub const BOUNDARY_HEIGHTS: [f64; 2] = [0.02, 0.01];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarField {
    U,
    USquared,
    Tau,
}

impl ScalarField {
    fn apply(self, u: f64) -> f64 {
        match self {
            ScalarField::U => u,
            ScalarField::USquared => u * u,
            ScalarField::Tau => 0.5 * u * u,
        }
    }
}

/// `H[(j, k)] = ∂²f/∂z^j∂z̄^k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexHessian {
    pub matrix: DMatrix<Complex64>,
    /// `‖H − H*‖` before symmetrization.
    pub hermitian_defect: f64,
}

impl ComplexHessian {
    /// Builds `H` from the real Hessian `A` in coordinates `(x, y)`.
    pub fn from_real(a: &DMatrix<f64>) -> Self {
        let n = a.nrows() / 2;
        let raw = DMatrix::from_fn(n, n, |j, k| {
            Complex64::new(
                0.25 * (a[(j, k)] + a[(n + j, n + k)]),
                0.25 * (a[(j, n + k)] - a[(n + j, k)]),
            )
        });
        let adjoint = raw.adjoint();
        let hermitian_defect = (&raw - &adjoint).norm();
        Self {
            matrix: (&raw + &adjoint) * Complex64::new(0.5, 0.0),
            hermitian_defect,
        }
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.matrix.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// Largest eigenvalue magnitude.
    pub fn operator_norm(&self) -> f64 {
        self.eigenvalues().iter().fold(0.0, |m, e| m.max(e.abs()))
    }
}

/// Values of `u` on the central-difference stencil of one step.
struct Stencil {
    h: f64,
    center: f64,
    /// `(+h e_i, −h e_i)`.
    axis: Vec<[f64; 2]>,
    /// `(++, +−, −+, −−)` for `i < j`, row-major.
    pairs: Vec<[f64; 4]>,
}

impl Stencil {
    fn sample(model: &MAModel, zeta: &ComplexPoint, center: f64, start: &NewtonStart, h: f64) -> Result<Self> {
        let m = 2 * model.dim();
        let base: Vec<f64> = zeta.re().into_iter().chain(zeta.im()).collect();
        let eval = |offsets: &[(usize, f64)]| -> Result<f64> {
            let mut w = base.clone();
            for &(k, d) in offsets {
                w[k] += d;
            }
            let point = ComplexPoint::from_parts(&w[..m / 2], &w[m / 2..]);
            Ok(model.invert_mu_warm(&point, Some(start))?.0.r)
        };
        let mut axis = Vec::with_capacity(m);
        for i in 0..m {
            axis.push([eval(&[(i, h)])?, eval(&[(i, -h)])?]);
        }
        let mut pairs = Vec::with_capacity(m * (m - 1) / 2);
        for i in 0..m {
            for j in i + 1..m {
                pairs.push([
                    eval(&[(i, h), (j, h)])?,
                    eval(&[(i, h), (j, -h)])?,
                    eval(&[(i, -h), (j, h)])?,
                    eval(&[(i, -h), (j, -h)])?,
                ]);
            }
        }
        Ok(Self { h, center, axis, pairs })
    }

    fn hessian(&self, field: ScalarField) -> DMatrix<f64> {
        let m = self.axis.len();
        let f = |u: f64| field.apply(u);
        let h2 = self.h * self.h;
        let mut a = DMatrix::zeros(m, m);
        for i in 0..m {
            a[(i, i)] = (f(self.axis[i][0]) - 2.0 * f(self.center) + f(self.axis[i][1])) / h2;
        }
        let mut idx = 0;
        for i in 0..m {
            for j in i + 1..m {
                let [pp, pm, mp, mm] = self.pairs[idx].map(f);
                let v = (pp - pm - mp + mm) / (4.0 * h2);
                a[(i, j)] = v;
                a[(j, i)] = v;
                idx += 1;
            }
        }
        a
    }

    fn gradient(&self, field: ScalarField) -> Vec<f64> {
        self.axis
            .iter()
            .map(|[p, m]| (field.apply(*p) - field.apply(*m)) / (2.0 * self.h))
            .collect()
    }
}

/// Real Hessians of several fields at `ζ` in coordinates `(Re z, Im z)`, with one
/// Richardson level `(h, h/2)`, plus the Richardson-corrected gradient.
pub struct RealJet {
    pub value: f64,
    pub gradient: Vec<Vec<f64>>,
    pub hessian: Vec<DMatrix<f64>>,
}

/// Evaluates `u` on the two stencils around `ζ` directly (no near-`M` routing).
pub fn real_jet(model: &MAModel, fields: &[ScalarField], zeta: &ComplexPoint, h: f64) -> Result<RealJet> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("difference step {h} must be positive")));
    }
    let (tc, start) = model.invert_mu_warm(zeta, None)?;
    let coarse = Stencil::sample(model, zeta, tc.r, &start, h)?;
    let fine = Stencil::sample(model, zeta, tc.r, &start, 0.5 * h)?;
    let gradient = fields
        .iter()
        .map(|&f| {
            let (gc, gf) = (coarse.gradient(f), fine.gradient(f));
            gc.iter().zip(&gf).map(|(c, f)| (4.0 * f - c) / 3.0).collect()
        })
        .collect();
    let hessian = fields
        .iter()
        .map(|&f| (fine.hessian(f) * 4.0 - coarse.hessian(f)) / 3.0)
        .collect();
    Ok(RealJet {
        value: tc.r,
        gradient,
        hessian,
    })
}

/// `∂²f/∂z^j∂z̄^k` at `ζ` by central differences with one Richardson level.
///
/// Queries with `|Im ζ| < 0.01` are answered by linear extrapolation in `r`
/// from `μ(p, 0.02)` and `μ(p, 0.04)` along the tube ray through `ζ`; this is
/// only meaningful for the smooth fields `u²` and `τ`.
pub fn complex_hessian(model: &MAModel, field: ScalarField, zeta: &ComplexPoint, h: f64) -> Result<ComplexHessian> {
    let im = zeta.im_norm();
    if im < SINGULAR_SET_CUTOFF {
        return Err(Error::OnSingularSet);
    }
    if im >= NEAR_M {
        let jet = real_jet(model, &[field], zeta, h)?;
        return Ok(ComplexHessian::from_real(&jet.hessian[0]));
    }
    if field == ScalarField::U {
        return Err(Error::InvalidArgument(format!(
            "H_C(u) blows up at M; |Im ζ| = {im:.3e} is inside the near-M band"
        )));
    }
    let TubeCoordinates { p, r: r0 } = model.invert_mu(zeta)?;
    let [r1, r2] = NEAR_M_HEIGHTS;
    let h1 = real_jet(model, &[field], &model.mu(&p, r1)?, h)?.hessian.remove(0);
    let h2 = real_jet(model, &[field], &model.mu(&p, r2)?, h)?.hessian.remove(0);
    let w = (r0 - r1) / (r2 - r1);
    Ok(ComplexHessian::from_real(&(&h1 * (1.0 - w) + &h2 * w)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaResidual {
    /// `|det H_C(u)| / ‖H_C(u)‖_op^n`.
    pub normalized_det: f64,
    /// Eigenvalues of `H_C(u)` in ascending order of magnitude.
    pub eigenvalues: Vec<f64>,
    /// Second-smallest eigenvalue magnitude (`NaN` for `n = 1`).
    pub rank_witness: f64,
}

impl MaResidual {
    pub fn from_hessian(h: &ComplexHessian) -> Self {
        let mut ev = h.eigenvalues();
        ev.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
        let n = ev.len() as i32;
        let norm = ev.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        let det: f64 = ev.iter().product();
        Self {
            normalized_det: det.abs() / norm.powi(n),
            rank_witness: ev.get(1).map_or(f64::NAN, |e| e.abs()),
            eigenvalues: ev,
        }
    }
}

pub fn ma_residual(model: &MAModel, zeta: &ComplexPoint, h: f64) -> Result<MaResidual> {
    Ok(MaResidual::from_hessian(&complex_hessian(
        model,
        ScalarField::U,
        zeta,
        h,
    )?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PshCheck {
    pub min_eigenvalue: f64,
    pub boundary_residual: f64,
}

/// Smallest eigenvalue of `H_C(u²)` at `ζ` and the boundary identity at the ray through `ζ`.
pub fn psh_check(model: &MAModel, zeta: &ComplexPoint, h: f64) -> Result<PshCheck> {
    let min_eigenvalue = complex_hessian(model, ScalarField::USquared, zeta, h)?.min_eigenvalue();
    let p = model.invert_mu(zeta)?.p;
    let boundary_residual = boundary_hessian(model, &p, &BOUNDARY_HEIGHTS, h)?.residual;
    Ok(PshCheck {
        min_eigenvalue,
        boundary_residual,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryComparison {
    /// `H_C(u²)` at `r = 0`, extrapolated, in the adapted frame.
    pub extrapolated: DMatrix<Complex64>,
    /// `¼ H_R(F²) = ½ g` at the ray, in the adapted frame.
    pub predicted: DMatrix<f64>,
    /// Frobenius norm of the difference.
    pub residual: f64,
}

/// Rotation taking the unit vector of the ray to the last coordinate axis.
pub fn adapted_rotation(p: &SpherePoint) -> Result<DMatrix<f64>> {
    let rot = match p.ray {
        Ray::Positive => DMatrix::from_element(1, 1, 1.0),
        Ray::Negative => DMatrix::from_element(1, 1, -1.0),
        Ray::Angle(phi) => {
            let a = std::f64::consts::FRAC_PI_2 - phi;
            DMatrix::from_row_slice(2, 2, &[a.cos(), -a.sin(), a.sin(), a.cos()])
        }
    };
    let n = rot.nrows();
    if (&rot * rot.transpose() - DMatrix::identity(n, n)).norm() > 1e-12 {
        return Err(Error::FrameMismatch);
    }
    Ok(rot)
}

/// Compares `H_C(u²)` at `μ(p, r)`, extrapolated to `r = 0` over `heights`,
/// with `½ g(x, e)` at the ray.
pub fn boundary_hessian(model: &MAModel, p: &SpherePoint, heights: &[f64], h: f64) -> Result<BoundaryComparison> {
    if heights.is_empty() {
        return Err(Error::InvalidArgument("no extrapolation heights".into()));
    }
    let mut samples = Vec::with_capacity(heights.len());
    for &r in heights {
        let jet = real_jet(model, &[ScalarField::USquared], &model.mu(p, r)?, h)?;
        samples.push(ComplexHessian::from_real(&jet.hessian[0]).matrix);
    }
    let extrapolated = neville_matrix_at_zero(heights, &samples);
    let g = model.metric().fundamental_tensor(&p.base, &p.direction())?;
    let rot = adapted_rotation(p)?;
    let rot_c = rot.map(|c| Complex64::new(c, 0.0));
    let extrapolated = &rot_c * extrapolated * rot_c.transpose();
    let predicted = &rot * (g * 0.5) * rot.transpose();
    let residual = (&extrapolated - predicted.map(|c| Complex64::new(c, 0.0))).norm();
    Ok(BoundaryComparison {
        extrapolated,
        predicted,
        residual,
    })
}

/// Value at `0` of the polynomial through `(t_k, values_k)`.
pub fn neville_at_zero(t: &[f64], values: &[f64]) -> f64 {
    let mut p = values.to_vec();
    let n = t.len();
    for level in 1..n {
        for i in 0..n - level {
            let (ti, tj) = (t[i], t[i + level]);
            p[i] = (tj * p[i] - ti * p[i + 1]) / (tj - ti);
        }
    }
    p[0]
}

/// [`neville_at_zero`] applied entrywise.
pub fn neville_matrix_at_zero(t: &[f64], values: &[DMatrix<Complex64>]) -> DMatrix<Complex64> {
    let (rows, cols) = values[0].shape();
    DMatrix::from_fn(rows, cols, |i, j| {
        let re: Vec<f64> = values.iter().map(|m| m[(i, j)].re).collect();
        let im: Vec<f64> = values.iter().map(|m| m[(i, j)].im).collect();
        Complex64::new(neville_at_zero(t, &re), neville_at_zero(t, &im))
    })
}
